//! Aggregation of sub-hourly raw readings into fixed-interval cells.

use chrono::{Duration, NaiveDateTime};
use ndarray::Array3;

use super::{DataError, StationSeries};

/// Raw readings of one station, ordered by timestamp.
#[derive(Debug, Clone)]
pub struct RawStream {
    pub station_id: String,
    pub lat: f64,
    pub lon: f64,
    pub readings: Vec<(NaiveDateTime, f64)>,
}

/// Average raw readings into `samples x steps_per_sample` cells of width
/// `interval`, starting at `start`. A cell holds the arithmetic mean of the
/// readings whose timestamp falls inside it; cells without readings are
/// masked missing.
///
/// Readings must be sorted per station and lie inside the declared range
/// `[start, start + samples * steps_per_sample * interval)`.
pub fn aggregate_subhourly(
    streams: &[RawStream],
    start: NaiveDateTime,
    samples: usize,
    steps_per_sample: usize,
    interval: Duration,
) -> Result<StationSeries, DataError> {
    if streams.is_empty() {
        return Err(DataError::Empty("no station streams".into()));
    }
    if samples == 0 || steps_per_sample < 2 {
        return Err(DataError::Shape(
            "need samples >= 1 and steps_per_sample >= 2".into(),
        ));
    }
    let interval_secs = interval.num_seconds();
    if interval_secs <= 0 {
        return Err(DataError::Shape("interval must be positive".into()));
    }
    let total_cells = samples * steps_per_sample;
    let p = streams.len();
    let mut sums = vec![0.0f64; total_cells * p];
    let mut counts = vec![0u64; total_cells * p];

    for (station, stream) in streams.iter().enumerate() {
        let mut prev: Option<NaiveDateTime> = None;
        for (index, &(ts, value)) in stream.readings.iter().enumerate() {
            if let Some(prev_ts) = prev {
                if ts < prev_ts {
                    return Err(DataError::UnsortedTimestamps {
                        station_id: stream.station_id.clone(),
                        index,
                    });
                }
            }
            prev = Some(ts);
            let offset = (ts - start).num_seconds();
            if offset < 0 {
                return Err(DataError::OutsideRange {
                    station_id: stream.station_id.clone(),
                    timestamp: ts.to_string(),
                });
            }
            let cell = (offset / interval_secs) as usize;
            if cell >= total_cells {
                return Err(DataError::OutsideRange {
                    station_id: stream.station_id.clone(),
                    timestamp: ts.to_string(),
                });
            }
            sums[cell * p + station] += value;
            counts[cell * p + station] += 1;
        }
    }

    let mut values = Array3::zeros((samples, steps_per_sample, p));
    let mut mask = Array3::from_elem((samples, steps_per_sample, p), false);
    for cell in 0..total_cells {
        let (s, t) = (cell / steps_per_sample, cell % steps_per_sample);
        for station in 0..p {
            let count = counts[cell * p + station];
            if count > 0 {
                values[[s, t, station]] = sums[cell * p + station] / count as f64;
                mask[[s, t, station]] = true;
            }
        }
    }

    StationSeries::new(
        streams.iter().map(|s| s.station_id.clone()).collect(),
        streams.iter().map(|s| (s.lat, s.lon)).collect(),
        values,
        mask,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn t0() -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2010, 1, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap()
    }

    fn minutes(m: i64) -> NaiveDateTime {
        t0() + Duration::minutes(m)
    }

    #[test]
    fn mean_of_two_readings_in_one_hour() {
        let streams = vec![RawStream {
            station_id: "a".into(),
            lat: 0.0,
            lon: 0.0,
            readings: vec![(minutes(5), 10.0), (minutes(40), 12.0), (minutes(70), 9.0)],
        }];
        let st = aggregate_subhourly(&streams, t0(), 1, 2, Duration::hours(1)).unwrap();
        assert_eq!(st.values[[0, 0, 0]], 11.0);
        assert!(st.mask[[0, 0, 0]]);
        assert_eq!(st.values[[0, 1, 0]], 9.0);
    }

    #[test]
    fn empty_hour_is_masked() {
        let streams = vec![RawStream {
            station_id: "a".into(),
            lat: 0.0,
            lon: 0.0,
            readings: vec![(minutes(5), 10.0)],
        }];
        let st = aggregate_subhourly(&streams, t0(), 1, 3, Duration::hours(1)).unwrap();
        assert!(st.mask[[0, 0, 0]]);
        assert!(!st.mask[[0, 1, 0]]);
        assert!(!st.mask[[0, 2, 0]]);
        assert_eq!(st.missing_fraction[0], 1.0 - 1.0 / 3.0);
    }

    #[test]
    fn unsorted_timestamps_rejected() {
        let streams = vec![RawStream {
            station_id: "a".into(),
            lat: 0.0,
            lon: 0.0,
            readings: vec![(minutes(40), 1.0), (minutes(5), 2.0)],
        }];
        let err = aggregate_subhourly(&streams, t0(), 1, 2, Duration::hours(1)).unwrap_err();
        assert!(matches!(err, DataError::UnsortedTimestamps { .. }));
    }

    #[test]
    fn out_of_range_timestamp_rejected() {
        let streams = vec![RawStream {
            station_id: "a".into(),
            lat: 0.0,
            lon: 0.0,
            readings: vec![(minutes(3 * 60), 1.0)],
        }];
        let err = aggregate_subhourly(&streams, t0(), 1, 2, Duration::hours(1)).unwrap_err();
        assert!(matches!(err, DataError::OutsideRange { .. }));
    }

    // Brute-force oracle: per (cell, station), average readings whose
    // timestamp lands in the cell, computed independently of the
    // bucket-accumulation path above.
    #[test]
    fn randomized_streams_match_per_hour_mean_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let samples = 2;
        let steps = 6;
        let total_minutes = (samples * steps * 60) as i64;
        let mut streams = Vec::new();
        for station in 0..3 {
            let mut times: Vec<i64> = (0..80)
                .map(|_| rng.random_range(0..total_minutes))
                .collect();
            times.sort_unstable();
            let readings: Vec<(NaiveDateTime, f64)> = times
                .iter()
                .map(|&m| (minutes(m), rng.random_range(-5.0..30.0)))
                .collect();
            streams.push(RawStream {
                station_id: format!("s{station}"),
                lat: station as f64,
                lon: 0.0,
                readings,
            });
        }
        let st = aggregate_subhourly(&streams, t0(), samples, steps, Duration::hours(1)).unwrap();
        for (station, stream) in streams.iter().enumerate() {
            for cell in 0..samples * steps {
                let lo = minutes(cell as i64 * 60);
                let hi = minutes((cell as i64 + 1) * 60);
                let in_cell: Vec<f64> = stream
                    .readings
                    .iter()
                    .filter(|(ts, _)| *ts >= lo && *ts < hi)
                    .map(|&(_, v)| v)
                    .collect();
                let (s, t) = (cell / steps, cell % steps);
                if in_cell.is_empty() {
                    assert!(!st.mask[[s, t, station]]);
                } else {
                    let mean = in_cell.iter().sum::<f64>() / in_cell.len() as f64;
                    assert!((st.values[[s, t, station]] - mean).abs() < 1e-12);
                }
            }
        }
    }

    // Fully-observed day: the aggregate mean equals the raw mean when each
    // hour holds the same number of readings.
    #[test]
    fn fully_observed_day_preserves_mean() {
        let mut readings = Vec::new();
        let mut raw_sum = 0.0;
        for hour in 0..24i64 {
            for k in 0..4i64 {
                let v = (hour * 4 + k) as f64 * 0.25 - 3.0;
                readings.push((minutes(hour * 60 + k * 15), v));
                raw_sum += v;
            }
        }
        let raw_mean = raw_sum / readings.len() as f64;
        let streams = vec![RawStream {
            station_id: "a".into(),
            lat: 0.0,
            lon: 0.0,
            readings,
        }];
        let st = aggregate_subhourly(&streams, t0(), 1, 24, Duration::hours(1)).unwrap();
        let agg_mean = st.values.slice(ndarray::s![0, .., 0]).mean().unwrap();
        assert!((agg_mean - raw_mean).abs() < 1e-12);
    }
}
