//! Containers for gridded model output and sparse station observations.
//!
//! A [`GriddedField`] is a dense `samples x steps x locations` array with
//! per-location coordinates; a [`StationSeries`] is the same layout over
//! stations with a presence mask. Both persist to the manifest + blob
//! container (see [`crate::container`]) so pipeline stages can run as
//! separate processes.

mod aggregate;
mod io;
mod nearest;
mod synthetic;

pub use aggregate::{aggregate_subhourly, RawStream};
pub use io::read_station_csv;
pub use nearest::{haversine_km, nearest_gridpoints};
pub use synthetic::{generate_synthetic, SyntheticSpec};

use ndarray::{Array3, ArrayView1, ArrayView2};
use thiserror::Error;

use crate::container::ContainerError;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{0}")]
    Container(#[from] ContainerError),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("NaN in model values at sample {sample}, step {step}, location {location}")]
    NanValue {
        sample: usize,
        step: usize,
        location: usize,
    },
    #[error("coordinate out of range at location {index}: ({lat}, {lon})")]
    CoordRange { index: usize, lat: f64, lon: f64 },
    #[error("non-finite observation at sample {sample}, step {step}, station {station}")]
    NonFiniteObservation {
        sample: usize,
        step: usize,
        station: usize,
    },
    #[error("unsorted timestamps for station {station_id} at reading {index}")]
    UnsortedTimestamps { station_id: String, index: usize },
    #[error("timestamp outside declared range for station {station_id}: {timestamp}")]
    OutsideRange {
        station_id: String,
        timestamp: String,
    },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("degenerate dimensions: {0}")]
    DegenerateDims(String),
    #[error("csv error: {0}")]
    Csv(String),
    #[error("inconsistent station metadata for {station_id}: {detail}")]
    InconsistentStation { station_id: String, detail: String },
}

fn check_coords(coords: &[(f64, f64)]) -> Result<(), DataError> {
    for (i, &(lat, lon)) in coords.iter().enumerate() {
        if !(lat.is_finite() && lon.is_finite())
            || !(-90.0..=90.0).contains(&lat)
            || !(-180.0..=180.0).contains(&lon)
        {
            return Err(DataError::CoordRange { index: i, lat, lon });
        }
    }
    Ok(())
}

/// Dense model output: `values[sample][step][location]` plus coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedField {
    pub values: Array3<f64>,
    /// `(lat, lon)` in degrees, one entry per location.
    pub coords: Vec<(f64, f64)>,
    /// Calendar or interval identifier per sample (e.g. "2010-03-14").
    pub sample_labels: Vec<String>,
    pub variable_name: String,
    pub units: String,
}

impl GriddedField {
    /// Validating constructor; rejects NaN values, out-of-range coordinates
    /// and inconsistent dimensions.
    pub fn new(
        values: Array3<f64>,
        coords: Vec<(f64, f64)>,
        sample_labels: Vec<String>,
        variable_name: impl Into<String>,
        units: impl Into<String>,
    ) -> Result<Self, DataError> {
        let (s, t, d) = values.dim();
        if s < 1 || t < 2 || d < 1 {
            return Err(DataError::Shape(format!(
                "need samples >= 1, steps >= 2, locations >= 1, got ({s}, {t}, {d})"
            )));
        }
        if coords.len() != d {
            return Err(DataError::Shape(format!(
                "{} coords for {d} locations",
                coords.len()
            )));
        }
        if sample_labels.len() != s {
            return Err(DataError::Shape(format!(
                "{} sample labels for {s} samples",
                sample_labels.len()
            )));
        }
        check_coords(&coords)?;
        for ((sample, step, location), v) in values.indexed_iter() {
            if v.is_nan() {
                return Err(DataError::NanValue {
                    sample,
                    step,
                    location,
                });
            }
        }
        Ok(Self {
            values,
            coords,
            sample_labels,
            variable_name: variable_name.into(),
            units: units.into(),
        })
    }

    /// `(samples, steps_per_sample, locations)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        self.values.dim()
    }

    pub fn n_samples(&self) -> usize {
        self.values.dim().0
    }

    pub fn steps_per_sample(&self) -> usize {
        self.values.dim().1
    }

    pub fn n_locations(&self) -> usize {
        self.values.dim().2
    }

    /// Time series of one location within one sample.
    pub fn series(&self, sample: usize, location: usize) -> ArrayView1<'_, f64> {
        self.values.slice(ndarray::s![sample, .., location])
    }

    /// Bounding box `(lat_min, lat_max, lon_min, lon_max)` of the coords.
    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        let mut b = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for &(lat, lon) in &self.coords {
            b.0 = b.0.min(lat);
            b.1 = b.1.max(lat);
            b.2 = b.2.min(lon);
            b.3 = b.3.max(lon);
        }
        b
    }

    /// Cut the flattened time axis into consecutive windows of
    /// `steps_per_sample` steps, dropping any remainder. Used to regroup
    /// e.g. daily simulations into shorter windows for more samples.
    pub fn reshape_time_windows(&self, steps_per_sample: usize) -> Result<GriddedField, DataError> {
        if steps_per_sample < 2 {
            return Err(DataError::Shape(
                "steps_per_sample must be >= 2".to_string(),
            ));
        }
        let (s, t, d) = self.shape();
        let total = s * t;
        let windows = total / steps_per_sample;
        if windows == 0 {
            return Err(DataError::Shape(format!(
                "{total} total steps cannot fill one window of {steps_per_sample}"
            )));
        }
        let mut values = Array3::zeros((windows, steps_per_sample, d));
        for w in 0..windows {
            for k in 0..steps_per_sample {
                let flat = w * steps_per_sample + k;
                let (os, ot) = (flat / t, flat % t);
                for loc in 0..d {
                    values[[w, k, loc]] = self.values[[os, ot, loc]];
                }
            }
        }
        let labels = (0..windows).map(|w| format!("w{w:04}")).collect();
        GriddedField::new(
            values,
            self.coords.clone(),
            labels,
            self.variable_name.clone(),
            self.units.clone(),
        )
    }
}

/// Sparse observations: `values[sample][step][station]` with presence mask.
#[derive(Debug, Clone, PartialEq)]
pub struct StationSeries {
    pub station_ids: Vec<String>,
    pub coords: Vec<(f64, f64)>,
    pub values: Array3<f64>,
    /// `true` where an observation is present.
    pub mask: Array3<bool>,
    /// Exactly `1 - mean(mask[.., .., p])` per station.
    pub missing_fraction: Vec<f64>,
}

impl StationSeries {
    pub fn new(
        station_ids: Vec<String>,
        coords: Vec<(f64, f64)>,
        values: Array3<f64>,
        mask: Array3<bool>,
    ) -> Result<Self, DataError> {
        let (s, t, p) = values.dim();
        if station_ids.len() != p || coords.len() != p {
            return Err(DataError::Shape(format!(
                "{} ids / {} coords for {p} stations",
                station_ids.len(),
                coords.len()
            )));
        }
        if mask.dim() != values.dim() {
            return Err(DataError::Shape("mask shape differs from values".into()));
        }
        check_coords(&coords)?;
        for ((sample, step, station), v) in values.indexed_iter() {
            if mask[[sample, step, station]] && !v.is_finite() {
                return Err(DataError::NonFiniteObservation {
                    sample,
                    step,
                    station,
                });
            }
        }
        let cells = (s * t) as f64;
        let missing_fraction = (0..p)
            .map(|station| {
                let present = mask
                    .slice(ndarray::s![.., .., station])
                    .iter()
                    .filter(|&&m| m)
                    .count();
                1.0 - present as f64 / cells
            })
            .collect();
        Ok(Self {
            station_ids,
            coords,
            values,
            mask,
            missing_fraction,
        })
    }

    pub fn n_stations(&self) -> usize {
        self.values.dim().2
    }

    /// Indices of stations whose missing fraction does not exceed
    /// `threshold`. Stations above it carry too little data to train on.
    pub fn retained_stations(&self, threshold: f64) -> Vec<usize> {
        (0..self.n_stations())
            .filter(|&p| self.missing_fraction[p] <= threshold)
            .collect()
    }

    /// Restrict to the given station indices (in the given order).
    pub fn select(&self, stations: &[usize]) -> Result<StationSeries, DataError> {
        let (s, t, _) = self.values.dim();
        let mut values = Array3::zeros((s, t, stations.len()));
        let mut mask = Array3::from_elem((s, t, stations.len()), false);
        for (new_p, &p) in stations.iter().enumerate() {
            for sample in 0..s {
                for step in 0..t {
                    values[[sample, step, new_p]] = self.values[[sample, step, p]];
                    mask[[sample, step, new_p]] = self.mask[[sample, step, p]];
                }
            }
        }
        StationSeries::new(
            stations.iter().map(|&p| self.station_ids[p].clone()).collect(),
            stations.iter().map(|&p| self.coords[p]).collect(),
            values,
            mask,
        )
    }
}

/// Station-to-gridpoint assignment with great-circle distances.
#[derive(Debug, Clone, PartialEq)]
pub struct NearestMap {
    /// `(station index, gridpoint index, distance_km)`, one entry per station.
    pub pairs: Vec<(usize, usize, f64)>,
}

impl NearestMap {
    pub fn gridpoint_of(&self, station: usize) -> Option<usize> {
        self.pairs
            .iter()
            .find(|&&(p, _, _)| p == station)
            .map(|&(_, g, _)| g)
    }

    /// Set of gridpoints that are nearest to at least one station.
    pub fn station_gridpoints(&self) -> Vec<usize> {
        let mut g: Vec<usize> = self.pairs.iter().map(|&(_, g, _)| g).collect();
        g.sort_unstable();
        g.dedup();
        g
    }
}

/// Matrix view helper: flatten `[S][T][D]` into `[S][T*D]` rows (step-major,
/// then location), the layout used by the EOF baseline.
pub fn flatten_space_time(field: &GriddedField) -> ArrayView2<'_, f64> {
    let (s, t, d) = field.shape();
    field
        .values
        .view()
        .into_shape_with_order((s, t * d))
        .expect("standard layout")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr3;

    fn small_field() -> GriddedField {
        let values = arr3(&[
            [[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]],
            [[7.0, 8.0], [9.0, 10.0], [11.0, 12.0]],
        ]);
        GriddedField::new(
            values,
            vec![(40.0, -90.0), (41.0, -89.0)],
            vec!["2010-01-01".into(), "2010-01-02".into()],
            "temperature",
            "degC",
        )
        .unwrap()
    }

    #[test]
    fn rejects_nan_values() {
        let mut values = arr3(&[[[1.0], [2.0]]]);
        values[[0, 1, 0]] = f64::NAN;
        let err = GriddedField::new(
            values,
            vec![(0.0, 0.0)],
            vec!["a".into()],
            "v",
            "u",
        )
        .unwrap_err();
        assert!(matches!(err, DataError::NanValue { .. }));
    }

    #[test]
    fn rejects_out_of_range_coords() {
        let values = arr3(&[[[1.0], [2.0]]]);
        let err = GriddedField::new(
            values,
            vec![(91.0, 0.0)],
            vec!["a".into()],
            "v",
            "u",
        )
        .unwrap_err();
        assert!(matches!(err, DataError::CoordRange { .. }));
    }

    #[test]
    fn missing_fraction_matches_mask_exactly() {
        let values = arr3(&[[[1.0, 0.0], [2.0, 0.0]], [[3.0, 5.0], [4.0, 0.0]]]);
        let mask = arr3(&[[[true, false], [true, false]], [[true, true], [true, false]]]);
        let st = StationSeries::new(
            vec!["a".into(), "b".into()],
            vec![(0.0, 0.0), (1.0, 1.0)],
            values,
            mask,
        )
        .unwrap();
        assert_eq!(st.missing_fraction[0], 0.0);
        assert_eq!(st.missing_fraction[1], 1.0 - 1.0 / 4.0);
    }

    #[test]
    fn retained_stations_filters_on_threshold() {
        let values = Array3::zeros((1, 4, 2));
        let mut mask = Array3::from_elem((1, 4, 2), true);
        for step in 0..3 {
            mask[[0, step, 1]] = false;
        }
        let st = StationSeries::new(
            vec!["a".into(), "b".into()],
            vec![(0.0, 0.0), (1.0, 1.0)],
            values,
            mask,
        )
        .unwrap();
        assert_eq!(st.retained_stations(0.5), vec![0]);
        assert_eq!(st.retained_stations(0.8), vec![0, 1]);
    }

    #[test]
    fn reshape_drops_remainder() {
        let field = small_field();
        // 2 samples x 3 steps = 6 flat steps -> three windows of 2.
        let r = field.reshape_time_windows(2).unwrap();
        assert_eq!(r.shape(), (3, 2, 2));
        assert_eq!(r.values[[0, 0, 0]], 1.0);
        assert_eq!(r.values[[1, 0, 0]], 5.0);
        assert_eq!(r.values[[2, 0, 1]], 10.0);
        // 6 flat steps with window 4 -> one window, remainder dropped.
        let r = field.reshape_time_windows(4).unwrap();
        assert_eq!(r.shape(), (1, 4, 2));
        assert_eq!(r.values[[0, 3, 1]], 8.0);
    }

    #[test]
    fn flatten_orders_step_major() {
        let field = small_field();
        let flat = flatten_space_time(&field);
        assert_eq!(flat.dim(), (2, 6));
        assert_eq!(flat[[0, 0]], 1.0);
        assert_eq!(flat[[0, 1]], 2.0);
        assert_eq!(flat[[0, 2]], 3.0);
        assert_eq!(flat[[1, 5]], 12.0);
    }
}
