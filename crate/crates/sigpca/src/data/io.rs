//! Container persistence for fields and stations, plus station CSV input.

use std::path::Path;

use chrono::NaiveDateTime;
use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::{DataError, GriddedField, RawStream, StationSeries};
use crate::container;

#[derive(Serialize, Deserialize)]
struct FieldManifest {
    schema_version: u32,
    kind: String,
    variable: String,
    units: String,
    shape: [usize; 3],
    coords: Vec<[f64; 2]>,
    sample_labels: Vec<String>,
    byte_order: String,
    dtype: String,
}

#[derive(Serialize, Deserialize)]
struct StationManifest {
    schema_version: u32,
    kind: String,
    station_ids: Vec<String>,
    coords: Vec<[f64; 2]>,
    shape: [usize; 3],
    missing_fraction: Vec<f64>,
    byte_order: String,
    dtype: String,
}

pub const SCHEMA_VERSION: u32 = 1;

impl GriddedField {
    /// Persist as `manifest.json` + a row-major `[S][T][D]` f64 blob.
    pub fn save(&self, dir: &Path) -> Result<(), DataError> {
        let (s, t, d) = self.shape();
        let manifest = FieldManifest {
            schema_version: SCHEMA_VERSION,
            kind: "gridded_field".into(),
            variable: self.variable_name.clone(),
            units: self.units.clone(),
            shape: [s, t, d],
            coords: self.coords.iter().map(|&(a, b)| [a, b]).collect(),
            sample_labels: self.sample_labels.clone(),
            byte_order: "LE".into(),
            dtype: "f64".into(),
        };
        container::save_manifest(dir, &manifest)?;
        let slice = self.values.as_slice().expect("standard layout");
        container::save_blob(dir, slice)?;
        Ok(())
    }

    /// Load a field container, re-validating every invariant.
    pub fn load(dir: &Path) -> Result<GriddedField, DataError> {
        let manifest: FieldManifest = container::load_manifest(dir)?;
        let [s, t, d] = manifest.shape;
        let values = container::load_blob(dir, s * t * d)?;
        let values = Array3::from_shape_vec((s, t, d), values)
            .map_err(|e| DataError::Shape(e.to_string()))?;
        GriddedField::new(
            values,
            manifest.coords.iter().map(|c| (c[0], c[1])).collect(),
            manifest.sample_labels,
            manifest.variable,
            manifest.units,
        )
    }
}

impl StationSeries {
    /// Persist as `manifest.json` + value blob + `mask.bin`.
    pub fn save(&self, dir: &Path) -> Result<(), DataError> {
        let (s, t, p) = self.values.dim();
        let manifest = StationManifest {
            schema_version: SCHEMA_VERSION,
            kind: "station_series".into(),
            station_ids: self.station_ids.clone(),
            coords: self.coords.iter().map(|&(a, b)| [a, b]).collect(),
            shape: [s, t, p],
            missing_fraction: self.missing_fraction.clone(),
            byte_order: "LE".into(),
            dtype: "f64".into(),
        };
        container::save_manifest(dir, &manifest)?;
        container::save_blob(dir, self.values.as_slice().expect("standard layout"))?;
        let mask: Vec<bool> = self.mask.iter().copied().collect();
        container::save_mask(dir, &mask)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<StationSeries, DataError> {
        let manifest: StationManifest = container::load_manifest(dir)?;
        let [s, t, p] = manifest.shape;
        let values = container::load_blob(dir, s * t * p)?;
        let values = Array3::from_shape_vec((s, t, p), values)
            .map_err(|e| DataError::Shape(e.to_string()))?;
        let mask = container::load_mask(dir, s * t * p)?;
        let mask = Array3::from_shape_vec((s, t, p), mask)
            .map_err(|e| DataError::Shape(e.to_string()))?;
        StationSeries::new(
            manifest.station_ids,
            manifest.coords.iter().map(|c| (c[0], c[1])).collect(),
            values,
            mask,
        )
    }
}

fn parse_timestamp(text: &str) -> Option<NaiveDateTime> {
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(text) {
        return Some(dt.naive_utc());
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(text, fmt) {
            return Some(dt);
        }
    }
    None
}

/// Read raw per-station readings from a CSV with columns
/// `station_id, lat, lon, timestamp, value` (ISO-8601 timestamps).
///
/// Streams are grouped by station id in order of first appearance; readings
/// keep file order. Conflicting coordinates for one station id are an error.
pub fn read_station_csv(path: &Path) -> Result<Vec<RawStream>, DataError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| DataError::Csv(e.to_string()))?;

    #[derive(Deserialize)]
    struct Row {
        station_id: String,
        lat: f64,
        lon: f64,
        timestamp: String,
        value: f64,
    }

    let mut order: Vec<String> = Vec::new();
    let mut streams: std::collections::BTreeMap<String, RawStream> =
        std::collections::BTreeMap::new();
    for record in reader.deserialize() {
        let row: Row = record.map_err(|e| DataError::Csv(e.to_string()))?;
        let ts = parse_timestamp(&row.timestamp).ok_or_else(|| {
            DataError::Csv(format!("unparseable timestamp '{}'", row.timestamp))
        })?;
        match streams.get_mut(&row.station_id) {
            Some(stream) => {
                if stream.lat != row.lat || stream.lon != row.lon {
                    return Err(DataError::InconsistentStation {
                        station_id: row.station_id,
                        detail: "coordinates differ between rows".into(),
                    });
                }
                stream.readings.push((ts, row.value));
            }
            None => {
                order.push(row.station_id.clone());
                streams.insert(
                    row.station_id.clone(),
                    RawStream {
                        station_id: row.station_id,
                        lat: row.lat,
                        lon: row.lon,
                        readings: vec![(ts, row.value)],
                    },
                );
            }
        }
    }
    Ok(order
        .into_iter()
        .map(|id| streams.remove(&id).expect("grouped above"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr3;
    use std::io::Write;

    #[test]
    fn field_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let values = arr3(&[
            [[0.1, 0.2, 0.3], [0.4, 0.5, 0.6], [0.7, 0.8, 0.9], [1.0, 1.1, 1.2]],
            [[2.1, 2.2, 2.3], [2.4, 2.5, 2.6], [2.7, 2.8, 2.9], [3.0, 3.1, 3.2]],
        ]);
        let field = GriddedField::new(
            values,
            vec![(40.0, -90.0), (40.5, -89.5), (41.0, -89.0)],
            vec!["2010-01-01".into(), "2010-01-02".into()],
            "temperature",
            "degC",
        )
        .unwrap();
        field.save(dir.path()).unwrap();
        // Blob size: 8 * S * T * D.
        let blob = std::fs::metadata(dir.path().join("data.bin")).unwrap();
        assert_eq!(blob.len(), 8 * 2 * 4 * 3);
        let back = GriddedField::load(dir.path()).unwrap();
        assert_eq!(back, field);
        for (a, b) in field.values.iter().zip(back.values.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let values = Array3::zeros((2, 4, 3));
        let field = GriddedField::new(
            values,
            vec![(0.0, 0.0), (0.0, 1.0), (0.0, 2.0)],
            vec!["a".into(), "b".into()],
            "v",
            "u",
        )
        .unwrap();
        field.save(dir.path()).unwrap();
        // Chop two bytes off: 192 -> 190.
        let blob_path = dir.path().join("data.bin");
        let bytes = std::fs::read(&blob_path).unwrap();
        std::fs::write(&blob_path, &bytes[..190]).unwrap();
        let err = GriddedField::load(dir.path()).unwrap_err();
        assert!(err.to_string().contains("size mismatch"), "{err}");
    }

    #[test]
    fn missing_manifest_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = GriddedField::load(dir.path()).unwrap_err();
        assert!(err.to_string().contains("missing manifest"), "{err}");
    }

    #[test]
    fn stations_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let values = arr3(&[[[1.0, 0.0], [2.0, 3.5]]]);
        let mask = arr3(&[[[true, false], [true, true]]]);
        let st = StationSeries::new(
            vec!["a".into(), "b".into()],
            vec![(10.0, 20.0), (11.0, 21.0)],
            values,
            mask,
        )
        .unwrap();
        st.save(dir.path()).unwrap();
        let back = StationSeries::load(dir.path()).unwrap();
        assert_eq!(back, st);
    }

    #[test]
    fn csv_groups_by_station_in_first_appearance_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("obs.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "station_id,lat,lon,timestamp,value").unwrap();
        writeln!(f, "B,41.0,-88.0,2010-01-01T00:10:00,3.0").unwrap();
        writeln!(f, "A,40.0,-89.0,2010-01-01T00:05:00,1.0").unwrap();
        writeln!(f, "B,41.0,-88.0,2010-01-01T00:40:00,5.0").unwrap();
        drop(f);
        let streams = read_station_csv(&path).unwrap();
        assert_eq!(streams.len(), 2);
        assert_eq!(streams[0].station_id, "B");
        assert_eq!(streams[0].readings.len(), 2);
        assert_eq!(streams[1].station_id, "A");
    }
}
