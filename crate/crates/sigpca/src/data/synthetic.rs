//! Seeded synthetic dataset: smooth truth field, biased + noisy model
//! output, and sparse station observations of the truth. Scaled for desk
//! runs of the full reconstruction + correction pipeline.

use chrono::NaiveDate;
use ndarray::Array3;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DataError, GriddedField, StationSeries};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub samples: usize,
    pub steps_per_sample: usize,
    /// Gridpoints along the latitude axis.
    pub grid_rows: usize,
    /// Gridpoints along the longitude axis.
    pub grid_cols: usize,
    /// `[lat_min, lat_max, lon_min, lon_max]` in degrees.
    pub bbox: [f64; 4],
    pub n_stations: usize,
    /// Mean level of the truth field (also sets the %RMSE denominator scale).
    pub base_level: f64,
    /// Amplitude of the 24-hour oscillation.
    pub diurnal_amplitude: f64,
    /// Amplitude of the 72-hour oscillation.
    pub multiday_amplitude: f64,
    /// Peak magnitude of the smooth spatial bias added to the model field.
    pub bias_amplitude: f64,
    /// Innovation standard deviation of the AR(1) model noise.
    pub noise_sigma: f64,
    /// AR(1) coefficient of the model noise.
    pub ar_coeff: f64,
    /// Standard deviation of station observation noise.
    pub obs_noise_sigma: f64,
    /// Fraction of station cells masked missing, uniformly at random.
    pub station_missing_rate: f64,
    /// Hours between consecutive steps.
    pub interval_hours: f64,
    /// Calendar date of the first sample; samples are labeled daily from it.
    pub start_date: String,
    pub variable: String,
    pub units: String,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            samples: 60,
            steps_per_sample: 24,
            grid_rows: 20,
            grid_cols: 20,
            bbox: [40.0, 44.0, -90.0, -86.0],
            n_stations: 40,
            base_level: 15.0,
            diurnal_amplitude: 4.0,
            multiday_amplitude: 1.5,
            bias_amplitude: 1.1,
            noise_sigma: 0.3,
            ar_coeff: 0.8,
            obs_noise_sigma: 0.05,
            station_missing_rate: 0.0,
            interval_hours: 1.0,
            start_date: "2010-01-01".into(),
            variable: "temperature".into(),
            units: "degC".into(),
        }
    }
}

impl SyntheticSpec {
    pub fn n_locations(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    fn grid_coords(&self) -> Vec<(f64, f64)> {
        let [lat_min, lat_max, lon_min, lon_max] = self.bbox;
        let mut coords = Vec::with_capacity(self.n_locations());
        for i in 0..self.grid_rows {
            let lat = if self.grid_rows == 1 {
                lat_min
            } else {
                lat_min + (lat_max - lat_min) * i as f64 / (self.grid_rows - 1) as f64
            };
            for j in 0..self.grid_cols {
                let lon = if self.grid_cols == 1 {
                    lon_min
                } else {
                    lon_min + (lon_max - lon_min) * j as f64 / (self.grid_cols - 1) as f64
                };
                coords.push((lat, lon));
            }
        }
        coords
    }

    fn unit_coords(&self, lat: f64, lon: f64) -> (f64, f64) {
        let [lat_min, lat_max, lon_min, lon_max] = self.bbox;
        let u = if lat_max > lat_min {
            (lat - lat_min) / (lat_max - lat_min)
        } else {
            0.0
        };
        let v = if lon_max > lon_min {
            (lon - lon_min) / (lon_max - lon_min)
        } else {
            0.0
        };
        (u, v)
    }

    /// Noiseless truth value at a location and global step index.
    pub fn truth_value(&self, lat: f64, lon: f64, global_step: usize) -> f64 {
        use std::f64::consts::PI;
        let (u, v) = self.unit_coords(lat, lon);
        let hours = global_step as f64 * self.interval_hours;
        let diurnal_amp = self.diurnal_amplitude * (0.6 + 0.4 * (PI * u).sin() * (PI * v).cos());
        let diurnal_phase = 0.5 * PI * (u - v);
        let multiday_amp = self.multiday_amplitude * (0.5 + 0.5 * (0.7 * PI * u).cos() * (PI * v).sin());
        let multiday_phase = 0.5 * PI * (u + v);
        self.base_level
            + diurnal_amp * (2.0 * PI * hours / 24.0 + diurnal_phase).sin()
            + multiday_amp * (2.0 * PI * hours / 72.0 + multiday_phase).sin()
    }

    /// The analytic bias surface added to the model field: smooth, zero at
    /// the corners, magnitude on the order of `bias_amplitude`.
    pub fn bias_surface(&self, lat: f64, lon: f64) -> f64 {
        use std::f64::consts::PI;
        let (u, v) = self.unit_coords(lat, lon);
        self.bias_amplitude * ((PI * u).sin() * (PI * v).sin() + 0.4 * (u - 0.5))
    }
}

/// Generate `(model field, station observations, truth field)` from `spec`.
/// Deterministic per seed.
pub fn generate_synthetic(
    spec: &SyntheticSpec,
) -> Result<(GriddedField, StationSeries, GriddedField), DataError> {
    if spec.grid_rows < 2 || spec.grid_cols < 2 {
        return Err(DataError::DegenerateDims(format!(
            "grid must be at least 2x2, got {}x{}",
            spec.grid_rows, spec.grid_cols
        )));
    }
    if spec.samples < 1 || spec.steps_per_sample < 2 {
        return Err(DataError::DegenerateDims(
            "need samples >= 1 and steps_per_sample >= 2".into(),
        ));
    }
    if spec.n_stations < 1 || spec.n_stations > spec.n_locations() {
        return Err(DataError::DegenerateDims(format!(
            "n_stations {} out of range 1..={}",
            spec.n_stations,
            spec.n_locations()
        )));
    }
    let [lat_min, lat_max, lon_min, lon_max] = spec.bbox;
    if !(lat_max > lat_min && lon_max > lon_min) {
        return Err(DataError::DegenerateDims("degenerate bounding box".into()));
    }

    let (s, t, d) = (spec.samples, spec.steps_per_sample, spec.n_locations());
    let coords = spec.grid_coords();
    let start = NaiveDate::parse_from_str(&spec.start_date, "%Y-%m-%d")
        .map_err(|e| DataError::Shape(format!("bad start_date: {e}")))?;
    let labels: Vec<String> = (0..s)
        .map(|i| (start + chrono::Duration::days(i as i64)).to_string())
        .collect();

    let mut truth = Array3::zeros((s, t, d));
    for sample in 0..s {
        for step in 0..t {
            let global = sample * t + step;
            for (loc, &(lat, lon)) in coords.iter().enumerate() {
                truth[[sample, step, loc]] = spec.truth_value(lat, lon, global);
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise_dist = Normal::new(0.0, 1.0).expect("unit normal");

    // Model field: truth + bias surface + AR(1) noise, one chain per
    // location across the full (sample-major) time axis.
    let mut model = truth.clone();
    for (loc, &(lat, lon)) in coords.iter().enumerate() {
        let bias = spec.bias_surface(lat, lon);
        let mut prev = 0.0;
        for sample in 0..s {
            for step in 0..t {
                let innovation = spec.noise_sigma * noise_dist.sample(&mut rng);
                prev = spec.ar_coeff * prev + innovation;
                model[[sample, step, loc]] += bias + prev;
            }
        }
    }

    // Stations sit exactly on randomly chosen gridpoints.
    let mut sites = rand::seq::index::sample(&mut rng, d, spec.n_stations).into_vec();
    sites.sort_unstable();
    let mut obs = Array3::zeros((s, t, spec.n_stations));
    for (p, &g) in sites.iter().enumerate() {
        for sample in 0..s {
            for step in 0..t {
                let noise = spec.obs_noise_sigma * noise_dist.sample(&mut rng);
                obs[[sample, step, p]] = truth[[sample, step, g]] + noise;
            }
        }
    }
    let mut mask = Array3::from_elem((s, t, spec.n_stations), true);
    if spec.station_missing_rate > 0.0 {
        for cell in mask.iter_mut() {
            if rng.random::<f64>() < spec.station_missing_rate {
                *cell = false;
            }
        }
    }

    let truth_field = GriddedField::new(
        truth,
        coords.clone(),
        labels.clone(),
        spec.variable.clone(),
        spec.units.clone(),
    )?;
    let model_field = GriddedField::new(model, coords.clone(), labels, spec.variable.clone(), spec.units.clone())?;
    let stations = StationSeries::new(
        (0..spec.n_stations).map(|p| format!("S{p:03}")).collect(),
        sites.iter().map(|&g| coords[g]).collect(),
        obs,
        mask,
    )?;
    Ok((model_field, stations, truth_field))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            samples: 4,
            steps_per_sample: 12,
            grid_rows: 5,
            grid_cols: 4,
            n_stations: 6,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn zero_perturbation_gives_model_equal_truth() {
        let spec = SyntheticSpec {
            bias_amplitude: 0.0,
            noise_sigma: 0.0,
            ..small_spec()
        };
        let (model, _, truth) = generate_synthetic(&spec).unwrap();
        for (a, b) in model.values.iter().zip(truth.values.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = small_spec();
        let (m1, s1, t1) = generate_synthetic(&spec).unwrap();
        let (m2, s2, t2) = generate_synthetic(&spec).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(s1, s2);
        assert_eq!(t1, t2);
    }

    #[test]
    fn mean_model_minus_truth_recovers_bias_surface() {
        let spec = SyntheticSpec {
            bias_amplitude: 2.5,
            noise_sigma: 0.0,
            ..small_spec()
        };
        let (model, _, truth) = generate_synthetic(&spec).unwrap();
        let (s, t, d) = model.shape();
        for loc in 0..d {
            let mut acc = 0.0;
            for sample in 0..s {
                for step in 0..t {
                    acc += model.values[[sample, step, loc]] - truth.values[[sample, step, loc]];
                }
            }
            let mean = acc / (s * t) as f64;
            let (lat, lon) = model.coords[loc];
            assert!((mean - spec.bias_surface(lat, lon)).abs() < 1e-12);
        }
    }

    #[test]
    fn stations_sample_truth_at_gridpoints() {
        let spec = SyntheticSpec {
            obs_noise_sigma: 0.0,
            ..small_spec()
        };
        let (model, stations, truth) = generate_synthetic(&spec).unwrap();
        // Every station coordinate is an exact gridpoint coordinate and the
        // observation without noise equals the truth there.
        for (p, &coord) in stations.coords.iter().enumerate() {
            let g = model.coords.iter().position(|&c| c == coord).unwrap();
            for sample in 0..spec.samples {
                for step in 0..spec.steps_per_sample {
                    assert_eq!(
                        stations.values[[sample, step, p]],
                        truth.values[[sample, step, g]]
                    );
                }
            }
        }
    }

    #[test]
    fn degenerate_grid_rejected() {
        let spec = SyntheticSpec {
            grid_rows: 1,
            ..small_spec()
        };
        assert!(matches!(
            generate_synthetic(&spec),
            Err(DataError::DegenerateDims(_))
        ));
    }

    #[test]
    fn missing_rate_masks_cells() {
        let spec = SyntheticSpec {
            station_missing_rate: 0.5,
            ..small_spec()
        };
        let (_, stations, _) = generate_synthetic(&spec).unwrap();
        let masked = stations.mask.iter().filter(|&&m| !m).count();
        let total = stations.mask.len();
        let rate = masked as f64 / total as f64;
        assert!(rate > 0.3 && rate < 0.7, "rate {rate}");
    }
}
