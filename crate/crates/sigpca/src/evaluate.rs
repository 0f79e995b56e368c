//! Validation statistics: %RMSE and %-improvement, 1-Wasserstein distances,
//! correlation versus distance, periodograms, QQ pairs, and seasonal
//! grouping, plus the assembled [`EvalReport`].

use ndarray::ArrayView2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{haversine_km, GriddedField, NearestMap, StationSeries};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty input: {0}")]
    Empty(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("reference mean is zero")]
    ZeroReferenceMean,
    #[error("model RMSE is zero")]
    ZeroModelRmse,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("series too short: {len} < {min}")]
    TooShort { len: usize, min: usize },
    #[error("series is entirely missing")]
    AllMissing,
    #[error("need at least {need} locations, got {got}")]
    TooFewLocations { need: usize, got: usize },
    #[error("unparseable sample label '{0}' (expected a YYYY-MM-DD prefix)")]
    BadLabel(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Plain RMSE over (optionally masked) paired entries.
pub fn rmse(pred: &[f64], reference: &[f64], mask: Option<&[bool]>) -> Result<f64, EvalError> {
    if pred.len() != reference.len() {
        return Err(EvalError::ShapeMismatch(format!(
            "{} vs {} entries",
            pred.len(),
            reference.len()
        )));
    }
    if let Some(m) = mask {
        if m.len() != pred.len() {
            return Err(EvalError::ShapeMismatch("mask length".into()));
        }
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for i in 0..pred.len() {
        if mask.map(|m| m[i]).unwrap_or(true) {
            let d = pred[i] - reference[i];
            acc += d * d;
            count += 1;
        }
    }
    if count == 0 {
        return Err(EvalError::Empty("all entries masked".into()));
    }
    Ok((acc / count as f64).sqrt())
}

/// `100 * RMSE(pred, reference) / mean(reference)`, masked entries skipped
/// from both the error and the mean.
pub fn pct_rmse(pred: &[f64], reference: &[f64], mask: Option<&[bool]>) -> Result<f64, EvalError> {
    let err = rmse(pred, reference, mask)?;
    let mut acc = 0.0;
    let mut count = 0usize;
    for (i, &r) in reference.iter().enumerate() {
        if mask.map(|m| m[i]).unwrap_or(true) {
            acc += r;
            count += 1;
        }
    }
    let mean = acc / count as f64;
    if mean == 0.0 {
        return Err(EvalError::ZeroReferenceMean);
    }
    Ok(100.0 * err / mean)
}

/// Relative RMSE reduction of the corrected field, in percent. Negative
/// when the correction moves predictions away from the observations.
pub fn pct_improvement(model_rmse: f64, corrected_rmse: f64) -> Result<f64, EvalError> {
    if model_rmse <= 0.0 {
        return Err(EvalError::ZeroModelRmse);
    }
    Ok(100.0 * (model_rmse - corrected_rmse) / model_rmse)
}

/// 1-Wasserstein distance between two empirical distributions: the L1
/// distance between their quantile functions, integrated exactly over the
/// piecewise-constant segments.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::Empty("wasserstein1 input".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (n, m) = (sa.len(), sb.len());
    // Quantile breakpoints on the common grid of multiples of 1/(n*m).
    let mut total = 0.0f64;
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = 0usize;
    while i < n && j < m {
        let next_a = (i + 1) * m;
        let next_b = (j + 1) * n;
        let next = next_a.min(next_b);
        total += (next - prev) as f64 * (sa[i] - sb[j]).abs();
        prev = next;
        if next == next_a {
            i += 1;
        }
        if next == next_b {
            j += 1;
        }
    }
    Ok(total / (n * m) as f64)
}

/// Sampled (distance, Pearson r) cloud; pairs whose correlation is
/// undefined (constant series or too little overlap) are skipped and
/// counted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationCloud {
    pub points: Vec<(f64, f64)>,
    pub skipped: usize,
}

fn pearson(
    a: ndarray::ArrayView1<'_, f64>,
    b: ndarray::ArrayView1<'_, f64>,
    joint: Option<Vec<usize>>,
) -> Option<f64> {
    let idx: Vec<usize> = match joint {
        Some(v) => v,
        None => (0..a.len()).collect(),
    };
    if idx.len() < 3 {
        return None;
    }
    let n = idx.len() as f64;
    let (mut ma, mut mb) = (0.0, 0.0);
    for &i in &idx {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    let (mut cab, mut caa, mut cbb) = (0.0, 0.0, 0.0);
    for &i in &idx {
        let (da, db) = (a[i] - ma, b[i] - mb);
        cab += da * db;
        caa += da * da;
        cbb += db * db;
    }
    if caa <= 0.0 || cbb <= 0.0 {
        return None;
    }
    Some(cab / (caa * cbb).sqrt())
}

/// Pearson correlation over the time dimension for sampled location pairs.
/// `values` is `locations x time`; an optional mask restricts each pair to
/// jointly present entries. Pair subsampling is uniform and seeded, capped
/// at `max_pairs`.
pub fn correlation_vs_distance(
    values: &ArrayView2<f64>,
    mask: Option<&ArrayView2<bool>>,
    coords: &[(f64, f64)],
    max_pairs: usize,
    seed: u64,
) -> Result<CorrelationCloud, EvalError> {
    let (d, t) = values.dim();
    if d < 2 {
        return Err(EvalError::TooFewLocations { need: 2, got: d });
    }
    if t < 3 {
        return Err(EvalError::TooShort { len: t, min: 3 });
    }
    if coords.len() != d {
        return Err(EvalError::ShapeMismatch("coords vs locations".into()));
    }
    let total = d * (d - 1) / 2;
    let chosen: Vec<usize> = if total <= max_pairs {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = rand::seq::index::sample(&mut rng, total, max_pairs).into_vec();
        v.sort_unstable();
        v
    };
    let mut points = Vec::with_capacity(chosen.len());
    let mut skipped = 0usize;
    // Decode the linear pair index into (i, j) with i < j.
    let decode = {
        let mut row_start = vec![0usize; d];
        let mut acc = 0;
        for i in 0..d {
            row_start[i] = acc;
            acc += d - 1 - i;
        }
        move |k: usize| -> (usize, usize) {
            let i = match row_start.binary_search(&k) {
                Ok(i) => i,
                Err(i) => i - 1,
            };
            let j = i + 1 + (k - row_start[i]);
            (i, j)
        }
    };
    for k in chosen {
        let (i, j) = decode(k);
        let a = values.row(i);
        let b = values.row(j);
        let joint = mask.map(|m| {
            (0..t)
                .filter(|&s| m[[i, s]] && m[[j, s]])
                .collect::<Vec<usize>>()
        });
        match pearson(a, b, joint) {
            Some(r) => points.push((haversine_km(coords[i], coords[j]), r)),
            None => skipped += 1,
        }
    }
    Ok(CorrelationCloud { points, skipped })
}

/// Correlation cloud over the gridpoints of one or more fields with shared
/// coordinates; the time dimensions are concatenated.
pub fn field_correlation(
    fields: &[&GriddedField],
    max_pairs: usize,
    seed: u64,
) -> Result<CorrelationCloud, EvalError> {
    let first = fields
        .first()
        .ok_or_else(|| EvalError::Empty("no fields".into()))?;
    let d = first.n_locations();
    for f in fields {
        if f.n_locations() != d || f.coords != first.coords {
            return Err(EvalError::ShapeMismatch(
                "fields must share coordinates".into(),
            ));
        }
    }
    let t_total: usize = fields.iter().map(|f| f.n_samples() * f.steps_per_sample()).sum();
    let mut values = ndarray::Array2::zeros((d, t_total));
    let mut at = 0;
    for f in fields {
        let (s, t, _) = f.shape();
        for sample in 0..s {
            for step in 0..t {
                for loc in 0..d {
                    values[[loc, at]] = f.values[[sample, step, loc]];
                }
                at += 1;
            }
        }
    }
    correlation_vs_distance(&values.view(), None, &first.coords, max_pairs, seed)
}

/// Correlation cloud over stations, restricted per pair to jointly present
/// observations.
pub fn station_correlation(
    stations: &StationSeries,
    max_pairs: usize,
    seed: u64,
) -> Result<CorrelationCloud, EvalError> {
    let (s, t, p) = stations.values.dim();
    let mut values = ndarray::Array2::zeros((p, s * t));
    let mut mask = ndarray::Array2::from_elem((p, s * t), false);
    for station in 0..p {
        let mut at = 0;
        for sample in 0..s {
            for step in 0..t {
                values[[station, at]] = stations.values[[sample, step, station]];
                mask[[station, at]] = stations.mask[[sample, step, station]];
                at += 1;
            }
        }
    }
    correlation_vs_distance(
        &values.view(),
        Some(&mask.view()),
        &stations.coords,
        max_pairs,
        seed,
    )
}

/// One-sided periodogram of a (possibly gappy) series.
///
/// Missing entries are linearly interpolated (edge gaps extend the nearest
/// present value), the mean is removed, and bin `k` of the DFT contributes
/// power `|X_k|^2 / n` at frequency `k` cycles per `n * sample_interval`;
/// frequencies are reported in cycles per day.
pub fn power_spectrum(
    series: &[f64],
    mask: Option<&[bool]>,
    sample_interval_hours: f64,
) -> Result<Vec<(f64, f64)>, EvalError> {
    let n = series.len();
    if n < 8 {
        return Err(EvalError::TooShort { len: n, min: 8 });
    }
    let mut filled: Vec<f64> = series.to_vec();
    if let Some(m) = mask {
        if m.len() != n {
            return Err(EvalError::ShapeMismatch("mask length".into()));
        }
        let present: Vec<usize> = (0..n).filter(|&i| m[i]).collect();
        if present.is_empty() {
            return Err(EvalError::AllMissing);
        }
        for i in 0..present[0] {
            filled[i] = series[present[0]];
        }
        for w in present.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            for i in lo + 1..hi {
                let frac = (i - lo) as f64 / (hi - lo) as f64;
                filled[i] = series[lo] + frac * (series[hi] - series[lo]);
            }
        }
        for i in present[present.len() - 1] + 1..n {
            filled[i] = series[present[present.len() - 1]];
        }
    }
    let mean = filled.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = filled
        .iter()
        .map(|&v| Complex::new(v - mean, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let days_total = n as f64 * sample_interval_hours / 24.0;
    Ok((0..=n / 2)
        .map(|k| (k as f64 / days_total, buf[k].norm_sqr() / n as f64))
        .collect())
}

/// Matched empirical quantiles of two samples at probabilities
/// `(i - 0.5) / n_quantiles`, with linear interpolation between order
/// statistics.
pub fn qq_pairs(a: &[f64], b: &[f64], n_quantiles: usize) -> Result<Vec<(f64, f64)>, EvalError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::Empty("qq_pairs input".into()));
    }
    if n_quantiles == 0 {
        return Err(EvalError::Empty("zero quantiles".into()));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let quantile = |sorted: &[f64], p: f64| -> f64 {
        let h = (sorted.len() - 1) as f64 * p;
        let lo = h.floor() as usize;
        let frac = h - lo as f64;
        if lo + 1 < sorted.len() {
            sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
        } else {
            sorted[lo]
        }
    };
    Ok((1..=n_quantiles)
        .map(|i| {
            let p = (i as f64 - 0.5) / n_quantiles as f64;
            (quantile(&sa, p), quantile(&sb, p))
        })
        .collect())
}

pub const SEASON_NAMES: [&str; 4] = ["winter", "spring", "summer", "fall"];

/// Sample indices grouped by season. December stays unassigned, matching
/// the Jan-Feb winter definition used throughout the reported figures.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeasonalPartition {
    pub winter: Vec<usize>,
    pub spring: Vec<usize>,
    pub summer: Vec<usize>,
    pub fall: Vec<usize>,
    pub unassigned: Vec<usize>,
}

impl SeasonalPartition {
    pub fn group(&self, name: &str) -> &[usize] {
        match name {
            "winter" => &self.winter,
            "spring" => &self.spring,
            "summer" => &self.summer,
            "fall" => &self.fall,
            _ => &self.unassigned,
        }
    }
}

/// Partition samples by the month of their label's `YYYY-MM-DD` prefix:
/// winter Jan-Feb, spring Mar-May, summer Jun-Aug, fall Sep-Nov.
pub fn seasonal_partition(labels: &[String]) -> Result<SeasonalPartition, EvalError> {
    let mut partition = SeasonalPartition {
        winter: Vec::new(),
        spring: Vec::new(),
        summer: Vec::new(),
        fall: Vec::new(),
        unassigned: Vec::new(),
    };
    for (i, label) in labels.iter().enumerate() {
        let date = label
            .get(..10)
            .and_then(|s| chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d").ok())
            .ok_or_else(|| EvalError::BadLabel(label.clone()))?;
        match chrono::Datelike::month(&date) {
            1 | 2 => partition.winter.push(i),
            3..=5 => partition.spring.push(i),
            6..=8 => partition.summer.push(i),
            9..=11 => partition.fall.push(i),
            _ => partition.unassigned.push(i),
        }
    }
    Ok(partition)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationMetrics {
    pub station_id: String,
    pub gridpoint: usize,
    pub distance_km: f64,
    pub pct_rmse_model: f64,
    pub pct_rmse_corrected: f64,
    pub pct_improvement: f64,
    pub wasserstein_model: f64,
    pub wasserstein_corrected: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationSet {
    pub source: String,
    pub cloud: CorrelationCloud,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumEntry {
    pub station_id: String,
    pub source: String,
    pub season: String,
    /// `(cycles per day, power)`.
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QqEntry {
    pub station_id: String,
    pub source: String,
    pub season: String,
    /// `(source quantile, observation quantile)`.
    pub pairs: Vec<(f64, f64)>,
}

/// The full validation report; serializes to JSON, point sets additionally
/// to CSV via [`write_report_csv`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub stations: Vec<StationMetrics>,
    pub correlation: Vec<CorrelationSet>,
    pub spectra: Vec<SpectrumEntry>,
    pub qq: Vec<QqEntry>,
    pub seasons: SeasonalPartition,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOptions {
    pub max_pairs: usize,
    pub pair_seed: u64,
    pub n_quantiles: usize,
    /// Stations given per-season spectra and QQ sections.
    pub n_detail_stations: usize,
    pub sample_interval_hours: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            max_pairs: 50_000,
            pair_seed: 1,
            n_quantiles: 50,
            n_detail_stations: 5,
            sample_interval_hours: 1.0,
        }
    }
}

fn station_cells(
    field: &GriddedField,
    gridpoint: usize,
    stations: &StationSeries,
    station: usize,
    sample_filter: Option<&[usize]>,
) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
    let (s, t, _) = field.shape();
    let samples: Vec<usize> = match sample_filter {
        Some(list) => list.to_vec(),
        None => (0..s).collect(),
    };
    let mut pred = Vec::with_capacity(samples.len() * t);
    let mut obs = Vec::with_capacity(samples.len() * t);
    let mut mask = Vec::with_capacity(samples.len() * t);
    for &sample in &samples {
        for step in 0..t {
            pred.push(field.values[[sample, step, gridpoint]]);
            obs.push(stations.values[[sample, step, station]]);
            mask.push(stations.mask[[sample, step, station]]);
        }
    }
    (pred, obs, mask)
}

fn masked_values(values: &[f64], mask: &[bool]) -> Vec<f64> {
    values
        .iter()
        .zip(mask)
        .filter_map(|(&v, &m)| m.then_some(v))
        .collect()
}

/// Assemble the full report for a corrected run.
pub fn build_report(
    model: &GriddedField,
    recon: &GriddedField,
    corrected: &GriddedField,
    stations: &StationSeries,
    nearest: &NearestMap,
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    let seasons = seasonal_partition(&model.sample_labels)?;

    let mut station_metrics = Vec::with_capacity(nearest.pairs.len());
    for &(p, g, distance_km) in &nearest.pairs {
        let (model_vals, obs, mask) = station_cells(model, g, stations, p, None);
        let (corr_vals, _, _) = station_cells(corrected, g, stations, p, None);
        if !mask.iter().any(|&m| m) {
            continue;
        }
        let rmse_model = rmse(&model_vals, &obs, Some(&mask))?;
        let rmse_corr = rmse(&corr_vals, &obs, Some(&mask))?;
        let obs_present = masked_values(&obs, &mask);
        let model_present = masked_values(&model_vals, &mask);
        let corr_present = masked_values(&corr_vals, &mask);
        station_metrics.push(StationMetrics {
            station_id: stations.station_ids[p].clone(),
            gridpoint: g,
            distance_km,
            pct_rmse_model: pct_rmse(&model_vals, &obs, Some(&mask))?,
            pct_rmse_corrected: pct_rmse(&corr_vals, &obs, Some(&mask))?,
            pct_improvement: pct_improvement(rmse_model, rmse_corr)?,
            wasserstein_model: wasserstein1(&model_present, &obs_present)?,
            wasserstein_corrected: wasserstein1(&corr_present, &obs_present)?,
        });
    }

    let correlation = vec![
        CorrelationSet {
            source: "model".into(),
            cloud: field_correlation(&[model], opts.max_pairs, opts.pair_seed)?,
        },
        CorrelationSet {
            source: "reconstruction".into(),
            cloud: field_correlation(&[recon], opts.max_pairs, opts.pair_seed)?,
        },
        CorrelationSet {
            source: "corrected".into(),
            cloud: field_correlation(&[corrected], opts.max_pairs, opts.pair_seed)?,
        },
        CorrelationSet {
            source: "stations".into(),
            cloud: station_correlation(stations, opts.max_pairs, opts.pair_seed)?,
        },
    ];

    let t = model.steps_per_sample();
    let mut spectra = Vec::new();
    let mut qq = Vec::new();
    let detail = nearest.pairs.iter().take(opts.n_detail_stations);
    for &(p, g, _) in detail {
        for &season in SEASON_NAMES.iter() {
            let samples = seasons.group(season);
            if samples.is_empty() || samples.len() * t < 8 {
                continue;
            }
            let (model_vals, obs, mask) = station_cells(model, g, stations, p, Some(samples));
            let (corr_vals, _, _) = station_cells(corrected, g, stations, p, Some(samples));
            let (recon_vals, _, _) = station_cells(recon, g, stations, p, Some(samples));
            if !mask.iter().any(|&m| m) {
                continue;
            }
            for (source, series, series_mask) in [
                ("observations", &obs, Some(mask.as_slice())),
                ("model", &model_vals, None),
                ("reconstruction", &recon_vals, None),
                ("corrected", &corr_vals, None),
            ] {
                spectra.push(SpectrumEntry {
                    station_id: stations.station_ids[p].clone(),
                    source: source.into(),
                    season: season.into(),
                    points: power_spectrum(series, series_mask, opts.sample_interval_hours)?,
                });
            }
            let obs_present = masked_values(&obs, &mask);
            for (source, series) in [
                ("model", &model_vals),
                ("reconstruction", &recon_vals),
                ("corrected", &corr_vals),
            ] {
                qq.push(QqEntry {
                    station_id: stations.station_ids[p].clone(),
                    source: source.into(),
                    season: season.into(),
                    pairs: qq_pairs(
                        &masked_values(series, &mask),
                        &obs_present,
                        opts.n_quantiles,
                    )?,
                });
            }
        }
    }

    Ok(EvalReport {
        stations: station_metrics,
        correlation,
        spectra,
        qq,
        seasons,
    })
}

/// Write the report's point sets as plotting-friendly CSV files.
pub fn write_report_csv(report: &EvalReport, dir: &std::path::Path) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir)?;
    let mut stations = String::from(
        "station_id,gridpoint,distance_km,pct_rmse_model,pct_rmse_corrected,pct_improvement,wasserstein_model,wasserstein_corrected\n",
    );
    for m in &report.stations {
        stations.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            m.station_id,
            m.gridpoint,
            m.distance_km,
            m.pct_rmse_model,
            m.pct_rmse_corrected,
            m.pct_improvement,
            m.wasserstein_model,
            m.wasserstein_corrected
        ));
    }
    std::fs::write(dir.join("stations.csv"), stations)?;

    let mut corr = String::from("source,distance_km,pearson_r\n");
    for set in &report.correlation {
        for &(d, r) in &set.cloud.points {
            corr.push_str(&format!("{},{},{}\n", set.source, d, r));
        }
    }
    std::fs::write(dir.join("correlation.csv"), corr)?;

    let mut spec = String::from("station_id,source,season,cycles_per_day,power\n");
    for entry in &report.spectra {
        for &(f, p) in &entry.points {
            spec.push_str(&format!(
                "{},{},{},{},{}\n",
                entry.station_id, entry.source, entry.season, f, p
            ));
        }
    }
    std::fs::write(dir.join("spectra.csv"), spec)?;

    let mut qq = String::from("station_id,source,season,source_quantile,obs_quantile\n");
    for entry in &report.qq {
        for &(a, b) in &entry.pairs {
            qq.push_str(&format!(
                "{},{},{},{},{}\n",
                entry.station_id, entry.source, entry.season, a, b
            ));
        }
    }
    std::fs::write(dir.join("qq.csv"), qq)?;
    Ok(())
}
