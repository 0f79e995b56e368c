//! PCA over signature features with variance-targeted truncation, the EOF
//! baseline over raw space-time fields, and contributing-location ranking.
//!
//! Fitting runs a thin SVD of the column-centered data matrix rather than an
//! eigendecomposition of the covariance; eigenvalues are `singular^2 / (S-1)`.
//! Columns are centered but not standardized by default (signature features
//! of one variable share a scale); a standardization flag is available.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container;
use crate::data::{flatten_space_time, GriddedField};
use crate::signatures::{ChannelId, ColumnDesc, FeatureMatrix};

#[derive(Debug, Error)]
pub enum ReductionError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("variance target must lie in (0, 1], got {0}")]
    BadTarget(f64),
    #[error("all columns constant: zero total variance")]
    ZeroVariance,
    #[error("dimension mismatch: model expects {expected} columns, got {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("location count m={m} out of range 1..={max}")]
    BadLocationCount { m: usize, max: usize },
    #[error("{0}")]
    Container(#[from] crate::container::ContainerError),
    #[error("shape error: {0}")]
    Shape(String),
}

/// Loadings and spectrum of a fitted, truncated PCA.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    /// Column means of the training matrix, length `F`.
    pub mean: Array1<f64>,
    /// Per-column standard deviations if standardization was requested.
    pub scale: Option<Array1<f64>>,
    /// Orthonormal loading columns, `F x k`.
    pub loadings: Array2<f64>,
    /// Retained eigenvalues of the sample covariance, descending, length `k`.
    pub eigenvalues: Array1<f64>,
    /// Share of total variance per retained component, length `k`.
    pub explained_variance_ratio: Array1<f64>,
    /// Full eigenvalue spectrum (all `min(S, F)` values, descending).
    pub spectrum: Array1<f64>,
    pub variance_target: f64,
    pub total_variance: f64,
}

impl PcaModel {
    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// Fit a PCA on `x` (rows = samples), retaining the smallest component
/// count whose cumulative explained-variance ratio reaches `variance_target`.
///
/// Sign convention: each loading column is flipped so its largest-magnitude
/// entry is positive.
pub fn pca_fit_matrix(
    x: &ArrayView2<f64>,
    variance_target: f64,
    standardize: bool,
) -> Result<PcaModel, ReductionError> {
    let (s, f) = x.dim();
    if s < 2 {
        return Err(ReductionError::TooFewSamples(s));
    }
    if !(variance_target > 0.0 && variance_target <= 1.0) {
        return Err(ReductionError::BadTarget(variance_target));
    }
    let mean = x.mean_axis(Axis(0)).expect("s >= 2");
    let mut centered = x.to_owned();
    for mut row in centered.rows_mut() {
        row -= &mean;
    }
    let scale = if standardize {
        let denom = (s - 1) as f64;
        let sd = centered
            .axis_iter(Axis(1))
            .map(|col| (col.iter().map(|v| v * v).sum::<f64>() / denom).sqrt())
            .collect::<Array1<f64>>();
        for (mut col, &sd) in centered.axis_iter_mut(Axis(1)).zip(sd.iter()) {
            if sd > 0.0 {
                col.mapv_inplace(|v| v / sd);
            }
        }
        Some(sd)
    } else {
        None
    };

    let dm = nalgebra::DMatrix::from_row_iterator(s, f, centered.iter().copied());
    let svd = dm.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let rank_bound = s.min(f);

    // Descending order of singular values (nalgebra sorts, asserted here).
    let sigma: Vec<f64> = svd.singular_values.iter().copied().collect();
    for pair in sigma.windows(2) {
        debug_assert!(pair[0] >= pair[1]);
    }

    let denom = (s - 1) as f64;
    let spectrum: Array1<f64> = sigma.iter().map(|&sv| sv * sv / denom).collect();
    let total_variance: f64 = spectrum.sum();
    if total_variance <= 0.0 {
        return Err(ReductionError::ZeroVariance);
    }

    // Smallest k whose cumulative share reaches the target; the tiny slack
    // absorbs rounding when the target is exactly reachable.
    let mut k = rank_bound;
    let mut cum = 0.0;
    for (i, &ev) in spectrum.iter().enumerate() {
        cum += ev;
        if cum / total_variance >= variance_target - 1e-12 {
            k = i + 1;
            break;
        }
    }

    let mut loadings = Array2::zeros((f, k));
    for c in 0..k {
        for r in 0..f {
            loadings[[r, c]] = v_t[(c, r)];
        }
    }
    for c in 0..k {
        let mut best = (0usize, 0.0f64);
        for r in 0..f {
            let mag = loadings[[r, c]].abs();
            if mag > best.1 {
                best = (r, mag);
            }
        }
        if loadings[[best.0, c]] < 0.0 {
            for r in 0..f {
                loadings[[r, c]] = -loadings[[r, c]];
            }
        }
    }

    let eigenvalues = spectrum.slice(ndarray::s![..k]).to_owned();
    let explained_variance_ratio = eigenvalues.mapv(|ev| ev / total_variance);
    Ok(PcaModel {
        mean,
        scale,
        loadings,
        eigenvalues,
        explained_variance_ratio,
        spectrum,
        variance_target,
        total_variance,
    })
}

/// [`pca_fit_matrix`] over a signature feature matrix, centering only.
pub fn pca_fit(features: &FeatureMatrix, variance_target: f64) -> Result<PcaModel, ReductionError> {
    pca_fit_matrix(&features.values.view(), variance_target, false)
}

/// Project rows onto the retained components: `(x - mean) . loadings`.
pub fn pca_transform(model: &PcaModel, x: &ArrayView2<f64>) -> Result<Array2<f64>, ReductionError> {
    let (_, f) = x.dim();
    if f != model.n_features() {
        return Err(ReductionError::DimMismatch {
            expected: model.n_features(),
            found: f,
        });
    }
    let mut centered = x.to_owned();
    for mut row in centered.rows_mut() {
        row -= &model.mean;
    }
    if let Some(scale) = &model.scale {
        for (mut col, &sd) in centered.axis_iter_mut(Axis(1)).zip(scale.iter()) {
            if sd > 0.0 {
                col.mapv_inplace(|v| v / sd);
            }
        }
    }
    Ok(centered.dot(&model.loadings))
}

/// Map component scores back to feature space.
pub fn pca_inverse_transform(
    model: &PcaModel,
    scores: &ArrayView2<f64>,
) -> Result<Array2<f64>, ReductionError> {
    if scores.dim().1 != model.n_components() {
        return Err(ReductionError::DimMismatch {
            expected: model.n_components(),
            found: scores.dim().1,
        });
    }
    let mut x = scores.dot(&model.loadings.t());
    if let Some(scale) = &model.scale {
        for (mut col, &sd) in x.axis_iter_mut(Axis(1)).zip(scale.iter()) {
            if sd > 0.0 {
                col.mapv_inplace(|v| v * sd);
            }
        }
    }
    for mut row in x.rows_mut() {
        row += &model.mean;
    }
    Ok(x)
}

/// Locations ranked by their variance-weighted squared loadings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationRanking {
    /// Score per location, `>= 0`.
    pub scores: Vec<f64>,
    /// All locations, descending score, ties by index.
    pub order: Vec<usize>,
    /// The top `m` of `order`.
    pub selected: Vec<usize>,
}

/// Rank locations by `sum_c evr_c * sum_{cols of location} loading^2`,
/// where a column belongs to every location named in its descriptor.
pub fn top_locations(
    model: &PcaModel,
    col_desc: &[ColumnDesc],
    m: usize,
) -> Result<LocationRanking, ReductionError> {
    if col_desc.len() != model.n_features() {
        return Err(ReductionError::DimMismatch {
            expected: model.n_features(),
            found: col_desc.len(),
        });
    }
    let n_locations = col_desc
        .iter()
        .flat_map(|d| d.channels.iter())
        .filter_map(|c| match c {
            ChannelId::Location(g) => Some(g + 1),
            ChannelId::Time => None,
        })
        .max()
        .unwrap_or(0);
    if m == 0 || m > n_locations {
        return Err(ReductionError::BadLocationCount {
            m,
            max: n_locations,
        });
    }
    let mut scores = vec![0.0f64; n_locations];
    for (col, desc) in col_desc.iter().enumerate() {
        let mut locations: Vec<usize> = desc
            .channels
            .iter()
            .filter_map(|c| match c {
                ChannelId::Location(g) => Some(*g),
                ChannelId::Time => None,
            })
            .collect();
        locations.dedup();
        if locations.is_empty() {
            continue;
        }
        let mut weight = 0.0;
        for c in 0..model.n_components() {
            let l = model.loadings[[col, c]];
            weight += model.explained_variance_ratio[c] * l * l;
        }
        for g in locations {
            scores[g] += weight;
        }
    }
    let mut order: Vec<usize> = (0..n_locations).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let selected = order[..m].to_vec();
    Ok(LocationRanking {
        scores,
        order,
        selected,
    })
}

/// EOF baseline: PCA of the `[S][T*D]` flattening of a field.
#[derive(Debug, Clone, PartialEq)]
pub struct EofModel {
    pub pca: PcaModel,
    pub steps_per_sample: usize,
    pub n_locations: usize,
}

pub fn eof_fit(field: &GriddedField, variance_target: f64) -> Result<EofModel, ReductionError> {
    let (_, t, d) = field.shape();
    let flat = flatten_space_time(field);
    let pca = pca_fit_matrix(&flat, variance_target, false)?;
    Ok(EofModel {
        pca,
        steps_per_sample: t,
        n_locations: d,
    })
}

pub fn eof_transform(model: &EofModel, field: &GriddedField) -> Result<Array2<f64>, ReductionError> {
    let flat = flatten_space_time(field);
    pca_transform(&model.pca, &flat)
}

#[derive(Serialize, Deserialize)]
struct PcaManifest {
    schema_version: u32,
    kind: String,
    n_features: usize,
    n_components: usize,
    spectrum_len: usize,
    standardized: bool,
    variance_target: f64,
    total_variance: f64,
    // EOF-only dims; zero for plain PCA artifacts.
    steps_per_sample: usize,
    n_locations: usize,
    byte_order: String,
    dtype: String,
}

fn pca_blob(model: &PcaModel) -> Vec<f64> {
    let mut blob = Vec::new();
    blob.extend(model.mean.iter());
    if let Some(scale) = &model.scale {
        blob.extend(scale.iter());
    }
    blob.extend(model.loadings.iter());
    blob.extend(model.eigenvalues.iter());
    blob.extend(model.explained_variance_ratio.iter());
    blob.extend(model.spectrum.iter());
    blob
}

fn pca_from_blob(manifest: &PcaManifest, blob: &[f64]) -> Result<PcaModel, ReductionError> {
    let (f, k, r) = (
        manifest.n_features,
        manifest.n_components,
        manifest.spectrum_len,
    );
    let mut at = 0usize;
    let mut take = |n: usize| -> Result<Vec<f64>, ReductionError> {
        if at + n > blob.len() {
            return Err(ReductionError::Shape("blob too short".into()));
        }
        let out = blob[at..at + n].to_vec();
        at += n;
        Ok(out)
    };
    let mean = Array1::from_vec(take(f)?);
    let scale = if manifest.standardized {
        Some(Array1::from_vec(take(f)?))
    } else {
        None
    };
    let loadings = Array2::from_shape_vec((f, k), take(f * k)?)
        .map_err(|e| ReductionError::Shape(e.to_string()))?;
    let eigenvalues = Array1::from_vec(take(k)?);
    let explained_variance_ratio = Array1::from_vec(take(k)?);
    let spectrum = Array1::from_vec(take(r)?);
    Ok(PcaModel {
        mean,
        scale,
        loadings,
        eigenvalues,
        explained_variance_ratio,
        spectrum,
        variance_target: manifest.variance_target,
        total_variance: manifest.total_variance,
    })
}

impl PcaModel {
    pub fn save(&self, dir: &std::path::Path) -> Result<(), ReductionError> {
        let manifest = PcaManifest {
            schema_version: 1,
            kind: "pca_model".into(),
            n_features: self.n_features(),
            n_components: self.n_components(),
            spectrum_len: self.spectrum.len(),
            standardized: self.scale.is_some(),
            variance_target: self.variance_target,
            total_variance: self.total_variance,
            steps_per_sample: 0,
            n_locations: 0,
            byte_order: "LE".into(),
            dtype: "f64".into(),
        };
        container::save_manifest(dir, &manifest)?;
        container::save_blob(dir, &pca_blob(self))?;
        Ok(())
    }

    pub fn load(dir: &std::path::Path) -> Result<PcaModel, ReductionError> {
        let manifest: PcaManifest = container::load_manifest(dir)?;
        let len = blob_len(&manifest);
        let blob = container::load_blob(dir, len)?;
        pca_from_blob(&manifest, &blob)
    }
}

fn blob_len(manifest: &PcaManifest) -> usize {
    let f = manifest.n_features;
    let k = manifest.n_components;
    f * (1 + manifest.standardized as usize) + f * k + 2 * k + manifest.spectrum_len
}

impl EofModel {
    pub fn save(&self, dir: &std::path::Path) -> Result<(), ReductionError> {
        let manifest = PcaManifest {
            schema_version: 1,
            kind: "eof_model".into(),
            n_features: self.pca.n_features(),
            n_components: self.pca.n_components(),
            spectrum_len: self.pca.spectrum.len(),
            standardized: self.pca.scale.is_some(),
            variance_target: self.pca.variance_target,
            total_variance: self.pca.total_variance,
            steps_per_sample: self.steps_per_sample,
            n_locations: self.n_locations,
            byte_order: "LE".into(),
            dtype: "f64".into(),
        };
        container::save_manifest(dir, &manifest)?;
        container::save_blob(dir, &pca_blob(&self.pca))?;
        Ok(())
    }

    pub fn load(dir: &std::path::Path) -> Result<EofModel, ReductionError> {
        let manifest: PcaManifest = container::load_manifest(dir)?;
        let blob = container::load_blob(dir, blob_len(&manifest))?;
        let pca = pca_from_blob(&manifest, &blob)?;
        Ok(EofModel {
            pca,
            steps_per_sample: manifest.steps_per_sample,
            n_locations: manifest.n_locations,
        })
    }
}
