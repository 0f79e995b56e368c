//! Path-signature features over hierarchical dyadic time windows.
//!
//! A discrete series is read as a piecewise-linear path; iterated integrals
//! are evaluated in closed form per segment, so depth-1 terms are window
//! displacements and depth-2 terms are the exact signed areas of the
//! interpolant. Paths are first augmented (optional zero basepoint and a
//! normalized time channel), then windowed by recursive halving, and each
//! window contributes signature terms as feature columns.
//!
//! Adjacent windows at a level share their boundary index, so signatures of
//! sibling windows compose to the parent window via Chen's identity — the
//! main correctness oracle for this module.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container;
use crate::data::GriddedField;

#[derive(Debug, Error)]
pub enum SignatureError {
    #[error("unsupported signature depth {0} (expected 1 or 2)")]
    BadDepth(u8),
    #[error("window depth {window_depth} too deep for series of length {series_len}")]
    WindowTooDeep {
        window_depth: usize,
        series_len: usize,
    },
    #[error("empty window [{start}, {end}]")]
    EmptyWindow { start: usize, end: usize },
    #[error("window [{start}, {end}] outside series of length {series_len}")]
    WindowOutOfRange {
        start: usize,
        end: usize,
        series_len: usize,
    },
    #[error("depth-2 requested without a location scope")]
    MissingDepth2Scope,
    #[error("depth-2 location index {index} out of range for {n_locations} locations")]
    Depth2LocationRange { index: usize, n_locations: usize },
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("{0}")]
    Container(#[from] crate::container::ContainerError),
    #[error("shape error: {0}")]
    Shape(String),
}

/// Which locations receive depth-2 terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Depth2Scope {
    All,
    Locations(Vec<usize>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignatureConfig {
    /// 1 or 2.
    pub depth: u8,
    /// Dyadic window depth; level `l` holds `2^(l-1)` windows.
    pub window_depth: usize,
    /// Prepend an all-zero state so the starting position is retained.
    pub basepoint: bool,
    /// Add a leading channel of normalized time in `[0, 1]`.
    pub time_augment: bool,
    /// Locations receiving depth-2 terms; required when `depth == 2`.
    pub depth2_locations: Option<Depth2Scope>,
    /// Keep the time channel's depth-1 displacements as feature columns.
    /// They are constant across samples, so they default to off.
    pub keep_time_features: bool,
}

impl Default for SignatureConfig {
    fn default() -> Self {
        Self {
            depth: 1,
            window_depth: 3,
            basepoint: true,
            time_augment: true,
            depth2_locations: None,
            keep_time_features: false,
        }
    }
}

impl SignatureConfig {
    /// Length of the time axis after augmentation of a `steps`-long series.
    pub fn augmented_len(&self, steps: usize) -> usize {
        steps + self.basepoint as usize
    }

    pub fn validate(&self, steps: usize, n_locations: usize) -> Result<(), SignatureError> {
        if !(self.depth == 1 || self.depth == 2) {
            return Err(SignatureError::BadDepth(self.depth));
        }
        let series_len = self.augmented_len(steps);
        check_window_depth(series_len, self.window_depth)?;
        if self.depth == 2 {
            match &self.depth2_locations {
                None => return Err(SignatureError::MissingDepth2Scope),
                Some(Depth2Scope::Locations(locs)) => {
                    if locs.is_empty() {
                        return Err(SignatureError::MissingDepth2Scope);
                    }
                    for &index in locs {
                        if index >= n_locations {
                            return Err(SignatureError::Depth2LocationRange {
                                index,
                                n_locations,
                            });
                        }
                    }
                }
                Some(Depth2Scope::All) => {}
            }
        }
        Ok(())
    }

    fn depth2_location_list(&self, n_locations: usize) -> Vec<usize> {
        match &self.depth2_locations {
            Some(Depth2Scope::All) => (0..n_locations).collect(),
            Some(Depth2Scope::Locations(locs)) => locs.clone(),
            None => Vec::new(),
        }
    }
}

/// One dyadic window: inclusive index range at a hierarchy level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub level: usize,
    pub start: usize,
    pub end: usize,
}

/// All windows of the hierarchy, level-major, left to right within a level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSet {
    pub windows: Vec<Window>,
    pub series_len: usize,
}

fn check_window_depth(series_len: usize, window_depth: usize) -> Result<(), SignatureError> {
    let min_len = (1usize << (window_depth.saturating_sub(1))) + 1;
    if window_depth < 1 || series_len < min_len {
        return Err(SignatureError::WindowTooDeep {
            window_depth,
            series_len,
        });
    }
    Ok(())
}

/// Recursive halving of `[0, series_len - 1]` down to `window_depth` levels.
/// Midpoints are `floor((start + end) / 2)`, so siblings share exactly their
/// boundary index and the window count is `2^window_depth - 1`.
pub fn dyadic_windows(series_len: usize, window_depth: usize) -> Result<WindowSet, SignatureError> {
    check_window_depth(series_len, window_depth)?;
    let mut windows = vec![Window {
        level: 1,
        start: 0,
        end: series_len - 1,
    }];
    let mut current = windows.clone();
    for level in 2..=window_depth {
        let mut next = Vec::with_capacity(current.len() * 2);
        for w in &current {
            let mid = (w.start + w.end) / 2;
            next.push(Window {
                level,
                start: w.start,
                end: mid,
            });
            next.push(Window {
                level,
                start: mid,
                end: w.end,
            });
        }
        windows.extend_from_slice(&next);
        current = next;
    }
    Ok(WindowSet {
        windows,
        series_len,
    })
}

/// Apply basepoint / time augmentation to a `channels x steps` path.
pub fn augment_path(path: &ArrayView2<f64>, cfg: &SignatureConfig) -> Array2<f64> {
    let (channels, steps) = path.dim();
    let steps_out = cfg.augmented_len(steps);
    let channels_out = channels + cfg.time_augment as usize;
    let mut out = Array2::zeros((channels_out, steps_out));
    let time_rows = cfg.time_augment as usize;
    if cfg.time_augment {
        let denom = (steps_out - 1) as f64;
        for t in 0..steps_out {
            out[[0, t]] = t as f64 / denom;
        }
        if cfg.basepoint {
            // Basepoint state is all-zero in every channel, time included.
            out[[0, 0]] = 0.0;
        }
    }
    let offset = cfg.basepoint as usize;
    for c in 0..channels {
        for t in 0..steps {
            out[[time_rows + c, t + offset]] = path[[c, t]];
        }
    }
    out
}

fn check_window(path_len: usize, start: usize, end: usize) -> Result<(), SignatureError> {
    if start >= end {
        return Err(SignatureError::EmptyWindow { start, end });
    }
    if end >= path_len {
        return Err(SignatureError::WindowOutOfRange {
            start,
            end,
            series_len: path_len,
        });
    }
    Ok(())
}

/// Depth-1 signature over `[start, end]`: per-channel displacement.
pub fn signature_depth1(
    path: &ArrayView2<f64>,
    window: (usize, usize),
) -> Result<Array1<f64>, SignatureError> {
    let (start, end) = window;
    check_window(path.dim().1, start, end)?;
    Ok(&path.column(end) - &path.column(start))
}

/// Depth-2 signature over `[start, end]` of the piecewise-linear path:
/// entry `(i, j)` accumulates, per segment, the area term
/// `cum_i * delta_j + delta_i * delta_j / 2`, where `delta` is the segment
/// increment and `cum` the displacement accumulated before the segment.
/// This is the exact second iterated integral of the interpolant.
pub fn signature_depth2(
    path: &ArrayView2<f64>,
    window: (usize, usize),
) -> Result<Array2<f64>, SignatureError> {
    let (start, end) = window;
    check_window(path.dim().1, start, end)?;
    let channels = path.dim().0;
    let mut sig = Array2::zeros((channels, channels));
    let mut cum = vec![0.0f64; channels];
    let mut delta = vec![0.0f64; channels];
    for t in start..end {
        for (c, d) in delta.iter_mut().enumerate() {
            *d = path[[c, t + 1]] - path[[c, t]];
        }
        for i in 0..channels {
            for j in 0..channels {
                sig[[i, j]] += cum[i] * delta[j] + delta[i] * delta[j] / 2.0;
            }
        }
        for (c, d) in delta.iter().enumerate() {
            cum[c] += d;
        }
    }
    Ok(sig)
}

/// A channel appearing in a feature column descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelId {
    Time,
    Location(usize),
}

/// Provenance of a feature column: window index plus the signature
/// multi-index (one channel for depth-1 terms, two for depth-2 terms).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnDesc {
    pub window: usize,
    pub channels: Vec<ChannelId>,
}

/// Per-sample signature features with column provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    /// `samples x features`.
    pub values: Array2<f64>,
    pub col_desc: Vec<ColumnDesc>,
    pub windows: WindowSet,
}

impl FeatureMatrix {
    pub fn n_samples(&self) -> usize {
        self.values.dim().0
    }

    pub fn n_features(&self) -> usize {
        self.values.dim().1
    }
}

/// Compute the feature matrix of a field under `cfg`.
///
/// Depth-1 columns come first, window-major then channel (time channel, if
/// kept, then locations in grid order). With `depth == 2`, one multichannel
/// path is formed from the configured location subset (plus the time
/// channel) and its depth-2 terms follow, window-major then row-major
/// multi-index. The depth-1 block is therefore a prefix shared with the
/// depth-1-only configuration.
pub fn compute_features(
    field: &GriddedField,
    cfg: &SignatureConfig,
) -> Result<FeatureMatrix, SignatureError> {
    let (n_samples, steps, n_locations) = field.shape();
    cfg.validate(steps, n_locations)?;
    let series_len = cfg.augmented_len(steps);
    let windows = dyadic_windows(series_len, cfg.window_depth)?;

    let keep_time = cfg.time_augment && cfg.keep_time_features;
    let mut col_desc = Vec::new();
    for (w, _) in windows.windows.iter().enumerate() {
        if keep_time {
            col_desc.push(ColumnDesc {
                window: w,
                channels: vec![ChannelId::Time],
            });
        }
        for loc in 0..n_locations {
            col_desc.push(ColumnDesc {
                window: w,
                channels: vec![ChannelId::Location(loc)],
            });
        }
    }
    let depth2_locs = if cfg.depth == 2 {
        cfg.depth2_location_list(n_locations)
    } else {
        Vec::new()
    };
    let depth2_channels: Vec<ChannelId> = if cfg.depth == 2 {
        let mut channels = Vec::new();
        if cfg.time_augment {
            channels.push(ChannelId::Time);
        }
        channels.extend(depth2_locs.iter().map(|&g| ChannelId::Location(g)));
        channels
    } else {
        Vec::new()
    };
    for (w, _) in windows.windows.iter().enumerate() {
        for &c1 in &depth2_channels {
            for &c2 in &depth2_channels {
                col_desc.push(ColumnDesc {
                    window: w,
                    channels: vec![c1, c2],
                });
            }
        }
    }

    let n_features = col_desc.len();
    let mut values = Array2::zeros((n_samples, n_features));
    let offset = cfg.basepoint as usize;
    let time_denom = (series_len - 1) as f64;

    for s in 0..n_samples {
        let mut col = 0;
        // Depth-1 block: displacements of each (augmented) channel, read
        // directly off the series without materializing the path.
        for window in &windows.windows {
            let (a, b) = (window.start, window.end);
            if keep_time {
                values[[s, col]] = (b - a) as f64 / time_denom;
                col += 1;
            }
            for loc in 0..n_locations {
                let at = |t: usize| -> f64 {
                    if cfg.basepoint && t == 0 {
                        0.0
                    } else {
                        field.values[[s, t - offset, loc]]
                    }
                };
                values[[s, col]] = at(b) - at(a);
                col += 1;
            }
        }
        if cfg.depth == 2 {
            let mut subset = Array2::zeros((depth2_locs.len(), steps));
            for (row, &g) in depth2_locs.iter().enumerate() {
                for t in 0..steps {
                    subset[[row, t]] = field.values[[s, t, g]];
                }
            }
            let path = augment_path(&subset.view(), cfg);
            for window in &windows.windows {
                let sig = signature_depth2(&path.view(), (window.start, window.end))?;
                for v in sig.iter() {
                    values[[s, col]] = *v;
                    col += 1;
                }
            }
        }
        debug_assert_eq!(col, n_features);
    }

    Ok(FeatureMatrix {
        values,
        col_desc,
        windows,
    })
}

/// Per-column sample standard deviation across samples (denominator
/// `S - 1`), keyed by column provenance.
#[derive(Debug, Clone)]
pub struct FluctuationTable {
    pub entries: Vec<(ColumnDesc, f64)>,
}

pub fn signature_fluctuations(
    features: &FeatureMatrix,
) -> Result<FluctuationTable, SignatureError> {
    let n = features.n_samples();
    if n < 2 {
        return Err(SignatureError::TooFewSamples(n));
    }
    let entries = features
        .col_desc
        .iter()
        .enumerate()
        .map(|(c, desc)| {
            let col = features.values.index_axis(Axis(1), c);
            let mean = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (desc.clone(), var.sqrt())
        })
        .collect();
    Ok(FluctuationTable { entries })
}

#[derive(Serialize, Deserialize)]
struct FeatureManifest {
    schema_version: u32,
    kind: String,
    shape: [usize; 2],
    windows: WindowSet,
    col_desc: Vec<ColumnDesc>,
    byte_order: String,
    dtype: String,
}

impl FeatureMatrix {
    pub fn save(&self, dir: &std::path::Path) -> Result<(), SignatureError> {
        let (s, f) = self.values.dim();
        let manifest = FeatureManifest {
            schema_version: 1,
            kind: "feature_matrix".into(),
            shape: [s, f],
            windows: self.windows.clone(),
            col_desc: self.col_desc.clone(),
            byte_order: "LE".into(),
            dtype: "f64".into(),
        };
        container::save_manifest(dir, &manifest)?;
        container::save_blob(dir, self.values.as_slice().expect("standard layout"))?;
        Ok(())
    }

    pub fn load(dir: &std::path::Path) -> Result<FeatureMatrix, SignatureError> {
        let manifest: FeatureManifest = container::load_manifest(dir)?;
        let [s, f] = manifest.shape;
        let values = container::load_blob(dir, s * f)?;
        let values =
            Array2::from_shape_vec((s, f), values).map_err(|e| SignatureError::Shape(e.to_string()))?;
        if manifest.col_desc.len() != f {
            return Err(SignatureError::Shape(format!(
                "{} column descriptors for {f} columns",
                manifest.col_desc.len()
            )));
        }
        Ok(FeatureMatrix {
            values,
            col_desc: manifest.col_desc,
            windows: manifest.windows,
        })
    }
}
