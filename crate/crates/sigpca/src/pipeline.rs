//! End-to-end reconstruction and correction: summary statistics in, trained
//! networks and corrected fields out.
//!
//! The flow per the method: compute reduced summary statistics of the model
//! field (signature-PCA or the EOF baseline), train a reconstruction network
//! on a small gridpoint subset, predict the full grid, learn station-based
//! corrections as observation-minus-reconstruction residuals, predict those
//! corrections everywhere, and add them to the reconstruction.
//!
//! Network inputs are always the concatenation
//! `[reduced features of the sample] ++ [lat, lon] ++ [Wendland basis row]`
//! (the basis block only for deep-kriging variants); coordinates are min-max
//! scaled over the model bounding box and reduced features are z-scored,
//! with the scaling stored in the network bundle.

use ndarray::{Array2, Array3, ArrayView2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{nearest_gridpoints, DataError, GriddedField, NearestMap, StationSeries};
use crate::neuralnet::{
    mlp_init, mlp_train, MlpSpec, NetError, NetworkBundle, OutputActivation, Standardizer,
    TrainConfig, TrainTrace,
};
use crate::reduction::{
    eof_fit, eof_transform, pca_fit, pca_transform, top_locations, EofModel, LocationRanking,
    PcaModel, ReductionError,
};
use crate::signatures::{
    compute_features, Depth2Scope, FeatureMatrix, SignatureConfig, SignatureError,
};
use crate::spatialbasis::{basis_matrix, build_basis, BasisError, KrigingBasis};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("data: {0}")]
    Data(#[from] DataError),
    #[error("signatures: {0}")]
    Signature(#[from] SignatureError),
    #[error("reduction: {0}")]
    Reduction(#[from] ReductionError),
    #[error("basis: {0}")]
    Basis(#[from] BasisError),
    #[error("network: {0}")]
    Net(#[from] NetError),
    #[error("config: {0}")]
    Config(String),
    #[error("empty training subset (x_percent {0} of {1} gridpoints rounds to zero)")]
    EmptySubset(f64, usize),
}

/// The method variants compared in the study: reconstruction + correction
/// on three kinds of summary statistics, and direct observation prediction
/// with or without deep-kriging inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    SigpcaDk,
    Sigpca2Dk,
    EofDk,
    DirectObsSigpca,
    DirectObsSigpcaDk,
}

impl Variant {
    pub fn uses_deep_kriging(&self) -> bool {
        !matches!(self, Variant::DirectObsSigpca)
    }

    pub fn uses_depth2(&self) -> bool {
        matches!(self, Variant::Sigpca2Dk)
    }

    pub fn uses_eof(&self) -> bool {
        matches!(self, Variant::EofDk)
    }

    pub fn is_direct(&self) -> bool {
        matches!(self, Variant::DirectObsSigpca | Variant::DirectObsSigpcaDk)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Variant::SigpcaDk => "sigpca_dk",
            Variant::Sigpca2Dk => "sigpca2_dk",
            Variant::EofDk => "eof_dk",
            Variant::DirectObsSigpca => "direct_obs_sigpca",
            Variant::DirectObsSigpcaDk => "direct_obs_sigpca_dk",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sigpca_dk" => Ok(Variant::SigpcaDk),
            "sigpca2_dk" => Ok(Variant::Sigpca2Dk),
            "eof_dk" => Ok(Variant::EofDk),
            "direct_obs_sigpca" => Ok(Variant::DirectObsSigpca),
            "direct_obs_sigpca_dk" => Ok(Variant::DirectObsSigpcaDk),
            other => Err(format!(
                "unknown variant '{other}' (expected one of sigpca_dk, sigpca2_dk, eof_dk, direct_obs_sigpca, direct_obs_sigpca_dk)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub subset: u64,
    pub recon_init: u64,
    pub corrective_init: u64,
    pub shuffle: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            subset: 101,
            recon_init: 202,
            corrective_init: 303,
            shuffle: 404,
        }
    }
}

/// Architecture and optimization settings of one network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetConfig {
    pub hidden_widths: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub output_activation: OutputActivation,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden_widths: vec![512, 256, 128, 64, 32, 16],
            epochs: 500,
            learning_rate: 0.01,
            batch_size: 256,
            output_activation: OutputActivation::Identity,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BasisConfig {
    pub base_knots_per_axis: usize,
    pub n_resolutions: usize,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            base_knots_per_axis: 5,
            n_resolutions: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub variant: Variant,
    pub signature: SignatureConfig,
    pub variance_target: f64,
    /// Percentage of gridpoints used to train the reconstruction.
    pub x_percent: f64,
    pub seeds: Seeds,
    pub recon_net: NetConfig,
    pub corrective_net: NetConfig,
    pub basis: BasisConfig,
    /// Stations missing more than this fraction are excluded from
    /// corrective training.
    pub station_missing_threshold: f64,
    /// Depth-2 terms are computed on this many top-ranked locations.
    pub depth2_top_m: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            variant: Variant::SigpcaDk,
            signature: SignatureConfig::default(),
            variance_target: 0.995,
            x_percent: 4.0,
            seeds: Seeds::default(),
            recon_net: NetConfig::default(),
            corrective_net: NetConfig::default(),
            basis: BasisConfig::default(),
            station_missing_threshold: 0.5,
            depth2_top_m: 20,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.x_percent > 0.0 && self.x_percent <= 100.0) {
            return Err(PipelineError::Config(format!(
                "x_percent must lie in (0, 100], got {}",
                self.x_percent
            )));
        }
        if !(self.variance_target > 0.0 && self.variance_target <= 1.0) {
            return Err(PipelineError::Config(format!(
                "variance_target must lie in (0, 1], got {}",
                self.variance_target
            )));
        }
        if self.depth2_top_m == 0 {
            return Err(PipelineError::Config("depth2_top_m must be >= 1".into()));
        }
        Ok(())
    }
}

/// Round half to even, the convention used for the subset count.
fn round_half_even(v: f64) -> usize {
    let floor = v.floor();
    if v - floor == 0.5 {
        let f = floor as u64;
        (if f % 2 == 0 { f } else { f + 1 }) as usize
    } else {
        v.round() as usize
    }
}

/// Seeded uniform sample without replacement of `round(D * x / 100)`
/// gridpoints, sorted ascending.
pub fn select_training_gridpoints(
    n_locations: usize,
    x_percent: f64,
    seed: u64,
) -> Result<Vec<usize>, PipelineError> {
    let count = round_half_even(n_locations as f64 * x_percent / 100.0);
    if count == 0 {
        return Err(PipelineError::EmptySubset(x_percent, n_locations));
    }
    let count = count.min(n_locations);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut subset = rand::seq::index::sample(&mut rng, n_locations, count).into_vec();
    subset.sort_unstable();
    Ok(subset)
}

/// Signature features for the configured variant; `None` for the EOF
/// variant. Depth-2 variants first rank locations with a depth-1 fit and
/// then recompute features with depth-2 terms on the top `depth2_top_m`.
pub fn build_variant_features(
    cfg: &PipelineConfig,
    field: &GriddedField,
) -> Result<(Option<FeatureMatrix>, Option<LocationRanking>), PipelineError> {
    if cfg.variant.uses_eof() {
        return Ok((None, None));
    }
    let depth1_cfg = SignatureConfig {
        depth: 1,
        depth2_locations: None,
        ..cfg.signature.clone()
    };
    if !cfg.variant.uses_depth2() {
        let features = compute_features(field, &depth1_cfg)?;
        return Ok((Some(features), None));
    }
    let preliminary = compute_features(field, &depth1_cfg)?;
    let model = pca_fit(&preliminary, cfg.variance_target)?;
    let m = cfg.depth2_top_m.min(field.n_locations());
    let ranking = top_locations(&model, &preliminary.col_desc, m)?;
    let depth2_cfg = SignatureConfig {
        depth: 2,
        depth2_locations: Some(Depth2Scope::Locations(ranking.selected.clone())),
        ..cfg.signature.clone()
    };
    let features = compute_features(field, &depth2_cfg)?;
    Ok((Some(features), Some(ranking)))
}

/// Fitted summary-statistic reduction: signature-PCA or EOF.
#[derive(Debug, Clone)]
pub enum ReductionModel {
    Pca(PcaModel),
    Eof(EofModel),
}

impl ReductionModel {
    pub fn n_components(&self) -> usize {
        match self {
            ReductionModel::Pca(m) => m.n_components(),
            ReductionModel::Eof(m) => m.pca.n_components(),
        }
    }
}

/// Fit the variant's reduction and return the per-sample scores.
pub fn fit_reduction(
    cfg: &PipelineConfig,
    field: &GriddedField,
    features: Option<&FeatureMatrix>,
) -> Result<(ReductionModel, Array2<f64>), PipelineError> {
    if cfg.variant.uses_eof() {
        let model = eof_fit(field, cfg.variance_target)?;
        let scores = eof_transform(&model, field)?;
        Ok((ReductionModel::Eof(model), scores))
    } else {
        let features = features.ok_or_else(|| {
            PipelineError::Config("signature variant requires a feature matrix".into())
        })?;
        let model = pca_fit(features, cfg.variance_target)?;
        let scores = pca_transform(&model, &features.values.view())?;
        Ok((ReductionModel::Pca(model), scores))
    }
}

/// Build the deep-kriging basis over the field's bounding box when the
/// variant uses one.
pub fn build_variant_basis(
    cfg: &PipelineConfig,
    field: &GriddedField,
) -> Result<Option<KrigingBasis>, PipelineError> {
    if !cfg.variant.uses_deep_kriging() {
        return Ok(None);
    }
    let basis = build_basis(
        field.bbox(),
        cfg.basis.base_knots_per_axis,
        cfg.basis.n_resolutions,
    )?;
    Ok(Some(basis))
}

/// Spatial encoding shared by every network: raw `lat, lon` columns plus
/// the Wendland basis row when deep kriging is on. Standardization happens
/// inside the network bundle.
struct SpatialEncoder<'a> {
    basis: Option<&'a KrigingBasis>,
}

impl SpatialEncoder<'_> {
    fn dim(&self) -> usize {
        2 + self.basis.map_or(0, |b| b.total_count())
    }

    fn encode(&self, coords: &[(f64, f64)]) -> Array2<f64> {
        let mut out = Array2::zeros((coords.len(), self.dim()));
        for (r, &(lat, lon)) in coords.iter().enumerate() {
            out[[r, 0]] = lat;
            out[[r, 1]] = lon;
        }
        if let Some(basis) = self.basis {
            let bm = basis_matrix(coords, basis);
            out.slice_mut(ndarray::s![.., 2..]).assign(&bm);
        }
        out
    }
}

/// Training rows sample-major: row `(s, p)` is
/// `reduced[s] ++ spatial[p]`.
fn assemble_rows(reduced: &ArrayView2<f64>, spatial: &ArrayView2<f64>) -> Array2<f64> {
    let (s, k) = reduced.dim();
    let (p, e) = spatial.dim();
    let mut out = Array2::zeros((s * p, k + e));
    for sample in 0..s {
        for point in 0..p {
            let row = sample * p + point;
            for c in 0..k {
                out[[row, c]] = reduced[[sample, c]];
            }
            for c in 0..e {
                out[[row, k + c]] = spatial[[point, c]];
            }
        }
    }
    out
}

/// Standardizer over the concatenated input: z-score for the reduced block
/// (fit per sample), min-max over the bounding box for `lat, lon`, identity
/// for the basis block whose values already live in `[0, 1]`.
fn build_standardizer(
    reduced: &ArrayView2<f64>,
    bbox: (f64, f64, f64, f64),
    basis_dim: usize,
) -> Standardizer {
    let k = reduced.dim().1;
    let feature_part = Standardizer::fit_zscore(reduced);
    let mut shift = Vec::with_capacity(k + 2 + basis_dim);
    let mut scale = Vec::with_capacity(k + 2 + basis_dim);
    shift.extend(feature_part.shift.iter());
    scale.extend(feature_part.scale.iter());
    let (lat_min, lat_max, lon_min, lon_max) = bbox;
    shift.push(lat_min);
    scale.push(if lat_max > lat_min { lat_max - lat_min } else { 1.0 });
    shift.push(lon_min);
    scale.push(if lon_max > lon_min { lon_max - lon_min } else { 1.0 });
    shift.extend(std::iter::repeat_n(0.0, basis_dim));
    scale.extend(std::iter::repeat_n(1.0, basis_dim));
    Standardizer {
        shift: shift.into(),
        scale: scale.into(),
    }
}

fn train_network(
    reduced: &ArrayView2<f64>,
    point_coords: &[(f64, f64)],
    targets: &Array2<f64>,
    mask: Option<&Array2<bool>>,
    bbox: (f64, f64, f64, f64),
    basis: Option<&KrigingBasis>,
    output_dim: usize,
    net: &NetConfig,
    init_seed: u64,
    shuffle_seed: u64,
) -> Result<(NetworkBundle, TrainTrace), PipelineError> {
    let encoder = SpatialEncoder { basis };
    let spatial = encoder.encode(point_coords);
    let rows = assemble_rows(reduced, &spatial.view());
    let standardizer = build_standardizer(reduced, bbox, encoder.dim() - 2);
    let z = standardizer.apply(&rows.view());
    let spec = MlpSpec {
        input_dim: z.dim().1,
        hidden_widths: net.hidden_widths.clone(),
        output_dim,
        batch_norm: vec![true; net.hidden_widths.len()],
        output_activation: net.output_activation,
        seed: init_seed,
    };
    let mut model = mlp_init(&spec)?;
    let cfg = TrainConfig {
        epochs: net.epochs,
        learning_rate: net.learning_rate,
        batch_size: net.batch_size,
        shuffle_seed,
    };
    let trace = mlp_train(
        &mut model,
        &z.view(),
        &targets.view(),
        mask.map(|m| m.view()).as_ref(),
        &cfg,
    )?;
    Ok((NetworkBundle {
        model,
        standardizer,
    }, trace))
}

fn predict_rows(
    bundle: &NetworkBundle,
    reduced: &ArrayView2<f64>,
    point_coords: &[(f64, f64)],
    basis: Option<&KrigingBasis>,
) -> Result<Array2<f64>, PipelineError> {
    let encoder = SpatialEncoder { basis };
    let spatial = encoder.encode(point_coords);
    let rows = assemble_rows(reduced, &spatial.view());
    Ok(bundle.predict(&rows.view())?)
}

/// Train the reconstruction network: one row per `(sample, subset
/// gridpoint)`, target = that gridpoint's full series (output dim `T_w`).
pub fn train_reconstruction(
    reduced: &ArrayView2<f64>,
    field: &GriddedField,
    subset: &[usize],
    basis: Option<&KrigingBasis>,
    net: &NetConfig,
    init_seed: u64,
    shuffle_seed: u64,
) -> Result<(NetworkBundle, TrainTrace), PipelineError> {
    if subset.is_empty() {
        return Err(PipelineError::EmptySubset(0.0, field.n_locations()));
    }
    let (s, t, _) = field.shape();
    let coords: Vec<(f64, f64)> = subset.iter().map(|&g| field.coords[g]).collect();
    let mut targets = Array2::zeros((s * subset.len(), t));
    for sample in 0..s {
        for (i, &g) in subset.iter().enumerate() {
            for step in 0..t {
                targets[[sample * subset.len() + i, step]] = field.values[[sample, step, g]];
            }
        }
    }
    train_network(
        reduced,
        &coords,
        &targets,
        None,
        field.bbox(),
        basis,
        t,
        net,
        init_seed,
        shuffle_seed,
    )
}

/// Predict the full grid from the reconstruction network, one sample at a
/// time, and assemble a field shaped like `template`.
pub fn reconstruct_full(
    bundle: &NetworkBundle,
    reduced: &ArrayView2<f64>,
    template: &GriddedField,
    basis: Option<&KrigingBasis>,
) -> Result<GriddedField, PipelineError> {
    let (s, t, d) = template.shape();
    let mut values = Array3::zeros((s, t, d));
    for sample in 0..s {
        let one = reduced.slice(ndarray::s![sample..sample + 1, ..]);
        let pred = predict_rows(bundle, &one, &template.coords, basis)?;
        for g in 0..d {
            for step in 0..t {
                values[[sample, step, g]] = pred[[g, step]];
            }
        }
    }
    Ok(GriddedField::new(
        values,
        template.coords.clone(),
        template.sample_labels.clone(),
        template.variable_name.clone(),
        template.units.clone(),
    )?)
}

/// Correction targets: observation minus the reconstruction at the
/// station's nearest gridpoint, masked where the observation is missing.
pub fn compute_corrections(
    stations: &StationSeries,
    recon: &GriddedField,
    nearest: &NearestMap,
) -> (Array3<f64>, Array3<bool>) {
    let (s, t, p) = stations.values.dim();
    let mut targets = Array3::zeros((s, t, p));
    let mut mask = Array3::from_elem((s, t, p), false);
    for &(station, gridpoint, _) in &nearest.pairs {
        for sample in 0..s {
            for step in 0..t {
                if stations.mask[[sample, step, station]] {
                    targets[[sample, step, station]] = stations.values
                        [[sample, step, station]]
                        - recon.values[[sample, step, gridpoint]];
                    mask[[sample, step, station]] = true;
                }
            }
        }
    }
    (targets, mask)
}

/// Train the corrective network on `(sample, station)` rows; masked target
/// entries are excluded from the loss.
pub fn train_corrective(
    reduced: &ArrayView2<f64>,
    targets: &Array3<f64>,
    target_mask: &Array3<bool>,
    station_coords: &[(f64, f64)],
    bbox: (f64, f64, f64, f64),
    basis: Option<&KrigingBasis>,
    net: &NetConfig,
    init_seed: u64,
    shuffle_seed: u64,
) -> Result<(NetworkBundle, TrainTrace), PipelineError> {
    let (s, t, p) = targets.dim();
    let mut y = Array2::zeros((s * p, t));
    let mut mask = Array2::from_elem((s * p, t), false);
    for sample in 0..s {
        for station in 0..p {
            for step in 0..t {
                y[[sample * p + station, step]] = targets[[sample, step, station]];
                mask[[sample * p + station, step]] = target_mask[[sample, step, station]];
            }
        }
    }
    train_network(
        reduced,
        station_coords,
        &y,
        Some(&mask),
        bbox,
        basis,
        t,
        net,
        init_seed,
        shuffle_seed,
    )
}

/// Everything a corrected run produces.
#[derive(Debug, Clone)]
pub struct CorrectionResult {
    pub recon_field: GriddedField,
    /// Predicted corrections on the model grid.
    pub corrections: GriddedField,
    /// `recon + corrections`, elementwise.
    pub corrected_field: GriddedField,
    pub nearest: NearestMap,
    pub training_subset: Vec<usize>,
}

/// Predict corrections at every gridpoint and add them to the
/// reconstruction.
pub fn apply_corrections(
    recon: &GriddedField,
    corrective: &NetworkBundle,
    reduced: &ArrayView2<f64>,
    basis: Option<&KrigingBasis>,
    nearest: NearestMap,
    training_subset: Vec<usize>,
) -> Result<CorrectionResult, PipelineError> {
    let (s, t, d) = recon.shape();
    let mut corr_values = Array3::zeros((s, t, d));
    for sample in 0..s {
        let one = reduced.slice(ndarray::s![sample..sample + 1, ..]);
        let pred = predict_rows(corrective, &one, &recon.coords, basis)?;
        for g in 0..d {
            for step in 0..t {
                corr_values[[sample, step, g]] = pred[[g, step]];
            }
        }
    }
    let corrected_values = &recon.values + &corr_values;
    let corrections = GriddedField::new(
        corr_values,
        recon.coords.clone(),
        recon.sample_labels.clone(),
        format!("{}_correction", recon.variable_name),
        recon.units.clone(),
    )?;
    let corrected_field = GriddedField::new(
        corrected_values,
        recon.coords.clone(),
        recon.sample_labels.clone(),
        recon.variable_name.clone(),
        recon.units.clone(),
    )?;
    Ok(CorrectionResult {
        recon_field: recon.clone(),
        corrections,
        corrected_field,
        nearest,
        training_subset,
    })
}

/// Output of [`run_variant`]: a corrected run or a direct prediction of the
/// observations on the model grid.
#[derive(Debug, Clone)]
pub enum VariantOutput {
    Correction(Box<CorrectionResult>),
    Direct(DirectPrediction),
}

#[derive(Debug, Clone)]
pub struct DirectPrediction {
    pub field: GriddedField,
    pub nearest: NearestMap,
    /// Indices into the original station list that fed training.
    pub retained_stations: Vec<usize>,
}

impl VariantOutput {
    pub fn as_correction(&self) -> Option<&CorrectionResult> {
        match self {
            VariantOutput::Correction(c) => Some(c),
            VariantOutput::Direct(_) => None,
        }
    }
}

/// Run the configured variant end to end.
pub fn run_variant(
    cfg: &PipelineConfig,
    field: &GriddedField,
    stations: &StationSeries,
) -> Result<VariantOutput, PipelineError> {
    cfg.validate()?;
    let (features, _) = build_variant_features(cfg, field)?;
    let (_, reduced) = fit_reduction(cfg, field, features.as_ref())?;
    let basis = build_variant_basis(cfg, field)?;

    let retained = stations.retained_stations(cfg.station_missing_threshold);
    if retained.is_empty() {
        return Err(PipelineError::Config(
            "no station passes the missing-data threshold".into(),
        ));
    }
    let kept = stations.select(&retained)?;
    let nearest = nearest_gridpoints(&kept, field)?;

    if cfg.variant.is_direct() {
        // Learn the observations directly; no reconstruction step.
        let (s, t, p) = kept.values.dim();
        let mut y = Array2::zeros((s * p, t));
        let mut mask = Array2::from_elem((s * p, t), false);
        for sample in 0..s {
            for station in 0..p {
                for step in 0..t {
                    y[[sample * p + station, step]] = kept.values[[sample, step, station]];
                    mask[[sample * p + station, step]] = kept.mask[[sample, step, station]];
                }
            }
        }
        let (bundle, _) = train_network(
            &reduced.view(),
            &kept.coords,
            &y,
            Some(&mask),
            field.bbox(),
            basis.as_ref(),
            t,
            &cfg.corrective_net,
            cfg.seeds.corrective_init,
            cfg.seeds.shuffle,
        )?;
        let predicted = reconstruct_full(&bundle, &reduced.view(), field, basis.as_ref())?;
        return Ok(VariantOutput::Direct(DirectPrediction {
            field: predicted,
            nearest,
            retained_stations: retained,
        }));
    }

    let subset =
        select_training_gridpoints(field.n_locations(), cfg.x_percent, cfg.seeds.subset)?;
    let (recon_bundle, _) = train_reconstruction(
        &reduced.view(),
        field,
        &subset,
        basis.as_ref(),
        &cfg.recon_net,
        cfg.seeds.recon_init,
        cfg.seeds.shuffle,
    )?;
    let recon = reconstruct_full(&recon_bundle, &reduced.view(), field, basis.as_ref())?;
    let (targets, target_mask) = compute_corrections(&kept, &recon, &nearest);
    let (corr_bundle, _) = train_corrective(
        &reduced.view(),
        &targets,
        &target_mask,
        &kept.coords,
        field.bbox(),
        basis.as_ref(),
        &cfg.corrective_net,
        cfg.seeds.corrective_init,
        cfg.seeds.shuffle,
    )?;
    let result = apply_corrections(
        &recon,
        &corr_bundle,
        &reduced.view(),
        basis.as_ref(),
        nearest,
        subset,
    )?;
    Ok(VariantOutput::Correction(Box::new(result)))
}

/// One sweep measurement: reconstruction %RMSE statistics at a training
/// percentage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub x_percent: f64,
    pub subset_size: usize,
    pub mean_pct_rmse: f64,
    pub std_pct_rmse: f64,
    pub pct_rmse_per_repeat: Vec<f64>,
}

/// For each `x`, repeat reconstruction training with shifted seeds and
/// report the mean and sample standard deviation of the full-grid %RMSE
/// against the model field.
pub fn sensitivity_sweep(
    x_values: &[f64],
    n_repeats: usize,
    cfg: &PipelineConfig,
    field: &GriddedField,
) -> Result<Vec<SweepPoint>, PipelineError> {
    if n_repeats == 0 {
        return Err(PipelineError::Config("n_repeats must be >= 1".into()));
    }
    cfg.validate()?;
    let (features, _) = build_variant_features(cfg, field)?;
    let (_, reduced) = fit_reduction(cfg, field, features.as_ref())?;
    let basis = build_variant_basis(cfg, field)?;
    let model_flat = field.values.as_slice().expect("standard layout");

    let mut out = Vec::with_capacity(x_values.len());
    for &x in x_values {
        let mut errors = Vec::with_capacity(n_repeats);
        let mut subset_size = 0;
        for repeat in 0..n_repeats as u64 {
            let subset = select_training_gridpoints(
                field.n_locations(),
                x,
                cfg.seeds.subset.wrapping_add(repeat),
            )?;
            subset_size = subset.len();
            let (bundle, _) = train_reconstruction(
                &reduced.view(),
                field,
                &subset,
                basis.as_ref(),
                &cfg.recon_net,
                cfg.seeds.recon_init.wrapping_add(repeat),
                cfg.seeds.shuffle.wrapping_add(repeat),
            )?;
            let recon = reconstruct_full(&bundle, &reduced.view(), field, basis.as_ref())?;
            let recon_flat = recon.values.as_slice().expect("standard layout");
            let pct = crate::evaluate::pct_rmse(recon_flat, model_flat, None)
                .map_err(|e| PipelineError::Config(format!("sweep evaluation: {e}")))?;
            errors.push(pct);
        }
        let mean = errors.iter().sum::<f64>() / errors.len() as f64;
        let std = if errors.len() > 1 {
            (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (errors.len() - 1) as f64)
                .sqrt()
        } else {
            0.0
        };
        out.push(SweepPoint {
            x_percent: x,
            subset_size,
            mean_pct_rmse: mean,
            std_pct_rmse: std,
            pct_rmse_per_repeat: errors,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use ndarray::{arr2, Array3};

    fn lat_field(samples: usize, steps: usize, rows: usize, cols: usize) -> GriddedField {
        // Smooth field driven almost entirely by latitude, with a small
        // per-sample modulation so the feature matrix is not constant.
        let d = rows * cols;
        let mut coords = Vec::with_capacity(d);
        for i in 0..rows {
            for j in 0..cols {
                coords.push((
                    40.0 + 4.0 * i as f64 / (rows - 1) as f64,
                    -90.0 + 4.0 * j as f64 / (cols - 1) as f64,
                ));
            }
        }
        let values = Array3::from_shape_fn((samples, steps, d), |(s, t, g)| {
            let lat01 = (coords[g].0 - 40.0) / 4.0;
            10.0 + 5.0 * lat01
                + 0.5 * (s as f64 * 0.7).sin()
                + 0.2 * (2.0 * std::f64::consts::PI * t as f64 / steps as f64).sin()
        });
        let labels = (0..samples).map(|i| format!("2010-03-{:02}", i + 1)).collect();
        GriddedField::new(values, coords, labels, "v", "u").unwrap()
    }

    fn small_net(hidden: Vec<usize>, epochs: usize) -> NetConfig {
        slow_net(hidden, epochs, 0.01)
    }

    fn slow_net(hidden: Vec<usize>, epochs: usize, learning_rate: f64) -> NetConfig {
        NetConfig {
            hidden_widths: hidden,
            epochs,
            learning_rate,
            batch_size: 64,
            output_activation: OutputActivation::Identity,
        }
    }

    #[test]
    fn subset_count_rounding_and_determinism() {
        let subset = select_training_gridpoints(5120, 4.0, 7).unwrap();
        assert_eq!(subset.len(), 205);
        assert!(subset.windows(2).all(|w| w[0] < w[1]));
        let again = select_training_gridpoints(5120, 4.0, 7).unwrap();
        assert_eq!(subset, again);
        let full = select_training_gridpoints(64, 100.0, 1).unwrap();
        assert_eq!(full, (0..64).collect::<Vec<usize>>());
        assert!(matches!(
            select_training_gridpoints(100, 0.1, 1),
            Err(PipelineError::EmptySubset(..))
        ));
    }

    #[test]
    fn half_counts_round_to_even() {
        // 25 gridpoints at 10% -> 2.5 -> 2; at 30% -> 7.5 -> 8.
        assert_eq!(select_training_gridpoints(25, 10.0, 1).unwrap().len(), 2);
        assert_eq!(select_training_gridpoints(25, 30.0, 1).unwrap().len(), 8);
    }

    #[test]
    fn corrections_are_observation_minus_reconstruction() {
        let spec = SyntheticSpec {
            samples: 3,
            steps_per_sample: 8,
            grid_rows: 4,
            grid_cols: 4,
            n_stations: 5,
            obs_noise_sigma: 0.0,
            ..SyntheticSpec::default()
        };
        let (model, stations, _) = generate_synthetic(&spec).unwrap();
        let nearest = nearest_gridpoints(&stations, &model).unwrap();
        let (targets, mask) = compute_corrections(&stations, &model, &nearest);
        // Oracle: direct elementwise subtraction.
        for &(p, g, _) in &nearest.pairs {
            for s in 0..3 {
                for t in 0..8 {
                    assert!(mask[[s, t, p]]);
                    let want = stations.values[[s, t, p]] - model.values[[s, t, g]];
                    assert_eq!(targets[[s, t, p]], want);
                }
            }
        }
        // Observation equal to reconstruction: all-zero targets.
        let mut self_stations = stations.clone();
        for &(p, g, _) in &nearest.pairs {
            for s in 0..3 {
                for t in 0..8 {
                    self_stations.values[[s, t, p]] = model.values[[s, t, g]];
                }
            }
        }
        let (targets, _) = compute_corrections(&self_stations, &model, &nearest);
        assert!(targets.iter().all(|&v| v == 0.0));
        // Constant shift: constant targets.
        let mut shifted = self_stations.clone();
        shifted.values += 1.5;
        let (targets, _) = compute_corrections(&shifted, &model, &nearest);
        assert!(targets.iter().all(|&v| (v - 1.5).abs() < 1e-12));
    }

    #[test]
    fn reconstruction_memorizes_tiny_field() {
        let field = lat_field(4, 6, 2, 2);
        let cfg = PipelineConfig::default();
        let (features, _) = build_variant_features(&cfg, &field).unwrap();
        let (_, reduced) = fit_reduction(&cfg, &field, features.as_ref()).unwrap();
        let subset: Vec<usize> = (0..4).collect();
        let (bundle, trace) = train_reconstruction(
            &reduced.view(),
            &field,
            &subset,
            None,
            &small_net(vec![32], 2500),
            1,
            2,
        )
        .unwrap();
        assert!(
            trace.epoch_losses.last().unwrap() <= &1e-3,
            "final loss {}",
            trace.epoch_losses.last().unwrap()
        );
        // Consistency: full reconstruction at a training pair equals a
        // direct bundle prediction of that row.
        let recon = reconstruct_full(&bundle, &reduced.view(), &field, None).unwrap();
        assert_eq!(recon.shape(), field.shape());
        let encoder = SpatialEncoder { basis: None };
        let spatial = encoder.encode(&[field.coords[2]]);
        let one = reduced.slice(ndarray::s![1..2, ..]);
        let row = assemble_rows(&one, &spatial.view());
        let direct = bundle.predict(&row.view()).unwrap();
        for t in 0..6 {
            assert!((recon.values[[1, t, 2]] - direct[[0, t]]).abs() <= 1e-12);
        }
    }

    #[test]
    fn lat_driven_field_reconstructs_and_generalizes() {
        let field = lat_field(10, 8, 8, 8);
        let cfg = PipelineConfig::default();
        let (features, _) = build_variant_features(&cfg, &field).unwrap();
        let (_, reduced) = fit_reduction(&cfg, &field, features.as_ref()).unwrap();
        let subset = select_training_gridpoints(64, 20.0, 11).unwrap();
        let basis = build_basis(field.bbox(), 3, 2).unwrap();
        let (bundle, _) = train_reconstruction(
            &reduced.view(),
            &field,
            &subset,
            Some(&basis),
            &small_net(vec![64, 32], 600),
            3,
            4,
        )
        .unwrap();
        let recon = reconstruct_full(&bundle, &reduced.view(), &field, Some(&basis)).unwrap();

        let mut train_pred = Vec::new();
        let mut train_ref = Vec::new();
        let mut held_pred = Vec::new();
        let mut held_ref = Vec::new();
        for s in 0..10 {
            for t in 0..8 {
                for g in 0..64 {
                    if subset.binary_search(&g).is_ok() {
                        train_pred.push(recon.values[[s, t, g]]);
                        train_ref.push(field.values[[s, t, g]]);
                    } else {
                        held_pred.push(recon.values[[s, t, g]]);
                        held_ref.push(field.values[[s, t, g]]);
                    }
                }
            }
        }
        let train_rmse = crate::evaluate::pct_rmse(&train_pred, &train_ref, None).unwrap();
        let held_rmse = crate::evaluate::pct_rmse(&held_pred, &held_ref, None).unwrap();
        assert!(train_rmse < 5.0, "training %RMSE {train_rmse}");
        assert!(
            held_rmse <= 2.0 * train_rmse,
            "held-out {held_rmse} vs training {train_rmse}"
        );
    }

    #[test]
    fn zero_output_corrective_leaves_reconstruction_unchanged() {
        let field = lat_field(3, 6, 3, 3);
        let cfg = PipelineConfig::default();
        let (features, _) = build_variant_features(&cfg, &field).unwrap();
        let (_, reduced) = fit_reduction(&cfg, &field, features.as_ref()).unwrap();
        let (bundle, _) = train_reconstruction(
            &reduced.view(),
            &field,
            &[0, 4, 8],
            None,
            &small_net(vec![8], 30),
            5,
            6,
        )
        .unwrap();
        let recon = reconstruct_full(&bundle, &reduced.view(), &field, None).unwrap();

        // Corrective bundle with an all-zero output layer.
        let mut zero_bundle = bundle.clone();
        let mut params = zero_bundle.model.params_to_vec();
        let out_params =
            zero_bundle.model.spec.output_dim * (8 + 1); // weights + biases of 8 -> 6 layer
        let len = params.len();
        for p in params[len - out_params..].iter_mut() {
            *p = 0.0;
        }
        zero_bundle.model.set_params_from_vec(&params).unwrap();

        let nearest = NearestMap { pairs: vec![] };
        let result = apply_corrections(
            &recon,
            &zero_bundle,
            &reduced.view(),
            None,
            nearest,
            vec![0, 4, 8],
        )
        .unwrap();
        assert!(result.corrections.values.iter().all(|&v| v == 0.0));
        for (a, b) in result
            .corrected_field
            .values
            .iter()
            .zip(recon.values.iter())
        {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        // Additive decomposition is exact.
        for ((a, b), c) in result
            .corrected_field
            .values
            .iter()
            .zip(result.recon_field.values.iter())
            .zip(result.corrections.values.iter())
        {
            assert_eq!(*a, *b + *c);
        }
    }

    #[test]
    fn corrective_learns_constant_bias() {
        // One station observing reconstruction + b: the corrective net must
        // output roughly b at that station.
        let field = lat_field(6, 6, 4, 4);
        let cfg = PipelineConfig::default();
        let (features, _) = build_variant_features(&cfg, &field).unwrap();
        let (_, reduced) = fit_reduction(&cfg, &field, features.as_ref()).unwrap();
        let bias = 2.0;
        let (s, t, _) = field.shape();
        let station_g = 5usize;
        let mut targets = Array3::zeros((s, t, 1));
        targets.fill(bias);
        let mask = Array3::from_elem((s, t, 1), true);
        let coords = vec![field.coords[station_g]];
        let (bundle, _) = train_corrective(
            &reduced.view(),
            &targets,
            &mask,
            &coords,
            field.bbox(),
            None,
            &small_net(vec![8], 1500),
            7,
            8,
        )
        .unwrap();
        let pred = predict_rows(&bundle, &reduced.slice(ndarray::s![0..1, ..]), &coords, None)
            .unwrap();
        for step in 0..t {
            let err = (pred[[0, step]] - bias).abs() / bias;
            assert!(err <= 0.05, "predicted {} vs bias {bias}", pred[[0, step]]);
        }
    }

    #[test]
    fn corrective_with_zero_targets_stays_near_zero() {
        let field = lat_field(6, 6, 4, 4);
        let cfg = PipelineConfig::default();
        let (features, _) = build_variant_features(&cfg, &field).unwrap();
        let (_, reduced) = fit_reduction(&cfg, &field, features.as_ref()).unwrap();
        let (s, t, _) = field.shape();
        let targets = Array3::zeros((s, t, 2));
        let mask = Array3::from_elem((s, t, 2), true);
        let coords = vec![field.coords[3], field.coords[9]];
        let (bundle, _) = train_corrective(
            &reduced.view(),
            &targets,
            &mask,
            &coords,
            field.bbox(),
            None,
            &slow_net(vec![4], 20000, 0.0001),
            9,
            10,
        )
        .unwrap();
        let pred = predict_rows(&bundle, &reduced.slice(ndarray::s![0..1, ..]), &coords, None)
            .unwrap();
        for v in pred.iter() {
            assert!(v.abs() <= 1e-2, "prediction {v} not near zero");
        }
    }

    #[test]
    fn excluded_stations_contribute_no_rows() {
        let spec = SyntheticSpec {
            samples: 3,
            steps_per_sample: 8,
            grid_rows: 4,
            grid_cols: 4,
            n_stations: 6,
            ..SyntheticSpec::default()
        };
        let (_, mut stations, _) = generate_synthetic(&spec).unwrap();
        // Blank out most of stations 1 and 4.
        for p in [1usize, 4] {
            for s in 0..3 {
                for t in 0..8 {
                    if (s + t) % 4 != 0 {
                        stations.mask[[s, t, p]] = false;
                    }
                }
            }
        }
        let stations = StationSeries::new(
            stations.station_ids.clone(),
            stations.coords.clone(),
            stations.values.clone(),
            stations.mask.clone(),
        )
        .unwrap();
        let retained = stations.retained_stations(0.5);
        assert_eq!(retained, vec![0, 2, 3, 5]);
        let kept = stations.select(&retained).unwrap();
        // Row accounting: corrective training sees S x retained rows.
        assert_eq!(kept.n_stations(), 4);
        let (s, _, p) = kept.values.dim();
        assert_eq!(s * p, 12);
    }

    #[test]
    fn assemble_rows_orders_sample_major() {
        let reduced = arr2(&[[1.0, 2.0], [3.0, 4.0]]);
        let spatial = arr2(&[[10.0], [20.0], [30.0]]);
        let rows = assemble_rows(&reduced.view(), &spatial.view());
        assert_eq!(rows.dim(), (6, 3));
        assert_eq!(rows.row(0).to_vec(), vec![1.0, 2.0, 10.0]);
        assert_eq!(rows.row(2).to_vec(), vec![1.0, 2.0, 30.0]);
        assert_eq!(rows.row(3).to_vec(), vec![3.0, 4.0, 10.0]);
    }

}
