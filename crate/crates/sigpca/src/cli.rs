//! Command-style front end: every pipeline stage reads and writes container
//! artifacts under the output directory, so a full run and a sequence of
//! single-stage invocations produce identical bytes.
//!
//! Commands: `synth`, `run`, and the stages `signatures`, `reduce`,
//! `train-recon`, `reconstruct`, `train-correct`, `correct`, `evaluate`,
//! `sweep`. Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 numeric failure.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::Digest;

use crate::container;
use crate::data::{generate_synthetic, GriddedField, NearestMap, StationSeries, SyntheticSpec};
use crate::evaluate::{build_report, write_report_csv, EvalOptions, EvalReport};
use crate::neuralnet::{NetError, NetworkBundle};
use crate::pipeline::{
    self, apply_corrections, build_variant_basis, build_variant_features, compute_corrections,
    fit_reduction, reconstruct_full, select_training_gridpoints, sensitivity_sweep,
    train_corrective, train_reconstruction, BasisConfig, NetConfig, PipelineConfig,
    PipelineError, ReductionModel, Seeds, Variant,
};
use crate::reduction::LocationRanking;
use crate::signatures::{FeatureMatrix, SignatureConfig};

/// Failure classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

fn classify(stage: &str, err: PipelineError) -> CliError {
    let text = format!("stage {stage}: {err}");
    match &err {
        PipelineError::Config(_) | PipelineError::EmptySubset(..) => CliError::Config(text),
        PipelineError::Net(NetError::NonFiniteLoss { .. }) => CliError::Numeric(text),
        PipelineError::Net(NetError::AllMasked) => CliError::Numeric(text),
        PipelineError::Reduction(crate::reduction::ReductionError::ZeroVariance) => {
            CliError::Numeric(text)
        }
        _ => CliError::Data(text),
    }
}

fn data_err<E: std::fmt::Display>(stage: &str) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Data(format!("stage {stage}: {e}"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub enabled: bool,
    pub max_pairs: usize,
    pub pair_seed: u64,
    pub n_quantiles: usize,
    pub n_detail_stations: usize,
    pub sample_interval_hours: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        let o = EvalOptions::default();
        Self {
            enabled: true,
            max_pairs: o.max_pairs,
            pair_seed: o.pair_seed,
            n_quantiles: o.n_quantiles,
            n_detail_stations: o.n_detail_stations,
            sample_interval_hours: o.sample_interval_hours,
        }
    }
}

impl EvalSettings {
    fn options(&self) -> EvalOptions {
        EvalOptions {
            max_pairs: self.max_pairs,
            pair_seed: self.pair_seed,
            n_quantiles: self.n_quantiles,
            n_detail_stations: self.n_detail_stations,
            sample_interval_hours: self.sample_interval_hours,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSettings {
    pub x_values: Vec<f64>,
    pub n_repeats: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            x_values: vec![1.0, 2.0, 4.0, 8.0, 12.0, 16.0, 20.0],
            n_repeats: 5,
        }
    }
}

/// Whole-run configuration; a JSON file with any subset of these keys.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub field_dir: String,
    pub stations_dir: String,
    pub out_dir: String,
    /// Recorded in provenance; computation is sequential regardless, so any
    /// value reproduces the same bytes.
    pub threads: usize,
    /// Reuse artifacts already present in the output directory.
    pub cache: bool,
    pub variants: Vec<Variant>,
    pub signature: SignatureConfig,
    pub variance_target: f64,
    pub x_percent: f64,
    pub seeds: Seeds,
    pub recon_net: NetConfig,
    pub corrective_net: NetConfig,
    pub basis: BasisConfig,
    pub station_missing_threshold: f64,
    pub depth2_top_m: usize,
    pub evaluation: EvalSettings,
    pub sweep: SweepSettings,
    pub synthetic: SyntheticSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            schema_version: 1,
            field_dir: "sigpca-out/field".into(),
            stations_dir: "sigpca-out/stations".into(),
            out_dir: "sigpca-out".into(),
            threads: 1,
            cache: true,
            variants: vec![Variant::SigpcaDk],
            signature: p.signature,
            variance_target: p.variance_target,
            x_percent: p.x_percent,
            seeds: p.seeds,
            recon_net: p.recon_net,
            corrective_net: p.corrective_net,
            basis: p.basis,
            station_missing_threshold: p.station_missing_threshold,
            depth2_top_m: p.depth2_top_m,
            evaluation: EvalSettings::default(),
            sweep: SweepSettings::default(),
            synthetic: SyntheticSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("cannot parse config {}: {e}", path.display())))
    }

    pub fn pipeline(&self, variant: Variant) -> PipelineConfig {
        PipelineConfig {
            variant,
            signature: self.signature.clone(),
            variance_target: self.variance_target,
            x_percent: self.x_percent,
            seeds: self.seeds,
            recon_net: self.recon_net.clone(),
            corrective_net: self.corrective_net.clone(),
            basis: self.basis,
            station_missing_threshold: self.station_missing_threshold,
            depth2_top_m: self.depth2_top_m,
        }
    }

    /// Derive the whole seed family from one base seed (the `--seed` flag).
    pub fn override_seed(&mut self, seed: u64) {
        self.seeds = Seeds {
            subset: seed,
            recon_init: seed.wrapping_add(1),
            corrective_init: seed.wrapping_add(2),
            shuffle: seed.wrapping_add(3),
        };
        self.synthetic.seed = seed;
        self.evaluation.pair_seed = seed.wrapping_add(4);
    }

    fn variant_dir(&self, variant: Variant) -> PathBuf {
        Path::new(&self.out_dir).join(variant.name())
    }
}

/// Deterministic provenance: enough to reproduce every artifact bit for
/// bit (no timestamps on purpose).
#[derive(Debug, Serialize, Deserialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub seeds: Seeds,
    pub threads: usize,
    pub crate_version: String,
    pub command: String,
    pub variants: Vec<String>,
}

pub fn config_hash(config: &RunConfig) -> String {
    let canonical = serde_json::to_string(config).expect("config serializes");
    let digest = sha2::Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_provenance(config: &RunConfig, command: &str) -> Result<(), CliError> {
    let prov = Provenance {
        config_sha256: config_hash(config),
        seeds: config.seeds,
        threads: config.threads,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        variants: config.variants.iter().map(|v| v.name().to_string()).collect(),
    };
    let dir = Path::new(&config.out_dir);
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join("provenance.json");
    let text = serde_json::to_string_pretty(&prov).expect("provenance serializes");
    std::fs::write(&path, text + "\n")
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

#[derive(Debug, Clone)]
pub struct StageReport {
    pub stage: &'static str,
    pub skipped: bool,
    pub artifact: PathBuf,
}

#[derive(Debug)]
pub struct RunReport {
    pub variant: Variant,
    pub stages: Vec<StageReport>,
}

/// Generate a synthetic dataset and write `field/`, `stations/`, `truth/`
/// containers into the output directory.
pub fn cmd_synth(config: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let spec = &config.synthetic;
    let (model, stations, truth) = generate_synthetic(spec).map_err(|e| match e {
        crate::data::DataError::DegenerateDims(d) => {
            CliError::Config(format!("synthetic grid dims: {d}"))
        }
        other => CliError::Data(format!("stage synth: {other}")),
    })?;
    let out = Path::new(&config.out_dir);
    let dirs = [out.join("field"), out.join("stations"), out.join("truth")];
    model.save(&dirs[0]).map_err(data_err("synth"))?;
    stations.save(&dirs[1]).map_err(data_err("synth"))?;
    truth.save(&dirs[2]).map_err(data_err("synth"))?;
    write_provenance(config, "synth")?;
    Ok(dirs.to_vec())
}

fn load_field(config: &RunConfig, stage: &str) -> Result<GriddedField, CliError> {
    GriddedField::load(Path::new(&config.field_dir)).map_err(|e| {
        CliError::Data(format!(
            "stage {stage}: missing or invalid field at {}: {e}",
            config.field_dir
        ))
    })
}

fn load_stations(config: &RunConfig, stage: &str) -> Result<StationSeries, CliError> {
    StationSeries::load(Path::new(&config.stations_dir)).map_err(|e| {
        CliError::Data(format!(
            "stage {stage}: missing or invalid stations at {}: {e}",
            config.stations_dir
        ))
    })
}

fn require_artifact<T>(
    stage: &str,
    what: &str,
    path: &Path,
    load: impl FnOnce(&Path) -> Result<T, CliError>,
) -> Result<T, CliError> {
    if !path.exists() {
        return Err(CliError::Data(format!(
            "stage {stage}: missing prerequisite {what} at {} (run earlier stages first)",
            path.display()
        )));
    }
    load(path)
}

#[derive(Serialize, Deserialize)]
struct NearestArtifact {
    /// Indices into the full station list that passed the missing-data
    /// threshold, in order.
    retained: Vec<usize>,
    /// `(retained-station index, gridpoint, distance_km)`.
    pairs: Vec<(usize, usize, f64)>,
}

#[derive(Serialize, Deserialize)]
struct SubsetArtifact {
    x_percent: f64,
    seed: u64,
    indices: Vec<usize>,
}

fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", parent.display())))?;
    }
    let text = serde_json::to_string_pretty(value).expect("serializes");
    std::fs::write(path, text + "\n")
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("cannot parse {}: {e}", path.display())))
}

struct StageContext<'a> {
    config: &'a RunConfig,
    variant: Variant,
    dir: PathBuf,
}

impl<'a> StageContext<'a> {
    fn new(config: &'a RunConfig, variant: Variant) -> Self {
        let dir = config.variant_dir(variant);
        Self {
            config,
            variant,
            dir,
        }
    }

    fn pipeline(&self) -> PipelineConfig {
        self.config.pipeline(self.variant)
    }

    fn cached(&self, stage: &'static str, paths: &[PathBuf]) -> Option<StageReport> {
        if self.config.cache && paths.iter().all(|p| p.exists()) {
            eprintln!(
                "[sigpca] cache hit: skipping {stage} for {}",
                self.variant.name()
            );
            return Some(StageReport {
                stage,
                skipped: true,
                artifact: paths[0].clone(),
            });
        }
        None
    }
}

fn stage_signatures(ctx: &StageContext) -> Result<StageReport, CliError> {
    const STAGE: &str = "signatures";
    if ctx.variant.uses_eof() {
        return Err(CliError::Config(format!(
            "stage {STAGE}: variant {} reduces the raw field, it has no signature stage",
            ctx.variant.name()
        )));
    }
    let features_dir = ctx.dir.join("features");
    if let Some(report) = ctx.cached(STAGE, &[features_dir.clone()]) {
        return Ok(report);
    }
    let field = load_field(ctx.config, STAGE)?;
    let cfg = ctx.pipeline();
    let (features, ranking) =
        build_variant_features(&cfg, &field).map_err(|e| classify(STAGE, e))?;
    let features = features.expect("signature variant");
    features.save(&features_dir).map_err(data_err(STAGE))?;
    if let Some(ranking) = ranking {
        save_json::<LocationRanking>(&ctx.dir.join("ranking.json"), &ranking)?;
    }
    Ok(StageReport {
        stage: STAGE,
        skipped: false,
        artifact: features_dir,
    })
}

fn stage_reduce(ctx: &StageContext) -> Result<StageReport, CliError> {
    const STAGE: &str = "reduce";
    let reduction_dir = ctx.dir.join("reduction");
    let reduced_dir = ctx.dir.join("reduced");
    if let Some(report) = ctx.cached(STAGE, &[reduction_dir.clone(), reduced_dir.clone()]) {
        return Ok(report);
    }
    let field = load_field(ctx.config, STAGE)?;
    let cfg = ctx.pipeline();
    let features = if ctx.variant.uses_eof() {
        None
    } else {
        Some(require_artifact(
            STAGE,
            "feature matrix",
            &ctx.dir.join("features"),
            |p| FeatureMatrix::load(p).map_err(|e| CliError::Data(e.to_string())),
        )?)
    };
    let (model, scores) =
        fit_reduction(&cfg, &field, features.as_ref()).map_err(|e| classify(STAGE, e))?;
    match &model {
        ReductionModel::Pca(m) => m.save(&reduction_dir).map_err(data_err(STAGE))?,
        ReductionModel::Eof(m) => m.save(&reduction_dir).map_err(data_err(STAGE))?,
    }
    container::save_matrix(&reduced_dir, &scores, "reduced_features").map_err(data_err(STAGE))?;
    Ok(StageReport {
        stage: STAGE,
        skipped: false,
        artifact: reduced_dir,
    })
}

fn load_reduced(ctx: &StageContext, stage: &str) -> Result<Array2<f64>, CliError> {
    require_artifact(stage, "reduced features", &ctx.dir.join("reduced"), |p| {
        container::load_matrix(p).map_err(|e| CliError::Data(e.to_string()))
    })
}

fn stage_train_recon(ctx: &StageContext) -> Result<StageReport, CliError> {
    const STAGE: &str = "train-recon";
    let model_dir = ctx.dir.join("recon_model");
    let subset_path = ctx.dir.join("subset.json");
    if let Some(report) = ctx.cached(STAGE, &[model_dir.clone(), subset_path.clone()]) {
        return Ok(report);
    }
    let field = load_field(ctx.config, STAGE)?;
    let cfg = ctx.pipeline();
    let reduced = load_reduced(ctx, STAGE)?;
    let subset = select_training_gridpoints(field.n_locations(), cfg.x_percent, cfg.seeds.subset)
        .map_err(|e| classify(STAGE, e))?;
    eprintln!(
        "[sigpca] {}: training reconstruction on {} of {} gridpoints",
        ctx.variant.name(),
        subset.len(),
        field.n_locations()
    );
    let basis = build_variant_basis(&cfg, &field).map_err(|e| classify(STAGE, e))?;
    let (bundle, _) = train_reconstruction(
        &reduced.view(),
        &field,
        &subset,
        basis.as_ref(),
        &cfg.recon_net,
        cfg.seeds.recon_init,
        cfg.seeds.shuffle,
    )
    .map_err(|e| classify(STAGE, e))?;
    bundle.save(&model_dir).map_err(data_err(STAGE))?;
    save_json(
        &subset_path,
        &SubsetArtifact {
            x_percent: cfg.x_percent,
            seed: cfg.seeds.subset,
            indices: subset,
        },
    )?;
    Ok(StageReport {
        stage: STAGE,
        skipped: false,
        artifact: model_dir,
    })
}

fn stage_reconstruct(ctx: &StageContext) -> Result<StageReport, CliError> {
    const STAGE: &str = "reconstruct";
    let recon_dir = ctx.dir.join("recon_field");
    if let Some(report) = ctx.cached(STAGE, &[recon_dir.clone()]) {
        return Ok(report);
    }
    let field = load_field(ctx.config, STAGE)?;
    let cfg = ctx.pipeline();
    let reduced = load_reduced(ctx, STAGE)?;
    let bundle = require_artifact(STAGE, "reconstruction model", &ctx.dir.join("recon_model"), |p| {
        NetworkBundle::load(p).map_err(|e| CliError::Data(e.to_string()))
    })?;
    let basis = build_variant_basis(&cfg, &field).map_err(|e| classify(STAGE, e))?;
    let recon = reconstruct_full(&bundle, &reduced.view(), &field, basis.as_ref())
        .map_err(|e| classify(STAGE, e))?;
    recon.save(&recon_dir).map_err(data_err(STAGE))?;
    Ok(StageReport {
        stage: STAGE,
        skipped: false,
        artifact: recon_dir,
    })
}

fn stage_train_correct(ctx: &StageContext) -> Result<StageReport, CliError> {
    const STAGE: &str = "train-correct";
    let model_dir = ctx.dir.join("corrective_model");
    let nearest_path = ctx.dir.join("nearest.json");
    let targets_dir = ctx.dir.join("correction_targets");
    if let Some(report) = ctx.cached(
        STAGE,
        &[model_dir.clone(), nearest_path.clone(), targets_dir.clone()],
    ) {
        return Ok(report);
    }
    let field = load_field(ctx.config, STAGE)?;
    let stations = load_stations(ctx.config, STAGE)?;
    let cfg = ctx.pipeline();
    let reduced = load_reduced(ctx, STAGE)?;
    let recon = require_artifact(STAGE, "reconstructed field", &ctx.dir.join("recon_field"), |p| {
        GriddedField::load(p).map_err(|e| CliError::Data(e.to_string()))
    })?;
    let retained = stations.retained_stations(cfg.station_missing_threshold);
    if retained.is_empty() {
        return Err(CliError::Data(format!(
            "stage {STAGE}: no station passes the missing-data threshold {}",
            cfg.station_missing_threshold
        )));
    }
    let kept = stations.select(&retained).map_err(data_err(STAGE))?;
    let nearest =
        crate::data::nearest_gridpoints(&kept, &field).map_err(data_err(STAGE))?;
    let (targets, target_mask) = compute_corrections(&kept, &recon, &nearest);
    // The targets are themselves a station series (residuals + mask).
    let target_series = StationSeries::new(
        kept.station_ids.clone(),
        kept.coords.clone(),
        targets.clone(),
        target_mask.clone(),
    )
    .map_err(data_err(STAGE))?;
    target_series.save(&targets_dir).map_err(data_err(STAGE))?;
    let basis = build_variant_basis(&cfg, &field).map_err(|e| classify(STAGE, e))?;
    let (bundle, _) = train_corrective(
        &reduced.view(),
        &targets,
        &target_mask,
        &kept.coords,
        field.bbox(),
        basis.as_ref(),
        &cfg.corrective_net,
        cfg.seeds.corrective_init,
        cfg.seeds.shuffle,
    )
    .map_err(|e| classify(STAGE, e))?;
    bundle.save(&model_dir).map_err(data_err(STAGE))?;
    save_json(
        &nearest_path,
        &NearestArtifact {
            retained,
            pairs: nearest.pairs.clone(),
        },
    )?;
    Ok(StageReport {
        stage: STAGE,
        skipped: false,
        artifact: model_dir,
    })
}

fn stage_correct(ctx: &StageContext) -> Result<StageReport, CliError> {
    const STAGE: &str = "correct";
    let corrected_dir = ctx.dir.join("corrected_field");
    let corrections_dir = ctx.dir.join("corrections_field");
    if let Some(report) = ctx.cached(STAGE, &[corrected_dir.clone(), corrections_dir.clone()]) {
        return Ok(report);
    }
    let field = load_field(ctx.config, STAGE)?;
    let cfg = ctx.pipeline();
    let reduced = load_reduced(ctx, STAGE)?;
    let recon = require_artifact(STAGE, "reconstructed field", &ctx.dir.join("recon_field"), |p| {
        GriddedField::load(p).map_err(|e| CliError::Data(e.to_string()))
    })?;
    let bundle = require_artifact(STAGE, "corrective model", &ctx.dir.join("corrective_model"), |p| {
        NetworkBundle::load(p).map_err(|e| CliError::Data(e.to_string()))
    })?;
    let nearest: NearestArtifact =
        require_artifact(STAGE, "nearest map", &ctx.dir.join("nearest.json"), |p| {
            load_json(p)
        })?;
    let subset: SubsetArtifact =
        require_artifact(STAGE, "training subset", &ctx.dir.join("subset.json"), |p| {
            load_json(p)
        })?;
    let basis = build_variant_basis(&cfg, &field).map_err(|e| classify(STAGE, e))?;
    let result = apply_corrections(
        &recon,
        &bundle,
        &reduced.view(),
        basis.as_ref(),
        NearestMap {
            pairs: nearest.pairs,
        },
        subset.indices,
    )
    .map_err(|e| classify(STAGE, e))?;
    result
        .corrections
        .save(&corrections_dir)
        .map_err(data_err(STAGE))?;
    result
        .corrected_field
        .save(&corrected_dir)
        .map_err(data_err(STAGE))?;
    Ok(StageReport {
        stage: STAGE,
        skipped: false,
        artifact: corrected_dir,
    })
}

fn stage_evaluate(ctx: &StageContext) -> Result<StageReport, CliError> {
    const STAGE: &str = "evaluate";
    let eval_dir = ctx.dir.join("eval");
    let report_path = eval_dir.join("report.json");
    if let Some(report) = ctx.cached(STAGE, &[report_path.clone()]) {
        return Ok(report);
    }
    let field = load_field(ctx.config, STAGE)?;
    let stations = load_stations(ctx.config, STAGE)?;
    let recon = require_artifact(STAGE, "reconstructed field", &ctx.dir.join("recon_field"), |p| {
        GriddedField::load(p).map_err(|e| CliError::Data(e.to_string()))
    })?;
    let corrected = require_artifact(
        STAGE,
        "corrected field",
        &ctx.dir.join("corrected_field"),
        |p| GriddedField::load(p).map_err(|e| CliError::Data(e.to_string())),
    )?;
    let nearest: NearestArtifact =
        require_artifact(STAGE, "nearest map", &ctx.dir.join("nearest.json"), |p| {
            load_json(p)
        })?;
    let kept = stations
        .select(&nearest.retained)
        .map_err(data_err(STAGE))?;
    let report = build_report(
        &field,
        &recon,
        &corrected,
        &kept,
        &NearestMap {
            pairs: nearest.pairs,
        },
        &ctx.config.evaluation.options(),
    )
    .map_err(|e| CliError::Data(format!("stage {STAGE}: {e}")))?;
    save_json::<EvalReport>(&report_path, &report)?;
    write_report_csv(&report, &eval_dir.join("csv"))
        .map_err(|e| CliError::Data(format!("stage {STAGE}: {e}")))?;
    Ok(StageReport {
        stage: STAGE,
        skipped: false,
        artifact: report_path,
    })
}

fn stage_sweep(ctx: &StageContext) -> Result<StageReport, CliError> {
    const STAGE: &str = "sweep";
    let sweep_path = ctx.dir.join("sweep.json");
    let csv_path = ctx.dir.join("sweep.csv");
    if let Some(report) = ctx.cached(STAGE, &[sweep_path.clone(), csv_path.clone()]) {
        return Ok(report);
    }
    let field = load_field(ctx.config, STAGE)?;
    let cfg = ctx.pipeline();
    let settings = &ctx.config.sweep;
    let points = sensitivity_sweep(&settings.x_values, settings.n_repeats, &cfg, &field)
        .map_err(|e| classify(STAGE, e))?;
    save_json(&sweep_path, &points)?;
    let mut csv = String::from("x_percent,subset_size,mean_pct_rmse,std_pct_rmse\n");
    for p in &points {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            p.x_percent, p.subset_size, p.mean_pct_rmse, p.std_pct_rmse
        ));
    }
    std::fs::create_dir_all(&ctx.dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", ctx.dir.display())))?;
    std::fs::write(&csv_path, csv)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", csv_path.display())))?;
    Ok(StageReport {
        stage: STAGE,
        skipped: false,
        artifact: csv_path,
    })
}

/// Direct observation prediction has no staged artifacts besides features
/// and reduction; it trains, predicts, and evaluates in one pass.
fn run_direct(ctx: &StageContext) -> Result<Vec<StageReport>, CliError> {
    const STAGE: &str = "direct";
    let mut stages = Vec::new();
    stages.push(stage_signatures(ctx)?);
    stages.push(stage_reduce(ctx)?);
    let predicted_dir = ctx.dir.join("predicted_obs_field");
    let eval_dir = ctx.dir.join("eval");
    let report_path = eval_dir.join("report.json");
    if let Some(report) = ctx.cached(STAGE, &[predicted_dir.clone(), report_path.clone()]) {
        stages.push(report);
        return Ok(stages);
    }
    let field = load_field(ctx.config, STAGE)?;
    let stations = load_stations(ctx.config, STAGE)?;
    let cfg = ctx.pipeline();
    let output = pipeline::run_variant(&cfg, &field, &stations).map_err(|e| classify(STAGE, e))?;
    let direct = match output {
        pipeline::VariantOutput::Direct(d) => d,
        pipeline::VariantOutput::Correction(_) => unreachable!("direct variant"),
    };
    direct.field.save(&predicted_dir).map_err(data_err(STAGE))?;
    if ctx.config.evaluation.enabled {
        let kept = stations
            .select(&direct.retained_stations)
            .map_err(data_err(STAGE))?;
        // The direct prediction stands in for both the reconstruction and
        // the corrected field in the report.
        let report = build_report(
            &field,
            &direct.field,
            &direct.field,
            &kept,
            &direct.nearest,
            &ctx.config.evaluation.options(),
        )
        .map_err(|e| CliError::Data(format!("stage {STAGE}: {e}")))?;
        save_json::<EvalReport>(&report_path, &report)?;
        write_report_csv(&report, &eval_dir.join("csv"))
            .map_err(|e| CliError::Data(format!("stage {STAGE}: {e}")))?;
    }
    stages.push(StageReport {
        stage: STAGE,
        skipped: false,
        artifact: predicted_dir,
    });
    Ok(stages)
}

/// Run the full workflow for every configured variant.
pub fn cmd_run(config: &RunConfig) -> Result<Vec<RunReport>, CliError> {
    write_provenance(config, "run")?;
    let mut reports = Vec::new();
    for &variant in &config.variants {
        let ctx = StageContext::new(config, variant);
        eprintln!("[sigpca] running variant {}", variant.name());
        let stages = if variant.is_direct() {
            run_direct(&ctx)?
        } else {
            let mut stages = Vec::new();
            if !variant.uses_eof() {
                stages.push(stage_signatures(&ctx)?);
            }
            stages.push(stage_reduce(&ctx)?);
            stages.push(stage_train_recon(&ctx)?);
            stages.push(stage_reconstruct(&ctx)?);
            stages.push(stage_train_correct(&ctx)?);
            stages.push(stage_correct(&ctx)?);
            if config.evaluation.enabled {
                stages.push(stage_evaluate(&ctx)?);
            }
            stages
        };
        reports.push(RunReport { variant, stages });
    }
    Ok(reports)
}

/// Run a single named stage for the first configured variant.
pub fn cmd_stage(stage: &str, config: &RunConfig) -> Result<StageReport, CliError> {
    let variant = *config
        .variants
        .first()
        .ok_or_else(|| CliError::Config("no variant configured".into()))?;
    let ctx = StageContext::new(config, variant);
    if variant.is_direct() && !matches!(stage, "signatures" | "reduce" | "sweep") {
        return Err(CliError::Config(format!(
            "stage {stage}: direct variants run end to end via `run`"
        )));
    }
    write_provenance(config, stage)?;
    match stage {
        "signatures" => stage_signatures(&ctx),
        "reduce" => stage_reduce(&ctx),
        "train-recon" => stage_train_recon(&ctx),
        "reconstruct" => stage_reconstruct(&ctx),
        "train-correct" => stage_train_correct(&ctx),
        "correct" => stage_correct(&ctx),
        "evaluate" => stage_evaluate(&ctx),
        "sweep" => stage_sweep(&ctx),
        other => Err(CliError::Config(format!("unknown stage '{other}'"))),
    }
}
