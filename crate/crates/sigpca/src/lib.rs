//! Signature-PCA summary statistics for observation-corrected model outputs.
//!
//! Large gridded space-time model outputs are summarized per sample by
//! path signatures computed over hierarchical dyadic time windows, reduced
//! with PCA, and fed to two dense networks: one reconstructs the gridded
//! field from the summaries plus a spatial encoding (coordinates and
//! multi-resolution Wendland basis functions), the other learns corrections
//! from sparse station observations. Corrected fields are the sum of the
//! reconstruction and the predicted corrections.
//!
//! Modules follow the processing order:
//!
//! * [`data`] — on-disk containers for gridded fields and station series,
//!   observation aggregation, nearest-gridpoint mapping, synthetic data.
//! * [`signatures`] — dyadic windowing, path augmentation, depth-1/depth-2
//!   signature features.
//! * [`reduction`] — PCA over signature features, EOF baseline over raw
//!   fields, contributing-location ranking.
//! * [`spatialbasis`] — compactly supported Wendland radial basis functions
//!   on multi-resolution knot grids.
//! * [`neuralnet`] — dense feedforward regression with batch normalization
//!   and Adam, in f64 with analytically derived gradients.
//! * [`pipeline`] — end-to-end reconstruction + correction variants.
//! * [`evaluate`] — %RMSE, 1-Wasserstein, correlation vs distance, power
//!   spectra, QQ pairs, seasonal grouping.
//! * [`cli`] — staged command-line front end over the container artifacts.
//!
//! See the crate `examples/` directory for one runnable example per
//! capability; the `sigpca` binary exposes the same stages as subcommands.

pub mod cli;
pub mod container;
pub mod data;
pub mod evaluate;
pub mod neuralnet;
pub mod pipeline;
pub mod reduction;
pub mod signatures;
pub mod spatialbasis;

pub use data::{GriddedField, NearestMap, StationSeries, SyntheticSpec};
pub use neuralnet::{MlpModel, MlpSpec, TrainConfig};
pub use pipeline::{CorrectionResult, PipelineConfig, Variant};
pub use reduction::{EofModel, LocationRanking, PcaModel};
pub use signatures::{FeatureMatrix, SignatureConfig, WindowSet};
pub use spatialbasis::KrigingBasis;
