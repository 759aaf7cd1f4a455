//! Synthetic data, fitting and training drivers, hairstyle editing, run
//! configuration, and metrics.

mod config;
mod dataset;
mod edit;
mod fit;
mod gan;
mod metrics;
mod pipeline;

pub use config::{Mode, RunConfig};
pub use dataset::{make_synthetic_dataset, random_hair_style, DatasetSpec, SyntheticDataset, SyntheticScene, ViewTruth, TRUTH_OPACITY};
pub use edit::{HeadModel, HeadSample, ViewSweep};
pub use fit::{evaluate_views, fit_gaussians, random_texture, reconstruction_objective, ChannelRates, FitConfig, FitInit, FitResult};
pub use gan::{train_toy_gan, GanConfig, GanRun, GanStep};
pub use metrics::{mean_metrics, psnr, seg_accuracy, MetricsLog, ViewMetrics};
pub use pipeline::{surface_prior, HeadGaussians, HeadGrads, HeadRig, RigSpec, PRIOR_COVERAGE, PRIOR_THICKNESS};
