//! Out-of-distribution detection from the geometry of diffusion paths.
//!
//! A sample is mapped to noise along the deterministic DDIM path of a score
//! model. Statistics of the noise predictions along that path (their size and
//! rate of change) are summarized into a low-dimensional vector, a density is
//! fitted on those vectors for in-distribution data, and the log-likelihood of
//! a new sample's vector is its in-distribution score.

pub mod config;
pub mod data;
pub mod ddim;
pub mod density;
pub mod error;
pub mod eval;
pub mod mlp;
pub mod persist;
pub mod pipeline;
pub mod schedule;
pub mod score;
pub mod stats;
pub mod tensor_file;
pub mod theory;
pub mod train;

pub use config::PipelineConfig;
pub use data::{generate_toy_dataset, resize_equalized, Dataset, DatasetKind, ImageShape};
pub use ddim::{integrate_batch, integrate_forward, Trajectory};
pub use density::{
    gmm_fit_em, gmm_select, kde_fit, scott_bandwidth, CovarianceType, DensityModel, EmOptions, GmmModel, KdeModel,
};
pub use error::{Error, Result};
pub use eval::{auroc, auroc_bruteforce, histogram, Histogram, ScoredSets};
pub use mlp::{MlpScoreNet, TimeEmbedding};
pub use pipeline::{detect, run_detection, DetectionReport, OutputOptions};
pub use schedule::{NoiseSchedule, ScheduleKind, TimestepGrid};
pub use score::{GaussianMixtureSpec, NegationConjugate, ScoreFunction};
pub use stats::{PathStatistic, StatisticKind};
pub use tensor_file::TensorFile;
pub use train::{train, TrainConfig, TrainOutcome};
