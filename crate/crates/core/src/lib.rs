//! Core of the veilmod obfuscated-moderation platform.
//!
//! * [`blur`], [`kernel`], [`region`]: pure image processing (Gaussian blur,
//!   reveal compositing, tile extraction). Kernels and the blur intermediate
//!   are generic over the float type; the aliases below pick the defaults.
//! * [`corpus`]: labelled image manifests, tallies and task sampling.
//! * [`stage`], [`experiment`], [`exposure`], [`accuracy`]: the six
//!   obfuscation conditions, session state machine and analytics.
//! * [`survey`]: post-task questionnaire validation and scoring.
//! * [`eventlog`], [`report`], [`config`]: persistence and reporting.

pub mod accuracy;
pub mod blur;
pub mod config;
pub mod corpus;
pub mod eventlog;
pub mod experiment;
pub mod exposure;
pub mod fixture;
pub mod kernel;
pub mod raster;
pub mod region;
pub mod report;
pub mod stage;
pub mod survey;

/// Double-precision Gaussian kernel; weights sum to one within 1e-9.
pub type Kernel1D = kernel::GaussianKernel<f64>;
/// Single-precision kernel for throughput-oriented callers.
pub type Kernel1DF32 = kernel::GaussianKernel<f32>;

pub use blur::{blur_image, blur_image_with, blur_ladder, BlurError};
pub use corpus::{Category, Corpus, CountTable, ImageRecord, Realism};
pub use experiment::{
    CategoryAnswer, Experiment, ExperimentError, ExperimentSettings, ExperimentState, ModerationResponse,
    RevealEvent, RevealKind, Session,
};
pub use exposure::{compute_exposure, ExposureReport};
pub use raster::RasterImage;
pub use region::{composite_reveal, region_tile, RevealRegion};
pub use stage::{make_stage_config, RevealTool, StageConfig};
pub use survey::{Battery, SurveyResponse, SurveyScores};

/// Builds a double-precision kernel.
pub fn build_gaussian_kernel(sigma: f64) -> Result<Kernel1D, BlurError> {
    Kernel1D::new(sigma)
}
