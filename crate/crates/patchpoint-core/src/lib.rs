//! Circular fiducial patches whose shared center is a trainable keypoint.
//!
//! The crate covers the full pipeline: rasterizing the four canonical patch
//! designs, warping them into synthetic scenes under constrained random
//! homographies, degrading those scenes photometrically, encoding cell-grid
//! supervision targets, running and training the detector/identifier network,
//! and scoring predictions against ground truth.

pub mod backgrounds;
pub mod dataset;
pub mod degrade;
pub mod eval;
pub mod geometry;
pub mod model;
pub mod patch;
pub mod rng;
pub mod synth;
pub mod train;

use thiserror::Error;

/// Crate-wide error type. Variants are shared across modules because most
/// operations compose several stages (e.g. synthesis uses geometry, rendering
/// and degradation in one call).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The warp sampler could not satisfy its size/shape constraints within
    /// the configured image, even after re-drawing scales.
    #[error("constraint infeasible: {0}")]
    ConstraintInfeasible(String),

    /// A point mapped onto (or numerically too close to) the line at infinity.
    #[error("degenerate projection at ({x}, {y}): |denominator| = {denom:.3e}")]
    DegenerateProjection { x: f64, y: f64, denom: f64 },

    /// A warped patch footprint fell entirely outside the target canvas.
    #[error("warped patch lands outside the canvas: {0}")]
    OutOfBoundsPlacement(String),

    #[error("background corpus is empty: {0}")]
    EmptyCorpus(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("dataset record {index} is corrupt: {reason}")]
    RecordCorrupt { index: u64, reason: String },

    #[error("shape mismatch: {0}")]
    ShapeError(String),

    /// Checkpoint or pretrained weight file does not match the model layout.
    #[error("weight mismatch: {0}")]
    WeightMismatch(String),

    #[error("numeric error: {0}")]
    NumericError(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    TrainingDiverged { epoch: u32, step: u64, loss: f64 },

    /// An annotation disagrees with the image it describes (keypoint outside
    /// bounds, size mismatch, ...).
    #[error("annotation inconsistent: {0}")]
    AnnotationInconsistent(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub use dataset::{Dataset, DatasetManifest, DatasetWriter};
pub use degrade::{dimming_factor, DegradationSpec};
pub use eval::{
    average_false_alarm, detection_score, id_matching_score, match_detections, run_sweep,
    run_validation, EvalReport, HexBoardSpec, MatchResult, SweepAxis, SweepSpec,
};
pub use geometry::{Homography, WarpConstraints};
pub use model::{
    decode_ids, decode_keypoints, load_checkpoint, load_pretrained, rgb_to_luma_f32,
    save_checkpoint, Detection, Keypoint, ModelConfig, NetworkOutput, SuperPointNet,
};
pub use patch::{canonical_designs, render_patch, PatchRaster, PatchSpec};
pub use synth::{CellTargets, KeypointInstance, SampleAnnotation, SynthConfig};
pub use train::TrainConfig;
