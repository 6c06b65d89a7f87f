//! Data machinery for open-world 3D scene understanding.
//!
//! The crate covers the offline side of a point-cloud open-vocabulary
//! pipeline: loading and validating scene bundles, back-projecting RGB-D
//! frames, building hierarchical point-caption pairs (scene / view / entity),
//! evaluating the contrastive point-language objective with analytic
//! gradients, calibrating semantic scores with a binary novelty probability,
//! generating debiased instance-localization pseudo-labels, and scoring
//! predictions with open-world segmentation metrics (hIoU, AP50, AR50,
//! PQ/SQ/RQ, offset MAE).
//!
//! Everything is deterministic: given the same inputs, configuration and
//! seed, every function produces identical output regardless of the rayon
//! thread count.

pub mod association;
pub mod calibration;
pub mod error;
pub mod geometry;
pub mod instance;
pub mod math;
pub mod metrics;
pub mod objective;
pub mod scene;
pub mod synth;

pub use error::{Error, Result};
pub use scene::{
    CameraFrame, CaptionLevel, CaptionRecord, CategoryVocabulary, PipelineConfig, ScenePointCloud,
    IGNORE_LABEL, NONE_INSTANCE,
};
