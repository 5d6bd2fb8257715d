//! Beat-hierarchical music-to-dance synthesis.
//!
//! The crate splits a dance clip into three frame populations: the seed
//! frames given as context, the poses at audio beat frames, and the
//! remaining "repletion" frames. Beat poses are generated in one shot from
//! beat-frame audio features; repletion poses are filled in adversarially
//! with a temporal-contrastive diversity term; a separate predictor
//! produces the root trajectory. Audio analysis, the training substrate,
//! the evaluation metrics, and the CLI pipeline all live here.

pub mod audiofeat;
pub mod bps;
pub mod dataset;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod netcore;
pub mod pipeline;
pub mod rps;
pub mod skeleton;

pub use error::{Error, Result};
