//! Temporal alignment of long raw sensor recordings.

pub mod baselines;
pub mod config;
pub mod correlation;
pub mod error;
pub mod eval;
pub mod io;
pub mod model_fit;
pub mod pipeline;
pub mod segmentation;
pub mod signal;
pub mod synth;
pub mod transform;
pub mod warp;

pub use error::{Error, Result};
pub use signal::Signal;
pub use warp::{apply_warp, evaluate_warp, Label, PiecewiseWarp, PolyModel};
