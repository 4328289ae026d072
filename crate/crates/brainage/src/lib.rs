//! Subject-specific brain ageing synthesis from cross-sectional data.
//!
//! The library trains a conditional Wasserstein GAN (with gradient penalty)
//! that maps a 2D brain slice to the same subject's appearance at a target
//! age and health state. Age and health are injected through ordinal binary
//! codes; identity-preservation and self-reconstruction losses keep the
//! output on the input subject's trajectory. A procedural ageing phantom
//! makes the whole pipeline verifiable at desk scale.

pub mod autodiff;
pub mod checkpoint;
pub mod conditioning;
pub mod data;
pub mod error;
pub mod eval;
pub mod image;
pub mod losses;
pub mod networks;
pub mod optim;
pub mod seeding;
pub mod trainer;

pub use error::{Error, Result};

/// Element type used for training and inference. Tests that compare
/// gradients against finite differences instantiate the engine with `f64`
/// instead.
pub type Elem = f32;

