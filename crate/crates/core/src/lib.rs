//! Crash window data model, secondary-crash identification, VarGAN
//! augmentation and the Transformer predictor.

pub mod error;
pub mod evaluate;
pub mod gradcheck;
pub mod identify;
pub mod io;
pub mod nn;
pub mod normalize;
pub mod predictor;
pub mod schema;
pub mod seeds;
pub mod split;
pub mod synth;
pub mod vargan;
pub mod window;

pub use error::{Result, VfgError};
