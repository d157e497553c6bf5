//! Conditional linear regression via a sum-of-squares relaxation.

pub mod cover;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod program;
pub mod sdp;
pub mod sos;
pub mod synth;

pub use error::{Error, Result};
