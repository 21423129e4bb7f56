//! Synthesis of stochastic affine state-feedback policies for discrete-time
//! systems by semidefinite programming over second-moment matrices.

pub mod builder;
pub mod duality;
pub mod error;
pub mod extract;
pub mod linalg;
pub mod model;
pub mod moments;
pub mod scaling;
pub mod scenarios;
pub mod sdp;
pub mod simulate;
pub mod synthesis;
pub mod verify;

pub use error::{Error, Result};
