//! Landmark detection with Kronecker convolution layers, weight regression
//! from inter-landmark distances, and morphometric analysis, together with
//! a synthetic specimen generator to exercise all of it.

pub mod augment;
pub mod checkpoint;
pub mod dataset;
mod error;
pub mod image;
pub mod kcl;
pub mod landmarks;
pub mod metrics;
pub mod morphometrics;
pub mod net;
pub mod rng;
pub mod synth;
pub mod train;
pub mod weight;

pub use error::{Error, Result};
pub use kronmark_tensor as tensor;
