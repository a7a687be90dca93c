//! Desk-scale laboratory for machine unlearning in denoising diffusion models.
//!
//! The crate trains small conditional diffusion models on labeled 2-D mixture
//! data, scrubs the influence of a designated forgetting subset with a
//! first-order bi-level algorithm plus a battery of baseline methods, and
//! quantifies forgetting/utility with low-dimensional metrics.

pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod harness;
pub mod mathcore;
pub mod unlearn;

pub use error::{Error, Result};
