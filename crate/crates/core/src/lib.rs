//! Invertible denoising network.
//!
//! A noisy image is mapped by a stack of wavelet down-scalings and affine
//! coupling blocks to a low-resolution clean estimate plus a latent that
//! carries noise and high-frequency detail. Denoising discards the latent
//! and inverts with a fresh Gaussian sample; noise synthesis perturbs it.

pub mod invertible;
pub mod tensor;
pub mod error;
pub mod image;
pub mod model;
pub mod io;
pub mod training;
pub mod inference;
pub mod precise;
pub mod metrics;
pub mod config;
pub mod checkpoint;
