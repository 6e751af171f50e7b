//! Resolution-invariant variational autoencoder.
//!
//! Images of any pixel spacing are encoded onto one fixed latent grid by
//! replacing fixed factor-2 resampling with learnable resize blocks whose
//! per-layer factor is derived from the input and latent spacings. Decoding
//! targets any output grid the same way. Latents of coarse inputs can be
//! blended with noise in proportion to an SSIM-estimated information loss,
//! which turns repeated decoding into a super-resolution uncertainty map.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below fix the double-precision instantiation used by the
//! command-line tool and the test suites.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod image;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod resize;
pub mod scalar;
pub mod tensor;
pub mod uncertainty;

pub use error::{Error, Result};
pub use image::{ImageSample, Spacing};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Graph64 = autodiff::Graph<f64>;
pub type ImageSample64 = ImageSample<f64>;
pub type Model64 = model::ResolutionInvariantAe<f64>;
