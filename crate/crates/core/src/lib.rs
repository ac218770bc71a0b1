//! Unsupervised single-image superresolution with a Wasserstein patch prior.
//!
//! The crate is organised bottom-up:
//!
//! * [`image`] holds the pixel grid, dense patch extraction and empirical
//!   patch distributions, plus bicubic resampling.
//! * [`transport`] computes the squared Wasserstein-2 distance between patch
//!   distributions through the semi-discrete dual (c-transform, dual ascent)
//!   and provides exact LP solvers used as oracles.
//! * [`operator`] implements the blur/downsample forward model, its adjoint,
//!   the Fourier downsampler and kernel/bias estimation from a registered pair.
//! * [`variational`] minimises the data term plus the patch prior directly over
//!   the pixels of a single image.
//! * [`network`] trains a small residual convolutional net on the batched loss.
//! * [`metrics`] has PSNR, blur effect and boundary cropping.
//! * [`io`], [`config`] and [`pipeline`] back the `wpp` command line tool.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod image;
pub mod io;
pub mod metrics;
pub mod network;
pub mod operator;
pub mod optim;
pub mod pipeline;
pub mod texture;
pub mod transport;
pub mod variational;

pub use error::{Result, WppError};
pub use image::{Image, Patch, PatchDistribution};
