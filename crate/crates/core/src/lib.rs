//! Locally rotation invariant (LRI) image operators built from solid
//! spherical harmonics.
//!
//! The crate is organised bottom-up:
//!
//! - [`sph`]: complex spherical harmonics, rotations, Wigner-D and
//!   Clebsch-Gordan matrices.
//! - [`invariants`]: spherical spectrum and bispectrum of Fourier vectors.
//! - [`kernels`]: learnable solid spherical harmonic kernels.
//! - [`layer`]: the LRI layer (Fourier feature maps, SSE/SSB maps, pooling
//!   and analytic gradients).
//! - [`network`]: shallow classifiers, Adam, training and evaluation.
//! - [`synth`]: synthetic rotated-pattern datasets and toy experiments.

pub mod error;
pub mod invariants;
pub mod kernels;
pub mod layer;
pub mod network;
pub mod sph;
pub mod synth;
pub mod volume;

pub use error::{LriError, Result};
pub use num_complex::Complex64;
