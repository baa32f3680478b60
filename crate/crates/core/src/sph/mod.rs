//! Spherical harmonics and the representation theory of SO(3) needed by the
//! invariants: rotations, Wigner-D matrices and Clebsch-Gordan matrices.
//!
//! Conventions used throughout the crate:
//!
//! - `Y_n^m` is orthonormal on the unit sphere and carries the Condon-Shortley
//!   phase, so `Y_n^{-m} = (-1)^m conj(Y_n^m)`.
//! - `theta` is measured from the `+x3` axis, `phi` in the `x1`-`x2` plane.
//! - [`wigner_d`] returns the matrix that steers harmonics evaluated at a
//!   rotated direction: `Y_n^m(R x) = sum_{m'} D_n(R)[m', m] Y_n^{m'}(x)`.
//!   With this convention `D_n(R1 R2) = D_n(R2) D_n(R1)` and the coefficient
//!   row of `f(R .)` is `F D_n(R)^T`.
//! - Vectors of order-indexed coefficients are stored with `m = -n..=n`
//!   mapped to positions `0..2n+1`.

mod clebsch;
mod harmonics;
mod rotation;
mod wigner;

pub use clebsch::{clebsch_gordan, CgCache, CgMatrix};
pub use harmonics::{eval_sh, sh_index, sh_table, SphericalCoords};
pub use rotation::{octahedral_group, random_rotation, Rotation};
pub use wigner::{rotate_fourier_vector, rotate_with_wigner, small_d, wigner_d, FourierVector, WignerD};
