//! Learnable solid spherical harmonic kernels `h_{q,n}(rho) Y_n^m`.
//!
//! Radial profiles are linear combinations of unit-spaced triangle functions
//! `psi_j(rho) = tri(rho - j)`; a kernel of odd size `c` uses `c - 1` of them
//! (`j = 0..=c-2`), with `rho` measured in voxels from the centre voxel.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{LriError, Result};
use crate::sph::{sh_index, sh_table, SphericalCoords};

/// Trainable weights `w_{q,n,j}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialProfileBank {
    streams: usize,
    max_degree: usize,
    radial_count: usize,
    weights: Vec<f64>,
}

impl RadialProfileBank {
    pub fn zeros(streams: usize, max_degree: usize, radial_count: usize) -> Self {
        RadialProfileBank {
            streams,
            max_degree,
            radial_count,
            weights: vec![0.0; streams * (max_degree + 1) * radial_count],
        }
    }

    pub fn from_weights(
        streams: usize,
        max_degree: usize,
        radial_count: usize,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if weights.len() != streams * (max_degree + 1) * radial_count {
            return Err(LriError::Shape(format!(
                "radial bank ({streams}, {}, {radial_count}) needs {} weights, got {}",
                max_degree + 1,
                streams * (max_degree + 1) * radial_count,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(LriError::Numerical("non-finite radial weight".into()));
        }
        Ok(RadialProfileBank {
            streams,
            max_degree,
            radial_count,
            weights,
        })
    }

    pub fn streams(&self) -> usize {
        self.streams
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    /// `J + 1`.
    pub fn radial_count(&self) -> usize {
        self.radial_count
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    #[inline]
    pub fn offset(&self, q: usize, n: usize) -> usize {
        (q * (self.max_degree + 1) + n) * self.radial_count
    }

    /// Weights `w_{q,n,.}`.
    pub fn profile(&self, q: usize, n: usize) -> &[f64] {
        let o = self.offset(q, n);
        &self.weights[o..o + self.radial_count]
    }
}

/// `tri(rho - j)`.
#[inline]
pub fn radial_basis(j: usize, rho: f64) -> f64 {
    let d = (rho - j as f64).abs();
    if d < 1.0 {
        1.0 - d
    } else {
        0.0
    }
}

/// `h_{q,n}(rho) = sum_j w_{q,n,j} psi_j(rho)`.
pub fn eval_radial(bank: &RadialProfileBank, q: usize, n: usize, rho: f64) -> f64 {
    bank.profile(q, n)
        .iter()
        .enumerate()
        .map(|(j, w)| w * radial_basis(j, rho))
        .sum()
}

/// Number of triangle functions for kernel size `c`.
pub fn radial_count_for(kernel_size: usize) -> usize {
    kernel_size.saturating_sub(1).max(1)
}

/// Sampling bound `floor(pi c / 4)` on the usable SH degree.
pub fn max_degree_bound(kernel_size: usize) -> usize {
    (std::f64::consts::PI * kernel_size as f64 / 4.0).floor() as usize
}

/// Warning text when `degree` exceeds the sampling bound of `kernel_size`.
pub fn degree_warning(kernel_size: usize, degree: usize) -> Option<String> {
    let bound = max_degree_bound(kernel_size);
    (degree > bound).then(|| {
        format!("degree {degree} exceeds the sampling bound {bound} for kernel size {kernel_size}")
    })
}

/// `w ~ N(0, 1)` i.i.d.
pub fn init_weights<R: Rng + ?Sized>(
    rng: &mut R,
    streams: usize,
    max_degree: usize,
    radial_count: usize,
) -> RadialProfileBank {
    let weights = (0..streams * (max_degree + 1) * radial_count)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    RadialProfileBank {
        streams,
        max_degree,
        radial_count,
        weights,
    }
}

pub(crate) fn check_kernel_size(kernel_size: usize) -> Result<()> {
    if kernel_size % 2 == 0 {
        return Err(LriError::Config(format!(
            "kernel size must be odd, got {kernel_size}"
        )));
    }
    Ok(())
}

/// One voxel of a kernel support with its radial and angular factors.
#[derive(Debug, Clone)]
pub struct BasisTap {
    pub offset: [i64; 3],
    pub rho: f64,
    /// Nonzero `(j, psi_j(rho))`, at most two entries.
    pub radial: Vec<(usize, f64)>,
    /// `Y_n^m` for `n <= N`, `m >= 0`, indexed by [`nonneg_index`]; all
    /// `n > 0` entries are zero at the centre voxel.
    pub angular: Vec<Complex64>,
}

/// Index of `(n, m)` with `0 <= m <= n` in a degree-major table.
#[inline]
pub fn nonneg_index(n: usize, m: usize) -> usize {
    n * (n + 1) / 2 + m
}

/// Sampled basis functions `psi_j(rho) Y_n^m` on a `c^3` grid, shared by
/// every stream.
#[derive(Debug, Clone)]
pub struct SolidBasis {
    kernel_size: usize,
    max_degree: usize,
    radial_count: usize,
    taps: Vec<BasisTap>,
}

impl SolidBasis {
    pub fn new(kernel_size: usize, max_degree: usize, radial_count: usize) -> Result<Self> {
        check_kernel_size(kernel_size)?;
        let r = (kernel_size / 2) as i64;
        let mut taps = Vec::new();
        for a in -r..=r {
            for b in -r..=r {
                for c in -r..=r {
                    let s = SphericalCoords::from_cartesian([a as f64, b as f64, c as f64]);
                    let radial: Vec<_> = (0..radial_count)
                        .map(|j| (j, radial_basis(j, s.rho)))
                        .filter(|&(_, v)| v != 0.0)
                        .collect();
                    let table = sh_table(max_degree, s.theta, s.phi);
                    let mut angular = vec![Complex64::new(0.0, 0.0); nonneg_index(max_degree, max_degree) + 1];
                    for n in 0..=max_degree {
                        for m in 0..=n {
                            if s.rho > 0.0 || n == 0 {
                                angular[nonneg_index(n, m)] = table[sh_index(n, m as i64)];
                            }
                        }
                    }
                    taps.push(BasisTap {
                        offset: [a, b, c],
                        rho: s.rho,
                        radial,
                        angular,
                    });
                }
            }
        }
        Ok(SolidBasis {
            kernel_size,
            max_degree,
            radial_count,
            taps,
        })
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn radial_count(&self) -> usize {
        self.radial_count
    }

    /// Taps in C order of the offset grid.
    pub fn taps(&self) -> &[BasisTap] {
        &self.taps
    }
}

/// `kappa_{q,n}^m` sampled on a `c^3` grid, C order of offsets `-r..=r`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedKernel {
    pub degree: usize,
    pub order: i64,
    pub stream: usize,
    pub size: usize,
    pub values: Vec<Complex64>,
}

impl DiscretizedKernel {
    /// Value at offset `(x1, x2, x3)` from the centre voxel.
    pub fn at(&self, offset: [i64; 3]) -> Complex64 {
        let r = (self.size / 2) as i64;
        let s = self.size as i64;
        self.values[((offset[0] + r) * s * s + (offset[1] + r) * s + offset[2] + r) as usize]
    }
}

/// Samples `h_{q,n}(rho) Y_n^m(theta, phi)` at voxel offsets.
pub fn discretize_kernel(
    bank: &RadialProfileBank,
    q: usize,
    n: usize,
    m: i64,
    kernel_size: usize,
) -> Result<DiscretizedKernel> {
    check_kernel_size(kernel_size)?;
    if n > bank.max_degree() || m.unsigned_abs() as usize > n || q >= bank.streams() {
        return Err(LriError::Domain(format!(
            "kernel index (q={q}, n={n}, m={m}) outside the bank"
        )));
    }
    let r = (kernel_size / 2) as i64;
    let mut values = Vec::with_capacity(kernel_size.pow(3));
    for a in -r..=r {
        for b in -r..=r {
            for c in -r..=r {
                let s = SphericalCoords::from_cartesian([a as f64, b as f64, c as f64]);
                let v = if s.rho == 0.0 && n > 0 {
                    Complex64::new(0.0, 0.0)
                } else {
                    let y = crate::sph::eval_sh(n, m, s.theta, s.phi)?;
                    y * eval_radial(bank, q, n, s.rho)
                };
                values.push(v);
            }
        }
    }
    Ok(DiscretizedKernel {
        degree: n,
        order: m,
        stream: q,
        size: kernel_size,
        values,
    })
}
