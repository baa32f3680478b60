use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::rotation::Rotation;
use crate::error::{LriError, Result};

/// Degree-`n` row of spherical Fourier coefficients, orders `-n..=n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierVector {
    degree: usize,
    coeffs: Vec<Complex64>,
}

impl FourierVector {
    pub fn new(degree: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != 2 * degree + 1 {
            return Err(LriError::Shape(format!(
                "degree {degree} Fourier vector needs {} coefficients, got {}",
                2 * degree + 1,
                coeffs.len()
            )));
        }
        Ok(FourierVector { degree, coeffs })
    }

    pub fn zeros(degree: usize) -> Self {
        FourierVector {
            degree,
            coeffs: vec![Complex64::new(0.0, 0.0); 2 * degree + 1],
        }
    }

    /// Builds a vector from `(re, im)` pairs listed from `m = -n` to `m = n`.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        if pairs.len() % 2 == 0 {
            return Err(LriError::Shape("Fourier vectors have odd length".into()));
        }
        let coeffs = pairs.iter().map(|&(re, im)| Complex64::new(re, im)).collect();
        FourierVector::new(pairs.len() / 2, coeffs)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    #[inline]
    pub fn get(&self, m: i64) -> Complex64 {
        self.coeffs[(self.degree as i64 + m) as usize]
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn scale(&self, factor: Complex64) -> Self {
        FourierVector {
            degree: self.degree,
            coeffs: self.coeffs.iter().map(|c| c * factor).collect(),
        }
    }

    /// Random coefficients of a real-valued function: `F^0` real, negative
    /// orders mirrored from positive ones, entries drawn from `U(-1, 1)`.
    pub fn random_real<R: rand::Rng + ?Sized>(degree: usize, rng: &mut R) -> Self {
        let n = degree as i64;
        let mut f = FourierVector::zeros(degree);
        f.coeffs[degree] = Complex64::new(rng.gen_range(-1.0..1.0), 0.0);
        for m in 1..=n {
            let c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            f.coeffs[(n + m) as usize] = c;
            f.coeffs[(n - m) as usize] = c.conj() * sign;
        }
        f
    }

    /// Largest violation of `F^{-m} = (-1)^m conj(F^m)`, the condition for the
    /// coefficients of a real-valued function.
    pub fn real_symmetry_error(&self) -> f64 {
        let n = self.degree as i64;
        (0..=n)
            .map(|m| {
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                (self.get(-m) - self.get(m).conj() * sign).norm()
            })
            .fold(0.0, f64::max)
    }
}

/// Wigner-D matrix of one degree, row-major with rows indexed by `m'`.
#[derive(Debug, Clone, PartialEq)]
pub struct WignerD {
    degree: usize,
    data: Vec<Complex64>,
}

impl WignerD {
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dim(&self) -> usize {
        2 * self.degree + 1
    }

    /// Entry `[m', m]`.
    #[inline]
    pub fn get(&self, m_row: i64, m_col: i64) -> Complex64 {
        let n = self.degree as i64;
        self.data[((m_row + n) * (2 * n + 1) + m_col + n) as usize]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn matmul(&self, other: &WignerD) -> WignerD {
        let d = self.dim();
        let mut data = vec![Complex64::new(0.0, 0.0); d * d];
        for i in 0..d {
            for k in 0..d {
                let a = self.data[i * d + k];
                for j in 0..d {
                    data[i * d + j] += a * other.data[k * d + j];
                }
            }
        }
        WignerD {
            degree: self.degree,
            data,
        }
    }

    pub fn conj(&self) -> WignerD {
        WignerD {
            degree: self.degree,
            data: self.data.iter().map(|c| c.conj()).collect(),
        }
    }

    /// Max-abs entry of `D D^H - I`.
    pub fn unitarity_error(&self) -> f64 {
        let d = self.dim();
        let mut err: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                let dot: Complex64 = (0..d)
                    .map(|k| self.data[i * d + k] * self.data[j * d + k].conj())
                    .sum();
                let target = if i == j { 1.0 } else { 0.0 };
                err = err.max((dot - target).norm());
            }
        }
        err
    }

    pub fn max_abs_diff(&self, other: &WignerD) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Real Wigner small-d matrix `d_n(beta)`, row-major, rows indexed by `m'`.
///
/// Built by repeatedly coupling with spin one half: each half-integer step
/// keeps the stretched component of `d_{j-1/2} (x) d_{1/2}`, which only
/// involves positive square-root weights and stays stable for high degrees.
pub fn small_d(degree: usize, beta: f64) -> Vec<f64> {
    let (s, c) = (beta / 2.0).sin_cos();
    // d_{1/2}[mu'][mu] with index 0 <-> -1/2, 1 <-> +1/2
    let half = [[c, s], [-s, c]];
    let mut cur = vec![1.0];
    for tj in 1..=(2 * degree) {
        let size = tj + 1;
        let old = tj;
        let mut next = vec![0.0; size * size];
        let t = tj as f64;
        for ip in 0..size {
            for i in 0..size {
                let mut acc = 0.0;
                // mu' = +1/2 uses old row ip-1, mu' = -1/2 uses old row ip
                for (mup, row, wp) in [
                    (1usize, ip.wrapping_sub(1), (ip as f64 / t).sqrt()),
                    (0usize, ip, ((tj - ip) as f64 / t).sqrt()),
                ] {
                    if row >= old || wp == 0.0 {
                        continue;
                    }
                    for (mu, col, w) in [
                        (1usize, i.wrapping_sub(1), (i as f64 / t).sqrt()),
                        (0usize, i, ((tj - i) as f64 / t).sqrt()),
                    ] {
                        if col >= old || w == 0.0 {
                            continue;
                        }
                        acc += wp * w * cur[row * old + col] * half[mup][mu];
                    }
                }
                next[ip * size + i] = acc;
            }
        }
        cur = next;
    }
    cur
}

/// Wigner-D matrix of degree `n` for `rot`.
///
/// Satisfies `Y_n^m(R x) = sum_{m'} D[m', m] Y_n^{m'}(x)`, so for the
/// coefficient row `F` of `f`, the row of `f(R .)` is `F D`.
pub fn wigner_d(degree: usize, rot: &Rotation) -> Result<WignerD> {
    if rot.orthogonality_error() > 1e-9 || (rot.det() - 1.0).abs() > 1e-9 {
        return Err(LriError::Domain("Wigner-D requires a proper rotation".into()));
    }
    let (alpha, beta, gamma) = rot.to_euler_zyz();
    let d = small_d(degree, beta);
    let n = degree as i64;
    let dim = 2 * degree + 1;
    let mut data = vec![Complex64::new(0.0, 0.0); dim * dim];
    for mp in -n..=n {
        for m in -n..=n {
            // conjugate transpose of exp(-i m' a) d[m', m] exp(-i m g)
            let dv = d[((m + n) * (2 * n + 1) + mp + n) as usize];
            let phase = m as f64 * alpha + mp as f64 * gamma;
            data[((mp + n) * (2 * n + 1) + m + n) as usize] = Complex64::from_polar(dv, phase);
        }
    }
    Ok(WignerD { degree, data })
}

/// Coefficients of the rotated function `f(R .)` given those of `f`.
///
/// Under the steering convention of [`wigner_d`] this is the row
/// `F D_n(R)^T`; norms are preserved because `D_n(R)` is unitary.
pub fn rotate_fourier_vector(f: &FourierVector, rot: &Rotation) -> Result<FourierVector> {
    let d = wigner_d(f.degree(), rot)?;
    rotate_with_wigner(f, &d)
}

/// Same as [`rotate_fourier_vector`] with a precomputed matrix.
pub fn rotate_with_wigner(f: &FourierVector, d: &WignerD) -> Result<FourierVector> {
    if f.degree() != d.degree() {
        return Err(LriError::Shape(format!(
            "Fourier vector degree {} does not match Wigner-D degree {}",
            f.degree(),
            d.degree()
        )));
    }
    let n = f.degree() as i64;
    let coeffs = (-n..=n)
        .map(|mp| (-n..=n).map(|m| d.get(mp, m) * f.get(m)).sum())
        .collect();
    FourierVector::new(f.degree(), coeffs)
}
