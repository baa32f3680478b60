use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{LriError, Result};

/// Spherical coordinates of a point: radius, elevation from `+x3` and
/// azimuth in `[0, 2 pi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalCoords {
    pub rho: f64,
    pub theta: f64,
    pub phi: f64,
}

impl SphericalCoords {
    /// Converts Cartesian `(x1, x2, x3)`. The origin maps to `theta = phi = 0`.
    pub fn from_cartesian(p: [f64; 3]) -> Self {
        let rho = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        if rho == 0.0 {
            return SphericalCoords {
                rho: 0.0,
                theta: 0.0,
                phi: 0.0,
            };
        }
        let theta = (p[2] / rho).clamp(-1.0, 1.0).acos();
        let mut phi = p[1].atan2(p[0]);
        if phi < 0.0 {
            phi += 2.0 * PI;
        }
        if phi >= 2.0 * PI {
            phi = 0.0;
        }
        SphericalCoords { rho, theta, phi }
    }

    pub fn to_cartesian(&self) -> [f64; 3] {
        let st = self.theta.sin();
        [
            self.rho * st * self.phi.cos(),
            self.rho * st * self.phi.sin(),
            self.rho * self.theta.cos(),
        ]
    }
}

/// Position of `(n, m)` in a table holding all degrees `0..=N`.
#[inline]
pub fn sh_index(n: usize, m: i64) -> usize {
    n * n + (n as i64 + m) as usize
}

/// Evaluates every `Y_n^m` with `n <= max_degree` at one direction.
///
/// The result is indexed by [`sh_index`] and has `(max_degree + 1)^2` entries.
pub fn sh_table(max_degree: usize, theta: f64, phi: f64) -> Vec<Complex64> {
    let size = (max_degree + 1) * (max_degree + 1);
    let mut out = vec![Complex64::new(0.0, 0.0); size];
    let plm = normalized_legendre(max_degree, theta.cos(), theta.sin());
    for m in 0..=max_degree {
        let phase = Complex64::from_polar(1.0, m as f64 * phi);
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        for n in m..=max_degree {
            let y = phase * plm[legendre_index(n, m)];
            out[sh_index(n, m as i64)] = y;
            if m > 0 {
                out[sh_index(n, -(m as i64))] = y.conj() * sign;
            }
        }
    }
    out
}

/// Orthonormal complex spherical harmonic `Y_n^m(theta, phi)`.
pub fn eval_sh(n: usize, m: i64, theta: f64, phi: f64) -> Result<Complex64> {
    if m.unsigned_abs() as usize > n {
        return Err(LriError::Domain(format!(
            "spherical harmonic order {m} exceeds degree {n}"
        )));
    }
    let am = m.unsigned_abs() as usize;
    let plm = normalized_legendre(n, theta.cos(), theta.sin());
    let y = Complex64::from_polar(1.0, am as f64 * phi) * plm[legendre_index(n, am)];
    if m >= 0 {
        Ok(y)
    } else if am % 2 == 0 {
        Ok(y.conj())
    } else {
        Ok(-y.conj())
    }
}

#[inline]
fn legendre_index(n: usize, m: usize) -> usize {
    n * (n + 1) / 2 + m
}

/// Associated Legendre functions scaled so that `P(cos theta) e^{i m phi}` is
/// orthonormal on the sphere, Condon-Shortley phase included, `m >= 0`.
fn normalized_legendre(max_degree: usize, x: f64, s: f64) -> Vec<f64> {
    let s = s.abs();
    let mut p = vec![0.0; legendre_index(max_degree, max_degree) + 1];
    p[0] = 0.5 / PI.sqrt();
    for m in 1..=max_degree {
        let mf = m as f64;
        p[legendre_index(m, m)] =
            -((2.0 * mf + 1.0) / (2.0 * mf)).sqrt() * s * p[legendre_index(m - 1, m - 1)];
    }
    for m in 0..max_degree {
        p[legendre_index(m + 1, m)] = (2.0 * m as f64 + 3.0).sqrt() * x * p[legendre_index(m, m)];
    }
    for m in 0..=max_degree {
        let mf = m as f64;
        for n in (m + 2)..=max_degree {
            let nf = n as f64;
            let a = ((4.0 * nf * nf - 1.0) / (nf * nf - mf * mf)).sqrt();
            let b = (((nf - 1.0) * (nf - 1.0) - mf * mf) / (4.0 * (nf - 1.0) * (nf - 1.0) - 1.0))
                .sqrt();
            p[legendre_index(n, m)] =
                a * (x * p[legendre_index(n - 1, m)] - b * p[legendre_index(n - 2, m)]);
        }
    }
    p
}
