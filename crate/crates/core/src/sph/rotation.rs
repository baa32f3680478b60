use std::ops::Mul;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{LriError, Result};

const ORTHO_TOL: f64 = 1e-9;

/// A proper 3D rotation stored as a row-major orthogonal matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation {
    m: [[f64; 3]; 3],
}

impl Rotation {
    pub const IDENTITY: Rotation = Rotation {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    /// Validates orthogonality and a positive determinant.
    pub fn from_matrix(m: [[f64; 3]; 3]) -> Result<Self> {
        let r = Rotation { m };
        if r.orthogonality_error() > ORTHO_TOL || (r.det() - 1.0).abs() > ORTHO_TOL {
            return Err(LriError::Domain(format!(
                "matrix is not a proper rotation (orthogonality error {:.3e}, det {:.6})",
                r.orthogonality_error(),
                r.det()
            )));
        }
        Ok(r)
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation {
            m: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn about_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation {
            m: [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
        }
    }

    pub fn about_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation {
            m: [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]],
        }
    }

    /// `Rz(alpha) Ry(beta) Rz(gamma)`.
    pub fn from_euler_zyz(alpha: f64, beta: f64, gamma: f64) -> Self {
        Rotation::about_z(alpha) * Rotation::about_y(beta) * Rotation::about_z(gamma)
    }

    /// ZYZ Euler angles with `beta` in `[0, pi]`. At the poles `gamma` is 0.
    pub fn to_euler_zyz(&self) -> (f64, f64, f64) {
        let m = &self.m;
        let beta = m[2][2].clamp(-1.0, 1.0).acos();
        let sb = (m[0][2] * m[0][2] + m[1][2] * m[1][2]).sqrt();
        if sb > 1e-12 {
            let alpha = m[1][2].atan2(m[0][2]);
            let gamma = m[2][1].atan2(-m[2][0]);
            (alpha, beta, gamma)
        } else if m[2][2] > 0.0 {
            (m[1][0].atan2(m[0][0]), 0.0, 0.0)
        } else {
            ((-m[0][1]).atan2(m[1][1]), std::f64::consts::PI, 0.0)
        }
    }

    /// Rotation from a unit quaternion `(w, x, y, z)`; the input is normalised.
    pub fn from_quaternion(q: [f64; 4]) -> Self {
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let [w, x, y, z] = q.map(|v| v / norm);
        Rotation {
            m: [
                [
                    1.0 - 2.0 * (y * y + z * z),
                    2.0 * (x * y - z * w),
                    2.0 * (x * z + y * w),
                ],
                [
                    2.0 * (x * y + z * w),
                    1.0 - 2.0 * (x * x + z * z),
                    2.0 * (y * z - x * w),
                ],
                [
                    2.0 * (x * z - y * w),
                    2.0 * (y * z + x * w),
                    1.0 - 2.0 * (x * x + y * y),
                ],
            ],
        }
    }

    pub fn transpose(&self) -> Self {
        let mut t = [[0.0; 3]; 3];
        for (i, row) in t.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.m[j][i];
            }
        }
        Rotation { m: t }
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.m;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Max-abs entry of `R^T R - I`.
    pub fn orthogonality_error(&self) -> f64 {
        let mut err: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| self.m[k][i] * self.m[k][j]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                err = err.max((dot - target).abs());
            }
        }
        err
    }

    /// True when every entry is 0 or +-1, i.e. the rotation maps the voxel
    /// lattice onto itself.
    pub fn is_lattice_preserving(&self) -> bool {
        self.m
            .iter()
            .flatten()
            .all(|v| v.abs() < 1e-12 || (v.abs() - 1.0).abs() < 1e-12)
    }
}

impl Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Rotation) -> Rotation {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.m[i][k] * rhs.m[k][j]).sum();
            }
        }
        Rotation { m: out }
    }
}

/// Haar-uniform rotation via a normalised Gaussian quaternion.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
    let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    Rotation::from_quaternion(q)
}

/// The 24 signed permutation matrices with determinant +1.
pub fn octahedral_group() -> Vec<Rotation> {
    const PERMS: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let mut out = Vec::with_capacity(24);
    for perm in PERMS {
        for signs in 0..8u8 {
            let mut m = [[0.0; 3]; 3];
            for (row, &col) in perm.iter().enumerate() {
                m[row][col] = if signs >> row & 1 == 1 { -1.0 } else { 1.0 };
            }
            let r = Rotation { m };
            if r.det() > 0.0 {
                out.push(r);
            }
        }
    }
    out
}
