use std::fs;
use std::path::Path;

use crate::error::{LriError, Result};
use crate::sph::Rotation;

/// Dense real 3D grid in C order (`x3` fastest) with an optional mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    shape: [usize; 3],
    data: Vec<f64>,
    mask: Option<Vec<bool>>,
}

impl Volume3D {
    pub fn new(shape: [usize; 3], data: Vec<f64>) -> Result<Self> {
        let len = shape.iter().product::<usize>();
        if data.len() != len {
            return Err(LriError::Shape(format!(
                "volume of shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        if shape.contains(&0) {
            return Err(LriError::Shape("volume dimensions must be positive".into()));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(LriError::Domain(format!("non-finite voxel at flat index {bad}")));
        }
        Ok(Volume3D {
            shape,
            data,
            mask: None,
        })
    }

    pub fn zeros(shape: [usize; 3]) -> Self {
        Volume3D {
            shape,
            data: vec![0.0; shape.iter().product()],
            mask: None,
        }
    }

    pub fn from_fn(shape: [usize; 3], mut f: impl FnMut([usize; 3]) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.iter().product());
        for i in 0..shape[0] {
            for j in 0..shape[1] {
                for k in 0..shape[2] {
                    data.push(f([i, j, k]));
                }
            }
        }
        Volume3D {
            shape,
            data,
            mask: None,
        }
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.data.len() {
            return Err(LriError::Shape("mask shape differs from volume".into()));
        }
        if !mask.iter().any(|&b| b) {
            return Err(LriError::Domain("mask selects no voxel".into()));
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    #[inline]
    pub fn index(&self, p: [usize; 3]) -> usize {
        (p[0] * self.shape[1] + p[1]) * self.shape[2] + p[2]
    }

    #[inline]
    pub fn get(&self, p: [usize; 3]) -> f64 {
        self.data[self.index(p)]
    }

    /// Value at signed coordinates, zero outside the grid.
    #[inline]
    pub fn get_or_zero(&self, p: [i64; 3]) -> f64 {
        if (0..3).all(|k| p[k] >= 0 && (p[k] as usize) < self.shape[k]) {
            self.get([p[0] as usize, p[1] as usize, p[2] as usize])
        } else {
            0.0
        }
    }

    #[inline]
    pub fn set(&mut self, p: [usize; 3], v: f64) {
        let i = self.index(p);
        self.data[i] = v;
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Geometric centre `(d - 1) / 2` per axis.
    pub fn center(&self) -> [f64; 3] {
        self.shape.map(|d| (d as f64 - 1.0) / 2.0)
    }

    /// Trilinear sample at fractional coordinates, zero outside the grid.
    pub fn sample_trilinear(&self, p: [f64; 3]) -> f64 {
        let base = p.map(|v| v.floor());
        let frac = [p[0] - base[0], p[1] - base[1], p[2] - base[2]];
        let b = base.map(|v| v as i64);
        let mut acc = 0.0;
        for corner in 0..8u8 {
            let mut w = 1.0;
            let mut q = [0i64; 3];
            for k in 0..3 {
                let hi = corner >> k & 1 == 1;
                q[k] = b[k] + hi as i64;
                w *= if hi { frac[k] } else { 1.0 - frac[k] };
            }
            if w != 0.0 {
                acc += w * self.get_or_zero(q);
            }
        }
        acc
    }

    /// `I'(x) = I(R^{-1} (x - c) + c)` with trilinear interpolation about the
    /// geometric centre `c`.
    pub fn rotated(&self, rot: &Rotation) -> Volume3D {
        let c = self.center();
        let inv = rot.inverse();
        let mut out = Volume3D::from_fn(self.shape, |p| {
            let d = [p[0] as f64 - c[0], p[1] as f64 - c[1], p[2] as f64 - c[2]];
            let s = inv.apply(d);
            self.sample_trilinear([s[0] + c[0], s[1] + c[1], s[2] + c[2]])
        });
        out.mask = self.mask.as_ref().map(|m| {
            let src = Volume3D {
                shape: self.shape,
                data: m.iter().map(|&b| b as u8 as f64).collect(),
                mask: None,
            };
            src.rotated(rot).data.iter().map(|&v| v > 0.5).collect()
        });
        out
    }

    /// Exact rotation by a lattice-preserving rotation about the centre of a
    /// cubic volume.
    pub fn rotated_exact(&self, rot: &Rotation) -> Result<Volume3D> {
        if !rot.is_lattice_preserving() {
            return Err(LriError::Domain("rotation does not preserve the voxel lattice".into()));
        }
        if self.shape[0] != self.shape[1] || self.shape[1] != self.shape[2] {
            return Err(LriError::Shape("exact rotation requires a cubic volume".into()));
        }
        // twice-centred integer coordinates keep even sizes exact
        let d = self.shape[0] as i64;
        let inv = rot.inverse();
        let mut out = Volume3D::zeros(self.shape);
        let mut mask = self.mask.as_ref().map(|_| vec![false; self.data.len()]);
        for i in 0..self.data.len() {
            let p = [i / (self.shape[1] * self.shape[2]), i / self.shape[2] % self.shape[1], i % self.shape[2]];
            let twice = p.map(|v| 2 * v as i64 - (d - 1));
            let src = inv.apply(twice.map(|v| v as f64));
            let q = src.map(|v| ((v.round() as i64 + d - 1) / 2) as usize);
            let j = self.index(q);
            out.data[i] = self.data[j];
            if let (Some(dst), Some(srcm)) = (mask.as_mut(), self.mask.as_ref()) {
                dst[i] = srcm[j];
            }
        }
        out.mask = mask;
        Ok(out)
    }

    /// Integer translation with zero fill.
    pub fn shifted(&self, offset: [i64; 3]) -> Volume3D {
        Volume3D::from_fn(self.shape, |p| {
            self.get_or_zero([
                p[0] as i64 - offset[0],
                p[1] as i64 - offset[1],
                p[2] as i64 - offset[2],
            ])
        })
    }

    /// Little-endian `f32`, C order.
    pub fn to_f32_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .flat_map(|&v| (v as f32).to_le_bytes())
            .collect()
    }

    pub fn from_f32_bytes(shape: [usize; 3], bytes: &[u8]) -> Result<Self> {
        if bytes.len() % 4 != 0 {
            return Err(LriError::Shape("raw volume length is not a multiple of 4".into()));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Volume3D::new(shape, data)
    }

    pub fn write_f32raw(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_f32_bytes()).map_err(|e| LriError::io(path, e))
    }

    pub fn read_f32raw(path: &Path, shape: [usize; 3]) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| LriError::io(path, e))?;
        Volume3D::from_f32_bytes(shape, &bytes).map_err(|e| LriError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}
