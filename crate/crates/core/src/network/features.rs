//! Exact training-time feature caches.
//!
//! Pooling precedes every nonlinearity and the Fourier maps are linear in the
//! layer weights, so each pooled feature of a volume is a fixed polynomial in
//! those weights:
//!
//! - sse: `p_{q,n} = w_{q,n}^T M_n w_{q,n}` with
//!   `M_n[j][k] = mean_x sum_m Re(conj(G_{n,m,j}) G_{n,m,k}) / (2n+1)`;
//! - ssb: `p_{q,t} = sum_{jkl} T_t[j][k][l] w_{q,n,j} w_{q,n',k} w_{q,l,l}`
//!   with `T_t` the pooled, parity-projected bispectrum of basis responses;
//! - z3: `p_q = sum_y K_q(y) A(y)` with `A` the mean input patch.
//!
//! The tensors depend on the volume only, so they are computed once and
//! reused across iterations and seeds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{output_grid, ModelConfig, ModelKind};
use crate::error::{LriError, Result};
use crate::invariants::BispectrumTriple;
use crate::kernels::SolidBasis;
use crate::layer::{pooling_positions, BasisResponses};
use crate::sph::CgCache;
use crate::volume::Volume3D;
use crate::Complex64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureCache {
    /// Per degree, an `R x R` matrix.
    Spectrum(Vec<Vec<f64>>),
    /// Per triple, an `R x R x R` tensor.
    Bispectrum(Vec<Vec<f64>>),
    /// Mean input patch, `c^3` values in C order.
    MeanPatch(Vec<f64>),
}

/// Builds [`FeatureCache`]s for one model configuration.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    config: ModelConfig,
    basis: Option<SolidBasis>,
    cg: CgCache,
    triples: Vec<BispectrumTriple>,
}

impl FeatureExtractor {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let basis = match config.kind {
            ModelKind::Z3 => None,
            _ => Some(SolidBasis::new(config.kernel_size, config.max_degree, config.radial_count())?),
        };
        let (cg, triples) = if config.kind == ModelKind::Ssb {
            (CgCache::new(config.max_degree), config.triples())
        } else {
            (CgCache::new(0), Vec::new())
        };
        Ok(FeatureExtractor {
            config: *config,
            basis,
            cg,
            triples,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn extract(&self, vol: &Volume3D) -> Result<FeatureCache> {
        match (&self.basis, self.config.kind) {
            (None, _) => Ok(FeatureCache::MeanPatch(mean_patch(&self.config, vol)?)),
            (Some(basis), kind) => {
                let resp = BasisResponses::compute(vol, basis, self.config.stride, self.config.padding)?;
                let positions = pooling_positions(resp.grid(), vol.mask())?;
                Ok(if kind == ModelKind::Sse {
                    FeatureCache::Spectrum(spectrum_grams(&resp, &positions))
                } else {
                    FeatureCache::Bispectrum(self.bispectrum_tensors(&resp, &positions))
                })
            }
        }
    }

    /// Extracts every volume in parallel on the current rayon pool; results
    /// keep the input order.
    pub fn extract_all<F>(&self, count: usize, load: F) -> Result<Vec<FeatureCache>>
    where
        F: Fn(usize) -> Result<Volume3D> + Sync,
    {
        (0..count).into_par_iter().map(|i| self.extract(&load(i)?)).collect()
    }

    fn bispectrum_tensors(&self, resp: &BasisResponses, positions: &[usize]) -> Vec<Vec<f64>> {
        let r = resp.radial_count();
        let nmax = self.config.max_degree;
        // per triple: entries grouped by m1
        let grouped: Vec<Vec<(i64, Vec<(i64, f64)>)>> = self
            .triples
            .iter()
            .map(|t| {
                let block = self.cg.get(t.n, t.n_prime).block(t.ell);
                let ni = t.n as i64;
                (-ni..=ni)
                    .map(|m1| (m1, block.iter().filter(|e| e.0 == m1).map(|e| (e.1, e.2)).collect()))
                    .collect()
            })
            .collect();
        let mut tensors = vec![vec![0.0; r * r * r]; self.triples.len()];
        // g[n] holds (2n+1) x r values, order-major
        let mut g: Vec<Vec<Complex64>> = (0..=nmax).map(|n| vec![Complex64::new(0.0, 0.0); (2 * n + 1) * r]).collect();
        let mut s = vec![Complex64::new(0.0, 0.0); r * r];
        for &x in positions {
            for n in 0..=nmax {
                let ni = n as i64;
                for m in -ni..=ni {
                    for j in 0..r {
                        g[n][(m + ni) as usize * r + j] = resp.get(n, m, j, x);
                    }
                }
            }
            for (t, (triple, groups)) in self.triples.iter().zip(&grouped).enumerate() {
                let (n1, n2, l) = (triple.n as i64, triple.n_prime as i64, triple.ell as i64);
                let even = triple.is_even();
                let out = &mut tensors[t];
                for (m1, entries) in groups {
                    if entries.is_empty() {
                        continue;
                    }
                    s.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
                    for &(m2, c) in entries {
                        let b = &g[triple.n_prime][(m2 + n2) as usize * r..][..r];
                        let lr = &g[triple.ell][(m1 + m2 + l) as usize * r..][..r];
                        for k in 0..r {
                            let bk = b[k] * c;
                            for (ll, lv) in lr.iter().enumerate() {
                                s[k * r + ll] += bk * lv.conj();
                            }
                        }
                    }
                    let a = &g[triple.n][(m1 + n1) as usize * r..][..r];
                    for j in 0..r {
                        let aj = a[j];
                        let row = &mut out[j * r * r..(j + 1) * r * r];
                        if even {
                            for (o, sv) in row.iter_mut().zip(&s) {
                                *o += aj.re * sv.re - aj.im * sv.im;
                            }
                        } else {
                            for (o, sv) in row.iter_mut().zip(&s) {
                                *o += aj.re * sv.im + aj.im * sv.re;
                            }
                        }
                    }
                }
            }
        }
        let inv = 1.0 / positions.len() as f64;
        tensors.iter_mut().for_each(|t| t.iter_mut().for_each(|v| *v *= inv));
        tensors
    }
}

fn spectrum_grams(resp: &BasisResponses, positions: &[usize]) -> Vec<Vec<f64>> {
    let r = resp.radial_count();
    let inv = 1.0 / positions.len() as f64;
    (0..=resp.max_degree())
        .map(|n| {
            let mut m_nk = vec![0.0; r * r];
            for m in 0..=n {
                let factor = if m == 0 { 1.0 } else { 2.0 };
                for j in 0..r {
                    let gj = resp.map(n, m, j);
                    for k in j..r {
                        let gk = resp.map(n, m, k);
                        let acc: f64 = positions.iter().map(|&x| gj.re[x] * gk.re[x] + gj.im[x] * gk.im[x]).sum();
                        m_nk[j * r + k] += factor * acc;
                    }
                }
            }
            let norm = inv / (2 * n + 1) as f64;
            for j in 0..r {
                for k in j..r {
                    let v = m_nk[j * r + k] * norm;
                    m_nk[j * r + k] = v;
                    m_nk[k * r + j] = v;
                }
            }
            m_nk
        })
        .collect()
}

/// `A(y) = mean_x I(x + y)` over the pooled output positions, zero outside
/// the volume.
pub fn mean_patch(config: &ModelConfig, vol: &Volume3D) -> Result<Vec<f64>> {
    let grid = output_grid(config, vol)?;
    let positions = pooling_positions(&grid, vol.mask())?;
    let r = (config.kernel_size / 2) as i64;
    let centres: Vec<[i64; 3]> = positions.iter().map(|&i| grid.input_center(grid.out_coords(i))).collect();
    let inv = 1.0 / positions.len() as f64;
    let mut out = Vec::with_capacity(config.kernel_size.pow(3));
    for a in -r..=r {
        for b in -r..=r {
            for c in -r..=r {
                let s: f64 = centres.iter().map(|p| vol.get_or_zero([p[0] + a, p[1] + b, p[2] + c])).sum();
                out.push(s * inv);
            }
        }
    }
    Ok(out)
}

impl FeatureCache {
    fn check(&self, config: &ModelConfig, layer: &[f64]) -> Result<()> {
        let ok = match (self, config.kind) {
            (FeatureCache::Spectrum(m), ModelKind::Sse) => m.len() == config.max_degree + 1,
            (FeatureCache::Bispectrum(t), ModelKind::Ssb) => t.len() == config.channels_per_stream(),
            (FeatureCache::MeanPatch(a), ModelKind::Z3) => a.len() == config.kernel_size.pow(3),
            _ => false,
        };
        if !ok || layer.len() != config.layer_parameter_count() {
            return Err(LriError::Shape("feature cache does not match the model configuration".into()));
        }
        Ok(())
    }

    /// Pooled features, stream-major.
    pub fn features(&self, config: &ModelConfig, layer: &[f64]) -> Result<Vec<f64>> {
        self.check(config, layer)?;
        let r = config.radial_count();
        let deg_stride = r;
        let stream_stride = (config.max_degree + 1) * r;
        let triples = config.triples();
        let mut out = Vec::with_capacity(config.feature_width());
        for q in 0..config.streams {
            match self {
                FeatureCache::Spectrum(grams) => {
                    for (n, m) in grams.iter().enumerate() {
                        let w = &layer[q * stream_stride + n * deg_stride..][..r];
                        out.push(quadratic(m, w));
                    }
                }
                FeatureCache::Bispectrum(tensors) => {
                    let w = &layer[q * stream_stride..(q + 1) * stream_stride];
                    for (t, triple) in tensors.iter().zip(&triples) {
                        let a = &w[triple.n * r..][..r];
                        let b = &w[triple.n_prime * r..][..r];
                        let c = &w[triple.ell * r..][..r];
                        out.push(trilinear(t, a, b, c, r));
                    }
                }
                FeatureCache::MeanPatch(patch) => {
                    let taps = patch.len();
                    out.push(layer[q * taps..(q + 1) * taps].iter().zip(patch).map(|(k, a)| k * a).sum());
                }
            }
        }
        Ok(out)
    }

    /// Accumulates `d(sum_k dpooled[k] p_k) / d(layer)` into `grad`.
    pub fn backward(&self, config: &ModelConfig, layer: &[f64], dpooled: &[f64], grad: &mut [f64]) -> Result<()> {
        self.check(config, layer)?;
        let r = config.radial_count();
        let stream_stride = (config.max_degree + 1) * r;
        let width = config.channels_per_stream();
        let triples = config.triples();
        for q in 0..config.streams {
            let up = &dpooled[q * width..(q + 1) * width];
            match self {
                FeatureCache::Spectrum(grams) => {
                    for (n, m) in grams.iter().enumerate() {
                        if up[n] == 0.0 {
                            continue;
                        }
                        let off = q * stream_stride + n * r;
                        let w = &layer[off..off + r];
                        for j in 0..r {
                            let mw: f64 = (0..r).map(|k| m[j * r + k] * w[k]).sum();
                            grad[off + j] += 2.0 * up[n] * mw;
                        }
                    }
                }
                FeatureCache::Bispectrum(tensors) => {
                    let base = q * stream_stride;
                    let w = &layer[base..base + stream_stride];
                    for ((t, triple), &g) in tensors.iter().zip(&triples).zip(up) {
                        if g == 0.0 {
                            continue;
                        }
                        let a = &w[triple.n * r..][..r];
                        let b = &w[triple.n_prime * r..][..r];
                        let c = &w[triple.ell * r..][..r];
                        for j in 0..r {
                            for k in 0..r {
                                let row = &t[(j * r + k) * r..][..r];
                                let rc: f64 = row.iter().zip(c).map(|(x, y)| x * y).sum();
                                grad[base + triple.n * r + j] += g * rc * b[k];
                                grad[base + triple.n_prime * r + k] += g * rc * a[j];
                                let ab = g * a[j] * b[k];
                                for (l, x) in row.iter().enumerate() {
                                    grad[base + triple.ell * r + l] += ab * x;
                                }
                            }
                        }
                    }
                }
                FeatureCache::MeanPatch(patch) => {
                    let taps = patch.len();
                    for (gk, a) in grad[q * taps..(q + 1) * taps].iter_mut().zip(patch) {
                        *gk += up[0] * a;
                    }
                }
            }
        }
        Ok(())
    }
}

fn quadratic(m: &[f64], w: &[f64]) -> f64 {
    let r = w.len();
    (0..r).map(|j| w[j] * (0..r).map(|k| m[j * r + k] * w[k]).sum::<f64>()).sum()
}

fn trilinear(t: &[f64], a: &[f64], b: &[f64], c: &[f64], r: usize) -> f64 {
    let mut acc = 0.0;
    for j in 0..r {
        for k in 0..r {
            let row = &t[(j * r + k) * r..][..r];
            acc += a[j] * b[k] * row.iter().zip(c).map(|(x, y)| x * y).sum::<f64>();
        }
    }
    acc
}
