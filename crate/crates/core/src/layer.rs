//! The LRI layer.
//!
//! A volume is correlated with the sampled basis functions
//! `psi_j(rho) Y_n^m` once ("basis responses"); Fourier feature maps are the
//! weighted sums `F_{q,n}^m = sum_j w_{q,n,j} G_{n,m,j}`. Only orders
//! `m >= 0` are stored: for real inputs `F^{-m} = (-1)^m conj(F^m)`.
//!
//! The correlation is `F_n^m(x) = sum_y I(x + y) conj(kappa_n^m(y))`, i.e. the
//! projection of the neighbourhood of `x` onto the solid harmonic. Rotating
//! the input by a lattice rotation `R` gives `F'(R x) = F(x) conj(D_n(R))`, a
//! unitary mixing under which spectrum and bispectrum are unchanged.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LriError, Result};
use crate::invariants::{parity_project, BispectrumTriple};
use crate::kernels::{check_kernel_size, nonneg_index, RadialProfileBank, SolidBasis};
use crate::sph::CgCache;
use crate::volume::Volume3D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Only positions where the kernel fits inside the volume.
    None,
    /// Zero-padded borders; the output covers the whole (strided) volume.
    Zero,
}

/// Strided output positions and their input centres.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutputGrid {
    pub in_shape: [usize; 3],
    pub out_shape: [usize; 3],
    pub origin: [i64; 3],
    pub stride: usize,
}

impl OutputGrid {
    pub fn new(in_shape: [usize; 3], kernel_size: usize, stride: usize, padding: Padding) -> Result<Self> {
        check_kernel_size(kernel_size)?;
        if stride == 0 {
            return Err(LriError::Config("stride must be at least 1".into()));
        }
        let r = kernel_size / 2;
        let mut out_shape = [0; 3];
        let mut origin = [0; 3];
        for k in 0..3 {
            let d = in_shape[k];
            match padding {
                Padding::Zero => {
                    out_shape[k] = (d - 1) / stride + 1;
                }
                Padding::None => {
                    if d < kernel_size {
                        return Err(LriError::Shape(format!(
                            "volume extent {d} smaller than kernel size {kernel_size}"
                        )));
                    }
                    out_shape[k] = (d - kernel_size) / stride + 1;
                    origin[k] = r as i64;
                }
            }
        }
        Ok(OutputGrid {
            in_shape,
            out_shape,
            origin,
            stride,
        })
    }

    pub fn len(&self) -> usize {
        self.out_shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn out_index(&self, o: [usize; 3]) -> usize {
        (o[0] * self.out_shape[1] + o[1]) * self.out_shape[2] + o[2]
    }

    pub fn out_coords(&self, idx: usize) -> [usize; 3] {
        let s = self.out_shape;
        [idx / (s[1] * s[2]), idx / s[2] % s[1], idx % s[2]]
    }

    /// Input voxel at which the kernel is centred for output `o`.
    #[inline]
    pub fn input_center(&self, o: [usize; 3]) -> [i64; 3] {
        [0, 1, 2].map(|k| self.origin[k] + (self.stride * o[k]) as i64)
    }

    /// Input mask sampled at the kernel centres.
    pub fn downsample_mask(&self, mask: &[bool]) -> Vec<bool> {
        let s = self.in_shape;
        (0..self.len())
            .map(|i| {
                let p = self.input_center(self.out_coords(i));
                mask[(p[0] as usize * s[1] + p[1] as usize) * s[2] + p[2] as usize]
            })
            .collect()
    }
}

/// Kernel geometry shared by every stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: Padding,
    pub max_degree: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComplexMap {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexMap {
    fn zeros(len: usize) -> Self {
        ComplexMap {
            re: vec![0.0; len],
            im: vec![0.0; len],
        }
    }

    #[inline]
    pub fn get(&self, i: usize) -> Complex64 {
        Complex64::new(self.re[i], self.im[i])
    }
}

/// `G_{n,m,j} = I (star) conj(psi_j Y_n^m)` for `m >= 0`.
#[derive(Debug, Clone)]
pub struct BasisResponses {
    grid: OutputGrid,
    max_degree: usize,
    radial_count: usize,
    maps: Vec<ComplexMap>,
}

impl BasisResponses {
    pub fn compute(vol: &Volume3D, basis: &SolidBasis, stride: usize, padding: Padding) -> Result<Self> {
        let grid = OutputGrid::new(vol.shape(), basis.kernel_size(), stride, padding)?;
        let nr = basis.radial_count();
        let nang = nonneg_index(basis.max_degree(), basis.max_degree()) + 1;
        let mut maps = vec![ComplexMap::zeros(grid.len()); nang * nr];
        let [d0, d1, d2] = vol.shape();
        let [o0n, o1n, o2n] = grid.out_shape;
        let s = stride as i64;
        let data = vol.data();
        let mut row = vec![0.0; o2n];
        let mut coefs: Vec<(usize, f64, f64)> = Vec::new();
        for tap in basis.taps() {
            coefs.clear();
            for &(j, psi) in &tap.radial {
                for (a, y) in tap.angular.iter().enumerate() {
                    if y.re != 0.0 || y.im != 0.0 {
                        // conj(psi Y)
                        coefs.push((a * nr + j, psi * y.re, -psi * y.im));
                    }
                }
            }
            if coefs.is_empty() {
                continue;
            }
            let off = tap.offset;
            // o2 range keeping the input index inside [0, d2)
            let start2 = grid.origin[2] + off[2];
            let lo2 = if start2 >= 0 { 0 } else { ((-start2) + s - 1) / s };
            let hi2 = if start2 >= d2 as i64 {
                0
            } else {
                (((d2 as i64 - 1 - start2) / s) + 1).min(o2n as i64)
            };
            if lo2 >= hi2 {
                continue;
            }
            let (lo2, hi2) = (lo2 as usize, hi2 as usize);
            for o0 in 0..o0n {
                let i0 = grid.origin[0] + s * o0 as i64 + off[0];
                if i0 < 0 || i0 >= d0 as i64 {
                    continue;
                }
                for o1 in 0..o1n {
                    let i1 = grid.origin[1] + s * o1 as i64 + off[1];
                    if i1 < 0 || i1 >= d1 as i64 {
                        continue;
                    }
                    let base_in = (i0 as usize * d1 + i1 as usize) * d2;
                    for (t, o2) in (lo2..hi2).enumerate() {
                        row[t] = data[base_in + (start2 + s * o2 as i64) as usize];
                    }
                    let src = &row[..hi2 - lo2];
                    let base_out = (o0 * o1n + o1) * o2n;
                    for &(ch, cr, ci) in &coefs {
                        let map = &mut maps[ch];
                        let dst = &mut map.re[base_out + lo2..base_out + hi2];
                        for (d, v) in dst.iter_mut().zip(src) {
                            *d += cr * v;
                        }
                        if ci != 0.0 {
                            let dst = &mut map.im[base_out + lo2..base_out + hi2];
                            for (d, v) in dst.iter_mut().zip(src) {
                                *d += ci * v;
                            }
                        }
                    }
                }
            }
        }
        Ok(BasisResponses {
            grid,
            max_degree: basis.max_degree(),
            radial_count: nr,
            maps,
        })
    }

    pub fn grid(&self) -> &OutputGrid {
        &self.grid
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn radial_count(&self) -> usize {
        self.radial_count
    }

    #[inline]
    pub fn map(&self, n: usize, m: usize, j: usize) -> &ComplexMap {
        &self.maps[nonneg_index(n, m) * self.radial_count + j]
    }

    /// `G_{n,m,j}(x)` for any sign of `m`.
    #[inline]
    pub fn get(&self, n: usize, m: i64, j: usize, idx: usize) -> Complex64 {
        signed_get(self.map(n, m.unsigned_abs() as usize, j), m, idx)
    }
}

#[inline]
fn signed_get(map: &ComplexMap, m: i64, idx: usize) -> Complex64 {
    let v = map.get(idx);
    if m >= 0 {
        v
    } else if m % 2 == 0 {
        v.conj()
    } else {
        -v.conj()
    }
}

/// Spherical Fourier feature maps `F_{q,n}(x)`.
#[derive(Debug, Clone)]
pub struct FourierFeatureMaps {
    grid: OutputGrid,
    streams: usize,
    max_degree: usize,
    maps: Vec<ComplexMap>,
}

impl FourierFeatureMaps {
    /// Weighted sums of basis responses with the bank's radial weights.
    pub fn from_responses(resp: &BasisResponses, bank: &RadialProfileBank) -> Result<Self> {
        if bank.max_degree() > resp.max_degree() || bank.radial_count() != resp.radial_count() {
            return Err(LriError::Shape(format!(
                "bank (N={}, J+1={}) does not match responses (N={}, J+1={})",
                bank.max_degree(),
                bank.radial_count(),
                resp.max_degree(),
                resp.radial_count()
            )));
        }
        let nang = nonneg_index(bank.max_degree(), bank.max_degree()) + 1;
        let len = resp.grid.len();
        let mut maps = Vec::with_capacity(bank.streams() * nang);
        for q in 0..bank.streams() {
            for n in 0..=bank.max_degree() {
                for m in 0..=n {
                    let mut out = ComplexMap::zeros(len);
                    for (j, &w) in bank.profile(q, n).iter().enumerate() {
                        let g = resp.map(n, m, j);
                        for i in 0..len {
                            out.re[i] += w * g.re[i];
                            out.im[i] += w * g.im[i];
                        }
                    }
                    maps.push(out);
                }
            }
        }
        Ok(FourierFeatureMaps {
            grid: resp.grid,
            streams: bank.streams(),
            max_degree: bank.max_degree(),
            maps,
        })
    }

    pub fn grid(&self) -> &OutputGrid {
        &self.grid
    }

    pub fn streams(&self) -> usize {
        self.streams
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    #[inline]
    fn map(&self, q: usize, n: usize, m: usize) -> &ComplexMap {
        let nang = nonneg_index(self.max_degree, self.max_degree) + 1;
        &self.maps[q * nang + nonneg_index(n, m)]
    }

    /// `F_{q,n}^m(x)` for any sign of `m`.
    #[inline]
    pub fn get(&self, q: usize, n: usize, m: i64, idx: usize) -> Complex64 {
        signed_get(self.map(q, n, m.unsigned_abs() as usize), m, idx)
    }

    /// Full row `[F^{-n} .. F^n]` at one output position.
    pub fn vector(&self, q: usize, n: usize, idx: usize) -> Vec<Complex64> {
        let ni = n as i64;
        (-ni..=ni).map(|m| self.get(q, n, m, idx)).collect()
    }
}

/// Fourier feature maps of `vol` for every stream of `bank`.
pub fn fourier_feature_maps(
    vol: &Volume3D,
    bank: &RadialProfileBank,
    kernel_size: usize,
    stride: usize,
    padding: Padding,
) -> Result<FourierFeatureMaps> {
    let basis = SolidBasis::new(kernel_size, bank.max_degree(), bank.radial_count())?;
    let resp = BasisResponses::compute(vol, &basis, stride, padding)?;
    FourierFeatureMaps::from_responses(&resp, bank)
}

/// Which invariant a layer computes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InvariantKind {
    Spectrum,
    Bispectrum(Vec<BispectrumTriple>),
}

impl InvariantKind {
    pub fn channels(&self, max_degree: usize) -> usize {
        match self {
            InvariantKind::Spectrum => max_degree + 1,
            InvariantKind::Bispectrum(t) => t.len(),
        }
    }
}

/// Per-stream invariant channels over the output grid; channel
/// `q * channels + c` is stored contiguously.
#[derive(Debug, Clone)]
pub struct InvariantMaps {
    grid: OutputGrid,
    streams: usize,
    channels: usize,
    data: Vec<Vec<f64>>,
}

impl InvariantMaps {
    pub fn grid(&self) -> &OutputGrid {
        &self.grid
    }

    pub fn streams(&self) -> usize {
        self.streams
    }

    /// Channels per stream.
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn channel(&self, q: usize, c: usize) -> &[f64] {
        &self.data[q * self.channels + c]
    }

    /// Builds maps from raw channel data, `streams * channels` entries.
    pub fn from_channels(grid: OutputGrid, streams: usize, channels: usize, data: Vec<Vec<f64>>) -> Result<Self> {
        if data.len() != streams * channels || data.iter().any(|c| c.len() != grid.len()) {
            return Err(LriError::Shape("invariant channel data does not match grid".into()));
        }
        Ok(InvariantMaps {
            grid,
            streams,
            channels,
            data,
        })
    }
}

/// `G^SSE_{q,n}(x) = s_n(F_{q,n}(x))`.
pub fn sse_forward(maps: &FourierFeatureMaps) -> InvariantMaps {
    let len = maps.grid.len();
    let nmax = maps.max_degree;
    let mut data = Vec::with_capacity(maps.streams * (nmax + 1));
    for q in 0..maps.streams {
        for n in 0..=nmax {
            let mut ch = vec![0.0; len];
            let m0 = maps.map(q, n, 0);
            for i in 0..len {
                ch[i] = m0.re[i] * m0.re[i] + m0.im[i] * m0.im[i];
            }
            for m in 1..=n {
                let mm = maps.map(q, n, m);
                for i in 0..len {
                    ch[i] += 2.0 * (mm.re[i] * mm.re[i] + mm.im[i] * mm.im[i]);
                }
            }
            let norm = 1.0 / (2 * n + 1) as f64;
            ch.iter_mut().for_each(|v| *v *= norm);
            data.push(ch);
        }
    }
    InvariantMaps {
        grid: maps.grid,
        streams: maps.streams,
        channels: nmax + 1,
        data,
    }
}

/// Bispectrum from full order rows through the sparse CG block.
#[inline]
pub(crate) fn bispectrum_rows(
    block: &[(i64, i64, f64)],
    a: &[Complex64],
    b: &[Complex64],
    l: &[Complex64],
) -> Complex64 {
    let (na, nb, nl) = ((a.len() / 2) as i64, (b.len() / 2) as i64, (l.len() / 2) as i64);
    let mut acc = Complex64::new(0.0, 0.0);
    for &(m1, m2, c) in block {
        acc += a[(m1 + na) as usize] * b[(m2 + nb) as usize] * l[(m1 + m2 + nl) as usize].conj() * c;
    }
    acc
}

fn check_triples(triples: &[BispectrumTriple], max_degree: usize, cg: &CgCache) -> Result<()> {
    for t in triples {
        if t.ell > max_degree || t.n_prime > cg.max_degree() {
            return Err(LriError::Config(format!(
                "triple {t} needs degree {} but maps stop at {max_degree}",
                t.ell
            )));
        }
    }
    Ok(())
}

/// `G^SSB_{q,n,n',l}(x)`, parity-projected to real values.
pub fn ssb_forward(
    maps: &FourierFeatureMaps,
    triples: &[BispectrumTriple],
    cg: &CgCache,
) -> Result<InvariantMaps> {
    check_triples(triples, maps.max_degree, cg)?;
    let len = maps.grid.len();
    let mut data = vec![vec![0.0; len]; maps.streams * triples.len()];
    for q in 0..maps.streams {
        for i in 0..len {
            let rows: Vec<Vec<Complex64>> = (0..=maps.max_degree).map(|n| maps.vector(q, n, i)).collect();
            for (c, t) in triples.iter().enumerate() {
                let b = bispectrum_rows(
                    cg.get(t.n, t.n_prime).block(t.ell),
                    &rows[t.n],
                    &rows[t.n_prime],
                    &rows[t.ell],
                );
                data[q * triples.len() + c][i] = parity_project(b, t);
            }
        }
    }
    Ok(InvariantMaps {
        grid: maps.grid,
        streams: maps.streams,
        channels: triples.len(),
        data,
    })
}

fn effective_mask(grid: &OutputGrid, mask: Option<&[bool]>) -> Result<Option<(Vec<bool>, usize)>> {
    match mask {
        None => Ok(None),
        Some(m) => {
            let out = if m.len() == grid.len() {
                m.to_vec()
            } else if m.len() == grid.in_shape.iter().product::<usize>() {
                grid.downsample_mask(m)
            } else {
                return Err(LriError::Shape("mask matches neither input nor output grid".into()));
            };
            let count = out.iter().filter(|&&b| b).count();
            if count == 0 {
                return Err(LriError::Domain("pooling mask is empty on the output grid".into()));
            }
            Ok(Some((out, count)))
        }
    }
}

/// Output indices averaged by [`global_pool`] for the given mask.
pub fn pooling_positions(grid: &OutputGrid, mask: Option<&[bool]>) -> Result<Vec<usize>> {
    Ok(match effective_mask(grid, mask)? {
        None => (0..grid.len()).collect(),
        Some((m, _)) => (0..grid.len()).filter(|&i| m[i]).collect(),
    })
}

/// Per-channel mean over all (or masked) output positions, stream-major.
/// The mask may be given on the input grid or on the output grid.
pub fn global_pool(inv: &InvariantMaps, mask: Option<&[bool]>) -> Result<Vec<f64>> {
    let eff = effective_mask(&inv.grid, mask)?;
    Ok(inv
        .data
        .iter()
        .map(|ch| match &eff {
            None => ch.iter().sum::<f64>() / ch.len() as f64,
            Some((m, count)) => {
                ch.iter().zip(m).filter(|(_, &b)| b).map(|(v, _)| v).sum::<f64>() / *count as f64
            }
        })
        .collect())
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct LayerForward {
    pub responses: BasisResponses,
    pub maps: FourierFeatureMaps,
    pub invariants: InvariantMaps,
    pub pooled: Vec<f64>,
    mask: Option<Vec<bool>>,
}

/// An SSE or SSB layer followed by global average pooling.
#[derive(Debug, Clone)]
pub struct LriLayer {
    config: LayerConfig,
    kind: InvariantKind,
    basis: SolidBasis,
    cg: CgCache,
}

impl LriLayer {
    pub fn new(config: LayerConfig, kind: InvariantKind, radial_count: usize) -> Result<Self> {
        let basis = SolidBasis::new(config.kernel_size, config.max_degree, radial_count)?;
        let cg = CgCache::new(if matches!(kind, InvariantKind::Bispectrum(_)) {
            config.max_degree
        } else {
            0
        });
        if let InvariantKind::Bispectrum(t) = &kind {
            check_triples(t, config.max_degree, &cg)?;
        }
        Ok(LriLayer {
            config,
            kind,
            basis,
            cg,
        })
    }

    pub fn config(&self) -> &LayerConfig {
        &self.config
    }

    pub fn kind(&self) -> &InvariantKind {
        &self.kind
    }

    pub fn basis(&self) -> &SolidBasis {
        &self.basis
    }

    pub fn cg(&self) -> &CgCache {
        &self.cg
    }

    pub fn channels_per_stream(&self) -> usize {
        self.kind.channels(self.config.max_degree)
    }

    pub fn responses(&self, vol: &Volume3D) -> Result<BasisResponses> {
        BasisResponses::compute(vol, &self.basis, self.config.stride, self.config.padding)
    }

    pub fn forward(&self, vol: &Volume3D, bank: &RadialProfileBank) -> Result<LayerForward> {
        let responses = self.responses(vol)?;
        self.forward_from(responses, vol.mask(), bank)
    }

    pub fn forward_from(
        &self,
        responses: BasisResponses,
        mask: Option<&[bool]>,
        bank: &RadialProfileBank,
    ) -> Result<LayerForward> {
        let maps = FourierFeatureMaps::from_responses(&responses, bank)?;
        let invariants = match &self.kind {
            InvariantKind::Spectrum => sse_forward(&maps),
            InvariantKind::Bispectrum(t) => ssb_forward(&maps, t, &self.cg)?,
        };
        let mask = effective_mask(responses.grid(), mask)?.map(|(m, _)| m);
        let pooled = global_pool(&invariants, mask.as_deref())?;
        Ok(LayerForward {
            responses,
            maps,
            invariants,
            pooled,
            mask,
        })
    }

    /// Gradient of `sum_k upstream[k] * pooled[k]` with respect to the radial
    /// weights, laid out like [`RadialProfileBank::weights`].
    pub fn backward(&self, fwd: &LayerForward, bank: &RadialProfileBank, upstream: &[f64]) -> Result<Vec<f64>> {
        let channels = self.channels_per_stream();
        if upstream.len() != bank.streams() * channels {
            return Err(LriError::Shape(format!(
                "upstream gradient has {} entries, expected {}",
                upstream.len(),
                bank.streams() * channels
            )));
        }
        let resp = &fwd.responses;
        let maps = &fwd.maps;
        let len = resp.grid().len();
        let nr = bank.radial_count();
        let positions: Vec<usize> = match &fwd.mask {
            None => (0..len).collect(),
            Some(m) => (0..len).filter(|&i| m[i]).collect(),
        };
        let inv_count = 1.0 / positions.len() as f64;
        let mut grad = vec![0.0; bank.weights().len()];
        for q in 0..bank.streams() {
            let up = &upstream[q * channels..(q + 1) * channels];
            if up.iter().all(|&g| g == 0.0) {
                continue;
            }
            match &self.kind {
                InvariantKind::Spectrum => {
                    for (n, &g) in up.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        let scale = g * 2.0 / (2 * n + 1) as f64 * inv_count;
                        let off = bank.offset(q, n);
                        for j in 0..nr {
                            let mut acc = 0.0;
                            for &i in &positions {
                                let f0 = maps.get(q, n, 0, i);
                                let g0 = resp.get(n, 0, j, i);
                                acc += (f0.conj() * g0).re;
                                for m in 1..=n as i64 {
                                    acc += 2.0 * (maps.get(q, n, m, i).conj() * resp.get(n, m, j, i)).re;
                                }
                            }
                            grad[off + j] += scale * acc;
                        }
                    }
                }
                InvariantKind::Bispectrum(triples) => {
                    let nmax = bank.max_degree();
                    for &i in &positions {
                        let rows: Vec<Vec<Complex64>> = (0..=nmax).map(|n| maps.vector(q, n, i)).collect();
                        for (c, t) in triples.iter().enumerate() {
                            let g = up[c];
                            if g == 0.0 {
                                continue;
                            }
                            let block = self.cg.get(t.n, t.n_prime).block(t.ell);
                            let scale = g * inv_count;
                            for slot in 0..3 {
                                let d = [t.n, t.n_prime, t.ell][slot];
                                let di = d as i64;
                                let off = bank.offset(q, d);
                                for j in 0..nr {
                                    let basis_row: Vec<Complex64> =
                                        (-di..=di).map(|m| resp.get(d, m, j, i)).collect();
                                    let b = match slot {
                                        0 => bispectrum_rows(block, &basis_row, &rows[t.n_prime], &rows[t.ell]),
                                        1 => bispectrum_rows(block, &rows[t.n], &basis_row, &rows[t.ell]),
                                        _ => bispectrum_rows(block, &rows[t.n], &rows[t.n_prime], &basis_row),
                                    };
                                    grad[off + j] += scale * parity_project(b, t);
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(grad)
    }
}

/// Gradient of the pooled features of `vol` against `upstream`, running a
/// fresh forward pass.
pub fn layer_backward(
    layer: &LriLayer,
    vol: &Volume3D,
    bank: &RadialProfileBank,
    upstream: &[f64],
) -> Result<Vec<f64>> {
    let fwd = layer.forward(vol, bank)?;
    layer.backward(&fwd, bank, upstream)
}

/// Worst disagreement between analytic and central-difference gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    /// `|fd - g| / max(|fd|, |g|, 1e-8)`, maximised over weights.
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub weights: usize,
}

/// Compares [`layer_backward`] with central differences of
/// `sum_k upstream[k] * pooled[k]` for every radial weight.
pub fn gradient_check(
    layer: &LriLayer,
    vol: &Volume3D,
    bank: &RadialProfileBank,
    upstream: &[f64],
    step: f64,
) -> Result<GradientCheck> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(LriError::Config(format!("finite-difference step must be positive, got {step}")));
    }
    let responses = layer.responses(vol)?;
    let fwd = layer.forward_from(responses.clone(), vol.mask(), bank)?;
    let grad = layer.backward(&fwd, bank, upstream)?;
    let objective = |b: &RadialProfileBank| -> Result<f64> {
        let f = layer.forward_from(responses.clone(), vol.mask(), b)?;
        Ok(f.pooled.iter().zip(upstream).map(|(p, u)| p * u).sum())
    };
    let mut out = GradientCheck {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: grad.first().copied().unwrap_or(0.0),
        numeric: 0.0,
        weights: grad.len(),
    };
    for (k, &g) in grad.iter().enumerate() {
        let mut plus = bank.clone();
        plus.weights_mut()[k] += step;
        let mut minus = bank.clone();
        minus.weights_mut()[k] -= step;
        let fd = (objective(&plus)? - objective(&minus)?) / (2.0 * step);
        let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-8);
        if !rel.is_finite() {
            return Err(LriError::Numerical(format!("non-finite gradient at weight {k}")));
        }
        if k == 0 || rel > out.max_rel_error {
            out = GradientCheck { max_rel_error: rel, worst_index: k, analytic: g, numeric: fd, ..out };
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::invariants::enumerate_triples;
    use crate::kernels::{discretize_kernel, init_weights, radial_count_for};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(rng: &mut ChaCha8Rng, shape: [usize; 3]) -> Volume3D {
        Volume3D::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    /// Direct correlation with the sampled kernel, independent of the basis
    /// response path.
    fn direct_map(vol: &Volume3D, bank: &RadialProfileBank, q: usize, n: usize, m: i64, c: usize, grid: &OutputGrid) -> Vec<Complex64> {
        let k = discretize_kernel(bank, q, n, m, c).unwrap();
        let r = (c / 2) as i64;
        (0..grid.len())
            .map(|i| {
                let p = grid.input_center(grid.out_coords(i));
                let mut acc = Complex64::new(0.0, 0.0);
                for a in -r..=r {
                    for b in -r..=r {
                        for cc in -r..=r {
                            let v = vol.get_or_zero([p[0] + a, p[1] + b, p[2] + cc]);
                            acc += k.at([a, b, cc]).conj() * v;
                        }
                    }
                }
                acc
            })
            .collect()
    }

    #[test]
    fn grid_shapes() {
        let g = OutputGrid::new([10, 11, 12], 5, 1, Padding::None).unwrap();
        assert_eq!(g.out_shape, [6, 7, 8]);
        let g = OutputGrid::new([10, 11, 12], 5, 2, Padding::Zero).unwrap();
        assert_eq!(g.out_shape, [5, 6, 6]);
        let g = OutputGrid::new([9, 9, 9], 5, 2, Padding::None).unwrap();
        assert_eq!(g.out_shape, [3, 3, 3]);
        assert!(matches!(OutputGrid::new([4, 9, 9], 5, 1, Padding::None), Err(LriError::Shape(_))));
        assert!(matches!(OutputGrid::new([9, 9, 9], 4, 1, Padding::Zero), Err(LriError::Config(_))));
        assert!(OutputGrid::new([9, 9, 9], 5, 0, Padding::Zero).is_err());
    }

    #[test]
    fn basis_path_matches_direct_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vol = random_volume(&mut rng, [9, 8, 10]);
        let bank = init_weights(&mut rng, 2, 3, radial_count_for(5));
        for (stride, pad) in [(1, Padding::Zero), (2, Padding::Zero), (1, Padding::None), (2, Padding::None)] {
            let maps = fourier_feature_maps(&vol, &bank, 5, stride, pad).unwrap();
            for q in 0..2 {
                for n in 0..=3usize {
                    for m in -(n as i64)..=n as i64 {
                        let want = direct_map(&vol, &bank, q, n, m, 5, maps.grid());
                        for (i, w) in want.iter().enumerate() {
                            assert!((maps.get(q, n, m, i) - w).norm() < 1e-11);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn constant_volume_has_no_higher_degree_response() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let vol = Volume3D::from_fn([11, 11, 11], |_| 2.5);
        let bank = init_weights(&mut rng, 1, 3, radial_count_for(5));
        let maps = fourier_feature_maps(&vol, &bank, 5, 1, Padding::None).unwrap();
        let first = maps.get(0, 0, 0, 0);
        for i in 0..maps.grid().len() {
            for n in 1..=3usize {
                for m in 0..=n as i64 {
                    assert!(maps.get(0, n, m, i).norm() < 1e-10);
                }
            }
            assert!((maps.get(0, 0, 0, i) - first).norm() < 1e-10);
        }
    }

    #[test]
    fn impulse_reproduces_flipped_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut vol = Volume3D::zeros([9, 9, 9]);
        vol.set([4, 4, 4], 1.0);
        let bank = init_weights(&mut rng, 1, 2, radial_count_for(5));
        let maps = fourier_feature_maps(&vol, &bank, 5, 1, Padding::Zero).unwrap();
        for n in 0..=2usize {
            for m in -(n as i64)..=n as i64 {
                let k = discretize_kernel(&bank, 0, n, m, 5).unwrap();
                for a in -2..=2i64 {
                    for b in -2..=2i64 {
                        for c in -2..=2i64 {
                            let o = [(4 - a) as usize, (4 - b) as usize, (4 - c) as usize];
                            let idx = maps.grid().out_index(o);
                            assert!((maps.get(0, n, m, idx) - k.at([a, b, c]).conj()).norm() < 1e-13);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn conjugate_symmetry_for_real_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vol = random_volume(&mut rng, [7, 7, 7]);
        let bank = init_weights(&mut rng, 1, 3, radial_count_for(5));
        let maps = fourier_feature_maps(&vol, &bank, 5, 1, Padding::Zero).unwrap();
        for n in 1..=3usize {
            for m in 1..=n as i64 {
                let neg = direct_map(&vol, &bank, 0, n, -m, 5, maps.grid());
                for (i, v) in neg.iter().enumerate() {
                    let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                    assert!((v - maps.get(0, n, m, i).conj() * sign).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn sse_scales_quadratically() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vol = random_volume(&mut rng, [8, 8, 8]);
        let bank = init_weights(&mut rng, 2, 2, radial_count_for(5));
        let a = sse_forward(&fourier_feature_maps(&vol, &bank, 5, 1, Padding::Zero).unwrap());
        let mut scaled = vol.clone();
        scaled.scale(-3.0);
        let b = sse_forward(&fourier_feature_maps(&scaled, &bank, 5, 1, Padding::Zero).unwrap());
        for q in 0..2 {
            for c in 0..3 {
                for (x, y) in a.channel(q, c).iter().zip(b.channel(q, c)) {
                    assert!(*x >= 0.0);
                    assert!((9.0 * x - y).abs() < 1e-9 * y.abs().max(1.0));
                }
            }
        }
        let zero = sse_forward(&fourier_feature_maps(&Volume3D::zeros([6, 6, 6]), &bank, 5, 1, Padding::Zero).unwrap());
        assert!(zero.channel(1, 2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ssb_channel_counts_and_zero_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for (n, count) in [(0usize, 1usize), (1, 2), (2, 5), (4, 14)] {
            let bank = init_weights(&mut rng, 2, n, radial_count_for(9));
            let maps = fourier_feature_maps(&Volume3D::zeros([9, 9, 9]), &bank, 9, 3, Padding::Zero).unwrap();
            let inv = ssb_forward(&maps, &enumerate_triples(n), &CgCache::new(n)).unwrap();
            assert_eq!(inv.channels(), count);
            assert!((0..2).all(|q| (0..count).all(|c| inv.channel(q, c).iter().all(|&v| v == 0.0))));
        }
    }

    #[test]
    fn pooling() {
        let grid = OutputGrid::new([2, 2, 2], 1, 1, Padding::Zero).unwrap();
        let ch = vec![1.0, 1.0, 1.0, 1.0, 3.0, 3.0, 3.0, 3.0];
        let inv = InvariantMaps::from_channels(grid, 1, 2, vec![vec![4.0; 8], ch]).unwrap();
        assert_eq!(global_pool(&inv, None).unwrap(), vec![4.0, 2.0]);
        assert_eq!(global_pool(&inv, Some(&[true; 8])).unwrap(), vec![4.0, 2.0]);
        let half: Vec<bool> = (0..8).map(|i| i >= 4).collect();
        assert_eq!(global_pool(&inv, Some(&half)).unwrap(), vec![4.0, 3.0]);
        assert!(matches!(global_pool(&inv, Some(&[false; 8])), Err(LriError::Domain(_))));
    }

    #[test]
    fn masked_pooling_downsamples_input_mask() {
        let grid = OutputGrid::new([4, 4, 4], 3, 2, Padding::Zero).unwrap();
        assert_eq!(grid.out_shape, [2, 2, 2]);
        let mut mask = vec![false; 64];
        mask[(2 * 4 + 2) * 4 + 2] = true;
        let down = grid.downsample_mask(&mask);
        assert_eq!(down.iter().filter(|&&b| b).count(), 1);
        assert!(down[grid.out_index([1, 1, 1])]);
    }

    fn finite_difference_check(kind: InvariantKind, degree: usize, masked: bool) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c = 5;
        let mut vol = random_volume(&mut rng, [7, 7, 7]);
        if masked {
            let mask: Vec<bool> = (0..343).map(|i| i % 3 != 0).collect();
            vol = vol.with_mask(mask).unwrap();
        }
        let cfg = LayerConfig { kernel_size: c, stride: 1, padding: Padding::Zero, max_degree: degree };
        let layer = LriLayer::new(cfg, kind, radial_count_for(c)).unwrap();
        let bank = init_weights(&mut rng, 2, degree, radial_count_for(c));
        let width = 2 * layer.channels_per_stream();
        let upstream: Vec<f64> = (0..width).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let worst = gradient_check(&layer, &vol, &bank, &upstream, 1e-4).unwrap().max_rel_error;
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn sse_gradient_matches_finite_differences() {
        finite_difference_check(InvariantKind::Spectrum, 2, false);
        finite_difference_check(InvariantKind::Spectrum, 2, true);
    }

    #[test]
    fn ssb_gradient_matches_finite_differences() {
        finite_difference_check(InvariantKind::Bispectrum(enumerate_triples(2)), 2, false);
        finite_difference_check(InvariantKind::Bispectrum(enumerate_triples(2)), 2, true);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let vol = random_volume(&mut rng, [6, 6, 6]);
        let cfg = LayerConfig { kernel_size: 3, stride: 1, padding: Padding::Zero, max_degree: 1 };
        let layer = LriLayer::new(cfg, InvariantKind::Bispectrum(enumerate_triples(1)), 2).unwrap();
        let bank = init_weights(&mut rng, 1, 1, 2);
        let g = layer_backward(&layer, &vol, &bank, &[0.0, 0.0]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(layer_backward(&layer, &vol, &bank, &[0.0]).is_err());
    }

    #[test]
    fn sse_gradient_scales_linearly_with_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let vol = random_volume(&mut rng, [6, 6, 6]);
        let cfg = LayerConfig { kernel_size: 5, stride: 1, padding: Padding::Zero, max_degree: 2 };
        let layer = LriLayer::new(cfg, InvariantKind::Spectrum, 4).unwrap();
        let bank = init_weights(&mut rng, 1, 2, 4);
        let mut doubled = bank.clone();
        doubled.weights_mut().iter_mut().for_each(|w| *w *= 2.0);
        let up = [0.3, -0.2, 0.9];
        let g1 = layer_backward(&layer, &vol, &bank, &up).unwrap();
        let g2 = layer_backward(&layer, &vol, &doubled, &up).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() < 1e-10 * b.abs().max(1.0));
        }
    }
}
