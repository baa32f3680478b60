//! Toy experiments: volumes synthesized from spherical Fourier vectors and
//! analysed at the origin voxel with spectrum and bispectrum.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{LriError, Result};
use crate::invariants::{bispectrum, enumerate_triples, parity_project, spectrum, BispectrumTriple};
use crate::sph::{random_rotation, rotate_fourier_vector, sh_index, sh_table, CgCache, FourierVector, SphericalCoords};
use crate::volume::Volume3D;
use crate::Complex64;

/// Isotropic band-pass bump `cos(pi/2 log2(rho / rho0))` on
/// `(rho0 / 2, 2 rho0)`, peaking at `rho0` and zero elsewhere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimoncelliProfile {
    pub rho0: f64,
}

impl Default for SimoncelliProfile {
    fn default() -> Self {
        SimoncelliProfile { rho0: 8.0 }
    }
}

impl SimoncelliProfile {
    pub fn eval(&self, rho: f64) -> f64 {
        if rho <= self.rho0 / 2.0 || rho >= 2.0 * self.rho0 {
            0.0
        } else {
            (PI / 2.0 * (rho / self.rho0).log2()).cos()
        }
    }
}

/// Index of the origin voxel along each axis of a `size^3` grid.
pub fn origin_index(size: usize) -> usize {
    size / 2
}

fn voxel_coords(size: usize, i: usize) -> SphericalCoords {
    let o = origin_index(size) as f64;
    let p = [i / (size * size), i / size % size, i % size].map(|v| v as f64 - o);
    SphericalCoords::from_cartesian(p)
}

/// Evaluates `h(rho) sum_n sum_m F_n^m Y_n^m` on a `size^3` grid centred at
/// [`origin_index`].
pub fn synthesize_from_sh(family: &[FourierVector], h: impl Fn(f64) -> f64, size: usize) -> Result<Volume3D> {
    for f in family {
        let err = f.real_symmetry_error();
        if err > 1e-9 {
            return Err(LriError::Domain(format!(
                "degree {} coefficients do not describe a real function (symmetry error {err:.3e})",
                f.degree()
            )));
        }
    }
    let nmax = family.iter().map(|f| f.degree()).max().unwrap_or(0);
    let mut data = vec![0.0; size * size * size];
    let mut worst_imag: f64 = 0.0;
    for (i, v) in data.iter_mut().enumerate() {
        let s = voxel_coords(size, i);
        let hv = h(s.rho);
        if hv == 0.0 {
            continue;
        }
        let table = sh_table(nmax, s.theta, s.phi);
        let mut acc = Complex64::new(0.0, 0.0);
        for f in family {
            let n = f.degree();
            for m in -(n as i64)..=n as i64 {
                acc += f.get(m) * table[sh_index(n, m)];
            }
        }
        worst_imag = worst_imag.max((acc.im * hv).abs());
        *v = acc.re * hv;
    }
    if worst_imag > 1e-9 {
        return Err(LriError::Domain(format!("synthesized volume has imaginary part {worst_imag:.3e}")));
    }
    Volume3D::new([size, size, size], data)
}

/// Least-squares spherical Fourier analysis at the origin voxel with the
/// filters `h(rho) Y_n^m`: responses are mapped back through the inverse of
/// the discrete filter Gram matrix, so volumes synthesized with the same `h`
/// are recovered exactly.
#[derive(Debug, Clone)]
pub struct ShAnalyzer {
    size: usize,
    max_degree: usize,
    /// `(voxel, h Y_n^m for all (n, m))` on the support of `h`.
    filters: Vec<(usize, Vec<Complex64>)>,
    gram_inverse: DMatrix<Complex64>,
}

impl ShAnalyzer {
    pub fn new(size: usize, max_degree: usize, h: impl Fn(f64) -> f64) -> Result<Self> {
        let k = (max_degree + 1) * (max_degree + 1);
        let mut filters = Vec::new();
        for i in 0..size * size * size {
            let s = voxel_coords(size, i);
            let hv = h(s.rho);
            if hv != 0.0 {
                filters.push((i, sh_table(max_degree, s.theta, s.phi).into_iter().map(|y| y * hv).collect::<Vec<_>>()));
            }
        }
        let mut gram = DMatrix::<Complex64>::zeros(k, k);
        for (_, f) in &filters {
            for a in 0..k {
                let ca = f[a].conj();
                for b in 0..k {
                    gram[(a, b)] += ca * f[b];
                }
            }
        }
        let gram_inverse = gram
            .try_inverse()
            .ok_or_else(|| LriError::Numerical("filter Gram matrix is singular".into()))?;
        Ok(ShAnalyzer {
            size,
            max_degree,
            filters,
            gram_inverse,
        })
    }

    /// Fourier vectors of degrees `0..=N` at the origin voxel.
    pub fn analyze(&self, vol: &Volume3D) -> Result<Vec<FourierVector>> {
        if vol.shape() != [self.size; 3] {
            return Err(LriError::Shape(format!("analyzer expects a {}^3 volume", self.size)));
        }
        let k = (self.max_degree + 1) * (self.max_degree + 1);
        let mut resp = DVector::<Complex64>::zeros(k);
        for (i, f) in &self.filters {
            let v = vol.data()[*i];
            for a in 0..k {
                resp[a] += f[a].conj() * v;
            }
        }
        let coeffs = &self.gram_inverse * resp;
        (0..=self.max_degree)
            .map(|n| FourierVector::new(n, (0..2 * n + 1).map(|t| coeffs[n * n + t]).collect()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ToyExperiment {
    /// Same vectors, distinct rotation per degree.
    InterDegree,
    /// Order `m = 0` against orders `m = +-n`.
    IntraDegree,
}

impl ToyExperiment {
    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            1 => Ok(ToyExperiment::InterDegree),
            2 => Ok(ToyExperiment::IntraDegree),
            _ => Err(LriError::Config(format!("toy experiment must be 1 or 2, got {id}"))),
        }
    }

    pub fn id(&self) -> u8 {
        match self {
            ToyExperiment::InterDegree => 1,
            ToyExperiment::IntraDegree => 2,
        }
    }
}

/// Degree-`n` vector from listed `(re, im)` entries, multiplied by `(-i)^n`
/// so that it satisfies the real-function symmetry of this crate's
/// harmonics.
fn phased(pairs: &[(f64, f64)]) -> FourierVector {
    let f = FourierVector::from_pairs(pairs).expect("odd length");
    let phase = Complex64::new(0.0, -1.0).powu(f.degree() as u32);
    f.scale(phase)
}

/// Class vectors (degrees 0..=3) for both classes.
pub fn toy_class_vectors(experiment: ToyExperiment, rotation_seed: u64) -> [Vec<FourierVector>; 2] {
    let zero = FourierVector::zeros(0);
    match experiment {
        ToyExperiment::InterDegree => {
            let base = vec![
                zero,
                phased(&[(1.0, 0.0), (0.0, 1.0), (1.0, 0.0)]),
                phased(&[(1.0, 0.0), (-1.0, 0.0), (1.0, 0.0), (1.0, 0.0), (1.0, 0.0)]),
                phased(&[(1.0, 0.0), (-1.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 0.0), (1.0, 0.0)]),
            ];
            let mut rng = ChaCha8Rng::seed_from_u64(rotation_seed);
            let rotated = base
                .iter()
                .map(|f| {
                    let r = random_rotation(&mut rng);
                    if f.degree() == 0 {
                        f.clone()
                    } else {
                        rotate_fourier_vector(f, &r).expect("valid rotation")
                    }
                })
                .collect();
            [base, rotated]
        }
        ToyExperiment::IntraDegree => {
            let s = |x: f64| x.sqrt();
            let z = (0.0, 0.0);
            let first = vec![
                zero.clone(),
                phased(&[z, (0.0, s(3.0)), z]),
                phased(&[z, z, (s(5.0), 0.0), z, z]),
                phased(&[z, z, z, (0.0, s(7.0)), z, z, z]),
            ];
            let second = vec![
                zero,
                phased(&[(s(1.5), 0.0), z, (s(1.5), 0.0)]),
                phased(&[(s(2.5), 0.0), z, z, z, (s(2.5), 0.0)]),
                phased(&[(s(3.5), 0.0), z, z, z, z, z, (s(3.5), 0.0)]),
            ];
            [first, second]
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ToySpec {
    pub experiment: ToyExperiment,
    pub size: usize,
    pub profile: SimoncelliProfile,
    pub instances_per_class: usize,
    /// Noise standard deviation relative to the largest absolute voxel value
    /// of the noiseless instances.
    pub noise: f64,
    pub seed: u64,
    /// Seed of the per-degree rotations of the inter-degree experiment.
    pub rotation_seed: u64,
}

impl ToySpec {
    pub fn new(experiment: ToyExperiment, noise: f64, seed: u64) -> Self {
        ToySpec {
            experiment,
            size: 32,
            profile: SimoncelliProfile::default(),
            instances_per_class: 50,
            noise,
            seed,
            rotation_seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(LriError::Config(format!("noise must be non-negative, got {}", self.noise)));
        }
        if self.size < 8 || self.instances_per_class == 0 || self.profile.rho0 <= 0.0 {
            return Err(LriError::Config("invalid toy size, instance count or profile scale".into()));
        }
        Ok(())
    }

    pub fn class_vectors(&self) -> [Vec<FourierVector>; 2] {
        toy_class_vectors(self.experiment, self.rotation_seed)
    }
}

/// Invariants of one analysed volume.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyInstance {
    pub class: usize,
    /// `s_n` for `n = 0..=3`.
    pub spectrum: Vec<f64>,
    /// Parity-projected bispectrum over [`ToyResult::triples`].
    pub bispectrum: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ToyResult {
    pub triples: Vec<BispectrumTriple>,
    pub instances: Vec<ToyInstance>,
}

#[derive(Debug, Clone, Serialize)]
struct ToyRow<'a> {
    instance: usize,
    class: usize,
    kind: &'a str,
    index: String,
    value: f64,
}

impl ToyResult {
    pub fn labels(&self) -> Vec<usize> {
        self.instances.iter().map(|i| i.class).collect()
    }

    /// CSV `instance,class,kind,index,value`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let err = |e: csv::Error| LriError::Numerical(format!("csv encoding failed: {e}"));
        for (i, inst) in self.instances.iter().enumerate() {
            for (n, &v) in inst.spectrum.iter().enumerate() {
                w.serialize(ToyRow { instance: i, class: inst.class, kind: "spectrum", index: n.to_string(), value: v })
                    .map_err(err)?;
            }
            for (t, &v) in self.triples.iter().zip(&inst.bispectrum) {
                w.serialize(ToyRow { instance: i, class: inst.class, kind: "bispectrum", index: t.to_string(), value: v })
                    .map_err(err)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| LriError::Numerical(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| LriError::io(path, e))
    }
}

/// Runs analysis and invariants on Fourier families; shared across toy runs.
pub struct ToyPipeline {
    spec: ToySpec,
    analyzer: ShAnalyzer,
    cg: CgCache,
    triples: Vec<BispectrumTriple>,
}

pub const TOY_MAX_DEGREE: usize = 3;

impl ToyPipeline {
    pub fn new(spec: ToySpec) -> Result<Self> {
        spec.validate()?;
        let profile = spec.profile;
        let analyzer = ShAnalyzer::new(spec.size, TOY_MAX_DEGREE, |r| profile.eval(r))?;
        Ok(ToyPipeline {
            spec,
            analyzer,
            cg: CgCache::new(TOY_MAX_DEGREE),
            triples: enumerate_triples(TOY_MAX_DEGREE),
        })
    }

    pub fn spec(&self) -> &ToySpec {
        &self.spec
    }

    pub fn synthesize(&self, family: &[FourierVector]) -> Result<Volume3D> {
        let profile = self.spec.profile;
        synthesize_from_sh(family, |r| profile.eval(r), self.spec.size)
    }

    /// Spectrum and bispectrum at the origin voxel of `vol`.
    pub fn invariants(&self, vol: &Volume3D, class: usize) -> Result<ToyInstance> {
        let family = self.analyzer.analyze(vol)?;
        let spectrum = family.iter().map(spectrum).collect();
        let bis = self
            .triples
            .iter()
            .map(|t| {
                let b = bispectrum(&family[t.n], &family[t.n_prime], &family[t.ell], self.cg.get(t.n, t.n_prime))?;
                Ok(parity_project(b, t))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ToyInstance { class, spectrum, bispectrum: bis })
    }

    /// Invariants of both class prototypes without rotation or noise.
    pub fn prototypes(&self) -> Result<[ToyInstance; 2]> {
        let [a, b] = self.spec.class_vectors();
        Ok([self.invariants(&self.synthesize(&a)?, 0)?, self.invariants(&self.synthesize(&b)?, 1)?])
    }

    /// Instances `0..k` are class 0, `k..2k` class 1. Each gets one Haar
    /// rotation shared by all degrees, then Gaussian noise whose standard
    /// deviation is `noise` times the largest absolute value over all
    /// noiseless instances of both classes (one level for the whole run, so
    /// the noise energy carries no class information).
    pub fn run(&self) -> Result<ToyResult> {
        let classes = self.spec.class_vectors();
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        let mut volumes = Vec::new();
        for (class, family) in classes.iter().enumerate() {
            for _ in 0..self.spec.instances_per_class {
                let rot = random_rotation(&mut rng);
                let rotated = family.iter().map(|f| rotate_fourier_vector(f, &rot)).collect::<Result<Vec<_>>>()?;
                volumes.push((class, self.synthesize(&rotated)?));
            }
        }
        let peak = volumes.iter().map(|(_, v)| v.max_abs()).fold(0.0, f64::max);
        let sigma = self.spec.noise * peak;
        let normal = if sigma > 0.0 {
            Some(Normal::new(0.0, sigma).map_err(|e| LriError::Config(e.to_string()))?)
        } else {
            None
        };
        let mut instances = Vec::with_capacity(volumes.len());
        for (class, mut vol) in volumes {
            if let Some(normal) = &normal {
                vol.data_mut().iter_mut().for_each(|v| *v += normal.sample(&mut rng));
            }
            instances.push(self.invariants(&vol, class)?);
        }
        Ok(ToyResult { triples: self.triples.clone(), instances })
    }
}

pub fn run_toy(spec: &ToySpec) -> Result<ToyResult> {
    ToyPipeline::new(spec.clone())?.run()
}

/// Best single threshold (either polarity) on training values; returns the
/// rule as `(threshold, above_is_class_1)`.
fn fit_threshold(values: &[f64], labels: &[usize]) -> (f64, bool) {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut best = (f64::NEG_INFINITY, true, -1.0);
    let mut candidates = vec![sorted[0] - 1.0];
    candidates.extend(sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    for &t in &candidates {
        for above in [true, false] {
            let acc = values
                .iter()
                .zip(labels)
                .filter(|(&v, &y)| ((v > t) == above) == (y == 1))
                .count() as f64;
            if acc > best.2 {
                best = (t, above, acc);
            }
        }
    }
    (best.0, best.1)
}

fn folds(n: usize, k: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    (0..k)
        .map(|f| ((0..n).filter(|i| i % k != f).collect(), (0..n).filter(|i| i % k == f).collect()))
        .collect()
}

/// Held-out accuracy of a single-coefficient threshold under `k`-fold
/// cross-validation (interleaved folds).
pub fn threshold_accuracy_cv(values: &[f64], labels: &[usize], k: usize) -> f64 {
    let mut correct = 0;
    for (train, test) in folds(values.len(), k) {
        let tv: Vec<f64> = train.iter().map(|&i| values[i]).collect();
        let tl: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
        let (t, above) = fit_threshold(&tv, &tl);
        correct += test.iter().filter(|&&i| ((values[i] > t) == above) == (labels[i] == 1)).count();
    }
    correct as f64 / values.len() as f64
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Indices of the `count` features with the largest standardized class
/// separation `|mu1 - mu0| / (sd0 + sd1)`.
pub fn most_separating(features: &[Vec<f64>], labels: &[usize], count: usize) -> Vec<usize> {
    let width = features[0].len();
    let mut scores: Vec<(usize, f64)> = (0..width)
        .map(|f| {
            let class = |c: usize| {
                mean_std(features.iter().zip(labels).filter(move |(_, &y)| y == c).map(move |(x, _)| x[f]))
            };
            let ((m0, s0), (m1, s1)) = (class(0), class(1));
            let score = (m1 - m0).abs() / (s0 + s1 + 1e-300);
            (f, if score.is_finite() { score } else { 0.0 })
        })
        .collect();
    scores.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scores.into_iter().take(count).map(|(f, _)| f).collect()
}

/// Held-out accuracy of a linear threshold (nearest standardized class
/// centroid) on the two most separating coefficients, both selected on the
/// training folds only.
pub fn pair_threshold_accuracy_cv(features: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let mut correct = 0;
    for (train, test) in folds(features.len(), k) {
        let tf: Vec<Vec<f64>> = train.iter().map(|&i| features[i].clone()).collect();
        let tl: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
        let sel = most_separating(&tf, &tl, 2);
        let stats: Vec<(f64, f64)> = sel.iter().map(|&f| mean_std(tf.iter().map(move |x| x[f]))).collect();
        let z = |x: &[f64]| -> Vec<f64> {
            sel.iter().zip(&stats).map(|(&f, &(m, s))| (x[f] - m) / s.max(1e-300)).collect()
        };
        let centroid = |c: usize| -> Vec<f64> {
            let pts: Vec<Vec<f64>> = tf.iter().zip(&tl).filter(|(_, &y)| y == c).map(|(x, _)| z(x)).collect();
            (0..sel.len()).map(|d| pts.iter().map(|p| p[d]).sum::<f64>() / pts.len() as f64).collect()
        };
        let (c0, c1) = (centroid(0), centroid(1));
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        for &i in &test {
            let p = z(&features[i]);
            let pred = usize::from(dist(&p, &c1) < dist(&p, &c0));
            correct += usize::from(pred == labels[i]);
        }
    }
    correct as f64 / features.len() as f64
}

/// Held-out classification summary of one toy run.
#[derive(Debug, Clone, Serialize)]
pub struct ToySummary {
    pub spectrum_accuracy: Vec<f64>,
    pub bispectrum_pair_accuracy: f64,
    /// The two most separating triples on the full run.
    pub separating_triples: Vec<String>,
}

pub const TOY_FOLDS: usize = 5;

pub fn summarize(result: &ToyResult) -> ToySummary {
    let labels = result.labels();
    let n_spec = result.instances[0].spectrum.len();
    let spectrum_accuracy = (0..n_spec)
        .map(|n| {
            let v: Vec<f64> = result.instances.iter().map(|i| i.spectrum[n]).collect();
            threshold_accuracy_cv(&v, &labels, TOY_FOLDS)
        })
        .collect();
    let feats: Vec<Vec<f64>> = result.instances.iter().map(|i| i.bispectrum.clone()).collect();
    ToySummary {
        spectrum_accuracy,
        bispectrum_pair_accuracy: pair_threshold_accuracy_cv(&feats, &labels, TOY_FOLDS),
        separating_triples: most_separating(&feats, &labels, 2)
            .into_iter()
            .map(|f| result.triples[f].to_string())
            .collect(),
    }
}
