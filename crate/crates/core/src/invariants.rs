//! Rotation invariants of spherical Fourier vectors: the spherical spectrum
//! and bispectrum, the parity rule mapping bispectra of real functions to
//! real numbers, and the enumeration of non-redundant bispectrum triples.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LriError, Result};
use crate::sph::{CgMatrix, FourierVector};

/// Degrees `(n, n', l)` of one bispectrum coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BispectrumTriple {
    pub n: usize,
    pub n_prime: usize,
    pub ell: usize,
}

impl BispectrumTriple {
    /// Requires `n <= n' <= l <= n + n'`.
    pub fn new(n: usize, n_prime: usize, ell: usize) -> Result<Self> {
        if !(n <= n_prime && n_prime <= ell && ell <= n + n_prime) {
            return Err(LriError::Domain(format!(
                "triple ({n},{n_prime},{ell}) violates n <= n' <= l <= n + n'"
            )));
        }
        Ok(BispectrumTriple { n, n_prime, ell })
    }

    /// True when `n + n' + l` is even, i.e. the bispectrum of a real function
    /// is real.
    pub fn is_even(&self) -> bool {
        (self.n + self.n_prime + self.ell) % 2 == 0
    }

    /// `b^l_{n,n}` with odd `l` vanishes for every input.
    pub fn is_identically_zero(&self) -> bool {
        self.n == self.n_prime && self.ell % 2 == 1
    }

    pub fn max_degree(&self) -> usize {
        self.ell
    }
}

impl fmt::Display for BispectrumTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.n, self.n_prime, self.ell)
    }
}

/// Spectrum and parity-projected bispectrum of one family of vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantFeatures {
    pub spectrum: Vec<f64>,
    pub triples: Vec<BispectrumTriple>,
    pub bispectrum: Vec<f64>,
}

impl InvariantFeatures {
    /// Invariants of `family[n]` (degree `n`) for all triples of
    /// [`enumerate_triples`] with the family's maximal degree.
    pub fn compute(family: &[FourierVector], cg: &crate::sph::CgCache) -> Result<Self> {
        let max_degree = family.len().saturating_sub(1);
        for (n, f) in family.iter().enumerate() {
            if f.degree() != n {
                return Err(LriError::Shape(format!(
                    "family entry {n} has degree {}",
                    f.degree()
                )));
            }
        }
        let spectrum = family.iter().map(spectrum).collect();
        let triples = enumerate_triples(max_degree);
        let bispectrum = triples
            .iter()
            .map(|t| {
                let b = bispectrum(
                    &family[t.n],
                    &family[t.n_prime],
                    &family[t.ell],
                    cg.get(t.n, t.n_prime),
                )?;
                Ok(parity_project(b, t))
            })
            .collect::<Result<_>>()?;
        Ok(InvariantFeatures {
            spectrum,
            triples,
            bispectrum,
        })
    }
}

/// `s_n = (1 / (2n+1)) sum_m |F^m|^2`.
pub fn spectrum(f: &FourierVector) -> f64 {
    f.coeffs().iter().map(|c| c.norm_sqr()).sum::<f64>() / f.coeffs().len() as f64
}

/// `b^l_{n,n'} = [F_n (x) F_n'] C_{n,n'} F~_l^H`, evaluated through the
/// sparsity `m = m1 + m2` of the Clebsch-Gordan matrix.
pub fn bispectrum(
    fn_: &FourierVector,
    fn_prime: &FourierVector,
    fl: &FourierVector,
    cg: &CgMatrix,
) -> Result<Complex64> {
    let (n, n_prime, l) = (fn_.degree(), fn_prime.degree(), fl.degree());
    if cg.degrees() != (n, n_prime) {
        return Err(LriError::Shape(format!(
            "Clebsch-Gordan matrix has degrees {:?}, inputs ({n}, {n_prime})",
            cg.degrees()
        )));
    }
    if l < n.abs_diff(n_prime) || l > n + n_prime {
        return Err(LriError::Domain(format!(
            "l = {l} outside the coupling range of ({n}, {n_prime})"
        )));
    }
    Ok(cg
        .block(l)
        .iter()
        .map(|&(m1, m2, c)| fn_.get(m1) * fn_prime.get(m2) * fl.get(m1 + m2).conj() * c)
        .sum())
}

/// Real part for even `n + n' + l`, imaginary part for odd.
#[inline]
pub fn parity_project(b: Complex64, triple: &BispectrumTriple) -> f64 {
    if triple.is_even() {
        b.re
    } else {
        b.im
    }
}

/// Triples with `n <= n' <= l <= n + n'` and `n + n' <= max_degree`, in
/// lexicographic order.
pub fn enumerate_triples(max_degree: usize) -> Vec<BispectrumTriple> {
    let mut out = Vec::new();
    for n in 0..=max_degree / 2 {
        for n_prime in n..=(max_degree - n) {
            for ell in n_prime..=(n + n_prime) {
                out.push(BispectrumTriple { n, n_prime, ell });
            }
        }
    }
    out
}

/// [`enumerate_triples`] without the identically vanishing `(n, n, odd l)`.
pub fn enumerate_nonzero_triples(max_degree: usize) -> Vec<BispectrumTriple> {
    enumerate_triples(max_degree)
        .into_iter()
        .filter(|t| !t.is_identically_zero())
        .collect()
}

/// Closed form of `enumerate_triples(N).len()`:
/// `sum_{n=0}^{N/2} (n + 1)(N + 1 - 2n)`.
pub fn triple_count(max_degree: usize) -> usize {
    (0..=max_degree / 2)
        .map(|n| (n + 1) * (max_degree + 1 - 2 * n))
        .sum()
}

/// Returns `(b^n_{0,n}, s_n)`. Under the spectrum normalisation used here
/// `b^n_{0,n} = (2n + 1) F_0^0 s_n`.
pub fn spectrum_from_bispectrum_check(
    f0: &FourierVector,
    fn_: &FourierVector,
    cg: &CgMatrix,
) -> Result<(Complex64, f64)> {
    let b = bispectrum(f0, fn_, fn_, cg)?;
    Ok((b, spectrum(fn_)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sph::{clebsch_gordan, random_rotation, rotate_fourier_vector, CgCache};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn fv(v: &[Complex64]) -> FourierVector {
        FourierVector::new(v.len() / 2, v.to_vec()).unwrap()
    }

    /// The bispectrum with dense matrix products, as an independent route.
    fn bispectrum_dense(a: &FourierVector, b: &FourierVector, l: &FourierVector) -> Complex64 {
        let cg = clebsch_gordan(a.degree(), b.degree());
        let d = cg.dim();
        let mut kron = Vec::with_capacity(d);
        for x in a.coeffs() {
            for y in b.coeffs() {
                kron.push(x * y);
            }
        }
        let mut padded = vec![c(0.0, 0.0); d];
        let off = cg.block_offset(l.degree());
        padded[off..off + l.coeffs().len()].copy_from_slice(l.coeffs());
        let mut total = c(0.0, 0.0);
        for col in 0..d {
            let kc: Complex64 = (0..d).map(|row| kron[row] * cg.entry(row, col)).sum();
            total += kc * padded[col].conj();
        }
        total
    }

    #[test]
    fn spectrum_examples() {
        assert!((spectrum(&fv(&[c(1.0, 0.0), c(0.0, 1.0), c(1.0, 0.0)])) - 1.0).abs() < 1e-15);
        assert_eq!(spectrum(&FourierVector::zeros(3)), 0.0);
        let f = fv(&[c(0.0, 0.0), c(0.0, 3f64.sqrt()), c(0.0, 0.0)]);
        assert!((spectrum(&f) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bispectrum_examples() {
        let f0 = fv(&[c(2.0, 0.0)]);
        let b = bispectrum(&f0, &f0, &f0, &clebsch_gordan(0, 0)).unwrap();
        assert!((b - 8.0).norm() < 1e-14);
        let z = FourierVector::zeros(2);
        let b = bispectrum(&z, &z, &FourierVector::zeros(3), &clebsch_gordan(2, 2)).unwrap();
        assert_eq!(b, c(0.0, 0.0));
    }

    #[test]
    fn bispectrum_rejects_bad_degree() {
        let a = FourierVector::zeros(1);
        let err = bispectrum(&a, &a, &FourierVector::zeros(3), &clebsch_gordan(1, 1));
        assert!(matches!(err, Err(LriError::Domain(_))));
        let err = bispectrum(&a, &a, &a, &clebsch_gordan(1, 2));
        assert!(matches!(err, Err(LriError::Shape(_))));
    }

    #[test]
    fn sparse_matches_dense_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for t in enumerate_triples(5) {
            let mut rand_vec = |n: usize| {
                let v: Vec<_> = (0..2 * n + 1)
                    .map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                    .collect();
                fv(&v)
            };
            let (a, b, l) = (rand_vec(t.n), rand_vec(t.n_prime), rand_vec(t.ell));
            let sparse = bispectrum(&a, &b, &l, &clebsch_gordan(t.n, t.n_prime)).unwrap();
            assert!((sparse - bispectrum_dense(&a, &b, &l)).norm() < 1e-12);
        }
    }

    #[test]
    fn table_one_counts() {
        let expected = [(0, 1), (1, 2), (2, 5), (4, 14), (6, 30), (8, 55), (10, 91)];
        for (n, count) in expected {
            assert_eq!(enumerate_triples(n).len(), count);
            assert_eq!(triple_count(n), count);
        }
        let two: Vec<_> = enumerate_triples(2)
            .iter()
            .map(|t| (t.n, t.n_prime, t.ell))
            .collect();
        assert_eq!(two, vec![(0, 0, 0), (0, 1, 1), (0, 2, 2), (1, 1, 1), (1, 1, 2)]);
        assert_eq!(triple_count(100), 45526);
        assert_eq!(enumerate_triples(100).len(), 45526);
    }

    #[test]
    fn pruned_enumeration_drops_vanishing_triples() {
        let pruned = enumerate_nonzero_triples(4);
        assert!(pruned.iter().all(|t| !t.is_identically_zero()));
        assert_eq!(
            enumerate_triples(4).len() - pruned.len(),
            enumerate_triples(4).iter().filter(|t| t.is_identically_zero()).count()
        );
    }

    #[test]
    fn triple_validation() {
        assert!(BispectrumTriple::new(1, 2, 2).is_ok());
        assert!(BispectrumTriple::new(2, 1, 2).is_err());
        assert!(BispectrumTriple::new(1, 1, 3).is_err());
        assert!(BispectrumTriple::new(1, 2, 1).is_err());
    }

    #[test]
    fn parity_projection_of_real_functions() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let cg = CgCache::new(4);
        for _ in 0..50 {
            let fam: Vec<_> = (0..=4).map(|n| FourierVector::random_real(n, &mut rng)).collect();
            for t in enumerate_triples(4) {
                let b = bispectrum(&fam[t.n], &fam[t.n_prime], &fam[t.ell], cg.get(t.n, t.n_prime)).unwrap();
                let discarded = if t.is_even() { b.im } else { b.re };
                assert!(discarded.abs() < 1e-12, "{t}: {b}");
                if t.is_identically_zero() {
                    assert!(b.norm() < 1e-12);
                }
            }
        }
        let t = BispectrumTriple::new(0, 0, 0).unwrap();
        assert_eq!(parity_project(c(8.0, 0.0), &t), 8.0);
    }

    #[test]
    fn odd_self_coupling_vanishes_for_any_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for n in 1..=4usize {
            let cg = clebsch_gordan(n, n);
            for l in (1..=2 * n).step_by(2) {
                let v: Vec<_> = (0..2 * n + 1)
                    .map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                    .collect();
                let w: Vec<_> = (0..2 * l + 1)
                    .map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                    .collect();
                let b = bispectrum(&fv(&v), &fv(&v), &fv(&w), &cg).unwrap();
                assert!(b.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn spectrum_inside_bispectrum() {
        let f0 = fv(&[c(1.0, 0.0)]);
        let f1 = fv(&[c(1.0, 0.0), c(0.0, 1.0), c(1.0, 0.0)]);
        let (b, s) = spectrum_from_bispectrum_check(&f0, &f1, &clebsch_gordan(0, 1)).unwrap();
        assert!((b - 3.0).norm() < 1e-14);
        assert!((s - 1.0).abs() < 1e-15);
        let zero = fv(&[c(0.0, 0.0)]);
        let (b, _) = spectrum_from_bispectrum_check(&zero, &f1, &clebsch_gordan(0, 1)).unwrap();
        assert_eq!(b, c(0.0, 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(47);
        for n in 0..=4 {
            let f0 = FourierVector::random_real(0, &mut rng);
            let fnv = FourierVector::random_real(n, &mut rng);
            let (b, s) = spectrum_from_bispectrum_check(&f0, &fnv, &clebsch_gordan(0, n)).unwrap();
            let expect = (2 * n + 1) as f64 * f0.get(0).re * s;
            assert!((b - expect).norm() < 1e-10);
        }
    }

    #[test]
    fn independent_rotations_per_degree_keep_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for _ in 0..50 {
            for n in 0..=5 {
                let f = FourierVector::random_real(n, &mut rng);
                let g = rotate_fourier_vector(&f, &random_rotation(&mut rng)).unwrap();
                assert!((spectrum(&f) - spectrum(&g)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn features_compute_family() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let cg = CgCache::new(3);
        let fam: Vec<_> = (0..=3).map(|n| FourierVector::random_real(n, &mut rng)).collect();
        let feats = InvariantFeatures::compute(&fam, &cg).unwrap();
        assert_eq!(feats.spectrum.len(), 4);
        assert_eq!(feats.bispectrum.len(), triple_count(3));
        assert!(InvariantFeatures::compute(&fam[1..], &cg).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn shared_rotation_leaves_invariants_unchanged(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cg = CgCache::new(4);
            let fam: Vec<_> = (0..=4).map(|n| FourierVector::random_real(n, &mut rng)).collect();
            let r = random_rotation(&mut rng);
            let rotated: Vec<_> = fam.iter().map(|f| rotate_fourier_vector(f, &r).unwrap()).collect();
            let a = InvariantFeatures::compute(&fam, &cg).unwrap();
            let b = InvariantFeatures::compute(&rotated, &cg).unwrap();
            for (x, y) in a.spectrum.iter().zip(&b.spectrum) {
                prop_assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0));
            }
            for (x, y) in a.bispectrum.iter().zip(&b.bispectrum) {
                prop_assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0));
            }
        }

        #[test]
        fn count_law(n in 0usize..40) {
            prop_assert_eq!(enumerate_triples(n).len(), triple_count(n));
        }
    }
}
