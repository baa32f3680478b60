use std::collections::HashMap;

use num_complex::Complex64;

use super::wigner::WignerD;

/// Clebsch-Gordan matrix `C_{n1,n2}`.
///
/// Rows follow the Kronecker order of `(m1, m2)` (`m2` fastest), columns are
/// the coupled pairs `(l, m)` with `l = |n1-n2|..=n1+n2` ascending and
/// `m = -l..=l`. With this layout `(D_{n1} (x) D_{n2}) = C (+)_l D_l C^T`.
#[derive(Debug, Clone)]
pub struct CgMatrix {
    n1: usize,
    n2: usize,
    dense: Vec<f64>,
    /// Per coupled degree `l`: nonzero `(m1, m2, value)` with `m = m1 + m2`.
    blocks: Vec<Vec<(i64, i64, f64)>>,
}

impl CgMatrix {
    pub fn degrees(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    pub fn dim(&self) -> usize {
        (2 * self.n1 + 1) * (2 * self.n2 + 1)
    }

    pub fn min_degree(&self) -> usize {
        self.n1.abs_diff(self.n2)
    }

    pub fn max_degree(&self) -> usize {
        self.n1 + self.n2
    }

    /// First column of the `l` block.
    pub fn block_offset(&self, l: usize) -> usize {
        let lo = self.min_degree();
        (lo..l).map(|k| 2 * k + 1).sum()
    }

    #[inline]
    pub fn row(&self, m1: i64, m2: i64) -> usize {
        ((m1 + self.n1 as i64) * (2 * self.n2 as i64 + 1) + m2 + self.n2 as i64) as usize
    }

    #[inline]
    pub fn col(&self, l: usize, m: i64) -> usize {
        self.block_offset(l) + (m + l as i64) as usize
    }

    /// Dense entry at `(row, col)`.
    #[inline]
    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.dense[row * self.dim() + col]
    }

    /// `<n1 m1 n2 m2 | l m1+m2>`, zero outside the coupling range.
    pub fn coefficient(&self, m1: i64, m2: i64, l: usize) -> f64 {
        if l < self.min_degree() || l > self.max_degree() {
            return 0.0;
        }
        let m = m1 + m2;
        if m1.unsigned_abs() as usize > self.n1
            || m2.unsigned_abs() as usize > self.n2
            || m.unsigned_abs() as usize > l
        {
            return 0.0;
        }
        self.entry(self.row(m1, m2), self.col(l, m))
    }

    /// Nonzero coefficients coupling into degree `l`.
    pub fn block(&self, l: usize) -> &[(i64, i64, f64)] {
        &self.blocks[l - self.min_degree()]
    }

    /// Max-abs entry of `C^T C - I`.
    pub fn orthogonality_error(&self) -> f64 {
        let d = self.dim();
        let mut err: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                let dot: f64 = (0..d).map(|k| self.entry(k, i) * self.entry(k, j)).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                err = err.max((dot - target).abs());
            }
        }
        err
    }

    /// Max-abs entry of `D_{n1} (x) D_{n2} - C [(+)_l D_l] C^T`, where
    /// `ds[k]` must hold the degree-`k` matrix of one rotation.
    pub fn block_diagonalization_residual(&self, ds: &[WignerD]) -> f64 {
        let d = self.dim();
        let (d1, d2) = (&ds[self.n1], &ds[self.n2]);
        let w2 = 2 * self.n2 + 1;
        let n1 = self.n1 as i64;
        let n2 = self.n2 as i64;
        let kron = |r: usize, c: usize| -> Complex64 {
            let (a1, a2) = ((r / w2) as i64 - n1, (r % w2) as i64 - n2);
            let (b1, b2) = ((c / w2) as i64 - n1, (c % w2) as i64 - n2);
            d1.get(a1, b1) * d2.get(a2, b2)
        };
        // column -> (l, m)
        let mut coupled = Vec::with_capacity(d);
        for l in self.min_degree()..=self.max_degree() {
            for m in -(l as i64)..=l as i64 {
                coupled.push((l, m));
            }
        }
        let mut worst: f64 = 0.0;
        for r in 0..d {
            for c in 0..d {
                let mut acc = Complex64::new(0.0, 0.0);
                for (i, &(li, mi)) in coupled.iter().enumerate() {
                    let cri = self.entry(r, i);
                    if cri == 0.0 {
                        continue;
                    }
                    for (j, &(lj, mj)) in coupled.iter().enumerate() {
                        if li != lj {
                            continue;
                        }
                        let ccj = self.entry(c, j);
                        if ccj != 0.0 {
                            acc += ds[li].get(mi, mj) * (cri * ccj);
                        }
                    }
                }
                worst = worst.max((kron(r, c) - acc).norm());
            }
        }
        worst
    }
}

fn ln_factorial_table(max: usize) -> Vec<f64> {
    let mut t = vec![0.0; max + 1];
    for k in 1..=max {
        t[k] = t[k - 1] + (k as f64).ln();
    }
    t
}

/// `<j1 m1 j2 m2 | j m>` by Racah's formula evaluated in log-factorials.
fn racah(lf: &[f64], j1: i64, m1: i64, j2: i64, m2: i64, j: i64, m: i64) -> f64 {
    if m1 + m2 != m || m1.abs() > j1 || m2.abs() > j2 || m.abs() > j {
        return 0.0;
    }
    if j < (j1 - j2).abs() || j > j1 + j2 {
        return 0.0;
    }
    let f = |k: i64| lf[k as usize];
    let pre = 0.5
        * ((2.0 * j as f64 + 1.0).ln() + f(j + j1 - j2) + f(j - j1 + j2) + f(j1 + j2 - j)
            - f(j1 + j2 + j + 1)
            + f(j + m)
            + f(j - m)
            + f(j1 - m1)
            + f(j1 + m1)
            + f(j2 - m2)
            + f(j2 + m2));
    let kmin = 0.max(j2 - j - m1).max(j1 - j + m2);
    let kmax = (j1 + j2 - j).min(j1 - m1).min(j2 + m2);
    let mut total = 0.0;
    for k in kmin..=kmax {
        let den = f(k)
            + f(j1 + j2 - j - k)
            + f(j1 - m1 - k)
            + f(j2 + m2 - k)
            + f(j - j2 + m1 + k)
            + f(j - j1 - m2 + k);
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        total += sign * (pre - den).exp();
    }
    total
}

/// Clebsch-Gordan matrix for degrees `(n1, n2)`.
pub fn clebsch_gordan(n1: usize, n2: usize) -> CgMatrix {
    let lf = ln_factorial_table(2 * (n1 + n2) + 2);
    let (w1, w2) = (2 * n1 + 1, 2 * n2 + 1);
    let dim = w1 * w2;
    let lo = n1.abs_diff(n2);
    let mut cg = CgMatrix {
        n1,
        n2,
        dense: vec![0.0; dim * dim],
        blocks: Vec::new(),
    };
    let (i1, i2) = (n1 as i64, n2 as i64);
    for l in lo..=(n1 + n2) {
        let li = l as i64;
        let mut block = Vec::new();
        for m1 in -i1..=i1 {
            for m2 in -i2..=i2 {
                let m = m1 + m2;
                if m.abs() > li {
                    continue;
                }
                let v = racah(&lf, i1, m1, i2, m2, li, m);
                let (r, c) = (cg.row(m1, m2), cg.col(l, m));
                cg.dense[r * dim + c] = v;
                if v != 0.0 {
                    block.push((m1, m2, v));
                }
            }
        }
        cg.blocks.push(block);
    }
    cg
}

/// Immutable table of every `C_{n1,n2}` with `n1, n2 <= max_degree`.
#[derive(Debug, Clone)]
pub struct CgCache {
    max_degree: usize,
    tables: HashMap<(usize, usize), CgMatrix>,
}

impl CgCache {
    pub fn new(max_degree: usize) -> Self {
        let mut tables = HashMap::new();
        for n1 in 0..=max_degree {
            for n2 in 0..=max_degree {
                tables.insert((n1, n2), clebsch_gordan(n1, n2));
            }
        }
        CgCache { max_degree, tables }
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    /// Panics when a degree exceeds the cache range.
    pub fn get(&self, n1: usize, n2: usize) -> &CgMatrix {
        self.tables
            .get(&(n1, n2))
            .unwrap_or_else(|| panic!("CG cache built for degree {} lacks ({n1}, {n2})", self.max_degree))
    }
}
