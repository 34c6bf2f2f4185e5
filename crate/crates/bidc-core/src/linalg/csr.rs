use num_complex::Complex64;
use rayon::prelude::*;

use super::HermitianOperator;

/// Real symmetric matrix in compressed-sparse-row form, both triangles
/// stored.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

/// Below this many rows the matvec stays on one thread.
const PAR_ROWS: usize = 4096;

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets, summing duplicates. Entries
    /// are kept even when they sum to zero so the sparsity pattern does not
    /// depend on parameter values.
    pub fn from_triplets(n: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(t.len());
        let mut values: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in t {
            assert!(r < n && c < n, "triplet ({r}, {c}) outside {n}x{n}");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let s = self.row_ptr[r];
        let e = self.row_ptr[r + 1];
        self.col_idx[s..e]
            .iter()
            .copied()
            .zip(self.values[s..e].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let s = self.row_ptr[r];
        let e = self.row_ptr[r + 1];
        match self.col_idx[s..e].binary_search(&c) {
            Ok(i) => self.values[s + i],
            Err(_) => 0.0,
        }
    }

    /// Position of `(r, c)` in `values`, if stored.
    pub fn position(&self, r: usize, c: usize) -> Option<usize> {
        let s = self.row_ptr[r];
        let e = self.row_ptr[r + 1];
        self.col_idx[s..e].binary_search(&c).ok().map(|i| s + i)
    }

    pub fn max_row_degree(&self) -> usize {
        (0..self.n)
            .map(|r| self.row_ptr[r + 1] - self.row_ptr[r])
            .max()
            .unwrap_or(0)
    }

    /// `max |A − Aᵀ|` over stored entries.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                worst = worst.max((v - self.get(c, r)).abs());
            }
        }
        worst
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|r| self.get(r, r)).sum()
    }

    pub fn matvec_real(&self, x: &[f64], y: &mut [f64]) {
        let body = |(r, yr): (usize, &mut f64)| {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yr = acc;
        };
        if self.n >= PAR_ROWS {
            y.par_iter_mut().enumerate().for_each(body);
        } else {
            y.iter_mut().enumerate().for_each(body);
        }
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                m[(r, c)] += v;
            }
        }
        m
    }
}

impl HermitianOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        let body = |(r, yr): (usize, &mut Complex64)| {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += x[self.col_idx[k]] * self.values[k];
            }
            *yr = acc;
        };
        if self.n >= PAR_ROWS {
            y.par_iter_mut().enumerate().for_each(body);
        } else {
            y.iter_mut().enumerate().for_each(body);
        }
    }

    /// Gershgorin discs.
    fn spectral_bounds(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for r in 0..self.n {
            let mut d = 0.0;
            let mut off = 0.0;
            for (c, v) in self.row(r) {
                if c == r {
                    d += v;
                } else {
                    off += v.abs();
                }
            }
            lo = lo.min(d - off);
            hi = hi.max(d + off);
        }
        (lo, hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_and_sort() {
        let m = CsrMatrix::from_triplets(
            3,
            vec![
                (2, 0, 1.0),
                (0, 0, 2.0),
                (0, 0, 3.0),
                (0, 2, 1.0),
                (1, 1, 0.0),
            ],
        );
        assert_eq!(m.get(0, 0), 5.0);
        assert_eq!(m.nnz(), 4);
        assert_eq!(m.position(1, 1), Some(2));
        assert_eq!(m.asymmetry(), 0.0);
        let mut y = vec![0.0; 3];
        m.matvec_real(&[1.0, 1.0, 1.0], &mut y);
        assert_eq!(y, vec![6.0, 0.0, 1.0]);
        let (lo, hi) = m.spectral_bounds();
        assert!(lo <= -1.0 && hi >= 6.0);
    }
}
