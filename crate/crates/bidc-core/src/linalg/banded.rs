//! Reverse Cuthill–McKee reordering and banded LU with partial pivoting,
//! used to apply `(H − σ)⁻¹` in the shift-invert eigensolver.

use std::collections::VecDeque;

use super::csr::CsrMatrix;
use crate::error::{Error, Result};

/// Reverse Cuthill–McKee permutation: `perm[new] = old`.
pub fn rcm(a: &CsrMatrix) -> Vec<usize> {
    let n = a.n;
    let degree: Vec<usize> = (0..n).map(|r| a.row_ptr[r + 1] - a.row_ptr[r]).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let seed = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| degree[i])
            .unwrap();
        let start = peripheral(a, seed, &degree);
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nb: Vec<usize> = a.row(v).map(|(c, _)| c).filter(|&c| !visited[c]).collect();
            nb.sort_unstable_by_key(|&c| (degree[c], c));
            for c in nb {
                visited[c] = true;
                queue.push_back(c);
            }
        }
    }
    order.reverse();
    order
}

/// Walks to a pseudo-peripheral node by repeated BFS.
fn peripheral(a: &CsrMatrix, seed: usize, degree: &[usize]) -> usize {
    let mut node = seed;
    let mut ecc = 0;
    for _ in 0..8 {
        let (far, depth) = farthest(a, node, degree);
        if depth <= ecc {
            break;
        }
        ecc = depth;
        node = far;
    }
    node
}

fn farthest(a: &CsrMatrix, start: usize, degree: &[usize]) -> (usize, usize) {
    let mut dist = vec![usize::MAX; a.n];
    dist[start] = 0;
    let mut queue = VecDeque::from([start]);
    let mut best = (start, 0);
    while let Some(v) = queue.pop_front() {
        let d = dist[v];
        if d > best.1 || (d == best.1 && degree[v] < degree[best.0]) {
            best = (v, d);
        }
        for (c, _) in a.row(v) {
            if dist[c] == usize::MAX {
                dist[c] = d + 1;
                queue.push_back(c);
            }
        }
    }
    best
}

/// Half-bandwidth of `a` under `perm` (`perm[new] = old`).
pub fn bandwidth(a: &CsrMatrix, perm: &[usize]) -> usize {
    let mut inv = vec![0usize; a.n];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    let mut bw = 0;
    for r in 0..a.n {
        for (c, _) in a.row(r) {
            bw = bw.max(inv[r].abs_diff(inv[c]));
        }
    }
    bw
}

/// LU factors of `P(A − σ)Pᵀ` in LAPACK-style band storage.
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<f64>,
    ipiv: Vec<usize>,
    perm: Vec<usize>,
}

impl BandedLu {
    /// Factors `a − shift·I` after RCM reordering.
    pub fn factor(a: &CsrMatrix, shift: f64) -> Result<Self> {
        let n = a.n;
        let perm = rcm(a);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let bw = bandwidth(a, &perm);
        let (kl, ku) = (bw, bw);
        let kv = kl + ku;
        let ldab = 2 * kl + ku + 1;
        let mut ab = vec![0.0; ldab * n];
        let idx = |r: usize, c: usize| kv + r - c + c * ldab;
        for r in 0..n {
            for (c, v) in a.row(r) {
                let (i, j) = (inv[r], inv[c]);
                ab[idx(i, j)] += v;
            }
            ab[idx(inv[r], inv[r])] -= shift;
        }
        log::debug!("banded LU: n = {n}, half-bandwidth = {bw}");

        let mut ipiv = vec![0usize; n];
        let mut ju = 0usize;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let mut jp = 0;
            let mut best = ab[idx(j, j)].abs();
            for i in 1..=km {
                let v = ab[idx(j + i, j)].abs();
                if v > best {
                    best = v;
                    jp = i;
                }
            }
            ipiv[j] = j + jp;
            if best == 0.0 {
                return Err(Error::Singular(format!(
                    "zero pivot in column {j} for shift {shift}"
                )));
            }
            ju = ju.max((j + ku + jp).min(n - 1));
            if jp != 0 {
                for c in j..=ju {
                    ab.swap(idx(j, c), idx(j + jp, c));
                }
            }
            let piv = ab[idx(j, j)];
            for i in 1..=km {
                ab[idx(j + i, j)] /= piv;
            }
            for c in (j + 1)..=ju {
                let t = ab[idx(j, c)];
                if t != 0.0 {
                    for i in 1..=km {
                        let l = ab[idx(j + i, j)];
                        ab[idx(j + i, c)] -= l * t;
                    }
                }
            }
        }
        Ok(BandedLu {
            n,
            kl,
            ku,
            ldab,
            ab,
            ipiv,
            perm,
        })
    }

    pub fn half_bandwidth(&self) -> usize {
        self.kl
    }

    /// Solves `(A − σ) x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        let kv = self.kl + self.ku;
        let idx = |r: usize, c: usize| kv + r - c + c * self.ldab;
        let mut x: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                x.swap(j, p);
            }
            let xj = x[j];
            if xj != 0.0 {
                let km = self.kl.min(n - 1 - j);
                for i in 1..=km {
                    x[j + i] -= self.ab[idx(j + i, j)] * xj;
                }
            }
        }
        for j in (0..n).rev() {
            x[j] /= self.ab[idx(j, j)];
            let xj = x[j];
            if xj != 0.0 {
                for i in j.saturating_sub(kv)..j {
                    x[i] -= self.ab[idx(i, j)] * xj;
                }
            }
        }
        for (new, &old) in self.perm.iter().enumerate() {
            b[old] = x[new];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring_laplacian(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 + 0.1 * i as f64));
            t.push((i, (i + 1) % n, -1.0));
            t.push(((i + 1) % n, i, -1.0));
        }
        CsrMatrix::from_triplets(n, t)
    }

    #[test]
    fn rcm_is_a_permutation_with_small_band() {
        let a = ring_laplacian(50);
        let p = rcm(&a);
        let mut s = p.clone();
        s.sort_unstable();
        assert_eq!(s, (0..50).collect::<Vec<_>>());
        assert!(bandwidth(&a, &p) <= 2);
    }

    #[test]
    fn solve_matches_matvec() {
        let a = ring_laplacian(37);
        let shift = 2.05;
        let lu = BandedLu::factor(&a, shift).unwrap();
        let x: Vec<f64> = (0..37).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let mut b = vec![0.0; 37];
        a.matvec_real(&x, &mut b);
        for i in 0..37 {
            b[i] -= shift * x[i];
        }
        lu.solve(&mut b);
        for i in 0..37 {
            assert!((b[i] - x[i]).abs() < 1e-10, "{i}: {} vs {}", b[i], x[i]);
        }
    }

    #[test]
    fn needs_pivoting() {
        // Zero diagonal forces row exchanges.
        let a = CsrMatrix::from_triplets(
            3,
            vec![
                (0, 1, 1.0),
                (1, 0, 1.0),
                (1, 2, 2.0),
                (2, 1, 2.0),
                (2, 2, 1.0),
            ],
        );
        let lu = BandedLu::factor(&a, 0.0).unwrap();
        let x = [1.0, -2.0, 3.0];
        let mut b = vec![0.0; 3];
        a.matvec_real(&x, &mut b);
        lu.solve(&mut b);
        for i in 0..3 {
            assert!((b[i] - x[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_singularity_is_reported() {
        let a = CsrMatrix::from_triplets(2, vec![(0, 0, 1.0), (1, 1, 2.0)]);
        assert!(matches!(BandedLu::factor(&a, 1.0), Err(Error::Singular(_))));
    }
}
