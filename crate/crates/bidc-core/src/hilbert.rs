//! The two-excitation sector of four atoms on an interacting ring, its
//! Hamiltonian, and time evolution under time-dependent couplings.
//!
//! Basis order: photon pairs `(i ≤ j)` lexicographically, then the six atom
//! pairs `(n < m)`, then atom–photon states `(n, i)` with `n` major. Basis
//! states are normalized, so the doubly occupied photon state is
//! `(a_i†)²/√2 |vac⟩`.

use std::io::{Read, Write};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::chebyshev::{chebyshev_step, norm};
use crate::linalg::{CsrMatrix, HermitianOperator};
use crate::model::ModelParams;

/// Atom pairs in basis order.
pub const ATOM_PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BasisLabel {
    /// Two photons on sites `i ≤ j`.
    PhotonPair(usize, usize),
    /// Atoms `n < m` excited (0-based atom indices).
    AtomPair(usize, usize),
    /// Atom `n` excited, one photon on site `i`.
    AtomPhoton(usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwoExcitationBasis {
    pub n_sites: usize,
}

impl TwoExcitationBasis {
    pub fn new(n_sites: usize) -> Result<Self> {
        if n_sites < 2 {
            return Err(Error::invalid("n_sites", "basis needs at least 2 sites"));
        }
        Ok(TwoExcitationBasis { n_sites })
    }

    pub fn n_photon_pairs(&self) -> usize {
        self.n_sites * (self.n_sites + 1) / 2
    }

    pub fn dim(&self) -> usize {
        self.n_photon_pairs() + 6 + 4 * self.n_sites
    }

    pub fn photon_pair(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * self.n_sites - i * i.saturating_sub(1) / 2 + (j - i)
    }

    pub fn atom_pair(&self, n: usize, m: usize) -> usize {
        let (n, m) = if n < m { (n, m) } else { (m, n) };
        let k = ATOM_PAIRS
            .iter()
            .position(|&p| p == (n, m))
            .expect("atom pair of distinct atoms 0..4");
        self.n_photon_pairs() + k
    }

    pub fn atom_photon(&self, n: usize, i: usize) -> usize {
        self.n_photon_pairs() + 6 + n * self.n_sites + i
    }

    pub fn index(&self, label: BasisLabel) -> usize {
        match label {
            BasisLabel::PhotonPair(i, j) => self.photon_pair(i, j),
            BasisLabel::AtomPair(n, m) => self.atom_pair(n, m),
            BasisLabel::AtomPhoton(n, i) => self.atom_photon(n, i),
        }
    }

    pub fn label(&self, q: usize) -> BasisLabel {
        let np = self.n_photon_pairs();
        let n = self.n_sites;
        if q < np {
            // Row i holds n − i entries.
            let mut i = 0;
            let mut start = 0;
            while start + (n - i) <= q {
                start += n - i;
                i += 1;
            }
            BasisLabel::PhotonPair(i, i + (q - start))
        } else if q < np + 6 {
            let (a, b) = ATOM_PAIRS[q - np];
            BasisLabel::AtomPair(a, b)
        } else {
            let r = q - np - 6;
            BasisLabel::AtomPhoton(r / n, r % n)
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Term {
    Fixed(f64),
    G12(f64),
    G34(f64),
    Omega(usize),
    Frame,
}

/// The Hamiltonian on the two-excitation sector. The sparsity pattern is
/// fixed at construction; couplings, atomic frequencies and the frame energy
/// can be changed in place.
#[derive(Clone, Debug)]
pub struct SparseHamiltonian {
    pub basis: TwoExcitationBasis,
    pub params: ModelParams,
    pub matrix: CsrMatrix,
    /// Energy subtracted from the diagonal (e.g. `2Ω` for a rotating frame).
    pub frame_energy: f64,
    terms: Vec<(usize, Term)>,
}

impl SparseHamiltonian {
    /// Assembles the Hamiltonian, optionally overriding `(g_12, g_34)`.
    pub fn assemble(
        params: &ModelParams,
        basis: &TwoExcitationBasis,
        g_overrides: Option<(f64, f64)>,
    ) -> Result<Self> {
        params.validate()?;
        if basis.n_sites != params.n_sites {
            return Err(Error::DimensionMismatch {
                expected: params.n_sites,
                got: basis.n_sites,
            });
        }
        let n = params.n_sites;
        let j = params.hopping;
        let wc = params.cavity_freq;
        let sites = params.atom_sites();
        let mut raw: Vec<(usize, usize, Term)> = Vec::new();
        let sym = |a: usize, b: usize, t: Term, raw: &mut Vec<(usize, usize, Term)>| {
            raw.push((a, b, t));
            if a != b {
                raw.push((b, a, t));
            }
        };

        for i in 0..n {
            for jj in i..n {
                let q = basis.photon_pair(i, jj);
                let u = if i == jj { params.interaction } else { 0.0 };
                sym(q, q, Term::Fixed(2.0 * wc - u), &mut raw);
                sym(q, q, Term::Frame, &mut raw);
            }
        }
        for site in 0..n {
            let to = (site + 1) % n;
            // a_to† a_site acting on every pair state holding a photon at `site`.
            for i in 0..n {
                for jj in i..n {
                    let occ = [i, jj];
                    let Some(k) = occ.iter().position(|&x| x == site) else {
                        continue;
                    };
                    let other = occ[1 - k];
                    let n_from = occ.iter().filter(|&&x| x == site).count() as f64;
                    let n_to = occ.iter().filter(|&&x| x == to).count() as f64;
                    let amp = -j * n_from.sqrt() * (n_to + 1.0).sqrt();
                    let src = basis.photon_pair(i, jj);
                    let dst = basis.photon_pair(to, other);
                    sym(dst, src, Term::Fixed(amp), &mut raw);
                }
            }
            for a in 0..4 {
                sym(
                    basis.atom_photon(a, to),
                    basis.atom_photon(a, site),
                    Term::Fixed(-j),
                    &mut raw,
                );
            }
        }
        for &(a, b) in ATOM_PAIRS.iter() {
            let q = basis.atom_pair(a, b);
            sym(q, q, Term::Omega(a), &mut raw);
            sym(q, q, Term::Omega(b), &mut raw);
            sym(q, q, Term::Frame, &mut raw);
        }
        for a in 0..4 {
            for i in 0..n {
                let q = basis.atom_photon(a, i);
                sym(q, q, Term::Omega(a), &mut raw);
                sym(q, q, Term::Fixed(wc), &mut raw);
                sym(q, q, Term::Frame, &mut raw);
            }
        }
        let g_term = |a: usize, c: f64| if a < 2 { Term::G12(c) } else { Term::G34(c) };
        for a in 0..4 {
            let s = sites[a];
            for i in 0..n {
                let c = if i == s { 2f64.sqrt() } else { 1.0 };
                sym(
                    basis.photon_pair(s, i),
                    basis.atom_photon(a, i),
                    g_term(a, c),
                    &mut raw,
                );
            }
        }
        for &(a, b) in ATOM_PAIRS.iter() {
            let q = basis.atom_pair(a, b);
            sym(q, basis.atom_photon(b, sites[a]), g_term(a, 1.0), &mut raw);
            sym(q, basis.atom_photon(a, sites[b]), g_term(b, 1.0), &mut raw);
        }

        let dim = basis.dim();
        let matrix =
            CsrMatrix::from_triplets(dim, raw.iter().map(|&(r, c, _)| (r, c, 0.0)).collect());
        let terms = raw
            .into_iter()
            .map(|(r, c, t)| (matrix.position(r, c).expect("pattern holds every term"), t))
            .collect();
        let mut h = SparseHamiltonian {
            basis: basis.clone(),
            params: params.clone(),
            matrix,
            frame_energy: 0.0,
            terms,
        };
        if let Some((g12, g34)) = g_overrides {
            h.params.g_12 = g12;
            h.params.g_34 = g34;
        }
        h.refresh();
        Ok(h)
    }

    fn refresh(&mut self) {
        let p = &self.params;
        let values = &mut self.matrix.values;
        values.iter_mut().for_each(|v| *v = 0.0);
        for &(pos, t) in &self.terms {
            values[pos] += match t {
                Term::Fixed(v) => v,
                Term::G12(c) => c * p.g_12,
                Term::G34(c) => c * p.g_34,
                Term::Omega(a) => p.omega[a],
                Term::Frame => -self.frame_energy,
            };
        }
    }

    pub fn set_couplings(&mut self, g_12: f64, g_34: f64) {
        self.params.g_12 = g_12;
        self.params.g_34 = g_34;
        self.refresh();
    }

    pub fn set_frequencies(&mut self, omega: [f64; 4]) {
        self.params.omega = omega;
        self.refresh();
    }

    pub fn set_frame(&mut self, energy: f64) {
        self.frame_energy = energy;
        self.refresh();
    }

    /// Number of stored entries that move when the couplings or atomic
    /// frequencies change.
    pub fn parametric_entries(&self) -> usize {
        let mut pos: Vec<usize> = self
            .terms
            .iter()
            .filter(|(_, t)| matches!(t, Term::G12(_) | Term::G34(_) | Term::Omega(_)))
            .map(|&(p, _)| p)
            .collect();
        pos.sort_unstable();
        pos.dedup();
        pos.len()
    }

    pub fn dim(&self) -> usize {
        self.matrix.n
    }
}

impl HermitianOperator for SparseHamiltonian {
    fn dim(&self) -> usize {
        self.matrix.n
    }

    fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        self.matrix.apply(x, y)
    }

    fn spectral_bounds(&self) -> (f64, f64) {
        self.matrix.spectral_bounds()
    }
}

/// `y = H x`.
pub fn apply_hamiltonian(h: &SparseHamiltonian, x: &[Complex64]) -> Result<Vec<Complex64>> {
    if x.len() != h.dim() {
        return Err(Error::DimensionMismatch {
            expected: h.dim(),
            got: x.len(),
        });
    }
    let mut y = vec![Complex64::new(0.0, 0.0); x.len()];
    h.apply(x, &mut y);
    Ok(y)
}

/// How atomic frequencies follow the couplings during a ramp.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FrequencyPolicy {
    /// Frequencies stay as in the Hamiltonian's parameters.
    Fixed,
    /// `Ω_i(t) = Ω + g_i(t)²/√((Ω−ω_c)² − 4J²)`, keeping both pairs on the
    /// dressed resonance `2Ω` throughout.
    StarkTracking { omega: f64 },
}

#[derive(Clone, Debug)]
pub struct EvolveOptions {
    /// Longest propagation substep; the couplings are frozen at the
    /// substep midpoint.
    pub dt_control: f64,
    /// Allowed `| ‖ψ‖ − ‖ψ₀‖ |` at every sample.
    pub norm_tol: f64,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions {
            dt_control: 1.0,
            norm_tol: 1e-8,
        }
    }
}

/// Integrates `i∂ₜψ = H(t)ψ` with couplings `schedule(t) = (g_12, g_34)`,
/// calling `observe(t, ψ)` at each of `sample_times` (ascending, starting
/// at or after 0). Each substep applies `exp(−iH(t_mid)Δt)` by Chebyshev
/// expansion.
pub fn evolve_state<S, O>(
    h: &mut SparseHamiltonian,
    psi0: &[Complex64],
    schedule: S,
    policy: FrequencyPolicy,
    sample_times: &[f64],
    opts: &EvolveOptions,
    mut observe: O,
) -> Result<Vec<Complex64>>
where
    S: Fn(f64) -> (f64, f64),
    O: FnMut(f64, &[Complex64]),
{
    if psi0.len() != h.dim() {
        return Err(Error::DimensionMismatch {
            expected: h.dim(),
            got: psi0.len(),
        });
    }
    let mut psi = psi0.to_vec();
    let n0 = norm(&psi);
    let mut t = 0.0;
    for &ts in sample_times {
        if ts < t {
            return Err(Error::invalid("sample_times", "must be ascending from 0"));
        }
        let span = ts - t;
        let steps = (span / opts.dt_control).ceil() as usize;
        for s in 0..steps {
            let dt = span / steps as f64;
            let mid = t + (s as f64 + 0.5) * dt;
            set_instant(h, &schedule, policy, mid);
            let bounds = h.spectral_bounds();
            chebyshev_step(h, bounds, &mut psi, dt);
        }
        t = ts;
        let drift = (norm(&psi) - n0).abs();
        if drift > opts.norm_tol {
            return Err(Error::StepFailure(format!(
                "norm drift {drift:.3e} at t = {t} exceeds {:.1e}",
                opts.norm_tol
            )));
        }
        observe(t, &psi);
    }
    Ok(psi)
}

fn set_instant<S: Fn(f64) -> (f64, f64)>(
    h: &mut SparseHamiltonian,
    schedule: &S,
    policy: FrequencyPolicy,
    t: f64,
) {
    let (g12, g34) = schedule(t);
    h.params.g_12 = g12;
    h.params.g_34 = g34;
    if let FrequencyPolicy::StarkTracking { omega } = policy {
        let s1 = crate::effective::stark_shift(g12, omega, &h.params);
        let s3 = crate::effective::stark_shift(g34, omega, &h.params);
        h.params.omega = [omega + s1, omega + s1, omega + s3, omega + s3];
    }
    h.refresh();
}

/// `σ₁⁺σ₂⁺|G, vac⟩` scaled by `amplitude`.
pub fn pair_state(basis: &TwoExcitationBasis, pair: usize, amplitude: Complex64) -> Vec<Complex64> {
    let mut psi = vec![Complex64::new(0.0, 0.0); basis.dim()];
    let q = if pair == 0 {
        basis.atom_pair(0, 1)
    } else {
        basis.atom_pair(2, 3)
    };
    psi[q] = amplitude;
    psi
}

const MAGIC: &[u8; 4] = b"BIDC";
const VERSION: u32 = 1;

/// Raw amplitudes: 16-byte header (magic `BIDC`, `u32` version, `u64`
/// dimension, little endian) followed by `(re, im)` `f64` pairs.
pub fn write_state_binary<W: Write>(mut w: W, psi: &[Complex64]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(psi.len() as u64).to_le_bytes())?;
    for c in psi {
        w.write_all(&c.re.to_le_bytes())?;
        w.write_all(&c.im.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_state_binary<R: Read>(mut r: R) -> Result<Vec<Complex64>> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if &header[..4] != MAGIC {
        return Err(Error::Parse("bad magic in state dump".into()));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Parse(format!(
            "unsupported state dump version {version}"
        )));
    }
    let dim = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
    let mut out = Vec::with_capacity(dim);
    let mut buf = [0u8; 16];
    for _ in 0..dim {
        r.read_exact(&mut buf)?;
        out.push(Complex64::new(
            f64::from_le_bytes(buf[..8].try_into().unwrap()),
            f64::from_le_bytes(buf[8..].try_into().unwrap()),
        ));
    }
    Ok(out)
}

/// Appends `time,index,re,im` rows for every nonzero amplitude.
pub fn write_state_csv<W: Write>(
    w: &mut csv::Writer<W>,
    time: f64,
    psi: &[Complex64],
) -> Result<()> {
    for (q, c) in psi.iter().enumerate() {
        if c.re != 0.0 || c.im != 0.0 {
            w.write_record([
                time.to_string(),
                q.to_string(),
                c.re.to_string(),
                c.im.to_string(),
            ])
            .map_err(|e| Error::Parse(e.to_string()))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dense_symmetric_eigen;

    #[test]
    fn dimensions() {
        assert_eq!(TwoExcitationBasis::new(148).unwrap().dim(), 11624);
        assert_eq!(TwoExcitationBasis::new(2).unwrap().dim(), 17);
        assert!(TwoExcitationBasis::new(1).is_err());
    }

    #[test]
    fn index_round_trip() {
        let b = TwoExcitationBasis::new(7).unwrap();
        for q in 0..b.dim() {
            assert_eq!(b.index(b.label(q)), q);
        }
        assert_eq!(b.label(0), BasisLabel::PhotonPair(0, 0));
        assert_eq!(b.label(7), BasisLabel::PhotonPair(1, 1));
    }

    fn free_params(n: usize, u: f64) -> ModelParams {
        let mut p = ModelParams::reference(n);
        p.interaction = u;
        p.site_2 = n / 2;
        p.g_12 = 0.0;
        p.g_34 = 0.0;
        p
    }

    #[test]
    fn hermitian_and_local() {
        let p = ModelParams::reference(12);
        let h =
            SparseHamiltonian::assemble(&p, &TwoExcitationBasis::new(12).unwrap(), None).unwrap();
        assert_eq!(h.matrix.asymmetry(), 0.0);
        assert!(h.matrix.max_row_degree() <= 9);
    }

    #[test]
    fn two_site_block_by_hand() {
        // N = 2, U = 0: states |00⟩, |01⟩, |11⟩ with the doubled ring bond.
        // H = −2J [[0, √2, 0], [√2, 0, √2], [0, √2, 0]], eigenvalues 0, ±4J.
        let p = free_params(2, 0.0);
        let p = ModelParams {
            site_1: 0,
            site_2: 1,
            ..p
        };
        let h =
            SparseHamiltonian::assemble(&p, &TwoExcitationBasis::new(2).unwrap(), None).unwrap();
        let d = h.matrix.to_dense();
        let s2 = 2f64.sqrt();
        assert_eq!(d[(0, 1)], -2.0 * s2);
        assert_eq!(d[(1, 2)], -2.0 * s2);
        assert_eq!(d[(0, 2)], 0.0);
        let block = d.view((0, 0), (3, 3)).into_owned();
        let (vals, _) = dense_symmetric_eigen(block);
        assert!((vals[0] + 4.0).abs() < 1e-14);
        assert!(vals[1].abs() < 1e-14);
        assert!((vals[2] - 4.0).abs() < 1e-14);
    }

    #[test]
    fn parametric_updates_match_reassembly() {
        let p = ModelParams::reference(10);
        let b = TwoExcitationBasis::new(10).unwrap();
        let mut h = SparseHamiltonian::assemble(&p, &b, None).unwrap();
        h.set_couplings(0.07, 0.13);
        h.set_frequencies([-3.0, -3.1, -3.2, -3.3]);
        let mut q = p.clone();
        q.g_12 = 0.07;
        q.g_34 = 0.13;
        q.omega = [-3.0, -3.1, -3.2, -3.3];
        let h2 = SparseHamiltonian::assemble(&q, &b, None).unwrap();
        assert_eq!(h.matrix, h2.matrix);
        // 8N coupling entries into photon pairs, 24 into atom pairs, and the
        // 6 + 4N diagonals carrying atomic frequencies.
        assert_eq!(h.parametric_entries(), 4 * 2 * 10 + 2 * 12 + 6 + 4 * 10);
    }

    #[test]
    fn binary_round_trip() {
        let psi = vec![Complex64::new(0.25, -1.0), Complex64::new(3.0, 0.5)];
        let mut buf = Vec::new();
        write_state_binary(&mut buf, &psi).unwrap();
        assert_eq!(buf.len(), 16 + 32);
        assert_eq!(read_state_binary(&buf[..]).unwrap(), psi);
        buf[0] = b'X';
        assert!(read_state_binary(&buf[..]).is_err());
    }

    #[test]
    fn decoupled_pair_is_stationary() {
        let p = free_params(8, 6.0);
        let b = TwoExcitationBasis::new(8).unwrap();
        let mut h = SparseHamiltonian::assemble(&p, &b, None).unwrap();
        h.set_frame(p.omega[0] + p.omega[1]);
        let psi0 = pair_state(&b, 0, Complex64::new(1.0, 0.0));
        let out = evolve_state(
            &mut h,
            &psi0,
            |_| (0.0, 0.0),
            FrequencyPolicy::Fixed,
            &[10.0, 100.0],
            &EvolveOptions::default(),
            |_, _| {},
        )
        .unwrap();
        for (a, b) in out.iter().zip(&psi0) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
