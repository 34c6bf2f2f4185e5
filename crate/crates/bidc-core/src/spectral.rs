//! Eigenstates of the full two-excitation Hamiltonian, their atomic and
//! photonic observables, branch labels, and identification of the bound
//! state in the doublon continuum.

use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hilbert::{SparseHamiltonian, TwoExcitationBasis, ATOM_PAIRS};
use crate::io;
use crate::linalg::{dense_symmetric_eigen, shift_invert_lanczos, ShiftInvertOptions};
use crate::model::{doublon_band, resonant_wavevector, scattering_band, ModelParams};

/// Above this dimension [`eigensolve`] switches from dense diagonalization
/// to shift-invert Lanczos.
pub const DENSE_LIMIT: usize = 6000;

/// Above this dimension a windowed [`eigensolve`] goes iterative even when
/// the dense path would fit, since it only needs a few states.
pub const WINDOWED_DENSE_LIMIT: usize = 1500;

/// Anything with a squared modulus, so observables work on real
/// eigenvectors and complex evolved states alike.
pub trait Amplitude: Copy + Send + Sync {
    fn weight(self) -> f64;
}

impl Amplitude for f64 {
    fn weight(self) -> f64 {
        self * self
    }
}

impl Amplitude for Complex64 {
    fn weight(self) -> f64 {
        self.norm_sqr()
    }
}

/// One eigenpair with its residual `‖Hv − Ev‖`.
#[derive(Clone, Debug)]
pub struct EigenState {
    pub energy: f64,
    pub vector: Vec<f64>,
    pub residual: f64,
}

impl EigenState {
    /// Amplitude of `σ_n⁺σ_m⁺|G, vac⟩`.
    pub fn alpha(&self, basis: &TwoExcitationBasis, n: usize, m: usize) -> f64 {
        self.vector[basis.atom_pair(n, m)]
    }

    pub fn complex_vector(&self) -> Vec<Complex64> {
        self.vector
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect()
    }
}

/// Flips the sign so the largest-magnitude amplitude is positive.
fn fix_phase(v: &mut [f64]) {
    let mut big = 0.0f64;
    for &x in v.iter() {
        if x.abs() > big.abs() {
            big = x;
        }
    }
    if big < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn residual(h: &SparseHamiltonian, e: f64, v: &[f64]) -> f64 {
    let mut hv = vec![0.0; v.len()];
    h.matrix.matvec_real(v, &mut hv);
    hv.iter()
        .zip(v)
        .map(|(a, b)| (a - e * b).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Eigenpairs sorted by energy. Small problems are diagonalized densely and
/// filtered by `window`; larger or windowed mid-size ones use shift-invert Lanczos around the
/// window centre, widening `count` until the window is covered. `count`
/// caps the number returned nearest the window centre (or the whole
/// spectrum's lower end when there is no window).
pub fn eigensolve(
    h: &SparseHamiltonian,
    window: Option<(f64, f64)>,
    count: Option<usize>,
) -> Result<Vec<EigenState>> {
    let dim = h.dim();
    let dense = dim <= DENSE_LIMIT && (window.is_none() || dim <= WINDOWED_DENSE_LIMIT);
    let mut out = if dense {
        dense_path(h, window)
    } else {
        let Some((lo, hi)) = window else {
            return Err(Error::invalid(
                "window",
                format!("dimension {dim} needs an energy window for the iterative path"),
            ));
        };
        iterative_path(h, (lo, hi), count)?
    };
    if let (Some(c), Some((lo, hi))) = (count, window) {
        let centre = 0.5 * (lo + hi);
        out.sort_by(|a, b| {
            (a.energy - centre)
                .abs()
                .total_cmp(&(b.energy - centre).abs())
        });
        out.truncate(c);
        out.sort_by(|a, b| a.energy.total_cmp(&b.energy));
    } else if let Some(c) = count {
        out.truncate(c);
    }
    let scale = out.iter().map(|s| s.energy.abs()).fold(1.0f64, f64::max);
    if let Some(bad) = out.iter().find(|s| s.residual > 1e-8 * scale) {
        return Err(Error::NoConvergence(format!(
            "eigenpair at E = {} has residual {:.3e}",
            bad.energy, bad.residual
        )));
    }
    Ok(out)
}

fn dense_path(h: &SparseHamiltonian, window: Option<(f64, f64)>) -> Vec<EigenState> {
    let (vals, vecs) = dense_symmetric_eigen(h.matrix.to_dense());
    (0..vals.len())
        .into_par_iter()
        .filter(|&i| window.is_none_or(|(lo, hi)| vals[i] >= lo && vals[i] <= hi))
        .map(|i| {
            let mut v: Vec<f64> = vecs.column(i).iter().copied().collect();
            fix_phase(&mut v);
            let r = residual(h, vals[i], &v);
            EigenState {
                energy: vals[i],
                vector: v,
                residual: r,
            }
        })
        .collect()
}

fn iterative_path(
    h: &SparseHamiltonian,
    (lo, hi): (f64, f64),
    count: Option<usize>,
) -> Result<Vec<EigenState>> {
    let centre = 0.5 * (lo + hi);
    // An exact eigenvalue at the shift would make the factorization singular.
    let sigma = centre + 1.234e-6 * centre.abs().max(1.0);
    let mut want = count.unwrap_or(30).max(1);
    loop {
        let opts = ShiftInvertOptions {
            sigma,
            count: want,
            ..Default::default()
        };
        let pairs = shift_invert_lanczos(&h.matrix, &opts)?;
        let inside = pairs.iter().all(|(e, _)| *e >= lo && *e <= hi);
        if count.is_some() || !inside || want >= h.dim() {
            return Ok(pairs
                .into_iter()
                .filter(|(e, _)| *e >= lo && *e <= hi)
                .map(|(e, mut v)| {
                    fix_phase(&mut v);
                    let r = residual(h, e, &v);
                    EigenState {
                        energy: e,
                        vector: v,
                        residual: r,
                    }
                })
                .collect());
        }
        want *= 2;
    }
}

/// Total atomic excitation `P_e = Σ_i ⟨σ_i⁺σ_i⁻⟩`.
pub fn atomic_excitation<A: Amplitude>(basis: &TwoExcitationBasis, v: &[A]) -> f64 {
    let np = basis.n_photon_pairs();
    let pairs: f64 = v[np..np + 6].iter().map(|a| a.weight()).sum();
    let single: f64 = v[np + 6..].iter().map(|a| a.weight()).sum();
    2.0 * pairs + single
}

/// Per-site photon numbers split into one-photon (atom–photon) and
/// two-photon contributions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhotonProfile {
    pub p_one: Vec<f64>,
    pub p_two: Vec<f64>,
}

impl PhotonProfile {
    /// `⟨a_j†a_j⟩`.
    pub fn occupation(&self, j: usize) -> f64 {
        self.p_one[j] + self.p_two[j]
    }

    pub fn total(&self) -> f64 {
        (0..self.p_one.len()).map(|j| self.occupation(j)).sum()
    }
}

pub fn photon_distribution<A: Amplitude>(basis: &TwoExcitationBasis, v: &[A]) -> PhotonProfile {
    let n = basis.n_sites;
    let mut p_one = vec![0.0; n];
    let mut p_two = vec![0.0; n];
    for a in 0..4 {
        for (i, p) in p_one.iter_mut().enumerate() {
            *p += v[basis.atom_photon(a, i)].weight();
        }
    }
    for i in 0..n {
        for j in i..n {
            let w = v[basis.photon_pair(i, j)].weight();
            if i == j {
                // (a†)²/√2|vac⟩ holds two photons on one site.
                p_two[i] += 2.0 * w;
            } else {
                p_two[i] += w;
                p_two[j] += w;
            }
        }
    }
    PhotonProfile { p_one, p_two }
}

/// `⟨a_i†a_j†a_i a_j⟩` over the ring, symmetric.
pub fn two_photon_correlation<A: Amplitude>(basis: &TwoExcitationBasis, v: &[A]) -> DMatrix<f64> {
    let n = basis.n_sites;
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let w = v[basis.photon_pair(i, j)].weight();
            if i == j {
                m[(i, i)] = 2.0 * w;
            } else {
                m[(i, j)] = w;
                m[(j, i)] = w;
            }
        }
    }
    m
}

/// Sites `[site_1 − margin, site_2 + margin]`, wrapped on the ring.
pub fn localization_window(p: &ModelParams, margin: usize) -> Vec<usize> {
    let n = p.n_sites as i64;
    let lo = p.site_1 as i64 - margin as i64;
    let hi = p.site_2 as i64 + margin as i64;
    let mut sites: Vec<usize> = (lo..=hi).map(|s| s.rem_euclid(n) as usize).collect();
    sites.sort_unstable();
    sites.dedup();
    sites
}

/// Fraction of `Σ_j P_two(j)` inside [`localization_window`]. Zero when
/// there is no two-photon weight at all.
pub fn localization(p: &ModelParams, p_two: &[f64], margin: usize) -> f64 {
    let total: f64 = p_two.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    localization_window(p, margin)
        .into_iter()
        .map(|j| p_two[j])
        .sum::<f64>()
        / total
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Scattering,
    SinglePhotonBound,
    DoublonLike,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Scattering => "scattering",
            Branch::SinglePhotonBound => "single_photon_bound",
            Branch::DoublonLike => "doublon_like",
        }
    }
}

/// Thresholds for [`classify_branches`] and [`find_bidc`].
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectralThresholds {
    /// Slack on the doublon band edges.
    pub band_tol: f64,
    /// `P_e` range of a single-photon bound state.
    pub single_bound_pe: (f64, f64),
    pub bidc_min_pe: f64,
    /// Bound on the normalized mismatch from the dark pair ratio.
    pub bidc_max_dark_ratio: f64,
    pub bidc_min_localization: f64,
    /// Sites added on each side of `[site_1, site_2]` for the localization
    /// window.
    pub window_margin: usize,
}

impl Default for SpectralThresholds {
    fn default() -> Self {
        SpectralThresholds {
            band_tol: 1e-6,
            single_bound_pe: (0.8, 1.2),
            bidc_min_pe: 1.5,
            bidc_max_dark_ratio: 0.05,
            bidc_min_localization: 0.9,
            window_margin: 5,
        }
    }
}

pub fn classify(energy: f64, p_e: f64, p: &ModelParams, th: &SpectralThresholds) -> Branch {
    let (dlo, dhi) = doublon_band(p);
    let (slo, shi) = scattering_band(p);
    if energy >= dlo - th.band_tol && energy <= dhi + th.band_tol {
        Branch::DoublonLike
    } else if (energy < slo || energy > shi)
        && p_e >= th.single_bound_pe.0
        && p_e <= th.single_bound_pe.1
    {
        Branch::SinglePhotonBound
    } else {
        Branch::Scattering
    }
}

pub fn classify_branches(
    states: &[EigenState],
    basis: &TwoExcitationBasis,
    p: &ModelParams,
    th: &SpectralThresholds,
) -> Vec<Branch> {
    states
        .par_iter()
        .map(|s| classify(s.energy, atomic_excitation(basis, &s.vector), p, th))
        .collect()
}

/// Observables of one eigenstate as used for BIDC identification.
#[derive(Clone, Debug, Serialize)]
pub struct StateDiagnostics {
    pub index: usize,
    pub energy: f64,
    pub p_e: f64,
    pub alpha_12: f64,
    pub alpha_34: f64,
    /// Weight on the four pairs of atoms at different sites.
    pub type_one_weight: f64,
    pub dark_ratio: f64,
    pub localization: f64,
    pub branch: Branch,
}

impl StateDiagnostics {
    fn passes(&self, th: &SpectralThresholds) -> bool {
        self.branch == Branch::DoublonLike
            && self.p_e >= th.bidc_min_pe
            && self.dark_ratio <= th.bidc_max_dark_ratio
            && self.localization >= th.bidc_min_localization
            && self.alpha_12.powi(2) + self.alpha_34.powi(2) > self.type_one_weight
    }
}

/// `|g₁² c α₁₂ + g₃² α₃₄| / max(g₁²|α₁₂|, g₃²|α₃₄|)` with `c = cos(K₀ΔN)`:
/// zero exactly on the dark combination `(g₃², −c g₁²)`.
pub fn dark_ratio(alpha_12: f64, alpha_34: f64, p: &ModelParams, cos_k0dn: f64) -> f64 {
    let (g1, g3) = (p.g_12 * p.g_12, p.g_34 * p.g_34);
    let den = (g1 * alpha_12.abs()).max(g3 * alpha_34.abs());
    if den == 0.0 {
        return f64::INFINITY;
    }
    (g1 * cos_k0dn * alpha_12 + g3 * alpha_34).abs() / den
}

/// `cos(K₀ΔN)` for the pair energy `two_omega`, or 1 when it lies outside
/// the doublon band.
pub fn cos_k0_dn(p: &ModelParams, two_omega: f64) -> f64 {
    resonant_wavevector(two_omega / 2.0, p)
        .map(|k0| (k0 * p.delta_n() as f64).cos())
        .unwrap_or(1.0)
}

pub fn diagnose(
    index: usize,
    s: &EigenState,
    basis: &TwoExcitationBasis,
    p: &ModelParams,
    two_omega: f64,
    th: &SpectralThresholds,
) -> StateDiagnostics {
    let p_e = atomic_excitation(basis, &s.vector);
    let profile = photon_distribution(basis, &s.vector);
    let a12 = s.alpha(basis, 0, 1);
    let a34 = s.alpha(basis, 2, 3);
    let type_one_weight = ATOM_PAIRS
        .iter()
        .filter(|&&(a, b)| (a < 2) != (b < 2))
        .map(|&(a, b)| s.alpha(basis, a, b).powi(2))
        .sum();
    StateDiagnostics {
        index,
        energy: s.energy,
        p_e,
        alpha_12: a12,
        alpha_34: a34,
        type_one_weight,
        dark_ratio: dark_ratio(a12, a34, p, cos_k0_dn(p, two_omega)),
        localization: localization(p, &profile.p_two, th.window_margin),
        branch: classify(s.energy, p_e, p, th),
    }
}

/// The bound state in the doublon continuum and the states it beat.
#[derive(Clone, Debug, Serialize)]
pub struct BidcReport {
    pub bidc: StateDiagnostics,
    /// The in-phase partner: the doublon-like state with the largest weight
    /// on the bright pair combination.
    pub partner: Option<StateDiagnostics>,
    pub candidates: usize,
}

/// Picks, among doublon-like states with `P_e`, dark-ratio and localization
/// inside the thresholds and more weight on the two same-site pairs than on
/// the mixed pairs, the one closest to `two_omega`.
pub fn find_bidc(
    states: &[EigenState],
    basis: &TwoExcitationBasis,
    p: &ModelParams,
    two_omega: f64,
    th: &SpectralThresholds,
) -> Result<BidcReport> {
    let diags: Vec<StateDiagnostics> = states
        .par_iter()
        .enumerate()
        .map(|(i, s)| diagnose(i, s, basis, p, two_omega, th))
        .collect();
    let passing: Vec<&StateDiagnostics> = diags.iter().filter(|d| d.passes(th)).collect();
    let best = passing
        .iter()
        .min_by(|a, b| {
            (a.energy - two_omega)
                .abs()
                .total_cmp(&(b.energy - two_omega).abs())
                .then(a.index.cmp(&b.index))
        })
        .copied();
    let Some(best) = best else {
        let closest = diags
            .iter()
            .filter(|d| d.branch == Branch::DoublonLike)
            .min_by(|a, b| a.dark_ratio.total_cmp(&b.dark_ratio));
        return Err(Error::NotFound(match closest {
            Some(d) => format!(
                "no bound state passes; most dark doublon-like state E = {}, P_e = {:.4}, dark ratio = {:.3e}, L = {:.4}",
                d.energy, d.p_e, d.dark_ratio, d.localization
            ),
            None => "no doublon-like states in the spectrum".into(),
        }));
    };
    let c = cos_k0_dn(p, two_omega);
    let (g1, g3) = (p.g_12 * p.g_12, p.g_34 * p.g_34);
    let nb = (g1 * g1 + g3 * g3).sqrt();
    let partner = diags
        .iter()
        .filter(|d| d.index != best.index && d.branch == Branch::DoublonLike && nb > 0.0)
        .max_by(|a, b| {
            let w = |d: &StateDiagnostics| ((g1 * d.alpha_12 + c * g3 * d.alpha_34) / nb).powi(2);
            w(a).total_cmp(&w(b))
        })
        .cloned();
    Ok(BidcReport {
        bidc: best.clone(),
        partner,
        candidates: passing.len(),
    })
}

/// `q,E,P_e,label,alpha_12_re,alpha_12_im,alpha_34_re,alpha_34_im` rows.
pub fn write_spectrum_csv<W: Write>(
    w: W,
    states: &[EigenState],
    basis: &TwoExcitationBasis,
    p: &ModelParams,
    th: &SpectralThresholds,
    comment: &str,
) -> Result<()> {
    let mut out = io::csv_writer(
        w,
        comment,
        &[
            "q",
            "E",
            "P_e",
            "label",
            "alpha_12_re",
            "alpha_12_im",
            "alpha_34_re",
            "alpha_34_im",
        ],
    )?;
    for (q, s) in states.iter().enumerate() {
        let pe = atomic_excitation(basis, &s.vector);
        io::text_row(
            &mut out,
            &[
                q.to_string(),
                s.energy.to_string(),
                pe.to_string(),
                classify(s.energy, pe, p, th).as_str().to_string(),
                s.alpha(basis, 0, 1).to_string(),
                "0".to_string(),
                s.alpha(basis, 2, 3).to_string(),
                "0".to_string(),
            ],
        )?;
    }
    io::finish(out)
}

/// `site,P_one,P_two` rows.
pub fn write_profile_csv<W: Write>(w: W, profile: &PhotonProfile, comment: &str) -> Result<()> {
    let mut out = io::csv_writer(w, comment, &["site", "P_one", "P_two"])?;
    for j in 0..profile.p_one.len() {
        io::row(&mut out, &[j as f64, profile.p_one[j], profile.p_two[j]])?;
    }
    io::finish(out)
}

/// `i,j,value` triplets for every entry of the correlation matrix.
pub fn write_correlation_csv<W: Write>(w: W, m: &DMatrix<f64>, comment: &str) -> Result<()> {
    let mut out = io::csv_writer(w, comment, &["i", "j", "value"])?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            io::row(&mut out, &[i as f64, j as f64, m[(i, j)]])?;
        }
    }
    io::finish(out)
}
