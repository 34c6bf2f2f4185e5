//! Pair–doublon effective model obtained by adiabatically eliminating the
//! single-photon states.
//!
//! State vector layout: `[Ce₁₂, Ce₃₄, (Ce₁₃, Ce₁₄, Ce₂₃, Ce₂₄), C_K…]`,
//! written in the frame rotating at `2Ω`. The four type-I pair amplitudes
//! are present only when [`EffectiveOptions::type_one`] is set.

use std::f64::consts::{PI, SQRT_2};
use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::chebyshev::{chebyshev_step, norm};
use crate::linalg::{dense_hermitian_eigen, HermitianOperator};
use crate::model::{
    doublon_dispersion, doublon_wavefunction, inverse_localization, k_grid, min_image,
    resonant_wavevector, single_photon_dispersion, ModelParams,
};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// `g²/√((Ω−ω_c)² − 4J²)`, the level shift from virtual emission and
/// reabsorption of one photon. NaN when `Ω` lies inside the photon band.
pub fn stark_shift(g: f64, omega: f64, p: &ModelParams) -> f64 {
    let d = omega - p.cavity_freq;
    g * g / (d * d - 4.0 * p.hopping * p.hopping).sqrt()
}

fn check_below_band(omega: f64, p: &ModelParams) -> Result<()> {
    let edge = p.cavity_freq - 2.0 * p.hopping;
    if omega >= edge {
        return Err(Error::SingularDetuning { omega, edge });
    }
    Ok(())
}

/// Frequencies `(Ω₁, Ω₃)` that hold both pairs on the dressed resonance
/// `2Ω`.
pub fn stark_shifted_frequencies(p: &ModelParams, omega: f64) -> Result<(f64, f64)> {
    check_below_band(omega, p)?;
    Ok((
        omega + stark_shift(p.g_12, omega, p),
        omega + stark_shift(p.g_34, omega, p),
    ))
}

/// Single-photon Green's function `G(n) = J e^{−a|n|}/√((Ω−ω_c)² − 4J²)`
/// and its decay exponent `a`.
pub fn single_photon_greens(n: i64, omega: f64, p: &ModelParams) -> Result<(f64, f64)> {
    check_below_band(omega, p)?;
    let j = p.hopping;
    let d = omega - p.cavity_freq;
    let x = -d / (2.0 * j);
    let a = (x + (x * x - 1.0).sqrt()).ln();
    let g = j * (-a * n.abs() as f64).exp() / (d * d - 4.0 * j * j).sqrt();
    Ok((g, a))
}

/// `G(n)` from its defining integral `(J/2π)∫ e^{ikn}/(ω_k − Ω) dk` by the
/// trapezoid rule on `points` nodes (spectrally accurate for this periodic
/// integrand).
pub fn greens_numeric(n: i64, omega: f64, p: &ModelParams, points: usize) -> f64 {
    let h = 2.0 * PI / points as f64;
    let s: f64 = (0..points)
        .map(|i| {
            let k = -PI + i as f64 * h;
            (k * n as f64).cos() / (single_photon_dispersion(k, p) - omega)
        })
        .sum();
    p.hopping * s / points as f64
}

/// `L_{k,K} = Σ_r e^{i(k−K/2)r} ψ_K(r)` on the infinite lattice, in a form
/// that stays finite as `K → π`.
fn overlap_l(q: f64, x: f64) -> f64 {
    if x.is_infinite() {
        return 1.0;
    }
    let t = x.tanh();
    t * t.sqrt() / (1.0 - q.cos() / x.cosh())
}

/// `f_K(r) = (2√2J/N) Σ_k L_{k,K} cos((k − K/2)r) / (ω_k − Ω)` over the
/// ring's momentum grid.
pub fn pair_doublon_coupling(k_com: f64, r: i64, omega: f64, p: &ModelParams) -> Result<f64> {
    check_below_band(omega, p)?;
    let x = inverse_localization(k_com, p)?;
    let n = p.n_sites;
    let mut s = 0.0;
    for k in k_grid(n) {
        let q = k - k_com / 2.0;
        let delta = single_photon_dispersion(k, p) - omega;
        if delta.abs() < 1e-12 {
            return Err(Error::SingularDetuning {
                omega,
                edge: p.cavity_freq - 2.0 * p.hopping,
            });
        }
        s += overlap_l(q, x) * (q * r as f64).cos() / delta;
    }
    Ok(2.0 * SQRT_2 * p.hopping * s / n as f64)
}

/// Switches on the effective model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EffectiveOptions {
    /// Atomic frequencies follow `Ω + g²/√((Ω−ω_c)²−4J²)` so both pairs sit
    /// on `2Ω` (pair diagonal zero). When off, the detuning implied by the
    /// actual frequencies in the parameters is kept.
    pub stark_compensated: bool,
    /// Keep the four type-I pairs with their `f_K(ΔN)` couplings.
    pub type_one: bool,
    /// Keep the atom-mediated coupling between doublon modes, second order
    /// in `g` and dropped in the standard reduction.
    pub doublon_self_energy: bool,
}

impl Default for EffectiveOptions {
    fn default() -> Self {
        EffectiveOptions {
            stark_compensated: true,
            type_one: false,
            doublon_self_energy: false,
        }
    }
}

/// Pair–doublon Hamiltonian on the ring's `K` grid.
#[derive(Clone, Debug)]
pub struct EffectiveModel {
    pub params: ModelParams,
    pub omega: f64,
    pub options: EffectiveOptions,
    pub ks: Vec<f64>,
    pub energies: Vec<f64>,
    pub f0: Vec<f64>,
    pub f_dn: Vec<f64>,
    /// Doublon self-energy per unit `g²` from the atoms at `site_1`/`site_2`.
    w: Option<(DMatrix<Complex64>, DMatrix<Complex64>)>,
    // Current couplings, cached.
    v12: Vec<Complex64>,
    v34: Vec<Complex64>,
    v_one: Vec<Vec<Complex64>>,
    pair_diag: Vec<f64>,
}

impl EffectiveModel {
    /// Builds the model in the frame rotating at `2·omega`.
    pub fn new(p: &ModelParams, omega: f64, options: EffectiveOptions) -> Result<Self> {
        p.validate()?;
        check_below_band(omega, p)?;
        let ks = k_grid(p.n_sites);
        let dn = p.delta_n() as i64;
        let f0 = ks
            .par_iter()
            .map(|&k| pair_doublon_coupling(k, 0, omega, p))
            .collect::<Result<Vec<_>>>()?;
        let f_dn = ks
            .par_iter()
            .map(|&k| pair_doublon_coupling(k, dn, omega, p))
            .collect::<Result<Vec<_>>>()?;
        let energies = ks.iter().map(|&k| doublon_dispersion(k, p)).collect();
        let w = if options.doublon_self_energy {
            Some((
                doublon_self_energy(p, p.site_1, omega)?,
                doublon_self_energy(p, p.site_2, omega)?,
            ))
        } else {
            None
        };
        let mut m = EffectiveModel {
            params: p.clone(),
            omega,
            options,
            ks,
            energies,
            f0,
            f_dn,
            w,
            v12: Vec::new(),
            v34: Vec::new(),
            v_one: Vec::new(),
            pair_diag: Vec::new(),
        };
        m.set_couplings(p.g_12, p.g_34);
        Ok(m)
    }

    /// The model at the dressed resonance of the first pair.
    pub fn at_pair_resonance(p: &ModelParams, options: EffectiveOptions) -> Result<Self> {
        EffectiveModel::new(p, p.pair_resonance(0), options)
    }

    pub fn n_pairs(&self) -> usize {
        if self.options.type_one {
            6
        } else {
            2
        }
    }

    pub fn n_modes(&self) -> usize {
        self.ks.len()
    }

    /// Type-I pairs in state order, as atom indices.
    pub const TYPE_ONE: [(usize, usize); 4] = [(0, 2), (0, 3), (1, 2), (1, 3)];

    pub fn set_couplings(&mut self, g_12: f64, g_34: f64) {
        let p = &mut self.params;
        p.g_12 = g_12;
        p.g_34 = g_34;
        if self.options.stark_compensated {
            let s1 = stark_shift(g_12, self.omega, p);
            let s3 = stark_shift(g_34, self.omega, p);
            p.omega = [
                self.omega + s1,
                self.omega + s1,
                self.omega + s3,
                self.omega + s3,
            ];
        }
        let p = &self.params;
        let n = p.n_sites as f64;
        let j = p.hopping;
        let (n1, n2) = (p.site_1 as f64, p.site_2 as f64);
        let scale = -1.0 / (j * n.sqrt());
        let coupling =
            |g2: f64, f: f64, site: f64, k: f64| Complex64::from_polar(g2 * f * scale, -k * site);
        self.v12 = (0..self.ks.len())
            .map(|i| coupling(g_12 * g_12, self.f0[i], n1, self.ks[i]))
            .collect();
        self.v34 = (0..self.ks.len())
            .map(|i| coupling(g_34 * g_34, self.f0[i], n2, self.ks[i]))
            .collect();
        self.v_one = if self.options.type_one {
            Self::TYPE_ONE
                .iter()
                .map(|_| {
                    (0..self.ks.len())
                        .map(|i| coupling(g_12 * g_34, self.f_dn[i], 0.5 * (n1 + n2), self.ks[i]))
                        .collect()
                })
                .collect()
        } else {
            Vec::new()
        };
        let couplings = p.couplings();
        let diag = |a: usize, b: usize| {
            p.omega[a] + p.omega[b]
                - 2.0 * self.omega
                - stark_shift(couplings[a], self.omega, p)
                - stark_shift(couplings[b], self.omega, p)
        };
        let mut pair_diag = vec![diag(0, 1), diag(2, 3)];
        if self.options.type_one {
            pair_diag.extend(Self::TYPE_ONE.iter().map(|&(a, b)| diag(a, b)));
        }
        self.pair_diag = pair_diag;
    }

    /// Couplings of pair `i` (state order) to each doublon mode,
    /// `⟨D_K|H|pair⟩`.
    pub fn pair_couplings(&self, i: usize) -> &[Complex64] {
        match i {
            0 => &self.v12,
            1 => &self.v34,
            _ => &self.v_one[i - 2],
        }
    }

    pub fn detunings(&self) -> Vec<f64> {
        self.energies.iter().map(|e| e - 2.0 * self.omega).collect()
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let np = self.n_pairs();
        let nk = self.n_modes();
        let mut h = DMatrix::from_element(np + nk, np + nk, ZERO);
        for (i, d) in self.pair_diag.iter().enumerate() {
            h[(i, i)] = Complex64::new(*d, 0.0);
        }
        for kk in 0..nk {
            h[(np + kk, np + kk)] = Complex64::new(self.energies[kk] - 2.0 * self.omega, 0.0);
            for i in 0..np {
                let v = self.pair_couplings(i)[kk];
                h[(np + kk, i)] = v;
                h[(i, np + kk)] = v.conj();
            }
        }
        if let Some((w1, w3)) = &self.w {
            let (a, b) = (self.params.g_12.powi(2), self.params.g_34.powi(2));
            for r in 0..nk {
                for c in 0..nk {
                    h[(np + r, np + c)] += w1[(r, c)] * a + w3[(r, c)] * b;
                }
            }
        }
        h
    }

    /// Amplitudes of the dark pair combination `(g₃², −g₁² e^{iK₀ΔN})`,
    /// normalized, padded to the full state.
    pub fn dark_state(&self) -> Result<Vec<Complex64>> {
        let k0 = resonant_wavevector(self.omega, &self.params)?;
        let (g1, g3) = (self.params.g_12.powi(2), self.params.g_34.powi(2));
        let nrm = (g1 * g1 + g3 * g3).sqrt();
        if nrm == 0.0 {
            return Err(Error::invalid(
                "g_12",
                "dark state needs a nonzero coupling",
            ));
        }
        let mut v = vec![ZERO; self.n_pairs() + self.n_modes()];
        v[0] = Complex64::new(g3 / nrm, 0.0);
        v[1] = -Complex64::from_polar(g1 / nrm, k0 * self.params.delta_n() as f64);
        Ok(v)
    }

    /// The eigenvector with the largest weight on the dark pair combination:
    /// the effective model's bound state in the continuum.
    pub fn bidc(&self) -> Result<(f64, Vec<Complex64>)> {
        let dark = self.dark_state()?;
        let (vals, vecs) = dense_hermitian_eigen(self.to_dense());
        let mut best = (0usize, -1.0f64);
        for c in 0..vals.len() {
            let ov: Complex64 = (0..dark.len()).map(|r| dark[r].conj() * vecs[(r, c)]).sum();
            if ov.norm_sqr() > best.1 {
                best = (c, ov.norm_sqr());
            }
        }
        let c = best.0;
        Ok((vals[c], (0..dark.len()).map(|r| vecs[(r, c)]).collect()))
    }

    pub fn pair_state(&self, ce12: Complex64, ce34: Complex64) -> Vec<Complex64> {
        let mut v = vec![ZERO; self.n_pairs() + self.n_modes()];
        v[0] = ce12;
        v[1] = ce34;
        v
    }
}

impl HermitianOperator for EffectiveModel {
    fn dim(&self) -> usize {
        self.n_pairs() + self.n_modes()
    }

    fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        let np = self.n_pairs();
        let nk = self.n_modes();
        for i in 0..np {
            let v = self.pair_couplings(i);
            let mut acc = x[i] * self.pair_diag[i];
            for kk in 0..nk {
                acc += v[kk].conj() * x[np + kk];
            }
            y[i] = acc;
        }
        for kk in 0..nk {
            let mut acc = x[np + kk] * (self.energies[kk] - 2.0 * self.omega);
            for i in 0..np {
                acc += self.pair_couplings(i)[kk] * x[i];
            }
            y[np + kk] = acc;
        }
        if let Some((w1, w3)) = &self.w {
            let (a, b) = (self.params.g_12.powi(2), self.params.g_34.powi(2));
            for r in 0..nk {
                let mut acc = ZERO;
                for c in 0..nk {
                    acc += (w1[(r, c)] * a + w3[(r, c)] * b) * x[np + c];
                }
                y[np + r] += acc;
            }
        }
    }

    fn spectral_bounds(&self) -> (f64, f64) {
        let np = self.n_pairs();
        let nk = self.n_modes();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..np {
            let r: f64 = self.pair_couplings(i).iter().map(|v| v.norm()).sum();
            lo = lo.min(self.pair_diag[i] - r);
            hi = hi.max(self.pair_diag[i] + r);
        }
        let (a, b) = (self.params.g_12.powi(2), self.params.g_34.powi(2));
        for kk in 0..nk {
            let mut r: f64 = (0..np).map(|i| self.pair_couplings(i)[kk].norm()).sum();
            let mut d = self.energies[kk] - 2.0 * self.omega;
            if let Some((w1, w3)) = &self.w {
                for c in 0..nk {
                    let e = w1[(kk, c)] * a + w3[(kk, c)] * b;
                    if c == kk {
                        d += e.re;
                    } else {
                        r += e.norm();
                    }
                }
            }
            lo = lo.min(d - r);
            hi = hi.max(d + r);
        }
        (lo, hi)
    }
}

/// Doublon-mode coupling mediated by the two atoms on `site`, per unit
/// `g²`: `W_{KK'} = −2 Σ_k B*(k,K) B(k,K') / (ω_k − Ω)` with
/// `B(k,K) = ⟨vac|a_k a_site|D_K⟩`.
pub fn doublon_self_energy(p: &ModelParams, site: usize, omega: f64) -> Result<DMatrix<Complex64>> {
    check_below_band(omega, p)?;
    let n = p.n_sites;
    let ks = k_grid(n);
    let s = site as i64;
    // ψ_K(r) < 1e-17 beyond this range at every K.
    let x_min = inverse_localization(0.0, p)?;
    let reach = ((40.0 / x_min).ceil() as i64).min(n as i64 / 2);
    let cols: Vec<Vec<Complex64>> = ks
        .par_iter()
        .map(|&kc| {
            let mut col = vec![ZERO; n];
            for r in -reach..=reach {
                let y = (s + r).rem_euclid(n as i64);
                let rr = min_image(y - s, n);
                let com = s as f64 + rr as f64 / 2.0;
                let psi = doublon_wavefunction(kc, rr, p).unwrap_or(0.0);
                if psi == 0.0 {
                    continue;
                }
                let phi = Complex64::from_polar(psi, kc * com);
                for (ik, &k) in ks.iter().enumerate() {
                    col[ik] += phi * Complex64::from_polar(1.0, -k * y as f64);
                }
            }
            let c = SQRT_2 / n as f64;
            col.iter_mut().for_each(|v| *v *= c);
            col
        })
        .collect();
    let delta: Vec<f64> = ks
        .iter()
        .map(|&k| single_photon_dispersion(k, p) - omega)
        .collect();
    let mut w = DMatrix::from_element(n, n, ZERO);
    for a in 0..n {
        for b in a..n {
            let mut acc = ZERO;
            for k in 0..n {
                acc += cols[a][k].conj() * cols[b][k] / delta[k];
            }
            w[(a, b)] = -2.0 * acc;
            w[(b, a)] = -2.0 * acc.conj();
        }
    }
    Ok(w)
}

/// Effective-model state with its time stamp.
#[derive(Clone, Debug)]
pub struct EffectiveState {
    pub time: f64,
    pub amplitudes: Vec<Complex64>,
    pub n_pairs: usize,
}

impl EffectiveState {
    pub fn ce12(&self) -> Complex64 {
        self.amplitudes[0]
    }

    pub fn ce34(&self) -> Complex64 {
        self.amplitudes[1]
    }

    pub fn doublon_weight(&self) -> f64 {
        self.amplitudes[self.n_pairs..]
            .iter()
            .map(|c| c.norm_sqr())
            .sum()
    }

    pub fn total(&self) -> f64 {
        self.amplitudes.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Integrates the effective dynamics with couplings `schedule(t)`, calling
/// `observe` at each sample time. Substeps are at most `dt_control` long
/// with couplings frozen at the substep midpoint.
pub fn integrate_effective<S, O>(
    model: &mut EffectiveModel,
    state0: &[Complex64],
    schedule: S,
    sample_times: &[f64],
    dt_control: f64,
    norm_tol: f64,
    mut observe: O,
) -> Result<Vec<Complex64>>
where
    S: Fn(f64) -> (f64, f64),
    O: FnMut(&EffectiveState),
{
    if state0.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: state0.len(),
        });
    }
    let mut psi = state0.to_vec();
    let n0 = norm(&psi);
    let mut t = 0.0;
    for &ts in sample_times {
        if ts < t {
            return Err(Error::invalid("sample_times", "must be ascending from 0"));
        }
        let span = ts - t;
        let steps = (span / dt_control).ceil() as usize;
        for s in 0..steps {
            let dt = span / steps as f64;
            let (g12, g34) = schedule(t + (s as f64 + 0.5) * dt);
            model.set_couplings(g12, g34);
            let bounds = model.spectral_bounds();
            chebyshev_step(model, bounds, &mut psi, dt);
        }
        t = ts;
        let drift = (norm(&psi) - n0).abs();
        if drift > norm_tol {
            return Err(Error::StepFailure(format!(
                "effective norm drift {drift:.3e} at t = {t}"
            )));
        }
        observe(&EffectiveState {
            time: t,
            amplitudes: psi.clone(),
            n_pairs: model.n_pairs(),
        });
    }
    Ok(psi)
}

/// A solution of the bound-state condition.
#[derive(Clone, Debug)]
pub struct BidcRoot {
    pub energy: f64,
    /// `|2Ω − E − Σ(E)|` at `energy`.
    pub residual: f64,
    /// Whether `residual` vanishes to rounding (a true root rather than the
    /// closest approach).
    pub is_root: bool,
    pub k0: f64,
    pub alpha1: Complex64,
    pub alpha2: Complex64,
    /// Doublon amplitudes, normalized together with `alpha1`, `alpha2`.
    pub c_k: Vec<Complex64>,
    /// Residual of the second pair's eigen-equation, a consistency check
    /// when `g₁ ≠ g₃`.
    pub second_pair_residual: f64,
}

/// Roots of `2Ω − E = Σ_K g₁⁴ f_K²(0)/(J²N) (e^{iK₀ΔN} e^{iK(N₁−N₂)} − 1)/(E − 𝓔_K)`
/// near `2Ω`. Terms with `E` on a grid energy are dropped. Returns the
/// root closest to `2Ω`, or the closest approach when the right-hand side is
/// complex and no root exists.
pub fn solve_bidc_condition(model: &EffectiveModel) -> Result<BidcRoot> {
    let p = &model.params;
    let two_omega = 2.0 * model.omega;
    let k0 = resonant_wavevector(model.omega, p)?;
    let dn = p.delta_n() as f64;
    let j = p.hopping;
    let n = p.n_sites as f64;
    let g1 = p.g_12 * p.g_12;
    let g3 = p.g_34 * p.g_34;
    let phase0 = Complex64::from_polar(1.0, k0 * dn);
    let weights: Vec<Complex64> = model
        .ks
        .iter()
        .zip(&model.f0)
        .map(|(&k, &f)| {
            (phase0 * Complex64::from_polar(1.0, -k * dn) - 1.0) * (g1 * g1 * f * f / (j * j * n))
        })
        .collect();
    let f_of = |e: f64| -> Complex64 {
        let mut s = ZERO;
        for (w, &ek) in weights.iter().zip(&model.energies) {
            let d = e - ek;
            if d.abs() > 1e-12 {
                s += w / d;
            }
        }
        Complex64::new(two_omega - e, 0.0) - s
    };
    let scale = two_omega.abs().max(1.0);

    // Poles that actually carry weight bracket the search.
    let mut poles: Vec<f64> = weights
        .iter()
        .zip(&model.energies)
        .filter(|(w, _)| w.norm() > 1e-300)
        .map(|(_, &e)| e)
        .collect();
    poles.sort_by(f64::total_cmp);
    poles.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
    let below = poles.iter().rev().find(|&&e| e < two_omega).copied();
    let above = poles.iter().find(|&&e| e >= two_omega).copied();
    let span = 0.05;
    let lo = below.unwrap_or(two_omega - span);
    let hi = above.unwrap_or(two_omega + span);

    let energy = if g1 == 0.0 {
        two_omega
    } else {
        // Scan for a sign change of Re F inside (lo, hi), then bisect.
        let samples = 400;
        let eps = 1e-10 * (hi - lo);
        let grid: Vec<f64> = (0..=samples)
            .map(|i| lo + eps + (hi - lo - 2.0 * eps) * i as f64 / samples as f64)
            .collect();
        let vals: Vec<f64> = grid.iter().map(|&e| f_of(e).re).collect();
        let mut bracket: Option<(f64, f64)> = None;
        for i in 0..samples {
            if vals[i].signum() != vals[i + 1].signum() {
                let mid = 0.5 * (grid[i] + grid[i + 1]);
                let better = match bracket {
                    None => true,
                    Some((a, b)) => (mid - two_omega).abs() < (0.5 * (a + b) - two_omega).abs(),
                };
                if better {
                    bracket = Some((grid[i], grid[i + 1]));
                }
            }
        }
        match bracket {
            Some((mut a, mut b)) => {
                let fa = f_of(a).re;
                for _ in 0..200 {
                    let m = 0.5 * (a + b);
                    if f_of(m).re.signum() == fa.signum() {
                        a = m;
                    } else {
                        b = m;
                    }
                    if b - a < 1e-15 * scale {
                        break;
                    }
                }
                0.5 * (a + b)
            }
            None => {
                // No sign change: closest approach of |F|.
                let i = (0..=samples)
                    .min_by(|&x, &y| f_of(grid[x]).norm().total_cmp(&f_of(grid[y]).norm()))
                    .unwrap();
                let (mut a, mut b) = (grid[i.saturating_sub(1)], grid[(i + 1).min(samples)]);
                let phi = 0.5 * (5f64.sqrt() - 1.0);
                for _ in 0..200 {
                    let c = b - phi * (b - a);
                    let d = a + phi * (b - a);
                    if f_of(c).norm() < f_of(d).norm() {
                        b = d;
                    } else {
                        a = c;
                    }
                }
                0.5 * (a + b)
            }
        }
    };

    let residual = f_of(energy).norm();
    let alpha1 = Complex64::new(1.0, 0.0);
    let alpha2 = if g3 == 0.0 { ZERO } else { -phase0 * (g1 / g3) };
    let c_k: Vec<Complex64> = model
        .ks
        .iter()
        .zip(&model.f0)
        .zip(&model.energies)
        .map(|((&k, &f), &ek)| {
            let d = energy - ek;
            if d.abs() <= 1e-12 {
                return ZERO;
            }
            let num = phase0 * Complex64::from_polar(1.0, -k * p.site_2 as f64)
                - Complex64::from_polar(1.0, -k * p.site_1 as f64);
            num * (g1 * f / (j * n.sqrt() * d))
        })
        .collect();
    let total =
        (alpha1.norm_sqr() + alpha2.norm_sqr() + c_k.iter().map(|c| c.norm_sqr()).sum::<f64>())
            .sqrt();
    let alpha1 = alpha1 / total;
    let alpha2 = alpha2 / total;
    let c_k: Vec<Complex64> = c_k.into_iter().map(|c| c / total).collect();
    // E α₂ = 2Ω α₂ − (g₃²/J√N) Σ_K f_K e^{iKN₂} C_K.
    let sum2: Complex64 = model
        .ks
        .iter()
        .zip(&model.f0)
        .zip(&c_k)
        .map(|((&k, &f), c)| Complex64::from_polar(f, k * p.site_2 as f64) * c)
        .sum();
    let second = (alpha2 * (energy - two_omega) + sum2 * (g3 / (j * n.sqrt()))).norm();
    Ok(BidcRoot {
        energy,
        residual,
        is_root: residual <= 1e-10 * scale,
        k0,
        alpha1,
        alpha2,
        c_k,
        second_pair_residual: second,
    })
}

/// Real-space two-photon amplitudes of a bound state and the resulting
/// `P_two(j)`.
#[derive(Clone, Debug)]
pub struct RealSpaceProfile {
    pub n_sites: usize,
    /// `C_{m,n}` row-major, in the normalization where
    /// `|α₁|² + |α₂|² + 2 Σ |C_{m,n}|² = 1`.
    pub c_mn: Vec<Complex64>,
    pub p_two: Vec<f64>,
}

/// `C_{m,n} = (1/√(2N)) Σ_K C_K e^{iK(m+n)/2} ψ_K(m−n)`, using the
/// minimal-image separation and the matching centre of mass on the ring.
pub fn bidc_real_space_profile(
    model: &EffectiveModel,
    root: &BidcRoot,
) -> Result<RealSpaceProfile> {
    let p = &model.params;
    let n = p.n_sites;
    let psi: Vec<Vec<f64>> = model
        .ks
        .iter()
        .map(|&k| {
            (0..n as i64)
                .map(|r| doublon_wavefunction(k, min_image(r, n), p))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let norm_c = 1.0 / (2.0 * n as f64).sqrt();
    let rows: Vec<Vec<Complex64>> = (0..n)
        .into_par_iter()
        .map(|m| {
            (0..n)
                .map(|nn| {
                    let r = min_image(nn as i64 - m as i64, n);
                    let com = m as f64 + r as f64 / 2.0;
                    let ridx = r.rem_euclid(n as i64) as usize;
                    let mut acc = ZERO;
                    for (kk, &k) in model.ks.iter().enumerate() {
                        let c = root.c_k[kk];
                        if c != ZERO {
                            acc += c * Complex64::from_polar(psi[kk][ridx], k * com);
                        }
                    }
                    acc * norm_c
                })
                .collect()
        })
        .collect();
    let c_mn: Vec<Complex64> = rows.into_iter().flatten().collect();
    let photon: f64 = 2.0 * c_mn.iter().map(|c| c.norm_sqr()).sum::<f64>();
    let w = root.alpha1.norm_sqr() + root.alpha2.norm_sqr() + photon;
    let p_two = (0..n)
        .map(|jj| {
            4.0 * c_mn[jj * n..(jj + 1) * n]
                .iter()
                .map(|c| c.norm_sqr())
                .sum::<f64>()
                / w
        })
        .collect();
    let c_mn = c_mn.into_iter().map(|c| c / w.sqrt()).collect();
    Ok(RealSpaceProfile {
        n_sites: n,
        c_mn,
        p_two,
    })
}

/// `K,f0,f_dn` rows.
pub fn write_f_table<W: Write>(w: W, model: &EffectiveModel, comment: &str) -> Result<()> {
    let mut out = crate::io::csv_writer(w, comment, &["K", "f0", "f_dn"])?;
    for i in 0..model.ks.len() {
        crate::io::row(&mut out, &[model.ks[i], model.f0[i], model.f_dn[i]])?;
    }
    crate::io::finish(out)
}

/// `n,G` rows for `0 ≤ n ≤ n_max`.
pub fn write_greens_table<W: Write>(
    w: W,
    p: &ModelParams,
    omega: f64,
    n_max: i64,
    comment: &str,
) -> Result<()> {
    let mut out = crate::io::csv_writer(w, comment, &["n", "G"])?;
    for n in 0..=n_max {
        let (g, _) = single_photon_greens(n, omega, p)?;
        crate::io::row(&mut out, &[n as f64, g])?;
    }
    crate::io::finish(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> ModelParams {
        ModelParams::reference(148)
    }

    #[test]
    fn stark_shift_values() {
        let p = p();
        let om = -11f64.sqrt();
        assert_eq!(stark_shift(0.0, om, &p), 0.0);
        assert!((stark_shift(0.1, om, &p) - 0.01 / 7f64.sqrt()).abs() < 1e-15);
        let ratio = stark_shift(0.2, om, &p) / stark_shift(0.1, om, &p);
        assert!((ratio - 4.0).abs() < 1e-12);
        let (o1, o3) = stark_shifted_frequencies(&p, om).unwrap();
        assert_eq!(o1, o3);
    }

    #[test]
    fn greens_closed_form() {
        let p = p();
        let om = -11f64.sqrt();
        let (g0, a) = single_photon_greens(0, om, &p).unwrap();
        assert!((g0 - 1.0 / 7f64.sqrt()).abs() < 1e-15);
        assert!((a - 2.98119f64.ln()).abs() < 1e-5);
        let (g8, _) = single_photon_greens(8, om, &p).unwrap();
        assert!((g8 / g0 - (-8.0 * a).exp()).abs() < 1e-15);
        assert!(single_photon_greens(0, -1.5, &p).is_err());
    }

    #[test]
    fn coupling_parity_and_k_pi_limit() {
        let p = ModelParams::reference(40);
        let om = p.band_centre_omega();
        for k in k_grid(40) {
            if (k - PI).abs() < 1e-12 {
                continue;
            }
            for r in [0, 8] {
                let a = pair_doublon_coupling(k, r, om, &p).unwrap();
                let b = pair_doublon_coupling(-k, r, om, &p).unwrap();
                assert!((a - b).abs() < 1e-13 * a.abs().max(1e-3));
            }
        }
        assert!(pair_doublon_coupling(PI, 0, om, &p).unwrap().is_finite());
        assert!(pair_doublon_coupling(0.3, 0, -1.0, &p).is_err());
    }

    #[test]
    fn effective_hamiltonian_is_hermitian() {
        let mut p = ModelParams::reference(24);
        p.g_34 = 0.13;
        let opts = EffectiveOptions {
            type_one: true,
            doublon_self_energy: true,
            ..Default::default()
        };
        let m = EffectiveModel::at_pair_resonance(&p, opts).unwrap();
        let h = m.to_dense();
        assert!((&h - h.adjoint()).norm() < 1e-14);
        // apply() agrees with the dense form.
        let x: Vec<Complex64> = (0..m.dim())
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let mut y = vec![ZERO; m.dim()];
        m.apply(&x, &mut y);
        for r in 0..m.dim() {
            let d: Complex64 = (0..m.dim()).map(|c| h[(r, c)] * x[c]).sum();
            assert!((d - y[r]).norm() < 1e-13);
        }
        let (lo, hi) = m.spectral_bounds();
        let (vals, _) = dense_hermitian_eigen(h);
        assert!(lo <= vals[0] && hi >= *vals.last().unwrap());
    }

    #[test]
    fn decoupled_second_pair_stays_empty() {
        let mut p = ModelParams::reference(60);
        p.g_34 = 0.0;
        let mut m = EffectiveModel::at_pair_resonance(&p, EffectiveOptions::default()).unwrap();
        let s0 = m.pair_state(Complex64::new(1.0, 0.0), ZERO);
        let ts: Vec<f64> = (1..=10).map(|i| 50.0 * i as f64).collect();
        integrate_effective(
            &mut m,
            &s0,
            |_| (0.1, 0.0),
            &ts,
            5.0,
            1e-10,
            |s| {
                assert_eq!(s.ce34(), ZERO);
                assert!((s.total() - 1.0).abs() < 1e-10);
            },
        )
        .unwrap();
    }

    #[test]
    fn zero_coupling_root_is_trivial() {
        let mut p = ModelParams::reference(60);
        p.g_12 = 0.0;
        p.g_34 = 0.0;
        let m =
            EffectiveModel::new(&p, p.band_centre_omega(), EffectiveOptions::default()).unwrap();
        let root = solve_bidc_condition(&m).unwrap();
        assert_eq!(root.energy, 2.0 * m.omega);
        assert!(root.c_k.iter().all(|c| c.norm() == 0.0));
    }
}
