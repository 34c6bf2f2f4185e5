//! Markovian dynamics of the two atom pairs with the doublon band traced
//! out.
//!
//! The density matrix lives on `{|G⟩, |eegg⟩, |ggee⟩, |eeee⟩}`, where
//! `|eegg⟩ = 𝓐₁†|G⟩` and `|ggee⟩ = 𝓐₂†|G⟩`. The drive, both pair
//! lowering operators and their products map this space into itself, so
//! the reduction is exact.

use std::io::Write;

use nalgebra::{Matrix4, SMatrix, SymmetricEigen, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::effective::pair_doublon_coupling;
use crate::error::{Error, Result};
use crate::io;
use crate::model::{group_velocity, resonant_wavevector, ModelParams};

pub type DensityMatrix = Matrix4<Complex64>;
pub type StateVector = Vector4<Complex64>;
type Super = SMatrix<Complex64, 16, 16>;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

/// Basis labels in matrix order.
pub const LEVELS: [&str; 4] = ["G", "eegg", "ggee", "eeee"];

/// `𝓐₁ = σ₁⁻σ₂⁻` on the four-level space.
pub fn lower_1() -> DensityMatrix {
    let mut a = DensityMatrix::zeros();
    a[(0, 1)] = ONE;
    a[(2, 3)] = ONE;
    a
}

/// `𝓐₂ = σ₃⁻σ₄⁻`.
pub fn lower_2() -> DensityMatrix {
    let mut a = DensityMatrix::zeros();
    a[(0, 2)] = ONE;
    a[(1, 3)] = ONE;
    a
}

/// Rates and drive of the master equation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LindbladParams {
    pub gamma_1: f64,
    pub gamma_2: f64,
    pub gamma_c: f64,
    /// `γ₁ + γ₂`.
    pub gamma_prime: f64,
    pub eta: f64,
    /// Drive switch-off time.
    pub t0: f64,
    /// Coefficients of the general generator. For a real phase factor
    /// `a = γ₁`, `d = γ₂` and `b = c = γ_c`.
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub k0: f64,
    pub cos_k0dn: f64,
    /// `f_{K₀}(0)` and `v_g(K₀)` behind the rates.
    pub f_k0: f64,
    pub v_g: f64,
    pub g_12: f64,
    pub g_34: f64,
}

impl LindbladParams {
    pub fn with_drive(mut self, eta: f64, t0: f64) -> Self {
        self.eta = eta;
        self.t0 = t0;
        self
    }
}

/// Golden-rule rates for pairs resonant at `2·omega`:
/// `γ₁ = g₁⁴f²/(J²v_g)`, `γ₂ = g₃⁴f²/(J²v_g)`,
/// `γ_c = g₁²g₃²f² cos(K₀ΔN)/(J²v_g)`, all at `K₀`.
pub fn decay_rates(p: &ModelParams, omega: f64) -> Result<LindbladParams> {
    let k0 = resonant_wavevector(omega, p)?;
    let v_g = group_velocity(k0, p);
    if v_g.abs() < 1e-12 {
        return Err(Error::DivergentRate { k0 });
    }
    let f = pair_doublon_coupling(k0, 0, omega, p)?;
    let j2 = p.hopping * p.hopping;
    let base = f * f / (j2 * v_g);
    let (g1, g3) = (p.g_12 * p.g_12, p.g_34 * p.g_34);
    let dn = p.delta_n() as f64;
    let cos_k0dn = (k0 * dn).cos();
    let gamma_1 = g1 * g1 * base;
    let gamma_2 = g3 * g3 * base;
    // B carries cos K₀(N₁−N₂), C carries cos K₀(N₂−N₁).
    let b = g1 * g3 * base * (-k0 * dn).cos();
    let c = g1 * g3 * base * (k0 * dn).cos();
    Ok(LindbladParams {
        gamma_1,
        gamma_2,
        gamma_c: g1 * g3 * base * cos_k0dn,
        gamma_prime: gamma_1 + gamma_2,
        eta: 0.0,
        t0: 0.0,
        a: gamma_1,
        b,
        c,
        d: gamma_2,
        k0,
        cos_k0dn,
        f_k0: f,
        v_g,
        g_12: p.g_12,
        g_34: p.g_34,
    })
}

/// `(|D⟩, |B⟩)` with `|B⟩ = 𝒦†|G⟩`,
/// `𝒦† = (g₁²𝓐₁† + s g₃²𝓐₂†)/√(g₁⁴+g₃⁴)` and
/// `|D⟩ = (g₃²𝓐₁† − s g₁²𝓐₂†)|G⟩/√(g₁⁴+g₃⁴)`, `s = cos(K₀ΔN) = ±1`.
pub fn dark_bright_states(g_12: f64, g_34: f64, sign: f64) -> Result<(StateVector, StateVector)> {
    if sign != 1.0 && sign != -1.0 {
        return Err(Error::invalid("sign", format!("{sign} is not ±1")));
    }
    let (g1, g3) = (g_12 * g_12, g_34 * g_34);
    let n = (g1 * g1 + g3 * g3).sqrt();
    if n == 0.0 {
        return Err(Error::invalid("g_12", "both couplings vanish"));
    }
    let dark = StateVector::new(ZERO, (g3 / n).into(), (-sign * g1 / n).into(), ZERO);
    let bright = StateVector::new(ZERO, (g1 / n).into(), (sign * g3 / n).into(), ZERO);
    Ok((dark, bright))
}

pub fn ground_state() -> DensityMatrix {
    let mut r = DensityMatrix::zeros();
    r[(0, 0)] = ONE;
    r
}

pub fn pure(psi: &StateVector) -> DensityMatrix {
    psi * psi.adjoint()
}

/// `⟨φ|ρ|φ⟩`.
pub fn fidelity(rho: &DensityMatrix, target: &StateVector) -> f64 {
    (target.adjoint() * rho * target)[(0, 0)].re
}

/// `Tr(𝓐₁†𝓐₁ρ)` and `Tr(𝓐₂†𝓐₂ρ)`: excitation probabilities of the two
/// pairs.
pub fn pair_populations(rho: &DensityMatrix) -> (f64, f64) {
    (
        (rho[(1, 1)] + rho[(3, 3)]).re,
        (rho[(2, 2)] + rho[(3, 3)]).re,
    )
}

/// Which dissipator to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorForm {
    /// `γ₁L[𝓐₁†,𝓐₁] + γ₂L[𝓐₂†,𝓐₂] + γ_c L[𝓐₁†,𝓐₂] + γ_c L[𝓐₂†,𝓐₁]`.
    #[default]
    FourTerm,
    /// The traced-out form with separate `A, B, C, D` coefficients.
    General,
    /// `γ′L[𝒦†,𝒦]`; needs `cos(K₀ΔN) = ±1`.
    Collective,
}

/// Row-major vectorization: `vec(XρY) = (X ⊗ Yᵀ) vec(ρ)`.
fn sandwich(x: &DensityMatrix, y: &DensityMatrix) -> Super {
    x.kronecker(&y.transpose())
}

/// `L[O₁,O₂]ρ = 2O₂ρO₁ − ρO₁O₂ − O₁O₂ρ`.
fn dissipator(o1: &DensityMatrix, o2: &DensityMatrix) -> Super {
    let id = DensityMatrix::identity();
    let p = o1 * o2;
    sandwich(o2, o1) * Complex64::new(2.0, 0.0) - sandwich(&id, &p) - sandwich(&p, &id)
}

/// The Liouvillian as a 16×16 matrix, drive on or off.
pub fn liouvillian(lp: &LindbladParams, form: GeneratorForm, drive_on: bool) -> Result<Super> {
    let a1 = lower_1();
    let a2 = lower_2();
    let id = DensityMatrix::identity();
    let h = if drive_on {
        (a1 + a1.adjoint()) * Complex64::new(lp.eta, 0.0)
    } else {
        DensityMatrix::zeros()
    };
    let mi = Complex64::new(0.0, -1.0);
    let mut l = (sandwich(&h, &id) - sandwich(&id, &h)) * mi;
    let c = |x: f64| Complex64::new(x, 0.0);
    match form {
        GeneratorForm::FourTerm => {
            l += dissipator(&a1.adjoint(), &a1) * c(lp.gamma_1);
            l += dissipator(&a2.adjoint(), &a2) * c(lp.gamma_2);
            l += dissipator(&a1.adjoint(), &a2) * c(lp.gamma_c);
            l += dissipator(&a2.adjoint(), &a1) * c(lp.gamma_c);
        }
        GeneratorForm::General => {
            let (a1d, a2d) = (a1.adjoint(), a2.adjoint());
            l += dissipator(&a1d, &a1) * c(lp.a);
            l += dissipator(&a2d, &a2) * c(lp.d);
            l += sandwich(&a1, &a2d) * c(lp.b + lp.c);
            l -= sandwich(&id, &(a2d * a1)) * c(lp.b);
            l -= sandwich(&(a2d * a1), &id) * c(lp.c);
            l += sandwich(&a2, &a1d) * c(lp.c + lp.b);
            l -= sandwich(&id, &(a1d * a2)) * c(lp.c);
            l -= sandwich(&(a1d * a2), &id) * c(lp.b);
        }
        GeneratorForm::Collective => {
            let s = lp.cos_k0dn;
            if (s.abs() - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(
                    "generator",
                    format!("collective form needs cos(K0 ΔN) = ±1, got {s}"),
                ));
            }
            let (g1, g3) = (lp.g_12 * lp.g_12, lp.g_34 * lp.g_34);
            let n = (g1 * g1 + g3 * g3).sqrt();
            if n > 0.0 {
                let k = (a1 * c(g1) + a2 * c(s.signum() * g3)) / c(n);
                l += dissipator(&k.adjoint(), &k) * c(lp.gamma_prime);
            }
        }
    }
    Ok(l)
}

fn vec_of(rho: &DensityMatrix) -> SMatrix<Complex64, 16, 1> {
    SMatrix::from_fn(|i, _| rho[(i / 4, i % 4)])
}

fn mat_of(v: &SMatrix<Complex64, 16, 1>) -> DensityMatrix {
    DensityMatrix::from_fn(|r, c| v[4 * r + c])
}

/// Trace, Hermiticity and positivity within `tol`.
pub fn check_state(rho: &DensityMatrix, t: f64, tol: f64) -> Result<()> {
    let tr = rho.trace();
    if (tr - ONE).norm() > tol {
        return Err(Error::StepFailure(format!("trace {tr} at t = {t}")));
    }
    let herm = (rho - rho.adjoint()).norm();
    if herm > tol {
        return Err(Error::StepFailure(format!(
            "ρ not Hermitian ({herm:.2e}) at t = {t}"
        )));
    }
    let sym = (rho + rho.adjoint()) * Complex64::new(0.5, 0.0);
    let min = SymmetricEigen::new(sym).eigenvalues.min();
    if min < -tol {
        return Err(Error::StepFailure(format!(
            "eigenvalue {min:.3e} of ρ at t = {t}"
        )));
    }
    Ok(())
}

/// Tolerance for [`check_state`] during propagation.
pub const STATE_TOL: f64 = 1e-10;

/// Propagates with constant rates. The drive `η(𝓐₁ + 𝓐₁†)` is on for
/// `t < t0` and the switch-off is an exact breakpoint. Each interval uses
/// the exact exponential of the Liouvillian.
pub fn lindblad_propagate<O>(
    rho0: &DensityMatrix,
    lp: &LindbladParams,
    form: GeneratorForm,
    sample_times: &[f64],
    mut observe: O,
) -> Result<DensityMatrix>
where
    O: FnMut(f64, &DensityMatrix),
{
    check_state(rho0, 0.0, STATE_TOL)?;
    let driven = liouvillian(lp, form, true)?;
    let free = liouvillian(lp, form, false)?;
    let mut v = vec_of(rho0);
    let mut t = 0.0;
    for &ts in sample_times {
        if ts < t {
            return Err(Error::invalid("sample_times", "must be ascending from 0"));
        }
        let cut = lp.t0.clamp(t, ts);
        if cut > t {
            v = (driven * Complex64::new(cut - t, 0.0)).exp() * v;
        }
        if ts > cut {
            v = (free * Complex64::new(ts - cut, 0.0)).exp() * v;
        }
        t = ts;
        let rho = mat_of(&v);
        check_state(&rho, t, STATE_TOL)?;
        observe(t, &rho);
    }
    Ok(mat_of(&v))
}

/// Propagates with rates that follow the couplings, `rates(t)`, frozen at
/// the midpoint of substeps no longer than `max_dt`.
pub fn lindblad_propagate_ramp<R, O>(
    rho0: &DensityMatrix,
    rates: R,
    form: GeneratorForm,
    sample_times: &[f64],
    max_dt: f64,
    mut observe: O,
) -> Result<DensityMatrix>
where
    R: Fn(f64) -> Result<LindbladParams>,
    O: FnMut(f64, &DensityMatrix),
{
    check_state(rho0, 0.0, STATE_TOL)?;
    let mut v = vec_of(rho0);
    let mut t = 0.0;
    for &ts in sample_times {
        if ts < t {
            return Err(Error::invalid("sample_times", "must be ascending from 0"));
        }
        let steps = ((ts - t) / max_dt).ceil() as usize;
        let dt = if steps > 0 {
            (ts - t) / steps as f64
        } else {
            0.0
        };
        for s in 0..steps {
            let mid = t + (s as f64 + 0.5) * dt;
            let lp = rates(mid)?;
            let l = liouvillian(&lp, form, mid < lp.t0)?;
            v = (l * Complex64::new(dt, 0.0)).exp() * v;
        }
        t = ts;
        let rho = mat_of(&v);
        check_state(&rho, t, STATE_TOL)?;
        observe(t, &rho);
    }
    Ok(mat_of(&v))
}

/// `time,F,p_G,p_eegg,p_ggee,p_eeee` then real and imaginary parts of the
/// six upper coherences.
pub fn trajectory_headers() -> Vec<String> {
    let mut h: Vec<String> = ["time", "F"].iter().map(|s| s.to_string()).collect();
    for l in LEVELS {
        h.push(format!("p_{l}"));
    }
    for r in 0..4 {
        for c in r + 1..4 {
            h.push(format!("re_{}_{}", LEVELS[r], LEVELS[c]));
            h.push(format!("im_{}_{}", LEVELS[r], LEVELS[c]));
        }
    }
    h
}

pub fn trajectory_row(t: f64, rho: &DensityMatrix, target: &StateVector) -> Vec<f64> {
    let mut row = vec![t, fidelity(rho, target)];
    for i in 0..4 {
        row.push(rho[(i, i)].re);
    }
    for r in 0..4 {
        for c in r + 1..4 {
            row.push(rho[(r, c)].re);
            row.push(rho[(r, c)].im);
        }
    }
    row
}

pub fn write_trajectory_csv<W: Write>(w: W, rows: &[Vec<f64>], comment: &str) -> Result<()> {
    let headers = trajectory_headers();
    let refs: Vec<&str> = headers.iter().map(String::as_str).collect();
    let mut out = io::csv_writer(w, comment, &refs)?;
    for r in rows {
        io::row(&mut out, r)?;
    }
    io::finish(out)
}

pub fn write_rates_json<W: Write>(w: W, lp: &LindbladParams) -> Result<()> {
    serde_json::to_writer_pretty(w, lp).map_err(|e| Error::Parse(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rates() -> LindbladParams {
        let p = ModelParams::reference(148);
        decay_rates(&p, p.band_centre_omega()).unwrap()
    }

    #[test]
    fn equal_couplings_give_equal_rates() {
        let lp = rates();
        assert!((lp.k0 - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!((lp.gamma_c - lp.gamma_1).abs() < 1e-12 * lp.gamma_1);
        assert!((lp.gamma_2 - lp.gamma_1).abs() < 1e-15);
        assert_eq!((lp.a, lp.d), (lp.gamma_1, lp.gamma_2));
        assert!((lp.b - lp.c).abs() < 1e-15);
    }

    #[test]
    fn quarter_phase_kills_collective_term() {
        let mut p = ModelParams::reference(148);
        p.site_2 = 9;
        let lp = decay_rates(&p, p.band_centre_omega()).unwrap();
        assert!(lp.gamma_c.abs() < 1e-12 * lp.gamma_1);
    }

    #[test]
    fn band_edge_rate_diverges() {
        let p = ModelParams::reference(148);
        let edge = (2.0 * p.cavity_freq - p.interaction) / 2.0;
        assert!(matches!(
            decay_rates(&p, edge),
            Err(Error::DivergentRate { .. })
        ));
    }

    #[test]
    fn dark_and_bright() {
        let (d, b) = dark_bright_states(0.1, 0.1, 1.0).unwrap();
        let s = 0.5f64.sqrt();
        assert!((d[1].re - s).abs() < 1e-15 && (d[2].re + s).abs() < 1e-15);
        assert!((d.adjoint() * b)[(0, 0)].norm() < 1e-15);
        let (d, _) = dark_bright_states(0.1, 0.1 * 2f64.sqrt(), 1.0).unwrap();
        let five = 5f64.sqrt();
        assert!((d[1].re - 2.0 / five).abs() < 1e-14 && (d[2].re + 1.0 / five).abs() < 1e-14);
        assert!(dark_bright_states(0.1, 0.1, 0.5).is_err());
    }

    #[test]
    fn generator_forms_agree() {
        let lp = rates().with_drive(0.01, 1e9);
        let l4 = liouvillian(&lp, GeneratorForm::FourTerm, true).unwrap();
        let lg = liouvillian(&lp, GeneratorForm::General, true).unwrap();
        let lc = liouvillian(&lp, GeneratorForm::Collective, true).unwrap();
        assert!((l4 - lg).norm() < 1e-15);
        assert!((l4 - lc).norm() < 1e-12 * l4.norm());
    }

    #[test]
    fn dark_state_is_stationary() {
        let lp = rates();
        let (d, _) = dark_bright_states(lp.g_12, lp.g_34, lp.cos_k0dn.signum()).unwrap();
        let rho0 = pure(&d);
        let ts: Vec<f64> = (1..=20).map(|i| 1e4 * i as f64).collect();
        lindblad_propagate(&rho0, &lp, GeneratorForm::FourTerm, &ts, |_, r| {
            assert!((r - rho0).norm() < 1e-10);
        })
        .unwrap();
    }

    #[test]
    fn single_pair_decays_at_twice_gamma() {
        let mut lp = rates();
        lp.gamma_2 = 0.0;
        lp.gamma_c = 0.0;
        let mut rho0 = DensityMatrix::zeros();
        rho0[(1, 1)] = ONE;
        let t = 1.0 / lp.gamma_1;
        let rho = lindblad_propagate(&rho0, &lp, GeneratorForm::FourTerm, &[t], |_, _| {}).unwrap();
        assert!((rho[(1, 1)].re - (-2.0f64).exp()).abs() < 1e-12);
    }
}
