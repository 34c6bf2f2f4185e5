//! Dissipative preparation of entangled pair states and state transfer
//! between the pairs through the bound state, each runnable on the full,
//! effective and Markovian descriptions.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effective::{integrate_effective, EffectiveModel, EffectiveOptions};
use crate::error::{Error, Result};
use crate::hilbert::{
    evolve_state, pair_state, EvolveOptions, FrequencyPolicy, SparseHamiltonian, TwoExcitationBasis,
};
use crate::io;
use crate::model::{resonant_wavevector, ModelParams};
use crate::open_system::{
    dark_bright_states, decay_rates, fidelity, ground_state, lindblad_propagate,
    lindblad_propagate_ramp, pair_populations, pure, DensityMatrix, GeneratorForm, LindbladParams,
    StateVector,
};
use crate::spectral::{eigensolve, find_bidc, SpectralThresholds};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Piecewise-linear couplings with optional drive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSchedule {
    /// `(t, g_12)` knots, strictly increasing in `t`; constant beyond the
    /// ends.
    pub g_12: Vec<(f64, f64)>,
    pub g_34: Vec<(f64, f64)>,
    /// `(η, t0)`.
    #[serde(default)]
    pub drive: Option<(f64, f64)>,
    pub duration: f64,
    /// Number of sample intervals; samples are `duration·i/samples`.
    pub samples: usize,
}

fn interpolate(knots: &[(f64, f64)], t: f64) -> f64 {
    let first = knots[0];
    if t <= first.0 {
        return first.1;
    }
    for w in knots.windows(2) {
        let ((t0, g0), (t1, g1)) = (w[0], w[1]);
        if t <= t1 {
            return g0 + (g1 - g0) * (t - t0) / (t1 - t0);
        }
    }
    knots[knots.len() - 1].1
}

impl ProtocolSchedule {
    /// `g₁ = (0.15 t/T + 0.05)J`, `g₃ = (−0.15 t/T + 0.2)J`.
    pub fn reference_ramp(duration: f64, samples: usize) -> Self {
        ProtocolSchedule {
            g_12: vec![(0.0, 0.05), (duration, 0.2)],
            g_34: vec![(0.0, 0.2), (duration, 0.05)],
            drive: None,
            duration,
            samples,
        }
    }

    pub fn constant(g_12: f64, g_34: f64, duration: f64, samples: usize) -> Self {
        ProtocolSchedule {
            g_12: vec![(0.0, g_12)],
            g_34: vec![(0.0, g_34)],
            drive: None,
            duration,
            samples,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(Error::invalid("duration", "must be > 0"));
        }
        if self.samples == 0 {
            return Err(Error::invalid("samples", "must be >= 1"));
        }
        for (key, knots) in [("g_12", &self.g_12), ("g_34", &self.g_34)] {
            if knots.is_empty() {
                return Err(Error::invalid(key, "needs at least one knot"));
            }
            if knots.iter().any(|&(t, g)| !t.is_finite() || !(g >= 0.0)) {
                return Err(Error::invalid(key, "knots need finite t and g >= 0"));
            }
            if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
                return Err(Error::invalid(key, "knot times must increase strictly"));
            }
        }
        if let Some((eta, t0)) = self.drive {
            if !eta.is_finite() || !(t0 >= 0.0) {
                return Err(Error::invalid("drive", "needs finite η and t0 >= 0"));
            }
        }
        Ok(())
    }

    pub fn couplings(&self, t: f64) -> (f64, f64) {
        (interpolate(&self.g_12, t), interpolate(&self.g_34, t))
    }

    pub fn sample_times(&self) -> Vec<f64> {
        (0..=self.samples)
            .map(|i| self.duration * i as f64 / self.samples as f64)
            .collect()
    }
}

/// Options for [`prepare_entangled_state`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrepareOptions {
    pub eta: f64,
    pub t0: f64,
    pub t_final: f64,
    pub samples: usize,
    /// The larger of the two couplings.
    pub reference_g: f64,
    /// Pair resonance `Ω` at which the rates are evaluated; `None` takes
    /// the first pair's dressed resonance from the parameters.
    pub omega: Option<f64>,
    pub form: GeneratorForm,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        PrepareOptions {
            eta: 3e-5,
            t0: 7.3e4,
            t_final: 3e5,
            samples: 600,
            reference_g: 0.1,
            omega: None,
            form: GeneratorForm::FourTerm,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PreparationResult {
    pub g_12: f64,
    pub g_34: f64,
    pub site_2: usize,
    pub t0: f64,
    pub eta: f64,
    pub rates: LindbladParams,
    pub times: Vec<f64>,
    pub fidelity: Vec<f64>,
    pub long_time_fidelity: f64,
    pub peak_fidelity: f64,
    pub peak_time: f64,
    /// Largest `|eeee⟩` population seen, which the weak-drive picture
    /// assumes negligible.
    pub max_double_excitation: f64,
}

/// Couplings `(g_12, g_34)` with `g₃²:g₁² = |α|:|β|`, the larger one at
/// `reference_g`.
pub fn target_couplings(alpha: f64, beta: f64, reference_g: f64) -> (f64, f64) {
    let (a, b) = (alpha.abs(), beta.abs());
    let big = a.max(b);
    let g34 = reference_g * (a / big).sqrt();
    let g12 = reference_g * (b / big).sqrt();
    (g12, g34)
}

/// Smallest `ΔN ≥` the current one with `cos(K₀ΔN)` equal to `sign`.
fn separation_for_sign(p: &ModelParams, k0: f64, sign: f64) -> Result<usize> {
    for dn in p.delta_n()..p.n_sites - p.site_1 {
        if ((k0 * dn as f64).cos() - sign).abs() < 1e-9 {
            return Ok(p.site_1 + dn);
        }
    }
    Err(Error::UnsupportedTarget(format!(
        "no pair separation on this ring gives cos(K0 ΔN) = {sign} at K0 = {k0}"
    )))
}

/// Drives the first pair from the ground state until `t0`, then lets it
/// relax; the dark state, tuned to `α|eegg⟩ + β|ggee⟩` by the couplings
/// and the separation, collects the population.
pub fn prepare_entangled_state(
    p: &ModelParams,
    target: (Complex64, Complex64),
    opts: &PrepareOptions,
) -> Result<PreparationResult> {
    let (alpha, beta) = target;
    let norm = alpha.norm_sqr() + beta.norm_sqr();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(
            "target",
            format!("|α|² + |β|² = {norm}, not 1"),
        ));
    }
    if !(opts.t_final > 0.0) || opts.samples == 0 || !(opts.t0 >= 0.0) {
        return Err(Error::invalid(
            "t_final",
            "need t_final > 0, t0 >= 0 and samples >= 1",
        ));
    }
    if !(opts.reference_g > 0.0) {
        return Err(Error::invalid("reference_g", "must be > 0"));
    }
    // Relative phase must be 0 or π: the mechanism only sets a sign.
    let rel = if alpha.norm() > 0.0 && beta.norm() > 0.0 {
        let r = beta / alpha;
        if r.im.abs() > 1e-9 * r.norm() {
            return Err(Error::UnsupportedTarget(format!(
                "relative phase {} is neither 0 nor π",
                r.arg()
            )));
        }
        r.re.signum()
    } else {
        -1.0
    };
    let omega = opts.omega.unwrap_or_else(|| p.pair_resonance(0));
    let k0 = resonant_wavevector(omega, p)?;
    // |D⟩ ∝ (g₃², −s g₁²): a negative ratio needs s = +1.
    let sign = -rel;
    let mut q = p.clone();
    q.site_2 = if alpha.norm() > 0.0 && beta.norm() > 0.0 {
        separation_for_sign(p, k0, sign)?
    } else {
        p.site_2
    };
    let (g12, g34) = target_couplings(alpha.norm(), beta.norm(), opts.reference_g);
    q.g_12 = g12;
    q.g_34 = g34;
    let lp = decay_rates(&q, omega)?.with_drive(opts.eta, opts.t0);
    let phi = StateVector::new(ZERO, alpha, beta, ZERO);

    let times: Vec<f64> = (0..=opts.samples)
        .map(|i| opts.t_final * i as f64 / opts.samples as f64)
        .collect();
    let mut fid = Vec::with_capacity(times.len());
    let mut max_double = 0.0f64;
    let rho0 = ground_state();
    fid.push(fidelity(&rho0, &phi));
    lindblad_propagate(&rho0, &lp, opts.form, &times[1..], |_, rho| {
        fid.push(fidelity(rho, &phi));
        max_double = max_double.max(rho[(3, 3)].re);
    })?;
    let (ipk, &peak) = fid
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("at least one sample");
    Ok(PreparationResult {
        g_12: g12,
        g_34: g34,
        site_2: q.site_2,
        t0: opts.t0,
        eta: opts.eta,
        rates: lp,
        long_time_fidelity: *fid.last().unwrap(),
        peak_fidelity: peak,
        peak_time: times[ipk],
        fidelity: fid,
        times,
        max_double_excitation: max_double,
    })
}

/// Long-time fidelity `F(t_final)` for each drive duration in `t0s`, with
/// rates scaled by `rate_scale`. Shows where the optimum moves if the rate
/// normalization is off by a constant.
pub fn scan_drive_time(
    lp: &LindbladParams,
    form: GeneratorForm,
    target: &StateVector,
    t0s: &[f64],
    t_final: f64,
    rate_scale: f64,
) -> Result<Vec<(f64, f64)>> {
    let mut base = lp.clone();
    for r in [
        &mut base.gamma_1,
        &mut base.gamma_2,
        &mut base.gamma_c,
        &mut base.gamma_prime,
        &mut base.a,
        &mut base.b,
        &mut base.c,
        &mut base.d,
    ] {
        *r *= rate_scale;
    }
    t0s.par_iter()
        .map(|&t0| {
            let l = base.clone().with_drive(lp.eta, t0);
            let rho = lindblad_propagate(&ground_state(), &l, form, &[t_final.max(t0)], |_, _| {})?;
            Ok((t0, fidelity(&rho, target)))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Full,
    Effective,
    Lindblad,
}

impl Backend {
    pub fn as_str(self) -> &'static str {
        match self {
            Backend::Full => "full",
            Backend::Effective => "effective",
            Backend::Lindblad => "lindblad",
        }
    }
}

/// Frame in which the transfer phase is read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PhaseFrame {
    /// `|ψ(t)⟩ = e^{−iHt}|ψ(0)⟩`: the phase relative to the inert
    /// `|gggg⟩` component, which carries the `e^{−2iΩt}` of the pair energy.
    #[default]
    Lab,
    /// The frame rotating at `2Ω`.
    Rotating,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// `σ₁⁺σ₂⁺|G, vac⟩` scaled by `c_e`.
    #[default]
    FirstPair,
    /// The bound state at the initial couplings, scaled by `c_e`.
    Bidc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferOptions {
    /// Pair resonance `Ω`; the frame rotates at `2Ω`. `None` takes the
    /// first pair's dressed resonance from the parameters.
    pub omega: Option<f64>,
    pub dt_control: f64,
    pub norm_tol: f64,
    pub effective: EffectiveOptions,
    pub form: GeneratorForm,
    /// Substep for the Markovian backend, where rates follow the couplings.
    pub lindblad_dt: f64,
    /// Let atomic frequencies follow the instantaneous Stark shift in the
    /// full model, keeping both pairs on resonance during the ramp.
    pub stark_tracking: bool,
    /// Compute the bound-state overlap `P(t)` in the full backend (one
    /// windowed eigensolve per sample).
    pub full_overlap: bool,
    pub initial: InitialState,
}

impl Default for TransferOptions {
    fn default() -> Self {
        TransferOptions {
            omega: None,
            dt_control: 1.0,
            norm_tol: 1e-8,
            effective: EffectiveOptions::default(),
            form: GeneratorForm::FourTerm,
            lindblad_dt: 50.0,
            stark_tracking: true,
            full_overlap: false,
            initial: InitialState::FirstPair,
        }
    }
}

/// Time series of one transfer run.
#[derive(Clone, Debug, Serialize)]
pub struct TransferResult {
    pub backend: Backend,
    pub times: Vec<f64>,
    /// `|c_e(t)|²`, the first pair's excitation probability.
    pub ce2: Vec<f64>,
    /// `|c′_e(t)|²`, the second pair's.
    pub cpe2: Vec<f64>,
    /// `arg α₃₄(t) − arg α₁₂(0)` in the frame rotating at `2Ω`, unwrapped.
    /// Absent for the Markovian backend.
    pub rotating_phase: Option<Vec<f64>>,
    /// Instantaneous bound-state overlap; NaN where it could not be formed.
    pub overlap: Vec<f64>,
    /// `2Ω`.
    pub frame_energy: f64,
    pub c_e: Complex64,
    /// `|c_g|²` of the inert `|gggg⟩` component, unchanged by construction.
    pub c_g_abs2: f64,
    pub diagnostics: Vec<String>,
}

fn wrap(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y == -PI {
        PI
    } else {
        y
    }
}

impl TransferResult {
    /// `θ(t)` on the principal branch `(−π, π]`.
    pub fn theta(&self, frame: PhaseFrame) -> Option<Vec<f64>> {
        let rot = self.rotating_phase.as_ref()?;
        Some(
            rot.iter()
                .zip(&self.times)
                .map(|(ph, t)| match frame {
                    PhaseFrame::Rotating => wrap(*ph),
                    PhaseFrame::Lab => wrap(ph - self.frame_energy * t),
                })
                .collect(),
        )
    }

    pub fn max_transfer(&self) -> f64 {
        self.cpe2.iter().copied().fold(0.0, f64::max)
    }

    pub fn min_overlap(&self) -> f64 {
        self.overlap
            .iter()
            .copied()
            .filter(|x| x.is_finite())
            .fold(f64::INFINITY, f64::min)
    }

    /// `time,ce2,cpe2,theta,P,backend` rows.
    pub fn write_csv<W: Write>(&self, w: W, frame: PhaseFrame, comment: &str) -> Result<()> {
        let theta = self.theta(frame);
        let mut out = io::csv_writer(
            w,
            comment,
            &["time", "ce2", "cpe2", "theta", "P", "backend"],
        )?;
        for i in 0..self.times.len() {
            let th = theta.as_ref().map(|v| v[i]).unwrap_or(f64::NAN);
            io::text_row(
                &mut out,
                &[
                    self.times[i].to_string(),
                    self.ce2[i].to_string(),
                    self.cpe2[i].to_string(),
                    th.to_string(),
                    self.overlap[i].to_string(),
                    self.backend.as_str().to_string(),
                ],
            )?;
        }
        io::finish(out)
    }
}

fn unwrap_push(out: &mut Vec<f64>, raw: f64) {
    match out.last() {
        None => out.push(raw),
        Some(&prev) => out.push(prev + wrap(raw - prev)),
    }
}

/// Runs the transfer protocol from `c_e` on the first pair.
pub fn run_state_transfer(
    p: &ModelParams,
    schedule: &ProtocolSchedule,
    backend: Backend,
    c_e: Complex64,
    opts: &TransferOptions,
) -> Result<TransferResult> {
    schedule.validate()?;
    p.validate()?;
    if c_e.norm() > 1.0 + 1e-12 || c_e.norm() == 0.0 {
        return Err(Error::invalid("c_e", "need 0 < |c_e| <= 1"));
    }
    let omega = opts.omega.unwrap_or_else(|| p.pair_resonance(0));
    let times = schedule.sample_times();
    let c_g_abs2 = 1.0 - c_e.norm_sqr();
    match backend {
        Backend::Effective => run_effective(p, schedule, omega, c_e, c_g_abs2, &times, opts),
        Backend::Full => run_full(p, schedule, omega, c_e, c_g_abs2, &times, opts),
        Backend::Lindblad => run_lindblad(p, schedule, omega, c_e, c_g_abs2, &times, opts),
    }
}

fn run_effective(
    p: &ModelParams,
    schedule: &ProtocolSchedule,
    omega: f64,
    c_e: Complex64,
    c_g_abs2: f64,
    times: &[f64],
    opts: &TransferOptions,
) -> Result<TransferResult> {
    let (g1, g3) = schedule.couplings(0.0);
    let mut q = p.clone();
    q.g_12 = g1;
    q.g_34 = g3;
    let mut model = EffectiveModel::new(&q, omega, opts.effective)?;
    let psi0: Vec<Complex64> = match opts.initial {
        InitialState::FirstPair => model.pair_state(c_e, ZERO),
        InitialState::Bidc => model.bidc()?.1.into_iter().map(|a| a * c_e).collect(),
    };
    let a12_0 = psi0[0];
    let probe = model.clone();
    let mut states: Vec<Vec<Complex64>> = vec![psi0.clone()];
    integrate_effective(
        &mut model,
        &psi0,
        |t| schedule.couplings(t),
        &times[1..],
        opts.dt_control,
        opts.norm_tol,
        |s| states.push(s.amplitudes.clone()),
    )?;
    let (overlap, diagnostics) = bidc_overlap_trace(
        &OverlapSource::Effective(&probe),
        schedule,
        times,
        &states,
        c_e,
    );
    let mut phase = Vec::with_capacity(states.len());
    for s in &states {
        unwrap_push(&mut phase, s[1].arg() - a12_0.arg());
    }
    Ok(TransferResult {
        backend: Backend::Effective,
        times: times.to_vec(),
        ce2: states.iter().map(|s| s[0].norm_sqr()).collect(),
        cpe2: states.iter().map(|s| s[1].norm_sqr()).collect(),
        rotating_phase: Some(phase),
        overlap,
        frame_energy: 2.0 * omega,
        c_e,
        c_g_abs2,
        diagnostics,
    })
}

fn full_hamiltonian(
    p: &ModelParams,
    omega: f64,
    g: (f64, f64),
    tracking: bool,
) -> Result<SparseHamiltonian> {
    let basis = TwoExcitationBasis::new(p.n_sites)?;
    let mut h = SparseHamiltonian::assemble(p, &basis, Some(g))?;
    if tracking {
        let s1 = crate::effective::stark_shift(g.0, omega, p);
        let s3 = crate::effective::stark_shift(g.1, omega, p);
        h.set_frequencies([omega + s1, omega + s1, omega + s3, omega + s3]);
    }
    h.set_frame(2.0 * omega);
    Ok(h)
}

/// The full-model bound state at couplings `g`, as a complex vector in the
/// two-excitation basis.
pub fn full_bidc(
    p: &ModelParams,
    omega: f64,
    g: (f64, f64),
    tracking: bool,
) -> Result<Vec<Complex64>> {
    let mut h = full_hamiltonian(p, omega, g, tracking)?;
    // Energies measured from the lab frame for the spectral criteria.
    h.set_frame(0.0);
    let two = 2.0 * omega;
    let states = eigensolve(&h, Some((two - 0.05, two + 0.05)), Some(24))?;
    let q = {
        let mut q = h.params.clone();
        q.g_12 = g.0;
        q.g_34 = g.1;
        q
    };
    let report = find_bidc(&states, &h.basis, &q, two, &SpectralThresholds::default())?;
    Ok(states[report.bidc.index].complex_vector())
}

fn run_full(
    p: &ModelParams,
    schedule: &ProtocolSchedule,
    omega: f64,
    c_e: Complex64,
    c_g_abs2: f64,
    times: &[f64],
    opts: &TransferOptions,
) -> Result<TransferResult> {
    let g0 = schedule.couplings(0.0);
    let mut h = full_hamiltonian(p, omega, g0, opts.stark_tracking)?;
    let psi0: Vec<Complex64> = match opts.initial {
        InitialState::FirstPair => pair_state(&h.basis, 0, c_e),
        InitialState::Bidc => full_bidc(p, omega, g0, opts.stark_tracking)?
            .into_iter()
            .map(|a| a * c_e)
            .collect(),
    };
    let q12 = h.basis.atom_pair(0, 1);
    let q34 = h.basis.atom_pair(2, 3);
    let a12_0 = psi0[q12];
    let policy = if opts.stark_tracking {
        FrequencyPolicy::StarkTracking { omega }
    } else {
        FrequencyPolicy::Fixed
    };
    let eo = EvolveOptions {
        dt_control: opts.dt_control,
        norm_tol: opts.norm_tol,
    };
    let keep = opts.full_overlap;
    let mut a12 = vec![a12_0];
    let mut a34 = vec![psi0[q34]];
    let mut states: Vec<Vec<Complex64>> = if keep { vec![psi0.clone()] } else { Vec::new() };
    evolve_state(
        &mut h,
        &psi0,
        |t| schedule.couplings(t),
        policy,
        &times[1..],
        &eo,
        |_, psi| {
            a12.push(psi[q12]);
            a34.push(psi[q34]);
            if keep {
                states.push(psi.to_vec());
            }
        },
    )?;
    let (overlap, diagnostics) = if keep {
        let src = OverlapSource::Full {
            params: p,
            omega,
            tracking: opts.stark_tracking,
        };
        bidc_overlap_trace(&src, schedule, times, &states, c_e)
    } else {
        (vec![f64::NAN; times.len()], Vec::new())
    };
    let mut phase = Vec::with_capacity(a34.len());
    for a in &a34 {
        unwrap_push(&mut phase, a.arg() - a12_0.arg());
    }
    Ok(TransferResult {
        backend: Backend::Full,
        times: times.to_vec(),
        ce2: a12.iter().map(|a| a.norm_sqr()).collect(),
        cpe2: a34.iter().map(|a| a.norm_sqr()).collect(),
        rotating_phase: Some(phase),
        overlap,
        frame_energy: 2.0 * omega,
        c_e,
        c_g_abs2,
        diagnostics,
    })
}

fn run_lindblad(
    p: &ModelParams,
    schedule: &ProtocolSchedule,
    omega: f64,
    c_e: Complex64,
    c_g_abs2: f64,
    times: &[f64],
    opts: &TransferOptions,
) -> Result<TransferResult> {
    let rates = |t: f64| -> Result<LindbladParams> {
        let (g1, g3) = schedule.couplings(t);
        let mut q = p.clone();
        q.g_12 = g1;
        q.g_34 = g3;
        let lp = decay_rates(&q, omega)?;
        Ok(match schedule.drive {
            Some((eta, t0)) => lp.with_drive(eta, t0),
            None => lp,
        })
    };
    let psi0 = StateVector::new(Complex64::new(c_g_abs2.sqrt(), 0.0), c_e, ZERO, ZERO);
    let rho0 = pure(&psi0);
    let mut rhos: Vec<DensityMatrix> = vec![rho0];
    lindblad_propagate_ramp(
        &rho0,
        rates,
        opts.form,
        &times[1..],
        opts.lindblad_dt,
        |_, r| rhos.push(*r),
    )?;
    // The dark state plays the bound state's role here.
    let overlap = times
        .iter()
        .zip(&rhos)
        .map(|(&t, rho)| {
            let (g1, g3) = schedule.couplings(t);
            let lp = rates(t).ok()?;
            let sign = lp.cos_k0dn;
            if (sign.abs() - 1.0).abs() > 1e-9 {
                return None;
            }
            let (d, _) = dark_bright_states(g1, g3, sign.signum()).ok()?;
            Some(fidelity(rho, &d) / c_e.norm_sqr())
        })
        .map(|x| x.unwrap_or(f64::NAN))
        .collect();
    let pops: Vec<(f64, f64)> = rhos.iter().map(pair_populations).collect();
    Ok(TransferResult {
        backend: Backend::Lindblad,
        times: times.to_vec(),
        ce2: pops.iter().map(|x| x.0).collect(),
        cpe2: pops.iter().map(|x| x.1).collect(),
        rotating_phase: None,
        overlap,
        frame_energy: 2.0 * omega,
        c_e,
        c_g_abs2,
        diagnostics: Vec::new(),
    })
}

/// Where the instantaneous bound state comes from.
pub enum OverlapSource<'a> {
    /// The effective model's eigenvector with the largest dark-state weight.
    Effective(&'a EffectiveModel),
    /// The full-model eigenstate picked by [`find_bidc`].
    Full {
        params: &'a ModelParams,
        omega: f64,
        tracking: bool,
    },
}

/// `P(t) = |⟨BIDC(t)|ψ(t)⟩|² / |c_e|²` at each sample, with the bound state
/// recomputed for the couplings at that time (cached per coupling pair).
/// Samples where no bound state is found are NaN and listed in the
/// returned diagnostics.
pub fn bidc_overlap_trace(
    source: &OverlapSource,
    schedule: &ProtocolSchedule,
    times: &[f64],
    states: &[Vec<Complex64>],
    c_e: Complex64,
) -> (Vec<f64>, Vec<String>) {
    let mut keys: Vec<(u64, u64)> = times
        .iter()
        .map(|&t| {
            let (a, b) = schedule.couplings(t);
            (a.to_bits(), b.to_bits())
        })
        .collect();
    let per_sample = keys.clone();
    keys.sort_unstable();
    keys.dedup();
    let solved: HashMap<(u64, u64), Result<Vec<Complex64>>> = keys
        .par_iter()
        .map(|&(a, b)| {
            let g = (f64::from_bits(a), f64::from_bits(b));
            let v = match source {
                OverlapSource::Effective(m) => {
                    let mut m = (*m).clone();
                    m.set_couplings(g.0, g.1);
                    m.bidc().map(|x| x.1)
                }
                OverlapSource::Full {
                    params,
                    omega,
                    tracking,
                } => full_bidc(params, *omega, g, *tracking),
            };
            ((a, b), v)
        })
        .collect();
    let w = c_e.norm_sqr();
    let mut diags = Vec::new();
    let p = times
        .iter()
        .zip(states)
        .zip(&per_sample)
        .map(|((&t, psi), key)| match &solved[key] {
            Ok(b) => {
                let ov: Complex64 = b.iter().zip(psi).map(|(x, y)| x.conj() * y).sum();
                ov.norm_sqr() / w
            }
            Err(e) => {
                diags.push(format!("t = {t}: {e}"));
                f64::NAN
            }
        })
        .collect();
    (p, diags)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseOptions {
    pub frame: PhaseFrame,
    /// Crossings count only where `|c′_e|² ≥ min_transfer · |c_e(0)|²`.
    pub min_transfer: f64,
}

impl Default for PhaseOptions {
    fn default() -> Self {
        PhaseOptions {
            frame: PhaseFrame::Lab,
            min_transfer: 0.5,
        }
    }
}

/// Completion time and how well both completion conditions hold there.
#[derive(Clone, Debug, Serialize)]
pub struct PhaseReport {
    pub t_star: f64,
    /// `|θ(T*)|`, zero up to interpolation.
    pub theta_residual: f64,
    pub transfer: f64,
    /// `| |c′_e(T*)| − |c_e(0)| |`.
    pub amplitude_residual: f64,
    /// Zero crossings of `θ` with enough transferred weight.
    pub crossings: usize,
}

/// Finds the zero crossings of `θ(t)` and returns the one with the largest
/// `|c′_e|²`. Between samples the rotating-frame phase and `|c′_e|²` are
/// interpolated linearly and the lab-frame term `−2Ωt` is kept exact, so
/// crossings faster than the sampling are still resolved.
pub fn transfer_phase_and_time(r: &TransferResult, opts: &PhaseOptions) -> Result<PhaseReport> {
    let Some(rot) = &r.rotating_phase else {
        return Err(Error::Unavailable(format!(
            "θ(t) is not defined for the {} backend",
            r.backend.as_str()
        )));
    };
    let rate = match opts.frame {
        PhaseFrame::Lab => r.frame_energy,
        PhaseFrame::Rotating => 0.0,
    };
    let theta = |i: usize| rot[i] - rate * r.times[i];
    let c0 = r.c_e.norm_sqr();
    let mut best: Option<(f64, f64, f64)> = None;
    let mut count = 0usize;
    let mut consider = |t: f64, th: f64, tr: f64| {
        if tr < opts.min_transfer * c0 {
            return;
        }
        count += 1;
        if best.is_none_or(|b| tr > b.1) {
            best = Some((t, tr, th));
        }
    };
    for i in 0..r.times.len() {
        let th = theta(i);
        if wrap(th) == 0.0 {
            consider(r.times[i], 0.0, r.cpe2[i]);
        }
        if i + 1 == r.times.len() {
            break;
        }
        let (t0, t1) = (r.times[i], r.times[i + 1]);
        let (a, b) = (th, theta(i + 1));
        let (lo, hi) = (a.min(b), a.max(b));
        // Multiples of 2π strictly inside (lo, hi).
        let m_lo = (lo / (2.0 * PI)).floor() as i64 + 1;
        let m_hi = (hi / (2.0 * PI)).ceil() as i64 - 1;
        for m in m_lo..=m_hi {
            let target = 2.0 * PI * m as f64;
            let s = (target - a) / (b - a);
            let t = t0 + s * (t1 - t0);
            let tr = r.cpe2[i] + s * (r.cpe2[i + 1] - r.cpe2[i]);
            consider(t, 0.0, tr);
        }
    }
    match best {
        Some((t, tr, th)) => Ok(PhaseReport {
            t_star: t,
            theta_residual: th.abs(),
            transfer: tr,
            amplitude_residual: (tr.sqrt() - c0.sqrt()).abs(),
            crossings: count,
        }),
        None => {
            let ths: Vec<f64> = (0..r.times.len()).map(|i| wrap(theta(i))).collect();
            let lo = ths.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = ths.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Err(Error::NotFound(format!(
                "no zero crossing of θ with |c′_e|² ≥ {} (max transfer {:.4}); θ ranges over [{lo:.4}, {hi:.4}]",
                opts.min_transfer * c0,
                r.max_transfer()
            )))
        }
    }
}

/// `time,F` rows.
pub fn write_preparation_csv<W: Write>(w: W, r: &PreparationResult, comment: &str) -> Result<()> {
    let mut out = io::csv_writer(w, comment, &["time", "F"])?;
    for (t, f) in r.times.iter().zip(&r.fidelity) {
        io::row(&mut out, &[*t, *f])?;
    }
    io::finish(out)
}
