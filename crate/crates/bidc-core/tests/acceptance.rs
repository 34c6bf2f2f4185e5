//! Acceptance criteria, one PASS/FAIL line each, with INFO lines for the
//! diagnostics that carry no threshold. Exits nonzero if any criterion
//! fails.

use std::time::Instant;

use bidc_core::effective::{
    bidc_real_space_profile, greens_numeric, single_photon_greens, solve_bidc_condition,
    EffectiveModel, EffectiveOptions,
};
use bidc_core::hilbert::{
    evolve_state, pair_state, EvolveOptions, FrequencyPolicy, SparseHamiltonian, TwoExcitationBasis,
};
use bidc_core::model::{doublon_dispersion, group_velocity, k_grid, scattering_band};
use bidc_core::open_system::{
    check_state, dark_bright_states, decay_rates, fidelity, lindblad_propagate, liouvillian, pure,
    GeneratorForm, StateVector, STATE_TOL,
};
use bidc_core::protocols::{
    prepare_entangled_state, run_state_transfer, scan_drive_time, transfer_phase_and_time, Backend,
    PhaseOptions, PrepareOptions, ProtocolSchedule, TransferOptions, TransferResult,
};
use bidc_core::spectral::{
    atomic_excitation, eigensolve, find_bidc, localization, photon_distribution, SpectralThresholds,
};
use bidc_core::ModelParams;
use num_complex::Complex64;

const C1_TOL: f64 = 1e-8;
const C2_ENERGY_TOL: f64 = 1e-3;
const C2_MIN_PE: f64 = 1.9;
const C2_MAX_RATIO: f64 = 0.05;
const C2_MIN_L: f64 = 0.9;
const C3_MAX_DEV: f64 = 0.05;
const C4_F: (f64, f64) = (0.95, 0.99);
const C5_MIN_F: f64 = 0.97;
const C6_AGREE: f64 = 0.02;
const C6_MIN_TRANSFER: f64 = 0.98;
const C6_MIN_P: f64 = 0.99;
const C7_AGREE: f64 = 0.02;
const C7_CONVERGE: f64 = 0.01;
const C7_P: (f64, f64) = (0.91, 0.97);
const C7_MIN_TRANSFER: f64 = 0.95;
const SAMPLES: usize = 200;

type Step = (&'static str, fn(&mut Report));

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, id: &str, pass: bool, detail: String) {
        if !pass {
            self.failed += 1;
        }
        println!("{} {id}: {detail}", if pass { "PASS" } else { "FAIL" });
    }

    fn info(&self, id: &str, detail: String) {
        println!("INFO {id}: {detail}");
    }
}

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

fn cmax<'a>(it: impl Iterator<Item = &'a Complex64>) -> f64 {
    it.map(|z| z.norm()).fold(0.0, f64::max)
}

fn max_dev(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn c1(r: &mut Report) {
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    for n in [10, 12, 16] {
        let mut p = ModelParams::reference(n);
        p.g_12 = 0.0;
        p.g_34 = 0.0;
        p.site_2 = n / 2;
        // Atoms off to the side so they cannot mix with doublons.
        p.omega = [0.0; 4];
        let b = TwoExcitationBasis::new(n).unwrap();
        let h = SparseHamiltonian::assemble(&p, &b, None).unwrap();
        let states = eigensolve(&h, None, None).unwrap();
        let below: Vec<f64> = states
            .iter()
            .filter(|s| {
                s.energy < scattering_band(&p).0 && atomic_excitation(&b, &s.vector) < 1e-12
            })
            .map(|s| s.energy)
            .collect();
        let err = k_grid(n)
            .into_iter()
            .map(|k| {
                let e = doublon_dispersion(k, &p);
                below
                    .iter()
                    .map(|x| (x - e).abs())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max);
        worst = worst.max(err);
        detail.push(format!("N={n}: {err:.2e}"));
    }
    r.line(
        "C1 doublon band",
        worst <= C1_TOL,
        format!("max |E_ED - E_K| {} (tol {C1_TOL:.0e})", detail.join(", ")),
    );
}

fn c2_c3(r: &mut Report) {
    let p = ModelParams::reference(148);
    let two = 2.0 * p.pair_resonance(0);
    let b = TwoExcitationBasis::new(148).unwrap();
    let h = SparseHamiltonian::assemble(&p, &b, None).unwrap();
    let th = SpectralThresholds::default();
    let states = match eigensolve(&h, Some((two - 0.02, two + 0.02)), Some(40)) {
        Ok(s) => s,
        Err(e) => {
            r.line(
                "C2 BIDC existence",
                false,
                format!("eigensolve failed: {e}"),
            );
            r.line("C3 analytic profile", false, "no spectrum".into());
            return;
        }
    };
    let report = match find_bidc(&states, &b, &p, two, &th) {
        Ok(x) => x,
        Err(e) => {
            r.line("C2 BIDC existence", false, e.to_string());
            r.line("C3 analytic profile", false, "no BIDC".into());
            return;
        }
    };
    let d = &report.bidc;
    let ratio = (d.alpha_12 + d.alpha_34).abs() / d.alpha_12.abs();
    let partner_l = report
        .partner
        .as_ref()
        .map(|x| x.localization)
        .unwrap_or(f64::NAN);
    let pass = (d.energy - two).abs() <= C2_ENERGY_TOL
        && d.p_e >= C2_MIN_PE
        && ratio <= C2_MAX_RATIO
        && d.localization >= C2_MIN_L
        && partner_l < C2_MIN_L;
    r.line(
        "C2 BIDC existence",
        pass,
        format!(
            "|E-2Ω| = {:.2e}, P_e = {:.4}, |α12+α34|/|α12| = {:.2e}, L = {:.4}, partner L = {:.4}",
            (d.energy - two).abs(),
            d.p_e,
            ratio,
            d.localization,
            partner_l
        ),
    );
    let plateau: Vec<f64> = states
        .iter()
        .filter(|s| atomic_excitation(&b, &s.vector) > 0.5)
        .map(|s| s.energy)
        .collect();
    if plateau.len() > 1 {
        let lo = plateau.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = plateau.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        r.info(
            "C2 plateau",
            format!(
                "{} states with P_e > 0.5 span {:.3e}",
                plateau.len(),
                hi - lo
            ),
        );
    }

    let full = photon_distribution(&b, &states[d.index].vector).p_two;
    let model = EffectiveModel::at_pair_resonance(&p, EffectiveOptions::default()).unwrap();
    let analytic =
        solve_bidc_condition(&model).and_then(|root| bidc_real_space_profile(&model, &root));
    match analytic {
        Ok(prof) => {
            let num: f64 = prof
                .p_two
                .iter()
                .zip(&full)
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            let den: f64 = full.iter().map(|x| x * x).sum();
            let dev = (num / den).sqrt();
            r.line(
                "C3 analytic profile",
                dev <= C3_MAX_DEV,
                format!(
                    "L2 deviation {:.2}% (tol {:.0}%), analytic L = {:.4}",
                    100.0 * dev,
                    100.0 * C3_MAX_DEV,
                    localization(&p, &prof.p_two, th.window_margin)
                ),
            );
        }
        Err(e) => r.line("C3 analytic profile", false, e.to_string()),
    }
}

fn prep_params() -> (ModelParams, PrepareOptions) {
    let p = ModelParams::reference(148);
    let opts = PrepareOptions {
        omega: Some(p.band_centre_omega()),
        eta: 3e-5,
        t0: 7.3e4,
        t_final: 3e5,
        samples: 600,
        ..Default::default()
    };
    (p, opts)
}

fn c4(r: &mut Report) {
    let (p, opts) = prep_params();
    let s = 0.5f64.sqrt();
    let target = (c(s), c(-s));
    let a = prepare_entangled_state(&p, target, &opts).unwrap();
    let b = prepare_entangled_state(
        &p,
        target,
        &PrepareOptions {
            reference_g: 0.15,
            ..opts.clone()
        },
    )
    .unwrap();
    let f = a.long_time_fidelity;
    r.line(
        "C4 preparation fidelity",
        (C4_F.0..=C4_F.1).contains(&f) && b.peak_fidelity > a.peak_fidelity,
        format!(
            "long-time F = {f:.4} (want {:.2}..{:.2}), peak F g=0.15: {:.4} vs g=0.1: {:.4}",
            C4_F.0, C4_F.1, b.peak_fidelity, a.peak_fidelity
        ),
    );
    // Rate normalization only moves the optimal drive time.
    let phi = StateVector::new(c(0.0), c(s), c(-s), c(0.0));
    let t0s: Vec<f64> = (1..=40).map(|i| 5e3 * i as f64).collect();
    for scale in [0.5, 1.0, 2.0] {
        let scan =
            scan_drive_time(&a.rates, GeneratorForm::FourTerm, &phi, &t0s, 6e5, scale).unwrap();
        let best = scan.iter().max_by(|x, y| x.1.total_cmp(&y.1)).unwrap();
        r.info(
            "C4 rate rescale",
            format!(
                "rates x{scale}: best t0 = {:.2e}, F = {:.4}",
                best.0, best.1
            ),
        );
    }
}

fn c5(r: &mut Report) {
    let (p, opts) = prep_params();
    let mut parts = Vec::new();
    let mut pass = true;
    for (a, b, t0) in [
        (2.0 / 5f64.sqrt(), -1.0 / 5f64.sqrt(), 6.0e4),
        (4.0 / 17f64.sqrt(), 1.0 / 17f64.sqrt(), 5.5e4),
    ] {
        let res = prepare_entangled_state(&p, (c(a), c(b)), &PrepareOptions { t0, ..opts.clone() })
            .unwrap();
        pass &= res.long_time_fidelity >= C5_MIN_F;
        parts.push(format!(
            "({a:.3},{b:.3}) ΔN={} F = {:.4}",
            res.site_2 - p.site_1,
            res.long_time_fidelity
        ));
    }
    r.line(
        "C5 generalized targets",
        pass,
        format!("{} (min {C5_MIN_F})", parts.join(", ")),
    );
}

fn transfer_opts(p: &ModelParams) -> TransferOptions {
    TransferOptions {
        omega: Some(p.band_centre_omega()),
        ..Default::default()
    }
}

fn c6(r: &mut Report) {
    let p = ModelParams::reference(148);
    let sched = ProtocolSchedule::reference_ramp(5e5, SAMPLES);
    let opts = transfer_opts(&p);
    let eff = run_state_transfer(&p, &sched, Backend::Effective, c(1.0), &opts).unwrap();
    let lind = run_state_transfer(&p, &sched, Backend::Lindblad, c(1.0), &opts).unwrap();
    let dev = max_dev(&eff.cpe2, &lind.cpe2);
    let tr = eff.max_transfer();
    let pmin = eff.min_overlap();
    r.line(
        "C6 slow QST",
        dev <= C6_AGREE && tr >= C6_MIN_TRANSFER && pmin >= C6_MIN_P,
        format!(
            "effective vs Lindblad max |Δ|c'|²| = {dev:.4} (tol {C6_AGREE}), max transfer {tr:.4}, min P = {pmin:.4}"
        ),
    );
}

fn nadir(r: &TransferResult) -> usize {
    r.overlap
        .iter()
        .enumerate()
        .filter(|x| x.1.is_finite())
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|x| x.0)
        .unwrap_or(0)
}

fn c7(r: &mut Report) {
    let sched = ProtocolSchedule::reference_ramp(5e3, SAMPLES);
    let p148 = ModelParams::reference(148);
    let p80 = ModelParams::reference(80);
    let p100 = ModelParams::reference(100);
    let o148 = transfer_opts(&p148);
    let o80 = transfer_opts(&p80);
    let eff148 = run_state_transfer(&p148, &sched, Backend::Effective, c(1.0), &o148).unwrap();
    let lind = run_state_transfer(&p148, &sched, Backend::Lindblad, c(1.0), &o148).unwrap();
    let eff80 = run_state_transfer(&p80, &sched, Backend::Effective, c(1.0), &o80).unwrap();
    let full80 = run_state_transfer(&p80, &sched, Backend::Full, c(1.0), &o80).unwrap();
    let full100 =
        run_state_transfer(&p100, &sched, Backend::Full, c(1.0), &transfer_opts(&p100)).unwrap();

    let fe = max_dev(&full80.cpe2, &eff80.cpe2);
    let conv = max_dev(&full80.cpe2, &full100.cpe2);
    let i = nadir(&eff148);
    let lind_dev = (lind.cpe2[i] - eff148.cpe2[i]).abs();
    let fe_nadir = (full80.cpe2[i] - eff80.cpe2[i]).abs();
    let pmin = eff148.overlap[i];
    let phase = transfer_phase_and_time(&eff148, &PhaseOptions::default());
    let (tstar, transfer) = match &phase {
        Ok(x) => (format!("{:.1}", x.t_star), x.transfer),
        Err(e) => (format!("none ({e})"), 0.0),
    };
    let pass = fe <= C7_AGREE
        && conv <= C7_CONVERGE
        && lind_dev > fe_nadir
        && (C7_P.0..=C7_P.1).contains(&pmin)
        && transfer >= C7_MIN_TRANSFER;
    r.line(
        "C7 fast QST",
        pass,
        format!(
            "full vs effective (N=80) {fe:.4} (tol {C7_AGREE}), full N=80 vs N=100 {conv:.4} (tol {C7_CONVERGE}), \
             at nadir t={:.0}: Lindblad dev {lind_dev:.4} vs full dev {fe_nadir:.4}, min P = {pmin:.4}, \
             T* = {tstar}, |c'(T*)|² = {transfer:.4}",
            eff148.times[i]
        ),
    );

    let w_opts = TransferOptions {
        effective: EffectiveOptions {
            doublon_self_energy: true,
            ..Default::default()
        },
        ..o80.clone()
    };
    let eff80w = run_state_transfer(&p80, &sched, Backend::Effective, c(1.0), &w_opts).unwrap();
    r.info(
        "C7 self-energy",
        format!(
            "full vs effective (N=80) with the atom-mediated doublon coupling kept: {:.4}",
            max_dev(&full80.cpe2, &eff80w.cpe2)
        ),
    );
    // One full eigensolve per sample, so a coarse grid.
    let coarse = ProtocolSchedule::reference_ramp(5e3, 25);
    let fo = TransferOptions {
        full_overlap: true,
        ..o80.clone()
    };
    let eff80c = run_state_transfer(&p80, &coarse, Backend::Effective, c(1.0), &o80).unwrap();
    match run_state_transfer(&p80, &coarse, Backend::Full, c(1.0), &fo) {
        Ok(f) if f.overlap.iter().all(|x| !x.is_finite()) => r.info(
            "C7 BIDC definition",
            format!(
                "N=80, 25 samples: no full eigenstate passes the BIDC test at any sample ({}); \
                 effective eigenvector min P(t) {:.4}",
                f.diagnostics.first().map(String::as_str).unwrap_or(""),
                eff80c.min_overlap()
            ),
        ),
        Ok(f) => r.info(
            "C7 BIDC definition",
            format!(
                "N=80, 25 samples, min P(t): full eigenstate {:.4}, effective eigenvector {:.4}, max |ΔP| {:.4}, {} gaps",
                f.min_overlap(),
                eff80c.min_overlap(),
                f.overlap
                    .iter()
                    .zip(&eff80c.overlap)
                    .filter(|x| x.0.is_finite())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max),
                f.diagnostics.len()
            ),
        ),
        Err(e) => r.info("C7 BIDC definition", format!("full-model P(t) failed: {e}")),
    }
}

fn c8(r: &mut Report) {
    let mut fails = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            fails.push(name.to_string());
        }
    };

    let p = ModelParams::reference(40);
    let b = TwoExcitationBasis::new(40).unwrap();
    let h = SparseHamiltonian::assemble(&p, &b, None).unwrap();
    check("hermiticity", h.matrix.asymmetry() == 0.0);
    let states = eigensolve(&h, None, None).unwrap();
    let scale = states.iter().map(|s| s.energy.abs()).fold(1.0, f64::max);
    check(
        "eigen residuals",
        states.iter().all(|s| s.residual <= 1e-8 * scale),
    );
    check(
        "excitation sum",
        states.iter().all(|s| {
            (atomic_excitation(&b, &s.vector) + photon_distribution(&b, &s.vector).total() - 2.0)
                .abs()
                <= 1e-10
        }),
    );

    let sched = ProtocolSchedule::reference_ramp(200.0, 10);
    let mut hh = h.clone();
    let psi0 = pair_state(&b, 0, c(1.0));
    let evolved = evolve_state(
        &mut hh,
        &psi0,
        |t| sched.couplings(t),
        FrequencyPolicy::StarkTracking {
            omega: p.band_centre_omega(),
        },
        &sched.sample_times()[1..],
        &EvolveOptions::default(),
        |_, _| {},
    );
    check("norm drift", evolved.is_ok());

    let p148 = ModelParams::reference(148);
    let omega = p148.band_centre_omega();
    let lp = decay_rates(&p148, omega).unwrap().with_drive(3e-5, 7.3e4);
    check(
        "γ_c² ≤ γ₁γ₂",
        lp.gamma_c * lp.gamma_c <= lp.gamma_1 * lp.gamma_2 * (1.0 + 1e-12),
    );
    let times: Vec<f64> = (1..=50).map(|i| 4e3 * i as f64).collect();
    let mut trace_ok = true;
    lindblad_propagate(
        &pure(&StateVector::new(c(1.0), c(0.0), c(0.0), c(0.0))),
        &lp,
        GeneratorForm::FourTerm,
        &times,
        |t, rho| {
            trace_ok &= check_state(rho, t, STATE_TOL).is_ok();
        },
    )
    .unwrap();
    check("trace and positivity", trace_ok);

    let vg_ok = (1..20).all(|i| {
        let k = 0.15 * i as f64;
        let h = 1e-5;
        let fd = (doublon_dispersion(k + h, &p148) - doublon_dispersion(k - h, &p148)) / (2.0 * h);
        let v = group_velocity(k, &p148);
        (fd - v).abs() <= 1e-6 * v.abs()
    });
    check("v_g finite difference", vg_ok);

    let g_ok = (0..12).all(|n| {
        let (g, _) = single_photon_greens(n, omega, &p148).unwrap();
        let num = greens_numeric(n, omega, &p148, 4096);
        (g - num).abs() <= 1e-6 * g.abs()
    });
    check("G(n) closed form", g_ok);

    let four = liouvillian(&lp, GeneratorForm::FourTerm, true).unwrap();
    let coll = liouvillian(&lp, GeneratorForm::Collective, true).unwrap();
    let gen = liouvillian(&lp, GeneratorForm::General, true).unwrap();
    check(
        "generator equivalence",
        cmax((four - coll).iter()) <= 1e-9 && cmax((four - gen).iter()) <= 1e-9,
    );

    let (d, _) = dark_bright_states(lp.g_12, lp.g_34, lp.cos_k0dn.signum()).unwrap();
    let rho_d = pure(&d);
    let free = lp.clone().with_drive(0.0, 0.0);
    let end =
        lindblad_propagate(&rho_d, &free, GeneratorForm::FourTerm, &[1e5], |_, _| {}).unwrap();
    check(
        "dark stationarity",
        cmax((end - rho_d).iter()) <= 1e-10 && (fidelity(&end, &d) - 1.0).abs() <= 1e-10,
    );

    let run = || {
        let mut buf = Vec::new();
        let s = ProtocolSchedule::reference_ramp(500.0, 20);
        run_state_transfer(
            &ModelParams::reference(60),
            &s,
            Backend::Effective,
            c(1.0),
            &Default::default(),
        )
        .unwrap()
        .write_csv(&mut buf, Default::default(), "determinism")
        .unwrap();
        buf
    };
    check("determinism", run() == run());

    r.line(
        "C8 property suite",
        fails.is_empty(),
        if fails.is_empty() {
            "all properties hold".into()
        } else {
            format!("failing: {}", fails.join(", "))
        },
    );
}

fn main() {
    let mut r = Report { failed: 0 };
    let steps: [Step; 7] = [
        ("C1", c1),
        ("C2/C3", c2_c3),
        ("C4", c4),
        ("C5", c5),
        ("C6", c6),
        ("C7", c7),
        ("C8", c8),
    ];
    for (name, f) in steps {
        let t = Instant::now();
        f(&mut r);
        r.info(name, format!("{:.1} s", t.elapsed().as_secs_f64()));
    }
    println!("{} criteria failed", r.failed);
    if r.failed > 0 {
        std::process::exit(1);
    }
}
