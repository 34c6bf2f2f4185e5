//! One function per task. Each stages its files and headline metrics in
//! [`Outputs`]; nothing touches the disk until the task has succeeded.

use std::path::Path;

use bidc_core::effective::{
    bidc_real_space_profile, solve_bidc_condition, write_f_table, write_greens_table,
    EffectiveModel,
};
use bidc_core::hilbert::{SparseHamiltonian, TwoExcitationBasis};
use bidc_core::open_system::{
    decay_rates, ground_state, lindblad_propagate, trajectory_row, write_rates_json,
    write_trajectory_csv, StateVector,
};
use bidc_core::protocols::{
    prepare_entangled_state, run_state_transfer, transfer_phase_and_time, write_preparation_csv,
    PhaseOptions, PrepareOptions, TransferOptions, TransferResult,
};
use bidc_core::spectral::{
    eigensolve, find_bidc, photon_distribution, two_photon_correlation, write_correlation_csv,
    write_profile_csv, write_spectrum_csv, EigenState,
};
use bidc_core::{io, Error, ModelParams, Result};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{RunConfig, Task};
use crate::output::{Outputs, RunManifest, MANIFEST};

fn json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(v).map_err(|e| Error::Parse(e.to_string()))?;
    s.push(b'\n');
    Ok(s)
}

fn buffer<F: FnOnce(&mut Vec<u8>) -> Result<()>>(f: F) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

/// Everything a task needs besides its config.
pub struct Context {
    pub comment: String,
}

fn two_omega(p: &ModelParams) -> f64 {
    2.0 * p.pair_resonance(0)
}

fn spectrum_states(
    cfg: &RunConfig,
    p: &ModelParams,
) -> Result<(TwoExcitationBasis, Vec<EigenState>)> {
    let basis = TwoExcitationBasis::new(p.n_sites)?;
    let h = SparseHamiltonian::assemble(p, &basis, None)?;
    let s = &cfg.spectrum;
    let states = if s.full {
        eigensolve(&h, None, None)?
    } else {
        let two = two_omega(p);
        eigensolve(
            &h,
            Some((two - s.half_width, two + s.half_width)),
            Some(s.count),
        )?
    };
    Ok((basis, states))
}

fn spectrum(cfg: &RunConfig, ctx: &Context, out: &mut Outputs) -> Result<()> {
    let p = cfg.params();
    let (basis, states) = spectrum_states(cfg, &p)?;
    out.add(
        "spectrum.csv",
        buffer(|b| {
            write_spectrum_csv(
                b,
                &states,
                &basis,
                &p,
                &cfg.spectrum.thresholds,
                &ctx.comment,
            )
        })?,
    );
    out.metric("n_states", states.len() as f64);
    out.metric("two_omega", two_omega(&p));
    Ok(())
}

fn bidc(cfg: &RunConfig, ctx: &Context, out: &mut Outputs) -> Result<()> {
    let p = cfg.params();
    let two = two_omega(&p);
    let (basis, states) = spectrum_states(cfg, &p)?;
    out.add(
        "spectrum.csv",
        buffer(|b| {
            write_spectrum_csv(
                b,
                &states,
                &basis,
                &p,
                &cfg.spectrum.thresholds,
                &ctx.comment,
            )
        })?,
    );
    let report = find_bidc(&states, &basis, &p, two, &cfg.spectrum.thresholds)?;
    let v = &states[report.bidc.index].vector;
    out.add(
        "bidc_profile.csv",
        buffer(|b| write_profile_csv(b, &photon_distribution(&basis, v), &ctx.comment))?,
    );
    out.add(
        "bidc_correlation.csv",
        buffer(|b| write_correlation_csv(b, &two_photon_correlation(&basis, v), &ctx.comment))?,
    );
    out.add("bidc.json", json(&report)?);
    let d = &report.bidc;
    out.metric("bidc_index", d.index as f64);
    out.metric("bidc_energy", d.energy);
    out.metric("two_omega", two);
    out.metric("energy_offset", (d.energy - two).abs());
    out.metric("p_e", d.p_e);
    out.metric("dark_ratio", d.dark_ratio);
    out.metric("localization", d.localization);
    if let Some(partner) = &report.partner {
        out.metric("partner_localization", partner.localization);
    }
    Ok(())
}

fn effective_compare(cfg: &RunConfig, ctx: &Context, out: &mut Outputs) -> Result<()> {
    let p = cfg.params();
    let model = EffectiveModel::at_pair_resonance(&p, cfg.effective.options)?;
    out.add(
        "f_table.csv",
        buffer(|b| write_f_table(b, &model, &ctx.comment))?,
    );
    out.add(
        "greens.csv",
        buffer(|b| {
            write_greens_table(b, &p, model.omega, cfg.effective.greens_range, &ctx.comment)
        })?,
    );
    let root = solve_bidc_condition(&model)?;
    let analytic = bidc_real_space_profile(&model, &root)?;
    out.metric("root_energy", root.energy);
    out.metric("root_residual", root.residual);
    out.metric("second_pair_residual", root.second_pair_residual);

    let two = two_omega(&p);
    let (basis, states) = spectrum_states(cfg, &p)?;
    let report = find_bidc(&states, &basis, &p, two, &cfg.spectrum.thresholds)?;
    let full = photon_distribution(&basis, &states[report.bidc.index].vector).p_two;
    let num: f64 = analytic
        .p_two
        .iter()
        .zip(&full)
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    let den: f64 = full.iter().map(|x| x * x).sum();
    out.add(
        "profile_compare.csv",
        buffer(|b| {
            let mut w =
                io::csv_writer(b, &ctx.comment, &["site", "P_two_effective", "P_two_full"])?;
            for (j, (a, f)) in analytic.p_two.iter().zip(&full).enumerate() {
                io::row(&mut w, &[j as f64, *a, *f])?;
            }
            io::finish(w)
        })?,
    );
    out.metric("full_energy", report.bidc.energy);
    out.metric("profile_l2_deviation", (num / den).sqrt());
    Ok(())
}

fn prepare(cfg: &RunConfig, ctx: &Context, out: &mut Outputs) -> Result<()> {
    let p = cfg.params();
    let s = &cfg.prepare;
    let opts = PrepareOptions {
        eta: s.eta,
        t0: s.t0,
        t_final: s.t_final,
        samples: s.samples,
        reference_g: s.reference_g,
        omega: Some(cfg.reference_omega()),
        form: s.form,
    };
    let target = (Complex64::new(s.alpha, 0.0), Complex64::new(s.beta, 0.0));
    let r = prepare_entangled_state(&p, target, &opts)?;
    out.add(
        "preparation.csv",
        buffer(|b| write_preparation_csv(b, &r, &ctx.comment))?,
    );

    let phi = StateVector::new(
        Complex64::new(0.0, 0.0),
        target.0,
        target.1,
        Complex64::new(0.0, 0.0),
    );
    let mut rows = vec![trajectory_row(0.0, &ground_state(), &phi)];
    lindblad_propagate(
        &ground_state(),
        &r.rates,
        s.form,
        &r.times[1..],
        |t, rho| rows.push(trajectory_row(t, rho, &phi)),
    )?;
    out.add(
        "trajectory.csv",
        buffer(|b| write_trajectory_csv(b, &rows, &ctx.comment))?,
    );

    #[derive(Serialize)]
    struct Summary<'a> {
        g_12: f64,
        g_34: f64,
        site_2: usize,
        t0: f64,
        eta: f64,
        long_time_fidelity: f64,
        peak_fidelity: f64,
        peak_time: f64,
        max_double_excitation: f64,
        rates: &'a bidc_core::open_system::LindbladParams,
    }
    out.add(
        "preparation.json",
        json(&Summary {
            g_12: r.g_12,
            g_34: r.g_34,
            site_2: r.site_2,
            t0: r.t0,
            eta: r.eta,
            long_time_fidelity: r.long_time_fidelity,
            peak_fidelity: r.peak_fidelity,
            peak_time: r.peak_time,
            max_double_excitation: r.max_double_excitation,
            rates: &r.rates,
        })?,
    );
    out.metric("long_time_fidelity", r.long_time_fidelity);
    out.metric("peak_fidelity", r.peak_fidelity);
    out.metric("g_12", r.g_12);
    out.metric("g_34", r.g_34);
    out.metric("site_2", r.site_2 as f64);
    Ok(())
}

#[derive(Serialize)]
struct TransferSummary {
    backend: &'static str,
    n_sites: usize,
    max_transfer: f64,
    final_ce2: f64,
    final_cpe2: f64,
    min_overlap: Option<f64>,
    t_star: Option<f64>,
    transfer_at_t_star: Option<f64>,
    theta_residual: Option<f64>,
    amplitude_residual: Option<f64>,
    phase_note: Option<String>,
    overlap_gaps: Vec<String>,
}

fn transfer(cfg: &RunConfig, ctx: &Context, out: &mut Outputs) -> Result<()> {
    let p = cfg.params();
    let t = &cfg.transfer;
    let schedule = cfg.schedule();
    let opts = TransferOptions {
        omega: Some(cfg.reference_omega()),
        dt_control: t.dt_control,
        effective: cfg.effective.options,
        lindblad_dt: t.lindblad_dt,
        stark_tracking: t.stark_tracking,
        full_overlap: t.full_overlap,
        ..Default::default()
    };
    let c_e = Complex64::new(t.c_e, 0.0);
    let runs: Vec<(ModelParams, Result<TransferResult>)> = t
        .backends
        .par_iter()
        .map(|&backend| {
            let mut q = p.clone();
            if backend == bidc_core::protocols::Backend::Full {
                if let Some(n) = t.full_n_sites {
                    q.n_sites = n;
                }
            }
            let r = run_state_transfer(&q, &schedule, backend, c_e, &opts);
            (q, r)
        })
        .collect();
    let phase_opts = PhaseOptions {
        frame: t.phase_frame,
        min_transfer: t.min_transfer,
    };
    let mut summaries = Vec::new();
    let mut results = Vec::new();
    for (q, r) in runs {
        let r = r?;
        let name = r.backend.as_str();
        out.add(
            format!("transfer_{name}.csv"),
            buffer(|b| r.write_csv(b, t.phase_frame, &ctx.comment))?,
        );
        let phase = r
            .rotating_phase
            .as_ref()
            .map(|_| transfer_phase_and_time(&r, &phase_opts));
        let min_p = r.min_overlap();
        let (report, note) = match phase {
            Some(Ok(x)) => (Some(x), None),
            Some(Err(e)) => (None, Some(e.to_string())),
            None => (None, Some("θ is not available for this backend".into())),
        };
        out.metric(format!("{name}_max_transfer"), r.max_transfer());
        if min_p.is_finite() {
            out.metric(format!("{name}_min_overlap"), min_p);
        }
        if let Some(x) = &report {
            out.metric(format!("{name}_t_star"), x.t_star);
            out.metric(format!("{name}_transfer_at_t_star"), x.transfer);
        }
        summaries.push(TransferSummary {
            backend: name,
            n_sites: q.n_sites,
            max_transfer: r.max_transfer(),
            final_ce2: *r.ce2.last().unwrap(),
            final_cpe2: *r.cpe2.last().unwrap(),
            min_overlap: min_p.is_finite().then_some(min_p),
            t_star: report.as_ref().map(|x| x.t_star),
            transfer_at_t_star: report.as_ref().map(|x| x.transfer),
            theta_residual: report.as_ref().map(|x| x.theta_residual),
            amplitude_residual: report.as_ref().map(|x| x.amplitude_residual),
            phase_note: note,
            overlap_gaps: r.diagnostics.clone(),
        });
        results.push(r);
    }
    for i in 0..results.len() {
        for j in i + 1..results.len() {
            let d = results[i]
                .cpe2
                .iter()
                .zip(&results[j].cpe2)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            out.metric(
                format!(
                    "max_dev_{}_{}",
                    results[i].backend.as_str(),
                    results[j].backend.as_str()
                ),
                d,
            );
        }
    }
    out.add("transfer.json", json(&summaries)?);
    Ok(())
}

fn rates(cfg: &RunConfig, _ctx: &Context, out: &mut Outputs) -> Result<()> {
    let p = cfg.params();
    let lp = decay_rates(&p, cfg.reference_omega())?;
    out.add("rates.json", buffer(|b| write_rates_json(b, &lp))?);
    out.metric("gamma_1", lp.gamma_1);
    out.metric("gamma_2", lp.gamma_2);
    out.metric("gamma_c", lp.gamma_c);
    out.metric("k0", lp.k0);
    out.metric("v_g", lp.v_g);
    out.metric("f_k0", lp.f_k0);
    Ok(())
}

/// Runs one non-sweep task into `out`.
pub fn run_into(cfg: &RunConfig, ctx: &Context, out: &mut Outputs) -> Result<()> {
    for w in cfg.params().regime_warnings() {
        log::warn!("{w}");
        out.notes.push(format!("regime: {w}"));
    }
    match cfg.task {
        Task::Spectrum => spectrum(cfg, ctx, out),
        Task::Bidc => bidc(cfg, ctx, out),
        Task::EffectiveCompare => effective_compare(cfg, ctx, out),
        Task::Prepare => prepare(cfg, ctx, out),
        Task::Transfer => transfer(cfg, ctx, out),
        Task::Rates => rates(cfg, ctx, out),
        Task::Sweep => Err(Error::invalid("task", "sweeps run through run_task")),
    }
}

/// Why a run failed, with the exit code it maps to.
#[derive(Debug)]
pub enum RunError {
    Validation(String),
    Numerical(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Validation(_) => 1,
            RunError::Numerical(_) => 2,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Validation(m) | RunError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            RunError::Numerical(e.to_string())
        } else {
            RunError::Validation(e.to_string())
        }
    }
}

fn io_err(e: std::io::Error) -> RunError {
    RunError::Validation(format!("writing outputs: {e}"))
}

fn finish(
    cfg: &RunConfig,
    hash: &str,
    started: f64,
    out: &Outputs,
    dir: &Path,
) -> std::result::Result<RunManifest, RunError> {
    let outputs = out.commit(dir).map_err(io_err)?;
    let manifest = RunManifest {
        task: cfg.task.as_str().into(),
        config_sha256: hash.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        started_unix: started,
        finished_unix: crate::output::unix_now(),
        outputs,
        metrics: out.metrics.clone(),
        notes: out.notes.clone(),
    };
    let bytes = json(&manifest)?;
    crate::output::write_atomic(&dir.join(MANIFEST), &bytes).map_err(io_err)?;
    Ok(manifest)
}

/// Runs the task, writes its outputs and manifest under `dir`.
pub fn run_task(cfg: &RunConfig, dir: &Path) -> std::result::Result<RunManifest, RunError> {
    let started = crate::output::unix_now();
    let hash = crate::output::sha256_hex(cfg.to_toml_string().as_bytes());
    let ctx = Context {
        comment: format!("config sha256={hash}"),
    };
    if cfg.task != Task::Sweep {
        let mut out = Outputs::default();
        run_into(cfg, &ctx, &mut out)?;
        return finish(cfg, &hash, started, &out, dir);
    }

    let sweep = cfg.sweep.as_ref().expect("validated");
    let children: Vec<RunConfig> = (0..sweep.values.len())
        .map(|i| cfg.sweep_child(i))
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| RunError::Validation(e.to_string()))?;
    // Every child must succeed before anything is written.
    let staged: Vec<(String, Outputs)> = children
        .par_iter()
        .map(|child| {
            let h = crate::output::sha256_hex(child.to_toml_string().as_bytes());
            let c = Context {
                comment: format!("config sha256={h}"),
            };
            let mut o = Outputs::default();
            run_into(child, &c, &mut o)?;
            Ok((h, o))
        })
        .collect::<std::result::Result<_, RunError>>()?;

    let mut names: Vec<String> = staged
        .iter()
        .flat_map(|(_, o)| o.metrics.keys().cloned())
        .collect();
    names.sort();
    names.dedup();
    let mut header = vec!["child".to_string(), "value".to_string()];
    header.extend(names.iter().cloned());
    let summary = buffer(|b| {
        let refs: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut w = io::csv_writer(b, &ctx.comment, &refs)?;
        for (i, (_, o)) in staged.iter().enumerate() {
            let mut row = vec![i.to_string(), sweep.values[i].to_string()];
            row.extend(
                names
                    .iter()
                    .map(|n| o.metrics.get(n).map(|v| v.to_string()).unwrap_or_default()),
            );
            io::text_row(&mut w, &row)?;
        }
        io::finish(w)
    })?;
    for (i, ((h, o), child)) in staged.iter().zip(&children).enumerate() {
        finish(child, h, started, o, &dir.join(format!("child_{i:03}")))?;
    }
    let mut top = Outputs::default();
    top.add("sweep_summary.csv", summary);
    top.metric("children", children.len() as f64);
    finish(cfg, &hash, started, &top, dir)
}
