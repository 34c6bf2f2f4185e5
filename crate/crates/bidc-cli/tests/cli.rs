use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use bidc_cli::config::{apply_env, ConfigError};
use bidc_cli::{parse_config, RunConfig, RunManifest, Task};
use bidc_core::io::read_csv;
use tempfile::TempDir;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

fn run(config: &str, env: &[(&str, &str)]) -> (TempDir, i32) {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), config);
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bidc"));
    cmd.arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .arg("--workers")
        .arg("2")
        .arg("--log-level")
        .arg("error");
    for (k, v) in env {
        cmd.env(k, v);
    }
    let status = cmd.status().unwrap();
    (dir, status.code().unwrap())
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let (header, rows) = read_csv(fs::File::open(path).unwrap()).unwrap();
    let i = header.iter().position(|h| h == name).unwrap();
    rows.iter().map(|r| r[i].parse().unwrap()).collect()
}

#[test]
fn spectrum_defaults_are_the_reference_point() {
    let cfg = RunConfig::from_toml_str("task = \"spectrum\"").unwrap();
    assert_eq!(cfg.task, Task::Spectrum);
    let p = cfg.params();
    assert_eq!(p.n_sites, 148);
    assert_eq!(p.interaction, 6.0);
    assert_eq!((p.g_12, p.g_34), (0.1, 0.1));
    assert_eq!((p.site_1, p.site_2), (0, 8));
    assert!((p.omega[0] + 11f64.sqrt()).abs() < 1e-12);
}

#[test]
fn range_errors_name_the_key() {
    let err =
        RunConfig::from_toml_str("task = \"rates\"\n[model]\ninteraction = -1.0\n").unwrap_err();
    assert!(err.to_string().contains("interaction"), "{err}");
    let (_dir, code) = run("task = \"rates\"\n[model]\ninteraction = -1.0\n", &[]);
    assert_eq!(code, 1);
}

#[test]
fn unknown_and_missing_keys_are_errors() {
    let err = RunConfig::from_toml_str("task = \"rates\"\n[model]\ng12 = 0.1\n").unwrap_err();
    assert!(err.to_string().contains("g12"), "{err}");
    let err = RunConfig::from_toml_str("[model]\ng_12 = 0.1\n").unwrap_err();
    assert!(err.to_string().contains("task"), "{err}");
}

#[test]
fn config_round_trips() {
    let text = r#"
task = "transfer"
convention = "stark_compensated"
[model]
n_sites = 80
g_12 = 0.12
omega = -3.3
[transfer]
backends = ["full", "effective", "lindblad"]
duration = 5000.0
g_12 = [[0.0, 0.05], [5000.0, 0.2]]
full_n_sites = 60
[sweep]
task = "rates"
keys = ["model.g_12"]
values = [0.1, 0.2]
"#;
    let a = RunConfig::from_toml_str(text).unwrap();
    let b = RunConfig::from_toml_str(&a.to_toml_string()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn env_overrides_any_key() {
    let dir = TempDir::new().unwrap();
    let path = write_config(dir.path(), "task = \"rates\"\n");
    let vars = vec![
        ("BIDC_MODEL__G_12".to_string(), "0.15".to_string()),
        ("BIDC_TASK".to_string(), "bidc".to_string()),
        ("OTHER".to_string(), "1".to_string()),
    ];
    let cfg = parse_config(&path, vars).unwrap();
    assert_eq!(cfg.model.g_12, 0.15);
    assert_eq!(cfg.task, Task::Bidc);

    let mut t = toml::Table::new();
    let bad = apply_env(&mut t, vec![("BIDC_".to_string(), "1".to_string())]);
    assert!(matches!(bad, Err(ConfigError::Invalid { .. })));
}

#[test]
fn rates_manifest_matches_json() {
    let (dir, code) = run("task = \"rates\"\n", &[("BIDC_MODEL__G_34", "0.2")]);
    assert_eq!(code, 0);
    let out = dir.path().join("out");
    let m = manifest(&out);
    let rates: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("rates.json")).unwrap()).unwrap();
    for key in ["gamma_1", "gamma_2", "gamma_c", "k0", "v_g", "f_k0"] {
        assert_eq!(m.metrics[key], rates[key].as_f64().unwrap(), "{key}");
    }
    assert_eq!(rates["g_34"].as_f64().unwrap(), 0.2);
    assert_eq!(m.config_sha256.len(), 64);
    assert!(m.finished_unix >= m.started_unix);
}

#[test]
fn sweep_writes_children_and_summary() {
    let config = r#"
task = "sweep"
[sweep]
task = "rates"
keys = ["model.g_12", "model.g_34"]
values = [0.05, 0.1, 0.15]
"#;
    let (dir, code) = run(config, &[]);
    assert_eq!(code, 0);
    let out = dir.path().join("out");
    let gammas = column(&out.join("sweep_summary.csv"), "gamma_1");
    assert_eq!(gammas.len(), 3);
    for (i, g) in gammas.iter().enumerate() {
        let child = manifest(&out.join(format!("child_{i:03}")));
        assert_eq!(child.task, "rates");
        assert_eq!(child.metrics["gamma_1"], *g);
    }
    // γ₁ ∝ g⁴.
    assert!((gammas[2] / gammas[0] - 81.0).abs() < 1e-9);
    assert_eq!(manifest(&out).metrics["children"], 3.0);
}

#[test]
fn sweep_over_ring_size_keeps_integers() {
    let cfg = RunConfig::from_toml_str(
        "task = \"sweep\"\n[sweep]\ntask = \"rates\"\nkeys = [\"model.n_sites\"]\nvalues = [60.0, 80.0]\n",
    )
    .unwrap();
    assert_eq!(cfg.sweep_child(1).unwrap().model.n_sites, 80);
}

#[test]
fn prepare_outputs_are_honest_and_deterministic() {
    let config = "task = \"prepare\"\n[prepare]\nsamples = 300\n";
    let (a, code) = run(config, &[]);
    assert_eq!(code, 0);
    let (b, _) = run(config, &[]);
    let (oa, ob) = (a.path().join("out"), b.path().join("out"));
    for f in ["preparation.csv", "trajectory.csv", "preparation.json"] {
        assert_eq!(
            fs::read(oa.join(f)).unwrap(),
            fs::read(ob.join(f)).unwrap(),
            "{f}"
        );
    }
    let m = manifest(&oa);
    let f = column(&oa.join("preparation.csv"), "F");
    assert_eq!(m.metrics["long_time_fidelity"], *f.last().unwrap());
    assert_eq!(
        m.metrics["peak_fidelity"],
        f.iter().copied().fold(0.0, f64::max)
    );
    let traj = column(&oa.join("trajectory.csv"), "F");
    assert_eq!(traj, f);
    let first = fs::read_to_string(oa.join("preparation.csv")).unwrap();
    assert!(first.starts_with(&format!("# config sha256={}", m.config_sha256)));
}

#[test]
fn transfer_summary_matches_csv() {
    let config = r#"
task = "transfer"
[model]
n_sites = 40
[transfer]
backends = ["effective", "lindblad"]
duration = 2000.0
samples = 40
"#;
    let (dir, code) = run(config, &[]);
    assert_eq!(code, 0);
    let out = dir.path().join("out");
    let m = manifest(&out);
    for name in ["effective", "lindblad"] {
        let cpe2 = column(&out.join(format!("transfer_{name}.csv")), "cpe2");
        assert_eq!(
            m.metrics[&format!("{name}_max_transfer")],
            cpe2.iter().copied().fold(0.0, f64::max)
        );
    }
    let lind = fs::read_to_string(out.join("transfer_lindblad.csv")).unwrap();
    assert!(
        lind.lines().nth(2).unwrap().contains("NaN"),
        "θ is absent for lindblad"
    );
}

#[test]
fn numerical_failure_leaves_no_outputs() {
    // Uncoupled atoms: no bound state to find.
    let config =
        "task = \"bidc\"\n[model]\nn_sites = 20\ng_12 = 0.0\ng_34 = 0.0\n[spectrum]\nfull = true\n";
    let (dir, code) = run(config, &[]);
    assert_eq!(code, 2);
    let out = dir.path().join("out");
    assert!(!out.exists() || fs::read_dir(&out).unwrap().next().is_none());
}

#[test]
fn default_bidc_sits_at_the_pair_energy() {
    let config = "task = \"bidc\"\n";
    let (dir, code) = run(config, &[]);
    assert_eq!(code, 0);
    let out = dir.path().join("out");
    let m = manifest(&out);
    assert!(m.metrics["energy_offset"] <= 1e-3);
    assert!(m.metrics["partner_localization"] < 0.9);
    let e = column(&out.join("spectrum.csv"), "E");
    assert_eq!(
        e[m.metrics["bidc_index"] as usize],
        m.metrics["bidc_energy"]
    );
    let p_two = column(&out.join("bidc_profile.csv"), "P_two");
    let p_one = column(&out.join("bidc_profile.csv"), "P_one");
    let photons: f64 = p_two.iter().chain(&p_one).sum();
    assert!((m.metrics["p_e"] + photons - 2.0).abs() < 1e-10);
}
