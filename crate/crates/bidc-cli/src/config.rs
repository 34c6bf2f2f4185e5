//! Run configuration: one TOML file per run, defaults at the reference
//! point, environment overrides under `BIDC_`.

use std::path::Path;

use bidc_core::effective::EffectiveOptions;
use bidc_core::open_system::GeneratorForm;
use bidc_core::protocols::{Backend, PhaseFrame, ProtocolSchedule};
use bidc_core::spectral::SpectralThresholds;
use bidc_core::{Error, ModelParams, OmegaConvention};
use serde::{Deserialize, Serialize};

/// Prefix of environment overrides; `__` separates path segments, so
/// `BIDC_MODEL__G_12=0.15` sets `model.g_12`.
pub const ENV_PREFIX: &str = "BIDC_";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Spectrum,
    Bidc,
    EffectiveCompare,
    Prepare,
    Transfer,
    Rates,
    Sweep,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Spectrum => "spectrum",
            Task::Bidc => "bidc",
            Task::EffectiveCompare => "effective-compare",
            Task::Prepare => "prepare",
            Task::Transfer => "transfer",
            Task::Rates => "rates",
            Task::Sweep => "sweep",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    #[serde(default)]
    pub convention: OmegaConvention,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub spectrum: SpectrumSection,
    #[serde(default)]
    pub effective: EffectiveSection,
    #[serde(default)]
    pub prepare: PrepareSection,
    #[serde(default)]
    pub transfer: TransferSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

/// Physical parameters. Atomic frequencies follow from the reference
/// `omega` and the convention unless all four are given explicitly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub n_sites: usize,
    pub hopping: f64,
    pub interaction: f64,
    pub cavity_freq: f64,
    pub site_1: usize,
    pub site_2: usize,
    pub g_12: f64,
    pub g_34: f64,
    /// Reference `Ω`; defaults to `𝓔_{π/2}/2`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_3: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_4: Option<f64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let p = ModelParams::reference(148);
        ModelSection {
            n_sites: p.n_sites,
            hopping: p.hopping,
            interaction: p.interaction,
            cavity_freq: p.cavity_freq,
            site_1: p.site_1,
            site_2: p.site_2,
            g_12: p.g_12,
            g_34: p.g_34,
            omega: None,
            omega_1: None,
            omega_2: None,
            omega_3: None,
            omega_4: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumSection {
    /// Eigenvalues within `2Ω ± half_width`.
    pub half_width: f64,
    /// At most this many states nearest `2Ω`.
    pub count: usize,
    /// Whole spectrum instead of a window (small rings only).
    pub full: bool,
    pub thresholds: SpectralThresholds,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        SpectrumSection {
            half_width: 0.02,
            count: 40,
            full: false,
            thresholds: SpectralThresholds::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EffectiveSection {
    pub options: EffectiveOptions,
    /// `G(n)` is tabulated for `|n| ≤ greens_range`.
    pub greens_range: i64,
}

impl Default for EffectiveSection {
    fn default() -> Self {
        EffectiveSection {
            options: EffectiveOptions::default(),
            greens_range: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrepareSection {
    /// Target `α|eegg⟩ + β|ggee⟩`, real amplitudes.
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
    pub t0: f64,
    pub t_final: f64,
    pub samples: usize,
    pub reference_g: f64,
    pub form: GeneratorForm,
}

impl Default for PrepareSection {
    fn default() -> Self {
        let s = 0.5f64.sqrt();
        PrepareSection {
            alpha: s,
            beta: -s,
            eta: 3e-5,
            t0: 7.3e4,
            t_final: 3e5,
            samples: 600,
            reference_g: 0.1,
            form: GeneratorForm::FourTerm,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferSection {
    pub backends: Vec<Backend>,
    pub duration: f64,
    pub samples: usize,
    /// `[t, g]` knots; the reference linear ramp when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_12: Option<Vec<[f64; 2]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_34: Option<Vec<[f64; 2]>>,
    pub c_e: f64,
    pub phase_frame: PhaseFrame,
    /// Ring size for the full backend only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub full_n_sites: Option<usize>,
    pub stark_tracking: bool,
    pub full_overlap: bool,
    pub dt_control: f64,
    pub lindblad_dt: f64,
    pub min_transfer: f64,
}

impl Default for TransferSection {
    fn default() -> Self {
        TransferSection {
            backends: vec![Backend::Effective],
            duration: 5e5,
            samples: 200,
            g_12: None,
            g_34: None,
            c_e: 1.0,
            phase_frame: PhaseFrame::Lab,
            full_n_sites: None,
            stark_tracking: true,
            full_overlap: false,
            dt_control: 1.0,
            lindblad_dt: 50.0,
            min_transfer: 0.5,
        }
    }
}

/// A grid over one value applied to every key in `keys`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub task: Task,
    /// Dotted config paths, e.g. `model.g_12`.
    pub keys: Vec<String>,
    pub values: Vec<f64>,
}

/// Config errors, each naming the offending key.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Syntax(String),
    #[error("invalid `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        reason: reason.into(),
    }
}

impl From<Error> for ConfigError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParam { key, reason } => ConfigError::Invalid { key, reason },
            other => ConfigError::Syntax(other.to_string()),
        }
    }
}

/// Sets `path` (dotted) in a TOML table, creating tables on the way.
pub fn set_path(root: &mut toml::Table, path: &str, value: toml::Value) -> Result<(), ConfigError> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts
        .pop()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| invalid(path, "empty key"))?;
    let mut t = root;
    for seg in parts {
        let entry = t
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| invalid(path, format!("`{seg}` is not a table")))?;
    }
    t.insert(last.to_string(), value);
    Ok(())
}

fn get_path<'a>(root: &'a toml::Table, path: &str) -> Option<&'a toml::Value> {
    let mut parts = path.split('.');
    let mut v = root.get(parts.next()?)?;
    for seg in parts {
        v = v.as_table()?.get(seg)?;
    }
    Some(v)
}

/// A raw override string as a TOML value: numbers, booleans and arrays as
/// such, anything else as a string.
pub fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies `BIDC_A__B=value` pairs as `a.b = value`.
pub fn apply_env<I>(table: &mut toml::Table, vars: I) -> Result<(), ConfigError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut vars: Vec<(String, String)> = vars
        .into_iter()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX))
        .collect();
    vars.sort();
    for (k, v) in vars {
        let path = k[ENV_PREFIX.len()..].to_lowercase().replace("__", ".");
        set_path(table, &path, parse_value(&v))?;
    }
    Ok(())
}

fn syntax(e: toml::de::Error) -> ConfigError {
    ConfigError::Syntax(e.to_string())
}

impl RunConfig {
    pub fn from_table(table: toml::Table) -> Result<Self, ConfigError> {
        let cfg: RunConfig = table.try_into().map_err(syntax)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = toml::from_str(s).map_err(syntax)?;
        Self::from_table(table)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn to_table(&self) -> toml::Table {
        toml::Table::try_from(self).expect("config always serializes")
    }

    pub fn reference_omega(&self) -> f64 {
        self.model
            .omega
            .unwrap_or_else(|| self.bare_params().band_centre_omega())
    }

    fn bare_params(&self) -> ModelParams {
        let m = &self.model;
        ModelParams {
            n_sites: m.n_sites,
            hopping: m.hopping,
            interaction: m.interaction,
            cavity_freq: m.cavity_freq,
            site_1: m.site_1,
            site_2: m.site_2,
            omega: [0.0; 4],
            g_12: m.g_12,
            g_34: m.g_34,
        }
    }

    /// The model with frequencies resolved.
    pub fn params(&self) -> ModelParams {
        let m = &self.model;
        match (m.omega_1, m.omega_2, m.omega_3, m.omega_4) {
            (Some(a), Some(b), Some(c), Some(d)) => ModelParams {
                omega: [a, b, c, d],
                ..self.bare_params()
            },
            _ => self.bare_params().with_couplings(
                m.g_12,
                m.g_34,
                self.reference_omega(),
                self.convention,
            ),
        }
    }

    pub fn schedule(&self) -> ProtocolSchedule {
        let t = &self.transfer;
        let mut s = ProtocolSchedule::reference_ramp(t.duration, t.samples);
        let knots = |k: &Vec<[f64; 2]>| k.iter().map(|x| (x[0], x[1])).collect();
        if let Some(k) = &t.g_12 {
            s.g_12 = knots(k);
        }
        if let Some(k) = &t.g_34 {
            s.g_34 = knots(k);
        }
        s
    }

    /// Checks everything the task needs before any computation starts.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let m = &self.model;
        let explicit = [m.omega_1, m.omega_2, m.omega_3, m.omega_4];
        let given = explicit.iter().filter(|x| x.is_some()).count();
        if given != 0 && given != 4 {
            return Err(invalid(
                "model.omega_1",
                "give all four of omega_1..omega_4 or none",
            ));
        }
        if let Some(o) = m.omega {
            if !o.is_finite() {
                return Err(invalid("model.omega", "must be finite"));
            }
        }
        self.params()
            .validate()
            .map_err(|e| match ConfigError::from(e) {
                ConfigError::Invalid { key, reason } => ConfigError::Invalid {
                    key: format!("model.{key}"),
                    reason,
                },
                other => other,
            })?;
        match self.task {
            Task::Spectrum | Task::Bidc | Task::EffectiveCompare => {
                let s = &self.spectrum;
                if !(s.half_width > 0.0) {
                    return Err(invalid("spectrum.half_width", "must be > 0"));
                }
                if s.count == 0 {
                    return Err(invalid("spectrum.count", "must be >= 1"));
                }
                if self.effective.greens_range < 0 {
                    return Err(invalid("effective.greens_range", "must be >= 0"));
                }
            }
            Task::Prepare => {
                let p = &self.prepare;
                let norm = p.alpha * p.alpha + p.beta * p.beta;
                if (norm - 1.0).abs() > 1e-6 {
                    return Err(invalid(
                        "prepare.alpha",
                        format!("alpha² + beta² = {norm}, not 1"),
                    ));
                }
                for (key, v) in [("prepare.eta", p.eta), ("prepare.t0", p.t0)] {
                    if !(v >= 0.0) {
                        return Err(invalid(key, "must be >= 0"));
                    }
                }
                if !(p.t_final > 0.0) {
                    return Err(invalid("prepare.t_final", "must be > 0"));
                }
                if p.samples == 0 {
                    return Err(invalid("prepare.samples", "must be >= 1"));
                }
                if !(p.reference_g > 0.0) {
                    return Err(invalid("prepare.reference_g", "must be > 0"));
                }
            }
            Task::Transfer => {
                let t = &self.transfer;
                if t.backends.is_empty() {
                    return Err(invalid("transfer.backends", "name at least one backend"));
                }
                if !(t.c_e > 0.0 && t.c_e <= 1.0) {
                    return Err(invalid("transfer.c_e", "need 0 < c_e <= 1"));
                }
                if !(t.dt_control > 0.0) {
                    return Err(invalid("transfer.dt_control", "must be > 0"));
                }
                if !(t.lindblad_dt > 0.0) {
                    return Err(invalid("transfer.lindblad_dt", "must be > 0"));
                }
                if let Some(n) = t.full_n_sites {
                    if n <= m.site_2 {
                        return Err(invalid("transfer.full_n_sites", "must exceed model.site_2"));
                    }
                }
                self.schedule()
                    .validate()
                    .map_err(|e| match ConfigError::from(e) {
                        ConfigError::Invalid { key, reason } => ConfigError::Invalid {
                            key: format!("transfer.{key}"),
                            reason,
                        },
                        other => other,
                    })?;
            }
            Task::Rates => {}
            Task::Sweep => {
                let Some(s) = &self.sweep else {
                    return Err(invalid("sweep", "task = \"sweep\" needs a [sweep] table"));
                };
                if s.task == Task::Sweep {
                    return Err(invalid("sweep.task", "sweeps do not nest"));
                }
                if s.keys.is_empty() || s.values.is_empty() {
                    return Err(invalid("sweep.keys", "need at least one key and one value"));
                }
                for (i, _) in s.values.iter().enumerate() {
                    self.sweep_child(i)?;
                }
            }
        }
        Ok(())
    }

    /// The `i`-th child config of a sweep.
    pub fn sweep_child(&self, i: usize) -> Result<RunConfig, ConfigError> {
        let s = self
            .sweep
            .as_ref()
            .ok_or_else(|| invalid("sweep", "missing"))?;
        let mut table = self.to_table();
        table.remove("sweep");
        table.insert("task".into(), toml::Value::String(s.task.as_str().into()));
        let v = s.values[i];
        for key in &s.keys {
            // Integer-valued keys such as `model.n_sites` stay integers.
            let value = match get_path(&table, key) {
                Some(toml::Value::Integer(_)) if v.fract() == 0.0 => toml::Value::Integer(v as i64),
                _ => toml::Value::Float(v),
            };
            set_path(&mut table, key, value)?;
        }
        RunConfig::from_table(table).map_err(|e| match e {
            ConfigError::Syntax(msg) => invalid("sweep.keys", msg),
            other => other,
        })
    }
}

/// Reads the file, applies `vars` overrides and validates.
pub fn parse_config<I>(path: &Path, vars: I) -> Result<RunConfig, ConfigError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let mut table: toml::Table = toml::from_str(&text).map_err(syntax)?;
    apply_env(&mut table, vars)?;
    RunConfig::from_table(table)
}
