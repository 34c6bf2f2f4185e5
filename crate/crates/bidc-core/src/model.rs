//! Physical parameters and closed-form band structure of the interacting
//! coupled-resonator waveguide.
//!
//! Energies are in units of the hopping `J` (default 1) and times in `1/J`.
//! The ring is periodic, so wavevectors live on the grid `2πm/N` folded into
//! `(−π, π]`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::effective;
use crate::error::{Error, Result};

/// How the four atomic frequencies are chosen from a reference `Ω`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OmegaConvention {
    /// `Ω_i = Ω` for every atom. The dressed pair resonance then sits a
    /// Stark shift below `2Ω`.
    #[default]
    Bare,
    /// `Ω_i = Ω + g_i²/√((Ω−ω_c)² − 4J²)`, which pins the dressed pair
    /// resonance of both pairs at `2Ω`.
    StarkCompensated,
}

/// Everything physical about one run. Atoms 1 and 2 sit on `site_1`,
/// atoms 3 and 4 on `site_2`; `g_12` couples the first pair and `g_34` the
/// second.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub n_sites: usize,
    pub hopping: f64,
    pub interaction: f64,
    pub cavity_freq: f64,
    pub site_1: usize,
    pub site_2: usize,
    pub omega: [f64; 4],
    pub g_12: f64,
    pub g_34: f64,
}

/// Flat `key = value` form of [`ModelParams`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsRecord {
    pub n_sites: usize,
    pub hopping: f64,
    pub interaction: f64,
    pub cavity_freq: f64,
    pub site_1: usize,
    pub site_2: usize,
    pub omega_1: f64,
    pub omega_2: f64,
    pub omega_3: f64,
    pub omega_4: f64,
    pub g_12: f64,
    pub g_34: f64,
}

impl From<&ModelParams> for ParamsRecord {
    fn from(p: &ModelParams) -> Self {
        ParamsRecord {
            n_sites: p.n_sites,
            hopping: p.hopping,
            interaction: p.interaction,
            cavity_freq: p.cavity_freq,
            site_1: p.site_1,
            site_2: p.site_2,
            omega_1: p.omega[0],
            omega_2: p.omega[1],
            omega_3: p.omega[2],
            omega_4: p.omega[3],
            g_12: p.g_12,
            g_34: p.g_34,
        }
    }
}

impl TryFrom<ParamsRecord> for ModelParams {
    type Error = Error;

    fn try_from(r: ParamsRecord) -> Result<Self> {
        let p = ModelParams {
            n_sites: r.n_sites,
            hopping: r.hopping,
            interaction: r.interaction,
            cavity_freq: r.cavity_freq,
            site_1: r.site_1,
            site_2: r.site_2,
            omega: [r.omega_1, r.omega_2, r.omega_3, r.omega_4],
            g_12: r.g_12,
            g_34: r.g_34,
        };
        p.validate()?;
        Ok(p)
    }
}

impl ModelParams {
    /// Ring of `n_sites` with pairs at 0 and 8, `U = 6J`, `g = 0.1J` and
    /// `2Ω` at the centre of the doublon band, `Ω = 𝓔_{π/2}/2`.
    pub fn reference(n_sites: usize) -> Self {
        let mut p = ModelParams {
            n_sites,
            hopping: 1.0,
            interaction: 6.0,
            cavity_freq: 0.0,
            site_1: 0,
            site_2: 8,
            omega: [0.0; 4],
            g_12: 0.1,
            g_34: 0.1,
        };
        let omega = p.band_centre_omega();
        p.omega = [omega; 4];
        p
    }

    /// Same lattice, new couplings, with frequencies chosen from the
    /// reference `omega` by `convention`.
    pub fn with_couplings(
        &self,
        g_12: f64,
        g_34: f64,
        omega: f64,
        convention: OmegaConvention,
    ) -> Self {
        let mut p = self.clone();
        p.g_12 = g_12;
        p.g_34 = g_34;
        p.omega = match convention {
            OmegaConvention::Bare => [omega; 4],
            OmegaConvention::StarkCompensated => {
                let s1 = effective::stark_shift(g_12, omega, self);
                let s3 = effective::stark_shift(g_34, omega, self);
                [omega + s1, omega + s1, omega + s3, omega + s3]
            }
        };
        p
    }

    /// `Ω = 𝓔_{π/2}/2`, the frequency whose pair energy sits mid-band.
    pub fn band_centre_omega(&self) -> f64 {
        doublon_dispersion(PI / 2.0, self) / 2.0
    }

    pub fn atom_sites(&self) -> [usize; 4] {
        [self.site_1, self.site_1, self.site_2, self.site_2]
    }

    pub fn couplings(&self) -> [f64; 4] {
        [self.g_12, self.g_12, self.g_34, self.g_34]
    }

    /// `ΔN = N_2 − N_1`.
    pub fn delta_n(&self) -> usize {
        self.site_2 - self.site_1
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("hopping", self.hopping),
            ("interaction", self.interaction),
            ("cavity_freq", self.cavity_freq),
            ("omega_1", self.omega[0]),
            ("omega_2", self.omega[1]),
            ("omega_3", self.omega[2]),
            ("omega_4", self.omega[3]),
            ("g_12", self.g_12),
            ("g_34", self.g_34),
        ];
        for (key, v) in finite {
            if !v.is_finite() {
                return Err(Error::invalid(key, "must be finite"));
            }
        }
        if self.n_sites < 2 {
            return Err(Error::invalid("n_sites", "need at least 2 sites"));
        }
        if self.hopping <= 0.0 {
            return Err(Error::invalid("hopping", "must be > 0"));
        }
        if self.interaction < 0.0 {
            return Err(Error::invalid("interaction", "must be >= 0"));
        }
        if self.g_12 < 0.0 {
            return Err(Error::invalid("g_12", "must be >= 0"));
        }
        if self.g_34 < 0.0 {
            return Err(Error::invalid("g_34", "must be >= 0"));
        }
        if self.site_2 >= self.n_sites {
            return Err(Error::invalid("site_2", "must be < n_sites"));
        }
        if self.site_1 >= self.site_2 {
            return Err(Error::invalid("site_1", "must be < site_2"));
        }
        Ok(())
    }

    /// Violations of `|δ_i| ≪ g_i ≪ J ≪ |Ω|` and `ω_c − 2J − Ω ≫ g_i`.
    /// "Much less" is read as a factor of 5.
    pub fn regime_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let j = self.hopping;
        let omega = self.pair_resonance(0);
        let gap = self.cavity_freq - 2.0 * j - omega;
        for (i, g) in self.couplings().into_iter().enumerate() {
            if g > 0.0 && 5.0 * g > j {
                out.push(format!("g_{} = {g} is not << J", i + 1));
            }
            if 5.0 * g > gap {
                out.push(format!("g_{} = {g} is not << ω_c − 2J − Ω = {gap}", i + 1));
            }
            let detuning = (self.omega[i] - omega).abs();
            if g > 0.0 && detuning > g {
                out.push(format!("|δ_{}| = {detuning} exceeds g", i + 1));
            }
        }
        if 5.0 * j > omega.abs() {
            out.push(format!("J is not << |Ω| = {}", omega.abs()));
        }
        out
    }

    /// Dressed single-atom resonance `Ω` of pair `pair` (0 or 1): the fixed
    /// point of `Ω = Ω̄ − g²/√((Ω−ω_c)² − 4J²)` with `Ω̄` the pair's mean bare
    /// frequency. This is where the pair energy `2Ω` sits once virtual
    /// single-photon exchange is accounted for.
    pub fn pair_resonance(&self, pair: usize) -> f64 {
        let (bare, g) = match pair {
            0 => ((self.omega[0] + self.omega[1]) / 2.0, self.g_12),
            _ => ((self.omega[2] + self.omega[3]) / 2.0, self.g_34),
        };
        let mut omega = bare;
        for _ in 0..100 {
            let next = bare - effective::stark_shift(g, omega, self);
            if !next.is_finite() {
                return bare;
            }
            if (next - omega).abs() < 1e-15 {
                return next;
            }
            omega = next;
        }
        omega
    }

    /// Serializes to the flat `key = value` config form.
    pub fn to_config_string(&self) -> String {
        toml::to_string(&ParamsRecord::from(self)).expect("flat record always serializes")
    }

    pub fn from_config_str(s: &str) -> Result<Self> {
        let record: ParamsRecord = toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        ModelParams::try_from(record)
    }
}

/// Single-photon band `ω_k = ω_c − 2J cos k`.
pub fn single_photon_dispersion(k: f64, p: &ModelParams) -> f64 {
    p.cavity_freq - 2.0 * p.hopping * k.cos()
}

/// Doublon band `𝓔_K = 2ω_c − √(U² + 16J² cos²(K/2))`.
pub fn doublon_dispersion(k: f64, p: &ModelParams) -> f64 {
    let c = (k / 2.0).cos();
    2.0 * p.cavity_freq - (p.interaction.powi(2) + 16.0 * p.hopping.powi(2) * c * c).sqrt()
}

/// `(min, max)` of the doublon band.
pub fn doublon_band(p: &ModelParams) -> (f64, f64) {
    let lo = 2.0 * p.cavity_freq - (p.interaction.powi(2) + 16.0 * p.hopping.powi(2)).sqrt();
    (lo, 2.0 * p.cavity_freq - p.interaction)
}

/// `(min, max)` of the two-photon scattering band.
pub fn scattering_band(p: &ModelParams) -> (f64, f64) {
    (
        2.0 * p.cavity_freq - 4.0 * p.hopping,
        2.0 * p.cavity_freq + 4.0 * p.hopping,
    )
}

/// `U_K = U / (4J cos(K/2))`; infinite at `K = π`.
pub fn interaction_ratio(k: f64, p: &ModelParams) -> f64 {
    let c = (k / 2.0).cos().abs();
    if c == 0.0 {
        f64::INFINITY
    } else {
        p.interaction / (4.0 * p.hopping * c)
    }
}

/// `λ_K⁻¹ = asinh(U_K)`.
pub fn inverse_localization(k: f64, p: &ModelParams) -> Result<f64> {
    if p.interaction == 0.0 {
        return Err(Error::NotLocalized);
    }
    Ok(interaction_ratio(k, p).asinh())
}

/// Minimal-image signed separation on a ring of `n` sites, in `(−n/2, n/2]`.
pub fn min_image(r: i64, n: usize) -> i64 {
    let n = n as i64;
    let mut r = r.rem_euclid(n);
    if 2 * r > n {
        r -= n;
    }
    r
}

/// `ψ_K(r) = √tanh(λ⁻¹) e^{−|r|λ⁻¹}`. `r` is taken as already reduced to
/// the minimal image.
pub fn doublon_wavefunction(k: f64, r: i64, p: &ModelParams) -> Result<f64> {
    let x = inverse_localization(k, p)?;
    if x.is_infinite() {
        return Ok(if r == 0 { 1.0 } else { 0.0 });
    }
    Ok(x.tanh().sqrt() * (-(r.abs() as f64) * x).exp())
}

/// `v_g = d𝓔_K/dK = 4J² sin K / √(U² + 16J² cos²(K/2))`.
pub fn group_velocity(k: f64, p: &ModelParams) -> f64 {
    let c = (k / 2.0).cos();
    4.0 * p.hopping.powi(2) * k.sin()
        / (p.interaction.powi(2) + 16.0 * p.hopping.powi(2) * c * c).sqrt()
}

/// Positive `K_0` with `𝓔_{K_0} = 2Ω`.
pub fn resonant_wavevector(omega: f64, p: &ModelParams) -> Result<f64> {
    let (lo, hi) = doublon_band(p);
    let two = 2.0 * omega;
    if !(lo..=hi).contains(&two) {
        return Err(Error::OutOfBand {
            two_omega: two,
            lo,
            hi,
        });
    }
    let d = 2.0 * p.cavity_freq - two;
    let c2 = ((d * d - p.interaction.powi(2)) / (16.0 * p.hopping.powi(2))).clamp(0.0, 1.0);
    Ok(2.0 * c2.sqrt().acos())
}

/// `K_m = 2πm/N` for `m = 0..N`, folded into `(−π, π]`.
pub fn k_grid(n: usize) -> Vec<f64> {
    (0..n)
        .map(|m| {
            if 2 * m > n {
                2.0 * PI * (m as f64 - n as f64) / n as f64
            } else {
                2.0 * PI * m as f64 / n as f64
            }
        })
        .collect()
}

/// One row of the doublon mode table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DoublonMode {
    pub k: f64,
    pub energy: f64,
    pub inverse_localization: f64,
    pub interaction_ratio: f64,
    pub group_velocity: f64,
    pub f0: f64,
    pub f_dn: f64,
    pub detuning: f64,
}

/// Per-`K` doublon data on the ring's momentum grid, with couplings and
/// detunings evaluated for the reference frequency `omega`.
#[derive(Clone, Debug)]
pub struct DoublonModeTable {
    pub omega: f64,
    pub modes: Vec<DoublonMode>,
}

impl DoublonModeTable {
    pub fn build(p: &ModelParams, omega: f64) -> Result<Self> {
        let dn = p.delta_n() as i64;
        let modes = k_grid(p.n_sites)
            .into_iter()
            .map(|k| {
                let energy = doublon_dispersion(k, p);
                Ok(DoublonMode {
                    k,
                    energy,
                    inverse_localization: inverse_localization(k, p)?,
                    interaction_ratio: interaction_ratio(k, p),
                    group_velocity: group_velocity(k, p),
                    f0: effective::pair_doublon_coupling(k, 0, omega, p)?,
                    f_dn: effective::pair_doublon_coupling(k, dn, omega, p)?,
                    detuning: energy - 2.0 * omega,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DoublonModeTable { omega, modes })
    }
}
