//! Scenario parameters and unit conversions.
//!
//! All dB/dBm/dBW conversions live here so the rest of the crate works in
//! linear watts exclusively.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Convert a dB value to a linear power ratio.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Convert dBm to watts.
pub fn dbm_to_watt(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Convert dBW to watts.
pub fn dbw_to_watt(dbw: f64) -> f64 {
    10f64.powf(dbw / 10.0)
}

/// All physical and algorithmic parameters of one scenario.
///
/// Defaults reproduce the reference simulation setup: a 4-antenna BS at the
/// origin, a 16-element RIS at (40 m, 30 m), two users around (80 m, 0 m),
/// and a 15 dBW total power budget split equally between BS and RIS.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Number of users K.
    pub k: usize,
    /// BS antenna count N_T.
    pub n_t: usize,
    /// RIS element count L.
    pub l: usize,
    /// BS position in meters.
    pub bs_pos: [f64; 2],
    /// RIS position in meters.
    pub ris_pos: [f64; 2],
    /// Center of the user distribution in meters.
    pub user_center: [f64; 2],
    /// Radius of the user disk in meters.
    pub user_radius: f64,
    /// Reference path loss at d0, in dB (negative).
    pub l0_db: f64,
    /// Reference distance in meters.
    pub d0: f64,
    /// Per-user BS→user path-loss exponents; users beyond the list reuse the
    /// last entry.
    pub alpha_bu: Vec<f64>,
    /// BS→RIS path-loss exponent.
    pub alpha_br: f64,
    /// RIS→user path-loss exponent.
    pub alpha_ru: f64,
    /// Dynamic-noise power of the active RIS, watts.
    pub sigma_z2: f64,
    /// Receiver noise power, watts.
    pub sigma_k2: f64,
    /// BS transmit power budget, watts.
    pub p_bs_max: f64,
    /// Active-RIS reflect power budget, watts.
    pub p_a_max: f64,
    /// Per-user minimum rate, bps/Hz.
    pub r_min: f64,
    /// Outer (alternation) convergence tolerance on the sum-rate.
    pub eps_outer: f64,
    /// Inner (subproblem iteration) convergence tolerance.
    pub eps_inner: f64,
    /// Outer iteration cap.
    pub max_outer: usize,
    /// Inner iteration cap for SCA and the RIS update.
    pub max_inner: usize,
    /// RNG seed.
    pub seed: u64,
    /// Conic solver tolerance.
    pub solver_tol: f64,
    /// Use the conservative spectral-norm surrogate for the RIS power
    /// constraint in the beamforming step instead of the exact quadratic.
    pub surrogate_ris_power: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let total = dbw_to_watt(15.0);
        Self {
            k: 2,
            n_t: 4,
            l: 16,
            bs_pos: [0.0, 0.0],
            ris_pos: [40.0, 30.0],
            user_center: [80.0, 0.0],
            user_radius: 5.0,
            l0_db: -30.0,
            d0: 1.0,
            alpha_bu: vec![2.0, 3.0],
            alpha_br: 3.0,
            alpha_ru: 3.5,
            sigma_z2: dbm_to_watt(-80.0),
            sigma_k2: dbm_to_watt(-80.0),
            p_bs_max: total / 2.0,
            p_a_max: total / 2.0,
            r_min: 0.1,
            eps_outer: 1e-5,
            eps_inner: 1e-6,
            max_outer: 50,
            max_inner: 30,
            seed: 1,
            solver_tol: 1e-6,
            surrogate_ris_power: false,
        }
    }
}

impl ScenarioConfig {
    /// Path-loss exponent of the BS→user link for user `k` (0-based).
    pub fn alpha_bu_for(&self, k: usize) -> f64 {
        let last = *self.alpha_bu.last().expect("validated non-empty");
        self.alpha_bu.get(k).copied().unwrap_or(last)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 || self.n_t < 1 || self.l < 1 {
            return Err(Error::InvalidConfig(
                "K, N_T, and L must all be at least 1".into(),
            ));
        }
        if self.alpha_bu.is_empty() {
            return Err(Error::InvalidConfig("alpha_bu must be non-empty".into()));
        }
        let powers = [
            ("sigma_z2", self.sigma_z2),
            ("sigma_k2", self.sigma_k2),
            ("p_bs_max", self.p_bs_max),
            ("p_a_max", self.p_a_max),
            ("eps_outer", self.eps_outer),
            ("eps_inner", self.eps_inner),
            ("solver_tol", self.solver_tol),
            ("d0", self.d0),
        ];
        for (name, v) in powers {
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be strictly positive (got {v})"
                )));
            }
        }
        if self.user_radius < 0.0 {
            return Err(Error::InvalidConfig("user_radius must be >= 0".into()));
        }
        if self.r_min < 0.0 {
            return Err(Error::InvalidConfig("r_min must be >= 0".into()));
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::InvalidConfig(
                "iteration caps must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Load a scenario from a TOML file. Missing keys take defaults.
    pub fn from_toml_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self =
            toml::from_str(&text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
