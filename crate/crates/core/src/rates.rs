//! Exact evaluation of the RSMA rate model: SINRs, rates, power usage,
//! objective, and feasibility of the full design problem.

use crate::channel::{equivalent_channel, ChannelSet};
use crate::config::ScenarioConfig;
use crate::{CVector, Error, Result};
use num_complex::Complex64;
use serde::Serialize;

/// Shared absolute tolerance for all feasibility checks (rates in bps/Hz,
/// powers in watts).
pub const FEAS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RisMode {
    Active,
    Passive,
}

/// Vectorized RIS precoder `psi_l = p_l e^{j theta_l}`.
#[derive(Debug, Clone)]
pub struct RisVector {
    pub psi: CVector,
    pub mode: RisMode,
}

impl RisVector {
    pub fn from_vec(psi: Vec<Complex64>, mode: RisMode) -> Self {
        Self {
            psi: CVector::from_vec(psi),
            mode,
        }
    }

    pub fn zeros(l: usize, mode: RisMode) -> Self {
        Self {
            psi: CVector::zeros(l),
            mode,
        }
    }

    /// Check the mode invariant: unit modulus per element in passive mode.
    pub fn validate(&self) -> Result<()> {
        if self.mode == RisMode::Passive {
            for (l, p) in self.psi.iter().enumerate() {
                if (p.norm() - 1.0).abs() > FEAS_TOL {
                    return Err(Error::Domain(format!(
                        "passive RIS element {l} has modulus {} (must be 1)",
                        p.norm()
                    )));
                }
            }
        }
        Ok(())
    }

    /// `sum_l |psi_l|^2`, the Frobenius norm of diag(psi).
    pub fn norm_sqr(&self) -> f64 {
        self.psi.iter().map(|p| p.norm_sqr()).sum()
    }
}

/// Beamforming vectors and common-rate allocation.
#[derive(Debug, Clone)]
pub struct TransmitDesign {
    /// Common beam `w_0`.
    pub w0: CVector,
    /// Private beams `w_1 .. w_K`.
    pub w: Vec<CVector>,
    /// Common-rate shares `r_c`, bps/Hz, nonnegative.
    pub r_c: Vec<f64>,
}

impl TransmitDesign {
    pub fn zeros(n_t: usize, k: usize) -> Self {
        Self {
            w0: CVector::zeros(n_t),
            w: vec![CVector::zeros(n_t); k],
            r_c: vec![0.0; k],
        }
    }

    /// Total BS transmit power `sum_{k=0..K} ||w_k||^2`.
    pub fn bs_power(&self) -> f64 {
        self.w0.norm_squared() + self.w.iter().map(|w| w.norm_squared()).sum::<f64>()
    }

    pub fn sum_rc(&self) -> f64 {
        self.r_c.iter().sum()
    }
}

/// Signed constraint residuals; positive means violated by that amount.
#[derive(Debug, Clone, Serialize)]
pub struct ConstraintResiduals {
    /// Per user: `sum_i r_c,i - R_c,k`.
    pub common_rate: Vec<f64>,
    /// Per user: `R_min - (r_c,k + R_p,k)`.
    pub qos: Vec<f64>,
    /// `sum ||w||^2 - P_bs_max`.
    pub bs_power: f64,
    /// `p_a_used - P_a_max` (active mode only; 0 for passive).
    pub ris_power: f64,
    /// Per user: `-r_c,k`.
    pub rc_nonneg: Vec<f64>,
}

impl ConstraintResiduals {
    pub fn max_violation(&self) -> f64 {
        self.common_rate
            .iter()
            .chain(self.qos.iter())
            .chain(self.rc_nonneg.iter())
            .chain([self.bs_power, self.ris_power].iter())
            .fold(f64::NEG_INFINITY, |a, &b| a.max(b))
    }
}

/// Full evaluation of one `(channels, psi, design)` triple.
#[derive(Debug, Clone, Serialize)]
pub struct RateReport {
    pub gamma_c: Vec<f64>,
    pub gamma_p: Vec<f64>,
    pub r_c_rate: Vec<f64>,
    pub r_p_rate: Vec<f64>,
    pub sum_rate: f64,
    pub p_bs_used: f64,
    pub p_a_used: f64,
    pub feasible: bool,
    pub residuals: ConstraintResiduals,
}

impl RateReport {
    /// Flat CSV header for `flat_record`, for `K` users.
    pub fn csv_header(k: usize) -> Vec<String> {
        let mut h = Vec::new();
        for name in ["gamma_c", "gamma_p", "r_c_rate", "r_p_rate"] {
            for i in 0..k {
                h.push(format!("{name}_{}", i + 1));
            }
        }
        h.extend(
            ["sum_rate", "p_bs_used", "p_a_used", "feasible", "max_violation"]
                .map(String::from),
        );
        h
    }

    /// One flat CSV row matching `csv_header`.
    pub fn flat_record(&self) -> Vec<String> {
        let mut row = Vec::new();
        for v in [&self.gamma_c, &self.gamma_p, &self.r_c_rate, &self.r_p_rate] {
            row.extend(v.iter().map(|x| format!("{x:.12e}")));
        }
        row.push(format!("{:.12e}", self.sum_rate));
        row.push(format!("{:.12e}", self.p_bs_used));
        row.push(format!("{:.12e}", self.p_a_used));
        row.push(format!("{}", self.feasible));
        row.push(format!("{:.12e}", self.residuals.max_violation()));
        row
    }
}

/// Dynamic-noise power seen by user `k`: `||f_k^H diag(psi)||^2 sigma_z^2`.
pub fn dynamic_noise(ch: &ChannelSet, psi: &RisVector, k: usize, sigma_z2: f64) -> f64 {
    ch.ris_user[k]
        .iter()
        .zip(psi.psi.iter())
        .map(|(f, p)| f.norm_sqr() * p.norm_sqr())
        .sum::<f64>()
        * sigma_z2
}

fn check_dims(ch: &ChannelSet, psi: &RisVector, design: &TransmitDesign) -> Result<()> {
    let (k, n_t, l) = (ch.num_users(), ch.n_t(), ch.num_elements());
    if psi.psi.len() != l {
        return Err(Error::DimensionMismatch(format!(
            "psi length {} vs L = {l}",
            psi.psi.len()
        )));
    }
    if design.w.len() != k || design.r_c.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "design has {} private beams / {} rate shares for K = {k}",
            design.w.len(),
            design.r_c.len()
        )));
    }
    if design.w0.len() != n_t || design.w.iter().any(|w| w.len() != n_t) {
        return Err(Error::DimensionMismatch(format!("beams must have length {n_t}")));
    }
    Ok(())
}

/// Common and private SINRs for all users.
pub fn sinrs(
    ch: &ChannelSet,
    psi: &RisVector,
    design: &TransmitDesign,
    sigma_z2: f64,
    sigma_k2: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dims(ch, psi, design)?;
    let k_users = ch.num_users();
    let mut gamma_c = Vec::with_capacity(k_users);
    let mut gamma_p = Vec::with_capacity(k_users);
    for k in 0..k_users {
        let h = equivalent_channel(ch, psi, k)?;
        let noise = dynamic_noise(ch, psi, k, sigma_z2) + sigma_k2;
        let p_common = h.dotc(&design.w0).norm_sqr();
        let p_private: Vec<f64> = design.w.iter().map(|w| h.dotc(w).norm_sqr()).collect();
        let total_private: f64 = p_private.iter().sum();
        gamma_c.push(p_common / (total_private + noise));
        gamma_p.push(p_private[k] / (total_private - p_private[k] + noise));
    }
    Ok((gamma_c, gamma_p))
}

/// Reflect power consumed by the active RIS:
/// `sum_{k=0..K} ||diag(psi) G w_k||^2 + ||diag(psi)||_F^2 sigma_z^2`.
pub fn ris_power_used(
    ch: &ChannelSet,
    psi: &RisVector,
    design: &TransmitDesign,
    sigma_z2: f64,
) -> f64 {
    let mut total = psi.norm_sqr() * sigma_z2;
    for w in std::iter::once(&design.w0).chain(design.w.iter()) {
        let gw = &ch.bs_ris * w;
        total += gw
            .iter()
            .zip(psi.psi.iter())
            .map(|(g, p)| (p * g).norm_sqr())
            .sum::<f64>();
    }
    total
}

/// Evaluate rates, powers, objective, and feasibility of the full problem.
pub fn evaluate(
    ch: &ChannelSet,
    psi: &RisVector,
    design: &TransmitDesign,
    cfg: &ScenarioConfig,
) -> Result<RateReport> {
    let (gamma_c, gamma_p) = sinrs(ch, psi, design, cfg.sigma_z2, cfg.sigma_k2)?;
    let r_c_rate: Vec<f64> = gamma_c.iter().map(|g| (1.0 + g).log2()).collect();
    let r_p_rate: Vec<f64> = gamma_p.iter().map(|g| (1.0 + g).log2()).collect();

    let sum_rc = design.sum_rc();
    let sum_rate = sum_rc + r_p_rate.iter().sum::<f64>();
    let p_bs_used = design.bs_power();
    let p_a_used = ris_power_used(ch, psi, design, cfg.sigma_z2);

    let residuals = ConstraintResiduals {
        common_rate: r_c_rate.iter().map(|rc| sum_rc - rc).collect(),
        qos: design
            .r_c
            .iter()
            .zip(r_p_rate.iter())
            .map(|(rc, rp)| cfg.r_min - (rc + rp))
            .collect(),
        bs_power: p_bs_used - cfg.p_bs_max,
        // The reflect-power budget applies to the active RIS only; passive
        // elements are constrained to unit modulus instead.
        ris_power: match psi.mode {
            RisMode::Active => p_a_used - cfg.p_a_max,
            RisMode::Passive => 0.0,
        },
        rc_nonneg: design.r_c.iter().map(|rc| -rc).collect(),
    };
    let feasible = residuals.max_violation() <= FEAS_TOL;

    Ok(RateReport {
        gamma_c,
        gamma_p,
        r_c_rate,
        r_p_rate,
        sum_rate,
        p_bs_used,
        p_a_used,
        feasible,
        residuals,
    })
}

/// `min_k R_c,k`: the largest total common rate all users can decode.
pub fn common_rate_cap(
    ch: &ChannelSet,
    psi: &RisVector,
    design: &TransmitDesign,
    sigma_z2: f64,
    sigma_k2: f64,
) -> Result<f64> {
    let (gamma_c, _) = sinrs(ch, psi, design, sigma_z2, sigma_k2)?;
    Ok(gamma_c
        .iter()
        .map(|g| (1.0 + g).log2())
        .fold(f64::INFINITY, f64::min))
}
