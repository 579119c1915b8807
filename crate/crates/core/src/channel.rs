//! Network geometry and channel generation.
//!
//! All links are Rayleigh: each entry is a circularly-symmetric complex
//! Gaussian whose variance equals the link's distance-dependent path-loss
//! gain. One ChaCha generator seeded from the scenario seed drives every
//! draw, in a fixed documented order (user positions, then BS→user vectors,
//! then the BS→RIS matrix row by row, then RIS→user vectors), so identical
//! `(config, seed)` pairs reproduce identical channel sets.

use crate::config::{db_to_linear, ScenarioConfig};
use crate::rates::RisVector;
use crate::{CMatrix, CVector, Error, Result};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// One random draw of all channel blocks.
#[derive(Debug, Clone)]
pub struct ChannelSet {
    /// Direct BS→user channels, one length-`N_T` vector per user.
    pub bs_user: Vec<CVector>,
    /// BS→RIS channel, `L x N_T`.
    pub bs_ris: CMatrix,
    /// RIS→user channels, one length-`L` vector per user.
    pub ris_user: Vec<CVector>,
    /// Sampled user positions in meters.
    pub user_pos: Vec<[f64; 2]>,
}

impl ChannelSet {
    pub fn num_users(&self) -> usize {
        self.bs_user.len()
    }

    pub fn n_t(&self) -> usize {
        self.bs_ris.ncols()
    }

    pub fn num_elements(&self) -> usize {
        self.bs_ris.nrows()
    }
}

pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Linear power gain `10^(L0_dB/10) * (d/d0)^(-alpha)`.
pub fn path_loss_linear(d: f64, alpha: f64, l0_db: f64, d0: f64) -> Result<f64> {
    if d <= 0.0 || d0 <= 0.0 {
        return Err(Error::Domain(format!(
            "path loss requires positive distances (d = {d}, d0 = {d0})"
        )));
    }
    Ok(db_to_linear(l0_db) * (d / d0).powf(-alpha))
}

/// Sample `K` user positions uniformly on the configured disk.
pub fn sample_user_positions(cfg: &ScenarioConfig, rng: &mut ChaCha12Rng) -> Vec<[f64; 2]> {
    (0..cfg.k)
        .map(|_| {
            // Uniform on a disk: radius = R * sqrt(u).
            let u: f64 = rng.random();
            let v: f64 = rng.random();
            let r = cfg.user_radius * u.sqrt();
            let theta = 2.0 * std::f64::consts::PI * v;
            [
                cfg.user_center[0] + r * theta.cos(),
                cfg.user_center[1] + r * theta.sin(),
            ]
        })
        .collect()
}

fn complex_gaussian_vector(n: usize, variance: f64, rng: &mut ChaCha12Rng) -> CVector {
    let scale = (variance / 2.0).sqrt();
    CVector::from_iterator(
        n,
        (0..n).map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(scale * re, scale * im)
        }),
    )
}

/// Draw a full channel set for the scenario, deterministically from `seed`.
pub fn generate_channels(cfg: &ScenarioConfig, seed: u64) -> Result<ChannelSet> {
    cfg.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    let user_pos = sample_user_positions(cfg, &mut rng);

    let mut bs_user = Vec::with_capacity(cfg.k);
    for (k, pos) in user_pos.iter().enumerate() {
        let d = distance(cfg.bs_pos, *pos);
        let gain = path_loss_linear(d, cfg.alpha_bu_for(k), cfg.l0_db, cfg.d0)?;
        bs_user.push(complex_gaussian_vector(cfg.n_t, gain, &mut rng));
    }

    let d_br = distance(cfg.bs_pos, cfg.ris_pos);
    let gain_br = path_loss_linear(d_br, cfg.alpha_br, cfg.l0_db, cfg.d0)?;
    let scale = (gain_br / 2.0).sqrt();
    let mut bs_ris = CMatrix::zeros(cfg.l, cfg.n_t);
    for r in 0..cfg.l {
        for c in 0..cfg.n_t {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            bs_ris[(r, c)] = Complex64::new(scale * re, scale * im);
        }
    }

    let mut ris_user = Vec::with_capacity(cfg.k);
    for pos in &user_pos {
        let d = distance(cfg.ris_pos, *pos);
        let gain = path_loss_linear(d, cfg.alpha_ru, cfg.l0_db, cfg.d0)?;
        ris_user.push(complex_gaussian_vector(cfg.l, gain, &mut rng));
    }

    Ok(ChannelSet {
        bs_user,
        bs_ris,
        ris_user,
        user_pos,
    })
}

/// Equivalent channel of user `k` through the RIS:
/// `h_k^H = g_k^H + f_k^H diag(psi) G`, returned as the column vector `h_k`.
pub fn equivalent_channel(ch: &ChannelSet, psi: &RisVector, k: usize) -> Result<CVector> {
    if k >= ch.num_users() {
        return Err(Error::IndexOutOfRange {
            index: k,
            k: ch.num_users(),
        });
    }
    if psi.psi.len() != ch.num_elements() {
        return Err(Error::DimensionMismatch(format!(
            "psi has {} elements, channel has {}",
            psi.psi.len(),
            ch.num_elements()
        )));
    }
    // h = g + G^H diag(conj(psi)) f
    let f = &ch.ris_user[k];
    let weighted =
        CVector::from_iterator(f.len(), f.iter().zip(psi.psi.iter()).map(|(fl, pl)| pl.conj() * fl));
    Ok(&ch.bs_user[k] + ch.bs_ris.adjoint() * weighted)
}
