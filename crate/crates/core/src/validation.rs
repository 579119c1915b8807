//! Self-contained invariant checks over random instances.
//!
//! These re-verify the algebraic identities the optimizer relies on —
//! quadratic-form reconstruction, transform tightness, constraint
//! equivalence, and the reflect-power identity — and are run both by the
//! CLI `validate` subcommand and by integration tests.

use crate::channel::{generate_channels, ChannelSet};
use crate::config::ScenarioConfig;
use crate::rates::{ris_power_used, sinrs, RisMode, RisVector, TransmitDesign};
use crate::ris::{
    assemble_user_quadratics, closed_form_aux, constraint_forms, eval_f1_f2, eval_form,
    objective_forms, power_matrix, UserQuadratics,
};
use crate::{CVector, Error, Result};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

const TOL: f64 = 1e-9;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn random_cvec(n: usize, rng: &mut ChaCha12Rng, scale: f64) -> CVector {
    CVector::from_fn(n, |_, _| {
        Complex64::new(
            scale * rng.sample::<f64, _>(StandardNormal),
            scale * rng.sample::<f64, _>(StandardNormal),
        )
    })
}

fn random_instance(
    cfg: &ScenarioConfig,
    seed: u64,
) -> Result<(ChannelSet, TransmitDesign, RisVector, Vec<UserQuadratics>)> {
    let ch = generate_channels(cfg, seed)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x77aa);
    let design = TransmitDesign {
        w0: random_cvec(cfg.n_t, &mut rng, 1.0),
        w: (0..cfg.k).map(|_| random_cvec(cfg.n_t, &mut rng, 1.0)).collect(),
        r_c: (0..cfg.k).map(|_| rng.random::<f64>() * 0.05).collect(),
    };
    let psi = RisVector {
        psi: random_cvec(cfg.l, &mut rng, 30.0),
        mode: RisMode::Active,
    };
    let quads = (0..cfg.k)
        .map(|k| assemble_user_quadratics(&ch, &design, k, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok((ch, design, psi, quads))
}

/// Both SINRs reconstructed from the quadratic forms must match the direct
/// channel evaluation to relative `1e-9`.
pub fn check_quadratic_reconstruction(cfg: &ScenarioConfig, seed: u64) -> Result<()> {
    let (ch, design, psi, quads) = random_instance(cfg, seed)?;
    let (gamma_c, gamma_p) = sinrs(&ch, &psi, &design, cfg.sigma_z2, cfg.sigma_k2)?;
    for (k, q) in quads.iter().enumerate() {
        let (a1, c1, b1) = q.beam_form(k + 1);
        let (e, j, f) = q.private_denominator(k + 1);
        let gp = eval_form(a1, &c1, &b1, &psi.psi) / eval_form(e, &j, &f, &psi.psi);
        if rel_err(gp, gamma_p[k]) > TOL {
            return Err(Error::Domain(format!(
                "private SINR mismatch for user {k}: {gp} vs {}",
                gamma_p[k]
            )));
        }
        let (a1c, c1c, b1c) = q.beam_form(0);
        let (a2, c2, b2) = q.common_denominator();
        let gc = eval_form(a1c, &c1c, &b1c, &psi.psi) / eval_form(a2, &c2, &b2, &psi.psi);
        if rel_err(gc, gamma_c[k]) > TOL {
            return Err(Error::Domain(format!(
                "common SINR mismatch for user {k}: {gc} vs {}",
                gamma_c[k]
            )));
        }
    }
    Ok(())
}

/// At closed-form slacks, both transforms must collapse to the private
/// sum-rate, and the explicit quadratic objective must equal the literal one.
pub fn check_fp_tightness(cfg: &ScenarioConfig, seed: u64) -> Result<()> {
    let (ch, design, psi, quads) = random_instance(cfg, seed)?;
    let aux = closed_form_aux(&quads, &psi.psi);
    let (_, gamma_p) = sinrs(&ch, &psi, &design, cfg.sigma_z2, cfg.sigma_k2)?;
    for (t, g) in aux.tau.iter().zip(gamma_p.iter()) {
        if rel_err(*t, *g) > TOL {
            return Err(Error::Domain(format!(
                "closed-form tau {t} differs from private SINR {g}"
            )));
        }
    }
    let sum_private: f64 = gamma_p.iter().map(|g| (1.0 + g).log2()).sum();
    let (f1, f2) = eval_f1_f2(&quads, &psi.psi, &aux);
    if rel_err(f1, sum_private) > TOL {
        return Err(Error::Domain(format!(
            "f1 at closed-form slacks is {f1}, expected {sum_private}"
        )));
    }
    if rel_err(f2, f1) > TOL {
        return Err(Error::Domain(format!("f2 = {f2} differs from f1 = {f1}")));
    }
    let obj = objective_forms(&quads, &aux);
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x1234);
    for _ in 0..5 {
        let other = random_cvec(cfg.l, &mut rng, 30.0);
        let (_, f2o) = eval_f1_f2(&quads, &other, &aux);
        if rel_err(obj.eval(&other), f2o) > TOL {
            return Err(Error::Domain(format!(
                "quadratic objective {} differs from literal f2 {}",
                obj.eval(&other),
                f2o
            )));
        }
    }
    Ok(())
}

/// The sign of every QoS form must agree with the corresponding SINR
/// threshold test at random RIS vectors.
pub fn check_constraint_equivalence(cfg: &ScenarioConfig, seed: u64) -> Result<()> {
    let (ch, design, _, quads) = random_instance(cfg, seed)?;
    let cons = constraint_forms(&quads, &design, cfg.r_min.max(0.5), true);
    let gamma0 = 2f64.powf(design.sum_rc()) - 1.0;
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x4242);
    for _ in 0..10 {
        let psi = RisVector {
            psi: random_cvec(cfg.l, &mut rng, 25.0),
            mode: RisMode::Active,
        };
        let (gamma_c, gamma_p) = sinrs(&ch, &psi, &design, cfg.sigma_z2, cfg.sigma_k2)?;
        let mut idx = 0;
        for k in 0..cfg.k {
            let tp = 2f64.powf(cfg.r_min.max(0.5) - design.r_c[k]) - 1.0;
            if tp > 0.0 {
                if (cons[idx].margin(&psi.psi) >= 0.0) != (gamma_p[k] >= tp) {
                    return Err(Error::Domain(format!(
                        "private QoS form disagrees with SINR test for user {k}"
                    )));
                }
                idx += 1;
            }
            if gamma0 > 0.0 {
                if (cons[idx].margin(&psi.psi) >= 0.0) != (gamma_c[k] >= gamma0) {
                    return Err(Error::Domain(format!(
                        "common QoS form disagrees with SINR test for user {k}"
                    )));
                }
                idx += 1;
            }
        }
    }
    Ok(())
}

/// `psi^H Pi psi` must equal the directly-summed reflect power.
pub fn check_power_identity(cfg: &ScenarioConfig, seed: u64) -> Result<()> {
    let (ch, design, psi, _) = random_instance(cfg, seed)?;
    let pi = power_matrix(&ch, &design, cfg.sigma_z2);
    let via = (psi.psi.adjoint() * &pi * &psi.psi)[(0, 0)].re;
    let direct = ris_power_used(&ch, &psi, &design, cfg.sigma_z2);
    if rel_err(via, direct) > 1e-12 {
        return Err(Error::Domain(format!(
            "power identity violated: {via} vs {direct}"
        )));
    }
    Ok(())
}

/// Run every check over a block of seeds; returns one labeled result each.
pub fn run_all(cfg: &ScenarioConfig, seeds: std::ops::Range<u64>) -> Vec<(String, Result<()>)> {
    let checks: [(&str, fn(&ScenarioConfig, u64) -> Result<()>); 4] = [
        ("quadratic_reconstruction", check_quadratic_reconstruction),
        ("fp_tightness", check_fp_tightness),
        ("constraint_equivalence", check_constraint_equivalence),
        ("power_identity", check_power_identity),
    ];
    checks
        .iter()
        .map(|(name, f)| {
            let res = seeds.clone().try_for_each(|s| f(cfg, s));
            (name.to_string(), res)
        })
        .collect()
}
