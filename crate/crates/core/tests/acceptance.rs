//! End-to-end acceptance suite.
//!
//! Each test prints a single `criterion N (...): PASS/FAIL` line so the
//! whole gate can be read off a plain `cargo test` log. The checks are
//! oracle-based: every numerical claim is re-verified against an independent
//! computation (direct channel evaluation, grid search, closed forms, or
//! KKT residuals) rather than against stored outputs of the code under test.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rsma_ris::channel::generate_channels;
use rsma_ris::harness::{
    initial_ris, run_algorithm1, run_power_sweep, RunResult, Scheme,
};
use rsma_ris::rates::{evaluate, RisMode, RisVector};
use rsma_ris::ris::{power_matrix, ris_update};
use rsma_ris::sca::{init_point, sca_solve, ScaOptions};
use rsma_ris::solver::{solve, Affine, Constraint, ConvexProgram, SolveStatus};
use rsma_ris::{validation, RMatrix, RVector, ScenarioConfig};
use std::time::Instant;

fn verdict(num: u32, name: &str, ok: bool, detail: &str) {
    println!(
        "criterion {num} ({name}): {} — {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {num} ({name}) failed: {detail}");
}

fn oracle_cfg() -> ScenarioConfig {
    ScenarioConfig {
        k: 2,
        n_t: 4,
        l: 8,
        ..ScenarioConfig::default()
    }
}

#[test]
fn criterion_01_quadratic_form_reconstruction() {
    let cfg = oracle_cfg();
    let t0 = Instant::now();
    let bad = (0..100)
        .filter_map(|s| {
            validation::check_quadratic_reconstruction(&cfg, 1000 + s)
                .err()
                .map(|e| (s, e))
        })
        .next();
    let elapsed = t0.elapsed().as_secs_f64();
    verdict(
        1,
        "quadratic-form reconstruction",
        bad.is_none() && elapsed < 60.0,
        &format!("100 instances, first failure {bad:?}, {elapsed:.1}s"),
    );
}

#[test]
fn criterion_02_fractional_transform_tightness() {
    let cfg = oracle_cfg();
    let t0 = Instant::now();
    let bad = (0..100)
        .filter_map(|s| validation::check_fp_tightness(&cfg, 2000 + s).err().map(|e| (s, e)))
        .next();
    let elapsed = t0.elapsed().as_secs_f64();
    verdict(
        2,
        "fractional-transform tightness",
        bad.is_none() && elapsed < 30.0,
        &format!("100 instances, first failure {bad:?}, {elapsed:.1}s"),
    );
}

#[test]
fn criterion_03_qos_constraint_equivalence() {
    let cfg = oracle_cfg();
    let bad = (0..100)
        .filter_map(|s| {
            validation::check_constraint_equivalence(&cfg, 3000 + s)
                .err()
                .map(|e| (s, e))
        })
        .next();
    verdict(
        3,
        "QoS quadratic-form sign equivalence",
        bad.is_none(),
        &format!("100 instances x 10 RIS draws, first failure {bad:?}"),
    );
}

#[test]
fn criterion_04_convex_surrogate_validity() {
    // The beamforming step relies on two scalar surrogates: the tangent
    // plane of sqrt(beta xi) (concave, so the tangent lies above it and the
    // constraint built from it is an inner approximation), and the
    // difference-of-squares majorant of the product lambda kappa. Both must
    // be exact at the expansion point and one-sided everywhere.
    let mut rng = ChaCha12Rng::seed_from_u64(4);
    let mut worst_gap = 0.0f64;
    let mut violations = 0usize;
    for _ in 0..10_000 {
        let xi0 = rng.random::<f64>() * 10.0 + 1e-3;
        let b0 = rng.random::<f64>() * 10.0 + 1e-3;
        let xi = rng.random::<f64>() * 10.0 + 1e-6;
        let b = rng.random::<f64>() * 10.0 + 1e-6;
        let tangent = (b0 * xi0).sqrt()
            + 0.5 * (b0 / xi0).sqrt() * (xi - xi0)
            + 0.5 * (xi0 / b0).sqrt() * (b - b0);
        if tangent < (b * xi).sqrt() - 1e-12 {
            violations += 1;
        }
        let at0 = (b0 * xi0).sqrt()
            + 0.5 * (b0 / xi0).sqrt() * (xi0 - xi0)
            + 0.5 * (xi0 / b0).sqrt() * (b0 - b0);
        worst_gap = worst_gap.max((at0 - (b0 * xi0).sqrt()).abs() / (b0 * xi0).sqrt());

        let l0 = rng.random::<f64>() * 10.0;
        let k0 = rng.random::<f64>() * 10.0;
        let l = rng.random::<f64>() * 10.0;
        let k = rng.random::<f64>() * 10.0;
        let d0 = l0 - k0;
        let maj = 0.25 * ((l + k).powi(2) - 2.0 * d0 * (l - k) + d0 * d0);
        if maj < l * k - 1e-12 {
            violations += 1;
        }
        let maj0 = 0.25 * ((l0 + k0).powi(2) - 2.0 * d0 * (l0 - k0) + d0 * d0);
        let denom = (l0 * k0).max(1e-12);
        worst_gap = worst_gap.max((maj0 - l0 * k0).abs() / denom);
    }
    verdict(
        4,
        "surrogate one-sidedness and tightness",
        violations == 0 && worst_gap <= 1e-9,
        &format!("10^4 samples per surrogate, violations {violations}, expansion-point gap {worst_gap:.1e}"),
    );
}

#[test]
fn criterion_05_alternation_monotone_feasible_convergent() {
    let cfg = ScenarioConfig::default();
    let mut converged_30 = 0;
    let mut detail = String::new();
    let mut ok = true;
    for seed in 0..10u64 {
        let t0 = Instant::now();
        let run = run_algorithm1(&cfg, seed, Scheme::ActiveRsma).expect("run");
        let elapsed = t0.elapsed().as_secs_f64();
        for w in run.sum_rates.windows(2) {
            if w[1] < w[0] - 1e-6 {
                ok = false;
                detail.push_str(&format!("seed {seed}: non-monotone {w:?}; "));
            }
        }
        if !run.iterates_feasible.iter().all(|&f| f) || !run.report.feasible {
            ok = false;
            detail.push_str(&format!("seed {seed}: infeasible iterate; "));
        }
        if elapsed >= 60.0 {
            ok = false;
            detail.push_str(&format!("seed {seed}: {elapsed:.0}s; "));
        }
        if run.converged && run.sum_rates.len() <= 30 {
            converged_30 += 1;
        }
    }
    if converged_30 < 9 {
        ok = false;
    }
    verdict(
        5,
        "alternation monotone, feasible, convergent",
        ok,
        &format!("10 seeds, {converged_30}/10 converged within 30 outer iterations; {detail}"),
    );
}

#[test]
fn criterion_06_single_user_matched_filter() {
    // K = 1 with the RIS switched off and no common stream: the optimum is
    // the full-power matched filter with rate log2(1 + P ||g||^2 / sigma^2).
    let cfg = ScenarioConfig {
        k: 1,
        alpha_bu: vec![2.0],
        r_min: 0.0,
        ..ScenarioConfig::default()
    };
    let mut worst = 0.0f64;
    for seed in 0..5u64 {
        let ch = generate_channels(&cfg, seed).expect("channels");
        let psi = RisVector::zeros(cfg.l, RisMode::Active);
        let init = init_point(&ch, &psi, &cfg, false).expect("init");
        let (design, _) =
            sca_solve(&ch, &psi, init, &cfg, ScaOptions { common: false }).expect("sca");
        let rate = evaluate(&ch, &psi, &design, &cfg).expect("eval").sum_rate;
        let expected =
            (1.0 + cfg.p_bs_max * ch.bs_user[0].norm_squared() / cfg.sigma_k2).log2();
        worst = worst.max((rate - expected).abs());
    }
    verdict(
        6,
        "single-user closed form",
        worst <= 1e-3,
        &format!("worst |rate - matched-filter bound| = {worst:.2e} bps/Hz over 5 seeds"),
    );
}

#[test]
fn criterion_07_single_element_grid_oracle() {
    // L = 1, K = 1: the RIS subproblem reduces to one complex gain, so an
    // exhaustive magnitude x phase grid bounds the attainable objective.
    let cfg = ScenarioConfig {
        k: 1,
        l: 1,
        alpha_bu: vec![2.0],
        r_min: 0.0,
        ..ScenarioConfig::default()
    };
    let mut worst_rel = 0.0f64;
    for seed in 0..3u64 {
        let ch = generate_channels(&cfg, seed).expect("channels");
        let psi0 = initial_ris(&cfg, seed, RisMode::Active, &ch);
        let (design, _) = init_point(&ch, &psi0, &cfg, false).expect("init");
        let (psi_opt, _) = ris_update(&ch, &design, &psi0, &cfg, false).expect("ris");
        let achieved = evaluate(&ch, &psi_opt, &design, &cfg).expect("eval").sum_rate;

        let pi = power_matrix(&ch, &design, cfg.sigma_z2);
        let m_max = (cfg.p_a_max / pi[(0, 0)].re.max(1e-300)).sqrt();
        let mut grid_best = f64::NEG_INFINITY;
        for im in 0..100 {
            let m = m_max * (im as f64 + 1.0) / 100.0;
            for ip in 0..100 {
                let th = std::f64::consts::TAU * ip as f64 / 100.0;
                let cand = RisVector {
                    psi: rsma_ris::CVector::from_element(1, Complex64::from_polar(m, th)),
                    mode: RisMode::Active,
                };
                let rep = evaluate(&ch, &cand, &design, &cfg).expect("eval");
                if rep.feasible && rep.sum_rate > grid_best {
                    grid_best = rep.sum_rate;
                }
            }
        }
        worst_rel = worst_rel.max((grid_best - achieved) / grid_best.abs().max(1e-12));
    }
    verdict(
        7,
        "single-element grid-search oracle",
        worst_rel <= 1e-2,
        &format!("worst relative objective gap to 10^4-point grid = {worst_rel:.2e}"),
    );
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
    (m, var.sqrt())
}

fn scheme_rates(cfg: &ScenarioConfig, scheme: Scheme, seeds: u64) -> Vec<f64> {
    (0..seeds)
        .map(|s| {
            run_algorithm1(cfg, s, scheme)
                .expect("run")
                .report
                .sum_rate
        })
        .collect()
}

#[test]
fn criterion_08_scheme_ordering_and_element_trend() {
    let cfg = ScenarioConfig::default();
    let rsma = scheme_rates(&cfg, Scheme::ActiveRsma, 10);
    let sdma = scheme_rates(&cfg, Scheme::ActiveSdma, 10);
    let passive = scheme_rates(&cfg, Scheme::PassiveRsma, 10);
    let (m_rsma, _) = mean_std(&rsma);
    let (m_sdma, _) = mean_std(&sdma);
    let (m_pass, _) = mean_std(&passive);
    let ratio = m_rsma / m_pass;
    let ordering_ok = m_rsma > m_sdma;
    let ratio_ok = ratio >= 1.2;

    let mut trend_ok = true;
    let mut trend = String::new();
    let mut prev: Option<(f64, f64)> = None;
    for l in [8usize, 16, 32, 64, 128] {
        let cfg_l = ScenarioConfig { l, ..ScenarioConfig::default() };
        let rates = scheme_rates(&cfg_l, Scheme::ActiveRsma, 6);
        let (m, s) = mean_std(&rates);
        if let Some((pm, ps)) = prev {
            if m < pm - ps {
                trend_ok = false;
            }
        }
        trend.push_str(&format!("L={l}: {m:.2}±{s:.2} "));
        prev = Some((m, s));
    }
    verdict(
        8,
        "scheme ordering and element trend",
        ordering_ok && ratio_ok && trend_ok,
        &format!(
            "mean active-RSMA {m_rsma:.4} vs active-SDMA {m_sdma:.4} ({}), active/passive ratio {ratio:.3} (need >= 1.2: {}), element trend {} [{trend}]",
            if ordering_ok { "ok" } else { "violated" },
            if ratio_ok { "ok" } else { "violated" },
            if trend_ok { "ok" } else { "violated" },
        ),
    );
}

#[test]
fn criterion_09_backend_kkt_and_closed_form() {
    // Random convex QCQPs (maximize c.x - x'Qx over intersections of
    // ellipsoids) with an independent stationarity check: recover
    // multipliers for the near-active constraints by nonnegative least
    // squares and measure the KKT residual directly from the raw data.
    let mut rng = ChaCha12Rng::seed_from_u64(99);
    let mut worst_kkt = 0.0f64;
    let mut solved = 0usize;
    for _ in 0..20 {
        let n = 4 + (rng.random::<u64>() % 29) as usize; // 4..=32
        let a = RMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = &a.transpose() * &a * 0.5 + RMatrix::identity(n, n) * 0.1;
        let c: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();

        let mut p = ConvexProgram::new(n);
        p.linear = c.clone();
        p.quadratic = Some(q.clone());
        let n_cons = 1 + (rng.random::<u64>() % 3) as usize;
        let mut cons_data: Vec<(Vec<(Vec<f64>, f64)>, f64)> = Vec::new();
        for _ in 0..n_cons {
            let n_rows = 1 + (rng.random::<u64>() % 3) as usize;
            let mut rows_data = Vec::new();
            let mut at_origin = 0.0;
            for _ in 0..n_rows {
                let coefs: Vec<f64> =
                    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let off = rng.sample::<f64, _>(StandardNormal) * 0.3;
                at_origin += off * off;
                rows_data.push((coefs, off));
            }
            let bound = at_origin + 0.5 + rng.random::<f64>(); // origin strictly feasible
            cons_data.push((rows_data, bound));
        }
        for (rows_data, bound) in &cons_data {
            let rows: Vec<Affine> = rows_data
                .iter()
                .map(|(coefs, off)| {
                    let mut a = Affine::constant(*off);
                    for (i, &v) in coefs.iter().enumerate() {
                        a = a.term(i, v);
                    }
                    a
                })
                .collect();
            p.add(Constraint::SumSquaresLe {
                rows,
                bound: Affine::constant(*bound),
            });
        }
        let sol = solve(&p, 1e-9).expect("solve");
        if sol.status != SolveStatus::Optimal {
            continue;
        }
        solved += 1;
        let x = RVector::from_column_slice(&sol.x);
        // gradient of the maximization objective
        let grad_f = RVector::from_column_slice(&c) - (&q + q.transpose()) * &x;
        // gradients and values of the constraints
        let mut active_grads: Vec<RVector> = Vec::new();
        for (rows_data, bound) in &cons_data {
            let mut val = -bound;
            let mut grad = RVector::zeros(n);
            for (coefs, off) in rows_data {
                let r = off + coefs.iter().zip(sol.x.iter()).map(|(a, b)| a * b).sum::<f64>();
                val += r * r;
                grad += RVector::from_column_slice(coefs) * (2.0 * r);
            }
            if val > -1e-3 * bound.abs().max(1.0) {
                active_grads.push(grad);
            }
        }
        // nonnegative least squares over the (few) active constraints
        let resid = if active_grads.is_empty() {
            grad_f.norm()
        } else {
            let mut keep: Vec<usize> = (0..active_grads.len()).collect();
            loop {
                let m = RMatrix::from_fn(n, keep.len(), |r, ci| active_grads[keep[ci]][r]);
                let lam = m
                    .clone()
                    .svd(true, true)
                    .solve(&grad_f, 1e-12)
                    .expect("lsq");
                if let Some(pos) = lam.iter().position(|&v| v < -1e-9) {
                    keep.remove(pos);
                    if keep.is_empty() {
                        break grad_f.norm();
                    }
                    continue;
                }
                break (&grad_f - m * lam).norm();
            }
        };
        let rel = resid / (1.0 + grad_f.norm());
        eprintln!("n {n} cons {n_cons} resid {rel:.2e} kkt_reported {:.2e}", sol.kkt_residual);
        worst_kkt = worst_kkt.max(rel);
    }

    // Ball-constrained linear program against its closed form.
    let n = 6;
    let mut p = ConvexProgram::new(n);
    let c = [0.3, -1.2, 0.7, 2.0, -0.4, 0.9];
    p.linear = c.to_vec();
    let radius = 2.5;
    p.add(Constraint::SumSquaresLe {
        rows: (0..n).map(Affine::var).collect(),
        bound: Affine::constant(radius * radius),
    });
    let sol = solve(&p, 1e-10).expect("solve");
    let cnorm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    let lp_err = sol
        .x
        .iter()
        .zip(c.iter())
        .map(|(x, ci)| (x - radius * ci / cnorm).abs())
        .fold(0.0f64, f64::max);

    verdict(
        9,
        "solver KKT residuals and ball-LP closed form",
        solved == 20 && worst_kkt <= 1e-6 && lp_err <= 1e-8,
        &format!("{solved}/20 QCQPs optimal, worst KKT residual {worst_kkt:.1e}, ball-LP max coordinate error {lp_err:.1e}"),
    );
}

#[test]
fn criterion_10_reproducible_reports() {
    let cfg = ScenarioConfig {
        max_outer: 6,
        ..ScenarioConfig::default()
    };
    let base = std::env::temp_dir().join(format!("rsma-accept-{}", std::process::id()));
    let mut digests: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
    for pass in 0..2 {
        let out = base.join(format!("pass{pass}"));
        let power_rows =
            run_power_sweep(&cfg, &[12.0, 15.0], &[Scheme::ActiveRsma], 2).expect("sweep");
        let conv: Vec<RunResult> =
            vec![run_algorithm1(&cfg, 3, Scheme::ActiveRsma).expect("run")];
        rsma_ris::harness::emit_report(&out, &cfg, &power_rows, &[], &conv).expect("report");
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&out)
            .expect("dir")
            .map(|e| {
                let e = e.expect("entry");
                (
                    e.file_name().to_string_lossy().into_owned(),
                    std::fs::read(e.path()).expect("read"),
                )
            })
            .collect();
        files.sort();
        digests.push(files);
    }
    let same = digests[0] == digests[1];
    let names: Vec<&str> = digests[0].iter().map(|(n, _)| n.as_str()).collect();
    std::fs::remove_dir_all(&base).ok();
    verdict(
        10,
        "byte-identical report reproduction",
        same,
        &format!("two runs over {names:?}"),
    );
}
