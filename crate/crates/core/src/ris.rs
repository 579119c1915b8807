//! RIS precoder update for fixed beamforming, via fractional programming.
//!
//! The private sum-rate is lifted with a Lagrangian-dual transform (slack
//! `tau` per user) and then a quadratic transform (complex slack `upsilon`),
//! after which the objective is an explicit concave quadratic in `psi`. QoS
//! side constraints stay quadratic but indefinite; they are convexified by
//! splitting each Hermitian form into PSD parts and minorizing the convex
//! side at the previous iterate. Each outer pass solves one convex QCQP over
//! the real embedding of `psi`.

use crate::channel::ChannelSet;
use crate::config::ScenarioConfig;
use crate::rates::{dynamic_noise, evaluate, RisMode, RisVector, TransmitDesign};
use crate::solver::{
    psd_factor_rows, psd_split, real_embed, solve, Affine, Constraint, ConvexProgram,
    SolveStatus,
};
use crate::{CMatrix, CVector, Error, RVector, Result};
use num_complex::Complex64;

/// Slacks of the two fractional-programming transforms.
#[derive(Debug, Clone)]
pub struct FpAuxiliaries {
    /// Per-user rate slack; optimal value is the private SINR.
    pub tau: Vec<f64>,
    /// Per-user quadratic-transform slack.
    pub upsilon: Vec<Complex64>,
}

/// Scalar/linear/quadratic data of one user's received powers, expressed in
/// the RIS vector: every `|h_k^H w_i|^2` becomes
/// `|a_i|^2 + Re(psi^H 2 a_i conj(v_i)) + psi^H conj(v_i) v_i^T psi`.
#[derive(Debug, Clone)]
pub struct UserQuadratics {
    /// Direct-link inner products `g_k^H w_i`, beam 0 is the common beam.
    pub a: Vec<Complex64>,
    /// Cascade vectors `conj(f_k) .* (G w_i)` per beam.
    pub v: Vec<CVector>,
    /// Diagonal of the dynamic-noise form: `sigma_z^2 |f_k,l|^2`.
    pub d: RVector,
    /// Receiver noise power.
    pub sigma2: f64,
}

impl UserQuadratics {
    fn num_beams(&self) -> usize {
        self.a.len()
    }

    /// `h_k^H w_i` at a given RIS vector.
    pub fn inner(&self, i: usize, psi: &CVector) -> Complex64 {
        self.a[i] + psi.dot(&self.v[i])
    }

    /// Dynamic-plus-receiver noise `psi^H D psi + sigma^2`.
    pub fn noise(&self, psi: &CVector) -> f64 {
        psi.iter()
            .zip(self.d.iter())
            .map(|(p, d)| p.norm_sqr() * d)
            .sum::<f64>()
            + self.sigma2
    }

    /// Hermitian rank-1 form of beam `i`: `(|a|^2, 2 a conj(v), conj(v) v^T)`.
    pub fn beam_form(&self, i: usize) -> (f64, CVector, CMatrix) {
        let a = self.a[i];
        let v = &self.v[i];
        let c = v.map(|x| x.conj() * (a * 2.0));
        let b = CMatrix::from_fn(v.len(), v.len(), |r, s| v[r].conj() * v[s]);
        (a.norm_sqr(), c, b)
    }

    /// Sum of `beam_form` over a set of private beams (1-based beam ids).
    fn sum_forms(&self, beams: impl Iterator<Item = usize>) -> (f64, CVector, CMatrix) {
        let l = self.d.len();
        let mut acc = (0.0, CVector::zeros(l), CMatrix::zeros(l, l));
        for i in beams {
            let (a, c, b) = self.beam_form(i);
            acc.0 += a;
            acc.1 += c;
            acc.2 += b;
        }
        acc
    }

    /// Denominator form of the private SINR for this user (`own` is the
    /// 1-based beam id): interference + dynamic noise + receiver noise.
    pub fn private_denominator(&self, own: usize) -> (f64, CVector, CMatrix) {
        let (mut e, j, mut f) = self.sum_forms((1..self.num_beams()).filter(|&i| i != own));
        e += self.sigma2;
        for (idx, d) in self.d.iter().enumerate() {
            f[(idx, idx)] += Complex64::new(*d, 0.0);
        }
        (e, j, f)
    }

    /// Denominator form of the common SINR: all private beams + noise.
    pub fn common_denominator(&self) -> (f64, CVector, CMatrix) {
        let (mut a2, c2, mut b2) = self.sum_forms(1..self.num_beams());
        a2 += self.sigma2;
        for (idx, d) in self.d.iter().enumerate() {
            b2[(idx, idx)] += Complex64::new(*d, 0.0);
        }
        (a2, c2, b2)
    }

    /// Scale all powers by `1/n` (channel normalization).
    pub fn normalized(&self, n: f64) -> Self {
        let rs = 1.0 / n.sqrt();
        Self {
            a: self.a.iter().map(|a| a * rs).collect(),
            v: self.v.iter().map(|v| v * Complex64::new(rs, 0.0)).collect(),
            d: &self.d / n,
            sigma2: self.sigma2 / n,
        }
    }
}

/// Evaluate `a + Re(psi^H c) + psi^H b psi` for a Hermitian form.
pub fn eval_form(a: f64, c: &CVector, b: &CMatrix, psi: &CVector) -> f64 {
    a + psi.dotc(c).re + (psi.adjoint() * b * psi)[(0, 0)].re
}

/// Build the per-beam quadratics of user `k` from raw channels.
pub fn assemble_user_quadratics(
    ch: &ChannelSet,
    design: &TransmitDesign,
    k: usize,
    cfg: &ScenarioConfig,
) -> Result<UserQuadratics> {
    if k >= ch.num_users() {
        return Err(Error::IndexOutOfRange {
            index: k,
            k: ch.num_users(),
        });
    }
    let f = &ch.ris_user[k];
    let g = &ch.bs_user[k];
    let mut a = Vec::with_capacity(design.w.len() + 1);
    let mut v = Vec::with_capacity(design.w.len() + 1);
    for w in std::iter::once(&design.w0).chain(design.w.iter()) {
        a.push(g.dotc(w));
        let gw = &ch.bs_ris * w;
        v.push(CVector::from_fn(f.len(), |l, _| f[l].conj() * gw[l]));
    }
    Ok(UserQuadratics {
        a,
        v,
        d: RVector::from_fn(f.len(), |l, _| cfg.sigma_z2 * f[l].norm_sqr()),
        sigma2: cfg.sigma_k2,
    })
}

/// Closed-form optimal slacks at the current RIS vector: `tau` is the
/// private SINR, `upsilon` the quadratic-transform stationary point.
pub fn closed_form_aux(quads: &[UserQuadratics], psi: &CVector) -> FpAuxiliaries {
    let mut tau = Vec::with_capacity(quads.len());
    let mut upsilon = Vec::with_capacity(quads.len());
    for (k, q) in quads.iter().enumerate() {
        let own = q.inner(k + 1, psi);
        let signal = own.norm_sqr();
        let total: f64 = (1..q.num_beams()).map(|i| q.inner(i, psi).norm_sqr()).sum();
        let noise = q.noise(psi);
        let interference = total - signal + noise;
        let t = signal / interference;
        tau.push(t);
        upsilon.push(own * ((1.0 + t).sqrt() / (total + noise)));
    }
    FpAuxiliaries { tau, upsilon }
}

/// Literal evaluation of the two transformed objectives.
///
/// `f1` fixes `tau`; `f2` additionally fixes `upsilon`. At their closed-form
/// slacks both collapse to the private sum-rate.
pub fn eval_f1_f2(
    quads: &[UserQuadratics],
    psi: &CVector,
    aux: &FpAuxiliaries,
) -> (f64, f64) {
    let mut f1 = 0.0;
    let mut f2 = 0.0;
    for (k, q) in quads.iter().enumerate() {
        let own = q.inner(k + 1, psi);
        let signal = own.norm_sqr();
        let total: f64 =
            (1..q.num_beams()).map(|i| q.inner(i, psi).norm_sqr()).sum::<f64>() + q.noise(psi);
        let t = aux.tau[k];
        // non-log terms live in nats so the closed-form slacks are stationary
        let ln2 = std::f64::consts::LN_2;
        let shared = (1.0 + t).log2() - t / ln2;
        f1 += shared + (1.0 + t) * signal / (total * ln2);
        let u = aux.upsilon[k];
        f2 += shared
            + (2.0 * (1.0 + t).sqrt() * (u.conj() * own).re - u.norm_sqr() * total) / ln2;
    }
    (f1, f2)
}

/// One QoS constraint in the RIS vector: `psi^H m psi + Re(psi^H n) >= rhs`.
#[derive(Debug, Clone)]
pub struct QcqpConstraint {
    pub m: CMatrix,
    pub n: CVector,
    pub rhs: f64,
}

impl QcqpConstraint {
    pub fn margin(&self, psi: &CVector) -> f64 {
        eval_form(0.0, &self.n, &self.m, psi) - self.rhs
    }
}

/// QoS constraints of the RIS subproblem: one per user for the private rate
/// floor, one per user for common-stream decodability. Vacuous constraints
/// (nonpositive SINR targets) are dropped.
pub fn constraint_forms(
    quads: &[UserQuadratics],
    design: &TransmitDesign,
    r_min: f64,
    common: bool,
) -> Vec<QcqpConstraint> {
    let mut out = Vec::new();
    let gamma0 = 2f64.powf(design.sum_rc()) - 1.0;
    for (k, q) in quads.iter().enumerate() {
        let gamma_p = 2f64.powf(r_min - design.r_c[k]) - 1.0;
        if gamma_p > 0.0 {
            let (a1, c1, b1) = q.beam_form(k + 1);
            let (e, j, f) = q.private_denominator(k + 1);
            out.push(QcqpConstraint {
                m: &b1 - &f * Complex64::new(gamma_p, 0.0),
                n: &c1 - &j * Complex64::new(gamma_p, 0.0),
                rhs: gamma_p * e - a1,
            });
        }
        if common && gamma0 > 0.0 {
            let (a1c, c1c, b1c) = q.beam_form(0);
            let (a2, c2, b2) = q.common_denominator();
            out.push(QcqpConstraint {
                m: &b1c - &b2 * Complex64::new(gamma0, 0.0),
                n: &c1c - &c2 * Complex64::new(gamma0, 0.0),
                rhs: gamma0 * a2 - a1c,
            });
        }
    }
    out
}

/// Concave-quadratic objective data: `f2(psi) = constant + Re(psi^H b) -
/// psi^H q psi` at fixed slacks.
#[derive(Debug, Clone)]
pub struct ObjectiveForms {
    pub b: CVector,
    pub q: CMatrix,
    pub constant: f64,
}

impl ObjectiveForms {
    pub fn eval(&self, psi: &CVector) -> f64 {
        self.constant + psi.dotc(&self.b).re - (psi.adjoint() * &self.q * psi)[(0, 0)].re
    }
}

/// Collapse `f2` into explicit quadratic data in `psi`.
pub fn objective_forms(quads: &[UserQuadratics], aux: &FpAuxiliaries) -> ObjectiveForms {
    let l = quads[0].d.len();
    let mut b = CVector::zeros(l);
    let mut q_mat = CMatrix::zeros(l, l);
    let mut constant = 0.0;
    let ln2 = std::f64::consts::LN_2;
    for (k, q) in quads.iter().enumerate() {
        let t = aux.tau[k];
        let u = aux.upsilon[k];
        let scale = 2.0 * (1.0 + t).sqrt() / ln2;
        let (a2, c2, b2d) = q.common_denominator();
        // 2 sqrt(1+t) Re(conj(u) h^H w_k) / ln2: psi-linear part.
        b += q.v[k + 1].map(|x| x.conj() * (u * scale));
        // -|u|^2 / ln2 * (total power + noise): linear and quadratic parts.
        let u2 = u.norm_sqr() / ln2;
        b -= &c2 * Complex64::new(u2, 0.0);
        q_mat += &b2d * Complex64::new(u2, 0.0);
        constant +=
            (1.0 + t).log2() - t / ln2 + scale * (u.conj() * q.a[k + 1]).re - u2 * a2;
    }
    ObjectiveForms { b, q: q_mat, constant }
}

/// Diagonal reflect-power matrix: `psi^H pi psi` is the amplifier output
/// power of the active RIS.
pub fn power_matrix(ch: &ChannelSet, design: &TransmitDesign, sigma_z2: f64) -> CMatrix {
    let l = ch.num_elements();
    let mut diag = RVector::from_element(l, sigma_z2);
    for w in std::iter::once(&design.w0).chain(design.w.iter()) {
        let gw = &ch.bs_ris * w;
        for i in 0..l {
            diag[i] += gw[i].norm_sqr();
        }
    }
    CMatrix::from_fn(l, l, |r, c| {
        if r == c {
            Complex64::new(diag[r], 0.0)
        } else {
            Complex64::default()
        }
    })
}

/// Per-iteration record of one RIS update.
#[derive(Debug, Clone)]
pub struct RisTrace {
    pub objectives: Vec<f64>,
    pub iterations: usize,
    pub degraded: bool,
}

fn embed_point(psi: &CVector) -> Vec<f64> {
    let l = psi.len();
    let mut x = vec![0.0; 2 * l];
    for i in 0..l {
        x[i] = psi[i].re;
        x[i + l] = psi[i].im;
    }
    x
}

fn unembed_point(x: &[f64]) -> CVector {
    let l = x.len() / 2;
    CVector::from_fn(l, |i, _| Complex64::new(x[i], x[i + l]))
}

/// Add a convexified `psi^H m psi + Re(psi^H n) >= rhs` to the program:
/// split the embedded form into PSD parts, keep the concave side exact, and
/// minorize the convex side by its tangent at `x0`.
fn add_qos_constraint(
    p: &mut ConvexProgram,
    con: &QcqpConstraint,
    x0: &[f64],
) -> Result<()> {
    let (s, lin) = real_embed(&con.m, &con.n)?;
    let (plus, minus) = psd_split(&s);
    let n2 = s.nrows();
    // tangent of x^T plus x at x0: 2 x0^T plus x - x0^T plus x0
    let px0 = &plus * RVector::from_column_slice(x0);
    let x0px0: f64 = x0.iter().zip(px0.iter()).map(|(a, b)| a * b).sum();
    let mut bound = Affine::constant(-x0px0 - con.rhs);
    for i in 0..n2 {
        bound = bound.term(i, 2.0 * px0[i] + lin[i]);
    }
    let rows: Vec<Affine> = psd_factor_rows(&minus)
        .into_iter()
        .map(|r| {
            let mut a = Affine::default();
            for (i, c) in r.iter().enumerate() {
                a = a.term(i, *c);
            }
            a
        })
        .collect();
    p.add(Constraint::SumSquaresLe { rows, bound });
    Ok(())
}

/// Probe uniform amplitude rescalings of an active RIS vector from the
/// reflect-power boundary downward; returns the first feasible scaling that
/// beats `best`, if any.
pub(crate) fn amplitude_rescale(
    ch: &ChannelSet,
    design: &TransmitDesign,
    psi: &RisVector,
    best: f64,
    cfg: &ScenarioConfig,
) -> Result<Option<(RisVector, f64)>> {
    if psi.mode != RisMode::Active {
        return Ok(None);
    }
    let used = crate::rates::ris_power_used(ch, psi, design, cfg.sigma_z2);
    if used <= 0.0 {
        return Ok(None);
    }
    let c_max = (cfg.p_a_max / used).sqrt();
    for step in 0..24 {
        let c = c_max * (1.0 - 1e-9) * 0.9f64.powi(step);
        let candidate = RisVector {
            psi: psi.psi.scale(c),
            mode: psi.mode,
        };
        let report = evaluate(ch, &candidate, design, cfg)?;
        if report.feasible && report.sum_rate > best {
            return Ok(Some((candidate, report.sum_rate)));
        }
    }
    Ok(None)
}

/// One block-coordinate RIS step: iterate closed-form slack updates and
/// convex QCQP solves from `psi_prev`, returning a vector that never
/// degrades the evaluated sum-rate or feasibility of the full design.
pub fn ris_update(
    ch: &ChannelSet,
    design: &TransmitDesign,
    psi_prev: &RisVector,
    cfg: &ScenarioConfig,
    common: bool,
) -> Result<(RisVector, RisTrace)> {
    let l = ch.num_elements();
    let mut psi = psi_prev.clone();
    let mut trace = RisTrace {
        objectives: Vec::new(),
        iterations: 0,
        degraded: false,
    };
    let mut best = evaluate(ch, &psi, design, cfg)?.sum_rate;

    // The slack-update iteration grows the amplification only slowly when the
    // optimum sits near the reflect-power boundary, so probe uniform
    // amplitude rescalings first (power is exactly quadratic in psi for
    // fixed beams) and keep the best feasible one as the starting point.
    if let Some((boosted, rate)) = amplitude_rescale(ch, design, &psi, best, cfg)? {
        psi = boosted;
        best = rate;
    }

    let quads_raw: Vec<UserQuadratics> = (0..cfg.k)
        .map(|k| assemble_user_quadratics(ch, design, k, cfg))
        .collect::<Result<_>>()?;
    let pi = power_matrix(ch, design, cfg.sigma_z2);
    let (pi_s, _) = real_embed(&pi, &CVector::zeros(l))?;
    let pi_rows: Vec<Affine> = psd_factor_rows(&pi_s)
        .into_iter()
        .map(|r| {
            let mut a = Affine::default();
            for (i, c) in r.iter().enumerate() {
                a = a.term(i, *c);
            }
            a
        })
        .collect();

    for _ in 0..cfg.max_inner {
        // Normalize each user's forms by its current total noise so the
        // QCQP is well conditioned regardless of the physical noise floor.
        let quads: Vec<UserQuadratics> = (0..cfg.k)
            .map(|k| {
                let n = dynamic_noise(ch, &psi, k, cfg.sigma_z2) + cfg.sigma_k2;
                quads_raw[k].normalized(n)
            })
            .collect();
        let aux = closed_form_aux(&quads, &psi.psi);
        let obj = objective_forms(&quads, &aux);
        let cons = constraint_forms(&quads, design, cfg.r_min, common);
        let x0 = embed_point(&psi.psi);

        let mut p = ConvexProgram::new(2 * l);
        let (mut q_s, b_lin) = real_embed(&obj.q, &obj.b)?;
        p.linear = b_lin.iter().copied().collect();
        // Proximal damping: the objective is often nearly flat along whole
        // subspaces of psi, and without it the solver jumps to a far-away
        // point of the flat set on every call, making the outer alternation
        // zigzag indefinitely. A tiny quadratic pull toward the current
        // iterate selects the nearest near-optimal point instead; it vanishes
        // at any fixed point, so limits are unchanged.
        let n2 = q_s.nrows();
        let mu = 1e-4 * (0..n2).map(|i| q_s[(i, i)]).sum::<f64>().abs().max(1e-12) / n2 as f64;
        for i in 0..n2 {
            q_s[(i, i)] += mu;
            p.linear[i] += 2.0 * mu * x0[i];
        }
        p.quadratic = Some(q_s);
        for con in &cons {
            add_qos_constraint(&mut p, con, &x0)?;
        }
        match psi.mode {
            RisMode::Active => {
                p.add(Constraint::SumSquaresLe {
                    rows: pi_rows.clone(),
                    bound: Affine::constant(cfg.p_a_max),
                });
            }
            RisMode::Passive => {
                for i in 0..l {
                    p.add(Constraint::SumSquaresLe {
                        rows: vec![Affine::var(i), Affine::var(i + l)],
                        bound: Affine::constant(1.0),
                    });
                }
            }
        }

        let sol = match solve(&p, cfg.solver_tol) {
            Ok(s) => s,
            Err(_) => {
                trace.degraded = true;
                break;
            }
        };
        if sol.status != SolveStatus::Optimal {
            trace.degraded = true;
            break;
        }
        let mut candidate = RisVector {
            psi: unembed_point(&sol.x),
            mode: psi.mode,
        };
        if candidate.mode == RisMode::Passive {
            // Relax-and-project: snap each element back to unit modulus.
            for v in candidate.psi.iter_mut() {
                *v = if v.norm() > 0.0 {
                    *v / v.norm()
                } else {
                    Complex64::new(1.0, 0.0)
                };
            }
        }

        let mut report = evaluate(ch, &candidate, design, cfg)?;
        trace.iterations += 1;
        let mut accepted = report.feasible && report.sum_rate >= best;
        if accepted {
            // The slack-update steps are short and nearly collinear, so
            // extrapolate along the accepted step as far as it keeps paying
            // off, re-boosting to the power boundary after each move.
            let dir = &candidate.psi - &psi.psi;
            let mut t = 2.0;
            while t <= 1048576.0 {
                let mut probe = RisVector {
                    psi: &psi.psi + dir.scale(t),
                    mode: candidate.mode,
                };
                if probe.mode == RisMode::Passive {
                    for v in probe.psi.iter_mut() {
                        *v = if v.norm() > 0.0 {
                            *v / v.norm()
                        } else {
                            Complex64::new(1.0, 0.0)
                        };
                    }
                } else if let Some((boosted, _)) =
                    amplitude_rescale(ch, design, &probe, f64::NEG_INFINITY, cfg)?
                {
                    probe = boosted;
                }
                let probe_report = evaluate(ch, &probe, design, cfg)?;
                if probe_report.feasible && probe_report.sum_rate > report.sum_rate {
                    candidate = probe;
                    report = probe_report;
                    t *= 2.0;
                } else {
                    break;
                }
            }
            if let Some((boosted, _)) =
                amplitude_rescale(ch, design, &candidate, report.sum_rate, cfg)?
            {
                candidate = boosted;
                report = evaluate(ch, &candidate, design, cfg)?;
            }
            accepted = report.feasible && report.sum_rate >= best;
        }
        if accepted {
            let improvement = report.sum_rate - best;
            psi = candidate;
            best = report.sum_rate;
            trace.objectives.push(best);
            if improvement < cfg.eps_inner {
                break;
            }
        } else {
            trace.objectives.push(best);
            break;
        }
    }

    Ok((psi, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{equivalent_channel, generate_channels};
    use crate::rates::sinrs;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use rand_distr::StandardNormal;

    fn cfg_small() -> ScenarioConfig {
        ScenarioConfig {
            k: 2,
            n_t: 3,
            l: 4,
            ..ScenarioConfig::default()
        }
    }

    fn random_cvec(n: usize, rng: &mut ChaCha12Rng, scale: f64) -> CVector {
        CVector::from_fn(n, |_, _| {
            Complex64::new(
                scale * rng.sample::<f64, _>(StandardNormal),
                scale * rng.sample::<f64, _>(StandardNormal),
            )
        })
    }

    fn random_setup(
        cfg: &ScenarioConfig,
        seed: u64,
        psi_scale: f64,
    ) -> (ChannelSet, TransmitDesign, RisVector) {
        let ch = generate_channels(cfg, seed).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x5a5a);
        let design = TransmitDesign {
            w0: random_cvec(cfg.n_t, &mut rng, 1.0),
            w: (0..cfg.k).map(|_| random_cvec(cfg.n_t, &mut rng, 1.0)).collect(),
            r_c: (0..cfg.k).map(|_| rng.random::<f64>() * 0.05).collect(),
        };
        let psi = RisVector {
            psi: random_cvec(cfg.l, &mut rng, psi_scale),
            mode: RisMode::Active,
        };
        (ch, design, psi)
    }

    #[test]
    fn beam_powers_reconstruct_from_forms() {
        let cfg = cfg_small();
        for seed in 0..10 {
            let (ch, design, psi) = random_setup(&cfg, seed, 50.0);
            for k in 0..cfg.k {
                let q = assemble_user_quadratics(&ch, &design, k, &cfg).unwrap();
                let h = equivalent_channel(&ch, &psi, k).unwrap();
                for (i, w) in
                    std::iter::once(&design.w0).chain(design.w.iter()).enumerate()
                {
                    let direct = h.dotc(w).norm_sqr();
                    let (a, c, b) = q.beam_form(i);
                    let via = eval_form(a, &c, &b, &psi.psi);
                    assert_relative_eq!(direct, via, max_relative = 1e-9);
                    // inner product itself must also match
                    let inner = q.inner(i, &psi.psi);
                    assert_relative_eq!(h.dotc(w).re, inner.re, max_relative = 1e-9);
                    assert_relative_eq!(h.dotc(w).im, inner.im, max_relative = 1e-9);
                }
            }
        }
    }

    #[test]
    fn sinr_denominators_reconstruct_from_forms() {
        let cfg = cfg_small();
        for seed in 0..10 {
            let (ch, design, psi) = random_setup(&cfg, seed, 50.0);
            let (gamma_c, gamma_p) =
                sinrs(&ch, &psi, &design, cfg.sigma_z2, cfg.sigma_k2).unwrap();
            for k in 0..cfg.k {
                let q = assemble_user_quadratics(&ch, &design, k, &cfg).unwrap();
                let (a1, c1, b1) = q.beam_form(k + 1);
                let (e, j, f) = q.private_denominator(k + 1);
                let gp = eval_form(a1, &c1, &b1, &psi.psi) / eval_form(e, &j, &f, &psi.psi);
                assert_relative_eq!(gp, gamma_p[k], max_relative = 1e-9);
                let (a1c, c1c, b1c) = q.beam_form(0);
                let (a2, c2, b2) = q.common_denominator();
                let gc =
                    eval_form(a1c, &c1c, &b1c, &psi.psi) / eval_form(a2, &c2, &b2, &psi.psi);
                assert_relative_eq!(gc, gamma_c[k], max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn fp_transforms_are_tight_at_closed_form_slacks() {
        let cfg = cfg_small();
        for seed in 0..10 {
            let (ch, design, psi) = random_setup(&cfg, seed, 20.0);
            let quads: Vec<UserQuadratics> = (0..cfg.k)
                .map(|k| assemble_user_quadratics(&ch, &design, k, &cfg).unwrap())
                .collect();
            let aux = closed_form_aux(&quads, &psi.psi);
            let (_, gamma_p) = sinrs(&ch, &psi, &design, cfg.sigma_z2, cfg.sigma_k2).unwrap();
            let sum_private: f64 = gamma_p.iter().map(|g| (1.0 + g).log2()).sum();
            let (f1, f2) = eval_f1_f2(&quads, &psi.psi, &aux);
            assert_relative_eq!(f1, sum_private, max_relative = 1e-9);
            assert_relative_eq!(f2, f1, max_relative = 1e-9);
            for (t, g) in aux.tau.iter().zip(gamma_p.iter()) {
                assert_relative_eq!(t, g, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn fp_slacks_maximize_the_transforms() {
        // Perturbing tau or upsilon away from the closed form can only
        // lower f1 / f2.
        let cfg = cfg_small();
        let (ch, design, psi) = random_setup(&cfg, 3, 20.0);
        let quads: Vec<UserQuadratics> = (0..cfg.k)
            .map(|k| assemble_user_quadratics(&ch, &design, k, &cfg).unwrap())
            .collect();
        let aux = closed_form_aux(&quads, &psi.psi);
        let (f1_star, f2_star) = eval_f1_f2(&quads, &psi.psi, &aux);
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        for _ in 0..50 {
            let mut perturbed = aux.clone();
            for t in perturbed.tau.iter_mut() {
                *t *= 1.0 + 0.5 * (rng.random::<f64>() - 0.5);
            }
            let (f1p, _) = eval_f1_f2(&quads, &psi.psi, &perturbed);
            assert!(f1p <= f1_star + 1e-9);
            let mut perturbed = aux.clone();
            for u in perturbed.upsilon.iter_mut() {
                *u *= Complex64::new(1.0 + 0.3 * (rng.random::<f64>() - 0.5), 0.1);
            }
            let (_, f2p) = eval_f1_f2(&quads, &psi.psi, &perturbed);
            assert!(f2p <= f2_star + 1e-9);
        }
    }

    #[test]
    fn objective_forms_match_literal_f2() {
        let cfg = cfg_small();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for seed in 0..10 {
            let (ch, design, psi) = random_setup(&cfg, seed, 20.0);
            let quads: Vec<UserQuadratics> = (0..cfg.k)
                .map(|k| assemble_user_quadratics(&ch, &design, k, &cfg).unwrap())
                .collect();
            let aux = closed_form_aux(&quads, &psi.psi);
            let obj = objective_forms(&quads, &aux);
            // at the expansion point and at fresh random points
            let (_, f2) = eval_f1_f2(&quads, &psi.psi, &aux);
            assert_relative_eq!(obj.eval(&psi.psi), f2, max_relative = 1e-9);
            for _ in 0..5 {
                let other = random_cvec(cfg.l, &mut rng, 30.0);
                let (_, f2o) = eval_f1_f2(&quads, &other, &aux);
                assert_relative_eq!(obj.eval(&other), f2o, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn constraint_forms_agree_with_sinr_thresholds() {
        let cfg = ScenarioConfig {
            r_min: 0.8,
            ..cfg_small()
        };
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        for seed in 0..10 {
            let (ch, design, _) = random_setup(&cfg, seed, 20.0);
            let quads: Vec<UserQuadratics> = (0..cfg.k)
                .map(|k| assemble_user_quadratics(&ch, &design, k, &cfg).unwrap())
                .collect();
            let cons = constraint_forms(&quads, &design, cfg.r_min, true);
            assert_eq!(cons.len(), 2 * cfg.k);
            for _ in 0..5 {
                let psi = RisVector {
                    psi: random_cvec(cfg.l, &mut rng, 20.0),
                    mode: RisMode::Active,
                };
                let (gamma_c, gamma_p) =
                    sinrs(&ch, &psi, &design, cfg.sigma_z2, cfg.sigma_k2).unwrap();
                let gamma0 = 2f64.powf(design.sum_rc()) - 1.0;
                for k in 0..cfg.k {
                    let tp = 2f64.powf(cfg.r_min - design.r_c[k]) - 1.0;
                    let private_ok = gamma_p[k] >= tp;
                    let common_ok = gamma_c[k] >= gamma0;
                    assert_eq!(
                        cons[2 * k].margin(&psi.psi) >= 0.0,
                        private_ok,
                        "private margin sign mismatch"
                    );
                    assert_eq!(
                        cons[2 * k + 1].margin(&psi.psi) >= 0.0,
                        common_ok,
                        "common margin sign mismatch"
                    );
                }
            }
        }
    }

    #[test]
    fn normalization_preserves_ratios_and_margins() {
        let cfg = cfg_small();
        let (ch, design, psi) = random_setup(&cfg, 9, 20.0);
        let q = assemble_user_quadratics(&ch, &design, 0, &cfg).unwrap();
        let qn = q.normalized(3.7e-11);
        let (a1, c1, b1) = q.beam_form(1);
        let (e, j, f) = q.private_denominator(1);
        let g = eval_form(a1, &c1, &b1, &psi.psi) / eval_form(e, &j, &f, &psi.psi);
        let (a1n, c1n, b1n) = qn.beam_form(1);
        let (en, jn, fn_) = qn.private_denominator(1);
        let gn = eval_form(a1n, &c1n, &b1n, &psi.psi) / eval_form(en, &jn, &fn_, &psi.psi);
        assert_relative_eq!(g, gn, max_relative = 1e-9);
    }

    #[test]
    fn power_matrix_matches_power_evaluation() {
        let cfg = cfg_small();
        for seed in 0..10 {
            let (ch, design, psi) = random_setup(&cfg, seed, 80.0);
            let pi = power_matrix(&ch, &design, cfg.sigma_z2);
            let via = (psi.psi.adjoint() * &pi * &psi.psi)[(0, 0)].re;
            let direct = crate::rates::ris_power_used(&ch, &psi, &design, cfg.sigma_z2);
            assert_relative_eq!(via, direct, max_relative = 1e-12);
        }
    }

    #[test]
    fn ris_update_never_degrades_the_objective() {
        let cfg = ScenarioConfig {
            max_inner: 8,
            ..ScenarioConfig::default()
        };
        for seed in 0..3 {
            let ch = generate_channels(&cfg, seed).unwrap();
            let mut rng = ChaCha12Rng::seed_from_u64(seed + 41);
            let psi0 = RisVector {
                psi: CVector::from_fn(cfg.l, |_, _| {
                    Complex64::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU)
                }),
                mode: RisMode::Active,
            };
            let init = crate::sca::init_point(&ch, &psi0, &cfg, true).unwrap();
            let (design, _) =
                crate::sca::sca_solve(&ch, &psi0, init, &cfg, Default::default()).unwrap();
            let before = evaluate(&ch, &psi0, &design, &cfg).unwrap();
            assert!(before.feasible);
            let (psi1, trace) = ris_update(&ch, &design, &psi0, &cfg, true).unwrap();
            let after = evaluate(&ch, &psi1, &design, &cfg).unwrap();
            assert!(after.feasible, "seed {seed}: {:?}", after.residuals);
            assert!(
                after.sum_rate >= before.sum_rate - 1e-9,
                "seed {seed}: {} < {}",
                after.sum_rate,
                before.sum_rate
            );
            for w in trace.objectives.windows(2) {
                assert!(w[1] >= w[0] - 1e-12);
            }
        }
    }

    #[test]
    fn passive_update_keeps_unit_modulus() {
        let cfg = ScenarioConfig {
            max_inner: 5,
            ..ScenarioConfig::default()
        };
        let ch = generate_channels(&cfg, 2).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(43);
        let psi0 = RisVector {
            psi: CVector::from_fn(cfg.l, |_, _| {
                Complex64::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU)
            }),
            mode: RisMode::Passive,
        };
        let init = crate::sca::init_point(&ch, &psi0, &cfg, true).unwrap();
        let (design, _) =
            crate::sca::sca_solve(&ch, &psi0, init, &cfg, Default::default()).unwrap();
        let before = evaluate(&ch, &psi0, &design, &cfg).unwrap().sum_rate;
        let (psi1, _) = ris_update(&ch, &design, &psi0, &cfg, true).unwrap();
        psi1.validate().unwrap();
        let after = evaluate(&ch, &psi1, &design, &cfg).unwrap().sum_rate;
        assert!(after >= before - 1e-9);
    }

    #[test]
    fn single_element_single_user_matches_grid_search() {
        // L = 1, K = 1: brute-force the complex reflect coefficient over a
        // dense magnitude x phase grid and compare against the update.
        let cfg = ScenarioConfig {
            k: 1,
            n_t: 2,
            l: 1,
            alpha_bu: vec![2.0],
            r_min: 0.0,
            max_inner: 25,
            ..ScenarioConfig::default()
        };
        let ch = generate_channels(&cfg, 5).unwrap();
        let psi0 = RisVector {
            psi: CVector::from_element(1, Complex64::new(1.0, 0.0)),
            mode: RisMode::Active,
        };
        let init = crate::sca::init_point(&ch, &psi0, &cfg, false).unwrap();
        let opts = crate::sca::ScaOptions { common: false };
        let (design, _) = crate::sca::sca_solve(&ch, &psi0, init, &cfg, opts).unwrap();
        let (psi1, _) = ris_update(&ch, &design, &psi0, &cfg, false).unwrap();
        let achieved = evaluate(&ch, &psi1, &design, &cfg).unwrap().sum_rate;

        let pi = power_matrix(&ch, &design, cfg.sigma_z2)[(0, 0)].re;
        let p_max = (cfg.p_a_max / pi).sqrt();
        let mut best = f64::NEG_INFINITY;
        for ip in 0..100 {
            let r = p_max * (ip as f64 + 1.0) / 100.0;
            for it in 0..100 {
                let th = std::f64::consts::TAU * it as f64 / 100.0;
                let cand = RisVector {
                    psi: CVector::from_element(1, Complex64::from_polar(r, th)),
                    mode: RisMode::Active,
                };
                let rep = evaluate(&ch, &cand, &design, &cfg).unwrap();
                if rep.feasible && rep.sum_rate > best {
                    best = rep.sum_rate;
                }
            }
        }
        assert!(
            achieved >= best - 0.05,
            "update reached {achieved}, grid found {best}"
        );
    }
}
