//! Joint beamforming and common-rate-allocation subproblem for a fixed RIS
//! precoder, solved by successive convex approximation.
//!
//! Each iteration linearizes the two nonconvex couplings at the previous
//! point: the geometric-mean bound `Re(h^H w_k) >= sqrt(beta xi)` via a
//! first-order Taylor minorant, and the product `lambda kappa` via its
//! difference-of-convex upper bound. The resulting convex program is handed
//! to the conic backend; the surrogate objective is non-decreasing across
//! iterations.

use crate::channel::{equivalent_channel, ChannelSet};
use crate::config::ScenarioConfig;
use crate::rates::{dynamic_noise, evaluate, ris_power_used, RisVector, TransmitDesign};
use crate::solver::{solve, Affine, Constraint, ConvexProgram, SolveStatus};
use crate::{CVector, Error, Result};
use num_complex::Complex64;

/// Slack variables of the convexified subproblem, kept consistent with the
/// linearization point.
#[derive(Debug, Clone)]
pub struct ScaAuxiliaries {
    /// Private-SINR slacks (xi).
    pub xi: Vec<f64>,
    /// Common-SINR slacks (kappa).
    pub kappa: Vec<f64>,
    /// Private interference-plus-noise bounds (beta).
    pub beta: Vec<f64>,
    /// Total received power bounds (lambda).
    pub lambda: Vec<f64>,
}

/// Per-iteration record of one SCA solve.
#[derive(Debug, Clone)]
pub struct ScaTrace {
    pub objectives: Vec<f64>,
    pub statuses: Vec<SolveStatus>,
    pub max_residuals: Vec<f64>,
    pub iterations: usize,
    /// Set when the solver failed and the last feasible iterate was returned.
    pub degraded: bool,
}

impl ScaTrace {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["iteration", "objective", "max_residual", "status"])?;
        for i in 0..self.objectives.len() {
            wtr.write_record([
                (i + 1).to_string(),
                format!("{:.12e}", self.objectives[i]),
                format!("{:.3e}", self.max_residuals[i]),
                format!("{:?}", self.statuses[i]),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Variable layout of the subproblem: real/imag beam parts for beams
/// `0..=K`, then `r_c`, `xi`, `beta`, `kappa`, `lambda`.
#[derive(Debug, Clone, Copy)]
pub struct Layout {
    pub n_t: usize,
    pub k: usize,
}

impl Layout {
    pub fn beam_re(&self, beam: usize, j: usize) -> usize {
        beam * 2 * self.n_t + j
    }
    pub fn beam_im(&self, beam: usize, j: usize) -> usize {
        beam * 2 * self.n_t + self.n_t + j
    }
    fn scalars_base(&self) -> usize {
        (self.k + 1) * 2 * self.n_t
    }
    pub fn rc(&self, k: usize) -> usize {
        self.scalars_base() + k
    }
    pub fn xi(&self, k: usize) -> usize {
        self.scalars_base() + self.k + k
    }
    pub fn beta(&self, k: usize) -> usize {
        self.scalars_base() + 2 * self.k + k
    }
    pub fn kappa(&self, k: usize) -> usize {
        self.scalars_base() + 3 * self.k + k
    }
    pub fn lambda(&self, k: usize) -> usize {
        self.scalars_base() + 4 * self.k + k
    }
    pub fn n(&self) -> usize {
        self.scalars_base() + 5 * self.k
    }

    /// Affine for `Re(sum_j c_j w_{beam,j})`.
    fn lin_re(&self, c: &CVector, beam: usize) -> Affine {
        let mut a = Affine::default();
        for (j, cj) in c.iter().enumerate() {
            a = a.term(self.beam_re(beam, j), cj.re).term(self.beam_im(beam, j), -cj.im);
        }
        a
    }

    /// Affine for `Im(sum_j c_j w_{beam,j})`.
    fn lin_im(&self, c: &CVector, beam: usize) -> Affine {
        let mut a = Affine::default();
        for (j, cj) in c.iter().enumerate() {
            a = a.term(self.beam_re(beam, j), cj.im).term(self.beam_im(beam, j), cj.re);
        }
        a
    }

    /// Affine pair for `h^H w_beam` (the coefficient vector is `conj(h)`).
    fn inner_re_im(&self, h: &CVector, beam: usize) -> (Affine, Affine) {
        let c = h.map(|v| v.conj());
        (self.lin_re(&c, beam), self.lin_im(&c, beam))
    }

    pub fn extract_design(&self, x: &[f64]) -> TransmitDesign {
        let beam = |b: usize| {
            CVector::from_fn(self.n_t, |j, _| {
                Complex64::new(x[self.beam_re(b, j)], x[self.beam_im(b, j)])
            })
        };
        TransmitDesign {
            w0: beam(0),
            w: (1..=self.k).map(beam).collect(),
            r_c: (0..self.k).map(|k| x[self.rc(k)].max(0.0)).collect(),
        }
    }

    /// Recover physical-unit auxiliaries; `beta` is solved noise-normalized
    /// and `lambda` noise-and-scale-normalized for conditioning.
    fn extract_aux(
        &self,
        x: &[f64],
        noise: &[f64],
        lscales: &[f64],
        bscales: &[f64],
    ) -> ScaAuxiliaries {
        ScaAuxiliaries {
            xi: (0..self.k).map(|k| x[self.xi(k)]).collect(),
            kappa: (0..self.k).map(|k| x[self.kappa(k)]).collect(),
            beta: (0..self.k)
                .map(|k| x[self.beta(k)] * noise[k] * bscales[k])
                .collect(),
            lambda: (0..self.k)
                .map(|k| x[self.lambda(k)] * noise[k] * lscales[k])
                .collect(),
        }
    }
}

fn equivalent_channels(ch: &ChannelSet, psi: &RisVector) -> Result<Vec<CVector>> {
    (0..ch.num_users())
        .map(|k| equivalent_channel(ch, psi, k))
        .collect()
}

fn per_user_noise(ch: &ChannelSet, psi: &RisVector, cfg: &ScenarioConfig) -> Vec<f64> {
    (0..ch.num_users())
        .map(|k| dynamic_noise(ch, psi, k, cfg.sigma_z2) + cfg.sigma_k2)
        .collect()
}

/// Per-user scale of the lambda slack: its expansion value in noise units,
/// floored at 1 so degenerate points stay well-defined.
fn lambda_scales(aux: &ScaAuxiliaries, noise: &[f64]) -> Vec<f64> {
    aux.lambda
        .iter()
        .zip(noise.iter())
        .map(|(l, n)| (l / n).max(1.0))
        .collect()
}

/// Same idea for the beta slack, which reaches interference scale.
fn beta_scales(aux: &ScaAuxiliaries, noise: &[f64]) -> Vec<f64> {
    aux.beta
        .iter()
        .zip(noise.iter())
        .map(|(b, n)| (b / n).max(1.0))
        .collect()
}

/// Construct a feasible starting point: matched-filter private beams sharing
/// 80% of the BS budget, the common beam along the user-channel sum at 20%,
/// downscaled if the RIS power budget requires it, with the common rate split
/// evenly under the decodability cap and the slacks tight at the point.
///
/// `common = false` builds the SDMA variant: no common beam, full budget on
/// the private beams, `r_c = 0`.
pub fn init_point(
    ch: &ChannelSet,
    psi: &RisVector,
    cfg: &ScenarioConfig,
    common: bool,
) -> Result<(TransmitDesign, ScaAuxiliaries)> {
    let h = equivalent_channels(ch, psi)?;
    let k_users = cfg.k;
    let static_part = psi.norm_sqr() * cfg.sigma_z2;
    if static_part > cfg.p_a_max {
        return Err(Error::InfeasibleStart(format!(
            "RIS dynamic-noise power {static_part:.3e} alone exceeds the budget"
        )));
    }

    // A common beam is not always useful at the start, and zeroing it stays
    // inside the feasible set, so try both splits and keep the better one.
    let splits: &[f64] = if common { &[0.2, 0.0] } else { &[0.0] };
    let mut best: Option<(TransmitDesign, f64, bool)> = None;
    for &common_share in splits {
        let private_budget = (1.0 - common_share) * cfg.p_bs_max;
        let mut design = TransmitDesign::zeros(cfg.n_t, k_users);
        for k in 0..k_users {
            let norm = h[k].norm();
            if norm <= 0.0 {
                return Err(Error::Domain("zero equivalent channel".into()));
            }
            design.w[k] =
                &h[k] * Complex64::new((private_budget / k_users as f64).sqrt() / norm, 0.0);
        }
        if common_share > 0.0 {
            let sum: CVector = h.iter().fold(CVector::zeros(cfg.n_t), |acc, hk| acc + hk);
            let norm = sum.norm();
            if norm > 0.0 {
                design.w0 = sum * Complex64::new((common_share * cfg.p_bs_max).sqrt() / norm, 0.0);
            }
        }

        // Downscale uniformly until the RIS reflect-power budget holds.
        let used = ris_power_used(ch, psi, &design, cfg.sigma_z2);
        if used > cfg.p_a_max {
            let scale =
                ((cfg.p_a_max - static_part) / (used - static_part)).sqrt() * (1.0 - 1e-9);
            let c = Complex64::new(scale, 0.0);
            design.w0 *= c;
            for w in design.w.iter_mut() {
                *w *= c;
            }
        }

        let report = evaluate(ch, psi, &design, cfg)?;
        if common {
            let cap = report.r_c_rate.iter().fold(f64::INFINITY, |a, &b| a.min(b));
            let share = (cap / k_users as f64).max(0.0);
            design.r_c = vec![share; k_users];
        }

        let report = evaluate(ch, psi, &design, cfg)?;
        let qos_ok = report
            .residuals
            .qos
            .iter()
            .all(|res| *res <= crate::rates::FEAS_TOL);
        let better = match &best {
            None => true,
            Some((_, rate, ok)) => {
                (qos_ok && !*ok) || (qos_ok == *ok && report.sum_rate > *rate)
            }
        };
        if better {
            best = Some((design, report.sum_rate, qos_ok));
        }
    }
    let (design, _, qos_ok) = best.expect("at least one candidate split");
    if !qos_ok {
        let report = evaluate(ch, psi, &design, cfg)?;
        for (k, res) in report.residuals.qos.iter().enumerate() {
            if *res > crate::rates::FEAS_TOL {
                return Err(Error::InfeasibleStart(format!(
                    "user {k} cannot reach R_min = {} at the starting point (short by {res:.3e})",
                    cfg.r_min
                )));
            }
        }
    }
    let report = evaluate(ch, psi, &design, cfg)?;

    let noise = per_user_noise(ch, psi, cfg);
    let mut aux = ScaAuxiliaries {
        xi: report.gamma_p.clone(),
        kappa: report.gamma_c.clone(),
        beta: Vec::with_capacity(k_users),
        lambda: Vec::with_capacity(k_users),
    };
    for k in 0..k_users {
        let own = h[k].dotc(&design.w[k]).norm_sqr();
        let total: f64 = design.w.iter().map(|w| h[k].dotc(w).norm_sqr()).sum();
        aux.beta.push(total - own + noise[k]);
        aux.lambda.push(total + noise[k]);
    }
    Ok((design, aux))
}

/// Options of one subproblem build.
#[derive(Debug, Clone, Copy)]
pub struct ScaOptions {
    /// Include the common stream and rate shares (RSMA); `false` is SDMA.
    pub common: bool,
}

impl Default for ScaOptions {
    fn default() -> Self {
        Self { common: true }
    }
}

/// Emit the convex subproblem linearized at `(prev, aux)`.
///
/// `prev` private beams must already be phase-rotated so that `h_k^H w_k`
/// is real nonnegative (see [`rotate_beams`]); the rotation leaves every
/// SINR unchanged.
pub fn build_subproblem(
    ch: &ChannelSet,
    psi: &RisVector,
    prev: &TransmitDesign,
    aux: &ScaAuxiliaries,
    cfg: &ScenarioConfig,
    opts: ScaOptions,
) -> Result<ConvexProgram> {
    let layout = Layout { n_t: cfg.n_t, k: cfg.k };
    let h = equivalent_channels(ch, psi)?;
    let noise = per_user_noise(ch, psi, cfg);
    // Normalize each user's channel by its noise so the interior-point
    // solver never sees the raw 1e-11 W noise floor next to watt-scale
    // powers; the beta/lambda slacks become noise-normalized too.
    let hn: Vec<CVector> = (0..cfg.k)
        .map(|k| &h[k] * Complex64::new(1.0 / noise[k].sqrt(), 0.0))
        .collect();
    // In interference-limited scenarios beta and lambda sit orders of
    // magnitude above the O(1) slacks, which wrecks the conditioning of the
    // expansions below; scale both per user so their expansion values are 1.
    let scales = lambda_scales(aux, &noise);
    let bscales = beta_scales(aux, &noise);

    for k in 0..cfg.k {
        if aux.xi[k] <= 0.0 || aux.beta[k] <= 0.0 {
            return Err(Error::DegenerateLinearization(format!(
                "xi or beta non-positive for user {k} (xi = {}, beta = {})",
                aux.xi[k], aux.beta[k]
            )));
        }
    }

    let mut p = ConvexProgram::new(layout.n());
    for k in 0..cfg.k {
        p.linear[layout.rc(k)] = 1.0;
        p.log_terms.push((1.0, Affine::var(layout.xi(k))));
        p.bounds[layout.rc(k)] = (Some(0.0), None); // (8h)
        p.bounds[layout.xi(k)] = (Some(0.0), None);
        p.bounds[layout.kappa(k)] = (Some(0.0), None);
        p.bounds[layout.beta(k)] = (Some(0.0), None);
        p.bounds[layout.lambda(k)] = (Some(0.0), None);
    }

    if !opts.common {
        // SDMA: no common stream, no rate shares.
        for j in 0..cfg.n_t {
            p.bounds[layout.beam_re(0, j)] = (Some(0.0), Some(0.0));
            p.bounds[layout.beam_im(0, j)] = (Some(0.0), Some(0.0));
        }
        for k in 0..cfg.k {
            p.bounds[layout.rc(k)] = (Some(0.0), Some(0.0));
            p.bounds[layout.kappa(k)] = (Some(0.0), Some(0.0));
            p.bounds[layout.lambda(k)] = (Some(0.0), Some(0.0));
        }
    }

    // (8d) BS power budget.
    let mut bs_rows = Vec::new();
    for b in 0..=cfg.k {
        for j in 0..cfg.n_t {
            bs_rows.push(Affine::var(layout.beam_re(b, j)));
            bs_rows.push(Affine::var(layout.beam_im(b, j)));
        }
    }
    p.add(Constraint::SumSquaresLe {
        rows: bs_rows.clone(),
        bound: Affine::constant(cfg.p_bs_max),
    });

    // RIS reflect-power budget in the beam variables (fixed psi). The exact
    // form sums ||diag(psi) G w_b||^2 over beams; the conservative
    // spectral-norm surrogate is available behind the config switch.
    let reflect_budget = cfg.p_a_max - psi.norm_sqr() * cfg.sigma_z2;
    if reflect_budget < 0.0 {
        return Err(Error::InfeasibleStart(
            "RIS dynamic-noise power exceeds the reflect budget".into(),
        ));
    }
    let psi_g = {
        let mut m = ch.bs_ris.clone();
        for l in 0..ch.num_elements() {
            let scale = psi.psi[l];
            for j in 0..cfg.n_t {
                m[(l, j)] *= scale;
            }
        }
        m
    };
    if cfg.surrogate_ris_power {
        let smax = psi_g.clone().singular_values().max();
        if smax > 0.0 {
            p.add(Constraint::SumSquaresLe {
                rows: bs_rows,
                bound: Affine::constant(reflect_budget / (smax * smax)),
            });
        }
    } else if psi_g.norm() > 0.0 {
        let mut rows = Vec::new();
        for b in 0..=cfg.k {
            for l in 0..ch.num_elements() {
                let c = CVector::from_iterator(cfg.n_t, psi_g.row(l).iter().copied());
                rows.push(layout.lin_re(&c, b));
                rows.push(layout.lin_im(&c, b));
            }
        }
        p.add(Constraint::SumSquaresLe {
            rows,
            bound: Affine::constant(reflect_budget),
        });
    }

    for k in 0..cfg.k {
        // (8g): xi_k >= 2^{R_min - r_c,k} - 1.
        p.add(Constraint::ExpLe {
            exponent: Affine::constant(cfg.r_min).term(layout.rc(k), -1.0),
            bound: Affine::var(layout.xi(k)).offset(1.0),
        });

        // (10): private interference + noise <= beta_k (in units of
        // noise * scale).
        let hb = &hn[k] * Complex64::new(1.0 / bscales[k].sqrt(), 0.0);
        let mut rows = Vec::new();
        for i in 0..cfg.k {
            if i == k {
                continue;
            }
            let (re, im) = layout.inner_re_im(&hb, i + 1);
            rows.push(re);
            rows.push(im);
        }
        p.add(Constraint::SumSquaresLe {
            rows,
            bound: Affine::var(layout.beta(k)).offset(-1.0 / bscales[k]),
        });

        // (11): tangent-plane restriction of sqrt(beta xi) at the expansion
        // point, with beta carrying its per-user scale.
        let (xi0, b0) = (aux.xi[k], aux.beta[k] / (noise[k] * bscales[k]));
        let s = bscales[k].sqrt();
        let root = s * (b0 * xi0).sqrt();
        let dxi = s * 0.5 * (b0 / xi0).sqrt();
        let dbeta = s * 0.5 * (xi0 / b0).sqrt();
        let (re_own, _) = layout.inner_re_im(&hn[k], k + 1);
        let mut c11 = Affine::constant(root - dxi * xi0 - dbeta * b0)
            .term(layout.xi(k), dxi)
            .term(layout.beta(k), dbeta);
        for (i, coeff) in re_own.coeffs {
            c11 = c11.term(i, -coeff);
        }
        p.add(Constraint::AffineLe(c11));

        if opts.common {
            // (8b): sum_i r_c,i <= log2(1 + kappa_k).
            let mut sum_rc = Affine::default();
            for i in 0..cfg.k {
                sum_rc = sum_rc.term(layout.rc(i), 1.0);
            }
            p.add(Constraint::ExpLe {
                exponent: sum_rc,
                bound: Affine::var(layout.kappa(k)).offset(1.0),
            });

            // (13): total received power + noise <= lambda_k (in units of
            // noise * scale).
            let hc = &hn[k] * Complex64::new(1.0 / scales[k].sqrt(), 0.0);
            let mut rows = Vec::new();
            for i in 0..cfg.k {
                let (re, im) = layout.inner_re_im(&hc, i + 1);
                rows.push(re);
                rows.push(im);
            }
            p.add(Constraint::SumSquaresLe {
                rows,
                bound: Affine::var(layout.lambda(k)).offset(-1.0 / scales[k]),
            });

            // (14): DC minorant of |h^H w0|^2 >= lambda kappa, convexified by
            // linearizing the -(lambda - kappa)^2 side at the expansion point:
            //   1/4 (lambda+kappa)^2 <= 2 Re(conj(a0) h^H w0) - |a0|^2
            //       + 1/2 (l0-k0)(lambda-kappa) - 1/4 (l0-k0)^2.
            let a0 = hc.dotc(&prev.w0);
            let diff0 = aux.lambda[k] / (noise[k] * scales[k]) - aux.kappa[k];
            let coeffs = hc.map(|v| v.conj() * a0.conj());
            let bound = layout
                .lin_re(&coeffs, 0)
                .scaled(2.0)
                .offset(-a0.norm_sqr() - 0.25 * diff0 * diff0)
                .term(layout.lambda(k), 0.5 * diff0)
                .term(layout.kappa(k), -0.5 * diff0);
            let row = Affine::default()
                .term(layout.lambda(k), 0.5)
                .term(layout.kappa(k), 0.5);
            p.add(Constraint::SumSquaresLe {
                rows: vec![row],
                bound,
            });
        }
    }

    Ok(p)
}

/// Pack a `(design, aux)` pair into the subproblem variable vector. `noise`
/// holds the per-user dynamic-plus-receiver noise powers; `beta`/`lambda`
/// enter the program noise-normalized.
pub fn pack_point(
    layout: &Layout,
    design: &TransmitDesign,
    aux: &ScaAuxiliaries,
    noise: &[f64],
) -> Vec<f64> {
    let lscales = lambda_scales(aux, noise);
    let bscales = beta_scales(aux, noise);
    let mut x = vec![0.0; layout.n()];
    let mut put = |b: usize, w: &CVector| {
        for j in 0..layout.n_t {
            x[layout.beam_re(b, j)] = w[j].re;
            x[layout.beam_im(b, j)] = w[j].im;
        }
    };
    put(0, &design.w0);
    for (k, w) in design.w.iter().enumerate() {
        put(k + 1, w);
    }
    for k in 0..layout.k {
        x[layout.rc(k)] = design.r_c[k];
        x[layout.xi(k)] = aux.xi[k];
        x[layout.beta(k)] = aux.beta[k] / (noise[k] * bscales[k]);
        x[layout.kappa(k)] = aux.kappa[k];
        x[layout.lambda(k)] = aux.lambda[k] / (noise[k] * lscales[k]);
    }
    x
}

/// Rotate each private beam so `h_k^H w_k` is real nonnegative. SINRs and
/// powers are invariant under per-beam phase rotation.
pub fn rotate_beams(ch: &ChannelSet, psi: &RisVector, design: &mut TransmitDesign) -> Result<()> {
    for k in 0..ch.num_users() {
        let h = equivalent_channel(ch, psi, k)?;
        let inner = h.dotc(&design.w[k]);
        if inner.norm() > 0.0 {
            let phase = inner / inner.norm();
            design.w[k] *= phase.conj();
        }
    }
    Ok(())
}

/// Run the SCA loop from a feasible starting point, returning the final
/// design and the per-iteration trace.
pub fn sca_solve(
    ch: &ChannelSet,
    psi: &RisVector,
    init: (TransmitDesign, ScaAuxiliaries),
    cfg: &ScenarioConfig,
    opts: ScaOptions,
) -> Result<(TransmitDesign, ScaTrace)> {
    let layout = Layout { n_t: cfg.n_t, k: cfg.k };
    let noise = per_user_noise(ch, psi, cfg);
    let (mut design, mut aux) = init;
    let mut trace = ScaTrace {
        objectives: Vec::new(),
        statuses: Vec::new(),
        max_residuals: Vec::new(),
        iterations: 0,
        degraded: false,
    };
    let mut current_obj =
        design.sum_rc() + aux.xi.iter().map(|x| (1.0 + x).log2()).sum::<f64>();

    for _ in 0..cfg.max_inner {
        rotate_beams(ch, psi, &mut design)?;
        // Guard the linearization point against degenerate slacks.
        for v in aux.xi.iter_mut().chain(aux.beta.iter_mut()) {
            if *v <= 0.0 {
                *v = 1e-9;
            }
        }
        let program = build_subproblem(ch, psi, &design, &aux, cfg, opts)?;
        let sol = match solve(&program, cfg.solver_tol) {
            Ok(s) => s,
            Err(_) => {
                trace.degraded = true;
                break;
            }
        };
        if sol.status != SolveStatus::Optimal {
            trace.degraded = true;
            trace.statuses.push(sol.status);
            trace.objectives.push(current_obj);
            trace.max_residuals.push(sol.kkt_residual);
            break;
        }
        let new_design = layout.extract_design(&sol.x);
        let new_aux = layout.extract_aux(
            &sol.x,
            &noise,
            &lambda_scales(&aux, &noise),
            &beta_scales(&aux, &noise),
        );
        let improvement = sol.objective_value - current_obj;

        trace.iterations += 1;
        trace.objectives.push(sol.objective_value.max(current_obj));
        trace.statuses.push(sol.status);
        trace.max_residuals.push(program.max_violation(&sol.x).max(0.0));

        if improvement > 0.0 {
            design = new_design;
            aux = new_aux;
            current_obj = sol.objective_value;
        }
        if improvement < cfg.eps_inner {
            break;
        }
    }

    Ok((design, trace))
}
