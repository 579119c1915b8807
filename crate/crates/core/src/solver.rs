//! Structured convex-program contract and its conic backend.
//!
//! Subproblem builders emit a [`ConvexProgram`]: a linear (optionally
//! concave-quadratic) objective to maximize, plus concave `log2(1 + affine)`
//! objective terms, over affine, sum-of-squares (second-order cone), and
//! exponential-type constraints. [`solve`] compiles the program to the conic
//! form `min 1/2 x'Px + q'x  s.t.  Ax + s = b, s in K` and runs the Clarabel
//! interior-point solver. Identical inputs produce identical outputs.

use crate::{CMatrix, CVector, Error, RMatrix, RVector, Result};
use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus,
    SupportedConeT::{self, *},
};

const LN2: f64 = std::f64::consts::LN_2;

/// Sparse affine expression `sum_i c_i x_i + constant`.
#[derive(Debug, Clone, Default)]
pub struct Affine {
    pub coeffs: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Self {
            coeffs: Vec::new(),
            constant: c,
        }
    }

    pub fn var(i: usize) -> Self {
        Self {
            coeffs: vec![(i, 1.0)],
            constant: 0.0,
        }
    }

    pub fn term(mut self, i: usize, c: f64) -> Self {
        if c != 0.0 {
            self.coeffs.push((i, c));
        }
        self
    }

    pub fn offset(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.coeffs
            .iter()
            .map(|&(i, c)| c * x[i])
            .sum::<f64>()
            + self.constant
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|&(i, c)| (i, c * s)).collect(),
            constant: self.constant * s,
        }
    }
}

/// A single constraint over the program variables.
#[derive(Debug, Clone)]
pub enum Constraint {
    /// `expr <= 0`.
    AffineLe(Affine),
    /// `expr == 0`.
    AffineEq(Affine),
    /// `sum_i rows_i(x)^2 <= bound(x)` (second-order-cone representable).
    SumSquaresLe { rows: Vec<Affine>, bound: Affine },
    /// `2^{exponent(x)} <= bound(x)` (exponential cone). Also encodes
    /// `t <= log2(1 + s)` as `2^t <= 1 + s`.
    ExpLe { exponent: Affine, bound: Affine },
}

/// Convex program in maximization form.
#[derive(Debug, Clone, Default)]
pub struct ConvexProgram {
    /// Number of decision variables.
    pub n: usize,
    /// Linear objective coefficients (maximize `linear . x`).
    pub linear: Vec<f64>,
    /// Optional PSD matrix Q: objective includes `- x' Q x`.
    pub quadratic: Option<RMatrix>,
    /// Concave terms `coeff * log2(1 + expr)`, coeff > 0.
    pub log_terms: Vec<(f64, Affine)>,
    pub constraints: Vec<Constraint>,
    /// Optional per-variable bounds (lower, upper).
    pub bounds: Vec<(Option<f64>, Option<f64>)>,
}

impl ConvexProgram {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            linear: vec![0.0; n],
            quadratic: None,
            log_terms: Vec::new(),
            constraints: Vec::new(),
            bounds: vec![(None, None); n],
        }
    }

    pub fn add(&mut self, c: Constraint) {
        self.constraints.push(c);
    }

    /// Objective value (maximization convention) at a point.
    pub fn objective_at(&self, x: &[f64]) -> f64 {
        let mut v: f64 = self.linear.iter().zip(x.iter()).map(|(c, xi)| c * xi).sum();
        if let Some(q) = &self.quadratic {
            let xv = RVector::from_column_slice(&x[..self.n]);
            v -= (&xv.transpose() * q * &xv)[(0, 0)];
        }
        for (coeff, expr) in &self.log_terms {
            let s = expr.eval(x);
            if s <= -1.0 {
                return f64::NEG_INFINITY;
            }
            v += coeff * (1.0 + s).log2();
        }
        v
    }

    /// Largest constraint violation at a point (0 if feasible).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for c in &self.constraints {
            let v = match c {
                Constraint::AffineLe(a) => a.eval(x),
                Constraint::AffineEq(a) => a.eval(x).abs(),
                Constraint::SumSquaresLe { rows, bound } => {
                    rows.iter().map(|r| r.eval(x).powi(2)).sum::<f64>() - bound.eval(x)
                }
                Constraint::ExpLe { exponent, bound } => {
                    2f64.powf(exponent.eval(x)) - bound.eval(x)
                }
            };
            worst = worst.max(v);
        }
        for (i, (lo, hi)) in self.bounds.iter().enumerate() {
            if let Some(lo) = lo {
                worst = worst.max(lo - x[i]);
            }
            if let Some(hi) = hi {
                worst = worst.max(x[i] - hi);
            }
        }
        worst
    }

    /// Number of constraints including active variable bounds.
    pub fn constraint_count(&self) -> usize {
        self.constraints.len()
            + self
                .bounds
                .iter()
                .map(|(lo, hi)| usize::from(lo.is_some()) + usize::from(hi.is_some()))
                .sum::<usize>()
    }
}

impl std::fmt::Display for ConvexProgram {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "maximize over {} vars:", self.n)?;
        writeln!(
            f,
            "  linear {:?}{}{}",
            self.linear,
            if self.quadratic.is_some() {
                " - x'Qx"
            } else {
                ""
            },
            if self.log_terms.is_empty() {
                String::new()
            } else {
                format!(" + {} log2(1+.) terms", self.log_terms.len())
            }
        )?;
        for c in &self.constraints {
            match c {
                Constraint::AffineLe(a) => writeln!(f, "  affine<=0: {a:?}")?,
                Constraint::AffineEq(a) => writeln!(f, "  affine==0: {a:?}")?,
                Constraint::SumSquaresLe { rows, bound } => {
                    writeln!(f, "  sumsq({} rows) <= {bound:?}", rows.len())?
                }
                Constraint::ExpLe { exponent, bound } => {
                    writeln!(f, "  2^({exponent:?}) <= {bound:?}")?
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Vec<f64>,
    pub objective_value: f64,
    pub status: SolveStatus,
    /// Max of primal feasibility violation, conic dual (stationarity)
    /// residual, and absolute duality gap.
    pub kkt_residual: f64,
}

struct Triplets {
    m: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    b: Vec<f64>,
}

impl Triplets {
    fn new() -> Self {
        Self {
            m: 0,
            rows: Vec::new(),
            cols: Vec::new(),
            vals: Vec::new(),
            b: Vec::new(),
        }
    }

    /// Append row `s = b0 - a.x` (coefficients of `a` go into A directly).
    fn push_row(&mut self, a: &Affine, b0: f64) {
        for &(i, c) in &a.coeffs {
            if c != 0.0 {
                self.rows.push(self.m);
                self.cols.push(i);
                self.vals.push(c);
            }
        }
        self.b.push(b0);
        self.m += 1;
    }
}

/// Solve a structured convex program to tolerance `tol`.
pub fn solve(p: &ConvexProgram, tol: f64) -> Result<Solution> {
    if p.linear.len() != p.n || p.bounds.len() != p.n {
        return Err(Error::DimensionMismatch(
            "objective/bounds length must equal n".into(),
        ));
    }
    if let Some(q) = &p.quadratic {
        if q.nrows() != p.n || q.ncols() != p.n {
            return Err(Error::DimensionMismatch("quadratic term must be n x n".into()));
        }
        let asym = (q - q.transpose()).norm();
        if asym > 1e-9 * (1.0 + q.norm()) {
            return Err(Error::SolverContract(
                "objective quadratic must be symmetric".into(),
            ));
        }
    }
    for (coeff, _) in &p.log_terms {
        if *coeff <= 0.0 {
            return Err(Error::SolverContract(
                "log-term coefficients must be positive".into(),
            ));
        }
    }

    let nv = p.n + p.log_terms.len();
    let mut tri = Triplets::new();
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();

    // Zero cone: equalities. Row a.x = -const  =>  A=a.coeffs, b=-const.
    let mut n_eq = 0;
    for c in &p.constraints {
        if let Constraint::AffineEq(a) = c {
            tri.push_row(a, -a.constant);
            n_eq += 1;
        }
    }
    if n_eq > 0 {
        cones.push(ZeroConeT(n_eq));
    }

    // Nonnegative cone: affine inequalities and variable bounds.
    let mut n_ineq = 0;
    for c in &p.constraints {
        if let Constraint::AffineLe(a) = c {
            tri.push_row(a, -a.constant);
            n_ineq += 1;
        }
    }
    for (i, (lo, hi)) in p.bounds.iter().enumerate() {
        if let Some(lo) = lo {
            // -x_i <= -lo
            tri.push_row(&Affine::default().term(i, -1.0), -lo);
            n_ineq += 1;
        }
        if let Some(hi) = hi {
            tri.push_row(&Affine::var(i), *hi);
            n_ineq += 1;
        }
    }
    if n_ineq > 0 {
        cones.push(NonnegativeConeT(n_ineq));
    }

    // Second-order cones: sum rows^2 <= B(x)  <=>
    //   || [(1-B)/2 ; rows] || <= (1+B)/2.
    for c in &p.constraints {
        if let Constraint::SumSquaresLe { rows, bound } = c {
            tri.push_row(&bound.scaled(-0.5), (1.0 + bound.constant) / 2.0);
            tri.push_row(&bound.scaled(0.5), (1.0 - bound.constant) / 2.0);
            for r in rows {
                tri.push_row(&r.scaled(-1.0), r.constant);
            }
            cones.push(SecondOrderConeT(rows.len() + 2));
        }
    }

    // Exponential cones: 2^{e(x)} <= B(x)  <=>  (e ln2, 1, B) in K_exp.
    let push_exp = |tri: &mut Triplets, cones: &mut Vec<SupportedConeT<f64>>,
                        exponent: &Affine,
                        bound: &Affine| {
        tri.push_row(&exponent.scaled(-LN2), exponent.constant * LN2);
        tri.push_row(&Affine::default(), 1.0);
        tri.push_row(&bound.scaled(-1.0), bound.constant);
        cones.push(ExponentialConeT());
    };
    for c in &p.constraints {
        if let Constraint::ExpLe { exponent, bound } = c {
            push_exp(&mut tri, &mut cones, exponent, bound);
        }
    }
    // Objective log terms: aux t_j <= log2(1 + expr_j).
    for (j, (_, expr)) in p.log_terms.iter().enumerate() {
        let t = Affine::var(p.n + j);
        let bound = expr.clone().offset(1.0);
        push_exp(&mut tri, &mut cones, &t, &bound);
    }

    // Objective: minimize 1/2 x'(2Q)x - linear.x - sum coeff t_j.
    let mut q_lin = vec![0.0; nv];
    for i in 0..p.n {
        q_lin[i] = -p.linear[i];
    }
    for (j, (coeff, _)) in p.log_terms.iter().enumerate() {
        q_lin[p.n + j] = -coeff;
    }
    let mut p_coo: Vec<(usize, usize, f64)> = Vec::new();
    let p_mat = match &p.quadratic {
        Some(q) => {
            let mut rows = Vec::new();
            let mut cols = Vec::new();
            let mut vals = Vec::new();
            for c in 0..p.n {
                for r in 0..=c {
                    let v = if r == c { 2.0 * q[(r, c)] } else { q[(r, c)] + q[(c, r)] };
                    if v != 0.0 {
                        rows.push(r);
                        cols.push(c);
                        vals.push(v);
                        p_coo.push((r, c, v));
                    }
                }
            }
            CscMatrix::new_from_triplets(nv, nv, rows, cols, vals)
        }
        None => CscMatrix::zeros((nv, nv)),
    };
    let a_mat = if tri.vals.is_empty() {
        CscMatrix::zeros((tri.m, nv))
    } else {
        CscMatrix::new_from_triplets(tri.m, nv, tri.rows, tri.cols, tri.vals)
    };

    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(200)
        .tol_feas(tol * 1e-2)
        .tol_gap_abs(tol * 1e-2)
        .tol_gap_rel(tol * 1e-2)
        .build()
        .map_err(|e| Error::SolverFailure(format!("settings: {e:?}")))?;

    let mut solver = DefaultSolver::new(&p_mat, &q_lin, &a_mat, &tri.b, &cones, settings);
    solver.solve();

    let sol = &solver.solution;
    let x: Vec<f64> = sol.x[..p.n].to_vec();
    let primal_violation = p.max_violation(&x).max(0.0);
    // Recompute the KKT residual from the raw problem data and the returned
    // primal/dual pair, independently of the solver's internal (scaled)
    // termination metrics: stationarity P x + q + A' z = 0, slack recovery
    // s = b - A x, and complementarity z . s = 0.
    let mut r_stat = q_lin.clone();
    for &(r, c, v) in &p_coo {
        r_stat[r] += v * sol.x[c];
        if r != c {
            r_stat[c] += v * sol.x[r];
        }
    }
    for ((&row, &col), &v) in tri.rows.iter().zip(tri.cols.iter()).zip(tri.vals.iter()) {
        r_stat[col] += v * sol.z[row];
    }
    let mut slack = tri.b.clone();
    for ((&row, &col), &v) in tri.rows.iter().zip(tri.cols.iter()).zip(tri.vals.iter()) {
        slack[row] -= v * sol.x[col];
    }
    let comp: f64 = slack.iter().zip(sol.z.iter()).map(|(a, b)| a * b).sum();
    let data_scale = 1.0 + q_lin.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let stationarity = r_stat.iter().fold(0.0f64, |m, v| m.max(v.abs())) / data_scale;
    let kkt_residual = primal_violation.max(stationarity).max(comp.abs() / data_scale);

    let status = match sol.status {
        SolverStatus::Solved => {
            if primal_violation <= tol {
                SolveStatus::Optimal
            } else {
                SolveStatus::NumericalFailure
            }
        }
        SolverStatus::AlmostSolved => {
            if primal_violation <= tol {
                SolveStatus::Optimal
            } else {
                SolveStatus::MaxIter
            }
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveStatus::Infeasible
        }
        SolverStatus::MaxIterations | SolverStatus::MaxTime => SolveStatus::MaxIter,
        _ => SolveStatus::NumericalFailure,
    };

    Ok(Solution {
        objective_value: p.objective_at(&x),
        x,
        status,
        kkt_residual,
    })
}

/// Real embedding of a complex quadratic/linear form.
///
/// For `psi = u + iv`, `psi^H H psi = [u;v]^T S [u;v]` with
/// `S = [[Re H, -Im H], [Im H, Re H]]`, and `Re(psi^H c) = [Re c; Im c].[u;v]`.
pub fn real_embed(h: &CMatrix, c: &CVector) -> Result<(RMatrix, RVector)> {
    let l = h.nrows();
    if h.ncols() != l || c.len() != l {
        return Err(Error::DimensionMismatch("real_embed expects square H and matching c".into()));
    }
    let herm_err = (h - h.adjoint()).norm();
    if herm_err > 1e-9 * (1.0 + h.norm()) {
        return Err(Error::SolverContract(format!(
            "real_embed requires a Hermitian matrix (asymmetry {herm_err:.3e})"
        )));
    }
    let mut s = RMatrix::zeros(2 * l, 2 * l);
    for r in 0..l {
        for cc in 0..l {
            let v = h[(r, cc)];
            s[(r, cc)] = v.re;
            s[(r, cc + l)] = -v.im;
            s[(r + l, cc)] = v.im;
            s[(r + l, cc + l)] = v.re;
        }
    }
    let mut lin = RVector::zeros(2 * l);
    for i in 0..l {
        lin[i] = c[i].re;
        lin[i + l] = c[i].im;
    }
    Ok((s, lin))
}

/// Eigenvalue threshold below which a symmetric matrix eigenvalue is
/// treated as zero when splitting into PSD parts.
pub const PSD_SPLIT_TOL: f64 = 1e-10;

/// Split a symmetric matrix into PSD parts `S = S_plus - S_minus`.
pub fn psd_split(s: &RMatrix) -> (RMatrix, RMatrix) {
    let eig = s.clone().symmetric_eigen();
    let n = s.nrows();
    let mut plus = RMatrix::zeros(n, n);
    let mut minus = RMatrix::zeros(n, n);
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam.abs() <= PSD_SPLIT_TOL {
            continue;
        }
        let v = eig.eigenvectors.column(i);
        let outer = &v * v.transpose();
        if lam > 0.0 {
            plus += outer * lam;
        } else {
            minus += outer * (-lam);
        }
    }
    (plus, minus)
}

/// Factor a PSD matrix into rows `r_i` with `x^T S x = sum (r_i . x)^2`.
pub fn psd_factor_rows(s: &RMatrix) -> Vec<RVector> {
    let eig = s.clone().symmetric_eigen();
    let mut rows = Vec::new();
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > PSD_SPLIT_TOL {
            rows.push(eig.eigenvectors.column(i).clone_owned() * lam.sqrt());
        }
    }
    rows
}
