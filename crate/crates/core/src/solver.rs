//! Small dense solver for smooth convex programs
//!
//! ```text
//! minimize f(x)  subject to  g_i(x) <= 0,  A x = b,  x >= lb
//! ```
//!
//! using a primal log-barrier method: damped Newton centering steps on
//! `f + φ/t` (φ the log barrier) with a geometric schedule for `t`. Each
//! Newton system is solved by a Cholesky factorization of the barrier
//! Hessian followed by the Schur complement of the equality block.
//!
//! A phase-I problem (minimize a common slack `s` with `g_i(x) <= s`) finds a
//! strictly feasible start when the supplied one is not.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Value, sparse gradient and sparse upper-triangular Hessian of a function.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Eval {
    pub value: f64,
    pub gradient: Vec<(usize, f64)>,
    /// Entries `(i, j, h)` with `i <= j`; off-diagonal entries stand for both halves.
    pub hessian: Vec<(usize, usize, f64)>,
}

/// A twice differentiable function. `value` must return `+inf` outside the
/// function's domain so that line searches can reject such points.
pub trait SmoothFunction: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn evaluate(&self, x: &[f64]) -> Eval;
}

/// `Σ_i (q_i x_i² + l_i x_i + r_i / x_i) + constant`.
///
/// Coordinates with a non-zero reciprocal coefficient must stay positive.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableObjective {
    pub quad: Vec<f64>,
    pub lin: Vec<f64>,
    pub recip: Vec<f64>,
    pub constant: f64,
}

impl SeparableObjective {
    pub fn zeros(dim: usize) -> Self {
        Self {
            quad: vec![0.0; dim],
            lin: vec![0.0; dim],
            recip: vec![0.0; dim],
            constant: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.quad.len()
    }
}

impl SmoothFunction for SeparableObjective {
    fn value(&self, x: &[f64]) -> f64 {
        let mut v = self.constant;
        for i in 0..self.quad.len() {
            let xi = x[i];
            v += (self.quad[i] * xi + self.lin[i]) * xi;
            if self.recip[i] != 0.0 {
                if !(xi > 0.0) {
                    return f64::INFINITY;
                }
                v += self.recip[i] / xi;
            }
        }
        v
    }

    fn evaluate(&self, x: &[f64]) -> Eval {
        let value = self.value(x);
        let mut gradient = Vec::with_capacity(self.quad.len());
        let mut hessian = Vec::with_capacity(self.quad.len());
        for i in 0..self.quad.len() {
            let xi = x[i];
            let (mut g, mut h) = (2.0 * self.quad[i] * xi + self.lin[i], 2.0 * self.quad[i]);
            if self.recip[i] != 0.0 {
                g -= self.recip[i] / (xi * xi);
                h += 2.0 * self.recip[i] / (xi * xi * xi);
            }
            if g != 0.0 {
                gradient.push((i, g));
            }
            if h != 0.0 {
                hessian.push((i, i, h));
            }
        }
        Eval {
            value,
            gradient,
            hessian,
        }
    }
}

/// Constraint `numerator / x[var] + offset − x[epigraph] <= 0`, i.e. the
/// epigraph variable bounds a hyperbolic time term from above.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReciprocalEpigraph {
    pub var: usize,
    pub epigraph: usize,
    pub numerator: f64,
    pub offset: f64,
}

impl SmoothFunction for ReciprocalEpigraph {
    fn value(&self, x: &[f64]) -> f64 {
        let v = x[self.var];
        if !(v > 0.0) {
            return f64::INFINITY;
        }
        self.numerator / v + self.offset - x[self.epigraph]
    }

    fn evaluate(&self, x: &[f64]) -> Eval {
        let v = x[self.var];
        Eval {
            value: self.value(x),
            gradient: vec![(self.var, -self.numerator / (v * v)), (self.epigraph, -1.0)],
            hessian: vec![(self.var, self.var, 2.0 * self.numerator / (v * v * v))],
        }
    }
}

type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;
type HessFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;

/// A function given by dense closures; handy for tests and oracles.
pub struct DenseFunction {
    value: Box<ValueFn>,
    gradient: Box<GradFn>,
    hessian: Box<HessFn>,
}

impl DenseFunction {
    pub fn new(
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        hessian: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            value: Box::new(value),
            gradient: Box::new(gradient),
            hessian: Box::new(hessian),
        }
    }

    /// A function only usable where derivatives are not needed (grid oracles).
    pub fn value_only(value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(
            value,
            |_| panic!("derivatives requested from a value-only function"),
            |_| panic!("derivatives requested from a value-only function"),
        )
    }
}

impl SmoothFunction for DenseFunction {
    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    fn evaluate(&self, x: &[f64]) -> Eval {
        let g = (self.gradient)(x);
        let h = (self.hessian)(x);
        let mut hessian = Vec::new();
        for i in 0..h.nrows() {
            for j in i..h.ncols() {
                if h[(i, j)] != 0.0 {
                    hessian.push((i, j, h[(i, j)]));
                }
            }
        }
        Eval {
            value: self.value(x),
            gradient: g.into_iter().enumerate().filter(|&(_, v)| v != 0.0).collect(),
            hessian,
        }
    }
}

/// `inner(x) − x[slack]`, the phase-I relaxation of a constraint.
struct Shifted {
    inner: Arc<dyn SmoothFunction>,
    slack: usize,
}

impl SmoothFunction for Shifted {
    fn value(&self, x: &[f64]) -> f64 {
        self.inner.value(&x[..self.slack]) - x[self.slack]
    }

    fn evaluate(&self, x: &[f64]) -> Eval {
        let mut e = self.inner.evaluate(&x[..self.slack]);
        e.value -= x[self.slack];
        e.gradient.push((self.slack, -1.0));
        e
    }
}

/// `lb − x[var] − x[slack]`, the phase-I relaxation of a lower bound.
struct BoundSlack {
    var: usize,
    lb: f64,
    slack: usize,
}

impl SmoothFunction for BoundSlack {
    fn value(&self, x: &[f64]) -> f64 {
        self.lb - x[self.var] - x[self.slack]
    }

    fn evaluate(&self, x: &[f64]) -> Eval {
        Eval {
            value: self.value(x),
            gradient: vec![(self.var, -1.0), (self.slack, -1.0)],
            hessian: Vec::new(),
        }
    }
}

/// A smooth convex program over `dim` variables.
#[derive(Clone)]
pub struct ConvexProgram {
    dim: usize,
    objective: Arc<dyn SmoothFunction>,
    inequalities: Vec<Arc<dyn SmoothFunction>>,
    equalities: Option<(DMatrix<f64>, DVector<f64>)>,
    lower_bounds: Vec<f64>,
}

impl std::fmt::Debug for ConvexProgram {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConvexProgram")
            .field("dim", &self.dim)
            .field("inequalities", &self.inequalities.len())
            .field("equalities", &self.equalities.as_ref().map(|(a, _)| a.nrows()))
            .finish()
    }
}

impl ConvexProgram {
    pub fn new(dim: usize, objective: impl SmoothFunction + 'static) -> Self {
        Self::from_arc(dim, Arc::new(objective))
    }

    pub fn from_arc(dim: usize, objective: Arc<dyn SmoothFunction>) -> Self {
        Self {
            dim,
            objective,
            inequalities: Vec::new(),
            equalities: None,
            lower_bounds: vec![f64::NEG_INFINITY; dim],
        }
    }

    pub fn with_inequality(mut self, g: impl SmoothFunction + 'static) -> Self {
        self.inequalities.push(Arc::new(g));
        self
    }

    pub fn push_inequality(&mut self, g: Arc<dyn SmoothFunction>) {
        self.inequalities.push(g);
    }

    /// Adds the linear equality system `A x = b`; rows must be independent.
    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.ncols() != self.dim || a.nrows() != b.len() {
            return Err(Error::InvalidParameter(format!(
                "equality system is {}x{} with rhs {}, program has {} variables",
                a.nrows(),
                a.ncols(),
                b.len(),
                self.dim
            )));
        }
        self.equalities = if a.nrows() == 0 { None } else { Some((a, b)) };
        Ok(self)
    }

    /// Per-variable lower bounds; use `f64::NEG_INFINITY` for free variables.
    pub fn with_lower_bounds(mut self, lb: Vec<f64>) -> Result<Self> {
        if lb.len() != self.dim {
            return Err(Error::InvalidParameter(format!(
                "{} lower bounds for {} variables",
                lb.len(),
                self.dim
            )));
        }
        self.lower_bounds = lb;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn objective(&self) -> &dyn SmoothFunction {
        self.objective.as_ref()
    }

    pub fn inequalities(&self) -> &[Arc<dyn SmoothFunction>] {
        &self.inequalities
    }

    pub fn equalities(&self) -> Option<(&DMatrix<f64>, &DVector<f64>)> {
        self.equalities.as_ref().map(|(a, b)| (a, b))
    }

    pub fn lower_bounds(&self) -> &[f64] {
        &self.lower_bounds
    }

    fn bounded(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.lower_bounds
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, lb)| lb.is_finite())
    }

    fn num_barrier_terms(&self) -> usize {
        self.inequalities.len() + self.bounded().count()
    }

    /// Largest violation of inequalities, bounds and equalities at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for g in &self.inequalities {
            let v = g.value(x);
            worst = worst.max(if v.is_nan() { f64::INFINITY } else { v });
        }
        for (j, lb) in self.bounded() {
            worst = worst.max(lb - x[j]);
        }
        if let Some((a, b)) = &self.equalities {
            let r = a * DVector::from_column_slice(x) - b;
            worst = worst.max(r.amax());
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    Infeasible,
}

/// Lagrange multipliers of a program: inequalities, lower bounds (zero for
/// unbounded variables) and equality rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Multipliers {
    pub ineq: Vec<f64>,
    pub bounds: Vec<f64>,
    pub eq: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub x: Vec<f64>,
    pub objective_value: f64,
    /// Newton steps taken, phase I included.
    pub iterations: usize,
    pub kkt_residual: f64,
    pub status: SolveStatus,
    pub multipliers: Multipliers,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Scaled KKT residual required for convergence.
    pub tol: f64,
    /// Constraint violation accepted at convergence.
    pub feas_tol: f64,
    /// Newton step cap of one centering stage.
    pub max_newton: usize,
    /// Barrier parameter growth factor.
    pub barrier_growth: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            feas_tol: 1e-9,
            max_newton: 200,
            barrier_growth: 20.0,
        }
    }
}

/// Solves `program` from `x0` to scaled KKT tolerance `tol`.
pub fn solve(program: &ConvexProgram, x0: &[f64], tol: f64) -> Result<SolveReport> {
    solve_with_options(
        program,
        x0,
        &SolverOptions {
            tol,
            ..SolverOptions::default()
        },
    )
}

pub fn solve_with_options(
    program: &ConvexProgram,
    x0: &[f64],
    options: &SolverOptions,
) -> Result<SolveReport> {
    if x0.len() != program.dim {
        return Err(Error::InvalidParameter(format!(
            "start point has {} entries, program has {} variables",
            x0.len(),
            program.dim
        )));
    }
    if !(options.tol > 0.0 && options.feas_tol > 0.0 && options.barrier_growth > 1.0) {
        return Err(Error::InvalidParameter("solver tolerances must be positive".into()));
    }
    let mut x = project_onto_equalities(program, x0)?;
    let mut iterations = 0;
    if !barrier_value(program, &x, 1.0).is_finite() {
        match phase_one(program, &x, options)? {
            (Some(feasible), iters) => {
                iterations += iters;
                x = feasible;
            }
            (None, iters) => {
                let objective_value = program.objective.value(&x);
                return Ok(SolveReport {
                    x,
                    objective_value,
                    iterations: iterations + iters,
                    kkt_residual: f64::INFINITY,
                    status: SolveStatus::Infeasible,
                    multipliers: Multipliers::default(),
                });
            }
        }
    }
    let outcome = barrier_method(program, x, options, None)?;
    Ok(SolveReport {
        iterations: iterations + outcome.iterations,
        ..outcome.report
    })
}

struct BarrierOutcome {
    report: SolveReport,
    iterations: usize,
    stopped_early: bool,
}

/// `f(x) + φ(x)/t`, or `+inf` when `x` is not strictly feasible.
fn barrier_value(program: &ConvexProgram, x: &[f64], t: f64) -> f64 {
    let mut v = program.objective.value(x);
    if !v.is_finite() {
        return f64::INFINITY;
    }
    let mut phi = 0.0;
    for g in &program.inequalities {
        let gv = g.value(x);
        if !(gv < 0.0) {
            return f64::INFINITY;
        }
        phi -= (-gv).ln();
    }
    for (j, lb) in program.bounded() {
        let s = x[j] - lb;
        if !(s > 0.0) {
            return f64::INFINITY;
        }
        phi -= s.ln();
    }
    v += phi / t;
    v
}

/// Gradient and Hessian of `f + φ/t`; returns the barrier value.
fn barrier_derivatives(
    program: &ConvexProgram,
    x: &[f64],
    t: f64,
    grad: &mut DVector<f64>,
    hess: &mut DMatrix<f64>,
) -> f64 {
    grad.fill(0.0);
    hess.fill(0.0);
    let e = program.objective.evaluate(x);
    accumulate(&e, 1.0, grad, hess);
    let mut value = e.value;
    for g in &program.inequalities {
        let e = g.evaluate(x);
        if !(e.value < 0.0) {
            return f64::INFINITY;
        }
        let inv = -1.0 / e.value;
        value -= (-e.value).ln() / t;
        accumulate(&e, inv / t, grad, hess);
        let w = inv * inv / t;
        for &(i, gi) in &e.gradient {
            for &(j, gj) in &e.gradient {
                hess[(i, j)] += w * gi * gj;
            }
        }
    }
    for (j, lb) in program.bounded() {
        let s = x[j] - lb;
        value -= s.ln() / t;
        grad[j] -= 1.0 / (s * t);
        hess[(j, j)] += 1.0 / (s * s * t);
    }
    value
}

fn accumulate(e: &Eval, scale: f64, grad: &mut DVector<f64>, hess: &mut DMatrix<f64>) {
    for &(i, g) in &e.gradient {
        grad[i] += scale * g;
    }
    for &(i, j, h) in &e.hessian {
        hess[(i, j)] += scale * h;
        if i != j {
            hess[(j, i)] += scale * h;
        }
    }
}

fn regularized_cholesky(h: &DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = h.clone().cholesky() {
        return Some(c);
    }
    let scale = 1.0 + h.diagonal().amax();
    let mut delta = 1e-12 * scale;
    while delta < 1e-2 * scale {
        let mut shifted = h.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += delta;
        }
        if let Some(c) = shifted.cholesky() {
            return Some(c);
        }
        delta *= 100.0;
    }
    None
}

/// Newton step of `min ψ s.t. A(x + dx) = b` given the residual `r = b − Ax`.
fn newton_step(
    hess: &DMatrix<f64>,
    grad: &DVector<f64>,
    eq: Option<(&DMatrix<f64>, DVector<f64>)>,
) -> Option<DVector<f64>> {
    let chol = regularized_cholesky(hess)?;
    let hg = chol.solve(grad);
    match eq {
        None => Some(-hg),
        Some((a, r)) => {
            let y = chol.solve(&a.transpose());
            let schur = a * &y;
            let rhs = -(a * &hg) - r;
            let nu = match regularized_cholesky(&schur) {
                Some(c) => c.solve(&rhs),
                None => schur.lu().solve(&rhs)?,
            };
            Some(-hg - y * nu)
        }
    }
}

fn equality_residual(program: &ConvexProgram, x: &[f64]) -> Option<DVector<f64>> {
    program
        .equalities
        .as_ref()
        .map(|(a, b)| b - a * DVector::from_column_slice(x))
}

/// Least-norm correction of `x0` onto `A x = b`.
fn project_onto_equalities(program: &ConvexProgram, x0: &[f64]) -> Result<Vec<f64>> {
    let Some((a, _)) = &program.equalities else {
        return Ok(x0.to_vec());
    };
    let r = equality_residual(program, x0).expect("equalities present");
    let gram = a * a.transpose();
    let lam = gram
        .lu()
        .solve(&r)
        .ok_or_else(|| Error::InvalidParameter("equality rows are linearly dependent".into()))?;
    let dx = a.transpose() * lam;
    Ok(x0.iter().zip(dx.iter()).map(|(x, d)| x + d).collect())
}

/// Finds a strictly feasible point by minimizing a common constraint slack.
fn phase_one(
    program: &ConvexProgram,
    x: &[f64],
    options: &SolverOptions,
) -> Result<(Option<Vec<f64>>, usize)> {
    let n = program.dim;
    let mut start = x.to_vec();
    let domain_ok = |p: &[f64]| {
        program.objective.value(p).is_finite()
            && program.inequalities.iter().all(|g| g.value(p).is_finite())
    };
    if !domain_ok(&start) {
        // Pull bounded coordinates inside their bounds and retry.
        for (j, lb) in program.bounded() {
            let margin = 1e-3 * lb.abs().max(1.0);
            if start[j] <= lb + margin {
                start[j] = lb + margin;
            }
        }
        start = project_onto_equalities(program, &start)?;
        if !domain_ok(&start) {
            return Ok((None, 0));
        }
    }

    let mut worst: f64 = 0.0;
    for g in &program.inequalities {
        worst = worst.max(g.value(&start));
    }
    for (j, lb) in program.bounded() {
        worst = worst.max(lb - start[j]);
    }
    let slack = n;
    let mut obj = SeparableObjective::zeros(n + 1);
    obj.lin[slack] = 1.0;
    let mut phase = ConvexProgram::new(n + 1, obj);
    for g in &program.inequalities {
        phase.push_inequality(Arc::new(Shifted {
            inner: Arc::clone(g),
            slack,
        }));
    }
    for (j, lb) in program.bounded() {
        phase.push_inequality(Arc::new(BoundSlack { var: j, lb, slack }));
    }
    if let Some((a, b)) = &program.equalities {
        let mut ext = DMatrix::zeros(a.nrows(), n + 1);
        ext.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
        phase = phase.with_equalities(ext, b.clone())?;
    }
    start.push(worst + 1.0);

    let stop = |p: &[f64]| p[slack] < 0.0;
    let outcome = barrier_method(&phase, start, options, Some(&stop))?;
    let mut xs = outcome.report.x;
    let s = xs.pop().expect("slack present");
    if outcome.stopped_early || s < 0.0 {
        Ok((Some(xs), outcome.iterations))
    } else {
        Ok((None, outcome.iterations))
    }
}

type StopFn<'a> = Option<&'a dyn Fn(&[f64]) -> bool>;

fn barrier_method(
    program: &ConvexProgram,
    mut x: Vec<f64>,
    options: &SolverOptions,
    stop: StopFn<'_>,
) -> Result<BarrierOutcome> {
    let n = program.dim;
    let m = program.num_barrier_terms() as f64;
    let mut grad = DVector::zeros(n);
    let mut hess = DMatrix::zeros(n, n);
    let mut iterations = 0;
    let f0 = program.objective.value(&x);
    let mut t = if m == 0.0 {
        1.0
    } else {
        (m / f0.abs().max(1.0)).max(1e-8)
    };
    let max_stages = 120;
    // Barrier multipliers lose accuracy once the constraint slacks approach
    // round-off, so the best report seen after the duality-gap target is
    // kept and the schedule stops as soon as the residual worsens.
    let mut best: Option<SolveReport> = None;

    for _stage in 0..max_stages {
        let (its, early) = center(program, &mut x, t, options, &mut grad, &mut hess, stop);
        iterations += its;
        if early {
            let report = finish(program, &x, t, iterations, SolveStatus::MaxIterations);
            return Ok(BarrierOutcome {
                report,
                iterations,
                stopped_early: true,
            });
        }
        let fx = program.objective.value(&x);
        if m == 0.0 || m / t <= options.tol * (1.0 + fx.abs()) {
            let mut report = finish(program, &x, t, iterations, SolveStatus::MaxIterations);
            if report.kkt_residual <= options.tol && program.max_violation(&x) <= options.feas_tol {
                report.status = SolveStatus::Converged;
                return Ok(BarrierOutcome {
                    report,
                    iterations,
                    stopped_early: false,
                });
            }
            let worse = best
                .as_ref()
                .is_some_and(|b| report.kkt_residual >= b.kkt_residual);
            if !worse {
                best = Some(report);
            }
            if m == 0.0 || worse {
                break;
            }
        }
        t *= options.barrier_growth;
    }
    let mut report = best.unwrap_or_else(|| finish(program, &x, t, iterations, SolveStatus::MaxIterations));
    report.iterations = iterations;
    Ok(BarrierOutcome {
        report,
        iterations,
        stopped_early: false,
    })
}

/// Damped Newton minimization of `f + φ/t` from `x`; returns (steps, stopped early).
fn center(
    program: &ConvexProgram,
    x: &mut [f64],
    t: f64,
    options: &SolverOptions,
    grad: &mut DVector<f64>,
    hess: &mut DMatrix<f64>,
    stop: StopFn<'_>,
) -> (usize, bool) {
    let mut trial = x.to_vec();
    let mut prev_decrement = f64::INFINITY;
    for it in 0..options.max_newton {
        let psi = barrier_derivatives(program, x, t, grad, hess);
        if !psi.is_finite() {
            return (it, false);
        }
        let eq = program
            .equalities
            .as_ref()
            .map(|(a, _)| (a, equality_residual(program, x).expect("equalities present")));
        let Some(dx) = newton_step(hess, grad, eq) else {
            return (it, false);
        };
        // Stop once the decrement is negligible or has stopped shrinking at
        // the round-off floor.
        let decrement = dx.dot(&(&*hess * &dx));
        let scale = 1.0 + psi.abs();
        if !(decrement > 1e-24 * scale) || (decrement <= 1e-12 * scale && decrement >= 0.25 * prev_decrement) {
            return (it, false);
        }
        prev_decrement = decrement;
        let slope = grad.dot(&dx);
        let slack = 1e-14 * (1.0 + psi.abs());
        let mut alpha = 1.0;
        loop {
            for i in 0..x.len() {
                trial[i] = x[i] + alpha * dx[i];
            }
            let v = barrier_value(program, &trial, t);
            if v.is_finite() && v <= psi + 0.25 * alpha * slope.min(0.0) + slack {
                break;
            }
            alpha *= 0.5;
            if alpha < 1e-14 {
                return (it + 1, false);
            }
        }
        x.copy_from_slice(&trial);
        if let Some(stop) = stop {
            if stop(x) {
                return (it + 1, true);
            }
        }
    }
    (options.max_newton, false)
}

/// Builds the report at a centered point, with multipliers recovered from
/// the barrier (`λ_i = 1/(t·(−g_i))`) and a least-squares equality multiplier.
fn finish(
    program: &ConvexProgram,
    x: &[f64],
    t: f64,
    iterations: usize,
    status: SolveStatus,
) -> SolveReport {
    let ineq: Vec<f64> = program
        .inequalities
        .iter()
        .map(|g| 1.0 / (t * (-g.value(x))))
        .collect();
    let bounds: Vec<f64> = program
        .lower_bounds
        .iter()
        .enumerate()
        .map(|(j, lb)| if lb.is_finite() { 1.0 / (t * (x[j] - lb)) } else { 0.0 })
        .collect();
    let mut multipliers = Multipliers {
        ineq,
        bounds,
        eq: Vec::new(),
    };
    if let Some((a, _)) = &program.equalities {
        let v = lagrangian_gradient(program, x, &multipliers);
        let gram = a * a.transpose();
        let nu = gram
            .lu()
            .solve(&(-(a * v)))
            .unwrap_or_else(|| DVector::zeros(a.nrows()));
        multipliers.eq = nu.iter().copied().collect();
    }
    let mut kkt = kkt_residual(program, x, &multipliers).unwrap_or(f64::INFINITY);
    if let Some(refined) = refine_multipliers(program, x, &multipliers) {
        let refined_kkt = kkt_residual(program, x, &refined).unwrap_or(f64::INFINITY);
        if refined_kkt < kkt {
            kkt = refined_kkt;
            multipliers = refined;
        }
    }
    SolveReport {
        x: x.to_vec(),
        objective_value: program.objective.value(x),
        iterations,
        kkt_residual: kkt,
        status,
        multipliers,
    }
}

/// Corrects barrier multiplier estimates by a least-squares fit of the
/// stationarity condition, regularized towards the estimates.
///
/// Barrier multipliers `1/(t·(−g_i))` inherit the cancellation error of
/// `g_i` near the boundary; the fit removes that noise while keeping nearly
/// inactive multipliers pinned at their tiny values.
fn refine_multipliers(program: &ConvexProgram, x: &[f64], est: &Multipliers) -> Option<Multipliers> {
    let n = program.dim;
    let bounded: Vec<usize> = program.bounded().map(|(j, _)| j).collect();
    let n_eq = est.eq.len();
    let k = est.ineq.len() + bounded.len() + n_eq;
    if k == 0 {
        return None;
    }
    let mut g = DMatrix::zeros(n, k);
    let mut prior = DVector::zeros(k);
    let mut col = 0;
    for (c, &lam) in program.inequalities.iter().zip(&est.ineq) {
        for (i, gi) in c.evaluate(x).gradient {
            g[(i, col)] += gi;
        }
        prior[col] = lam;
        col += 1;
    }
    for &j in &bounded {
        g[(j, col)] = -1.0;
        prior[col] = est.bounds[j];
        col += 1;
    }
    if let Some((a, _)) = &program.equalities {
        for r in 0..n_eq {
            for i in 0..n {
                g[(i, col)] = a[(r, i)];
            }
            prior[col] = est.eq[r];
            col += 1;
        }
    }
    let mut grad_f = DVector::zeros(n);
    for (i, v) in program.objective.evaluate(x).gradient {
        grad_f[i] += v;
    }
    let scale = 1.0 + grad_f.amax();
    let n_sign = est.ineq.len() + bounded.len();
    let mut normal = g.transpose() * &g;
    let mut rhs = -(g.transpose() * &grad_f);
    for c in 0..k {
        let d = if c < n_sign {
            1e-6 * scale / prior[c].max(1e-300)
        } else {
            1e-10 * scale / (1.0 + prior[c].abs())
        };
        let d2 = (d * d).min(1e300);
        normal[(c, c)] += d2;
        rhs[c] += d2 * prior[c];
    }
    let u = normal.cholesky()?.solve(&rhs);
    if u.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut out = Multipliers {
        ineq: u.rows(0, est.ineq.len()).iter().map(|v| v.max(0.0)).collect(),
        bounds: vec![0.0; n],
        eq: u.rows(n_sign, n_eq).iter().copied().collect(),
    };
    for (b, &j) in bounded.iter().enumerate() {
        out.bounds[j] = u[est.ineq.len() + b].max(0.0);
    }
    Some(out)
}

/// `∇f + Σ λ_i ∇g_i − μ` (equality term excluded).
fn lagrangian_gradient(program: &ConvexProgram, x: &[f64], mult: &Multipliers) -> DVector<f64> {
    let mut v = DVector::zeros(program.dim);
    for (i, g) in program.objective.evaluate(x).gradient {
        v[i] += g;
    }
    for (g, &lam) in program.inequalities.iter().zip(&mult.ineq) {
        for (i, gi) in g.evaluate(x).gradient {
            v[i] += lam * gi;
        }
    }
    for (j, &mu) in mult.bounds.iter().enumerate() {
        v[j] -= mu;
    }
    v
}

/// Scaled first-order KKT residual: the largest of
/// stationarity `‖∇L‖∞ / (1 + ‖∇f‖∞)`, complementarity
/// `max λ_i |g_i| / (1 + |f|)` and absolute primal infeasibility.
pub fn kkt_residual(program: &ConvexProgram, x: &[f64], mult: &Multipliers) -> Result<f64> {
    let n_eq = program.equalities.as_ref().map_or(0, |(a, _)| a.nrows());
    if x.len() != program.dim
        || mult.ineq.len() != program.inequalities.len()
        || mult.bounds.len() != program.dim
        || mult.eq.len() != n_eq
    {
        return Err(Error::InvalidParameter(format!(
            "kkt_residual: expected x[{}], {} inequality, {} bound and {} equality multipliers",
            program.dim,
            program.inequalities.len(),
            program.dim,
            n_eq
        )));
    }
    if mult.ineq.iter().chain(&mult.bounds).any(|&l| !(l >= 0.0)) {
        return Err(Error::InvalidParameter(
            "inequality multipliers must be nonnegative".into(),
        ));
    }
    let obj = program.objective.evaluate(x);
    let grad_scale = 1.0 + obj.gradient.iter().fold(0.0f64, |m, &(_, g)| m.max(g.abs()));
    let mut v = lagrangian_gradient(program, x, mult);
    if let Some((a, _)) = &program.equalities {
        v += a.transpose() * DVector::from_column_slice(&mult.eq);
    }
    let stationarity = v.amax() / grad_scale;

    let f_scale = 1.0 + obj.value.abs();
    let mut complementarity: f64 = 0.0;
    for (g, &lam) in program.inequalities.iter().zip(&mult.ineq) {
        complementarity = complementarity.max(lam * g.value(x).abs());
    }
    for (j, lb) in program.bounded() {
        complementarity = complementarity.max(mult.bounds[j] * (x[j] - lb).abs());
    }
    let feasibility = program.max_violation(x).max(0.0);
    Ok(stationarity
        .max(complementarity / f_scale)
        .max(feasibility))
}

/// Brute-force minimizer over a box, for verification of tiny programs.
///
/// Each equality row eliminates one variable, and at most four free
/// variables remain. The grid is refined around the incumbent (±3 cells)
/// until its spacing is at most `resolution`; ties keep the first point met
/// in lexicographic order.
pub fn grid_oracle(
    program: &ConvexProgram,
    bounds: &[(f64, f64)],
    resolution: f64,
) -> Result<(Vec<f64>, f64)> {
    const MAX_FREE: usize = 4;
    if bounds.len() != program.dim {
        return Err(Error::InvalidParameter(format!(
            "grid box has {} intervals, program has {} variables",
            bounds.len(),
            program.dim
        )));
    }
    if !(resolution > 0.0) || bounds.iter().any(|(lo, hi)| !(lo <= hi) || !lo.is_finite() || !hi.is_finite()) {
        return Err(Error::InvalidParameter("grid box and resolution must be finite".into()));
    }
    let elim = Elimination::new(program)?;
    let free = elim.free.len();
    if free > MAX_FREE {
        return Err(Error::InvalidParameter(format!(
            "grid oracle refuses {free} free variables (limit {MAX_FREE})"
        )));
    }
    let points = match free {
        0 | 1 => 2001,
        2 => 201,
        3 => 41,
        _ => 21,
    };

    let mut lo: Vec<f64> = elim.free.iter().map(|&j| bounds[j].0).collect();
    let mut hi: Vec<f64> = elim.free.iter().map(|&j| bounds[j].1).collect();
    let feasible = |x: &[f64]| -> Option<f64> {
        if program.max_violation(x) > 0.0 {
            return None;
        }
        let v = program.objective.value(x);
        v.is_finite().then_some(v)
    };

    let mut best: Option<(Vec<f64>, f64)> = None;
    loop {
        let spacing: Vec<f64> = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| (h - l) / (points - 1) as f64)
            .collect();
        let mut idx = vec![0usize; free];
        let mut level_best: Option<(Vec<f64>, f64)> = None;
        let mut z = vec![0.0; free];
        loop {
            for k in 0..free {
                z[k] = if idx[k] == points - 1 { hi[k] } else { lo[k] + idx[k] as f64 * spacing[k] };
            }
            let x = elim.expand(&z);
            if let Some(v) = feasible(&x) {
                if level_best.as_ref().is_none_or(|(_, b)| v < *b) {
                    level_best = Some((x, v));
                }
            }
            // lexicographic increment, last index fastest
            let mut done = true;
            for k in (0..free).rev() {
                idx[k] += 1;
                if idx[k] < points {
                    done = false;
                    break;
                }
                idx[k] = 0;
            }
            if done {
                break;
            }
        }
        match (&best, level_best) {
            (None, None) => {
                return Err(Error::Infeasible("grid oracle found no feasible point".into()))
            }
            (_, Some(lb)) if best.as_ref().is_none_or(|(_, b)| lb.1 < *b) => best = Some(lb),
            _ => {}
        }
        let max_spacing = spacing.iter().fold(0.0f64, |m, &s| m.max(s));
        if max_spacing <= resolution || free == 0 {
            break;
        }
        let (bx, _) = best.as_ref().expect("incumbent exists");
        for k in 0..free {
            let c = bx[elim.free[k]];
            let (l0, h0) = bounds[elim.free[k]];
            lo[k] = (c - 3.0 * spacing[k]).max(l0);
            hi[k] = (c + 3.0 * spacing[k]).min(h0);
        }
    }
    Ok(best.expect("incumbent exists"))
}

/// Parametrization of `{x : A x = b}` by its free coordinates.
struct Elimination {
    dim: usize,
    free: Vec<usize>,
    /// Pivot variable index, constant, and coefficients on the free variables.
    pivots: Vec<(usize, f64, Vec<f64>)>,
}

impl Elimination {
    fn new(program: &ConvexProgram) -> Result<Self> {
        let n = program.dim;
        let Some((a, b)) = &program.equalities else {
            return Ok(Self {
                dim: n,
                free: (0..n).collect(),
                pivots: Vec::new(),
            });
        };
        let rows = a.nrows();
        let mut m = DMatrix::zeros(rows, n + 1);
        m.view_mut((0, 0), (rows, n)).copy_from(a);
        m.set_column(n, b);
        let mut pivot_cols = Vec::new();
        let mut r = 0;
        for c in 0..n {
            if r == rows {
                break;
            }
            let (p, val) = (r..rows)
                .map(|i| (i, m[(i, c)].abs()))
                .fold((r, -1.0), |acc, it| if it.1 > acc.1 { it } else { acc });
            if val < 1e-12 {
                continue;
            }
            m.swap_rows(r, p);
            let piv = m[(r, c)];
            for j in 0..=n {
                m[(r, j)] /= piv;
            }
            for i in 0..rows {
                if i != r {
                    let factor = m[(i, c)];
                    if factor != 0.0 {
                        for j in 0..=n {
                            m[(i, j)] -= factor * m[(r, j)];
                        }
                    }
                }
            }
            pivot_cols.push(c);
            r += 1;
        }
        if r < rows {
            return Err(Error::InvalidParameter("equality rows are linearly dependent".into()));
        }
        let free: Vec<usize> = (0..n).filter(|c| !pivot_cols.contains(c)).collect();
        let pivots = pivot_cols
            .iter()
            .enumerate()
            .map(|(row, &c)| {
                let coeffs = free.iter().map(|&f| m[(row, f)]).collect();
                (c, m[(row, n)], coeffs)
            })
            .collect();
        Ok(Self { dim: n, free, pivots })
    }

    fn expand(&self, z: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        for (k, &j) in self.free.iter().enumerate() {
            x[j] = z[k];
        }
        for (c, rhs, coeffs) in &self.pivots {
            x[*c] = rhs - coeffs.iter().zip(z).map(|(a, v)| a * v).sum::<f64>();
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn quad_1d(center: f64) -> SeparableObjective {
        SeparableObjective {
            quad: vec![1.0],
            lin: vec![-2.0 * center],
            recip: vec![0.0],
            constant: center * center,
        }
    }

    #[test]
    fn bound_constrained_interior_optimum() {
        let p = ConvexProgram::new(1, quad_1d(1.0)).with_lower_bounds(vec![0.0]).unwrap();
        let r = solve(&p, &[0.5], 1e-8).unwrap();
        assert_eq!(r.status, SolveStatus::Converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6);
        assert!(r.objective_value.abs() < 1e-8);
        assert!(r.kkt_residual <= 1e-8);
    }

    #[test]
    fn active_bound_has_positive_multiplier() {
        let p = ConvexProgram::new(1, quad_1d(-1.0)).with_lower_bounds(vec![0.0]).unwrap();
        let r = solve(&p, &[2.0], 1e-8).unwrap();
        assert_eq!(r.status, SolveStatus::Converged);
        assert!(r.x[0].abs() < 1e-6);
        assert!((r.multipliers.bounds[0] - 2.0).abs() < 1e-5);
    }

    #[test]
    fn equality_constrained_symmetric() {
        let obj = SeparableObjective {
            quad: vec![1.0, 1.0],
            ..SeparableObjective::zeros(2)
        };
        let p = ConvexProgram::new(2, obj)
            .with_equalities(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DVector::from_element(1, 1.0))
            .unwrap();
        let r = solve(&p, &[3.0, -7.0], 1e-8).unwrap();
        assert_eq!(r.status, SolveStatus::Converged);
        assert!((r.x[0] - 0.5).abs() < 1e-9 && (r.x[1] - 0.5).abs() < 1e-9);
        assert!((r.multipliers.eq[0] + 1.0).abs() < 1e-8);
    }

    #[test]
    fn infeasible_start_is_restored() {
        // minimize x + y with 1/x − y <= 0, x >= 0.1, start outside
        let obj = SeparableObjective {
            lin: vec![1.0, 1.0],
            ..SeparableObjective::zeros(2)
        };
        let p = ConvexProgram::new(2, obj)
            .with_inequality(ReciprocalEpigraph {
                var: 0,
                epigraph: 1,
                numerator: 1.0,
                offset: 0.0,
            })
            .with_lower_bounds(vec![0.1, f64::NEG_INFINITY])
            .unwrap();
        let r = solve(&p, &[-1.0, -5.0], 1e-8).unwrap();
        assert_eq!(r.status, SolveStatus::Converged);
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5);
        assert!((r.objective_value - 2.0).abs() < 1e-7);
    }

    #[test]
    fn infeasible_program_is_reported() {
        // x >= 1 together with x <= 0
        let p = ConvexProgram::new(1, quad_1d(0.0))
            .with_inequality(DenseFunction::new(
                |x| x[0],
                |_| vec![1.0],
                |_| DMatrix::zeros(1, 1),
            ))
            .with_lower_bounds(vec![1.0])
            .unwrap();
        let r = solve(&p, &[0.5], 1e-8).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
    }

    #[test]
    fn perturbed_optimum_fails_kkt() {
        let obj = SeparableObjective {
            quad: vec![1.0, 2.0],
            lin: vec![-1.0, 0.0],
            ..SeparableObjective::zeros(2)
        };
        let p = ConvexProgram::new(2, obj).with_lower_bounds(vec![0.0, 0.0]).unwrap();
        let r = solve(&p, &[1.0, 1.0], 1e-8).unwrap();
        assert!(kkt_residual(&p, &r.x, &r.multipliers).unwrap() <= 1e-8);
        let mut x = r.x.clone();
        x[0] += 1e-2;
        assert!(kkt_residual(&p, &x, &r.multipliers).unwrap() > 1e-8);
    }

    #[test]
    fn kkt_rejects_bad_multipliers() {
        let p = ConvexProgram::new(1, quad_1d(1.0)).with_lower_bounds(vec![0.0]).unwrap();
        let bad = Multipliers {
            ineq: vec![],
            bounds: vec![-1.0],
            eq: vec![],
        };
        assert!(matches!(kkt_residual(&p, &[1.0], &bad), Err(Error::InvalidParameter(_))));
        let short = Multipliers::default();
        assert!(matches!(kkt_residual(&p, &[1.0], &short), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn solve_is_deterministic() {
        let obj = SeparableObjective {
            quad: vec![1.0, 0.5, 2.0],
            lin: vec![0.3, -1.0, 0.0],
            recip: vec![0.2, 0.0, 0.1],
            constant: 0.0,
        };
        let p = ConvexProgram::new(3, obj)
            .with_equalities(DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]), DVector::from_element(1, 2.0))
            .unwrap()
            .with_lower_bounds(vec![0.01; 3])
            .unwrap();
        let a = solve(&p, &[0.5, 0.5, 1.0], 1e-8).unwrap();
        let b = solve(&p, &[0.5, 0.5, 1.0], 1e-8).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.status, SolveStatus::Converged);
    }

    #[test]
    fn grid_oracle_one_dimensional() {
        let p = ConvexProgram::new(1, quad_1d(1.0));
        let (x, v) = grid_oracle(&p, &[(0.0, 2.0)], 1e-3).unwrap();
        assert!((x[0] - 1.0).abs() <= 1e-3);
        assert!(v <= 1e-6);
    }

    #[test]
    fn grid_oracle_matches_solver_on_simplex_inverse() {
        // minimize 1/w1 + 2/w2 on the simplex
        let obj = SeparableObjective {
            recip: vec![1.0, 2.0],
            ..SeparableObjective::zeros(2)
        };
        let p = ConvexProgram::new(2, obj)
            .with_equalities(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DVector::from_element(1, 1.0))
            .unwrap()
            .with_lower_bounds(vec![1e-3, 1e-3])
            .unwrap();
        let r = solve(&p, &[0.5, 0.5], 1e-8).unwrap();
        let (_, v) = grid_oracle(&p, &[(0.0, 1.0), (0.0, 1.0)], 1e-3).unwrap();
        assert!((r.objective_value - v).abs() / v <= 1e-3);
        // closed form: w ∝ sqrt(r)
        let s = 1.0 + 2f64.sqrt();
        assert_relative_eq!(r.x[0], 1.0 / s, epsilon = 1e-6);
    }

    #[test]
    fn grid_oracle_empty_and_refused() {
        let p = ConvexProgram::new(1, quad_1d(0.0)).with_lower_bounds(vec![5.0]).unwrap();
        assert!(matches!(grid_oracle(&p, &[(0.0, 1.0)], 1e-3), Err(Error::Infeasible(_))));
        let big = ConvexProgram::new(5, SeparableObjective::zeros(5));
        assert!(matches!(
            grid_oracle(&big, &[(0.0, 1.0); 5], 1e-3),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn elimination_reproduces_equalities() {
        let a = DMatrix::from_row_slice(2, 4, &[1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0]);
        let b = DVector::from_column_slice(&[1.0, 3.0]);
        let p = ConvexProgram::new(4, SeparableObjective::zeros(4))
            .with_equalities(a.clone(), b.clone())
            .unwrap();
        let e = Elimination::new(&p).unwrap();
        assert_eq!(e.free.len(), 2);
        let x = e.expand(&[0.3, -0.7]);
        let r = a * DVector::from_column_slice(&x) - b;
        assert!(r.amax() < 1e-14);
    }
}
