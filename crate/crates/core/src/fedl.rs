//! Small federated training simulator on synthetic strongly convex tasks.
//!
//! Each round every UE approximately minimizes its surrogate
//! `J_n(w) = F_n(w) + ⟨η∇F(w_prev) − ∇F_n(w_prev), w⟩` by gradient descent
//! until `‖∇J_n(w)‖ ≤ θ‖∇J_n(w_prev)‖`, and the server averages the local
//! models weighted by data size. Used to check the round-count model that
//! the cost model relies on.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::{fedl_constants, theta_cap};
use crate::scenario::{LearningGlobals, ScenarioRng};

/// Regularization weight of the synthetic losses (their strong convexity).
pub const DEFAULT_REGULARIZER: f64 = 0.5;
/// Local iteration cap of [`local_train`] when driven by [`run_fedl`].
pub const MAX_LOCAL_ITERS: u32 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossFamily {
    /// `½(⟨x, w⟩ − y)² + (β/2)‖w‖²`
    Linear,
    /// `ln(1 + exp(−y⟨x, w⟩)) + (β/2)‖w‖²`, labels in {−1, 1}
    Logistic,
}

impl std::str::FromStr for LossFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "logistic" => Ok(Self::Logistic),
            other => Err(Error::Config(format!("unknown loss family '{other}'"))),
        }
    }
}

/// One UE's samples; rows of `features` are samples.
#[derive(Debug, Clone, PartialEq)]
pub struct UeData {
    pub features: DMatrix<f64>,
    pub labels: DVector<f64>,
}

impl UeData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub ues: Vec<UeData>,
    pub family: LossFamily,
    pub regularizer: f64,
    pub dim: usize,
    /// Largest local smoothness constant.
    pub smoothness: f64,
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^{-t})` without overflow.
fn log1p_exp_neg(t: f64) -> f64 {
    if t > 0.0 {
        (-t).exp().ln_1p()
    } else {
        -t + t.exp().ln_1p()
    }
}

impl SyntheticTask {
    pub fn num_ues(&self) -> usize {
        self.ues.len()
    }

    pub fn strong_convexity(&self) -> f64 {
        self.regularizer
    }

    pub fn condition_number(&self) -> f64 {
        self.smoothness / self.regularizer
    }

    /// Smoothness, strong convexity and the given local-rate constants.
    pub fn learning_globals(&self, rate_gamma: f64, rate_c: f64) -> LearningGlobals {
        LearningGlobals {
            smoothness: self.smoothness,
            strong_convexity: self.regularizer,
            rate_gamma,
            rate_c,
        }
    }

    /// `|D_n| / |D|` per UE.
    pub fn weights(&self) -> Vec<f64> {
        let total: usize = self.ues.iter().map(UeData::len).sum();
        self.ues.iter().map(|u| u.len() as f64 / total as f64).collect()
    }

    pub fn local_loss(&self, n: usize, w: &DVector<f64>) -> f64 {
        let ue = &self.ues[n];
        let margins = &ue.features * w;
        let data: f64 = match self.family {
            LossFamily::Linear => margins
                .iter()
                .zip(ue.labels.iter())
                .map(|(m, y)| 0.5 * (m - y) * (m - y))
                .sum(),
            LossFamily::Logistic => margins
                .iter()
                .zip(ue.labels.iter())
                .map(|(m, y)| log1p_exp_neg(y * m))
                .sum(),
        };
        data / ue.len() as f64 + 0.5 * self.regularizer * w.norm_squared()
    }

    pub fn local_gradient(&self, n: usize, w: &DVector<f64>) -> DVector<f64> {
        let ue = &self.ues[n];
        let margins = &ue.features * w;
        let coef = DVector::from_iterator(
            ue.len(),
            margins.iter().zip(ue.labels.iter()).map(|(m, y)| match self.family {
                LossFamily::Linear => m - y,
                LossFamily::Logistic => -y * sigmoid(-y * m),
            }),
        );
        ue.features.tr_mul(&coef) / ue.len() as f64 + w * self.regularizer
    }

    pub fn local_hessian(&self, n: usize, w: &DVector<f64>) -> DMatrix<f64> {
        let ue = &self.ues[n];
        let curvature: Vec<f64> = match self.family {
            LossFamily::Linear => vec![1.0; ue.len()],
            LossFamily::Logistic => (&ue.features * w)
                .iter()
                .map(|m| {
                    let p = sigmoid(*m);
                    p * (1.0 - p)
                })
                .collect(),
        };
        let mut scaled = ue.features.clone();
        for (i, c) in curvature.iter().enumerate() {
            scaled.row_mut(i).scale_mut(*c);
        }
        ue.features.tr_mul(&scaled) / ue.len() as f64
            + DMatrix::identity(self.dim, self.dim) * self.regularizer
    }

    pub fn global_loss(&self, w: &DVector<f64>) -> f64 {
        self.weights()
            .iter()
            .enumerate()
            .map(|(n, p)| p * self.local_loss(n, w))
            .sum()
    }

    pub fn global_gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim);
        for (n, p) in self.weights().iter().enumerate() {
            g += self.local_gradient(n, w) * *p;
        }
        g
    }

    pub fn global_hessian(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.dim, self.dim);
        for (n, p) in self.weights().iter().enumerate() {
            h += self.local_hessian(n, w) * *p;
        }
        h
    }

    /// Minimizer of the global loss by damped Newton, to a gradient norm of
    /// 1e-12.
    pub fn optimum(&self) -> Result<DVector<f64>> {
        let mut w = DVector::zeros(self.dim);
        for _ in 0..100 {
            let g = self.global_gradient(&w);
            if g.norm() <= 1e-12 {
                return Ok(w);
            }
            let step = self
                .global_hessian(&w)
                .cholesky()
                .ok_or_else(|| Error::Domain("global Hessian is not positive definite".into()))?
                .solve(&(-&g));
            let f0 = self.global_loss(&w);
            let slope = g.dot(&step);
            let mut t = 1.0;
            while t > 1e-12 && self.global_loss(&(&w + &step * t)) > f0 + 0.25 * t * slope {
                t *= 0.5;
            }
            let next = &w + &step * t;
            if next == w {
                return Ok(w);
            }
            w = next;
        }
        Err(Error::NotConverged("Newton solve of the global loss".into()))
    }
}

/// Builds a deterministic task. Features are standard normal rows scaled to
/// unit norm; per-UE sample counts are uniform on
/// `[⌈s/2⌉, ⌊3s/2⌋]` around `samples_per_ue`.
pub fn make_synthetic_task(
    seed: u64,
    n_ues: usize,
    dim: usize,
    samples_per_ue: usize,
    family: LossFamily,
) -> Result<SyntheticTask> {
    make_synthetic_task_with(seed, n_ues, dim, samples_per_ue, family, DEFAULT_REGULARIZER)
}

pub fn make_synthetic_task_with(
    seed: u64,
    n_ues: usize,
    dim: usize,
    samples_per_ue: usize,
    family: LossFamily,
    regularizer: f64,
) -> Result<SyntheticTask> {
    if n_ues == 0 || dim == 0 || samples_per_ue == 0 {
        return Err(Error::InvalidParameter("task sizes must be at least 1".into()));
    }
    if !(regularizer > 0.0 && regularizer.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "regularizer must be positive, got {regularizer}"
        )));
    }
    let mut rng = ScenarioRng::seed_from_u64(seed);
    let truth: DVector<f64> = DVector::from_iterator(dim, (0..dim).map(|_| StandardNormal.sample(&mut rng)));
    let lo = samples_per_ue.div_ceil(2).max(1);
    let hi = (3 * samples_per_ue / 2).max(lo);
    let mut ues = Vec::with_capacity(n_ues);
    for _ in 0..n_ues {
        let m = rng.random_range(lo..=hi);
        let mut features = DMatrix::zeros(m, dim);
        for i in 0..m {
            let row: DVector<f64> = DVector::from_iterator(dim, (0..dim).map(|_| StandardNormal.sample(&mut rng)));
            let norm = row.norm().max(f64::MIN_POSITIVE);
            features.set_row(i, &(row / norm).transpose());
        }
        let margins = &features * &truth;
        let labels = DVector::from_iterator(
            m,
            margins.iter().map(|t| match family {
                LossFamily::Linear => {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    t + 0.1 * noise
                }
                LossFamily::Logistic => {
                    if rng.random::<f64>() < sigmoid(*t) {
                        1.0
                    } else {
                        -1.0
                    }
                }
            }),
        );
        ues.push(UeData { features, labels });
    }
    let smoothness = ues
        .iter()
        .map(|u| {
            let gram = u.features.tr_mul(&u.features) / u.len() as f64;
            let top = SymmetricEigen::new(gram).eigenvalues.max();
            let scale = match family {
                LossFamily::Linear => 1.0,
                LossFamily::Logistic => 0.25,
            };
            scale * top + regularizer
        })
        .fold(regularizer, f64::max);
    Ok(SyntheticTask {
        ues,
        family,
        regularizer,
        dim,
        smoothness,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalResult {
    pub weights: DVector<f64>,
    pub iterations: u32,
    /// Whether the θ-condition was met before the iteration cap.
    pub converged: bool,
}

/// Gradient of the surrogate of UE `ue` anchored at `w_prev`.
fn surrogate_gradient(
    task: &SyntheticTask,
    ue: usize,
    w: &DVector<f64>,
    shift: &DVector<f64>,
) -> DVector<f64> {
    task.local_gradient(ue, w) + shift
}

/// Runs `w ← w − step·∇J_n(w)` from `w_prev` until the θ-condition holds.
#[allow(clippy::too_many_arguments)]
pub fn local_train(
    task: &SyntheticTask,
    ue: usize,
    w_prev: &DVector<f64>,
    global_grad: &DVector<f64>,
    eta: f64,
    theta: f64,
    step: f64,
    max_iters: u32,
) -> Result<LocalResult> {
    if ue >= task.num_ues() {
        return Err(Error::InvalidParameter(format!("UE index {ue} out of range")));
    }
    if !(eta > 0.0) {
        return Err(Error::InvalidParameter(format!("eta must be positive, got {eta}")));
    }
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidParameter(format!("theta must lie in (0, 1), got {theta}")));
    }
    if !(step > 0.0 && step <= 1.0 / task.smoothness * (1.0 + 1e-12)) {
        return Err(Error::InvalidParameter(format!(
            "step {step} must lie in (0, 1/L = {}]",
            1.0 / task.smoothness
        )));
    }
    let shift = global_grad * eta - task.local_gradient(ue, w_prev);
    let target = theta * surrogate_gradient(task, ue, w_prev, &shift).norm();
    let mut w = w_prev.clone();
    for k in 0..max_iters {
        let g = surrogate_gradient(task, ue, &w, &shift);
        if g.norm() <= target {
            return Ok(LocalResult {
                weights: w,
                iterations: k,
                converged: true,
            });
        }
        w -= g * step;
    }
    let converged = surrogate_gradient(task, ue, &w, &shift).norm() <= target;
    if !converged {
        log::warn!("UE {ue}: local accuracy {theta} not reached in {max_iters} iterations");
    }
    Ok(LocalResult {
        weights: w,
        iterations: max_iters,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedlRound {
    pub round: usize,
    /// `F(w^t) − F(w*)`.
    pub loss_gap: f64,
    /// `(1 − Θ)^t (F(w^0) − F(w*))`.
    pub theta_bound_gap: f64,
    /// Local iterations per UE (empty for round 0).
    pub local_iters: Vec<u32>,
    /// All UEs met the θ-condition this round.
    pub theta_condition_met: bool,
    /// Largest deviation of `w^t` from the data-weighted local average.
    pub aggregation_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FedlTrace {
    pub eta: f64,
    pub theta: f64,
    /// Contraction factor predicted for the task's condition number.
    pub contraction: f64,
    pub rounds: Vec<FedlRound>,
    pub weights: DVector<f64>,
    pub optimum: DVector<f64>,
}

impl FedlTrace {
    pub fn gaps(&self) -> Vec<f64> {
        self.rounds.iter().map(|r| r.loss_gap).collect()
    }

    pub fn flagged(&self) -> bool {
        self.rounds.iter().any(|r| !r.theta_condition_met)
    }
}

/// Runs `rounds` federated rounds from `w^0 = 0` with step `1/L`.
pub fn run_fedl(task: &SyntheticTask, eta: f64, theta: f64, rounds: usize) -> Result<FedlTrace> {
    run_fedl_until(task, eta, theta, rounds, 0.0)
}

/// Like [`run_fedl`] but stops after the first round whose gap is at most
/// `target_ratio` times the initial gap. Useful because once the gap nears
/// rounding level the θ-condition can no longer be met.
pub fn run_fedl_until(
    task: &SyntheticTask,
    eta: f64,
    theta: f64,
    rounds: usize,
    target_ratio: f64,
) -> Result<FedlTrace> {
    let globals = task.learning_globals(1.0, 1.0);
    let constants = fedl_constants(theta, &globals, 1.0)?;
    let contraction = theta_cap(eta, &constants)?;
    let optimum = task.optimum()?;
    let f_star = task.global_loss(&optimum);
    let weights = task.weights();
    let step = 1.0 / task.smoothness;

    let mut w = DVector::zeros(task.dim);
    let initial_gap = task.global_loss(&w) - f_star;
    let mut trace = vec![FedlRound {
        round: 0,
        loss_gap: initial_gap,
        theta_bound_gap: initial_gap,
        local_iters: Vec::new(),
        theta_condition_met: true,
        aggregation_error: 0.0,
    }];
    for t in 1..=rounds {
        let g = task.global_gradient(&w);
        let locals: Vec<LocalResult> = (0..task.num_ues())
            .into_par_iter()
            .map(|n| local_train(task, n, &w, &g, eta, theta, step, MAX_LOCAL_ITERS))
            .collect::<Result<_>>()?;
        let mut next = DVector::zeros(task.dim);
        for (p, local) in weights.iter().zip(&locals) {
            next += &local.weights * *p;
        }
        let aggregation_error = {
            let total: usize = task.ues.iter().map(UeData::len).sum();
            let mut check = DVector::zeros(task.dim);
            for (ue, local) in task.ues.iter().zip(&locals) {
                check.axpy(ue.len() as f64, &local.weights, 1.0);
            }
            (check / total as f64 - &next).amax()
        };
        w = next;
        let gap = task.global_loss(&w) - f_star;
        if !gap.is_finite() || gap > 10.0 * initial_gap {
            return Err(Error::Divergence { eta, theta });
        }
        trace.push(FedlRound {
            round: t,
            loss_gap: gap,
            theta_bound_gap: (1.0 - contraction).powi(t as i32) * initial_gap,
            local_iters: locals.iter().map(|l| l.iterations).collect(),
            theta_condition_met: locals.iter().all(|l| l.converged),
            aggregation_error,
        });
        if gap <= target_ratio * initial_gap {
            break;
        }
    }
    Ok(FedlTrace {
        eta,
        theta,
        contraction,
        rounds: trace,
        weights: w,
        optimum,
    })
}

/// Constants `(c, γ)` of the local linear rate
/// `J(w^k) − J* ≤ c(1 − γ)^k (J(w^0) − J*)`, fitted from a gradient-descent
/// run on the first-round surrogate of every UE: γ is the slowest average
/// rate observed and c the smallest factor making the bound hold at every
/// recorded step.
pub fn fit_local_rate(task: &SyntheticTask, eta: f64, probe_iters: u32) -> Result<(f64, f64)> {
    if probe_iters == 0 {
        return Err(Error::InvalidParameter("probe_iters must be positive".into()));
    }
    let step = 1.0 / task.smoothness;
    let w0 = DVector::zeros(task.dim);
    let g = task.global_gradient(&w0);
    let mut histories = Vec::with_capacity(task.num_ues());
    for n in 0..task.num_ues() {
        let shift = &g * eta - task.local_gradient(n, &w0);
        let surrogate = |w: &DVector<f64>| task.local_loss(n, w) + shift.dot(w);
        // minimizer of the surrogate by Newton
        let mut w_star = w0.clone();
        for _ in 0..100 {
            let grad = surrogate_gradient(task, n, &w_star, &shift);
            if grad.norm() <= 1e-13 {
                break;
            }
            let dx = task
                .local_hessian(n, &w_star)
                .cholesky()
                .ok_or_else(|| Error::Domain("local Hessian is not positive definite".into()))?
                .solve(&(-grad));
            w_star += dx;
        }
        let j_star = surrogate(&w_star);
        let mut gaps = Vec::new();
        let mut w = w0.clone();
        let gap0 = surrogate(&w) - j_star;
        for _ in 0..=probe_iters {
            let gap = surrogate(&w) - j_star;
            // stop before the gap is swamped by rounding
            if gap <= 1e-10 * gap0.max(f64::MIN_POSITIVE) {
                break;
            }
            gaps.push(gap);
            w -= surrogate_gradient(task, n, &w, &shift) * step;
        }
        histories.push(gaps);
    }
    let gamma = histories
        .iter()
        .filter(|h| h.len() >= 2)
        .map(|h| 1.0 - (h[h.len() - 1] / h[0]).powf(1.0 / (h.len() - 1) as f64))
        .fold(f64::INFINITY, f64::min);
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Domain("no linear local rate could be fitted".into()));
    }
    let c = histories
        .iter()
        .flat_map(|h| {
            h.iter()
                .enumerate()
                .map(move |(k, gap)| gap / (h[0] * (1.0 - gamma).powi(k as i32)))
        })
        .fold(1.0, f64::max);
    Ok((c, gamma))
}

/// Coefficient of determination of the least-squares line through
/// `(i, values[i])`.
pub fn linear_fit_r2(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 3 {
        return 1.0;
    }
    let mean_x = (n - 1.0) / 2.0;
    let mean_y = values.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (i, y) in values.iter().enumerate() {
        let dx = i as f64 - mean_x;
        let dy = y - mean_y;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if syy == 0.0 {
        return 1.0;
    }
    sxy * sxy / (sxx * syy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::{num_local_rounds, optimal_eta};

    fn random_w(rng: &mut ScenarioRng, dim: usize) -> DVector<f64> {
        DVector::from_iterator(dim, (0..dim).map(|_| rng.random_range(-2.0..2.0)))
    }

    #[test]
    fn regularizer_certifies_strong_convexity() {
        let task = make_synthetic_task(1, 4, 6, 20, LossFamily::Linear).unwrap();
        let w = DVector::zeros(6);
        for n in 0..4 {
            let eig = SymmetricEigen::new(task.local_hessian(n, &w)).eigenvalues;
            assert!(eig.min() >= 0.5 - 1e-12);
            assert!(eig.max() <= task.smoothness + 1e-12);
        }
    }

    #[test]
    fn seed_replay_is_identical() {
        let a = make_synthetic_task(9, 3, 4, 8, LossFamily::Logistic).unwrap();
        let b = make_synthetic_task(9, 3, 4, 8, LossFamily::Logistic).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn global_gradient_is_weighted_local_average() {
        for family in [LossFamily::Linear, LossFamily::Logistic] {
            let task = make_synthetic_task(2, 2, 2, 4, family).unwrap();
            let mut rng = ScenarioRng::seed_from_u64(5);
            let total = (task.ues[0].len() + task.ues[1].len()) as f64;
            for _ in 0..10 {
                let w = random_w(&mut rng, 2);
                let expect = (task.local_gradient(0, &w) * task.ues[0].len() as f64
                    + task.local_gradient(1, &w) * task.ues[1].len() as f64)
                    / total;
                assert!((task.global_gradient(&w) - expect).amax() <= 1e-12);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for family in [LossFamily::Linear, LossFamily::Logistic] {
            let task = make_synthetic_task(3, 2, 3, 10, family).unwrap();
            let mut rng = ScenarioRng::seed_from_u64(6);
            let w = random_w(&mut rng, 3);
            let g = task.local_gradient(1, &w);
            let h = task.local_hessian(1, &w);
            for i in 0..3 {
                let mut e = DVector::zeros(3);
                e[i] = 1e-6;
                let fd = (task.local_loss(1, &(&w + &e)) - task.local_loss(1, &(&w - &e))) / 2e-6;
                assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + g[i].abs()));
                let fdg = (task.local_gradient(1, &(&w + &e)) - task.local_gradient(1, &(&w - &e))) / 2e-6;
                assert!((fdg - h.column(i)).amax() <= 1e-6);
            }
        }
    }

    #[test]
    fn stationary_start_returns_immediately() {
        let task = make_synthetic_task(4, 3, 3, 10, LossFamily::Linear).unwrap();
        let w_star = task.optimum().unwrap();
        let g = task.global_gradient(&w_star);
        assert!(g.norm() <= 1e-12);
        let out = local_train(&task, 0, &w_star, &DVector::zeros(3), 0.1, 0.5, 1.0 / task.smoothness, 10).unwrap();
        assert_eq!(out.iterations, 0);
        assert!(out.converged);
    }

    #[test]
    fn local_result_meets_theta_condition() {
        let task = make_synthetic_task(5, 3, 5, 30, LossFamily::Logistic).unwrap();
        let w = DVector::from_element(5, 0.3);
        let g = task.global_gradient(&w);
        let out = local_train(&task, 2, &w, &g, 0.2, 0.1, 1.0 / task.smoothness, 10_000).unwrap();
        let shift = &g * 0.2 - task.local_gradient(2, &w);
        let before = surrogate_gradient(&task, 2, &w, &shift).norm();
        let after = surrogate_gradient(&task, 2, &out.weights, &shift).norm();
        assert!(after <= 0.1 * before);
    }

    #[test]
    fn local_iterations_respect_fitted_bound() {
        let task = make_synthetic_task(6, 5, 10, 40, LossFamily::Linear).unwrap();
        let (c, gamma) = fit_local_rate(&task, 0.2, 2000).unwrap();
        let bound = num_local_rounds(0.5, &task.learning_globals(gamma, c)).unwrap();
        let w = DVector::zeros(10);
        let g = task.global_gradient(&w);
        for n in 0..5 {
            let out = local_train(&task, n, &w, &g, 0.2, 0.5, 1.0 / task.smoothness, 10_000).unwrap();
            assert!(out.iterations <= bound, "{} > {bound}", out.iterations);
        }
    }

    #[test]
    fn zero_rounds_is_initial_gap() {
        let task = make_synthetic_task(7, 3, 4, 10, LossFamily::Linear).unwrap();
        let k = fedl_constants(0.05, &task.learning_globals(1.0, 1.0), 1.0).unwrap();
        let tr = run_fedl(&task, optimal_eta(&k).unwrap(), 0.05, 0).unwrap();
        assert_eq!(tr.rounds.len(), 1);
        assert!(tr.rounds[0].loss_gap > 0.0);
    }

    #[test]
    fn quadratic_task_converges_linearly_within_envelope() {
        let task = make_synthetic_task(8, 5, 10, 50, LossFamily::Linear).unwrap();
        let theta = 0.05;
        let k = fedl_constants(theta, &task.learning_globals(1.0, 1.0), 1.0).unwrap();
        let tr = run_fedl(&task, optimal_eta(&k).unwrap(), theta, 30).unwrap();
        assert!(!tr.flagged());
        for r in &tr.rounds {
            assert!(r.loss_gap <= r.theta_bound_gap * (1.0 + 1e-9));
            assert!(r.aggregation_error <= 1e-12);
        }
        let logs: Vec<f64> = tr.gaps().iter().map(|g| g.ln()).collect();
        assert!(linear_fit_r2(&logs) >= 0.99);
    }

    #[test]
    fn bad_step_rejected() {
        let task = make_synthetic_task(1, 2, 2, 4, LossFamily::Linear).unwrap();
        let w = DVector::zeros(2);
        assert!(local_train(&task, 0, &w, &w, 0.1, 0.5, 2.0 / task.smoothness, 10).is_err());
        assert!(local_train(&task, 0, &w, &w, 0.1, 1.0, 0.5 / task.smoothness, 10).is_err());
    }

    #[test]
    fn r2_of_a_line_is_one() {
        let v: Vec<f64> = (0..10).map(|i| 3.0 - 0.5 * i as f64).collect();
        assert!((linear_fit_r2(&v) - 1.0).abs() < 1e-12);
    }
}
