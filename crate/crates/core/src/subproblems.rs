//! Convex CPU and bandwidth allocation subproblems, in centralized form
//! (all services at once) and per-service decentralized form.
//!
//! CPU variables are expressed in GHz so that penalty weights and stopping
//! thresholds of the decentralized solver act on O(1) quantities. Bandwidth
//! variables are fractions of the uplink band; epigraph variables are
//! seconds.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cost::spectral_efficiency;
use crate::error::{check_len, Error, Result};
use crate::learning::{fedl_constants, num_global_rounds, num_local_rounds};
use crate::scenario::{Scenario, HZ_PER_GHZ};
use crate::solver::{ConvexProgram, Multipliers, ReciprocalEpigraph, SeparableObjective};

/// Penalty, proximal and stopping parameters of the decentralized solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmmParams {
    /// Penalty on the shared-CPU coupling, per GHz².
    pub rho1: f64,
    /// Penalty on bandwidth consensus.
    pub rho2: f64,
    /// Proximal weight on the change of a service's CPU shares, per GHz².
    pub proximal_weight: f64,
    /// Dual step relaxation α in (0, 2).
    pub relax_alpha: f64,
    /// CPU stopping threshold, GHz.
    pub eps1: f64,
    /// Bandwidth stopping threshold.
    pub eps2: f64,
    pub max_outer: usize,
}

impl Default for AdmmParams {
    fn default() -> Self {
        Self {
            rho1: 1000.0,
            rho2: 10.0,
            proximal_weight: 1500.0,
            relax_alpha: 1.0,
            eps1: 1e-4,
            eps2: 1e-5,
            max_outer: 2000,
        }
    }
}

impl AdmmParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rho1", self.rho1),
            ("rho2", self.rho2),
            ("proximal_weight", self.proximal_weight),
            ("eps1", self.eps1),
            ("eps2", self.eps2),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.relax_alpha > 0.0 && self.relax_alpha < 2.0) {
            return Err(Error::InvalidParameter(format!(
                "relax_alpha must lie in (0, 2), got {}",
                self.relax_alpha
            )));
        }
        if self.max_outer == 0 {
            return Err(Error::InvalidParameter("max_outer must be at least 1".into()));
        }
        Ok(())
    }

    /// Known sufficient condition for convergence of the Jacobi-proximal
    /// scheme with `n_services` blocks. Frequently false for practical
    /// settings; it is reported, not enforced.
    pub fn sufficient_condition(&self, n_services: usize) -> bool {
        self.proximal_weight > self.rho1 * (n_services as f64 / (2.0 - self.relax_alpha) - 1.0)
    }
}

/// Round multipliers of one service at a fixed learning rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceRounds {
    pub global: f64,
    pub local: f64,
}

/// Global and local round counts of every service at learning rates `eta`.
pub fn service_rounds(scenario: &Scenario, eta: &[f64]) -> Result<Vec<ServiceRounds>> {
    check_len("eta", scenario.num_services(), eta.len())?;
    scenario
        .services
        .iter()
        .map(|svc| {
            let k = fedl_constants(svc.local_accuracy, &scenario.learning, svc.round_scale)?;
            let global = num_global_rounds(eta[svc.id], &k).map_err(|e| match e {
                Error::Domain(m) => Error::Domain(format!("service {}: {m}", svc.id)),
                other => other,
            })?;
            let local = num_local_rounds(svc.local_accuracy, &scenario.learning)? as f64;
            Ok(ServiceRounds { global, local })
        })
        .collect()
}

/// Variable layout of the centralized programs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CentralLayout {
    pub n_services: usize,
    pub n_ues: usize,
}

impl CentralLayout {
    pub fn of(scenario: &Scenario) -> Self {
        Self {
            n_services: scenario.num_services(),
            n_ues: scenario.num_ues(),
        }
    }

    /// Index of `f_{s,n}` in the CPU program.
    pub fn cpu(&self, s: usize, n: usize) -> usize {
        s * self.n_ues + n
    }

    /// Index of `T^cmp_s` in the CPU program.
    pub fn cpu_time(&self, s: usize) -> usize {
        self.n_services * self.n_ues + s
    }

    pub fn cpu_dim(&self) -> usize {
        self.n_services * (self.n_ues + 1)
    }

    /// Index of `T^com_s` in the bandwidth program (`w_n` sits at index `n`).
    pub fn bandwidth_time(&self, s: usize) -> usize {
        self.n_ues + s
    }

    pub fn bandwidth_dim(&self) -> usize {
        self.n_ues + self.n_services
    }
}

/// Seconds of computation per GHz of one local iteration at UE `n`.
fn cycles_ghz(scenario: &Scenario, s: usize, n: usize) -> f64 {
    let svc = &scenario.services[s];
    svc.cycles_per_bit * svc.data_sizes[n] / HZ_PER_GHZ
}

/// Energy coefficient: one local iteration costs `coef · f²` J at `f` GHz.
fn energy_coef(scenario: &Scenario, s: usize, n: usize) -> f64 {
    let svc = &scenario.services[s];
    let ue = &scenario.ues[n];
    0.5 * ue.capacitance * svc.cycles_per_bit * svc.data_sizes[n] * HZ_PER_GHZ * HZ_PER_GHZ
}

/// Upload time at the full band, so that `upload(w) = upload_unit / w`.
fn upload_unit(scenario: &Scenario, s: usize, n: usize) -> f64 {
    scenario.services[s].update_size
        / (scenario.network.uplink_bandwidth * spectral_efficiency(&scenario.ues[n], &scenario.network))
}

fn comm_offset(scenario: &Scenario, s: usize, n: usize, downlink: f64) -> f64 {
    downlink + scenario.ues[n].comm_overhead[s]
}

/// Global CPU program over all services (variables in GHz and seconds):
///
/// ```text
/// min  Σ_s K_l K_g (Σ_n (β_n/2) c_s D_sn f_sn² + κ_s T_s)
/// s.t. c_s D_sn / f_sn + τ^m_sn <= T_s,  Σ_s f_sn = f_n^tot,  f_sn >= f_s^min
/// ```
pub fn build_sub2c(scenario: &Scenario, eta: &[f64]) -> Result<ConvexProgram> {
    scenario.validate()?;
    let rounds = service_rounds(scenario, eta)?;
    let lay = CentralLayout::of(scenario);
    let mut obj = SeparableObjective::zeros(lay.cpu_dim());
    let mut lb = vec![f64::NEG_INFINITY; lay.cpu_dim()];
    for svc in &scenario.services {
        let s = svc.id;
        let w = rounds[s].global * rounds[s].local;
        obj.lin[lay.cpu_time(s)] = w * svc.tradeoff_weight;
        for n in 0..lay.n_ues {
            obj.quad[lay.cpu(s, n)] = w * energy_coef(scenario, s, n);
            lb[lay.cpu(s, n)] = svc.cpu_min / HZ_PER_GHZ;
        }
    }
    let mut a = DMatrix::zeros(lay.n_ues, lay.cpu_dim());
    let mut b = DVector::zeros(lay.n_ues);
    for ue in &scenario.ues {
        for s in 0..lay.n_services {
            a[(ue.id, lay.cpu(s, ue.id))] = 1.0;
        }
        b[ue.id] = ue.cpu_total / HZ_PER_GHZ;
    }
    let mut program = ConvexProgram::new(lay.cpu_dim(), obj)
        .with_equalities(a, b)?
        .with_lower_bounds(lb)?;
    for s in 0..lay.n_services {
        for n in 0..lay.n_ues {
            program.push_inequality(std::sync::Arc::new(ReciprocalEpigraph {
                var: lay.cpu(s, n),
                epigraph: lay.cpu_time(s),
                numerator: cycles_ghz(scenario, s, n),
                offset: scenario.ues[n].mem_overhead[s],
            }));
        }
    }
    Ok(program)
}

/// Strictly feasible start of [`build_sub2c`]: equal CPU split and slack epigraph times.
pub fn sub2c_start(scenario: &Scenario) -> Vec<f64> {
    let lay = CentralLayout::of(scenario);
    let mut x = vec![0.0; lay.cpu_dim()];
    let split = lay.n_services as f64;
    for s in 0..lay.n_services {
        let mut worst: f64 = 0.0;
        for ue in &scenario.ues {
            let f = ue.cpu_total / HZ_PER_GHZ / split;
            x[lay.cpu(s, ue.id)] = f;
            worst = worst.max(cycles_ghz(scenario, s, ue.id) / f + ue.mem_overhead[s]);
        }
        x[lay.cpu_time(s)] = slack_time(worst);
    }
    x
}

fn slack_time(worst: f64) -> f64 {
    1.1 * worst + 1e-3
}

/// Global bandwidth program (variables: fractions `w_n`, then `T^com_s`):
///
/// ```text
/// min  Σ_s K_g (Σ_n p_n v_s / (w_n B R_n) + κ_s T_s)
/// s.t. v_s / (w_n B R_n) + τ^dl_s + τ^ex_sn <= T_s,  Σ_n w_n = 1,  w_n >= w_min
/// ```
pub fn build_sub3c(scenario: &Scenario, eta: &[f64]) -> Result<ConvexProgram> {
    scenario.validate()?;
    let rounds = service_rounds(scenario, eta)?;
    let lay = CentralLayout::of(scenario);
    let mut obj = SeparableObjective::zeros(lay.bandwidth_dim());
    for svc in &scenario.services {
        let s = svc.id;
        obj.lin[lay.bandwidth_time(s)] = rounds[s].global * svc.tradeoff_weight;
        for ue in &scenario.ues {
            obj.recip[ue.id] += rounds[s].global * ue.tx_power * upload_unit(scenario, s, ue.id);
        }
    }
    let mut lb = vec![f64::NEG_INFINITY; lay.bandwidth_dim()];
    let mut a = DMatrix::zeros(1, lay.bandwidth_dim());
    for n in 0..lay.n_ues {
        lb[n] = scenario.bandwidth_min;
        a[(0, n)] = 1.0;
    }
    let mut program = ConvexProgram::new(lay.bandwidth_dim(), obj)
        .with_equalities(a, DVector::from_element(1, 1.0))?
        .with_lower_bounds(lb)?;
    for svc in &scenario.services {
        let dl = crate::cost::downlink_time(svc, scenario);
        for n in 0..lay.n_ues {
            program.push_inequality(std::sync::Arc::new(ReciprocalEpigraph {
                var: n,
                epigraph: lay.bandwidth_time(svc.id),
                numerator: upload_unit(scenario, svc.id, n),
                offset: comm_offset(scenario, svc.id, n, dl),
            }));
        }
    }
    Ok(program)
}

/// Strictly feasible start of [`build_sub3c`]: equal bandwidth and slack times.
pub fn sub3c_start(scenario: &Scenario) -> Vec<f64> {
    let lay = CentralLayout::of(scenario);
    let w = 1.0 / lay.n_ues as f64;
    let mut x = vec![w; lay.bandwidth_dim()];
    for svc in &scenario.services {
        let dl = crate::cost::downlink_time(svc, scenario);
        let worst = (0..lay.n_ues)
            .map(|n| upload_unit(scenario, svc.id, n) / w + comm_offset(scenario, svc.id, n, dl))
            .fold(0.0, f64::max);
        x[lay.bandwidth_time(svc.id)] = slack_time(worst);
    }
    x
}

/// CPU program of service `s` alone, coupled to its peers through the
/// dual `y`, a quadratic penalty and a proximal term (variables: `f_s,n`
/// in GHz, then `T^cmp_s`):
///
/// ```text
/// min  K_l K_g (Σ_n (β_n/2) c D f_n² + κ T) + yᵀf
///      + ρ1/2 ‖F_others + f − f^tot‖² + ν/2 ‖f − f_prev‖²
/// s.t. c D_n / f_n + τ^m_n <= T,  f_n >= f^min
/// ```
///
/// `f_others_sum`, `f_prev` and `y` are in GHz (and cost per GHz).
pub fn build_sub2d(
    scenario: &Scenario,
    s: usize,
    eta_s: f64,
    f_others_sum: &[f64],
    f_prev: &[f64],
    y: &[f64],
    params: &AdmmParams,
) -> Result<ConvexProgram> {
    let n_ues = scenario.num_ues();
    check_service(scenario, s)?;
    for (name, v) in [("f_others_sum", f_others_sum), ("f_prev", f_prev), ("y", y)] {
        if v.len() != n_ues {
            return Err(Error::InvalidParameter(format!(
                "{name} has {} entries, expected {n_ues}",
                v.len()
            )));
        }
    }
    let rounds = single_service_rounds(scenario, s, eta_s)?;
    let svc = &scenario.services[s];
    let w = rounds.global * rounds.local;
    let (rho1, prox) = (params.rho1, params.proximal_weight);
    let mut obj = SeparableObjective::zeros(n_ues + 1);
    obj.lin[n_ues] = w * svc.tradeoff_weight;
    let mut lb = vec![f64::NEG_INFINITY; n_ues + 1];
    for ue in &scenario.ues {
        let n = ue.id;
        let gap = f_others_sum[n] - ue.cpu_total / HZ_PER_GHZ;
        obj.quad[n] = w * energy_coef(scenario, s, n) + 0.5 * (rho1 + prox);
        obj.lin[n] = y[n] + rho1 * gap - prox * f_prev[n];
        obj.constant += 0.5 * rho1 * gap * gap + 0.5 * prox * f_prev[n] * f_prev[n];
        lb[n] = svc.cpu_min / HZ_PER_GHZ;
    }
    let mut program = ConvexProgram::new(n_ues + 1, obj).with_lower_bounds(lb)?;
    for n in 0..n_ues {
        program.push_inequality(std::sync::Arc::new(ReciprocalEpigraph {
            var: n,
            epigraph: n_ues,
            numerator: cycles_ghz(scenario, s, n),
            offset: scenario.ues[n].mem_overhead[s],
        }));
    }
    Ok(program)
}

/// Start point of [`build_sub2d`] from CPU shares `f` (GHz), with slack time.
pub fn sub2d_start(scenario: &Scenario, s: usize, f: &[f64]) -> Vec<f64> {
    let worst = f
        .iter()
        .enumerate()
        .map(|(n, &fi)| cycles_ghz(scenario, s, n) / fi + scenario.ues[n].mem_overhead[s])
        .fold(0.0, f64::max);
    let mut x = f.to_vec();
    x.push(slack_time(worst));
    x
}

/// Bandwidth program of service `s` with its own copy `w_s` of the
/// allocation, tied to the consensus `z` by a dual and a penalty:
///
/// ```text
/// min  K_g (Σ_n p_n v / (w_n B R_n) + κ T) + dualᵀ(w − z) + ρ2/2 ‖w − z‖²
/// s.t. v / (w_n B R_n) + τ^dl + τ^ex_n <= T,  Σ_n w_n = 1,  w_n >= w_min
/// ```
pub fn build_sub3d(
    scenario: &Scenario,
    s: usize,
    eta_s: f64,
    z: &[f64],
    dual: &[f64],
    params: &AdmmParams,
) -> Result<ConvexProgram> {
    let n_ues = scenario.num_ues();
    check_service(scenario, s)?;
    for (name, v) in [("z", z), ("bandwidth_dual", dual)] {
        if v.len() != n_ues {
            return Err(Error::InvalidParameter(format!(
                "{name} has {} entries, expected {n_ues}",
                v.len()
            )));
        }
    }
    let rounds = single_service_rounds(scenario, s, eta_s)?;
    let svc = &scenario.services[s];
    let rho2 = params.rho2;
    let mut obj = SeparableObjective::zeros(n_ues + 1);
    obj.lin[n_ues] = rounds.global * svc.tradeoff_weight;
    let mut lb = vec![f64::NEG_INFINITY; n_ues + 1];
    let mut a = DMatrix::zeros(1, n_ues + 1);
    for ue in &scenario.ues {
        let n = ue.id;
        obj.recip[n] = rounds.global * ue.tx_power * upload_unit(scenario, s, n);
        obj.quad[n] = 0.5 * rho2;
        obj.lin[n] = dual[n] - rho2 * z[n];
        obj.constant += -dual[n] * z[n] + 0.5 * rho2 * z[n] * z[n];
        lb[n] = scenario.bandwidth_min;
        a[(0, n)] = 1.0;
    }
    let mut program = ConvexProgram::new(n_ues + 1, obj)
        .with_equalities(a, DVector::from_element(1, 1.0))?
        .with_lower_bounds(lb)?;
    let dl = crate::cost::downlink_time(svc, scenario);
    for n in 0..n_ues {
        program.push_inequality(std::sync::Arc::new(ReciprocalEpigraph {
            var: n,
            epigraph: n_ues,
            numerator: upload_unit(scenario, s, n),
            offset: comm_offset(scenario, s, n, dl),
        }));
    }
    Ok(program)
}

/// Start point of [`build_sub3d`] from bandwidth fractions `w`, with slack time.
pub fn sub3d_start(scenario: &Scenario, s: usize, w: &[f64]) -> Vec<f64> {
    let dl = crate::cost::downlink_time(&scenario.services[s], scenario);
    let worst = w
        .iter()
        .enumerate()
        .map(|(n, &wi)| upload_unit(scenario, s, n) / wi + comm_offset(scenario, s, n, dl))
        .fold(0.0, f64::max);
    let mut x = w.to_vec();
    x.push(slack_time(worst));
    x
}

fn check_service(scenario: &Scenario, s: usize) -> Result<()> {
    if s >= scenario.num_services() {
        return Err(Error::InvalidParameter(format!(
            "service index {s} out of range ({} services)",
            scenario.num_services()
        )));
    }
    Ok(())
}

fn single_service_rounds(scenario: &Scenario, s: usize, eta_s: f64) -> Result<ServiceRounds> {
    let svc = &scenario.services[s];
    let k = fedl_constants(svc.local_accuracy, &scenario.learning, svc.round_scale)?;
    let global = num_global_rounds(eta_s, &k)
        .map_err(|e| Error::Domain(format!("service {s}: {e}")))?;
    let local = num_local_rounds(svc.local_accuracy, &scenario.learning)? as f64;
    Ok(ServiceRounds { global, local })
}

/// Stationarity residual of the centralized CPU program written out from
/// its Lagrangian: for every `(s, n)`
///
/// ```text
/// K_l K_g β_n c D f − λ_sn c D / f² + ν_n − μ_sn = 0
/// K_l K_g κ_s − Σ_n λ_sn = 0
/// ```
///
/// scaled like [`crate::solver::kkt_residual`]; multipliers are laid out as
/// the generic program's.
pub fn sub2c_stationarity(
    scenario: &Scenario,
    eta: &[f64],
    x: &[f64],
    mult: &Multipliers,
) -> Result<f64> {
    let lay = CentralLayout::of(scenario);
    check_len("x", lay.cpu_dim(), x.len())?;
    check_len("inequality multipliers", lay.n_services * lay.n_ues, mult.ineq.len())?;
    check_len("bound multipliers", lay.cpu_dim(), mult.bounds.len())?;
    check_len("equality multipliers", lay.n_ues, mult.eq.len())?;
    let rounds = service_rounds(scenario, eta)?;
    let mut grad_max: f64 = 0.0;
    let mut resid_max: f64 = 0.0;
    for svc in &scenario.services {
        let s = svc.id;
        let w = rounds[s].global * rounds[s].local;
        let mut lambda_sum = 0.0;
        for n in 0..lay.n_ues {
            let f = x[lay.cpu(s, n)];
            let cd = cycles_ghz(scenario, s, n);
            let lambda = mult.ineq[s * lay.n_ues + n];
            lambda_sum += lambda;
            let df = 2.0 * w * energy_coef(scenario, s, n) * f;
            grad_max = grad_max.max(df.abs());
            let r = df - lambda * cd / (f * f) + mult.eq[n] - mult.bounds[lay.cpu(s, n)];
            resid_max = resid_max.max(r.abs());
        }
        let dt = w * svc.tradeoff_weight;
        grad_max = grad_max.max(dt.abs());
        resid_max = resid_max.max((dt - lambda_sum - mult.bounds[lay.cpu_time(s)]).abs());
    }
    Ok(resid_max / (1.0 + grad_max))
}
