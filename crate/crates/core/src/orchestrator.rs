//! End-to-end allocation strategies: the centralized block-coordinate pass,
//! the decentralized Jacobi-proximal ADMM (plus its early-stopping and
//! Gauss-Seidel variants) and two heuristic baselines.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{objective_unchecked, spectral_efficiency, total_cost, Allocation, CostBreakdown};
use crate::error::{Error, Result};
use crate::learning::{fedl_constants, optimal_eta};
use crate::scenario::{Scenario, HZ_PER_GHZ};
use crate::solver::{solve, SolveReport, SolveStatus, SolverOptions};
use crate::subproblems::{
    build_sub2c, build_sub2d, build_sub3c, build_sub3d, service_rounds, sub2c_start, sub2d_start,
    sub3c_start, sub3d_start, AdmmParams, CentralLayout,
};

/// Version of the serialized result document.
pub const RESULT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "centralized")]
    Centralized,
    #[serde(rename = "jp-admm")]
    JpAdmm,
    #[serde(rename = "jp-admm-es")]
    JpAdmmEarlyStop,
    #[serde(rename = "gs-miadmm")]
    GsMiAdmm,
    #[serde(rename = "heuristic-1")]
    HeuristicEqual,
    #[serde(rename = "heuristic-2")]
    HeuristicProportional,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Centralized => "centralized",
            Mode::JpAdmm => "jp-admm",
            Mode::JpAdmmEarlyStop => "jp-admm-es",
            Mode::GsMiAdmm => "gs-miadmm",
            Mode::HeuristicEqual => "heuristic-1",
            Mode::HeuristicProportional => "heuristic-2",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Update schedule of the decentralized solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecentralizedMode {
    /// All services update concurrently from the previous iterate.
    Jacobi,
    /// Jacobi updates, stopped as soon as both primal residuals are small.
    JacobiEarlyStop,
    /// Services update in turn, each seeing its peers' newest CPU shares;
    /// no proximal term.
    GaussSeidel,
}

impl DecentralizedMode {
    pub fn mode(self) -> Mode {
        match self {
            DecentralizedMode::Jacobi => Mode::JpAdmm,
            DecentralizedMode::JacobiEarlyStop => Mode::JpAdmmEarlyStop,
            DecentralizedMode::GaussSeidel => Mode::GsMiAdmm,
        }
    }
}

impl std::str::FromStr for DecentralizedMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jacobi" | "jp-admm" => Ok(Self::Jacobi),
            "jacobi-early-stop" | "jp-admm-es" => Ok(Self::JacobiEarlyStop),
            "gauss-seidel" | "gs-miadmm" => Ok(Self::GaussSeidel),
            other => Err(Error::Config(format!("unknown decentralized mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Converged,
    MaxIterations,
}

/// One iteration of a decentralized run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    /// Objective at the current CPU shares and (projected) consensus bandwidth.
    pub objective: f64,
    /// `‖Σ_s f_s − f^tot‖₂`, GHz.
    pub r1_norm: f64,
    /// `max_s ‖w_s − z‖₂`.
    pub r2_norm_max: f64,
    /// `‖f^(k+1) − f^(k)‖_F`, GHz.
    pub f_delta_frobenius: f64,
    /// `‖z^(k+1) − z^(k)‖₂`.
    pub z_delta: f64,
    pub mode: String,
}

/// Iterates of the decentralized solver. CPU quantities are in GHz.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub f: Vec<Vec<f64>>,
    pub w_per_service: Vec<Vec<f64>>,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    pub bandwidth_dual: Vec<Vec<f64>>,
    pub r1: Vec<f64>,
    pub r2: Vec<Vec<f64>>,
    pub iter: usize,
}

impl AdmmState {
    /// Equal CPU split, equal bandwidth for every service, zero duals.
    pub fn initial(scenario: &Scenario) -> Self {
        let (n_s, n_u) = (scenario.num_services(), scenario.num_ues());
        let f_row: Vec<f64> = scenario
            .ues
            .iter()
            .map(|u| u.cpu_total / HZ_PER_GHZ / n_s as f64)
            .collect();
        let w = vec![1.0 / n_u as f64; n_u];
        Self {
            f: vec![f_row; n_s],
            w_per_service: vec![w.clone(); n_s],
            z: w,
            y: vec![0.0; n_u],
            bandwidth_dual: vec![vec![0.0; n_u]; n_s],
            r1: vec![0.0; n_u],
            r2: vec![vec![0.0; n_u]; n_s],
            iter: 0,
        }
    }

    pub fn r1_norm(&self) -> f64 {
        norm2(&self.r1)
    }

    pub fn r2_norm_max(&self) -> f64 {
        self.r2.iter().map(|r| norm2(r)).fold(0.0, f64::max)
    }
}

/// Consensus, residual and dual updates following a primal sweep:
/// `z = mean_s(w_s + ν_s/ρ2)` with the duals before this update,
/// `r1 = Σ_s f_s − f^tot`, `r2_s = w_s − z`, `y += αρ1 r1`, `ν_s += αρ2 r2_s`.
pub fn consensus_dual_step(mut state: AdmmState, scenario: &Scenario, params: &AdmmParams) -> AdmmState {
    let n_s = state.f.len() as f64;
    for n in 0..state.z.len() {
        state.z[n] = state
            .w_per_service
            .iter()
            .zip(&state.bandwidth_dual)
            .map(|(w, nu)| w[n] + nu[n] / params.rho2)
            .sum::<f64>()
            / n_s;
    }
    for ue in &scenario.ues {
        let used: f64 = state.f.iter().map(|row| row[ue.id]).sum();
        state.r1[ue.id] = used - ue.cpu_total / HZ_PER_GHZ;
        state.y[ue.id] += params.relax_alpha * params.rho1 * state.r1[ue.id];
    }
    for s in 0..state.f.len() {
        for n in 0..state.z.len() {
            let r = state.w_per_service[s][n] - state.z[n];
            state.r2[s][n] = r;
            state.bandwidth_dual[s][n] += params.relax_alpha * params.rho2 * r;
        }
    }
    state.iter += 1;
    state
}

/// Result of any allocation strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutcome {
    pub mode: Mode,
    pub status: RunStatus,
    pub iterations: usize,
    pub allocation: Allocation,
    pub cost: CostBreakdown,
    pub trace: Vec<TraceRecord>,
    /// Shared-CPU residual `‖Σ_s f_s − f^tot‖₂` (GHz) before the final repair.
    pub final_r1_norm: f64,
    /// Largest consensus residual before the final projection.
    pub final_r2_norm_max: f64,
    /// `max_n |Σ_s f_sn − f_n^tot| / f_n^tot` before the final repair.
    pub final_cpu_violation: f64,
}

#[derive(Serialize, Deserialize)]
struct ResultDocument {
    format_version: u32,
    artifact_version: String,
    mode: Mode,
    status: RunStatus,
    iterations: usize,
    total_cost: f64,
    final_r1_norm: f64,
    final_r2_norm_max: f64,
    final_cpu_violation: f64,
    allocation: Allocation,
    cost: CostBreakdown,
}

impl SolveOutcome {
    /// Versioned plain-text (TOML) document with the allocation and costs.
    pub fn to_document(&self) -> Result<String> {
        let doc = ResultDocument {
            format_version: RESULT_FORMAT_VERSION,
            artifact_version: crate::ARTIFACT_VERSION.to_string(),
            mode: self.mode,
            status: self.status,
            iterations: self.iterations,
            total_cost: self.cost.total,
            final_r1_norm: self.final_r1_norm,
            final_r2_norm_max: self.final_r2_norm_max,
            final_cpu_violation: self.final_cpu_violation,
            allocation: self.allocation.clone(),
            cost: self.cost.clone(),
        };
        toml::to_string(&doc).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Cost-minimizing learning rate of every service.
pub fn optimal_etas(scenario: &Scenario) -> Result<Vec<f64>> {
    scenario
        .services
        .iter()
        .map(|svc| {
            let k = fedl_constants(svc.local_accuracy, &scenario.learning, svc.round_scale)?;
            optimal_eta(&k)
        })
        .collect()
}

fn checked(report: SolveReport, what: &str) -> Result<SolveReport> {
    match report.status {
        SolveStatus::Converged => Ok(report),
        SolveStatus::Infeasible => Err(Error::Infeasible(format!("{what}: no strictly feasible point"))),
        SolveStatus::MaxIterations => {
            log::warn!(
                "{what}: solver stopped before reaching tolerance (KKT residual {:e})",
                report.kkt_residual
            );
            Ok(report)
        }
    }
}

/// Centralized allocation: optimal learning rates, then the CPU program,
/// then the bandwidth program (one block-coordinate pass).
pub fn solve_centralized(scenario: &Scenario) -> Result<SolveOutcome> {
    solve_centralized_passes(scenario, 1)
}

/// Repeats the block-coordinate pass `passes` times. The blocks do not
/// interact once the learning rates are fixed, so every pass after the first
/// reproduces it; the option exists for checking exactly that.
pub fn solve_centralized_passes(scenario: &Scenario, passes: usize) -> Result<SolveOutcome> {
    if passes == 0 {
        return Err(Error::InvalidParameter("at least one pass is required".into()));
    }
    scenario.validate()?;
    let lay = CentralLayout::of(scenario);
    let mut eta = optimal_etas(scenario)?;
    let mut x_cpu = sub2c_start(scenario);
    let mut x_bw = sub3c_start(scenario);
    let tol = SolverOptions::default().tol;
    for _ in 0..passes {
        eta = optimal_etas(scenario)?;
        let cpu = checked(solve(&build_sub2c(scenario, &eta)?, &x_cpu, tol)?, "CPU allocation")?;
        let bw = checked(solve(&build_sub3c(scenario, &eta)?, &x_bw, tol)?, "bandwidth allocation")?;
        x_cpu = cpu.x;
        x_bw = bw.x;
    }
    let f: Vec<Vec<f64>> = (0..lay.n_services)
        .map(|s| (0..lay.n_ues).map(|n| x_cpu[lay.cpu(s, n)]).collect())
        .collect();
    let w = x_bw[..lay.n_ues].to_vec();
    let (allocation, cost) = finalize(scenario, &f, &w, eta)?;
    Ok(SolveOutcome {
        mode: Mode::Centralized,
        status: RunStatus::Converged,
        iterations: passes,
        allocation,
        cost,
        trace: Vec::new(),
        final_r1_norm: 0.0,
        final_r2_norm_max: 0.0,
        final_cpu_violation: 0.0,
    })
}

/// Decentralized allocation by per-service subproblems coordinated through
/// duals on the shared CPU and a bandwidth consensus variable.
pub fn solve_decentralized(
    scenario: &Scenario,
    params: &AdmmParams,
    mode: DecentralizedMode,
) -> Result<SolveOutcome> {
    scenario.validate()?;
    params.validate()?;
    let n_s = scenario.num_services();
    if !params.sufficient_condition(n_s) {
        log::warn!(
            "proximal weight {} does not exceed rho1*(S/(2-alpha)-1) = {}; convergence is not guaranteed",
            params.proximal_weight,
            params.rho1 * (n_s as f64 / (2.0 - params.relax_alpha) - 1.0)
        );
    }
    let eta = optimal_etas(scenario)?;
    let rounds: Vec<f64> = service_rounds(scenario, &eta)?.iter().map(|r| r.global).collect();
    let sub_params = match mode {
        DecentralizedMode::GaussSeidel => AdmmParams {
            proximal_weight: 0.0,
            ..*params
        },
        _ => *params,
    };
    let tol = SolverOptions::default().tol;
    let mode_name = mode.mode().as_str().to_string();

    let mut state = AdmmState::initial(scenario);
    let mut trace = Vec::new();
    let mut status = RunStatus::MaxIterations;

    for k in 1..=params.max_outer {
        let f_prev = state.f.clone();
        let z_prev = state.z.clone();

        let cpu_update = |s: usize, f_now: &[Vec<f64>]| -> Result<Vec<f64>> {
            let others: Vec<f64> = (0..scenario.num_ues())
                .map(|n| (0..n_s).filter(|&o| o != s).map(|o| f_now[o][n]).sum())
                .collect();
            let program = build_sub2d(scenario, s, eta[s], &others, &f_now[s], &state.y, &sub_params)?;
            let report = solve(&program, &sub2d_start(scenario, s, &f_now[s]), tol)?;
            let mut x = annotate(report, k, s, "CPU")?.x;
            x.pop();
            Ok(x)
        };
        let bw_update = |s: usize| -> Result<Vec<f64>> {
            let program = build_sub3d(scenario, s, eta[s], &state.z, &state.bandwidth_dual[s], &sub_params)?;
            let report = solve(&program, &sub3d_start(scenario, s, &state.w_per_service[s]), tol)?;
            let mut x = annotate(report, k, s, "bandwidth")?.x;
            x.pop();
            Ok(x)
        };

        let (new_f, new_w): (Vec<Vec<f64>>, Vec<Vec<f64>>) = match mode {
            DecentralizedMode::Jacobi | DecentralizedMode::JacobiEarlyStop => {
                let updates: Vec<(Vec<f64>, Vec<f64>)> = (0..n_s)
                    .into_par_iter()
                    .map(|s| Ok((cpu_update(s, &f_prev)?, bw_update(s)?)))
                    .collect::<Result<_>>()?;
                updates.into_iter().unzip()
            }
            DecentralizedMode::GaussSeidel => {
                let mut f_now = f_prev.clone();
                let mut ws = Vec::with_capacity(n_s);
                for s in 0..n_s {
                    f_now[s] = cpu_update(s, &f_now)?;
                    ws.push(bw_update(s)?);
                }
                (f_now, ws)
            }
        };
        state.f = new_f;
        state.w_per_service = new_w;
        state = consensus_dual_step(state, scenario, params);

        let f_delta = state
            .f
            .iter()
            .zip(&f_prev)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)))
            .sum::<f64>()
            .sqrt();
        let z_delta = norm2(&state.z.iter().zip(&z_prev).map(|(a, b)| a - b).collect::<Vec<_>>());
        let objective = snapshot_objective(scenario, &state, &rounds)?;
        let record = TraceRecord {
            iter: k,
            objective,
            r1_norm: state.r1_norm(),
            r2_norm_max: state.r2_norm_max(),
            f_delta_frobenius: f_delta,
            z_delta,
            mode: mode_name.clone(),
        };
        let done = match mode {
            DecentralizedMode::JacobiEarlyStop => {
                record.r1_norm <= params.eps1 && record.r2_norm_max <= params.eps2
            }
            _ => f_delta <= params.eps1 && z_delta <= params.eps2,
        };
        trace.push(record);
        if done {
            status = RunStatus::Converged;
            break;
        }
    }
    if status == RunStatus::MaxIterations {
        log::warn!("decentralized solver hit the outer iteration cap {}", params.max_outer);
    }

    let (allocation, cost) = finalize(scenario, &state.f, &state.z, eta)?;
    Ok(SolveOutcome {
        mode: mode.mode(),
        status,
        iterations: trace.len(),
        allocation,
        cost,
        final_r1_norm: state.r1_norm(),
        final_r2_norm_max: state.r2_norm_max(),
        final_cpu_violation: scenario
            .ues
            .iter()
            .map(|u| state.r1[u.id].abs() * HZ_PER_GHZ / u.cpu_total)
            .fold(0.0, f64::max),
        trace,
    })
}

fn annotate(report: SolveReport, k: usize, s: usize, what: &str) -> Result<SolveReport> {
    match report.status {
        SolveStatus::Infeasible => Err(Error::Infeasible(format!(
            "outer iteration {k}, service {s}: {what} subproblem has no feasible point"
        ))),
        SolveStatus::MaxIterations if !report.kkt_residual.is_finite() => Err(Error::NotConverged(format!(
            "outer iteration {k}, service {s}: {what} subproblem failed"
        ))),
        _ => Ok(report),
    }
}

fn snapshot_objective(scenario: &Scenario, state: &AdmmState, rounds: &[f64]) -> Result<f64> {
    let cpu: Vec<Vec<f64>> = state
        .f
        .iter()
        .map(|row| row.iter().map(|f| f * HZ_PER_GHZ).collect())
        .collect();
    let mut w = state.z.clone();
    let floors = vec![scenario.bandwidth_min; w.len()];
    clamp_renormalize(&mut w, &floors, 1.0)?;
    objective_unchecked(scenario, &cpu, &w, rounds)
}

/// Repairs CPU shares (GHz) and bandwidth fractions onto the feasible set
/// and evaluates the cost.
fn finalize(
    scenario: &Scenario,
    f_ghz: &[Vec<f64>],
    w: &[f64],
    eta: Vec<f64>,
) -> Result<(Allocation, CostBreakdown)> {
    let n_s = scenario.num_services();
    let floors: Vec<f64> = scenario.services.iter().map(|s| s.cpu_min).collect();
    let mut cpu = vec![vec![0.0; scenario.num_ues()]; n_s];
    for ue in &scenario.ues {
        let mut col: Vec<f64> = (0..n_s).map(|s| f_ghz[s][ue.id] * HZ_PER_GHZ).collect();
        clamp_renormalize(&mut col, &floors, ue.cpu_total)?;
        for s in 0..n_s {
            cpu[s][ue.id] = col[s];
        }
    }
    let mut bandwidth = w.to_vec();
    clamp_renormalize(&mut bandwidth, &vec![scenario.bandwidth_min; w.len()], 1.0)?;
    let allocation = Allocation::new(scenario, cpu, bandwidth, eta)?;
    let cost = total_cost(scenario, &allocation)?;
    Ok((allocation, cost))
}

/// Rescales `values` to sum to `total` with every entry at or above its
/// floor: entries below their floor are pinned to it and the rest share the
/// remainder in proportion to their current values. At most one pass per
/// entry is needed.
pub fn clamp_renormalize(values: &mut [f64], floors: &[f64], total: f64) -> Result<()> {
    let len = values.len();
    if floors.len() != len {
        return Err(Error::DimensionMismatch {
            context: "clamp floors",
            expected: len,
            got: floors.len(),
        });
    }
    let mut pinned = vec![false; len];
    for _ in 0..=len {
        for i in 0..len {
            if !pinned[i] && !(values[i] > floors[i]) {
                pinned[i] = true;
                values[i] = floors[i];
            }
        }
        let pinned_sum: f64 = (0..len).filter(|&i| pinned[i]).map(|i| floors[i]).sum();
        let free_sum: f64 = (0..len).filter(|&i| !pinned[i]).map(|i| values[i]).sum();
        let remaining = total - pinned_sum;
        if free_sum <= 0.0 {
            if remaining.abs() <= 1e-12 * total.abs().max(1.0) {
                return Ok(());
            }
            return Err(Error::Infeasible(format!(
                "floors sum to {pinned_sum} but the total is {total}"
            )));
        }
        let scale = remaining / free_sum;
        let mut violated = false;
        for i in 0..len {
            if !pinned[i] {
                values[i] *= scale;
                violated |= !(values[i] > floors[i]);
            }
        }
        if !violated {
            return Ok(());
        }
    }
    Err(Error::Infeasible("clamp-and-renormalize did not settle".into()))
}

/// Baseline 1: every resource split equally; learning rates still optimal.
pub fn heuristic_equal(scenario: &Scenario) -> Result<SolveOutcome> {
    scenario.validate()?;
    let (n_s, n_u) = (scenario.num_services(), scenario.num_ues());
    let cpu: Vec<Vec<f64>> = scenario
        .services
        .iter()
        .map(|svc| {
            scenario
                .ues
                .iter()
                .map(|u| {
                    let f = u.cpu_total / n_s as f64;
                    if f < svc.cpu_min {
                        Err(Error::Infeasible(format!(
                            "equal split {f:e} Hz at UE {} is below service {} minimum",
                            u.id, svc.id
                        )))
                    } else {
                        Ok(f)
                    }
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let w = 1.0 / n_u as f64;
    if w < scenario.bandwidth_min {
        return Err(Error::Infeasible("equal bandwidth share is below the minimum".into()));
    }
    let allocation = Allocation::new(scenario, cpu, vec![w; n_u], optimal_etas(scenario)?)?;
    let cost = total_cost(scenario, &allocation)?;
    Ok(baseline(Mode::HeuristicEqual, allocation, cost))
}

/// How baseline 2 divides the uplink band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthRule {
    /// Proportional to each UE's spectral efficiency.
    #[default]
    SpectralEfficiency,
    /// Inversely proportional to spectral efficiency, equalizing upload times.
    EqualUploadTime,
}

/// Baseline 2: CPU split in proportion to each service's data at the UE,
/// bandwidth according to `rule`; both respect the minimum shares.
pub fn heuristic_proportional(scenario: &Scenario, rule: BandwidthRule) -> Result<SolveOutcome> {
    scenario.validate()?;
    let n_s = scenario.num_services();
    let floors: Vec<f64> = scenario.services.iter().map(|s| s.cpu_min).collect();
    let mut cpu = vec![vec![0.0; scenario.num_ues()]; n_s];
    for ue in &scenario.ues {
        let data: f64 = scenario.services.iter().map(|s| s.data_sizes[ue.id]).sum();
        let mut col: Vec<f64> = if data > 0.0 {
            scenario
                .services
                .iter()
                .map(|s| ue.cpu_total * s.data_sizes[ue.id] / data)
                .collect()
        } else {
            vec![ue.cpu_total / n_s as f64; n_s]
        };
        clamp_renormalize(&mut col, &floors, ue.cpu_total)?;
        for s in 0..n_s {
            cpu[s][ue.id] = col[s];
        }
    }
    let weights: Vec<f64> = scenario
        .ues
        .iter()
        .map(|u| {
            let se = spectral_efficiency(u, &scenario.network);
            match rule {
                BandwidthRule::SpectralEfficiency => se,
                BandwidthRule::EqualUploadTime => 1.0 / se,
            }
        })
        .collect();
    let sum: f64 = weights.iter().sum();
    let mut w: Vec<f64> = weights.iter().map(|x| x / sum).collect();
    let floors = vec![scenario.bandwidth_min; w.len()];
    clamp_renormalize(&mut w, &floors, 1.0)?;
    let allocation = Allocation::new(scenario, cpu, w, optimal_etas(scenario)?)?;
    let cost = total_cost(scenario, &allocation)?;
    Ok(baseline(Mode::HeuristicProportional, allocation, cost))
}

fn baseline(mode: Mode, allocation: Allocation, cost: CostBreakdown) -> SolveOutcome {
    SolveOutcome {
        mode,
        status: RunStatus::Converged,
        iterations: 0,
        allocation,
        cost,
        trace: Vec::new(),
        final_r1_norm: 0.0,
        final_r2_norm_max: 0.0,
        final_cpu_violation: 0.0,
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_scenario, ScenarioConfig};
    use approx::assert_relative_eq;

    fn scenario(n_ues: usize, n_services: usize, seed: u64) -> Scenario {
        let mut cfg = ScenarioConfig::default();
        cfg.service.truncate(n_services);
        generate_scenario(seed, n_ues, &cfg).unwrap()
    }

    #[test]
    fn consensus_of_one_service_is_its_allocation() {
        let sc = scenario(3, 1, 1);
        let mut st = AdmmState::initial(&sc);
        st.w_per_service[0] = vec![0.2, 0.3, 0.5];
        let st = consensus_dual_step(st, &sc, &AdmmParams::default());
        assert_eq!(st.z, vec![0.2, 0.3, 0.5]);
        assert_eq!(st.iter, 1);
    }

    #[test]
    fn balanced_cpu_leaves_dual_unchanged() {
        let sc = scenario(3, 3, 1);
        let mut st = AdmmState::initial(&sc);
        st.y = vec![1.0, 2.0, 3.0];
        let st = consensus_dual_step(st, &sc, &AdmmParams::default());
        for n in 0..3 {
            assert!(st.r1[n].abs() < 1e-15);
        }
        assert_eq!(st.y, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn consensus_is_plain_average_with_zero_duals() {
        let sc = scenario(1, 3, 1);
        let mut st = AdmmState::initial(&sc);
        st.w_per_service = vec![vec![0.02], vec![0.03], vec![0.01]];
        let st = consensus_dual_step(st, &sc, &AdmmParams::default());
        assert!((st.z[0] - 0.02).abs() < 1e-15);
    }

    #[test]
    fn dual_steps_follow_residuals() {
        let sc = scenario(2, 2, 3);
        let p = AdmmParams {
            relax_alpha: 0.5,
            ..AdmmParams::default()
        };
        let mut st = AdmmState::initial(&sc);
        st.f[0][1] += 0.01;
        st.w_per_service[1] = vec![0.4, 0.6];
        st.bandwidth_dual[0] = vec![1.0, -1.0];
        let st = consensus_dual_step(st, &sc, &p);
        assert_relative_eq!(st.r1[1], 0.01, max_relative = 1e-9);
        assert_relative_eq!(st.y[1], 0.5 * 1000.0 * 0.01, max_relative = 1e-9);
        // z uses the duals from before this step
        let z0 = 0.5 * ((0.5 + 1.0 / 10.0) + 0.4);
        assert_relative_eq!(st.z[0], z0, max_relative = 1e-12);
        assert_relative_eq!(st.bandwidth_dual[0][0], 1.0 + 0.5 * 10.0 * (0.5 - z0), max_relative = 1e-12);
    }

    #[test]
    fn clamp_renormalize_cases() {
        let mut v = vec![0.7, 0.2, 0.1];
        clamp_renormalize(&mut v, &[0.0; 3], 2.0).unwrap();
        assert_relative_eq!(v[0], 1.4, max_relative = 1e-15);
        let mut v = vec![0.98, 0.015, 0.005];
        clamp_renormalize(&mut v, &[0.01; 3], 1.0).unwrap();
        assert_eq!(v[2], 0.01);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(v.iter().all(|&x| x >= 0.01));
        let mut v = vec![0.5, 0.5];
        assert!(matches!(clamp_renormalize(&mut v, &[0.6, 0.6], 1.0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn heuristic_equal_splits() {
        let mut cfg = ScenarioConfig::default();
        cfg.service.truncate(2);
        cfg.ue_distribution.cpu_totals_ghz = Some(vec![1.0; 50]);
        let sc = generate_scenario(4, 50, &cfg).unwrap();
        let out = heuristic_equal(&sc).unwrap();
        assert_eq!(out.allocation.cpu[1][7], 0.5e9);
        assert_eq!(out.allocation.bandwidth[3], 0.02);
        assert_eq!(out.mode, Mode::HeuristicEqual);
    }

    #[test]
    fn heuristic_proportional_reductions() {
        let mut cfg = ScenarioConfig::default();
        cfg.service.truncate(2);
        for svc in cfg.service.iter_mut() {
            svc.data_sizes_mb = Some(vec![12.0, 12.0]);
        }
        cfg.ue_distribution.channel_gains = Some(vec![1e-8, 1e-8]);
        let sc = generate_scenario(4, 2, &cfg).unwrap();
        let out = heuristic_proportional(&sc, BandwidthRule::SpectralEfficiency).unwrap();
        let eq = heuristic_equal(&sc).unwrap();
        for s in 0..2 {
            for n in 0..2 {
                assert_relative_eq!(out.allocation.cpu[s][n], eq.allocation.cpu[s][n], max_relative = 1e-12);
            }
        }
        assert_relative_eq!(out.allocation.bandwidth[0], 0.5, max_relative = 1e-12);
    }

    #[test]
    fn symmetric_scenario_centralized_is_even() {
        let mut cfg = ScenarioConfig::default();
        let base = cfg.service[0].clone();
        cfg.service = vec![base.clone(), base];
        for svc in cfg.service.iter_mut() {
            svc.data_sizes_mb = Some(vec![15.0; 4]);
        }
        cfg.ue_distribution.channel_gains = Some(vec![1e-9; 4]);
        cfg.ue_distribution.cpu_totals_ghz = Some(vec![1.5; 4]);
        let sc = generate_scenario(1, 4, &cfg).unwrap();
        let out = solve_centralized(&sc).unwrap();
        for s in 0..2 {
            for n in 0..4 {
                assert!((out.allocation.cpu[s][n] - 0.75e9).abs() < 1e3);
            }
        }
        for n in 0..4 {
            assert!((out.allocation.bandwidth[n] - 0.25).abs() < 1e-6);
        }
    }

    #[test]
    fn extra_passes_are_a_fixed_point() {
        let sc = scenario(8, 3, 2);
        let one = solve_centralized(&sc).unwrap();
        let three = solve_centralized_passes(&sc, 3).unwrap();
        assert_relative_eq!(one.cost.total, three.cost.total, max_relative = 1e-9);
    }

    #[test]
    fn single_service_decentralized_matches_centralized_quickly() {
        let sc = scenario(6, 1, 3);
        let central = solve_centralized(&sc).unwrap();
        // With one service the proximal term is not needed; a stiff CPU
        // penalty then pins the shared budget in a couple of iterations.
        let p = AdmmParams {
            rho1: 1e6,
            proximal_weight: 1.0,
            ..AdmmParams::default()
        };
        let out = solve_decentralized(&sc, &p, DecentralizedMode::Jacobi).unwrap();
        assert_eq!(out.status, RunStatus::Converged);
        assert!(out.iterations <= 5, "{} iterations", out.iterations);
        assert!((out.cost.total - central.cost.total).abs() / central.cost.total < 1e-3);
    }

    #[test]
    fn result_document_has_version() {
        let sc = scenario(4, 2, 3);
        let out = heuristic_equal(&sc).unwrap();
        let doc = out.to_document().unwrap();
        assert!(doc.contains("format_version = 1"));
        assert!(doc.contains("mode = \"heuristic-1\""));
    }
}
