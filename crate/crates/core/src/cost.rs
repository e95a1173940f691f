//! Time and energy accounting for a joint CPU/bandwidth/learning-rate decision.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::learning::{fedl_constants, num_global_rounds, num_local_rounds};
use crate::scenario::{NetworkProfile, Scenario, ServiceProfile, UeProfile};

/// Relative tolerance of the shared-resource feasibility check.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// A joint decision: CPU shares, uplink bandwidth fractions and learning rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    /// `cpu[s][n]`: frequency UE n grants service s, Hz.
    pub cpu: Vec<Vec<f64>>,
    /// `bandwidth[n]`: fraction of the uplink band given to UE n.
    pub bandwidth: Vec<f64>,
    /// Learning rate per service.
    pub eta: Vec<f64>,
    /// Per-iteration computation time of each service (slowest UE), s.
    pub t_cmp: Vec<f64>,
    /// Per-round communication time of each service (slowest UE), s.
    pub t_com: Vec<f64>,
}

impl Allocation {
    /// Builds an allocation and fills the epigraph times from `(cpu, bandwidth)`.
    pub fn new(
        scenario: &Scenario,
        cpu: Vec<Vec<f64>>,
        bandwidth: Vec<f64>,
        eta: Vec<f64>,
    ) -> Result<Self> {
        let mut alloc = Self {
            cpu,
            bandwidth,
            eta,
            t_cmp: Vec::new(),
            t_com: Vec::new(),
        };
        alloc.check_shapes(scenario)?;
        let mut t_cmp = Vec::with_capacity(scenario.num_services());
        let mut t_com = Vec::with_capacity(scenario.num_services());
        for svc in &scenario.services {
            t_cmp.push(computation_time(svc, scenario, &alloc.cpu[svc.id])?);
            t_com.push(communication_time(svc, scenario, &alloc.bandwidth)?);
        }
        alloc.t_cmp = t_cmp;
        alloc.t_com = t_com;
        Ok(alloc)
    }

    fn check_shapes(&self, scenario: &Scenario) -> Result<()> {
        let (s, n) = (scenario.num_services(), scenario.num_ues());
        check_len("allocation.cpu rows", s, self.cpu.len())?;
        for row in &self.cpu {
            check_len("allocation.cpu columns", n, row.len())?;
        }
        check_len("allocation.bandwidth", n, self.bandwidth.len())?;
        check_len("allocation.eta", s, self.eta.len())
    }

    /// Verifies the shared-CPU, shared-bandwidth and minimum-share constraints.
    pub fn check_feasible(&self, scenario: &Scenario) -> Result<()> {
        self.check_shapes(scenario)?;
        for svc in &scenario.services {
            for (n, &f) in self.cpu[svc.id].iter().enumerate() {
                if !(f >= svc.cpu_min * (1.0 - FEASIBILITY_TOL)) {
                    return Err(Error::Infeasible(format!(
                        "service {} at UE {n}: cpu {f:e} Hz below minimum {:e} Hz",
                        svc.id, svc.cpu_min
                    )));
                }
            }
        }
        for ue in &scenario.ues {
            let used: f64 = self.cpu.iter().map(|row| row[ue.id]).sum();
            if used > ue.cpu_total * (1.0 + FEASIBILITY_TOL) {
                return Err(Error::Infeasible(format!(
                    "UE {}: cpu shares sum to {used:e} Hz, capacity {:e} Hz",
                    ue.id, ue.cpu_total
                )));
            }
        }
        for (n, &w) in self.bandwidth.iter().enumerate() {
            if !(w >= scenario.bandwidth_min * (1.0 - FEASIBILITY_TOL)) || !(w > 0.0) {
                return Err(Error::Infeasible(format!(
                    "UE {n}: bandwidth fraction {w} below minimum {}",
                    scenario.bandwidth_min
                )));
            }
        }
        let total: f64 = self.bandwidth.iter().sum();
        if (total - 1.0).abs() > FEASIBILITY_TOL {
            return Err(Error::Infeasible(format!(
                "bandwidth fractions sum to {total}, expected 1"
            )));
        }
        Ok(())
    }
}

/// Achievable uplink rate `w B^ul log2(1 + h p / N_0)`, bit/s.
pub fn uplink_rate(w: f64, ue: &UeProfile, network: &NetworkProfile) -> Result<f64> {
    if !(w > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "bandwidth fraction must be positive, got {w}"
        )));
    }
    Ok(w * network.uplink_bandwidth * spectral_efficiency(ue, network))
}

/// `log2(1 + h p / N_0)` of one UE's uplink.
pub fn spectral_efficiency(ue: &UeProfile, network: &NetworkProfile) -> f64 {
    (ue.channel_gain * ue.tx_power / network.noise_power).ln_1p() / std::f64::consts::LN_2
}

/// Energy (J) and time (s) of one local iteration of `service` on `ue` at frequency `f`.
pub fn per_iteration_compute(service: &ServiceProfile, ue: &UeProfile, f: f64) -> Result<(f64, f64)> {
    if !(f > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "cpu frequency must be positive, got {f}"
        )));
    }
    let cycles = service.cycles_per_bit * service.data_sizes[ue.id];
    let energy = 0.5 * ue.capacitance * cycles * f * f;
    let time = cycles / f + ue.mem_overhead[service.id];
    Ok((energy, time))
}

/// Time to upload one update of `service`, s.
pub fn uplink_time(
    service: &ServiceProfile,
    ue: &UeProfile,
    w: f64,
    network: &NetworkProfile,
) -> Result<f64> {
    Ok(service.update_size / uplink_rate(w, ue, network)?)
}

/// Broadcast time of the global model, taken at the weakest UE's downlink, s.
pub fn downlink_time(service: &ServiceProfile, scenario: &Scenario) -> f64 {
    let net = &scenario.network;
    scenario
        .ues
        .iter()
        .map(|ue| {
            let se = (ue.channel_gain * net.bs_power / net.noise_power).ln_1p()
                / std::f64::consts::LN_2;
            service.update_size / (net.downlink_bandwidth * se)
        })
        .fold(0.0, f64::max)
}

fn computation_time(service: &ServiceProfile, scenario: &Scenario, cpu: &[f64]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for ue in &scenario.ues {
        worst = worst.max(per_iteration_compute(service, ue, cpu[ue.id])?.1);
    }
    Ok(worst)
}

fn communication_time(service: &ServiceProfile, scenario: &Scenario, bandwidth: &[f64]) -> Result<f64> {
    let dl = downlink_time(service, scenario);
    let mut worst: f64 = 0.0;
    for ue in &scenario.ues {
        let ul = uplink_time(service, ue, bandwidth[ue.id], &scenario.network)?;
        worst = worst.max(ul + dl + ue.comm_overhead[service.id]);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundTime {
    pub t_cmp: f64,
    pub t_com: f64,
    pub t_round: f64,
}

/// Wall-clock time of one global round of `service`.
pub fn service_round_time(
    service: &ServiceProfile,
    scenario: &Scenario,
    alloc: &Allocation,
) -> Result<RoundTime> {
    alloc.check_feasible(scenario)?;
    let k_l = num_local_rounds(service.local_accuracy, &scenario.learning)? as f64;
    let t_cmp = computation_time(service, scenario, &alloc.cpu[service.id])?;
    let t_com = communication_time(service, scenario, &alloc.bandwidth)?;
    Ok(RoundTime {
        t_cmp,
        t_com,
        t_round: t_com + service.avg_time + k_l * t_cmp,
    })
}

/// UE energy spent in one global round of `service`, J.
pub fn service_round_energy(
    service: &ServiceProfile,
    scenario: &Scenario,
    alloc: &Allocation,
) -> Result<f64> {
    alloc.check_feasible(scenario)?;
    let k_l = num_local_rounds(service.local_accuracy, &scenario.learning)? as f64;
    let mut energy = 0.0;
    for ue in &scenario.ues {
        let upload = uplink_time(service, ue, alloc.bandwidth[ue.id], &scenario.network)?;
        let (e_cmp, _) = per_iteration_compute(service, ue, alloc.cpu[service.id][ue.id])?;
        energy += ue.tx_power * upload + k_l * e_cmp;
    }
    Ok(energy)
}

/// Cost summary of one service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceCost {
    pub service_id: usize,
    #[serde(rename = "K_g")]
    pub k_g: f64,
    #[serde(rename = "K_l")]
    pub k_l: u32,
    pub t_cmp: f64,
    pub t_com: f64,
    pub t_round: f64,
    pub e_round: f64,
    pub service_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub per_service: Vec<ServiceCost>,
    pub total: f64,
}

impl CostBreakdown {
    /// Total energy over all rounds of all services, J.
    pub fn total_energy(&self) -> f64 {
        self.per_service.iter().map(|c| c.k_g * c.e_round).sum()
    }

    /// Total running time `K_g T^gl` of one service, s.
    pub fn service_time(&self, s: usize) -> f64 {
        self.per_service[s].k_g * self.per_service[s].t_round
    }

    /// Total UE energy `K_g E^gl` of one service, J.
    pub fn service_energy(&self, s: usize) -> f64 {
        self.per_service[s].k_g * self.per_service[s].e_round
    }
}

/// Objective value `Σ_s K_g (E^gl_s + κ_s T^gl_s)` with rounds from the learning model.
pub fn total_cost(scenario: &Scenario, alloc: &Allocation) -> Result<CostBreakdown> {
    alloc.check_shapes(scenario)?;
    let mut rounds = Vec::with_capacity(scenario.num_services());
    for svc in &scenario.services {
        let k = fedl_constants(svc.local_accuracy, &scenario.learning, svc.round_scale)?;
        let k_g = num_global_rounds(alloc.eta[svc.id], &k).map_err(|e| match e {
            Error::Domain(msg) => Error::Domain(format!("service {}: {msg}", svc.id)),
            other => other,
        })?;
        rounds.push(k_g);
    }
    total_cost_with_rounds(scenario, alloc, &rounds)
}

/// Same as [`total_cost`] but with the global round count of each service given.
pub fn total_cost_with_rounds(
    scenario: &Scenario,
    alloc: &Allocation,
    rounds: &[f64],
) -> Result<CostBreakdown> {
    check_len("rounds", scenario.num_services(), rounds.len())?;
    alloc.check_feasible(scenario)?;
    let mut per_service = Vec::with_capacity(scenario.num_services());
    let mut total = 0.0;
    for svc in &scenario.services {
        let time = service_round_time(svc, scenario, alloc)?;
        let e_round = service_round_energy(svc, scenario, alloc)?;
        let k_g = rounds[svc.id];
        let service_cost = k_g * (e_round + svc.tradeoff_weight * time.t_round);
        total += service_cost;
        per_service.push(ServiceCost {
            service_id: svc.id,
            k_g,
            k_l: num_local_rounds(svc.local_accuracy, &scenario.learning)?,
            t_cmp: time.t_cmp,
            t_com: time.t_com,
            t_round: time.t_round,
            e_round,
            service_cost,
        });
    }
    Ok(CostBreakdown { per_service, total })
}

/// Objective value at CPU shares (Hz) and bandwidth fractions that need not
/// satisfy the shared-resource constraints, e.g. intermediate iterates of a
/// decentralized solver. `rounds` gives each service's global round count.
pub fn objective_unchecked(
    scenario: &Scenario,
    cpu: &[Vec<f64>],
    bandwidth: &[f64],
    rounds: &[f64],
) -> Result<f64> {
    check_len("cpu rows", scenario.num_services(), cpu.len())?;
    check_len("bandwidth", scenario.num_ues(), bandwidth.len())?;
    check_len("rounds", scenario.num_services(), rounds.len())?;
    let mut total = 0.0;
    for svc in &scenario.services {
        check_len("cpu columns", scenario.num_ues(), cpu[svc.id].len())?;
        let k_l = num_local_rounds(svc.local_accuracy, &scenario.learning)? as f64;
        let t_round = communication_time(svc, scenario, bandwidth)?
            + svc.avg_time
            + k_l * computation_time(svc, scenario, &cpu[svc.id])?;
        let mut energy = 0.0;
        for ue in &scenario.ues {
            let upload = uplink_time(svc, ue, bandwidth[ue.id], &scenario.network)?;
            energy += ue.tx_power * upload + k_l * per_iteration_compute(svc, ue, cpu[svc.id][ue.id])?.0;
        }
        total += rounds[svc.id] * (energy + svc.tradeoff_weight * t_round);
    }
    Ok(total)
}
