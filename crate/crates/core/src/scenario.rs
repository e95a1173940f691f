//! Edge-network scenarios: services, devices (UEs) and radio parameters.
//!
//! All quantities are stored in SI base units: Hz for CPU frequency and
//! bandwidth, bits for data and model sizes, W for power, seconds for time.
//! Configuration files use the friendlier units named in their keys
//! (`*_ghz`, `*_mb`, `*_kb`, `*_db`); 1 MB = 1e6 bytes, 1 KB = 1e3 bytes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BITS_PER_BYTE: f64 = 8.0;
pub const BITS_PER_KB: f64 = 1e3 * BITS_PER_BYTE;
pub const BITS_PER_MB: f64 = 1e6 * BITS_PER_BYTE;
pub const HZ_PER_GHZ: f64 = 1e9;

/// Version of the serialized scenario document.
pub const SCENARIO_FORMAT_VERSION: u32 = 1;

/// Seeded random stream used for every scenario draw.
pub type ScenarioRng = ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkProfile {
    /// Total uplink bandwidth shared by all UEs, Hz.
    pub uplink_bandwidth: f64,
    /// Downlink broadcast bandwidth, Hz.
    pub downlink_bandwidth: f64,
    /// Background noise power, W.
    pub noise_power: f64,
    /// Base-station transmit power, W.
    pub bs_power: f64,
    /// Mean channel gain at the reference distance (linear).
    pub reference_gain: f64,
    /// Reference distance, m.
    pub reference_distance: f64,
}

impl NetworkProfile {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("uplink_bandwidth", self.uplink_bandwidth),
            ("downlink_bandwidth", self.downlink_bandwidth),
            ("noise_power", self.noise_power),
            ("bs_power", self.bs_power),
            ("reference_gain", self.reference_gain),
            ("reference_distance", self.reference_distance),
        ];
        for (name, value) in positive {
            require_positive(name, value)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeProfile {
    pub id: usize,
    /// Distance to the base station, m.
    pub distance: f64,
    /// Linear channel gain `h_n`.
    pub channel_gain: f64,
    /// Uplink transmit power `p_n`, W.
    pub tx_power: f64,
    /// Total CPU frequency `f_n^tot`, Hz.
    pub cpu_total: f64,
    /// Capacitance coefficient `β_n`; one CPU cycle at frequency f costs `β_n/2 · f²` J.
    pub capacitance: f64,
    /// Memory-access overhead per local iteration, one entry per service, s.
    pub mem_overhead: Vec<f64>,
    /// Extra per-round communication overhead, one entry per service, s.
    pub comm_overhead: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceProfile {
    pub id: usize,
    /// Size of one local update (and of the broadcast global model), bits.
    pub update_size: f64,
    /// CPU cycles needed per bit of training data.
    pub cycles_per_bit: f64,
    /// Relative local accuracy θ in (0, 1).
    pub local_accuracy: f64,
    /// Weight κ of running time against UE energy.
    pub tradeoff_weight: f64,
    /// Log-term `A` of the global round count (`K_g = A / Θ`).
    pub round_scale: f64,
    /// Server-side averaging time per round, s.
    pub avg_time: f64,
    /// Local dataset size at each UE, bits.
    pub data_sizes: Vec<f64>,
    /// Minimum CPU frequency every UE must grant this service, Hz.
    pub cpu_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningGlobals {
    /// Smoothness constant L of the local losses.
    pub smoothness: f64,
    /// Strong-convexity constant β of the local losses.
    pub strong_convexity: f64,
    /// Linear-rate constant γ of the local solver.
    pub rate_gamma: f64,
    /// Linear-rate constant c of the local solver.
    pub rate_c: f64,
}

impl Default for LearningGlobals {
    fn default() -> Self {
        Self {
            smoothness: 1.0,
            strong_convexity: 0.5,
            rate_gamma: 1.0,
            rate_c: 1.0,
        }
    }
}

impl LearningGlobals {
    /// Condition number ρ = L / β.
    pub fn condition_number(&self) -> f64 {
        self.smoothness / self.strong_convexity
    }

    pub fn validate(&self) -> Result<()> {
        require_positive("learning.strong_convexity", self.strong_convexity)?;
        require_positive("learning.rate_c", self.rate_c)?;
        if !(self.smoothness >= self.strong_convexity) {
            return Err(Error::InvalidParameter(format!(
                "learning.smoothness ({}) must be >= strong_convexity ({})",
                self.smoothness, self.strong_convexity
            )));
        }
        if !(self.rate_gamma > 0.0 && self.rate_gamma <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "learning.rate_gamma must lie in (0, 1], got {}",
                self.rate_gamma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub network: NetworkProfile,
    pub ues: Vec<UeProfile>,
    pub services: Vec<ServiceProfile>,
    pub learning: LearningGlobals,
    /// Minimum uplink bandwidth fraction per UE.
    pub bandwidth_min: f64,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct ScenarioDocument {
    format_version: u32,
    artifact_version: String,
    scenario: Scenario,
}

impl Scenario {
    pub fn num_ues(&self) -> usize {
        self.ues.len()
    }

    pub fn num_services(&self) -> usize {
        self.services.len()
    }

    /// Checks every field invariant plus the CPU and bandwidth feasibility of
    /// the shared-resource constraints.
    pub fn validate(&self) -> Result<()> {
        let n_ues = self.ues.len();
        let n_services = self.services.len();
        if n_ues == 0 {
            return Err(Error::InvalidParameter("scenario has no UEs".into()));
        }
        if n_services == 0 {
            return Err(Error::InvalidParameter("scenario has no services".into()));
        }
        self.network.validate()?;
        self.learning.validate()?;

        for (n, ue) in self.ues.iter().enumerate() {
            if ue.id != n {
                return Err(Error::InvalidParameter(format!(
                    "UE at position {n} has id {}",
                    ue.id
                )));
            }
            require_positive("ue.cpu_total", ue.cpu_total)?;
            require_positive("ue.tx_power", ue.tx_power)?;
            require_positive("ue.channel_gain", ue.channel_gain)?;
            require_positive("ue.capacitance", ue.capacitance)?;
            require_positive("ue.distance", ue.distance)?;
            crate::error::check_len("ue.mem_overhead", n_services, ue.mem_overhead.len())?;
            crate::error::check_len("ue.comm_overhead", n_services, ue.comm_overhead.len())?;
            if ue
                .mem_overhead
                .iter()
                .chain(&ue.comm_overhead)
                .any(|&t| !(t >= 0.0) || !t.is_finite())
            {
                return Err(Error::InvalidParameter(format!(
                    "UE {n} has a negative or non-finite overhead"
                )));
            }
        }

        for (s, svc) in self.services.iter().enumerate() {
            if svc.id != s {
                return Err(Error::InvalidParameter(format!(
                    "service at position {s} has id {}",
                    svc.id
                )));
            }
            if !(svc.local_accuracy > 0.0 && svc.local_accuracy < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "service {s}: local_accuracy must lie in (0, 1), got {}",
                    svc.local_accuracy
                )));
            }
            require_positive("service.update_size", svc.update_size)?;
            require_positive("service.cycles_per_bit", svc.cycles_per_bit)?;
            require_positive("service.round_scale", svc.round_scale)?;
            require_positive("service.cpu_min", svc.cpu_min)?;
            if !(svc.tradeoff_weight >= 0.0) || !(svc.avg_time >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "service {s}: tradeoff_weight and avg_time must be >= 0"
                )));
            }
            crate::error::check_len("service.data_sizes", n_ues, svc.data_sizes.len())?;
            if svc.data_sizes.iter().any(|&d| !(d >= 0.0) || !d.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "service {s} has a negative data size"
                )));
            }
        }

        let max_cpu_min = self
            .services
            .iter()
            .map(|s| s.cpu_min)
            .fold(f64::NEG_INFINITY, f64::max);
        let min_cpu_total = self
            .ues
            .iter()
            .map(|u| u.cpu_total)
            .fold(f64::INFINITY, f64::min);
        if n_services as f64 * max_cpu_min > min_cpu_total {
            return Err(Error::Infeasible(format!(
                "shared CPU: {n_services} services x cpu_min {max_cpu_min:e} Hz exceeds \
                 the smallest UE capacity {min_cpu_total:e} Hz"
            )));
        }
        if !(self.bandwidth_min >= 0.0) || n_ues as f64 * self.bandwidth_min > 1.0 {
            return Err(Error::Infeasible(format!(
                "shared bandwidth: {n_ues} UEs x bandwidth_min {} exceeds the whole band",
                self.bandwidth_min
            )));
        }
        Ok(())
    }

    /// Serializes to the versioned plain-text (TOML) scenario document.
    pub fn to_document(&self) -> Result<String> {
        let doc = ScenarioDocument {
            format_version: SCENARIO_FORMAT_VERSION,
            artifact_version: crate::ARTIFACT_VERSION.to_string(),
            scenario: self.clone(),
        };
        toml::to_string(&doc).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_document(text: &str) -> Result<Self> {
        let doc: ScenarioDocument =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if doc.format_version != SCENARIO_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported scenario format version {} (expected {})",
                doc.format_version, SCENARIO_FORMAT_VERSION
            )));
        }
        doc.scenario.validate()?;
        Ok(doc.scenario)
    }
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub uplink_bandwidth_hz: f64,
    pub downlink_bandwidth_hz: f64,
    pub noise_power_w: f64,
    pub bs_power_w: f64,
    pub reference_gain_db: f64,
    pub reference_distance_m: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            uplink_bandwidth_hz: 20e6,
            downlink_bandwidth_hz: 20e6,
            noise_power_w: 1e-10,
            bs_power_w: 40.0,
            reference_gain_db: -40.0,
            reference_distance_m: 1.0,
        }
    }
}

impl NetworkConfig {
    pub fn profile(&self) -> NetworkProfile {
        NetworkProfile {
            uplink_bandwidth: self.uplink_bandwidth_hz,
            downlink_bandwidth: self.downlink_bandwidth_hz,
            noise_power: self.noise_power_w,
            bs_power: self.bs_power_w,
            reference_gain: 10f64.powf(self.reference_gain_db / 10.0),
            reference_distance: self.reference_distance_m,
        }
    }
}

/// How UE parameters are drawn. Any `*s` list overrides the matching draw
/// and must have one entry per UE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UeDistribution {
    pub distance_min_m: f64,
    pub distance_max_m: f64,
    pub cpu_min_ghz: f64,
    pub cpu_max_ghz: f64,
    pub tx_power_w: f64,
    pub capacitance: f64,
    /// Lower end of the per-(service, UE) memory overhead, s.
    pub mem_overhead_s: f64,
    /// Width of the uniform memory-overhead draw; 0 means constant.
    pub mem_overhead_spread_s: f64,
    pub comm_overhead_s: f64,
    pub comm_overhead_spread_s: f64,
    pub distances_m: Option<Vec<f64>>,
    pub cpu_totals_ghz: Option<Vec<f64>>,
    pub channel_gains: Option<Vec<f64>>,
}

impl Default for UeDistribution {
    fn default() -> Self {
        Self {
            distance_min_m: 2.0,
            distance_max_m: 50.0,
            cpu_min_ghz: 1.0,
            cpu_max_ghz: 2.0,
            tx_power_w: 10.0,
            capacitance: 2e-28,
            mem_overhead_s: 0.0,
            mem_overhead_spread_s: 0.0,
            comm_overhead_s: 0.0,
            comm_overhead_spread_s: 0.0,
            distances_m: None,
            cpu_totals_ghz: None,
            channel_gains: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub update_size_kb: f64,
    pub cycles_per_bit: f64,
    pub local_accuracy: f64,
    pub tradeoff_weight: f64,
    pub round_scale: f64,
    pub avg_time_s: f64,
    pub cpu_min_ghz: f64,
    pub data_size_min_mb: f64,
    pub data_size_max_mb: f64,
    pub data_sizes_mb: Option<Vec<f64>>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            update_size_kb: 100.0,
            cycles_per_bit: 50.0,
            local_accuracy: 0.07,
            tradeoff_weight: 0.2,
            round_scale: 1.0,
            avg_time_s: 0.0,
            cpu_min_ghz: 0.1,
            data_size_min_mb: 10.0,
            data_size_max_mb: 20.0,
            data_sizes_mb: None,
        }
    }
}

impl ServiceConfig {
    fn with(update_size_kb: f64, cycles_per_bit: f64, local_accuracy: f64) -> Self {
        Self {
            update_size_kb,
            cycles_per_bit,
            local_accuracy,
            ..Self::default()
        }
    }
}

/// The three-service set used throughout the evaluation.
pub fn default_services() -> Vec<ServiceConfig> {
    vec![
        ServiceConfig::with(100.0, 50.0, 0.07),
        ServiceConfig::with(200.0, 70.0, 0.06),
        ServiceConfig::with(300.0, 90.0, 0.05),
    ]
}

fn default_bandwidth_min() -> f64 {
    0.001
}

/// Scenario generator settings, read from a TOML file with the sections
/// `[network]`, `[ue_distribution]`, `[learning]` and one `[[service]]` table
/// per service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default = "default_services")]
    pub service: Vec<ServiceConfig>,
    #[serde(default)]
    pub ue_distribution: UeDistribution,
    #[serde(default)]
    pub learning: LearningGlobals,
    #[serde(default = "default_bandwidth_min")]
    pub bandwidth_min: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            network: NetworkConfig::default(),
            service: default_services(),
            ue_distribution: UeDistribution::default(),
            learning: LearningGlobals::default(),
            bandwidth_min: default_bandwidth_min(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Draws one channel gain from an exponential distribution with mean
/// `g_0 (d_0 / d)^4`.
pub fn channel_gain_sample<R: Rng + ?Sized>(
    distance: f64,
    network: &NetworkProfile,
    rng: &mut R,
) -> Result<f64> {
    if !(distance > 0.0) || !distance.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "distance must be positive, got {distance}"
        )));
    }
    let mean = network.reference_gain * (network.reference_distance / distance).powi(4);
    let exp = Exp::new(1.0 / mean).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    loop {
        let g = exp.sample(rng);
        if g > 0.0 {
            return Ok(g);
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn check_range(name: &str, lo: f64, hi: f64) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::Config(format!("{name}: invalid range [{lo}, {hi}]")));
    }
    Ok(())
}

fn override_or(
    name: &str,
    values: &Option<Vec<f64>>,
    n_ues: usize,
) -> Result<Option<Vec<f64>>> {
    match values {
        Some(v) if v.len() != n_ues => Err(Error::Config(format!(
            "{name} has {} entries but there are {n_ues} UEs",
            v.len()
        ))),
        other => Ok(other.clone()),
    }
}

/// Generates a scenario deterministically from `seed`.
///
/// Draw order (one ChaCha8 stream): for each UE its distance, CPU capacity
/// and channel gain; then for each service the data size at every UE; then
/// overheads, only when their spread is non-zero. Overridden quantities
/// consume no draws.
pub fn generate_scenario(seed: u64, n_ues: usize, config: &ScenarioConfig) -> Result<Scenario> {
    if n_ues == 0 {
        return Err(Error::Config("n_ues must be at least 1".into()));
    }
    if config.service.is_empty() {
        return Err(Error::Config("at least one [[service]] is required".into()));
    }
    let dist = &config.ue_distribution;
    check_range("ue_distribution.distance", dist.distance_min_m, dist.distance_max_m)?;
    check_range("ue_distribution.cpu", dist.cpu_min_ghz, dist.cpu_max_ghz)?;
    for svc in &config.service {
        check_range("service.data_size", svc.data_size_min_mb, svc.data_size_max_mb)?;
    }

    let network = config.network.profile();
    network.validate()?;
    let distances = override_or("distances_m", &dist.distances_m, n_ues)?;
    let cpus = override_or("cpu_totals_ghz", &dist.cpu_totals_ghz, n_ues)?;
    let gains = override_or("channel_gains", &dist.channel_gains, n_ues)?;

    let mut rng = ScenarioRng::seed_from_u64(seed);
    let n_services = config.service.len();
    let mut ues = Vec::with_capacity(n_ues);
    for n in 0..n_ues {
        let distance = match &distances {
            Some(v) => v[n],
            None => uniform(&mut rng, dist.distance_min_m, dist.distance_max_m),
        };
        let cpu_total = match &cpus {
            Some(v) => v[n],
            None => uniform(&mut rng, dist.cpu_min_ghz, dist.cpu_max_ghz),
        } * HZ_PER_GHZ;
        let channel_gain = match &gains {
            Some(v) => v[n],
            None => channel_gain_sample(distance, &network, &mut rng)?,
        };
        ues.push(UeProfile {
            id: n,
            distance,
            channel_gain,
            tx_power: dist.tx_power_w,
            cpu_total,
            capacitance: dist.capacitance,
            mem_overhead: vec![dist.mem_overhead_s; n_services],
            comm_overhead: vec![dist.comm_overhead_s; n_services],
        });
    }

    let mut services = Vec::with_capacity(n_services);
    for (s, svc) in config.service.iter().enumerate() {
        let data_sizes = match &svc.data_sizes_mb {
            Some(v) if v.len() != n_ues => {
                return Err(Error::Config(format!(
                    "service[{s}].data_sizes_mb has {} entries but there are {n_ues} UEs",
                    v.len()
                )))
            }
            Some(v) => v.iter().map(|mb| mb * BITS_PER_MB).collect(),
            None => (0..n_ues)
                .map(|_| uniform(&mut rng, svc.data_size_min_mb, svc.data_size_max_mb) * BITS_PER_MB)
                .collect(),
        };
        services.push(ServiceProfile {
            id: s,
            update_size: svc.update_size_kb * BITS_PER_KB,
            cycles_per_bit: svc.cycles_per_bit,
            local_accuracy: svc.local_accuracy,
            tradeoff_weight: svc.tradeoff_weight,
            round_scale: svc.round_scale,
            avg_time: svc.avg_time_s,
            data_sizes,
            cpu_min: svc.cpu_min_ghz * HZ_PER_GHZ,
        });
    }

    if dist.mem_overhead_spread_s > 0.0 {
        for s in 0..n_services {
            for ue in ues.iter_mut() {
                ue.mem_overhead[s] = uniform(
                    &mut rng,
                    dist.mem_overhead_s,
                    dist.mem_overhead_s + dist.mem_overhead_spread_s,
                );
            }
        }
    }
    if dist.comm_overhead_spread_s > 0.0 {
        for s in 0..n_services {
            for ue in ues.iter_mut() {
                ue.comm_overhead[s] = uniform(
                    &mut rng,
                    dist.comm_overhead_s,
                    dist.comm_overhead_s + dist.comm_overhead_spread_s,
                );
            }
        }
    }

    let scenario = Scenario {
        network,
        ues,
        services,
        learning: config.learning.clone(),
        bandwidth_min: config.bandwidth_min,
        seed,
    };
    scenario.validate()?;
    Ok(scenario)
}

fn require_positive(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{name} must be positive, got {value}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scenario_matches_settings() {
        let sc = generate_scenario(7, 50, &ScenarioConfig::default()).unwrap();
        assert_eq!(sc.num_services(), 3);
        assert_eq!(sc.num_ues(), 50);
        let thetas: Vec<f64> = sc.services.iter().map(|s| s.local_accuracy).collect();
        assert_eq!(thetas, vec![0.07, 0.06, 0.05]);
        assert_eq!(sc.services[0].update_size, 8e5);
        assert_eq!(sc.services[2].update_size, 2.4e6);
        assert!((sc.network.reference_gain - 1e-4).abs() < 1e-18);
        for ue in &sc.ues {
            assert!((2.0..=50.0).contains(&ue.distance));
            assert!((1e9..=2e9).contains(&ue.cpu_total));
            assert!(ue.channel_gain > 0.0);
            assert_eq!(ue.tx_power, 10.0);
        }
        for svc in &sc.services {
            assert_eq!(svc.cpu_min, 1e8);
            for &d in &svc.data_sizes {
                assert!((8e7..=1.6e8).contains(&d));
            }
        }
    }

    #[test]
    fn same_seed_same_scenario() {
        let cfg = ScenarioConfig::default();
        let a = generate_scenario(7, 50, &cfg).unwrap();
        let b = generate_scenario(7, 50, &cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_scenario(8, 50, &cfg).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn singleton_with_overrides() {
        let mut cfg = ScenarioConfig::default();
        cfg.service.truncate(1);
        cfg.service[0].data_sizes_mb = Some(vec![10.0]);
        cfg.ue_distribution.distances_m = Some(vec![10.0]);
        cfg.ue_distribution.cpu_totals_ghz = Some(vec![1.0]);
        cfg.ue_distribution.channel_gains = Some(vec![1e-8]);
        let a = generate_scenario(1, 1, &cfg).unwrap();
        let b = generate_scenario(99, 1, &cfg).unwrap();
        assert_eq!(a.ues, b.ues);
        assert_eq!(a.services, b.services);
        assert_eq!(a.ues[0].cpu_total, 1e9);
        assert_eq!(a.services[0].data_sizes, vec![8e7]);
    }

    #[test]
    fn cpu_infeasibility_is_named() {
        let mut cfg = ScenarioConfig::default();
        cfg.ue_distribution.cpu_min_ghz = 0.2;
        cfg.ue_distribution.cpu_max_ghz = 0.25;
        let err = generate_scenario(1, 5, &cfg).unwrap_err();
        assert!(matches!(err, Error::Infeasible(ref m) if m.contains("shared CPU")), "{err}");
    }

    #[test]
    fn bandwidth_infeasibility_is_named() {
        let cfg = ScenarioConfig {
            bandwidth_min: 0.1,
            ..ScenarioConfig::default()
        };
        let err = generate_scenario(1, 20, &cfg).unwrap_err();
        assert!(matches!(err, Error::Infeasible(ref m) if m.contains("shared bandwidth")), "{err}");
    }

    #[test]
    fn override_length_mismatch_is_config_error() {
        let mut cfg = ScenarioConfig::default();
        cfg.ue_distribution.distances_m = Some(vec![3.0; 4]);
        assert!(matches!(generate_scenario(1, 5, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn distances_pass_uniformity_check() {
        let mut cfg = ScenarioConfig::default();
        cfg.service.truncate(1);
        cfg.bandwidth_min = 1e-6;
        let n = 100_000;
        let sc = generate_scenario(5, n, &cfg).unwrap();
        let mut d: Vec<f64> = sc.ues.iter().map(|u| u.distance).collect();
        d.sort_by(f64::total_cmp);
        let ks = d
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let cdf = (x - 2.0) / 48.0;
                (cdf - i as f64 / n as f64).max((i + 1) as f64 / n as f64 - cdf)
            })
            .fold(0.0, f64::max);
        // 1% critical value of the one-sample KS statistic
        assert!(ks < 1.628 / (n as f64).sqrt(), "KS statistic {ks}");
    }

    #[test]
    fn channel_gain_rejects_nonpositive_distance() {
        let net = NetworkConfig::default().profile();
        let mut rng = ScenarioRng::seed_from_u64(0);
        assert!(channel_gain_sample(0.0, &net, &mut rng).is_err());
        assert!(channel_gain_sample(-3.0, &net, &mut rng).is_err());
    }

    #[test]
    fn channel_gain_replay_is_deterministic() {
        let net = NetworkConfig::default().profile();
        let draw = |seed| {
            let mut rng = ScenarioRng::seed_from_u64(seed);
            (0..16)
                .map(|_| channel_gain_sample(1.0, &net, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
    }

    #[test]
    fn channel_gain_mean_at_reference_and_far() {
        let net = NetworkConfig::default().profile();
        let mut rng = ScenarioRng::seed_from_u64(11);
        let draws = 1_000_000;
        let mean_far: f64 = (0..draws)
            .map(|_| channel_gain_sample(10.0, &net, &mut rng).unwrap())
            .sum::<f64>()
            / draws as f64;
        assert!((mean_far / 1e-8 - 1.0).abs() < 0.01, "mean {mean_far:e}");
        let mean_ref: f64 = (0..200_000)
            .map(|_| channel_gain_sample(1.0, &net, &mut rng).unwrap())
            .sum::<f64>()
            / 200_000.0;
        assert!((mean_ref / 1e-4 - 1.0).abs() < 0.02, "mean {mean_ref:e}");
    }

    #[test]
    fn document_round_trip_is_exact() {
        let sc = generate_scenario(21, 12, &ScenarioConfig::default()).unwrap();
        let text = sc.to_document().unwrap();
        assert!(text.contains("format_version = 1"));
        let back = Scenario::from_document(&text).unwrap();
        assert_eq!(sc, back);
        assert_eq!(text, back.to_document().unwrap());
    }

    #[test]
    fn document_version_is_checked() {
        let sc = generate_scenario(21, 2, &ScenarioConfig::default()).unwrap();
        let text = sc
            .to_document()
            .unwrap()
            .replace("format_version = 1", "format_version = 9");
        assert!(matches!(Scenario::from_document(&text), Err(Error::Config(_))));
    }

    #[test]
    fn config_parses_partial_toml() {
        let cfg = ScenarioConfig::from_toml(
            r#"
            bandwidth_min = 0.002
            [network]
            bs_power_w = 20.0
            [[service]]
            update_size_kb = 150
            cycles_per_bit = 60
            local_accuracy = 0.05
            "#,
        )
        .unwrap();
        assert_eq!(cfg.service.len(), 1);
        assert_eq!(cfg.service[0].tradeoff_weight, 0.2);
        assert_eq!(cfg.network.bs_power_w, 20.0);
        assert_eq!(cfg.network.uplink_bandwidth_hz, 20e6);
        assert!(ScenarioConfig::from_toml("[network]\nbogus = 1").is_err());
        let round = ScenarioConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(round, cfg);
    }
}
