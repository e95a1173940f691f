//! The experiment commands.

use std::path::Path;

use fedalloc::cost::CostBreakdown;
use fedalloc::fedl::{make_synthetic_task, run_fedl_until, LossFamily};
use fedalloc::learning::{fedl_constants, optimal_eta, theta_cap};
use fedalloc::orchestrator::{
    heuristic_equal, heuristic_proportional, solve_centralized, solve_decentralized, BandwidthRule,
    DecentralizedMode, RunStatus, SolveOutcome,
};
use fedalloc::scenario::{generate_scenario, Scenario, ScenarioConfig};
use fedalloc::subproblems::AdmmParams;
use rand::{RngCore, SeedableRng};
use rayon::prelude::*;
use serde::Serialize;

use crate::output::{OutputDir, Provenance};
use crate::plot::{bar_chart, line_chart, Series};
use crate::{
    BandwidthRuleArg, CliError, CompareArgs, FamilyArg, FedlArgs, GenerateArgs, ModeArg, ScenarioArgs,
    SolveArgs, StudyArgs, SweepArgs,
};

fn load_config(path: Option<&Path>) -> Result<ScenarioConfig, CliError> {
    match path {
        None => Ok(ScenarioConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            Ok(ScenarioConfig::from_toml(&text)?)
        }
    }
}

/// Resolves the scenario source of a command.
pub fn load_scenario(args: &ScenarioArgs) -> Result<Scenario, CliError> {
    match (&args.source.seed, &args.source.scenario) {
        (Some(seed), None) => {
            let cfg = load_config(args.config.as_deref())?;
            Ok(generate_scenario(*seed, args.n_ues, &cfg)?)
        }
        (None, Some(path)) => {
            if args.config.is_some() {
                return Err(CliError::Usage("--config only applies when generating from --seed".into()));
            }
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            Ok(Scenario::from_document(&text)?)
        }
        _ => Err(CliError::Usage("exactly one of --seed and --scenario is required".into())),
    }
}

fn canonical(command: &str, scenario: &Scenario, extra: &[(&str, String)]) -> Result<String, CliError> {
    let mut text = format!("command = {command:?}\n");
    for (k, v) in extra {
        text.push_str(&format!("{k} = {v:?}\n"));
    }
    text.push_str(&scenario.to_document()?);
    Ok(text)
}

fn admm_text(p: &AdmmParams) -> Result<String, CliError> {
    toml::to_string(p).map_err(|e| CliError::Usage(e.to_string()))
}

fn bandwidth_rule(arg: BandwidthRuleArg) -> BandwidthRule {
    match arg {
        BandwidthRuleArg::SpectralEfficiency => BandwidthRule::SpectralEfficiency,
        BandwidthRuleArg::EqualUploadTime => BandwidthRule::EqualUploadTime,
    }
}

pub fn generate(args: &GenerateArgs, out: &Path) -> Result<(), CliError> {
    let cfg = load_config(args.config.as_deref())?;
    let scenario = generate_scenario(args.seed, args.n_ues, &cfg)?;
    let doc = scenario.to_document()?;
    let dir = OutputDir::create(out, Provenance::new(Some(args.seed), &doc))?;
    let path = dir.write_document("scenario.toml", &doc)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// CSV row of a cost breakdown; the last row holds the totals.
#[derive(Debug, Serialize)]
struct CostRow {
    service_id: String,
    #[serde(rename = "K_g")]
    k_g: Option<f64>,
    #[serde(rename = "K_l")]
    k_l: Option<u32>,
    t_cmp: Option<f64>,
    t_com: Option<f64>,
    t_round: Option<f64>,
    e_round: Option<f64>,
    service_cost: f64,
}

fn cost_rows(cost: &CostBreakdown) -> Vec<CostRow> {
    let mut rows: Vec<CostRow> = cost
        .per_service
        .iter()
        .map(|c| CostRow {
            service_id: c.service_id.to_string(),
            k_g: Some(c.k_g),
            k_l: Some(c.k_l),
            t_cmp: Some(c.t_cmp),
            t_com: Some(c.t_com),
            t_round: Some(c.t_round),
            e_round: Some(c.e_round),
            service_cost: c.service_cost,
        })
        .collect();
    rows.push(CostRow {
        service_id: "total".into(),
        k_g: None,
        k_l: None,
        t_cmp: None,
        t_com: None,
        t_round: None,
        e_round: None,
        service_cost: cost.total,
    });
    rows
}

fn run_mode(scenario: &Scenario, mode: ModeArg, params: &AdmmParams, rule: BandwidthRule) -> Result<SolveOutcome, CliError> {
    Ok(match mode {
        ModeArg::Centralized => solve_centralized(scenario)?,
        ModeArg::JpAdmm => solve_decentralized(scenario, params, DecentralizedMode::Jacobi)?,
        ModeArg::JpAdmmEs => solve_decentralized(scenario, params, DecentralizedMode::JacobiEarlyStop)?,
        ModeArg::GsMiadmm => solve_decentralized(scenario, params, DecentralizedMode::GaussSeidel)?,
        ModeArg::Heuristic1 => heuristic_equal(scenario)?,
        ModeArg::Heuristic2 => heuristic_proportional(scenario, rule)?,
    })
}

fn write_outcome(dir: &OutputDir, outcome: &SolveOutcome) -> Result<(), CliError> {
    let mode = outcome.mode.as_str();
    dir.write_document(&format!("outcome-{mode}.toml"), &outcome.to_document()?)?;
    dir.write_csv(&format!("cost-{mode}.csv"), &cost_rows(&outcome.cost))?;
    if !outcome.trace.is_empty() {
        dir.write_csv(&format!("trace-{mode}.csv"), &outcome.trace)?;
        let series = |name: &str, f: &dyn Fn(&fedalloc::orchestrator::TraceRecord) -> f64| Series {
            name: name.to_string(),
            points: outcome.trace.iter().map(|t| (t.iter as f64, f(t))).collect(),
        };
        line_chart(
            &dir.path(&format!("trace-{mode}-objective.svg")),
            &format!("Objective per iteration ({mode})"),
            "iteration",
            "objective",
            &[series("objective", &|t| t.objective)],
            false,
        )?;
        line_chart(
            &dir.path(&format!("trace-{mode}-residuals.svg")),
            &format!("Residuals per iteration ({mode})"),
            "iteration",
            "norm",
            &[
                series("r1", &|t| t.r1_norm),
                series("max r2", &|t| t.r2_norm_max),
                series("f change", &|t| t.f_delta_frobenius),
                series("z change", &|t| t.z_delta),
            ],
            true,
        )?;
    }
    Ok(())
}

pub fn solve(args: &SolveArgs, out: &Path) -> Result<(), CliError> {
    let scenario = load_scenario(&args.scenario)?;
    let params = args.admm.params()?;
    let mode = format!("{:?}", args.mode);
    let text = canonical(
        "solve",
        &scenario,
        &[
            ("mode", mode),
            ("bandwidth_rule", format!("{:?}", args.bandwidth_rule)),
            ("admm", admm_text(&params)?),
        ],
    )?;
    let dir = OutputDir::create(out, Provenance::new(Some(scenario.seed), &text))?;
    let outcome = run_mode(&scenario, args.mode, &params, bandwidth_rule(args.bandwidth_rule))?;
    write_outcome(&dir, &outcome)?;
    println!(
        "{}: total cost {:.6e} after {} iterations ({:?})",
        outcome.mode, outcome.cost.total, outcome.iterations, outcome.status
    );
    if outcome.status == RunStatus::MaxIterations {
        return Err(CliError::NotConverged(format!(
            "{} stopped at the iteration cap {}",
            outcome.mode, params.max_outer
        )));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct CompareRow {
    mode: String,
    total_cost: f64,
    total_time: f64,
    total_energy: f64,
    iterations: usize,
    status: String,
    gap_vs_centralized: f64,
}

#[derive(Debug, Serialize)]
struct CompareServiceRow {
    mode: String,
    service_id: usize,
    total_time: f64,
    total_energy: f64,
    service_cost: f64,
}

fn status_name(s: RunStatus) -> &'static str {
    match s {
        RunStatus::Converged => "converged",
        RunStatus::MaxIterations => "max-iterations",
    }
}

pub fn compare(args: &CompareArgs, out: &Path) -> Result<(), CliError> {
    let scenario = load_scenario(&args.scenario)?;
    let params = args.admm.params()?;
    let text = canonical(
        "compare",
        &scenario,
        &[
            ("bandwidth_rule", format!("{:?}", args.bandwidth_rule)),
            ("admm", admm_text(&params)?),
        ],
    )?;
    let dir = OutputDir::create(out, Provenance::new(Some(scenario.seed), &text))?;
    let rule = bandwidth_rule(args.bandwidth_rule);
    let modes = [
        ModeArg::Centralized,
        ModeArg::Heuristic1,
        ModeArg::Heuristic2,
        ModeArg::JpAdmm,
        ModeArg::JpAdmmEs,
        ModeArg::GsMiadmm,
    ];
    let outcomes = modes
        .iter()
        .map(|m| run_mode(&scenario, *m, &params, rule))
        .collect::<Result<Vec<_>, _>>()?;
    let central = outcomes[0].cost.total;
    let rows: Vec<CompareRow> = outcomes
        .iter()
        .map(|o| CompareRow {
            mode: o.mode.to_string(),
            total_cost: o.cost.total,
            total_time: (0..o.cost.per_service.len()).map(|s| o.cost.service_time(s)).sum(),
            total_energy: o.cost.total_energy(),
            iterations: o.iterations,
            status: status_name(o.status).into(),
            gap_vs_centralized: (o.cost.total - central) / central,
        })
        .collect();
    let services: Vec<CompareServiceRow> = outcomes
        .iter()
        .flat_map(|o| {
            o.cost.per_service.iter().map(move |c| CompareServiceRow {
                mode: o.mode.to_string(),
                service_id: c.service_id,
                total_time: c.k_g * c.t_round,
                total_energy: c.k_g * c.e_round,
                service_cost: c.service_cost,
            })
        })
        .collect();
    dir.write_csv("compare.csv", &rows)?;
    dir.write_csv("compare-services.csv", &services)?;
    bar_chart(
        &dir.path("compare.svg"),
        "Total cost by strategy",
        "total cost",
        &rows.iter().map(|r| (r.mode.clone(), r.total_cost)).collect::<Vec<_>>(),
    )?;
    for r in &rows {
        println!("{:<12} {:>14.6e}  gap {:+.4}%", r.mode, r.total_cost, 100.0 * r.gap_vs_centralized);
    }
    for o in &outcomes[1..3] {
        if central > o.cost.total {
            return Err(CliError::Check(format!(
                "centralized cost {central:e} exceeds {} cost {:e}",
                o.mode, o.cost.total
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SweepRow {
    kappa: f64,
    service_id: usize,
    #[serde(rename = "K_g")]
    k_g: f64,
    total_time: f64,
    total_energy: f64,
    service_cost: f64,
}

pub fn sweep_kappa(args: &SweepArgs, out: &Path) -> Result<(), CliError> {
    let scenario = load_scenario(&args.scenario)?;
    if args.service == 0 || args.service > scenario.num_services() {
        return Err(CliError::Usage(format!(
            "--service must lie in 1..={}",
            scenario.num_services()
        )));
    }
    if args.kappas.is_empty() || args.kappas.iter().any(|k| !(*k >= 0.0 && k.is_finite())) {
        return Err(CliError::Usage("--kappas must be non-negative finite numbers".into()));
    }
    let target = args.service - 1;
    let text = canonical(
        "sweep-kappa",
        &scenario,
        &[("service", args.service.to_string()), ("kappas", format!("{:?}", args.kappas))],
    )?;
    let dir = OutputDir::create(out, Provenance::new(Some(scenario.seed), &text))?;
    let mut rows = Vec::new();
    for &kappa in &args.kappas {
        let mut sc = scenario.clone();
        sc.services[target].tradeoff_weight = kappa;
        let outcome = solve_centralized(&sc)?;
        for c in &outcome.cost.per_service {
            rows.push(SweepRow {
                kappa,
                service_id: c.service_id,
                k_g: c.k_g,
                total_time: c.k_g * c.t_round,
                total_energy: c.k_g * c.e_round,
                service_cost: c.service_cost,
            });
        }
    }
    dir.write_csv("kappa-sweep.csv", &rows)?;
    let per_service = |f: &dyn Fn(&SweepRow) -> f64| -> Vec<Series> {
        (0..scenario.num_services())
            .map(|s| Series {
                name: format!("service {}", s + 1),
                points: rows.iter().filter(|r| r.service_id == s).map(|r| (r.kappa, f(r))).collect(),
            })
            .collect()
    };
    let x_desc = format!("trade-off weight of service {}", args.service);
    line_chart(
        &dir.path("kappa-sweep-time.svg"),
        "Total running time",
        &x_desc,
        "time (s)",
        &per_service(&|r| r.total_time),
        false,
    )?;
    line_chart(
        &dir.path("kappa-sweep-energy.svg"),
        "Total UE energy",
        &x_desc,
        "energy (J)",
        &per_service(&|r| r.total_energy),
        false,
    )?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct StudyRow {
    repetition: usize,
    seed: u64,
    mode: String,
    iterations: usize,
    status: String,
    total_cost: f64,
    gap_vs_centralized: f64,
}

#[derive(Debug, Serialize)]
struct StudySummary {
    mode: String,
    runs: usize,
    converged: usize,
    median_iterations: f64,
    mean_iterations: f64,
    min_iterations: usize,
    max_iterations: usize,
    median_gap: f64,
    max_abs_gap: f64,
}

/// Median of a non-empty sample (mean of the middle pair for even sizes).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Scenario seeds of the repetitions, drawn from the master seed.
pub fn repetition_seeds(master: u64, repetitions: usize) -> Vec<u64> {
    let mut rng = fedalloc::scenario::ScenarioRng::seed_from_u64(master);
    (0..repetitions).map(|_| rng.next_u64()).collect()
}

pub fn convergence_study(args: &StudyArgs, out: &Path) -> Result<(), CliError> {
    if args.repetitions == 0 {
        return Err(CliError::Usage("--repetitions must be at least 1".into()));
    }
    if args.workers == Some(0) {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    let cfg = load_config(args.config.as_deref())?;
    let params = args.admm.params()?;
    let cfg_text = cfg.to_toml()?;
    let text = format!(
        "command = \"convergence-study\"\nrepetitions = {}\nn_ues = {}\n{}\n{}",
        args.repetitions,
        args.n_ues,
        admm_text(&params)?,
        cfg_text
    );
    let dir = OutputDir::create(out, Provenance::new(Some(args.seed), &text))?;
    let seeds = repetition_seeds(args.seed, args.repetitions);
    let modes = [
        DecentralizedMode::Jacobi,
        DecentralizedMode::JacobiEarlyStop,
        DecentralizedMode::GaussSeidel,
    ];
    let job = |(rep, seed): (usize, u64)| -> Result<Vec<StudyRow>, CliError> {
        let scenario = generate_scenario(seed, args.n_ues, &cfg)?;
        let central = solve_centralized(&scenario)?.cost.total;
        modes
            .iter()
            .map(|m| {
                let o = solve_decentralized(&scenario, &params, *m)?;
                Ok(StudyRow {
                    repetition: rep,
                    seed,
                    mode: o.mode.to_string(),
                    iterations: o.iterations,
                    status: status_name(o.status).into(),
                    total_cost: o.cost.total,
                    gap_vs_centralized: (o.cost.total - central) / central,
                })
            })
            .collect()
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = args.workers {
        pool = pool.num_threads(w);
    }
    let pool = pool.build().map_err(|e| CliError::Usage(e.to_string()))?;
    let per_rep: Vec<Vec<StudyRow>> =
        pool.install(|| seeds.par_iter().copied().enumerate().map(job).collect::<Result<_, _>>())?;
    let rows: Vec<StudyRow> = per_rep.into_iter().flatten().collect();

    let mut summary = Vec::new();
    let mut cdf = Vec::new();
    for m in modes {
        let name = m.mode().to_string();
        let mine: Vec<&StudyRow> = rows.iter().filter(|r| r.mode == name).collect();
        let iters: Vec<f64> = mine.iter().map(|r| r.iterations as f64).collect();
        let gaps: Vec<f64> = mine.iter().map(|r| r.gap_vs_centralized).collect();
        summary.push(StudySummary {
            mode: name.clone(),
            runs: mine.len(),
            converged: mine.iter().filter(|r| r.status == "converged").count(),
            median_iterations: median(&iters),
            mean_iterations: iters.iter().sum::<f64>() / iters.len() as f64,
            min_iterations: mine.iter().map(|r| r.iterations).min().unwrap_or(0),
            max_iterations: mine.iter().map(|r| r.iterations).max().unwrap_or(0),
            median_gap: median(&gaps),
            max_abs_gap: gaps.iter().fold(0.0, |a, g| a.max(g.abs())),
        });
        let mut sorted = iters.clone();
        sorted.sort_by(f64::total_cmp);
        cdf.push(Series {
            name,
            points: sorted
                .iter()
                .enumerate()
                .map(|(i, x)| (*x, (i + 1) as f64 / sorted.len() as f64))
                .collect(),
        });
    }
    dir.write_csv("convergence-runs.csv", &rows)?;
    dir.write_csv("convergence-summary.csv", &summary)?;
    line_chart(
        &dir.path("convergence-cdf.svg"),
        "Iterations to stop (empirical CDF)",
        "iterations",
        "fraction of realizations",
        &cdf,
        false,
    )?;
    for s in &summary {
        println!(
            "{:<11} median {:>7.1}  mean {:>7.1}  converged {}/{}",
            s.mode, s.median_iterations, s.mean_iterations, s.converged, s.runs
        );
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct FedlRow {
    eta: f64,
    round: usize,
    loss_gap: f64,
    theta_bound_gap: f64,
}

#[derive(Debug, Serialize)]
struct FedlSummary {
    eta: f64,
    optimal: bool,
    rounds_run: usize,
    rounds_to_1e6: Option<usize>,
    model_rounds_to_1e6: f64,
    theta_condition_met: bool,
    local_iterations: u64,
}

pub fn fedl_demo(args: &FedlArgs, out: &Path) -> Result<(), CliError> {
    if args.eta_points == 0 {
        return Err(CliError::Usage("--eta-points must be at least 1".into()));
    }
    let family = match args.family {
        FamilyArg::Linear => LossFamily::Linear,
        FamilyArg::Logistic => LossFamily::Logistic,
    };
    let task = make_synthetic_task(args.seed, args.n_ues, args.dim, args.samples_per_ue, family)?;
    let k = fedl_constants(args.theta, &task.learning_globals(1.0, 1.0), 1.0)?;
    let eta_star = optimal_eta(&k)?;
    let mut etas: Vec<f64> = (1..=args.eta_points)
        .map(|i| k.eta_upper() * i as f64 / (args.eta_points + 1) as f64)
        .collect();
    etas.push(eta_star);
    etas.sort_by(f64::total_cmp);
    let text = format!("{args:?}");
    let dir = OutputDir::create(out, Provenance::new(Some(args.seed), &text))?;

    let mut rows = Vec::new();
    let mut summary = Vec::new();
    let mut series = Vec::new();
    for &eta in &etas {
        // stop well above rounding level, where the local accuracy test stops being meaningful
        let trace = run_fedl_until(&task, eta, args.theta, args.rounds, 1e-12)?;
        let g0 = trace.rounds[0].loss_gap;
        for r in &trace.rounds {
            rows.push(FedlRow {
                eta,
                round: r.round,
                loss_gap: r.loss_gap,
                theta_bound_gap: r.theta_bound_gap,
            });
        }
        summary.push(FedlSummary {
            eta,
            optimal: eta == eta_star,
            rounds_run: trace.rounds.len() - 1,
            rounds_to_1e6: trace.rounds.iter().position(|r| r.loss_gap <= 1e-6 * g0),
            model_rounds_to_1e6: (1e6f64).ln() / theta_cap(eta, &k)?,
            theta_condition_met: !trace.flagged(),
            local_iterations: trace
                .rounds
                .iter()
                .flat_map(|r| r.local_iters.iter())
                .map(|&i| i as u64)
                .sum(),
        });
        series.push(Series {
            name: if eta == eta_star {
                format!("eta* = {eta:.3}")
            } else {
                format!("eta = {eta:.3}")
            },
            points: trace.rounds.iter().map(|r| (r.round as f64, r.loss_gap)).collect(),
        });
    }
    dir.write_csv("fedl-trace.csv", &rows)?;
    dir.write_csv("fedl-summary.csv", &summary)?;
    line_chart(
        &dir.path("fedl-trace.svg"),
        "Loss gap per global round",
        "round",
        "F(w) - F(w*)",
        &series,
        true,
    )?;
    for s in &summary {
        println!(
            "eta {:.4}{}: rounds to 1e-6 gap {:?} (model bound {:.1})",
            s.eta,
            if s.optimal { " (optimal)" } else { "" },
            s.rounds_to_1e6,
            s.model_rounds_to_1e6
        );
    }
    Ok(())
}
