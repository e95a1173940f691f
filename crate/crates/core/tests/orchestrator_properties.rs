use fedalloc::cost::Allocation;
use fedalloc::orchestrator::{
    heuristic_equal, heuristic_proportional, solve_centralized, solve_decentralized, BandwidthRule,
    DecentralizedMode, RunStatus,
};
use fedalloc::scenario::{generate_scenario, Scenario, ScenarioConfig};
use fedalloc::subproblems::AdmmParams;
use proptest::prelude::*;

fn scenario(seed: u64, n_ues: usize, n_services: usize) -> Scenario {
    let mut cfg = ScenarioConfig::default();
    cfg.service.truncate(n_services);
    generate_scenario(seed, n_ues, &cfg).unwrap()
}

fn assert_feasible(sc: &Scenario, a: &Allocation) {
    for ue in &sc.ues {
        let used: f64 = a.cpu.iter().map(|row| row[ue.id]).sum();
        assert!((used - ue.cpu_total).abs() <= 1e-3 * ue.cpu_total, "UE {} uses {used}", ue.id);
        for svc in &sc.services {
            assert!(a.cpu[svc.id][ue.id] >= svc.cpu_min * (1.0 - 1e-9));
        }
    }
    assert!((a.bandwidth.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    assert!(a.bandwidth.iter().all(|w| *w >= sc.bandwidth_min * (1.0 - 1e-9)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn centralized_is_feasible_and_beats_heuristics(seed in 0u64..10_000, n in 2usize..30, s in 1usize..=3) {
        let sc = scenario(seed, n, s);
        let c = solve_centralized(&sc).unwrap();
        assert_feasible(&sc, &c.allocation);
        let h1 = heuristic_equal(&sc).unwrap();
        assert_feasible(&sc, &h1.allocation);
        prop_assert!(c.cost.total <= h1.cost.total * (1.0 + 1e-9));
        for rule in [BandwidthRule::SpectralEfficiency, BandwidthRule::EqualUploadTime] {
            let h2 = heuristic_proportional(&sc, rule).unwrap();
            assert_feasible(&sc, &h2.allocation);
            prop_assert!(c.cost.total <= h2.cost.total * (1.0 + 1e-9));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn decentralized_modes_end_feasible_and_in_consensus(seed in 0u64..10_000, n in 2usize..8) {
        let sc = scenario(seed, n, 3);
        let params = AdmmParams::default();
        let central = solve_centralized(&sc).unwrap().cost.total;
        for mode in [DecentralizedMode::Jacobi, DecentralizedMode::JacobiEarlyStop, DecentralizedMode::GaussSeidel] {
            let out = solve_decentralized(&sc, &params, mode).unwrap();
            assert_feasible(&sc, &out.allocation);
            prop_assert_eq!(out.trace.len(), out.iterations);
            prop_assert!(out.cost.total >= central * (1.0 - 1e-6));
            if out.status == RunStatus::Converged {
                prop_assert!(out.final_r2_norm_max <= 10.0 * params.eps2);
                if mode == DecentralizedMode::JacobiEarlyStop {
                    prop_assert!(out.final_r1_norm <= 10.0 * params.eps1);
                }
            }
        }
    }
}

#[test]
fn decentralized_runs_replay_exactly() {
    let sc = scenario(21, 12, 3);
    let params = AdmmParams::default();
    for mode in [DecentralizedMode::Jacobi, DecentralizedMode::GaussSeidel] {
        let a = solve_decentralized(&sc, &params, mode).unwrap();
        let b = solve_decentralized(&sc, &params, mode).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.to_document().unwrap(), b.to_document().unwrap());
    }
}

#[test]
fn thread_count_does_not_change_jacobi_trace() {
    let sc = scenario(4, 10, 3);
    let params = AdmmParams::default();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| solve_decentralized(&sc, &params, DecentralizedMode::Jacobi).unwrap())
    };
    assert_eq!(run(1).trace, run(4).trace);
}

#[test]
fn iteration_cap_returns_repaired_last_iterate() {
    let sc = scenario(3, 10, 3);
    let params = AdmmParams {
        max_outer: 3,
        ..AdmmParams::default()
    };
    let out = solve_decentralized(&sc, &params, DecentralizedMode::Jacobi).unwrap();
    assert_eq!(out.status, RunStatus::MaxIterations);
    assert_eq!(out.iterations, 3);
    assert_feasible(&sc, &out.allocation);
}

/// The residual envelope at the variable-change stop. With the reference
/// penalties the CPU dual is still moving when the iterates stall, so this
/// fails on a minority of seeds; run with `--ignored` to measure.
#[test]
#[ignore = "fails on some seeds with the reference parameters; see project notes"]
fn jacobi_stop_meets_cpu_residual_envelope() {
    let params = AdmmParams::default();
    let failing: Vec<u64> = (0..20)
        .filter(|&seed| {
            let sc = scenario(seed, 50, 3);
            let out = solve_decentralized(&sc, &params, DecentralizedMode::Jacobi).unwrap();
            out.final_r1_norm > 10.0 * params.eps1
        })
        .collect();
    assert!(failing.is_empty(), "seeds outside the envelope: {failing:?}");
}

/// Sequential updates with fresh peers should need no more outer
/// iterations than the parallel scheme on most realizations.
#[test]
#[ignore = "fails with the reference parameters; see project notes"]
fn gauss_seidel_needs_no_more_iterations_than_jacobi() {
    let params = AdmmParams::default();
    let wins = (0..100u64)
        .filter(|&seed| {
            let sc = scenario(seed, 20, 3);
            let j = solve_decentralized(&sc, &params, DecentralizedMode::Jacobi).unwrap();
            let g = solve_decentralized(&sc, &params, DecentralizedMode::GaussSeidel).unwrap();
            g.iterations <= j.iterations
        })
        .count();
    assert!(wins >= 60, "Gauss-Seidel at most as slow on {wins}/100 seeds");
}
