use fedalloc::learning::{fedl_constants, num_global_rounds, optimal_eta};
use fedalloc::scenario::{generate_scenario, LearningGlobals, ScenarioConfig};
use proptest::prelude::*;

fn globals(rho: f64) -> LearningGlobals {
    LearningGlobals {
        smoothness: rho,
        strong_convexity: 1.0,
        rate_gamma: 1.0,
        rate_c: 1.0,
    }
}

#[test]
fn tighter_accuracy_gets_larger_learning_rate_in_default_scenario() {
    let sc = generate_scenario(0, 10, &ScenarioConfig::default()).unwrap();
    let mut by_theta: Vec<(f64, f64)> = sc
        .services
        .iter()
        .map(|s| {
            let k = fedl_constants(s.local_accuracy, &sc.learning, s.round_scale).unwrap();
            (s.local_accuracy, optimal_eta(&k).unwrap())
        })
        .collect();
    by_theta.sort_by(|a, b| a.0.total_cmp(&b.0));
    assert_eq!(by_theta.len(), 3);
    // the service with the smallest local accuracy has the largest rate
    for pair in by_theta.windows(2) {
        assert!(pair[0].1 > pair[1].1, "{by_theta:?}");
    }
    assert!((by_theta[2].1 - 0.10377).abs() < 1e-4);
    assert!((by_theta[0].1 - 0.13231).abs() < 1e-4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn optimal_rate_decreases_with_local_accuracy(rho in 1.05f64..3.0, t1 in 0.005f64..0.3, t2 in 0.005f64..0.3) {
        prop_assume!((t1 - t2).abs() > 1e-4);
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        let (Ok(k_lo), Ok(k_hi)) = (fedl_constants(lo, &globals(rho), 1.0), fedl_constants(hi, &globals(rho), 1.0)) else {
            return Ok(());
        };
        prop_assert!(optimal_eta(&k_lo).unwrap() > optimal_eta(&k_hi).unwrap());
    }

    #[test]
    fn optimal_rate_minimizes_rounds(rho in 1.05f64..5.0, theta in 0.005f64..0.2, frac in 0.001f64..0.999) {
        let Ok(k) = fedl_constants(theta, &globals(rho), 2.0) else { return Ok(()); };
        let best = num_global_rounds(optimal_eta(&k).unwrap(), &k).unwrap();
        let other = num_global_rounds(frac * k.eta_upper(), &k).unwrap();
        prop_assert!(best <= other * (1.0 + 1e-12));
    }
}
