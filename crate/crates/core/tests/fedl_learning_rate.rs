use fedalloc::fedl::{make_synthetic_task, run_fedl_until, LossFamily};
use fedalloc::learning::{fedl_constants, optimal_eta, theta_cap};

/// Rounds needed to shrink the loss gap by `1e-6`, and the model's bound.
fn rounds_to_target(family: LossFamily, frac_of_optimum: f64) -> (usize, f64) {
    let theta = 0.05;
    let task = make_synthetic_task(1, 5, 10, 50, family).unwrap();
    let k = fedl_constants(theta, &task.learning_globals(1.0, 1.0), 1.0).unwrap();
    let eta = frac_of_optimum * optimal_eta(&k).unwrap();
    let bound = 1e6f64.ln() / theta_cap(eta, &k).unwrap();
    let trace = run_fedl_until(&task, eta, theta, bound.ceil() as usize + 1, 1e-6).unwrap();
    assert!(!trace.flagged());
    let g0 = trace.rounds[0].loss_gap;
    let hit = trace
        .rounds
        .iter()
        .position(|r| r.loss_gap <= 1e-6 * g0)
        .expect("target reached within the model bound");
    (hit, bound)
}

#[test]
fn rounds_fall_as_rate_rises_to_optimum() {
    for family in [LossFamily::Linear, LossFamily::Logistic] {
        let mut previous = usize::MAX;
        for frac in [0.25, 0.5, 0.75, 1.0] {
            let (rounds, bound) = rounds_to_target(family, frac);
            assert!(rounds as f64 <= bound, "{family:?} at {frac}: {rounds} > {bound}");
            assert!(rounds <= previous, "{family:?} at {frac}: {rounds} after {previous}");
            previous = rounds;
        }
    }
}
