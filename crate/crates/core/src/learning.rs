//! Convergence algebra of federated training with inexact local solvers.
//!
//! With ρ = L/β and local accuracy θ the per-round contraction factor is
//!
//! ```text
//! Θ(η) = (Cη − Dη²) / (2ρ(Bη² + 1))
//! B = (1+θ)²ρ²,  C = 2(θ−1)² − 2(θ+1)θρ²,  D = ρ²(θ+1)(3θ+1)
//! ```
//!
//! which is positive only on `0 < η < C/D` (non-empty iff C > 0). The
//! number of global rounds is `K_g = A/Θ(η)`, minimized by the unique root
//! of `BCη² + 2Dη − C = 0` in that interval.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::LearningGlobals;

/// Constants of the round-count model for one service.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FedlConstants {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub rho: f64,
}

impl FedlConstants {
    /// Upper end of the feasible learning-rate interval `(0, C/D)`.
    pub fn eta_upper(&self) -> f64 {
        self.c / self.d
    }

    pub fn is_feasible_eta(&self, eta: f64) -> bool {
        eta > 0.0 && eta < self.eta_upper()
    }

    fn check_eta(&self, eta: f64) -> Result<()> {
        if self.is_feasible_eta(eta) {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "learning rate {eta} outside the feasible interval (0, {})",
                self.eta_upper()
            )))
        }
    }
}

/// Builds the constants for local accuracy `theta`.
pub fn fedl_constants(
    theta: f64,
    learning: &LearningGlobals,
    round_scale: f64,
) -> Result<FedlConstants> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "local accuracy must lie in (0, 1), got {theta}"
        )));
    }
    if !(round_scale > 0.0 && round_scale.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "round scale must be positive, got {round_scale}"
        )));
    }
    learning.validate()?;
    let rho = learning.condition_number();
    let rho2 = rho * rho;
    let b = (1.0 + theta).powi(2) * rho2;
    let c = 2.0 * (theta - 1.0).powi(2) - 2.0 * (theta + 1.0) * theta * rho2;
    let d = rho2 * (theta + 1.0) * (3.0 * theta + 1.0);
    if !(c > 0.0) {
        return Err(Error::InfeasibleAccuracy { theta, rho, c });
    }
    Ok(FedlConstants {
        a: round_scale,
        b,
        c,
        d,
        rho,
    })
}

/// Per-round contraction Θ(η).
pub fn theta_cap(eta: f64, k: &FedlConstants) -> Result<f64> {
    k.check_eta(eta)?;
    Ok((k.c * eta - k.d * eta * eta) / (2.0 * k.rho * (k.b * eta * eta + 1.0)))
}

/// Global rounds `K_g = A / Θ(η)`.
pub fn num_global_rounds(eta: f64, k: &FedlConstants) -> Result<f64> {
    Ok(k.a / theta_cap(eta, k)?)
}

/// Local iterations `ceil((2/γ) ln(cρ/θ))`, at least 1.
pub fn num_local_rounds(theta: f64, learning: &LearningGlobals) -> Result<u32> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "local accuracy must be positive, got {theta}"
        )));
    }
    learning.validate()?;
    let ratio = learning.rate_c * learning.condition_number() / theta;
    if ratio <= 1.0 {
        log::warn!(
            "local accuracy {theta} is at or above c*rho = {}; using one local iteration",
            learning.rate_c * learning.condition_number()
        );
        return Ok(1);
    }
    let iters = (2.0 / learning.rate_gamma * ratio.ln()).ceil();
    Ok((iters as u32).max(1))
}

/// `g(η) = (Bη² + 1)/(Cη − Dη²)`, proportional to the number of global rounds.
pub fn sub1_objective(eta: f64, k: &FedlConstants) -> Result<f64> {
    k.check_eta(eta)?;
    Ok((k.b * eta * eta + 1.0) / (k.c * eta - k.d * eta * eta))
}

/// `BCη² + 2Dη − C`; zero exactly at the minimizer of `g`.
pub fn stationarity_residual(eta: f64, k: &FedlConstants) -> f64 {
    k.b * k.c * eta * eta + 2.0 * k.d * eta - k.c
}

/// Unique minimizer of `g` (equivalently of `K_g`) on `(0, C/D)`.
///
/// Evaluated as `C / (D + sqrt(D² + BC²))`, the cancellation-free form of the
/// positive quadratic root.
pub fn optimal_eta(k: &FedlConstants) -> Result<f64> {
    if !(k.c > 0.0) {
        return Err(Error::InfeasibleAccuracy {
            theta: f64::NAN,
            rho: k.rho,
            c: k.c,
        });
    }
    Ok(k.c / (k.d + (k.d * k.d + k.b * k.c * k.c).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn globals(rho: f64) -> LearningGlobals {
        LearningGlobals {
            smoothness: rho,
            strong_convexity: 1.0,
            rate_gamma: 1.0,
            rate_c: 1.0,
        }
    }

    fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let r = (5f64.sqrt() - 1.0) / 2.0;
        let mut x1 = hi - r * (hi - lo);
        let mut x2 = lo + r * (hi - lo);
        let (mut f1, mut f2) = (f(x1), f(x2));
        while hi - lo > 1e-12 {
            if f1 < f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - r * (hi - lo);
                f1 = f(x1);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + r * (hi - lo);
                f2 = f(x2);
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn constants_at_reference_point() {
        let k = fedl_constants(0.07, &globals(2.0), 1.0).unwrap();
        // (1.07)^2 * 4, 2*0.93^2 - 2*1.07*0.07*4, 4*1.07*1.21
        assert_relative_eq!(k.b, 4.5796, max_relative = 1e-12);
        assert_relative_eq!(k.c, 1.1306, max_relative = 1e-12);
        assert_relative_eq!(k.d, 5.1788, max_relative = 1e-12);
        assert_eq!(k.rho, 2.0);
    }

    #[test]
    fn constants_small_theta_limit() {
        let k = fedl_constants(1e-12, &globals(2.0), 1.0).unwrap();
        assert_relative_eq!(k.b, 4.0, max_relative = 1e-9);
        assert_relative_eq!(k.c, 2.0, max_relative = 1e-9);
        assert_relative_eq!(k.d, 4.0, max_relative = 1e-9);
        let eta = optimal_eta(&k).unwrap();
        assert_relative_eq!(eta, (2f64.sqrt() - 1.0) / 2.0, max_relative = 1e-9);
    }

    #[test]
    fn loose_accuracy_is_infeasible() {
        let err = fedl_constants(0.5, &globals(2.0), 1.0).unwrap_err();
        match err {
            Error::InfeasibleAccuracy { c, .. } => assert_relative_eq!(c, -5.5, max_relative = 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn optimal_eta_reference_values() {
        let g = globals(2.0);
        for (theta, expect) in [(0.07, 0.10377), (0.05, 0.13230)] {
            let k = fedl_constants(theta, &g, 1.0).unwrap();
            let eta = optimal_eta(&k).unwrap();
            assert!((eta - expect).abs() < 5e-5, "theta {theta}: {eta}");
            let oracle = golden_min(|e| sub1_objective(e, &k).unwrap(), 1e-12, k.eta_upper() - 1e-12);
            assert!((eta - oracle).abs() < 1e-6);
            assert!(stationarity_residual(eta, &k).abs() < 1e-9);
        }
    }

    #[test]
    fn theta_and_rounds_reference_values() {
        let k = fedl_constants(0.07, &globals(2.0), 1.0).unwrap();
        let eta = optimal_eta(&k).unwrap();
        let theta = theta_cap(eta, &k).unwrap();
        assert!((theta - 0.014667).abs() < 5e-6, "{theta}");
        let kg = num_global_rounds(eta, &k).unwrap();
        assert!((kg - 68.2).abs() < 0.05, "{kg}");
        // Θ vanishes at the boundary of the feasible interval
        let near = theta_cap(k.eta_upper() * (1.0 - 1e-9), &k).unwrap();
        assert!(near < 1e-9);
    }

    #[test]
    fn rounds_override_and_scaling() {
        let k = fedl_constants(0.07, &globals(2.0), 1.0).unwrap();
        let eta = 0.08;
        let k2 = FedlConstants { a: 2.0, ..k };
        assert_relative_eq!(
            num_global_rounds(eta, &k2).unwrap(),
            2.0 * num_global_rounds(eta, &k).unwrap(),
            max_relative = 1e-15
        );
    }

    #[test]
    fn out_of_interval_eta_is_domain_error() {
        let k = fedl_constants(0.07, &globals(2.0), 1.0).unwrap();
        for eta in [0.0, -0.1, k.eta_upper(), 1.0] {
            assert!(matches!(theta_cap(eta, &k), Err(Error::Domain(_))));
            assert!(matches!(sub1_objective(eta, &k), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn theta_is_maximal_at_optimum_on_grid() {
        let k = fedl_constants(0.07, &globals(2.0), 1.0).unwrap();
        let best = theta_cap(optimal_eta(&k).unwrap(), &k).unwrap();
        for i in 1..=1000 {
            let eta = k.eta_upper() * i as f64 / 1001.0;
            assert!(theta_cap(eta, &k).unwrap() <= best + 1e-15);
        }
    }

    #[test]
    fn g_shape_around_optimum() {
        let k = fedl_constants(0.07, &globals(2.0), 1.0).unwrap();
        let at = sub1_objective(optimal_eta(&k).unwrap(), &k).unwrap();
        assert!(sub1_objective(0.05, &k).unwrap() > at);
        assert!(sub1_objective(0.2, &k).unwrap() > at);
    }

    #[test]
    fn local_rounds_reference_values() {
        let g = globals(2.0);
        assert_eq!(num_local_rounds(0.07, &g).unwrap(), 7);
        assert_eq!(num_local_rounds(0.05, &g).unwrap(), 8);
        assert_eq!(num_local_rounds(2.0, &g).unwrap(), 1);
        assert_eq!(num_local_rounds(3.0, &g).unwrap(), 1);
        assert!(num_local_rounds(0.0, &g).is_err());
    }

    #[test]
    fn second_difference_is_nonnegative() {
        let k = fedl_constants(0.06, &globals(2.0), 1.0).unwrap();
        let h = k.eta_upper() / 400.0;
        for i in 2..399 {
            let x = i as f64 * h;
            let g = |e| sub1_objective(e, &k).unwrap();
            let second = g(x - h) - 2.0 * g(x) + g(x + h);
            assert!(second >= -1e-9 * g(x), "at {x}: {second}");
        }
    }

    proptest! {
        #[test]
        fn rounds_times_theta_is_a(theta in 0.01f64..0.2, rho in 1.0f64..3.0, a in 0.1f64..10.0, frac in 0.001f64..0.999) {
            let k = match fedl_constants(theta, &globals(rho), a) { Ok(k) => k, Err(_) => return Ok(()) };
            let eta = frac * k.eta_upper();
            let prod = num_global_rounds(eta, &k).unwrap() * theta_cap(eta, &k).unwrap();
            prop_assert!((prod / a - 1.0).abs() < 1e-12);
        }

        #[test]
        fn g_midpoint_convex(theta in 0.01f64..0.1, u in 0.001f64..0.999, v in 0.001f64..0.999) {
            let k = fedl_constants(theta, &globals(2.0), 1.0).unwrap();
            let (x, y) = (u * k.eta_upper(), v * k.eta_upper());
            let g = |e| sub1_objective(e, &k).unwrap();
            prop_assert!(g(0.5 * (x + y)) <= 0.5 * (g(x) + g(y)) * (1.0 + 1e-12));
        }

        #[test]
        fn argmin_ignores_positive_scaling(theta in 0.01f64..0.1, scale in 1e-3f64..1e3) {
            let k = fedl_constants(theta, &globals(2.0), 1.0).unwrap();
            let eta = optimal_eta(&k).unwrap();
            let scaled = golden_min(|e| scale * sub1_objective(e, &k).unwrap(), 1e-12, k.eta_upper() - 1e-12);
            prop_assert!((scaled - eta).abs() < 1e-6);
        }
    }
}
