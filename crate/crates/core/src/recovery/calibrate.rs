//! Moment matching for the recovery model with `b = lambda * a`.
//!
//! The targets are the mean loss given default, the variance of
//! `Phi^-1(RR)` among defaulted borrowers and the Kendall tau between asset
//! value and recovery. The system is triangular: tau fixes `rho = a.Cb` and so
//! `lambda = rho / a.Ca`; the conditional variance is
//! `sigma^2 (1 - rho^2 (z h + h^2))`, which fixes `sigma`; the mean loss given
//! default is strictly decreasing in `mu` and is solved by safeguarded Newton.

use serde::{Deserialize, Serialize};

use super::{expected_lgd_rho, mills, RecoveryParams};
use crate::error::{Error, Result};
use crate::factors::CorrelationMatrix;
use crate::normal;

const RESIDUAL_TOL: f64 = 1e-10;
const MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoveryTargets {
    pub mean_lgd: f64,
    /// Variance of `Phi^-1(RR)` among defaulted borrowers.
    pub variance: f64,
    pub tau: f64,
}

/// Finds `(mu, sigma, lambda)` reproducing `targets` for borrowers with asset
/// loadings `a` and one-period default probability `pd`.
pub fn calibrate_recovery(
    targets: &RecoveryTargets,
    a: &[f64],
    corr: &CorrelationMatrix,
    pd: f64,
) -> Result<RecoveryParams> {
    let RecoveryTargets { mean_lgd, variance, tau } = *targets;
    let no_solution = |reason: String, residual: f64| Error::NoSolution { reason, residual };
    if !(mean_lgd > 0.0 && mean_lgd < 1.0) {
        return Err(no_solution(format!("mean loss given default {mean_lgd} outside (0, 1)"), f64::NAN));
    }
    if !(variance >= 0.0) || !variance.is_finite() {
        return Err(no_solution(format!("variance {variance} is negative"), f64::NAN));
    }
    if !(tau > -1.0 && tau < 1.0) {
        return Err(no_solution(format!("Kendall tau {tau} outside (-1, 1)"), f64::NAN));
    }
    if !(pd > 0.0 && pd < 1.0) {
        return Err(Error::UndefinedConditional(format!("default probability {pd} outside (0, 1)")));
    }

    let rho = (std::f64::consts::FRAC_PI_2 * tau).sin();
    let r = corr.quad(a);
    let lambda = if rho == 0.0 {
        0.0
    } else if r > 0.0 && rho * rho <= r {
        rho / r
    } else {
        return Err(no_solution(
            format!("Kendall tau {tau} needs |a.Cb| = {} but the asset loading allows at most {}", rho.abs(), r.max(0.0).sqrt()),
            rho.abs() - r.max(0.0).sqrt(),
        ));
    };

    let z = normal::quantile(pd);
    let (h, zh) = mills(z, pd);
    let sigma = (variance / (1.0 - rho * rho * (zh + h * h))).sqrt();

    let mu = if sigma == 0.0 {
        normal::quantile(1.0 - mean_lgd)
    } else {
        solve_mu(mean_lgd, sigma, rho, z, pd)?
    };
    RecoveryParams::proportional(mu, sigma, lambda, a)
}

fn solve_mu(target: f64, sigma: f64, rho: f64, z: f64, pd: f64) -> Result<f64> {
    let s = (1.0 + sigma * sigma).sqrt();
    let r = -rho * sigma / s;
    let f = |mu: f64| expected_lgd_rho(mu, sigma, rho, z, pd).map(|v| v - target);
    // d LGD / d mu = -phi(mu / s) Phi((z - r mu / s) / sqrt(1 - r^2)) / (s pd)
    let slope = |mu: f64| {
        let x = mu / s;
        -normal::pdf(x) * normal::cdf((z - r * x) / (1.0 - r * r).sqrt()) / (s * pd)
    };

    let mut mu = normal::quantile(1.0 - target) * s;
    let mut fm = f(mu)?;
    // f is decreasing: find lo with f > 0 and hi with f < 0.
    let (mut lo, mut hi) = (mu, mu);
    let mut step = 1.0;
    while f(lo)? <= 0.0 {
        lo -= step;
        step *= 2.0;
        if step > 1e3 {
            return Err(Error::NoSolution { reason: "cannot bracket mu".into(), residual: fm });
        }
    }
    step = 1.0;
    while f(hi)? >= 0.0 {
        hi += step;
        step *= 2.0;
        if step > 1e3 {
            return Err(Error::NoSolution { reason: "cannot bracket mu".into(), residual: fm });
        }
    }

    for _ in 0..MAX_ITER {
        if fm.abs() <= 1e-14 {
            break;
        }
        if fm > 0.0 {
            lo = mu;
        } else {
            hi = mu;
        }
        let d = slope(mu);
        let newton = mu - fm / d;
        mu = if d < 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        fm = f(mu)?;
        if hi - lo <= 4.0 * f64::EPSILON * mu.abs().max(1.0) {
            break;
        }
    }
    if fm.abs() > RESIDUAL_TOL {
        return Err(Error::NoSolution {
            reason: format!("mean loss given default {target} not reached"),
            residual: fm,
        });
    }
    Ok(mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recovery::{conditional_moments, expected_lgd, kendall_tau};

    fn forward(mu: f64, sigma: f64, lambda: f64, a: &[f64], c: &CorrelationMatrix, pd: f64) -> RecoveryTargets {
        let p = RecoveryParams::proportional(mu, sigma, lambda, a).unwrap();
        let z = normal::quantile(pd);
        let rho = c.bilinear(a, &p.b);
        let (m1, m2) = conditional_moments(&p, rho, z, pd).unwrap();
        RecoveryTargets {
            mean_lgd: expected_lgd(&p, a, c, z, pd).unwrap(),
            variance: m2 - m1 * m1,
            tau: kendall_tau(a, c, &p.b).unwrap(),
        }
    }

    #[test]
    fn round_trip() {
        let c = CorrelationMatrix::new(2, vec![1.0, -0.2, -0.2, 1.0]).unwrap();
        let a = [0.35, 0.25];
        for &(mu, sigma, lambda, pd) in &[
            (0.2, 0.8, 1.5, 0.02),
            (-0.5, 1.2, -0.8, 0.15),
            (1.0, 0.3, 2.0, 0.001),
            (0.0, 1.0, 0.0, 0.05),
        ] {
            let targets = forward(mu, sigma, lambda, &a, &c, pd);
            let p = calibrate_recovery(&targets, &a, &c, pd).unwrap();
            assert!((p.mu - mu).abs() < 1e-6, "mu {} vs {mu}", p.mu);
            assert!((p.sigma - sigma).abs() < 1e-6, "sigma {} vs {sigma}", p.sigma);
            assert!((p.lambda.unwrap() - lambda).abs() < 1e-6, "lambda {:?} vs {lambda}", p.lambda);
        }
    }

    #[test]
    fn zero_tau_decouples() {
        let c = CorrelationMatrix::identity(1);
        let t = RecoveryTargets { mean_lgd: 0.45, variance: 0.64, tau: 0.0 };
        let p = calibrate_recovery(&t, &[0.4], &c, 0.03).unwrap();
        assert_eq!(p.lambda, Some(0.0));
        assert!((p.sigma - 0.8).abs() < 1e-15);
        let want = normal::quantile(0.55) * (1.0f64 + 0.64).sqrt();
        assert!((p.mu - want).abs() < 1e-9);
    }

    #[test]
    fn zero_variance_is_deterministic() {
        let c = CorrelationMatrix::identity(1);
        let t = RecoveryTargets { mean_lgd: 0.6, variance: 0.0, tau: 0.2 };
        let p = calibrate_recovery(&t, &[0.4], &c, 0.03).unwrap();
        assert_eq!(p.sigma, 0.0);
        assert_eq!(p.mu, normal::quantile(0.4));
    }

    #[test]
    fn infeasible_tau_is_reported() {
        let c = CorrelationMatrix::identity(1);
        let t = RecoveryTargets { mean_lgd: 0.5, variance: 0.5, tau: 0.9 };
        match calibrate_recovery(&t, &[0.3], &c, 0.02) {
            Err(Error::NoSolution { residual, .. }) => assert!(residual > 0.0),
            other => panic!("expected no solution, got {other:?}"),
        }
        let bad = RecoveryTargets { mean_lgd: 1.5, variance: 0.5, tau: 0.0 };
        assert!(calibrate_recovery(&bad, &[0.3], &c, 0.02).is_err());
    }
}
