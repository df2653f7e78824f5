//! Stochastic recovery rates correlated with the systematic factors.
//!
//! The recovery rate of a defaulted borrower is
//! `RR = Phi(mu + sigma * (b.Z + sqrt(1 - b.Cb) * eps))` with an idiosyncratic
//! standard normal `eps`. Its correlation with the borrower's normalized asset
//! value is `rho = a.Cb`.

mod binormal;
mod calibrate;

pub use binormal::binormal_cdf;
pub use calibrate::{calibrate_recovery, RecoveryTargets};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::factors::CorrelationMatrix;
use crate::normal;

/// Recovery model of one (group, rating, period) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryParams {
    pub mu: f64,
    pub sigma: f64,
    /// Factor loadings of the recovery rate.
    pub b: Vec<f64>,
    /// Set when `b` was built as a multiple of the asset loadings.
    pub lambda: Option<f64>,
}

impl RecoveryParams {
    pub fn new(mu: f64, sigma: f64, b: Vec<f64>) -> Result<Self> {
        if !mu.is_finite() || !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::Invalid(format!("recovery parameters mu = {mu}, sigma = {sigma}")));
        }
        if let Some(v) = b.iter().find(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite recovery loading {v}")));
        }
        Ok(RecoveryParams { mu, sigma, b, lambda: None })
    }

    /// Collateral tied to the borrower: `b = lambda * a`.
    pub fn proportional(mu: f64, sigma: f64, lambda: f64, a: &[f64]) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(Error::Invalid(format!("recovery loading ratio {lambda}")));
        }
        let mut p = Self::new(mu, sigma, a.iter().map(|v| lambda * v).collect())?;
        p.lambda = Some(lambda);
        Ok(p)
    }

    /// Fixed recovery rate `rr`.
    pub fn deterministic(rr: f64, dim: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&rr) {
            return Err(Error::Invalid(format!("recovery rate {rr} outside [0, 1]")));
        }
        Ok(RecoveryParams {
            mu: normal::quantile(rr),
            sigma: 0.0,
            b: vec![0.0; dim],
            lambda: None,
        })
    }

    /// Checks `b.Cb <= 1` against the factor correlation.
    pub fn validate(&self, corr: &CorrelationMatrix) -> Result<()> {
        if self.b.len() != corr.dim() {
            return Err(Error::Dimension(format!(
                "recovery loading has {} factors, model has {}",
                self.b.len(),
                corr.dim()
            )));
        }
        let v = corr.quad(&self.b);
        if v > 1.0 + 1e-12 {
            return Err(Error::Invalid(format!("recovery loading variance b.Cb = {v} exceeds 1")));
        }
        Ok(())
    }

    fn systematic_variance(&self, corr: &CorrelationMatrix) -> f64 {
        corr.quad(&self.b).clamp(0.0, 1.0)
    }
}

/// One recovery-rate draw given the factors and the idiosyncratic shock.
pub fn sample_recovery(params: &RecoveryParams, corr: &CorrelationMatrix, factors: &[f64], eps: f64) -> f64 {
    if params.sigma == 0.0 {
        return normal::cdf(params.mu);
    }
    let systematic: f64 = params.b.iter().zip(factors).map(|(b, z)| b * z).sum();
    let idio = (1.0 - params.systematic_variance(corr)).sqrt();
    normal::cdf(params.mu + params.sigma * (systematic + idio * eps))
}

/// Mean loss given default over borrowers with loadings `a` that default,
/// i.e. whose asset value falls below `z_default = Phi^-1(pd)`.
///
/// `1 - Phi2(mu / sqrt(1 + sigma^2), z_default; -rho sigma / sqrt(1 + sigma^2)) / pd`
/// with `rho = a.Cb`.
pub fn expected_lgd(
    params: &RecoveryParams,
    a: &[f64],
    corr: &CorrelationMatrix,
    z_default: f64,
    pd: f64,
) -> Result<f64> {
    check_pd(z_default, pd)?;
    let rho = corr.bilinear(a, &params.b);
    expected_lgd_rho(params.mu, params.sigma, rho, z_default, pd)
}

pub(crate) fn expected_lgd_rho(mu: f64, sigma: f64, rho: f64, z_default: f64, pd: f64) -> Result<f64> {
    if sigma == 0.0 {
        return Ok(1.0 - normal::cdf(mu));
    }
    let s = (1.0 + sigma * sigma).sqrt();
    let joint = binormal_cdf(mu / s, z_default, (-rho * sigma / s).clamp(-1.0, 1.0))?;
    Ok((1.0 - joint / pd).clamp(0.0, 1.0))
}

fn check_pd(z_default: f64, pd: f64) -> Result<()> {
    if !(pd > 0.0) {
        return Err(Error::UndefinedConditional(format!(
            "loss given default needs a positive default probability, got {pd}"
        )));
    }
    if pd > 1.0 || (normal::cdf(z_default) - pd).abs() > 1e-10 {
        return Err(Error::Invalid(format!(
            "default threshold {z_default} does not match default probability {pd}"
        )));
    }
    Ok(())
}

/// Loss given default conditional on the factors:
/// `1 - Phi((mu + sigma b.Z) / sqrt(1 + sigma^2 (1 - b.Cb)))`.
pub fn conditional_lgd(params: &RecoveryParams, corr: &CorrelationMatrix, factors: &[f64]) -> f64 {
    if params.sigma == 0.0 {
        return 1.0 - normal::cdf(params.mu);
    }
    let shift: f64 = params.b.iter().zip(factors).map(|(b, z)| b * z).sum();
    let denom = (1.0 + params.sigma * params.sigma * (1.0 - params.systematic_variance(corr))).sqrt();
    1.0 - normal::cdf((params.mu + params.sigma * shift) / denom)
}

/// Kendall rank correlation between asset value and recovery rate,
/// `(2 / pi) asin(a.Cb)`.
pub fn kendall_tau(a: &[f64], corr: &CorrelationMatrix, b: &[f64]) -> Result<f64> {
    let rho = corr.bilinear(a, b);
    if !(rho.abs() <= 1.0 + 1e-12) {
        return Err(Error::Domain(format!("asset-recovery correlation a.Cb = {rho} outside [-1, 1]")));
    }
    Ok(std::f64::consts::FRAC_2_PI * rho.clamp(-1.0, 1.0).asin())
}

/// First and second moments of `Phi^-1(RR)` among defaulted borrowers, for an
/// asset-recovery correlation `rho` and default threshold `z_default`.
pub fn conditional_moments(params: &RecoveryParams, rho: f64, z_default: f64, pd: f64) -> Result<(f64, f64)> {
    check_pd(z_default, pd)?;
    Ok(moments(params.mu, params.sigma, rho, z_default, pd))
}

/// `(h, z h)` with `h = phi(z) / pd`, the inverse Mills ratio of the default event.
pub(crate) fn mills(z_default: f64, pd: f64) -> (f64, f64) {
    if z_default.is_infinite() {
        return (0.0, 0.0);
    }
    let h = normal::pdf(z_default) / pd;
    (h, z_default * h)
}

pub(crate) fn moments(mu: f64, sigma: f64, rho: f64, z_default: f64, pd: f64) -> (f64, f64) {
    let (h, zh) = mills(z_default, pd);
    let rs = rho * sigma;
    let m1 = mu - rs * h;
    let m2 = mu * mu - 2.0 * rs * mu * h - rs * rs * zh + sigma * sigma;
    (m1, m2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn id(d: usize) -> CorrelationMatrix {
        CorrelationMatrix::identity(d)
    }

    #[test]
    fn deterministic_recovery() {
        let p = RecoveryParams::deterministic(0.4, 2).unwrap();
        for (z, e) in [([0.0, 0.0], 0.0), ([2.0, -1.0], 3.0)] {
            assert!((sample_recovery(&p, &id(2), &z, e) - 0.4).abs() < 1e-15);
            assert!((conditional_lgd(&p, &id(2), &z) - 0.6).abs() < 1e-15);
        }
        let pd = 0.03;
        let z = normal::quantile(pd);
        assert!((expected_lgd(&p, &[0.3, 0.1], &id(2), z, pd).unwrap() - 0.6).abs() < 1e-15);
        assert!(RecoveryParams::deterministic(1.2, 1).is_err());
        assert_eq!(conditional_lgd(&RecoveryParams::deterministic(0.0, 1).unwrap(), &id(1), &[0.5]), 1.0);
    }

    #[test]
    fn uncorrelated_lgd_is_marginal() {
        let p = RecoveryParams::new(0.3, 0.7, vec![0.0, 0.0]).unwrap();
        let pd = 0.02;
        let want = 1.0 - normal::cdf(0.3 / (1.0f64 + 0.49).sqrt());
        let got = expected_lgd(&p, &[0.4, 0.2], &id(2), normal::quantile(pd), pd).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn fully_systematic_recovery_ignores_noise() {
        let p = RecoveryParams::new(0.1, 0.5, vec![0.6, 0.8]).unwrap();
        let z = [0.3, -1.2];
        let a = sample_recovery(&p, &id(2), &z, -2.0);
        let b = sample_recovery(&p, &id(2), &z, 2.5);
        assert_eq!(a, b);
    }

    #[test]
    fn conditional_lgd_at_origin() {
        let p = RecoveryParams::new(-0.2, 0.9, vec![0.3, 0.4]).unwrap();
        let want = 1.0 - normal::cdf(-0.2 / (1.0f64 + 0.81 * 0.75).sqrt());
        assert!((conditional_lgd(&p, &id(2), &[0.0, 0.0]) - want).abs() < 1e-15);
    }

    #[test]
    fn lgd_requires_default_probability() {
        let p = RecoveryParams::new(0.0, 1.0, vec![0.5]).unwrap();
        assert!(matches!(
            expected_lgd(&p, &[0.3], &id(1), f64::NEG_INFINITY, 0.0),
            Err(Error::UndefinedConditional(_))
        ));
        assert!(matches!(expected_lgd(&p, &[0.3], &id(1), -1.0, 0.05), Err(Error::Invalid(_))));
        assert!(conditional_moments(&p, 0.2, f64::NEG_INFINITY, 0.0).is_err());
    }

    #[test]
    fn kendall_examples() {
        let c = id(2);
        assert_eq!(kendall_tau(&[0.5, 0.0], &c, &[0.0, 1.0]).unwrap(), 0.0);
        assert!((kendall_tau(&[1.0, 0.0], &c, &[1.0, 0.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((kendall_tau(&[0.5, 0.0], &c, &[1.0, 0.0]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(kendall_tau(&[1.0, 1.0], &c, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn moments_without_conditioning() {
        let p = RecoveryParams::new(0.4, 0.6, vec![0.0]).unwrap();
        let pd = 0.1;
        let z = normal::quantile(pd);
        let (m1, m2) = conditional_moments(&p, 0.0, z, pd).unwrap();
        assert_eq!((m1, m2), (0.4, 0.16 + 0.36));
        let q = RecoveryParams::new(0.4, 0.0, vec![0.0]).unwrap();
        let (m1, m2) = conditional_moments(&q, 0.7, z, pd).unwrap();
        assert!((m1 - 0.4).abs() < 1e-15 && (m2 - 0.16).abs() < 1e-15);
    }

    #[test]
    fn moments_match_quadrature() {
        // mpmath quadrature of the truncated bivariate Gaussian:
        // mu = 0.5, sigma = 0.8, rho = 0.6, z = -1.5.
        let pd = normal::cdf(-1.5);
        let p = RecoveryParams::new(0.5, 0.8, vec![]).unwrap();
        let (m1, m2) = conditional_moments(&p, 0.6, -1.5, pd).unwrap();
        assert!((m1 - -0.430_565_039_978_820_7).abs() < 1e-12, "{m1}");
        assert!((m2 - 0.629_441_788_805_930_2).abs() < 1e-12, "{m2}");
    }

    #[test]
    fn expected_lgd_matches_quadrature() {
        // mpmath quadrature of E[1 - Phi(mu + rho sigma x + sigma sqrt(1 - rho^2) e) | x <= z]
        // for mu = 0, sigma = 1, rho = 0.5, pd = 0.05.
        let pd = 0.05;
        let z = normal::quantile(pd);
        let got = expected_lgd_rho(0.0, 1.0, 0.5, z, pd).unwrap();
        assert!((got - 0.779_902_513_350_310_3).abs() < 1e-12, "{got}");
    }

    proptest! {
        #[test]
        fn lgd_in_unit_interval(mu in -3.0..3.0f64, sigma in 0.0..3.0f64, b in -0.7..0.7f64, a in -0.7..0.7f64, pd in 1e-6..0.999f64, f in -6.0..6.0f64) {
            let p = RecoveryParams::new(mu, sigma, vec![b]).unwrap();
            let c = id(1);
            let e = expected_lgd(&p, &[a], &c, normal::quantile(pd), pd).unwrap();
            prop_assert!((0.0..=1.0).contains(&e));
            let l = conditional_lgd(&p, &c, &[f]);
            prop_assert!((0.0..=1.0).contains(&l));
        }

        #[test]
        fn conditional_lgd_decreases_with_factor(mu in -2.0..2.0f64, sigma in 0.01..2.0f64, b in 0.01..0.9f64, f in -4.0..4.0f64, step in 0.001..2.0f64) {
            let p = RecoveryParams::new(mu, sigma, vec![b]).unwrap();
            let c = id(1);
            prop_assert!(conditional_lgd(&p, &c, &[f + step]) <= conditional_lgd(&p, &c, &[f]));
        }
    }
}
