use crate::error::{Error, Result};
use crate::factors::CorrelationMatrix;
use crate::migration::{thresholds, MigrationMatrix};
use crate::normal;
use crate::portfolio::{aggregate_ead, Portfolio};

/// Stressed loss of a single-period, single-group book with independent
/// factors, rating-independent loadings `a` and fixed recovery rates:
///
/// `sum_i Phi((z_iK + Phi^-1(1 - alpha) |a|) / sqrt(1 - |a|^2)) (1 - RR_i) EAD_i`.
///
/// The loss is decreasing in `a.Z`, which is `N(0, |a|^2)`, so its quantile
/// is the loss at `a.Z = -Phi^-1(1 - alpha) |a|`.
pub fn closed_form_simple_case(
    portfolio: &Portfolio,
    migration: &MigrationMatrix,
    loading: &[f64],
    corr: &CorrelationMatrix,
    recovery_rates: &[f64],
    alpha: f64,
) -> Result<f64> {
    let na = |why: &str| Err(Error::NotApplicable(why.to_string()));
    if portfolio.horizon() != 1 {
        return na("the horizon must be one period");
    }
    if portfolio.groups().len() != 1 {
        return na("the portfolio must consist of a single group");
    }
    if !corr.is_identity() || loading.len() != corr.dim() {
        return na("factors must be independent and match the loading");
    }
    let k = migration.k();
    if portfolio.num_ratings() != k || recovery_rates.len() != k - 1 {
        return na("one recovery rate per non-default rating is required");
    }
    if recovery_rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return na("recovery rates must lie in [0, 1]");
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Invalid(format!("tail probability {alpha} outside (0, 1)")));
    }
    let norm_sq: f64 = loading.iter().map(|a| a * a).sum();
    if norm_sq >= 1.0 {
        return na("the loading norm must be below one");
    }
    let norm = norm_sq.sqrt();
    let shift = normal::quantile(1.0 - alpha) * norm;
    let scale = (1.0 - norm_sq).sqrt();
    let z = thresholds(migration)?;
    let exposure = aggregate_ead(portfolio);
    Ok((0..k - 1)
        .map(|i| normal::cdf((z.default_threshold(i) + shift) / scale) * (1.0 - recovery_rates[i]) * exposure.get(0, i, 1))
        .sum())
}
