use serde::Serialize;

use super::{capital_charge, empirical_quantile, LossBreakdown, SimulationResult};
use crate::error::{Error, Result};

/// Stressed losses and capital at one tail probability.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantileReport {
    pub alpha: f64,
    pub total: f64,
    pub per_period: Vec<f64>,
    /// Per-period quantiles at tail probability `alpha / T`.
    pub split_per_period: Vec<f64>,
    /// Sum of `split_per_period`; never below `total`.
    pub split_sum: f64,
    pub capital_total: f64,
    pub capital_per_period: Vec<f64>,
    pub premium: Option<Premium>,
}

/// Raw components of a risk premium: expected loss plus the cost of holding
/// the capital at the given rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Premium {
    pub capital_cost_rate: f64,
    pub expected: f64,
    pub capital: f64,
    pub premium: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskReport {
    pub n_paths: usize,
    pub seed: u64,
    pub expected_total: f64,
    pub expected_per_period: Vec<f64>,
    /// Ordered by decreasing `alpha`, so quantiles are non-decreasing.
    pub quantiles: Vec<QuantileReport>,
    pub warnings: Vec<String>,
}

impl RiskReport {
    pub fn build(
        expected: &LossBreakdown,
        result: &SimulationResult,
        alphas: &[f64],
        capital_cost_rate: Option<f64>,
    ) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::Invalid("at least one tail probability is required".into()));
        }
        if let Some(r) = capital_cost_rate {
            if !(r >= 0.0) || !r.is_finite() {
                return Err(Error::Invalid(format!("capital cost rate {r} must be non-negative")));
            }
        }
        let horizon = result.horizon;
        if expected.per_period.len() != horizon {
            return Err(Error::Dimension(format!(
                "expected loss has {} periods, simulation {horizon}",
                expected.per_period.len()
            )));
        }
        let mut sorted = alphas.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        sorted.dedup();

        let periods: Vec<Vec<f64>> = (1..=horizon).map(|t| result.period_sample(t)).collect();
        let per_period_quantiles = |alpha: f64| -> Result<Vec<f64>> {
            periods.iter().map(|sample| empirical_quantile(sample, alpha)).collect()
        };
        let mut warnings = Vec::new();
        let mut quantiles = Vec::with_capacity(sorted.len());
        for &alpha in &sorted {
            if (result.n_paths as f64) < 100.0 / alpha {
                warnings.push(format!(
                    "alpha {alpha}: {} paths are fewer than the recommended {:.0}",
                    result.n_paths,
                    (100.0 / alpha).ceil()
                ));
            }
            let total = empirical_quantile(&result.totals, alpha)?;
            let per_period = per_period_quantiles(alpha)?;
            let split_per_period = per_period_quantiles(alpha / horizon as f64)?;
            let split_sum = split_per_period.iter().sum();
            let capital_per_period = capital_charge(&per_period, &expected.per_period)?;
            let capital_total = total - expected.total;
            for (t, k) in capital_per_period.iter().enumerate() {
                if *k < 0.0 {
                    warnings.push(format!("alpha {alpha}: negative capital charge {k} in period {}", t + 1));
                }
            }
            if capital_total < 0.0 {
                warnings.push(format!("alpha {alpha}: negative total capital {capital_total}"));
            }
            let premium = capital_cost_rate.map(|rate| Premium {
                capital_cost_rate: rate,
                expected: expected.total,
                capital: capital_total,
                premium: expected.total + rate * capital_total,
            });
            quantiles.push(QuantileReport {
                alpha,
                total,
                per_period,
                split_per_period,
                split_sum,
                capital_total,
                capital_per_period,
                premium,
            });
        }
        Ok(RiskReport {
            n_paths: result.n_paths,
            seed: result.seed,
            expected_total: expected.total,
            expected_per_period: expected.per_period.clone(),
            quantiles,
            warnings,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::tests::proposed_model;
    use crate::engine::{simulate, stressed_quantile, QuantileScope, SimulationConfig};

    #[test]
    fn recomposes_from_parts() {
        let m = proposed_model(vec![None, None]);
        let cfg = SimulationConfig { n_paths: 5000, seed: 1, keep_trajectories: false, workers: None };
        let r = simulate(&m, &cfg, "x").unwrap();
        let e = m.expected_loss();
        let rep = RiskReport::build(&e, &r, &[0.01, 0.05, 0.01], Some(0.1)).unwrap();
        assert_eq!(rep.quantiles.len(), 2);
        assert!(rep.quantiles[0].total <= rep.quantiles[1].total);
        for q in &rep.quantiles {
            assert!(q.split_sum >= q.total);
            let direct = stressed_quantile(&r, q.alpha, QuantileScope::Total).unwrap();
            assert_eq!(q.capital_total, direct - e.total);
            for t in 0..3 {
                assert_eq!(q.capital_per_period[t], q.per_period[t] - e.per_period[t]);
            }
            let p = q.premium.unwrap();
            assert_eq!(p.premium, e.total + 0.1 * q.capital_total);
        }
        assert!(RiskReport::build(&e, &r, &[], None).is_err());
        assert!(RiskReport::build(&e, &r, &[0.01], Some(-1.0)).is_err());
    }
}
