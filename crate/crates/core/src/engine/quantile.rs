use super::SimulationResult;
use crate::error::{Error, Result};

/// Which loss sample a quantile is taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantileScope {
    Total,
    /// Period `t` in `1..=T`.
    Period(usize),
}

/// Rank of the empirical `(1 - alpha)`-quantile in a sample of size `n`:
/// `ceil((1 - alpha) n)`, clamped to `1..=n`. The small offset keeps products
/// such as `0.999 * 1000` from rounding up to the next rank.
pub(crate) fn quantile_rank(alpha: f64, n: usize) -> usize {
    let x = (1.0 - alpha) * n as f64;
    ((x - 1e-9).ceil() as usize).clamp(1, n)
}

/// Empirical `(1 - alpha)`-quantile: the `ceil((1 - alpha) n)`-th smallest value.
pub fn empirical_quantile(sample: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Invalid(format!("tail probability {alpha} outside (0, 1)")));
    }
    if sample.is_empty() {
        return Err(Error::DegenerateSample("empty loss sample".into()));
    }
    if let Some(v) = sample.iter().find(|v| v.is_nan()) {
        return Err(Error::DegenerateSample(format!("loss sample contains {v}")));
    }
    let k = quantile_rank(alpha, sample.len());
    let mut work = sample.to_vec();
    let (_, v, _) = work.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(*v)
}

/// Stressed loss `L^{1-alpha}` of the simulated total or of one period.
/// Warns when the sample is smaller than `100 / alpha`.
pub fn stressed_quantile(result: &SimulationResult, alpha: f64, scope: QuantileScope) -> Result<f64> {
    if (result.n_paths as f64) < 100.0 / alpha {
        log::warn!(
            "{} paths are fewer than the 100 / alpha = {:.0} recommended for alpha = {alpha}",
            result.n_paths,
            100.0 / alpha
        );
    }
    match scope {
        QuantileScope::Total => empirical_quantile(&result.totals, alpha),
        QuantileScope::Period(t) => {
            if t == 0 || t > result.horizon {
                return Err(Error::Invalid(format!("period {t} outside 1..={}", result.horizon)));
            }
            empirical_quantile(&result.period_sample(t), alpha)
        }
    }
}

/// Capital charges `K_t = L^{1-alpha}_{t,stress} - L^e_t`. Negative charges
/// are kept and reported through the log.
pub fn capital_charge(stressed: &[f64], expected: &[f64]) -> Result<Vec<f64>> {
    if stressed.len() != expected.len() {
        return Err(Error::Dimension(format!(
            "{} stressed losses against {} expected losses",
            stressed.len(),
            expected.len()
        )));
    }
    let out: Vec<f64> = stressed.iter().zip(expected).map(|(q, e)| q - e).collect();
    for (t, k) in out.iter().enumerate() {
        if *k < 0.0 {
            log::warn!("negative capital charge {k} at position {}: stressed loss below the mean", t + 1);
        }
    }
    Ok(out)
}
