use serde::Serialize;

use super::SimulationResult;
use crate::error::{Error, Result};

/// Mean factor values over the paths whose total loss reaches a threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReverseStress {
    pub threshold: f64,
    pub exceedances: usize,
    /// `mean[t - 1][j]`: estimate of `E[Z_t,j | L >= threshold]`.
    pub mean: Vec<Vec<f64>>,
    pub std_error: Vec<Vec<f64>>,
}

pub fn reverse_stress(result: &SimulationResult, threshold: f64) -> Result<ReverseStress> {
    let paths = result
        .trajectories
        .as_ref()
        .ok_or_else(|| Error::Invalid("reverse stress needs retained factor trajectories".into()))?;
    let hits: Vec<usize> = (0..result.n_paths).filter(|&k| result.totals[k] >= threshold).collect();
    let m = hits.len();
    if m == 0 {
        return Err(Error::EmptyConditioning(format!("no path has a loss of at least {threshold}")));
    }
    if m < 100 {
        log::warn!("only {m} paths exceed the reverse-stress threshold {threshold}");
    }
    let (horizon, dim) = (paths.horizon, paths.dim);
    let mut mean = vec![vec![0.0; dim]; horizon];
    let mut std_error = vec![vec![0.0; dim]; horizon];
    for t in 1..=horizon {
        for j in 0..dim {
            let mu = hits.iter().map(|&k| paths.get(k, t)[j]).sum::<f64>() / m as f64;
            let var = if m > 1 {
                hits.iter().map(|&k| (paths.get(k, t)[j] - mu).powi(2)).sum::<f64>() / (m - 1) as f64
            } else {
                f64::NAN
            };
            mean[t - 1][j] = mu;
            std_error[t - 1][j] = (var / m as f64).sqrt();
        }
    }
    Ok(ReverseStress { threshold, exceedances: m, mean, std_error })
}
