//! Euler allocation of expected and unexpected loss to sub-portfolios.
//!
//! Sub-portfolio `p` with principal `K_p` loses `K_p l_p(Z)`. Its expected
//! contribution is `K_p E[l_p]` and its unexpected contribution is
//! `K_p E[l_p | L = q]` at the stressed quantile `q` of the total loss `L`,
//! estimated by Nadaraya-Watson kernel regression.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::{empirical_quantile, SimulationResult};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    #[default]
    Gaussian,
    Epanechnikov,
}

impl Kernel {
    /// Unnormalized weight at `u`; normalizing constants cancel in the ratio.
    fn weight(self, u: f64) -> f64 {
        match self {
            Kernel::Gaussian => (-0.5 * u * u).exp(),
            Kernel::Epanechnikov => (1.0 - u * u).max(0.0),
        }
    }
}

impl FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Kernel::Gaussian),
            "epanechnikov" => Ok(Kernel::Epanechnikov),
            _ => Err(Error::Parse(format!("unknown kernel `{s}`"))),
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kernel::Gaussian => "gaussian",
            Kernel::Epanechnikov => "epanechnikov",
        })
    }
}

/// Risk contributions and the sensitivities they normalize to.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Contributions {
    pub rc: Vec<f64>,
    pub s: Vec<f64>,
}

fn check_shape(sub_losses: &[f64], principals: &[f64]) -> Result<usize> {
    let n_sub = principals.len();
    if n_sub == 0 {
        return Err(Error::Invalid("no sub-portfolios".into()));
    }
    if sub_losses.is_empty() || sub_losses.len() % n_sub != 0 {
        return Err(Error::Dimension(format!(
            "{} sub-portfolio losses do not form rows of {n_sub}",
            sub_losses.len()
        )));
    }
    if let Some(k) = principals.iter().find(|k| !(**k >= 0.0) || !k.is_finite()) {
        return Err(Error::Invalid(format!("principal {k} must be finite and non-negative")));
    }
    Ok(n_sub)
}

fn normalize(rc: Vec<f64>, what: &str) -> Result<Contributions> {
    let sum: f64 = rc.iter().sum();
    if sum == 0.0 || !sum.is_finite() {
        return Err(Error::DegenerateSample(format!("{what} contributions sum to {sum}; sensitivities undefined")));
    }
    let s = rc.iter().map(|r| r / sum).collect();
    Ok(Contributions { rc, s })
}

/// `RC^e_p = K_p mean(l_p)` from losses per unit principal `sub_losses`
/// (`n_paths x P`, row-major).
pub fn expected_contributions(sub_losses: &[f64], principals: &[f64]) -> Result<Contributions> {
    let n_sub = check_shape(sub_losses, principals)?;
    let n = sub_losses.len() / n_sub;
    let mut mean = vec![0.0; n_sub];
    for row in sub_losses.chunks(n_sub) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let rc = mean.iter().zip(principals).map(|(m, k)| k * (m / n as f64)).collect();
    normalize(rc, "expected")
}

/// `RC^u_p = K_p s_p` with `s_p` the kernel estimate of `E[l_p | L = quantile]`.
pub fn unexpected_contributions(
    sub_losses: &[f64],
    principals: &[f64],
    totals: &[f64],
    quantile: f64,
    bandwidth: f64,
    kernel: Kernel,
) -> Result<Contributions> {
    let n_sub = check_shape(sub_losses, principals)?;
    if totals.len() * n_sub != sub_losses.len() {
        return Err(Error::Dimension(format!(
            "{} total losses against {} sub-portfolio rows",
            totals.len(),
            sub_losses.len() / n_sub
        )));
    }
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::Invalid(format!("bandwidth {bandwidth} must be positive")));
    }
    let mut mass = 0.0;
    let mut acc = vec![0.0; n_sub];
    for (row, l) in sub_losses.chunks(n_sub).zip(totals) {
        let w = kernel.weight((l - quantile) / bandwidth);
        if w > 0.0 {
            mass += w;
            for (a, v) in acc.iter_mut().zip(row) {
                *a += w * v;
            }
        }
    }
    if !(mass > 0.0) {
        return Err(Error::DegenerateSample(format!(
            "no kernel mass at {quantile} with bandwidth {bandwidth}"
        )));
    }
    let rc = acc.iter().zip(principals).map(|(a, k)| k * (a / mass)).collect();
    normalize(rc, "unexpected")
}

/// Silverman's rule `1.06 sd n^(-1/5)`.
pub fn default_bandwidth(totals: &[f64]) -> Result<f64> {
    let n = totals.len();
    if n < 2 {
        return Err(Error::DegenerateSample("bandwidth needs at least two losses".into()));
    }
    let mean = totals.iter().sum::<f64>() / n as f64;
    let var = totals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if !(var > 0.0) {
        return Err(Error::DegenerateSample("total loss sample has zero variance".into()));
    }
    Ok(1.06 * var.sqrt() * (n as f64).powf(-0.2))
}

/// Losses per unit principal; sub-portfolios without principal contribute zero.
pub fn unit_losses(result: &SimulationResult, principals: &[f64]) -> Result<Vec<f64>> {
    if principals.len() != result.n_sub {
        return Err(Error::Dimension(format!(
            "{} principals for {} sub-portfolios",
            principals.len(),
            result.n_sub
        )));
    }
    Ok(result
        .per_sub
        .chunks(result.n_sub)
        .flat_map(|row| row.iter().zip(principals).map(|(v, k)| if *k > 0.0 { v / k } else { 0.0 }))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationReport {
    pub alpha: f64,
    pub kernel: Kernel,
    pub bandwidth: f64,
    pub quantile_used: f64,
    pub labels: Vec<String>,
    pub principals: Vec<f64>,
    pub rc_expected: Vec<f64>,
    pub s_expected: Vec<f64>,
    pub rc_unexpected: Vec<f64>,
    pub s_unexpected: Vec<f64>,
}

impl AllocationReport {
    /// Allocates at the `(1 - alpha)` quantile of the same sample.
    pub fn build(
        result: &SimulationResult,
        labels: &[String],
        principals: &[f64],
        alpha: f64,
        bandwidth: Option<f64>,
        kernel: Kernel,
    ) -> Result<Self> {
        if labels.len() != principals.len() {
            return Err(Error::Dimension(format!("{} labels for {} principals", labels.len(), principals.len())));
        }
        let unit = unit_losses(result, principals)?;
        let quantile_used = empirical_quantile(&result.totals, alpha)?;
        let bandwidth = match bandwidth {
            Some(h) => h,
            None => default_bandwidth(&result.totals)?,
        };
        let e = expected_contributions(&unit, principals)?;
        let u = unexpected_contributions(&unit, principals, &result.totals, quantile_used, bandwidth, kernel)?;
        Ok(AllocationReport {
            alpha,
            kernel,
            bandwidth,
            quantile_used,
            labels: labels.to_vec(),
            principals: principals.to_vec(),
            rc_expected: e.rc,
            s_expected: e.s,
            rc_unexpected: u.rc,
            s_unexpected: u.s,
        })
    }
}
