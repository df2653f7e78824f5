//! Systematic factor model, scenario intensities and loading calibration.

mod correlation;
mod loadings;
pub(crate) mod sampling;

pub use correlation::CorrelationMatrix;
pub use loadings::{
    loadings_proposed, loadings_t1, loadings_t2, regulatory_loadings, Approach, LoadingSchedule,
};
pub use sampling::{sample_factors, sample_path, FactorPaths};

use serde::Serialize;

use crate::error::{Error, Result};

/// Correlated Gaussian systematic factors with their labels.
#[derive(Debug, Clone, Serialize)]
pub struct FactorModel {
    labels: Vec<String>,
    corr: CorrelationMatrix,
}

impl FactorModel {
    pub fn new(labels: Vec<String>, corr: CorrelationMatrix) -> Result<Self> {
        if labels.len() != corr.dim() {
            return Err(Error::Dimension(format!(
                "{} factor labels for a {}-dimensional correlation matrix",
                labels.len(),
                corr.dim()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = labels.iter().find(|l| !seen.insert(l.as_str())) {
            return Err(Error::Invalid(format!("duplicate factor label {dup:?}")));
        }
        Ok(FactorModel { labels, corr })
    }

    /// Independent factors with generated labels `f1..fd`.
    pub fn independent(dim: usize) -> Self {
        FactorModel {
            labels: (1..=dim).map(|j| format!("f{j}")).collect(),
            corr: CorrelationMatrix::identity(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.corr.dim()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn corr(&self) -> &CorrelationMatrix {
        &self.corr
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// Economic, transition and `regions` physical factors.
///
/// The economic and transition factors are correlated at `-rho`, the physical
/// factors are equicorrelated at `rho_o`, and the two blocks are independent.
pub fn build_block_correlation(rho: f64, rho_o: f64, regions: usize) -> Result<FactorModel> {
    if !(-1.0..=1.0).contains(&rho) || !(-1.0..=1.0).contains(&rho_o) {
        return Err(Error::NotCorrelation {
            reason: format!("block correlations rho = {rho}, rho_o = {rho_o} must lie in [-1, 1]"),
            min_eigenvalue: f64::NAN,
        });
    }
    let dim = 2 + regions;
    let mut entries = vec![0.0; dim * dim];
    for i in 0..dim {
        entries[i * dim + i] = 1.0;
    }
    entries[1] = -rho;
    entries[dim] = -rho;
    for i in 2..dim {
        for j in 2..dim {
            if i != j {
                entries[i * dim + j] = rho_o;
            }
        }
    }
    let mut labels = vec!["economic".to_string(), "transition".to_string()];
    labels.extend((1..=regions).map(|r| format!("physical-{r}")));
    FactorModel::new(labels, CorrelationMatrix::new(dim, entries)?)
}

/// Supervisory asset correlation for a one-period default probability.
///
/// Interpolates between 0.24 at `pd = 0` and 0.12 at `pd = 1` with weight
/// `(1 - exp(-50 pd)) / (1 - exp(-50))`; the Basel III variant for large
/// financial institutions multiplies the result by 1.25.
pub fn regulatory_correlation(pd: f64, basel3: bool) -> f64 {
    let w = -(-50.0 * pd).exp_m1() / -(-50.0f64).exp_m1();
    let r = 0.12 * w + 0.24 * (1.0 - w);
    if basel3 {
        1.25 * r
    } else {
        r
    }
}

/// Scenario intensities `zeta[t][j]` of each systematic factor for periods
/// `t = 1..=T`. The economic factor (column 0) keeps a constant intensity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MacroTrajectory {
    horizon: usize,
    dim: usize,
    zeta: Vec<f64>,
}

impl MacroTrajectory {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let horizon = rows.len();
        if horizon == 0 {
            return Err(Error::Invalid("intensity table has no periods".into()));
        }
        let dim = rows[0].len();
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Dimension("intensity table rows differ in length".into()));
        }
        if let Some(v) = rows.iter().flatten().find(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite intensity {v}")));
        }
        if let Some(t) = rows.iter().position(|r| r[0] != rows[0][0]) {
            return Err(Error::Invalid(format!(
                "economic intensity must be constant over time; period {} differs from period 1",
                t + 1
            )));
        }
        Ok(MacroTrajectory {
            horizon,
            dim,
            zeta: rows.into_iter().flatten().collect(),
        })
    }

    /// The same intensities in every period.
    pub fn constant(horizon: usize, row: Vec<f64>) -> Result<Self> {
        Self::new(vec![row; horizon])
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Intensities of period `t` in `1..=T`.
    pub fn period(&self, t: usize) -> &[f64] {
        &self.zeta[(t - 1) * self.dim..t * self.dim]
    }
}

/// Relative exposures `alpha[g][i][t][j]` of each group and rating to each
/// factor, for periods `t = 1..=T`. Values may be negative.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MicroAdjustments {
    groups: usize,
    ratings: usize,
    horizon: usize,
    dim: usize,
    alpha: Vec<f64>,
}

impl MicroAdjustments {
    pub fn zeros(groups: usize, ratings: usize, horizon: usize, dim: usize) -> Self {
        MicroAdjustments {
            groups,
            ratings,
            horizon,
            dim,
            alpha: vec![0.0; groups * ratings * horizon * dim],
        }
    }

    /// Every group, rating and period gets the same vector.
    pub fn uniform(groups: usize, ratings: usize, horizon: usize, alpha: &[f64]) -> Self {
        let mut m = Self::zeros(groups, ratings, horizon, alpha.len());
        for chunk in m.alpha.chunks_mut(alpha.len()) {
            chunk.copy_from_slice(alpha);
        }
        m
    }

    fn offset(&self, g: usize, i: usize, t: usize) -> usize {
        assert!(t >= 1 && t <= self.horizon, "period {t} outside 1..={}", self.horizon);
        ((g * self.ratings + i) * self.horizon + t - 1) * self.dim
    }

    pub fn get(&self, g: usize, i: usize, t: usize) -> &[f64] {
        let o = self.offset(g, i, t);
        &self.alpha[o..o + self.dim]
    }

    pub fn set(&mut self, g: usize, i: usize, t: usize, j: usize, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Invalid(format!("non-finite adjustment {value}")));
        }
        let o = self.offset(g, i, t);
        self.alpha[o + j] = value;
        Ok(())
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn ratings(&self) -> usize {
        self.ratings
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}
