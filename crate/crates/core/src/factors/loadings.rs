//! Time-dependent factor loadings from scenario intensities.
//!
//! All three calibrations start from the adjusted loadings
//! `adj[g,i,t] = alpha[g,i,t] * zeta[t]` (componentwise) and the supervisory
//! correlation `R_reg[g,i]` of the rating's one-period default probability.
//!
//! * `T1` rescales `adj[g,i,t]` to keep the total correlation at `R_reg`.
//! * `T2` lets the correlation move with the scenario but keeps the migration
//!   matrices fixed.
//! * `Proposed` keeps idiosyncratic and economic risk constant, so the overall
//!   asset variance grows with the climate intensities and the unconditional
//!   migration matrices are updated accordingly.

use serde::{Deserialize, Serialize};

use super::{CorrelationMatrix, MacroTrajectory, MicroAdjustments};
use crate::error::{Error, Result};
use crate::migration::{self, MigrationMatrix, ThresholdMatrix, SATURATION_GAP};

use super::regulatory_correlation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Approach {
    T1,
    T2,
    Proposed,
}

impl std::str::FromStr for Approach {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "t1" => Ok(Approach::T1),
            "t2" => Ok(Approach::T2),
            "proposed" => Ok(Approach::Proposed),
            other => Err(Error::Invalid(format!("unknown approach {other:?} (expected t1, t2 or proposed)"))),
        }
    }
}

impl std::fmt::Display for Approach {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Approach::T1 => "t1",
            Approach::T2 => "t2",
            Approach::Proposed => "proposed",
        })
    }
}

/// Loadings `a[g,i,t]`, correlations `R[g,i,t] = a.Ca` and unconditional
/// migration matrices `M[g,t]` for periods `t = 1..=T`.
#[derive(Debug, Clone, Serialize)]
pub struct LoadingSchedule {
    approach: Approach,
    groups: usize,
    ratings: usize,
    horizon: usize,
    dim: usize,
    loadings: Vec<f64>,
    correlations: Vec<f64>,
    matrices: Vec<MigrationMatrix>,
    #[serde(skip)]
    thresholds: Vec<ThresholdMatrix>,
}

impl LoadingSchedule {
    /// Assembles a schedule from explicit parts.
    ///
    /// `matrices[g][t-1]` and `loadings[((g * K + i) * T + t - 1) * d + j]`.
    /// Correlations and thresholds are derived. Loadings of the default rating
    /// must be zero.
    pub fn new(
        approach: Approach,
        corr: &CorrelationMatrix,
        matrices: Vec<Vec<MigrationMatrix>>,
        loadings: Vec<f64>,
    ) -> Result<Self> {
        let thresholds = matrices
            .iter()
            .map(|row| row.iter().map(migration::thresholds).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Self::with_thresholds(approach, corr, matrices, thresholds, loadings)
    }

    fn with_thresholds(
        approach: Approach,
        corr: &CorrelationMatrix,
        matrices: Vec<Vec<MigrationMatrix>>,
        thresholds: Vec<Vec<ThresholdMatrix>>,
        loadings: Vec<f64>,
    ) -> Result<Self> {
        let groups = matrices.len();
        let horizon = matrices.first().map_or(0, Vec::len);
        if groups == 0 || horizon == 0 {
            return Err(Error::Dimension("schedule needs at least one group and one period".into()));
        }
        if matrices.iter().any(|m| m.len() != horizon) {
            return Err(Error::Dimension("groups have different numbers of periods".into()));
        }
        let ratings = matrices[0][0].k();
        if matrices.iter().flatten().any(|m| m.k() != ratings) {
            return Err(Error::Dimension("migration matrices differ in size".into()));
        }
        let dim = corr.dim();
        if loadings.len() != groups * ratings * horizon * dim {
            return Err(Error::Dimension(format!(
                "{} loadings for {groups} groups, {ratings} ratings, {horizon} periods and {dim} factors",
                loadings.len()
            )));
        }
        let mut correlations = Vec::with_capacity(groups * ratings * horizon);
        for (n, a) in loadings.chunks(dim).enumerate() {
            let r = corr.quad(a);
            if !(r < 1.0 - SATURATION_GAP) {
                return Err(Error::LoadingSaturation { systematic_variance: r });
            }
            let i = (n / horizon) % ratings;
            if i == ratings - 1 && a.iter().any(|v| *v != 0.0) {
                return Err(Error::Invalid("default rating must have zero loadings".into()));
            }
            correlations.push(r.max(0.0));
        }
        Ok(LoadingSchedule {
            approach,
            groups,
            ratings,
            horizon,
            dim,
            loadings,
            correlations,
            matrices: matrices.into_iter().flatten().collect(),
            thresholds: thresholds.into_iter().flatten().collect(),
        })
    }

    pub fn approach(&self) -> Approach {
        self.approach
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

    fn cell(&self, g: usize, i: usize, t: usize) -> usize {
        assert!(t >= 1 && t <= self.horizon, "period {t} outside 1..={}", self.horizon);
        (g * self.ratings + i) * self.horizon + t - 1
    }

    /// Loading vector of group `g`, rating `i`, period `t` in `1..=T`.
    pub fn loading(&self, g: usize, i: usize, t: usize) -> &[f64] {
        let c = self.cell(g, i, t);
        &self.loadings[c * self.dim..(c + 1) * self.dim]
    }

    /// Total systematic correlation `a.Ca`.
    pub fn correlation(&self, g: usize, i: usize, t: usize) -> f64 {
        self.correlations[self.cell(g, i, t)]
    }

    pub fn matrix(&self, g: usize, t: usize) -> &MigrationMatrix {
        &self.matrices[g * self.horizon + t - 1]
    }

    pub fn thresholds(&self, g: usize, t: usize) -> &ThresholdMatrix {
        &self.thresholds[g * self.horizon + t - 1]
    }
}

struct Inputs<'a> {
    zeta: &'a MacroTrajectory,
    alpha: &'a MicroAdjustments,
    regulatory: &'a [MigrationMatrix],
    corr: &'a CorrelationMatrix,
    basel3: bool,
}

impl Inputs<'_> {
    fn check(&self) -> Result<(usize, usize, usize, usize)> {
        let groups = self.regulatory.len();
        if groups == 0 {
            return Err(Error::Dimension("no regulatory migration matrices".into()));
        }
        let ratings = self.regulatory[0].k();
        if self.regulatory.iter().any(|m| m.k() != ratings) {
            return Err(Error::Dimension("regulatory matrices differ in size".into()));
        }
        let (horizon, dim) = (self.zeta.horizon(), self.zeta.dim());
        if dim != self.corr.dim() || self.alpha.dim() != dim {
            return Err(Error::Dimension(format!(
                "intensities have {dim} factors, adjustments {}, correlation matrix {}",
                self.alpha.dim(),
                self.corr.dim()
            )));
        }
        if self.alpha.groups() != groups || self.alpha.ratings() != ratings || self.alpha.horizon() != horizon {
            return Err(Error::Dimension("adjustment table does not match groups, ratings or horizon".into()));
        }
        Ok((groups, ratings, horizon, dim))
    }

    fn adjusted(&self, g: usize, i: usize, t: usize) -> Vec<f64> {
        self.alpha
            .get(g, i, t)
            .iter()
            .zip(self.zeta.period(t))
            .map(|(a, z)| a * z)
            .collect()
    }

    fn regulatory_r(&self, g: usize, i: usize) -> f64 {
        regulatory_correlation(self.regulatory[g].default_probability(i), self.basel3)
    }

    /// `adj.C adj`, failing when it vanishes.
    fn adjusted_variance(&self, adj: &[f64], g: usize, i: usize, t: usize) -> Result<f64> {
        let v = self.corr.quad(adj);
        if !(v > 0.0) {
            return Err(Error::DegenerateLoading(format!(
                "adjusted loading of group {}, rating {}, period {t} has variance {v}",
                g + 1,
                i + 1
            )));
        }
        Ok(v)
    }

    fn constant_matrices(&self, horizon: usize) -> Vec<Vec<MigrationMatrix>> {
        self.regulatory.iter().map(|m| vec![m.clone(); horizon]).collect()
    }
}

/// Regulatory period-one loadings `a_reg[g][i]`, normalized so that
/// `a_reg.C a_reg = R_reg`.
pub fn regulatory_loadings(
    zeta: &MacroTrajectory,
    alpha: &MicroAdjustments,
    regulatory: &[MigrationMatrix],
    corr: &CorrelationMatrix,
    basel3: bool,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let inputs = Inputs { zeta, alpha, regulatory, corr, basel3 };
    let (groups, ratings, _, dim) = inputs.check()?;
    reg_loadings(&inputs, groups, ratings, dim)
}

fn reg_loadings(inputs: &Inputs<'_>, groups: usize, ratings: usize, dim: usize) -> Result<Vec<Vec<Vec<f64>>>> {
    (0..groups)
        .map(|g| {
            (0..ratings)
                .map(|i| {
                    if i == ratings - 1 {
                        return Ok(vec![0.0; dim]);
                    }
                    let adj = inputs.adjusted(g, i, 1);
                    let scale = (inputs.regulatory_r(g, i) / inputs.adjusted_variance(&adj, g, i, 1)?).sqrt();
                    Ok(adj.iter().map(|v| v * scale).collect())
                })
                .collect()
        })
        .collect()
}

/// Constant total correlation: `a = sqrt(R_reg) adj / sqrt(adj.C adj)`.
pub fn loadings_t1(
    zeta: &MacroTrajectory,
    alpha: &MicroAdjustments,
    regulatory: &[MigrationMatrix],
    corr: &CorrelationMatrix,
    basel3: bool,
) -> Result<LoadingSchedule> {
    let inputs = Inputs { zeta, alpha, regulatory, corr, basel3 };
    let (groups, ratings, horizon, dim) = inputs.check()?;
    let mut loadings = Vec::with_capacity(groups * ratings * horizon * dim);
    for g in 0..groups {
        for i in 0..ratings {
            for t in 1..=horizon {
                if i == ratings - 1 {
                    loadings.extend(std::iter::repeat_n(0.0, dim));
                    continue;
                }
                let adj = inputs.adjusted(g, i, t);
                let scale = (inputs.regulatory_r(g, i) / inputs.adjusted_variance(&adj, g, i, t)?).sqrt();
                loadings.extend(adj.iter().map(|v| v * scale));
            }
        }
    }
    LoadingSchedule::new(Approach::T1, corr, inputs.constant_matrices(horizon), loadings)
}

/// Scenario-dependent correlation
/// `R_t = adj_t.C adj_t R_reg / (adj_t.C adj_t R_reg + adj_1.C adj_1 (1 - R_reg))`
/// with the regulatory migration matrices kept for every period.
pub fn loadings_t2(
    zeta: &MacroTrajectory,
    alpha: &MicroAdjustments,
    regulatory: &[MigrationMatrix],
    corr: &CorrelationMatrix,
    basel3: bool,
) -> Result<LoadingSchedule> {
    let inputs = Inputs { zeta, alpha, regulatory, corr, basel3 };
    let (groups, ratings, horizon, dim) = inputs.check()?;
    let mut loadings = Vec::with_capacity(groups * ratings * horizon * dim);
    for g in 0..groups {
        for i in 0..ratings {
            if i == ratings - 1 {
                loadings.extend(std::iter::repeat_n(0.0, dim * horizon));
                continue;
            }
            let r_reg = inputs.regulatory_r(g, i);
            let v1 = inputs.adjusted_variance(&inputs.adjusted(g, i, 1), g, i, 1)?;
            for t in 1..=horizon {
                let adj = inputs.adjusted(g, i, t);
                let vt = if t == 1 { v1 } else { inputs.adjusted_variance(&adj, g, i, t)? };
                let denom = vt * r_reg + v1 * (1.0 - r_reg);
                let scale = (r_reg / denom).sqrt();
                loadings.extend(adj.iter().map(|v| v * scale));
            }
        }
    }
    LoadingSchedule::new(Approach::T2, corr, inputs.constant_matrices(horizon), loadings)
}

/// Constant idiosyncratic and economic risk.
///
/// With `c_t = a_reg * adj_t / adj_1` (componentwise) and
/// `s_t^2 = 1 + c_t.C c_t - a_reg.C a_reg`, the loadings are `c_t / s_t`, the
/// correlation is `c_t.C c_t / s_t^2` and row `i` of the migration matrix is
/// built from the regulatory thresholds divided by `s_t`.
pub fn loadings_proposed(
    zeta: &MacroTrajectory,
    alpha: &MicroAdjustments,
    regulatory: &[MigrationMatrix],
    corr: &CorrelationMatrix,
    basel3: bool,
) -> Result<LoadingSchedule> {
    let inputs = Inputs { zeta, alpha, regulatory, corr, basel3 };
    let (groups, ratings, horizon, dim) = inputs.check()?;
    let a_reg = reg_loadings(&inputs, groups, ratings, dim)?;
    let mut loadings = Vec::with_capacity(groups * ratings * horizon * dim);
    // scales[g][t-1][i]
    let mut scales = vec![vec![vec![1.0; ratings]; horizon]; groups];
    for g in 0..groups {
        for i in 0..ratings {
            if i == ratings - 1 {
                loadings.extend(std::iter::repeat_n(0.0, dim * horizon));
                continue;
            }
            let adj1 = inputs.adjusted(g, i, 1);
            for t in 1..=horizon {
                let adj = inputs.adjusted(g, i, t);
                let mut c = Vec::with_capacity(dim);
                for j in 0..dim {
                    let ratio = if adj1[j] != 0.0 {
                        adj[j] / adj1[j]
                    } else if adj[j] == 0.0 {
                        0.0
                    } else {
                        return Err(Error::UndefinedRatio(format!(
                            "factor {} of group {}, rating {} has zero period-1 loading but nonzero loading in period {t}",
                            j + 1,
                            g + 1,
                            i + 1
                        )));
                    };
                    c.push(a_reg[g][i][j] * ratio);
                }
                let s = migration::stress_scale(&c, &a_reg[g][i], corr).map_err(|e| match e {
                    Error::CalibrationInconsistency(msg) => Error::CalibrationInconsistency(format!(
                        "group {}, rating {}, period {t}: {msg}",
                        g + 1,
                        i + 1
                    )),
                    other => other,
                })?;
                scales[g][t - 1][i] = s;
                loadings.extend(c.iter().map(|v| v / s));
            }
        }
    }
    let mut matrices = Vec::with_capacity(groups);
    let mut thresholds = Vec::with_capacity(groups);
    for (g, m_reg) in regulatory.iter().enumerate() {
        let z_reg = migration::thresholds(m_reg)?;
        let mut ms = Vec::with_capacity(horizon);
        let mut zs = Vec::with_capacity(horizon);
        for s in &scales[g] {
            if s.iter().all(|v| *v == 1.0) {
                ms.push(m_reg.clone());
                zs.push(z_reg.clone());
            } else {
                ms.push(migration::stressed_migration_scaled(m_reg, &z_reg, s)?);
                zs.push(z_reg.rescaled(s));
            }
        }
        matrices.push(ms);
        thresholds.push(zs);
    }
    LoadingSchedule::with_thresholds(Approach::Proposed, corr, matrices, thresholds, loadings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::build_block_correlation;
    use proptest::prelude::*;

    fn regulatory() -> Vec<MigrationMatrix> {
        vec![MigrationMatrix::new(
            4,
            vec![
                0.90, 0.07, 0.02, 0.01, //
                0.05, 0.85, 0.07, 0.03, //
                0.01, 0.09, 0.80, 0.10, //
                0.0, 0.0, 0.0, 1.0,
            ],
        )
        .unwrap()]
    }

    fn scenario(horizon: usize, bump_at: Option<usize>) -> (MacroTrajectory, MicroAdjustments) {
        let rows = (1..=horizon)
            .map(|t| {
                let transition = if bump_at.is_some_and(|b| t >= b) { 1.0 } else { 0.5 };
                vec![1.0, transition, 0.3]
            })
            .collect();
        let zeta = MacroTrajectory::new(rows).unwrap();
        let alpha = MicroAdjustments::uniform(1, 4, horizon, &[0.8, 0.6, 0.4]);
        (zeta, alpha)
    }

    fn corr() -> CorrelationMatrix {
        build_block_correlation(0.2, 0.5, 1).unwrap().corr().clone()
    }

    #[test]
    fn t1_keeps_regulatory_correlation() {
        let (zeta, alpha) = scenario(12, Some(10));
        let c = corr();
        let s = loadings_t1(&zeta, &alpha, &regulatory(), &c, false).unwrap();
        for i in 0..3 {
            let r_reg = regulatory_correlation(regulatory()[0].default_probability(i), false);
            for t in 1..=12 {
                assert!((s.correlation(0, i, t) - r_reg).abs() < 1e-12);
                assert_eq!(s.matrix(0, t), &regulatory()[0]);
            }
        }
        assert_eq!(s.correlation(0, 3, 5), 0.0);
    }

    #[test]
    fn t1_ignores_scale_of_adjustments() {
        let (zeta, alpha) = scenario(3, Some(2));
        let alpha3 = MicroAdjustments::uniform(1, 4, 3, &[2.4, 1.8, 1.2]);
        let c = corr();
        let a = loadings_t1(&zeta, &alpha, &regulatory(), &c, false).unwrap();
        let b = loadings_t1(&zeta, &alpha3, &regulatory(), &c, false).unwrap();
        for i in 0..4 {
            for t in 1..=3 {
                for (x, y) in a.loading(0, i, t).iter().zip(b.loading(0, i, t)) {
                    assert!((x - y).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn period_one_identical_across_approaches() {
        let (zeta, alpha) = scenario(5, Some(3));
        let c = corr();
        let t1 = loadings_t1(&zeta, &alpha, &regulatory(), &c, false).unwrap();
        let t2 = loadings_t2(&zeta, &alpha, &regulatory(), &c, false).unwrap();
        let p = loadings_proposed(&zeta, &alpha, &regulatory(), &c, false).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                assert!((t1.loading(0, i, 1)[j] - t2.loading(0, i, 1)[j]).abs() < 1e-12);
                assert!((t1.loading(0, i, 1)[j] - p.loading(0, i, 1)[j]).abs() < 1e-12);
            }
        }
        assert_eq!(p.matrix(0, 1), &regulatory()[0]);
    }

    #[test]
    fn stronger_transition_raises_risk() {
        let (zeta, alpha) = scenario(12, Some(10));
        let c = corr();
        let t2 = loadings_t2(&zeta, &alpha, &regulatory(), &c, false).unwrap();
        let p = loadings_proposed(&zeta, &alpha, &regulatory(), &c, false).unwrap();
        let m_reg = &regulatory()[0];
        for i in 0..3 {
            let r_reg = regulatory_correlation(m_reg.default_probability(i), false);
            assert!(t2.correlation(0, i, 10) > r_reg);
            assert!(p.correlation(0, i, 10) > r_reg);
            assert!((p.correlation(0, i, 9) - r_reg).abs() < 1e-12);
            assert!(p.matrix(0, 10).default_probability(i) > m_reg.default_probability(i));
        }
    }

    #[test]
    fn stationary_proposed_reduces_to_regulatory() {
        let (zeta, alpha) = scenario(6, None);
        let c = corr();
        let p = loadings_proposed(&zeta, &alpha, &regulatory(), &c, true).unwrap();
        let t1 = loadings_t1(&zeta, &alpha, &regulatory(), &c, true).unwrap();
        for t in 1..=6 {
            assert_eq!(p.matrix(0, t), &regulatory()[0]);
            for i in 0..4 {
                assert_eq!(p.loading(0, i, t), p.loading(0, i, 1));
                assert!((p.correlation(0, i, t) - t1.correlation(0, i, t)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_period_one_factor_is_reported() {
        let zeta = MacroTrajectory::new(vec![vec![1.0, 0.0], vec![1.0, 0.4]]).unwrap();
        let alpha = MicroAdjustments::uniform(1, 4, 2, &[0.5, 0.5]);
        let c = CorrelationMatrix::identity(2);
        let err = loadings_proposed(&zeta, &alpha, &regulatory(), &c, false).unwrap_err();
        assert!(matches!(err, Error::UndefinedRatio(_)));
        assert!(loadings_t2(&zeta, &alpha, &regulatory(), &c, false).is_ok());
    }

    #[test]
    fn zero_adjustment_is_degenerate() {
        let zeta = MacroTrajectory::constant(2, vec![1.0, 1.0]).unwrap();
        let alpha = MicroAdjustments::zeros(1, 4, 2, 2);
        let c = CorrelationMatrix::identity(2);
        let err = loadings_t1(&zeta, &alpha, &regulatory(), &c, false).unwrap_err();
        assert!(matches!(err, Error::DegenerateLoading(_)));
    }

    proptest! {
        #[test]
        fn t2_and_proposed_loadings_coincide(
            transition in prop::collection::vec(0.05..2.0f64, 6),
            physical in prop::collection::vec(0.05..2.0f64, 6),
            alpha in prop::collection::vec(-1.0..1.0f64, 3),
        ) {
            prop_assume!(alpha.iter().all(|a| a.abs() > 0.01));
            let rows = transition.iter().zip(&physical).map(|(x, y)| vec![1.0, *x, *y]).collect();
            let zeta = MacroTrajectory::new(rows).unwrap();
            let alpha = MicroAdjustments::uniform(1, 4, 6, &alpha);
            let c = corr();
            let t2 = loadings_t2(&zeta, &alpha, &regulatory(), &c, false).unwrap();
            let p = loadings_proposed(&zeta, &alpha, &regulatory(), &c, false).unwrap();
            for i in 0..4 {
                for t in 1..=6 {
                    for j in 0..3 {
                        prop_assert!((t2.loading(0, i, t)[j] - p.loading(0, i, t)[j]).abs() < 1e-12);
                    }
                    let r = c.quad(p.loading(0, i, t));
                    prop_assert!((r - p.correlation(0, i, t)).abs() < 1e-12);
                    prop_assert!((0.0..1.0).contains(&p.correlation(0, i, t)));
                }
            }
        }
    }
}
