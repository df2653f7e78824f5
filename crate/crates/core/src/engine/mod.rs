//! Expected and conditional portfolio losses, Monte Carlo simulation and the
//! risk measures derived from it.
//!
//! Losses are computed in the granular limit. For a factor trajectory
//! `Z_1..Z_T`, the loss of period `t` is
//!
//! ```text
//! L_t(Z) = sum_{g,i} EAD[g,i,t] sum_{j<K} (M_1(Z_1) ... M_{t-1}(Z_{t-1}))[i,j] M_t(Z_t)[j,K] LGD[g,j,t](Z_t)
//! ```
//!
//! and the expected loss is the same expression with unconditional matrices
//! and mean LGDs.

mod closed_form;
mod quantile;
mod report;
mod reverse;
mod simulate;

pub use closed_form::closed_form_simple_case;
pub use quantile::{capital_charge, empirical_quantile, stressed_quantile, QuantileScope};
pub use report::{Premium, QuantileReport, RiskReport};
pub use reverse::{reverse_stress, ReverseStress};
pub use simulate::{simulate, SimulationConfig, SimulationResult};

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::factors::{CorrelationMatrix, LoadingSchedule};
use crate::migration::{conditional_row, RenewalPolicy};
use crate::normal;
use crate::portfolio::{AggregatedExposure, Portfolio};
use crate::recovery::{expected_lgd, RecoveryParams};

/// Recovery parameters for every (group, rating, period) cell, periods `1..=T`.
#[derive(Debug, Clone, Serialize)]
pub struct RecoveryTable {
    groups: usize,
    ratings: usize,
    horizon: usize,
    params: Vec<RecoveryParams>,
}

impl RecoveryTable {
    /// `params[(g * K + i) * T + t - 1]`.
    pub fn new(groups: usize, ratings: usize, horizon: usize, params: Vec<RecoveryParams>) -> Result<Self> {
        if params.len() != groups * ratings * horizon {
            return Err(Error::Dimension(format!(
                "{} recovery cells for {groups} groups, {ratings} ratings and {horizon} periods",
                params.len()
            )));
        }
        Ok(RecoveryTable { groups, ratings, horizon, params })
    }

    pub fn uniform(groups: usize, ratings: usize, horizon: usize, params: RecoveryParams) -> Self {
        RecoveryTable {
            groups,
            ratings,
            horizon,
            params: vec![params; groups * ratings * horizon],
        }
    }

    pub fn get(&self, g: usize, i: usize, t: usize) -> &RecoveryParams {
        &self.params[(g * self.ratings + i) * self.horizon + t - 1]
    }
}

/// Mean loss given default per (group, rating, period).
#[derive(Debug, Clone, Serialize)]
pub struct LgdTable {
    ratings: usize,
    horizon: usize,
    values: Vec<f64>,
}

impl LgdTable {
    pub fn get(&self, g: usize, i: usize, t: usize) -> f64 {
        self.values[(g * self.ratings + i) * self.horizon + t - 1]
    }
}

/// Mean LGDs implied by the schedule's migration matrices and loadings.
/// Cells with zero default probability get zero (they carry no loss).
pub fn expected_lgd_table(
    schedule: &LoadingSchedule,
    recovery: &RecoveryTable,
    corr: &CorrelationMatrix,
) -> Result<LgdTable> {
    let (groups, ratings, horizon) = (schedule.groups(), schedule.ratings(), schedule.horizon());
    if (recovery.groups, recovery.ratings, recovery.horizon) != (groups, ratings, horizon) {
        return Err(Error::Dimension("recovery table does not match the loading schedule".into()));
    }
    let mut values = Vec::with_capacity(groups * ratings * horizon);
    for g in 0..groups {
        for i in 0..ratings {
            for t in 1..=horizon {
                let pd = schedule.matrix(g, t).default_probability(i);
                if i == ratings - 1 || pd == 0.0 {
                    values.push(0.0);
                    continue;
                }
                let p = recovery.get(g, i, t);
                p.validate(corr)?;
                let z = schedule.thresholds(g, t).default_threshold(i);
                values.push(expected_lgd(p, schedule.loading(g, i, t), corr, z, pd)?);
            }
        }
    }
    Ok(LgdTable { ratings, horizon, values })
}

/// How loans are partitioned for loss attribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SubPortfolioKey {
    GroupRating,
    Tag,
}

impl std::str::FromStr for SubPortfolioKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "group_rating" => Ok(SubPortfolioKey::GroupRating),
            "tag" => Ok(SubPortfolioKey::Tag),
            other => Err(Error::Invalid(format!("unknown sub-portfolio key {other:?} (expected group_rating or tag)"))),
        }
    }
}

/// Exposure of one sub-portfolio within one (group, initial rating) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExposureCell {
    pub sub: usize,
    pub group: usize,
    pub rating: usize,
    /// EAD at periods `0..=T`.
    pub ead: Vec<f64>,
}

/// A partition of the portfolio into sub-portfolios with principals `K_p`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubPortfolios {
    pub labels: Vec<String>,
    pub principals: Vec<f64>,
    pub cells: Vec<ExposureCell>,
}

impl SubPortfolios {
    /// Partitions by (group, initial rating) or by loan tag. Rating labels are
    /// used to name the cells; tags are ordered lexicographically.
    pub fn from_portfolio(portfolio: &Portfolio, key: SubPortfolioKey, rating_labels: &[String]) -> Result<Self> {
        let horizon = portfolio.horizon();
        let mut index: BTreeMap<(String, usize, usize), Vec<f64>> = BTreeMap::new();
        let mut principal: BTreeMap<String, f64> = BTreeMap::new();
        let mut order: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for loan in portfolio.loans() {
            let (g, i) = (loan.group, loan.initial_rating.index());
            let name = match key {
                SubPortfolioKey::GroupRating => {
                    let label = rating_labels.get(i).cloned().unwrap_or_else(|| (i + 1).to_string());
                    format!("{}/{}", portfolio.groups()[g], label)
                }
                SubPortfolioKey::Tag => loan
                    .tag
                    .clone()
                    .filter(|t| !t.is_empty())
                    .ok_or_else(|| Error::Invalid(format!("loan {} has no tag", loan.id)))?,
            };
            order.entry(name.clone()).or_insert((g, i));
            *principal.entry(name.clone()).or_insert(0.0) += loan.profile.principal();
            let ead = index.entry((name, g, i)).or_insert_with(|| vec![0.0; horizon + 1]);
            for (t, e) in ead.iter_mut().enumerate() {
                *e += loan.profile.ead(t);
            }
        }
        // Group/rating cells are listed in (group, rating) order, tags alphabetically.
        let mut labels: Vec<String> = principal.keys().cloned().collect();
        if key == SubPortfolioKey::GroupRating {
            labels.sort_by_key(|l| order[l]);
        }
        let position: BTreeMap<&str, usize> = labels.iter().enumerate().map(|(p, l)| (l.as_str(), p)).collect();
        let mut cells: Vec<ExposureCell> = index
            .into_iter()
            .map(|((name, group, rating), ead)| ExposureCell {
                sub: position[name.as_str()],
                group,
                rating,
                ead,
            })
            .collect();
        cells.sort_by_key(|c| (c.sub, c.group, c.rating));
        let principals = labels.iter().map(|l| principal[l]).collect();
        Ok(SubPortfolios { labels, principals, cells })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Cell exposures summed over sub-portfolios.
    pub fn aggregated(&self, groups: usize, ratings: usize, horizon: usize) -> AggregatedExposure {
        let mut out = AggregatedExposure::zeros(groups, ratings, horizon);
        for c in &self.cells {
            for (t, e) in c.ead.iter().enumerate().take(horizon + 1) {
                out.add(c.group, c.rating, t, *e);
            }
        }
        out
    }
}

/// Loss per period and per sub-portfolio.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossBreakdown {
    /// `L_t` for `t = 1..=T`.
    pub per_period: Vec<f64>,
    pub total: f64,
    /// `per_subportfolio[p][t - 1]`.
    pub per_subportfolio: Vec<Vec<f64>>,
}

impl LossBreakdown {
    fn from_sub(per_subportfolio: Vec<Vec<f64>>, horizon: usize) -> Self {
        let mut per_period = vec![0.0; horizon];
        for row in &per_subportfolio {
            for (acc, v) in per_period.iter_mut().zip(row) {
                *acc += v;
            }
        }
        let total = per_period.iter().sum();
        LossBreakdown { per_period, total, per_subportfolio }
    }
}

/// Per-cell constants of the conditional loss kernel.
#[derive(Debug, Clone)]
struct CellKernel {
    loading: Vec<f64>,
    inv_idio: f64,
    lgd: LgdKernel,
}

#[derive(Debug, Clone)]
enum LgdKernel {
    Constant(f64),
    /// `1 - Phi(offset + slope . Z)`
    Linear { offset: f64, slope: Vec<f64> },
}

/// A fully specified portfolio model ready for loss evaluation.
#[derive(Debug, Clone)]
pub struct Model {
    corr: CorrelationMatrix,
    schedule: LoadingSchedule,
    renewal: Vec<Option<RenewalPolicy>>,
    subs: SubPortfolios,
    lgd_e: LgdTable,
    cells: Vec<CellKernel>,
    active_groups: Vec<usize>,
}

impl Model {
    pub fn new(
        corr: CorrelationMatrix,
        schedule: LoadingSchedule,
        recovery: &RecoveryTable,
        renewal: Vec<Option<RenewalPolicy>>,
        subs: SubPortfolios,
    ) -> Result<Self> {
        let (groups, ratings, horizon) = (schedule.groups(), schedule.ratings(), schedule.horizon());
        if corr.dim() != schedule.dim() {
            return Err(Error::Dimension("correlation matrix does not match loading dimension".into()));
        }
        if renewal.len() != groups {
            return Err(Error::Dimension(format!("{} renewal entries for {groups} groups", renewal.len())));
        }
        for policy in renewal.iter().flatten() {
            if policy.profile().len() != ratings {
                return Err(Error::Dimension("renewal profile does not match the number of ratings".into()));
            }
        }
        if subs.is_empty() {
            return Err(Error::Invalid("portfolio has no exposure to simulate".into()));
        }
        for c in &subs.cells {
            if c.group >= groups || c.rating >= ratings - 1 || c.sub >= subs.len() || c.ead.len() != horizon + 1 {
                return Err(Error::Dimension("sub-portfolio cell does not match the schedule".into()));
            }
        }
        let lgd_e = expected_lgd_table(&schedule, recovery, &corr)?;
        let mut cells = Vec::with_capacity(groups * ratings * horizon);
        for g in 0..groups {
            for i in 0..ratings {
                for t in 1..=horizon {
                    let loading = schedule.loading(g, i, t).to_vec();
                    let inv_idio = 1.0 / (1.0 - schedule.correlation(g, i, t)).sqrt();
                    let p = recovery.get(g, i, t);
                    let lgd = if p.sigma == 0.0 || p.b.iter().all(|b| *b == 0.0) {
                        LgdKernel::Constant(lgd_without_factors(p))
                    } else {
                        let bcb = corr.quad(&p.b).clamp(0.0, 1.0);
                        let den = (1.0 + p.sigma * p.sigma * (1.0 - bcb)).sqrt();
                        LgdKernel::Linear {
                            offset: p.mu / den,
                            slope: p.b.iter().map(|b| p.sigma * b / den).collect(),
                        }
                    };
                    cells.push(CellKernel { loading, inv_idio, lgd });
                }
            }
        }
        let mut active_groups: Vec<usize> = subs.cells.iter().map(|c| c.group).collect();
        active_groups.sort_unstable();
        active_groups.dedup();
        Ok(Model {
            corr,
            schedule,
            renewal,
            subs,
            lgd_e,
            cells,
            active_groups,
        })
    }

    pub fn corr(&self) -> &CorrelationMatrix {
        &self.corr
    }

    pub fn schedule(&self) -> &LoadingSchedule {
        &self.schedule
    }

    pub fn subportfolios(&self) -> &SubPortfolios {
        &self.subs
    }

    pub fn expected_lgd(&self) -> &LgdTable {
        &self.lgd_e
    }

    pub fn horizon(&self) -> usize {
        self.schedule.horizon()
    }

    pub fn dim(&self) -> usize {
        self.schedule.dim()
    }

    fn ratings(&self) -> usize {
        self.schedule.ratings()
    }

    fn unit_index(&self, g: usize, i: usize, t: usize) -> usize {
        (g * self.ratings() + i) * self.horizon() + t - 1
    }

    /// Expected loss per period and sub-portfolio.
    pub fn expected_loss(&self) -> LossBreakdown {
        let k = self.ratings();
        let horizon = self.horizon();
        let mut unit = vec![0.0; self.schedule.groups() * k * horizon];
        let mut ws = Workspace::new(k);
        for &g in &self.active_groups {
            ws.reset();
            for t in 1..=horizon {
                ws.step.copy_from_slice(self.schedule.matrix(g, t).entries());
                if let Some(policy) = &self.renewal[g] {
                    for row in ws.step.chunks_mut(k) {
                        policy.mix_row(row);
                    }
                }
                for j in 0..k - 1 {
                    ws.lgd[j] = self.lgd_e.get(g, j, t);
                }
                self.accumulate_period(g, t, &mut ws, &mut unit);
            }
        }
        self.contract(&unit)
    }

    /// Loss along one factor trajectory `factors` (length `T * d`, period-major).
    pub fn conditional_loss(&self, factors: &[f64]) -> Result<LossBreakdown> {
        if factors.len() != self.horizon() * self.dim() {
            return Err(Error::Dimension(format!(
                "trajectory has {} values, expected {} periods of {} factors",
                factors.len(),
                self.horizon(),
                self.dim()
            )));
        }
        let mut ws = Workspace::new(self.ratings());
        let mut unit = vec![0.0; self.unit_len()];
        self.conditional_units(factors, &mut ws, &mut unit);
        Ok(self.contract(&unit))
    }

    fn unit_len(&self) -> usize {
        self.schedule.groups() * self.ratings() * self.horizon()
    }

    /// Fills `unit[g, i, t]`: loss per unit of exposure of rating-`i` loans of
    /// group `g` in period `t`, given the trajectory.
    fn conditional_units(&self, factors: &[f64], ws: &mut Workspace, unit: &mut [f64]) {
        let k = self.ratings();
        let d = self.dim();
        for &g in &self.active_groups {
            ws.reset();
            for t in 1..=self.horizon() {
                let z = &factors[(t - 1) * d..t * d];
                let thresholds = self.schedule.thresholds(g, t);
                for i in 0..k {
                    let row = &mut ws.step[i * k..(i + 1) * k];
                    if i == k - 1 {
                        row.iter_mut().for_each(|v| *v = 0.0);
                        row[k - 1] = 1.0;
                    } else {
                        let cell = &self.cells[self.unit_index(g, i, t)];
                        let shift: f64 = cell.loading.iter().zip(z).map(|(a, f)| a * f).sum();
                        conditional_row(thresholds.row(i), shift, 1.0 / cell.inv_idio, row, &mut ws.tails);
                        ws.lgd[i] = match &cell.lgd {
                            LgdKernel::Constant(v) => *v,
                            LgdKernel::Linear { offset, slope } => {
                                let s: f64 = slope.iter().zip(z).map(|(b, f)| b * f).sum();
                                1.0 - normal::cdf(offset + s)
                            }
                        };
                    }
                    if let Some(policy) = &self.renewal[g] {
                        policy.mix_row(&mut ws.step[i * k..(i + 1) * k]);
                    }
                }
                self.accumulate_period(g, t, ws, unit);
            }
        }
    }

    /// Given the period-`t` matrix in `ws.step` and LGDs in `ws.lgd`, writes the
    /// unit losses of period `t` and advances the path product.
    fn accumulate_period(&self, g: usize, t: usize, ws: &mut Workspace, unit: &mut [f64]) {
        let k = self.ratings();
        for j in 0..k - 1 {
            ws.weight[j] = ws.step[j * k + k - 1] * ws.lgd[j];
        }
        for i in 0..k - 1 {
            let row = &ws.prod[i * k..(i + 1) * k];
            let mut u = 0.0;
            for j in 0..k - 1 {
                u += row[j] * ws.weight[j];
            }
            unit[self.unit_index(g, i, t)] = u;
        }
        if t < self.horizon() {
            crate::migration::mat_mul(&ws.prod, &ws.step, &mut ws.next, k);
            std::mem::swap(&mut ws.prod, &mut ws.next);
        }
    }

    fn contract(&self, unit: &[f64]) -> LossBreakdown {
        let horizon = self.horizon();
        let mut per_sub = vec![vec![0.0; horizon]; self.subs.len()];
        for c in &self.subs.cells {
            let row = &mut per_sub[c.sub];
            for t in 1..=horizon {
                row[t - 1] += c.ead[t] * unit[self.unit_index(c.group, c.rating, t)];
            }
        }
        LossBreakdown::from_sub(per_sub, horizon)
    }

    /// Per-path evaluation into flat output slices: per-period losses (`T`)
    /// and sub-portfolio totals over all periods (`P`). Returns the total.
    pub(crate) fn evaluate_into(
        &self,
        factors: &[f64],
        ws: &mut Workspace,
        unit: &mut [f64],
        per_period: &mut [f64],
        per_sub: &mut [f64],
    ) -> f64 {
        self.conditional_units(factors, ws, unit);
        let horizon = self.horizon();
        per_period.iter_mut().for_each(|v| *v = 0.0);
        per_sub.iter_mut().for_each(|v| *v = 0.0);
        ws.sub_period.iter_mut().for_each(|v| *v = 0.0);
        ws.sub_period.resize(self.subs.len() * horizon, 0.0);
        for c in &self.subs.cells {
            for t in 1..=horizon {
                ws.sub_period[c.sub * horizon + t - 1] += c.ead[t] * unit[self.unit_index(c.group, c.rating, t)];
            }
        }
        // Same summation order as `LossBreakdown::from_sub`.
        for (p, row) in ws.sub_period.chunks(horizon).enumerate() {
            for (acc, v) in per_period.iter_mut().zip(row) {
                *acc += v;
            }
            per_sub[p] = row.iter().sum();
        }
        per_period.iter().sum()
    }

    pub(crate) fn workspace(&self) -> (Workspace, Vec<f64>) {
        (Workspace::new(self.ratings()), vec![0.0; self.unit_len()])
    }
}

fn lgd_without_factors(p: &RecoveryParams) -> f64 {
    if p.sigma == 0.0 {
        1.0 - normal::cdf(p.mu)
    } else {
        1.0 - normal::cdf(p.mu / (1.0 + p.sigma * p.sigma).sqrt())
    }
}

pub(crate) struct Workspace {
    prod: Vec<f64>,
    next: Vec<f64>,
    step: Vec<f64>,
    tails: Vec<f64>,
    lgd: Vec<f64>,
    weight: Vec<f64>,
    sub_period: Vec<f64>,
    k: usize,
}

impl Workspace {
    fn new(k: usize) -> Self {
        Workspace {
            prod: vec![0.0; k * k],
            next: vec![0.0; k * k],
            step: vec![0.0; k * k],
            tails: vec![0.0; k],
            lgd: vec![0.0; k],
            weight: vec![0.0; k],
            sub_period: Vec::new(),
            k,
        }
    }

    fn reset(&mut self) {
        let k = self.k;
        self.prod.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..k {
            self.prod[i * k + i] = 1.0;
        }
    }
}

/// Expected loss `(L^e, L^e_t)` of an aggregated book.
pub fn expected_loss(
    exposure: &AggregatedExposure,
    schedule: &LoadingSchedule,
    lgd_e: &LgdTable,
    renewal: &[Option<RenewalPolicy>],
) -> Result<(f64, Vec<f64>)> {
    let (groups, k, horizon) = (schedule.groups(), schedule.ratings(), schedule.horizon());
    if exposure.groups() != groups || exposure.ratings() != k || exposure.horizon() != horizon {
        return Err(Error::Dimension("exposure tensor does not match the loading schedule".into()));
    }
    if renewal.len() != groups || lgd_e.ratings != k || lgd_e.horizon != horizon {
        return Err(Error::Dimension("renewal or LGD table does not match the loading schedule".into()));
    }
    let mut per_period = vec![0.0; horizon];
    let mut ws = Workspace::new(k);
    for (g, policy) in renewal.iter().enumerate() {
        ws.reset();
        for t in 1..=horizon {
            ws.step.copy_from_slice(schedule.matrix(g, t).entries());
            if let Some(policy) = policy {
                for row in ws.step.chunks_mut(k) {
                    policy.mix_row(row);
                }
            }
            for i in 0..k - 1 {
                let row = &ws.prod[i * k..(i + 1) * k];
                let mut u = 0.0;
                for j in 0..k - 1 {
                    u += row[j] * ws.step[j * k + k - 1] * lgd_e.get(g, j, t);
                }
                per_period[t - 1] += exposure.get(g, i, t) * u;
            }
            crate::migration::mat_mul(&ws.prod, &ws.step, &mut ws.next, k);
            std::mem::swap(&mut ws.prod, &mut ws.next);
        }
    }
    Ok((per_period.iter().sum(), per_period))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::factors::{loadings_proposed, Approach, MacroTrajectory, MicroAdjustments};
    use crate::migration::MigrationMatrix;
    use crate::portfolio::{ExposureProfile, Loan, Rating};

    pub(crate) fn matrix3() -> MigrationMatrix {
        MigrationMatrix::new(
            3,
            vec![
                0.85, 0.10, 0.05, //
                0.10, 0.75, 0.15, //
                0.0, 0.0, 1.0,
            ],
        )
        .unwrap()
    }

    pub(crate) fn book(horizon: usize) -> Portfolio {
        let loans = vec![
            Loan {
                id: "a".into(),
                group: 0,
                initial_rating: Rating(0),
                tag: Some("x".into()),
                profile: ExposureProfile::Amortizing { principal: 100.0, maturity: 5, rate: 0.03 },
            },
            Loan {
                id: "b".into(),
                group: 0,
                initial_rating: Rating(1),
                tag: Some("y".into()),
                profile: ExposureProfile::Explicit { values: vec![50.0, 50.0, 40.0, 30.0] },
            },
            Loan {
                id: "c".into(),
                group: 1,
                initial_rating: Rating(1),
                tag: Some("x".into()),
                profile: ExposureProfile::Explicit { values: vec![80.0; 4] },
            },
        ];
        Portfolio::new(loans, horizon, vec!["G1".into(), "G2".into()], 3).unwrap()
    }

    fn schedule_zero(horizon: usize, dim: usize) -> (CorrelationMatrix, LoadingSchedule) {
        let c = CorrelationMatrix::identity(dim);
        let m = vec![vec![matrix3(); horizon]; 2];
        let s = LoadingSchedule::new(Approach::T1, &c, m, vec![0.0; 2 * 3 * horizon * dim]).unwrap();
        (c, s)
    }

    fn stochastic_recovery(dim: usize) -> RecoveryTable {
        let p = RecoveryParams::new(0.2, 0.6, vec![0.0; dim]).unwrap();
        RecoveryTable::uniform(2, 3, 3, p)
    }

    pub(crate) fn proposed_model(renewal: Vec<Option<RenewalPolicy>>) -> Model {
        let zeta = MacroTrajectory::new(vec![vec![1.0, 0.5], vec![1.0, 0.8], vec![1.0, 1.2]]).unwrap();
        let alpha = MicroAdjustments::uniform(2, 3, 3, &[0.7, 0.5]);
        let c = CorrelationMatrix::new(2, vec![1.0, -0.2, -0.2, 1.0]).unwrap();
        let s = loadings_proposed(&zeta, &alpha, &[matrix3(), matrix3()], &c, false).unwrap();
        let mut params = Vec::new();
        for g in 0..2 {
            for i in 0..3 {
                for t in 1..=3 {
                    let lambda = 0.5 + 0.1 * (g + i) as f64;
                    params.push(RecoveryParams::proportional(0.1 * t as f64, 0.7, lambda, s.loading(g, i, t)).unwrap());
                }
            }
        }
        let recovery = RecoveryTable::new(2, 3, 3, params).unwrap();
        let subs = SubPortfolios::from_portfolio(&book(3), SubPortfolioKey::GroupRating, &[]).unwrap();
        Model::new(c, s, &recovery, renewal, subs).unwrap()
    }

    #[test]
    fn single_period_deterministic_recovery() {
        let c = CorrelationMatrix::identity(1);
        let s = LoadingSchedule::new(Approach::T1, &c, vec![vec![matrix3()]; 2], vec![0.0; 6]).unwrap();
        let rec = RecoveryTable::uniform(2, 3, 1, RecoveryParams::deterministic(0.4, 1).unwrap());
        let subs = SubPortfolios::from_portfolio(&book(1), SubPortfolioKey::GroupRating, &[]).unwrap();
        let m = Model::new(c, s, &rec, vec![None, None], subs).unwrap();
        let e = m.expected_loss();
        let ead_a = crate::portfolio::ead_amortizing(100.0, 5, 0.03, 1).unwrap();
        let want = 0.05 * 0.6 * ead_a + 0.15 * 0.6 * 50.0 + 0.15 * 0.6 * 80.0;
        assert!((e.total - want).abs() < 1e-12, "{} vs {want}", e.total);
    }

    #[test]
    fn path_enumeration_oracle() {
        let m = proposed_model(vec![None, None]);
        let e = m.expected_loss();
        let s = m.schedule();
        let book = book(3);
        let agg = crate::portfolio::aggregate_ead(&book);
        let lgd = m.expected_lgd();
        let mut want = [0.0; 3];
        for g in 0..2 {
            for i in 0..2 {
                // Enumerate every rating path i -> r1 -> ... -> default at t.
                for t in 1..=3usize {
                    let mut total = 0.0;
                    let paths = 3usize.pow(t as u32 - 1);
                    for code in 0..paths {
                        let mut r = i;
                        let mut c = code;
                        let mut prob = 1.0;
                        for step in 1..t {
                            let next = c % 3;
                            c /= 3;
                            prob *= s.matrix(g, step).get(r, next);
                            r = next;
                        }
                        if r == 2 {
                            continue;
                        }
                        total += prob * s.matrix(g, t).get(r, 2) * lgd.get(g, r, t);
                    }
                    want[t - 1] += agg.get(g, i, t) * total;
                }
            }
        }
        for t in 0..3 {
            assert!((e.per_period[t] - want[t]).abs() < 1e-12 * want[t].max(1.0));
        }
        let (total, per_period) = expected_loss(&agg, s, lgd, &[None, None]).unwrap();
        assert!((total - e.total).abs() < 1e-12 * e.total);
        assert_eq!(per_period.len(), 3);
    }

    #[test]
    fn zero_loadings_make_losses_deterministic() {
        let (c, s) = schedule_zero(3, 2);
        let subs = SubPortfolios::from_portfolio(&book(3), SubPortfolioKey::GroupRating, &[]).unwrap();
        let m = Model::new(c, s, &stochastic_recovery(2), vec![None, None], subs).unwrap();
        let e = m.expected_loss();
        for z in [[0.0; 6], [2.0, -1.0, 0.3, 0.8, -3.0, 1.5]] {
            let l = m.conditional_loss(&z).unwrap();
            for t in 0..3 {
                assert!((l.per_period[t] - e.per_period[t]).abs() < 1e-12 * e.per_period[t]);
            }
        }
    }

    #[test]
    fn breakdown_is_additive() {
        let m = proposed_model(vec![None, None]);
        let l = m.conditional_loss(&[0.3, -1.2, -0.5, 0.1, 1.1, -2.0]).unwrap();
        let sum: f64 = l.per_period.iter().sum();
        assert!((sum - l.total).abs() <= 1e-12 * l.total);
        for t in 0..3 {
            let s: f64 = l.per_subportfolio.iter().map(|r| r[t]).sum();
            assert!((s - l.per_period[t]).abs() <= 1e-12 * l.per_period[t]);
        }
        assert!(l.per_subportfolio.iter().flatten().all(|v| *v >= 0.0));
    }

    #[test]
    fn origin_trajectory_regression() {
        // Direct evaluation of the single-period conditional loss at Z = 0 with
        // one factor loading 0.4 and fixed recovery 40%.
        let c = CorrelationMatrix::identity(1);
        let s = LoadingSchedule::new(Approach::T1, &c, vec![vec![matrix3()]; 2], {
            let mut a = vec![0.4; 6];
            a[2] = 0.0;
            a[5] = 0.0;
            a
        })
        .unwrap();
        let rec = RecoveryTable::uniform(2, 3, 1, RecoveryParams::deterministic(0.4, 1).unwrap());
        let subs = SubPortfolios::from_portfolio(&book(1), SubPortfolioKey::GroupRating, &[]).unwrap();
        let m = Model::new(c, s, &rec, vec![None, None], subs).unwrap();
        let l = m.conditional_loss(&[0.0]).unwrap();
        let scale = (1.0f64 - 0.16).sqrt();
        let pd = |p: f64| normal::cdf(normal::quantile(p) / scale);
        let ead_a = crate::portfolio::ead_amortizing(100.0, 5, 0.03, 1).unwrap();
        let want = 0.6 * (pd(0.05) * ead_a + pd(0.15) * 130.0);
        assert!((l.total - want).abs() < 1e-12 * want);
    }

    #[test]
    fn renewal_changes_later_periods_only() {
        let plain = proposed_model(vec![None, None]);
        let policy = RenewalPolicy::new(0.4, vec![0.7, 0.3, 0.0]).unwrap();
        let renewed = proposed_model(vec![Some(policy.clone()), Some(policy)]);
        let a = plain.expected_loss();
        let b = renewed.expected_loss();
        assert!((b.per_period[0] - 0.6 * a.per_period[0]).abs() < 1e-12 * a.per_period[0]);
        assert!(b.per_period[2] != a.per_period[2]);
    }

    #[test]
    fn tag_partition() {
        let subs = SubPortfolios::from_portfolio(&book(3), SubPortfolioKey::Tag, &[]).unwrap();
        assert_eq!(subs.labels, vec!["x", "y"]);
        assert_eq!(subs.principals, vec![180.0, 50.0]);
        assert_eq!(subs.cells.len(), 3);
        let by_cell = SubPortfolios::from_portfolio(&book(3), SubPortfolioKey::GroupRating, &["AA".into(), "B".into(), "D".into()]).unwrap();
        assert_eq!(by_cell.labels, vec!["G1/AA", "G1/B", "G2/B"]);
    }
}
