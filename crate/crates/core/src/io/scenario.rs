use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{rating_index, MigrationTable};
use crate::engine::RecoveryTable;
use crate::error::{Error, Result};
use crate::factors::{build_block_correlation, Approach, CorrelationMatrix, FactorModel, LoadingSchedule, MacroTrajectory, MicroAdjustments};
use crate::migration::RenewalPolicy;
use crate::recovery::{calibrate_recovery, RecoveryParams, RecoveryTargets};

/// A group, rating or period: `"*"` for all, a name, or a one-based number.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Selector {
    Number(u64),
    Name(String),
}

impl Default for Selector {
    fn default() -> Self {
        Selector::Name("*".into())
    }
}

impl Selector {
    fn is_any(&self) -> bool {
        matches!(self, Selector::Name(s) if s == "*")
    }

    fn text(&self) -> String {
        match self {
            Selector::Number(n) => n.to_string(),
            Selector::Name(s) => s.clone(),
        }
    }

    fn group(&self, groups: &[String]) -> Result<Option<usize>> {
        if self.is_any() {
            return Ok(None);
        }
        let s = self.text();
        groups
            .iter()
            .position(|g| *g == s)
            .map(Some)
            .ok_or_else(|| Error::Invalid(format!("scenario: unknown group `{s}`")))
    }

    fn rating(&self, labels: &[String]) -> Result<Option<usize>> {
        if self.is_any() {
            return Ok(None);
        }
        let s = self.text();
        rating_index(&s, labels)
            .map(Some)
            .ok_or_else(|| Error::Invalid(format!("scenario: unknown rating `{s}`")))
    }

    fn period(&self, horizon: usize) -> Result<Option<usize>> {
        match self {
            s if s.is_any() => Ok(None),
            Selector::Number(n) if (1..=horizon as u64).contains(n) => Ok(Some(*n as usize)),
            other => Err(Error::Invalid(format!("scenario: period `{}` outside 1..={horizon}", other.text()))),
        }
    }
}

/// A resolved (group, rating, period) pattern; `None` matches everything.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct Pattern {
    group: Option<usize>,
    rating: Option<usize>,
    time: Option<usize>,
}

impl Pattern {
    fn resolve(group: &Selector, rating: &Selector, time: &Selector, ctx: &Context) -> Result<Self> {
        Ok(Pattern {
            group: group.group(ctx.groups)?,
            rating: rating.rating(ctx.ratings)?,
            time: time.period(ctx.horizon)?,
        })
    }

    /// Specific groups outrank specific ratings, which outrank specific periods.
    fn priority(&self) -> u8 {
        4 * self.group.is_some() as u8 + 2 * self.rating.is_some() as u8 + self.time.is_some() as u8
    }

    fn matches(&self, g: usize, i: usize, t: usize) -> bool {
        self.group.is_none_or(|v| v == g) && self.rating.is_none_or(|v| v == i) && self.time.is_none_or(|v| v == t)
    }
}

struct Context<'a> {
    groups: &'a [String],
    ratings: &'a [String],
    horizon: usize,
}

/// Index of the most specific entry matching `(g, i, t)`.
fn best_match(patterns: &[Pattern], g: usize, i: usize, t: usize) -> Option<usize> {
    patterns
        .iter()
        .enumerate()
        .filter(|(_, p)| p.matches(g, i, t))
        .max_by_key(|(k, p)| (p.priority(), std::cmp::Reverse(*k)))
        .map(|(k, _)| k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationSpec {
    Matrix(Vec<Vec<f64>>),
    Block { rho: f64, rho_o: f64, regions: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineGroup {
    pub group: String,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineMigration {
    pub ratings: Vec<String>,
    pub groups: Vec<InlineGroup>,
}

/// Migration matrices given as a path (relative to the scenario file) or inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MigrationSource {
    Path(String),
    Inline(InlineMigration),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaEntry {
    #[serde(default)]
    pub group: Selector,
    #[serde(default)]
    pub rating: Selector,
    #[serde(default)]
    pub time: Selector,
    pub factor: String,
    pub value: f64,
}

/// Recovery model of the matching cells, in one of four forms: a fixed rate
/// `rr`; `mu`, `sigma` with either `lambda` (loadings proportional to the
/// asset loadings) or explicit loadings `b`; or moment targets to calibrate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoveryEntry {
    #[serde(default)]
    pub group: Selector,
    #[serde(default)]
    pub rating: Selector,
    #[serde(default)]
    pub time: Selector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<RecoveryTargets>,
}

enum RecoveryForm<'a> {
    Fixed(f64),
    Proportional { mu: f64, sigma: f64, lambda: f64 },
    Explicit { mu: f64, sigma: f64, b: &'a [f64] },
    Target(&'a RecoveryTargets),
}

impl RecoveryEntry {
    fn form(&self) -> Result<RecoveryForm<'_>> {
        let bad = || {
            Error::Invalid(format!(
                "recovery entry for group {}, rating {}, period {}: give exactly one of rr; mu and sigma with lambda or b; target",
                self.group.text(),
                self.rating.text(),
                self.time.text()
            ))
        };
        match (self.rr, self.mu, self.sigma, self.lambda, &self.b, &self.target) {
            (Some(rr), None, None, None, None, None) => Ok(RecoveryForm::Fixed(rr)),
            (None, Some(mu), Some(sigma), lambda, None, None) => Ok(RecoveryForm::Proportional {
                mu,
                sigma,
                lambda: lambda.unwrap_or(0.0),
            }),
            (None, Some(mu), Some(sigma), None, Some(b), None) => Ok(RecoveryForm::Explicit { mu, sigma, b }),
            (None, None, None, None, None, Some(t)) => Ok(RecoveryForm::Target(t)),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenewalEntry {
    #[serde(default)]
    pub group: Selector,
    pub kappa: f64,
    pub profile: Vec<f64>,
}

/// Scenario file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub horizon: usize,
    /// Factor labels; generated for block correlations when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factors: Option<Vec<String>>,
    pub correlation: CorrelationSpec,
    /// Intensity of each factor per period, `horizon` rows.
    pub zeta: Vec<Vec<f64>>,
    /// Relative exposures; cells without a matching entry use 1.
    #[serde(default)]
    pub alpha: Vec<AlphaEntry>,
    pub migration: MigrationSource,
    pub recovery: Vec<RecoveryEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub approach: Option<Approach>,
    #[serde(default)]
    pub basel3: bool,
    #[serde(default)]
    pub renewal: Vec<RenewalEntry>,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| Error::Parse(format!("scenario: {e}")))?;
        if s.horizon == 0 {
            return Err(Error::Invalid("scenario: horizon must be at least one period".into()));
        }
        if s.zeta.len() != s.horizon {
            return Err(Error::Dimension(format!(
                "scenario: {} intensity rows for a horizon of {}",
                s.zeta.len(),
                s.horizon
            )));
        }
        Ok(s)
    }

    pub fn factor_model(&self) -> Result<FactorModel> {
        match &self.correlation {
            CorrelationSpec::Matrix(rows) => {
                let labels = self
                    .factors
                    .clone()
                    .ok_or_else(|| Error::Invalid("scenario: factor labels are required with an explicit matrix".into()))?;
                FactorModel::new(labels, CorrelationMatrix::from_rows(rows)?)
            }
            CorrelationSpec::Block { rho, rho_o, regions } => {
                // Checked first so that the matrix size is bounded by the input.
                if regions.checked_add(2) != Some(self.zeta[0].len()) {
                    return Err(Error::Dimension(format!(
                        "scenario: block correlation with {regions} regions does not match intensity rows of {}",
                        self.zeta[0].len()
                    )));
                }
                let model = build_block_correlation(*rho, *rho_o, *regions)?;
                match &self.factors {
                    Some(labels) if labels.as_slice() != model.labels() => Err(Error::Invalid(format!(
                        "scenario: block correlation defines factors {:?}, file lists {labels:?}",
                        model.labels()
                    ))),
                    _ => Ok(model),
                }
            }
        }
    }

    pub fn macro_trajectory(&self, factors: &FactorModel) -> Result<MacroTrajectory> {
        if self.zeta.iter().any(|r| r.len() != factors.dim()) {
            return Err(Error::Dimension(format!("scenario: intensity rows must have {} entries", factors.dim())));
        }
        MacroTrajectory::new(self.zeta.clone())
    }

    /// Inline migration matrices, if the scenario carries them.
    pub fn inline_migration(&self) -> Option<Result<(MigrationTable, Vec<String>)>> {
        match &self.migration {
            MigrationSource::Path(_) => None,
            MigrationSource::Inline(m) => Some(MigrationTable::from_rows(
                m.ratings.clone(),
                m.groups.iter().map(|g| (g.group.clone(), g.rows.clone())).collect(),
            )),
        }
    }

    pub fn micro_adjustments(&self, factors: &FactorModel, table: &MigrationTable) -> Result<MicroAdjustments> {
        let ctx = Context { groups: &table.groups, ratings: &table.ratings, horizon: self.horizon };
        let dim = factors.dim();
        let mut patterns: Vec<Vec<Pattern>> = vec![Vec::new(); dim];
        let mut values: Vec<Vec<f64>> = vec![Vec::new(); dim];
        let mut seen = HashSet::new();
        for e in &self.alpha {
            let j = factors
                .index_of(&e.factor)
                .ok_or_else(|| Error::Invalid(format!("scenario: alpha entry for unknown factor `{}`", e.factor)))?;
            let p = Pattern::resolve(&e.group, &e.rating, &e.time, &ctx)?;
            if !seen.insert((p, j)) {
                return Err(Error::Invalid(format!(
                    "scenario: two alpha entries for group {}, rating {}, period {}, factor {}",
                    e.group.text(),
                    e.rating.text(),
                    e.time.text(),
                    e.factor
                )));
            }
            if !e.value.is_finite() {
                return Err(Error::Invalid(format!("scenario: alpha value {} is not finite", e.value)));
            }
            patterns[j].push(p);
            values[j].push(e.value);
        }
        let (groups, ratings) = (table.groups.len(), table.ratings.len());
        let mut alpha = MicroAdjustments::zeros(groups, ratings, self.horizon, dim);
        for g in 0..groups {
            for i in 0..ratings {
                for t in 1..=self.horizon {
                    for j in 0..dim {
                        let v = best_match(&patterns[j], g, i, t).map_or(1.0, |k| values[j][k]);
                        alpha.set(g, i, t, j, v)?;
                    }
                }
            }
        }
        Ok(alpha)
    }

    pub fn renewal(&self, table: &MigrationTable) -> Result<Vec<Option<RenewalPolicy>>> {
        let mut out: Vec<Option<RenewalPolicy>> = vec![None; table.groups.len()];
        let mut specific = vec![false; table.groups.len()];
        let mut wildcard_seen = false;
        for e in &self.renewal {
            let policy = RenewalPolicy::new(e.kappa, e.profile.clone())?;
            if policy.profile().len() != table.ratings.len() {
                return Err(Error::Dimension(format!(
                    "scenario: renewal profile has {} weights for {} ratings",
                    policy.profile().len(),
                    table.ratings.len()
                )));
            }
            match e.group.group(&table.groups)? {
                Some(g) => {
                    if std::mem::replace(&mut specific[g], true) {
                        return Err(Error::Invalid(format!("scenario: two renewal entries for group {}", table.groups[g])));
                    }
                    out[g] = Some(policy);
                }
                None => {
                    if std::mem::replace(&mut wildcard_seen, true) {
                        return Err(Error::Invalid("scenario: two renewal entries for all groups".into()));
                    }
                    for (g, slot) in out.iter_mut().enumerate() {
                        if !specific[g] {
                            *slot = Some(policy.clone());
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Recovery parameters of every (group, rating, period) cell. Calibrated
    /// entries use the cell's asset loading and default probability; the
    /// default rating gets a placeholder that is never used.
    pub fn recovery_table(&self, table: &MigrationTable, schedule: &LoadingSchedule, corr: &CorrelationMatrix) -> Result<RecoveryTable> {
        let ctx = Context { groups: &table.groups, ratings: &table.ratings, horizon: self.horizon };
        let mut patterns = Vec::with_capacity(self.recovery.len());
        let mut forms = Vec::with_capacity(self.recovery.len());
        let mut seen = HashSet::new();
        for e in &self.recovery {
            let p = Pattern::resolve(&e.group, &e.rating, &e.time, &ctx)?;
            if !seen.insert(p) {
                return Err(Error::Invalid(format!(
                    "scenario: two recovery entries for group {}, rating {}, period {}",
                    e.group.text(),
                    e.rating.text(),
                    e.time.text()
                )));
            }
            patterns.push(p);
            forms.push(e.form()?);
        }
        let (groups, ratings, horizon, dim) = (schedule.groups(), schedule.ratings(), schedule.horizon(), corr.dim());
        let mut params = Vec::with_capacity(groups * ratings * horizon);
        for g in 0..groups {
            for i in 0..ratings {
                for t in 1..=horizon {
                    if i == ratings - 1 {
                        params.push(RecoveryParams::deterministic(0.0, dim)?);
                        continue;
                    }
                    let cell = || format!("group {}, rating {}, period {t}", table.groups[g], table.ratings[i]);
                    let k = best_match(&patterns, g, i, t)
                        .ok_or_else(|| Error::Invalid(format!("scenario: no recovery parameters for {}", cell())))?;
                    let a = schedule.loading(g, i, t);
                    let p = match forms[k] {
                        RecoveryForm::Fixed(rr) => RecoveryParams::deterministic(rr, dim),
                        RecoveryForm::Proportional { mu, sigma, lambda } => RecoveryParams::proportional(mu, sigma, lambda, a),
                        RecoveryForm::Explicit { mu, sigma, b } => {
                            if b.len() != dim {
                                return Err(Error::Dimension(format!("recovery loadings for {} need {dim} entries", cell())));
                            }
                            RecoveryParams::new(mu, sigma, b.to_vec())
                        }
                        RecoveryForm::Target(targets) => {
                            let pd = schedule.matrix(g, t).default_probability(i);
                            if pd == 0.0 {
                                // No defaults from this cell: only the mean matters.
                                RecoveryParams::deterministic(1.0 - targets.mean_lgd, dim)
                            } else {
                                calibrate_recovery(targets, a, corr, pd)
                            }
                        }
                    }
                    .map_err(|e| match e {
                        Error::Invalid(m) => Error::Invalid(format!("{}: {m}", cell())),
                        Error::NoSolution { reason, residual } => Error::NoSolution { reason: format!("{}: {reason}", cell()), residual },
                        other => other,
                    })?;
                    p.validate(corr)?;
                    params.push(p);
                }
            }
        }
        RecoveryTable::new(groups, ratings, horizon, params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::loadings_proposed;

    fn scenario_text(extra: &str) -> String {
        format!(
            r#"{{
  "horizon": 2,
  "correlation": {{"block": {{"rho": 0.2, "rho_o": 0.5, "regions": 1}}}},
  "zeta": [[1, 1, 1], [1, 1.5, 2]],
  "alpha": [
    {{"factor": "transition", "value": 0.5}},
    {{"group": "G2", "factor": "transition", "value": 2}},
    {{"rating": "B", "time": 2, "factor": "transition", "value": 3}}
  ],
  "migration": {{"ratings": ["A", "B", "D"], "groups": [
    {{"group": "G1", "rows": [[0.9, 0.08, 0.02], [0.1, 0.8, 0.1], [0, 0, 1]]}},
    {{"group": "G2", "rows": [[0.95, 0.04, 0.01], [0.2, 0.7, 0.1], [0, 0, 1]]}}
  ]}},
  "recovery": [
    {{"rr": 0.4}},
    {{"group": "G2", "rating": 2, "mu": 0.1, "sigma": 0.5, "lambda": 0.5}},
    {{"group": "G1", "rating": "B", "time": 2, "target": {{"mean_lgd": 0.5, "variance": 0.3, "tau": 0.1}}}}
  ]{extra}
}}"#
        )
    }

    fn setup(text: &str) -> (Scenario, FactorModel, MigrationTable) {
        let s = Scenario::parse(text).unwrap();
        let f = s.factor_model().unwrap();
        let (m, _) = s.inline_migration().unwrap().unwrap();
        (s, f, m)
    }

    #[test]
    fn alpha_priority() {
        let (s, f, m) = setup(&scenario_text(""));
        assert_eq!(f.labels(), ["economic", "transition", "physical-1"]);
        let a = s.micro_adjustments(&f, &m).unwrap();
        assert_eq!(a.get(0, 0, 1), [1.0, 0.5, 1.0]);
        assert_eq!(a.get(1, 0, 2), [1.0, 2.0, 1.0]);
        assert_eq!(a.get(0, 1, 2), [1.0, 3.0, 1.0]);
        // Group beats rating and period.
        assert_eq!(a.get(1, 1, 2), [1.0, 2.0, 1.0]);
    }

    #[test]
    fn recovery_forms() {
        let (s, f, m) = setup(&scenario_text(""));
        let z = s.macro_trajectory(&f).unwrap();
        let a = s.micro_adjustments(&f, &m).unwrap();
        let sched = loadings_proposed(&z, &a, &m.matrices, f.corr(), false).unwrap();
        let r = s.recovery_table(&m, &sched, f.corr()).unwrap();
        assert_eq!(r.get(0, 0, 1).sigma, 0.0);
        assert_eq!(r.get(1, 1, 1).lambda, Some(0.5));
        assert!(r.get(0, 1, 2).sigma > 0.0);
        assert_eq!(r.get(0, 1, 1).sigma, 0.0);
    }

    #[test]
    fn renewal_entries() {
        let (s, _, m) = setup(&scenario_text(
            r#", "renewal": [{"kappa": 0.1, "profile": [0.5, 0.5, 0]}, {"group": "G2", "kappa": 0.3, "profile": [1, 0, 0]}]"#,
        ));
        let r = s.renewal(&m).unwrap();
        assert_eq!(r[0].as_ref().unwrap().kappa(), 0.1);
        assert_eq!(r[1].as_ref().unwrap().kappa(), 0.3);
    }

    #[test]
    fn rejections() {
        let (s, f, m) = setup(&scenario_text(r#", "approach": "t2", "basel3": true"#));
        assert_eq!(s.approach, Some(Approach::T2));
        assert!(s.basel3);
        let mut dup = s.clone();
        dup.alpha.push(dup.alpha[1].clone());
        assert!(dup.micro_adjustments(&f, &m).is_err());
        let mut unknown = s.clone();
        unknown.alpha[0].factor = "wind".into();
        assert!(unknown.micro_adjustments(&f, &m).is_err());
        let mut late = s.clone();
        late.alpha[2].time = Selector::Number(3);
        assert!(late.micro_adjustments(&f, &m).is_err());
        let mut mixed = s.clone();
        mixed.recovery[0].mu = Some(0.0);
        let z = s.macro_trajectory(&f).unwrap();
        let a = s.micro_adjustments(&f, &m).unwrap();
        let sched = loadings_proposed(&z, &a, &m.matrices, f.corr(), false).unwrap();
        assert!(mixed.recovery_table(&m, &sched, f.corr()).is_err());
        let mut gap = s.clone();
        gap.recovery.remove(0);
        assert!(gap.recovery_table(&m, &sched, f.corr()).is_err());

        assert!(matches!(Scenario::parse(&scenario_text(r#", "colour": 1"#)), Err(Error::Parse(_))));
        assert!(matches!(Scenario::parse("[1, 2"), Err(Error::Parse(_))));
        let short = scenario_text("").replace(r#""horizon": 2"#, r#""horizon": 3"#);
        assert!(Scenario::parse(&short).is_err());
    }
}
