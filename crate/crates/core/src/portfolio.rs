//! Loan portfolio data model, exposure-at-default profiles and aggregation.

use serde::Serialize;

use crate::error::{Error, Result};

/// A rating level, stored as a zero-based index. With `K` levels, index
/// `K - 1` is the absorbing default state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Rating(pub usize);

impl Rating {
    /// Builds a rating from the one-based level used in input files.
    pub fn from_level(level: usize) -> Option<Rating> {
        level.checked_sub(1).map(Rating)
    }

    pub fn index(self) -> usize {
        self.0
    }

    pub fn level(self) -> usize {
        self.0 + 1
    }

    pub fn is_default(self, num_ratings: usize) -> bool {
        self.0 + 1 == num_ratings
    }
}

/// Exposure at default of an equal-payment amortizing loan at period `t`.
///
/// `principal * ((1+r)^m - (1+r)^t) / ((1+r)^m - 1)` for `t <= m` and zero
/// afterwards. At `rate == 0` the removable singularity is replaced by its
/// limit, linear amortization `principal * (m - t) / m`.
pub fn ead_amortizing(principal: f64, maturity: u32, rate: f64, t: u32) -> Result<f64> {
    if !(principal >= 0.0) || !principal.is_finite() {
        return Err(Error::Invalid(format!("principal must be finite and >= 0, got {principal}")));
    }
    if maturity < 1 {
        return Err(Error::Invalid("maturity must be at least one period".into()));
    }
    if !(rate > -1.0) || !rate.is_finite() {
        return Err(Error::Invalid(format!("rate must be finite and > -1, got {rate}")));
    }
    if t == 0 {
        return Ok(principal);
    }
    if t >= maturity {
        return Ok(0.0);
    }
    let m = maturity as f64;
    let t = t as f64;
    if rate == 0.0 {
        return Ok(principal * (m - t) / m);
    }
    // (1+r)^n - 1 via expm1/ln1p keeps precision for small rates.
    let l = rate.ln_1p();
    let grow_m = (m * l).exp_m1();
    let grow_t = (t * l).exp_m1();
    Ok(principal * (grow_m - grow_t) / grow_m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ExposureProfile {
    Amortizing { principal: f64, maturity: u32, rate: f64 },
    /// EAD at periods `0, 1, ...`; periods past the end of the vector have zero exposure.
    Explicit { values: Vec<f64> },
}

impl ExposureProfile {
    pub fn validate(&self) -> Result<()> {
        match self {
            ExposureProfile::Amortizing { principal, maturity, rate } => {
                ead_amortizing(*principal, *maturity, *rate, 0).map(|_| ())
            }
            ExposureProfile::Explicit { values } => {
                if values.is_empty() {
                    return Err(Error::Invalid("explicit exposure profile is empty".into()));
                }
                match values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
                    Some(v) => Err(Error::Invalid(format!("exposure value {v} is not finite and >= 0"))),
                    None => Ok(()),
                }
            }
        }
    }

    /// Exposure at default given default at period `t`.
    pub fn ead(&self, t: usize) -> f64 {
        match self {
            ExposureProfile::Amortizing { principal, maturity, rate } => {
                ead_amortizing(*principal, *maturity, *rate, t as u32).unwrap_or(0.0)
            }
            ExposureProfile::Explicit { values } => values.get(t).copied().unwrap_or(0.0),
        }
    }

    /// Principal: the peak exposure of the profile. For amortizing loans this
    /// is the exposure at period zero; for forward-starting explicit profiles
    /// it is the drawn amount.
    pub fn principal(&self) -> f64 {
        match self {
            ExposureProfile::Amortizing { principal, .. } => *principal,
            ExposureProfile::Explicit { values } => values.iter().copied().fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Loan {
    pub id: String,
    pub group: usize,
    pub initial_rating: Rating,
    pub tag: Option<String>,
    pub profile: ExposureProfile,
}

/// A validated loan book. Immutable after construction.
#[derive(Debug, Clone, Serialize)]
pub struct Portfolio {
    loans: Vec<Loan>,
    horizon: usize,
    groups: Vec<String>,
    num_ratings: usize,
}

impl Portfolio {
    pub fn new(loans: Vec<Loan>, horizon: usize, groups: Vec<String>, num_ratings: usize) -> Result<Self> {
        if num_ratings < 2 {
            return Err(Error::Invalid(format!("need at least two rating levels, got {num_ratings}")));
        }
        if horizon < 1 {
            return Err(Error::Invalid("horizon must be at least one period".into()));
        }
        if loans.is_empty() {
            return Err(Error::Invalid("portfolio has no loans".into()));
        }
        for loan in &loans {
            if loan.group >= groups.len() {
                return Err(Error::Invalid(format!("loan {}: unknown group index {}", loan.id, loan.group)));
            }
            if loan.initial_rating.index() + 1 >= num_ratings {
                return Err(Error::Invalid(format!(
                    "loan {}: initial rating {} must be below the default level {num_ratings}",
                    loan.id,
                    loan.initial_rating.level()
                )));
            }
            loan.profile
                .validate()
                .map_err(|e| Error::Invalid(format!("loan {}: {e}", loan.id)))?;
        }
        Ok(Portfolio { loans, horizon, groups, num_ratings })
    }

    pub fn loans(&self) -> &[Loan] {
        &self.loans
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn groups(&self) -> &[String] {
        &self.groups
    }

    pub fn num_ratings(&self) -> usize {
        self.num_ratings
    }

    /// Union of two portfolios over the same groups, ratings and horizon.
    pub fn union(&self, other: &Portfolio) -> Result<Portfolio> {
        if self.groups != other.groups || self.num_ratings != other.num_ratings || self.horizon != other.horizon {
            return Err(Error::Dimension("portfolios differ in groups, ratings or horizon".into()));
        }
        let loans = self.loans.iter().chain(other.loans.iter()).cloned().collect();
        Portfolio::new(loans, self.horizon, self.groups.clone(), self.num_ratings)
    }
}

/// Exposure at default summed by (group, initial rating, period), periods `0..=T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregatedExposure {
    groups: usize,
    ratings: usize,
    horizon: usize,
    values: Vec<f64>,
}

impl AggregatedExposure {
    pub fn zeros(groups: usize, ratings: usize, horizon: usize) -> Self {
        AggregatedExposure {
            groups,
            ratings,
            horizon,
            values: vec![0.0; groups * ratings * (horizon + 1)],
        }
    }

    #[inline]
    fn offset(&self, g: usize, i: usize, t: usize) -> usize {
        (g * self.ratings + i) * (self.horizon + 1) + t
    }

    #[inline]
    pub fn get(&self, g: usize, i: usize, t: usize) -> f64 {
        self.values[self.offset(g, i, t)]
    }

    pub fn add(&mut self, g: usize, i: usize, t: usize, amount: f64) {
        let k = self.offset(g, i, t);
        self.values[k] += amount;
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

    /// Total exposure at period `t`.
    pub fn total(&self, t: usize) -> f64 {
        let mut sum = 0.0;
        for g in 0..self.groups {
            for i in 0..self.ratings {
                sum += self.get(g, i, t);
            }
        }
        sum
    }
}

/// `EAD[g, i, t] = sum of EAD_t over loans in group g with initial rating i`.
pub fn aggregate_ead(portfolio: &Portfolio) -> AggregatedExposure {
    aggregate_loans(portfolio.loans.iter(), portfolio.groups.len(), portfolio.num_ratings, portfolio.horizon)
}

pub(crate) fn aggregate_loans<'a>(
    loans: impl Iterator<Item = &'a Loan>,
    groups: usize,
    ratings: usize,
    horizon: usize,
) -> AggregatedExposure {
    let mut out = AggregatedExposure::zeros(groups, ratings, horizon);
    for loan in loans {
        for t in 0..=horizon {
            out.add(loan.group, loan.initial_rating.index(), t, loan.profile.ead(t));
        }
    }
    out
}

/// Herfindahl index `sum EAD^2 / (sum EAD)^2` of loan exposures at period `t`.
pub fn herfindahl(portfolio: &Portfolio, t: usize) -> Result<f64> {
    let (sum, sum_sq) = portfolio.loans.iter().fold((0.0, 0.0), |(s, s2), loan| {
        let e = loan.profile.ead(t);
        (s + e, s2 + e * e)
    });
    if sum <= 0.0 {
        return Err(Error::Invalid(format!("degenerate period {t}: total exposure is zero")));
    }
    Ok(sum_sq / (sum * sum))
}
