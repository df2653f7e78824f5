use std::collections::HashSet;

use super::{csv_error, csv_reader, parse_number, rating_index};
use crate::error::{Error, Result};
use crate::portfolio::{ExposureProfile, Loan, Portfolio, Rating};

/// A loan as written in the input file, before group and rating names are
/// resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct LoanRecord {
    pub line: u64,
    pub id: String,
    pub group: String,
    pub rating: String,
    pub tag: Option<String>,
    pub profile: ExposureProfile,
}

enum Layout {
    Amortizing { principal: usize, maturity: usize, rate: usize },
    Explicit(Vec<usize>),
}

/// Parses a loan book. Columns are `id, group, rating`, an optional `tag`,
/// and either `principal, maturity, rate` or `ead_0 .. ead_n`, in any order.
pub fn parse_portfolio_records(text: &str) -> Result<Vec<LoanRecord>> {
    let mut reader = csv_reader(text);
    let header = reader.headers().map_err(|e| csv_error("portfolio header", e))?.clone();
    let mut seen = HashSet::new();
    for name in header.iter() {
        if !seen.insert(name) {
            return Err(Error::Parse(format!("portfolio: duplicate column `{name}`")));
        }
    }
    let col = |name: &str| header.iter().position(|h| h == name);
    let required = |name: &str| col(name).ok_or_else(|| Error::Parse(format!("portfolio: missing column `{name}`")));
    let (id, group, rating) = (required("id")?, required("group")?, required("rating")?);
    let tag = col("tag");

    let mut ead_cols: Vec<(usize, usize)> = Vec::new();
    for (c, name) in header.iter().enumerate() {
        match name {
            "id" | "group" | "rating" | "tag" | "principal" | "maturity" | "rate" => {}
            _ => match name.strip_prefix("ead_").and_then(|s| s.parse::<usize>().ok()) {
                Some(t) => ead_cols.push((t, c)),
                None => return Err(Error::Parse(format!("portfolio: unknown column `{name}`"))),
            },
        }
    }
    ead_cols.sort_unstable();
    let amortizing = ["principal", "maturity", "rate"].map(col);
    let layout = match (amortizing, ead_cols.is_empty()) {
        ([Some(principal), Some(maturity), Some(rate)], true) => Layout::Amortizing { principal, maturity, rate },
        ([None, None, None], false) => {
            if ead_cols.iter().enumerate().any(|(k, (t, _))| k != *t) {
                return Err(Error::Parse("portfolio: exposure columns must be ead_0, ead_1, ... without gaps".into()));
            }
            Layout::Explicit(ead_cols.into_iter().map(|(_, c)| c).collect())
        }
        _ => {
            return Err(Error::Parse(
                "portfolio: give either all of principal, maturity, rate or ead_0 .. ead_n columns, not both".into(),
            ))
        }
    };

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| csv_error("portfolio", e))?;
        let line = row.position().map_or(0, |p| p.line());
        let at = |what: &str| format!("portfolio line {line}, {what}");
        let profile = match &layout {
            Layout::Amortizing { principal, maturity, rate } => {
                let m = &row[*maturity];
                ExposureProfile::Amortizing {
                    principal: parse_number(&row[*principal], || at("principal"))?,
                    maturity: m.parse().map_err(|_| Error::Parse(format!("{}: `{m}` is not a whole number", at("maturity"))))?,
                    rate: parse_number(&row[*rate], || at("rate"))?,
                }
            }
            Layout::Explicit(cols) => ExposureProfile::Explicit {
                values: cols
                    .iter()
                    .enumerate()
                    .map(|(t, c)| parse_number(&row[*c], || at(&format!("ead_{t}"))))
                    .collect::<Result<_>>()?,
            },
        };
        if row[id].is_empty() {
            return Err(Error::Parse(format!("{}: empty id", at("id"))));
        }
        records.push(LoanRecord {
            line,
            id: row[id].to_string(),
            group: row[group].to_string(),
            rating: row[rating].to_string(),
            tag: tag.map(|c| row[c].to_string()).filter(|t| !t.is_empty()),
            profile,
        });
    }
    Ok(records)
}

/// Parses a loan book and resolves group names and ratings against the
/// migration table.
pub fn parse_portfolio(text: &str, groups: &[String], rating_labels: &[String], horizon: usize) -> Result<Portfolio> {
    let records = parse_portfolio_records(text)?;
    let mut ids = HashSet::new();
    let mut loans = Vec::with_capacity(records.len());
    for r in records {
        if !ids.insert(r.id.clone()) {
            return Err(Error::Invalid(format!("portfolio line {}: duplicate loan id `{}`", r.line, r.id)));
        }
        let group = groups
            .iter()
            .position(|g| *g == r.group)
            .ok_or_else(|| Error::Invalid(format!("portfolio line {}: group `{}` has no migration matrix", r.line, r.group)))?;
        let rating = rating_index(&r.rating, rating_labels)
            .ok_or_else(|| Error::Invalid(format!("portfolio line {}: unknown rating `{}`", r.line, r.rating)))?;
        loans.push(Loan {
            id: r.id,
            group,
            initial_rating: Rating(rating),
            tag: r.tag,
            profile: r.profile,
        });
    }
    Portfolio::new(loans, horizon, groups.to_vec(), rating_labels.len())
}
