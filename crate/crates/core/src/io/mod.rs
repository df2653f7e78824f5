//! Input file formats: loan books and migration matrices as comma-separated
//! text, scenarios as JSON.
//!
//! All parsers take text and never touch the file system, so they can be
//! exercised directly by the fuzz targets.

mod migration;
mod portfolio;
mod scenario;

pub use migration::MigrationTable;
pub use portfolio::{parse_portfolio, parse_portfolio_records, LoanRecord};
pub use scenario::{
    AlphaEntry, CorrelationSpec, InlineGroup, InlineMigration, MigrationSource, RecoveryEntry, RenewalEntry, Scenario,
    Selector,
};

use crate::error::{Error, Result};

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes())
}

fn csv_error(what: &str, e: csv::Error) -> Error {
    Error::Parse(format!("{what}: {e}"))
}

fn parse_number(field: &str, what: impl FnOnce() -> String) -> Result<f64> {
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Parse(format!("{}: `{field}` is not a finite number", what()))),
    }
}

/// Position of a rating given by label or by one-based level.
fn rating_index(field: &str, labels: &[String]) -> Option<usize> {
    labels
        .iter()
        .position(|l| l == field)
        .or_else(|| field.parse::<usize>().ok().filter(|n| (1..=labels.len()).contains(n)).map(|n| n - 1))
}
