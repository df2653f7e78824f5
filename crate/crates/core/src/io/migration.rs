use super::{csv_error, csv_reader, parse_number, rating_index};
use crate::error::{Error, Result};
use crate::migration::MigrationMatrix;

/// Regulatory one-period migration matrices, one per group.
#[derive(Debug, Clone, PartialEq)]
pub struct MigrationTable {
    pub ratings: Vec<String>,
    pub groups: Vec<String>,
    pub matrices: Vec<MigrationMatrix>,
}

impl MigrationTable {
    /// Parses `group,rating,<label 1>,...,<label K>` rows: each group lists
    /// every rating once, the last label being default. Rows within a
    /// renormalization tolerance of summing to one are rescaled; the returned
    /// warnings name them.
    pub fn parse_csv(text: &str) -> Result<(Self, Vec<String>)> {
        let mut reader = csv_reader(text);
        let header = reader.headers().map_err(|e| csv_error("migration header", e))?.clone();
        if header.len() < 4 || &header[0] != "group" || &header[1] != "rating" {
            return Err(Error::Parse(
                "migration: header must be `group,rating,` followed by at least two rating labels".into(),
            ));
        }
        let ratings: Vec<String> = header.iter().skip(2).map(String::from).collect();
        for (i, l) in ratings.iter().enumerate() {
            if l.is_empty() || ratings[..i].contains(l) {
                return Err(Error::Parse(format!("migration: rating label `{l}` is empty or repeated")));
            }
        }
        let k = ratings.len();
        let mut groups: Vec<String> = Vec::new();
        let mut rows: Vec<Vec<Option<Vec<f64>>>> = Vec::new();
        for row in reader.records() {
            let row = row.map_err(|e| csv_error("migration", e))?;
            let line = row.position().map_or(0, |p| p.line());
            let g = match groups.iter().position(|g| *g == row[0]) {
                Some(g) => g,
                None if row[0].is_empty() => return Err(Error::Parse(format!("migration line {line}: empty group"))),
                None => {
                    groups.push(row[0].to_string());
                    rows.push(vec![None; k]);
                    groups.len() - 1
                }
            };
            let i = rating_index(&row[1], &ratings)
                .ok_or_else(|| Error::Parse(format!("migration line {line}: unknown rating `{}`", &row[1])))?;
            let values = (2..row.len())
                .map(|c| parse_number(&row[c], || format!("migration line {line}, column {}", &header[c])))
                .collect::<Result<Vec<_>>>()?;
            if rows[g][i].replace(values).is_some() {
                return Err(Error::Parse(format!("migration line {line}: group {} lists rating {} twice", groups[g], ratings[i])));
            }
        }
        if groups.is_empty() {
            return Err(Error::Parse("migration: no matrices".into()));
        }
        let mut warnings = Vec::new();
        let mut matrices = Vec::with_capacity(groups.len());
        for (g, group_rows) in rows.into_iter().enumerate() {
            let full = group_rows
                .into_iter()
                .enumerate()
                .map(|(i, r)| {
                    r.ok_or_else(|| {
                        Error::InvalidMatrix {
                            context: format!("group {}", groups[g]),
                            reason: format!("row {} ({}) is missing", i + 1, ratings[i]),
                        }
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let (m, w) = MigrationMatrix::from_rows_normalizing(&full, &format!("group {}", groups[g]))?;
            warnings.extend(w);
            matrices.push(m);
        }
        Ok((MigrationTable { ratings, groups, matrices }, warnings))
    }

    /// Builds a table from in-memory rows, with the same checks as the file
    /// format.
    pub fn from_rows(ratings: Vec<String>, groups: Vec<(String, Vec<Vec<f64>>)>) -> Result<(Self, Vec<String>)> {
        if ratings.len() < 2 {
            return Err(Error::Invalid("at least two rating labels are required".into()));
        }
        if groups.is_empty() {
            return Err(Error::Invalid("no migration matrices".into()));
        }
        let mut warnings = Vec::new();
        let mut names = Vec::new();
        let mut matrices = Vec::new();
        for (name, rows) in groups {
            if names.contains(&name) {
                return Err(Error::Invalid(format!("group {name} has two migration matrices")));
            }
            if rows.len() != ratings.len() {
                return Err(Error::InvalidMatrix {
                    context: format!("group {name}"),
                    reason: format!("{} rows for {} ratings", rows.len(), ratings.len()),
                });
            }
            let (m, w) = MigrationMatrix::from_rows_normalizing(&rows, &format!("group {name}"))?;
            warnings.extend(w);
            matrices.push(m);
            names.push(name);
        }
        Ok((MigrationTable { ratings, groups: names, matrices }, warnings))
    }
}
