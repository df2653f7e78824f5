//! Rating migration matrices and their Gaussian thresholds.
//!
//! Ratings are zero-based; with `K` levels the last index is default. A
//! borrower with rating `i` ends the period in a rating `>= j` exactly when its
//! normalized asset value falls below the threshold `z[i, j]`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::factors::CorrelationMatrix;
use crate::normal;

/// Rows of a strict matrix sum to one within this tolerance.
const ROW_SUM_TOL: f64 = 1e-10;
/// Row sums within this distance of one are renormalized; larger deviations are rejected.
pub const RENORMALIZE_TOL: f64 = 1e-6;
/// Loadings with `a.Ca` at or above `1 - SATURATION_GAP` are rejected.
pub const SATURATION_GAP: f64 = 1e-10;

/// Row-stochastic `K x K` matrix of one-period transition probabilities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MigrationMatrix {
    k: usize,
    entries: Vec<f64>,
}

impl MigrationMatrix {
    /// Strict constructor: nonnegative entries, rows summing to one within
    /// 1e-10, absorbing default row.
    pub fn new(k: usize, entries: Vec<f64>) -> Result<Self> {
        let m = Self::unvalidated(k, entries)?;
        m.check("matrix", true)?;
        Ok(m)
    }

    /// Builds a matrix from possibly inexact data.
    ///
    /// Rows whose sums are within [`RENORMALIZE_TOL`] of one are rescaled and
    /// reported in the returned warnings. The default row must be absorbing to
    /// the same tolerance.
    pub fn from_rows_normalizing(rows: &[Vec<f64>], context: &str) -> Result<(Self, Vec<String>)> {
        let k = rows.len();
        if k < 2 {
            return Err(invalid(context, format!("need at least two ratings, got {k}")));
        }
        let mut warnings = Vec::new();
        let mut entries = Vec::with_capacity(k * k);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(invalid(context, format!("row {} has {} entries, expected {k}", i + 1, row.len())));
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(invalid(context, format!("row {} has invalid probability {v}", i + 1)));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > RENORMALIZE_TOL {
                return Err(invalid(context, format!("row {} sums to {sum}", i + 1)));
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                warnings.push(format!("{context}: row {} sums to {sum}, renormalized", i + 1));
            }
            entries.extend(row.iter().map(|v| v / sum));
        }
        let last = &mut entries[(k - 1) * k..];
        if (last[k - 1] - 1.0).abs() > RENORMALIZE_TOL {
            return Err(invalid(context, "default row is not absorbing".into()));
        }
        last.iter_mut().for_each(|v| *v = 0.0);
        last[k - 1] = 1.0;
        let m = MigrationMatrix { k, entries };
        m.check(context, true)?;
        Ok((m, warnings))
    }

    pub fn identity(k: usize) -> Self {
        let mut entries = vec![0.0; k * k];
        for i in 0..k {
            entries[i * k + i] = 1.0;
        }
        MigrationMatrix { k, entries }
    }

    fn unvalidated(k: usize, entries: Vec<f64>) -> Result<Self> {
        if k < 2 || entries.len() != k * k {
            return Err(Error::Dimension(format!("{} entries do not form a {k}x{k} matrix", entries.len())));
        }
        Ok(MigrationMatrix { k, entries })
    }

    fn check(&self, context: &str, absorbing: bool) -> Result<()> {
        for i in 0..self.k {
            let row = self.row(i);
            if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(invalid(context, format!("row {} has invalid probability {v}", i + 1)));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(invalid(context, format!("row {} sums to {sum}", i + 1)));
            }
        }
        if absorbing && self.get(self.k - 1, self.k - 1) != 1.0 {
            return Err(invalid(context, "default row is not absorbing".into()));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.k + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.k..(i + 1) * self.k]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Probability of moving from rating `i` to default within one period.
    #[inline]
    pub fn default_probability(&self, i: usize) -> f64 {
        self.get(i, self.k - 1)
    }

    /// Matrix product `self * other`.
    pub fn product(&self, other: &MigrationMatrix) -> MigrationMatrix {
        let k = self.k;
        let mut entries = vec![0.0; k * k];
        mat_mul(&self.entries, &other.entries, &mut entries, k);
        MigrationMatrix { k, entries }
    }
}

fn invalid(context: &str, reason: String) -> Error {
    Error::InvalidMatrix {
        context: context.to_string(),
        reason,
    }
}

/// `out = a * b` for row-major `k x k` matrices.
#[inline]
pub(crate) fn mat_mul(a: &[f64], b: &[f64], out: &mut [f64], k: usize) {
    for i in 0..k {
        let out_row = &mut out[i * k..(i + 1) * k];
        out_row.iter_mut().for_each(|v| *v = 0.0);
        for l in 0..k {
            let ail = a[i * k + l];
            if ail == 0.0 {
                continue;
            }
            let b_row = &b[l * k..(l + 1) * k];
            for (o, &blj) in out_row.iter_mut().zip(b_row) {
                *o += ail * blj;
            }
        }
    }
}

/// Gaussian thresholds `z[i, j] = Phi^-1(sum_{j' >= j} M[i, j'])`, with
/// `z[i, 0] = +inf`. Entries may be infinite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdMatrix {
    k: usize,
    z: Vec<f64>,
}

impl ThresholdMatrix {
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.z[i * self.k + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.z[i * self.k..(i + 1) * self.k]
    }

    /// Default threshold of rating `i`.
    pub fn default_threshold(&self, i: usize) -> f64 {
        self.get(i, self.k - 1)
    }

    /// Divides every threshold of row `i` by `scales[i]`.
    pub fn rescaled(&self, scales: &[f64]) -> ThresholdMatrix {
        let mut z = self.z.clone();
        for (i, &s) in scales.iter().enumerate() {
            z[i * self.k..(i + 1) * self.k].iter_mut().for_each(|v| *v /= s);
        }
        ThresholdMatrix { k: self.k, z }
    }

    /// Migration matrix with these thresholds:
    /// `M[i, 0] = 1 - Phi(z[i, 1])`, `M[i, j] = Phi(z[i, j]) - Phi(z[i, j+1])`,
    /// `M[i, K-1] = Phi(z[i, K-1])`.
    pub fn to_matrix(&self) -> MigrationMatrix {
        let k = self.k;
        let mut entries = vec![0.0; k * k];
        for i in 0..k {
            let cum: Vec<f64> = self.row(i).iter().map(|&z| normal::cdf(z)).collect();
            fill_row_from_tails(&cum, &mut entries[i * k..(i + 1) * k]);
        }
        MigrationMatrix { k, entries }
    }
}

/// Turns tail probabilities `P(rating >= j)` (with `tails[0] = 1`) into row entries.
#[inline]
pub(crate) fn fill_row_from_tails(tails: &[f64], row: &mut [f64]) {
    let k = row.len();
    row[0] = 1.0 - tails[1];
    for j in 1..k - 1 {
        row[j] = tails[j] - tails[j + 1];
    }
    row[k - 1] = tails[k - 1];
}

pub fn thresholds(m: &MigrationMatrix) -> Result<ThresholdMatrix> {
    let k = m.k;
    let mut z = vec![f64::INFINITY; k * k];
    for i in 0..k {
        let mut tail = 0.0;
        for j in (1..k).rev() {
            tail += m.get(i, j);
            let p = if (-1e-12..0.0).contains(&tail) {
                0.0
            } else if tail > 1.0 && tail <= 1.0 + 1e-12 {
                1.0
            } else {
                tail
            };
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(
                    "thresholds",
                    format!("cumulative probability {tail} in row {} is outside [0, 1]", i + 1),
                ));
            }
            z[i * k + j] = normal::quantile(p);
        }
    }
    Ok(ThresholdMatrix { k, z })
}

fn check_saturation(systematic_variance: f64) -> Result<f64> {
    if !(systematic_variance < 1.0 - SATURATION_GAP) || systematic_variance < -1e-12 {
        return Err(Error::LoadingSaturation { systematic_variance });
    }
    Ok((1.0 - systematic_variance.max(0.0)).sqrt())
}

/// Conditional migration probabilities of one row given the systematic shift
/// `a . Z` and the idiosyncratic scale `sqrt(1 - a.Ca)`.
#[inline]
pub fn conditional_row(z_row: &[f64], shift: f64, idio_scale: f64, out: &mut [f64], tails: &mut [f64]) {
    tails[0] = 1.0;
    for j in 1..z_row.len() {
        tails[j] = normal::cdf((z_row[j] - shift) / idio_scale);
    }
    fill_row_from_tails(tails, out);
}

/// Migration matrix conditional on the factor realization `factors`, with the
/// same loading vector applied to every row.
pub fn conditional_migration(
    z: &ThresholdMatrix,
    loading: &[f64],
    corr: &CorrelationMatrix,
    factors: &[f64],
) -> Result<MigrationMatrix> {
    let rows = vec![loading.to_vec(); z.k];
    conditional_migration_rows(z, &rows, corr, factors)
}

/// Conditional migration matrix with a separate loading vector per starting rating.
pub fn conditional_migration_rows(
    z: &ThresholdMatrix,
    loadings: &[Vec<f64>],
    corr: &CorrelationMatrix,
    factors: &[f64],
) -> Result<MigrationMatrix> {
    let k = z.k;
    if loadings.len() != k {
        return Err(Error::Dimension(format!("{} loading rows for {k} ratings", loadings.len())));
    }
    if factors.len() != corr.dim() || loadings.iter().any(|a| a.len() != corr.dim()) {
        return Err(Error::Dimension("loading or factor vector does not match factor dimension".into()));
    }
    let mut entries = vec![0.0; k * k];
    let mut tails = vec![0.0; k];
    for (i, a) in loadings.iter().enumerate() {
        let scale = check_saturation(corr.quad(a))?;
        let shift: f64 = a.iter().zip(factors).map(|(x, y)| x * y).sum();
        conditional_row(z.row(i), shift, scale, &mut entries[i * k..(i + 1) * k], &mut tails);
    }
    Ok(MigrationMatrix { k, entries })
}

/// Balanced renewal of a group: a fraction `kappa` of the book is replaced each
/// period by new loans with rating profile `profile`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RenewalPolicy {
    kappa: f64,
    profile: Vec<f64>,
}

impl RenewalPolicy {
    pub fn new(kappa: f64, profile: Vec<f64>) -> Result<Self> {
        if !(0.0..=1.0).contains(&kappa) {
            return Err(Error::Invalid(format!("renewal fraction {kappa} outside [0, 1]")));
        }
        let k = profile.len();
        if k < 2 {
            return Err(Error::Invalid("renewal profile needs at least two ratings".into()));
        }
        if profile[k - 1] != 0.0 {
            return Err(Error::Invalid("renewal profile must put zero weight on default".into()));
        }
        if profile.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Invalid("renewal profile has negative weights".into()));
        }
        let sum: f64 = profile.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Invalid(format!("renewal profile sums to {sum}")));
        }
        Ok(RenewalPolicy { kappa, profile })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn profile(&self) -> &[f64] {
        &self.profile
    }

    /// Applies the renewal mixture to a row in place.
    #[inline]
    pub fn mix_row(&self, row: &mut [f64]) {
        for (v, w) in row.iter_mut().zip(&self.profile) {
            *v = (1.0 - self.kappa) * *v + self.kappa * w;
        }
    }
}

/// `(1 - kappa) M + kappa 1 w^T`. The last row of the result is the renewal
/// profile mixed with the absorbing row, so default is no longer absorbing.
pub fn balanced_renewal(m: &MigrationMatrix, policy: &RenewalPolicy) -> Result<MigrationMatrix> {
    if policy.profile.len() != m.k {
        return Err(Error::Dimension(format!(
            "renewal profile has {} ratings, matrix has {}",
            policy.profile.len(),
            m.k
        )));
    }
    let mut out = m.clone();
    for i in 0..m.k {
        policy.mix_row(&mut out.entries[i * m.k..(i + 1) * m.k]);
    }
    out.check("balanced renewal", false)?;
    Ok(out)
}

/// Row scale `sqrt(1 + c.Cc - a.Ca)` of the climate-stressed thresholds.
pub fn stress_scale(adjusted: &[f64], regulatory: &[f64], corr: &CorrelationMatrix) -> Result<f64> {
    let var = 1.0 + (corr.quad(adjusted) - corr.quad(regulatory));
    if !(var > 0.0) {
        return Err(Error::CalibrationInconsistency(format!(
            "stressed asset variance 1 + c.Cc - a.Ca = {var} is not positive"
        )));
    }
    Ok(var.sqrt())
}

/// Stressed unconditional migration matrix, with one scale per starting rating.
///
/// Row `i` uses the regulatory thresholds divided by `scales[i]`. Rows with a
/// unit scale are copied from `regulatory` unchanged.
pub fn stressed_migration_scaled(
    regulatory: &MigrationMatrix,
    reg_thresholds: &ThresholdMatrix,
    scales: &[f64],
) -> Result<MigrationMatrix> {
    let k = regulatory.k;
    if scales.len() != k || reg_thresholds.k != k {
        return Err(Error::Dimension(format!("{} scales for {k} ratings", scales.len())));
    }
    let mut entries = regulatory.entries.clone();
    let mut cum = vec![0.0; k];
    for (i, &s) in scales.iter().enumerate() {
        if s == 1.0 || i == k - 1 {
            continue;
        }
        cum[0] = 1.0;
        for j in 1..k {
            cum[j] = normal::cdf(reg_thresholds.get(i, j) / s);
        }
        fill_row_from_tails(&cum, &mut entries[i * k..(i + 1) * k]);
    }
    let out = MigrationMatrix { k, entries };
    out.check("stressed migration", true)?;
    Ok(out)
}

/// Stressed unconditional migration matrix for adjusted loadings `c` and
/// regulatory loadings `a_reg` shared by all rows.
pub fn stressed_migration(
    regulatory: &MigrationMatrix,
    adjusted: &[f64],
    a_reg: &[f64],
    corr: &CorrelationMatrix,
) -> Result<MigrationMatrix> {
    let s = stress_scale(adjusted, a_reg, corr)?;
    let z = thresholds(regulatory)?;
    stressed_migration_scaled(regulatory, &z, &vec![s; regulatory.k])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fixture() -> MigrationMatrix {
        MigrationMatrix::new(
            3,
            vec![
                0.9, 0.08, 0.02, //
                0.1, 0.75, 0.15, //
                0.0, 0.0, 1.0,
            ],
        )
        .unwrap()
    }

    #[test]
    fn threshold_examples() {
        let z = thresholds(&fixture()).unwrap();
        // Phi^-1(0.02) and Phi^-1(0.10) from mpmath.
        assert!((z.get(0, 2) - -2.053_748_910_631_823).abs() < 1e-9);
        assert!((z.get(0, 1) - -1.281_551_565_544_600_4).abs() < 1e-9);
        assert_eq!(z.get(0, 0), f64::INFINITY);
        for j in 0..3 {
            assert_eq!(z.get(2, j), f64::INFINITY);
        }
        let half = MigrationMatrix::new(2, vec![0.5, 0.5, 0.0, 1.0]).unwrap();
        assert_eq!(thresholds(&half).unwrap().get(0, 1), 0.0);
    }

    #[test]
    fn threshold_round_trip() {
        let m = fixture();
        let back = thresholds(&m).unwrap().to_matrix();
        for (a, b) in m.entries().iter().zip(back.entries()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn normalization_policy() {
        let rows = vec![vec![0.5, 0.4999995], vec![0.0, 1.0]];
        let (m, warnings) = MigrationMatrix::from_rows_normalizing(&rows, "g").unwrap();
        assert_eq!(warnings.len(), 1);
        assert!((m.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-15);

        let bad = vec![vec![0.5, 0.47], vec![0.0, 1.0]];
        let err = MigrationMatrix::from_rows_normalizing(&bad, "group X").unwrap_err();
        assert!(err.to_string().contains("group X") && err.to_string().contains("row 1"));

        let not_absorbing = vec![vec![0.5, 0.5], vec![0.1, 0.9]];
        assert!(MigrationMatrix::from_rows_normalizing(&not_absorbing, "g").is_err());
    }

    #[test]
    fn conditional_with_zero_loading_is_unconditional() {
        let m = fixture();
        let z = thresholds(&m).unwrap();
        let c = CorrelationMatrix::identity(2);
        let out = conditional_migration(&z, &[0.0, 0.0], &c, &[1.7, -2.3]).unwrap();
        for (a, b) in m.entries().iter().zip(out.entries()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conditional_at_origin_matches_formula() {
        let m = fixture();
        let z = thresholds(&m).unwrap();
        let c = CorrelationMatrix::identity(2);
        let a = [0.3, 0.4];
        let out = conditional_migration(&z, &a, &c, &[0.0, 0.0]).unwrap();
        let s = (1.0f64 - 0.25).sqrt();
        for i in 0..2 {
            let p = |j: usize| normal::cdf(z.get(i, j) / s);
            assert!((out.get(i, 0) - (1.0 - p(1))).abs() < 1e-15);
            assert!((out.get(i, 1) - (p(1) - p(2))).abs() < 1e-15);
            assert!((out.get(i, 2) - p(2)).abs() < 1e-15);
        }
        assert_eq!(out.row(2), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn saturation_is_an_error() {
        let z = thresholds(&fixture()).unwrap();
        let c = CorrelationMatrix::identity(1);
        let err = conditional_migration(&z, &[1.0], &c, &[0.0]).unwrap_err();
        assert!(matches!(err, Error::LoadingSaturation { .. }));
        assert!(conditional_migration(&z, &[0.99999], &c, &[0.0]).is_ok());
    }

    #[test]
    fn renewal_examples() {
        let m = fixture();
        let w = RenewalPolicy::new(0.0, vec![0.6, 0.4, 0.0]).unwrap();
        assert_eq!(balanced_renewal(&m, &w).unwrap(), m);

        let full = RenewalPolicy::new(1.0, vec![0.6, 0.4, 0.0]).unwrap();
        let out = balanced_renewal(&m, &full).unwrap();
        for i in 0..3 {
            assert_eq!(out.row(i), &[0.6, 0.4, 0.0]);
        }

        let part = RenewalPolicy::new(0.3, vec![0.6, 0.4, 0.0]).unwrap();
        let out = balanced_renewal(&m, &part).unwrap();
        // 0.7 * M + 0.3 * w, by hand.
        let want = [
            0.81, 0.176, 0.014, //
            0.25, 0.645, 0.105, //
            0.18, 0.12, 0.7,
        ];
        for (a, b) in out.entries().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(RenewalPolicy::new(0.3, vec![0.6, 0.3, 0.1]).is_err());
        assert!(RenewalPolicy::new(1.3, vec![0.6, 0.4, 0.0]).is_err());
    }

    #[test]
    fn stressed_identity_and_monotonicity() {
        let m = fixture();
        let c = CorrelationMatrix::identity(1);
        assert_eq!(stressed_migration(&m, &[0.4], &[0.4], &c).unwrap(), m);

        let stressed = stressed_migration(&m, &[0.6], &[0.4], &c).unwrap();
        for i in 0..2 {
            assert!(stressed.default_probability(i) > m.default_probability(i));
        }
        assert_eq!(stressed.row(2), &[0.0, 0.0, 1.0]);

        let err = stressed_migration(&m, &[0.0], &[1.2], &c).unwrap_err();
        assert!(matches!(err, Error::CalibrationInconsistency(_)));
    }

    #[test]
    fn product_of_identity() {
        let m = fixture();
        assert_eq!(m.product(&MigrationMatrix::identity(3)), m);
    }

    fn arb_matrix(k: usize) -> impl Strategy<Value = MigrationMatrix> {
        prop::collection::vec(prop::collection::vec(0.001..1.0f64, k), k - 1).prop_map(move |rows| {
            let mut entries = Vec::new();
            for r in rows {
                let s: f64 = r.iter().sum();
                entries.extend(r.iter().map(|v| v / s));
            }
            entries.extend((0..k).map(|j| if j == k - 1 { 1.0 } else { 0.0 }));
            MigrationMatrix::new(k, entries).unwrap()
        })
    }

    proptest! {
        #[test]
        fn conditional_rows_are_stochastic(m in arb_matrix(4), a in prop::collection::vec(-0.5..0.5f64, 2), f in prop::collection::vec(-4.0..4.0f64, 2)) {
            let c = CorrelationMatrix::new(2, vec![1.0, -0.3, -0.3, 1.0]).unwrap();
            let z = thresholds(&m).unwrap();
            let out = conditional_migration(&z, &a, &c, &f).unwrap();
            for i in 0..4 {
                let s: f64 = out.row(i).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-10);
                prop_assert!(out.row(i).iter().all(|v| *v >= -1e-15));
            }
            prop_assert_eq!(out.row(3), &[0.0, 0.0, 0.0, 1.0]);
        }

        #[test]
        fn thresholds_round_trip(m in arb_matrix(5)) {
            let back = thresholds(&m).unwrap().to_matrix();
            for (a, b) in m.entries().iter().zip(back.entries()) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn conditional_default_monotone(m in arb_matrix(4), a in 0.05..0.6f64, f in -3.0..3.0f64, bump in 0.01..1.0f64) {
            let c = CorrelationMatrix::identity(1);
            let z = thresholds(&m).unwrap();
            let lo = conditional_migration(&z, &[a], &c, &[f]).unwrap();
            let hi = conditional_migration(&z, &[a], &c, &[f + bump]).unwrap();
            for i in 0..3 {
                prop_assert!(hi.default_probability(i) <= lo.default_probability(i));
            }
        }
    }
}
