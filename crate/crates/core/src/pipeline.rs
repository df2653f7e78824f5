//! End-to-end runs: load inputs, build the model, simulate and write the
//! output files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::allocation::{AllocationReport, Kernel};
use crate::engine::{
    empirical_quantile, reverse_stress, simulate, LossBreakdown, Model, ReverseStress, RiskReport, SimulationConfig,
    SimulationResult, SubPortfolioKey, SubPortfolios,
};
use crate::error::{Error, Result};
use crate::factors::{loadings_proposed, loadings_t1, loadings_t2, Approach, FactorModel, LoadingSchedule};
use crate::io::{parse_portfolio, MigrationSource, MigrationTable, Scenario};
use crate::portfolio::{herfindahl, Portfolio};

pub const REPORT_FILE: &str = "report.json";
pub const QUANTILES_FILE: &str = "quantiles.csv";
pub const ALLOCATION_FILE: &str = "allocation.csv";
pub const HISTOGRAM_FILE: &str = "histogram.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Largest number of histogram bins written.
const MAX_BINS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub portfolio_path: PathBuf,
    pub scenario_path: PathBuf,
    /// Overrides the scenario's approach; the default is `proposed`.
    pub approach: Option<Approach>,
    pub alphas: Vec<f64>,
    pub n_paths: usize,
    pub seed: u64,
    /// Basel III correlations; also enabled by the scenario.
    pub basel3: bool,
    pub keep_trajectories: bool,
    pub subportfolio_key: SubPortfolioKey,
    pub capital_cost_rate: Option<f64>,
    pub kernel: Kernel,
    pub bandwidth: Option<f64>,
    pub herfindahl_threshold: f64,
    pub output_dir: PathBuf,
    pub workers: Option<usize>,
}

impl RunConfig {
    pub fn new(portfolio_path: impl Into<PathBuf>, scenario_path: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            portfolio_path: portfolio_path.into(),
            scenario_path: scenario_path.into(),
            approach: None,
            alphas: vec![0.001],
            n_paths: 100_000,
            seed: 0,
            basel3: false,
            keep_trajectories: false,
            subportfolio_key: SubPortfolioKey::GroupRating,
            capital_cost_rate: None,
            kernel: Kernel::Gaussian,
            bandwidth: None,
            herfindahl_threshold: 0.05,
            output_dir: output_dir.into(),
            workers: None,
        }
    }

    fn check(&self) -> Result<()> {
        if self.alphas.is_empty() {
            return Err(Error::Invalid("at least one tail probability is required".into()));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return Err(Error::Invalid(format!("tail probability {a} outside (0, 1)")));
        }
        if self.n_paths == 0 {
            return Err(Error::Invalid("at least one simulation path is required".into()));
        }
        if let Some(r) = self.capital_cost_rate.filter(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::Invalid(format!("capital cost rate {r} must be non-negative")));
        }
        if let Some(h) = self.bandwidth.filter(|h| !(*h > 0.0) || !h.is_finite()) {
            return Err(Error::Invalid(format!("bandwidth {h} must be positive")));
        }
        if self.workers == Some(0) {
            return Err(Error::Invalid("worker count must be at least one".into()));
        }
        Ok(())
    }
}

/// Everything that determines the numbers of a run: the effective options
/// and a hash of each input file. Paths, the output directory and the worker
/// count are left out.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DigestInputs {
    pub approach: Approach,
    pub alphas: Vec<f64>,
    pub n_paths: usize,
    pub seed: u64,
    pub basel3: bool,
    pub keep_trajectories: bool,
    pub subportfolio_key: SubPortfolioKey,
    pub capital_cost_rate: Option<f64>,
    pub kernel: Kernel,
    pub bandwidth: Option<f64>,
    pub herfindahl_threshold: f64,
    pub portfolio_sha256: String,
    pub scenario_sha256: String,
    pub migration_sha256: Option<String>,
}

impl DigestInputs {
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("digest inputs serialize");
        sha256_hex(&json)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// A loaded, validated model and what was learnt while loading it.
pub struct Prepared {
    pub scenario: Scenario,
    pub factors: FactorModel,
    pub migration: MigrationTable,
    pub portfolio: Portfolio,
    pub model: Model,
    pub digest: DigestInputs,
    pub herfindahl: f64,
    pub warnings: Vec<String>,
}

/// Loads and checks all inputs without simulating.
pub fn prepare(config: &RunConfig) -> Result<Prepared> {
    config.check()?;
    let scenario_text = read(&config.scenario_path)?;
    let scenario = Scenario::parse(&scenario_text)?;
    let mut warnings = Vec::new();

    let (migration, migration_sha256) = match &scenario.migration {
        MigrationSource::Path(p) => {
            let base = config.scenario_path.parent().unwrap_or(Path::new(""));
            let text = read(&base.join(p))?;
            let (table, w) = MigrationTable::parse_csv(&text)?;
            warnings.extend(w);
            (table, Some(sha256_hex(text.as_bytes())))
        }
        MigrationSource::Inline(_) => {
            let (table, w) = scenario.inline_migration().expect("inline source")?;
            warnings.extend(w);
            (table, None)
        }
    };

    let portfolio_text = read(&config.portfolio_path)?;
    let portfolio = parse_portfolio(&portfolio_text, &migration.groups, &migration.ratings, scenario.horizon)?;

    let mut hhi = 0.0f64;
    for t in 0..=scenario.horizon {
        if let Ok(h) = herfindahl(&portfolio, t) {
            if h > config.herfindahl_threshold {
                warnings.push(format!(
                    "Herfindahl index {h:.4} at period {t} exceeds {}: the granular approximation may understate risk",
                    config.herfindahl_threshold
                ));
            }
            hhi = hhi.max(h);
        }
    }

    let factors = scenario.factor_model()?;
    let zeta = scenario.macro_trajectory(&factors)?;
    let alpha = scenario.micro_adjustments(&factors, &migration)?;
    let approach = config.approach.or(scenario.approach).unwrap_or(Approach::Proposed);
    let basel3 = config.basel3 || scenario.basel3;
    let build = match approach {
        Approach::T1 => loadings_t1,
        Approach::T2 => loadings_t2,
        Approach::Proposed => loadings_proposed,
    };
    let schedule: LoadingSchedule = build(&zeta, &alpha, &migration.matrices, factors.corr(), basel3)?;
    let recovery = scenario.recovery_table(&migration, &schedule, factors.corr())?;
    let renewal = scenario.renewal(&migration)?;
    let subs = SubPortfolios::from_portfolio(&portfolio, config.subportfolio_key, &migration.ratings)?;
    let model = Model::new(factors.corr().clone(), schedule, &recovery, renewal, subs)?;

    let digest = DigestInputs {
        approach,
        alphas: config.alphas.clone(),
        n_paths: config.n_paths,
        seed: config.seed,
        basel3,
        keep_trajectories: config.keep_trajectories,
        subportfolio_key: config.subportfolio_key,
        capital_cost_rate: config.capital_cost_rate,
        kernel: config.kernel,
        bandwidth: config.bandwidth,
        herfindahl_threshold: config.herfindahl_threshold,
        portfolio_sha256: sha256_hex(portfolio_text.as_bytes()),
        scenario_sha256: sha256_hex(scenario_text.as_bytes()),
        migration_sha256,
    };
    Ok(Prepared {
        scenario,
        factors,
        migration,
        portfolio,
        model,
        digest,
        herfindahl: hhi,
        warnings,
    })
}

/// Result of a load-time check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub groups: Vec<String>,
    pub ratings: Vec<String>,
    pub factors: Vec<String>,
    pub loans: usize,
    pub horizon: usize,
    pub approach: Approach,
    pub herfindahl: f64,
    pub expected_loss: f64,
    pub config_digest: String,
    pub warnings: Vec<String>,
}

/// Runs every load-time check; never writes.
pub fn validate(config: &RunConfig) -> Result<Diagnostics> {
    let p = prepare(config)?;
    Ok(Diagnostics {
        groups: p.migration.groups.clone(),
        ratings: p.migration.ratings.clone(),
        factors: p.factors.labels().to_vec(),
        loans: p.portfolio.loans().len(),
        horizon: p.scenario.horizon,
        approach: p.digest.approach,
        herfindahl: p.herfindahl,
        expected_loss: p.model.expected_loss().total,
        config_digest: p.digest.digest(),
        warnings: p.warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

/// Freedman-Diaconis histogram: bin width `2 IQR n^(-1/3)`, one bin when the
/// spread is zero.
pub fn histogram(sample: &[f64]) -> Result<Vec<HistogramBin>> {
    if sample.is_empty() {
        return Err(Error::DegenerateSample("empty loss sample".into()));
    }
    let lo = sample.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = sample.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let iqr = empirical_quantile(sample, 0.25)? - empirical_quantile(sample, 0.75)?;
    let width = 2.0 * iqr * (sample.len() as f64).powf(-1.0 / 3.0);
    let bins = if hi > lo && width > 0.0 {
        (((hi - lo) / width).ceil() as usize).clamp(1, MAX_BINS)
    } else {
        1
    };
    let step = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in sample {
        let b = if step > 0.0 { (((v - lo) / step) as usize).min(bins - 1) } else { 0 };
        counts[b] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(b, count)| HistogramBin {
            lower: lo + b as f64 * step,
            upper: if b + 1 == bins { hi } else { lo + (b + 1) as f64 * step },
            count,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReverseStressEntry {
    pub alpha: f64,
    #[serde(flatten)]
    pub stress: ReverseStress,
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config_digest: String,
    pub approach: Approach,
    pub factors: Vec<String>,
    pub herfindahl: f64,
    pub expected: LossBreakdown,
    pub risk: RiskReport,
    pub allocation: Vec<AllocationReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub reverse_stress: Vec<ReverseStressEntry>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct FileEntry {
    name: &'static str,
    sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct Manifest<'a> {
    config_digest: String,
    seed: u64,
    n_paths: usize,
    config: &'a DigestInputs,
    versions: Versions,
    files: Vec<FileEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct Versions {
    climate_credit: &'static str,
}

/// Simulates and assembles the report without writing anything.
pub fn compute(prepared: &Prepared, config: &RunConfig) -> Result<(RunReport, SimulationResult)> {
    let digest = prepared.digest.digest();
    let model = &prepared.model;
    let sim = SimulationConfig {
        n_paths: config.n_paths,
        seed: config.seed,
        keep_trajectories: config.keep_trajectories,
        workers: config.workers,
    };
    let result = simulate(model, &sim, &digest)?;
    let expected = model.expected_loss();
    let risk = RiskReport::build(&expected, &result, &config.alphas, config.capital_cost_rate)?;
    let subs = model.subportfolios();
    let mut allocation = Vec::new();
    let mut reverse = Vec::new();
    let mut warnings = prepared.warnings.clone();
    warnings.extend(risk.warnings.iter().cloned());
    for q in &risk.quantiles {
        match AllocationReport::build(&result, &subs.labels, &subs.principals, q.alpha, config.bandwidth, config.kernel) {
            Ok(a) => allocation.push(a),
            Err(e @ Error::DegenerateSample(_)) => warnings.push(format!("alpha {}: allocation skipped: {e}", q.alpha)),
            Err(e) => return Err(e),
        }
        if config.keep_trajectories {
            let stress = reverse_stress(&result, q.total)?;
            if stress.exceedances < 100 {
                warnings.push(format!("alpha {}: reverse stress rests on {} paths", q.alpha, stress.exceedances));
            }
            reverse.push(ReverseStressEntry { alpha: q.alpha, stress });
        }
    }
    let report = RunReport {
        config_digest: digest,
        approach: prepared.digest.approach,
        factors: prepared.factors.labels().to_vec(),
        herfindahl: prepared.herfindahl,
        expected,
        risk,
        allocation,
        reverse_stress: reverse,
        warnings,
    };
    Ok((report, result))
}

/// Paths of the files a run wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub config_digest: String,
    pub files: Vec<PathBuf>,
    pub report: RunReport,
}

/// Full run. Files are written to a staging directory inside the output
/// directory and moved into place only once all of them are complete.
pub fn run(config: &RunConfig) -> Result<RunOutput> {
    let prepared = prepare(config)?;
    let (report, result) = compute(&prepared, config)?;
    let digest = report.config_digest.clone();
    let horizon = prepared.scenario.horizon;

    let mut files: Vec<(&'static str, Vec<u8>)> = vec![
        (REPORT_FILE, json_bytes(&report)),
        (QUANTILES_FILE, quantiles_csv(&digest, &report, horizon)),
        (ALLOCATION_FILE, allocation_csv(&digest, &report.allocation)),
        (HISTOGRAM_FILE, histogram_csv(&digest, &histogram(&result.totals)?)),
    ];
    let manifest = Manifest {
        config_digest: digest.clone(),
        seed: config.seed,
        n_paths: config.n_paths,
        config: &prepared.digest,
        versions: Versions { climate_credit: env!("CARGO_PKG_VERSION") },
        files: files.iter().map(|(name, bytes)| FileEntry { name, sha256: sha256_hex(bytes) }).collect(),
    };
    files.push((MANIFEST_FILE, json_bytes(&manifest)));

    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    let staging = tempfile::Builder::new()
        .prefix(".staging-")
        .tempdir_in(out)
        .map_err(|e| Error::io(out.display().to_string(), e))?;
    for (name, bytes) in &files {
        let path = staging.path().join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    let mut written = Vec::with_capacity(files.len());
    for (name, _) in &files {
        let target = out.join(name);
        fs::rename(staging.path().join(name), &target).map_err(|e| Error::io(target.display().to_string(), e))?;
        written.push(target);
    }
    Ok(RunOutput { config_digest: digest, files: written, report })
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("report serializes");
    v.push(b'\n');
    v
}

fn csv_bytes(digest: &str, header: &[&str], rows: Vec<Vec<String>>) -> Vec<u8> {
    let mut out = format!("# config_digest={digest}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(header).expect("in-memory write");
        for r in rows {
            w.write_record(&r).expect("in-memory write");
        }
        w.flush().expect("in-memory write");
    }
    out
}

fn quantiles_csv(digest: &str, report: &RunReport, horizon: usize) -> Vec<u8> {
    let mut rows = Vec::new();
    let e = &report.expected;
    for q in &report.risk.quantiles {
        for t in 0..horizon {
            rows.push(vec![
                q.alpha.to_string(),
                (t + 1).to_string(),
                q.per_period[t].to_string(),
                e.per_period[t].to_string(),
                q.capital_per_period[t].to_string(),
                q.split_per_period[t].to_string(),
            ]);
        }
        rows.push(vec![
            q.alpha.to_string(),
            "total".into(),
            q.total.to_string(),
            e.total.to_string(),
            q.capital_total.to_string(),
            q.split_sum.to_string(),
        ]);
    }
    csv_bytes(digest, &["alpha", "period", "stressed", "expected", "capital", "split_stressed"], rows)
}

fn allocation_csv(digest: &str, reports: &[AllocationReport]) -> Vec<u8> {
    let mut rows = Vec::new();
    for a in reports {
        for p in 0..a.labels.len() {
            rows.push(vec![
                a.alpha.to_string(),
                (p + 1).to_string(),
                a.labels[p].clone(),
                a.principals[p].to_string(),
                a.rc_expected[p].to_string(),
                a.s_expected[p].to_string(),
                a.rc_unexpected[p].to_string(),
                a.s_unexpected[p].to_string(),
            ]);
        }
    }
    csv_bytes(
        digest,
        &["alpha", "p", "label", "principal", "rc_expected", "s_expected", "rc_unexpected", "s_unexpected"],
        rows,
    )
}

fn histogram_csv(digest: &str, bins: &[HistogramBin]) -> Vec<u8> {
    let rows = bins
        .iter()
        .enumerate()
        .map(|(b, h)| vec![(b + 1).to_string(), h.lower.to_string(), h.upper.to_string(), h.count.to_string()])
        .collect();
    csv_bytes(digest, &["bin", "lower", "upper", "count"], rows)
}
