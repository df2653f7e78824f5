use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use climate_credit::allocation::Kernel;
use climate_credit::engine::SubPortfolioKey;
use climate_credit::factors::Approach;
use climate_credit::pipeline::{self, RunConfig};
use climate_credit::{Error, ErrorClass};

/// Simulates portfolio credit losses under a climate scenario and writes the
/// risk report, capital allocation, quantile table, loss histogram and a
/// manifest to the output directory.
#[derive(Debug, Parser)]
#[command(name = "climate-credit", version)]
struct Args {
    /// Loan book (CSV).
    #[arg(long)]
    portfolio: PathBuf,

    /// Scenario (JSON).
    #[arg(long)]
    scenario: PathBuf,

    /// Loading calibration; overrides the scenario file.
    #[arg(long, value_enum)]
    approach: Option<ApproachArg>,

    /// Tail probability of the stressed loss; repeat for several.
    #[arg(long = "alpha", default_values_t = [0.001])]
    alphas: Vec<f64>,

    /// Number of simulated factor paths.
    #[arg(long, default_value_t = 100_000)]
    paths: usize,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Use the Basel III asset correlations.
    #[arg(long)]
    basel3: bool,

    /// Keep factor paths and report reverse-stress factor means.
    #[arg(long)]
    keep_trajectories: bool,

    /// Partition used for allocation.
    #[arg(long, value_enum, default_value_t = KeyArg::GroupRating)]
    subportfolio_key: KeyArg,

    /// Cost of capital used for the premium, e.g. 0.1.
    #[arg(long)]
    capital_cost: Option<f64>,

    /// Allocation kernel.
    #[arg(long, value_enum, default_value_t = KernelArg::Gaussian)]
    kernel: KernelArg,

    /// Allocation bandwidth; Silverman's rule when omitted.
    #[arg(long)]
    bandwidth: Option<f64>,

    /// Warn when the Herfindahl index of exposures exceeds this value.
    #[arg(long, default_value_t = 0.05)]
    herfindahl_threshold: f64,

    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Worker threads; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,

    /// Check the inputs and exit without simulating or writing.
    #[arg(long)]
    validate_only: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ApproachArg {
    T1,
    T2,
    Proposed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KeyArg {
    GroupRating,
    Tag,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KernelArg {
    Gaussian,
    Epanechnikov,
}

impl Args {
    fn config(&self) -> RunConfig {
        let mut c = RunConfig::new(&self.portfolio, &self.scenario, &self.out);
        c.approach = self.approach.map(|a| match a {
            ApproachArg::T1 => Approach::T1,
            ApproachArg::T2 => Approach::T2,
            ApproachArg::Proposed => Approach::Proposed,
        });
        c.alphas = self.alphas.clone();
        c.n_paths = self.paths;
        c.seed = self.seed;
        c.basel3 = self.basel3;
        c.keep_trajectories = self.keep_trajectories;
        c.subportfolio_key = match self.subportfolio_key {
            KeyArg::GroupRating => SubPortfolioKey::GroupRating,
            KeyArg::Tag => SubPortfolioKey::Tag,
        };
        c.capital_cost_rate = self.capital_cost;
        c.kernel = match self.kernel {
            KernelArg::Gaussian => Kernel::Gaussian,
            KernelArg::Epanechnikov => Kernel::Epanechnikov,
        };
        c.bandwidth = self.bandwidth;
        c.herfindahl_threshold = self.herfindahl_threshold;
        c.workers = self.workers;
        c
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Io => 1,
        ErrorClass::Parse => 3,
        ErrorClass::Validation => 4,
        ErrorClass::Calibration => 5,
        ErrorClass::Simulation => 6,
    }
}

fn execute(args: &Args) -> Result<(), Error> {
    let config = args.config();
    if args.validate_only {
        let d = pipeline::validate(&config)?;
        println!("inputs ok");
        println!("groups: {}", d.groups.join(", "));
        println!("ratings: {}", d.ratings.join(", "));
        println!("factors: {}", d.factors.join(", "));
        println!("loans: {}", d.loans);
        println!("horizon: {}", d.horizon);
        println!("approach: {}", d.approach);
        println!("herfindahl: {:.6}", d.herfindahl);
        println!("expected loss: {}", d.expected_loss);
        println!("config digest: {}", d.config_digest);
        for w in &d.warnings {
            println!("warning: {w}");
        }
        return Ok(());
    }
    let out = pipeline::run(&config)?;
    let r = &out.report;
    println!("config digest: {}", out.config_digest);
    println!("expected loss: {}", r.expected.total);
    for q in &r.risk.quantiles {
        println!("alpha {}: stressed loss {}, capital {}", q.alpha, q.total, q.capital_total);
    }
    for f in &out.files {
        println!("wrote {}", f.display());
    }
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    match execute(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
