use rayon::prelude::*;
use serde::Serialize;

use super::Model;
use crate::error::{Error, Result};
use crate::factors::{sampling, FactorPaths};

/// Paths per parallel work unit. Results do not depend on it.
const CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SimulationConfig {
    pub n_paths: usize,
    pub seed: u64,
    pub keep_trajectories: bool,
    /// Size of the worker pool; `None` uses the global rayon pool.
    #[serde(skip)]
    pub workers: Option<usize>,
}

/// Monte Carlo sample of the loss distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub n_paths: usize,
    pub horizon: usize,
    pub n_sub: usize,
    pub seed: u64,
    /// Total loss of each path.
    pub totals: Vec<f64>,
    /// `per_period[k * T + t - 1]`.
    pub per_period: Vec<f64>,
    /// Loss of each sub-portfolio summed over periods, `per_sub[k * P + p]`.
    pub per_sub: Vec<f64>,
    pub trajectories: Option<FactorPaths>,
    pub config_digest: String,
}

impl SimulationResult {
    /// Loss sample of period `t` in `1..=T`.
    pub fn period_sample(&self, t: usize) -> Vec<f64> {
        (0..self.n_paths).map(|k| self.per_period[k * self.horizon + t - 1]).collect()
    }

    /// Loss sample of sub-portfolio `p`.
    pub fn sub_sample(&self, p: usize) -> Vec<f64> {
        (0..self.n_paths).map(|k| self.per_sub[k * self.n_sub + p]).collect()
    }
}

/// Simulates `n_paths` factor trajectories and evaluates the conditional loss
/// on each. Path `k` draws from its own random stream, so the result depends
/// only on the seed and the model, never on the number of workers.
pub fn simulate(model: &Model, config: &SimulationConfig, config_digest: &str) -> Result<SimulationResult> {
    if config.n_paths == 0 {
        return Err(Error::Invalid("at least one simulation path is required".into()));
    }
    match config.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::Simulation(format!("cannot start worker pool: {e}")))?
            .install(|| run(model, config, config_digest)),
        None => run(model, config, config_digest),
    }
}

fn run(model: &Model, config: &SimulationConfig, config_digest: &str) -> Result<SimulationResult> {
    let n = config.n_paths;
    let horizon = model.horizon();
    let dim = model.dim();
    let n_sub = model.subportfolios().len();
    let stride = horizon * dim;
    let mut totals = vec![0.0; n];
    let mut per_period = vec![0.0; n * horizon];
    let mut per_sub = vec![0.0; n * n_sub];
    let mut trajectories = if config.keep_trajectories { vec![0.0; n * stride] } else { Vec::new() };

    let chunks = totals
        .par_chunks_mut(CHUNK)
        .zip(per_period.par_chunks_mut(CHUNK * horizon))
        .zip(per_sub.par_chunks_mut(CHUNK * n_sub))
        .enumerate();
    let keep = config.keep_trajectories;
    // Kept trajectories are written through per-chunk slices as well.
    let traj_slices: Vec<Option<&mut [f64]>> = if keep {
        trajectories.chunks_mut(CHUNK * stride).map(Some).collect()
    } else {
        (0..n.div_ceil(CHUNK)).map(|_| None).collect()
    };

    chunks.zip(traj_slices.into_par_iter()).for_each(|((c, ((tot, per), sub)), traj)| {
        let (mut ws, mut unit) = model.workspace();
        let mut path = vec![0.0; stride];
        let mut scratch = vec![0.0; dim];
        let mut traj = traj;
        for (local, total) in tot.iter_mut().enumerate() {
            let k = c * CHUNK + local;
            let mut rng = sampling::path_rng(config.seed, k as u64);
            sampling::fill_path(model.corr(), &mut rng, &mut path, &mut scratch);
            *total = model.evaluate_into(
                &path,
                &mut ws,
                &mut unit,
                &mut per[local * horizon..(local + 1) * horizon],
                &mut sub[local * n_sub..(local + 1) * n_sub],
            );
            if let Some(t) = traj.as_deref_mut() {
                t[local * stride..(local + 1) * stride].copy_from_slice(&path);
            }
        }
    });

    if let Some(bad) = totals.iter().find(|v| !v.is_finite()) {
        return Err(Error::Simulation(format!("non-finite path loss {bad}")));
    }
    Ok(SimulationResult {
        n_paths: n,
        horizon,
        n_sub,
        seed: config.seed,
        totals,
        per_period,
        per_sub,
        trajectories: keep.then_some(FactorPaths {
            n_paths: n,
            horizon,
            dim,
            values: trajectories,
        }),
        config_digest: config_digest.to_string(),
    })
}
