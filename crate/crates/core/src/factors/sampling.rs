use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::CorrelationMatrix;

/// Random source of path `index` under `seed`. Each path owns an independent
/// ChaCha stream, so a path's draws do not depend on how paths are scheduled.
pub(crate) fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Fills `out` (length `T * d`, period-major) with `T` i.i.d. draws from
/// `N(0, C)`, advancing `rng`. `scratch` must hold `d` values.
#[inline]
pub(crate) fn fill_path(corr: &CorrelationMatrix, rng: &mut ChaCha8Rng, out: &mut [f64], scratch: &mut [f64]) {
    let d = corr.dim();
    for z in out.chunks_mut(d) {
        for e in scratch.iter_mut() {
            *e = rng.sample(StandardNormal);
        }
        corr.correlate(scratch, z);
    }
}

/// Factor trajectory of path `index`: `horizon` draws from `N(0, C)`.
pub fn sample_path(corr: &CorrelationMatrix, horizon: usize, seed: u64, index: u64) -> Vec<f64> {
    let mut out = vec![0.0; horizon * corr.dim()];
    let mut scratch = vec![0.0; corr.dim()];
    fill_path(corr, &mut path_rng(seed, index), &mut out, &mut scratch);
    out
}

/// Sampled factor trajectories, stored path-major then period-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPaths {
    pub n_paths: usize,
    pub horizon: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl FactorPaths {
    /// Factor vector of `path` in period `t` (1-based).
    pub fn get(&self, path: usize, t: usize) -> &[f64] {
        let o = (path * self.horizon + t - 1) * self.dim;
        &self.values[o..o + self.dim]
    }
}

/// Draws `n_paths` independent trajectories; identical for a given seed
/// regardless of the size of the rayon pool.
pub fn sample_factors(corr: &CorrelationMatrix, horizon: usize, n_paths: usize, seed: u64) -> FactorPaths {
    let dim = corr.dim();
    let stride = (horizon * dim).max(1);
    let mut values = vec![0.0; n_paths * horizon * dim];
    values.par_chunks_mut(stride).enumerate().for_each_init(
        || vec![0.0; dim],
        |scratch, (k, out)| fill_path(corr, &mut path_rng(seed, k as u64), out, scratch),
    );
    FactorPaths {
        n_paths,
        horizon,
        dim,
        values,
    }
}
