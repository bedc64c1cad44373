//! Comparison estimators: bootstrap percentile loss on the small test set
//! and the mean loss of unoptimized synthetic samples.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::LossOracle;
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::rng;
use crate::scalar::Real;

/// Resample count used when none is given.
pub const DEFAULT_RESAMPLES: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub method: String,
    pub estimate: f64,
    pub resamples: Option<usize>,
    pub delta: Option<f64>,
    pub g_star: Option<u64>,
    pub seed: u64,
}

/// `delta`-quantile (lower convention, index `floor(delta (R - 1))`) of `R`
/// resampled mean losses.
pub fn bootstrap_loss<T: Real>(losses: &[T], resamples: usize, delta: f64, seed: u64) -> Result<T> {
    if losses.is_empty() {
        return Err(Error::EmptyInput("losses"));
    }
    if resamples < 1 {
        return Err(Error::parameter("resamples", 0.0, "must be at least 1"));
    }
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::parameter("delta", delta, "must lie in [0, 1]"));
    }
    let n = losses.len();
    let mut r = rng::rng(seed);
    let nf = T::from_usize_lossy(n);
    let mut means: Vec<T> = (0..resamples)
        .map(|_| (0..n).map(|_| losses[r.random_range(0..n)]).sum::<T>() / nf)
        .collect();
    means.sort_by(|a, b| a.partial_cmp(b).expect("finite losses"));
    let idx = (delta * (resamples - 1) as f64).floor() as usize;
    Ok(means[idx.min(resamples - 1)])
}

/// Mean loss over `g_star` fresh generator samples.
///
/// A generator that runs dry yields [`Error::PartialEstimate`] holding the
/// mean over what it could still provide.
pub fn syn_wo_opt<T, O, G>(oracle: &O, gen: &G, g_star: u64, seed: u64) -> Result<T>
where
    T: Real,
    O: LossOracle<T> + ?Sized,
    G: Generator<T> + ?Sized,
{
    if g_star < 1 {
        return Err(Error::parameter("g_star", 0.0, "must be at least 1"));
    }
    match gen.sample(g_star as usize, seed) {
        Ok(data) => oracle.mean_loss(&data),
        Err(Error::GeneratorExhausted { available, .. }) if available > 0 => {
            let data = gen.sample(available, seed)?;
            Err(Error::PartialEstimate {
                estimate: oracle.mean_loss(&data)?.as_f64(),
                used: available,
            })
        }
        Err(e) => Err(e),
    }
}
