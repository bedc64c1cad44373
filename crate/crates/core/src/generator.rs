//! Synthetic sample sources and region-mass estimation.
//!
//! The simulation world is a labeled Gaussian mixture: each component is one
//! class. Degraded generators translate every component mean by `a * [1, 0]`
//! while keeping covariances and weights. Externally produced data enters
//! through [`FileGenerator`].

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabeledSample};
use crate::error::{Error, Result};
use crate::io;
use crate::partition::Partition;
use crate::rng;
use crate::scalar::Real;

/// Default number of draws used to estimate region masses.
pub const DEFAULT_MASS_SAMPLES: usize = 1_000_000;

const MASS_CHUNK: usize = 65_536;

/// A source of labeled synthetic samples. The same seed returns the same
/// samples unless the source documents otherwise.
pub trait Generator<T: Real>: Send + Sync {
    fn dim(&self) -> usize;

    fn sample(&self, n: usize, seed: u64) -> Result<Dataset<T>>;
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone, PartialEq)]
struct Cholesky<T> {
    lower: Vec<Vec<T>>,
    log_det: T,
}

impl<T: Real> Cholesky<T> {
    fn new(cov: &[Vec<T>]) -> Result<Self> {
        let d = cov.len();
        let mut l = vec![vec![T::zero(); d]; d];
        for i in 0..d {
            if cov[i].len() != d {
                return Err(Error::InvalidInput("covariance is not square".into()));
            }
            for j in 0..=i {
                if (cov[i][j] - cov[j][i]).abs() > T::from_f64_lossy(1e-12) * cov[i][j].abs().max(T::one()) {
                    return Err(Error::InvalidInput("covariance is not symmetric".into()));
                }
                let mut sum = cov[i][j];
                for k in 0..j {
                    sum -= l[i][k] * l[j][k];
                }
                if i == j {
                    if !(sum > T::zero()) {
                        return Err(Error::InvalidInput(
                            "covariance is not positive definite".into(),
                        ));
                    }
                    l[i][i] = sum.sqrt();
                } else {
                    l[i][j] = sum / l[j][j];
                }
            }
        }
        let log_det = (0..d).map(|i| l[i][i].ln()).sum::<T>() * (T::one() + T::one());
        Ok(Self { lower: l, log_det })
    }

    /// `mean + L z`
    fn transform(&self, mean: &[T], z: &[T]) -> Vec<T> {
        mean.iter()
            .enumerate()
            .map(|(i, &m)| m + (0..=i).map(|k| self.lower[i][k] * z[k]).sum::<T>())
            .collect()
    }

    /// `|L^{-1} (x - mean)|^2` by forward substitution.
    fn mahalanobis2(&self, x: &[T], mean: &[T]) -> T {
        let d = x.len();
        let mut y = vec![T::zero(); d];
        let mut acc = T::zero();
        for i in 0..d {
            let mut s = x[i] - mean[i];
            for k in 0..i {
                s -= self.lower[i][k] * y[k];
            }
            y[i] = s / self.lower[i][i];
            acc += y[i] * y[i];
        }
        acc
    }
}

/// Gaussian mixture whose component index is the class label.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams<T> {
    means: Vec<Vec<T>>,
    covariances: Vec<Vec<Vec<T>>>,
    weights: Vec<T>,
    factors: Vec<Cholesky<T>>,
}

impl<T: Real> GmmParams<T> {
    pub fn new(means: Vec<Vec<T>>, covariances: Vec<Vec<Vec<T>>>, weights: Vec<T>) -> Result<Self> {
        let k = means.len();
        if k == 0 || covariances.len() != k || weights.len() != k {
            return Err(Error::InvalidInput(
                "means, covariances and weights must have one entry per component".into(),
            ));
        }
        let d = means[0].len();
        if means.iter().any(|m| m.len() != d) || covariances.iter().any(|c| c.len() != d) {
            return Err(Error::InvalidInput("inconsistent component dimension".into()));
        }
        if weights.iter().any(|w| *w < T::zero() || !w.is_finite()) {
            return Err(Error::InvalidInput("weights must be non-negative".into()));
        }
        let total: T = weights.iter().copied().sum();
        if (total - T::one()).abs() > T::from_f64_lossy(1e-12).max(T::epsilon() * T::from_f64_lossy(8.0)) {
            return Err(Error::InvalidInput(format!("weights sum to {total}, not 1")));
        }
        let factors = covariances
            .iter()
            .map(|c| Cholesky::new(c))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            means,
            covariances,
            weights,
            factors,
        })
    }

    /// The five-class 2-D simulation world.
    pub fn five_class_world() -> Self {
        let f = T::from_f64_lossy;
        let means = [[0.0, 0.0], [12.0, 15.0], [15.0, 6.0], [6.0, 7.0], [3.0, 18.0]];
        let covs = [
            [[2.0, 0.5], [0.5, 4.0]],
            [[5.0, -2.0], [-2.0, 7.0]],
            [[1.0, 0.9], [0.9, 5.0]],
            [[10.0, -7.0], [-7.0, 15.0]],
            [[5.0, 0.9], [0.9, 5.0]],
        ];
        let weights = [1.0, 3.0, 4.0, 5.0, 7.0];
        Self::new(
            means.iter().map(|m| m.iter().map(|&v| f(v)).collect()).collect(),
            covs.iter()
                .map(|c| c.iter().map(|r| r.iter().map(|&v| f(v)).collect()).collect())
                .collect(),
            weights.iter().map(|&w| f(w) / f(20.0)).collect(),
        )
        .expect("built-in mixture is valid")
    }

    pub fn components(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn means(&self) -> &[Vec<T>] {
        &self.means
    }

    pub fn covariances(&self) -> &[Vec<Vec<T>>] {
        &self.covariances
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// `log N(x | mean_k + shift, cov_k)`
    pub fn log_component_density(&self, k: usize, x: &[T], shift: &[T]) -> T {
        let mean: Vec<T> = self.means[k].iter().zip(shift).map(|(&m, &s)| m + s).collect();
        let d = T::from_usize_lossy(x.len());
        let two_pi = T::from_f64_lossy(std::f64::consts::TAU);
        let half = T::from_f64_lossy(0.5);
        -half * (d * two_pi.ln() + self.factors[k].log_det + self.factors[k].mahalanobis2(x, &mean))
    }
}

/// A mixture translated by `scale * direction`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedGmm<T> {
    base: GmmParams<T>,
    scale: T,
    direction: Vec<T>,
}

impl<T: Real> ShiftedGmm<T> {
    /// Shift along the first axis.
    pub fn new(base: GmmParams<T>, scale: T) -> Self {
        let mut direction = vec![T::zero(); base.dim()];
        direction[0] = T::one();
        Self {
            base,
            scale,
            direction,
        }
    }

    pub fn unshifted(base: GmmParams<T>) -> Self {
        Self::new(base, T::zero())
    }

    pub fn with_direction(base: GmmParams<T>, scale: T, direction: Vec<T>) -> Result<Self> {
        if direction.len() != base.dim() {
            return Err(Error::DimensionMismatch {
                expected: base.dim(),
                got: direction.len(),
            });
        }
        Ok(Self {
            base,
            scale,
            direction,
        })
    }

    pub fn base(&self) -> &GmmParams<T> {
        &self.base
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    /// Same base mixture, different shift.
    pub fn reshifted(&self, scale: T) -> Self {
        Self {
            base: self.base.clone(),
            scale,
            direction: self.direction.clone(),
        }
    }

    fn offset(&self) -> Vec<T> {
        self.direction.iter().map(|&v| v * self.scale).collect()
    }

    /// Shifted component means.
    pub fn shifted_means(&self) -> Vec<Vec<T>> {
        let off = self.offset();
        self.base
            .means
            .iter()
            .map(|m| m.iter().zip(&off).map(|(&a, &b)| a + b).collect())
            .collect()
    }

    pub fn log_density(&self, x: &[T]) -> T {
        let off = self.offset();
        let terms: Vec<T> = (0..self.base.components())
            .filter(|&k| self.base.weights[k] > T::zero())
            .map(|k| self.base.weights[k].ln() + self.base.log_component_density(k, x, &off))
            .collect();
        log_sum_exp(&terms)
    }

    pub fn density(&self, x: &[T]) -> T {
        self.log_density(x).exp()
    }

    /// Draws `(component, point)`.
    fn draw<R: rand::Rng + ?Sized>(&self, rng: &mut R, off: &[T]) -> (usize, Vec<T>) {
        let u = T::unit_uniform(rng);
        let mut acc = T::zero();
        let mut k = self.base.components() - 1;
        for (i, &w) in self.base.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        // never land on a zero-weight tail component through rounding
        while self.base.weights[k] == T::zero() && k > 0 {
            k -= 1;
        }
        let z: Vec<T> = (0..self.base.dim()).map(|_| T::standard_normal(rng)).collect();
        let mean: Vec<T> = self.base.means[k].iter().zip(off).map(|(&m, &o)| m + o).collect();
        (k, self.base.factors[k].transform(&mean, &z))
    }
}

fn log_sum_exp<T: Real>(terms: &[T]) -> T {
    let max = terms.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    max + terms.iter().map(|&t| (t - max).exp()).sum::<T>().ln()
}

impl<T: Real> Generator<T> for ShiftedGmm<T> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn sample(&self, n: usize, seed: u64) -> Result<Dataset<T>> {
        let mut rng = rng::rng(seed);
        let off = self.offset();
        let samples = (0..n)
            .map(|_| {
                let (k, x) = self.draw(&mut rng, &off);
                LabeledSample::new(x, T::from_usize_lossy(k))
            })
            .collect();
        Dataset::new(self.dim(), samples)
    }
}

/// Resamples a fixed dataset uniformly with replacement. Used as a
/// perfect-replica generator of a test set.
#[derive(Debug, Clone)]
pub struct ReplicaGenerator<T> {
    pool: Dataset<T>,
}

impl<T: Real> ReplicaGenerator<T> {
    pub fn new(pool: Dataset<T>) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::EmptyInput("replica pool"));
        }
        Ok(Self { pool })
    }
}

impl<T: Real> Generator<T> for ReplicaGenerator<T> {
    fn dim(&self) -> usize {
        self.pool.dim()
    }

    fn sample(&self, n: usize, seed: u64) -> Result<Dataset<T>> {
        use rand::Rng;
        let mut rng = rng::rng(seed);
        let m = self.pool.len();
        let samples = (0..n)
            .map(|_| self.pool.samples()[rng.random_range(0..m)].clone())
            .collect();
        Dataset::new(self.dim(), samples)
    }
}

/// `y = w . x + intercept + N(0, noise^2)` with `x ~ N(0, I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearWorld<T> {
    pub weights: Vec<T>,
    pub intercept: T,
    pub noise: T,
}

impl<T: Real> Generator<T> for LinearWorld<T> {
    fn dim(&self) -> usize {
        self.weights.len()
    }

    fn sample(&self, n: usize, seed: u64) -> Result<Dataset<T>> {
        let mut rng = rng::rng(seed);
        let samples = (0..n)
            .map(|_| {
                let x: Vec<T> = (0..self.dim()).map(|_| T::standard_normal(&mut rng)).collect();
                let y = self.intercept
                    + x.iter().zip(&self.weights).map(|(&a, &b)| a * b).sum::<T>()
                    + self.noise * T::standard_normal(&mut rng);
                LabeledSample::new(x, y)
            })
            .collect();
        Dataset::new(self.dim(), samples)
    }
}

struct FileCursor<T> {
    next_file: usize,
    buffer: VecDeque<LabeledSample<T>>,
}

/// Streams samples from a directory of dataset CSV batches in filename
/// order. The files fix the content, so `seed` is ignored; requests past the
/// end fail instead of recycling rows.
pub struct FileGenerator<T> {
    files: Vec<PathBuf>,
    dim: usize,
    cursor: Mutex<FileCursor<T>>,
}

impl<T: Real> FileGenerator<T> {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir.as_ref())?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
                p.is_file() && (name.ends_with(".csv") || name.ends_with(".csv.gz"))
            })
            .collect();
        files.sort();
        let first = files.first().ok_or_else(|| {
            Error::InvalidInput(format!("no batch files in {}", dir.as_ref().display()))
        })?;
        let head: Dataset<T> = io::read_dataset(first)?;
        let dim = head.dim();
        Ok(Self {
            files,
            dim,
            cursor: Mutex::new(FileCursor {
                next_file: 1,
                buffer: head.into_samples().into(),
            }),
        })
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }
}

impl<T: Real> Generator<T> for FileGenerator<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample(&self, n: usize, _seed: u64) -> Result<Dataset<T>> {
        let mut cur = self.cursor.lock().expect("file cursor poisoned");
        while cur.buffer.len() < n && cur.next_file < self.files.len() {
            let batch: Dataset<T> = io::read_dataset(&self.files[cur.next_file])?;
            if batch.dim() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    got: batch.dim(),
                });
            }
            cur.next_file += 1;
            cur.buffer.extend(batch.into_samples());
        }
        if cur.buffer.len() < n {
            return Err(Error::GeneratorExhausted {
                requested: n,
                available: cur.buffer.len(),
            });
        }
        let samples: Vec<_> = cur.buffer.drain(..n).collect();
        Dataset::new(self.dim, samples)
    }
}

/// Estimated probability mass of every region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMass<T> {
    proportions: Vec<T>,
    samples: usize,
}

impl<T: Real> RegionMass<T> {
    pub fn from_proportions(proportions: Vec<T>, samples: usize) -> Result<Self> {
        if proportions.iter().any(|p| *p < T::zero() || !p.is_finite()) {
            return Err(Error::InvalidInput("negative region mass".into()));
        }
        let total: T = proportions.iter().copied().sum();
        if (total - T::one()).abs() > T::from_f64_lossy(1e-9).max(T::epsilon() * T::from_usize_lossy(proportions.len())) {
            return Err(Error::InvalidInput(format!("region masses sum to {total}")));
        }
        Ok(Self {
            proportions,
            samples,
        })
    }

    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let n: u64 = counts.iter().sum();
        if n == 0 {
            return Err(Error::EmptyInput("region counts"));
        }
        let nt = T::from_f64_lossy(n as f64);
        Self::from_proportions(
            counts.iter().map(|&c| T::from_f64_lossy(c as f64) / nt).collect(),
            n as usize,
        )
    }

    pub fn proportions(&self) -> &[T] {
        &self.proportions
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn k(&self) -> usize {
        self.proportions.len()
    }
}

/// Fraction of `n` generator draws landing in each region.
pub fn estimate_region_mass<T: Real, G: Generator<T> + ?Sized>(
    gen: &G,
    partition: &Partition<T>,
    n: usize,
    seed: u64,
) -> Result<RegionMass<T>> {
    if n < partition.k() {
        return Err(Error::InvalidInput(format!(
            "{n} mass samples for {} regions",
            partition.k()
        )));
    }
    let mut counts = vec![0u64; partition.k()];
    let mut done = 0usize;
    let mut chunk = 0u64;
    while done < n {
        let m = MASS_CHUNK.min(n - done);
        let batch = gen.sample(m, rng::derive(seed, chunk))?;
        for r in partition.assign_all(&batch)? {
            counts[r] += 1;
        }
        done += m;
        chunk += 1;
    }
    RegionMass::from_counts(&counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlVariant {
    /// KL between the unlabeled mixture densities.
    Marginal,
    /// KL over `(x, y)` with the label fixed by the sampled component.
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Monte-Carlo estimate of `KL(p || q)` from `n` draws of `p`.
pub fn kl_mc<T: Real>(
    p: &ShiftedGmm<T>,
    q: &ShiftedGmm<T>,
    n: usize,
    seed: u64,
    variant: KlVariant,
) -> Result<KlEstimate> {
    if n < 2 {
        return Err(Error::InvalidInput("KL estimate needs at least 2 draws".into()));
    }
    if p.base.components() != q.base.components() || p.dim() != q.dim() {
        return Err(Error::InvalidInput("mixtures have different shapes".into()));
    }
    const CHUNK: usize = 16_384;
    let chunks = n.div_ceil(CHUNK);
    let p_off = p.offset();
    let q_off = q.offset();
    let terms: Vec<f64> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let m = CHUNK.min(n - c * CHUNK);
            let mut rng = rng::rng(rng::derive(seed, c as u64));
            (0..m)
                .map(|_| {
                    let (k, x) = p.draw(&mut rng, &p_off);
                    let t = match variant {
                        KlVariant::Marginal => p.log_density(&x) - q.log_density(&x),
                        KlVariant::Joint => {
                            (p.base.weights[k].ln() + p.base.log_component_density(k, &x, &p_off))
                                - (q.base.weights[k].ln() + q.base.log_component_density(k, &x, &q_off))
                        }
                    };
                    t.as_f64()
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let nf = n as f64;
    let mean = terms.iter().sum::<f64>() / nf;
    let var = terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    Ok(KlEstimate {
        estimate: mean,
        std_error: (var / nf).sqrt(),
        samples: n,
    })
}
