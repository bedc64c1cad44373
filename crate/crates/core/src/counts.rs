//! Per-region synthetic counts: a multinomial draw over the estimated region
//! masses followed by clamping toward the uniform allocation `g / K`.

use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::RegionMass;
use crate::rng;
use crate::scalar::Real;

// Absorbs representation error in g(1 ± b)/K before ceil/floor.
const ROUNDING_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountVector {
    counts: Vec<u64>,
    total: u64,
}

impl CountVector {
    pub fn new(counts: Vec<u64>) -> Self {
        let total = counts.iter().sum();
        Self { counts, total }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn get(&self, region: usize) -> u64 {
        self.counts[region]
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    /// `g_i / g` for every region (zeros when the total is zero).
    pub fn weights<T: Real>(&self) -> Vec<T> {
        if self.total == 0 {
            return vec![T::zero(); self.counts.len()];
        }
        let g = self.total as f64;
        self.counts
            .iter()
            .map(|&c| T::from_f64_lossy(c as f64 / g))
            .collect()
    }
}

/// Exact multinomial draw of `g` items over `mass`, by sequential
/// conditional binomials.
pub fn sample_counts<T: Real>(mass: &RegionMass<T>, g: u64, seed: u64) -> Result<CountVector> {
    if g < 1 {
        return Err(Error::parameter("g", g as f64, "must be at least 1"));
    }
    let mut rng = rng::rng(seed);
    let p = mass.proportions();
    let mut remaining = g;
    let mut rest_mass = 1.0f64;
    let mut counts = vec![0u64; p.len()];
    for (i, &pi) in p.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        let pi = pi.as_f64().max(0.0);
        if i + 1 == p.len() || rest_mass <= 0.0 {
            counts[i] = remaining;
            break;
        }
        let q = (pi / rest_mass).clamp(0.0, 1.0);
        let draw = if q >= 1.0 {
            remaining
        } else if q <= 0.0 {
            0
        } else {
            Binomial::new(remaining, q)
                .map_err(|e| Error::InvalidInput(e.to_string()))?
                .sample(&mut rng)
        };
        counts[i] = draw;
        remaining -= draw;
        rest_mass -= pi;
    }
    Ok(CountVector::new(counts))
}

/// Inclusive clamp range for one region count.
pub fn adjustment_range(reference_total: u64, k: usize, b: f64) -> (u64, u64) {
    let share = reference_total as f64 / k as f64;
    let lo = (share * (1.0 - b) - ROUNDING_SLACK).ceil().max(0.0);
    let hi = (share * (1.0 + b) + ROUNDING_SLACK).floor().max(0.0);
    if lo > hi {
        let mid = share.round();
        (mid as u64, mid as u64)
    } else {
        (lo as u64, hi as u64)
    }
}

/// Clamps every `g_i` into `[ceil(g(1-b)/K), floor(g(1+b)/K)]`, with `g`
/// the total of `counts`. The adjusted total `g*` may differ from `g`.
pub fn adjust_counts(counts: &CountVector, b: f64) -> Result<CountVector> {
    adjust_counts_against(counts, counts.total(), b)
}

/// As [`adjust_counts`] but against an explicit reference total, which makes
/// repeated application idempotent.
pub fn adjust_counts_against(counts: &CountVector, reference_total: u64, b: f64) -> Result<CountVector> {
    if !(b >= 0.0) || !b.is_finite() {
        return Err(Error::parameter("b", b, "must be finite and non-negative"));
    }
    if counts.k() == 0 {
        return Err(Error::EmptyInput("count vector"));
    }
    let (lo, hi) = adjustment_range(reference_total, counts.k(), b);
    Ok(CountVector::new(
        counts.counts().iter().map(|&c| c.clamp(lo, hi)).collect(),
    ))
}
