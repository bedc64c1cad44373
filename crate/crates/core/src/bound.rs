//! Finite-sample lower bound on the true error from a synthetic set, and the
//! asymptotic Monte-Carlo diagnostics that relate generator quality to the
//! achievable bound.
//!
//! With adjusted counts `g_i`, total `g`, occupied regions `T_S` and per
//! region mean losses `a_i`:
//!
//! ```text
//! eps_h = sum_{i in T_S} (g_i / g) eps(G_i, S_i)
//! B     = C_h sqrt(-0.5 ln(delta2) sum_{i in T_S} (g_i / g)^2)
//! D     = -(a_hat / g) ln(delta1)
//! beta  = 2 sum_i p_i a_i^2
//! lb    = (sqrt(F_G - eps_h - B + D) - sqrt(D))^2
//! ```
//!
//! valid when `F_G >= eps_h + B` and `delta1 > exp(-0.5 g beta / a_hat^2)`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::counts::CountVector;
use crate::data::{Dataset, LossOracle};
use crate::error::{Error, Result};
use crate::generator::{Generator, RegionMass};
use crate::partition::Partition;
use crate::rng;
use crate::scalar::Real;

/// Mass above which an unreached region is flagged in the report.
pub const UNREACHED_MASS_FLAG: f64 = 0.01;

/// Mean of `|a - b|` over all pairs `(a, b)` in `first x second`.
pub fn epsilon<T: Real>(first: &[T], second: &[T]) -> Result<T> {
    if first.is_empty() || second.is_empty() {
        return Err(Error::EmptyInput("loss list"));
    }
    let (small, large) = if first.len() <= second.len() {
        (first, second)
    } else {
        (second, first)
    };
    if small.len() * large.len() <= 4096 {
        let total: T = small
            .iter()
            .map(|&a| large.iter().map(|&b| (a - b).abs()).sum::<T>())
            .sum();
        return Ok(total / T::from_usize_lossy(small.len() * large.len()));
    }
    // sort + prefix sums: sum_b |a - b| = a*n_lo - sum_lo + sum_hi - a*n_hi
    let mut sorted = large.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite losses"));
    let mut prefix = Vec::with_capacity(sorted.len() + 1);
    prefix.push(T::zero());
    for &v in &sorted {
        let last = *prefix.last().unwrap();
        prefix.push(last + v);
    }
    let total_sum = prefix[sorted.len()];
    let n = sorted.len();
    let total: T = small
        .iter()
        .map(|&a| {
            let lo = sorted.partition_point(|&b| b < a);
            let n_lo = T::from_usize_lossy(lo);
            let n_hi = T::from_usize_lossy(n - lo);
            a * n_lo - prefix[lo] + (total_sum - prefix[lo]) - a * n_hi
        })
        .sum();
    Ok(total / T::from_usize_lossy(small.len() * large.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams<T> {
    pub delta1: T,
    pub delta2: T,
    /// `C_h`
    pub loss_bound: T,
}

impl<T: Real> BoundParams<T> {
    /// Each confidence parameter must lie in `(0, 1)`. A combined
    /// `delta1 + delta2 >= 1` is accepted but reported as vacuous.
    pub fn new(delta1: T, delta2: T, loss_bound: T) -> Result<Self> {
        check_unit("delta1", delta1)?;
        check_unit("delta2", delta2)?;
        if !(loss_bound > T::zero()) || !loss_bound.is_finite() {
            return Err(Error::parameter(
                "loss_bound",
                loss_bound.as_f64(),
                "must be positive and finite",
            ));
        }
        Ok(Self {
            delta1,
            delta2,
            loss_bound,
        })
    }

    pub fn confidence(&self) -> T {
        T::one() - self.delta1 - self.delta2
    }
}

fn check_unit<T: Real>(name: &'static str, v: T) -> Result<()> {
    if v > T::zero() && v < T::one() {
        Ok(())
    } else {
        Err(Error::parameter(name, v.as_f64(), "must lie in (0, 1)"))
    }
}

/// Streaming per-region loss accumulator. `count` and `sum` are exact over
/// everything pushed; `retained` keeps at most `cap` values by reservoir
/// sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct LossAccumulator<T> {
    count: u64,
    sum: T,
    retained: Vec<T>,
    cap: usize,
    seed: u64,
}

impl<T: Real> LossAccumulator<T> {
    pub fn new(cap: usize, seed: u64) -> Self {
        Self {
            count: 0,
            sum: T::zero(),
            retained: Vec::new(),
            cap,
            seed,
        }
    }

    pub fn push(&mut self, value: T) {
        self.count += 1;
        self.sum += value;
        if self.retained.len() < self.cap {
            self.retained.push(value);
        } else if self.cap > 0 {
            let j = rng::derive(self.seed, self.count) % self.count;
            if (j as usize) < self.cap {
                self.retained[j as usize] = value;
            }
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> Option<T> {
        (self.count > 0).then(|| self.sum / T::from_f64_lossy(self.count as f64))
    }

    pub fn retained(&self) -> &[T] {
        &self.retained
    }
}

/// Synthetic loss accumulators and real anchor losses for every region.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionStats<T> {
    synthetic: Vec<LossAccumulator<T>>,
    anchors: Vec<Vec<T>>,
}

impl<T: Real> RegionStats<T> {
    /// `caps[i]` bounds the retained synthetic losses of region `i`.
    pub fn new(anchors: Vec<Vec<T>>, caps: &[usize], seed: u64) -> Result<Self> {
        if caps.len() != anchors.len() {
            return Err(Error::InvalidInput("one cap per region required".into()));
        }
        Ok(Self {
            synthetic: caps
                .iter()
                .enumerate()
                .map(|(i, &c)| LossAccumulator::new(c, rng::derive(seed, i as u64)))
                .collect(),
            anchors,
        })
    }

    /// Stats from already-known per-region synthetic losses (no cap).
    pub fn from_losses(anchors: Vec<Vec<T>>, synthetic: &[Vec<T>]) -> Result<Self> {
        if synthetic.len() != anchors.len() {
            return Err(Error::InvalidInput("one loss list per region required".into()));
        }
        let caps: Vec<usize> = synthetic.iter().map(Vec::len).collect();
        let mut stats = Self::new(anchors, &caps, 0)?;
        for (i, losses) in synthetic.iter().enumerate() {
            for &l in losses {
                stats.push(i, l);
            }
        }
        Ok(stats)
    }

    pub fn k(&self) -> usize {
        self.anchors.len()
    }

    pub fn push(&mut self, region: usize, loss: T) {
        self.synthetic[region].push(loss);
    }

    pub fn anchors(&self, region: usize) -> &[T] {
        &self.anchors[region]
    }

    pub fn accumulator(&self, region: usize) -> &LossAccumulator<T> {
        &self.synthetic[region]
    }

    /// `a_i`, `None` for regions never reached by synthetic data.
    pub fn a(&self, region: usize) -> Option<T> {
        self.synthetic[region].mean()
    }

    /// `a_i` with unreached regions at zero.
    pub fn a_values(&self) -> Vec<T> {
        (0..self.k()).map(|i| self.a(i).unwrap_or_else(T::zero)).collect()
    }

    /// `a_hat = max a_i` over reached regions.
    pub fn a_hat(&self) -> Option<T> {
        (0..self.k()).filter_map(|i| self.a(i)).reduce(T::max)
    }
}

/// Count-weighted mean loss of the per-region synthetic sets. Regions with no
/// points contribute nothing.
pub fn weighted_mean_loss<T: Real>(synthetic: &[Vec<T>], counts: &CountVector) -> Result<T> {
    if synthetic.len() != counts.k() {
        return Err(Error::InvalidInput("one loss list per region required".into()));
    }
    let w = counts.weights::<T>();
    Ok(synthetic
        .iter()
        .zip(w)
        .filter(|(s, _)| !s.is_empty())
        .map(|(s, w)| w * crate::data::mean(s))
        .sum())
}

/// `eps_h = sum_{i in T_S} (g_i/g) eps(G_i, S_i)`.
pub fn epsilon_h<T: Real>(
    synthetic: &[Vec<T>],
    anchors: &[Vec<T>],
    counts: &CountVector,
    occupied: &BTreeSet<usize>,
) -> Result<T> {
    if synthetic.len() != counts.k() || anchors.len() != counts.k() {
        return Err(Error::InvalidInput("one loss list per region required".into()));
    }
    let w = counts.weights::<T>();
    let mut total = T::zero();
    for &i in occupied {
        if i >= counts.k() || counts.get(i) == 0 || synthetic[i].is_empty() {
            continue;
        }
        if anchors[i].is_empty() {
            return Err(Error::InconsistentState(format!(
                "occupied region {i} holds synthetic points but no anchor losses"
            )));
        }
        total += w[i] * epsilon(&anchors[i], &synthetic[i])?;
    }
    Ok(total)
}

/// `B = C_h sqrt(-0.5 ln(delta2) sum_{i in T_S} (g_i/g)^2)`.
pub fn term_b<T: Real>(params: &BoundParams<T>, counts: &CountVector, occupied: &BTreeSet<usize>) -> Result<T> {
    check_unit("delta2", params.delta2)?;
    let w = counts.weights::<T>();
    let concentration: T = occupied
        .iter()
        .filter(|&&i| i < w.len())
        .map(|&i| w[i] * w[i])
        .sum();
    let half = T::from_f64_lossy(0.5);
    Ok(params.loss_bound * (-(half * params.delta2.ln()) * concentration).sqrt())
}

/// `D = -(a_hat / g) ln(delta1)`.
pub fn term_d<T: Real>(a_hat: T, g: u64, delta1: T) -> Result<T> {
    check_unit("delta1", delta1)?;
    if g < 1 {
        return Err(Error::parameter("g", 0.0, "must be at least 1"));
    }
    Ok(-(a_hat / T::from_f64_lossy(g as f64)) * delta1.ln())
}

/// `beta = 2 sum_i p_i a_i^2`.
pub fn beta_hat<T: Real>(mass: &RegionMass<T>, a: &[T]) -> Result<T> {
    if mass.k() != a.len() {
        return Err(Error::InvalidInput(format!(
            "{} region masses for {} regions",
            mass.k(),
            a.len()
        )));
    }
    let two = T::one() + T::one();
    Ok(two
        * mass
            .proportions()
            .iter()
            .zip(a)
            .map(|(&p, &ai)| p * ai * ai)
            .sum::<T>())
}

/// Smallest admissible `delta1`: `exp(-0.5 g beta / a_hat^2)`.
pub fn delta1_threshold<T: Real>(g: u64, beta: T, a_hat: T) -> Result<T> {
    if !(a_hat > T::zero()) {
        return Err(Error::BoundInapplicable(
            "the model is perfect on every observed synthetic region (a_hat = 0)",
        ));
    }
    let half = T::from_f64_lossy(0.5);
    Ok((-(half * T::from_f64_lossy(g as f64) * beta) / (a_hat * a_hat)).exp())
}

/// `(sqrt(x + d) - sqrt(d))^2`, clamped at zero for `x <= 0`. Evaluated as
/// `(x / (sqrt(x + d) + sqrt(d)))^2`, which avoids cancellation when `x << d`.
pub fn bound_value<T: Real>(x: T, d: T) -> T {
    if x <= T::zero() {
        return T::zero();
    }
    let r = x / ((x + d).sqrt() + d.sqrt());
    r * r
}

/// Every term of the lower bound plus validity bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub f_g: f64,
    pub eps_h: f64,
    pub b: f64,
    pub d: f64,
    pub beta: f64,
    pub a_hat: f64,
    pub g: u64,
    pub g_star: u64,
    pub delta1: f64,
    pub delta2: f64,
    pub loss_bound: f64,
    pub delta1_threshold: Option<f64>,
    pub condition_fg: bool,
    pub condition_delta1: bool,
    /// `F_G - eps_h - B`, kept so invalid candidates can still be ranked.
    pub x_raw: f64,
    pub lb: Option<f64>,
    pub confidence: f64,
    pub reasons: Vec<String>,
    /// `a_i` comes from synthetic losses rather than the real distribution.
    pub a_from_synthetic: bool,
    /// Region masses come from the generator rather than the real distribution.
    pub p_from_generator: bool,
    /// Mass of regions never reached by synthetic data.
    pub unreached_mass: f64,
}

impl BoundReport {
    pub fn is_valid(&self) -> bool {
        self.lb.is_some()
    }
}

/// Evaluates the lower bound. Invalidity is reported, never raised.
pub fn lower_bound<T: Real>(
    f_g: T,
    eps_h: T,
    params: &BoundParams<T>,
    counts: &CountVector,
    occupied: &BTreeSet<usize>,
    stats: &RegionStats<T>,
    mass: &RegionMass<T>,
) -> Result<BoundReport> {
    if stats.k() != counts.k() || mass.k() != counts.k() {
        return Err(Error::InvalidInput(
            "counts, stats and mass disagree on the number of regions".into(),
        ));
    }
    let g_star = counts.total();
    if g_star == 0 {
        return Err(Error::InvalidInput("adjusted synthetic total is zero".into()));
    }
    let b = term_b(params, counts, occupied)?;
    let a = stats.a_values();
    let a_hat = stats.a_hat().unwrap_or_else(T::zero);
    let beta = beta_hat(mass, &a)?;
    let d = term_d(a_hat, g_star, params.delta1)?;
    let x = f_g - eps_h - b;

    let mut reasons = Vec::new();
    let condition_fg = f_g >= eps_h + b;
    if !condition_fg {
        reasons.push(format!(
            "F_G = {} is below eps_h + B = {}",
            f_g,
            eps_h + b
        ));
    }
    let threshold = match delta1_threshold(g_star, beta, a_hat) {
        Ok(t) => Some(t),
        Err(e) => {
            reasons.push(e.to_string());
            None
        }
    };
    let condition_delta1 = match threshold {
        Some(t) => params.delta1 > t,
        None => false,
    };
    if let (Some(t), false) = (threshold, condition_delta1) {
        reasons.push(format!("delta1 = {} does not exceed the threshold {}", params.delta1, t));
    }
    if params.confidence() <= T::zero() {
        reasons.push("delta1 + delta2 >= 1: the confidence statement is vacuous".into());
    }
    let unreached: T = mass
        .proportions()
        .iter()
        .enumerate()
        .filter(|(i, _)| stats.a(*i).is_none())
        .map(|(_, &p)| p)
        .sum();
    if unreached.as_f64() > UNREACHED_MASS_FLAG {
        reasons.push(format!(
            "regions holding {unreached} of the mass were never reached by synthetic data"
        ));
    }
    let lb = (condition_fg && condition_delta1).then(|| bound_value(x, d).as_f64());

    Ok(BoundReport {
        f_g: f_g.as_f64(),
        eps_h: eps_h.as_f64(),
        b: b.as_f64(),
        d: d.as_f64(),
        beta: beta.as_f64(),
        a_hat: a_hat.as_f64(),
        g: g_star,
        g_star,
        delta1: params.delta1.as_f64(),
        delta2: params.delta2.as_f64(),
        loss_bound: params.loss_bound.as_f64(),
        delta1_threshold: threshold.map(Real::as_f64),
        condition_fg,
        condition_delta1,
        x_raw: x.as_f64(),
        lb,
        confidence: params.confidence().as_f64(),
        reasons,
        a_from_synthetic: true,
        p_from_generator: true,
        unreached_mass: unreached.as_f64(),
    })
}

/// Monte-Carlo view of the asymptotic bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticDiagnostic {
    /// Mean loss gap `d_i` per region; `None` where pairs were too few.
    pub d: Vec<Option<f64>>,
    /// Region masses under the real distribution.
    pub p_world: Vec<f64>,
    /// Region masses under the generator.
    pub p_gen: Vec<f64>,
    /// `a_i` under the real distribution.
    pub a_world: Vec<Option<f64>>,
    /// `F(P_g, h)`
    pub f_gen: f64,
    pub f_gen_std_error: f64,
    /// `F(P_g, h) - sum_i p_i d_i`
    pub lower: f64,
    /// `F(P_g, h) + sum_i p_i^g d_i`
    pub upper: f64,
    /// `sum_i p_i^g a_i`
    pub macro_average: f64,
    /// `sum_i p_i d_i`
    pub distance: f64,
    /// Standard error of `distance`, propagated from per-region pair counts.
    pub distance_std_error: f64,
    pub warnings: Vec<String>,
}

/// Pairs `z ~ gen` and `s ~ world` falling into the same region to estimate
/// the per-region loss distance `d_i`, then evaluates both asymptotic
/// bounds.
pub fn asymptotic_diag<T, O, G, W>(
    oracle: &O,
    gen: &G,
    world: &W,
    partition: &Partition<T>,
    n_mc: usize,
    seed: u64,
) -> Result<AsymptoticDiagnostic>
where
    T: Real,
    O: LossOracle<T> + ?Sized,
    G: Generator<T> + ?Sized,
    W: Generator<T> + ?Sized,
{
    if n_mc < 2 {
        return Err(Error::InvalidInput("n_mc must be at least 2".into()));
    }
    let k = partition.k();
    let gen_draw = gen.sample(n_mc, rng::derive(seed, 0))?;
    let world_draw = world.sample(n_mc, rng::derive(seed, 1))?;
    let split = |data: &Dataset<T>| -> Result<(Vec<Vec<T>>, Vec<T>)> {
        let regions = partition.assign_all(data)?;
        let losses = oracle.losses(data)?;
        let mut per = vec![Vec::new(); k];
        for (&r, &l) in regions.iter().zip(&losses) {
            per[r].push(l);
        }
        Ok((per, losses))
    };
    let (gen_regions, gen_losses) = split(&gen_draw)?;
    let (world_regions, _) = split(&world_draw)?;

    let n = n_mc as f64;
    let p_world: Vec<f64> = world_regions.iter().map(|v| v.len() as f64 / n).collect();
    let p_gen: Vec<f64> = gen_regions.iter().map(|v| v.len() as f64 / n).collect();
    let gl: Vec<f64> = gen_losses.iter().map(|v| v.as_f64()).collect();
    let f_gen = gl.iter().sum::<f64>() / n;
    let var = gl.iter().map(|l| (l - f_gen).powi(2)).sum::<f64>() / (n - 1.0);

    let mut warnings = Vec::new();
    let mut d = vec![None; k];
    let mut a_world = vec![None; k];
    let mut distance_var = 0.0;
    for i in 0..k {
        let (zg, zw) = (&gen_regions[i], &world_regions[i]);
        if !zw.is_empty() {
            a_world[i] = Some(crate::data::mean(zw).as_f64());
        }
        if zg.is_empty() && zw.is_empty() {
            continue;
        }
        let pairs = zg.len() * zw.len();
        if pairs < 2 {
            warnings.push(format!("region {i}: {pairs} loss pairs, d_i undefined"));
            continue;
        }
        if p_world[i].max(p_gen[i]) > 0.01 && pairs < 30 {
            warnings.push(format!("region {i}: only {pairs} loss pairs"));
        }
        let di = epsilon(zg, zw)?.as_f64();
        d[i] = Some(di);
        // variance of a two-sample U-statistic, bounded by the per-side terms
        let m = zg.len().min(zw.len()) as f64;
        let spread: f64 = zg
            .iter()
            .chain(zw)
            .map(|v| (v.as_f64() - di).powi(2))
            .sum::<f64>()
            / (zg.len() + zw.len()) as f64;
        distance_var += p_world[i].powi(2) * spread / m;
    }
    let distance: f64 = (0..k).filter_map(|i| d[i].map(|v| p_world[i] * v)).sum();
    let distance_gen: f64 = (0..k).filter_map(|i| d[i].map(|v| p_gen[i] * v)).sum();
    let macro_average: f64 = (0..k).filter_map(|i| a_world[i].map(|v| p_gen[i] * v)).sum();

    Ok(AsymptoticDiagnostic {
        d,
        p_world,
        p_gen,
        a_world,
        f_gen,
        f_gen_std_error: (var / n).sqrt(),
        lower: f_gen - distance,
        upper: f_gen + distance_gen,
        macro_average,
        distance,
        distance_std_error: distance_var.sqrt(),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_epsilon(a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for x in a {
            for y in b {
                s += (x - y).abs();
            }
        }
        s / (a.len() * b.len()) as f64
    }

    #[test]
    fn epsilon_examples() {
        assert_eq!(epsilon(&[0.3], &[0.3, 0.3]).unwrap(), 0.0);
        assert_eq!(epsilon(&[0.0, 1.0], &[1.0]).unwrap(), 0.5);
        assert!((epsilon::<f64>(&[0.2], &[0.5, 0.9]).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(epsilon::<f64>(&[], &[1.0]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn epsilon_prefix_route_matches_brute_force() {
        let mut r = rng::rng(5);
        use rand::Rng;
        let a: Vec<f64> = (0..300).map(|_| r.random::<f64>()).collect();
        let b: Vec<f64> = (0..200).map(|_| r.random::<f64>()).collect();
        let got = epsilon(&a, &b).unwrap();
        let want = brute_epsilon(&a, &b);
        assert!((got - want).abs() < 1e-12 * want);
    }

    #[test]
    fn epsilon_h_examples() {
        let counts = CountVector::new(vec![2, 2]);
        let all: BTreeSet<usize> = [0, 1].into_iter().collect();
        let zero = epsilon_h(&[vec![1.0, 1.0], vec![0.0, 0.0]], &[vec![1.0], vec![0.0]], &counts, &all).unwrap();
        assert_eq!(zero, 0.0);
        // eps = (0, 0.5)
        let eps: f64 = epsilon_h(&[vec![1.0, 1.0], vec![0.0, 1.0]], &[vec![1.0], vec![0.0]], &counts, &all).unwrap();
        assert!((eps - 0.25).abs() < 1e-15);
        // only region 0 occupied with eps_0 = 0.1
        let only0: BTreeSet<usize> = [0].into_iter().collect();
        let eps: f64 = epsilon_h(&[vec![0.4, 0.6], vec![0.0, 1.0]], &[vec![0.5], vec![]], &counts, &only0).unwrap();
        assert!((eps - 0.05).abs() < 1e-15);
        assert!(matches!(
            epsilon_h(&[vec![1.0], vec![1.0]], &[vec![1.0], vec![]], &counts, &all),
            Err(Error::InconsistentState(_))
        ));
    }

    #[test]
    fn term_b_examples() {
        let all: BTreeSet<usize> = (0..500).collect();
        let near_one = BoundParams::new(1.0, 1.0 - 1e-15, 1.0);
        assert!(near_one.is_err(), "delta1 = 1 is rejected");
        let p = BoundParams::new(0.5, 1.0 - 1e-15, 1.0).unwrap();
        let uniform = CountVector::new(vec![10; 500]);
        assert!(term_b(&p, &uniform, &all).unwrap() < 1e-7);

        let p = BoundParams::new(0.01, 0.2, 1.0).unwrap();
        // sqrt(0.804719 * 0.002)
        let want = (-0.5 * 0.2f64.ln() * 0.002).sqrt();
        assert!((want - 0.040118).abs() < 1e-6);
        assert!((term_b(&p, &uniform, &all).unwrap() - want).abs() < 1e-15);

        let p = BoundParams::new(0.01, 0.99, 1.0).unwrap();
        let half = CountVector::new(vec![3, 3]);
        let two: BTreeSet<usize> = [0, 1].into_iter().collect();
        assert!((term_b::<f64>(&p, &half, &two).unwrap() - 0.0501257).abs() < 1e-7);
    }

    #[test]
    fn term_d_examples() {
        assert!(term_d(1.0, 4, 1.0 - 1e-15).unwrap() < 1e-15);
        assert!((term_d::<f64>(1.0, 4, 0.99).unwrap() - 0.00251258).abs() < 1e-8);
        assert!((term_d::<f64>(0.5, 50_000, 0.01).unwrap() - 4.60517e-5).abs() < 1e-10);
        assert!(term_d(1.0, 4, 0.0).is_err());
        assert!(term_d(1.0, 4, 1.5).is_err());
    }

    #[test]
    fn beta_examples() {
        let m = RegionMass::from_proportions(vec![0.5, 0.5], 2).unwrap();
        assert_eq!(beta_hat(&m, &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(beta_hat(&m, &[1.0, 0.5]).unwrap(), 1.25);
        let one = RegionMass::from_proportions(vec![1.0], 1).unwrap();
        assert_eq!(beta_hat(&one, &[1.0]).unwrap(), 2.0);
    }

    #[test]
    fn threshold_examples() {
        assert!((delta1_threshold(4, 1.25, 1.0).unwrap() - (-2.5f64).exp()).abs() < 1e-15);
        assert!(((-2.5f64).exp() - 0.082085).abs() < 1e-6);
        assert_eq!(delta1_threshold(4, f64::INFINITY, 1.0).unwrap(), 0.0);
        assert!(delta1_threshold(50_000, 0.02, 1.0).unwrap() < 1e-200);
        assert!(matches!(
            delta1_threshold(4, 1.0, 0.0),
            Err(Error::BoundInapplicable(_))
        ));
    }

    fn worked_example(delta2: f64) -> BoundReport {
        let synthetic = vec![vec![1.0, 1.0], vec![0.0, 1.0]];
        let anchors = vec![vec![1.0], vec![0.0]];
        let counts = CountVector::new(vec![2, 2]);
        let occupied: BTreeSet<usize> = [0, 1].into_iter().collect();
        let stats = RegionStats::from_losses(anchors.clone(), &synthetic).unwrap();
        let mass = RegionMass::from_proportions(vec![0.5, 0.5], 100).unwrap();
        let params = BoundParams::new(0.99, delta2, 1.0).unwrap();
        let f_g = weighted_mean_loss(&synthetic, &counts).unwrap();
        let eps_h = epsilon_h(&synthetic, &anchors, &counts, &occupied).unwrap();
        lower_bound(f_g, eps_h, &params, &counts, &occupied, &stats, &mass).unwrap()
    }

    #[test]
    fn worked_example_by_hand() {
        let r = worked_example(0.99);
        assert_eq!(r.f_g, 0.75);
        assert_eq!(r.eps_h, 0.25);
        assert!((r.b - 0.0501257).abs() < 1e-7);
        assert_eq!(r.a_hat, 1.0);
        assert_eq!(r.beta, 1.25);
        assert!((r.d - 0.00251258).abs() < 1e-8);
        assert!((r.delta1_threshold.unwrap() - 0.082085).abs() < 1e-6);
        assert!(r.condition_fg && r.condition_delta1);
        assert!((r.lb.unwrap() - 0.38747).abs() < 1e-5);
    }

    #[test]
    fn large_b_invalidates() {
        let r = worked_example((-2.0f64).exp());
        assert!((r.b - 0.70711).abs() < 1e-5);
        assert!(!r.condition_fg);
        assert!(r.lb.is_none());
        assert!(!r.reasons.is_empty());
    }

    #[test]
    fn zero_margin_gives_zero_bound() {
        assert_eq!(bound_value(0.0, 0.3), 0.0);
        assert_eq!(bound_value(0.0, 0.0), 0.0);
    }

    #[test]
    fn accumulator_keeps_exact_mean_with_capped_memory() {
        let mut acc = LossAccumulator::new(4, 1);
        for i in 0..100 {
            acc.push(i as f64);
        }
        assert_eq!(acc.count(), 100);
        assert_eq!(acc.mean(), Some(49.5));
        assert_eq!(acc.retained().len(), 4);
    }
}
