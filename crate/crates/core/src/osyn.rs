//! Iterative search for the synthetic set that maximizes the lower bound.
//!
//! Each region `i` keeps the `g_i*` candidates with the highest
//! `Target_i(u) = l(u) - mean_{s in S_i} |l(u) - l(s)|`. Every iteration
//! draws a fresh batch, routes it to regions, and reselects from the union
//! of the retained set and the new arrivals.

use std::collections::BTreeSet;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bound::{self, BoundParams, BoundReport, RegionStats};
use crate::counts::{self, CountVector};
use crate::data::{Dataset, LabeledSample, LossOracle};
use crate::error::{Error, Result};
use crate::generator::{self, Generator, RegionMass};
use crate::partition::Partition;
use crate::rng::{self, stream};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OsynConfig {
    /// `T`
    pub iterations: usize,
    /// `N`, samples drawn per iteration.
    pub batch: usize,
    /// Nominal synthetic total before adjustment.
    pub g: u64,
    /// Count adjustment width.
    pub b: f64,
    /// Neighbour count used for the search radii.
    pub k_radius: usize,
    pub delta1: f64,
    pub delta2: f64,
    /// `K`; `None` means one region per test sample.
    pub partitions: Option<usize>,
    pub seed: u64,
    pub radius_filter: bool,
    /// Draws used to estimate region masses.
    pub mass_samples: usize,
    /// Retained losses per region, as a multiple of `g_i*`.
    pub loss_cap_factor: usize,
    /// Weight the bound by realized region sizes instead of `g_i*`.
    pub strict_weights: bool,
}

impl Default for OsynConfig {
    fn default() -> Self {
        Self {
            iterations: 15,
            batch: 50_000,
            g: 5_000,
            b: 1.0,
            k_radius: 10,
            delta1: 0.01,
            delta2: 0.2,
            partitions: None,
            seed: 0,
            radius_filter: true,
            mass_samples: generator::DEFAULT_MASS_SAMPLES,
            loss_cap_factor: 10,
            strict_weights: false,
        }
    }
}

impl OsynConfig {
    /// Checks the configuration against a test set of `n` samples.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::parameter("iterations", 0.0, "must be at least 1"));
        }
        if self.batch < 1 {
            return Err(Error::parameter("batch", 0.0, "must be at least 1"));
        }
        if !(self.b >= 0.0) || !self.b.is_finite() {
            return Err(Error::parameter("b", self.b, "must be finite and non-negative"));
        }
        let k = self.partitions.unwrap_or(n);
        if k < 1 || k > n {
            return Err(Error::InvalidK { k, n });
        }
        if self.g < k as u64 {
            return Err(Error::parameter("g", self.g as f64, "must be at least K"));
        }
        if self.radius_filter && (self.k_radius < 1 || self.k_radius >= n) {
            return Err(Error::InvalidNeighbours {
                k: self.k_radius,
                n,
            });
        }
        if self.mass_samples < k {
            return Err(Error::parameter(
                "mass_samples",
                self.mass_samples as f64,
                "must be at least K",
            ));
        }
        BoundParams::new(self.delta1, self.delta2, 1.0)?;
        Ok(())
    }

    pub fn confidence_delta(&self) -> f64 {
        self.delta1 + self.delta2
    }
}

/// `l - mean_s |l - l_s|` over the anchor losses of one region.
pub fn target_score<T: Real>(loss: T, anchors: &[T]) -> Result<T> {
    if anchors.is_empty() {
        return Err(Error::EmptyInput("anchor losses"));
    }
    let spread: T = anchors.iter().map(|&s| (loss - s).abs()).sum();
    Ok(loss - spread / T::from_usize_lossy(anchors.len()))
}

// Regions without anchors have no consistency term; the loss alone ranks.
fn score<T: Real>(loss: T, anchors: &[T]) -> T {
    target_score(loss, anchors).unwrap_or(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate<T> {
    pub sample: LabeledSample<T>,
    pub loss: T,
    pub score: T,
}

/// Keeps the `g_star_i` best-scoring candidates, ties going to the earlier
/// entry. The result is ordered by decreasing score. Returns the shortfall
/// when fewer candidates exist.
pub fn select_scored<T: Real>(mut candidates: Vec<Candidate<T>>, g_star_i: usize) -> (Vec<Candidate<T>>, usize) {
    candidates.sort_by(|a, b| b.score.partial_cmp(&a.score).expect("finite scores"));
    let shortfall = g_star_i.saturating_sub(candidates.len());
    candidates.truncate(g_star_i);
    (candidates, shortfall)
}

/// [`select_scored`] on raw `(sample, loss)` pairs scored against
/// `anchors`. An empty anchor list ranks by loss.
pub fn select_top<T: Real>(
    candidates: Vec<(LabeledSample<T>, T)>,
    g_star_i: usize,
    anchors: &[T],
) -> (Vec<Candidate<T>>, usize) {
    let scored = candidates
        .into_iter()
        .map(|(sample, loss)| Candidate {
            score: score(loss, anchors),
            sample,
            loss,
        })
        .collect();
    select_scored(scored, g_star_i)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub iteration: usize,
    /// Sum of `Target` over the selected points, counting every unfilled
    /// slot at `-C_h`.
    pub objective: f64,
    /// Sum of `Target` over the selected points only.
    pub objective_raw: f64,
    pub selected: u64,
    pub lb: Option<f64>,
    pub kept: usize,
    pub dropped_by_radius: usize,
}

#[derive(Debug, Clone)]
pub struct OsynResult<T> {
    /// `G_opt`, region by region.
    pub selected: Dataset<T>,
    /// Region of every selected sample.
    pub regions: Vec<usize>,
    pub losses: Vec<T>,
    pub report: BoundReport,
    pub trajectory: Vec<TrajectoryPoint>,
    /// Wall-clock seconds per iteration.
    pub timings: Vec<f64>,
    pub raw_counts: CountVector,
    /// Adjusted counts `g_i*`.
    pub counts: CountVector,
    pub mass: RegionMass<T>,
    pub partition: Partition<T>,
    pub occupied: BTreeSet<usize>,
    pub underfilled: Vec<usize>,
    /// Mean anchor loss `F(S, h)`.
    pub test_loss: T,
}

struct Setup<T> {
    partition: Partition<T>,
    anchors: Vec<Vec<T>>,
    occupied: BTreeSet<usize>,
    mass: RegionMass<T>,
    raw_counts: CountVector,
    counts: CountVector,
    params: BoundParams<T>,
    test_loss: T,
}

fn setup<T, O, G>(
    oracle: &O,
    test: &Dataset<T>,
    gen: &G,
    cfg: &OsynConfig,
    mass: Option<RegionMass<T>>,
) -> Result<Setup<T>>
where
    T: Real,
    O: LossOracle<T> + ?Sized,
    G: Generator<T> + ?Sized,
{
    if test.len() < 2 {
        return Err(Error::InvalidInput("the test set needs at least 2 samples".into()));
    }
    if gen.dim() != test.dim() {
        return Err(Error::DimensionMismatch {
            expected: test.dim(),
            got: gen.dim(),
        });
    }
    cfg.validate(test.len())?;
    let k = cfg.partitions.unwrap_or(test.len());
    let mut partition = Partition::build(test, k, rng::derive(cfg.seed, stream::PARTITION))?;
    let test_losses = oracle.losses(test)?;
    let mut anchors = vec![Vec::new(); k];
    for (r, &l) in partition.assign_all(test)?.into_iter().zip(&test_losses) {
        anchors[r].push(l);
    }
    let occupied = (0..k).filter(|&i| !anchors[i].is_empty()).collect();
    if cfg.radius_filter {
        let radii = partition.knn_radii(test, cfg.k_radius)?;
        partition = partition.with_radii(radii)?;
    }
    let mass = match mass {
        Some(m) if m.k() != k => {
            return Err(Error::InvalidInput(format!(
                "region masses cover {} regions, the partition has {k}",
                m.k()
            )))
        }
        Some(m) => m,
        None => generator::estimate_region_mass(
            gen,
            &partition,
            cfg.mass_samples,
            rng::derive(cfg.seed, stream::MASS),
        )?,
    };
    let raw_counts = counts::sample_counts(&mass, cfg.g, rng::derive(cfg.seed, stream::COUNTS))?;
    let adjusted = counts::adjust_counts(&raw_counts, cfg.b)?;
    let params = BoundParams::new(
        T::from_f64_lossy(cfg.delta1),
        T::from_f64_lossy(cfg.delta2),
        oracle.loss_bound(),
    )?;
    Ok(Setup {
        partition,
        anchors,
        occupied,
        mass,
        raw_counts,
        counts: adjusted,
        params,
        test_loss: crate::data::mean(&test_losses),
    })
}

/// The partition and region masses that [`run`] would build for `test`
/// and `cfg`, for saving and passing to [`run_with_mass`] later.
pub fn estimate_mass<T, G>(test: &Dataset<T>, gen: &G, cfg: &OsynConfig) -> Result<(Partition<T>, RegionMass<T>)>
where
    T: Real,
    G: Generator<T> + ?Sized,
{
    if gen.dim() != test.dim() {
        return Err(Error::DimensionMismatch {
            expected: test.dim(),
            got: gen.dim(),
        });
    }
    cfg.validate(test.len())?;
    let k = cfg.partitions.unwrap_or(test.len());
    let partition = Partition::build(test, k, rng::derive(cfg.seed, stream::PARTITION))?;
    let mass = generator::estimate_region_mass(
        gen,
        &partition,
        cfg.mass_samples,
        rng::derive(cfg.seed, stream::MASS),
    )?;
    Ok((partition, mass))
}

struct State<T> {
    optimal: Vec<Vec<Candidate<T>>>,
    stats: RegionStats<T>,
}

impl<T: Real> State<T> {
    fn objective(&self, counts: &CountVector, loss_bound: T) -> (f64, f64) {
        let mut padded = T::zero();
        let mut raw = T::zero();
        for (i, opt) in self.optimal.iter().enumerate() {
            // kept scores are sorted descending; summing them before the
            // padding keeps the float sum monotone under reselection
            let mut region = T::zero();
            for c in opt {
                region += c.score;
            }
            raw += region;
            let empty = counts.get(i).saturating_sub(opt.len() as u64);
            for _ in 0..empty {
                region -= loss_bound;
            }
            padded += region;
        }
        (padded.as_f64(), raw.as_f64())
    }

    fn report(&self, s: &Setup<T>, cfg: &OsynConfig) -> Result<BoundReport> {
        let selected: Vec<Vec<T>> = self
            .optimal
            .iter()
            .map(|o| o.iter().map(|c| c.loss).collect())
            .collect();
        let weights = if cfg.strict_weights {
            CountVector::new(selected.iter().map(|v| v.len() as u64).collect())
        } else {
            s.counts.clone()
        };
        if selected.iter().all(Vec::is_empty) || weights.total() == 0 {
            return Err(Error::NoValidBound("no region received any synthetic point".into()));
        }
        let f_g = bound::weighted_mean_loss(&selected, &weights)?;
        let eps_h = bound::epsilon_h(&selected, &s.anchors, &weights, &s.occupied)?;
        let mut report = bound::lower_bound(
            f_g,
            eps_h,
            &s.params,
            &weights,
            &s.occupied,
            &self.stats,
            &s.mass,
        )?;
        report.g = cfg.g;
        let under = underfilled(&self.optimal, &s.counts);
        if !under.is_empty() {
            report
                .reasons
                .push(format!("{} regions hold fewer points than g_i*", under.len()));
        }
        Ok(report)
    }
}

fn underfilled<T>(optimal: &[Vec<Candidate<T>>], counts: &CountVector) -> Vec<usize> {
    optimal
        .iter()
        .enumerate()
        .filter(|(i, o)| (o.len() as u64) < counts.get(*i))
        .map(|(i, _)| i)
        .collect()
}

/// Runs the search. Deterministic for a fixed `cfg.seed`.
pub fn run<T, O, G>(oracle: &O, test: &Dataset<T>, gen: &G, cfg: &OsynConfig) -> Result<OsynResult<T>>
where
    T: Real,
    O: LossOracle<T> + ?Sized,
    G: Generator<T> + ?Sized,
{
    run_with_mass(oracle, test, gen, cfg, None)
}

/// [`run`] with region masses supplied up front (for instance read back
/// from a file) instead of estimated from `gen`. They must cover the
/// partition that `cfg` builds on `test`.
pub fn run_with_mass<T, O, G>(
    oracle: &O,
    test: &Dataset<T>,
    gen: &G,
    cfg: &OsynConfig,
    mass: Option<RegionMass<T>>,
) -> Result<OsynResult<T>>
where
    T: Real,
    O: LossOracle<T> + ?Sized,
    G: Generator<T> + ?Sized,
{
    let s = setup(oracle, test, gen, cfg, mass)?;
    let k = s.partition.k();
    let caps: Vec<usize> = (0..k)
        .map(|i| cfg.loss_cap_factor * (s.counts.get(i) as usize).max(1))
        .collect();
    let mut state = State {
        optimal: vec![Vec::new(); k],
        stats: RegionStats::new(
            s.anchors.clone(),
            &caps,
            rng::derive(cfg.seed, stream::RESERVOIR),
        )?,
    };
    let iteration_root = rng::derive(cfg.seed, stream::ITERATION);
    let mut trajectory: Vec<TrajectoryPoint> = Vec::with_capacity(cfg.iterations);
    let mut timings = Vec::with_capacity(cfg.iterations);
    let mut last_report: Option<BoundReport> = None;

    for t in 1..=cfg.iterations {
        let start = Instant::now();
        let batch = match gen.sample(cfg.batch, rng::derive(iteration_root, t as u64)) {
            Ok(b) => b,
            Err(cause) => {
                return Err(Error::PartialRun {
                    completed: t - 1,
                    cause: Box::new(cause),
                    last: last_report.map(Box::new),
                    trajectory,
                })
            }
        };
        let placed: Vec<(usize, T)> = batch
            .samples()
            .par_iter()
            .map(|x| s.partition.assign_with_distance(&x.features))
            .collect::<Result<_>>()?;
        let radii = s.partition.radii();
        let keep: Vec<bool> = placed
            .iter()
            .map(|&(r, d)| radii.is_none_or(|radii| d <= radii[r]))
            .collect();
        let losses: Vec<Option<T>> = batch
            .samples()
            .par_iter()
            .zip(&keep)
            .map(|(x, &k)| if k { oracle.loss(x).map(Some) } else { Ok(None) })
            .collect::<Result<_>>()?;

        let mut buckets: Vec<Vec<Candidate<T>>> = vec![Vec::new(); k];
        let mut kept = 0;
        for (j, (sample, loss)) in batch.into_samples().into_iter().zip(losses).enumerate() {
            let Some(loss) = loss else { continue };
            let region = placed[j].0;
            kept += 1;
            state.stats.push(region, loss);
            if s.counts.get(region) == 0 {
                continue;
            }
            let sample = if sample.id.is_some() {
                sample
            } else {
                sample.with_id(format!("t{t}-{j}"))
            };
            buckets[region].push(Candidate {
                score: score(loss, &s.anchors[region]),
                sample,
                loss,
            });
        }

        let previous = std::mem::take(&mut state.optimal);
        state.optimal = previous
            .into_par_iter()
            .zip(buckets)
            .enumerate()
            .map(|(i, (mut search, fresh))| {
                search.extend(fresh);
                select_scored(search, s.counts.get(i) as usize).0
            })
            .collect();

        let (objective, objective_raw) = state.objective(&s.counts, s.params.loss_bound);
        let report = state.report(&s, cfg).ok();
        trajectory.push(TrajectoryPoint {
            iteration: t,
            objective,
            objective_raw,
            selected: state.optimal.iter().map(|o| o.len() as u64).sum(),
            lb: report.as_ref().and_then(|r| r.lb),
            kept,
            dropped_by_radius: keep.len() - kept,
        });
        if report.is_some() {
            last_report = report;
        }
        timings.push(start.elapsed().as_secs_f64());
    }

    let report = state.report(&s, cfg)?;
    let underfilled = underfilled(&state.optimal, &s.counts);
    let mut regions = Vec::new();
    let mut losses = Vec::new();
    let mut samples = Vec::new();
    for (i, opt) in state.optimal.into_iter().enumerate() {
        for c in opt {
            regions.push(i);
            losses.push(c.loss);
            samples.push(c.sample);
        }
    }
    Ok(OsynResult {
        selected: Dataset::new(test.dim(), samples)?,
        regions,
        losses,
        report,
        trajectory,
        timings,
        raw_counts: s.raw_counts,
        counts: s.counts,
        mass: s.mass,
        partition: s.partition,
        occupied: s.occupied,
        underfilled,
        test_loss: s.test_loss,
    })
}
