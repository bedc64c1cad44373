//! Simulation harness on the Gaussian-mixture world: dataset splits, the
//! generator-shift sweep, method comparison and the test-size sweep.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, BaselineResult};
use crate::data::{class_index, Dataset, LossKind, LossOracle, ModelLoss};
use crate::error::{Error, Result};
use crate::generator::{kl_mc, Generator, KlVariant, ShiftedGmm};
use crate::models::ModelSpec;
use crate::osyn::{self, OsynConfig};
use crate::rng::{self, stream};
use crate::scalar::Real;

/// Shift values of the default sweep.
pub const DEFAULT_SHIFTS: [f64; 10] = [0.0, -0.25, -0.5, -0.75, -1.0, -1.125, -1.25, -1.5, -1.75, -2.0];

// Rejection sampling may draw at most this many times the requested size.
const REJECTION_BUDGET: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Composition {
    Iid,
    SingleClass(usize),
    /// Exact count per class index.
    ClassCounts(Vec<usize>),
    /// The same count for every class of the world.
    Balanced(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub n_train: usize,
    pub n_small: usize,
    pub n_oracle: usize,
    pub composition: Composition,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            n_train: 5_000,
            n_small: 500,
            n_oracle: 20_000,
            composition: Composition::Iid,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Splits<T> {
    pub train: Dataset<T>,
    pub small: Dataset<T>,
    pub oracle: Dataset<T>,
}

fn quotas(spec: &SplitSpec, classes: usize) -> Result<Option<Vec<usize>>> {
    let q = match &spec.composition {
        Composition::Iid => return Ok(None),
        Composition::SingleClass(c) => {
            if *c >= classes {
                return Err(Error::Composition(format!("class {c} does not exist")));
            }
            let mut q = vec![0; classes];
            q[*c] = spec.n_small;
            q
        }
        Composition::ClassCounts(counts) => {
            if counts.len() > classes && counts[classes..].iter().any(|&c| c > 0) {
                return Err(Error::Composition("counts name a class that does not exist".into()));
            }
            let mut q = counts.clone();
            q.resize(classes, 0);
            q
        }
        Composition::Balanced(per) => vec![*per; classes],
    };
    if q.iter().sum::<usize>() != spec.n_small {
        return Err(Error::Composition(format!(
            "class counts sum to {}, not n_small = {}",
            q.iter().sum::<usize>(),
            spec.n_small
        )));
    }
    Ok(Some(q))
}

/// Draws the training set, the small test set `S` and the oracle set from
/// independent streams of `seed`. Non-iid compositions are filled by
/// rejection on labels.
pub fn make_splits<T: Real>(world: &ShiftedGmm<T>, spec: &SplitSpec, seed: u64) -> Result<Splits<T>> {
    if spec.n_train == 0 || spec.n_small == 0 || spec.n_oracle == 0 {
        return Err(Error::InvalidInput("split sizes must be positive".into()));
    }
    let mut train = world.sample(spec.n_train, rng::derive(seed, stream::SPLIT_TRAIN))?;
    let mut oracle = world.sample(spec.n_oracle, rng::derive(seed, stream::SPLIT_ORACLE))?;
    let small = draw_small(world, spec, seed)?;
    train.fill_ids("train-");
    oracle.fill_ids("oracle-");
    Ok(Splits {
        train,
        small,
        oracle,
    })
}

/// The small test set of [`make_splits`] alone.
pub fn draw_small<T: Real>(world: &ShiftedGmm<T>, spec: &SplitSpec, seed: u64) -> Result<Dataset<T>> {
    if spec.n_small == 0 {
        return Err(Error::InvalidInput("split sizes must be positive".into()));
    }
    let small_seed = rng::derive(seed, stream::SPLIT_SMALL);
    let mut small = match quotas(spec, world.base().components())? {
        None => world.sample(spec.n_small, small_seed)?,
        Some(mut need) => {
            let budget = REJECTION_BUDGET * spec.n_small;
            let chunk = spec.n_small.max(256);
            let mut drawn = 0;
            let mut out = Dataset::empty(world.dim());
            let mut round = 0u64;
            while out.len() < spec.n_small {
                if drawn >= budget {
                    return Err(Error::Composition(format!(
                        "only {} of {} samples found within {budget} draws",
                        out.len(),
                        spec.n_small
                    )));
                }
                let take = chunk.min(budget - drawn);
                let batch = world.sample(take, rng::derive(small_seed, round))?;
                round += 1;
                drawn += take;
                for s in batch.into_samples() {
                    let c = class_index(s.label).expect("mixture labels are class indices");
                    if need[c] > 0 {
                        need[c] -= 1;
                        out.push(s)?;
                    }
                }
            }
            out
        }
    };
    small.fill_ids("s-");
    Ok(small)
}

/// A fitted model in a world with its three splits.
#[derive(Debug, Clone)]
pub struct Experiment<T: Real> {
    pub world: ShiftedGmm<T>,
    pub splits: Splits<T>,
    pub model: ModelSpec,
    pub oracle: ModelLoss<T>,
    /// Mean loss on the oracle split.
    pub oracle_loss: T,
}

impl<T: Real> Experiment<T> {
    pub fn new(world: ShiftedGmm<T>, spec: &SplitSpec, model: ModelSpec, kind: LossKind, seed: u64) -> Result<Self> {
        let splits = make_splits(&world, spec, seed)?;
        Self::from_splits(world, splits, model, kind)
    }

    pub fn from_splits(world: ShiftedGmm<T>, splits: Splits<T>, model: ModelSpec, kind: LossKind) -> Result<Self> {
        let handle = model.fit(&splits.train)?;
        let oracle = ModelLoss::for_kind(handle, kind, &splits.small)?;
        let oracle_loss = oracle.mean_loss(&splits.oracle)?;
        Ok(Self {
            world,
            splits,
            model,
            oracle,
            oracle_loss,
        })
    }

    /// `S` redrawn under `spec`'s size and composition; the training and
    /// oracle sets and the fitted model stay as they are.
    pub fn recompose(&self, spec: &SplitSpec, seed: u64) -> Result<Self> {
        Ok(self.with_small(draw_small(&self.world, spec, seed)?))
    }

    /// The same model and world evaluated with a different small test set.
    pub fn with_small(&self, small: Dataset<T>) -> Self {
        Self {
            splits: Splits {
                small,
                ..self.splits.clone()
            },
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub a: f64,
    pub lb: Option<f64>,
    /// `oracle_loss - lb`, present when the bound is valid.
    pub gap: Option<f64>,
    pub oracle_loss: f64,
    pub kl: f64,
    pub kl_std_error: f64,
    pub f_g: f64,
    pub eps_h: f64,
    pub b: f64,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Pearson correlation of `(gap, kl)` over valid rows; `None` with fewer
    /// than three.
    pub pearson: Option<f64>,
}

/// Population Pearson correlation; `None` for fewer than 3 pairs or a
/// constant column.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 3 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Runs the search once per shift with the generator `world` shifted by
/// `a`. Every row uses `cfg.seed`, so rows differ only through the shift.
pub fn sweep_shift<T: Real>(
    exp: &Experiment<T>,
    shifts: &[f64],
    cfg: &OsynConfig,
    kl_samples: usize,
    kl_variant: KlVariant,
    seed: u64,
) -> Result<SweepResult> {
    let mut rows = Vec::with_capacity(shifts.len());
    for &a in shifts {
        let gen = exp.world.reshifted(T::from_f64_lossy(a));
        let kl = kl_mc(
            &gen,
            &exp.world,
            kl_samples,
            rng::derive(seed, stream::KL),
            kl_variant,
        )?;
        let r = osyn::run(&exp.oracle, &exp.splits.small, &gen, cfg)?;
        let oracle_loss = exp.oracle_loss.as_f64();
        rows.push(SweepRow {
            a,
            lb: r.report.lb,
            gap: r.report.lb.map(|lb| oracle_loss - lb),
            oracle_loss,
            kl: kl.estimate,
            kl_std_error: kl.std_error,
            f_g: r.report.f_g,
            eps_h: r.report.eps_h,
            b: r.report.b,
            reasons: r.report.reasons,
        });
    }
    let (gaps, kls): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter_map(|r| r.gap.map(|g| (g, r.kl)))
        .unzip();
    Ok(SweepResult {
        pearson: pearson(&gaps, &kls),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub model: String,
    pub oracle_loss: f64,
    pub test_loss: f64,
    pub osyn_lb: Option<f64>,
    /// `F_G - eps_h - B`, reported even when the bound is invalid.
    pub osyn_margin: f64,
    pub bootstrap: f64,
    pub syn_wo_opt: f64,
    pub gap_osyn: Option<f64>,
    pub gap_bootstrap: f64,
    pub gap_syn_wo_opt: f64,
    pub g_star: u64,
    pub reasons: Vec<String>,
}

/// OSYN, bootstrap and unoptimized synthetic loss on one experiment.
/// Gaps are `oracle - estimate`; positive means an underestimate. The
/// bootstrap percentile is `delta`, normally `delta1 + delta2`.
pub fn compare_methods<T, G>(
    exp: &Experiment<T>,
    gen: &G,
    cfg: &OsynConfig,
    resamples: usize,
    delta: f64,
    seed: u64,
) -> Result<(CompareRow, Vec<BaselineResult>)>
where
    T: Real,
    G: Generator<T> + ?Sized,
{
    let r = osyn::run(&exp.oracle, &exp.splits.small, gen, cfg)?;
    let test_losses = exp.oracle.losses(&exp.splits.small)?;
    let boot_seed = rng::derive(seed, stream::BOOTSTRAP);
    let boot = baselines::bootstrap_loss(&test_losses, resamples, delta, boot_seed)?.as_f64();
    let g_star = r.counts.total();
    let syn_seed = rng::derive(seed, stream::SYN_WO_OPT);
    let syn = baselines::syn_wo_opt(&exp.oracle, gen, g_star, syn_seed)?.as_f64();
    let oracle = exp.oracle_loss.as_f64();
    let row = CompareRow {
        model: exp.model.to_string(),
        oracle_loss: oracle,
        test_loss: r.test_loss.as_f64(),
        osyn_lb: r.report.lb,
        osyn_margin: r.report.x_raw,
        bootstrap: boot,
        syn_wo_opt: syn,
        gap_osyn: r.report.lb.map(|lb| oracle - lb),
        gap_bootstrap: oracle - boot,
        gap_syn_wo_opt: oracle - syn,
        g_star,
        reasons: r.report.reasons,
    };
    let baselines = vec![
        BaselineResult {
            method: "bootstrap".into(),
            estimate: boot,
            resamples: Some(resamples),
            delta: Some(delta),
            g_star: None,
            seed: boot_seed,
        },
        BaselineResult {
            method: "syn_wo_opt".into(),
            estimate: syn,
            resamples: None,
            delta: None,
            g_star: Some(g_star),
            seed: syn_seed,
        },
    ];
    Ok((row, baselines))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeRow {
    pub size: usize,
    pub row: CompareRow,
}

/// Compares the methods for several sizes of `S`. The sets are nested
/// prefixes of one draw of the largest size; the partition follows `|S|`.
pub fn size_sweep<T, G>(
    exp: &Experiment<T>,
    gen: &G,
    sizes: &[usize],
    cfg: &OsynConfig,
    resamples: usize,
    delta: f64,
    seed: u64,
) -> Result<Vec<SizeRow>>
where
    T: Real,
    G: Generator<T> + ?Sized,
{
    if let Some(&bad) = sizes.iter().find(|&&s| s < 50) {
        return Err(Error::InvalidInput(format!("test size {bad} is below 50")));
    }
    let largest = sizes.iter().copied().max().unwrap_or(0);
    if largest > exp.splits.small.len() {
        return Err(Error::InvalidInput(format!(
            "test size {largest} exceeds the {} available small-set samples",
            exp.splits.small.len()
        )));
    }
    sizes
        .iter()
        .map(|&size| {
            let sub = exp.with_small(exp.splits.small.head(size));
            let cfg = OsynConfig {
                partitions: None,
                ..cfg.clone()
            };
            let (row, _) = compare_methods(&sub, gen, &cfg, resamples, delta, seed)?;
            Ok(SizeRow { size, row })
        })
        .collect()
}

/// Class with the highest zero-one error of `exp`'s model on the oracle
/// split, ties to the lower index.
pub fn hardest_class<T: Real>(exp: &Experiment<T>) -> Result<usize> {
    let classes = exp.world.base().components();
    let mut wrong = vec![0usize; classes];
    let mut total = vec![0usize; classes];
    for s in &exp.splits.oracle {
        let c = class_index(s.label).ok_or_else(|| Error::InvalidInput("non-class label".into()))?;
        total[c] += 1;
        if exp.oracle.model().predict(&s.features)? != s.label {
            wrong[c] += 1;
        }
    }
    let rate = |c: usize| wrong[c] as f64 / total[c].max(1) as f64;
    Ok((0..classes).fold(0, |best, c| if rate(c) > rate(best) { c } else { best }))
}

/// Class with the largest mixture weight; the first one on ties.
pub fn largest_class<T: Real>(world: &ShiftedGmm<T>) -> usize {
    let w = world.base().weights();
    (0..w.len()).fold(0, |best, c| if w[c] > w[best] { c } else { best })
}

/// A seeded permutation of `data`.
pub fn shuffled<T: Real>(data: &Dataset<T>, seed: u64) -> Dataset<T> {
    let mut samples = data.samples().to_vec();
    let mut r = rng::rng(seed);
    for i in (1..samples.len()).rev() {
        samples.swap(i, r.random_range(0..=i));
    }
    Dataset::new(data.dim(), samples).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::GmmParams;

    fn world() -> ShiftedGmm<f64> {
        ShiftedGmm::unshifted(GmmParams::five_class_world())
    }

    fn small_spec(composition: Composition, n_small: usize) -> SplitSpec {
        SplitSpec {
            n_train: 200,
            n_small,
            n_oracle: 200,
            composition,
        }
    }

    #[test]
    fn iid_small_set_matches_weights() {
        let s = make_splits(&world(), &small_spec(Composition::Iid, 4000), 3).unwrap();
        let w = world().base().weights().to_vec();
        for (c, &p) in w.iter().enumerate() {
            let n = s.small.labels().filter(|&l| l == c as f64).count() as f64;
            let sd = (4000.0 * p * (1.0 - p)).sqrt();
            assert!((n - 4000.0 * p).abs() < 4.0 * sd, "class {c}");
        }
    }

    #[test]
    fn single_class_and_counts() {
        let s = make_splits(&world(), &small_spec(Composition::SingleClass(4), 500), 1).unwrap();
        assert!(s.small.labels().all(|l| l == 4.0));
        let s = make_splits(&world(), &small_spec(Composition::ClassCounts(vec![0, 0, 0, 300, 200]), 500), 1).unwrap();
        assert_eq!(s.small.labels().filter(|&l| l == 3.0).count(), 300);
        assert_eq!(s.small.labels().filter(|&l| l == 4.0).count(), 200);
        let s = make_splits(&world(), &small_spec(Composition::Balanced(50), 250), 1).unwrap();
        for c in 0..5 {
            assert_eq!(s.small.labels().filter(|&l| l == c as f64).count(), 50);
        }
    }

    #[test]
    fn composition_errors() {
        let spec = small_spec(Composition::SingleClass(0), 2);
        assert!(make_splits(&world(), &spec, 1).is_ok());
        let spec = small_spec(Composition::ClassCounts(vec![1, 1]), 3);
        assert!(matches!(make_splits(&world(), &spec, 1), Err(Error::Composition(_))));
        let spec = small_spec(Composition::SingleClass(7), 3);
        assert!(matches!(make_splits(&world(), &spec, 1), Err(Error::Composition(_))));
        let zero = GmmParams::new(
            world().base().means().to_vec(),
            world().base().covariances().to_vec(),
            vec![0.0, 0.25, 0.25, 0.25, 0.25],
        )
        .unwrap();
        let spec = small_spec(Composition::SingleClass(0), 5);
        assert!(matches!(
            make_splits(&ShiftedGmm::unshifted(zero), &spec, 1),
            Err(Error::Composition(_))
        ));
    }

    #[test]
    fn splits_are_reproducible() {
        let a = make_splits(&world(), &small_spec(Composition::Iid, 50), 9).unwrap();
        let b = make_splits(&world(), &small_spec(Composition::Iid, 50), 9).unwrap();
        assert_eq!(a.small, b.small);
        assert_eq!(a.train, b.train);
        assert_ne!(a.train.samples()[0], a.oracle.samples()[0]);
    }

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&[1.0, 2.0], &[1.0, 2.0]), None);
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), None);
    }
}
