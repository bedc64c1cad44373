//! Acceptance suite. Runs every criterion concurrently, prints one
//! `PASS`/`FAIL` line per criterion in order and fails if any failed.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;

use rand::Rng;

use osyn::bound::{epsilon_h, lower_bound, weighted_mean_loss, BoundParams, RegionStats};
use osyn::counts::{adjust_counts, adjust_counts_against, sample_counts, CountVector};
use osyn::data::{mean_loss, LossKind, ModelLoss};
use osyn::generator::{kl_mc, Generator, GmmParams, KlVariant, LinearWorld, RegionMass, ShiftedGmm};
use osyn::models::ModelSpec;
use osyn::osyn::OsynConfig;
use osyn::partition::Partition;
use osyn::rng::{derive, rng, stream};
use osyn::sim::{
    compare_methods, hardest_class, size_sweep, sweep_shift, Composition, Experiment, SplitSpec, DEFAULT_SHIFTS,
};

struct Verdict {
    criterion: u32,
    ok: bool,
    detail: String,
}

fn verdict(criterion: u32, ok: bool, detail: String) -> Verdict {
    Verdict { criterion, ok, detail }
}

fn world() -> ShiftedGmm<f64> {
    ShiftedGmm::unshifted(GmmParams::five_class_world())
}

/// T = 5, N = 10000, g = 5000, delta1 = 0.01, delta2 = 0.2.
fn small_run(seed: u64, b: f64) -> OsynConfig {
    OsynConfig {
        iterations: 5,
        batch: 10_000,
        g: 5000,
        b,
        seed,
        ..OsynConfig::default()
    }
}

fn rel_err(got: f64, want: f64) -> f64 {
    if got == want {
        0.0
    } else {
        (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
    }
}

// ---------------------------------------------------------------- 1

struct Direct {
    f_g: f64,
    eps_h: f64,
    b: f64,
    d: f64,
    beta: f64,
    threshold: Option<f64>,
    valid: bool,
    lb: f64,
}

/// Straight transcription of the bound with plain loops and the textbook
/// `(sqrt(x + D) - sqrt(D))^2`.
fn direct(
    syn: &[Vec<f64>],
    anchors: &[Vec<f64>],
    counts: &[u64],
    p: &[f64],
    d1: f64,
    d2: f64,
    c: f64,
) -> Direct {
    let g: u64 = counts.iter().sum();
    let gf = g as f64;
    let mut f_g = 0.0;
    let mut eps_h = 0.0;
    let mut sq = 0.0;
    let mut a = vec![0.0; counts.len()];
    let mut a_hat: Option<f64> = None;
    for i in 0..counts.len() {
        let w = counts[i] as f64 / gf;
        if !syn[i].is_empty() {
            let m = syn[i].iter().sum::<f64>() / syn[i].len() as f64;
            f_g += w * m;
            a[i] = m;
            a_hat = Some(a_hat.map_or(m, |h: f64| h.max(m)));
        }
        if !anchors[i].is_empty() {
            sq += w * w;
            if counts[i] > 0 && !syn[i].is_empty() {
                let mut s = 0.0;
                for x in &anchors[i] {
                    for y in &syn[i] {
                        s += (x - y).abs();
                    }
                }
                eps_h += w * s / (anchors[i].len() * syn[i].len()) as f64;
            }
        }
    }
    let b = c * (-0.5 * d2.ln() * sq).sqrt();
    let a_hat = a_hat.unwrap_or(0.0);
    let beta = 2.0 * (0..p.len()).map(|i| p[i] * a[i] * a[i]).sum::<f64>();
    let d = -(a_hat / gf) * d1.ln();
    let threshold = (a_hat > 0.0).then(|| (-0.5 * gf * beta / (a_hat * a_hat)).exp());
    let valid = f_g >= eps_h + b && threshold.is_some_and(|t| d1 > t);
    let lb = ((f_g - eps_h - b + d).sqrt() - d.sqrt()).powi(2);
    Direct {
        f_g,
        eps_h,
        b,
        d,
        beta,
        threshold,
        valid,
        lb,
    }
}

fn c01_bound_matches_direct_evaluation() -> Verdict {
    let start = std::time::Instant::now();
    let mut r = rng(derive(1, 0));
    let grid = |r: &mut osyn::rng::SeededRng| r.random_range(0..=4) as f64 * 0.25;
    let (mut worst, mut flag_mismatch, mut valid_cases) = (0.0f64, 0, 0);
    for _ in 0..100 {
        let k = r.random_range(1..=5usize);
        let g = r.random_range(1..=20u64);
        // split g into k counts
        let mut counts = vec![0u64; k];
        for _ in 0..g {
            counts[r.random_range(0..k)] += 1;
        }
        let anchors: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                let n = if counts[i] > 0 { r.random_range(1..=4) } else { r.random_range(0..=2) };
                (0..n).map(|_| grid(&mut r)).collect()
            })
            .collect();
        // half the configurations copy anchor losses, which tends to give valid bounds
        let copy = r.random_bool(0.5);
        let syn: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                (0..counts[i])
                    .map(|j| if copy { anchors[i][j as usize % anchors[i].len()] } else { grid(&mut r) })
                    .collect()
            })
            .collect();
        let raw: Vec<f64> = (0..k).map(|_| r.random_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let d1 = r.random_range(0.01..0.99);
        let d2 = if copy { r.random_range(0.5..0.99) } else { r.random_range(0.01..0.99) };
        let c = 1.0;

        let occupied: BTreeSet<usize> = (0..k).filter(|&i| !anchors[i].is_empty()).collect();
        let cv = CountVector::new(counts.clone());
        let stats = RegionStats::from_losses(anchors.clone(), &syn).unwrap();
        let mass = RegionMass::from_proportions(p.clone(), 1000).unwrap();
        let params = BoundParams::new(d1, d2, c).unwrap();
        let f_g = weighted_mean_loss(&syn, &cv).unwrap();
        let eps_h = epsilon_h(&syn, &anchors, &cv, &occupied).unwrap();
        let rep = lower_bound(f_g, eps_h, &params, &cv, &occupied, &stats, &mass).unwrap();
        let want = direct(&syn, &anchors, &counts, &p, d1, d2, c);

        let mut errs = vec![
            rel_err(rep.f_g, want.f_g),
            rel_err(rep.eps_h, want.eps_h),
            rel_err(rep.b, want.b),
            rel_err(rep.d, want.d),
            rel_err(rep.beta, want.beta),
        ];
        match (rep.delta1_threshold, want.threshold) {
            (Some(x), Some(y)) => errs.push(rel_err(x, y)),
            (None, None) => {}
            _ => flag_mismatch += 1,
        }
        if rep.is_valid() != want.valid {
            flag_mismatch += 1;
        }
        if let Some(lb) = rep.lb {
            valid_cases += 1;
            errs.push(rel_err(lb, want.lb));
        }
        worst = errs.into_iter().fold(worst, f64::max);
    }
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        1,
        worst <= 1e-12 && flag_mismatch == 0 && elapsed < 1.0,
        format!(
            "100 configs ({valid_cases} valid), max rel err {worst:.2e}, {flag_mismatch} flag mismatches, {elapsed:.3}s"
        ),
    )
}

// ---------------------------------------------------------------- 2

fn c02_worked_example() -> Verdict {
    // K = 2, g = 4, g_i = (2, 2), delta1 = delta2 = 0.99, C_h = 1.
    // region 0: synthetic {1, 1}, anchor {1}; region 1: synthetic {0, 1}, anchor {0}
    //   F_G   = 0.5 * 1 + 0.5 * 0.5                       = 0.75
    //   eps_h = 0.5 * 0 + 0.5 * (|0-0| + |0-1|) / 2         = 0.25
    //   B     = sqrt(-0.5 ln 0.99 * (0.25 + 0.25))
    //         = sqrt(0.25 * 0.01005034)                     = 0.05012568
    //   a     = (1, 0.5), a_hat = 1, beta = 2 (0.5 + 0.125) = 1.25
    //   D     = -(1/4) ln 0.99                              = 0.00251258
    //   threshold = exp(-0.5 * 4 * 1.25 / 1) = e^-2.5       = 0.08208500 < 0.99
    //   x     = 0.75 - 0.25 - 0.05012568                    = 0.44987432
    //   lb    = (sqrt(0.45238690) - sqrt(0.00251258))^2
    //         = (0.67259713 - 0.05012568)^2                 = 0.38747071
    let syn = vec![vec![1.0, 1.0], vec![0.0, 1.0]];
    let anchors = vec![vec![1.0], vec![0.0]];
    let counts = CountVector::new(vec![2, 2]);
    let occupied: BTreeSet<usize> = [0, 1].into_iter().collect();
    let stats = RegionStats::from_losses(anchors.clone(), &syn).unwrap();
    let mass = RegionMass::from_proportions(vec![0.5, 0.5], 100).unwrap();
    let params = BoundParams::new(0.99, 0.99, 1.0).unwrap();
    let f_g = weighted_mean_loss(&syn, &counts).unwrap();
    let eps_h = epsilon_h(&syn, &anchors, &counts, &occupied).unwrap();
    let rep = lower_bound(f_g, eps_h, &params, &counts, &occupied, &stats, &mass).unwrap();
    let lb = rep.lb.unwrap_or(f64::NAN);
    let terms_ok = (rep.f_g - 0.75).abs() < 1e-15
        && (rep.eps_h - 0.25).abs() < 1e-15
        && (rep.b - 0.05012568).abs() < 1e-8
        && (rep.d - 0.00251258).abs() < 1e-8
        && (rep.beta - 1.25).abs() < 1e-15
        && (rep.delta1_threshold.unwrap_or(f64::NAN) - 0.082085).abs() < 1e-6;
    verdict(
        2,
        (lb - 0.38747).abs() <= 1e-5 && terms_ok,
        format!("lb = {lb:.6} (expected 0.38747 +- 1e-5), intermediate terms match: {terms_ok}"),
    )
}

// ---------------------------------------------------------------- 3

fn c03_kl_reproduction() -> Verdict {
    let start = std::time::Instant::now();
    let w = world();
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, (a, want)) in [(-0.25, 0.011), (-1.0, 0.160), (-2.0, 0.558)].into_iter().enumerate() {
        let kl = kl_mc(&w.reshifted(a), &w, 500_000, derive(3, i as u64), KlVariant::Marginal).unwrap();
        let tol = f64::max(0.01, 0.15 * want);
        ok &= (kl.estimate - want).abs() <= tol;
        parts.push(format!("a={a}: {:.4} (want {want})", kl.estimate));
    }
    let elapsed = start.elapsed().as_secs_f64();
    verdict(3, ok && elapsed < 30.0, format!("{}, {elapsed:.1}s", parts.join(", ")))
}

// ---------------------------------------------------------------- 4

fn c04_gap_tracks_kl() -> Verdict {
    let seed = 0;
    let exp = Experiment::new(world(), &SplitSpec::default(), ModelSpec::logistic(), LossKind::ZeroOne, seed).unwrap();
    let spec = SplitSpec {
        composition: Composition::SingleClass(1),
        ..SplitSpec::default()
    };
    let exp = exp.recompose(&spec, seed).unwrap();
    let cfg = small_run(seed, 0.25);
    let res = sweep_shift(&exp, &DEFAULT_SHIFTS, &cfg, 500_000, KlVariant::Marginal, seed).unwrap();
    let positive = res.rows.iter().filter(|r| r.gap.is_some_and(|g| g > 0.0)).count();
    let rho = res.pearson.unwrap_or(f64::NAN);
    verdict(
        4,
        rho >= 0.9 && positive == res.rows.len(),
        format!("Pearson(gap, KL) = {rho:.3}, {positive}/{} valid positive gaps", res.rows.len()),
    )
}

// ---------------------------------------------------------------- 5

fn c05_confidence_calibration() -> Verdict {
    let w = world();
    let (mut covered, mut valid) = (0, 0);
    for seed in 0..20 {
        let exp = Experiment::new(w.clone(), &SplitSpec::default(), ModelSpec::logistic(), LossKind::ZeroOne, seed).unwrap();
        let r = osyn::osyn::run(&exp.oracle, &exp.splits.small, &w, &small_run(seed, 1.0)).unwrap();
        if let Some(lb) = r.report.lb {
            valid += 1;
            if lb <= exp.oracle_loss {
                covered += 1;
            }
        }
    }
    verdict(
        5,
        covered >= 16,
        format!("lb <= oracle loss in {covered}/20 runs ({valid} valid; invalid counts as a miss)"),
    )
}

// ---------------------------------------------------------------- 6

fn c06_biased_small_set() -> Verdict {
    let w = world();
    let (mut beat, mut over) = (0, 0);
    for seed in 0..10 {
        let exp = Experiment::new(w.clone(), &SplitSpec::default(), ModelSpec::logistic(), LossKind::ZeroOne, seed).unwrap();
        let spec = SplitSpec {
            composition: Composition::SingleClass(hardest_class(&exp).unwrap()),
            ..SplitSpec::default()
        };
        let exp = exp.recompose(&spec, seed).unwrap();
        let cfg = small_run(seed, 1.0);
        let (row, _) = compare_methods(&exp, &w, &cfg, 2000, cfg.confidence_delta(), seed).unwrap();
        if row.gap_osyn.is_some_and(|g| g.abs() < row.gap_bootstrap.abs()) {
            beat += 1;
        }
        if row.gap_bootstrap < 0.0 {
            over += 1;
        }
    }
    verdict(
        6,
        beat >= 7 && over >= 7,
        format!("|gap OSYN| < |gap bootstrap| in {beat}/10, bootstrap overestimates in {over}/10"),
    )
}

// ---------------------------------------------------------------- 7

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn c07_gap_shrinks_with_test_size() -> Verdict {
    let w = world();
    let spec = SplitSpec {
        n_small: 700,
        ..SplitSpec::default()
    };
    let (mut at300, mut at700) = (Vec::new(), Vec::new());
    for seed in 0..5 {
        let exp = Experiment::new(w.clone(), &spec, ModelSpec::logistic(), LossKind::ZeroOne, seed).unwrap();
        let cfg = small_run(seed, 1.0);
        let rows = size_sweep(&exp, &w, &[300, 700], &cfg, 2000, cfg.confidence_delta(), seed).unwrap();
        // an invalid bound falls back to the trivial bound 0
        let gap = |i: usize| rows[i].row.oracle_loss - rows[i].row.osyn_lb.unwrap_or(0.0);
        at300.push(gap(0));
        at700.push(gap(1));
    }
    let (m300, m700) = (median(at300), median(at700));
    verdict(
        7,
        m700 <= m300,
        format!("median gap at |S|=700 is {m700:.4}, at |S|=300 is {m300:.4}"),
    )
}

// ---------------------------------------------------------------- 8

fn c08_count_adjustment() -> Verdict {
    let start = std::time::Instant::now();
    let mut r = rng(derive(8, 0));
    let (mut band_fail, mut idem_fail) = (0, 0);
    for _ in 0..1000 {
        let k = r.random_range(1..=60usize);
        let g = r.random_range(1..=20_000u64);
        let b = r.random_range(0.0..=1.5);
        let raw: Vec<f64> = (0..k).map(|_| r.random_range(0.0..1.0f64).powi(3) + 1e-9).collect();
        let total: f64 = raw.iter().sum();
        let mass = RegionMass::from_proportions(raw.iter().map(|v| v / total).collect(), 1000).unwrap();
        let c = sample_counts(&mass, g, r.random()).unwrap();
        let once = adjust_counts(&c, b).unwrap();
        let gf = g as f64;
        if once
            .counts()
            .iter()
            .any(|&v| (v as f64 / gf - 1.0 / k as f64).abs() > b / k as f64 + 1.0 / gf + 1e-12)
        {
            band_fail += 1;
        }
        if adjust_counts_against(&once, g, b).unwrap() != once {
            idem_fail += 1;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        8,
        band_fail == 0 && idem_fail == 0 && elapsed < 1.0,
        format!("1000 draws: {band_fail} band violations, {idem_fail} non-idempotent, {elapsed:.3}s"),
    )
}

// ---------------------------------------------------------------- 9

fn c09_monotone_objective() -> Verdict {
    let w = world();
    let mut ok = true;
    let mut runs = Vec::new();
    for (seed, model, shift) in [(0, ModelSpec::logistic(), 0.0), (1, ModelSpec::Knn { k: 5 }, -1.0)] {
        let exp = Experiment::new(w.clone(), &SplitSpec::default(), model, LossKind::ZeroOne, seed).unwrap();
        let cfg = OsynConfig {
            iterations: 10,
            ..small_run(seed, 1.0)
        };
        let r = osyn::osyn::run(&exp.oracle, &exp.splits.small, &w.reshifted(shift), &cfg).unwrap();
        let obj: Vec<f64> = r.trajectory.iter().map(|t| t.objective).collect();
        ok &= obj.len() == 10 && obj.windows(2).all(|p| p[1] >= p[0]);
        runs.push(format!("{:.4} -> {:.4}", obj[0], obj[obj.len() - 1]));
    }
    verdict(9, ok, format!("objective non-decreasing over T=10 in both runs ({})", runs.join(", ")))
}

// ---------------------------------------------------------------- 10

fn c10_asymptotic_sandwich() -> Verdict {
    let start = std::time::Instant::now();
    let seed = 0;
    let exp = Experiment::new(world(), &SplitSpec::default(), ModelSpec::Knn { k: 5 }, LossKind::ZeroOne, seed).unwrap();
    let small = &exp.splits.small;
    let partition = Partition::build(small, small.len(), derive(seed, stream::PARTITION)).unwrap();
    let diag = osyn::bound::asymptotic_diag(&exp.oracle, &exp.world, &exp.world, &partition, 200_000, derive(seed, stream::DIAGNOSTIC)).unwrap();
    let oracle = exp.oracle_loss;
    let oracle_se = (oracle * (1.0 - oracle) / exp.splits.oracle.len() as f64).sqrt();
    let se = (diag.f_gen_std_error.powi(2) + diag.distance_std_error.powi(2) + oracle_se.powi(2)).sqrt();
    let ok = diag.lower <= oracle + 3.0 * se && oracle <= diag.upper + 3.0 * se;
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        10,
        ok && elapsed < 300.0,
        format!(
            "lower {:.4} <= oracle {oracle:.4} <= upper {:.4} (3 SE = {:.4}), {elapsed:.1}s",
            diag.lower,
            diag.upper,
            3.0 * se
        ),
    )
}

// ---------------------------------------------------------------- 11

fn run_cli(out: &Path, args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_osyn"))
        .args(["--seed", "7", "--out"])
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
        .status
        .code()
        .unwrap_or(-1)
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn c11_cli_determinism() -> Verdict {
    let small = [
        "--iterations", "3", "--batch", "2000", "--g", "400", "--mass-samples", "20000", "--n-train", "1000",
        "--n-small", "150", "--n-oracle", "2000",
    ];
    let commands: Vec<Vec<&str>> = vec![
        [&["simulate-sweep", "--shifts", "0,-1", "--kl-samples", "20000"][..], &small].concat(),
        [&["simulate-compare", "--models", "knn:5,gnb", "--resamples", "200"][..], &small].concat(),
    ];
    let tmp = tempfile::tempdir().unwrap();
    let mut ok = true;
    let mut files = 0;
    for (i, cmd) in commands.iter().enumerate() {
        let a = tmp.path().join(format!("{i}a"));
        let b = tmp.path().join(format!("{i}b"));
        let (ca, cb) = (run_cli(&a, cmd), run_cli(&b, cmd));
        let (sa, sb) = (snapshot(&a), snapshot(&b));
        files += sa.len();
        ok &= ca == 0 && cb == 0 && !sa.is_empty() && sa == sb;
    }
    verdict(11, ok, format!("two subcommands run twice each, {files} output files byte-identical: {ok}"))
}

// ---------------------------------------------------------------- 12

fn c12_regression_mode() -> Verdict {
    let world = LinearWorld {
        weights: vec![2.0],
        intercept: 1.0,
        noise: 0.5,
    };
    let (mut good, mut valid) = (0, 0);
    for seed in 0..10 {
        let train = world.sample(5000, derive(seed, stream::SPLIT_TRAIN)).unwrap();
        let small = world.sample(500, derive(seed, stream::SPLIT_SMALL)).unwrap();
        let oracle_set = world.sample(20_000, derive(seed, stream::SPLIT_ORACLE)).unwrap();
        let model = ModelSpec::Ridge { lambda: 1.0 }.fit(&train).unwrap();
        let oracle_mae = mean_loss(&model, &oracle_set, LossKind::MeanAbsoluteError).unwrap();
        let loss = ModelLoss::for_kind(model, LossKind::MeanAbsoluteError, &small).unwrap();
        let r = osyn::osyn::run(&loss, &small, &world, &small_run(seed, 1.0)).unwrap();
        if let Some(lb) = r.report.lb {
            valid += 1;
            if lb <= oracle_mae {
                good += 1;
            }
        }
    }
    verdict(
        12,
        good >= 8,
        format!("valid lb <= oracle MAE in {good}/10 runs ({valid} valid)"),
    )
}

fn main() {
    let checks: [fn() -> Verdict; 12] = [
        c01_bound_matches_direct_evaluation,
        c02_worked_example,
        c03_kl_reproduction,
        c04_gap_tracks_kl,
        c05_confidence_calibration,
        c06_biased_small_set,
        c07_gap_shrinks_with_test_size,
        c08_count_adjustment,
        c09_monotone_objective,
        c10_asymptotic_sandwich,
        c11_cli_determinism,
        c12_regression_mode,
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let results: Vec<Verdict> = std::thread::scope(|s| {
        let handles: Vec<_> = checks
            .iter()
            .enumerate()
            .filter(|(i, _)| filter.is_empty() || filter.iter().any(|f| f.parse() == Ok(i + 1)))
            .map(|(i, f)| (i, s.spawn(f)))
            .collect();
        handles
            .into_iter()
            .map(|(i, h)| h.join().unwrap_or_else(|_| verdict(i as u32 + 1, false, "panicked".into())))
            .collect()
    });
    let mut failed = 0;
    for v in &results {
        println!("{} criterion {}: {}", if v.ok { "PASS" } else { "FAIL" }, v.criterion, v.detail);
        failed += usize::from(!v.ok);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
