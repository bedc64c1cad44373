//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for usage errors (nothing is written), 2 for
//! data or validity errors (a report with the reason is still written).

use std::collections::HashMap;
use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::baselines::{self, BaselineResult, DEFAULT_RESAMPLES};
use crate::data::{default_mae_bound, Dataset, LossKind, LossOracle, LossTable, ModelLoss, OverflowPolicy};
use crate::error::{Error, Result};
use crate::generator::{FileGenerator, GmmParams, KlVariant, ShiftedGmm};
use crate::io::{self, cell, RunReport};
use crate::models::ModelSpec;
use crate::osyn::{self, OsynConfig};
use crate::rng::{self, stream};
use crate::sim::{self, Composition, Experiment, SplitSpec, DEFAULT_SHIFTS};

#[derive(Debug, Parser)]
#[command(name = "osyn", version, about = "Lower-bound a fixed model's true error from a small test set and synthetic data")]
pub struct Cli {
    /// Root seed of every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// `csv` writes tables and the report; `report` writes the report only.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Report,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Shift the generator away from the world and track the bound gap against KL.
    SimulateSweep(SweepArgs),
    /// OSYN against the bootstrap and unoptimized synthetic baselines.
    SimulateCompare(CompareArgs),
    /// The comparison for several small-set sizes.
    SizeSweep(SizeArgs),
    /// Run on external files: a test set, generator batches and a model or loss file.
    Evaluate(EvaluateArgs),
    /// Estimate and save the region masses of a generator.
    EstimateMass(MassArgs),
    /// Print the version and report schema.
    Version,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// One region per test point, b = 1, delta2 = 0.005.
    #[value(name = "paper-large-k")]
    LargeK,
}

#[derive(Debug, Clone, Args)]
pub struct OsynArgs {
    /// Iterations T [default: 15]
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Samples drawn per iteration N [default: 50000]
    #[arg(long)]
    pub batch: Option<usize>,
    /// Nominal synthetic total g [default: 5000]
    #[arg(long)]
    pub g: Option<u64>,
    /// Count adjustment width [default: 1]
    #[arg(long)]
    pub b: Option<f64>,
    /// [default: 0.01]
    #[arg(long)]
    pub delta1: Option<f64>,
    /// [default: 0.2]
    #[arg(long)]
    pub delta2: Option<f64>,
    /// Number of regions K [default: size of the test set]
    #[arg(long)]
    pub partitions: Option<usize>,
    /// Neighbour count for the search radii [default: 10]
    #[arg(long)]
    pub knn_radius: Option<usize>,
    #[arg(long)]
    pub no_radius_filter: bool,
    /// Draws used to estimate region masses [default: 1000000]
    #[arg(long)]
    pub mass_samples: Option<usize>,
    /// Weight the bound by realized region sizes.
    #[arg(long)]
    pub realized_weights: bool,
    /// Parameter defaults from the low-tuning guidance; explicit flags win.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Store per-iteration wall-clock times (makes reports non-reproducible).
    #[arg(long)]
    pub record_timings: bool,
}

impl OsynArgs {
    fn config(&self, seed: u64) -> OsynConfig {
        let mut cfg = OsynConfig {
            seed,
            ..OsynConfig::default()
        };
        if let Some(Preset::LargeK) = self.preset {
            cfg.partitions = None;
            cfg.b = 1.0;
            cfg.delta2 = 0.005;
        }
        macro_rules! set {
            ($($f:ident => $t:ident),*) => {$(if let Some(v) = self.$f { cfg.$t = v; })*};
        }
        set!(iterations => iterations, batch => batch, g => g, b => b, delta1 => delta1,
             delta2 => delta2, knn_radius => k_radius, mass_samples => mass_samples);
        if self.partitions.is_some() {
            cfg.partitions = self.partitions;
        }
        cfg.radius_filter = !self.no_radius_filter;
        cfg.strict_weights = self.realized_weights;
        cfg
    }
}

#[derive(Debug, Clone, Args)]
pub struct WorldArgs {
    #[arg(long, default_value_t = 5_000)]
    pub n_train: usize,
    /// Size of the small test set [default: 500, or the largest size in a size sweep]
    #[arg(long)]
    pub n_small: Option<usize>,
    #[arg(long, default_value_t = 20_000)]
    pub n_oracle: usize,
    /// iid | class:C | largest | hardest | counts:N0,N1,... | balanced:N
    #[arg(long, default_value = "iid")]
    pub composition: String,
}

#[derive(Debug, Clone, Args)]
pub struct BootArgs {
    /// Bootstrap resamples.
    #[arg(long, default_value_t = DEFAULT_RESAMPLES)]
    pub resamples: usize,
    /// Bootstrap percentile [default: delta1 + delta2]
    #[arg(long)]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// knn:K | logreg[:LR[:EPOCHS]] | gnb
    #[arg(long, default_value = "logreg")]
    pub model: ModelSpec,
    /// Shift scales, comma separated [default: the ten standard values]
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub shifts: Vec<f64>,
    /// Monte-Carlo draws per KL estimate.
    #[arg(long, default_value_t = 500_000)]
    pub kl_samples: usize,
    #[arg(long, value_enum, default_value_t = KlArg::Marginal)]
    pub kl_variant: KlArg,
    #[command(flatten)]
    pub world: WorldArgs,
    #[command(flatten)]
    pub osyn: OsynArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KlArg {
    Marginal,
    Joint,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Comma-separated model specs.
    #[arg(long, value_delimiter = ',', default_value = "knn:5,logreg,gnb")]
    pub models: Vec<ModelSpec>,
    /// Generator shift scale.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub shift: f64,
    #[command(flatten)]
    pub world: WorldArgs,
    #[command(flatten)]
    pub osyn: OsynArgs,
    #[command(flatten)]
    pub boot: BootArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SizeArgs {
    #[arg(long, default_value = "logreg")]
    pub model: ModelSpec,
    /// Comma-separated small-set sizes, each at least 50.
    #[arg(long, value_delimiter = ',', default_value = "300,400,500,600,700")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub shift: f64,
    #[command(flatten)]
    pub world: WorldArgs,
    #[command(flatten)]
    pub osyn: OsynArgs,
    #[command(flatten)]
    pub boot: BootArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossKindArg {
    ZeroOne,
    Mae,
}

impl From<LossKindArg> for LossKind {
    fn from(k: LossKindArg) -> Self {
        match k {
            LossKindArg::ZeroOne => LossKind::ZeroOne,
            LossKindArg::Mae => LossKind::MeanAbsoluteError,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Labeled test set S.
    #[arg(long)]
    pub test: PathBuf,
    /// Directory of generator batch files, read in name order.
    #[arg(long)]
    pub gen_dir: PathBuf,
    /// Per-sample losses keyed by id, covering S and every batch row.
    #[arg(long, conflicts_with_all = ["model", "train"], required_unless_present = "model")]
    pub losses: Option<PathBuf>,
    /// Built-in model to fit on --train.
    #[arg(long, requires = "train")]
    pub model: Option<ModelSpec>,
    /// Training set for --model.
    #[arg(long, requires = "model")]
    pub train: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = LossKindArg::ZeroOne)]
    pub loss_kind: LossKindArg,
    /// Loss upper bound C_h [default: 1 for zero-one, 1.5 x the largest test loss for MAE]
    #[arg(long)]
    pub loss_bound: Option<f64>,
    /// Region masses written by estimate-mass with the same seed and partitions.
    #[arg(long)]
    pub mass: Option<PathBuf>,
    /// Exit with status 2 when the bound is invalid.
    #[arg(long)]
    pub strict: bool,
    #[command(flatten)]
    pub osyn: OsynArgs,
    #[command(flatten)]
    pub boot: BootArgs,
}

#[derive(Debug, Clone, Args)]
pub struct MassArgs {
    #[arg(long)]
    pub test: PathBuf,
    /// Generator batches; without it the mixture world shifted by --shift is used.
    #[arg(long, conflicts_with = "shift")]
    pub gen_dir: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    pub shift: Option<f64>,
    #[command(flatten)]
    pub osyn: OsynArgs,
}

/// Entry point of the binary.
pub fn main() -> ExitCode {
    ExitCode::from(run(std::env::args_os()) as u8)
}

/// Parses `args` (program name first), executes, and returns the exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    if let Err(msg) = validate(&cli) {
        eprintln!("error: {msg}");
        return 1;
    }
    let command = command_name(&cli.command);
    if matches!(cli.command, Command::Version) {
        println!("osyn {} (report schema {})", env!("CARGO_PKG_VERSION"), io::SCHEMA_VERSION);
        return 0;
    }
    let config = effective_config(&cli);
    let outcome = std::fs::create_dir_all(&cli.out)
        .map_err(Error::from)
        .and_then(|_| execute(&cli, config.clone()));
    match outcome {
        Ok(Outcome { report, strict }) => {
            let valid = report.valid;
            if let Err(e) = io::write_report(&report, cli.out.join("report.json")) {
                eprintln!("error: {e}");
                return 2;
            }
            if strict && !valid {
                eprintln!("error: bound invalid: {}", report.reasons.join("; "));
                return 2;
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            let report = failure_report(command, config, e);
            if std::fs::create_dir_all(&cli.out).is_ok() {
                let _ = io::write_report(&report, cli.out.join("report.json"));
            }
            2
        }
    }
}

struct Outcome {
    report: RunReport,
    strict: bool,
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::SimulateSweep(_) => "simulate-sweep",
        Command::SimulateCompare(_) => "simulate-compare",
        Command::SizeSweep(_) => "size-sweep",
        Command::Evaluate(_) => "evaluate",
        Command::EstimateMass(_) => "estimate-mass",
        Command::Version => "version",
    }
}

fn failure_report(command: &str, config: Value, e: Error) -> RunReport {
    let mut r = RunReport::new(command, config);
    r.valid = false;
    if let Error::PartialRun {
        last, trajectory, ..
    } = &e
    {
        r.bound = last.as_deref().cloned();
        r.trajectory = trajectory.clone();
    }
    r.reasons.push(e.to_string());
    r
}

fn osyn_args(c: &Command) -> Option<&OsynArgs> {
    match c {
        Command::SimulateSweep(a) => Some(&a.osyn),
        Command::SimulateCompare(a) => Some(&a.osyn),
        Command::SizeSweep(a) => Some(&a.osyn),
        Command::Evaluate(a) => Some(&a.osyn),
        Command::EstimateMass(a) => Some(&a.osyn),
        Command::Version => None,
    }
}

fn world_args(c: &Command) -> Option<&WorldArgs> {
    match c {
        Command::SimulateSweep(a) => Some(&a.world),
        Command::SimulateCompare(a) => Some(&a.world),
        Command::SizeSweep(a) => Some(&a.world),
        _ => None,
    }
}

fn boot_args(c: &Command) -> Option<&BootArgs> {
    match c {
        Command::SimulateCompare(a) => Some(&a.boot),
        Command::SizeSweep(a) => Some(&a.boot),
        Command::Evaluate(a) => Some(&a.boot),
        _ => None,
    }
}

/// Flag-level checks that need no data.
fn validate(cli: &Cli) -> std::result::Result<(), String> {
    if let Some(o) = osyn_args(&cli.command) {
        let cfg = o.config(cli.seed);
        let positive = [
            ("iterations", cfg.iterations as f64),
            ("batch", cfg.batch as f64),
            ("g", cfg.g as f64),
            ("mass-samples", cfg.mass_samples as f64),
        ];
        for (name, v) in positive {
            if v < 1.0 {
                return Err(format!("--{name} must be at least 1"));
            }
        }
        if cfg.partitions == Some(0) {
            return Err("--partitions must be at least 1".into());
        }
        if cfg.radius_filter && cfg.k_radius < 1 {
            return Err("--knn-radius must be at least 1".into());
        }
        if !(cfg.b.is_finite() && cfg.b >= 0.0) {
            return Err("--b must be finite and non-negative".into());
        }
        for (name, d) in [("delta1", cfg.delta1), ("delta2", cfg.delta2)] {
            if !(d > 0.0 && d < 1.0) {
                return Err(format!("--{name} must lie in (0, 1)"));
            }
        }
        if cfg.delta1 + cfg.delta2 >= 1.0 {
            return Err("--delta1 + --delta2 must be below 1".into());
        }
    }
    if let Some(b) = boot_args(&cli.command) {
        if b.resamples < 1 {
            return Err("--resamples must be at least 1".into());
        }
        if let Some(d) = b.delta {
            if !(0.0..=1.0).contains(&d) {
                return Err("--delta must lie in [0, 1]".into());
            }
        }
    }
    if let Some(w) = world_args(&cli.command) {
        parse_composition(&w.composition)?;
        if w.n_train == 0 || w.n_oracle == 0 || w.n_small == Some(0) {
            return Err("split sizes must be positive".into());
        }
    }
    match &cli.command {
        Command::SimulateSweep(a) => {
            if a.kl_samples < 2 {
                return Err("--kl-samples must be at least 2".into());
            }
            if a.shifts.iter().any(|s| !s.is_finite()) {
                return Err("--shifts must be finite".into());
            }
            if !a.model.is_classifier() {
                return Err("the mixture world needs a classifier".into());
            }
        }
        Command::SimulateCompare(a) => {
            if a.models.iter().any(|m| !m.is_classifier()) {
                return Err("the mixture world needs classifiers".into());
            }
            if !a.shift.is_finite() {
                return Err("--shift must be finite".into());
            }
        }
        Command::SizeSweep(a) => {
            if a.sizes.is_empty() {
                return Err("--sizes is empty".into());
            }
            if let Some(s) = a.sizes.iter().find(|&&s| s < 50) {
                return Err(format!("size {s} is below 50"));
            }
            if let Some(n) = a.world.n_small {
                if a.sizes.iter().any(|&s| s > n) {
                    return Err("sizes exceed --n-small".into());
                }
            }
            if !a.model.is_classifier() {
                return Err("the mixture world needs a classifier".into());
            }
        }
        Command::Evaluate(a) => {
            if let Some(c) = a.loss_bound {
                if !(c.is_finite() && c > 0.0) {
                    return Err("--loss-bound must be positive".into());
                }
            }
            if a.loss_kind == LossKindArg::ZeroOne && a.model.as_ref().is_some_and(|m| !m.is_classifier()) {
                return Err("zero-one loss needs a classifier".into());
            }
        }
        Command::EstimateMass(a) => {
            if a.gen_dir.is_none() && a.shift.is_none() {
                return Err("estimate-mass needs --gen-dir or --shift".into());
            }
        }
        Command::Version => {}
    }
    Ok(())
}

enum SmallSet {
    Fixed(Composition),
    Largest,
    Hardest,
}

fn parse_composition(s: &str) -> std::result::Result<SmallSet, String> {
    let bad = || format!("unknown composition {s:?}");
    let num = |v: &str| v.trim().parse::<usize>().map_err(|_| bad());
    Ok(match s.split_once(':') {
        None => match s {
            "iid" => SmallSet::Fixed(Composition::Iid),
            "largest" => SmallSet::Largest,
            "hardest" => SmallSet::Hardest,
            _ => return Err(bad()),
        },
        Some(("class", c)) => SmallSet::Fixed(Composition::SingleClass(num(c)?)),
        Some(("balanced", n)) => SmallSet::Fixed(Composition::Balanced(num(n)?)),
        Some(("counts", list)) => SmallSet::Fixed(Composition::ClassCounts(
            list.split(',').map(num).collect::<std::result::Result<_, _>>()?,
        )),
        _ => return Err(bad()),
    })
}

fn effective_config(cli: &Cli) -> Value {
    let mut c = json!({ "seed": cli.seed, "format": format!("{:?}", cli.format).to_lowercase() });
    if let Some(o) = osyn_args(&cli.command) {
        c["osyn"] = serde_json::to_value(o.config(cli.seed)).expect("config serializes");
        c["preset"] = json!(o.preset.map(|_| "paper-large-k"));
        c["record_timings"] = json!(o.record_timings);
    }
    if let Some(w) = world_args(&cli.command) {
        c["world"] = json!({
            "n_train": w.n_train,
            "n_small": small_size(&cli.command, w),
            "n_oracle": w.n_oracle,
            "composition": w.composition,
        });
    }
    if let Some(b) = boot_args(&cli.command) {
        c["resamples"] = json!(b.resamples);
        c["delta"] = json!(bootstrap_delta(&cli.command, cli.seed));
    }
    match &cli.command {
        Command::SimulateSweep(a) => {
            c["model"] = json!(a.model.to_string());
            c["shifts"] = json!(shifts(a));
            c["kl_samples"] = json!(a.kl_samples);
            c["kl_variant"] = json!(format!("{:?}", a.kl_variant).to_lowercase());
        }
        Command::SimulateCompare(a) => {
            c["models"] = json!(a.models.iter().map(|m| m.to_string()).collect::<Vec<_>>());
            c["shift"] = json!(a.shift);
        }
        Command::SizeSweep(a) => {
            c["model"] = json!(a.model.to_string());
            c["sizes"] = json!(a.sizes);
            c["shift"] = json!(a.shift);
        }
        Command::Evaluate(a) => {
            c["test"] = json!(a.test);
            c["gen_dir"] = json!(a.gen_dir);
            c["losses"] = json!(a.losses);
            c["model"] = json!(a.model.as_ref().map(|m| m.to_string()));
            c["train"] = json!(a.train);
            c["loss_kind"] = json!(LossKind::from(a.loss_kind).to_string());
            c["loss_bound"] = json!(a.loss_bound);
            c["mass"] = json!(a.mass);
            c["strict"] = json!(a.strict);
        }
        Command::EstimateMass(a) => {
            c["test"] = json!(a.test);
            c["gen_dir"] = json!(a.gen_dir);
            c["shift"] = json!(a.shift);
        }
        Command::Version => {}
    }
    c
}

fn small_size(c: &Command, w: &WorldArgs) -> usize {
    match (c, w.n_small) {
        (_, Some(n)) => n,
        (Command::SizeSweep(a), None) => a.sizes.iter().copied().max().unwrap_or(500),
        _ => 500,
    }
}

fn bootstrap_delta(c: &Command, seed: u64) -> f64 {
    let b = boot_args(c).expect("command has bootstrap flags");
    let cfg = osyn_args(c).expect("command has search flags").config(seed);
    b.delta.unwrap_or(cfg.confidence_delta())
}

fn shifts(a: &SweepArgs) -> Vec<f64> {
    if a.shifts.is_empty() {
        DEFAULT_SHIFTS.to_vec()
    } else {
        a.shifts.clone()
    }
}

fn execute(cli: &Cli, config: Value) -> Result<Outcome> {
    let name = command_name(&cli.command);
    let mut report = RunReport::new(name, config);
    let strict = match &cli.command {
        Command::SimulateSweep(a) => {
            simulate_sweep(cli, a, &mut report)?;
            false
        }
        Command::SimulateCompare(a) => {
            simulate_compare(cli, a, &mut report)?;
            false
        }
        Command::SizeSweep(a) => {
            size_sweep(cli, a, &mut report)?;
            false
        }
        Command::Evaluate(a) => {
            evaluate(cli, a, &mut report)?;
            a.strict
        }
        Command::EstimateMass(a) => {
            estimate_mass(cli, a, &mut report)?;
            false
        }
        Command::Version => unreachable!("handled before execution"),
    };
    Ok(Outcome { report, strict })
}

fn world() -> ShiftedGmm<f64> {
    ShiftedGmm::unshifted(GmmParams::five_class_world())
}

fn experiment(cli: &Cli, w: &WorldArgs, n_small: usize, model: &ModelSpec) -> Result<(Experiment<f64>, Value)> {
    let world = world();
    let base = SplitSpec {
        n_train: w.n_train,
        n_small,
        n_oracle: w.n_oracle,
        composition: Composition::Iid,
    };
    let exp = Experiment::new(world.clone(), &base, *model, LossKind::ZeroOne, cli.seed)?;
    let rule = parse_composition(&w.composition).map_err(Error::InvalidInput)?;
    let composition = match rule {
        SmallSet::Fixed(c) => c,
        SmallSet::Largest => Composition::SingleClass(sim::largest_class(&world)),
        SmallSet::Hardest => Composition::SingleClass(sim::hardest_class(&exp)?),
    };
    let exp = if composition == Composition::Iid {
        exp
    } else {
        exp.recompose(
            &SplitSpec {
                composition: composition.clone(),
                ..base
            },
            cli.seed,
        )?
    };
    let info = json!({
        "model": model.to_string(),
        "composition": composition,
        "oracle_loss": exp.oracle_loss,
        "test_loss": exp.oracle.mean_loss(&exp.splits.small)?,
    });
    Ok((exp, info))
}

fn f(v: f64) -> String {
    v.to_string()
}

fn simulate_sweep(cli: &Cli, a: &SweepArgs, report: &mut RunReport) -> Result<()> {
    let cfg = a.osyn.config(cli.seed);
    let (exp, info) = experiment(cli, &a.world, small_size(&cli.command, &a.world), &a.model)?;
    let variant = match a.kl_variant {
        KlArg::Marginal => KlVariant::Marginal,
        KlArg::Joint => KlVariant::Joint,
    };
    let res = sim::sweep_shift(&exp, &shifts(a), &cfg, a.kl_samples, variant, cli.seed)?;
    for r in &res.rows {
        if r.lb.is_none() {
            report.valid = false;
            report.reasons.push(format!("a = {}: {}", r.a, r.reasons.join("; ")));
        }
    }
    report.p_from_generator = true;
    report.results = json!({ "experiment": info, "sweep": res });
    if cli.format == Format::Csv {
        let rows: Vec<Vec<String>> = res
            .rows
            .iter()
            .map(|r| {
                vec![
                    f(r.a),
                    cell(r.lb),
                    cell(r.gap),
                    f(r.oracle_loss),
                    f(r.kl),
                    f(r.kl_std_error),
                    f(r.f_g),
                    f(r.eps_h),
                    f(r.b),
                    r.lb.is_some().to_string(),
                ]
            })
            .collect();
        io::write_table(
            &["a", "lb", "gap", "oracle_loss", "kl", "kl_std_error", "f_g", "eps_h", "b", "valid"],
            &rows,
            cli.out.join("sweep.csv"),
        )?;
        let plot: Vec<Vec<String>> = res
            .rows
            .iter()
            .filter_map(|r| r.gap.map(|g| vec![f(r.kl), f(g)]))
            .collect();
        io::write_table(&["kl", "gap"], &plot, cli.out.join("plot.csv"))?;
    }
    Ok(())
}

const COMPARE_HEADER: [&str; 12] = [
    "model",
    "oracle_loss",
    "test_loss",
    "osyn_lb",
    "osyn_margin",
    "bootstrap",
    "syn_wo_opt",
    "gap_osyn",
    "gap_bootstrap",
    "gap_syn_wo_opt",
    "g_star",
    "valid",
];

fn compare_cells(r: &sim::CompareRow) -> Vec<String> {
    vec![
        r.model.clone(),
        f(r.oracle_loss),
        f(r.test_loss),
        cell(r.osyn_lb),
        f(r.osyn_margin),
        f(r.bootstrap),
        f(r.syn_wo_opt),
        cell(r.gap_osyn),
        f(r.gap_bootstrap),
        f(r.gap_syn_wo_opt),
        r.g_star.to_string(),
        r.osyn_lb.is_some().to_string(),
    ]
}

fn note_row(report: &mut RunReport, label: &str, r: &sim::CompareRow) {
    if r.osyn_lb.is_none() {
        report.valid = false;
        report.reasons.push(format!("{label}: {}", r.reasons.join("; ")));
    }
}

fn simulate_compare(cli: &Cli, a: &CompareArgs, report: &mut RunReport) -> Result<()> {
    let cfg = a.osyn.config(cli.seed);
    let delta = bootstrap_delta(&cli.command, cli.seed);
    let n_small = small_size(&cli.command, &a.world);
    let mut rows = Vec::new();
    let mut infos = Vec::new();
    for model in &a.models {
        let (exp, info) = experiment(cli, &a.world, n_small, model)?;
        let gen = exp.world.reshifted(a.shift);
        let (row, baselines) = sim::compare_methods(&exp, &gen, &cfg, a.boot.resamples, delta, cli.seed)?;
        note_row(report, &row.model, &row);
        report.baselines.extend(baselines.into_iter().map(|b| BaselineResult {
            method: format!("{}/{}", row.model, b.method),
            ..b
        }));
        rows.push(row);
        infos.push(info);
    }
    report.p_from_generator = true;
    report.results = json!({ "experiments": infos, "rows": rows });
    if cli.format == Format::Csv {
        let cells: Vec<_> = rows.iter().map(compare_cells).collect();
        io::write_table(&COMPARE_HEADER, &cells, cli.out.join("compare.csv"))?;
    }
    Ok(())
}

fn size_sweep(cli: &Cli, a: &SizeArgs, report: &mut RunReport) -> Result<()> {
    let cfg = a.osyn.config(cli.seed);
    let delta = bootstrap_delta(&cli.command, cli.seed);
    let (exp, info) = experiment(cli, &a.world, small_size(&cli.command, &a.world), &a.model)?;
    let gen = exp.world.reshifted(a.shift);
    let rows = sim::size_sweep(&exp, &gen, &a.sizes, &cfg, a.boot.resamples, delta, cli.seed)?;
    for r in &rows {
        note_row(report, &format!("|S| = {}", r.size), &r.row);
    }
    report.p_from_generator = true;
    report.results = json!({ "experiment": info, "rows": rows });
    if cli.format == Format::Csv {
        let mut header = vec!["size"];
        header.extend(COMPARE_HEADER);
        let cells: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                let mut c = vec![r.size.to_string()];
                c.extend(compare_cells(&r.row));
                c
            })
            .collect();
        io::write_table(&header, &cells, cli.out.join("size.csv"))?;
    }
    Ok(())
}

/// Loss oracle of `evaluate`: a fitted built-in model or a loss file.
enum EvalOracle {
    Model(ModelLoss<f64>),
    Table(LossTable<f64>),
}

impl EvalOracle {
    fn get(&self) -> &dyn LossOracle<f64> {
        match self {
            EvalOracle::Model(m) => m,
            EvalOracle::Table(t) => t,
        }
    }
}

fn load_oracle(a: &EvaluateArgs, test: &Dataset<f64>, report: &mut RunReport) -> Result<EvalOracle> {
    let kind = LossKind::from(a.loss_kind);
    if let (Some(spec), Some(train)) = (&a.model, &a.train) {
        let train: Dataset<f64> = io::read_dataset(train)?;
        let model = spec.fit(&train)?;
        return Ok(EvalOracle::Model(match (kind, a.loss_bound) {
            (LossKind::ZeroOne, _) => ModelLoss::zero_one(model),
            (LossKind::MeanAbsoluteError, Some(c)) => ModelLoss::mae(model, c, OverflowPolicy::Clip)?,
            (LossKind::MeanAbsoluteError, None) => ModelLoss::for_kind(model, kind, test)?,
        }));
    }
    let path = a.losses.as_ref().expect("clap requires --losses without --model");
    let pairs: Vec<(String, f64)> = io::read_losses(path)?;
    let test_losses = io::join_losses(test, &pairs)?;
    let bound = match (kind, a.loss_bound) {
        (_, Some(c)) => c,
        (LossKind::ZeroOne, None) => 1.0,
        (LossKind::MeanAbsoluteError, None) => default_mae_bound(&test_losses)?,
    };
    if kind == LossKind::ZeroOne {
        if let Some((id, v)) = pairs.iter().find(|(_, v)| *v != 0.0 && *v != 1.0) {
            return Err(Error::InvalidInput(format!("zero-one loss {v} for id {id:?}")));
        }
    }
    let mut clipped = 0usize;
    let map: HashMap<String, f64> = pairs
        .into_iter()
        .map(|(id, v)| {
            if v > bound {
                clipped += 1;
                (id, bound)
            } else {
                (id, v)
            }
        })
        .collect();
    if clipped > 0 {
        report
            .reasons
            .push(format!("{clipped} losses clipped to the loss bound {bound}"));
    }
    Ok(EvalOracle::Table(LossTable::new(map, kind, bound)?))
}

fn evaluate(cli: &Cli, a: &EvaluateArgs, report: &mut RunReport) -> Result<()> {
    let cfg = a.osyn.config(cli.seed);
    let test: Dataset<f64> = io::read_dataset(&a.test)?;
    let gen: FileGenerator<f64> = FileGenerator::open(&a.gen_dir)?;
    let oracle = load_oracle(a, &test, report)?;
    let oracle = oracle.get();
    let mass = a.mass.as_ref().map(io::read_mass).transpose()?;
    let from_file = mass.is_some();

    let start = Instant::now();
    let r = osyn::run_with_mass(oracle, &test, &gen, &cfg, mass)?;
    let elapsed = start.elapsed().as_secs_f64();

    let delta = bootstrap_delta(&cli.command, cli.seed);
    let test_losses = oracle.losses(&test)?;
    let boot_seed = rng::derive(cli.seed, stream::BOOTSTRAP);
    let boot = baselines::bootstrap_loss(&test_losses, a.boot.resamples, delta, boot_seed)?;
    let g_star = r.counts.total();
    let syn_seed = rng::derive(cli.seed, stream::SYN_WO_OPT);
    let syn = match baselines::syn_wo_opt(oracle, &gen, g_star, syn_seed) {
        Ok(v) => Some((v, g_star)),
        Err(Error::PartialEstimate { estimate, used }) => {
            report.reasons.push(format!(
                "unoptimized synthetic loss uses {used} of {g_star} points: the batches ran out"
            ));
            Some((estimate, used as u64))
        }
        Err(Error::GeneratorExhausted { .. }) => {
            report
                .reasons
                .push("no batch rows left for the unoptimized synthetic loss".into());
            None
        }
        Err(e) => return Err(e),
    };
    report.baselines.push(BaselineResult {
        method: "bootstrap".into(),
        estimate: boot,
        resamples: Some(a.boot.resamples),
        delta: Some(delta),
        g_star: None,
        seed: boot_seed,
    });
    if let Some((estimate, used)) = syn {
        report.baselines.push(BaselineResult {
            method: "syn_wo_opt".into(),
            estimate,
            resamples: None,
            delta: None,
            g_star: Some(used),
            seed: syn_seed,
        });
    }

    report.valid = r.report.is_valid();
    report.reasons.splice(0..0, r.report.reasons.iter().cloned());
    report.a_from_synthetic = r.report.a_from_synthetic;
    report.p_from_generator = !from_file;
    report.trajectory = r.trajectory.clone();
    if a.osyn.record_timings {
        let mut t = r.timings.clone();
        t.push(elapsed);
        report.timings = Some(t);
    }
    report.results = json!({
        "test_size": test.len(),
        "test_loss": r.test_loss,
        "regions": r.partition.k(),
        "occupied": r.occupied.len(),
        "g_star": g_star,
        "counts": r.counts.counts(),
        "underfilled": r.underfilled,
        "batch_files": gen.files().len(),
        "mass_from_file": from_file,
    });
    report.bound = Some(r.report.clone());
    if cli.format == Format::Csv {
        io::write_dataset(&r.selected, cli.out.join("selected.csv"))?;
        io::write_mass(&r.mass, cli.out.join("mass.csv"))?;
        let rows: Vec<Vec<String>> = r
            .regions
            .iter()
            .zip(&r.selected)
            .zip(&r.losses)
            .map(|((reg, s), l)| vec![s.id.clone().unwrap_or_default(), reg.to_string(), f(*l)])
            .collect();
        io::write_table(&["id", "region", "loss"], &rows, cli.out.join("selected_losses.csv"))?;
    }
    Ok(())
}

fn estimate_mass(cli: &Cli, a: &MassArgs, report: &mut RunReport) -> Result<()> {
    let cfg = a.osyn.config(cli.seed);
    let test: Dataset<f64> = io::read_dataset(&a.test)?;
    let (partition, mass) = match (&a.gen_dir, a.shift) {
        (Some(dir), _) => osyn::estimate_mass(&test, &FileGenerator::<f64>::open(dir)?, &cfg)?,
        (None, Some(shift)) => osyn::estimate_mass(&test, &world().reshifted(shift), &cfg)?,
        (None, None) => unreachable!("validated"),
    };
    report.p_from_generator = true;
    report.results = json!({
        "regions": partition.k(),
        "samples": mass.samples(),
        "empty_regions": mass.proportions().iter().filter(|&&p| p == 0.0).count(),
    });
    // the mass file is the product of this command, whatever the format
    io::write_mass(&mass, cli.out.join("mass.csv"))?;
    Ok(())
}
