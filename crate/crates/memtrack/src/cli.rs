//! Command-line surface: `simulate | train | eval | track | gradcheck | datascale`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use memtrack_core::filter::{self, extension_mean, FilterRun, InitConfig};
use memtrack_core::memnet::{
    self, fit_feature_norm, run_network, Executor, Masks, NetworkParams, TrainConfig,
};
use memtrack_core::metrics::{self, MetricsReport};
use memtrack_core::models::{frame_stats, NominalModel, ScenarioConfig};
use memtrack_core::simulator::{generate_case, generate_dataset, Case, Dataset};
use memtrack_core::spd;
use memtrack_core::autodiff::{AdjointFault, Eval};

use crate::config::{ConfigText, NoiseLevel, RunConfig};
use crate::error::{CliError, StoreError};
use crate::exec::Parallel;
use crate::store::{self, num, ReportFormat};

#[derive(Debug, Parser)]
#[command(name = "memtrack", version, about = "Memory-compensated random-matrix extended object tracking")]
pub struct Cli {
    /// Master seed; every random draw of the command derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Experiment configuration file (`key = value` lines under `[section]` headers).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output path (a directory for `simulate` and `eval`, a file otherwise).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses every available core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Blocks to disable: comma-separated subset of mub, jeb, jub.
    #[arg(long, global = true)]
    pub mask: Option<String>,
    /// Extra `section.key=value` overrides, applied after the config file.
    #[arg(long = "set", global = true)]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate one dataset file per configured noise level.
    Simulate(SimulateArgs),
    /// Train the memory network with cross-validation.
    Train(TrainArgs),
    /// Score the baseline and/or a trained network on the test split.
    Eval(EvalArgs),
    /// Per-step trajectory and ellipse data of one case, for plotting.
    Track(TrackArgs),
    /// Compare backpropagated gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Test RMSE against training-set size.
    Datascale(DatascaleArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub cases: Option<usize>,
    #[arg(long)]
    pub train_cases: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub sigma_w: Option<f64>,
    #[arg(long)]
    pub sigma_v: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset file written by `simulate`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub memory_dim: Option<usize>,
    /// Epoch history CSV; defaults to the checkpoint path with `.history.csv`.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Trained checkpoint to evaluate.
    #[arg(long, conflicts_with = "baseline")]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate the compensation-off filter.
    #[arg(long)]
    pub baseline: bool,
    /// Evaluate both and emit a side-by-side table (needs --checkpoint).
    #[arg(long, requires = "checkpoint")]
    pub compare: bool,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Index into all cases of the dataset.
    #[arg(long, default_value_t = 0)]
    pub case: usize,
    /// Trained checkpoint; the compensation-off filter runs without one.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Sequence length K.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub memory_dim: Option<usize>,
    /// Corrupt one adjoint rule; the check must then fail (harness self-test).
    #[arg(long)]
    pub corrupt: bool,
}

#[derive(Debug, Args)]
pub struct DatascaleArgs {
    /// Comma-separated training-set sizes.
    #[arg(long)]
    pub ladder: Option<String>,
    #[arg(long)]
    pub test_cases: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

/// Loads the configuration file (if any) and applies flag overrides.
fn load_config(cli: &Cli, flags: &[(&str, Option<String>)]) -> Result<RunConfig, CliError> {
    let mut text = match &cli.config {
        Some(p) => ConfigText::read(p)?,
        None => ConfigText::default(),
    };
    for o in &cli.overrides {
        text.set(o, "--set")?;
    }
    if let Some(m) = &cli.mask {
        text.set(&format!("train.mask={m}"), "--mask")?;
    }
    for (key, value) in flags {
        if let Some(v) = value {
            let flag = format!("--{}", key.rsplit('.').next().unwrap_or(key).replace('_', "-"));
            text.set(&format!("{key}={v}"), &flag)?;
        }
    }
    Ok(RunConfig::from_text(&text)?)
}

fn opt<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

fn out_path(cli: &Cli) -> Result<&Path, CliError> {
    cli.out.as_deref().ok_or_else(|| CliError::Config("--out is required for this command".into()))
}

fn executor(cli: &Cli) -> Result<Parallel, CliError> {
    Parallel::new(cli.threads).map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| StoreError::io(dir, e).into())
}

fn model_for(cfg: &RunConfig, data: &ScenarioConfig) -> Result<NominalModel, CliError> {
    Ok(cfg.model_for(data.dt, data.sigma_w).build()?)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate(a) => simulate(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Track(a) => track(cli, a),
        Command::Gradcheck(a) => gradcheck(cli, a),
        Command::Datascale(a) => datascale(cli, a),
    }
}

/// File name of the dataset for one noise level.
pub fn dataset_file_name(level: NoiseLevel) -> String {
    format!("dataset_w{}_v{}.mtds", level.0, level.1)
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<(), CliError> {
    let cfg = load_config(
        cli,
        &[
            ("scenario.cases", opt(&a.cases)),
            ("scenario.train_cases", opt(&a.train_cases)),
            ("scenario.steps", opt(&a.steps)),
            ("scenario.sigma_w", opt(&a.sigma_w)),
            ("scenario.sigma_v", opt(&a.sigma_v)),
        ],
    )?;
    let dir = out_path(cli)?;
    create_dir(dir)?;
    let exec = executor(cli)?;
    for &level in &cfg.noise_levels {
        let sc = cfg.scenario_for(level, cli.seed);
        sc.validate()?;
        let cases = exec.map(sc.cases, |i| generate_case(&sc, i)).into_iter().collect::<Result<Vec<_>, _>>()?;
        let (train, test) = Dataset::default_split(&sc);
        let ds = Dataset { config: sc.clone(), cases, train, test };
        let path = dir.join(dataset_file_name(level));
        store::write_dataset(&path, &ds)?;
        let points: usize = ds.cases.iter().flat_map(|c| &c.frames).map(|f| f.len()).sum();
        let frames = ds.cases.len() * sc.steps;
        println!(
            "sigma_w={} sigma_v={}: {} cases, K={}, mean scatterers {:.3} -> {}",
            level.0,
            level.1,
            ds.cases.len(),
            sc.steps,
            points as f64 / frames as f64,
            path.display()
        );
    }
    Ok(())
}

/// Training template: fresh network seeded by `seed`, masks, and feature
/// normalisation fitted on compensation-off runs of the training cases.
pub fn training_template(
    cases: &[&Case],
    model: &NominalModel,
    init: &InitConfig,
    memory_dim: usize,
    masks: Masks,
    seed: u64,
) -> Result<NetworkParams, CliError> {
    let norm = fit_feature_norm(cases.iter().copied(), model, init)?;
    Ok(NetworkParams::init(memory_dim, seed).with_norm(norm).with_masks(masks))
}

/// History CSV, one row per (fold, epoch).
pub fn history_csv(history: &[memnet::EpochRecord]) -> String {
    let mut s = String::from("fold,epoch,train_loss,val_loss,val_rmse,val_iou,val_gwd,skipped_batches\n");
    for r in history {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.fold,
            r.epoch,
            num(r.train_loss),
            num(r.val.loss),
            num(r.val.rmse),
            num(r.val.mean_iou),
            num(r.val.mean_gwd),
            r.skipped_batches
        )
        .expect("writing to a String");
    }
    s
}

fn train(cli: &Cli, a: &TrainArgs) -> Result<(), CliError> {
    let cfg = load_config(
        cli,
        &[
            ("train.epochs", opt(&a.epochs)),
            ("train.learning_rate", opt(&a.lr)),
            ("train.folds", opt(&a.folds)),
            ("train.memory_dim", opt(&a.memory_dim)),
        ],
    )?;
    let out = out_path(cli)?;
    let ds = store::read_dataset(&a.data)?;
    let model = model_for(&cfg, &ds.config)?;
    let cases: Vec<&Case> = ds.train_cases().collect();
    if cases.is_empty() {
        return Err(CliError::Data(format!("{}: training split is empty", a.data.display())));
    }
    let tc = TrainConfig { seed: cli.seed, ..cfg.train.clone() };
    let template = training_template(&cases, &model, &cfg.init, tc.memory_dim, cfg.masks, cli.seed)?;
    let exec = executor(cli)?;
    info!("training on {} sequences, {} folds, {} epochs, {} threads", cases.len(), tc.folds, tc.epochs, exec.threads());
    let outcome = memnet::train(&cases, &model, &cfg.init, &tc, &template, &exec, &mut |r| {
        info!(
            "fold={} epoch={} train_loss={:.6} val_loss={:.6} val_rmse={:.4} val_iou={:.4} val_gwd={:.4} skipped={}",
            r.fold, r.epoch, r.train_loss, r.val.loss, r.val.rmse, r.val.mean_iou, r.val.mean_gwd, r.skipped_batches
        )
    })?;
    store::write_checkpoint(out, &outcome.params, &store::config_digest(&tc))?;
    let history = a.history.clone().unwrap_or_else(|| out.with_extension("history.csv"));
    store::write_string(&history, &history_csv(&outcome.history))?;
    println!(
        "best fold {} epoch {} val loss {:.6} -> {} (history {})",
        outcome.best_fold,
        outcome.best_epoch,
        outcome.best_val_loss,
        out.display(),
        history.display()
    );
    Ok(())
}

/// Runs `params` (or the compensation-off filter when `None`) over `cases`.
pub fn evaluate<E: Executor>(
    cases: &[&Case],
    params: Option<&NetworkParams>,
    model: &NominalModel,
    init: &InitConfig,
    exec: &E,
) -> Result<MetricsReport, CliError> {
    let runs = exec.map(cases.len(), |i| -> memtrack_core::Result<FilterRun> {
        match params {
            Some(p) => Ok(run_network(p, &cases[i].frames, model, init)?.run),
            None => filter::run_baseline(&cases[i].frames, model, init),
        }
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let truths: Vec<_> = cases.iter().map(|c| &c.truth).collect();
    Ok(metrics::evaluate_run(&truths, &runs)?)
}

/// Checkpoints describe their own memory size, so none is imposed here.
fn read_params(path: &Path) -> Result<NetworkParams, CliError> {
    Ok(store::read_checkpoint(path, None)?.params)
}

fn eval(cli: &Cli, a: &EvalArgs) -> Result<(), CliError> {
    let cfg = load_config(cli, &[])?;
    let dir = out_path(cli)?;
    let ds = store::read_dataset(&a.data)?;
    let model = model_for(&cfg, &ds.config)?;
    let cases: Vec<&Case> = ds.test_cases().collect();
    if cases.is_empty() {
        return Err(CliError::Data(format!("{}: dataset has no test split", a.data.display())));
    }
    if a.checkpoint.is_none() && !a.baseline {
        return Err(CliError::Config("eval needs --checkpoint or --baseline".into()));
    }
    let exec = executor(cli)?;
    create_dir(dir)?;
    let mut rows: Vec<(&str, MetricsReport)> = Vec::new();
    if a.baseline || a.compare {
        rows.push(("baseline", evaluate(&cases, None, &model, &cfg.init, &exec)?));
    }
    if let Some(p) = &a.checkpoint {
        let params = read_params(p)?;
        rows.push(("memnet", evaluate(&cases, Some(&params), &model, &cfg.init, &exec)?));
    }
    for (name, report) in &rows {
        store::write_report(report, &dir.join(format!("{name}.csv")), ReportFormat::Csv)?;
        store::write_report(report, &dir.join(format!("{name}.json")), ReportFormat::Json)?;
        println!(
            "{name:>8}: rmse {:.4} m (mse {:.4} m^2), iou {:.4}, gwd {:.4}; peaks: error {:.3} m, iou {:.4}, gwd {:.3}",
            report.rmse,
            report.mean_squared_error,
            report.mean_iou,
            report.mean_gwd,
            report.peak_position_error,
            report.min_iou,
            report.max_gwd
        );
    }
    if a.compare {
        let refs: Vec<(&str, &MetricsReport)> = rows.iter().map(|(n, r)| (*n, r)).collect();
        store::write_string(&dir.join("compare.json"), &store::comparison_json(&refs))?;
        store::write_string(&dir.join("compare.csv"), &store::comparison_csv(&refs))?;
    }
    Ok(())
}

/// Centre, semi-axes and orientation (radians, of the major axis) of an extent.
pub fn ellipse_parameters(extent: &spd::Mat) -> Result<(f64, f64, f64), CliError> {
    let (vals, vecs) = spd::sym_eigen(extent)?;
    let major = if vals[0] >= vals[1] { 0 } else { 1 };
    let minor = 1 - major;
    let angle = vecs[(1, major)].atan2(vecs[(0, major)]);
    Ok((vals[major].max(0.0).sqrt(), vals[minor].max(0.0).sqrt(), angle))
}

fn track(cli: &Cli, a: &TrackArgs) -> Result<(), CliError> {
    let cfg = load_config(cli, &[])?;
    let out = out_path(cli)?;
    let ds = store::read_dataset(&a.data)?;
    let case = ds.cases.get(a.case).ok_or_else(|| {
        CliError::Data(format!("case index {} out of range (dataset has {} cases)", a.case, ds.cases.len()))
    })?;
    let model = model_for(&cfg, &ds.config)?;
    let run = match &a.checkpoint {
        Some(p) => run_network(&read_params(p)?, &case.frames, &model, &cfg.init)?.run,
        None => filter::run_baseline(&case.frames, &model, &cfg.init)?,
    };
    let mut s = String::from(
        "step,truth_px,truth_py,truth_vx,truth_vy,truth_semi_major,truth_semi_minor,truth_angle,\
         count,centroid_x,centroid_y,est_px,est_py,est_vx,est_vy,est_semi_major,est_semi_minor,est_angle\n",
    );
    let mut e = Eval;
    for (i, (state, ext)) in run.states.iter().zip(&run.extensions).enumerate() {
        let k = i + 1;
        let t = &case.truth.states[k];
        let (ta, tb, tt) = ellipse_parameters(&case.truth.extents[k])?;
        let fs = frame_stats(&case.frames[k])?;
        let (ea, eb, et) = ellipse_parameters(&extension_mean(&mut e, ext)?)?;
        let m = state.mean.data();
        let cols = [
            t[0], t[1], t[2], t[3], ta, tb, tt, fs.mean[(0, 0)], fs.mean[(1, 0)], m[0], m[1], m[2], m[3], ea, eb, et,
        ];
        let cols: Vec<String> = cols.iter().map(|v| num(*v)).collect();
        writeln!(s, "{k},{},{},{}", cols[..7].join(","), fs.count, cols[7..].join(",")).expect("writing to a String");
    }
    store::write_string(out, &s)?;
    let mut pts = String::from("step,x,y\n");
    for (k, frame) in case.frames.iter().enumerate() {
        for p in frame.points() {
            writeln!(pts, "{k},{},{}", num(p[0]), num(p[1])).expect("writing to a String");
        }
    }
    let points_path = out.with_extension("points.csv");
    store::write_string(&points_path, &pts)?;
    println!("{} rows -> {} (measurements {})", run.states.len(), out.display(), points_path.display());
    Ok(())
}

/// Outcome of [`gradcheck_instance`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckResult {
    pub max_rel_error: f64,
    pub checked: usize,
    pub passed: bool,
}

/// Relative-error bound of the gradient check.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Finite-difference check on a fresh, perturbed network and a fresh case.
pub fn gradcheck_instance(cfg: &RunConfig, seed: u64, corrupt: bool) -> Result<GradcheckResult, CliError> {
    let g = &cfg.gradcheck;
    let sc = ScenarioConfig { steps: g.steps, seed, ..cfg.scenario.clone() };
    let case = generate_case(&sc, 0)?;
    let model = model_for(cfg, &sc)?;
    let norm = fit_feature_norm([&case], &model, &cfg.init)?;
    let params = NetworkParams::init(g.memory_dim, seed)
        .with_norm(norm)
        .with_masks(cfg.masks)
        .perturbed(seed ^ 0x9e37_79b9_7f4a_7c15, g.perturbation);
    let fault = corrupt.then_some(AdjointFault::HalfTanh);
    let r = memnet::grad_check(&params, &case, &model, &cfg.init, g.gamma, g.step, fault)?;
    Ok(GradcheckResult {
        max_rel_error: r.max_rel_error,
        checked: r.checked,
        passed: r.max_rel_error < GRADCHECK_TOLERANCE,
    })
}

fn gradcheck(cli: &Cli, a: &GradcheckArgs) -> Result<(), CliError> {
    let cfg = load_config(cli, &[("gradcheck.steps", opt(&a.steps)), ("gradcheck.memory_dim", opt(&a.memory_dim))])?;
    let r = gradcheck_instance(&cfg, cli.seed, a.corrupt)?;
    println!(
        "{}: max relative error {:.3e} over {} entries (tolerance {:.0e})",
        if r.passed { "PASS" } else { "FAIL" },
        r.max_rel_error,
        r.checked,
        GRADCHECK_TOLERANCE
    );
    if r.passed {
        Ok(())
    } else {
        Err(CliError::Numeric(format!("gradient check failed: {:.3e}", r.max_rel_error)))
    }
}

fn datascale(cli: &Cli, a: &DatascaleArgs) -> Result<(), CliError> {
    let cfg = load_config(
        cli,
        &[
            ("datascale.ladder", a.ladder.clone()),
            ("datascale.test_cases", opt(&a.test_cases)),
            ("train.epochs", opt(&a.epochs)),
        ],
    )?;
    let out = out_path(cli)?;
    let largest = *cfg.datascale.ladder.iter().max().expect("validated non-empty ladder");
    let sc = ScenarioConfig {
        cases: largest + cfg.datascale.test_cases,
        train_cases: largest,
        ..cfg.scenario_for(cfg.noise_levels[0], cli.seed)
    };
    let ds = generate_dataset(&sc)?;
    let model = model_for(&cfg, &sc)?;
    let exec = executor(cli)?;
    let test: Vec<&Case> = ds.test_cases().collect();
    let baseline = evaluate(&test, None, &model, &cfg.init, &exec)?;
    let tc = TrainConfig { seed: cli.seed, ..cfg.train.clone() };
    let mut s = String::from("train_size,baseline_rmse,rmse,mean_iou,mean_gwd\n");
    let mut previous = f64::INFINITY;
    for &n in &cfg.datascale.ladder {
        let cases: Vec<&Case> = ds.train.iter().take(n).map(|&i| &ds.cases[i]).collect();
        let template = training_template(&cases, &model, &cfg.init, tc.memory_dim, cfg.masks, cli.seed)?;
        let outcome = memnet::train(&cases, &model, &cfg.init, &tc, &template, &exec, &mut |r| {
            info!("size={n} fold={} epoch={} val_loss={:.6}", r.fold, r.epoch, r.val.loss)
        })?;
        let report = evaluate(&test, Some(&outcome.params), &model, &cfg.init, &exec)?;
        if report.rmse > previous {
            info!("test RMSE rose from {previous:.4} to {:.4} at size {n}", report.rmse);
        }
        previous = report.rmse;
        println!("size {n}: baseline rmse {:.4}, trained rmse {:.4}", baseline.rmse, report.rmse);
        writeln!(s, "{n},{},{},{},{}", num(baseline.rmse), num(report.rmse), num(report.mean_iou), num(report.mean_gwd))
            .expect("writing to a String");
    }
    store::write_string(out, &s)?;
    Ok(())
}
