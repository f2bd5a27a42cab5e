//! `ditto`: generate data, train, evaluate, roll out, reduce with POD and
//! render reports.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use ditto_core::config::{parse_recipe, preset, Recipe};
use ditto_core::datagen::{dataset_std, generate, load_dataset, save_dataset, split_dataset, PdeConfig, PdeKind, Split};
use ditto_core::io::{encode_f32, write_json, atomic_write};
use ditto_core::model::{self, Model};
use ditto_core::pod::{pod_pipeline, PodPipelineConfig};
use ditto_core::report::{line_chart_svg, EvalReport};
use ditto_core::rollout::{eval_extrapolation, eval_superresolution, noise_sweep, rel_l2_error, rollout_bundled, NoiseSweep, RolloutConfig};
use ditto_core::training::{history_csv, train, Strategy};
use ditto_core::Error;

#[derive(Parser)]
#[command(name = "ditto", version, about = "Time-conditioned neural operators for time-dependent PDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RecipeArgs {
    /// Built-in recipe to start from.
    #[arg(long)]
    preset: Option<String>,
    /// TOML overrides applied on top of the preset.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a PDE for many random initial conditions and store the dataset.
    GenData {
        #[command(flatten)]
        recipe: RecipeArgs,
        #[arg(long, value_enum)]
        pde: Option<PdeArg>,
        #[arg(long)]
        nu: Option<f64>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Nodes per axis.
        #[arg(long)]
        n: Option<usize>,
        /// Stored snapshots after the initial one.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        t_final: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a stored dataset.
    Train {
        #[command(flatten)]
        recipe: RecipeArgs,
        #[arg(long)]
        data: PathBuf,
        /// Override the look-forward window of a bundled schedule.
        #[arg(long)]
        lf: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        recipe: RecipeArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        mode: EvalMode,
        /// Look-forward window for extrapolation rollouts.
        #[arg(long)]
        lf: Option<usize>,
        /// Variant label written to the report; defaults to the model variant.
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bundled autoregressive rollout of one trajectory.
    Rollout {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Trajectory index in the dataset.
        #[arg(long, default_value_t = 0)]
        traj: usize,
        #[arg(long)]
        lf: usize,
        #[arg(long)]
        horizon: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// POD reduction, bundled training on modal coefficients, lifted scoring.
    Pod {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 5)]
        modes: usize,
        #[arg(long)]
        lf: usize,
        /// Rollout steps on the test split; defaults to the test length.
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        /// TOML file with a full pipeline configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge report CSVs and optionally draw SVG charts.
    Report {
        #[arg(long = "input", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        plot: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Resolve a config against its preset and print it, or list its errors.
    ValidateConfig {
        #[arg(long)]
        preset: Option<String>,
        path: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PdeArg {
    Burgers,
    NavierStokes,
    Wave2d,
    Wave3d,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalMode {
    Superres,
    Extrap,
    Noise,
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("DITTO_SEED") {
        Ok(s) => Ok(Some(s.trim().parse().map_err(|_| Error::InvalidArgument(format!("DITTO_SEED={s:?} is not an integer")))?)),
        Err(_) => Ok(None),
    }
}

fn load_recipe(args: &RecipeArgs) -> Result<Recipe> {
    let text = match &args.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Io { path: p.clone(), source: e })?,
        None => String::new(),
    };
    let mut r = parse_recipe(&text, args.preset.as_deref())?;
    if let Some(seed) = env_seed()? {
        r.override_seeds(seed);
    }
    r.validate()?;
    Ok(r)
}

/// Provenance record written next to every artifact.
fn write_run(out: &Path, command: &str, config: serde_json::Value, seeds: serde_json::Value, started: Instant) -> Result<()> {
    let unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let record = json!({
        "command": command,
        "argv": std::env::args().collect::<Vec<_>>(),
        "config": config,
        "seeds": seeds,
        "code_version": env!("CARGO_PKG_VERSION"),
        "finished_unix": unix,
        "wall_time_s": started.elapsed().as_secs_f64(),
    });
    write_json(&out.join("run.json"), &record)?;
    Ok(())
}

fn gen_data(recipe: RecipeArgs, pde: Option<PdeArg>, nu: Option<f64>, count: Option<usize>, seed: Option<u64>, n: Option<usize>, steps: Option<usize>, t_final: Option<f64>, out: &Path) -> Result<()> {
    let started = Instant::now();
    let mut r = load_recipe(&recipe)?;
    if let Some(kind) = pde {
        let base = match kind {
            PdeArg::Burgers => preset("burgers-nu0.01")?,
            PdeArg::NavierStokes => preset("ns-re20")?,
            PdeArg::Wave2d => preset("wave2d")?,
            PdeArg::Wave3d => preset("wave3d")?,
        };
        r.data.pde = base.data.pde;
    }
    let p = &mut r.data.pde;
    if let Some(v) = nu {
        p.viscosity = v;
    }
    if let Some(v) = n {
        p.grid = vec![v; p.kind.dimension()];
    }
    if let Some(v) = steps {
        p.n_steps = v;
    }
    if let Some(v) = t_final {
        p.t_final = v;
    }
    if let Some(v) = count {
        r.data.count = v;
    }
    if let Some(v) = seed {
        r.data.seed = v;
    }
    if let Some(v) = env_seed()? {
        r.data.seed = v;
    }
    p.validate()?;
    let bundle = generate(&r.data.pde, r.data.count, r.data.seed)?;
    let bundle = split_dataset(&bundle, r.data.split, r.data.split_seed)?;
    save_dataset(&bundle, out)?;
    write_run(out, "gen-data", serde_json::to_value(&r.data)?, json!({"data": r.data.seed, "split": r.data.split_seed}), started)
}

fn train_cmd(recipe: RecipeArgs, data: &Path, lf: Option<usize>, epochs: Option<usize>, out: &Path) -> Result<()> {
    let started = Instant::now();
    let mut r = load_recipe(&recipe)?;
    if let Some(lf) = lf {
        match &mut r.training.strategy {
            Strategy::Bundled { lf: slot, .. } => *slot = lf,
            _ => bail!(Error::InvalidArgument("--lf needs a bundled training strategy".into())),
        }
    }
    if let Some(e) = epochs {
        r.training.optimizer.epochs = e;
    }
    r.validate()?;
    let bundle = load_dataset(data)?;
    let bundle = if r.data.train_stride > 1 { bundle.subsample(r.data.train_stride)? } else { bundle };
    let mut cfg = r.model.clone();
    cfg.grid_shape = bundle.grid().shape();
    cfg.coord_bounds = bundle.config.domain();
    let mut model = Model::with_grid(cfg, bundle.grid())?;
    eprintln!("training {} parameters on {} trajectories", model.parameter_count(), bundle.indices(Split::Train).len());
    let outcome = train(&mut model, &bundle, &r.training, |rec| {
        eprintln!("epoch {:4}  train {:.4e}  val {:.4e}  lr {:.3e}", rec.epoch, rec.train_loss, rec.val_loss, rec.lr);
    })?;
    model::save(&model, &out.join("checkpoint"))?;
    atomic_write(&out.join("history.csv"), history_csv(&outcome.history).as_bytes())?;
    write_run(
        out,
        "train",
        serde_json::to_value(&r)?,
        json!({"model": r.model.seed, "training": r.training.optimizer.seed}),
        started,
    )?;
    eprintln!("best epoch {} with validation loss {:.4e}", outcome.best_epoch, outcome.best_val);
    Ok(())
}

fn variant_name(m: &Model) -> String {
    serde_json::to_value(m.config.variant).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

fn scenario_name(cfg: &PdeConfig) -> String {
    let kind = match cfg.kind {
        PdeKind::Burgers => "burgers",
        PdeKind::NavierStokes => "navier_stokes",
        PdeKind::Wave2d => "wave2d",
        PdeKind::Wave3d => "wave3d",
        PdeKind::External => "external",
    };
    format!("{kind}_nu{}", cfg.viscosity)
}

fn eval_cmd(recipe: RecipeArgs, checkpoint: &Path, data: &Path, mode: EvalMode, lf: Option<usize>, label: Option<String>, out: &Path) -> Result<()> {
    let started = Instant::now();
    let r = load_recipe(&recipe)?;
    let model = model::load(checkpoint)?;
    let bundle = load_dataset(data)?;
    let test = bundle.select(Split::Test);
    if test.is_empty() {
        bail!(Error::InvalidArgument("dataset has no test trajectories".into()));
    }
    let scenario = scenario_name(&bundle.config);
    let variant = label.unwrap_or_else(|| variant_name(&model));
    let (report, mode_name) = match mode {
        EvalMode::Superres => {
            let res = if r.eval.superres.is_empty() { vec![bundle.config.n_steps] } else { r.eval.superres.clone() };
            (eval_superresolution(&model, &test, &res, &scenario, &variant)?, "superres")
        }
        EvalMode::Extrap => {
            let plan = r.eval.extrapolation.clone().ok_or_else(|| Error::InvalidArgument("recipe has no extrapolation plan".into()))?;
            let lf = match (lf, r.training.strategy) {
                (Some(lf), _) => lf,
                (None, Strategy::Bundled { lf, .. }) => lf,
                _ => bail!(Error::InvalidArgument("extrapolation needs --lf or a bundled training strategy".into())),
            };
            let dt = bundle.times()[1] - bundle.times()[0];
            let cfg = RolloutConfig { lf, horizon: plan.horizon, train_horizon: plan.train_horizon, dt };
            (eval_extrapolation(&model, &test, &cfg, &scenario, &variant)?, "extrap")
        }
        EvalMode::Noise => {
            let plan = r.eval.noise.clone().ok_or_else(|| Error::InvalidArgument("recipe has no noise plan".into()))?;
            let sweep = NoiseSweep { gammas: plan.gammas, sigma_d: dataset_std(&bundle.select(Split::Train)), seeds: plan.seeds };
            (noise_sweep(&model, &test, &sweep, &scenario, &variant)?, "noise")
        }
    };
    report.write(&out.join("report.csv"))?;
    for row in &report.rows {
        println!("{},{},{},{},{:.6e},{:.6e}", row.scenario, row.variant, row.axis_name, row.axis_value, row.mean, row.std);
    }
    write_run(out, &format!("eval {mode_name}"), serde_json::to_value(&r.eval)?, json!({"noise": r.eval.noise.map(|n| n.seeds)}), started)
}

fn rollout_cmd(checkpoint: &Path, data: &Path, traj: usize, lf: usize, horizon: usize, out: &Path) -> Result<()> {
    let started = Instant::now();
    let model = model::load(checkpoint)?;
    let bundle = load_dataset(data)?;
    let reference = bundle.trajectories.get(traj).ok_or_else(|| Error::InvalidArgument(format!("trajectory {traj} out of range (dataset has {})", bundle.len())))?;
    let dt = reference.times[1] - reference.times[0];
    let cfg = RolloutConfig { lf, horizon, train_horizon: horizon, dt };
    let roll = rollout_bundled(&model, reference.snapshot(0), &cfg)?;
    if let Some(d) = &roll.diagnostic {
        eprintln!("warning: {d}");
    }
    atomic_write(&out.join("rollout.bin"), &encode_f32(roll.states.data()))?;
    let n = reference.spatial_len();
    let errors: Vec<Option<f64>> = roll
        .states
        .data()
        .chunks(n)
        .enumerate()
        .map(|(i, p)| (i <= reference.n_steps()).then(|| rel_l2_error(p, reference.snapshot(i)).ok()).flatten())
        .collect();
    let meta = json!({
        "shape": roll.states.shape(),
        "times": (0..=roll.produced()).map(|i| i as f64 * dt).collect::<Vec<_>>(),
        "bundles": roll.bundles,
        "diagnostic": roll.diagnostic,
        "rel_l2_error": errors,
    });
    write_json(&out.join("rollout.json"), &meta)?;
    write_run(out, "rollout", serde_json::to_value(cfg)?, json!(null), started)?;
    if roll.diagnostic.is_some() {
        bail!(Error::Numeric("rollout truncated by a non-finite state".into()));
    }
    Ok(())
}

fn pod_cmd(data: &Path, modes: usize, lf: usize, horizon: Option<usize>, epochs: Option<usize>, config: Option<PathBuf>, out: &Path) -> Result<()> {
    let started = Instant::now();
    let bundle = load_dataset(data)?;
    let mut cfg: PodPipelineConfig = match &config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
            toml::from_str(&text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))?
        }
        None => PodPipelineConfig::default(),
    };
    cfg.modes = modes;
    cfg.lf = lf;
    let test_len = bundle.select(Split::Test).first().map(|t| t.n_steps()).unwrap_or(0);
    cfg.horizon = horizon.unwrap_or(test_len);
    if let Some(e) = epochs {
        cfg.optimizer.epochs = e;
    }
    if let Some(seed) = env_seed()? {
        cfg.model.seed = seed;
        cfg.optimizer.seed = seed;
    }
    let outcome = pod_pipeline(&bundle, &cfg, "ditto")?;
    if outcome.basis.was_truncated() {
        eprintln!("warning: data supports only {} of the {} requested modes", outcome.basis.rank(), outcome.basis.requested);
    }
    outcome.basis.save(&out.join("basis"))?;
    model::save(&outcome.model, &out.join("checkpoint"))?;
    atomic_write(&out.join("history.csv"), history_csv(&outcome.training.history).as_bytes())?;
    outcome.report.write(&out.join("report.csv"))?;
    println!("mean field-space rel L2 over {} steps: {:.6e}", cfg.horizon, outcome.mean_error);
    write_run(out, "pod", serde_json::to_value(&cfg)?, json!({"model": cfg.model.seed, "training": cfg.optimizer.seed}), started)
}

fn report_cmd(inputs: &[PathBuf], plot: bool, out: &Path) -> Result<()> {
    let started = Instant::now();
    let mut merged = EvalReport::default();
    for p in inputs {
        merged.extend(EvalReport::read(p)?);
    }
    merged.write(&out.join("report.csv"))?;
    let mut charts = Vec::new();
    if plot {
        let mut axes: Vec<&str> = merged.rows.iter().map(|r| r.axis_name.as_str()).collect();
        axes.sort_unstable();
        axes.dedup();
        for axis in axes {
            let subset = EvalReport { rows: merged.rows.iter().filter(|r| r.axis_name == axis).cloned().collect() };
            let series: Vec<(String, Vec<(f64, f64)>)> = subset.series().into_iter().map(|((s, v), pts)| (format!("{s} {v}"), pts)).collect();
            let (title, log) = match axis {
                "step" => ("error vs step", true),
                "gamma" => ("error vs noise level", false),
                "nt_test" => ("error vs test resolution", false),
                other => (other, false),
            };
            let name = format!("{axis}.svg");
            atomic_write(&out.join(&name), line_chart_svg(title, axis, "relative L2 error", &series, log).as_bytes())?;
            charts.push(name);
        }
    }
    write_run(out, "report", json!({"inputs": inputs, "plot": plot, "charts": charts}), json!(null), started)
}

fn validate_config(preset_name: Option<String>, path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    let r = parse_recipe(&text, preset_name.as_deref())?;
    let problems = r.problems();
    if !problems.is_empty() {
        for p in &problems {
            eprintln!("error: {p}");
        }
        bail!(Error::InvalidArgument(format!("{} problem(s) in {}", problems.len(), path.display())));
    }
    print!("{}", r.to_toml()?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { recipe, pde, nu, count, seed, n, steps, t_final, out } => gen_data(recipe, pde, nu, count, seed, n, steps, t_final, &out),
        Command::Train { recipe, data, lf, epochs, out } => train_cmd(recipe, &data, lf, epochs, &out),
        Command::Eval { recipe, checkpoint, data, mode, lf, label, out } => eval_cmd(recipe, &checkpoint, &data, mode, lf, label, &out),
        Command::Rollout { checkpoint, data, traj, lf, horizon, out } => rollout_cmd(&checkpoint, &data, traj, lf, horizon, &out),
        Command::Pod { data, modes, lf, horizon, epochs, config, out } => pod_cmd(&data, modes, lf, horizon, epochs, config, &out),
        Command::Report { inputs, plot, out } => report_cmd(&inputs, plot, &out),
        Command::ValidateConfig { preset, path } => validate_config(preset, &path).context("validate-config"),
    }
}

/// 2 for configuration problems, 3 for numerical failures, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::InvalidArgument(_) | Error::Schema { .. }) => 2,
        Some(e) if e.is_numeric() => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
