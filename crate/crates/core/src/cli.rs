//! Command-line front end. Every command reads and writes plain CSV or text
//! files, and all randomness derives from the global `--seed`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use rayon::prelude::*;

use crate::data::{load_goals, load_scene, observe, synth_scene, write_goals, write_scene, AgentPlacement, SynthConfig, DEFAULT_TIMESTEP};
use crate::error::{Error, Result};
use crate::eval::{run_benchmark, BenchmarkConfig};
use crate::goals::infer_goal_posterior;
use crate::gp::GpFitConfig;
use crate::grid::GridConfig;
use crate::model::{train_model, Axis, GoalModel};
use crate::predict::{multi_step, GoalMode, PredictionRequest};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Parser)]
#[command(name = "crowdgp", version, about = "Goal-conditioned GP crowd motion model")]
pub struct Cli {
    /// Seed for every random choice of the run.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    pub seed: u64,

    /// Worker thread cap; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the per-goal velocity GPs and write a model file.
    Train(TrainArgs),
    /// Goal posteriors of the agents present at a step.
    InferGoals(InferArgs),
    /// Sample joint future trajectories of the agents present at a step.
    Predict(PredictArgs),
    /// ADE/FDE of the model against the constant-velocity baseline.
    Benchmark(BenchmarkArgs),
    /// Generate a synthetic crowd scene.
    Synth(SynthArgs),
    /// Print the learned lengthscales of each GP as a grid.
    InspectModel(InspectArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub goals: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Seconds between steps.
    #[arg(long, default_value_t = DEFAULT_TIMESTEP)]
    pub dt: f64,
    /// Grid cells per side.
    #[arg(long, default_value_t = 4)]
    pub cells: usize,
    /// Grid side length in scene units.
    #[arg(long, default_value_t = 80.0)]
    pub span: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iterations: usize,
    #[arg(long, default_value_t = 3)]
    pub restarts: usize,
    /// Largest training bag used per goal; bigger bags are subsampled.
    #[arg(long, default_value_t = 1000)]
    pub subsample_cap: usize,
    /// Use a zero prior mean instead of the bag mean.
    #[arg(long)]
    pub zero_mean: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub upto_step: i64,
    /// Observed positions per agent; all by default.
    #[arg(long)]
    pub window: Option<usize>,
    /// Output CSV; stdout by default.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub at_step: i64,
    #[arg(long, default_value_t = 20)]
    pub horizon: usize,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    #[arg(long, default_value = "map")]
    pub mode: GoalMode,
    #[arg(long)]
    pub window: Option<usize>,
    /// Agent with a known goal, as `agent_id=goal_index`; repeatable.
    #[arg(long = "known", value_parser = parse_known)]
    pub known: Vec<(String, usize)>,
    /// Directory receiving fan.csv and summary.csv.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,2,5,10,20")]
    pub horizons: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    #[arg(long, default_value_t = 5)]
    pub scenarios: usize,
    /// Observed positions per agent before each split.
    #[arg(long, default_value_t = 8)]
    pub observed: usize,
    #[arg(long, default_value = "map")]
    pub mode: GoalMode,
    /// Score mean squared distance instead of mean distance.
    #[arg(long)]
    pub squared: bool,
    /// Mark the report as evaluated on training data.
    #[arg(long)]
    pub on_training_data: bool,
    /// Results CSV (`metric,horizon,method,value`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-step error curve CSV.
    #[arg(long)]
    pub curves: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub agents: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// `key = value` settings applied before the other flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also write the goal set used.
    #[arg(long)]
    pub goals_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Lengthscales above this are marked irrelevant.
    #[arg(long, default_value_t = 7.0)]
    pub threshold: f64,
}

fn parse_known(s: &str) -> std::result::Result<(String, usize), String> {
    let (agent, goal) = s
        .split_once('=')
        .ok_or_else(|| format!("expected agent_id=goal_index, got `{s}`"))?;
    let goal = goal
        .trim()
        .parse()
        .map_err(|_| format!("invalid goal index in `{s}`"))?;
    Ok((agent.trim().to_string(), goal))
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::validation(format!("{} is not a readable file", path.display())))
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn emit(out: Option<&Path>, contents: &str) -> Result<()> {
    match out {
        Some(p) => write_file(p, contents),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

pub fn cmd_train(args: &TrainArgs, seed: u64) -> Result<String> {
    require_file(&args.scene)?;
    require_file(&args.goals)?;
    let grid = GridConfig::new(args.cells, args.span)?;
    let scene = load_scene(&args.scene, args.dt)?;
    let goals = load_goals(&args.goals)?;
    let fit = GpFitConfig {
        max_iterations: args.max_iterations,
        restarts: args.restarts,
        subsample_cap: args.subsample_cap,
        seed,
        fit_mean: !args.zero_mean,
        ..GpFitConfig::default()
    };
    let model = train_model(&scene, &goals, &grid, &fit)?;
    model.save(&args.out)?;
    let mut report = String::from("goal,axis,training_points,log_marginal\n");
    for (g, rec) in model.per_goal.iter().enumerate() {
        for axis in Axis::BOTH {
            let r = rec.axis(axis);
            let _ = writeln!(report, "{g},{},{},{:.6}", axis.name(), r.training_points, r.log_marginal);
        }
    }
    Ok(report)
}

pub fn cmd_infer_goals(args: &InferArgs) -> Result<String> {
    require_file(&args.model)?;
    require_file(&args.scene)?;
    let model = GoalModel::load(&args.model)?;
    let scene = load_scene(&args.scene, model.timestep)?;
    let histories = observe(&scene, args.upto_step, args.window, &model.grid);
    if histories.is_empty() {
        return Err(Error::validation(format!("no agents present at step {}", args.upto_step)));
    }
    let posteriors = histories
        .par_iter()
        .map(|h| infer_goal_posterior(h, &model, None))
        .collect::<Result<Vec<_>>>()?;
    let mut out = String::from("agent_id");
    for g in 0..model.n_goals() {
        let _ = write!(out, ",goal_{g}");
    }
    out.push('\n');
    for (h, p) in histories.iter().zip(&posteriors) {
        out.push_str(&h.agent_id);
        for v in p.probabilities() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn cmd_predict(args: &PredictArgs, seed: u64) -> Result<String> {
    require_file(&args.model)?;
    require_file(&args.scene)?;
    if !args.out_dir.is_dir() {
        return Err(Error::validation(format!("{} is not a directory", args.out_dir.display())));
    }
    let model = GoalModel::load(&args.model)?;
    let scene = load_scene(&args.scene, model.timestep)?;
    let mut request =
        PredictionRequest::from_scene(&scene, &model, args.at_step, args.window, args.horizon, args.samples);
    request.mode = args.mode;
    request.seed = seed;
    request.known_goals = args.known.iter().cloned().collect::<BTreeMap<_, _>>();
    let fan = multi_step(&request, &model)?;
    let fan_path = args.out_dir.join("fan.csv");
    let summary_path = args.out_dir.join("summary.csv");
    write_file(&fan_path, &fan.to_fan_csv())?;
    write_file(&summary_path, &fan.to_summary_csv())?;
    Ok(format!(
        "predicted {} agents for {} steps with {} samples\nwrote {} and {}\n",
        fan.n_agents(),
        fan.horizon(),
        fan.samples(),
        fan_path.display(),
        summary_path.display()
    ))
}

pub fn cmd_benchmark(args: &BenchmarkArgs, seed: u64) -> Result<String> {
    require_file(&args.model)?;
    require_file(&args.scene)?;
    let model = GoalModel::load(&args.model)?;
    let scene = load_scene(&args.scene, model.timestep)?;
    let cfg = BenchmarkConfig {
        horizons: args.horizons.clone(),
        observed_steps: args.observed,
        scenarios: args.scenarios,
        samples: args.samples,
        mode: args.mode,
        seed,
        squared: args.squared,
        disjoint_from_training: !args.on_training_data,
    };
    let report = run_benchmark(&scene, &model, &cfg)?;
    if let Some(p) = &args.out {
        write_file(p, &report.to_csv())?;
    }
    if let Some(p) = &args.curves {
        write_file(p, &report.curves_csv())?;
    }
    Ok(report.to_table())
}

pub fn cmd_synth(args: &SynthArgs, seed: u64) -> Result<String> {
    let mut cfg = SynthConfig::default();
    if let Some(path) = &args.config {
        require_file(path)?;
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        cfg = cfg.apply_kv(&text)?;
    }
    if let Some(n) = args.agents {
        cfg.placement = AgentPlacement::Random { count: n };
    }
    if let Some(t) = args.steps {
        cfg.steps = t;
    }
    let scene = synth_scene(&cfg, seed)?;
    write_file(&args.out, &write_scene(&scene))?;
    if let Some(p) = &args.goals_out {
        write_file(p, &write_goals(&cfg.goals))?;
    }
    Ok(format!("wrote {} agents to {}\n", scene.len(), args.out.display()))
}

/// Lengthscale grids of every record; `*` marks cells above `threshold`.
pub fn relevance_table(model: &GoalModel, threshold: f64) -> String {
    let m = model.grid.cells;
    let mut out = String::new();
    for (g, rec) in model.per_goal.iter().enumerate() {
        let goal = model.goals.goals()[g];
        for axis in Axis::BOTH {
            let hp = &rec.axis(axis).hyperparams;
            let _ = writeln!(
                out,
                "goal {g} ({}, {}) axis {}: sigma_f = {:.4}, sigma_n = {:.4}",
                goal.x,
                goal.y,
                axis.name(),
                hp.signal_variance().sqrt(),
                hp.noise_variance().sqrt()
            );
            let ells: Vec<f64> = hp.lengthscales().collect();
            // top row is the largest b so the table reads like the scene
            for b in (1..=m).rev() {
                let mut line = String::new();
                for a in 1..=m {
                    let l = ells[model.grid.flat_index(a, b)];
                    let mark = if l > threshold { '*' } else { ' ' };
                    let _ = write!(line, "{l:>11.3}{mark}");
                }
                let _ = writeln!(out, "{}", line.trim_end());
            }
            out.push('\n');
        }
    }
    let _ = writeln!(out, "* lengthscale above {threshold}");
    out
}

pub fn cmd_inspect_model(args: &InspectArgs) -> Result<String> {
    require_file(&args.model)?;
    let model = GoalModel::load(&args.model)?;
    Ok(relevance_table(&model, args.threshold))
}

pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Train(a) => cmd_train(a, cli.seed),
        Command::InferGoals(a) => {
            let out = cmd_infer_goals(a)?;
            emit(a.out.as_deref(), &out)?;
            Ok(String::new())
        }
        Command::Predict(a) => cmd_predict(a, cli.seed),
        Command::Benchmark(a) => cmd_benchmark(a, cli.seed),
        Command::Synth(a) => cmd_synth(a, cli.seed),
        Command::InspectModel(a) => cmd_inspect_model(a),
    }
}

fn run_with_threads(cli: &Cli) -> Result<String> {
    match cli.threads {
        Some(0) => Err(Error::validation("--threads must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::validation(format!("cannot start {n} threads: {e}")))?
            .install(|| run(cli)),
        None => run(cli),
    }
}

/// Process entry point; returns the exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    info!("{cli:?}");
    match run_with_threads(&cli) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
