//! Displacement errors and the pedestrian-as-robot benchmark: in each
//! selected scenario every pedestrian in turn plays the robot (its goal is
//! known), the crowd is predicted jointly and the robot's predicted path is
//! scored against what it actually did.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use log::warn;
use rayon::prelude::*;

use crate::data::{label_goal, observe, AgentHistory, Scene, Step};
use crate::error::{Error, Result};
use crate::geom::Position2;
use crate::model::GoalModel;
use crate::predict::{map_trajectory, multi_step, GoalMode, PredictionRequest};
use crate::rng::{label, substream_seed};

fn check_finite(points: &[Position2]) -> Result<()> {
    if points.iter().all(|p| p.is_finite()) {
        Ok(())
    } else {
        Err(Error::validation("trajectory contains non-finite positions"))
    }
}

/// Mean Euclidean distance between corresponding points, or the mean squared
/// distance when `squared` is set.
pub fn ade(pred: &[Position2], truth: &[Position2], squared: bool) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::validation(format!(
            "cannot compare trajectories of length {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::validation("cannot compare empty trajectories"));
    }
    check_finite(pred)?;
    check_finite(truth)?;
    let total: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| {
            let d = *p - *t;
            if squared {
                d.norm_squared()
            } else {
                d.norm()
            }
        })
        .sum();
    Ok(total / pred.len() as f64)
}

/// Distance at the last compared step: step `horizon`, or earlier when either
/// trajectory ends first.
pub fn fde(pred: &[Position2], truth: &[Position2], horizon: usize) -> Result<f64> {
    let last = horizon.min(pred.len()).min(truth.len());
    if last == 0 {
        return Err(Error::validation("cannot compare empty trajectories"));
    }
    check_finite(&pred[..last])?;
    check_finite(&truth[..last])?;
    Ok(pred[last - 1].distance(truth[last - 1]))
}

/// Extrapolates the mean velocity over the last five (or fewer) observed steps.
pub fn constant_velocity_baseline(history: &[Position2], horizon: usize, dt: f64) -> Result<Vec<Position2>> {
    if history.len() < 2 {
        return Err(Error::validation(
            "constant-velocity baseline needs at least two observed positions",
        ));
    }
    let k = (history.len() - 1).min(5);
    let last = history[history.len() - 1];
    let velocity = (last - history[history.len() - 1 - k]) * (1.0 / (k as f64 * dt));
    Ok((1..=horizon).map(|h| last + velocity * (h as f64 * dt)).collect())
}

/// One evaluation window: observations up to `split_step` and each agent's
/// true future.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub split_step: Step,
    pub histories: Vec<AgentHistory>,
    /// True positions after the split, `[agent][k]` for step `split_step + k + 1`.
    pub futures: Vec<Vec<Position2>>,
    /// Goal of each agent labelled from its full trajectory.
    pub goals: Vec<usize>,
}

impl Scenario {
    pub fn build(scene: &Scene, model_goals: &crate::data::GoalSet, grid: &crate::grid::GridConfig, split_step: Step, observed: usize, max_horizon: usize) -> Self {
        let histories = observe(scene, split_step, Some(observed), grid);
        let mut futures = Vec::with_capacity(histories.len());
        let mut goals = Vec::with_capacity(histories.len());
        for h in &histories {
            let t = scene.trajectory(&h.agent_id).expect("observed agent is in the scene");
            futures.push(
                (1..=max_horizon as Step)
                    .map_while(|k| t.position_at(split_step + k))
                    .collect(),
            );
            goals.push(label_goal(t, model_goals));
        }
        Scenario {
            split_step,
            histories,
            futures,
            goals,
        }
    }

    /// Agents that can play the robot: two observations and a known future.
    pub fn robots(&self) -> Vec<usize> {
        (0..self.histories.len())
            .filter(|&i| self.histories[i].positions.len() >= 2 && !self.futures[i].is_empty())
            .collect()
    }
}

/// A trajectory predictor scored by the benchmark.
pub trait Predictor: Sync {
    fn name(&self) -> &str;

    /// Predicted positions of agent `robot` for steps `1..=horizon` after the split.
    fn predict(&self, scenario: &Scenario, robot: usize, horizon: usize) -> Result<Vec<Position2>>;
}

/// The learned model; the robot's goal is given, every other goal is inferred.
pub struct GpPredictor<'a> {
    pub model: &'a GoalModel,
    pub samples: usize,
    pub mode: GoalMode,
    pub seed: u64,
}

impl Predictor for GpPredictor<'_> {
    fn name(&self) -> &str {
        "gp"
    }

    fn predict(&self, scenario: &Scenario, robot: usize, horizon: usize) -> Result<Vec<Position2>> {
        let robot_id = scenario.histories[robot].agent_id.clone();
        let seed = substream_seed(self.seed, &[scenario.split_step as u64, label(&robot_id)]);
        let request = PredictionRequest {
            observations: scenario.histories.clone(),
            known_goals: BTreeMap::from([(robot_id, scenario.goals[robot])]),
            horizon,
            samples: self.samples,
            mode: self.mode,
            seed,
        };
        let fan = multi_step(&request, self.model)?;
        Ok(map_trajectory(&fan).swap_remove(robot))
    }
}

pub struct ConstantVelocity {
    pub dt: f64,
}

impl Predictor for ConstantVelocity {
    fn name(&self) -> &str {
        "const-vel"
    }

    fn predict(&self, scenario: &Scenario, robot: usize, horizon: usize) -> Result<Vec<Position2>> {
        constant_velocity_baseline(&scenario.histories[robot].positions, horizon, self.dt)
    }
}

/// Returns the ground truth; every error it scores is zero.
pub struct Oracle;

impl Predictor for Oracle {
    fn name(&self) -> &str {
        "oracle"
    }

    fn predict(&self, scenario: &Scenario, robot: usize, horizon: usize) -> Result<Vec<Position2>> {
        let truth = &scenario.futures[robot];
        Ok(truth[..horizon.min(truth.len())].to_vec())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub horizons: Vec<usize>,
    /// Observed positions per agent before the split.
    pub observed_steps: usize,
    pub scenarios: usize,
    pub samples: usize,
    pub mode: GoalMode,
    pub seed: u64,
    pub squared: bool,
    /// Recorded in the report; the caller keeps training and test data apart.
    pub disjoint_from_training: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            horizons: vec![1, 2, 5, 10, 20],
            observed_steps: 8,
            scenarios: 5,
            samples: 100,
            mode: GoalMode::Map,
            seed: 42,
            squared: false,
            disjoint_from_training: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub horizon: usize,
    pub method: String,
    pub ade: f64,
    pub fde: f64,
}

/// Mean displacement at each predicted step over all robots.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub method: String,
    pub step: usize,
    pub mean_error: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
    pub curves: Vec<CurvePoint>,
    pub split_steps: Vec<Step>,
    pub disjoint_from_training: bool,
    pub squared: bool,
}

impl BenchmarkReport {
    pub fn row(&self, method: &str, horizon: usize) -> Option<&BenchmarkRow> {
        self.rows.iter().find(|r| r.method == method && r.horizon == horizon)
    }

    /// `metric,horizon,method,value`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,horizon,method,value\n");
        for (metric, pick) in [("ADE", true), ("FDE", false)] {
            for r in &self.rows {
                let v = if pick { r.ade } else { r.fde };
                let _ = writeln!(out, "{metric},{},{},{v}", r.horizon, r.method);
            }
        }
        out
    }

    pub fn curves_csv(&self) -> String {
        let mut out = String::from("method,step,mean_error,count\n");
        for c in &self.curves {
            let _ = writeln!(out, "{},{},{},{}", c.method, c.step, c.mean_error, c.count);
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut methods: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !methods.contains(&r.method.as_str()) {
                methods.push(&r.method);
            }
        }
        let mut horizons: Vec<usize> = self.rows.iter().map(|r| r.horizon).collect();
        horizons.dedup();
        let mut out = String::new();
        let _ = write!(out, "{:<8}{:>5}", "metric", "H");
        for m in &methods {
            let _ = write!(out, "{m:>12}");
        }
        out.push('\n');
        for metric in ["ADE", "FDE"] {
            for h in &horizons {
                let _ = write!(out, "{metric:<8}{h:>5}");
                for m in &methods {
                    match self.row(m, *h) {
                        Some(r) => {
                            let v = if metric == "ADE" { r.ade } else { r.fde };
                            let _ = write!(out, "{v:>12.2}");
                        }
                        None => {
                            let _ = write!(out, "{:>12}", "-");
                        }
                    }
                }
                out.push('\n');
            }
        }
        let _ = writeln!(
            out,
            "scenarios at steps {:?}; {} distance; test scene disjoint from training: {}",
            self.split_steps,
            if self.squared { "squared" } else { "euclidean" },
            self.disjoint_from_training
        );
        out
    }
}

/// Split steps with the most simultaneously present agents, at least
/// `observed_steps` apart.
pub fn select_scenarios(scene: &Scene, cfg: &BenchmarkConfig) -> Vec<Step> {
    let Some((first, last)) = scene.step_range() else {
        return Vec::new();
    };
    let mut candidates: Vec<(usize, Step)> = Vec::new();
    for t in first..last {
        let count = scene
            .trajectories()
            .iter()
            .filter(|tr| tr.contains_step(t) && tr.contains_step(t - 1) && tr.contains_step(t + 1))
            .count();
        if count < 2 {
            continue;
        }
        candidates.push((count, t));
    }
    candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let gap = cfg.observed_steps.max(1) as Step;
    let mut chosen: Vec<Step> = Vec::new();
    for (_, t) in candidates {
        if chosen.len() >= cfg.scenarios {
            break;
        }
        if chosen.iter().all(|c| (c - t).abs() >= gap) {
            chosen.push(t);
        }
    }
    chosen.sort_unstable();
    chosen
}

/// Errors of one predictor for one robot: per-step displacements over the
/// longest horizon that was predicted.
struct RobotErrors {
    scenario: usize,
    displacements: Vec<f64>,
    squared: Vec<f64>,
}

pub fn run_benchmark_with(
    scene: &Scene,
    model: &GoalModel,
    cfg: &BenchmarkConfig,
    predictors: &[&dyn Predictor],
) -> Result<BenchmarkReport> {
    if cfg.horizons.is_empty() || cfg.horizons.contains(&0) {
        return Err(Error::validation("horizons must be a non-empty list of positive steps"));
    }
    let max_h = *cfg.horizons.iter().max().expect("non-empty");
    let split_steps = select_scenarios(scene, cfg);
    let scenarios: Vec<Scenario> = split_steps
        .iter()
        .map(|&t| Scenario::build(scene, &model.goals, &model.grid, t, cfg.observed_steps, max_h))
        .filter(|s| {
            let ok = s.robots().len() >= 2;
            if !ok {
                warn!("skipping scenario at step {}: fewer than two agents", s.split_step);
            }
            ok
        })
        .collect();

    let jobs: Vec<(usize, usize)> = scenarios
        .iter()
        .enumerate()
        .flat_map(|(si, s)| s.robots().into_iter().map(move |r| (si, r)))
        .collect();

    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for predictor in predictors {
        let errors: Vec<RobotErrors> = jobs
            .par_iter()
            .map(|&(si, r)| {
                let sc = &scenarios[si];
                let truth = &sc.futures[r];
                let horizon = max_h.min(truth.len());
                let pred = predictor.predict(sc, r, horizon)?;
                if pred.len() < horizon {
                    return Err(Error::validation(format!(
                        "{} predicted {} steps, {horizon} requested",
                        predictor.name(),
                        pred.len()
                    )));
                }
                let displacements = (0..horizon).map(|k| pred[k].distance(truth[k])).collect();
                let squared = (0..horizon).map(|k| (pred[k] - truth[k]).norm_squared()).collect();
                Ok(RobotErrors {
                    scenario: si,
                    displacements,
                    squared,
                })
            })
            .collect::<Result<_>>()?;

        for &h in &cfg.horizons {
            let mut ade_by_scenario: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            let mut fde_by_scenario: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for e in &errors {
                let eff = h.min(e.displacements.len());
                let per_step = if cfg.squared { &e.squared } else { &e.displacements };
                let ade = per_step[..eff].iter().sum::<f64>() / eff as f64;
                ade_by_scenario.entry(e.scenario).or_default().push(ade);
                fde_by_scenario.entry(e.scenario).or_default().push(e.displacements[eff - 1]);
            }
            rows.push(BenchmarkRow {
                horizon: h,
                method: predictor.name().to_string(),
                ade: mean_of_means(&ade_by_scenario),
                fde: mean_of_means(&fde_by_scenario),
            });
        }

        for k in 0..max_h {
            let at_k: Vec<f64> = errors
                .iter()
                .filter_map(|e| e.displacements.get(k).copied())
                .collect();
            if at_k.is_empty() {
                break;
            }
            curves.push(CurvePoint {
                method: predictor.name().to_string(),
                step: k + 1,
                mean_error: at_k.iter().sum::<f64>() / at_k.len() as f64,
                count: at_k.len(),
            });
        }
    }
    rows.sort_by(|a, b| a.horizon.cmp(&b.horizon));

    Ok(BenchmarkReport {
        rows,
        curves,
        split_steps: scenarios.iter().map(|s| s.split_step).collect(),
        disjoint_from_training: cfg.disjoint_from_training,
        squared: cfg.squared,
    })
}

/// Learned model against the constant-velocity baseline.
pub fn run_benchmark(scene: &Scene, model: &GoalModel, cfg: &BenchmarkConfig) -> Result<BenchmarkReport> {
    let gp = GpPredictor {
        model,
        samples: cfg.samples,
        mode: cfg.mode,
        seed: cfg.seed,
    };
    let cv = ConstantVelocity { dt: model.timestep };
    run_benchmark_with(scene, model, cfg, &[&gp, &cv])
}

fn mean_of_means(groups: &BTreeMap<usize, Vec<f64>>) -> f64 {
    if groups.is_empty() {
        return f64::NAN;
    }
    let total: f64 = groups
        .values()
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
        .sum();
    total / groups.len() as f64
}
