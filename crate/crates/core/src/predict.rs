//! Joint multi-step prediction by Monte Carlo rollout.
//!
//! Every agent gets a pair of velocity GPs conditioned on its own observed
//! (grid, velocity) history. Each step draws `S` velocity samples per agent,
//! advances all sampled crowds by `v·dt`, rebuilds every agent's grid in every
//! sample and replaces them by their per-cell mean, which then drives the next
//! step's predictive distributions.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::{observe, AgentHistory, Scene, Step};
use crate::error::{Error, Result};
use crate::geom::{Position2, Velocity2};
use crate::goals::{infer_goal_posterior, GoalPosterior};
use crate::gp::{condition, Gaussian1, TrainedGp};
use crate::grid::{occupancy_grid, OccupancyGrid};
use crate::model::{Axis, GoalModel};
use crate::rng::{label, substream};

const GOAL_STREAM: u64 = 0x676f_616c;
const VELOCITY_STREAM: u64 = 0x7665_6c6f;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GoalMode {
    /// Condition each agent on its most probable goal.
    #[default]
    Map,
    /// Draw every sample's goals from the per-agent posteriors.
    Mixture,
}

impl FromStr for GoalMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "map" => Ok(GoalMode::Map),
            "mixture" => Ok(GoalMode::Mixture),
            other => Err(Error::validation(format!(
                "unknown goal mode `{other}` (expected map or mixture)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRequest {
    pub observations: Vec<AgentHistory>,
    /// Agents whose goal is given, e.g. the robot.
    pub known_goals: BTreeMap<String, usize>,
    pub horizon: usize,
    pub samples: usize,
    pub mode: GoalMode,
    pub seed: u64,
}

impl PredictionRequest {
    /// Request for every agent present at `at_step`, with at most `window`
    /// observed positions each.
    pub fn from_scene(
        scene: &Scene,
        model: &GoalModel,
        at_step: Step,
        window: Option<usize>,
        horizon: usize,
        samples: usize,
    ) -> Self {
        PredictionRequest {
            observations: observe(scene, at_step, window, &model.grid),
            known_goals: BTreeMap::new(),
            horizon,
            samples,
            mode: GoalMode::Map,
            seed: 0,
        }
    }

    pub fn validate(&self, model: &GoalModel) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::validation("prediction horizon must be at least 1"));
        }
        if self.samples == 0 {
            return Err(Error::validation("sample count must be at least 1"));
        }
        if self.observations.is_empty() {
            return Err(Error::validation("no agents to predict"));
        }
        let t = self.observations[0].last_step();
        let mut seen = std::collections::BTreeSet::new();
        for h in &self.observations {
            if h.positions.is_empty() || h.grids.len() != h.positions.len() {
                return Err(Error::validation(format!(
                    "agent {}: history needs one grid per observed position",
                    h.agent_id
                )));
            }
            if h.last_step() != t {
                return Err(Error::validation(format!(
                    "agent {} is observed up to step {}, others up to {t}",
                    h.agent_id,
                    h.last_step()
                )));
            }
            if h.grids.iter().any(|g| g.len() != model.grid.dim()) {
                return Err(Error::validation(format!(
                    "agent {}: grid length does not match the model",
                    h.agent_id
                )));
            }
            if !seen.insert(h.agent_id.as_str()) {
                return Err(Error::validation(format!("duplicate agent {}", h.agent_id)));
            }
        }
        for (agent, g) in &self.known_goals {
            if *g >= model.n_goals() {
                return Err(Error::validation(format!(
                    "known goal {g} for agent {agent} out of range ({} goals)",
                    model.n_goals()
                )));
            }
            if !seen.contains(agent.as_str()) {
                return Err(Error::validation(format!(
                    "known goal given for unobserved agent {agent}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GoalChoice {
    Fixed(usize),
    /// Drawn per sample from the posterior.
    Sampled,
}

/// Conditioned GP pair for one goal.
#[derive(Debug, Clone)]
pub struct VelocityGps {
    pub x: TrainedGp,
    pub y: TrainedGp,
}

impl VelocityGps {
    pub fn predict(&self, grid: &OccupancyGrid) -> (Gaussian1, Gaussian1) {
        (self.x.predict(grid), self.y.predict(grid))
    }
}

#[derive(Debug, Clone)]
pub struct AgentPlan {
    pub agent_id: String,
    pub position: Position2,
    pub grid: OccupancyGrid,
    pub posterior: GoalPosterior,
    pub choice: GoalChoice,
    /// Indexed by goal; `None` for goals this agent never uses.
    pub gps: Vec<Option<VelocityGps>>,
    /// Fewer than two observations: held at zero velocity.
    pub degenerate: bool,
}

impl AgentPlan {
    fn distributions(&self, goal: usize, grid: &OccupancyGrid) -> (Gaussian1, Gaussian1) {
        match &self.gps[goal] {
            Some(gps) if !self.degenerate => gps.predict(grid),
            _ => {
                let still = Gaussian1 { mean: 0.0, variance: 0.0 };
                (still, still)
            }
        }
    }
}

fn condition_pair(history: &AgentHistory, model: &GoalModel, goal: usize) -> Result<VelocityGps> {
    let (grids, vx, vy) = history.scored_pairs(model.timestep);
    let wrap = |axis: Axis, e: Error| match e {
        Error::Numerical(m) => Error::Numerical(format!(
            "conditioning agent {} on goal {goal}, axis {}: {m}",
            history.agent_id,
            axis.name()
        )),
        other => other,
    };
    Ok(VelocityGps {
        x: condition(model.hyperparams(goal, Axis::X), &grids, &vx).map_err(|e| wrap(Axis::X, e))?,
        y: condition(model.hyperparams(goal, Axis::Y), &grids, &vy).map_err(|e| wrap(Axis::Y, e))?,
    })
}

/// Chooses each agent's goal handling and conditions its GPs on its own history.
pub fn condition_agents(request: &PredictionRequest, model: &GoalModel) -> Result<Vec<AgentPlan>> {
    request.validate(model)?;
    request
        .observations
        .par_iter()
        .map(|h| {
            let degenerate = h.positions.len() < 2;
            let known = request.known_goals.get(&h.agent_id).copied();
            let posterior = match known {
                Some(g) => GoalPosterior::certain(model.n_goals(), g),
                None => infer_goal_posterior(h, model, None)?,
            };
            let choice = match (known, request.mode) {
                (Some(g), _) => GoalChoice::Fixed(g),
                (None, GoalMode::Map) => GoalChoice::Fixed(posterior.argmax()),
                (None, GoalMode::Mixture) if model.n_goals() == 1 => GoalChoice::Fixed(0),
                (None, GoalMode::Mixture) => GoalChoice::Sampled,
            };
            let mut gps: Vec<Option<VelocityGps>> = vec![None; model.n_goals()];
            if !degenerate {
                for (g, slot) in gps.iter_mut().enumerate() {
                    let needed = match choice {
                        GoalChoice::Fixed(f) => f == g,
                        GoalChoice::Sampled => posterior.probabilities()[g] > 0.0,
                    };
                    if needed {
                        *slot = Some(condition_pair(h, model, g)?);
                    }
                }
            }
            Ok(AgentPlan {
                agent_id: h.agent_id.clone(),
                position: h.current_position(),
                grid: h.current_grid().clone(),
                posterior,
                choice,
                gps,
                degenerate,
            })
        })
        .collect()
}

/// `S` sampled joint futures of all agents over the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFan {
    pub agent_ids: Vec<String>,
    /// Last observed step; predictions cover `start_step + 1 ..= start_step + H`.
    pub start_step: Step,
    pub dt: f64,
    /// `[step][sample][agent]`
    pub positions: Vec<Vec<Vec<Position2>>>,
    /// Mean grids after each step, `[step][agent]`.
    pub mean_grids: Vec<Vec<OccupancyGrid>>,
    /// Goal each agent followed in each sample, `[sample][agent]`.
    pub goals: Vec<Vec<usize>>,
    pub degenerate: Vec<bool>,
}

impl TrajectoryFan {
    pub fn horizon(&self) -> usize {
        self.positions.len()
    }

    pub fn samples(&self) -> usize {
        self.goals.len()
    }

    pub fn n_agents(&self) -> usize {
        self.agent_ids.len()
    }

    pub fn agent_index(&self, agent_id: &str) -> Option<usize> {
        self.agent_ids.iter().position(|a| a == agent_id)
    }

    /// `step,sample,agent_id,x,y` with absolute steps.
    pub fn to_fan_csv(&self) -> String {
        let mut out = String::from("step,sample,agent_id,x,y\n");
        for (k, samples) in self.positions.iter().enumerate() {
            let step = self.start_step + k as Step + 1;
            for (s, crowd) in samples.iter().enumerate() {
                for (id, p) in self.agent_ids.iter().zip(crowd) {
                    let _ = writeln!(out, "{step},{s},{id},{},{}", p.x, p.y);
                }
            }
        }
        out
    }

    /// `step,agent_id,mean_x,mean_y,var_x,var_y`; variances divide by `S`.
    pub fn to_summary_csv(&self) -> String {
        let mut out = String::from("step,agent_id,mean_x,mean_y,var_x,var_y\n");
        for (k, samples) in self.positions.iter().enumerate() {
            let step = self.start_step + k as Step + 1;
            for (i, id) in self.agent_ids.iter().enumerate() {
                let (m, v) = sample_moments(samples.iter().map(|crowd| crowd[i]));
                let _ = writeln!(out, "{step},{id},{},{},{},{}", m.x, m.y, v.x, v.y);
            }
        }
        out
    }
}

fn sample_moments(points: impl Iterator<Item = Position2> + Clone) -> (Position2, Position2) {
    let n = points.clone().count() as f64;
    let mut mean = Position2::ZERO;
    for p in points.clone() {
        mean += p;
    }
    mean = mean * (1.0 / n);
    let mut var = Position2::ZERO;
    for p in points {
        let d = p - mean;
        var += Position2::new(d.x * d.x, d.y * d.y);
    }
    (mean, var * (1.0 / n))
}

fn draw_goal(posterior: &GoalPosterior, u: f64) -> usize {
    let mut acc = 0.0;
    let probs = posterior.probabilities();
    for (g, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return g;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

fn sample_goals(plans: &[AgentPlan], samples: usize, seed: u64) -> Vec<Vec<usize>> {
    let per_agent: Vec<Vec<usize>> = plans
        .iter()
        .map(|plan| match plan.choice {
            GoalChoice::Fixed(g) => vec![g; samples],
            GoalChoice::Sampled => {
                let mut rng = substream(seed, &[GOAL_STREAM, label(&plan.agent_id)]);
                (0..samples)
                    .map(|_| draw_goal(&plan.posterior, rng.random::<f64>()))
                    .collect()
            }
        })
        .collect();
    (0..samples)
        .map(|s| per_agent.iter().map(|g| g[s]).collect())
        .collect()
}

/// Runs the sampled rollout from already conditioned agents.
pub fn rollout(plans: &[AgentPlan], horizon: usize, samples: usize, seed: u64, model: &GoalModel) -> TrajectoryFan {
    let n = plans.len();
    let dt = model.timestep;
    let goals = sample_goals(plans, samples, seed);
    let mut crowd: Vec<Vec<Position2>> = vec![plans.iter().map(|p| p.position).collect(); samples];
    let mut grids: Vec<OccupancyGrid> = plans.iter().map(|p| p.grid.clone()).collect();
    let mut positions = Vec::with_capacity(horizon);
    let mut mean_grids = Vec::with_capacity(horizon);

    for step in 0..horizon as u64 {
        // velocities[i][s]
        let velocities: Vec<Vec<Velocity2>> = plans
            .par_iter()
            .enumerate()
            .map(|(i, plan)| {
                let mut dists: BTreeMap<usize, (Gaussian1, Gaussian1)> = BTreeMap::new();
                let agent = label(&plan.agent_id);
                let mut rx = substream(seed, &[VELOCITY_STREAM, agent, Axis::X.index(), step]);
                let mut ry = substream(seed, &[VELOCITY_STREAM, agent, Axis::Y.index(), step]);
                (0..samples)
                    .map(|s| {
                        let g = goals[s][i];
                        let (dx, dy) = *dists
                            .entry(g)
                            .or_insert_with(|| plan.distributions(g, &grids[i]));
                        let zx: f64 = rx.sample(StandardNormal);
                        let zy: f64 = ry.sample(StandardNormal);
                        Velocity2::new(dx.mean + dx.std_dev() * zx, dy.mean + dy.std_dev() * zy)
                    })
                    .collect()
            })
            .collect();

        for (s, sample) in crowd.iter_mut().enumerate() {
            for (i, p) in sample.iter_mut().enumerate() {
                *p += velocities[i][s] * dt;
            }
        }

        let sample_grids: Vec<Vec<OccupancyGrid>> = crowd
            .par_iter()
            .map(|sample| {
                (0..n)
                    .map(|i| {
                        let others = sample
                            .iter()
                            .enumerate()
                            .filter(|(j, _)| *j != i)
                            .map(|(_, p)| p);
                        occupancy_grid(sample[i], others, &model.grid)
                    })
                    .collect()
            })
            .collect();
        grids = (0..n)
            .map(|i| {
                OccupancyGrid::mean(sample_grids.iter().map(|g| &g[i])).expect("at least one sample")
            })
            .collect();

        positions.push(crowd.clone());
        mean_grids.push(grids.clone());
    }

    TrajectoryFan {
        agent_ids: plans.iter().map(|p| p.agent_id.clone()).collect(),
        start_step: 0,
        dt,
        positions,
        mean_grids,
        goals,
        degenerate: plans.iter().map(|p| p.degenerate).collect(),
    }
}

pub fn multi_step(request: &PredictionRequest, model: &GoalModel) -> Result<TrajectoryFan> {
    let plans = condition_agents(request, model)?;
    for p in plans.iter().filter(|p| p.degenerate) {
        log::warn!("agent {} has a single observation; holding it in place", p.agent_id);
    }
    let mut fan = rollout(&plans, request.horizon, request.samples, request.seed, model);
    fan.start_step = request.observations[0].last_step();
    Ok(fan)
}

/// Per-agent point trajectory: the per-axis sample mean at every step,
/// `[agent][step]`.
pub fn map_trajectory(fan: &TrajectoryFan) -> Vec<Vec<Position2>> {
    (0..fan.n_agents())
        .map(|i| {
            fan.positions
                .iter()
                .map(|samples| sample_moments(samples.iter().map(|c| c[i])).0)
                .collect()
        })
        .collect()
}
