//! Trajectory data: scenes, goal sets, finite-difference velocities and the
//! per-goal training bags fed to the velocity GPs.

mod scene;
mod synth;

pub use scene::{load_goals, load_scene, parse_goals, parse_scene, write_goals, write_scene};
pub use synth::{synth_scene, synth_scene_with_goals, AgentPlacement, Origin, SynthAgent, SynthConfig};

use std::collections::BTreeMap;

use log::warn;

use crate::error::{Error, Result};
use crate::geom::{Position2, Velocity2};
use crate::grid::{occupancy_grid, GridConfig, OccupancyGrid};

pub type Step = i64;

pub const DEFAULT_TIMESTEP: f64 = 0.4;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub agent_id: String,
    pub start_step: Step,
    pub positions: Vec<Position2>,
}

impl Trajectory {
    pub fn new(agent_id: impl Into<String>, start_step: Step, positions: Vec<Position2>) -> Self {
        Trajectory {
            agent_id: agent_id.into(),
            start_step,
            positions,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Step of the last recorded position.
    pub fn end_step(&self) -> Step {
        self.start_step + self.positions.len() as Step - 1
    }

    pub fn contains_step(&self, step: Step) -> bool {
        step >= self.start_step && step <= self.end_step()
    }

    pub fn position_at(&self, step: Step) -> Option<Position2> {
        if self.contains_step(step) {
            Some(self.positions[(step - self.start_step) as usize])
        } else {
            None
        }
    }

    pub fn final_position(&self) -> Option<Position2> {
        self.positions.last().copied()
    }
}

/// Agent trajectories sharing one clock. Trajectories are kept sorted by
/// agent identifier so every derived quantity is independent of input order.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    trajectories: Vec<Trajectory>,
    timestep_duration: f64,
    pub unit_name: String,
}

impl Scene {
    pub fn new(mut trajectories: Vec<Trajectory>, timestep_duration: f64) -> Result<Self> {
        if !(timestep_duration.is_finite() && timestep_duration > 0.0) {
            return Err(Error::validation(format!(
                "timestep duration must be positive, got {timestep_duration}"
            )));
        }
        trajectories.sort_by(|a, b| a.agent_id.cmp(&b.agent_id));
        for pair in trajectories.windows(2) {
            if pair[0].agent_id == pair[1].agent_id {
                return Err(Error::validation(format!(
                    "duplicate agent id {}",
                    pair[0].agent_id
                )));
            }
        }
        for t in &trajectories {
            if t.positions.is_empty() {
                return Err(Error::validation(format!(
                    "agent {} has an empty trajectory",
                    t.agent_id
                )));
            }
            if let Some(p) = t.positions.iter().find(|p| !p.is_finite()) {
                return Err(Error::validation(format!(
                    "agent {} has a non-finite position ({}, {})",
                    t.agent_id, p.x, p.y
                )));
            }
        }
        Ok(Scene {
            trajectories,
            timestep_duration,
            unit_name: "pixels".to_string(),
        })
    }

    pub fn empty(timestep_duration: f64) -> Result<Self> {
        Scene::new(Vec::new(), timestep_duration)
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn timestep_duration(&self) -> f64 {
        self.timestep_duration
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn trajectory(&self, agent_id: &str) -> Option<&Trajectory> {
        self.trajectories
            .binary_search_by(|t| t.agent_id.as_str().cmp(agent_id))
            .ok()
            .map(|i| &self.trajectories[i])
    }

    /// Inclusive range of steps covered by any trajectory.
    pub fn step_range(&self) -> Option<(Step, Step)> {
        let first = self.trajectories.iter().map(|t| t.start_step).min()?;
        let last = self.trajectories.iter().map(|t| t.end_step()).max()?;
        Some((first, last))
    }

    /// Indices (into `trajectories()`) and positions of the agents present at `step`.
    pub fn agents_at(&self, step: Step) -> Vec<(usize, Position2)> {
        self.trajectories
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.position_at(step).map(|p| (i, p)))
            .collect()
    }

    /// Occupancy grid of agent `index` at `step` from every other agent
    /// present at that step.
    pub fn grid_for(&self, index: usize, step: Step, cfg: &GridConfig) -> Option<OccupancyGrid> {
        let own = self.trajectories[index].position_at(step)?;
        let others: Vec<Position2> = self
            .agents_at(step)
            .into_iter()
            .filter(|(j, _)| *j != index)
            .map(|(_, p)| p)
            .collect();
        Some(occupancy_grid(own, &others, cfg))
    }

    /// Positions of all present agents per step.
    fn frames(&self) -> BTreeMap<Step, Vec<(usize, Position2)>> {
        let mut frames: BTreeMap<Step, Vec<(usize, Position2)>> = BTreeMap::new();
        for (i, t) in self.trajectories.iter().enumerate() {
            for (k, p) in t.positions.iter().enumerate() {
                frames.entry(t.start_step + k as Step).or_default().push((i, *p));
            }
        }
        frames
    }

    /// Grids of agent `index` at each step of `steps`, reusing a frame map.
    fn grids_along(
        &self,
        frames: &BTreeMap<Step, Vec<(usize, Position2)>>,
        index: usize,
        steps: std::ops::RangeInclusive<Step>,
        cfg: &GridConfig,
    ) -> Vec<OccupancyGrid> {
        let traj = &self.trajectories[index];
        steps
            .map(|s| {
                let own = traj.position_at(s).expect("step inside trajectory");
                let others: Vec<Position2> = frames
                    .get(&s)
                    .map(|f| f.iter().filter(|(j, _)| *j != index).map(|(_, p)| *p).collect())
                    .unwrap_or_default();
                occupancy_grid(own, &others, cfg)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoalSet(Vec<Position2>);

impl GoalSet {
    pub fn new(goals: Vec<Position2>) -> Result<Self> {
        if goals.is_empty() {
            return Err(Error::validation("goal set must contain at least one goal"));
        }
        for (i, g) in goals.iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::validation(format!("goal {i} is not finite")));
            }
            if let Some(j) = goals[..i].iter().position(|h| h == g) {
                return Err(Error::validation(format!(
                    "goals {j} and {i} coincide at ({}, {})",
                    g.x, g.y
                )));
            }
        }
        Ok(GoalSet(goals))
    }

    pub fn goals(&self) -> &[Position2] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VelocitySeries {
    pub agent_id: String,
    pub velocities: Vec<Velocity2>,
    /// Step each velocity is attached to (the earlier of its two positions).
    pub aligned_steps: Vec<Step>,
}

/// Forward differences `(f[t+1] - f[t]) / dt`.
pub fn compute_velocities(traj: &Trajectory, dt: f64) -> Result<VelocitySeries> {
    if traj.len() < 2 {
        return Err(Error::validation(format!(
            "trajectory too short for velocity (agent {}, {} point(s))",
            traj.agent_id,
            traj.len()
        )));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::validation(format!("timestep must be positive, got {dt}")));
    }
    let velocities = finite_differences(&traj.positions, dt);
    let aligned_steps = (0..velocities.len())
        .map(|k| traj.start_step + k as Step)
        .collect();
    Ok(VelocitySeries {
        agent_id: traj.agent_id.clone(),
        velocities,
        aligned_steps,
    })
}

pub(crate) fn finite_differences(positions: &[Position2], dt: f64) -> Vec<Velocity2> {
    positions
        .windows(2)
        .map(|w| (w[1] - w[0]) * (1.0 / dt))
        .collect()
}

/// Index of the goal nearest to the final position; ties go to the lowest index.
pub fn label_goal(traj: &Trajectory, goals: &GoalSet) -> usize {
    let end = traj.final_position().expect("non-empty trajectory");
    nearest_goal(end, goals)
}

pub(crate) fn nearest_goal(p: Position2, goals: &GoalSet) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, g) in goals.goals().iter().enumerate() {
        let d = (p - *g).norm_squared();
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Training pairs for one goal. The x- and y-bags share their grids, so the
/// two bags always have the same size.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GoalBag {
    pub grids: Vec<OccupancyGrid>,
    pub vx: Vec<f64>,
    pub vy: Vec<f64>,
}

impl GoalBag {
    pub fn len(&self) -> usize {
        self.grids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grids.is_empty()
    }

    pub fn x_pairs(&self) -> impl Iterator<Item = (&OccupancyGrid, f64)> {
        self.grids.iter().zip(self.vx.iter().copied())
    }

    pub fn y_pairs(&self) -> impl Iterator<Item = (&OccupancyGrid, f64)> {
        self.grids.iter().zip(self.vy.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub grid: GridConfig,
    pub bags: Vec<GoalBag>,
}

impl TrainingSet {
    pub fn total_pairs(&self) -> usize {
        self.bags.iter().map(GoalBag::len).sum()
    }
}

/// Pairs each agent's grid at step `t` with its forward velocity at `t` and
/// files the pair under the agent's labelled goal.
pub fn build_training_set(scene: &Scene, goals: &GoalSet, grid: &GridConfig) -> TrainingSet {
    let dt = scene.timestep_duration();
    let frames = scene.frames();
    let mut bags = vec![GoalBag::default(); goals.len()];
    for (i, traj) in scene.trajectories().iter().enumerate() {
        if traj.len() < 2 {
            warn!(
                "skipping agent {}: a single position carries no velocity",
                traj.agent_id
            );
            continue;
        }
        let bag = &mut bags[label_goal(traj, goals)];
        let velocities = finite_differences(&traj.positions, dt);
        let grids = scene.grids_along(&frames, i, traj.start_step..=traj.end_step() - 1, grid);
        for (g, v) in grids.into_iter().zip(velocities) {
            bag.grids.push(g);
            bag.vx.push(v.x);
            bag.vy.push(v.y);
        }
    }
    TrainingSet { grid: *grid, bags }
}

/// An agent's observed positions up to the observation time, with the grid
/// at each observed step.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentHistory {
    pub agent_id: String,
    pub start_step: Step,
    pub positions: Vec<Position2>,
    pub grids: Vec<OccupancyGrid>,
}

impl AgentHistory {
    pub fn last_step(&self) -> Step {
        self.start_step + self.positions.len() as Step - 1
    }

    pub fn current_position(&self) -> Position2 {
        *self.positions.last().expect("non-empty history")
    }

    pub fn current_grid(&self) -> &OccupancyGrid {
        self.grids.last().expect("non-empty history")
    }

    pub fn velocities(&self, dt: f64) -> Vec<Velocity2> {
        finite_differences(&self.positions, dt)
    }

    /// Grids that have an observed forward velocity, paired with it.
    pub fn scored_pairs(&self, dt: f64) -> (Vec<OccupancyGrid>, Vec<f64>, Vec<f64>) {
        let v = self.velocities(dt);
        let grids = self.grids[..v.len()].to_vec();
        (
            grids,
            v.iter().map(|v| v.x).collect(),
            v.iter().map(|v| v.y).collect(),
        )
    }
}

/// Histories of every agent present at `upto_step`, using at most `window`
/// observed positions (all available when `None`).
pub fn observe(
    scene: &Scene,
    upto_step: Step,
    window: Option<usize>,
    grid: &GridConfig,
) -> Vec<AgentHistory> {
    let frames = scene.frames();
    scene
        .trajectories()
        .iter()
        .enumerate()
        .filter(|(_, t)| t.contains_step(upto_step))
        .map(|(i, t)| {
            let mut first = t.start_step;
            if let Some(w) = window {
                first = first.max(upto_step - w.max(1) as Step + 1);
            }
            let positions = (first..=upto_step)
                .map(|s| t.position_at(s).expect("contiguous trajectory"))
                .collect();
            AgentHistory {
                agent_id: t.agent_id.clone(),
                start_step: first,
                positions,
                grids: scene.grids_along(&frames, i, first..=upto_step, grid),
            }
        })
        .collect()
}
