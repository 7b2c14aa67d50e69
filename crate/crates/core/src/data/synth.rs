//! Synthetic crowds: agents walk toward goals at a preferred speed while
//! pushing away from each other with an exponentially decaying repulsion.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{GoalSet, Scene, Step, Trajectory};
use crate::error::{Error, Result};
use crate::geom::{Position2, Velocity2};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthAgent {
    pub start: Position2,
    pub goal: usize,
    pub start_step: Step,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AgentPlacement {
    /// `count` agents, each assigned a uniformly drawn goal and starting near
    /// another goal chosen by `SynthConfig::origin`.
    Random { count: usize },
    Explicit(Vec<SynthAgent>),
}

/// Where random agents start relative to their goals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Origin {
    /// Near the goal farthest from the agent's own, giving crossing flows.
    #[default]
    Opposite,
    /// Near a uniformly drawn goal other than the agent's own.
    AnyOther,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub goals: GoalSet,
    pub placement: AgentPlacement,
    pub origin: Origin,
    /// Number of simulated steps.
    pub steps: usize,
    pub dt: f64,
    /// Preferred walking speed, units per second.
    pub speed: f64,
    /// Repulsion magnitude at zero distance, units per second.
    pub repulsion: f64,
    /// Distance over which the repulsion decays by a factor e.
    pub repulsion_range: f64,
    /// Per-axis standard deviation of the velocity perturbation, units per second.
    pub velocity_noise: f64,
    /// Per-axis standard deviation of noise added to recorded positions.
    pub position_noise: f64,
    /// An agent leaves the scene once within this distance of its goal;
    /// defaults to one step at preferred speed.
    pub arrival_radius: Option<f64>,
    /// Half-width of the square around the origin goal where random agents start.
    pub start_spread: f64,
    /// Random agents enter at a step drawn uniformly from `0..=spawn_window`.
    pub spawn_window: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            goals: GoalSet::new(vec![
                Position2::new(0.0, -200.0),
                Position2::new(0.0, 200.0),
                Position2::new(-200.0, 0.0),
                Position2::new(200.0, 0.0),
            ])
            .expect("distinct default goals"),
            placement: AgentPlacement::Random { count: 20 },
            origin: Origin::Opposite,
            steps: 25,
            dt: super::DEFAULT_TIMESTEP,
            speed: 30.0,
            repulsion: 40.0,
            repulsion_range: 15.0,
            velocity_noise: 2.0,
            position_noise: 0.0,
            arrival_radius: None,
            start_spread: 60.0,
            spawn_window: 12,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let agents = match &self.placement {
            AgentPlacement::Random { count } => *count,
            AgentPlacement::Explicit(a) => a.len(),
        };
        if agents == 0 {
            return Err(Error::validation("synthetic scene needs at least one agent"));
        }
        if self.steps == 0 {
            return Err(Error::validation("synthetic scene needs at least one step"));
        }
        if let AgentPlacement::Explicit(a) = &self.placement {
            if let Some(bad) = a.iter().find(|a| a.goal >= self.goals.len()) {
                return Err(Error::validation(format!(
                    "agent goal index {} out of range for {} goals",
                    bad.goal,
                    self.goals.len()
                )));
            }
        }
        let positive = [("dt", self.dt), ("speed", self.speed), ("repulsion_range", self.repulsion_range)];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::validation(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("repulsion", self.repulsion),
            ("velocity_noise", self.velocity_noise),
            ("position_noise", self.position_noise),
            ("start_spread", self.start_spread),
            ("arrival_radius", self.arrival_radius.unwrap_or(0.0)),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::validation(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. Goals are written as
    /// `goals = x1 y1; x2 y2; ...`.
    pub fn apply_kv(mut self, text: &str) -> Result<Self> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let line_no = i + 1;
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("expected `key = value`, found `{line}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| -> Result<f64> {
                v.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("invalid number `{v}` for `{key}`"),
                })
            };
            let int = |v: &str| -> Result<usize> {
                v.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("invalid count `{v}` for `{key}`"),
                })
            };
            match key {
                "agents" => self.placement = AgentPlacement::Random { count: int(value)? },
                "steps" => self.steps = int(value)?,
                "dt" => self.dt = num(value)?,
                "speed" => self.speed = num(value)?,
                "repulsion" => self.repulsion = num(value)?,
                "repulsion_range" => self.repulsion_range = num(value)?,
                "velocity_noise" => self.velocity_noise = num(value)?,
                "position_noise" => self.position_noise = num(value)?,
                "arrival_radius" => self.arrival_radius = Some(num(value)?),
                "start_spread" => self.start_spread = num(value)?,
                "spawn_window" => self.spawn_window = int(value)?,
                "origin" => {
                    self.origin = match value {
                        "opposite" => Origin::Opposite,
                        "any_other" => Origin::AnyOther,
                        v => {
                            return Err(Error::Parse {
                                line: line_no,
                                message: format!("origin must be `opposite` or `any_other`, got `{v}`"),
                            })
                        }
                    }
                }
                "goals" => {
                    let mut goals = Vec::new();
                    for pair in value.split(';').map(str::trim).filter(|p| !p.is_empty()) {
                        let xy: Vec<&str> = pair.split_whitespace().collect();
                        if xy.len() != 2 {
                            return Err(Error::Parse {
                                line: line_no,
                                message: format!("goal `{pair}` must be `x y`"),
                            });
                        }
                        goals.push(Position2::new(num(xy[0])?, num(xy[1])?));
                    }
                    self.goals = GoalSet::new(goals)?;
                }
                other => {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("unknown synth key `{other}`"),
                    })
                }
            }
        }
        Ok(self)
    }
}

fn place_agents(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<SynthAgent> {
    let count = match &cfg.placement {
        AgentPlacement::Explicit(agents) => return agents.clone(),
        AgentPlacement::Random { count } => *count,
    };
    let goals = cfg.goals.goals();
    (0..count)
        .map(|_| {
            let goal = rng.random_range(0..goals.len());
            let origin = if goals.len() > 1 {
                let mut o = rng.random_range(0..goals.len() - 1);
                if o >= goal {
                    o += 1;
                }
                if cfg.origin == Origin::Opposite {
                    o = farthest_goal(goals, goal);
                }
                goals[o]
            } else {
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                goals[0] + Position2::new(angle.cos(), angle.sin()) * (4.0 * cfg.start_spread.max(1.0))
            };
            let jitter = Position2::new(
                rng.random_range(-1.0..=1.0) * cfg.start_spread,
                rng.random_range(-1.0..=1.0) * cfg.start_spread,
            );
            let start_step = rng.random_range(0..=cfg.spawn_window) as Step;
            SynthAgent {
                start: origin + jitter,
                goal,
                start_step,
            }
        })
        .collect()
}

/// Lowest-index goal at maximal distance from `goals[from]`.
fn farthest_goal(goals: &[Position2], from: usize) -> usize {
    let mut best = from;
    let mut best_d = -1.0;
    for (i, g) in goals.iter().enumerate() {
        let d = g.distance(goals[from]);
        if d > best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

fn agent_label(k: usize, count: usize) -> String {
    let width = count.saturating_sub(1).to_string().len().max(3);
    format!("p{k:0width$}")
}

/// Simulates a crowd. Identical config and seed give a bitwise identical scene.
pub fn synth_scene(cfg: &SynthConfig, seed: u64) -> Result<Scene> {
    synth_scene_with_goals(cfg, seed).map(|(scene, _)| scene)
}

/// Like [`synth_scene`], also returning the goal index each recorded agent
/// was walking to.
pub fn synth_scene_with_goals(cfg: &SynthConfig, seed: u64) -> Result<(Scene, BTreeMap<String, usize>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let agents = place_agents(cfg, &mut rng);
    let goals = cfg.goals.goals();
    let arrival = cfg.arrival_radius.unwrap_or(cfg.speed * cfg.dt);
    let max_speed = 2.0 * cfg.speed;

    #[derive(Clone, Copy, PartialEq)]
    enum State {
        Waiting,
        Walking,
        Done,
    }
    let n = agents.len();
    let mut state = vec![State::Waiting; n];
    let mut pos: Vec<Position2> = agents.iter().map(|a| a.start).collect();
    let mut recorded: Vec<Vec<Position2>> = vec![Vec::new(); n];
    let mut first_step: Vec<Step> = vec![0; n];

    for step in 0..cfg.steps as Step {
        for i in 0..n {
            if state[i] == State::Waiting && agents[i].start_step <= step {
                state[i] = State::Walking;
                first_step[i] = step;
            }
        }
        for i in 0..n {
            if state[i] != State::Walking {
                continue;
            }
            let mut observed = pos[i];
            if cfg.position_noise > 0.0 {
                let nx: f64 = rng.sample(StandardNormal);
                let ny: f64 = rng.sample(StandardNormal);
                observed += Position2::new(nx, ny) * cfg.position_noise;
            }
            recorded[i].push(observed);
            if pos[i].distance(goals[agents[i].goal]) <= arrival {
                state[i] = State::Done;
            }
        }

        let walking: Vec<usize> = (0..n).filter(|&i| state[i] == State::Walking).collect();
        let mut velocity = vec![Velocity2::ZERO; n];
        for &i in &walking {
            let to_goal = goals[agents[i].goal] - pos[i];
            let dist = to_goal.norm();
            let mut v = if dist > 0.0 {
                to_goal * (cfg.speed / dist)
            } else {
                Velocity2::ZERO
            };
            if cfg.repulsion > 0.0 {
                for &j in &walking {
                    if j == i {
                        continue;
                    }
                    let away = pos[i] - pos[j];
                    let d = away.norm();
                    if d > 0.0 {
                        v += away * (cfg.repulsion * (-d / cfg.repulsion_range).exp() / d);
                    }
                }
            }
            let s = v.norm();
            if s > max_speed {
                v = v * (max_speed / s);
            }
            if cfg.velocity_noise > 0.0 {
                let nx: f64 = rng.sample(StandardNormal);
                let ny: f64 = rng.sample(StandardNormal);
                v += Velocity2::new(nx, ny) * cfg.velocity_noise;
            }
            velocity[i] = v;
        }
        for &i in &walking {
            pos[i] += velocity[i] * cfg.dt;
        }
    }

    let mut assigned = BTreeMap::new();
    let mut trajectories = Vec::new();
    for (i, r) in recorded.into_iter().enumerate().filter(|(_, r)| !r.is_empty()) {
        let id = agent_label(i, n);
        assigned.insert(id.clone(), agents[i].goal);
        trajectories.push(Trajectory::new(id, first_step[i], r));
    }
    let mut scene = Scene::new(trajectories, cfg.dt)?;
    scene.unit_name = "units".to_string();
    Ok((scene, assigned))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight_line_cfg() -> SynthConfig {
        SynthConfig {
            goals: GoalSet::new(vec![Position2::new(10.0, 0.0)]).unwrap(),
            placement: AgentPlacement::Explicit(vec![SynthAgent {
                start: Position2::ZERO,
                goal: 0,
                start_step: 0,
            }]),
            steps: 5,
            dt: 1.0,
            speed: 1.0,
            repulsion: 0.0,
            velocity_noise: 0.0,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn lone_agent_walks_straight() {
        let s = synth_scene(&straight_line_cfg(), 7).unwrap();
        assert_eq!(s.len(), 1);
        let xs: Vec<Position2> = (0..5).map(|k| Position2::new(k as f64, 0.0)).collect();
        assert_eq!(s.trajectories()[0].positions, xs);
    }

    #[test]
    fn agent_stops_at_goal() {
        let cfg = SynthConfig {
            steps: 30,
            ..straight_line_cfg()
        };
        let s = synth_scene(&cfg, 7).unwrap();
        let t = &s.trajectories()[0];
        assert!(t.len() < 30);
        assert!(t.final_position().unwrap().distance(Position2::new(10.0, 0.0)) <= 1.0 + 1e-12);
    }

    #[test]
    fn same_seed_same_scene() {
        let cfg = SynthConfig {
            placement: AgentPlacement::Random { count: 12 },
            position_noise: 0.5,
            spawn_window: 5,
            ..SynthConfig::default()
        };
        assert_eq!(synth_scene(&cfg, 3).unwrap(), synth_scene(&cfg, 3).unwrap());
        assert_ne!(synth_scene(&cfg, 3).unwrap(), synth_scene(&cfg, 4).unwrap());
    }

    fn min_pair_distance(s: &Scene) -> f64 {
        let (a, b) = (&s.trajectories()[0], &s.trajectories()[1]);
        (a.start_step.max(b.start_step)..=a.end_step().min(b.end_step()))
            .map(|k| a.position_at(k).unwrap().distance(b.position_at(k).unwrap()))
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn repulsion_keeps_head_on_agents_apart() {
        let head_on = |repulsion: f64| SynthConfig {
            goals: GoalSet::new(vec![Position2::new(-100.0, 0.0), Position2::new(100.0, 0.0)]).unwrap(),
            placement: AgentPlacement::Explicit(vec![
                SynthAgent { start: Position2::new(-100.0, 0.0), goal: 1, start_step: 0 },
                SynthAgent { start: Position2::new(100.0, 0.5), goal: 0, start_step: 0 },
            ]),
            steps: 40,
            dt: 0.4,
            repulsion,
            velocity_noise: 0.0,
            ..SynthConfig::default()
        };
        let lateral = |scene: &Scene| {
            let (a, b) = (&scene.trajectories()[0], &scene.trajectories()[1]);
            (0..=a.end_step().min(b.end_step()))
                .map(|k| (a.position_at(k).unwrap().y - b.position_at(k).unwrap().y).abs())
                .fold(0.0, f64::max)
        };
        let with = synth_scene(&head_on(40.0), 1).unwrap();
        let without = synth_scene(&head_on(0.0), 1).unwrap();
        assert!(lateral(&with) > 10.0, "{}", lateral(&with));
        assert!(lateral(&without) <= 0.5 + 1e-12, "{}", lateral(&without));
        assert!(min_pair_distance(&with) > 1.0);
    }

    #[test]
    fn repulsion_increases_head_on_clearance() {
        // without repulsion the two meet exactly at the origin after 8 steps
        let head_on = |repulsion: f64| SynthConfig {
            goals: GoalSet::new(vec![Position2::new(-200.0, 0.0), Position2::new(200.0, 0.0)]).unwrap(),
            placement: AgentPlacement::Explicit(vec![
                SynthAgent { start: Position2::new(-96.0, 0.0), goal: 1, start_step: 0 },
                SynthAgent { start: Position2::new(96.0, 0.0), goal: 0, start_step: 0 },
            ]),
            steps: 20,
            repulsion,
            velocity_noise: 0.0,
            ..SynthConfig::default()
        };
        let with = min_pair_distance(&synth_scene(&head_on(40.0), 1).unwrap());
        let without = min_pair_distance(&synth_scene(&head_on(0.0), 1).unwrap());
        assert!(without < 1e-9, "{without}");
        assert!(with > without, "{with} vs {without}");
    }

    #[test]
    fn degenerate_configs_rejected() {
        let cfg = SynthConfig {
            placement: AgentPlacement::Random { count: 0 },
            ..SynthConfig::default()
        };
        assert!(synth_scene(&cfg, 0).is_err());
        let cfg = SynthConfig {
            steps: 0,
            ..SynthConfig::default()
        };
        assert!(synth_scene(&cfg, 0).is_err());
    }

    #[test]
    fn kv_overrides() {
        let cfg = SynthConfig::default()
            .apply_kv("# comment\nagents = 5\nsteps=12\nspeed = 2.5\ngoals = 0 0; 10 0\n")
            .unwrap();
        assert_eq!(cfg.placement, AgentPlacement::Random { count: 5 });
        assert_eq!(cfg.steps, 12);
        assert_eq!(cfg.speed, 2.5);
        assert_eq!(cfg.goals.len(), 2);
        assert!(SynthConfig::default().apply_kv("bogus = 1").is_err());
        assert!(matches!(
            SynthConfig::default().apply_kv("\nspeed = fast"),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
