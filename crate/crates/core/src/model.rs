//! The trained goal model and its versioned text format.
//!
//! ```text
//! format = crowdgp-model
//! version = 1
//! grid.cells = 4
//! grid.span = 8.0000000000000000e1
//! timestep = 4.0000000000000002e-1
//! seed = 42
//! goals = 2
//! goal.0 = 0.0000000000000000e0, 2.0000000000000000e2
//! goal.1 = ...
//!
//! [hyperparams goal=0 axis=x]
//! log_signal = ...
//! log_lengthscales = l1, l2, ..., l16
//! log_noise = ...
//! prior_mean = ...
//! training_points = 173
//! log_marginal = ...
//! ```
//!
//! Reals are written with 17 significant digits so every value survives a
//! write/read cycle bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::data::{build_training_set, GoalSet, Scene};
use crate::error::{Error, Result};
use crate::geom::Position2;
use crate::gp::{fit_detailed, GpFitConfig};
use crate::gp::Hyperparams;
use crate::grid::GridConfig;
use crate::rng::substream_seed;

pub const FORMAT_NAME: &str = "crowdgp-model";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub const BOTH: [Axis; 2] = [Axis::X, Axis::Y];

    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
        }
    }

    pub fn index(self) -> u64 {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
        }
    }
}

/// Hyperparameters of one velocity GP with its training summary.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisRecord {
    pub hyperparams: Hyperparams,
    pub training_points: usize,
    pub log_marginal: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoalRecords {
    pub x: AxisRecord,
    pub y: AxisRecord,
}

impl GoalRecords {
    pub fn axis(&self, axis: Axis) -> &AxisRecord {
        match axis {
            Axis::X => &self.x,
            Axis::Y => &self.y,
        }
    }
}

/// One x/y pair of velocity GP hyperparameters per goal.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalModel {
    pub grid: GridConfig,
    pub goals: GoalSet,
    pub timestep: f64,
    pub seed: u64,
    pub per_goal: Vec<GoalRecords>,
}

impl GoalModel {
    pub fn n_goals(&self) -> usize {
        self.goals.len()
    }

    pub fn hyperparams(&self, goal: usize, axis: Axis) -> &Hyperparams {
        &self.per_goal[goal].axis(axis).hyperparams
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.per_goal.len() != self.goals.len() {
            return Err(Error::validation(format!(
                "{} goals but {} hyperparameter pairs",
                self.goals.len(),
                self.per_goal.len()
            )));
        }
        for (g, rec) in self.per_goal.iter().enumerate() {
            for axis in Axis::BOTH {
                let hp = &rec.axis(axis).hyperparams;
                hp.validate()?;
                if hp.dim() != self.grid.dim() {
                    return Err(Error::validation(format!(
                        "goal {g} axis {}: {} lengthscales for a {}-cell grid",
                        axis.name(),
                        hp.dim(),
                        self.grid.dim()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "format = {FORMAT_NAME}");
        let _ = writeln!(out, "version = {FORMAT_VERSION}");
        let _ = writeln!(out, "grid.cells = {}", self.grid.cells);
        let _ = writeln!(out, "grid.span = {}", real(self.grid.span));
        let _ = writeln!(out, "timestep = {}", real(self.timestep));
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "goals = {}", self.goals.len());
        for (i, g) in self.goals.goals().iter().enumerate() {
            let _ = writeln!(out, "goal.{i} = {}, {}", real(g.x), real(g.y));
        }
        for (g, rec) in self.per_goal.iter().enumerate() {
            for axis in Axis::BOTH {
                let r = rec.axis(axis);
                let hp = &r.hyperparams;
                let _ = writeln!(out, "\n[hyperparams goal={g} axis={}]", axis.name());
                let _ = writeln!(out, "log_signal = {}", real(hp.log_signal));
                let ells: Vec<String> = hp.log_lengthscales.iter().map(|v| real(*v)).collect();
                let _ = writeln!(out, "log_lengthscales = {}", ells.join(", "));
                let _ = writeln!(out, "log_noise = {}", real(hp.log_noise));
                let _ = writeln!(out, "prior_mean = {}", real(hp.prior_mean));
                let _ = writeln!(out, "training_points = {}", r.training_points);
                let _ = writeln!(out, "log_marginal = {}", real(r.log_marginal));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let doc = Document::parse(text)?;
        let header = &doc.header;
        let format = header.text("format")?;
        if format != FORMAT_NAME {
            return Err(Error::schema("format", format!("expected `{FORMAT_NAME}`, found `{format}`")));
        }
        let version: u32 = header.parse("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::schema("version", format!("unsupported version {version}")));
        }
        let grid = GridConfig {
            cells: header.parse("grid.cells")?,
            span: header.real("grid.span")?,
        };
        grid.validate()
            .map_err(|e| Error::schema("grid", e.to_string()))?;
        let timestep = header.real("timestep")?;
        if timestep <= 0.0 {
            return Err(Error::schema("timestep", "must be positive"));
        }
        let seed: u64 = header.parse("seed")?;
        let n_goals: usize = header.parse("goals")?;
        let mut goals = Vec::with_capacity(n_goals);
        for i in 0..n_goals {
            let key = format!("goal.{i}");
            let v = header.reals(&key)?;
            if v.len() != 2 {
                return Err(Error::schema(key, format!("expected 2 coordinates, found {}", v.len())));
            }
            goals.push(Position2::new(v[0], v[1]));
        }
        let goals = GoalSet::new(goals).map_err(|e| Error::schema("goals", e.to_string()))?;

        let mut per_goal = Vec::with_capacity(n_goals);
        for g in 0..n_goals {
            let mut axes = Vec::with_capacity(2);
            for axis in Axis::BOTH {
                let name = format!("hyperparams goal={g} axis={}", axis.name());
                let sec = doc
                    .sections
                    .get(&name)
                    .ok_or_else(|| Error::schema(&name, "missing record"))?;
                let log_lengthscales = sec.reals("log_lengthscales")?;
                if log_lengthscales.len() != grid.dim() {
                    return Err(Error::schema(
                        format!("{name}: log_lengthscales"),
                        format!("expected {} values, found {}", grid.dim(), log_lengthscales.len()),
                    ));
                }
                axes.push(AxisRecord {
                    hyperparams: Hyperparams {
                        log_signal: sec.real("log_signal")?,
                        log_lengthscales,
                        log_noise: sec.real("log_noise")?,
                        prior_mean: sec.real("prior_mean")?,
                    },
                    training_points: sec.parse("training_points")?,
                    log_marginal: sec.real_or_nan("log_marginal")?,
                });
            }
            let y = axes.pop().expect("two axes");
            let x = axes.pop().expect("two axes");
            per_goal.push(GoalRecords { x, y });
        }
        if doc.sections.len() != 2 * n_goals {
            let extra = doc
                .sections
                .keys()
                .find(|k| {
                    !(0..n_goals).any(|g| {
                        Axis::BOTH
                            .iter()
                            .any(|a| **k == format!("hyperparams goal={g} axis={}", a.name()))
                    })
                })
                .cloned()
                .unwrap_or_default();
            return Err(Error::schema(extra, "unexpected record"));
        }
        let model = GoalModel {
            grid,
            goals,
            timestep,
            seed,
            per_goal,
        };
        model.validate().map_err(|e| Error::schema("hyperparams", e.to_string()))?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        GoalModel::from_text(&text)
    }
}

/// 17 significant digits.
fn real(v: f64) -> String {
    format!("{v:.16e}")
}

struct Section {
    name: String,
    fields: BTreeMap<String, String>,
}

impl Section {
    fn field_name(&self, key: &str) -> String {
        if self.name.is_empty() {
            key.to_string()
        } else {
            format!("{}: {key}", self.name)
        }
    }

    fn text(&self, key: &str) -> Result<&str> {
        self.fields
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::schema(self.field_name(key), "missing"))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.text(key)?;
        v.parse()
            .map_err(|_| Error::schema(self.field_name(key), format!("cannot parse `{v}`")))
    }

    fn real(&self, key: &str) -> Result<f64> {
        let v: f64 = self.parse(key)?;
        if !v.is_finite() {
            return Err(Error::schema(self.field_name(key), "must be finite"));
        }
        Ok(v)
    }

    fn real_or_nan(&self, key: &str) -> Result<f64> {
        match self.fields.get(key) {
            None => Ok(f64::NAN),
            Some(_) => self.parse(key),
        }
    }

    fn reals(&self, key: &str) -> Result<Vec<f64>> {
        let v = self.text(key)?;
        v.split(',')
            .map(|s| {
                let s = s.trim();
                match s.parse::<f64>() {
                    Ok(x) if x.is_finite() => Ok(x),
                    _ => Err(Error::schema(self.field_name(key), format!("invalid value `{s}`"))),
                }
            })
            .collect()
    }
}

struct Document {
    header: Section,
    sections: BTreeMap<String, Section>,
}

impl Document {
    fn parse(text: &str) -> Result<Self> {
        let mut header = Section {
            name: String::new(),
            fields: BTreeMap::new(),
        };
        let mut sections: BTreeMap<String, Section> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim().to_string();
                if sections.contains_key(&name) {
                    return Err(Error::schema(name, "duplicate record"));
                }
                sections.insert(
                    name.clone(),
                    Section {
                        name: name.clone(),
                        fields: BTreeMap::new(),
                    },
                );
                current = Some(name);
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected `key = value`, found `{line}`"),
            })?;
            let sec = match &current {
                Some(name) => sections.get_mut(name).expect("section exists"),
                None => &mut header,
            };
            let key = k.trim().to_string();
            if sec.fields.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::schema(sec.field_name(&key), "duplicate field"));
            }
        }
        Ok(Document { header, sections })
    }
}

/// Fits the x and y velocity GPs of every goal. Each fit draws its subsample
/// from its own substream of `fit.seed`, so fits run in parallel without
/// changing the result.
pub fn train_model(scene: &Scene, goals: &GoalSet, grid: &GridConfig, fit: &GpFitConfig) -> Result<GoalModel> {
    grid.validate()?;
    let training = build_training_set(scene, goals, grid);
    for (g, bag) in training.bags.iter().enumerate() {
        if bag.len() < 2 {
            return Err(Error::validation(format!(
                "goal {g} has {} training pairs, at least 2 are needed; merge it with a nearby goal or add data",
                bag.len()
            )));
        }
    }
    let jobs: Vec<(usize, Axis)> = (0..goals.len())
        .flat_map(|g| Axis::BOTH.map(|a| (g, a)))
        .collect();
    let records: Vec<AxisRecord> = jobs
        .par_iter()
        .map(|&(g, axis)| {
            let bag = &training.bags[g];
            let targets = match axis {
                Axis::X => &bag.vx,
                Axis::Y => &bag.vy,
            };
            let cfg = GpFitConfig {
                seed: substream_seed(fit.seed, &[g as u64, axis.index()]),
                ..fit.clone()
            };
            let outcome = fit_detailed(&bag.grids, targets, &cfg)
                .map_err(|e| Error::Numerical(format!("goal {g} axis {}: {e}", axis.name())))?;
            Ok(AxisRecord {
                hyperparams: outcome.hyperparams,
                training_points: outcome.points_used,
                log_marginal: outcome.log_marginal,
            })
        })
        .collect::<Result<_>>()?;
    let per_goal = records
        .chunks(2)
        .map(|c| GoalRecords {
            x: c[0].clone(),
            y: c[1].clone(),
        })
        .collect();
    let model = GoalModel {
        grid: *grid,
        goals: goals.clone(),
        timestep: scene.timestep_duration(),
        seed: fit.seed,
        per_goal,
    };
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_model() -> GoalModel {
        let grid = GridConfig::new(2, 40.0).unwrap();
        let rec = |s: f64, m: f64| AxisRecord {
            hyperparams: Hyperparams::new(s, &[0.3, 1.0 / 3.0, 7.25, 1e-9], 0.1).with_prior_mean(m),
            training_points: 17,
            log_marginal: -12.345678901234567,
        };
        GoalModel {
            grid,
            goals: GoalSet::new(vec![Position2::new(0.0, 200.0), Position2::new(-0.1, 1e-3)]).unwrap(),
            timestep: 0.4,
            seed: 9,
            per_goal: vec![
                GoalRecords { x: rec(1.1, 0.2), y: rec(2.2, -3.3) },
                GoalRecords { x: rec(0.7, 1.0 / 7.0), y: rec(PI_ISH, 0.0) },
            ],
        }
    }

    const PI_ISH: f64 = 3.141592653589793;

    #[test]
    fn text_round_trip_is_exact() {
        let m = sample_model();
        let text = m.to_text();
        let back = GoalModel::from_text(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_text(), text);
        assert_eq!(text.matches("[hyperparams ").count(), 4);
    }

    #[test]
    fn corrupt_fields_are_named() {
        let text = sample_model().to_text();
        let bad = text.replacen("log_noise = ", "log_noise = oops", 1);
        match GoalModel::from_text(&bad).unwrap_err() {
            Error::Schema { field, .. } => assert_eq!(field, "hyperparams goal=0 axis=x: log_noise"),
            e => panic!("unexpected {e}"),
        }
        let missing = text.replace("grid.span = 4.0000000000000000e1\n", "");
        assert!(matches!(GoalModel::from_text(&missing), Err(Error::Schema { field, .. }) if field == "grid.span"));
        let wrong_version = text.replace("version = 1", "version = 7");
        assert!(matches!(GoalModel::from_text(&wrong_version), Err(Error::Schema { field, .. }) if field == "version"));
        let line = text.lines().find(|l| l.starts_with("log_lengthscales")).unwrap();
        let truncated = &line[..line.rfind(',').unwrap()];
        let short = text.replacen(line, truncated, 1);
        match GoalModel::from_text(&short).unwrap_err() {
            Error::Schema { field, .. } => assert_eq!(field, "hyperparams goal=0 axis=x: log_lengthscales"),
            e => panic!("unexpected {e}"),
        }
    }
}
