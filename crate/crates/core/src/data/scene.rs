//! Text formats for scenes (`step,agent_id,x,y`) and goal sets (`x,y`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{GoalSet, Scene, Step, Trajectory};
use crate::error::{Error, Result};
use crate::geom::Position2;

const SCENE_HEADER: [&str; 4] = ["step", "agent_id", "x", "y"];
const GOALS_HEADER: [&str; 2] = ["x", "y"];

/// Non-blank, non-comment lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn fields(line: &str) -> Vec<&str> {
    line.split(',').map(str::trim).collect()
}

fn parse_real(field: &str, name: &str, line: usize) -> Result<f64> {
    let v: f64 = field.parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid {name} value `{field}`"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("{name} must be finite, got `{field}`"),
        });
    }
    Ok(v)
}

pub fn parse_scene(text: &str, timestep_duration: f64) -> Result<Scene> {
    let mut rows: BTreeMap<String, BTreeMap<Step, (Position2, usize)>> = BTreeMap::new();
    for (n, (line_no, line)) in content_lines(text).enumerate() {
        let f = fields(line);
        if n == 0 && f == SCENE_HEADER {
            continue;
        }
        if f.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 4 fields (step,agent_id,x,y), found {}", f.len()),
            });
        }
        let step: Step = f[0].parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("invalid step `{}`", f[0]),
        })?;
        if f[1].is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "empty agent_id".into(),
            });
        }
        let pos = Position2::new(
            parse_real(f[2], "x", line_no)?,
            parse_real(f[3], "y", line_no)?,
        );
        let agent = rows.entry(f[1].to_string()).or_default();
        if let Some((_, first)) = agent.insert(step, (pos, line_no)) {
            return Err(Error::Parse {
                line: line_no,
                message: format!(
                    "duplicate row for step {step}, agent {} (first seen on line {first})",
                    f[1]
                ),
            });
        }
    }

    let mut trajectories = Vec::with_capacity(rows.len());
    for (agent_id, steps) in rows {
        let start = *steps.keys().next().expect("agent has at least one row");
        for (k, step) in steps.keys().enumerate() {
            if *step != start + k as Step {
                return Err(Error::validation(format!("gap in steps for agent {agent_id}")));
            }
        }
        let positions = steps.into_values().map(|(p, _)| p).collect();
        trajectories.push(Trajectory::new(agent_id, start, positions));
    }
    Scene::new(trajectories, timestep_duration)
}

pub fn load_scene(path: impl AsRef<Path>, timestep_duration: f64) -> Result<Scene> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scene(&text, timestep_duration)
}

/// Rows ordered by step, then agent id.
pub fn write_scene(scene: &Scene) -> String {
    let mut rows: Vec<(Step, &str, Position2)> = scene
        .trajectories()
        .iter()
        .flat_map(|t| {
            t.positions
                .iter()
                .enumerate()
                .map(move |(k, p)| (t.start_step + k as Step, t.agent_id.as_str(), *p))
        })
        .collect();
    rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(b.1)));
    let mut out = String::from("step,agent_id,x,y\n");
    for (s, a, p) in rows {
        let _ = writeln!(out, "{s},{a},{},{}", p.x, p.y);
    }
    out
}

pub fn parse_goals(text: &str) -> Result<GoalSet> {
    let mut goals = Vec::new();
    for (n, (line_no, line)) in content_lines(text).enumerate() {
        let f = fields(line);
        if n == 0 && f == GOALS_HEADER {
            continue;
        }
        if f.len() != 2 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 2 fields (x,y), found {}", f.len()),
            });
        }
        goals.push(Position2::new(
            parse_real(f[0], "x", line_no)?,
            parse_real(f[1], "y", line_no)?,
        ));
    }
    GoalSet::new(goals)
}

pub fn load_goals(path: impl AsRef<Path>) -> Result<GoalSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_goals(&text)
}

pub fn write_goals(goals: &GoalSet) -> String {
    let mut out = String::from("x,y\n");
    for g in goals.goals() {
        let _ = writeln!(out, "{},{}", g.x, g.y);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_rows_by_agent() {
        let s = parse_scene("step,agent_id,x,y\n1,a,2,0\n0,a,0,0\n", 0.4).unwrap();
        assert_eq!(s.len(), 1);
        let t = &s.trajectories()[0];
        assert_eq!(t.start_step, 0);
        assert_eq!(t.positions, vec![Position2::new(0.0, 0.0), Position2::new(2.0, 0.0)]);
    }

    #[test]
    fn empty_file_is_empty_scene() {
        assert!(parse_scene("", 0.4).unwrap().is_empty());
        assert!(parse_scene("step,agent_id,x,y\n", 0.4).unwrap().is_empty());
    }

    #[test]
    fn gap_is_rejected() {
        let err = parse_scene("step,agent_id,x,y\n0,a,0,0\n2,a,1,0\n", 0.4).unwrap_err();
        assert_eq!(err.to_string(), "gap in steps for agent a");
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let err = parse_scene("step,agent_id,x,y\n0,a,0,0\n1,a,zz,0\n", 0.4).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = parse_scene("step,agent_id,x,y\n0,a,0\n", 0.4).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_scene("0,a,0,0\n0,a,1,1\n", 0.4).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn scene_text_round_trips() {
        let text = "step,agent_id,x,y\n0,a,0.1,-3\n0,b,0.0000001,2.5\n1,a,0.30000000000000004,-3\n";
        let s = parse_scene(text, 0.4).unwrap();
        assert_eq!(write_scene(&s), text);
        let tiny = parse_scene("0,a,1e-7,2.5\n", 0.4).unwrap();
        assert_eq!(parse_scene(&write_scene(&tiny), 0.4).unwrap(), tiny);
    }

    #[test]
    fn goals_file() {
        let g = parse_goals("x,y\n0,0\n100,0\n").unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(parse_goals(&write_goals(&g)).unwrap(), g);
        assert!(parse_goals("x,y\n").is_err());
        assert!(matches!(parse_goals("x,y\n1\n"), Err(Error::Parse { line: 2, .. })));
    }
}
