//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use crowdgp::data::GoalSet;
use crowdgp::gp::Hyperparams;
use crowdgp::grid::{GridConfig, OccupancyGrid};
use crowdgp::model::{AxisRecord, GoalModel, GoalRecords};
use crowdgp::Position2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Counts neighbours per cell by testing every cell's half-open square.
pub fn brute_force_grid(agent: Position2, neighbors: &[Position2], cells: usize, span: f64) -> Vec<f64> {
    let w = span / cells as f64;
    let lower = |k: usize| -span / 2.0 + (k as f64 - 1.0) * w;
    let mut out = vec![0.0; cells * cells];
    for n in neighbors {
        let (dx, dy) = (n.x - agent.x, n.y - agent.y);
        for b in 1..=cells {
            for a in 1..=cells {
                let inside_x = lower(a) <= dx && dx < lower(a + 1);
                let inside_y = lower(b) <= dy && dy < lower(b + 1);
                if inside_x && inside_y {
                    out[a + cells * (b - 1) - 1] += 1.0;
                }
            }
        }
    }
    out
}

/// Plain hyperparameter values for the dense oracle.
#[derive(Debug, Clone)]
pub struct RawHp {
    pub signal: f64,
    pub lengthscales: Vec<f64>,
    pub noise: f64,
    pub mean: f64,
}

impl RawHp {
    pub fn from(hp: &Hyperparams) -> Self {
        RawHp {
            signal: hp.log_signal.exp(),
            lengthscales: hp.log_lengthscales.iter().map(|l| l.exp()).collect(),
            noise: hp.log_noise.exp(),
            mean: hp.prior_mean,
        }
    }
}

pub fn dense_kernel(a: &[f64], b: &[f64], hp: &RawHp) -> f64 {
    let mut s = 0.0;
    for d in 0..a.len() {
        let r = (a[d] - b[d]) / hp.lengthscales[d];
        s += r * r;
    }
    hp.signal * hp.signal * (-0.5 * s).exp()
}

/// Gaussian elimination with partial pivoting: returns `(ln|det A|, A⁻¹ b)`.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> (f64, Vec<f64>) {
    let n = b.len();
    let mut log_det = 0.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let p = a[col][col];
        log_det += p.abs().ln();
        for row in col + 1..n {
            let f = a[row][col] / p;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in row + 1..n {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    (log_det, x)
}

/// Log evidence from the explicit covariance, determinant and inverse.
pub fn dense_log_marginal(hp: &RawHp, x: &[Vec<f64>], y: &[f64], jitter: f64) -> f64 {
    let n = x.len();
    let k: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let mut v = dense_kernel(&x[i], &x[j], hp);
                    if i == j {
                        v += hp.noise * hp.noise + jitter;
                    }
                    v
                })
                .collect()
        })
        .collect();
    let r: Vec<f64> = y.iter().map(|v| v - hp.mean).collect();
    let (log_det, alpha) = solve_dense(k, r.clone());
    let fit: f64 = r.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    -0.5 * fit - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
}

pub fn random_grids(rng: &mut ChaCha8Rng, n: usize, dim: usize, max_count: u32) -> Vec<OccupancyGrid> {
    (0..n)
        .map(|_| {
            OccupancyGrid::from_values((0..dim).map(|_| rng.random_range(0..=max_count) as f64).collect()).unwrap()
        })
        .collect()
}

pub fn random_hyperparams(rng: &mut ChaCha8Rng, dim: usize) -> Hyperparams {
    Hyperparams {
        log_signal: rng.random_range(-1.0..1.0),
        log_lengthscales: (0..dim).map(|_| rng.random_range(-0.5..2.0)).collect(),
        log_noise: rng.random_range(-2.0..0.5),
        prior_mean: rng.random_range(-1.0..1.0),
    }
}

pub fn goal_set(points: &[(f64, f64)]) -> GoalSet {
    GoalSet::new(points.iter().map(|&(x, y)| Position2::new(x, y)).collect()).unwrap()
}

fn record(hp: Hyperparams) -> AxisRecord {
    AxisRecord {
        hyperparams: hp,
        training_points: 0,
        log_marginal: 0.0,
    }
}

/// Model with hand-set hyperparameters, one `(x, y)` pair per goal.
pub fn hand_model(goals: &[(f64, f64)], hps: Vec<(Hyperparams, Hyperparams)>) -> GoalModel {
    let model = GoalModel {
        grid: GridConfig::default(),
        goals: goal_set(goals),
        timestep: 0.4,
        seed: 0,
        per_goal: hps
            .into_iter()
            .map(|(x, y)| GoalRecords { x: record(x), y: record(y) })
            .collect(),
    };
    model.validate().unwrap();
    model
}
