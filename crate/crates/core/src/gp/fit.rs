//! Evidence maximisation in log-parameter space: L-BFGS with a backtracking
//! line search, restarted from seeded perturbations of a data-driven guess.

use std::collections::VecDeque;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{log_marginal_and_grad, Hyperparams};
use crate::error::{Error, Result};
use crate::grid::OccupancyGrid;

#[derive(Debug, Clone, PartialEq)]
pub struct GpFitConfig {
    pub max_iterations: usize,
    /// Stop once the largest gradient component falls below this.
    pub tolerance: f64,
    /// Number of starting points, the first being the unperturbed guess.
    pub restarts: usize,
    /// Larger training sets are uniformly subsampled to this size.
    pub subsample_cap: usize,
    pub seed: u64,
    /// Use the sample mean of the targets as the GP's constant prior mean.
    pub fit_mean: bool,
}

impl Default for GpFitConfig {
    fn default() -> Self {
        GpFitConfig {
            max_iterations: 200,
            tolerance: 1e-5,
            restarts: 3,
            subsample_cap: 1000,
            seed: 42,
            fit_mean: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub hyperparams: Hyperparams,
    pub log_marginal: f64,
    /// Best evidence among the starting points.
    pub initial_log_marginal: f64,
    pub iterations: usize,
    pub points_used: usize,
}

const MEMORY: usize = 10;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;
const RESTART_PERTURBATION: f64 = 0.5;

pub fn fit(x: &[OccupancyGrid], y: &[f64], cfg: &GpFitConfig) -> Result<Hyperparams> {
    fit_detailed(x, y, cfg).map(|o| o.hyperparams)
}

pub fn fit_detailed(x: &[OccupancyGrid], y: &[f64], cfg: &GpFitConfig) -> Result<FitOutcome> {
    if x.len() != y.len() {
        return Err(Error::validation(format!(
            "{} inputs but {} targets",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::validation(format!(
            "insufficient data for goal: {} training point(s), need at least 2",
            x.len()
        )));
    }
    let dim = x[0].len();
    if let Some(g) = x.iter().find(|g| g.len() != dim) {
        return Err(Error::validation(format!(
            "mixed grid lengths {} and {}",
            dim,
            g.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (x, y): (Vec<OccupancyGrid>, Vec<f64>) = if x.len() > cfg.subsample_cap.max(2) {
        let mut keep = index::sample(&mut rng, x.len(), cfg.subsample_cap.max(2)).into_vec();
        keep.sort_unstable();
        keep.iter().map(|&i| (x[i].clone(), y[i])).unzip()
    } else {
        (x.to_vec(), y.to_vec())
    };

    let n = y.len() as f64;
    let mean = if cfg.fit_mean { y.iter().sum::<f64>() / n } else { 0.0 };
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let rms = (y.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    let scale = if var.sqrt() > 1e-12 {
        var.sqrt()
    } else if rms > 1e-12 {
        rms
    } else {
        1.0
    };
    let ln_scale = scale.ln();

    let mut base = vec![0.0; dim + 2];
    base[0] = ln_scale;
    base[dim + 1] = (0.5 * scale).ln();
    let mut lower = vec![-8.0; dim + 2];
    let mut upper = vec![12.0; dim + 2];
    lower[0] = ln_scale - 12.0;
    upper[0] = ln_scale + 8.0;
    lower[dim + 1] = ln_scale - 14.0;
    upper[dim + 1] = ln_scale + 8.0;
    let bounds = Bounds { lower, upper };

    let objective = |theta: &[f64]| -> Option<(f64, Vec<f64>)> {
        let hp = Hyperparams::from_log_vec(theta, mean);
        match log_marginal_and_grad(&hp, &x, &y) {
            Ok((v, g)) if v.is_finite() && g.iter().all(|g| g.is_finite()) => {
                Some((-v, g.into_iter().map(|g| -g).collect()))
            }
            _ => None,
        }
    };

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut best_initial = f64::NEG_INFINITY;
    let mut iterations = 0;
    for r in 0..cfg.restarts.max(1) {
        let mut start = base.clone();
        if r > 0 {
            for v in start.iter_mut() {
                *v += rng.random_range(-RESTART_PERTURBATION..=RESTART_PERTURBATION);
            }
        }
        bounds.project(&mut start);
        let Some(init) = objective(&start) else {
            log::debug!("restart {r}: evidence undefined at the starting point");
            continue;
        };
        best_initial = best_initial.max(-init.0);
        let (theta, f, iters) = lbfgs(&objective, start, init, &bounds, cfg);
        iterations += iters;
        if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            best = Some((f, theta));
        }
    }

    let (f, theta) = best.ok_or_else(|| {
        Error::Numerical("every optimisation restart failed to evaluate the evidence".into())
    })?;
    Ok(FitOutcome {
        hyperparams: Hyperparams::from_log_vec(&theta, mean),
        log_marginal: -f,
        initial_log_marginal: best_initial,
        iterations,
        points_used: y.len(),
    })
}

struct Bounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Bounds {
    fn project(&self, theta: &mut [f64]) {
        for ((t, lo), hi) in theta.iter_mut().zip(&self.lower).zip(&self.upper) {
            *t = t.clamp(*lo, *hi);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimises `objective` from `x0`; returns the final point, value and
/// iteration count. Accepted steps never increase the objective.
fn lbfgs<F>(
    objective: &F,
    x0: Vec<f64>,
    init: (f64, Vec<f64>),
    bounds: &Bounds,
    cfg: &GpFitConfig,
) -> (Vec<f64>, f64, usize)
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let mut x = x0;
    let (mut f, mut g) = init;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(MEMORY);
    let mut iter = 0;
    while iter < cfg.max_iterations {
        if max_abs(&g) < cfg.tolerance {
            break;
        }
        iter += 1;

        // Two-loop recursion for d = -H g.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, yv, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(yv).for_each(|(q, y)| *q -= a * y);
            alphas.push(a);
        }
        if let Some((s, yv, _)) = history.back() {
            let gamma = dot(s, yv) / dot(yv, yv);
            q.iter_mut().for_each(|q| *q *= gamma);
        } else {
            let scale = 1.0 / max_abs(&g).max(1.0);
            q.iter_mut().for_each(|q| *q *= scale);
        }
        for ((s, yv, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(yv, &q);
            q.iter_mut().zip(s).for_each(|(q, s)| *q += (a - b) * s);
        }
        let mut dir: Vec<f64> = q.into_iter().map(|v| -v).collect();
        if dot(&dir, &g) >= 0.0 {
            history.clear();
            let scale = 1.0 / max_abs(&g).max(1.0);
            dir = g.iter().map(|v| -v * scale).collect();
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(x, d)| x + step * d).collect();
            bounds.project(&mut trial);
            let moved: Vec<f64> = trial.iter().zip(&x).map(|(t, x)| t - x).collect();
            let slope = dot(&g, &moved);
            if slope < 0.0 {
                if let Some((ft, gt)) = objective(&trial) {
                    if ft <= f + ARMIJO * slope {
                        accepted = Some((trial, ft, gt, moved));
                        break;
                    }
                }
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new, s)) = accepted else {
            break;
        };
        let yv: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&yv, &yv).sqrt() && sy > 0.0 {
            if history.len() == MEMORY {
                history.pop_front();
            }
            history.push_back((s, yv, 1.0 / sy));
        }
        let improvement = f - f_new;
        x = x_new;
        f = f_new;
        g = g_new;
        if improvement <= 1e-12 * f.abs().max(1.0) {
            break;
        }
    }
    (x, f, iter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{condition, log_marginal};

    fn grid(v: &[f64]) -> OccupancyGrid {
        OccupancyGrid::from_values(v.to_vec()).unwrap()
    }

    #[test]
    fn too_little_data() {
        let err = fit(&[grid(&[0.0])], &[1.0], &GpFitConfig::default()).unwrap_err();
        assert!(err.to_string().contains("insufficient data for goal"));
    }

    #[test]
    fn never_worse_than_the_start() {
        let x: Vec<_> = (0..12).map(|i| grid(&[(i % 4) as f64, (i / 4) as f64])).collect();
        let y: Vec<f64> = (0..12).map(|i| ((i as f64) * 0.7).sin()).collect();
        let out = fit_detailed(&x, &y, &GpFitConfig::default()).unwrap();
        assert!(out.log_marginal >= out.initial_log_marginal);
        let check = log_marginal(&out.hyperparams, &x, &y).unwrap();
        assert!((check - out.log_marginal).abs() < 1e-9);
    }

    #[test]
    fn constant_targets_are_reproduced() {
        let x = vec![grid(&[1.0, 0.0]); 6];
        let y = vec![3.0; 6];
        for fit_mean in [true, false] {
            let cfg = GpFitConfig { fit_mean, ..GpFitConfig::default() };
            let hp = fit(&x, &y, &cfg).unwrap();
            let gp = condition(&hp, &x, &y).unwrap();
            let p = gp.predict(&x[0]);
            assert!((p.mean - 3.0).abs() < 3.0 * 0.05, "fit_mean={fit_mean}: {}", p.mean);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let x: Vec<_> = (0..30).map(|i| grid(&[(i % 3) as f64, (i % 5) as f64])).collect();
        let y: Vec<f64> = (0..30).map(|i| (i as f64).cos()).collect();
        let cfg = GpFitConfig { subsample_cap: 20, ..GpFitConfig::default() };
        let a = fit_detailed(&x, &y, &cfg).unwrap();
        let b = fit_detailed(&x, &y, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.points_used, 20);
    }
}
