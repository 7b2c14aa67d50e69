//! Goal inference: each goal's GP pair scores an agent's observed
//! (grid, velocity) history by its evidence, and the scores are normalised
//! against the prior.

use crate::data::AgentHistory;
use crate::error::{Error, Result};
use crate::gp::{log_marginal, Hyperparams};
use crate::grid::OccupancyGrid;
use crate::model::{Axis, GoalModel};

#[derive(Debug, Clone, PartialEq)]
pub struct GoalPosterior(Vec<f64>);

impl GoalPosterior {
    pub fn uniform(n: usize) -> Self {
        GoalPosterior(vec![1.0 / n as f64; n])
    }

    /// All mass on `goal`.
    pub fn certain(n: usize, goal: usize) -> Self {
        let mut p = vec![0.0; n];
        p[goal] = 1.0;
        GoalPosterior(p)
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Most probable goal, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.0.iter().enumerate() {
            if *p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// Sum of the x- and y-velocity evidences under one goal's hyperparameters.
pub fn goal_log_likelihood(
    grids: &[OccupancyGrid],
    vx: &[f64],
    vy: &[f64],
    x_hp: &Hyperparams,
    y_hp: &Hyperparams,
) -> Result<f64> {
    if grids.is_empty() {
        return Err(Error::validation("no observations to score"));
    }
    if vx.len() != grids.len() || vy.len() != grids.len() {
        return Err(Error::validation(format!(
            "{} grids, {} x-velocities and {} y-velocities",
            grids.len(),
            vx.len(),
            vy.len()
        )));
    }
    Ok(log_marginal(x_hp, grids, vx)? + log_marginal(y_hp, grids, vy)?)
}

/// Per-goal log-likelihoods of an agent's observed history.
pub fn history_log_likelihoods(history: &AgentHistory, model: &GoalModel) -> Result<Vec<f64>> {
    let (grids, vx, vy) = history.scored_pairs(model.timestep);
    (0..model.n_goals())
        .map(|g| {
            goal_log_likelihood(
                &grids,
                &vx,
                &vy,
                model.hyperparams(g, Axis::X),
                model.hyperparams(g, Axis::Y),
            )
            .map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!(
                    "scoring agent {} under goal {g}: {m}",
                    history.agent_id
                )),
                other => other,
            })
        })
        .collect()
}

fn validate_prior(prior: &[f64], n: usize) -> Result<()> {
    if prior.len() != n {
        return Err(Error::validation(format!(
            "prior has {} entries for {n} goals",
            prior.len()
        )));
    }
    if prior.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::validation("prior entries must be finite and non-negative"));
    }
    if prior.iter().sum::<f64>() <= 0.0 {
        return Err(Error::validation("prior has no mass"));
    }
    Ok(())
}

/// Normalises `exp(ll) · prior` with the log-sum-exp trick.
pub fn posterior_from_log_likelihoods(ll: &[f64], prior: Option<&[f64]>) -> Result<GoalPosterior> {
    if ll.is_empty() {
        return Err(Error::validation("no goals to score"));
    }
    if let Some(p) = prior {
        validate_prior(p, ll.len())?;
    }
    let log_post: Vec<f64> = ll
        .iter()
        .enumerate()
        .map(|(g, l)| match prior {
            Some(p) => l + p[g].ln(),
            None => *l,
        })
        .collect();
    let max = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numerical("every goal has zero posterior mass".into()));
    }
    let weights: Vec<f64> = log_post.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(GoalPosterior(weights.into_iter().map(|w| w / total).collect()))
}

fn normalised_prior(prior: Option<&[f64]>, n: usize) -> Result<GoalPosterior> {
    match prior {
        None => Ok(GoalPosterior::uniform(n)),
        Some(p) => {
            validate_prior(p, n)?;
            let total: f64 = p.iter().sum();
            Ok(GoalPosterior(p.iter().map(|v| v / total).collect()))
        }
    }
}

/// Posterior over the model's goals for one agent. Agents with fewer than two
/// observed positions carry no velocity evidence and keep the prior.
pub fn infer_goal_posterior(
    history: &AgentHistory,
    model: &GoalModel,
    prior: Option<&[f64]>,
) -> Result<GoalPosterior> {
    if history.positions.len() < 2 {
        return normalised_prior(prior, model.n_goals());
    }
    let ll = history_log_likelihoods(history, model)?;
    posterior_from_log_likelihoods(&ll, prior)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_is_shift_invariant() {
        let a = posterior_from_log_likelihoods(&[-1.0, -2.0, -3.5], None).unwrap();
        let b = posterior_from_log_likelihoods(&[-1001.0, -1002.0, -1003.5], None).unwrap();
        for (x, y) in a.probabilities().iter().zip(b.probabilities()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(a.argmax(), 0);
    }

    #[test]
    fn huge_likelihood_gaps_do_not_underflow_to_nan() {
        let p = posterior_from_log_likelihoods(&[-1e6, 0.0], None).unwrap();
        assert_eq!(p.probabilities(), &[0.0, 1.0]);
    }

    #[test]
    fn prior_is_validated() {
        assert!(posterior_from_log_likelihoods(&[0.0, 0.0], Some(&[1.0])).is_err());
        assert!(posterior_from_log_likelihoods(&[0.0, 0.0], Some(&[1.0, -0.1])).is_err());
        assert!(posterior_from_log_likelihoods(&[0.0, 0.0], Some(&[0.0, 0.0])).is_err());
        let p = posterior_from_log_likelihoods(&[0.0, 0.0], Some(&[3.0, 1.0])).unwrap();
        assert!((p.probabilities()[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn ties_pick_lowest_index() {
        assert_eq!(GoalPosterior::uniform(3).argmax(), 0);
    }

    #[test]
    fn empty_history_cannot_be_scored() {
        let hp = Hyperparams::isotropic(1, 1.0, 1.0, 1.0);
        let err = goal_log_likelihood(&[], &[], &[], &hp, &hp).unwrap_err();
        assert!(err.to_string().contains("no observations to score"));
    }
}
