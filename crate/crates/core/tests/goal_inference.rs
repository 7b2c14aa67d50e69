mod common;

use common::hand_model;
use crowdgp::data::{observe, Scene, Trajectory};
use crowdgp::goals::{history_log_likelihoods, infer_goal_posterior};
use crowdgp::gp::Hyperparams;
use crowdgp::Position2;

fn scene() -> Scene {
    let path = |x0: f64, vx: f64| (0..6).map(|k| Position2::new(x0 + vx * k as f64, 0.3 * k as f64)).collect();
    Scene::new(vec![Trajectory::new("a", 0, path(0.0, 3.0)), Trajectory::new("b", 0, path(20.0, -2.5))], 0.4).unwrap()
}

fn hp(mean: f64) -> Hyperparams {
    Hyperparams::isotropic(16, 2.0, 4.0, 1.5).with_prior_mean(mean)
}

#[test]
fn single_goal_is_certain() {
    let model = hand_model(&[(50.0, 0.0)], vec![(hp(1.0), hp(0.0))]);
    for h in observe(&scene(), 5, None, &model.grid) {
        assert_eq!(infer_goal_posterior(&h, &model, None).unwrap().probabilities(), &[1.0]);
    }
}

#[test]
fn identical_goals_split_evenly() {
    let model = hand_model(&[(50.0, 0.0), (-50.0, 0.0)], vec![(hp(1.0), hp(0.0)), (hp(1.0), hp(0.0))]);
    for h in observe(&scene(), 5, None, &model.grid) {
        assert_eq!(infer_goal_posterior(&h, &model, None).unwrap().probabilities(), &[0.5, 0.5]);
    }
}

#[test]
fn direction_of_travel_picks_the_goal() {
    let model = hand_model(&[(50.0, 0.0), (-50.0, 0.0)], vec![(hp(7.0), hp(0.0)), (hp(-7.0), hp(0.0))]);
    let hs = observe(&scene(), 5, None, &model.grid);
    let a = infer_goal_posterior(&hs[0], &model, None).unwrap();
    let b = infer_goal_posterior(&hs[1], &model, None).unwrap();
    assert_eq!((a.argmax(), b.argmax()), (0, 1));
    assert!(a.probabilities()[0] > 0.99 && b.probabilities()[1] > 0.99);
}

#[test]
fn prior_reweights_the_likelihood() {
    let model = hand_model(&[(50.0, 0.0), (-50.0, 0.0)], vec![(hp(1.0), hp(0.0)), (hp(-1.0), hp(0.0))]);
    let h = &observe(&scene(), 5, None, &model.grid)[0];
    let ll = history_log_likelihoods(h, &model).unwrap();
    let post = infer_goal_posterior(h, &model, Some(&[1.0, 3.0])).unwrap();
    let expected = 1.0 / (1.0 + 3.0 * (ll[1] - ll[0]).exp());
    assert!((post.probabilities()[0] - expected).abs() < 1e-12);
}

#[test]
fn too_short_history_keeps_the_prior() {
    let model = hand_model(&[(50.0, 0.0), (-50.0, 0.0)], vec![(hp(5.0), hp(0.0)), (hp(-5.0), hp(0.0))]);
    let h = &observe(&scene(), 5, Some(1), &model.grid)[0];
    assert_eq!(infer_goal_posterior(h, &model, None).unwrap().probabilities(), &[0.5, 0.5]);
    let p = infer_goal_posterior(h, &model, Some(&[1.0, 3.0])).unwrap();
    assert_eq!(p.probabilities(), &[0.25, 0.75]);
}
