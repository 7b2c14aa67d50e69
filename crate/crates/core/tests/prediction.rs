mod common;

use common::hand_model;
use crowdgp::data::{observe, Scene, Trajectory};
use crowdgp::gp::{condition, Hyperparams};
use crowdgp::grid::occupancy_grid;
use crowdgp::model::{Axis, GoalModel};
use crowdgp::predict::{condition_agents, map_trajectory, multi_step, GoalChoice, GoalMode, PredictionRequest, TrajectoryFan};
use crowdgp::Position2;

fn walker(id: &str, start: (f64, f64), v: (f64, f64), len: usize) -> Trajectory {
    let positions = (0..len)
        .map(|k| Position2::new(start.0 + v.0 * k as f64, start.1 + v.1 * k as f64))
        .collect();
    Trajectory::new(id, 0, positions)
}

/// Goal 0 drifts right, goal 1 drifts left; both share their lengthscales.
fn two_goal_model(spread: f64) -> GoalModel {
    let hx = |m: f64| Hyperparams::isotropic(16, 2.0, 3.0, 1.0).with_prior_mean(m);
    let hy = Hyperparams::isotropic(16, 1.0, 3.0, 0.8);
    hand_model(
        &[(100.0, 0.0), (-100.0, 0.0)],
        vec![(hx(spread), hy.clone()), (hx(-spread), hy)],
    )
}

fn crowd() -> Scene {
    Scene::new(
        vec![
            walker("a", (0.0, 0.0), (4.0, 0.1), 8),
            walker("b", (30.0, 5.0), (-4.0, 0.0), 8),
            walker("c", (10.0, -12.0), (0.5, 1.0), 8),
            walker("d", (-20.0, 8.0), (3.0, -0.5), 8),
        ],
        0.4,
    )
    .unwrap()
}

fn request(scene: &Scene, model: &GoalModel, horizon: usize, samples: usize, mode: GoalMode) -> PredictionRequest {
    PredictionRequest {
        mode,
        seed: 7,
        ..PredictionRequest::from_scene(scene, model, 7, None, horizon, samples)
    }
}

#[test]
fn single_sample_mean_grid_is_the_sampled_grid() {
    let model = two_goal_model(5.0);
    let fan = multi_step(&request(&crowd(), &model, 6, 1, GoalMode::Map), &model).unwrap();
    for k in 0..fan.horizon() {
        let crowd = &fan.positions[k][0];
        for i in 0..fan.n_agents() {
            let others = crowd.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, p)| p);
            assert_eq!(fan.mean_grids[k][i], occupancy_grid(crowd[i], others, &model.grid));
        }
    }
}

#[test]
fn distant_agents_do_not_interact() {
    let model = two_goal_model(5.0);
    let near = walker("near", (0.0, 0.0), (4.0, 0.0), 8);
    let far = walker("far", (5000.0, 5000.0), (-4.0, 1.0), 8);
    let joint = Scene::new(vec![near.clone(), far.clone()], 0.4).unwrap();
    let fan = multi_step(&request(&joint, &model, 10, 20, GoalMode::Mixture), &model).unwrap();
    for (solo, id) in [(near, "near"), (far, "far")] {
        let scene = Scene::new(vec![solo], 0.4).unwrap();
        let alone = multi_step(&request(&scene, &model, 10, 20, GoalMode::Mixture), &model).unwrap();
        let i = fan.agent_index(id).unwrap();
        for k in 0..10 {
            for s in 0..20 {
                assert_eq!(fan.positions[k][s][i], alone.positions[k][s][0]);
            }
        }
    }
}

#[test]
fn mixture_goal_frequencies_match_the_posterior() {
    let model = two_goal_model(0.3);
    let scene = Scene::new(vec![walker("a", (0.0, 0.0), (0.05, 0.0), 8)], 0.4).unwrap();
    let req = request(&scene, &model, 1, 10_000, GoalMode::Mixture);
    let plans = condition_agents(&req, &model).unwrap();
    let p = plans[0].posterior.probabilities()[0];
    assert!(p > 0.05 && p < 0.95, "posterior {p} too extreme for a useful check");
    let fan = multi_step(&req, &model).unwrap();
    let n = fan.samples() as f64;
    let zeros = fan.goals.iter().filter(|g| g[0] == 0).count() as f64;
    let chi2 = (zeros - n * p).powi(2) / (n * p) + ((n - zeros) - n * (1.0 - p)).powi(2) / (n * (1.0 - p));
    // 0.999 quantile of chi-squared with one degree of freedom
    assert!(chi2 < 10.83, "chi2 {chi2}, p {p}, drawn {zeros}");
}

fn in_pool(threads: usize, f: impl FnOnce() -> TrajectoryFan + Send) -> TrajectoryFan {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn thread_count_does_not_change_the_fan() {
    let model = two_goal_model(2.0);
    let scene = crowd();
    let req = request(&scene, &model, 8, 40, GoalMode::Mixture);
    let one = in_pool(1, || multi_step(&req, &model).unwrap());
    let four = in_pool(4, || multi_step(&req, &model).unwrap());
    assert_eq!(one, four);
    assert_eq!(one.to_fan_csv(), four.to_fan_csv());
}

#[test]
fn shorter_horizon_is_a_prefix() {
    let model = two_goal_model(2.0);
    let scene = crowd();
    let short = multi_step(&request(&scene, &model, 5, 30, GoalMode::Mixture), &model).unwrap();
    let long = multi_step(&request(&scene, &model, 20, 30, GoalMode::Mixture), &model).unwrap();
    assert_eq!(short.positions[..], long.positions[..5]);
    assert_eq!(short.mean_grids[..], long.mean_grids[..5]);
    assert_eq!(short.goals, long.goals);
}

#[test]
fn plans_condition_on_the_agents_own_history() {
    let model = two_goal_model(2.0);
    let scene = crowd();
    let req = request(&scene, &model, 1, 1, GoalMode::Map);
    let plans = condition_agents(&req, &model).unwrap();
    for (plan, h) in plans.iter().zip(observe(&scene, 7, None, &model.grid)) {
        let GoalChoice::Fixed(g) = plan.choice else { panic!("map mode fixes the goal") };
        let (grids, vx, vy) = h.scored_pairs(model.timestep);
        let px = condition(model.hyperparams(g, Axis::X), &grids, &vx).unwrap().predict(h.current_grid());
        let py = condition(model.hyperparams(g, Axis::Y), &grids, &vy).unwrap().predict(h.current_grid());
        let (qx, qy) = plan.gps[g].as_ref().unwrap().predict(&plan.grid);
        assert_eq!((px, py), (qx, qy));
        assert_eq!(plan.position, h.current_position());
    }
}

#[test]
fn known_goal_overrides_inference() {
    let model = two_goal_model(5.0);
    // walks right, so goal 0 is inferred
    let scene = Scene::new(vec![walker("a", (0.0, 0.0), (4.0, 0.0), 8)], 0.4).unwrap();
    let mut req = request(&scene, &model, 3, 50, GoalMode::Mixture);
    let inferred = condition_agents(&req, &model).unwrap();
    assert_eq!(inferred[0].posterior.argmax(), 0);
    req.known_goals.insert("a".into(), 1);
    let plans = condition_agents(&req, &model).unwrap();
    assert_eq!(plans[0].choice, GoalChoice::Fixed(1));
    assert_eq!(plans[0].posterior.probabilities(), &[0.0, 1.0]);
    let fan = multi_step(&req, &model).unwrap();
    assert!(fan.goals.iter().all(|g| g[0] == 1));
}

#[test]
fn known_goal_must_be_valid() {
    let model = two_goal_model(5.0);
    let scene = crowd();
    let mut req = request(&scene, &model, 3, 5, GoalMode::Map);
    req.known_goals.insert("a".into(), 2);
    assert!(multi_step(&req, &model).unwrap_err().to_string().contains("out of range"));
    req.known_goals.clear();
    req.known_goals.insert("ghost".into(), 0);
    assert!(multi_step(&req, &model).unwrap_err().to_string().contains("ghost"));
}

#[test]
fn single_observation_agents_stay_put() {
    let model = two_goal_model(5.0);
    let scene = Scene::new(
        vec![walker("a", (0.0, 0.0), (4.0, 0.0), 8), Trajectory::new("late", 7, vec![Position2::new(10.0, 10.0)])],
        0.4,
    )
    .unwrap();
    let fan = multi_step(&request(&scene, &model, 5, 10, GoalMode::Map), &model).unwrap();
    let i = fan.agent_index("late").unwrap();
    assert!(fan.degenerate[i]);
    for step in &fan.positions {
        for crowd in step {
            assert_eq!(crowd[i], Position2::new(10.0, 10.0));
        }
    }
}

#[test]
fn map_trajectory_is_the_sample_mean_of_the_fan_file() {
    let model = two_goal_model(2.0);
    let fan = multi_step(&request(&crowd(), &model, 6, 25, GoalMode::Mixture), &model).unwrap();
    let map = map_trajectory(&fan);
    let mut sums = std::collections::BTreeMap::<(i64, String), (f64, f64, usize)>::new();
    for line in fan.to_fan_csv().lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let e = sums.entry((f[0].parse().unwrap(), f[2].to_string())).or_default();
        e.0 += f[3].parse::<f64>().unwrap();
        e.1 += f[4].parse::<f64>().unwrap();
        e.2 += 1;
    }
    assert_eq!(sums.len(), fan.horizon() * fan.n_agents());
    for ((step, id), (sx, sy, n)) in sums {
        assert_eq!(n, 25);
        let k = (step - fan.start_step - 1) as usize;
        let p = map[fan.agent_index(&id).unwrap()][k];
        assert!((p.x - sx / 25.0).abs() < 1e-9 && (p.y - sy / 25.0).abs() < 1e-9);
    }
    for line in fan.to_summary_csv().lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let k = (f[0].parse::<i64>().unwrap() - fan.start_step - 1) as usize;
        let p = map[fan.agent_index(f[1]).unwrap()][k];
        assert_eq!(f[2].parse::<f64>().unwrap(), p.x);
        assert_eq!(f[3].parse::<f64>().unwrap(), p.y);
    }
}

#[test]
fn samples_start_from_the_last_observation() {
    let model = two_goal_model(2.0);
    let scene = crowd();
    let fan = multi_step(&request(&scene, &model, 4, 5, GoalMode::Map), &model).unwrap();
    assert_eq!(fan.start_step, 7);
    assert_eq!(fan.to_fan_csv().lines().count(), 1 + 4 * 5 * 4);
    // every sample starts from the last observed position
    for h in observe(&scene, 7, None, &model.grid) {
        let i = fan.agent_index(&h.agent_id).unwrap();
        for s in 0..5 {
            let step = fan.positions[0][s][i] - h.current_position();
            assert!(step.x.is_finite() && step.y.is_finite());
            assert!((step.x.powi(2) + step.y.powi(2)).sqrt() < 40.0 * model.timestep);
        }
    }
}
