use std::f64::consts::PI;

use prefdrive_core::cache::PlanCache;
use prefdrive_core::driver::{
    build_sim_dataset, fit_driver_model, generate_logs, read_logs, select_top_pairs, virtual_preference,
    virtual_utility, write_logs, DriverModel, DrivingLog, GridConfig, StyleRecipe, SynthConfig, UtilityTable,
    VARIANCE_FLOOR,
};
use prefdrive_core::gp::Source;
use prefdrive_core::pbo::{Choice, ParamSpace};
use prefdrive_core::planner::{Planner, PlannerConfig, SolverConfig};
use prefdrive_core::{ControlInput, Error, PlannerParams, Track, Trajectory, VehicleState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn lap(track: &Track, id: &str, style: &str, v: Vec<f64>) -> DrivingLog {
    DrivingLog {
        lap_id: id.into(),
        style: style.into(),
        s: track.s_grid().to_vec(),
        v,
    }
}

fn trajectory_with_speeds(track: &Track, v: &[f64], d: f64, chi: f64) -> Trajectory {
    let states = v.iter().map(|&v| VehicleState::new(v, d, chi)).collect();
    let inputs = vec![ControlInput::new(0.0, 0.0); v.len() - 1];
    Trajectory::new(track, states, inputs).unwrap()
}

fn two_regime_logs(track: &Track, laps: usize, seed: u64) -> Vec<DrivingLog> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = track.length() / 2.0;
    let n = Normal::new(0.0, 1.0).unwrap();
    (0..laps)
        .map(|l| {
            let v = track
                .s_grid()
                .iter()
                .map(|&s| 15.0 + if s < half { 0.5 } else { 2.0 } * n.sample(&mut rng))
                .collect();
            lap(track, &format!("lap-{l}"), "synthetic", v)
        })
        .collect()
}

#[test]
fn identical_constant_laps_give_floor_variance() {
    let track = Track::desk_scale();
    let logs: Vec<_> = (0..4).map(|i| lap(&track, &i.to_string(), "c", vec![15.0; track.len()])).collect();
    let m = fit_driver_model(&logs, &track).unwrap();
    assert_eq!(m.mean.len(), track.len());
    for k in 0..track.len() {
        assert!((m.mean[k] - 15.0).abs() <= 0.1, "m = {}", m.mean[k]);
        assert!(m.variance[k] <= VARIANCE_FLOOR && m.variance[k] > 0.0);
    }
}

#[test]
fn two_regime_noise_is_recovered() {
    let track = Track::desk_scale();
    let half = track.length() / 2.0;
    for seed in 0..3 {
        let logs = two_regime_logs(&track, 8, seed);
        let m = fit_driver_model(&logs, &track).unwrap();
        let n = track.len();
        let interior = 1..n - 1;
        let total = interior.len();
        let good = interior
            .filter(|&k| {
                let truth = if track.s_grid()[k] < half { 0.5 } else { 2.0 };
                let ratio = m.noise_variance[k].sqrt() / truth;
                (0.5..=2.0).contains(&ratio)
            })
            .count();
        assert!(good as f64 >= 0.9 * total as f64, "seed {seed}: {good}/{total}");
        assert!(m.mean.iter().all(|v| (v - 15.0).abs() < 2.0));
    }
}

#[test]
fn fit_is_invariant_to_lap_order() {
    let track = Track::desk_scale();
    let logs = two_regime_logs(&track, 5, 7);
    let a = fit_driver_model(&logs, &track).unwrap();
    let mut rev = logs.clone();
    rev.reverse();
    rev.swap(0, 2);
    let b = fit_driver_model(&rev, &track).unwrap();
    assert_eq!(a, b);
}

#[test]
fn fit_rejects_bad_inputs() {
    let track = Track::desk_scale();
    let one = vec![lap(&track, "a", "x", vec![10.0; track.len()])];
    assert!(matches!(fit_driver_model(&one, &track), Err(Error::InvalidArgument(_))));
    let mut short = lap(&track, "b", "x", vec![10.0; track.len()]);
    short.s.pop();
    short.v.pop();
    let logs = vec![one[0].clone(), short];
    assert!(matches!(fit_driver_model(&logs, &track), Err(Error::GridMismatch(_))));
    let mut shifted = one[0].clone();
    shifted.lap_id = "c".into();
    shifted.s[3] += 0.5;
    assert!(matches!(fit_driver_model(&[one[0].clone(), shifted], &track), Err(Error::GridMismatch(_))));
    let mut stopped = one[0].clone();
    stopped.lap_id = "d".into();
    stopped.v[4] = 0.0;
    assert!(fit_driver_model(&[one[0].clone(), stopped], &track).is_err());
}

#[test]
fn log_csv_round_trip() {
    let track = Track::desk_scale();
    let logs = generate_logs(&track, &SynthConfig::default()).unwrap();
    let mut buf = Vec::new();
    write_logs(&mut buf, &logs).unwrap();
    assert!(buf.starts_with(b"lap_id,style,s,v\n"));
    assert_eq!(read_logs(buf.as_slice()).unwrap(), logs);
    let interleaved = "lap_id,style,s,v\na,x,0,1\nb,x,0,1\na,x,5,1\n";
    assert!(matches!(read_logs(interleaved.as_bytes()), Err(Error::Parse(_))));
    assert!(read_logs("lap,style,s,v\n".as_bytes()).is_err());
}

#[test]
fn synthetic_styles_are_ordered_and_deterministic() {
    let track = Track::desk_scale();
    let cfg = SynthConfig::default();
    let logs = generate_logs(&track, &cfg).unwrap();
    assert_eq!(logs.len(), 25);
    assert_eq!(logs, generate_logs(&track, &cfg).unwrap());
    let other = generate_logs(&track, &SynthConfig { seed: 1, ..cfg.clone() }).unwrap();
    assert_ne!(logs, other);
    let mean_speed = |style: &str| {
        let l: Vec<_> = logs.iter().filter(|l| l.style == style).collect();
        assert_eq!(l.len(), 5);
        l.iter().flat_map(|l| l.v.iter()).sum::<f64>() / (l.len() * track.len()) as f64
    };
    let c = mean_speed("comfortable-a").max(mean_speed("comfortable-b"));
    let i = mean_speed("intermediate");
    let q = mean_speed("quick-a").min(mean_speed("quick-b"));
    assert!(c < i && i < q, "{c} {i} {q}");
    for l in &logs {
        assert!(l.v.iter().all(|v| *v > 0.0));
    }
    // noise-free profile respects its own limits
    let st = &StyleRecipe::defaults()[2];
    let v = st.target_profile(&track, 10.0);
    assert_eq!(v[0], 10.0);
    for k in 0..track.len() {
        assert!(v[k] <= st.cruise_speed.max(10.0) + 1e-12);
        assert!(v[k] * v[k] * track.kappa_ref()[k].abs() <= st.lateral_accel + 1e-9);
    }
}

fn three_point() -> (Track, DriverModel) {
    let track = Track::new("t3", vec![0.0, 2.0, 5.0], vec![0.0; 3], vec![-1.0; 3], vec![1.0; 3]).unwrap();
    let model = DriverModel {
        s: track.s_grid().to_vec(),
        mean: vec![10.0, 12.0, 11.0],
        variance: vec![0.25, 1.5, 4.0],
        noise_variance: vec![0.2, 1.4, 3.9],
        styles: vec!["x".into()],
        laps: vec!["a".into(), "b".into()],
    };
    (track, model)
}

#[test]
fn utility_of_three_point_model_matches_hand_evaluation() {
    let (track, model) = three_point();
    let t = trajectory_with_speeds(&track, &[10.5, 11.0, 13.0], 0.0, 0.0);
    // independent evaluation, term by term
    let expect = (-0.5 * (2.0 * PI * 0.25).ln() - 0.25 / 0.5)
        + (-0.5 * (2.0 * PI * 1.5).ln() - 1.0 / 3.0)
        + (-0.5 * (2.0 * PI * 4.0).ln() - 4.0 / 8.0);
    assert!((virtual_utility(&model, &t).unwrap() - expect).abs() <= 1e-12);
    // 30-digit reference
    assert!((expect - -4.292_881_487_001_433_7).abs() < 1e-12, "{expect}");
}

#[test]
fn utility_is_maximal_at_the_mean() {
    let (track, model) = three_point();
    let at_mean = virtual_utility(&model, &trajectory_with_speeds(&track, &model.mean, 0.0, 0.0)).unwrap();
    let analytic: f64 = model.variance.iter().map(|s2| -0.5 * (2.0 * PI * s2).ln()).sum();
    assert!((at_mean - analytic).abs() <= 1e-9);
    for delta in [-1.0, -1e-3, 1e-3, 0.5] {
        let v: Vec<f64> = model.mean.iter().map(|m| m + delta).collect();
        assert!(virtual_utility(&model, &trajectory_with_speeds(&track, &v, 0.0, 0.0)).unwrap() < at_mean);
    }
    // only the speed channel matters
    let v = [9.0, 12.5, 11.0];
    let a = virtual_utility(&model, &trajectory_with_speeds(&track, &v, 0.0, 0.0)).unwrap();
    let b = virtual_utility(&model, &trajectory_with_speeds(&track, &v, 0.4, -0.2)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn utility_requires_matching_grid() {
    let (_, model) = three_point();
    let other = Track::new("o", vec![0.0, 2.0, 6.0], vec![0.0; 3], vec![-1.0; 3], vec![1.0; 3]).unwrap();
    let t = trajectory_with_speeds(&other, &[10.0, 10.0, 10.0], 0.0, 0.0);
    assert!(matches!(virtual_utility(&model, &t), Err(Error::GridMismatch(_))));
    let desk = Track::desk_scale();
    let t = trajectory_with_speeds(&desk, &vec![10.0; desk.len()], 0.0, 0.0);
    assert!(matches!(virtual_utility(&model, &t), Err(Error::GridMismatch(_))));
}

#[test]
fn top_pair_selection() {
    assert_eq!(select_top_pairs(&[0.0, 1.0, 5.0], 1), vec![(2, 0)]);
    assert_eq!(select_top_pairs(&[0.0, 1.0, 5.0], 3), vec![(2, 0), (2, 1), (1, 0)]);
    assert!(select_top_pairs(&[2.0, 2.0], 5).is_empty());
    // ties between equal differences prefer the smaller index pair
    assert_eq!(select_top_pairs(&[0.0, 1.0, 2.0], 2), vec![(2, 0), (1, 0)]);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let n = rng.random_range(5..40);
        let u: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let k = rng.random_range(1..60);
        let sel = select_top_pairs(&u, k);
        assert_eq!(sel.len(), k.min(n * (n - 1) / 2));
        for &(w, l) in &sel {
            assert!(u[w] > u[l]);
        }
        // brute force: the k-th selected difference bounds every unselected pair
        let kth = sel.iter().map(|&(w, l)| u[w] - u[l]).fold(f64::INFINITY, f64::min);
        for i in 0..n {
            for j in i + 1..n {
                let chosen = sel.contains(&(i, j)) || sel.contains(&(j, i));
                if !chosen {
                    assert!((u[i] - u[j]).abs() <= kth);
                }
            }
        }
        // comparisons oriented by one utility table cannot form a cycle:
        // every edge strictly increases utility
        assert!(sel.iter().all(|&(w, l)| u[w] > u[l]));
    }
}

fn coarse_planner() -> Planner {
    Planner::new(PlannerConfig {
        solver: SolverConfig::coarse(),
        ..PlannerConfig::default()
    })
}

fn desk_model(track: &Track) -> DriverModel {
    let logs = generate_logs(track, &SynthConfig::default()).unwrap();
    let virt: Vec<_> = logs.into_iter().filter(|l| l.style != "intermediate").collect();
    fit_driver_model(&virt, track).unwrap()
}

#[test]
fn prior_dataset_from_a_small_grid() {
    let track = Track::desk_scale();
    let model = desk_model(&track);
    let planner = coarse_planner();
    let dir = tempfile::tempdir().unwrap();
    let cache = PlanCache::new(dir.path());
    let space = ParamSpace::desk();
    let grid = GridConfig { per_dim: 3, pairs: None };
    let cold = build_sim_dataset(&planner, &track, &model, &space, &grid, &cache).unwrap();
    assert_eq!(cold.grid_points, 27);
    let ok = 27 - cold.excluded;
    assert_eq!(cold.table.rows.len(), ok);
    assert_eq!(cold.candidate_pairs, (ok * (ok - 1) / 2) as u64);
    assert_eq!(cold.selected_pairs, 27);
    assert_eq!(cold.dataset.num_comparisons(), 27);
    let ds = &cold.dataset;
    for c in ds.comparisons() {
        assert_eq!(c.source, Source::Sim);
        let util = |x: &Vec<f64>| {
            let theta = space.theta(x).unwrap();
            cold.table.rows.iter().find(|r| r.theta == theta).unwrap().utility
        };
        assert!(util(&ds.inputs()[c.winner]) > util(&ds.inputs()[c.loser]));
    }
    // every stored input is referenced
    for i in 0..ds.num_inputs() {
        assert!(ds.comparisons().iter().any(|c| c.winner == i || c.loser == i));
    }

    let warm = build_sim_dataset(&planner, &track, &model, &space, &grid, &cache).unwrap();
    assert_eq!(cold.table, warm.table);
    for (a, b) in cold.table.rows.iter().zip(&warm.table.rows) {
        assert_eq!(a.utility.to_bits(), b.utility.to_bits());
    }
    assert_eq!(cold.dataset, warm.dataset);

    let mut buf = Vec::new();
    cold.table.to_writer(&mut buf).unwrap();
    assert!(buf.starts_with(b"grid_index,theta_1,theta_2,theta_3,theta_4,theta_5,utility\n"));
    assert_eq!(UtilityTable::from_reader(buf.as_slice()).unwrap(), cold.table);
}

#[test]
fn virtual_preference_rules() {
    let track = Track::desk_scale();
    let model = desk_model(&track);
    let planner = coarse_planner();
    let cache = PlanCache::disabled();
    let pa = PlannerParams::with_default_bounds([0.5, 0.0, 0.0, 0.0, 0.0]).unwrap();
    assert_eq!(virtual_preference(&model, &planner, &track, &pa, &pa, &cache).unwrap(), Choice::A);

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..3 {
        let ta = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), 0.0, 0.0];
        let tb = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), 0.0, 0.0];
        let a = PlannerParams::with_default_bounds(ta).unwrap();
        let b = PlannerParams::with_default_bounds(tb).unwrap();
        let ua = virtual_utility(&model, &planner.plan_full_lap(&track, &a).unwrap()).unwrap();
        let ub = virtual_utility(&model, &planner.plan_full_lap(&track, &b).unwrap()).unwrap();
        let expect = if ua >= ub { Choice::A } else { Choice::B };
        assert_eq!(virtual_preference(&model, &planner, &track, &a, &b, &cache).unwrap(), expect);
    }
}

#[test]
fn virtual_preference_follows_the_model_mean() {
    // a model centred on one plan prefers that plan over any other
    let track = Track::desk_scale();
    let planner = coarse_planner();
    let a = PlannerParams::with_default_bounds([1.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
    let b = PlannerParams::with_default_bounds([-1.5, -1.5, -1.5, 0.0, 0.0]).unwrap();
    let ta = planner.plan_full_lap(&track, &a).unwrap();
    let model = DriverModel {
        s: track.s_grid().to_vec(),
        mean: ta.speeds(),
        variance: vec![1.0; track.len()],
        noise_variance: vec![1.0; track.len()],
        styles: vec![],
        laps: vec![],
    };
    let cache = PlanCache::disabled();
    assert_eq!(virtual_preference(&model, &planner, &track, &a, &b, &cache).unwrap(), Choice::A);
    assert_eq!(virtual_preference(&model, &planner, &track, &b, &a, &cache).unwrap(), Choice::B);
}
