use std::path::Path;

use prefdrive_core::cache::PlanCache;
use prefdrive_core::driver::{fit_driver_model, generate_logs, SynthConfig};
use prefdrive_core::pbo::{Choice, ParamSpace};
use prefdrive_core::planner::Planner;
use prefdrive_core::Track;
use prefdrive_experiment::{
    oracle_best_utility, run_experiment, simulated_primary_dm, ConfigError, ExperimentConfig, Method, RegretRecord,
};

fn small_track() -> Track {
    let knots = [(0.0, 0.0), (40.0, 0.0), (60.0, 1.0 / 30.0), (100.0, 1.0 / 30.0), (120.0, 0.0), (150.0, 0.0)];
    Track::from_curvature_knots("small", &knots, 5.0, 3.0).unwrap()
}

fn small_space() -> ParamSpace {
    ParamSpace::new(vec![0, 2], vec![-2.0; 2], vec![2.0; 2], [0.0; 5]).unwrap()
}

/// Two-dimensional study on a 150 m track with tiny grids.
fn small_config(dir: &Path, budget: usize) -> ExperimentConfig {
    let track = dir.join("track.csv");
    small_track().write_csv(&track).unwrap();
    let mut cfg = ExperimentConfig {
        track: Some(track),
        space: small_space(),
        oracle_per_dim: Some(3),
        budget,
        trials: 2,
        seed: 7,
        output_dir: dir.join("out"),
        cache_dir: Some(dir.join("cache")),
        ..ExperimentConfig::default()
    };
    cfg.synth.laps_per_style = 3;
    cfg.prior_grid.per_dim = 3;
    cfg.pbo.candidates = 64;
    cfg
}

fn read_runs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir.join("runs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn config_parses_and_resolves_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    small_track().write_csv(dir.path().join("t.csv")).unwrap();
    let text = r#"
        track = "t.csv"
        budget = 4
        trials = 2
        output_dir = "res"
        [space]
        active = [0, 2]
        lower = [-1.0, -1.0]
        upper = [1.0, 1.0]
        pinned = [0.0, 0.0, 0.0, 0.0, 0.0]
        [pbo]
        beta = 5.0
    "#;
    let cfg = ExperimentConfig::from_toml_str(text, dir.path()).unwrap();
    assert_eq!(cfg.track.as_deref(), Some(dir.path().join("t.csv").as_path()));
    assert_eq!(cfg.output_dir, dir.path().join("res"));
    assert_eq!(cfg.cache_dir(), dir.path().join("res").join("cache"));
    assert_eq!((cfg.budget, cfg.trials, cfg.pbo.beta), (4, 2, 5.0));
    assert_eq!(cfg.space.dim(), 2);
    assert_eq!(cfg.oracle_grid(), 7);
    assert_eq!(cfg.trial_seed(3), 3);
    // untouched sections keep their defaults
    assert_eq!(cfg.heldout_style, "intermediate");
    assert_eq!(cfg.pbo.refit_every, 5);

    let empty = ExperimentConfig::from_toml_str("", dir.path()).unwrap();
    assert_eq!((empty.budget, empty.trials, empty.space.dim()), (30, 5, 3));
}

#[test]
fn invalid_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path();
    let invalid = |text: &str| match ExperimentConfig::from_toml_str(text, base) {
        Err(ConfigError::Invalid(m)) => m,
        other => panic!("expected a validation error for `{text}`, got {other:?}"),
    };
    assert!(invalid("trials = 0").contains("trials"));
    assert!(invalid("track = \"missing.csv\"").contains("does not exist"));
    invalid("[prior_grid]\nper_dim = 1");
    invalid("oracle_per_dim = 1");
    invalid("[pbo]\nbeta = 0.0");
    invalid("[space]\nactive = [0, 0]\nlower = [-1.0, -1.0]\nupper = [1.0, 1.0]\npinned = [0.0, 0.0, 0.0, 0.0, 0.0]");
    assert!(matches!(
        ExperimentConfig::from_toml_str("budgett = 3", base),
        Err(ConfigError::Toml(_))
    ));
    assert!(matches!(
        ExperimentConfig::load(&base.join("nope.toml")),
        Err(ConfigError::Read { .. })
    ));
}

fn check_bookkeeping(records: &[RegretRecord], budget: usize, oracle: f64) {
    assert_eq!(records.len(), budget + 1);
    assert_eq!(records[0].iteration, 0);
    assert!(records[0].theta_a.is_none() && records[0].choice.is_none());
    let mut best = f64::NEG_INFINITY;
    let mut last_simple = f64::INFINITY;
    for (n, r) in records.iter().enumerate().skip(1) {
        assert_eq!(r.iteration, n);
        let (ua, ub) = (r.utility_a.unwrap(), r.utility_b.unwrap());
        best = best.max(ua.max(ub));
        let regret = r.regret.unwrap();
        let simple = r.simple_regret.unwrap();
        assert!(regret >= 0.0 && simple >= 0.0);
        assert_eq!(regret, (oracle - ua.max(ub)).max(0.0));
        assert_eq!(simple, (oracle - best).max(0.0));
        assert!(simple <= last_simple, "simple regret increased at {n}");
        last_simple = simple;
        // the simulated decision maker picks the likelier plan, ties to a
        let expect = if ua >= ub { Choice::A } else { Choice::B };
        assert_eq!(r.choice, Some(expect));
    }
}

#[test]
fn small_study_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 3);
    let out = run_experiment(&cfg, &[Method::Prior, Method::Standard]).unwrap();
    let s = &out.summary;
    assert_eq!(s.oracle_grid_points, 9);
    assert_eq!(s.prior.grid_points, 9);
    assert_eq!(s.prior.candidate_pairs, 36);
    assert!(s.prior.selected_pairs <= 9 && s.prior.selected_pairs > 0);
    for m in [Method::Prior, Method::Standard] {
        let ms = out.method(m).unwrap();
        assert_eq!(ms.successful_trials, vec![0, 1]);
        assert!(ms.failed_trials.is_empty());
        assert_eq!(ms.queried_samples, 2 * cfg.budget * cfg.trials);
        assert!((0.0..=1.0).contains(&ms.bottom_quartile_fraction));
        assert!((0.0..=1.0).contains(&ms.outside_hull_fraction));
        assert_eq!(ms.regret.len(), cfg.budget);
        for runs in &out.records[&m] {
            check_bookkeeping(runs, cfg.budget, s.oracle_utility);
        }
        for (curve, runs) in out.curves[&m].iter().zip(&out.records[&m]) {
            let from_records: Vec<f64> = runs[1..].iter().map(|r| r.simple_regret.unwrap()).collect();
            assert_eq!(curve, &from_records);
        }
    }
    let o = &cfg.output_dir;
    for f in [
        "driver_virtual.json",
        "driver_primary.json",
        "prior_dataset.csv",
        "utility_table_virtual.csv",
        "utility_table_primary.csv",
        "regret_summary.csv",
        "summary.json",
        "plot/style_hull.csv",
        "plot/prior-trial0-queries.csv",
        "plot/standard-trial1-incumbent.csv",
        "runs/prior-trial1.jsonl",
    ] {
        assert!(o.join(f).is_file(), "{f} missing");
    }
    // run logs parse back to the returned records
    let text = std::fs::read_to_string(o.join("runs/standard-trial0.jsonl")).unwrap();
    let parsed: Vec<RegretRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(parsed, out.records[&Method::Standard][0]);
    let summary = std::fs::read_to_string(o.join("regret_summary.csv")).unwrap();
    assert!(summary.starts_with("method,iteration,trials,mean,median,min,max\n"));
    assert_eq!(summary.lines().count(), 1 + 2 * cfg.budget);
}

#[test]
fn identical_seeds_give_identical_run_logs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ca = small_config(a.path(), 2);
    let mut cb = small_config(b.path(), 2);
    // the second run shares the warm cache of the first
    cb.cache_dir = ca.cache_dir.clone();
    run_experiment(&ca, &[Method::Prior, Method::Standard]).unwrap();
    run_experiment(&cb, &[Method::Prior, Method::Standard]).unwrap();
    let (ra, rb) = (read_runs(&ca.output_dir), read_runs(&cb.output_dir));
    assert_eq!(ra.len(), 4);
    assert_eq!(ra, rb);

    let mut cc = small_config(b.path(), 2);
    cc.cache_dir = ca.cache_dir.clone();
    cc.output_dir = b.path().join("other-seed");
    cc.seed = 8;
    run_experiment(&cc, &[Method::Standard]).unwrap();
    assert_ne!(read_runs(&cc.output_dir)[0].1, rb[2].1);
}

#[test]
fn zero_budget_emits_only_the_initial_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 0);
    let out = run_experiment(&cfg, &[Method::Prior]).unwrap();
    let ms = out.method(Method::Prior).unwrap();
    assert_eq!(ms.queried_samples, 0);
    assert!(ms.regret.is_empty());
    for runs in &out.records[&Method::Prior] {
        assert_eq!(runs.len(), 1);
        assert!(runs[0].incumbent_regret.unwrap() >= 0.0);
    }
    assert!(out.method(Method::Standard).is_none());
}

#[test]
fn primary_decision_maker_and_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let track = small_track();
    let logs = generate_logs(
        &track,
        &SynthConfig {
            laps_per_style: 3,
            ..SynthConfig::default()
        },
    )
    .unwrap();
    let held: Vec<_> = logs.into_iter().filter(|l| l.style == "intermediate").collect();
    let model = fit_driver_model(&held, &track).unwrap();
    let cfg = small_config(dir.path(), 1);
    let dm = simulated_primary_dm(model, Planner::new(cfg.planner.clone()), track, PlanCache::new(dir.path().join("c")));

    let space = small_space();
    let p = |xi: [f64; 2]| space.params(&xi).unwrap();
    assert_eq!(dm.prefer(&p([0.5, 0.5]), &p([0.5, 0.5])).unwrap(), Choice::A);
    for (a, b) in [([-2.0, -2.0], [1.0, 0.0]), ([1.0, 0.0], [-2.0, -2.0]), ([2.0, 2.0], [0.0, -1.0])] {
        let (ua, ub) = (dm.utility(&p(a)).unwrap(), dm.utility(&p(b)).unwrap());
        assert_ne!(ua, ub);
        let expect = if ua > ub { Choice::A } else { Choice::B };
        assert_eq!(dm.prefer(&p(a), &p(b)).unwrap(), expect);
    }

    // the 3-point grid is nested in the 5-point grid
    let coarse = oracle_best_utility(&dm, &space, 3).unwrap();
    let fine = oracle_best_utility(&dm, &space, 5).unwrap();
    assert_eq!(coarse.table.rows.len() + coarse.excluded, 9);
    assert_eq!(fine.table.rows.len() + fine.excluded, 25);
    assert!(fine.utility >= coarse.utility);
    let max = coarse.table.rows.iter().map(|r| r.utility).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(coarse.utility, max);
    // regret of the grid argmax is zero by construction
    let at_best = dm.utility(&space.params(&space.project(&coarse.theta)).unwrap()).unwrap();
    assert_eq!(at_best, coarse.utility);
}
