use std::path::Path;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use prefdrive_core::cache::PlanCache;
use prefdrive_core::gp::{PreferenceDataset, Source};
use prefdrive_core::pbo::{Choice, ParamSpace};
use prefdrive_core::planner::{Planner, PlannerConfig, SolverConfig};
use prefdrive_core::Track;
use prefdrive_service::session::{Mode, SessionConfig, SessionEngine};
use prefdrive_service::{router, AppState, ServiceConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

fn small_track() -> Track {
    let knots = [(0.0, 0.0), (40.0, 0.0), (60.0, 1.0 / 30.0), (100.0, 1.0 / 30.0), (120.0, 0.0), (150.0, 0.0)];
    Track::from_curvature_knots("small", &knots, 5.0, 3.0).unwrap()
}

fn small_space() -> Value {
    json!({"active": [0, 2], "lower": [-2.0, -2.0], "upper": [2.0, 2.0], "pinned": [0.0, 0.0, 0.0, 0.0, 0.0]})
}

fn session_body(dir: &Path, mode: &str, budget: usize) -> Value {
    let track = dir.join("track.csv");
    small_track().write_csv(&track).unwrap();
    json!({
        "mode": mode,
        "budget": budget,
        "seed": 3,
        "track": track,
        "space": small_space(),
        "pbo": {"candidates": 64},
    })
}

fn app(dir: &Path, journal: bool) -> Router {
    let cfg = ServiceConfig {
        journal_dir: journal.then(|| dir.join("journal")),
        cache_dir: Some(dir.join("cache")),
    };
    router(AppState::open(cfg).unwrap())
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Vec<u8>>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(Body::from).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn post(app: &Router, uri: &str, body: &Value) -> (StatusCode, Value) {
    call(app, "POST", uri, Some(serde_json::to_vec(body).unwrap())).await
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, "GET", uri, None).await
}

async fn create(app: &Router, body: &Value) -> String {
    let (status, v) = post(app, "/sessions", body).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    assert_eq!(v["status"], "computing");
    v["id"].as_str().unwrap().to_owned()
}

/// Polls the query endpoint until the session leaves `computing`.
async fn wait_query(app: &Router, id: &str) -> Value {
    let start = Instant::now();
    loop {
        let (status, v) = get(app, &format!("/sessions/{id}/query")).await;
        assert_eq!(status, StatusCode::OK);
        if v["status"] != "computing" {
            return v;
        }
        assert!(start.elapsed() < Duration::from_secs(120), "session stuck computing");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

fn assert_error(status: StatusCode, v: &Value, expect: StatusCode, code: &str) {
    assert_eq!(status, expect, "{v}");
    assert_eq!(v["code"], code, "{v}");
    assert!(v["message"].as_str().is_some_and(|m| !m.is_empty()));
    assert_eq!(v.as_object().unwrap().len(), 2, "error body has exactly code and message");
}

#[tokio::test]
async fn health_and_unknown_routes() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), false);
    let (status, v) = get(&app, "/healthz").await;
    assert_eq!((status, v), (StatusCode::OK, json!({"status": "ok"})));
    let (status, v) = get(&app, "/nowhere").await;
    assert_error(status, &v, StatusCode::NOT_FOUND, "not_found");
    let (status, v) = get(&app, "/sessions/unknown/query").await;
    assert_error(status, &v, StatusCode::NOT_FOUND, "not_found");
    let (status, v) = post(&app, "/sessions/unknown/preference", &json!({"choice": "a"})).await;
    assert_error(status, &v, StatusCode::NOT_FOUND, "not_found");
}

#[tokio::test]
async fn invalid_session_configs() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), false);
    let base = session_body(dir.path(), "standard", 2);
    let with = |k: &str, v: Value| {
        let mut b = base.clone();
        b[k] = v;
        b
    };
    for body in [
        with("mode", json!("prior")),
        with("budget", json!(0)),
        with("mode", json!("other")),
        with("unexpected", json!(1)),
        with("track", json!(dir.path().join("missing.csv"))),
        with("prior_dataset", json!(dir.path().join("missing.csv"))),
    ] {
        let (status, v) = post(&app, "/sessions", &body).await;
        assert_error(status, &v, StatusCode::BAD_REQUEST, "invalid_config");
    }
    let (status, v) = call(&app, "POST", "/sessions", Some(b"{not json".to_vec())).await;
    assert_error(status, &v, StatusCode::BAD_REQUEST, "invalid_config");
}

#[tokio::test]
async fn query_payload_shapes_and_lap_time() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), false);
    let id = create(&app, &session_body(dir.path(), "standard", 2)).await;
    let q = wait_query(&app, &id).await;
    assert_eq!(q["status"], "awaiting_answer");
    assert_eq!((q["iteration"].as_u64(), q["budget"].as_u64()), (Some(0), Some(2)));
    // repeated reads return the same query
    assert_eq!(get(&app, &format!("/sessions/{id}/query")).await.1, q);

    let track = small_track();
    let n = track.len();
    let planner = Planner::new(PlannerConfig {
        solver: SolverConfig::coarse(),
        ..PlannerConfig::default()
    });
    let space = ParamSpace::new(vec![0, 2], vec![-2.0; 2], vec![2.0; 2], [0.0; 5]).unwrap();
    let query = &q["query"];
    assert_eq!(query["iteration"], 1);
    for side in ["a", "b"] {
        let plan = &query[side];
        let xi: Vec<f64> = serde_json::from_value(plan["xi"].clone()).unwrap();
        assert_eq!(xi.len(), 2);
        let theta: Vec<f64> = serde_json::from_value(plan["theta"].clone()).unwrap();
        assert_eq!(theta, vec![xi[0], 0.0, xi[1], 0.0, 0.0]);
        assert!(plan["error"].is_null());
        let t = &plan["trajectory"];
        let len = |v: &Value| v.as_array().unwrap().len();
        assert_eq!(len(&t["velocity"]["s"]), n);
        assert_eq!(len(&t["velocity"]["v"]), n);
        for k in ["s", "a_x", "a_y"] {
            assert_eq!(len(&t["acceleration"][k]), n - 1);
        }
        assert_eq!(len(&t["gg"]["a_x_norm"]), n - 1);
        assert_eq!(len(&t["gg"]["a_y_norm"]), n - 1);

        let traj = PlanCache::disabled().plan(&planner, &track, &space.params(&xi).unwrap()).unwrap();
        let total: f64 = (0..traj.horizon()).map(|k| traj.travel_time(k).unwrap()).sum();
        let lap = t["lap_time"].as_f64().unwrap();
        assert!((lap - total).abs() <= 1e-9 * total, "{lap} vs {total}");
        let v: Vec<f64> = serde_json::from_value(t["velocity"]["v"].clone()).unwrap();
        assert_eq!(v, traj.speeds());
    }
}

#[tokio::test]
async fn answering_to_the_end() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), false);
    let id = create(&app, &session_body(dir.path(), "standard", 2)).await;
    let pref = format!("/sessions/{id}/preference");

    let q1 = wait_query(&app, &id).await;
    let (status, v) = post(&app, &pref, &json!({"choice": "c"})).await;
    assert_error(status, &v, StatusCode::UNPROCESSABLE_ENTITY, "invalid_choice");
    let (status, v) = call(&app, "POST", &pref, Some(b"choice=a".to_vec())).await;
    assert_error(status, &v, StatusCode::BAD_REQUEST, "bad_request");
    let (status, v) = post(&app, &pref, &json!({"choice": "a", "iteration": 2})).await;
    assert_error(status, &v, StatusCode::CONFLICT, "conflict");

    let (status, v) = post(&app, &pref, &json!({"choice": "b", "iteration": 1})).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!((v["status"].as_str(), v["iteration"].as_u64()), (Some("computing"), Some(1)));
    // a second submission of the same answer is refused while computing or
    // once the next query is pending
    let (status, v) = post(&app, &pref, &json!({"choice": "b", "iteration": 1})).await;
    assert_error(status, &v, StatusCode::CONFLICT, "conflict");

    let q2 = wait_query(&app, &id).await;
    assert_eq!(q2["status"], "awaiting_answer");
    assert_eq!(q2["query"]["iteration"], 2);
    let (status, v) = post(&app, &pref, &json!({"choice": "a"})).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["status"], "finished");
    assert_eq!(v["iteration"], 2);
    assert!(v["incumbent"]["trajectory"]["lap_time"].as_f64().unwrap() > 0.0);

    let (status, again) = post(&app, &pref, &json!({"choice": "a"})).await;
    assert_error(status, &again, StatusCode::CONFLICT, "conflict");
    let q3 = wait_query(&app, &id).await;
    assert_eq!(q3["status"], "finished");
    assert!(q3["query"].is_null());

    let (status, r) = get(&app, &format!("/sessions/{id}/result")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(r["status"], "finished");
    assert_eq!(r["incumbent"], v["incumbent"]);
    let history = r["history"].as_array().unwrap();
    assert_eq!(history.len(), 2);
    for (h, (q, choice)) in history.iter().zip([(&q1, "b"), (&q2, "a")]) {
        assert_eq!(h["a"], q["query"]["a"]["xi"]);
        assert_eq!(h["b"], q["query"]["b"]["xi"]);
        assert_eq!(h["choice"], choice);
    }
}

#[tokio::test]
async fn result_before_the_end_reports_the_current_incumbent() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), false);
    let id = create(&app, &session_body(dir.path(), "standard", 3)).await;
    wait_query(&app, &id).await;
    let (status, r) = get(&app, &format!("/sessions/{id}/result")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(r["status"], "awaiting_answer");
    assert_eq!(r["iteration"], 0);
    assert!(r["incumbent"]["xi"].is_array());
    // reading the result does not disturb the pending query
    assert_eq!(wait_query(&app, &id).await["status"], "awaiting_answer");
}

#[tokio::test]
async fn concurrent_sessions_are_independent() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), false);
    let body = session_body(dir.path(), "standard", 1);
    let (a, b, c) = tokio::join!(create(&app, &body), create(&app, &body), create(&app, &body));
    assert!(a != b && b != c && a != c);
    let (qa, qb) = (wait_query(&app, &a).await, wait_query(&app, &b).await);
    // same configuration and seed give the same first query
    assert_eq!(qa["query"], qb["query"]);
    let (status, _) = post(&app, &format!("/sessions/{a}/preference"), &json!({"choice": "a"})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(wait_query(&app, &a).await["status"], "finished");
    assert_eq!(wait_query(&app, &b).await["status"], "awaiting_answer");
    assert_eq!(wait_query(&app, &c).await["status"], "awaiting_answer");
}

#[tokio::test]
async fn prior_session_from_a_dataset_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut d = PreferenceDataset::new(2);
    d.add_pair(vec![0.0, -1.0], vec![2.0, 2.0], true, Source::Sim).unwrap();
    d.add_pair(vec![0.0, -1.0], vec![-2.0, 2.0], true, Source::Sim).unwrap();
    let path = dir.path().join("prior.csv");
    d.write_file(&path).unwrap();
    let app = app(dir.path(), false);
    let mut body = session_body(dir.path(), "prior", 1);
    body["prior_dataset"] = json!(path);
    let id = create(&app, &body).await;
    let q = wait_query(&app, &id).await;
    assert_eq!(q["status"], "awaiting_answer");
    assert_eq!(q["query"]["iteration"], 1);

    // a dataset of the wrong dimension is rejected
    let wrong = dir.path().join("wrong.csv");
    let mut d3 = PreferenceDataset::new(3);
    d3.add_pair(vec![0.0; 3], vec![1.0; 3], true, Source::Sim).unwrap();
    d3.write_file(&wrong).unwrap();
    body["prior_dataset"] = json!(wrong);
    let (status, v) = post(&app, "/sessions", &body).await;
    assert_error(status, &v, StatusCode::BAD_REQUEST, "invalid_config");
}

#[tokio::test]
async fn journal_replay_resumes_with_the_same_proposals() {
    let dir = tempfile::tempdir().unwrap();
    let body = session_body(dir.path(), "standard", 3);
    let first = app(dir.path(), true);
    let id = create(&first, &body).await;
    let done = create(&first, &session_body(dir.path(), "standard", 1)).await;
    wait_query(&first, &id).await;
    let (status, _) = post(&first, &format!("/sessions/{id}/preference"), &json!({"choice": "b"})).await;
    assert_eq!(status, StatusCode::OK);
    let q2 = wait_query(&first, &id).await;
    wait_query(&first, &done).await;
    let (_, fin) = post(&first, &format!("/sessions/{done}/preference"), &json!({"choice": "a"})).await;
    assert_eq!(fin["status"], "finished");
    let (_, r1) = get(&first, &format!("/sessions/{id}/result")).await;
    drop(first);

    let journal = std::fs::read_to_string(dir.path().join("journal").join(format!("{id}.jsonl"))).unwrap();
    let kinds: Vec<String> = journal
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["kind"].as_str().unwrap().to_owned())
        .collect();
    assert_eq!(kinds, ["create", "answer"]);

    let dir_path = dir.path().to_path_buf();
    let second = tokio::task::spawn_blocking(move || app(&dir_path, true)).await.unwrap();
    let resumed = wait_query(&second, &id).await;
    assert_eq!(resumed, q2);
    let (_, r2) = get(&second, &format!("/sessions/{id}/result")).await;
    assert_eq!(r2, r1);
    let (_, fin2) = get(&second, &format!("/sessions/{done}/result")).await;
    assert_eq!(fin2["status"], "finished");
    assert_eq!(fin2["incumbent"], fin["incumbent"]);

    // the resumed session keeps going
    let (status, v) = post(&second, &format!("/sessions/{id}/preference"), &json!({"choice": "a", "iteration": 2})).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(wait_query(&second, &id).await["query"]["iteration"], 3);
}

#[test]
fn engine_stores_answers_toward_the_chosen_side() {
    let dir = tempfile::tempdir().unwrap();
    let cfg: SessionConfig = serde_json::from_value(session_body(dir.path(), "standard", 2)).unwrap();
    assert_eq!(cfg.mode, Mode::Standard);
    let cache = PlanCache::new(dir.path().join("cache"));
    let mut engine = SessionEngine::new(cfg.resolve(&cache).unwrap(), cache).unwrap();
    let q = engine.propose().unwrap();
    engine.answer(&q.a.xi, &q.b.xi, Choice::B).unwrap();
    let d = engine.state().dataset();
    let c = d.comparisons().last().unwrap();
    assert_eq!(d.inputs()[c.winner], q.b.xi);
    assert_eq!(d.inputs()[c.loser], q.a.xi);
    assert_eq!(c.source, Source::Human);
    assert_eq!(engine.iteration(), 1);
    assert_eq!(engine.propose().unwrap().iteration, 2);
}
