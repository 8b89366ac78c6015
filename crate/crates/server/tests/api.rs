use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use serde_json::{json, Value};
use tower::ServiceExt;

use veilmod_core::config::ExperimentConfig;
use veilmod_core::corpus::{Category, Realism};
use veilmod_core::eventlog::{read_log, LogEvent};
use veilmod_core::experiment::{ExperimentState, RevealKind, RevealSource};
use veilmod_core::fixture::write_corpus;
use veilmod_core::raster::RasterImage;
use veilmod_core::report::{build_report, ReportFormat};
use veilmod_core::survey::Battery;
use veilmod_server::{AppState, ManualClock, SeededTokens, ServerOptions};

const ADMIN: &str = "admin-secret";
const T0: u64 = 1_000_000;

struct Harness {
    _dir: tempfile::TempDir,
    config: ExperimentConfig,
    clock: Arc<ManualClock>,
    app: AppState,
}

struct Reply {
    status: StatusCode,
    headers: axum::http::HeaderMap,
    body: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or(Value::Null)
    }
}

fn config_for(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new("exp1", dir.join("corpus"), dir.join("logs"));
    cfg.admin_token = Some(ADMIN.into());
    cfg.tasks_per_session = 3;
    cfg.region_max_radius = 16;
    cfg.session_ttl_secs = 600;
    cfg.fsync = false;
    cfg
}

fn open(config: ExperimentConfig, clock: Arc<ManualClock>) -> AppState {
    let options = ServerOptions {
        clock: clock.clone(),
        tokens: Arc::new(SeededTokens::new(9)),
    };
    AppState::open(config, options).unwrap().0
}

fn harness() -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let cells: Vec<_> = Category::ALL
        .iter()
        .flat_map(|c| [(*c, Realism::Realistic, 2), (*c, Realism::Synthetic, 2)])
        .collect();
    write_corpus(&dir.path().join("corpus"), &cells).unwrap();
    let config = config_for(dir.path());
    let clock = Arc::new(ManualClock::new(T0));
    let app = open(config.clone(), clock.clone());
    Harness {
        _dir: dir,
        config,
        clock,
        app,
    }
}

impl Harness {
    async fn call(&self, method: Method, uri: &str, token: Option<&str>, body: Option<Value>) -> Reply {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(t) = token {
            req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
        }
        let req = match body {
            Some(b) => req
                .header(header::CONTENT_TYPE, "application/json")
                .body(Body::from(b.to_string())),
            None => req.body(Body::empty()),
        }
        .unwrap();
        let resp = self.app.router().oneshot(req).await.unwrap();
        let status = resp.status();
        let headers = resp.headers().clone();
        let body = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec();
        Reply { status, headers, body }
    }

    async fn get(&self, uri: &str, token: Option<&str>) -> Reply {
        self.call(Method::GET, uri, token, None).await
    }

    async fn post(&self, uri: &str, token: Option<&str>, body: Value) -> Reply {
        self.call(Method::POST, uri, token, Some(body)).await
    }

    /// Starts a session and returns its token.
    async fn start(&self, worker: &str, stage: u8) -> String {
        let r = self
            .post("/api/sessions", None, json!({"worker_id": worker, "stage_id": stage}))
            .await;
        assert_eq!(r.status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&r.body));
        r.json()["token"].as_str().unwrap().to_string()
    }

    async fn next(&self, token: &str) -> Value {
        let r = self.get("/api/tasks/next", Some(token)).await;
        assert_eq!(r.status, StatusCode::OK);
        r.json()
    }

    async fn answer(&self, token: &str, image_id: &str) -> Reply {
        self.post(
            "/api/responses",
            Some(token),
            json!({"image_id": image_id, "q1_category": "safe", "q2_realistic": true, "q3_approve": true}),
        )
        .await
    }

    fn records(&self) -> Vec<veilmod_core::eventlog::LogRecord> {
        read_log(&self.config.log_file()).unwrap().records
    }
}

fn survey() -> Value {
    json!({
        "demographics": {"age_band": "25-34", "gender": "prefer not to say", "race_ethnicity": ""},
        "spane_items": vec![3; 12],
        "panas_items": vec![4; 10],
        "exhaustion_items": vec![2; 6],
        "tam_peou_items": vec![5; 6],
        "tam_pu_items": vec![6; 6]
    })
}

#[tokio::test]
async fn full_session_lifecycle() {
    let h = harness();
    let created = h
        .post("/api/sessions", None, json!({"worker_id": "w1", "stage_id": 1}))
        .await;
    assert_eq!(created.status, StatusCode::CREATED);
    let body = created.json();
    assert_eq!(body["session_id"], "s00001");
    assert_eq!(body["task_count"], 3);
    assert_eq!(body["stage"]["sigma"], 0.0);
    let token = body["token"].as_str().unwrap().to_string();
    assert_eq!(token.len(), 64);

    // The log keeps only a hash of the token.
    let log = std::fs::read_to_string(h.config.log_file()).unwrap();
    assert!(!log.contains(&token));

    let mut seen = Vec::new();
    for _ in 0..3 {
        let task = h.next(&token).await;
        assert!(task.get("category").is_none() && task.get("realism").is_none());
        let id = task["image_id"].as_str().unwrap().to_string();
        let img = h.get(task["image_url"].as_str().unwrap(), Some(&token)).await;
        assert_eq!(img.status, StatusCode::OK);
        assert_eq!(img.headers[header::CONTENT_TYPE], "image/jpeg");
        let decoded = RasterImage::decode(&img.body).unwrap();
        assert_eq!(decoded.width() as u64, task["width"].as_u64().unwrap());
        h.clock.advance(1500);
        let r = h.answer(&token, &id).await;
        assert_eq!(r.status, StatusCode::CREATED);
        seen.push(id);
    }
    assert_eq!(h.get("/api/tasks/next", Some(&token)).await.status, StatusCode::NO_CONTENT);
    seen.sort();
    seen.dedup();
    assert_eq!(seen.len(), 3);

    assert_eq!(h.answer(&token, &seen[0]).await.status, StatusCode::CONFLICT);
    assert_eq!(h.post("/api/surveys", Some(&token), survey()).await.status, StatusCode::CREATED);
    assert_eq!(h.post("/api/surveys", Some(&token), survey()).await.status, StatusCode::CONFLICT);

    let records = h.records();
    for (i, r) in records.iter().enumerate() {
        assert_eq!(r.seq, i as u64 + 1);
    }
    assert!(matches!(records.last().unwrap().event, LogEvent::SessionCompleted {}));
    let latencies: Vec<u64> = records
        .iter()
        .filter_map(|r| match &r.event {
            LogEvent::Response(resp) => Some(resp.latency_ms),
            _ => None,
        })
        .collect();
    assert_eq!(latencies, vec![1500, 1500, 1500]);
}

#[tokio::test]
async fn auth_and_body_errors() {
    let h = harness();
    assert_eq!(h.get("/api/tasks/next", None).await.status, StatusCode::UNAUTHORIZED);
    assert_eq!(h.get("/api/tasks/next", Some("nope")).await.status, StatusCode::UNAUTHORIZED);
    let bad = h
        .call(Method::POST, "/api/sessions", None, None)
        .await;
    assert_eq!(bad.status, StatusCode::BAD_REQUEST);
    assert!(bad.json()["error"].as_str().unwrap().contains("malformed"));
    let bad_stage = h
        .post("/api/sessions", None, json!({"worker_id": "w", "stage_id": 9}))
        .await;
    assert_eq!(bad_stage.status, StatusCode::BAD_REQUEST);

    let token = h.start("w1", 2).await;
    // Between-subjects: a worker keeps one stage.
    let again = h
        .post("/api/sessions", None, json!({"worker_id": "w1", "stage_id": 3}))
        .await;
    assert_eq!(again.status, StatusCode::CONFLICT);

    let task = h.next(&token).await;
    let id = task["image_id"].as_str().unwrap();
    let other = h
        .post(
            "/api/responses",
            Some(&token),
            json!({"image_id": id, "q1_category": "other", "q2_realistic": false, "q3_approve": false}),
        )
        .await;
    assert_eq!(other.status, StatusCode::BAD_REQUEST);
    let garbage = h
        .call(Method::POST, "/api/responses", Some(&token), Some(json!({"image_id": 3})))
        .await;
    assert_eq!(garbage.status, StatusCode::BAD_REQUEST);
    // Survey before all answers.
    assert_eq!(h.post("/api/surveys", Some(&token), survey()).await.status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn rendition_gating_by_stage() {
    let h = harness();
    for (stage, allowed, denied) in [
        (1u8, vec!["0"], vec!["7", "14"]),
        (2, vec!["7"], vec!["0", "14", "6.9"]),
        (3, vec!["14"], vec!["0", "7"]),
        (4, vec!["14"], vec!["0", "12"]),
        (5, vec!["14"], vec!["0", "2"]),
    ] {
        let token = h.start(&format!("w{stage}"), stage).await;
        let task = h.next(&token).await;
        let id = task["image_id"].as_str().unwrap();
        for s in allowed {
            let r = h.get(&format!("/api/images/{id}?sigma={s}"), Some(&token)).await;
            assert_eq!(r.status, StatusCode::OK, "stage {stage} sigma {s}");
        }
        for s in denied {
            let r = h.get(&format!("/api/images/{id}?sigma={s}"), Some(&token)).await;
            assert_eq!(r.status, StatusCode::FORBIDDEN, "stage {stage} sigma {s}");
            assert!(r.body.starts_with(b"{"));
        }
        let default = h.get(&format!("/api/images/{id}"), Some(&token)).await;
        assert_eq!(default.status, StatusCode::OK);
        if stage <= 3 {
            let tile = h.get(&format!("/api/images/{id}/tile?cx=5&cy=5&r=4"), Some(&token)).await;
            assert_eq!(tile.status, StatusCode::FORBIDDEN);
        }
        assert_eq!(
            h.get(&format!("/api/images/{id}?sigma=abc"), Some(&token)).await.status,
            StatusCode::BAD_REQUEST
        );
    }
    // An image outside the caller's task list.
    let token = h.start("w9", 1).await;
    let mine: Vec<String> = h.app.snapshot().sessions["s00006"].session.task_list.clone();
    let foreign = h
        .app
        .corpus()
        .records()
        .iter()
        .find(|r| !mine.contains(&r.id))
        .unwrap()
        .id
        .clone();
    let r = h.get(&format!("/api/images/{foreign}?sigma=0"), Some(&token)).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    // No forbidden request left a trace in the log.
    assert!(h.records().iter().all(|r| !matches!(r.event, LogEvent::Reveal(_))));
}

#[tokio::test]
async fn renditions_are_cached_on_disk() {
    let h = harness();
    let token = h.start("w", 2).await;
    let id = h.next(&token).await["image_id"].as_str().unwrap().to_string();
    let path = h.app.cache().path_for(&id, 7.0);
    assert!(!path.exists());
    let a = h.get(&format!("/api/images/{id}?sigma=7"), Some(&token)).await;
    assert!(path.exists());
    let b = h.get(&format!("/api/images/{id}?sigma=7.0"), Some(&token)).await;
    assert_eq!(a.body, b.body);
    assert_eq!(std::fs::read(&path).unwrap(), a.body);
}

#[tokio::test]
async fn click_tiles_are_logged_before_release() {
    let h = harness();
    let token = h.start("w", 4).await;
    let task = h.next(&token).await;
    assert!(task["tile_url"].is_string());
    let id = task["image_id"].as_str().unwrap().to_string();

    let r = h.get(&format!("/api/images/{id}/tile?cx=10&cy=10&r=3"), Some(&token)).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.headers[header::CONTENT_TYPE], "image/png");
    let seq: u64 = r.headers["x-reveal-seq"].to_str().unwrap().parse().unwrap();
    let tile = RasterImage::decode(&r.body).unwrap();
    assert_eq!((tile.width(), tile.height(), tile.channels()), (7, 7, 4));
    let opaque = tile.pixels().chunks(4).filter(|p| p[3] == 255).count();
    assert_eq!(opaque, 29);

    let logged = h.records().into_iter().find(|r| r.seq == seq).unwrap();
    match logged.event {
        LogEvent::Reveal(ev) => {
            assert_eq!(ev.kind, RevealKind::ClickReveal);
            assert_eq!(ev.source, RevealSource::Server);
            assert_eq!(ev.image_id, id);
        }
        other => panic!("unexpected {other:?}"),
    }

    let rect = h.get(&format!("/api/images/{id}/tile?x=2&y=3&w=8&h=5"), Some(&token)).await;
    assert_eq!(rect.status, StatusCode::OK);
    let t = RasterImage::decode(&rect.body).unwrap();
    assert_eq!((t.width(), t.height()), (8, 5));

    for (q, status) in [
        ("cx=10&cy=10&r=17", StatusCode::PAYLOAD_TOO_LARGE),
        ("x=0&y=0&w=40&h=2", StatusCode::PAYLOAD_TOO_LARGE),
        ("cx=10&cy=10", StatusCode::BAD_REQUEST),
        ("cx=1&cy=1&r=2&w=3", StatusCode::BAD_REQUEST),
        ("", StatusCode::BAD_REQUEST),
        ("x=0&y=0&w=0&h=3", StatusCode::BAD_REQUEST),
        ("cx=-50&cy=-50&r=3", StatusCode::BAD_REQUEST),
        ("cx=a&cy=1&r=1", StatusCode::BAD_REQUEST),
    ] {
        let r = h.get(&format!("/api/images/{id}/tile?{q}"), Some(&token)).await;
        assert_eq!(r.status, status, "{q}");
    }

    // Unserved image: the tile is refused and nothing is logged.
    let before = h.records().len();
    let session = &h.app.snapshot().sessions["s00001"];
    let unserved = session.session.task_list.iter().find(|t| **t != id).unwrap().clone();
    let r = h.get(&format!("/api/images/{unserved}/tile?cx=5&cy=5&r=3"), Some(&token)).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert_eq!(h.records().len(), before);

    assert_eq!(h.answer(&token, &id).await.status, StatusCode::CREATED);
    let r = h.get(&format!("/api/images/{id}/tile?cx=5&cy=5&r=3"), Some(&token)).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn hover_reveals() {
    let h = harness();
    let token = h.start("w", 5).await;
    let id = h.next(&token).await["image_id"].as_str().unwrap().to_string();
    let end = json!({"image_id": id, "kind": "hover_end"});
    assert_eq!(h.post("/api/reveals", Some(&token), end.clone()).await.status, StatusCode::BAD_REQUEST);

    assert_eq!(h.get(&format!("/api/images/{id}/tile?cx=8&cy=8&r=4"), Some(&token)).await.status, StatusCode::OK);
    h.clock.advance(700);
    let r = h.post("/api/reveals", Some(&token), end.clone()).await;
    assert_eq!(r.status, StatusCode::CREATED);
    assert_eq!(r.json()["seqs"].as_array().unwrap().len(), 1);
    assert_eq!(h.post("/api/reveals", Some(&token), end).await.status, StatusCode::BAD_REQUEST);

    // A second hover_start while one is open closes the first implicitly.
    h.get(&format!("/api/images/{id}/tile?cx=8&cy=8&r=4"), Some(&token)).await;
    let r = h.get(&format!("/api/images/{id}/tile?cx=9&cy=8&r=4"), Some(&token)).await;
    assert_eq!(r.status, StatusCode::OK);
    let kinds: Vec<RevealKind> = h
        .records()
        .iter()
        .filter_map(|r| match &r.event {
            LogEvent::Reveal(e) => Some(e.kind),
            _ => None,
        })
        .collect();
    use RevealKind::*;
    assert_eq!(kinds, vec![HoverStart, HoverEnd, HoverStart, HoverEnd, HoverStart]);

    let click = json!({"image_id": id, "kind": "click_reveal", "region": {"shape": "circle", "center_x": 1, "center_y": 1, "radius": 2}});
    assert_eq!(h.post("/api/reveals", Some(&token), click).await.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn slider_levels_and_logging() {
    let h = harness();
    let token = h.start("w", 6).await;
    let id = h.next(&token).await["image_id"].as_str().unwrap().to_string();

    let r = h
        .post("/api/reveals", Some(&token), json!({"image_id": id, "kind": "slider_set", "sigma_value": 7.0}))
        .await;
    assert_eq!(r.status, StatusCode::CREATED);
    assert_eq!(r.json()["sigma_value"], 8.0);
    let n = h.records().len();
    // Fetching the level already recorded logs nothing further.
    assert_eq!(h.get(&format!("/api/images/{id}?sigma=8"), Some(&token)).await.status, StatusCode::OK);
    assert_eq!(h.records().len(), n);
    // A level change made only through the image fetch is logged by the server.
    assert_eq!(h.get(&format!("/api/images/{id}?sigma=0"), Some(&token)).await.status, StatusCode::OK);
    let last = h.records().pop().unwrap();
    match last.event {
        LogEvent::Reveal(ev) => {
            assert_eq!((ev.kind, ev.sigma_value, ev.source), (RevealKind::SliderSet, Some(0.0), RevealSource::Server));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(h.get(&format!("/api/images/{id}?sigma=5"), Some(&token)).await.status, StatusCode::FORBIDDEN);
    assert_eq!(
        h.post("/api/reveals", Some(&token), json!({"image_id": id, "kind": "slider_set", "sigma_value": 20.0}))
            .await
            .status,
        StatusCode::BAD_REQUEST
    );

    // Sharp renditions of an unopened or answered image are refused.
    let session = &h.app.snapshot().sessions["s00001"];
    let unopened = session.session.task_list.iter().find(|t| **t != id).unwrap().clone();
    assert_eq!(h.get(&format!("/api/images/{unopened}?sigma=0"), Some(&token)).await.status, StatusCode::CONFLICT);
    assert_eq!(h.get(&format!("/api/images/{unopened}?sigma=14"), Some(&token)).await.status, StatusCode::OK);
    assert_eq!(h.answer(&token, &id).await.status, StatusCode::CREATED);
    assert_eq!(h.get(&format!("/api/images/{id}?sigma=0"), Some(&token)).await.status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn sessions_expire() {
    let h = harness();
    let token = h.start("w", 3).await;
    h.next(&token).await;
    h.clock.advance(600_001);
    assert_eq!(h.get("/api/tasks/next", Some(&token)).await.status, StatusCode::GONE);
    let state = h.app.snapshot();
    let id = &state.sessions["s00001"].session.task_list[0];
    assert_eq!(h.get(&format!("/api/images/{id}"), Some(&token)).await.status, StatusCode::GONE);
    assert_eq!(h.answer(&token, id).await.status, StatusCode::GONE);
}

#[tokio::test]
async fn admin_report_access_and_content() {
    let h = harness();
    let url = "/api/admin/report?experiment=exp1&format=csv";
    assert_eq!(h.get(url, None).await.status, StatusCode::UNAUTHORIZED);
    let token = h.start("w", 2).await;
    assert_eq!(h.get(url, Some(&token)).await.status, StatusCode::FORBIDDEN);
    assert_eq!(
        h.get("/api/admin/report?experiment=other", Some(ADMIN)).await.status,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        h.get("/api/admin/report?experiment=exp1&format=xml", Some(ADMIN)).await.status,
        StatusCode::BAD_REQUEST
    );
    // No responses yet.
    assert_eq!(h.get(url, Some(ADMIN)).await.status, StatusCode::CONFLICT);

    for _ in 0..3 {
        let id = h.next(&token).await["image_id"].as_str().unwrap().to_string();
        h.clock.advance(2000);
        h.answer(&token, &id).await;
    }
    let live = h.get(url, Some(ADMIN)).await;
    assert_eq!(live.status, StatusCode::OK);
    assert!(live.headers[header::CONTENT_TYPE].to_str().unwrap().starts_with("text/csv"));
    let from_log = build_report(&ExperimentState::replay(&h.records()), &Battery::standard())
        .unwrap()
        .render(ReportFormat::Csv);
    assert_eq!(String::from_utf8(live.body).unwrap(), from_log);

    let json_report = h.get("/api/admin/report?experiment=exp1", Some(ADMIN)).await;
    assert_eq!(json_report.json()["stages"][0]["stage_id"], 2);
}

#[tokio::test]
async fn restart_replays_log_and_drops_torn_tail() {
    let h = harness();
    let token = h.start("w", 1).await;
    let id = h.next(&token).await["image_id"].as_str().unwrap().to_string();
    h.clock.advance(900);
    h.answer(&token, &id).await;
    let before = h.app.snapshot();
    let intact = std::fs::read(h.config.log_file()).unwrap();
    drop(h.app);

    let mut torn = intact.clone();
    torn.extend_from_slice(br#"{"seq":99,"at_ms":5,"session_id":"s00001","kind":"respo"#);
    std::fs::write(h.config.log_file(), &torn).unwrap();

    let options = ServerOptions {
        clock: h.clock.clone(),
        tokens: Arc::new(SeededTokens::new(9)),
    };
    let (app, summary) = AppState::open(h.config.clone(), options).unwrap();
    assert_eq!(summary.partial_records_skipped, 1);
    assert_eq!(summary.records_replayed, before.sessions["s00001"].activity.len() + 2);
    assert_eq!(app.snapshot(), before);
    assert_eq!(std::fs::read(h.config.log_file()).unwrap(), intact);

    let h2 = Harness { app, ..h };
    // The old token still authenticates and the session resumes.
    let next = h2.next(&token).await;
    assert_ne!(next["image_id"], id.as_str());
    let records = h2.records();
    assert_eq!(records.last().unwrap().seq, records.len() as u64);
}

#[tokio::test]
async fn instruments_and_health() {
    let h = harness();
    let r = h.get("/api/instruments", None).await;
    assert_eq!(r.status, StatusCode::OK);
    let b = r.json();
    assert_eq!(b["spane"]["items"].as_array().unwrap().len(), 12);
    assert_eq!(b["panas"]["scale_max"], 7);
    assert_eq!(h.get("/api/health", None).await.json()["experiment_id"], "exp1");
}
