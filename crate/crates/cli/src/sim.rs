//! Scripted workers that speak the wire protocol.
//!
//! Workers run one after another. In embedded mode the server's clock is a
//! [`ManualClock`] that moves only when a script pauses, so a fixed seed
//! yields byte-identical logs and traces. Against a remote server, pauses
//! are real sleeps scaled down by a speed-up factor and timing is not
//! reproducible.

use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Method, Request};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

use veilmod_core::corpus::Corpus;
use veilmod_core::experiment::{CategoryAnswer, ModerationResponse};
use veilmod_core::stage::RevealTool;
use veilmod_core::survey::{Battery, Demographics, Instrument, SurveyResponse};
use veilmod_server::wire::{image_url, url_escape, RevealLogged, SessionCreated, TaskPayload};
use veilmod_server::{AppState, ManualClock};

use crate::profile::AccuracyProfile;
use crate::trace::{body_digest, TraceEntry};
use crate::CliError;

/// Start of simulated time (2023-11-14T22:13:20Z).
pub const SIM_EPOCH_MS: u64 = 1_700_000_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub status: u16,
    pub content_type: Option<String>,
    pub reveal_seq: Option<u64>,
    pub sigma: Option<f64>,
    pub body: Vec<u8>,
}

pub trait Transport {
    fn send(
        &self,
        method: Method,
        uri: String,
        token: Option<String>,
        body: Option<Value>,
    ) -> impl Future<Output = Result<Reply, CliError>> + Send;

    /// Lets `ms` of (simulated or scaled real) time pass.
    fn pause(&self, ms: u64) -> impl Future<Output = ()> + Send;
}

fn header_str(h: &axum::http::HeaderMap, name: &str) -> Option<String> {
    h.get(name).and_then(|v| v.to_str().ok()).map(str::to_string)
}

/// In-process server driven through its router.
pub struct Embedded {
    router: axum::Router,
    clock: Arc<ManualClock>,
}

impl Embedded {
    pub fn new(app: &AppState, clock: Arc<ManualClock>) -> Self {
        Self {
            router: app.router(),
            clock,
        }
    }
}

impl Transport for Embedded {
    fn send(
        &self,
        method: Method,
        uri: String,
        token: Option<String>,
        body: Option<Value>,
    ) -> impl Future<Output = Result<Reply, CliError>> + Send {
        let router = self.router.clone();
        async move {
            let mut req = Request::builder().method(method).uri(&uri);
            if let Some(t) = token {
                req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
            }
            let req = match body {
                Some(b) => req
                    .header(header::CONTENT_TYPE, "application/json")
                    .body(Body::from(b.to_string())),
                None => req.body(Body::empty()),
            }
            .map_err(|e| CliError::other(format!("building request {uri}: {e}")))?;
            let resp = router
                .oneshot(req)
                .await
                .map_err(|e| CliError::other(format!("{uri}: {e}")))?;
            let status = resp.status().as_u16();
            let headers = resp.headers().clone();
            let body = axum::body::to_bytes(resp.into_body(), usize::MAX)
                .await
                .map_err(|e| CliError::other(format!("{uri}: reading body: {e}")))?;
            Ok(Reply {
                status,
                content_type: header_str(&headers, "content-type"),
                reveal_seq: header_str(&headers, "x-reveal-seq").and_then(|v| v.parse().ok()),
                sigma: header_str(&headers, "x-sigma").and_then(|v| v.parse().ok()),
                body: body.to_vec(),
            })
        }
    }

    fn pause(&self, ms: u64) -> impl Future<Output = ()> + Send {
        self.clock.advance(ms);
        std::future::ready(())
    }
}

/// A server reached over HTTP.
pub struct Remote {
    base: String,
    client: reqwest::Client,
    speedup: u64,
}

impl Remote {
    pub fn new(base: &str, speedup: u64) -> Self {
        Self {
            base: base.trim_end_matches('/').to_string(),
            client: reqwest::Client::new(),
            speedup: speedup.max(1),
        }
    }
}

impl Transport for Remote {
    fn send(
        &self,
        method: Method,
        uri: String,
        token: Option<String>,
        body: Option<Value>,
    ) -> impl Future<Output = Result<Reply, CliError>> + Send {
        let url = format!("{}{uri}", self.base);
        let mut req = self
            .client
            .request(reqwest::Method::from_bytes(method.as_str().as_bytes()).expect("valid method"), &url);
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        if let Some(b) = body {
            req = req.header("content-type", "application/json").body(b.to_string());
        }
        async move {
            let resp = req
                .send()
                .await
                .map_err(|e| CliError::other(format!("{url}: {e}")))?;
            let status = resp.status().as_u16();
            let h = |name: &str| resp.headers().get(name).and_then(|v| v.to_str().ok()).map(str::to_string);
            let (content_type, reveal_seq, sigma) = (
                h("content-type"),
                h("x-reveal-seq").and_then(|v| v.parse().ok()),
                h("x-sigma").and_then(|v| v.parse().ok()),
            );
            let body = resp
                .bytes()
                .await
                .map_err(|e| CliError::other(format!("{url}: reading body: {e}")))?;
            Ok(Reply {
                status,
                content_type,
                reveal_seq,
                sigma,
                body: body.to_vec(),
            })
        }
    }

    fn pause(&self, ms: u64) -> impl Future<Output = ()> + Send {
        tokio::time::sleep(Duration::from_millis(ms / self.speedup))
    }
}

#[derive(Debug, Clone)]
pub struct SimSettings {
    pub workers: usize,
    pub seed: u64,
    pub stages: Vec<u8>,
    pub experiment_id: String,
    pub admin_token: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerRun {
    pub worker_id: String,
    pub stage_id: u8,
    pub session_id: String,
    pub responses: usize,
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub workers: Vec<WorkerRun>,
    pub trace: Vec<TraceEntry>,
    /// Admin report (table format) fetched from the server after the run.
    pub live_report: String,
}

struct Ctx<'a, T> {
    transport: &'a T,
    trace: Vec<TraceEntry>,
    worker_id: String,
    stage_id: u8,
    session_id: Option<String>,
}

impl<T: Transport> Ctx<'_, T> {
    async fn call(&mut self, method: Method, uri: String, token: Option<&str>, body: Option<Value>, probe: bool) -> Result<Reply, CliError> {
        let reply = self
            .transport
            .send(method.clone(), uri.clone(), token.map(str::to_string), body)
            .await?;
        self.trace.push(TraceEntry {
            worker_id: self.worker_id.clone(),
            stage_id: self.stage_id,
            session_id: self.session_id.clone(),
            method: method.to_string(),
            uri,
            status: reply.status,
            content_type: reply.content_type.clone(),
            body_len: reply.body.len(),
            body_sha256: body_digest(&reply.body),
            reveal_seq: reply.reveal_seq,
            sigma: reply.sigma,
            probe,
        });
        Ok(reply)
    }

    /// As [`Ctx::call`], failing unless the status matches.
    async fn expect(&mut self, want: u16, method: Method, uri: String, token: Option<&str>, body: Option<Value>) -> Result<Reply, CliError> {
        let what = format!("{method} {uri}");
        let r = self.call(method, uri, token, body, false).await?;
        if r.status != want {
            return Err(CliError::other(format!(
                "{}: {what} returned {} (expected {want}): {}",
                self.worker_id,
                r.status,
                String::from_utf8_lossy(&r.body)
            )));
        }
        Ok(r)
    }
}

fn parse<T: serde::de::DeserializeOwned>(r: &Reply, what: &str) -> Result<T, CliError> {
    serde_json::from_slice(&r.body).map_err(|e| CliError::other(format!("{what}: unexpected body: {e}")))
}

fn between<R: Rng>(rng: &mut R, range: [u64; 2]) -> u64 {
    rng.random_range(range[0]..=range[1])
}

fn answer_items(instrument: &Instrument, rng: &mut impl Rng) -> Vec<u8> {
    (0..instrument.items.len())
        .map(|_| rng.random_range(instrument.scale_min..=instrument.scale_max))
        .collect()
}

/// Runs `settings.workers` scripted workers. Worker `i` (0-based) is
/// `sim-wNNN` on stage `stages[i % stages.len()]` with its own RNG stream.
pub async fn run_simulation<T: Transport>(
    transport: &T,
    corpus: &Corpus,
    battery: &Battery,
    profile: &AccuracyProfile,
    settings: &SimSettings,
) -> Result<SimOutcome, CliError> {
    if settings.stages.is_empty() {
        return Err(CliError::validation("no stages to simulate"));
    }
    let mut trace = Vec::new();
    let mut workers = Vec::new();
    for i in 0..settings.workers {
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
        rng.set_stream(i as u64 + 1);
        let mut ctx = Ctx {
            transport,
            trace: Vec::new(),
            worker_id: format!("sim-w{:03}", i + 1),
            stage_id: settings.stages[i % settings.stages.len()],
            session_id: None,
        };
        let run = run_worker(&mut ctx, corpus, battery, profile, &mut rng).await;
        trace.append(&mut ctx.trace);
        workers.push(run?);
        transport.pause(1000).await;
    }

    let mut ctx = Ctx {
        transport,
        trace: Vec::new(),
        worker_id: "admin".into(),
        stage_id: 0,
        session_id: None,
    };
    let uri = format!("/api/admin/report?experiment={}&format=table", url_escape(&settings.experiment_id));
    let r = ctx.expect(200, Method::GET, uri, Some(&settings.admin_token), None).await?;
    trace.append(&mut ctx.trace);
    Ok(SimOutcome {
        workers,
        trace,
        live_report: String::from_utf8_lossy(&r.body).into_owned(),
    })
}

async fn run_worker<T: Transport>(
    ctx: &mut Ctx<'_, T>,
    corpus: &Corpus,
    battery: &Battery,
    profile: &AccuracyProfile,
    rng: &mut ChaCha8Rng,
) -> Result<WorkerRun, CliError> {
    let b = &profile.behavior;
    let model = profile.model(ctx.stage_id);
    let created = ctx
        .expect(
            201,
            Method::POST,
            "/api/sessions".into(),
            None,
            Some(json!({"worker_id": ctx.worker_id, "stage_id": ctx.stage_id})),
        )
        .await?;
    let created: SessionCreated = parse(&created, "session")?;
    ctx.session_id = Some(created.session_id.clone());
    let token = created.token.as_str();
    let stage = created.stage.clone();
    let mut responses = 0;

    loop {
        let r = ctx.call(Method::GET, "/api/tasks/next".into(), Some(token), None, false).await?;
        if r.status == 204 {
            break;
        }
        if r.status != 200 {
            return Err(CliError::other(format!("{}: next task returned {}", ctx.worker_id, r.status)));
        }
        let task: TaskPayload = parse(&r, "task")?;
        let id = task.image_id.clone();
        ctx.expect(200, Method::GET, task.image_url.clone(), Some(token), None).await?;

        if b.probes && (2..=5).contains(&stage.stage_id) {
            ctx.call(Method::GET, image_url(&id, 0.0), Some(token), None, true).await?;
            if !stage.permits_tiles() {
                let uri = format!("/api/images/{}/tile?cx=0&cy=0&r=4", url_escape(&id));
                ctx.call(Method::GET, uri, Some(token), None, true).await?;
            }
        }
        ctx.transport.pause(between(rng, b.view_ms)).await;

        let tile_at = |rng: &mut ChaCha8Rng| {
            let cx = rng.random_range(0..task.width);
            let cy = rng.random_range(0..task.height);
            format!(
                "/api/images/{}/tile?cx={cx}&cy={cy}&r={}",
                url_escape(&id),
                task.region_radius.min(task.region_max_radius)
            )
        };
        match stage.reveal_tool {
            RevealTool::None => {}
            RevealTool::Click => {
                for _ in 0..rng.random_range(b.clicks[0]..=b.clicks[1]) {
                    let uri = tile_at(rng);
                    ctx.expect(200, Method::GET, uri, Some(token), None).await?;
                    ctx.transport.pause(between(rng, b.step_ms)).await;
                }
            }
            RevealTool::Hover => {
                for _ in 0..rng.random_range(b.hovers[0]..=b.hovers[1]) {
                    let uri = tile_at(rng);
                    ctx.expect(200, Method::GET, uri, Some(token), None).await?;
                    ctx.transport.pause(between(rng, b.hover_ms)).await;
                    let end = json!({"image_id": id, "kind": "hover_end"});
                    ctx.expect(201, Method::POST, "/api/reveals".into(), Some(token), Some(end)).await?;
                    ctx.transport.pause(between(rng, b.step_ms)).await;
                }
            }
            RevealTool::Slider => {
                let stop = stage.snap_to_level(rng.random_range(b.slider_stop[0]..=b.slider_stop[1]));
                let levels = stage.slider_levels.clone().unwrap_or_default();
                for level in levels.into_iter().filter(|l| *l < stage.sigma && *l >= stop) {
                    let set = json!({"image_id": id, "kind": "slider_set", "sigma_value": level});
                    let r = ctx.expect(201, Method::POST, "/api/reveals".into(), Some(token), Some(set)).await?;
                    let logged: RevealLogged = parse(&r, "reveal")?;
                    let snapped = logged.sigma_value.unwrap_or(level);
                    ctx.expect(200, Method::GET, image_url(&id, snapped), Some(token), None).await?;
                    ctx.transport.pause(between(rng, b.step_ms)).await;
                }
            }
        }

        let record = corpus
            .get(&id)
            .ok_or_else(|| CliError::validation(format!("served image {id} is not in the local corpus")))?;
        let q1 = model.sample_q1(record.category, rng);
        let response = ModerationResponse {
            image_id: id.clone(),
            q1_category: q1,
            q1_other_text: (q1 == CategoryAnswer::Other).then(|| "unclear content".to_string()),
            q2_realistic: model.sample_q2(record.realism.is_realistic(), rng),
            q3_approve: model.sample_q3(record.category, rng),
            q4_rationale: rng.random_bool(b.rationale_rate).then(|| "scripted rationale".to_string()),
            latency_ms: 0,
        };
        let body = serde_json::to_value(&response).expect("responses serialize");
        ctx.expect(201, Method::POST, "/api/responses".into(), Some(token), Some(body)).await?;
        responses += 1;
        ctx.transport.pause(between(rng, b.step_ms)).await;
    }

    let survey = SurveyResponse {
        session_id: String::new(),
        demographics: Demographics {
            age_band: "prefer not to say".into(),
            gender: "prefer not to say".into(),
            race_ethnicity: "prefer not to say".into(),
        },
        spane_items: answer_items(&battery.spane, rng),
        panas_items: answer_items(&battery.panas, rng),
        exhaustion_items: answer_items(&battery.exhaustion, rng),
        tam_peou_items: answer_items(&battery.tam_peou, rng),
        tam_pu_items: answer_items(&battery.tam_pu, rng),
    };
    let body = serde_json::to_value(&survey).expect("surveys serialize");
    ctx.expect(201, Method::POST, "/api/surveys".into(), Some(token), Some(body)).await?;
    Ok(WorkerRun {
        worker_id: ctx.worker_id.clone(),
        stage_id: ctx.stage_id,
        session_id: created.session_id,
        responses,
    })
}
