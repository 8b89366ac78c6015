//! Moderation sessions: task assignment, response and reveal validation, and
//! the in-memory index rebuilt from the event log.
//!
//! All state changes go through [`Experiment`], which validates a command
//! against the current [`ExperimentState`], appends the resulting event to a
//! [`Recorder`] and only then applies it. Replaying a log through
//! [`ExperimentState::apply`] reconstructs the same state.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Category, Corpus, GoldLabels, Realism};
use crate::eventlog::{EventLogWriter, LogError, LogEvent, LogRecord};
use crate::region::RevealRegion;
use crate::stage::{make_stage_config_with, same_sigma, RevealTool, StageConfig, DEFAULT_SLIDER_LEVELS};
use crate::survey::{Battery, SurveyResponse};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("state error: {0}")]
    State(String),
    #[error("session {0} has expired")]
    Expired(String),
    #[error(transparent)]
    Log(#[from] LogError),
}

/// Answer to "which category best describes this image".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoryAnswer {
    SexNudity,
    Graphic,
    Safe,
    Other,
}

impl CategoryAnswer {
    pub const ALL: [CategoryAnswer; 4] = [
        CategoryAnswer::SexNudity,
        CategoryAnswer::Graphic,
        CategoryAnswer::Safe,
        CategoryAnswer::Other,
    ];

    pub fn index(&self) -> usize {
        *self as usize
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            CategoryAnswer::SexNudity => "sex_nudity",
            CategoryAnswer::Graphic => "graphic",
            CategoryAnswer::Safe => "safe",
            CategoryAnswer::Other => "other",
        }
    }

    /// `other` never matches a gold category.
    pub fn matches(&self, gold: Category) -> bool {
        self.index() == gold.index()
    }
}

impl From<Category> for CategoryAnswer {
    fn from(c: Category) -> Self {
        match c {
            Category::SexNudity => CategoryAnswer::SexNudity,
            Category::Graphic => CategoryAnswer::Graphic,
            Category::Safe => CategoryAnswer::Safe,
        }
    }
}

/// Answers to the four moderation questions for one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModerationResponse {
    pub image_id: String,
    pub q1_category: CategoryAnswer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q1_other_text: Option<String>,
    pub q2_realistic: bool,
    pub q3_approve: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q4_rationale: Option<String>,
    /// Server-measured, from first serve to receipt. Client values are overwritten.
    #[serde(default)]
    pub latency_ms: u64,
}

impl ModerationResponse {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let has_text = self
            .q1_other_text
            .as_deref()
            .is_some_and(|t| !t.trim().is_empty());
        match (self.q1_category, has_text) {
            (CategoryAnswer::Other, false) => Err(ExperimentError::Validation(
                "q1 answered \"other\" without describing the category".into(),
            )),
            (c, true) if c != CategoryAnswer::Other => Err(ExperimentError::Validation(format!(
                "q1_other_text given but q1 is {}",
                c.as_str()
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevealKind {
    ClickReveal,
    HoverStart,
    HoverEnd,
    SliderSet,
}

impl RevealKind {
    pub fn tool(&self) -> RevealTool {
        match self {
            RevealKind::ClickReveal => RevealTool::Click,
            RevealKind::HoverStart | RevealKind::HoverEnd => RevealTool::Hover,
            RevealKind::SliderSet => RevealTool::Slider,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            RevealKind::ClickReveal => "click_reveal",
            RevealKind::HoverStart => "hover_start",
            RevealKind::HoverEnd => "hover_end",
            RevealKind::SliderSet => "slider_set",
        }
    }
}

/// Who reported a reveal: the server when it released pixels, or the client.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevealSource {
    Server,
    #[default]
    Client,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevealEvent {
    pub image_id: String,
    pub kind: RevealKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<RevealRegion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_value: Option<f64>,
    /// Client-side timestamp, informational only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_at_ms: Option<u64>,
    #[serde(default)]
    pub source: RevealSource,
}

/// One assigned image, with the gold labels and size needed for analytics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskDescriptor {
    pub image_id: String,
    pub category: Category,
    pub realism: Realism,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStarted {
    pub worker_id: String,
    pub stage: StageConfig,
    pub token_sha256: String,
    pub expires_at_ms: u64,
    pub tasks: Vec<TaskDescriptor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub session_id: String,
    pub worker_id: String,
    pub stage: StageConfig,
    pub task_list: Vec<String>,
    pub started_at: u64,
    pub completed_at: Option<u64>,
    pub expires_at: u64,
}

/// Everything recorded about one image within a session.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImageActivity {
    pub first_served_at: Option<u64>,
    pub response: Option<(u64, ModerationResponse)>,
    pub reveals: Vec<(u64, RevealEvent)>,
    pub open_hover: bool,
    /// Last slider level seen for the image.
    pub slider_sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub session: Session,
    pub tasks: Vec<TaskDescriptor>,
    pub token_sha256: String,
    pub activity: BTreeMap<String, ImageActivity>,
    pub survey: Option<(u64, SurveyResponse)>,
}

impl SessionState {
    pub fn task(&self, image_id: &str) -> Option<&TaskDescriptor> {
        self.tasks.iter().find(|t| t.image_id == image_id)
    }

    pub fn responses_complete(&self) -> bool {
        self.tasks.iter().all(|t| {
            self.activity
                .get(&t.image_id)
                .is_some_and(|a| a.response.is_some())
        })
    }

    pub fn next_unanswered(&self) -> Option<&TaskDescriptor> {
        self.tasks.iter().find(|t| {
            self.activity
                .get(&t.image_id)
                .is_none_or(|a| a.response.is_none())
        })
    }

    pub fn is_completed(&self) -> bool {
        self.session.completed_at.is_some()
    }

    fn activity(&self, image_id: &str) -> Option<&ImageActivity> {
        self.activity.get(image_id)
    }

    /// The image must be assigned, served, and not yet answered.
    fn require_active(&self, image_id: &str) -> Result<&ImageActivity, ExperimentError> {
        if self.task(image_id).is_none() {
            return Err(ExperimentError::NotFound(format!(
                "image {image_id} is not in session {}",
                self.session.session_id
            )));
        }
        match self.activity(image_id) {
            Some(a) if a.first_served_at.is_some() && a.response.is_none() => Ok(a),
            Some(a) if a.response.is_some() => Err(ExperimentError::State(format!(
                "image {image_id} has already been answered"
            ))),
            _ => Err(ExperimentError::State(format!(
                "image {image_id} has not been served yet"
            ))),
        }
    }
}

/// In-memory index over the log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentState {
    pub sessions: BTreeMap<String, SessionState>,
    pub worker_stage: BTreeMap<String, u8>,
    pub tokens: BTreeMap<String, String>,
}

impl ExperimentState {
    pub fn replay<'a>(records: impl IntoIterator<Item = &'a LogRecord>) -> Self {
        let mut state = Self::default();
        for r in records {
            state.apply(r);
        }
        state
    }

    pub fn session(&self, session_id: &str) -> Result<&SessionState, ExperimentError> {
        self.sessions
            .get(session_id)
            .ok_or_else(|| ExperimentError::NotFound(format!("session {session_id}")))
    }

    pub fn session_for_token(&self, token: &str) -> Option<&SessionState> {
        self.tokens
            .get(&hash_token(token))
            .and_then(|id| self.sessions.get(id))
    }

    pub fn apply(&mut self, record: &LogRecord) {
        let at = record.at_ms;
        let sid = &record.session_id;
        match &record.event {
            LogEvent::SessionStarted(start) => {
                self.worker_stage
                    .insert(start.worker_id.clone(), start.stage.stage_id);
                self.tokens.insert(start.token_sha256.clone(), sid.clone());
                self.sessions.insert(
                    sid.clone(),
                    SessionState {
                        session: Session {
                            session_id: sid.clone(),
                            worker_id: start.worker_id.clone(),
                            stage: start.stage.clone(),
                            task_list: start.tasks.iter().map(|t| t.image_id.clone()).collect(),
                            started_at: at,
                            completed_at: None,
                            expires_at: start.expires_at_ms,
                        },
                        tasks: start.tasks.clone(),
                        token_sha256: start.token_sha256.clone(),
                        activity: BTreeMap::new(),
                        survey: None,
                    },
                );
            }
            LogEvent::TaskServed { image_id } => {
                if let Some(s) = self.sessions.get_mut(sid) {
                    let a = s.activity.entry(image_id.clone()).or_default();
                    a.first_served_at.get_or_insert(at);
                }
            }
            LogEvent::Reveal(ev) => {
                if let Some(s) = self.sessions.get_mut(sid) {
                    let a = s.activity.entry(ev.image_id.clone()).or_default();
                    match ev.kind {
                        RevealKind::HoverStart => a.open_hover = true,
                        RevealKind::HoverEnd => a.open_hover = false,
                        RevealKind::SliderSet => a.slider_sigma = ev.sigma_value,
                        RevealKind::ClickReveal => {}
                    }
                    a.reveals.push((at, ev.clone()));
                }
            }
            LogEvent::Response(resp) => {
                if let Some(s) = self.sessions.get_mut(sid) {
                    let a = s.activity.entry(resp.image_id.clone()).or_default();
                    a.open_hover = false;
                    a.response = Some((at, resp.clone()));
                }
            }
            LogEvent::Survey(survey) => {
                if let Some(s) = self.sessions.get_mut(sid) {
                    s.survey = Some((at, survey.clone()));
                }
            }
            LogEvent::SessionCompleted {} => {
                if let Some(s) = self.sessions.get_mut(sid) {
                    s.session.completed_at = Some(at);
                }
            }
        }
    }
}

/// Destination for validated events.
pub trait Recorder {
    fn record(&mut self, at_ms: u64, session_id: &str, event: LogEvent) -> Result<LogRecord, LogError>;
}

impl Recorder for EventLogWriter {
    fn record(&mut self, at_ms: u64, session_id: &str, event: LogEvent) -> Result<LogRecord, LogError> {
        self.append(at_ms, session_id, event)
    }
}

/// Log kept in memory; used by tests and dry runs.
#[derive(Debug, Clone, Default)]
pub struct MemoryLog {
    pub records: Vec<LogRecord>,
}

impl Recorder for MemoryLog {
    fn record(&mut self, at_ms: u64, session_id: &str, event: LogEvent) -> Result<LogRecord, LogError> {
        let record = LogRecord {
            seq: self.records.len() as u64 + 1,
            at_ms,
            session_id: session_id.to_string(),
            event,
        };
        self.records.push(record.clone());
        Ok(record)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSettings {
    pub stages: Vec<u8>,
    pub tasks_per_session: usize,
    pub seed: u64,
    pub slider_levels: Vec<f64>,
    pub session_ttl_ms: u64,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            stages: vec![1, 2, 3, 4, 5, 6],
            tasks_per_session: 6,
            seed: 0,
            slider_levels: DEFAULT_SLIDER_LEVELS.to_vec(),
            session_ttl_ms: 2 * 60 * 60 * 1000,
        }
    }
}

pub fn hash_token(token: &str) -> String {
    hex::encode(Sha256::digest(token.as_bytes()))
}

/// Sampling seed for one (worker, stage) under an experiment seed.
pub fn session_seed(seed: u64, worker_id: &str, stage_id: u8) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(worker_id.as_bytes());
    h.update([0, stage_id]);
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Session state machine bound to a recorder.
#[derive(Debug)]
pub struct Experiment<R> {
    state: ExperimentState,
    recorder: R,
    settings: ExperimentSettings,
    battery: Battery,
}

impl<R: Recorder> Experiment<R> {
    pub fn new(settings: ExperimentSettings, battery: Battery, recorder: R, history: &[LogRecord]) -> Self {
        Self {
            state: ExperimentState::replay(history),
            recorder,
            settings,
            battery,
        }
    }

    pub fn state(&self) -> &ExperimentState {
        &self.state
    }

    pub fn settings(&self) -> &ExperimentSettings {
        &self.settings
    }

    pub fn recorder(&self) -> &R {
        &self.recorder
    }

    pub fn into_recorder(self) -> R {
        self.recorder
    }

    fn commit(&mut self, at_ms: u64, session_id: &str, event: LogEvent) -> Result<LogRecord, ExperimentError> {
        let record = self.recorder.record(at_ms, session_id, event)?;
        self.state.apply(&record);
        Ok(record)
    }

    fn live_session(&self, session_id: &str, now_ms: u64) -> Result<&SessionState, ExperimentError> {
        let s = self.state.session(session_id)?;
        if now_ms > s.session.expires_at {
            return Err(ExperimentError::Expired(session_id.to_string()));
        }
        Ok(s)
    }

    /// Creates a session with a balanced, seeded task list. `token` is the
    /// bearer secret handed to the client; only its hash is logged.
    pub fn start_session(
        &mut self,
        worker_id: &str,
        stage_id: u8,
        corpus: &Corpus,
        token: &str,
        now_ms: u64,
    ) -> Result<Session, ExperimentError> {
        if worker_id.trim().is_empty() {
            return Err(ExperimentError::InvalidParameter("worker_id is empty".into()));
        }
        let stage = make_stage_config_with(stage_id, &self.settings.slider_levels)?;
        if !self.settings.stages.contains(&stage_id) {
            return Err(ExperimentError::InvalidParameter(format!(
                "stage {stage_id} is not part of this experiment"
            )));
        }
        if let Some(&held) = self.state.worker_stage.get(worker_id) {
            if held != stage_id {
                return Err(ExperimentError::Conflict(format!(
                    "worker {worker_id} is already assigned to stage {held}"
                )));
            }
        }
        if corpus.is_empty() {
            return Err(ExperimentError::State("corpus is empty".into()));
        }
        let n = self.settings.tasks_per_session;
        let picked = corpus
            .sample_task_set(n, session_seed(self.settings.seed, worker_id, stage_id), true)
            .map_err(|e| ExperimentError::InvalidParameter(e.to_string()))?;
        let session_id = format!("s{:05}", self.state.sessions.len() + 1);
        let start = SessionStarted {
            worker_id: worker_id.to_string(),
            stage,
            token_sha256: hash_token(token),
            expires_at_ms: now_ms + self.settings.session_ttl_ms,
            tasks: picked
                .into_iter()
                .map(|r| TaskDescriptor {
                    image_id: r.id,
                    category: r.category,
                    realism: r.realism,
                    width: r.width,
                    height: r.height,
                })
                .collect(),
        };
        self.commit(now_ms, &session_id, LogEvent::SessionStarted(start))?;
        Ok(self.state.sessions[&session_id].session.clone())
    }

    /// Next unanswered task, logging that it was served. `None` once all are answered.
    pub fn serve_next(&mut self, session_id: &str, now_ms: u64) -> Result<Option<TaskDescriptor>, ExperimentError> {
        let s = self.live_session(session_id, now_ms)?;
        let Some(task) = s.next_unanswered().cloned() else {
            return Ok(None);
        };
        self.commit(
            now_ms,
            session_id,
            LogEvent::TaskServed {
                image_id: task.image_id.clone(),
            },
        )?;
        Ok(Some(task))
    }

    pub fn record_response(
        &mut self,
        session_id: &str,
        mut response: ModerationResponse,
        now_ms: u64,
    ) -> Result<LogRecord, ExperimentError> {
        let s = self.live_session(session_id, now_ms)?;
        if s.task(&response.image_id).is_none() {
            return Err(ExperimentError::NotFound(format!(
                "image {} is not in session {session_id}",
                response.image_id
            )));
        }
        let activity = s.activity(&response.image_id);
        if activity.is_some_and(|a| a.response.is_some()) {
            return Err(ExperimentError::Conflict(format!(
                "image {} already has a response",
                response.image_id
            )));
        }
        response.validate()?;
        let served_at = activity
            .and_then(|a| a.first_served_at)
            .ok_or_else(|| ExperimentError::State(format!("image {} was never served", response.image_id)))?;
        if response.q1_other_text.as_deref().is_some_and(|t| t.trim().is_empty()) {
            response.q1_other_text = None;
        }
        if response.q4_rationale.as_deref().is_some_and(|t| t.trim().is_empty()) {
            response.q4_rationale = None;
        }
        response.latency_ms = now_ms.saturating_sub(served_at);
        self.commit(now_ms, session_id, LogEvent::Response(response))
    }

    /// Validates and logs a reveal. Returns the logged records: a new hover
    /// implicitly ends one still open on the same image, so there may be two.
    pub fn record_reveal_event(
        &mut self,
        session_id: &str,
        mut event: RevealEvent,
        now_ms: u64,
    ) -> Result<Vec<LogRecord>, ExperimentError> {
        let s = self.live_session(session_id, now_ms)?;
        let stage = &s.session.stage;
        if event.kind.tool() != stage.reveal_tool {
            return Err(ExperimentError::Validation(format!(
                "{} is not permitted in stage {} (tool: {})",
                event.kind.as_str(),
                stage.stage_id,
                stage.reveal_tool.as_str()
            )));
        }
        let needs_region = matches!(event.kind, RevealKind::ClickReveal | RevealKind::HoverStart);
        match (&event.region, needs_region) {
            (None, true) => {
                return Err(ExperimentError::Validation(format!(
                    "{} requires a region",
                    event.kind.as_str()
                )))
            }
            (Some(_), false) => {
                return Err(ExperimentError::Validation(format!(
                    "{} must not carry a region",
                    event.kind.as_str()
                )))
            }
            (Some(r), true) => r
                .validate()
                .map_err(|e| ExperimentError::Validation(e.to_string()))?,
            (None, false) => {}
        }
        match (event.kind, event.sigma_value) {
            (RevealKind::SliderSet, None) => {
                return Err(ExperimentError::Validation("slider_set requires sigma_value".into()))
            }
            (RevealKind::SliderSet, Some(v)) => {
                if !v.is_finite() || v < 0.0 || v > stage.sigma {
                    return Err(ExperimentError::Validation(format!(
                        "slider sigma {v} outside [0, {}]",
                        stage.sigma
                    )));
                }
                event.sigma_value = Some(stage.snap_to_level(v));
            }
            (_, Some(_)) => {
                return Err(ExperimentError::Validation(format!(
                    "{} must not carry sigma_value",
                    event.kind.as_str()
                )))
            }
            (_, None) => {}
        }
        let activity = s.require_active(&event.image_id)?;
        if let Some(region) = &event.region {
            let task = s.task(&event.image_id).expect("checked by require_active");
            if region.clipped_bounds(task.width, task.height).is_none() {
                return Err(ExperimentError::Validation(format!(
                    "region {region:?} lies outside the {}x{} image",
                    task.width, task.height
                )));
            }
        }
        let mut prelude = None;
        match event.kind {
            RevealKind::HoverEnd if !activity.open_hover => {
                return Err(ExperimentError::Validation(format!(
                    "hover_end on {} without an open hover_start",
                    event.image_id
                )))
            }
            RevealKind::HoverStart if activity.open_hover => {
                prelude = Some(RevealEvent {
                    image_id: event.image_id.clone(),
                    kind: RevealKind::HoverEnd,
                    region: None,
                    sigma_value: None,
                    client_at_ms: None,
                    source: RevealSource::Server,
                });
            }
            _ => {}
        }
        let mut out = Vec::new();
        if let Some(end) = prelude {
            out.push(self.commit(now_ms, session_id, LogEvent::Reveal(end))?);
        }
        out.push(self.commit(now_ms, session_id, LogEvent::Reveal(event))?);
        Ok(out)
    }

    /// Records that a stage-6 rendition at `sigma` was released, as an
    /// authoritative `slider_set`. No-op when the level does not change.
    pub fn note_rendition(
        &mut self,
        session_id: &str,
        image_id: &str,
        sigma: f64,
        now_ms: u64,
    ) -> Result<Option<LogRecord>, ExperimentError> {
        let s = self.live_session(session_id, now_ms)?;
        if s.session.stage.reveal_tool != RevealTool::Slider {
            return Ok(None);
        }
        let current = s
            .activity(image_id)
            .and_then(|a| a.slider_sigma)
            .unwrap_or(s.session.stage.sigma);
        if same_sigma(current, sigma) {
            return Ok(None);
        }
        let event = RevealEvent {
            image_id: image_id.to_string(),
            kind: RevealKind::SliderSet,
            region: None,
            sigma_value: Some(sigma),
            client_at_ms: None,
            source: RevealSource::Server,
        };
        self.record_reveal_event(session_id, event, now_ms)
            .map(|mut v| v.pop())
    }

    /// Accepts the post-task survey once every task is answered, then closes
    /// the session.
    pub fn record_survey(
        &mut self,
        session_id: &str,
        mut survey: SurveyResponse,
        now_ms: u64,
    ) -> Result<LogRecord, ExperimentError> {
        let s = self.live_session(session_id, now_ms)?;
        if s.survey.is_some() {
            return Err(ExperimentError::Conflict(format!(
                "session {session_id} already has a survey"
            )));
        }
        if !s.responses_complete() {
            return Err(ExperimentError::State(format!(
                "session {session_id} still has unanswered tasks"
            )));
        }
        self.battery
            .score(&survey)
            .map_err(|e| ExperimentError::Validation(e.to_string()))?;
        survey.session_id = session_id.to_string();
        let record = self.commit(now_ms, session_id, LogEvent::Survey(survey))?;
        self.commit(now_ms, session_id, LogEvent::SessionCompleted {})?;
        Ok(record)
    }
}

/// A response tagged with the stage it was given under.
#[derive(Debug, Clone, PartialEq)]
pub struct StagedResponse {
    pub stage_id: u8,
    pub response: ModerationResponse,
}

/// Gold labels carried by the session records of a log.
pub fn gold_from_state(state: &ExperimentState) -> BTreeMap<String, (Category, Realism)> {
    let mut gold = BTreeMap::new();
    for s in state.sessions.values() {
        for t in &s.tasks {
            gold.insert(t.image_id.clone(), (t.category, t.realism));
        }
    }
    gold
}

/// Checks that no logged reveal was disallowed by its session's stage.
pub fn audit_stage_gating(records: &[LogRecord]) -> Result<(), String> {
    let mut stages: BTreeMap<&str, &StageConfig> = BTreeMap::new();
    for r in records {
        match &r.event {
            LogEvent::SessionStarted(s) => {
                stages.insert(&r.session_id, &s.stage);
            }
            LogEvent::Reveal(ev) => {
                let stage = stages
                    .get(r.session_id.as_str())
                    .ok_or_else(|| format!("seq {}: reveal for unknown session", r.seq))?;
                if ev.kind.tool() != stage.reveal_tool {
                    return Err(format!(
                        "seq {}: {} in stage {}",
                        r.seq,
                        ev.kind.as_str(),
                        stage.stage_id
                    ));
                }
            }
            _ => {}
        }
    }
    Ok(())
}

impl GoldLabels for ExperimentState {
    fn gold(&self, image_id: &str) -> Option<(Category, Realism)> {
        self.sessions
            .values()
            .flat_map(|s| s.tasks.iter())
            .find(|t| t.image_id == image_id)
            .map(|t| (t.category, t.realism))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ImageRecord;

    fn corpus() -> Corpus {
        let mut records = Vec::new();
        for (i, c) in Category::ALL.iter().cycle().take(24).enumerate() {
            records.push(ImageRecord {
                id: format!("img{i:02}"),
                file_path: format!("images/img{i:02}.png"),
                category: *c,
                realism: if i % 2 == 0 { Realism::Realistic } else { Realism::Synthetic },
                width: 20,
                height: 20,
            });
        }
        Corpus::from_records("", records).unwrap()
    }

    fn experiment() -> Experiment<MemoryLog> {
        Experiment::new(ExperimentSettings::default(), Battery::standard(), MemoryLog::default(), &[])
    }

    fn answer(image_id: &str, q1: CategoryAnswer) -> ModerationResponse {
        ModerationResponse {
            image_id: image_id.into(),
            q1_category: q1,
            q1_other_text: None,
            q2_realistic: false,
            q3_approve: true,
            q4_rationale: None,
            latency_ms: 0,
        }
    }

    fn click(image_id: &str) -> RevealEvent {
        RevealEvent {
            image_id: image_id.into(),
            kind: RevealKind::ClickReveal,
            region: Some(RevealRegion::circle(5, 5, 3)),
            sigma_value: None,
            client_at_ms: None,
            source: RevealSource::Client,
        }
    }

    #[test]
    fn session_tasks_balanced_and_deterministic() {
        let c = corpus();
        let mut a = experiment();
        let s = a.start_session("w1", 2, &c, "tok", 0).unwrap();
        assert_eq!(s.task_list.len(), 6);
        let state = &a.state().sessions[&s.session_id];
        for cat in Category::ALL {
            assert_eq!(state.tasks.iter().filter(|t| t.category == cat).count(), 2);
        }
        let mut b = experiment();
        let s2 = b.start_session("w1", 2, &c, "other", 0).unwrap();
        assert_eq!(s.task_list, s2.task_list);
    }

    #[test]
    fn invalid_stage_and_between_subjects() {
        let c = corpus();
        let mut e = experiment();
        assert!(matches!(e.start_session("w", 7, &c, "t", 0), Err(ExperimentError::InvalidParameter(_))));
        e.start_session("w", 2, &c, "t", 0).unwrap();
        assert!(matches!(e.start_session("w", 5, &c, "t2", 0), Err(ExperimentError::Conflict(_))));
        assert!(e.start_session("w", 2, &c, "t3", 0).is_ok());
    }

    #[test]
    fn zero_tasks_rejected() {
        let mut e = Experiment::new(
            ExperimentSettings {
                tasks_per_session: 0,
                ..Default::default()
            },
            Battery::standard(),
            MemoryLog::default(),
            &[],
        );
        assert!(matches!(
            e.start_session("w", 1, &corpus(), "t", 0),
            Err(ExperimentError::InvalidParameter(_))
        ));
    }

    #[test]
    fn response_rules() {
        let c = corpus();
        let mut e = experiment();
        let s = e.start_session("w", 1, &c, "t", 0).unwrap();
        let first = e.serve_next(&s.session_id, 100).unwrap().unwrap();
        assert_eq!(first.image_id, s.task_list[0]);

        let mut other = answer(&first.image_id, CategoryAnswer::Other);
        other.q1_other_text = Some(String::new());
        assert!(matches!(
            e.record_response(&s.session_id, other, 200),
            Err(ExperimentError::Validation(_))
        ));
        let r = e
            .record_response(&s.session_id, answer(&first.image_id, CategoryAnswer::Safe), 1600)
            .unwrap();
        match r.event {
            LogEvent::Response(resp) => assert_eq!(resp.latency_ms, 1500),
            _ => panic!(),
        }
        assert!(matches!(
            e.record_response(&s.session_id, answer(&first.image_id, CategoryAnswer::Safe), 1700),
            Err(ExperimentError::Conflict(_))
        ));
        assert!(matches!(
            e.record_response(&s.session_id, answer("nope", CategoryAnswer::Safe), 1700),
            Err(ExperimentError::NotFound(_))
        ));
    }

    #[test]
    fn reveal_gating() {
        let c = corpus();
        let mut e = experiment();
        let s4 = e.start_session("w4", 4, &c, "a", 0).unwrap();
        let s2 = e.start_session("w2", 2, &c, "b", 0).unwrap();
        let s6 = e.start_session("w6", 6, &c, "c", 0).unwrap();
        let i4 = e.serve_next(&s4.session_id, 1).unwrap().unwrap().image_id;
        let i2 = e.serve_next(&s2.session_id, 1).unwrap().unwrap().image_id;
        let i6 = e.serve_next(&s6.session_id, 1).unwrap().unwrap().image_id;
        assert!(e.record_reveal_event(&s4.session_id, click(&i4), 5).is_ok());
        assert!(matches!(
            e.record_reveal_event(&s2.session_id, click(&i2), 5),
            Err(ExperimentError::Validation(_))
        ));
        let slider = |v| RevealEvent {
            image_id: i6.clone(),
            kind: RevealKind::SliderSet,
            region: None,
            sigma_value: Some(v),
            client_at_ms: None,
            source: RevealSource::Client,
        };
        assert!(matches!(
            e.record_reveal_event(&s6.session_id, slider(20.0), 5),
            Err(ExperimentError::Validation(_))
        ));
        let rec = e.record_reveal_event(&s6.session_id, slider(9.0), 5).unwrap();
        match &rec[0].event {
            LogEvent::Reveal(ev) => assert_eq!(ev.sigma_value, Some(10.0)),
            _ => panic!(),
        }
        assert!(audit_stage_gating(&e.recorder().records).is_ok());
    }

    #[test]
    fn hover_pairing() {
        let c = corpus();
        let mut e = experiment();
        let s = e.start_session("w5", 5, &c, "a", 0).unwrap();
        let img = e.serve_next(&s.session_id, 0).unwrap().unwrap().image_id;
        let ev = |kind, region| RevealEvent {
            image_id: img.clone(),
            kind,
            region,
            sigma_value: None,
            client_at_ms: None,
            source: RevealSource::Client,
        };
        assert!(e
            .record_reveal_event(&s.session_id, ev(RevealKind::HoverEnd, None), 1)
            .is_err());
        let region = Some(RevealRegion::circle(3, 3, 2));
        e.record_reveal_event(&s.session_id, ev(RevealKind::HoverStart, region), 2).unwrap();
        let two = e.record_reveal_event(&s.session_id, ev(RevealKind::HoverStart, region), 3).unwrap();
        assert_eq!(two.len(), 2);
        e.record_reveal_event(&s.session_id, ev(RevealKind::HoverEnd, None), 4).unwrap();
        assert!(e
            .record_reveal_event(&s.session_id, ev(RevealKind::HoverEnd, None), 5)
            .is_err());
    }

    #[test]
    fn survey_closes_session_and_replay_matches() {
        let c = corpus();
        let mut e = experiment();
        let s = e.start_session("w", 3, &c, "tok", 0).unwrap();
        let survey = SurveyResponse {
            session_id: String::new(),
            demographics: Default::default(),
            spane_items: vec![3; 12],
            panas_items: vec![4; 10],
            exhaustion_items: vec![2; 6],
            tam_peou_items: vec![5; 6],
            tam_pu_items: vec![5; 6],
        };
        assert!(matches!(
            e.record_survey(&s.session_id, survey.clone(), 1),
            Err(ExperimentError::State(_))
        ));
        let mut t = 10;
        while let Some(task) = e.serve_next(&s.session_id, t).unwrap() {
            t += 100;
            e.record_response(&s.session_id, answer(&task.image_id, task.category.into()), t)
                .unwrap();
        }
        let mut bad = survey.clone();
        bad.spane_items.pop();
        assert!(matches!(e.record_survey(&s.session_id, bad, t), Err(ExperimentError::Validation(_))));
        e.record_survey(&s.session_id, survey.clone(), t).unwrap();
        assert!(matches!(e.record_survey(&s.session_id, survey, t), Err(ExperimentError::Conflict(_))));
        let st = &e.state().sessions[&s.session_id];
        assert!(st.is_completed());
        assert!(st.responses_complete());
        assert_eq!(&ExperimentState::replay(&e.recorder().records), e.state());
        assert!(e.state().session_for_token("tok").is_some());
        assert!(e.state().session_for_token("nope").is_none());
    }

    #[test]
    fn expiry() {
        let c = corpus();
        let mut e = experiment();
        let s = e.start_session("w", 1, &c, "tok", 0).unwrap();
        let late = s.expires_at + 1;
        assert!(matches!(e.serve_next(&s.session_id, late), Err(ExperimentError::Expired(_))));
    }
}
