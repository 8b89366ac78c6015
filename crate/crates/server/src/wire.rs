//! JSON bodies exchanged with the moderator client.
//!
//! Request bodies for responses, reveals and surveys are the core types
//! (`ModerationResponse`, `RevealEvent`, `SurveyResponse`) as-is.

use serde::{Deserialize, Serialize};

use veilmod_core::stage::StageConfig;

/// `POST /api/sessions`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub worker_id: String,
    pub stage_id: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    /// Bearer token for every later worker request. Shown once.
    pub token: String,
    pub session_id: String,
    pub stage: StageConfig,
    pub task_count: usize,
    pub expires_at_ms: u64,
    pub region_radius: u32,
}

/// `GET /api/tasks/next`. Carries no gold labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPayload {
    pub session_id: String,
    pub image_id: String,
    /// Zero-based position in the session's task list.
    pub index: usize,
    pub total: usize,
    pub width: u32,
    pub height: u32,
    pub stage: StageConfig,
    /// Rendition at the stage's default sigma.
    pub image_url: String,
    pub tile_url: Option<String>,
    pub region_radius: u32,
    pub region_max_radius: u32,
}

/// Acknowledgement of one logged record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Logged {
    pub seq: u64,
}

/// Acknowledgement of a reveal, which may log an implicit `hover_end` first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevealLogged {
    pub seqs: Vec<u64>,
    /// Sigma actually recorded for `slider_set`, after snapping to a level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_value: Option<f64>,
}

/// Formats a sigma for URLs without a trailing `.0`.
pub fn sigma_param(sigma: f64) -> String {
    if sigma.fract() == 0.0 {
        format!("{}", sigma as i64)
    } else {
        format!("{sigma}")
    }
}

/// Rendition URL for an image at a sigma.
pub fn image_url(image_id: &str, sigma: f64) -> String {
    format!("/api/images/{}?sigma={}", url_escape(image_id), sigma_param(sigma))
}

/// Percent-encodes everything outside the URL-safe unreserved set.
pub fn url_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.' | b'~') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}
