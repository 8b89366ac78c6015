//! HTTP trace of a simulated run and the privacy audit over it.
//!
//! Each exchange is recorded with enough metadata to decide afterwards, with
//! only the trace and the event log, whether any pixels left the server
//! outside the stage's rules.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use veilmod_core::eventlog::{LogEvent, LogRecord};
use veilmod_core::experiment::{RevealKind, RevealSource};
use veilmod_core::region::RevealRegion;
use veilmod_core::stage::{same_sigma, StageConfig};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub worker_id: String,
    pub stage_id: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    pub method: String,
    /// Path including the query string.
    pub uri: String,
    pub status: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_type: Option<String>,
    pub body_len: usize,
    pub body_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reveal_seq: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    /// Request a compliant client would not make.
    #[serde(default)]
    pub probe: bool,
}

pub fn body_digest(body: &[u8]) -> String {
    hex::encode(Sha256::digest(body))
}

pub fn write_trace(path: &Path, trace: &[TraceEntry]) -> Result<(), CliError> {
    let mut out = Vec::new();
    for e in trace {
        serde_json::to_writer(&mut out, e).expect("trace entries serialize");
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(&out).map_err(|e| CliError::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceEntry>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::validation(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// Splits `/api/images/{id}[/tile]?query` into (id, is_tile, query pairs).
fn parse_image_uri(uri: &str) -> Option<(String, bool, BTreeMap<String, String>)> {
    let (path, query) = uri.split_once('?').unwrap_or((uri, ""));
    let rest = path.strip_prefix("/api/images/")?;
    let (id, tile) = match rest.strip_suffix("/tile") {
        Some(id) => (id, true),
        None => (rest, false),
    };
    let pairs = query
        .split('&')
        .filter_map(|kv| kv.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    Some((percent_decode(id), tile, pairs))
}

fn percent_decode(s: &str) -> String {
    let b = s.as_bytes();
    let mut out = Vec::with_capacity(b.len());
    let mut i = 0;
    while i < b.len() {
        if b[i] == b'%' && i + 2 < b.len() {
            let hex = std::str::from_utf8(&b[i + 1..i + 3]).ok();
            if let Some(v) = hex.and_then(|h| u8::from_str_radix(h, 16).ok()) {
                out.push(v);
                i += 3;
                continue;
            }
        }
        out.push(b[i]);
        i += 1;
    }
    String::from_utf8_lossy(&out).into_owned()
}

fn region_from_query(q: &BTreeMap<String, String>) -> Option<RevealRegion> {
    let get = |k: &str| q.get(k).and_then(|v| v.parse::<i64>().ok());
    if let (Some(cx), Some(cy), Some(r)) = (get("cx"), get("cy"), get("r")) {
        return Some(RevealRegion::circle(cx, cy, u32::try_from(r).ok()?));
    }
    if let (Some(x), Some(y), Some(w), Some(h)) = (get("x"), get("y"), get("w"), get("h")) {
        return Some(RevealRegion::rect(x, y, u32::try_from(w).ok()?, u32::try_from(h).ok()?));
    }
    None
}

/// Checks every successful image response in `trace` against the stage
/// rules and the event log. Returns one message per violation.
///
/// * A full rendition must be at a sigma the stage allows. In stages 2 to 5
///   that is exactly the stage sigma; sharper stage-6 renditions must match
///   a logged `slider_set` for the same session and image.
/// * A tile is legal only in stages 4 and 5 and must name, via its reveal
///   sequence number, a server-logged reveal of the same image and region.
/// * Probe requests must all have been refused.
pub fn audit_privacy(trace: &[TraceEntry], log: &[LogRecord]) -> Vec<String> {
    let mut stages: BTreeMap<&str, &StageConfig> = BTreeMap::new();
    let mut by_seq: BTreeMap<u64, &LogRecord> = BTreeMap::new();
    for r in log {
        by_seq.insert(r.seq, r);
        if let LogEvent::SessionStarted(s) = &r.event {
            stages.insert(&r.session_id, &s.stage);
        }
    }
    let slider_logged = |session: &str, image: &str, sigma: f64| {
        log.iter().any(|r| {
            r.session_id == session
                && matches!(&r.event, LogEvent::Reveal(e)
                    if e.kind == RevealKind::SliderSet && e.image_id == image
                        && e.sigma_value.is_some_and(|v| same_sigma(v, sigma)))
        })
    };

    let mut problems = Vec::new();
    for (i, e) in trace.iter().enumerate() {
        let at = format!("trace #{} ({} {} {})", i + 1, e.method, e.uri, e.status);
        if e.probe && e.status < 400 {
            problems.push(format!("{at}: probe request was not refused"));
        }
        if e.status != 200 {
            continue;
        }
        let Some((image_id, is_tile, query)) = parse_image_uri(&e.uri) else {
            continue;
        };
        let Some(session) = e.session_id.as_deref() else {
            problems.push(format!("{at}: image bytes delivered outside a session"));
            continue;
        };
        let Some(stage) = stages.get(session) else {
            problems.push(format!("{at}: session {session} has no session_started record"));
            continue;
        };
        if is_tile {
            if !stage.permits_tiles() {
                problems.push(format!("{at}: tile delivered in stage {}", stage.stage_id));
                continue;
            }
            let record = e.reveal_seq.and_then(|s| by_seq.get(&s));
            let ok = record.is_some_and(|r| {
                r.session_id == session
                    && matches!(&r.event, LogEvent::Reveal(ev)
                        if ev.source == RevealSource::Server
                            && matches!(ev.kind, RevealKind::ClickReveal | RevealKind::HoverStart)
                            && ev.image_id == image_id
                            && ev.region.is_some()
                            && ev.region == region_from_query(&query))
            });
            if !ok {
                problems.push(format!("{at}: tile has no matching logged reveal"));
            }
            continue;
        }
        let Some(sigma) = e.sigma else {
            problems.push(format!("{at}: rendition without a sigma header"));
            continue;
        };
        if !stage.allows_sigma(sigma) {
            problems.push(format!("{at}: sigma {sigma} not allowed in stage {}", stage.stage_id));
        } else if (2..=5).contains(&stage.stage_id) && sigma < stage.sigma {
            problems.push(format!("{at}: sigma {sigma} below stage sigma {}", stage.sigma));
        } else if stage.slider_levels.is_some() && sigma < stage.sigma && !slider_logged(session, &image_id, sigma) {
            problems.push(format!("{at}: sharp rendition at sigma {sigma} without a logged slider_set"));
        }
    }
    problems
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_image_uris() {
        let (id, tile, q) = parse_image_uri("/api/images/a%20b/tile?cx=1&cy=2&r=3").unwrap();
        assert_eq!((id.as_str(), tile), ("a b", true));
        assert_eq!(region_from_query(&q), Some(RevealRegion::circle(1, 2, 3)));
        let (id, tile, q) = parse_image_uri("/api/images/x?sigma=7").unwrap();
        assert_eq!((id.as_str(), tile, q["sigma"].as_str()), ("x", false, "7"));
        assert!(parse_image_uri("/api/tasks/next").is_none());
    }
}
