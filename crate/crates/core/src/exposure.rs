//! How much unobfuscated content a worker saw for one image.
//!
//! The observation window runs from the image's first serve to receipt of its
//! response. All times are server timestamps.

use serde::{Deserialize, Serialize};

use crate::experiment::{ExperimentError, RevealKind, SessionState};
use crate::region::{region_area_fraction, RevealMask, RevealRegion};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureReport {
    pub image_id: String,
    /// Union of click-revealed pixels over image area.
    pub permanent_area_fraction: f64,
    /// Sum over hovers of area fraction times duration in seconds.
    pub hover_area_seconds: f64,
    pub min_sigma_reached: f64,
    /// Integral of `1 - sigma(t) / stage_sigma` over the window, in seconds.
    pub clarity_time_integral: f64,
}

pub fn compute_exposure(
    session: &SessionState,
    image_id: &str,
    dims: (u32, u32),
) -> Result<ExposureReport, ExperimentError> {
    let stage = &session.session.stage;
    let activity = session.activity.get(image_id);
    let (window_end, _) = activity
        .and_then(|a| a.response.as_ref())
        .ok_or_else(|| {
            ExperimentError::State(format!("no response recorded for image {image_id}"))
        })?;
    let window_end = *window_end;
    let activity = activity.expect("response implies activity");
    let window_start = activity.first_served_at.unwrap_or(window_end);

    let (width, height) = dims;
    let mut mask = RevealMask::empty(width, height);
    let mut hover_area_seconds = 0.0;
    let mut open_hover: Option<(u64, RevealRegion)> = None;
    let mut current_sigma = stage.sigma;
    let mut min_sigma = stage.sigma;
    let mut clarity = 0.0;
    let mut last_t = window_start;

    let clarity_of = |sigma: f64| {
        if stage.sigma > 0.0 {
            1.0 - sigma / stage.sigma
        } else {
            0.0
        }
    };
    let seconds = |from: u64, to: u64| to.saturating_sub(from) as f64 / 1000.0;

    for (at, ev) in &activity.reveals {
        let at = (*at).clamp(window_start, window_end);
        match ev.kind {
            RevealKind::ClickReveal => {
                if let Some(r) = &ev.region {
                    mask.add(r);
                }
            }
            RevealKind::HoverStart => {
                if let Some((start, region)) = open_hover.take() {
                    hover_area_seconds += region_area_fraction(&region, width, height) * seconds(start, at);
                }
                open_hover = ev.region.map(|r| (at, r));
            }
            RevealKind::HoverEnd => {
                if let Some((start, region)) = open_hover.take() {
                    hover_area_seconds += region_area_fraction(&region, width, height) * seconds(start, at);
                }
            }
            RevealKind::SliderSet => {
                if let Some(v) = ev.sigma_value {
                    clarity += clarity_of(current_sigma) * seconds(last_t, at);
                    last_t = at;
                    current_sigma = v;
                    min_sigma = min_sigma.min(v);
                }
            }
        }
    }
    // A hover still open at submission lasts until the response arrives.
    if let Some((start, region)) = open_hover {
        hover_area_seconds += region_area_fraction(&region, width, height) * seconds(start, window_end);
    }
    let is_slider = stage.slider_levels.is_some();
    if is_slider {
        clarity += clarity_of(current_sigma) * seconds(last_t, window_end);
    }

    Ok(ExposureReport {
        image_id: image_id.to_string(),
        permanent_area_fraction: mask.area_fraction(),
        hover_area_seconds,
        min_sigma_reached: min_sigma,
        clarity_time_integral: if is_slider { clarity } else { 0.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Category, Corpus, ImageRecord, Realism};
    use crate::experiment::{
        CategoryAnswer, Experiment, ExperimentSettings, MemoryLog, ModerationResponse, RevealEvent,
        RevealSource,
    };
    use crate::survey::Battery;

    fn corpus() -> Corpus {
        let records = (0..9)
            .map(|i| ImageRecord {
                id: format!("i{i}"),
                file_path: String::new(),
                category: Category::ALL[i % 3],
                realism: Realism::Synthetic,
                width: 20,
                height: 20,
            })
            .collect();
        Corpus::from_records("", records).unwrap()
    }

    fn run(stage: u8, events: Vec<(u64, RevealEvent)>, answer_at: u64) -> ExposureReport {
        let mut e = Experiment::new(
            ExperimentSettings {
                tasks_per_session: 3,
                ..Default::default()
            },
            Battery::standard(),
            MemoryLog::default(),
            &[],
        );
        let c = corpus();
        let s = e.start_session("w", stage, &c, "t", 0).unwrap();
        let img = e.serve_next(&s.session_id, 1000).unwrap().unwrap().image_id;
        for (at, mut ev) in events {
            ev.image_id = img.clone();
            e.record_reveal_event(&s.session_id, ev, at).unwrap();
        }
        e.record_response(
            &s.session_id,
            ModerationResponse {
                image_id: img.clone(),
                q1_category: CategoryAnswer::Safe,
                q1_other_text: None,
                q2_realistic: true,
                q3_approve: true,
                q4_rationale: None,
                latency_ms: 0,
            },
            answer_at,
        )
        .unwrap();
        compute_exposure(&e.state().sessions[&s.session_id], &img, (20, 20)).unwrap()
    }

    fn ev(kind: RevealKind, region: Option<RevealRegion>, sigma: Option<f64>) -> RevealEvent {
        RevealEvent {
            image_id: String::new(),
            kind,
            region,
            sigma_value: sigma,
            client_at_ms: None,
            source: RevealSource::Client,
        }
    }

    #[test]
    fn event_free_stage_three() {
        let r = run(3, vec![], 3000);
        assert_eq!(
            (r.permanent_area_fraction, r.hover_area_seconds, r.min_sigma_reached, r.clarity_time_integral),
            (0.0, 0.0, 14.0, 0.0)
        );
        let r1 = run(1, vec![], 3000);
        assert_eq!(r1.min_sigma_reached, 0.0);
    }

    #[test]
    fn clicks_full_and_overlapping() {
        let full = run(4, vec![(1100, ev(RevealKind::ClickReveal, Some(RevealRegion::rect(0, 0, 20, 20)), None))], 2000);
        assert_eq!(full.permanent_area_fraction, 1.0);
        let two = run(
            4,
            vec![
                (1100, ev(RevealKind::ClickReveal, Some(RevealRegion::circle(5, 5, 3)), None)),
                (1200, ev(RevealKind::ClickReveal, Some(RevealRegion::circle(7, 5, 3)), None)),
            ],
            2000,
        );
        // Independent count: 41 pixels in the union (see region tests).
        assert!((two.permanent_area_fraction - 41.0 / 400.0).abs() < 1e-15);
    }

    #[test]
    fn hover_area_seconds() {
        let rect = RevealRegion::rect(0, 0, 10, 20); // half the image
        let r = run(
            5,
            vec![
                (1000, ev(RevealKind::HoverStart, Some(rect), None)),
                (2000, ev(RevealKind::HoverEnd, None, None)),
                (3000, ev(RevealKind::HoverStart, Some(rect), None)),
            ],
            3500,
        );
        // 0.5 * 1 s + 0.5 * 0.5 s (closed by the response)
        assert!((r.hover_area_seconds - 0.75).abs() < 1e-12);
        assert_eq!(r.permanent_area_fraction, 0.0);
    }

    #[test]
    fn slider_integral() {
        let r = run(
            6,
            vec![
                (2000, ev(RevealKind::SliderSet, None, Some(7.0))),
                (4000, ev(RevealKind::SliderSet, None, Some(0.0))),
                (5000, ev(RevealKind::SliderSet, None, Some(14.0))),
            ],
            6000,
        );
        assert_eq!(r.min_sigma_reached, 0.0);
        // 7 snaps to 8 (ties go to the blurrier level).
        // 1 s at 14 -> 0; 2 s at 8 -> 2 * (1 - 8/14); 1 s at 0 -> 1; 1 s at 14 -> 0
        let expected = 2.0 * (1.0 - 8.0 / 14.0) + 1.0;
        assert!((r.clarity_time_integral - expected).abs() < 1e-12, "{}", r.clarity_time_integral);
    }

    #[test]
    fn missing_response_is_state_error() {
        let mut e = Experiment::new(ExperimentSettings { tasks_per_session: 3, ..Default::default() }, Battery::standard(), MemoryLog::default(), &[]);
        let s = e.start_session("w", 3, &corpus(), "t", 0).unwrap();
        let st = &e.state().sessions[&s.session_id];
        assert!(matches!(
            compute_exposure(st, &s.task_list[0], (20, 20)),
            Err(ExperimentError::State(_))
        ));
    }
}
