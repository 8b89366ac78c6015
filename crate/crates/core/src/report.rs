//! Experiment report: accuracy, exposure and survey summaries per stage.
//!
//! A report is a pure function of [`ExperimentState`], which itself is a pure
//! function of the event log, so identical logs render identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::accuracy::{accuracy_report, AccuracyCell, StageAccuracy};
use crate::corpus::Category;
use crate::experiment::{CategoryAnswer, ExperimentError, ExperimentState, StagedResponse};
use crate::exposure::{compute_exposure, ExposureReport};
use crate::stage::RevealTool;
use crate::survey::{Battery, SurveyScores};

/// Column header of the CSV rendering; one row per (stage, gold category).
pub const CSV_HEADER: &str = "stage,sigma,tool,category,responses,q1_accuracy,q2_accuracy,q3_approval_rate,mean_latency_ms,\
answered_sex_nudity,answered_graphic,answered_safe,answered_other,\
mean_permanent_area_fraction,mean_hover_area_seconds,mean_min_sigma_reached,mean_clarity_time_integral,\
surveys,mean_spane_p,mean_spane_n,mean_spane_balance,mean_panas_pa,mean_panas_na,mean_exhaustion,mean_peou,mean_pu";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format {other:?} (table, csv, json)")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExposureSummary {
    pub images: usize,
    pub mean_permanent_area_fraction: Option<f64>,
    pub mean_hover_area_seconds: Option<f64>,
    pub mean_min_sigma_reached: Option<f64>,
    pub mean_clarity_time_integral: Option<f64>,
}

impl ExposureSummary {
    fn from_reports(reports: &[&ExposureReport]) -> Self {
        let n = reports.len();
        let mean = |f: fn(&ExposureReport) -> f64| {
            (n > 0).then(|| reports.iter().map(|r| f(r)).sum::<f64>() / n as f64)
        };
        Self {
            images: n,
            mean_permanent_area_fraction: mean(|r| r.permanent_area_fraction),
            mean_hover_area_seconds: mean(|r| r.hover_area_seconds),
            mean_min_sigma_reached: mean(|r| r.min_sigma_reached),
            mean_clarity_time_integral: mean(|r| r.clarity_time_integral),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SurveySummary {
    pub surveys: usize,
    pub mean_spane_p: Option<f64>,
    pub mean_spane_n: Option<f64>,
    pub mean_spane_balance: Option<f64>,
    pub mean_panas_pa: Option<f64>,
    pub mean_panas_na: Option<f64>,
    pub mean_exhaustion: Option<f64>,
    pub mean_peou: Option<f64>,
    pub mean_pu: Option<f64>,
}

impl SurveySummary {
    fn from_scores(scores: &[SurveyScores]) -> Self {
        let n = scores.len();
        let mean = |f: fn(&SurveyScores) -> f64| {
            (n > 0).then(|| scores.iter().map(f).sum::<f64>() / n as f64)
        };
        Self {
            surveys: n,
            mean_spane_p: mean(|s| s.spane_p as f64),
            mean_spane_n: mean(|s| s.spane_n as f64),
            mean_spane_balance: mean(|s| s.spane_balance as f64),
            mean_panas_pa: mean(|s| s.panas_pa as f64),
            mean_panas_na: mean(|s| s.panas_na as f64),
            mean_exhaustion: mean(|s| s.exhaustion_mean),
            mean_peou: mean(|s| s.peou_mean),
            mean_pu: mean(|s| s.pu_mean),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSection {
    pub stage_id: u8,
    pub sigma: f64,
    pub tool: RevealTool,
    pub sessions: usize,
    pub completed_sessions: usize,
    pub accuracy: StageAccuracy,
    pub exposure: ExposureSummary,
    pub exposure_by_category: [ExposureSummary; 3],
    pub survey: SurveySummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub stages: Vec<StageSection>,
    pub overall: AccuracyCell,
}

/// Builds the report over every stage that has at least one session.
pub fn build_report(state: &ExperimentState, battery: &Battery) -> Result<ExperimentReport, ExperimentError> {
    let mut responses = Vec::new();
    let mut exposures: BTreeMap<u8, Vec<(Category, ExposureReport)>> = BTreeMap::new();
    let mut scores: BTreeMap<u8, Vec<SurveyScores>> = BTreeMap::new();
    let mut sessions: BTreeMap<u8, (usize, usize, f64, RevealTool)> = BTreeMap::new();

    for s in state.sessions.values() {
        let stage = &s.session.stage;
        let entry = sessions
            .entry(stage.stage_id)
            .or_insert((0, 0, stage.sigma, stage.reveal_tool));
        entry.0 += 1;
        entry.1 += usize::from(s.is_completed());
        for task in &s.tasks {
            let Some((_, resp)) = s.activity.get(&task.image_id).and_then(|a| a.response.as_ref()) else {
                continue;
            };
            responses.push(StagedResponse {
                stage_id: stage.stage_id,
                response: resp.clone(),
            });
            let exposure = compute_exposure(s, &task.image_id, (task.width, task.height))?;
            exposures
                .entry(stage.stage_id)
                .or_default()
                .push((task.category, exposure));
        }
        if let Some((_, survey)) = &s.survey {
            let sc = battery
                .score(survey)
                .map_err(|e| ExperimentError::Validation(e.to_string()))?;
            scores.entry(stage.stage_id).or_default().push(sc);
        }
    }

    let stage_ids: Vec<u8> = sessions.keys().copied().collect();
    let gold = crate::experiment::gold_from_state(state);
    let accuracy = accuracy_report(&responses, &gold, &stage_ids)?;

    let mut stages = Vec::new();
    for (&stage_id, &(count, completed, sigma, tool)) in &sessions {
        let exp = exposures.get(&stage_id).map(Vec::as_slice).unwrap_or(&[]);
        let all: Vec<&ExposureReport> = exp.iter().map(|(_, r)| r).collect();
        let by_cat = Category::ALL.map(|c| {
            let sub: Vec<&ExposureReport> = exp.iter().filter(|(k, _)| *k == c).map(|(_, r)| r).collect();
            ExposureSummary::from_reports(&sub)
        });
        stages.push(StageSection {
            stage_id,
            sigma,
            tool,
            sessions: count,
            completed_sessions: completed,
            accuracy: accuracy.stages[&stage_id].clone(),
            exposure: ExposureSummary::from_reports(&all),
            exposure_by_category: by_cat,
            survey: SurveySummary::from_scores(scores.get(&stage_id).map(Vec::as_slice).unwrap_or(&[])),
        });
    }
    Ok(ExperimentReport {
        stages,
        overall: accuracy.overall,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

fn csv_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

impl ExperimentReport {
    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Table => self.to_table(),
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Json => {
                let mut s = serde_json::to_string_pretty(self).expect("report serializes");
                s.push('\n');
                s
            }
        }
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let o = &self.overall;
        let _ = writeln!(
            out,
            "overall: responses={} q1_accuracy={}",
            o.responses,
            fmt_opt(o.q1_accuracy())
        );
        for s in &self.stages {
            let a = &s.accuracy.overall;
            let _ = writeln!(out);
            let _ = writeln!(
                out,
                "== stage {} (sigma {}, tool {}) ==",
                s.stage_id,
                s.sigma,
                s.tool.as_str()
            );
            let _ = writeln!(
                out,
                "sessions {} (completed {}), responses {}",
                s.sessions, s.completed_sessions, a.responses
            );
            let _ = writeln!(
                out,
                "q1 accuracy {}  q2 realism accuracy {}  q3 approval rate {}  mean latency ms {}",
                fmt_opt(a.q1_accuracy()),
                fmt_opt(a.q2_accuracy()),
                fmt_opt(a.approval_rate()),
                fmt_opt(a.mean_latency_ms())
            );
            let _ = writeln!(
                out,
                "{:<12} {:>5} {:>8} {:>8} {:>8} | {:>10} {:>8} {:>6} {:>6}",
                "gold", "n", "q1_acc", "q2_acc", "approve", "sex_nudity", "graphic", "safe", "other"
            );
            for c in Category::ALL {
                let cell = &s.accuracy.per_category[c.index()];
                let row = &s.accuracy.confusion[c.index()];
                let _ = writeln!(
                    out,
                    "{:<12} {:>5} {:>8} {:>8} {:>8} | {:>10} {:>8} {:>6} {:>6}",
                    c.as_str(),
                    cell.responses,
                    fmt_opt(cell.q1_accuracy()),
                    fmt_opt(cell.q2_accuracy()),
                    fmt_opt(cell.approval_rate()),
                    row[CategoryAnswer::SexNudity.index()],
                    row[CategoryAnswer::Graphic.index()],
                    row[CategoryAnswer::Safe.index()],
                    row[CategoryAnswer::Other.index()],
                );
            }
            let e = &s.exposure;
            let _ = writeln!(
                out,
                "exposure: images {} permanent_area {} hover_area_s {} min_sigma {} clarity_s {}",
                e.images,
                fmt_opt(e.mean_permanent_area_fraction),
                fmt_opt(e.mean_hover_area_seconds),
                fmt_opt(e.mean_min_sigma_reached),
                fmt_opt(e.mean_clarity_time_integral)
            );
            let v = &s.survey;
            let _ = writeln!(
                out,
                "survey: n {} spane_p {} spane_n {} balance {} panas_pa {} panas_na {} exhaustion {} peou {} pu {}",
                v.surveys,
                fmt_opt(v.mean_spane_p),
                fmt_opt(v.mean_spane_n),
                fmt_opt(v.mean_spane_balance),
                fmt_opt(v.mean_panas_pa),
                fmt_opt(v.mean_panas_na),
                fmt_opt(v.mean_exhaustion),
                fmt_opt(v.mean_peou),
                fmt_opt(v.mean_pu)
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for s in &self.stages {
            let v = &s.survey;
            for c in Category::ALL {
                let cell = &s.accuracy.per_category[c.index()];
                let row = &s.accuracy.confusion[c.index()];
                let e = &s.exposure_by_category[c.index()];
                let fields = [
                    s.stage_id.to_string(),
                    s.sigma.to_string(),
                    s.tool.as_str().to_string(),
                    c.as_str().to_string(),
                    cell.responses.to_string(),
                    csv_opt(cell.q1_accuracy()),
                    csv_opt(cell.q2_accuracy()),
                    csv_opt(cell.approval_rate()),
                    csv_opt(cell.mean_latency_ms()),
                    row[0].to_string(),
                    row[1].to_string(),
                    row[2].to_string(),
                    row[3].to_string(),
                    csv_opt(e.mean_permanent_area_fraction),
                    csv_opt(e.mean_hover_area_seconds),
                    csv_opt(e.mean_min_sigma_reached),
                    csv_opt(e.mean_clarity_time_integral),
                    v.surveys.to_string(),
                    csv_opt(v.mean_spane_p),
                    csv_opt(v.mean_spane_n),
                    csv_opt(v.mean_spane_balance),
                    csv_opt(v.mean_panas_pa),
                    csv_opt(v.mean_panas_na),
                    csv_opt(v.mean_exhaustion),
                    csv_opt(v.mean_peou),
                    csv_opt(v.mean_pu),
                ];
                out.push_str(&fields.join(","));
                out.push('\n');
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_state_is_no_data() {
        let err = build_report(&ExperimentState::default(), &Battery::standard()).unwrap_err();
        assert!(matches!(err, ExperimentError::State(m) if m == "no data"));
    }

    #[test]
    fn header_column_count() {
        assert_eq!(CSV_HEADER.split(',').count(), 26);
    }

    #[test]
    fn format_parse() {
        assert_eq!("csv".parse::<ReportFormat>().unwrap(), ReportFormat::Csv);
        assert!("xml".parse::<ReportFormat>().is_err());
    }
}
