//! Per-stage classification accuracy against gold labels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Category, GoldLabels};
use crate::experiment::{ExperimentError, StagedResponse};

/// Tallies for one slice of responses (a stage, or a stage and gold category).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCell {
    pub responses: usize,
    pub q1_correct: usize,
    pub q2_correct: usize,
    pub q3_approved: usize,
    pub latency_total_ms: u64,
}

impl AccuracyCell {
    fn ratio(num: usize, den: usize) -> Option<f64> {
        (den > 0).then(|| num as f64 / den as f64)
    }

    pub fn q1_accuracy(&self) -> Option<f64> {
        Self::ratio(self.q1_correct, self.responses)
    }

    pub fn q2_accuracy(&self) -> Option<f64> {
        Self::ratio(self.q2_correct, self.responses)
    }

    pub fn approval_rate(&self) -> Option<f64> {
        Self::ratio(self.q3_approved, self.responses)
    }

    pub fn mean_latency_ms(&self) -> Option<f64> {
        (self.responses > 0).then(|| self.latency_total_ms as f64 / self.responses as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageAccuracy {
    pub stage_id: u8,
    pub overall: AccuracyCell,
    /// Indexed by gold category.
    pub per_category: [AccuracyCell; 3],
    /// Rows: gold category. Columns: answer (sex_nudity, graphic, safe, other).
    pub confusion: [[usize; 4]; 3],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub stages: BTreeMap<u8, StageAccuracy>,
    pub overall: AccuracyCell,
}

impl AccuracyReport {
    pub fn stage(&self, stage_id: u8) -> Option<&StageAccuracy> {
        self.stages.get(&stage_id)
    }
}

/// Scores responses against gold. Every listed stage gets a section, even
/// when it has no responses.
pub fn accuracy_report(
    responses: &[StagedResponse],
    gold: &impl GoldLabels,
    stages: &[u8],
) -> Result<AccuracyReport, ExperimentError> {
    if responses.is_empty() {
        return Err(ExperimentError::State("no data".into()));
    }
    let mut report = AccuracyReport::default();
    for &s in stages {
        report.stages.insert(
            s,
            StageAccuracy {
                stage_id: s,
                ..Default::default()
            },
        );
    }
    for staged in responses {
        let r = &staged.response;
        let (category, realism) = gold.gold(&r.image_id).ok_or_else(|| {
            ExperimentError::InvalidParameter(format!("response references unknown image {}", r.image_id))
        })?;
        let stage = report.stages.entry(staged.stage_id).or_insert_with(|| StageAccuracy {
            stage_id: staged.stage_id,
            ..Default::default()
        });
        stage.confusion[category.index()][r.q1_category.index()] += 1;
        let correct = r.q1_category.matches(category);
        let realism_ok = r.q2_realistic == realism.is_realistic();
        for cell in [
            &mut stage.overall,
            &mut stage.per_category[category.index()],
            &mut report.overall,
        ] {
            cell.responses += 1;
            cell.q1_correct += usize::from(correct);
            cell.q2_correct += usize::from(realism_ok);
            cell.q3_approved += usize::from(r.q3_approve);
            cell.latency_total_ms += r.latency_ms;
        }
    }
    Ok(report)
}

pub fn category_of(index: usize) -> Category {
    Category::ALL[index]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Realism;
    use crate::experiment::{CategoryAnswer, ModerationResponse};

    fn gold() -> BTreeMap<String, (Category, Realism)> {
        let mut g = BTreeMap::new();
        for (i, c) in Category::ALL.iter().cycle().take(6).enumerate() {
            g.insert(format!("i{i}"), (*c, Realism::Realistic));
        }
        g
    }

    fn staged(stage: u8, id: &str, q1: CategoryAnswer) -> StagedResponse {
        StagedResponse {
            stage_id: stage,
            response: ModerationResponse {
                image_id: id.into(),
                q1_category: q1,
                q1_other_text: (q1 == CategoryAnswer::Other).then(|| "x".into()),
                q2_realistic: true,
                q3_approve: false,
                q4_rationale: None,
                latency_ms: 1000,
            },
        }
    }

    #[test]
    fn perfect_answers() {
        let g = gold();
        let rs: Vec<_> = (0..6)
            .map(|i| staged(1, &format!("i{i}"), Category::ALL[i % 3].into()))
            .collect();
        let rep = accuracy_report(&rs, &g, &[1]).unwrap();
        let s = rep.stage(1).unwrap();
        assert_eq!(s.overall.q1_accuracy(), Some(1.0));
        for c in &s.per_category {
            assert_eq!(c.q1_accuracy(), Some(1.0));
        }
    }

    #[test]
    fn four_of_six() {
        let g = gold();
        let mut rs: Vec<_> = (0..4)
            .map(|i| staged(2, &format!("i{i}"), Category::ALL[i % 3].into()))
            .collect();
        // i4 is graphic, i5 is safe.
        rs.push(staged(2, "i4", CategoryAnswer::Other));
        rs.push(staged(2, "i5", CategoryAnswer::SexNudity));
        let rep = accuracy_report(&rs, &g, &[2]).unwrap();
        let s = rep.stage(2).unwrap();
        assert!((s.overall.q1_accuracy().unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.confusion[Category::Graphic.index()][CategoryAnswer::Other.index()], 1);
        assert_eq!(s.confusion[Category::Safe.index()][CategoryAnswer::SexNudity.index()], 1);
        assert_eq!(s.confusion.iter().flatten().sum::<usize>(), 6);
        assert_eq!(s.overall.mean_latency_ms(), Some(1000.0));
        assert_eq!(s.overall.approval_rate(), Some(0.0));
    }

    #[test]
    fn errors() {
        let g = gold();
        assert!(matches!(accuracy_report(&[], &g, &[1]), Err(ExperimentError::State(m)) if m == "no data"));
        assert!(matches!(
            accuracy_report(&[staged(1, "zzz", CategoryAnswer::Safe)], &g, &[1]),
            Err(ExperimentError::InvalidParameter(_))
        ));
    }
}
