//! Scripted-worker profiles for `simulate`.
//!
//! A profile gives, per stage, the probability of each Q1 answer for each
//! gold category, plus reveal-behaviour ranges shared by all stages.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use veilmod_core::corpus::Category;
use veilmod_core::experiment::CategoryAnswer;

use crate::CliError;

const ANSWERS: [CategoryAnswer; 4] = [
    CategoryAnswer::SexNudity,
    CategoryAnswer::Graphic,
    CategoryAnswer::Safe,
    CategoryAnswer::Other,
];

/// Answer weights per gold category, columns ordered
/// `[sex_nudity, graphic, safe, other]`. Rows need not be normalised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Confusion {
    pub sex_nudity: [f64; 4],
    pub graphic: [f64; 4],
    pub safe: [f64; 4],
}

impl Confusion {
    pub fn identity() -> Self {
        Self {
            sex_nudity: [1.0, 0.0, 0.0, 0.0],
            graphic: [0.0, 1.0, 0.0, 0.0],
            safe: [0.0, 0.0, 1.0, 0.0],
        }
    }

    pub fn row(&self, gold: Category) -> &[f64; 4] {
        match gold {
            Category::SexNudity => &self.sex_nudity,
            Category::Graphic => &self.graphic,
            Category::Safe => &self.safe,
        }
    }
}

/// Probability of approving (Q3) per gold category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApproveRates {
    pub sex_nudity: f64,
    pub graphic: f64,
    pub safe: f64,
}

impl Default for ApproveRates {
    fn default() -> Self {
        Self {
            sex_nudity: 0.0,
            graphic: 0.0,
            safe: 1.0,
        }
    }
}

impl ApproveRates {
    fn get(&self, gold: Category) -> f64 {
        match gold {
            Category::SexNudity => self.sex_nudity,
            Category::Graphic => self.graphic,
            Category::Safe => self.safe,
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerModel {
    pub confusion: Confusion,
    /// Probability that Q2 (realistic or not) is answered correctly.
    #[serde(default = "one")]
    pub realism_accuracy: f64,
    #[serde(default)]
    pub approve: ApproveRates,
}

impl Default for AnswerModel {
    fn default() -> Self {
        Self {
            confusion: Confusion::identity(),
            realism_accuracy: 1.0,
            approve: ApproveRates::default(),
        }
    }
}

/// Inclusive `[min, max]` ranges that drive reveal scripts and pacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Behavior {
    pub view_ms: [u64; 2],
    pub step_ms: [u64; 2],
    pub clicks: [u32; 2],
    pub hovers: [u32; 2],
    pub hover_ms: [u64; 2],
    /// Sigma at which a stage-6 worker stops sliding.
    pub slider_stop: [f64; 2],
    /// Share of responses with a Q4 rationale.
    pub rationale_rate: f64,
    /// Also issue requests a compliant client never makes (sharp renditions
    /// in blurred stages, tiles in tool-less stages); all must be refused.
    pub probes: bool,
}

impl Default for Behavior {
    fn default() -> Self {
        Self {
            view_ms: [1000, 5000],
            step_ms: [100, 800],
            clicks: [1, 3],
            hovers: [1, 3],
            hover_ms: [300, 1500],
            slider_stop: [0.0, 14.0],
            rationale_rate: 0.3,
            probes: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccuracyProfile {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub default: AnswerModel,
    /// Per-stage overrides keyed by stage number ("1".."6"); replace the default wholesale.
    #[serde(default)]
    pub stages: BTreeMap<String, AnswerModel>,
    #[serde(default)]
    pub behavior: Behavior,
}

impl Default for AccuracyProfile {
    fn default() -> Self {
        Self {
            name: "identity".into(),
            default: AnswerModel::default(),
            stages: BTreeMap::new(),
            behavior: Behavior::default(),
        }
    }
}

impl AccuracyProfile {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let p: AccuracyProfile =
            toml::from_str(text).map_err(|e| CliError::validation(format!("accuracy profile: {e}")))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| CliError::validation(format!("{}: {}", path.display(), e.message)))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::validation(m));
        for (key, model) in std::iter::once(("default", &self.default)).chain(self.stages.iter().map(|(k, v)| (k.as_str(), v))) {
            if key != "default" && !matches!(key.parse::<u8>(), Ok(1..=6)) {
                return bad(format!("stage key {key:?} must be 1..6"));
            }
            for gold in Category::ALL {
                let row = model.confusion.row(gold);
                if row.iter().any(|w| !w.is_finite() || *w < 0.0) || row.iter().sum::<f64>() <= 0.0 {
                    return bad(format!("[{key}] confusion row {gold} needs non-negative weights with a positive sum"));
                }
                let a = model.approve.get(gold);
                if !(0.0..=1.0).contains(&a) {
                    return bad(format!("[{key}] approve rate for {gold} must be in [0, 1]"));
                }
            }
            if !(0.0..=1.0).contains(&model.realism_accuracy) {
                return bad(format!("[{key}] realism_accuracy must be in [0, 1]"));
            }
        }
        let b = &self.behavior;
        let ordered = b.view_ms[0] <= b.view_ms[1]
            && b.step_ms[0] <= b.step_ms[1]
            && b.clicks[0] <= b.clicks[1]
            && b.hovers[0] <= b.hovers[1]
            && b.hover_ms[0] <= b.hover_ms[1]
            && b.slider_stop[0] <= b.slider_stop[1];
        if !ordered {
            return bad("behavior ranges must be [min, max] with min <= max".into());
        }
        if b.slider_stop.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return bad("behavior.slider_stop must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&b.rationale_rate) {
            return bad("behavior.rationale_rate must be in [0, 1]".into());
        }
        Ok(())
    }

    pub fn model(&self, stage_id: u8) -> &AnswerModel {
        self.stages.get(&stage_id.to_string()).unwrap_or(&self.default)
    }
}

impl AnswerModel {
    pub fn sample_q1(&self, gold: Category, rng: &mut impl Rng) -> CategoryAnswer {
        let dist = WeightedIndex::new(self.confusion.row(gold)).expect("validated weights");
        ANSWERS[dist.sample(rng)]
    }

    pub fn sample_q2(&self, realistic: bool, rng: &mut impl Rng) -> bool {
        if rng.random_bool(self.realism_accuracy) {
            realistic
        } else {
            !realistic
        }
    }

    pub fn sample_q3(&self, gold: Category, rng: &mut impl Rng) -> bool {
        rng.random_bool(self.approve.get(gold))
    }
}
