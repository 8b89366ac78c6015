//! Post-task survey battery: validation and scoring.
//!
//! Scoring depends only on each instrument's scale bounds and item keying.
//! Wording lives in an instrument-definition file (see
//! [`Battery::from_toml_str`]) and can be edited without touching scores.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SurveyError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("instrument definition: {0}")]
    Definition(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Keying {
    Positive,
    Negative,
    /// Contributes to a single-construct mean.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub text: String,
    pub key: Keying,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instrument {
    pub name: String,
    #[serde(default)]
    pub prompt: String,
    pub scale_min: u8,
    pub scale_max: u8,
    pub items: Vec<Item>,
}

impl Instrument {
    fn new(name: &str, prompt: &str, scale: (u8, u8), items: &[(&str, Keying)]) -> Self {
        Self {
            name: name.into(),
            prompt: prompt.into(),
            scale_min: scale.0,
            scale_max: scale.1,
            items: items
                .iter()
                .map(|(text, key)| Item {
                    text: (*text).into(),
                    key: *key,
                })
                .collect(),
        }
    }

    pub fn arity(&self) -> usize {
        self.items.len()
    }

    /// Checks arity and range, never clamping.
    pub fn validate(&self, ratings: &[u8]) -> Result<(), SurveyError> {
        if ratings.len() != self.items.len() {
            return Err(SurveyError::Validation(format!(
                "{} expects {} items, got {}",
                self.name,
                self.items.len(),
                ratings.len()
            )));
        }
        if let Some((i, v)) = ratings
            .iter()
            .enumerate()
            .find(|(_, v)| **v < self.scale_min || **v > self.scale_max)
        {
            return Err(SurveyError::Validation(format!(
                "{} item {} is {v}, outside {}..={}",
                self.name,
                i + 1,
                self.scale_min,
                self.scale_max
            )));
        }
        Ok(())
    }

    /// (positive sum, negative sum).
    pub fn keyed_sums(&self, ratings: &[u8]) -> Result<(u32, u32), SurveyError> {
        self.validate(ratings)?;
        let mut pos = 0u32;
        let mut neg = 0u32;
        for (item, v) in self.items.iter().zip(ratings) {
            match item.key {
                Keying::Positive => pos += *v as u32,
                Keying::Negative => neg += *v as u32,
                Keying::Mean => {}
            }
        }
        Ok((pos, neg))
    }

    pub fn mean(&self, ratings: &[u8]) -> Result<f64, SurveyError> {
        self.validate(ratings)?;
        Ok(ratings.iter().map(|v| *v as f64).sum::<f64>() / ratings.len() as f64)
    }

    fn count_keyed(&self, key: Keying) -> usize {
        self.items.iter().filter(|i| i.key == key).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Battery {
    pub spane: Instrument,
    pub panas: Instrument,
    pub exhaustion: Instrument,
    pub tam_peou: Instrument,
    pub tam_pu: Instrument,
}

impl Default for Battery {
    fn default() -> Self {
        Self::standard()
    }
}

impl Battery {
    /// Built-in battery. Item texts are short labels; ship a definition file
    /// to change wording.
    pub fn standard() -> Self {
        use Keying::*;
        Self {
            spane: Instrument::new(
                "SPANE",
                "Think about what you experienced during the moderation task. How often did you feel each of the following?",
                (1, 5),
                &[
                    ("Positive", Positive),
                    ("Negative", Negative),
                    ("Good", Positive),
                    ("Bad", Negative),
                    ("Pleasant", Positive),
                    ("Unpleasant", Negative),
                    ("Happy", Positive),
                    ("Sad", Negative),
                    ("Afraid", Negative),
                    ("Joyful", Positive),
                    ("Angry", Negative),
                    ("Contented", Positive),
                ],
            ),
            panas: Instrument::new(
                "I-PANAS-SF",
                "Indicate to what extent you feel this way right now.",
                (1, 7),
                &[
                    ("Upset", Negative),
                    ("Hostile", Negative),
                    ("Alert", Positive),
                    ("Ashamed", Negative),
                    ("Inspired", Positive),
                    ("Nervous", Negative),
                    ("Determined", Positive),
                    ("Attentive", Positive),
                    ("Afraid", Negative),
                    ("Active", Positive),
                ],
            ),
            exhaustion: Instrument::new(
                "Emotional exhaustion",
                "Imagine this task were your full-time job. How much do you agree with each statement?",
                (1, 7),
                &[
                    ("I would feel emotionally drained by this work.", Mean),
                    ("I would feel used up at the end of the workday.", Mean),
                    ("I would feel fatigued when I get up in the morning and have to face another day on this job.", Mean),
                    ("Working with this content all day would be a real strain for me.", Mean),
                    ("I would feel burned out from this work.", Mean),
                    ("I would feel frustrated by this job.", Mean),
                ],
            ),
            tam_peou: Instrument::new(
                "TAM perceived ease of use",
                "How much do you agree with each statement about the moderation interface?",
                (1, 7),
                &[
                    ("Learning to use the interface was easy for me.", Mean),
                    ("I found it easy to get the interface to do what I wanted.", Mean),
                    ("My interaction with the interface was clear and understandable.", Mean),
                    ("I found the interface flexible to interact with.", Mean),
                    ("It would be easy for me to become skillful at using the interface.", Mean),
                    ("I found the interface easy to use.", Mean),
                ],
            ),
            tam_pu: Instrument::new(
                "TAM perceived usefulness",
                "How much do you agree with each statement about the image obfuscation?",
                (1, 7),
                &[
                    ("The obfuscation would enable me to moderate images more quickly.", Mean),
                    ("The obfuscation would improve my moderation performance.", Mean),
                    ("The obfuscation would increase my productivity.", Mean),
                    ("The obfuscation would enhance my effectiveness at moderation.", Mean),
                    ("The obfuscation would make moderation easier.", Mean),
                    ("I would find the obfuscation useful in moderation.", Mean),
                ],
            ),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, SurveyError> {
        let battery: Battery =
            toml::from_str(text).map_err(|e| SurveyError::Definition(e.to_string()))?;
        battery.check()?;
        Ok(battery)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("battery serializes")
    }

    /// Structural checks on a loaded battery.
    pub fn check(&self) -> Result<(), SurveyError> {
        let def = |m: String| Err(SurveyError::Definition(m));
        for inst in [&self.spane, &self.panas, &self.exhaustion, &self.tam_peou, &self.tam_pu] {
            if inst.scale_min == 0 || inst.scale_min >= inst.scale_max {
                return def(format!("{}: bad scale {}..{}", inst.name, inst.scale_min, inst.scale_max));
            }
            if inst.items.is_empty() {
                return def(format!("{}: no items", inst.name));
            }
        }
        let s = &self.spane;
        if s.arity() != 12 || s.count_keyed(Keying::Positive) != 6 || s.count_keyed(Keying::Negative) != 6 {
            return def("SPANE needs 12 items, 6 positive- and 6 negative-keyed".into());
        }
        let p = &self.panas;
        if p.arity() != 10 || p.count_keyed(Keying::Positive) != 5 || p.count_keyed(Keying::Negative) != 5 {
            return def("PANAS needs 10 items, 5 positive- and 5 negative-keyed".into());
        }
        Ok(())
    }

    pub fn score(&self, response: &SurveyResponse) -> Result<SurveyScores, SurveyError> {
        let (spane_p, spane_n) = self.spane.keyed_sums(&response.spane_items)?;
        let (panas_pa, panas_na) = self.panas.keyed_sums(&response.panas_items)?;
        Ok(SurveyScores {
            spane_p,
            spane_n,
            spane_balance: spane_p as i32 - spane_n as i32,
            panas_pa,
            panas_na,
            exhaustion_mean: self.exhaustion.mean(&response.exhaustion_items)?,
            peou_mean: self.tam_peou.mean(&response.tam_peou_items)?,
            pu_mean: self.tam_pu.mean(&response.tam_pu_items)?,
        })
    }
}

/// Free-text demographic answers; any field may be "prefer not to say".
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demographics {
    #[serde(default)]
    pub age_band: String,
    #[serde(default)]
    pub gender: String,
    #[serde(default)]
    pub race_ethnicity: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyResponse {
    #[serde(default)]
    pub session_id: String,
    #[serde(default)]
    pub demographics: Demographics,
    pub spane_items: Vec<u8>,
    pub panas_items: Vec<u8>,
    pub exhaustion_items: Vec<u8>,
    pub tam_peou_items: Vec<u8>,
    pub tam_pu_items: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurveyScores {
    pub spane_p: u32,
    pub spane_n: u32,
    pub spane_balance: i32,
    pub panas_pa: u32,
    pub panas_na: u32,
    pub exhaustion_mean: f64,
    pub peou_mean: f64,
    pub pu_mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpaneScores {
    pub positive: u32,
    pub negative: u32,
    pub balance: i32,
}

/// SPANE with the standard keying.
pub fn score_spane(items: &[u8]) -> Result<SpaneScores, SurveyError> {
    let (positive, negative) = Battery::standard().spane.keyed_sums(items)?;
    Ok(SpaneScores {
        positive,
        negative,
        balance: positive as i32 - negative as i32,
    })
}

/// I-PANAS-SF on a 7-point scale: (positive affect, negative affect).
pub fn score_panas(items: &[u8]) -> Result<(u32, u32), SurveyError> {
    Battery::standard().panas.keyed_sums(items)
}

pub fn score_exhaustion(items: &[u8]) -> Result<f64, SurveyError> {
    Battery::standard().exhaustion.mean(items)
}

/// (perceived ease of use, perceived usefulness) means.
pub fn score_tam(peou_items: &[u8], pu_items: &[u8]) -> Result<(f64, f64), SurveyError> {
    let b = Battery::standard();
    Ok((b.tam_peou.mean(peou_items)?, b.tam_pu.mean(pu_items)?))
}

/// Positions of positive- and negative-keyed items, in item order.
pub fn keyed_positions(instrument: &Instrument) -> (Vec<usize>, Vec<usize>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (i, item) in instrument.items.iter().enumerate() {
        match item.key {
            Keying::Positive => pos.push(i),
            Keying::Negative => neg.push(i),
            Keying::Mean => {}
        }
    }
    (pos, neg)
}

/// Interleaves keyed ratings into item order.
pub fn place_keyed(instrument: &Instrument, positive: &[u8], negative: &[u8]) -> Vec<u8> {
    let (p, n) = keyed_positions(instrument);
    let mut out = vec![instrument.scale_min; instrument.arity()];
    for (slot, v) in p.iter().zip(positive) {
        out[*slot] = *v;
    }
    for (slot, v) in n.iter().zip(negative) {
        out[*slot] = *v;
    }
    out
}
