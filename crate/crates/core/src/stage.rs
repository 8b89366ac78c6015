//! The six obfuscation conditions.

use serde::{Deserialize, Serialize};

use crate::experiment::ExperimentError;

pub const STAGE_COUNT: u8 = 6;
pub const DEFAULT_SLIDER_LEVELS: [f64; 8] = [14.0, 12.0, 10.0, 8.0, 6.0, 4.0, 2.0, 0.0];
/// Default reveal-region radius for click and hover tools, in pixels.
pub const DEFAULT_REGION_RADIUS: u32 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevealTool {
    None,
    Click,
    Hover,
    Slider,
}

impl RevealTool {
    pub fn as_str(&self) -> &'static str {
        match self {
            RevealTool::None => "none",
            RevealTool::Click => "click",
            RevealTool::Hover => "hover",
            RevealTool::Slider => "slider",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub stage_id: u8,
    pub sigma: f64,
    pub reveal_tool: RevealTool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slider_levels: Option<Vec<f64>>,
}

/// Canonical configuration for `stage_id` with the default slider levels.
pub fn make_stage_config(stage_id: u8) -> Result<StageConfig, ExperimentError> {
    make_stage_config_with(stage_id, &DEFAULT_SLIDER_LEVELS)
}

/// As [`make_stage_config`], with custom slider levels for stage 6.
pub fn make_stage_config_with(stage_id: u8, slider_levels: &[f64]) -> Result<StageConfig, ExperimentError> {
    let (sigma, tool) = match stage_id {
        1 => (0.0, RevealTool::None),
        2 => (7.0, RevealTool::None),
        3 => (14.0, RevealTool::None),
        4 => (14.0, RevealTool::Click),
        5 => (14.0, RevealTool::Hover),
        6 => (14.0, RevealTool::Slider),
        other => {
            return Err(ExperimentError::InvalidParameter(format!(
                "stage must be in 1..=6, got {other}"
            )))
        }
    };
    let slider_levels = if tool == RevealTool::Slider {
        validate_levels(slider_levels, sigma)?;
        Some(slider_levels.to_vec())
    } else {
        None
    };
    Ok(StageConfig {
        stage_id,
        sigma,
        reveal_tool: tool,
        slider_levels,
    })
}

pub fn validate_levels(levels: &[f64], max_sigma: f64) -> Result<(), ExperimentError> {
    if levels.is_empty() {
        return Err(ExperimentError::InvalidParameter("slider levels are empty".into()));
    }
    if levels.iter().any(|l| !l.is_finite() || *l < 0.0 || *l > max_sigma) {
        return Err(ExperimentError::InvalidParameter(format!(
            "slider levels must lie in [0, {max_sigma}]"
        )));
    }
    if levels.windows(2).any(|w| w[0] <= w[1]) {
        return Err(ExperimentError::InvalidParameter(
            "slider levels must be strictly decreasing".into(),
        ));
    }
    Ok(())
}

impl StageConfig {
    /// Sigmas a client may fetch full renditions at.
    pub fn allowed_sigmas(&self) -> Vec<f64> {
        let mut out = vec![self.sigma];
        if let Some(levels) = &self.slider_levels {
            for l in levels {
                if !out.iter().any(|s| same_sigma(*s, *l)) {
                    out.push(*l);
                }
            }
        }
        out
    }

    pub fn allows_sigma(&self, sigma: f64) -> bool {
        self.allowed_sigmas().iter().any(|s| same_sigma(*s, sigma))
    }

    /// Nearest slider level; ties go to the blurrier level.
    pub fn snap_to_level(&self, sigma: f64) -> f64 {
        let Some(levels) = &self.slider_levels else {
            return self.sigma;
        };
        let mut best = levels[0];
        for &l in levels {
            let (d, db) = ((l - sigma).abs(), (best - sigma).abs());
            if d < db || (d == db && l > best) {
                best = l;
            }
        }
        best
    }

    pub fn permits_tiles(&self) -> bool {
        matches!(self.reveal_tool, RevealTool::Click | RevealTool::Hover)
    }
}

/// Sigma equality at milli-sigma resolution.
pub fn same_sigma(a: f64, b: f64) -> bool {
    sigma_key(a) == sigma_key(b)
}

/// Integer key for a sigma (thousandths), used for cache names and comparisons.
pub fn sigma_key(sigma: f64) -> i64 {
    (sigma * 1000.0).round() as i64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_matrix() {
        let expected = [
            (1, 0.0, RevealTool::None),
            (2, 7.0, RevealTool::None),
            (3, 14.0, RevealTool::None),
            (4, 14.0, RevealTool::Click),
            (5, 14.0, RevealTool::Hover),
            (6, 14.0, RevealTool::Slider),
        ];
        for (id, sigma, tool) in expected {
            let c = make_stage_config(id).unwrap();
            assert_eq!((c.stage_id, c.sigma, c.reveal_tool), (id, sigma, tool));
            assert_eq!(c.slider_levels.is_some(), id == 6);
        }
        assert_eq!(
            make_stage_config(6).unwrap().slider_levels.unwrap(),
            DEFAULT_SLIDER_LEVELS.to_vec()
        );
        assert!(make_stage_config(0).is_err());
        assert!(make_stage_config(7).is_err());
    }

    #[test]
    fn allowed_and_snapping() {
        let s3 = make_stage_config(3).unwrap();
        assert!(s3.allows_sigma(14.0));
        assert!(!s3.allows_sigma(0.0));
        let s6 = make_stage_config(6).unwrap();
        assert!(s6.allows_sigma(8.0));
        assert!(!s6.allows_sigma(9.0));
        assert_eq!(s6.snap_to_level(9.0), 10.0);
        assert_eq!(s6.snap_to_level(8.9), 8.0);
        assert_eq!(s6.snap_to_level(0.4), 0.0);
        assert!(make_stage_config_with(6, &[14.0, 14.0]).is_err());
        assert!(make_stage_config_with(6, &[20.0, 0.0]).is_err());
    }
}
