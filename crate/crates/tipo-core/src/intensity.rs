//! Rule-based persona scores and the weighting/gating machinery built on
//! them.
//!
//! A step scores `aligned_score` when its privacy category agrees with the
//! persona (Protective for privacy-first, Exposing for utility-first),
//! `conflict_score` when it is the other persona's category, and
//! `neutral_score` otherwise. Placeholders always score 0. The per-column
//! preference intensity is
//!
//! ```text
//! delta  = score(chosen) - score(rejected)
//! alpha  = clip(delta / delta_max, 0, 1) ^ gamma      (0^0 := 0)
//! ```
//!
//! so columns where the chosen side is not actually better contribute
//! nothing, and saturated deltas contribute full weight.

use serde::{Deserialize, Serialize};

use crate::align::{AlignedColumn, AlignedSlot};
use crate::error::{Error, Result};
use crate::traj::{Persona, PrivacyCategory, Step};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreConfig {
    pub aligned_score: i32,
    pub conflict_score: i32,
    pub neutral_score: i32,
    pub delta_max: f64,
    pub gamma: f64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            aligned_score: 2,
            conflict_score: -2,
            neutral_score: 0,
            delta_max: 4.0,
            gamma: 1.0,
        }
    }
}

impl ScoreConfig {
    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_max.is_finite() && self.delta_max > 0.0) {
            return Err(Error::Config(format!(
                "delta_max must be positive, got {}",
                self.delta_max
            )));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::Config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Persona-conditioned score of a single step.
pub fn score_action(step: &Step, persona: Persona, cfg: &ScoreConfig) -> i32 {
    if step.action == crate::traj::ActionType::NoAction {
        return 0;
    }
    let aligned_cat = match persona {
        Persona::PrivacyFirst => PrivacyCategory::Protective,
        Persona::UtilityFirst => PrivacyCategory::Exposing,
    };
    let cat = step.category();
    if cat == aligned_cat {
        cfg.aligned_score
    } else if cat == PrivacyCategory::Neutral {
        cfg.neutral_score
    } else {
        cfg.conflict_score
    }
}

pub fn score_slot(slot: &AlignedSlot, persona: Persona, cfg: &ScoreConfig) -> i32 {
    match slot {
        AlignedSlot::Step(s) => score_action(s, persona, cfg),
        AlignedSlot::NoAction => 0,
    }
}

/// Score difference chosen minus rejected for one aligned column.
pub fn delta_score(col: &AlignedColumn, persona: Persona, cfg: &ScoreConfig) -> i32 {
    score_slot(&col.chosen, persona, cfg) - score_slot(&col.rejected, persona, cfg)
}

/// Preference-intensity weight in [0, 1]. Non-positive deltas get exactly
/// zero even at gamma = 0 (the 0^0 := 0 convention), so "no real
/// preference" can never sneak back in through the exponent.
pub fn intensity_weight(delta: f64, cfg: &ScoreConfig) -> f64 {
    let base = (delta / cfg.delta_max).clamp(0.0, 1.0);
    if base == 0.0 {
        0.0
    } else {
        base.powf(cfg.gamma)
    }
}

/// Padding gate: 0 when the chosen side is the placeholder, else 1. With
/// `gate_rejected` set, rejected-side placeholders are gated out too.
pub fn padding_gate(col: &AlignedColumn, gate_rejected: bool) -> f64 {
    if col.chosen.is_placeholder() || (gate_rejected && col.rejected.is_placeholder()) {
        0.0
    } else {
        1.0
    }
}
