//! Per-step reward from densified supervision.

use serde::{Deserialize, Serialize};

use crate::geom::{DenseSample, PixelPoint};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub r_time: f64,
    pub r_prox_max: f64,
    /// Distance (normalised units) at which proximity reward crosses zero.
    pub tau_dist: f64,
    /// Optional lower bound on the proximity and terminal terms; off by default.
    pub clamp_prox_at: Option<f64>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            r_time: -0.01,
            r_prox_max: 0.5,
            tau_dist: 0.02,
            clamp_prox_at: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub time: f64,
    pub prox: f64,
    pub term: f64,
    pub total: f64,
    pub d_k: f64,
    pub w_k: f64,
}

pub fn confidence_weight(is_keyframe: bool, confidence: f64) -> f64 {
    if is_keyframe {
        1.0
    } else {
        0.5 + 0.5 * confidence
    }
}

pub fn step_reward(pred: PixelPoint, reference: &DenseSample, is_final: bool, cfg: &RewardConfig) -> RewardBreakdown {
    let d_k = pred.distance(reference.point);
    let w_k = confidence_weight(reference.is_keyframe, reference.confidence);
    let mut prox = w_k * cfg.r_prox_max * (1.0 - d_k / cfg.tau_dist);
    if let Some(floor) = cfg.clamp_prox_at {
        prox = prox.max(floor);
    }
    let term = if is_final { prox } else { 0.0 };
    RewardBreakdown {
        time: cfg.r_time,
        prox,
        term,
        total: cfg.r_time + prox + term,
        d_k,
        w_k,
    }
}
