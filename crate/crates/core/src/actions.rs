//! Nine-way direction actions, expert quantisation and the clipped position update.
//!
//! Image coordinates grow downward, so action 1 points to smaller `y`.
//! Actions 1–8 sweep clockwise in 45° steps; action 9 is idle.

use thiserror::Error;

use crate::geom::PixelPoint;

pub const NUM_ACTIONS: usize = 9;
pub const IDLE_ACTION: u8 = 9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ActionError {
    #[error("action id {0} outside 1..=9")]
    InvalidAction(u8),
    #[error("invalid probability vector: {0}")]
    InvalidDistribution(String),
    #[error("delta_max must lie in (0, 1], got {0}")]
    InvalidDeltaMax(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionConfig {
    pub delta_max: f64,
    /// Expert displacements shorter than this are labelled idle.
    pub idle_eps: f64,
}

impl Default for ActionConfig {
    fn default() -> Self {
        Self {
            delta_max: 0.05,
            idle_eps: 1e-4,
        }
    }
}

impl ActionConfig {
    pub fn validate(&self) -> Result<(), ActionError> {
        if !(self.delta_max > 0.0 && self.delta_max <= 1.0) {
            return Err(ActionError::InvalidDeltaMax(self.delta_max));
        }
        Ok(())
    }
}

/// Unit vectors indexed by `action_id − 1`.
pub fn unit_vectors() -> [(f64, f64); NUM_ACTIONS] {
    let mut out = [(0.0, 0.0); NUM_ACTIONS];
    for (i, u) in out.iter_mut().take(8).enumerate() {
        let angle = i as f64 * std::f64::consts::FRAC_PI_4;
        *u = (angle.sin(), -angle.cos());
    }
    out
}

pub fn unit_vector(action: u8) -> Result<(f64, f64), ActionError> {
    if !(1..=9).contains(&action) {
        return Err(ActionError::InvalidAction(action));
    }
    Ok(unit_vectors()[usize::from(action - 1)])
}

/// Nearest compass direction of `delta`, or idle when shorter than `idle_eps`.
pub fn quantize_displacement(delta: (f64, f64), idle_eps: f64) -> u8 {
    if delta.0.hypot(delta.1) < idle_eps {
        return IDLE_ACTION;
    }
    let units = unit_vectors();
    let mut best = 0;
    let mut best_dot = f64::NEG_INFINITY;
    for (i, u) in units.iter().take(8).enumerate() {
        let dot = delta.0 * u.0 + delta.1 * u.1;
        if dot > best_dot {
            best = i;
            best_dot = dot;
        }
    }
    best as u8 + 1
}

/// Zero-based index into the action table for an action id.
pub fn action_index(action: u8) -> usize {
    usize::from(action - 1)
}

pub fn validate_probs(probs: &[f64]) -> Result<(), ActionError> {
    if probs.len() != NUM_ACTIONS {
        return Err(ActionError::InvalidDistribution(format!("expected 9 entries, got {}", probs.len())));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(ActionError::InvalidDistribution("negative or non-finite entry".into()));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(ActionError::InvalidDistribution(format!("entries sum to {sum}")));
    }
    Ok(())
}

/// `Σ_a π(a)·u_a`.
pub fn expected_direction(probs: &[f64]) -> Result<(f64, f64), ActionError> {
    validate_probs(probs)?;
    Ok(mix_directions(probs))
}

/// Unchecked mixture; callers guarantee a valid distribution.
pub(crate) fn mix_directions(probs: &[f64]) -> (f64, f64) {
    unit_vectors()
        .iter()
        .zip(probs)
        .fold((0.0, 0.0), |acc, (u, p)| (acc.0 + p * u.0, acc.1 + p * u.1))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput {
    pub probs: [f64; NUM_ACTIONS],
    pub magnitude: f64,
}

impl PolicyOutput {
    pub fn one_hot(action: u8, magnitude: f64) -> Result<Self, ActionError> {
        unit_vector(action)?;
        let mut probs = [0.0; NUM_ACTIONS];
        probs[action_index(action)] = 1.0;
        Ok(Self { probs, magnitude })
    }

    pub fn argmax(&self) -> u8 {
        argmax(&self.probs) as u8 + 1
    }
}

/// First index of the largest entry.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// `clip(p + m·Σπ·u, 0, 1)` per coordinate.
pub fn step(p: PixelPoint, out: &PolicyOutput, cfg: &ActionConfig) -> Result<PixelPoint, ActionError> {
    let (dx, dy) = expected_direction(&out.probs)?;
    let m = out.magnitude.clamp(0.0, cfg.delta_max);
    Ok(PixelPoint::new(p.x + m * dx, p.y + m * dy).clipped())
}
