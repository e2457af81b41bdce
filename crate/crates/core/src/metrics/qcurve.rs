use serde::{Deserialize, Serialize};

use crate::actions::{action_index, argmax, NUM_ACTIONS};
use crate::autodiff::Tape;
use crate::dataset::Episode;
use crate::encoders::{ObservationClip, StateInput};
use crate::model::TrajModel;

use super::MetricsError;

/// Pessimistic values along one expert episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QPoint {
    pub step: usize,
    /// `min(Q1, Q2)` at the policy's most likely action.
    pub q_policy: f64,
    /// `min(Q1, Q2)` at the demonstrated action.
    pub q_expert: f64,
    pub policy_action: u8,
    pub expert_action: u8,
    pub keyframe: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QCurve {
    pub episode: String,
    pub points: Vec<QPoint>,
}

/// Evaluates the critics on the expert states of `episode`.
pub fn qcurve(model: &TrajModel, episode: &Episode, clip: &ObservationClip) -> Result<QCurve, MetricsError> {
    if episode.transitions.is_empty() {
        return Err(MetricsError::EmptyTrajectory);
    }
    let mut tape = Tape::new();
    let z = model.encode_clips(&mut tape, &[clip])?;
    let inputs = episode
        .transitions
        .iter()
        .map(|t| StateInput::new(0, t.position, t.guidance, t.step, t.horizon))
        .collect::<Result<Vec<_>, _>>()?;
    let s = model.encode_states(&mut tape, z, &inputs)?;
    let q = model.min_q_values(&mut tape, s)?;
    let pi = model.policy_values(&mut tape, s)?;
    let points = episode
        .transitions
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let row = &q[i * NUM_ACTIONS..(i + 1) * NUM_ACTIONS];
            let a_pi = argmax(&pi.probs[i * NUM_ACTIONS..(i + 1) * NUM_ACTIONS]);
            QPoint {
                step: t.step,
                q_policy: row[a_pi],
                q_expert: row[action_index(t.action)],
                policy_action: a_pi as u8 + 1,
                expert_action: t.action,
                keyframe: t.reference.is_keyframe,
            }
        })
        .collect();
    Ok(QCurve {
        episode: episode.id.clone(),
        points,
    })
}

/// Share of steps where `q_policy ≥ q_expert − tol`.
pub fn conservative_fraction(curves: &[QCurve], tol: f64) -> f64 {
    let (hits, total) = curves
        .iter()
        .flat_map(|c| &c.points)
        .fold((0usize, 0usize), |(h, n), p| (h + usize::from(p.q_policy >= p.q_expert - tol), n + 1));
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}
