//! Autoregressive prediction under extrapolated pseudo-guidance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::{step, ActionConfig, ActionError, PolicyOutput, NUM_ACTIONS};
use crate::autodiff::{Tape, Tensor, TensorError};
use crate::dataset::Observation;
use crate::encoders::{EncoderError, ObservationClip, StateInput};
use crate::geom::PixelPoint;
use crate::model::{ModelError, TrajModel};

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("extrapolation needs at least 2 observed points, got {0}")]
    TooFewPoints(usize),
    #[error("{observations} observations but {clips} clips")]
    Mismatch { observations: usize, clips: usize },
    #[error("policy returned {got} outputs for {expected} queries")]
    PolicyOutputs { got: usize, expected: usize },
    #[error(transparent)]
    Action(#[from] ActionError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GuidanceConfig {
    /// Most recent observed points used by the fit.
    pub window: usize,
    /// Quadratic fit from this many points, linear below.
    pub quad_min_points: usize,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            window: 10,
            quad_min_points: 5,
        }
    }
}

/// Least-squares polynomial through `(t, v)` pairs evaluated at `at`.
///
/// Abscissae are shifted and scaled to the window before the normal
/// equations are solved.
pub fn polyfit_eval(points: &[(f64, f64)], degree: usize, at: f64) -> f64 {
    let n = degree + 1;
    let t0 = points[points.len() - 1].0;
    let scale = (t0 - points[0].0).abs().max(1.0);
    let mut a = vec![[0.0f64; 4]; n];
    let mut b = vec![0.0f64; n];
    for &(t, v) in points {
        let u = (t - t0) / scale;
        let pow: Vec<f64> = (0..n).map(|i| u.powi(i as i32)).collect();
        for i in 0..n {
            for j in 0..n {
                a[i][j] += pow[i] * pow[j];
            }
            b[i] += pow[i] * v;
        }
    }
    // Gaussian elimination with partial pivoting.
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap_or(col);
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut coef = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * coef[k]).sum();
        coef[i] = (b[i] - s) / a[i][i];
    }
    let u = (at - t0) / scale;
    coef.iter().rev().fold(0.0, |acc, c| acc * u + c)
}

/// Pseudo-guidance at frame `at` from observed `(frame, point)` pairs.
pub fn extrapolate_guidance(observed: &[(f64, PixelPoint)], at: f64, cfg: &GuidanceConfig) -> Result<PixelPoint, RolloutError> {
    if observed.len() < 2 {
        return Err(RolloutError::TooFewPoints(observed.len()));
    }
    let tail = &observed[observed.len().saturating_sub(cfg.window.max(2))..];
    let degree = if tail.len() >= cfg.quad_min_points { 2 } else { 1 };
    let xs: Vec<(f64, f64)> = tail.iter().map(|(t, p)| (*t, p.x)).collect();
    let ys: Vec<(f64, f64)> = tail.iter().map(|(t, p)| (*t, p.y)).collect();
    Ok(PixelPoint::new(polyfit_eval(&xs, degree, at), polyfit_eval(&ys, degree, at)).clipped())
}

/// Pseudo-guidance for every prediction step of an observation.
pub fn guidance_schedule(obs: &Observation, cfg: &GuidanceConfig) -> Result<Vec<PixelPoint>, RolloutError> {
    let pts = obs.step_points();
    (0..obs.t_pred)
        .map(|k| extrapolate_guidance(&pts, obs.future_frame(k + 1), cfg))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub points: Vec<PixelPoint>,
    pub outputs: Vec<StepOutput>,
    pub guidance: Vec<PixelPoint>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOutput {
    pub probs: [f64; NUM_ACTIONS],
    pub magnitude: f64,
}

impl From<PolicyOutput> for StepOutput {
    fn from(p: PolicyOutput) -> Self {
        Self {
            probs: p.probs,
            magnitude: p.magnitude,
        }
    }
}

/// Anything that maps a batch of states to policy outputs. `StateInput::clip`
/// indexes the observation within the batch.
pub trait StepPolicy {
    fn act(&self, inputs: &[StateInput]) -> Result<Vec<PolicyOutput>, RolloutError>;
}

impl<F> StepPolicy for F
where
    F: Fn(&[StateInput]) -> Result<Vec<PolicyOutput>, RolloutError>,
{
    fn act(&self, inputs: &[StateInput]) -> Result<Vec<PolicyOutput>, RolloutError> {
        self(inputs)
    }
}

/// The trained agent with clip embeddings computed once per observation.
pub struct ModelPolicy<'a> {
    model: &'a TrajModel,
    z: Tensor,
}

impl<'a> ModelPolicy<'a> {
    pub fn new(model: &'a TrajModel, clips: &[&ObservationClip]) -> Result<Self, RolloutError> {
        let mut tape = Tape::new();
        let z = model.encode_clips(&mut tape, clips)?;
        Ok(Self {
            model,
            z: tape.value(z).clone(),
        })
    }
}

impl StepPolicy for ModelPolicy<'_> {
    fn act(&self, inputs: &[StateInput]) -> Result<Vec<PolicyOutput>, RolloutError> {
        let mut tape = Tape::new();
        let z = tape.constant(self.z.clone());
        let s = self.model.encode_states(&mut tape, z, inputs)?;
        let batch = self.model.policy_values(&mut tape, s)?;
        Ok(batch
            .probs
            .chunks(NUM_ACTIONS)
            .zip(&batch.magnitudes)
            .map(|(p, m)| PolicyOutput {
                probs: p.try_into().expect("row of 9"),
                magnitude: *m,
            })
            .collect())
    }
}

/// Rolls every observation forward `t_pred` steps with one policy call per step.
pub fn rollout_batch(
    policy: &impl StepPolicy,
    observations: &[&Observation],
    guidance: &GuidanceConfig,
    actions: &ActionConfig,
) -> Result<Vec<Rollout>, RolloutError> {
    let schedules = observations
        .iter()
        .map(|o| guidance_schedule(o, guidance))
        .collect::<Result<Vec<_>, _>>()?;
    let mut positions: Vec<PixelPoint> = observations.iter().map(|o| o.last_position()).collect();
    let mut out: Vec<Rollout> = schedules
        .iter()
        .map(|g| Rollout {
            points: Vec::with_capacity(g.len()),
            outputs: Vec::with_capacity(g.len()),
            guidance: g.clone(),
        })
        .collect();
    let horizon = observations.iter().map(|o| o.t_pred).max().unwrap_or(0);
    for k in 0..horizon {
        let active: Vec<usize> = (0..observations.len()).filter(|&i| k < observations[i].t_pred).collect();
        let inputs = active
            .iter()
            .map(|&i| StateInput::new(i, positions[i], schedules[i][k], k, observations[i].t_pred))
            .collect::<Result<Vec<_>, _>>()?;
        let decisions = policy.act(&inputs)?;
        if decisions.len() != inputs.len() {
            return Err(RolloutError::PolicyOutputs {
                got: decisions.len(),
                expected: inputs.len(),
            });
        }
        for (&i, d) in active.iter().zip(decisions) {
            positions[i] = step(positions[i], &d, actions)?;
            out[i].points.push(positions[i]);
            out[i].outputs.push(d.into());
        }
    }
    Ok(out)
}

pub fn predict(
    model: &TrajModel,
    obs: &Observation,
    clip: &ObservationClip,
    guidance: &GuidanceConfig,
    actions: &ActionConfig,
) -> Result<Rollout, RolloutError> {
    let policy = ModelPolicy::new(model, &[clip])?;
    Ok(rollout_batch(&policy, &[obs], guidance, actions)?.remove(0))
}

/// Observations per encoder call in [`predict_all`].
pub const PREDICT_CHUNK: usize = 16;

/// Rollouts for a corpus, chunked for the encoder and parallel across chunks.
pub fn predict_all(
    model: &TrajModel,
    observations: &[&Observation],
    clips: &[&ObservationClip],
    guidance: &GuidanceConfig,
    actions: &ActionConfig,
) -> Result<Vec<Rollout>, RolloutError> {
    if observations.len() != clips.len() {
        return Err(RolloutError::Mismatch {
            observations: observations.len(),
            clips: clips.len(),
        });
    }
    let chunks: Vec<Result<Vec<Rollout>, RolloutError>> = observations
        .par_chunks(PREDICT_CHUNK)
        .zip(clips.par_chunks(PREDICT_CHUNK))
        .map(|(o, c)| {
            let policy = ModelPolicy::new(model, c)?;
            rollout_batch(&policy, o, guidance, actions)
        })
        .collect();
    let mut out = Vec::with_capacity(observations.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}
