//! Offline expert transitions, episode windows and bucketed batching.
//!
//! An episode observes `t_obs` steps of a trajectory and predicts the next
//! `t_pred`. In keyframe mode a step is one annotated keyframe; in dense
//! mode a step is one frame. Positions along an episode are written
//! `p_0 … p_K`, where `p_0` is the last observed position and `p_1 … p_K`
//! the ground-truth future.

mod bucket;
mod cache;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::{quantize_displacement, ActionConfig};
use crate::geom::{DenseSample, PixelPoint, Resolution, Trajectory};
use crate::reward::{step_reward, RewardBreakdown, RewardConfig};

pub use bucket::{make_buckets, BatchSampler, Bucket};
pub use cache::{encode_transition_cache, parse_transition_cache, read_transition_cache, write_transition_cache, CacheError, CACHE_HEADER};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("trajectory {id} spans {available} steps, episode needs {needed}")]
    SpecOutOfRange { id: String, available: usize, needed: usize },
    #[error("step {k} outside prediction horizon {horizon}")]
    OutOfRange { k: usize, horizon: usize },
    #[error("no episodes to sample from")]
    EmptyCorpus,
    #[error("invalid episode configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepMode {
    /// One prediction step per annotated keyframe.
    Keyframe,
    /// One prediction step per frame.
    Dense,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeConfig {
    pub t_obs: usize,
    pub t_pred: usize,
    pub mode: StepMode,
    /// Guidance lookahead `h`: step `k` is guided toward `p_{min(k+h, K)}`.
    pub lookahead: usize,
    /// Offset between consecutive episode windows, in steps.
    pub window_stride: usize,
    /// Frame stride of the observation clip, counted back from the last observed frame.
    pub clip_stride: usize,
    /// Most recent clip frames kept.
    pub max_clip_len: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            t_obs: 6,
            t_pred: 3,
            mode: StepMode::Keyframe,
            lookahead: 1,
            window_stride: 1,
            clip_stride: 4,
            max_clip_len: 16,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::InvalidConfig(m.to_string()));
        if self.t_obs == 0 || self.t_pred == 0 {
            return bad("t_obs and t_pred must be at least 1");
        }
        if self.lookahead == 0 || self.window_stride == 0 || self.clip_stride == 0 || self.max_clip_len == 0 {
            return bad("lookahead, window_stride, clip_stride and max_clip_len must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub t_obs: usize,
    pub t_pred: usize,
    pub obs_frames: Vec<i64>,
    pub pred_frames: Vec<i64>,
}

impl EpisodeSpec {
    pub fn last_obs_frame(&self) -> i64 {
        self.obs_frames[self.obs_frames.len() - 1]
    }

    pub fn first_obs_frame(&self) -> i64 {
        self.obs_frames[0]
    }
}

/// Everything known at prediction time. Holds no future positions.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub trajectory_id: String,
    pub scene_id: String,
    pub resolution: Resolution,
    /// Frames whose crops form the observation clip, oldest first.
    pub clip_frames: Vec<i64>,
    /// Dense samples from the first to the last observed frame.
    pub observed: Vec<DenseSample>,
    /// Frames of the observed steps (keyframes or every frame, by mode).
    pub step_frames: Vec<i64>,
    pub t_pred: usize,
    /// Frames per prediction step, estimated from observed data only.
    pub step_spacing: f64,
}

impl Observation {
    pub fn last_position(&self) -> PixelPoint {
        self.observed[self.observed.len() - 1].point
    }

    pub fn last_frame(&self) -> i64 {
        self.observed[self.observed.len() - 1].frame
    }

    /// `(frame, position)` of each observed step, oldest first.
    pub fn step_points(&self) -> Vec<(f64, PixelPoint)> {
        let first = self.observed[0].frame;
        self.step_frames
            .iter()
            .filter_map(|f| usize::try_from(f - first).ok().and_then(|i| self.observed.get(i)))
            .map(|s| (s.frame as f64, s.point))
            .collect()
    }

    /// Fractional frame index of prediction step `k` (1-based future point).
    pub fn future_frame(&self, k: usize) -> f64 {
        self.last_frame() as f64 + k as f64 * self.step_spacing
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub episode: String,
    pub step: usize,
    pub horizon: usize,
    pub position: PixelPoint,
    pub guidance: PixelPoint,
    pub action: u8,
    pub expert_step: f64,
    /// Dense sample the reward was scored against.
    pub reference: DenseSample,
    pub reward: RewardBreakdown,
    pub next_position: PixelPoint,
    pub next_guidance: PixelPoint,
    pub done: bool,
}

impl Transition {
    pub fn progress(&self) -> f64 {
        self.step as f64 / self.horizon as f64
    }

    /// Progress of the successor state; terminal successors are held at the last step.
    pub fn next_progress(&self) -> f64 {
        (self.step + 1).min(self.horizon - 1) as f64 / self.horizon as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub id: String,
    pub spec: EpisodeSpec,
    pub observation: Observation,
    /// `p_1 … p_K`.
    pub ground_truth: Vec<PixelPoint>,
    pub transitions: Vec<Transition>,
}

impl Episode {
    pub fn clip_len(&self) -> usize {
        self.observation.clip_frames.len()
    }
}

/// Step-`k` training guidance `p_{min(k+h, K)}` from the future points `p_1 … p_K`.
pub fn training_guidance(future: &[PixelPoint], k: usize, lookahead: usize) -> Result<PixelPoint, DatasetError> {
    let horizon = future.len();
    if k >= horizon || lookahead == 0 {
        return Err(DatasetError::OutOfRange { k, horizon });
    }
    Ok(future[(k + lookahead).min(horizon) - 1])
}

/// Step frames of every episode window that fits inside `traj`.
pub fn episode_specs(traj: &Trajectory, cfg: &EpisodeConfig) -> Result<Vec<EpisodeSpec>, DatasetError> {
    cfg.validate()?;
    let steps: Vec<i64> = match cfg.mode {
        StepMode::Keyframe => traj.keyframes.iter().map(|k| k.frame).collect(),
        StepMode::Dense => traj.dense.iter().map(|d| d.frame).collect(),
    };
    let needed = cfg.t_obs + cfg.t_pred;
    if steps.len() < needed {
        return Err(DatasetError::SpecOutOfRange {
            id: traj.id.clone(),
            available: steps.len(),
            needed,
        });
    }
    Ok((0..=steps.len() - needed)
        .step_by(cfg.window_stride)
        .map(|s| EpisodeSpec {
            t_obs: cfg.t_obs,
            t_pred: cfg.t_pred,
            obs_frames: steps[s..s + cfg.t_obs].to_vec(),
            pred_frames: steps[s + cfg.t_obs..s + needed].to_vec(),
        })
        .collect())
}

fn sample(traj: &Trajectory, frame: i64) -> Result<DenseSample, DatasetError> {
    traj.sample_at(frame).copied().ok_or(DatasetError::SpecOutOfRange {
        id: traj.id.clone(),
        available: traj.dense.len(),
        needed: usize::try_from(frame - traj.first_frame() + 1).unwrap_or(0),
    })
}

/// One transition per prediction step; the successor is read from the demonstration.
pub fn extract_transitions(
    traj: &Trajectory,
    spec: &EpisodeSpec,
    episode_id: &str,
    lookahead: usize,
    actions: &ActionConfig,
    rewards: &RewardConfig,
) -> Result<Vec<Transition>, DatasetError> {
    let horizon = spec.pred_frames.len();
    if horizon == 0 || spec.obs_frames.is_empty() {
        return Err(DatasetError::InvalidConfig("empty episode spec".into()));
    }
    let mut positions = vec![sample(traj, spec.last_obs_frame())?.point];
    let mut refs = Vec::with_capacity(horizon);
    for &f in &spec.pred_frames {
        let s = sample(traj, f)?;
        positions.push(s.point);
        refs.push(s);
    }
    let future = &positions[1..];
    (0..horizon)
        .map(|k| {
            let (p, next) = (positions[k], positions[k + 1]);
            let done = k + 1 == horizon;
            let next_guidance = training_guidance(future, (k + 1).min(horizon - 1), lookahead)?;
            Ok(Transition {
                episode: episode_id.to_string(),
                step: k,
                horizon,
                position: p,
                guidance: training_guidance(future, k, lookahead)?,
                action: quantize_displacement(next.sub(p), actions.idle_eps),
                expert_step: next.distance(p),
                reference: refs[k],
                reward: step_reward(next, &refs[k], done, rewards),
                next_position: next,
                next_guidance,
                done,
            })
        })
        .collect()
}

/// Observation clip frames: every `stride`-th frame back from the last observed one.
pub fn clip_frames(first: i64, last: i64, stride: usize, max_len: usize) -> Vec<i64> {
    let mut frames: Vec<i64> = (0..)
        .map(|i: i64| last - i * stride as i64)
        .take_while(|f| *f >= first)
        .take(max_len)
        .collect();
    frames.reverse();
    frames
}

pub fn build_observation(traj: &Trajectory, spec: &EpisodeSpec, cfg: &EpisodeConfig) -> Result<Observation, DatasetError> {
    let (first, last) = (spec.first_obs_frame(), spec.last_obs_frame());
    let observed: Vec<DenseSample> = (first..=last).map(|f| sample(traj, f)).collect::<Result<_, _>>()?;
    let step_spacing = match cfg.mode {
        StepMode::Dense => 1.0,
        StepMode::Keyframe => {
            let kf: Vec<i64> = observed.iter().filter(|s| s.is_keyframe).map(|s| s.frame).collect();
            if kf.len() >= 2 {
                (kf[kf.len() - 1] - kf[0]) as f64 / (kf.len() - 1) as f64
            } else {
                1.0
            }
        }
    };
    Ok(Observation {
        trajectory_id: traj.id.clone(),
        scene_id: traj.scene_id.clone(),
        resolution: traj.resolution,
        clip_frames: clip_frames(first, last, cfg.clip_stride, cfg.max_clip_len),
        observed,
        step_frames: spec.obs_frames.clone(),
        t_pred: spec.t_pred,
        step_spacing,
    })
}

pub fn build_episodes(
    traj: &Trajectory,
    cfg: &EpisodeConfig,
    actions: &ActionConfig,
    rewards: &RewardConfig,
) -> Result<Vec<Episode>, DatasetError> {
    episode_specs(traj, cfg)?
        .into_iter()
        .enumerate()
        .map(|(w, spec)| {
            let id = format!("{}#{w}", traj.id);
            let transitions = extract_transitions(traj, &spec, &id, cfg.lookahead, actions, rewards)?;
            let observation = build_observation(traj, &spec, cfg)?;
            let ground_truth = transitions.iter().map(|t| t.next_position).collect();
            Ok(Episode {
                id,
                spec,
                observation,
                ground_truth,
                transitions,
            })
        })
        .collect()
}

/// Episodes of every trajectory, in corpus order. Trajectories too short for
/// the window are skipped and counted.
pub fn build_corpus(
    trajectories: &[Trajectory],
    cfg: &EpisodeConfig,
    actions: &ActionConfig,
    rewards: &RewardConfig,
) -> Result<(Vec<Episode>, usize), DatasetError> {
    cfg.validate()?;
    let per_traj: Vec<Result<Vec<Episode>, DatasetError>> = trajectories
        .par_iter()
        .map(|t| build_episodes(t, cfg, actions, rewards))
        .collect();
    let mut episodes = Vec::new();
    let mut skipped = 0;
    for r in per_traj {
        match r {
            Ok(e) => episodes.extend(e),
            Err(DatasetError::SpecOutOfRange { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if episodes.is_empty() {
        return Err(DatasetError::EmptyCorpus);
    }
    Ok((episodes, skipped))
}
