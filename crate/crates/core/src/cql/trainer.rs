use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{soft_update, Adam, Checkpoint, CosineSchedule, Gradients, ParamId, Tape, Tensor, Var};
use crate::dataset::{make_buckets, BatchSampler, Episode, Transition};
use crate::encoders::{build_clip, ObservationClip, StateInput};
use crate::model::{ModelError, TrajModel};
use crate::synthgen::{derive_seed, CropArchive};

use super::losses::{bc_loss, bellman_targets, critic_loss, direction_norms, log_softmax_rows, magnitude_loss, policy_loss, soft_values};
use super::{TrainConfig, TrainError};

/// Episodes paired with their encoder clips.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub episodes: Vec<Episode>,
    pub clips: Vec<ObservationClip>,
}

impl TrainingSet {
    pub fn build(episodes: Vec<Episode>, crops: &CropArchive, radius: f64) -> Result<Self, TrainError> {
        if episodes.is_empty() {
            return Err(TrainError::EmptyCorpus);
        }
        let clips = episodes
            .par_iter()
            .map(|e| build_clip(&e.observation, crops, radius))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { episodes, clips })
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn num_transitions(&self) -> usize {
        self.episodes.iter().map(|e| e.transitions.len()).sum()
    }
}

/// Epoch averages of the training objectives.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport {
    pub epoch: usize,
    pub updates: usize,
    pub transitions: usize,
    pub critic: f64,
    pub bellman: f64,
    pub cql_penalty: f64,
    pub policy: f64,
    pub bc: f64,
    pub magnitude: f64,
    pub mean_q: f64,
    /// Expert step lengths clamped to `δ_max` for the magnitude target.
    pub clamped_targets: usize,
    pub lr_encoder: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub lr_magnitude: f64,
}

impl LossReport {
    fn accumulate(&mut self, other: &LossReport) {
        self.updates += other.updates;
        self.transitions += other.transitions;
        self.critic += other.critic;
        self.bellman += other.bellman;
        self.cql_penalty += other.cql_penalty;
        self.policy += other.policy;
        self.bc += other.bc;
        self.magnitude += other.magnitude;
        self.mean_q += other.mean_q;
        self.clamped_targets += other.clamped_targets;
    }

    fn average(&mut self) {
        let n = self.updates.max(1) as f64;
        for v in [
            &mut self.critic,
            &mut self.bellman,
            &mut self.cql_penalty,
            &mut self.policy,
            &mut self.bc,
            &mut self.magnitude,
            &mut self.mean_q,
        ] {
            *v /= n;
        }
    }
}

/// Gradients of the two objectives for one batch, without an update.
pub struct BatchGradients {
    pub critic: Gradients,
    pub actor: Gradients,
}

struct Forward {
    s: Var,
    s_next: Var,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
    expert: Vec<f64>,
    clamped: usize,
}

pub struct Trainer {
    pub model: TrajModel,
    pub cfg: TrainConfig,
    encoder_opt: Adam,
    actor_opt: Adam,
    critic_opt: Adam,
    magnitude_opt: Adam,
    epoch: usize,
}

const OPT_GROUPS: [&str; 4] = ["encoder", "actor", "critic", "magnitude"];

impl Trainer {
    pub fn new(model: TrajModel, cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let opt = |params: Vec<ParamId>, lr: f64| Adam::new(&model.store, params, CosineSchedule::new(lr, cfg.epochs));
        let encoder_opt = opt(model.encoder_params(), cfg.lr_encoder);
        let actor_opt = opt(model.actor_params(), cfg.lr_actor);
        let critic_opt = opt(model.critic_params(), cfg.lr_critic);
        let magnitude_opt = opt(model.magnitude_params(), cfg.lr_mag);
        Ok(Self {
            model,
            cfg,
            encoder_opt,
            actor_opt,
            critic_opt,
            magnitude_opt,
            epoch: 0,
        })
    }

    /// Number of completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    fn optimizers_mut(&mut self) -> [&mut Adam; 4] {
        [&mut self.encoder_opt, &mut self.actor_opt, &mut self.critic_opt, &mut self.magnitude_opt]
    }

    fn optimizers(&self) -> [&Adam; 4] {
        [&self.encoder_opt, &self.actor_opt, &self.critic_opt, &self.magnitude_opt]
    }

    /// Length-bucketed batches for the given epoch; identical for a fixed seed.
    pub fn epoch_batches(&self, set: &TrainingSet, epoch: usize) -> Result<Vec<Vec<usize>>, TrainError> {
        let lengths: Vec<usize> = set.clips.iter().map(ObservationClip::len).collect();
        let buckets = make_buckets(&lengths, &self.cfg.bucket_boundaries)?;
        let mut sampler = BatchSampler::new(buckets, self.cfg.batch_size, derive_seed(self.cfg.seed, 1, epoch as u64))?;
        Ok(sampler.epoch())
    }

    pub fn train_epoch(&mut self, set: &TrainingSet) -> Result<LossReport, TrainError> {
        let epoch = self.epoch;
        for opt in self.optimizers_mut() {
            opt.set_epoch(epoch);
        }
        let mut report = LossReport {
            epoch,
            lr_encoder: self.encoder_opt.lr(),
            lr_actor: self.actor_opt.lr(),
            lr_critic: self.critic_opt.lr(),
            lr_magnitude: self.magnitude_opt.lr(),
            ..LossReport::default()
        };
        for (b, batch) in self.epoch_batches(set, epoch)?.iter().enumerate() {
            let seed = derive_seed(self.cfg.seed, 2 + epoch as u64, b as u64);
            let step = self.update_batch(set, batch, seed)?;
            report.accumulate(&step);
        }
        report.average();
        self.epoch += 1;
        Ok(report)
    }

    /// Transitions of a batch, subsampled to the per-update cap.
    fn batch_transitions<'a>(&self, set: &'a TrainingSet, batch: &[usize], seed: u64) -> Vec<(usize, &'a Transition)> {
        let mut all: Vec<(usize, &Transition)> = batch
            .iter()
            .enumerate()
            .flat_map(|(slot, &e)| set.episodes[e].transitions.iter().map(move |t| (slot, t)))
            .collect();
        let cap = self.cfg.max_transitions_per_update;
        if all.len() > cap {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut keep = sample(&mut rng, all.len(), cap).into_vec();
            keep.sort_unstable();
            all = keep.into_iter().map(|i| all[i]).collect();
        }
        all
    }

    fn forward(&self, tape: &mut Tape, set: &TrainingSet, batch: &[usize], seed: u64) -> Result<Forward, TrainError> {
        if batch.is_empty() {
            return Err(TrainError::EmptyBatch);
        }
        let clips: Vec<&ObservationClip> = batch.iter().map(|&e| &set.clips[e]).collect();
        let z = self.model.encode_clips(tape, &clips)?;
        let trans = self.batch_transitions(set, batch, seed);
        let mut now = Vec::with_capacity(trans.len());
        let mut next = Vec::with_capacity(trans.len());
        for (slot, t) in &trans {
            now.push(StateInput::new(*slot, t.position, t.guidance, t.step, t.horizon)?);
            let k_next = (t.step + 1).min(t.horizon - 1);
            next.push(StateInput::new(*slot, t.next_position, t.next_guidance, k_next, t.horizon)?);
        }
        let s = self.model.encode_states(tape, z, &now)?;
        let s_next = self.model.encode_states(tape, z, &next)?;
        let delta_max = self.model.cfg.delta_max;
        let mut clamped = 0;
        let expert = trans
            .iter()
            .map(|(_, t)| {
                if self.cfg.clamp_magnitude_target && t.expert_step > delta_max {
                    clamped += 1;
                    delta_max
                } else {
                    t.expert_step
                }
            })
            .collect();
        Ok(Forward {
            s,
            s_next,
            actions: trans.iter().map(|(_, t)| usize::from(t.action - 1)).collect(),
            rewards: trans.iter().map(|(_, t)| t.reward.total).collect(),
            dones: trans.iter().map(|(_, t)| t.done).collect(),
            expert,
            clamped,
        })
    }

    /// Twin-critic CQL objective on detached states. Returns the summed loss
    /// and the scalar report entries.
    fn critic_objective(&self, tape: &mut Tape, fw: &Forward, report: &mut LossReport) -> Result<Var, TrainError> {
        let m = &self.model;
        let s = tape.detach(fw.s);
        let s_next = tape.detach(fw.s_next);

        let logits_next = m.actor.forward_frozen(tape, &m.store, s_next)?;
        let probs_next = tape.softmax(logits_next)?;
        let t1 = m.q1_target.forward_frozen(tape, &m.store, s_next)?;
        let t2 = m.q2_target.forward_frozen(tape, &m.store, s_next)?;
        let tmin = tape.minimum(t1, t2)?;
        let log_p = log_softmax_rows(tape.value(logits_next).data());
        let v_next = soft_values(tape.value(probs_next).data(), &log_p, tape.value(tmin).data(), self.cfg.alpha_entropy);
        let y = bellman_targets(&fw.rewards, &fw.dones, &v_next, self.cfg.gamma);
        let n = y.len();
        let y = tape.constant(Tensor::new(vec![n, 1], y)?);

        let q1 = m.q1.forward(tape, &m.store, s)?;
        let q2 = m.q2.forward(tape, &m.store, s)?;
        let c1 = critic_loss(tape, q1, &fw.actions, y, self.cfg.alpha_cql)?;
        let c2 = critic_loss(tape, q2, &fw.actions, y, self.cfg.alpha_cql)?;
        let loss = tape.add(c1.loss, c2.loss)?;

        let scalar = |tape: &Tape, v: Var| tape.value(v).data()[0];
        report.critic = scalar(tape, loss);
        report.bellman = 0.5 * (scalar(tape, c1.bellman) + scalar(tape, c2.bellman));
        report.cql_penalty = 0.5 * (scalar(tape, c1.penalty) + scalar(tape, c2.penalty));
        let qd = tape.value(q1).data();
        report.mean_q = qd.iter().sum::<f64>() / qd.len() as f64;
        Ok(loss)
    }

    /// Policy, behaviour-cloning and magnitude objective on attached states;
    /// `min_q` is a constant row-major `n × 9`.
    fn actor_objective(&self, tape: &mut Tape, fw: &Forward, min_q: Vec<f64>, report: &mut LossReport) -> Result<Var, TrainError> {
        let m = &self.model;
        let n = fw.actions.len();
        let logits = m.actor.forward(tape, &m.store, fw.s)?;
        let q = tape.constant(Tensor::new(vec![n, crate::actions::NUM_ACTIONS], min_q)?);
        let pl = policy_loss(tape, logits, q, self.cfg.alpha_entropy)?;
        let bc = bc_loss(tape, logits, &fw.actions)?;
        let probs = tape.softmax(logits)?;
        let norms = direction_norms(tape.value(probs).data());
        let mag = m.magnitude_forward(tape, fw.s)?;
        let ml = magnitude_loss(tape, mag, &norms, &fw.expert, self.cfg.lambda_mag)?;

        let bc_scaled = tape.scale(bc, self.cfg.bc_weight)?;
        let sum = tape.add(pl, bc_scaled)?;
        let loss = tape.add(sum, ml)?;
        report.policy = tape.value(pl).data()[0];
        report.bc = tape.value(bc).data()[0];
        report.magnitude = tape.value(ml).data()[0];
        Ok(loss)
    }

    fn min_q_constant(&self, tape: &mut Tape, s: Var) -> Result<Vec<f64>, ModelError> {
        let s = tape.detach(s);
        self.model.min_q_values(tape, s)
    }

    /// One update: critics first, then actor, magnitude head and encoders
    /// against the refreshed critics, then the target networks.
    pub fn update_batch(&mut self, set: &TrainingSet, batch: &[usize], seed: u64) -> Result<LossReport, TrainError> {
        let mut report = LossReport {
            updates: 1,
            ..LossReport::default()
        };
        let mut tape = Tape::new();
        let fw = self.forward(&mut tape, set, batch, seed)?;
        report.transitions = fw.actions.len();
        report.clamped_targets = fw.clamped;

        let critic = self.critic_objective(&mut tape, &fw, &mut report)?;
        let grads = tape.backward(critic)?;
        self.critic_opt.step(&mut self.model.store, &grads)?;

        let min_q = self.min_q_constant(&mut tape, fw.s)?;
        let actor = self.actor_objective(&mut tape, &fw, min_q, &mut report)?;
        let grads = tape.backward(actor)?;
        self.actor_opt.step(&mut self.model.store, &grads)?;
        self.magnitude_opt.step(&mut self.model.store, &grads)?;
        self.encoder_opt.step(&mut self.model.store, &grads)?;

        let (targets, online): (Vec<ParamId>, Vec<ParamId>) = self.model.target_pairs().into_iter().unzip();
        soft_update(&mut self.model.store, &targets, &online, self.cfg.tau_soft)?;
        Ok(report)
    }

    /// Both objectives' gradients at the current parameters.
    pub fn batch_gradients(&self, set: &TrainingSet, batch: &[usize], seed: u64) -> Result<BatchGradients, TrainError> {
        let mut report = LossReport::default();
        let mut tape = Tape::new();
        let fw = self.forward(&mut tape, set, batch, seed)?;
        let critic = self.critic_objective(&mut tape, &fw, &mut report)?;
        let critic = tape.backward(critic)?;
        let min_q = self.min_q_constant(&mut tape, fw.s)?;
        let actor = self.actor_objective(&mut tape, &fw, min_q, &mut report)?;
        let actor = tape.backward(actor)?;
        Ok(BatchGradients { critic, actor })
    }

    /// Model parameters plus optimizer moments and the epoch counter.
    pub fn to_checkpoint(&self, config_hash: u64, extra_meta: &[(String, String)]) -> Checkpoint {
        let mut meta = extra_meta.to_vec();
        meta.push(("epochs_done".into(), self.epoch.to_string()));
        let mut ckpt = self.model.to_checkpoint(config_hash, &meta);
        for (group, opt) in OPT_GROUPS.iter().zip(self.optimizers()) {
            ckpt.meta.push((format!("opt.{group}.steps"), opt.step_count.to_string()));
            for (i, (m, v)) in opt.m.iter().zip(&opt.v).enumerate() {
                for (kind, data) in [("m", m), ("v", v)] {
                    let t = Tensor::new(vec![data.len()], data.clone()).expect("flat tensor");
                    ckpt.tensors.push((format!("opt.{group}.{i}.{kind}"), t));
                }
            }
        }
        ckpt
    }

    /// Resumes from a checkpoint written by [`Trainer::to_checkpoint`].
    pub fn from_checkpoint(ckpt: &Checkpoint, cfg: TrainConfig) -> Result<Self, TrainError> {
        let model = TrajModel::from_checkpoint(ckpt)?;
        let mut trainer = Self::new(model, cfg)?;
        let meta_num = |key: &str| -> Result<u64, TrainError> {
            ckpt.meta(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| TrainError::Model(ModelError::Meta(format!("missing or bad {key}"))))
        };
        trainer.epoch = meta_num("epochs_done")? as usize;
        for group in OPT_GROUPS {
            let steps = meta_num(&format!("opt.{group}.steps"))?;
            let opt = match group {
                "encoder" => &mut trainer.encoder_opt,
                "actor" => &mut trainer.actor_opt,
                "critic" => &mut trainer.critic_opt,
                _ => &mut trainer.magnitude_opt,
            };
            opt.step_count = steps;
            for i in 0..opt.m.len() {
                for kind in ["m", "v"] {
                    let name = format!("opt.{group}.{i}.{kind}");
                    let t = ckpt.tensor(&name).map_err(ModelError::from)?;
                    let dst = if kind == "m" { &mut opt.m[i] } else { &mut opt.v[i] };
                    if t.numel() != dst.len() {
                        return Err(TrainError::Model(ModelError::Meta(format!("size mismatch for {name}"))));
                    }
                    dst.copy_from_slice(t.data());
                }
            }
        }
        Ok(trainer)
    }
}
