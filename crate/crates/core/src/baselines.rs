//! Reference predictors: a behaviour-cloning coordinate regressor with the
//! agent's observation encoder, and straight-line extrapolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::nn::{Linear, Mlp};
use crate::autodiff::{Adam, Checkpoint, CosineSchedule, ParamId, ParamStore, Tape, Tensor, Var};
use crate::dataset::{make_buckets, BatchSampler, Observation};
use crate::encoders::{sinusoidal_features, ObservationClip, ObservationEncoder};
use crate::geom::PixelPoint;
use crate::model::{ModelConfig, ModelError};
use crate::rollout::{guidance_schedule, GuidanceConfig, Rollout, RolloutError, PREDICT_CHUNK};
use crate::cql::{TrainError, TrainingSet};
use crate::synthgen::derive_seed;

/// Straight-line (or quadratic) continuation: the pseudo-guidance points themselves.
pub fn straightline_baseline(obs: &Observation, cfg: &GuidanceConfig) -> Result<Rollout, RolloutError> {
    let points = guidance_schedule(obs, cfg)?;
    Ok(Rollout {
        guidance: points.clone(),
        points,
        outputs: Vec::new(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BcConfig {
    pub model: ModelConfig,
    pub t_pred: usize,
    pub lr: f64,
    pub lr_encoder: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub bucket_boundaries: Vec<usize>,
    pub seed: u64,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            t_pred: 3,
            lr: 3e-4,
            lr_encoder: 1e-4,
            epochs: 100,
            batch_size: 8,
            bucket_boundaries: vec![8, 12],
            seed: 42,
        }
    }
}

/// `p̂_k = p_0 + δ_max·o_k` where `o = head([z_c, enc(p_0), lin(v)])` and
/// `v` is the last observed step displacement in units of `δ_max`.
#[derive(Clone, Debug)]
pub struct BcBaseline {
    pub store: ParamStore,
    pub observation: ObservationEncoder,
    pub position: Linear,
    pub velocity: Linear,
    pub head: Mlp,
    pub cfg: BcConfig,
    head_opt: Adam,
    encoder_opt: Adam,
    epoch: usize,
}

fn last_velocity(obs: &Observation, delta_max: f64) -> (f64, f64) {
    let pts = obs.step_points();
    match pts.len() {
        0 | 1 => (0.0, 0.0),
        n => {
            let (dx, dy) = pts[n - 1].1.sub(pts[n - 2].1);
            (dx / delta_max, dy / delta_max)
        }
    }
}

impl BcBaseline {
    pub fn new(cfg: BcConfig) -> Result<Self, ModelError> {
        cfg.model.encoder.validate().map_err(ModelError::Meta)?;
        let e = &cfg.model.encoder;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.model.init_seed, 7, 0));
        let mut store = ParamStore::new();
        let observation = ObservationEncoder::new(&mut store, e, &mut rng);
        let position = Linear::new(&mut store, "bc.pos", 4 * e.freq_pairs, e.coord_dim, &mut rng);
        let velocity = Linear::new(&mut store, "bc.vel", 2, e.coord_dim, &mut rng);
        let head = Mlp::new(
            &mut store,
            "bc.head",
            &[e.d_model + 2 * e.coord_dim, cfg.model.head_hidden, 2 * cfg.t_pred],
            &mut rng,
        );
        let mut head_params = position.params();
        head_params.extend(velocity.params());
        head_params.extend(head.params());
        let head_opt = Adam::new(&store, head_params, CosineSchedule::new(cfg.lr, cfg.epochs));
        let encoder_opt = Adam::new(&store, observation.params(), CosineSchedule::new(cfg.lr_encoder, cfg.epochs));
        Ok(Self {
            store,
            observation,
            position,
            velocity,
            head,
            cfg,
            head_opt,
            encoder_opt,
            epoch: 0,
        })
    }

    /// Offsets `o`, `n × 2·T_pred`, for a batch of observations.
    fn forward(&self, tape: &mut Tape, obs: &[&Observation], clips: &[&ObservationClip]) -> Result<Var, ModelError> {
        let e = &self.cfg.model.encoder;
        let z = self.observation.encode(tape, &self.store, clips)?;
        let n = obs.len();
        let mut pos = Vec::with_capacity(n * 4 * e.freq_pairs);
        let mut vel = Vec::with_capacity(n * 2);
        for o in obs {
            let p = o.last_position();
            pos.extend(sinusoidal_features(p.x, e.freq_pairs));
            pos.extend(sinusoidal_features(p.y, e.freq_pairs));
            let (vx, vy) = last_velocity(o, self.cfg.model.delta_max);
            vel.extend([vx, vy]);
        }
        let pos = tape.constant(Tensor::new(vec![n, 4 * e.freq_pairs], pos)?);
        let vel = tape.constant(Tensor::new(vec![n, 2], vel)?);
        let hp = self.position.forward(tape, &self.store, pos)?;
        let hv = self.velocity.forward(tape, &self.store, vel)?;
        let h = tape.concat_cols(&[z, hp, hv])?;
        Ok(self.head.forward(tape, &self.store, h)?)
    }

    /// One pass over `set` minimizing squared coordinate error. Returns the mean batch loss.
    pub fn train_epoch(&mut self, set: &TrainingSet) -> Result<f64, TrainError> {
        let epoch = self.epoch;
        self.head_opt.set_epoch(epoch);
        self.encoder_opt.set_epoch(epoch);
        let lengths: Vec<usize> = set.clips.iter().map(ObservationClip::len).collect();
        let buckets = make_buckets(&lengths, &self.cfg.bucket_boundaries)?;
        let mut sampler = BatchSampler::new(buckets, self.cfg.batch_size, derive_seed(self.cfg.seed, 8, epoch as u64))?;
        let batches = sampler.epoch();
        let mut total = 0.0;
        for batch in &batches {
            let obs: Vec<&Observation> = batch.iter().map(|&i| &set.episodes[i].observation).collect();
            let clips: Vec<&ObservationClip> = batch.iter().map(|&i| &set.clips[i]).collect();
            let mut target = Vec::with_capacity(batch.len() * 2 * self.cfg.t_pred);
            for &i in batch {
                let ep = &set.episodes[i];
                let p0 = ep.observation.last_position();
                if ep.ground_truth.len() != self.cfg.t_pred {
                    return Err(TrainError::InvalidConfig(format!(
                        "episode {} has horizon {}, baseline expects {}",
                        ep.id,
                        ep.ground_truth.len(),
                        self.cfg.t_pred
                    )));
                }
                for p in &ep.ground_truth {
                    let (dx, dy) = p.sub(p0);
                    target.extend([dx / self.cfg.model.delta_max, dy / self.cfg.model.delta_max]);
                }
            }
            let mut tape = Tape::new();
            let out = self.forward(&mut tape, &obs, &clips)?;
            let t = tape.constant(Tensor::new(vec![batch.len(), 2 * self.cfg.t_pred], target)?);
            let loss = tape.mse(out, t)?;
            total += tape.value(loss).data()[0];
            let grads = tape.backward(loss)?;
            self.head_opt.step(&mut self.store, &grads)?;
            self.encoder_opt.step(&mut self.store, &grads)?;
        }
        self.epoch += 1;
        Ok(total / batches.len().max(1) as f64)
    }

    pub fn predict_all(&self, obs: &[&Observation], clips: &[&ObservationClip]) -> Result<Vec<Rollout>, RolloutError> {
        if obs.len() != clips.len() {
            return Err(RolloutError::Mismatch {
                observations: obs.len(),
                clips: clips.len(),
            });
        }
        let chunks: Vec<Result<Vec<Rollout>, RolloutError>> = obs
            .par_chunks(PREDICT_CHUNK)
            .zip(clips.par_chunks(PREDICT_CHUNK))
            .map(|(o, c)| {
                let mut tape = Tape::new();
                let out = self.forward(&mut tape, o, c)?;
                let data = tape.value(out).data();
                let width = 2 * self.cfg.t_pred;
                Ok(o.iter()
                    .enumerate()
                    .map(|(i, ob)| {
                        let p0 = ob.last_position();
                        let points = (0..self.cfg.t_pred)
                            .map(|k| {
                                let ox = data[i * width + 2 * k] * self.cfg.model.delta_max;
                                let oy = data[i * width + 2 * k + 1] * self.cfg.model.delta_max;
                                PixelPoint::new(p0.x + ox, p0.y + oy).clipped()
                            })
                            .collect();
                        Rollout {
                            points,
                            outputs: Vec::new(),
                            guidance: Vec::new(),
                        }
                    })
                    .collect())
            })
            .collect();
        let mut out = Vec::with_capacity(obs.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self, config_hash: u64) -> Checkpoint {
        let mut meta = self.cfg.model.to_meta();
        meta.push(("kind".into(), "bc".into()));
        meta.push(("t_pred".into(), self.cfg.t_pred.to_string()));
        meta.push(("epochs_done".into(), self.epoch.to_string()));
        Checkpoint {
            config_hash,
            meta,
            tensors: self.store.iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect(),
        }
    }

    /// Restores weights for prediction; optimizer state is not kept.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, ModelError> {
        if ckpt.meta("kind") != Some("bc") {
            return Err(ModelError::Meta("not a behaviour-cloning checkpoint".into()));
        }
        let t_pred = ckpt
            .meta("t_pred")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| ModelError::Meta("missing t_pred".into()))?;
        let mut bc = Self::new(BcConfig {
            model: ModelConfig::from_meta(ckpt)?,
            t_pred,
            ..BcConfig::default()
        })?;
        let ids: Vec<ParamId> = bc.store.ids().collect();
        for id in ids {
            let name = bc.store.name(id).to_string();
            let t = ckpt.tensor(&name)?;
            if t.shape() != bc.store.get(id).shape() {
                return Err(ModelError::Meta(format!("shape mismatch for {name}")));
            }
            *bc.store.get_mut(id) = t.clone();
        }
        bc.epoch = ckpt.meta("epochs_done").and_then(|v| v.parse().ok()).unwrap_or(0);
        Ok(bc)
    }
}
