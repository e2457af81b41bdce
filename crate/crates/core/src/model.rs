//! Parameter layout of the full agent: encoders, actor, twin critics with
//! lagged targets, and the magnitude head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::actions::NUM_ACTIONS;
use crate::autodiff::nn::Mlp;
use crate::autodiff::{Checkpoint, CheckpointError, ParamId, ParamStore, Tape, Tensor, TensorError, Var};
use crate::encoders::{EncoderConfig, EncoderError, ObservationClip, ObservationEncoder, StateEncoder, StateInput};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint metadata: {0}")]
    Meta(String),
    #[error("checkpoint holds an untrained model")]
    UntrainedModel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub head_hidden: usize,
    pub mag_hidden: usize,
    pub delta_max: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            head_hidden: 128,
            mag_hidden: 64,
            delta_max: 0.05,
            init_seed: 42,
        }
    }
}

impl ModelConfig {
    /// Key/value pairs sufficient to rebuild the architecture.
    pub fn to_meta(&self) -> Vec<(String, String)> {
        let e = &self.encoder;
        let channels: Vec<String> = e.conv_channels.iter().map(usize::to_string).collect();
        [
            ("crop_size", e.crop_size.to_string()),
            ("crop_extent_px", e.crop_extent_px.to_string()),
            ("conv_channels", channels.join(",")),
            ("d_model", e.d_model.to_string()),
            ("heads", e.heads.to_string()),
            ("layers", e.layers.to_string()),
            ("freq_pairs", e.freq_pairs.to_string()),
            ("coord_dim", e.coord_dim.to_string()),
            ("state_hidden", e.state_hidden.to_string()),
            ("state_dim", e.state_dim.to_string()),
            ("guidance_radius", e.guidance_radius.to_string()),
            ("head_hidden", self.head_hidden.to_string()),
            ("mag_hidden", self.mag_hidden.to_string()),
            ("delta_max", self.delta_max.to_string()),
            ("init_seed", self.init_seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn from_meta(ckpt: &Checkpoint) -> Result<Self, ModelError> {
        fn get<T: std::str::FromStr>(ckpt: &Checkpoint, key: &str) -> Result<T, ModelError> {
            ckpt.meta(key)
                .ok_or_else(|| ModelError::Meta(format!("missing {key}")))?
                .parse()
                .map_err(|_| ModelError::Meta(format!("bad value for {key}")))
        }
        let channels = ckpt
            .meta("conv_channels")
            .ok_or_else(|| ModelError::Meta("missing conv_channels".into()))?
            .split(',')
            .map(|c| c.parse().map_err(|_| ModelError::Meta("bad conv_channels".into())))
            .collect::<Result<Vec<usize>, _>>()?;
        let encoder = EncoderConfig {
            crop_size: get(ckpt, "crop_size")?,
            crop_extent_px: get(ckpt, "crop_extent_px")?,
            conv_channels: channels,
            d_model: get(ckpt, "d_model")?,
            heads: get(ckpt, "heads")?,
            layers: get(ckpt, "layers")?,
            freq_pairs: get(ckpt, "freq_pairs")?,
            coord_dim: get(ckpt, "coord_dim")?,
            state_hidden: get(ckpt, "state_hidden")?,
            state_dim: get(ckpt, "state_dim")?,
            guidance_radius: get(ckpt, "guidance_radius")?,
        };
        encoder.validate().map_err(ModelError::Meta)?;
        Ok(Self {
            encoder,
            head_hidden: get(ckpt, "head_hidden")?,
            mag_hidden: get(ckpt, "mag_hidden")?,
            delta_max: get(ckpt, "delta_max")?,
            init_seed: get(ckpt, "init_seed")?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrajModel {
    pub store: ParamStore,
    pub observation: ObservationEncoder,
    pub state: StateEncoder,
    pub actor: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    pub magnitude: Mlp,
    pub cfg: ModelConfig,
}

/// Numeric policy evaluation for a batch of states.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyBatch {
    /// Row-major `n × 9`.
    pub probs: Vec<f64>,
    pub magnitudes: Vec<f64>,
}

impl TrajModel {
    pub fn new(cfg: ModelConfig) -> Result<Self, ModelError> {
        cfg.encoder.validate().map_err(ModelError::Meta)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let mut store = ParamStore::new();
        let observation = ObservationEncoder::new(&mut store, &cfg.encoder, &mut rng);
        let state = StateEncoder::new(&mut store, &cfg.encoder, &mut rng);
        let sd = cfg.encoder.state_dim;
        let actor = Mlp::new(&mut store, "actor", &[sd, cfg.head_hidden, NUM_ACTIONS], &mut rng);
        let q1 = Mlp::new(&mut store, "q1", &[sd, cfg.head_hidden, NUM_ACTIONS], &mut rng);
        let q2 = Mlp::new(&mut store, "q2", &[sd, cfg.head_hidden, NUM_ACTIONS], &mut rng);
        let q1_target = Mlp::new(&mut store, "q1_target", &[sd, cfg.head_hidden, NUM_ACTIONS], &mut rng);
        let q2_target = Mlp::new(&mut store, "q2_target", &[sd, cfg.head_hidden, NUM_ACTIONS], &mut rng);
        let magnitude = Mlp::new(&mut store, "magnitude", &[sd, cfg.mag_hidden, 1], &mut rng);
        let mut model = Self {
            store,
            observation,
            state,
            actor,
            q1,
            q2,
            q1_target,
            q2_target,
            magnitude,
            cfg,
        };
        for (t, o) in model.target_pairs() {
            let v = model.store.get(o).clone();
            *model.store.get_mut(t) = v;
        }
        Ok(model)
    }

    pub fn encoder_params(&self) -> Vec<ParamId> {
        let mut p = self.observation.params();
        p.extend(self.state.params());
        p
    }

    pub fn actor_params(&self) -> Vec<ParamId> {
        self.actor.params()
    }

    pub fn critic_params(&self) -> Vec<ParamId> {
        let mut p = self.q1.params();
        p.extend(self.q2.params());
        p
    }

    pub fn magnitude_params(&self) -> Vec<ParamId> {
        self.magnitude.params()
    }

    /// `(target, online)` parameter pairs.
    pub fn target_pairs(&self) -> Vec<(ParamId, ParamId)> {
        let mut t = self.q1_target.params();
        t.extend(self.q2_target.params());
        t.into_iter().zip(self.critic_params()).collect()
    }

    pub fn encode_clips(&self, tape: &mut Tape, clips: &[&ObservationClip]) -> Result<Var, ModelError> {
        Ok(self.observation.encode(tape, &self.store, clips)?)
    }

    pub fn encode_states(&self, tape: &mut Tape, z: Var, inputs: &[StateInput]) -> Result<Var, ModelError> {
        Ok(self.state.encode(tape, &self.store, z, inputs)?)
    }

    /// `δ_max · sigmoid(head(s))`, shape `n × 1`.
    pub fn magnitude_forward(&self, tape: &mut Tape, s: Var) -> Result<Var, ModelError> {
        let raw = self.magnitude.forward(tape, &self.store, s)?;
        let unit = tape.sigmoid(raw)?;
        Ok(tape.scale(unit, self.cfg.delta_max)?)
    }

    /// Softmax probabilities and magnitudes for states already on `tape`.
    pub fn policy_values(&self, tape: &mut Tape, s: Var) -> Result<PolicyBatch, ModelError> {
        let logits = self.actor.forward_frozen(tape, &self.store, s)?;
        let probs = tape.softmax(logits)?;
        let raw = self.magnitude.forward_frozen(tape, &self.store, s)?;
        let unit = tape.sigmoid(raw)?;
        let mags = tape.scale(unit, self.cfg.delta_max)?;
        Ok(PolicyBatch {
            probs: tape.value(probs).data().to_vec(),
            magnitudes: tape.value(mags).data().to_vec(),
        })
    }

    /// Elementwise `min(Q1, Q2)` of the online critics, row-major `n × 9`.
    pub fn min_q_values(&self, tape: &mut Tape, s: Var) -> Result<Vec<f64>, ModelError> {
        let a = self.q1.forward_frozen(tape, &self.store, s)?;
        let b = self.q2.forward_frozen(tape, &self.store, s)?;
        let m = tape.minimum(a, b)?;
        Ok(tape.value(m).data().to_vec())
    }

    pub fn to_checkpoint(&self, config_hash: u64, extra_meta: &[(String, String)]) -> Checkpoint {
        let mut meta = self.cfg.to_meta();
        meta.extend(extra_meta.iter().cloned());
        Checkpoint {
            config_hash,
            meta,
            tensors: self.store.iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect(),
        }
    }

    /// Rebuilds the architecture from metadata and loads every parameter by name.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, ModelError> {
        let mut model = Self::new(ModelConfig::from_meta(ckpt)?)?;
        model.load_params(ckpt)?;
        Ok(model)
    }

    pub fn load_params(&mut self, ckpt: &Checkpoint) -> Result<(), ModelError> {
        let ids: Vec<ParamId> = self.store.ids().collect();
        for id in ids {
            let name = self.store.name(id).to_string();
            let t: &Tensor = ckpt.tensor(&name)?;
            if t.shape() != self.store.get(id).shape() {
                return Err(ModelError::Meta(format!("shape mismatch for {name}")));
            }
            *self.store.get_mut(id) = t.clone();
        }
        Ok(())
    }
}
