//! Flat `key = value` run configuration with named presets.

use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::actions::ActionConfig;
use crate::baselines::BcConfig;
use crate::cql::TrainConfig;
use crate::dataset::{EpisodeConfig, StepMode};
use crate::geom::Resolution;
use crate::model::ModelConfig;
use crate::reward::RewardConfig;
use crate::rollout::GuidanceConfig;
use crate::synthgen::{derive_seed, SynthConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// 1-based line in the config file; `None` for flag overrides.
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "config line {l}: {}", self.message),
            None => write!(f, "config: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

pub const PRESETS: [&str; 2] = ["obs6pred3", "obs3pred6"];

/// Every knob of a run. Sub-seeds are derived from `seed`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub preset: String,
    pub synth: SynthConfig,
    pub episode: EpisodeConfig,
    pub actions: ActionConfig,
    pub reward: RewardConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub guidance: GuidanceConfig,
    pub bc_epochs: usize,
    pub bc_lr: f64,
    /// Worker threads; 0 uses every core. Not part of the config hash.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = Self {
            seed: 42,
            preset: "obs6pred3".into(),
            synth: SynthConfig::default(),
            episode: EpisodeConfig::default(),
            actions: ActionConfig::default(),
            reward: RewardConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            guidance: GuidanceConfig::default(),
            bc_epochs: 100,
            bc_lr: 3e-4,
            threads: 0,
        };
        cfg.apply_seed(42);
        cfg
    }
}

fn num<T: FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse {v:?}"))
}

fn flag(v: &str) -> Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("expected true or false, got {v:?}")),
    }
}

fn list(v: &str) -> Result<Vec<usize>, String> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| num(x.trim())).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

/// `(key, description)` in canonical order.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "root seed; every random stream is derived from it"),
    ("preset", "obs6pred3 or obs3pred6; sets t_obs and t_pred"),
    ("t_obs", "observed steps per episode"),
    ("t_pred", "predicted steps per episode"),
    ("step_mode", "keyframe (one step per annotated keyframe) or dense (one step per frame)"),
    ("lookahead", "training guidance lookahead h"),
    ("window_stride", "steps between consecutive episode windows"),
    ("clip_stride", "frame stride of the observation clip"),
    ("max_clip_len", "most recent clip frames kept"),
    ("delta_max", "largest normalised step per prediction step"),
    ("idle_eps", "expert displacements shorter than this are labelled idle"),
    ("r_time", "per-step time penalty"),
    ("r_prox_max", "proximity reward at zero distance"),
    ("tau_dist", "distance where the proximity reward crosses zero"),
    ("clamp_prox_at", "lower bound on proximity and terminal terms, or none"),
    ("synth_count", "synthetic trajectories"),
    ("synth_keyframes", "keyframes per synthetic trajectory"),
    ("synth_spacing_min", "fewest frames between keyframes"),
    ("synth_spacing_max", "most frames between keyframes"),
    ("synth_step_px_min", "shortest path length per keyframe interval, pixels"),
    ("synth_step_px_max", "longest path length per keyframe interval, pixels"),
    ("synth_curvature", "largest tangent turn at a segment joint, radians"),
    ("synth_noise_px", "keyframe noise standard deviation, pixels"),
    ("synth_width", "source image width, pixels"),
    ("synth_height", "source image height, pixels"),
    ("synth_texture_complexity", "background sinusoid components per channel"),
    ("synth_per_scene", "trajectories sharing one scene"),
    ("synth_split_train", "fraction of scenes in the training split"),
    ("synth_split_val", "fraction of scenes in the validation split"),
    ("crop_size", "crop side in cells"),
    ("crop_extent_px", "source pixels covered by one crop side"),
    ("conv_channels", "comma-separated output channels of the stride-2 convolutions"),
    ("d_model", "transformer width"),
    ("heads", "attention heads"),
    ("layers", "transformer layers"),
    ("freq_pairs", "sinusoidal frequency pairs per coordinate"),
    ("coord_dim", "width of each coordinate projection"),
    ("state_hidden", "hidden width of the state MLP"),
    ("state_dim", "state vector width"),
    ("guidance_radius", "guidance heatmap disk radius, crop cells"),
    ("head_hidden", "hidden width of actor and critic heads"),
    ("mag_hidden", "hidden width of the magnitude head"),
    ("alpha_cql", "conservative penalty weight"),
    ("gamma", "discount"),
    ("tau_soft", "target network update rate"),
    ("alpha_entropy", "entropy temperature"),
    ("lambda_mag", "magnitude loss weight"),
    ("bc_weight", "behaviour-cloning loss weight"),
    ("lr_encoder", "encoder learning rate"),
    ("lr_actor", "actor learning rate"),
    ("lr_critic", "critic learning rate"),
    ("lr_mag", "magnitude head learning rate"),
    ("epochs", "training epochs; the cosine schedule spans them"),
    ("batch_size", "episodes per update"),
    ("max_transitions_per_update", "transition subsample cap per update"),
    ("bucket_boundaries", "comma-separated clip-length bucket boundaries"),
    ("clamp_magnitude_target", "clamp expert step lengths to delta_max"),
    ("guidance_window", "observed points used by the extrapolation fit"),
    ("guidance_quad_min_points", "points needed for a quadratic fit"),
    ("bc_epochs", "epochs of the behaviour-cloning baseline"),
    ("bc_lr", "head learning rate of the behaviour-cloning baseline"),
    ("threads", "worker threads, 0 for all cores"),
];

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.set("preset", name).map_err(|message| ConfigError { line: None, message })?;
        Ok(cfg)
    }

    fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.synth.seed = seed;
        self.model.init_seed = derive_seed(seed, 100, 0);
        self.train.seed = derive_seed(seed, 101, 0);
    }

    /// Sets one key. `delta_max` updates every component that uses it.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        let e = &mut self.model.encoder;
        match key {
            "seed" => self.apply_seed(num(v)?),
            "preset" => {
                let (o, p) = match v {
                    "obs6pred3" => (6, 3),
                    "obs3pred6" => (3, 6),
                    _ => return Err(format!("unknown preset {v:?}; expected one of {}", PRESETS.join(", "))),
                };
                self.preset = v.to_string();
                self.episode.t_obs = o;
                self.episode.t_pred = p;
                self.episode.mode = StepMode::Keyframe;
            }
            "t_obs" => self.episode.t_obs = num(v)?,
            "t_pred" => self.episode.t_pred = num(v)?,
            "step_mode" => {
                self.episode.mode = match v {
                    "keyframe" => StepMode::Keyframe,
                    "dense" => StepMode::Dense,
                    _ => return Err(format!("step_mode must be keyframe or dense, got {v:?}")),
                }
            }
            "lookahead" => self.episode.lookahead = num(v)?,
            "window_stride" => self.episode.window_stride = num(v)?,
            "clip_stride" => self.episode.clip_stride = num(v)?,
            "max_clip_len" => self.episode.max_clip_len = num(v)?,
            "delta_max" => {
                let d: f64 = num(v)?;
                self.actions.delta_max = d;
                self.synth.delta_max = d;
                self.model.delta_max = d;
            }
            "idle_eps" => self.actions.idle_eps = num(v)?,
            "r_time" => self.reward.r_time = num(v)?,
            "r_prox_max" => self.reward.r_prox_max = num(v)?,
            "tau_dist" => self.reward.tau_dist = num(v)?,
            "clamp_prox_at" => self.reward.clamp_prox_at = if v == "none" { None } else { Some(num(v)?) },
            "synth_count" => self.synth.count = num(v)?,
            "synth_keyframes" => self.synth.keyframes = num(v)?,
            "synth_spacing_min" => self.synth.spacing.0 = num(v)?,
            "synth_spacing_max" => self.synth.spacing.1 = num(v)?,
            "synth_step_px_min" => self.synth.step_px.0 = num(v)?,
            "synth_step_px_max" => self.synth.step_px.1 = num(v)?,
            "synth_curvature" => self.synth.curvature = num(v)?,
            "synth_noise_px" => self.synth.noise_px = num(v)?,
            "synth_width" => self.synth.resolution.width = num(v)?,
            "synth_height" => self.synth.resolution.height = num(v)?,
            "synth_texture_complexity" => self.synth.texture_complexity = num(v)?,
            "synth_per_scene" => self.synth.per_scene = num(v)?,
            "synth_split_train" => self.synth.split.0 = num(v)?,
            "synth_split_val" => self.synth.split.1 = num(v)?,
            "crop_size" => e.crop_size = num(v)?,
            "crop_extent_px" => e.crop_extent_px = num(v)?,
            "conv_channels" => e.conv_channels = list(v)?,
            "d_model" => e.d_model = num(v)?,
            "heads" => e.heads = num(v)?,
            "layers" => e.layers = num(v)?,
            "freq_pairs" => e.freq_pairs = num(v)?,
            "coord_dim" => e.coord_dim = num(v)?,
            "state_hidden" => e.state_hidden = num(v)?,
            "state_dim" => e.state_dim = num(v)?,
            "guidance_radius" => e.guidance_radius = num(v)?,
            "head_hidden" => self.model.head_hidden = num(v)?,
            "mag_hidden" => self.model.mag_hidden = num(v)?,
            "alpha_cql" => self.train.alpha_cql = num(v)?,
            "gamma" => self.train.gamma = num(v)?,
            "tau_soft" => self.train.tau_soft = num(v)?,
            "alpha_entropy" => self.train.alpha_entropy = num(v)?,
            "lambda_mag" => self.train.lambda_mag = num(v)?,
            "bc_weight" => self.train.bc_weight = num(v)?,
            "lr_encoder" => self.train.lr_encoder = num(v)?,
            "lr_actor" => self.train.lr_actor = num(v)?,
            "lr_critic" => self.train.lr_critic = num(v)?,
            "lr_mag" => self.train.lr_mag = num(v)?,
            "epochs" => self.train.epochs = num(v)?,
            "batch_size" => self.train.batch_size = num(v)?,
            "max_transitions_per_update" => self.train.max_transitions_per_update = num(v)?,
            "bucket_boundaries" => self.train.bucket_boundaries = list(v)?,
            "clamp_magnitude_target" => self.train.clamp_magnitude_target = flag(v)?,
            "guidance_window" => self.guidance.window = num(v)?,
            "guidance_quad_min_points" => self.guidance.quad_min_points = num(v)?,
            "bc_epochs" => self.bc_epochs = num(v)?,
            "bc_lr" => self.bc_lr = num(v)?,
            "threads" => self.threads = num(v)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let e = &self.model.encoder;
        let s = match key {
            "seed" => self.seed.to_string(),
            "preset" => self.preset.clone(),
            "t_obs" => self.episode.t_obs.to_string(),
            "t_pred" => self.episode.t_pred.to_string(),
            "step_mode" => match self.episode.mode {
                StepMode::Keyframe => "keyframe".into(),
                StepMode::Dense => "dense".into(),
            },
            "lookahead" => self.episode.lookahead.to_string(),
            "window_stride" => self.episode.window_stride.to_string(),
            "clip_stride" => self.episode.clip_stride.to_string(),
            "max_clip_len" => self.episode.max_clip_len.to_string(),
            "delta_max" => self.actions.delta_max.to_string(),
            "idle_eps" => self.actions.idle_eps.to_string(),
            "r_time" => self.reward.r_time.to_string(),
            "r_prox_max" => self.reward.r_prox_max.to_string(),
            "tau_dist" => self.reward.tau_dist.to_string(),
            "clamp_prox_at" => self.reward.clamp_prox_at.map_or("none".into(), |c| c.to_string()),
            "synth_count" => self.synth.count.to_string(),
            "synth_keyframes" => self.synth.keyframes.to_string(),
            "synth_spacing_min" => self.synth.spacing.0.to_string(),
            "synth_spacing_max" => self.synth.spacing.1.to_string(),
            "synth_step_px_min" => self.synth.step_px.0.to_string(),
            "synth_step_px_max" => self.synth.step_px.1.to_string(),
            "synth_curvature" => self.synth.curvature.to_string(),
            "synth_noise_px" => self.synth.noise_px.to_string(),
            "synth_width" => self.synth.resolution.width.to_string(),
            "synth_height" => self.synth.resolution.height.to_string(),
            "synth_texture_complexity" => self.synth.texture_complexity.to_string(),
            "synth_per_scene" => self.synth.per_scene.to_string(),
            "synth_split_train" => self.synth.split.0.to_string(),
            "synth_split_val" => self.synth.split.1.to_string(),
            "crop_size" => e.crop_size.to_string(),
            "crop_extent_px" => e.crop_extent_px.to_string(),
            "conv_channels" => join(&e.conv_channels),
            "d_model" => e.d_model.to_string(),
            "heads" => e.heads.to_string(),
            "layers" => e.layers.to_string(),
            "freq_pairs" => e.freq_pairs.to_string(),
            "coord_dim" => e.coord_dim.to_string(),
            "state_hidden" => e.state_hidden.to_string(),
            "state_dim" => e.state_dim.to_string(),
            "guidance_radius" => e.guidance_radius.to_string(),
            "head_hidden" => self.model.head_hidden.to_string(),
            "mag_hidden" => self.model.mag_hidden.to_string(),
            "alpha_cql" => self.train.alpha_cql.to_string(),
            "gamma" => self.train.gamma.to_string(),
            "tau_soft" => self.train.tau_soft.to_string(),
            "alpha_entropy" => self.train.alpha_entropy.to_string(),
            "lambda_mag" => self.train.lambda_mag.to_string(),
            "bc_weight" => self.train.bc_weight.to_string(),
            "lr_encoder" => self.train.lr_encoder.to_string(),
            "lr_actor" => self.train.lr_actor.to_string(),
            "lr_critic" => self.train.lr_critic.to_string(),
            "lr_mag" => self.train.lr_mag.to_string(),
            "epochs" => self.train.epochs.to_string(),
            "batch_size" => self.train.batch_size.to_string(),
            "max_transitions_per_update" => self.train.max_transitions_per_update.to_string(),
            "bucket_boundaries" => join(&self.train.bucket_boundaries),
            "clamp_magnitude_target" => self.train.clamp_magnitude_target.to_string(),
            "guidance_window" => self.guidance.window.to_string(),
            "guidance_quad_min_points" => self.guidance.quad_min_points.to_string(),
            "bc_epochs" => self.bc_epochs.to_string(),
            "bc_lr" => self.bc_lr.to_string(),
            "threads" => self.threads.to_string(),
            _ => return None,
        };
        Some(s)
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| ConfigError { line: Some(i + 1), message };
            let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            self.set(k.trim(), v).map_err(err)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate().map_err(|message| ConfigError { line: None, message })?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.synth.validate().map_err(|e| e.to_string())?;
        self.episode.validate().map_err(|e| e.to_string())?;
        self.actions.validate().map_err(|e| e.to_string())?;
        self.model.encoder.validate()?;
        self.train.validate().map_err(|e| e.to_string())?;
        Resolution::new(self.synth.resolution.width, self.synth.resolution.height).map_err(|e| e.to_string())?;
        if self.guidance.window < 2 {
            return Err("guidance_window must be at least 2".into());
        }
        if self.episode.t_obs < 2 {
            return Err("t_obs must be at least 2 for extrapolated guidance".into());
        }
        if self.synth.keyframes < self.episode.t_obs + self.episode.t_pred && self.episode.mode == StepMode::Keyframe {
            return Err("synth_keyframes must cover t_obs + t_pred".into());
        }
        Ok(())
    }

    /// Documented `key = value` dump of every key; parses back to `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, doc) in KEYS {
            out.push_str(&format!("# {doc}\n{k} = {}\n", self.get(k).expect("listed key")));
        }
        out
    }

    /// Hash of every result-affecting key.
    pub fn hash(&self) -> u64 {
        let mut h = Sha256::new();
        for (k, _) in KEYS.iter().filter(|(k, _)| *k != "threads") {
            h.update(format!("{k}={}\n", self.get(k).expect("listed key")));
        }
        u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
    }

    pub fn bc(&self) -> BcConfig {
        BcConfig {
            model: ModelConfig {
                init_seed: derive_seed(self.seed, 102, 0),
                ..self.model.clone()
            },
            t_pred: self.episode.t_pred,
            lr: self.bc_lr,
            lr_encoder: self.train.lr_encoder,
            epochs: self.bc_epochs,
            batch_size: self.train.batch_size,
            bucket_boundaries: self.train.bucket_boundaries.clone(),
            seed: derive_seed(self.seed, 103, 0),
        }
    }
}
