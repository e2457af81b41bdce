use rand::Rng;

use crate::autodiff::nn::{Linear, Mlp};
use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::geom::PixelPoint;

use super::{EncoderConfig, EncoderError};

/// `[sin(2^i·π·v), cos(2^i·π·v)]` for `i = 0..pairs`.
pub fn sinusoidal_features(v: f64, pairs: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * pairs);
    let mut freq = std::f64::consts::PI;
    for _ in 0..pairs {
        out.push((freq * v).sin());
        out.push((freq * v).cos());
        freq *= 2.0;
    }
    out
}

fn point_features(p: (f64, f64), pairs: usize) -> Vec<f64> {
    let mut f = sinusoidal_features(p.0, pairs);
    f.extend(sinusoidal_features(p.1, pairs));
    f
}

/// Inputs for one state: which clip embedding to use, position, guidance and progress.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateInput {
    pub clip: usize,
    pub position: PixelPoint,
    pub guidance: PixelPoint,
    /// `k / T_pred`.
    pub progress: f64,
}

impl StateInput {
    pub fn new(clip: usize, position: PixelPoint, guidance: PixelPoint, k: usize, t_pred: usize) -> Result<Self, EncoderError> {
        let inside = |p: PixelPoint| p.is_finite() && (0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y);
        if !inside(position) || !inside(guidance) {
            return Err(EncoderError::OutOfRange("position and guidance must lie in [0, 1]²".into()));
        }
        if k >= t_pred {
            return Err(EncoderError::OutOfRange(format!("step {k} with horizon {t_pred}")));
        }
        Ok(Self {
            clip,
            position,
            guidance,
            progress: k as f64 / t_pred as f64,
        })
    }
}

/// `s_k = φ(z_c, enc_p(p̂), enc_g(g), enc_r(g − p̂), lin(k/T))`.
#[derive(Clone, Debug)]
pub struct StateEncoder {
    pub position: Linear,
    pub guidance: Linear,
    pub relative: Linear,
    pub progress: Linear,
    pub phi: Mlp,
    freq_pairs: usize,
}

impl StateEncoder {
    pub fn new(store: &mut ParamStore, cfg: &EncoderConfig, rng: &mut impl Rng) -> Self {
        let feat = 4 * cfg.freq_pairs;
        Self {
            position: Linear::new(store, "state.pos", feat, cfg.coord_dim, rng),
            guidance: Linear::new(store, "state.goal", feat, cfg.coord_dim, rng),
            relative: Linear::new(store, "state.rel", feat, cfg.coord_dim, rng),
            progress: Linear::new(store, "state.progress", 1, cfg.coord_dim, rng),
            phi: Mlp::new(
                store,
                "state.phi",
                &[cfg.d_model + 4 * cfg.coord_dim, cfg.state_hidden, cfg.state_dim],
                rng,
            ),
            freq_pairs: cfg.freq_pairs,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = Vec::new();
        for l in [&self.position, &self.guidance, &self.relative, &self.progress] {
            p.extend(l.params());
        }
        p.extend(self.phi.params());
        p
    }

    /// Sinusoidal feature rows for position, guidance and relative displacement.
    pub fn features(&self, inputs: &[StateInput]) -> [Tensor; 4] {
        let n = inputs.len();
        let f = 4 * self.freq_pairs;
        let mut pos = Vec::with_capacity(n * f);
        let mut goal = Vec::with_capacity(n * f);
        let mut rel = Vec::with_capacity(n * f);
        let mut prog = Vec::with_capacity(n);
        for s in inputs {
            pos.extend(point_features((s.position.x, s.position.y), self.freq_pairs));
            goal.extend(point_features((s.guidance.x, s.guidance.y), self.freq_pairs));
            let (dx, dy) = s.guidance.sub(s.position);
            rel.extend(point_features((dx, dy), self.freq_pairs));
            prog.push(s.progress);
        }
        let t = |shape: Vec<usize>, d| Tensor::new(shape, d).expect("shape matches data");
        [
            t(vec![n, f], pos),
            t(vec![n, f], goal),
            t(vec![n, f], rel),
            t(vec![n, 1], prog),
        ]
    }

    /// States for `inputs`, reading clip embeddings from the rows of `z` (`clips × d_model`).
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, z: Var, inputs: &[StateInput]) -> Result<Var, EncoderError> {
        if inputs.is_empty() {
            return Err(EncoderError::EmptyBatch);
        }
        let clips = tape.value(z).rows();
        if let Some(bad) = inputs.iter().find(|s| s.clip >= clips) {
            return Err(EncoderError::OutOfRange(format!("clip {} of {clips}", bad.clip)));
        }
        let rows: Vec<usize> = inputs.iter().map(|s| s.clip).collect();
        let zc = tape.select_rows(z, &rows)?;
        let [pos, goal, rel, prog] = self.features(inputs);
        let parts = [
            (pos, &self.position),
            (goal, &self.guidance),
            (rel, &self.relative),
            (prog, &self.progress),
        ];
        let mut cat = vec![zc];
        for (feat, layer) in parts {
            let x = tape.constant(feat);
            cat.push(layer.forward(tape, store, x)?);
        }
        let h = tape.concat_cols(&cat)?;
        Ok(self.phi.forward(tape, store, h)?)
    }
}
