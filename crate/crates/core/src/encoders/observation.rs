use rand::Rng;

use crate::autodiff::nn::{Conv2d, Linear, TransformerLayer};
use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};

use super::{EncoderConfig, EncoderError, ObservationClip, CHANNELS};

/// Strided CNN per frame, temporal transformer over frames, masked mean over time.
#[derive(Clone, Debug)]
pub struct ObservationEncoder {
    pub convs: Vec<Conv2d>,
    pub proj: Linear,
    pub layers: Vec<TransformerLayer>,
    crop_size: usize,
    d_model: usize,
}

/// Fixed sinusoidal encoding of frame positions `0..len`, `len × dim`.
pub fn temporal_encoding(len: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; len * dim];
    for t in 0..len {
        for i in 0..dim {
            let rate = 10_000f64.powf(-((i / 2 * 2) as f64) / dim as f64);
            let a = t as f64 * rate;
            data[t * dim + i] = if i % 2 == 0 { a.sin() } else { a.cos() };
        }
    }
    Tensor::new(vec![len, dim], data).expect("shape matches data")
}

impl ObservationEncoder {
    pub fn new(store: &mut ParamStore, cfg: &EncoderConfig, rng: &mut impl Rng) -> Self {
        let mut convs = Vec::new();
        let mut in_ch = CHANNELS;
        for (i, &out_ch) in cfg.conv_channels.iter().enumerate() {
            convs.push(Conv2d::new(store, &format!("enc.conv{i}"), in_ch, out_ch, 3, 2, 1, rng));
            in_ch = out_ch;
        }
        let side = cfg.feature_side();
        let proj = Linear::new(store, "enc.proj", in_ch * side * side, cfg.d_model, rng);
        let layers = (0..cfg.layers)
            .map(|i| TransformerLayer::new(store, &format!("enc.attn{i}"), cfg.d_model, cfg.heads, rng))
            .collect();
        Self {
            convs,
            proj,
            layers,
            crop_size: cfg.crop_size,
            d_model: cfg.d_model,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p: Vec<ParamId> = self.convs.iter().flat_map(Conv2d::params).collect();
        p.extend(self.proj.params());
        p.extend(self.layers.iter().flat_map(TransformerLayer::params));
        p
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    /// `z_c` for each clip, stacked as `clips × d_model`.
    ///
    /// Clips are padded to a common length with masked zero frames; masked
    /// frames never enter an attention key set or the temporal mean.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, clips: &[&ObservationClip]) -> Result<Var, EncoderError> {
        if clips.is_empty() {
            return Err(EncoderError::EmptyBatch);
        }
        for (i, c) in clips.iter().enumerate() {
            if c.size != self.crop_size {
                return Err(EncoderError::CropSize {
                    got: c.size,
                    expected: self.crop_size,
                });
            }
            if !c.valid.iter().any(|v| *v) {
                return Err(EncoderError::AllFramesMasked(i));
            }
        }
        let t_max = clips.iter().map(|c| c.len()).max().unwrap_or(0);
        let frame_len = clips[0].frame_len();
        let mut data = Vec::with_capacity(clips.len() * t_max * frame_len);
        for c in clips {
            data.extend_from_slice(&c.data);
            data.resize(data.len() + (t_max - c.len()) * frame_len, 0.0);
        }
        let s = self.crop_size;
        let x = tape.input(Tensor::new(vec![clips.len() * t_max, CHANNELS, s, s], data)?);

        let mut h = x;
        for conv in &self.convs {
            h = conv.forward(tape, store, h)?;
            h = tape.relu(h)?;
        }
        let flat: usize = tape.value(h).shape()[1..].iter().product();
        let h = tape.reshape(h, vec![clips.len() * t_max, flat])?;
        let h = self.proj.forward(tape, store, h)?;
        let pe = tape.constant(temporal_encoding(t_max, self.d_model));

        let mut pooled = Vec::with_capacity(clips.len());
        for (i, c) in clips.iter().enumerate() {
            let rows: Vec<usize> = (i * t_max..(i + 1) * t_max).collect();
            let mut seq = tape.select_rows(h, &rows)?;
            seq = tape.add(seq, pe)?;
            let mut valid = c.valid.clone();
            valid.resize(t_max, false);
            for layer in &self.layers {
                seq = layer.forward(tape, store, seq, &valid)?;
            }
            let n_valid = valid.iter().filter(|v| **v).count() as f64;
            let weights: Vec<f64> = valid.iter().map(|v| if *v { 1.0 / n_valid } else { 0.0 }).collect();
            let w = tape.constant(Tensor::new(vec![1, t_max], weights)?);
            pooled.push(tape.matmul(w, seq)?);
        }
        Ok(tape.concat_rows(&pooled)?)
    }
}
