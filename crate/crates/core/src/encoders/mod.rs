//! Observation encoder (crops + guidance heatmap → `z_c`) and the
//! goal-conditioned state encoder.

mod clip;
mod guidance;
mod observation;
mod state;

use thiserror::Error;

use crate::autodiff::TensorError;

pub use clip::{build_clip, ObservationClip, CHANNELS};
pub use guidance::rasterize_guidance;
pub use observation::{temporal_encoding, ObservationEncoder};
pub use state::{sinusoidal_features, StateEncoder, StateInput};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncoderError {
    #[error("every frame of clip {0} is masked")]
    AllFramesMasked(usize),
    #[error("no crop for {id} at frame {frame}")]
    MissingCrop { id: String, frame: i64 },
    #[error("clip frame {frame} has no observed position")]
    MissingPosition { frame: i64 },
    #[error("state input out of range: {0}")]
    OutOfRange(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("clip crop size {got} does not match encoder crop size {expected}")]
    CropSize { got: usize, expected: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub crop_size: usize,
    /// Source pixels covered by one crop side.
    pub crop_extent_px: f64,
    pub conv_channels: Vec<usize>,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    /// Sinusoidal frequency pairs per coordinate.
    pub freq_pairs: usize,
    /// Width of each coordinate / progress projection.
    pub coord_dim: usize,
    pub state_hidden: usize,
    pub state_dim: usize,
    /// Guidance disk radius in crop pixels.
    pub guidance_radius: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            crop_size: 32,
            crop_extent_px: 128.0,
            conv_channels: vec![16, 32, 64],
            d_model: 128,
            heads: 4,
            layers: 2,
            freq_pairs: 8,
            coord_dim: 64,
            state_hidden: 256,
            state_dim: 128,
            guidance_radius: 2.0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.crop_size == 0 || self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return Err("crop_size and conv channels must be positive".into());
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(format!("d_model {} not divisible by heads {}", self.d_model, self.heads));
        }
        if self.freq_pairs == 0 || self.coord_dim == 0 || self.state_hidden == 0 || self.state_dim == 0 {
            return Err("state encoder widths must be positive".into());
        }
        if !(self.crop_extent_px > 0.0) || !(self.guidance_radius >= 0.0) {
            return Err("crop extent must be positive and guidance radius nonnegative".into());
        }
        Ok(())
    }

    /// Spatial side length after the stride-2 convolutions.
    pub fn feature_side(&self) -> usize {
        self.conv_channels.iter().fold(self.crop_size, |s, _| s.div_ceil(2))
    }
}
