use crate::dataset::Observation;
use crate::synthgen::{CropArchive, CropGeometry};

use super::{rasterize_guidance, EncoderError};

/// RGB plus guidance heatmap.
pub const CHANNELS: usize = 4;

/// Frames of one clip, `len × 4 × size × size`, with a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationClip {
    pub size: usize,
    pub data: Vec<f64>,
    pub valid: Vec<bool>,
}

impl ObservationClip {
    pub fn frame_len(&self) -> usize {
        CHANNELS * self.size * self.size
    }

    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        let n = self.frame_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn frame_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.frame_len();
        &mut self.data[i * n..(i + 1) * n]
    }

    /// Appends `extra` zero frames marked invalid.
    pub fn padded(&self, extra: usize) -> Self {
        let mut out = self.clone();
        out.data.resize(self.data.len() + extra * self.frame_len(), 0.0);
        out.valid.resize(self.valid.len() + extra, false);
        out
    }
}

/// Assembles the clip for an observation: archived RGB scaled to `[0, 1]`
/// and a guidance heatmap of the path observed up to each clip frame.
pub fn build_clip(
    obs: &Observation,
    crops: &CropArchive,
    radius: f64,
) -> Result<ObservationClip, EncoderError> {
    let size = crops.size;
    let plane = size * size;
    let mut data = Vec::with_capacity(obs.clip_frames.len() * CHANNELS * plane);
    for &frame in &obs.clip_frames {
        let rgb = crops.crop(&obs.trajectory_id, frame).ok_or_else(|| EncoderError::MissingCrop {
            id: obs.trajectory_id.clone(),
            frame,
        })?;
        let upto = obs.observed.partition_point(|s| s.frame <= frame);
        let here = obs.observed[..upto]
            .last()
            .filter(|s| s.frame == frame)
            .ok_or(EncoderError::MissingPosition { frame })?;
        let geo = CropGeometry {
            center_px: obs.resolution.to_pixels(here.point),
            extent_px: crops.extent_px,
            size,
        };
        data.extend(rgb.iter().map(|b| f64::from(*b) / 255.0));
        data.extend(rasterize_guidance(&geo, obs.resolution, &obs.observed[..upto], radius));
    }
    Ok(ObservationClip {
        size,
        data,
        valid: vec![true; obs.clip_frames.len()],
    })
}
