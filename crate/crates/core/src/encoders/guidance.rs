use crate::geom::{DenseSample, Resolution};
use crate::synthgen::CropGeometry;

/// Heatmap of the known path inside a crop: a disk of `radius` crop pixels
/// per sample, valued at the sample confidence, overlaps resolved by max.
pub fn rasterize_guidance(geo: &CropGeometry, resolution: Resolution, samples: &[DenseSample], radius: f64) -> Vec<f64> {
    let n = geo.size;
    let mut out = vec![0.0f64; n * n];
    for s in samples {
        let (x, y) = resolution.to_pixels(s.point);
        let (cx, cy) = geo.to_crop(x, y);
        let lo_c = (cx - radius - 0.5).floor().max(0.0) as usize;
        let lo_r = (cy - radius - 0.5).floor().max(0.0) as usize;
        let hi_c = (cx + radius - 0.5).ceil().min(n as f64 - 1.0);
        let hi_r = (cy + radius - 0.5).ceil().min(n as f64 - 1.0);
        if hi_c < 0.0 || hi_r < 0.0 {
            continue;
        }
        for row in lo_r..=hi_r as usize {
            for col in lo_c..=hi_c as usize {
                let d = (col as f64 + 0.5 - cx).hypot(row as f64 + 0.5 - cy);
                if d <= radius {
                    let cell = &mut out[row * n + col];
                    *cell = cell.max(s.confidence.clamp(0.0, 1.0));
                }
            }
        }
    }
    out
}
