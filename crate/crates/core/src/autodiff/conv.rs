//! im2col helpers for 2-D convolution.

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    /// Rows of the column matrix.
    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn out_len(&self) -> usize {
        self.out_height() * self.out_width()
    }

    /// Source index for every (patch row, output position) pair, `None` in the padding.
    fn for_each(&self, mut f: impl FnMut(usize, Option<usize>)) {
        let (oh, ow) = (self.out_height(), self.out_width());
        let k = self.kernel;
        let mut col = 0;
        for c in 0..self.channels {
            for ki in 0..k {
                for kj in 0..k {
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                            let src = if iy >= 0
                                && ix >= 0
                                && (iy as usize) < self.height
                                && (ix as usize) < self.width
                            {
                                Some((c * self.height + iy as usize) * self.width + ix as usize)
                            } else {
                                None
                            };
                            f(col, src);
                            col += 1;
                        }
                    }
                }
            }
        }
    }

    pub fn im2col(&self, image: &[f64], cols: &mut [f64]) {
        self.for_each(|i, src| cols[i] = src.map_or(0.0, |s| image[s]));
    }

    pub fn col2im_acc(&self, cols: &[f64], image: &mut [f64]) {
        self.for_each(|i, src| {
            if let Some(s) = src {
                image[s] += cols[i];
            }
        });
    }
}
