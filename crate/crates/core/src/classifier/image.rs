//! Conversion of encoded rasters into network input tensors.

use crate::encoder::EncodedImage;

use super::ClassifierError;

/// Channel-major (`C x H x W`) float image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub channels: usize,
    pub side: usize,
    pub data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(channels: usize, side: usize, data: Vec<f64>) -> Result<Self, ClassifierError> {
        if data.len() != channels * side * side {
            return Err(ClassifierError::ShapeMismatch {
                expected: channels * side * side,
                actual: data.len(),
            });
        }
        Ok(ImageTensor {
            channels,
            side,
            data,
        })
    }

    pub fn zeros(channels: usize, side: usize) -> Self {
        ImageTensor {
            channels,
            side,
            data: vec![0.0; channels * side * side],
        }
    }

    /// Area-average resample of an RGB raster to `side x side`.
    pub fn from_image(image: &EncodedImage, side: usize) -> Result<Self, ClassifierError> {
        let (w, h) = (image.width() as usize, image.height() as usize);
        if side == 0 || w == 0 || h == 0 {
            return Err(ClassifierError::ShapeMismatch {
                expected: side,
                actual: w.min(h),
            });
        }
        let xs = area_weights(w, side);
        let ys = area_weights(h, side);
        let plane = side * side;
        let mut data = vec![0.0; 3 * plane];
        let pixels = image.pixels();
        for (oy, ywts) in ys.iter().enumerate() {
            for (ox, xwts) in xs.iter().enumerate() {
                let mut acc = [0.0f64; 3];
                let mut total = 0.0;
                for &(sy, wy) in ywts {
                    for &(sx, wx) in xwts {
                        let wgt = wy * wx;
                        let i = (sy * w + sx) * 3;
                        for c in 0..3 {
                            acc[c] += wgt * f64::from(pixels[i + c]);
                        }
                        total += wgt;
                    }
                }
                for c in 0..3 {
                    data[c * plane + oy * side + ox] = acc[c] / (total * 255.0);
                }
            }
        }
        Ok(ImageTensor {
            channels: 3,
            side,
            data,
        })
    }
}

/// For each output cell, the source cells it covers and their overlap widths.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|s| {
                    let overlap = (hi.min((s + 1) as f64) - lo.max(s as f64)).max(0.0);
                    (overlap > 0.0).then_some((s, overlap))
                })
                .collect()
        })
        .collect()
}
