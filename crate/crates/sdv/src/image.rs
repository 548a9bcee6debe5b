//! Dense image container used throughout the pipeline.

use crate::error::BlurError;

/// Row-major H x W x C image of real intensities.
///
/// Measured and exported images are normalized to [0, 1]; intermediate solver
/// iterates reuse the same container with unclamped values and are only
/// clamped when written out.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    /// All-zero image. `channels` must be 1 or 3.
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    /// Wraps existing data. Panics if the length does not match.
    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        assert_eq!(
            data.len(),
            width * height * channels,
            "data length mismatch"
        );
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<(), BlurError> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(BlurError::DimensionMismatch {
                expected: format!("{}x{}x{}", self.width, self.height, self.channels),
                actual: format!("{}x{}x{}", other.width, other.height, other.channels),
            })
        }
    }

    /// Clamps every intensity into [0, 1]. Applied on export only.
    pub fn clamped(&self) -> Self {
        let data = self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Self {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data,
        }
    }

    /// Rec. 601 luma; returns a single-channel copy for 1-channel input.
    pub fn luma(&self) -> ImageBuffer {
        if self.channels == 1 {
            return self.clone();
        }
        let mut out = Vec::with_capacity(self.pixel_count());
        for px in self.data.chunks_exact(3) {
            out.push(0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]);
        }
        ImageBuffer::from_data(self.width, self.height, 1, out)
    }

    /// Bilinear sample of one channel with out-of-domain taps dropped
    /// (zero padding). Matches the blur-row stamping convention.
    pub fn sample_bilinear_zero(&self, x: f64, y: f64, c: usize) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let mut acc = 0.0;
        for (dy, wy) in [(0i64, 1.0 - fy), (1i64, fy)] {
            if wy == 0.0 {
                continue;
            }
            let yy = y0 as i64 + dy;
            if yy < 0 || yy >= self.height as i64 {
                continue;
            }
            for (dx, wx) in [(0i64, 1.0 - fx), (1i64, fx)] {
                if wx == 0.0 {
                    continue;
                }
                let xx = x0 as i64 + dx;
                if xx < 0 || xx >= self.width as i64 {
                    continue;
                }
                acc += wy * wx * self.get(xx as usize, yy as usize, c);
            }
        }
        acc
    }

    /// Mean squared error against another image over all pixels and channels.
    pub fn mse(&self, other: &Self) -> f64 {
        assert!(self.same_shape(other), "mse requires matching shapes");
        let n = self.data.len() as f64;
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n
    }
}
