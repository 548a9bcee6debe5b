//! Image quality metrics.

use crate::error::BlurError;
use crate::image::ImageBuffer;

/// Peak signal-to-noise ratio in decibels with peak 1, over all pixels and
/// channels. Identical images yield `f64::INFINITY`.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, BlurError> {
    a.check_same_shape(b)?;
    let mse = a.mse(b);
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

/// Mean structural similarity on luma: Gaussian 11x11 window with sigma 1.5,
/// K1 = 0.01, K2 = 0.03, dynamic range 1, averaged over fully-supported
/// window positions.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, BlurError> {
    a.check_same_shape(b)?;
    const WINDOW: usize = 11;
    if a.width() < WINDOW || a.height() < WINDOW {
        return Err(BlurError::DimensionMismatch {
            expected: format!("at least {WINDOW}x{WINDOW}"),
            actual: format!("{}x{}", a.width(), a.height()),
        });
    }
    let la = a.luma();
    let lb = b.luma();
    let (w, h) = (a.width(), a.height());

    let kernel = gaussian_kernel(WINDOW, 1.5);
    let mul = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let xa = la.data();
    let xb = lb.data();
    let mu_a = conv_valid(xa, w, h, &kernel);
    let mu_b = conv_valid(xb, w, h, &kernel);
    let aa = conv_valid(&mul(xa, xa), w, h, &kernel);
    let bb = conv_valid(&mul(xb, xb), w, h, &kernel);
    let ab = conv_valid(&mul(xa, xb), w, h, &kernel);

    const K1: f64 = 0.01;
    const K2: f64 = 0.03;
    let c1 = K1 * K1;
    let c2 = K2 * K2;

    let mut acc = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        acc +=
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(acc / mu_a.len() as f64)
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let mut k: Vec<f64> = (0..size)
        .map(|i| (-0.5 * ((i as f64 - half) / sigma).powi(2)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable valid-mode convolution with a symmetric 1D kernel.
fn conv_valid(data: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let k = kernel.len();
    let ow = w - k + 1;
    let oh = h - k + 1;
    // Horizontal pass.
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, kv) in kernel.iter().enumerate() {
                acc += kv * data[y * w + x + i];
            }
            tmp[y * ow + x] = acc;
        }
    }
    // Vertical pass.
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, kv) in kernel.iter().enumerate() {
                acc += kv * tmp[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}
