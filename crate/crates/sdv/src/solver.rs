//! Robust deblurring: boundary-weight iteration alternated with IRLS
//! minimization of a sparse-gradient prior energy via conjugate gradients.
//!
//! The inner problem is weighted linear least squares,
//! `sum_x w(x) |B(x) - A_x I|^2 + alpha * sum rho |grad I|^2`,
//! solved on its normal equations
//! `(A^T W A + alpha D^T P D) I = A^T W B`, where the diagonal of `W` holds
//! the per-pixel data weights, `D` is the forward-difference gradient and
//! the diagonal of `P` the IRLS prior weights. Data weights are refreshed
//! between inner solves from the blur-model residual, which drives weights
//! of model-violating pixels (mixed pixels at motion boundaries, bad
//! geometry) toward zero.

use rayon::prelude::*;
use std::io::Write;

use crate::blur::BlurOperator;
use crate::error::BlurError;
use crate::image::ImageBuffer;

/// Per-pixel confidence in the image formation model, in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl WeightMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), width * height);
        debug_assert!(values.iter().all(|w| (0.0..=1.0).contains(w)));
        Self {
            width,
            height,
            values,
        }
    }

    pub fn ones(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![1.0; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Exports the weights as a grayscale image.
    pub fn to_image(&self) -> ImageBuffer {
        ImageBuffer::from_data(self.width, self.height, 1, self.values.clone())
    }
}

/// Binary occlusion/boundary mask; `true` marks pixels where the image
/// formation model is unreliable.
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionMask {
    width: usize,
    height: usize,
    mask: Vec<bool>,
}

impl OcclusionMask {
    pub fn new(width: usize, height: usize, mask: Vec<bool>) -> Self {
        assert_eq!(mask.len(), width * height);
        Self {
            width,
            height,
            mask,
        }
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![false; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Morphological dilation by `radius` pixels (Chebyshev metric).
    pub fn dilated(&self, radius: usize) -> Self {
        let r = radius as i64;
        let mut out = vec![false; self.mask.len()];
        for y in 0..self.height as i64 {
            for x in 0..self.width as i64 {
                if !self.mask[(y * self.width as i64 + x) as usize] {
                    continue;
                }
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx >= 0 && ny >= 0 && nx < self.width as i64 && ny < self.height as i64 {
                            out[(ny * self.width as i64 + nx) as usize] = true;
                        }
                    }
                }
            }
        }
        Self::new(self.width, self.height, out)
    }
}

/// Solver parameters. Defaults follow the reference configuration:
/// `alpha = 0.001`, `k_sigma = 4000/3`, `epsilon = 0.01`, prior exponent
/// 0.8, 10 outer iterations of 25 conjugate-gradient steps, 70 blur samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub alpha: f64,
    pub k_sigma: f64,
    pub epsilon: f64,
    pub prior_exponent: f64,
    pub outer_iterations: usize,
    pub cg_iterations: usize,
    pub n_samples: usize,
    /// When false, data weights are pinned to 1 (the boundary-weighting
    /// ablation); occlusion input is ignored.
    pub boundary_weighting: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            alpha: 0.001,
            k_sigma: 4000.0 / 3.0,
            epsilon: 0.01,
            prior_exponent: 0.8,
            outer_iterations: 10,
            cg_iterations: 25,
            n_samples: 70,
            boundary_weighting: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) {
        assert!(self.alpha > 0.0, "alpha must be positive");
        assert!(self.k_sigma > 0.0, "k_sigma must be positive");
        assert!(
            self.epsilon > 0.0 && self.epsilon < 1.0,
            "epsilon must be in (0, 1)"
        );
        assert!(
            self.prior_exponent > 0.0 && self.prior_exponent < 2.0,
            "prior exponent must be in (0, 2)"
        );
        assert!(self.outer_iterations >= 1 && self.cg_iterations >= 1);
        assert!(self.n_samples >= 1);
    }
}

/// Forward-difference gradient field: per pixel and channel, one horizontal
/// and one vertical component (zero on the last column/row).
#[derive(Debug, Clone)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
}

pub fn gradient(image: &ImageBuffer) -> GradientField {
    let (w, h, c) = (image.width(), image.height(), image.channels());
    let mut gx = vec![0.0; w * h * c];
    let mut gy = vec![0.0; w * h * c];
    let data = image.data();
    gx.par_chunks_mut(w * c)
        .zip(gy.par_chunks_mut(w * c))
        .enumerate()
        .for_each(|(y, (gxr, gyr))| {
            let row = &data[y * w * c..(y + 1) * w * c];
            for x in 0..w {
                for ch in 0..c {
                    let i = x * c + ch;
                    if x + 1 < w {
                        gxr[i] = row[i + c] - row[i];
                    }
                    if y + 1 < h {
                        gyr[i] = data[(y + 1) * w * c + i] - row[i];
                    }
                }
            }
        });
    GradientField {
        width: w,
        height: h,
        channels: c,
        gx,
        gy,
    }
}

/// Exact adjoint of [`gradient`].
pub fn gradient_transpose(field: &GradientField) -> ImageBuffer {
    let (w, h, c) = (field.width, field.height, field.channels);
    let mut out = vec![0.0; w * h * c];
    let (gx, gy) = (&field.gx, &field.gy);
    out.par_chunks_mut(w * c).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            for ch in 0..c {
                let i = x * c + ch;
                let gi = y * w * c + i;
                let mut acc = 0.0;
                if x >= 1 {
                    acc += gx[gi - c];
                }
                if x + 1 < w {
                    acc -= gx[gi];
                }
                if y >= 1 {
                    acc += gy[gi - w * c];
                }
                if y + 1 < h {
                    acc -= gy[gi];
                }
                row[i] = acc;
            }
        }
    });
    ImageBuffer::from_data(w, h, c, out)
}

/// IRLS prior weights `max(|c|, epsilon)^(prior_exponent - 2)` applied per
/// channel and gradient direction.
pub fn irls_prior_weights(field: &GradientField, cfg: &SolverConfig) -> GradientField {
    let e = cfg.prior_exponent - 2.0;
    let eps = cfg.epsilon;
    let map = |v: &[f64]| -> Vec<f64> { v.par_iter().map(|c| c.abs().max(eps).powf(e)).collect() };
    GradientField {
        width: field.width,
        height: field.height,
        channels: field.channels,
        gx: map(&field.gx),
        gy: map(&field.gy),
    }
}

/// Boundary weights from the blur-model residual:
/// `w(x) = exp(-k_sigma * sum_channels (B(x) - (A I)(x))^2)`.
pub fn update_boundary_weights(
    blurred: &ImageBuffer,
    op: &BlurOperator,
    estimate: &ImageBuffer,
    cfg: &SolverConfig,
) -> Result<WeightMap, BlurError> {
    blurred.check_same_shape(estimate)?;
    let model = op.apply(estimate)?;
    let c = blurred.channels();
    let k = cfg.k_sigma;
    let values: Vec<f64> = blurred
        .data()
        .par_chunks(c)
        .zip(model.data().par_chunks(c))
        .map(|(b, m)| {
            let r2: f64 = b.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
            (-k * r2).exp()
        })
        .collect();
    Ok(WeightMap::new(blurred.width(), blurred.height(), values))
}

/// Initial weights from the scene-flow occlusion mask: zero on masked
/// pixels, one elsewhere.
pub fn init_weights(mask: &OcclusionMask) -> WeightMap {
    let values = mask
        .mask()
        .iter()
        .map(|&m| if m { 0.0 } else { 1.0 })
        .collect();
    WeightMap::new(mask.width(), mask.height(), values)
}

/// One inner least-squares solve; returns the new estimate and the true
/// energy after the warm start and after each conjugate-gradient step.
pub fn solve_inner(
    blurred: &ImageBuffer,
    op: &BlurOperator,
    weights: &WeightMap,
    rho: &GradientField,
    cfg: &SolverConfig,
    warm_start: &ImageBuffer,
) -> Result<(ImageBuffer, Vec<f64>), BlurError> {
    blurred.check_same_shape(warm_start)?;
    let c = blurred.channels();
    let wd: &[f64] = weights.values();
    let px: &[f64] = &rho.gx;
    let py: &[f64] = &rho.gy;
    let alpha = cfg.alpha;

    let scale_by_pixel_weight = |img: &mut ImageBuffer| {
        let data = img.data_mut();
        data.par_chunks_mut(c)
            .zip(wd.par_iter())
            .for_each(|(pixel, w)| {
                for v in pixel {
                    *v *= w;
                }
            });
    };

    // M v = A^T W A v + alpha D^T P D v
    let normal_apply = |v: &ImageBuffer| -> Result<ImageBuffer, BlurError> {
        let mut av = op.apply(v)?;
        scale_by_pixel_weight(&mut av);
        let mut atwav = op.apply_transpose(&av)?;
        let mut g = gradient(v);
        g.gx.par_iter_mut()
            .zip(px.par_iter())
            .for_each(|(a, p)| *a *= p);
        g.gy.par_iter_mut()
            .zip(py.par_iter())
            .for_each(|(a, p)| *a *= p);
        let dtg = gradient_transpose(&g);
        atwav
            .data_mut()
            .par_iter_mut()
            .zip(dtg.data().par_iter())
            .for_each(|(a, d)| *a += alpha * d);
        Ok(atwav)
    };

    let energy = |v: &ImageBuffer| -> Result<f64, BlurError> {
        let av = op.apply(v)?;
        let data: f64 = blurred
            .data()
            .chunks_exact(c)
            .zip(av.data().chunks_exact(c))
            .zip(wd)
            .map(|((b, m), w)| {
                let r2: f64 = b.iter().zip(m).map(|(x, y)| (x - y) * (x - y)).sum();
                w * r2
            })
            .sum();
        let g = gradient(v);
        let prior: f64 =
            g.gx.iter()
                .zip(px)
                .chain(g.gy.iter().zip(py))
                .map(|(c, p)| p * c * c)
                .sum();
        Ok(data + alpha * prior)
    };

    // b = A^T W B
    let mut wb = blurred.clone();
    scale_by_pixel_weight(&mut wb);
    let b = op.apply_transpose(&wb)?;

    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };

    let mut x = warm_start.clone();
    let mut energies = Vec::with_capacity(cfg.cg_iterations + 1);
    energies.push(energy(&x)?);

    let mx = normal_apply(&x)?;
    let mut r: Vec<f64> = b
        .data()
        .iter()
        .zip(mx.data())
        .map(|(bi, mi)| bi - mi)
        .collect();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);

    for _ in 0..cfg.cg_iterations {
        if rs == 0.0 {
            energies.push(*energies.last().unwrap());
            continue;
        }
        let pimg = ImageBuffer::from_data(blurred.width(), blurred.height(), c, p.clone());
        let mut mp = normal_apply(&pimg)?;
        let mut denom = dot(&p, mp.data());
        // Breakdown: the search direction is numerically inside the null
        // space of the (possibly singular) normal matrix. Restart once from
        // the steepest-descent direction, then give up on this step.
        let breakdown = |d: f64, dir: &[f64]| !d.is_finite() || d <= 1e-14 * dot(dir, dir);
        if breakdown(denom, &p) {
            p.copy_from_slice(&r);
            let rimg = ImageBuffer::from_data(blurred.width(), blurred.height(), c, p.clone());
            mp = normal_apply(&rimg)?;
            denom = dot(&p, mp.data());
            rs = dot(&r, &r);
            if breakdown(denom, &p) {
                energies.push(*energies.last().unwrap());
                continue;
            }
        }
        let step = rs / denom;
        x.data_mut()
            .iter_mut()
            .zip(&p)
            .for_each(|(xi, pi)| *xi += step * pi);
        r.iter_mut()
            .zip(mp.data())
            .for_each(|(ri, mi)| *ri -= step * mi);
        let rs_new = dot(&r, &r);
        let beta = rs_new / rs;
        p.iter_mut()
            .zip(&r)
            .for_each(|(pi, ri)| *pi = ri + beta * *pi);
        rs = rs_new;
        energies.push(energy(&x)?);
    }

    Ok((x, energies))
}

/// Energy and weight-change record of one outer IRLS round.
#[derive(Debug, Clone)]
pub struct OuterTrace {
    pub outer: usize,
    /// True quadratic energy after the warm start and after each CG step.
    pub energies: Vec<f64>,
    pub max_weight_change: f64,
}

/// Line-oriented progress trace of a full deblurring run.
#[derive(Debug, Clone, Default)]
pub struct DeblurTrace {
    pub outers: Vec<OuterTrace>,
}

impl DeblurTrace {
    /// Emits `iter=<outer> cg=<step> energy=<value>` records followed by
    /// one `iter=<outer> max_weight_change=<value>` record per round.
    pub fn write_lines<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for o in &self.outers {
            for (k, e) in o.energies.iter().enumerate() {
                writeln!(out, "iter={} cg={} energy={:.12e}", o.outer, k, e)?;
            }
            writeln!(
                out,
                "iter={} max_weight_change={:.6e}",
                o.outer, o.max_weight_change
            )?;
        }
        Ok(())
    }
}

/// Full robust deblurring loop, returning the trace alongside the result.
///
/// Each round refreshes the prior weights from the current estimate, runs
/// one inner solve warm-started from it, then refreshes the data weights
/// from the new residual. The first estimate is the blurred input; the
/// initial data weights come from the occlusion mask.
pub fn deblur_with_trace(
    blurred: &ImageBuffer,
    op: &BlurOperator,
    occlusion: &OcclusionMask,
    cfg: &SolverConfig,
) -> Result<(ImageBuffer, WeightMap, DeblurTrace), BlurError> {
    cfg.validate();
    if occlusion.width() != blurred.width() || occlusion.height() != blurred.height() {
        return Err(BlurError::DimensionMismatch {
            expected: format!("{}x{}", blurred.width(), blurred.height()),
            actual: format!("{}x{}", occlusion.width(), occlusion.height()),
        });
    }
    let ones = WeightMap::ones(blurred.width(), blurred.height());
    let mut weights = if cfg.boundary_weighting {
        init_weights(occlusion)
    } else {
        ones.clone()
    };
    let mut estimate = blurred.clone();
    let mut trace = DeblurTrace::default();

    for outer in 0..cfg.outer_iterations {
        let rho = irls_prior_weights(&gradient(&estimate), cfg);
        let (next, energies) = solve_inner(blurred, op, &weights, &rho, cfg, &estimate)?;
        estimate = next;
        let next_weights = if cfg.boundary_weighting {
            update_boundary_weights(blurred, op, &estimate, cfg)?
        } else {
            ones.clone()
        };
        let max_weight_change = next_weights.max_abs_diff(&weights);
        weights = next_weights;
        trace.outers.push(OuterTrace {
            outer,
            energies,
            max_weight_change,
        });
    }

    Ok((estimate.clamped(), weights, trace))
}

/// [`deblur_with_trace`] without the trace.
pub fn deblur(
    blurred: &ImageBuffer,
    op: &BlurOperator,
    occlusion: &OcclusionMask,
    cfg: &SolverConfig,
) -> Result<(ImageBuffer, WeightMap), BlurError> {
    let (img, w, _) = deblur_with_trace(blurred, op, occlusion, cfg)?;
    Ok((img, w))
}
