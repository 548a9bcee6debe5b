//! Sparse spatially-variant blur operators.
//!
//! Each output pixel owns one sparse row that gathers from the sharp
//! reference image along the pixel's own trajectory: either the exact
//! homography-induced trajectory of its planar segment, or the
//! piecewise-linear 2D trajectory induced by a displacement field (the
//! baseline). Rows are built with midpoint time sampling and bilinear
//! stamping; samples leaving the image domain are dropped without
//! renormalizing the row.

use nalgebra::Matrix3;
use rayon::prelude::*;
use std::collections::HashMap;

use crate::error::{BlurError, GeometryError};
use crate::geometry::{
    apply_homography, blur_homography, reference_to_time, CameraModel, PlanePatch,
};
use crate::image::ImageBuffer;

/// Exposure discretization: `duty_cycle` is the exposed fraction of the
/// frame interval, `samples` the number of midpoint time samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlurSpec {
    pub duty_cycle: f64,
    pub samples: usize,
}

impl BlurSpec {
    pub fn new(duty_cycle: f64, samples: usize) -> Self {
        assert!(
            duty_cycle > 0.0 && duty_cycle <= 1.0,
            "duty cycle must be in (0, 1]"
        );
        assert!(samples >= 1, "need at least one sample");
        Self {
            duty_cycle,
            samples,
        }
    }

    /// Midpoint sample times, symmetric about the reference time, in
    /// fractions of the frame interval.
    pub fn sample_times(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.samples as f64;
        let d = self.duty_cycle;
        (0..self.samples).map(move |k| d * (-0.5 + (k as f64 + 0.5) / n))
    }
}

impl Default for BlurSpec {
    fn default() -> Self {
        Self::new(1.0, 70)
    }
}

/// Per-pixel segment labels referencing [`PlanePatch`] entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationMap {
    width: usize,
    height: usize,
    labels: Vec<u16>,
}

impl SegmentationMap {
    pub fn new(width: usize, height: usize, labels: Vec<u16>) -> Self {
        assert_eq!(labels.len(), width * height, "label count mismatch");
        Self {
            width,
            height,
            labels,
        }
    }

    pub fn uniform(width: usize, height: usize, label: u16) -> Self {
        Self::new(width, height, vec![label; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    #[inline]
    pub fn label_at(&self, x: usize, y: usize) -> u16 {
        self.labels[y * self.width + x]
    }
}

/// Forward and backward per-pixel 2D displacements over one frame interval.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    forward: Vec<[f64; 2]>,
    backward: Vec<[f64; 2]>,
}

impl FlowField {
    pub fn new(
        width: usize,
        height: usize,
        forward: Vec<[f64; 2]>,
        backward: Vec<[f64; 2]>,
    ) -> Self {
        assert_eq!(forward.len(), width * height);
        assert_eq!(backward.len(), width * height);
        Self {
            width,
            height,
            forward,
            backward,
        }
    }

    pub fn zero(width: usize, height: usize) -> Self {
        Self::new(
            width,
            height,
            vec![[0.0, 0.0]; width * height],
            vec![[0.0, 0.0]; width * height],
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn forward(&self) -> &[[f64; 2]] {
        &self.forward
    }

    pub fn backward(&self) -> &[[f64; 2]] {
        &self.backward
    }

    #[inline]
    pub fn forward_at(&self, x: usize, y: usize) -> [f64; 2] {
        self.forward[y * self.width + x]
    }

    #[inline]
    pub fn backward_at(&self, x: usize, y: usize) -> [f64; 2] {
        self.backward[y * self.width + x]
    }
}

/// Row-stacked sparse blur matrix with one gather row per pixel. Immutable
/// after assembly; also stores its transpose so the adjoint is a gather too.
#[derive(Debug, Clone)]
pub struct BlurOperator {
    width: usize,
    height: usize,
    offsets: Vec<usize>,
    entries: Vec<(u32, f64)>,
    t_offsets: Vec<usize>,
    t_entries: Vec<(u32, f64)>,
}

impl BlurOperator {
    pub fn from_rows(width: usize, height: usize, rows: Vec<Vec<(u32, f64)>>) -> Self {
        assert_eq!(rows.len(), width * height);
        let n = rows.len();
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0usize);
        let nnz: usize = rows.iter().map(Vec::len).sum();
        let mut entries = Vec::with_capacity(nnz);
        for row in &rows {
            entries.extend_from_slice(row);
            offsets.push(entries.len());
        }

        // Column-major transpose; scanning rows in ascending order keeps
        // each column's entries sorted by row index.
        let mut counts = vec![0usize; n];
        for &(col, _) in &entries {
            counts[col as usize] += 1;
        }
        let mut t_offsets = Vec::with_capacity(n + 1);
        t_offsets.push(0usize);
        for c in &counts {
            let last = *t_offsets.last().unwrap();
            t_offsets.push(last + c);
        }
        let mut cursor = t_offsets[..n].to_vec();
        let mut t_entries = vec![(0u32, 0.0f64); nnz];
        for (row_idx, row) in rows.iter().enumerate() {
            for &(col, w) in row {
                let slot = cursor[col as usize];
                t_entries[slot] = (row_idx as u32, w);
                cursor[col as usize] += 1;
            }
        }

        Self {
            width,
            height,
            offsets,
            entries,
            t_offsets,
            t_entries,
        }
    }

    pub fn identity(width: usize, height: usize) -> Self {
        let rows = (0..width * height).map(|i| vec![(i as u32, 1.0)]).collect();
        Self::from_rows(width, height, rows)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn row(&self, i: usize) -> &[(u32, f64)] {
        &self.entries[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn column(&self, j: usize) -> &[(u32, f64)] {
        &self.t_entries[self.t_offsets[j]..self.t_offsets[j + 1]]
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    fn check_dims(&self, image: &ImageBuffer) -> Result<(), BlurError> {
        if image.width() != self.width || image.height() != self.height {
            return Err(BlurError::DimensionMismatch {
                expected: format!("{}x{}", self.width, self.height),
                actual: format!("{}x{}", image.width(), image.height()),
            });
        }
        Ok(())
    }

    /// Forward blur `A I`, per channel. Output values are left unclamped.
    pub fn apply(&self, image: &ImageBuffer) -> Result<ImageBuffer, BlurError> {
        self.check_dims(image)?;
        Ok(self.gather(image, &self.offsets, &self.entries))
    }

    /// Exact adjoint `A^T I`, realized as a gather over the stored transpose.
    pub fn apply_transpose(&self, image: &ImageBuffer) -> Result<ImageBuffer, BlurError> {
        self.check_dims(image)?;
        Ok(self.gather(image, &self.t_offsets, &self.t_entries))
    }

    fn gather(
        &self,
        image: &ImageBuffer,
        offsets: &[usize],
        entries: &[(u32, f64)],
    ) -> ImageBuffer {
        let channels = image.channels();
        let src = image.data();
        let mut out = vec![0.0f64; self.pixel_count() * channels];
        out.par_chunks_mut(channels)
            .enumerate()
            .for_each(|(i, px)| {
                let row = &entries[offsets[i]..offsets[i + 1]];
                match channels {
                    1 => {
                        let mut acc = 0.0;
                        for &(j, w) in row {
                            acc += w * src[j as usize];
                        }
                        px[0] = acc;
                    }
                    _ => {
                        let (mut r, mut g, mut b) = (0.0, 0.0, 0.0);
                        for &(j, w) in row {
                            let base = j as usize * 3;
                            r += w * src[base];
                            g += w * src[base + 1];
                            b += w * src[base + 2];
                        }
                        px[0] = r;
                        px[1] = g;
                        px[2] = b;
                    }
                }
            });
        ImageBuffer::from_data(self.width, self.height, channels, out)
    }

    /// Renders one row as a dense grayscale kernel image: the support
    /// bounding box plus a margin, weights scaled so the peak is 1.
    /// Returns the image and the offset of its top-left corner.
    pub fn row_as_image(&self, x: usize, y: usize, margin: usize) -> (ImageBuffer, usize, usize) {
        let row = self.row(y * self.width + x);
        if row.is_empty() {
            return (ImageBuffer::zeros(1 + 2 * margin, 1 + 2 * margin, 1), x, y);
        }
        let (mut x0, mut x1, mut y0, mut y1) = (usize::MAX, 0usize, usize::MAX, 0usize);
        for &(j, _) in row {
            let px = j as usize % self.width;
            let py = j as usize / self.width;
            x0 = x0.min(px);
            x1 = x1.max(px);
            y0 = y0.min(py);
            y1 = y1.max(py);
        }
        let x0 = x0.saturating_sub(margin);
        let y0 = y0.saturating_sub(margin);
        let x1 = (x1 + margin).min(self.width - 1);
        let y1 = (y1 + margin).min(self.height - 1);
        let (w, h) = (x1 - x0 + 1, y1 - y0 + 1);
        let peak = row.iter().map(|&(_, w)| w).fold(0.0, f64::max);
        let mut img = ImageBuffer::zeros(w, h, 1);
        for &(j, wgt) in row {
            let px = j as usize % self.width;
            let py = j as usize / self.width;
            img.set(px - x0, py - y0, 0, wgt / peak);
        }
        (img, x0, y0)
    }
}

/// Stamps `weight` at the continuous position `(px, py)` onto up to four
/// integer pixels with bilinear weights; taps outside the domain are dropped.
fn bilinear_stamp(
    px: f64,
    py: f64,
    weight: f64,
    width: usize,
    height: usize,
    out: &mut Vec<(u32, f64)>,
) {
    let x0 = px.floor();
    let y0 = py.floor();
    let fx = px - x0;
    let fy = py - y0;
    for (dy, wy) in [(0i64, 1.0 - fy), (1i64, fy)] {
        if wy == 0.0 {
            continue;
        }
        let yy = y0 as i64 + dy;
        if yy < 0 || yy >= height as i64 {
            continue;
        }
        for (dx, wx) in [(0i64, 1.0 - fx), (1i64, fx)] {
            if wx == 0.0 {
                continue;
            }
            let xx = x0 as i64 + dx;
            if xx < 0 || xx >= width as i64 {
                continue;
            }
            out.push(((yy as usize * width + xx as usize) as u32, weight * wy * wx));
        }
    }
}

/// Merges duplicate indices by summation and sorts by index (stable, so
/// duplicate weights are accumulated in sample order).
fn merge_row(mut taps: Vec<(u32, f64)>) -> Vec<(u32, f64)> {
    taps.sort_by_key(|&(j, _)| j);
    let mut out: Vec<(u32, f64)> = Vec::with_capacity(taps.len());
    for (j, w) in taps {
        match out.last_mut() {
            Some(last) if last.0 == j => last.1 += w,
            _ => out.push((j, w)),
        }
    }
    out
}

/// The homographies mapping each sample time back to the reference time for
/// one patch. Shared by the per-row constructor and the assembler so both
/// produce bit-identical rows.
pub fn segment_homographies(
    camera: &CameraModel,
    patch: &PlanePatch,
    spec: &BlurSpec,
) -> Result<Vec<Matrix3<f64>>, GeometryError> {
    spec.sample_times()
        .map(|t| blur_homography(camera, patch, t))
        .collect()
}

fn stamp_homography_row(
    x: usize,
    y: usize,
    homographies: &[Matrix3<f64>],
    width: usize,
    height: usize,
) -> Vec<(u32, f64)> {
    let weight = 1.0 / homographies.len() as f64;
    let mut taps = Vec::with_capacity(4 * homographies.len());
    for h in homographies {
        let (px, py) = apply_homography(h, x as f64, y as f64);
        bilinear_stamp(px, py, weight, width, height, &mut taps);
    }
    merge_row(taps)
}

/// Blur row for pixel `(x, y)` lying on `patch`, induced by the patch's
/// homographies over the exposure.
pub fn homography_blur_row(
    x: usize,
    y: usize,
    camera: &CameraModel,
    patch: &PlanePatch,
    spec: &BlurSpec,
    width: usize,
    height: usize,
) -> Result<Vec<(u32, f64)>, GeometryError> {
    let hs = segment_homographies(camera, patch, spec)?;
    Ok(stamp_homography_row(x, y, &hs, width, height))
}

fn stamp_flow_row(x: usize, y: usize, flow: &FlowField, spec: &BlurSpec) -> Vec<(u32, f64)> {
    let (w, h) = (flow.width(), flow.height());
    let fwd = flow.forward_at(x, y);
    let bwd = flow.backward_at(x, y);
    let weight = 1.0 / spec.samples as f64;
    let mut taps = Vec::with_capacity(4 * spec.samples);
    for t in spec.sample_times() {
        let (dx, dy) = if t >= 0.0 {
            (t * fwd[0], t * fwd[1])
        } else {
            (-t * bwd[0], -t * bwd[1])
        };
        bilinear_stamp(x as f64 + dx, y as f64 + dy, weight, w, h, &mut taps);
    }
    merge_row(taps)
}

/// Blur row for pixel `(x, y)` along the piecewise-linear 2D trajectory
/// given by its forward and backward displacements (constant velocity on
/// each half of the exposure).
pub fn flow_blur_row(x: usize, y: usize, flow: &FlowField, spec: &BlurSpec) -> Vec<(u32, f64)> {
    stamp_flow_row(x, y, flow, spec)
}

fn patch_table<'a>(
    patches: &'a [PlanePatch],
    seg: &SegmentationMap,
) -> Result<HashMap<u16, &'a PlanePatch>, BlurError> {
    let table: HashMap<u16, &PlanePatch> = patches.iter().map(|p| (p.segment_id, p)).collect();
    for &label in seg.labels() {
        if !table.contains_key(&label) {
            return Err(BlurError::MissingSegment { label });
        }
    }
    Ok(table)
}

/// Stacks one homography-induced row per pixel, each using the homographies
/// of the pixel's own segment at the reference time.
pub fn assemble_operator(
    camera: &CameraModel,
    patches: &[PlanePatch],
    seg: &SegmentationMap,
    spec: &BlurSpec,
) -> Result<BlurOperator, BlurError> {
    let (width, height) = (seg.width(), seg.height());
    let table = patch_table(patches, seg)?;
    let mut homographies: HashMap<u16, Vec<Matrix3<f64>>> = HashMap::new();
    for (&label, patch) in &table {
        homographies.insert(label, segment_homographies(camera, patch, spec)?);
    }

    let rows: Vec<Vec<(u32, f64)>> = (0..width * height)
        .into_par_iter()
        .map(|i| {
            let (x, y) = (i % width, i / width);
            let hs = &homographies[&seg.label_at(x, y)];
            stamp_homography_row(x, y, hs, width, height)
        })
        .collect();
    Ok(BlurOperator::from_rows(width, height, rows))
}

/// Stacks one flow-induced row per pixel.
pub fn assemble_flow_operator(flow: &FlowField, spec: &BlurSpec) -> BlurOperator {
    let (width, height) = (flow.width(), flow.height());
    let rows: Vec<Vec<(u32, f64)>> = (0..width * height)
        .into_par_iter()
        .map(|i| stamp_flow_row(i % width, i / width, flow, spec))
        .collect();
    BlurOperator::from_rows(width, height, rows)
}

/// Projects the per-segment 3D motion to a 2D displacement field: for each
/// pixel, the image-plane displacement of its surface point over one frame
/// interval, forward and backward.
pub fn project_scene_flow(
    camera: &CameraModel,
    patches: &[PlanePatch],
    seg: &SegmentationMap,
) -> Result<FlowField, BlurError> {
    let (width, height) = (seg.width(), seg.height());
    let table = patch_table(patches, seg)?;
    let mut maps: HashMap<u16, (Matrix3<f64>, Matrix3<f64>)> = HashMap::new();
    for (&label, patch) in &table {
        let fwd = reference_to_time(camera, patch, 1.0)?;
        let bwd = reference_to_time(camera, patch, -1.0)?;
        maps.insert(label, (fwd, bwd));
    }
    let mut forward = vec![[0.0; 2]; width * height];
    let mut backward = vec![[0.0; 2]; width * height];
    for y in 0..height {
        for x in 0..width {
            let (g1, gm1) = &maps[&seg.label_at(x, y)];
            let (fx, fy) = apply_homography(g1, x as f64, y as f64);
            let (bx, by) = apply_homography(gm1, x as f64, y as f64);
            forward[y * width + x] = [fx - x as f64, fy - y as f64];
            backward[y * width + x] = [bx - x as f64, by - y as f64];
        }
    }
    Ok(FlowField::new(width, height, forward, backward))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{RigidMotion, Twist};
    use nalgebra::Vector3;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fronto_patch(translation: Vector3<f64>) -> PlanePatch {
        PlanePatch::new(
            Vector3::new(0.0, 0.0, 1.0),
            Twist::pure_translation(translation),
            0,
        )
        .unwrap()
    }

    fn densify(row: &[(u32, f64)], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for &(j, w) in row {
            out[j as usize] += w;
        }
        out
    }

    #[test]
    fn identity_twist_gives_delta_row() {
        let cam = CameraModel::pinhole(64.0, 32.0, 32.0);
        let patch = fronto_patch(Vector3::zeros());
        let spec = BlurSpec::default();
        let row = homography_blur_row(20, 17, &cam, &patch, &spec, 64, 64).unwrap();
        assert_eq!(row.len(), 1);
        assert_eq!(row[0].0, 17 * 64 + 20);
        assert!((row[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn translation_row_matches_dense_rasterization() {
        // 8 px/frame horizontal motion of a fronto-parallel plane at z = 1:
        // camera K = I, translation (8, 0, 0) projects to 8 px.
        let cam = CameraModel::new(Matrix3::identity(), Vector3::zeros()).unwrap();
        let patch = fronto_patch(Vector3::new(8.0, 0.0, 0.0));
        let (w, h) = (64usize, 9usize);
        let (x, y) = (32usize, 4usize);
        let spec = BlurSpec::new(1.0, 70);
        let row = homography_blur_row(x, y, &cam, &patch, &spec, w, h).unwrap();

        let total: f64 = row.iter().map(|&(_, wt)| wt).sum();
        assert!((total - 1.0).abs() < 1e-6, "row sum {total}");

        // Support spans ~8 px centered on x.
        let xs: Vec<usize> = row.iter().map(|&(j, _)| j as usize % w).collect();
        let (xmin, xmax) = (*xs.iter().min().unwrap(), *xs.iter().max().unwrap());
        assert!(xmin >= x - 5 && xmax <= x + 5, "support [{xmin}, {xmax}]");

        // Dense line-integral oracle with 10k samples.
        let oracle_spec = BlurSpec::new(1.0, 10_000);
        let mut taps = Vec::new();
        for t in oracle_spec.sample_times() {
            bilinear_stamp(
                x as f64 - 8.0 * t,
                y as f64,
                1.0 / 10_000.0,
                w,
                h,
                &mut taps,
            );
        }
        let oracle = merge_row(taps);
        let l1: f64 = densify(&row, w * h)
            .iter()
            .zip(densify(&oracle, w * h).iter())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(l1 < 0.02, "L1 distance to oracle {l1}");
    }

    /// Motion: rotation about the plane normal through the plane's center
    /// point on the optical axis; projects to circular arcs about the
    /// principal point.
    fn roll_patch(angle: f64) -> (CameraModel, PlanePatch) {
        let cam = CameraModel::pinhole(256.0, 128.0, 128.0);
        let motion = RigidMotion::rotation_about_axis_through(
            angle,
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(0.0, 0.0, 1.0),
        );
        let patch = PlanePatch::new(Vector3::new(0.0, 0.0, 1.0), motion.log().unwrap(), 0).unwrap();
        (cam, patch)
    }

    #[test]
    fn rotation_row_traces_circular_arc() {
        let (cam, patch) = roll_patch(10.0_f64.to_radians());
        let spec = BlurSpec::new(1.0, 70);
        let (x, y) = (228usize, 128usize); // 100 px right of the axis
        let radius = 100.0;

        let hs = segment_homographies(&cam, &patch, &spec).unwrap();
        for h in &hs {
            let (px, py) = apply_homography(h, x as f64, y as f64);
            let r = ((px - 128.0).powi(2) + (py - 128.0).powi(2)).sqrt();
            assert!(
                (r - radius).abs() < 0.5,
                "sample off circle by {}",
                (r - radius).abs()
            );
        }

        // Row taps stay in a thin annulus around the circle.
        let row = homography_blur_row(x, y, &cam, &patch, &spec, 256, 256).unwrap();
        for &(j, _) in &row {
            let (px, py) = ((j % 256) as f64, (j / 256) as f64);
            let r = ((px - 128.0).powi(2) + (py - 128.0).powi(2)).sqrt();
            assert!((r - radius).abs() < 1.5);
        }
    }

    #[test]
    fn flow_row_of_rotation_is_a_chord() {
        let (cam, patch) = roll_patch(10.0_f64.to_radians());
        let seg = SegmentationMap::uniform(256, 256, 0);
        let flow = project_scene_flow(&cam, &[patch], &seg).unwrap();
        let spec = BlurSpec::new(1.0, 70);
        let (x, y) = (228usize, 128usize);

        let fwd = flow.forward_at(x, y);
        let bwd = flow.backward_at(x, y);
        let mut max_dev = 0.0f64;
        for t in spec.sample_times() {
            let (px, py) = if t >= 0.0 {
                (x as f64 + t * fwd[0], y as f64 + t * fwd[1])
            } else {
                (x as f64 - t * bwd[0], y as f64 - t * bwd[1])
            };
            let r = ((px - 128.0).powi(2) + (py - 128.0).powi(2)).sqrt();
            max_dev = max_dev.max((r - 100.0).abs());
        }
        assert!(max_dev > 0.3, "chord deviation only {max_dev}");
    }

    #[test]
    fn zero_flow_gives_delta_row() {
        let flow = FlowField::zero(16, 16);
        let row = flow_blur_row(5, 6, &flow, &BlurSpec::default());
        assert_eq!(row.len(), 1);
        assert_eq!(row[0].0, 6 * 16 + 5);
        assert!((row[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn flow_and_homography_agree_on_pure_translation() {
        let cam = CameraModel::new(Matrix3::identity(), Vector3::zeros()).unwrap();
        let patch = fronto_patch(Vector3::new(8.0, 0.0, 0.0));
        let (w, h) = (64usize, 9usize);
        let spec = BlurSpec::new(1.0, 70);

        let n = w * h;
        let flow = FlowField::new(w, h, vec![[8.0, 0.0]; n], vec![[-8.0, 0.0]; n]);

        let hrow = homography_blur_row(32, 4, &cam, &patch, &spec, w, h).unwrap();
        let frow = flow_blur_row(32, 4, &flow, &spec);
        let l1: f64 = densify(&hrow, n)
            .iter()
            .zip(densify(&frow, n).iter())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(l1 < 1e-6, "L1 disagreement {l1}");
    }

    #[test]
    fn assemble_identity_operator() {
        let cam = CameraModel::pinhole(32.0, 16.0, 16.0);
        let patch = fronto_patch(Vector3::zeros());
        let seg = SegmentationMap::uniform(32, 32, 0);
        let op = assemble_operator(&cam, &[patch], &seg, &BlurSpec::default()).unwrap();
        for i in 0..op.pixel_count() {
            let row = op.row(i);
            assert_eq!(row.len(), 1);
            assert_eq!(row[0].0, i as u32);
            assert!((row[0].1 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn operator_preserves_constant_in_interior() {
        let cam = CameraModel::pinhole(32.0, 16.0, 16.0);
        let patch = fronto_patch(Vector3::new(0.1, 0.05, 0.0));
        let seg = SegmentationMap::uniform(32, 32, 0);
        let op = assemble_operator(&cam, &[patch], &seg, &BlurSpec::default()).unwrap();
        let img = ImageBuffer::from_data(32, 32, 1, vec![0.4; 32 * 32]);
        let out = op.apply(&img).unwrap();
        for y in 6..26 {
            for x in 6..26 {
                assert!((out.get(x, y, 0) - 0.4).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn assemble_respects_per_pixel_segment() {
        let cam = CameraModel::pinhole(32.0, 16.0, 16.0);
        let left = fronto_patch(Vector3::new(0.1, 0.0, 0.0));
        let mut right = fronto_patch(Vector3::new(0.0, 0.15, 0.0));
        right.segment_id = 1;
        let mut labels = vec![0u16; 32 * 32];
        for y in 0..32 {
            for x in 16..32 {
                labels[y * 32 + x] = 1;
            }
        }
        let seg = SegmentationMap::new(32, 32, labels);
        let spec = BlurSpec::new(1.0, 35);
        let op = assemble_operator(&cam, &[left, right], &seg, &spec).unwrap();
        for (x, y) in [(3usize, 10usize), (15, 20), (16, 20), (30, 5)] {
            let patch = if x < 16 { &left } else { &right };
            let expected = homography_blur_row(x, y, &cam, patch, &spec, 32, 32).unwrap();
            assert_eq!(op.row(y * 32 + x), &expected[..], "row ({x},{y})");
        }
    }

    #[test]
    fn missing_segment_is_reported() {
        let cam = CameraModel::pinhole(32.0, 16.0, 16.0);
        let patch = fronto_patch(Vector3::zeros());
        let seg = SegmentationMap::uniform(8, 8, 3);
        let err = assemble_operator(&cam, &[patch], &seg, &BlurSpec::default()).unwrap_err();
        assert!(matches!(err, BlurError::MissingSegment { label: 3 }));
    }

    #[test]
    fn constant_flow_gives_shift_invariant_rows() {
        let n = 32 * 32;
        let flow = FlowField::new(32, 32, vec![[6.0, 0.0]; n], vec![[-6.0, 0.0]; n]);
        let op = assemble_flow_operator(&flow, &BlurSpec::new(1.0, 50));
        let center = op.row(16 * 32 + 16);
        let shifted = op.row(16 * 32 + 17);
        assert_eq!(center.len(), shifted.len());
        for (&(j0, w0), &(j1, w1)) in center.iter().zip(shifted.iter()) {
            assert_eq!(j0 + 1, j1);
            assert!((w0 - w1).abs() < 1e-12);
        }
    }

    #[test]
    fn step_edge_blurs_to_linear_ramp() {
        // An 8 px horizontal box blur of a vertical step is a linear ramp.
        let cam = CameraModel::new(Matrix3::identity(), Vector3::zeros()).unwrap();
        let patch = fronto_patch(Vector3::new(8.0, 0.0, 0.0));
        let (w, h) = (64usize, 5usize);
        let seg = SegmentationMap::uniform(w, h, 0);
        let spec = BlurSpec::new(1.0, 800);
        let op = assemble_operator(&cam, &[patch], &seg, &spec).unwrap();
        let mut img = ImageBuffer::zeros(w, h, 1);
        for y in 0..h {
            for x in 32..w {
                img.set(x, y, 0, 1.0);
            }
        }
        let out = op.apply(&img).unwrap();
        for x in 20..44 {
            // Closed form: the step at 31.5 convolved with a box of
            // half-width 4 centered at the output pixel.
            let expected = (((x as f64 - 31.5) + 4.0) / 8.0).clamp(0.0, 1.0);
            assert!(
                (out.get(x, 2, 0) - expected).abs() < 0.01,
                "x={x}: got {}, expected {expected}",
                out.get(x, 2, 0)
            );
        }
    }

    #[test]
    fn adjoint_identity_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cam = CameraModel::pinhole(16.0, 8.0, 8.0);
        let motion = RigidMotion::rotation_about_axis_through(
            0.1,
            Vector3::new(0.1, 0.9, 0.2),
            Vector3::new(0.0, 0.0, 1.0),
        )
        .with_extra_translation(Vector3::new(0.2, -0.1, 0.05));
        let patch = PlanePatch::new(Vector3::new(0.0, 0.0, 1.0), motion.log().unwrap(), 0).unwrap();
        let seg = SegmentationMap::uniform(16, 16, 0);
        let op = assemble_operator(&cam, &[patch], &seg, &BlurSpec::new(1.0, 30)).unwrap();

        for _ in 0..5 {
            let u: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let ub = ImageBuffer::from_data(16, 16, 1, u.clone());
            let vb = ImageBuffer::from_data(16, 16, 1, v.clone());
            let au = op.apply(&ub).unwrap();
            let atv = op.apply_transpose(&vb).unwrap();
            let lhs: f64 = au.data().iter().zip(&v).map(|(a, b)| a * b).sum();
            let rhs: f64 = u.iter().zip(atv.data()).map(|(a, b)| a * b).sum();
            assert!(
                (lhs - rhs).abs() < 1e-10,
                "adjoint defect {}",
                (lhs - rhs).abs()
            );
        }
    }

    #[test]
    fn transpose_of_delta_reads_out_transpose_column() {
        // A^T applied to a delta at p returns column p of A^T, i.e. row p
        // of A, laid out as an image.
        let cam = CameraModel::pinhole(16.0, 8.0, 8.0);
        let patch = fronto_patch(Vector3::new(0.2, 0.0, 0.0));
        let seg = SegmentationMap::uniform(16, 16, 0);
        let op = assemble_operator(&cam, &[patch], &seg, &BlurSpec::new(1.0, 20)).unwrap();
        let p = 8 * 16 + 8;
        let mut delta = ImageBuffer::zeros(16, 16, 1);
        delta.data_mut()[p] = 1.0;
        let out = op.apply_transpose(&delta).unwrap();
        assert_eq!(out.data(), &densify(op.row(p), 256)[..]);
    }

    #[test]
    fn rows_are_normalized_and_nonnegative() {
        let cam = CameraModel::pinhole(64.0, 32.0, 32.0);
        let motion = RigidMotion::rotation_about_axis_through(
            0.06,
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(0.0, 0.0, 1.0),
        )
        .with_extra_translation(Vector3::new(0.02, 0.03, -0.05));
        let patch = PlanePatch::new(Vector3::new(0.0, 0.0, 1.0), motion.log().unwrap(), 0).unwrap();
        let seg = SegmentationMap::uniform(64, 64, 0);
        let spec = BlurSpec::new(1.0, 70);
        let op = assemble_operator(&cam, &[patch], &seg, &spec).unwrap();

        let hs = segment_homographies(&cam, &patch, &spec).unwrap();
        for i in 0..op.pixel_count() {
            let row = op.row(i);
            assert!(row.len() <= 4 * spec.samples);
            let sum: f64 = row.iter().map(|&(_, w)| w).sum();
            assert!(row.iter().all(|&(_, w)| w >= 0.0));
            // Fully-in-domain rows sum to one.
            let (x, y) = (i % 64, i / 64);
            let inside = hs.iter().all(|h| {
                let (px, py) = apply_homography(h, x as f64, y as f64);
                (0.0..=63.0).contains(&px) && (0.0..=63.0).contains(&py)
            });
            if inside {
                assert!((sum - 1.0).abs() < 1e-6, "row {i} sums to {sum}");
            } else {
                assert!(sum <= 1.0 + 1e-6);
            }
        }
    }

    #[test]
    fn row_support_is_local() {
        let cam = CameraModel::new(Matrix3::identity(), Vector3::zeros()).unwrap();
        let speed = 6.0;
        let patch = fronto_patch(Vector3::new(speed, 0.0, 0.0));
        let seg = SegmentationMap::uniform(48, 9, 0);
        let spec = BlurSpec::new(0.5, 40);
        let op = assemble_operator(&cam, &[patch], &seg, &spec).unwrap();
        for i in 0..op.pixel_count() {
            let row = op.row(i);
            let xs: Vec<f64> = row.iter().map(|&(j, _)| (j % 48) as f64).collect();
            let ys: Vec<f64> = row.iter().map(|&(j, _)| (j / 48) as f64).collect();
            let dx = xs.iter().cloned().fold(f64::MIN, f64::max)
                - xs.iter().cloned().fold(f64::MAX, f64::min);
            let dy = ys.iter().cloned().fold(f64::MIN, f64::max)
                - ys.iter().cloned().fold(f64::MAX, f64::min);
            let diameter = (dx * dx + dy * dy).sqrt();
            assert!(diameter <= speed * spec.duty_cycle + 2.0);
        }
    }

    #[test]
    fn kernel_image_has_unit_peak() {
        let (cam, patch) = roll_patch(0.15);
        let seg = SegmentationMap::uniform(256, 256, 0);
        let op = assemble_operator(&cam, &[patch], &seg, &BlurSpec::new(1.0, 70)).unwrap();
        let (img, x0, y0) = op.row_as_image(200, 128, 2);
        let peak = img.data().iter().cloned().fold(0.0, f64::max);
        assert!((peak - 1.0).abs() < 1e-12);
        assert!(x0 <= 200 && y0 <= 128);
    }
}
