//! Ground-truth scene synthesis.
//!
//! Scenes are stacks of textured planar layers, each moving with its own
//! constant rigid 3D motion. Blurred frames are produced by averaging many
//! sub-frames, each composited front-to-back by warping every layer's
//! texture with its exact homography at that sub-time; the reference frame
//! is the composite at the central time. The renderer uses a finer time
//! sampling than the solver's blur operators so the solver is never
//! validated against its own forward model.
//!
//! Layer textures live in reference-image coordinates. Background layers
//! cover the full frame and are sampled with the same zero-padding rule the
//! blur operators use, so single-layer renders and operator outputs differ
//! only by the time quadrature.

use rayon::prelude::*;

use crate::blur::{project_scene_flow, BlurSpec, FlowField, SegmentationMap};
use crate::error::BlurError;
use crate::geometry::{
    apply_homography, blur_homography, CameraModel, PlanePatch, RigidMotion, Twist,
};
use crate::image::ImageBuffer;
use crate::solver::OcclusionMask;
use nalgebra::{Matrix3, Vector3};

/// One textured planar layer.
#[derive(Debug, Clone)]
pub struct SceneLayer {
    /// RGB texture in reference-image coordinates.
    pub texture: ImageBuffer,
    /// Placement of texture pixel (0, 0) in image coordinates.
    pub origin: (i64, i64),
    pub patch: PlanePatch,
    /// Background layers are hit everywhere and sampled with zero padding;
    /// foreground layers are opaque exactly on their texture rectangle.
    pub full_frame: bool,
}

impl SceneLayer {
    fn hit(&self, px: f64, py: f64) -> bool {
        if self.full_frame {
            return true;
        }
        let tx = px - self.origin.0 as f64;
        let ty = py - self.origin.1 as f64;
        tx >= 0.0
            && ty >= 0.0
            && tx <= (self.texture.width() - 1) as f64
            && ty <= (self.texture.height() - 1) as f64
    }

    fn sample(&self, px: f64, py: f64, c: usize) -> f64 {
        let tx = px - self.origin.0 as f64;
        let ty = py - self.origin.1 as f64;
        if self.full_frame {
            self.texture.sample_bilinear_zero(tx, ty, c)
        } else {
            // Inside the opaque rectangle; clamp edge taps.
            let tx = tx.clamp(0.0, (self.texture.width() - 1) as f64);
            let ty = ty.clamp(0.0, (self.texture.height() - 1) as f64);
            self.texture.sample_bilinear_zero(tx, ty, c)
        }
    }
}

/// A full synthetic scene: camera, front-to-back layers, exposure, and the
/// sub-frame count used for rendering.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub name: String,
    pub camera: CameraModel,
    pub width: usize,
    pub height: usize,
    /// Ordered front to back; the last layer must be full-frame.
    pub layers: Vec<SceneLayer>,
    pub spec: BlurSpec,
    pub render_samples: usize,
}

impl SceneSpec {
    fn validate(&self) {
        assert!(!self.layers.is_empty(), "scene needs at least one layer");
        assert!(
            self.layers.last().unwrap().full_frame,
            "backmost layer must cover the full frame"
        );
        assert!(self.render_samples >= 1);
        for layer in &self.layers {
            assert_eq!(layer.texture.channels(), 3, "layer textures are RGB");
        }
    }

    /// Homographies of every layer at the renderer's sub-times.
    fn layer_homographies(&self) -> Result<Vec<Vec<Matrix3<f64>>>, BlurError> {
        let render_spec = BlurSpec::new(self.spec.duty_cycle, self.render_samples);
        self.layers
            .iter()
            .map(|layer| {
                render_spec
                    .sample_times()
                    .map(|t| blur_homography(&self.camera, &layer.patch, t))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(BlurError::from)
            })
            .collect()
    }

    /// Index of the front-most layer hit by pixel `(x, y)` warped by the
    /// per-layer homographies `hs`; `None` if nothing is hit.
    fn assignment(&self, hs: &[Matrix3<f64>], x: f64, y: f64) -> Option<usize> {
        for (l, layer) in self.layers.iter().enumerate() {
            let (px, py) = apply_homography(&hs[l], x, y);
            if layer.hit(px, py) {
                return Some(l);
            }
        }
        None
    }
}

/// Renders the motion-blurred frame (average of `render_samples` sub-frames)
/// and the sharp central reference frame.
pub fn render_blurred(scene: &SceneSpec) -> Result<(ImageBuffer, ImageBuffer), BlurError> {
    scene.validate();
    let (w, h) = (scene.width, scene.height);
    let all_hs = scene.layer_homographies()?;
    let n = scene.render_samples;
    let identity = vec![Matrix3::identity(); scene.layers.len()];

    // With no motion anywhere, every sub-frame equals the reference
    // composite and the time average collapses.
    let static_scene = scene.layers.iter().all(|l| l.patch.motion.is_identity());

    let composite_at = |x: f64, y: f64, hs_at: &dyn Fn(usize) -> Matrix3<f64>, px: &mut [f64]| {
        for (l, layer) in scene.layers.iter().enumerate() {
            let (wx, wy) = apply_homography(&hs_at(l), x, y);
            if layer.hit(wx, wy) {
                for (c, v) in px.iter_mut().enumerate() {
                    *v = layer.sample(wx, wy, c);
                }
                return;
            }
        }
        for v in px.iter_mut() {
            *v = 0.0;
        }
    };

    let mut reference = vec![0.0f64; w * h * 3];
    reference
        .par_chunks_mut(w * 3)
        .enumerate()
        .for_each(|(y, row)| {
            let mut px = [0.0f64; 3];
            for x in 0..w {
                composite_at(x as f64, y as f64, &|l| identity[l], &mut px);
                row[x * 3..x * 3 + 3].copy_from_slice(&px);
            }
        });
    let reference = ImageBuffer::from_data(w, h, 3, reference);

    if static_scene {
        return Ok((reference.clone(), reference));
    }

    let mut blurred = vec![0.0f64; w * h * 3];
    #[allow(clippy::needless_range_loop)]
    blurred
        .par_chunks_mut(w * 3)
        .enumerate()
        .for_each(|(y, row)| {
            let mut px = [0.0f64; 3];
            for x in 0..w {
                let acc = &mut row[x * 3..x * 3 + 3];
                for k in 0..n {
                    composite_at(x as f64, y as f64, &|l| all_hs[l][k], &mut px);
                    acc[0] += px[0];
                    acc[1] += px[1];
                    acc[2] += px[2];
                }
                let inv = 1.0 / n as f64;
                acc[0] *= inv;
                acc[1] *= inv;
                acc[2] *= inv;
            }
        });
    Ok((ImageBuffer::from_data(w, h, 3, blurred), reference))
}

/// Exact ground-truth sidecars for a scene: the reference-time segmentation,
/// per-segment patches, the mixed-pixel occlusion mask (pixels whose
/// front-most layer changes within the exposure, dilated by one pixel), and
/// the exact 2D displacement field of the front-most surface.
pub fn ground_truth_sidecar(
    scene: &SceneSpec,
) -> Result<(SegmentationMap, Vec<PlanePatch>, OcclusionMask, FlowField), BlurError> {
    scene.validate();
    let (w, h) = (scene.width, scene.height);
    let all_hs = scene.layer_homographies()?;
    let n = scene.render_samples;
    let identity = vec![Matrix3::identity(); scene.layers.len()];

    let mut labels = vec![0u16; w * h];
    let mut mixed = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let at_ref = scene
                .assignment(&identity, x as f64, y as f64)
                .expect("backmost layer covers the frame");
            labels[y * w + x] = at_ref as u16;
            let mut is_mixed = false;
            for k in 0..n {
                let hs: Vec<Matrix3<f64>> = all_hs.iter().map(|layer_hs| layer_hs[k]).collect();
                if scene.assignment(&hs, x as f64, y as f64) != Some(at_ref) {
                    is_mixed = true;
                    break;
                }
            }
            mixed[y * w + x] = is_mixed;
        }
    }

    let seg = SegmentationMap::new(w, h, labels);
    let mask = OcclusionMask::new(w, h, mixed).dilated(1);
    let patches: Vec<PlanePatch> = scene
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let mut p = l.patch;
            p.segment_id = i as u16;
            p
        })
        .collect();
    let flow = project_scene_flow(&scene.camera, &patches, &seg)?;
    Ok((seg, patches, mask, flow))
}

/// Procedural textures with documented seeds.
pub mod textures {
    use super::ImageBuffer;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Separable Gaussian blur with replicated edges.
    pub fn gaussian_blur(img: &ImageBuffer, sigma: f64) -> ImageBuffer {
        if sigma <= 0.0 {
            return img.clone();
        }
        let radius = (3.0 * sigma).ceil() as i64;
        let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
        for i in -radius..=radius {
            kernel.push((-0.5 * (i as f64 / sigma).powi(2)).exp());
        }
        let norm: f64 = kernel.iter().sum();
        for k in &mut kernel {
            *k /= norm;
        }

        let (w, h, c) = (img.width(), img.height(), img.channels());
        let mut tmp = ImageBuffer::zeros(w, h, c);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for (ki, kv) in kernel.iter().enumerate() {
                        let sx = (x as i64 + ki as i64 - radius).clamp(0, w as i64 - 1) as usize;
                        acc += kv * img.get(sx, y, ch);
                    }
                    tmp.set(x, y, ch, acc);
                }
            }
        }
        let mut out = ImageBuffer::zeros(w, h, c);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for (ki, kv) in kernel.iter().enumerate() {
                        let sy = (y as i64 + ki as i64 - radius).clamp(0, h as i64 - 1) as usize;
                        acc += kv * tmp.get(x, sy, ch);
                    }
                    out.set(x, y, ch, acc);
                }
            }
        }
        out
    }

    fn stretch_to(img: &mut ImageBuffer, lo: f64, hi: f64) {
        let c = img.channels();
        let n = img.pixel_count();
        for ch in 0..c {
            let mut min = f64::MAX;
            let mut max = f64::MIN;
            for i in 0..n {
                let v = img.data()[i * c + ch];
                min = min.min(v);
                max = max.max(v);
            }
            let scale = if max > min {
                (hi - lo) / (max - min)
            } else {
                0.0
            };
            for i in 0..n {
                let v = img.data()[i * c + ch];
                img.data_mut()[i * c + ch] = lo + (v - min) * scale;
            }
        }
    }

    /// Gaussian-filtered white noise stretched to `[lo, hi]`.
    pub fn filtered_noise(
        w: usize,
        h: usize,
        seed: u64,
        sigma: f64,
        lo: f64,
        hi: f64,
    ) -> ImageBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
        let raw = ImageBuffer::from_data(w, h, 3, data);
        let mut out = gaussian_blur(&raw, sigma);
        stretch_to(&mut out, lo, hi);
        out
    }

    /// Slightly smoothed two-color checkerboard.
    pub fn checkerboard(
        w: usize,
        h: usize,
        cell: usize,
        a: [f64; 3],
        b: [f64; 3],
        sigma: f64,
    ) -> ImageBuffer {
        let mut img = ImageBuffer::zeros(w, h, 3);
        for y in 0..h {
            for x in 0..w {
                let color = if (x / cell + y / cell).is_multiple_of(2) {
                    a
                } else {
                    b
                };
                for (ch, v) in color.iter().enumerate() {
                    img.set(x, y, ch, *v);
                }
            }
        }
        gaussian_blur(&img, sigma)
    }

    /// Rows of random dot-matrix glyphs, resembling printed text.
    pub fn glyph_text(w: usize, h: usize, seed: u64, fg: f64, bg: f64) -> ImageBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = ImageBuffer::from_data(w, h, 3, vec![bg; w * h * 3]);
        let (gw, gh) = (6usize, 9usize); // glyph cell incl. spacing
        for gy in 0..h / gh {
            for gx in 0..w / gw {
                if rng.gen_bool(0.15) {
                    continue; // word gap
                }
                // 5x7 dot matrix with column/row strokes.
                let mut dots = [[false; 5]; 7];
                for stroke in 0..rng.gen_range(2..5) {
                    if stroke % 2 == 0 {
                        let col = rng.gen_range(0..5);
                        let from = rng.gen_range(0..4);
                        let to = rng.gen_range(from + 1..=6);
                        for (r, row) in dots.iter_mut().enumerate() {
                            if r >= from && r <= to {
                                row[col] = true;
                            }
                        }
                    } else {
                        let row = rng.gen_range(0..7);
                        let from = rng.gen_range(0..3);
                        let to = rng.gen_range(from + 1..=4);
                        for d in &mut dots[row][from..=to] {
                            *d = true;
                        }
                    }
                }
                for (r, row) in dots.iter().enumerate() {
                    for (c, &on) in row.iter().enumerate() {
                        if on {
                            let (px, py) = (gx * gw + c, gy * gh + r + 1);
                            if px < w && py < h {
                                for ch in 0..3 {
                                    img.set(px, py, ch, fg);
                                }
                            }
                        }
                    }
                }
            }
        }
        gaussian_blur(&img, 0.5)
    }
}

fn fronto_normal(z: f64) -> Vector3<f64> {
    Vector3::new(0.0, 0.0, 1.0 / z)
}

fn single_layer_scene(
    name: &str,
    size: usize,
    texture: ImageBuffer,
    motion: RigidMotion,
    plane_z: f64,
) -> SceneSpec {
    let f = size as f64;
    let c = size as f64 / 2.0;
    let camera = CameraModel::pinhole(f, c, c);
    let patch = PlanePatch::new(fronto_normal(plane_z), motion.log().unwrap(), 0).unwrap();
    SceneSpec {
        name: name.to_string(),
        camera,
        width: size,
        height: size,
        layers: vec![SceneLayer {
            texture,
            origin: (0, 0),
            patch,
            full_frame: true,
        }],
        spec: BlurSpec::new(1.0, 70),
        render_samples: 200,
    }
}

/// Builds a twist for a motion combining a rotation about an axis through a
/// point with an extra translation.
pub fn combined_motion(
    angle: f64,
    axis: Vector3<f64>,
    point: Vector3<f64>,
    translation: Vector3<f64>,
) -> Twist {
    RigidMotion::rotation_about_axis_through(angle, axis, point)
        .with_extra_translation(translation)
        .log()
        .expect("suite motions stay far from the branch point")
}

/// The bundled evaluation scenes: six single-layer textures under rigid 3D
/// motions (projected speeds of a few pixels up to ~10 px at the image
/// periphery) plus two layered scenes with motion discontinuities.
///
/// All scenes use duty cycle 1.0 and 200 render sub-frames; textures are
/// procedurally generated from fixed seeds.
pub fn standard_suite() -> Vec<SceneSpec> {
    let mut scenes = Vec::new();
    let deg = std::f64::consts::PI / 180.0;

    // Fronto-parallel upward translation, ~6 px.
    {
        let s = 128;
        let tex = textures::filtered_noise(s, s, 101, 1.5, 0.08, 0.92);
        let motion = RigidMotion::translation_only(Vector3::new(0.0, 6.0 / s as f64, 0.0));
        scenes.push(single_layer_scene("upward", s, tex, motion, 1.0));
    }

    // Forward translation toward the camera: radial expansion, up to ~7 px
    // in the corners.
    {
        let s = 128;
        let tex = textures::checkerboard(s, s, 8, [0.9, 0.85, 0.8], [0.15, 0.2, 0.3], 0.8);
        let motion = RigidMotion::translation_only(Vector3::new(0.0, 0.0, -0.08));
        scenes.push(single_layer_scene("forward", s, tex, motion, 1.0));
    }

    // Forward plus a yaw about a near-vertical axis through the plane
    // center; used at 256x256 for the round-trip benchmark.
    {
        let s = 256;
        let tex = textures::filtered_noise(s, s, 103, 1.5, 0.08, 0.92);
        let motion = RigidMotion::rotation_about_axis_through(
            4.5 * deg,
            Vector3::new(0.08, 1.0, 0.04),
            Vector3::new(0.0, 0.0, 1.0),
        )
        .with_extra_translation(Vector3::new(0.0, 0.0, -0.045));
        scenes.push(single_layer_scene("forward-yaw", s, tex, motion, 1.0));
    }

    // Forward plus a roll about the optical axis: circular arcs plus
    // expansion.
    {
        let s = 128;
        let tex = textures::filtered_noise(s, s, 104, 1.3, 0.08, 0.92);
        let motion = RigidMotion::rotation_about_axis_through(
            10.0 * deg,
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(0.0, 0.0, 1.0),
        )
        .with_extra_translation(Vector3::new(0.0, 0.0, -0.045));
        scenes.push(single_layer_scene("forward-roll", s, tex, motion, 1.0));
    }

    // Pure yaw about the in-plane vertical axis: out-of-plane rotation with
    // strongly position-dependent speed.
    {
        let s = 128;
        let tex = textures::glyph_text(s, s, 105, 0.05, 0.95);
        let motion = RigidMotion::rotation_about_axis_through(
            9.0 * deg,
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
        );
        scenes.push(single_layer_scene("yaw", s, tex, motion, 1.0));
    }

    // Lateral translation plus a pitch about the in-plane horizontal axis.
    {
        let s = 128;
        let tex = textures::filtered_noise(s, s, 106, 1.4, 0.08, 0.92);
        let motion = RigidMotion::rotation_about_axis_through(
            7.0 * deg,
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
        )
        .with_extra_translation(Vector3::new(5.0 / s as f64, 0.0, 0.0));
        scenes.push(single_layer_scene("lateral-pitch", s, tex, motion, 1.0));
    }

    // A bright textured square sliding over a darker background moving the
    // opposite way: a single strong motion discontinuity.
    {
        let s = 160;
        let f = s as f64;
        let camera = CameraModel::pinhole(f, f / 2.0, f / 2.0);
        let bg_tex = textures::filtered_noise(s, s, 107, 3.0, 0.03, 0.2);
        let fg_tex = textures::filtered_noise(48, 48, 42, 2.5, 0.88, 0.98);
        let bg_patch = PlanePatch::new(
            fronto_normal(2.0),
            Twist::pure_translation(Vector3::new(-5.0 * 2.0 / f, 0.0, 0.0)),
            1,
        )
        .unwrap();
        let fg_patch = PlanePatch::new(
            fronto_normal(1.0),
            Twist::pure_translation(Vector3::new(12.0 / f, 0.0, 0.0)),
            0,
        )
        .unwrap();
        scenes.push(SceneSpec {
            name: "squares".to_string(),
            camera,
            width: s,
            height: s,
            layers: vec![
                SceneLayer {
                    texture: fg_tex,
                    origin: (56, 56),
                    patch: fg_patch,
                    full_frame: false,
                },
                SceneLayer {
                    texture: bg_tex,
                    origin: (0, 0),
                    patch: bg_patch,
                    full_frame: true,
                },
            ],
            spec: BlurSpec::new(1.0, 70),
            render_samples: 200,
        });
    }

    // Three planes at different depths with independent motions.
    {
        let s = 160;
        let f = s as f64;
        let camera = CameraModel::pinhole(f, f / 2.0, f / 2.0);
        let bg_tex = textures::filtered_noise(s, s, 108, 4.0, 0.03, 0.2);
        let fg1_tex = textures::filtered_noise(44, 44, 109, 2.5, 0.88, 0.98);
        let fg2_tex = textures::filtered_noise(44, 44, 111, 2.5, 0.88, 0.98);
        let bg_patch = PlanePatch::new(
            fronto_normal(2.0),
            Twist::pure_translation(Vector3::new(-5.0 * 2.0 / f, 4.0 * 2.0 / f, -0.04)),
            2,
        )
        .unwrap();
        let fg1_patch = PlanePatch::new(
            fronto_normal(1.0),
            Twist::pure_translation(Vector3::new(12.0 / f, 0.0, 0.0)),
            0,
        )
        .unwrap();
        let fg2_patch = PlanePatch::new(
            fronto_normal(0.8),
            Twist::pure_translation(Vector3::new(0.0, -10.0 * 0.8 / f, 0.0)),
            1,
        )
        .unwrap();
        scenes.push(SceneSpec {
            name: "triplane".to_string(),
            camera,
            width: s,
            height: s,
            layers: vec![
                SceneLayer {
                    texture: fg1_tex,
                    origin: (28, 40),
                    patch: fg1_patch,
                    full_frame: false,
                },
                SceneLayer {
                    texture: fg2_tex,
                    origin: (92, 84),
                    patch: fg2_patch,
                    full_frame: false,
                },
                SceneLayer {
                    texture: bg_tex,
                    origin: (0, 0),
                    patch: bg_patch,
                    full_frame: true,
                },
            ],
            spec: BlurSpec::new(1.0, 70),
            render_samples: 200,
        });
    }

    scenes
}

/// The exact mixed-pixel set of a scene: pixels whose front-most layer
/// assignment changes across the exposure's sub-times (no dilation).
pub fn true_mixed_pixels(scene: &SceneSpec) -> Vec<bool> {
    let (w, h) = (scene.width, scene.height);
    let all_hs = scene.layer_homographies().expect("valid scene");
    let identity = vec![Matrix3::identity(); scene.layers.len()];
    let mut mixed = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let at_ref = scene.assignment(&identity, x as f64, y as f64);
            for k in 0..scene.render_samples {
                let hs: Vec<Matrix3<f64>> = all_hs.iter().map(|layer| layer[k]).collect();
                if scene.assignment(&hs, x as f64, y as f64) != at_ref {
                    mixed[y * w + x] = true;
                    break;
                }
            }
        }
    }
    mixed
}

/// Looks up a suite scene by name.
pub fn suite_scene(name: &str) -> Option<SceneSpec> {
    standard_suite().into_iter().find(|s| s.name == name)
}
