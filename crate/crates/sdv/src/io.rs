//! Dataset layout, file formats, and scene-flow ingestion.
//!
//! A dataset directory contains:
//!
//! * `blurred.png` — 8- or 16-bit RGB measured frame (written as 16-bit)
//! * `reference.png` — optional sharp ground truth, same format
//! * `segmentation.pgm` — 16-bit per-pixel segment labels
//! * `occlusion.pgm` — 8-bit binary occlusion/boundary mask (255 = masked)
//! * `flow.pfm` — optional float file with four little-endian planes per
//!   pixel (forward x, y then backward x, y), rows top to bottom, header
//!   `PF4\n<width> <height>\n-1.0\n`
//! * `scene.sdv` — versioned sidecar: first line `sdv1`, then a JSON body
//!   with the camera intrinsics, duty cycle, and one rigid motion plus
//!   scaled plane normal per segment
//!
//! Rigid motions are stored as rotation matrices and converted to twists at
//! load time.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::blur::{BlurSpec, FlowField, SegmentationMap};
use crate::error::{BlurError, IoError};
use crate::geometry::{CameraModel, PlanePatch, RigidMotion};
use crate::image::ImageBuffer;
use crate::solver::OcclusionMask;
use nalgebra::{Matrix3, Vector3};

pub const SIDECAR_VERSION: &str = "sdv1";

/// A fully-loaded dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub blurred: ImageBuffer,
    pub reference: Option<ImageBuffer>,
    pub segmentation: SegmentationMap,
    pub patches: Vec<PlanePatch>,
    pub camera: CameraModel,
    pub duty_cycle: f64,
    pub occlusion: OcclusionMask,
    pub flow: Option<FlowField>,
}

impl Dataset {
    pub fn blur_spec(&self, samples: usize) -> BlurSpec {
        BlurSpec::new(self.duty_cycle, samples)
    }
}

// ---------------------------------------------------------------------------
// PNG

/// Writes an image as 16-bit PNG (RGB for 3 channels, grayscale for 1),
/// clamping to [0, 1] first.
pub fn save_png(path: &Path, img: &ImageBuffer) -> Result<(), IoError> {
    let q = |v: f64| (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
    match img.channels() {
        3 => {
            let data: Vec<u16> = img.data().iter().map(|&v| q(v)).collect();
            let buf: image::ImageBuffer<image::Rgb<u16>, Vec<u16>> =
                image::ImageBuffer::from_vec(img.width() as u32, img.height() as u32, data)
                    .expect("dimensions match");
            image::DynamicImage::ImageRgb16(buf).save(path)?;
        }
        _ => {
            let data: Vec<u16> = img.data().iter().map(|&v| q(v)).collect();
            let buf: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
                image::ImageBuffer::from_vec(img.width() as u32, img.height() as u32, data)
                    .expect("dimensions match");
            image::DynamicImage::ImageLuma16(buf).save(path)?;
        }
    }
    Ok(())
}

/// Loads an 8- or 16-bit PNG as normalized intensities.
pub fn load_png(path: &Path) -> Result<ImageBuffer, IoError> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let buf = match img {
        image::DynamicImage::ImageRgb8(b) => ImageBuffer::from_data(
            w,
            h,
            3,
            b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        ),
        image::DynamicImage::ImageRgb16(b) => ImageBuffer::from_data(
            w,
            h,
            3,
            b.into_raw()
                .into_iter()
                .map(|v| v as f64 / 65535.0)
                .collect(),
        ),
        image::DynamicImage::ImageLuma8(b) => ImageBuffer::from_data(
            w,
            h,
            1,
            b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        ),
        image::DynamicImage::ImageLuma16(b) => ImageBuffer::from_data(
            w,
            h,
            1,
            b.into_raw()
                .into_iter()
                .map(|v| v as f64 / 65535.0)
                .collect(),
        ),
        other => {
            return Err(IoError::Parse {
                file: path.display().to_string(),
                field: "color type".into(),
                message: format!("unsupported color type {:?}", other.color()),
            })
        }
    };
    Ok(buf)
}

// ---------------------------------------------------------------------------
// PGM (binary P5; 16-bit samples are big-endian per the netpbm spec)

fn read_pgm_header(reader: &mut impl BufRead, path: &Path) -> Result<(usize, usize, u32), IoError> {
    let mut tokens = Vec::new();
    let mut line = String::new();
    while tokens.len() < 4 {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(IoError::Parse {
                file: path.display().to_string(),
                field: "header".into(),
                message: "truncated PGM header".into(),
            });
        }
        let body = line.split('#').next().unwrap_or("");
        tokens.extend(body.split_whitespace().map(str::to_string));
    }
    if tokens[0] != "P5" {
        return Err(IoError::Parse {
            file: path.display().to_string(),
            field: "magic".into(),
            message: format!("expected P5, found {}", tokens[0]),
        });
    }
    let parse = |s: &str, field: &str| -> Result<u32, IoError> {
        s.parse().map_err(|_| IoError::Parse {
            file: path.display().to_string(),
            field: field.into(),
            message: format!("not a number: {s}"),
        })
    };
    Ok((
        parse(&tokens[1], "width")? as usize,
        parse(&tokens[2], "height")? as usize,
        parse(&tokens[3], "maxval")?,
    ))
}

pub fn save_pgm16(path: &Path, width: usize, height: usize, data: &[u16]) -> Result<(), IoError> {
    assert_eq!(data.len(), width * height);
    let mut w = BufWriter::new(fs::File::create(path)?);
    write!(w, "P5\n{width} {height}\n65535\n")?;
    for v in data {
        w.write_all(&v.to_be_bytes())?;
    }
    Ok(())
}

pub fn load_pgm16(path: &Path) -> Result<(usize, usize, Vec<u16>), IoError> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let (w, h, maxval) = read_pgm_header(&mut r, path)?;
    if maxval != 65535 {
        return Err(IoError::Parse {
            file: path.display().to_string(),
            field: "maxval".into(),
            message: format!("expected 65535, found {maxval}"),
        });
    }
    let mut bytes = vec![0u8; w * h * 2];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    Ok((w, h, data))
}

pub fn save_pgm8(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<(), IoError> {
    assert_eq!(data.len(), width * height);
    let mut w = BufWriter::new(fs::File::create(path)?);
    write!(w, "P5\n{width} {height}\n255\n")?;
    w.write_all(data)?;
    Ok(())
}

pub fn load_pgm8(path: &Path) -> Result<(usize, usize, Vec<u8>), IoError> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let (w, h, maxval) = read_pgm_header(&mut r, path)?;
    if maxval != 255 {
        return Err(IoError::Parse {
            file: path.display().to_string(),
            field: "maxval".into(),
            message: format!("expected 255, found {maxval}"),
        });
    }
    let mut data = vec![0u8; w * h];
    r.read_exact(&mut data)?;
    Ok((w, h, data))
}

// ---------------------------------------------------------------------------
// Flow file (PFM-style, four float planes)

pub fn save_flow(path: &Path, flow: &FlowField) -> Result<(), IoError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write!(w, "PF4\n{} {}\n-1.0\n", flow.width(), flow.height())?;
    for i in 0..flow.width() * flow.height() {
        let f = flow.forward()[i];
        let b = flow.backward()[i];
        for v in [f[0], f[1], b[0], b[1]] {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_flow(path: &Path) -> Result<FlowField, IoError> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut header = String::new();
    for _ in 0..3 {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Err(IoError::Parse {
                file: path.display().to_string(),
                field: "header".into(),
                message: "truncated flow header".into(),
            });
        }
        header.push_str(&line);
    }
    let mut lines = header.lines();
    let magic = lines.next().unwrap_or("");
    if magic != "PF4" {
        return Err(IoError::Parse {
            file: path.display().to_string(),
            field: "magic".into(),
            message: format!("expected PF4, found {magic}"),
        });
    }
    let dims: Vec<usize> = lines
        .next()
        .unwrap_or("")
        .split_whitespace()
        .filter_map(|t| t.parse().ok())
        .collect();
    if dims.len() != 2 {
        return Err(IoError::Parse {
            file: path.display().to_string(),
            field: "dimensions".into(),
            message: "expected `width height`".into(),
        });
    }
    let (w, h) = (dims[0], dims[1]);
    let scale: f64 = lines.next().unwrap_or("").trim().parse().unwrap_or(0.0);
    if scale >= 0.0 {
        return Err(IoError::Parse {
            file: path.display().to_string(),
            field: "scale".into(),
            message: "only little-endian (negative scale) flow files are supported".into(),
        });
    }
    let mut bytes = vec![0u8; w * h * 4 * 4];
    r.read_exact(&mut bytes)?;
    let mut forward = Vec::with_capacity(w * h);
    let mut backward = Vec::with_capacity(w * h);
    for px in bytes.chunks_exact(16) {
        let v = |o: usize| f32::from_le_bytes([px[o], px[o + 1], px[o + 2], px[o + 3]]) as f64;
        forward.push([v(0), v(4)]);
        backward.push([v(8), v(12)]);
    }
    let flow = FlowField::new(w, h, forward, backward);
    if flow
        .forward()
        .iter()
        .chain(flow.backward())
        .any(|v| !v[0].is_finite() || !v[1].is_finite())
    {
        return Err(IoError::InvariantViolation {
            file: path.display().to_string(),
            check: "flow entries must be finite".into(),
        });
    }
    Ok(flow)
}

// ---------------------------------------------------------------------------
// Sidecar

#[derive(Debug, Serialize, Deserialize)]
struct SidecarCamera {
    k: [f64; 9],
    #[serde(default)]
    center: [f64; 3],
    duty_cycle: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SidecarSegment {
    id: u16,
    normal: [f64; 3],
    rotation: [f64; 9],
    translation: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    camera: SidecarCamera,
    segments: Vec<SidecarSegment>,
}

fn write_sidecar(
    path: &Path,
    camera: &CameraModel,
    duty_cycle: f64,
    patches: &[PlanePatch],
) -> Result<(), IoError> {
    let k = camera.intrinsics();
    let mut k_row = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            k_row[r * 3 + c] = k[(r, c)];
        }
    }
    let segments = patches
        .iter()
        .map(|p| {
            let m = p.motion.exp(1.0);
            let mut rotation = [0.0; 9];
            for r in 0..3 {
                for c in 0..3 {
                    rotation[r * 3 + c] = m.rotation()[(r, c)];
                }
            }
            SidecarSegment {
                id: p.segment_id,
                normal: [p.normal.x, p.normal.y, p.normal.z],
                rotation,
                translation: [m.translation().x, m.translation().y, m.translation().z],
            }
        })
        .collect();
    let sidecar = Sidecar {
        camera: SidecarCamera {
            k: k_row,
            center: [camera.center().x, camera.center().y, camera.center().z],
            duty_cycle,
        },
        segments,
    };
    let body = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    fs::write(path, format!("{SIDECAR_VERSION}\n{body}\n"))?;
    Ok(())
}

fn read_sidecar(path: &Path) -> Result<(CameraModel, f64, Vec<PlanePatch>), IoError> {
    let text = fs::read_to_string(path)?;
    let file = path.display().to_string();
    let Some((header, body)) = text.split_once('\n') else {
        return Err(IoError::Parse {
            file,
            field: "header".into(),
            message: "missing version line".into(),
        });
    };
    if header.trim() != SIDECAR_VERSION {
        return Err(IoError::Parse {
            file,
            field: "header".into(),
            message: format!("expected {SIDECAR_VERSION}, found {header}"),
        });
    }
    let sidecar: Sidecar = serde_json::from_str(body).map_err(|e| IoError::Parse {
        file: file.clone(),
        field: "json body".into(),
        message: e.to_string(),
    })?;

    let kk = &sidecar.camera.k;
    let k = Matrix3::new(
        kk[0], kk[1], kk[2], kk[3], kk[4], kk[5], kk[6], kk[7], kk[8],
    );
    let center = Vector3::new(
        sidecar.camera.center[0],
        sidecar.camera.center[1],
        sidecar.camera.center[2],
    );
    let camera = CameraModel::new(k, center).map_err(|_| IoError::InvariantViolation {
        file: file.clone(),
        check: "camera.k must be upper triangular with unit last row and nonzero focal lengths"
            .into(),
    })?;
    let duty = sidecar.camera.duty_cycle;
    if !(duty > 0.0 && duty <= 1.0) {
        return Err(IoError::InvariantViolation {
            file,
            check: format!("duty_cycle must be in (0, 1], found {duty}"),
        });
    }

    let mut patches = Vec::with_capacity(sidecar.segments.len());
    for seg in &sidecar.segments {
        let r = &seg.rotation;
        let rotation = Matrix3::new(r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8]);
        let translation = Vector3::new(seg.translation[0], seg.translation[1], seg.translation[2]);
        let motion =
            RigidMotion::new(rotation, translation).map_err(|e| IoError::InvariantViolation {
                file: file.clone(),
                check: format!("segment {} rotation: {e}", seg.id),
            })?;
        let twist = motion.log()?;
        let normal = Vector3::new(seg.normal[0], seg.normal[1], seg.normal[2]);
        let patch =
            PlanePatch::new(normal, twist, seg.id).map_err(|_| IoError::InvariantViolation {
                file: file.clone(),
                check: format!("segment {} normal must be finite and nonzero", seg.id),
            })?;
        patches.push(patch);
    }
    Ok((camera, duty, patches))
}

// ---------------------------------------------------------------------------
// Dataset

fn file(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

/// Writes the full dataset layout into `dir` (created if missing).
pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<(), IoError> {
    fs::create_dir_all(dir)?;
    save_png(&file(dir, "blurred.png"), &ds.blurred)?;
    if let Some(reference) = &ds.reference {
        save_png(&file(dir, "reference.png"), reference)?;
    }
    save_pgm16(
        &file(dir, "segmentation.pgm"),
        ds.segmentation.width(),
        ds.segmentation.height(),
        ds.segmentation.labels(),
    )?;
    let occ: Vec<u8> = ds
        .occlusion
        .mask()
        .iter()
        .map(|&m| if m { 255 } else { 0 })
        .collect();
    save_pgm8(
        &file(dir, "occlusion.pgm"),
        ds.occlusion.width(),
        ds.occlusion.height(),
        &occ,
    )?;
    if let Some(flow) = &ds.flow {
        save_flow(&file(dir, "flow.pfm"), flow)?;
    }
    write_sidecar(
        &file(dir, "scene.sdv"),
        &ds.camera,
        ds.duty_cycle,
        &ds.patches,
    )?;
    Ok(())
}

/// Loads and validates a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<Dataset, IoError> {
    let blurred = load_png(&file(dir, "blurred.png"))?;
    let reference = {
        let p = file(dir, "reference.png");
        if p.exists() {
            Some(load_png(&p)?)
        } else {
            None
        }
    };

    let (sw, sh, labels) = load_pgm16(&file(dir, "segmentation.pgm"))?;
    let segmentation = SegmentationMap::new(sw, sh, labels);

    let (ow, oh, occ) = load_pgm8(&file(dir, "occlusion.pgm"))?;
    let occlusion = OcclusionMask::new(ow, oh, occ.iter().map(|&v| v > 127).collect());

    let flow = {
        let p = file(dir, "flow.pfm");
        if p.exists() {
            Some(load_flow(&p)?)
        } else {
            None
        }
    };

    let (camera, duty_cycle, patches) = read_sidecar(&file(dir, "scene.sdv"))?;

    // Cross-file invariants.
    let dims = (blurred.width(), blurred.height());
    let check_dims = |name: &str, w: usize, h: usize| -> Result<(), IoError> {
        if (w, h) != dims {
            return Err(IoError::InvariantViolation {
                file: file(dir, name).display().to_string(),
                check: format!(
                    "dimensions {w}x{h} do not match blurred.png {}x{}",
                    dims.0, dims.1
                ),
            });
        }
        Ok(())
    };
    check_dims(
        "segmentation.pgm",
        segmentation.width(),
        segmentation.height(),
    )?;
    check_dims("occlusion.pgm", occlusion.width(), occlusion.height())?;
    if let Some(f) = &flow {
        check_dims("flow.pfm", f.width(), f.height())?;
    }
    if let Some(r) = &reference {
        check_dims("reference.png", r.width(), r.height())?;
    }

    for &label in segmentation.labels() {
        if !patches.iter().any(|p| p.segment_id == label) {
            return Err(IoError::Blur(BlurError::MissingSegment { label }));
        }
    }

    Ok(Dataset {
        blurred,
        reference,
        segmentation,
        patches,
        camera,
        duty_cycle,
        occlusion,
        flow,
    })
}
