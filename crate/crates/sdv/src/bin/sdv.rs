//! Command-line surface: scene synthesis, forward blur, deblurring,
//! quality metrics, and kernel visualization.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;

use sdv::blur::{assemble_flow_operator, assemble_operator, project_scene_flow, BlurOperator};
use sdv::geometry::RigidMotion;
use sdv::io::{load_dataset, load_png, save_dataset, save_pgm8, save_png, Dataset};
use sdv::metrics::{psnr, ssim};
use sdv::solver::{deblur_with_trace, SolverConfig};
use sdv::synth::{
    ground_truth_sidecar, render_blurred, standard_suite, suite_scene, textures, SceneLayer,
    SceneSpec,
};
use sdv::{CameraModel, ImageBuffer, PlanePatch};

#[derive(Parser)]
#[command(name = "sdv", version, about = "Scene-flow driven video deblurring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic ground-truth dataset.
    Synth(SynthArgs),
    /// Apply the homography blur operator to a sharp image.
    Blur(BlurArgs),
    /// Run the full deblurring pipeline on a dataset.
    Deblur(DeblurArgs),
    /// Print quality metrics for a pair of images.
    Eval(EvalArgs),
    /// Write one blur row as a kernel image.
    KernelDump(KernelDumpArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Named scene from the bundled suite.
    #[arg(long, conflicts_with_all = ["size", "texture", "translate", "rotate_deg"])]
    scene: Option<String>,
    /// List available scene names and exit.
    #[arg(long)]
    list: bool,
    /// Output dataset directory.
    #[arg(long, required_unless_present = "list")]
    out: Option<PathBuf>,

    // Parameterized single-layer scene (used when --scene is absent).
    /// Image side length in pixels.
    #[arg(long, default_value_t = 128)]
    size: usize,
    /// Texture kind for the parameterized scene.
    #[arg(long, value_enum, default_value_t = TextureKind::Noise)]
    texture: TextureKind,
    /// Texture seed.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Plane translation per frame interval, `tx,ty,tz` in scene units.
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,0")]
    translate: Vector3<f64>,
    /// Rotation axis direction, `x,y,z`.
    #[arg(long, value_parser = parse_vec3, default_value = "0,1,0")]
    rotate_axis: Vector3<f64>,
    /// Rotation angle per frame interval, degrees.
    #[arg(long, default_value_t = 0.0)]
    rotate_deg: f64,
    /// Point the rotation axis passes through, `x,y,z`.
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,1")]
    rotate_center: Vector3<f64>,
    /// Exposure duty cycle in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    duty: f64,
}

#[derive(Copy, Clone, ValueEnum)]
enum TextureKind {
    Noise,
    Checker,
    Text,
}

#[derive(Args)]
struct BlurArgs {
    /// Dataset directory providing geometry and camera.
    #[arg(long)]
    data: PathBuf,
    /// Sharp input image; defaults to the dataset's reference.png.
    #[arg(long)]
    sharp: Option<PathBuf>,
    /// Output image path.
    #[arg(long)]
    out: PathBuf,
    /// Time samples per blur row.
    #[arg(long, default_value_t = 70)]
    samples: usize,
}

#[derive(Copy, Clone, PartialEq, ValueEnum)]
enum KernelSource {
    /// Exact homography-induced trajectories from the 3D scene flow.
    Homography,
    /// 2D projection of the scene flow (piecewise-linear trajectories).
    Flow,
    /// Ground-truth 2D displacement from the dataset's flow.pfm.
    GtFlow,
}

#[derive(Args)]
struct DeblurArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for deblurred.png and weights.png.
    #[arg(long)]
    out: PathBuf,
    /// Blur operator source.
    #[arg(long, value_enum, default_value_t = KernelSource::Homography)]
    kernel: KernelSource,
    /// Pin all data weights to 1 (the boundary-weighting ablation).
    #[arg(long)]
    no_boundary_weights: bool,
    /// Time samples per blur row.
    #[arg(long, default_value_t = 70)]
    samples: usize,
    /// Smoothness prior weight.
    #[arg(long, default_value_t = 0.001)]
    alpha: f64,
    /// Outer reweighting iterations.
    #[arg(long, default_value_t = 10)]
    outer: usize,
    /// Conjugate-gradient steps per outer iteration.
    #[arg(long, default_value_t = 25)]
    cg: usize,
    /// Write the energy/weight trace to this file.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Reference image.
    reference: PathBuf,
    /// Image under test.
    test: PathBuf,
}

#[derive(Args)]
struct KernelDumpArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Pixel whose blur row to dump, `x,y`.
    #[arg(long, value_parser = parse_pixel)]
    pixel: (usize, usize),
    /// Blur operator source.
    #[arg(long, value_enum, default_value_t = KernelSource::Homography)]
    kernel: KernelSource,
    /// Output image path (.png or .pgm).
    #[arg(long)]
    out: PathBuf,
    /// Time samples per blur row.
    #[arg(long, default_value_t = 70)]
    samples: usize,
}

fn parse_vec3(s: &str) -> Result<Vector3<f64>, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err("expected three comma-separated numbers".into());
    }
    let mut v = [0.0; 3];
    for (i, p) in parts.iter().enumerate() {
        v[i] = p.trim().parse().map_err(|_| format!("bad number {p}"))?;
    }
    Ok(Vector3::new(v[0], v[1], v[2]))
}

fn parse_pixel(s: &str) -> Result<(usize, usize), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err("expected `x,y`".into());
    }
    let x = parts[0].trim().parse().map_err(|_| "bad x".to_string())?;
    let y = parts[1].trim().parse().map_err(|_| "bad y".to_string())?;
    Ok((x, y))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Synth(args) => synth(args),
        Command::Blur(args) => blur(args),
        Command::Deblur(args) => run_deblur(args),
        Command::Eval(args) => eval(args),
        Command::KernelDump(args) => kernel_dump(args),
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn scene_to_dataset(scene: &SceneSpec) -> Result<Dataset, String> {
    let (blurred, reference) = render_blurred(scene).map_err(err)?;
    let (segmentation, patches, occlusion, flow) = ground_truth_sidecar(scene).map_err(err)?;
    Ok(Dataset {
        blurred,
        reference: Some(reference),
        segmentation,
        patches,
        camera: scene.camera,
        duty_cycle: scene.spec.duty_cycle,
        occlusion,
        flow: Some(flow),
    })
}

fn synth(args: SynthArgs) -> Result<(), String> {
    if args.list {
        for scene in standard_suite() {
            println!("{}", scene.name);
        }
        return Ok(());
    }
    let out = args.out.expect("clap enforces --out");

    let scene = if let Some(name) = &args.scene {
        suite_scene(name).ok_or_else(|| {
            format!("unknown scene `{name}`; run `sdv synth --list` for available names")
        })?
    } else {
        let s = args.size;
        let texture = match args.texture {
            TextureKind::Noise => textures::filtered_noise(s, s, args.seed, 1.5, 0.08, 0.92),
            TextureKind::Checker => {
                textures::checkerboard(s, s, 8, [0.9, 0.85, 0.8], [0.15, 0.2, 0.3], 0.8)
            }
            TextureKind::Text => textures::glyph_text(s, s, args.seed, 0.05, 0.95),
        };
        let motion = if args.rotate_deg != 0.0 {
            RigidMotion::rotation_about_axis_through(
                args.rotate_deg.to_radians(),
                args.rotate_axis,
                args.rotate_center,
            )
            .with_extra_translation(args.translate)
        } else {
            RigidMotion::translation_only(args.translate)
        };
        let f = s as f64;
        let camera = CameraModel::pinhole(f, f / 2.0, f / 2.0);
        let patch = PlanePatch::new(Vector3::new(0.0, 0.0, 1.0), motion.log().map_err(err)?, 0)
            .map_err(err)?;
        SceneSpec {
            name: "custom".to_string(),
            camera,
            width: s,
            height: s,
            layers: vec![SceneLayer {
                texture,
                origin: (0, 0),
                patch,
                full_frame: true,
            }],
            spec: sdv::BlurSpec::new(args.duty, 70),
            render_samples: 200,
        }
    };

    let dataset = scene_to_dataset(&scene)?;
    save_dataset(&out, &dataset).map_err(err)?;
    println!("wrote dataset `{}` to {}", scene.name, out.display());
    Ok(())
}

fn build_operator(
    ds: &Dataset,
    kernel: KernelSource,
    samples: usize,
) -> Result<BlurOperator, String> {
    let spec = ds.blur_spec(samples);
    match kernel {
        KernelSource::Homography => {
            assemble_operator(&ds.camera, &ds.patches, &ds.segmentation, &spec).map_err(err)
        }
        KernelSource::Flow => {
            let flow =
                project_scene_flow(&ds.camera, &ds.patches, &ds.segmentation).map_err(err)?;
            Ok(assemble_flow_operator(&flow, &spec))
        }
        KernelSource::GtFlow => {
            let flow = ds
                .flow
                .as_ref()
                .ok_or("dataset has no flow.pfm (required for --kernel gt-flow)")?;
            Ok(assemble_flow_operator(flow, &spec))
        }
    }
}

fn blur(args: BlurArgs) -> Result<(), String> {
    let ds = load_dataset(&args.data).map_err(err)?;
    let sharp = match &args.sharp {
        Some(path) => load_png(path).map_err(err)?,
        None => ds
            .reference
            .clone()
            .ok_or("dataset has no reference.png; pass --sharp")?,
    };
    let op = build_operator(&ds, KernelSource::Homography, args.samples)?;
    let blurred = op.apply(&sharp).map_err(err)?;
    save_png(&args.out, &blurred.clamped()).map_err(err)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn run_deblur(args: DeblurArgs) -> Result<(), String> {
    let ds = load_dataset(&args.data).map_err(err)?;
    let op = build_operator(&ds, args.kernel, args.samples)?;
    let cfg = SolverConfig {
        alpha: args.alpha,
        outer_iterations: args.outer,
        cg_iterations: args.cg,
        n_samples: args.samples,
        boundary_weighting: !args.no_boundary_weights,
        ..SolverConfig::default()
    };
    let (deblurred, weights, trace) =
        deblur_with_trace(&ds.blurred, &op, &ds.occlusion, &cfg).map_err(err)?;

    std::fs::create_dir_all(&args.out).map_err(err)?;
    save_png(&args.out.join("deblurred.png"), &deblurred).map_err(err)?;
    save_png(&args.out.join("weights.png"), &weights.to_image()).map_err(err)?;
    if let Some(trace_path) = &args.trace {
        let file = std::fs::File::create(trace_path).map_err(err)?;
        trace
            .write_lines(std::io::BufWriter::new(file))
            .map_err(err)?;
    }
    if let Some(reference) = &ds.reference {
        let p = psnr(reference, &deblurred).map_err(err)?;
        let s = ssim(reference, &deblurred).map_err(err)?;
        println!("psnr={p:.4} ssim={s:.6}");
    }
    println!("wrote {}", args.out.join("deblurred.png").display());
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), String> {
    let reference = load_png(&args.reference).map_err(err)?;
    let test = load_png(&args.test).map_err(err)?;
    let p = psnr(&reference, &test).map_err(err)?;
    let s = ssim(&reference, &test).map_err(err)?;
    println!("psnr={p:.4} ssim={s:.6}");
    Ok(())
}

fn save_kernel_image(path: &Path, img: &ImageBuffer) -> Result<(), String> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => {
            let data: Vec<u8> = img
                .data()
                .iter()
                .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect();
            save_pgm8(path, img.width(), img.height(), &data).map_err(err)
        }
        _ => save_png(path, img).map_err(err),
    }
}

fn kernel_dump(args: KernelDumpArgs) -> Result<(), String> {
    let ds = load_dataset(&args.data).map_err(err)?;
    let (x, y) = args.pixel;
    if x >= ds.blurred.width() || y >= ds.blurred.height() {
        return Err(format!(
            "pixel {x},{y} outside {}x{} image",
            ds.blurred.width(),
            ds.blurred.height()
        ));
    }
    let op = build_operator(&ds, args.kernel, args.samples)?;
    let (img, x0, y0) = op.row_as_image(x, y, 2);
    save_kernel_image(&args.out, &img)?;
    println!(
        "x0={x0} y0={y0} width={} height={}",
        img.width(),
        img.height()
    );
    Ok(())
}
