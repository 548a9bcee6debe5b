//! Generates one of the bundled ground-truth scenes and writes the full
//! dataset layout (blurred/reference PNGs, segmentation, occlusion mask,
//! exact flow, motion sidecar) to a directory.

use sdv::io::{save_dataset, Dataset};
use sdv::synth::{ground_truth_sidecar, render_blurred, standard_suite, suite_scene};

fn main() {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "squares".into());
    let out = args
        .next()
        .unwrap_or_else(|| format!("target/dataset-{name}"));

    let Some(scene) = suite_scene(&name) else {
        eprintln!("unknown scene `{name}`; available:");
        for s in standard_suite() {
            eprintln!("  {}", s.name);
        }
        std::process::exit(1);
    };

    let (blurred, reference) = render_blurred(&scene).unwrap();
    let (segmentation, patches, occlusion, flow) = ground_truth_sidecar(&scene).unwrap();
    println!(
        "{name}: {}x{} px, {} segments, {} occluded px",
        scene.width,
        scene.height,
        patches.len(),
        occlusion.count()
    );

    let dataset = Dataset {
        blurred,
        reference: Some(reference),
        segmentation,
        patches,
        camera: scene.camera,
        duty_cycle: scene.spec.duty_cycle,
        occlusion,
        flow: Some(flow),
    };
    save_dataset(std::path::Path::new(&out), &dataset).unwrap();
    println!("wrote dataset to {out}");
}
