//! Renders one blur row of a rotating plane as a kernel image, for the
//! homography-induced operator (a circular arc) and for the 2D-displacement
//! baseline (a straight chord).

use nalgebra::Vector3;
use sdv::blur::{
    assemble_flow_operator, assemble_operator, project_scene_flow, BlurSpec, SegmentationMap,
};
use sdv::geometry::{CameraModel, PlanePatch, RigidMotion};
use sdv::io::save_png;
use std::path::Path;

fn main() {
    let out_dir = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "target/kernel-shapes".into());
    std::fs::create_dir_all(&out_dir).expect("create output directory");

    // Fronto-parallel plane one unit away, spinning 20 degrees per frame
    // about its center point on the optical axis.
    let size = 256usize;
    let camera = CameraModel::pinhole(size as f64, 128.0, 128.0);
    let motion = RigidMotion::rotation_about_axis_through(
        20.0_f64.to_radians(),
        Vector3::new(0.0, 0.0, 1.0),
        Vector3::new(0.0, 0.0, 1.0),
    );
    let patch = PlanePatch::new(Vector3::new(0.0, 0.0, 1.0), motion.log().unwrap(), 0).unwrap();
    let seg = SegmentationMap::uniform(size, size, 0);
    let spec = BlurSpec::new(1.0, 70);

    let homog_op = assemble_operator(&camera, &[patch], &seg, &spec).unwrap();
    let flow = project_scene_flow(&camera, &[patch], &seg).unwrap();
    let flow_op = assemble_flow_operator(&flow, &spec);

    // A pixel 80 px right of the rotation axis: its trajectory is an arc of
    // radius 80 px. The flow kernel replaces it with a chord.
    let (x, y) = (208usize, 128usize);
    for (op, name) in [
        (&homog_op, "kernel_arc.png"),
        (&flow_op, "kernel_chord.png"),
    ] {
        let (img, x0, y0) = op.row_as_image(x, y, 2);
        let path = Path::new(&out_dir).join(name);
        save_png(&path, &img).unwrap();
        println!(
            "{}: support {}x{} at ({x0},{y0}), {} taps",
            path.display(),
            img.width(),
            img.height(),
            op.row(y * size + x).len()
        );
    }
    println!("compare the two images: the arc bends around the axis, the chord cuts across");
}
