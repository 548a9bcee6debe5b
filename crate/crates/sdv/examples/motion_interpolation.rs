//! SE(3) logarithm/exponential round trip and constant-motion time
//! interpolation: the geometry every blur kernel is built on.

use nalgebra::Vector3;
use sdv::geometry::RigidMotion;

fn main() {
    // A motion over one frame interval: 12 degrees about a tilted axis
    // through a point in front of the camera, plus a small translation.
    let motion = RigidMotion::rotation_about_axis_through(
        12.0_f64.to_radians(),
        Vector3::new(0.2, 1.0, 0.1),
        Vector3::new(0.0, 0.0, 1.5),
    )
    .with_extra_translation(Vector3::new(0.05, -0.02, 0.1));

    let twist = motion
        .log()
        .expect("rotation angle is far from a half turn");
    println!("theta = {:.6} rad", twist.theta());
    println!("axis  = {:.4?}", twist.axis());

    let back = twist.exp(1.0);
    println!(
        "exp(log(M)) reproduces M to {:.2e}\n",
        motion.max_abs_diff(&back)
    );

    // Exponentiating fractions of the twist interpolates the motion in
    // time; negative fractions move backward.
    println!("fraction   rotation angle   translation norm");
    for k in 0..=8 {
        let s = -1.0 + 0.25 * k as f64;
        let m = twist.exp(s);
        let angle = ((m.rotation().trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
        println!(
            "{s:+.2}       {angle:.6} rad     {:.6}",
            m.translation().norm()
        );
    }

    // The one-parameter subgroup property: M(a) M(b) = M(a + b).
    let composed = twist.exp(0.3).compose(&twist.exp(0.45));
    let direct = twist.exp(0.75);
    println!(
        "\nsubgroup defect |M(0.3) M(0.45) - M(0.75)| = {:.2e}",
        composed.max_abs_diff(&direct)
    );
}
