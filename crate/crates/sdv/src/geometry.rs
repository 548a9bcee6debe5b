//! Rigid-body motion, SE(3) logarithm/exponential, constant-motion time
//! interpolation, and plane-induced homographies.
//!
//! A motion over one frame interval is stored as a twist `theta * xi` so that
//! any fraction of the interval is realized by exponentiating the scaled
//! twist. Blur homographies map a pixel observed at an intermediate time back
//! to its position in the reference frame, assuming the pixel lies on a
//! moving planar patch.

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::GeometryError;

/// Angle below which series expansions replace the trigonometric closed forms.
const SMALL_ANGLE: f64 = 1e-4;
/// Rotations smaller than this are treated as pure translations.
const TRANSLATION_ANGLE: f64 = 1e-9;
/// Margin kept from the logarithm branch point at pi.
const BRANCH_MARGIN: f64 = 1e-6;

/// A rigid 3D motion: rotation followed by translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidMotion {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidMotion {
    /// Validates orthonormality (`|R^T R - I|_F < 1e-9`, `det R = 1 ± 1e-9`).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let defect = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        let det_defect = (rotation.determinant() - 1.0).abs();
        if defect >= 1e-9 || det_defect >= 1e-9 {
            return Err(GeometryError::NotARotation {
                defect: defect.max(det_defect),
            });
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Rotation by `angle` about the axis `axis_dir` passing through `point`,
    /// i.e. `point` is a fixed point of the motion.
    pub fn rotation_about_axis_through(
        angle: f64,
        axis_dir: Vector3<f64>,
        point: Vector3<f64>,
    ) -> Self {
        let axis = axis_dir.normalize();
        let r = rodrigues(angle, &skew(&axis));
        let t = point - r * point;
        Self {
            rotation: r,
            translation: t,
        }
    }

    pub fn translation_only(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Appends an extra translation to this motion.
    pub fn with_extra_translation(mut self, extra: Vector3<f64>) -> Self {
        self.translation += extra;
        self
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn compose(&self, rhs: &Self) -> Self {
        Self {
            rotation: self.rotation * rhs.rotation,
            translation: self.rotation * rhs.translation + self.translation,
        }
    }

    /// Principal-branch logarithm; see [`se3_log`].
    pub fn log(&self) -> Result<Twist, GeometryError> {
        se3_log(self)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let dr = (self.rotation - other.rotation).abs().max();
        let dt = (self.translation - other.translation).abs().max();
        dr.max(dt)
    }
}

/// The logarithm of a rigid motion: an angle `theta` and a 4x4 algebra
/// element `xi` whose upper-left block is the skew matrix of the unit
/// rotation axis. For pure translations `theta` is zero and the translation
/// column of `xi` carries the full translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    theta: f64,
    xi: Matrix4<f64>,
}

impl Twist {
    pub fn identity() -> Self {
        Self {
            theta: 0.0,
            xi: Matrix4::zeros(),
        }
    }

    /// Twist of a motion that only translates; interpolates linearly.
    pub fn pure_translation(t: Vector3<f64>) -> Self {
        Self::assemble(0.0, Vector3::zeros(), t)
    }

    /// Builds a twist from an angle, a rotation axis (normalized internally)
    /// and the translation parameter `v` (so that the motion translation is
    /// `(theta*I + (1-cos theta)*w + (theta - sin theta)*w^2) v`).
    pub fn from_parts(theta: f64, axis: Vector3<f64>, v: Vector3<f64>) -> Self {
        if theta == 0.0 {
            return Self::assemble(0.0, Vector3::zeros(), v);
        }
        Self::assemble(theta, axis.normalize(), v)
    }

    fn assemble(theta: f64, axis: Vector3<f64>, v: Vector3<f64>) -> Self {
        let mut xi = Matrix4::zeros();
        xi.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&axis));
        xi.fixed_view_mut::<3, 1>(0, 3).copy_from(&v);
        Self { theta, xi }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn xi(&self) -> &Matrix4<f64> {
        &self.xi
    }

    /// Unit rotation axis (zero for pure translations).
    pub fn axis(&self) -> Vector3<f64> {
        Vector3::new(self.xi[(2, 1)], self.xi[(0, 2)], self.xi[(1, 0)])
    }

    /// Translation column of `xi`.
    pub fn linear(&self) -> Vector3<f64> {
        self.xi.fixed_view::<3, 1>(0, 3).into()
    }

    pub fn is_identity(&self) -> bool {
        self.theta == 0.0 && self.linear() == Vector3::zeros()
    }

    /// Exponential of the scaled twist; see [`se3_exp`].
    pub fn exp(&self, fraction: f64) -> RigidMotion {
        se3_exp(self, fraction)
    }
}

fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

fn rodrigues(angle: f64, w_hat: &Matrix3<f64>) -> Matrix3<f64> {
    // 1 - cos computed via the half-angle identity to avoid cancellation.
    let one_minus_cos = 2.0 * (0.5 * angle).sin().powi(2);
    Matrix3::identity() + angle.sin() * w_hat + one_minus_cos * (w_hat * w_hat)
}

/// `(theta - sin theta)` with a series branch for small angles.
fn theta_minus_sin(theta: f64) -> f64 {
    if theta.abs() < SMALL_ANGLE {
        let t2 = theta * theta;
        theta * t2 * (1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0)
    } else {
        theta - theta.sin()
    }
}

/// `1 - (theta/2) * cot(theta/2)` with a series branch for small angles.
fn one_minus_half_theta_cot(theta: f64) -> f64 {
    if theta.abs() < SMALL_ANGLE {
        let t2 = theta * theta;
        t2 / 12.0 + t2 * t2 / 720.0
    } else {
        let half = 0.5 * theta;
        1.0 - half * half.cos() / half.sin()
    }
}

/// Principal-branch SE(3) logarithm.
///
/// Pure translations (rotation angle below 1e-9) use the convention
/// `theta = 0` with the full translation stored in the twist, so that
/// `se3_exp(tw, s)` translates by `s` times it.
pub fn se3_log(motion: &RigidMotion) -> Result<Twist, GeometryError> {
    let r = motion.rotation;
    let defect = (r.transpose() * r - Matrix3::identity()).norm();
    let det_defect = (r.determinant() - 1.0).abs();
    if defect >= 1e-9 || det_defect >= 1e-9 {
        return Err(GeometryError::NotARotation {
            defect: defect.max(det_defect),
        });
    }

    // a = vee(R - R^T)/2 has norm sin(theta) for theta in [0, pi].
    let a = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    ) * 0.5;
    let cos_theta = 0.5 * (r.trace() - 1.0);
    let theta = a.norm().atan2(cos_theta);

    if theta >= std::f64::consts::PI - BRANCH_MARGIN {
        return Err(GeometryError::AngleTooLarge { angle: theta });
    }
    if theta < TRANSLATION_ANGLE {
        return Ok(Twist::assemble(0.0, Vector3::zeros(), motion.translation));
    }

    let axis = if cos_theta > -0.9 {
        a / a.norm()
    } else {
        // Near pi the antisymmetric part loses accuracy; recover the axis
        // from the symmetric part and fix its sign with `a`.
        let m = (r + r.transpose()) * 0.5 - Matrix3::identity() * cos_theta;
        let m = m / (1.0 - cos_theta);
        let diag = Vector3::new(m[(0, 0)], m[(1, 1)], m[(2, 2)]);
        let j = diag.imax();
        let col: Vector3<f64> = m.column(j).into();
        let axis = col / col.norm();
        if axis.dot(&a) < 0.0 {
            -axis
        } else {
            axis
        }
    };

    let w_hat = skew(&axis);
    let coef = one_minus_half_theta_cot(theta);
    let v_inv = Matrix3::identity() - (0.5 * theta) * w_hat + coef * (w_hat * w_hat);
    let v = (v_inv * motion.translation) / theta;
    Ok(Twist::assemble(theta, axis, v))
}

/// Exponential of `fraction` times the twist, realizing the motion over a
/// fraction of the frame interval. Negative fractions move backward in time.
pub fn se3_exp(twist: &Twist, fraction: f64) -> RigidMotion {
    let v = twist.linear();
    if twist.theta == 0.0 {
        return RigidMotion::from_parts_unchecked(Matrix3::identity(), fraction * v);
    }
    let theta = twist.theta * fraction;
    let w_hat = skew(&twist.axis());
    let rotation = rodrigues(theta, &w_hat);
    let one_minus_cos = 2.0 * (0.5 * theta).sin().powi(2);
    let translation = (theta * Matrix3::identity()
        + one_minus_cos * w_hat
        + theta_minus_sin(theta) * (w_hat * w_hat))
        * v;
    RigidMotion::from_parts_unchecked(rotation, translation)
}

/// Pinhole camera: upper-triangular intrinsics and a 3D center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    intrinsics: Matrix3<f64>,
    center: Vector3<f64>,
}

impl CameraModel {
    pub fn new(intrinsics: Matrix3<f64>, center: Vector3<f64>) -> Result<Self, GeometryError> {
        let k = &intrinsics;
        if k[(2, 0)] != 0.0
            || k[(2, 1)] != 0.0
            || k[(2, 2)] != 1.0
            || k[(1, 0)] != 0.0
            || k[(0, 0)] == 0.0
            || k[(1, 1)] == 0.0
        {
            return Err(GeometryError::NotARotation { defect: f64::NAN });
        }
        Ok(Self { intrinsics, center })
    }

    /// Standard pinhole with focal length `f` and principal point `(cx, cy)`,
    /// centered at the origin.
    pub fn pinhole(f: f64, cx: f64, cy: f64) -> Self {
        Self {
            intrinsics: Matrix3::new(f, 0.0, cx, 0.0, f, cy, 0.0, 0.0, 1.0),
            center: Vector3::zeros(),
        }
    }

    pub fn with_center(mut self, center: Vector3<f64>) -> Self {
        self.center = center;
        self
    }

    pub fn intrinsics(&self) -> &Matrix3<f64> {
        &self.intrinsics
    }

    pub fn center(&self) -> &Vector3<f64> {
        &self.center
    }

    /// Analytic inverse of the upper-triangular intrinsics.
    pub fn intrinsics_inv(&self) -> Matrix3<f64> {
        let k = &self.intrinsics;
        let (fx, s, cx) = (k[(0, 0)], k[(0, 1)], k[(0, 2)]);
        let (fy, cy) = (k[(1, 1)], k[(1, 2)]);
        Matrix3::new(
            1.0 / fx,
            -s / (fx * fy),
            (s * cy - cx * fy) / (fx * fy),
            0.0,
            1.0 / fy,
            -cy / fy,
            0.0,
            0.0,
            1.0,
        )
    }
}

/// A planar segment: scaled normal (points P on the plane satisfy
/// `P . n = 1`), its constant motion over the frame interval, and the
/// segmentation label it belongs to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanePatch {
    pub normal: Vector3<f64>,
    pub motion: Twist,
    pub segment_id: u16,
}

impl PlanePatch {
    pub fn new(
        normal: Vector3<f64>,
        motion: Twist,
        segment_id: u16,
    ) -> Result<Self, GeometryError> {
        if !normal.iter().all(|v| v.is_finite()) || normal == Vector3::zeros() {
            return Err(GeometryError::SingularProjection {
                cond: f64::INFINITY,
            });
        }
        Ok(Self {
            normal,
            motion,
            segment_id,
        })
    }
}

/// Plane-induced projection `Pr = K - K T_K n^T`; maps plane points `P`
/// (with `P . n = 1`) to `K (P - T_K)`.
pub fn plane_projection(
    camera: &CameraModel,
    patch: &PlanePatch,
) -> Result<Matrix3<f64>, GeometryError> {
    let k = camera.intrinsics();
    let pr = k - (k * camera.center()) * patch.normal.transpose();
    let svd = pr.svd(false, false);
    let smax = svd.singular_values[0];
    let smin = svd.singular_values[2];
    let cond = if smin > 0.0 {
        smax / smin
    } else {
        f64::INFINITY
    };
    if cond > 1e12 {
        return Err(GeometryError::SingularProjection { cond });
    }
    Ok(pr)
}

/// Homography sending a reference-time pixel of `patch` to its position at
/// time `t0 + s * (t1 - t0)`. This is the forward warp; blur gathering uses
/// its inverse.
pub fn reference_to_time(
    camera: &CameraModel,
    patch: &PlanePatch,
    s: f64,
) -> Result<Matrix3<f64>, GeometryError> {
    // Work in the camera frame: shift the plane and conjugate the motion so
    // the projection is a plain pinhole at the origin.
    let denom = 1.0 - camera.center().dot(&patch.normal);
    if denom.abs() <= 1e-6 {
        return Err(GeometryError::SingularProjection {
            cond: 1.0 / denom.abs().max(f64::MIN_POSITIVE),
        });
    }
    let n_cam = patch.normal / denom;
    let m = patch.motion.exp(s);
    let t_cam = m.translation() + (m.rotation() - Matrix3::identity()) * camera.center();

    let core = m.rotation() + t_cam * n_cam.transpose();
    if core == Matrix3::identity() {
        // Identity motion induces the identity map for any intrinsics.
        return Ok(Matrix3::identity());
    }
    Ok(camera.intrinsics() * core * camera.intrinsics_inv())
}

/// Blur homography: maps a pixel observed at time `t0 + t_offset * (t1 - t0)`
/// back to its reference-time position (the inverse of [`reference_to_time`]).
pub fn blur_homography(
    camera: &CameraModel,
    patch: &PlanePatch,
    t_offset: f64,
) -> Result<Matrix3<f64>, GeometryError> {
    debug_assert!((-1.0..=1.0).contains(&t_offset), "t_offset outside [-1, 1]");
    let g = reference_to_time(camera, patch, t_offset)?;
    let det = g.determinant();
    if det.abs() < 1e-12 {
        return Err(GeometryError::DegenerateHomography { det });
    }
    g.try_inverse()
        .ok_or(GeometryError::DegenerateHomography { det })
}

/// Scaled-normal transport under a motion `(R, T)` applied to the plane's
/// points: preserves `P . n = 1`. Returns `None` when the moved plane passes
/// through the origin.
pub fn transport_normal(normal: &Vector3<f64>, motion: &RigidMotion) -> Option<Vector3<f64>> {
    let rn = motion.rotation() * normal;
    let denom = 1.0 + motion.translation().dot(&rn);
    if denom.abs() < 1e-12 {
        None
    } else {
        Some(rn / denom)
    }
}

/// Applies a homography to a pixel position.
#[inline]
pub fn apply_homography(h: &Matrix3<f64>, x: f64, y: f64) -> (f64, f64) {
    let w = h[(2, 0)] * x + h[(2, 1)] * y + h[(2, 2)];
    (
        (h[(0, 0)] * x + h[(0, 1)] * y + h[(0, 2)]) / w,
        (h[(1, 0)] * x + h[(1, 1)] * y + h[(1, 2)]) / w,
    )
}

/// Rescales a homography so its largest-magnitude entry (or `h22` when
/// usable) becomes 1; handy for comparing maps that differ by scale.
pub fn projective_normalize(h: &Matrix3<f64>) -> Matrix3<f64> {
    let max_abs = h.abs().max();
    let pivot = if h[(2, 2)].abs() > 1e-6 * max_abs {
        h[(2, 2)]
    } else {
        let mut p = 0.0f64;
        for v in h.iter() {
            if v.abs() > p.abs() {
                p = *v;
            }
        }
        p
    };
    h / pivot
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Truncated power-series exponential of a 4x4 matrix; the independent
    /// oracle for the closed-form exponential.
    pub(crate) fn matrix_exp_series(m: &Matrix4<f64>, terms: usize) -> Matrix4<f64> {
        let mut acc = Matrix4::identity();
        let mut term = Matrix4::identity();
        for k in 1..=terms {
            term = term * m / (k as f64);
            acc += term;
        }
        acc
    }

    pub(crate) fn random_motion(rng: &mut ChaCha8Rng, max_angle: f64) -> RigidMotion {
        let axis = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        )
        .normalize();
        let angle = rng.gen_range(1e-7..max_angle);
        let r = rodrigues(angle, &skew(&axis));
        let t = Vector3::new(
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
        );
        RigidMotion::new(r, t).unwrap()
    }

    #[test]
    fn log_of_identity() {
        let tw = RigidMotion::identity().log().unwrap();
        assert_eq!(tw.theta(), 0.0);
        assert_eq!(tw.xi(), &Matrix4::zeros());
    }

    #[test]
    fn log_of_pure_translation() {
        let m = RigidMotion::translation_only(Vector3::new(1.0, 0.0, 0.0));
        let tw = m.log().unwrap();
        assert_eq!(tw.theta(), 0.0);
        assert_eq!(tw.axis(), Vector3::zeros());
        assert_eq!(tw.linear(), Vector3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn exp_log_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let m = random_motion(&mut rng, std::f64::consts::PI - 0.1);
            let tw = m.log().unwrap();
            let back = tw.exp(1.0);
            assert!(
                m.max_abs_diff(&back) < 1e-9,
                "round trip failed: diff {}",
                m.max_abs_diff(&back)
            );
        }
    }

    #[test]
    fn closed_form_matches_series_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let m = random_motion(&mut rng, 2.5);
            let tw = m.log().unwrap();
            let series = matrix_exp_series(&(tw.xi() * tw.theta()), 30);
            let closed = tw.exp(1.0);
            let rot_diff = (series.fixed_view::<3, 3>(0, 0) - closed.rotation())
                .abs()
                .max();
            let tr_diff = (series.fixed_view::<3, 1>(0, 3) - closed.translation())
                .abs()
                .max();
            assert!(
                rot_diff < 1e-9 && tr_diff < 1e-9,
                "series mismatch {rot_diff} {tr_diff}"
            );
        }
    }

    #[test]
    fn exp_of_zero_fraction_is_identity() {
        let tw = Twist::from_parts(
            0.7,
            Vector3::new(0.3, -1.0, 0.2),
            Vector3::new(1.0, 2.0, 3.0),
        );
        let m = tw.exp(0.0);
        assert!(m.max_abs_diff(&RigidMotion::identity()) < 1e-15);
    }

    #[test]
    fn half_fraction_of_quarter_turn() {
        let tw = Twist::from_parts(
            std::f64::consts::FRAC_PI_2,
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::zeros(),
        );
        let m = tw.exp(0.5);
        let expected = rodrigues(
            std::f64::consts::FRAC_PI_4,
            &skew(&Vector3::new(0.0, 0.0, 1.0)),
        );
        assert!((m.rotation() - expected).abs().max() < 1e-12);
        assert!(m.translation().norm() < 1e-15);
    }

    #[test]
    fn translation_twist_is_linear_in_fraction() {
        let tw = Twist::pure_translation(Vector3::new(2.0, 0.0, 4.0));
        let m = tw.exp(0.25);
        assert_eq!(m.rotation(), &Matrix3::identity());
        assert_eq!(m.translation(), &Vector3::new(0.5, 0.0, 1.0));
    }

    #[test]
    fn one_parameter_subgroup_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let m = random_motion(&mut rng, 2.0);
            let tw = m.log().unwrap();
            let a = rng.gen_range(-1.5..1.5);
            let b = rng.gen_range(-1.5..1.5);
            let lhs = tw.exp(a).compose(&tw.exp(b));
            let rhs = tw.exp(a + b);
            assert!(lhs.max_abs_diff(&rhs) < 1e-9);
        }
    }

    #[test]
    fn log_rejects_half_turn() {
        let r = rodrigues(
            std::f64::consts::PI - 1e-8,
            &skew(&Vector3::new(1.0, 0.0, 0.0)),
        );
        let m = RigidMotion::new(r, Vector3::zeros()).unwrap();
        assert!(matches!(m.log(), Err(GeometryError::AngleTooLarge { .. })));
    }

    #[test]
    fn log_near_branch_is_accurate() {
        // Angles approaching the branch margin still round-trip.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let m = random_motion(&mut rng, std::f64::consts::PI - 1e-3);
            if let Ok(tw) = m.log() {
                assert!(m.max_abs_diff(&tw.exp(1.0)) < 1e-8);
            }
        }
    }

    #[test]
    fn log_rejects_non_rotation() {
        let m = RigidMotion::new(Matrix3::identity() * 1.1, Vector3::zeros());
        assert!(matches!(m, Err(GeometryError::NotARotation { .. })));
    }

    #[test]
    fn plane_projection_with_centered_camera_is_k() {
        let cam = CameraModel::pinhole(100.0, 32.0, 32.0);
        let patch = PlanePatch::new(Vector3::new(0.0, 0.0, 1.0), Twist::identity(), 0).unwrap();
        let pr = plane_projection(&cam, &patch).unwrap();
        assert_eq!(&pr, cam.intrinsics());
    }

    #[test]
    fn plane_projection_direct_formula() {
        let cam = CameraModel::new(Matrix3::identity(), Vector3::new(0.0, 0.0, -1.0)).unwrap();
        let patch = PlanePatch::new(Vector3::new(0.0, 0.0, 1.0), Twist::identity(), 0).unwrap();
        let pr = plane_projection(&cam, &patch).unwrap();
        let mut expected = Matrix3::identity();
        expected[(2, 2)] = 2.0;
        assert_eq!(pr, expected);
        // Projecting a plane point equals K (P - T_K).
        let p = Vector3::new(0.3, -0.2, 1.0);
        assert!((pr * p - (p - cam.center())).norm() < 1e-15);
    }

    #[test]
    fn plane_projection_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..100 {
            let cam = CameraModel::pinhole(rng.gen_range(50.0..500.0), 64.0, 48.0).with_center(
                Vector3::new(
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.3..0.3),
                ),
            );
            let n = Vector3::new(
                rng.gen_range(-0.2..0.2),
                rng.gen_range(-0.2..0.2),
                rng.gen_range(0.5..1.5),
            );
            let patch = PlanePatch::new(n, Twist::identity(), 0).unwrap();
            if (1.0 - cam.center().dot(&n)).abs() < 1e-3 {
                continue;
            }
            let pr = plane_projection(&cam, &patch).unwrap();
            let pr_inv = pr.try_inverse().unwrap();
            // A plane point projects and lifts back to itself after rescale.
            let p0 = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0);
            // Construct a point satisfying p . n = 1 by solving for z.
            let z = (1.0 - p0.x * n.x - p0.y * n.y) / n.z;
            let p = Vector3::new(p0.x, p0.y, z);
            let pixel = pr * p;
            let q = pr_inv * pixel;
            let lifted = q / q.dot(&n);
            assert!(
                (lifted - p).norm() < 1e-8,
                "lift error {}",
                (lifted - p).norm()
            );
        }
    }

    #[test]
    fn blur_homography_at_reference_time_is_identity() {
        let cam = CameraModel::pinhole(120.0, 64.0, 64.0);
        let tw = Twist::from_parts(
            0.2,
            Vector3::new(0.1, 1.0, 0.05),
            Vector3::new(0.02, 0.0, -0.01),
        );
        let patch = PlanePatch::new(Vector3::new(0.01, -0.02, 1.0), tw, 0).unwrap();
        let h = blur_homography(&cam, &patch, 0.0).unwrap();
        let hn = projective_normalize(&h);
        assert!((hn - Matrix3::identity()).abs().max() < 1e-12);
    }

    #[test]
    fn blur_homography_pure_translation_example() {
        // K = I, camera at origin, plane z = 1, translation (1, 0, 0) per
        // frame: a pixel at time 1 maps back one unit left.
        let cam = CameraModel::new(Matrix3::identity(), Vector3::zeros()).unwrap();
        let tw = Twist::pure_translation(Vector3::new(1.0, 0.0, 0.0));
        let patch = PlanePatch::new(Vector3::new(0.0, 0.0, 1.0), tw, 0).unwrap();
        let h = blur_homography(&cam, &patch, 1.0).unwrap();
        for (u, v) in [(0.0, 0.0), (0.5, -0.25), (2.0, 3.0)] {
            let (x, y) = apply_homography(&h, u, v);
            assert!((x - (u - 1.0)).abs() < 1e-12 && (y - v).abs() < 1e-12);
        }
    }

    #[test]
    fn blur_homography_matches_backprojection_oracle() {
        // Independent route: lift the pixel to the moved plane (plane fitted
        // through three moved points), move it back in time, project.
        let cam = CameraModel::pinhole(200.0, 100.0, 80.0);
        let n = Vector3::new(0.05, -0.08, 0.9);
        let motion = RigidMotion::rotation_about_axis_through(
            0.12,
            Vector3::new(0.2, 1.0, 0.1),
            Vector3::new(0.0, 0.0, 1.0),
        )
        .with_extra_translation(Vector3::new(0.03, -0.02, 0.08));
        let tw = motion.log().unwrap();
        let patch = PlanePatch::new(n, tw, 0).unwrap();

        for s in [-0.5, -0.2, 0.3, 1.0] {
            let h = blur_homography(&cam, &patch, s).unwrap();
            let m_s = tw.exp(s);

            // Fit the moved plane through three moved reference-plane points.
            let base = [
                Vector3::new(0.0, 0.0, (1.0 - 0.0) / n.z),
                Vector3::new(1.0, 0.0, (1.0 - n.x) / n.z),
                Vector3::new(0.0, 1.0, (1.0 - n.y) / n.z),
            ];
            let moved: Vec<Vector3<f64>> = base.iter().map(|p| m_s.apply(p)).collect();
            let d1 = moved[1] - moved[0];
            let d2 = moved[2] - moved[0];
            let plane_dir = d1.cross(&d2);
            let n_s = plane_dir / plane_dir.dot(&moved[0]);

            let k_inv = cam.intrinsics_inv();
            for (u, v) in [(40.0, 30.0), (160.0, 120.0), (100.0, 80.0), (20.0, 150.0)] {
                let ray = k_inv * Vector3::new(u, v, 1.0);
                let lambda = 1.0 / ray.dot(&n_s);
                let p_t = ray * lambda;
                let p_ref = m_s.inverse().apply(&p_t);
                let proj = cam.intrinsics() * p_ref;
                let expected = (proj.x / proj.z, proj.y / proj.z);
                let got = apply_homography(&h, u, v);
                assert!(
                    (got.0 - expected.0).abs() < 1e-9 && (got.1 - expected.1).abs() < 1e-9,
                    "s={s} pixel ({u},{v}): got {got:?}, expected {expected:?}"
                );
            }
        }
    }

    #[test]
    fn yaw_trajectory_is_curved() {
        // A plane rotating about an in-plane vertical axis produces pixel
        // trajectories that a straight line cannot fit.
        let cam = CameraModel::pinhole(250.0, 0.0, 0.0);
        let motion = RigidMotion::rotation_about_axis_through(
            10.0_f64.to_radians(),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
        );
        let patch = PlanePatch::new(Vector3::new(0.0, 0.0, 1.0), motion.log().unwrap(), 0).unwrap();

        // Track the oblique pixel that sees the plane point (0.8, 0.6, 1).
        let (u0, v0) = (250.0 * 0.8, 250.0 * 0.6);
        let mut pts = Vec::new();
        for i in 0..9 {
            let s = -0.5 + (i as f64) / 8.0;
            let g = reference_to_time(&cam, &patch, s).unwrap();
            pts.push(apply_homography(&g, u0, v0));
        }
        // Total least squares line fit.
        let npts = pts.len() as f64;
        let (mx, my) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
        let (mx, my) = (mx / npts, my / npts);
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for p in &pts {
            sxx += (p.0 - mx) * (p.0 - mx);
            sxy += (p.0 - mx) * (p.1 - my);
            syy += (p.1 - my) * (p.1 - my);
        }
        let angle = 0.5 * (2.0 * sxy).atan2(sxx - syy);
        let (dx, dy) = (angle.cos(), angle.sin());
        let max_residual = pts
            .iter()
            .map(|p| ((p.0 - mx) * -dy + (p.1 - my) * dx).abs())
            .fold(0.0, f64::max);
        assert!(
            max_residual > 0.1,
            "trajectory unexpectedly straight (max residual {max_residual})"
        );
    }

    #[test]
    fn homography_composition_between_times() {
        let cam = CameraModel::pinhole(150.0, 60.0, 60.0);
        let motion = RigidMotion::rotation_about_axis_through(
            0.08,
            Vector3::new(0.3, 0.9, 0.1),
            Vector3::new(0.1, 0.0, 1.2),
        )
        .with_extra_translation(Vector3::new(0.01, 0.02, -0.03));
        let tw = motion.log().unwrap();
        let patch = PlanePatch::new(Vector3::new(0.02, 0.01, 0.85), tw, 0).unwrap();
        let (ta, tb) = (0.4, -0.3);

        // Map from time-b pixels to time-a pixels, two ways.
        let via_reference = blur_homography(&cam, &patch, ta)
            .unwrap()
            .try_inverse()
            .unwrap()
            * blur_homography(&cam, &patch, tb).unwrap();

        let m_ab = tw.exp(ta).compose(&tw.exp(tb).inverse());
        // Direct: lift at time b (transported normal), move b->a, project.
        let n_b = transport_normal(&patch.normal, &tw.exp(tb)).unwrap();
        let core = m_ab.rotation() + m_ab.translation() * n_b.transpose();
        let direct = cam.intrinsics() * core * cam.intrinsics_inv();

        let lhs = projective_normalize(&via_reference);
        let rhs = projective_normalize(&direct);
        assert!(
            (lhs - rhs).abs().max() < 1e-8,
            "diff {}",
            (lhs - rhs).abs().max()
        );
    }

    #[test]
    fn homography_inverse_consistency() {
        let cam = CameraModel::pinhole(180.0, 90.0, 70.0);
        let tw = Twist::from_parts(
            0.15,
            Vector3::new(0.2, 0.8, 0.3),
            Vector3::new(0.05, -0.02, 0.01),
        );
        let patch = PlanePatch::new(Vector3::new(0.0, 0.03, 1.1), tw, 0).unwrap();
        let h = blur_homography(&cam, &patch, 0.6).unwrap();
        let h_inv = h.try_inverse().unwrap();
        for (u, v) in [(10.0, 20.0), (150.0, 130.0), (90.0, 70.0)] {
            let fwd = apply_homography(&h, u, v);
            let back = apply_homography(&h_inv, fwd.0, fwd.1);
            assert!((back.0 - u).abs() < 1e-9 && (back.1 - v).abs() < 1e-9);
        }
    }

    #[test]
    fn transported_normal_preserves_plane_equation() {
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        for _ in 0..50 {
            let m = random_motion(&mut rng, 1.5);
            let n = Vector3::new(
                rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.3..0.3),
                rng.gen_range(0.6..1.4),
            );
            let Some(n_moved) = transport_normal(&n, &m) else {
                continue;
            };
            for _ in 0..5 {
                let x = rng.gen_range(-1.0..1.0);
                let y = rng.gen_range(-1.0..1.0);
                let z = (1.0 - x * n.x - y * n.y) / n.z;
                let p = m.apply(&Vector3::new(x, y, z));
                assert!((p.dot(&n_moved) - 1.0).abs() < 1e-9);
            }
        }
    }
}
