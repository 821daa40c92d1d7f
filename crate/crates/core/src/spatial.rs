//! Rigid-body math on SE(3).
//!
//! Poses are stored as a rotation matrix plus translation and map points
//! from the world frame into a body frame: `p_body = C * p_world + r`.
//! Tangent vectors are ordered `[translation; rotation]` and every Jacobian
//! in the crate uses the left-perturbation convention
//! `T' = exp(xi^) * T`.

use nalgebra::{Matrix3, Matrix4, SMatrix, Vector3, Vector4, Vector6};
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;
pub type Vec6 = Vector6<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat4 = Matrix4<f64>;
pub type Mat6 = SMatrix<f64, 6, 6>;
pub type Mat4x6 = SMatrix<f64, 4, 6>;

/// Angle below which `exp`/`log` switch to truncated Taylor series.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Tolerance on `C^T C - I` before a composed rotation is re-orthonormalized.
const ORTHO_DRIFT: f64 = 1e-9;

/// Homogeneous point `[x, y, z, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HomPoint(Vector4<f64>);

impl HomPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        HomPoint(Vector4::new(x, y, z, 1.0))
    }

    pub fn from_vec3(v: &Vec3) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn xyz(&self) -> Vec3 {
        self.0.xyz()
    }

    pub fn as_vec4(&self) -> &Vector4<f64> {
        &self.0
    }
}

/// `skew(v) * w == v x w`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`] (reads the antisymmetric part).
pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// The 4x4 se(3) matrix of a tangent vector `[rho; phi]`.
pub fn hat(xi: &Vec6) -> Mat4 {
    let rho = xi.fixed_rows::<3>(0).into_owned();
    let phi = xi.fixed_rows::<3>(3).into_owned();
    let mut m = Mat4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&phi));
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&rho);
    m
}

/// The `odot` operator on a homogeneous point `[eps; eta]`:
/// `[[eta*I, -skew(eps)], [0, 0]]`, so that `odot(p) * xi == hat(xi) * p`.
pub fn odot(p: &Vector4<f64>) -> Mat4x6 {
    let eps = p.xyz();
    let eta = p.w;
    let mut m = Mat4x6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(Mat3::identity() * eta));
    m.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-skew(&eps)));
    m
}

/// Rigid transform mapping world coordinates into a body frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    /// World-to-vehicle transform for a vehicle at `position` with heading
    /// `yaw` (radians, counter-clockwise about world z), zero roll and pitch.
    pub fn from_position_yaw(position: &Vec3, yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        let world_from_body = Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        let rotation = world_from_body.transpose();
        Pose {
            rotation,
            translation: -(rotation * position),
        }
    }

    /// Body origin expressed in the world frame (`-C^T r`).
    pub fn origin_in_world(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_matrix(&self) -> Mat4 {
        let mut m = Mat4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn apply_vec(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Largest entry of `|C^T C - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Mat3::identity()).amax()
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().chain(self.translation.iter()).all(|v| v.is_finite())
    }

    /// Projects the rotation back onto SO(3) with a Gram-Schmidt pass over the rows.
    pub fn orthonormalized(&self) -> Pose {
        let r = &self.rotation;
        let x = r.row(0).transpose().normalize();
        let y_raw = r.row(1).transpose();
        let y = (y_raw - x * x.dot(&y_raw)).normalize();
        let z = x.cross(&y);
        let rotation = Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Pose {
            rotation,
            translation: self.translation,
        }
    }
}

/// `apply(compose(a, b), p) == apply(a, apply(b, p))`.
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    let out = Pose {
        rotation: a.rotation * b.rotation,
        translation: a.rotation * b.translation + a.translation,
    };
    if out.orthonormality_error() > ORTHO_DRIFT {
        out.orthonormalized()
    } else {
        out
    }
}

pub fn invert(a: &Pose) -> Pose {
    let rt = a.rotation.transpose();
    Pose {
        rotation: rt,
        translation: -(rt * a.translation),
    }
}

pub fn apply(a: &Pose, p: &HomPoint) -> HomPoint {
    HomPoint::from_vec3(&a.apply_vec(&p.xyz()))
}

/// Rotation and left Jacobian of SO(3) in closed form.
fn rodrigues(phi: &Vec3) -> (Mat3, Mat3) {
    let theta = phi.norm();
    let a = phi / theta;
    let (s, c) = theta.sin_cos();
    // 1 - cos(theta) without cancellation
    let vers = 2.0 * (0.5 * theta).sin().powi(2);
    let aat = a * a.transpose();
    let ax = skew(&a);
    let rot = Mat3::identity() * c + aat * vers + ax * s;
    let jac = Mat3::identity() * (s / theta) + aat * (1.0 - s / theta) + ax * (vers / theta);
    (rot, jac)
}

/// Four-term Taylor expansion of the rotation and left Jacobian.
fn rodrigues_series(phi: &Vec3) -> (Mat3, Mat3) {
    let px = skew(phi);
    let px2 = px * px;
    let px3 = px2 * px;
    let i = Mat3::identity();
    let rot = i + px + px2 * 0.5 + px3 * (1.0 / 6.0);
    let jac = i + px * 0.5 + px2 * (1.0 / 6.0) + px3 * (1.0 / 24.0);
    (rot, jac)
}

/// SO(3) exponential and left Jacobian, switching to the series below [`SMALL_ANGLE`].
pub fn so3_exp_and_jacobian(phi: &Vec3) -> (Mat3, Mat3) {
    if phi.norm() < SMALL_ANGLE {
        rodrigues_series(phi)
    } else {
        rodrigues(phi)
    }
}

/// Exponential map from `[rho; phi]` to a pose.
pub fn exp_se3(xi: &Vec6) -> Pose {
    let rho = xi.fixed_rows::<3>(0).into_owned();
    let phi = xi.fixed_rows::<3>(3).into_owned();
    let (rotation, jac) = so3_exp_and_jacobian(&phi);
    Pose {
        rotation,
        translation: jac * rho,
    }
}

/// Logarithm of a pose. Accurate for rotation angles away from pi.
pub fn log_se3(t: &Pose) -> Vec6 {
    let c = &t.rotation;
    let cos_theta = (c.trace() - 1.0) * 0.5;
    let axis_sin = vee(c);
    let sin_theta = axis_sin.norm();
    let theta = sin_theta.atan2(cos_theta);
    let phi = if theta < SMALL_ANGLE {
        axis_sin
    } else {
        axis_sin * (theta / sin_theta)
    };
    let px = skew(&phi);
    let jac_inv = if theta < SMALL_ANGLE {
        Mat3::identity() - px * 0.5 + px * px * (1.0 / 12.0)
    } else {
        let a = phi / theta;
        let half = 0.5 * theta;
        let cot = half / half.tan();
        Mat3::identity() * cot + a * a.transpose() * (1.0 - cot) - skew(&a) * half
    };
    let rho = jac_inv * t.translation;
    let mut out = Vec6::zeros();
    out.fixed_rows_mut::<3>(0).copy_from(&rho);
    out.fixed_rows_mut::<3>(3).copy_from(&phi);
    out
}

/// `exp(xi) * T`.
pub fn perturb_left(t: &Pose, xi: &Vec6) -> Pose {
    compose(&exp_se3(xi), t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_xi(rng: &mut ChaCha8Rng, scale: f64) -> Vec6 {
        Vec6::from_fn(|_, _| rng.random_range(-scale..scale))
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        exp_se3(&random_xi(rng, 2.0))
    }

    #[test]
    fn skew_examples() {
        assert_eq!(skew(&Vec3::zeros()), Mat3::zeros());
        let w = skew(&Vec3::new(0.0, 0.0, 1.0)) * Vec3::new(1.0, 0.0, 0.0);
        assert_eq!(w, Vec3::new(0.0, 1.0, 0.0));
        let m = skew(&Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(m, Mat3::new(0.0, -3.0, 2.0, 3.0, 0.0, -1.0, -2.0, 1.0, 0.0));
        assert_eq!(m, -m.transpose());
    }

    #[test]
    fn odot_block_structure() {
        let o = odot(HomPoint::new(0.0, 0.0, 0.0).as_vec4());
        let mut expected = Mat4x6::zeros();
        expected.fixed_view_mut::<3, 3>(0, 0).copy_from(&Mat3::identity());
        assert_eq!(o, expected);

        let o = odot(HomPoint::new(1.0, 2.0, 3.0).as_vec4());
        assert_eq!(
            o.fixed_view::<3, 3>(0, 3).into_owned(),
            -skew(&Vec3::new(1.0, 2.0, 3.0))
        );
        assert!(o.row(3).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn odot_hat_duality() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let p = HomPoint::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            );
            let xi = random_xi(&mut rng, 1.0);
            let lhs = odot(p.as_vec4()) * xi;
            let rhs = hat(&xi) * p.as_vec4();
            assert!((lhs - rhs).amax() < 1e-12);
        }
    }

    #[test]
    fn group_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let p = HomPoint::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            );
            let id = compose(&a, &invert(&a));
            assert!((id.rotation - Mat3::identity()).amax() < 1e-9);
            assert!(id.translation.amax() < 1e-9);
            assert_eq!(compose(&Pose::identity(), &a), a);
            let back = apply(&invert(&a), &apply(&a, &p));
            assert!((back.xyz() - p.xyz()).amax() < 1e-9);
            assert_eq!(apply(&a, &p).as_vec4().w, 1.0);
            let lhs = apply(&compose(&a, &b), &p);
            let rhs = apply(&a, &apply(&b, &p));
            assert!((lhs.xyz() - rhs.xyz()).amax() < 1e-9);
            assert!((invert(&a).translation - a.origin_in_world()).amax() < 1e-12);
        }
    }

    #[test]
    fn exp_special_cases() {
        assert_eq!(exp_se3(&Vec6::zeros()), Pose::identity());
        let t = Vec3::new(1.0, -2.0, 0.5);
        let xi = Vec6::new(t.x, t.y, t.z, 0.0, 0.0, 0.0);
        let p = exp_se3(&xi);
        assert_eq!(p.rotation, Mat3::identity());
        assert_eq!(p.translation, t);
    }

    #[test]
    fn series_matches_closed_form_near_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let dir = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
            for theta in [1e-10, 1e-8, 1e-7, 1e-6, 1e-3] {
                let phi = dir * theta;
                let (r1, j1) = rodrigues(&phi);
                let (r2, j2) = rodrigues_series(&phi);
                assert!((r1 - r2).amax() < 1e-12, "theta {theta}");
                assert!((j1 - j2).amax() < 1e-12, "theta {theta}");
            }
            let phi = dir * 1e-3;
            assert!((rodrigues(&phi).1 - rodrigues_series(&phi).1).amax() < 1e-12);
        }
        let xi = Vec6::new(0.3, 0.1, -0.2, 1e-10, 0.0, 0.0);
        let pose = exp_se3(&xi);
        let (r, j) = rodrigues_series(&Vec3::new(1e-10, 0.0, 0.0));
        assert!((pose.rotation - r).amax() < 1e-12);
        assert!((pose.translation - j * Vec3::new(0.3, 0.1, -0.2)).amax() < 1e-12);
    }

    #[test]
    fn exp_log_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let dir = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
            let angle = rng.random_range(0.0..(std::f64::consts::PI - 0.1));
            let phi = dir * angle;
            let rho = Vec3::from_fn(|_, _| rng.random_range(-3.0..3.0));
            let xi = Vec6::new(rho.x, rho.y, rho.z, phi.x, phi.y, phi.z);
            let t = exp_se3(&xi);
            let back = exp_se3(&log_se3(&t));
            assert!((back.to_matrix() - t.to_matrix()).amax() < 1e-9);
        }
        assert!(log_se3(&Pose::identity()).amax() == 0.0);
    }

    #[test]
    fn log_inverts_exp_at_small_angles() {
        for angle in [1e-12, 1e-9, 1e-6, 1e-4, 1e-2] {
            let xi = Vec6::new(0.2, -0.1, 0.3, angle * 0.6, -angle * 0.8, 0.0);
            let back = log_se3(&exp_se3(&xi));
            assert!((back - xi).amax() < 1e-12 * xi.amax().max(1.0), "angle {angle}");
        }
    }

    #[test]
    fn perturb_left_first_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-7;
        for _ in 0..20 {
            let t = random_pose(&mut rng);
            assert_eq!(perturb_left(&t, &Vec6::zeros()), t);
            let dir = random_xi(&mut rng, 1.0);
            let moved = perturb_left(&t, &(dir * h)).to_matrix();
            let fd = (moved - t.to_matrix()) / h;
            let expected = hat(&dir) * t.to_matrix();
            assert!((fd - expected).amax() < 1e-5);
        }
    }

    #[test]
    fn perturb_left_composition_is_second_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t = random_pose(&mut rng);
        let a = random_xi(&mut rng, 1.0);
        let b = random_xi(&mut rng, 1.0);
        let mut prev: Option<f64> = None;
        for scale in [1e-2, 1e-3, 1e-4] {
            let nested = perturb_left(&perturb_left(&t, &(a * scale)), &(b * scale));
            let summed = perturb_left(&t, &((a + b) * scale));
            let err = (nested.to_matrix() - summed.to_matrix()).amax();
            assert!(err < 10.0 * scale * scale);
            if let Some(p) = prev {
                // quadratic: a 10x smaller step gives ~100x smaller error
                assert!(err < p / 50.0);
            }
            prev = Some(err);
        }
    }

    #[test]
    fn long_composition_chain_stays_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut t = Pose::identity();
        for _ in 0..10_000 {
            t = compose(&t, &random_pose(&mut rng));
        }
        assert!(t.orthonormality_error() < 1e-7);
        assert!((t.rotation.determinant() - 1.0).abs() < 1e-9);
        assert!(t.is_finite());
    }

    #[test]
    fn yaw_pose_places_body_origin() {
        let pos = Vec3::new(1.0, 2.0, 1.5);
        let t = Pose::from_position_yaw(&pos, 0.7);
        assert!((t.origin_in_world() - pos).amax() < 1e-12);
        // body x axis points along the heading
        let ahead = invert(&t).apply_vec(&Vec3::new(1.0, 0.0, 0.0)) - pos;
        assert!((ahead - Vec3::new(0.7f64.cos(), 0.7f64.sin(), 0.0)).amax() < 1e-12);
    }
}
