//! Pinhole camera, tag detectability and Fisher information of tag-corner
//! measurements.

use nalgebra::{Matrix2x3, SMatrix, SymmetricEigen, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{line_of_sight, tag_corners_world, Scene, Slot, Vec2};
use crate::spatial::{compose, odot, HomPoint, Mat3, Mat6, Pose, Vec3};

pub type Mat2x6 = SMatrix<f64, 2, 6>;
pub type Pixel = Vector2<f64>;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum SensingError {
    #[error("point depth {depth} m is behind the near plane")]
    DepthBehindCamera { depth: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid camera model: {0}")]
pub struct CameraError(pub String);

/// Pinhole camera rigidly mounted on the vehicle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fu: f64,
    pub fv: f64,
    pub cu: f64,
    pub cv: f64,
    pub width: f64,
    pub height: f64,
    /// Depth of view (m): the largest usable vehicle-to-tag distance.
    pub dov: f64,
    /// Vehicle-to-camera transform.
    pub t_cv: Pose,
    /// Smallest projected tag side (pixels) that still counts as detectable.
    pub sl_min: f64,
    pub near_z: f64,
    /// Optional limit on the viewing angle off the tag normal (degrees).
    pub max_incidence_deg: Option<f64>,
}

/// Vehicle frame is x forward, y left, z up; camera frame is z along the
/// optical axis, x right, y down. This is the forward-looking mount.
pub fn forward_camera_rotation() -> Mat3 {
    Mat3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0)
}

impl Default for CameraModel {
    fn default() -> Self {
        CameraModel {
            fu: 540.0,
            fv: 540.0,
            cu: 428.0,
            cv: 240.0,
            width: 856.0,
            height: 480.0,
            dov: 8.0,
            t_cv: Pose::new(forward_camera_rotation(), Vec3::zeros()),
            sl_min: 20.0,
            near_z: 0.01,
            max_incidence_deg: None,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), CameraError> {
        let bad = |m: &str| Err(CameraError(m.to_string()));
        if !(self.fu > 0.0 && self.fv > 0.0) {
            return bad("focal lengths must be positive");
        }
        if !(self.cu > 0.0 && self.cu < self.width) || !(self.cv > 0.0 && self.cv < self.height) {
            return bad("principal point must lie inside the image");
        }
        if !(self.sl_min >= 4.0) {
            return bad("minimum side length must be at least 4 px");
        }
        if !(self.dov > 0.0 && self.near_z > 0.0) {
            return bad("depth of view and near plane must be positive");
        }
        let r = &self.t_cv.rotation;
        if self.t_cv.orthonormality_error() > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return bad("vehicle-to-camera rotation is not a proper rotation");
        }
        Ok(())
    }
}

/// Isotropic pixel noise on every corner measurement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma_px: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel { sigma_px: 1.0 }
    }
}

impl NoiseModel {
    pub fn information_scale(&self) -> f64 {
        1.0 / (self.sigma_px * self.sigma_px)
    }
}

/// Symmetric 6x6 information matrix stored as its upper triangle (row-major).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fim(pub [f64; 21]);

const fn upper_index(i: usize, j: usize) -> usize {
    // row i starts after rows of length 6, 5, ...
    6 * i - i * i.saturating_sub(1) / 2 + j - i
}

impl Default for Fim {
    fn default() -> Self {
        Self::zero()
    }
}

impl Fim {
    pub const fn zero() -> Self {
        Fim([0.0; 21])
    }

    /// Reads the upper triangle of `m`.
    pub fn from_matrix(m: &Mat6) -> Self {
        let mut out = [0.0; 21];
        let mut k = 0;
        for i in 0..6 {
            for j in i..6 {
                out[k] = m[(i, j)];
                k += 1;
            }
        }
        Fim(out)
    }

    pub fn to_matrix(&self) -> Mat6 {
        let mut m = Mat6::zeros();
        let mut k = 0;
        for i in 0..6 {
            for j in i..6 {
                m[(i, j)] = self.0[k];
                m[(j, i)] = self.0[k];
                k += 1;
            }
        }
        m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.0[upper_index(i, j)]
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }

    pub fn add_assign(&mut self, other: &Fim) {
        for (a, b) in self.0.iter_mut().zip(other.0.iter()) {
            *a += b;
        }
    }

    pub fn scaled(&self, s: f64) -> Fim {
        Fim(self.0.map(|v| v * s))
    }

    pub fn trace(&self) -> f64 {
        (0..6).map(|i| self.0[upper_index(i, i)]).sum()
    }
}

/// Scalarization of an information matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    #[default]
    Trace,
    Logdet,
    Mineig,
}

impl MetricKind {
    /// Trace is additive, so per-tag traces can be summed directly.
    pub fn is_additive(self) -> bool {
        matches!(self, MetricKind::Trace)
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Trace => "trace",
            MetricKind::Logdet => "logdet",
            MetricKind::Mineig => "mineig",
        }
    }
}

impl std::str::FromStr for MetricKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "trace" => Ok(MetricKind::Trace),
            "logdet" => Ok(MetricKind::Logdet),
            "mineig" => Ok(MetricKind::Mineig),
            other => Err(format!("unknown metric '{other}' (expected trace, logdet or mineig)")),
        }
    }
}

/// Non-negative scalar localizability of an information matrix.
///
/// `logdet` is `ln(1 + det)`, which is zero for zero information and finite
/// for rank-deficient matrices.
pub fn metric(f: &Fim, kind: MetricKind) -> f64 {
    match kind {
        MetricKind::Trace => f.trace(),
        MetricKind::Mineig => {
            if f.is_zero() {
                return 0.0;
            }
            let eig = SymmetricEigen::new(f.to_matrix()).eigenvalues;
            eig.min().max(0.0)
        }
        MetricKind::Logdet => {
            if f.is_zero() {
                return 0.0;
            }
            let eig = SymmetricEigen::new(f.to_matrix()).eigenvalues;
            let det: f64 = eig.iter().map(|l| l.max(0.0)).product();
            det.ln_1p()
        }
    }
}

/// World point to camera-frame coordinates.
pub fn to_camera(t_vw: &Pose, cam: &CameraModel, p_w: &HomPoint) -> Vec3 {
    cam.t_cv.apply_vec(&t_vw.apply_vec(&p_w.xyz()))
}

pub fn project(p_c: &Vec3, cam: &CameraModel) -> Result<Pixel, SensingError> {
    if !(p_c.z >= cam.near_z) {
        return Err(SensingError::DepthBehindCamera { depth: p_c.z });
    }
    Ok(Pixel::new(
        cam.fu * p_c.x / p_c.z + cam.cu,
        cam.fv * p_c.y / p_c.z + cam.cv,
    ))
}

/// Lower image edges inclusive, upper edges exclusive.
pub fn in_fov(px: &Pixel, cam: &CameraModel) -> bool {
    px.x >= 0.0 && px.x < cam.width && px.y >= 0.0 && px.y < cam.height
}

/// Derivative of the pixel measurement of `p_w` with respect to a left
/// perturbation of `t_vw`.
pub fn corner_jacobian(t_vw: &Pose, cam: &CameraModel, p_w: &HomPoint) -> Result<Mat2x6, SensingError> {
    let q = t_vw.apply_vec(&p_w.xyz());
    let p_c = cam.t_cv.apply_vec(&q);
    if !(p_c.z >= cam.near_z) {
        return Err(SensingError::DepthBehindCamera { depth: p_c.z });
    }
    let (x, y, z) = (p_c.x, p_c.y, p_c.z);
    // perspective division, middle row [0, 1/Z, -Y/Z^2]
    let s = Matrix2x3::new(
        cam.fu / z,
        0.0,
        -cam.fu * x / (z * z),
        0.0,
        cam.fv / z,
        -cam.fv * y / (z * z),
    );
    let q_odot = odot(&nalgebra::Vector4::new(q.x, q.y, q.z, 1.0));
    let z_factor = (cam.t_cv.to_matrix() * q_odot).fixed_rows::<3>(0).into_owned();
    Ok(s * z_factor)
}

/// Information from the four corners of one tag.
pub fn tag_fim(
    t_vw: &Pose,
    corners: &[HomPoint; 4],
    cam: &CameraModel,
    noise: &NoiseModel,
) -> Result<Fim, SensingError> {
    let mut info = Mat6::zeros();
    for c in corners {
        let g = corner_jacobian(t_vw, cam, c)?;
        info += g.transpose() * g;
    }
    Ok(Fim::from_matrix(&(info * noise.information_scale())))
}

/// Projected corners if the tag passes every detectability gate.
pub fn detect(
    t_vw: &Pose,
    slot: &Slot,
    size: f64,
    scene: &Scene,
    cam: &CameraModel,
) -> Option<[HomPoint; 4]> {
    let vehicle = t_vw.origin_in_world();
    let center = Vec3::new(slot.anchor.x, slot.anchor.y, slot.height);
    // range
    if !((center - vehicle).norm() < cam.dov) {
        return None;
    }
    // front face
    let to_vehicle = Vec2::new(vehicle.x, vehicle.y) - slot.anchor;
    if !(slot.normal.dot(&to_vehicle) > 0.0) {
        return None;
    }
    if let Some(max_deg) = cam.max_incidence_deg {
        let n3 = Vec3::new(slot.normal.x, slot.normal.y, 0.0);
        let view = (vehicle - center).normalize();
        if n3.dot(&view) < max_deg.to_radians().cos() {
            return None;
        }
    }
    let t_cw = compose(&cam.t_cv, t_vw);
    let camera_xy = {
        let o = t_cw.origin_in_world();
        Vec2::new(o.x, o.y)
    };
    let corners = tag_corners_world(&slot.anchor, &slot.normal, slot.height, size);
    let mut pixels = [Pixel::zeros(); 4];
    for (px, c) in pixels.iter_mut().zip(&corners) {
        let p_c = t_cw.apply_vec(&c.xyz());
        *px = project(&p_c, cam).ok().filter(|p| in_fov(p, cam))?;
    }
    for c in &corners {
        let xyz = c.xyz();
        if !line_of_sight(&camera_xy, &Vec2::new(xyz.x, xyz.y), scene) {
            return None;
        }
    }
    let min_side = (0..4)
        .map(|i| (pixels[i] - pixels[(i + 1) % 4]).norm())
        .fold(f64::INFINITY, f64::min);
    (min_side >= cam.sl_min).then_some(corners)
}

/// All detectability gates: range, front face, per-corner line of sight,
/// depth and field of view, and minimum projected side length.
pub fn detectable(t_vw: &Pose, slot: &Slot, size: f64, scene: &Scene, cam: &CameraModel) -> bool {
    detect(t_vw, slot, size, scene, cam).is_some()
}

/// Detectability-gated tag information (zero when undetectable).
pub fn gated_tag_fim(
    t_vw: &Pose,
    slot: &Slot,
    size: f64,
    scene: &Scene,
    cam: &CameraModel,
    noise: &NoiseModel,
) -> Fim {
    match detect(t_vw, slot, size, scene, cam) {
        Some(corners) => tag_fim(t_vw, &corners, cam, noise).unwrap_or_default(),
        None => Fim::zero(),
    }
}

/// An active tag: a slot with a chosen size.
#[derive(Clone, Debug, PartialEq)]
pub struct ActiveTag<'a> {
    pub slot: &'a Slot,
    pub size: f64,
}

/// Sum of the information of every detectable active tag, accumulated in
/// ascending slot-id order.
pub fn pose_fim(
    t_vw: &Pose,
    active: &[ActiveTag<'_>],
    scene: &Scene,
    cam: &CameraModel,
    noise: &NoiseModel,
) -> Fim {
    let mut order: Vec<&ActiveTag<'_>> = active.iter().collect();
    order.sort_by_key(|a| a.slot.id);
    let mut total = Fim::zero();
    for tag in order {
        total.add_assign(&gated_tag_fim(t_vw, tag.slot, tag.size, scene, cam, noise));
    }
    total
}
