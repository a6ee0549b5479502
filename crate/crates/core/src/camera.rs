//! Decomposed pan-tilt-zoom camera model.
//!
//! A sports camera sits on a fixed tripod: the full world-to-camera rotation
//! factors into a static base rotation (base tilt, roll) followed by the
//! operated pan and tilt. With square pixels and a centered principal point
//! the projection is
//!
//! ```text
//! P = K * Q_tilt * Q_pan * S_roll * S_base * [I | -C]
//! ```
//!
//! World frame: origin at the bottom-left field corner, X along the field
//! length, Y along the width, Z up. Camera frame: X right, Y down, Z forward.
//! With pan = tilt = roll = 0 and base tilt -90 the camera looks down the
//! world +Y axis with world +Z as image up.
//!
//! Because the playing surface is the z = 0 plane, the projection restricts
//! to a 3x3 plane-to-image homography, and that homography can be decomposed
//! back into focal length, rotation and camera center (self-calibration from
//! a plane). Both directions live here.

use nalgebra::{Matrix3, Matrix3x4, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Homogeneous depth below which a point counts as behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;

/// Default base tilt in degrees: tripods hold the camera level.
pub const DEFAULT_BASE_TILT_DEG: f64 = -90.0;

/// Widest roll magnitude accepted as a physical sports-camera pose.
pub const MAX_ROLL_DEG: f64 = 0.5;

/// A pan-tilt-zoom camera pose.
///
/// Angles in degrees, camera center in world meters, focal length in pixels.
/// `reserved` pads the pose to a fixed 9-scalar vector for storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "PoseRecord", into = "PoseRecord")]
pub struct CameraPose {
    pub focal_length: f64,
    pub pan_deg: f64,
    pub tilt_deg: f64,
    pub roll_deg: f64,
    pub base_tilt_deg: f64,
    pub center: Vector3<f64>,
    pub image_width: u32,
    pub image_height: u32,
    pub reserved: f64,
}

/// On-disk shape of a pose record.
#[derive(Serialize, Deserialize)]
struct PoseRecord {
    focal_length: f64,
    pan_deg: f64,
    tilt_deg: f64,
    roll_deg: f64,
    base_tilt_deg: f64,
    center: [f64; 3],
    image_size: [u32; 2],
}

impl From<PoseRecord> for CameraPose {
    fn from(r: PoseRecord) -> Self {
        CameraPose {
            focal_length: r.focal_length,
            pan_deg: r.pan_deg,
            tilt_deg: r.tilt_deg,
            roll_deg: r.roll_deg,
            base_tilt_deg: r.base_tilt_deg,
            center: Vector3::new(r.center[0], r.center[1], r.center[2]),
            image_width: r.image_size[0],
            image_height: r.image_size[1],
            reserved: 0.0,
        }
    }
}

impl From<CameraPose> for PoseRecord {
    fn from(p: CameraPose) -> Self {
        PoseRecord {
            focal_length: p.focal_length,
            pan_deg: p.pan_deg,
            tilt_deg: p.tilt_deg,
            roll_deg: p.roll_deg,
            base_tilt_deg: p.base_tilt_deg,
            center: [p.center.x, p.center.y, p.center.z],
            image_size: [p.image_width, p.image_height],
        }
    }
}

impl CameraPose {
    pub fn new(
        focal_length: f64,
        pan_deg: f64,
        tilt_deg: f64,
        center: Vector3<f64>,
        image_width: u32,
        image_height: u32,
    ) -> Self {
        CameraPose {
            focal_length,
            pan_deg,
            tilt_deg,
            roll_deg: 0.0,
            base_tilt_deg: DEFAULT_BASE_TILT_DEG,
            center,
            image_width,
            image_height,
            reserved: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal_length > 0.0) || !self.focal_length.is_finite() {
            return Err(Error::InvalidPose(format!(
                "focal length must be positive, got {}",
                self.focal_length
            )));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::InvalidPose("image dimensions must be positive".into()));
        }
        if self.roll_deg.abs() > MAX_ROLL_DEG {
            return Err(Error::InvalidPose(format!(
                "roll {}° exceeds ±{MAX_ROLL_DEG}°",
                self.roll_deg
            )));
        }
        let finite = self.pan_deg.is_finite()
            && self.tilt_deg.is_finite()
            && self.base_tilt_deg.is_finite()
            && self.center.iter().all(|c| c.is_finite());
        if !finite {
            return Err(Error::InvalidPose("non-finite pose parameter".into()));
        }
        Ok(())
    }

    /// Fixed-width 9-scalar form used by database records.
    pub fn pose_vector(&self) -> [f64; 9] {
        [
            self.focal_length,
            self.pan_deg,
            self.tilt_deg,
            self.roll_deg,
            self.base_tilt_deg,
            self.center.x,
            self.center.y,
            self.center.z,
            self.reserved,
        ]
    }

    /// Rebuild a pose from its 9-scalar form plus the render image size.
    pub fn from_pose_vector(v: &[f64; 9], image_width: u32, image_height: u32) -> Self {
        CameraPose {
            focal_length: v[0],
            pan_deg: v[1],
            tilt_deg: v[2],
            roll_deg: v[3],
            base_tilt_deg: v[4],
            center: Vector3::new(v[5], v[6], v[7]),
            image_width,
            image_height,
            reserved: v[8],
        }
    }

    pub fn intrinsic_matrix(&self) -> Matrix3<f64> {
        let f = self.focal_length;
        let cx = self.image_width as f64 / 2.0;
        let cy = self.image_height as f64 / 2.0;
        Matrix3::new(f, 0.0, cx, 0.0, f, cy, 0.0, 0.0, 1.0)
    }
}

/// 3x4 pinhole projection matrix `K R [I | -C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    pub p: Matrix3x4<f64>,
}

/// 3x3 plane-to-image projective map.
///
/// Stored normalized: bottom-right entry 1 when it is nonzero, otherwise
/// unit Frobenius norm. Always invertible.
#[derive(Debug, Clone, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let m = normalize_matrix(&m);
        let det = m.determinant();
        if det.abs() <= 1e-12 {
            return Err(Error::SingularHomography { det });
        }
        Ok(Homography { m })
    }

    pub fn identity() -> Self {
        Homography { m: Matrix3::identity() }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn inverse(&self) -> Result<Homography> {
        let inv = self
            .m
            .try_inverse()
            .ok_or(Error::SingularHomography { det: 0.0 })?;
        Homography::new(inv)
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Homography) -> Result<Homography> {
        Homography::new(self.m * other.m)
    }

    /// Map a point, returning the homogeneous triple before division.
    pub fn apply_homogeneous(&self, p: Vector2<f64>) -> Vector3<f64> {
        self.m * Vector3::new(p.x, p.y, 1.0)
    }

    /// Map a point with perspective division. `None` if the point sits on
    /// the line mapped to infinity.
    pub fn apply(&self, p: Vector2<f64>) -> Option<Vector2<f64>> {
        let h = self.apply_homogeneous(p);
        if h.z.abs() < 1e-12 {
            None
        } else {
            Some(Vector2::new(h.x / h.z, h.y / h.z))
        }
    }
}

fn normalize_matrix(m: &Matrix3<f64>) -> Matrix3<f64> {
    let w = m[(2, 2)];
    if w.abs() > 1e-12 {
        m / w
    } else {
        let n = m.norm();
        if n > 0.0 { m / n } else { *m }
    }
}

/// Rotation about the camera X axis mapping world points into a frame
/// rotated by `deg` (world-to-camera sense).
fn rot_x(deg: f64) -> Matrix3<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, s, 0.0, -s, c)
}

fn rot_y(deg: f64) -> Matrix3<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    Matrix3::new(c, 0.0, -s, 0.0, 1.0, 0.0, s, 0.0, c)
}

fn rot_z(deg: f64) -> Matrix3<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    Matrix3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0)
}

/// World-to-camera rotation `Q_tilt * Q_pan * S_roll * S_base`.
pub fn rotation_from_pose(pose: &CameraPose) -> Matrix3<f64> {
    rot_x(pose.tilt_deg) * rot_y(pose.pan_deg) * rot_z(pose.roll_deg) * rot_x(pose.base_tilt_deg)
}

/// Assemble the full 3x4 projection `K R [I | -C]`.
pub fn projection_from_pose(pose: &CameraPose) -> ProjectionMatrix {
    let k = pose.intrinsic_matrix();
    let r = rotation_from_pose(pose);
    let kr = k * r;
    let t = kr * (-pose.center);
    let mut p = Matrix3x4::zeros();
    p.fixed_view_mut::<3, 3>(0, 0).copy_from(&kr);
    p.column_mut(3).copy_from(&t);
    ProjectionMatrix { p }
}

/// Project a world point to pixels. `None` marks a point at or behind the
/// camera plane (depth <= [`MIN_DEPTH`]); such points must be clipped, not
/// drawn.
pub fn project_point(proj: &ProjectionMatrix, world: Vector3<f64>) -> Option<Vector2<f64>> {
    let h = proj.p * nalgebra::Vector4::new(world.x, world.y, world.z, 1.0);
    if h.z <= MIN_DEPTH {
        return None;
    }
    Some(Vector2::new(h.x / h.z, h.y / h.z))
}

/// Restrict the projection to the z = 0 plane: H = columns 1, 2, 4 of P.
pub fn homography_from_pose(pose: &CameraPose) -> Result<Homography> {
    if pose.center.z <= 0.0 {
        return Err(Error::DegeneratePose(format!(
            "camera center must be above the plane, got z = {}",
            pose.center.z
        )));
    }
    let p = projection_from_pose(pose).p;
    let c0: Vector3<f64> = p.column(0).into();
    let c1: Vector3<f64> = p.column(1).into();
    let c3: Vector3<f64> = p.column(3).into();
    let m = Matrix3::from_columns(&[c0, c1, c3]);
    Homography::new(m).map_err(|_| {
        Error::DegeneratePose("plane restriction of the projection is singular".into())
    })
}

/// Recover focal length, rotation and camera center from a plane-to-image
/// homography (self-calibration from a plane).
///
/// Assumes square pixels and a principal point at the image center. The two
/// constraints on the rotation columns (orthogonality, equal norm) are
/// combined by least squares to solve for the focal length; the rotation is
/// projected to the nearest orthonormal matrix; the decomposition sign is
/// chosen so the camera sits above the plane.
pub fn pose_from_homography(
    h: &Homography,
    image_width: u32,
    image_height: u32,
) -> Result<CameraPose> {
    let cx = image_width as f64 / 2.0;
    let cy = image_height as f64 / 2.0;
    // Move the principal point to the origin so K reduces to diag(f, f, 1).
    let t = Matrix3::new(1.0, 0.0, -cx, 0.0, 1.0, -cy, 0.0, 0.0, 1.0);
    let ht = t * h.matrix();

    let h1 = ht.column(0);
    let h2 = ht.column(1);
    let (a1, b1, c1) = (h1[0], h1[1], h1[2]);
    let (a2, b2, c2) = (h2[0], h2[1], h2[2]);

    // With u = 1/f^2:  u*(a1*a2 + b1*b2) + c1*c2 = 0
    //                  u*(a1^2 + b1^2 - a2^2 - b2^2) + (c1^2 - c2^2) = 0
    let coef = [a1 * a2 + b1 * b2, a1 * a1 + b1 * b1 - a2 * a2 - b2 * b2];
    let rhs = [c1 * c2, c1 * c1 - c2 * c2];
    let denom = coef[0] * coef[0] + coef[1] * coef[1];
    if denom < 1e-24 {
        return Err(Error::NonPhysicalHomography(
            "focal length is indeterminate from this homography".into(),
        ));
    }
    let u = -(coef[0] * rhs[0] + coef[1] * rhs[1]) / denom;
    if !(u > 0.0) || !u.is_finite() {
        return Err(Error::NonPhysicalHomography(format!(
            "1/f^2 solved non-positive ({u:.3e})"
        )));
    }
    let f = (1.0 / u).sqrt();
    decompose_with_focal(&ht, f, image_width, image_height)
}

/// Decompose a principal-point-centered plane homography with a known
/// focal length: rotation columns from K^-1 H, nearest-rotation
/// projection, sign fixed so the camera sits above the plane.
///
/// Also usable directly when the focal length comes from a prior rather
/// than plane self-calibration (e.g. a sloppy refinement warp whose own
/// f^2 estimate collapses).
pub fn pose_from_homography_with_focal(
    h: &Homography,
    focal_length: f64,
    image_width: u32,
    image_height: u32,
) -> Result<CameraPose> {
    if !(focal_length > 0.0) {
        return Err(Error::NonPhysicalHomography(format!(
            "prior focal length must be positive, got {focal_length}"
        )));
    }
    let cx = image_width as f64 / 2.0;
    let cy = image_height as f64 / 2.0;
    let t = Matrix3::new(1.0, 0.0, -cx, 0.0, 1.0, -cy, 0.0, 0.0, 1.0);
    let ht = t * h.matrix();
    decompose_with_focal(&ht, focal_length, image_width, image_height)
}

fn decompose_with_focal(
    ht: &Matrix3<f64>,
    f: f64,
    image_width: u32,
    image_height: u32,
) -> Result<CameraPose> {
    // Two candidate decompositions differ by the global homography sign;
    // exactly one places the camera above the plane.
    for sign in [1.0, -1.0] {
        let hs = ht * sign;
        let kinv_h1 = Vector3::new(hs[(0, 0)] / f, hs[(1, 0)] / f, hs[(2, 0)]);
        let kinv_h2 = Vector3::new(hs[(0, 1)] / f, hs[(1, 1)] / f, hs[(2, 1)]);
        let kinv_h3 = Vector3::new(hs[(0, 2)] / f, hs[(1, 2)] / f, hs[(2, 2)]);
        let n1 = kinv_h1.norm();
        let n2 = kinv_h2.norm();
        if n1 < 1e-15 || n2 < 1e-15 {
            return Err(Error::NonPhysicalHomography("degenerate rotation columns".into()));
        }
        let r1 = kinv_h1 / n1;
        let r2 = kinv_h2 / n2;
        let r3 = r1.cross(&r2);
        let approx = Matrix3::from_columns(&[r1, r2, r3]);

        let rot = nearest_rotation(&approx)?;
        let tvec = kinv_h3 / n1;
        let center = -rot.transpose() * tvec;
        if center.z > 0.0 {
            let (pan_deg, tilt_deg, roll_deg) = euler_from_rotation(&rot);
            return Ok(CameraPose {
                focal_length: f,
                pan_deg,
                tilt_deg,
                roll_deg,
                base_tilt_deg: DEFAULT_BASE_TILT_DEG,
                center,
                image_width,
                image_height,
                reserved: 0.0,
            });
        }
    }
    Err(Error::NonPhysicalHomography(
        "camera center lies on or below the plane".into(),
    ))
}

/// Orthogonal Procrustes: nearest rotation in Frobenius norm.
fn nearest_rotation(m: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::NonPhysicalHomography("SVD failed on rotation estimate".into())),
    };
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        // Flip the weakest singular direction to stay in SO(3).
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    Ok(r)
}

/// Extract (pan, tilt, roll) in degrees from the operated part of the
/// rotation, `M = R * S_base^T = Q_tilt * Q_pan * S_roll`.
fn euler_from_rotation(r: &Matrix3<f64>) -> (f64, f64, f64) {
    let m = r * rot_x(DEFAULT_BASE_TILT_DEG).transpose();
    let pan = (-m[(0, 2)]).asin();
    let tilt = m[(1, 2)].atan2(m[(2, 2)]);
    let roll = m[(0, 1)].atan2(m[(0, 0)]);
    (pan.to_degrees(), tilt.to_degrees(), roll.to_degrees())
}
