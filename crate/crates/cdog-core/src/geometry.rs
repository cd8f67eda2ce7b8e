//! Projective-geometry primitives: camera poses, fundamental matrices,
//! epipolar lines and distances, projection, DLT triangulation and
//! back-projection error.
//!
//! Conventions: a world point `x` maps into camera `m`'s frame as
//! `x_m = R_m * x + T_m`, and onto its image plane as `K_m * x_m` followed
//! by the homogeneous division. `fundamental_matrix(a, b)` returns `F` with
//! `V_a^T F V_b = 0` for exact projections `V_a`, `V_b` of one 3D point,
//! i.e. `F * V_b` is the epipolar line in view `a`.

use nalgebra::{DMatrix, Matrix3x4, RowVector3};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::{Mat3, Vec2, Vec3};

/// Tolerance for rotation orthonormality and intrinsic validation.
pub const POSE_TOL: f64 = 1e-9;
/// Minimum separation of camera centers for a defined epipolar geometry.
pub const CENTER_TOL: f64 = 1e-9;
/// Minimum projective depth in front of a camera.
pub const DEPTH_TOL: f64 = 1e-9;
/// Epipole / degenerate-line detection threshold on line coefficients.
pub const LINE_TOL: f64 = 1e-12;
/// Relative singular-value gap below which triangulation is degenerate.
pub const TRIANGULATION_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("rotation matrix is not orthonormal with determinant +1")]
    InvalidRotation,
    #[error("intrinsic matrix is not upper-triangular with positive diagonal")]
    InvalidIntrinsics,
    #[error("camera centers coincide; epipolar geometry undefined")]
    DegenerateRig,
    #[error("point is the epipole; epipolar line undefined")]
    DegenerateLine,
    #[error("3D point is behind the camera (depth {0})")]
    BehindCamera(f64),
    #[error("degenerate triangulation configuration (parallel/colinear rays)")]
    DegenerateConfiguration,
    #[error("triangulation needs at least two distinct views, got {0}")]
    NotEnoughViews(usize),
    #[error("unknown view pair ({0}, {1})")]
    UnknownViewPair(u32, u32),
}

/// Calibrated pose of one camera view.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPose {
    pub view_id: u32,
    /// 3x3 intrinsics, upper triangular with positive diagonal (pixels).
    pub k: Mat3,
    /// 3x3 rotation, world to camera.
    pub r: Mat3,
    /// Translation, world to camera (world units).
    pub t: Vec3,
}

impl CameraPose {
    pub fn new(view_id: u32, k: Mat3, r: Mat3, t: Vec3) -> Result<Self, GeometryError> {
        let rtr = r.transpose() * r;
        if (rtr - Mat3::identity()).norm() > POSE_TOL || (r.determinant() - 1.0).abs() > POSE_TOL {
            return Err(GeometryError::InvalidRotation);
        }
        let lower_ok = k[(1, 0)] == 0.0 && k[(2, 0)] == 0.0 && k[(2, 1)] == 0.0;
        if !lower_ok || k[(0, 0)] <= 0.0 || k[(1, 1)] <= 0.0 || k[(2, 2)] <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics);
        }
        Ok(Self { view_id, k, r, t })
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.r.transpose() * self.t)
    }

    /// 3x4 projection matrix `K [R | T]`.
    pub fn projection_matrix(&self) -> Matrix3x4<f64> {
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.r);
        rt.column_mut(3).copy_from(&self.t);
        self.k * rt
    }
}

/// Homogeneous epipolar line coefficients `[a, b, c]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpipolarLine {
    pub abc: Vec3,
}

/// Pose of camera `b`'s frame relative to camera `a`'s frame:
/// `x_b = R_rel * x_a + T_rel`.
pub fn relative_pose(a: &CameraPose, b: &CameraPose) -> (Mat3, Vec3) {
    let r_rel = b.r * a.r.transpose();
    let t_rel = b.t - r_rel * a.t;
    (r_rel, t_rel)
}

fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Fundamental matrix with `V_a^T F V_b = 0`; normalized to unit
/// Frobenius norm.
pub fn fundamental_matrix(a: &CameraPose, b: &CameraPose) -> Result<Mat3, GeometryError> {
    if (a.center() - b.center()).norm() <= CENTER_TOL {
        return Err(GeometryError::DegenerateRig);
    }
    let (r_rel, t_rel) = relative_pose(a, b);
    // x_b^T [T]x R x_a = 0 with x_m = K_m^-1 V_m, transposed so the
    // point of view b sits on the right.
    let ka_inv = a.k.try_inverse().ok_or(GeometryError::InvalidIntrinsics)?;
    let kb_inv = b.k.try_inverse().ok_or(GeometryError::InvalidIntrinsics)?;
    let f = ka_inv.transpose() * r_rel.transpose() * skew(&t_rel) * kb_inv;
    Ok(f / f.norm())
}

/// Epipolar line `F * [x, y, 1]^T`.
pub fn epipolar_line(f: &Mat3, p: Vec2) -> Result<EpipolarLine, GeometryError> {
    let abc = f * Vec3::new(p.x, p.y, 1.0);
    if abc.x.abs() < LINE_TOL && abc.y.abs() < LINE_TOL {
        return Err(GeometryError::DegenerateLine);
    }
    Ok(EpipolarLine { abc })
}

/// Pixel distance from `p` to the line, `|a x + b y + c| / sqrt(a^2 + b^2)`.
pub fn epipolar_distance(l: &EpipolarLine, p: Vec2) -> f64 {
    let [a, b, c] = [l.abc.x, l.abc.y, l.abc.z];
    (a * p.x + b * p.y + c).abs() / (a * a + b * b).sqrt()
}

/// Perspective projection of a world point into pixel coordinates.
pub fn project(cam: &CameraPose, r: Vec3) -> Result<Vec2, GeometryError> {
    let x_cam = cam.r * r + cam.t;
    if x_cam.z <= DEPTH_TOL {
        return Err(GeometryError::BehindCamera(x_cam.z));
    }
    let v = cam.k * x_cam;
    Ok(Vec2::new(v.x / v.z, v.y / v.z))
}

/// Homogeneous DLT triangulation: least-squares 3D point from two or more
/// calibrated observations.
pub fn triangulate(cams: &[&CameraPose], pts: &[Vec2]) -> Result<Vec3, GeometryError> {
    if cams.len() < 2 || cams.len() != pts.len() {
        return Err(GeometryError::NotEnoughViews(cams.len()));
    }
    let mut a = DMatrix::<f64>::zeros(2 * cams.len(), 4);
    for (i, (cam, p)) in cams.iter().zip(pts.iter()).enumerate() {
        let pm = cam.projection_matrix();
        let r0 = pm.row(0);
        let r1 = pm.row(1);
        let r2 = pm.row(2);
        for j in 0..4 {
            a[(2 * i, j)] = p.x * r2[j] - r0[j];
            a[(2 * i + 1, j)] = p.y * r2[j] - r1[j];
        }
        // Row normalization for conditioning.
        for k in 0..2 {
            let n = a.row(2 * i + k).norm();
            if n > 0.0 {
                a.row_mut(2 * i + k).scale_mut(1.0 / n);
            }
        }
    }
    let svd = a.svd(false, true);
    let s = &svd.singular_values;
    let v_t = svd.v_t.as_ref().expect("svd with v requested");
    // Singular values are sorted descending; a vanishing gap between the two
    // smallest means the nullspace direction is not unique.
    let n = s.len();
    if (s[n - 2] - s[n - 1]).abs() < TRIANGULATION_TOL * s[0] {
        return Err(GeometryError::DegenerateConfiguration);
    }
    let h = v_t.row(n - 1);
    let w = h[3];
    if w.abs() < TRIANGULATION_TOL {
        return Err(GeometryError::DegenerateConfiguration);
    }
    Ok(Vec3::new(h[0] / w, h[1] / w, h[2] / w))
}

/// Mean squared pixel distance between observations and the back-projection
/// of `r_hat` (squared pixels).
pub fn back_projection_error(
    cams: &[&CameraPose],
    pts: &[Vec2],
    r_hat: Vec3,
) -> Result<f64, GeometryError> {
    assert_eq!(cams.len(), pts.len());
    assert!(!cams.is_empty());
    let mut sum = 0.0;
    for (cam, p) in cams.iter().zip(pts.iter()) {
        let v_hat = project(cam, r_hat)?;
        sum += (p - v_hat).norm_squared();
    }
    Ok(sum / cams.len() as f64)
}

/// Precomputed epipolar-line maps for all ordered view pairs of a rig.
///
/// `line_map(from, to)` returns the matrix taking a pixel point in view
/// `from` to its epipolar line in view `to`.
#[derive(Debug, Clone)]
pub struct FundamentalCache {
    maps: BTreeMap<(u32, u32), Mat3>,
}

impl FundamentalCache {
    pub fn new(cams: &[CameraPose]) -> Result<Self, GeometryError> {
        let mut maps = BTreeMap::new();
        for a in cams {
            for b in cams {
                if a.view_id == b.view_id {
                    continue;
                }
                // V_b^T F V_a = 0, so F * V_a is a line in view b.
                let f = fundamental_matrix(b, a)?;
                maps.insert((a.view_id, b.view_id), f);
            }
        }
        Ok(Self { maps })
    }

    pub fn line_map(&self, from: u32, to: u32) -> Result<&Mat3, GeometryError> {
        self.maps
            .get(&(from, to))
            .ok_or(GeometryError::UnknownViewPair(from, to))
    }

    /// Epipolar line in view `to` of a point observed in view `from`.
    pub fn line(&self, from: u32, to: u32, p: Vec2) -> Result<EpipolarLine, GeometryError> {
        epipolar_line(self.line_map(from, to)?, p)
    }

    /// Directed epipolar distance: from `q` in view `to` to the epipolar
    /// line of `p` in view `from`.
    pub fn distance(&self, from: u32, to: u32, p: Vec2, q: Vec2) -> Result<f64, GeometryError> {
        Ok(epipolar_distance(&self.line(from, to, p)?, q))
    }

    /// Mean of the two directed epipolar distances of a candidate pair.
    pub fn symmetric_distance(
        &self,
        view_a: u32,
        p_a: Vec2,
        view_b: u32,
        p_b: Vec2,
    ) -> Result<f64, GeometryError> {
        let d_ab = self.distance(view_a, view_b, p_a, p_b)?;
        let d_ba = self.distance(view_b, view_a, p_b, p_a)?;
        Ok(0.5 * (d_ab + d_ba))
    }
}

/// Builds a row-major rotation from orthonormal right/down/forward axes.
pub(crate) fn rotation_from_axes(right: Vec3, down: Vec3, forward: Vec3) -> Mat3 {
    Mat3::from_rows(&[
        RowVector3::new(right.x, right.y, right.z),
        RowVector3::new(down.x, down.y, down.z),
        RowVector3::new(forward.x, forward.y, forward.z),
    ])
}
