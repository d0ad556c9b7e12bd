//! Pinhole cameras, rays bounded by the unit sphere, and plane-induced
//! homographies between views.
//!
//! Pixel coordinates put integer values at pixel centres, so a `W x H` image
//! covers `[-0.5, W - 0.5] x [-0.5, H - 0.5]`.

use nalgebra::{Matrix3, Vector2, Vector3};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("ray does not intersect the unit sphere")]
    RayMissesBounds,
    #[error("point lies behind the camera (depth {0})")]
    BehindCamera(f64),
    #[error("plane passes through the reference camera centre (|d| = {0:e})")]
    DegeneratePlane(f64),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
}

/// Tolerance used when validating rotation matrices.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

/// Minimum plane offset (in the reference camera frame) accepted by
/// [`homography`].
pub const MIN_PLANE_OFFSET: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    k: Matrix3<f64>,
    k_inv: Matrix3<f64>,
    r: Matrix3<f64>,
    t: Vector3<f64>,
    width: u32,
    height: u32,
}

impl Camera {
    /// Builds a camera from intrinsics `k`, world-to-camera rotation `r` and
    /// translation `t`, validating the intrinsics layout and that `r` is a
    /// proper rotation.
    pub fn new(
        k: Matrix3<f64>,
        r: Matrix3<f64>,
        t: Vector3<f64>,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidCamera("image size must be positive".into()));
        }
        if (k[(2, 2)] - 1.0).abs() > 1e-12 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 {
            return Err(GeometryError::InvalidCamera("K must have last row (0, 0, 1)".into()));
        }
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0) {
            return Err(GeometryError::InvalidCamera("focal lengths must be positive".into()));
        }
        if k.iter().chain(r.iter()).chain(t.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidCamera("non-finite entry".into()));
        }
        let ortho = (r.transpose() * r - Matrix3::identity()).amax();
        if ortho >= ROTATION_TOLERANCE {
            return Err(GeometryError::InvalidCamera(format!(
                "R is not orthonormal (|R^T R - I| = {ortho:e})"
            )));
        }
        let det = r.determinant();
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(GeometryError::InvalidCamera(format!("det(R) = {det}, expected 1")));
        }
        let k_inv = k
            .try_inverse()
            .ok_or_else(|| GeometryError::InvalidCamera("K is singular".into()))?;
        Ok(Self { k, k_inv, r, t, width, height })
    }

    /// Camera at `eye` looking towards `target`, with `up` roughly the image
    /// "up" direction. The principal point sits at the image centre.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        focal: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let forward = (target - eye).normalize();
        // image y grows downwards
        let right = forward.cross(&up);
        if right.norm() < 1e-9 {
            return Err(GeometryError::InvalidCamera("up vector parallel to view direction".into()));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(r * eye);
        let k = Matrix3::new(
            focal,
            0.0,
            (width as f64 - 1.0) / 2.0,
            0.0,
            focal,
            (height as f64 - 1.0) / 2.0,
            0.0,
            0.0,
            1.0,
        );
        Self::new(k, r, t, width, height)
    }

    pub fn k(&self) -> &Matrix3<f64> {
        &self.k
    }

    pub fn k_inv(&self) -> &Matrix3<f64> {
        &self.k_inv
    }

    pub fn r(&self) -> &Matrix3<f64> {
        &self.r
    }

    pub fn t(&self) -> &Vector3<f64> {
        &self.t
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Camera centre in world coordinates, `-R^T t`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.r.transpose() * self.t)
    }

    /// True when `x` lies inside the image rectangle `[-0.5, W-0.5] x [-0.5, H-0.5]`.
    pub fn contains(&self, x: &Vector2<f64>) -> bool {
        x.x >= -0.5
            && x.y >= -0.5
            && x.x <= self.width as f64 - 0.5
            && x.y <= self.height as f64 - 0.5
    }

    /// Unit world-space direction of the ray through pixel `x`.
    pub fn pixel_direction(&self, x: &Vector2<f64>) -> Vector3<f64> {
        (self.r.transpose() * (self.k_inv * Vector3::new(x.x, x.y, 1.0))).normalize()
    }

    /// Back-projects pixel `x` into a world-space ray clipped to the unit sphere.
    pub fn pixel_to_ray(&self, x: &Vector2<f64>) -> Result<Ray, GeometryError> {
        let o = self.center();
        let v = self.pixel_direction(x);
        let (t_near, t_far) = unit_sphere_chord(&o, &v).ok_or(GeometryError::RayMissesBounds)?;
        Ok(Ray { o, v, t_near, t_far })
    }

    /// Perspective projection of a world point to pixel coordinates.
    pub fn project(&self, p: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
        let pc = self.r * p + self.t;
        if pc.z <= 0.0 {
            return Err(GeometryError::BehindCamera(pc.z));
        }
        let x = self.k * pc;
        Ok(Vector2::new(x.x / x.z, x.y / x.z))
    }

    /// Viewing direction from this camera's centre towards `p`.
    pub fn direction_to(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (p - self.center()).normalize()
    }
}

/// A ray `o + t v` restricted to `[t_near, t_far]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub o: Vector3<f64>,
    pub v: Vector3<f64>,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.o + self.v * t
    }
}

/// Intersection interval of the ray `o + t v` (unit `v`) with the unit sphere,
/// clipped to positive `t`.
pub fn unit_sphere_chord(o: &Vector3<f64>, v: &Vector3<f64>) -> Option<(f64, f64)> {
    let b = o.dot(v);
    let c = o.norm_squared() - 1.0;
    let disc = b * b - c;
    if disc <= 0.0 {
        return None;
    }
    let root = disc.sqrt();
    let t_far = -b + root;
    if t_far <= 0.0 {
        return None;
    }
    let t_near = (-b - root).max(1e-6);
    if t_near >= t_far {
        return None;
    }
    Some((t_near, t_far))
}

/// Plane `n^T p + d = 0` in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentPlane {
    pub n: Vector3<f64>,
    pub d: f64,
}

impl TangentPlane {
    /// Plane through `p` with normal direction `normal` (normalised here),
    /// using `d = -n^T p`.
    pub fn through(p: &Vector3<f64>, normal: &Vector3<f64>) -> Option<Self> {
        let len = normal.norm();
        if !(len > 1e-12) || !len.is_finite() {
            return None;
        }
        let n = normal / len;
        Some(Self { n, d: -n.dot(p) })
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.n.dot(p) + self.d
    }
}

/// Plane-induced homography from the reference to the source view, kept in
/// factored form `H = A - B / d_ref` so that derivatives with respect to the
/// plane offset are available.
///
/// `d_ref` is the plane offset expressed in the reference camera frame, i.e.
/// the signed distance from the reference camera centre to the plane.
#[derive(Debug, Clone, Copy)]
pub struct PlaneHomography {
    a: Matrix3<f64>,
    b: Matrix3<f64>,
    d_ref: f64,
}

impl PlaneHomography {
    pub fn new(
        reference: &Camera,
        source: &Camera,
        plane: &TangentPlane,
    ) -> Result<Self, GeometryError> {
        // Express the plane in the reference camera frame: n_c = R_r n,
        // d_c = n^T C_r + d. With these, the closed form below is the textbook
        // K_s R_s (I - (R_s^-1 t_s - R_r^-1 t_r) n_c^T R_r / d_c) R_r^-1 K_r^-1.
        let n_c = reference.r * plane.n;
        let d_c = plane.n.dot(&reference.center()) + plane.d;
        if d_c.abs() <= MIN_PLANE_OFFSET {
            return Err(GeometryError::DegeneratePlane(d_c.abs()));
        }
        let rr_inv = reference.r.transpose();
        let rs_inv = source.r.transpose();
        let baseline = rs_inv * source.t - rr_inv * reference.t;
        let left = source.k * source.r;
        let right = rr_inv * reference.k_inv;
        let a = left * right;
        let b = left * (baseline * n_c.transpose() * reference.r) * right;
        Ok(Self { a, b, d_ref: d_c })
    }

    /// Plane offset in the reference camera frame.
    pub fn offset(&self) -> f64 {
        self.d_ref
    }

    /// The unnormalised homography `A - B / d`.
    pub fn raw(&self) -> Matrix3<f64> {
        self.a - self.b / self.d_ref
    }

    /// Derivative of the unnormalised homography with respect to the plane
    /// offset `d` (identical for the world and reference-frame offsets).
    pub fn d_raw_d_offset(&self) -> Matrix3<f64> {
        self.b / (self.d_ref * self.d_ref)
    }

    /// Homography scaled so that `H[2][2] = 1` when that entry is not tiny.
    pub fn matrix(&self) -> Matrix3<f64> {
        normalize_homography(self.raw())
    }
}

fn normalize_homography(h: Matrix3<f64>) -> Matrix3<f64> {
    let s = h[(2, 2)];
    if s.abs() > 1e-12 {
        h / s
    } else {
        h
    }
}

/// Plane-induced homography mapping homogeneous reference pixels to source
/// pixels, normalised so `H[2][2] = 1`.
pub fn homography(
    reference: &Camera,
    source: &Camera,
    plane: &TangentPlane,
) -> Result<Matrix3<f64>, GeometryError> {
    Ok(PlaneHomography::new(reference, source, plane)?.matrix())
}

/// Applies `h` to pixel `x` and dehomogenises. Returns `None` when the
/// result is at infinity or behind the source camera.
pub fn apply_homography(h: &Matrix3<f64>, x: &Vector2<f64>) -> Option<Vector2<f64>> {
    let y = h * Vector3::new(x.x, x.y, 1.0);
    if y.z.abs() < 1e-12 || !y.z.is_finite() {
        return None;
    }
    Some(Vector2::new(y.x / y.z, y.y / y.z))
}
