//! Analytic shapes used as ground truth.

use nalgebra::{Rotation3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Every shape must fit inside this ball.
pub const SHAPE_MARGIN: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ShapeKind {
    Sphere { radius: f64 },
    Box { half_extents: [f64; 3] },
    /// Ring in the local xz-plane around the local y axis.
    Torus { major: f64, minor: f64 },
    Union { parts: Vec<ShapeSpec> },
}

/// A shape with a rigid pose: local coordinates are
/// `q = R(rotation)^T (p - translation)`, rotation given as an axis-angle
/// vector in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    #[serde(flatten)]
    pub kind: ShapeKind,
    #[serde(default)]
    pub translation: [f64; 3],
    #[serde(default)]
    pub rotation: [f64; 3],
}

impl ShapeSpec {
    pub fn new(kind: ShapeKind) -> Self {
        Self { kind, translation: [0.0; 3], rotation: [0.0; 3] }
    }

    pub fn posed(kind: ShapeKind, translation: [f64; 3], rotation: [f64; 3]) -> Self {
        Self { kind, translation, rotation }
    }

    pub fn sphere(radius: f64) -> Self {
        Self::new(ShapeKind::Sphere { radius })
    }

    /// Named presets: `sphere`, `box`, `torus` and `union` (sphere plus box).
    pub fn preset(name: &str) -> Option<Self> {
        Some(match name {
            "sphere" => Self::sphere(0.5),
            "box" => Self::posed(ShapeKind::Box { half_extents: [0.45, 0.35, 0.3] }, [0.0; 3], [0.3, 0.5, 0.1]),
            "torus" => Self::posed(ShapeKind::Torus { major: 0.5, minor: 0.2 }, [0.0; 3], [0.6, 0.0, 0.3]),
            "union" | "sphere-plus-box" => Self::new(ShapeKind::Union {
                parts: vec![
                    Self::posed(ShapeKind::Sphere { radius: 0.38 }, [-0.22, 0.05, 0.05], [0.0; 3]),
                    Self::posed(
                        ShapeKind::Box { half_extents: [0.26, 0.2, 0.24] },
                        [0.3, -0.1, -0.05],
                        [0.2, 0.6, -0.1],
                    ),
                ],
            }),
            _ => return None,
        })
    }

    fn rotation_matrix(&self) -> Rotation3<f64> {
        Rotation3::from_scaled_axis(Vector3::from(self.rotation))
    }

    fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix().inverse() * (p - Vector3::from(self.translation))
    }

    fn to_world(&self, q: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * q + Vector3::from(self.translation)
    }

    /// Radius of a ball around the origin that contains the shape.
    pub fn bounding_radius(&self) -> f64 {
        let offset = Vector3::from(self.translation).norm();
        match &self.kind {
            ShapeKind::Sphere { radius } => offset + radius,
            ShapeKind::Box { half_extents } => offset + Vector3::from(*half_extents).norm(),
            ShapeKind::Torus { major, minor } => offset + major + minor,
            ShapeKind::Union { parts } => {
                offset + parts.iter().map(ShapeSpec::bounding_radius).fold(0.0, f64::max)
            }
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        match &self.kind {
            ShapeKind::Sphere { radius } if !ok(*radius) => return Err("sphere radius must be positive".into()),
            ShapeKind::Box { half_extents } if !half_extents.iter().all(|h| ok(*h)) => {
                return Err("box half extents must be positive".into())
            }
            ShapeKind::Torus { major, minor } if !(ok(*major) && ok(*minor) && minor < major) => {
                return Err("torus needs 0 < minor < major".into())
            }
            ShapeKind::Union { parts } => {
                if parts.is_empty() {
                    return Err("empty union".into());
                }
                for p in parts {
                    p.validate()?;
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Surface area (for unions, the sum over parts before clipping).
    fn raw_area(&self) -> f64 {
        use std::f64::consts::PI;
        match &self.kind {
            ShapeKind::Sphere { radius } => 4.0 * PI * radius * radius,
            ShapeKind::Box { half_extents: [a, b, c] } => 8.0 * (a * b + b * c + a * c),
            ShapeKind::Torus { major, minor } => 4.0 * PI * PI * major * minor,
            ShapeKind::Union { parts } => parts.iter().map(ShapeSpec::raw_area).sum(),
        }
    }

    /// A uniformly distributed point on the surface of this primitive or of
    /// the union's parts (before removing hidden parts).
    fn sample_raw_surface(&self, rng: &mut impl Rng) -> Vector3<f64> {
        use std::f64::consts::TAU;
        let q = match &self.kind {
            ShapeKind::Sphere { radius } => unit_sphere(rng) * *radius,
            ShapeKind::Box { half_extents: h } => {
                let areas = [h[1] * h[2], h[0] * h[2], h[0] * h[1]];
                let total: f64 = areas.iter().sum();
                let mut u = rng.random::<f64>() * total;
                let mut axis = 2;
                for (i, a) in areas.iter().enumerate() {
                    if u < *a {
                        axis = i;
                        break;
                    }
                    u -= a;
                }
                let mut q = Vector3::zeros();
                for k in 0..3 {
                    q[k] = h[k] * rng.random_range(-1.0..1.0);
                }
                q[axis] = if rng.random::<bool>() { h[axis] } else { -h[axis] };
                q
            }
            ShapeKind::Torus { major, minor } => loop {
                let theta = rng.random::<f64>() * TAU;
                let phi = rng.random::<f64>() * TAU;
                // area element is proportional to major + minor cos(phi)
                if rng.random::<f64>() * (major + minor) <= major + minor * phi.cos() {
                    let ring = major + minor * phi.cos();
                    break Vector3::new(ring * theta.cos(), minor * phi.sin(), ring * theta.sin());
                }
            },
            ShapeKind::Union { parts } => {
                let total = self.raw_area();
                let mut u = rng.random::<f64>() * total;
                let mut chosen = &parts[parts.len() - 1];
                for p in parts {
                    let a = p.raw_area();
                    if u < a {
                        chosen = p;
                        break;
                    }
                    u -= a;
                }
                chosen.sample_raw_surface(rng)
            }
        };
        self.to_world(&q)
    }

    /// `n` uniformly distributed points on the visible surface.
    pub fn sample_surface(&self, n: usize, rng: &mut impl Rng) -> Vec<Vector3<f64>> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let p = self.sample_raw_surface(rng);
            // drop union parts buried inside another part
            if analytic_sdf(self, &p) > -1e-9 {
                out.push(p);
            }
        }
        out
    }
}

fn unit_sphere(rng: &mut impl Rng) -> Vector3<f64> {
    let z: f64 = rng.random_range(-1.0..1.0);
    let a = rng.random::<f64>() * std::f64::consts::TAU;
    let r = (1.0 - z * z).sqrt();
    Vector3::new(r * a.cos(), r * a.sin(), z)
}

/// Exact signed distance to `shape`.
pub fn analytic_sdf(shape: &ShapeSpec, p: &Vector3<f64>) -> f64 {
    let q = shape.to_local(p);
    match &shape.kind {
        ShapeKind::Sphere { radius } => q.norm() - radius,
        ShapeKind::Box { half_extents } => {
            let d = q.abs() - Vector3::from(*half_extents);
            d.map(|x| x.max(0.0)).norm() + d.max().min(0.0)
        }
        ShapeKind::Torus { major, minor } => {
            let ring = (q.x * q.x + q.z * q.z).sqrt() - major;
            (ring * ring + q.y * q.y).sqrt() - minor
        }
        ShapeKind::Union { parts } => parts.iter().map(|s| analytic_sdf(s, &q)).fold(f64::INFINITY, f64::min),
    }
}

/// Central-difference gradient of the analytic SDF.
pub fn analytic_normal(shape: &ShapeSpec, p: &Vector3<f64>) -> Vector3<f64> {
    let h = 1e-6;
    let mut g = Vector3::zeros();
    for k in 0..3 {
        let mut e = Vector3::zeros();
        e[k] = h;
        g[k] = (analytic_sdf(shape, &(p + e)) - analytic_sdf(shape, &(p - e))) / (2.0 * h);
    }
    g.try_normalize(1e-12).unwrap_or(Vector3::z())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sphere_examples() {
        let s = ShapeSpec::sphere(0.5);
        assert_eq!(analytic_sdf(&s, &Vector3::new(0.5, 0.0, 0.0)), 0.0);
        assert_eq!(analytic_sdf(&s, &Vector3::zeros()), -0.5);
    }

    #[test]
    fn box_and_torus_examples() {
        let b = ShapeSpec::new(ShapeKind::Box { half_extents: [0.2, 0.3, 0.4] });
        assert!((analytic_sdf(&b, &Vector3::new(0.5, 0.0, 0.0)) - 0.3).abs() < 1e-15);
        assert!((analytic_sdf(&b, &Vector3::zeros()) + 0.2).abs() < 1e-15);
        assert!((analytic_sdf(&b, &Vector3::new(0.3, 0.4, 0.0)) - 2f64.sqrt() * 0.1).abs() < 1e-15);
        let t = ShapeSpec::new(ShapeKind::Torus { major: 0.5, minor: 0.1 });
        assert!((analytic_sdf(&t, &Vector3::new(0.5, 0.0, 0.0)) + 0.1).abs() < 1e-15);
        assert!((analytic_sdf(&t, &Vector3::zeros()) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn presets_fit_the_margin() {
        for name in ["sphere", "box", "torus", "union"] {
            let s = ShapeSpec::preset(name).unwrap();
            assert!(s.validate().is_ok());
            assert!(s.bounding_radius() <= SHAPE_MARGIN, "{name}: {}", s.bounding_radius());
        }
    }

    #[test]
    fn unit_gradient_almost_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for name in ["sphere", "box", "torus", "union"] {
            let s = ShapeSpec::preset(name).unwrap();
            let mut checked = 0;
            while checked < 1000 {
                let p = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                let h = 1e-6;
                let mut g = Vector3::zeros();
                for k in 0..3 {
                    let mut e = Vector3::zeros();
                    e[k] = h;
                    g[k] = (analytic_sdf(&s, &(p + e)) - analytic_sdf(&s, &(p - e))) / (2.0 * h);
                }
                // skip the medial set where the gradient is undefined
                let mut e = Vector3::zeros();
                e[0] = 1e-3;
                let g2 = {
                    let mut g2 = Vector3::zeros();
                    for k in 0..3 {
                        let mut d = Vector3::zeros();
                        d[k] = h;
                        g2[k] = (analytic_sdf(&s, &(p + e + d)) - analytic_sdf(&s, &(p + e - d))) / (2.0 * h);
                    }
                    g2
                };
                if (g - g2).norm() > 0.05 {
                    continue;
                }
                assert!((g.norm() - 1.0).abs() < 1e-5, "{name} at {p:?}: {}", g.norm());
                checked += 1;
            }
        }
    }

    #[test]
    fn surface_samples_lie_on_the_surface() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for name in ["sphere", "box", "torus", "union"] {
            let s = ShapeSpec::preset(name).unwrap();
            for p in s.sample_surface(2000, &mut rng) {
                assert!(analytic_sdf(&s, &p).abs() < 1e-9, "{name}");
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let s = ShapeSpec::preset("union").unwrap();
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains("\"kind\":\"union\""));
        assert_eq!(serde_json::from_str::<ShapeSpec>(&text).unwrap(), s);
    }
}
