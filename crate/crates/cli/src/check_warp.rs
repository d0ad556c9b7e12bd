//! Ground-truth check of the homography warp and of the scene's feature
//! consistency.

use nalgebra::{Vector2, Vector3};
use nsr_core::consistency::{pixel_similarity, PatchSpec};
use nsr_core::geometry::{apply_homography, homography, TangentPlane};
use nsr_core::scene::{analytic_normal, Scene};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub const MAX_REPROJECTION_PX: f64 = 1e-5;
pub const MAX_MEDIAN_FEATURE_LOSS: f64 = 1e-3;
/// Per-view medians are only judged once a view took part in this many pairs.
const MIN_VIEW_PAIRS: usize = 5;

#[derive(Debug, Clone, Copy)]
pub struct WarpCheckConfig {
    pub samples: usize,
    pub seed: u64,
    pub patch_size: usize,
    pub min_view_cos: f64,
}

impl Default for WarpCheckConfig {
    fn default() -> Self {
        Self { samples: 1000, seed: 0, patch_size: 11, min_view_cos: 0.5 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WarpCheck {
    pub pairs: usize,
    pub max_reprojection_px: f64,
    pub mean_reprojection_px: f64,
    pub feature_loss_median: f64,
    pub feature_loss_p90: f64,
    pub feature_loss_max: f64,
    /// Median feature loss of the pairs each view took part in.
    pub view_medians: Vec<Option<f64>>,
}

impl WarpCheck {
    /// Human-readable threshold breaches; empty when the check passes.
    pub fn breaches(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.max_reprojection_px <= MAX_REPROJECTION_PX) {
            out.push(format!(
                "max reprojection error {:.3e} px exceeds {MAX_REPROJECTION_PX:e} px",
                self.max_reprojection_px
            ));
        }
        if !(self.feature_loss_median <= MAX_MEDIAN_FEATURE_LOSS) {
            out.push(format!(
                "median feature loss at truth {:.3e} exceeds {MAX_MEDIAN_FEATURE_LOSS:e}",
                self.feature_loss_median
            ));
        }
        for (v, m) in self.view_medians.iter().enumerate() {
            if let Some(m) = m.filter(|m| !(*m <= MAX_MEDIAN_FEATURE_LOSS)) {
                out.push(format!("view {v}: median feature loss at truth {m:.3e} exceeds {MAX_MEDIAN_FEATURE_LOSS:e}"));
            }
        }
        out
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values[values.len() / 2]
}

fn visible_from(scene: &Scene, view: usize, p: &Vector3<f64>) -> Option<Vector2<f64>> {
    let cam = &scene.cameras[view];
    let q = cam.project(p).ok()?;
    let expected = (p - cam.center()).norm();
    let t = scene.gt_depth(view, &q)?;
    ((t - expected).abs() < 1e-6 * (1.0 + expected)).then_some(q)
}

/// Draws reference pixels on the true surface, pairs each with a random
/// source view that sees the point, and measures how far the plane-induced
/// warp of the surrounding patch lands from the direct projection, and how
/// well the features at the two projections agree.
pub fn check_warp(scene: &Scene, cfg: &WarpCheckConfig) -> Result<WarpCheck, String> {
    let shape = scene.shape.as_ref().ok_or("scene has no analytic shape to take ground truth from")?;
    let n_views = scene.n_views();
    if n_views < 2 {
        return Err("need at least two views".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut reproj_max: f64 = 0.0;
    let mut reproj_sum = 0.0;
    let mut reproj_n = 0usize;
    let mut losses = Vec::with_capacity(cfg.samples);
    let mut per_view: Vec<Vec<f64>> = vec![Vec::new(); n_views];
    let mut attempts = 0usize;
    while losses.len() < cfg.samples && attempts < cfg.samples.max(1) * 200 {
        attempts += 1;
        let r = rng.random_range(0..n_views);
        let s = (r + rng.random_range(1..n_views)) % n_views;
        let (ref_cam, src_cam) = (&scene.cameras[r], &scene.cameras[s]);
        let x = Vector2::new(
            rng.random_range(0..ref_cam.width()) as f64,
            rng.random_range(0..ref_cam.height()) as f64,
        );
        let Some(t) = scene.gt_depth(r, &x) else { continue };
        let ray = ref_cam.pixel_to_ray(&x).map_err(|e| e.to_string())?;
        let p = ray.at(t);
        let n = analytic_normal(shape, &p);
        let facing = |c: Vector3<f64>| n.dot(&(c - p).normalize());
        if facing(ref_cam.center()) < cfg.min_view_cos || facing(src_cam.center()) < cfg.min_view_cos {
            continue;
        }
        let Some(q) = visible_from(scene, s, &p) else { continue };
        // bilinear taps must all land on the object
        let taps_on_surface = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]
            .iter()
            .all(|(dx, dy)| scene.gt_depth(s, &Vector2::new(q.x.floor() + dx, q.y.floor() + dy)).is_some());
        if !taps_on_surface {
            continue;
        }
        let Some(plane) = TangentPlane::through(&p, &n) else { continue };
        let h = homography(ref_cam, src_cam, &plane).map_err(|e| e.to_string())?;
        for xi in PatchSpec::new(x, cfg.patch_size).pixels() {
            let Ok(ri) = ref_cam.pixel_to_ray(&xi) else { continue };
            let denom = plane.n.dot(&ri.v);
            if denom.abs() < 1e-9 {
                continue;
            }
            let ti = -(plane.n.dot(&ri.o) + plane.d) / denom;
            let Ok(expected) = src_cam.project(&ri.at(ti)) else { continue };
            let Some(warped) = apply_homography(&h, &xi) else { continue };
            let err = (warped - expected).norm();
            reproj_max = reproj_max.max(err);
            reproj_sum += err;
            reproj_n += 1;
        }
        let fr = scene.features[r].sample(&x).map_err(|e| e.to_string())?;
        let Ok(fs) = scene.features[s].sample(&q) else { continue };
        let loss = 1.0 - pixel_similarity(&fr, &fs);
        losses.push(loss);
        per_view[r].push(loss);
        per_view[s].push(loss);
    }
    if losses.is_empty() {
        return Err("no visible surface pairs found".into());
    }
    let pairs = losses.len();
    let feature_loss_median = median(&mut losses);
    Ok(WarpCheck {
        pairs,
        max_reprojection_px: reproj_max,
        mean_reprojection_px: reproj_sum / reproj_n.max(1) as f64,
        feature_loss_median,
        feature_loss_p90: losses[pairs * 9 / 10],
        feature_loss_max: losses[pairs - 1],
        view_medians: per_view
            .iter_mut()
            .map(|v| (v.len() >= MIN_VIEW_PAIRS).then(|| median(v)))
            .collect(),
    })
}
