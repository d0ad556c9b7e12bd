//! Feature-level multi-view consistency: feature maps, similarity metrics,
//! homography patch warping and occlusion-aware source view selection.

pub mod features;
pub mod metrics;

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Camera, GeometryError, PlaneHomography, TangentPlane};

pub use features::FeatureMap;
pub use metrics::{patch_ncc, patch_sim, patch_ssim, pixel_similarity};

#[derive(Debug, Error)]
pub enum ConsistencyError {
    #[error("pixel ({0}, {1}) lies outside the image")]
    OutOfImage(f64, f64),
    #[error("no usable source view")]
    NoUsableViews,
    #[error("invalid feature map: {0}")]
    InvalidFeatureMap(String),
    #[error("malformed feature file: {0}")]
    Parse(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    PixelSim,
    PatchSim,
    PatchNcc,
    PatchSsim,
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::PixelSim => "pixel-sim",
            LossKind::PatchSim => "patch-sim",
            LossKind::PatchNcc => "patch-ncc",
            LossKind::PatchSsim => "patch-ssim",
        }
    }

    pub fn is_patch(&self) -> bool {
        !matches!(self, LossKind::PixelSim)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('_', "-").as_str() {
            "pixel-sim" => Ok(LossKind::PixelSim),
            "patch-sim" => Ok(LossKind::PatchSim),
            "patch-ncc" => Ok(LossKind::PatchNcc),
            "patch-ssim" => Ok(LossKind::PatchSsim),
            other => Err(format!("unknown loss kind '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyConfig {
    pub loss_kind: LossKind,
    pub patch_size: usize,
    pub n_candidates: usize,
    pub top_k: usize,
    pub c1: f64,
    pub c2: f64,
    pub eps_var: f64,
    /// Views seeing the tangent plane at a cosine below this are unusable.
    pub min_view_cos: f64,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        Self {
            loss_kind: LossKind::PatchNcc,
            patch_size: 11,
            n_candidates: 10,
            top_k: 4,
            c1: 0.01,
            c2: 0.03,
            eps_var: 1e-6,
            min_view_cos: 0.5,
        }
    }
}

impl ConsistencyConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.patch_size.is_multiple_of(2) {
            return Err(format!("patch size must be odd, got {}", self.patch_size));
        }
        if self.top_k == 0 || self.top_k > self.n_candidates {
            return Err(format!(
                "need 1 <= top_k <= n_candidates, got {} and {}",
                self.top_k, self.n_candidates
            ));
        }
        if !(0.0..1.0).contains(&self.min_view_cos) {
            return Err(format!("min_view_cos must lie in [0, 1), got {}", self.min_view_cos));
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0) {
            return Err("SSIM constants must be positive".into());
        }
        Ok(())
    }

    /// Patch side used by the configured metric (1 for the pixel loss).
    pub fn effective_patch_size(&self) -> usize {
        if self.loss_kind.is_patch() {
            self.patch_size
        } else {
            1
        }
    }

    /// Similarity and its gradient with respect to the source patch.
    pub fn similarity_grad(&self, r: &[f64], s: &[f64], channels: usize, grad: &mut [f64]) -> f64 {
        match self.loss_kind {
            LossKind::PixelSim | LossKind::PatchSim => metrics::patch_sim_grad(r, s, channels, grad),
            LossKind::PatchNcc => metrics::patch_ncc_grad(r, s, channels, self.eps_var, grad),
            LossKind::PatchSsim => metrics::patch_ssim_grad(r, s, channels, self.c1, self.c2, grad),
        }
    }

    pub fn similarity(&self, r: &[f64], s: &[f64], channels: usize) -> f64 {
        match self.loss_kind {
            LossKind::PixelSim | LossKind::PatchSim => metrics::patch_sim(r, s, channels),
            LossKind::PatchNcc => metrics::patch_ncc(r, s, channels, self.eps_var),
            LossKind::PatchSsim => metrics::patch_ssim(r, s, channels, self.c1, self.c2),
        }
    }
}

/// A square patch of reference pixels around `center`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchSpec {
    pub center: Vector2<f64>,
    pub size: usize,
}

impl PatchSpec {
    pub fn new(center: Vector2<f64>, size: usize) -> Self {
        assert!(size % 2 == 1, "patch size must be odd");
        Self { center, size }
    }

    /// Integer offsets of the full grid, row by row.
    pub fn offsets(&self) -> Vec<(i32, i32)> {
        let h = (self.size / 2) as i32;
        (-h..=h).flat_map(|dy| (-h..=h).map(move |dx| (dx, dy))).collect()
    }

    pub fn pixels(&self) -> Vec<Vector2<f64>> {
        self.offsets()
            .into_iter()
            .map(|(dx, dy)| self.center + Vector2::new(dx as f64, dy as f64))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.size * self.size
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Source-image coordinates of a warped patch; `None` marks pixels that
/// leave the source image.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpedPatch {
    pub coords: Vec<Option<Vector2<f64>>>,
}

impl WarpedPatch {
    pub fn invalid_count(&self) -> usize {
        self.coords.iter().filter(|c| c.is_none()).count()
    }

    /// More than half of the pixels leaving the source image makes the patch
    /// unusable.
    pub fn usable(&self) -> bool {
        2 * self.invalid_count() <= self.coords.len()
    }
}

fn dehomogenize(y: &Vector3<f64>) -> Option<Vector2<f64>> {
    (y.z > 1e-12).then(|| Vector2::new(y.x / y.z, y.y / y.z))
}

/// Maps every reference patch pixel through the homography induced by
/// `plane`.
pub fn warp_patch(
    reference: &Camera,
    source: &Camera,
    plane: &TangentPlane,
    patch: &PatchSpec,
) -> Result<WarpedPatch, ConsistencyError> {
    let h = PlaneHomography::new(reference, source, plane)?.raw();
    let coords = patch
        .pixels()
        .iter()
        .map(|x| dehomogenize(&(h * Vector3::new(x.x, x.y, 1.0))).filter(|p| source.contains(p)))
        .collect();
    Ok(WarpedPatch { coords })
}

/// Source views ordered by the angle between the rays from the reference
/// and source centres to `point`, ties broken by view id.
pub fn candidate_views(ref_view: usize, point: &Vector3<f64>, cams: &[Camera], n: usize) -> Vec<usize> {
    let a = point - cams[ref_view].center();
    let mut scored: Vec<(f64, usize)> = cams
        .iter()
        .enumerate()
        .filter(|&(v, _)| v != ref_view)
        .map(|(v, cam)| {
            let b = point - cam.center();
            (a.cross(&b).norm().atan2(a.dot(&b)), v)
        })
        .collect();
    scored.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    scored.into_iter().take(n).map(|(_, v)| v).collect()
}

/// Outcome of the feature loss for one surface sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    /// Mean of `1 - similarity` over the selected views.
    pub loss: f64,
    /// Derivative of `loss` with respect to the plane offset `d`.
    pub d_offset: f64,
    pub candidates: Vec<usize>,
    /// `(view, loss)` of every usable candidate, in candidate order.
    pub view_losses: Vec<(usize, f64)>,
    pub selected: Vec<usize>,
}

/// Reference-side inputs of the feature loss.
#[derive(Debug, Clone, Copy)]
pub struct SurfaceSample<'a> {
    pub ref_view: usize,
    /// Reference pixel of the ray (patch centre).
    pub pixel: Vector2<f64>,
    pub point: Vector3<f64>,
    pub plane: &'a TangentPlane,
}

struct ViewLoss {
    loss: f64,
    d_offset: f64,
}

/// Per-patch losses of all usable candidate views, then the mean over the
/// `top_k` lowest (or over the `top_k` nearest views for the pixel loss).
pub fn select_and_aggregate(
    sample: &SurfaceSample<'_>,
    maps: &[FeatureMap],
    cams: &[Camera],
    cfg: &ConsistencyConfig,
) -> Result<Aggregate, ConsistencyError> {
    let ref_cam = &cams[sample.ref_view];
    let ref_map = &maps[sample.ref_view];
    let channels = ref_map.channels();
    let patch = PatchSpec::new(sample.pixel, cfg.effective_patch_size());
    let pixels = patch.pixels();
    let ref_feats: Vec<Option<Vec<f64>>> = pixels.iter().map(|x| ref_map.sample(x).ok()).collect();

    let candidates = candidate_views(sample.ref_view, &sample.point, cams, cfg.n_candidates);
    let facing = |cam: &Camera| sample.plane.n.dot(&(cam.center() - sample.point).normalize());
    let ref_cos = facing(ref_cam);
    if ref_cos.abs() < cfg.min_view_cos.max(f64::MIN_POSITIVE) {
        return Err(ConsistencyError::NoUsableViews);
    }
    let mut view_losses = Vec::new();
    let mut usable = Vec::new();
    for &v in &candidates {
        let src_cam = &cams[v];
        if src_cam.project(&sample.point).is_err() {
            continue;
        }
        // grazing views and views of the back face
        if facing(src_cam) * ref_cos.signum() < cfg.min_view_cos.max(f64::MIN_POSITIVE) {
            continue;
        }
        let ph = PlaneHomography::new(ref_cam, src_cam, sample.plane)?;
        if let Some(vl) = view_loss(&ph.raw(), &ph.d_raw_d_offset(), &pixels, &ref_feats, &maps[v], channels, cfg)
        {
            view_losses.push((v, vl.loss));
            usable.push((v, vl));
        }
    }
    if usable.is_empty() {
        return Err(ConsistencyError::NoUsableViews);
    }
    if cfg.loss_kind.is_patch() {
        usable.sort_by(|a, b| a.1.loss.total_cmp(&b.1.loss).then(a.0.cmp(&b.0)));
    }
    usable.truncate(cfg.top_k);
    let k = usable.len() as f64;
    Ok(Aggregate {
        loss: usable.iter().map(|(_, l)| l.loss).sum::<f64>() / k,
        d_offset: usable.iter().map(|(_, l)| l.d_offset).sum::<f64>() / k,
        candidates,
        view_losses,
        selected: usable.iter().map(|(v, _)| *v).collect(),
    })
}

/// Mean per-patch loss over a fixed list of views, skipping selection.
/// Views whose patch is unusable are left out of the mean.
pub fn aggregate_fixed_views(
    sample: &SurfaceSample<'_>,
    maps: &[FeatureMap],
    cams: &[Camera],
    cfg: &ConsistencyConfig,
    views: &[usize],
) -> Result<Aggregate, ConsistencyError> {
    let ref_cam = &cams[sample.ref_view];
    let ref_map = &maps[sample.ref_view];
    let patch = PatchSpec::new(sample.pixel, cfg.effective_patch_size());
    let pixels = patch.pixels();
    let ref_feats: Vec<Option<Vec<f64>>> = pixels.iter().map(|x| ref_map.sample(x).ok()).collect();
    let mut used = Vec::new();
    for &v in views {
        let ph = PlaneHomography::new(ref_cam, &cams[v], sample.plane)?;
        if let Some(vl) =
            view_loss(&ph.raw(), &ph.d_raw_d_offset(), &pixels, &ref_feats, &maps[v], ref_map.channels(), cfg)
        {
            used.push((v, vl));
        }
    }
    if used.is_empty() {
        return Err(ConsistencyError::NoUsableViews);
    }
    let k = used.len() as f64;
    Ok(Aggregate {
        loss: used.iter().map(|(_, l)| l.loss).sum::<f64>() / k,
        d_offset: used.iter().map(|(_, l)| l.d_offset).sum::<f64>() / k,
        candidates: views.to_vec(),
        view_losses: used.iter().map(|(v, l)| (*v, l.loss)).collect(),
        selected: used.iter().map(|(v, _)| *v).collect(),
    })
}

fn view_loss(
    h: &Matrix3<f64>,
    dh: &Matrix3<f64>,
    pixels: &[Vector2<f64>],
    ref_feats: &[Option<Vec<f64>>],
    map: &FeatureMap,
    channels: usize,
    cfg: &ConsistencyConfig,
) -> Option<ViewLoss> {
    let n_all = pixels.len();
    let mut r_rows = Vec::with_capacity(n_all);
    let mut s_rows = Vec::with_capacity(n_all);
    let mut ds_rows = Vec::with_capacity(n_all);
    let mut val = vec![0.0; channels];
    let mut gu = vec![0.0; channels];
    let mut gv = vec![0.0; channels];
    for (x, rf) in pixels.iter().zip(ref_feats) {
        let Some(rf) = rf else { continue };
        let xh = Vector3::new(x.x, x.y, 1.0);
        let y = h * xh;
        let Some(xs) = dehomogenize(&y) else { continue };
        if map.sample_into(&xs, &mut val, Some((&mut gu, &mut gv))).is_err() {
            continue;
        }
        let dy = dh * xh;
        let du = (dy.x - xs.x * dy.z) / y.z;
        let dv = (dy.y - xs.y * dy.z) / y.z;
        r_rows.push(rf.clone());
        s_rows.push(val.clone());
        ds_rows.push(gu.iter().zip(&gv).map(|(a, b)| a * du + b * dv).collect::<Vec<f64>>());
    }
    let n = r_rows.len();
    if 2 * (n_all - n) > n_all || n == 0 {
        return None;
    }
    let to_channel_major = |rows: &[Vec<f64>]| {
        let mut out = vec![0.0; channels * n];
        for (j, row) in rows.iter().enumerate() {
            for c in 0..channels {
                out[c * n + j] = row[c];
            }
        }
        out
    };
    let r = to_channel_major(&r_rows);
    let s = to_channel_major(&s_rows);
    let ds = to_channel_major(&ds_rows);
    let mut grad = vec![0.0; s.len()];
    let sim = cfg.similarity_grad(&r, &s, channels, &mut grad);
    let d_sim: f64 = grad.iter().zip(&ds).map(|(g, d)| g * d).sum();
    Some(ViewLoss { loss: 1.0 - sim, d_offset: -d_sim })
}
