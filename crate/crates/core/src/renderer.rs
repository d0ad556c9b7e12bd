//! Hierarchical ray sampling, SDF-based alpha compositing and first
//! zero-crossing localisation.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::field::{FieldParams, GeometryBatch, RadianceTape, SdfField};
use crate::geometry::Ray;

/// Guard used by the depth normalisation.
pub const EPS: f64 = 1e-6;
/// Below this value of `Phi_s(sdf_i)` the interval opacity is zero.
pub const PHI_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleCounts {
    pub coarse: usize,
    pub fine: usize,
}

impl Default for SampleCounts {
    fn default() -> Self {
        Self { coarse: 64, fine: 64 }
    }
}

impl SampleCounts {
    pub fn total(&self) -> usize {
        self.coarse + self.fine
    }
}

/// `Phi_s(x) = 1 / (1 + exp(-s x))`.
#[inline]
pub fn phi(s: f64, x: f64) -> f64 {
    let z = s * x;
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Opacity of the interval between two consecutive samples:
/// `max((Phi_s(sdf_i) - Phi_s(sdf_next)) / Phi_s(sdf_i), 0)`.
pub fn alpha_from_sdf(sdf_i: f64, sdf_next: f64, s: f64) -> f64 {
    alpha_with_grad(sdf_i, sdf_next, s).alpha
}

/// Interval opacity with its partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaGrad {
    pub alpha: f64,
    pub d_sdf_i: f64,
    pub d_sdf_next: f64,
    pub d_s: f64,
}

pub fn alpha_with_grad(sdf_i: f64, sdf_next: f64, s: f64) -> AlphaGrad {
    let zero = AlphaGrad { alpha: 0.0, d_sdf_i: 0.0, d_sdf_next: 0.0, d_s: 0.0 };
    let pa = phi(s, sdf_i);
    if pa < PHI_FLOOR {
        return zero;
    }
    let pb = phi(s, sdf_next);
    let ratio = pb / pa;
    let raw = 1.0 - ratio;
    if raw <= 0.0 {
        return zero;
    }
    AlphaGrad {
        alpha: raw.min(1.0),
        d_sdf_i: ratio * (1.0 - pa) * s,
        d_sdf_next: -ratio * (1.0 - pb) * s,
        d_s: ratio * ((1.0 - pa) * sdf_i - (1.0 - pb) * sdf_next),
    }
}

/// Transmittance before each interval plus the residual transmittance after
/// the last one (`alphas.len() + 1` values).
pub fn transmittance(alphas: &[f64]) -> Vec<f64> {
    let mut t = Vec::with_capacity(alphas.len() + 1);
    let mut acc = 1.0;
    t.push(acc);
    for a in alphas {
        acc *= 1.0 - a;
        t.push(acc);
    }
    t
}

/// Stratified samples: one uniform draw in each of `n` equal bins.
pub fn stratified(t_near: f64, t_far: f64, n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let step = (t_far - t_near) / n as f64;
    (0..n)
        .map(|i| t_near + step * (i as f64 + rng.random::<f64>()))
        .collect()
}

/// Inverse-CDF sampling of `n` depths from the piecewise-constant density
/// with mass `weights[i]` on `[edges[i], edges[i + 1]]`. Falls back to
/// stratified sampling over the whole span when all weights vanish.
pub fn importance_sample(edges: &[f64], weights: &[f64], n: usize, rng: &mut impl Rng) -> Vec<f64> {
    debug_assert_eq!(edges.len(), weights.len() + 1);
    let total: f64 = weights.iter().map(|w| w.max(0.0)).sum();
    let (lo, hi) = (edges[0], edges[edges.len() - 1]);
    if !(total > 1e-12) || !total.is_finite() {
        return stratified(lo, hi, n, rng);
    }
    let mut cdf = Vec::with_capacity(weights.len() + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for w in weights {
        acc += w.max(0.0) / total;
        cdf.push(acc);
    }
    let mut out = Vec::with_capacity(n);
    let mut bin = 0;
    for j in 0..n {
        let u = ((j as f64 + rng.random::<f64>()) / n as f64).min(cdf[cdf.len() - 1]);
        while bin + 1 < weights.len() && cdf[bin + 1] <= u {
            bin += 1;
        }
        // skip empty bins
        while bin + 1 < weights.len() && cdf[bin + 1] - cdf[bin] <= 0.0 {
            bin += 1;
        }
        let mass = cdf[bin + 1] - cdf[bin];
        let frac = if mass > 0.0 { ((u - cdf[bin]) / mass).clamp(0.0, 1.0) } else { 0.5 };
        out.push(edges[bin] + frac * (edges[bin + 1] - edges[bin]));
    }
    out
}

/// Compositing weights `T_i alpha_i` of the intervals between `sdfs`.
pub fn interval_weights(sdfs: &[f64], s: f64) -> Vec<f64> {
    let alphas: Vec<f64> = sdfs.windows(2).map(|w| alpha_from_sdf(w[0], w[1], s)).collect();
    let t = transmittance(&alphas);
    alphas.iter().zip(&t).map(|(a, t)| a * t).collect()
}

/// Per-ray random stream derived from a seed.
pub fn ray_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Coarse stratified depths, then fine depths importance-sampled from the
/// coarse compositing weights under sharpness `s`; merged and sorted.
pub fn sample_depths<F: SdfField + ?Sized>(
    ray: &Ray,
    field: &F,
    s: f64,
    counts: SampleCounts,
    seed: u64,
) -> Vec<f64> {
    let mut rng = ray_rng(seed);
    let coarse = stratified(ray.t_near, ray.t_far, counts.coarse, &mut rng);
    if counts.fine == 0 {
        return coarse;
    }
    let points: Vec<_> = coarse.iter().map(|&t| ray.at(t)).collect();
    let sdfs = field.sdf_batch(&points);
    let weights = interval_weights(&sdfs, s);
    let mut depths = importance_sample(&coarse, &weights, counts.fine, &mut rng);
    depths.extend_from_slice(&coarse);
    depths.sort_by(f64::total_cmp);
    depths
}

/// 64 coarse + 64 fine depths for `ray` using the learned field.
pub fn sample_ray(ray: &Ray, params: &FieldParams, seed: u64) -> Vec<f64> {
    sample_depths(ray, params, params.sharpness(), SampleCounts::default(), seed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroCrossing {
    /// Index of the sample preceding the sign change.
    pub index: usize,
    pub t: f64,
}

/// First sign change of `sdfs` along the sorted `depths`, refined by linear
/// interpolation between the two bracketing samples.
pub fn locate_zero_crossing(depths: &[f64], sdfs: &[f64]) -> Option<ZeroCrossing> {
    let index = (0..depths.len().saturating_sub(1)).find(|&i| sdfs[i] * sdfs[i + 1] < 0.0)?;
    Some(ZeroCrossing { index, t: crossing_depth(depths, sdfs, index) })
}

/// Interpolated root in bracket `index`.
pub fn crossing_depth(depths: &[f64], sdfs: &[f64], index: usize) -> f64 {
    let (s0, s1) = (sdfs[index], sdfs[index + 1]);
    let (t0, t1) = (depths[index], depths[index + 1]);
    (s0 * t1 - s1 * t0) / (s0 - s1)
}

/// `(dt*/dsdf_i, dt*/dsdf_next)` for the interpolated root.
pub fn crossing_depth_grad(depths: &[f64], sdfs: &[f64], index: usize) -> (f64, f64) {
    let (s0, s1) = (sdfs[index], sdfs[index + 1]);
    let (t0, t1) = (depths[index], depths[index + 1]);
    let den = (s0 - s1) * (s0 - s1);
    (s1 * (t0 - t1) / den, s0 * (t1 - t0) / den)
}

/// Everything produced by rendering one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderBatch {
    pub depths: Vec<f64>,
    pub sdfs: Vec<f64>,
    /// One opacity per interval (`depths.len() - 1`).
    pub alphas: Vec<f64>,
    /// Transmittance before each interval plus the residual after the last.
    pub transmittance: Vec<f64>,
    pub weights: Vec<f64>,
    pub color: Vector3<f64>,
    /// Weighted mean depth, a diagnostic.
    pub depth: f64,
    pub weight_sum: f64,
    pub zero_crossing: Option<ZeroCrossing>,
    pub surface_point: Option<Vector3<f64>>,
}

/// A field that can shade samples along a ray.
pub trait ShadingField: SdfField {
    /// SDF values and colours at `points`, all seen along direction `dir`.
    fn shade(&self, points: &[Vector3<f64>], dir: &Vector3<f64>) -> (Vec<f64>, Vec<Vector3<f64>>);

    fn sharpness(&self) -> f64;
}

impl ShadingField for FieldParams {
    fn shade(&self, points: &[Vector3<f64>], dir: &Vector3<f64>) -> (Vec<f64>, Vec<Vector3<f64>>) {
        let geo = GeometryBatch::forward(self, points, true);
        let (colors, _) =
            RadianceTape::forward(self, points, std::slice::from_ref(dir), &geo.normals, &geo.features);
        let colors = colors.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect();
        (geo.sdf, colors)
    }

    fn sharpness(&self) -> f64 {
        FieldParams::sharpness(self)
    }
}

/// Composites pre-computed samples. `colors[i]` is the radiance at the start
/// of interval `i`; residual transmittance is filled with `background`.
pub fn composite(
    depths: Vec<f64>,
    sdfs: Vec<f64>,
    colors: &[Vector3<f64>],
    s: f64,
    background: &Vector3<f64>,
    ray: &Ray,
) -> RenderBatch {
    let alphas: Vec<f64> = sdfs.windows(2).map(|w| alpha_from_sdf(w[0], w[1], s)).collect();
    let trans = transmittance(&alphas);
    let weights: Vec<f64> = alphas.iter().zip(&trans).map(|(a, t)| a * t).collect();
    let mut color = background * trans[alphas.len()];
    let mut depth_acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        color += colors[i] * *w;
        depth_acc += w * depths[i];
    }
    let weight_sum: f64 = weights.iter().sum();
    let zero_crossing = locate_zero_crossing(&depths, &sdfs);
    RenderBatch {
        depth: depth_acc / weight_sum.max(EPS),
        surface_point: zero_crossing.map(|z| ray.at(z.t)),
        depths,
        sdfs,
        alphas,
        transmittance: trans,
        weights,
        color,
        weight_sum,
        zero_crossing,
    }
}

/// Renders `ray` at the given depths.
pub fn render_at_depths<F: ShadingField + ?Sized>(
    ray: &Ray,
    field: &F,
    depths: Vec<f64>,
    background: &Vector3<f64>,
) -> RenderBatch {
    let points: Vec<_> = depths.iter().map(|&t| ray.at(t)).collect();
    let (sdfs, colors) = field.shade(&points, &ray.v);
    composite(depths, sdfs, &colors, field.sharpness(), background, ray)
}

/// Samples and renders one ray against a black background.
pub fn render<F: ShadingField + ?Sized>(ray: &Ray, field: &F, seed: u64) -> RenderBatch {
    let depths = sample_depths(ray, field, field.sharpness(), SampleCounts::default(), seed);
    render_at_depths(ray, field, depths, &Vector3::zeros())
}

/// Adjoints produced by [`composite_backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeAdjoint {
    pub alphas: Vec<f64>,
    /// Adjoint of each interval's colour (`alphas.len()` values).
    pub colors: Vec<Vector3<f64>>,
}

/// Reverse pass of the compositing sum for an adjoint `adj` on the ray
/// colour.
pub fn composite_backward(
    alphas: &[f64],
    trans: &[f64],
    colors: &[Vector3<f64>],
    background: &Vector3<f64>,
    adj: &Vector3<f64>,
) -> CompositeAdjoint {
    let m = alphas.len();
    let mut adj_alpha = vec![0.0; m];
    let mut adj_colors = vec![Vector3::zeros(); m];
    // contribution of everything behind interval j, per unit transmittance
    // after it
    let mut behind = adj.dot(background);
    for j in (0..m).rev() {
        let gc = adj.dot(&colors[j]);
        adj_alpha[j] = trans[j] * (gc - behind);
        adj_colors[j] = adj * (trans[j] * alphas[j]);
        behind = alphas[j] * gc + (1.0 - alphas[j]) * behind;
    }
    CompositeAdjoint { alphas: adj_alpha, colors: adj_colors }
}
