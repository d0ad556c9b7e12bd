//! Training loss assembly and its gradient.
//!
//! A batch is first planned (rays, sample depths, eikonal points), then
//! evaluated. The evaluation records every discrete decision it takes
//! (crossing interval, plane normal, source views) so that the same loss can
//! be re-evaluated with those decisions frozen, which is what a
//! finite-difference check needs.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::TrainConfig;
use crate::consistency::{aggregate_fixed_views, select_and_aggregate, SurfaceSample};
use crate::field::{FieldParams, GeometryAdjoint, GeometryBatch, RadianceTape};
use crate::geometry::{Ray, TangentPlane};
use crate::renderer::{
    alpha_with_grad, composite_backward, crossing_depth, crossing_depth_grad, locate_zero_crossing, sample_depths,
    transmittance, AlphaGrad,
};
use crate::scene::Scene;

/// Rays per work unit. Fixed so that results never depend on the number of
/// worker threads.
const RAY_CHUNK: usize = 8;
const EIKONAL_CHUNK: usize = 256;
const JITTER: f64 = 0.01;

/// Mean L1 colour error over rays.
pub fn color_loss(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> f64 {
    assert_eq!(pred.len(), gt.len());
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(gt).map(|(p, g)| (p - g).abs().sum()).sum::<f64>() / pred.len() as f64
}

/// Mean of `(|g| - 1)^2` over spatial gradients `g`.
pub fn eikonal_residual(grads: &[Vector3<f64>]) -> f64 {
    if grads.is_empty() {
        return 0.0;
    }
    grads.iter().map(|g| (g.norm() - 1.0).powi(2)).sum::<f64>() / grads.len() as f64
}

/// `n` points uniform in the unit ball.
pub fn ball_points(n: usize, rng: &mut impl Rng) -> Vec<Vector3<f64>> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if p.norm_squared() <= 1.0 {
            out.push(p);
        }
    }
    out
}

fn ball_gradients(params: &FieldParams, n_points: usize, seed: u64) -> Vec<Vector3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = ball_points(n_points, &mut rng);
    pts.chunks(EIKONAL_CHUNK)
        .flat_map(|c| {
            let b = GeometryBatch::forward(params, c, true);
            (0..c.len()).map(|i| b.normal(i)).collect::<Vec<_>>()
        })
        .collect()
}

/// Eikonal loss of the field at `n_points` points uniform in the unit ball.
pub fn eikonal_loss(params: &FieldParams, n_points: usize, seed: u64) -> f64 {
    eikonal_residual(&ball_gradients(params, n_points, seed))
}

/// Mean of `| |grad f| - 1 |` at `n_points` points uniform in the unit ball.
pub fn eikonal_deviation(params: &FieldParams, n_points: usize, seed: u64) -> f64 {
    let grads = ball_gradients(params, n_points, seed);
    grads.iter().map(|g| (g.norm() - 1.0).abs()).sum::<f64>() / grads.len().max(1) as f64
}

/// One training ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RaySpec {
    pub view: usize,
    pub pixel: (usize, usize),
    pub target: Vector3<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RayPlan {
    pub spec: RaySpec,
    /// `None` when the ray misses the unit sphere.
    pub ray: Option<Ray>,
    pub depths: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchPlan {
    pub rays: Vec<RayPlan>,
    pub eikonal_points: Vec<Vector3<f64>>,
}

/// Discrete choices taken while evaluating one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RayDecision {
    pub view: usize,
    pub crossing: Option<usize>,
    pub normal: Option<Vector3<f64>>,
    pub views: Option<Vec<usize>>,
    /// Candidate views whose warped patch was usable, selected or not.
    pub usable: Option<Vec<usize>>,
}

/// Loss components of one evaluated batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub color: f64,
    pub eikonal: f64,
    pub feature: f64,
    pub total: f64,
    pub crossing_frac: f64,
    pub feature_rays: usize,
}

pub(crate) fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draws the rays of training step `step` uniformly over all pixels of all
/// views, samples their depths and picks the eikonal points.
pub fn plan_batch(params: &FieldParams, scene: &Scene, cfg: &TrainConfig, step: usize) -> BatchPlan {
    let step_seed = mix(cfg.seed, step as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(step_seed);
    let specs: Vec<RaySpec> = (0..cfg.rays_per_batch)
        .map(|i| {
            let view = rng.random_range(0..scene.n_views());
            let image = &scene.images[view];
            let pixel = (rng.random_range(0..image.width), rng.random_range(0..image.height));
            RaySpec { view, pixel, target: image.pixel(pixel.0, pixel.1), seed: mix(step_seed, i as u64 + 1) }
        })
        .collect();
    let s = params.sharpness();
    let rays: Vec<RayPlan> = specs
        .into_par_iter()
        .with_min_len(RAY_CHUNK)
        .map(|spec| {
            let px = Vector2::new(spec.pixel.0 as f64, spec.pixel.1 as f64);
            let ray = scene.cameras[spec.view].pixel_to_ray(&px).ok();
            let depths = ray.map(|r| sample_depths(&r, params, s, cfg.samples, spec.seed)).unwrap_or_default();
            RayPlan { spec, ray, depths }
        })
        .collect();
    let n_uniform = cfg.eikonal_points.div_ceil(2);
    let mut eikonal_points = ball_points(n_uniform, &mut rng);
    let hitting: Vec<&RayPlan> = rays.iter().filter(|r| r.ray.is_some()).collect();
    let jitter = Normal::new(0.0, JITTER).unwrap();
    while eikonal_points.len() < cfg.eikonal_points {
        if hitting.is_empty() {
            eikonal_points.extend(ball_points(1, &mut rng));
            continue;
        }
        let plan = hitting[rng.random_range(0..hitting.len())];
        let t = plan.depths[rng.random_range(0..plan.depths.len())];
        let p = plan.ray.unwrap().at(t);
        let offset = Vector3::new(jitter.sample(&mut rng), jitter.sample(&mut rng), jitter.sample(&mut rng));
        eikonal_points.push(p + offset);
    }
    BatchPlan { rays, eikonal_points }
}

struct FeatureHit {
    index: usize,
    loss: f64,
    /// d(feature loss)/d(t*) times dt*/dsdf for both bracketing samples.
    d_sdf: (f64, f64),
}

struct RayState {
    offset: usize,
    len: usize,
    pred: Vector3<f64>,
    target: Vector3<f64>,
    alpha: Vec<AlphaGrad>,
    trans: Vec<f64>,
    feature: Option<FeatureHit>,
    crossing: bool,
}

struct ChunkState {
    geo: Option<GeometryBatch>,
    rad: Option<RadianceTape>,
    colors: Vec<f64>,
    rays: Vec<RayState>,
    decisions: Vec<RayDecision>,
}

/// Evaluates the training loss of `plan`. With `frozen`, the recorded
/// decisions replace crossing search, plane normals and view selection.
/// With `grad`, the parameter gradient is written into it.
pub fn evaluate(
    params: &FieldParams,
    scene: &Scene,
    cfg: &TrainConfig,
    plan: &BatchPlan,
    frozen: Option<&[RayDecision]>,
    grad: Option<&mut [f64]>,
) -> (LossParts, Vec<RayDecision>) {
    let s = params.sharpness();
    let use_features = cfg.lambda2 > 0.0;
    let chunks: Vec<(usize, &[RayPlan])> =
        plan.rays.chunks(RAY_CHUNK).enumerate().map(|(i, c)| (i * RAY_CHUNK, c)).collect();
    let mut states: Vec<ChunkState> = chunks
        .par_iter()
        .map(|&(first, rays)| {
            let frozen = frozen.map(|f| &f[first..first + rays.len()]);
            forward_chunk(params, scene, cfg, rays, frozen, s, use_features)
        })
        .collect();

    let n_rays = plan.rays.len().max(1) as f64;
    let mut color_sum = 0.0;
    let mut feat_sum = 0.0;
    let mut n_feat = 0usize;
    let mut n_cross = 0usize;
    for st in &states {
        for r in &st.rays {
            color_sum += (r.pred - r.target).abs().sum();
            n_cross += usize::from(r.crossing);
            if let Some(f) = &r.feature {
                feat_sum += f.loss;
                n_feat += 1;
            }
        }
    }
    let color = color_sum / n_rays;
    let feature = if n_feat > 0 { feat_sum / n_feat as f64 } else { 0.0 };

    let eik_chunks: Vec<&[Vector3<f64>]> = plan.eikonal_points.chunks(EIKONAL_CHUNK).collect();
    let eik_batches: Vec<GeometryBatch> =
        eik_chunks.par_iter().map(|pts| GeometryBatch::forward(params, pts, true)).collect();
    let n_eik = plan.eikonal_points.len().max(1) as f64;
    let eik_sum: f64 = eik_batches
        .iter()
        .map(|b| (0..b.len()).map(|i| (b.normal(i).norm() - 1.0).powi(2)).sum::<f64>())
        .sum();
    let eikonal = eik_sum / n_eik;

    let parts = LossParts {
        color,
        eikonal,
        feature,
        total: color + cfg.lambda1 * eikonal + cfg.lambda2 * feature,
        crossing_frac: n_cross as f64 / n_rays,
        feature_rays: n_feat,
    };
    let decisions: Vec<RayDecision> = states.iter_mut().flat_map(|s| std::mem::take(&mut s.decisions)).collect();

    if let Some(grad) = grad {
        grad.fill(0.0);
        let feat_scale = if n_feat > 0 { cfg.lambda2 / n_feat as f64 } else { 0.0 };
        let color_scale = 1.0 / n_rays;
        let partials: Vec<Vec<f64>> = states
            .par_iter_mut()
            .map(|st| backward_chunk(params, st, color_scale, feat_scale, &scene.background, s))
            .collect();
        let eik_scale = cfg.lambda1 / n_eik;
        let eik_partials: Vec<Vec<f64>> = eik_batches
            .into_par_iter()
            .map(|mut b| {
                let mut g = params.zero_grad();
                let adj: Vec<f64> = (0..b.len())
                    .flat_map(|i| {
                        let n = b.normal(i);
                        let norm = n.norm();
                        let k = if norm > 0.0 { eik_scale * 2.0 * (norm - 1.0) / norm } else { 0.0 };
                        [k * n.x, k * n.y, k * n.z]
                    })
                    .collect();
                b.tape
                    .backward(params, GeometryAdjoint { normals: Some(&adj), ..Default::default() }, &mut g)
                    .expect("fresh tape");
                g
            })
            .collect();
        for g in partials.iter().chain(&eik_partials) {
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
    }
    (parts, decisions)
}

fn forward_chunk(
    params: &FieldParams,
    scene: &Scene,
    cfg: &TrainConfig,
    rays: &[RayPlan],
    frozen: Option<&[RayDecision]>,
    s: f64,
    use_features: bool,
) -> ChunkState {
    let mut points = Vec::new();
    let mut dirs = Vec::new();
    let mut spans = Vec::with_capacity(rays.len());
    for plan in rays {
        let offset = points.len();
        if let Some(ray) = &plan.ray {
            for &t in &plan.depths {
                points.push(ray.at(t));
                dirs.push(ray.v);
            }
        }
        spans.push((offset, points.len() - offset));
    }
    let (geo, rad, colors) = if points.is_empty() {
        (None, None, Vec::new())
    } else {
        let geo = GeometryBatch::forward(params, &points, true);
        let (colors, rad) = RadianceTape::forward(params, &points, &dirs, &geo.normals, &geo.features);
        (Some(geo), Some(rad), colors)
    };

    let mut states = Vec::with_capacity(rays.len());
    let mut decisions = Vec::with_capacity(rays.len());
    // (ray index, crossing index, t*) of rays that need a plane normal
    let mut crossings = Vec::new();
    for (k, (plan, &(offset, len))) in rays.iter().zip(&spans).enumerate() {
        let mut state = RayState {
            offset,
            len,
            pred: scene.background,
            target: plan.spec.target,
            alpha: Vec::new(),
            trans: Vec::new(),
            feature: None,
            crossing: false,
        };
        let mut decision = RayDecision { view: plan.spec.view, crossing: None, normal: None, views: None, usable: None };
        if let (Some(geo), Some(ray)) = (&geo, &plan.ray) {
            let sdf = &geo.sdf[offset..offset + len];
            state.alpha = sdf.windows(2).map(|w| alpha_with_grad(w[0], w[1], s)).collect();
            let alphas: Vec<f64> = state.alpha.iter().map(|a| a.alpha).collect();
            state.trans = transmittance(&alphas);
            let mut c = scene.background * state.trans[alphas.len()];
            for (j, a) in alphas.iter().enumerate() {
                let row = &colors[3 * (offset + j)..3 * (offset + j) + 3];
                c += Vector3::new(row[0], row[1], row[2]) * (state.trans[j] * a);
            }
            state.pred = c;
            let index = match frozen {
                Some(f) => f[k].crossing,
                None => locate_zero_crossing(&plan.depths, sdf).map(|z| z.index),
            };
            if let Some(i) = index {
                state.crossing = true;
                decision.crossing = Some(i);
                let t = crossing_depth(&plan.depths, sdf, i);
                if use_features {
                    crossings.push((k, i, ray.at(t)));
                }
            }
        }
        states.push(state);
        decisions.push(decision);
    }

    if !crossings.is_empty() {
        let normals: Vec<Vector3<f64>> = match frozen {
            Some(f) => crossings.iter().map(|&(k, _, _)| f[k].normal.unwrap_or(Vector3::z())).collect(),
            None => {
                let pts: Vec<Vector3<f64>> = crossings.iter().map(|c| c.2).collect();
                let b = GeometryBatch::forward(params, &pts, true);
                (0..pts.len()).map(|i| b.normal(i).try_normalize(1e-12).unwrap_or(Vector3::z())).collect()
            }
        };
        let sdf_all = &geo.as_ref().unwrap().sdf;
        for (&(k, i, point), n) in crossings.iter().zip(normals) {
            decisions[k].normal = Some(n);
            let plan = &rays[k];
            let ray = plan.ray.unwrap();
            let Some(plane) = TangentPlane::through(&point, &n) else { continue };
            let sample = SurfaceSample {
                ref_view: plan.spec.view,
                pixel: Vector2::new(plan.spec.pixel.0 as f64, plan.spec.pixel.1 as f64),
                point,
                plane: &plane,
            };
            let agg = match frozen.and_then(|f| f[k].views.as_ref()) {
                Some(views) => aggregate_fixed_views(&sample, &scene.features, &scene.cameras, &cfg.consistency, views),
                None => select_and_aggregate(&sample, &scene.features, &scene.cameras, &cfg.consistency),
            };
            let Ok(agg) = agg else { continue };
            decisions[k].views = Some(agg.selected.clone());
            decisions[k].usable = Some(agg.view_losses.iter().map(|&(v, _)| v).collect());
            let (offset, len) = spans[k];
            let sdf = &sdf_all[offset..offset + len];
            let (g0, g1) = crossing_depth_grad(&plan.depths, sdf, i);
            // d = -n . (o + t v)
            let d_t = agg.d_offset * -n.dot(&ray.v);
            states[k].feature = Some(FeatureHit { index: i, loss: agg.loss, d_sdf: (d_t * g0, d_t * g1) });
        }
    }
    ChunkState { geo, rad, colors, rays: states, decisions }
}

fn backward_chunk(
    params: &FieldParams,
    st: &mut ChunkState,
    color_scale: f64,
    feat_scale: f64,
    background: &Vector3<f64>,
    s: f64,
) -> Vec<f64> {
    let mut grad = params.zero_grad();
    let (Some(geo), Some(rad)) = (st.geo.as_mut(), st.rad.as_mut()) else {
        return grad;
    };
    let b = geo.sdf.len();
    let mut adj_sdf = vec![0.0; b];
    let mut adj_colors = vec![0.0; 3 * b];
    let mut adj_s = 0.0;
    for r in &st.rays {
        if r.len == 0 {
            continue;
        }
        let adj_c = (r.pred - r.target).map(|x| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 }) * color_scale;
        let alphas: Vec<f64> = r.alpha.iter().map(|a| a.alpha).collect();
        let colors: Vec<Vector3<f64>> = (0..alphas.len())
            .map(|j| {
                let row = &st.colors[3 * (r.offset + j)..3 * (r.offset + j) + 3];
                Vector3::new(row[0], row[1], row[2])
            })
            .collect();
        let back = composite_backward(&alphas, &r.trans, &colors, background, &adj_c);
        for (j, (ga, ag)) in back.alphas.iter().zip(&r.alpha).enumerate() {
            adj_sdf[r.offset + j] += ga * ag.d_sdf_i;
            adj_sdf[r.offset + j + 1] += ga * ag.d_sdf_next;
            adj_s += ga * ag.d_s;
            let row = &mut adj_colors[3 * (r.offset + j)..3 * (r.offset + j) + 3];
            row[0] += back.colors[j].x;
            row[1] += back.colors[j].y;
            row[2] += back.colors[j].z;
        }
        if let Some(f) = &r.feature {
            adj_sdf[r.offset + f.index] += feat_scale * f.d_sdf.0;
            adj_sdf[r.offset + f.index + 1] += feat_scale * f.d_sdf.1;
        }
    }
    let input_adj = rad.backward(params, &adj_colors, &mut grad).expect("fresh tape");
    geo.tape
        .backward(
            params,
            GeometryAdjoint {
                sdf: Some(&adj_sdf),
                features: Some(&input_adj.features),
                normals: Some(&input_adj.normals),
            },
            &mut grad,
        )
        .expect("fresh tape");
    grad[params.layout().gamma()] += adj_s * s;
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn color_loss_examples() {
        let c = Vector3::new(0.2, 0.5, 0.7);
        assert_eq!(color_loss(&[c], &[c]), 0.0);
        let pred = Vector3::new(0.6, 0.3, 0.9);
        let gt = pred - Vector3::new(0.1, -0.2, 0.3);
        assert!((color_loss(&[pred], &[gt]) - 0.6).abs() < 1e-12);
        let a = [Vector3::new(0.1, 0.2, 0.3), Vector3::new(0.9, 0.1, 0.4)];
        let b = [Vector3::new(0.3, 0.2, 0.1), Vector3::new(0.5, 0.2, 0.4)];
        let doubled: Vec<_> = a.iter().zip(&b).map(|(x, y)| y + (x - y) * 2.0).collect();
        assert!((color_loss(&doubled, &b) - 2.0 * color_loss(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn eikonal_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = ball_points(1000, &mut rng);
        let sphere: Vec<_> = pts.iter().filter(|p| p.norm() > 1e-6).map(|p| p.normalize()).collect();
        assert!(eikonal_residual(&sphere) < 1e-12);
        let scaled: Vec<_> = sphere.iter().map(|g| g * 2.0).collect();
        assert!((eikonal_residual(&scaled) - 1.0).abs() < 1e-12);
        let params = FieldParams::new(crate::field::FieldArch::tiny(), 3);
        assert!(eikonal_loss(&params, 100, 2) >= 0.0);
    }
}
