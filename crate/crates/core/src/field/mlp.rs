//! Batched forward/backward passes for the two networks.
//!
//! Activations are stored as row-major `rows x width` matrices. With tangents
//! enabled, the geometry batch holds `4B` rows: `B` primal rows followed by
//! three blocks of `B` rows carrying the derivatives with respect to the x, y
//! and z input coordinates.

use nalgebra::Vector3;

use super::encoding::{encode_point_into, encoded_len};
use super::{DenseRef, FieldError, FieldParams, SOFTPLUS_BETA};

/// `c (m x n) = a (m x k) * w^T`, with `w` stored row-major as `n x k`.
fn matmul_wt(m: usize, k: usize, n: usize, a: &[f64], w: &[f64], c: &mut [f64]) {
    debug_assert!(a.len() >= m * k && w.len() >= n * k && c.len() >= m * n);
    if m == 0 {
        return;
    }
    // SAFETY: the slices cover the strided extents asserted above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            w.as_ptr(),
            1,
            k as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c (m x k) = a (m x n) * w (n x k)`.
fn matmul_w(m: usize, n: usize, k: usize, a: &[f64], w: &[f64], c: &mut [f64]) {
    debug_assert!(a.len() >= m * n && w.len() >= n * k && c.len() >= m * k);
    if m == 0 {
        return;
    }
    // SAFETY: see above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            n,
            k,
            1.0,
            a.as_ptr(),
            n as isize,
            1,
            w.as_ptr(),
            k as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            k as isize,
            1,
        );
    }
}

/// `g (n x k) += a^T x` for `a: m x n`, `x: m x k`.
fn accumulate_at_x(m: usize, n: usize, k: usize, a: &[f64], x: &[f64], g: &mut [f64]) {
    debug_assert!(a.len() >= m * n && x.len() >= m * k && g.len() >= n * k);
    if m == 0 {
        return;
    }
    // SAFETY: see above.
    unsafe {
        matrixmultiply::dgemm(
            n,
            m,
            k,
            1.0,
            a.as_ptr(),
            1,
            n as isize,
            x.as_ptr(),
            k as isize,
            1,
            1.0,
            g.as_mut_ptr(),
            k as isize,
            1,
        );
    }
}

fn add_column_sums(rows: usize, cols: usize, a: &[f64], g: &mut [f64]) {
    for row in a[..rows * cols].chunks_exact(cols) {
        for (gj, x) in g.iter_mut().zip(row) {
            *gj += x;
        }
    }
}

/// Softplus with sharpness `beta` and its derivative `sigmoid(beta z)`.
#[inline]
fn softplus_and_slope(z: f64) -> (f64, f64) {
    let bz = SOFTPLUS_BETA * z;
    if bz > 0.0 {
        let e = (-bz).exp();
        (z + e.ln_1p() / SOFTPLUS_BETA, 1.0 / (1.0 + e))
    } else {
        let e = bz.exp();
        (e.ln_1p() / SOFTPLUS_BETA, e / (1.0 + e))
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn layer_weights<'a>(params: &'a FieldParams, layer: &DenseRef) -> (&'a [f64], &'a [f64]) {
    let w = &params.values[layer.weight..layer.weight + layer.inputs * layer.outputs];
    let b = &params.values[layer.bias..layer.bias + layer.outputs];
    (w, b)
}

/// Recorded activations of one geometry forward pass.
#[derive(Debug, Clone)]
pub struct GeometryTape {
    batch: usize,
    tangents: bool,
    /// Input matrix of every linear layer (post skip concatenation).
    inputs: Vec<Vec<f64>>,
    /// `sigmoid(beta z)` of each hidden layer, primal rows only.
    slopes: Vec<Vec<f64>>,
    /// Tangent pre-activations of each hidden layer (`3B` rows).
    tangent_pre: Vec<Vec<f64>>,
    consumed: bool,
}

/// Output adjoints fed to [`GeometryTape::backward`].
#[derive(Debug, Clone, Copy, Default)]
pub struct GeometryAdjoint<'a> {
    /// `B` values.
    pub sdf: Option<&'a [f64]>,
    /// `B x F` values.
    pub features: Option<&'a [f64]>,
    /// `B x 3` values.
    pub normals: Option<&'a [f64]>,
}

/// Result of a batched geometry evaluation.
#[derive(Debug, Clone)]
pub struct GeometryBatch {
    pub sdf: Vec<f64>,
    /// `B x F`, row-major.
    pub features: Vec<f64>,
    /// `B x 3`, row-major; empty when evaluated without tangents.
    pub normals: Vec<f64>,
    pub tape: GeometryTape,
}

impl GeometryBatch {
    pub fn forward(params: &FieldParams, points: &[Vector3<f64>], tangents: bool) -> Self {
        let arch = params.arch();
        let layers = params.layout().geometry();
        let b = points.len();
        let blocks = if tangents { 4 } else { 1 };
        let rows = blocks * b;
        let d0 = encoded_len(3, arch.position_frequencies);

        let mut encoded = vec![0.0; rows * d0];
        {
            let (primal, rest) = encoded.split_at_mut(b * d0);
            let (tx, rest) = rest.split_at_mut(if tangents { b * d0 } else { 0 });
            let (ty, tz) = rest.split_at_mut(if tangents { b * d0 } else { 0 });
            for (i, p) in points.iter().enumerate() {
                let row = i * d0..(i + 1) * d0;
                let t = if tangents {
                    Some([&mut tx[row.clone()], &mut ty[row.clone()], &mut tz[row.clone()]])
                } else {
                    None
                };
                encode_point_into(&[p.x, p.y, p.z], arch.position_frequencies, &mut primal[row], t);
            }
        }

        let n_layers = layers.len();
        let mut tape = GeometryTape {
            batch: b,
            tangents,
            inputs: Vec::with_capacity(n_layers),
            slopes: Vec::with_capacity(n_layers - 1),
            tangent_pre: Vec::with_capacity(n_layers - 1),
            consumed: false,
        };
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        let mut current = encoded.clone();
        let mut current_width = d0;
        for (l, layer) in layers.iter().enumerate() {
            let input = if Some(l) == arch.geometry_skip {
                let width = current_width + d0;
                let mut cat = vec![0.0; rows * width];
                for r in 0..rows {
                    let dst = &mut cat[r * width..(r + 1) * width];
                    for (d, s) in dst[..current_width]
                        .iter_mut()
                        .zip(&current[r * current_width..(r + 1) * current_width])
                    {
                        *d = s * inv_sqrt2;
                    }
                    for (d, s) in dst[current_width..].iter_mut().zip(&encoded[r * d0..(r + 1) * d0]) {
                        *d = s * inv_sqrt2;
                    }
                }
                cat
            } else {
                std::mem::take(&mut current)
            };
            debug_assert_eq!(input.len(), rows * layer.inputs);
            let (w, bias) = layer_weights(params, layer);
            let out = layer.outputs;
            let mut z = vec![0.0; rows * out];
            matmul_wt(rows, layer.inputs, out, &input, w, &mut z);
            for row in z[..b * out].chunks_exact_mut(out) {
                for (x, bj) in row.iter_mut().zip(bias) {
                    *x += bj;
                }
            }
            if l + 1 == n_layers {
                let mut sdf = Vec::with_capacity(b);
                let mut features = Vec::with_capacity(b * (out - 1));
                for row in z[..b * out].chunks_exact(out) {
                    sdf.push(row[0]);
                    features.extend_from_slice(&row[1..]);
                }
                let mut normals = Vec::new();
                if tangents {
                    normals = vec![0.0; b * 3];
                    let w0 = &w[..layer.inputs];
                    for k in 0..3 {
                        for i in 0..b {
                            let r = (k + 1) * b + i;
                            let x = &input[r * layer.inputs..(r + 1) * layer.inputs];
                            normals[i * 3 + k] = x.iter().zip(w0).map(|(a, c)| a * c).sum();
                        }
                    }
                }
                tape.inputs.push(input);
                return Self { sdf, features, normals, tape };
            }
            let mut slope = vec![0.0; b * out];
            for (zv, sv) in z[..b * out].iter_mut().zip(slope.iter_mut()) {
                let (a, s) = softplus_and_slope(*zv);
                *zv = a;
                *sv = s;
            }
            let tangent_pre = if tangents { z[b * out..].to_vec() } else { Vec::new() };
            if tangents {
                for k in 0..3 {
                    let block = &mut z[(k + 1) * b * out..(k + 2) * b * out];
                    for (t, s) in block.iter_mut().zip(&slope) {
                        *t *= s;
                    }
                }
            }
            tape.inputs.push(input);
            tape.slopes.push(slope);
            tape.tangent_pre.push(tangent_pre);
            current = z;
            current_width = out;
        }
        unreachable!("geometry network has an output layer")
    }

    pub fn len(&self) -> usize {
        self.sdf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sdf.is_empty()
    }

    pub fn normal(&self, i: usize) -> Vector3<f64> {
        Vector3::new(self.normals[3 * i], self.normals[3 * i + 1], self.normals[3 * i + 2])
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        let f = self.features.len() / self.sdf.len().max(1);
        &self.features[i * f..(i + 1) * f]
    }
}

impl GeometryTape {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Accumulates the parameter gradient of `sum(adj . outputs)` into `grad`.
    pub fn backward(
        &mut self,
        params: &FieldParams,
        adjoint: GeometryAdjoint<'_>,
        grad: &mut [f64],
    ) -> Result<(), FieldError> {
        if self.consumed {
            return Err(FieldError::TapeConsumed);
        }
        self.consumed = true;
        let b = self.batch;
        let arch = params.arch();
        let layers = params.layout().geometry();
        let n_layers = layers.len();
        let f = arch.feature_dim;
        if grad.len() != params.len() {
            return Err(FieldError::Shape("gradient length".into()));
        }
        if adjoint.sdf.is_some_and(|a| a.len() != b)
            || adjoint.features.is_some_and(|a| a.len() != b * f)
            || adjoint.normals.is_some_and(|a| a.len() != b * 3)
        {
            return Err(FieldError::Shape("geometry output adjoint".into()));
        }
        if adjoint.normals.is_some() && !self.tangents {
            return Err(FieldError::Shape("normal adjoint needs a tangent tape".into()));
        }
        let use_tangents = self.tangents && adjoint.normals.is_some();
        let blocks = if use_tangents { 4 } else { 1 };
        let rows = blocks * b;

        // output layer
        let last = &layers[n_layers - 1];
        let out = last.outputs;
        let mut adj_out = vec![0.0; b * out];
        for i in 0..b {
            if let Some(s) = adjoint.sdf {
                adj_out[i * out] = s[i];
            }
            if let Some(af) = adjoint.features {
                adj_out[i * out + 1..(i + 1) * out].copy_from_slice(&af[i * f..(i + 1) * f]);
            }
        }
        let input = &self.inputs[n_layers - 1];
        let width = last.inputs;
        let (w, _) = layer_weights(params, last);
        {
            let gw = &mut grad[last.weight..last.weight + out * width];
            accumulate_at_x(b, out, width, &adj_out, input, gw);
        }
        add_column_sums(b, out, &adj_out, &mut grad[last.bias..last.bias + out]);
        let mut adj_x = vec![0.0; rows * width];
        matmul_w(b, out, width, &adj_out, w, &mut adj_x[..b * width]);
        if use_tangents {
            let an = adjoint.normals.unwrap();
            let w0 = &w[..width];
            let mut gw0 = vec![0.0; width];
            for k in 0..3 {
                for i in 0..b {
                    let a = an[i * 3 + k];
                    if a == 0.0 {
                        continue;
                    }
                    let r = (k + 1) * b + i;
                    let x = &input[r * width..(r + 1) * width];
                    for (g, xv) in gw0.iter_mut().zip(x) {
                        *g += a * xv;
                    }
                    for (dst, wv) in adj_x[r * width..(r + 1) * width].iter_mut().zip(w0) {
                        *dst = a * wv;
                    }
                }
            }
            for (g, v) in grad[last.weight..last.weight + width].iter_mut().zip(&gw0) {
                *g += v;
            }
        }

        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        for l in (0..n_layers - 1).rev() {
            let layer = &layers[l];
            let out = layer.outputs;
            // adjoint of this layer's activation, extracted from the next input
            let next_width = layers[l + 1].inputs;
            let adj_act: Vec<f64> = if Some(l + 1) == arch.geometry_skip {
                let mut a = vec![0.0; rows * out];
                for r in 0..rows {
                    for (d, s) in a[r * out..(r + 1) * out]
                        .iter_mut()
                        .zip(&adj_x[r * next_width..r * next_width + out])
                    {
                        *d = s * inv_sqrt2;
                    }
                }
                a
            } else {
                std::mem::take(&mut adj_x)
            };
            let slope = &self.slopes[l];
            let mut adj_z = adj_act;
            if use_tangents {
                let tpre = &self.tangent_pre[l];
                for i in 0..b * out {
                    let s = slope[i];
                    let curv = SOFTPLUS_BETA * s * (1.0 - s);
                    let mut extra = 0.0;
                    for k in 0..3 {
                        let idx = (k + 1) * b * out + i;
                        extra += adj_z[idx] * tpre[k * b * out + i];
                        adj_z[idx] *= s;
                    }
                    adj_z[i] = adj_z[i] * s + curv * extra;
                }
            } else {
                for (a, s) in adj_z[..b * out].iter_mut().zip(slope) {
                    *a *= s;
                }
            }
            let input = &self.inputs[l];
            let width = layer.inputs;
            let (w, _) = layer_weights(params, layer);
            // the tangent rows of a non-tangent pass are simply absent
            let input_rows = &input[..rows * width];
            accumulate_at_x(
                rows,
                out,
                width,
                &adj_z,
                input_rows,
                &mut grad[layer.weight..layer.weight + out * width],
            );
            add_column_sums(b, out, &adj_z, &mut grad[layer.bias..layer.bias + out]);
            if l > 0 {
                adj_x = vec![0.0; rows * width];
                matmul_w(rows, out, width, &adj_z, w, &mut adj_x);
            }
        }
        self.inputs.clear();
        self.slopes.clear();
        self.tangent_pre.clear();
        Ok(())
    }
}

/// Recorded activations of one radiance forward pass.
#[derive(Debug, Clone)]
pub struct RadianceTape {
    batch: usize,
    inputs: Vec<Vec<f64>>,
    colors: Vec<f64>,
    consumed: bool,
}

/// Adjoints of the radiance inputs that depend on the geometry network.
#[derive(Debug, Clone, Default)]
pub struct RadianceInputAdjoint {
    /// `B x 3`.
    pub normals: Vec<f64>,
    /// `B x F`.
    pub features: Vec<f64>,
}

impl RadianceTape {
    /// Evaluates colours for `B` samples. `dirs` holds either one direction
    /// per sample or a single direction shared by all samples.
    pub fn forward(
        params: &FieldParams,
        points: &[Vector3<f64>],
        dirs: &[Vector3<f64>],
        normals: &[f64],
        features: &[f64],
    ) -> (Vec<f64>, Self) {
        let arch = params.arch();
        let layers = params.layout().radiance();
        let b = points.len();
        let f = arch.feature_dim;
        let nd = arch.direction_frequencies;
        let d_enc = encoded_len(3, nd);
        let d_in = arch.radiance_input_dim();
        assert!(dirs.len() == b || dirs.len() == 1, "direction count");
        assert_eq!(normals.len(), 3 * b);
        assert_eq!(features.len(), f * b);
        let mut x = vec![0.0; b * d_in];
        let mut dir_code = vec![0.0; d_enc];
        for i in 0..b {
            let row = &mut x[i * d_in..(i + 1) * d_in];
            let p = points[i];
            row[..3].copy_from_slice(&[p.x, p.y, p.z]);
            if i == 0 || dirs.len() > 1 {
                let v = dirs[if dirs.len() > 1 { i } else { 0 }];
                encode_point_into(&[v.x, v.y, v.z], nd, &mut dir_code, None);
            }
            row[3..3 + d_enc].copy_from_slice(&dir_code);
            row[3 + d_enc..6 + d_enc].copy_from_slice(&normals[3 * i..3 * i + 3]);
            row[6 + d_enc..].copy_from_slice(&features[i * f..(i + 1) * f]);
        }
        let mut tape = RadianceTape { batch: b, inputs: Vec::new(), colors: Vec::new(), consumed: false };
        let n_layers = layers.len();
        for (l, layer) in layers.iter().enumerate() {
            let (w, bias) = layer_weights(params, layer);
            let out = layer.outputs;
            let mut z = vec![0.0; b * out];
            matmul_wt(b, layer.inputs, out, &x, w, &mut z);
            let last = l + 1 == n_layers;
            for row in z.chunks_exact_mut(out) {
                for (v, bj) in row.iter_mut().zip(bias) {
                    let pre = *v + bj;
                    *v = if last { sigmoid(pre) } else { pre.max(0.0) };
                }
            }
            tape.inputs.push(std::mem::replace(&mut x, z));
        }
        tape.colors = x.clone();
        (x, tape)
    }

    /// Accumulates parameter gradients of `sum(adj . colors)` and returns the
    /// adjoints of the normal and feature inputs.
    pub fn backward(
        &mut self,
        params: &FieldParams,
        adj_colors: &[f64],
        grad: &mut [f64],
    ) -> Result<RadianceInputAdjoint, FieldError> {
        if self.consumed {
            return Err(FieldError::TapeConsumed);
        }
        self.consumed = true;
        let b = self.batch;
        if adj_colors.len() != 3 * b {
            return Err(FieldError::Shape("colour adjoint".into()));
        }
        let arch = params.arch();
        let layers = params.layout().radiance();
        let n_layers = layers.len();
        let mut adj: Vec<f64> = adj_colors
            .iter()
            .zip(&self.colors)
            .map(|(a, c)| a * c * (1.0 - c))
            .collect();
        let mut adj_input = Vec::new();
        for l in (0..n_layers).rev() {
            let layer = &layers[l];
            let input = &self.inputs[l];
            let (w, _) = layer_weights(params, layer);
            let (out, width) = (layer.outputs, layer.inputs);
            if l + 1 < n_layers {
                // relu mask from this layer's activation (next layer's input)
                let act = &self.inputs[l + 1];
                for (a, v) in adj.iter_mut().zip(act) {
                    if *v <= 0.0 {
                        *a = 0.0;
                    }
                }
            }
            accumulate_at_x(b, out, width, &adj, input, &mut grad[layer.weight..layer.weight + out * width]);
            add_column_sums(b, out, &adj, &mut grad[layer.bias..layer.bias + out]);
            let mut next = vec![0.0; b * width];
            matmul_w(b, out, width, &adj, w, &mut next);
            if l == 0 {
                adj_input = next;
            } else {
                adj = next;
            }
        }
        let d_enc = encoded_len(3, arch.direction_frequencies);
        let d_in = arch.radiance_input_dim();
        let f = arch.feature_dim;
        let mut result = RadianceInputAdjoint {
            normals: Vec::with_capacity(3 * b),
            features: Vec::with_capacity(f * b),
        };
        for row in adj_input.chunks_exact(d_in) {
            result.normals.extend_from_slice(&row[3 + d_enc..6 + d_enc]);
            result.features.extend_from_slice(&row[6 + d_enc..]);
        }
        self.inputs.clear();
        Ok(result)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{FieldArch, FieldParams};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn points(n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-0.8..0.8),
                    rng.random_range(-0.8..0.8),
                    rng.random_range(-0.8..0.8),
                )
            })
            .collect()
    }

    /// Scalar test objective mixing every geometry output.
    fn geometry_objective(params: &FieldParams, pts: &[Vector3<f64>], weights: &(Vec<f64>, Vec<f64>, Vec<f64>)) -> f64 {
        let g = GeometryBatch::forward(params, pts, true);
        let a: f64 = g.sdf.iter().zip(&weights.0).map(|(x, w)| x * w).sum();
        let b: f64 = g.features.iter().zip(&weights.1).map(|(x, w)| x * w).sum();
        let c: f64 = g.normals.iter().zip(&weights.2).map(|(x, w)| x * w).sum();
        a + b + c
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn geometry_backward_matches_finite_differences() {
        let arch = FieldArch::tiny();
        let mut params = FieldParams::new(arch, 2);
        // move away from the special initialisation so every block matters
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for v in params.values.iter_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
        let pts = points(5, 1);
        let f = arch.feature_dim;
        let weights = (
            (0..5).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>(),
            (0..5 * f).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>(),
            (0..15).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>(),
        );
        let mut batch = GeometryBatch::forward(&params, &pts, true);
        let mut grad = params.zero_grad();
        batch
            .tape
            .backward(
                &params,
                GeometryAdjoint {
                    sdf: Some(&weights.0),
                    features: Some(&weights.1),
                    normals: Some(&weights.2),
                },
                &mut grad,
            )
            .unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in params.layout().geometry_range() {
            let orig = params.values[i];
            params.values[i] = orig + h;
            let up = geometry_objective(&params, &pts, &weights);
            params.values[i] = orig - h;
            let down = geometry_objective(&params, &pts, &weights);
            params.values[i] = orig;
            let fd = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(fd, grad[i]));
        }
        assert!(worst < 1e-4, "worst relative error {worst:e}");
        assert!(grad[params.layout().radiance_range()].iter().all(|&g| g == 0.0));
        assert_eq!(grad[params.layout().gamma()], 0.0);
    }

    #[test]
    fn tape_cannot_be_replayed() {
        let params = FieldParams::new(FieldArch::tiny(), 0);
        let pts = points(3, 2);
        let mut batch = GeometryBatch::forward(&params, &pts, false);
        let mut grad = params.zero_grad();
        let adj = vec![1.0; 3];
        let a = GeometryAdjoint { sdf: Some(&adj), ..Default::default() };
        batch.tape.backward(&params, a, &mut grad).unwrap();
        assert!(matches!(batch.tape.backward(&params, a, &mut grad), Err(FieldError::TapeConsumed)));
    }

    #[test]
    fn radiance_squared_norm_gradient() {
        let arch = FieldArch::tiny();
        let mut params = FieldParams::new(arch, 4);
        let pts = points(4, 3);
        let dirs: Vec<_> = points(4, 5).iter().map(|v| v.normalize()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let normals: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let feats: Vec<f64> = (0..4 * arch.feature_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let objective = |p: &FieldParams, n: &[f64], f: &[f64]| -> f64 {
            let (c, _) = RadianceTape::forward(p, &pts, &dirs, n, f);
            c.iter().map(|x| x * x).sum()
        };
        let (colors, mut tape) = RadianceTape::forward(&params, &pts, &dirs, &normals, &feats);
        let adj: Vec<f64> = colors.iter().map(|c| 2.0 * c).collect();
        let mut grad = params.zero_grad();
        let input_adj = tape.backward(&params, &adj, &mut grad).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in params.layout().radiance_range() {
            let orig = params.values[i];
            params.values[i] = orig + h;
            let up = objective(&params, &normals, &feats);
            params.values[i] = orig - h;
            let down = objective(&params, &normals, &feats);
            params.values[i] = orig;
            worst = worst.max(rel_err((up - down) / (2.0 * h), grad[i]));
        }
        assert!(worst < 1e-4, "worst {worst:e}");
        for j in 0..12 {
            let mut n = normals.clone();
            n[j] += h;
            let up = objective(&params, &n, &feats);
            n[j] -= 2.0 * h;
            let down = objective(&params, &n, &feats);
            assert!(rel_err((up - down) / (2.0 * h), input_adj.normals[j]) < 1e-4);
        }
        assert!(grad[params.layout().geometry_range()].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_is_linear_in_adjoints() {
        let params = FieldParams::new(FieldArch::tiny(), 9);
        let pts = points(6, 7);
        let a1: Vec<f64> = (0..6).map(|i| i as f64 * 0.3 - 1.0).collect();
        let a2: Vec<f64> = (0..6).map(|i| (i as f64).sin()).collect();
        let sum: Vec<f64> = a1.iter().zip(&a2).map(|(x, y)| x + y).collect();
        let run = |adj: &[f64]| {
            let mut g = params.zero_grad();
            let mut batch = GeometryBatch::forward(&params, &pts, false);
            batch
                .tape
                .backward(&params, GeometryAdjoint { sdf: Some(adj), ..Default::default() }, &mut g)
                .unwrap();
            g
        };
        let (g1, g2, g12) = (run(&a1), run(&a2), run(&sum));
        for i in 0..g1.len() {
            assert!((g1[i] + g2[i] - g12[i]).abs() <= 1e-12 * (1.0 + g12[i].abs()));
        }
    }
}
