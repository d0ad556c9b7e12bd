//! Geometry and radiance networks stored in one flat parameter vector.
//!
//! The geometry network maps a positionally encoded point to an SDF value and
//! a feature vector; its spatial gradient (the surface normal) is carried
//! alongside the primal values as three forward-mode tangents, so a single
//! reverse pass through [`mlp::GeometryTape`] yields parameter gradients of
//! losses that depend on normals (eikonal term, radiance input).

pub mod checkpoint;
pub mod encoding;
pub mod mlp;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optim::Adam;

pub use encoding::{encoded_len, positional_encoding};
pub use mlp::{GeometryAdjoint, GeometryBatch, GeometryTape, RadianceInputAdjoint, RadianceTape};

/// Softplus sharpness used by every hidden layer of the geometry network.
pub const SOFTPLUS_BETA: f64 = 100.0;
/// Radius of the sphere the geometry network approximates at initialisation.
pub const INIT_RADIUS: f64 = 0.5;
/// Regression steps applied on top of the geometric initialisation.
pub const INIT_FIT_STEPS: usize = 150;
const INIT_FIT_LR: f64 = 1e-3;
/// Initial value of the rendering sharpness `s = exp(gamma)`.
pub const INIT_SHARPNESS: f64 = 20.0;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("tape has already been consumed by a backward pass")]
    TapeConsumed,
    #[error("adjoint shape mismatch: {0}")]
    Shape(String),
    #[error("checkpoint I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

/// Network sizes. [`FieldArch::default`] is the full-size architecture
/// (8x256 geometry with a skip into layer 4, 4x256 radiance, 6/4 encoding
/// frequencies); [`FieldArch::desk`] is a narrow variant that trains in
/// minutes on one CPU core.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldArch {
    pub geometry_hidden_layers: usize,
    pub geometry_width: usize,
    /// Linear layer receiving the encoded input concatenated to its input.
    pub geometry_skip: Option<usize>,
    pub feature_dim: usize,
    pub radiance_hidden_layers: usize,
    pub radiance_width: usize,
    pub position_frequencies: usize,
    pub direction_frequencies: usize,
}

impl Default for FieldArch {
    fn default() -> Self {
        Self {
            geometry_hidden_layers: 8,
            geometry_width: 256,
            geometry_skip: Some(4),
            feature_dim: 256,
            radiance_hidden_layers: 4,
            radiance_width: 256,
            position_frequencies: 6,
            direction_frequencies: 4,
        }
    }
}

impl FieldArch {
    pub fn desk() -> Self {
        Self {
            geometry_hidden_layers: 3,
            geometry_width: 32,
            geometry_skip: None,
            feature_dim: 16,
            radiance_hidden_layers: 2,
            radiance_width: 32,
            position_frequencies: 6,
            direction_frequencies: 4,
        }
    }

    /// Tiny network for finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            geometry_hidden_layers: 3,
            geometry_width: 20,
            geometry_skip: Some(2),
            feature_dim: 4,
            radiance_hidden_layers: 2,
            radiance_width: 8,
            position_frequencies: 2,
            direction_frequencies: 1,
        }
    }

    pub fn position_input_dim(&self) -> usize {
        encoded_len(3, self.position_frequencies)
    }

    pub fn radiance_input_dim(&self) -> usize {
        3 + encoded_len(3, self.direction_frequencies) + 3 + self.feature_dim
    }

    /// `(in, out)` sizes of each geometry linear layer.
    pub fn geometry_dims(&self) -> Vec<(usize, usize)> {
        let d0 = self.position_input_dim();
        let n = self.geometry_hidden_layers + 1;
        (0..n)
            .map(|l| {
                let input = if l == 0 { d0 } else { self.geometry_width };
                let output = if l + 1 == n {
                    1 + self.feature_dim
                } else if Some(l + 1) == self.geometry_skip {
                    self.geometry_width - d0
                } else {
                    self.geometry_width
                };
                (input, output)
            })
            .collect()
    }

    pub fn radiance_dims(&self) -> Vec<(usize, usize)> {
        let n = self.radiance_hidden_layers + 1;
        (0..n)
            .map(|l| {
                let input = if l == 0 { self.radiance_input_dim() } else { self.radiance_width };
                let output = if l + 1 == n { 3 } else { self.radiance_width };
                (input, output)
            })
            .collect()
    }

    fn validate(&self) -> Result<(), String> {
        if let Some(skip) = self.geometry_skip {
            if skip == 0 || skip > self.geometry_hidden_layers {
                return Err(format!("skip layer {skip} out of range"));
            }
            if self.geometry_width <= self.position_input_dim() {
                return Err("geometry width must exceed the encoded input size when skipping".into());
            }
        }
        if self.geometry_width == 0 || self.radiance_width == 0 {
            return Err("zero-width network".into());
        }
        Ok(())
    }
}

/// One named block of the flat parameter vector (a weight matrix stored
/// row-major as `rows x cols`, a bias with `cols = 1`, or a scalar).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutEntry {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl LayoutEntry {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseRef {
    pub weight: usize,
    pub bias: usize,
    pub inputs: usize,
    pub outputs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    entries: Vec<LayoutEntry>,
    geometry: Vec<DenseRef>,
    radiance: Vec<DenseRef>,
    gamma: usize,
    len: usize,
}

impl Layout {
    pub fn new(arch: &FieldArch) -> Self {
        let mut entries = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, rows: usize, cols: usize, entries: &mut Vec<LayoutEntry>| {
            entries.push(LayoutEntry { name, offset, rows, cols });
            offset += rows * cols;
            offset - rows * cols
        };
        let mut dense = |prefix: &str, dims: Vec<(usize, usize)>, entries: &mut Vec<LayoutEntry>| {
            dims.into_iter()
                .enumerate()
                .map(|(l, (inputs, outputs))| {
                    let weight = push(format!("{prefix}.{l}.weight"), outputs, inputs, entries);
                    let bias = push(format!("{prefix}.{l}.bias"), outputs, 1, entries);
                    DenseRef { weight, bias, inputs, outputs }
                })
                .collect::<Vec<_>>()
        };
        let geometry = dense("geometry", arch.geometry_dims(), &mut entries);
        let radiance = dense("radiance", arch.radiance_dims(), &mut entries);
        let gamma = entries.last().map(|e| e.offset + e.len()).unwrap_or(0);
        entries.push(LayoutEntry { name: "sharpness.gamma".into(), offset: gamma, rows: 1, cols: 1 });
        let len = gamma + 1;
        Self { entries, geometry, radiance, gamma, len }
    }

    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    pub fn geometry(&self) -> &[DenseRef] {
        &self.geometry
    }

    pub fn radiance(&self) -> &[DenseRef] {
        &self.radiance
    }

    pub fn gamma(&self) -> usize {
        self.gamma
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Range of all geometry-network parameters.
    pub fn geometry_range(&self) -> std::ops::Range<usize> {
        let last = self.geometry.last().expect("geometry network has layers");
        self.geometry[0].weight..last.bias + last.outputs
    }

    pub fn radiance_range(&self) -> std::ops::Range<usize> {
        let last = self.radiance.last().expect("radiance network has layers");
        self.radiance[0].weight..last.bias + last.outputs
    }

    /// Checks that entries tile `[0, len)` without gaps or overlaps.
    pub fn check_partition(&self) -> bool {
        let mut sorted: Vec<_> = self.entries.iter().collect();
        sorted.sort_by_key(|e| e.offset);
        let mut cursor = 0;
        for e in sorted {
            if e.offset != cursor {
                return false;
            }
            cursor += e.len();
        }
        cursor == self.len
    }
}

/// All learnable scalars of the field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldParams {
    arch: FieldArch,
    layout: Layout,
    pub values: Vec<f64>,
}

impl FieldParams {
    /// Geometric initialisation: the SDF starts close to a sphere of radius
    /// [`INIT_RADIUS`]; `s` starts at [`INIT_SHARPNESS`].
    pub fn new(arch: FieldArch, seed: u64) -> Self {
        arch.validate().expect("invalid field architecture");
        let layout = Layout::new(&arch);
        let mut values = vec![0.0; layout.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d0 = arch.position_input_dim();
        let n_geo = layout.geometry.len();
        for (l, layer) in layout.geometry.iter().enumerate() {
            let w = &mut values[layer.weight..layer.weight + layer.inputs * layer.outputs];
            if l + 1 == n_geo {
                let mean = std::f64::consts::PI.sqrt() / (layer.inputs as f64).sqrt();
                let dist = Normal::new(mean, 1e-4).unwrap();
                w.iter_mut().for_each(|x| *x = dist.sample(&mut rng));
                values[layer.bias..layer.bias + layer.outputs].fill(-INIT_RADIUS);
                continue;
            }
            let dist = Normal::new(0.0, 2f64.sqrt() / (layer.outputs as f64).sqrt()).unwrap();
            for row in w.chunks_mut(layer.inputs) {
                for (c, x) in row.iter_mut().enumerate() {
                    let zeroed = if l == 0 {
                        c >= 3
                    } else if Some(l) == arch.geometry_skip {
                        c >= layer.inputs - (d0 - 3)
                    } else {
                        false
                    };
                    *x = if zeroed { 0.0 } else { dist.sample(&mut rng) };
                }
            }
        }
        for layer in &layout.radiance {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            let dist = Uniform::new(-bound, bound).unwrap();
            let end = layer.bias + layer.outputs;
            values[layer.weight..end].iter_mut().for_each(|x| *x = dist.sample(&mut rng));
        }
        values[layout.gamma] = INIT_SHARPNESS.ln();
        let mut params = Self { arch, layout, values };
        params.center_initial_sphere(seed);
        params
    }

    /// The geometric initialisation only approximates a sphere: softplus
    /// offsets shift the zero level and finite widths make it anisotropic.
    /// A short regression onto the exact sphere SDF tightens it.
    fn center_initial_sphere(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5a4e);
        let mut adam = Adam::new(self.values.len());
        let range = self.layout.geometry_range();
        let d0 = self.arch.position_input_dim();
        let batch = 256;
        for _ in 0..INIT_FIT_STEPS {
            let pts: Vec<Vector3<f64>> = (0..batch)
                .map(|i| {
                    let u = Vector3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0f64),
                    );
                    if i % 2 == 0 {
                        u
                    } else {
                        let r = INIT_RADIUS + 0.05 * (rng.random::<f64>() - 0.5);
                        u.try_normalize(1e-9).unwrap_or(Vector3::z()) * r
                    }
                })
                .collect();
            let mut fwd = GeometryBatch::forward(self, &pts, false);
            let adj: Vec<f64> = pts
                .iter()
                .zip(&fwd.sdf)
                .map(|(p, s)| 2.0 * (s - (p.norm() - INIT_RADIUS)) / batch as f64)
                .collect();
            let mut grad = self.zero_grad();
            fwd.tape
                .backward(self, GeometryAdjoint { sdf: Some(&adj), ..Default::default() }, &mut grad)
                .expect("fresh tape");
            grad[range.end..].fill(0.0);
            for (l, layer) in self.layout.geometry.iter().enumerate() {
                let first = if l == 0 {
                    3
                } else if Some(l) == self.arch.geometry_skip {
                    layer.inputs - (d0 - 3)
                } else {
                    continue;
                };
                for row in grad[layer.weight..layer.weight + layer.inputs * layer.outputs].chunks_mut(layer.inputs) {
                    row[first..].fill(0.0);
                }
            }
            adam.update(&mut self.values, &grad, INIT_FIT_LR);
        }
    }

    pub fn from_values(arch: FieldArch, values: Vec<f64>) -> Result<Self, FieldError> {
        arch.validate().map_err(FieldError::Format)?;
        let layout = Layout::new(&arch);
        if values.len() != layout.len() {
            return Err(FieldError::Format(format!(
                "expected {} parameters, found {}",
                layout.len(),
                values.len()
            )));
        }
        Ok(Self { arch, layout, values })
    }

    pub fn arch(&self) -> &FieldArch {
        &self.arch
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Log-space sharpness parameter.
    pub fn gamma(&self) -> f64 {
        self.values[self.layout.gamma]
    }

    /// Rendering sharpness `s = exp(gamma)`, always positive.
    pub fn sharpness(&self) -> f64 {
        self.gamma().exp()
    }

    pub fn zero_grad(&self) -> Vec<f64> {
        vec![0.0; self.values.len()]
    }
}

/// Geometry network output at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryOutput {
    pub sdf: f64,
    pub feature: Vec<f64>,
    pub normal: Vector3<f64>,
}

/// Evaluates the geometry network at `p`, including the exact spatial
/// gradient of the SDF.
pub fn eval_geometry(params: &FieldParams, p: &Vector3<f64>) -> GeometryOutput {
    let batch = GeometryBatch::forward(params, std::slice::from_ref(p), true);
    GeometryOutput {
        sdf: batch.sdf[0],
        feature: batch.features.clone(),
        normal: batch.normal(0),
    }
}

/// Evaluates the radiance network; every component lies in `[0, 1]`.
pub fn eval_radiance(
    params: &FieldParams,
    p: &Vector3<f64>,
    v: &Vector3<f64>,
    normal: &Vector3<f64>,
    feature: &[f64],
) -> Vector3<f64> {
    let (colors, _) = RadianceTape::forward(
        params,
        std::slice::from_ref(p),
        std::slice::from_ref(v),
        normal.as_slice(),
        feature,
    );
    Vector3::new(colors[0], colors[1], colors[2])
}

/// Anything that can report signed distances for batches of points.
pub trait SdfField: Sync {
    fn sdf_batch(&self, points: &[Vector3<f64>]) -> Vec<f64>;

    fn sdf(&self, p: &Vector3<f64>) -> f64 {
        self.sdf_batch(std::slice::from_ref(p))[0]
    }
}

impl SdfField for FieldParams {
    fn sdf_batch(&self, points: &[Vector3<f64>]) -> Vec<f64> {
        let mut out = Vec::with_capacity(points.len());
        for chunk in points.chunks(4096) {
            out.extend(GeometryBatch::forward(self, chunk, false).sdf);
        }
        out
    }
}

/// Adapts a closure into an [`SdfField`].
pub struct FnField<F>(pub F);

impl<F: Fn(&Vector3<f64>) -> f64 + Sync> SdfField for FnField<F> {
    fn sdf_batch(&self, points: &[Vector3<f64>]) -> Vec<f64> {
        points.iter().map(&self.0).collect()
    }
}
