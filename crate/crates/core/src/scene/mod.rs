//! Scene directories and the synthetic scene generator.
//!
//! A scene directory holds `scene.json`, one image and one `.nsrf` feature
//! file per view, and optionally `gt_points.xyz`.

pub mod shape;

use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consistency::FeatureMap;
use crate::geometry::{Camera, Ray};

pub use shape::{analytic_normal, analytic_sdf, ShapeKind, ShapeSpec, SHAPE_MARGIN};

pub const MIN_VIEWS: usize = 4;
pub const GT_POINT_COUNT: usize = 100_000;
/// Feature value written for background pixels in every channel.
pub const BACKGROUND_FEATURE: f32 = 1.5;
const CAMERA_DISTANCE: f64 = 2.4;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("{file}: {message}")]
    Parse { file: String, message: String },
    #[error("{file}: invalid {field}: {message}")]
    Validation { file: String, field: String, message: String },
    #[error("shape does not fit inside the radius-{SHAPE_MARGIN} ball (bounding radius {0:.3})")]
    ShapeTooLarge(f64),
    #[error("invalid generator settings: {0}")]
    InvalidSettings(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SceneError + '_ {
    move |source| SceneError::Io { path: path.display().to_string(), source }
}

/// An RGB image with values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn pixel(&self, x: usize, y: usize) -> Vector3<f64> {
        let i = 3 * (y * self.width + x);
        Vector3::new(self.data[i] as f64, self.data[i + 1] as f64, self.data[i + 2] as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cameras: Vec<Camera>,
    pub images: Vec<Image>,
    pub features: Vec<FeatureMap>,
    pub background: Vector3<f64>,
    pub shape: Option<ShapeSpec>,
    pub gt_points: Option<Vec<Vector3<f64>>>,
}

impl Scene {
    pub fn n_views(&self) -> usize {
        self.cameras.len()
    }

    pub fn channels(&self) -> usize {
        self.features.first().map_or(0, FeatureMap::channels)
    }

    /// Ground-truth depth along the ray through `pixel` of `view`, when the
    /// analytic shape is known and the ray hits it.
    pub fn gt_depth(&self, view: usize, pixel: &Vector2<f64>) -> Option<f64> {
        let shape = self.shape.as_ref()?;
        let ray = self.cameras[view].pixel_to_ray(pixel).ok()?;
        trace_surface(shape, &ray)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ViewRecord {
    #[serde(rename = "K")]
    pub k: [f64; 9],
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
    pub width: u32,
    pub height: u32,
    pub image: String,
    pub features: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SceneFile {
    pub views: Vec<ViewRecord>,
    pub background: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_points: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<ShapeSpec>,
}

fn row_major(m: &Matrix3<f64>) -> [f64; 9] {
    let mut out = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[3 * r + c] = m[(r, c)];
        }
    }
    out
}

fn from_row_major(a: &[f64; 9]) -> Matrix3<f64> {
    Matrix3::from_row_slice(a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Png,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub shape: ShapeSpec,
    pub n_views: usize,
    pub width: u32,
    pub height: u32,
    pub channels: usize,
    /// Feature grids are `width / feature_scale` by `height / feature_scale`.
    pub feature_scale: u32,
    /// Standard deviation of per-view Gaussian feature noise.
    pub feature_noise: f64,
    pub seed: u64,
    pub image_format: ImageFormat,
    pub background: [f64; 3],
    /// Views whose surface features come from an unrelated field.
    #[serde(default)]
    pub corrupt_views: Vec<usize>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            shape: ShapeSpec::sphere(0.5),
            n_views: 12,
            width: 64,
            height: 64,
            channels: 8,
            feature_scale: 1,
            feature_noise: 0.0,
            seed: 0,
            image_format: ImageFormat::Png,
            background: [0.0; 3],
            corrupt_views: Vec::new(),
        }
    }
}

/// Sphere tracing followed by a few Newton steps on the ray parameter.
/// Returns the first-hit depth within the ray bounds.
pub fn trace_surface(shape: &ShapeSpec, ray: &Ray) -> Option<f64> {
    let f = |t: f64| analytic_sdf(shape, &ray.at(t));
    let mut t = ray.t_near;
    let mut hit = false;
    for _ in 0..256 {
        let d = f(t);
        if d < 1e-6 {
            hit = true;
            break;
        }
        t += d;
        if t > ray.t_far {
            return None;
        }
    }
    if !hit {
        return None;
    }
    let h = 1e-7;
    for _ in 0..4 {
        let d = f(t);
        let slope = (f(t + h) - f(t - h)) / (2.0 * h);
        if slope > -1e-3 {
            break;
        }
        let step = d / slope;
        if step.abs() > 1e-4 {
            break;
        }
        t -= step;
    }
    Some(t)
}

/// Cameras spiralling over the upper hemisphere (z up), all looking at the
/// origin and framing the unit sphere.
pub fn hemisphere_cameras(n: usize, width: u32, height: u32, seed: u64) -> Vec<Camera> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0ca3_e7a5);
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let half = (1.0 / CAMERA_DISTANCE).asin();
    let focal = 0.5 * width.min(height) as f64 / half.tan();
    let phase = rng.random::<f64>() * std::f64::consts::TAU;
    (0..n)
        .map(|i| {
            let elevation = (10.0 + 55.0 * (i as f64 + 0.5) / n as f64).to_radians();
            let azimuth = phase + golden * i as f64;
            let eye = CAMERA_DISTANCE
                * Vector3::new(elevation.cos() * azimuth.cos(), elevation.cos() * azimuth.sin(), elevation.sin());
            Camera::look_at(eye, Vector3::zeros(), Vector3::z(), focal, width, height)
                .expect("valid synthetic camera")
        })
        .collect()
}

/// Smooth, view-independent feature field used by the generator.
#[derive(Debug, Clone)]
pub struct FeatureField {
    waves: Vec<Vec<(Vector3<f64>, f64, f64)>>,
}

impl FeatureField {
    pub fn new(channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfea7);
        let waves = (0..channels)
            .map(|_| {
                (0..3)
                    .map(|octave| {
                        let dir = random_unit(&mut rng);
                        let freq = rng.random_range(2.0..4.0) * (1.6f64).powi(octave);
                        let phase = rng.random::<f64>() * std::f64::consts::TAU;
                        (dir * freq, phase, 0.6f64.powi(octave))
                    })
                    .collect()
            })
            .collect();
        Self { waves }
    }

    pub fn eval(&self, p: &Vector3<f64>, out: &mut [f32]) {
        for (c, waves) in self.waves.iter().enumerate() {
            let norm: f64 = waves.iter().map(|w| w.2).sum();
            let v: f64 = waves.iter().map(|(k, ph, a)| a * (k.dot(p) + ph).sin()).sum();
            out[c] = (v / norm) as f32;
        }
    }
}

fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Deterministic three-octave albedo texture.
fn albedo(p: &Vector3<f64>) -> Vector3<f64> {
    let mut t = 0.0;
    let mut amp = 1.0;
    let mut freq = 5.0;
    for o in 0..3 {
        let s = o as f64;
        t += amp * ((freq * p.x + 1.7 * s).sin() * (freq * p.y - 0.9 * s).sin() * (freq * p.z + 0.4).cos());
        amp *= 0.5;
        freq *= 2.1;
    }
    let t = 0.5 + 0.5 * t / 1.75;
    Vector3::new(0.35 + 0.5 * t, 0.3 + 0.35 * (1.0 - t), 0.25 + 0.6 * t * t)
}

fn shade(shape: &ShapeSpec, p: &Vector3<f64>) -> Vector3<f64> {
    let light = Vector3::new(0.4, 0.3, 0.85).normalize();
    let n = analytic_normal(shape, p);
    let lambert = 0.25 + 0.75 * n.dot(&light).max(0.0);
    (albedo(p) * lambert).map(|x| x.clamp(0.0, 1.0))
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Renders the synthetic scene described by `cfg` into `out` and returns
/// it exactly as [`load_scene`] would read it back.
pub fn generate_scene(cfg: &GenerateConfig, out: &Path) -> Result<Scene, SceneError> {
    if cfg.n_views < MIN_VIEWS {
        return Err(SceneError::InvalidSettings(format!("need at least {MIN_VIEWS} views, got {}", cfg.n_views)));
    }
    if cfg.width == 0 || cfg.height == 0 || cfg.channels == 0 {
        return Err(SceneError::InvalidSettings("image size and channel count must be positive".into()));
    }
    if cfg.feature_scale == 0 || !cfg.width.is_multiple_of(cfg.feature_scale) || !cfg.height.is_multiple_of(cfg.feature_scale) {
        return Err(SceneError::InvalidSettings(format!(
            "feature scale {} must divide the image size",
            cfg.feature_scale
        )));
    }
    if !(cfg.feature_noise >= 0.0 && cfg.feature_noise.is_finite()) {
        return Err(SceneError::InvalidSettings("feature noise must be non-negative".into()));
    }
    if let Some(v) = cfg.corrupt_views.iter().find(|&&v| v >= cfg.n_views) {
        return Err(SceneError::InvalidSettings(format!("corrupted view {v} out of range")));
    }
    cfg.shape.validate().map_err(SceneError::InvalidSettings)?;
    let radius = cfg.shape.bounding_radius();
    if radius > SHAPE_MARGIN {
        return Err(SceneError::ShapeTooLarge(radius));
    }
    fs::create_dir_all(out).map_err(io_err(out))?;

    let cameras = hemisphere_cameras(cfg.n_views, cfg.width, cfg.height, cfg.seed);
    let field = FeatureField::new(cfg.channels, cfg.seed);
    let decoy = FeatureField::new(cfg.channels, cfg.seed ^ 0x5bd1_e995_c0ff_ee00);
    let background = Vector3::from(cfg.background);

    let rendered: Vec<(Image, FeatureMap)> = cameras
        .par_iter()
        .enumerate()
        .map(|(v, cam)| {
            let f = if cfg.corrupt_views.contains(&v) { &decoy } else { &field };
            render_view(cfg, cam, f, &background, v)
        })
        .collect();

    let mut views = Vec::with_capacity(cfg.n_views);
    for (v, (cam, (image, feat))) in cameras.iter().zip(&rendered).enumerate() {
        let image_name = match cfg.image_format {
            ImageFormat::Png => format!("image_{v:04}.png"),
            ImageFormat::Raw => format!("image_{v:04}.raw"),
        };
        let feat_name = format!("feat_{v:04}.nsrf");
        write_image(image, &out.join(&image_name), cfg.image_format)?;
        let feat_path = out.join(&feat_name);
        feat.save(&feat_path).map_err(io_err(&feat_path))?;
        views.push(ViewRecord {
            k: row_major(cam.k()),
            r: row_major(cam.r()),
            t: [cam.t().x, cam.t().y, cam.t().z],
            width: cfg.width,
            height: cfg.height,
            image: image_name,
            features: feat_name,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9);
    let gt_points = cfg.shape.sample_surface(GT_POINT_COUNT, &mut rng);
    let gt_path = out.join("gt_points.xyz");
    write_points(&gt_path, &gt_points)?;

    let file = SceneFile {
        views,
        background: cfg.background,
        gt_points: Some("gt_points.xyz".into()),
        shape: Some(cfg.shape.clone()),
    };
    let json_path = out.join("scene.json");
    let text = serde_json::to_string_pretty(&file).expect("serialisable scene");
    fs::write(&json_path, text + "\n").map_err(io_err(&json_path))?;

    let (images, features): (Vec<_>, Vec<_>) = rendered.into_iter().unzip();
    let images = match cfg.image_format {
        ImageFormat::Png => images
            .into_iter()
            .map(|im| Image { data: im.data.iter().map(|&x| quantize(x as f64) as f32 / 255.0).collect(), ..im })
            .collect(),
        ImageFormat::Raw => images,
    };
    Ok(Scene {
        cameras,
        images,
        features,
        background,
        shape: Some(cfg.shape.clone()),
        gt_points: Some(gt_points),
    })
}

fn render_view(
    cfg: &GenerateConfig,
    cam: &Camera,
    field: &FeatureField,
    background: &Vector3<f64>,
    view: usize,
) -> (Image, FeatureMap) {
    let (w, h) = (cfg.width as usize, cfg.height as usize);
    let mut data = vec![0f32; 3 * w * h];
    for y in 0..h {
        for x in 0..w {
            let px = Vector2::new(x as f64, y as f64);
            let color = cam
                .pixel_to_ray(&px)
                .ok()
                .and_then(|ray| trace_surface(&cfg.shape, &ray).map(|t| shade(&cfg.shape, &ray.at(t))))
                .unwrap_or(*background);
            for c in 0..3 {
                data[3 * (y * w + x) + c] = color[c] as f32;
            }
        }
    }
    let s = cfg.feature_scale as usize;
    let (wf, hf) = (w / s, h / s);
    let ch = cfg.channels;
    let mut feat = vec![0f32; ch * wf * hf];
    let mut buf = vec![0f32; ch];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x100_0193).wrapping_add(view as u64 + 1));
    let noise = Normal::new(0.0, cfg.feature_noise.max(1e-300)).unwrap();
    for yf in 0..hf {
        for xf in 0..wf {
            // centre of the feature cell in image coordinates
            let u = (xf as f64 + 0.5) * s as f64 - 0.5;
            let v = (yf as f64 + 0.5) * s as f64 - 0.5;
            let hit = cam
                .pixel_to_ray(&Vector2::new(u, v))
                .ok()
                .and_then(|ray| trace_surface(&cfg.shape, &ray).map(|t| ray.at(t)));
            match hit {
                Some(p) => field.eval(&p, &mut buf),
                None => buf.fill(BACKGROUND_FEATURE),
            }
            for c in 0..ch {
                let mut value = buf[c];
                if cfg.feature_noise > 0.0 {
                    value += noise.sample(&mut rng) as f32;
                }
                feat[(c * hf + yf) * wf + xf] = value;
            }
        }
    }
    let map = FeatureMap::new(ch, hf, wf, w, h, feat).expect("generated feature map is valid");
    (Image { width: w, height: h, data }, map)
}

fn write_image(image: &Image, path: &Path, format: ImageFormat) -> Result<(), SceneError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    match format {
        ImageFormat::Png => {
            let mut enc = png::Encoder::new(&mut w, image.width as u32, image.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let bytes: Vec<u8> = image.data.iter().map(|&x| quantize(x as f64)).collect();
            let mut writer = enc.write_header().map_err(|e| png_err(path, e))?;
            writer.write_image_data(&bytes).map_err(|e| png_err(path, e))?;
        }
        ImageFormat::Raw => {
            let mut bytes = Vec::with_capacity(image.data.len() * 4);
            for v in &image.data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&bytes).map_err(io_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

fn png_err(path: &Path, e: impl std::fmt::Display) -> SceneError {
    SceneError::Parse { file: path.display().to_string(), message: e.to_string() }
}

pub fn write_points(path: &Path, points: &[Vector3<f64>]) -> Result<(), SceneError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for p in points {
        writeln!(w, "{} {} {}", p.x, p.y, p.z).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_points(path: &Path) -> Result<Vec<Vector3<f64>>, SceneError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .take(3)
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| SceneError::Parse { file: path.display().to_string(), message: format!("line {}: {e}", i + 1) })?;
        if vals.len() != 3 {
            return Err(SceneError::Parse {
                file: path.display().to_string(),
                message: format!("line {}: expected three coordinates", i + 1),
            });
        }
        out.push(Vector3::new(vals[0], vals[1], vals[2]));
    }
    Ok(out)
}

fn read_image(path: &Path, width: usize, height: usize) -> Result<Image, SceneError> {
    let file_name = path.display().to_string();
    let parse = |message: String| SceneError::Parse { file: file_name.clone(), message };
    let bytes = fs::read(path).map_err(io_err(path))?;
    let data = if path.extension().is_some_and(|e| e == "raw") {
        if bytes.len() != 12 * width * height {
            return Err(parse(format!("expected {} bytes, found {}", 12 * width * height, bytes.len())));
        }
        bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect()
    } else {
        let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
        let mut reader = decoder.read_info().map_err(|e| parse(e.to_string()))?;
        let mut buf = vec![0u8; reader.output_buffer_size().ok_or_else(|| parse("image too large".into()))?];
        let info = reader.next_frame(&mut buf).map_err(|e| parse(e.to_string()))?;
        if info.bit_depth != png::BitDepth::Eight {
            return Err(parse("only 8-bit images are supported".into()));
        }
        if (info.width as usize, info.height as usize) != (width, height) {
            return Err(SceneError::Validation {
                file: file_name.clone(),
                field: "size".into(),
                message: format!("image is {}x{}, camera says {width}x{height}", info.width, info.height),
            });
        }
        let stride = match info.color_type {
            png::ColorType::Rgb => 3,
            png::ColorType::Rgba => 4,
            png::ColorType::Grayscale => 1,
            other => return Err(parse(format!("unsupported color type {other:?}"))),
        };
        let pixels = &buf[..info.buffer_size()];
        let mut data = Vec::with_capacity(3 * width * height);
        for px in pixels.chunks_exact(stride) {
            for c in 0..3 {
                data.push(px[c.min(stride - 1)] as f32 / 255.0);
            }
        }
        data
    };
    Ok(Image { width, height, data })
}

/// Reads and validates a scene directory.
pub fn load_scene(dir: &Path) -> Result<Scene, SceneError> {
    let json_path = dir.join("scene.json");
    let json_name = json_path.display().to_string();
    let text = fs::read_to_string(&json_path).map_err(io_err(&json_path))?;
    let file: SceneFile = serde_json::from_str(&text)
        .map_err(|e| SceneError::Parse { file: json_name.clone(), message: e.to_string() })?;
    let invalid = |field: String, message: String| SceneError::Validation { file: json_name.clone(), field, message };
    if file.views.is_empty() {
        return Err(invalid("views".into(), "no views".into()));
    }
    if !file.background.iter().all(|c| c.is_finite()) {
        return Err(invalid("background".into(), "non-finite color".into()));
    }
    let mut cameras = Vec::with_capacity(file.views.len());
    let mut images = Vec::with_capacity(file.views.len());
    let mut features = Vec::with_capacity(file.views.len());
    for (i, view) in file.views.iter().enumerate() {
        let cam = Camera::new(
            from_row_major(&view.k),
            from_row_major(&view.r),
            Vector3::from(view.t),
            view.width,
            view.height,
        )
        .map_err(|e| invalid(format!("views[{i}].camera"), e.to_string()))?;
        let image = read_image(&dir.join(&view.image), view.width as usize, view.height as usize)?;
        let feat_path = dir.join(&view.features);
        let feat = FeatureMap::load(&feat_path)
            .map_err(|e| SceneError::Parse { file: feat_path.display().to_string(), message: e.to_string() })?;
        if feat.image_size() != (view.width as usize, view.height as usize) {
            return Err(SceneError::Validation {
                file: feat_path.display().to_string(),
                field: "image size".into(),
                message: format!("{:?} does not match the {}x{} view", feat.image_size(), view.width, view.height),
            });
        }
        if let Some(first) = features.first().map(FeatureMap::channels) {
            if feat.channels() != first {
                return Err(SceneError::Validation {
                    file: feat_path.display().to_string(),
                    field: "channels".into(),
                    message: format!("{} channels, other views have {first}", feat.channels()),
                });
            }
        }
        cameras.push(cam);
        images.push(image);
        features.push(feat);
    }
    if let Some(shape) = &file.shape {
        shape.validate().map_err(|m| invalid("shape".into(), m))?;
    }
    let gt_points = match &file.gt_points {
        Some(name) => {
            let path = dir.join(name);
            if path.exists() { Some(read_points(&path)?) } else { None }
        }
        None => None,
    };
    Ok(Scene {
        cameras,
        images,
        features,
        background: Vector3::from(file.background),
        shape: file.shape,
        gt_points,
    })
}

/// Path of the ground-truth point file referenced by a scene directory.
pub fn gt_points_path(dir: &Path) -> Option<PathBuf> {
    let text = fs::read_to_string(dir.join("scene.json")).ok()?;
    let file: SceneFile = serde_json::from_str(&text).ok()?;
    file.gt_points.map(|p| dir.join(p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn traced_depth_matches_ray_sphere_intersection() {
        let shape = ShapeSpec::sphere(0.5);
        let cams = hemisphere_cameras(4, 48, 48, 3);
        let mut max_err: f64 = 0.0;
        let mut hits = 0;
        for cam in &cams {
            for y in 0..48 {
                for x in 0..48 {
                    let Ok(ray) = cam.pixel_to_ray(&Vector2::new(x as f64, y as f64)) else { continue };
                    let b = ray.o.dot(&ray.v);
                    let disc = b * b - (ray.o.norm_squared() - 0.25);
                    if let Some(t) = trace_surface(&shape, &ray) {
                        assert!(disc >= 0.0);
                        max_err = max_err.max((t - (-b - disc.sqrt())).abs());
                        hits += 1;
                    }
                }
            }
        }
        assert!(hits > 1000);
        assert!(max_err < 1e-5, "{max_err}");
    }

    #[test]
    fn cameras_look_at_the_origin() {
        for cam in hemisphere_cameras(12, 64, 64, 0) {
            let x = cam.project(&Vector3::zeros()).unwrap();
            assert!((x - Vector2::new(31.5, 31.5)).norm() < 1e-9);
            assert!(cam.center().z > 0.0);
            assert!((cam.center().norm() - CAMERA_DISTANCE).abs() < 1e-12);
        }
    }

    #[test]
    fn feature_field_is_bounded() {
        let f = FeatureField::new(6, 2);
        let mut out = [0f32; 6];
        f.eval(&Vector3::new(0.3, -0.2, 0.1), &mut out);
        assert!(out.iter().all(|v| v.abs() <= 1.0));
    }
}
