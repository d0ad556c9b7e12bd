//! Per-view feature grids, the `.nsrf` file format and bilinear lookup.
//!
//! ```text
//! "NSRF" | u32 version | u32 C | u32 H_f | u32 W_f | u32 W | u32 H | C*H_f*W_f x f32 (LE)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector2;

use super::ConsistencyError;

pub const FEATURE_MAGIC: &[u8; 4] = b"NSRF";
pub const FEATURE_VERSION: u32 = 1;

/// A `C x H_f x W_f` feature grid attached to a `W x H` image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height_f: usize,
    width_f: usize,
    image_width: usize,
    image_height: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(
        channels: usize,
        height_f: usize,
        width_f: usize,
        image_width: usize,
        image_height: usize,
        data: Vec<f32>,
    ) -> Result<Self, ConsistencyError> {
        let invalid = |m: String| Err(ConsistencyError::InvalidFeatureMap(m));
        if channels == 0 || height_f == 0 || width_f == 0 {
            return invalid("empty feature grid".into());
        }
        if height_f > image_height || width_f > image_width {
            return invalid(format!(
                "feature grid {width_f}x{height_f} larger than image {image_width}x{image_height}"
            ));
        }
        if data.len() != channels * height_f * width_f {
            return invalid(format!(
                "expected {} values, found {}",
                channels * height_f * width_f,
                data.len()
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return invalid(format!("non-finite value at index {i}"));
        }
        Ok(Self { channels, height_f, width_f, image_width, image_height, data })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(W_f, H_f)`.
    pub fn grid_size(&self) -> (usize, usize) {
        (self.width_f, self.height_f)
    }

    /// `(W, H)` of the originating image.
    pub fn image_size(&self) -> (usize, usize) {
        (self.image_width, self.image_height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Grid value at channel `c`, row `y`, column `x`.
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height_f + y) * self.width_f + x] as f64
    }

    pub fn contains(&self, x: &Vector2<f64>) -> bool {
        x.x >= -0.5
            && x.y >= -0.5
            && x.x <= self.image_width as f64 - 0.5
            && x.y <= self.image_height as f64 - 0.5
    }

    /// Bilinear lookup at image coordinates `x`.
    pub fn sample(&self, x: &Vector2<f64>) -> Result<Vec<f64>, ConsistencyError> {
        let mut out = vec![0.0; self.channels];
        self.sample_into(x, &mut out, None)?;
        Ok(out)
    }

    /// Bilinear lookup into `out`; with `grad`, also writes the derivatives
    /// with respect to the image `u` and `v` coordinates.
    pub fn sample_into(
        &self,
        x: &Vector2<f64>,
        out: &mut [f64],
        grad: Option<(&mut [f64], &mut [f64])>,
    ) -> Result<(), ConsistencyError> {
        if !self.contains(x) {
            return Err(ConsistencyError::OutOfImage(x.x, x.y));
        }
        let su = self.width_f as f64 / self.image_width as f64;
        let sv = self.height_f as f64 / self.image_height as f64;
        let (x0, fx, dx) = axis(x.x, su, self.width_f);
        let (y0, fy, dy) = axis(x.y, sv, self.height_f);
        let x1 = (x0 + 1).min(self.width_f - 1);
        let y1 = (y0 + 1).min(self.height_f - 1);
        let plane = self.height_f * self.width_f;
        let mut grad = grad;
        for c in 0..self.channels {
            let base = &self.data[c * plane..(c + 1) * plane];
            let v00 = base[y0 * self.width_f + x0] as f64;
            let v01 = base[y0 * self.width_f + x1] as f64;
            let v10 = base[y1 * self.width_f + x0] as f64;
            let v11 = base[y1 * self.width_f + x1] as f64;
            let top = v00 + fx * (v01 - v00);
            let bottom = v10 + fx * (v11 - v10);
            out[c] = top + fy * (bottom - top);
            if let Some((gu, gv)) = grad.as_mut() {
                gu[c] = dx * ((v01 - v00) * (1.0 - fy) + (v11 - v10) * fy);
                gv[c] = dy * (bottom - top);
            }
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(FEATURE_MAGIC)?;
        for v in [
            FEATURE_VERSION,
            self.channels as u32,
            self.height_f as u32,
            self.width_f as u32,
            self.image_width as u32,
            self.image_height as u32,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self, ConsistencyError> {
        let parse = |m: &str| ConsistencyError::Parse(m.to_string());
        let mut head = [0u8; 28];
        r.read_exact(&mut head).map_err(|_| parse("truncated header"))?;
        if &head[..4] != FEATURE_MAGIC {
            return Err(parse("bad magic"));
        }
        let word = |i: usize| u32::from_le_bytes(head[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        if word(0) as u32 != FEATURE_VERSION {
            return Err(parse("unsupported version"));
        }
        let (c, hf, wf, w, h) = (word(1), word(2), word(3), word(4), word(5));
        let n = c.checked_mul(hf).and_then(|x| x.checked_mul(wf)).ok_or_else(|| parse("size overflow"))?;
        if n > 1 << 30 {
            return Err(parse("implausible size"));
        }
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw).map_err(|_| parse("truncated data"))?;
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        Self::new(c, hf, wf, w, h, data)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut w)?;
        w.flush()
    }

    pub fn load(path: &Path) -> Result<Self, ConsistencyError> {
        let file = std::fs::File::open(path).map_err(|e| ConsistencyError::Parse(e.to_string()))?;
        Self::read(std::io::BufReader::new(file))
    }
}

/// Integer cell, fraction and d(fraction)/d(image coordinate) along one axis.
fn axis(u: f64, scale: f64, n: usize) -> (usize, f64, f64) {
    let uf = (u + 0.5) * scale - 0.5;
    let max = (n - 1) as f64;
    if n == 1 {
        return (0, 0.0, 0.0);
    }
    let (clamped, slope) = if uf <= 0.0 {
        (0.0, 0.0)
    } else if uf >= max {
        (max, 0.0)
    } else {
        (uf, scale)
    };
    let i0 = (clamped.floor() as usize).min(n - 2);
    (i0, clamped - i0 as f64, slope)
}
