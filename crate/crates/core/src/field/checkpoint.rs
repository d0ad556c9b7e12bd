//! Binary checkpoint format:
//!
//! ```text
//! "NSRW" | u32 version | u64 param count | count x f64 (LE, layout order)
//! u32 entry count | per entry: u32 name len, name bytes, u64 offset, u32 rows, u32 cols
//! ```
//!
//! The network architecture is recovered from the layout entries.

use std::io::{Read, Write};
use std::path::Path;

use super::{FieldArch, FieldError, FieldParams, LayoutEntry};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NSRW";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(params: &FieldParams, mut w: W) -> Result<(), FieldError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(params.values.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(params.values.len() * 8);
    for v in &params.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    let entries = params.layout().entries();
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for e in entries {
        w.write_all(&(e.name.len() as u32).to_le_bytes())?;
        w.write_all(e.name.as_bytes())?;
        w.write_all(&(e.offset as u64).to_le_bytes())?;
        w.write_all(&(e.rows as u32).to_le_bytes())?;
        w.write_all(&(e.cols as u32).to_le_bytes())?;
    }
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N], FieldError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<FieldParams, FieldError> {
    let magic: [u8; 4] = read_array(&mut r)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(FieldError::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != CHECKPOINT_VERSION {
        return Err(FieldError::Format(format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(read_array(&mut r)?) as usize;
    if count > (1 << 32) {
        return Err(FieldError::Format("implausible parameter count".into()));
    }
    let mut raw = vec![0u8; count * 8];
    r.read_exact(&mut raw)?;
    let values: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let n_entries = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let mut entries = Vec::with_capacity(n_entries);
    for _ in 0..n_entries {
        let len = u32::from_le_bytes(read_array(&mut r)?) as usize;
        if len > 4096 {
            return Err(FieldError::Format("entry name too long".into()));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| FieldError::Format("entry name".into()))?;
        let offset = u64::from_le_bytes(read_array(&mut r)?) as usize;
        let rows = u32::from_le_bytes(read_array(&mut r)?) as usize;
        let cols = u32::from_le_bytes(read_array(&mut r)?) as usize;
        entries.push(LayoutEntry { name, offset, rows, cols });
    }
    let arch = infer_arch(&entries)?;
    let params = FieldParams::from_values(arch, values)?;
    if params.layout().entries() != entries.as_slice() {
        return Err(FieldError::Format("layout map does not match the inferred architecture".into()));
    }
    Ok(params)
}

fn shape(entries: &[LayoutEntry], name: &str) -> Option<(usize, usize)> {
    entries.iter().find(|e| e.name == name).map(|e| (e.rows, e.cols))
}

fn infer_arch(entries: &[LayoutEntry]) -> Result<FieldArch, FieldError> {
    let bad = |m: &str| FieldError::Format(m.to_string());
    let count = |prefix: &str| {
        (0..)
            .take_while(|l| shape(entries, &format!("{prefix}.{l}.weight")).is_some())
            .count()
    };
    let n_geo = count("geometry");
    let n_rad = count("radiance");
    if n_geo < 2 || n_rad < 2 {
        return Err(bad("missing network layers"));
    }
    let (_, d0) = shape(entries, "geometry.0.weight").unwrap();
    if d0 < 3 || (d0 - 3) % 6 != 0 {
        return Err(bad("geometry input size"));
    }
    let position_frequencies = (d0 - 3) / 6;
    let (out_last, width) = shape(entries, &format!("geometry.{}.weight", n_geo - 1)).unwrap();
    let feature_dim = out_last - 1;
    let geometry_skip = (1..n_geo).find(|&l| {
        let (prev_out, _) = shape(entries, &format!("geometry.{}.weight", l - 1)).unwrap();
        prev_out != width
    });
    let (rad_width, rad_in) = shape(entries, "radiance.0.weight").unwrap();
    let rest = rad_in
        .checked_sub(9 + feature_dim)
        .ok_or_else(|| bad("radiance input size"))?;
    if rest % 6 != 0 {
        return Err(bad("radiance input size"));
    }
    Ok(FieldArch {
        geometry_hidden_layers: n_geo - 1,
        geometry_width: width,
        geometry_skip,
        feature_dim,
        radiance_hidden_layers: n_rad - 1,
        radiance_width: rad_width,
        position_frequencies,
        direction_frequencies: rest / 6,
    })
}

pub fn save_checkpoint(params: &FieldParams, path: &Path) -> Result<(), FieldError> {
    let tmp = path.with_extension("tmp");
    {
        let file = std::fs::File::create(&tmp)?;
        let mut w = std::io::BufWriter::new(file);
        write_checkpoint(params, &mut w)?;
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<FieldParams, FieldError> {
    let file = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(file))
}
