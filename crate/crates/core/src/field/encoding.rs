use std::f64::consts::PI;

/// Length of the encoding of a `dim`-vector with `n_freq` frequency bands.
pub fn encoded_len(dim: usize, n_freq: usize) -> usize {
    dim + 2 * dim * n_freq
}

/// `[p, sin(2^0 pi p), cos(2^0 pi p), ..., sin(2^(L-1) pi p), cos(2^(L-1) pi p)]`.
pub fn positional_encoding(p: &[f64], n_freq: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(encoded_len(p.len(), n_freq));
    out.extend_from_slice(p);
    for f in 0..n_freq {
        let scale = (1u64 << f) as f64 * PI;
        out.extend(p.iter().map(|x| (scale * x).sin()));
        out.extend(p.iter().map(|x| (scale * x).cos()));
    }
    out
}

/// Writes the encoding of a 3D point into `primal`, and, when `tangents` is
/// given, the derivative with respect to coordinate `k` into `tangents[k]`.
pub(crate) fn encode_point_into(
    p: &[f64; 3],
    n_freq: usize,
    primal: &mut [f64],
    mut tangents: Option<[&mut [f64]; 3]>,
) {
    primal[..3].copy_from_slice(p);
    if let Some(t) = tangents.as_mut() {
        for (k, row) in t.iter_mut().enumerate() {
            row.fill(0.0);
            row[k] = 1.0;
        }
    }
    for f in 0..n_freq {
        let scale = (1u64 << f) as f64 * PI;
        let base = 3 + 6 * f;
        for j in 0..3 {
            let (s, c) = (scale * p[j]).sin_cos();
            primal[base + j] = s;
            primal[base + 3 + j] = c;
            if let Some(t) = tangents.as_mut() {
                t[j][base + j] = scale * c;
                t[j][base + 3 + j] = -scale * s;
            }
        }
    }
}
