//! Feature similarity metrics. Patches are stored channel-major: value of
//! channel `c` at position `j` is `patch[c * n + j]` for `n` positions.
//! Every `*_grad` variant also writes the derivative with respect to the
//! source patch into `grad`.

/// Cosine similarity; zero when either vector has zero norm.
pub fn pixel_similarity(r: &[f64], s: &[f64]) -> f64 {
    let (nr, ns, dot) = norms_dot(r, s, 1);
    if nr == 0.0 || ns == 0.0 {
        return 0.0;
    }
    (dot / (nr * ns)).clamp(-1.0, 1.0)
}

fn norms_dot(r: &[f64], s: &[f64], stride: usize) -> (f64, f64, f64) {
    let (mut rr, mut ss, mut rs) = (0.0, 0.0, 0.0);
    for (a, b) in r.iter().step_by(stride).zip(s.iter().step_by(stride)) {
        rr += a * a;
        ss += b * b;
        rs += a * b;
    }
    (rr.sqrt(), ss.sqrt(), rs)
}

/// Cosine similarity of strided vectors with gradient written at the same
/// stride into `grad`.
fn cosine_grad_strided(r: &[f64], s: &[f64], stride: usize, grad: &mut [f64], scale: f64) -> f64 {
    let (nr, ns, dot) = norms_dot(r, s, stride);
    if nr == 0.0 || ns == 0.0 {
        return 0.0;
    }
    let cos = dot / (nr * ns);
    for ((g, a), b) in grad.iter_mut().step_by(stride).zip(r.iter().step_by(stride)).zip(s.iter().step_by(stride)) {
        *g += scale * (a / (nr * ns) - cos * b / (ns * ns));
    }
    cos
}

pub fn pixel_similarity_grad(r: &[f64], s: &[f64], grad: &mut [f64]) -> f64 {
    grad.fill(0.0);
    cosine_grad_strided(r, s, 1, grad, 1.0)
}

/// Mean over positions of the cosine similarity of the channel vectors.
pub fn patch_sim(r: &[f64], s: &[f64], channels: usize) -> f64 {
    let n = r.len() / channels;
    let total: f64 = (0..n).map(|j| pixel_similarity_strided(&r[j..], &s[j..], n)).sum();
    total / n as f64
}

fn pixel_similarity_strided(r: &[f64], s: &[f64], stride: usize) -> f64 {
    let (nr, ns, dot) = norms_dot(r, s, stride);
    if nr == 0.0 || ns == 0.0 {
        return 0.0;
    }
    (dot / (nr * ns)).clamp(-1.0, 1.0)
}

pub fn patch_sim_grad(r: &[f64], s: &[f64], channels: usize, grad: &mut [f64]) -> f64 {
    grad.fill(0.0);
    let n = r.len() / channels;
    let scale = 1.0 / n as f64;
    let mut total = 0.0;
    for j in 0..n {
        total += cosine_grad_strided(&r[j..], &s[j..], n, &mut grad[j..], scale);
    }
    total / n as f64
}

struct Moments {
    mu_r: f64,
    mu_s: f64,
    var_r: f64,
    var_s: f64,
    cov: f64,
}

fn moments(r: &[f64], s: &[f64]) -> Moments {
    let n = r.len() as f64;
    let mu_r = r.iter().sum::<f64>() / n;
    let mu_s = s.iter().sum::<f64>() / n;
    let (mut var_r, mut var_s, mut cov) = (0.0, 0.0, 0.0);
    for (a, b) in r.iter().zip(s) {
        let (da, db) = (a - mu_r, b - mu_s);
        var_r += da * da;
        var_s += db * db;
        cov += da * db;
    }
    Moments { mu_r, mu_s, var_r: var_r / n, var_s: var_s / n, cov: cov / n }
}

/// Channel-averaged normalised cross-correlation,
/// `Cov / sqrt(Var_r Var_s + eps^2)` per channel.
pub fn patch_ncc(r: &[f64], s: &[f64], channels: usize, eps_var: f64) -> f64 {
    let n = r.len() / channels;
    let mut total = 0.0;
    for c in 0..channels {
        let m = moments(&r[c * n..(c + 1) * n], &s[c * n..(c + 1) * n]);
        total += m.cov / (m.var_r * m.var_s + eps_var * eps_var).sqrt();
    }
    total / channels as f64
}

pub fn patch_ncc_grad(r: &[f64], s: &[f64], channels: usize, eps_var: f64, grad: &mut [f64]) -> f64 {
    let n = r.len() / channels;
    let nf = n as f64;
    let mut total = 0.0;
    for c in 0..channels {
        let range = c * n..(c + 1) * n;
        let (rc, sc) = (&r[range.clone()], &s[range.clone()]);
        let m = moments(rc, sc);
        let q = m.var_r * m.var_s + eps_var * eps_var;
        let sq = q.sqrt();
        total += m.cov / sq;
        let k = m.cov * m.var_r / (q * sq);
        for ((g, a), b) in grad[range].iter_mut().zip(rc).zip(sc) {
            *g = ((a - m.mu_r) / sq - k * (b - m.mu_s)) / (nf * channels as f64);
        }
    }
    total / channels as f64
}

/// Channel-averaged SSIM with stabilising constants `c1`, `c2`.
pub fn patch_ssim(r: &[f64], s: &[f64], channels: usize, c1: f64, c2: f64) -> f64 {
    let n = r.len() / channels;
    let mut total = 0.0;
    for c in 0..channels {
        let m = moments(&r[c * n..(c + 1) * n], &s[c * n..(c + 1) * n]);
        total += ssim_terms(&m, c1, c2).value();
    }
    total / channels as f64
}

struct SsimTerms {
    a1: f64,
    a2: f64,
    b1: f64,
    b2: f64,
}

impl SsimTerms {
    fn value(&self) -> f64 {
        self.a1 * self.a2 / (self.b1 * self.b2)
    }
}

fn ssim_terms(m: &Moments, c1: f64, c2: f64) -> SsimTerms {
    SsimTerms {
        a1: 2.0 * m.mu_r * m.mu_s + c1,
        a2: 2.0 * m.cov + c2,
        b1: m.mu_r * m.mu_r + m.mu_s * m.mu_s + c1,
        b2: m.var_r + m.var_s + c2,
    }
}

pub fn patch_ssim_grad(r: &[f64], s: &[f64], channels: usize, c1: f64, c2: f64, grad: &mut [f64]) -> f64 {
    let n = r.len() / channels;
    let nf = n as f64;
    let mut total = 0.0;
    for c in 0..channels {
        let range = c * n..(c + 1) * n;
        let (rc, sc) = (&r[range.clone()], &s[range.clone()]);
        let m = moments(rc, sc);
        let t = ssim_terms(&m, c1, c2);
        let value = t.value();
        total += value;
        let den = t.b1 * t.b2;
        for ((g, a), b) in grad[range].iter_mut().zip(rc).zip(sc) {
            let da1 = 2.0 * m.mu_r / nf;
            let da2 = 2.0 * (a - m.mu_r) / nf;
            let db1 = 2.0 * m.mu_s / nf;
            let db2 = 2.0 * (b - m.mu_s) / nf;
            let d = (da1 * t.a2 + t.a1 * da2) / den - value * (db1 / t.b1 + db2 / t.b2);
            *g = d / channels as f64;
        }
    }
    total / channels as f64
}
