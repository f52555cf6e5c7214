use super::MetricError;
use crate::tensor::{Float, Tensor};

pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITERS: usize = 1000;

/// `‖H‖²_F / ‖H‖²₂ / max(m, n)` for a 2-D tensor.
pub fn effective_rank<T: Float>(h: &Tensor<T>) -> Result<f64, MetricError> {
    let [m, n] = match h.shape() {
        &[m, n] => [m, n],
        s => return Err(MetricError::Argument(format!("effective_rank needs a matrix, got {s:?}"))),
    };
    let data: Vec<f64> = h.data().iter().map(|x| x.as_f64()).collect();
    effective_rank_raw(&data, m, n)
}

pub fn effective_rank_raw(h: &[f64], m: usize, n: usize) -> Result<f64, MetricError> {
    let fro: f64 = h.iter().map(|x| x * x).sum();
    if m * n == 0 || fro == 0.0 {
        return Err(MetricError::Undefined("effective rank of a zero matrix".into()));
    }
    if !fro.is_finite() {
        return Err(MetricError::Argument("non-finite matrix".into()));
    }
    Ok(fro / spectral_norm_sq(h, m, n) / m.max(n) as f64)
}

/// Largest eigenvalue of HᵀH by power iteration.
pub fn spectral_norm_sq(h: &[f64], m: usize, n: usize) -> f64 {
    // deterministic start with no special alignment to any axis
    let mut v: Vec<f64> = (0..n).map(|j| 1.0 + ((j as f64 + 1.0) * 0.618_033_988_749_895).fract()).collect();
    normalize(&mut v);
    let mut hv = vec![0.0; m];
    let mut w = vec![0.0; n];
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        for (i, out) in hv.iter_mut().enumerate() {
            *out = h[i * n..(i + 1) * n].iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        w.iter_mut().for_each(|x| *x = 0.0);
        for (i, &s) in hv.iter().enumerate() {
            for (wj, &a) in w.iter_mut().zip(&h[i * n..(i + 1) * n]) {
                *wj += a * s;
            }
        }
        // Rayleigh quotient ‖Hv‖² / ‖v‖²; v is scaled to max |vⱼ| = 1 rather
        // than unit length so exactly representable spectra stay exact
        let next: f64 = hv.iter().map(|x| x * x).sum::<f64>() / v.iter().map(|x| x * x).sum::<f64>();
        let norm = normalize(&mut w);
        if norm == 0.0 {
            // start vector in the null space; fall back to a basis sweep
            return (0..n)
                .map(|j| (0..m).map(|i| h[i * n + j] * h[i * n + j]).sum::<f64>())
                .fold(0.0, f64::max);
        }
        std::mem::swap(&mut v, &mut w);
        let done = (next - lambda).abs() <= POWER_TOL * next;
        lambda = next;
        if done {
            break;
        }
    }
    lambda
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().fold(0.0, |m: f64, x| m.max(x.abs()));
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}
