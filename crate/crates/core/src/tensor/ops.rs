//! Eager (non-recording) versions of the core tensor operations.

use super::error::{Result, TensorError};
use super::float::Float;
use super::kernels;
use super::tensor::Tensor;

pub fn matmul<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(TensorError::shape("matmul", a.shape(), b.shape()));
    }
    let mut out = vec![T::zero(); m * n];
    kernels::matmul_acc(a.data(), b.data(), &mut out, m, k, n);
    Tensor::new(&[m, n], out)
}

pub fn transpose<T: Float>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = a.dims2("transpose")?;
    let d = a.data();
    Ok(Tensor::from_fn(&[n, m], |f| {
        let (j, i) = (f / m, f % m);
        d[i * n + j]
    }))
}

pub fn softmax_rows<T: Float>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = x.dims2("softmax_rows")?;
    if !x.is_finite() {
        return Err(TensorError::NonFinite { op: "softmax_rows" });
    }
    let mut out = x.data().to_vec();
    kernels::softmax_rows_inplace(&mut out, n);
    Tensor::new(&[m, n], out)
}

/// RMS-normalises the trailing axis of `x` and multiplies by `scale`.
pub fn rms_norm<T: Float>(x: &Tensor<T>, scale: &Tensor<T>) -> Result<Tensor<T>> {
    let d = *x.shape().last().unwrap_or(&0);
    if d == 0 || scale.shape() != [d] {
        return Err(TensorError::shape("rms_norm", x.shape(), scale.shape()));
    }
    let mut out = vec![T::zero(); x.numel()];
    kernels::rms_norm(x.data(), scale.data(), d, &mut out);
    Tensor::new(x.shape(), out)
}

/// Row-wise top-k: indices (m×k, row-major) and values (m×k). Values are in
/// descending order; ties go to the lowest column index.
pub fn topk_rows<T: Float>(x: &Tensor<T>, k: usize) -> Result<(Vec<usize>, Tensor<T>)> {
    let (m, n) = x.dims2("topk_rows")?;
    if k == 0 || k > n {
        return Err(TensorError::arg(
            "topk_rows",
            format!("k = {k} must lie in 1..={n}"),
        ));
    }
    if !x.is_finite() {
        return Err(TensorError::NonFinite { op: "topk_rows" });
    }
    let mut indices = Vec::with_capacity(m * k);
    let mut values = Vec::with_capacity(m * k);
    for i in 0..m {
        let row = x.row(i);
        for j in kernels::topk_indices(row, k) {
            indices.push(j);
            values.push(row[j]);
        }
    }
    Ok((indices, Tensor::new(&[m, k], values)?))
}

/// out[i, j, :] = x[idx[i, j], :] for `idx` of shape (rows × k).
pub fn gather_rows<T: Float>(x: &Tensor<T>, idx: &[usize], k: usize) -> Result<Tensor<T>> {
    let (l, d) = x.dims2("gather_rows")?;
    if k == 0 || idx.len() % k != 0 {
        return Err(TensorError::arg(
            "gather_rows",
            format!("{} indices do not form rows of width {k}", idx.len()),
        ));
    }
    let mut out = Vec::with_capacity(idx.len() * d);
    for (position, &r) in idx.iter().enumerate() {
        if r >= l {
            return Err(TensorError::Index {
                op: "gather_rows",
                position,
                index: r,
                bound: l,
            });
        }
        out.extend_from_slice(x.row(r));
    }
    Tensor::new(&[idx.len() / k, k, d], out)
}

/// Mean binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7].
pub fn bce_loss<T: Float>(p: &[T], labels: &[T]) -> Result<T> {
    if p.len() != labels.len() || p.is_empty() {
        return Err(TensorError::shape("bce_loss", &[p.len()], &[labels.len()]));
    }
    let eps = T::of(super::graph::BCE_CLAMP);
    let total: T = p
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.max(eps).min(T::one() - eps);
            -(y * p.ln() + (T::one() - y) * (T::one() - p).ln())
        })
        .sum();
    Ok(total / T::of(p.len() as f64))
}
