//! Pooled-summary logistic regression: the reference point that ignores
//! per-item candidate × behaviour interactions.
//!
//! Features per impression are the mean lifelong content vector `m̄`, the
//! candidate content `c`, their elementwise product `m̄ ⊙ c` and one-hot
//! encodings of the user segment, activity level and candidate category.
//! The product lets the model score `⟨m̄, c⟩`, the best any pooled summary can
//! say about candidate relevance; only the per-item top-K structure is hidden.

use crate::data::{Catalog, GenConfig, Request};

#[derive(Debug, Clone)]
pub struct LogisticConfig {
    pub iterations: usize,
    pub lr: f64,
    pub l2: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            iterations: 300,
            lr: 0.05,
            l2: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PooledLogistic {
    mean: Vec<f64>,
    scale: Vec<f64>,
    weights: Vec<f64>,
    bias: f64,
    widths: Widths,
}

/// One-hot widths: (profile segments, activity levels, clusters).
type Widths = (usize, usize, usize);

fn features(widths: Widths, catalog: &Catalog, req: &Request) -> Vec<Vec<f64>> {
    let d = catalog.d_m;
    let mut pooled = vec![0.0; d];
    let mut n = 0usize;
    for item in req.valid_lifelong() {
        for (p, &x) in pooled.iter_mut().zip(catalog.content_row(item)) {
            *p += x as f64;
        }
        n += 1;
    }
    if n > 0 {
        pooled.iter_mut().for_each(|p| *p /= n as f64);
    }
    let (p, a, c) = widths;
    req.candidates
        .iter()
        .map(|cand| {
            let row = catalog.content_row(cand.item_id as u32);
            let mut f = Vec::with_capacity(3 * d + p + a + c);
            f.extend(pooled.iter().copied());
            f.extend(row.iter().map(|&x| x as f64));
            f.extend(pooled.iter().zip(row).map(|(m, &x)| m * x as f64));
            let mut onehot = |k: usize, v: usize| f.extend((0..k).map(|i| (i == v) as u8 as f64));
            onehot(p, req.user_fields[0] as usize);
            onehot(a, req.user_fields[1] as usize);
            onehot(c, catalog.category(cand.item_id as u32) as usize);
            f
        })
        .collect()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl PooledLogistic {
    /// Full-batch Adam on standardised features.
    pub fn fit(cfg: &GenConfig, catalog: &Catalog, requests: &[Request], opts: &LogisticConfig) -> Self {
        let widths = (
            cfg.profile_segments as usize,
            cfg.activity_levels as usize,
            cfg.clusters as usize,
        );
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for r in requests {
            xs.extend(features(widths, catalog, r));
            ys.extend(r.candidates.iter().map(|c| c.label as f64));
        }
        let dim = xs.first().map_or(0, Vec::len);
        let n = xs.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for x in &xs {
            mean.iter_mut().zip(x).for_each(|(m, v)| *m += v / n);
        }
        let mut scale = vec![0.0; dim];
        for x in &xs {
            scale.iter_mut().zip(x.iter().zip(&mean)).for_each(|(s, (v, m))| *s += (v - m).powi(2) / n);
        }
        scale.iter_mut().for_each(|s| *s = if *s > 1e-12 { 1.0 / s.sqrt() } else { 0.0 });
        for x in &mut xs {
            x.iter_mut().zip(mean.iter().zip(&scale)).for_each(|(v, (m, s))| *v = (*v - m) * s);
        }

        // Parameters: weights then bias.
        let mut w = vec![0.0; dim + 1];
        let (mut m1, mut m2) = (vec![0.0; dim + 1], vec![0.0; dim + 1]);
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let mut grad = vec![0.0; dim + 1];
        for t in 1..=opts.iterations {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for (x, &y) in xs.iter().zip(&ys) {
                let z = w[dim] + x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
                let e = (sigmoid(z) - y) / n;
                grad[..dim].iter_mut().zip(x).for_each(|(g, v)| *g += e * v);
                grad[dim] += e;
            }
            for i in 0..dim {
                grad[i] += opts.l2 * w[i];
            }
            let (c1, c2) = (1.0 - f64::powi(b1, t as i32), 1.0 - f64::powi(b2, t as i32));
            for i in 0..=dim {
                m1[i] = b1 * m1[i] + (1.0 - b1) * grad[i];
                m2[i] = b2 * m2[i] + (1.0 - b2) * grad[i] * grad[i];
                w[i] -= opts.lr * (m1[i] / c1) / ((m2[i] / c2).sqrt() + eps);
            }
        }
        let bias = w.pop().unwrap_or(0.0);
        PooledLogistic {
            mean,
            scale,
            weights: w,
            bias,
            widths,
        }
    }

    /// Click probabilities for every candidate of `req`.
    pub fn predict(&self, catalog: &Catalog, req: &Request) -> Vec<f64> {
        features(self.widths, catalog, req)
            .into_iter()
            .map(|x| {
                let z = self.bias
                    + x.iter()
                        .zip(self.mean.iter().zip(&self.scale))
                        .zip(&self.weights)
                        .map(|((v, (m, s)), w)| (v - m) * s * w)
                        .sum::<f64>();
                sigmoid(z)
            })
            .collect()
    }
}
