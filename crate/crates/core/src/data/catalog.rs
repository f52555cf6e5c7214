use rand::Rng;
use rand_distr::StandardNormal;

use super::{DataError, GenConfig};
use crate::seed;

/// Item universe with frozen, unit-norm content vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    pub num_items: usize,
    pub d_m: usize,
    /// num_items × d_m, row-major.
    pub content: Vec<f32>,
    /// Category of every item; equals its content cluster.
    pub item_category: Vec<u32>,
    /// clusters × d_m, row-major.
    pub cluster_centers: Vec<f32>,
}

impl Catalog {
    pub fn content_row(&self, item: u32) -> &[f32] {
        let i = item as usize;
        &self.content[i * self.d_m..(i + 1) * self.d_m]
    }

    pub fn category(&self, item: u32) -> u32 {
        self.item_category[item as usize]
    }

    pub fn num_clusters(&self) -> usize {
        self.cluster_centers.len() / self.d_m.max(1)
    }

    /// Items of each cluster, in id order.
    pub fn cluster_members(&self) -> Vec<Vec<u32>> {
        let mut members = vec![Vec::new(); self.num_clusters()];
        for (i, &c) in self.item_category.iter().enumerate() {
            members[c as usize].push(i as u32);
        }
        members
    }

    pub fn cosine(&self, a: u32, b: u32) -> f64 {
        dot(self.content_row(a), self.content_row(b))
    }
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

pub(crate) fn cluster_centers(cfg: &GenConfig) -> Vec<Vec<f64>> {
    let d = cfg.d_m as usize;
    let mut rng = seed::rng(cfg.seed, "cluster_centers", 0);
    (0..cfg.clusters)
        .map(|_| {
            let mut c: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            normalize(&mut c);
            c
        })
        .collect()
}

/// Draws cluster centres uniformly on the sphere and perturbs them into items:
/// `item = normalize(center + noise)`, with item `i` in cluster `i mod C`.
pub fn generate_catalog(cfg: &GenConfig) -> Result<Catalog, DataError> {
    cfg.validate()?;
    let d = cfg.d_m as usize;
    let n = cfg.num_items as usize;
    let c = cfg.clusters as usize;
    let centers = cluster_centers(cfg);
    let sigma = cfg.item_noise / (d as f64).sqrt();
    let mut rng = seed::rng(cfg.seed, "item_content", 0);
    let mut content = Vec::with_capacity(n * d);
    let mut item_category = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % c;
        let mut v: Vec<f64> = centers[k]
            .iter()
            .map(|&x| x + sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        normalize(&mut v);
        content.extend(v.iter().map(|&x| x as f32));
        item_category.push(k as u32);
    }
    Ok(Catalog {
        num_items: n,
        d_m: d,
        content,
        item_category,
        cluster_centers: centers.iter().flatten().map(|&x| x as f32).collect(),
    })
}
