use super::{ModelConfig, ModelError};
use crate::data::{gsu_retrieve, Catalog, Request, PAD};
use crate::tensor::{Float, Tensor};

/// Row-wise top-K of a sequence's content self-similarity `G = M·Mᵀ`.
///
/// Padded columns are never selected. A row with fewer than `k` valid
/// neighbours keeps all of them and fills the rest with weight 0 pointing
/// at itself; padded rows are all filler.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityCache<T: Float> {
    pub len: usize,
    pub k: usize,
    /// `len × k` neighbour positions.
    pub idx: Vec<usize>,
    /// `len × k` weights, non-increasing over each row's valid prefix.
    pub weights: Vec<T>,
    /// Number of real (non-filler) entries per row.
    pub valid: Vec<usize>,
}

impl<T: Float> SimilarityCache<T> {
    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        (&self.idx[i * self.k..(i + 1) * self.k], &self.weights[i * self.k..(i + 1) * self.k])
    }
}

/// Builds the cache from unit-norm content rows `m` (`L × d_M`).
pub fn build_similarity_cache<T: Float>(m: &Tensor<T>, mask: &[bool], k: usize, softmax: bool) -> SimilarityCache<T> {
    let (len, dm) = match m.shape() {
        &[l, d] => (l, d),
        _ => (0, 0),
    };
    let data = m.data();
    let row = |i: usize| &data[i * dm..(i + 1) * dm];
    let mut idx = Vec::with_capacity(len * k);
    let mut weights = Vec::with_capacity(len * k);
    let mut valid = Vec::with_capacity(len);
    for i in 0..len {
        let mut cand: Vec<(usize, T)> = Vec::new();
        if mask[i] {
            for j in (0..len).filter(|&j| mask[j]) {
                let g = row(i).iter().zip(row(j)).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
                cand.push((j, g));
            }
        }
        // descending similarity, lower position first on ties
        cand.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
        cand.truncate(k);
        if softmax && !cand.is_empty() {
            let max = cand[0].1;
            let exps: Vec<T> = cand.iter().map(|c| (c.1 - max).exp()).collect();
            let z: T = exps.iter().copied().sum();
            for (c, e) in cand.iter_mut().zip(exps) {
                c.1 = e / z;
            }
        }
        valid.push(cand.len());
        for j in 0..k {
            match cand.get(j) {
                Some(&(p, w)) => {
                    idx.push(p);
                    weights.push(w);
                }
                None => {
                    idx.push(i);
                    weights.push(T::zero());
                }
            }
        }
    }
    SimilarityCache {
        len,
        k,
        idx,
        weights,
        valid,
    }
}

/// Normalised histogram of `cos(candidate, item)` over the unmasked rows of
/// `m`, using `bins` equal bins of [-1, 1]. Returns the histogram and an
/// emptiness flag; an empty sequence yields all zeros.
pub fn simtier_histogram<T: Float>(m: &Tensor<T>, mask: &[bool], candidate: &[T], bins: usize) -> (Vec<T>, bool) {
    let mut hist = vec![T::zero(); bins];
    let dm = candidate.len();
    let mut count = 0usize;
    for (i, r) in m.data().chunks(dm.max(1)).enumerate() {
        if !mask[i] {
            continue;
        }
        let cos = r.iter().zip(candidate).fold(0.0, |acc, (&a, &b)| acc + a.as_f64() * b.as_f64());
        hist[simtier_bin(cos, bins)] += T::one();
        count += 1;
    }
    if count > 0 {
        let inv = T::one() / T::of(count as f64);
        hist.iter_mut().for_each(|h| *h *= inv);
    }
    (hist, count == 0)
}

/// Bin of a cosine in `bins` equal slices of [-1, 1]; 1.0 lands in the top bin.
pub fn simtier_bin(cos: f64, bins: usize) -> usize {
    let b = ((cos.clamp(-1.0, 1.0) + 1.0) / 2.0 * bins as f64).floor() as usize;
    b.min(bins - 1)
}

/// Content rows of `items` (zero for pads).
pub fn content_matrix<T: Float>(catalog: &Catalog, items: &[u32]) -> Tensor<T> {
    let dm = catalog.d_m;
    let mut data = vec![T::zero(); items.len() * dm];
    for (row, &id) in data.chunks_mut(dm.max(1)).zip(items) {
        if id != PAD {
            for (o, &c) in row.iter_mut().zip(catalog.content_row(id)) {
                *o = T::of(c as f64);
            }
        }
    }
    Tensor::new(&[items.len(), dm], data).expect("consistent shape")
}

/// One behaviour sequence ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqInputs<T: Float> {
    pub items: Vec<u32>,
    pub categories: Vec<u32>,
    pub mask: Vec<bool>,
    pub cache: SimilarityCache<T>,
}

impl<T: Float> SeqInputs<T> {
    pub fn new(catalog: &Catalog, items: Vec<u32>, k: usize, softmax: bool) -> Self {
        let mask: Vec<bool> = items.iter().map(|&i| i != PAD).collect();
        let categories = items
            .iter()
            .map(|&i| if i == PAD { PAD } else { catalog.category(i) })
            .collect();
        let m = content_matrix(catalog, &items);
        let cache = build_similarity_cache(&m, &mask, k, softmax);
        SeqInputs {
            items,
            categories,
            mask,
            cache,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserInputs<T: Float> {
    pub user_id: u64,
    pub fields: Vec<u32>,
    pub seq: SeqInputs<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateInputs<T: Float> {
    pub item_id: u64,
    pub fields: Vec<u32>,
    pub seq: SeqInputs<T>,
    /// SimTier input vector, empty when the token is disabled.
    pub simtier: Vec<T>,
    pub label: u8,
}

/// Model-ready view of one request.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestInputs<T: Float> {
    pub user: UserInputs<T>,
    pub candidates: Vec<CandidateInputs<T>>,
}

impl<T: Float> RequestInputs<T> {
    pub fn labels(&self) -> Vec<u8> {
        self.candidates.iter().map(|c| c.label).collect()
    }
}

/// Short sequence (last `l_bu` behaviours), GSU subsequence per candidate,
/// similarity caches and SimTier histograms.
pub fn featurize<T: Float>(cfg: &ModelConfig, catalog: &Catalog, req: &Request) -> Result<RequestInputs<T>, ModelError> {
    let n_cand_fields = cfg.fields.len().saturating_sub(req.user_fields.len());
    let short: Vec<u32> = req.short_seq.iter().copied().filter(|&i| i != PAD).collect();
    let mut bu = short[short.len().saturating_sub(cfg.l_bu)..].to_vec();
    bu.resize(cfg.l_bu, PAD);
    let user_seq = SeqInputs::new(catalog, bu, cfg.k, cfg.csa_softmax);
    let m_u: Tensor<T> = content_matrix(catalog, &user_seq.items);

    let mut candidates = Vec::with_capacity(req.candidates.len());
    for c in &req.candidates {
        if req.user_fields.len() + c.fields.len() != cfg.fields.len() {
            return Err(ModelError::Schema(format!(
                "expected {} non-behavioural fields, got {} user + {} candidate",
                cfg.fields.len(),
                req.user_fields.len(),
                c.fields.len()
            )));
        }
        debug_assert_eq!(c.fields.len(), n_cand_fields);
        if c.item_id >= catalog.num_items as u64 {
            return Err(ModelError::Schema(format!("candidate {} outside the catalog", c.item_id)));
        }
        let cand = c.item_id as u32;
        let mut bc = gsu_retrieve(&req.lifelong_seq, cand, catalog, cfg.l_bc);
        bc.resize(cfg.l_bc, PAD);
        let seq = SeqInputs::new(catalog, bc, cfg.k, cfg.csa_softmax);
        let simtier = if cfg.simtier_bins > 0 {
            let content: Vec<T> = catalog.content_row(cand).iter().map(|&x| T::of(x as f64)).collect();
            let m_c: Tensor<T> = content_matrix(catalog, &seq.items);
            let (hu, eu) = simtier_histogram(&m_u, &user_seq.mask, &content, cfg.simtier_bins);
            let (hc, ec) = simtier_histogram(&m_c, &seq.mask, &content, cfg.simtier_bins);
            let flag = |e: bool| if e { T::one() } else { T::zero() };
            hu.into_iter().chain([flag(eu)]).chain(hc).chain([flag(ec)]).collect()
        } else {
            Vec::new()
        };
        candidates.push(CandidateInputs {
            item_id: c.item_id,
            fields: c.fields.clone(),
            seq,
            simtier,
            label: c.label,
        });
    }
    Ok(RequestInputs {
        user: UserInputs {
            user_id: req.user_id,
            fields: req.user_fields.clone(),
            seq: user_seq,
        },
        candidates,
    })
}
