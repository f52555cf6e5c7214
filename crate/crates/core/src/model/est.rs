use super::features::{CandidateInputs, RequestInputs, SeqInputs, SimilarityCache, UserInputs};
use super::layout::{self, BehaviorTokenizer, Ffn, Layer, Layout, Mlp};
use super::params::ParamStore;
use super::{Arch, BlockMask, ModelConfig, ModelError};
use crate::tensor::{Float, Graph, ParamId, Tensor, Var};

/// Additive logit for masked attention entries.
pub const MASK_LOGIT: f64 = -1e9;

/// Parameters plus the configuration that shapes them.
#[derive(Debug, Clone)]
pub struct Model<T: Float = f64> {
    pub cfg: ModelConfig,
    pub params: ParamStore<T>,
    pub(crate) layout: Layout,
}

/// User-side tensors of one layer, shared by every candidate of a request.
#[derive(Debug, Clone, Copy)]
pub struct UserStep {
    pub k: Option<Var>,
    pub v: Option<Var>,
}

/// Everything computed once per request on the user side.
#[derive(Debug, Clone)]
pub struct UserSide {
    pub steps: Vec<UserStep>,
    pub b_final: Option<Var>,
}

/// Attention probabilities of one full-attention layer for one sample, laid
/// out over the `[B_u, B_c, N]` sequence.
#[derive(Debug, Clone)]
pub struct AttentionMap<T: Float> {
    pub layer: usize,
    pub heads: usize,
    pub l_bu: usize,
    pub l_bc: usize,
    pub l_n: usize,
    /// `heads × L × L`, row = query.
    pub values: Vec<T>,
    /// Validity of every position (pads are false).
    pub valid: Vec<bool>,
}

fn some_rows(seq: &SeqInputs<impl Float>) -> bool {
    !seq.is_empty()
}

impl<T: Float> Model<T> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let (params, layout) = layout::build(&cfg, seed)?;
        Ok(Model { cfg, params, layout })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    fn p<'p>(&'p self, g: &mut Graph<'p, T>, id: ParamId) -> Var {
        g.param(id, self.params.get(id))
    }

    /// Affine layers with SiLU between them.
    pub fn mlp<'p>(&'p self, g: &mut Graph<'p, T>, mlp: &Mlp, x: Var) -> Result<Var, ModelError> {
        let mut h = x;
        for (i, &(w, b)) in mlp.layers.iter().enumerate() {
            let (w, b) = (self.p(g, w), self.p(g, b));
            h = g.matmul(h, w)?;
            h = g.add_row(h, b)?;
            if i + 1 < mlp.layers.len() {
                h = g.silu(h);
            }
        }
        Ok(h)
    }

    /// `x[i] · w[i]` for each row of `x` (`L×a`) and slab of `w` (`L×a×b`).
    pub(crate) fn per_token<'p>(&'p self, g: &mut Graph<'p, T>, x: Var, w: ParamId) -> Result<Var, ModelError> {
        let (l, a) = (g.shape(x)[0], g.shape(x)[1]);
        let b = self.params.get(w).shape()[2];
        let w = self.p(g, w);
        let x3 = g.reshape(x, &[l, 1, a])?;
        let y = g.bmm(x3, w)?;
        Ok(g.reshape(y, &[l, b])?)
    }

    /// SwiGLU with one weight set shared by every row.
    pub fn ffn_shared<'p>(&'p self, g: &mut Graph<'p, T>, f: &Ffn, x: Var) -> Result<Var, ModelError> {
        let (wg, wu, wd) = (self.p(g, f.gate), self.p(g, f.up), self.p(g, f.down));
        let gate = g.matmul(x, wg)?;
        let gate = g.silu(gate);
        let up = g.matmul(x, wu)?;
        let h = g.mul(gate, up)?;
        Ok(g.matmul(h, wd)?)
    }

    /// SwiGLU with a separate weight slab per row.
    pub fn ffn_per_token<'p>(&'p self, g: &mut Graph<'p, T>, f: &Ffn, x: Var) -> Result<Var, ModelError> {
        let gate = self.per_token(g, x, f.gate)?;
        let gate = g.silu(gate);
        let up = self.per_token(g, x, f.up)?;
        let h = g.mul(gate, up)?;
        self.per_token(g, h, f.down)
    }

    // ---- tokenizers ---------------------------------------------------------

    /// One token per non-behavioural field, in declaration order, plus the
    /// SimTier token when enabled.
    pub fn tokenize_non_behavioral<'p>(
        &'p self,
        g: &mut Graph<'p, T>,
        fields: &[u32],
        simtier: &[T],
    ) -> Result<Var, ModelError> {
        if fields.len() != self.cfg.fields.len() {
            return Err(ModelError::Schema(format!(
                "expected {} non-behavioural fields, got {}",
                self.cfg.fields.len(),
                fields.len()
            )));
        }
        let mut tokens = Vec::with_capacity(self.cfg.l_n());
        for (i, &id) in fields.iter().enumerate() {
            let table = self.layout.field_emb[i];
            let e = g
                .embedding(table, self.params.get(table), &[id])
                .map_err(|e| ModelError::Schema(format!("field `{}`: {e}", self.cfg.fields[i].name)))?;
            tokens.push(self.mlp(g, &self.layout.field_tok[i], e)?);
        }
        if let Some(tok) = &self.layout.simtier_tok {
            if simtier.len() != self.cfg.simtier_width() {
                return Err(ModelError::Schema(format!(
                    "SimTier input has {} values, expected {}",
                    simtier.len(),
                    self.cfg.simtier_width()
                )));
            }
            let x = g.constant(Tensor::new(&[1, simtier.len()], simtier.to_vec())?);
            tokens.push(self.mlp(g, tok, x)?);
        }
        Ok(g.concat_rows(&tokens)?)
    }

    /// `MLP_γ(item embedding ‖ category embedding)` per position.
    pub fn tokenize_behavioral<'p>(
        &'p self,
        g: &mut Graph<'p, T>,
        which: usize,
        items: &[u32],
        categories: &[u32],
    ) -> Result<Var, ModelError> {
        let t: &BehaviorTokenizer = &self.layout.beh_tok[which];
        let (ie, ce) = (self.layout.item_emb, self.layout.cat_emb);
        let ei = g
            .embedding(ie, self.params.get(ie), items)
            .map_err(|e| ModelError::Schema(format!("behaviour item: {e}")))?;
        let ec = g
            .embedding(ce, self.params.get(ce), categories)
            .map_err(|e| ModelError::Schema(format!("behaviour category: {e}")))?;
        let (wi, wc, b1, w2, b2) = (
            self.p(g, t.w_item),
            self.p(g, t.w_cat),
            self.p(g, t.b1),
            self.p(g, t.w2),
            self.p(g, t.b2),
        );
        let hi = g.matmul(ei, wi)?;
        let hc = g.matmul(ec, wc)?;
        let h = g.add(hi, hc)?;
        let h = g.add_row(h, b1)?;
        let h = g.silu(h);
        let h = g.matmul(h, w2)?;
        Ok(g.add_row(h, b2)?)
    }

    fn behavior_tokens<'p>(&'p self, g: &mut Graph<'p, T>, which: usize, seq: &SeqInputs<T>) -> Result<Option<Var>, ModelError> {
        if !some_rows(seq) {
            return Ok(None);
        }
        Ok(Some(self.tokenize_behavioral(g, which, &seq.items, &seq.categories)?))
    }

    // ---- attention ----------------------------------------------------------

    /// Multi-head scaled dot-product attention. `allowed` is `Lq×Lk`; rows
    /// with no allowed key produce zeros. Returns the output and the
    /// attention probabilities (`heads×Lq×Lk`).
    pub fn attention<'p>(
        &'p self,
        g: &mut Graph<'p, T>,
        q: Var,
        k: Var,
        v: Var,
        allowed: &[bool],
    ) -> Result<(Var, Var), ModelError> {
        let h = self.cfg.heads;
        let (lq, d) = (g.shape(q)[0], g.shape(q)[1]);
        let lk = g.shape(k)[0];
        let dh = d / h;
        let (q3, kt, v3) = if h == 1 {
            let q3 = g.reshape(q, &[1, lq, d])?;
            let kt = g.transpose(k)?;
            let kt = g.reshape(kt, &[1, d, lk])?;
            let v3 = g.reshape(v, &[1, lk, d])?;
            (q3, kt, v3)
        } else {
            let q3 = g.reshape(q, &[lq, h, dh])?;
            let q3 = g.permute(q3, &[1, 0, 2])?;
            let kt = g.reshape(k, &[lk, h, dh])?;
            let kt = g.permute(kt, &[1, 2, 0])?;
            let v3 = g.reshape(v, &[lk, h, dh])?;
            let v3 = g.permute(v3, &[1, 0, 2])?;
            (q3, kt, v3)
        };
        let s = g.bmm(q3, kt)?;
        let mut s = g.scale(s, T::of(1.0 / (dh as f64).sqrt()));
        if allowed.iter().any(|a| !a) {
            let m: Vec<T> = (0..h)
                .flat_map(|_| allowed.iter().map(|&a| if a { T::zero() } else { T::of(MASK_LOGIT) }))
                .collect();
            let m = g.constant(Tensor::new(&[h, lq, lk], m)?);
            s = g.add(s, m)?;
        }
        let mut a = g.softmax_rows(s)?;
        let dead: Vec<bool> = allowed.chunks(lk.max(1)).map(|r| !r.iter().any(|&x| x)).collect();
        if dead.iter().any(|&x| x) {
            let keep: Vec<T> = (0..h)
                .flat_map(|_| {
                    dead.iter()
                        .flat_map(move |&z| std::iter::repeat(if z { T::zero() } else { T::one() }).take(lk))
                })
                .collect();
            let keep = g.constant(Tensor::new(&[h, lq, lk], keep)?);
            a = g.mul(a, keep)?;
        }
        let o = g.bmm(a, v3)?;
        let o = if h == 1 {
            g.reshape(o, &[lq, d])?
        } else {
            let o = g.permute(o, &[1, 0, 2])?;
            g.reshape(o, &[lq, d])?
        };
        Ok((o, a))
    }

    /// Lightweight cross-attention: token-specific queries and outputs over
    /// shared-projection behaviour keys/values. `None` when every behaviour
    /// position is masked.
    pub fn lca<'p>(
        &'p self,
        g: &mut Graph<'p, T>,
        layer: usize,
        n_normed: Var,
        keys: Var,
        values: Var,
        key_mask: &[bool],
    ) -> Result<Option<Var>, ModelError> {
        if !key_mask.iter().any(|&m| m) {
            return Ok(None);
        }
        let l = &self.layout.layers[layer];
        let ln = g.shape(n_normed)[0];
        let q = self.per_token(g, n_normed, l.wq)?;
        let allowed: Vec<bool> = (0..ln).flat_map(|_| key_mask.iter().copied()).collect();
        let (o, _) = self.attention(g, q, keys, values, &allowed)?;
        Ok(Some(self.per_token(g, o, l.wo)?))
    }

    /// Content sparse attention: `O[i] = Σⱼ E[i,j] · B[Ω[i,j]]`.
    pub fn csa<'p>(&'p self, g: &mut Graph<'p, T>, b_normed: Var, cache: &SimilarityCache<T>) -> Result<Var, ModelError> {
        let (l, d) = (g.shape(b_normed)[0], g.shape(b_normed)[1]);
        let gathered = g.gather_rows(b_normed, &cache.idx, cache.k)?;
        let w = g.constant(Tensor::new(&[l, 1, cache.k], cache.weights.clone())?);
        let o = g.bmm(w, gathered)?;
        Ok(g.reshape(o, &[l, d])?)
    }

    fn kv<'p>(&'p self, g: &mut Graph<'p, T>, l: &Layer, bn: Var, candidate: bool) -> Result<(Var, Var), ModelError> {
        let (wk, wv) = match (candidate, l.wk_c, l.wv_c) {
            (true, Some(k), Some(v)) => (k, v),
            _ => (l.wk, l.wv),
        };
        let (wk, wv) = (self.p(g, wk), self.p(g, wv));
        Ok((g.matmul(bn, wk)?, g.matmul(bn, wv)?))
    }

    /// Behaviour-stream update shared by both sequences: CSA then the
    /// shared FFN, each pre-norm residual.
    fn behavior_update<'p>(
        &'p self,
        g: &mut Graph<'p, T>,
        l: &Layer,
        b: Var,
        bn: Var,
        cache: &SimilarityCache<T>,
    ) -> Result<Var, ModelError> {
        let csa = self.csa(g, bn, cache)?;
        let b1 = g.add(b, csa)?;
        let s2 = self.p(g, l.norm_b2);
        let bn2 = g.rms_norm(b1, s2)?;
        let f = self.ffn_shared(g, &l.ffn_b, bn2)?;
        Ok(g.add(b1, f)?)
    }

    /// User half of an EST block: depends on `B_u` only.
    pub fn user_step<'p>(
        &'p self,
        g: &mut Graph<'p, T>,
        layer: usize,
        bu: Option<Var>,
        cache: &SimilarityCache<T>,
    ) -> Result<(UserStep, Option<Var>), ModelError> {
        let Some(bu) = bu else {
            return Ok((UserStep { k: None, v: None }, None));
        };
        let l = &self.layout.layers[layer];
        let s1 = self.p(g, l.norm_b1);
        let bn = g.rms_norm(bu, s1)?;
        let (k, v) = self.kv(g, l, bn, false)?;
        let next = self.behavior_update(g, l, bu, bn, cache)?;
        Ok((UserStep { k: Some(k), v: Some(v) }, Some(next)))
    }

    /// Candidate half of an EST block, consuming the layer's user step.
    #[allow(clippy::too_many_arguments)]
    pub fn candidate_step<'p>(
        &'p self,
        g: &mut Graph<'p, T>,
        layer: usize,
        n: Var,
        bc: Option<Var>,
        cache: &SimilarityCache<T>,
        user: &UserStep,
        key_mask: &[bool],
    ) -> Result<(Var, Option<Var>), ModelError> {
        let l = &self.layout.layers[layer];
        let s_n1 = self.p(g, l.norm_n1);
        let nn = g.rms_norm(n, s_n1)?;
        let mut ks = Vec::new();
        let mut vs = Vec::new();
        if let (Some(k), Some(v)) = (user.k, user.v) {
            ks.push(k);
            vs.push(v);
        }
        let mut bc_next = None;
        if let Some(bc) = bc {
            let s1 = self.p(g, l.norm_b1);
            let bn = g.rms_norm(bc, s1)?;
            let (k, v) = self.kv(g, l, bn, true)?;
            ks.push(k);
            vs.push(v);
            bc_next = Some(self.behavior_update(g, l, bc, bn, cache)?);
        }
        let mut n1 = n;
        if !ks.is_empty() {
            let keys = if ks.len() == 1 { ks[0] } else { g.concat_rows(&ks)? };
            let values = if vs.len() == 1 { vs[0] } else { g.concat_rows(&vs)? };
            if let Some(o) = self.lca(g, layer, nn, keys, values, key_mask)? {
                n1 = g.add(n, o)?;
            }
        }
        let s_n2 = self.p(g, l.norm_n2);
        let nn2 = g.rms_norm(n1, s_n2)?;
        let f = self.ffn_per_token(g, &l.ffn_n, nn2)?;
        Ok((g.add(n1, f)?, bc_next))
    }

    /// One full EST block on a single sample.
    #[allow(clippy::too_many_arguments)]
    pub fn est_block<'p>(
        &'p self,
        g: &mut Graph<'p, T>,
        layer: usize,
        n: Var,
        bu: Option<Var>,
        bc: Option<Var>,
        user: &SeqInputs<T>,
        cand: &SeqInputs<T>,
    ) -> Result<(Var, Option<Var>, Option<Var>), ModelError> {
        let (step, bu_next) = self.user_step(g, layer, bu, &user.cache)?;
        let mask: Vec<bool> = user.mask.iter().chain(&cand.mask).copied().collect();
        let (n_next, bc_next) = self.candidate_step(g, layer, n, bc, &cand.cache, &step, &mask)?;
        Ok((n_next, bu_next, bc_next))
    }

    /// Runs the user half of every layer once.
    pub fn user_side<'p>(&'p self, g: &mut Graph<'p, T>, user: &UserInputs<T>) -> Result<UserSide, ModelError> {
        let mut bu = self.behavior_tokens(g, 0, &user.seq)?;
        let mut steps = Vec::with_capacity(self.cfg.layers);
        for s in 0..self.cfg.layers {
            let (step, next) = self.user_step(g, s, bu, &user.seq.cache)?;
            steps.push(step);
            bu = next;
        }
        Ok(UserSide { steps, b_final: bu })
    }

    fn head_input<'p>(
        &'p self,
        g: &mut Graph<'p, T>,
        n: Var,
        bu: Option<Var>,
        bc: Option<Var>,
        mask: &[bool],
    ) -> Result<Var, ModelError> {
        let parts: Vec<Var> = [bu, bc].into_iter().flatten().collect();
        let pooled = if parts.is_empty() {
            g.constant(Tensor::zeros(&[self.cfg.d]))
        } else {
            let b = if parts.len() == 1 { parts[0] } else { g.concat_rows(&parts)? };
            g.mean_rows(b, mask)?
        };
        let x = g.concat_flat(&[n, pooled])?;
        Ok(g.reshape(x, &[1, self.cfg.head_input()])?)
    }

    fn head<'p>(&'p self, g: &mut Graph<'p, T>, rows: &[Var]) -> Result<Var, ModelError> {
        let x = if rows.len() == 1 { rows[0] } else { g.concat_rows(rows)? };
        let logits = self.mlp(g, &self.layout.head, x)?;
        let p = g.sigmoid(logits);
        Ok(g.reshape(p, &[rows.len()])?)
    }

    /// Click probabilities (`[n]`) for `candidates`, computing user-side
    /// work once and sharing it across all of them.
    pub fn forward_request<'p>(
        &'p self,
        g: &mut Graph<'p, T>,
        user: &UserInputs<T>,
        candidates: &[CandidateInputs<T>],
    ) -> Result<Var, ModelError> {
        if candidates.is_empty() {
            return Err(ModelError::Schema("request has no candidates".into()));
        }
        let rows = match self.cfg.arch {
            Arch::Est => {
                let side = self.user_side(g, user)?;
                let mut rows = Vec::with_capacity(candidates.len());
                for c in candidates {
                    let fields: Vec<u32> = user.fields.iter().chain(&c.fields).copied().collect();
                    let mut n = self.tokenize_non_behavioral(g, &fields, &c.simtier)?;
                    let mut bc = self.behavior_tokens(g, 1, &c.seq)?;
                    let mask: Vec<bool> = user.seq.mask.iter().chain(&c.seq.mask).copied().collect();
                    for (s, step) in side.steps.iter().enumerate() {
                        let (n2, bc2) = self.candidate_step(g, s, n, bc, &c.seq.cache, step, &mask)?;
                        n = n2;
                        bc = bc2;
                    }
                    rows.push(self.head_input(g, n, side.b_final, bc, &mask)?);
                }
                rows
            }
            Arch::Full(blocks) => {
                let bu0 = self.behavior_tokens(g, 0, &user.seq)?;
                let mut rows = Vec::with_capacity(candidates.len());
                for c in candidates {
                    let (row, _) = self.full_sample(g, user, c, bu0, blocks, false)?;
                    rows.push(row);
                }
                rows
            }
        };
        self.head(g, &rows)
    }

    /// Click probability of one candidate with nothing shared.
    pub fn forward<'p>(
        &'p self,
        g: &mut Graph<'p, T>,
        user: &UserInputs<T>,
        candidate: &CandidateInputs<T>,
    ) -> Result<Var, ModelError> {
        self.forward_request(g, user, std::slice::from_ref(candidate))
    }

    /// Full self-attention stack over `[B_u, B_c, N]` for one candidate.
    /// Returns the head input row and, when `capture` is set, the attention
    /// probabilities of every layer.
    fn full_sample<'p>(
        &'p self,
        g: &mut Graph<'p, T>,
        user: &UserInputs<T>,
        c: &CandidateInputs<T>,
        bu0: Option<Var>,
        blocks: BlockMask,
        capture: bool,
    ) -> Result<(Var, Vec<Var>), ModelError> {
        let fields: Vec<u32> = user.fields.iter().chain(&c.fields).copied().collect();
        let mut n = self.tokenize_non_behavioral(g, &fields, &c.simtier)?;
        let mut bu = bu0;
        let mut bc = self.behavior_tokens(g, 1, &c.seq)?;
        let (lu, lc, ln) = (user.seq.len(), c.seq.len(), self.cfg.l_n());
        let valid: Vec<bool> = user
            .seq
            .mask
            .iter()
            .chain(&c.seq.mask)
            .copied()
            .chain(std::iter::repeat(true).take(ln))
            .collect();
        let is_b = |i: usize| i < lu + lc;
        let l_all = lu + lc + ln;
        let allowed: Vec<bool> = (0..l_all)
            .flat_map(|i| (0..l_all).map(move |j| (i, j)))
            .map(|(i, j)| valid[j] && blocks.allows(is_b(i), is_b(j)))
            .collect();
        let mut maps = Vec::new();
        for s in 0..self.cfg.layers {
            let l = &self.layout.layers[s];
            let (sn1, sb1) = (self.p(g, l.norm_n1), self.p(g, l.norm_b1));
            let nn = g.rms_norm(n, sn1)?;
            let mut parts = Vec::new();
            for b in [bu, bc].into_iter().flatten() {
                parts.push(g.rms_norm(b, sb1)?);
            }
            parts.push(nn);
            let x = g.concat_rows(&parts)?;
            let (wq, wk, wv, wo) = (self.p(g, l.wq), self.p(g, l.wk), self.p(g, l.wv), self.p(g, l.wo));
            let q = g.matmul(x, wq)?;
            let k = g.matmul(x, wk)?;
            let v = g.matmul(x, wv)?;
            let (o, a) = self.attention(g, q, k, v, &allowed)?;
            if capture {
                maps.push(a);
            }
            let o = g.matmul(o, wo)?;
            let mut start = 0;
            let mut split = |g: &mut Graph<'p, T>, b: Option<Var>, len: usize| -> Result<Option<Var>, ModelError> {
                let r = match b {
                    Some(b) => {
                        let part = g.slice_rows(o, start, len)?;
                        Some(g.add(b, part)?)
                    }
                    None => None,
                };
                start += len;
                Ok(r)
            };
            let bu1 = split(g, bu, lu)?;
            let bc1 = split(g, bc, lc)?;
            let on = g.slice_rows(o, lu + lc, ln)?;
            let n1 = g.add(n, on)?;
            let sn2 = self.p(g, l.norm_n2);
            let nn2 = g.rms_norm(n1, sn2)?;
            let f = self.ffn_per_token(g, &l.ffn_n, nn2)?;
            n = g.add(n1, f)?;
            let sb2 = self.p(g, l.norm_b2);
            let ffb = |g: &mut Graph<'p, T>, b: Option<Var>| -> Result<Option<Var>, ModelError> {
                match b {
                    Some(b) => {
                        let bn = g.rms_norm(b, sb2)?;
                        let f = self.ffn_shared(g, &l.ffn_b, bn)?;
                        Ok(Some(g.add(b, f)?))
                    }
                    None => Ok(None),
                }
            };
            bu = ffb(g, bu1)?;
            bc = ffb(g, bc1)?;
        }
        let mask: Vec<bool> = valid[..lu + lc].to_vec();
        Ok((self.head_input(g, n, bu, bc, &mask)?, maps))
    }

    // ---- convenience --------------------------------------------------------

    /// Decoupled inference: one graph per request.
    pub fn predict_request(&self, inputs: &RequestInputs<T>) -> Result<Vec<T>, ModelError> {
        Ok(self.predict_request_counted(inputs)?.0)
    }

    /// Predictions plus the matmul FLOPs the graph recorded.
    pub fn predict_request_counted(&self, inputs: &RequestInputs<T>) -> Result<(Vec<T>, u64), ModelError> {
        let mut g = Graph::inference();
        let p = self.forward_request(&mut g, &inputs.user, &inputs.candidates)?;
        Ok((g.value(p).to_vec(), g.matmul_flops()))
    }

    /// Reference path: an independent graph per candidate.
    pub fn predict_naive(&self, inputs: &RequestInputs<T>) -> Result<(Vec<T>, u64), ModelError> {
        let mut out = Vec::with_capacity(inputs.candidates.len());
        let mut flops = 0;
        for c in &inputs.candidates {
            let mut g = Graph::inference();
            let p = self.forward(&mut g, &inputs.user, c)?;
            out.push(g.value(p)[0]);
            flops += g.matmul_flops();
        }
        Ok((out, flops))
    }

    /// Attention probabilities of every layer for one candidate of a
    /// full-attention model.
    pub fn attention_maps(&self, inputs: &RequestInputs<T>, candidate: usize) -> Result<Vec<AttentionMap<T>>, ModelError> {
        let Arch::Full(blocks) = self.cfg.arch else {
            return Err(ModelError::Config("attention maps need a full-attention model".into()));
        };
        let c = inputs
            .candidates
            .get(candidate)
            .ok_or_else(|| ModelError::Schema(format!("no candidate {candidate}")))?;
        let mut g = Graph::inference();
        let bu0 = self.behavior_tokens(&mut g, 0, &inputs.user.seq)?;
        let (_, maps) = self.full_sample(&mut g, &inputs.user, c, bu0, blocks, true)?;
        let valid: Vec<bool> = inputs
            .user
            .seq
            .mask
            .iter()
            .chain(&c.seq.mask)
            .copied()
            .chain(std::iter::repeat(true).take(self.cfg.l_n()))
            .collect();
        Ok(maps
            .into_iter()
            .enumerate()
            .map(|(layer, a)| AttentionMap {
                layer,
                heads: self.cfg.heads,
                l_bu: inputs.user.seq.len(),
                l_bc: c.seq.len(),
                l_n: self.cfg.l_n(),
                values: g.value(a).to_vec(),
                valid: valid.clone(),
            })
            .collect())
    }

    /// Dense parameter count (embedding tables excluded).
    pub fn dense_params(&self) -> usize {
        self.params.count(super::ParamKind::Dense)
    }
}
