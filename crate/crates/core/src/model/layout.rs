use super::params::{truncated_normal, ParamKind, ParamStore};
use super::{Arch, FieldTable, ModelConfig, ModelError};
use crate::seed;
use crate::tensor::{Float, ParamId, Tensor};

/// Weight/bias pairs applied with SiLU between them.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<(ParamId, ParamId)>,
}

/// SwiGLU feed-forward. Shared FFNs hold `d×h` matrices; per-token FFNs
/// stack one slab per non-behavioural token (`L_N×d×h`).
#[derive(Debug, Clone)]
pub struct Ffn {
    pub gate: ParamId,
    pub up: ParamId,
    pub down: ParamId,
}

#[derive(Debug, Clone)]
pub struct BehaviorTokenizer {
    pub w_item: ParamId,
    pub w_cat: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone)]
pub struct Layer {
    pub norm_n1: ParamId,
    pub norm_b1: ParamId,
    /// Token-specific `L_N×d×d` for EST, shared `d×d` for full attention.
    pub wq: ParamId,
    pub wo: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    /// Separate projections for the candidate sequence when not shared.
    pub wk_c: Option<ParamId>,
    pub wv_c: Option<ParamId>,
    pub norm_n2: ParamId,
    pub norm_b2: ParamId,
    pub ffn_n: Ffn,
    pub ffn_b: Ffn,
}

#[derive(Debug, Clone)]
pub struct Layout {
    pub item_emb: ParamId,
    pub cat_emb: ParamId,
    /// Embedding table used by each non-behavioural field.
    pub field_emb: Vec<ParamId>,
    pub field_tok: Vec<Mlp>,
    pub simtier_tok: Option<Mlp>,
    /// Tokenizers for the user and candidate sequences.
    pub beh_tok: [BehaviorTokenizer; 2],
    pub layers: Vec<Layer>,
    pub head: Mlp,
}

struct Builder<'a, T: Float> {
    store: &'a mut ParamStore<T>,
    cfg: &'a ModelConfig,
    seed: u64,
}

impl<T: Float> Builder<'_, T> {
    fn add(&mut self, name: &str, kind: ParamKind, t: Tensor<T>) -> Result<ParamId, ModelError> {
        self.store.add(name, kind, t)
    }

    fn normal(&mut self, name: &str, shape: &[usize], std: f64, kind: ParamKind) -> Result<ParamId, ModelError> {
        let mut rng = seed::rng(self.seed, name, 0);
        let t = truncated_normal(&mut rng, shape, std);
        self.add(name, kind, t)
    }

    /// Token-specific stack whose slab `i` is drawn from its own stream, so
    /// appending a token leaves the existing slabs untouched.
    fn per_token(&mut self, name: &str, tokens: usize, rows: usize, cols: usize, zero: bool) -> Result<ParamId, ModelError> {
        let mut data = Vec::with_capacity(tokens * rows * cols);
        for t in 0..tokens {
            if zero {
                data.extend(std::iter::repeat(T::zero()).take(rows * cols));
            } else {
                let mut rng = seed::rng(self.seed, name, t as u64);
                data.extend(truncated_normal::<_, T>(&mut rng, &[rows, cols], self.cfg.init_std).into_data());
            }
        }
        self.add(name, ParamKind::Dense, Tensor::new(&[tokens, rows, cols], data)?)
    }

    fn dense(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId, ModelError> {
        self.normal(name, &[rows, cols], self.cfg.init_std, ParamKind::Dense)
    }

    fn output(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId, ModelError> {
        if self.cfg.zero_init_outputs {
            self.add(name, ParamKind::Dense, Tensor::zeros(&[rows, cols]))
        } else {
            self.dense(name, rows, cols)
        }
    }

    fn zeros(&mut self, name: &str, n: usize) -> Result<ParamId, ModelError> {
        self.add(name, ParamKind::Dense, Tensor::zeros(&[n]))
    }

    fn ones(&mut self, name: &str, n: usize) -> Result<ParamId, ModelError> {
        self.add(name, ParamKind::Dense, Tensor::ones(&[n]))
    }

    fn mlp(&mut self, name: &str, widths: &[usize]) -> Result<Mlp, ModelError> {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                Ok((
                    self.dense(&format!("{name}.{i}.w"), w[0], w[1])?,
                    self.zeros(&format!("{name}.{i}.b"), w[1])?,
                ))
            })
            .collect::<Result<_, ModelError>>()?;
        Ok(Mlp { layers })
    }

    fn ffn(&mut self, name: &str, per_token: Option<usize>) -> Result<Ffn, ModelError> {
        let (d, h) = (self.cfg.d, self.cfg.ffn_hidden());
        let zero = self.cfg.zero_init_outputs;
        Ok(match per_token {
            Some(n) => Ffn {
                gate: self.per_token(&format!("{name}.gate"), n, d, h, false)?,
                up: self.per_token(&format!("{name}.up"), n, d, h, false)?,
                down: self.per_token(&format!("{name}.down"), n, h, d, zero)?,
            },
            None => Ffn {
                gate: self.dense(&format!("{name}.gate"), d, h)?,
                up: self.dense(&format!("{name}.up"), d, h)?,
                down: self.output(&format!("{name}.down"), h, d)?,
            },
        })
    }

    fn behavior(&mut self, name: &str) -> Result<BehaviorTokenizer, ModelError> {
        let (e, d) = (self.cfg.emb_dim, self.cfg.d);
        Ok(BehaviorTokenizer {
            w_item: self.dense(&format!("{name}.w_item"), e, d)?,
            w_cat: self.dense(&format!("{name}.w_cat"), e, d)?,
            b1: self.zeros(&format!("{name}.b1"), d)?,
            w2: self.dense(&format!("{name}.w2"), d, d)?,
            b2: self.zeros(&format!("{name}.b2"), d)?,
        })
    }
}

/// Allocates and initialises every parameter for `cfg`.
pub fn build<T: Float>(cfg: &ModelConfig, seed: u64) -> Result<(ParamStore<T>, Layout), ModelError> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    let layout = {
        let mut b = Builder {
            store: &mut store,
            cfg,
            seed,
        };
        let (e, d, ln) = (cfg.emb_dim, cfg.d, cfg.l_n());
        let emb_std = cfg.emb_init_std;
        let item_emb = b.normal("emb.item", &[cfg.num_items, e], emb_std, ParamKind::Sparse)?;
        let cat_emb = b.normal("emb.category", &[cfg.num_categories, e], emb_std, ParamKind::Sparse)?;
        let mut field_emb = Vec::new();
        let mut field_tok = Vec::new();
        for f in &cfg.fields {
            field_emb.push(match f.table {
                FieldTable::Own => b.normal(&format!("emb.field.{}", f.name), &[f.cardinality, e], emb_std, ParamKind::Sparse)?,
                FieldTable::Item => item_emb,
                FieldTable::Category => cat_emb,
            });
            field_tok.push(b.mlp(&format!("tok.field.{}", f.name), &[e, d, d])?);
        }
        let simtier_tok = if cfg.simtier_bins > 0 {
            Some(b.mlp("tok.simtier", &[cfg.simtier_width(), d, d])?)
        } else {
            None
        };
        let beh_tok = [b.behavior("tok.seq_u")?, b.behavior("tok.seq_c")?];
        let full = matches!(cfg.arch, Arch::Full(_));
        let mut layers = Vec::new();
        for s in 0..cfg.layers {
            let p = |n: &str| format!("layer{s}.{n}");
            let (wq, wo) = if full {
                (b.dense(&p("attn.wq"), d, d)?, b.output(&p("attn.wo"), d, d)?)
            } else {
                (
                    b.per_token(&p("attn.wq"), ln, d, d, false)?,
                    b.per_token(&p("attn.wo"), ln, d, d, cfg.zero_init_outputs)?,
                )
            };
            let separate = !full && !cfg.share_kv;
            layers.push(Layer {
                norm_n1: b.ones(&p("norm_n1"), d)?,
                norm_b1: b.ones(&p("norm_b1"), d)?,
                wq,
                wo,
                wk: b.dense(&p("attn.wk"), d, d)?,
                wv: b.dense(&p("attn.wv"), d, d)?,
                wk_c: if separate { Some(b.dense(&p("attn.wk_c"), d, d)?) } else { None },
                wv_c: if separate { Some(b.dense(&p("attn.wv_c"), d, d)?) } else { None },
                norm_n2: b.ones(&p("norm_n2"), d)?,
                norm_b2: b.ones(&p("norm_b2"), d)?,
                ffn_n: b.ffn(&p("ffn_n"), Some(ln))?,
                ffn_b: b.ffn(&p("ffn_b"), None)?,
            });
        }
        let mut widths = vec![cfg.head_input()];
        widths.extend(&cfg.head_hidden);
        widths.push(1);
        let head = b.mlp("head", &widths)?;
        Layout {
            item_emb,
            cat_emb,
            field_emb,
            field_tok,
            simtier_tok,
            beh_tok,
            layers,
            head,
        }
    };
    Ok((store, layout))
}
