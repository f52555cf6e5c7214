use crate::model::{Arch, ModelConfig};

/// Attention plus projections of one LCA layer:
/// `4·L_N·d² + 4·L_B·d² + 4·L_N·L_B·d`.
pub fn lca_flops(l_n: usize, l_b: usize, d: usize) -> u64 {
    let (n, b, d) = (l_n as u64, l_b as u64, d as u64);
    4 * n * d * d + 4 * b * d * d + 4 * n * b * d
}

/// One full self-attention layer over `L` tokens: `8·L·d² + 4·L²·d`.
pub fn full_attention_flops(l: usize, d: usize) -> u64 {
    let (l, d) = (l as u64, d as u64);
    8 * l * d * d + 4 * l * l * d
}

/// Sparse aggregation of one CSA layer: `2·L·K·d`.
pub fn csa_flops(l: usize, k: usize, d: usize) -> u64 {
    2 * (l * k * d) as u64
}

/// One-off similarity matrix `M·Mᵀ` of a sequence: `2·L²·d_M`.
pub fn csa_cache_flops(l: usize, d_m: usize) -> u64 {
    2 * (l * l * d_m) as u64
}

/// SwiGLU over `rows` tokens: three `d×h` matmuls.
pub fn ffn_flops(rows: usize, d: usize, h: usize) -> u64 {
    6 * (rows * d * h) as u64
}

/// FLOPs of one forward pass, split by component. Every field except
/// `csa_cache` and `elementwise` is a matmul count that the autodiff graph
/// reproduces exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FlopsBreakdown {
    pub tokenize: u64,
    /// LCA, or full self-attention for the baseline.
    pub attention: u64,
    pub csa: u64,
    pub ffn: u64,
    pub head: u64,
    pub csa_cache: u64,
    /// Norms, activations, softmax: 1 FLOP per element.
    pub elementwise: u64,
}

impl FlopsBreakdown {
    pub fn matmul(&self) -> u64 {
        self.tokenize + self.attention + self.csa + self.ffn + self.head
    }

    pub fn total(&self) -> u64 {
        self.matmul() + self.csa_cache + self.elementwise
    }

    fn add(&mut self, o: &FlopsBreakdown, times: u64) {
        self.tokenize += o.tokenize * times;
        self.attention += o.attention * times;
        self.csa += o.csa * times;
        self.ffn += o.ffn * times;
        self.head += o.head * times;
        self.csa_cache += o.csa_cache * times;
        self.elementwise += o.elementwise * times;
    }
}

fn mlp_flops(widths: &[usize]) -> u64 {
    widths.windows(2).map(|w| 2 * (w[0] * w[1]) as u64).sum()
}

fn mlp_act(widths: &[usize]) -> u64 {
    // SiLU after every hidden layer plus bias adds
    let hidden: usize = widths[1..widths.len() - 1].iter().sum();
    let bias: usize = widths[1..].iter().sum();
    (hidden + bias) as u64
}

/// Work done once per request on the user side (EST: the whole `B_u`
/// stream; full attention: only `B_u` tokenization).
pub fn user_side_flops(cfg: &ModelConfig) -> FlopsBreakdown {
    let (d, e, h, k) = (cfg.d, cfg.emb_dim, cfg.ffn_hidden(), cfg.k);
    let lu = cfg.l_bu;
    let mut f = FlopsBreakdown::default();
    if lu == 0 {
        return f;
    }
    f.tokenize = 4 * (lu * e * d) as u64 + 2 * (lu * d * d) as u64;
    f.elementwise += (3 * lu * d) as u64;
    f.csa_cache = csa_cache_flops(lu, cfg.d_m);
    if let Arch::Est = cfg.arch {
        for _ in 0..cfg.layers {
            f.attention += 4 * (lu * d * d) as u64;
            f.csa += csa_flops(lu, k, d);
            f.ffn += ffn_flops(lu, d, h);
            // two norms, SiLU and gating over h, two residual adds
            f.elementwise += (2 * lu * d + 2 * lu * h + 2 * lu * d) as u64;
        }
    }
    f
}

/// Per-candidate work given a precomputed user side.
pub fn candidate_flops(cfg: &ModelConfig) -> FlopsBreakdown {
    let (d, e, h, k) = (cfg.d, cfg.emb_dim, cfg.ffn_hidden(), cfg.k);
    let (lu, lc, ln) = (cfg.l_bu, cfg.l_bc, cfg.l_n());
    let lb = lu + lc;
    let mut f = FlopsBreakdown::default();
    for _ in &cfg.fields {
        f.tokenize += mlp_flops(&[e, d, d]);
        f.elementwise += mlp_act(&[e, d, d]);
    }
    if cfg.simtier_bins > 0 {
        f.tokenize += mlp_flops(&[cfg.simtier_width(), d, d]);
        f.elementwise += mlp_act(&[cfg.simtier_width(), d, d]);
    }
    if lc > 0 {
        f.tokenize += 4 * (lc * e * d) as u64 + 2 * (lc * d * d) as u64;
        f.elementwise += (3 * lc * d) as u64;
    }
    f.csa_cache = csa_cache_flops(lc, cfg.d_m);
    match cfg.arch {
        Arch::Est => {
            for _ in 0..cfg.layers {
                // K/V of the candidate sequence are part of the LCA term
                f.attention += lca_flops(ln, lb, d) - 4 * (lu * d * d) as u64;
                f.csa += csa_flops(lc, k, d);
                f.ffn += ffn_flops(ln, d, h) + ffn_flops(lc, d, h);
                f.elementwise += (cfg.heads * ln * lb + 4 * ln * d + 2 * ln * h + 4 * lc * d + 2 * lc * h) as u64;
            }
        }
        Arch::Full(_) => {
            let l = lb + ln;
            for _ in 0..cfg.layers {
                f.attention += full_attention_flops(l, d);
                f.ffn += ffn_flops(ln, d, h) + ffn_flops(lb, d, h);
                f.elementwise += (cfg.heads * l * l) as u64 + (2 * l * d + 2 * l * h + 2 * l * d) as u64;
            }
        }
    }
    let mut widths = vec![cfg.head_input()];
    widths.extend(&cfg.head_hidden);
    widths.push(1);
    f.head = mlp_flops(&widths);
    f.elementwise += mlp_act(&widths) + 1 + lb as u64 * d as u64;
    f
}

/// FLOPs to score `candidates` candidates of one request. With
/// `decoupled`, user-side work is charged once; otherwise once per
/// candidate.
pub fn count_flops(cfg: &ModelConfig, candidates: usize, decoupled: bool) -> FlopsBreakdown {
    let user = user_side_flops(cfg);
    let cand = candidate_flops(cfg);
    let n = candidates as u64;
    let mut f = FlopsBreakdown::default();
    f.add(&user, if decoupled { n.min(1) } else { n });
    f.add(&cand, n);
    f
}

/// Naive per-sample GFLOPs for a batch of 60 samples.
pub fn gflops_per_batch(cfg: &ModelConfig) -> f64 {
    count_flops(cfg, 1, false).total() as f64 * 60.0 / 1e9
}
