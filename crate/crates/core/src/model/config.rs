use std::fmt;
use std::str::FromStr;

use super::ModelError;
use crate::data::GenConfig;
use crate::tensor::Precision;

/// Embedding table a non-behavioural field looks its id up in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldTable {
    /// A table of its own with the field's cardinality.
    Own,
    /// The item-id table shared with behaviour tokens.
    Item,
    /// The category table shared with behaviour tokens.
    Category,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldSpec {
    pub name: String,
    pub cardinality: usize,
    pub table: FieldTable,
}

/// Query→key attention blocks of the unified `[B, N]` sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BlockMask {
    pub nb: bool,
    pub nn: bool,
    pub bb: bool,
    pub bn: bool,
}

impl BlockMask {
    pub const NONE: BlockMask = BlockMask {
        nb: false,
        nn: false,
        bb: false,
        bn: false,
    };
    pub const ALL: BlockMask = BlockMask {
        nb: true,
        nn: true,
        bb: true,
        bn: true,
    };

    pub fn only(block: Block) -> BlockMask {
        let mut m = BlockMask::NONE;
        match block {
            Block::NB => m.nb = true,
            Block::NN => m.nn = true,
            Block::BB => m.bb = true,
            Block::BN => m.bn = true,
        }
        m
    }

    pub fn contains(&self, block: Block) -> bool {
        match block {
            Block::NB => self.nb,
            Block::NN => self.nn,
            Block::BB => self.bb,
            Block::BN => self.bn,
        }
    }

    /// Whether a query of kind `q` may attend to a key of kind `k`
    /// (`true` = behavioural token).
    pub fn allows(&self, q_is_b: bool, k_is_b: bool) -> bool {
        let block = match (q_is_b, k_is_b) {
            (false, true) => Block::NB,
            (false, false) => Block::NN,
            (true, true) => Block::BB,
            (true, false) => Block::BN,
        };
        !self.contains(block)
    }
}

impl fmt::Display for BlockMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = Block::ALL
            .iter()
            .filter(|b| self.contains(**b))
            .map(|b| b.to_string())
            .collect();
        if names.is_empty() {
            write!(f, "none")
        } else {
            write!(f, "{}", names.join("+"))
        }
    }
}

impl FromStr for BlockMask {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut m = BlockMask::NONE;
        let s = s.trim();
        if s.is_empty() || s == "none" {
            return Ok(m);
        }
        for part in s.split(['+', ',']) {
            match part.trim().parse::<Block>()? {
                Block::NB => m.nb = true,
                Block::NN => m.nn = true,
                Block::BB => m.bb = true,
                Block::BN => m.bn = true,
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Block {
    NB,
    NN,
    BB,
    BN,
}

impl Block {
    pub const ALL: [Block; 4] = [Block::BB, Block::BN, Block::NN, Block::NB];
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Block::NB => "NB",
            Block::NN => "NN",
            Block::BB => "BB",
            Block::BN => "BN",
        })
    }
}

impl FromStr for Block {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().trim_matches(|c| c == '<' || c == '>').replace(',', "").as_str() {
            "NB" => Ok(Block::NB),
            "NN" => Ok(Block::NN),
            "BB" => Ok(Block::BB),
            "BN" => Ok(Block::BN),
            _ => Err(ModelError::Config(format!("unknown attention block `{s}` (NB, NN, BB, BN)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    /// Lightweight cross-attention plus content sparse attention.
    Est,
    /// Self-attention over `[B_u, B_c, N]` with the given blocks masked.
    Full(BlockMask),
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arch::Est => write!(f, "est"),
            Arch::Full(m) => write!(f, "full:{m}"),
        }
    }
}

impl FromStr for Arch {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "est" {
            return Ok(Arch::Est);
        }
        match s.strip_prefix("full") {
            Some("") => Ok(Arch::Full(BlockMask::NONE)),
            Some(rest) => Ok(Arch::Full(rest.trim_start_matches(':').parse()?)),
            None => Err(ModelError::Config(format!("unknown architecture `{s}` (est, full, full:NB+BB…)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Number of stacked blocks.
    pub layers: usize,
    /// Token dimension.
    pub d: usize,
    /// Neighbours kept per row by content sparse attention.
    pub k: usize,
    pub heads: usize,
    pub emb_dim: usize,
    pub fields: Vec<FieldSpec>,
    pub num_items: usize,
    pub num_categories: usize,
    pub l_bu: usize,
    pub l_bc: usize,
    pub d_m: usize,
    pub head_hidden: Vec<usize>,
    /// SimTier histogram bins; 0 disables the SimTier token.
    pub simtier_bins: usize,
    /// One W^K/W^V pair for both behaviour sequences.
    pub share_kv: bool,
    /// Softmax-normalise the kept similarities instead of using them raw.
    pub csa_softmax: bool,
    pub arch: Arch,
    pub precision: Precision,
    /// Std of dense weight matrices (truncated at ±2σ).
    pub init_std: f64,
    pub emb_init_std: f64,
    /// Zero the attention and FFN output projections so blocks start as identity.
    pub zero_init_outputs: bool,
}

pub const MODEL_CONFIG_KEYS: &[&str] = &[
    "layers",
    "d",
    "k",
    "heads",
    "emb_dim",
    "head_hidden",
    "simtier_bins",
    "share_kv",
    "csa_softmax",
    "arch",
    "precision",
    "init_std",
    "emb_init_std",
    "zero_init_outputs",
];

impl ModelConfig {
    /// Layout matching datasets produced by [`GenConfig`].
    pub fn for_data(data: &GenConfig) -> Self {
        let d = 16;
        let fields = crate::data::FIELD_NAMES
            .iter()
            .zip(data.field_cardinalities())
            .map(|(&name, cardinality)| FieldSpec {
                name: name.to_string(),
                cardinality,
                table: match name {
                    "cand_item" => FieldTable::Item,
                    "cand_category" => FieldTable::Category,
                    _ => FieldTable::Own,
                },
            })
            .collect();
        ModelConfig {
            layers: 2,
            d,
            k: 5.min(data.l_max_u as usize).min(data.l_bc as usize).max(1),
            heads: 1,
            emb_dim: d,
            fields,
            num_items: data.num_items as usize,
            num_categories: data.clusters as usize,
            l_bu: data.l_max_u as usize,
            l_bc: data.l_bc as usize,
            d_m: data.d_m as usize,
            head_hidden: vec![4 * d, 2 * d],
            simtier_bins: 0,
            share_kv: true,
            csa_softmax: false,
            arch: Arch::Est,
            precision: Precision::F64,
            // Fan-in scaling; at this width a fixed 0.02 leaves attention
            // logits near zero and the blocks barely learn.
            init_std: 1.0 / (d as f64).sqrt(),
            emb_init_std: 0.5,
            zero_init_outputs: true,
        }
    }

    /// Production-sized shape: six layers of width 128 and a 512-256 head.
    /// Used for FLOPs reports; too large to train on a desktop CPU.
    pub fn reference(data: &GenConfig) -> Self {
        let mut cfg = Self::for_data(data);
        cfg.d = 128;
        cfg.emb_dim = 128;
        cfg.layers = 6;
        cfg.head_hidden = vec![512, 256];
        cfg.init_std = 1.0 / (cfg.d as f64).sqrt();
        cfg
    }

    /// Number of non-behavioural tokens.
    pub fn l_n(&self) -> usize {
        self.fields.len() + usize::from(self.simtier_bins > 0)
    }

    pub fn l_b(&self) -> usize {
        self.l_bu + self.l_bc
    }

    /// SwiGLU hidden width: ⌈8d/3⌉ rounded up to a multiple of 8.
    pub fn ffn_hidden(&self) -> usize {
        let h = (8 * self.d).div_ceil(3);
        h.div_ceil(8) * 8
    }

    /// Width of the SimTier input vector: two histograms plus two emptiness flags.
    pub fn simtier_width(&self) -> usize {
        2 * self.simtier_bins + 2
    }

    pub fn head_input(&self) -> usize {
        self.l_n() * self.d + self.d
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Config(m));
        if self.d == 0 || self.emb_dim == 0 {
            return err("d and emb_dim must be positive".into());
        }
        if self.heads == 0 || self.d % self.heads != 0 {
            return err(format!("d ({}) must be divisible by heads ({})", self.d, self.heads));
        }
        if self.l_n() == 0 {
            return err("at least one non-behavioural token is required".into());
        }
        if self.k == 0 {
            return err("k must be at least 1".into());
        }
        if self.l_bu > 0 && self.l_bc > 0 && self.k > self.l_bu.min(self.l_bc) {
            return err(format!(
                "k ({}) exceeds min(l_bu, l_bc) = {}",
                self.k,
                self.l_bu.min(self.l_bc)
            ));
        }
        if self.num_items == 0 || self.num_categories == 0 {
            return err("num_items and num_categories must be positive".into());
        }
        for f in &self.fields {
            let bound = match f.table {
                FieldTable::Own => f.cardinality,
                FieldTable::Item => self.num_items,
                FieldTable::Category => self.num_categories,
            };
            if bound == 0 {
                return err(format!("field `{}` has zero cardinality", f.name));
            }
        }
        if self.head_hidden.contains(&0) {
            return err("head_hidden widths must be positive".into());
        }
        if !(self.init_std > 0.0 && self.emb_init_std > 0.0) {
            return err("init scales must be positive".into());
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ModelError> {
        fn p<T: FromStr>(key: &str, v: &str) -> Result<T, ModelError> {
            v.trim()
                .parse()
                .map_err(|_| ModelError::Config(format!("invalid value `{v}` for `{key}`")))
        }
        match key {
            "layers" => self.layers = p(key, value)?,
            "d" => self.d = p(key, value)?,
            "k" => self.k = p(key, value)?,
            "heads" => self.heads = p(key, value)?,
            "emb_dim" => self.emb_dim = p(key, value)?,
            "head_hidden" => {
                self.head_hidden = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| p(key, s))
                    .collect::<Result<_, _>>()?
            }
            "simtier_bins" => self.simtier_bins = p(key, value)?,
            "share_kv" => self.share_kv = p(key, value)?,
            "csa_softmax" => self.csa_softmax = p(key, value)?,
            "arch" => self.arch = value.parse()?,
            "precision" => {
                self.precision = value
                    .parse()
                    .map_err(|_| ModelError::Config(format!("invalid precision `{value}` (f32, f64)")))?
            }
            "init_std" => self.init_std = p(key, value)?,
            "emb_init_std" => self.emb_init_std = p(key, value)?,
            "zero_init_outputs" => self.zero_init_outputs = p(key, value)?,
            other => {
                return Err(ModelError::Config(format!(
                    "unknown key `{other}`; valid keys: {}",
                    MODEL_CONFIG_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Tunable settings as `key = value` pairs, in [`MODEL_CONFIG_KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let hidden: Vec<String> = self.head_hidden.iter().map(|h| h.to_string()).collect();
        vec![
            ("layers", self.layers.to_string()),
            ("d", self.d.to_string()),
            ("k", self.k.to_string()),
            ("heads", self.heads.to_string()),
            ("emb_dim", self.emb_dim.to_string()),
            ("head_hidden", hidden.join(",")),
            ("simtier_bins", self.simtier_bins.to_string()),
            ("share_kv", self.share_kv.to_string()),
            ("csa_softmax", self.csa_softmax.to_string()),
            ("arch", self.arch.to_string()),
            ("precision", self.precision.to_string()),
            ("init_std", format!("{:?}", self.init_std)),
            ("emb_init_std", format!("{:?}", self.emb_init_std)),
            ("zero_init_outputs", self.zero_init_outputs.to_string()),
        ]
    }
}
