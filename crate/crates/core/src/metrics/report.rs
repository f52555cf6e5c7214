use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use super::{effective_rank_raw, MetricError};
use crate::model::{AttentionMap, Block, Model, ModelError, RequestInputs};
use crate::tensor::Float;

/// Headline numbers of one evaluated run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub run_id: String,
    pub auc: f64,
    pub gauc: f64,
    pub users_scored: usize,
    pub logloss: f64,
    /// Dense parameters (tokenizer MLPs included, embedding tables excluded).
    pub params_dense: usize,
    pub gflops_per_batch: f64,
    pub erank: Option<Vec<BlockErank>>,
}

pub const METRICS_HEADER: &str = "run_id,auc,gauc,logloss,params,gflops";
pub const ERANK_HEADER: &str = "layer,block,erank";
pub const SCALING_HEADER: &str = "axis,x,delta_gauc,E,alpha,r2";

/// Appends one row to metrics.csv, writing the header to a new file.
pub fn append_metrics(path: impl AsRef<Path>, r: &MetricsReport) -> std::io::Result<()> {
    let path = path.as_ref();
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{METRICS_HEADER}")?;
    }
    writeln!(
        f,
        "{},{},{},{},{},{}",
        r.run_id, r.auc, r.gauc, r.logloss, r.params_dense, r.gflops_per_batch
    )
}

/// Which behaviour positions count as `B` when slicing attention blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BehaviorScope {
    /// Candidate-specific subsequence only.
    #[default]
    Candidate,
    /// Both user and candidate sequences.
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockErank {
    pub layer: usize,
    pub block: Block,
    pub erank: f64,
}

pub fn write_erank(path: impl AsRef<Path>, rows: &[BlockErank]) -> std::io::Result<()> {
    let mut s = format!("{ERANK_HEADER}\n");
    for r in rows {
        s.push_str(&format!("{},{},{}\n", r.layer, r.block, r.erank));
    }
    std::fs::write(path, s)
}

/// Effective rank of each query→key block of one attention map, averaged
/// over heads. Pads are dropped; empty or all-zero blocks are omitted.
pub fn map_block_eranks<T: Float>(map: &AttentionMap<T>, scope: BehaviorScope) -> Vec<(Block, f64)> {
    let l = map.l_bu + map.l_bc + map.l_n;
    let b_pos: Vec<usize> = (0..map.l_bu + map.l_bc)
        .filter(|&i| map.valid[i] && (scope == BehaviorScope::All || i >= map.l_bu))
        .collect();
    let n_pos: Vec<usize> = (map.l_bu + map.l_bc..l).collect();
    let mut out = Vec::new();
    for block in Block::ALL {
        let (rows, cols) = match block {
            Block::NB => (&n_pos, &b_pos),
            Block::NN => (&n_pos, &n_pos),
            Block::BB => (&b_pos, &b_pos),
            Block::BN => (&b_pos, &n_pos),
        };
        if rows.is_empty() || cols.is_empty() {
            continue;
        }
        let mut sum = 0.0;
        let mut count = 0;
        for h in 0..map.heads {
            let a = &map.values[h * l * l..(h + 1) * l * l];
            let sub: Vec<f64> = rows
                .iter()
                .flat_map(|&i| cols.iter().map(move |&j| a[i * l + j].as_f64()))
                .collect();
            if let Ok(e) = effective_rank_raw(&sub, rows.len(), cols.len()) {
                sum += e;
                count += 1;
            }
        }
        if count > 0 {
            out.push((block, sum / count as f64));
        }
    }
    out
}

/// Per-layer, per-block effective rank of a full-attention model's
/// attention maps, averaged over every candidate of `inputs`.
pub fn block_erank_report<T: Float>(
    model: &Model<T>,
    inputs: &[RequestInputs<T>],
    scope: BehaviorScope,
) -> Result<Vec<BlockErank>, MetricError> {
    let mut acc: std::collections::BTreeMap<(usize, Block), (f64, usize)> = Default::default();
    for r in inputs {
        for c in 0..r.candidates.len() {
            let maps = model.attention_maps(r, c).map_err(|e: ModelError| MetricError::Argument(e.to_string()))?;
            for m in &maps {
                for (block, e) in map_block_eranks(m, scope) {
                    let slot = acc.entry((m.layer, block)).or_insert((0.0, 0));
                    slot.0 += e;
                    slot.1 += 1;
                }
            }
        }
    }
    Ok(acc
        .into_iter()
        .map(|((layer, block), (s, n))| BlockErank {
            layer,
            block,
            erank: s / n as f64,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub axis: String,
    pub x: f64,
    pub delta_gauc: f64,
    pub e: f64,
    pub alpha: f64,
    pub r2: f64,
}

pub fn write_scaling(path: impl AsRef<Path>, rows: &[ScalingRow]) -> std::io::Result<()> {
    let mut s = format!("{SCALING_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.axis, r.x, r.delta_gauc, r.e, r.alpha, r.r2
        ));
    }
    std::fs::write(path, s)
}
