//! Ranking metrics, effective-rank diagnostics, analytic FLOPs and
//! power-law scaling fits.

mod erank;
mod flops;
mod ranking;
mod report;
mod scaling;

use thiserror::Error;

pub use erank::{effective_rank, effective_rank_raw, spectral_norm_sq, POWER_MAX_ITERS, POWER_TOL};
pub use flops::{
    candidate_flops, count_flops, csa_cache_flops, csa_flops, ffn_flops, full_attention_flops, gflops_per_batch,
    lca_flops, user_side_flops, FlopsBreakdown,
};
pub use ranking::{auc, gauc, gauc_detail, log_loss};
pub use report::{
    append_metrics, block_erank_report, map_block_eranks, write_erank, write_scaling, BehaviorScope, BlockErank,
    MetricsReport, ScalingRow, ERANK_HEADER, METRICS_HEADER, SCALING_HEADER,
};
pub use scaling::{fit_power_law, PowerLawFit};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("metric undefined: {0}")]
    Undefined(String),
    #[error("invalid argument: {0}")]
    Argument(String),
}
