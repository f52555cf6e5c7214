//! Synthetic CTR logs with planted candidate × behaviour structure.

mod catalog;
mod config;
pub mod format;
mod generate;
mod gsu;

use std::io::Write;
use std::path::Path;

use thiserror::Error;

pub use crate::tensor::PAD;
pub use catalog::{generate_catalog, Catalog};
pub use config::{GenConfig, FIELD_NAMES, GEN_CONFIG_KEYS};
pub use format::{read_dataset, write_dataset};
pub use generate::{
    generate_requests, generate_requests_with, interaction_signal, request_stream, LabelModel, INTERACTION_TOP,
};
pub use gsu::gsu_retrieve;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("config error: {0}")]
    Config(String),
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One scored candidate within a request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub item_id: u64,
    /// Candidate-side non-behavioural fields: [item id, category].
    pub fields: Vec<u32>,
    pub label: u8,
}

/// One user request: shared user context plus its candidate set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub user_id: u64,
    /// User-side non-behavioural fields: [segment, activity].
    pub user_fields: Vec<u32>,
    /// Most recent behaviours, oldest first, padded to `l_max_u` with [`PAD`].
    pub short_seq: Vec<u32>,
    /// Whole history, oldest first, padded to `l_max_l` with [`PAD`].
    pub lifelong_seq: Vec<u32>,
    pub candidates: Vec<Candidate>,
}

/// Flattened per-impression view of a request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub user_id: u64,
    pub candidate_item_id: u64,
    pub label: u8,
    pub non_behavioral: Vec<u32>,
    pub short_seq: Vec<u32>,
    pub lifelong_seq: Vec<u32>,
}

impl Request {
    pub fn samples(&self) -> impl Iterator<Item = Sample> + '_ {
        self.candidates.iter().map(move |c| Sample {
            user_id: self.user_id,
            candidate_item_id: c.item_id,
            label: c.label,
            non_behavioral: self.user_fields.iter().chain(&c.fields).copied().collect(),
            short_seq: self.short_seq.clone(),
            lifelong_seq: self.lifelong_seq.clone(),
        })
    }

    pub fn valid_lifelong(&self) -> impl Iterator<Item = u32> + '_ {
        self.lifelong_seq.iter().copied().filter(|&i| i != PAD)
    }
}

/// Everything stored in a dataset file.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: GenConfig,
    pub catalog: Catalog,
    pub requests: Vec<Request>,
}

impl Dataset {
    pub fn generate(cfg: &GenConfig) -> Result<Self, DataError> {
        let catalog = generate_catalog(cfg)?;
        let requests = generate_requests(cfg, &catalog)?;
        Ok(Dataset {
            config: cfg.clone(),
            catalog,
            requests,
        })
    }

    pub fn impressions(&self) -> usize {
        self.requests.iter().map(|r| r.candidates.len()).sum()
    }

    /// Training and validation requests: the final `fraction` of requests in
    /// generation order is held out.
    pub fn split(&self, fraction: f64) -> (&[Request], &[Request]) {
        let n = self.requests.len();
        let hold = ((n as f64) * fraction).round() as usize;
        self.requests.split_at(n - hold.min(n))
    }

    /// `user_id,candidate_id,label,p_true` rows for external inspection.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let labels = LabelModel::new(&self.config);
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "user_id,candidate_id,label,p_true")?;
        for r in &self.requests {
            for (c, p) in r.candidates.iter().zip(labels.request_probabilities(&self.catalog, r)) {
                writeln!(f, "{},{},{},{p}", r.user_id, c.item_id, c.label)?;
            }
        }
        f.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests;
