//! AdamW training with the sparse/dense partition, the multi-epoch
//! sparse-reset schedule, evaluation and checkpointing.

mod adamw;
mod gradcheck;

use std::path::Path;

use rand::seq::SliceRandom;
use thiserror::Error;

pub use adamw::{clip_global_norm, AdamW, AdamWConfig, ParamState};
pub use gradcheck::{grad_check, GradCheckReport, GRAD_CHECK_FLOOR};

use crate::metrics::{self, MetricError};
use crate::model::checkpoint::{self, Checkpoint, NamedTensor};
use crate::model::{Model, ModelError, ParamKind, RequestInputs};
use crate::par::{self, Execution};
use crate::seed;
use crate::tensor::{Float, Graph, ParamGrad, ParamId, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("non-finite gradient in `{0}`")]
    NonFinite(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub adamw: AdamWConfig,
    /// Impressions per optimizer step; whole requests are kept together.
    pub batch_size: usize,
    pub epochs: u32,
    /// Restore sparse tensors to their initial values at every epoch boundary.
    pub multi_epoch_reset: bool,
    pub seed: u64,
    /// Evaluate every this many steps (0: only at the end of each epoch).
    pub eval_every: u64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub exec: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adamw: AdamWConfig::default(),
            batch_size: 256,
            epochs: 1,
            multi_epoch_reset: false,
            seed: 1,
            eval_every: 0,
            clip_norm: Some(1.0),
            exec: Execution::Parallel,
        }
    }
}

pub const TRAIN_CONFIG_KEYS: &[&str] = &[
    "learning_rate",
    "beta1",
    "beta2",
    "eps",
    "weight_decay",
    "batch_size",
    "epochs",
    "multi_epoch_reset",
    "seed",
    "eval_every",
    "clip_norm",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.adamw.lr >= 0.0 && self.adamw.lr.is_finite()) {
            return Err(TrainError::Config("learning_rate must be finite and non-negative".into()));
        }
        if self.epochs < 1 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        fn p<X: std::str::FromStr>(key: &str, v: &str) -> Result<X, TrainError> {
            v.trim()
                .parse()
                .map_err(|_| TrainError::Config(format!("invalid value `{v}` for `{key}`")))
        }
        match key {
            "learning_rate" => self.adamw.lr = p(key, value)?,
            "beta1" => self.adamw.beta1 = p(key, value)?,
            "beta2" => self.adamw.beta2 = p(key, value)?,
            "eps" => self.adamw.eps = p(key, value)?,
            "weight_decay" => self.adamw.weight_decay = p(key, value)?,
            "batch_size" => self.batch_size = p(key, value)?,
            "epochs" => self.epochs = p(key, value)?,
            "multi_epoch_reset" => self.multi_epoch_reset = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            "eval_every" => self.eval_every = p(key, value)?,
            "clip_norm" => {
                self.clip_norm = match value.trim() {
                    "none" | "off" => None,
                    v => Some(p(key, v)?),
                }
            }
            other => {
                return Err(TrainError::Config(format!(
                    "unknown key `{other}`; valid keys: {}",
                    TRAIN_CONFIG_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("learning_rate", format!("{:?}", self.adamw.lr)),
            ("beta1", format!("{:?}", self.adamw.beta1)),
            ("beta2", format!("{:?}", self.adamw.beta2)),
            ("eps", format!("{:?}", self.adamw.eps)),
            ("weight_decay", format!("{:?}", self.adamw.weight_decay)),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("multi_epoch_reset", self.multi_epoch_reset.to_string()),
            ("seed", self.seed.to_string()),
            ("eval_every", self.eval_every.to_string()),
            (
                "clip_norm",
                self.clip_norm.map_or("none".to_string(), |c| format!("{c:?}")),
            ),
        ]
    }
}

/// Validation metrics at one point of training.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub epoch: u32,
    pub step: u64,
    pub auc: f64,
    pub gauc: f64,
    pub logloss: f64,
    pub users_scored: usize,
}

/// Scores every request with decoupled inference and computes AUC, GAUC and
/// log loss.
pub fn evaluate<T: Float>(model: &Model<T>, inputs: &[RequestInputs<T>], exec: Execution) -> Result<EvalReport, TrainError> {
    let preds = par::map(exec, inputs, |r| model.predict_request(r));
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut users = Vec::new();
    for (r, p) in inputs.iter().zip(preds) {
        for (c, s) in r.candidates.iter().zip(p?) {
            scores.push(s.as_f64());
            labels.push(c.label);
            users.push(r.user.user_id);
        }
    }
    let (gauc, users_scored) = metrics::gauc_detail(&scores, &labels, &users)?;
    Ok(EvalReport {
        epoch: 0,
        step: 0,
        auc: metrics::auc(&scores, &labels)?,
        gauc,
        logloss: metrics::log_loss(&scores, &labels)?,
        users_scored,
    })
}

/// Mean BCE over the batch and the full-size gradient of every tensor.
pub fn batch_gradients<T: Float>(
    model: &Model<T>,
    batch: &[&RequestInputs<T>],
    exec: Execution,
) -> Result<(f64, Vec<Vec<T>>), TrainError> {
    let total: usize = batch.iter().map(|r| r.candidates.len()).sum();
    let per_request = par::map(exec, batch, |r| -> Result<(f64, Vec<(ParamId, ParamGrad<T>)>), TrainError> {
        let mut g = Graph::new();
        let p = model.forward_request(&mut g, &r.user, &r.candidates)?;
        let labels: Vec<T> = r.candidates.iter().map(|c| T::of(c.label as f64)).collect();
        let loss = g.bce(p, &labels)?;
        let w = r.candidates.len() as f64 / total as f64;
        let loss = g.scale(loss, T::of(w));
        let value = g.value(loss)[0].as_f64();
        Ok((value, g.backward(loss)?.into_params()))
    });
    let mut grads: Vec<Vec<T>> = model
        .params
        .iter()
        .map(|(_, p)| vec![T::zero(); p.tensor.numel()])
        .collect();
    let mut loss = 0.0;
    for r in per_request {
        let (l, pg) = r?;
        loss += l;
        for (id, grad) in pg {
            let dst = &mut grads[id.0];
            match grad {
                ParamGrad::Dense(v) => dst.iter_mut().zip(v).for_each(|(d, s)| *d += s),
                ParamGrad::Rows { ids, dim, grads } => {
                    for (&row, src) in ids.iter().zip(grads.chunks(dim.max(1))) {
                        let r = row as usize * dim;
                        dst[r..r + dim].iter_mut().zip(src).for_each(|(d, &s)| *d += s);
                    }
                }
            }
        }
    }
    Ok((loss, grads))
}

/// Mean BCE over the batch without building a gradient tape.
pub fn batch_loss<T: Float>(model: &Model<T>, batch: &[&RequestInputs<T>]) -> Result<f64, TrainError> {
    let total: usize = batch.iter().map(|r| r.candidates.len()).sum();
    let mut loss = 0.0;
    for r in batch {
        let mut g = Graph::inference();
        let p = model.forward_request(&mut g, &r.user, &r.candidates)?;
        let labels: Vec<T> = r.candidates.iter().map(|c| T::of(c.label as f64)).collect();
        let l = g.bce(p, &labels)?;
        loss += g.value(l)[0].as_f64() * r.candidates.len() as f64 / total as f64;
    }
    Ok(loss)
}

/// Mutable training state carried across epochs and checkpoints.
#[derive(Debug, Clone)]
pub struct TrainState<T: Float> {
    /// Completed epochs.
    pub epoch: u32,
    pub step: u64,
    pub optimizer: AdamW<T>,
    /// Sparse tensors captured before the first update.
    pub snapshot: Vec<(ParamId, Tensor<T>)>,
}

impl<T: Float> TrainState<T> {
    pub fn new(model: &Model<T>, cfg: &TrainConfig) -> Self {
        TrainState {
            epoch: 0,
            step: 0,
            optimizer: AdamW::new(cfg.adamw, &model.params),
            snapshot: model.params.snapshot(ParamKind::Sparse),
        }
    }

    /// Epoch-boundary reset: sparse tensors return bitwise to the snapshot
    /// and their moments are zeroed; dense tensors and moments carry over.
    pub fn reset_sparse(&mut self, model: &mut Model<T>) {
        for (id, t) in &self.snapshot {
            model.params.get_mut(*id).data_mut().copy_from_slice(t.data());
            self.optimizer.reset(*id);
        }
    }

    pub fn to_checkpoint(&self, model: &Model<T>) -> Checkpoint<T> {
        let mut ck = Checkpoint::from_model(model);
        ck.optimizer = Some(self.optimizer.export(&model.params, self.epoch, self.step));
        ck.snapshot = Some(
            self.snapshot
                .iter()
                .map(|(id, t)| NamedTensor {
                    name: model.params.param(*id).name.clone(),
                    kind: ParamKind::Sparse,
                    tensor: Tensor::new(t.shape(), t.data().to_vec()).expect("same shape"),
                })
                .collect(),
        );
        ck
    }

    /// Restores model, optimizer and snapshot from a checkpoint.
    pub fn from_checkpoint(ck: &Checkpoint<T>, cfg: &TrainConfig) -> Result<(Model<T>, Self), TrainError> {
        let model = ck.to_model()?;
        let mut state = TrainState::new(&model, cfg);
        if let Some(opt) = &ck.optimizer {
            state.optimizer.import(&model.params, opt)?;
            state.epoch = opt.epoch;
            state.step = opt.step;
        }
        if let Some(snap) = &ck.snapshot {
            state.snapshot = snap
                .iter()
                .map(|t| {
                    let id = model
                        .params
                        .id(&t.name)
                        .ok_or_else(|| TrainError::Checkpoint(format!("snapshot of unknown tensor `{}`", t.name)))?;
                    if model.params.get(id).shape() != t.tensor.shape() {
                        return Err(TrainError::Checkpoint(format!("snapshot shape mismatch for `{}`", t.name)));
                    }
                    Ok((id, Tensor::new(t.tensor.shape(), t.tensor.data().to_vec())?))
                })
                .collect::<Result<_, TrainError>>()?;
        }
        Ok((model, state))
    }

    pub fn save(&self, model: &Model<T>, path: impl AsRef<Path>) -> Result<(), TrainError> {
        checkpoint::save(path, &self.to_checkpoint(model))?;
        Ok(())
    }
}

/// Groups shuffled requests into batches of roughly `batch_size` impressions.
pub fn batches(sizes: &[usize], batch_size: usize, seed: u64, epoch: u32) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.shuffle(&mut seed::rng(seed, "shuffle", epoch as u64));
    let mut out = Vec::new();
    let mut cur = Vec::new();
    let mut n = 0;
    for i in order {
        cur.push(i);
        n += sizes[i];
        if n >= batch_size {
            out.push(std::mem::take(&mut cur));
            n = 0;
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Per-step record passed to the progress callback.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub epoch: u32,
    pub step: u64,
    pub loss: f64,
    pub grad_norm: f64,
}

/// Hooks invoked during training; every method has a no-op default.
pub trait Observer<T: Float> {
    fn on_step(&mut self, _info: &StepInfo) {}
    fn on_eval(&mut self, _report: &EvalReport) {}
    /// Called after the epoch-boundary reset (if any), before the first step
    /// of epoch `epoch` (1-based).
    fn on_epoch_start(&mut self, _epoch: u32, _model: &Model<T>) {}
    fn on_epoch_end(&mut self, _epoch: u32, _model: &Model<T>) {}
}

impl<T: Float> Observer<T> for () {}

/// Runs one epoch over `train` and returns the mean batch loss.
pub fn train_epoch<T: Float>(
    model: &mut Model<T>,
    state: &mut TrainState<T>,
    train: &[RequestInputs<T>],
    valid: &[RequestInputs<T>],
    cfg: &TrainConfig,
    obs: &mut dyn Observer<T>,
) -> Result<f64, TrainError> {
    let epoch = state.epoch + 1;
    let sizes: Vec<usize> = train.iter().map(|r| r.candidates.len()).collect();
    let mut loss_sum = 0.0;
    let plan = batches(&sizes, cfg.batch_size, cfg.seed, epoch);
    for batch in &plan {
        let reqs: Vec<&RequestInputs<T>> = batch.iter().map(|&i| &train[i]).collect();
        let (loss, mut grads) = batch_gradients(model, &reqs, cfg.exec)?;
        if !loss.is_finite() {
            return Err(TrainError::NonFinite("loss".into()));
        }
        let norm = match cfg.clip_norm {
            Some(c) => clip_global_norm(&mut grads, c),
            None => grads.iter().flatten().map(|g| g.as_f64().powi(2)).sum::<f64>().sqrt(),
        };
        state.optimizer.step(&mut model.params, &grads)?;
        state.step += 1;
        loss_sum += loss;
        obs.on_step(&StepInfo {
            epoch,
            step: state.step,
            loss,
            grad_norm: norm,
        });
        if cfg.eval_every > 0 && state.step % cfg.eval_every == 0 && !valid.is_empty() {
            let mut r = evaluate(model, valid, cfg.exec)?;
            r.epoch = epoch;
            r.step = state.step;
            obs.on_eval(&r);
        }
    }
    state.epoch = epoch;
    Ok(loss_sum / plan.len().max(1) as f64)
}

/// Outcome of [`multi_epoch_train`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    /// Validation metrics at the end of every epoch.
    pub epoch_evals: Vec<EvalReport>,
}

/// Trains for `cfg.epochs` epochs, resetting sparse tensors at every epoch
/// boundary when `cfg.multi_epoch_reset` is set.
pub fn multi_epoch_train<T: Float>(
    model: &mut Model<T>,
    state: &mut TrainState<T>,
    train: &[RequestInputs<T>],
    valid: &[RequestInputs<T>],
    cfg: &TrainConfig,
    obs: &mut dyn Observer<T>,
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    let mut report = TrainReport {
        epoch_losses: Vec::new(),
        epoch_evals: Vec::new(),
    };
    while state.epoch < cfg.epochs {
        if state.epoch >= 1 && cfg.multi_epoch_reset {
            state.reset_sparse(model);
        }
        obs.on_epoch_start(state.epoch + 1, model);
        let loss = train_epoch(model, state, train, valid, cfg, obs)?;
        report.epoch_losses.push(loss);
        obs.on_epoch_end(state.epoch, model);
        if !valid.is_empty() {
            let mut r = evaluate(model, valid, cfg.exec)?;
            r.epoch = state.epoch;
            r.step = state.step;
            obs.on_eval(&r);
            report.epoch_evals.push(r);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests;
