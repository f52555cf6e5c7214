//! Train-and-evaluate plumbing shared by the command-line driver and the
//! acceptance harness.

use crate::data::Dataset;
use crate::model::{featurize, Model, ModelConfig, ModelError, RequestInputs};
use crate::par::{self, Execution};
use crate::tensor::Float;
use crate::train::{evaluate, multi_epoch_train, EvalReport, Observer, TrainConfig, TrainError, TrainReport, TrainState};

/// Fraction of requests held out for validation (the most recent ones).
pub const VALID_FRACTION: f64 = 0.1;

/// Model-ready training and validation requests.
#[derive(Debug, Clone)]
pub struct Split<T: Float> {
    pub train: Vec<RequestInputs<T>>,
    pub valid: Vec<RequestInputs<T>>,
}

/// Checks that a model config fits a dataset's id spaces and sequence lengths.
pub fn check_compatible(cfg: &ModelConfig, ds: &Dataset) -> Result<(), ModelError> {
    let want = ModelConfig::for_data(&ds.config);
    let mismatch = |what: &str, a: usize, b: usize| {
        Err(ModelError::Config(format!("model expects {what} = {a}, dataset has {b}")))
    };
    if cfg.fields != want.fields {
        return Err(ModelError::Config("non-behavioural field layout differs from the dataset".into()));
    }
    for (what, a, b) in [
        ("num_items", cfg.num_items, want.num_items),
        ("num_categories", cfg.num_categories, want.num_categories),
        ("d_m", cfg.d_m, want.d_m),
    ] {
        if a != b {
            return mismatch(what, a, b);
        }
    }
    if cfg.l_bu > want.l_bu {
        return mismatch("l_bu at most", cfg.l_bu, want.l_bu);
    }
    if cfg.l_bc > want.l_bc {
        return mismatch("l_bc at most", cfg.l_bc, want.l_bc);
    }
    Ok(())
}

pub fn featurize_all<T: Float>(
    cfg: &ModelConfig,
    ds: &Dataset,
    requests: &[crate::data::Request],
    exec: Execution,
) -> Result<Vec<RequestInputs<T>>, ModelError> {
    par::map(exec, requests, |r| featurize(cfg, &ds.catalog, r)).into_iter().collect()
}

pub fn split<T: Float>(cfg: &ModelConfig, ds: &Dataset, exec: Execution) -> Result<Split<T>, ModelError> {
    check_compatible(cfg, ds)?;
    let (tr, va) = ds.split(VALID_FRACTION);
    Ok(Split {
        train: featurize_all(cfg, ds, tr, exec)?,
        valid: featurize_all(cfg, ds, va, exec)?,
    })
}

#[derive(Debug, Clone)]
pub struct Outcome<T: Float> {
    pub model: Model<T>,
    pub state: TrainState<T>,
    pub report: TrainReport,
    /// Validation metrics of the final model.
    pub eval: EvalReport,
}

/// Builds a fresh model from `seed`, trains it and evaluates on the
/// validation split.
pub fn train_and_evaluate<T: Float>(
    cfg: &ModelConfig,
    seed: u64,
    data: &Split<T>,
    tc: &TrainConfig,
    obs: &mut dyn Observer<T>,
) -> Result<Outcome<T>, TrainError> {
    let mut model = Model::<T>::new(cfg.clone(), seed)?;
    let mut state = TrainState::new(&model, tc);
    let report = multi_epoch_train(&mut model, &mut state, &data.train, &data.valid, tc, obs)?;
    let eval = match report.epoch_evals.last() {
        Some(e) => e.clone(),
        None => evaluate(&model, &data.valid, tc.exec)?,
    };
    Ok(Outcome {
        model,
        state,
        report,
        eval,
    })
}
