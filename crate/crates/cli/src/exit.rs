//! Maps error chains to process exit codes.

use std::fmt;

use est_core::data::DataError;
use est_core::metrics::MetricError;
use est_core::model::ModelError;
use est_core::tensor::TensorError;
use est_core::train::TrainError;

use crate::config::ConfigError;

pub const USAGE: u8 = 2;
pub const DATA: u8 = 3;
pub const NUMERIC: u8 = 4;

/// Bad flags or flag combinations detected after argument parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// A result that came out NaN or infinite.
#[derive(Debug)]
pub struct NumericError(pub String);

impl fmt::Display for NumericError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericError {}

fn tensor(e: &TensorError) -> u8 {
    match e {
        TensorError::NonFinite { .. } => NUMERIC,
        _ => 1,
    }
}

fn model(e: &ModelError) -> u8 {
    match e {
        ModelError::Config(_) => USAGE,
        ModelError::Schema(_) | ModelError::Format { .. } | ModelError::Io(_) => DATA,
        ModelError::Tensor(t) => tensor(t),
    }
}

/// Usage and config mistakes give 2, unreadable or inconsistent inputs 3,
/// non-finite numbers 4, anything else 1.
pub fn code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<ConfigError>() {
            return USAGE;
        }
        if cause.is::<NumericError>() {
            return NUMERIC;
        }
        if let Some(e) = cause.downcast_ref::<DataError>() {
            return match e {
                DataError::Config(_) => USAGE,
                DataError::Format { .. } | DataError::Io(_) => DATA,
            };
        }
        if let Some(e) = cause.downcast_ref::<ModelError>() {
            return model(e);
        }
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            return match e {
                TrainError::NonFinite(_) => NUMERIC,
                TrainError::Config(_) => USAGE,
                TrainError::Checkpoint(_) => DATA,
                TrainError::Model(m) => model(m),
                TrainError::Tensor(t) => tensor(t),
                TrainError::Metric(_) => 1,
            };
        }
        if let Some(e) = cause.downcast_ref::<TensorError>() {
            return tensor(e);
        }
        if cause.is::<MetricError>() {
            return 1;
        }
        if cause.is::<std::io::Error>() {
            return DATA;
        }
    }
    1
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn codes_follow_the_innermost_known_cause() {
        let e = anyhow::Error::new(TrainError::NonFinite("loss".into())).context("training");
        assert_eq!(code(&e), NUMERIC);
        let e = anyhow::Error::new(DataError::Format { offset: 3, msg: "bad".into() });
        assert_eq!(code(&e), DATA);
        let e: anyhow::Error = Err::<(), _>(UsageError("x".into())).context("outer").unwrap_err();
        assert_eq!(code(&e), USAGE);
        let e = anyhow::Error::new(TrainError::Model(ModelError::Config("dims".into())));
        assert_eq!(code(&e), USAGE);
        assert_eq!(code(&anyhow::anyhow!("other")), 1);
    }
}
