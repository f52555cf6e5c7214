use rand::seq::SliceRandom;

use super::{batch_gradients, batch_loss, TrainError};
use crate::model::{Model, RequestInputs};
use crate::par::Execution;
use crate::seed;

/// Denominator floor of the relative error, so entries whose true gradient
/// is ~0 are judged on absolute error instead.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_err: f64,
    /// Tensor name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares autodiff gradients of the mean batch loss with the fourth-order
/// central difference `[8(L(θ+h) − L(θ−h)) − (L(θ+2h) − L(θ−2h))] / 12h`
/// on up to `per_tensor` entries of
/// every tensor. Entries are drawn from those with a non-zero analytic
/// gradient (touched embedding rows, live weights), plus one arbitrary entry
/// per tensor so structural zeros are checked too.
pub fn grad_check(
    model: &mut Model<f64>,
    batch: &[&RequestInputs<f64>],
    per_tensor: usize,
    h: f64,
    seed_value: u64,
) -> Result<GradCheckReport, TrainError> {
    let (_, grads) = batch_gradients(model, batch, Execution::Sequential)?;
    let mut rng = seed::rng(seed_value, "grad_check", 0);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };
    let ids: Vec<_> = model.params.iter().map(|(id, p)| (id, p.name.clone())).collect();
    for (id, name) in ids {
        let g = &grads[id.0];
        let mut live: Vec<usize> = (0..g.len()).filter(|&i| g[i] != 0.0).collect();
        live.shuffle(&mut rng);
        live.truncate(per_tensor);
        if let Some(&any) = (0..g.len()).collect::<Vec<_>>().choose(&mut rng) {
            live.push(any);
        }
        for i in live {
            let orig = model.params.get(id).data()[i];
            let mut at = |x: f64| {
                model.params.get_mut(id).data_mut()[i] = x;
                batch_loss(model, batch)
            };
            let (p1, m1, p2, m2) = (at(orig + h)?, at(orig - h)?, at(orig + 2.0 * h)?, at(orig - 2.0 * h)?);
            model.params.get_mut(id).data_mut()[i] = orig;
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
            let a = g[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            if rel >= report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((name.clone(), i));
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
