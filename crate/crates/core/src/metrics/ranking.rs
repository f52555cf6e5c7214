use std::cmp::Ordering;
use std::collections::BTreeMap;

use super::MetricError;
use crate::tensor::BCE_CLAMP;

/// Mann–Whitney AUC with average ranks for tied scores.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::Argument(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let pos = labels.iter().filter(|&&l| l != 0).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricError::Undefined("auc needs both classes".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(MetricError::Argument("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean
        let avg = (i + j + 2) as f64 / 2.0;
        let tied_pos = order[i..=j].iter().filter(|&&k| labels[k] != 0).count();
        rank_sum += avg * tied_pos as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Per-user AUC, weighted by impression count over users that have both
/// classes. Single-class users contribute neither numerator nor weight.
pub fn gauc(scores: &[f64], labels: &[u8], user_ids: &[u64]) -> Result<f64, MetricError> {
    Ok(gauc_detail(scores, labels, user_ids)?.0)
}

/// GAUC together with the number of users that were scored.
pub fn gauc_detail(scores: &[f64], labels: &[u8], user_ids: &[u64]) -> Result<(f64, usize), MetricError> {
    if scores.len() != labels.len() || scores.len() != user_ids.len() {
        return Err(MetricError::Argument("scores, labels and user ids differ in length".into()));
    }
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, &u) in user_ids.iter().enumerate() {
        groups.entry(u).or_default().push(i);
    }
    let (mut num, mut den, mut users) = (0.0, 0.0, 0);
    for idx in groups.values() {
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let l: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
        match auc(&s, &l) {
            Ok(a) => {
                num += a * idx.len() as f64;
                den += idx.len() as f64;
                users += 1;
            }
            Err(MetricError::Undefined(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if users == 0 {
        return Err(MetricError::Undefined("gauc has no user with both classes".into()));
    }
    Ok((num / den, users))
}

/// Mean binary cross-entropy with predictions clamped to [1e-7, 1-1e-7].
pub fn log_loss(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(MetricError::Argument("log_loss needs equal, non-empty inputs".into()));
    }
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            if y != 0 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / scores.len() as f64)
}
