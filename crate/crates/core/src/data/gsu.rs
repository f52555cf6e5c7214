use super::catalog::{dot, Catalog};
use super::PAD;

/// General-search-unit stand-in: the `l_bc` lifelong items with the highest
/// content cosine to `candidate` (later positions win ties), returned in
/// their original chronological order. Pad entries are ignored.
pub fn gsu_retrieve(lifelong: &[u32], candidate: u32, catalog: &Catalog, l_bc: usize) -> Vec<u32> {
    let valid: Vec<usize> = (0..lifelong.len()).filter(|&i| lifelong[i] != PAD).collect();
    if valid.len() <= l_bc {
        return valid.iter().map(|&i| lifelong[i]).collect();
    }
    let c = catalog.content_row(candidate);
    let mut scored: Vec<(f64, usize)> = valid
        .iter()
        .map(|&i| (dot(c, catalog.content_row(lifelong[i])), i))
        .collect();
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(b.1.cmp(&a.1))
    });
    let mut keep: Vec<usize> = scored[..l_bc].iter().map(|&(_, i)| i).collect();
    keep.sort_unstable();
    keep.into_iter().map(|i| lifelong[i]).collect()
}
