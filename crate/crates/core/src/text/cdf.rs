use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

/// Keeps the most-clicked categories whose cumulative click probability first
/// reaches `threshold`.
///
/// Counts are normalized, sorted descending (ties by key), and the shortest
/// prefix with cumulative mass `>= threshold` is kept. Zero-count categories
/// are never kept.
pub fn filter_labels_by_cdf<K: Ord + Clone>(click_counts: &BTreeMap<K, u64>, threshold: f64) -> Result<BTreeSet<K>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Config(format!("CDF threshold {threshold} must lie in (0, 1]")));
    }
    let total: u64 = click_counts.values().sum();
    if total == 0 {
        return Err(Error::NoSignal);
    }
    let mut ranked: Vec<(&K, u64)> = click_counts
        .iter()
        .filter(|(_, &c)| c > 0)
        .map(|(k, &c)| (k, c))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    // Integer accumulation; the comparison tolerance absorbs the rounding in
    // `threshold * total` (e.g. 0.9 * 10).
    let target = threshold * total as f64;
    let slack = 1e-9 * total as f64;
    let mut kept = BTreeSet::new();
    let mut cumulative = 0u64;
    for (k, c) in ranked {
        kept.insert(k.clone());
        cumulative += c;
        if cumulative as f64 >= target - slack {
            break;
        }
    }
    Ok(kept)
}
