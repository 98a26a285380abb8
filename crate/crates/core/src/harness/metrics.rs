//! Rating-error and top-k ranking metrics.

use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Mean squared and mean absolute error.
pub fn mse_mae(predicted: &[f64], truth: &[f64]) -> Result<(f64, f64)> {
    if predicted.len() != truth.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} targets",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::contract("cannot score an empty split"));
    }
    let n = predicted.len() as f64;
    let (se, ae) = predicted
        .iter()
        .zip(truth)
        .fold((0.0, 0.0), |(se, ae), (p, t)| (se + (p - t) * (p - t), ae + (p - t).abs()));
    Ok((se / n, ae / n))
}

/// Order for ranking: higher score first, then lower item id. Adding zero
/// folds `-0.0` into `0.0` so signed zeros tie.
pub fn rank_order(a: (u32, f64), b: (u32, f64)) -> Ordering {
    (b.1 + 0.0).total_cmp(&(a.1 + 0.0)).then(a.0.cmp(&b.0))
}

/// The `k` best candidates under [`rank_order`]. `scores[i]` is the score of
/// item `i`; items with `excluded[i]` set are skipped.
pub fn top_k(scores: &[f64], excluded: &[bool], k: usize) -> Vec<u32> {
    let mut cands: Vec<(u32, f64)> = scores
        .iter()
        .enumerate()
        .filter(|&(i, _)| !excluded.get(i).copied().unwrap_or(false))
        .map(|(i, &s)| (i as u32, s))
        .collect();
    if cands.len() > k && k > 0 {
        cands.select_nth_unstable_by(k - 1, |&a, &b| rank_order(a, b));
        cands.truncate(k);
    }
    cands.sort_by(|&a, &b| rank_order(a, b));
    cands.truncate(k);
    cands.into_iter().map(|(i, _)| i).collect()
}

/// Reciprocal rank and NDCG of a top-k list under binary relevance.
pub fn mrr_ndcg(ranked: &[u32], relevant: &[u32], k: usize) -> (f64, f64) {
    let is_rel = |i: u32| relevant.contains(&i);
    let mut mrr = 0.0;
    let mut dcg = 0.0;
    for (pos, &item) in ranked.iter().take(k).enumerate() {
        if is_rel(item) {
            if mrr == 0.0 {
                mrr = 1.0 / (pos + 1) as f64;
            }
            dcg += 1.0 / ((pos + 2) as f64).log2();
        }
    }
    let ideal: f64 = (0..relevant.len().min(k))
        .map(|pos| 1.0 / ((pos + 2) as f64).log2())
        .sum();
    let ndcg = if ideal > 0.0 { dcg / ideal } else { 0.0 };
    (mrr, ndcg)
}
