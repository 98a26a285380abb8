use mhcl::harness::{evaluate_recommendation, Scorer};
use mhcl::ndcore::Matrix;
use rand::seq::SliceRandom;
use rand::Rng;

use super::{record, rng};

/// Scores every candidate, stable-sorts by descending score (ties keep
/// ascending item order) and evaluates the metrics position by position.
pub fn brute_force(scores: &[Vec<f64>], seen: &[Vec<u32>], relevant: &[Vec<u32>]) -> (f64, f64) {
    let mut mrr = 0.0;
    let mut ndcg = 0.0;
    let mut users = 0;
    for u in 0..scores.len() {
        if relevant[u].is_empty() {
            continue;
        }
        users += 1;
        let mut cands: Vec<usize> = (0..scores[u].len())
            .filter(|&v| !seen[u].contains(&(v as u32)))
            .collect();
        cands.sort_by(|&a, &b| scores[u][b].partial_cmp(&scores[u][a]).unwrap());
        let mut first = None;
        let mut dcg = 0.0;
        for (pos, &v) in cands.iter().take(10).enumerate() {
            if relevant[u].contains(&(v as u32)) {
                first.get_or_insert(pos + 1);
                dcg += 1.0 / ((pos + 2) as f64).log2();
            }
        }
        let ideal: f64 = (0..relevant[u].len().min(10))
            .map(|pos| 1.0 / ((pos + 2) as f64).log2())
            .sum();
        mrr += first.map_or(0.0, |p| 1.0 / p as f64);
        ndcg += dcg / ideal;
    }
    (mrr / users as f64, ndcg / users as f64)
}

/// `(engine, oracle)` pairs of `(MRR@10, NDCG@10)` on one random instance
/// with at most 10 users and 20 items.
pub fn compare_on_seed(seed: u64) -> ((f64, f64), (f64, f64)) {
    let mut r = rng(1000 + seed);
    let users = r.random_range(1..=10);
    let items = r.random_range(2..=20);
    // coarse embeddings so score ties actually occur
    let e = Matrix::from_fn(users + items, 2, |_, _| r.random_range(-2..=2) as f64);
    let mut seen = vec![Vec::new(); users];
    let mut relevant = vec![Vec::new(); users];
    let mut train = Vec::new();
    let mut test = Vec::new();
    for u in 0..users {
        let mut order: Vec<u32> = (0..items as u32).collect();
        order.shuffle(&mut r);
        let n_seen = r.random_range(0..items / 2 + 1);
        // user 0 always has a held-out item so every seed yields an instance
        let n_rel = r.random_range(usize::from(u == 0)..=(items - n_seen).min(4));
        for &v in &order[..n_seen] {
            seen[u].push(v);
            train.push(record(u as u32, v, 1));
        }
        for &v in &order[n_seen..n_seen + n_rel] {
            relevant[u].push(v);
            test.push(record(u as u32, v, 1));
        }
    }
    let scores: Vec<Vec<f64>> = (0..users)
        .map(|u| {
            (0..items)
                .map(|v| (0..2).map(|c| e.get(u, c) * e.get(users + v, c)).sum())
                .collect()
        })
        .collect();
    let scorer = Scorer {
        embeddings: &e,
        decoders: &[],
        num_users: users,
        categories: &[],
    };
    let report = evaluate_recommendation(&scorer, &train, &test).unwrap();
    let engine = (report.mrr_at_10.unwrap(), report.ndcg_at_10.unwrap());
    (engine, brute_force(&scores, &seen, &relevant))
}
