//! Scoring trained embeddings on a split.

use std::fmt;

use crate::data::RatingRecord;
use crate::error::{Error, Result};
use crate::harness::config::Task;
use crate::harness::metrics::{mrr_ndcg, mse_mae, top_k};
use crate::ndcore::Matrix;
use crate::objective::{predict_from_logits, Prediction};
use crate::par;

/// Cutoff of the ranking metrics.
pub const TOP_K: usize = 10;

/// Final embeddings and decoders: all that scoring needs.
#[derive(Clone, Copy, Debug)]
pub struct Scorer<'a> {
    /// Users over items.
    pub embeddings: &'a Matrix,
    pub decoders: &'a [&'a Matrix],
    pub num_users: usize,
    pub categories: &'a [u32],
}

impl Scorer<'_> {
    pub fn num_items(&self) -> usize {
        self.embeddings.rows() - self.num_users
    }

    fn check(&self) -> Result<()> {
        let dm = self.embeddings.cols();
        if self.decoders.len() != self.categories.len() {
            return Err(Error::shape(format!(
                "{} decoders for {} rating categories",
                self.decoders.len(),
                self.categories.len()
            )));
        }
        if let Some(q) = self.decoders.iter().find(|q| q.shape() != (dm, dm)) {
            return Err(Error::shape(format!(
                "decoder {:?} does not match embedding width {dm}",
                q.shape()
            )));
        }
        if self.num_users > self.embeddings.rows() {
            return Err(Error::shape("more users than embedding rows"));
        }
        Ok(())
    }

    fn check_ids(&self, user: u32, item: u32) -> Result<()> {
        if user as usize >= self.num_users || item as usize >= self.num_items() {
            return Err(Error::contract(format!(
                "pair ({user}, {item}) outside {} users x {} items",
                self.num_users,
                self.num_items()
            )));
        }
        Ok(())
    }

    /// Rating distributions for `(user, item)` pairs.
    pub fn predict(&self, pairs: &[(u32, u32)]) -> Result<Vec<Prediction>> {
        self.check()?;
        for &(u, v) in pairs {
            self.check_ids(u, v)?;
        }
        let users = Matrix::from_vec(
            self.num_users,
            self.embeddings.cols(),
            self.embeddings.as_slice()[..self.num_users * self.embeddings.cols()].to_vec(),
        )?;
        let projected: Vec<Matrix> = self
            .decoders
            .iter()
            .map(|q| users.matmul(q))
            .collect::<Result<_>>()?;
        let m = self.num_users;
        Ok(par::map_range(pairs.len(), |i| {
            let (u, v) = pairs[i];
            let ev = self.embeddings.row(m + v as usize);
            let logits: Vec<f64> = projected
                .iter()
                .map(|p| p.row(u as usize).iter().zip(ev).map(|(a, b)| a * b).sum())
                .collect();
            predict_from_logits(&logits, self.categories)
        }))
    }

    /// Expected ratings for a list of records.
    pub fn expected(&self, records: &[RatingRecord]) -> Result<Vec<f64>> {
        let pairs: Vec<(u32, u32)> = records.iter().map(|r| (r.user, r.item)).collect();
        Ok(self
            .predict(&pairs)?
            .into_iter()
            .map(|p| p.expected_rating)
            .collect())
    }

    /// Dot-product preference of `user` for every item.
    pub fn item_scores(&self, user: u32) -> Vec<f64> {
        let eu = self.embeddings.row(user as usize);
        (0..self.num_items())
            .map(|v| {
                self.embeddings
                    .row(self.num_users + v)
                    .iter()
                    .zip(eu)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }
}

/// Metrics of one split.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub task: Task,
    /// Scored records (completion) or ranked users (recommendation).
    pub count: usize,
    pub mse: Option<f64>,
    pub mae: Option<f64>,
    pub mrr_at_10: Option<f64>,
    pub ndcg_at_10: Option<f64>,
}

impl MetricsReport {
    /// Machine-readable `key=value` lines.
    pub fn key_values(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("task".to_string(), self.task.to_string()),
            ("count".to_string(), self.count.to_string()),
        ];
        for (k, v) in [
            ("mse", self.mse),
            ("mae", self.mae),
            ("mrr_at_10", self.mrr_at_10),
            ("ndcg_at_10", self.ndcg_at_10),
        ] {
            if let Some(v) = v {
                out.push((k.to_string(), format!("{v:.6}")));
            }
        }
        out
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>10}", "metric", "value")?;
        writeln!(f, "{:<12} {:>10}", "count", self.count)?;
        for (k, v) in [
            ("MSE", self.mse),
            ("MAE", self.mae),
            ("MRR@10", self.mrr_at_10),
            ("NDCG@10", self.ndcg_at_10),
        ] {
            if let Some(v) = v {
                writeln!(f, "{k:<12} {v:>10.4}")?;
            }
        }
        Ok(())
    }
}

/// MSE and MAE of expected ratings against `records`.
pub fn evaluate_completion(scorer: &Scorer<'_>, records: &[RatingRecord]) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(Error::contract("cannot evaluate an empty split"));
    }
    let pred = scorer.expected(records)?;
    let truth: Vec<f64> = records.iter().map(|r| r.rating as f64).collect();
    let (mse, mae) = mse_mae(&pred, &truth)?;
    Ok(MetricsReport {
        task: Task::Completion,
        count: records.len(),
        mse: Some(mse),
        mae: Some(mae),
        mrr_at_10: None,
        ndcg_at_10: None,
    })
}

/// Mean MRR@10 and NDCG@10 over users with held-out items. Each user's
/// candidates are all items outside their `seen` records, ranked by dot
/// product, ties by ascending item id.
pub fn evaluate_recommendation(
    scorer: &Scorer<'_>,
    seen: &[RatingRecord],
    held_out: &[RatingRecord],
) -> Result<MetricsReport> {
    let m = scorer.num_users;
    let n = scorer.num_items();
    let mut seen_by_user: Vec<Vec<u32>> = vec![Vec::new(); m];
    for r in seen {
        scorer.check_ids(r.user, r.item)?;
        seen_by_user[r.user as usize].push(r.item);
    }
    let mut relevant: Vec<Vec<u32>> = vec![Vec::new(); m];
    for r in held_out {
        scorer.check_ids(r.user, r.item)?;
        relevant[r.user as usize].push(r.item);
    }
    let users: Vec<usize> = (0..m).filter(|&u| !relevant[u].is_empty()).collect();
    if users.is_empty() {
        return Err(Error::contract("no user has held-out items"));
    }
    let per_user = par::map_range(users.len(), |i| {
        let u = users[i];
        let mut excluded = vec![false; n];
        for &v in &seen_by_user[u] {
            excluded[v as usize] = true;
        }
        let ranked = top_k(&scorer.item_scores(u as u32), &excluded, TOP_K);
        mrr_ndcg(&ranked, &relevant[u], TOP_K)
    });
    let count = users.len();
    let (mrr, ndcg) = per_user
        .iter()
        .fold((0.0, 0.0), |(a, b), (m, n)| (a + m, b + n));
    Ok(MetricsReport {
        task: Task::Recommendation,
        count,
        mse: None,
        mae: None,
        mrr_at_10: Some(mrr / count as f64),
        ndcg_at_10: Some(ndcg / count as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(user: u32, item: u32, rating: u32) -> RatingRecord {
        RatingRecord {
            user,
            item,
            rating,
            timestamp: None,
        }
    }

    #[test]
    fn uniform_decoder_scores_the_midpoint() {
        let e = Matrix::from_fn(4, 3, |i, j| (i + j) as f64 * 0.1);
        let q = Matrix::identity(3);
        let qs = [&q, &q, &q, &q, &q];
        let s = Scorer {
            embeddings: &e,
            decoders: &qs,
            num_users: 2,
            categories: &[1, 2, 3, 4, 5],
        };
        let r = evaluate_completion(&s, &[rec(0, 0, 1), rec(1, 1, 5)]).unwrap();
        assert!((r.mse.unwrap() - 4.0).abs() < 1e-12);
        assert!((r.mae.unwrap() - 2.0).abs() < 1e-12);
        assert!(evaluate_completion(&s, &[]).is_err());
        assert!(s.predict(&[(2, 0)]).is_err());
    }

    #[test]
    fn recommendation_excludes_seen_items() {
        // user 0 prefers item 0, then item 1; item 0 is already seen
        let e = Matrix::from_rows(&[[1.0, 0.0], [3.0, 0.0], [2.0, 0.0], [-1.0, 0.0]]);
        let s = Scorer {
            embeddings: &e,
            decoders: &[],
            num_users: 1,
            categories: &[],
        };
        let r = evaluate_recommendation(&s, &[rec(0, 0, 1)], &[rec(0, 1, 1)]).unwrap();
        assert_eq!(r.mrr_at_10, Some(1.0));
        assert_eq!(r.ndcg_at_10, Some(1.0));
        let r = evaluate_recommendation(&s, &[], &[rec(0, 1, 1)]).unwrap();
        assert_eq!(r.mrr_at_10, Some(0.5));
    }
}
