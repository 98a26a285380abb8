//! Loss terms and the bilinear rating decoder.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ndcore::{Matrix, Tape, Var};

/// Weights and temperatures of the training objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Cross-rating contrastive weight.
    pub alpha: f64,
    /// Global-local contrastive weight.
    pub beta: f64,
    /// Adjacent-table regularizer weight.
    pub lambda_nrr: f64,
    /// Cross-rating temperature.
    pub tau: f64,
    /// Global-local temperature.
    pub gamma: f64,
    /// Soft label given to the ratings next to the true one.
    pub l_close: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.01,
            beta: 0.01,
            lambda_nrr: 0.01,
            tau: 0.2,
            gamma: 0.2,
            l_close: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("lambda_nrr", self.lambda_nrr),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        for (name, v) in [("tau", self.tau), ("gamma", self.gamma)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.l_close) {
            return Err(Error::Config(format!("l_close must lie in [0, 1), got {}", self.l_close)));
        }
        Ok(())
    }
}

/// Anchor subsets used to cap the number of contrastive negatives.
#[derive(Clone, Debug, Default)]
pub struct Anchors {
    pub users: Option<Arc<Vec<usize>>>,
    pub items: Option<Arc<Vec<usize>>>,
}

/// Mean contrastive loss between two views of the same anchors: rows are
/// L2-normalized, the positive is the same row of `b`, negatives are all
/// other rows of `b`.
pub fn infonce(tape: &mut Tape, a: Var, b: Var, temperature: f64) -> Result<Var> {
    let na = tape.normalize_rows(a);
    let nb = tape.normalize_rows(b);
    tape.contrastive_nll(na, nb, temperature)
}

fn sides(
    tape: &mut Tape,
    x: Var,
    num_users: usize,
    anchors: &Anchors,
) -> Result<(Var, Var)> {
    let n = tape.shape(x).0;
    let mut u = tape.slice_rows(x, 0, num_users)?;
    let mut v = tape.slice_rows(x, num_users, n - num_users)?;
    if let Some(idx) = &anchors.users {
        u = tape.gather_rows(u, idx.clone())?;
    }
    if let Some(idx) = &anchors.items {
        v = tape.gather_rows(v, idx.clone())?;
    }
    Ok((u, v))
}

/// Both-sided contrastive loss between two stacked (users over items) views.
pub fn two_sided_infonce(
    tape: &mut Tape,
    a: Var,
    b: Var,
    num_users: usize,
    temperature: f64,
    anchors: &Anchors,
) -> Result<Var> {
    let (au, av) = sides(tape, a, num_users, anchors)?;
    let (bu, bv) = sides(tape, b, num_users, anchors)?;
    let lu = infonce(tape, au, bu, temperature)?;
    let lv = infonce(tape, av, bv, temperature)?;
    tape.add(lu, lv)
}

/// Sum over adjacent channel pairs `(k, k+1)` of the user and item
/// contrastive losses between their local embeddings.
pub fn cross_rating_infonce(
    tape: &mut Tape,
    channels: &[Var],
    num_users: usize,
    tau: f64,
    anchors: &Anchors,
) -> Result<Var> {
    if channels.len() < 2 {
        return Ok(tape.constant(Matrix::scalar(0.0)));
    }
    let mut terms = Vec::with_capacity(channels.len() - 1);
    for pair in channels.windows(2) {
        terms.push(two_sided_infonce(tape, pair[0], pair[1], num_users, tau, anchors)?);
    }
    tape.add_all(&terms)
}

/// Contrastive loss aligning each node's fused local and global views.
pub fn global_local_infonce(
    tape: &mut Tape,
    local: Var,
    global: Var,
    num_users: usize,
    gamma: f64,
    anchors: &Anchors,
) -> Result<Var> {
    two_sided_infonce(tape, local, global, num_users, gamma, anchors)
}

/// Rating logits `e_u · Q_r · e_v` for each `(user, item)` pair, one column
/// per rating. `e` stacks users over items.
pub fn decode_logits(
    tape: &mut Tape,
    e: Var,
    decoders: &[Var],
    num_users: usize,
    pairs: &[(u32, u32)],
) -> Result<Var> {
    let eu = tape.slice_rows(e, 0, num_users)?;
    let index: Arc<Vec<(usize, usize)>> = Arc::new(
        pairs
            .iter()
            .map(|&(u, v)| (u as usize, num_users + v as usize))
            .collect(),
    );
    let mut cols = Vec::with_capacity(decoders.len());
    for &q in decoders {
        let projected = tape.matmul(eu, q)?;
        cols.push(tape.pair_dot(projected, e, index.clone())?);
    }
    tape.concat_cols(&cols)
}

/// Distribution over rating categories for one query.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub prob: Vec<f64>,
    pub expected_rating: f64,
}

/// Softmax of one logit row and the probability-weighted rating.
pub fn predict_from_logits(logits: &[f64], categories: &[u32]) -> Prediction {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let prob: Vec<f64> = exps.iter().map(|e| e / total).collect();
    let expected_rating = prob.iter().zip(categories).map(|(p, &c)| p * c as f64).sum();
    Prediction {
        prob,
        expected_rating,
    }
}

/// Decodes a single `(e_u, e_v)` pair outside the tape.
pub fn decode(eu: &[f64], ev: &[f64], decoders: &[Matrix], categories: &[u32]) -> Result<Prediction> {
    let mut logits = Vec::with_capacity(decoders.len());
    for q in decoders {
        if q.rows() != eu.len() || q.cols() != ev.len() {
            return Err(Error::shape(format!(
                "decoder {}x{} against embeddings of width {} and {}",
                q.rows(),
                q.cols(),
                eu.len(),
                ev.len()
            )));
        }
        let mut s = 0.0;
        for (i, &a) in eu.iter().enumerate() {
            s += a * q.row(i).iter().zip(ev).map(|(w, b)| w * b).sum::<f64>();
        }
        logits.push(s);
    }
    Ok(predict_from_logits(&logits, categories))
}

/// Soft target for the category at `true_index`: 1 there, `l_close` on each
/// existing neighbour, renormalized to sum to 1.
pub fn soft_target(true_index: usize, count: usize, l_close: f64) -> Vec<f64> {
    let mut t = vec![0.0; count];
    t[true_index] = 1.0;
    if true_index > 0 {
        t[true_index - 1] = l_close;
    }
    if true_index + 1 < count {
        t[true_index + 1] = l_close;
    }
    let total: f64 = t.iter().sum();
    t.iter_mut().for_each(|v| *v /= total);
    t
}

/// Stacked soft targets for a list of true ratings.
pub fn soft_targets(ratings: &[u32], categories: &[u32], l_close: f64) -> Result<Matrix> {
    let k = categories.len();
    let mut data = Vec::with_capacity(ratings.len() * k);
    for &r in ratings {
        let idx = categories.iter().position(|&c| c == r).ok_or_else(|| {
            Error::contract(format!("rating {r} is not one of the categories {categories:?}"))
        })?;
        data.extend(soft_target(idx, k, l_close));
    }
    Matrix::from_vec(ratings.len(), k, data)
}

/// Cross-entropy against soft targets, averaged over rows.
pub fn balanced_ce(tape: &mut Tape, logits: Var, targets: &Matrix) -> Result<Var> {
    if tape.shape(logits) != targets.shape() {
        return Err(Error::shape(format!(
            "balanced_ce: logits {:?} vs targets {:?}",
            tape.shape(logits),
            targets.shape()
        )));
    }
    let rows = targets.rows().max(1) as f64;
    let logp = tape.log_softmax_rows(logits);
    let t = tape.constant(targets.clone());
    let weighted = tape.mul(logp, t)?;
    let total = tape.sum(weighted);
    Ok(tape.scale(total, -1.0 / rows))
}

/// [`balanced_ce`] for one predicted distribution, with log probabilities
/// clamped at `1e-12`.
pub fn balanced_ce_value(prob: &[f64], true_rating: u32, categories: &[u32], l_close: f64) -> Result<f64> {
    let t = soft_targets(&[true_rating], categories, l_close)?;
    Ok(-t
        .as_slice()
        .iter()
        .zip(prob)
        .map(|(t, p)| t * p.max(1e-12).ln())
        .sum::<f64>())
}

/// Mean squared Frobenius distance between consecutive rating tables.
pub fn nrr_penalty(tape: &mut Tape, tables: &[Var]) -> Result<Var> {
    if tables.len() < 2 {
        return Ok(tape.constant(Matrix::scalar(0.0)));
    }
    let mut terms = Vec::with_capacity(tables.len() - 1);
    for pair in tables.windows(2) {
        let d = tape.sub(pair[0], pair[1])?;
        terms.push(tape.frobenius_sq(d));
    }
    let total = tape.add_all(&terms)?;
    Ok(tape.scale(total, 1.0 / (tables.len() - 1) as f64))
}

/// `main + α·L_S + β·L_P + λ·L_NRR`; absent terms contribute nothing.
pub fn total_loss(
    tape: &mut Tape,
    main: Var,
    cross_rating: Option<Var>,
    global_local: Option<Var>,
    nrr: Option<Var>,
    w: &LossWeights,
) -> Result<Var> {
    let mut terms = vec![main];
    for (term, weight) in [
        (cross_rating, w.alpha),
        (global_local, w.beta),
        (nrr, w.lambda_nrr),
    ] {
        if let Some(t) = term {
            terms.push(tape.scale(t, weight));
        }
    }
    tape.add_all(&terms)
}

/// Pairwise ranking loss over `(user, positive item, negative item)`
/// triples: the mean of `-ln σ(ŷ⁺ - ŷ⁻)` plus `reg` times the mean squared
/// norm of the embeddings involved. Scores are dot products of rows of `e`.
pub fn bpr_loss(
    tape: &mut Tape,
    e: Var,
    num_users: usize,
    triples: &[(u32, u32, u32)],
    reg: f64,
) -> Result<Var> {
    if triples.is_empty() {
        return Ok(tape.constant(Matrix::scalar(0.0)));
    }
    let m = num_users;
    let pos: Arc<Vec<(usize, usize)>> =
        Arc::new(triples.iter().map(|&(u, p, _)| (u as usize, m + p as usize)).collect());
    let neg: Arc<Vec<(usize, usize)>> =
        Arc::new(triples.iter().map(|&(u, _, q)| (u as usize, m + q as usize)).collect());
    let yp = tape.pair_dot(e, e, pos)?;
    let yn = tape.pair_dot(e, e, neg)?;
    let diff = tape.sub(yp, yn)?;
    let ls = tape.log_sigmoid(diff);
    let fit = tape.mean(ls);
    let fit = tape.scale(fit, -1.0);
    if reg == 0.0 {
        return Ok(fit);
    }
    let rows: Arc<Vec<usize>> = Arc::new(
        triples
            .iter()
            .flat_map(|&(u, p, q)| [u as usize, m + p as usize, m + q as usize])
            .collect(),
    );
    let gathered = tape.gather_rows(e, rows)?;
    let norm = tape.frobenius_sq(gathered);
    let penalty = tape.scale(norm, reg / triples.len() as f64);
    tape.add(fit, penalty)
}

/// Which main loss drives rating prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MainLoss {
    /// Cross-entropy against neighbour-smoothed soft targets.
    Balanced,
    /// Ordinal cross-entropy. Not provided.
    Ordinal,
}

impl MainLoss {
    pub fn check_supported(self) -> Result<()> {
        match self {
            MainLoss::Balanced => Ok(()),
            MainLoss::Ordinal => Err(Error::NotImplemented(
                "ordinal cross-entropy main loss".into(),
            )),
        }
    }
}
