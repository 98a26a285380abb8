//! Attention over adjacent rating channels and fusion of the local and
//! global views into final node representations.

use crate::error::{Error, Result};
use crate::hyper::LEAKY_SLOPE;
use crate::ndcore::{Tape, Var};

/// Ratings adjacent to `r` among `count` ordered categories: `r - 1` and
/// `r + 1` where they exist.
pub fn adjacent_ratings(r: usize, count: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(2);
    if r > 0 {
        out.push(r - 1);
    }
    if r + 1 < count {
        out.push(r + 1);
    }
    out
}

/// Per-channel outputs of [`cross_rating_attend`].
#[derive(Clone, Debug)]
pub struct Attended {
    /// `z^r` per rating.
    pub outputs: Vec<Var>,
    /// `n x |N_r|` attention weights per rating, columns ordered as
    /// [`adjacent_ratings`]. `None` for a rating without neighbours.
    pub weights: Vec<Option<Var>>,
}

/// `z^r = x^r + Σ_{r' ∈ N_r} λ^{r'} ⊙ x^{r'}`, where for every node
/// `λ^{r'} = softmax_{r' ∈ N_r} LeakyReLU(x^{r'}[i] · q^r)`.
pub fn cross_rating_attend(tape: &mut Tape, xs: &[Var], queries: &[Var]) -> Result<Attended> {
    if xs.len() != queries.len() {
        return Err(Error::shape(format!(
            "{} channels but {} attention vectors",
            xs.len(),
            queries.len()
        )));
    }
    let mut outputs = Vec::with_capacity(xs.len());
    let mut weights = Vec::with_capacity(xs.len());
    for (r, &q) in queries.iter().enumerate() {
        let nbrs = adjacent_ratings(r, xs.len());
        if nbrs.is_empty() {
            outputs.push(xs[r]);
            weights.push(None);
            continue;
        }
        let mut logits = Vec::with_capacity(nbrs.len());
        for &k in &nbrs {
            logits.push(tape.matmul(xs[k], q)?);
        }
        let logits = tape.concat_cols(&logits)?;
        let act = tape.leaky_relu(logits, LEAKY_SLOPE)?;
        let lambda = tape.softmax_rows(act, 1.0)?;
        let mut terms = vec![xs[r]];
        for (col, &k) in nbrs.iter().enumerate() {
            let w = tape.slice_cols(lambda, col, 1)?;
            terms.push(tape.row_scale(xs[k], w)?);
        }
        outputs.push(tape.add_all(&terms)?);
        weights.push(Some(lambda));
    }
    Ok(Attended { outputs, weights })
}

/// `tanh(Σ_r parts[r] · W)` with separate `W` for the user and item rows.
pub fn fuse_path(
    tape: &mut Tape,
    parts: &[Var],
    num_users: usize,
    user_weight: Var,
    item_weight: Var,
) -> Result<Var> {
    let total = tape.add_all(parts)?;
    let n = tape.shape(total).0;
    if num_users > n {
        return Err(Error::shape(format!("{num_users} users but only {n} nodes")));
    }
    let su = tape.slice_rows(total, 0, num_users)?;
    let sv = tape.slice_rows(total, num_users, n - num_users)?;
    let lu = tape.matmul(su, user_weight)?;
    let lv = tape.matmul(sv, item_weight)?;
    let zu = tape.tanh(lu);
    let zv = tape.tanh(lv);
    tape.concat_rows(&[zu, zv])
}

#[derive(Clone, Copy, Debug)]
pub struct FusedEmbeddings {
    /// Local view after fusion.
    pub local: Var,
    /// Global view after fusion, absent when the hypergraph path is off.
    pub global: Option<Var>,
    /// `local + global`.
    pub combined: Var,
}

/// Weights for [`fuse_views`].
#[derive(Clone, Copy, Debug)]
pub struct FusionWeights {
    pub local_user: Var,
    pub local_item: Var,
    pub global_user: Var,
    pub global_item: Var,
}

/// Fuses the attended local channels and, when present, the attended global
/// channels, and sums the two views.
pub fn fuse_views(
    tape: &mut Tape,
    local: &[Var],
    global: Option<&[Var]>,
    num_users: usize,
    w: FusionWeights,
) -> Result<FusedEmbeddings> {
    let z = fuse_path(tape, local, num_users, w.local_user, w.local_item)?;
    let Some(global) = global else {
        return Ok(FusedEmbeddings {
            local: z,
            global: None,
            combined: z,
        });
    };
    let g = fuse_path(tape, global, num_users, w.global_user, w.global_item)?;
    let e = tape.add(z, g)?;
    Ok(FusedEmbeddings {
        local: z,
        global: Some(g),
        combined: e,
    })
}
