//! Learned soft hypergraphs over users and over items, and spectral
//! hypergraph convolution on them.

use crate::error::{Error, Result};
use crate::ndcore::{Tape, Var};

pub const LEAKY_SLOPE: f64 = 0.2;

/// Hyperedge degrees are floored here before inversion.
pub const DEGREE_FLOOR: f64 = 1e-12;

/// Soft membership `softmax_rows(LeakyReLU(x · W))`, one row per node and one
/// column per hyperedge.
pub fn learn_hypergraph(tape: &mut Tape, x: Var, projection: Var) -> Result<Var> {
    let logits = tape.matmul(x, projection)?;
    let act = tape.leaky_relu(logits, LEAKY_SLOPE)?;
    tape.softmax_rows(act, 1.0)
}

/// `H · D_e^{-1} · Hᵀ · x` with `D_e` the diagonal of hyperedge degrees
/// (column sums of `H`).
pub fn hyper_conv(tape: &mut Tape, membership: Var, x: Var) -> Result<Var> {
    if tape.shape(membership).0 != tape.shape(x).0 {
        return Err(Error::shape(format!(
            "hyper_conv: membership has {} rows, embeddings {}",
            tape.shape(membership).0,
            tape.shape(x).0
        )));
    }
    let edge_features = tape.matmul_tn(membership, x)?;
    let degrees = tape.column_sums(membership);
    let inv = tape.recip_floor(degrees, DEGREE_FLOOR);
    let scaled = tape.row_scale(edge_features, inv)?;
    tape.matmul(membership, scaled)
}

/// User and item hypergraphs of one rating channel.
#[derive(Clone, Copy, Debug)]
pub struct HypergraphPair {
    pub users: Var,
    pub items: Var,
}

/// Global embeddings of one rating channel, users stacked over items.
#[derive(Clone, Copy, Debug)]
pub struct GlobalEmbeddings {
    pub membership: HypergraphPair,
    pub stacked: Var,
}

/// Splits `local` (users over items) by node type, learns a hypergraph for
/// each side with its own projection and convolves.
pub fn global_embeddings(
    tape: &mut Tape,
    local: Var,
    num_users: usize,
    user_projection: Var,
    item_projection: Var,
) -> Result<GlobalEmbeddings> {
    let n = tape.shape(local).0;
    if num_users > n {
        return Err(Error::shape(format!("{num_users} users but only {n} nodes")));
    }
    let xu = tape.slice_rows(local, 0, num_users)?;
    let xv = tape.slice_rows(local, num_users, n - num_users)?;
    let hu = learn_hypergraph(tape, xu, user_projection)?;
    let hv = learn_hypergraph(tape, xv, item_projection)?;
    let gu = hyper_conv(tape, hu, xu)?;
    let gv = hyper_conv(tape, hv, xv)?;
    let stacked = tape.concat_rows(&[gu, gv])?;
    Ok(GlobalEmbeddings {
        membership: HypergraphPair {
            users: hu,
            items: hv,
        },
        stacked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::Matrix;

    #[test]
    fn single_hyperedge_averages() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64));
        let w = tape.constant(Matrix::from_fn(3, 1, |i, _| i as f64 - 1.0));
        let h = learn_hypergraph(&mut tape, x, w).unwrap();
        assert_eq!(tape.value(h), &Matrix::filled(4, 1, 1.0));
        let out = hyper_conv(&mut tape, h, x).unwrap();
        let means = [4.5, 5.5, 6.5];
        for i in 0..4 {
            for (v, m) in tape.value(out).row(i).iter().zip(means) {
                assert!((v - m).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_membership_is_identity() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::from_fn(3, 2, |i, j| (i as f64 + 1.0) * (j as f64 - 0.5)));
        let h = tape.constant(Matrix::identity(3));
        let out = hyper_conv(&mut tape, h, x).unwrap();
        for (a, b) in tape.value(out).as_slice().iter().zip(tape.value(x).as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_rows_get_identical_memberships() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::from_rows(&[[0.3, -1.0], [0.3, -1.0], [2.0, 0.1]]));
        let w = tape.constant(Matrix::from_rows(&[[1.0, -0.5, 0.2], [0.4, 0.9, -1.1]]));
        let h = learn_hypergraph(&mut tape, x, w).unwrap();
        let hv = tape.value(h);
        assert_eq!(hv.row(0), hv.row(1));
        for i in 0..3 {
            assert!((hv.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(hv.row(i).iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn row_mismatch_is_a_shape_error() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::zeros(3, 2));
        let h = tape.constant(Matrix::zeros(4, 2));
        assert!(hyper_conv(&mut tape, h, x).is_err());
    }
}
