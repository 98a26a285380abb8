//! Per-rating node embeddings and parameter-free propagation on each rating
//! graph.
//!
//! Node `i` (users first, then items) starts in rating channel `r` as the
//! concatenation of three rows of the channel's table `E^r`: row 0 (shared by
//! every node), row 1 or 2 (user or item role) and row `3 + i` (its own). The
//! table is `(M + N + 3) x d`, so the initial width is `3d`.

use std::sync::Arc;

use rand::Rng;

use crate::data::RatingGraph;
use crate::error::{Error, Result};
use crate::ndcore::{xavier_uniform, Matrix, Tape, Var};

pub const SHARED_SLOT: usize = 0;
pub const USER_ROLE_SLOT: usize = 1;
pub const ITEM_ROLE_SLOT: usize = 2;
pub const FIRST_NODE_SLOT: usize = 3;

/// Row lookups that assemble initial embeddings from a channel table.
#[derive(Clone, Debug)]
pub struct SlotIndex {
    pub num_users: usize,
    pub num_items: usize,
    shared: Arc<Vec<usize>>,
    role: Arc<Vec<usize>>,
    own: Arc<Vec<usize>>,
}

impl SlotIndex {
    pub fn new(num_users: usize, num_items: usize) -> Self {
        let n = num_users + num_items;
        let role = (0..n)
            .map(|i| if i < num_users { USER_ROLE_SLOT } else { ITEM_ROLE_SLOT })
            .collect();
        SlotIndex {
            num_users,
            num_items,
            shared: Arc::new(vec![SHARED_SLOT; n]),
            role: Arc::new(role),
            own: Arc::new((FIRST_NODE_SLOT..FIRST_NODE_SLOT + n).collect()),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn table_rows(&self) -> usize {
        self.num_nodes() + FIRST_NODE_SLOT
    }
}

/// One `(M + N + 3) x d` table per rating category.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub tables: Vec<Matrix>,
    pub width: usize,
}

impl EmbeddingTable {
    pub fn model_width(&self) -> usize {
        3 * self.width
    }
}

/// Xavier-initialized tables, one per rating, drawn in rating order.
pub fn init_embeddings<R: Rng + ?Sized>(
    index: &SlotIndex,
    num_ratings: usize,
    width: usize,
    rng: &mut R,
) -> Result<EmbeddingTable> {
    if width == 0 {
        return Err(Error::Config("embedding width d must be at least 1".into()));
    }
    let tables = (0..num_ratings)
        .map(|_| xavier_uniform(index.table_rows(), width, rng))
        .collect();
    Ok(EmbeddingTable { tables, width })
}

/// Layer-0 embeddings `[E[0] | E[role] | E[3 + i]]` for every node.
pub fn initial_embeddings(tape: &mut Tape, table: Var, index: &SlotIndex) -> Result<Var> {
    let rows = tape.shape(table).0;
    if rows != index.table_rows() {
        return Err(Error::shape(format!(
            "embedding table has {rows} rows, expected {}",
            index.table_rows()
        )));
    }
    let shared = tape.gather_rows(table, index.shared.clone())?;
    let role = tape.gather_rows(table, index.role.clone())?;
    let own = tape.gather_rows(table, index.own.clone())?;
    tape.concat_cols(&[shared, role, own])
}

/// Propagated layers of one rating channel.
#[derive(Clone, Debug)]
pub struct LocalEmbeddings {
    /// `x_0 ..= x_L`.
    pub layers: Vec<Var>,
    /// `Σ θ^l x_l / Σ θ^l`.
    pub combined: Var,
}

/// Layer weights `θ^l / Σ_k θ^k` for `l = 0..=layers`.
pub fn layer_weights(layers: usize, theta: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..=layers).map(|l| theta.powi(l as i32)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// `x_{l+1}[i] = Σ_{j ∈ N(i)} x_l[j] / sqrt(|N(i)| |N(j)|)` for `layers`
/// steps, then the θ-weighted average of all layers.
pub fn propagate(
    tape: &mut Tape,
    x0: Var,
    graph: &RatingGraph,
    layers: usize,
    theta: f64,
) -> Result<LocalEmbeddings> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::Config(format!("theta must lie in (0, 1], got {theta}")));
    }
    let mut xs = vec![x0];
    for _ in 0..layers {
        let prev = *xs.last().expect("layer 0 present");
        // the normalized adjacency is symmetric, so it is its own transpose
        let next = tape.spmm(&graph.adjacency, graph.adjacency.clone(), prev)?;
        xs.push(next);
    }
    let weights = layer_weights(layers, theta);
    let terms: Vec<Var> = xs
        .iter()
        .zip(&weights)
        .map(|(&x, &w)| tape.scale(x, w))
        .collect();
    let combined = tape.add_all(&terms)?;
    Ok(LocalEmbeddings {
        layers: xs,
        combined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_from_records, RatingRecord};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn initial_rows_share_slots() {
        let index = SlotIndex::new(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let table = init_embeddings(&index, 5, 4, &mut rng).unwrap();
        assert_eq!(table.tables.len(), 5);
        assert_eq!(table.tables[0].shape(), (8, 4));
        let mut tape = Tape::new();
        let e = tape.param(table.tables[2].clone());
        let x0 = initial_embeddings(&mut tape, e, &index).unwrap();
        let x = tape.value(x0);
        assert_eq!(x.shape(), (5, 12));
        // shared slot: first d columns equal for a user and an item
        assert_eq!(&x.row(0)[..4], &x.row(3)[..4]);
        // role slot: users agree, items agree, users differ from items
        assert_eq!(&x.row(0)[4..8], &x.row(1)[4..8]);
        assert_eq!(&x.row(2)[4..8], &x.row(4)[4..8]);
        assert_ne!(&x.row(0)[4..8], &x.row(2)[4..8]);
        assert_eq!(&x.row(4)[8..], table.tables[2].row(FIRST_NODE_SLOT + 4));
    }

    #[test]
    fn zero_width_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(init_embeddings(&SlotIndex::new(1, 1), 2, 0, &mut rng).is_err());
    }

    #[test]
    fn no_layers_is_identity() {
        let g = build_from_records(1, 1, &[1], &[]);
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::from_fn(2, 3, |i, j| (i + j) as f64));
        let out = propagate(&mut tape, x, &g.graphs[0], 0, 0.5).unwrap();
        assert_eq!(tape.value(out.combined), tape.value(x));
    }

    #[test]
    fn single_edge_swaps_endpoints() {
        let rec = RatingRecord {
            user: 0,
            item: 0,
            rating: 1,
            timestamp: None,
        };
        let g = build_from_records(1, 1, &[1], &[rec]);
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]));
        let out = propagate(&mut tape, x, &g.graphs[0], 1, 0.5).unwrap();
        assert_eq!(tape.value(out.layers[1]), &Matrix::from_rows(&[[3.0, 4.0], [1.0, 2.0]]));
    }

    #[test]
    fn isolated_nodes_propagate_to_zero() {
        let rec = RatingRecord {
            user: 0,
            item: 1,
            rating: 1,
            timestamp: None,
        };
        let g = build_from_records(2, 2, &[1], &[rec]);
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::filled(4, 2, 1.0));
        let out = propagate(&mut tape, x, &g.graphs[0], 2, 0.5).unwrap();
        for l in 1..=2 {
            let v = tape.value(out.layers[l]);
            assert_eq!(v.row(1), &[0.0, 0.0]);
            assert_eq!(v.row(2), &[0.0, 0.0]);
        }
    }

    #[test]
    fn layer_weights_are_normalized_geometric() {
        let w = layer_weights(3, 0.5);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((w[0] - 8.0 / 15.0).abs() < 1e-15);
        assert!((w[3] - 1.0 / 15.0).abs() < 1e-15);
    }
}
