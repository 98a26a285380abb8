use std::sync::Arc;

use crate::data::{RatingDataset, RatingRecord};
use crate::ndcore::SparseMatrix;

/// Bipartite graph of a single rating category over all `M + N` nodes
/// (users first, then items offset by `M`), with symmetric normalization
/// `1 / sqrt(|N(i)| |N(j)|)` stored on each edge.
#[derive(Clone, Debug)]
pub struct RatingGraph {
    pub rating: u32,
    pub adjacency: Arc<SparseMatrix>,
    pub degrees: Vec<usize>,
    pub edges: usize,
}

impl RatingGraph {
    pub fn coefficient(&self, i: usize, j: usize) -> Option<f64> {
        self.adjacency.row(i).find(|&(c, _)| c == j).map(|(_, v)| v)
    }
}

/// One [`RatingGraph`] per rating category, in category order.
#[derive(Clone, Debug)]
pub struct RatingSubgraphs {
    pub num_users: usize,
    pub num_items: usize,
    pub graphs: Vec<RatingGraph>,
}

impl RatingSubgraphs {
    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn item_node(&self, item: u32) -> usize {
        self.num_users + item as usize
    }
}

/// Builds the per-rating graphs from the train split only.
pub fn build_subgraphs(dataset: &RatingDataset) -> RatingSubgraphs {
    build_from_records(
        dataset.num_users,
        dataset.num_items,
        &dataset.categories,
        &dataset.train,
    )
}

pub fn build_from_records(
    num_users: usize,
    num_items: usize,
    categories: &[u32],
    records: &[RatingRecord],
) -> RatingSubgraphs {
    let n = num_users + num_items;
    let graphs = categories
        .iter()
        .map(|&rating| {
            let mut degrees = vec![0usize; n];
            let edges: Vec<(usize, usize)> = records
                .iter()
                .filter(|r| r.rating == rating)
                .map(|r| (r.user as usize, num_users + r.item as usize))
                .collect();
            for &(u, v) in &edges {
                degrees[u] += 1;
                degrees[v] += 1;
            }
            let triplets = edges.iter().flat_map(|&(u, v)| {
                let c = 1.0 / ((degrees[u] * degrees[v]) as f64).sqrt();
                [(u, v, c), (v, u, c)]
            });
            let adjacency = SparseMatrix::from_triplets(n, n, triplets)
                .expect("dense ids lie inside the node range");
            RatingGraph {
                rating,
                adjacency: Arc::new(adjacency),
                degrees,
                edges: edges.len(),
            }
        })
        .collect();
    RatingSubgraphs {
        num_users,
        num_items,
        graphs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::Matrix;

    fn rec(user: u32, item: u32, rating: u32) -> RatingRecord {
        RatingRecord {
            user,
            item,
            rating,
            timestamp: None,
        }
    }

    #[test]
    fn single_edge_has_unit_coefficient() {
        let g = build_from_records(1, 1, &[1, 2, 3, 4, 5], &[rec(0, 0, 5)]);
        let g5 = &g.graphs[4];
        assert_eq!(g5.coefficient(0, 1), Some(1.0));
        assert_eq!(g5.coefficient(1, 0), Some(1.0));
        assert_eq!(g.graphs[0].edges, 0);
        assert_eq!(g.graphs[0].adjacency.nnz(), 0);
    }

    #[test]
    fn degree_two_user() {
        let g = build_from_records(1, 2, &[1, 2], &[rec(0, 0, 2), rec(0, 1, 2)]);
        let c = g.graphs[1].coefficient(0, 1).unwrap();
        assert!((c - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(g.graphs[1].degrees, vec![2, 1, 1]);
    }

    /// Dense `D^{-1/2} A D^{-1/2}` for comparison.
    fn dense_normalized(n_users: usize, n_items: usize, edges: &[(u32, u32)]) -> Matrix {
        let n = n_users + n_items;
        let mut a = Matrix::zeros(n, n);
        for &(u, v) in edges {
            let (i, j) = (u as usize, n_users + v as usize);
            a.set(i, j, 1.0);
            a.set(j, i, 1.0);
        }
        let deg: Vec<f64> = (0..n).map(|i| a.row(i).iter().sum()).collect();
        Matrix::from_fn(n, n, |i, j| {
            if a.get(i, j) == 0.0 {
                0.0
            } else {
                a.get(i, j) / (deg[i] * deg[j]).sqrt()
            }
        })
    }

    #[test]
    fn matches_dense_normalization() {
        let edges = [(0, 0), (0, 3), (1, 3), (2, 1), (2, 2), (2, 3), (3, 4), (1, 0)];
        let records: Vec<_> = edges.iter().map(|&(u, v)| rec(u, v, 1)).collect();
        let g = build_from_records(4, 5, &[1], &records);
        let got = g.graphs[0].adjacency.to_dense();
        let want = dense_normalized(4, 5, &edges);
        for (x, y) in got.as_slice().iter().zip(want.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
