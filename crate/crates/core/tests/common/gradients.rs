use std::sync::Arc;

use super::{gradient_error, random_matrix, rng, six_node_graphs, six_node_records, weighted_sum};
use mhcl::embed::{initial_embeddings, propagate, SlotIndex};
use mhcl::hyper::{hyper_conv, learn_hypergraph};
use mhcl::model::{forward_vars, ForwardConfig, ModelParams, ModelShape, ParamVars, Role};
use mhcl::ndcore::{Matrix, SparseMatrix, Tape, Var};
use mhcl::objective::{
    balanced_ce, bpr_loss, cross_rating_infonce, decode_logits, global_local_infonce, nrr_penalty,
    soft_targets, total_loss, Anchors, LossWeights,
};

/// Worst relative error per named check.
#[derive(Default)]
pub struct Checks {
    pub results: Vec<(String, f64)>,
}

impl Checks {
    pub fn check<F>(&mut self, name: &str, inputs: &[Matrix], f: F)
    where
        F: Fn(&mut Tape, &[Var]) -> Var,
    {
        self.results.push((name.to_string(), gradient_error(inputs, f)));
    }
}

/// Every group, in order.
pub const GROUPS: [(&str, fn(&mut Checks)); 9] = [
    ("products", products),
    ("sparse_product", sparse_product),
    ("elementwise", elementwise),
    ("reshaping", reshaping),
    ("reductions_and_losses", reductions_and_losses),
    ("objective_terms", objective_terms),
    ("propagation_two_layers", propagation_two_layers),
    ("hypergraph_path", hypergraph_path),
    ("end_to_end_six_nodes", end_to_end_six_nodes),
];

fn inputs(seed: u64, shapes: &[(usize, usize)]) -> Vec<Matrix> {
    let mut r = rng(seed);
    shapes
        .iter()
        .map(|&(a, b)| random_matrix(&mut r, a, b, 1.0))
        .collect()
}

fn positive(seed: u64, rows: usize, cols: usize) -> Matrix {
    random_matrix(&mut rng(seed), rows, cols, 1.0).map(|v| v.abs() + 0.5)
}

pub fn products(c: &mut Checks) {
    let x = inputs(1, &[(3, 4), (4, 2), (3, 2), (2, 4)]);
    c.check("sum(matmul)", &x[..2], |t, v| {
        let p = t.matmul(v[0], v[1]).unwrap();
        t.sum(p)
    });
    c.check("matmul", &x[..2], |t, v| {
        let p = t.matmul(v[0], v[1]).unwrap();
        weighted_sum(t, p, 9)
    });
    c.check("matmul_tn", &[x[0].clone(), x[2].clone()], |t, v| {
        let p = t.matmul_tn(v[0], v[1]).unwrap();
        weighted_sum(t, p, 9)
    });
    c.check("matmul_nt", &[x[0].clone(), x[3].clone()], |t, v| {
        let p = t.matmul_nt(v[0], v[1]).unwrap();
        weighted_sum(t, p, 9)
    });
}

pub fn sparse_product(c: &mut Checks) {
    let s = SparseMatrix::from_triplets(3, 3, [(0, 1, 0.5), (1, 0, 0.5), (1, 2, 2.0), (2, 1, 2.0), (2, 2, -1.0)])
        .unwrap();
    let s_t = Arc::new(s.transpose());
    c.check("spmm", &inputs(2, &[(3, 4)]), |t, v| {
        let p = t.spmm(&s, s_t.clone(), v[0]).unwrap();
        weighted_sum(t, p, 3)
    });
}

pub fn elementwise(c: &mut Checks) {
    let x = inputs(3, &[(3, 4), (3, 4)]);
    let binary: [(&str, fn(&mut Tape, Var, Var) -> Var); 3] = [
        ("add", |t, a, b| t.add(a, b).unwrap()),
        ("sub", |t, a, b| t.sub(a, b).unwrap()),
        ("mul", |t, a, b| t.mul(a, b).unwrap()),
    ];
    for (name, op) in binary {
        c.check(name, &x, |t, v| {
            let p = op(t, v[0], v[1]);
            weighted_sum(t, p, 5)
        });
    }
    let unary: [(&str, fn(&mut Tape, Var) -> Var); 7] = [
        ("scale", |t, a| t.scale(a, -1.7)),
        ("tanh", |t, a| t.tanh(a)),
        ("leaky_relu", |t, a| t.leaky_relu(a, 0.2).unwrap()),
        ("exp", |t, a| t.exp(a)),
        ("log_sigmoid", |t, a| t.log_sigmoid(a)),
        ("softmax_rows", |t, a| t.softmax_rows(a, 0.7).unwrap()),
        ("log_softmax_rows", |t, a| t.log_softmax_rows(a)),
    ];
    for (name, op) in unary {
        c.check(name, &x[..1], |t, v| {
            let p = op(t, v[0]);
            weighted_sum(t, p, 6)
        });
    }
    c.check("log", &[positive(4, 3, 4)], |t, v| {
        let p = t.log(v[0]).unwrap();
        weighted_sum(t, p, 6)
    });
    c.check("recip_floor", &[positive(5, 3, 4)], |t, v| {
        let p = t.recip_floor(v[0], 1e-12);
        weighted_sum(t, p, 6)
    });
    c.check("add_all", &x, |t, v| {
        let p = t.add_all(&[v[0], v[1], v[0]]).unwrap();
        weighted_sum(t, p, 7)
    });
}

pub fn reshaping(c: &mut Checks) {
    let x = inputs(6, &[(3, 4), (3, 2), (1, 4)]);
    c.check("concat_cols", &x[..2], |t, v| {
        let p = t.concat_cols(&[v[0], v[1]]).unwrap();
        weighted_sum(t, p, 1)
    });
    c.check("concat_rows", &[x[0].clone(), x[2].clone()], |t, v| {
        let p = t.concat_rows(&[v[0], v[1]]).unwrap();
        weighted_sum(t, p, 1)
    });
    c.check("slice_rows", &x[..1], |t, v| {
        let p = t.slice_rows(v[0], 1, 2).unwrap();
        weighted_sum(t, p, 1)
    });
    c.check("slice_cols", &x[..1], |t, v| {
        let p = t.slice_cols(v[0], 1, 2).unwrap();
        weighted_sum(t, p, 1)
    });
    let index = Arc::new(vec![2, 0, 2, 1, 2]);
    c.check("gather_rows", &x[..1], |t, v| {
        let p = t.gather_rows(v[0], index.clone()).unwrap();
        weighted_sum(t, p, 1)
    });
    let col = random_matrix(&mut rng(8), 3, 1, 1.0);
    c.check("row_scale", &[x[0].clone(), col], |t, v| {
        let p = t.row_scale(v[0], v[1]).unwrap();
        weighted_sum(t, p, 1)
    });
    c.check("column_sums", &x[..1], |t, v| {
        let p = t.column_sums(v[0]);
        weighted_sum(t, p, 1)
    });
}

pub fn reductions_and_losses(c: &mut Checks) {
    let x = inputs(9, &[(3, 4), (3, 4)]);
    c.check("mean", &x[..1], |t, v| {
        let p = t.tanh(v[0]);
        t.mean(p)
    });
    c.check("frobenius_sq", &x[..1], |t, v| t.frobenius_sq(v[0]));
    c.check("normalize_rows", &x[..1], |t, v| {
        let p = t.normalize_rows(v[0]);
        weighted_sum(t, p, 2)
    });
    c.check("contrastive_nll", &x, |t, v| t.contrastive_nll(v[0], v[1], 0.3).unwrap());
    let pairs = Arc::new(vec![(0, 2), (1, 1), (2, 0), (0, 0)]);
    c.check("pair_dot", &x, |t, v| {
        let p = t.pair_dot(v[0], v[1], pairs.clone()).unwrap();
        weighted_sum(t, p, 2)
    });
}

pub fn objective_terms(c: &mut Checks) {
    let x = inputs(10, &[(6, 3), (6, 3), (6, 3), (3, 3), (3, 3)]);
    c.check("cross_rating_infonce", &x[..3], |t, v| {
        cross_rating_infonce(t, v, 3, 0.2, &Anchors::default()).unwrap()
    });
    c.check("global_local_infonce", &x[..2], |t, v| {
        global_local_infonce(t, v[0], v[1], 3, 0.5, &Anchors::default()).unwrap()
    });
    c.check("nrr_penalty", &x[..3], |t, v| nrr_penalty(t, v).unwrap());
    let targets = soft_targets(&[1, 3, 2, 2], &[1, 2, 3], 0.2).unwrap();
    let pairs = [(0, 1), (1, 2), (2, 0), (0, 0)];
    c.check("decode + balanced_ce", &[x[0].clone(), x[3].clone(), x[4].clone(), x[3].clone()], |t, v| {
        let logits = decode_logits(t, v[0], &v[1..], 3, &pairs).unwrap();
        balanced_ce(t, logits, &targets).unwrap()
    });
    c.check("bpr_loss", &x[..1], |t, v| {
        bpr_loss(t, v[0], 3, &[(0, 0, 1), (1, 2, 0), (2, 1, 2)], 0.1).unwrap()
    });
}

pub fn propagation_two_layers(c: &mut Checks) {
    let graphs = six_node_graphs();
    let graph = &graphs.graphs[2];
    c.check("propagate L=2", &inputs(11, &[(6, 4)]), |t, v| {
        let out = propagate(t, v[0], graph, 2, 0.5).unwrap();
        weighted_sum(t, out.combined, 3)
    });
    let index = SlotIndex::new(3, 3);
    c.check("initial_embeddings", &inputs(12, &[(9, 2)]), |t, v| {
        let x0 = initial_embeddings(t, v[0], &index).unwrap();
        weighted_sum(t, x0, 3)
    });
}

pub fn hypergraph_path(c: &mut Checks) {
    let x = inputs(13, &[(5, 3), (3, 4)]);
    c.check("learn_hypergraph + hyper_conv", &x, |t, v| {
        let h = learn_hypergraph(t, v[0], v[1]).unwrap();
        let out = hyper_conv(t, h, v[0]).unwrap();
        weighted_sum(t, out, 4)
    });
}

/// The total loss with every term switched on with respect to
/// respect to every model tensor, on three users and three items.
pub fn end_to_end_six_nodes(c: &mut Checks) {
    let graphs = six_node_graphs();
    let records = six_node_records();
    let shape = ModelShape {
        num_users: 3,
        num_items: 3,
        num_ratings: 3,
        d: 2,
        k: 2,
        hypergraph: true,
    };
    let mut params = ModelParams::init(shape, 21).unwrap();
    // spread the table entries so the contrastive terms are not flat
    for (spec, t) in params.specs.iter().zip(params.tensors.iter_mut()) {
        if spec.role == Role::Table {
            t.scale_in_place(4.0);
        }
    }
    let cfg = ForwardConfig {
        layers: 2,
        theta: 0.5,
    };
    let weights = LossWeights {
        alpha: 0.1,
        beta: 0.1,
        lambda_nrr: 0.1,
        tau: 0.5,
        gamma: 0.5,
        l_close: 0.2,
    };
    let pairs: Vec<(u32, u32)> = records.iter().map(|r| (r.user, r.item)).collect();
    let ratings: Vec<u32> = records.iter().map(|r| r.rating).collect();
    let targets = soft_targets(&ratings, &[1, 2, 3], weights.l_close).unwrap();
    let specs = params.specs.clone();
    c.check("end-to-end six nodes", &params.tensors, |tape, vars| {
        let bound = ParamVars::bind(&specs, vars.to_vec());
        let v = forward_vars(tape, shape, bound, &graphs, cfg).unwrap();
        let logits = decode_logits(tape, v.fused.combined, &v.params.decoders, 3, &pairs).unwrap();
        let main = balanced_ce(tape, logits, &targets).unwrap();
        let ls = cross_rating_infonce(tape, &v.local, 3, weights.tau, &Anchors::default()).unwrap();
        let lp = global_local_infonce(
            tape,
            v.fused.local,
            v.fused.global.unwrap(),
            3,
            weights.gamma,
            &Anchors::default(),
        )
        .unwrap();
        let nrr = nrr_penalty(tape, &v.params.tables).unwrap();
        total_loss(tape, main, Some(ls), Some(lp), Some(nrr), &weights).unwrap()
    });
}
