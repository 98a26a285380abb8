#![allow(dead_code)]

pub mod gradients;
pub mod ranking;

use mhcl::data::{build_from_records, IdMap, RatingDataset, RatingRecord, RatingSubgraphs};
use mhcl::ndcore::{Matrix, Tape, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

pub fn record(user: u32, item: u32, rating: u32) -> RatingRecord {
    RatingRecord {
        user,
        item,
        rating,
        timestamp: None,
    }
}

/// Worst tensor-wise relative error `‖analytic - numeric‖ / max(‖analytic‖,
/// ‖numeric‖)` between reverse-mode gradients and central differences of
/// the scalar built by `f` from `inputs`.
pub fn gradient_error<F>(inputs: &[Matrix], f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |values: &[Matrix]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|m| tape.param(m.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).item().unwrap()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.param(m.clone())).collect();
    let out = f(&mut tape, &vars);
    let grads = tape.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (k, &v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zero(v);
        let mut numeric = Matrix::zeros(inputs[k].rows(), inputs[k].cols());
        let mut probe = inputs.to_vec();
        for idx in 0..inputs[k].len() {
            let orig = inputs[k].as_slice()[idx];
            probe[k].as_mut_slice()[idx] = orig + FD_STEP;
            let up = eval(&probe);
            probe[k].as_mut_slice()[idx] = orig - FD_STEP;
            let down = eval(&probe);
            probe[k].as_mut_slice()[idx] = orig;
            numeric.as_mut_slice()[idx] = (up - down) / (2.0 * FD_STEP);
        }
        let diff = analytic.zip_map(&numeric, |a, b| a - b).unwrap().frobenius_sq().sqrt();
        let scale = analytic.frobenius_sq().sqrt().max(numeric.frobenius_sq().sqrt());
        if scale > 0.0 {
            worst = worst.max(diff / scale);
        }
    }
    worst
}

/// `sum(x ⊙ w)` for a fixed weight, so every output entry gets a distinct
/// upstream gradient.
pub fn weighted_sum(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let (r, c) = tape.shape(x);
    let w = random_matrix(&mut rng(seed), r, c, 1.0);
    let w = tape.constant(w);
    let p = tape.mul(x, w).unwrap();
    tape.sum(p)
}

/// Three users, three items, ratings 1..=3.
pub fn six_node_records() -> Vec<RatingRecord> {
    vec![
        record(0, 0, 1),
        record(0, 1, 2),
        record(1, 1, 3),
        record(1, 2, 1),
        record(2, 0, 2),
        record(2, 2, 3),
        record(0, 2, 3),
    ]
}

pub fn six_node_graphs() -> RatingSubgraphs {
    build_from_records(3, 3, &[1, 2, 3], &six_node_records())
}

/// A small deterministic dataset with `users x items` nodes and ratings
/// 1..=5 drawn from a low-rank preference plus noise.
pub fn synthetic_dataset(users: usize, items: usize, per_user: usize, seed: u64) -> RatingDataset {
    let mut rng = rng(seed);
    let uf: Vec<f64> = (0..users).map(|_| rng.random_range(-1.0..1.0)).collect();
    let vf: Vec<f64> = (0..items).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut records = Vec::new();
    for u in 0..users {
        let mut items_for_user: Vec<usize> = (0..items).collect();
        for i in 0..per_user.min(items) {
            let j = rng.random_range(i..items);
            items_for_user.swap(i, j);
            let v = items_for_user[i];
            let score = 3.0 + 2.0 * uf[u] * vf[v] + rng.random_range(-0.5..0.5);
            records.push(record(u as u32, v as u32, score.round().clamp(1.0, 5.0) as u32));
        }
    }
    records.shuffle(&mut rng);
    let n = records.len();
    let n_train = (n as f64 * 0.8).round() as usize;
    let n_val = (n as f64 * 0.1).round() as usize;
    let test = records.split_off(n_train + n_val);
    let val = records.split_off(n_train);
    RatingDataset {
        num_users: users,
        num_items: items,
        categories: vec![1, 2, 3, 4, 5],
        users: IdMap::from_raw((0..users).map(|u| format!("u{u}")).collect()).unwrap(),
        items: IdMap::from_raw((0..items).map(|v| format!("i{v}")).collect()).unwrap(),
        train: records,
        val,
        test,
    }
}
