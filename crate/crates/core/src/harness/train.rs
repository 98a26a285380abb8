//! Full-batch training with early stopping.

use std::sync::Arc;
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{build_subgraphs, RatingDataset, RatingSubgraphs};
use crate::error::{Error, Result};
use crate::harness::checkpoint::Checkpoint;
use crate::harness::config::{Task, TrainConfig};
use crate::harness::eval::{evaluate_completion, evaluate_recommendation, Scorer};
use crate::model::{forward, ForwardConfig, ModelParams, ModelShape};
use crate::ndcore::{AdamState, Matrix, Tape, Var};
use crate::objective::{
    balanced_ce, bpr_loss, cross_rating_infonce, decode_logits, global_local_infonce,
    nrr_penalty, soft_targets, total_loss, Anchors,
};

/// Stream offsets so sampling draws never overlap with initialization.
const SAMPLING_STREAM: u64 = 0x5eed_0001;

/// Loss terms and validation metric of one epoch. The metric is measured on
/// the parameters the epoch's gradient was computed at.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub main: f64,
    pub cross_rating: Option<f64>,
    pub global_local: Option<f64>,
    pub nrr: Option<f64>,
    /// Validation MSE (completion) or NDCG@10 (recommendation).
    pub val_metric: f64,
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    /// Best parameters seen, with their optimizer state.
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    /// Whether patience ran out before `max_epochs`.
    pub stopped_early: bool,
}

pub fn model_shape(config: &TrainConfig, dataset: &RatingDataset) -> ModelShape {
    ModelShape {
        num_users: dataset.num_users,
        num_items: dataset.num_items,
        num_ratings: dataset.categories.len(),
        d: config.d,
        k: config.k,
        hypergraph: config.hypergraph,
    }
}

pub fn forward_config(config: &TrainConfig) -> ForwardConfig {
    ForwardConfig {
        layers: config.layers,
        theta: config.theta,
    }
}

fn lower_is_better(task: Task) -> bool {
    task == Task::Completion
}

fn sample_anchors<R: Rng>(rng: &mut R, size: usize, cap: usize) -> Option<Arc<Vec<usize>>> {
    if cap == 0 || size <= cap {
        return None;
    }
    let mut idx = sample(rng, size, cap).into_vec();
    idx.sort_unstable();
    Some(Arc::new(idx))
}

/// One `(user, positive, negative)` triple per train interaction and
/// requested negative, negatives drawn uniformly from the user's unseen
/// items.
fn sample_triples<R: Rng>(
    rng: &mut R,
    dataset: &RatingDataset,
    seen: &[Vec<bool>],
    negatives: usize,
) -> Vec<(u32, u32, u32)> {
    let n = dataset.num_items as u32;
    let mut out = Vec::with_capacity(dataset.train.len() * negatives);
    for r in &dataset.train {
        let row = &seen[r.user as usize];
        if row.iter().all(|&s| s) {
            continue;
        }
        for _ in 0..negatives {
            let neg = loop {
                let v = rng.random_range(0..n);
                if !row[v as usize] {
                    break v;
                }
            };
            out.push((r.user, r.item, neg));
        }
    }
    out
}

/// Scalar value of a loss term, or a divergence error naming it.
fn finite(tape: &Tape, v: Var, term: &str, epoch: usize) -> Result<f64> {
    let x = tape.value(v).item()?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::Divergence(format!(
            "{term} loss is {x} at epoch {epoch}"
        )))
    }
}

struct Epoch {
    log: EpochLog,
    embeddings: Matrix,
    grads: Vec<Matrix>,
}

struct Trainer<'a> {
    config: &'a TrainConfig,
    dataset: &'a RatingDataset,
    graphs: RatingSubgraphs,
    pairs: Vec<(u32, u32)>,
    targets: Matrix,
    seen: Vec<Vec<bool>>,
    rng: ChaCha8Rng,
}

impl Trainer<'_> {
    fn run_epoch(&mut self, params: &ModelParams, epoch: usize) -> Result<Epoch> {
        let cfg = self.config;
        let m = self.dataset.num_users;
        let w = cfg.loss_weights();
        let mut tape = Tape::new();
        let views = forward(&mut tape, params, &self.graphs, forward_config(cfg))?;
        let e = views.final_embeddings();

        let main = match cfg.task {
            Task::Completion => {
                let logits = decode_logits(&mut tape, e, &views.params.decoders, m, &self.pairs)?;
                balanced_ce(&mut tape, logits, &self.targets)?
            }
            Task::Recommendation => {
                let triples = sample_triples(&mut self.rng, self.dataset, &self.seen, cfg.bpr_negatives);
                bpr_loss(&mut tape, e, m, &triples, cfg.bpr_reg)?
            }
        };
        let anchors = Anchors {
            users: sample_anchors(&mut self.rng, m, cfg.cl_neg_samples),
            items: sample_anchors(&mut self.rng, self.dataset.num_items, cfg.cl_neg_samples),
        };
        let cross = if cfg.alpha > 0.0 {
            Some(cross_rating_infonce(&mut tape, &views.local, m, w.tau, &anchors)?)
        } else {
            None
        };
        let global = match views.fused.global {
            Some(g) if cfg.beta > 0.0 => Some(global_local_infonce(
                &mut tape,
                views.fused.local,
                g,
                m,
                w.gamma,
                &anchors,
            )?),
            _ => None,
        };
        let nrr = if cfg.lambda_nrr > 0.0 {
            Some(nrr_penalty(&mut tape, &views.params.tables)?)
        } else {
            None
        };
        let total = total_loss(&mut tape, main, cross, global, nrr, &w)?;

        let main_v = finite(&tape, main, "main", epoch)?;
        let term = |v: Option<Var>, name: &str| v.map(|v| finite(&tape, v, name, epoch)).transpose();
        let cross_v = term(cross, "cross-rating contrastive")?;
        let global_v = term(global, "global-local contrastive")?;
        let nrr_v = term(nrr, "adjacent-rating regularizer")?;
        let loss = finite(&tape, total, "total", epoch)?;

        let embeddings = tape.value(e).clone();
        let mut grads = tape.backward(total)?;
        let grads = views
            .params
            .all
            .iter()
            .zip(&params.specs)
            .map(|(&v, spec)| {
                let g = grads.take(v).unwrap_or_else(|| Matrix::zeros(spec.rows, spec.cols));
                if g.all_finite() {
                    Ok(g)
                } else {
                    Err(Error::Divergence(format!(
                        "gradient of {} is not finite at epoch {epoch}",
                        spec.name
                    )))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let val_metric = self.validate(params, &embeddings)?;
        Ok(Epoch {
            log: EpochLog {
                epoch,
                loss,
                main: main_v,
                cross_rating: cross_v,
                global_local: global_v,
                nrr: nrr_v,
                val_metric,
            },
            embeddings,
            grads,
        })
    }

    fn validate(&self, params: &ModelParams, embeddings: &Matrix) -> Result<f64> {
        let decoders = params.decoders();
        let scorer = Scorer {
            embeddings,
            decoders: &decoders,
            num_users: self.dataset.num_users,
            categories: &self.dataset.categories,
        };
        match self.config.task {
            Task::Completion => Ok(evaluate_completion(&scorer, &self.dataset.val)?
                .mse
                .expect("completion reports mse")),
            Task::Recommendation => {
                Ok(evaluate_recommendation(&scorer, &self.dataset.train, &self.dataset.val)?
                    .ndcg_at_10
                    .expect("recommendation reports ndcg"))
            }
        }
    }
}

/// Trains from the seeded initialization. Each epoch runs one forward and
/// backward pass over all train ratings, scores the validation split with
/// the same forward pass and takes one Adam step. Training stops once the
/// validation metric has not improved for `patience` epochs; the best
/// parameters seen are returned.
pub fn train(config: &TrainConfig, dataset: &RatingDataset) -> Result<TrainRun> {
    config.validate()?;
    config.main_loss.check_supported()?;
    if dataset.train.is_empty() {
        return Err(Error::contract("train split is empty"));
    }
    if dataset.val.is_empty() {
        return Err(Error::contract("validation split is empty"));
    }
    let shape = model_shape(config, dataset);
    let mut params = ModelParams::init(shape, config.seed)?;
    let mut adam = AdamState::new(config.lr, params.tensors.iter());

    let pairs = dataset.train.iter().map(|r| (r.user, r.item)).collect();
    let ratings: Vec<u32> = dataset.train.iter().map(|r| r.rating).collect();
    let targets = soft_targets(&ratings, &dataset.categories, config.l_close)?;
    let mut seen = vec![vec![false; dataset.num_items]; dataset.num_users];
    for r in &dataset.train {
        seen[r.user as usize][r.item as usize] = true;
    }
    let mut trainer = Trainer {
        config,
        dataset,
        graphs: build_subgraphs(dataset),
        pairs,
        targets,
        seen,
        rng: ChaCha8Rng::seed_from_u64(config.seed ^ SAMPLING_STREAM),
    };

    let mut log = Vec::new();
    let mut best: Option<(f64, usize, ModelParams, AdamState, Matrix)> = None;
    let mut stale = 0;
    let mut stopped_early = false;
    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        let step = trainer.run_epoch(&params, epoch)?;
        let metric = step.log.val_metric;
        let improved = match &best {
            None => true,
            Some((b, ..)) if lower_is_better(config.task) => metric < *b,
            Some((b, ..)) => metric > *b,
        };
        log::info!(
            "epoch {epoch:>3} loss {:.4} main {:.4} val {:.4}{} ({:.2}s)",
            step.log.loss,
            step.log.main,
            metric,
            if improved { " *" } else { "" },
            started.elapsed().as_secs_f64()
        );
        log.push(step.log);
        if improved {
            best = Some((metric, epoch, params.clone(), adam.clone(), step.embeddings));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                stopped_early = true;
                break;
            }
        }
        let grads: Vec<&Matrix> = step.grads.iter().collect();
        let mut refs: Vec<&mut Matrix> = params.tensors.iter_mut().collect();
        adam.step(&mut refs, &grads)?;
    }
    let (best_metric, best_epoch, params, adam, embeddings) =
        best.expect("at least one epoch ran");
    Ok(TrainRun {
        checkpoint: Checkpoint {
            config: config.clone(),
            params,
            adam: Some(adam),
            best_metric,
            best_epoch,
            categories: dataset.categories.clone(),
            users: dataset.users.clone(),
            items: dataset.items.clone(),
            final_embeddings: Some(embeddings),
        },
        log,
        stopped_early,
    })
}
