//! Trainable parameters and the full forward pass from rating subgraphs to
//! final node representations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::RatingSubgraphs;
use crate::embed::{initial_embeddings, propagate, SlotIndex};
use crate::error::{Error, Result};
use crate::fuse::{cross_rating_attend, fuse_views, Attended, FusedEmbeddings, FusionWeights};
use crate::hyper::{global_embeddings, GlobalEmbeddings};
use crate::ndcore::{xavier_uniform, Matrix, Tape, Var};

/// Sizes that determine every parameter shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelShape {
    pub num_users: usize,
    pub num_items: usize,
    pub num_ratings: usize,
    /// Per-slot embedding width; node representations are `3d` wide.
    pub d: usize,
    /// Hyperedges per hypergraph.
    pub k: usize,
    /// Whether the hypergraph (global) path exists.
    pub hypergraph: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Table,
    HyperUser,
    HyperItem,
    AttendLocal,
    AttendGlobal,
    FuseLocalUser,
    FuseLocalItem,
    FuseGlobalUser,
    FuseGlobalItem,
    Decoder,
}

/// Name, role, rating (where per-rating) and shape of one tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub role: Role,
    pub rating: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ModelShape {
    pub fn model_width(&self) -> usize {
        3 * self.d
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Config("d must be at least 1".into()));
        }
        if self.hypergraph && self.k == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        if self.num_ratings == 0 {
            return Err(Error::Config("at least one rating category is required".into()));
        }
        Ok(())
    }

    /// Tensor layout in storage order.
    pub fn tensors(&self) -> Vec<TensorSpec> {
        let dm = self.model_width();
        let table_rows = self.num_users + self.num_items + crate::embed::FIRST_NODE_SLOT;
        let mut out = Vec::new();
        let mut per_rating = |prefix: &str, role: Role, rows: usize, cols: usize| {
            for r in 0..self.num_ratings {
                out.push(TensorSpec {
                    name: format!("{prefix}.{r}"),
                    role,
                    rating: r,
                    rows,
                    cols,
                });
            }
        };
        per_rating("embed", Role::Table, table_rows, self.d);
        if self.hypergraph {
            per_rating("hyper.user", Role::HyperUser, dm, self.k);
            per_rating("hyper.item", Role::HyperItem, dm, self.k);
        }
        per_rating("attend.local", Role::AttendLocal, dm, 1);
        if self.hypergraph {
            per_rating("attend.global", Role::AttendGlobal, dm, 1);
        }
        let mut single = vec![
            ("fuse.local.user", Role::FuseLocalUser),
            ("fuse.local.item", Role::FuseLocalItem),
        ];
        if self.hypergraph {
            single.push(("fuse.global.user", Role::FuseGlobalUser));
            single.push(("fuse.global.item", Role::FuseGlobalItem));
        }
        for (name, role) in single {
            out.push(TensorSpec {
                name: name.into(),
                role,
                rating: 0,
                rows: dm,
                cols: dm,
            });
        }
        for r in 0..self.num_ratings {
            out.push(TensorSpec {
                name: format!("decoder.{r}"),
                role: Role::Decoder,
                rating: r,
                rows: dm,
                cols: dm,
            });
        }
        out
    }
}

/// All trainable tensors, stored in [`ModelShape::tensors`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub shape: ModelShape,
    pub specs: Vec<TensorSpec>,
    pub tensors: Vec<Matrix>,
}

impl ModelParams {
    /// Xavier-uniform initialization of every tensor from one seeded stream,
    /// drawn in storage order.
    pub fn init(shape: ModelShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self::init_with(shape, &mut rng))
    }

    pub fn init_with<R: Rng + ?Sized>(shape: ModelShape, rng: &mut R) -> Self {
        let specs = shape.tensors();
        let tensors = specs
            .iter()
            .map(|s| xavier_uniform(s.rows, s.cols, rng))
            .collect();
        ModelParams {
            shape,
            specs,
            tensors,
        }
    }

    /// Rebuilds parameters from named tensors, checking names and shapes
    /// against `shape`.
    pub fn from_named(shape: ModelShape, named: Vec<(String, Matrix)>) -> Result<Self> {
        let specs = shape.tensors();
        let mut by_name: std::collections::HashMap<String, Matrix> = named.into_iter().collect();
        let mut tensors = Vec::with_capacity(specs.len());
        for s in &specs {
            let m = by_name
                .remove(&s.name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {}", s.name)))?;
            if m.shape() != (s.rows, s.cols) {
                return Err(Error::shape(format!(
                    "tensor {} is {}x{} in the checkpoint but the configuration needs {}x{}",
                    s.name,
                    m.rows(),
                    m.cols(),
                    s.rows,
                    s.cols
                )));
            }
            tensors.push(m);
        }
        if let Some(extra) = by_name.keys().min() {
            return Err(Error::Format(format!("unexpected tensor {extra} in checkpoint")));
        }
        Ok(ModelParams {
            shape,
            specs,
            tensors,
        })
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.specs.iter().map(|s| s.name.as_str()).zip(&self.tensors)
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.named().find(|(n, _)| *n == name).map(|(_, m)| m)
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }

    /// Decoder matrices in rating order.
    pub fn decoders(&self) -> Vec<&Matrix> {
        self.select(Role::Decoder)
    }

    fn select(&self, role: Role) -> Vec<&Matrix> {
        self.specs
            .iter()
            .zip(&self.tensors)
            .filter(|(s, _)| s.role == role)
            .map(|(_, m)| m)
            .collect()
    }
}

/// Parameter handles on a tape, grouped by role.
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub all: Vec<Var>,
    pub tables: Vec<Var>,
    pub hyper_user: Vec<Var>,
    pub hyper_item: Vec<Var>,
    pub attend_local: Vec<Var>,
    pub attend_global: Vec<Var>,
    pub fuse_local_user: Var,
    pub fuse_local_item: Var,
    pub fuse_global_user: Option<Var>,
    pub fuse_global_item: Option<Var>,
    pub decoders: Vec<Var>,
}

impl ParamVars {
    /// Adds every tensor of `params` to the tape as a parameter leaf.
    pub fn register(tape: &mut Tape, params: &ModelParams) -> Self {
        let all = params.tensors.iter().map(|m| tape.param(m.clone())).collect();
        Self::bind(&params.specs, all)
    }

    /// Groups existing tape variables laid out as `specs`.
    pub fn bind(specs: &[TensorSpec], all: Vec<Var>) -> Self {
        assert_eq!(specs.len(), all.len(), "one variable per tensor");
        let pick = |role: Role| -> Vec<Var> {
            specs
                .iter()
                .zip(&all)
                .filter(|(s, _)| s.role == role)
                .map(|(_, &v)| v)
                .collect()
        };
        let one = |role: Role| pick(role).first().copied();
        ParamVars {
            tables: pick(Role::Table),
            hyper_user: pick(Role::HyperUser),
            hyper_item: pick(Role::HyperItem),
            attend_local: pick(Role::AttendLocal),
            attend_global: pick(Role::AttendGlobal),
            fuse_local_user: one(Role::FuseLocalUser).expect("local fusion present"),
            fuse_local_item: one(Role::FuseLocalItem).expect("local fusion present"),
            fuse_global_user: one(Role::FuseGlobalUser),
            fuse_global_item: one(Role::FuseGlobalItem),
            decoders: pick(Role::Decoder),
            all,
        }
    }
}

/// Propagation settings of the forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardConfig {
    pub layers: usize,
    pub theta: f64,
}

/// Everything the losses need from one forward pass.
#[derive(Clone, Debug)]
pub struct ViewEmbeddings {
    pub params: ParamVars,
    /// Combined local embedding per rating.
    pub local: Vec<Var>,
    /// Global embedding per rating, when the hypergraph path is on.
    pub global: Option<Vec<GlobalEmbeddings>>,
    pub attended_local: Attended,
    pub attended_global: Option<Attended>,
    pub fused: FusedEmbeddings,
}

impl ViewEmbeddings {
    /// Final node representations, users over items.
    pub fn final_embeddings(&self) -> Var {
        self.fused.combined
    }
}

/// Runs the model on `tape` and returns all intermediate views.
pub fn forward(
    tape: &mut Tape,
    params: &ModelParams,
    graphs: &RatingSubgraphs,
    cfg: ForwardConfig,
) -> Result<ViewEmbeddings> {
    let vars = ParamVars::register(tape, params);
    forward_vars(tape, params.shape, vars, graphs, cfg)
}

/// [`forward`] on parameters already on the tape.
pub fn forward_vars(
    tape: &mut Tape,
    shape: ModelShape,
    vars: ParamVars,
    graphs: &RatingSubgraphs,
    cfg: ForwardConfig,
) -> Result<ViewEmbeddings> {
    if graphs.graphs.len() != shape.num_ratings
        || graphs.num_users != shape.num_users
        || graphs.num_items != shape.num_items
    {
        return Err(Error::shape(format!(
            "model is {} users x {} items x {} ratings but the graphs are {} x {} x {}",
            shape.num_users,
            shape.num_items,
            shape.num_ratings,
            graphs.num_users,
            graphs.num_items,
            graphs.graphs.len()
        )));
    }
    let index = SlotIndex::new(shape.num_users, shape.num_items);
    let mut local = Vec::with_capacity(shape.num_ratings);
    for (r, graph) in graphs.graphs.iter().enumerate() {
        let x0 = initial_embeddings(tape, vars.tables[r], &index)?;
        local.push(propagate(tape, x0, graph, cfg.layers, cfg.theta)?.combined);
    }
    let global = if shape.hypergraph {
        let mut out = Vec::with_capacity(shape.num_ratings);
        for (r, &x) in local.iter().enumerate() {
            out.push(global_embeddings(
                tape,
                x,
                shape.num_users,
                vars.hyper_user[r],
                vars.hyper_item[r],
            )?);
        }
        Some(out)
    } else {
        None
    };
    let attended_local = cross_rating_attend(tape, &local, &vars.attend_local)?;
    let attended_global = match &global {
        Some(g) => {
            let stacked: Vec<Var> = g.iter().map(|h| h.stacked).collect();
            Some(cross_rating_attend(tape, &stacked, &vars.attend_global)?)
        }
        None => None,
    };
    let weights = FusionWeights {
        local_user: vars.fuse_local_user,
        local_item: vars.fuse_local_item,
        global_user: vars.fuse_global_user.unwrap_or(vars.fuse_local_user),
        global_item: vars.fuse_global_item.unwrap_or(vars.fuse_local_item),
    };
    let fused = fuse_views(
        tape,
        &attended_local.outputs,
        attended_global.as_ref().map(|a| a.outputs.as_slice()),
        shape.num_users,
        weights,
    )?;
    Ok(ViewEmbeddings {
        params: vars,
        local,
        global,
        attended_local,
        attended_global,
        fused,
    })
}

/// Final embeddings computed without keeping the tape.
pub fn final_embeddings(
    params: &ModelParams,
    graphs: &RatingSubgraphs,
    cfg: ForwardConfig,
) -> Result<Matrix> {
    let mut tape = Tape::new();
    let views = forward(&mut tape, params, graphs, cfg)?;
    Ok(tape.value(views.final_embeddings()).clone())
}
