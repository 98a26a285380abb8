//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"MHCL"  u32 version
//! u64 meta length, meta bytes (UTF-8 key=value lines)
//! u64 tensor count, then per tensor:
//!   u64 name length, name bytes (UTF-8)
//!   u64 rank, rank x u64 dims
//!   prod(dims) x f64 payload
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::data::IdMap;
use crate::error::{Error, Result};
use crate::harness::config::TrainConfig;
use crate::model::{ModelParams, ModelShape};
use crate::ndcore::{AdamState, Matrix};

pub const MAGIC: &[u8; 4] = b"MHCL";
pub const FORMAT_VERSION: u32 = 1;

const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";
/// Final node representations of the best parameters, cached for `predict`.
pub const FINAL_EMBEDDINGS: &str = "cache.final";

/// Serializes `meta` and the named tensors.
pub fn encode(meta: &str, tensors: &[(&str, &Matrix)]) -> Vec<u8> {
    let payload: usize = tensors.iter().map(|(n, m)| 40 + n.len() + 8 * m.len()).sum();
    let mut out = Vec::with_capacity(24 + meta.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for (name, m) in tensors {
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&2u64.to_le_bytes());
        out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Corruption(format!(
                "file ends inside {what} at byte {}",
                self.pos
            )));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let v = self.u64(what)?;
        let remaining = (self.bytes.len() - self.pos) as u64;
        if v > remaining {
            return Err(Error::Corruption(format!(
                "{what} claims {v} bytes but only {remaining} remain"
            )));
        }
        Ok(v as usize)
    }

    fn text(&mut self, what: &str) -> Result<String> {
        let n = self.len(what)?;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| Error::Corruption(format!("{what} is not valid UTF-8")))
    }
}

/// Parses bytes written by [`encode`].
pub fn decode(bytes: &[u8]) -> Result<(String, Vec<(String, Matrix)>)> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic bytes)".into()));
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint format version {version}, this build reads {FORMAT_VERSION}"
        )));
    }
    let meta = r.text("metadata")?;
    let count = r.u64("tensor count")?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name = r.text("tensor name")?;
        let rank = r.u64("tensor rank")?;
        if rank > 2 {
            return Err(Error::Format(format!("tensor {name} has rank {rank}, at most 2 supported")));
        }
        let mut dims = [1usize; 2];
        for d in dims.iter_mut().take(rank as usize) {
            *d = r.u64("tensor dims")? as usize;
        }
        let n = dims[0]
            .checked_mul(dims[1])
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Corruption(format!("tensor {name} has absurd dims {dims:?}")))?;
        let raw = r.take(n, &format!("tensor {name}"))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push((name, Matrix::from_vec(dims[0], dims[1], data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Corruption(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }
    Ok((meta, tensors))
}

/// A trained model with everything needed to evaluate or resume it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: ModelParams,
    pub adam: Option<AdamState>,
    pub best_metric: f64,
    pub best_epoch: usize,
    pub categories: Vec<u32>,
    pub users: IdMap,
    pub items: IdMap,
    pub final_embeddings: Option<Matrix>,
}

fn join_ids(ids: &IdMap) -> String {
    ids.raw_ids().join("\t")
}

fn split_ids(text: &str) -> Result<IdMap> {
    let raw = if text.is_empty() {
        Vec::new()
    } else {
        text.split('\t').map(str::to_string).collect()
    };
    IdMap::from_raw(raw).map_err(|e| Error::Corruption(format!("id table: {e}")))
}

impl Checkpoint {
    pub fn shape(&self) -> ModelShape {
        self.params.shape
    }

    fn meta(&self) -> String {
        let cats: Vec<String> = self.categories.iter().map(u32::to_string).collect();
        let mut m = String::new();
        m.push_str(&self.config.to_text());
        m.push_str(&format!("meta.num_users={}\n", self.params.shape.num_users));
        m.push_str(&format!("meta.num_items={}\n", self.params.shape.num_items));
        m.push_str(&format!("meta.categories={}\n", cats.join(",")));
        m.push_str(&format!("meta.best_metric={:?}\n", self.best_metric));
        m.push_str(&format!("meta.best_epoch={}\n", self.best_epoch));
        if let Some(a) = &self.adam {
            m.push_str(&format!("meta.adam_step={}\n", a.step));
        }
        m.push_str(&format!("meta.users={}\n", join_ids(&self.users)));
        m.push_str(&format!("meta.items={}\n", join_ids(&self.items)));
        m
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = self.meta();
        let mut names: Vec<String> = Vec::new();
        let mut mats: Vec<&Matrix> = Vec::new();
        for (n, m) in self.params.named() {
            names.push(n.to_string());
            mats.push(m);
        }
        if let Some(a) = &self.adam {
            for (spec, m) in self.params.specs.iter().zip(&a.m) {
                names.push(format!("{ADAM_M}{}", spec.name));
                mats.push(m);
            }
            for (spec, v) in self.params.specs.iter().zip(&a.v) {
                names.push(format!("{ADAM_V}{}", spec.name));
                mats.push(v);
            }
        }
        if let Some(e) = &self.final_embeddings {
            names.push(FINAL_EMBEDDINGS.to_string());
            mats.push(e);
        }
        let tensors: Vec<(&str, &Matrix)> = names.iter().map(String::as_str).zip(mats).collect();
        encode(&meta, &tensors)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta, tensors) = decode(bytes)?;
        let mut config_text = String::new();
        let mut fields = std::collections::HashMap::new();
        for line in meta.lines() {
            match line.strip_prefix("meta.") {
                Some(rest) => {
                    let (k, v) = rest
                        .split_once('=')
                        .ok_or_else(|| Error::Corruption(format!("metadata line {line:?}")))?;
                    fields.insert(k.to_string(), v.to_string());
                }
                None => {
                    config_text.push_str(line);
                    config_text.push('\n');
                }
            }
        }
        let config = TrainConfig::parse(&config_text)?;
        let field = |k: &str| -> Result<&String> {
            fields
                .get(k)
                .ok_or_else(|| Error::Corruption(format!("metadata lacks {k}")))
        };
        let num = |k: &str| -> Result<u64> {
            field(k)?
                .parse()
                .map_err(|_| Error::Corruption(format!("metadata {k} is not a number")))
        };
        let categories = field("categories")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<u32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Corruption("metadata categories".into()))?;
        let best_metric: f64 = field("best_metric")?
            .parse()
            .map_err(|_| Error::Corruption("metadata best_metric".into()))?;
        let shape = ModelShape {
            num_users: num("num_users")? as usize,
            num_items: num("num_items")? as usize,
            num_ratings: categories.len(),
            d: config.d,
            k: config.k,
            hypergraph: config.hypergraph,
        };
        let users = split_ids(field("users")?)?;
        let items = split_ids(field("items")?)?;
        let adam_step = fields.get("adam_step").map(|s| s.parse::<u64>()).transpose();
        let adam_step = adam_step.map_err(|_| Error::Corruption("metadata adam_step".into()))?;

        let mut params = Vec::new();
        let mut m_map = std::collections::HashMap::new();
        let mut v_map = std::collections::HashMap::new();
        let mut final_embeddings = None;
        for (name, m) in tensors {
            if let Some(p) = name.strip_prefix(ADAM_M) {
                m_map.insert(p.to_string(), m);
            } else if let Some(p) = name.strip_prefix(ADAM_V) {
                v_map.insert(p.to_string(), m);
            } else if name == FINAL_EMBEDDINGS {
                final_embeddings = Some(m);
            } else {
                params.push((name, m));
            }
        }
        let params = ModelParams::from_named(shape, params)?;
        let adam = match adam_step {
            Some(step) => {
                let mut state = AdamState::new(config.lr, params.tensors.iter());
                state.step = step;
                for (i, spec) in params.specs.iter().enumerate() {
                    for (map, slot, kind) in [(&mut m_map, &mut state.m, "first"), (&mut v_map, &mut state.v, "second")] {
                        let t = map.remove(&spec.name).ok_or_else(|| {
                            Error::Format(format!("checkpoint lacks the {kind} moment of {}", spec.name))
                        })?;
                        if t.shape() != slot[i].shape() {
                            return Err(Error::shape(format!(
                                "{kind} moment of {} has shape {:?}, expected {:?}",
                                spec.name,
                                t.shape(),
                                slot[i].shape()
                            )));
                        }
                        slot[i] = t;
                    }
                }
                Some(state)
            }
            None => None,
        };
        if let Some(e) = &final_embeddings {
            let want = (shape.num_users + shape.num_items, shape.model_width());
            if e.shape() != want {
                return Err(Error::shape(format!(
                    "tensor {FINAL_EMBEDDINGS} has shape {:?}, expected {want:?}",
                    e.shape()
                )));
            }
        }
        Ok(Checkpoint {
            config,
            params,
            adam,
            best_metric,
            best_epoch: num("best_epoch")? as usize,
            categories,
            users,
            items,
            final_embeddings,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes();
        let mut f = fs::File::create(path)
            .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        f.write_all(&bytes)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes =
            fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }

    /// Loads the parameters into a model shaped by `config`, failing with a
    /// shape error naming the first tensor that does not fit.
    pub fn params_for(&self, config: &TrainConfig) -> Result<ModelParams> {
        let shape = ModelShape {
            d: config.d,
            k: config.k,
            hypergraph: config.hypergraph,
            ..self.params.shape
        };
        let named = self
            .params
            .named()
            .map(|(n, m)| (n.to_string(), m.clone()))
            .collect();
        ModelParams::from_named(shape, named)
    }
}
