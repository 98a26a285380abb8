use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::data::bucket::bucket_of;
use crate::data::Schema;
use crate::error::{Error, Result};

/// One observed rating, with dense ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RatingRecord {
    pub user: u32,
    pub item: u32,
    pub rating: u32,
    pub timestamp: Option<i64>,
}

/// Raw id <-> dense id table, dense ids assigned in order of first
/// appearance.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IdMap {
    raw: Vec<String>,
    index: HashMap<String, u32>,
}

impl IdMap {
    pub fn from_raw(raw: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(raw.len());
        for (i, r) in raw.iter().enumerate() {
            if index.insert(r.clone(), i as u32).is_some() {
                return Err(Error::Validation(format!("raw id `{r}` listed twice")));
            }
        }
        Ok(IdMap { raw, index })
    }

    pub fn intern(&mut self, raw: &str) -> u32 {
        if let Some(&id) = self.index.get(raw) {
            return id;
        }
        let id = self.raw.len() as u32;
        self.raw.push(raw.to_owned());
        self.index.insert(raw.to_owned(), id);
        id
    }

    pub fn dense(&self, raw: &str) -> Option<u32> {
        self.index.get(raw).copied()
    }

    pub fn raw(&self, dense: u32) -> Option<&str> {
        self.raw.get(dense as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn raw_ids(&self) -> &[String] {
        &self.raw
    }

    /// Writes `raw_id<TAB>dense_id` lines.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let ctx = || format!("writing {}", path.display());
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(ctx(), e))?);
        for (i, r) in self.raw.iter().enumerate() {
            writeln!(w, "{r}\t{i}").map_err(|e| Error::io(ctx(), e))?;
        }
        w.flush().map_err(|e| Error::io(ctx(), e))
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        let mut raw: Vec<Option<String>> = Vec::new();
        for (n, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
            if line.is_empty() {
                continue;
            }
            let perr = |msg: &str| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                msg: msg.to_owned(),
            };
            let (r, d) = line.split_once('\t').ok_or_else(|| perr("expected raw_id<TAB>dense_id"))?;
            let d: usize = d.trim().parse().map_err(|_| perr("dense id is not a number"))?;
            if raw.len() <= d {
                raw.resize(d + 1, None);
            }
            raw[d] = Some(r.to_owned());
        }
        let raw = raw
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                r.ok_or_else(|| Error::Validation(format!("{}: dense id {i} missing", path.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        IdMap::from_raw(raw)
    }
}

/// Everything read from one ratings file.
#[derive(Clone, Debug)]
pub struct RatingTable {
    pub records: Vec<RatingRecord>,
    pub users: IdMap,
    pub items: IdMap,
    pub categories: Vec<u32>,
    /// Repeated (user, item) pairs overwritten by a later line.
    pub duplicates: usize,
}

/// Reads a delimited ratings file.
///
/// Duplicate `(user, item)` pairs keep the rating of the last occurrence, at
/// the position of the first.
pub fn load_tsv(path: &Path, schema: &Schema) -> Result<RatingTable> {
    let f = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    parse_ratings(BufReader::new(f), path, schema)
}

pub(crate) fn parse_ratings<R: BufRead>(reader: R, path: &Path, schema: &Schema) -> Result<RatingTable> {
    schema.validate()?;
    let mut users = IdMap::default();
    let mut items = IdMap::default();
    let mut records: Vec<RatingRecord> = Vec::new();
    let mut seen: HashMap<(u32, u32), usize> = HashMap::new();
    let mut duplicates = 0;
    let needed = schema
        .user_col
        .max(schema.item_col)
        .max(schema.rating_col)
        .max(schema.timestamp_col.unwrap_or(0));
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if n == 0 && schema.skip_header {
            continue;
        }
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let perr = |msg: String| Error::Parse {
            path: PathBuf::from(path),
            line: n + 1,
            msg,
        };
        let fields: Vec<&str> = line.split(schema.delimiter.as_str()).collect();
        if fields.len() <= needed {
            return Err(perr(format!(
                "expected at least {} fields, found {}",
                needed + 1,
                fields.len()
            )));
        }
        let raw_rating = fields[schema.rating_col].trim();
        let value: f64 = raw_rating
            .parse()
            .map_err(|_| perr(format!("rating `{raw_rating}` is not a number")))?;
        if value.fract() != 0.0
            || value < schema.scale_min as f64
            || value > schema.scale_max as f64
        {
            return Err(Error::Validation(format!(
                "{}:{}: rating {raw_rating} outside the declared scale {}..={}",
                path.display(),
                n + 1,
                schema.scale_min,
                schema.scale_max
            )));
        }
        let mut rating = value as u32;
        if let Some(b) = schema.buckets {
            rating = bucket_of(rating, schema.scale_max, b);
        }
        let timestamp = match schema.timestamp_col {
            Some(c) => {
                let t = fields[c].trim();
                Some(
                    t.parse::<f64>()
                        .map_err(|_| perr(format!("timestamp `{t}` is not a number")))?
                        as i64,
                )
            }
            None => None,
        };
        let user = users.intern(fields[schema.user_col].trim());
        let item = items.intern(fields[schema.item_col].trim());
        let rec = RatingRecord {
            user,
            item,
            rating,
            timestamp,
        };
        match seen.get(&(user, item)) {
            Some(&at) => {
                records[at] = rec;
                duplicates += 1;
            }
            None => {
                seen.insert((user, item), records.len());
                records.push(rec);
            }
        }
    }
    if duplicates > 0 {
        log::warn!(
            "{}: {duplicates} duplicate (user, item) pairs, kept the last rating of each",
            path.display()
        );
    }
    Ok(RatingTable {
        records,
        users,
        items,
        categories: schema.categories(),
        duplicates,
    })
}
