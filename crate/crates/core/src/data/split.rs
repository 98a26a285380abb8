use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{IdMap, RatingRecord, RatingTable};
use crate::error::{Error, Result};

pub const DEFAULT_RATIOS: [f64; 3] = [0.8, 0.1, 0.1];

/// Smallest table [`split`] accepts.
pub const MIN_RECORDS: usize = 10;

/// Ratings partitioned into train / validation / test, plus the id tables.
#[derive(Clone, Debug)]
pub struct RatingDataset {
    pub num_users: usize,
    pub num_items: usize,
    pub categories: Vec<u32>,
    pub users: IdMap,
    pub items: IdMap,
    pub train: Vec<RatingRecord>,
    pub val: Vec<RatingRecord>,
    pub test: Vec<RatingRecord>,
}

/// Shuffles under `seed`, then cuts contiguous train / validation / test
/// blocks of `round(n * ratio)` records (test takes the remainder).
pub fn split(table: &RatingTable, seed: u64, ratios: [f64; 3]) -> Result<RatingDataset> {
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!(
            "split ratios {ratios:?} must be non-negative and sum to 1"
        )));
    }
    let n = table.records.len();
    if n < MIN_RECORDS {
        return Err(Error::contract(format!(
            "{n} records cannot be split {ratios:?}; need at least {MIN_RECORDS}"
        )));
    }
    let mut shuffled = table.records.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64 * ratios[0]).round() as usize).min(n);
    let n_val = ((n as f64 * ratios[1]).round() as usize).min(n - n_train);
    let test = shuffled.split_off(n_train + n_val);
    let val = shuffled.split_off(n_train);
    Ok(RatingDataset {
        num_users: table.users.len(),
        num_items: table.items.len(),
        categories: table.categories.clone(),
        users: table.users.clone(),
        items: table.items.clone(),
        train: shuffled,
        val,
        test,
    })
}

impl RatingDataset {
    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_items
    }

    /// Position of `rating` in the category list.
    pub fn category_index(&self, rating: u32) -> Option<usize> {
        self.categories.iter().position(|&c| c == rating)
    }

    pub fn all_records(&self) -> impl Iterator<Item = &RatingRecord> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }

    /// Writes the prepared layout: `train.tsv`, `val.tsv`, `test.tsv` with
    /// dense ids, `users.tsv` / `items.tsv` remap tables and `meta.txt`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        write_split(&dir.join("train.tsv"), &self.train)?;
        write_split(&dir.join("val.tsv"), &self.val)?;
        write_split(&dir.join("test.tsv"), &self.test)?;
        self.users.write_tsv(&dir.join("users.tsv"))?;
        self.items.write_tsv(&dir.join("items.tsv"))?;
        let cats: Vec<String> = self.categories.iter().map(u32::to_string).collect();
        let meta = format!(
            "num_users={}\nnum_items={}\ncategories={}\n",
            self.num_users,
            self.num_items,
            cats.join(",")
        );
        let p = dir.join("meta.txt");
        fs::write(&p, meta).map_err(|e| Error::io(format!("writing {}", p.display()), e))
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.txt");
        let meta = fs::read_to_string(&meta_path)
            .map_err(|e| Error::io(format!("reading {}", meta_path.display()), e))?;
        let mut num_users = None;
        let mut num_items = None;
        let mut categories = None;
        for line in meta.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("{}: bad line `{line}`", meta_path.display())))?;
            let bad = || Error::Format(format!("{}: bad value for {k}", meta_path.display()));
            match k.trim() {
                "num_users" => num_users = Some(v.trim().parse::<usize>().map_err(|_| bad())?),
                "num_items" => num_items = Some(v.trim().parse::<usize>().map_err(|_| bad())?),
                "categories" => {
                    categories = Some(
                        v.split(',')
                            .map(|c| c.trim().parse::<u32>().map_err(|_| bad()))
                            .collect::<Result<Vec<_>>>()?,
                    )
                }
                _ => {}
            }
        }
        let missing = |k: &str| Error::Format(format!("{}: missing {k}", meta_path.display()));
        let num_users = num_users.ok_or_else(|| missing("num_users"))?;
        let num_items = num_items.ok_or_else(|| missing("num_items"))?;
        let categories = categories.ok_or_else(|| missing("categories"))?;
        let users = IdMap::read_tsv(&dir.join("users.tsv"))?;
        let items = IdMap::read_tsv(&dir.join("items.tsv"))?;
        if users.len() != num_users || items.len() != num_items {
            return Err(Error::Validation(format!(
                "{}: remap tables list {} users / {} items, meta says {num_users} / {num_items}",
                dir.display(),
                users.len(),
                items.len()
            )));
        }
        let read = |name: &str| read_split(&dir.join(name), num_users, num_items, &categories);
        Ok(RatingDataset {
            train: read("train.tsv")?,
            val: read("val.tsv")?,
            test: read("test.tsv")?,
            num_users,
            num_items,
            categories,
            users,
            items,
        })
    }
}

fn write_split(path: &Path, records: &[RatingRecord]) -> Result<()> {
    let ctx = || format!("writing {}", path.display());
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(ctx(), e))?);
    for r in records {
        writeln!(w, "{}\t{}\t{}", r.user, r.item, r.rating).map_err(|e| Error::io(ctx(), e))?;
    }
    w.flush().map_err(|e| Error::io(ctx(), e))
}

fn read_split(path: &Path, users: usize, items: usize, categories: &[u32]) -> Result<Vec<RatingRecord>> {
    let f = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if line.is_empty() {
            continue;
        }
        let perr = |msg: &str| Error::Parse {
            path: PathBuf::from(path),
            line: n + 1,
            msg: msg.to_owned(),
        };
        let mut f = line.split('\t').map(|s| s.trim().parse::<u32>());
        let (Some(Ok(user)), Some(Ok(item)), Some(Ok(rating))) = (f.next(), f.next(), f.next()) else {
            return Err(perr("expected user<TAB>item<TAB>rating with dense ids"));
        };
        if user as usize >= users || item as usize >= items {
            return Err(perr("dense id out of range"));
        }
        if !categories.contains(&rating) {
            return Err(Error::Validation(format!(
                "{}:{}: rating {rating} not in categories {categories:?}",
                path.display(),
                n + 1
            )));
        }
        out.push(RatingRecord {
            user,
            item,
            rating,
            timestamp: None,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    pub(crate) fn table(n: usize) -> RatingTable {
        let mut users = IdMap::default();
        let mut items = IdMap::default();
        let records = (0..n)
            .map(|k| RatingRecord {
                user: users.intern(&format!("u{}", k % 7)),
                item: items.intern(&format!("i{k}")),
                rating: (k % 5) as u32 + 1,
                timestamp: None,
            })
            .collect();
        RatingTable {
            records,
            users,
            items,
            categories: vec![1, 2, 3, 4, 5],
            duplicates: 0,
        }
    }

    #[test]
    fn exact_division() {
        let d = split(&table(100), 1, DEFAULT_RATIOS).unwrap();
        assert_eq!((d.train.len(), d.val.len(), d.test.len()), (80, 10, 10));
    }

    #[test]
    fn deterministic_for_seed() {
        let t = table(57);
        let a = split(&t, 9, DEFAULT_RATIOS).unwrap();
        let b = split(&t, 9, DEFAULT_RATIOS).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        let c = split(&t, 10, DEFAULT_RATIOS).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn too_few_records_refused() {
        assert!(matches!(split(&table(9), 0, DEFAULT_RATIOS), Err(Error::Contract(_))));
        assert!(split(&table(20), 0, [0.5, 0.2, 0.2]).is_err());
    }

    #[test]
    fn directory_round_trip() {
        let d = split(&table(40), 3, DEFAULT_RATIOS).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.save_dir(dir.path()).unwrap();
        let back = RatingDataset::load_dir(dir.path()).unwrap();
        assert_eq!(back.num_users, d.num_users);
        assert_eq!(back.categories, d.categories);
        let strip = |v: &[RatingRecord]| -> Vec<(u32, u32, u32)> {
            v.iter().map(|r| (r.user, r.item, r.rating)).collect()
        };
        assert_eq!(strip(&back.train), strip(&d.train));
        assert_eq!(strip(&back.test), strip(&d.test));
        assert_eq!(back.users, d.users);
    }

    proptest! {
        #[test]
        fn disjoint_and_exhaustive(n in 10usize..300, seed in any::<u64>()) {
            let t = table(n);
            let d = split(&t, seed, DEFAULT_RATIOS).unwrap();
            prop_assert_eq!(d.train.len() + d.val.len() + d.test.len(), n);
            let keys: HashSet<(u32, u32)> = d.all_records().map(|r| (r.user, r.item)).collect();
            prop_assert_eq!(keys.len(), n);
            prop_assert!((d.train.len() as f64 - 0.8 * n as f64).abs() <= 1.0);
        }
    }
}
