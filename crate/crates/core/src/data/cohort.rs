use std::fmt;

use crate::data::RatingDataset;

/// Activity group of a user by train-interaction count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Cohort {
    Inactive,
    Normal,
    Active,
}

impl Cohort {
    pub const ALL: [Cohort; 3] = [Cohort::Inactive, Cohort::Normal, Cohort::Active];

    pub fn name(self) -> &'static str {
        match self {
            Cohort::Inactive => "inactive",
            Cohort::Normal => "normal",
            Cohort::Active => "active",
        }
    }
}

impl fmt::Display for Cohort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const INACTIVE_SHARE: f64 = 0.80;
pub const ACTIVE_SHARE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct CohortAssignment {
    pub cohorts: Vec<Cohort>,
    pub train_counts: Vec<usize>,
    /// Largest train count inside the inactive group.
    pub inactive_max_count: usize,
    /// Smallest train count inside the active group.
    pub active_min_count: usize,
}

impl CohortAssignment {
    pub fn of(&self, user: u32) -> Cohort {
        self.cohorts[user as usize]
    }

    pub fn size(&self, cohort: Cohort) -> usize {
        self.cohorts.iter().filter(|&&c| c == cohort).count()
    }
}

/// Ranks users by `(train count, user id)` ascending; the first 80% are
/// inactive, the last 5% active, the rest normal. Group sizes are
/// `round(share * M)`.
pub fn assign_cohorts(dataset: &RatingDataset) -> CohortAssignment {
    let m = dataset.num_users;
    let mut counts = vec![0usize; m];
    for r in &dataset.train {
        counts[r.user as usize] += 1;
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by_key(|&u| (counts[u], u));
    let n_inactive = (INACTIVE_SHARE * m as f64).round() as usize;
    let n_active = ((ACTIVE_SHARE * m as f64).round() as usize).min(m - n_inactive);
    let mut cohorts = vec![Cohort::Normal; m];
    for (rank, &u) in order.iter().enumerate() {
        cohorts[u] = if rank < n_inactive {
            Cohort::Inactive
        } else if rank >= m - n_active {
            Cohort::Active
        } else {
            Cohort::Normal
        };
    }
    let inactive_max_count = order[..n_inactive].iter().map(|&u| counts[u]).max().unwrap_or(0);
    let active_min_count = order[m - n_active..].iter().map(|&u| counts[u]).min().unwrap_or(0);
    CohortAssignment {
        cohorts,
        train_counts: counts,
        inactive_max_count,
        active_min_count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{IdMap, RatingRecord};

    fn dataset(counts: &[usize]) -> RatingDataset {
        let mut train = Vec::new();
        for (u, &c) in counts.iter().enumerate() {
            for k in 0..c {
                train.push(RatingRecord {
                    user: u as u32,
                    item: k as u32,
                    rating: 1,
                    timestamp: None,
                });
            }
        }
        RatingDataset {
            num_users: counts.len(),
            num_items: counts.iter().copied().max().unwrap_or(0),
            categories: vec![1],
            users: IdMap::default(),
            items: IdMap::default(),
            train,
            val: vec![],
            test: vec![],
        }
    }

    #[test]
    fn distinct_counts() {
        // user u has 100 - u interactions, so high ids are the least active
        let counts: Vec<usize> = (0..100).map(|u| 100 - u).collect();
        let a = assign_cohorts(&dataset(&counts));
        assert_eq!(a.size(Cohort::Inactive), 80);
        assert_eq!(a.size(Cohort::Normal), 15);
        assert_eq!(a.size(Cohort::Active), 5);
        assert_eq!(a.of(99), Cohort::Inactive);
        assert_eq!(a.of(0), Cohort::Active);
        assert_eq!(a.of(10), Cohort::Normal);
    }

    #[test]
    fn ties_break_by_user_id() {
        let a = assign_cohorts(&dataset(&[3; 100]));
        for u in 0..100u32 {
            let want = match u {
                0..=79 => Cohort::Inactive,
                80..=94 => Cohort::Normal,
                _ => Cohort::Active,
            };
            assert_eq!(a.of(u), want, "user {u}");
        }
    }

    #[test]
    fn absent_user_is_inactive() {
        let mut counts: Vec<usize> = (1..=100).collect();
        counts[50] = 0;
        let a = assign_cohorts(&dataset(&counts));
        assert_eq!(a.of(50), Cohort::Inactive);
        assert_eq!(a.train_counts[50], 0);
    }
}
