//! Error broken down by user activity cohort and by true rating.

use std::fmt;

use crate::data::{Cohort, CohortAssignment, RatingRecord};
use crate::error::Result;
use crate::harness::eval::Scorer;

/// One table cell: how many records fell in a group and their MSE.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupError {
    pub count: usize,
    /// `None` for an empty group.
    pub mse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LongTailReport {
    pub cohorts: Vec<(Cohort, GroupError)>,
    pub ratings: Vec<(u32, GroupError)>,
}

impl LongTailReport {
    pub fn cohort_mse(&self, c: Cohort) -> Option<f64> {
        self.cohorts.iter().find(|(k, _)| *k == c).and_then(|(_, g)| g.mse)
    }

    pub fn rating_mse(&self, r: u32) -> Option<f64> {
        self.ratings.iter().find(|(k, _)| *k == r).and_then(|(_, g)| g.mse)
    }

    /// `table,group,count,mse` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("table,group,count,mse\n");
        let cell = |g: &GroupError| g.mse.map(|v| format!("{v:.6}")).unwrap_or_default();
        for (c, g) in &self.cohorts {
            out.push_str(&format!("cohort,{c},{},{}\n", g.count, cell(g)));
        }
        for (r, g) in &self.ratings {
            out.push_str(&format!("rating,{r},{},{}\n", g.count, cell(g)));
        }
        out
    }
}

impl fmt::Display for LongTailReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cell = |g: &GroupError| match g.mse {
            Some(v) => format!("{v:>10.4}"),
            None => format!("{:>10}", "-"),
        };
        writeln!(f, "{:<10} {:>8} {:>10}", "cohort", "count", "MSE")?;
        for (c, g) in &self.cohorts {
            writeln!(f, "{:<10} {:>8} {}", c.name(), g.count, cell(g))?;
        }
        writeln!(f)?;
        writeln!(f, "{:<10} {:>8} {:>10}", "rating", "count", "MSE")?;
        for (r, g) in &self.ratings {
            writeln!(f, "{:<10} {:>8} {}", r, g.count, cell(g))?;
        }
        Ok(())
    }
}

fn group(errors: impl Iterator<Item = f64>) -> GroupError {
    let (count, total) = errors.fold((0usize, 0.0), |(n, s), e| (n + 1, s + e));
    GroupError {
        count,
        mse: (count > 0).then(|| total / count as f64),
    }
}

/// Squared errors of the expected ratings on `records`, grouped by the
/// user's cohort and by the true rating.
pub fn report_longtail(
    scorer: &Scorer<'_>,
    cohorts: &CohortAssignment,
    records: &[RatingRecord],
) -> Result<LongTailReport> {
    let pred = scorer.expected(records)?;
    let sq: Vec<f64> = pred
        .iter()
        .zip(records)
        .map(|(p, r)| (p - r.rating as f64).powi(2))
        .collect();
    let by_cohort = Cohort::ALL
        .iter()
        .map(|&c| {
            let errs = records
                .iter()
                .zip(&sq)
                .filter(move |(r, _)| cohorts.of(r.user) == c)
                .map(|(_, &e)| e);
            (c, group(errs))
        })
        .collect();
    let by_rating = scorer
        .categories
        .iter()
        .map(|&k| {
            let errs = records
                .iter()
                .zip(&sq)
                .filter(move |(r, _)| r.rating == k)
                .map(|(_, &e)| e);
            (k, group(errs))
        })
        .collect();
    Ok(LongTailReport {
        cohorts: by_cohort,
        ratings: by_rating,
    })
}
