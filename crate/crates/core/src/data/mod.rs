//! Rating ingestion, splits, per-rating graphs and user cohorts.

mod bucket;
mod cohort;
mod graph;
mod load;
mod schema;
mod split;

pub use bucket::{bucket_of, bucket_scale};
pub use cohort::{assign_cohorts, Cohort, CohortAssignment, ACTIVE_SHARE, INACTIVE_SHARE};
pub use graph::{build_from_records, build_subgraphs, RatingGraph, RatingSubgraphs};
pub use load::{load_tsv, IdMap, RatingRecord, RatingTable};
pub use schema::Schema;
pub use split::{split, RatingDataset, DEFAULT_RATIOS, MIN_RECORDS};
