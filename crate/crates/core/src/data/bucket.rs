use crate::data::RatingRecord;

/// Bucket of `rating` on a `1..=scale_max` scale folded into `buckets`
/// equal-width buckets: `ceil(rating * buckets / scale_max)`.
pub fn bucket_of(rating: u32, scale_max: u32, buckets: u32) -> u32 {
    let num = rating as u64 * buckets as u64;
    num.div_ceil(scale_max as u64).max(1) as u32
}

/// Replaces every rating by its bucket.
pub fn bucket_scale(records: &[RatingRecord], scale_max: u32, buckets: u32) -> Vec<RatingRecord> {
    records
        .iter()
        .map(|r| RatingRecord {
            rating: bucket_of(r.rating, scale_max, buckets),
            ..*r
        })
        .collect()
}
