//! User-based nearest-neighbor CF over cosine similarity of rating rows.

use std::collections::BTreeMap;

use super::RatingMatrix;
use crate::error::{Error, Result};

/// Cosine similarity between `u` and every other user with at least one
/// co-rated item.
fn similarities(matrix: &RatingMatrix, u: usize) -> Vec<(usize, f64)> {
    let norm = |row: &[(usize, f64)]| row.iter().map(|(_, r)| r * r).sum::<f64>().sqrt();
    let mut dots: BTreeMap<usize, f64> = BTreeMap::new();
    for &(i, r) in matrix.user_row(u) {
        for &(v, s) in matrix.item_column(i) {
            if v != u {
                *dots.entry(v).or_insert(0.0) += r * s;
            }
        }
    }
    let nu = norm(matrix.user_row(u));
    dots.into_iter()
        .map(|(v, d)| (v, d / (nu * norm(matrix.user_row(v)))))
        .filter(|(_, s)| *s > 0.0)
        .collect()
}

/// Scores items for `user_id` from its `k` most similar users:
/// `score(i) = Σ sim(u,v)·r_vi / Σ sim(u,v)` over the neighbors, for every
/// item any neighbor rated. Ties among neighbors go to the smaller user id.
pub fn nncf_scores(
    matrix: &RatingMatrix,
    user_id: &str,
    k: usize,
) -> Result<BTreeMap<String, f64>> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let u = matrix
        .user_index(user_id)
        .ok_or_else(|| Error::UnknownUser(user_id.into()))?;
    let mut sims = similarities(matrix, u);
    sims.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| matrix.users()[a.0].cmp(&matrix.users()[b.0]))
    });
    sims.truncate(k);
    let total: f64 = sims.iter().map(|(_, s)| s).sum();
    let mut scores: BTreeMap<String, f64> = BTreeMap::new();
    if total == 0.0 {
        return Ok(scores);
    }
    for &(v, s) in &sims {
        for &(i, r) in matrix.user_row(v) {
            *scores.entry(matrix.items()[i].clone()).or_insert(0.0) += s * r;
        }
    }
    for value in scores.values_mut() {
        *value /= total;
    }
    Ok(scores)
}
