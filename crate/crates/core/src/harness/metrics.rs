//! Retrieval metrics over embedding columns.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Mat;

/// A retrieval metric averaged over the queries that have at least one
/// same-class other sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalScore {
    pub value: f64,
    pub queries: usize,
    /// Queries dropped because their class has a single sample.
    pub skipped: usize,
}

fn check(embeddings: &Mat, labels: &[usize]) -> Result<()> {
    if embeddings.cols() != labels.len() {
        return Err(Error::dim(
            "retrieval",
            format!("{} embeddings but {} labels", embeddings.cols(), labels.len()),
        ));
    }
    if !embeddings.is_finite() {
        return Err(Error::NonFinite("retrieval embeddings".into()));
    }
    Ok(())
}

/// Other samples ordered by Euclidean distance to `query`, ties by index.
pub fn ranking(embeddings: &Mat, query: usize) -> Vec<usize> {
    let q = embeddings.col(query);
    let mut others: Vec<(f64, usize)> = (0..embeddings.cols())
        .filter(|&j| j != query)
        .map(|j| {
            let d: f64 = (0..embeddings.rows())
                .map(|i| {
                    let t = embeddings[(i, j)] - q[i];
                    t * t
                })
                .sum();
            (d, j)
        })
        .collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    others.into_iter().map(|(_, j)| j).collect()
}

fn per_query<F>(embeddings: &Mat, labels: &[usize], score: F) -> Result<RetrievalScore>
where
    F: Fn(&[bool], usize) -> f64,
{
    check(embeddings, labels)?;
    let mut total = 0.0;
    let mut queries = 0;
    let mut skipped = 0;
    for q in 0..labels.len() {
        let relevant = labels.iter().enumerate().filter(|&(j, &l)| j != q && l == labels[q]).count();
        if relevant == 0 {
            skipped += 1;
            continue;
        }
        let rel: Vec<bool> = ranking(embeddings, q).into_iter().map(|j| labels[j] == labels[q]).collect();
        total += score(&rel, relevant);
        queries += 1;
    }
    if queries == 0 {
        return Err(Error::contract("no query has a same-class other sample"));
    }
    Ok(RetrievalScore {
        value: total / queries as f64,
        queries,
        skipped,
    })
}

/// Mean average precision at R, with R the number of same-class others.
pub fn map_at_r(embeddings: &Mat, labels: &[usize]) -> Result<RetrievalScore> {
    per_query(embeddings, labels, average_precision_at)
}

/// MAP@R of a single query, or `None` when it has no same-class other.
pub fn query_map_at_r(embeddings: &Mat, labels: &[usize], query: usize) -> Option<f64> {
    let r = labels.iter().enumerate().filter(|&(j, &l)| j != query && l == labels[query]).count();
    if r == 0 {
        return None;
    }
    let rel: Vec<bool> = ranking(embeddings, query).into_iter().map(|j| labels[j] == labels[query]).collect();
    Some(average_precision_at(&rel, r))
}

/// `(1/R)·Σ_{i≤R} P(i)·rel(i)` for one ranked relevance list.
pub fn average_precision_at(rel: &[bool], r: usize) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &is_rel) in rel.iter().take(r).enumerate() {
        if is_rel {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / r as f64
}

/// Fraction of queries whose nearest other sample shares their class.
pub fn r_at_1(embeddings: &Mat, labels: &[usize]) -> Result<RetrievalScore> {
    per_query(embeddings, labels, |rel, _| if rel[0] { 1.0 } else { 0.0 })
}
