//! Retrieval and classification metrics over Hamming rankings.
//!
//! A database item is relevant to a query when it carries the same class
//! label. Per-query values are computed in parallel and reduced in query
//! order so results do not depend on the thread count.

use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codes::CodeMatrix;
use crate::error::{Error, Result};
use crate::hamming::PackedIndex;
use crate::model::TrainTrace;

/// Queries to evaluate against a [`PackedIndex`].
#[derive(Debug, Clone, Copy)]
pub struct QuerySet<'a> {
    pub codes: &'a CodeMatrix,
    pub labels: &'a [usize],
    /// Query `i` is database row `i` and is removed from its own candidates.
    pub exclude_self: bool,
}

impl<'a> QuerySet<'a> {
    pub fn new(codes: &'a CodeMatrix, labels: &'a [usize]) -> Self {
        Self {
            codes,
            labels,
            exclude_self: false,
        }
    }

    pub fn excluding_self(mut self) -> Self {
        self.exclude_self = true;
        self
    }

    fn len(&self) -> usize {
        self.codes.rows()
    }

    fn check(&self, index: &PackedIndex) -> Result<()> {
        if self.codes.rows() != self.labels.len() {
            return Err(Error::validation(format!(
                "{} query codes but {} labels",
                self.codes.rows(),
                self.labels.len()
            )));
        }
        if self.codes.bits() != index.bits() {
            return Err(Error::validation(format!(
                "query codes have {} bits, index has {}",
                self.codes.bits(),
                index.bits()
            )));
        }
        if self.exclude_self && self.len() > index.len() {
            return Err(Error::validation(
                "self-exclusion needs every query to be a database row",
            ));
        }
        Ok(())
    }

    /// Ranking for query `q` with its own row dropped when excluding self.
    fn ranking(&self, index: &PackedIndex, q: usize) -> Result<Vec<(usize, u32)>> {
        let mut r = index.ranking(self.codes.row(q))?;
        if self.exclude_self {
            r.retain(|&(i, _)| i != q);
        }
        Ok(r)
    }

    fn relevant_total(&self, index: &PackedIndex, q: usize) -> usize {
        let label = self.labels[q];
        let total = index.labels().iter().filter(|&&l| l == label).count();
        if self.exclude_self && index.labels()[q] == label {
            total - 1
        } else {
            total
        }
    }
}

/// Mean of precision@k over the relevant positions, divided by
/// `total_relevant`. `None` when there is nothing relevant.
pub fn average_precision(ranked_relevance: &[bool], total_relevant: usize) -> Option<f64> {
    if total_relevant == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &rel) in ranked_relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Some(sum / total_relevant as f64)
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// MAP over queries that have at least one relevant database item. `depth`
/// caps the ranking; `None` ranks the whole database.
pub fn mean_average_precision(
    index: &PackedIndex,
    queries: &QuerySet<'_>,
    depth: Option<usize>,
) -> Result<f64> {
    queries.check(index)?;
    let per_query: Vec<Option<f64>> = (0..queries.len())
        .into_par_iter()
        .map(|q| {
            let ranking = queries.ranking(index, q)?;
            let label = queries.labels[q];
            let rel: Vec<bool> = ranking
                .iter()
                .take(depth.unwrap_or(usize::MAX))
                .map(|&(i, _)| index.labels()[i] == label)
                .collect();
            Ok(average_precision(&rel, queries.relevant_total(index, q)))
        })
        .collect::<Result<_>>()?;
    let valid: Vec<f64> = per_query.into_iter().flatten().collect();
    if valid.is_empty() {
        return Err(Error::validation(
            "no query has a relevant item in the database",
        ));
    }
    Ok(mean(&valid))
}

/// Mean fraction of relevant items among the top `n` retrieved.
pub fn precision_at_n(index: &PackedIndex, queries: &QuerySet<'_>, n: usize) -> Result<f64> {
    queries.check(index)?;
    let available = index.len() - usize::from(queries.exclude_self);
    if n == 0 || n > available {
        return Err(Error::validation(format!(
            "precision depth {n} must be in [1, {available}]"
        )));
    }
    let per_query: Vec<f64> = (0..queries.len())
        .into_par_iter()
        .map(|q| {
            let label = queries.labels[q];
            let hits = queries
                .ranking(index, q)?
                .iter()
                .take(n)
                .filter(|&&(i, _)| index.labels()[i] == label)
                .count();
            Ok(hits as f64 / n as f64)
        })
        .collect::<Result<_>>()?;
    Ok(mean(&per_query))
}

/// Hash-lookup precision, recall and F-measure at one Hamming radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LookupScores {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

pub fn f_measure(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Mean per-query precision (0 for a query that retrieves nothing) and mean
/// recall over queries with at least one relevant item; F from those means.
pub fn lookup_prf(index: &PackedIndex, queries: &QuerySet<'_>, r: u32) -> Result<LookupScores> {
    queries.check(index)?;
    let per_query: Vec<(f64, Option<f64>)> = (0..queries.len())
        .into_par_iter()
        .map(|q| {
            let label = queries.labels[q];
            let mut found = index.radius_lookup(queries.codes.row(q), r)?;
            if queries.exclude_self {
                found.retain(|&i| i != q);
            }
            let hits = found.iter().filter(|&&i| index.labels()[i] == label).count();
            let precision = if found.is_empty() {
                0.0
            } else {
                hits as f64 / found.len() as f64
            };
            let total = queries.relevant_total(index, q);
            let recall = (total > 0).then(|| hits as f64 / total as f64);
            Ok((precision, recall))
        })
        .collect::<Result<_>>()?;
    let precisions: Vec<f64> = per_query.iter().map(|p| p.0).collect();
    let recalls: Vec<f64> = per_query.iter().filter_map(|p| p.1).collect();
    let precision = mean(&precisions);
    let recall = mean(&recalls);
    Ok(LookupScores {
        precision,
        recall,
        f_measure: f_measure(precision, recall),
    })
}

/// 1-nearest-neighbour classification accuracy in Hamming space, ties broken
/// by the lowest row id.
pub fn accuracy_1nn(index: &PackedIndex, queries: &QuerySet<'_>) -> Result<f64> {
    queries.check(index)?;
    if index.len() <= usize::from(queries.exclude_self) {
        return Err(Error::validation("index has no candidates"));
    }
    let correct: Vec<f64> = (0..queries.len())
        .into_par_iter()
        .map(|q| {
            let dist = index.distances(queries.codes.row(q))?;
            let best = dist
                .iter()
                .enumerate()
                .filter(|&(i, _)| !(queries.exclude_self && i == q))
                .min_by_key(|&(i, &d)| (d, i))
                .map(|(i, _)| i)
                .unwrap_or_default();
            Ok(f64::from(u8::from(index.labels()[best] == queries.labels[q])))
        })
        .collect::<Result<_>>()?;
    Ok(mean(&correct))
}

/// Training time (setup plus all step durations) and mean test time per
/// query (encoding plus lookup).
pub fn timing_report(trace: &TrainTrace, query_time: Duration, queries: usize) -> (f64, f64) {
    let per_query = if queries == 0 {
        0.0
    } else {
        query_time.as_secs_f64() / queries as f64
    };
    (trace.total_time().as_secs_f64(), per_query)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub map: f64,
    pub precision_at_n: f64,
    pub top_n: usize,
    pub radius: u32,
    pub precision_r: f64,
    pub recall_r: f64,
    pub f_measure_r: f64,
    pub accuracy: f64,
    pub train_seconds: f64,
    pub test_seconds_per_query: f64,
}

pub const REPORT_CSV_HEADER: &str =
    "method,bits,map,precision_r2,recall_r2,f_r2,accuracy,train_s,test_s";

impl MetricsReport {
    /// Quality metrics only; timings are filled in by the caller.
    pub fn compute(
        index: &PackedIndex,
        queries: &QuerySet<'_>,
        top_n: usize,
        radius: u32,
        map_depth: Option<usize>,
    ) -> Result<Self> {
        let lookup = lookup_prf(index, queries, radius)?;
        let available = index.len() - usize::from(queries.exclude_self);
        let top_n = top_n.min(available);
        Ok(Self {
            map: mean_average_precision(index, queries, map_depth)?,
            precision_at_n: precision_at_n(index, queries, top_n)?,
            top_n,
            radius,
            precision_r: lookup.precision,
            recall_r: lookup.recall,
            f_measure_r: lookup.f_measure,
            accuracy: accuracy_1nn(index, queries)?,
            train_seconds: 0.0,
            test_seconds_per_query: 0.0,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_default()
    }

    /// One row matching [`REPORT_CSV_HEADER`]. Floats use the shortest
    /// round-trip representation so values parse back exactly.
    pub fn to_csv_row(&self, method: &str, bits: usize) -> String {
        format!(
            "{method},{bits},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            self.map,
            self.precision_r,
            self.recall_r,
            self.f_measure_r,
            self.accuracy,
            self.train_seconds,
            self.test_seconds_per_query
        )
    }
}
