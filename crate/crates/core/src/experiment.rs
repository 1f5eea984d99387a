//! Side-by-side comparison of the hashing methods on one train/test split.
//!
//! The training rows form the retrieval database (encoded with the learned
//! hash function) and the test rows are the queries.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::baseline::RandomProjection;
use crate::codes::CodeMatrix;
use crate::dataset::{one_hot_encode, FeatureMatrix};
use crate::error::{Error, Result};
use crate::fsdh;
use crate::hamming::PackedIndex;
use crate::metrics::{MetricsReport, QuerySet, REPORT_CSV_HEADER};
use crate::model::{HashModel, TrainConfig, TrainTrace};
use crate::sdh::{self, DccConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BenchMethod {
    Fsdh,
    Sdh,
    RandomProjection,
}

impl BenchMethod {
    pub const ALL: [BenchMethod; 3] = [Self::Fsdh, Self::Sdh, Self::RandomProjection];

    pub fn name(self) -> &'static str {
        match self {
            Self::Fsdh => "fsdh",
            Self::Sdh => "sdh",
            Self::RandomProjection => "rp",
        }
    }
}

impl fmt::Display for BenchMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::validation(format!("unknown method `{s}`")))
    }
}

/// Labelled rows.
#[derive(Debug, Clone, Copy)]
pub struct Labeled<'a> {
    pub x: &'a FeatureMatrix,
    pub labels: &'a [usize],
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub methods: Vec<BenchMethod>,
    pub bits: Vec<usize>,
    /// Shared settings; `bits` is overridden per run.
    pub train: TrainConfig,
    pub dcc: DccConfig,
    pub top_n: usize,
    pub radius: u32,
    pub map_depth: Option<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            methods: BenchMethod::ALL.to_vec(),
            bits: vec![16, 32, 64],
            train: TrainConfig::default(),
            dcc: DccConfig::default(),
            top_n: 500,
            radius: 2,
            map_depth: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub method: BenchMethod,
    pub bits: usize,
    pub report: MetricsReport,
    /// Absent for the untrained baseline.
    pub trace: Option<TrainTrace>,
}

enum Encoder {
    Learned(HashModel),
    Projection(RandomProjection),
}

impl Encoder {
    fn encode(&self, x: &FeatureMatrix) -> Result<CodeMatrix> {
        match self {
            Self::Learned(m) => m.encode(x),
            Self::Projection(p) => p.encode(x),
        }
    }
}

/// Trains one method at one code length and scores it.
pub fn run_one(
    method: BenchMethod,
    bits: usize,
    train: Labeled<'_>,
    test: Labeled<'_>,
    classes: usize,
    config: &BenchConfig,
) -> Result<BenchRow> {
    let train_cfg = TrainConfig {
        bits,
        ..config.train
    };
    let y = one_hot_encode(train.labels, classes)?;
    let started = Instant::now();
    let (encoder, trace) = match method {
        BenchMethod::Fsdh => {
            let (model, _, trace) = fsdh::train(train.x, &y, &train_cfg)?;
            (Encoder::Learned(model), Some(trace))
        }
        BenchMethod::Sdh => {
            let (model, _, trace) = sdh::sdh_train(train.x, &y, &train_cfg, &config.dcc)?;
            (Encoder::Learned(model), Some(trace))
        }
        BenchMethod::RandomProjection => (
            Encoder::Projection(RandomProjection::fit(train.x, bits, train_cfg.seed)?),
            None,
        ),
    };
    let fit_time = started.elapsed();

    let db = encoder.encode(train.x)?;
    let index = PackedIndex::new(db, train.labels.to_vec())?;

    let started = Instant::now();
    let q = encoder.encode(test.x)?;
    for i in 0..q.rows() {
        index.radius_lookup(q.row(i), config.radius)?;
    }
    let query_time = started.elapsed();

    let queries = QuerySet::new(&q, test.labels);
    let mut report =
        MetricsReport::compute(&index, &queries, config.top_n, config.radius, config.map_depth)?;
    report.train_seconds = trace
        .as_ref()
        .map_or(fit_time, TrainTrace::total_time)
        .as_secs_f64();
    report.test_seconds_per_query = per_query(query_time, q.rows());
    Ok(BenchRow {
        method,
        bits,
        report,
        trace,
    })
}

fn per_query(t: Duration, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        t.as_secs_f64() / n as f64
    }
}

/// Every configured method at every code length, in that nesting order.
pub fn bench(
    train: Labeled<'_>,
    test: Labeled<'_>,
    classes: usize,
    config: &BenchConfig,
) -> Result<Vec<BenchRow>> {
    if config.bits.is_empty() || config.methods.is_empty() {
        return Err(Error::validation("bench needs at least one method and code length"));
    }
    let mut rows = Vec::new();
    for &bits in &config.bits {
        for &method in &config.methods {
            rows.push(run_one(method, bits, train, test, classes, config)?);
        }
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(REPORT_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.report.to_csv_row(r.method.name(), r.bits));
        out.push('\n');
    }
    out
}
