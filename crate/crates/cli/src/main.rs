//! `dh`: train, encode, search and evaluate supervised binary hash codes.

mod input;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dhash::dataset::{one_hot_encode, split, LabelMap};
use dhash::experiment::{bench, bench_csv, BenchConfig, BenchMethod, Labeled};
use dhash::hamming::PackedIndex;
use dhash::metrics::{MetricsReport, QuerySet, REPORT_CSV_HEADER};
use dhash::model::{
    Method, TrainConfig, DEFAULT_ANCHORS, DEFAULT_LAMBDA, DEFAULT_MAX_ITERS, DEFAULT_NU,
};
use dhash::persist::{load_codes, load_model, save_codes, save_model, UNLABELED};
use dhash::rbf::SigmaRule;
use dhash::sdh::{sdh_train, DccConfig};
use dhash::stability::{sweep, sweep_csv, StabilityConfig};
use dhash::synth::{ClusterGenerator, ClusterSpec};
use dhash::{fsdh, CodeMatrix};

use input::{DataArgs, Dataset};

#[derive(Parser, Debug)]
#[command(name = "dh", version, about = "Supervised discrete hashing toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Learn a hash model from labelled features.
    Train(TrainArgs),
    /// Encode features with a trained model.
    Encode(EncodeArgs),
    /// Search a code database.
    Query(QueryArgs),
    /// Score query codes against a database.
    Eval(EvalArgs),
    /// Compare methods across code lengths.
    Bench(BenchArgs),
    /// Replace-one stability experiment for the label regression.
    Stability(StabilityArgs),
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum MethodArg {
    Fsdh,
    Sdh,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Fsdh => Method::Fsdh,
            MethodArg::Sdh => Method::Sdh,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct HyperArgs {
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value_t = DEFAULT_NU)]
    nu: f64,
    /// Maximum outer iterations.
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    iters: usize,
    #[arg(long, default_value_t = DEFAULT_ANCHORS)]
    anchors: usize,
    /// Kernel width: mean, median or fixed:<v>.
    #[arg(long, default_value = "mean")]
    sigma: SigmaRule,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// DCC sweeps per B-step (sdh only).
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    sweeps: u64,
}

impl HyperArgs {
    fn config(&self, bits: usize) -> TrainConfig {
        TrainConfig {
            bits,
            lambda: self.lambda,
            nu: self.nu,
            max_iters: self.iters,
            anchors: self.anchors,
            seed: self.seed,
            sigma_rule: self.sigma,
            ..TrainConfig::default()
        }
    }

    fn dcc(&self) -> DccConfig {
        DccConfig {
            max_sweeps: self.sweeps as usize,
            ..DccConfig::default()
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_enum, default_value = "fsdh")]
    method: MethodArg,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    bits: u64,
    #[command(flatten)]
    hyper: HyperArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    /// Training codes; defaults to `<out>.codes`.
    #[arg(long)]
    codes_out: Option<PathBuf>,
    /// Per-iteration trace; defaults to `<out>.trace.csv`.
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EncodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum QueryMode {
    Radius,
    Topn,
}

#[derive(Args, Debug)]
struct QueryArgs {
    /// Database codes.
    #[arg(long)]
    db: PathBuf,
    /// Query codes.
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, value_enum)]
    mode: QueryMode,
    /// Hamming radius (radius mode).
    #[arg(long)]
    r: Option<u32>,
    /// Result count (topn mode).
    #[arg(long)]
    n: Option<usize>,
    /// Result listing; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Labelled database codes.
    #[arg(long)]
    db: PathBuf,
    /// Labelled query codes. Alternatively pass `--model` with query data.
    #[arg(long, conflicts_with = "model")]
    queries: Option<PathBuf>,
    /// Model used to encode the query data (timed as test time).
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    /// Training trace whose step times give the training time.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Method name written in the CSV row.
    #[arg(long, default_value = "fsdh")]
    method: String,
    #[arg(long, default_value_t = 500)]
    top_n: usize,
    #[arg(long, default_value_t = 2)]
    radius: u32,
    /// Queries are the database rows themselves; skip the self match.
    #[arg(long)]
    exclude_self: bool,
    /// CSV report; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON report.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Comma-separated code lengths.
    #[arg(long, value_delimiter = ',', default_value = "16,32,64,96,128")]
    bits: Vec<usize>,
    /// Comma-separated methods: fsdh, sdh, rp.
    #[arg(long, value_delimiter = ',', default_value = "fsdh,sdh,rp")]
    methods: Vec<BenchMethod>,
    #[command(flatten)]
    hyper: HyperArgs,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0.1)]
    test_fraction: f64,
    #[arg(long, default_value_t = 500)]
    top_n: usize,
    #[arg(long, default_value_t = 2)]
    radius: u32,
    /// CSV output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct StabilityArgs {
    /// Generator for the samples; its `n` is ignored in favour of `--sizes`.
    #[arg(long, default_value = "clusters:k=5,d=16,spread=1")]
    synth: ClusterSpec,
    #[arg(long, value_delimiter = ',', default_value = "100,400,1600")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    lambda_prime: f64,
    #[arg(long, default_value_t = DEFAULT_NU)]
    nu_prime: f64,
    /// Replace-one trials per sample size.
    #[arg(long, default_value_t = 50)]
    trials: usize,
    /// Trials that also retrain end to end.
    #[arg(long, default_value_t = 0)]
    code_trials: usize,
    #[arg(long, default_value_t = 32)]
    bits: usize,
    #[arg(long, default_value_t = 100)]
    anchors: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV summary; the JSON report goes next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    json: Option<PathBuf>,
}

/// Flag combinations clap cannot express; exits with status 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Encode(a) => cmd_encode(a),
        Command::Query(a) => cmd_query(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Stability(a) => cmd_stability(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<io::Error>()
            .is_some_and(|io| io.kind() == io::ErrorKind::BrokenPipe)
    })
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("DH_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("DH_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("starting worker pool")
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Labels stored in code files: integers verbatim, anything else numbered
/// in sorted order.
fn stored_labels(labels: &[String]) -> Vec<u32> {
    let numeric: Option<Vec<u32>> = labels
        .iter()
        .map(|l| l.parse::<u32>().ok().filter(|&v| v != UNLABELED))
        .collect();
    numeric.unwrap_or_else(|| {
        let map = LabelMap::fit(labels);
        labels
            .iter()
            .map(|l| map.id(l).map_or(UNLABELED, |i| i as u32))
            .collect()
    })
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let data = a.data.load_required()?;
    let labels = data
        .labels
        .as_ref()
        .ok_or_else(|| usage("training needs labels: pass --labels, --label-col last or --synth"))?;
    let map = LabelMap::fit(labels);
    let y = one_hot_encode(&map.encode(labels)?, map.classes())?;
    let config = a.hyper.config(a.bits as usize);
    let (model, codes, trace) = match Method::from(a.method) {
        Method::Fsdh => fsdh::train(&data.features, &y, &config)?,
        Method::Sdh => sdh_train(&data.features, &y, &config, &a.hyper.dcc())?,
    };
    save_model(&a.out, &model).with_context(|| format!("writing {}", a.out.display()))?;
    let codes_out = a.codes_out.unwrap_or_else(|| sibling(&a.out, ".codes"));
    save_codes(&codes_out, &codes, &stored_labels(labels))?;
    let trace_out = a.trace_out.unwrap_or_else(|| sibling(&a.out, ".trace.csv"));
    fs::write(&trace_out, trace.to_csv())?;
    eprintln!(
        "trained {} with {} bits on {} rows in {:.3}s ({} iterations{})",
        model.method,
        model.bits(),
        data.features.rows(),
        trace.total_time().as_secs_f64(),
        trace.iterations(),
        if trace.converged { ", converged" } else { "" }
    );
    Ok(())
}

fn cmd_encode(a: EncodeArgs) -> anyhow::Result<()> {
    let model = load_model(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let data = a.data.load_required()?;
    let codes = model.encode(&data.features)?;
    let labels = data
        .labels
        .as_deref()
        .map(stored_labels)
        .unwrap_or_else(|| vec![UNLABELED; codes.rows()]);
    save_codes(&a.out, &codes, &labels)?;
    Ok(())
}

fn open_out(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::BufWriter::new(io::stdout().lock())),
    })
}

fn cmd_query(a: QueryArgs) -> anyhow::Result<()> {
    let (db, db_labels) = load_codes(&a.db)?;
    let (queries, _) = load_codes(&a.queries)?;
    if db.bits() != queries.bits() {
        bail!("database has {} bits, queries have {}", db.bits(), queries.bits());
    }
    match (a.mode, a.r, a.n) {
        (QueryMode::Radius, Some(_), None) | (QueryMode::Topn, None, Some(_)) => {}
        (QueryMode::Radius, _, _) => return Err(usage("radius mode takes --r and not --n")),
        (QueryMode::Topn, _, _) => return Err(usage("topn mode takes --n and not --r")),
    }
    if let Some(n) = a.n {
        if n == 0 || n > db.rows() {
            return Err(usage(format!(
                "--n {n} must be between 1 and the database size {}",
                db.rows()
            )));
        }
    }
    let index = PackedIndex::new(db, db_labels.iter().map(|&l| l as usize).collect())?;
    let mut out = open_out(a.out.as_deref())?;
    writeln!(out, "query,rank,row,distance")?;
    for q in 0..queries.rows() {
        let hits: Vec<(usize, u32)> = match (a.r, a.n) {
            (Some(r), _) => {
                let d = index.distances(queries.row(q))?;
                index
                    .radius_lookup(queries.row(q), r)?
                    .into_iter()
                    .map(|i| (i, d[i]))
                    .collect()
            }
            (_, Some(n)) => index.rank_top_n(queries.row(q), n)?,
            _ => unreachable!(),
        };
        for (rank, (row, dist)) in hits.into_iter().enumerate() {
            writeln!(out, "{q},{rank},{row},{dist}")?;
        }
    }
    out.flush()?;
    Ok(())
}

fn labelled(path: &Path, labels: &[u32]) -> anyhow::Result<Vec<usize>> {
    if labels.contains(&UNLABELED) {
        bail!("{} has rows without ground-truth labels", path.display());
    }
    Ok(labels.iter().map(|&l| l as usize).collect())
}

/// Sum of the step columns of a trace CSV, in seconds.
fn trace_seconds(path: &Path) -> anyhow::Result<f64> {
    let text = fs::read_to_string(path)?;
    let mut total_ms = 0.0;
    for (i, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 5 {
            bail!("{}: malformed trace line {}", path.display(), i + 1);
        }
        for f in &fields[2..5] {
            total_ms += f
                .parse::<f64>()
                .with_context(|| format!("{}: bad time {f:?}", path.display()))?;
        }
    }
    Ok(total_ms / 1000.0)
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<()> {
    let (db, db_labels) = load_codes(&a.db)?;
    let db_labels = labelled(&a.db, &db_labels)?;
    let index = PackedIndex::new(db, db_labels)?;

    let started = Instant::now();
    let (queries, q_labels): (CodeMatrix, Vec<usize>) = match (&a.queries, &a.model) {
        (Some(path), None) => {
            let (codes, labels) = load_codes(path)?;
            (codes, labelled(path, &labels)?)
        }
        (None, Some(model)) => {
            let model = load_model(model)?;
            let data = a.data.load_required()?;
            let labels = data
                .labels
                .as_deref()
                .ok_or_else(|| usage("query data needs labels for evaluation"))?;
            (model.encode(&data.features)?, stored_labels(labels).iter().map(|&l| l as usize).collect())
        }
        _ => return Err(usage("pass either --queries or --model with query features")),
    };
    for q in 0..queries.rows() {
        index.radius_lookup(queries.row(q), a.radius)?;
    }
    let test_time = started.elapsed();

    let mut set = QuerySet::new(&queries, &q_labels);
    if a.exclude_self {
        set = set.excluding_self();
    }
    let mut report = MetricsReport::compute(&index, &set, a.top_n, a.radius, None)?;
    report.test_seconds_per_query = test_time.as_secs_f64() / queries.rows().max(1) as f64;
    if let Some(trace) = &a.trace {
        report.train_seconds = trace_seconds(trace)?;
    }

    let mut out = open_out(a.out.as_deref())?;
    writeln!(out, "{REPORT_CSV_HEADER}")?;
    writeln!(out, "{}", report.to_csv_row(&a.method, index.bits()))?;
    out.flush()?;
    if let Some(json) = &a.json {
        fs::write(json, report.to_json())?;
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> anyhow::Result<()> {
    if a.bits.is_empty() || a.bits.contains(&0) {
        return Err(usage("--bits needs positive code lengths"));
    }
    let Dataset { features, labels } = a.data.load_required()?;
    let labels = labels.ok_or_else(|| usage("bench needs labelled data"))?;
    let map = LabelMap::fit(&labels);
    let ids = map.encode(&labels)?;
    let (train, test) = split(&features, &ids, a.test_fraction, a.hyper.seed, true)?;
    let config = BenchConfig {
        methods: a.methods.clone(),
        bits: a.bits.clone(),
        train: a.hyper.config(a.bits[0]),
        dcc: a.hyper.dcc(),
        top_n: a.top_n,
        radius: a.radius,
        map_depth: None,
    };
    let rows = bench(
        Labeled {
            x: &train.features,
            labels: &train.labels,
        },
        Labeled {
            x: &test.features,
            labels: &test.labels,
        },
        map.classes(),
        &config,
    )?;
    let mut out = open_out(a.out.as_deref())?;
    out.write_all(bench_csv(&rows).as_bytes())?;
    out.flush()?;
    if let Some(json) = &a.json {
        let reports: Vec<serde_json::Value> = rows
            .iter()
            .map(|r| {
                serde_json::json!({
                    "method": r.method.name(),
                    "bits": r.bits,
                    "report": r.report,
                    "b_step_seconds": r.trace.as_ref().map(|t| t.b_step_time().as_secs_f64()),
                })
            })
            .collect();
        fs::write(json, serde_json::to_string_pretty(&reports)?)?;
    }
    Ok(())
}

fn cmd_stability(a: StabilityArgs) -> anyhow::Result<()> {
    if a.sizes.is_empty() {
        return Err(usage("--sizes needs at least one sample size"));
    }
    let gen = ClusterGenerator::new(a.synth.classes, a.synth.dim, a.synth.spread, a.seed);
    let config = StabilityConfig {
        lambda_prime: a.lambda_prime,
        nu_prime: a.nu_prime,
        replacements: a.trials,
        sample_sizes: a.sizes.clone(),
        bits: a.bits,
        anchors: a.anchors,
        code_trials: a.code_trials,
        seed: a.seed,
    };
    let reports = sweep(&gen, &config)?;
    fs::write(&a.out, sweep_csv(&reports))?;
    let json_path = a.json.unwrap_or_else(|| a.out.with_extension("json"));
    let json: Vec<serde_json::Value> = reports
        .iter()
        .map(|r| serde_json::from_str(&r.to_json()))
        .collect::<Result<_, _>>()?;
    fs::write(&json_path, serde_json::to_string_pretty(&json)?)?;
    let violations: usize = reports.iter().map(|r| r.violations).sum();
    eprintln!(
        "{} sample sizes, {violations} bound violations",
        reports.len()
    );
    Ok(())
}
