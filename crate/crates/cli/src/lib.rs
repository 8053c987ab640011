//! Command-line front end and HTTP service.

use std::fs;
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use forestsat::api::{
    dataset_summary, subsample, AttributionRequest, CounterfactualRequest, Engine, FeatureRef,
    MethodName, PredictRequest,
};
use forestsat::attribution::{rank_stability_curves, AttributionResult};
use forestsat::cnf::parse_dimacs;
use forestsat::data::{load_csv, load_csv_with_classes, load_feature_rows, split, Dataset};
use forestsat::encode::{encode, extract_thresholds, NeighborhoodBox};
use forestsat::forest::{Forest, Instance};
use forestsat::sat::{solve_with_budget, SolveBudget, SolveStatus};
use forestsat::train::{accuracy, train_forest, TrainConfig};

pub mod server;

#[derive(Debug, Parser)]
#[command(
    name = "forestsat",
    version,
    about = "Minimal counterfactual explanations for random forests"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split a labelled CSV, standardize it and train a forest.
    Train(TrainArgs),
    /// Describe a model or a dataset.
    Summary(SummaryArgs),
    /// Predict one instance or every row of a CSV.
    Predict(PredictArgs),
    /// Write the flip query for one instance and box as DIMACS CNF.
    ExportCnf(ExportCnfArgs),
    /// Solve a DIMACS CNF file.
    Sat(SatArgs),
    /// Find minimal counterfactuals.
    Explain(ExplainArgs),
    /// Compute feature attributions.
    Attribute(AttributeArgs),
    /// Top-n rank stability curves from saved attributions.
    Stability(StabilityArgs),
    /// Counterfactual report over a labelled test set.
    Report(ReportArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Label column of the input CSV.
    #[arg(long, default_value = "diagnosis")]
    pub label: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub trees: usize,
    #[arg(long, default_value_t = 10)]
    pub depth: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of rows used for training.
    #[arg(long, default_value_t = 0.5)]
    pub split: f64,
    #[arg(long)]
    pub features_per_split: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub min_samples_leaf: usize,
    #[arg(long)]
    pub no_bootstrap: bool,
    /// Where to write the standardized training split.
    #[arg(long)]
    pub train_out: Option<PathBuf>,
    /// Where to write the standardized test split.
    #[arg(long)]
    pub test_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SummaryArgs {
    #[arg(long, conflicts_with = "data", required_unless_present = "data")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "label")]
    pub label: String,
}

/// One instance, or every row of a CSV.
#[derive(Debug, Args)]
pub struct InputArgs {
    /// Inline JSON (`[..]` or `{"values": [..]}`) or a path to a JSON file.
    #[arg(long, conflicts_with = "data", required_unless_present = "data")]
    pub instance: Option<String>,
    /// CSV of instances; the label column, if present, is ignored.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "label")]
    pub label: String,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub delta0: Option<f64>,
    #[arg(long)]
    pub growth: Option<f64>,
    #[arg(long)]
    pub max_delta: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Features that may not change, by name or index.
    #[arg(long, value_delimiter = ',')]
    pub freeze: Vec<String>,
    /// Let the search box leave the training ranges.
    #[arg(long)]
    pub extrapolate: bool,
}

impl SearchArgs {
    pub fn request(&self) -> CounterfactualRequest {
        CounterfactualRequest {
            instance: None,
            delta0: self.delta0,
            growth: self.growth,
            frozen: (!self.freeze.is_empty())
                .then(|| self.freeze.iter().map(|s| FeatureRef::parse(s)).collect()),
            max_delta: self.max_delta,
            epsilon_fraction: self.epsilon,
            extrapolate: self.extrapolate.then_some(true),
        }
    }
}

#[derive(Debug, Args)]
pub struct BackgroundArgs {
    /// CSV whose rows serve as Shapley background (usually the training split).
    #[arg(long)]
    pub background: Option<PathBuf>,
    #[arg(long, default_value = "label")]
    pub background_label: String,
    /// Keep a seeded random subset of this many background rows.
    #[arg(long)]
    pub background_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub background_seed: u64,
}

impl BackgroundArgs {
    pub fn load(&self) -> Result<Option<Vec<Vec<f64>>>> {
        let Some(path) = &self.background else {
            return Ok(None);
        };
        let d = load_rows(path, &self.background_label)?;
        Ok(Some(match self.background_size {
            Some(n) => subsample(&d, n, self.background_seed),
            None => d,
        }))
    }
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportCnfArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub instance: String,
    #[arg(long)]
    pub delta: f64,
    #[arg(long, value_delimiter = ',')]
    pub freeze: Vec<String>,
    #[arg(long)]
    pub extrapolate: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SatArgs {
    #[arg(long)]
    pub cnf: PathBuf,
    #[arg(long)]
    pub max_conflicts: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AttributeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub background: BackgroundArgs,
    /// shapley-exact, shapley-mc or lime
    #[arg(long, default_value = "shapley-mc")]
    pub method: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub permutations: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub kernel_width: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StabilityArgs {
    /// JSON array of attribution results.
    #[arg(long)]
    pub attributions: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Labelled test CSV with class ids as labels.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "label")]
    pub label: String,
    #[command(flatten)]
    pub search: SearchArgs,
    /// Saved attributions, one per test row, to attach to the points.
    #[arg(long)]
    pub attributions: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the raw percent-change samples as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub background: BackgroundArgs,
    /// Labelled test CSV backing `GET /report`.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, default_value = "label")]
    pub label: String,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Concurrent solver jobs.
    #[arg(long)]
    pub max_concurrent: Option<usize>,
    /// Per-request compute limit in seconds.
    #[arg(long, default_value_t = 30)]
    pub timeout_secs: u64,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => train(a),
        Command::Summary(a) => summary(a),
        Command::Predict(a) => predict(a),
        Command::ExportCnf(a) => export_cnf(a),
        Command::Sat(a) => sat(a),
        Command::Explain(a) => explain(a),
        Command::Attribute(a) => attribute(a),
        Command::Stability(a) => stability(a),
        Command::Report(a) => report(a),
        Command::Serve(a) => serve(a),
    }
}

fn write_out(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = io::stdout().lock();
            match writeln!(stdout, "{}", text.trim_end()) {
                Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
                r => Ok(r?),
            }
        }
    }
}

fn write_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    write_out(out, &(serde_json::to_string_pretty(value)? + "\n"))
}

pub fn load_model(path: &Path) -> Result<Forest> {
    Forest::load(path).with_context(|| format!("loading model {}", path.display()))
}

/// Feature rows of a CSV, dropping the label column when it exists.
pub fn load_rows(path: &Path, label: &str) -> Result<Vec<Vec<f64>>> {
    load_feature_rows(path, label).with_context(|| format!("loading {}", path.display()))
}

/// Labelled data whose class ids are written as `0..n_classes`.
pub fn load_labelled(path: &Path, label: &str, n_classes: usize) -> Result<Dataset> {
    let classes: Vec<String> = (0..n_classes).map(|c| c.to_string()).collect();
    load_csv_with_classes(path, label, &classes)
        .with_context(|| format!("loading {} (labels must be class ids)", path.display()))
}

pub fn parse_instance(arg: &str) -> Result<Instance> {
    let text = if arg.trim_start().starts_with(['[', '{']) {
        arg.to_string()
    } else {
        fs::read_to_string(arg).with_context(|| format!("reading instance file {arg}"))?
    };
    serde_json::from_str(&text).context("parsing instance JSON")
}

impl InputArgs {
    fn instances(&self) -> Result<Either> {
        match (&self.instance, &self.data) {
            (Some(i), _) => Ok(Either::One(parse_instance(i)?)),
            (None, Some(p)) => Ok(Either::Many(load_rows(p, &self.label)?)),
            (None, None) => bail!("pass --instance or --data"),
        }
    }
}

enum Either {
    One(Instance),
    Many(Vec<Vec<f64>>),
}

fn relabel(d: Dataset) -> Dataset {
    Dataset {
        class_names: (0..d.class_names.len()).map(|c| c.to_string()).collect(),
        label_column: "label".into(),
        ..d
    }
}

#[derive(Serialize)]
struct TrainSummary {
    n_train: usize,
    n_test: usize,
    train_accuracy: f64,
    test_accuracy: f64,
    /// Original label for each class id.
    classes: Vec<String>,
}

fn train(a: TrainArgs) -> Result<()> {
    let data = load_csv(&a.data, &a.label)?;
    if !(a.split > 0.0 && a.split < 1.0) {
        bail!("--split must lie strictly between 0 and 1");
    }
    let (train, test) = split(&data, a.split, a.seed);
    let cfg = TrainConfig {
        n_trees: a.trees,
        max_depth: a.depth,
        bootstrap: !a.no_bootstrap,
        features_per_split: a.features_per_split,
        seed: a.seed,
        min_samples_leaf: a.min_samples_leaf,
    };
    let forest = train_forest(&train, &cfg)?;
    forest.save(&a.out)?;
    let summary = TrainSummary {
        n_train: train.n_samples(),
        n_test: test.n_samples(),
        train_accuracy: accuracy(&forest, &train),
        test_accuracy: accuracy(&forest, &test),
        classes: data.class_names.clone(),
    };
    if let Some(p) = &a.train_out {
        relabel(train).save_csv(p)?;
    }
    if let Some(p) = &a.test_out {
        relabel(test).save_csv(p)?;
    }
    write_json(None, &summary)
}

fn summary(a: SummaryArgs) -> Result<()> {
    if let Some(m) = &a.model {
        let engine = Engine::new(load_model(m)?, None);
        return write_json(None, &engine.summary());
    }
    let path = a.data.as_ref().expect("clap requires --model or --data");
    let d = load_csv(path, &a.label)?;
    write_json(None, &dataset_summary(&d))
}

fn predict(a: PredictArgs) -> Result<()> {
    let engine = Engine::new(load_model(&a.model)?, None);
    match a.input.instances()? {
        Either::One(instance) => write_json(
            a.out.as_deref(),
            &engine.predict(&PredictRequest { instance })?,
        ),
        Either::Many(rows) => {
            let out = rows
                .into_iter()
                .map(|r| {
                    engine.predict(&PredictRequest {
                        instance: Instance::new(r)?,
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            write_json(a.out.as_deref(), &out)
        }
    }
}

fn export_cnf(a: ExportCnfArgs) -> Result<()> {
    let forest = load_model(&a.model)?;
    let engine = Engine::new(forest, None);
    let instance = parse_instance(&a.instance)?;
    let q = engine.query(&CounterfactualRequest {
        instance: Some(instance.clone()),
        frozen: Some(a.freeze.iter().map(|s| FeatureRef::parse(s)).collect()),
        ..Default::default()
    })?;
    let forest = engine.forest();
    let bx = NeighborhoodBox::new(
        forest,
        &instance,
        a.delta,
        &q.frozen_features,
        a.extrapolate,
    )?;
    let cnf = encode(
        forest,
        &extract_thresholds(forest),
        &bx,
        forest.predict(instance.values()),
    )?;
    write_out(a.out.as_deref(), &cnf.to_dimacs())
}

fn sat(a: SatArgs) -> Result<()> {
    let text =
        fs::read_to_string(&a.cnf).with_context(|| format!("reading {}", a.cnf.display()))?;
    let cnf = parse_dimacs(&text)?;
    let budget = SolveBudget {
        max_conflicts: a.max_conflicts,
        deadline: None,
    };
    let text = match solve_with_budget(&cnf, budget)?.status {
        SolveStatus::Unsat => "s UNSATISFIABLE".to_string(),
        SolveStatus::Sat(assignment) => {
            let lits: Vec<String> = assignment
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let l = i as i64 + 1;
                    (if v { l } else { -l }).to_string()
                })
                .collect();
            format!("s SATISFIABLE\nv {} 0", lits.join(" "))
        }
    };
    write_out(None, &text)
}

#[derive(Serialize)]
struct BatchItem<T> {
    index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<forestsat::ApiError>,
}

fn explain(a: ExplainArgs) -> Result<()> {
    let engine = Engine::new(load_model(&a.model)?, None);
    let mut req = a.search.request();
    match a.input.instances()? {
        Either::One(instance) => {
            req.instance = Some(instance);
            write_json(a.out.as_deref(), &engine.counterfactual(&req, None)?)
        }
        Either::Many(rows) => {
            let items: Vec<BatchItem<_>> = engine
                .counterfactual_rows(&rows, &req)
                .into_iter()
                .enumerate()
                .map(|(index, r)| match r {
                    Ok(r) => BatchItem {
                        index,
                        result: Some(r),
                        error: None,
                    },
                    Err(e) => BatchItem {
                        index,
                        result: None,
                        error: Some(e.into()),
                    },
                })
                .collect();
            let failed = items.iter().filter(|i| i.error.is_some()).count();
            if failed > 0 {
                tracing::warn!("{failed} of {} rows have no counterfactual", items.len());
            }
            write_json(a.out.as_deref(), &items)
        }
    }
}

fn attribute(a: AttributeArgs) -> Result<()> {
    let engine = Engine::new(load_model(&a.model)?, a.background.load()?);
    let req = AttributionRequest {
        instance: None,
        method: a.method.parse::<MethodName>()?,
        seed: a.seed,
        n_permutations: a.permutations,
        n_samples: a.samples,
        kernel_width: a.kernel_width,
    };
    match a.input.instances()? {
        Either::One(instance) => {
            let req = AttributionRequest {
                instance: Some(instance),
                ..req
            };
            write_json(a.out.as_deref(), &engine.attribution(&req, 0)?)
        }
        Either::Many(rows) => write_json(a.out.as_deref(), &engine.attribute_rows(&rows, &req)?),
    }
}

fn stability(a: StabilityArgs) -> Result<()> {
    let text = fs::read_to_string(&a.attributions)?;
    let results: Vec<AttributionResult> =
        serde_json::from_str(&text).context("parsing attributions")?;
    let curves = rank_stability_curves(&results);
    let mut out = String::from("feature,n,probability\n");
    let m = curves.len();
    for f in 0..m {
        for (n, row) in curves.iter().enumerate() {
            out.push_str(&format!("{f},{},{:?}\n", n + 1, row[f]));
        }
    }
    write_out(a.out.as_deref(), &out)
}

fn report(a: ReportArgs) -> Result<()> {
    let engine = Engine::new(load_model(&a.model)?, None);
    let test = load_labelled(&a.data, &a.label, engine.forest().n_classes())?;
    let attributions: Option<Vec<AttributionResult>> = match &a.attributions {
        Some(p) => Some(serde_json::from_str(&fs::read_to_string(p)?)?),
        None => None,
    };
    let report = engine.report(&test, &a.search.request(), attributions.as_deref())?;
    for w in &report.warnings {
        tracing::warn!("{w}");
    }
    eprintln!(
        "accuracy {:.4}; {} misclassified, {} correct",
        report.accuracy, report.misclassified.n_points, report.correct.n_points
    );
    if let Some(p) = &a.csv {
        fs::write(p, report.samples_csv())?;
    }
    write_json(a.out.as_deref(), &report)
}

fn serve(a: ServeArgs) -> Result<()> {
    let forest = load_model(&a.model)?;
    let test = match &a.test {
        Some(p) => Some(load_labelled(p, &a.label, forest.n_classes())?),
        None => None,
    };
    let engine = Engine::new(forest, a.background.load()?);
    let max_concurrent = a
        .max_concurrent
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let state = server::AppState::new(
        engine,
        test,
        max_concurrent,
        Duration::from_secs(a.timeout_secs),
    );
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    rt.block_on(server::serve(Arc::new(state), a.addr))
}
