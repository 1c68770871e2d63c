//! `mgtd`: train, score, predict and evaluate machine-generated text detectors.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use mgtd::candace::{self, CandaceConfig, CandaceModel, Pooling};
use mgtd::corpus::{load_csv, load_predictions, write_predictions, Dataset, Label};
use mgtd::eval::{confusion, metrics, percent, render_table, MetricsReport};
use mgtd::pipeline::{detect_model_kind, ModelKind, SvmPipeline};
use mgtd::scorer::{
    extract_corpus, read_features, write_features, CausalScorer, FeatureMatrix, NgramLmConfig, NgramScorer, Tokenizer,
};
use mgtd::svm::SvmConfig;
use mgtd::synthetic::{SyntheticConfig, SyntheticCorpus};
use mgtd::textfeat::DEFAULT_MAX_FEATURES;

#[derive(Parser)]
#[command(name = "mgtd", version, about = "Machine-generated text detection")]
struct Cli {
    /// Seed for every stochastic component.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,

    /// Directory used for model files when no explicit path is given.
    #[arg(long, global = true, env = "MGTD_MODEL_DIR", default_value = ".")]
    model_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit TF-IDF features and a linear SVM on a labeled CSV.
    TrainSvm(TrainSvmArgs),
    /// Fit an n-gram language model used as a causal scorer.
    FitScorer(FitScorerArgs),
    /// Write per-token features for every document of a CSV.
    ExtractFeatures(ExtractArgs),
    /// Train the Transformer classifier on extracted features.
    TrainCandace(TrainCandaceArgs),
    /// Label documents with a trained model (type read from the model file).
    Predict(PredictArgs),
    /// Score a predictions file against gold labels.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic human-vs-machine corpus with its two generators.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainSvmArgs {
    #[arg(long)]
    train: PathBuf,
    /// Defaults to `<model-dir>/svm.json`.
    #[arg(long)]
    model_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    c: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_FEATURES)]
    max_features: usize,
    #[arg(long, default_value_t = 5000)]
    max_iter: usize,
}

#[derive(Args)]
struct FitScorerArgs {
    /// CSV files whose `text` column trains the model.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// CSV files defining the shared vocabulary (defaults to the inputs).
    /// Scorers combined in one feature file must be built from the same list.
    #[arg(long, num_args = 1..)]
    vocab_from: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Identifier recorded in feature files (defaults to the output file stem).
    #[arg(long)]
    id: Option<String>,
    #[arg(long, default_value_t = 2)]
    context_len: usize,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    input: PathBuf,
    /// Scorer model files, in column order; repeat for an ensemble.
    #[arg(long = "scorer", required = true)]
    scorers: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PoolingArg {
    Mean,
    Max,
}

#[derive(Args)]
struct TrainCandaceArgs {
    #[arg(long)]
    train_features: PathBuf,
    #[arg(long)]
    dev_features: PathBuf,
    /// Labeled CSVs covering every document id in both feature files.
    #[arg(long, required = true, num_args = 1..)]
    labels: Vec<PathBuf>,
    /// Defaults to `<model-dir>/candace.json`.
    #[arg(long)]
    model_out: Option<PathBuf>,
    /// Per-epoch metric log; defaults to the model path with `.metrics.jsonl`.
    #[arg(long)]
    metrics_log: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 64)]
    d_model: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 128)]
    ffn_dim: usize,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
    #[arg(long, default_value_t = 0.01)]
    weight_decay: f64,
    #[arg(long, value_enum, default_value_t = PoolingArg::Mean)]
    pooling: PoolingArg,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// A CSV with `id,text`, or for the Transformer model a feature file.
    #[arg(long)]
    input: PathBuf,
    /// Scorers used to featurize a CSV input for the Transformer model.
    #[arg(long = "scorer")]
    scorers: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    predictions: PathBuf,
    /// Labeled CSV with `id` and `label` columns.
    #[arg(long)]
    gold: PathBuf,
    /// Row name in the rendered table.
    #[arg(long, default_value = "system")]
    system: String,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 400)]
    train_per_class: usize,
    #[arg(long, default_value_t = 100)]
    dev_per_class: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    let model_dir = cli.model_dir;
    match cli.command {
        Command::TrainSvm(args) => train_svm(args, &model_dir),
        Command::FitScorer(args) => fit_scorer(args),
        Command::ExtractFeatures(args) => extract_features(args),
        Command::TrainCandace(args) => train_candace(args, &model_dir, seed),
        Command::Predict(args) => predict(args),
        Command::Evaluate(args) => evaluate(args),
        Command::Synth(args) => synth(args, seed),
    }
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("input file not found: {}", path.display());
    }
    Ok(())
}

fn require_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            bail!("output directory does not exist: {}", dir.display())
        }
        _ => Ok(()),
    }
}

fn load_labeled(path: &Path) -> Result<Dataset> {
    load_csv(path, true).with_context(|| format!("reading {}", path.display()))
}

fn load_scorers(paths: &[PathBuf]) -> Result<Vec<NgramScorer>> {
    paths
        .iter()
        .map(|p| match detect_model_kind(p)? {
            ModelKind::Ngram => NgramScorer::load(p).with_context(|| format!("loading scorer {}", p.display())),
            _ => bail!("{} is not a scorer model", p.display()),
        })
        .collect()
}

fn featurize(scorers: &[NgramScorer], texts: &[&str]) -> Result<Vec<FeatureMatrix>> {
    let refs: Vec<&dyn CausalScorer> = scorers.iter().map(|s| s as &dyn CausalScorer).collect();
    Ok(extract_corpus(&refs, texts)?)
}

fn print_metrics(name: &str, report: &MetricsReport) {
    println!(
        "accuracy {}  f1 {}  precision {}  recall {}",
        percent(report.accuracy),
        percent(report.f1),
        percent(report.precision),
        percent(report.recall)
    );
    print!("{}", render_table(&[(name.to_string(), *report)]));
}

fn train_svm(args: TrainSvmArgs, model_dir: &Path) -> Result<()> {
    let model_out = args.model_out.unwrap_or_else(|| model_dir.join("svm.json"));
    require_file(&args.train)?;
    require_parent(&model_out)?;

    let train = load_labeled(&args.train)?;
    let cfg = SvmConfig { c: args.c, max_iter: args.max_iter, ..SvmConfig::default() };
    let pipeline = SvmPipeline::fit(&train, args.max_features, &cfg)?;
    pipeline.save(&model_out)?;
    info!("saved {}", model_out.display());

    let pred = pipeline.predict_all(train.texts());
    print_metrics("TF-IDF + SVM (train)", &metrics(&confusion(&pred, &train.labels()?)?));
    Ok(())
}

fn fit_scorer(args: FitScorerArgs) -> Result<()> {
    for p in args.input.iter().chain(&args.vocab_from) {
        require_file(p)?;
    }
    require_parent(&args.out)?;

    let read_texts = |paths: &[PathBuf]| -> Result<Vec<String>> {
        let mut texts = Vec::new();
        for p in paths {
            let ds = load_csv(p, false).with_context(|| format!("reading {}", p.display()))?;
            texts.extend(ds.texts().map(str::to_string));
        }
        Ok(texts)
    };
    let training = read_texts(&args.input)?;
    let vocab_texts = if args.vocab_from.is_empty() { training.clone() } else { read_texts(&args.vocab_from)? };
    let tokenizer = Tokenizer::build(vocab_texts.iter().map(String::as_str));
    let id = match args.id {
        Some(id) => id,
        None => args
            .out
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| anyhow!("cannot derive a scorer id from {}", args.out.display()))?,
    };
    let cfg = NgramLmConfig { context_len: args.context_len, smoothing_alpha: args.alpha };
    let scorer = NgramScorer::fit_texts(id, tokenizer, training.iter().map(String::as_str), cfg)?;
    scorer.save(&args.out)?;
    info!("saved scorer {} ({} tokens)", args.out.display(), scorer.tokenizer().vocab_size());
    Ok(())
}

fn extract_features(args: ExtractArgs) -> Result<()> {
    require_file(&args.input)?;
    for p in &args.scorers {
        require_file(p)?;
    }
    require_parent(&args.out)?;

    let data = load_csv(&args.input, false).with_context(|| format!("reading {}", args.input.display()))?;
    let scorers = load_scorers(&args.scorers)?;
    let texts: Vec<&str> = data.texts().collect();
    let features = featurize(&scorers, &texts)?;
    write_features(&args.out, data.documents().iter().map(|d| d.id.as_str()).zip(&features))?;
    info!(
        "wrote {} records with {} columns per token to {}",
        features.len(),
        3 * scorers.len(),
        args.out.display()
    );
    Ok(())
}

fn attach_labels(records: Vec<(String, FeatureMatrix)>, labels: &HashMap<String, Label>, source: &Path) -> Result<Vec<(FeatureMatrix, Label)>> {
    records
        .into_iter()
        .map(|(id, fm)| match labels.get(&id) {
            Some(&label) => Ok((fm, label)),
            None => bail!("{}: no label for document `{id}`", source.display()),
        })
        .collect()
}

fn train_candace(args: TrainCandaceArgs, model_dir: &Path, seed: u64) -> Result<()> {
    let model_out = args.model_out.clone().unwrap_or_else(|| model_dir.join("candace.json"));
    let log_path = args.metrics_log.clone().unwrap_or_else(|| model_out.with_extension("metrics.jsonl"));
    require_file(&args.train_features)?;
    require_file(&args.dev_features)?;
    for p in &args.labels {
        require_file(p)?;
    }
    require_parent(&model_out)?;
    require_parent(&log_path)?;

    let mut labels = HashMap::new();
    for p in &args.labels {
        for doc in load_labeled(p)?.documents() {
            labels.insert(doc.id.clone(), doc.label.expect("labeled dataset"));
        }
    }
    let train = attach_labels(read_features(&args.train_features)?, &labels, &args.train_features)?;
    let dev = attach_labels(read_features(&args.dev_features)?, &labels, &args.dev_features)?;
    let width = train.first().map(|(fm, _)| fm.n_cols()).ok_or_else(|| anyhow!("training feature file is empty"))?;

    let cfg = CandaceConfig {
        d_model: args.d_model,
        n_heads: args.heads,
        n_layers: args.layers,
        ffn_dim: args.ffn_dim,
        dropout: args.dropout,
        pooling: match args.pooling {
            PoolingArg::Mean => Pooling::Mean,
            PoolingArg::Max => Pooling::Max,
        },
        lr: args.lr,
        weight_decay: args.weight_decay,
        batch_size: args.batch_size,
        epochs: args.epochs,
        seed,
        ..CandaceConfig::new(width)
    };
    let outcome = candace::train(&train, &dev, &cfg)?;
    outcome.model.save(&model_out)?;

    let mut log = fs::File::create(&log_path)?;
    for record in &outcome.history {
        writeln!(log, "{}", serde_json::to_string(record)?)?;
        info!(
            "epoch {} train_loss {:.6} dev_accuracy {}",
            record.epoch,
            record.train_loss,
            percent(record.dev_accuracy)
        );
    }
    let best = &outcome.history[outcome.best_epoch - 1];
    println!("best epoch {} dev accuracy {} dev f1 {}", outcome.best_epoch, percent(best.dev_accuracy), percent(best.dev_f1));
    info!("saved {} and {}", model_out.display(), log_path.display());
    Ok(())
}

fn predict(args: PredictArgs) -> Result<()> {
    require_file(&args.model)?;
    require_file(&args.input)?;
    for p in &args.scorers {
        require_file(p)?;
    }
    require_parent(&args.out)?;

    let predictions: Vec<(String, Label)> = match detect_model_kind(&args.model)? {
        ModelKind::TfidfSvm => {
            let pipeline = SvmPipeline::load(&args.model)?;
            let data = load_csv(&args.input, false)?;
            let labels = pipeline.predict_all(data.texts());
            data.documents().iter().map(|d| d.id.clone()).zip(labels).collect()
        }
        ModelKind::Candace => {
            let model = CandaceModel::load(&args.model)?;
            let records = if args.scorers.is_empty() {
                read_features(&args.input)
                    .with_context(|| format!("{} is not a feature file; pass --scorer to featurize a CSV", args.input.display()))?
            } else {
                let data = load_csv(&args.input, false)?;
                let scorers = load_scorers(&args.scorers)?;
                let texts: Vec<&str> = data.texts().collect();
                let features = featurize(&scorers, &texts)?;
                data.documents().iter().map(|d| d.id.clone()).zip(features).collect()
            };
            let expected = model.config().input_dim;
            if let Some((id, fm)) = records.iter().find(|(_, fm)| fm.n_cols() != expected) {
                bail!("document `{id}` has {} features per token but the model expects {expected}", fm.n_cols());
            }
            let matrices: Vec<&FeatureMatrix> = records.iter().map(|(_, fm)| fm).collect();
            let labels = model.predict_all(&matrices)?;
            records.into_iter().map(|(id, _)| id).zip(labels).collect()
        }
        ModelKind::Ngram => bail!("{} is a scorer, not a classifier", args.model.display()),
    };
    write_predictions(&args.out, predictions.iter().map(|(id, l)| (id.as_str(), *l)))?;
    info!("wrote {} predictions to {}", predictions.len(), args.out.display());
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    require_file(&args.predictions)?;
    require_file(&args.gold)?;

    let predicted = load_predictions(&args.predictions)?;
    let gold = load_labeled(&args.gold)?;
    if predicted.len() != gold.len() {
        bail!("{} predictions for {} gold documents", predicted.len(), gold.len());
    }
    let by_id: HashMap<&str, Label> = predicted.iter().map(|(id, l)| (id.as_str(), *l)).collect();
    let mut pred = Vec::with_capacity(gold.len());
    for doc in gold.documents() {
        match by_id.get(doc.id.as_str()) {
            Some(&l) => pred.push(l),
            None => bail!("no prediction for gold document `{}`", doc.id),
        }
    }
    let report = metrics(&confusion(&pred, &gold.labels()?)?);
    print_metrics(&args.system, &report);
    Ok(())
}

fn synth(args: SynthArgs, seed: u64) -> Result<()> {
    if !args.out_dir.is_dir() {
        fs::create_dir_all(&args.out_dir)?;
    }
    let cfg = SyntheticConfig {
        seed,
        train_per_class: args.train_per_class,
        dev_per_class: args.dev_per_class,
        ..SyntheticConfig::default()
    };
    let corpus = SyntheticCorpus::generate(&cfg)?;
    corpus.train.write_csv(args.out_dir.join("train.csv"))?;
    corpus.dev.write_csv(args.out_dir.join("dev.csv"))?;
    corpus.lm_a.save(args.out_dir.join("scorer-a.json"))?;
    corpus.lm_b.save(args.out_dir.join("scorer-b.json"))?;
    println!(
        "wrote train.csv ({} docs), dev.csv ({} docs), scorer-a.json, scorer-b.json to {}",
        corpus.train.len(),
        corpus.dev.len(),
        args.out_dir.display()
    );
    Ok(())
}
