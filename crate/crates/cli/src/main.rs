use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rayon::prelude::*;

use shiftpair::data::{build_fused, load_dataset, read_corpus, serialize_corpus, Corpus, Split};
use shiftpair::decode::{self, measure_complexity, Prediction, PredictionSet};
use shiftpair::error::{Error, Result};
use shiftpair::eval::{align, evaluate, Scores, Task};
use shiftpair::oracle::{self, sentence_coverage, CoverageCounts, CoverageReport};
use shiftpair::scorer::{Dims, ExternalVectors, Model, Vocab};
use shiftpair::synthetic::{default_synthetic, generate_long_sentence};
use shiftpair::trace::format_trace;
use shiftpair::training::{self, checkpoint, finite_diff_check, ContrastiveVariant, Example, LossWeights, TrainConfig};
use shiftpair::transition::{run_with_policy, step_bound, ScriptedPolicy};
use shiftpair::types::{Action, Polarity, Sentence};

#[derive(Parser)]
#[command(name = "shiftpair", version, about = "Transition-based aspect/opinion pair and triplet extraction")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Worker threads for per-sentence work in coverage, decode and eval.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read a corpus file and write it back in canonical form.
    Convert {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the oracle action sequence and sentiment labels of every sentence.
    Oracle {
        #[command(flatten)]
        input: DataArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report how many gold pairs the oracle recovers.
    Coverage {
        #[command(flatten)]
        input: DataArgs,
        /// Dataset directories whose splits are concatenated into a "fused" column.
        #[arg(long, num_args = 1..)]
        fused: Vec<PathBuf>,
    },
    /// Train a scorer on oracle traces and write a checkpoint.
    Train(TrainArgs),
    /// Decode a corpus with a trained checkpoint.
    Decode {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        input: DataArgs,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score predictions against gold annotations.
    Eval {
        /// Gold corpus file.
        #[arg(long)]
        gold: PathBuf,
        /// Predicted corpus file, as written by `decode`.
        #[arg(long, conflicts_with = "model", required_unless_present = "model")]
        pred: Option<PathBuf>,
        /// Decode the gold sentences with this checkpoint instead.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Print the derivation of one sentence.
    Trace {
        #[arg(long)]
        sentence: String,
        /// Gold triplets, e.g. "([0,1],[3],'POS')".
        #[arg(long, default_value = "")]
        gold: String,
        /// Replay these actions (symbols or ids, `RR:POS` sets a sentiment)
        /// instead of the oracle.
        #[arg(long)]
        actions: Option<String>,
    },
    /// Compare analytic gradients with central differences.
    Gradcheck {
        /// Corpus file; a synthetic corpus is used when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        sentences: usize,
        #[arg(long, default_value = "token=8,action=6,distance=4,hidden=8,sentiment_hidden=8,max_distance=5")]
        dims: String,
        #[arg(long, default_value_t = 1.0)]
        w1: f64,
        #[arg(long, default_value_t = 1.0)]
        w2: f64,
        #[arg(long)]
        symmetric: bool,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 13)]
        seed: u64,
    },
    /// Generate a synthetic corpus.
    Synth {
        #[arg(long, default_value_t = 200)]
        count: usize,
        /// Generate one long sentence per length in this list instead.
        #[arg(long, value_delimiter = ',')]
        lengths: Vec<usize>,
        #[arg(long, default_value_t = 13)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decode sentences of increasing length and fit actions against length.
    Bench {
        /// Checkpoint; a randomly initialized scorer is used when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "10,25,50,100,200,400")]
        lengths: Vec<usize>,
        #[arg(long, default_value = "")]
        dims: String,
        #[arg(long, default_value_t = 13)]
        seed: u64,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Corpus file or dataset directory; repeatable.
    #[arg(long, required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    /// Split to read from dataset directories.
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
}

#[derive(Args)]
struct TrainArgs {
    /// Training corpus file or dataset directory.
    #[arg(long, num_args = 1.., required_unless_present = "fused")]
    data: Vec<PathBuf>,
    /// Train on the concatenated train splits of these dataset directories.
    #[arg(long, num_args = 1..)]
    fused: Vec<PathBuf>,
    /// Development corpus file; defaults to the dev split of a dataset directory.
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 13)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    w1: f64,
    #[arg(long, default_value_t = 0.0)]
    w2: f64,
    #[arg(long)]
    symmetric: bool,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    /// Comma-separated overrides, e.g. "token=32,hidden=48".
    #[arg(long, default_value = "")]
    dims: String,
    /// Token vectors file; switches the scorer to external-vector mode.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Dev,
    Test,
    All,
}

impl SplitArg {
    fn splits(self) -> Vec<Split> {
        match self {
            SplitArg::Train => vec![Split::Train],
            SplitArg::Dev => vec![Split::Dev],
            SplitArg::Test => vec![Split::Test],
            SplitArg::All => Split::ALL.to_vec(),
        }
    }

    /// Split recorded for a plain corpus file.
    fn file_split(self) -> Split {
        match self {
            SplitArg::All => Split::Test,
            _ => self.splits()[0],
        }
    }
}

fn config_error(message: impl Into<String>) -> Error {
    Error::Config(message.into())
}

fn corpus_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data".to_string())
}

/// Dataset name and split of a corpus file: `14lap/test_triplets.txt` is the
/// test split of `14lap`; other files are named after themselves.
fn file_identity(path: &Path, fallback: Split) -> (String, Split) {
    let stem = corpus_name(path);
    let prefix = stem.split(['_', '.']).next().unwrap_or_default();
    match (prefix.parse::<Split>(), path.parent().and_then(Path::file_name)) {
        (Ok(split), Some(dir)) => (dir.to_string_lossy().into_owned(), split),
        (Ok(split), None) => (stem, split),
        (Err(_), _) => (stem, fallback),
    }
}

fn load_inputs(paths: &[PathBuf], split: SplitArg) -> Result<Vec<Corpus>> {
    let mut corpora = Vec::new();
    for path in paths {
        if path.is_dir() {
            let wanted = split.splits();
            let found: Vec<Corpus> = load_dataset(path)?
                .into_iter()
                .filter(|c| wanted.contains(&c.split))
                .collect();
            if found.is_empty() {
                return Err(config_error(format!("{} has no {:?} split", path.display(), split.splits())));
            }
            corpora.extend(found);
        } else {
            let (name, split) = file_identity(path, split.file_split());
            corpora.push(read_corpus(path, &name, split)?);
        }
    }
    Ok(corpora)
}

fn fused_corpora(dirs: &[PathBuf], splits: &[Split]) -> Result<Vec<Corpus>> {
    let mut datasets = Vec::new();
    for dir in dirs {
        datasets.push(load_dataset(dir)?);
    }
    let mut fused = Vec::new();
    for &split in splits {
        let parts: Vec<Corpus> = datasets
            .iter()
            .flatten()
            .filter(|c| c.split == split)
            .cloned()
            .collect();
        if !parts.is_empty() {
            fused.push(build_fused(&parts)?);
        }
    }
    Ok(fused)
}

fn parse_dims(spec: &str, base: Dims) -> Result<Dims> {
    let mut dims = base;
    for field in spec.split(',').map(str::trim).filter(|f| !f.is_empty()) {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| config_error(format!("dims field {field:?} is not key=value")))?;
        let value: usize = value
            .parse()
            .map_err(|_| config_error(format!("dims field {field:?} is not a number")))?;
        let slot = match key {
            "token" => &mut dims.token,
            "action" => &mut dims.action,
            "distance" => &mut dims.distance,
            "hidden" => &mut dims.hidden,
            "sentiment_hidden" => &mut dims.sentiment_hidden,
            "max_distance" => &mut dims.max_distance,
            other => return Err(config_error(format!("unknown dims field {other:?}"))),
        };
        *slot = value;
    }
    dims.validate()?;
    Ok(dims)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| config_error(format!("cannot start {jobs} workers: {e}")))
}

fn load_model(path: &Path, embeddings: Option<&Path>) -> Result<Model> {
    let loaded = checkpoint::load(path, None)?;
    match (embeddings, loaded.external) {
        (Some(file), _) => loaded.model.with_external(ExternalVectors::read(file)?),
        (None, true) => Err(config_error("checkpoint was trained on external vectors; pass --embeddings")),
        (None, false) => Ok(loaded.model),
    }
}

fn decode_parallel(model: &Model, sentences: &[Sentence], jobs: usize) -> Result<PredictionSet> {
    let predictions: Vec<Prediction> =
        pool(jobs)?.install(|| sentences.par_iter().map(|s| decode::decode(model, s)).collect::<Result<_>>())?;
    Ok(PredictionSet { predictions })
}

fn run_convert(data: &Path, out: Option<&Path>) -> Result<()> {
    let corpus = read_corpus(data, &corpus_name(data), Split::Train)?;
    emit(out, &serialize_corpus(&corpus))
}

fn run_oracle(input: &DataArgs, out: Option<&Path>) -> Result<()> {
    let mut text = String::new();
    for corpus in load_inputs(&input.data, input.split)? {
        for sentence in &corpus.sentences {
            let result = oracle::derive(sentence);
            if !result.unreachable.is_empty() {
                warn!("{}: {} gold triplets unreachable", sentence.id(), result.unreachable.len());
            }
            let actions: Vec<String> = result.actions.iter().map(|a| a.id().to_string()).collect();
            let labels: Vec<String> = result.sentiments().iter().map(|s| s.label().to_string()).collect();
            writeln!(text, "{}\t{}\t{}", sentence.id(), actions.join(" "), labels.join(" ")).unwrap();
        }
    }
    emit(out, &text)
}

fn add_coverage(report: &mut CoverageReport, corpus: &Corpus, counts: CoverageCounts) {
    if !report.datasets.contains(&corpus.name) {
        report.datasets.push(corpus.name.clone());
    }
    let per = report.cells.entry(corpus.name.clone()).or_default();
    per.entry(corpus.split.as_str().to_string()).or_default().add(counts);
    per.entry("total".to_string()).or_default().add(counts);
}

fn run_coverage(input: &DataArgs, fused: &[PathBuf], jobs: usize) -> Result<()> {
    let mut corpora = load_inputs(&input.data, input.split)?;
    corpora.extend(fused_corpora(fused, &input.split.splits())?);
    let workers = pool(jobs)?;
    let mut report = CoverageReport::default();
    for corpus in &corpora {
        let per_sentence: Vec<CoverageCounts> =
            workers.install(|| corpus.sentences.par_iter().map(sentence_coverage).collect());
        let mut counts = CoverageCounts::default();
        for c in per_sentence {
            counts.add(c);
        }
        add_coverage(&mut report, corpus, counts);
    }
    print!("{}\n{}", report.to_table(), report.to_key_values());
    Ok(())
}

fn run_train(args: &TrainArgs) -> Result<()> {
    let (train, dev) = if args.fused.is_empty() {
        if args.data.len() != 1 {
            return Err(config_error("train takes one --data; use --fused to combine datasets"));
        }
        let path = &args.data[0];
        if path.is_dir() {
            let all = load_dataset(path)?;
            let train = all
                .iter()
                .find(|c| c.split == Split::Train)
                .cloned()
                .ok_or_else(|| config_error(format!("{} has no train split", path.display())))?;
            (train, all.into_iter().find(|c| c.split == Split::Dev))
        } else {
            (read_corpus(path, &corpus_name(path), Split::Train)?, None)
        }
    } else {
        let mut fused = fused_corpora(&args.fused, &[Split::Train, Split::Dev])?.into_iter();
        let train = fused.next().filter(|c| c.split == Split::Train).ok_or(Error::EmptyCorpus)?;
        (train, fused.next())
    };
    let dev = match &args.dev {
        Some(path) => Some(read_corpus(path, &corpus_name(path), Split::Dev)?),
        None => dev,
    };

    let external = args.embeddings.as_deref().map(ExternalVectors::read).transpose()?;
    let mut base = Dims::default();
    if let Some(v) = &external {
        base.token = v.dim();
    }
    let dims = parse_dims(&args.dims, base)?;
    let mut model = Model::new(dims, Vocab::from_sentences(&train.sentences), args.seed)?;
    if let Some(v) = external {
        model = model.with_external(v)?;
    }

    let config = TrainConfig {
        learning_rate: args.lr,
        epochs: args.epochs,
        batch_size: args.batch,
        seed: args.seed,
        weights: LossWeights::new(args.w1, args.w2)?,
        variant: if args.symmetric { ContrastiveVariant::Symmetric } else { ContrastiveVariant::Column },
        ..TrainConfig::default()
    };
    info!("training on {} sentences ({} parameters)", train.len(), model.params.parameter_count());
    let fmt_f1 = |f: Option<f64>| f.map_or("-".to_string(), |v| format!("{v:.2}"));
    training::train_with(&mut model, &train, dev.as_ref(), &config, |m| {
        println!(
            "epoch={} loss={:.6} action_acc={:.2} dev_aope_f1={} dev_aste_f1={}",
            m.epoch,
            m.loss,
            m.action_accuracy,
            fmt_f1(m.dev_aope_f1),
            fmt_f1(m.dev_aste_f1)
        );
        std::ops::ControlFlow::Continue(())
    })?;
    checkpoint::save(&args.out, &model, args.seed)
}

fn run_decode(model: &Path, input: &DataArgs, embeddings: Option<&Path>, out: Option<&Path>, jobs: usize) -> Result<()> {
    let model = load_model(model, embeddings)?;
    let mut text = String::new();
    for corpus in load_inputs(&input.data, input.split)? {
        let predictions = decode_parallel(&model, &corpus.sentences, jobs)?;
        let annotated = Corpus::new(corpus.name.clone(), corpus.split, predictions.annotate(&corpus.sentences)?)?;
        text.push_str(&serialize_corpus(&annotated));
    }
    emit(out, &text)
}

fn scores_report(aope: Scores, aste: Scores) -> String {
    let mut out = format!("{:<6}{:>10}{:>10}{:>10}\n", "task", "precision", "recall", "f1");
    for (task, s) in [(Task::Aope, aope), (Task::Aste, aste)] {
        writeln!(out, "{:<6}{:>10.2}{:>10.2}{:>10.2}", task.name(), s.precision, s.recall, s.f1).unwrap();
    }
    out.push('\n');
    for (task, s) in [(Task::Aope, aope), (Task::Aste, aste)] {
        let name = task.name();
        writeln!(out, "eval.{name}.precision={:.2}", s.precision).unwrap();
        writeln!(out, "eval.{name}.recall={:.2}", s.recall).unwrap();
        writeln!(out, "eval.{name}.f1={:.2}", s.f1).unwrap();
    }
    out
}

fn run_eval(gold: &Path, pred: Option<&Path>, model: Option<&Path>, embeddings: Option<&Path>, jobs: usize) -> Result<()> {
    let gold = read_corpus(gold, &corpus_name(gold), Split::Test)?;
    let predictions = match (pred, model) {
        (Some(path), _) => align(&read_corpus(path, &corpus_name(path), Split::Test)?.sentences, &gold.sentences)?,
        (None, Some(model)) => {
            let model = load_model(model, embeddings)?;
            decode_parallel(&model, &gold.sentences, jobs)?.sentence_predictions()
        }
        (None, None) => return Err(config_error("eval needs --pred or --model")),
    };
    let aope = evaluate(&predictions, &gold.sentences, Task::Aope)?;
    let aste = evaluate(&predictions, &gold.sentences, Task::Aste)?;
    print!("{}", scores_report(aope, aste));
    Ok(())
}

fn parse_action(token: &str) -> Result<(Action, Polarity)> {
    let (name, sentiment) = match token.split_once(':') {
        Some((a, s)) => (a, Some(s)),
        None => (token, None),
    };
    let action = match name.parse::<usize>() {
        Ok(id) => Action::from_id(id).ok_or_else(|| config_error(format!("no action with id {id}")))?,
        Err(_) => name.parse().map_err(config_error)?,
    };
    let sentiment = match sentiment {
        Some(s) => s.to_ascii_uppercase().parse().map_err(config_error)?,
        None => Polarity::None,
    };
    Ok((action, sentiment))
}

fn run_trace(text: &str, gold: &str, actions: Option<&str>) -> Result<()> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let gold = gold.trim();
    let list = if gold.is_empty() || gold.starts_with('[') {
        format!("[{}]", gold.trim_start_matches('[').trim_end_matches(']'))
    } else {
        format!("[{gold}]")
    };
    let triplets = shiftpair::data::parse_triplets(&list, 1)?;
    let sentence = Sentence::new("0", &tokens, triplets)?;
    let trace = match actions {
        None => oracle::derive(&sentence).states,
        Some(script) => {
            let (actions, sentiments): (Vec<_>, Vec<_>) = script
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
                .map(parse_action)
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .unzip();
            let cap = actions.len().min(step_bound(sentence.len()));
            let mut policy = ScriptedPolicy::with_sentiments(actions, sentiments);
            run_with_policy(&sentence, &mut policy, cap)?.1
        }
    };
    print!("{}", format_trace(&sentence, &trace));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_gradcheck(
    data: Option<&Path>,
    count: usize,
    dims: &str,
    weights: LossWeights,
    symmetric: bool,
    step: f64,
    tolerance: f64,
    seed: u64,
) -> Result<bool> {
    let corpus = match data {
        Some(path) => read_corpus(path, &corpus_name(path), Split::Train)?,
        None => default_synthetic(seed, count.max(1)),
    };
    let sentences: Vec<Sentence> = corpus.sentences.into_iter().take(count.max(1)).collect();
    let model = Model::new(parse_dims(dims, Dims::default())?, Vocab::from_sentences(&sentences), seed)?;
    let examples: Vec<Example> = sentences.iter().map(|s| Example::new(&model, s)).collect();
    let refs: Vec<&Example> = examples.iter().collect();
    let objective = training::Objective {
        weights,
        variant: if symmetric { ContrastiveVariant::Symmetric } else { ContrastiveVariant::Column },
    };
    let report = finite_diff_check(&model.params, &refs, &objective, step, tolerance, seed)?;
    println!("{report}");
    Ok(report.passed())
}

fn run_synth(count: usize, lengths: &[usize], seed: u64, out: Option<&Path>) -> Result<()> {
    let corpus = if lengths.is_empty() {
        default_synthetic(seed, count)
    } else {
        let sentences = lengths
            .iter()
            .enumerate()
            .map(|(i, &n)| generate_long_sentence(seed.wrapping_add(i as u64), &format!("long-{i}"), n))
            .collect();
        Corpus::new("synthetic", Split::Test, sentences)?
    };
    emit(out, &serialize_corpus(&corpus))
}

fn run_bench(model: Option<&Path>, lengths: &[usize], dims: &str, seed: u64) -> Result<()> {
    let sentences: Vec<Sentence> = lengths
        .iter()
        .enumerate()
        .map(|(i, &n)| generate_long_sentence(seed.wrapping_add(i as u64), &format!("long-{i}"), n))
        .collect();
    let model = match model {
        Some(path) => load_model(path, None)?,
        None => Model::new(parse_dims(dims, Dims::default())?, Vocab::from_sentences(&sentences), seed)?,
    };
    print!("{}", measure_complexity(&model, &sentences)?.to_table());
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    let jobs = cli.jobs;
    match cli.command {
        Command::Convert { data, out } => run_convert(&data, out.as_deref())?,
        Command::Oracle { input, out } => run_oracle(&input, out.as_deref())?,
        Command::Coverage { input, fused } => run_coverage(&input, &fused, jobs)?,
        Command::Train(args) => run_train(&args)?,
        Command::Decode {
            model,
            input,
            embeddings,
            out,
        } => run_decode(&model, &input, embeddings.as_deref(), out.as_deref(), jobs)?,
        Command::Eval {
            gold,
            pred,
            model,
            embeddings,
        } => run_eval(&gold, pred.as_deref(), model.as_deref(), embeddings.as_deref(), jobs)?,
        Command::Trace {
            sentence,
            gold,
            actions,
        } => run_trace(&sentence, &gold, actions.as_deref())?,
        Command::Gradcheck {
            data,
            sentences,
            dims,
            w1,
            w2,
            symmetric,
            step,
            tolerance,
            seed,
        } => {
            let weights = LossWeights::new(w1, w2)?;
            if !run_gradcheck(data.as_deref(), sentences, &dims, weights, symmetric, step, tolerance, seed)? {
                eprintln!("GRADCHECK_FAILED");
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Synth {
            count,
            lengths,
            seed,
            out,
        } => run_synth(count, &lengths, seed, out.as_deref())?,
        Command::Bench {
            model,
            lengths,
            dims,
            seed,
        } => run_bench(model.as_deref(), &lengths, &dims, seed)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SHIFTPAIR_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}: {e}", e.code());
            ExitCode::FAILURE
        }
    }
}
