//! `cptree`: train, evaluate and check label-probability estimators.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error
//! (unreadable or malformed input, unknown labels, capacity, bad model file),
//! 3 a bound check failed.

use std::fs::{self, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use cptree::cpecoc::{tradeoff_curve, write_curve_tsv};
use cptree::eval::{self, Evaluator, Mode, DEFAULT_DELTA};
use cptree::features::{read_examples, ExampleReader, FeatureHasher, DEFAULT_BITS, DEFAULT_HASH_SEED};
use cptree::model_file;
use cptree::synth::{self, GroundTruth, LabelShape, SynthConfig};
use cptree::verify::{self, VerifyConfig};
use cptree::{Error, LearningRate, Method, Model, ModelConfig};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_VIOLATION: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "cptree", version, about = "Conditional label probability estimation in logarithmic time")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model on a file of examples and save it.
    Train(TrainArgs),
    /// Score a model on a file of examples.
    Eval(EvalArgs),
    /// Run the randomized bound suites.
    VerifyBounds(VerifyArgs),
    /// Generate a synthetic dataset with known label distributions.
    Synth(SynthArgs),
    /// Score the frequency table fitted on the test set itself.
    BestPossible(BestArgs),
}

#[derive(Args, Debug)]
struct ModelLocation {
    /// Model file; relative paths resolve against CPTREE_MODEL_DIR when set.
    #[arg(long, default_value = "model.cpt")]
    model: PathBuf,

    /// Default directory for model files.
    #[arg(long, env = "CPTREE_MODEL_DIR", hide_env_values = true)]
    model_dir: Option<PathBuf>,
}

impl ModelLocation {
    fn path(&self) -> PathBuf {
        match &self.model_dir {
            Some(dir) if self.model.is_relative() => dir.join(&self.model),
            _ => self.model.clone(),
        }
    }
}

#[derive(Args, Debug)]
struct HashArgs {
    /// Hashed feature space has 2^bits entries.
    #[arg(long, default_value_t = DEFAULT_BITS)]
    bits: u8,

    #[arg(long, default_value_t = DEFAULT_HASH_SEED)]
    hash_seed: u64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_parser = parse_method)]
    method: Method,

    /// Training examples, one `<label> <feature>[:<value>] ...` per line.
    #[arg(long)]
    train: PathBuf,

    #[command(flatten)]
    location: ModelLocation,

    #[command(flatten)]
    hash: HashArgs,

    /// Balance weight of the online objective (cpt-online only).
    #[arg(long)]
    alpha: Option<f64>,

    /// Branching factor (cpecoc only).
    #[arg(long)]
    k: Option<usize>,

    /// Label slots of a flat PECOC (pecoc only; default: labels in the training set).
    #[arg(long)]
    capacity: Option<usize>,

    #[arg(long, default_value_t = 0.1)]
    eta0: f64,

    #[arg(long, default_value_t = 0.0)]
    decay: f64,

    #[arg(long, default_value_t = 1)]
    passes: u32,

    /// Seed for the random tree's coin flips.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Print the summary as one JSON object.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Progressive,
    Holdout,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Examples to score.
    #[arg(long)]
    test: PathBuf,

    #[command(flatten)]
    location: ModelLocation,

    /// Progressive keeps training after scoring each example; holdout freezes the model.
    #[arg(long, value_enum, default_value = "progressive")]
    mode: ModeArg,

    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,

    /// Fail unless the model was trained with this method.
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,

    /// Append the report as a JSON line to this file.
    #[arg(long)]
    report: Option<PathBuf>,

    /// Print the report as one JSON object instead of a table.
    #[arg(long)]
    json: bool,

    /// Ground truth from `synth`; with --contexts, also reports the true regret.
    #[arg(long, requires = "contexts")]
    truth: Option<PathBuf>,

    /// Context id of every test line, from `synth`.
    #[arg(long, requires = "truth")]
    contexts: Option<PathBuf>,

    /// Save the model after progressive evaluation.
    #[arg(long)]
    save: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Instances per randomized suite.
    #[arg(long, default_value_t = 10_000)]
    trials: u64,

    /// Distinct labels streamed into each online tree.
    #[arg(long, default_value_t = 10_000)]
    depth_labels: usize,

    /// Also write the trade-off curve for this many labels (a power of two).
    #[arg(long)]
    curve: Option<usize>,

    /// Where to write the curve (default: standard output).
    #[arg(long, requires = "curve")]
    curve_out: Option<PathBuf>,

    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ShapeArg {
    OneHot,
    Uniform,
    Topical,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory for train.txt, test.txt, test.contexts and truth.jsonl.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1_000)]
    contexts: usize,
    #[arg(long, default_value_t = 10_000)]
    labels: usize,
    #[arg(long, default_value_t = 1_000_000)]
    examples: usize,
    #[arg(long, default_value_t = 0.1)]
    test_fraction: f64,
    #[arg(long, value_enum, default_value = "topical")]
    shape: ShapeArg,
    #[arg(long, default_value_t = 50)]
    topics: usize,
    #[arg(long, default_value_t = 3)]
    max_topics_per_context: usize,
    #[arg(long, default_value_t = 40)]
    words_per_topic: usize,
    #[arg(long, default_value_t = 12)]
    words_per_context: usize,
    #[arg(long, default_value_t = 0.6)]
    keep_probability: f64,
    #[arg(long, default_value_t = 10_000)]
    noise_vocabulary: usize,
    #[arg(long, default_value_t = 2)]
    noise_words: usize,
    #[arg(long, default_value_t = 1.0)]
    label_zipf: f64,
    #[arg(long, default_value_t = 0.0)]
    context_zipf: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct BestArgs {
    #[arg(long)]
    test: PathBuf,
    #[command(flatten)]
    hash: HashArgs,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    #[arg(long)]
    json: bool,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Exit code for an error raised anywhere below `main`.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config(_) | Error::Precondition(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            };
        }
        if cause.downcast_ref::<io::Error>().is_some() {
            return EXIT_DATA;
        }
    }
    EXIT_DATA
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Train(args) => train(args),
        Command::Eval(args) => evaluate(args),
        Command::VerifyBounds(args) => verify_bounds(args),
        Command::Synth(args) => synthesize(args),
        Command::BestPossible(args) => best_possible(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn print_rows(rows: &[(&str, String)]) {
    for (k, v) in rows {
        println!("{k:<24} {v}");
    }
}

fn train(args: TrainArgs) -> anyhow::Result<u8> {
    let config = ModelConfig {
        method: args.method,
        bits: args.hash.bits,
        hash_seed: args.hash.hash_seed,
        alpha: args.alpha,
        k: args.k,
        capacity: args.capacity,
        rate: LearningRate::new(args.eta0, args.decay)?,
        passes: args.passes,
        seed: args.seed,
    };
    config.validate()?;
    let examples = read_examples(&args.train, config.hasher()?).with_context(|| format!("reading {}", args.train.display()))?;
    let started = Instant::now();
    let model = Model::fit(config, &examples)?;
    let seconds = started.elapsed().as_secs_f64();
    let path = args.location.path();
    model_file::save(&model, &path).with_context(|| format!("writing {}", path.display()))?;

    let summary = model.summary();
    let processed = examples.len() as f64 * config.passes as f64;
    let per_second = if seconds > 0.0 { processed / seconds } else { f64::INFINITY };
    let per_example = if processed > 0.0 { summary.regressor_updates as f64 / processed } else { 0.0 };
    if args.json {
        let mut v = serde_json::to_value(&summary)?;
        v["examples"] = examples.len().into();
        v["seconds"] = seconds.into();
        v["examples_per_second"] = per_second.into();
        v["updates_per_example"] = per_example.into();
        v["model"] = path.display().to_string().into();
        println!("{v}");
    } else {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
        print_rows(&[
            ("method", summary.method.to_string()),
            ("examples", examples.len().to_string()),
            ("labels seen", summary.labels.to_string()),
            ("nodes", summary.nodes.to_string()),
            ("regressors", summary.regressors.to_string()),
            ("max depth", opt(summary.max_depth.map(|d| d.to_string()))),
            ("disagreements", opt(summary.disagreements.map(|d| d.to_string()))),
            ("code size", opt(summary.code_size.map(|d| d.to_string()))),
            ("regressor updates", summary.regressor_updates.to_string()),
            ("updates per example", format!("{per_example:.2}")),
            ("examples per second", format!("{per_second:.0}")),
            ("model file", path.display().to_string()),
        ]);
    }
    Ok(0)
}

fn read_contexts(path: &Path) -> anyhow::Result<Vec<u32>> {
    let file = fs::File::open(path).with_context(|| format!("reading {}", path.display()))?;
    BufReader::new(file)
        .lines()
        .enumerate()
        .map(|(i, line)| {
            let line = line?;
            line.trim().parse::<u32>().map_err(|e| anyhow!(Error::Parse { line: i + 1, message: e.to_string() }))
        })
        .collect()
}

fn evaluate(args: EvalArgs) -> anyhow::Result<u8> {
    let mode = match args.mode {
        ModeArg::Progressive => Mode::Progressive,
        ModeArg::Holdout => Mode::Holdout,
    };
    let mut evaluator = Evaluator::new(mode, args.delta)?;
    let path = args.location.path();
    let mut model = model_file::load(&path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(expected) = args.method {
        if expected != model.method() {
            return Err(anyhow!(Error::Format(format!("model was trained with {}, not {expected}", model.method()))));
        }
    }
    let hasher: FeatureHasher = model.config().hasher()?;
    let file = fs::File::open(&args.test).with_context(|| format!("reading {}", args.test.display()))?;
    let contexts = args.contexts.as_deref().map(read_contexts).transpose()?;
    let mut observations = Vec::new();
    for example in ExampleReader::new(BufReader::new(file), hasher) {
        let example = example.with_context(|| format!("reading {}", args.test.display()))?;
        if let Some(ids) = &contexts {
            let i = evaluator.count() as usize;
            let id = *ids.get(i).ok_or_else(|| anyhow!(Error::Format(format!("context file has no entry for example {}", i + 1))))?;
            observations.push((id, example.x.clone()));
        }
        evaluator.observe(&mut model, &example)?;
    }
    let report = evaluator.report(serde_json::to_value(model.config())?);
    let regret = match (&args.truth, contexts) {
        (Some(truth_path), Some(_)) if !observations.is_empty() => {
            let file = fs::File::open(truth_path).with_context(|| format!("reading {}", truth_path.display()))?;
            let truth = GroundTruth::read_jsonl(BufReader::new(file))?;
            Some(synth::regret(&truth, &observations, |x, y| model.predict(x, y))?)
        }
        _ => None,
    };
    let mut record = serde_json::to_value(&report)?;
    if let Some(r) = regret {
        record["true_regret"] = r.into();
    }
    if let Some(out) = &args.report {
        let mut file = OpenOptions::new().create(true).append(true).open(out).with_context(|| format!("writing {}", out.display()))?;
        writeln!(file, "{record}")?;
    }
    if args.json {
        println!("{record}");
    } else {
        print!("{}", report.to_table());
        if let Some(r) = regret {
            println!("{:<18} {r:.6}", "true regret");
        }
    }
    if let Some(save) = &args.save {
        model_file::save(&model, save).with_context(|| format!("writing {}", save.display()))?;
    }
    Ok(0)
}

fn verify_bounds(args: VerifyArgs) -> anyhow::Result<u8> {
    let config = VerifyConfig { seed: args.seed, trials: args.trials, depth_labels: args.depth_labels, ..VerifyConfig::default() };
    let report = verify::run_all(&config)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if args.json {
        println!("{}", serde_json::to_string(&report)?);
    } else {
        for s in &report.suites {
            let verdict = if s.passed() { "PASS" } else { "FAIL" };
            println!("{verdict} {} ({} trials, {} violations, worst ratio {:.6}, {:.2}s)", s.name, s.trials, s.violations, s.worst_ratio, s.seconds);
            for note in &s.notes {
                println!("     {note}");
            }
        }
    }
    if let Some(n) = args.curve {
        let rows = tradeoff_curve(n)?;
        match &args.curve_out {
            Some(path) => write_curve_tsv(&rows, fs::File::create(path).with_context(|| format!("writing {}", path.display()))?)?,
            None => write_curve_tsv(&rows, io::stdout().lock())?,
        }
    }
    Ok(if report.passed() { 0 } else { EXIT_VIOLATION })
}

fn synthesize(args: SynthArgs) -> anyhow::Result<u8> {
    let config = SynthConfig {
        contexts: args.contexts,
        labels: args.labels,
        examples: args.examples,
        test_fraction: args.test_fraction,
        shape: match args.shape {
            ShapeArg::OneHot => LabelShape::OneHot,
            ShapeArg::Uniform => LabelShape::Uniform,
            ShapeArg::Topical => LabelShape::Topical,
        },
        topics: args.topics,
        max_topics_per_context: args.max_topics_per_context,
        words_per_topic: args.words_per_topic,
        words_per_context: args.words_per_context,
        keep_probability: args.keep_probability,
        noise_vocabulary: args.noise_vocabulary,
        noise_words: args.noise_words,
        label_zipf: args.label_zipf,
        context_zipf: args.context_zipf,
        seed: args.seed,
    };
    let data = synth::generate(&config)?;
    data.write_to(&args.out).with_context(|| format!("writing {}", args.out.display()))?;
    print_rows(&[
        ("train examples", data.train.len().to_string()),
        ("test examples", data.test.len().to_string()),
        ("optimal loss", format!("{:.6}", data.truth.optimal_loss())),
        ("output", args.out.display().to_string()),
    ]);
    Ok(0)
}

fn best_possible(args: BestArgs) -> anyhow::Result<u8> {
    let hasher = FeatureHasher::new(args.hash.bits, args.hash.hash_seed)?;
    let test = read_examples(&args.test, hasher).with_context(|| format!("reading {}", args.test.display()))?;
    let report = eval::best_possible(&test, args.delta)?;
    if args.json {
        println!("{}", report.to_json_line());
    } else {
        print!("{}", report.to_table());
    }
    Ok(0)
}
