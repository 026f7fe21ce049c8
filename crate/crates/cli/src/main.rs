//! `mman`: generate a synthetic corpus, train, evaluate and score queries.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mman_core::eval::{render_records, render_text, run_ablation_suite};
use mman_core::tape::sigmoid;
use mman_core::text::{
    encode_queries, generate_synthetic, read_categories, read_queries, write_categories, write_queries,
    write_text_file, CategoryText, QueryRecord, SyntheticConfig,
};
use mman_core::{evaluate, CategorySet, Checkpoint, LabeledQuery, MmanModel, RunConfig, Variant, Vocab};

const TRAIN_FILE: &str = "train.txt";
const TEST_FILE: &str = "test.txt";
const CATEGORY_FILE: &str = "categories.txt";
const VOCAB_FILE: &str = "vocab.txt";
const GEN_CONFIG_FILE: &str = "gen.toml";

#[derive(Parser)]
#[command(name = "mman", version, about = "Multi-label query intent classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic long-tailed corpus.
    Gen(GenArgs),
    /// Train a model and write a checkpoint plus a loss log.
    Train(TrainArgs),
    /// Evaluate a checkpoint, or run the ablation suite.
    Eval(EvalArgs),
    /// Score one query against every category.
    Predict(PredictArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    categories: Option<usize>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    queries_per_category: Option<usize>,
    #[arg(long)]
    tail_exponent: Option<f64>,
    #[arg(long)]
    noise_rate: Option<f64>,
    #[arg(long)]
    multi_label_fraction: Option<f64>,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    min_query_len: Option<usize>,
    #[arg(long)]
    max_query_len: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

/// Dataset location. Individual files override the directory defaults.
#[derive(Args)]
struct DataArgs {
    /// Directory holding train.txt, test.txt, categories.txt and vocab.txt.
    #[arg(long, default_value = ".")]
    data: PathBuf,
    #[arg(long)]
    train_file: Option<PathBuf>,
    #[arg(long)]
    test_file: Option<PathBuf>,
    #[arg(long)]
    category_file: Option<PathBuf>,
    #[arg(long)]
    vocab_file: Option<PathBuf>,
}

impl DataArgs {
    fn path(&self, explicit: &Option<PathBuf>, name: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.data.join(name))
    }

    fn train_path(&self) -> PathBuf {
        self.path(&self.train_file, TRAIN_FILE)
    }

    fn test_path(&self) -> PathBuf {
        self.path(&self.test_file, TEST_FILE)
    }

    fn category_path(&self) -> PathBuf {
        self.path(&self.category_file, CATEGORY_FILE)
    }

    fn vocab_path(&self) -> PathBuf {
        self.path(&self.vocab_file, VOCAB_FILE)
    }
}

/// Every tunable; unset flags keep the value from `--config` or the default.
#[derive(Args, Default)]
struct ConfigArgs {
    /// TOML run config to start from.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    query_len: Option<usize>,
    #[arg(long)]
    category_len: Option<usize>,
    #[arg(long)]
    encoder_layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    ffn_width: Option<usize>,
    #[arg(long)]
    conv_blocks: Option<usize>,
    #[arg(long)]
    conv_filters: Option<usize>,
    /// full | no_self | no_char | no_semantic
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Data-parallel gradient workers; 1 is the determinism reference.
    #[arg(long)]
    workers: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                RunConfig::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag { cfg.$($field).+ = v; })*
            };
        }
        set! {
            threshold => threshold,
            dim => model.dim,
            query_len => model.query_len,
            category_len => model.category_len,
            encoder_layers => model.encoder_layers,
            heads => model.heads,
            ffn_width => model.ffn_width,
            conv_blocks => model.conv_blocks,
            conv_filters => model.conv_filters,
            variant => model.variant,
            epochs => train.epochs,
            batch_size => train.batch_size,
            lr => train.lr,
            seed => train.seed,
            workers => train.workers,
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Checkpoint to write.
    #[arg(long, default_value = "model.ckpt")]
    out: PathBuf,
    /// Per-epoch loss log; defaults to the checkpoint path with `.loss.tsv`.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Checkpoint to evaluate. Required unless `--ablation` is given.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Evaluate on the training file instead of the test file.
    #[arg(long)]
    on_train: bool,
    /// Train and evaluate every variant under one config.
    #[arg(long)]
    ablation: bool,
    /// Write the aligned text report here instead of standard output.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write `scope\tcategory\tmetric\tvalue` records here.
    #[arg(long)]
    records: Option<PathBuf>,
    /// Config for `--ablation`; with a checkpoint, only `--threshold` applies.
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "model.ckpt")]
    checkpoint: PathBuf,
    #[arg(long)]
    query: String,
    /// Overrides the threshold stored in the checkpoint.
    #[arg(long)]
    threshold: Option<f64>,
}

fn main() -> ExitCode {
    let result = match Cli::parse().command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Predict(a) => cmd_predict(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    let mut cfg = SyntheticConfig::default();
    macro_rules! set {
        ($($flag:ident => $field:ident),* $(,)?) => {
            $(if let Some(v) = a.$flag { cfg.$field = v; })*
        };
    }
    set! {
        categories => num_categories,
        vocab_size => vocab_size,
        queries_per_category => queries_per_category,
        tail_exponent => tail_exponent,
        noise_rate => noise_rate,
        multi_label_fraction => multi_label_fraction,
        test_fraction => test_fraction,
        min_query_len => min_query_len,
        max_query_len => max_query_len,
        seed => seed,
    }
    let data = generate_synthetic(&cfg)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_queries(&a.out.join(TRAIN_FILE), &data.train)?;
    write_queries(&a.out.join(TEST_FILE), &data.test)?;
    write_categories(&a.out.join(CATEGORY_FILE), &data.categories)?;
    data.vocab.save(&a.out.join(VOCAB_FILE))?;
    let toml = toml::to_string(&cfg).expect("synthetic config serializes");
    write_text_file(&a.out.join(GEN_CONFIG_FILE), &toml)?;
    println!(
        "wrote {} train / {} test queries over {} categories to {}",
        data.train.len(),
        data.test.len(),
        data.categories.len(),
        a.out.display()
    );
    Ok(())
}

struct Corpus {
    vocab: Vocab,
    texts: Vec<CategoryText>,
    cats: CategorySet,
}

/// Loads the vocabulary file, or builds one from the training queries and
/// category text when none exists.
fn load_corpus(d: &DataArgs, allow_build: bool) -> Result<Corpus> {
    let texts = read_categories(&d.category_path())?;
    let vocab_path = d.vocab_path();
    let vocab = if vocab_path.exists() || !allow_build {
        Vocab::load(&vocab_path)?
    } else {
        let train = read_queries(&d.train_path())?;
        let mut sources: Vec<&str> = train.iter().map(|q| q.text.as_str()).collect();
        for t in &texts {
            sources.push(&t.name);
            sources.extend(t.product_words.iter().map(String::as_str));
        }
        Vocab::from_texts(sources)
    };
    let cats = CategorySet::new(&texts, &vocab).with_context(|| format!("loading {}", d.category_path().display()))?;
    Ok(Corpus { vocab, texts, cats })
}

fn load_split(path: &Path, corpus: &Corpus, query_len: usize) -> Result<Vec<LabeledQuery>> {
    let records: Vec<QueryRecord> = read_queries(path)?;
    encode_queries(&records, &corpus.vocab, query_len, corpus.cats.len())
        .with_context(|| format!("{} does not fit the category file", path.display()))
}

fn commented(config: &RunConfig) -> String {
    config.to_toml().lines().map(|l| format!("#   {l}\n")).collect()
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let corpus = load_corpus(&a.data, true)?;
    let mut run = a.config.resolve()?;
    run.model.num_categories = corpus.cats.len();
    run.model.vocab_size = corpus.vocab.size();
    run.validate()?;
    let data = load_split(&a.data.train_path(), &corpus, run.model.query_len)?;

    let log_path = a.log.clone().unwrap_or_else(|| a.out.with_extension("loss.tsv"));
    let mut log = format!("# config:\n{}", commented(&run));
    let mut model = MmanModel::new(run.model.clone(), run.train.seed)?;
    let (adam, _) = mman_core::train::train(&mut model, &corpus.cats, &data, &run.train, None, |epoch, loss| {
        let line = format!("{epoch}\t{loss}");
        println!("{line}");
        let _ = writeln!(log, "{line}");
    })?;
    write_text_file(&log_path, &log)?;
    if !a.data.vocab_path().exists() {
        corpus.vocab.save(&a.data.vocab_path())?;
    }
    Checkpoint::capture(&model, &run, &corpus.vocab, &corpus.cats, Some(&adam)).save(&a.out)?;
    eprintln!(
        "checkpoint {} ({} parameters), loss log {}",
        a.out.display(),
        model.num_parameters(),
        log_path.display()
    );
    Ok(())
}

fn emit(path: &Option<PathBuf>, text: &str) -> Result<()> {
    match path {
        Some(p) => Ok(write_text_file(p, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    if a.ablation {
        return cmd_ablation(a);
    }
    let Some(ck_path) = &a.checkpoint else {
        bail!("--checkpoint is required unless --ablation is given");
    };
    let ck = Checkpoint::load(ck_path)?;
    let corpus = load_corpus(&a.data, false)?;
    ck.validate_against(&corpus.vocab, &corpus.cats)
        .with_context(|| format!("{} was trained on different data", ck_path.display()))?;
    let mut run = ck.meta.run.clone();
    if let Some(t) = a.config.threshold {
        run.threshold = t;
    }
    run.validate()?;
    let model = ck.to_model()?;
    let split = if a.on_train {
        a.data.train_path()
    } else {
        a.data.test_path()
    };
    let data = load_split(&split, &corpus, run.model.query_len)?;
    let report = evaluate(&model, &corpus.cats, &data, run.threshold)?;
    let names: Vec<String> = corpus.texts.iter().map(|t| t.name.clone()).collect();
    emit(&a.report, &render_text(&report, &run, &names))?;
    if let Some(p) = &a.records {
        write_text_file(p, &render_records(&report, &run))?;
    }
    Ok(())
}

fn cmd_ablation(a: &EvalArgs) -> Result<()> {
    let corpus = load_corpus(&a.data, true)?;
    let mut run = match &a.checkpoint {
        Some(p) => Checkpoint::load(p)?.meta.run,
        None => a.config.resolve()?,
    };
    run.model.num_categories = corpus.cats.len();
    run.model.vocab_size = corpus.vocab.size();
    run.validate()?;
    let train = load_split(&a.data.train_path(), &corpus, run.model.query_len)?;
    let test = load_split(&a.data.test_path(), &corpus, run.model.query_len)?;
    let table = run_ablation_suite(&run, &corpus.cats, &train, &test, |v, e, l| eprintln!("{v}\t{e}\t{l}"))?;
    let mut text = format!("# threshold: {}\n# config:\n{}\n", run.threshold, commented(&run));
    text.push_str(&table.render());
    emit(&a.report, &text)?;
    if let Some(p) = &a.records {
        write_text_file(p, &format!("# config:\n{}{}", commented(&run), table.render_records()))?;
    }
    Ok(())
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let corpus = load_corpus(&a.data, false)?;
    ck.validate_against(&corpus.vocab, &corpus.cats)
        .with_context(|| format!("{} was trained on different data", a.checkpoint.display()))?;
    let threshold = a.threshold.unwrap_or(ck.meta.run.threshold);
    if !(threshold > 0.0 && threshold < 1.0) {
        bail!("threshold {threshold} must lie in (0, 1)");
    }
    let model = ck.to_model()?;
    let query = mman_core::text::tokenize(&a.query, &corpus.vocab, model.config().query_len)?;
    let logits = model.predictor(&corpus.cats)?.logits(&query)?;
    let mut rows: Vec<(usize, f64)> = logits.iter().map(|&l| sigmoid(l)).enumerate().collect();
    rows.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    println!("# threshold: {threshold}");
    for (id, p) in rows {
        let mark = if p >= threshold { "*" } else { "" };
        println!("{id}\t{}\t{p:.6}\t{mark}", corpus.texts[id].name);
    }
    Ok(())
}
