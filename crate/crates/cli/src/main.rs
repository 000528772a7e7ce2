use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use ekicl_core::annotator::{categorize_spans, category_stats_csv, Lexicons};
use ekicl_core::assessor::{accuracy, train, Checkpoint, Hyper};
use ekicl_core::chat::{extractor_input_json, load_corpus_with, ParseOptions};
use ekicl_core::decomposer::{profile_csv_rows, PROFILE_CSV_HEADER};
use ekicl_core::embedding::{attach, embed_synthetic, read_ingest, write_ingest, EmbeddedTranscript};
use ekicl_core::ensemble::{evaluate, metrics_csv, PredictionRecord};
use ekicl_core::fixture::{split, synthetic_corpus, FixtureConfig};
use ekicl_core::gateway::{Backend, Gateway, GatewayConfig};
use ekicl_core::harness::{
    prepare, read_predictions, run_ablation, run_baseline, run_label_sweep, run_predictions, sweep_plot_csv,
    write_predictions, Baseline, PredictConfig, Prepared, StrategyKind,
};
use ekicl_core::prompting::{bundled_label_pairs, label_sweep_pairs, ConfigClass, LabelPair};
use ekicl_core::retrieval::{top_k, trace_rows, TRACE_CSV_HEADER};
use log::{info, warn};
use serde::Deserialize;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Dementia screening from picture descriptions with explicit-knowledge
/// in-context learning.
#[derive(Parser, Debug)]
#[command(name = "ekicl", version)]
struct Cli {
    /// TOML key-value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// http, mock-echo, mock-threshold or mock-fixed:<word>.
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Output file; standard output when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build an ingest JSONL file from .cha transcripts or the synthetic fixture.
    Ingest(IngestArgs),
    /// Train the assessor and write a checkpoint.
    TrainSlm {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Mean parsing-category frequencies as CSV.
    Stats {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, default_value = "corpus")]
        dataset: String,
    },
    /// Contribution profiles and feature scores as CSV.
    Score {
        #[command(flatten)]
        pipe: PipelineArgs,
    },
    /// Retrieval trace for every evaluation query.
    Retrieve {
        #[command(flatten)]
        pipe: PipelineArgs,
        #[arg(long, default_value_t = 3)]
        k: usize,
    },
    /// Predict the evaluation split; writes predictions JSONL.
    Predict {
        #[command(flatten)]
        pipe: PipelineArgs,
    },
    /// Metrics CSV from a predictions JSONL file.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, default_value = "predictions")]
        name: String,
    },
    /// Ablation table: full and three reduced modes.
    Ablate {
        #[command(flatten)]
        pipe: PipelineArgs,
    },
    /// Repeat prediction for every label-word pair.
    SweepLabels {
        #[command(flatten)]
        pipe: PipelineArgs,
        /// CSV `config_class,ad_word,hc_word`; bundled 30 pairs when omitted.
        #[arg(long)]
        pairs: Option<PathBuf>,
        /// Also write plot data here.
        #[arg(long)]
        plot_out: Option<PathBuf>,
    },
    /// Prompting baselines: vanilla, semantic, logits, ensemble or all.
    Baseline {
        #[command(flatten)]
        pipe: PipelineArgs,
        #[arg(long, default_value = "all")]
        kind: String,
        #[arg(long, default_value_t = 1)]
        shots: usize,
    },
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Join extractor output with the parsed corpus.
    #[arg(long, conflicts_with = "synthetic_dim")]
    embeddings: Option<PathBuf>,
    /// Embed tokens with the deterministic synthetic generator instead.
    #[arg(long)]
    synthetic_dim: Option<usize>,
    /// Write the extractor input JSON here as well.
    #[arg(long)]
    export_corpus: Option<PathBuf>,
    /// Hold out every fifth transcript into this file; `--out` gets the rest.
    #[arg(long)]
    eval_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SourceArgs {
    /// Directory of .cha files.
    #[arg(long, required_unless_present_any = ["fixture", "data"])]
    chat_dir: Option<PathBuf>,
    #[arg(long, requires = "chat_dir")]
    manifest: Option<PathBuf>,
    /// Keep investigator utterances too.
    #[arg(long)]
    with_interviewer: bool,
    /// Generate this many synthetic transcripts instead.
    #[arg(long, conflicts_with = "chat_dir")]
    fixture: Option<usize>,
    /// Read an existing ingest JSONL file.
    #[arg(long, conflicts_with_all = ["chat_dir", "fixture"])]
    data: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    eval: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
}

/// Keys accepted in the `--config` file. Command-line flags win.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    backend: Option<String>,
    base_url: Option<String>,
    api_key_env_var: Option<String>,
    model_name: Option<String>,
    temperature: Option<f64>,
    max_tokens: Option<u32>,
    timeout_ms: Option<u64>,
    max_retries: Option<u32>,
    max_in_flight: Option<usize>,
    backoff_base_ms: Option<u64>,
    strategy: Option<String>,
    lambda1: Option<f64>,
    lambda2: Option<f64>,
    learners: Option<usize>,
    shots: Option<usize>,
    use_confidence: Option<bool>,
    use_features: Option<bool>,
    ad_word: Option<String>,
    hc_word: Option<String>,
    threshold: Option<f64>,
    balanced: Option<bool>,
    lexicon_dir: Option<PathBuf>,
    lr: Option<f64>,
    epochs: Option<usize>,
    batch: Option<usize>,
    temp: Option<f64>,
    hidden: Option<usize>,
    dim: Option<usize>,
}

/// A failure with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn usage(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 1, error: error.into() }
}

fn data(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, error: error.into() }
}

impl From<ekicl_core::Error> for Failure {
    fn from(e: ekicl_core::Error) -> Self {
        let code = match &e {
            ekicl_core::Error::Gateway(_) => 3,
            ekicl_core::Error::Config(_) => 1,
            _ => 2,
        };
        Failure { code, error: e.into() }
    }
}

type Run<T = ()> = Result<T, Failure>;

struct Ctx {
    file: FileConfig,
    seed: u64,
    backend: Option<String>,
    out: Option<PathBuf>,
}

impl Ctx {
    fn lexicons(&self) -> Run<Lexicons> {
        match &self.file.lexicon_dir {
            Some(dir) => Ok(Lexicons::load_dir(dir)?),
            None => Ok(Lexicons::default()),
        }
    }

    fn hyper(&self) -> Hyper {
        let d = Hyper::default();
        let f = &self.file;
        Hyper {
            lr: f.lr.unwrap_or(d.lr),
            epochs: f.epochs.unwrap_or(d.epochs),
            batch: f.batch.unwrap_or(d.batch),
            temp: f.temp.unwrap_or(d.temp),
            seed: self.seed,
            hidden: f.hidden.unwrap_or(d.hidden),
        }
    }

    fn gateway(&self) -> Run<Gateway> {
        let f = &self.file;
        let d = GatewayConfig::default();
        let backend = match self.backend.as_deref().or(f.backend.as_deref()) {
            Some(b) => b.parse::<Backend>().map_err(usage)?,
            None => d.backend.clone(),
        };
        let cfg = GatewayConfig {
            backend,
            base_url: f.base_url.clone().unwrap_or(d.base_url),
            api_key_env_var: f.api_key_env_var.clone().unwrap_or(d.api_key_env_var),
            model_name: f.model_name.clone().unwrap_or(d.model_name),
            temperature: f.temperature.unwrap_or(d.temperature),
            max_tokens: f.max_tokens.unwrap_or(d.max_tokens),
            timeout_ms: f.timeout_ms.unwrap_or(d.timeout_ms),
            max_retries: f.max_retries.unwrap_or(d.max_retries),
            max_in_flight: f.max_in_flight.unwrap_or(d.max_in_flight),
            backoff_base_ms: f.backoff_base_ms.unwrap_or(d.backoff_base_ms),
            seed: self.seed,
        };
        Gateway::new(cfg).map_err(usage)
    }

    fn predict_config(&self) -> Run<PredictConfig> {
        let f = &self.file;
        let d = PredictConfig::default();
        let label_pair = match (&f.ad_word, &f.hc_word) {
            (None, None) => d.label_pair.clone(),
            (Some(a), Some(h)) => LabelPair::new(a, h, ConfigClass::Custom)?,
            _ => return Err(usage(anyhow::anyhow!("ad_word and hc_word must be given together"))),
        };
        let strategy = match &f.strategy {
            Some(s) => s.parse::<StrategyKind>()?,
            None => d.strategy,
        };
        Ok(PredictConfig {
            strategy,
            lambda: (f.lambda1.unwrap_or(d.lambda.0), f.lambda2.unwrap_or(d.lambda.1)),
            learners: f.learners.unwrap_or(d.learners),
            shots: f.shots.unwrap_or(d.shots),
            use_confidence: f.use_confidence.unwrap_or(d.use_confidence),
            use_features: f.use_features.unwrap_or(d.use_features),
            label_pair,
            seed: self.seed,
            threshold: f.threshold.unwrap_or(d.threshold),
            balanced: f.balanced.unwrap_or(d.balanced),
        })
    }

    fn writer(&self) -> Run<Box<dyn Write>> {
        open_out(self.out.as_deref())
    }

    fn emit(&self, text: &str) -> Run {
        let mut w = self.writer()?;
        w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(data)
    }
}

fn open_out(path: Option<&Path>) -> Run<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            let f = File::create(p).with_context(|| format!("cannot create {}", p.display())).map_err(data)?;
            Box::new(BufWriter::new(f))
        }
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn load_source(src: &SourceArgs, ctx: &Ctx) -> Run<Vec<EmbeddedTranscript>> {
    let dim = ctx.file.dim.unwrap_or(16);
    if let Some(n) = src.fixture {
        return Ok(synthetic_corpus(&FixtureConfig {
            transcripts: n,
            dim,
            seed: ctx.seed,
            ..FixtureConfig::default()
        }));
    }
    if let Some(path) = &src.data {
        return Ok(read_ingest(path)?);
    }
    let corpus = load_chat(src)?;
    Ok(embed_synthetic(&corpus, dim, ctx.seed))
}

fn load_chat(src: &SourceArgs) -> Run<Vec<ekicl_core::chat::Transcript>> {
    let dir = src.chat_dir.as_deref().ok_or_else(|| usage(anyhow::anyhow!("--chat-dir is required")))?;
    let opts = if src.with_interviewer {
        ParseOptions::with_interviewer()
    } else {
        ParseOptions::default()
    };
    let corpus = load_corpus_with(dir, src.manifest.as_deref(), &opts)?;
    for w in &corpus.warnings {
        warn!("{w}");
    }
    Ok(corpus.transcripts)
}

fn ingest(args: &IngestArgs, ctx: &Ctx) -> Run {
    let records = if args.source.chat_dir.is_some() {
        let corpus = load_chat(&args.source)?;
        if let Some(path) = &args.export_corpus {
            std::fs::write(path, extractor_input_json(&corpus))
                .with_context(|| format!("cannot write {}", path.display()))
                .map_err(data)?;
        }
        match (&args.embeddings, args.synthetic_dim) {
            (Some(path), _) => attach(&corpus, read_ingest(path)?)?,
            (None, Some(dim)) => embed_synthetic(&corpus, dim, ctx.seed),
            (None, None) if args.export_corpus.is_some() => return Ok(()),
            (None, None) => return Err(usage(anyhow::anyhow!("give --embeddings, --synthetic-dim or --export-corpus"))),
        }
    } else {
        load_source(&args.source, ctx)?
    };
    match &args.eval_out {
        Some(path) => {
            let (train, eval) = split(records, 5);
            info!("{} training and {} evaluation transcripts", train.len(), eval.len());
            write_ingest(ctx.writer()?, &train)?;
            write_ingest(open_out(Some(path))?, &eval)?;
        }
        None => {
            info!("{} transcripts", records.len());
            write_ingest(ctx.writer()?, &records)?;
        }
    }
    Ok(())
}

fn train_slm(data_path: &Path, epochs: Option<usize>, ctx: &Ctx) -> Run {
    let corpus = read_ingest(data_path)?;
    let mut hyper = ctx.hyper();
    if let Some(e) = epochs {
        hyper.epochs = e;
    }
    let trained = train(&corpus, &hyper)?;
    let acc = accuracy(&corpus, &trained.params)?;
    eprintln!(
        "trained {} epochs, final loss {:.6}, train accuracy {:.2}%",
        hyper.epochs,
        trained.loss_trace.last().copied().unwrap_or(f64::NAN),
        100.0 * acc
    );
    let ckpt = Checkpoint {
        hyper,
        params: trained.params,
        loss_trace: trained.loss_trace,
    };
    let path = ctx.out.clone().unwrap_or_else(|| PathBuf::from("assessor.json"));
    ckpt.save(&path)?;
    eprintln!("checkpoint written to {}", path.display());
    Ok(())
}

fn stats(src: &SourceArgs, dataset: &str, ctx: &Ctx) -> Run {
    let lex = ctx.lexicons()?;
    let records = load_source(src, ctx)?;
    let cats = records
        .iter()
        .map(|t| categorize_spans(&t.tokens, t.pos_tags.as_deref(), &t.utterance_spans(), &lex))
        .collect::<ekicl_core::Result<Vec<_>>>()?;
    ctx.emit(&category_stats_csv(dataset, &cats, true))
}

fn prepared(pipe: &PipelineArgs, ctx: &Ctx) -> Run<Prepared> {
    let train = read_ingest(&pipe.train)?;
    let eval = read_ingest(&pipe.eval)?;
    let ckpt = Checkpoint::load(&pipe.checkpoint)?;
    Ok(prepare(&train, &eval, &ckpt.params, &ctx.lexicons()?)?)
}

/// Transport failures only abort the run when no learner call succeeded.
fn check_transport(records: &[PredictionRecord]) -> Run {
    let total: usize = records.iter().map(|r| r.learners.len()).sum();
    let failed: usize = records.iter().flat_map(|r| &r.learners).filter(|l| l.error.is_some()).count();
    if failed > 0 && failed == total {
        return Err(Failure {
            code: 3,
            error: anyhow::anyhow!("all {total} learner requests failed"),
        });
    }
    if failed > 0 {
        warn!("{failed} of {total} learner requests failed and were counted as abstentions");
    }
    Ok(())
}

fn run(cli: Cli) -> Run {
    let file = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read {}", path.display()))
                .map_err(usage)?;
            toml::from_str(&text).with_context(|| format!("invalid config {}", path.display())).map_err(usage)?
        }
        None => FileConfig::default(),
    };
    let ctx = Ctx {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        backend: cli.backend.clone(),
        out: cli.out.clone(),
        file,
    };

    match &cli.command {
        Command::Ingest(args) => ingest(args, &ctx),
        Command::TrainSlm { data, epochs } => train_slm(data, *epochs, &ctx),
        Command::Stats { source, dataset } => stats(source, dataset, &ctx),
        Command::Score { pipe } => {
            let prep = prepared(pipe, &ctx)?;
            let mut out = format!("{PROFILE_CSV_HEADER}\n");
            for s in prep.train.iter().chain(&prep.eval) {
                for row in profile_csv_rows(&s.id, &s.profile, s.s_feat) {
                    out.push_str(&row);
                    out.push('\n');
                }
            }
            ctx.emit(&out)
        }
        Command::Retrieve { pipe, k } => {
            let prep = prepared(pipe, &ctx)?;
            let cfg = ctx.predict_config()?;
            let mut out = format!("{TRACE_CSV_HEADER}\n");
            for q in &prep.eval {
                let ranked = top_k(q, &prep.train, *k, cfg.strategy_for(&q.id), cfg.balanced)?;
                for row in trace_rows(&q.id, &ranked) {
                    out.push_str(&row);
                    out.push('\n');
                }
            }
            ctx.emit(&out)
        }
        Command::Predict { pipe } => {
            let prep = prepared(pipe, &ctx)?;
            let records = run_predictions(&prep.eval, &prep.train, &ctx.predict_config()?, &ctx.gateway()?)?;
            check_transport(&records)?;
            let mut w = ctx.writer()?;
            write_predictions(&mut w, &records)?;
            w.flush().map_err(data)
        }
        Command::Evaluate { predictions, name } => {
            let f = File::open(predictions)
                .with_context(|| format!("cannot open {}", predictions.display()))
                .map_err(data)?;
            let records = read_predictions(BufReader::new(f))?;
            ctx.emit(&metrics_csv(&[(name.clone(), evaluate(&records)?)]))
        }
        Command::Ablate { pipe } => {
            let prep = prepared(pipe, &ctx)?;
            let rows = run_ablation(&prep, &ctx.predict_config()?, &ctx.gateway()?)?;
            ctx.emit(&metrics_csv(&rows))
        }
        Command::SweepLabels { pipe, pairs, plot_out } => {
            let prep = prepared(pipe, &ctx)?;
            let pairs = match pairs {
                Some(p) => label_sweep_pairs(p)?,
                None => bundled_label_pairs(),
            };
            let rows = run_label_sweep(&prep, &pairs, &ctx.predict_config()?, &ctx.gateway()?)?;
            if let Some(path) = plot_out {
                std::fs::write(path, sweep_plot_csv(&pairs, &rows))
                    .with_context(|| format!("cannot write {}", path.display()))
                    .map_err(data)?;
            }
            ctx.emit(&metrics_csv(&rows))
        }
        Command::Baseline { pipe, kind, shots } => {
            let kinds: Vec<Baseline> = if kind == "all" {
                Baseline::ALL.to_vec()
            } else {
                vec![kind.parse::<Baseline>()?]
            };
            let prep = prepared(pipe, &ctx)?;
            let (cfg, gw) = (ctx.predict_config()?, ctx.gateway()?);
            let mut rows = Vec::new();
            for b in kinds {
                let (records, m) = run_baseline(&prep, b, *shots, &cfg, &gw)?;
                check_transport(&records)?;
                rows.push((b.name().to_string(), m));
            }
            ctx.emit(&metrics_csv(&rows))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
