use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use ragcheck_core::convert::{convert, SourceFormat};
use ragcheck_core::evaluation::{persist_run, write_dataset};
use ragcheck_core::format::round_sig;
use ragcheck_core::{
    check, evaluate, load_dataset, Aggregation, CheckInput, EvalReport, SelectionStrategy,
};

use crate::backend::BackendSpec;
use crate::config::{resolve, FileConfig, Overrides, PipelineOverrides, ServiceConfig};

/// Checks whether RAG answers are supported by their retrieved context.
#[derive(Debug, Parser)]
#[command(name = "ragcheck", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score one answer against its context and print the report.
    Check(CheckArgs),
    /// Score a labelled dataset and report AUC.
    Eval(EvalArgs),
    /// Export the ROC table of a stored evaluation report.
    Roc(RocArgs),
    /// Convert a benchmark file into the dataset format.
    Convert(ConvertArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct PipelineArgs {
    /// TOML config file.
    #[arg(long, env = "PROVENANCE_CONFIG")]
    pub config: Option<PathBuf>,
    /// Relevance backend: overlap, table:PATH, remote:URL or local:DIR.
    #[arg(long, env = "PROVENANCE_RELEVANCE")]
    pub relevance: Option<BackendSpec>,
    /// NLI backend: overlap, table:PATH, remote:URL or local:DIR.
    #[arg(long, env = "PROVENANCE_NLI")]
    pub nli: Option<BackendSpec>,
    /// Source selection: topk or topp.
    #[arg(long, env = "PROVENANCE_STRATEGY")]
    pub strategy: Option<SelectionStrategy>,
    #[arg(long, env = "PROVENANCE_TOP_K")]
    pub top_k: Option<usize>,
    #[arg(long, env = "PROVENANCE_TOP_P")]
    pub top_p: Option<f64>,
    /// min, max or weighted_average.
    #[arg(long, env = "PROVENANCE_AGGREGATION")]
    pub aggregation: Option<Aggregation>,
    #[arg(long, env = "PROVENANCE_THRESHOLD")]
    pub threshold: Option<f64>,
    #[arg(long, env = "PROVENANCE_TEMPORAL_ORDERING")]
    pub temporal_ordering: Option<bool>,
    /// Claim template containing `{query}` and `{answer}` once each.
    #[arg(long, env = "PROVENANCE_CLAIM_TEMPLATE")]
    pub claim_template: Option<String>,
}

impl PipelineArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            relevance: self.relevance.clone(),
            nli: self.nli.clone(),
            pipeline: PipelineOverrides {
                selection_strategy: self.strategy,
                top_k: self.top_k,
                top_p: self.top_p,
                aggregation: self.aggregation,
                threshold: self.threshold,
                temporal_ordering: self.temporal_ordering,
                claim_template: self.claim_template.clone(),
            },
            ..Default::default()
        }
    }

    fn resolve_with(&self, mut overrides: Overrides) -> Result<ServiceConfig, Failure> {
        let file = self
            .config
            .as_deref()
            .map(FileConfig::load)
            .transpose()
            .map_err(Failure::Usage)?;
        let base = self.overrides();
        overrides.relevance = base.relevance;
        overrides.nli = base.nli;
        overrides.pipeline = base.pipeline;
        resolve(file.as_ref(), &overrides).map_err(Failure::Usage)
    }

    pub fn resolve(&self) -> Result<ServiceConfig, Failure> {
        self.resolve_with(Overrides::default())
    }
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub query: String,
    #[arg(long)]
    pub answer: String,
    /// JSON file holding an array of context strings.
    #[arg(long)]
    pub sources: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// JSONL dataset, one record per line.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Directory that receives one subdirectory per run.
    #[arg(long, env = "PROVENANCE_RUNS_DIR", default_value = "runs")]
    pub runs_dir: PathBuf,
    /// Also write the ROC table here.
    #[arg(long)]
    pub roc_out: Option<PathBuf>,
    /// Split each source paragraph into sentences before scoring.
    #[arg(long)]
    pub expand_sentences: bool,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct RocArgs {
    /// `report.json` written by `eval`.
    #[arg(long)]
    pub report: PathBuf,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// halubench, halueval-qa or true-csv.
    #[arg(long)]
    pub format: SourceFormat,
    #[arg(long)]
    pub input: PathBuf,
    /// Output JSONL; standard output when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Query to attach when the corpus has none.
    #[arg(long)]
    pub query: Option<String>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "PROVENANCE_LISTEN")]
    pub listen: Option<SocketAddr>,
    #[arg(long, env = "PROVENANCE_REQUEST_TIMEOUT_MS")]
    pub request_timeout_ms: Option<u64>,
    #[arg(long, env = "PROVENANCE_MAX_CONCURRENT_REQUESTS")]
    pub max_concurrent_requests: Option<usize>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

impl ServeArgs {
    pub fn resolve(&self) -> Result<ServiceConfig, Failure> {
        self.pipeline.resolve_with(Overrides {
            listen: self.listen,
            request_timeout_ms: self.request_timeout_ms,
            max_concurrent_requests: self.max_concurrent_requests,
            ..Default::default()
        })
    }
}

/// A failed command, split by exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or configuration (exit 2).
    Usage(anyhow::Error),
    /// Anything that went wrong while running (exit 1).
    Pipeline(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            Self::Pipeline(_) => 1,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Self::Usage(e) | Self::Pipeline(e) => e,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Self::Pipeline(e)
    }
}

impl From<ragcheck_core::Error> for Failure {
    fn from(e: ragcheck_core::Error) -> Self {
        Self::Pipeline(e.into())
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), Failure> {
    match cli.command {
        Command::Check(args) => run_check(&args, out),
        Command::Eval(args) => run_eval(&args, out),
        Command::Roc(args) => run_roc(&args, out),
        Command::Convert(args) => run_convert(&args, out),
        Command::Serve(args) => {
            let config = args.resolve()?;
            crate::service::serve(&config).map_err(Failure::Pipeline)
        }
    }
}

fn read_sources(path: &PathBuf) -> anyhow::Result<Vec<String>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text)
        .with_context(|| format!("{}: expected a JSON array of strings", path.display()))
}

pub fn run_check(args: &CheckArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let config = args.pipeline.resolve()?;
    let sources = read_sources(&args.sources)?;
    let input = CheckInput::new(&args.query, &args.answer, &sources)?;
    let relevance = config.relevance.build()?;
    let nli = config.nli.build()?;
    let report = check(&*relevance, &*nli, &input, &config.pipeline)?;
    serde_json::to_writer_pretty(&mut *out, &report).context("writing report")?;
    writeln!(out).context("writing report")?;
    Ok(())
}

pub fn run_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let config = args.pipeline.resolve()?;
    let records = load_dataset(&args.dataset, args.expand_sentences)
        .with_context(|| format!("loading {}", args.dataset.display()))?;
    let relevance = config.relevance.build()?;
    let nli = config.nli.build()?;
    let report = evaluate(
        |input, cfg| check(&*relevance, &*nli, input, cfg),
        &records,
        &config.pipeline,
    )?;
    let dir = persist_run(&report, &records, &args.runs_dir)?;
    if let Some(path) = &args.roc_out {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        report.roc_curve()?.write_csv(BufWriter::new(file))?;
    }
    write_summary(&report, out).context("writing summary")?;
    writeln!(out, "run written to {}", dir.display()).context("writing summary")?;
    Ok(())
}

fn write_summary(report: &EvalReport, out: &mut dyn Write) -> std::io::Result<()> {
    let counts = format!(
        "{} records, {} excluded",
        report.n_records,
        report.excluded.len()
    );
    match report.auc {
        Some(auc) => writeln!(out, "AUC {} ({counts})", round_sig(auc))?,
        None => writeln!(
            out,
            "AUC undefined ({counts}): {}",
            report.auc_note.as_deref().unwrap_or("")
        )?,
    }
    if let (Some(t), Some(acc)) = (report.threshold, report.accuracy_at_threshold) {
        writeln!(
            out,
            "accuracy {} at threshold {}",
            round_sig(acc),
            round_sig(t)
        )?;
    }
    if let (Some(t), Some(acc)) = (report.tuned_threshold, report.accuracy_at_tuned_threshold) {
        writeln!(
            out,
            "accuracy {} at tuned threshold {}",
            round_sig(acc),
            round_sig(t)
        )?;
    }
    Ok(())
}

pub fn run_roc(args: &RocArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&args.report)
        .with_context(|| format!("reading {}", args.report.display()))?;
    let report: EvalReport = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", args.report.display()))?;
    let curve = report.roc_curve()?;
    match &args.out {
        Some(path) => {
            let file =
                File::create(path).with_context(|| format!("creating {}", path.display()))?;
            curve.write_csv(BufWriter::new(file))?;
        }
        None => curve.write_csv(out)?,
    }
    Ok(())
}

pub fn run_convert(args: &ConvertArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let file =
        File::open(&args.input).with_context(|| format!("opening {}", args.input.display()))?;
    let records = convert(args.format, BufReader::new(file), args.query.as_deref())
        .with_context(|| format!("converting {}", args.input.display()))?;
    if records.is_empty() {
        return Err(Failure::Pipeline(anyhow!(
            "{} holds no records",
            args.input.display()
        )));
    }
    match &args.output {
        Some(path) => {
            let file =
                File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_dataset(&records, BufWriter::new(file))?;
        }
        None => write_dataset(&records, out)?,
    }
    Ok(())
}
