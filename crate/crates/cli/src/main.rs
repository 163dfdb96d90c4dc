mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use conretrieve::llm::DEFAULT_TOKEN_ENV;
use conretrieve::Error;

#[derive(Parser, Debug)]
#[command(name = "conretrieve", version, about = "Summary-keyed exemplar retrieval for few-shot dialogue state tracking")]
struct Cli {
    /// Worker threads for summarization, scoring and evaluation
    #[arg(long, global = true, default_value_t = 4, display_order = 100)]
    jobs: usize,

    /// Log more (-v info, -vv debug)
    #[arg(short, long, global = true, action = ArgAction::Count, display_order = 101)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic annotated corpus
    Synth(SynthArgs),
    /// Fill the summary cache for every user turn of a corpus
    Summarize(SummarizeArgs),
    /// Train the conversation encoder on cached summaries
    Train(TrainArgs),
    /// Build a support index from a corpus and its summaries
    Index(IndexArgs),
    /// Print the top-k exemplars for conversations as JSON lines
    Retrieve(RetrieveArgs),
    /// Run the few-shot state-tracking evaluation
    Eval(EvalArgs),
    /// Dump per-token relevance weights as JSON
    Inspect(InspectArgs),
}

fn existing(s: &str) -> Result<PathBuf, String> {
    let path = PathBuf::from(s);
    if path.exists() {
        Ok(path)
    } else {
        Err(format!("{s} does not exist"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    Mock,
    Remote,
}

#[derive(Args, Debug)]
pub struct BackendArgs {
    #[arg(long, value_enum, default_value_t = Backend::Mock)]
    pub backend: Backend,

    /// Chat-completion URL (remote backend)
    #[arg(long)]
    pub endpoint: Option<String>,

    /// Model name sent to the endpoint (remote backend)
    #[arg(long)]
    pub model: Option<String>,

    /// Environment variable holding the bearer token
    #[arg(long, default_value = DEFAULT_TOKEN_ENV)]
    pub token_env: String,
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    /// Vocabulary JSON written by `train`
    #[arg(long, value_parser = existing)]
    pub vocab: PathBuf,

    /// Encoder checkpoint written by `train`
    #[arg(long, value_parser = existing)]
    pub checkpoint: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,

    /// Dialogues per template (five templates)
    #[arg(long, default_value_t = 20)]
    pub dialogues: usize,

    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct SummarizeArgs {
    #[arg(long, value_parser = existing)]
    pub corpus: PathBuf,

    /// Summary cache (JSON lines); created if missing
    #[arg(long)]
    pub cache: PathBuf,

    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_parser = existing)]
    pub corpus: PathBuf,

    #[arg(long, value_parser = existing)]
    pub cache: PathBuf,

    /// Where to write the vocabulary
    #[arg(long)]
    pub vocab: PathBuf,

    /// Where to write the checkpoint (rewritten after every epoch)
    #[arg(long)]
    pub checkpoint: PathBuf,

    /// Per-epoch loss and accuracy as JSON
    #[arg(long)]
    pub out: Option<PathBuf>,

    #[arg(long, default_value_t = 20)]
    pub epochs: usize,

    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,

    #[arg(long, default_value_t = 5e-5)]
    pub lr: f64,

    /// Softmax temperature of the contrastive loss
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,

    #[arg(long, default_value_t = 64)]
    pub dim: usize,

    #[arg(long, default_value_t = 2)]
    pub layers: usize,

    #[arg(long, default_value_t = 4)]
    pub heads: usize,

    #[arg(long, default_value_t = 128)]
    pub max_len: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Skip unit normalization of token vectors
    #[arg(long)]
    pub no_normalize: bool,

    /// Leave turns of this domain out of training
    #[arg(long)]
    pub holdout_domain: Option<String>,
}

#[derive(Args, Debug)]
pub struct IndexArgs {
    #[arg(long, value_parser = existing)]
    pub corpus: PathBuf,

    #[arg(long, value_parser = existing)]
    pub cache: PathBuf,

    #[command(flatten)]
    pub model: ModelArgs,

    /// Where to write the index
    #[arg(long)]
    pub index: PathBuf,

    /// Leave turns of this domain out of the index
    #[arg(long)]
    pub holdout_domain: Option<String>,

    /// Index a seeded sample of this many turns instead of all
    #[arg(long)]
    pub support_size: Option<usize>,

    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("queries").required(true).args(["query", "corpus"]))]
pub struct RetrieveArgs {
    #[arg(long, value_parser = existing)]
    pub index: PathBuf,

    #[command(flatten)]
    pub model: ModelArgs,

    /// Transcript to query, one `USER:`/`SYSTEM:` line per utterance
    #[arg(long)]
    pub query: Option<String>,

    /// Query with every user turn of this corpus
    #[arg(long, value_parser = existing)]
    pub corpus: Option<PathBuf>,

    #[arg(long, default_value_t = 5)]
    pub k: usize,

    /// Rerank a first-stage pool by latest-utterance similarity
    #[arg(long)]
    pub rerank: bool,

    /// First-stage pool size for --rerank
    #[arg(long, default_value_t = 20)]
    pub pool: usize,

    /// Write JSON lines here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Support pool (and test turns unless --test-corpus is given)
    #[arg(long, value_parser = existing)]
    pub corpus: PathBuf,

    /// Fixed test turns
    #[arg(long, value_parser = existing)]
    pub test_corpus: Option<PathBuf>,

    #[arg(long, value_parser = existing)]
    pub cache: PathBuf,

    #[command(flatten)]
    pub model: ModelArgs,

    #[command(flatten)]
    pub backend: BackendArgs,

    #[arg(long, visible_alias = "support-size", value_delimiter = ',', default_value = "100")]
    pub support_sizes: Vec<usize>,

    #[arg(long, visible_alias = "seed", value_delimiter = ',', default_value = "1,2,3")]
    pub seeds: Vec<u64>,

    #[arg(long, default_value_t = 5)]
    pub k: usize,

    /// Rerank a first-stage pool by latest-utterance similarity
    #[arg(long)]
    pub rerank: bool,

    /// First-stage pool size for --rerank
    #[arg(long, default_value_t = 20)]
    pub pool: usize,

    /// Support from other domains, test turns from this one
    #[arg(long)]
    pub holdout_domain: Option<String>,

    /// Where to write the full report JSON
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["query", "corpus"]))]
pub struct InspectArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    /// Transcript to inspect, one `USER:`/`SYSTEM:` line per utterance
    #[arg(long)]
    pub query: Option<String>,

    /// Corpus holding the example named by --example
    #[arg(long, requires = "example", value_parser = existing)]
    pub corpus: Option<PathBuf>,

    /// Example id, `<dialogue>#<turn>`
    #[arg(long)]
    pub example: Option<String>,

    /// Write the JSON here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) | Failure::Core(Error::Config(_)) => 2,
            Failure::Core(Error::FingerprintMismatch { .. } | Error::VersionMismatch { .. } | Error::BadMagic(_)) => 3,
            Failure::Core(_) => 1,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    if cli.jobs == 0 {
        return report(Failure::Usage("--jobs must be at least 1".into()));
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global() {
        log::warn!("could not size the worker pool: {e}");
    }
    let jobs = cli.jobs;
    let outcome = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Summarize(a) => commands::summarize(a, jobs),
        Command::Train(a) => commands::train(a),
        Command::Index(a) => commands::index(a),
        Command::Retrieve(a) => commands::retrieve(a),
        Command::Eval(a) => commands::eval(a, jobs),
        Command::Inspect(a) => commands::inspect(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(f),
    }
}

fn report(failure: Failure) -> ExitCode {
    match &failure {
        Failure::Usage(msg) => eprintln!("error: {msg}\n\nFor more information, try '--help'."),
        Failure::Core(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
        }
    }
    ExitCode::from(failure.code())
}
