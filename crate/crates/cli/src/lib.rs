//! Command-line front end for the `topparse` toolkit.
//!
//! Every subcommand accepts `--config <file.json>`; keys in the file use
//! the flag names with underscores, and flags given on the command line
//! override them. The resolved configuration is echoed to stderr.

pub mod commands;
pub mod config;
pub mod eval;
pub mod pipeline;

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use topparse::ensemble::Strategy;
use topparse::parser::{DEFAULT_FEATURE_MASK, DEFAULT_INIT_JITTER};

pub use pipeline::{run_pipeline, PipelineConfig, PipelineOutcome};

#[derive(Parser, Debug)]
#[command(
    name = "topparse",
    version,
    about = "Hierarchical intent-slot parsing toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Convert a TSV release file to the JSONL corpus format.
    Ingest(IngestArgs),
    /// Write a corpus sampled from the built-in synthetic grammar.
    Generate(GenerateArgs),
    /// Train one or more parsers with distinct seeds.
    TrainParser(TrainParserArgs),
    /// Decode a corpus to k-best hypothesis files.
    Parse(ParseArgs),
    /// Train an n-gram LM on serialized gold trees.
    TrainLm(TrainLmArgs),
    /// Train a pairwise re-ranker on hypothesis files with gold trees.
    TrainRanker(TrainRankerArgs),
    /// Combine the top hypotheses of several parsers.
    Ensemble(EnsembleArgs),
    /// Re-rank hypothesis files and write top-1 predictions.
    Rerank(RerankArgs),
    /// Exact-match and oracle accuracy against gold.
    Evaluate(EvaluateArgs),
    /// Error taxonomy counts, optionally compared against a second run.
    Analyze(AnalyzeArgs),
    /// Train, decode, re-rank, ensemble, evaluate and analyze in one run.
    Pipeline(PipelineConfig),
}

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_M: usize = 7;
pub const DEFAULT_EPOCHS: usize = 5;
pub const DEFAULT_TRAIN_BEAM: usize = 5;
pub const DEFAULT_MAX_DEPTH: usize = topparse::transitions::DEFAULT_MAX_DEPTH;
pub const DEFAULT_ORDER: usize = topparse::rerank::DEFAULT_ORDER;
pub const DEFAULT_TOP_K: usize = topparse::rerank::DEFAULT_NAIVE_TOP_K;
pub const DEFAULT_RANKER_LAMBDA: f64 = 0.01;
pub const DEFAULT_RANKER_EPOCHS: usize = 50;

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Tab-separated file: raw text, tokenized text, annotation.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Drop utterances whose top intent is IN:UNSUPPORTED.
    #[arg(long, action = clap::ArgAction::Set, default_value_t = true)]
    pub filter_unsupported: bool,
    /// Accept trees that violate intent/slot alternation.
    #[arg(long)]
    pub permissive: bool,
}

impl Default for IngestArgs {
    fn default() -> Self {
        IngestArgs {
            config: None,
            input: None,
            output: None,
            filter_unsupported: true,
            permissive: false,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Probability that a tree gets one slot relabeled at random.
    #[arg(long, default_value_t = 0.0)]
    pub label_noise: f64,
    #[arg(long, default_value = "syn")]
    pub prefix: String,
}

impl Default for GenerateArgs {
    fn default() -> Self {
        GenerateArgs {
            config: None,
            output: None,
            n: 2000,
            seed: 0,
            label_noise: 0.0,
            prefix: "syn".into(),
        }
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParserArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Directory for `parser-<i>.json`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Number of parsers.
    #[arg(long, default_value_t = DEFAULT_M)]
    pub m: usize,
    /// Run seed; per-parser seeds are derived from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Explicit per-parser seeds, overriding `m` and `seed`.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = DEFAULT_EPOCHS)]
    pub epochs: usize,
    /// Beam width of the early-update search during training.
    #[arg(long, default_value_t = DEFAULT_TRAIN_BEAM)]
    pub beam: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_DEPTH)]
    pub max_depth: usize,
    /// Per-epoch probability that a feature is frozen.
    #[arg(long, default_value_t = DEFAULT_FEATURE_MASK)]
    pub feature_mask: f64,
    /// Half-width of the uniform noise new weights start from.
    #[arg(long, default_value_t = DEFAULT_INIT_JITTER)]
    pub init_jitter: f64,
    /// Per-token vectors, one `{"id", "vectors"}` object per line.
    #[arg(long)]
    pub vectors: Option<PathBuf>,
}

impl Default for TrainParserArgs {
    fn default() -> Self {
        TrainParserArgs {
            config: None,
            train: None,
            out_dir: None,
            m: DEFAULT_M,
            seed: 0,
            seeds: Vec::new(),
            epochs: DEFAULT_EPOCHS,
            beam: DEFAULT_TRAIN_BEAM,
            max_depth: DEFAULT_MAX_DEPTH,
            feature_mask: DEFAULT_FEATURE_MASK,
            init_jitter: DEFAULT_INIT_JITTER,
            vectors: None,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParseArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Model files; each gets `<model stem>.jsonl` in `out_dir`.
    #[arg(long = "model", id = "models", num_args = 1..)]
    pub models: Vec<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    #[arg(long)]
    pub vectors: Option<PathBuf>,
}

impl Default for ParseArgs {
    fn default() -> Self {
        ParseArgs {
            config: None,
            models: Vec::new(),
            corpus: None,
            out_dir: None,
            k: DEFAULT_K,
            vectors: None,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainLmArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_ORDER)]
    pub order: usize,
}

impl Default for TrainLmArgs {
    fn default() -> Self {
        TrainLmArgs {
            config: None,
            train: None,
            out: None,
            order: DEFAULT_ORDER,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRankerArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Hypothesis files, one per parser, over the same utterances.
    #[arg(long = "beams", id = "beams", num_args = 1..)]
    pub beams: Vec<PathBuf>,
    #[arg(long)]
    pub gold: Option<PathBuf>,
    #[arg(long)]
    pub lm: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Add the cross-parser vote count feature (needs two or more files).
    #[arg(long)]
    pub use_votes: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_RANKER_LAMBDA)]
    pub lambda: f64,
    #[arg(long, default_value_t = DEFAULT_RANKER_EPOCHS)]
    pub epochs: usize,
}

impl Default for TrainRankerArgs {
    fn default() -> Self {
        TrainRankerArgs {
            config: None,
            beams: Vec::new(),
            gold: None,
            lm: None,
            out: None,
            use_votes: false,
            seed: 0,
            lambda: DEFAULT_RANKER_LAMBDA,
            epochs: DEFAULT_RANKER_EPOCHS,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long = "beams", id = "beams", num_args = 1..)]
    pub beams: Vec<PathBuf>,
    #[arg(long, default_value = "majority")]
    pub strategy: Strategy,
    /// Gold corpus, required by the oracle strategy.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Optional JSONL file recording which parser each output came from.
    #[arg(long)]
    pub provenance: Option<PathBuf>,
    /// Leave out each parser's overlap with itself in parser switching.
    #[arg(long)]
    pub exclude_self: bool,
}

impl Default for EnsembleArgs {
    fn default() -> Self {
        EnsembleArgs {
            config: None,
            beams: Vec::new(),
            strategy: Strategy::Majority,
            gold: None,
            out: None,
            provenance: None,
            exclude_self: false,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RerankMode {
    /// Skip re-ranking.
    None,
    /// Reorder the first `top_k` hypotheses by LM score.
    Naive,
    /// Learned ranker over model and LM scores.
    Svm,
    /// Learned ranker with the cross-parser vote count feature.
    Extended,
}

impl RerankMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RerankMode::None => "none",
            RerankMode::Naive => "naive",
            RerankMode::Svm => "svm",
            RerankMode::Extended => "extended",
        }
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RerankArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Hypothesis files; with more than one the re-ranked top-1s are ensembled.
    #[arg(long = "beams", id = "beams", num_args = 1..)]
    pub beams: Vec<PathBuf>,
    #[arg(long)]
    pub lm: Option<PathBuf>,
    /// Ranker model, required by the svm and extended modes.
    #[arg(long)]
    pub ranker: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "naive")]
    pub mode: RerankMode,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    pub top_k: usize,
    /// Strategy for combining several re-ranked files.
    #[arg(long, default_value = "majority")]
    pub strategy: Strategy,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for the re-ranked hypothesis files.
    #[arg(long)]
    pub beams_out: Option<PathBuf>,
}

impl Default for RerankArgs {
    fn default() -> Self {
        RerankArgs {
            config: None,
            beams: Vec::new(),
            lm: None,
            ranker: None,
            mode: RerankMode::Naive,
            top_k: DEFAULT_TOP_K,
            strategy: Strategy::Majority,
            out: None,
            beams_out: None,
        }
    }
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Prediction files in the corpus JSONL format.
    #[arg(long = "predictions", id = "predictions", num_args = 1..)]
    pub predictions: Vec<PathBuf>,
    /// Hypothesis files; adds oracle@k columns.
    #[arg(long = "beams", id = "beams", num_args = 1..)]
    pub beams: Vec<PathBuf>,
    /// Also write the summary as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub gold: Option<PathBuf>,
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Second prediction file, reported as relative change against the first.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    /// Directory for `errors-<stem>.json`, `errors-<stem>.jsonl` and `errors.txt`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Parses `args` (including the program name), runs the command and
/// returns what it prints on stdout.
pub fn run<I, T>(args: I) -> Result<String>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = Cli::command().try_get_matches_from(args)?;
    run_matches(&matches)
}

pub fn run_matches(matches: &ArgMatches) -> Result<String> {
    let cli = Cli::from_arg_matches(matches)?;
    let Some((_, sub)) = matches.subcommand() else {
        bail!("no subcommand given");
    };
    macro_rules! resolved {
        ($args:expr) => {
            config::resolve(&$args, $args.config.as_deref(), sub)?
        };
    }
    match cli.command {
        Command::Ingest(a) => commands::ingest(&resolved!(a)),
        Command::Generate(a) => commands::generate(&resolved!(a)),
        Command::TrainParser(a) => commands::train_parser(&resolved!(a)),
        Command::Parse(a) => commands::parse(&resolved!(a)),
        Command::TrainLm(a) => commands::train_lm(&resolved!(a)),
        Command::TrainRanker(a) => commands::train_ranker(&resolved!(a)),
        Command::Ensemble(a) => commands::ensemble(&resolved!(a)),
        Command::Rerank(a) => commands::rerank(&resolved!(a)),
        Command::Evaluate(a) => commands::evaluate(&resolved!(a)),
        Command::Analyze(a) => commands::analyze(&resolved!(a)),
        Command::Pipeline(a) => {
            let cfg: PipelineConfig = resolved!(a);
            eprintln!("{}", config::echo("pipeline", &cfg));
            Ok(run_pipeline(&cfg)?.report)
        }
    }
}
