use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Shared-private bilingual word embeddings: vocabularies, alignment
/// statistics, word pairing, embedding layout and a toy trainer.
#[derive(Debug, Parser)]
#[command(name = "spbwe", version)]
pub struct Cli {
    /// Random seed for initialization, data generation and sampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML file with defaults; flags take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// JSON manifest recording stage inputs and outputs for staleness checks.
    #[arg(long, global = true, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub stage: Stage,
}

#[derive(Debug, Subcommand)]
pub enum Stage {
    /// Count tokens and write a frequency-ordered vocabulary.
    BuildVocab(BuildVocabArgs),
    /// Estimate A(y|x) from Pharaoh word alignments.
    AlignStats(AlignStatsArgs),
    /// Pair source and target words into lm, wf and ur categories.
    Pair(PairArgs),
    /// Report the parameter budget of a shared-private layout.
    Layout(LayoutArgs),
    /// Initialize embeddings and write the binary dump.
    Init(InitArgs),
    /// Export a binary dump as TSV.
    Export(ExportArgs),
    /// Train the miniature attention model on a synthetic task.
    TrainToy(TrainArgs),
    /// Compare analytic and finite-difference gradients.
    GradCheck(GradCheckArgs),
    /// Two-dimensional PCA projection of both vocabularies.
    Pca(PcaArgs),
    /// Summarize the manifest and flag stale stages.
    Report(ReportArgs),
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::BuildVocab(_) => "build-vocab",
            Stage::AlignStats(_) => "align-stats",
            Stage::Pair(_) => "pair",
            Stage::Layout(_) => "layout",
            Stage::Init(_) => "init",
            Stage::Export(_) => "export",
            Stage::TrainToy(_) => "train-toy",
            Stage::GradCheck(_) => "grad-check",
            Stage::Pca(_) => "pca",
            Stage::Report(_) => "report",
        }
    }
}

fn parse_lambda(s: &str) -> Result<[f64; 3], String> {
    let vals: Vec<f64> = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}")))
        .collect::<Result<_, _>>()?;
    let out = match vals[..] {
        [v] => [v; 3],
        [a, b, c] => [a, b, c],
        _ => return Err("expected one value or three comma-separated values".into()),
    };
    if out.iter().any(|l| !(0.0..=1.0).contains(l)) {
        return Err("sharing coefficients must lie in [0, 1]".into());
    }
    Ok(out)
}

fn parse_counts(s: &str) -> Result<[usize; 3], String> {
    let vals: Vec<usize> = s
        .split(',')
        .map(|v| v.trim().replace('_', "").parse::<usize>().map_err(|e| format!("{v:?}: {e}")))
        .collect::<Result<_, _>>()?;
    vals.try_into().map_err(|_| "expected three comma-separated counts (lm,wf,ur)".to_string())
}

#[derive(Debug, Args)]
pub struct BuildVocabArgs {
    /// Tokenized corpus, one sentence per line.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Vocabulary size including the four reserved tokens [default: 30000].
    #[arg(long)]
    pub max_size: Option<usize>,
    /// Minimum token count [default: 1].
    #[arg(long)]
    pub min_freq: Option<u64>,
}

#[derive(Debug, Args)]
pub struct AlignStatsArgs {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub tgt: PathBuf,
    /// Pharaoh `i-j` links, one line per sentence pair.
    #[arg(long)]
    pub alignments: PathBuf,
    #[arg(long)]
    pub src_vocab: PathBuf,
    #[arg(long)]
    pub tgt_vocab: PathBuf,
    /// Read links as target-source.
    #[arg(long)]
    pub reverse: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PairArgs {
    /// Minimum A(y|x) for an lm pair [default: 0.05].
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub probs: PathBuf,
    #[arg(long)]
    pub src_vocab: PathBuf,
    #[arg(long)]
    pub tgt_vocab: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct EmbeddingFlags {
    /// Embedding width [default: 512].
    #[arg(long)]
    pub d: Option<usize>,
    /// Sharing coefficients lm,wf,ur [default: 0.9,0.7,0.5].
    #[arg(long, value_parser = parse_lambda)]
    pub lambda: Option<[f64; 3]>,
    /// Keep a separate target output matrix.
    #[arg(long)]
    pub untied: bool,
}

#[derive(Debug, Args, Clone)]
pub struct PairingInputs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub src_vocab: PathBuf,
    #[arg(long)]
    pub tgt_vocab: PathBuf,
}

#[derive(Debug, Args)]
pub struct LayoutArgs {
    /// Pairing table; requires both vocabularies.
    #[arg(long, requires_all = ["src_vocab", "tgt_vocab"], conflicts_with = "counts", required_unless_present = "counts")]
    pub pairs: Option<PathBuf>,
    #[arg(long)]
    pub src_vocab: Option<PathBuf>,
    #[arg(long)]
    pub tgt_vocab: Option<PathBuf>,
    /// Pair counts lm,wf,ur instead of a pairing table.
    #[arg(long, value_parser = parse_counts)]
    pub counts: Option<[usize; 3]>,
    /// Unpaired source words, with --counts.
    #[arg(long, default_value_t = 0, requires = "counts")]
    pub surplus_src: usize,
    /// Unpaired target words, with --counts.
    #[arg(long, default_value_t = 0, requires = "counts")]
    pub surplus_tgt: usize,
    #[command(flatten)]
    pub emb: EmbeddingFlags,
    /// vanilla or decoder_wt [default: vanilla].
    #[arg(long)]
    pub baseline: Option<String>,
    /// JSON report path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[command(flatten)]
    pub inputs: PairingInputs,
    #[command(flatten)]
    pub emb: EmbeddingFlags,
    /// uniform_scaled or normal_scaled [default: uniform_scaled].
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Binary dump written by `init`.
    #[arg(long)]
    pub embeddings: PathBuf,
    #[command(flatten)]
    pub inputs: PairingInputs,
    #[command(flatten)]
    pub emb: EmbeddingFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct ToyFlags {
    /// copy or lexicon [default: lexicon].
    #[arg(long)]
    pub task: Option<String>,
    /// Model width [default: 32].
    #[arg(long)]
    pub d: Option<usize>,
    /// Sharing coefficients lm,wf,ur [default: 0.9,0.7,0.5].
    #[arg(long, value_parser = parse_lambda)]
    pub lambda: Option<[f64; 3]>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub toy: ToyFlags,
    /// [default: 2000]
    #[arg(long)]
    pub steps: Option<usize>,
    /// [default: 1.0]
    #[arg(long)]
    pub lr: Option<f64>,
    /// [default: 64]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// sgd or adam [default: sgd].
    #[arg(long)]
    pub optimizer: Option<String>,
    /// Position signal amplitude [default: 6.0].
    #[arg(long)]
    pub position_scale: Option<f64>,
    /// Scalars to finite-difference after training [default: 50].
    #[arg(long)]
    pub grad_check_samples: Option<usize>,
    /// JSON report path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[command(flatten)]
    pub toy: ToyFlags,
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub eps: f64,
    /// Largest acceptable relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PcaArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[command(flatten)]
    pub inputs: PairingInputs,
    #[command(flatten)]
    pub emb: EmbeddingFlags,
    /// Most frequent words per side to project; all when absent.
    #[arg(long)]
    pub top: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
}
