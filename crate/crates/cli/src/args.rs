use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Parser, Debug)]
#[command(
    name = "bitext",
    version,
    about = "Filter and mine bitexts by cosine distance in a joint sentence-embedding space"
)]
pub struct Cli {
    /// Worker threads. Falls back to BITEXT_THREADS, then to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Seed for every randomized step (default 42).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Suppress progress lines on stderr.
    #[arg(short, long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Drop sentences by comma count, length and language id.
    Preprocess(PreprocessArgs),
    /// Learn a joint BPE vocabulary from one or more corpora.
    BpeLearn(BpeLearnArgs),
    /// Segment a corpus with a learned BPE model.
    BpeApply(BpeApplyArgs),
    /// Embed every sentence of a corpus.
    Embed(EmbedArgs),
    /// Build an inverted-file index over target embeddings.
    IndexBuild(IndexBuildArgs),
    /// k-NN search of query embeddings in an index.
    IndexSearch(IndexSearchArgs),
    /// Score a line-aligned bitext and keep pairs within a distance threshold.
    Filter(FilterArgs),
    /// Mine candidate pairs between two monolingual corpora.
    Mine(MineArgs),
    /// Count surviving pairs over a grid of thresholds.
    Sweep(SweepArgs),
    /// Corpus statistics.
    #[command(subcommand)]
    Stats(StatsCommand),
    /// Precision, recall and F1 of predicted pairs against a gold alignment.
    Eval(EvalArgs),
    /// Find the F1-optimal distance threshold on tuning data.
    Tune(TuneArgs),
    /// Generate a synthetic comparable corpus with planted pairs.
    Synth(SynthArgs),
    /// Run the stages listed in a config file.
    Pipeline(PipelineArgs),
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    /// One corpus, or two line-aligned corpora filtered as a bitext.
    #[arg(required = true, num_args = 1..=2)]
    pub inputs: Vec<PathBuf>,

    /// Output corpus, once per input.
    #[arg(short, long = "output", required = true)]
    pub outputs: Vec<PathBuf>,

    /// Language tag per input; inferred from the file name when omitted.
    #[arg(long)]
    pub lang: Vec<String>,

    #[arg(long, default_value_t = 3)]
    pub max_commas: usize,

    /// Sentences must have fewer words than this.
    #[arg(long, default_value_t = 50)]
    pub max_words: usize,

    #[arg(long)]
    pub no_lid: bool,

    /// Train language id from `tag=path` files instead of the bundled seeds.
    #[arg(long, value_name = "TAG=PATH")]
    pub lid_train: Vec<String>,

    #[arg(long, default_value_t = 0.5)]
    pub lid_min_conf: f64,

    /// Also write the stage report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BpeLearnArgs {
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,

    #[arg(long, default_value_t = bitext::bpe::DEFAULT_NUM_MERGES)]
    pub merges: usize,

    #[arg(long)]
    pub lowercase: bool,

    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct BpeApplyArgs {
    pub input: PathBuf,

    #[arg(long)]
    pub model: PathBuf,

    #[arg(long)]
    pub lowercase: bool,

    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedMode {
    Hashed,
    File,
}

#[derive(Args, Debug)]
pub struct EmbedArgs {
    pub input: PathBuf,

    #[arg(long, value_enum, default_value_t = EmbedMode::Hashed)]
    pub mode: EmbedMode,

    #[arg(long, default_value_t = bitext::embed::DEFAULT_DIM)]
    pub dim: usize,

    /// BPE model for the hashed encoder; whitespace words otherwise.
    #[arg(long)]
    pub bpe: Option<PathBuf>,

    #[arg(long)]
    pub lowercase: bool,

    /// Precomputed embeddings to look sentences up in (file mode).
    #[arg(long, required_if_eq("mode", "file"))]
    pub vectors: Option<PathBuf>,

    #[arg(long)]
    pub lang: Option<String>,

    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct IndexBuildArgs {
    pub input: PathBuf,

    /// Number of lists (default ceil(sqrt(n))).
    #[arg(long)]
    pub nlist: Option<usize>,

    #[arg(long, default_value_t = bitext::simsearch::DEFAULT_KMEANS_ITERS)]
    pub iters: usize,

    /// Training sample cap per list.
    #[arg(long, default_value_t = bitext::simsearch::DEFAULT_TRAIN_PER_LIST)]
    pub train_per_list: usize,

    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct IndexSearchArgs {
    pub index: PathBuf,

    pub queries: PathBuf,

    #[arg(long, default_value_t = bitext::simsearch::DEFAULT_K)]
    pub k: usize,

    /// Lists probed per query (default min(32, nlist)).
    #[arg(long)]
    pub nprobe: Option<usize>,

    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FilterArgs {
    pub src: PathBuf,
    pub tgt: PathBuf,
    pub src_emb: PathBuf,
    pub tgt_emb: PathBuf,

    #[arg(long)]
    pub threshold: f32,

    #[arg(long)]
    pub src_lang: Option<String>,

    #[arg(long)]
    pub tgt_lang: Option<String>,

    /// Kept pairs.
    #[arg(short, long)]
    pub output: PathBuf,

    /// Distances of every pair before thresholding.
    #[arg(long)]
    pub scores: Option<PathBuf>,

    /// Kept source sentences.
    #[arg(long, requires = "out_tgt")]
    pub out_src: Option<PathBuf>,

    /// Kept target sentences.
    #[arg(long, requires = "out_src")]
    pub out_tgt: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MineArgs {
    pub src_emb: PathBuf,
    pub tgt_emb: PathBuf,

    #[arg(long, default_value_t = bitext::simsearch::DEFAULT_K)]
    pub k: usize,

    #[arg(long, default_value_t = bitext::mine::DEFAULT_MINING_THRESHOLD, conflicts_with = "threshold_from")]
    pub threshold: f32,

    /// Take the threshold from a `tune` report (TSV or JSON).
    #[arg(long)]
    pub threshold_from: Option<PathBuf>,

    /// Search through this index instead of brute force.
    #[arg(long)]
    pub ivf: Option<PathBuf>,

    #[arg(long)]
    pub nprobe: Option<usize>,

    /// Keep only the nearest target of each source.
    #[arg(long)]
    pub bucc: bool,

    /// Require the source to be among the target's k nearest sources too.
    #[arg(long)]
    pub bidirectional: bool,

    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    pub pairs: PathBuf,

    #[arg(long, default_value_t = 0.0)]
    pub from: f32,

    #[arg(long, default_value_t = 2.0)]
    pub to: f32,

    #[arg(long, default_value_t = 0.05)]
    pub step: f32,

    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum StatsCommand {
    /// Histogram of sentence lengths in words.
    Lengths {
        input: PathBuf,

        #[arg(long)]
        lang: Option<String>,

        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Tsv,
    Json,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    pub pairs: PathBuf,
    pub gold: PathBuf,

    /// Only count pairs within this distance.
    #[arg(long)]
    pub threshold: Option<f32>,

    #[arg(long, value_enum, default_value_t = ReportFormat::Tsv)]
    pub format: ReportFormat,

    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TuneArgs {
    pub candidates: PathBuf,
    pub gold: PathBuf,

    #[arg(long, value_enum, default_value_t = ReportFormat::Tsv)]
    pub format: ReportFormat,

    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub n_src: usize,

    /// Defaults to n-src.
    #[arg(long)]
    pub n_tgt: Option<usize>,

    #[arg(long)]
    pub n_planted: usize,

    #[arg(long, default_value_t = bitext::embed::DEFAULT_DIM)]
    pub dim: usize,

    #[arg(long, default_value_t = 0.1)]
    pub noise_sigma: f32,

    #[arg(long, default_value_t = 0.2)]
    pub swap_prob: f64,

    /// Directory receiving src/tgt corpora, embeddings and gold.tsv.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct PipelineArgs {
    pub config: PathBuf,

    /// Check stage order and inputs without running anything.
    #[arg(long)]
    pub dry_run: bool,
}
