use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use charlm_core::harness::{ArchConfig, ReportFormat, SplitSizes, SynthSource};
use charlm_core::training::TrainConfig;
use charlm_core::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "charlm", version, about = "Character-level LSTM language models with cross-lingual layer transfer")]
pub struct Cli {
    /// Log progress at info level (RUST_LOG overrides).
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the shared unit vocabulary over one or more corpora.
    BuildVocab {
        /// A corpus as LANG=PATH; repeat for every language.
        #[arg(long, required = true, value_parser = parse_corpus)]
        corpus: Vec<(String, PathBuf)>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a freshly initialized model.
    Train {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Model id stored in the checkpoint; the output file stem by default.
        #[arg(long)]
        id: Option<String>,
        /// Per-epoch history file; `<out>.history.tsv` by default.
        #[arg(long)]
        history: Option<PathBuf>,
        #[command(flatten)]
        settings: TrainArgs,
    },
    /// Initialize a model from the first `depth` layers of a source model.
    Transfer {
        #[arg(long)]
        source: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u8).range(0..=4))]
        depth: u8,
        /// Vocabulary the new model must share with the source.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Continue training an existing checkpoint.
    Finetune {
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        history: Option<PathBuf>,
        #[command(flatten)]
        settings: TrainArgs,
    },
    /// Score a corpus and print word, character and per-class perplexity.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Vowel letters used for unit classes.
        #[arg(long, conflicts_with = "language")]
        vowels: Option<String>,
        /// Language whose shipped vowel set is used for unit classes.
        #[arg(long)]
        language: Option<String>,
        /// Write the per-token stream here.
        #[arg(long)]
        stream_out: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        #[arg(long, default_value_t = 100)]
        seq_len: usize,
        #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
        format: OutputFormat,
    },
    /// Mix two aligned token streams, with a fixed or dev-optimized weight on A.
    Interpolate {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, requires = "dev_b")]
        dev_a: Option<PathBuf>,
        #[arg(long, requires = "dev_a")]
        dev_b: Option<PathBuf>,
        #[arg(long, conflicts_with_all = ["dev_a", "dev_b"])]
        lambda: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit an affine map between two models' output embeddings.
    AnalyzeEmbeddings {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Leave pairs with a zero row out of the mean cosine.
        #[arg(long)]
        exclude_zero_rows: bool,
    },
    /// Sample synthetic languages from related Markov chains.
    SynthGen(SynthArgs),
    /// Run the source × depth × seed transfer grid.
    Grid(ExperimentArgs),
    /// Run the transfer grid for each training-data fraction.
    Sweep {
        #[command(flatten)]
        experiment: ExperimentArgs,
        /// Overrides `data_fractions`.
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
    },
    /// Re-render a delimited grid report.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
        format: OutputFormat,
        /// Also print the mean relative gain over baseline per fraction.
        #[arg(long)]
        gains: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Text,
    Tsv,
}

impl From<OutputFormat> for ReportFormat {
    fn from(f: OutputFormat) -> Self {
        match f {
            OutputFormat::Text => ReportFormat::Text,
            OutputFormat::Tsv => ReportFormat::Delimited,
        }
    }
}

/// The `[arch]` and `[train]` tables of a settings file. Other keys are
/// ignored, so an experiment file can be reused here.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub arch: ArchConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML file with `[arch]` and `[train]` tables; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub lstm_dim: Option<usize>,
    #[arg(long)]
    pub highway_dim: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub max_halvings: Option<usize>,
}

impl TrainArgs {
    pub fn resolve(&self) -> Result<ModelSettings> {
        let mut s = match &self.config {
            Some(p) => load_settings(p)?,
            None => ModelSettings::default(),
        };
        let a = &mut s.arch;
        set(&mut a.embed_dim, self.embed_dim);
        set(&mut a.lstm_dim, self.lstm_dim);
        set(&mut a.highway_dim, self.highway_dim);
        let t = &mut s.train;
        set(&mut t.learning_rate, self.learning_rate);
        set(&mut t.dropout, self.dropout);
        set(&mut t.batch_size, self.batch_size);
        set(&mut t.seq_len, self.seq_len);
        set(&mut t.max_epochs, self.max_epochs);
        set(&mut t.max_halvings, self.max_halvings);
        s.train.validate()?;
        Ok(s)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn load_settings(path: &Path) -> Result<ModelSettings> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 36)]
    pub alphabet_size: usize,
    /// Hidden states; the alphabet size by default.
    #[arg(long)]
    pub n_states: Option<usize>,
    #[arg(long, default_value_t = 3)]
    pub successors: usize,
    #[arg(long, default_value_t = 5.0)]
    pub mean_word_len: f64,
    #[arg(long, default_value_t = 6.0)]
    pub mean_sent_len: f64,
    /// Distance of the target from the source in pair mode.
    #[arg(long, default_value_t = 0.2)]
    pub relatedness: f64,
    /// Sentences per language in pair mode.
    #[arg(long, default_value_t = 1000)]
    pub sentences: usize,
    /// Family mode: a source as NAME:RELATEDNESS:TRAIN,DEV,TEST; repeatable.
    #[arg(long, value_parser = parse_source)]
    pub source: Vec<SynthSource>,
    /// Target language name in family mode.
    #[arg(long, default_value = "target")]
    pub target: String,
    /// Target split sizes in family mode, as TRAIN,DEV,TEST.
    #[arg(long, default_value = "100,100,200", value_parser = parse_sizes)]
    pub target_sizes: SplitSizes,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Experiment file; relative paths inside it resolve against its directory.
    #[arg(long)]
    pub config: PathBuf,
    /// Replaces the configured seeds; repeatable.
    #[arg(long)]
    pub seed: Vec<u64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub depths: Option<Vec<usize>>,
    /// Overrides `train.max_epochs`.
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    pub format: OutputFormat,
}

fn parse_corpus(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((lang, path)) if !lang.is_empty() && !path.is_empty() => Ok((lang.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected LANG=PATH, got {s:?}")),
    }
}

fn parse_sizes(s: &str) -> std::result::Result<SplitSizes, String> {
    let n: Vec<usize> = s
        .split(',')
        .map(|x| x.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| format!("{s:?}: {e}"))?;
    match n[..] {
        [train, dev, test] => Ok(SplitSizes { train, dev, test }),
        _ => Err(format!("expected TRAIN,DEV,TEST, got {s:?}")),
    }
}

fn parse_source(s: &str) -> std::result::Result<SynthSource, String> {
    let mut parts = s.splitn(3, ':');
    let (Some(name), Some(eps), Some(sizes)) = (parts.next(), parts.next(), parts.next()) else {
        return Err(format!("expected NAME:RELATEDNESS:TRAIN,DEV,TEST, got {s:?}"));
    };
    let relatedness: f64 = eps.parse().map_err(|_| format!("bad relatedness {eps:?}"))?;
    Ok(SynthSource {
        name: name.to_string(),
        relatedness,
        sizes: parse_sizes(sizes)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn parses_value_forms() {
        assert_eq!(parse_corpus("fi=a/b.txt").unwrap(), ("fi".into(), PathBuf::from("a/b.txt")));
        assert!(parse_corpus("fi").is_err());
        assert_eq!(parse_sizes("3, 4,5").unwrap(), SplitSizes { train: 3, dev: 4, test: 5 });
        assert!(parse_sizes("3,4").is_err());
        let s = parse_source("rel:0.2:2000,100,10").unwrap();
        assert_eq!((s.name.as_str(), s.relatedness, s.sizes.train), ("rel", 0.2, 2000));
        assert!(parse_source("rel:x:1,2,3").is_err());
    }

    #[test]
    fn flags_override_settings_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.toml");
        std::fs::write(&p, "target = \"ignored\"\n[arch]\nembed_dim = 8\n[train]\nmax_epochs = 2\ndropout = 0.0\n").unwrap();
        let args = TrainArgs {
            config: Some(p),
            embed_dim: None,
            lstm_dim: Some(16),
            highway_dim: None,
            learning_rate: None,
            dropout: None,
            batch_size: None,
            seq_len: None,
            max_epochs: Some(5),
            max_halvings: None,
        };
        let s = args.resolve().unwrap();
        assert_eq!((s.arch.embed_dim, s.arch.lstm_dim, s.arch.highway_dim), (8, 16, 128));
        assert_eq!((s.train.max_epochs, s.train.dropout), (5, 0.0));
    }
}
