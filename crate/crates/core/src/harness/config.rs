use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::VowelSet;
use crate::error::{Error, Result};
use crate::neural::Arch;
use crate::training::TrainConfig;

/// Train, dev and test corpora of one language.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanguagePaths {
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: PathBuf,
    /// Vowel letters; defaults to the shipped set for the language name.
    #[serde(default)]
    pub vowels: Option<String>,
}

/// Layer sizes; the vocabulary size comes from the built vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub embed_dim: usize,
    pub lstm_dim: usize,
    pub highway_dim: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        let desk = Arch::desk(1);
        ArchConfig {
            embed_dim: desk.embed_dim,
            lstm_dim: desk.lstm_dim,
            highway_dim: desk.highway_dim,
        }
    }
}

impl ArchConfig {
    pub fn with_vocab(&self, vocab_size: usize) -> Result<Arch> {
        Arch::new(vocab_size, self.embed_dim, self.lstm_dim, self.highway_dim)
    }
}

/// Which training set a data-size sweep subsamples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepSide {
    #[default]
    Target,
    Source,
}

/// A transfer grid or data-size sweep. Relative paths are resolved against
/// the directory of the file the configuration was loaded from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub languages: BTreeMap<String, LanguagePaths>,
    pub target: String,
    #[serde(default)]
    pub sources: Vec<String>,
    #[serde(default = "default_depths")]
    pub depths: Vec<usize>,
    #[serde(default)]
    pub arch: ArchConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Settings for source-model training; `train` when absent.
    #[serde(default)]
    pub source_train: Option<TrainConfig>,
    /// Source checkpoints to transfer from instead of training new ones.
    #[serde(default)]
    pub pretrained: BTreeMap<String, PathBuf>,
    /// Seed of every source model; the first of `seeds` when absent.
    #[serde(default)]
    pub source_seed: Option<u64>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub data_fractions: Option<Vec<f64>>,
    #[serde(default)]
    pub sweep_side: SweepSide,
    /// Drop row pairs with a zero vector from the mean cosine similarity.
    #[serde(default)]
    pub exclude_zero_rows: bool,
    pub output_dir: PathBuf,
}

fn default_depths() -> Vec<usize> {
    vec![1, 2, 3, 4]
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads, validates and resolves paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut config = Self::from_toml(&text)?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for lang in self.languages.values_mut() {
            join(&mut lang.train);
            join(&mut lang.dev);
            join(&mut lang.test);
        }
        for p in self.pretrained.values_mut() {
            join(p);
        }
        join(&mut self.output_dir);
    }

    pub fn validate(&self) -> Result<()> {
        let known = |name: &String| {
            if self.languages.contains_key(name) {
                Ok(())
            } else {
                Err(Error::Config(format!("language {name:?} has no corpus paths")))
            }
        };
        known(&self.target)?;
        for s in &self.sources {
            known(s)?;
            if *s == self.target {
                return Err(Error::Config(format!("target {s:?} is also listed as a source")));
            }
        }
        if self.sources.iter().collect::<std::collections::BTreeSet<_>>().len() != self.sources.len() {
            return Err(Error::Config("sources must be distinct".into()));
        }
        if let Some(name) = self.pretrained.keys().find(|k| !self.sources.contains(k)) {
            return Err(Error::Config(format!("pretrained model given for {name:?}, which is not a source")));
        }
        if !self.pretrained.is_empty() && self.sweep_side == SweepSide::Source {
            return Err(Error::Config("a source-side sweep retrains its sources; drop `pretrained`".into()));
        }
        if let Some(d) = self.depths.iter().find(|&&d| d > 4) {
            return Err(Error::BadDepth(*d));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if let Some(fr) = &self.data_fractions {
            if fr.is_empty() {
                return Err(Error::Config("data_fractions must not be empty".into()));
            }
            if let Some(f) = fr.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
                return Err(Error::Config(format!("data fraction {f} outside (0, 1]")));
            }
        }
        self.arch.with_vocab(1)?;
        self.train.validate()?;
        if let Some(t) = &self.source_train {
            t.validate()?;
        }
        Ok(())
    }

    /// Fails with `Io` naming the first configured corpus that is missing.
    pub fn check_paths(&self) -> Result<()> {
        for name in self.languages_in_use() {
            let lang = &self.languages[name];
            for p in [&lang.train, &lang.dev, &lang.test] {
                if !p.is_file() {
                    return Err(Error::Io(std::io::Error::new(
                        std::io::ErrorKind::NotFound,
                        format!("corpus {} not found", p.display()),
                    )));
                }
            }
        }
        for p in self.pretrained.values() {
            if !p.is_file() {
                return Err(Error::Io(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("checkpoint {} not found", p.display()),
                )));
            }
        }
        Ok(())
    }

    /// The target followed by the sources, in configured order.
    pub fn languages_in_use(&self) -> Vec<&String> {
        std::iter::once(&self.target).chain(&self.sources).collect()
    }

    pub fn vowels(&self, language: &str) -> VowelSet {
        match self.languages.get(language).and_then(|l| l.vowels.as_deref()) {
            Some(v) => VowelSet::new(v),
            None => VowelSet::for_language(language),
        }
    }

    pub fn source_train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.source_seed(),
            ..self.source_train.clone().unwrap_or_else(|| self.train.clone())
        }
    }

    pub fn source_seed(&self) -> u64 {
        self.source_seed.unwrap_or(self.seeds[0])
    }
}
