use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ExperimentConfig, SweepSide};
use crate::analysis::{compare_embeddings, extract_output_embeddings};
use crate::corpus::{build_vocabulary, encode_file, EncodedCorpus, UnitClass, Vocabulary};
use crate::error::{Error, Result};
use crate::evaluation::{
    char_perplexity, interpolate, optimize_lambda, score_corpus, vocabulary_classes, word_perplexity, NllStream,
};
use crate::neural::Arch;
use crate::training::{
    init_model, load_checkpoint, mix_seed, save_checkpoint, train, transfer_initialize, ModelCheckpoint, TrainConfig,
};

const SUBSAMPLE_STREAM: u64 = 0x5ab5_a3b1e;

/// Sorted indices of the first `⌈fraction · n⌉` entries of a seeded
/// permutation of `0..n`. Smaller fractions give subsets of larger ones.
pub fn subsample_indices(n: usize, fraction: f64, seed: u64) -> Vec<usize> {
    let keep = ((fraction * n as f64).ceil() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, SUBSAMPLE_STREAM)));
    let mut kept = order[..keep].to_vec();
    kept.sort_unstable();
    kept
}

pub fn subsample(corpus: &EncodedCorpus, fraction: f64, seed: u64) -> EncodedCorpus {
    if fraction >= 1.0 {
        return corpus.clone();
    }
    corpus.select(&subsample_indices(corpus.len(), fraction, seed))
}

/// Scores of one trained model. Comparison fields are absent for the
/// baseline and whenever the baseline itself failed.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMetrics {
    pub dev_ppl: f64,
    pub test_word_ppl: f64,
    pub test_char_ppl: f64,
    /// Weight of this model when interpolated with the baseline.
    pub lambda: Option<f64>,
    pub interp_ppl: Option<f64>,
    pub mean_cosine: Option<f64>,
}

/// One grid cell. `source == None` marks the from-scratch baseline, which
/// always has depth 0.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub source: Option<String>,
    pub depth: usize,
    pub seed: u64,
    pub data_fraction: f64,
    pub outcome: std::result::Result<CellMetrics, String>,
}

impl GridRow {
    pub fn is_baseline(&self) -> bool {
        self.source.is_none()
    }

    pub fn metrics(&self) -> Option<&CellMetrics> {
        self.outcome.as_ref().ok()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GridReport {
    pub rows: Vec<GridRow>,
}

impl GridReport {
    pub fn baseline(&self, seed: u64, data_fraction: f64) -> Option<&GridRow> {
        self.rows
            .iter()
            .find(|r| r.is_baseline() && r.seed == seed && r.data_fraction == data_fraction)
    }

    pub fn cell(&self, source: &str, depth: usize, seed: u64, data_fraction: f64) -> Option<&GridRow> {
        self.rows.iter().find(|r| {
            r.source.as_deref() == Some(source) && r.depth == depth && r.seed == seed && r.data_fraction == data_fraction
        })
    }

    /// `(baseline − cell) / baseline` on test word perplexity.
    pub fn relative_gain(&self, row: &GridRow) -> Option<f64> {
        let cell = row.metrics()?.test_word_ppl;
        let base = self.baseline(row.seed, row.data_fraction)?.metrics()?.test_word_ppl;
        Some((base - cell) / base)
    }

    /// Mean relative gain of `(source, depth)` over all seeds with both
    /// rows present, per data fraction in first-appearance order.
    pub fn mean_gain_by_fraction(&self, source: &str, depth: usize) -> Vec<(f64, f64)> {
        let mut order: Vec<f64> = Vec::new();
        let mut sums: Vec<(f64, usize)> = Vec::new();
        for row in self.rows.iter().filter(|r| r.source.as_deref() == Some(source) && r.depth == depth) {
            if let Some(g) = self.relative_gain(row) {
                let k = match order.iter().position(|&f| f == row.data_fraction) {
                    Some(k) => k,
                    None => {
                        order.push(row.data_fraction);
                        sums.push((0.0, 0));
                        order.len() - 1
                    }
                };
                sums[k].0 += g;
                sums[k].1 += 1;
            }
        }
        order.into_iter().zip(sums).map(|(f, (s, n))| (f, s / n as f64)).collect()
    }

    pub fn failures(&self) -> impl Iterator<Item = &GridRow> {
        self.rows.iter().filter(|r| r.outcome.is_err())
    }
}

/// Everything one grid run shares: the vocabulary and encoded corpora.
pub struct GridData {
    pub vocab: Vocabulary,
    pub arch: Arch,
    pub corpora: BTreeMap<String, [EncodedCorpus; 3]>,
    pub target_classes: Vec<UnitClass>,
}

impl GridData {
    /// Builds the shared vocabulary over every split of every language in
    /// use, then encodes all splits with it.
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        config.check_paths()?;
        let mut readers = Vec::new();
        for name in config.languages_in_use() {
            let lang = &config.languages[name];
            for p in [&lang.train, &lang.dev, &lang.test] {
                readers.push((name.clone(), BufReader::new(fs::File::open(p)?)));
            }
        }
        let vocab = build_vocabulary(readers)?;
        let mut corpora = BTreeMap::new();
        for name in config.languages_in_use() {
            let lang = &config.languages[name];
            corpora.insert(
                name.clone(),
                [encode_file(&lang.train, &vocab)?, encode_file(&lang.dev, &vocab)?, encode_file(&lang.test, &vocab)?],
            );
        }
        let target_classes = vocabulary_classes(&vocab, &config.vowels(&config.target));
        Ok(GridData {
            arch: config.arch.with_vocab(vocab.len())?,
            vocab,
            corpora,
            target_classes,
        })
    }
}

fn fraction_label(f: f64) -> String {
    format!("f{f}")
}

fn write_history(path: &Path, history: &crate::training::TrainingHistory) -> Result<()> {
    let mut buf = Vec::new();
    history.write(&mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

struct Scored {
    ckpt: ModelCheckpoint,
    dev: NllStream,
    test: NllStream,
}

struct Runner<'a> {
    config: &'a ExperimentConfig,
    data: &'a GridData,
    out: PathBuf,
}

impl Runner<'_> {
    fn hash(&self) -> String {
        self.data.vocab.hash()
    }

    fn train_source(&self, name: &str, fraction: f64, seed: u64) -> Result<ModelCheckpoint> {
        let cfg = self.config.source_train_config();
        let [tr, dev, _] = &self.data.corpora[name];
        let tr = subsample(tr, fraction, seed);
        let id = if fraction >= 1.0 {
            name.to_string()
        } else {
            format!("{name}-{}-s{seed}", fraction_label(fraction))
        };
        info!("training source model {id}");
        let mut start = init_model(self.data.arch, &self.hash(), cfg.seed);
        start.provenance.trained_on = vec![name.to_string()];
        let (mut ckpt, history) = train(&start, &tr, dev, &cfg)?;
        ckpt.id = id.clone();
        let dir = self.out.join("sources");
        fs::create_dir_all(&dir)?;
        save_checkpoint(&ckpt, &dir.join(format!("{id}.ckpt")))?;
        write_history(&dir.join(format!("{id}.history.tsv")), &history)?;
        Ok(ckpt)
    }

    fn train_cell(&self, start: ModelCheckpoint, id: String, fraction: f64, seed: u64, dir: &Path) -> Result<Scored> {
        let cfg = TrainConfig {
            seed,
            ..self.config.train.clone()
        };
        let [tr, dev, test] = &self.data.corpora[&self.config.target];
        let tr = match self.config.sweep_side {
            SweepSide::Target => subsample(tr, fraction, seed),
            SweepSide::Source => tr.clone(),
        };
        let mut start = start;
        start.provenance.trained_on.push(self.config.target.clone());
        let (mut ckpt, history) = train(&start, &tr, dev, &cfg)?;
        ckpt.id = id;
        let opts = cfg.score_options();
        let dev_stream = score_corpus(&ckpt, dev, &self.data.target_classes, opts)?;
        let test_stream = score_corpus(&ckpt, test, &self.data.target_classes, opts)?;
        fs::create_dir_all(dir)?;
        save_checkpoint(&ckpt, &dir.join("model.ckpt"))?;
        write_history(&dir.join("history.tsv"), &history)?;
        dev_stream.save(&dir.join("dev.nll"))?;
        test_stream.save(&dir.join("test.nll"))?;
        Ok(Scored {
            ckpt,
            dev: dev_stream,
            test: test_stream,
        })
    }

    fn compare(&self, cell: &Scored, base: Option<&Scored>) -> Result<CellMetrics> {
        let mut m = CellMetrics {
            dev_ppl: word_perplexity(&cell.dev)?,
            test_word_ppl: word_perplexity(&cell.test)?,
            test_char_ppl: char_perplexity(&cell.test)?,
            lambda: None,
            interp_ppl: None,
            mean_cosine: None,
        };
        if let Some(base) = base {
            let (lambda, _) = optimize_lambda(&cell.dev, &base.dev)?;
            m.lambda = Some(lambda);
            m.interp_ppl = Some(word_perplexity(&interpolate(&cell.test, &base.test, lambda)?)?);
            let a = extract_output_embeddings(&cell.ckpt);
            let b = extract_output_embeddings(&base.ckpt);
            m.mean_cosine = match compare_embeddings(&a, &b, self.config.exclude_zero_rows) {
                Ok(r) => Some(r.mean_cosine),
                Err(Error::DegenerateInput(why)) => {
                    warn!("mean cosine unavailable: {why}");
                    None
                }
                Err(e) => return Err(e),
            };
        }
        Ok(m)
    }
}

fn run(config: &ExperimentConfig, fractions: &[f64]) -> Result<GridReport> {
    let data = GridData::load(config)?;
    run_with_data(config, &data, fractions)
}

/// Runs the grid over already loaded data. Cell failures are recorded in
/// the report; only setup problems are returned as errors.
pub fn run_with_data(config: &ExperimentConfig, data: &GridData, fractions: &[f64]) -> Result<GridReport> {
    fs::create_dir_all(&config.output_dir)?;
    data.vocab.save(&config.output_dir.join("vocab.txt"))?;
    let runner = Runner {
        config,
        data,
        out: config.output_dir.clone(),
    };
    let target = &config.target;
    let source_fractions_vary = config.sweep_side == SweepSide::Source;

    let mut sources: BTreeMap<String, std::result::Result<ModelCheckpoint, String>> = BTreeMap::new();
    if !source_fractions_vary {
        for s in &config.sources {
            let ckpt = match config.pretrained.get(s) {
                Some(path) => load_checkpoint(path),
                None => runner.train_source(s, 1.0, config.source_seed()),
            };
            sources.insert(s.clone(), ckpt.map_err(|e| e.to_string()));
        }
    }

    let mut rows = Vec::new();
    let mut baselines: BTreeMap<(u64, String), std::result::Result<Scored, String>> = BTreeMap::new();
    for &fraction in fractions {
        let target_fraction = if source_fractions_vary { 1.0 } else { fraction };
        for &seed in &config.seeds {
            let base_key = (seed, fraction_label(target_fraction));
            if !baselines.contains_key(&base_key) {
                let id = format!("{target}-baseline-s{seed}-{}", fraction_label(target_fraction));
                let dir = runner.out.join("runs").join(fraction_label(target_fraction)).join(format!("s{seed}")).join("baseline");
                info!("training {id}");
                let scored = runner
                    .train_cell(init_model(data.arch, &runner.hash(), seed), id, target_fraction, seed, &dir)
                    .map_err(|e| e.to_string());
                baselines.insert(base_key.clone(), scored);
            }
            let base = baselines[&base_key].as_ref().ok();
            rows.push(GridRow {
                source: None,
                depth: 0,
                seed,
                data_fraction: fraction,
                outcome: match &baselines[&base_key] {
                    Ok(b) => runner.compare(b, None).map_err(|e| e.to_string()),
                    Err(e) => Err(e.clone()),
                },
            });

            for s in &config.sources {
                let source = if source_fractions_vary {
                    runner.train_source(s, fraction, seed).map_err(|e| e.to_string())
                } else {
                    sources[s].clone()
                };
                for &depth in &config.depths {
                    let id = format!("{target}-{s}-l{depth}-s{seed}-{}", fraction_label(fraction));
                    let dir = runner.out.join("runs").join(fraction_label(fraction)).join(format!("s{seed}")).join(format!("{s}-l{depth}"));
                    info!("training {id}");
                    let outcome = match &source {
                        Err(e) => Err(format!("source model: {e}")),
                        Ok(src) => transfer_initialize(src, depth, &runner.hash(), seed)
                            .and_then(|start| runner.train_cell(start, id, target_fraction, seed, &dir))
                            .and_then(|cell| runner.compare(&cell, base))
                            .map_err(|e| e.to_string()),
                    };
                    if let Err(e) = &outcome {
                        warn!("cell {s} l={depth} seed={seed} fraction={fraction} failed: {e}");
                    }
                    rows.push(GridRow {
                        source: Some(s.clone()),
                        depth,
                        seed,
                        data_fraction: fraction,
                        outcome,
                    });
                }
            }
        }
    }
    Ok(GridReport { rows })
}

/// Every (source, depth, seed) cell plus one baseline per seed, on the full
/// target training set.
pub fn run_transfer_grid(config: &ExperimentConfig) -> Result<GridReport> {
    run(config, &[1.0])
}

/// The transfer grid repeated for each configured data fraction, with the
/// training set selected by `sweep_side` subsampled per seed.
pub fn run_datasize_sweep(config: &ExperimentConfig) -> Result<GridReport> {
    let fractions = config
        .data_fractions
        .clone()
        .ok_or_else(|| Error::Config("data_fractions is required for a sweep".into()))?;
    run(config, &fractions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn subsampling_rules() {
        assert_eq!(subsample_indices(10, 1.0, 3), (0..10).collect::<Vec<_>>());
        assert_eq!(subsample_indices(10, 0.25, 3).len(), 3);
        assert_eq!(subsample_indices(10, 0.5, 3), subsample_indices(10, 0.5, 3));
        assert_ne!(subsample_indices(100, 0.5, 3), subsample_indices(100, 0.5, 4));
        assert_eq!(subsample_indices(0, 0.5, 3), Vec::<usize>::new());
    }

    proptest! {
        #[test]
        fn smaller_fractions_are_nested(n in 0usize..300, a in 0.01f64..1.0, b in 0.01f64..1.0, seed in 0u64..50) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let small = subsample_indices(n, lo, seed);
            let large = subsample_indices(n, hi, seed);
            prop_assert!(small.iter().all(|i| large.binary_search(i).is_ok()));
            prop_assert!(large.windows(2).all(|w| w[0] < w[1]));
        }
    }

    fn row(source: Option<&str>, seed: u64, fraction: f64, ppl: f64) -> GridRow {
        GridRow {
            source: source.map(str::to_string),
            depth: if source.is_some() { 1 } else { 0 },
            seed,
            data_fraction: fraction,
            outcome: Ok(CellMetrics {
                dev_ppl: ppl,
                test_word_ppl: ppl,
                test_char_ppl: 2.0,
                lambda: None,
                interp_ppl: None,
                mean_cosine: None,
            }),
        }
    }

    #[test]
    fn gains_are_relative_to_matching_baseline() {
        let report = GridReport {
            rows: vec![
                row(None, 1, 0.5, 100.0),
                row(Some("a"), 1, 0.5, 80.0),
                row(None, 2, 0.5, 200.0),
                row(Some("a"), 2, 0.5, 100.0),
                row(None, 1, 1.0, 50.0),
                row(Some("a"), 1, 1.0, 50.0),
            ],
        };
        assert_eq!(report.relative_gain(&report.rows[1]), Some(0.2));
        let gains = report.mean_gain_by_fraction("a", 1);
        assert_eq!(gains.len(), 2);
        assert!((gains[0].1 - 0.35).abs() < 1e-12);
        assert_eq!(gains[1], (1.0, 0.0));
        assert_eq!(report.failures().count(), 0);
    }
}
