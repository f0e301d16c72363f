use std::io::{BufRead, Write};

use log::debug;
use serde::{Deserialize, Serialize};

use super::checkpoint::ModelCheckpoint;
use super::optimizer::{adagrad_step, OptimizerState, DEFAULT_ADAGRAD_EPSILON};
use crate::corpus::{make_batches, EncodedCorpus, UnitClass};
use crate::error::{Error, Result};
use crate::evaluation::{char_perplexity, score_corpus, word_perplexity, ScoreOptions};
use crate::neural::{backward, forward, total_loss, Mode};

/// Optimization settings. Defaults are Adagrad at learning rate 0.1,
/// dropout 0.2, 64 sequences of 100 tokens per mini-batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub seq_len: usize,
    pub max_epochs: usize,
    /// Training stops once the learning rate has been halved this many times.
    pub max_halvings: usize,
    pub adagrad_epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            dropout: 0.2,
            batch_size: 64,
            seq_len: 100,
            max_epochs: 20,
            max_halvings: 4,
            adagrad_epsilon: DEFAULT_ADAGRAD_EPSILON,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.seq_len < 2 {
            return Err(Error::Config("batch_size >= 1 and seq_len >= 2 required".into()));
        }
        if !(self.adagrad_epsilon > 0.0) {
            return Err(Error::Config("adagrad_epsilon must be positive".into()));
        }
        Ok(())
    }

    pub fn score_options(&self) -> ScoreOptions {
        ScoreOptions {
            batch_size: self.batch_size,
            seq_len: self.seq_len,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_nll_sum: f64,
    pub train_token_count: usize,
    pub dev_word_ppl: f64,
    pub lr: f64,
}

/// Per-epoch log; epoch 0 is the evaluation of the starting weights.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
}

const HISTORY_HEADER: &str = "epoch\ttrain_nll_sum\ttrain_token_count\tdev_word_ppl\tlr";

impl TrainingHistory {
    pub fn best_dev_ppl(&self) -> Option<f64> {
        self.epochs.iter().map(|e| e.dev_word_ppl).reduce(f64::min)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{HISTORY_HEADER}")?;
        for e in &self.epochs {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}",
                e.epoch, e.train_nll_sum, e.train_token_count, e.dev_word_ppl, e.lr
            )?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut epochs = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if i == 0 || line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let bad = || Error::Format(format!("bad history line {line:?}"));
            if f.len() != 5 {
                return Err(bad());
            }
            epochs.push(EpochRecord {
                epoch: f[0].parse().map_err(|_| bad())?,
                train_nll_sum: f[1].parse().map_err(|_| bad())?,
                train_token_count: f[2].parse().map_err(|_| bad())?,
                dev_word_ppl: f[3].parse().map_err(|_| bad())?,
                lr: f[4].parse().map_err(|_| bad())?,
            });
        }
        Ok(TrainingHistory { epochs })
    }
}

/// SplitMix64 finalizer, used to derive per-epoch and per-step seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn dev_ppl(ckpt: &ModelCheckpoint, dev: &EncodedCorpus, classes: &[UnitClass], opts: ScoreOptions) -> Result<f64> {
    word_perplexity(&score_corpus(ckpt, dev, classes, opts)?)
}

/// Character perplexity of `corpus` under `ckpt` in eval mode.
pub fn corpus_char_ppl(ckpt: &ModelCheckpoint, corpus: &EncodedCorpus, opts: ScoreOptions) -> Result<f64> {
    let classes = vec![UnitClass::SPECIAL; ckpt.arch().vocab_size];
    char_perplexity(&score_corpus(ckpt, corpus, &classes, opts)?)
}

/// Shuffled mini-batch Adagrad with best-dev model selection.
///
/// After every epoch the weights are rounded to storage precision and
/// scored on `dev`. When dev perplexity does not improve on the best so
/// far, the best weights are restored and the learning rate is halved;
/// training ends after `max_halvings` halvings or `max_epochs` epochs. The
/// optimizer always starts from zero accumulators.
pub fn train(
    start: &ModelCheckpoint,
    train_corpus: &EncodedCorpus,
    dev_corpus: &EncodedCorpus,
    config: &TrainConfig,
) -> Result<(ModelCheckpoint, TrainingHistory)> {
    config.validate()?;
    for c in [train_corpus, dev_corpus] {
        if c.vocab_hash != start.vocab_hash {
            return Err(Error::VocabMismatch {
                expected: start.vocab_hash.clone(),
                found: c.vocab_hash.clone(),
            });
        }
    }
    let opts = config.score_options();
    let classes = vec![UnitClass::SPECIAL; start.arch().vocab_size];

    let mut best = start.clone();
    let mut best_ppl = dev_ppl(&best, dev_corpus, &classes, opts)?;
    let mut lr = config.learning_rate;
    let mut history = TrainingHistory::default();
    history.epochs.push(EpochRecord {
        epoch: 0,
        train_nll_sum: 0.0,
        train_token_count: 0,
        dev_word_ppl: best_ppl,
        lr,
    });

    let mut params = start.params().clone();
    let mut state = OptimizerState::with_epsilon(&params, config.adagrad_epsilon);
    let mut halvings = 0;
    let mut trained_epochs = 0;
    for epoch in 1..=config.max_epochs {
        let epoch_seed = mix_seed(config.seed, epoch as u64);
        let batches = make_batches(train_corpus, config.batch_size, config.seq_len, epoch_seed, true);
        let mut nll_sum = 0.0;
        let mut tokens = 0;
        for (step, batch) in batches.iter().enumerate() {
            let mode = Mode::Train {
                dropout: config.dropout,
                seed: mix_seed(epoch_seed, step as u64),
            };
            let numeric = |e: Error| match e {
                Error::NonFinite(what) => Error::NonFinite(format!("epoch {epoch}: {what}")),
                other => other,
            };
            let (nll, cache) = forward(&params, batch, mode).map_err(numeric)?;
            nll_sum += total_loss(&nll);
            tokens += batch.active_tokens();
            let grads = backward(&params, cache).map_err(numeric)?;
            adagrad_step(&mut params, &grads, &mut state, lr).map_err(numeric)?;
        }
        params.round_to_f32();
        trained_epochs = epoch;
        let candidate = ModelCheckpoint::new(start.id.clone(), params.clone(), start.vocab_hash.clone());
        let ppl = dev_ppl(&candidate, dev_corpus, &classes, opts)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_nll_sum: nll_sum,
            train_token_count: tokens,
            dev_word_ppl: ppl,
            lr,
        });
        debug!("epoch {epoch}: train nll/token {:.4}, dev ppl {ppl:.4}, lr {lr}", nll_sum / tokens.max(1) as f64);
        if ppl < best_ppl {
            best_ppl = ppl;
            best = candidate;
        } else {
            halvings += 1;
            lr *= 0.5;
            params = best.params().clone();
            if halvings >= config.max_halvings {
                break;
            }
        }
    }
    best.provenance = start.provenance.clone();
    best.provenance.epochs = trained_epochs;
    best.provenance.final_dev_ppl = Some(best_ppl);
    Ok((best, history))
}
