//! Per-token NLL streams and everything derived from them: word, character
//! and per-class perplexity, relative class differences, and linear
//! interpolation of two models with a development-set-optimized weight.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::corpus::{make_batches, EncodedCorpus, TokenId, UnitClass, Vocabulary, VowelSet};
use crate::error::{Error, Result};
use crate::neural::{forward, Mode};
use crate::training::ModelCheckpoint;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenRecord {
    pub token_id: TokenId,
    pub probability: f64,
    pub nll: f64,
    pub unit_class: UnitClass,
    pub sentence_index: usize,
    /// Corpus-wide index of the word containing the predicted token.
    pub word_index: usize,
}

/// One record per predicted token, in corpus order.
#[derive(Debug, Clone, PartialEq)]
pub struct NllStream {
    pub records: Vec<TokenRecord>,
    pub word_count: usize,
    pub source_model: String,
    pub vocab_hash: String,
}

/// Batching used when scoring; does not affect results except through the
/// window length, which bounds how much context a prediction sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoreOptions {
    pub batch_size: usize,
    pub seq_len: usize,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            batch_size: 64,
            seq_len: 100,
        }
    }
}

/// Unit class of every vocabulary id.
pub fn vocabulary_classes(vocab: &Vocabulary, vowels: &VowelSet) -> Vec<UnitClass> {
    vocab
        .units()
        .iter()
        .map(|u| crate::corpus::classify_unit(u, vowels))
        .collect()
}

/// Eval-mode scoring of every predicted token of `corpus`.
pub fn score_corpus(
    ckpt: &ModelCheckpoint,
    corpus: &EncodedCorpus,
    classes: &[UnitClass],
    opts: ScoreOptions,
) -> Result<NllStream> {
    if ckpt.vocab_hash != corpus.vocab_hash {
        return Err(Error::VocabMismatch {
            expected: corpus.vocab_hash.clone(),
            found: ckpt.vocab_hash.clone(),
        });
    }
    if classes.len() != ckpt.arch().vocab_size {
        return Err(Error::ShapeMismatch(format!(
            "{} unit classes for a vocabulary of {}",
            classes.len(),
            ckpt.arch().vocab_size
        )));
    }
    let mut word_offset = Vec::with_capacity(corpus.len());
    let mut acc = 0;
    for spans in &corpus.word_spans {
        word_offset.push(acc);
        acc += spans.len();
    }

    let mut records = Vec::with_capacity(corpus.prediction_count());
    for batch in make_batches(corpus, opts.batch_size, opts.seq_len, 0, false) {
        let (nll, cache) = forward(ckpt.params(), &batch, Mode::Eval)?;
        for (row, origin) in batch.origins.iter().enumerate() {
            let Some(origin) = origin else { continue };
            let spans = &corpus.word_spans[origin.sentence];
            let mut w = 0;
            for t in 0..batch.seq_len {
                let k = batch.at(row, t);
                if batch.mask[k] == 0 {
                    break;
                }
                let pos = origin.start + t + 1;
                while spans[w].1 <= pos {
                    w += 1;
                }
                let token_id = batch.targets[k];
                let token_nll = nll[(row, t)];
                records.push(TokenRecord {
                    token_id,
                    probability: cache.distribution(row, t)[token_id as usize],
                    nll: token_nll,
                    unit_class: classes[token_id as usize],
                    sentence_index: origin.sentence,
                    word_index: word_offset[origin.sentence] + w,
                });
            }
        }
    }
    Ok(NllStream {
        records,
        word_count: corpus.word_count,
        source_model: ckpt.id.clone(),
        vocab_hash: ckpt.vocab_hash.clone(),
    })
}

impl NllStream {
    pub fn nll_sum(&self) -> f64 {
        self.records.iter().map(|r| r.nll).sum()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            self.records.len(),
            self.word_count,
            self.source_model,
            self.vocab_hash
        )?;
        for r in &self.records {
            writeln!(
                w,
                "{}\t{:.16e}\t{}\t{}\t{}",
                r.token_id,
                r.probability,
                r.unit_class.code(),
                r.sentence_index,
                r.word_index
            )?;
        }
        Ok(())
    }

    /// Parses the stream file. NLL is recomputed as `−ln p`.
    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty stream file".into()))??;
        let fields: Vec<&str> = header.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Format("stream header needs 4 fields".into()));
        }
        let count: usize = parse(fields[0], "record count")?;
        let word_count = parse(fields[1], "word count")?;
        let mut records = Vec::with_capacity(count);
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(Error::Format(format!("bad stream record {line:?}")));
            }
            let probability: f64 = parse(f[1], "probability")?;
            if !(probability > 0.0 && probability <= 1.0) {
                return Err(Error::Format(format!("probability {probability} outside (0, 1]")));
            }
            records.push(TokenRecord {
                token_id: parse(f[0], "token id")?,
                probability,
                nll: -probability.ln(),
                unit_class: UnitClass::from_code(f[2])?,
                sentence_index: parse(f[3], "sentence index")?,
                word_index: parse(f[4], "word index")?,
            });
        }
        if records.len() != count {
            return Err(Error::Format(format!(
                "header declares {count} records, found {}",
                records.len()
            )));
        }
        Ok(NllStream {
            records,
            word_count,
            source_model: fields[2].to_string(),
            vocab_hash: fields[3].to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Format(format!("cannot parse {what} from {s:?}")))
}

pub fn word_perplexity(stream: &NllStream) -> Result<f64> {
    if stream.word_count == 0 {
        return Err(Error::EmptyStream);
    }
    Ok((stream.nll_sum() / stream.word_count as f64).exp())
}

pub fn char_perplexity(stream: &NllStream) -> Result<f64> {
    if stream.records.is_empty() {
        return Err(Error::EmptyStream);
    }
    Ok((stream.nll_sum() / stream.records.len() as f64).exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassPpl {
    pub ppl: f64,
    pub count: usize,
}

/// Perplexity restricted to each unit class present in the stream.
pub fn class_perplexity(stream: &NllStream) -> BTreeMap<UnitClass, ClassPpl> {
    let mut sums: BTreeMap<UnitClass, (f64, usize)> = BTreeMap::new();
    for r in &stream.records {
        let e = sums.entry(r.unit_class).or_default();
        e.0 += r.nll;
        e.1 += 1;
    }
    sums.into_iter()
        .map(|(c, (s, n))| {
            (
                c,
                ClassPpl {
                    ppl: (s / n as f64).exp(),
                    count: n,
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PplReport {
    pub word_ppl: f64,
    pub char_ppl: f64,
    pub per_class: BTreeMap<UnitClass, ClassPpl>,
}

impl PplReport {
    pub fn from_stream(stream: &NllStream) -> Result<Self> {
        Ok(PplReport {
            word_ppl: word_perplexity(stream)?,
            char_ppl: char_perplexity(stream)?,
            per_class: class_perplexity(stream),
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "word perplexity  {:>12.4}", self.word_ppl);
        let _ = writeln!(s, "char perplexity  {:>12.4}", self.char_ppl);
        let _ = writeln!(s, "{:<6}{:>12}{:>10}", "class", "ppl", "count");
        for (c, v) in &self.per_class {
            let _ = writeln!(s, "{:<6}{:>12.4}{:>10}", c.code(), v.ppl, v.count);
        }
        s
    }

    /// Tab-delimited `metric  value  count` rows.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("metric\tppl\tcount\n");
        let total: usize = self.per_class.values().map(|c| c.count).sum();
        let _ = writeln!(s, "word\t{}\t", self.word_ppl);
        let _ = writeln!(s, "char\t{}\t{}", self.char_ppl, total);
        for (c, v) in &self.per_class {
            let _ = writeln!(s, "{}\t{}\t{}", c.code(), v.ppl, v.count);
        }
        s
    }
}

/// `100 · (baseline − candidate) / baseline` per class; positive is better.
pub fn relative_ppl_difference(
    baseline: &PplReport,
    candidate: &PplReport,
) -> Result<BTreeMap<UnitClass, f64>> {
    if let Some(c) = baseline
        .per_class
        .keys()
        .chain(candidate.per_class.keys())
        .find(|c| !baseline.per_class.contains_key(c) || !candidate.per_class.contains_key(c))
    {
        return Err(Error::MissingClass(c.code().to_string()));
    }
    Ok(baseline
        .per_class
        .iter()
        .map(|(c, b)| (*c, 100.0 * (b.ppl - candidate.per_class[c].ppl) / b.ppl))
        .collect())
}

fn check_aligned(a: &NllStream, b: &NllStream) -> Result<()> {
    if a.records.len() != b.records.len() || a.word_count != b.word_count {
        return Err(Error::StreamMismatch(format!(
            "{} records / {} words vs {} records / {} words",
            a.records.len(),
            a.word_count,
            b.records.len(),
            b.word_count
        )));
    }
    if let Some(i) = a.records.iter().zip(&b.records).position(|(x, y)| {
        x.token_id != y.token_id
            || x.sentence_index != y.sentence_index
            || x.word_index != y.word_index
    }) {
        return Err(Error::StreamMismatch(format!("records differ at position {i}")));
    }
    Ok(())
}

/// Per-token mixture `p = λ·pA + (1 − λ)·pB`.
pub fn interpolate(a: &NllStream, b: &NllStream, lambda: f64) -> Result<NllStream> {
    check_aligned(a, b)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("interpolation weight {lambda} outside [0, 1]")));
    }
    if lambda == 1.0 {
        return Ok(a.clone());
    }
    if lambda == 0.0 {
        return Ok(b.clone());
    }
    let records = a
        .records
        .iter()
        .zip(&b.records)
        .map(|(x, y)| {
            let p = lambda * x.probability + (1.0 - lambda) * y.probability;
            TokenRecord {
                probability: p,
                nll: -p.ln(),
                ..*x
            }
        })
        .collect();
    Ok(NllStream {
        records,
        word_count: a.word_count,
        source_model: format!("{}*{lambda}+{}", a.source_model, b.source_model),
        vocab_hash: a.vocab_hash.clone(),
    })
}

/// Mixes two full output distributions, for checking normalization.
pub fn interpolate_distributions(pa: &[f64], pb: &[f64], lambda: f64) -> Vec<f64> {
    pa.iter()
        .zip(pb)
        .map(|(x, y)| lambda * x + (1.0 - lambda) * y)
        .collect()
}

fn interpolated_word_ppl(a: &NllStream, b: &NllStream, lambda: f64) -> f64 {
    let s: f64 = a
        .records
        .iter()
        .zip(&b.records)
        .map(|(x, y)| -(lambda * x.probability + (1.0 - lambda) * y.probability).ln())
        .sum();
    (s / a.word_count as f64).exp()
}

pub const LAMBDA_TOLERANCE: f64 = 1e-3;

/// Golden-section search for the interpolation weight minimizing dev word
/// perplexity. Both endpoints are always evaluated, so the result is never
/// worse than either model alone.
pub fn optimize_lambda(dev_a: &NllStream, dev_b: &NllStream) -> Result<(f64, f64)> {
    check_aligned(dev_a, dev_b)?;
    let ppl_at_1 = word_perplexity(dev_a)?;
    let ppl_at_0 = word_perplexity(dev_b)?;
    let f = |l: f64| interpolated_word_ppl(dev_a, dev_b, l);

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > LAMBDA_TOLERANCE {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    let mid = 0.5 * (lo + hi);
    let mut best = (mid, f(mid));
    for cand in [(1.0, ppl_at_1), (0.0, ppl_at_0)] {
        if cand.1 < best.1 {
            best = cand;
        }
    }
    Ok(best)
}
