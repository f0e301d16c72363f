//! Synthetic languages: character Markov chains whose transition matrices
//! can be interpolated to control how related two languages are.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, Geometric};
use serde::{Deserialize, Serialize};

use super::config::LanguagePaths;
use crate::corpus::VowelSet;
use crate::error::{Error, Result};
use crate::neural::Matrix;
use crate::training::mix_seed;

/// Letters in emission order; vowels are spread through the prefix so that
/// every alphabet size mixes vowels and consonants.
pub const ALPHABET: &str = "atenisokulrmypdhvjgbfcwzxqATENISOKULRMYPDHVJGBFCWZXQ";

/// Probability mass spread uniformly over all successors, which keeps every
/// chain irreducible and aperiodic.
const TELEPORT: f64 = 0.02;

const STREAM_BASE: u64 = 1;
const STREAM_PERTURB: u64 = 2;
const STREAM_SOURCE_TEXT: u64 = 3;
const STREAM_TARGET_TEXT: u64 = 4;
const STREAM_FAMILY_TEXT: u64 = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub alphabet_size: usize,
    /// Hidden states; state `s` emits letter `s mod alphabet_size`.
    pub n_states: usize,
    /// 0 gives both languages the same generator, 1 independent ones.
    pub relatedness: f64,
    pub sentences: usize,
    pub mean_word_len: f64,
    /// Mean number of words per sentence.
    pub mean_sent_len: f64,
    pub seed: u64,
    /// Successors with non-teleport mass per state.
    #[serde(default = "default_successors")]
    pub successors: usize,
}

fn default_successors() -> usize {
    3
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let max = ALPHABET.chars().count();
        if self.alphabet_size == 0 || self.alphabet_size > max {
            return Err(Error::Config(format!("alphabet_size must be in 1..={max}")));
        }
        if self.n_states < self.alphabet_size {
            return Err(Error::Config("n_states must be at least alphabet_size".into()));
        }
        if !(0.0..=1.0).contains(&self.relatedness) {
            return Err(Error::Config("relatedness must be in [0, 1]".into()));
        }
        if !(self.mean_word_len >= 1.0) || !(self.mean_sent_len >= 1.0) {
            return Err(Error::Config("mean lengths must be at least 1".into()));
        }
        if self.successors == 0 || self.successors > self.n_states {
            return Err(Error::Config("successors must be in 1..=n_states".into()));
        }
        Ok(())
    }
}

/// Hidden-state Markov chain over letters.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    pub alphabet: Vec<char>,
    /// Row-stochastic `[n_states × n_states]`.
    pub transitions: Matrix,
}

impl MarkovChain {
    /// Each row puts Dirichlet(1) weights on a few random successors, plus
    /// a small uniform floor.
    pub fn random(alphabet_size: usize, n_states: usize, successors: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gamma = Gamma::new(1.0, 1.0).expect("valid gamma parameters");
        let mut t = Matrix::zeros(n_states, n_states);
        for s in 0..n_states {
            let picks = sample(&mut rng, n_states, successors);
            let weights: Vec<f64> = (0..successors).map(|_| gamma.sample(&mut rng)).collect();
            let total: f64 = weights.iter().sum();
            let row = t.row_mut(s);
            row.fill(TELEPORT / n_states as f64);
            for (j, w) in picks.iter().zip(&weights) {
                row[j] += (1.0 - TELEPORT) * w / total;
            }
        }
        MarkovChain {
            alphabet: ALPHABET.chars().take(alphabet_size).collect(),
            transitions: t,
        }
    }

    pub fn n_states(&self) -> usize {
        self.transitions.rows()
    }

    pub fn emission(&self, state: usize) -> char {
        self.alphabet[state % self.alphabet.len()]
    }

    /// `(1 − ε)·self + ε·other`.
    pub fn mix(&self, other: &MarkovChain, epsilon: f64) -> MarkovChain {
        let a = self.transitions.as_slice();
        let b = other.transitions.as_slice();
        let data = a.iter().zip(b).map(|(x, y)| (1.0 - epsilon) * x + epsilon * y).collect();
        MarkovChain {
            alphabet: self.alphabet.clone(),
            transitions: Matrix::from_vec(self.n_states(), self.n_states(), data).expect("same shape"),
        }
    }

    /// Stationary state distribution by power iteration.
    pub fn stationary(&self) -> Vec<f64> {
        let n = self.n_states();
        let mut pi = vec![1.0 / n as f64; n];
        for _ in 0..100_000 {
            let mut next = vec![0.0; n];
            for (i, p) in pi.iter().enumerate() {
                for (j, t) in self.transitions.row(i).iter().enumerate() {
                    next[j] += p * t;
                }
            }
            let z: f64 = next.iter().sum();
            next.iter_mut().for_each(|x| *x /= z);
            let delta: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
            pi = next;
            if delta < 1e-14 {
                break;
            }
        }
        pi
    }

    /// Stationary distribution of emitted letters, indexed like `alphabet`.
    pub fn letter_distribution(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.alphabet.len()];
        for (s, p) in self.stationary().iter().enumerate() {
            out[s % self.alphabet.len()] += p;
        }
        out
    }

    /// Sentences of space-separated words. Each sentence starts in a
    /// stationary state and runs one chain across its word boundaries; word
    /// and sentence lengths are geometric on `1..`.
    pub fn sample(&self, sentences: usize, mean_word_len: f64, mean_sent_len: f64, seed: u64) -> Vec<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = WeightedIndex::new(self.stationary()).expect("stationary distribution is positive");
        let rows: Vec<WeightedIndex<f64>> = (0..self.n_states())
            .map(|s| WeightedIndex::new(self.transitions.row(s)).expect("row is positive"))
            .collect();
        let word_len = Geometric::new(1.0 / mean_word_len).expect("valid mean");
        let sent_len = Geometric::new(1.0 / mean_sent_len).expect("valid mean");
        (0..sentences)
            .map(|_| {
                let mut state = start.sample(&mut rng);
                let words = 1 + sent_len.sample(&mut rng);
                let mut line = String::new();
                for w in 0..words {
                    if w > 0 {
                        line.push(' ');
                        state = rows[state].sample(&mut rng);
                    }
                    let len = 1 + word_len.sample(&mut rng);
                    for c in 0..len {
                        if c > 0 {
                            state = rows[state].sample(&mut rng);
                        }
                        line.push(self.emission(state as usize));
                    }
                }
                line
            })
            .collect()
    }
}

/// The two generators behind [`generate_synthetic_pair`]: the source chain
/// `T` and the target chain `(1 − ε)·T + ε·T'`.
pub fn synthetic_chains(spec: &SynthSpec) -> Result<(MarkovChain, MarkovChain)> {
    spec.validate()?;
    let base = MarkovChain::random(spec.alphabet_size, spec.n_states, spec.successors, mix_seed(spec.seed, STREAM_BASE));
    let other = MarkovChain::random(spec.alphabet_size, spec.n_states, spec.successors, mix_seed(spec.seed, STREAM_PERTURB));
    let target = base.mix(&other, spec.relatedness);
    Ok((base, target))
}

/// `spec.sentences` sentences from each of the source and target generators.
pub fn generate_synthetic_pair(spec: &SynthSpec) -> Result<(Vec<String>, Vec<String>)> {
    let (source, target) = synthetic_chains(spec)?;
    let s = source.sample(spec.sentences, spec.mean_word_len, spec.mean_sent_len, mix_seed(spec.seed, STREAM_SOURCE_TEXT));
    let t = target.sample(spec.sentences, spec.mean_word_len, spec.mean_sent_len, mix_seed(spec.seed, STREAM_TARGET_TEXT));
    Ok((s, t))
}

/// One target chain and several sources at given distances from it. Source
/// `k` is `(1 − ε_k)·T + ε_k·T'_k` with every `T'_k` drawn independently.
pub fn synthetic_family(spec: &SynthSpec, relatedness: &[f64]) -> Result<(MarkovChain, Vec<MarkovChain>)> {
    spec.validate()?;
    if let Some(e) = relatedness.iter().find(|e| !(0.0..=1.0).contains(*e)) {
        return Err(Error::Config(format!("relatedness {e} outside [0, 1]")));
    }
    let target = MarkovChain::random(spec.alphabet_size, spec.n_states, spec.successors, mix_seed(spec.seed, STREAM_BASE));
    let sources = relatedness
        .iter()
        .enumerate()
        .map(|(k, &e)| {
            let seed = mix_seed(mix_seed(spec.seed, STREAM_PERTURB), k as u64);
            target.mix(&MarkovChain::random(spec.alphabet_size, spec.n_states, spec.successors, seed), e)
        })
        .collect();
    Ok((target, sources))
}

/// Sentence counts of the three splits of one synthetic language.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

/// One source language of a synthetic family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSource {
    pub name: String,
    pub relatedness: f64,
    pub sizes: SplitSizes,
}

/// Writes `{dir}/{language}/{train,dev,test}.txt` for a target drawn from
/// `spec` and sources at the given distances from it. `spec.relatedness`
/// and `spec.sentences` are not used. Returns the written paths by language.
pub fn write_synthetic_family(
    dir: &Path,
    spec: &SynthSpec,
    target: &str,
    target_sizes: SplitSizes,
    sources: &[SynthSource],
) -> Result<BTreeMap<String, LanguagePaths>> {
    let eps: Vec<f64> = sources.iter().map(|s| s.relatedness).collect();
    let (target_chain, source_chains) = synthetic_family(spec, &eps)?;
    let langs = std::iter::once((target, &target_chain, target_sizes))
        .chain(sources.iter().zip(&source_chains).map(|(s, c)| (s.name.as_str(), c, s.sizes)));
    let mut out = BTreeMap::new();
    for (k, (name, chain, sizes)) in langs.enumerate() {
        if out.contains_key(name) {
            return Err(Error::Config(format!("language {name:?} listed twice")));
        }
        let lang_dir = dir.join(name);
        fs::create_dir_all(&lang_dir)?;
        let mut paths = Vec::new();
        for (split, (file, n)) in [("train.txt", sizes.train), ("dev.txt", sizes.dev), ("test.txt", sizes.test)]
            .into_iter()
            .enumerate()
        {
            let seed = mix_seed(mix_seed(spec.seed, STREAM_FAMILY_TEXT + k as u64), split as u64);
            let mut text = chain.sample(n, spec.mean_word_len, spec.mean_sent_len, seed).join("\n");
            text.push('\n');
            let path = lang_dir.join(file);
            fs::write(&path, text)?;
            paths.push(path);
        }
        let [train, dev, test]: [PathBuf; 3] = paths.try_into().expect("three splits");
        out.insert(
            name.to_string(),
            LanguagePaths {
                train,
                dev,
                test,
                vowels: Some(chain.alphabet.iter().filter(|c| VowelSet::english().contains(**c)).collect()),
            },
        );
    }
    Ok(out)
}

/// Total-variation distance between two distributions over the same support.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Relative letter frequencies of `sentences`, indexed like `alphabet`.
pub fn letter_frequencies(sentences: &[String], alphabet: &[char]) -> Vec<f64> {
    let mut counts = vec![0usize; alphabet.len()];
    for c in sentences.iter().flat_map(|s| s.chars()) {
        if let Some(i) = alphabet.iter().position(|&a| a == c) {
            counts[i] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    counts.iter().map(|&c| c as f64 / total.max(1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(relatedness: f64) -> SynthSpec {
        SynthSpec {
            alphabet_size: 8,
            n_states: 12,
            relatedness,
            sentences: 50,
            mean_word_len: 4.0,
            mean_sent_len: 6.0,
            seed: 11,
            successors: 3,
        }
    }

    #[test]
    fn zero_relatedness_shares_the_generator() {
        let (s, t) = synthetic_chains(&spec(0.0)).unwrap();
        assert_eq!(s, t);
        let (a, b) = generate_synthetic_pair(&spec(0.0)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn full_relatedness_gives_independent_generator() {
        let (s, t) = synthetic_chains(&spec(1.0)).unwrap();
        let other = MarkovChain::random(8, 12, 3, mix_seed(11, STREAM_PERTURB));
        assert_eq!(t, other);
        assert_ne!(s, t);
    }

    #[test]
    fn rows_are_stochastic_and_positive() {
        let (_, t) = synthetic_chains(&spec(0.3)).unwrap();
        for r in 0..t.n_states() {
            let row = t.transitions.row(r);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&p| p > 0.0));
        }
        let pi = t.stationary();
        assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_seeded_and_respects_alphabet() {
        let a = generate_synthetic_pair(&spec(0.5)).unwrap();
        assert_eq!(a, generate_synthetic_pair(&spec(0.5)).unwrap());
        let letters: Vec<char> = ALPHABET.chars().take(8).collect();
        for line in a.0.iter().chain(&a.1) {
            assert!(!line.is_empty() && !line.starts_with(' ') && !line.contains("  "));
            assert!(line.chars().all(|c| c == ' ' || letters.contains(&c)));
        }
    }

    #[test]
    fn mean_lengths_are_respected() {
        let chain = MarkovChain::random(8, 12, 3, 5);
        let text = chain.sample(4000, 4.0, 6.0, 9);
        let words: Vec<&str> = text.iter().flat_map(|s| s.split(' ')).collect();
        let wl = words.iter().map(|w| w.len()).sum::<usize>() as f64 / words.len() as f64;
        let sl = words.len() as f64 / text.len() as f64;
        assert!((wl - 4.0).abs() < 0.1, "word length {wl}");
        assert!((sl - 6.0).abs() < 0.2, "sentence length {sl}");
    }

    #[test]
    fn family_sources_sit_at_their_distances() {
        let (target, sources) = synthetic_family(&spec(0.0), &[0.0, 0.2, 1.0]).unwrap();
        assert_eq!(sources[0], target);
        let d = |m: &MarkovChain| m.transitions.max_abs_diff(&target.transitions);
        assert!(d(&sources[1]) > 0.0 && d(&sources[1]) < d(&sources[2]));
        assert!(synthetic_family(&spec(0.0), &[1.5]).is_err());
    }

    #[test]
    fn rejects_invalid_specs() {
        let mut s = spec(0.2);
        s.n_states = 4;
        assert!(s.validate().is_err());
        let mut s = spec(1.2);
        assert!(s.validate().is_err());
        s = spec(0.2);
        s.alphabet_size = 99;
        assert!(s.validate().is_err());
    }

    #[test]
    fn writes_family_files() {
        let dir = tempfile::tempdir().unwrap();
        let sizes = SplitSizes { train: 5, dev: 2, test: 3 };
        let sources = [SynthSource { name: "near".into(), relatedness: 0.2, sizes }];
        let paths = write_synthetic_family(dir.path(), &spec(0.0), "tgt", sizes, &sources).unwrap();
        assert_eq!(paths.keys().collect::<Vec<_>>(), ["near", "tgt"]);
        let test = fs::read_to_string(&paths["tgt"].test).unwrap();
        assert_eq!(test.lines().count(), 3);
        assert_eq!(paths["tgt"].vowels.as_deref(), Some("aeio"));
        let again = tempfile::tempdir().unwrap();
        let p2 = write_synthetic_family(again.path(), &spec(0.0), "tgt", sizes, &sources).unwrap();
        assert_eq!(fs::read(&p2["near"].train).unwrap(), fs::read(&paths["near"].train).unwrap());
        let dup = [SynthSource { name: "tgt".into(), relatedness: 0.2, sizes }];
        assert!(write_synthetic_family(dir.path(), &spec(0.0), "tgt", sizes, &dup).is_err());
    }

    #[test]
    fn total_variation_bounds() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(total_variation(&p, &p), 0.0);
        assert_eq!(total_variation(&[1.0, 0.0], &[0.0, 1.0]), 1.0);
    }
}
