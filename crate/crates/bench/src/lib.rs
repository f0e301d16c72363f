//! Benchmark fixtures shared by the criterion benches.

use charlm_core::corpus::{make_batches, Batch, EncodedCorpus, Vocabulary};
use charlm_core::harness::MarkovChain;
use charlm_core::neural::Arch;

/// Encoded synthetic corpus with its vocabulary.
pub fn synthetic_corpus(sentences: usize, seed: u64) -> (Vocabulary, EncodedCorpus) {
    let lines = MarkovChain::random(36, 36, 3, seed).sample(sentences, 5.0, 6.0, seed);
    let text = lines.join("\n");
    let vocab = charlm_core::corpus::build_vocabulary([("bench".to_string(), text.as_bytes())])
        .expect("synthetic text is valid");
    let corpus = charlm_core::corpus::encode_corpus(text.as_bytes(), &vocab).expect("encodes");
    (vocab, corpus)
}

/// The first full batch of `corpus`.
pub fn first_batch(corpus: &EncodedCorpus, batch_size: usize, seq_len: usize) -> Batch {
    make_batches(corpus, batch_size, seq_len, 0, false)
        .into_iter()
        .next()
        .expect("corpus is non-empty")
}

pub fn desk_arch(vocab: &Vocabulary) -> Arch {
    Arch::desk(vocab.len())
}
