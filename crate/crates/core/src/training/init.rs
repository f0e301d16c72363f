use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{ModelCheckpoint, TransferOrigin};
use crate::error::{Error, Result};
use crate::neural::{Arch, Layer, Matrix, ModelParams};

pub const FORGET_GATE_BIAS: f64 = 1.0;
pub const HIGHWAY_GATE_BIAS: f64 = -1.0;

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn glorot(m: &mut Matrix, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) {
    let bound = glorot_bound(fan_in, fan_out);
    let dist = Uniform::new_inclusive(-bound, bound);
    m.as_mut_slice().iter_mut().for_each(|x| *x = dist.sample(rng));
}

/// Fresh weights: uniform Glorot matrices, forget-gate bias 1, highway
/// transform-gate bias −1, all other biases 0. Deterministic per seed.
pub fn init_params(arch: Arch, seed: u64) -> ModelParams {
    let (v, e, h) = (arch.vocab_size, arch.embed_dim, arch.lstm_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::zeros(arch);
    glorot(&mut p.embedding, v, e, &mut rng);
    // Each gate block maps the (E + H) concatenated input to H units.
    glorot(&mut p.lstm_w, e + h, h, &mut rng);
    glorot(&mut p.hw_gate_w, h, h, &mut rng);
    glorot(&mut p.hw_lin_w, h, h, &mut rng);
    glorot(&mut p.out_w, h, v, &mut rng);
    p.lstm_b[h..2 * h].fill(FORGET_GATE_BIAS);
    p.hw_gate_b.fill(HIGHWAY_GATE_BIAS);
    p
}

pub fn init_model(arch: Arch, vocab_hash: &str, seed: u64) -> ModelCheckpoint {
    ModelCheckpoint::new(format!("init-s{seed}"), init_params(arch, seed), vocab_hash)
}

/// Copies layers `1..=depth` from `source` into a freshly initialized model;
/// the remaining layers are exactly those of `init_model(seed)`.
pub fn transfer_initialize(
    source: &ModelCheckpoint,
    depth: usize,
    target_vocab_hash: &str,
    seed: u64,
) -> Result<ModelCheckpoint> {
    if depth > Layer::ALL.len() {
        return Err(Error::BadDepth(depth));
    }
    if source.vocab_hash != target_vocab_hash {
        return Err(Error::VocabMismatch {
            expected: target_vocab_hash.to_string(),
            found: source.vocab_hash.clone(),
        });
    }
    let mut params = init_params(source.arch(), seed);
    for layer in &Layer::ALL[..depth] {
        params.copy_layer_from(source.params(), *layer);
    }
    let mut ckpt = ModelCheckpoint::new(format!("{}@l{depth}-s{seed}", source.id), params, target_vocab_hash);
    if depth > 0 {
        ckpt.provenance.transferred_from = Some(TransferOrigin {
            source_id: source.id.clone(),
            depth,
        });
    }
    Ok(ckpt)
}
