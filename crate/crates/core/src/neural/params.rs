use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Layer dimensions of the projection → LSTM → highway → softmax network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Arch {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub lstm_dim: usize,
    pub highway_dim: usize,
}

impl Arch {
    pub fn new(vocab_size: usize, embed_dim: usize, lstm_dim: usize, highway_dim: usize) -> Result<Self> {
        let arch = Arch {
            vocab_size,
            embed_dim,
            lstm_dim,
            highway_dim,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// 200 / 1000 / 1000.
    pub fn full(vocab_size: usize) -> Self {
        Arch {
            vocab_size,
            embed_dim: 200,
            lstm_dim: 1000,
            highway_dim: 1000,
        }
    }

    /// Scaled-down 32 / 128 / 128 variant with the same topology.
    pub fn desk(vocab_size: usize) -> Self {
        Arch {
            vocab_size,
            embed_dim: 32,
            lstm_dim: 128,
            highway_dim: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.embed_dim == 0 || self.lstm_dim == 0 {
            return Err(Error::Config("architecture dimensions must be positive".into()));
        }
        // The highway carry path adds its input to its output.
        if self.highway_dim != self.lstm_dim {
            return Err(Error::Config(format!(
                "highway dim {} must equal LSTM dim {}",
                self.highway_dim, self.lstm_dim
            )));
        }
        Ok(())
    }
}

/// Transfer layers in bottom-up order; `index()` is the transfer depth at
/// which the layer starts being copied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Layer {
    Projection,
    Lstm,
    Highway,
    Output,
}

impl Layer {
    pub const ALL: [Layer; 4] = [Layer::Projection, Layer::Lstm, Layer::Highway, Layer::Output];

    pub fn index(self) -> usize {
        self as usize + 1
    }
}

/// All network weights. Also used as the gradient container.
///
/// The LSTM weight stacks the input rows (`embed_dim`) on top of the
/// recurrent rows (`lstm_dim`); its columns are four gate blocks in the
/// order input, forget, output, candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Arch,
    /// `[V × E]`
    pub embedding: Matrix,
    /// `[(E + H) × 4H]`
    pub lstm_w: Matrix,
    /// `[4H]`
    pub lstm_b: Vec<f64>,
    /// Highway transform gate, `[H × H]` and `[H]`.
    pub hw_gate_w: Matrix,
    pub hw_gate_b: Vec<f64>,
    /// Highway non-linear path, `[H × H]` and `[H]`.
    pub hw_lin_w: Matrix,
    pub hw_lin_b: Vec<f64>,
    /// `[H × V]` and `[V]`
    pub out_w: Matrix,
    pub out_b: Vec<f64>,
}

/// Canonical tensor names, in storage order.
pub const TENSOR_NAMES: [&str; 9] = [
    "embedding",
    "lstm.weight",
    "lstm.bias",
    "highway.gate.weight",
    "highway.gate.bias",
    "highway.linear.weight",
    "highway.linear.bias",
    "output.weight",
    "output.bias",
];

impl ModelParams {
    pub fn zeros(arch: Arch) -> Self {
        let (v, e, h) = (arch.vocab_size, arch.embed_dim, arch.lstm_dim);
        ModelParams {
            arch,
            embedding: Matrix::zeros(v, e),
            lstm_w: Matrix::zeros(e + h, 4 * h),
            lstm_b: vec![0.0; 4 * h],
            hw_gate_w: Matrix::zeros(h, h),
            hw_gate_b: vec![0.0; h],
            hw_lin_w: Matrix::zeros(h, h),
            hw_lin_b: vec![0.0; h],
            out_w: Matrix::zeros(h, v),
            out_b: vec![0.0; v],
        }
    }

    /// Declared shape of each named tensor (vectors have rank 1).
    pub fn tensor_shapes(arch: &Arch) -> [(&'static str, Vec<usize>); 9] {
        let (v, e, h) = (arch.vocab_size, arch.embed_dim, arch.lstm_dim);
        [
            (TENSOR_NAMES[0], vec![v, e]),
            (TENSOR_NAMES[1], vec![e + h, 4 * h]),
            (TENSOR_NAMES[2], vec![4 * h]),
            (TENSOR_NAMES[3], vec![h, h]),
            (TENSOR_NAMES[4], vec![h]),
            (TENSOR_NAMES[5], vec![h, h]),
            (TENSOR_NAMES[6], vec![h]),
            (TENSOR_NAMES[7], vec![h, v]),
            (TENSOR_NAMES[8], vec![v]),
        ]
    }

    pub fn tensors(&self) -> [&[f64]; 9] {
        [
            self.embedding.as_slice(),
            self.lstm_w.as_slice(),
            &self.lstm_b,
            self.hw_gate_w.as_slice(),
            &self.hw_gate_b,
            self.hw_lin_w.as_slice(),
            &self.hw_lin_b,
            self.out_w.as_slice(),
            &self.out_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 9] {
        [
            self.embedding.as_mut_slice(),
            self.lstm_w.as_mut_slice(),
            &mut self.lstm_b,
            self.hw_gate_w.as_mut_slice(),
            &mut self.hw_gate_b,
            self.hw_lin_w.as_mut_slice(),
            &mut self.hw_lin_b,
            self.out_w.as_mut_slice(),
            &mut self.out_b,
        ]
    }

    /// Indices into [`TENSOR_NAMES`] belonging to `layer`.
    pub fn layer_tensors(layer: Layer) -> &'static [usize] {
        match layer {
            Layer::Projection => &[0],
            Layer::Lstm => &[1, 2],
            Layer::Highway => &[3, 4, 5, 6],
            Layer::Output => &[7, 8],
        }
    }

    pub fn layer_equal(&self, other: &ModelParams, layer: Layer) -> bool {
        let (a, b) = (self.tensors(), other.tensors());
        Self::layer_tensors(layer)
            .iter()
            .all(|&i| a[i].len() == b[i].len() && a[i].iter().zip(b[i]).all(|(x, y)| x.to_bits() == y.to_bits()))
    }

    /// Copies `layer` from `source` bit for bit.
    pub fn copy_layer_from(&mut self, source: &ModelParams, layer: Layer) {
        let src = source.tensors();
        let dst = self.tensors_mut();
        for &i in Self::layer_tensors(layer) {
            dst[i].copy_from_slice(src[i]);
        }
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Flat view of parameter `index` across all tensors, in storage order.
    pub fn get_flat(&self, mut index: usize) -> f64 {
        for t in self.tensors() {
            if index < t.len() {
                return t[index];
            }
            index -= t.len();
        }
        panic!("parameter index out of range")
    }

    pub fn set_flat(&mut self, mut index: usize, value: f64) {
        for t in self.tensors_mut() {
            if index < t.len() {
                t[index] = value;
                return;
            }
            index -= t.len();
        }
        panic!("parameter index out of range")
    }

    /// Rounds every value to the nearest `f32`, the storage precision.
    pub fn round_to_f32(&mut self) {
        for t in self.tensors_mut() {
            for x in t.iter_mut() {
                *x = *x as f32 as f64;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.arch == other.arch
    }
}
