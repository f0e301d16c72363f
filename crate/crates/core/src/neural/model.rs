//! Forward pass and exact backpropagation through time for the
//! projection → LSTM → highway → softmax network.
//!
//! Activations are stored time-major: row `t * B + b` holds timestep `t` of
//! batch row `b`. The recurrence only runs over the LSTM; the highway and
//! output layers are applied to all timesteps at once.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::matrix::{add_row_bias, column_sums_acc, gemm_acc, gemm_at_b_acc, sigmoid, Matrix};
use super::params::ModelParams;
use crate::corpus::{Batch, TokenId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    /// Inverted dropout with probability `dropout` on the LSTM and highway
    /// outputs, masks drawn from `seed`.
    Train { dropout: f64, seed: u64 },
    Eval,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch_size: usize,
    steps: usize,
    inputs: Vec<TokenId>,
    targets: Vec<TokenId>,
    mask: Vec<f64>,
    x_emb: Matrix,
    gates: Matrix,
    cell: Matrix,
    tanh_cell: Matrix,
    hidden: Matrix,
    drop_lstm: Option<Matrix>,
    hw_in: Matrix,
    hw_gate: Matrix,
    hw_act: Matrix,
    drop_hw: Option<Matrix>,
    out_in: Matrix,
    probs: Matrix,
}

impl ForwardCache {
    /// Softmax distributions, one row per time-major position.
    pub fn probs(&self) -> &Matrix {
        &self.probs
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Output distribution at batch row `row`, timestep `t`.
    pub fn distribution(&self, row: usize, t: usize) -> &[f64] {
        self.probs.row(t * self.batch_size + row)
    }
}

fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let keep = 1.0 / (1.0 - p);
    Matrix::from_fn(rows, cols, |_, _| if rng.gen::<f64>() < p { 0.0 } else { keep })
}

fn mul_in_place(a: &mut Matrix, m: &Matrix) {
    for (x, &k) in a.as_mut_slice().iter_mut().zip(m.as_slice()) {
        *x *= k;
    }
}

/// Runs the network over `batch`. Returns the per-token NLL as a
/// `[batch_size × seq_len]` matrix (zero at masked positions) and the cache.
pub fn forward(params: &ModelParams, batch: &Batch, mode: Mode) -> Result<(Matrix, ForwardCache)> {
    let arch = params.arch;
    let (e, h, v) = (arch.embed_dim, arch.lstm_dim, arch.vocab_size);
    let b = batch.batch_size;
    let steps = batch.effective_len();
    let n = steps * b;
    let g4 = 4 * h;

    let dropout = match mode {
        Mode::Train { dropout, .. } => {
            if !(0.0..1.0).contains(&dropout) {
                return Err(Error::Config(format!("dropout {dropout} outside [0, 1)")));
            }
            dropout
        }
        Mode::Eval => 0.0,
    };

    let mut inputs = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    for t in 0..steps {
        for r in 0..b {
            let k = batch.at(r, t);
            let (x, y) = (batch.inputs[k], batch.targets[k]);
            if x as usize >= v || y as usize >= v {
                return Err(Error::ShapeMismatch(format!("token id out of range for vocabulary of {v}")));
            }
            inputs.push(x);
            targets.push(y);
            mask.push(f64::from(batch.mask[k]));
        }
    }

    // Projection.
    let mut x_emb = Matrix::zeros(n, e);
    for (i, &id) in inputs.iter().enumerate() {
        x_emb.row_mut(i).copy_from_slice(params.embedding.row(id as usize));
    }

    // LSTM. The input contribution is computed for all steps up front.
    let w_x = params.lstm_w.rows_slice(0, e);
    let w_h = params.lstm_w.rows_slice(e, e + h);
    let mut gates = Matrix::zeros(n, g4);
    gemm_acc(x_emb.as_slice(), w_x, gates.as_mut_slice(), n, e, g4);
    add_row_bias(gates.as_mut_slice(), &params.lstm_b);
    let mut cell = Matrix::zeros(n, h);
    let mut tanh_cell = Matrix::zeros(n, h);
    let mut hidden = Matrix::zeros(n, h);
    for t in 0..steps {
        let (r0, r1) = (t * b, (t + 1) * b);
        if t > 0 {
            let h_prev = hidden.rows_slice(r0 - b, r0).to_vec();
            gemm_acc(&h_prev, w_h, gates.rows_slice_mut(r0, r1), b, h, g4);
        }
        for r in r0..r1 {
            let z = gates.row_mut(r);
            for j in 0..h {
                z[j] = sigmoid(z[j]);
                z[h + j] = sigmoid(z[h + j]);
                z[2 * h + j] = sigmoid(z[2 * h + j]);
                z[3 * h + j] = z[3 * h + j].tanh();
            }
            for j in 0..h {
                let z = gates.row(r);
                let c_prev = if t > 0 { cell[(r - b, j)] } else { 0.0 };
                let c = z[h + j] * c_prev + z[j] * z[3 * h + j];
                let tc = c.tanh();
                cell[(r, j)] = c;
                tanh_cell[(r, j)] = tc;
                hidden[(r, j)] = z[2 * h + j] * tc;
            }
        }
    }
    hidden.ensure_finite("LSTM output")?;

    let mut rng = match mode {
        Mode::Train { seed, .. } if dropout > 0.0 => Some(ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };

    let mut hw_in = hidden.clone();
    let drop_lstm = rng.as_mut().map(|rng| dropout_mask(n, h, dropout, rng));
    if let Some(m) = &drop_lstm {
        mul_in_place(&mut hw_in, m);
    }

    // Highway: y = t ⊙ relu(W_H x + b_H) + (1 − t) ⊙ x, t = σ(W_T x + b_T).
    let mut hw_gate = Matrix::zeros(n, h);
    gemm_acc(hw_in.as_slice(), params.hw_gate_w.as_slice(), hw_gate.as_mut_slice(), n, h, h);
    add_row_bias(hw_gate.as_mut_slice(), &params.hw_gate_b);
    hw_gate.as_mut_slice().iter_mut().for_each(|x| *x = sigmoid(*x));
    let mut hw_act = Matrix::zeros(n, h);
    gemm_acc(hw_in.as_slice(), params.hw_lin_w.as_slice(), hw_act.as_mut_slice(), n, h, h);
    add_row_bias(hw_act.as_mut_slice(), &params.hw_lin_b);
    hw_act.as_mut_slice().iter_mut().for_each(|x| *x = x.max(0.0));
    let mut out_in = Matrix::zeros(n, h);
    for ((y, (&t, &a)), &x) in out_in
        .as_mut_slice()
        .iter_mut()
        .zip(hw_gate.as_slice().iter().zip(hw_act.as_slice()))
        .zip(hw_in.as_slice())
    {
        *y = t * a + (1.0 - t) * x;
    }
    let drop_hw = rng.as_mut().map(|rng| dropout_mask(n, h, dropout, rng));
    if let Some(m) = &drop_hw {
        mul_in_place(&mut out_in, m);
    }
    out_in.ensure_finite("highway output")?;

    // Softmax output.
    let mut probs = Matrix::zeros(n, v);
    gemm_acc(out_in.as_slice(), params.out_w.as_slice(), probs.as_mut_slice(), n, h, v);
    add_row_bias(probs.as_mut_slice(), &params.out_b);
    probs.ensure_finite("logits")?;
    let mut nll = Matrix::zeros(b, batch.seq_len);
    for i in 0..n {
        let row = probs.row_mut(i);
        let (arg, max) = row
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (k, z)| if z > acc.1 { (k, z) } else { acc });
        let target_logit = row[targets[i] as usize];
        for z in row.iter_mut() {
            *z = (*z - max).exp();
        }
        // Σ exp(z − max) with the max term (exactly 1) split off, so the
        // log normalizer keeps full precision when the rest is small.
        let rest: f64 = row
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != arg)
            .map(|(_, &u)| u)
            .sum();
        let log_norm = rest.ln_1p();
        let norm = 1.0 + rest;
        for z in row.iter_mut() {
            *z /= norm;
        }
        if mask[i] != 0.0 {
            let (t, r) = (i / b, i % b);
            nll[(r, t)] = (max - target_logit) + log_norm;
        }
    }
    nll.ensure_finite("token NLL")?;

    let cache = ForwardCache {
        batch_size: b,
        steps,
        inputs,
        targets,
        mask,
        x_emb,
        gates,
        cell,
        tanh_cell,
        hidden,
        drop_lstm,
        hw_in,
        hw_gate,
        hw_act,
        drop_hw,
        out_in,
        probs,
    };
    Ok((nll, cache))
}

/// Sum of the NLL matrix, the batch loss.
pub fn total_loss(nll: &Matrix) -> f64 {
    nll.as_slice().iter().sum()
}

/// Gradients of the summed masked NLL with respect to every parameter.
pub fn backward(params: &ModelParams, cache: ForwardCache) -> Result<ModelParams> {
    let arch = params.arch;
    let (e, h, v) = (arch.embed_dim, arch.lstm_dim, arch.vocab_size);
    let b = cache.batch_size;
    let steps = cache.steps;
    let n = steps * b;
    let g4 = 4 * h;
    let mut grads = ModelParams::zeros(arch);
    if n == 0 {
        return Ok(grads);
    }

    // Softmax: dlogits = (p − onehot) · mask.
    let mut dlogits = cache.probs;
    for i in 0..n {
        let row = dlogits.row_mut(i);
        if cache.mask[i] == 0.0 {
            row.fill(0.0);
        } else {
            row[cache.targets[i] as usize] -= 1.0;
        }
    }
    column_sums_acc(dlogits.as_slice(), &mut grads.out_b);
    gemm_at_b_acc(cache.out_in.as_slice(), dlogits.as_slice(), grads.out_w.as_mut_slice(), n, h, v);
    let mut d_out_in = Matrix::zeros(n, h);
    let out_wt = params.out_w.transpose();
    gemm_acc(dlogits.as_slice(), out_wt.as_slice(), d_out_in.as_mut_slice(), n, v, h);
    drop(dlogits);
    if let Some(m) = &cache.drop_hw {
        mul_in_place(&mut d_out_in, m);
    }

    // Highway.
    let mut d_gate = Matrix::zeros(n, h);
    let mut d_lin = Matrix::zeros(n, h);
    let mut d_hw_in = Matrix::zeros(n, h);
    {
        let dy = d_out_in.as_slice();
        let t = cache.hw_gate.as_slice();
        let a = cache.hw_act.as_slice();
        let x = cache.hw_in.as_slice();
        let dg = d_gate.as_mut_slice();
        let dl = d_lin.as_mut_slice();
        let dx = d_hw_in.as_mut_slice();
        for k in 0..n * h {
            dg[k] = dy[k] * (a[k] - x[k]) * t[k] * (1.0 - t[k]);
            dl[k] = if a[k] > 0.0 { dy[k] * t[k] } else { 0.0 };
            dx[k] = dy[k] * (1.0 - t[k]);
        }
    }
    drop(d_out_in);
    column_sums_acc(d_gate.as_slice(), &mut grads.hw_gate_b);
    column_sums_acc(d_lin.as_slice(), &mut grads.hw_lin_b);
    gemm_at_b_acc(cache.hw_in.as_slice(), d_gate.as_slice(), grads.hw_gate_w.as_mut_slice(), n, h, h);
    gemm_at_b_acc(cache.hw_in.as_slice(), d_lin.as_slice(), grads.hw_lin_w.as_mut_slice(), n, h, h);
    gemm_acc(d_gate.as_slice(), params.hw_gate_w.transpose().as_slice(), d_hw_in.as_mut_slice(), n, h, h);
    gemm_acc(d_lin.as_slice(), params.hw_lin_w.transpose().as_slice(), d_hw_in.as_mut_slice(), n, h, h);
    drop((d_gate, d_lin));
    if let Some(m) = &cache.drop_lstm {
        mul_in_place(&mut d_hw_in, m);
    }

    // LSTM, backwards through time.
    let w_ht = Matrix::from_vec(h, g4, params.lstm_w.rows_slice(e, e + h).to_vec())?.transpose();
    let mut dz = Matrix::zeros(n, g4);
    let mut dh_next = vec![0.0; b * h];
    let mut dc_next = vec![0.0; b * h];
    for t in (0..steps).rev() {
        let r0 = t * b;
        for rb in 0..b {
            let r = r0 + rb;
            let z = cache.gates.row(r);
            let dzr = dz.row_mut(r);
            for j in 0..h {
                let (i_g, f_g, o_g, g_g) = (z[j], z[h + j], z[2 * h + j], z[3 * h + j]);
                let tc = cache.tanh_cell[(r, j)];
                let c_prev = if t > 0 { cache.cell[(r - b, j)] } else { 0.0 };
                let dh = d_hw_in[(r, j)] + dh_next[rb * h + j];
                let dc = dc_next[rb * h + j] + dh * o_g * (1.0 - tc * tc);
                dzr[j] = dc * g_g * i_g * (1.0 - i_g);
                dzr[h + j] = dc * c_prev * f_g * (1.0 - f_g);
                dzr[2 * h + j] = dh * tc * o_g * (1.0 - o_g);
                dzr[3 * h + j] = dc * i_g * (1.0 - g_g * g_g);
                dc_next[rb * h + j] = dc * f_g;
            }
        }
        dh_next.fill(0.0);
        if t > 0 {
            gemm_acc(dz.rows_slice(r0, r0 + b), w_ht.as_slice(), &mut dh_next, b, g4, h);
        }
    }
    column_sums_acc(dz.as_slice(), &mut grads.lstm_b);
    {
        let (gw_x, gw_h) = grads.lstm_w.as_mut_slice().split_at_mut(e * g4);
        gemm_at_b_acc(cache.x_emb.as_slice(), dz.as_slice(), gw_x, n, e, g4);
        if steps > 1 {
            gemm_at_b_acc(
                cache.hidden.rows_slice(0, n - b),
                dz.rows_slice(b, n),
                gw_h,
                n - b,
                h,
                g4,
            );
        }
    }

    // Projection: scatter input gradients into embedding rows.
    let w_xt = Matrix::from_vec(e, g4, params.lstm_w.rows_slice(0, e).to_vec())?.transpose();
    let mut dx_emb = Matrix::zeros(n, e);
    gemm_acc(dz.as_slice(), w_xt.as_slice(), dx_emb.as_mut_slice(), n, g4, e);
    for (i, &id) in cache.inputs.iter().enumerate() {
        if cache.mask[i] == 0.0 {
            continue;
        }
        let row = grads.embedding.row_mut(id as usize);
        for (g, &d) in row.iter_mut().zip(dx_emb.row(i)) {
            *g += d;
        }
    }

    if !grads.is_finite() {
        return Err(Error::NonFinite("gradients".into()));
    }
    Ok(grads)
}

/// Summed NLL over the batch in eval mode.
pub fn eval_loss(params: &ModelParams, batch: &Batch) -> Result<f64> {
    let (nll, _) = forward(params, batch, Mode::Eval)?;
    Ok(total_loss(&nll))
}
