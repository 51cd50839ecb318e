//! Encoder-decoder transformer for one-step-ahead forecasting of a single
//! series, trained on sliding windows and run recursively for longer
//! horizons.
//!
//! Layout per forward pass:
//!
//! * the input window is embedded value-by-value (`1 -> d_model` linear),
//!   summed with a sinusoidal position table and fed through the encoder
//!   stack (self-attention, add & norm, feed-forward, add & norm);
//! * the decoder receives a single token, the embedded last window value;
//!   each decoder layer applies causal self-attention with add & norm, then
//!   cross-attention to the encoder output, add & norm, feed-forward and a
//!   final add & norm;
//! * a linear head maps the decoder token to the forecast.
//!
//! Every layer uses post-norm residual blocks.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autograd::{
    Adam, AdamConfig, Checkpoint, CheckpointError, ParamId, ParamStore, Tape, Tensor, TensorError, Var,
};

#[derive(Debug, Error)]
pub enum TransformerError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("window has {got} values, model expects {expected}")]
    WindowLength { expected: usize, got: usize },
    #[error("series of length {len} is too short; at least {needed} values are needed")]
    SeriesTooShort { len: usize, needed: usize },
    #[error("forecast horizon must be at least 1")]
    BadHorizon,
    #[error("training diverged at epoch {epoch}: {source}")]
    Diverged {
        epoch: usize,
        #[source]
        source: TensorError,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

pub type Result<T> = std::result::Result<T, TransformerError>;

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerConfig {
    pub input_len: usize,
    pub output_len: usize,
    pub d_model: usize,
    pub num_heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub ffn_hidden: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            input_len: 12,
            output_len: 1,
            d_model: 16,
            num_heads: 8,
            encoder_layers: 2,
            decoder_layers: 2,
            ffn_hidden: 64,
            dropout: 0.1,
            epochs: 200,
            batch_size: 32,
            optimizer: AdamConfig::default(),
        }
    }
}

impl TransformerConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(TransformerError::Config(m));
        if self.num_heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.num_heads) {
            return fail(format!(
                "d_model {} must be a positive multiple of num_heads {}",
                self.d_model, self.num_heads
            ));
        }
        if self.input_len == 0 {
            return fail("input_len must be at least 1".into());
        }
        if self.output_len != 1 {
            return fail("only one-step heads (output_len = 1) are supported".into());
        }
        if self.ffn_hidden == 0 || self.batch_size == 0 {
            return fail("ffn_hidden and batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// `(key, value)` pairs as stored in checkpoints and run manifests.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let o = &self.optimizer;
        [
            ("input_len", self.input_len.to_string()),
            ("output_len", self.output_len.to_string()),
            ("d_model", self.d_model.to_string()),
            ("num_heads", self.num_heads.to_string()),
            ("encoder_layers", self.encoder_layers.to_string()),
            ("decoder_layers", self.decoder_layers.to_string()),
            ("ffn_hidden", self.ffn_hidden.to_string()),
            ("dropout", format!("{:?}", self.dropout)),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", format!("{:?}", o.lr)),
            ("beta1", format!("{:?}", o.beta1)),
            ("beta2", format!("{:?}", o.beta2)),
            ("adam_eps", format!("{:?}", o.eps)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Applies one `key = value` setting, as produced by [`to_pairs`](Self::to_pairs).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || TransformerError::Config(format!("bad value {value:?} for {key}"));
        let int = || value.trim().parse::<usize>().map_err(|_| bad());
        let real = || value.trim().parse::<f64>().map_err(|_| bad());
        match key {
            "input_len" => self.input_len = int()?,
            "output_len" => self.output_len = int()?,
            "d_model" => self.d_model = int()?,
            "num_heads" => self.num_heads = int()?,
            "encoder_layers" => self.encoder_layers = int()?,
            "decoder_layers" => self.decoder_layers = int()?,
            "ffn_hidden" => self.ffn_hidden = int()?,
            "dropout" => self.dropout = real()?,
            "epochs" => self.epochs = int()?,
            "batch_size" => self.batch_size = int()?,
            "lr" => self.optimizer.lr = real()?,
            "beta1" => self.optimizer.beta1 = real()?,
            "beta2" => self.optimizer.beta2 = real()?,
            "adam_eps" => self.optimizer.eps = real()?,
            _ => return Err(TransformerError::Config(format!("unknown setting {key:?}"))),
        }
        Ok(())
    }
}

/// Sinusoidal position table, row-major `[len, d_model]`.
pub fn positional_table(len: usize, d_model: usize) -> Vec<f64> {
    let mut table = vec![0.0; len * d_model];
    for pos in 0..len {
        for i in 0..d_model {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / d_model as f64);
            table[pos * d_model + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    table
}

/// Single-head scaled dot-product attention built from primitive tape ops:
/// `softmax(Q K^T / sqrt(d)) V`, with `d` the width of `q`. `visible` is a
/// `[len_q, len_k]` table; hidden positions get zero weight. Returns the
/// output and the attention matrix.
pub fn attention(tape: &mut Tape, q: Var, k: Var, v: Var, visible: Option<&[bool]>) -> Result<(Var, Var)> {
    let d = *tape
        .value(q)
        .shape()
        .last()
        .ok_or_else(|| TransformerError::Config("attention on a scalar".into()))?;
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (d as f64).sqrt())?;
    let scores = match visible {
        Some(mask) => {
            let shape = tape.value(scores).shape().to_vec();
            if mask.len() != tape.value(scores).len() {
                return Err(TensorError::ShapeMismatch {
                    op: "attention mask",
                    lhs: shape,
                    rhs: vec![mask.len()],
                }
                .into());
            }
            // Large negative additive bias; exp underflows to exactly zero.
            let bias = Tensor::new(&shape, mask.iter().map(|&m| if m { 0.0 } else { -1e300 }).collect())?;
            let bias = tape.constant(bias);
            tape.add(scores, bias)?
        }
        None => scores,
    };
    let weights = tape.softmax(scores, 1)?;
    let out = tape.matmul(weights, v)?;
    Ok((out, weights))
}

/// Multi-head attention from explicit projection handles, built from
/// [`attention`]: each head projects with its column block of `wq`, `wk`,
/// `wv`, the heads are concatenated and projected by `wo`.
pub fn multi_head(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    (wq, wk, wv, wo): (Var, Var, Var, Var),
    visible: Option<&[bool]>,
) -> Result<Var> {
    let width = tape.value(wq).shape()[1];
    if heads == 0 || !width.is_multiple_of(heads) {
        return Err(TransformerError::Config(format!("{width} not divisible by {heads} heads")));
    }
    let hd = width / heads;
    let qp = tape.matmul(q, wq)?;
    let kp = tape.matmul(k, wk)?;
    let vp = tape.matmul(v, wv)?;
    let mut outs = Vec::with_capacity(heads);
    for p in 0..heads {
        let cols = |tape: &mut Tape, x: Var| -> Result<Var> {
            // Select columns p*hd..(p+1)*hd via a 0/1 selector matrix.
            let sel = Tensor::from_fn(&[width, hd], |i| {
                let (r, c) = (i / hd, i % hd);
                if r == p * hd + c {
                    1.0
                } else {
                    0.0
                }
            });
            let sel = tape.constant(sel);
            Ok(tape.matmul(x, sel)?)
        };
        let (qh, kh, vh) = (cols(tape, qp)?, cols(tape, kp)?, cols(tape, vp)?);
        outs.push(attention(tape, qh, kh, vh, visible)?.0);
    }
    let cat = tape.concat(&outs, 1)?;
    Ok(tape.matmul(cat, wo)?)
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct AttentionBlock {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
}

#[derive(Debug, Clone, Copy)]
struct FeedForward {
    up: Linear,
    down: Linear,
}

#[derive(Debug, Clone, Copy)]
struct EncoderLayer {
    attn: AttentionBlock,
    norm1: Norm,
    ff: FeedForward,
    norm2: Norm,
}

#[derive(Debug, Clone, Copy)]
struct DecoderLayer {
    self_attn: AttentionBlock,
    norm1: Norm,
    cross_attn: AttentionBlock,
    norm2: Norm,
    ff: FeedForward,
    norm3: Norm,
}

struct Builder<'a> {
    params: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn uniform(&mut self, name: String, shape: &[usize], fan_in: usize) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(shape, |_| rng.random_range(-bound..=bound));
        self.params.add(name, t)
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            w: self.uniform(format!("{name}.w"), &[fan_in, fan_out], fan_in),
            b: self.uniform(format!("{name}.b"), &[fan_out], fan_in),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            gain: self.params.add(format!("{name}.gain"), Tensor::full(&[d], 1.0)),
            bias: self.params.add(format!("{name}.bias"), Tensor::zeros(&[d])),
        }
    }

    fn attention(&mut self, name: &str, d: usize) -> AttentionBlock {
        AttentionBlock {
            q: self.linear(&format!("{name}.q"), d, d),
            k: self.linear(&format!("{name}.k"), d, d),
            v: self.linear(&format!("{name}.v"), d, d),
            out: self.linear(&format!("{name}.out"), d, d),
        }
    }

    fn ff(&mut self, name: &str, d: usize, hidden: usize) -> FeedForward {
        FeedForward {
            up: self.linear(&format!("{name}.up"), d, hidden),
            down: self.linear(&format!("{name}.down"), hidden, d),
        }
    }
}

/// Per-epoch mean training loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,mean_loss")?;
        for (i, l) in self.epoch_losses.iter().enumerate() {
            writeln!(w, "{},{l:?}", i + 1)?;
        }
        Ok(())
    }
}

/// One forecaster: configuration, parameters, optimizer state and its own
/// seeded random stream (initialization, shuffling, dropout).
#[derive(Debug, Clone)]
pub struct TransformerModel {
    config: TransformerConfig,
    seed: u64,
    rng: ChaCha8Rng,
    training: bool,
    params: ParamStore,
    positional: Vec<f64>,
    input_embed: Linear,
    output_embed: Linear,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    head: Linear,
    optimizer: Option<Adam>,
}

struct Ctx<'a> {
    tape: Tape,
    params: &'a ParamStore,
    train: bool,
    dropout: f64,
    rng: &'a mut ChaCha8Rng,
}

impl Ctx<'_> {
    fn p(&mut self, id: ParamId) -> Var {
        self.tape.param(self.params, id)
    }

    fn linear(&mut self, x: Var, l: Linear) -> Result<Var> {
        let (w, b) = (self.p(l.w), self.p(l.b));
        Ok(self.tape.linear(x, w, b)?)
    }

    fn dropout(&mut self, x: Var) -> Result<Var> {
        Ok(self.tape.dropout(x, self.dropout, self.train, self.rng)?)
    }

    /// `norm(x + dropout(sub))`
    fn add_norm(&mut self, x: Var, sub: Var, n: Norm) -> Result<Var> {
        let sub = self.dropout(sub)?;
        let s = self.tape.add(x, sub)?;
        let z = self.tape.layer_norm(s, 1, LAYER_NORM_EPS)?;
        let (g, b) = (self.p(n.gain), self.p(n.bias));
        let z = self.tape.mul_row(z, g)?;
        Ok(self.tape.add_row(z, b)?)
    }

    fn mha(
        &mut self,
        query: Var,
        memory: Var,
        a: AttentionBlock,
        batch: usize,
        heads: usize,
        visible: Option<&[bool]>,
    ) -> Result<Var> {
        let q = self.linear(query, a.q)?;
        let k = self.linear(memory, a.k)?;
        let v = self.linear(memory, a.v)?;
        let o = self.tape.multi_head_attention(q, k, v, batch, heads, visible)?;
        self.linear(o, a.out)
    }

    fn ff(&mut self, x: Var, f: FeedForward) -> Result<Var> {
        let h = self.linear(x, f.up)?;
        let h = self.tape.relu(h)?;
        self.linear(h, f.down)
    }
}

impl TransformerModel {
    pub fn new(config: TransformerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let d = config.d_model;
        let mut b = Builder {
            params: &mut params,
            rng: &mut rng,
        };
        let input_embed = b.linear("embed.in", 1, d);
        let output_embed = b.linear("embed.out", 1, d);
        let encoder = (0..config.encoder_layers)
            .map(|i| {
                let n = format!("enc{i}");
                EncoderLayer {
                    attn: b.attention(&format!("{n}.attn"), d),
                    norm1: b.norm(&format!("{n}.norm1"), d),
                    ff: b.ff(&format!("{n}.ff"), d, config.ffn_hidden),
                    norm2: b.norm(&format!("{n}.norm2"), d),
                }
            })
            .collect();
        let decoder = (0..config.decoder_layers)
            .map(|i| {
                let n = format!("dec{i}");
                DecoderLayer {
                    self_attn: b.attention(&format!("{n}.self"), d),
                    norm1: b.norm(&format!("{n}.norm1"), d),
                    cross_attn: b.attention(&format!("{n}.cross"), d),
                    norm2: b.norm(&format!("{n}.norm2"), d),
                    ff: b.ff(&format!("{n}.ff"), d, config.ffn_hidden),
                    norm3: b.norm(&format!("{n}.norm3"), d),
                }
            })
            .collect();
        let head = b.linear("head", d, config.output_len);
        let positional = positional_table(config.input_len.max(config.output_len), d);
        Ok(Self {
            config,
            seed,
            rng,
            training: false,
            params,
            positional,
            input_embed,
            output_embed,
            encoder,
            decoder,
            head,
            optimizer: None,
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    /// Train mode enables dropout in [`forward`](Self::forward).
    pub fn set_training(&mut self, training: bool) {
        self.training = training;
    }

    /// Records the forward pass for a batch of windows on a fresh tape and
    /// returns it with the `[batch, 1]` prediction handle.
    pub fn forward_tape(&mut self, windows: &[&[f64]], train: bool) -> Result<(Tape, Var)> {
        let cfg = &self.config;
        let (len, d, heads) = (cfg.input_len, cfg.d_model, cfg.num_heads);
        if windows.is_empty() {
            return Err(TransformerError::Config("empty batch".into()));
        }
        for w in windows {
            if w.len() != len {
                return Err(TransformerError::WindowLength {
                    expected: len,
                    got: w.len(),
                });
            }
        }
        let batch = windows.len();
        let mut ctx = Ctx {
            tape: Tape::new(),
            params: &self.params,
            train,
            dropout: cfg.dropout,
            rng: &mut self.rng,
        };

        // Encoder
        let x = Tensor::new(&[batch * len, 1], windows.iter().flat_map(|w| w.iter().copied()).collect())?;
        let x = ctx.tape.constant(x);
        let pe = Tensor::new(
            &[batch * len, d],
            (0..batch).flat_map(|_| self.positional[..len * d].iter().copied()).collect(),
        )?;
        let pe = ctx.tape.constant(pe);
        let mut enc = ctx.linear(x, self.input_embed)?;
        enc = ctx.tape.add(enc, pe)?;
        enc = ctx.dropout(enc)?;
        for layer in &self.encoder {
            let a = ctx.mha(enc, enc, layer.attn, batch, heads, None)?;
            enc = ctx.add_norm(enc, a, layer.norm1)?;
            let f = ctx.ff(enc, layer.ff)?;
            enc = ctx.add_norm(enc, f, layer.norm2)?;
        }

        // Decoder, seeded with the last observed value.
        let tgt_len = cfg.output_len;
        let seed = Tensor::new(&[batch * tgt_len, 1], windows.iter().map(|w| w[len - 1]).collect())?;
        let seed = ctx.tape.constant(seed);
        let pe = Tensor::new(
            &[batch * tgt_len, d],
            (0..batch).flat_map(|_| self.positional[..tgt_len * d].iter().copied()).collect(),
        )?;
        let pe = ctx.tape.constant(pe);
        let mut dec = ctx.linear(seed, self.output_embed)?;
        dec = ctx.tape.add(dec, pe)?;
        dec = ctx.dropout(dec)?;
        let causal: Vec<bool> = (0..tgt_len * tgt_len).map(|i| i % tgt_len <= i / tgt_len).collect();
        for layer in &self.decoder {
            let a = ctx.mha(dec, dec, layer.self_attn, batch, heads, Some(&causal))?;
            dec = ctx.add_norm(dec, a, layer.norm1)?;
            let c = ctx.mha(dec, enc, layer.cross_attn, batch, heads, None)?;
            dec = ctx.add_norm(dec, c, layer.norm2)?;
            let f = ctx.ff(dec, layer.ff)?;
            dec = ctx.add_norm(dec, f, layer.norm3)?;
        }
        let out = ctx.linear(dec, self.head)?;
        Ok((ctx.tape, out))
    }

    /// Mean squared error of a batch against its targets, on a fresh tape.
    pub fn loss_tape(&mut self, windows: &[&[f64]], targets: &[f64], train: bool) -> Result<(Tape, Var)> {
        let (mut tape, out) = self.forward_tape(windows, train)?;
        let target = Tensor::new(tape.value(out).shape(), targets.to_vec())?;
        let loss = tape.mse_loss(out, &target)?;
        Ok((tape, loss))
    }

    /// One-step forecasts for a batch of windows, honoring the current mode.
    pub fn forward_batch(&mut self, windows: &[&[f64]]) -> Result<Vec<f64>> {
        let train = self.training;
        let (tape, out) = self.forward_tape(windows, train)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// One-step forecast from a window of `input_len` values.
    pub fn forward(&mut self, window: &[f64]) -> Result<f64> {
        Ok(self.forward_batch(&[window])?[0])
    }

    /// Gradients of `loss_tape` with respect to every parameter, in store
    /// order.
    pub fn gradients(&mut self, windows: &[&[f64]], targets: &[f64], train: bool) -> Result<Vec<Vec<f64>>> {
        let (mut tape, loss) = self.loss_tape(windows, targets, train)?;
        let grads = tape.backward(loss)?;
        let mut store = self.params.clone();
        store.zero_grad();
        store.accumulate(&tape, &grads);
        Ok(store.iter().map(|p| p.grad.data().to_vec()).collect())
    }

    /// Fits the model on every `(values[i..i+input_len], values[i+input_len])`
    /// pair for `config.epochs` epochs, reshuffling each epoch.
    pub fn train(&mut self, series: &[f64]) -> Result<TrainReport> {
        let len = self.config.input_len;
        let needed = len + 1;
        if series.len() < needed {
            return Err(TransformerError::SeriesTooShort {
                len: series.len(),
                needed,
            });
        }
        let n_windows = series.len() - len;
        let mut order: Vec<usize> = (0..n_windows).collect();
        let mut adam = self
            .optimizer
            .take()
            .unwrap_or_else(|| Adam::new(self.config.optimizer, &self.params));
        let mut losses = Vec::with_capacity(self.config.epochs);
        self.training = true;
        for epoch in 1..=self.config.epochs {
            order.iter_mut().enumerate().for_each(|(i, o)| *o = i);
            order.shuffle(&mut self.rng);
            let mut total = 0.0;
            for chunk in order.chunks(self.config.batch_size) {
                let windows: Vec<&[f64]> = chunk.iter().map(|&i| &series[i..i + len]).collect();
                let targets: Vec<f64> = chunk.iter().map(|&i| series[i + len]).collect();
                let mut step = || -> std::result::Result<f64, TensorError> {
                    let (mut tape, loss) = self
                        .loss_tape(&windows, &targets, true)
                        .map_err(|e| match e {
                            TransformerError::Tensor(t) => t,
                            other => TensorError::Invalid(other.to_string()),
                        })?;
                    let value = tape.value(loss).item();
                    let grads = tape.backward(loss)?;
                    self.params.zero_grad();
                    self.params.accumulate(&tape, &grads);
                    adam.step(&mut self.params)?;
                    Ok(value)
                };
                let value = step().map_err(|source| TransformerError::Diverged { epoch, source })?;
                total += value * chunk.len() as f64;
            }
            let mean = total / n_windows as f64;
            if !mean.is_finite() {
                return Err(TransformerError::Diverged {
                    epoch,
                    source: TensorError::NonFinite { op: "epoch loss" },
                });
            }
            losses.push(mean);
        }
        self.training = false;
        self.optimizer = Some(adam);
        Ok(TrainReport { epoch_losses: losses })
    }

    /// Mean squared one-step error over every sliding window of `series`,
    /// in eval mode.
    pub fn one_step_mse(&mut self, series: &[f64]) -> Result<f64> {
        let len = self.config.input_len;
        if series.len() <= len {
            return Err(TransformerError::SeriesTooShort {
                len: series.len(),
                needed: len + 1,
            });
        }
        let was = self.training;
        self.training = false;
        let windows: Vec<&[f64]> = (0..series.len() - len).map(|i| &series[i..i + len]).collect();
        let mut sse = 0.0;
        for (chunk_start, chunk) in windows.chunks(256).enumerate() {
            let preds = self.forward_batch(chunk)?;
            for (j, p) in preds.iter().enumerate() {
                let target = series[chunk_start * 256 + j + len];
                sse += (p - target).powi(2);
            }
        }
        self.training = was;
        Ok(sse / windows.len() as f64)
    }

    /// Iterated one-step forecasting: each prediction is appended to the
    /// history and the last `input_len` values form the next window.
    pub fn predict_recursive(&mut self, history: &[f64], horizon: usize) -> Result<Vec<f64>> {
        let len = self.config.input_len;
        if horizon == 0 {
            return Err(TransformerError::BadHorizon);
        }
        if history.len() < len {
            return Err(TransformerError::SeriesTooShort {
                len: history.len(),
                needed: len,
            });
        }
        let mut window: Vec<f64> = history[history.len() - len..].to_vec();
        let mut out = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let y = self.forward(&window)?;
            out.push(y);
            window.remove(0);
            window.push(y);
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut hyper = self.config.to_pairs();
        hyper.push(("rng_word_pos".into(), self.rng.get_word_pos().to_string()));
        Checkpoint {
            seed: self.seed,
            hyper,
            params: self.params.clone(),
            optimizer: self.optimizer.as_ref().map(|a| a.state.clone()),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut config = TransformerConfig::default();
        let mut word_pos = None;
        for (k, v) in &ckpt.hyper {
            if k == "rng_word_pos" {
                word_pos = Some(
                    v.parse::<u128>()
                        .map_err(|_| TransformerError::Config(format!("bad rng_word_pos {v:?}")))?,
                );
            } else {
                config.set(k, v)?;
            }
        }
        let mut model = Self::new(config, ckpt.seed)?;
        if model.params.len() != ckpt.params.len() {
            return Err(TransformerError::Config(format!(
                "checkpoint has {} parameters, configuration implies {}",
                ckpt.params.len(),
                model.params.len()
            )));
        }
        for id in model.params.ids().collect::<Vec<_>>() {
            let src = ckpt.params.get(id);
            let dst = model.params.get(id);
            if src.name != dst.name || src.value.shape() != dst.value.shape() {
                return Err(TransformerError::Config(format!(
                    "checkpoint parameter {} {:?} does not match {} {:?}",
                    src.name,
                    src.value.shape(),
                    dst.name,
                    dst.value.shape()
                )));
            }
            *model.params.value_mut(id) = src.value.clone();
        }
        if let Some(state) = &ckpt.optimizer {
            let mut adam = Adam::new(model.config.optimizer, &model.params);
            adam.state = state.clone();
            model.optimizer = Some(adam);
        }
        if let Some(pos) = word_pos {
            model.rng.set_word_pos(pos);
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint()
            .save(path)
            .map_err(|e| TransformerError::Checkpoint(e.into()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
