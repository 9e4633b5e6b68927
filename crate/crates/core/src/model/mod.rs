//! The SETransformer network: input projection, a stack of post-norm
//! transformer encoder layers without positional encoding, squeeze-and-
//! excitation recalibration over the feature axis, temporal attention
//! pooling and a softmax classifier.

pub mod checkpoint;
mod config;
pub mod layers;
mod params;

pub use config::ModelConfig;
pub use layers::{forward, ForwardVars, LAYER_NORM_EPS};
pub use params::{param_shapes, EncoderParams, ModelParams, ParamSet, ParamVars};

use crate::error::{dim_err, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Per-sample outputs of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardDiagnostics<F> {
    pub class_probs: Vec<F>,
    pub logits: Vec<F>,
    /// Temporal pooling weights, one per time step.
    pub pool_weights: Vec<F>,
    /// SE gate, one per model feature.
    pub se_gate: Vec<F>,
    /// `attention_maps[layer][head]` is a row-major `T x T` matrix.
    pub attention_maps: Vec<Vec<Vec<F>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeTransformer<F> {
    pub config: ModelConfig,
    pub params: ModelParams<F>,
}

impl<F: Scalar> SeTransformer<F> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams<F>) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        Ok(Self { config, params })
    }

    /// Lifts a single `[T, C]` window to a batch of one.
    fn batched(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        match x.shape() {
            [t, c] => x.reshape(&[1, *t, *c]),
            [_, _, _] => Ok(x.clone()),
            other => dim_err(format!("expected [T, C] or [batch, T, C] input, got {other:?}")),
        }
    }

    /// Inference on a `[T, C]` window or a `[batch, T, C]` stack.
    pub fn forward(&self, x: &Tensor<F>) -> Result<Vec<ForwardDiagnostics<F>>> {
        let x = self.batched(x)?;
        let mut tape = Tape::new();
        let pv = self.params.register_frozen(&mut tape);
        let xv = tape.constant(&x);
        let out = forward(&mut tape, xv, &pv, &self.config)?;
        Ok(diagnostics(&tape, &out))
    }

    /// `[batch, classes]` logits without recording diagnostics.
    pub fn logits(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let x = self.batched(x)?;
        let mut tape = Tape::new();
        let pv = self.params.register_frozen(&mut tape);
        let xv = tape.constant(&x);
        let out = forward(&mut tape, xv, &pv, &self.config)?;
        Ok(tape.tensor(out.logits))
    }
}

/// Records the mean cross-entropy of a batch; returns the loss handle and the
/// forward outputs.
pub fn loss_on_tape<F: Scalar>(
    tape: &mut Tape<F>,
    params: &ParamVars,
    config: &ModelConfig,
    x: Var,
    labels: &[usize],
) -> Result<(Var, ForwardVars)> {
    let out = forward(tape, x, params, config)?;
    let loss = tape.cross_entropy(out.logits, labels)?;
    Ok((loss, out))
}

/// Splits batched forward outputs into per-sample diagnostics.
pub fn diagnostics<F: Scalar>(tape: &Tape<F>, out: &ForwardVars) -> Vec<ForwardDiagnostics<F>> {
    let batch = tape.shape(out.probs)[0];
    let rows = |v: Var, b: usize| -> Vec<F> {
        let all = tape.value(v);
        let w = all.len() / batch;
        all[b * w..(b + 1) * w].to_vec()
    };
    (0..batch)
        .map(|b| ForwardDiagnostics {
            class_probs: rows(out.probs, b),
            logits: rows(out.logits, b),
            pool_weights: rows(out.alpha, b),
            se_gate: rows(out.se_gate, b),
            attention_maps: out
                .attention
                .iter()
                .map(|&a| {
                    let s = tape.shape(a);
                    let (heads, t) = (s[1], s[2]);
                    let sample = rows(a, b);
                    (0..heads)
                        .map(|h| sample[h * t * t..(h + 1) * t * t].to_vec())
                        .collect()
                })
                .collect(),
        })
        .collect()
}

/// Stacks `[T, C]` row-major windows into a `[batch, T, C]` tensor.
pub fn stack_windows<F: Scalar>(windows: &[&[F]], window_len: usize, channels: usize) -> Result<Tensor<F>> {
    let mut data = Vec::with_capacity(windows.len() * window_len * channels);
    for w in windows {
        if w.len() != window_len * channels {
            return dim_err(format!(
                "window of {} values, expected {window_len}x{channels}",
                w.len()
            ));
        }
        data.extend_from_slice(w);
    }
    Tensor::new(&[windows.len(), window_len, channels], data)
}
