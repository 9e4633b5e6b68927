//! Forward stages, each recorded on a tape. All stages take a leading batch
//! axis: activations are `[batch, time, features]`.

use super::{EncoderParams, ModelConfig, ParamVars};
use crate::error::{dim_err, Result};
use crate::tensor::{Scalar, Tape, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handles to the outputs of one full forward pass.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub logits: Var,
    pub probs: Var,
    /// `[batch, time]` pooling weights.
    pub alpha: Var,
    /// `[batch, model_dim]` SE gate.
    pub se_gate: Var,
    /// Per encoder layer, `[batch, heads, time, time]` attention weights.
    pub attention: Vec<Var>,
}

fn affine<F: Scalar>(tape: &mut Tape<F>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add(y, b)
}

/// `H0 = X W_proj + b_proj`, applied to every time step.
pub fn input_projection<F: Scalar>(tape: &mut Tape<F>, x: Var, p: &ParamVars) -> Result<Var> {
    let (c, d) = (tape.shape(p.w_proj)[0], tape.shape(p.w_proj)[1]);
    if tape.shape(x).last() != Some(&c) {
        return dim_err(format!(
            "input of shape {:?} does not have {c} channels for a {c}x{d} projection",
            tape.shape(x)
        ));
    }
    affine(tape, x, p.w_proj, p.b_proj)
}

/// Scaled dot-product attention over all time steps (no mask, no positional
/// terms). Returns the output-projected mixture and the `[batch, heads, T, T]`
/// attention weights.
pub fn multi_head_self_attention<F: Scalar>(
    tape: &mut Tape<F>,
    h: Var,
    p: &EncoderParams<Var>,
    num_heads: usize,
) -> Result<(Var, Var)> {
    let shape = tape.shape(h).to_vec();
    let [batch, t, d] = shape[..] else {
        return dim_err(format!("attention expects [batch, time, dim], got {shape:?}"));
    };
    if num_heads == 0 || d % num_heads != 0 {
        return dim_err(format!("model dim {d} does not split into {num_heads} heads"));
    }
    let dk = d / num_heads;
    let mut split = |w: Var, b: Option<Var>| -> Result<Var> {
        let y = match b {
            Some(b) => affine(tape, h, w, b)?,
            None => tape.matmul(h, w)?,
        };
        let y = tape.reshape(y, &[batch, t, num_heads, dk])?;
        tape.permute(y, &[0, 2, 1, 3])
    };
    let q = split(p.w_q, Some(p.b_q))?;
    let k = split(p.w_k, None)?;
    let v = split(p.w_v, Some(p.b_v))?;

    let scores = tape.bmm_t(q, k)?;
    let scores = tape.scale(scores, F::lit(1.0 / (dk as f64).sqrt()));
    let weights = tape.softmax(scores, 3)?;
    let mixed = tape.bmm(weights, v)?;
    let merged = tape.permute(mixed, &[0, 2, 1, 3])?;
    let merged = tape.reshape(merged, &[batch, t, d])?;
    let out = affine(tape, merged, p.w_o, p.b_o)?;
    Ok((out, weights))
}

/// Post-norm encoder layer:
/// `H = LN(H + MHSA(H))`, then `H = LN(H + FFN(H))` with a relu FFN.
pub fn encoder_layer<F: Scalar>(
    tape: &mut Tape<F>,
    h: Var,
    p: &EncoderParams<Var>,
    num_heads: usize,
) -> Result<(Var, Var)> {
    let (attn, weights) = multi_head_self_attention(tape, h, p, num_heads)?;
    let res = tape.add(h, attn)?;
    let h1 = tape.layer_norm(res, p.ln1_gamma, p.ln1_beta, LAYER_NORM_EPS)?;

    let hidden = affine(tape, h1, p.ffn_w1, p.ffn_b1)?;
    let hidden = tape.relu(hidden);
    let ffn = affine(tape, hidden, p.ffn_w2, p.ffn_b2)?;
    let res = tape.add(h1, ffn)?;
    let h2 = tape.layer_norm(res, p.ln2_gamma, p.ln2_beta, LAYER_NORM_EPS)?;
    Ok((h2, weights))
}

/// Squeeze-and-excitation over the model feature axis. Returns the rescaled
/// activations and the `[batch, dim]` gate.
pub fn se_module<F: Scalar>(tape: &mut Tape<F>, h: Var, p: &ParamVars) -> Result<(Var, Var)> {
    let shape = tape.shape(h).to_vec();
    let [batch, _, d] = shape[..] else {
        return dim_err(format!("SE expects [batch, time, dim], got {shape:?}"));
    };
    let z = tape.reduce_mean(h, 1)?;
    let squeezed = tape.matmul(z, p.w1_se)?;
    let squeezed = tape.relu(squeezed);
    let excite = tape.matmul(squeezed, p.w2_se)?;
    let gate = tape.sigmoid(excite);
    let gate3 = tape.reshape(gate, &[batch, 1, d])?;
    let out = tape.mul(h, gate3)?;
    Ok((out, gate))
}

/// `alpha_t = softmax_t(v · tanh(W_a h_t))`, `c = sum_t alpha_t h_t`.
/// Returns `c` as `[batch, dim]` and `alpha` as `[batch, time]`.
pub fn temporal_attention_pool<F: Scalar>(tape: &mut Tape<F>, h: Var, p: &ParamVars) -> Result<(Var, Var)> {
    let shape = tape.shape(h).to_vec();
    let [batch, t, d] = shape[..] else {
        return dim_err(format!("pooling expects [batch, time, dim], got {shape:?}"));
    };
    let hidden = tape.shape(p.v)[0];
    let u = tape.matmul(h, p.w_a)?;
    let u = tape.tanh(u);
    let v_col = tape.reshape(p.v, &[hidden, 1])?;
    let scores = tape.matmul(u, v_col)?;
    let scores = tape.reshape(scores, &[batch, t])?;
    let alpha = tape.softmax(scores, 1)?;
    let alpha_row = tape.reshape(alpha, &[batch, 1, t])?;
    let context = tape.bmm(alpha_row, h)?;
    let context = tape.reshape(context, &[batch, d])?;
    Ok((context, alpha))
}

/// Classifier head: returns `(logits, probs)`, both `[batch, classes]`.
pub fn classify<F: Scalar>(tape: &mut Tape<F>, c: Var, p: &ParamVars) -> Result<(Var, Var)> {
    let logits = tape.matmul_t(c, p.w_c)?;
    let logits = tape.add(logits, p.b_c)?;
    let probs = tape.softmax(logits, 1)?;
    Ok((logits, probs))
}

/// Projection, encoder stack, SE recalibration, attention pooling, classifier.
pub fn forward<F: Scalar>(tape: &mut Tape<F>, x: Var, p: &ParamVars, config: &ModelConfig) -> Result<ForwardVars> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 3 || shape[2] != config.input_channels {
        return dim_err(format!(
            "forward expects [batch, time, {}], got {shape:?}",
            config.input_channels
        ));
    }
    let mut h = input_projection(tape, x, p).map_err(|e| e.in_stage("input projection"))?;
    let mut attention = Vec::with_capacity(p.layers.len());
    for (l, layer) in p.layers.iter().enumerate() {
        let (next, weights) =
            encoder_layer(tape, h, layer, config.num_heads).map_err(|e| e.in_stage(&format!("encoder layer {l}")))?;
        h = next;
        attention.push(weights);
    }
    let (h_se, se_gate) = se_module(tape, h, p).map_err(|e| e.in_stage("squeeze-excitation"))?;
    let (context, alpha) = temporal_attention_pool(tape, h_se, p).map_err(|e| e.in_stage("attention pooling"))?;
    let (logits, probs) = classify(tape, context, p).map_err(|e| e.in_stage("classifier"))?;
    Ok(ForwardVars {
        logits,
        probs,
        alpha,
        se_gate,
        attention,
    })
}
