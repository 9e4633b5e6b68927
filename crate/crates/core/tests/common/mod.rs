//! Test-only oracles: a straight-line re-implementation of the network using
//! plain nested loops over `f64`, sharing no code with the tape.

#![allow(dead_code)]

use setransformer_core::model::{EncoderParams, ModelConfig, ModelParams};

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(data: &[f64], rows: usize, cols: usize) -> Mat {
    (0..rows).map(|r| data[r * cols..(r + 1) * cols].to_vec()).collect()
}

fn w(t: &setransformer_core::tensor::Tensor<f64>) -> Mat {
    let s = t.shape();
    to_mat(t.data(), s[0], s[1])
}

fn vecv(t: &setransformer_core::tensor::Tensor<f64>) -> Vec<f64> {
    t.data().to_vec()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (m, k, n) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; n]; m];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i][p] * b[p][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn add_bias(a: &Mat, b: &[f64]) -> Mat {
    a.iter()
        .map(|r| r.iter().zip(b).map(|(x, y)| x + y).collect())
        .collect()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub fn layer_norm(a: &Mat, gamma: &[f64], beta: &[f64]) -> Mat {
    a.iter()
        .map(|r| {
            let d = r.len() as f64;
            let mean = r.iter().sum::<f64>() / d;
            let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d;
            let inv = 1.0 / (var + 1e-5).sqrt();
            r.iter()
                .enumerate()
                .map(|(c, x)| (x - mean) * inv * gamma[c] + beta[c])
                .collect()
        })
        .collect()
}

/// One head at a time: scores, row softmax, weighted values.
pub fn attention(h: &Mat, p: &EncoderParams<setransformer_core::tensor::Tensor<f64>>, heads: usize) -> (Mat, Vec<Mat>) {
    let t = h.len();
    let d = h[0].len();
    let dk = d / heads;
    let q = add_bias(&matmul(h, &w(&p.w_q)), &vecv(&p.b_q));
    let k = matmul(h, &w(&p.w_k));
    let v = add_bias(&matmul(h, &w(&p.w_v)), &vecv(&p.b_v));
    let mut concat = vec![vec![0.0; d]; t];
    let mut maps = Vec::new();
    for head in 0..heads {
        let off = head * dk;
        let mut map = vec![vec![0.0; t]; t];
        for i in 0..t {
            let scores: Vec<f64> = (0..t)
                .map(|j| (0..dk).map(|c| q[i][off + c] * k[j][off + c]).sum::<f64>() / (dk as f64).sqrt())
                .collect();
            map[i] = softmax(&scores);
            for c in 0..dk {
                concat[i][off + c] = (0..t).map(|j| map[i][j] * v[j][off + c]).sum();
            }
        }
        maps.push(map);
    }
    (add_bias(&matmul(&concat, &w(&p.w_o)), &vecv(&p.b_o)), maps)
}

pub fn encoder_layer(h: &Mat, p: &EncoderParams<setransformer_core::tensor::Tensor<f64>>, heads: usize) -> Mat {
    let (attn, _) = attention(h, p, heads);
    let res: Mat = h
        .iter()
        .zip(&attn)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
        .collect();
    let h1 = layer_norm(&res, &vecv(&p.ln1_gamma), &vecv(&p.ln1_beta));
    let hidden = add_bias(&matmul(&h1, &w(&p.ffn_w1)), &vecv(&p.ffn_b1));
    let hidden: Mat = hidden.iter().map(|r| r.iter().map(|x| x.max(0.0)).collect()).collect();
    let ffn = add_bias(&matmul(&hidden, &w(&p.ffn_w2)), &vecv(&p.ffn_b2));
    let res: Mat = h1
        .iter()
        .zip(&ffn)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
        .collect();
    layer_norm(&res, &vecv(&p.ln2_gamma), &vecv(&p.ln2_beta))
}

pub fn se(h: &Mat, w1: &Mat, w2: &Mat) -> (Mat, Vec<f64>) {
    let t = h.len() as f64;
    let d = h[0].len();
    let z: Vec<f64> = (0..d).map(|c| h.iter().map(|r| r[c]).sum::<f64>() / t).collect();
    let hidden: Vec<f64> = (0..w1[0].len())
        .map(|j| (0..d).map(|c| z[c] * w1[c][j]).sum::<f64>().max(0.0))
        .collect();
    let s: Vec<f64> = (0..d)
        .map(|c| {
            let a: f64 = (0..hidden.len()).map(|j| hidden[j] * w2[j][c]).sum();
            1.0 / (1.0 + (-a).exp())
        })
        .collect();
    let out = h
        .iter()
        .map(|r| r.iter().zip(&s).map(|(x, g)| x * g).collect())
        .collect();
    (out, s)
}

pub fn pool(h: &Mat, w_a: &Mat, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let scores: Vec<f64> = h
        .iter()
        .map(|row| {
            (0..v.len())
                .map(|j| {
                    let u: f64 = (0..row.len()).map(|c| row[c] * w_a[c][j]).sum();
                    v[j] * u.tanh()
                })
                .sum()
        })
        .collect();
    let alpha = softmax(&scores);
    let d = h[0].len();
    let c = (0..d)
        .map(|k| h.iter().zip(&alpha).map(|(r, a)| a * r[k]).sum())
        .collect();
    (c, alpha)
}

pub struct Reference {
    pub probs: Vec<f64>,
    pub logits: Vec<f64>,
    pub alpha: Vec<f64>,
    pub gate: Vec<f64>,
    pub maps: Vec<Vec<Mat>>,
}

/// Whole-network forward pass for one `[T, C]` window.
pub fn reference_forward(x: &Mat, p: &ModelParams<f64>, cfg: &ModelConfig) -> Reference {
    let mut h = add_bias(&matmul(x, &w(&p.w_proj)), &vecv(&p.b_proj));
    let mut maps = Vec::new();
    for layer in &p.layers {
        maps.push(attention(&h, layer, cfg.num_heads).1);
        h = encoder_layer(&h, layer, cfg.num_heads);
    }
    let (h_se, gate) = se(&h, &w(&p.w1_se), &w(&p.w2_se));
    let (c, alpha) = pool(&h_se, &w(&p.w_a), &vecv(&p.v));
    let wc = w(&p.w_c);
    let logits: Vec<f64> = (0..cfg.num_classes)
        .map(|k| (0..c.len()).map(|j| wc[k][j] * c[j]).sum::<f64>() + p.b_c.data()[k])
        .collect();
    Reference {
        probs: softmax(&logits),
        logits,
        alpha,
        gate,
        maps,
    }
}

/// Deterministic pseudo-random values in [-scale, scale] (splitmix64).
pub fn noise(seed: u64, n: usize, scale: f64) -> Vec<f64> {
    let mut state = seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
    (0..n)
        .map(|_| {
            state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            z ^= z >> 31;
            ((z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0) * scale
        })
        .collect()
}
