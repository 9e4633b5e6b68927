use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Weights of one post-norm encoder layer.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<T> {
    pub w_q: T,
    pub b_q: T,
    /// No key bias: it would shift every score in a row equally, which the
    /// softmax ignores.
    pub w_k: T,
    pub w_v: T,
    pub b_v: T,
    pub w_o: T,
    pub b_o: T,
    pub ln1_gamma: T,
    pub ln1_beta: T,
    pub ffn_w1: T,
    pub ffn_b1: T,
    pub ffn_w2: T,
    pub ffn_b2: T,
    pub ln2_gamma: T,
    pub ln2_beta: T,
}

/// Every learnable weight of the network, generic over the slot type so the
/// same layout serves stored tensors ([`ModelParams`]) and their handles on a
/// tape ([`ParamVars`]).
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    pub w_proj: T,
    pub b_proj: T,
    pub layers: Vec<EncoderParams<T>>,
    pub w1_se: T,
    pub w2_se: T,
    pub w_a: T,
    pub v: T,
    pub w_c: T,
    pub b_c: T,
}

pub type ModelParams<F> = ParamSet<Tensor<F>>;
pub type ParamVars = ParamSet<Var>;

const LAYER_FIELDS: [&str; 15] = [
    "w_q",
    "b_q",
    "w_k",
    "w_v",
    "b_v",
    "w_o",
    "b_o",
    "ln1_gamma",
    "ln1_beta",
    "ffn_w1",
    "ffn_b1",
    "ffn_w2",
    "ffn_b2",
    "ln2_gamma",
    "ln2_beta",
];

impl<T> EncoderParams<T> {
    fn slots(&self) -> [&T; 15] {
        [
            &self.w_q,
            &self.b_q,
            &self.w_k,
            &self.w_v,
            &self.b_v,
            &self.w_o,
            &self.b_o,
            &self.ln1_gamma,
            &self.ln1_beta,
            &self.ffn_w1,
            &self.ffn_b1,
            &self.ffn_w2,
            &self.ffn_b2,
            &self.ln2_gamma,
            &self.ln2_beta,
        ]
    }

    fn slots_mut(&mut self) -> [&mut T; 15] {
        [
            &mut self.w_q,
            &mut self.b_q,
            &mut self.w_k,
            &mut self.w_v,
            &mut self.b_v,
            &mut self.w_o,
            &mut self.b_o,
            &mut self.ln1_gamma,
            &mut self.ln1_beta,
            &mut self.ffn_w1,
            &mut self.ffn_b1,
            &mut self.ffn_w2,
            &mut self.ffn_b2,
            &mut self.ln2_gamma,
            &mut self.ln2_beta,
        ]
    }

    fn from_fn(mut next: impl FnMut(&str) -> Result<T>) -> Result<Self> {
        Ok(Self {
            w_q: next("w_q")?,
            b_q: next("b_q")?,
            w_k: next("w_k")?,
            w_v: next("w_v")?,
            b_v: next("b_v")?,
            w_o: next("w_o")?,
            b_o: next("b_o")?,
            ln1_gamma: next("ln1_gamma")?,
            ln1_beta: next("ln1_beta")?,
            ffn_w1: next("ffn_w1")?,
            ffn_b1: next("ffn_b1")?,
            ffn_w2: next("ffn_w2")?,
            ffn_b2: next("ffn_b2")?,
            ln2_gamma: next("ln2_gamma")?,
            ln2_beta: next("ln2_beta")?,
        })
    }
}

impl<T> ParamSet<T> {
    /// Parameter names in canonical order (the checkpoint order).
    pub fn names(num_layers: usize) -> Vec<String> {
        let mut names = vec!["w_proj".to_string(), "b_proj".to_string()];
        for l in 0..num_layers {
            names.extend(LAYER_FIELDS.iter().map(|f| format!("layers.{l}.{f}")));
        }
        names.extend(["w1_se", "w2_se", "w_a", "v", "w_c", "b_c"].map(String::from));
        names
    }

    /// `(name, slot)` pairs in canonical order.
    pub fn entries(&self) -> Vec<(String, &T)> {
        let mut slots = vec![&self.w_proj, &self.b_proj];
        for layer in &self.layers {
            slots.extend(layer.slots());
        }
        slots.extend([&self.w1_se, &self.w2_se, &self.w_a, &self.v, &self.w_c, &self.b_c]);
        Self::names(self.layers.len()).into_iter().zip(slots).collect()
    }

    pub fn entries_mut(&mut self) -> Vec<(String, &mut T)> {
        let names = Self::names(self.layers.len());
        let mut slots = vec![&mut self.w_proj, &mut self.b_proj];
        for layer in &mut self.layers {
            slots.extend(layer.slots_mut());
        }
        slots.extend([
            &mut self.w1_se,
            &mut self.w2_se,
            &mut self.w_a,
            &mut self.v,
            &mut self.w_c,
            &mut self.b_c,
        ]);
        names.into_iter().zip(slots).collect()
    }

    /// Builds a set by asking `next(name)` for each slot in canonical order.
    pub fn try_from_fn(num_layers: usize, mut next: impl FnMut(&str) -> Result<T>) -> Result<Self> {
        let w_proj = next("w_proj")?;
        let b_proj = next("b_proj")?;
        let mut layers = Vec::with_capacity(num_layers);
        for l in 0..num_layers {
            layers.push(EncoderParams::from_fn(|f| next(&format!("layers.{l}.{f}")))?);
        }
        Ok(Self {
            w_proj,
            b_proj,
            layers,
            w1_se: next("w1_se")?,
            w2_se: next("w2_se")?,
            w_a: next("w_a")?,
            v: next("v")?,
            w_c: next("w_c")?,
            b_c: next("b_c")?,
        })
    }

    pub fn map<U>(&self, mut f: impl FnMut(&str, &T) -> U) -> ParamSet<U> {
        let entries = self.entries();
        let mut it = entries.into_iter();
        ParamSet::try_from_fn(self.layers.len(), |name| {
            let (n, slot) = it.next().expect("same layout");
            debug_assert_eq!(n, name);
            Ok(f(name, slot))
        })
        .expect("mapping cannot fail")
    }
}

/// Shape of every parameter for a configuration, in canonical order.
pub fn param_shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (c, d, f) = (config.input_channels, config.model_dim, config.ffn_hidden);
    let mut shapes = vec![vec![c, d], vec![d]];
    for _ in 0..config.num_layers {
        shapes.extend([
            vec![d, d],
            vec![d],
            vec![d, d],
            vec![d, d],
            vec![d],
            vec![d, d],
            vec![d],
            vec![d],
            vec![d],
            vec![d, f],
            vec![f],
            vec![f, d],
            vec![d],
            vec![d],
            vec![d],
        ]);
    }
    shapes.extend([
        vec![d, config.se_hidden()],
        vec![config.se_hidden(), d],
        vec![d, config.pool_hidden],
        vec![config.pool_hidden],
        vec![config.num_classes, d],
        vec![config.num_classes],
    ]);
    ParamSet::<()>::names(config.num_layers)
        .into_iter()
        .zip(shapes)
        .collect()
}

impl<F: Scalar> ModelParams<F> {
    /// Seeded initialization: fan-based uniform weights in
    /// `±sqrt(6 / (fan_in + fan_out))`, zero biases and betas, unit gammas.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shapes = param_shapes(config).into_iter();
        Self::try_from_fn(config.num_layers, |name| {
            let (_, shape) = shapes.next().expect("shape per name");
            let leaf = name.rsplit('.').next().unwrap_or(name);
            let t = if leaf.ends_with("gamma") {
                Tensor::ones(&shape)
            } else if shape.len() == 1 && leaf != "v" {
                Tensor::zeros(&shape)
            } else {
                let (fan_in, fan_out) = match shape[..] {
                    [rows, cols] => (rows, cols),
                    [n] => (n, 1),
                    _ => unreachable!("parameters are vectors or matrices"),
                };
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..shape.iter().product::<usize>())
                    .map(|_| F::lit(rng.random_range(-limit..limit)))
                    .collect();
                Tensor::new(&shape, data)?
            };
            Ok(t)
        })
    }

    /// All-zero parameters of the right shapes (gammas zero too).
    pub fn zeros(config: &ModelConfig) -> Self {
        let mut shapes = param_shapes(config).into_iter();
        Self::try_from_fn(config.num_layers, |_| {
            Ok(Tensor::zeros(&shapes.next().expect("shape").1))
        })
        .expect("zeros cannot fail")
    }

    /// Checks every tensor against the shapes dictated by `config`.
    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        if self.layers.len() != config.num_layers {
            return Err(Error::Dimension(format!(
                "{} encoder layers, config needs {}",
                self.layers.len(),
                config.num_layers
            )));
        }
        for ((name, t), (_, want)) in self.entries().into_iter().zip(param_shapes(config)) {
            if t.shape() != want.as_slice() {
                return Err(Error::Dimension(format!(
                    "parameter {name} has shape {:?}, expected {want:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.entries().iter().map(|(_, t)| t.len()).sum()
    }

    /// Records every parameter on the tape as a gradient-receiving leaf.
    pub fn register(&self, tape: &mut Tape<F>) -> ParamVars {
        self.map(|_, t| tape.param(t))
    }

    /// Records every parameter as a constant (inference).
    pub fn register_frozen(&self, tape: &mut Tape<F>) -> ParamVars {
        self.map(|_, t| tape.constant(t))
    }

    /// Copies gradients from a consumed tape into each tensor's grad slot.
    pub fn absorb_grads(&mut self, tape: &Tape<F>, vars: &ParamVars) -> Result<()> {
        let vars = vars.entries();
        for ((name, t), (_, &v)) in self.entries_mut().into_iter().zip(vars) {
            let g = tape
                .grad(v)
                .ok_or_else(|| Error::Contract(format!("no gradient recorded for {name}")))?;
            t.set_grad(g.into_data())?;
        }
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        for (_, t) in self.entries_mut() {
            t.clear_grad();
        }
    }

    pub fn cast<G: Scalar>(&self) -> ModelParams<G> {
        self.map(|_, t| t.cast())
    }

    pub fn is_finite(&self) -> bool {
        self.entries().iter().all(|(_, t)| t.is_finite())
    }

    /// Order-sensitive digest of every value's bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (_, t) in self.entries() {
            for v in t.data() {
                let bits = v.as_f64().to_bits();
                h = (h ^ bits).wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}
