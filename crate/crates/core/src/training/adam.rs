use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::Scalar;

/// First and second moment estimates, mirroring the parameter shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F> {
    pub m: ModelParams<F>,
    pub v: ModelParams<F>,
    pub t: u64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(config: &ModelConfig) -> Self {
        Self {
            m: ModelParams::zeros(config),
            v: ModelParams::zeros(config),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update from the gradients stored on `params`.
/// Nothing is modified unless every parameter carries a gradient.
pub fn adam_step<F: Scalar>(params: &mut ModelParams<F>, state: &mut AdamState<F>, cfg: &TrainConfig) -> Result<()> {
    for (name, p) in params.entries() {
        match p.grad() {
            Some(g) if g.len() == p.len() => {}
            Some(g) => {
                return Err(Error::Contract(format!(
                    "gradient for {name} has {} values, parameter has {}",
                    g.len(),
                    p.len()
                )))
            }
            None => return Err(Error::Contract(format!("missing gradient for {name}"))),
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (F::lit(cfg.beta1), F::lit(cfg.beta2));
    let (one_b1, one_b2) = (F::lit(1.0 - cfg.beta1), F::lit(1.0 - cfg.beta2));
    let corr1 = F::lit(1.0 - cfg.beta1.powi(t));
    let corr2 = F::lit(1.0 - cfg.beta2.powi(t));
    let lr = F::lit(cfg.learning_rate);
    let eps = F::lit(cfg.adam_eps);

    let ms = state.m.entries_mut();
    let vs = state.v.entries_mut();
    for (((_, p), (_, m)), (_, v)) in params.entries_mut().into_iter().zip(ms).zip(vs) {
        let g = p.grad().expect("checked above").to_vec();
        let (m, v) = (m.data_mut(), v.data_mut());
        for (i, w) in p.data_mut().iter_mut().enumerate() {
            m[i] = b1 * m[i] + one_b1 * g[i];
            v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
            let m_hat = m[i] / corr1;
            let v_hat = v[i] / corr2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
