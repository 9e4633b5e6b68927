//! WebAssembly bindings for the static page in `www/`. Everything returns
//! JSON strings so the page needs no generated type glue beyond the
//! `wasm-bindgen` shim.

use serde_json::json;
use setransformer_core::data::{assemble, synth_labels, synthesize_with, ClassProfile, Dataset, SplitConfig};
use setransformer_core::model::{ModelConfig, SeTransformer};
use setransformer_core::tensor::Tensor;
use setransformer_core::training::{evaluate, train_epoch, AdamState, TrainConfig};
use wasm_bindgen::prelude::*;

const WINDOW: usize = 32;
const PER_CLASS: usize = 30;

fn js_err(e: setransformer_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn demo_model_config(classes: usize) -> ModelConfig {
    ModelConfig {
        window_len: WINDOW,
        model_dim: 16,
        num_heads: 2,
        ffn_hidden: 64,
        se_reduction: 4,
        pool_hidden: 8,
        num_classes: classes,
        ..ModelConfig::default()
    }
}

/// A synthetic dataset plus a model being trained on it.
#[wasm_bindgen]
pub struct Demo {
    data: Dataset,
    train: Vec<usize>,
    val: Vec<usize>,
    model: SeTransformer<f32>,
    state: AdamState<f32>,
    cfg: TrainConfig,
    epoch: usize,
}

#[wasm_bindgen]
impl Demo {
    /// Fresh synthetic data with `classes` activity profiles and an untrained model.
    #[wasm_bindgen(constructor)]
    pub fn new(classes: usize, seed: u64) -> Result<Demo, JsError> {
        Self::build(classes, seed).map_err(js_err)
    }

    #[wasm_bindgen(js_name = numSamples)]
    pub fn num_samples(&self) -> usize {
        self.data.samples.len()
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// `{label, class, x: [[ax, ay, az], ...]}` for one normalized window.
    pub fn window(&self, index: usize) -> Result<String, JsError> {
        let s = self
            .data
            .samples
            .get(index)
            .ok_or_else(|| JsError::new(&format!("window {index} out of range")))?;
        let x: Vec<&[f32]> = s.x.chunks(3).collect();
        Ok(json!({"label": self.data.labels.name(s.label), "class": s.label, "x": x}).to_string())
    }

    /// Runs `epochs` passes over the training split and returns one record
    /// per epoch: `{epoch, train_loss, val_loss, val_accuracy}`.
    pub fn train(&mut self, epochs: usize) -> Result<String, JsError> {
        self.train_inner(epochs).map_err(js_err)
    }

    /// Forward pass on one window: class probabilities, temporal pooling
    /// weights, SE gate and the first layer's attention maps.
    pub fn inspect(&self, index: usize) -> Result<String, JsError> {
        self.inspect_inner(index).map_err(js_err)
    }
}

impl Demo {
    pub fn build(classes: usize, seed: u64) -> setransformer_core::Result<Demo> {
        let profiles: Vec<ClassProfile> = (0..classes).map(ClassProfile::default_for).collect();
        let (samples, _) = synthesize_with(&profiles, PER_CLASS, WINDOW, seed)?;
        let split = SplitConfig {
            seed,
            ..SplitConfig::default()
        };
        let data = assemble(samples, synth_labels(classes), WINDOW, "synthetic".into(), split)?;
        let idx = data.split_indices()?;
        let config = demo_model_config(classes);
        let cfg = TrainConfig {
            learning_rate: 0.003,
            batch_size: 16,
            seed,
            ..TrainConfig::default()
        };
        Ok(Demo {
            model: SeTransformer::new(config.clone(), seed)?,
            state: AdamState::new(&config),
            train: idx.train,
            val: idx.val,
            data,
            cfg,
            epoch: 0,
        })
    }

    pub fn train_inner(&mut self, epochs: usize) -> setransformer_core::Result<String> {
        let mut out = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let train_loss = train_epoch(
                &mut self.model,
                &self.data.samples,
                &self.train,
                &mut self.state,
                &self.cfg,
                self.epoch,
            )?;
            let ev = evaluate(&self.model, &self.data.samples, &self.val, self.cfg.batch_size, 1)?;
            out.push(json!({
                "epoch": self.epoch,
                "train_loss": train_loss,
                "val_loss": ev.loss,
                "val_accuracy": ev.confusion.summarize().accuracy,
            }));
            self.epoch += 1;
        }
        Ok(serde_json::Value::from(out).to_string())
    }

    pub fn inspect_inner(&self, index: usize) -> setransformer_core::Result<String> {
        let s = self
            .data
            .samples
            .get(index)
            .ok_or_else(|| setransformer_core::Error::Contract(format!("window {index} out of range")))?;
        let x = Tensor::new(&[WINDOW, 3], s.x.clone())?;
        let d = self.model.forward(&x)?.remove(0);
        Ok(json!({
            "label": self.data.labels.name(s.label),
            "labels": self.data.labels.names(),
            "probs": d.class_probs,
            "pool": d.pool_weights,
            "se_gate": d.se_gate,
            "attention": d.attention_maps[0],
        })
        .to_string())
    }
}
