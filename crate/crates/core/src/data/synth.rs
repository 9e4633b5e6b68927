//! Labelled accelerometer-like windows with known class structure, for
//! exercising the pipeline without the real recordings.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{LabelMap, WindowedSample, CHANNELS};
use crate::error::{Error, Result};

/// Synthetic users the windows are spread over (round-robin).
pub const SYNTH_USERS: u32 = 8;

/// Per-axis signal model: `offset + amplitude * sin(2 pi f t / T + phase) + noise`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassProfile {
    pub offset: [f64; CHANNELS],
    pub amplitude: [f64; CHANNELS],
    pub noise: [f64; CHANNELS],
    /// Cycles per window.
    pub cycles: f64,
}

impl ClassProfile {
    /// Profile of class `k` in the default family; class means sit on a line
    /// with spacing `4 * |(1, 0.5, -0.75)|`.
    pub fn default_for(k: usize) -> Self {
        let kf = k as f64;
        let amp = |axis: usize| 0.5 + 0.25 * ((k + axis) % 3) as f64;
        let noise = 0.1 + 0.05 * (k % 3) as f64;
        Self {
            offset: [4.0 * kf, 2.0 * kf, -3.0 * kf],
            amplitude: [amp(0), amp(1), amp(2)],
            noise: [noise; CHANNELS],
            cycles: 1.0 + kf,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub per_class: usize,
    pub window_len: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_classes: 3,
            per_class: 200,
            window_len: 64,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn profiles(&self) -> Vec<ClassProfile> {
        (0..self.num_classes).map(ClassProfile::default_for).collect()
    }
}

/// Label names `class_00, class_01, ...`, so lexicographic order matches ids.
pub fn synth_labels(k: usize) -> LabelMap {
    LabelMap::new((0..k).map(|c| format!("class_{c:02}")))
}

pub fn synthesize_dataset(spec: &SynthSpec) -> Result<(Vec<WindowedSample>, LabelMap)> {
    synthesize_with(&spec.profiles(), spec.per_class, spec.window_len, spec.seed)
}

/// Windows interleaved by class (`0, 1, ..., K-1, 0, 1, ...`). Noise is
/// Gaussian clipped at four standard deviations so signals stay bounded.
pub fn synthesize_with(
    profiles: &[ClassProfile],
    per_class: usize,
    window_len: usize,
    seed: u64,
) -> Result<(Vec<WindowedSample>, LabelMap)> {
    if profiles.len() < 2 {
        return Err(Error::Config(format!(
            "synthesis needs at least 2 classes, got {}",
            profiles.len()
        )));
    }
    if per_class == 0 || window_len == 0 {
        return Err(Error::Config(
            "synthesis needs per_class >= 1 and window_len >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut samples = Vec::with_capacity(per_class * profiles.len());
    for i in 0..per_class * profiles.len() {
        let k = i % profiles.len();
        let p = &profiles[k];
        let phase: [f64; CHANNELS] = std::array::from_fn(|_| rng.random_range(0.0..TAU));
        let mut x = Vec::with_capacity(window_len * CHANNELS);
        for t in 0..window_len {
            let angle = TAU * p.cycles * t as f64 / window_len as f64;
            for a in 0..CHANNELS {
                let z: f64 = std_normal.sample(&mut rng);
                let v = p.offset[a] + p.amplitude[a] * (angle + phase[a]).sin() + p.noise[a] * z.clamp(-4.0, 4.0);
                x.push(v as f32);
            }
        }
        samples.push(WindowedSample {
            x,
            label: k,
            user_id: i as u32 % SYNTH_USERS,
            start_index: (i / SYNTH_USERS as usize) as u64,
        });
    }
    Ok((samples, synth_labels(profiles.len())))
}
