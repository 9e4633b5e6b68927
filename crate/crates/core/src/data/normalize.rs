use serde::{Deserialize, Serialize};

use super::{WindowedSample, CHANNELS};
use crate::error::{Error, Result};

const AXES: [&str; CHANNELS] = ["x", "y", "z"];

/// Per-axis z-score parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; CHANNELS],
    pub std: [f64; CHANNELS],
}

impl NormStats {
    pub fn validate(&self) -> Result<()> {
        for a in 0..CHANNELS {
            if !self.mean[a].is_finite() || !(self.std[a] > 0.0 && self.std[a].is_finite()) {
                return Err(Error::Data(format!(
                    "axis {} has degenerate statistics (mean {}, std {})",
                    AXES[a], self.mean[a], self.std[a]
                )));
            }
        }
        Ok(())
    }
}

/// Mean and population standard deviation of each axis, pooled over every
/// time step of every given window.
pub fn compute_norm_stats<'a>(samples: impl IntoIterator<Item = &'a WindowedSample>) -> Result<NormStats> {
    let samples: Vec<&WindowedSample> = samples.into_iter().collect();
    let n: usize = samples.iter().map(|s| s.x.len() / CHANNELS).sum();
    if n == 0 {
        return Err(Error::Data("cannot fit normalization on an empty training set".into()));
    }
    let mut sum = [0.0f64; CHANNELS];
    for s in &samples {
        for row in s.x.chunks_exact(CHANNELS) {
            for a in 0..CHANNELS {
                sum[a] += row[a] as f64;
            }
        }
    }
    let mean = sum.map(|s| s / n as f64);
    let mut sq = [0.0f64; CHANNELS];
    for s in &samples {
        for row in s.x.chunks_exact(CHANNELS) {
            for a in 0..CHANNELS {
                let d = row[a] as f64 - mean[a];
                sq[a] += d * d;
            }
        }
    }
    let stats = NormStats {
        mean,
        std: sq.map(|s| (s / n as f64).sqrt()),
    };
    stats.validate()?;
    Ok(stats)
}

/// `(x - mean) / std` per axis, in place.
pub fn apply_normalization(sample: &mut WindowedSample, stats: &NormStats) {
    for row in sample.x.chunks_exact_mut(CHANNELS) {
        for a in 0..CHANNELS {
            row[a] = ((row[a] as f64 - stats.mean[a]) / stats.std[a]) as f32;
        }
    }
}
