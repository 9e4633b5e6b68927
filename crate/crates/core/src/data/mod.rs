//! Raw accelerometer ingestion, labelling, windowing, z-score normalization,
//! train/validation splitting, a synthetic generator, and the processed
//! dataset container.

mod container;
mod normalize;
mod raw;
mod split;
mod synth;
mod window;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use container::{Dataset, DATA_MAGIC, DATA_VERSION};
pub use normalize::{apply_normalization, compute_norm_stats, NormStats};
pub use raw::{parse_raw, retain_activities, ParseReport, RawRecord, Schema};
pub use split::{stratified_split, user_split, SplitIndices, SplitMode};
pub use synth::{synth_labels, synthesize_dataset, synthesize_with, ClassProfile, SynthSpec, SYNTH_USERS};
pub use window::{group_by_user, make_windows, WindowSpec};

/// Accelerometer axes per time step.
pub const CHANNELS: usize = 3;

/// Activities kept by default.
pub const DEFAULT_ACTIVITIES: [&str; 6] = ["Downstairs", "Jogging", "Sitting", "Standing", "Upstairs", "Walking"];

/// Label strings in ascending order; a label's id is its position.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    labels: Vec<String>,
}

impl LabelMap {
    /// Sorts and deduplicates.
    pub fn new(labels: impl IntoIterator<Item = impl Into<String>>) -> Self {
        let set: BTreeSet<String> = labels.into_iter().map(Into::into).collect();
        Self {
            labels: set.into_iter().collect(),
        }
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.labels.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn encode_labels(records: &[RawRecord]) -> LabelMap {
    LabelMap::new(records.iter().map(|r| r.activity.clone()))
}

/// One window: `x` is `T x 3`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedSample {
    pub x: Vec<f32>,
    pub label: usize,
    pub user_id: u32,
    pub start_index: u64,
}

impl WindowedSample {
    pub fn window_len(&self) -> usize {
        self.x.len() / CHANNELS
    }
}

/// Windows per class id.
pub fn class_counts(samples: &[WindowedSample], num_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; num_classes];
    for s in samples {
        if let Some(c) = counts.get_mut(s.label) {
            *c += 1;
        }
    }
    counts
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub mode: SplitMode,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            mode: SplitMode::Stratified,
            seed: 0,
        }
    }
}

impl SplitConfig {
    pub fn apply(&self, samples: &[WindowedSample]) -> Result<SplitIndices> {
        match self.mode {
            SplitMode::Stratified => stratified_split(
                &samples.iter().map(|s| s.label).collect::<Vec<_>>(),
                self.train_fraction,
                self.seed,
            ),
            SplitMode::ByUser => user_split(
                &samples.iter().map(|s| s.user_id).collect::<Vec<_>>(),
                self.train_fraction,
                self.seed,
            ),
        }
    }
}

/// Splits, fits normalization on the training part only, and normalizes
/// every window with those statistics.
pub fn assemble(
    mut samples: Vec<WindowedSample>,
    labels: LabelMap,
    window_len: usize,
    schema: String,
    split: SplitConfig,
) -> Result<Dataset> {
    if samples.is_empty() {
        return Err(Error::Data("no windows to assemble".into()));
    }
    let indices = split.apply(&samples)?;
    let stats = compute_norm_stats(indices.train.iter().map(|&i| &samples[i]))?;
    for s in &mut samples {
        apply_normalization(s, &stats);
    }
    Ok(Dataset {
        window_len,
        labels,
        stats,
        schema,
        split,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_sorted_lexicographically() {
        let lm = LabelMap::new(["Walking", "Jogging", "Walking"]);
        assert_eq!(lm.id("Jogging"), Some(0));
        assert_eq!(lm.id("Walking"), Some(1));
        assert_eq!(lm.len(), 2);
        assert_eq!(LabelMap::new(DEFAULT_ACTIVITIES).len(), 6);
        assert_eq!(LabelMap::new(["Sitting"]).id("Sitting"), Some(0));
    }

    #[test]
    fn stats_ignore_validation_windows() {
        let (samples, labels) = synthesize_dataset(&SynthSpec {
            per_class: 10,
            ..SynthSpec::default()
        })
        .unwrap();
        let split = SplitConfig::default();
        let a = assemble(samples.clone(), labels.clone(), 64, "synthetic".into(), split).unwrap();
        let idx = split.apply(&samples).unwrap();
        let mut changed = samples;
        for &i in &idx.val {
            changed[i].x.iter_mut().for_each(|v| *v = *v * 3.0 + 7.0);
        }
        let b = assemble(changed, labels, 64, "synthetic".into(), split).unwrap();
        assert_eq!(a.stats, b.stats);
    }
}
