//! Processed-dataset file.
//!
//! Little-endian throughout. Layout (version 1):
//!
//! ```text
//! magic            8 bytes  "SETRDATA"
//! version          u32      1
//! window_len (T)   u32
//! channels (C)     u32      3
//! classes (K)      u32
//! labels           K x (u32 length + UTF-8 bytes), in id order
//! mean, std        3 x f64 each
//! schema           u32 length + UTF-8 ("6:0,1,2,3,4,5", or "synthetic")
//! seed             u64      split seed
//! train_fraction   f64
//! split_mode       u8       0 = stratified, 1 = by-user
//! count            u64
//! per window:
//!   label u32, user u32, start u64, T x C f32 (already normalized)
//! ```
//!
//! The split is not stored: it is recomputed from the seed, labels and users.

use std::fs;
use std::path::Path;

use super::{LabelMap, NormStats, SplitConfig, SplitIndices, SplitMode, WindowedSample, CHANNELS};
use crate::codec::{put_f64, put_str, put_u32, put_u64, Reader};
use crate::error::{Error, Result};

pub const DATA_MAGIC: &[u8; 8] = b"SETRDATA";
pub const DATA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub window_len: usize,
    pub labels: LabelMap,
    /// Statistics the windows were normalized with (fitted on the train part).
    pub stats: NormStats,
    pub schema: String,
    pub split: SplitConfig,
    pub samples: Vec<WindowedSample>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn split_indices(&self) -> Result<SplitIndices> {
        self.split.apply(&self.samples)
    }

    pub fn encode(&self) -> Vec<u8> {
        let row = 16 + self.window_len * CHANNELS * 4;
        let mut out = Vec::with_capacity(128 + self.samples.len() * row);
        out.extend_from_slice(DATA_MAGIC);
        put_u32(&mut out, DATA_VERSION as usize);
        put_u32(&mut out, self.window_len);
        put_u32(&mut out, CHANNELS);
        put_u32(&mut out, self.labels.len());
        for l in self.labels.names() {
            put_str(&mut out, l);
        }
        for v in self.stats.mean.iter().chain(&self.stats.std) {
            put_f64(&mut out, *v);
        }
        put_str(&mut out, &self.schema);
        put_u64(&mut out, self.split.seed);
        put_f64(&mut out, self.split.train_fraction);
        out.push(match self.split.mode {
            SplitMode::Stratified => 0,
            SplitMode::ByUser => 1,
        });
        put_u64(&mut out, self.samples.len() as u64);
        for s in &self.samples {
            put_u32(&mut out, s.label);
            put_u32(&mut out, s.user_id as usize);
            put_u64(&mut out, s.start_index);
            for v in &s.x {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "dataset");
        if r.take(8)? != DATA_MAGIC {
            return Err(Error::Format("not a dataset file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version as u32 != DATA_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let window_len = r.u32()?;
        let channels = r.u32()?;
        if channels != CHANNELS || window_len == 0 {
            return Err(Error::Format(format!(
                "unsupported window shape {window_len}x{channels}"
            )));
        }
        let k = r.u32()?;
        let mut names = Vec::with_capacity(k);
        for _ in 0..k {
            names.push(r.string()?);
        }
        let labels = LabelMap::new(names.iter().cloned());
        if labels.names() != names.as_slice() {
            return Err(Error::Format("label table is not sorted and unique".into()));
        }
        let mut stats = NormStats {
            mean: [0.0; CHANNELS],
            std: [0.0; CHANNELS],
        };
        for v in stats.mean.iter_mut().chain(stats.std.iter_mut()) {
            *v = r.f64()?;
        }
        let schema = r.string()?;
        let seed = r.u64()?;
        let train_fraction = r.f64()?;
        let mode = match r.u8()? {
            0 => SplitMode::Stratified,
            1 => SplitMode::ByUser,
            m => return Err(Error::Format(format!("unknown split mode byte {m}"))),
        };
        let count = r.u64()?;
        let row = 16 + window_len * CHANNELS * 4;
        if count.checked_mul(row as u64).is_none_or(|n| n > bytes.len() as u64) {
            return Err(Error::Format(format!("dataset claims {count} windows, file too short")));
        }
        let mut samples = Vec::with_capacity(count as usize);
        for i in 0..count {
            let label = r.u32()?;
            if label >= k {
                return Err(Error::Format(format!(
                    "window {i} has label {label} but only {k} classes"
                )));
            }
            let user_id = r.u32()? as u32;
            let start_index = r.u64()?;
            let x = r
                .take(window_len * CHANNELS * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            samples.push(WindowedSample {
                x,
                label,
                user_id,
                start_index,
            });
        }
        r.finish()?;
        Ok(Self {
            window_len,
            labels,
            stats,
            schema,
            split: SplitConfig {
                train_fraction,
                mode,
                seed,
            },
            samples,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Data(format!("cannot read dataset {}: {e}", path.display())))?;
        Self::decode(&bytes)
    }
}
