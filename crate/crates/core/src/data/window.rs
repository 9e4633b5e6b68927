use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{LabelMap, RawRecord, WindowedSample, CHANNELS};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub len: usize,
    pub stride: usize,
    /// Largest allowed timestamp step inside a window. `None` keeps every
    /// window regardless of gaps.
    pub max_gap: Option<i64>,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            len: 200,
            stride: 100,
            max_gap: None,
        }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.len == 0 || self.stride == 0 {
            return Err(Error::Config(format!(
                "window length {} and stride {} must both be at least 1",
                self.len, self.stride
            )));
        }
        Ok(())
    }
}

/// Groups records by user and orders each user's stream by timestamp
/// (stable, so equal timestamps keep file order).
pub fn group_by_user(records: &[RawRecord]) -> BTreeMap<u32, Vec<&RawRecord>> {
    let mut users: BTreeMap<u32, Vec<&RawRecord>> = BTreeMap::new();
    for r in records {
        users.entry(r.user_id).or_default().push(r);
    }
    for stream in users.values_mut() {
        stream.sort_by_key(|r| r.timestamp);
    }
    users
}

fn user_windows(user: u32, stream: &[&RawRecord], labels: &LabelMap, spec: &WindowSpec) -> Result<Vec<WindowedSample>> {
    let ids = stream
        .iter()
        .map(|r| {
            labels
                .id(&r.activity)
                .ok_or_else(|| Error::Data(format!("activity `{}` missing from the label map", r.activity)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    let mut start = 0;
    while start + spec.len <= stream.len() {
        let span = start..start + spec.len;
        let same_label = ids[span.clone()].iter().all(|&l| l == ids[start]);
        let no_gap = spec.max_gap.is_none_or(|g| {
            stream[span.clone()]
                .windows(2)
                .all(|w| w[1].timestamp - w[0].timestamp <= g)
        });
        if same_label && no_gap {
            let mut x = Vec::with_capacity(spec.len * CHANNELS);
            for r in &stream[span] {
                x.extend(r.accel.iter().map(|&v| v as f32));
            }
            out.push(WindowedSample {
                x,
                label: ids[start],
                user_id: user,
                start_index: start as u64,
            });
        }
        start += spec.stride;
    }
    Ok(out)
}

/// Sliding windows per user at offsets `0, stride, 2*stride, ...` of the
/// timestamp-sorted stream. A window is kept only if every step carries the
/// same label (and respects `max_gap`). Output is ordered by
/// `(user_id, start_index)` for any `workers`.
pub fn make_windows(
    records: &[RawRecord],
    labels: &LabelMap,
    spec: &WindowSpec,
    workers: usize,
) -> Result<Vec<WindowedSample>> {
    spec.validate()?;
    let users: Vec<(u32, Vec<&RawRecord>)> = group_by_user(records).into_iter().collect();
    let workers = workers.clamp(1, users.len().max(1));
    let chunk = users.len().div_ceil(workers).max(1);
    let parts: Vec<Result<Vec<WindowedSample>>> = if workers == 1 {
        vec![users
            .iter()
            .map(|(u, s)| user_windows(*u, s, labels, spec))
            .collect::<Result<Vec<_>>>()
            .map(|v| v.concat())]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = users
                .chunks(chunk)
                .map(|group| {
                    scope.spawn(move || {
                        group
                            .iter()
                            .map(|(u, s)| user_windows(*u, s, labels, spec))
                            .collect::<Result<Vec<_>>>()
                            .map(|v| v.concat())
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("windowing worker panicked"))
                .collect()
        })
    };
    let mut out = Vec::new();
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}
