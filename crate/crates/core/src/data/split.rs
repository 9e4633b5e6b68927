use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitMode {
    /// Per-class shuffle, first `ceil(fraction * n_c)` of each class to train.
    #[default]
    Stratified,
    /// Whole users go to one side; windows of one user never straddle.
    ByUser,
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitMode::Stratified => "stratified",
            SplitMode::ByUser => "by-user",
        })
    }
}

impl FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "stratified" => Ok(SplitMode::Stratified),
            "by-user" | "by_user" | "user" => Ok(SplitMode::ByUser),
            other => Err(Error::Config(format!(
                "unknown split mode `{other}` (stratified | by-user)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub seed: u64,
}

fn train_count(fraction: f64, n: usize) -> usize {
    // The small slack keeps e.g. 0.8 * 10 from rounding up to 9.
    ((fraction * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

fn check_fraction(fraction: f64) -> Result<()> {
    if fraction > 0.0 && fraction < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "train fraction {fraction} must lie strictly between 0 and 1"
        )))
    }
}

pub fn stratified_split(labels: &[usize], train_fraction: f64, seed: u64) -> Result<SplitIndices> {
    check_fraction(train_fraction)?;
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (class, mut idx) in by_class {
        if idx.len() < 2 {
            return Err(Error::Data(format!(
                "class {class} has {} sample; stratification needs at least 2",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let cut = train_count(train_fraction, idx.len());
        train.extend_from_slice(&idx[..cut]);
        val.extend_from_slice(&idx[cut..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok(SplitIndices { train, val, seed })
}

pub fn user_split(users: &[u32], train_fraction: f64, seed: u64) -> Result<SplitIndices> {
    check_fraction(train_fraction)?;
    let mut distinct: Vec<u32> = users.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Data("a by-user split needs at least 2 users".into()));
    }
    distinct.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = train_count(train_fraction, distinct.len()).min(distinct.len() - 1);
    let train_users = &distinct[..cut];
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, u) in users.iter().enumerate() {
        if train_users.contains(u) {
            train.push(i);
        } else {
            val.push(i);
        }
    }
    Ok(SplitIndices { train, val, seed })
}
