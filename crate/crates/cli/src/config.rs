//! `key = value` run configuration. Precedence: built-in defaults, then the
//! config file, then `key=value` command-line overrides.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use setransformer_core::data::{Schema, SplitMode, WindowSpec, DEFAULT_ACTIVITIES};
use setransformer_core::model::ModelConfig;
use setransformer_core::training::{Precision, TrainConfig};

/// Directory searched for `setransformer.conf` when `--config` is absent.
pub const CONFIG_DIR_ENV: &str = "SETRANSFORMER_CONFIG_DIR";
pub const DEFAULT_CONFIG_FILE: &str = "setransformer.conf";

#[derive(Clone, Debug, PartialEq)]
pub enum Source {
    Default,
    File { path: PathBuf, line: usize },
    Override { arg: usize },
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Default => f.write_str("default"),
            Source::File { path, line } => write!(f, "{}:{line}", path.display()),
            Source::Override { arg } => write!(f, "override #{arg}"),
        }
    }
}

#[derive(Debug, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub schema: Schema,
    pub activities: Vec<String>,
    pub window: WindowSpec,
    pub train_fraction: f64,
    pub split_mode: SplitMode,
    pub split_seed: u64,
    pub synth_per_class: usize,
    pub synth_seed: u64,
    pub input: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub eval_split: EvalSplit,
    pub gradcheck_threshold: f64,
    pub gradcheck_samples: usize,
    pub gradcheck_eps: f64,
    sources: BTreeMap<&'static str, Source>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalSplit {
    Train,
    Val,
    All,
}

impl fmt::Display for EvalSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalSplit::Train => "train",
            EvalSplit::Val => "val",
            EvalSplit::All => "all",
        })
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            schema: Schema::wisdm(),
            activities: DEFAULT_ACTIVITIES.iter().map(|s| s.to_string()).collect(),
            window: WindowSpec::default(),
            train_fraction: 0.8,
            split_mode: SplitMode::Stratified,
            split_seed: 0,
            synth_per_class: 200,
            synth_seed: 0,
            input: None,
            dataset: None,
            checkpoint: None,
            out_dir: PathBuf::from("out"),
            eval_split: EvalSplit::Val,
            gradcheck_threshold: 1e-4,
            gradcheck_samples: 500,
            gradcheck_eps: 1e-6,
            sources: BTreeMap::new(),
        }
    }
}

/// Every accepted key, in the order written to manifests.
pub const KEYS: &[&str] = &[
    "window_len",
    "model_dim",
    "num_layers",
    "num_heads",
    "ffn_hidden",
    "se_reduction",
    "pool_hidden",
    "num_classes",
    "learning_rate",
    "batch_size",
    "epochs",
    "beta1",
    "beta2",
    "adam_eps",
    "seed",
    "precision",
    "workers",
    "schema",
    "activities",
    "stride",
    "max_gap",
    "train_fraction",
    "split_mode",
    "split_seed",
    "synth_per_class",
    "synth_seed",
    "input",
    "dataset",
    "checkpoint",
    "out_dir",
    "eval_split",
    "gradcheck_threshold",
    "gradcheck_samples",
    "gradcheck_eps",
];

fn parse<T: FromStr>(value: &str, what: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("`{value}` is not {what}"))
}

fn path(value: &str) -> Option<PathBuf> {
    if value.is_empty() {
        None
    } else {
        Some(PathBuf::from(value))
    }
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    fn set(&mut self, key: &str, v: &str) -> Result<&'static str, String> {
        const INT: &str = "a non-negative integer";
        const NUM: &str = "a number";
        let canonical = *KEYS
            .iter()
            .find(|k| **k == key)
            .ok_or_else(|| format!("unknown key `{key}`"))?;
        match canonical {
            "window_len" => {
                self.model.window_len = parse(v, INT)?;
                self.window.len = self.model.window_len;
            }
            "model_dim" => self.model.model_dim = parse(v, INT)?,
            "num_layers" => self.model.num_layers = parse(v, INT)?,
            "num_heads" => self.model.num_heads = parse(v, INT)?,
            "ffn_hidden" => self.model.ffn_hidden = parse(v, INT)?,
            "se_reduction" => self.model.se_reduction = parse(v, INT)?,
            "pool_hidden" => self.model.pool_hidden = parse(v, INT)?,
            "num_classes" => self.model.num_classes = parse(v, INT)?,
            "learning_rate" => self.train.learning_rate = parse(v, NUM)?,
            "batch_size" => self.train.batch_size = parse(v, INT)?,
            "epochs" => self.train.epochs = parse(v, INT)?,
            "beta1" => self.train.beta1 = parse(v, NUM)?,
            "beta2" => self.train.beta2 = parse(v, NUM)?,
            "adam_eps" => self.train.adam_eps = parse(v, NUM)?,
            "seed" => self.train.seed = parse(v, INT)?,
            "precision" => self.train.precision = v.parse::<Precision>().map_err(|e| e.to_string())?,
            "workers" => self.train.workers = parse(v, INT)?,
            "schema" => self.schema = v.parse::<Schema>().map_err(|e| e.to_string())?,
            "activities" => {
                self.activities = v
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            }
            "stride" => self.window.stride = parse(v, INT)?,
            "max_gap" => {
                let gap: i64 = parse(v, "an integer")?;
                self.window.max_gap = (gap > 0).then_some(gap);
            }
            "train_fraction" => self.train_fraction = parse(v, NUM)?,
            "split_mode" => self.split_mode = v.parse::<SplitMode>().map_err(|e| e.to_string())?,
            "split_seed" => self.split_seed = parse(v, INT)?,
            "synth_per_class" => self.synth_per_class = parse(v, INT)?,
            "synth_seed" => self.synth_seed = parse(v, INT)?,
            "input" => self.input = path(v),
            "dataset" => self.dataset = path(v),
            "checkpoint" => self.checkpoint = path(v),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "eval_split" => {
                self.eval_split = match v {
                    "train" => EvalSplit::Train,
                    "val" => EvalSplit::Val,
                    "all" => EvalSplit::All,
                    _ => return Err(format!("`{v}` is not one of train, val, all")),
                }
            }
            "gradcheck_threshold" => self.gradcheck_threshold = parse(v, NUM)?,
            "gradcheck_samples" => self.gradcheck_samples = parse(v, INT)?,
            "gradcheck_eps" => self.gradcheck_eps = parse(v, NUM)?,
            _ => unreachable!("every key in KEYS is handled"),
        }
        Ok(canonical)
    }

    /// Current value of `key` as it would be written in a config file.
    pub fn get(&self, key: &str) -> Option<String> {
        let m = &self.model;
        let t = &self.train;
        Some(match key {
            "window_len" => m.window_len.to_string(),
            "model_dim" => m.model_dim.to_string(),
            "num_layers" => m.num_layers.to_string(),
            "num_heads" => m.num_heads.to_string(),
            "ffn_hidden" => m.ffn_hidden.to_string(),
            "se_reduction" => m.se_reduction.to_string(),
            "pool_hidden" => m.pool_hidden.to_string(),
            "num_classes" => m.num_classes.to_string(),
            "learning_rate" => t.learning_rate.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "epochs" => t.epochs.to_string(),
            "beta1" => t.beta1.to_string(),
            "beta2" => t.beta2.to_string(),
            "adam_eps" => t.adam_eps.to_string(),
            "seed" => t.seed.to_string(),
            "precision" => t.precision.to_string(),
            "workers" => t.workers.to_string(),
            "schema" => self.schema.to_string(),
            "activities" => self.activities.join(","),
            "stride" => self.window.stride.to_string(),
            "max_gap" => self.window.max_gap.unwrap_or(0).to_string(),
            "train_fraction" => self.train_fraction.to_string(),
            "split_mode" => self.split_mode.to_string(),
            "split_seed" => self.split_seed.to_string(),
            "synth_per_class" => self.synth_per_class.to_string(),
            "synth_seed" => self.synth_seed.to_string(),
            "input" => show_path(&self.input),
            "dataset" => show_path(&self.dataset),
            "checkpoint" => show_path(&self.checkpoint),
            "out_dir" => self.out_dir.display().to_string(),
            "eval_split" => self.eval_split.to_string(),
            "gradcheck_threshold" => self.gradcheck_threshold.to_string(),
            "gradcheck_samples" => self.gradcheck_samples.to_string(),
            "gradcheck_eps" => self.gradcheck_eps.to_string(),
            _ => return None,
        })
    }

    /// All keys with their resolved values.
    pub fn resolved(&self) -> BTreeMap<String, String> {
        KEYS.iter()
            .map(|k| (k.to_string(), self.get(k).expect("known key")))
            .collect()
    }

    pub fn source(&self, key: &str) -> Source {
        self.sources.get(key).cloned().unwrap_or(Source::Default)
    }

    fn assign(&mut self, key: &str, value: &str, source: Source) -> Result<(), ConfigError> {
        match self.set(key, value) {
            Ok(k) => {
                self.sources.insert(k, source);
                Ok(())
            }
            Err(msg) => Err(ConfigError(format!("{source}: key `{key}`: {msg}"))),
        }
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let source = Source::File {
                path: origin.to_path_buf(),
                line: i + 1,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("{source}: expected `key = value`, found `{line}`")))?;
            self.assign(key.trim(), value.trim(), source)?;
        }
        Ok(())
    }

    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), ConfigError> {
        for (i, o) in overrides.iter().enumerate() {
            let source = Source::Override { arg: i + 1 };
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("{source}: expected key=value, found `{o}`")))?;
            self.assign(key.trim(), value.trim(), source)?;
        }
        Ok(())
    }

    /// Checks every invariant; the error names the offending key, where it
    /// was set, and the rule.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |key: &str, rule: String| Err(ConfigError(format!("{}: key `{key}`: {rule}", self.source(key))));
        let m = &self.model;
        for (key, v) in [
            ("window_len", m.window_len),
            ("model_dim", m.model_dim),
            ("num_layers", m.num_layers),
            ("num_heads", m.num_heads),
            ("ffn_hidden", m.ffn_hidden),
            ("se_reduction", m.se_reduction),
            ("pool_hidden", m.pool_hidden),
            ("batch_size", self.train.batch_size),
            ("epochs", self.train.epochs),
            ("workers", self.train.workers),
            ("stride", self.window.stride),
            ("synth_per_class", self.synth_per_class),
            ("gradcheck_samples", self.gradcheck_samples),
        ] {
            if v == 0 {
                return fail(key, "must be at least 1".into());
            }
        }
        if m.num_classes < 2 {
            return fail("num_classes", format!("must be at least 2, got {}", m.num_classes));
        }
        if m.model_dim % m.num_heads != 0 {
            return fail(
                "num_heads",
                format!(
                    "model_dim {} is not divisible by num_heads {}",
                    m.model_dim, m.num_heads
                ),
            );
        }
        if m.model_dim % m.se_reduction != 0 {
            return fail(
                "se_reduction",
                format!(
                    "model_dim {} is not divisible by se_reduction {}",
                    m.model_dim, m.se_reduction
                ),
            );
        }
        let t = &self.train;
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return fail(
                "learning_rate",
                format!("must be a finite value > 0, got {}", t.learning_rate),
            );
        }
        for (key, v) in [("beta1", t.beta1), ("beta2", t.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return fail(key, format!("must lie in [0, 1), got {v}"));
            }
        }
        for (key, v) in [
            ("adam_eps", t.adam_eps),
            ("gradcheck_threshold", self.gradcheck_threshold),
            ("gradcheck_eps", self.gradcheck_eps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(key, format!("must be a finite value > 0, got {v}"));
            }
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return fail(
                "train_fraction",
                format!("must lie in (0, 1), got {}", self.train_fraction),
            );
        }
        if self.activities.is_empty() {
            return fail("activities", "must name at least one activity".into());
        }
        Ok(())
    }

    /// Defaults, then `file` (or the file in `$SETRANSFORMER_CONFIG_DIR`
    /// when none is given), then `overrides`; validated.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let fallback = std::env::var_os(CONFIG_DIR_ENV)
            .map(|dir| PathBuf::from(dir).join(DEFAULT_CONFIG_FILE))
            .filter(|p| p.is_file());
        if let Some(path) = file.map(Path::to_path_buf).or(fallback) {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
            cfg.apply_text(&text, &path)?;
        }
        cfg.apply_overrides(overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from(text: &str, overrides: &[&str]) -> Result<RunConfig, ConfigError> {
        let mut c = RunConfig::default();
        c.apply_text(text, Path::new("test.conf"))?;
        c.apply_overrides(&overrides.iter().map(|s| s.to_string()).collect::<Vec<_>>())?;
        c.validate()?;
        Ok(c)
    }

    #[test]
    fn empty_file_gives_defaults() {
        let c = from("", &[]).unwrap();
        assert_eq!(c.model.model_dim, 128);
        assert_eq!(c.model.num_heads, 4);
        assert_eq!(c.model.se_reduction, 16);
        assert_eq!(c.train.learning_rate, 0.001);
        assert_eq!(c.train.batch_size, 64);
        assert_eq!(c.train.epochs, 65);
        assert_eq!(c.window.len, 200);
        assert_eq!(c.window.stride, 100);
    }

    #[test]
    fn override_beats_file() {
        let c = from("# comment\nepochs = 5  # five\n", &["epochs=2"]).unwrap();
        assert_eq!(c.train.epochs, 2);
        assert!(matches!(c.source("epochs"), Source::Override { arg: 1 }));
        assert_eq!(from("epochs = 5", &[]).unwrap().train.epochs, 5);
    }

    #[test]
    fn invariant_errors_name_key_line_and_rule() {
        let err = from("\nnum_heads = 5\n", &[]).unwrap_err().0;
        assert!(err.contains("num_heads"), "{err}");
        assert!(err.contains("test.conf:2"), "{err}");
        assert!(err.contains("not divisible"), "{err}");
    }

    #[test]
    fn unknown_and_unparseable_keys() {
        let err = from("epochz = 3", &[]).unwrap_err().0;
        assert!(
            err.contains("test.conf:1") && err.contains("unknown key `epochz`"),
            "{err}"
        );
        let err = from("", &["batch_size=lots"]).unwrap_err().0;
        assert!(
            err.contains("batch_size") && err.contains("not a non-negative integer"),
            "{err}"
        );
        assert!(from("no equals sign", &[]).is_err());
    }

    #[test]
    fn resolved_round_trips_through_text() {
        let c = from(
            "window_len = 16\nschema = 18:0,1,2,3,4,5\nsplit_mode = by-user\nmax_gap = 500",
            &[],
        )
        .unwrap();
        let text: String = c.resolved().iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        let back = from(&text, &[]).unwrap();
        assert_eq!(back.resolved(), c.resolved());
        assert_eq!(back.window.len, 16);
    }
}
