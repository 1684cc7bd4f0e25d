//! Flat `key = value` experiment configuration.
//!
//! Keys are `section.name`; `#` starts a comment. Every key has a default and
//! unknown or repeated keys are rejected. The effective configuration is
//! written with [`ExperimentConfig::to_text`] and parses back to itself.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{LongTailSpec, UnlabeledMode};
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Files,
}

impl FromStr for DataSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(Self::Synthetic),
            "files" => Ok(Self::Files),
            other => Err(Error::Config(format!(
                "unknown data source {other:?} (expected synthetic|files)"
            ))),
        }
    }
}

impl Display for DataSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Synthetic => "synthetic",
            Self::Files => "files",
        })
    }
}

/// How synthetic text prototypes relate to the class means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextMode {
    /// Perturbed class means, orthonormalized.
    Aligned,
    /// Orthonormal rows unrelated to the data.
    Random,
}

impl FromStr for TextMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aligned" => Ok(Self::Aligned),
            "random" => Ok(Self::Random),
            other => Err(Error::Config(format!(
                "unknown text mode {other:?} (expected aligned|random)"
            ))),
        }
    }
}

impl Display for TextMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Aligned => "aligned",
            Self::Random => "random",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub source: DataSource,
    /// Labeled pool the split is drawn from (`files` source).
    pub train: String,
    /// Balanced evaluation set (`files` source).
    pub test: String,
    /// Optional text-prototype file; synthetic prototypes when empty.
    pub text_prototypes: String,
    pub classes: usize,
    pub dim: usize,
    pub separation: f64,
    pub noise: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub text_mode: TextMode,
    pub text_noise: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            train: String::new(),
            test: String::new(),
            text_prototypes: String::new(),
            classes: 10,
            dim: 32,
            separation: 1.0,
            noise: 0.35,
            train_per_class: 900,
            test_per_class: 100,
            text_mode: TextMode::Aligned,
            text_noise: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub head_labeled: usize,
    pub labeled_imbalance: f64,
    pub head_unlabeled: usize,
    pub unlabeled_imbalance: f64,
    pub unlabeled_mode: UnlabeledMode,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            head_labeled: 100,
            labeled_imbalance: 50.0,
            head_unlabeled: 800,
            unlabeled_imbalance: 50.0,
            unlabeled_mode: UnlabeledMode::Consistent,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub split: SplitConfig,
    pub train: TrainConfig,
}

fn parse_value<T>(key: &str, value: &str) -> Result<T>
where
    T: FromStr,
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key} = {value:?}: {e}")))
}

macro_rules! config_keys {
    ($( $key:literal => $($field:ident).+ ),* $(,)?) => {
        impl ExperimentConfig {
            /// Every recognized key, in canonical order.
            pub const KEYS: &'static [&'static str] = &[$($key),*];

            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $( $key => self.$($field).+ = parse_value(key, value)?, )*
                    _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
                }
                Ok(())
            }

            /// `(key, value)` pairs in canonical order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$( ($key, self.$($field).+.to_string()) ),*]
            }
        }
    };
}

config_keys! {
    "data.source" => data.source,
    "data.train" => data.train,
    "data.test" => data.test,
    "data.text_prototypes" => data.text_prototypes,
    "data.classes" => data.classes,
    "data.dim" => data.dim,
    "data.separation" => data.separation,
    "data.noise" => data.noise,
    "data.train_per_class" => data.train_per_class,
    "data.test_per_class" => data.test_per_class,
    "data.text_mode" => data.text_mode,
    "data.text_noise" => data.text_noise,
    "split.head_labeled" => split.head_labeled,
    "split.labeled_imbalance" => split.labeled_imbalance,
    "split.head_unlabeled" => split.head_unlabeled,
    "split.unlabeled_imbalance" => split.unlabeled_imbalance,
    "split.unlabeled_mode" => split.unlabeled_mode,
    "augment.weak_sigma" => train.augment.weak_sigma,
    "augment.strong_sigma" => train.augment.strong_sigma,
    "augment.strong_dropout" => train.augment.strong_dropout,
    "augment.renormalize" => train.augment.renormalize,
    "model.rank" => train.model.rank,
    "model.scale" => train.model.scale,
    "model.train_adapter" => train.model.train_adapter,
    "paf.mu" => train.paf.mu,
    "paf.visual_momentum" => train.paf.visual_momentum,
    "paf.dist_momentum" => train.paf.dist_momentum,
    "paf.orthogonal_weight" => train.paf.orthogonal_weight,
    "paf.pu_before_alpha" => train.paf.pu_before_alpha,
    "fusion.eta" => train.fusion.eta,
    "fusion.temperature" => train.fusion.temperature,
    "fusion.mask_threshold" => train.fusion.mask_threshold,
    "fusion.la_strength" => train.fusion.la_strength,
    "fusion.epsilon_range" => train.fusion.epsilon_range,
    "fusion.mask_source" => train.fusion.mask_source,
    "train.arm" => train.arm,
    "train.seed" => train.seed,
    "train.iterations" => train.iterations,
    "train.batch_labeled" => train.batch_labeled,
    "train.batch_unlabeled" => train.batch_unlabeled,
    "train.eval_every" => train.eval_every,
    "train.lr" => train.learning_rate,
    "train.momentum" => train.momentum,
    "train.weight_decay" => train.weight_decay,
    "metrics.head_min" => train.groups.head_min,
    "metrics.tail_max" => train.groups.tail_max,
    "metrics.stability" => train.stability,
}

impl ExperimentConfig {
    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected key = value, got {raw:?}",
                    lineno + 1
                ))
            })?;
            let k = k.trim();
            let v = v.trim().trim_matches('"');
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key {k:?}",
                    lineno + 1
                )));
            }
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    /// Applies a `KEY=VALUE` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {kv:?} is not KEY=VALUE")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        self.entries()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }

    pub fn long_tail_spec(&self) -> LongTailSpec {
        LongTailSpec {
            class_count: self.data.classes,
            head_labeled: self.split.head_labeled,
            labeled_imbalance: self.split.labeled_imbalance,
            head_unlabeled: self.split.head_unlabeled,
            unlabeled_imbalance: self.split.unlabeled_imbalance,
            unlabeled_mode: self.split.unlabeled_mode,
        }
    }

    pub fn path(&self, value: &str) -> Option<PathBuf> {
        (!value.is_empty()).then(|| PathBuf::from(value))
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.classes < 2 || d.dim < 2 {
            return Err(Error::Config(format!(
                "data.classes and data.dim must be >= 2 (got {} / {})",
                d.classes, d.dim
            )));
        }
        if d.source == DataSource::Files && (d.train.is_empty() || d.test.is_empty()) {
            return Err(Error::Config(
                "data.source = files requires data.train and data.test".into(),
            ));
        }
        self.train.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let c = ExperimentConfig::default();
        let back = ExperimentConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(c, back);
        assert_eq!(c.entries().len(), ExperimentConfig::KEYS.len());
    }

    #[test]
    fn documented_defaults() {
        let c = ExperimentConfig::default();
        let m = c.to_map();
        assert_eq!(m["train.iterations"], "3000");
        assert_eq!(m["train.lr"], "0.03");
        assert_eq!(m["train.momentum"], "0.9");
        assert_eq!(m["train.weight_decay"], "0.0005");
        assert_eq!(m["train.batch_labeled"], "32");
        assert_eq!(m["train.eval_every"], "500");
        assert_eq!(m["fusion.eta"], "0.7");
        assert_eq!(m["fusion.mask_threshold"], "0.95");
        assert_eq!(m["fusion.temperature"], "0.05");
        assert_eq!(m["paf.mu"], "0.9");
        assert_eq!(m["model.rank"], "4");
    }

    #[test]
    fn parses_comments_and_quotes() {
        let c = ExperimentConfig::from_text(
            "# experiment\n\ntrain.iterations = 10 # short\ndata.train = \"a b.ulfe\"\nsplit.unlabeled_mode=reversed\n",
        )
        .unwrap();
        assert_eq!(c.train.iterations, 10);
        assert_eq!(c.data.train, "a b.ulfe");
        assert_eq!(c.split.unlabeled_mode, UnlabeledMode::Reversed);
    }

    #[test]
    fn rejects_unknown_duplicate_and_bad_values() {
        assert!(matches!(
            ExperimentConfig::from_text("train.nope = 1"),
            Err(Error::Config(_))
        ));
        assert!(ExperimentConfig::from_text("train.seed = 1\ntrain.seed = 2").is_err());
        assert!(ExperimentConfig::from_text("train.seed = x").is_err());
        assert!(ExperimentConfig::from_text("just words").is_err());
        let mut c = ExperimentConfig::default();
        assert!(c.apply_override("fusion.eta").is_err());
        c.apply_override("fusion.eta=1").unwrap();
        assert_eq!(c.train.fusion.eta, 1.0);
    }

    #[test]
    fn files_source_needs_paths() {
        let c = ExperimentConfig::from_text("data.source = files").unwrap();
        assert!(c.validate().is_err());
    }
}
