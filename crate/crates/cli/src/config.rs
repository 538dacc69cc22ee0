//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use genrec_core::attention::{Activation, BiasKind, Residual};
use genrec_core::data::Task;
use genrec_core::metrics::{AucMode, EvalOptions};
use genrec_core::model::{Head, ModelConfig, RecallLoss};
use genrec_core::train::{Schedule, TrainConfig};

use crate::error::{CliError, CliResult};

/// Every accepted key and its default. An empty default means "derived".
pub const KEYS: &[(&str, &str)] = &[
    ("run.variant", ""),
    ("run.seed", "1"),
    ("data.cache", ""),
    ("data.dataset", ""),
    ("data.max_len", "0"),
    ("data.negative_ratio", "1.0"),
    ("data.behavior_subset", "all"),
    ("data.target_domain", ""),
    ("model.preset", "hstu"),
    ("model.blocks", "2"),
    ("model.dim", "32"),
    ("model.heads", "2"),
    ("model.ffn_hidden", "0"),
    ("model.activation", ""),
    ("model.bias", ""),
    ("model.feature_interaction", ""),
    ("model.residual", ""),
    ("model.num_buckets", "32"),
    ("model.time_base", "2.718281828459045"),
    ("model.rope_base", "10000"),
    ("model.head", "dot"),
    ("model.head_hidden", "0"),
    ("model.tie_output", "true"),
    ("model.side_info", "false"),
    ("model.behavior_tokens", "false"),
    ("model.recall_loss", "full"),
    ("train.lr", "0.001"),
    ("train.batch_size", "512"),
    ("train.epochs", "10"),
    ("train.weight_decay", "0"),
    ("train.grad_clip_norm", "1.0"),
    ("train.schedule", "constant"),
    ("train.beta1", "0.9"),
    ("train.beta2", "0.999"),
    ("train.eps", "1e-8"),
    ("eval.ks", "10,50"),
    ("eval.batch_size", "256"),
    ("eval.auc_mode", "pooled"),
    ("eval.ranking_tail", "1"),
    ("sweep.seeds", ""),
    ("sweep.max_points", "64"),
];

/// Sweep axes and the key each one sets.
pub const GRID_AXES: &[(&str, &str)] = &[
    ("activation", "model.activation"),
    ("behavior_subset", "data.behavior_subset"),
    ("bias_kind", "model.bias"),
    ("blocks", "model.blocks"),
    ("dim", "model.dim"),
    ("feature_interaction", "model.feature_interaction"),
    ("head", "model.head"),
    ("heads", "model.heads"),
    ("max_len", "data.max_len"),
    ("negative_ratio", "data.negative_ratio"),
    ("residual", "model.residual"),
    ("side_info", "model.side_info"),
];

/// Block settings implied by a named backbone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub activation: Activation,
    pub bias: BiasKind,
    pub feature_interaction: bool,
    pub residual: Residual,
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "hstu",
        activation: Activation::Silu,
        bias: BiasKind::RelPosTime,
        feature_interaction: true,
        residual: Residual::Hstu,
    },
    Preset {
        name: "llama",
        activation: Activation::Softmax,
        bias: BiasKind::Rope,
        feature_interaction: false,
        residual: Residual::Llama,
    },
    Preset {
        name: "sasrec",
        activation: Activation::Softmax,
        bias: BiasKind::None,
        feature_interaction: false,
        residual: Residual::PostNorm,
    },
];

pub fn preset(name: &str) -> CliResult<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name).ok_or_else(|| {
        let names: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
        CliError::Config(format!("unknown preset `{name}` (expected one of {names:?})"))
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
    /// Sweep axes in key order, values in file order.
    pub grid: BTreeMap<String, Vec<String>>,
}

fn nearest(key: &str, candidates: impl Iterator<Item = String>) -> Option<String> {
    candidates
        .map(|c| (strsim::levenshtein(key, &c), c))
        .filter(|(d, _)| *d <= 3)
        .min()
        .map(|(_, c)| c)
}

fn unknown_key(key: &str) -> CliError {
    let all = KEYS
        .iter()
        .map(|(k, _)| k.to_string())
        .chain(GRID_AXES.iter().map(|(a, _)| format!("grid.{a}")));
    match nearest(key, all) {
        Some(s) => CliError::Config(format!("unknown key `{key}`; did you mean `{s}`?")),
        None => CliError::Config(format!("unknown key `{key}`")),
    }
}

fn split_list(v: &str) -> Vec<String> {
    v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

impl Config {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| CliError::Config(format!("line {}: {}", i + 1, e.message())))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))
    }

    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        if let Some(axis) = key.strip_prefix("grid.") {
            if !GRID_AXES.iter().any(|(a, _)| *a == axis) {
                return Err(unknown_key(key));
            }
            let values = split_list(value);
            if values.is_empty() {
                return Err(CliError::Config(format!("grid axis `{axis}` has no values")));
            }
            self.grid.insert(axis.to_string(), values);
            return Ok(());
        }
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(unknown_key(key));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies `key=value` overrides such as those given with `--set`.
    pub fn apply_overrides(&mut self, sets: &[String]) -> CliResult<()> {
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got `{s}`")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        if let Some(v) = self.values.get(key) {
            return v;
        }
        KEYS.iter()
            .find(|(k, _)| *k == key)
            .map(|(_, d)| *d)
            .unwrap_or_else(|| panic!("key `{key}` is not declared"))
    }

    pub fn is_set(&self, key: &str) -> bool {
        self.values.get(key).is_some_and(|v| !v.is_empty())
    }

    pub fn parse_value<V: FromStr>(&self, key: &str) -> CliResult<V> {
        let v = self.get(key);
        v.parse()
            .map_err(|_| CliError::Config(format!("`{key}` has invalid value `{v}`")))
    }

    fn parse_or<V: FromStr>(&self, key: &str, derived: V) -> CliResult<V> {
        if self.get(key).is_empty() {
            Ok(derived)
        } else {
            self.parse_value(key)
        }
    }

    fn parse_enum<V: FromStr<Err = genrec_core::Error>>(&self, key: &str, derived: V) -> CliResult<V> {
        let v = self.get(key);
        if v.is_empty() {
            return Ok(derived);
        }
        v.parse().map_err(|e: genrec_core::Error| CliError::Config(format!("`{key}`: {e}")))
    }

    pub fn cache_path(&self) -> CliResult<PathBuf> {
        if !self.is_set("data.cache") {
            return Err(CliError::Config("`data.cache` is required".into()));
        }
        Ok(PathBuf::from(self.get("data.cache")))
    }

    pub fn seed(&self) -> CliResult<u64> {
        self.parse_value("run.seed")
    }

    pub fn variant(&self) -> String {
        if self.is_set("run.variant") {
            self.get("run.variant").to_string()
        } else {
            self.get("model.preset").to_string()
        }
    }

    /// Behavior names to keep, or `None` for every behavior.
    pub fn behavior_subset(&self) -> Option<Vec<String>> {
        let v = self.get("data.behavior_subset");
        if v == "all" || v.is_empty() {
            None
        } else {
            Some(v.split('+').map(|s| s.trim().to_string()).collect())
        }
    }

    pub fn model_config(&self, num_items: usize, num_behaviors: usize, attr_sizes: &[usize], max_len: usize, task: Task) -> CliResult<ModelConfig> {
        let p = preset(self.get("model.preset"))?;
        let mut cfg = ModelConfig::new(num_items, max_len, task);
        cfg.num_behaviors = num_behaviors.max(1);
        cfg.attr_sizes = attr_sizes.to_vec();
        cfg.blocks = self.parse_value("model.blocks")?;
        let b = &mut cfg.block;
        b.dim = self.parse_value("model.dim")?;
        b.heads = self.parse_value("model.heads")?;
        let ffn: usize = self.parse_value("model.ffn_hidden")?;
        b.ffn_hidden = if ffn == 0 { 2 * b.dim } else { ffn };
        b.activation = self.parse_enum("model.activation", p.activation)?;
        b.bias_kind = self.parse_enum("model.bias", p.bias)?;
        b.feature_interaction = self.parse_or("model.feature_interaction", p.feature_interaction)?;
        b.residual = self.parse_enum("model.residual", p.residual)?;
        b.num_buckets = self.parse_value("model.num_buckets")?;
        b.time_base = self.parse_value("model.time_base")?;
        b.rope_base = self.parse_value("model.rope_base")?;
        cfg.head = self.parse_enum::<Head>("model.head", Head::Dot)?;
        cfg.head_hidden = self.parse_value("model.head_hidden")?;
        cfg.tie_output = self.parse_value("model.tie_output")?;
        cfg.side_info = self.parse_value("model.side_info")?;
        cfg.behavior_tokens = self.parse_value("model.behavior_tokens")?;
        cfg.recall_loss = self.parse_enum::<RecallLoss>("model.recall_loss", RecallLoss::Full)?;
        cfg.finalize();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> CliResult<TrainConfig> {
        let cfg = TrainConfig {
            lr: self.parse_value("train.lr")?,
            batch_size: self.parse_value("train.batch_size")?,
            epochs: self.parse_value("train.epochs")?,
            seed: self.seed()?,
            beta1: self.parse_value("train.beta1")?,
            beta2: self.parse_value("train.beta2")?,
            eps: self.parse_value("train.eps")?,
            weight_decay: self.parse_value("train.weight_decay")?,
            grad_clip_norm: self.parse_value("train.grad_clip_norm")?,
            schedule: self.parse_enum::<Schedule>("train.schedule", Schedule::Constant)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Evaluation options without the domain filter, which needs the item vocabulary.
    pub fn eval_options(&self) -> CliResult<EvalOptions> {
        let ks = split_list(self.get("eval.ks"))
            .iter()
            .map(|k| {
                k.parse::<usize>()
                    .ok()
                    .filter(|&k| k > 0)
                    .ok_or_else(|| CliError::Config(format!("`eval.ks` has invalid entry `{k}`")))
            })
            .collect::<CliResult<Vec<usize>>>()?;
        if ks.is_empty() {
            return Err(CliError::Config("`eval.ks` is empty".into()));
        }
        Ok(EvalOptions {
            ks,
            batch_size: self.parse_value("eval.batch_size")?,
            auc_mode: self.parse_enum::<AucMode>("eval.auc_mode", AucMode::Pooled)?,
            ranking_tail: self.parse_value("eval.ranking_tail")?,
            ..EvalOptions::default()
        })
    }

    pub fn seeds(&self) -> CliResult<Vec<u64>> {
        if !self.is_set("sweep.seeds") {
            return Ok(vec![self.seed()?]);
        }
        split_list(self.get("sweep.seeds"))
            .iter()
            .map(|s| {
                s.parse()
                    .map_err(|_| CliError::Config(format!("`sweep.seeds` has invalid seed `{s}`")))
            })
            .collect()
    }

    /// Every explicitly set value, for recording alongside a checkpoint.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(&format!("{k} = {v}\n"));
        }
        for (a, vs) in &self.grid {
            out.push_str(&format!("grid.{a} = {}\n", vs.join(",")));
        }
        out
    }
}
