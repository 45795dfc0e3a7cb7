//! Flat `key=value` configuration shared by every stage.
//!
//! A [`RunConfig`] is loaded from a file, overridden by command-line flags and
//! written into the header of every artifact it produced.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::context::{ContextConfig, DEFAULT_BUCKET_FLOWS, DEFAULT_WINDOW_MS};
use crate::dataset::{BalanceMode, SplitFractions, BINARY_CLASS_NAMES, CLASS_NAMES};
use crate::flow::DEFAULT_FLOW_TIMEOUT_US;
use crate::matrix::MatrixConfig;
use crate::nn::{ModelConfig, Variant};

/// Ordered `key=value` lines. Blank lines and `#` comments are ignored on parse.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: Vec<(String, String)>,
}

impl KeyValues {
    /// Sets `key`, replacing an earlier value in place.
    pub fn set(&mut self, key: &str, value: impl fmt::Display) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, String> {
        self.get(key).ok_or_else(|| format!("missing key {key:?}"))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T, String> {
        let raw = self.require(key)?;
        raw.parse().map_err(|_| format!("bad value for {key}: {raw:?}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

impl fmt::Display for KeyValues {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

impl FromStr for KeyValues {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let mut kv = KeyValues::default();
        for (n, line) in s.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key=value, got {line:?}", n + 1))?;
            kv.set(k.trim(), v.trim());
        }
        Ok(kv)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassMode {
    /// Benign against everything else.
    Binary,
    Multi,
}

impl ClassMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassMode::Binary => "binary",
            ClassMode::Multi => "multi",
        }
    }
}

impl FromStr for ClassMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "binary" => Ok(ClassMode::Binary),
            "multi" | "multiclass" => Ok(ClassMode::Multi),
            _ => Err(format!("unknown class mode {s:?} (expected binary or multi)")),
        }
    }
}

impl fmt::Display for ClassMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub flow_timeout_ms: u64,
    pub ctx_bucket: usize,
    pub ctx_window_ms: u64,
    pub max_packets: usize,
    pub max_bytes: usize,
    pub variant: Variant,
    pub classes: ClassMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub dropout: f64,
    /// 0 disables early stopping.
    pub patience: usize,
    pub split: SplitFractions,
}

/// Producing tool, recorded next to the configuration in every artifact.
pub const TOOL_VERSION: &str = concat!("did ", env!("CARGO_PKG_VERSION"));

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            flow_timeout_ms: DEFAULT_FLOW_TIMEOUT_US / 1000,
            ctx_bucket: DEFAULT_BUCKET_FLOWS,
            ctx_window_ms: DEFAULT_WINDOW_MS,
            max_packets: 100,
            max_bytes: 200,
            variant: Variant::Lstm1b,
            classes: ClassMode::Binary,
            epochs: 30,
            batch_size: 32,
            lr: 0.001,
            dropout: 0.2,
            patience: 10,
            split: SplitFractions::default(),
        }
    }
}

impl RunConfig {
    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("seed", self.seed);
        kv.set("flow_timeout_ms", self.flow_timeout_ms);
        kv.set("ctx_bucket", self.ctx_bucket);
        kv.set("ctx_window_ms", self.ctx_window_ms);
        kv.set("max_packets", self.max_packets);
        kv.set("max_bytes", self.max_bytes);
        kv.set("variant", self.variant);
        kv.set("classes", self.classes);
        kv.set("epochs", self.epochs);
        kv.set("batch_size", self.batch_size);
        kv.set("lr", self.lr);
        kv.set("dropout", self.dropout);
        kv.set("patience", self.patience);
        kv.set("split_train", self.split.train);
        kv.set("split_val", self.split.val);
        kv.set("split_test", self.split.test);
        kv
    }

    /// Artifact metadata: the tool version followed by every setting.
    pub fn to_metadata(&self) -> String {
        format!("tool={TOOL_VERSION}\n{self}")
    }

    /// Reads back [`RunConfig::to_metadata`] output (the tool line is informational).
    pub fn from_metadata(text: &str) -> Result<Self, String> {
        let kv: KeyValues = text.parse()?;
        let mut settings = KeyValues::default();
        for (k, v) in kv.iter().filter(|(k, _)| *k != "tool") {
            settings.set(k, v);
        }
        let mut cfg = RunConfig::default();
        cfg.apply(&settings)?;
        Ok(cfg)
    }

    /// Settings that change matrix contents; matrices and models must agree on them.
    pub fn matrix_signature(&self) -> (usize, usize, usize, u64) {
        (self.max_packets, self.max_bytes, self.ctx_bucket, self.flow_timeout_ms)
    }

    pub fn balance_mode(&self) -> BalanceMode {
        match self.classes {
            ClassMode::Binary => BalanceMode::Binary,
            ClassMode::Multi => BalanceMode::Multiclass,
        }
    }

    pub fn class_names(&self) -> &'static [&'static str] {
        match self.classes {
            ClassMode::Binary => &BINARY_CLASS_NAMES,
            ClassMode::Multi => &CLASS_NAMES,
        }
    }

    /// Applies every recognized key; unknown keys are an error so typos surface.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<(), String> {
        for (key, _) in kv.iter() {
            match key {
                "seed" => self.seed = kv.parse(key)?,
                "flow_timeout_ms" => self.flow_timeout_ms = kv.parse(key)?,
                "ctx_bucket" => self.ctx_bucket = kv.parse(key)?,
                "ctx_window_ms" => self.ctx_window_ms = kv.parse(key)?,
                "max_packets" => self.max_packets = kv.parse(key)?,
                "max_bytes" => self.max_bytes = kv.parse(key)?,
                "variant" => self.variant = kv.require(key)?.parse()?,
                "classes" => self.classes = kv.require(key)?.parse()?,
                "epochs" => self.epochs = kv.parse(key)?,
                "batch_size" => self.batch_size = kv.parse(key)?,
                "lr" => self.lr = kv.parse(key)?,
                "dropout" => self.dropout = kv.parse(key)?,
                "patience" => self.patience = kv.parse(key)?,
                "split_train" => self.split.train = kv.parse(key)?,
                "split_val" => self.split.val = kv.parse(key)?,
                "split_test" => self.split.test = kv.parse(key)?,
                _ => return Err(format!("unknown config key {key:?}")),
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, String> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg = RunConfig::default();
        cfg.apply(&text.parse()?)?;
        Ok(cfg)
    }

    pub fn flow_timeout_us(&self) -> u64 {
        self.flow_timeout_ms * 1000
    }

    pub fn context(&self) -> ContextConfig {
        ContextConfig {
            bucket_flows: self.ctx_bucket,
            window_ms: self.ctx_window_ms,
        }
    }

    pub fn matrix(&self) -> MatrixConfig {
        MatrixConfig::new(self.max_packets, self.max_bytes, self.ctx_bucket)
    }

    pub fn n_classes(&self) -> usize {
        match self.classes {
            ClassMode::Binary => 2,
            ClassMode::Multi => CLASS_NAMES.len(),
        }
    }

    pub fn model(&self) -> ModelConfig {
        let mut m = ModelConfig::for_variant(self.variant, 1 + self.max_bytes, 1 + self.max_packets, self.n_classes());
        m.seed = self.seed;
        m.epochs = self.epochs;
        m.batch_size = self.batch_size;
        m.adam.lr = self.lr;
        m.dropout = self.dropout;
        m.patience = (self.patience > 0).then_some(self.patience);
        m
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.to_key_values().fmt(f)
    }
}
