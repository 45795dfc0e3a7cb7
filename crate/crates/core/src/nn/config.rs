use std::fmt;
use std::str::FromStr;

use super::NnError;
use crate::config::KeyValues;

/// The four architectures from the grid search: one or two LSTM layers, and a
/// deep ("a") or shallow ("b") fully-connected head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Lstm1a,
    Lstm1b,
    Lstm2a,
    Lstm2b,
}

pub const DEEP_HEAD: [usize; 6] = [2500, 1250, 512, 256, 64, 16];
pub const SHALLOW_HEAD: [usize; 2] = [64, 16];

impl Variant {
    pub fn lstm_units(self) -> Vec<usize> {
        match self {
            Variant::Lstm1a | Variant::Lstm1b => vec![50],
            Variant::Lstm2a | Variant::Lstm2b => vec![100, 50],
        }
    }

    pub fn fc_units(self) -> Vec<usize> {
        match self {
            Variant::Lstm1a | Variant::Lstm2a => DEEP_HEAD.to_vec(),
            Variant::Lstm1b | Variant::Lstm2b => SHALLOW_HEAD.to_vec(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Lstm1a => "lstm-1a",
            Variant::Lstm1b => "lstm-1b",
            Variant::Lstm2a => "lstm-2a",
            Variant::Lstm2b => "lstm-2b",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().trim_start_matches("lstm-") {
            "1a" => Ok(Variant::Lstm1a),
            "1b" => Ok(Variant::Lstm1b),
            "2a" => Ok(Variant::Lstm2a),
            "2b" => Ok(Variant::Lstm2b),
            _ => Err(format!("unknown variant {s:?} (expected lstm-1a, lstm-1b, lstm-2a or lstm-2b)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// `None` for hand-built architectures.
    pub variant: Option<Variant>,
    /// Width of one timestep (matrix columns).
    pub input_dim: usize,
    /// Timesteps per example (matrix rows).
    pub seq_len: usize,
    pub lstm_units: Vec<usize>,
    /// Hidden fully-connected widths; the softmax layer of `n_classes` follows.
    pub fc_units: Vec<usize>,
    pub n_classes: usize,
    pub dropout: f64,
    pub seed: u64,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// Early stopping on validation loss; `None` disables it.
    pub patience: Option<usize>,
}

impl ModelConfig {
    pub fn for_variant(variant: Variant, input_dim: usize, seq_len: usize, n_classes: usize) -> Self {
        ModelConfig {
            variant: Some(variant),
            input_dim,
            seq_len,
            lstm_units: variant.lstm_units(),
            fc_units: variant.fc_units(),
            n_classes,
            dropout: 0.2,
            seed: 0,
            adam: AdamConfig::default(),
            batch_size: 32,
            epochs: 30,
            patience: Some(10),
        }
    }

    pub fn custom(input_dim: usize, seq_len: usize, lstm_units: Vec<usize>, fc_units: Vec<usize>, n_classes: usize) -> Self {
        ModelConfig {
            variant: None,
            lstm_units,
            fc_units,
            ..ModelConfig::for_variant(Variant::Lstm1b, input_dim, seq_len, n_classes)
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::InvalidConfig(m.to_string()));
        if self.input_dim == 0 || self.seq_len == 0 {
            return bad("input_dim and seq_len must be positive");
        }
        if self.lstm_units.is_empty() || self.lstm_units.contains(&0) || self.fc_units.contains(&0) {
            return bad("layer widths must be positive and at least one LSTM layer is required");
        }
        if self.n_classes < 2 {
            return bad("n_classes must be >= 2");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|u| u.to_string()).collect::<Vec<_>>().join(",");
        let mut kv = KeyValues::default();
        kv.set("variant", self.variant.map_or("custom", |v| v.as_str()));
        kv.set("input_dim", self.input_dim);
        kv.set("seq_len", self.seq_len);
        kv.set("lstm_units", join(&self.lstm_units));
        kv.set("fc_units", join(&self.fc_units));
        kv.set("n_classes", self.n_classes);
        kv.set("dropout", self.dropout);
        kv.set("seed", self.seed);
        kv.set("lr", self.adam.lr);
        kv.set("beta1", self.adam.beta1);
        kv.set("beta2", self.adam.beta2);
        kv.set("epsilon", self.adam.epsilon);
        kv.set("batch_size", self.batch_size);
        kv.set("epochs", self.epochs);
        kv.set("patience", self.patience.map_or("none".to_string(), |p| p.to_string()));
        kv.to_string()
    }

    pub fn from_text(text: &str) -> Result<Self, NnError> {
        let kv: KeyValues = text.parse().map_err(NnError::InvalidConfig)?;
        let e = NnError::InvalidConfig;
        let units = |key: &str| -> Result<Vec<usize>, NnError> {
            let s = kv.require(key).map_err(e)?;
            if s.is_empty() {
                return Ok(Vec::new());
            }
            s.split(',')
                .map(|u| u.trim().parse().map_err(|_| NnError::InvalidConfig(format!("bad {key}: {s:?}"))))
                .collect()
        };
        let variant = match kv.require("variant").map_err(e)? {
            "custom" => None,
            v => Some(v.parse().map_err(NnError::InvalidConfig)?),
        };
        let patience = match kv.require("patience").map_err(e)? {
            "none" => None,
            p => Some(p.parse().map_err(|_| NnError::InvalidConfig(format!("bad patience {p:?}")))?),
        };
        let cfg = ModelConfig {
            variant,
            input_dim: kv.parse("input_dim").map_err(e)?,
            seq_len: kv.parse("seq_len").map_err(e)?,
            lstm_units: units("lstm_units")?,
            fc_units: units("fc_units")?,
            n_classes: kv.parse("n_classes").map_err(e)?,
            dropout: kv.parse("dropout").map_err(e)?,
            seed: kv.parse("seed").map_err(e)?,
            adam: AdamConfig {
                lr: kv.parse("lr").map_err(e)?,
                beta1: kv.parse("beta1").map_err(e)?,
                beta2: kv.parse("beta2").map_err(e)?,
                epsilon: kv.parse("epsilon").map_err(e)?,
            },
            batch_size: kv.parse("batch_size").map_err(e)?,
            epochs: kv.parse("epochs").map_err(e)?,
            patience,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
