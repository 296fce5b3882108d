use std::fmt;
use std::str::FromStr;

use crate::dropout::{DropoutKind, DropoutSpec};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Extractor {
    Cnn,
    Lstm,
}

impl fmt::Display for Extractor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Extractor::Cnn => "cnn",
            Extractor::Lstm => "lstm",
        })
    }
}

impl FromStr for Extractor {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cnn" => Ok(Extractor::Cnn),
            "lstm" => Ok(Extractor::Lstm),
            _ => Err(format!("unknown extractor `{s}` (cnn, lstm)")),
        }
    }
}

/// Every architectural hyperparameter of the classifier.
///
/// `vocab_size` and `num_classes` come from the data and are normally filled
/// in by the trainer; `seq_len = None` means "95th-percentile training
/// sentence length".
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub extractor: Extractor,
    /// Word embedding dimension `k`.
    pub embed_dim: usize,
    /// Fixed sentence length `m`.
    pub seq_len: Option<usize>,
    pub filter_windows: Vec<usize>,
    pub filters_per_window: usize,
    /// LSTM hidden size; the feature dimension for the LSTM extractor.
    pub hidden: usize,
    pub num_classes: usize,
    pub vocab_size: usize,
    /// Half-width of the valve band around 0.5.
    pub epsilon: f64,
    /// When false the statistics branch is replaced by zeros.
    pub gi: bool,
    pub dropout: DropoutKind,
    pub beta: f64,
    pub c_sup: f64,
    /// Linear layers in the output head (hidden layers use ReLU).
    pub head_layers: usize,
    pub freeze_embeddings: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            extractor: Extractor::Cnn,
            embed_dim: 300,
            seq_len: None,
            filter_windows: vec![3, 4, 5],
            filters_per_window: 100,
            hidden: 128,
            num_classes: 0,
            vocab_size: 0,
            epsilon: 0.05,
            gi: true,
            dropout: DropoutKind::Leaky,
            beta: 0.5,
            c_sup: 500.0,
            head_layers: 1,
            freeze_embeddings: false,
            seed: 1,
        }
    }
}

/// Nonlinearity applied after each convolution; recorded in serialized
/// configs so runs state it explicitly.
pub const CONV_ACTIVATION: &str = "relu";

/// Keys accepted by [`ModelConfig::set`], in serialization order.
pub const MODEL_KEYS: &[&str] = &[
    "extractor",
    "embed_dim",
    "seq_len",
    "filter_windows",
    "filters_per_window",
    "hidden",
    "num_classes",
    "vocab_size",
    "epsilon",
    "gi",
    "dropout",
    "beta",
    "c_sup",
    "head_layers",
    "freeze_embeddings",
    "conv_activation",
    "seed",
];

pub(crate) fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V>
where
    V::Err: fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e: V::Err| Error::config(key, format!("`{value}`: {e}")))
}

pub(crate) fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::config(key, format!("`{other}` is not a boolean"))),
    }
}

impl ModelConfig {
    /// Feature dimension `d` of the semantic map.
    pub fn feature_dim(&self) -> usize {
        match self.extractor {
            Extractor::Cnn => self.filter_windows.len() * self.filters_per_window,
            Extractor::Lstm => self.hidden,
        }
    }

    pub fn dropout_spec(&self) -> DropoutSpec {
        DropoutSpec {
            kind: self.dropout,
            beta: self.beta,
            c_sup: self.c_sup,
        }
    }

    /// Hyperparameter ranges, independent of data-derived fields.
    pub fn validate_hyper(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.epsilon) {
            return Err(Error::config(
                "epsilon",
                format!("{} not in [0, 0.5]", self.epsilon),
            ));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::config(
                "beta",
                format!("{} not in [0, 1)", self.beta),
            ));
        }
        if !(self.c_sup >= 1.0) || !self.c_sup.is_finite() {
            return Err(Error::config("c_sup", format!("{} is below 1", self.c_sup)));
        }
        if self.embed_dim == 0 {
            return Err(Error::config("embed_dim", "must be positive"));
        }
        if self.seq_len == Some(0) {
            return Err(Error::config("seq_len", "must be positive"));
        }
        if self.head_layers == 0 {
            return Err(Error::config("head_layers", "must be at least 1"));
        }
        match self.extractor {
            Extractor::Cnn => {
                if self.filter_windows.is_empty() || self.filter_windows.contains(&0) {
                    return Err(Error::config(
                        "filter_windows",
                        "need positive window sizes",
                    ));
                }
                if self.filters_per_window == 0 {
                    return Err(Error::config("filters_per_window", "must be positive"));
                }
            }
            Extractor::Lstm => {
                if self.hidden == 0 {
                    return Err(Error::config("hidden", "must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Full validation before parameters are allocated.
    pub fn validate(&self) -> Result<()> {
        self.validate_hyper()?;
        if self.num_classes < 2 {
            return Err(Error::config("num_classes", "need at least two classes"));
        }
        if self.vocab_size < 2 {
            return Err(Error::config(
                "vocab_size",
                "vocabulary must include <pad> and <unk>",
            ));
        }
        Ok(())
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "extractor" => self.extractor = parse_value(key, value)?,
            "embed_dim" => self.embed_dim = parse_value(key, value)?,
            "seq_len" => {
                self.seq_len = match value.trim() {
                    "auto" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            "filter_windows" => {
                self.filter_windows = value
                    .split(',')
                    .map(|w| parse_value(key, w))
                    .collect::<Result<_>>()?
            }
            "filters_per_window" => self.filters_per_window = parse_value(key, value)?,
            "hidden" => self.hidden = parse_value(key, value)?,
            "num_classes" => self.num_classes = parse_value(key, value)?,
            "vocab_size" => self.vocab_size = parse_value(key, value)?,
            "epsilon" => self.epsilon = parse_value(key, value)?,
            "gi" => self.gi = parse_bool(key, value)?,
            "dropout" => self.dropout = parse_value(key, value)?,
            "beta" => self.beta = parse_value(key, value)?,
            "c_sup" => self.c_sup = parse_value(key, value)?,
            "head_layers" => self.head_layers = parse_value(key, value)?,
            "freeze_embeddings" => self.freeze_embeddings = parse_bool(key, value)?,
            "conv_activation" => {
                if value.trim() != CONV_ACTIVATION {
                    return Err(Error::config(
                        key,
                        format!("only `{CONV_ACTIVATION}` is supported"),
                    ));
                }
            }
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Err(Error::config(key, "unknown model key")),
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let windows: Vec<String> = self.filter_windows.iter().map(usize::to_string).collect();
        let values = [
            self.extractor.to_string(),
            self.embed_dim.to_string(),
            self.seq_len
                .map_or_else(|| "auto".into(), |m| m.to_string()),
            windows.join(","),
            self.filters_per_window.to_string(),
            self.hidden.to_string(),
            self.num_classes.to_string(),
            self.vocab_size.to_string(),
            format!("{:?}", self.epsilon),
            self.gi.to_string(),
            self.dropout.to_string(),
            format!("{:?}", self.beta),
            format!("{:?}", self.c_sup),
            self.head_layers.to_string(),
            self.freeze_embeddings.to_string(),
            CONV_ACTIVATION.to_string(),
            self.seed.to_string(),
        ];
        MODEL_KEYS
            .iter()
            .zip(values)
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }

    /// `key=value` lines.
    pub fn to_text(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn from_pairs<'s>(pairs: impl IntoIterator<Item = (&'s str, &'s str)>) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }
}

/// Splits `key=value` text into pairs, skipping blank lines and `#` comments.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(line, format!("line {} is not key=value", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_settings() {
        let c = ModelConfig::default();
        assert_eq!(c.filter_windows, vec![3, 4, 5]);
        assert_eq!(c.filters_per_window, 100);
        assert_eq!(c.feature_dim(), 300);
        assert_eq!(c.hidden, 128);
        assert_eq!(c.beta, 0.5);
        let lstm = ModelConfig {
            extractor: Extractor::Lstm,
            ..c
        };
        assert_eq!(lstm.feature_dim(), 128);
    }

    #[test]
    fn text_round_trip() {
        let c = ModelConfig {
            seq_len: Some(17),
            epsilon: 0.25,
            num_classes: 6,
            vocab_size: 1234,
            extractor: Extractor::Lstm,
            ..ModelConfig::default()
        };
        let pairs = parse_key_values(&c.to_text()).unwrap();
        let back =
            ModelConfig::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str()))).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn bad_values_name_the_key() {
        let mut c = ModelConfig::default();
        match c.set("epsilon", "abc") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "epsilon"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(c.set("bogus", "1"), Err(Error::Config { .. })));
        c.epsilon = 0.6;
        assert!(matches!(c.validate_hyper(), Err(Error::Config { key, .. }) if key == "epsilon"));
    }

    #[test]
    fn paper_epsilons_accepted() {
        for eps in ["0.05", "0.25", "0", "0.5"] {
            let mut c = ModelConfig::default();
            c.set("epsilon", eps).unwrap();
            c.validate_hyper().unwrap();
        }
    }
}
