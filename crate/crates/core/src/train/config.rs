//! Run configuration: a flat `key = value` file with dotted sections.
//!
//! The file is TOML; nested tables flatten to dotted keys, so
//! `[model]\nn_heads = 8` and `model.n_heads = 8` are equivalent. Unknown
//! keys are rejected. Command-line overrides (`key=value`) win over the file.

use std::collections::BTreeMap;
use std::path::PathBuf;

use toml::Value;

use crate::data::Thresholds;
use crate::dataset::DatasetTag;
use crate::error::{Error, Result};
use crate::model::{BackboneConfig, FusionMode, ModelConfig, MvpConfig};
use crate::data::{PHYSIO_WIDTH, VIDEO_WIDTH};

/// One accepted configuration key.
#[derive(Clone, Copy, Debug)]
pub struct KeySpec {
    pub key: &'static str,
    pub kind: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn k(key: &'static str, kind: &'static str, default: &'static str, help: &'static str) -> KeySpec {
    KeySpec { key, kind, default, help }
}

/// Every accepted key, in documentation order.
pub const KEYS: &[KeySpec] = &[
    k("corpus", "path", "(required)", "corpus manifest (JSON lines)"),
    k("out", "path", "runs", "output directory"),
    k("seed", "int", "7", "seed for folds, initialization, shuffling and dropout"),
    k("epochs", "int", "30", "maximum training epochs per fold"),
    k("batch_size", "int", "8", "trials per optimizer step"),
    k("learning_rate", "float", "0.0001", "Adam step size"),
    k("folds", "int", "5", "subject-independent cross-validation folds"),
    k("mode", "string", "fused", "fused | video_only | physio_only"),
    k("dataset_tag", "string", "amigos", "amigos | deap | synthetic (sets default thresholds)"),
    k("thresholds.valence", "float", "by dataset", "valence binarization threshold"),
    k("thresholds.arousal", "float", "by dataset", "arousal binarization threshold"),
    k("early_stop.patience", "int", "5", "epochs without training-loss improvement before stopping"),
    k("early_stop.min_delta", "float", "0.0001", "smallest loss decrease counted as improvement"),
    k("model.n_heads", "int", "8", "attention heads"),
    k("model.n_layers", "int", "8", "fusion layers"),
    k("model.model_dim", "int", "512", "token width (also the backbone feature width)"),
    k("model.ffn_dim", "int", "1024", "feed-forward hidden width"),
    k("model.token_count", "int", "100", "tokens per modality after time reduction"),
    k("model.use_positional_encoding", "bool", "true", "add sinusoidal encodings to both token streams"),
    k("model.dropout", "float", "0.1", "dropout on attention weights and feed-forward output"),
    k("video.conv_layers", "[[channels, kernel], ...]", "[[128, 5], [512, 5]]", "video 1D-CNN"),
    k("physio.conv_layers", "[[channels, kernel], ...]", "[[64, 7], [256, 7], [512, 7]]", "physio 1D-CNN"),
    k("data.tv_max", "int", "0", "video padding length; 0 scans the corpus"),
    k("data.tp_max", "int", "0", "physio padding length; 0 scans the corpus"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub folds: usize,
    pub mode: FusionMode,
    pub dataset: DatasetTag,
    pub thresholds: Thresholds,
    pub patience: usize,
    pub min_delta: f64,
    pub model: ModelConfig,
    pub video_conv: Vec<(usize, usize)>,
    pub physio_conv: Vec<(usize, usize)>,
    pub tv_max: Option<usize>,
    pub tp_max: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let dataset = DatasetTag::Amigos;
        Self {
            corpus: None,
            out: PathBuf::from("runs"),
            seed: 7,
            epochs: 30,
            batch_size: 8,
            learning_rate: 1e-4,
            folds: 5,
            mode: FusionMode::Fused,
            dataset,
            thresholds: Thresholds::uniform(dataset.label_threshold()),
            patience: 5,
            min_delta: 1e-4,
            model: ModelConfig::default(),
            video_conv: BackboneConfig::video(1).conv_layers,
            physio_conv: BackboneConfig::physio(1).conv_layers,
            tv_max: None,
            tp_max: None,
        }
    }
}

/// Flattens nested tables into dotted keys.
fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

/// Parses the right-hand side of a `key=value` override as a TOML value,
/// falling back to a bare string.
pub fn parse_override(assignment: &str) -> Result<(String, Value)> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
    let key = key.trim().to_string();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((key, value))
}

fn as_int(key: &str, v: &Value) -> Result<usize> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => Err(Error::Config(format!("{key} must be a non-negative integer, got {v}"))),
    }
}

fn as_float(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(Error::Config(format!("{key} must be a number, got {v}"))),
    }
}

fn as_str<'a>(key: &str, v: &'a Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| Error::Config(format!("{key} must be a string, got {v}")))
}

fn as_bool(key: &str, v: &Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| Error::Config(format!("{key} must be true or false, got {v}")))
}

fn as_layers(key: &str, v: &Value) -> Result<Vec<(usize, usize)>> {
    let bad = || Error::Config(format!("{key} must look like [[channels, kernel], ...], got {v}"));
    let arr = v.as_array().ok_or_else(bad)?;
    arr.iter()
        .map(|pair| match pair.as_array().map(Vec::as_slice) {
            Some([c, k]) => Ok((as_int(key, c)?, as_int(key, k)?)),
            _ => Err(bad()),
        })
        .collect()
}

fn layers_value(layers: &[(usize, usize)]) -> String {
    let parts: Vec<String> = layers.iter().map(|(c, k)| format!("[{c}, {k}]")).collect();
    format!("[{}]", parts.join(", "))
}

impl RunConfig {
    /// Parses file text plus overrides.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut flat = BTreeMap::new();
        flatten("", &table, &mut flat);
        for o in overrides {
            let (key, value) = parse_override(o)?;
            flat.insert(key, value);
        }
        Self::from_map(&flat)
    }

    pub fn from_map(flat: &BTreeMap<String, Value>) -> Result<Self> {
        if let Some(unknown) = flat.keys().find(|key| !KEYS.iter().any(|s| s.key == key.as_str())) {
            return Err(Error::Config(format!("unknown configuration key '{unknown}'")));
        }
        let mut c = RunConfig::default();
        let get = |key: &str| flat.get(key);
        if let Some(v) = get("corpus") {
            c.corpus = Some(PathBuf::from(as_str("corpus", v)?));
        }
        if let Some(v) = get("out") {
            c.out = PathBuf::from(as_str("out", v)?);
        }
        if let Some(v) = get("seed") {
            c.seed = as_int("seed", v)? as u64;
        }
        if let Some(v) = get("epochs") {
            c.epochs = as_int("epochs", v)?;
        }
        if let Some(v) = get("batch_size") {
            c.batch_size = as_int("batch_size", v)?;
        }
        if let Some(v) = get("learning_rate") {
            c.learning_rate = as_float("learning_rate", v)?;
        }
        if let Some(v) = get("folds") {
            c.folds = as_int("folds", v)?;
        }
        if let Some(v) = get("mode") {
            c.mode = as_str("mode", v)?.parse()?;
        }
        if let Some(v) = get("dataset_tag") {
            c.dataset = as_str("dataset_tag", v)?.parse()?;
        }
        c.thresholds = Thresholds::uniform(c.dataset.label_threshold());
        if let Some(v) = get("thresholds.valence") {
            c.thresholds.valence = as_float("thresholds.valence", v)?;
        }
        if let Some(v) = get("thresholds.arousal") {
            c.thresholds.arousal = as_float("thresholds.arousal", v)?;
        }
        if let Some(v) = get("early_stop.patience") {
            c.patience = as_int("early_stop.patience", v)?;
        }
        if let Some(v) = get("early_stop.min_delta") {
            c.min_delta = as_float("early_stop.min_delta", v)?;
        }
        let m = &mut c.model;
        for (key, slot) in [
            ("model.n_heads", &mut m.n_heads),
            ("model.n_layers", &mut m.n_layers),
            ("model.model_dim", &mut m.model_dim),
            ("model.ffn_dim", &mut m.ffn_dim),
            ("model.token_count", &mut m.token_count),
        ] {
            if let Some(v) = get(key) {
                *slot = as_int(key, v)?;
            }
        }
        if let Some(v) = get("model.use_positional_encoding") {
            m.use_positional_encoding = as_bool("model.use_positional_encoding", v)?;
        }
        if let Some(v) = get("model.dropout") {
            m.dropout = as_float("model.dropout", v)?;
        }
        if let Some(v) = get("video.conv_layers") {
            c.video_conv = as_layers("video.conv_layers", v)?;
        }
        if let Some(v) = get("physio.conv_layers") {
            c.physio_conv = as_layers("physio.conv_layers", v)?;
        }
        if let Some(v) = get("data.tv_max") {
            c.tv_max = Some(as_int("data.tv_max", v)?).filter(|&n| n > 0);
        }
        if let Some(v) = get("data.tp_max") {
            c.tp_max = Some(as_int("data.tp_max", v)?).filter(|&n| n > 0);
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if self.folds < 2 {
            return Err(Error::Config("folds must be at least 2".into()));
        }
        for (name, t) in [("valence", self.thresholds.valence), ("arousal", self.thresholds.arousal)] {
            if !(1.0..=9.0).contains(&t) {
                return Err(Error::Config(format!("thresholds.{name} {t} outside [1, 9]")));
            }
        }
        if !(self.min_delta >= 0.0) {
            return Err(Error::Config("early_stop.min_delta must be non-negative".into()));
        }
        self.model.validate()
    }

    /// The corpus path, or a config error naming the missing key.
    pub fn require_corpus(&self) -> Result<&PathBuf> {
        self.corpus.as_ref().ok_or_else(|| Error::Config("missing required key 'corpus'".into()))
    }

    /// Network description for the given padding lengths.
    pub fn mvp_config(&self, tv_max: usize, tp_max: usize) -> MvpConfig {
        let backbone = |conv: &[(usize, usize)], time, channels| BackboneConfig {
            conv_layers: conv.to_vec(),
            feature_dim: self.model.model_dim,
            token_count: self.model.token_count,
            input_time_max: time,
            input_channels: channels,
        };
        MvpConfig {
            model: self.model.clone(),
            video: backbone(&self.video_conv, tv_max, VIDEO_WIDTH),
            physio: backbone(&self.physio_conv, tp_max, PHYSIO_WIDTH),
            mode: self.mode,
        }
    }

    /// Canonical `key = value` text; [`RunConfig::parse`] reads it back.
    pub fn to_text(&self) -> String {
        let mut lines = Vec::new();
        let mut put = |k: &str, v: String| lines.push(format!("{k} = {v}"));
        if let Some(c) = &self.corpus {
            put("corpus", Value::String(c.display().to_string()).to_string());
        }
        put("out", Value::String(self.out.display().to_string()).to_string());
        put("seed", self.seed.to_string());
        put("epochs", self.epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("learning_rate", Value::Float(self.learning_rate).to_string());
        put("folds", self.folds.to_string());
        put("mode", format!("\"{}\"", self.mode));
        put("dataset_tag", format!("\"{}\"", self.dataset));
        put("thresholds.valence", Value::Float(self.thresholds.valence).to_string());
        put("thresholds.arousal", Value::Float(self.thresholds.arousal).to_string());
        put("early_stop.patience", self.patience.to_string());
        put("early_stop.min_delta", Value::Float(self.min_delta).to_string());
        put("model.n_heads", self.model.n_heads.to_string());
        put("model.n_layers", self.model.n_layers.to_string());
        put("model.model_dim", self.model.model_dim.to_string());
        put("model.ffn_dim", self.model.ffn_dim.to_string());
        put("model.token_count", self.model.token_count.to_string());
        put("model.use_positional_encoding", self.model.use_positional_encoding.to_string());
        put("model.dropout", Value::Float(self.model.dropout).to_string());
        put("video.conv_layers", layers_value(&self.video_conv));
        put("physio.conv_layers", layers_value(&self.physio_conv));
        put("data.tv_max", self.tv_max.unwrap_or(0).to_string());
        put("data.tp_max", self.tp_max.unwrap_or(0).to_string());
        lines.push(String::new());
        lines.join("\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_sections() {
        let c = RunConfig::parse("", &[]).unwrap();
        assert_eq!(c, RunConfig::default());
        let a = RunConfig::parse("[model]\nn_heads = 4\nmodel_dim = 64\n", &[]).unwrap();
        let b = RunConfig::parse("model.n_heads = 4\nmodel.model_dim = 64\n", &[]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.model.n_heads, 4);
    }

    #[test]
    fn overrides_win() {
        let c = RunConfig::parse("epochs = 3\nmode = \"fused\"\n", &["epochs=9".into(), "mode=video_only".into()]).unwrap();
        assert_eq!(c.epochs, 9);
        assert_eq!(c.mode, FusionMode::VideoOnly);
        let c = RunConfig::parse("", &["physio.conv_layers=[[4, 5], [8, 5]]".into()]).unwrap();
        assert_eq!(c.physio_conv, vec![(4, 5), (8, 5)]);
    }

    #[test]
    fn unknown_and_invalid_keys() {
        let e = RunConfig::parse("model.n_head = 3\n", &[]).unwrap_err();
        assert!(e.to_string().contains("model.n_head"));
        assert_eq!(e.category(), "config");
        assert!(RunConfig::parse("epochs = 0\n", &[]).is_err());
        assert!(RunConfig::parse("epochs = \"ten\"\n", &[]).is_err());
        assert!(RunConfig::parse("thresholds.valence = 9.5\n", &[]).is_err());
        assert!(RunConfig::parse("mode = \"late\"\n", &[]).is_err());
        assert!(RunConfig::parse("", &["noequals".into()]).is_err());
    }

    #[test]
    fn dataset_sets_thresholds() {
        let c = RunConfig::parse("dataset_tag = \"deap\"\n", &[]).unwrap();
        assert_eq!(c.thresholds, Thresholds::uniform(5.0));
        let c = RunConfig::parse("dataset_tag = \"deap\"\nthresholds.arousal = 4.0\n", &[]).unwrap();
        assert_eq!((c.thresholds.valence, c.thresholds.arousal), (5.0, 4.0));
    }

    #[test]
    fn text_round_trips() {
        let c = RunConfig::parse("corpus = \"m.jsonl\"\nlearning_rate = 0.003\ndata.tp_max = 40\n", &["video.conv_layers=[[8,3]]".into()]).unwrap();
        assert_eq!(RunConfig::parse(&c.to_text(), &[]).unwrap(), c);
    }

    #[test]
    fn every_key_is_documented_once() {
        let mut seen = std::collections::BTreeSet::new();
        for s in KEYS {
            assert!(seen.insert(s.key), "{}", s.key);
        }
        assert!(RunConfig::default().to_text().lines().filter(|l| !l.is_empty()).all(|l| {
            let key = l.split(" = ").next().unwrap();
            seen.contains(key)
        }));
    }

    #[test]
    fn missing_corpus_names_the_key() {
        let e = RunConfig::default().require_corpus().unwrap_err();
        assert!(e.to_string().contains("corpus"));
        assert_eq!(e.category(), "config");
    }
}
