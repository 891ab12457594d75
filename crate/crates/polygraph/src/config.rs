//! Flat key=value run configuration. Every key has a documented default,
//! unknown keys are rejected, and the fully resolved form can be echoed back
//! out so a run is reproducible from its output directory alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use thiserror::Error;

use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("line {line}: expected key=value, got {text:?}")]
    BadLine { line: usize, text: String },
    #[error("key {key}: cannot parse {value:?}: {msg}")]
    BadValue { key: String, value: String, msg: String },
    #[error("duplicate key {0:?}")]
    DuplicateKey(String),
    #[error("missing required key {0:?}")]
    MissingKey(&'static str),
}

/// A full run description: model and optimizer settings plus dataset and
/// output locations.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub dataset: PathBuf,
    pub out: PathBuf,
}

/// (key, default, description) for every supported key. `dataset` and `out`
/// are required and carry no default.
pub const KEY_REFERENCE: [(&str, &str, &str); 13] = [
    ("model", "poly", "one of gcn, gat, poly, dir-poly"),
    ("hidden", "64", "hidden width; must be divisible by heads"),
    ("layers", "3", "number of convolution blocks"),
    ("heads", "1", "attention heads"),
    ("dropout", "0.2", "dropout rate in [0, 1)"),
    ("sigma", "relu", "gating activation: relu or sigmoid"),
    ("learning_rate", "0.003", "Adam step size"),
    ("weight_decay", "0", "decoupled weight decay"),
    ("max_epochs", "1000", "epoch budget per seed"),
    ("patience", "100", "epochs without validation improvement before stopping"),
    ("seeds", "0,1,2,3,4,5,6,7,8,9", "comma-separated run seeds"),
    ("dataset", "", "path to a dataset directory (required)"),
    ("out", "", "output directory (required)"),
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        msg: e.to_string(),
    })
}

impl RunConfig {
    /// Parse the key=value text. Lines starting with '#' and blank lines are
    /// skipped; whitespace around keys and values is trimmed.
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let mut seen: BTreeMap<String, String> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::BadLine {
                line: i + 1,
                text: line.to_string(),
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if !KEY_REFERENCE.iter().any(|(k, _, _)| *k == key) {
                return Err(ConfigError::UnknownKey(key));
            }
            if seen.insert(key.clone(), value).is_some() {
                return Err(ConfigError::DuplicateKey(key));
            }
        }

        let get = |key: &str| -> Option<&str> { seen.get(key).map(|s| s.as_str()) };
        let mut train = TrainConfig::default();
        if let Some(v) = get("model") {
            train.model = v.to_string();
        }
        if let Some(v) = get("hidden") {
            train.hidden = parse_num("hidden", v)?;
        }
        if let Some(v) = get("layers") {
            train.layers = parse_num("layers", v)?;
        }
        if let Some(v) = get("heads") {
            train.heads = parse_num("heads", v)?;
        }
        if let Some(v) = get("dropout") {
            train.dropout = parse_num("dropout", v)?;
        }
        if let Some(v) = get("sigma") {
            train.sigma = v.to_string();
        }
        if let Some(v) = get("learning_rate") {
            train.learning_rate = parse_num("learning_rate", v)?;
        }
        if let Some(v) = get("weight_decay") {
            train.weight_decay = parse_num("weight_decay", v)?;
        }
        if let Some(v) = get("max_epochs") {
            train.max_epochs = parse_num("max_epochs", v)?;
        }
        if let Some(v) = get("patience") {
            train.patience = parse_num("patience", v)?;
        }
        if let Some(v) = get("seeds") {
            train.seeds = v
                .split(',')
                .map(|s| parse_num("seeds", s.trim()))
                .collect::<Result<_, _>>()?;
        }
        let dataset = PathBuf::from(get("dataset").ok_or(ConfigError::MissingKey("dataset"))?);
        let out = PathBuf::from(get("out").ok_or(ConfigError::MissingKey("out"))?);
        Ok(RunConfig { train, dataset, out })
    }

    /// The fully resolved key=value text, defaults filled in; parsing it back
    /// reproduces this config exactly.
    pub fn resolved(&self) -> String {
        let mut s = String::new();
        let seeds = self
            .train
            .seeds
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let t = &self.train;
        let _ = writeln!(s, "model={}", t.model);
        let _ = writeln!(s, "hidden={}", t.hidden);
        let _ = writeln!(s, "layers={}", t.layers);
        let _ = writeln!(s, "heads={}", t.heads);
        let _ = writeln!(s, "dropout={}", t.dropout);
        let _ = writeln!(s, "sigma={}", t.sigma);
        let _ = writeln!(s, "learning_rate={}", t.learning_rate);
        let _ = writeln!(s, "weight_decay={}", t.weight_decay);
        let _ = writeln!(s, "max_epochs={}", t.max_epochs);
        let _ = writeln!(s, "patience={}", t.patience);
        let _ = writeln!(s, "seeds={seeds}");
        let _ = writeln!(s, "dataset={}", self.dataset.display());
        let _ = writeln!(s, "out={}", self.out.display());
        s
    }
}
