//! Run configuration: JSON file, then `VQL_*` environment overrides, then
//! command-line flags (applied by the caller).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codebook::QuantizerConfig;
use crate::error::{input, Result, VqlError};
use crate::model::ModelConfig;
use crate::train::TrainConfig;
use crate::tree::TreeParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    /// Distinct grammar sentences in the training corpus.
    pub sentences: usize,
    /// Expressions generated per math split.
    pub math_per_split: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            sentences: 500,
            math_per_split: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub quantizer: QuantizerConfig,
    pub train: TrainConfig,
    pub tree: TreeParams,
    pub corpus: CorpusSpec,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            model: ModelConfig::default(),
            quantizer: QuantizerConfig::default(),
            train: TrainConfig::default(),
            tree: TreeParams::default(),
            corpus: CorpusSpec::default(),
            out_dir: PathBuf::from("run"),
        }
    }
}

fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| input(format!("cannot parse {key}={value:?}")))
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Applies one `VQL_*` override. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "VQL_SEED" => self.seed = parse(key, value)?,
            "VQL_EPOCHS" => self.train.epochs = parse(key, value)?,
            "VQL_BATCH_SIZE" => self.train.batch_size = parse(key, value)?,
            "VQL_LR" => self.train.adam.lr = parse(key, value)?,
            "VQL_CODEBOOK_SIZE" => self.quantizer.codebook_size = parse(key, value)?,
            "VQL_BETA" => self.quantizer.beta = parse(key, value)?,
            "VQL_DECAY" => self.quantizer.decay = parse(key, value)?,
            "VQL_SENTENCES" => self.corpus.sentences = parse(key, value)?,
            "VQL_D_MODEL" => self.model.d_model = parse(key, value)?,
            "VQL_OUT_DIR" => self.out_dir = PathBuf::from(value),
            _ => return Err(input(format!("unknown override {key}"))),
        }
        Ok(())
    }

    /// Applies every `VQL_*` variable from `vars`, in sorted key order.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<()> {
        let mut vars: Vec<(String, String)> = vars.into_iter().filter(|(k, _)| k.starts_with("VQL_")).collect();
        vars.sort();
        for (k, v) in vars {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.quantizer.validate()?;
        if self.train.batch_size == 0 {
            return Err(VqlError::Contract("batch size must be positive".into()));
        }
        if self.corpus.sentences == 0 {
            return Err(VqlError::Contract("corpus must hold at least one sentence".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_is_exact() {
        let mut c = RunConfig::default();
        c.train.adam.lr = 0.1 + 0.2;
        let s = c.to_json().unwrap();
        let back = RunConfig::from_json(&s).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_json().unwrap(), s);
    }

    #[test]
    fn env_overrides() {
        let mut c = RunConfig::default();
        c.apply_env([
            ("VQL_SEED".to_string(), "11".to_string()),
            ("HOME".to_string(), "/x".to_string()),
        ])
        .unwrap();
        assert_eq!(c.seed, 11);
        assert!(c.set("VQL_NOPE", "1").is_err());
        assert!(c.set("VQL_EPOCHS", "many").is_err());
    }

    #[test]
    fn missing_fields_take_defaults() {
        let c = RunConfig::from_json(r#"{"seed": 3}"#).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.model, ModelConfig::default());
    }
}
