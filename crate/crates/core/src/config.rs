//! Run configuration: every section the tools read, merged into one JSON document.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cbf::CbfConfig;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run_name: String,
    pub seed: u64,
    pub env: EnvConfig,
    pub cbf: CbfConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run_name: "run".into(),
            seed: 0,
            env: EnvConfig::default(),
            cbf: CbfConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses and validates; errors carry the JSON path of the offending key.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config_at(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::MissingArtifact(format!("config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// SHA-256 of the resolved JSON, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.run_name.is_empty() || self.run_name.contains(['/', '\\']) {
            return Err(Error::config_at("run_name", "must be a non-empty file name"));
        }
        self.env.validate()?;
        self.cbf.validate()?;
        self.train.validate()?;
        self.eval.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_and_hash_is_stable() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
        let mut other = cfg.clone();
        other.seed = 1;
        assert_ne!(other.hash(), cfg.hash());
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg = RunConfig::from_json(r#"{"seed": 7, "train": {"mode": "p3o"}}"#).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.mode, crate::trainer::Mode::P3o);
        assert_eq!(cfg.train.gamma, 0.99);
    }

    #[test]
    fn unknown_keys_report_their_path() {
        let err = RunConfig::from_json(r#"{"train": {"gamma": 0.9, "gamme": 0.5}}"#).unwrap_err();
        match err {
            Error::Config { path, .. } => assert_eq!(path.as_deref(), Some("train.gamme")),
            e => panic!("unexpected {e}"),
        }
        let err = RunConfig::from_json(r#"{"env": {"lidar": {"n_azimuth": "many"}}}"#).unwrap_err();
        match err {
            Error::Config { path, .. } => assert_eq!(path.as_deref(), Some("env.lidar.n_azimuth")),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let err = RunConfig::from_json(r#"{"train": {"gamma": 1.0}}"#).unwrap_err();
        match err {
            Error::Config { path, .. } => assert_eq!(path.as_deref(), Some("train.gamma")),
            e => panic!("unexpected {e}"),
        }
    }
}
