//! Run configuration: one JSON document with defaults for every field and
//! strict schema validation (unknown keys rejected).

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::init::ParametricFitConfig;
use crate::simgen::{ComparisonConfig, DgpConfig, Method};
use crate::train::TrainConfig;

fn d_plist() -> Vec<usize> {
    vec![2]
}
fn d_rlist() -> Vec<usize> {
    vec![10, 40, 80]
}
fn d_methods() -> Vec<Method> {
    vec![Method::Parametric, Method::Cpp]
}
fn d_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}
fn d_one() -> usize {
    1
}
fn d_true() -> bool {
    true
}

/// Grid section of the comparison command. `target_process` is 1-based, in
/// line with process ids in data files.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareGrid {
    #[serde(default = "d_plist")]
    pub p_list: Vec<usize>,
    #[serde(default = "d_rlist")]
    pub r_list: Vec<usize>,
    #[serde(default = "d_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub conditional_r: Option<usize>,
    #[serde(default = "d_one")]
    pub target_process: usize,
    #[serde(default = "d_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "d_true")]
    pub timing: bool,
}

impl Default for CompareGrid {
    fn default() -> Self {
        CompareGrid {
            p_list: d_plist(),
            r_list: d_rlist(),
            methods: d_methods(),
            conditional_r: None,
            target_process: d_one(),
            seeds: d_seeds(),
            timing: true,
        }
    }
}

/// Top-level configuration document.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub dgp: DgpConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub parametric: ParametricFitConfig,
    #[serde(default)]
    pub compare: CompareGrid,
}

impl RunConfig {
    /// Parses and validates a config file; returns the config plus the
    /// SHA-256 of the file bytes (recorded as provenance in outputs).
    pub fn load(path: &Path) -> Result<(RunConfig, String)> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::data(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_slice(&bytes)
            .map_err(|e| Error::data(format!("invalid config {}: {e}", path.display())))?;
        cfg.validate()?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        let digest = hasher.finalize();
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        Ok((cfg, hex))
    }

    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        self.train.validate()?;
        if self.compare.target_process == 0 {
            return Err(Error::invalid("compare.target_process is 1-based and must be ≥ 1"));
        }
        Ok(())
    }

    /// Assembles the comparison harness configuration.
    pub fn comparison(&self) -> ComparisonConfig {
        ComparisonConfig {
            dgp: self.dgp.clone(),
            p_list: self.compare.p_list.clone(),
            r_list: self.compare.r_list.clone(),
            methods: self.compare.methods.clone(),
            conditional_r: self.compare.conditional_r,
            target_process: self.compare.target_process - 1,
            seeds: self.compare.seeds.clone(),
            train: self.train.clone(),
            parametric: self.parametric.clone(),
            timing: self.compare.timing,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_uses_defaults() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg.dgp.p, 2);
        assert_eq!(cfg.train.batch_size, 256);
        assert_eq!(cfg.train.patience, 25);
        assert_eq!(cfg.parametric.subsample_sites, 256);
        assert_eq!(cfg.compare.r_list, vec![10, 40, 80]);
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_sections_fill_in() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"dgp": {"p": 3}, "train": {"strategy": "or"}}"#).unwrap();
        assert_eq!(cfg.dgp.p, 3);
        assert_eq!(cfg.dgp.grid_side, 32);
        assert_eq!(cfg.train.strategy, crate::train::Strategy::Or);
        assert_eq!(cfg.train.max_epochs, 500);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus": 1}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"dgp": {"sides": 8}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"train": {"lr": 0.1}}"#).is_err());
    }

    #[test]
    fn load_hashes_file_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, "{}").unwrap();
        let (_, h1) = RunConfig::load(&p).unwrap();
        assert_eq!(h1.len(), 64);
        std::fs::write(&p, "{ }").unwrap();
        let (_, h2) = RunConfig::load(&p).unwrap();
        assert_ne!(h1, h2);
    }

    #[test]
    fn comparison_translates_target_process() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"compare": {"target_process": 2}}"#).unwrap();
        assert_eq!(cfg.comparison().target_process, 1);
        let bad: RunConfig =
            serde_json::from_str(r#"{"compare": {"target_process": 0}}"#).unwrap();
        assert!(bad.validate().is_err());
    }
}
