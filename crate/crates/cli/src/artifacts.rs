//! On-disk artifacts: the flat model file with its shape sidecar and the
//! run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use maada_core::rng::PRNG_ALGORITHM;
use maada_core::trainer::TrainConfig;
use maada_core::{Error, ModelParams, Result};

/// Contents of `<model>.json` next to the raw parameter file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelHeader {
    pub layer_sizes: Vec<usize>,
    /// Always `"f64-le"`.
    pub dtype: String,
    pub n_values: usize,
    /// Per layer: weight `fan_in x fan_out` row-major, then bias.
    pub layout: String,
}

pub fn sidecar_path(model: &Path) -> PathBuf {
    model.with_extension("json")
}

pub fn save_model(params: &ModelParams, path: &Path) -> Result<()> {
    let flat = params.to_flat();
    let mut bytes = Vec::with_capacity(flat.len() * 8);
    for v in &flat {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    let header = ModelHeader {
        layer_sizes: params.layer_sizes(),
        dtype: "f64-le".into(),
        n_values: flat.len(),
        layout: "per layer: weight (fan_in x fan_out, row-major) then bias (fan_out)".into(),
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&header).expect("header serializes"))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelParams> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side)?;
    let header: ModelHeader = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", side.display())))?;
    if header.dtype != "f64-le" {
        return Err(Error::Config(format!("{}: unsupported dtype `{}`", side.display(), header.dtype)));
    }
    let bytes = fs::read(path)?;
    if bytes.len() != header.n_values * 8 {
        return Err(Error::Data(format!(
            "{}: expected {} values ({} bytes), found {} bytes",
            path.display(),
            header.n_values,
            header.n_values * 8,
            bytes.len()
        )));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    ModelParams::from_flat(&header.layer_sizes, &flat)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub prng: String,
    pub seed: u64,
    pub config: TrainConfig,
    /// Role name to path, e.g. `source`, `metrics`, `model`.
    pub artifacts: BTreeMap<String, PathBuf>,
}

impl RunManifest {
    pub fn new(config: &TrainConfig) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            prng: PRNG_ALGORITHM.into(),
            seed: config.seed,
            config: config.clone(),
            artifacts: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, role: &str, path: &Path) {
        self.artifacts.insert(role.into(), path.to_path_buf());
    }

    /// Fails if any referenced artifact is missing, so a manifest on disk
    /// never points at files that were not written.
    pub fn write(&self, path: &Path) -> Result<()> {
        for (role, p) in &self.artifacts {
            if !p.exists() {
                return Err(Error::Data(format!("manifest artifact `{role}` missing at {}", p.display())));
            }
        }
        fs::write(path, serde_json::to_string_pretty(self).expect("manifest serializes"))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use maada_core::model::init_mlp;

    #[test]
    fn model_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let p = init_mlp(&[2, 5, 3], 9).unwrap();
        save_model(&p, &path).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 8 * p.n_params() as u64);
        let q = load_model(&path).unwrap();
        let bits = |m: &ModelParams| m.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&p), bits(&q));
    }

    #[test]
    fn truncated_model_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        save_model(&init_mlp(&[2, 3, 2], 0).unwrap(), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(load_model(&path).is_err());
    }

    #[test]
    fn manifest_refuses_missing_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new(&TrainConfig::default());
        m.add("metrics", &dir.path().join("nope.jsonl"));
        assert!(m.write(&dir.path().join("manifest.json")).is_err());
    }
}
