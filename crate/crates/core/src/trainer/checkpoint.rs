//! Checkpoint directory: `params.f32`, `optimizer.f32` and `meta.json`.
//! Blobs are little-endian `f32` in parameter-store order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, EpochRecord, HyperMml, ModelShape, TrainConfig};
use crate::autograd::ParamStore;
use crate::data::io::{read_f32, write_f32};
use crate::data::Split;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PARAMS_FILE: &str = "params.f32";
pub const OPTIMIZER_FILE: &str = "optimizer.f32";
pub const META_FILE: &str = "meta.json";

/// Everything needed to rebuild, evaluate or resume a trained model.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub shape: ModelShape,
    pub store: ParamStore,
    pub optimizer: AdamState,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    pub split: Split,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    config: TrainConfig,
    shape: ModelShape,
    epoch: usize,
    optimizer_step: u64,
    params: Vec<ParamEntry>,
    history: Vec<EpochRecord>,
    split: Split,
}

impl Checkpoint {
    /// Rebuilds the model and checks it against the stored parameters.
    pub fn model(&self) -> Result<HyperMml> {
        let mut fresh = ParamStore::new();
        let model = HyperMml::new(&self.config, self.shape.clone(), &mut fresh)?;
        if fresh.len() != self.store.len() {
            return Err(Error::Config(format!(
                "configuration builds {} parameter groups, checkpoint holds {}",
                fresh.len(),
                self.store.len()
            )));
        }
        for ((_, name, t), (_, stored, s)) in fresh.iter().zip(self.store.iter()) {
            if name != stored || t.shape() != s.shape() {
                return Err(Error::Config(format!(
                    "parameter `{name}` {:?} does not match stored `{stored}` {:?}",
                    t.shape(),
                    s.shape()
                )));
            }
        }
        Ok(model)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let params: Vec<f64> = self.store.iter().flat_map(|(_, _, t)| t.data().iter().copied()).collect();
        write_f32(&dir.join(PARAMS_FILE), &params)?;
        let moments: Vec<f64> =
            self.optimizer.m.iter().chain(&self.optimizer.v).flat_map(|t| t.data().iter().copied()).collect();
        write_f32(&dir.join(OPTIMIZER_FILE), &moments)?;
        let meta = Meta {
            config: self.config.clone(),
            shape: self.shape.clone(),
            epoch: self.epoch,
            optimizer_step: self.optimizer.step,
            params: self
                .store
                .iter()
                .map(|(_, n, t)| ParamEntry { name: n.to_string(), shape: t.shape().to_vec() })
                .collect(),
            history: self.history.clone(),
            split: self.split.clone(),
        };
        let path = dir.join(META_FILE);
        fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(META_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: Meta = serde_json::from_str(&text).map_err(|e| Error::schema(&path, e.to_string()))?;
        let total: usize = meta.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();

        let params_path = dir.join(PARAMS_FILE);
        let values = read_f32(&params_path)?;
        if values.len() != total {
            return Err(Error::schema(&params_path, format!("{} values, header declares {total}", values.len())));
        }
        let opt_path = dir.join(OPTIMIZER_FILE);
        let moments = read_f32(&opt_path)?;
        if moments.len() != 2 * total {
            return Err(Error::schema(&opt_path, format!("{} values, expected {}", moments.len(), 2 * total)));
        }

        let mut store = ParamStore::new();
        let (mut m, mut v) = (Vec::new(), Vec::new());
        let mut at = 0;
        for p in &meta.params {
            let n: usize = p.shape.iter().product();
            store.add(p.name.clone(), Tensor::new(p.shape.clone(), values[at..at + n].to_vec())?);
            m.push(Tensor::new(p.shape.clone(), moments[at..at + n].to_vec())?);
            v.push(Tensor::new(p.shape.clone(), moments[total + at..total + at + n].to_vec())?);
            at += n;
        }
        let ckpt = Self {
            config: meta.config,
            shape: meta.shape,
            store,
            optimizer: AdamState { step: meta.optimizer_step, m, v },
            epoch: meta.epoch,
            history: meta.history,
            split: meta.split,
        };
        ckpt.model()?;
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::{tiny_config, tiny_data};
    use super::super::{evaluate, train, EvalTarget};
    use super::*;

    #[test]
    fn save_load_reproduces_parameters_and_reports() {
        let ds = tiny_data(3.0);
        let ckpt = train(&tiny_config(), &ds).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ckpt.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back.config, ckpt.config);
        assert_eq!(back.history, ckpt.history);
        assert_eq!(back.optimizer, ckpt.optimizer);
        assert!(back.store.iter().zip(ckpt.store.iter()).all(|(a, b)| a.1 == b.1 && a.2 == b.2));
        for t in [EvalTarget::Test, EvalTarget::All] {
            assert_eq!(evaluate(&back, &ds, &t).unwrap(), evaluate(&ckpt, &ds, &t).unwrap());
        }
    }

    #[test]
    fn defaults_are_echoed_into_meta() {
        let ds = tiny_data(3.0);
        let cfg = TrainConfig { epochs: 1, d: 8, d_k: 4, transformer_dim: 8, ..TrainConfig::default() };
        let ckpt = train(&cfg, &ds).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ckpt.save(dir.path()).unwrap();
        let meta: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join(META_FILE)).unwrap()).unwrap();
        let c = &meta["config"];
        assert_eq!(
            (c["learning_rate"].as_f64(), c["batch_size"].as_u64(), c["dropout"].as_f64()),
            (Some(1e-4), Some(16), Some(0.5))
        );
    }

    #[test]
    fn truncated_blob_and_foreign_config_are_rejected() {
        let ds = tiny_data(3.0);
        let ckpt = train(&TrainConfig { epochs: 1, ..tiny_config() }, &ds).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ckpt.save(dir.path()).unwrap();
        let p = dir.path().join(PARAMS_FILE);
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Schema { .. })));

        let mut other = ckpt.clone();
        other.config.d = 16;
        assert!(matches!(other.model(), Err(Error::Config(_))));
    }
}
