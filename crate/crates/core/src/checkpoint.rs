//! safetensors checkpoints carrying the run config and dataset digest.

use std::collections::HashMap;
use std::path::Path;

use fryshort_autograd::{ParamStore, Tensor};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use sha2::{Digest, Sha256};

use crate::adversarial::DomainIndex;
use crate::config::RunConfig;
use crate::error::{FryError, Result};
use crate::model::FryNet;

const KEY_CONFIG: &str = "run_config";
const KEY_MANIFEST: &str = "manifest_sha256";
const KEY_DOMAINS: &str = "train_video_ids";
const KEY_ITER: &str = "iteration";

/// Everything needed to rebuild a trained model.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub manifest_digest: String,
    pub domain_ids: Vec<usize>,
    pub iteration: usize,
    pub store: ParamStore<f32>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let bytes: Vec<(String, Vec<usize>, Vec<u8>)> = self
            .store
            .entries()
            .iter()
            .map(|e| {
                let raw = e.value.data().iter().flat_map(|v| v.to_le_bytes()).collect();
                (e.name.clone(), e.value.shape().to_vec(), raw)
            })
            .collect();
        let views = bytes
            .iter()
            .map(|(n, s, b)| {
                TensorView::new(Dtype::F32, s.clone(), b)
                    .map(|v| (n.clone(), v))
                    .map_err(|e| FryError::Format(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let meta = HashMap::from([
            (KEY_CONFIG.to_string(), self.config.to_toml()),
            (KEY_MANIFEST.to_string(), self.manifest_digest.clone()),
            (KEY_DOMAINS.to_string(), serde_json::to_string(&self.domain_ids).expect("ids serialize")),
            (KEY_ITER.to_string(), self.iteration.to_string()),
        ]);
        safetensors::serialize(views, &Some(meta)).map_err(|e| FryError::Format(e.to_string()))
    }

    /// Parses a checkpoint and rebuilds the model it was trained as. Every
    /// registered parameter must be present with its registered shape.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, FryNet)> {
        let fmt = |e: safetensors::SafeTensorError| FryError::Format(e.to_string());
        let (_, header) = SafeTensors::read_metadata(bytes).map_err(fmt)?;
        let meta = header
            .metadata()
            .clone()
            .ok_or_else(|| FryError::Format("checkpoint has no metadata".into()))?;
        let field = |k: &str| {
            meta.get(k)
                .cloned()
                .ok_or_else(|| FryError::Format(format!("checkpoint metadata lacks {k}")))
        };
        let config = RunConfig::from_toml(&field(KEY_CONFIG)?)?;
        let domain_ids: Vec<usize> =
            serde_json::from_str(&field(KEY_DOMAINS)?).map_err(|e| FryError::Format(e.to_string()))?;
        let iteration = field(KEY_ITER)?
            .parse()
            .map_err(|_| FryError::Format("bad iteration in checkpoint".into()))?;
        let mut store = ParamStore::<f32>::new();
        let model = FryNet::new(&mut store, &config, DomainIndex::from_ids(domain_ids.clone()))?;
        let st = SafeTensors::deserialize(bytes).map_err(fmt)?;
        if st.len() != store.len() {
            return Err(FryError::Format(format!(
                "checkpoint holds {} arrays, model registers {}",
                st.len(),
                store.len()
            )));
        }
        for id in store.ids().collect::<Vec<_>>() {
            let name = store.name(id).to_string();
            let view = st.tensor(&name).map_err(fmt)?;
            let shape = store.get(id).shape().to_vec();
            if view.dtype() != Dtype::F32 || view.shape() != shape.as_slice() {
                return Err(FryError::Format(format!(
                    "{name}: stored {:?} {:?}, expected F32 {shape:?}",
                    view.dtype(),
                    view.shape()
                )));
            }
            let data = view
                .data()
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            store.set(id, Tensor::from_vec(shape, data));
        }
        let ck = Self {
            config,
            manifest_digest: field(KEY_MANIFEST)?,
            domain_ids,
            iteration,
            store,
        };
        Ok((ck, model))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|source| FryError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<(Self, FryNet)> {
        let bytes = std::fs::read(path).map_err(|source| FryError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

/// SHA-256 over parameter names, shapes and little-endian values, in
/// registration order.
pub fn param_digest(store: &ParamStore<f32>) -> String {
    let mut h = Sha256::new();
    for e in store.entries() {
        h.update(e.name.as_bytes());
        for d in e.value.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in e.value.data() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}
