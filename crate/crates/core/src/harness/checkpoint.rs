//! JSON checkpoints: model configuration plus named parameter tensors.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HippoModel, ModelConfig};
use crate::numerics::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: ModelConfig,
    pub params: BTreeMap<String, StoredTensor>,
}

impl Checkpoint {
    pub fn from_model(model: &HippoModel) -> Self {
        let params = model
            .params
            .iter()
            .map(|(_, name, t)| {
                (
                    name.to_string(),
                    StoredTensor {
                        shape: t.shape().to_vec(),
                        data: t.data().to_vec(),
                    },
                )
            })
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            config: model.config.clone(),
            params,
        }
    }

    pub fn into_model(self) -> Result<HippoModel> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                self.format_version
            )));
        }
        let mut model = HippoModel::new(self.config, 0)?;
        if model.params.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model expects {}",
                self.params.len(),
                model.params.len()
            )));
        }
        for (name, stored) in self.params {
            let id = model
                .params
                .find(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
            let tensor = Tensor::new(stored.shape, stored.data)
                .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
            model
                .params
                .set(id, tensor)
                .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        }
        Ok(model)
    }
}

pub fn save(model: &HippoModel, path: &Path) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(file, &Checkpoint::from_model(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<HippoModel> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let ckpt: Checkpoint =
        serde_json::from_reader(file).map_err(|e| Error::Checkpoint(e.to_string()))?;
    ckpt.into_model()
}
