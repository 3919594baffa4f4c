use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::model::{ActionModel, Architecture, Normalization};
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "latentmap-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

const LAYOUT: &str = "params are listed in declaration order (encoder, then decoder). \
Matrices are row-major. Dense weights are out x in, biases 1 x out. Tensor layers \
are stored flattened as h x (w*n) with H[i,k,j] at column k*n+j; tensor biases are h x n. \
The hyper-linear output of length d*n is read row-major as a d x n matrix.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// Self-describing serialized model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub architecture: Architecture,
    pub normalization: Normalization,
    pub layout: String,
    pub params: Vec<ParamRecord>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cp: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("checkpoint: {e}")))?;
        if cp.format != CHECKPOINT_FORMAT {
            return Err(Error::Parse(format!("unexpected format tag '{}'", cp.format)));
        }
        if cp.version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!("unsupported checkpoint version {}", cp.version)));
        }
        Ok(cp)
    }
}

impl ActionModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            architecture: self.arch.clone(),
            normalization: self.norm.clone(),
            layout: LAYOUT.into(),
            params: self
                .params
                .iter()
                .map(|(_, p)| ParamRecord {
                    name: p.name.clone(),
                    shape: [p.value.nrows(), p.value.ncols()],
                    data: p.value.iter().copied().collect(),
                })
                .collect(),
        }
    }

    /// Rebuilds the layout from the architecture and fills in the stored
    /// values; names and shapes must match one-to-one.
    pub fn from_checkpoint(cp: &Checkpoint) -> Result<Self> {
        let mut model = ActionModel::new(cp.architecture.clone(), cp.normalization.clone(), 0)?;
        if model.params.len() != cp.params.len() {
            return Err(Error::Parse(format!(
                "checkpoint has {} parameters, architecture declares {}",
                cp.params.len(),
                model.params.len()
            )));
        }
        let ids: Vec<_> = model.params.ids().collect();
        for (id, rec) in ids.into_iter().zip(&cp.params) {
            let expected = model.params.name(id).to_string();
            if rec.name != expected {
                return Err(Error::Parse(format!(
                    "parameter '{}' found where '{expected}' was expected",
                    rec.name
                )));
            }
            let value = Array2::from_shape_vec((rec.shape[0], rec.shape[1]), rec.data.clone())
                .map_err(|e| Error::Parse(format!("parameter '{}': {e}", rec.name)))?;
            if value.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse(format!("parameter '{}' is not finite", rec.name)));
            }
            model
                .params
                .set(id, value)
                .map_err(|e| Error::Parse(e.to_string()))?;
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_checkpoint().to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        ActionModel::from_checkpoint(&Checkpoint::from_json(&text)?)
    }
}
