//! Versioned model checkpoint: hyperparameters, every parameter tensor in
//! row-major 64-bit layout, the node encoding, the normalization constants,
//! and the training seed. A checkpoint is self-contained for inference;
//! checkpoints written mid-training additionally carry the optimizer state
//! needed to resume exactly.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::params::{ModelDims, ModelParams};
use super::tape::{NnError, Tensor};
use crate::encoding::NodeEncoding;

pub const CHECKPOINT_SCHEMA_VERSION: &str = "gridflow-ckpt/1";

/// Optimizer and progress state for exact training resumption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStateSnapshot {
    pub adam_m: Vec<Tensor>,
    pub adam_v: Vec<Tensor>,
    /// Optimizer steps applied so far.
    pub step: u64,
    /// Completed epochs.
    pub epoch: usize,
    pub best_val_loss: f64,
    pub epochs_since_best: usize,
    /// Parameters of the best-validation epoch seen so far.
    pub best_params: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: String,
    pub dims: ModelDims,
    /// Parameter tensors in [`ModelParams::flat`] order.
    pub params: Vec<Tensor>,
    /// Node positional encoding, one row per node.
    pub encoding_matrix: Tensor,
    pub encoding_eigenvalues: Vec<f64>,
    /// Per-node demand normalization maxima (MW).
    pub demand_max: Vec<f64>,
    /// Per-link flow normalization (nominal power, MW).
    pub f_nom: Vec<f64>,
    pub seed: u64,
    #[serde(default)]
    pub train_state: Option<TrainStateSnapshot>,
}

impl Checkpoint {
    pub fn new(
        params: &ModelParams,
        encoding: &NodeEncoding,
        demand_max: Vec<f64>,
        f_nom: Vec<f64>,
        seed: u64,
    ) -> Checkpoint {
        let (n, m) = (encoding.matrix.nrows(), encoding.matrix.ncols());
        let mut data = Vec::with_capacity(n * m);
        for r in 0..n {
            for c in 0..m {
                data.push(encoding.matrix[(r, c)]);
            }
        }
        Checkpoint {
            version: CHECKPOINT_SCHEMA_VERSION.to_string(),
            dims: params.dims.clone(),
            params: params.flat_cloned(),
            encoding_matrix: Tensor::from_vec(&[n, m], data),
            encoding_eigenvalues: encoding.eigenvalues.clone(),
            demand_max,
            f_nom,
            seed,
            train_state: None,
        }
    }

    pub fn model_params(&self) -> Result<ModelParams, NnError> {
        ModelParams::from_flat(self.dims.clone(), self.params.clone()).map_err(NnError::Shape)
    }

    pub fn node_encoding(&self) -> NodeEncoding {
        let (n, m) = (self.encoding_matrix.shape[0], self.encoding_matrix.shape[1]);
        let matrix = DMatrix::from_fn(n, m, |r, c| self.encoding_matrix.at2(r, c));
        NodeEncoding {
            matrix,
            eigenvalues: self.encoding_eigenvalues.clone(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NnError> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).expect("checkpoint serializes");
        std::fs::write(path, text).map_err(|source| NnError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint, NnError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| NnError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|source| NnError::Parse {
            path: path.display().to_string(),
            source,
        })?;
        if ckpt.version != CHECKPOINT_SCHEMA_VERSION {
            return Err(NnError::SchemaVersion {
                found: ckpt.version,
                expected: CHECKPOINT_SCHEMA_VERSION.to_string(),
            });
        }
        Ok(ckpt)
    }
}
