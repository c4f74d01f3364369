use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, Matrix, Network};
use crate::error::{Error, Result};

pub const NETWORK_FORMAT_TAG: &str = "saliency-lab/network/v1";

/// On-disk JSON form of a [`Network`]: `dims = [d_0, ..., d_k]` and one
/// row-major weight array per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDocument {
    pub format: String,
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub weights: Vec<Vec<f64>>,
}

impl From<&Network> for NetworkDocument {
    fn from(net: &Network) -> Self {
        Self {
            format: NETWORK_FORMAT_TAG.to_string(),
            dims: net.dims(),
            activation: net.activation(),
            weights: net.layers().iter().map(|l| l.as_slice().to_vec()).collect(),
        }
    }
}

impl TryFrom<NetworkDocument> for Network {
    type Error = Error;

    fn try_from(doc: NetworkDocument) -> Result<Self> {
        if doc.format != NETWORK_FORMAT_TAG {
            return Err(Error::InvalidArgument(format!(
                "unsupported network format `{}` (expected `{NETWORK_FORMAT_TAG}`)",
                doc.format
            )));
        }
        if doc.dims.len() < 2 || doc.weights.len() != doc.dims.len() - 1 {
            return Err(Error::DimensionMismatch {
                context: "network document layers",
                expected: doc.dims.len().saturating_sub(1),
                got: doc.weights.len(),
            });
        }
        let layers = doc
            .weights
            .into_iter()
            .enumerate()
            .map(|(i, w)| Matrix::new(doc.dims[i + 1], doc.dims[i], w))
            .collect::<Result<Vec<_>>>()?;
        Network::new(layers, doc.activation)
    }
}

impl Network {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&NetworkDocument::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: NetworkDocument = serde_json::from_str(s)?;
        doc.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}
