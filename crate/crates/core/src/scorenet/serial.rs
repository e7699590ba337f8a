use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::network::{Linear, ScoreNetConfig, ScoreNetworkParams, TokenLayout};
use crate::error::{MarsError, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows × cols`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectral_u: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreNetDocument {
    pub format_version: u32,
    pub config: ScoreNetConfig,
    pub layout: TokenLayout,
    pub layers: Vec<LayerRecord>,
}

impl ScoreNetworkParams {
    pub fn to_document(&self) -> ScoreNetDocument {
        let layers = self
            .layer_names()
            .into_iter()
            .zip(self.layers())
            .map(|(name, l)| LayerRecord {
                name,
                rows: l.weight.nrows(),
                cols: l.weight.ncols(),
                weights: l.weight.transpose().iter().copied().collect(),
                bias: l.bias.iter().copied().collect(),
                spectral_u: l.spectral_u.as_ref().map(|u| u.iter().copied().collect()),
            })
            .collect();
        ScoreNetDocument {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            layout: self.layout,
            layers,
        }
    }

    pub fn from_document(doc: &ScoreNetDocument) -> Result<Self> {
        if doc.format_version != FORMAT_VERSION {
            return Err(MarsError::Format(format!(
                "unsupported score network format version {}",
                doc.format_version
            )));
        }
        doc.config.validate()?;
        let mut rng = crate::rng::seeded(0);
        let mut p = ScoreNetworkParams::init(doc.config.clone(), doc.layout, &mut rng)?;
        let names = p.layer_names();
        if names.len() != doc.layers.len() {
            return Err(MarsError::Format(format!(
                "expected {} layers, found {}",
                names.len(),
                doc.layers.len()
            )));
        }
        for ((layer, rec), name) in p.layers_mut().into_iter().zip(&doc.layers).zip(&names) {
            if &rec.name != name {
                return Err(MarsError::Format(format!("expected layer {name}, found {}", rec.name)));
            }
            let (r, c) = layer.weight.shape();
            if rec.rows != r || rec.cols != c || rec.weights.len() != r * c || rec.bias.len() != c {
                return Err(MarsError::Format(format!("layer {name} has the wrong shape")));
            }
            if rec.weights.iter().chain(&rec.bias).any(|v| !v.is_finite()) {
                return Err(MarsError::Format(format!("layer {name} has non-finite weights")));
            }
            *layer = Linear {
                weight: DMatrix::from_row_slice(r, c, &rec.weights),
                bias: DVector::from_column_slice(&rec.bias),
                spectral_u: match &rec.spectral_u {
                    Some(u) if u.len() == r => Some(DVector::from_column_slice(u)),
                    Some(_) => return Err(MarsError::Format(format!("layer {name} has a bad spectral state"))),
                    None => None,
                },
            };
        }
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.to_document()).map_err(|e| MarsError::Format(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ScoreNetDocument = serde_json::from_str(s).map_err(|e| MarsError::Format(e.to_string()))?;
        Self::from_document(&doc)
    }
}
