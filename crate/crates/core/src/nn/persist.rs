use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::persist::{self, Provenance};
use crate::tensor::Tensor;

pub const KIND: &str = "cnn";

#[derive(Serialize, Deserialize)]
struct Layer {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Body {
    config: ModelConfig,
    layers: Vec<Layer>,
}

impl Model {
    pub fn to_text(&self, provenance: Option<&Provenance>) -> Result<String> {
        let layers = self
            .config()
            .param_names()
            .into_iter()
            .zip(self.params())
            .map(|(name, p)| Layer {
                name,
                shape: p.shape().to_vec(),
                values: p.data().to_vec(),
            })
            .collect();
        persist::to_string(
            KIND,
            provenance,
            &Body {
                config: self.config().clone(),
                layers,
            },
        )
    }

    pub fn from_text(text: &str) -> Result<(Self, Option<Provenance>)> {
        let (body, prov): (Body, _) = persist::from_str(text, KIND)?;
        let names = body.config.param_names();
        let params = body
            .layers
            .into_iter()
            .zip(&names)
            .map(|(l, expected)| {
                if &l.name != expected {
                    return Err(Error::Format(format!("expected layer {expected}, found {}", l.name)));
                }
                Tensor::new(l.shape, l.values)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((Model::from_parts(body.config, params)?, prov))
    }

    pub fn save(&self, path: &Path, provenance: Option<&Provenance>) -> Result<()> {
        let text = self.to_text(provenance)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Self, Option<Provenance>)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
