use serde::{Deserialize, Serialize};

use super::{augment, clahe, resize, segment_crop, AugmentParams, ClaheParams, CropSpec, GrayImage};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default)]
    pub crop: CropSpec,
    #[serde(default)]
    pub clahe: ClaheParams,
    #[serde(default)]
    pub augment: AugmentParams,
    pub target_width: usize,
    pub target_height: usize,
    /// Off for validation and test images.
    #[serde(default)]
    pub augment_enabled: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            crop: CropSpec::default(),
            clahe: ClaheParams::default(),
            augment: AugmentParams::default(),
            target_width: 32,
            target_height: 32,
            augment_enabled: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.crop.validate()?;
        self.clahe.validate()?;
        self.augment.validate()?;
        if self.target_width == 0 || self.target_height == 0 {
            return Err(Error::invalid("target size must be positive"));
        }
        Ok(())
    }
}

/// crop → CLAHE → (augment) → resize, returning the 8-bit result.
pub fn preprocess_image(img: &GrayImage, cfg: &PipelineConfig, rng: &mut Rng) -> Result<GrayImage> {
    cfg.validate()?;
    let roi = segment_crop(img, &cfg.crop)?;
    let enhanced = clahe(&roi, &cfg.clahe)?;
    let augmented = if cfg.augment_enabled {
        augment(&enhanced, &cfg.augment, rng)?
    } else {
        enhanced
    };
    resize(&augmented, cfg.target_width, cfg.target_height)
}

/// Scales intensities to `[0, 1]` as a `(height, width, 1)` tensor.
pub fn to_tensor(img: &GrayImage) -> Tensor {
    let data = img.pixels().iter().map(|&v| f64::from(v) / 255.0).collect();
    Tensor::new(vec![img.height(), img.width(), 1], data).expect("pixel count matches shape")
}

/// Full preprocessing chain producing the network input tensor.
pub fn preprocess(img: &GrayImage, cfg: &PipelineConfig, rng: &mut Rng) -> Result<Tensor> {
    preprocess_image(img, cfg, rng).map(|out| to_tensor(&out))
}
