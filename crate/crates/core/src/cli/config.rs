use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Task, DEFAULT_RATIOS};
use crate::ensemble::{GridSpace, SearchGrid, SearchMode, SelectionMetric, StackMode};
use crate::error::{Error, Result};
use crate::imaging::{AugmentParams, ClaheParams, CropSpec, PipelineConfig};
use crate::nn::{ModelConfig, OutputKind, TrainConfig, HIDDEN_UNITS};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    /// Images per KL grade 0..=4.
    pub counts: [usize; 5],
    pub image_size: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            counts: [192, 88, 128, 64, 24],
            image_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub crop: CropSpec,
    pub clahe: ClaheParams,
    pub flip_probability: f64,
    pub zoom_fraction: f64,
    /// Augment training images (validation and test images never are).
    pub augment_train: bool,
    pub target_width: usize,
    pub target_height: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        let a = AugmentParams::default();
        PreprocessConfig {
            crop: CropSpec::default(),
            clahe: ClaheParams::default(),
            flip_probability: a.flip_probability,
            zoom_fraction: a.zoom_fraction,
            augment_train: true,
            target_width: 32,
            target_height: 32,
        }
    }
}

impl PreprocessConfig {
    pub fn pipeline(&self, augment: bool, seed: u64) -> PipelineConfig {
        PipelineConfig {
            crop: self.crop,
            clahe: self.clahe,
            augment: AugmentParams {
                flip_probability: self.flip_probability,
                zoom_fraction: self.zoom_fraction,
                seed,
            },
            target_width: self.target_width,
            target_height: self.target_height,
            augment_enabled: augment && self.augment_train,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub name: String,
    /// Output channels of each conv block.
    pub channels: Vec<usize>,
    pub epochs: usize,
    #[serde(default)]
    pub init_seed: Option<u64>,
    #[serde(default)]
    pub train_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainParams {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub dropout: f64,
    /// Inverse-frequency class weights; uniform weights when false.
    pub class_weighting: bool,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            lr: 0.001,
            momentum: 0.9,
            batch_size: 2,
            dropout: 0.2,
            class_weighting: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    /// Minimum base-learner test accuracy; 0.5 multiclass, 0.7 binary when unset.
    pub threshold: Option<f64>,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaConfig {
    pub grids: Vec<SearchGrid>,
    pub mode: StackMode,
    /// Chooses among the tuned meta-learners by validation score.
    pub selection_metric: SelectionMetric,
}

impl Default for MetaConfig {
    fn default() -> Self {
        let grid = |space| SearchGrid {
            space,
            folds: 5,
            mode: SearchMode::Exhaustive,
            metric: SelectionMetric::BalancedAccuracy,
        };
        MetaConfig {
            grids: vec![
                grid(GridSpace::Knn { k: vec![2, 4, 6, 8, 10] }),
                grid(GridSpace::RandomForest {
                    n_trees: vec![100, 200],
                    max_depth: vec![None, Some(6)],
                    features_per_split: vec![None],
                }),
                grid(GridSpace::Gbdt {
                    depth: vec![10, 15],
                    iterations: vec![100],
                    learning_rate: vec![0.1, 0.00005],
                }),
            ],
            mode: StackMode::InSample,
            selection_metric: SelectionMetric::BalancedAccuracy,
        }
    }
}

/// Seeds of every randomized stage; unset ones derive from the run seed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub synth: Option<u64>,
    pub split: Option<u64>,
    pub augment: Option<u64>,
    pub cv: Option<u64>,
    pub meta: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub task: Task,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub seeds: Seeds,
    /// Image tree `root/<grade>/*`; the synthetic set under `<out>/data` when unset.
    #[serde(default)]
    pub data_root: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default = "default_ratios")]
    pub split_ratios: [f64; 3],
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default = "default_backbones")]
    pub backbones: Vec<BackboneConfig>,
    #[serde(default)]
    pub train: TrainParams,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub meta: MetaConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("koa-run")
}

fn default_ratios() -> [f64; 3] {
    DEFAULT_RATIOS
}

fn default_backbones() -> Vec<BackboneConfig> {
    [("wide", vec![8, 16, 32], 30), ("mid", vec![8, 16], 30), ("narrow", vec![4, 8], 40)]
        .into_iter()
        .map(|(name, channels, epochs)| BackboneConfig {
            name: name.to_string(),
            channels,
            epochs,
            init_seed: None,
            train_seed: None,
        })
        .collect()
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub task: Option<Task>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads `path` (defaults when `None`), applies overrides, fills every
    /// derived default and validates.
    pub fn load(path: Option<&Path>, ov: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = ov.seed {
            cfg.seed = s;
        }
        if let Some(o) = &ov.out {
            cfg.out_dir = o.clone();
        }
        if let Some(t) = ov.task {
            cfg.task = t;
        }
        cfg.materialize();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Makes every seed and task-dependent default explicit.
    pub fn materialize(&mut self) {
        let base = self.seed;
        let s = &mut self.seeds;
        for (k, slot) in [&mut s.synth, &mut s.split, &mut s.augment, &mut s.cv, &mut s.meta].into_iter().enumerate() {
            slot.get_or_insert(derive_seed(base, k as u64));
        }
        for (i, b) in self.backbones.iter_mut().enumerate() {
            b.init_seed.get_or_insert(derive_seed(base, 100 + 2 * i as u64));
            b.train_seed.get_or_insert(derive_seed(base, 101 + 2 * i as u64));
        }
        self.selection.threshold.get_or_insert(match self.task {
            Task::Multiclass => 0.5,
            Task::Binary => 0.7,
        });
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| Error::Config(e.to_string());
        if self.backbones.is_empty() {
            return Err(Error::Config("at least one backbone is required".into()));
        }
        let mut names: Vec<&str> = self.backbones.iter().map(|b| b.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("backbone names must be unique".into()));
        }
        if let Some(b) = self
            .backbones
            .iter()
            .find(|b| b.name.is_empty() || !b.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-'))
        {
            return Err(Error::Config(format!("backbone name {:?} must be non-empty [A-Za-z0-9_-]", b.name)));
        }
        for b in &self.backbones {
            self.model_config(b).validate().map_err(cfg_err)?;
        }
        self.preprocess.pipeline(true, 0).validate().map_err(cfg_err)?;
        let t = &self.train;
        if !(t.lr.is_finite() && t.lr > 0.0) || !(0.0..1.0).contains(&t.momentum) || t.batch_size == 0 {
            return Err(Error::Config(format!(
                "training needs lr > 0, momentum in [0, 1) and batch_size > 0: {t:?}"
            )));
        }
        if self.meta.grids.is_empty() {
            return Err(Error::Config("at least one meta-learner grid is required".into()));
        }
        for (i, g) in self.meta.grids.iter().enumerate() {
            g.validate().map_err(cfg_err)?;
            if self.meta.grids[..i].iter().any(|o| o.space.kind() == g.space.kind()) {
                return Err(Error::Config(format!("more than one {} grid", g.space.kind())));
            }
        }
        if let StackMode::OutOfFold { folds } = self.meta.mode {
            if folds < 2 {
                return Err(Error::Config("out-of-fold stacking needs at least 2 folds".into()));
            }
        }
        if self.synth.image_size < 32 || self.synth.counts.contains(&0) {
            return Err(Error::Config("synthetic data needs image_size >= 32 and every class count > 0".into()));
        }
        Ok(())
    }

    pub fn threshold(&self) -> f64 {
        self.selection.threshold.expect("materialized")
    }

    pub fn seed_of(slot: Option<u64>) -> u64 {
        slot.expect("materialized")
    }

    pub fn data_root(&self) -> PathBuf {
        self.data_root.clone().unwrap_or_else(|| self.out_dir.join("data"))
    }

    pub fn model_config(&self, b: &BackboneConfig) -> ModelConfig {
        ModelConfig {
            name: b.name.clone(),
            input_height: self.preprocess.target_height,
            input_width: self.preprocess.target_width,
            channels: b.channels.clone(),
            hidden: HIDDEN_UNITS,
            dropout: self.train.dropout,
            output: OutputKind::for_classes(self.task.n_classes()),
            init_seed: Self::seed_of(b.init_seed),
        }
    }

    pub fn train_config(&self, b: &BackboneConfig) -> TrainConfig {
        TrainConfig {
            lr: self.train.lr,
            momentum: self.train.momentum,
            epochs: b.epochs,
            batch_size: self.train.batch_size,
            seed: Self::seed_of(b.train_seed),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// SHA-256 of the materialized config, excluding the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}
