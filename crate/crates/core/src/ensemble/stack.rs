use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::features::{stack_features, StackedFeatures};
use super::meta::{MetaLearnerSpec, MetaModel};
use super::search::stratified_folds;
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::nn::{train, LossSpec, Model, TrainConfig, TrainData};
use crate::rng;

/// How the meta-learner's training features are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StackMode {
    /// Base-learner probabilities on the same train split they were fit on.
    InSample,
    /// Probabilities from base learners refit with each fold held out.
    OutOfFold { folds: usize },
}

impl fmt::Display for StackMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StackMode::InSample => f.write_str("in_sample"),
            StackMode::OutOfFold { folds } => write!(f, "out_of_fold({folds})"),
        }
    }
}

impl FromStr for StackMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in_sample" => Ok(StackMode::InSample),
            "out_of_fold" => Ok(StackMode::OutOfFold { folds: 5 }),
            other => Err(Error::Config(format!("unknown stacking mode {other:?}"))),
        }
    }
}

/// A trained CNN together with the recipe that produced it.
#[derive(Debug, Clone)]
pub struct BaseLearner {
    pub id: String,
    pub model: Model,
    pub train: TrainConfig,
    pub loss: LossSpec,
}

impl BaseLearner {
    pub fn predict_proba(&self, data: &TrainData) -> Result<Vec<Vec<f64>>> {
        self.model.predict_proba(&data.inputs)
    }

    /// Probabilities for every row of `data`, each produced by a fresh copy
    /// of the architecture trained without that row's fold.
    pub fn out_of_fold_proba(&self, data: &TrainData, folds: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let n_classes = self.model.config().output.n_classes();
        let assign = stratified_folds(&data.labels, n_classes, folds, seed)?;
        let mut out = vec![Vec::new(); data.len()];
        for f in 0..folds {
            let (fit_idx, held): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| assign[i] != f);
            let subset = |idx: &[usize]| TrainData {
                inputs: idx.iter().map(|&i| data.inputs[i].clone()).collect(),
                labels: idx.iter().map(|&i| data.labels[i]).collect(),
            };
            let mut config = self.model.config().clone();
            config.init_seed = rng::derive_seed(config.init_seed, f as u64 + 1);
            let mut model = Model::new(config)?;
            let cfg = TrainConfig {
                seed: rng::derive_seed(self.train.seed, f as u64 + 1),
                ..self.train.clone()
            };
            train(&mut model, &subset(&fit_idx), None, &cfg, &self.loss)?;
            for (i, p) in held.iter().zip(model.predict_proba(&subset(&held).inputs)?) {
                out[*i] = p;
            }
        }
        Ok(out)
    }
}

/// Stacked features and labels for the three splits.
#[derive(Debug, Clone, PartialEq)]
pub struct StackData {
    pub train: StackedFeatures,
    pub train_labels: Vec<usize>,
    pub val: StackedFeatures,
    pub val_labels: Vec<usize>,
    pub test: StackedFeatures,
    pub test_labels: Vec<usize>,
}

impl StackData {
    pub fn n_classes(&self) -> usize {
        self.train.n_classes
    }
}

pub fn build_stack_data(
    bases: &[BaseLearner],
    train: &TrainData,
    val: &TrainData,
    test: &TrainData,
    mode: StackMode,
    seed: u64,
) -> Result<StackData> {
    if bases.is_empty() {
        return Err(Error::invalid("stacking needs at least one base learner"));
    }
    let order: Vec<String> = bases.iter().map(|b| b.id.clone()).collect();
    let per_split = |data: &TrainData| -> Result<StackedFeatures> {
        let probs = bases.iter().map(|b| b.predict_proba(data)).collect::<Result<Vec<_>>>()?;
        stack_features(&probs, &order)
    };
    let train_features = match mode {
        StackMode::InSample => {
            log::warn!("in-sample stacking mode: meta-learner trains on probabilities from the data the base learners were fit on");
            per_split(train)?
        }
        StackMode::OutOfFold { folds } => {
            let probs = bases
                .iter()
                .enumerate()
                .map(|(b, base)| base.out_of_fold_proba(train, folds, rng::derive_seed(seed, b as u64)))
                .collect::<Result<Vec<_>>>()?;
            stack_features(&probs, &order)?
        }
    };
    Ok(StackData {
        train: train_features,
        train_labels: train.labels.clone(),
        val: per_split(val)?,
        val_labels: val.labels.clone(),
        test: per_split(test)?,
        test_labels: test.labels.clone(),
    })
}

/// Fits `spec` on the train features and reports on all three splits.
pub fn fit_and_evaluate(spec: &MetaLearnerSpec, data: &StackData, name: &str, seed: u64) -> Result<(MetaModel, Vec<EvalReport>)> {
    let n = data.n_classes();
    let meta = MetaModel::fit(spec, &data.train.rows, &data.train_labels, n, seed)?;
    let mut reports = Vec::with_capacity(3);
    for (split, x, y) in [
        ("train", &data.train, &data.train_labels),
        ("val", &data.val, &data.val_labels),
        ("test", &data.test, &data.test_labels),
    ] {
        reports.push(EvalReport::from_probs(name, split, &meta.predict_proba(&x.rows)?, y, n)?);
    }
    Ok((meta, reports))
}

#[derive(Debug, Clone)]
pub struct StackOutcome {
    pub meta: MetaModel,
    pub data: StackData,
    pub reports: Vec<EvalReport>,
}

pub fn run_stack(
    bases: &[BaseLearner],
    train: &TrainData,
    val: &TrainData,
    test: &TrainData,
    spec: &MetaLearnerSpec,
    mode: StackMode,
    seed: u64,
) -> Result<StackOutcome> {
    let data = build_stack_data(bases, train, val, test, mode, seed)?;
    let (meta, reports) = fit_and_evaluate(spec, &data, spec.kind(), seed)?;
    Ok(StackOutcome { meta, data, reports })
}
