use serde::{Deserialize, Serialize};

use super::forest::check_rows;
use super::tree::{best_ls_split, grow, Tree};
use crate::error::{Error, Result};
use crate::nn::model::{sigmoid, softmax};
use crate::nn::{expand_binary, PROB_EPS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtParams {
    pub depth: usize,
    pub iterations: usize,
    pub learning_rate: f64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            depth: 10,
            iterations: 100,
            learning_rate: 0.1,
        }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// Gradient-boosted regression trees on the log-loss.
///
/// Binary problems grow one tree per iteration on the logistic loss;
/// multiclass problems grow one tree per class per iteration on the softmax
/// loss. Trees split on least squares of the negative gradient and leaves
/// take a Newton step, shrunk by the learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gbdt {
    n_classes: usize,
    learning_rate: f64,
    /// Initial raw score per output (one for binary).
    init: Vec<f64>,
    /// Training class frequencies, returned verbatim when there are no rounds.
    priors: Vec<f64>,
    /// `rounds[t][k]`: tree for output `k` at iteration `t`.
    rounds: Vec<Vec<Tree<f64>>>,
}

impl Gbdt {
    fn n_outputs(n_classes: usize) -> usize {
        if n_classes == 2 {
            1
        } else {
            n_classes
        }
    }

    fn priors(labels: &[usize], n_classes: usize) -> Vec<f64> {
        let mut counts = vec![0.0; n_classes];
        for &l in labels {
            counts[l] += 1.0;
        }
        counts.iter().map(|c| c / labels.len() as f64).collect()
    }

    /// Fits the booster, calling `monitor(iteration, training_log_loss)`
    /// before the first and after every iteration.
    pub fn fit_monitored(
        rows: &[Vec<f64>],
        labels: &[usize],
        n_classes: usize,
        p: &GbdtParams,
        mut monitor: impl FnMut(usize, f64),
    ) -> Result<Self> {
        p.validate()?;
        if n_classes < 2 {
            return Err(Error::invalid("boosting needs at least two classes"));
        }
        let d = check_rows(rows, labels, n_classes)?;
        let features: Vec<usize> = (0..d).collect();
        let n = rows.len();
        let k_out = Self::n_outputs(n_classes);
        let priors = Self::priors(labels, n_classes);
        let init: Vec<f64> = if k_out == 1 {
            let p1 = priors[1].clamp(PROB_EPS, 1.0 - PROB_EPS);
            vec![(p1 / (1.0 - p1)).ln()]
        } else {
            priors.iter().map(|p| p.max(PROB_EPS).ln()).collect()
        };

        let mut scores: Vec<Vec<f64>> = vec![init.clone(); n];
        let mut model = Gbdt {
            n_classes,
            learning_rate: p.learning_rate,
            init,
            priors,
            rounds: Vec::with_capacity(p.iterations),
        };
        monitor(0, model.log_loss_of(&scores, labels));

        let newton_scale = if k_out == 1 {
            1.0
        } else {
            (n_classes as f64 - 1.0) / n_classes as f64
        };
        for it in 0..p.iterations {
            let probs: Vec<Vec<f64>> = scores.iter().map(|s| model.probs_from_scores(s)).collect();
            let mut round = Vec::with_capacity(k_out);
            for k in 0..k_out {
                let class = if k_out == 1 { 1 } else { k };
                let residual: Vec<f64> = (0..n)
                    .map(|i| f64::from(u8::from(labels[i] == class)) - probs[i][class])
                    .collect();
                let hess: Vec<f64> = (0..n).map(|i| probs[i][class] * (1.0 - probs[i][class])).collect();
                let tree = grow(
                    rows,
                    (0..n).collect(),
                    |idx, depth| {
                        if depth >= p.depth || idx.len() < 2 {
                            None
                        } else {
                            best_ls_split(rows, &residual, idx, &features)
                        }
                    },
                    |idx| {
                        let g: f64 = idx.iter().map(|&i| residual[i]).sum();
                        let h: f64 = idx.iter().map(|&i| hess[i]).sum();
                        p.learning_rate * newton_scale * g / h.max(1e-12)
                    },
                );
                round.push(tree);
            }
            for (s, row) in scores.iter_mut().zip(rows) {
                for (v, tree) in s.iter_mut().zip(&round) {
                    *v += tree.leaf(row);
                }
            }
            model.rounds.push(round);
            monitor(it + 1, model.log_loss_of(&scores, labels));
        }
        Ok(model)
    }

    pub fn fit(rows: &[Vec<f64>], labels: &[usize], n_classes: usize, p: &GbdtParams) -> Result<Self> {
        Self::fit_monitored(rows, labels, n_classes, p, |_, _| {})
    }

    pub fn iterations(&self) -> usize {
        self.rounds.len()
    }

    fn probs_from_scores(&self, s: &[f64]) -> Vec<f64> {
        if s.len() == 1 {
            expand_binary(sigmoid(s[0])).to_vec()
        } else {
            softmax(s)
        }
    }

    fn log_loss_of(&self, scores: &[Vec<f64>], labels: &[usize]) -> f64 {
        let total: f64 = scores
            .iter()
            .zip(labels)
            .map(|(s, &l)| -self.probs_from_scores(s)[l].clamp(PROB_EPS, 1.0).ln())
            .sum();
        total / labels.len() as f64
    }

    pub fn raw_scores(&self, row: &[f64]) -> Vec<f64> {
        let mut s = self.init.clone();
        for round in &self.rounds {
            for (v, tree) in s.iter_mut().zip(round) {
                *v += tree.leaf(row);
            }
        }
        s
    }

    pub fn predict_proba(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter()
            .map(|row| {
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(Error::data("non-finite feature value"));
                }
                if self.rounds.is_empty() {
                    return Ok(self.priors.clone());
                }
                Ok(self.probs_from_scores(&self.raw_scores(row)))
            })
            .collect()
    }

    /// Mean training log-loss of `rows`.
    pub fn log_loss(&self, rows: &[Vec<f64>], labels: &[usize]) -> f64 {
        let scores: Vec<Vec<f64>> = rows.iter().map(|r| self.raw_scores(r)).collect();
        self.log_loss_of(&scores, labels)
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }
}
