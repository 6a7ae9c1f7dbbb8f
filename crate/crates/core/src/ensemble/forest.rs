use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::tree::{best_gini_split, grow, Tree};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until leaves are pure.
    pub max_depth: Option<usize>,
    /// Candidate features per node; `None` means `round(sqrt(d))`.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 200,
            max_depth: None,
            features_per_split: None,
            bootstrap: true,
        }
    }
}

/// Bagged CART classifiers; predictions average leaf class frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    n_classes: usize,
    trees: Vec<Tree<Vec<f64>>>,
}

pub(crate) fn check_rows(rows: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Result<usize> {
    if rows.is_empty() || rows.len() != labels.len() {
        return Err(Error::data(format!("{} rows for {} labels", rows.len(), labels.len())));
    }
    let d = rows[0].len();
    for r in rows {
        if r.len() != d {
            return Err(Error::shape("features", format!("{d} columns"), format!("{} columns", r.len())));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite feature value"));
        }
    }
    if let Some(l) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::invalid(format!("label {l} outside 0..{n_classes}")));
    }
    Ok(d)
}

impl RandomForest {
    pub fn fit(rows: &[Vec<f64>], labels: &[usize], n_classes: usize, p: &ForestParams, seed: u64) -> Result<Self> {
        if p.n_trees == 0 {
            return Err(Error::invalid("a forest needs at least one tree"));
        }
        let d = check_rows(rows, labels, n_classes)?;
        let m = p
            .features_per_split
            .unwrap_or_else(|| (d as f64).sqrt().round() as usize)
            .clamp(1, d.max(1));
        let n = rows.len();
        let trees = (0..p.n_trees)
            .map(|t| {
                let mut r = rng::stream(seed, t as u64);
                let sample: Vec<usize> = if p.bootstrap {
                    (0..n).map(|_| r.gen_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                grow(
                    rows,
                    sample,
                    |idx, depth| {
                        if idx.len() < 2 || p.max_depth.is_some_and(|md| depth >= md) {
                            return None;
                        }
                        let first = labels[idx[0]];
                        if idx.iter().all(|&i| labels[i] == first) {
                            return None;
                        }
                        let features = index::sample(&mut r, d, m).into_vec();
                        best_gini_split(rows, labels, idx, &features, n_classes)
                    },
                    |idx| {
                        let mut freq = vec![0.0; n_classes];
                        for &i in idx {
                            freq[labels[i]] += 1.0;
                        }
                        freq.iter_mut().for_each(|f| *f /= idx.len() as f64);
                        freq
                    },
                )
            })
            .collect();
        Ok(RandomForest { n_classes, trees })
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn predict_proba(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|row| {
                let mut acc = vec![0.0; self.n_classes];
                for t in &self.trees {
                    for (a, f) in acc.iter_mut().zip(t.leaf(row)) {
                        *a += f;
                    }
                }
                acc.iter_mut().for_each(|a| *a /= self.trees.len() as f64);
                acc
            })
            .collect()
    }
}
