use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// k-nearest-neighbour vote classifier with Euclidean distance.
///
/// Equal distances are ordered by training index; equal vote counts go to
/// the lower class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    k: usize,
    n_classes: usize,
    rows: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

impl Knn {
    pub fn fit(rows: &[Vec<f64>], labels: &[usize], n_classes: usize, k: usize) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::data("KNN needs a non-empty training set"));
        }
        if rows.len() != labels.len() {
            return Err(Error::invalid(format!("{} rows for {} labels", rows.len(), labels.len())));
        }
        if k == 0 || k > rows.len() {
            return Err(Error::invalid(format!("k = {k} must lie in 1..={}", rows.len())));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::invalid(format!("label {l} outside 0..{n_classes}")));
        }
        Ok(Knn {
            k,
            n_classes,
            rows: rows.to_vec(),
            labels: labels.to_vec(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Vote fractions of the `k` nearest training rows.
    pub fn votes(&self, query: &[f64]) -> Vec<f64> {
        let mut dist: Vec<(f64, usize)> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
            .collect();
        let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < dist.len() {
            dist.select_nth_unstable_by(self.k - 1, by_distance);
        }
        let mut counts = vec![0usize; self.n_classes];
        for &(_, i) in &dist[..self.k] {
            counts[self.labels[i]] += 1;
        }
        counts.into_iter().map(|c| c as f64 / self.k as f64).collect()
    }

    pub fn predict_proba(&self, queries: &[Vec<f64>]) -> Vec<Vec<f64>> {
        queries.iter().map(|q| self.votes(q)).collect()
    }
}
