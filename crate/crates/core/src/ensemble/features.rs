use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Concatenated base-learner class probabilities, one row per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedFeatures {
    pub rows: Vec<Vec<f64>>,
    pub base_order: Vec<String>,
    pub n_classes: usize,
}

impl StackedFeatures {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn width(&self) -> usize {
        self.base_order.len() * self.n_classes
    }

    /// Columns belonging to the `b`-th base learner.
    pub fn block(&self, b: usize) -> Vec<Vec<f64>> {
        let c = self.n_classes;
        self.rows.iter().map(|r| r[b * c..(b + 1) * c].to_vec()).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> StackedFeatures {
        StackedFeatures {
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            base_order: self.base_order.clone(),
            n_classes: self.n_classes,
        }
    }
}

/// Concatenates per-learner `N x C` probability matrices in `base_order`.
pub fn stack_features(prob_matrices: &[Vec<Vec<f64>>], base_order: &[String]) -> Result<StackedFeatures> {
    if prob_matrices.is_empty() || prob_matrices.len() != base_order.len() {
        return Err(Error::invalid(format!(
            "{} probability matrices for {} base learners",
            prob_matrices.len(),
            base_order.len()
        )));
    }
    let n = prob_matrices[0].len();
    let c = prob_matrices[0].first().map_or(0, Vec::len);
    if c == 0 {
        return Err(Error::invalid("probability matrices must have at least one row and column"));
    }
    for (m, id) in prob_matrices.iter().zip(base_order) {
        if m.len() != n || m.iter().any(|r| r.len() != c) {
            return Err(Error::shape(format!("stack/{id}"), format!("{n} x {c}"), format!("{} rows", m.len())));
        }
    }
    let rows = (0..n)
        .map(|i| prob_matrices.iter().flat_map(|m| m[i].iter().copied()).collect())
        .collect();
    Ok(StackedFeatures {
        rows,
        base_order: base_order.to_vec(),
        n_classes: c,
    })
}

/// Base learners whose test accuracy exceeds `threshold`, best first.
pub fn select_base_learners(test_accuracies: &[(String, f64)], threshold: f64) -> Result<Vec<String>> {
    if test_accuracies.is_empty() {
        return Err(Error::invalid("no base learners to select from"));
    }
    let mut kept: Vec<&(String, f64)> = test_accuracies.iter().filter(|(_, a)| *a > threshold).collect();
    if kept.is_empty() {
        return Err(Error::data(format!(
            "no base learner exceeds the accuracy threshold {threshold}; lower the threshold or improve the base models"
        )));
    }
    kept.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(kept.into_iter().map(|(id, _)| id.clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn accs(v: &[(&str, f64)]) -> Vec<(String, f64)> {
        v.iter().map(|(k, a)| (k.to_string(), *a)).collect()
    }

    #[test]
    fn selection_examples() {
        let table = accs(&[("A", 0.673), ("B", 0.631), ("C", 0.575), ("D", 0.327), ("E", 0.03), ("F", 0.258)]);
        assert_eq!(select_base_learners(&table, 0.5).unwrap(), vec!["A", "B", "C"]);
        assert!(select_base_learners(&table, 0.9).is_err());
        assert_eq!(select_base_learners(&table, 0.0).unwrap(), vec!["A", "B", "C", "D", "F", "E"]);
    }

    #[test]
    fn stacking_layout() {
        let a = vec![vec![0.1, 0.9], vec![0.6, 0.4]];
        let b = vec![vec![0.3, 0.7], vec![0.5, 0.5]];
        let ids = vec!["a".to_string(), "b".to_string()];
        let s = stack_features(&[a.clone(), b.clone()], &ids).unwrap();
        assert_eq!(s.width(), 4);
        assert_eq!(s.rows[0], vec![0.1, 0.9, 0.3, 0.7]);
        assert_eq!(s.block(0), a);
        assert_eq!(s.block(1), b);

        let single = stack_features(std::slice::from_ref(&a), &ids[..1]).unwrap();
        assert_eq!(single.rows, a);

        let swapped = stack_features(&[b.clone(), a.clone()], &["b".into(), "a".into()]).unwrap();
        assert_eq!(swapped.block(0), s.block(1));
        assert_eq!(swapped.block(1), s.block(0));

        assert!(stack_features(&[a, vec![vec![0.5, 0.5]]], &ids).is_err());
    }
}
