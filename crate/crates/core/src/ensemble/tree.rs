//! Binary decision trees shared by the forest (Gini) and boosting
//! (least-squares) learners.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Node<L> {
    Leaf(L),
    /// Rows with `row[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree<L> {
    pub nodes: Vec<Node<L>>,
}

impl<L> Tree<L> {
    pub fn leaf(&self, row: &[f64]) -> &L {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Split {
    pub feature: usize,
    pub threshold: f64,
    /// Impurity decrease; always positive.
    pub gain: f64,
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m >= b {
        a
    } else {
        m
    }
}

fn sorted_by(x: &[Vec<f64>], idx: &[usize], feature: usize) -> Vec<usize> {
    let mut order = idx.to_vec();
    order.sort_by(|&a, &b| x[a][feature].total_cmp(&x[b][feature]).then(a.cmp(&b)));
    order
}

const MIN_GAIN: f64 = 1e-12;

/// Split minimizing the summed weighted Gini impurity `n - Σ count² / n`.
pub(crate) fn best_gini_split(x: &[Vec<f64>], y: &[usize], idx: &[usize], features: &[usize], n_classes: usize) -> Option<Split> {
    let weighted = |counts: &[usize], n: usize| -> f64 {
        if n == 0 {
            return 0.0;
        }
        let sq: f64 = counts.iter().map(|&c| (c * c) as f64).sum();
        n as f64 - sq / n as f64
    };
    let mut total = vec![0usize; n_classes];
    for &i in idx {
        total[y[i]] += 1;
    }
    let parent = weighted(&total, idx.len());
    let mut best: Option<Split> = None;
    for &f in features {
        let order = sorted_by(x, idx, f);
        let mut left = vec![0usize; n_classes];
        let mut right = total.clone();
        for k in 0..order.len() - 1 {
            let c = y[order[k]];
            left[c] += 1;
            right[c] -= 1;
            let (a, b) = (x[order[k]][f], x[order[k + 1]][f]);
            if a == b {
                continue;
            }
            let nl = k + 1;
            let gain = parent - weighted(&left, nl) - weighted(&right, order.len() - nl);
            if gain > MIN_GAIN && best.is_none_or(|s| gain > s.gain) {
                best = Some(Split {
                    feature: f,
                    threshold: midpoint(a, b),
                    gain,
                });
            }
        }
    }
    best
}

/// Split maximizing the least-squares reduction `S_L²/n_L + S_R²/n_R − S²/n`.
pub(crate) fn best_ls_split(x: &[Vec<f64>], target: &[f64], idx: &[usize], features: &[usize]) -> Option<Split> {
    let total: f64 = idx.iter().map(|&i| target[i]).sum();
    let n = idx.len() as f64;
    let parent = total * total / n;
    let mut best: Option<Split> = None;
    for &f in features {
        let order = sorted_by(x, idx, f);
        let mut left = 0.0;
        for k in 0..order.len() - 1 {
            left += target[order[k]];
            let (a, b) = (x[order[k]][f], x[order[k + 1]][f]);
            if a == b {
                continue;
            }
            let nl = (k + 1) as f64;
            let right = total - left;
            let gain = left * left / nl + right * right / (n - nl) - parent;
            if gain > MIN_GAIN && best.is_none_or(|s| gain > s.gain) {
                best = Some(Split {
                    feature: f,
                    threshold: midpoint(a, b),
                    gain,
                });
            }
        }
    }
    best
}

/// Grows a tree depth-first. `choose` proposes a split for a node's rows at
/// a given depth (or `None` for a leaf), and `make_leaf` summarizes rows.
pub(crate) fn grow<L>(
    x: &[Vec<f64>],
    root: Vec<usize>,
    mut choose: impl FnMut(&[usize], usize) -> Option<Split>,
    mut make_leaf: impl FnMut(&[usize]) -> L,
) -> Tree<L> {
    let mut nodes: Vec<Option<Node<L>>> = vec![None];
    let mut stack = vec![(0usize, root, 0usize)];
    while let Some((slot, idx, depth)) = stack.pop() {
        match choose(&idx, depth) {
            Some(s) => {
                let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x[i][s.feature] <= s.threshold);
                let left = nodes.len();
                nodes.push(None);
                nodes.push(None);
                nodes[slot] = Some(Node::Split {
                    feature: s.feature,
                    threshold: s.threshold,
                    left,
                    right: left + 1,
                });
                stack.push((left + 1, r, depth + 1));
                stack.push((left, l, depth + 1));
            }
            None => nodes[slot] = Some(Node::Leaf(make_leaf(&idx))),
        }
    }
    Tree {
        nodes: nodes.into_iter().map(|n| n.expect("every slot is filled")).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gini_finds_separating_threshold() {
        let x: Vec<Vec<f64>> = [0.1, 0.2, 0.3, 0.7, 0.8].iter().map(|&v| vec![v, 0.0]).collect();
        let y = [0, 0, 0, 1, 1];
        let s = best_gini_split(&x, &y, &[0, 1, 2, 3, 4], &[0, 1], 2).unwrap();
        assert_eq!(s.feature, 0);
        assert!((s.threshold - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ls_split_on_step_target() {
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64]).collect();
        let t = [1.0, 1.0, 1.0, -1.0, -1.0, -1.0];
        let s = best_ls_split(&x, &t, &[0, 1, 2, 3, 4, 5], &[0]).unwrap();
        assert_eq!(s.threshold, 2.5);
    }

    #[test]
    fn constant_feature_yields_no_split() {
        let x = vec![vec![1.0]; 4];
        assert!(best_gini_split(&x, &[0, 1, 0, 1], &[0, 1, 2, 3], &[0], 2).is_none());
    }

    #[test]
    fn midpoint_of_adjacent_floats_stays_below_upper() {
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let m = midpoint(a, b);
        assert!(a <= m && m < b);
    }
}
