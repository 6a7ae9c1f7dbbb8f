//! Accuracy, balanced accuracy, ROC AUC and confusion matrices.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pair(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::invalid("metrics need at least one sample"));
    }
    Ok(())
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_pair(pred, truth)?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// `matrix[t][p]` counts samples of true class `t` predicted as `p`.
pub fn confusion(pred: &[usize], truth: &[usize], n_classes: usize) -> Result<Vec<Vec<u64>>> {
    check_pair(pred, truth)?;
    let mut m = vec![vec![0u64; n_classes]; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= n_classes || t >= n_classes {
            return Err(Error::invalid(format!("label out of range 0..{n_classes}: pred {p}, truth {t}")));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// Mean per-class recall. Every class must occur in `truth`.
pub fn balanced_accuracy(pred: &[usize], truth: &[usize], n_classes: usize) -> Result<f64> {
    let m = confusion(pred, truth, n_classes)?;
    let mut sum = 0.0;
    for (c, row) in m.iter().enumerate() {
        let support: u64 = row.iter().sum();
        if support == 0 {
            return Err(Error::invalid(format!("class {c} absent from truth; recall undefined")));
        }
        sum += row[c] as f64 / support as f64;
    }
    Ok(sum / n_classes as f64)
}

/// Area under the ROC curve via the Mann–Whitney rank statistic.
///
/// Ties contribute one half. Ranks are kept doubled so the statistic stays an
/// integer until the final division.
pub fn auc_binary(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::invalid(format!(
            "{} scores for {} labels",
            scores.len(),
            positive.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    let n_pos = positive.iter().filter(|&&p| p).count() as u128;
    let n_neg = positive.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("AUC needs both positive and negative samples"));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut pos_rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Shared rank of positions i..j (1-based) is (i + 1 + j) / 2.
        let doubled_rank = (i + 1 + j) as u128;
        let pos_in_group = order[i..j].iter().filter(|&&k| positive[k]).count() as u128;
        pos_rank_sum2 += doubled_rank * pos_in_group;
        i = j;
    }
    let u2 = pos_rank_sum2 - n_pos * (n_pos + 1);
    Ok(u2 as f64 / (2 * n_pos * n_neg) as f64)
}

/// Unweighted mean of one-vs-rest AUCs over the class columns of `probs`.
pub fn auc_macro_ovr(probs: &[Vec<f64>], truth: &[usize], n_classes: usize) -> Result<f64> {
    if probs.len() != truth.len() {
        return Err(Error::invalid(format!("{} rows for {} labels", probs.len(), truth.len())));
    }
    let mut total = 0.0;
    for c in 0..n_classes {
        let scores: Vec<f64> = probs
            .iter()
            .map(|row| {
                row.get(c)
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("probability row shorter than {n_classes}")))
            })
            .collect::<Result<_>>()?;
        let is_c: Vec<bool> = truth.iter().map(|&t| t == c).collect();
        total += auc_binary(&scores, &is_c)?;
    }
    Ok(total / n_classes as f64)
}

/// AUC for a probability matrix: binary uses the class-1 column, otherwise
/// macro one-vs-rest.
pub fn auc(probs: &[Vec<f64>], truth: &[usize], n_classes: usize) -> Result<f64> {
    if n_classes == 2 {
        let scores: Vec<f64> = probs.iter().map(|r| r[1]).collect();
        let pos: Vec<bool> = truth.iter().map(|&t| t == 1).collect();
        auc_binary(&scores, &pos)
    } else {
        auc_macro_ovr(probs, truth, n_classes)
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Figures of merit for one (model, split) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub split: String,
    pub n_samples: usize,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub auc: f64,
    pub confusion: Vec<Vec<u64>>,
}

impl EvalReport {
    /// Builds a report from class probabilities; predictions are row argmaxes.
    pub fn from_probs(model: &str, split: &str, probs: &[Vec<f64>], truth: &[usize], n_classes: usize) -> Result<Self> {
        let pred: Vec<usize> = probs.iter().map(|r| argmax(r)).collect();
        Ok(EvalReport {
            model: model.to_string(),
            split: split.to_string(),
            n_samples: truth.len(),
            accuracy: accuracy(&pred, truth)?,
            balanced_accuracy: balanced_accuracy(&pred, truth, n_classes)?,
            auc: auc(probs, truth, n_classes)?,
            confusion: confusion(&pred, truth, n_classes)?,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.confusion.len()
    }
}

#[derive(Serialize, Deserialize)]
struct ReportRow {
    model: String,
    split: String,
    n_samples: usize,
    accuracy: f64,
    balanced_accuracy: f64,
    auc: f64,
    /// Row-major confusion counts joined by spaces.
    confusion: String,
}

/// Writes one CSV row per report.
pub fn write_reports_csv(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in reports {
        let confusion = r
            .confusion
            .iter()
            .map(|row| row.iter().map(u64::to_string).collect::<Vec<_>>().join(" "))
            .collect::<Vec<_>>()
            .join(" | ");
        w.serialize(ReportRow {
            model: r.model.clone(),
            split: r.split.clone(),
            n_samples: r.n_samples,
            accuracy: r.accuracy,
            balanced_accuracy: r.balanced_accuracy,
            auc: r.auc,
            confusion,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_reports_csv(path: &Path) -> Result<Vec<EvalReport>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in rdr.deserialize::<ReportRow>() {
        let row = row?;
        let confusion = row
            .confusion
            .split('|')
            .map(|r| {
                r.split_whitespace()
                    .map(|v| v.parse::<u64>().map_err(|e| Error::data(format!("bad confusion entry {v:?}: {e}"))))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(EvalReport {
            model: row.model,
            split: row.split,
            n_samples: row.n_samples,
            accuracy: row.accuracy,
            balanced_accuracy: row.balanced_accuracy,
            auc: row.auc,
            confusion,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 1, 2, 2], &[0, 1, 1, 2]).unwrap(), 0.75);
        assert_eq!(accuracy(&[1, 0], &[0, 1]).unwrap(), 0.0);
        assert!(accuracy(&[], &[]).is_err());
        assert!(accuracy(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn balanced_accuracy_examples() {
        assert_eq!(balanced_accuracy(&[0, 1, 1], &[0, 1, 1], 2).unwrap(), 1.0);
        // confusion [[8,2],[4,6]]
        let truth: Vec<usize> = [vec![0; 10], vec![1; 10]].concat();
        let pred: Vec<usize> = [vec![0; 8], vec![1; 2], vec![0; 4], vec![1; 6]].concat();
        assert!((balanced_accuracy(&pred, &truth, 2).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(balanced_accuracy(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap(), 0.5);
        assert!(balanced_accuracy(&[0, 0], &[0, 0], 2).is_err());
    }

    #[test]
    fn auc_examples() {
        let auc = |pos: &[f64], neg: &[f64]| {
            let scores = [pos, neg].concat();
            let labels: Vec<bool> = pos.iter().map(|_| true).chain(neg.iter().map(|_| false)).collect();
            auc_binary(&scores, &labels).unwrap()
        };
        assert_eq!(auc(&[0.9, 0.8], &[0.2, 0.1]), 1.0);
        assert_eq!(auc(&[0.4, 0.4], &[0.4, 0.4, 0.4]), 0.5);
        assert_eq!(auc(&[0.8, 0.3], &[0.5, 0.1]), 0.75);
        assert!(auc_binary(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn macro_auc_examples() {
        let truth = [0, 1, 2, 0, 1, 2];
        let onehot: Vec<Vec<f64>> = truth
            .iter()
            .map(|&t| (0..3).map(|c| if c == t { 1.0 } else { 0.0 }).collect())
            .collect();
        assert_eq!(auc_macro_ovr(&onehot, &truth, 3).unwrap(), 1.0);
        let uniform = vec![vec![1.0 / 3.0; 3]; 6];
        assert_eq!(auc_macro_ovr(&uniform, &truth, 3).unwrap(), 0.5);
    }

    #[test]
    fn confusion_examples() {
        assert_eq!(confusion(&[1, 1], &[0, 1], 2).unwrap(), vec![vec![0, 1], vec![0, 1]]);
        let m = confusion(&[0, 1, 1, 2], &[0, 1, 1, 2], 3).unwrap();
        assert_eq!(m, vec![vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 1]]);
        assert!(confusion(&[3], &[0], 3).is_err());
    }

    #[test]
    fn report_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let probs = vec![vec![0.7, 0.3], vec![0.2, 0.8], vec![0.6, 0.4], vec![0.45, 0.55]];
        let truth = [0, 1, 1, 0];
        let r = EvalReport::from_probs("m", "test", &probs, &truth, 2).unwrap();
        let path = dir.path().join("r.csv");
        write_reports_csv(&path, &[r.clone(), r.clone()]).unwrap();
        assert_eq!(read_reports_csv(&path).unwrap(), vec![r.clone(), r]);
    }
}
