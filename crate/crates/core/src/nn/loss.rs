use serde::{Deserialize, Serialize};

use super::model::OutputKind;
use crate::dataset::ClassWeights;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before the log.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Categorical,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub weights: ClassWeights,
}

impl LossSpec {
    pub fn new(kind: LossKind, weights: ClassWeights) -> Result<Self> {
        let spec = LossSpec { kind, weights };
        spec.validate()?;
        Ok(spec)
    }

    pub fn categorical(weights: ClassWeights) -> Result<Self> {
        Self::new(LossKind::Categorical, weights)
    }

    pub fn binary(weights: ClassWeights) -> Result<Self> {
        Self::new(LossKind::Binary, weights)
    }

    /// Loss matching an output head with the given weights.
    pub fn for_head(head: OutputKind, weights: ClassWeights) -> Result<Self> {
        match head {
            OutputKind::Softmax(_) => Self::categorical(weights),
            OutputKind::Sigmoid => Self::binary(weights),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.weights.len();
        match self.kind {
            LossKind::Categorical if n < 2 => {
                return Err(Error::invalid(format!("categorical loss needs >= 2 class weights, got {n}")))
            }
            LossKind::Binary if n != 2 => {
                return Err(Error::invalid(format!("binary loss needs exactly 2 class weights, got {n}")))
            }
            _ => {}
        }
        if self.weights.as_slice().iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid(format!("class weights must be finite and non-negative: {:?}", self.weights)));
        }
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.weights.len()
    }

    pub(crate) fn check_head(&self, head: OutputKind) -> Result<()> {
        let ok = match (self.kind, head) {
            (LossKind::Categorical, OutputKind::Softmax(n)) => n == self.weights.len(),
            (LossKind::Binary, OutputKind::Sigmoid) => true,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "{:?} loss with {} weights does not fit a {head:?} head",
                self.kind,
                self.weights.len()
            )))
        }
    }

    fn check_labels(&self, y: &Tensor, labels: &[usize]) -> Result<()> {
        let width = match self.kind {
            LossKind::Categorical => self.weights.len(),
            LossKind::Binary => 1,
        };
        if y.shape() != [labels.len(), width] {
            return Err(Error::shape("loss", format!("({}, {width})", labels.len()), format!("{:?}", y.shape())));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= self.weights.len()) {
            return Err(Error::invalid(format!("label {l} out of range for {} classes", self.weights.len())));
        }
        Ok(())
    }

    /// Per-sample losses: `-α_true · ln ŷ_true` (categorical) or
    /// `-(α₁·y·ln p + α₀·(1-y)·ln(1-p))` (binary).
    pub fn per_sample(&self, y: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
        self.check_labels(y, labels)?;
        let a = self.weights.as_slice();
        let clamp = |p: f64| p.clamp(PROB_EPS, 1.0 - PROB_EPS);
        Ok(labels
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let row = y.outer(i);
                match self.kind {
                    LossKind::Categorical => -a[t] * clamp(row[t]).ln(),
                    LossKind::Binary => {
                        let p = clamp(row[0]);
                        if t == 1 {
                            -a[1] * p.ln()
                        } else {
                            -a[0] * (1.0 - p).ln()
                        }
                    }
                }
            })
            .collect())
    }

    /// Gradient of the mean loss with respect to the pre-activation logits.
    ///
    /// Uses the fused softmax/sigmoid identities, so the clamp does not cut
    /// the gradient.
    pub(crate) fn output_gradient(&self, y: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
        self.check_labels(y, labels)?;
        let a = self.weights.as_slice();
        let scale = 1.0 / labels.len() as f64;
        let mut out = Vec::with_capacity(y.len());
        for (i, &t) in labels.iter().enumerate() {
            let row = y.outer(i);
            match self.kind {
                LossKind::Categorical => {
                    for (c, &p) in row.iter().enumerate() {
                        let onehot = if c == t { 1.0 } else { 0.0 };
                        out.push(scale * a[t] * (p - onehot));
                    }
                }
                LossKind::Binary => {
                    let p = row[0];
                    let g = if t == 1 { -a[1] * (1.0 - p) } else { a[0] * p };
                    out.push(scale * g);
                }
            }
        }
        Ok(out)
    }
}

/// Mean class-weighted cross-entropy of a batch.
pub fn weighted_ce(y: &Tensor, labels: &[usize], spec: &LossSpec) -> Result<f64> {
    let losses = spec.per_sample(y, labels)?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cat(weights: &[f64]) -> LossSpec {
        LossSpec::categorical(ClassWeights(weights.to_vec())).unwrap()
    }

    #[test]
    fn reference_value() {
        let y = Tensor::new(vec![1, 3], vec![0.7, 0.2, 0.1]).unwrap();
        let l = weighted_ce(&y, &[0], &cat(&[1.0; 3])).unwrap();
        assert!((l - 0.356_674_943_938_732_4).abs() < 1e-12, "{l}");
    }

    #[test]
    fn linear_in_weights() {
        let y = Tensor::new(vec![2, 3], vec![0.7, 0.2, 0.1, 0.3, 0.3, 0.4]).unwrap();
        let one = weighted_ce(&y, &[0, 2], &cat(&[1.0, 0.5, 3.0])).unwrap();
        let two = weighted_ce(&y, &[0, 2], &cat(&[2.0, 1.0, 6.0])).unwrap();
        assert_eq!(two, 2.0 * one);
    }

    #[test]
    fn near_perfect_prediction() {
        let y = Tensor::new(vec![1, 2], vec![1.0 - 1e-12, 1e-12]).unwrap();
        let l = weighted_ce(&y, &[0], &cat(&[1.0, 1.0])).unwrap();
        assert!((0.0..=2e-12).contains(&l), "{l}");
    }

    #[test]
    fn clamps_zero_probability() {
        let y = Tensor::new(vec![1, 2], vec![0.0, 1.0]).unwrap();
        let l = weighted_ce(&y, &[0], &cat(&[1.0, 1.0])).unwrap();
        assert!((l - (-(1e-12f64).ln())).abs() < 1e-9);
    }

    #[test]
    fn binary_weights_hit_their_terms() {
        let spec = LossSpec::binary(ClassWeights(vec![0.5, 2.5])).unwrap();
        let y = Tensor::new(vec![2, 1], vec![0.8, 0.8]).unwrap();
        let l = spec.per_sample(&y, &[1, 0]).unwrap();
        assert!((l[0] - (-2.5 * 0.8f64.ln())).abs() < 1e-15);
        assert!((l[1] - (-0.5 * 0.2f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn invalid_specs_and_labels() {
        assert!(LossSpec::binary(ClassWeights(vec![1.0; 3])).is_err());
        assert!(LossSpec::categorical(ClassWeights(vec![1.0])).is_err());
        let y = Tensor::new(vec![1, 3], vec![0.7, 0.2, 0.1]).unwrap();
        assert!(weighted_ce(&y, &[3], &cat(&[1.0; 3])).is_err());
    }
}
