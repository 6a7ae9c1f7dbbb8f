use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// SGD with momentum: `v ← β·v + α·g`, then `w ← w − v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdMomentum {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Tensor>,
}

impl SgdMomentum {
    /// Zero velocity shaped like `params`.
    pub fn new(params: &[Tensor], lr: f64, momentum: f64) -> Result<Self> {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        Ok(SgdMomentum {
            lr,
            momentum,
            velocity: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        })
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.velocity.len() || grads.len() != self.velocity.len() {
            return Err(Error::shape(
                "sgd",
                format!("{} parameter tensors", self.velocity.len()),
                format!("{} params / {} grads", params.len(), grads.len()),
            ));
        }
        for (i, ((p, g), v)) in params.iter_mut().zip(grads).zip(&mut self.velocity).enumerate() {
            if p.shape() != v.shape() || g.shape() != v.shape() {
                return Err(Error::shape(
                    format!("sgd param {i}"),
                    format!("{:?}", v.shape()),
                    format!("param {:?}, grad {:?}", p.shape(), g.shape()),
                ));
            }
            for ((w, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vv = self.momentum * *vv + self.lr * gv;
                *w -= *vv;
            }
        }
        Ok(())
    }
}
