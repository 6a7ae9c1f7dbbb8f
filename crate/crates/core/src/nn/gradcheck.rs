use super::loss::{weighted_ce, LossSpec};
use super::model::{Mode, Model};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `(parameter tensor, element)` with the largest error.
    pub worst: (usize, usize),
    pub n_checked: usize,
    /// Parameters whose step had to shrink to stay off a ReLU or pooling kink.
    pub n_refined: usize,
    /// Parameters sitting on a kink at every step tried; the loss is not
    /// differentiable there, so they are excluded from `max_rel_error`.
    pub n_undefined: usize,
}

/// Tenfold step reductions tried when a perturbation crosses a kink.
const MAX_REFINEMENTS: usize = 4;

/// Compares analytic gradients against central differences over every
/// parameter, dropout disabled.
///
/// Relative error is `|g_a − g_n| / max(1e-8, |g_a| + |g_n|)`. When `±eps`
/// flips a ReLU or changes a pooling winner the difference quotient spans a
/// kink, so the step is shrunk tenfold until the activation pattern matches
/// the unperturbed one. Parameters still on a kink at `eps * 1e-4` are
/// counted in `n_undefined` instead.
pub fn grad_check(model: &Model, batch: &Tensor, labels: &[usize], spec: &LossSpec, eps: f64) -> Result<GradCheck> {
    if let [b, h, w, _] = batch.shape() {
        if *b > 4 || *h > 16 || *w > 16 {
            return Err(Error::invalid(format!(
                "gradient checks are limited to 4 samples of at most 16x16, got {:?}",
                batch.shape()
            )));
        }
    }
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::invalid(format!("eps must be positive, got {eps}")));
    }
    let mut r = rng::seeded(0);
    let (y, cache) = model.forward(batch, Mode::Eval, &mut r)?;
    let analytic = model.backward(&cache, &y, labels, spec)?;
    let pattern = cache.kink_pattern();

    let mut probe = model.clone();
    let mut loss_at = |probe: &mut Model, t: usize, i: usize, value: f64| -> Result<(f64, bool)> {
        probe.params_mut()[t].data_mut()[i] = value;
        let (y, cache) = probe.forward(batch, Mode::Eval, &mut r)?;
        Ok((weighted_ce(&y, labels, spec)?, cache.kink_pattern() == pattern))
    };

    let mut out = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0),
        n_checked: 0,
        n_refined: 0,
        n_undefined: 0,
    };
    for (t, grad) in analytic.iter().enumerate() {
        for i in 0..grad.len() {
            let orig = model.params()[t].data()[i];
            let mut h = eps;
            let mut refinements = 0;
            let numeric = loop {
                let (plus, same_plus) = loss_at(&mut probe, t, i, orig + h)?;
                let (minus, same_minus) = loss_at(&mut probe, t, i, orig - h)?;
                if same_plus && same_minus {
                    break Some((plus - minus) / (2.0 * h));
                }
                if refinements == MAX_REFINEMENTS {
                    break None;
                }
                h /= 10.0;
                refinements += 1;
            };
            probe.params_mut()[t].data_mut()[i] = orig;
            out.n_checked += 1;
            let Some(numeric) = numeric else {
                out.n_undefined += 1;
                continue;
            };
            if refinements > 0 {
                out.n_refined += 1;
            }
            let a = grad.data()[i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            if rel > out.max_rel_error {
                out.max_rel_error = rel;
                out.worst = (t, i);
            }
        }
    }
    Ok(out)
}
