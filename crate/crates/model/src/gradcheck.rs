//! Central finite-difference check of the analytic gradients.

use crate::error::Result;
use crate::model::Model;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// `|a - f| / max(|a|, |f|, floor)` over every trainable scalar, with the
/// difference quotient taken at step `h`.
pub fn check_gradients<W: AsRef<[f64]>>(
    model: &Model,
    windows: &[W],
    targets: &[usize],
    h: f64,
    floor: f64,
) -> Result<GradCheck> {
    let (_, grads) = model.loss_and_grad(windows, targets)?;
    let mut probe = model.clone();
    let mut out = GradCheck { max_rel_error: 0.0, worst: None, checked: 0 };
    for (name, g) in grads.named() {
        for (i, &analytic) in g.iter().enumerate() {
            let orig = probe.trainable_mut(&name)?.data()[i];
            probe.trainable_mut(&name)?.data_mut()[i] = orig + h;
            let plus = probe.loss_and_grad(windows, targets)?.0;
            probe.trainable_mut(&name)?.data_mut()[i] = orig - h;
            let minus = probe.loss_and_grad(windows, targets)?.0;
            probe.trainable_mut(&name)?.data_mut()[i] = orig;
            let fd = (plus - minus) / (2.0 * h);
            let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(floor);
            out.checked += 1;
            if rel > out.max_rel_error {
                out.max_rel_error = rel;
                out.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(out)
}
