use super::model::{Gradients, Model};
use crate::error::{bail, Result};
use crate::tensor::Tensor;

/// Outcome of a finite-difference gradient check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    /// `(parameter, value slot)` of the worst weight.
    pub worst: (usize, usize),
    /// Number of weights compared.
    pub checked: usize,
}

/// Relative error with a floor on the denominator, so that gradients that
/// are zero on both sides compare as exact.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let scale = libm::fabs(analytic).max(libm::fabs(numeric)).max(1e-6);
    libm::fabs(analytic - numeric) / scale
}

/// Compares the model's analytic weight gradients on one batch against
/// central finite differences of the loss over every active weight.
pub fn fd_check(model: &Model, x: &Tensor, labels: &[usize], eps: f64) -> Result<FdReport> {
    let grads = model.loss_grad(x, labels)?.grads;
    fd_check_against(model, x, labels, eps, &grads)
}

/// Like [`fd_check`] but against caller-supplied gradients (used to check
/// that the oracle notices a corrupted gradient).
pub fn fd_check_against(model: &Model, x: &Tensor, labels: &[usize], eps: f64, grads: &Gradients) -> Result<FdReport> {
    if !(1e-7..=1e-3).contains(&eps) {
        bail!(Config, "finite-difference step {} outside [1e-7, 1e-3]", eps);
    }
    if grads.weights.len() != model.params().len() {
        bail!(Shape, "gradients for {} layers, model has {}", grads.weights.len(), model.params().len());
    }
    let mut probe = model.clone();
    let mut report = FdReport { max_rel_error: 0.0, worst: (0, 0), checked: 0 };
    for p in 0..model.params().len() {
        let n = model.params()[p].weights.values().len();
        if grads.weights[p].len() != n {
            bail!(Shape, "gradient of layer {} has {} entries for {} weights", p, grads.weights[p].len(), n);
        }
        for slot in 0..n {
            let w0 = model.params()[p].weights.values()[slot];
            probe.params_mut()[p].weights.values_mut()[slot] = w0 + eps;
            let up = probe.loss(x, labels)?;
            probe.params_mut()[p].weights.values_mut()[slot] = w0 - eps;
            let down = probe.loss(x, labels)?;
            probe.params_mut()[p].weights.values_mut()[slot] = w0;
            let numeric = (up - down) / (2.0 * eps);
            if !numeric.is_finite() {
                bail!(Numeric, "non-finite finite difference at layer {} slot {}", p, slot);
            }
            let err = rel_error(grads.weights[p][slot], numeric);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (p, slot);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use alloc::vec;

    use super::*;
    use crate::nn::{FeatureShape, LayerSpec};

    fn two_layer() -> Model {
        let layers = vec![
            LayerSpec::conv(3, 1, 3, 0),
            LayerSpec::Relu,
            LayerSpec::fc(3 * 3 * 3, 2),
            LayerSpec::SoftmaxXent,
        ];
        let mut m = Model::new(FeatureShape::new(1, 5, 5), layers).unwrap();
        m.init(11);
        m
    }

    #[test]
    fn two_layer_net_passes() {
        let m = two_layer();
        let x = Tensor::from_fn(&[1, 2, 5, 5], |i| libm::sin(i as f64 * 1.3));
        let r = fd_check(&m, &x, &[0, 1], 1e-5).unwrap();
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
        assert_eq!(r.checked, 27 + 54);
    }

    #[test]
    fn dead_relus_give_zero_on_both_sides() {
        let m = two_layer();
        let x = Tensor::zeros(&[1, 2, 5, 5]);
        let out = m.loss_grad(&x, &[0, 1]).unwrap();
        assert!(out.grads.weights.iter().flatten().all(|&g| g == 0.0));
        let r = fd_check(&m, &x, &[0, 1], 1e-5).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let m = two_layer();
        let x = Tensor::from_fn(&[1, 2, 5, 5], |i| libm::sin(i as f64 * 1.3));
        let mut grads = m.loss_grad(&x, &[0, 1]).unwrap().grads;
        grads.weights[1][7] += 0.1;
        let r = fd_check_against(&m, &x, &[0, 1], 1e-5, &grads).unwrap();
        assert!(r.max_rel_error > 1e-2);
        assert_eq!(r.worst, (1, 7));
    }

    #[test]
    fn step_outside_range_is_rejected() {
        let m = two_layer();
        let x = Tensor::zeros(&[1, 1, 5, 5]);
        assert!(fd_check(&m, &x, &[0], 1e-2).is_err());
    }
}
