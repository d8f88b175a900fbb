use crate::error::{Error, Result};
use crate::model::Parameters;
use crate::tensor::Real;

/// Hyperparameters of a bias-corrected Adam update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments shaped like the parameters, plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Real = f32> {
    pub m: Parameters<T>,
    pub v: Parameters<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &Parameters<T>) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One Adam update in place. Gradients are checked for finiteness before
/// anything is modified.
pub fn adam_step<T: Real>(
    params: &mut Parameters<T>,
    grads: &Parameters<T>,
    state: &mut AdamState<T>,
    lr: f64,
    hyper: &AdamHyper,
) -> Result<()> {
    if grads.specs() != params.specs() || state.m.specs() != params.specs() {
        return Err(Error::Contract("adam_step: gradient or state layout differs from parameters".into()));
    }
    for (spec, layer) in grads.specs().iter().zip(grads.layers()) {
        if !layer.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite gradient in group {} (layer {})",
                spec.group.name(),
                spec.name()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(hyper.beta1), T::lit(hyper.beta2));
    let (one_b1, one_b2) = (T::lit(1.0 - hyper.beta1), T::lit(1.0 - hyper.beta2));
    let bc1 = T::lit(1.0 - hyper.beta1.powi(t));
    let bc2 = T::lit(1.0 - hyper.beta2.powi(t));
    let (lr, eps) = (T::lit(lr), T::lit(hyper.eps));

    let p = params.slices_mut();
    let g = grads.slices();
    let m = state.m.slices_mut();
    let v = state.v.slices_mut();
    for (((p, g), m), v) in p.into_iter().zip(g).zip(m).zip(v) {
        for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
