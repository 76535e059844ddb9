//! SGD with momentum and decoupled-from-bias weight decay.

use acnet_tensor::{Element, Tensor};

use crate::params::ParamStore;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// One update of a single tensor:
/// `g = grad + wd·w` (when `decays`), `v = m·v + g`, `w = w − lr·v`.
pub fn sgd_update<T: Element>(
    w: &mut Tensor<T>,
    grad: &Tensor<T>,
    velocity: &mut Tensor<T>,
    cfg: SgdConfig,
    decays: bool,
) -> Result<()> {
    if grad.shape() != w.shape() || velocity.shape() != w.shape() {
        return Err(Error::Shape(format!(
            "param {:?}, grad {:?}, velocity {:?}",
            w.shape(),
            grad.shape(),
            velocity.shape()
        )));
    }
    let (lr, m) = (T::from_f64(cfg.lr), T::from_f64(cfg.momentum));
    let wd = T::from_f64(if decays { cfg.weight_decay } else { 0.0 });
    for ((wi, &gi), vi) in w.data_mut().iter_mut().zip(grad.data()).zip(velocity.data_mut()) {
        let g = gi + wd * *wi;
        *vi = m * *vi + g;
        *wi = *wi - lr * *vi;
    }
    Ok(())
}

/// Updates every parameter of `store`. A missing gradient counts as zero
/// (weight decay and momentum still apply).
pub fn sgd_step<T: Element>(
    store: &mut ParamStore<T>,
    grads: &[Option<Tensor<T>>],
    velocity: &mut [Tensor<T>],
    cfg: SgdConfig,
) -> Result<()> {
    let n = store.params().len();
    if grads.len() != n || velocity.len() != n {
        return Err(Error::Shape(format!(
            "{n} parameters, {} gradients, {} velocity buffers",
            grads.len(),
            velocity.len()
        )));
    }
    for ((p, g), v) in store.params_mut().iter_mut().zip(grads).zip(velocity.iter_mut()) {
        let zero;
        let g = match g {
            Some(g) => g,
            None => {
                zero = Tensor::zeros_like(&p.value);
                &zero
            }
        };
        sgd_update(&mut p.value, g, v, cfg, p.kind.decays())
            .map_err(|e| Error::Shape(format!("{}: {e}", p.name)))?;
    }
    Ok(())
}

/// Zero velocity buffers matching `store`.
pub fn zero_velocity<T: Element>(store: &ParamStore<T>) -> Vec<Tensor<T>> {
    store.params().iter().map(|p| Tensor::zeros_like(&p.value)).collect()
}
