//! Plain SGD with optional global-norm clipping.

use std::borrow::BorrowMut;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub clip_norm: Option<f64>,
}

impl Sgd {
    pub fn new(lr: f64, clip_norm: Option<f64>) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be positive, got {lr}")));
        }
        if let Some(c) = clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::config(format!("clip norm must be positive, got {c}")));
            }
        }
        Ok(Sgd { lr, clip_norm })
    }

    /// Applies one update in place and returns the pre-clipping global gradient norm.
    pub fn step<T: Real, P: BorrowMut<Tensor<T>>>(&self, params: &mut [P], grads: &[Tensor<T>]) -> Result<f64> {
        sgd_step(params, grads, self.lr, self.clip_norm)
    }
}

pub fn global_norm<T: Real>(grads: &[Tensor<T>]) -> f64 {
    grads.iter().map(|g| g.sum_squares().as_f64()).sum::<f64>().sqrt()
}

/// `p ← p − lr·g`, after scaling every gradient by `clip/‖g‖` when the
/// global norm exceeds `clip`.
pub fn sgd_step<T: Real, P: BorrowMut<Tensor<T>>>(
    params: &mut [P],
    grads: &[Tensor<T>],
    lr: f64,
    clip_norm: Option<f64>,
) -> Result<f64> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::config(format!("learning rate must be positive, got {lr}")));
    }
    if params.len() != grads.len() {
        return Err(Error::contract(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        p.borrow().expect_same_shape(g, "sgd_step")?;
    }
    let norm = global_norm(grads);
    if !norm.is_finite() {
        return Err(Error::NonFinite { op: "sgd_step" });
    }
    let scale = match clip_norm {
        Some(c) if norm > c => c / norm,
        _ => 1.0,
    };
    let step = T::of(lr * scale);
    for (p, g) in params.iter_mut().zip(grads) {
        for (pv, &gv) in p.borrow_mut().data_mut().iter_mut().zip(g.data()) {
            *pv = *pv - step * gv;
        }
    }
    Ok(norm)
}
