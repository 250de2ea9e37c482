use super::ParamStore;
use crate::error::{Error, Result};

/// SGD with heavy-ball momentum and L2 weight decay folded into the velocity:
///
/// ```text
/// v ← momentum·v + grad + weight_decay·w
/// w ← w − lr·lr_multiplier·v
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    pub base_lr: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(store: &ParamStore, base_lr: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(base_lr > 0.0) {
            return Err(Error::config("base_lr", "must be > 0"));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::config("momentum", "must lie in [0, 1)"));
        }
        if !(weight_decay >= 0.0) {
            return Err(Error::config("weight_decay", "must be >= 0"));
        }
        Ok(Sgd {
            momentum,
            weight_decay,
            base_lr,
            velocity: store.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect(),
        })
    }

    /// One update at learning rate `lr`, then clear every gradient.
    ///
    /// Nothing is modified when any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        for (_, p) in store.iter() {
            if p.grad.data().iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient(p.name.clone()));
            }
        }
        for (p, v) in store.iter_mut().zip(&mut self.velocity) {
            let rate = lr * p.lr_multiplier;
            let grad = p.grad.data().to_vec();
            for ((w, vel), g) in p.value.data_mut().iter_mut().zip(v.iter_mut()).zip(grad) {
                *vel = self.momentum * *vel + g + self.weight_decay * *w;
                *w -= rate * *vel;
            }
        }
        store.zero_grad();
        Ok(())
    }
}
