use super::Real;
use crate::error::{invalid, shape_err, Result};

/// Classical momentum SGD: `v <- momentum * v + g; p <- p - lr * v`.
#[derive(Debug, Clone)]
pub struct SgdMomentum<T> {
    lr: T,
    momentum: T,
    velocity: Vec<Vec<T>>,
}

impl<T: Real> SgdMomentum<T> {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(invalid(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(invalid(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        Ok(Self {
            lr: T::of(lr),
            momentum: T::of(momentum),
            velocity: Vec::new(),
        })
    }

    pub fn velocity(&self) -> &[Vec<T>] {
        &self.velocity
    }

    /// Applies one update. Blocks are matched by position; the velocity
    /// layout is fixed by the first call.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(shape_err(format!(
                "{} parameter blocks, {} gradient blocks",
                params.len(),
                grads.len()
            )));
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(shape_err("parameter block count changed between steps"));
        }
        for ((p, g), v) in params.iter().zip(grads).zip(&self.velocity) {
            if p.len() != g.len() || p.len() != v.len() {
                return Err(shape_err(format!(
                    "block of {} parameters with {} gradients",
                    p.len(),
                    g.len()
                )));
            }
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((pv, &gv), vv) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                *vv = self.momentum * *vv + gv;
                *pv -= self.lr * *vv;
            }
        }
        Ok(())
    }
}
