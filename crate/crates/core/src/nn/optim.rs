use serde::{Deserialize, Serialize};

use super::{NnError, Tensor};

/// Bias-corrected Adam moments for a fixed list of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            v: m.clone(),
            m,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One update. All gradients are checked before any parameter moves.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Tensor],
        names: &[String],
        lr: f64,
    ) -> Result<(), NnError> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(NnError::ShapeMismatch {
                op: "adam parameter count",
                expected: vec![self.m.len()],
                got: vec![params.len(), grads.len()],
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(NnError::ShapeMismatch {
                    op: "adam",
                    expected: p.shape().to_vec(),
                    got: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(NnError::NonFinite {
                    param: names.get(i).cloned().unwrap_or_else(|| format!("param{i}")),
                });
            }
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((pv, gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *pv -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Reduce-on-plateau learning rate: multiply by `factor` after `patience`
/// consecutive epochs without a new best loss, never going below `floor`.
///
/// The first epoch has nothing to improve on and counts toward the wait.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub factor: f64,
    pub floor: f64,
    pub patience: usize,
    #[serde(skip)]
    current: Option<f64>,
    #[serde(skip)]
    best: Option<f64>,
    #[serde(skip)]
    wait: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::new(1e-4, 0.5, 1e-5, 5)
    }
}

impl LrSchedule {
    pub fn new(initial: f64, factor: f64, floor: f64, patience: usize) -> Self {
        LrSchedule {
            initial,
            factor,
            floor,
            patience,
            current: None,
            best: None,
            wait: 0,
        }
    }

    pub fn current(&self) -> f64 {
        self.current.unwrap_or(self.initial)
    }

    /// Record one epoch's loss and return the learning rate for the next epoch.
    pub fn step(&mut self, loss: f64) -> f64 {
        match self.best {
            Some(b) if loss < b => {
                self.best = Some(loss);
                self.wait = 0;
            }
            Some(_) => self.wait += 1,
            None => {
                self.best = Some(loss);
                self.wait = 1;
            }
        }
        let mut lr = self.current();
        if self.wait >= self.patience.max(1) {
            lr = (lr * self.factor).max(self.floor);
            self.wait = 0;
        }
        self.current = Some(lr);
        lr
    }

    /// Learning rate after replaying a whole loss history from scratch.
    pub fn after(&self, history: &[f64]) -> f64 {
        let mut s = LrSchedule::new(self.initial, self.factor, self.floor, self.patience);
        history.iter().fold(s.current(), |_, &l| s.step(l))
    }
}
