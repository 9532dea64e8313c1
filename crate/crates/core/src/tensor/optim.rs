//! First-order optimizers with global-norm gradient clipping.

use std::fmt;
use std::str::FromStr;

use super::{ParamKind, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer `{other}` (expected sgd or adam)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// Global L2 norm above which gradients are rescaled; `0` disables clipping.
    pub clip: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, clip: f64) -> Self {
        Optimizer {
            kind,
            lr,
            clip,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn sgd(lr: f64, clip: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr, clip)
    }

    pub fn adam(lr: f64, clip: f64) -> Self {
        Self::new(OptimizerKind::Adam, lr, clip)
    }

    /// Applies one update to every trainable weight and zeroes all gradients.
    /// Returns the pre-clipping global gradient norm.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<f64> {
        let mut sq = 0.0;
        for p in store.iter().filter(|p| trainable(p)) {
            if !p.grad.is_finite() {
                return Err(Error::NonFiniteGradient(p.name.clone()));
            }
            sq += p.grad.sq_norm();
        }
        let norm = sq.sqrt();
        let scale = if self.clip > 0.0 && norm > self.clip {
            self.clip / norm
        } else {
            1.0
        };
        if self.kind == OptimizerKind::Adam && self.m.len() != store.len() {
            self.m = store.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for (i, p) in store.iter_mut().enumerate() {
            if trainable(p) {
                let g = p.grad.data();
                let w = p.value.data_mut();
                match self.kind {
                    OptimizerKind::Sgd => {
                        for (w, g) in w.iter_mut().zip(g) {
                            *w -= self.lr * scale * g;
                        }
                    }
                    OptimizerKind::Adam => {
                        let (m, v) = (&mut self.m[i], &mut self.v[i]);
                        for k in 0..w.len() {
                            let gk = g[k] * scale;
                            m[k] = b1 * m[k] + (1.0 - b1) * gk;
                            v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
                            let mh = m[k] / bc1;
                            let vh = v[k] / bc2;
                            w[k] -= self.lr * mh / (vh.sqrt() + self.eps);
                        }
                    }
                }
            }
            p.grad.fill(0.0);
        }
        Ok(norm)
    }
}

fn trainable(p: &super::Parameter) -> bool {
    p.kind == ParamKind::Weight && !p.frozen
}
