//! First-order minimization over flat logit vectors, and the central-difference oracle.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpinError};
use crate::rng::{stream, substream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// Plain gradient descent.
    Sgd,
    /// Adam with `β₁ = 0.9`, `β₂ = 0.999`, `ε = 1e-8`.
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub method: Method,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Examples per step; 0 means full batch.
    pub batch_size: usize,
    /// Rescale gradients whose Euclidean norm exceeds this value.
    pub clip_norm: Option<f64>,
    pub seed: u64,
    /// Stream id for minibatch shuffling under `seed`.
    pub stream: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            method: Method::Adam,
            learning_rate: 1e-2,
            epochs: 4,
            batch_size: 64,
            clip_norm: None,
            seed: 0,
            stream: stream::OPTIMIZER,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(SpinError::config(
                "optim.lr",
                format!("learning rate must be positive, got {}", self.learning_rate),
            ));
        }
        if self.epochs == 0 {
            return Err(SpinError::config("optim.epochs", "epochs must be at least 1"));
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(SpinError::config(
                    "optim.clip",
                    format!("clip norm must be positive, got {c}"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Minimized {
    pub params: Vec<f64>,
    /// Full-data loss at the initial point followed by one entry per epoch.
    pub trace: Vec<f64>,
}

/// Adam moment estimates for one parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    eps: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    pub const DEFAULT_EPS: f64 = 1e-8;

    pub fn new(n: usize) -> Self {
        Adam::with_eps(n, Self::DEFAULT_EPS)
    }

    /// Adam whose denominator is `sqrt(v̂) + eps`. Near a zero-gradient point
    /// the update behaves like gradient descent with step `lr / eps`.
    pub fn with_eps(n: usize, eps: f64) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            eps,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

fn check_finite(value: f64, grad: &[f64], epoch: usize, step: usize) -> Result<()> {
    if !value.is_finite() {
        return Err(SpinError::Run(format!(
            "non-finite loss {value} at epoch {epoch}, step {step}"
        )));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(SpinError::Run(format!(
            "non-finite gradient component {i} ({}) at epoch {epoch}, step {step}",
            grad[i]
        )));
    }
    Ok(())
}

/// Minimizes an objective over `n_examples` training examples.
///
/// `objective(params, batch)` returns the mean loss and its gradient over the
/// examples in `batch`, or over all examples when `batch` is `None`. Each
/// epoch visits a fresh seeded permutation of the examples in minibatches.
pub fn minimize<F>(mut objective: F, n_examples: usize, init: Vec<f64>, cfg: &OptimizerConfig) -> Result<Minimized>
where
    F: FnMut(&[f64], Option<&[usize]>) -> Result<(f64, Vec<f64>)>,
{
    cfg.validate()?;
    if n_examples == 0 {
        return Err(SpinError::Argument("nothing to minimize over: zero examples".into()));
    }
    let mut params = init;
    let mut adam = Adam::new(params.len());
    let mut rng = substream(cfg.seed, cfg.stream);
    let full_batch = cfg.batch_size == 0 || cfg.batch_size >= n_examples;
    let mut order: Vec<usize> = (0..n_examples).collect();
    let mut trace = Vec::with_capacity(cfg.epochs + 1);

    let mut apply = |params: &mut Vec<f64>, mut grad: Vec<f64>| {
        if let Some(max) = cfg.clip_norm {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > max {
                grad.iter_mut().for_each(|g| *g *= max / norm);
            }
        }
        match cfg.method {
            Method::Sgd => params
                .iter_mut()
                .zip(&grad)
                .for_each(|(p, g)| *p -= cfg.learning_rate * g),
            Method::Adam => adam.step(params, &grad, cfg.learning_rate),
        }
    };

    if full_batch {
        for epoch in 0..cfg.epochs {
            let (value, grad) = objective(&params, None)?;
            check_finite(value, &grad, epoch, 0)?;
            trace.push(value);
            apply(&mut params, grad);
        }
        let (value, grad) = objective(&params, None)?;
        check_finite(value, &grad, cfg.epochs, 0)?;
        trace.push(value);
    } else {
        let (value, grad) = objective(&params, None)?;
        check_finite(value, &grad, 0, 0)?;
        trace.push(value);
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
                let (value, grad) = objective(&params, Some(batch))?;
                check_finite(value, &grad, epoch, step)?;
                apply(&mut params, grad);
            }
            let (value, grad) = objective(&params, None)?;
            check_finite(value, &grad, epoch, usize::MAX)?;
            trace.push(value);
        }
    }
    Ok(Minimized { params, trace })
}

/// Central differences `(f(x + εe_i) - f(x - εe_i)) / 2ε` for every coordinate.
pub fn finite_diff_grad<F>(mut f: F, point: &[f64], eps: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(eps > 0.0, "finite-difference step must be positive");
    let mut x = point.to_vec();
    (0..point.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + eps;
            let hi = f(&x);
            x[i] = orig - eps;
            let lo = f(&x);
            x[i] = orig;
            (hi - lo) / (2.0 * eps)
        })
        .collect()
}

/// `‖a - b‖₂ / max(‖a‖₂, ‖b‖₂)`; zero when both vectors vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}
