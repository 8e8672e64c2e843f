//! Squared-error and log losses with the Newton quantities that turn each
//! boosting step into a weighted least-squares fit: gradient `G`, hessian
//! weight `H` and pseudo-response `z = -G / H`.

use crate::dataset::Task;
use crate::error::{GamiError, Result};

/// Hessian floor for the log loss.
pub const EPS_HESSIAN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
    pub z: Vec<f64>,
}

pub fn sigmoid(g: f64) -> f64 {
    if g >= 0.0 {
        1.0 / (1.0 + (-g).exp())
    } else {
        let e = g.exp();
        e / (1.0 + e)
    }
}

/// Overall mean (continuous) or overall logit (binary).
pub fn init_offset(y: &[f64], task: Task) -> Result<f64> {
    if y.is_empty() {
        return Err(GamiError::DegenerateTarget("empty target".into()));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    match task {
        Task::Continuous => Ok(mean),
        Task::Binary => {
            if mean <= 0.0 || mean >= 1.0 {
                return Err(GamiError::DegenerateTarget(
                    "binary target has a single class".into(),
                ));
            }
            Ok((mean / (1.0 - mean)).ln())
        }
    }
}

/// ℓ(y, g): `(y - g)^2` or `log(1 + e^g) - y·g`.
pub fn loss(y: f64, g: f64, task: Task) -> f64 {
    match task {
        Task::Continuous => (y - g) * (y - g),
        // log(1 + e^g) = max(g, 0) + log1p(e^-|g|)
        Task::Binary => g.max(0.0) + (-g.abs()).exp().ln_1p() - y * g,
    }
}

pub fn mean_loss(y: &[f64], g: &[f64], task: Task) -> f64 {
    debug_assert_eq!(y.len(), g.len());
    y.iter().zip(g).map(|(&y, &g)| loss(y, g, task)).sum::<f64>() / y.len() as f64
}

pub fn grad_hess(y: &[f64], g: &[f64], task: Task) -> LossGrad {
    debug_assert_eq!(y.len(), g.len());
    let n = y.len();
    let mut grad = Vec::with_capacity(n);
    let mut hess = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    match task {
        Task::Continuous => {
            for (&y, &g) in y.iter().zip(g) {
                grad.push(-2.0 * (y - g));
                hess.push(2.0);
                z.push(y - g);
            }
        }
        Task::Binary => {
            for (&y, &g) in y.iter().zip(g) {
                let p = sigmoid(g);
                let h = (p * (1.0 - p)).max(EPS_HESSIAN);
                grad.push(p - y);
                hess.push(h);
                z.push((y - p) / h);
            }
        }
    }
    LossGrad { grad, hess, z }
}
