use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel batch normalization over all rows (points) of a feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

/// Values saved by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
    mode: Mode,
}

impl BatchNorm {
    pub const DEFAULT_MOMENTUM: f64 = 0.98;
    pub const DEFAULT_EPSILON: f64 = 1e-6;

    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: Self::DEFAULT_MOMENTUM,
            epsilon: Self::DEFAULT_EPSILON,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&mut self, x: &Matrix, mode: Mode) -> Result<(Matrix, BnCache)> {
        batch_norm_forward(
            x,
            &self.gamma,
            &self.beta,
            &mut self.running_mean,
            &mut self.running_var,
            self.momentum,
            self.epsilon,
            mode,
        )
    }

    /// Returns `(grad_x, grad_gamma, grad_beta)`.
    pub fn backward(
        &self,
        cache: &BnCache,
        grad_out: &Matrix,
    ) -> Result<(Matrix, Vec<f64>, Vec<f64>)> {
        batch_norm_backward(cache, &self.gamma, grad_out)
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn batch_norm_forward(
    x: &Matrix,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &mut [f64],
    running_var: &mut [f64],
    momentum: f64,
    epsilon: f64,
    mode: Mode,
) -> Result<(Matrix, BnCache)> {
    let (n, c) = x.shape();
    if gamma.len() != c || beta.len() != c || running_mean.len() != c || running_var.len() != c {
        return Err(Error::Shape(format!(
            "batch norm over {} channels applied to {c} channels",
            gamma.len()
        )));
    }
    let (mean, var) = match mode {
        Mode::Train => {
            if n < 2 {
                return Err(Error::Argument(format!(
                    "batch norm in train mode needs at least 2 points, got {n}"
                )));
            }
            let mut mean = vec![0.0; c];
            for i in 0..n {
                for (m, v) in mean.iter_mut().zip(x.row(i)) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut var = vec![0.0; c];
            for i in 0..n {
                for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s /= n as f64);
            let unbiased = n as f64 / (n as f64 - 1.0);
            for j in 0..c {
                running_mean[j] = momentum * running_mean[j] + (1.0 - momentum) * mean[j];
                running_var[j] = momentum * running_var[j] + (1.0 - momentum) * var[j] * unbiased;
            }
            (mean, var)
        }
        Mode::Eval => (running_mean.to_vec(), running_var.to_vec()),
    };
    let inv_std: Vec<f64> = var
        .iter()
        .map(|v| 1.0 / (v.max(0.0) + epsilon).sqrt())
        .collect();
    let mut normalized = Matrix::zeros(n, c);
    let mut out = Matrix::zeros(n, c);
    for i in 0..n {
        let xr = x.row(i);
        let nr = normalized.row_mut(i);
        for j in 0..c {
            nr[j] = (xr[j] - mean[j]) * inv_std[j];
        }
        let or = out.row_mut(i);
        for j in 0..c {
            or[j] = gamma[j] * normalized[(i, j)] + beta[j];
        }
    }
    Ok((
        out,
        BnCache {
            normalized,
            inv_std,
            mode,
        },
    ))
}

pub(crate) fn batch_norm_backward(
    cache: &BnCache,
    gamma: &[f64],
    grad_out: &Matrix,
) -> Result<(Matrix, Vec<f64>, Vec<f64>)> {
    let (n, c) = cache.normalized.shape();
    if grad_out.shape() != (n, c) {
        return Err(Error::Shape(format!(
            "gradient {:?} does not match batch norm output {:?}",
            grad_out.shape(),
            (n, c)
        )));
    }
    let mut g_gamma = vec![0.0; c];
    let mut g_beta = vec![0.0; c];
    for i in 0..n {
        let g = grad_out.row(i);
        let xh = cache.normalized.row(i);
        for j in 0..c {
            g_gamma[j] += g[j] * xh[j];
            g_beta[j] += g[j];
        }
    }
    let mut gx = Matrix::zeros(n, c);
    match cache.mode {
        Mode::Train => {
            let inv_n = 1.0 / n as f64;
            for i in 0..n {
                let g = grad_out.row(i);
                let xh = cache.normalized.row(i);
                let out = gx.row_mut(i);
                for j in 0..c {
                    out[j] = gamma[j]
                        * cache.inv_std[j]
                        * (g[j] - g_beta[j] * inv_n - xh[j] * g_gamma[j] * inv_n);
                }
            }
        }
        Mode::Eval => {
            for i in 0..n {
                let g = grad_out.row(i);
                let out = gx.row_mut(i);
                for j in 0..c {
                    out[j] = gamma[j] * cache.inv_std[j] * g[j];
                }
            }
        }
    }
    Ok((gx, g_gamma, g_beta))
}
