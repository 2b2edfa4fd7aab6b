use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

use super::glorot_bound;

/// `y = x·Wᵀ + b` with `W: out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineParams {
    pub w: Tensor,
    pub b: Tensor,
}

impl AffineParams {
    pub fn new(w: Tensor, b: Tensor) -> Result<Self> {
        if w.ndim() != 2 || b.shape() != [w.shape()[0]] {
            return Err(Error::dim(format!(
                "affine weight {:?} / bias {:?}",
                w.shape(),
                b.shape()
            )));
        }
        Ok(AffineParams { w, b })
    }

    pub fn init(input_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        AffineParams {
            w: Tensor::uniform(&[out_dim, input_dim], glorot_bound(input_dim, out_dim), rng),
            b: Tensor::zeros(&[out_dim]),
        }
    }

    /// Uniform He initialisation (bound `sqrt(6 / fan_in)`), for layers
    /// followed by a ReLU.
    pub fn init_he(input_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        AffineParams {
            w: Tensor::uniform(&[out_dim, input_dim], (6.0 / input_dim as f64).sqrt(), rng),
            b: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn zeros(input_dim: usize, out_dim: usize) -> Self {
        AffineParams {
            w: Tensor::zeros(&[out_dim, input_dim]),
            b: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![("W", &self.w), ("b", &self.b)]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![("W", &mut self.w), ("b", &mut self.b)]
    }

    pub fn zeros_like(&self) -> Self {
        AffineParams::zeros(self.input_dim(), self.out_dim())
    }
}

pub fn affine_forward(p: &AffineParams, x: &Tensor) -> Result<Tensor> {
    if x.ndim() != 2 || x.cols() != p.input_dim() {
        return Err(Error::dim(format!(
            "affine expects T×{}, got {:?}",
            p.input_dim(),
            x.shape()
        )));
    }
    let mut y = x.matmul_t(&p.w)?;
    for t in 0..y.rows() {
        for (v, b) in y.row_mut(t).iter_mut().zip(p.b.data()) {
            *v += b;
        }
    }
    Ok(y)
}

/// Returns `(dx, grads)` for [`affine_forward`].
pub fn affine_backward(p: &AffineParams, x: &Tensor, grad_out: &Tensor) -> Result<(Tensor, AffineParams)> {
    let dw = grad_out.t_matmul(x)?;
    let db = grad_out.sum_rows();
    let dx = grad_out.matmul(&p.w)?;
    Ok((dx, AffineParams { w: dw, b: db }))
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Masks `grad_out` where the pre-activation was not positive.
pub fn relu_backward(pre: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    for (v, &z) in g.data_mut().iter_mut().zip(pre.data()) {
        if z <= 0.0 {
            *v = 0.0;
        }
    }
    g
}

#[derive(Clone, Debug)]
pub struct SoftmaxOutput {
    pub logits: Tensor,
    pub log_probs: Tensor,
    /// Per-frame log normaliser.
    pub log_z: Tensor,
}

/// Row-wise log-softmax with max shift. Returns `(log_probs, log_z)`.
pub fn log_softmax_rows(logits: &Tensor) -> Result<(Tensor, Tensor)> {
    logits.check_finite()?;
    let k = logits.cols();
    let mut lp = logits.clone();
    let mut log_z = Vec::with_capacity(logits.rows());
    for t in 0..logits.rows() {
        let row = lp.row_mut(t);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
        let lz = m + s.ln();
        for v in row.iter_mut() {
            *v -= lz;
        }
        log_z.push(lz);
    }
    debug_assert!(k >= 1);
    let n = log_z.len();
    Ok((lp, Tensor::new(vec![n], log_z)?))
}

/// Affine projection to `K ≥ 2` classes followed by log-softmax.
pub fn softmax_output(w: &AffineParams, h: &Tensor) -> Result<SoftmaxOutput> {
    if w.out_dim() < 2 {
        return Err(Error::dim(format!(
            "softmax needs at least 2 classes, got {}",
            w.out_dim()
        )));
    }
    let logits = affine_forward(w, h)?;
    let (log_probs, log_z) = log_softmax_rows(&logits)?;
    Ok(SoftmaxOutput {
        logits,
        log_probs,
        log_z,
    })
}
