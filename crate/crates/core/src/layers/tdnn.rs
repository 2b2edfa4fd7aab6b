use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

use super::{glorot_bound, LayerIo};

/// Time-delay layer: splice frames at `t + offset`, affine map, ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct TdnnParams {
    /// Strictly increasing and containing 0.
    pub offsets: Vec<i32>,
    /// `out_dim × (in_dim · offsets.len())`, spliced blocks in offset order.
    pub w: Tensor,
    pub b: Tensor,
}

pub fn validate_offsets(offsets: &[i32]) -> Result<()> {
    if offsets.is_empty() || !offsets.contains(&0) || offsets.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config(format!(
            "tdnn offsets {offsets:?} must be strictly increasing and include 0"
        )));
    }
    Ok(())
}

impl TdnnParams {
    pub fn new(offsets: Vec<i32>, w: Tensor, b: Tensor) -> Result<Self> {
        validate_offsets(&offsets)?;
        if w.ndim() != 2 || !w.shape()[1].is_multiple_of(offsets.len()) || b.shape() != [w.shape()[0]] {
            return Err(Error::dim(format!(
                "tdnn weights {:?} / bias {:?} inconsistent with {} offsets",
                w.shape(),
                b.shape(),
                offsets.len()
            )));
        }
        Ok(TdnnParams { offsets, w, b })
    }

    pub fn init(offsets: Vec<i32>, input_dim: usize, out_dim: usize, rng: &mut Rng) -> Result<Self> {
        validate_offsets(&offsets)?;
        let fan_in = input_dim * offsets.len();
        let w = Tensor::uniform(&[out_dim, fan_in], glorot_bound(fan_in, out_dim), rng);
        Ok(TdnnParams {
            offsets,
            w,
            b: Tensor::zeros(&[out_dim]),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.w.shape()[1] / self.offsets.len()
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
        TdnnParams {
            offsets: self.offsets.clone(),
            w: Tensor::zeros(self.w.shape()),
            b: Tensor::zeros(self.b.shape()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TdnnCache {
    pub spliced: Tensor,
    pub pre: Tensor,
}

#[inline]
fn clamp_frame(t: usize, offset: i32, t_len: usize) -> usize {
    (t as i64 + offset as i64).clamp(0, t_len as i64 - 1) as usize
}

/// Splices `x` at every offset, replicating the edge frames.
pub fn splice(x: &Tensor, offsets: &[i32]) -> Result<Tensor> {
    if x.ndim() != 2 {
        return Err(Error::dim(format!("splice expects T×D, got {:?}", x.shape())));
    }
    let (t_len, dim) = (x.rows(), x.cols());
    let mut data = Vec::with_capacity(t_len * dim * offsets.len());
    for t in 0..t_len {
        for &o in offsets {
            data.extend_from_slice(x.row(clamp_frame(t, o, t_len)));
        }
    }
    Tensor::new(vec![t_len, dim * offsets.len()], data)
}

pub fn tdnn_layer(p: &TdnnParams, x: &Tensor) -> Result<LayerIo<TdnnCache>> {
    if x.ndim() != 2 || x.cols() != p.input_dim() {
        return Err(Error::dim(format!(
            "tdnn expects T×{}, got {:?}",
            p.input_dim(),
            x.shape()
        )));
    }
    let spliced = splice(x, &p.offsets)?;
    let mut pre = spliced.matmul_t(&p.w)?;
    let out_dim = p.out_dim();
    for t in 0..pre.rows() {
        for (v, b) in pre.row_mut(t).iter_mut().zip(p.b.data()) {
            *v += b;
        }
    }
    let output = pre.map(|v| v.max(0.0));
    debug_assert_eq!(output.cols(), out_dim);
    Ok(LayerIo {
        input: x.clone(),
        output,
        cache: TdnnCache { spliced, pre },
    })
}

pub fn tdnn_backward(p: &TdnnParams, io: &LayerIo<TdnnCache>, grad_out: &Tensor) -> Result<(Tensor, TdnnParams)> {
    if grad_out.shape() != io.cache.pre.shape() {
        return Err(Error::dim(format!(
            "tdnn upstream gradient {:?} vs output {:?}",
            grad_out.shape(),
            io.cache.pre.shape()
        )));
    }
    let mut dpre = grad_out.clone();
    for (g, &z) in dpre.data_mut().iter_mut().zip(io.cache.pre.data()) {
        if z <= 0.0 {
            *g = 0.0;
        }
    }
    let dw = dpre.t_matmul(&io.cache.spliced)?;
    let db = dpre.sum_rows();
    let dspliced = dpre.matmul(&p.w)?;
    let (t_len, dim) = (io.input.rows(), io.input.cols());
    let mut dx = Tensor::zeros(&[t_len, dim]);
    for t in 0..t_len {
        let ds = dspliced.row(t);
        for (k, &o) in p.offsets.iter().enumerate() {
            let src = clamp_frame(t, o, t_len);
            let target = dx.row_mut(src);
            for (a, b) in target.iter_mut().zip(&ds[k * dim..(k + 1) * dim]) {
                *a += b;
            }
        }
    }
    Ok((
        dx,
        TdnnParams {
            offsets: p.offsets.clone(),
            w: dw,
            b: db,
        },
    ))
}
