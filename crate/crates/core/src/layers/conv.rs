use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

use super::{glorot_bound, LayerIo};

pub const DEFAULT_FILTERS: usize = 32;
pub const DEFAULT_KERNEL: usize = 3;

/// 2-D convolution over (time, feature) with stride 1 and same-size output.
///
/// Out-of-range taps read the nearest edge frame/bin instead of zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2dParams {
    /// `filters × in_channels × k × k`.
    pub w: Tensor,
    pub b: Tensor,
}

impl Conv2dParams {
    pub fn new(w: Tensor, b: Tensor) -> Result<Self> {
        if w.ndim() != 4 || w.shape()[2] != w.shape()[3] || w.shape()[2].is_multiple_of(2) {
            return Err(Error::config(format!(
                "conv kernel must be filters×C×k×k with odd k, got {:?}",
                w.shape()
            )));
        }
        if b.shape() != [w.shape()[0]] {
            return Err(Error::dim(format!(
                "conv bias {:?} vs weight {:?}",
                b.shape(),
                w.shape()
            )));
        }
        Ok(Conv2dParams { w, b })
    }

    pub fn init(in_channels: usize, filters: usize, kernel: usize, rng: &mut Rng) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::config(format!("conv kernel size {kernel} must be odd")));
        }
        let fan_in = in_channels * kernel * kernel;
        let fan_out = filters * kernel * kernel;
        Ok(Conv2dParams {
            w: Tensor::uniform(
                &[filters, in_channels, kernel, kernel],
                glorot_bound(fan_in, fan_out),
                rng,
            ),
            b: Tensor::zeros(&[filters]),
        })
    }

    pub fn filters(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.w.shape()[2]
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![("W", &self.w), ("b", &self.b)]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![("W", &mut self.w), ("b", &mut self.b)]
    }

    pub fn zeros_like(&self) -> Self {
        Conv2dParams {
            w: Tensor::zeros(self.w.shape()),
            b: Tensor::zeros(self.b.shape()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConvCache {
    pub pre: Tensor,
}

#[inline]
fn clamp(i: usize, delta: isize, n: usize) -> usize {
    (i as isize + delta).clamp(0, n as isize - 1) as usize
}

/// `x: T × F × C` to ReLU feature maps `T × F × filters`.
pub fn conv2d_layer(p: &Conv2dParams, x: &Tensor) -> Result<LayerIo<ConvCache>> {
    if x.ndim() != 3 || x.shape()[2] != p.in_channels() {
        return Err(Error::dim(format!(
            "conv expects T×F×{}, got {:?}",
            p.in_channels(),
            x.shape()
        )));
    }
    let (t_len, f_len, c_in) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (nf, k) = (p.filters(), p.kernel());
    let half = (k / 2) as isize;
    let w = p.w.data();
    let xd = x.data();
    let mut pre = vec![0.0; t_len * f_len * nf];
    for t in 0..t_len {
        for f in 0..f_len {
            let out = &mut pre[(t * f_len + f) * nf..(t * f_len + f + 1) * nf];
            out.copy_from_slice(p.b.data());
            for (ki, dt) in (-half..=half).enumerate() {
                let ts = clamp(t, dt, t_len);
                for (kj, df) in (-half..=half).enumerate() {
                    let fs = clamp(f, df, f_len);
                    let xin = &xd[(ts * f_len + fs) * c_in..(ts * f_len + fs + 1) * c_in];
                    for (o, ov) in out.iter_mut().enumerate() {
                        for (c, &xv) in xin.iter().enumerate() {
                            *ov += w[((o * c_in + c) * k + ki) * k + kj] * xv;
                        }
                    }
                }
            }
        }
    }
    let pre = Tensor::new(vec![t_len, f_len, nf], pre)?;
    let output = pre.map(|v| v.max(0.0));
    Ok(LayerIo {
        input: x.clone(),
        output,
        cache: ConvCache { pre },
    })
}

pub fn conv2d_backward(p: &Conv2dParams, io: &LayerIo<ConvCache>, grad_out: &Tensor) -> Result<(Tensor, Conv2dParams)> {
    if grad_out.shape() != io.cache.pre.shape() {
        return Err(Error::dim(format!(
            "conv upstream gradient {:?} vs output {:?}",
            grad_out.shape(),
            io.cache.pre.shape()
        )));
    }
    let x = &io.input;
    let (t_len, f_len, c_in) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (nf, k) = (p.filters(), p.kernel());
    let half = (k / 2) as isize;
    let w = p.w.data();
    let xd = x.data();
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; nf];
    let mut dx = vec![0.0; xd.len()];
    let pre = io.cache.pre.data();
    let go = grad_out.data();
    for t in 0..t_len {
        for f in 0..f_len {
            let base = (t * f_len + f) * nf;
            for o in 0..nf {
                let g = if pre[base + o] > 0.0 { go[base + o] } else { 0.0 };
                if g == 0.0 {
                    continue;
                }
                db[o] += g;
                for (ki, dt) in (-half..=half).enumerate() {
                    let ts = clamp(t, dt, t_len);
                    for (kj, df) in (-half..=half).enumerate() {
                        let fs = clamp(f, df, f_len);
                        let xo = (ts * f_len + fs) * c_in;
                        for c in 0..c_in {
                            let wi = ((o * c_in + c) * k + ki) * k + kj;
                            dw[wi] += g * xd[xo + c];
                            dx[xo + c] += g * w[wi];
                        }
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), dx)?,
        Conv2dParams {
            w: Tensor::new(p.w.shape().to_vec(), dw)?,
            b: Tensor::new(vec![nf], db)?,
        },
    ))
}
