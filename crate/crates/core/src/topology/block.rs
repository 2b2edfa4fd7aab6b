use crate::error::{Error, Result};
use crate::layers::{
    affine_backward, affine_forward, blstm_layer, blstm_layer_backward, lstm_layer_backward, lstm_layer_forward, relu,
    relu_backward, tdnn_backward, tdnn_layer, AffineParams, BlstmCache, BlstmParams, LayerIo, LstmCache, LstmParams,
    TdnnCache, TdnnParams,
};
use crate::tensor::{Rng, Tensor};

use super::{BlockLayer, DenseBlockSpec};

/// `H(x) + x`. The shortcut is only defined when `H` preserves the width.
pub fn residual_apply(layer: impl FnOnce(&Tensor) -> Result<Tensor>, x: &Tensor) -> Result<Tensor> {
    let h = layer(x)?;
    if h.shape() != x.shape() {
        return Err(Error::config(format!(
            "residual shortcut undefined: layer maps {:?} to {:?}",
            x.shape(),
            h.shape()
        )));
    }
    h.add(x)
}

/// Affine + ReLU projection of a block's concatenated output.
pub fn transition_forward(p: &AffineParams, x: &Tensor) -> Result<Tensor> {
    Ok(relu(&affine_forward(p, x)?))
}

#[derive(Clone, Debug, PartialEq)]
pub enum BlockParams {
    Lstm(LstmParams),
    Blstm(BlstmParams),
    Tdnn(TdnnParams),
}

impl BlockParams {
    pub fn init(layer: &BlockLayer, input_dim: usize, rng: &mut Rng) -> Result<Self> {
        Ok(match layer {
            BlockLayer::Lstm { cell_dim } => BlockParams::Lstm(LstmParams::init(input_dim, *cell_dim, rng)),
            BlockLayer::Blstm { cell_dim } => BlockParams::Blstm(BlstmParams::init(input_dim, *cell_dim, rng)),
            BlockLayer::Tdnn { offsets, out_dim } => {
                BlockParams::Tdnn(TdnnParams::init(offsets.clone(), input_dim, *out_dim, rng)?)
            }
        })
    }

    pub fn input_dim(&self) -> usize {
        match self {
            BlockParams::Lstm(p) => p.input_dim(),
            BlockParams::Blstm(p) => p.input_dim(),
            BlockParams::Tdnn(p) => p.input_dim(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            BlockParams::Lstm(_) => "lstm",
            BlockParams::Blstm(_) => "blstm",
            BlockParams::Tdnn(_) => "tdnn",
        }
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        match self {
            BlockParams::Lstm(p) => p.tensors().into_iter().map(|(n, t)| (n.to_string(), t)).collect(),
            BlockParams::Blstm(p) => p.tensors(),
            BlockParams::Tdnn(p) => p.tensors().into_iter().map(|(n, t)| (n.to_string(), t)).collect(),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        match self {
            BlockParams::Lstm(p) => p.tensors_mut().into_iter().map(|(n, t)| (n.to_string(), t)).collect(),
            BlockParams::Blstm(p) => p.tensors_mut(),
            BlockParams::Tdnn(p) => p.tensors_mut().into_iter().map(|(n, t)| (n.to_string(), t)).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            BlockParams::Lstm(p) => BlockParams::Lstm(p.zeros_like()),
            BlockParams::Blstm(p) => BlockParams::Blstm(p.zeros_like()),
            BlockParams::Tdnn(p) => BlockParams::Tdnn(p.zeros_like()),
        }
    }
}

#[derive(Clone, Debug)]
pub enum BlockCache {
    Lstm(LayerIo<LstmCache>),
    Blstm(LayerIo<BlstmCache>),
    Tdnn(LayerIo<TdnnCache>),
}

impl BlockCache {
    fn output(&self) -> &Tensor {
        match self {
            BlockCache::Lstm(io) => &io.output,
            BlockCache::Blstm(io) => &io.output,
            BlockCache::Tdnn(io) => &io.output,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DenseBlockCache {
    pub layers: Vec<BlockCache>,
    pub input_dim: usize,
}

fn run_layer(p: &BlockParams, x: &Tensor) -> Result<BlockCache> {
    Ok(match p {
        BlockParams::Lstm(p) => BlockCache::Lstm(lstm_layer_forward(p, x)?),
        BlockParams::Blstm(p) => BlockCache::Blstm(blstm_layer(&p.fwd, &p.bwd, x)?),
        BlockParams::Tdnn(p) => BlockCache::Tdnn(tdnn_layer(p, x)?),
    })
}

/// Dense block: layer `ℓ` sees `[x0, x1, …, x_{ℓ-1}]`; the output is
/// `[x1, …, x_M]`.
pub fn dense_block_forward(
    spec: &DenseBlockSpec,
    params: &[BlockParams],
    x0: &Tensor,
) -> Result<LayerIo<DenseBlockCache>> {
    if spec.layers.len() != params.len() || params.is_empty() {
        return Err(Error::config(format!(
            "dense block has {} layers but {} parameter sets",
            spec.layers.len(),
            params.len()
        )));
    }
    let expected = spec.layer_input_dims(x0.cols());
    let mut caches: Vec<BlockCache> = Vec::with_capacity(params.len());
    for (l, (p, &want)) in params.iter().zip(&expected).enumerate() {
        if p.input_dim() != want {
            return Err(Error::config(format!(
                "dense layer {} expects input width {want}, parameters are sized for {}",
                l + 1,
                p.input_dim()
            )));
        }
        let cache = {
            let mut parts: Vec<&Tensor> = Vec::with_capacity(l + 1);
            parts.push(x0);
            parts.extend(caches.iter().map(BlockCache::output));
            if parts.len() == 1 {
                run_layer(p, x0)?
            } else {
                run_layer(p, &Tensor::concat(&parts, 1)?)?
            }
        };
        caches.push(cache);
    }
    let outs: Vec<&Tensor> = caches.iter().map(BlockCache::output).collect();
    let output = if outs.len() == 1 {
        outs[0].clone()
    } else {
        Tensor::concat(&outs, 1)?
    };
    Ok(LayerIo {
        input: x0.clone(),
        output,
        cache: DenseBlockCache {
            layers: caches,
            input_dim: x0.cols(),
        },
    })
}

/// Returns the gradient for the block input and per-layer parameter
/// gradients.
pub fn dense_block_backward(
    params: &[BlockParams],
    io: &LayerIo<DenseBlockCache>,
    grad_out: &Tensor,
) -> Result<(Tensor, Vec<BlockParams>)> {
    let caches = &io.cache.layers;
    if caches.len() != params.len() {
        return Err(Error::State("dense block cache does not match parameters".into()));
    }
    let widths: Vec<usize> = caches.iter().map(|c| c.output().cols()).collect();
    let mut acc = grad_out.split(1, &widths)?;
    let mut dx0 = Tensor::zeros(io.input.shape());
    let mut grads: Vec<Option<BlockParams>> = vec![None; params.len()];
    for l in (0..params.len()).rev() {
        let (d_in, g) = match (&params[l], &caches[l]) {
            (BlockParams::Lstm(p), BlockCache::Lstm(c)) => {
                let (dx, g) = lstm_layer_backward(p, c, &acc[l])?;
                (dx, BlockParams::Lstm(g))
            }
            (BlockParams::Blstm(p), BlockCache::Blstm(c)) => {
                let (dx, g) = blstm_layer_backward(p, c, &acc[l])?;
                (dx, BlockParams::Blstm(g))
            }
            (BlockParams::Tdnn(p), BlockCache::Tdnn(c)) => {
                let (dx, g) = tdnn_backward(p, c, &acc[l])?;
                (dx, BlockParams::Tdnn(g))
            }
            _ => return Err(Error::State("dense block cache kind mismatch".into())),
        };
        grads[l] = Some(g);
        let mut sizes = vec![io.cache.input_dim];
        sizes.extend_from_slice(&widths[..l]);
        let pieces = d_in.split(1, &sizes)?;
        dx0.add_assign(&pieces[0])?;
        for (i, piece) in pieces.iter().enumerate().skip(1) {
            acc[i - 1].add_assign(piece)?;
        }
    }
    Ok((dx0, grads.into_iter().map(|g| g.expect("filled")).collect()))
}

/// Backward for [`transition_forward`]; `pre` is the affine output.
pub(crate) fn transition_backward(
    p: &AffineParams,
    x: &Tensor,
    pre: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, AffineParams)> {
    affine_backward(p, x, &relu_backward(pre, grad_out))
}
