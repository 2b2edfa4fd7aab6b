use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::layers::{
    affine_backward, affine_forward, blstm_layer, blstm_layer_backward, conv2d_backward, conv2d_layer,
    log_softmax_rows, lstm_layer_backward, lstm_layer_forward, relu, tdnn_backward, tdnn_layer, AffineParams,
    BlstmCache, BlstmParams, Conv2dParams, ConvCache, LayerIo, LstmCache, LstmParams, SoftmaxOutput, TdnnCache,
    TdnnParams,
};
use crate::model::ModelParameters;
use crate::tensor::{Rng, Tensor};

use super::block::{
    dense_block_backward, dense_block_forward, transition_backward, BlockCache, BlockParams, DenseBlockCache,
};
use super::{ArchitectureSpec, DenseBlockSpec, Feature, Stage};

#[derive(Clone, Debug, PartialEq)]
pub enum StageParams {
    Conv {
        p: Conv2dParams,
        bins: usize,
    },
    Tdnn(TdnnParams),
    Lstm {
        p: LstmParams,
        residual: bool,
    },
    Blstm(BlstmParams),
    Affine(AffineParams),
    Transition(AffineParams),
    DenseBlock {
        spec: DenseBlockSpec,
        layers: Vec<BlockParams>,
    },
}

impl StageParams {
    fn kind(&self) -> &'static str {
        match self {
            StageParams::Conv { .. } => "conv",
            StageParams::Tdnn(_) => "tdnn",
            StageParams::Lstm { .. } => "lstm",
            StageParams::Blstm(_) => "blstm",
            StageParams::Affine(_) => "affine",
            StageParams::Transition(_) => "transition",
            StageParams::DenseBlock { .. } => "dense",
        }
    }

    fn zeros_like(&self) -> Self {
        match self {
            StageParams::Conv { p, bins } => StageParams::Conv {
                p: p.zeros_like(),
                bins: *bins,
            },
            StageParams::Tdnn(p) => StageParams::Tdnn(p.zeros_like()),
            StageParams::Lstm { p, residual } => StageParams::Lstm {
                p: p.zeros_like(),
                residual: *residual,
            },
            StageParams::Blstm(p) => StageParams::Blstm(p.zeros_like()),
            StageParams::Affine(p) => StageParams::Affine(p.zeros_like()),
            StageParams::Transition(p) => StageParams::Transition(p.zeros_like()),
            StageParams::DenseBlock { spec, layers } => StageParams::DenseBlock {
                spec: spec.clone(),
                layers: layers.iter().map(BlockParams::zeros_like).collect(),
            },
        }
    }
}

/// Parameters of a whole network (also used as the gradient container).
#[derive(Clone, Debug, PartialEq)]
pub struct NetParams {
    pub stages: Vec<StageParams>,
    pub output: AffineParams,
}

fn stage_prefix(i: usize, st: &StageParams) -> String {
    format!("s{i:02}.{}", st.kind())
}

impl NetParams {
    /// Every tensor with its stable name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, st) in self.stages.iter().enumerate() {
            let pre = stage_prefix(i, st);
            match st {
                StageParams::Conv { p, .. } => {
                    out.extend(p.tensors().into_iter().map(|(n, t)| (format!("{pre}.{n}"), t)))
                }
                StageParams::Tdnn(p) => out.extend(p.tensors().into_iter().map(|(n, t)| (format!("{pre}.{n}"), t))),
                StageParams::Lstm { p, .. } => {
                    out.extend(p.tensors().into_iter().map(|(n, t)| (format!("{pre}.{n}"), t)))
                }
                StageParams::Blstm(p) => out.extend(p.tensors().into_iter().map(|(n, t)| (format!("{pre}.{n}"), t))),
                StageParams::Affine(p) | StageParams::Transition(p) => {
                    out.extend(p.tensors().into_iter().map(|(n, t)| (format!("{pre}.{n}"), t)))
                }
                StageParams::DenseBlock { layers, .. } => {
                    for (l, bp) in layers.iter().enumerate() {
                        let kind = bp.kind();
                        out.extend(
                            bp.tensors()
                                .into_iter()
                                .map(|(n, t)| (format!("{pre}.l{}.{kind}.{n}", l + 1), t)),
                        );
                    }
                }
            }
        }
        out.extend(self.output.tensors().into_iter().map(|(n, t)| (format!("out.{n}"), t)));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, st) in self.stages.iter_mut().enumerate() {
            let pre = stage_prefix(i, st);
            match st {
                StageParams::Conv { p, .. } => {
                    out.extend(p.tensors_mut().into_iter().map(|(n, t)| (format!("{pre}.{n}"), t)))
                }
                StageParams::Tdnn(p) => out.extend(p.tensors_mut().into_iter().map(|(n, t)| (format!("{pre}.{n}"), t))),
                StageParams::Lstm { p, .. } => {
                    out.extend(p.tensors_mut().into_iter().map(|(n, t)| (format!("{pre}.{n}"), t)))
                }
                StageParams::Blstm(p) => {
                    out.extend(p.tensors_mut().into_iter().map(|(n, t)| (format!("{pre}.{n}"), t)))
                }
                StageParams::Affine(p) | StageParams::Transition(p) => {
                    out.extend(p.tensors_mut().into_iter().map(|(n, t)| (format!("{pre}.{n}"), t)))
                }
                StageParams::DenseBlock { layers, .. } => {
                    for (l, bp) in layers.iter_mut().enumerate() {
                        let kind = bp.kind();
                        out.extend(
                            bp.tensors_mut()
                                .into_iter()
                                .map(|(n, t)| (format!("{pre}.l{}.{kind}.{n}", l + 1), t)),
                        );
                    }
                }
            }
        }
        out.extend(
            self.output
                .tensors_mut()
                .into_iter()
                .map(|(n, t)| (format!("out.{n}"), t)),
        );
        out
    }

    pub fn zeros_like(&self) -> Self {
        NetParams {
            stages: self.stages.iter().map(StageParams::zeros_like).collect(),
            output: self.output.zeros_like(),
        }
    }

    pub fn sum_squares(&self) -> f64 {
        self.tensors().iter().map(|(_, t)| t.sum_squares()).sum()
    }
}

#[derive(Clone, Debug)]
enum StageCache {
    Conv {
        io: LayerIo<ConvCache>,
        in_shape: Vec<usize>,
    },
    Tdnn(LayerIo<TdnnCache>),
    Lstm(LayerIo<LstmCache>),
    Blstm(LayerIo<BlstmCache>),
    Affine {
        input: Tensor,
    },
    Transition {
        input: Tensor,
        pre: Tensor,
    },
    DenseBlock(LayerIo<DenseBlockCache>),
}

/// Everything a backward pass needs from the forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    caches: Vec<StageCache>,
    /// Input to the softmax layer, `T × feature_dim`.
    pub features: Tensor,
    pub output: SoftmaxOutput,
}

impl ForwardPass {
    /// Hash of the sign pattern of every ReLU pre-activation; two passes
    /// with equal signatures lie on the same linear piece of every ReLU.
    pub fn relu_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |t: &Tensor| {
            for &v in t.data() {
                h ^= (v > 0.0) as u64 + 1;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for c in &self.caches {
            match c {
                StageCache::Conv { io, .. } => feed(&io.cache.pre),
                StageCache::Tdnn(io) => feed(&io.cache.pre),
                StageCache::Transition { pre, .. } => feed(pre),
                StageCache::DenseBlock(io) => {
                    for l in &io.cache.layers {
                        if let BlockCache::Tdnn(io) = l {
                            feed(&io.cache.pre);
                        }
                    }
                }
                _ => {}
            }
        }
        h
    }
}

/// An [`ArchitectureSpec`] bound to parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    spec: ArchitectureSpec,
    fingerprint: String,
    pub params: NetParams,
}

impl Network {
    /// Fresh parameters drawn from `seed`.
    pub fn init(spec: &ArchitectureSpec, seed: u64) -> Result<Self> {
        let shapes = spec.feature_shapes()?;
        let mut rng = Rng::new(seed);
        let mut stages = Vec::with_capacity(spec.stages.len());
        for (st, &input) in spec.stages.iter().zip(&shapes) {
            let in_dim = input.flat_dim();
            stages.push(match st {
                Stage::Conv { filters, kernel } => {
                    let (bins, channels) = match input {
                        Feature::Flat(d) => (d, 1),
                        Feature::Map { bins, channels } => (bins, channels),
                    };
                    StageParams::Conv {
                        p: Conv2dParams::init(channels, *filters, *kernel, &mut rng)?,
                        bins,
                    }
                }
                Stage::Tdnn { offsets, out_dim } => {
                    StageParams::Tdnn(TdnnParams::init(offsets.clone(), in_dim, *out_dim, &mut rng)?)
                }
                Stage::Lstm { cell_dim, residual } => StageParams::Lstm {
                    p: LstmParams::init(in_dim, *cell_dim, &mut rng),
                    residual: *residual,
                },
                Stage::Blstm { cell_dim } => StageParams::Blstm(BlstmParams::init(in_dim, *cell_dim, &mut rng)),
                Stage::Affine { out_dim } => StageParams::Affine(AffineParams::init(in_dim, *out_dim, &mut rng)),
                Stage::Transition { out_dim } => {
                    StageParams::Transition(AffineParams::init_he(in_dim, *out_dim, &mut rng))
                }
                Stage::DenseBlock(b) => {
                    let dims = b.layer_input_dims(in_dim);
                    let layers = b
                        .layers
                        .iter()
                        .zip(dims)
                        .map(|(l, d)| BlockParams::init(l, d, &mut rng))
                        .collect::<Result<Vec<_>>>()?;
                    StageParams::DenseBlock {
                        spec: b.clone(),
                        layers,
                    }
                }
            });
        }
        let feat = shapes.last().expect("non-empty").flat_dim();
        let output = AffineParams::init(feat, spec.num_classes, &mut rng);
        Ok(Network {
            spec: spec.clone(),
            fingerprint: spec.fingerprint(),
            params: NetParams { stages, output },
        })
    }

    /// Binds saved parameters to `spec`, checking fingerprint, names and shapes.
    pub fn from_model(spec: &ArchitectureSpec, model: &ModelParameters) -> Result<Self> {
        let fp = spec.fingerprint();
        if model.fingerprint != fp {
            return Err(Error::Fingerprint {
                expected: fp,
                found: model.fingerprint.clone(),
            });
        }
        let mut net = Network::init(spec, 0)?;
        let mut seen = 0;
        for (name, t) in net.params.tensors_mut() {
            let src = model
                .tensors
                .get(&name)
                .ok_or_else(|| Error::Compatibility(format!("model lacks tensor `{name}`")))?;
            if src.shape() != t.shape() {
                return Err(Error::Compatibility(format!(
                    "tensor `{name}` has shape {:?}, architecture needs {:?}",
                    src.shape(),
                    t.shape()
                )));
            }
            *t = src.clone();
            seen += 1;
        }
        if seen != model.tensors.len() {
            return Err(Error::Compatibility(format!(
                "model carries {} tensors, architecture has {seen}",
                model.tensors.len()
            )));
        }
        Ok(net)
    }

    pub fn to_model(&self) -> ModelParameters {
        let tensors: BTreeMap<String, Tensor> =
            self.params.tensors().into_iter().map(|(n, t)| (n, t.clone())).collect();
        ModelParameters::new(tensors, self.fingerprint.clone())
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn num_params(&self) -> usize {
        self.params.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `x: T × input_dim` to per-frame log-probabilities over the classes.
    pub fn forward(&self, x: &Tensor) -> Result<ForwardPass> {
        if x.ndim() != 2 || x.cols() != self.spec.input_dim {
            return Err(Error::dim(format!(
                "network expects T×{}, got {:?}",
                self.spec.input_dim,
                x.shape()
            )));
        }
        let mut caches = Vec::with_capacity(self.params.stages.len());
        let mut h = x.clone();
        for st in &self.params.stages {
            let (next, cache) = match st {
                StageParams::Conv { p, bins } => {
                    let t_len = h.rows();
                    let in_shape = vec![t_len, *bins, p.in_channels()];
                    let io = conv2d_layer(p, &h.reshape(&in_shape)?)?;
                    let out = io.output.reshape(&[t_len, bins * p.filters()])?;
                    (out, StageCache::Conv { io, in_shape })
                }
                StageParams::Tdnn(p) => {
                    let io = tdnn_layer(p, &h)?;
                    (io.output.clone(), StageCache::Tdnn(io))
                }
                StageParams::Lstm { p, residual } => {
                    let io = lstm_layer_forward(p, &h)?;
                    let out = if *residual {
                        io.output.add(&h)?
                    } else {
                        io.output.clone()
                    };
                    (out, StageCache::Lstm(io))
                }
                StageParams::Blstm(p) => {
                    let io = blstm_layer(&p.fwd, &p.bwd, &h)?;
                    (io.output.clone(), StageCache::Blstm(io))
                }
                StageParams::Affine(p) => {
                    let out = affine_forward(p, &h)?;
                    (out, StageCache::Affine { input: h })
                }
                StageParams::Transition(p) => {
                    let pre = affine_forward(p, &h)?;
                    (relu(&pre), StageCache::Transition { input: h, pre })
                }
                StageParams::DenseBlock { spec, layers } => {
                    let io = dense_block_forward(spec, layers, &h)?;
                    (io.output.clone(), StageCache::DenseBlock(io))
                }
            };
            caches.push(cache);
            h = next;
        }
        let logits = affine_forward(&self.params.output, &h)?;
        let (log_probs, log_z) = log_softmax_rows(&logits)?;
        Ok(ForwardPass {
            caches,
            features: h,
            output: SoftmaxOutput {
                logits,
                log_probs,
                log_z,
            },
        })
    }

    pub fn log_probs(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.output.log_probs)
    }

    /// Gradients of a loss whose derivative with respect to the logits is
    /// `grad_logits`. Returns parameter gradients and the input gradient.
    pub fn backward(&self, pass: &ForwardPass, grad_logits: &Tensor) -> Result<(NetParams, Tensor)> {
        if pass.caches.len() != self.params.stages.len() {
            return Err(Error::State("forward pass belongs to a different network".into()));
        }
        let (mut g, g_out) = affine_backward(&self.params.output, &pass.features, grad_logits)?;
        let mut grads = Vec::with_capacity(self.params.stages.len());
        for (st, cache) in self.params.stages.iter().zip(&pass.caches).rev() {
            let (dx, gp) = match (st, cache) {
                (StageParams::Conv { p, bins }, StageCache::Conv { io, in_shape }) => {
                    let go = g.reshape(io.output.shape())?;
                    let (dx, gp) = conv2d_backward(p, io, &go)?;
                    let dx = dx.reshape(&[in_shape[0], in_shape[1] * in_shape[2]])?;
                    (dx, StageParams::Conv { p: gp, bins: *bins })
                }
                (StageParams::Tdnn(p), StageCache::Tdnn(io)) => {
                    let (dx, gp) = tdnn_backward(p, io, &g)?;
                    (dx, StageParams::Tdnn(gp))
                }
                (StageParams::Lstm { p, residual }, StageCache::Lstm(io)) => {
                    let (mut dx, gp) = lstm_layer_backward(p, io, &g)?;
                    if *residual {
                        dx.add_assign(&g)?;
                    }
                    (
                        dx,
                        StageParams::Lstm {
                            p: gp,
                            residual: *residual,
                        },
                    )
                }
                (StageParams::Blstm(p), StageCache::Blstm(io)) => {
                    let (dx, gp) = blstm_layer_backward(p, io, &g)?;
                    (dx, StageParams::Blstm(gp))
                }
                (StageParams::Affine(p), StageCache::Affine { input }) => {
                    let (dx, gp) = affine_backward(p, input, &g)?;
                    (dx, StageParams::Affine(gp))
                }
                (StageParams::Transition(p), StageCache::Transition { input, pre }) => {
                    let (dx, gp) = transition_backward(p, input, pre, &g)?;
                    (dx, StageParams::Transition(gp))
                }
                (StageParams::DenseBlock { spec, layers }, StageCache::DenseBlock(io)) => {
                    let (dx, gl) = dense_block_backward(layers, io, &g)?;
                    (
                        dx,
                        StageParams::DenseBlock {
                            spec: spec.clone(),
                            layers: gl,
                        },
                    )
                }
                _ => return Err(Error::State("stage cache kind mismatch".into())),
            };
            grads.push(gp);
            g = dx;
        }
        grads.reverse();
        Ok((
            NetParams {
                stages: grads,
                output: g_out,
            },
            g,
        ))
    }
}
