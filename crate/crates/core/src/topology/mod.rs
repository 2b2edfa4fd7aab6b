//! Architecture descriptions and builders, plus the connectivity operators
//! (residual shortcut, dense block, transitional projection).
//!
//! An [`ArchitectureSpec`] is a declarative stage list; [`Network`] binds it
//! to parameters and runs forward/backward passes.
//!
//! JSON layout (field names are stable, covered by round-trip tests):
//!
//! ```json
//! {
//!   "name": "dense-lstm",
//!   "mode": "dense",
//!   "input_dim": 12,
//!   "stages": [
//!     {"kind": "affine", "out_dim": 16},
//!     {"kind": "dense_block", "layers": [{"kind": "lstm", "cell_dim": 16}]},
//!     {"kind": "transition", "out_dim": 16}
//!   ],
//!   "num_classes": 8
//! }
//! ```

mod block;
mod network;

pub use block::{
    dense_block_backward, dense_block_forward, residual_apply, transition_forward, BlockCache, BlockParams,
    DenseBlockCache,
};
pub use network::{ForwardPass, NetParams, Network, StageParams};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::layers::conv::{DEFAULT_FILTERS, DEFAULT_KERNEL};
use crate::layers::tdnn::validate_offsets;
use crate::model::hex;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConnectivityMode {
    Plain,
    Residual,
    Dense,
}

impl ConnectivityMode {
    pub const ALL: [ConnectivityMode; 3] = [
        ConnectivityMode::Plain,
        ConnectivityMode::Residual,
        ConnectivityMode::Dense,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConnectivityMode::Plain => "plain",
            ConnectivityMode::Residual => "residual",
            ConnectivityMode::Dense => "dense",
        }
    }
}

impl std::str::FromStr for ConnectivityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(ConnectivityMode::Plain),
            "residual" => Ok(ConnectivityMode::Residual),
            "dense" => Ok(ConnectivityMode::Dense),
            other => Err(Error::config(format!("unknown connectivity mode `{other}`"))),
        }
    }
}

/// A layer inside a dense block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlockLayer {
    Lstm { cell_dim: usize },
    Blstm { cell_dim: usize },
    Tdnn { offsets: Vec<i32>, out_dim: usize },
}

impl BlockLayer {
    pub fn out_dim(&self) -> usize {
        match self {
            BlockLayer::Lstm { cell_dim } => *cell_dim,
            BlockLayer::Blstm { cell_dim } => 2 * cell_dim,
            BlockLayer::Tdnn { out_dim, .. } => *out_dim,
        }
    }
}

/// Layers of one dense block. Layer `ℓ` (1-based) consumes the concatenation
/// of the block input and the outputs of layers `1..ℓ`; the block emits the
/// concatenation of all its layer outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseBlockSpec {
    pub layers: Vec<BlockLayer>,
}

impl DenseBlockSpec {
    pub fn uniform_lstm(m: usize, cell_dim: usize) -> Self {
        DenseBlockSpec {
            layers: vec![BlockLayer::Lstm { cell_dim }; m],
        }
    }

    pub fn uniform_blstm(m: usize, cell_dim: usize) -> Self {
        DenseBlockSpec {
            layers: vec![BlockLayer::Blstm { cell_dim }; m],
        }
    }

    /// Input width seen by each layer given the block input width.
    pub fn layer_input_dims(&self, block_input: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.layers.len());
        let mut width = block_input;
        for l in &self.layers {
            dims.push(width);
            width += l.out_dim();
        }
        dims
    }

    pub fn output_dim(&self) -> usize {
        self.layers.iter().map(BlockLayer::out_dim).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Stage {
    /// 2-D convolution + ReLU; the `T × D` input is read as a `T × D × 1` map.
    Conv {
        filters: usize,
        kernel: usize,
    },
    Tdnn {
        offsets: Vec<i32>,
        out_dim: usize,
    },
    Lstm {
        cell_dim: usize,
        #[serde(default)]
        residual: bool,
    },
    Blstm {
        cell_dim: usize,
    },
    /// Linear dimension adapter (no non-linearity).
    Affine {
        out_dim: usize,
    },
    DenseBlock(DenseBlockSpec),
    /// Affine + ReLU projection between blocks.
    Transition {
        out_dim: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub name: String,
    pub mode: ConnectivityMode,
    pub input_dim: usize,
    pub stages: Vec<Stage>,
    pub num_classes: usize,
}

/// Width of the activations flowing between stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Feature {
    Flat(usize),
    Map { bins: usize, channels: usize },
}

impl Feature {
    pub fn flat_dim(self) -> usize {
        match self {
            Feature::Flat(d) => d,
            Feature::Map { bins, channels } => bins * channels,
        }
    }
}

/// Layer counts by kind, dense-block members included.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Census {
    pub conv: usize,
    pub tdnn: usize,
    pub lstm: usize,
    pub blstm: usize,
    pub transition: usize,
    pub affine: usize,
    pub dense_blocks: usize,
}

impl ArchitectureSpec {
    /// Stable hash of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serialises");
        hex(&Sha256::digest(json.as_bytes())[..16])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serialises")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: ArchitectureSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Checks stage arithmetic; returns each stage's input feature shape
    /// followed by the final feature shape.
    pub fn feature_shapes(&self) -> Result<Vec<Feature>> {
        if self.input_dim == 0 {
            return Err(Error::config("input_dim must be positive"));
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes must be at least 2"));
        }
        let mut cur = Feature::Flat(self.input_dim);
        let mut shapes = vec![cur];
        for (i, st) in self.stages.iter().enumerate() {
            cur = match st {
                Stage::Conv { filters, kernel } => {
                    if *filters == 0 || kernel % 2 == 0 {
                        return Err(Error::config(format!(
                            "stage {i}: conv needs filters > 0 and odd kernel"
                        )));
                    }
                    let bins = match cur {
                        Feature::Flat(d) => d,
                        Feature::Map { bins, .. } => bins,
                    };
                    Feature::Map {
                        bins,
                        channels: *filters,
                    }
                }
                Stage::Tdnn { offsets, out_dim } => {
                    validate_offsets(offsets)?;
                    positive(*out_dim, i)?;
                    Feature::Flat(*out_dim)
                }
                Stage::Lstm { cell_dim, residual } => {
                    positive(*cell_dim, i)?;
                    if *residual && cur.flat_dim() != *cell_dim {
                        return Err(Error::config(format!(
                            "stage {i}: residual shortcut needs input dim {} == cell dim {}",
                            cur.flat_dim(),
                            cell_dim
                        )));
                    }
                    Feature::Flat(*cell_dim)
                }
                Stage::Blstm { cell_dim } => {
                    positive(*cell_dim, i)?;
                    Feature::Flat(2 * cell_dim)
                }
                Stage::Affine { out_dim } | Stage::Transition { out_dim } => {
                    positive(*out_dim, i)?;
                    Feature::Flat(*out_dim)
                }
                Stage::DenseBlock(b) => {
                    if b.layers.is_empty() {
                        return Err(Error::config(format!(
                            "stage {i}: dense block needs at least one layer"
                        )));
                    }
                    for l in &b.layers {
                        match l {
                            BlockLayer::Tdnn { offsets, out_dim } => {
                                validate_offsets(offsets)?;
                                positive(*out_dim, i)?;
                            }
                            BlockLayer::Lstm { cell_dim } | BlockLayer::Blstm { cell_dim } => positive(*cell_dim, i)?,
                        }
                    }
                    Feature::Flat(b.output_dim())
                }
            };
            shapes.push(cur);
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        self.feature_shapes().map(|_| ())
    }

    pub fn output_feature_dim(&self) -> Result<usize> {
        Ok(self.feature_shapes()?.last().expect("non-empty").flat_dim())
    }

    pub fn census(&self) -> Census {
        let mut c = Census::default();
        for st in &self.stages {
            match st {
                Stage::Conv { .. } => c.conv += 1,
                Stage::Tdnn { .. } => c.tdnn += 1,
                Stage::Lstm { .. } => c.lstm += 1,
                Stage::Blstm { .. } => c.blstm += 1,
                Stage::Affine { .. } => c.affine += 1,
                Stage::Transition { .. } => c.transition += 1,
                Stage::DenseBlock(b) => {
                    c.dense_blocks += 1;
                    for l in &b.layers {
                        match l {
                            BlockLayer::Lstm { .. } => c.lstm += 1,
                            BlockLayer::Blstm { .. } => c.blstm += 1,
                            BlockLayer::Tdnn { .. } => c.tdnn += 1,
                        }
                    }
                }
            }
        }
        c
    }

    pub fn dense_blocks(&self) -> impl Iterator<Item = &DenseBlockSpec> {
        self.stages.iter().filter_map(|s| match s {
            Stage::DenseBlock(b) => Some(b),
            _ => None,
        })
    }
}

fn positive(v: usize, stage: usize) -> Result<()> {
    if v == 0 {
        Err(Error::config(format!("stage {stage}: dimensions must be positive")))
    } else {
        Ok(())
    }
}

/// `L` uni-directional LSTM layers of width `d` wired as plain, residual or
/// dense stacks, with a softmax over `num_classes`.
///
/// Residual: every layer after the first adds its input to its output.
/// Dense: `ceil(L / block_size)` blocks (the last may be shorter) joined by
/// transitional layers of width `d`; a linear adapter maps the input to `d`
/// when the widths differ.
pub fn build_stack(
    mode: ConnectivityMode,
    layers: usize,
    input_dim: usize,
    cell_dim: usize,
    block_size: usize,
    num_classes: usize,
) -> Result<ArchitectureSpec> {
    if layers < 1 {
        return Err(Error::config("a stack needs at least one layer"));
    }
    if cell_dim == 0 || input_dim == 0 {
        return Err(Error::config("dimensions must be positive"));
    }
    let stages = match mode {
        ConnectivityMode::Plain => (0..layers)
            .map(|_| Stage::Lstm {
                cell_dim,
                residual: false,
            })
            .collect(),
        ConnectivityMode::Residual => (0..layers)
            .map(|i| Stage::Lstm {
                cell_dim,
                residual: i > 0,
            })
            .collect(),
        ConnectivityMode::Dense => {
            if block_size < 1 {
                return Err(Error::config("dense block size must be at least 1"));
            }
            let mut stages = Vec::new();
            if input_dim != cell_dim {
                stages.push(Stage::Affine { out_dim: cell_dim });
            }
            let mut remaining = layers;
            while remaining > 0 {
                let m = remaining.min(block_size);
                if !stages.is_empty() && matches!(stages.last(), Some(Stage::DenseBlock(_))) {
                    stages.push(Stage::Transition { out_dim: cell_dim });
                }
                stages.push(Stage::DenseBlock(DenseBlockSpec::uniform_lstm(m, cell_dim)));
                remaining -= m;
            }
            stages
        }
    };
    let name = match mode {
        ConnectivityMode::Dense => format!("dense-lstm-L{layers}-d{cell_dim}-b{block_size}"),
        m => format!("{}-lstm-L{layers}-d{cell_dim}", m.as_str()),
    };
    let spec = ArchitectureSpec {
        name,
        mode,
        input_dim,
        stages,
        num_classes,
    };
    spec.validate()?;
    Ok(spec)
}

/// Widths of the dense TDNN-LSTM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TdnnLstmDims {
    pub input_dim: usize,
    pub tdnn_dim: usize,
    pub cell_dim: usize,
    pub transition_dim: usize,
    pub front_offsets: Vec<i32>,
    pub block_offsets: Vec<i32>,
}

impl Default for TdnnLstmDims {
    fn default() -> Self {
        TdnnLstmDims {
            input_dim: 40,
            tdnn_dim: 1024,
            cell_dim: 1024,
            transition_dim: 1024,
            front_offsets: vec![-1, 0, 1],
            block_offsets: vec![-3, 0, 3],
        }
    }
}

impl TdnnLstmDims {
    /// All widths set to `d` on a `input_dim` feature stream.
    pub fn small(input_dim: usize, d: usize) -> Self {
        TdnnLstmDims {
            input_dim,
            tdnn_dim: d,
            cell_dim: d,
            transition_dim: d,
            ..TdnnLstmDims::default()
        }
    }
}

/// Three TDNNs, two dense blocks of (LSTM, TDNN, TDNN) each followed by a
/// transitional layer, a final LSTM and the softmax: 7 TDNN and 3 LSTM layers.
pub fn build_dense_tdnn_lstm(num_classes: usize) -> Result<ArchitectureSpec> {
    build_dense_tdnn_lstm_with(&TdnnLstmDims::default(), num_classes)
}

pub fn build_dense_tdnn_lstm_with(dims: &TdnnLstmDims, num_classes: usize) -> Result<ArchitectureSpec> {
    let front = |_: usize| Stage::Tdnn {
        offsets: dims.front_offsets.clone(),
        out_dim: dims.tdnn_dim,
    };
    let block = || {
        Stage::DenseBlock(DenseBlockSpec {
            layers: vec![
                BlockLayer::Lstm {
                    cell_dim: dims.cell_dim,
                },
                BlockLayer::Tdnn {
                    offsets: dims.block_offsets.clone(),
                    out_dim: dims.tdnn_dim,
                },
                BlockLayer::Tdnn {
                    offsets: dims.block_offsets.clone(),
                    out_dim: dims.tdnn_dim,
                },
            ],
        })
    };
    let mut stages: Vec<Stage> = (0..3).map(front).collect();
    for _ in 0..2 {
        stages.push(block());
        stages.push(Stage::Transition {
            out_dim: dims.transition_dim,
        });
    }
    stages.push(Stage::Lstm {
        cell_dim: dims.cell_dim,
        residual: false,
    });
    let spec = ArchitectureSpec {
        name: "dense-tdnn-lstm".into(),
        mode: ConnectivityMode::Dense,
        input_dim: dims.input_dim,
        stages,
        num_classes,
    };
    spec.validate()?;
    Ok(spec)
}

/// Dense CNN-bLSTM layout: conv front end, `N` dense blocks of `M`
/// bidirectional layers, optional transitional layers between blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnnBlstmConfig {
    pub input_dim: usize,
    pub conv_layers: usize,
    pub filters: usize,
    pub kernel: usize,
    pub blocks: usize,
    pub layers_per_block: usize,
    /// One entry per block, or a single entry shared by all blocks.
    pub cell_dims: Vec<usize>,
    pub transitions: bool,
    pub transition_dim: usize,
}

impl CnnBlstmConfig {
    fn base(blocks: usize, layers_per_block: usize, cell_dims: Vec<usize>, transitions: bool) -> Self {
        CnnBlstmConfig {
            input_dim: 40,
            conv_layers: 3,
            filters: DEFAULT_FILTERS,
            kernel: DEFAULT_KERNEL,
            blocks,
            layers_per_block,
            cell_dims,
            transitions,
            transition_dim: 256,
        }
    }

    /// Configuration (a): N = 2, M = 7, d = 512, with a transitional layer.
    pub fn a() -> Self {
        Self::base(2, 7, vec![512], true)
    }

    /// Configuration (b): N = 2, M = 7, d = 256, with a transitional layer.
    pub fn b() -> Self {
        Self::base(2, 7, vec![256], true)
    }

    /// Configuration (c): N = 3, M = 5, d = 512, 256, 128, blocks chained
    /// without transitional layers.
    pub fn c() -> Self {
        Self::base(3, 5, vec![512, 256, 128], false)
    }

    /// Configuration (d): N = 2, M = 15, d = 128.
    pub fn d() -> Self {
        Self::base(2, 15, vec![128], true)
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "a" => Ok(Self::a()),
            "b" => Ok(Self::b()),
            "c" => Ok(Self::c()),
            "d" => Ok(Self::d()),
            other => Err(Error::config(format!("unknown CNN-bLSTM preset `{other}`"))),
        }
    }

    /// Same block layout with every width capped at `max_dim`, a small
    /// conv front end and a `input_dim`-bin input: used for gradient checks.
    pub fn scaled(&self, input_dim: usize, max_dim: usize, filters: usize) -> Self {
        // Keep the ratios between block widths (512:256:128 becomes 8:4:2).
        let widest = self.cell_dims.iter().copied().max().unwrap_or(1);
        CnnBlstmConfig {
            input_dim,
            filters,
            cell_dims: self
                .cell_dims
                .iter()
                .map(|&d| ((d * max_dim) / widest).max(1))
                .collect(),
            transition_dim: self.transition_dim.min(max_dim),
            ..self.clone()
        }
    }
}

pub fn build_dense_cnn_blstm(cfg: &CnnBlstmConfig, num_classes: usize) -> Result<ArchitectureSpec> {
    if cfg.blocks == 0 || cfg.layers_per_block == 0 {
        return Err(Error::config("N and M must be positive"));
    }
    let dims: Vec<usize> = match cfg.cell_dims.len() {
        1 => vec![cfg.cell_dims[0]; cfg.blocks],
        n if n == cfg.blocks => cfg.cell_dims.clone(),
        n => {
            return Err(Error::config(format!(
                "{} dense blocks but {n} cell dimensions",
                cfg.blocks
            )))
        }
    };
    let mut stages: Vec<Stage> = (0..cfg.conv_layers)
        .map(|_| Stage::Conv {
            filters: cfg.filters,
            kernel: cfg.kernel,
        })
        .collect();
    for (i, &d) in dims.iter().enumerate() {
        if i > 0 && cfg.transitions {
            stages.push(Stage::Transition {
                out_dim: cfg.transition_dim,
            });
        }
        stages.push(Stage::DenseBlock(DenseBlockSpec::uniform_blstm(
            cfg.layers_per_block,
            d,
        )));
    }
    let spec = ArchitectureSpec {
        name: format!("dense-cnn-blstm-N{}-M{}", cfg.blocks, cfg.layers_per_block),
        mode: ConnectivityMode::Dense,
        input_dim: cfg.input_dim,
        stages,
        num_classes,
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_stack_two_blocks_of_five() {
        let s = build_stack(ConnectivityMode::Dense, 10, 128, 128, 5, 10).unwrap();
        let c = s.census();
        assert_eq!(c.dense_blocks, 2);
        assert_eq!(c.lstm, 10);
        assert_eq!(c.transition, 1);
        assert_eq!(c.affine, 0);
        assert!(s.dense_blocks().all(|b| b.layers.len() == 5));
    }

    #[test]
    fn dense_stack_two_blocks_of_ten() {
        let s = build_stack(ConnectivityMode::Dense, 20, 16, 16, 10, 8).unwrap();
        assert_eq!(s.census().dense_blocks, 2);
        assert!(s.dense_blocks().all(|b| b.layers.len() == 10));
    }

    #[test]
    fn dense_stack_adapter_and_ragged_tail() {
        let s = build_stack(ConnectivityMode::Dense, 7, 12, 16, 5, 8).unwrap();
        assert!(matches!(s.stages[0], Stage::Affine { out_dim: 16 }));
        let sizes: Vec<usize> = s.dense_blocks().map(|b| b.layers.len()).collect();
        assert_eq!(sizes, vec![5, 2]);
    }

    #[test]
    fn single_layer_plain_and_residual_agree() {
        let p = build_stack(ConnectivityMode::Plain, 1, 8, 8, 5, 4).unwrap();
        let r = build_stack(ConnectivityMode::Residual, 1, 8, 8, 5, 4).unwrap();
        assert_eq!(p.stages, r.stages);
    }

    #[test]
    fn zero_layers_rejected() {
        assert!(matches!(
            build_stack(ConnectivityMode::Plain, 0, 8, 8, 5, 4),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn growth_rule_128() {
        let b = DenseBlockSpec::uniform_lstm(3, 128);
        assert_eq!(b.layer_input_dims(128), vec![128, 256, 384]);
        assert_eq!(b.output_dim(), 384);
    }

    #[test]
    fn blstm_growth_uses_two_d() {
        let b = DenseBlockSpec::uniform_blstm(3, 4);
        assert_eq!(b.layer_input_dims(10), vec![10, 18, 26]);
        assert_eq!(b.output_dim(), 24);
    }

    #[test]
    fn tdnn_lstm_census() {
        let s = build_dense_tdnn_lstm(100).unwrap();
        let c = s.census();
        assert_eq!((c.tdnn, c.lstm), (7, 3));
        assert_eq!(c.dense_blocks, 2);
        let shapes = s.feature_shapes().unwrap();
        // Inputs to the stages right after each transition are 1,024 wide.
        for (i, st) in s.stages.iter().enumerate() {
            if matches!(st, Stage::Transition { .. }) {
                assert_eq!(shapes[i + 1].flat_dim(), 1024);
            }
        }
    }

    #[test]
    fn cnn_blstm_presets() {
        let a = build_dense_cnn_blstm(&CnnBlstmConfig::a(), 10).unwrap();
        assert_eq!(a.census().blstm, 14);
        assert_eq!(a.census().transition, 1);
        assert_eq!(a.census().conv, 3);
        let c = build_dense_cnn_blstm(&CnnBlstmConfig::c(), 10).unwrap();
        assert_eq!(c.census().transition, 0);
        let dims: Vec<usize> = c
            .dense_blocks()
            .map(|b| match b.layers[0] {
                BlockLayer::Blstm { cell_dim } => cell_dim,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(dims, vec![512, 256, 128]);
        let d = build_dense_cnn_blstm(&CnnBlstmConfig::d(), 10).unwrap();
        assert_eq!(d.census().blstm, 30);
        // Transitions project to 256.
        let shapes = a.feature_shapes().unwrap();
        let ti = a
            .stages
            .iter()
            .position(|s| matches!(s, Stage::Transition { .. }))
            .unwrap();
        assert_eq!(shapes[ti + 1].flat_dim(), 256);
    }

    #[test]
    fn inconsistent_block_dims() {
        let mut cfg = CnnBlstmConfig::a();
        cfg.cell_dims = vec![512, 256, 128];
        assert!(matches!(build_dense_cnn_blstm(&cfg, 10), Err(Error::Config(_))));
    }

    #[test]
    fn residual_dim_mismatch_rejected() {
        let spec = ArchitectureSpec {
            name: "bad".into(),
            mode: ConnectivityMode::Residual,
            input_dim: 5,
            stages: vec![Stage::Lstm {
                cell_dim: 4,
                residual: true,
            }],
            num_classes: 3,
        };
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn json_round_trip_keeps_fingerprint() {
        for spec in [
            build_stack(ConnectivityMode::Dense, 7, 12, 16, 5, 8).unwrap(),
            build_dense_tdnn_lstm(30).unwrap(),
            build_dense_cnn_blstm(&CnnBlstmConfig::c(), 9).unwrap(),
        ] {
            let back = ArchitectureSpec::from_json(&spec.to_json()).unwrap();
            assert_eq!(back, spec);
            assert_eq!(back.fingerprint(), spec.fingerprint());
        }
        let a = build_stack(ConnectivityMode::Plain, 3, 4, 4, 5, 3).unwrap();
        let b = build_stack(ConnectivityMode::Residual, 3, 4, 4, 5, 3).unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn json_field_names() {
        let spec = build_stack(ConnectivityMode::Residual, 2, 4, 4, 5, 3).unwrap();
        let v: serde_json::Value = serde_json::from_str(&spec.to_json()).unwrap();
        assert_eq!(v["mode"], "residual");
        assert_eq!(v["stages"][1]["kind"], "lstm");
        assert_eq!(v["stages"][1]["residual"], true);
        assert_eq!(v["input_dim"], 4);
        assert_eq!(v["num_classes"], 3);
    }
}
