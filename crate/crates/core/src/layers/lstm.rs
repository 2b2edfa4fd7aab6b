use crate::error::{Error, Result};
use crate::tensor::{dot, Rng, Tensor};

use super::{glorot_bound, sigmoid, LayerIo};

/// Weights of a standard LSTM cell (no peepholes, no projection).
///
/// Gate blocks are stacked in the order input, forget, cell-candidate,
/// output: rows `[0, d)` of `w`, `r` and `b` belong to the input gate,
/// `[d, 2d)` to the forget gate and so on.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    /// Input-to-gates, `4d × input_dim`.
    pub w: Tensor,
    /// Recurrent, `4d × d`.
    pub r: Tensor,
    /// Gate bias, `4d`.
    pub b: Tensor,
}

/// Forget-gate bias used at initialisation.
pub const FORGET_BIAS_INIT: f64 = 1.0;

impl LstmParams {
    pub fn new(w: Tensor, r: Tensor, b: Tensor) -> Result<Self> {
        if r.ndim() != 2 || r.shape()[0] != 4 * r.shape()[1] {
            return Err(Error::dim(format!(
                "recurrent weights must be 4d×d, got {:?}",
                r.shape()
            )));
        }
        let d = r.shape()[1];
        if w.ndim() != 2 || w.shape()[0] != 4 * d {
            return Err(Error::dim(format!(
                "input weights must be {}×in, got {:?}",
                4 * d,
                w.shape()
            )));
        }
        if b.shape() != [4 * d] {
            return Err(Error::dim(format!(
                "bias must have {} entries, got {:?}",
                4 * d,
                b.shape()
            )));
        }
        for t in [&w, &r, &b] {
            t.check_finite()?;
        }
        Ok(LstmParams { w, r, b })
    }

    pub fn zeros(input_dim: usize, cell_dim: usize) -> Self {
        LstmParams {
            w: Tensor::zeros(&[4 * cell_dim, input_dim]),
            r: Tensor::zeros(&[4 * cell_dim, cell_dim]),
            b: Tensor::zeros(&[4 * cell_dim]),
        }
    }

    /// Glorot-uniform weights, zero bias except the forget gate.
    pub fn init(input_dim: usize, cell_dim: usize, rng: &mut Rng) -> Self {
        let w = Tensor::uniform(&[4 * cell_dim, input_dim], glorot_bound(input_dim, cell_dim), rng);
        let r = Tensor::uniform(&[4 * cell_dim, cell_dim], glorot_bound(cell_dim, cell_dim), rng);
        let mut b = Tensor::zeros(&[4 * cell_dim]);
        for v in &mut b.data_mut()[cell_dim..2 * cell_dim] {
            *v = FORGET_BIAS_INIT;
        }
        LstmParams { w, r, b }
    }

    pub fn input_dim(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn cell_dim(&self) -> usize {
        self.r.shape()[1]
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![("W", &self.w), ("R", &self.r), ("b", &self.b)]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![("W", &mut self.w), ("R", &mut self.r), ("b", &mut self.b)]
    }

    pub fn zeros_like(&self) -> Self {
        LstmParams::zeros(self.input_dim(), self.cell_dim())
    }
}

/// Per-frame internals kept for back-propagation through time.
#[derive(Clone, Debug)]
pub struct LstmCache {
    /// Post-activation gates `T × 4d` (i, f, g, o).
    pub gates: Tensor,
    /// Cell states `T × d`.
    pub cells: Tensor,
    /// `tanh(c_t)`, `T × d`.
    pub tanh_cells: Tensor,
}

fn gates_from_preactivation(z: &mut [f64], d: usize) {
    for v in &mut z[..2 * d] {
        *v = sigmoid(*v);
    }
    for v in &mut z[2 * d..3 * d] {
        *v = v.tanh();
    }
    for v in &mut z[3 * d..] {
        *v = sigmoid(*v);
    }
}

/// One step of the recurrence. Returns `(h_t, c_t)`.
pub fn lstm_step(p: &LstmParams, x_t: &Tensor, h_prev: &Tensor, c_prev: &Tensor) -> Result<(Tensor, Tensor)> {
    let d = p.cell_dim();
    if x_t.len() != p.input_dim() || h_prev.len() != d || c_prev.len() != d {
        return Err(Error::dim(format!(
            "lstm_step expects x:{} h:{d} c:{d}, got x:{} h:{} c:{}",
            p.input_dim(),
            x_t.len(),
            h_prev.len(),
            c_prev.len()
        )));
    }
    for t in [x_t, h_prev, c_prev] {
        t.check_finite()?;
    }
    let in_dim = p.input_dim();
    let mut z: Vec<f64> = (0..4 * d)
        .map(|j| {
            p.b.data()[j]
                + dot(&p.w.data()[j * in_dim..(j + 1) * in_dim], x_t.data())
                + dot(&p.r.data()[j * d..(j + 1) * d], h_prev.data())
        })
        .collect();
    gates_from_preactivation(&mut z, d);
    let mut c = vec![0.0; d];
    let mut h = vec![0.0; d];
    for k in 0..d {
        c[k] = z[d + k] * c_prev.data()[k] + z[k] * z[2 * d + k];
        h[k] = z[3 * d + k] * c[k].tanh();
    }
    Ok((Tensor::new(vec![d], h)?, Tensor::new(vec![d], c)?))
}

/// Unrolls the cell left to right over `x: T × input_dim` from a zero state.
pub fn lstm_layer_forward(p: &LstmParams, x: &Tensor) -> Result<LayerIo<LstmCache>> {
    let d = p.cell_dim();
    if x.ndim() != 2 || x.shape()[1] != p.input_dim() {
        return Err(Error::dim(format!(
            "lstm layer expects T×{}, got {:?}",
            p.input_dim(),
            x.shape()
        )));
    }
    x.check_finite()?;
    let t_len = x.rows();
    // Input contributions for every frame at once: X·Wᵀ.
    let mut gates = x.matmul_t(&p.w)?;
    let mut cells = Tensor::zeros(&[t_len, d]);
    let mut tanh_cells = Tensor::zeros(&[t_len, d]);
    let mut out = Tensor::zeros(&[t_len, d]);
    let mut h_prev = vec![0.0; d];
    let mut c_prev = vec![0.0; d];
    let r = p.r.data();
    let b = p.b.data();
    for t in 0..t_len {
        let z = gates.row_mut(t);
        for j in 0..4 * d {
            z[j] += b[j] + dot(&r[j * d..(j + 1) * d], &h_prev);
        }
        gates_from_preactivation(z, d);
        let z = gates.row(t);
        let c_row = cells.row_mut(t);
        for k in 0..d {
            c_row[k] = z[d + k] * c_prev[k] + z[k] * z[2 * d + k];
        }
        c_prev.copy_from_slice(c_row);
        let tc = tanh_cells.row_mut(t);
        for k in 0..d {
            tc[k] = c_prev[k].tanh();
        }
        let h = out.row_mut(t);
        for k in 0..d {
            h[k] = z[3 * d + k] * tc[k];
        }
        h_prev.copy_from_slice(h);
    }
    out.check_finite()?;
    Ok(LayerIo {
        input: x.clone(),
        output: out,
        cache: LstmCache {
            gates,
            cells,
            tanh_cells,
        },
    })
}

/// Back-propagation through time for [`lstm_layer_forward`].
///
/// Returns the gradient with respect to the layer input and the parameter
/// gradients.
pub fn lstm_layer_backward(p: &LstmParams, io: &LayerIo<LstmCache>, grad_out: &Tensor) -> Result<(Tensor, LstmParams)> {
    let d = p.cell_dim();
    let t_len = io.input.rows();
    if io.output.shape() != [t_len, d]
        || io.cache.gates.shape() != [t_len, 4 * d]
        || io.cache.cells.shape() != [t_len, d]
        || io.input.shape()[1] != p.input_dim()
    {
        return Err(Error::State("lstm cache does not belong to these parameters".into()));
    }
    if grad_out.shape() != [t_len, d] {
        return Err(Error::dim(format!(
            "lstm upstream gradient must be {t_len}×{d}, got {:?}",
            grad_out.shape()
        )));
    }
    let gates = &io.cache.gates;
    let cells = &io.cache.cells;
    let tanh_cells = &io.cache.tanh_cells;
    let r = p.r.data();

    let mut dz_all = Tensor::zeros(&[t_len, 4 * d]);
    let mut dr = Tensor::zeros(&[4 * d, d]);
    let mut dh_next = vec![0.0; d];
    let mut dc_next = vec![0.0; d];
    let mut dh = vec![0.0; d];
    for t in (0..t_len).rev() {
        let g = gates.row(t);
        let tc = tanh_cells.row(t);
        let go = grad_out.row(t);
        for k in 0..d {
            dh[k] = go[k] + dh_next[k];
        }
        let dz = dz_all.row_mut(t);
        for k in 0..d {
            let (i, f, cand, o) = (g[k], g[d + k], g[2 * d + k], g[3 * d + k]);
            let c_prev = if t > 0 { cells.get(&[t - 1, k]) } else { 0.0 };
            let d_o = dh[k] * tc[k];
            let dc = dh[k] * o * (1.0 - tc[k] * tc[k]) + dc_next[k];
            dz[k] = dc * cand * i * (1.0 - i);
            dz[d + k] = dc * c_prev * f * (1.0 - f);
            dz[2 * d + k] = dc * i * (1.0 - cand * cand);
            dz[3 * d + k] = d_o * o * (1.0 - o);
            dc_next[k] = dc * f;
        }
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        let dz = dz_all.row(t);
        let drd = dr.data_mut();
        for j in 0..4 * d {
            let dzj = dz[j];
            if dzj == 0.0 {
                continue;
            }
            let rrow = &r[j * d..(j + 1) * d];
            for k in 0..d {
                dh_next[k] += rrow[k] * dzj;
            }
            if t > 0 {
                let h_prev = io.output.row(t - 1);
                let drow = &mut drd[j * d..(j + 1) * d];
                for k in 0..d {
                    drow[k] += dzj * h_prev[k];
                }
            }
        }
    }
    let dw = dz_all.t_matmul(&io.input)?;
    let db = dz_all.sum_rows();
    let dx = dz_all.matmul(&p.w)?;
    Ok((dx, LstmParams { w: dw, r: dr, b: db }))
}

/// Forward and backward weights of a bidirectional layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BlstmParams {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

impl BlstmParams {
    pub fn init(input_dim: usize, cell_dim: usize, rng: &mut Rng) -> Self {
        let fwd = LstmParams::init(input_dim, cell_dim, rng);
        let bwd = LstmParams::init(input_dim, cell_dim, rng);
        BlstmParams { fwd, bwd }
    }

    pub fn cell_dim(&self) -> usize {
        self.fwd.cell_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.fwd.input_dim()
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = self
            .fwd
            .tensors()
            .into_iter()
            .map(|(n, t)| (format!("fwd.{n}"), t))
            .collect();
        out.extend(self.bwd.tensors().into_iter().map(|(n, t)| (format!("bwd.{n}"), t)));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = self
            .fwd
            .tensors_mut()
            .into_iter()
            .map(|(n, t)| (format!("fwd.{n}"), t))
            .collect();
        out.extend(self.bwd.tensors_mut().into_iter().map(|(n, t)| (format!("bwd.{n}"), t)));
        out
    }

    pub fn zeros_like(&self) -> Self {
        BlstmParams {
            fwd: self.fwd.zeros_like(),
            bwd: self.bwd.zeros_like(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BlstmCache {
    pub fwd: LayerIo<LstmCache>,
    /// Runs over the time-reversed input.
    pub bwd: LayerIo<LstmCache>,
}

/// Bidirectional layer: output row `t` is `[h_fwd(t) ; h_bwd(t)]`, `T × 2d`.
pub fn blstm_layer(fwd: &LstmParams, bwd: &LstmParams, x: &Tensor) -> Result<LayerIo<BlstmCache>> {
    if fwd.cell_dim() != bwd.cell_dim() {
        return Err(Error::dim(format!(
            "bidirectional cell dims differ: {} vs {}",
            fwd.cell_dim(),
            bwd.cell_dim()
        )));
    }
    let f = lstm_layer_forward(fwd, x)?;
    let b = lstm_layer_forward(bwd, &x.reverse_rows())?;
    let output = Tensor::concat(&[&f.output, &b.output.reverse_rows()], 1)?;
    Ok(LayerIo {
        input: x.clone(),
        output,
        cache: BlstmCache { fwd: f, bwd: b },
    })
}

pub fn blstm_layer_backward(
    p: &BlstmParams,
    io: &LayerIo<BlstmCache>,
    grad_out: &Tensor,
) -> Result<(Tensor, BlstmParams)> {
    let d = p.cell_dim();
    let parts = grad_out.split(1, &[d, d])?;
    let (dx_f, g_f) = lstm_layer_backward(&p.fwd, &io.cache.fwd, &parts[0])?;
    let (dx_b, g_b) = lstm_layer_backward(&p.bwd, &io.cache.bwd, &parts[1].reverse_rows())?;
    let dx = dx_f.add(&dx_b.reverse_rows())?;
    Ok((dx, BlstmParams { fwd: g_f, bwd: g_b }))
}
