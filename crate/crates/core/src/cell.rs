//! Dilated recurrent cell fed by both the most recent and a delayed state.
//!
//! ```text
//! f, u, o = sigmoid(W x + V h[t-1] + U h[t-d] + b)
//! cand    = tanh(W_c x + V_c h[t-1] + U_c h[t-d] + b_c)
//! c       = u * (f * c[t-1] + (1 - f) * c[t-d]) + (1 - u) * cand
//! h'      = o * c;   y = h'[..s_y];   h = h'[s_y..]
//! ```
//!
//! The four gate weight sets are stored stacked in one matrix so a step is a
//! single matmul over `[x; h[t-1]; h[t-d]]`.

use std::collections::VecDeque;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CellVariant {
    #[default]
    Full,
    /// No fusion gate; the delayed c-state (recent before it exists) is mixed
    /// with the candidate.
    NoFusion,
    /// Every delayed reference replaced by the recent state.
    NoDilation,
    /// Every recent reference replaced by the delayed state.
    NoRecent,
    /// Standard LSTM with hidden size `s_y`; no delayed connections.
    ClassicLstm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Fusion,
    Update,
    Output,
    Candidate,
}

/// Sizes and wiring of one recurrent layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellSpec {
    pub input_size: usize,
    pub s_c: usize,
    pub s_h: usize,
    pub s_y: usize,
    pub dilation: usize,
    pub variant: CellVariant,
}

impl CellSpec {
    pub fn new(
        input_size: usize,
        s_c: usize,
        s_h: usize,
        s_y: usize,
        dilation: usize,
        variant: CellVariant,
    ) -> Result<Self> {
        if s_c != s_h + s_y {
            return Err(Error::Config(format!(
                "cell size s_c={s_c} must equal s_h + s_y = {}",
                s_h + s_y
            )));
        }
        if dilation == 0 || input_size == 0 || s_y == 0 {
            return Err(Error::Config("cell sizes and dilation must be positive".into()));
        }
        Ok(CellSpec {
            input_size,
            s_c,
            s_h,
            s_y,
            dilation,
            variant,
        })
    }

    fn gate_count(&self) -> usize {
        match self.variant {
            CellVariant::NoFusion => 3,
            _ => 4,
        }
    }

    /// Width of the c-state.
    pub fn state_size(&self) -> usize {
        match self.variant {
            CellVariant::ClassicLstm => self.s_y,
            _ => self.s_c,
        }
    }

    /// Width of the controlling h-state fed back into the gates.
    pub fn hidden_size(&self) -> usize {
        match self.variant {
            CellVariant::ClassicLstm => self.s_y,
            _ => self.s_h,
        }
    }

    fn recurrent_inputs(&self) -> usize {
        match self.variant {
            CellVariant::ClassicLstm => self.s_y,
            _ => 2 * self.s_h,
        }
    }

    pub fn weight_shape(&self) -> (usize, usize) {
        (
            self.gate_count() * self.state_size(),
            self.input_size + self.recurrent_inputs(),
        )
    }

    /// Rows of the stacked weight matrix belonging to `gate`.
    pub fn gate_rows(&self, gate: Gate) -> Option<Range<usize>> {
        let slot = match (self.variant, gate) {
            (CellVariant::NoFusion, Gate::Fusion) => return None,
            (CellVariant::NoFusion, Gate::Update) => 0,
            (CellVariant::NoFusion, Gate::Output) => 1,
            (CellVariant::NoFusion, Gate::Candidate) => 2,
            (_, Gate::Fusion) => 0,
            (_, Gate::Update) => 1,
            (_, Gate::Output) => 2,
            (_, Gate::Candidate) => 3,
        };
        let n = self.state_size();
        Some(slot * n..(slot + 1) * n)
    }

    /// Columns multiplying the input (W), the recent h (V) and the delayed h (U).
    pub fn input_cols(&self) -> Range<usize> {
        0..self.input_size
    }

    pub fn recent_cols(&self) -> Range<usize> {
        self.input_size..self.input_size + self.hidden_size()
    }

    pub fn delayed_cols(&self) -> Option<Range<usize>> {
        match self.variant {
            CellVariant::ClassicLstm => None,
            _ => Some(self.input_size + self.s_h..self.input_size + 2 * self.s_h),
        }
    }

    pub fn output_size(&self) -> usize {
        self.s_y
    }

    pub fn parameter_count(&self) -> usize {
        let (r, c) = self.weight_shape();
        r * c + r
    }
}

/// Trainable weights of one layer: stacked gate matrices and biases.
#[derive(Debug, Clone, PartialEq)]
pub struct DRnnCellParams {
    pub spec: CellSpec,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl DRnnCellParams {
    pub fn zeros(spec: CellSpec) -> Self {
        let (r, c) = spec.weight_shape();
        DRnnCellParams {
            spec,
            weight: Tensor::zeros(r, c),
            bias: Tensor::zeros(r, 1),
        }
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` weights, zero biases.
    pub fn init(spec: CellSpec, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(spec);
        let r = 1.0 / (p.weight.cols() as f64).sqrt();
        for w in p.weight.data_mut() {
            *w = rng.random_range(-r..r);
        }
        p
    }

    pub fn set_gate_bias(&mut self, gate: Gate, value: f64) {
        if let Some(rows) = self.spec.gate_rows(gate) {
            for r in rows {
                self.bias.set(r, 0, value);
            }
        }
    }

    /// Zeroes the recurrent block `cols` for every gate.
    pub fn zero_columns(&mut self, cols: Range<usize>) {
        for r in 0..self.weight.rows() {
            for c in cols.clone() {
                self.weight.set(r, c, 0.0);
            }
        }
    }

    /// Places both tensors on `tape` as trainable leaves.
    pub fn bind(&self, tape: &mut Tape) -> Result<CellVars> {
        Ok(CellVars {
            spec: self.spec,
            weight: tape.leaf(self.weight.clone())?,
            bias: tape.leaf(self.bias.clone())?,
        })
    }
}

/// A layer's parameters as recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct CellVars {
    pub spec: CellSpec,
    pub weight: Var,
    pub bias: Var,
}

/// Recent and delayed (c, h) states; the back of the queue is `t-1`.
#[derive(Debug, Clone)]
pub struct CellState {
    history: VecDeque<(Var, Var)>,
    capacity: usize,
}

impl CellState {
    /// Zero initial states for a batch of `batch` columns.
    pub fn new(tape: &mut Tape, spec: &CellSpec, batch: usize) -> Result<Self> {
        let c = tape.constant(Tensor::zeros(spec.state_size(), batch))?;
        let h = tape.constant(Tensor::zeros(spec.hidden_size(), batch))?;
        let mut history = VecDeque::with_capacity(spec.dilation + 1);
        history.push_back((c, h));
        Ok(CellState {
            history,
            capacity: spec.dilation.max(1),
        })
    }

    pub fn recent(&self) -> (Var, Var) {
        *self.history.back().expect("state history is never empty")
    }

    /// State `t-d`, or the earliest one kept while fewer than `d` exist.
    pub fn delayed(&self, d: usize) -> (Var, Var) {
        let len = self.history.len();
        if len >= d {
            self.history[len - d]
        } else {
            self.history[0]
        }
    }

    pub fn delayed_available(&self, d: usize) -> bool {
        self.history.len() >= d
    }

    pub fn depth(&self) -> usize {
        self.history.len()
    }

    /// Copy of the state whose values live on `to` as constants, cutting
    /// the graph so long inference runs can start fresh tapes.
    pub fn detached(&self, from: &Tape, to: &mut Tape) -> Result<CellState> {
        let history = self
            .history
            .iter()
            .map(|&(c, h)| Ok((to.constant(from.value(c).clone())?, to.constant(from.value(h).clone())?)))
            .collect::<Result<VecDeque<_>>>()?;
        Ok(CellState {
            history,
            capacity: self.capacity,
        })
    }

    fn push(&mut self, c: Var, h: Var) {
        self.history.push_back((c, h));
        while self.history.len() > self.capacity {
            self.history.pop_front();
        }
    }
}

/// One recurrent step; returns the `s_y`-row output.
pub fn cell_step(tape: &mut Tape, vars: &CellVars, state: &mut CellState, x: Var) -> Result<Var> {
    let spec = vars.spec;
    let (rows, cols) = tape.shape(x);
    if rows != spec.input_size {
        return Err(Error::ShapeMismatch {
            op: "cell_step",
            lhs: (spec.input_size, cols),
            rhs: (rows, cols),
        });
    }
    let d = spec.dilation;
    let (mut c1, mut h1) = state.recent();
    let (mut cd, mut hd) = state.delayed(d);
    match spec.variant {
        CellVariant::NoDilation => (cd, hd) = (c1, h1),
        CellVariant::NoRecent => (c1, h1) = (cd, hd),
        _ => {}
    }
    let n = spec.state_size();

    if spec.variant == CellVariant::ClassicLstm {
        let z = tape.concat_rows(&[x, h1])?;
        let wz = tape.matmul(vars.weight, z)?;
        let pre = tape.add(wz, vars.bias)?;
        let gates = tape.slice_rows(pre, 0, 3 * n)?;
        let gates = tape.sigmoid(gates)?;
        let f = tape.slice_rows(gates, 0, n)?;
        let i = tape.slice_rows(gates, n, 2 * n)?;
        let o = tape.slice_rows(gates, 2 * n, 3 * n)?;
        let g = tape.slice_rows(pre, 3 * n, 4 * n)?;
        let g = tape.tanh(g)?;
        let keep = tape.mul(f, c1)?;
        let write = tape.mul(i, g)?;
        let c = tape.add(keep, write)?;
        let tc = tape.tanh(c)?;
        let h = tape.mul(o, tc)?;
        state.push(c, h);
        return Ok(h);
    }

    let z = tape.concat_rows(&[x, h1, hd])?;
    let wz = tape.matmul(vars.weight, z)?;
    let pre = tape.add(wz, vars.bias)?;
    let sig_rows = (spec.gate_count() - 1) * n;
    let gates = tape.slice_rows(pre, 0, sig_rows)?;
    let gates = tape.sigmoid(gates)?;
    let cand = tape.slice_rows(pre, sig_rows, sig_rows + n)?;
    let cand = tape.tanh(cand)?;

    let (u, o, past) = if spec.variant == CellVariant::NoFusion {
        let u = tape.slice_rows(gates, 0, n)?;
        let o = tape.slice_rows(gates, n, 2 * n)?;
        let past = if state.delayed_available(d) { cd } else { c1 };
        (u, o, past)
    } else {
        let f = tape.slice_rows(gates, 0, n)?;
        let u = tape.slice_rows(gates, n, 2 * n)?;
        let o = tape.slice_rows(gates, 2 * n, 3 * n)?;
        // f * c1 + (1 - f) * cd
        let fc1 = tape.mul(f, c1)?;
        let one_minus_f = tape.one_minus(f)?;
        let fcd = tape.mul(one_minus_f, cd)?;
        let past = tape.add(fc1, fcd)?;
        (u, o, past)
    };
    let kept = tape.mul(u, past)?;
    let one_minus_u = tape.one_minus(u)?;
    let fresh = tape.mul(one_minus_u, cand)?;
    let c = tape.add(kept, fresh)?;
    let h_full = tape.mul(o, c)?;
    let y = tape.slice_rows(h_full, 0, spec.s_y)?;
    let h = tape.slice_rows(h_full, spec.s_y, spec.s_c)?;
    state.push(c, h);
    Ok(y)
}
