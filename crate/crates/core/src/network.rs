//! Calendar embedding, two blocks of dilated cells with a residual shortcut,
//! and the linear head producing point, lower, upper and the two smoothing
//! corrections.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::cell::{cell_step, CellSpec, CellState, CellVariant, CellVars, DRnnCellParams};
use crate::error::{Error, Result};
use crate::timeseries::{CALENDAR_WIDTH, DAYS_OF_MONTH, DAYS_OF_WEEK, HOURS_PER_DAY, HOURS_PER_WEEK};

/// Point + lower + upper + delta alpha + delta beta.
pub const HEAD_WIDTH: usize = 3 * HOURS_PER_DAY + 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub s_c: usize,
    pub s_h: usize,
    pub s_y: usize,
    pub dilations_block1: Vec<usize>,
    pub dilations_block2: Vec<usize>,
    pub embedding_dim: usize,
    pub cell_variant: CellVariant,
    /// Residual sum of block outputs before the head.
    pub use_shortcut: bool,
    /// Embed the calendar one-hots; otherwise they enter the first layer raw.
    pub use_embedding: bool,
    /// Deseasonalise with the ES tracker; otherwise only level-normalise.
    pub use_es: bool,
    pub seasonal_input: bool,
    pub level_input: bool,
    pub calendar_input: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            s_c: 100,
            s_h: 40,
            s_y: 60,
            dilations_block1: vec![2, 7],
            dilations_block2: vec![4],
            embedding_dim: 4,
            cell_variant: CellVariant::Full,
            use_shortcut: true,
            use_embedding: true,
            use_es: true,
            seasonal_input: true,
            level_input: true,
            calendar_input: true,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s_c != self.s_h + self.s_y {
            return Err(Error::Config(format!(
                "s_c={} must equal s_h + s_y = {}",
                self.s_c,
                self.s_h + self.s_y
            )));
        }
        if self.s_y == 0 || self.s_h == 0 {
            return Err(Error::Config("s_h and s_y must be positive".into()));
        }
        if self.dilations_block1.is_empty() {
            return Err(Error::Config("block 1 needs at least one layer".into()));
        }
        if self
            .dilations_block1
            .iter()
            .chain(&self.dilations_block2)
            .any(|&d| d == 0)
        {
            return Err(Error::Config("dilations must be at least 1".into()));
        }
        if self.calendar_input && self.use_embedding && self.embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be positive".into()));
        }
        Ok(())
    }

    fn seasonal_width(&self) -> usize {
        if self.seasonal_input && self.use_es {
            HOURS_PER_DAY
        } else {
            0
        }
    }

    fn calendar_feature_width(&self) -> usize {
        match (self.calendar_input, self.use_embedding) {
            (false, _) => 0,
            (true, true) => self.embedding_dim,
            (true, false) => CALENDAR_WIDTH,
        }
    }

    /// Width of the vector entering the first recurrent layer.
    pub fn rnn_input_width(&self) -> usize {
        HOURS_PER_WEEK + self.seasonal_width() + usize::from(self.level_input) + self.calendar_feature_width()
    }

    pub fn layer_specs(&self) -> Result<Vec<CellSpec>> {
        let mut specs = Vec::new();
        let mut input = self.rnn_input_width();
        for &d in self.dilations_block1.iter().chain(&self.dilations_block2) {
            let spec = CellSpec::new(input, self.s_c, self.s_h, self.s_y, d, self.cell_variant)?;
            input = spec.output_size();
            specs.push(spec);
        }
        Ok(specs)
    }

    fn embedding_enabled(&self) -> bool {
        self.calendar_input && self.use_embedding
    }
}

/// All trainable tensors of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub config: NetworkConfig,
    pub embedding: Option<Tensor>,
    pub cells: Vec<DRnnCellParams>,
    pub head_weight: Tensor,
    pub head_bias: Tensor,
}

impl NetworkParams {
    pub fn init(config: &NetworkConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let embedding = config.embedding_enabled().then(|| {
            let r = 1.0 / (CALENDAR_WIDTH as f64).sqrt();
            let data = (0..config.embedding_dim * CALENDAR_WIDTH)
                .map(|_| rng.random_range(-r..r))
                .collect();
            Tensor::from_vec(config.embedding_dim, CALENDAR_WIDTH, data).expect("shape")
        });
        let cells = config
            .layer_specs()?
            .into_iter()
            .map(|spec| DRnnCellParams::init(spec, rng))
            .collect();
        let r = 1.0 / (config.s_y as f64).sqrt();
        let head = (0..HEAD_WIDTH * config.s_y)
            .map(|_| rng.random_range(-r..r))
            .collect();
        Ok(NetworkParams {
            config: config.clone(),
            embedding,
            cells,
            head_weight: Tensor::from_vec(HEAD_WIDTH, config.s_y, head)?,
            head_bias: Tensor::zeros(HEAD_WIDTH, 1),
        })
    }

    /// Named tensors in a fixed order: embedding, layers, head.
    pub fn collect_parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        if let Some(e) = &self.embedding {
            out.push(("embedding".to_string(), e));
        }
        for (i, c) in self.cells.iter().enumerate() {
            out.push((format!("{}.weight", self.layer_name(i)), &c.weight));
            out.push((format!("{}.bias", self.layer_name(i)), &c.bias));
        }
        out.push(("head.weight".to_string(), &self.head_weight));
        out.push(("head.bias".to_string(), &self.head_bias));
        out
    }

    /// Same order as [`NetworkParams::collect_parameters`].
    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        if let Some(e) = &mut self.embedding {
            out.push(e);
        }
        for c in &mut self.cells {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.collect_parameters().iter().map(|(_, t)| t.len()).sum()
    }

    fn layer_name(&self, i: usize) -> String {
        let n1 = self.config.dilations_block1.len();
        if i < n1 {
            format!("block1.layer{i}")
        } else {
            format!("block2.layer{}", i - n1)
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<NetworkVars> {
        let embedding = match &self.embedding {
            Some(e) => Some(tape.leaf(e.clone())?),
            None => None,
        };
        let cells = self
            .cells
            .iter()
            .map(|c| c.bind(tape))
            .collect::<Result<Vec<_>>>()?;
        Ok(NetworkVars {
            config: self.config.clone(),
            embedding,
            cells,
            head_weight: tape.leaf(self.head_weight.clone())?,
            head_bias: tape.leaf(self.head_bias.clone())?,
        })
    }
}

/// Network parameters recorded on a tape.
#[derive(Debug, Clone)]
pub struct NetworkVars {
    pub config: NetworkConfig,
    pub embedding: Option<Var>,
    pub cells: Vec<CellVars>,
    pub head_weight: Var,
    pub head_bias: Var,
}

impl NetworkVars {
    /// Leaves in [`NetworkParams::collect_parameters`] order.
    pub fn leaves(&self) -> Vec<Var> {
        let mut out = Vec::new();
        out.extend(self.embedding);
        for c in &self.cells {
            out.push(c.weight);
            out.push(c.bias);
        }
        out.push(self.head_weight);
        out.push(self.head_bias);
        out
    }
}

/// Per-layer recurrent states.
#[derive(Debug, Clone)]
pub struct NetworkState {
    pub cells: Vec<CellState>,
}

impl NetworkState {
    pub fn new(tape: &mut Tape, vars: &NetworkVars, batch: usize) -> Result<Self> {
        Ok(NetworkState {
            cells: vars
                .cells
                .iter()
                .map(|c| CellState::new(tape, &c.spec, batch))
                .collect::<Result<Vec<_>>>()?,
        })
    }
}

impl NetworkState {
    pub fn detached(&self, from: &Tape, to: &mut Tape) -> Result<Self> {
        Ok(NetworkState {
            cells: self
                .cells
                .iter()
                .map(|c| c.detached(from, to))
                .collect::<Result<Vec<_>>>()?,
        })
    }
}

/// Inputs of one daily step; columns are series.
#[derive(Debug, Clone, Copy)]
pub struct StepInputs {
    /// 168 x b deseasonalised, normalised, log-squashed input window.
    pub x_in: Var,
    /// 24 x b seasonal factors of the output day minus one.
    pub seasonal: Option<Var>,
    /// 1 x b log10 of the input-window mean.
    pub level: Option<Var>,
    /// 90 x b calendar one-hots of the output day.
    pub calendar: Option<Var>,
}

/// Split head output on the tape.
#[derive(Debug, Clone, Copy)]
pub struct NetworkOutput {
    pub x_hat: Var,
    pub x_lower: Var,
    pub x_upper: Var,
    pub delta_alpha: Var,
    pub delta_beta: Var,
    /// The whole 74 x b head output.
    pub raw: Var,
}

/// Head output of one column as plain values.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadValues {
    pub x_hat: Vec<f64>,
    pub x_lower: Vec<f64>,
    pub x_upper: Vec<f64>,
    pub delta_alpha: f64,
    pub delta_beta: f64,
}

impl HeadValues {
    pub fn from_raw(raw: &[f64]) -> Result<Self> {
        if raw.len() != HEAD_WIDTH {
            return Err(Error::ShapeMismatch {
                op: "head",
                lhs: (HEAD_WIDTH, 1),
                rhs: (raw.len(), 1),
            });
        }
        let h = HOURS_PER_DAY;
        Ok(HeadValues {
            x_hat: raw[..h].to_vec(),
            x_lower: raw[h..2 * h].to_vec(),
            x_upper: raw[2 * h..3 * h].to_vec(),
            delta_alpha: raw[3 * h],
            delta_beta: raw[3 * h + 1],
        })
    }
}

impl NetworkOutput {
    pub fn values(&self, tape: &Tape, column: usize) -> Result<HeadValues> {
        HeadValues::from_raw(&tape.value(self.raw).column_values(column))
    }
}

/// Linear map of the 90-wide calendar one-hots; each block must be one-hot.
pub fn embed_calendar(tape: &mut Tape, embedding: Var, one_hot: Var) -> Result<Var> {
    let t = tape.value(one_hot);
    if t.rows() != CALENDAR_WIDTH {
        return Err(Error::ShapeMismatch {
            op: "embed_calendar",
            lhs: (CALENDAR_WIDTH, t.cols()),
            rhs: t.shape(),
        });
    }
    let blocks = [
        0..DAYS_OF_WEEK,
        DAYS_OF_WEEK..DAYS_OF_WEEK + DAYS_OF_MONTH,
        DAYS_OF_WEEK + DAYS_OF_MONTH..CALENDAR_WIDTH,
    ];
    for c in 0..t.cols() {
        for b in &blocks {
            let mut ones = 0;
            for r in b.clone() {
                match t.get(r, c) {
                    v if v == 1.0 => ones += 1,
                    v if v == 0.0 => {}
                    v => {
                        return Err(Error::invalid(format!("calendar input {v} is not binary")));
                    }
                }
            }
            if ones != 1 {
                return Err(Error::invalid(format!(
                    "calendar block {b:?} of column {c} has {ones} ones"
                )));
            }
        }
    }
    tape.matmul(embedding, one_hot)
}

pub fn network_step(
    tape: &mut Tape,
    vars: &NetworkVars,
    inputs: &StepInputs,
    state: &mut NetworkState,
) -> Result<NetworkOutput> {
    let cfg = &vars.config;
    let mut parts = vec![inputs.x_in];
    if cfg.use_es && cfg.seasonal_input {
        parts.push(inputs.seasonal.ok_or_else(|| Error::invalid("seasonal input missing"))?);
    }
    if cfg.level_input {
        parts.push(inputs.level.ok_or_else(|| Error::invalid("level input missing"))?);
    }
    if cfg.calendar_input {
        let cal = inputs.calendar.ok_or_else(|| Error::invalid("calendar input missing"))?;
        match vars.embedding {
            Some(e) => parts.push(embed_calendar(tape, e, cal)?),
            None => parts.push(cal),
        }
    }
    let x = tape.concat_rows(&parts)?;

    let n1 = cfg.dilations_block1.len();
    let mut y = x;
    for (cell, st) in vars.cells[..n1].iter().zip(&mut state.cells[..n1]) {
        y = cell_step(tape, cell, st, y)?;
    }
    let block1 = y;
    let mut head_in = block1;
    if vars.cells.len() > n1 {
        for (cell, st) in vars.cells[n1..].iter().zip(&mut state.cells[n1..]) {
            y = cell_step(tape, cell, st, y)?;
        }
        head_in = if cfg.use_shortcut { tape.add(y, block1)? } else { y };
    }
    head(tape, vars, head_in)
}

/// Linear head and its split into the five outputs.
pub fn head(tape: &mut Tape, vars: &NetworkVars, input: Var) -> Result<NetworkOutput> {
    let wy = tape.matmul(vars.head_weight, input)?;
    let raw = tape.add(wy, vars.head_bias)?;
    let h = HOURS_PER_DAY;
    Ok(NetworkOutput {
        x_hat: tape.slice_rows(raw, 0, h)?,
        x_lower: tape.slice_rows(raw, h, 2 * h)?,
        x_upper: tape.slice_rows(raw, 2 * h, 3 * h)?,
        delta_alpha: tape.slice_rows(raw, 3 * h, 3 * h + 1)?,
        delta_beta: tape.slice_rows(raw, 3 * h + 1, 3 * h + 2)?,
        raw,
    })
}
