//! Pinball losses, Adam, the epoch schedule and ensemble training.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::es::EsState;
use crate::model::{Model, ModelConfig};
use crate::network::{network_step, HeadValues, NetworkOutput, NetworkState};
use crate::pipeline::{sequence_hours, StepData, TrainingSample, Unroll, Window};
use crate::timeseries::{HourlySeries, HOURS_PER_DAY};

/// `(z - zh) q` when `z >= zh`, else `(z - zh)(q - 1)`.
pub fn pinball_value(z: f64, zh: f64, q: f64) -> f64 {
    let e = z - zh;
    if e >= 0.0 {
        e * q
    } else {
        e * (q - 1.0)
    }
}

pub fn pinball(z: f64, zh: f64, q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid(format!("quantile order {q} outside (0, 1)")));
    }
    Ok(pinball_value(z, zh, q))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub q_center: f64,
    pub q_lower: f64,
    pub q_upper: f64,
    /// Weight of the two interval terms.
    pub gamma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            q_center: 0.49,
            q_lower: 0.035,
            q_upper: 0.96,
            gamma: 0.3,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = 0.0 < self.q_lower && self.q_lower < self.q_center && self.q_center < self.q_upper && self.q_upper < 1.0;
        if !ordered {
            return Err(Error::Config(format!(
                "quantiles must satisfy 0 < {} < {} < {} < 1",
                self.q_lower, self.q_center, self.q_upper
            )));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma {} must be non-negative", self.gamma)));
        }
        Ok(())
    }
}

/// Loss of one series on one day, averaged over the 24 hours.
pub fn step_loss(sample: &TrainingSample, out: &HeadValues, cfg: &LossConfig) -> Result<f64> {
    if sample.warmup {
        return Err(Error::invalid("warm-up samples carry no loss"));
    }
    let n = sample.z_out_normalized.len();
    if [out.x_hat.len(), out.x_lower.len(), out.x_upper.len(), sample.s_hat_out_raw.len()]
        .iter()
        .any(|&l| l != n)
    {
        return Err(Error::invalid("step_loss inputs differ in length"));
    }
    let mut total = 0.0;
    for h in 0..n {
        let z = sample.z_out_normalized[h];
        let s = sample.s_hat_out_raw[h];
        total += pinball(z, out.x_hat[h].exp() * s, cfg.q_center)?
            + cfg.gamma
                * (pinball(z, out.x_lower[h].exp() * s, cfg.q_lower)?
                    + pinball(z, out.x_upper[h].exp() * s, cfg.q_upper)?);
    }
    Ok(total / n as f64)
}

/// Tape version of [`step_loss`], averaged over hours and batch columns.
pub fn step_loss_on_tape(tape: &mut Tape, out: &NetworkOutput, data: &StepData, cfg: &LossConfig) -> Result<Var> {
    let target = data
        .target
        .ok_or_else(|| Error::invalid("loss needs the output-day target"))?;
    let term = |tape: &mut Tape, x: Var, q: f64| -> Result<Var> {
        let e = tape.exp(x)?;
        let pred = match data.s_out {
            Some(s) => tape.mul(e, s)?,
            None => e,
        };
        let rho = tape.pinball(pred, target, q)?;
        tape.mean(rho)
    };
    let center = term(tape, out.x_hat, cfg.q_center)?;
    let lower = term(tape, out.x_lower, cfg.q_lower)?;
    let upper = term(tape, out.x_upper, cfg.q_upper)?;
    let pi = tape.add(lower, upper)?;
    let pi = tape.scalar_mul(pi, cfg.gamma)?;
    tape.add(center, pi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(shapes: &[(usize, usize)]) -> Self {
        AdamState {
            m: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam step.
pub fn adam_update(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::invalid(format!(
            "adam: {} parameters, {} gradients, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_update",
                lhs: p.shape(),
                rhs: g.shape(),
            });
        }
    }
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        for (mk, gk) in m.iter_mut().zip(g) {
            *mk = b1 * *mk + (1.0 - b1) * gk;
        }
        let v = state.v[i].data_mut();
        for (vk, gk) in v.iter_mut().zip(g) {
            *vk = b2 * *vk + (1.0 - b2) * gk * gk;
        }
        let (m, v) = (state.m[i].data(), state.v[i].data());
        for ((pk, mk), vk) in p.data_mut().iter_mut().zip(m).zip(v) {
            *pk -= lr * (mk / c1) / ((vk / c2).sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales gradients to a global L2 norm of at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::squared_norm).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale_in_place(k);
        }
    }
    norm
}

/// Number of passes over all series making up one epoch.
pub fn sub_epochs(max_updates: usize, batch: usize, series: usize, p: f64) -> usize {
    if series == 0 {
        return 1;
    }
    let r = (max_updates as f64 * batch as f64 / series as f64).powf(p);
    (r.round() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSchedule {
    pub epochs: usize,
    /// Batch size per epoch.
    pub batch_sizes: Vec<usize>,
    /// Learning rate per epoch.
    pub learning_rates: Vec<f64>,
    /// Loss-bearing daily steps per update.
    pub l_o: usize,
    /// Warm-up weeks before the loss-bearing steps.
    pub w_o: usize,
    /// Warm-up weeks replayed before each forecast.
    pub w_s: usize,
    /// N, the maximum number of updates per epoch.
    pub max_updates: usize,
    pub p: f64,
    pub ensemble_size: usize,
    pub clip_norm: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainSchedule {
    /// Full-scale schedule.
    pub fn full() -> Self {
        TrainSchedule {
            epochs: 9,
            batch_sizes: vec![2, 2, 2, 5, 5, 5, 5, 5, 5],
            learning_rates: vec![3e-3, 3e-3, 3e-3, 3e-3, 1e-3, 3e-4, 1e-4, 1e-4, 1e-4],
            l_o: 50,
            w_o: 3,
            w_s: 13,
            max_updates: 100,
            p: 0.7,
            ensemble_size: 100,
            clip_norm: 20.0,
        }
    }

    /// Shorter sequences and a small ensemble for a single desktop core.
    /// The test warm-up is cut to match: its replay stays within the
    /// sequence length the network was trained on.
    pub fn desk() -> Self {
        TrainSchedule {
            l_o: 20,
            w_s: 6,
            ensemble_size: 5,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.max_updates == 0 || self.ensemble_size == 0 {
            return bad("epochs, max_updates and ensemble_size must be positive".into());
        }
        if self.batch_sizes.len() != self.epochs || self.learning_rates.len() != self.epochs {
            return bad(format!(
                "schedule lists must have one entry per epoch ({}), got {} batch sizes and {} learning rates",
                self.epochs,
                self.batch_sizes.len(),
                self.learning_rates.len()
            ));
        }
        if self.batch_sizes.contains(&0) {
            return bad("batch sizes must be positive".into());
        }
        if self.learning_rates.iter().any(|lr| !(lr.is_finite() && *lr > 0.0)) {
            return bad("learning rates must be positive".into());
        }
        if self.w_s == 0 {
            return bad("w_s must be at least one week".into());
        }
        if !(0.0..=1.0).contains(&self.p) {
            return bad(format!("p = {} must lie in [0, 1]", self.p));
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive".into());
        }
        Ok(())
    }

    /// Daily steps in one training sequence.
    pub fn sequence_steps(&self) -> usize {
        7 * self.w_o + self.l_o
    }

    pub fn warmup_steps(&self) -> usize {
        7 * self.w_o
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub updates: usize,
    pub mean_loss: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl fmt::Display for EpochReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} updates={} loss={:.6} lr={} batch={}",
            self.epoch, self.updates, self.mean_loss, self.learning_rate, self.batch_size
        )
    }
}

/// Series long enough for one training sequence; the rest are logged and
/// dropped.
pub fn eligible_series<'a>(data: &'a [HourlySeries], schedule: &TrainSchedule) -> Vec<&'a HourlySeries> {
    let needed = sequence_hours(schedule.sequence_steps());
    data.iter()
        .filter(|s| {
            let ok = s.len() >= s.first_midnight() + needed;
            if !ok {
                log::warn!(
                    "series {} excluded from training: needs {} hours from its first midnight, has {}",
                    s.id(),
                    needed,
                    s.len().saturating_sub(s.first_midnight())
                );
            }
            ok
        })
        .collect()
}

fn random_start(series: &HourlySeries, needed: usize, rng: &mut impl Rng) -> usize {
    let m0 = series.first_midnight();
    let last = (series.len() - m0 - needed) / HOURS_PER_DAY;
    m0 + HOURS_PER_DAY * rng.random_range(0..=last)
}

/// Runs one batch of sequences, returns the mean loss and the gradients in
/// parameter order.
pub fn batch_gradients(
    model: &Model,
    windows: Vec<Window>,
    schedule: &TrainSchedule,
    loss: &LossConfig,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let vars = model.params.bind(&mut tape)?;
    let batch = windows.len();
    let mut unroll = Unroll::new(&mut tape, windows, model.config.es)?;
    let mut state = NetworkState::new(&mut tape, &vars, batch)?;
    let steps = schedule.sequence_steps();
    let warmup = schedule.warmup_steps();
    let mut losses = Vec::with_capacity(schedule.l_o);
    for t in 0..steps {
        let data = unroll.prepare(&mut tape, t >= warmup)?;
        let out = network_step(&mut tape, &vars, &data.inputs, &mut state)?;
        if t >= warmup {
            losses.push(step_loss_on_tape(&mut tape, &out, &data, loss)?);
        }
        if t + 1 < steps {
            unroll.advance(&mut tape, &out)?;
        }
    }
    let total = match losses.split_first() {
        None => tape.constant(Tensor::scalar(0.0))?,
        Some((first, rest)) => {
            let mut acc = *first;
            for l in rest {
                acc = tape.add(acc, *l)?;
            }
            tape.scalar_mul(acc, 1.0 / losses.len() as f64)?
        }
    };
    let value = tape.value(total).item();
    let mut grads = tape.backward(total)?;
    let out = vars
        .leaves()
        .into_iter()
        .map(|v| grads.take(v).unwrap_or_else(|| Tensor::zeros(tape.shape(v).0, tape.shape(v).1)))
        .collect();
    Ok((value, out))
}

/// One epoch: `n_o` passes over the series in shuffled batches, one Adam
/// update per batch. Each batch column gets its own random start; the last
/// batch of a pass is topped up with randomly drawn series.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    model: &mut Model,
    adam: &mut AdamState,
    data: &[&HourlySeries],
    schedule: &TrainSchedule,
    loss: &LossConfig,
    epoch_index: usize,
    rng: &mut impl Rng,
) -> Result<EpochReport> {
    if data.is_empty() {
        return Err(Error::invalid("no series long enough for training"));
    }
    let e = epoch_index.min(schedule.epochs - 1);
    let (b, lr) = (schedule.batch_sizes[e], schedule.learning_rates[e]);
    let n_o = sub_epochs(schedule.max_updates, b, data.len(), schedule.p);
    let needed = sequence_hours(schedule.sequence_steps());
    let mut updates = 0;
    let mut loss_sum = 0.0;
    for _ in 0..n_o {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(rng);
        for chunk in order.chunks(b) {
            let mut picks = chunk.to_vec();
            while picks.len() < b {
                picks.push(rng.random_range(0..data.len()));
            }
            let windows = picks
                .iter()
                .map(|&i| Window {
                    series: data[i],
                    start: random_start(data[i], needed, rng),
                })
                .collect();
            let (value, mut grads) = batch_gradients(model, windows, schedule, loss)?;
            clip_global_norm(&mut grads, schedule.clip_norm);
            adam_update(&mut model.params.parameters_mut(), &grads, adam, lr)?;
            loss_sum += value;
            updates += 1;
        }
    }
    Ok(EpochReport {
        epoch: epoch_index + 1,
        updates,
        mean_loss: loss_sum / updates as f64,
        learning_rate: lr,
        batch_size: b,
    })
}

/// RNG stream used for sampling batches; initialisation uses stream 0.
pub const SAMPLING_STREAM: u64 = 1;

/// One trained ensemble member.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedMember {
    pub seed: u64,
    pub model: Model,
    pub reports: Vec<EpochReport>,
    /// ES state of every training series after replaying its last `w_s` weeks.
    pub es_states: BTreeMap<String, EsState>,
    /// Position of the sampling stream after training.
    pub rng_word_pos: u128,
}

pub fn train_member(
    data: &[HourlySeries],
    config: &ModelConfig,
    schedule: &TrainSchedule,
    loss: &LossConfig,
    seed: u64,
) -> Result<TrainedMember> {
    config.validate()?;
    schedule.validate()?;
    loss.validate()?;
    let eligible = eligible_series(data, schedule);
    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::init(config, &mut init_rng)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SAMPLING_STREAM);
    let shapes: Vec<_> = model.params.collect_parameters().iter().map(|(_, t)| t.shape()).collect();
    let mut adam = AdamState::new(&shapes);
    let mut reports = Vec::with_capacity(schedule.epochs);
    for epoch in 0..schedule.epochs {
        let report = train_epoch(&mut model, &mut adam, &eligible, schedule, loss, epoch, &mut rng)?;
        log::info!("seed={seed} {report}");
        reports.push(report);
    }
    let mut es_states = BTreeMap::new();
    for s in &eligible {
        if let Some(st) = crate::forecasting::final_es_state(&model, s, schedule.w_s)? {
            es_states.insert(s.id().to_string(), st);
        }
    }
    Ok(TrainedMember {
        seed,
        model,
        reports,
        es_states,
        rng_word_pos: rng.get_word_pos(),
    })
}

/// Trains one member per seed in parallel; members differ only in seed.
pub fn train_ensemble(
    data: &[HourlySeries],
    config: &ModelConfig,
    schedule: &TrainSchedule,
    loss: &LossConfig,
    seeds: &[u64],
) -> Result<Vec<TrainedMember>> {
    if seeds.is_empty() {
        return Err(Error::invalid("ensemble needs at least one seed"));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = seeds.iter().find(|s| !seen.insert(**s)) {
        return Err(Error::invalid(format!("duplicate seed {dup}")));
    }
    seeds
        .par_iter()
        .map(|&seed| train_member(data, config, schedule, loss, seed))
        .collect()
}
