//! Daily windowing around the ES tracker: deseasonalised, normalised and
//! log-squashed input patterns, the inverse transform of forecasts, and the
//! tape-recorded unroll used by training and inference.
//!
//! A sequence starting at hour `h0` (a midnight) initialises ES from
//! `[h0, h0 + 168)` and processes that week. Step `t` then reads the input
//! window `[h0 + 24t, h0 + 24t + 168)` and forecasts the following 24 hours.

use std::collections::VecDeque;

use chrono::{NaiveDate, Timelike};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::es::{EsState, INITIAL_ALPHA_LOGIT, INITIAL_BETA_LOGIT, SEASON};
use crate::network::{NetworkOutput, StepInputs};
use crate::timeseries::{calendar_for, CalendarFeatures, HourlySeries, HOURS_PER_DAY, HOURS_PER_WEEK};

/// Hours a sequence of `steps` daily steps reads, including the ES
/// initialisation week and the last output day.
pub fn sequence_hours(steps: usize) -> usize {
    HOURS_PER_WEEK + HOURS_PER_DAY * steps
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EsSettings {
    /// Without ES, inputs are only level-normalised and forecasts use a unit
    /// seasonal component.
    pub enabled: bool,
    pub i_alpha: f64,
    pub i_beta: f64,
}

impl Default for EsSettings {
    fn default() -> Self {
        EsSettings {
            enabled: true,
            i_alpha: INITIAL_ALPHA_LOGIT,
            i_beta: INITIAL_BETA_LOGIT,
        }
    }
}

/// ES state of one series plus the seasonal factors it applied to the last
/// 168 processed hours, which deseasonalise the next input window.
#[derive(Debug, Clone, PartialEq)]
pub struct EsTracker {
    state: EsState,
    used: VecDeque<f64>,
    start: usize,
    step: usize,
}

impl EsTracker {
    /// Initialises from `[start, start + 168)` and processes that week.
    pub fn start(series: &HourlySeries, start: usize, i_alpha: f64, i_beta: f64) -> Result<Self> {
        let needed = start + SEASON;
        if needed > series.len() {
            return Err(Error::InsufficientHistory {
                series: series.id().to_string(),
                needed,
                available: series.len(),
            });
        }
        let week = &series.values()[start..needed];
        let mut state = EsState::init(week, i_alpha, i_beta)?;
        let mut used = VecDeque::with_capacity(SEASON + 1);
        for &z in week {
            used.push_back(state.seasonal[0]);
            state.hw_step(z)?;
        }
        Ok(EsTracker { state, used, start, step: 0 })
    }

    pub fn state(&self) -> &EsState {
        &self.state
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// First hour of the current input window.
    pub fn input_start(&self) -> usize {
        self.start + HOURS_PER_DAY * self.step
    }

    pub fn output_start(&self) -> usize {
        self.input_start() + HOURS_PER_WEEK
    }

    /// Seasonal factors used for the current input window, oldest first.
    pub fn used_seasonal(&self) -> &VecDeque<f64> {
        &self.used
    }
}

/// One daily pattern pair of a single series.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub x_in: Vec<f64>,
    /// Output-day seasonal factors minus one.
    pub s_hat: Vec<f64>,
    pub level_log: f64,
    pub calendar: CalendarFeatures,
    pub x_out: Vec<f64>,
    pub z_out_normalized: Vec<f64>,
    pub s_hat_out_raw: Vec<f64>,
    pub z_bar: f64,
    pub warmup: bool,
}

pub fn make_sample(series: &HourlySeries, tracker: &EsTracker, t: usize, warmup: bool) -> Result<TrainingSample> {
    if t != tracker.step() {
        return Err(Error::invalid(format!(
            "tracker is at step {}, sample requested for step {t}",
            tracker.step()
        )));
    }
    let (i0, o0) = (tracker.input_start(), tracker.output_start());
    if o0 + HOURS_PER_DAY > series.len() {
        return Err(Error::InsufficientHistory {
            series: series.id().to_string(),
            needed: o0 + HOURS_PER_DAY,
            available: series.len(),
        });
    }
    let input = &series.values()[i0..o0];
    let output = &series.values()[o0..o0 + HOURS_PER_DAY];
    let z_bar = input.iter().sum::<f64>() / HOURS_PER_WEEK as f64;
    if !(z_bar > 0.0 && z_bar.is_finite()) {
        return Err(Error::series(series.id(), format!("window mean {z_bar} is not positive")));
    }
    let s_out = tracker.state.seasonal_window(0, HOURS_PER_DAY)?.to_vec();
    let x_in = input
        .iter()
        .zip(&tracker.used)
        .map(|(z, s)| (z / (z_bar * s)).ln())
        .collect();
    let x_out = output
        .iter()
        .zip(&s_out)
        .map(|(z, s)| (z / (z_bar * s)).ln())
        .collect();
    Ok(TrainingSample {
        x_in,
        s_hat: s_out.iter().map(|s| s - 1.0).collect(),
        level_log: z_bar.log10(),
        calendar: calendar_for(series.timestamp_at(o0).date()),
        x_out,
        z_out_normalized: output.iter().map(|z| z / z_bar).collect(),
        s_hat_out_raw: s_out,
        z_bar,
        warmup,
    })
}

/// `exp(x_hat) * z_bar * s` per hour.
pub fn postprocess(x_hat: &[f64], z_bar: f64, s_out: &[f64]) -> Result<Vec<f64>> {
    if x_hat.len() != s_out.len() {
        return Err(Error::ShapeMismatch {
            op: "postprocess",
            lhs: (x_hat.len(), 1),
            rhs: (s_out.len(), 1),
        });
    }
    if !(z_bar.is_finite() && z_bar > 0.0) || s_out.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::invalid("postprocess needs a positive level and seasonal factors"));
    }
    let out: Vec<f64> = x_hat
        .iter()
        .zip(s_out)
        .map(|(x, s)| x.exp() * z_bar * s)
        .collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "postprocess" });
    }
    Ok(out)
}

/// Runs ES over the output day of the current step with the current
/// coefficients, then sets the coefficients for the next step.
pub fn advance_day(series: &HourlySeries, tracker: &mut EsTracker, delta_alpha: f64, delta_beta: f64) -> Result<()> {
    let o0 = tracker.output_start();
    if o0 + HOURS_PER_DAY > series.len() {
        return Err(Error::InsufficientHistory {
            series: series.id().to_string(),
            needed: o0 + HOURS_PER_DAY,
            available: series.len(),
        });
    }
    for &z in &series.values()[o0..o0 + HOURS_PER_DAY] {
        tracker.used.push_back(tracker.state.seasonal[0]);
        tracker.used.pop_front();
        tracker.state.hw_step(z)?;
    }
    tracker.state.update_coefficients(delta_alpha, delta_beta);
    tracker.step += 1;
    Ok(())
}

/// One column of a batched unroll.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    pub series: &'a HourlySeries,
    /// Hour index of the sequence start; must be a midnight.
    pub start: usize,
}

/// Tape values of one daily step.
#[derive(Debug, Clone)]
pub struct StepData {
    pub inputs: StepInputs,
    pub z_bar: Vec<f64>,
    /// 24 x b output-day seasonal factors; absent without ES.
    pub s_out: Option<Var>,
    /// 24 x b `z / z_bar` of the output day, when requested.
    pub target: Option<Var>,
    pub output_day: Vec<NaiveDate>,
}

#[derive(Debug, Clone)]
struct TapeEs {
    level: Var,
    ring: VecDeque<Var>,
    used: VecDeque<Var>,
    alpha: Var,
    beta: Var,
}

/// Batched ES + windowing recorded on a tape so that the smoothing
/// corrections emitted by the network receive gradient through later
/// seasonal factors and levels.
#[derive(Debug, Clone)]
pub struct Unroll<'a> {
    windows: Vec<Window<'a>>,
    settings: EsSettings,
    es: Option<TapeEs>,
    step: usize,
}

fn row_of(tape: &mut Tape, values: Vec<f64>) -> Result<Var> {
    tape.constant(Tensor::row(&values))
}

impl<'a> Unroll<'a> {
    pub fn new(tape: &mut Tape, windows: Vec<Window<'a>>, settings: EsSettings) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::invalid("unroll needs at least one series"));
        }
        for w in &windows {
            if w.start + HOURS_PER_WEEK > w.series.len() {
                return Err(Error::InsufficientHistory {
                    series: w.series.id().to_string(),
                    needed: w.start + HOURS_PER_WEEK,
                    available: w.series.len(),
                });
            }
            if w.series.timestamp_at(w.start).hour() != 0 {
                return Err(Error::invalid(format!(
                    "sequence for {} must start at midnight",
                    w.series.id()
                )));
            }
        }
        let es = if settings.enabled {
            let trackers = windows
                .iter()
                .map(|w| EsTracker::start(w.series, w.start, settings.i_alpha, settings.i_beta))
                .collect::<Result<Vec<_>>>()?;
            Some(Self::import(tape, &trackers)?)
        } else {
            None
        };
        Ok(Unroll { windows, settings, es, step: 0 })
    }

    fn import(tape: &mut Tape, trackers: &[EsTracker]) -> Result<TapeEs> {
        let level = row_of(tape, trackers.iter().map(|t| t.state.level).collect())?;
        let ring = (0..SEASON)
            .map(|k| row_of(tape, trackers.iter().map(|t| t.state.seasonal[k]).collect()))
            .collect::<Result<VecDeque<_>>>()?;
        let used = (0..SEASON)
            .map(|k| row_of(tape, trackers.iter().map(|t| t.used[k]).collect()))
            .collect::<Result<VecDeque<_>>>()?;
        Ok(TapeEs {
            level,
            ring,
            used,
            alpha: row_of(tape, trackers.iter().map(|t| t.state.alpha).collect())?,
            beta: row_of(tape, trackers.iter().map(|t| t.state.beta).collect())?,
        })
    }

    pub fn batch(&self) -> usize {
        self.windows.len()
    }

    pub fn step(&self) -> usize {
        self.step
    }

    fn input_start(&self, w: &Window) -> usize {
        w.start + HOURS_PER_DAY * self.step
    }

    /// Whether every column has data for the current output day.
    pub fn output_available(&self) -> bool {
        self.windows
            .iter()
            .all(|w| self.input_start(w) + HOURS_PER_WEEK + HOURS_PER_DAY <= w.series.len())
    }

    fn columns<F: Fn(&Window) -> Vec<f64>>(&self, f: F) -> Vec<Vec<f64>> {
        self.windows.iter().map(f).collect()
    }

    /// Network inputs for the current step. The target is only built when
    /// `with_target` is set, so inference never reads the output day.
    pub fn prepare(&self, tape: &mut Tape, with_target: bool) -> Result<StepData> {
        for w in &self.windows {
            let end = self.input_start(w) + HOURS_PER_WEEK;
            if end > w.series.len() {
                return Err(Error::InsufficientHistory {
                    series: w.series.id().to_string(),
                    needed: end,
                    available: w.series.len(),
                });
            }
        }
        let z_bar: Vec<f64> = self
            .windows
            .iter()
            .map(|w| {
                let i0 = self.input_start(w);
                w.series.values()[i0..i0 + HOURS_PER_WEEK].iter().sum::<f64>() / HOURS_PER_WEEK as f64
            })
            .collect();
        let normalised = self
            .windows
            .iter()
            .zip(&z_bar)
            .map(|(w, zb)| {
                let i0 = self.input_start(w);
                w.series.values()[i0..i0 + HOURS_PER_WEEK]
                    .iter()
                    .map(|z| (z / zb).ln())
                    .collect()
            })
            .collect::<Vec<Vec<f64>>>();
        let normalised = tape.constant(Tensor::from_columns(&normalised)?)?;

        let (x_in, s_out, seasonal) = match &self.es {
            Some(es) => {
                let used: Vec<Var> = es.used.iter().copied().collect();
                let used = tape.concat_rows(&used)?;
                let log_used = tape.log(used)?;
                let x = tape.sub(normalised, log_used)?;
                let front: Vec<Var> = es.ring.iter().take(HOURS_PER_DAY).copied().collect();
                let s_out = tape.concat_rows(&front)?;
                let seasonal = tape.affine(s_out, 1.0, -1.0)?;
                (x, Some(s_out), Some(seasonal))
            }
            None => (normalised, None, None),
        };

        let level = tape.constant(Tensor::row(&z_bar.iter().map(|z| z.log10()).collect::<Vec<_>>()))?;
        let output_day: Vec<NaiveDate> = self
            .windows
            .iter()
            .map(|w| w.series.timestamp_at(self.input_start(w) + HOURS_PER_WEEK).date())
            .collect();
        let calendar = output_day
            .iter()
            .map(|d| calendar_for(*d).one_hot().to_vec())
            .collect::<Vec<_>>();
        let calendar = tape.constant(Tensor::from_columns(&calendar)?)?;

        let target = if with_target {
            if !self.output_available() {
                return Err(Error::invalid("target requested past the end of the data"));
            }
            let t = self.columns(|w| {
                let o0 = self.input_start(w) + HOURS_PER_WEEK;
                let zb = w.series.values()[o0 - HOURS_PER_WEEK..o0].iter().sum::<f64>() / HOURS_PER_WEEK as f64;
                w.series.values()[o0..o0 + HOURS_PER_DAY].iter().map(|z| z / zb).collect()
            });
            Some(tape.constant(Tensor::from_columns(&t)?)?)
        } else {
            None
        };

        Ok(StepData {
            inputs: StepInputs {
                x_in,
                seasonal,
                level: Some(level),
                calendar: Some(calendar),
            },
            z_bar,
            s_out,
            target,
            output_day,
        })
    }

    /// Feeds the output day through ES with the current coefficients, then
    /// sets the next coefficients from the network's corrections.
    pub fn advance(&mut self, tape: &mut Tape, out: &NetworkOutput) -> Result<()> {
        if !self.output_available() {
            return Err(Error::invalid("cannot advance past the end of the data"));
        }
        if let Some(mut es) = self.es.take() {
            let one_minus_alpha = tape.one_minus(es.alpha)?;
            let one_minus_beta = tape.one_minus(es.beta)?;
            for h in 0..HOURS_PER_DAY {
                let z = self
                    .windows
                    .iter()
                    .map(|w| w.series.values()[self.input_start(w) + HOURS_PER_WEEK + h])
                    .collect();
                let z = row_of(tape, z)?;
                let s = es.ring.pop_front().expect("ring holds a full season");
                let zs = tape.div(z, s)?;
                let a = tape.mul(es.alpha, zs)?;
                let b = tape.mul(one_minus_alpha, es.level)?;
                let level = tape.add(a, b)?;
                let zl = tape.div(z, level)?;
                let a = tape.mul(es.beta, zl)?;
                let b = tape.mul(one_minus_beta, s)?;
                let next = tape.add(a, b)?;
                es.ring.push_back(next);
                es.used.push_back(s);
                es.used.pop_front();
                es.level = level;
            }
            let la = tape.affine(out.delta_alpha, 1.0, self.settings.i_alpha)?;
            es.alpha = tape.sigmoid(la)?;
            let lb = tape.affine(out.delta_beta, 1.0, self.settings.i_beta)?;
            es.beta = tape.sigmoid(lb)?;
            self.es = Some(es);
        }
        self.step += 1;
        Ok(())
    }

    /// Current per-column ES states read back from the tape.
    pub fn es_states(&self, tape: &Tape) -> Option<Vec<EsState>> {
        let es = self.es.as_ref()?;
        Some(
            (0..self.batch())
                .map(|c| EsState {
                    level: tape.value(es.level).get(0, c),
                    seasonal: es.ring.iter().map(|&s| tape.value(s).get(0, c)).collect(),
                    alpha: tape.value(es.alpha).get(0, c),
                    beta: tape.value(es.beta).get(0, c),
                    i_alpha: self.settings.i_alpha,
                    i_beta: self.settings.i_beta,
                })
                .collect(),
        )
    }

    /// Moves the ES values onto a fresh tape as constants.
    pub fn detach(&mut self, from: &Tape, to: &mut Tape) -> Result<()> {
        if let Some(es) = &mut self.es {
            let mut copy = |v: Var| to.constant(from.value(v).clone());
            es.level = copy(es.level)?;
            es.alpha = copy(es.alpha)?;
            es.beta = copy(es.beta)?;
            for s in es.ring.iter_mut().chain(es.used.iter_mut()) {
                *s = copy(*s)?;
            }
        }
        Ok(())
    }
}
