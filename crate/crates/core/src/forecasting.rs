//! Next-day inference: warm-up replay, rolling daily forecasts with
//! intervals, and ensemble averaging.

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::es::EsState;
use crate::model::Model;
use crate::network::{network_step, NetworkState};
use crate::pipeline::{postprocess, Unroll, Window};
use crate::timeseries::{HourlySeries, HOURS_PER_DAY, HOURS_PER_WEEK};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastBundle {
    pub series_id: String,
    pub target_day: NaiveDate,
    pub point: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

fn midnight(day: NaiveDate) -> NaiveDateTime {
    day.and_hms_opt(0, 0, 0).expect("midnight exists")
}

/// Hour index where the replay for `first_day` starts, checking that the
/// series covers the `w_s` weeks before it.
fn replay_start(series: &HourlySeries, first_day: NaiveDate, w_s: usize) -> Result<usize> {
    if w_s == 0 {
        return Err(Error::invalid("w_s must be at least one week"));
    }
    let target = series.offset_of(midnight(first_day));
    let needed = (w_s * HOURS_PER_WEEK) as i64;
    let start = target - needed;
    if start < 0 || target > series.len() as i64 {
        let available = target.clamp(0, series.len() as i64) - 0.max(start.min(0));
        return Err(Error::InsufficientHistory {
            series: series.id().to_string(),
            needed: needed as usize,
            available: available.max(0) as usize,
        });
    }
    Ok(start as usize)
}

/// Checks that `series` can be forecast over `[from, to]` and returns the
/// hour index where its replay starts.
pub fn check_history(series: &HourlySeries, from: NaiveDate, to: NaiveDate, w_s: usize) -> Result<usize> {
    let start = replay_start(series, from, w_s)?;
    // every day before `to` must be observed to carry the states forward
    let needed = series.offset_of(midnight(to));
    if needed > series.len() as i64 {
        return Err(Error::InsufficientHistory {
            series: series.id().to_string(),
            needed: needed as usize,
            available: series.len(),
        });
    }
    Ok(start)
}

/// Forecasts every day in `[from, to]` for each series, re-warming once
/// from `w_s` weeks before `from` and then carrying states day to day.
/// All series are run as one batch.
pub fn rolling_forecast(
    model: &Model,
    series: &[&HourlySeries],
    from: NaiveDate,
    to: NaiveDate,
    w_s: usize,
) -> Result<Vec<ForecastBundle>> {
    if to < from {
        return Err(Error::invalid(format!("empty date range {from}..{to}")));
    }
    if series.is_empty() {
        return Ok(Vec::new());
    }
    let last_day = (to - from).num_days() as usize;
    let mut windows = Vec::with_capacity(series.len());
    for s in series {
        let start = check_history(s, from, to, w_s)?;
        windows.push(Window { series: s, start });
    }
    let batch = windows.len();
    let mut tape = Tape::new();
    let mut vars = model.params.bind(&mut tape)?;
    let mut unroll = Unroll::new(&mut tape, windows, model.config.es)?;
    let mut state = NetworkState::new(&mut tape, &vars, batch)?;
    let replay_steps = 7 * w_s - 7;
    let mut out = Vec::with_capacity(batch * (last_day + 1));
    for t in 0..=replay_steps + last_day {
        let data = unroll.prepare(&mut tape, false)?;
        let step = network_step(&mut tape, &vars, &data.inputs, &mut state)?;
        if t >= replay_steps {
            for (c, s) in series.iter().enumerate() {
                let head = step.values(&tape, c)?;
                let s_out = match data.s_out {
                    Some(v) => tape.value(v).column_values(c),
                    None => vec![1.0; HOURS_PER_DAY],
                };
                let z_bar = data.z_bar[c];
                out.push(ForecastBundle {
                    series_id: s.id().to_string(),
                    target_day: data.output_day[c],
                    point: postprocess(&head.x_hat, z_bar, &s_out)?,
                    lower: postprocess(&head.x_lower, z_bar, &s_out)?,
                    upper: postprocess(&head.x_upper, z_bar, &s_out)?,
                });
            }
        }
        if t < replay_steps + last_day {
            unroll.advance(&mut tape, &step)?;
            // start a fresh tape every day so inference memory stays flat
            let mut next = Tape::new();
            let fresh = model.params.bind(&mut next)?;
            state = state.detached(&tape, &mut next)?;
            unroll.detach(&tape, &mut next)?;
            vars = fresh;
            tape = next;
        }
    }
    Ok(out)
}

/// Single-day forecast from the `w_s` weeks preceding `target_day`.
pub fn forecast_day(model: &Model, series: &HourlySeries, target_day: NaiveDate, w_s: usize) -> Result<ForecastBundle> {
    let mut v = rolling_forecast(model, &[series], target_day, target_day, w_s)?;
    Ok(v.remove(0))
}

/// Elementwise mean of bundles for the same series and day.
pub fn ensemble_mean(bundles: &[ForecastBundle]) -> Result<ForecastBundle> {
    let first = bundles.first().ok_or_else(|| Error::invalid("ensemble needs at least one member"))?;
    if bundles
        .iter()
        .any(|b| b.series_id != first.series_id || b.target_day != first.target_day)
    {
        return Err(Error::invalid("ensemble members forecast different series or days"));
    }
    let n = bundles.len() as f64;
    let mean = |f: fn(&ForecastBundle) -> &Vec<f64>| -> Vec<f64> {
        (0..HOURS_PER_DAY)
            .map(|h| bundles.iter().map(|b| f(b)[h]).sum::<f64>() / n)
            .collect()
    };
    Ok(ForecastBundle {
        series_id: first.series_id.clone(),
        target_day: first.target_day,
        point: mean(|b| &b.point),
        lower: mean(|b| &b.lower),
        upper: mean(|b| &b.upper),
    })
}

pub fn forecast_ensemble(models: &[Model], series: &HourlySeries, target_day: NaiveDate, w_s: usize) -> Result<ForecastBundle> {
    if models.is_empty() {
        return Err(Error::invalid("ensemble needs at least one model"));
    }
    let members = models
        .par_iter()
        .map(|m| forecast_day(m, series, target_day, w_s))
        .collect::<Result<Vec<_>>>()?;
    ensemble_mean(&members)
}

/// Rolling ensemble forecasts ordered by series (input order), then day.
pub fn rolling_ensemble(
    models: &[Model],
    series: &[&HourlySeries],
    from: NaiveDate,
    to: NaiveDate,
    w_s: usize,
) -> Result<Vec<ForecastBundle>> {
    if models.is_empty() {
        return Err(Error::invalid("ensemble needs at least one model"));
    }
    let members = models
        .par_iter()
        .map(|m| rolling_forecast(m, series, from, to, w_s))
        .collect::<Result<Vec<_>>>()?;
    let days = (to - from).num_days() as usize + 1;
    let mut out = Vec::with_capacity(series.len() * days);
    for c in 0..series.len() {
        for d in 0..days {
            // member output is ordered day-major, series-minor
            let idx = d * series.len() + c;
            let group: Vec<ForecastBundle> = members.iter().map(|m| m[idx].clone()).collect();
            out.push(ensemble_mean(&group)?);
        }
    }
    Ok(out)
}

/// ES state after replaying the last `w_s` whole weeks of a series, or
/// `None` when the series is too short or ES is disabled.
pub fn final_es_state(model: &Model, series: &HourlySeries, w_s: usize) -> Result<Option<EsState>> {
    if !model.config.es.enabled {
        return Ok(None);
    }
    let end_day = series.end().date();
    let end = midnight(end_day);
    let end = if end > series.end() { end - Duration::days(1) } else { end };
    let end = series.offset_of(end);
    let span = (w_s * HOURS_PER_WEEK) as i64;
    if end - span < 0 {
        return Ok(None);
    }
    let start = (end - span) as usize;
    let mut tape = Tape::new();
    let vars = model.params.bind(&mut tape)?;
    let mut unroll = Unroll::new(&mut tape, vec![Window { series, start }], model.config.es)?;
    let mut state = NetworkState::new(&mut tape, &vars, 1)?;
    while unroll.output_available() {
        let data = unroll.prepare(&mut tape, false)?;
        let out = network_step(&mut tape, &vars, &data.inputs, &mut state)?;
        unroll.advance(&mut tape, &out)?;
    }
    Ok(unroll.es_states(&tape).and_then(|mut v| v.pop()))
}
