//! Forecast accuracy metrics, interval coverage, the seasonal naive
//! baseline and per-hour/day/month breakdowns.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecasting::ForecastBundle;
use crate::timeseries::{HourlySeries, HOURS_PER_DAY, HOURS_PER_WEEK};

/// Linear-interpolation quantile with inclusive endpoints.
pub fn quantile(sample: &[f64], q: f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::invalid("quantile of an empty sample"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid(format!("quantile order {q} outside [0, 1]")));
    }
    let mut v = sample.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

/// Aggregate errors in percent (RMSE in the units of the data).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub count: usize,
    pub mape: f64,
    pub mdape: f64,
    pub iqr_ape: f64,
    pub rmse: f64,
    pub mpe: f64,
    pub std_pe: f64,
    pub pi_inside: Option<f64>,
    pub pi_below: Option<f64>,
    pub pi_above: Option<f64>,
    /// Hours where the lower bound exceeds the upper bound.
    pub crossings: Option<usize>,
}

pub fn compute_metrics(actuals: &[f64], forecasts: &[f64], intervals: Option<(&[f64], &[f64])>) -> Result<Metrics> {
    let n = actuals.len();
    if n == 0 {
        return Err(Error::invalid("no observations to evaluate"));
    }
    if forecasts.len() != n || intervals.is_some_and(|(l, u)| l.len() != n || u.len() != n) {
        return Err(Error::invalid("actuals, forecasts and intervals differ in length"));
    }
    if let Some(z) = actuals.iter().find(|z| !(z.is_finite() && **z > 0.0)) {
        return Err(Error::invalid(format!("actual value {z} is not positive")));
    }
    let pe: Vec<f64> = actuals
        .iter()
        .zip(forecasts)
        .map(|(z, f)| 100.0 * (z - f) / z)
        .collect();
    let ape: Vec<f64> = pe.iter().map(|e| e.abs()).collect();
    let nf = n as f64;
    let mpe = pe.iter().sum::<f64>() / nf;
    let std_pe = (pe.iter().map(|e| (e - mpe).powi(2)).sum::<f64>() / nf).sqrt();
    let rmse = (actuals
        .iter()
        .zip(forecasts)
        .map(|(z, f)| (z - f).powi(2))
        .sum::<f64>()
        / nf)
        .sqrt();
    let (mut pi_inside, mut pi_below, mut pi_above, mut crossings) = (None, None, None, None);
    if let Some((lower, upper)) = intervals {
        let (mut below, mut above, mut crossed) = (0usize, 0usize, 0usize);
        for i in 0..n {
            if actuals[i] < lower[i] {
                below += 1;
            } else if actuals[i] > upper[i] {
                above += 1;
            }
            if lower[i] > upper[i] {
                crossed += 1;
            }
        }
        pi_below = Some(100.0 * below as f64 / nf);
        pi_above = Some(100.0 * above as f64 / nf);
        pi_inside = Some(100.0 * (n - below - above) as f64 / nf);
        crossings = Some(crossed);
    }
    Ok(Metrics {
        count: n,
        mape: ape.iter().sum::<f64>() / nf,
        mdape: quantile(&ape, 0.5)?,
        iqr_ape: quantile(&ape, 0.75)? - quantile(&ape, 0.25)?,
        rmse,
        mpe,
        std_pe,
        pi_inside,
        pi_below,
        pi_above,
        crossings,
    })
}

/// The profile one week before `target_day`.
pub fn naive_forecast(series: &HourlySeries, target_day: NaiveDate) -> Result<Vec<f64>> {
    let start = series.offset_of(target_day.and_hms_opt(0, 0, 0).expect("midnight"));
    let from = start - HOURS_PER_WEEK as i64;
    if from < 0 || start - HOURS_PER_WEEK as i64 + HOURS_PER_DAY as i64 > series.len() as i64 {
        return Err(Error::InsufficientHistory {
            series: series.id().to_string(),
            needed: HOURS_PER_WEEK,
            available: start.clamp(0, series.len() as i64) as usize,
        });
    }
    let from = from as usize;
    Ok(series.values()[from..from + HOURS_PER_DAY].to_vec())
}

/// One evaluated hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub series_id: String,
    pub timestamp: NaiveDateTime,
    pub actual: f64,
    pub point: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

/// Pairs forecast bundles with actuals; errors list up to ten unmatched hours.
pub fn match_forecasts(bundles: &[ForecastBundle], actuals: &[HourlySeries]) -> Result<Vec<Observation>> {
    let by_id: BTreeMap<&str, &HourlySeries> = actuals.iter().map(|s| (s.id(), s)).collect();
    let mut out = Vec::with_capacity(bundles.len() * HOURS_PER_DAY);
    let mut missing = Vec::new();
    for b in bundles {
        for h in 0..HOURS_PER_DAY {
            let ts = b.target_day.and_hms_opt(h as u32, 0, 0).expect("valid hour");
            match by_id.get(b.series_id.as_str()).and_then(|s| s.index_of(ts).map(|i| s.values()[i])) {
                Some(actual) => out.push(Observation {
                    series_id: b.series_id.clone(),
                    timestamp: ts,
                    actual,
                    point: b.point[h],
                    lower: Some(b.lower[h]),
                    upper: Some(b.upper[h]),
                }),
                None => missing.push(format!("{},{}", b.series_id, ts.format(crate::timeseries::TIMESTAMP_FORMAT))),
            }
        }
    }
    if !missing.is_empty() {
        let total = missing.len();
        missing.truncate(10);
        return Err(Error::invalid(format!(
            "{total} forecast hours have no actual value; first: {}",
            missing.join("; ")
        )));
    }
    Ok(out)
}

fn metrics_of(obs: &[&Observation]) -> Result<Metrics> {
    let actual: Vec<f64> = obs.iter().map(|o| o.actual).collect();
    let point: Vec<f64> = obs.iter().map(|o| o.point).collect();
    let bounds: Option<(Vec<f64>, Vec<f64>)> = obs
        .iter()
        .map(|o| o.lower.zip(o.upper))
        .collect::<Option<Vec<_>>>()
        .map(|v| v.into_iter().unzip());
    compute_metrics(&actual, &point, bounds.as_ref().map(|(l, u)| (l.as_slice(), u.as_slice())))
}

fn grouped<K: Ord>(obs: &[&Observation], key: impl Fn(&Observation) -> K) -> Result<BTreeMap<K, Metrics>> {
    let mut groups: BTreeMap<K, Vec<&Observation>> = BTreeMap::new();
    for o in obs {
        groups.entry(key(o)).or_default().push(o);
    }
    groups.into_iter().map(|(k, v)| Ok((k, metrics_of(&v)?))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub overall: Metrics,
    /// Keyed by hour of day 0..23.
    pub by_hour: BTreeMap<u32, Metrics>,
    /// Keyed by day of week, Monday = 0.
    pub by_weekday: BTreeMap<u32, Metrics>,
    /// Keyed by month 1..12.
    pub by_month: BTreeMap<u32, Metrics>,
}

pub fn metrics_report(obs: &[&Observation]) -> Result<MetricsReport> {
    Ok(MetricsReport {
        overall: metrics_of(obs)?,
        by_hour: grouped(obs, |o| o.timestamp.hour())?,
        by_weekday: grouped(obs, |o| o.timestamp.weekday().num_days_from_monday())?,
        by_month: grouped(obs, |o| o.timestamp.month())?,
    })
}

/// Per-series reports, their unweighted mean and the pooled metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub per_series: BTreeMap<String, MetricsReport>,
    pub cross_series_mean: Metrics,
    pub pooled: Metrics,
}

fn mean_metrics(all: &[&Metrics]) -> Metrics {
    let n = all.len() as f64;
    let avg = |f: fn(&Metrics) -> f64| all.iter().map(|m| f(m)).sum::<f64>() / n;
    let avg_opt = |f: fn(&Metrics) -> Option<f64>| {
        all.iter()
            .map(|m| f(m))
            .collect::<Option<Vec<f64>>>()
            .map(|v| v.iter().sum::<f64>() / n)
    };
    Metrics {
        count: all.iter().map(|m| m.count).sum(),
        mape: avg(|m| m.mape),
        mdape: avg(|m| m.mdape),
        iqr_ape: avg(|m| m.iqr_ape),
        rmse: avg(|m| m.rmse),
        mpe: avg(|m| m.mpe),
        std_pe: avg(|m| m.std_pe),
        pi_inside: avg_opt(|m| m.pi_inside),
        pi_below: avg_opt(|m| m.pi_below),
        pi_above: avg_opt(|m| m.pi_above),
        crossings: all.iter().map(|m| m.crossings).sum(),
    }
}

pub fn evaluate(obs: &[Observation]) -> Result<EvaluationSummary> {
    let mut by_series: BTreeMap<&str, Vec<&Observation>> = BTreeMap::new();
    for o in obs {
        by_series.entry(o.series_id.as_str()).or_default().push(o);
    }
    let per_series = by_series
        .iter()
        .map(|(id, v)| Ok((id.to_string(), metrics_report(v)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let overall: Vec<&Metrics> = per_series.values().map(|r| &r.overall).collect();
    let all: Vec<&Observation> = obs.iter().collect();
    Ok(EvaluationSummary {
        cross_series_mean: mean_metrics(&overall),
        pooled: metrics_of(&all)?,
        per_series,
    })
}

/// Breakdown rows `series_id,group,key,count,mape,...` for plotting tools.
pub fn write_breakdown_csv(summary: &EvaluationSummary, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "series_id", "group", "key", "count", "mape", "mdape", "iqr_ape", "rmse", "mpe", "std_pe", "pi_inside", "pi_below",
        "pi_above",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (id, report) in &summary.per_series {
        let groups = std::iter::once(("overall", 0u32, &report.overall))
            .chain(report.by_hour.iter().map(|(k, m)| ("hour", *k, m)))
            .chain(report.by_weekday.iter().map(|(k, m)| ("weekday", *k, m)))
            .chain(report.by_month.iter().map(|(k, m)| ("month", *k, m)));
        for (group, key, m) in groups {
            w.write_record([
                id.clone(),
                group.to_string(),
                key.to_string(),
                m.count.to_string(),
                m.mape.to_string(),
                m.mdape.to_string(),
                m.iqr_ape.to_string(),
                m.rmse.to_string(),
                m.mpe.to_string(),
                m.std_pe.to_string(),
                opt(m.pi_inside),
                opt(m.pi_below),
                opt(m.pi_above),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quantile_rules() {
        assert_eq!(quantile(&[4.0, 1.0, 3.0, 2.0], 0.5).unwrap(), 2.5);
        assert_eq!(quantile(&[4.0, 1.0, 3.0], 0.0).unwrap(), 1.0);
        assert_eq!(quantile(&[4.0, 1.0, 3.0], 1.0).unwrap(), 4.0);
        assert_eq!(quantile(&[7.5], 0.3).unwrap(), 7.5);
        assert!(quantile(&[], 0.5).is_err());
        assert!(quantile(&[1.0], 1.5).is_err());
    }

    #[test]
    fn hand_metrics() {
        let m = compute_metrics(&[100.0, 100.0], &[110.0, 90.0], None).unwrap();
        assert!((m.mape - 10.0).abs() < 1e-12);
        assert!(m.mpe.abs() < 1e-12);
        assert!((m.rmse - 10.0).abs() < 1e-12);
        assert!((m.std_pe - 10.0).abs() < 1e-12);
        assert!(m.pi_inside.is_none());

        let perfect = compute_metrics(&[5.0, 7.0], &[5.0, 7.0], Some((&[4.0, 6.0], &[6.0, 8.0]))).unwrap();
        assert_eq!((perfect.mape, perfect.rmse, perfect.mpe, perfect.iqr_ape), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(perfect.pi_inside, Some(100.0));

        // boundary hits count as inside
        let edge = compute_metrics(&[5.0, 7.0, 9.0], &[5.0; 3], Some((&[5.0, 8.0, 1.0], &[6.0, 9.0, 2.0]))).unwrap();
        assert!((edge.pi_inside.unwrap() - 100.0 / 3.0).abs() < 1e-12);
        assert!((edge.pi_below.unwrap() - 100.0 / 3.0).abs() < 1e-12);
        assert!((edge.pi_above.unwrap() - 100.0 / 3.0).abs() < 1e-12);

        assert!(compute_metrics(&[0.0], &[1.0], None).is_err());
        assert!(compute_metrics(&[1.0], &[1.0, 2.0], None).is_err());
    }

    fn weekly_series(days: usize, bump_from: Option<usize>) -> HourlySeries {
        let start = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let values = (0..days * 24)
            .map(|k| {
                let base = 100.0 + 20.0 * ((k % 168) as f64 / 168.0 * 6.283).sin();
                base + if bump_from.is_some_and(|d| k >= d * 24) { 10.0 } else { 0.0 }
            })
            .collect();
        HourlySeries::new("A", start, values).unwrap()
    }

    #[test]
    fn naive_baseline() {
        let s = weekly_series(21, None);
        let day = NaiveDate::from_ymd_opt(2018, 1, 15).unwrap();
        let f = naive_forecast(&s, day).unwrap();
        let actual = &s.values()[14 * 24..15 * 24];
        assert_eq!(compute_metrics(actual, &f, None).unwrap().mape, 0.0);

        // +10 in the target week: APE = 100 * 10 / actual per hour
        let bumped = weekly_series(21, Some(14));
        let f = naive_forecast(&bumped, day).unwrap();
        let actual = &bumped.values()[14 * 24..15 * 24];
        let expected = actual.iter().map(|z| 1000.0 / z).sum::<f64>() / 24.0;
        assert!((compute_metrics(actual, &f, None).unwrap().mape - expected).abs() < 1e-12);

        assert!(naive_forecast(&s, NaiveDate::from_ymd_opt(2018, 1, 7).unwrap()).is_err());
    }

    #[test]
    fn matching_reports_unmatched_hours() {
        let s = weekly_series(10, None);
        let b = ForecastBundle {
            series_id: "A".into(),
            target_day: NaiveDate::from_ymd_opt(2018, 1, 10).unwrap(),
            point: vec![100.0; 24],
            lower: vec![90.0; 24],
            upper: vec![110.0; 24],
        };
        assert_eq!(match_forecasts(&[b.clone()], &[s.clone()]).unwrap().len(), 24);
        let late = ForecastBundle { target_day: NaiveDate::from_ymd_opt(2018, 1, 11).unwrap(), ..b.clone() };
        let err = match_forecasts(&[late], &[s.clone()]).unwrap_err().to_string();
        assert!(err.starts_with("invalid argument: 24 forecast hours"), "{err}");
        assert_eq!(err.matches("A,2018-01-11").count(), 10);
        let other = ForecastBundle { series_id: "B".into(), ..b };
        assert!(match_forecasts(&[other], &[s]).is_err());
    }

    #[test]
    fn summary_breakdowns() {
        let s = weekly_series(30, None);
        let bundles: Vec<ForecastBundle> = (14..28)
            .map(|d| {
                let day = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap() + chrono::Duration::days(d);
                let p = naive_forecast(&s, day).unwrap();
                ForecastBundle {
                    series_id: "A".into(),
                    target_day: day,
                    lower: p.iter().map(|v| v * 0.9).collect(),
                    upper: p.iter().map(|v| v * 1.1).collect(),
                    point: p.iter().map(|v| v * 1.02).collect(),
                }
            })
            .collect();
        let obs = match_forecasts(&bundles, &[s]).unwrap();
        let summary = evaluate(&obs).unwrap();
        let r = &summary.per_series["A"];
        assert_eq!(r.by_hour.len(), 24);
        assert_eq!(r.by_weekday.len(), 7);
        assert_eq!(r.by_month.len(), 1);
        assert_eq!(summary.pooled, r.overall);
        assert!((summary.pooled.mpe + 2.0).abs() < 1e-9);
        let mut buf = Vec::new();
        write_breakdown_csv(&summary, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 1 + 24 + 7 + 1);
    }

    proptest! {
        #[test]
        fn metric_invariants(pairs in prop::collection::vec((1.0f64..1000.0, 1.0f64..1000.0, 0.5f64..1.0, 1.0f64..1.5), 1..60), seed in 0u64..1000) {
            let actual: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let forecast: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let lower: Vec<f64> = pairs.iter().map(|p| p.1 * p.2).collect();
            let upper: Vec<f64> = pairs.iter().map(|p| p.1 * p.3).collect();
            let m = compute_metrics(&actual, &forecast, Some((&lower, &upper))).unwrap();
            prop_assert!(m.mpe.abs() <= m.mape + 1e-9);
            prop_assert!(m.mape >= 0.0 && m.rmse >= 0.0);
            let total = m.pi_inside.unwrap() + m.pi_below.unwrap() + m.pi_above.unwrap();
            prop_assert!((total - 100.0).abs() < 1e-9);

            // independent sort-based interquartile range
            let mut ape: Vec<f64> = actual.iter().zip(&forecast).map(|(z, f)| 100.0 * (z - f).abs() / z).collect();
            ape.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let at = |q: f64| {
                let pos = q * (ape.len() - 1) as f64;
                let (i, frac) = (pos as usize, pos - (pos as usize) as f64);
                if frac == 0.0 { ape[i] } else { ape[i] * (1.0 - frac) + ape[i + 1] * frac }
            };
            prop_assert!((m.iqr_ape - (at(0.75) - at(0.25))).abs() < 1e-9);

            // permutation invariance of the aggregates
            let mut idx: Vec<usize> = (0..actual.len()).collect();
            let k = (seed as usize) % idx.len();
            idx.rotate_left(k);
            idx.reverse();
            let pa: Vec<f64> = idx.iter().map(|&i| actual[i]).collect();
            let pf: Vec<f64> = idx.iter().map(|&i| forecast[i]).collect();
            let pl: Vec<f64> = idx.iter().map(|&i| lower[i]).collect();
            let pu: Vec<f64> = idx.iter().map(|&i| upper[i]).collect();
            let p = compute_metrics(&pa, &pf, Some((&pl, &pu))).unwrap();
            prop_assert!((p.mape - m.mape).abs() < 1e-9 && (p.mdape - m.mdape).abs() < 1e-12 && (p.rmse - m.rmse).abs() < 1e-9);
            prop_assert_eq!(p.pi_inside, m.pi_inside);
        }
    }
}
