//! Synthetic hourly load: level, weekly profile, yearly sinusoid and
//! Gaussian noise proportional to the level.

use chrono::{Datelike, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::HourlySeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub series: usize,
    pub days: usize,
    pub start: NaiveDate,
    /// Noise standard deviation relative to the level.
    pub noise: f64,
    /// Relative amplitude of the yearly cycle (winter peak).
    pub yearly_amplitude: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            series: 4,
            days: 730,
            start: NaiveDate::from_ymd_opt(2016, 1, 4).expect("valid date"),
            noise: 0.02,
            yearly_amplitude: 0.15,
            seed: 7,
        }
    }
}

/// Series-specific profile: morning and evening peaks, a night trough and a
/// weekend reduction, varied per series.
fn profile(series: usize, weekday: u32, hour: usize) -> f64 {
    let k = series as f64;
    let h = hour as f64;
    let bump = |center: f64, width: f64| (-((h - center) / width).powi(2)).exp();
    let morning = (0.20 + 0.03 * k) * bump(8.0 + 0.5 * k, 2.5);
    let evening = (0.25 - 0.02 * k) * bump(18.5 + 0.3 * k, 2.0);
    let night = -0.25 * bump(3.0, 3.0);
    let day = 1.0 + morning + evening + night;
    let weekend = match weekday {
        5 => 0.90 - 0.01 * k,
        6 => 0.82 - 0.02 * k,
        _ => 1.0,
    };
    day * weekend
}

pub fn generate(spec: &SyntheticSpec) -> Result<Vec<HourlySeries>> {
    if spec.series == 0 || spec.days == 0 {
        return Err(Error::invalid("synthetic data needs at least one series and one day"));
    }
    if !(0.0..0.3).contains(&spec.noise) || !(0.0..0.9).contains(&spec.yearly_amplitude) {
        return Err(Error::invalid("noise must lie in [0, 0.3) and yearly_amplitude in [0, 0.9)"));
    }
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let start = spec.start.and_hms_opt(0, 0, 0).expect("midnight exists");
    (0..spec.series)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(k as u64);
            let level = 1000.0 * 3f64.powi(k as i32);
            let values = (0..spec.days * 24)
                .map(|i| {
                    let date = spec.start + chrono::Duration::days((i / 24) as i64);
                    let yearly = 1.0
                        + spec.yearly_amplitude
                            * (2.0 * std::f64::consts::PI * (date.ordinal0() as f64 - 15.0) / 365.25).cos();
                    let mean = level * yearly * profile(k, date.weekday().num_days_from_monday(), i % 24);
                    (mean + spec.noise * level * normal.sample(&mut rng)).max(0.05 * level)
                })
                .collect();
            HourlySeries::new(format!("S{}", k + 1), start, values)
        })
        .collect()
}
