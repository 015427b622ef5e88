//! Multiplicative Holt-Winters tracker with a 168-hour seasonal ring and
//! smoothing coefficients steered by the network.
//!
//! Per hour `z`:
//!
//! ```text
//! level'        = alpha * z / s + (1 - alpha) * level
//! s (one week on) = beta * z / level' + (1 - beta) * s
//! ```
//!
//! where `s` is the seasonal value of the current slot. Coefficients are
//! reset once per day as `sigmoid(initial + correction)`.

use serde::{Deserialize, Serialize};

use crate::autodiff::sigmoid;
use crate::error::{Error, Result};
use crate::timeseries::HOURS_PER_WEEK;

pub const SEASON: usize = HOURS_PER_WEEK;

/// Default initial logits of the smoothing coefficients.
pub const INITIAL_ALPHA_LOGIT: f64 = -3.5;
pub const INITIAL_BETA_LOGIT: f64 = 0.3;

/// Level, seasonal ring and smoothing coefficients for one series.
///
/// `seasonal[k]` is the factor for the hour `k` steps ahead of the next
/// hour to be processed, so `seasonal[0]` belongs to the next observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsState {
    pub level: f64,
    pub seasonal: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub i_alpha: f64,
    pub i_beta: f64,
}

impl EsState {
    /// Level from the mean of the first week, seasonal factors from the
    /// ratio of each hour to that level.
    pub fn init(prefix: &[f64], i_alpha: f64, i_beta: f64) -> Result<Self> {
        if prefix.len() < SEASON {
            return Err(Error::invalid(format!(
                "ES initialisation needs {SEASON} hours, got {}",
                prefix.len()
            )));
        }
        let week = &prefix[..SEASON];
        if week.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("ES initialisation needs positive values"));
        }
        let level = week.iter().sum::<f64>() / SEASON as f64;
        Ok(EsState {
            level,
            seasonal: week.iter().map(|v| v / level).collect(),
            alpha: sigmoid(i_alpha),
            beta: sigmoid(i_beta),
            i_alpha,
            i_beta,
        })
    }

    /// Processes one observation and rotates the ring by one hour.
    pub fn hw_step(&mut self, z: f64) -> Result<()> {
        if !(z.is_finite() && z > 0.0) {
            return Err(Error::invalid(format!("ES step needs a positive observation, got {z}")));
        }
        let s = self.seasonal[0];
        let level = self.alpha * z / s + (1.0 - self.alpha) * self.level;
        let next = self.beta * z / level + (1.0 - self.beta) * s;
        self.level = level;
        self.seasonal.rotate_left(1);
        self.seasonal[SEASON - 1] = next;
        Ok(())
    }

    pub fn update_coefficients(&mut self, delta_alpha: f64, delta_beta: f64) {
        self.alpha = sigmoid(self.i_alpha + delta_alpha);
        self.beta = sigmoid(self.i_beta + delta_beta);
    }

    /// Seasonal factors the ring predicts for hours `[offset, offset + length)`
    /// ahead.
    pub fn seasonal_window(&self, offset: usize, length: usize) -> Result<&[f64]> {
        if offset + length > SEASON {
            return Err(Error::invalid(format!(
                "seasonal window [{offset}, {}) exceeds the {SEASON}-hour ring",
                offset + length
            )));
        }
        Ok(&self.seasonal[offset..offset + length])
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.seasonal.len() == SEASON
            && self.seasonal.iter().all(|s| s.is_finite() && *s > 0.0)
            && self.level.is_finite()
            && self.level > 0.0
            && self.alpha > 0.0
            && self.alpha < 1.0
            && self.beta > 0.0
            && self.beta < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("ES state violates its invariants"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn weekly_shape(k: usize) -> f64 {
        let h = (k % 24) as f64;
        let d = k / 24;
        let weekend = if d >= 5 { 0.85 } else { 1.0 };
        weekend * (1.0 + 0.25 * (2.0 * std::f64::consts::PI * (h - 6.0) / 24.0).sin())
    }

    fn state(level: f64, s: f64, alpha: f64, beta: f64) -> EsState {
        EsState {
            level,
            seasonal: vec![s; SEASON],
            alpha,
            beta,
            i_alpha: 0.0,
            i_beta: 0.0,
        }
    }

    #[test]
    fn init_on_constant_prefix() {
        let es = EsState::init(&[100.0; 200], INITIAL_ALPHA_LOGIT, INITIAL_BETA_LOGIT).unwrap();
        assert_eq!(es.level, 100.0);
        assert!(es.seasonal.iter().all(|&s| s == 1.0));
        assert!((es.alpha - 0.029312).abs() < 5e-7);
        assert!((es.beta - 0.574443).abs() < 5e-7);
    }

    #[test]
    fn init_recovers_weekly_shape() {
        let prefix: Vec<f64> = (0..SEASON).map(|k| 100.0 * weekly_shape(k)).collect();
        let es = EsState::init(&prefix, -3.5, 0.3).unwrap();
        let shape_mean = (0..SEASON).map(weekly_shape).sum::<f64>() / SEASON as f64;
        assert!((es.level - 100.0 * shape_mean).abs() < 1e-9);
        for k in 0..SEASON {
            assert!((es.seasonal[k] - weekly_shape(k) / shape_mean).abs() < 1e-12);
        }
    }

    #[test]
    fn init_rejects_short_or_non_positive_prefix() {
        assert!(EsState::init(&[1.0; 167], -3.5, 0.3).is_err());
        let mut bad = vec![1.0; 168];
        bad[10] = 0.0;
        assert!(EsState::init(&bad, -3.5, 0.3).is_err());
    }

    #[test]
    fn zero_coefficients_leave_state_unchanged() {
        let mut es = state(100.0, 1.0, 0.0, 0.0);
        es.seasonal = (0..SEASON).map(weekly_shape).collect();
        let before = es.clone();
        for k in 0..SEASON {
            es.hw_step(50.0 + k as f64).unwrap();
        }
        assert_eq!(es.level, before.level);
        assert_eq!(es.seasonal, before.seasonal);
    }

    #[test]
    fn hand_computed_step() {
        let mut es = state(100.0, 1.2, 0.5, 0.5);
        es.hw_step(126.0).unwrap();
        assert!((es.level - 102.5).abs() < 1e-12);
        let expected = 0.5 * (126.0 / 102.5) + 0.5 * 1.2;
        assert!((es.seasonal[SEASON - 1] - expected).abs() < 1e-12);
        assert!((es.seasonal[SEASON - 1] - 1.2146341).abs() < 1e-7);
    }

    #[test]
    fn non_positive_observation_rejected() {
        let mut es = state(100.0, 1.0, 0.5, 0.5);
        assert!(es.hw_step(0.0).is_err());
        assert!(es.hw_step(f64::NAN).is_err());
    }

    #[test]
    fn coefficient_updates() {
        let mut es = EsState::init(&[100.0; 168], -3.5, 0.3).unwrap();
        es.update_coefficients(0.0, 0.0);
        assert!((es.alpha - 0.029312).abs() < 5e-7);
        assert!((es.beta - 0.574443).abs() < 5e-7);
        es.update_coefficients(3.5, 0.0);
        assert_eq!(es.alpha, 0.5);
        es.update_coefficients(1e6, 0.0);
        assert!(es.alpha <= 1.0 && es.alpha > 0.999);
        let mut last = 0.0;
        for d in [-5.0, -1.0, 0.0, 1.0, 5.0, 20.0] {
            es.update_coefficients(d, 0.0);
            assert!(es.alpha >= last);
            last = es.alpha;
        }
    }

    #[test]
    fn seasonal_window_bounds() {
        let prefix: Vec<f64> = (0..SEASON).map(|k| 100.0 * weekly_shape(k)).collect();
        let es = EsState::init(&prefix, -3.5, 0.3).unwrap();
        assert_eq!(es.seasonal_window(0, 24).unwrap(), &es.seasonal[..24]);
        assert!(es.seasonal_window(168, 1).is_err());
        assert!(es.seasonal_window(150, 24).is_err());
        let flat = EsState::init(&[7.0; 168], -3.5, 0.3).unwrap();
        assert!(flat.seasonal_window(0, 24).unwrap().iter().all(|&s| s == 1.0));
    }

    proptest! {
        #[test]
        fn exact_fit_is_a_fixed_point(alpha in 0.01f64..0.99, beta in 0.01f64..0.99, level in 10.0f64..1e4) {
            let mut es = state(level, 1.0, alpha, beta);
            es.seasonal = (0..SEASON).map(weekly_shape).collect();
            let original = es.seasonal.clone();
            for k in 0..3 * SEASON {
                let z = es.level * es.seasonal[0];
                es.hw_step(z).unwrap();
                prop_assert!((es.level - level).abs() / level < 1e-12);
                prop_assert!((es.seasonal[SEASON - 1] - original[k % SEASON]).abs() < 1e-12);
            }
        }

        #[test]
        fn level_is_scale_equivariant(k in 0.01f64..100.0, alpha in 0.01f64..0.9, beta in 0.01f64..0.9) {
            let z: Vec<f64> = (0..3 * SEASON).map(|t| 500.0 * weekly_shape(t) * (1.0 + 0.05 * (t as f64 * 0.37).sin())).collect();
            let run = |scale: f64| {
                let scaled: Vec<f64> = z.iter().map(|v| v * scale).collect();
                let mut es = EsState::init(&scaled, 0.0, 0.0).unwrap();
                es.alpha = alpha;
                es.beta = beta;
                for v in &scaled[SEASON..] {
                    es.hw_step(*v).unwrap();
                }
                es
            };
            let (a, b) = (run(1.0), run(k));
            prop_assert!((b.level / (k * a.level) - 1.0).abs() < 1e-9);
            for (x, y) in a.seasonal.iter().zip(&b.seasonal) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn coefficients_stay_in_unit_interval(deltas in prop::collection::vec((-30.0f64..30.0, -30.0f64..30.0), 1..50)) {
            let mut es = EsState::init(&[1.0; 168], -3.5, 0.3).unwrap();
            for (da, db) in deltas {
                es.update_coefficients(da, db);
                prop_assert!(es.alpha > 0.0 && es.alpha < 1.0);
                prop_assert!(es.beta > 0.0 && es.beta < 1.0);
            }
        }

        #[test]
        fn periodic_series_is_reconstructed(alpha in 0.001f64..0.9, beta in 0.001f64..0.9) {
            // init from the series prefix, one warm-up pass, then check a week
            let z = |t: usize| 1000.0 * weekly_shape(t % SEASON);
            let prefix: Vec<f64> = (0..SEASON).map(z).collect();
            let mut es = EsState::init(&prefix, 0.0, 0.0).unwrap();
            es.alpha = alpha;
            es.beta = beta;
            for t in 0..SEASON {
                es.hw_step(z(t)).unwrap();
            }
            for t in SEASON..2 * SEASON {
                let predicted = es.level * es.seasonal[0];
                prop_assert!(((predicted - z(t)) / z(t)).abs() < 0.01);
                es.hw_step(z(t)).unwrap();
            }
        }
    }
}
