use std::f64::consts::PI;

use chrono::{Datelike, Weekday};
use rustfft::{num_complex::Complex, FftPlanner};

use super::{HourlySeries, HOURS_PER_DAY};
use crate::error::{Error, Result};

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn population_variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64
}

/// `100 * s / mean` with the population standard deviation.
pub fn variation_coefficient(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("variation coefficient of an empty sequence"));
    }
    let m = mean(values);
    if m == 0.0 {
        return Err(Error::invalid("variation coefficient with zero mean"));
    }
    Ok(100.0 * population_variance(values).sqrt() / m)
}

fn contribution(x_abs: f64, index: usize, n: usize, var: f64) -> f64 {
    // A_i = 2|X_i|/n, except the Nyquist bin which carries A^2 rather than A^2/2.
    let amp = if 2 * index == n {
        2f64.sqrt() * x_abs / n as f64
    } else {
        2.0 * x_abs / n as f64
    };
    100.0 * amp * amp / (2.0 * var)
}

/// Share (percent) of the series variance carried by harmonic `index`,
/// i.e. the sinusoid completing `index` cycles over the whole series.
pub fn harmonic_contribution(values: &[f64], index: usize) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(Error::invalid("harmonic contribution needs at least 2 values"));
    }
    if index == 0 || 2 * index > n {
        return Err(Error::invalid(format!("harmonic index {index} outside 1..={}", n / 2)));
    }
    let var = population_variance(values);
    if var == 0.0 {
        return Err(Error::invalid("harmonic contribution of a zero-variance series"));
    }
    let (mut re, mut im) = (0.0, 0.0);
    for (t, z) in values.iter().enumerate() {
        let phase = 2.0 * PI * ((index * t) % n) as f64 / n as f64;
        re += z * phase.cos();
        im -= z * phase.sin();
    }
    Ok(contribution(re.hypot(im), index, n, var))
}

/// Contributions of harmonics `1..=n/2`, element `k` holding harmonic `k+1`.
pub fn harmonic_spectrum(values: &[f64]) -> Result<Vec<f64>> {
    let n = values.len();
    if n < 2 {
        return Err(Error::invalid("harmonic spectrum needs at least 2 values"));
    }
    let var = population_variance(values);
    if var == 0.0 {
        return Err(Error::invalid("harmonic spectrum of a zero-variance series"));
    }
    let mut buf: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    Ok((1..=n / 2)
        .map(|i| contribution(buf[i].norm(), i, n, var))
        .collect())
}

fn daily_pattern(day: &[f64]) -> Result<Vec<f64>> {
    if day.len() != HOURS_PER_DAY {
        return Err(Error::invalid(format!("daily pattern needs 24 values, got {}", day.len())));
    }
    let m = mean(day);
    let centered: Vec<f64> = day.iter().map(|v| v - m).collect();
    let norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::invalid("constant day has no daily pattern"));
    }
    Ok(centered.into_iter().map(|v| v / norm).collect())
}

/// Euclidean distance between the centered, unit-length profiles of two days.
pub fn daily_pattern_distance(day_a: &[f64], day_b: &[f64]) -> Result<f64> {
    let a = daily_pattern(day_a)?;
    let b = daily_pattern(day_b)?;
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

/// Per-series profile statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesDiagnostics {
    /// Mean over days of the within-day variation coefficient.
    pub v_daily: f64,
    /// Mean over weeks of the variation coefficient of daily means.
    pub v_weekly: Option<f64>,
    /// Mean over 52-week years of the variation coefficient of weekly means.
    pub v_yearly: Option<f64>,
    /// `(label, period in hours, contribution %)` for the named seasonal harmonics.
    pub harmonics: Vec<(String, usize, f64)>,
    /// Mean distance between daily patterns one week apart.
    pub mean_pattern_distance: Option<f64>,
}

const NAMED_PERIODS: [(&str, usize); 4] = [
    ("daily", 24),
    ("weekly", 168),
    ("half_yearly", 4380),
    ("yearly", 8760),
];

pub fn diagnose(series: &HourlySeries) -> Result<SeriesDiagnostics> {
    let values = series.values();
    let first = series.first_midnight();
    let days: Vec<&[f64]> = values[first.min(values.len())..]
        .chunks_exact(HOURS_PER_DAY)
        .collect();
    if days.is_empty() {
        return Err(Error::series(series.id(), "less than one full day of data"));
    }
    let v_daily = mean(
        &days
            .iter()
            .map(|d| variation_coefficient(d))
            .collect::<Result<Vec<_>>>()?,
    );
    let daily_means: Vec<f64> = days.iter().map(|d| mean(d)).collect();

    // weeks start on the first Monday
    let first_day = series.timestamp_at(first).date();
    let to_monday = (7 + Weekday::Mon.num_days_from_monday() as i64
        - first_day.weekday().num_days_from_monday() as i64)
        % 7;
    let weekly: Vec<&[f64]> = daily_means
        .get(to_monday as usize..)
        .unwrap_or(&[])
        .chunks_exact(7)
        .collect();
    let v_weekly = if weekly.is_empty() {
        None
    } else {
        Some(mean(
            &weekly
                .iter()
                .map(|w| variation_coefficient(w))
                .collect::<Result<Vec<_>>>()?,
        ))
    };
    let weekly_means: Vec<f64> = weekly.iter().map(|w| mean(w)).collect();
    let years: Vec<&[f64]> = weekly_means.chunks_exact(52).collect();
    let v_yearly = if years.is_empty() {
        None
    } else {
        Some(mean(
            &years
                .iter()
                .map(|y| variation_coefficient(y))
                .collect::<Result<Vec<_>>>()?,
        ))
    };

    let n = values.len();
    let mut harmonics = Vec::new();
    if population_variance(values) > 0.0 {
        for (label, period) in NAMED_PERIODS {
            let index = (n as f64 / period as f64).round() as usize;
            if index >= 1 && 2 * index <= n {
                harmonics.push((label.to_string(), period, harmonic_contribution(values, index)?));
            }
        }
    }

    let distances: Vec<f64> = days
        .iter()
        .zip(days.iter().skip(7))
        .filter_map(|(a, b)| daily_pattern_distance(a, b).ok())
        .collect();
    let mean_pattern_distance = (!distances.is_empty()).then(|| mean(&distances));

    Ok(SeriesDiagnostics {
        v_daily,
        v_weekly,
        v_yearly,
        harmonics,
        mean_pattern_distance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_has_zero_variation() {
        assert_eq!(variation_coefficient(&[5.0, 5.0, 5.0]).unwrap(), 0.0);
    }

    #[test]
    fn two_point_variation() {
        let v = variation_coefficient(&[2.0, 4.0]).unwrap();
        assert!((v - 100.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn variation_errors() {
        assert!(variation_coefficient(&[]).is_err());
        assert!(variation_coefficient(&[1.0, -1.0]).is_err());
    }

    #[test]
    fn sinusoid_variation_matches_closed_form() {
        let (level, amp) = (1000.0, 120.0);
        let z: Vec<f64> = (0..24 * 70)
            .map(|t| level + amp * (2.0 * PI * t as f64 / 24.0).sin())
            .collect();
        let expected = amp / (2f64.sqrt() * level) * 100.0;
        let v = variation_coefficient(&z).unwrap();
        assert!((v - expected).abs() / expected < 0.01);
    }

    fn sine(n: usize, period: f64) -> Vec<f64> {
        (0..n).map(|t| 10.0 + (2.0 * PI * t as f64 / period).sin()).collect()
    }

    #[test]
    fn single_harmonic_holds_all_variance() {
        let z = sine(240, 24.0);
        assert!((harmonic_contribution(&z, 10).unwrap() - 100.0).abs() < 0.5);
        for i in [1, 5, 9, 11, 20, 120] {
            assert!(harmonic_contribution(&z, i).unwrap() < 1e-6, "harmonic {i}");
        }
    }

    #[test]
    fn two_equal_sinusoids_split_evenly() {
        let z: Vec<f64> = (0..336)
            .map(|t| {
                let t = t as f64;
                50.0 + 3.0 * (2.0 * PI * t / 24.0).sin() + 3.0 * (2.0 * PI * t / 168.0 + 0.4).cos()
            })
            .collect();
        assert!((harmonic_contribution(&z, 14).unwrap() - 50.0).abs() < 1.0);
        assert!((harmonic_contribution(&z, 2).unwrap() - 50.0).abs() < 1.0);
    }

    #[test]
    fn zero_variance_is_an_error() {
        assert!(harmonic_contribution(&[3.0; 10], 1).is_err());
    }

    #[test]
    fn fft_route_agrees_with_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z: Vec<f64> = (0..101).map(|_| rng.random_range(1.0..5.0)).collect();
        let spectrum = harmonic_spectrum(&z).unwrap();
        for i in 1..=50 {
            let direct = harmonic_contribution(&z, i).unwrap();
            assert!((spectrum[i - 1] - direct).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn parseval_sums_to_100(values in prop::collection::vec(-5.0f64..5.0, 2..200)) {
            prop_assume!(population_variance(&values) > 1e-6);
            let m = mean(&values);
            let centered: Vec<f64> = values.iter().map(|v| v - m).collect();
            let total: f64 = harmonic_spectrum(&centered).unwrap().iter().sum();
            prop_assert!((total - 100.0).abs() < 0.1, "total {}", total);
        }

        #[test]
        fn pattern_distance_is_affine_invariant(
            day in prop::collection::vec(1.0f64..100.0, 24),
            scale in 0.01f64..50.0,
            shift in -10.0f64..1000.0,
        ) {
            prop_assume!(population_variance(&day) > 1e-3);
            let other: Vec<f64> = day.iter().rev().copied().collect();
            let base = daily_pattern_distance(&day, &other).unwrap();
            let moved: Vec<f64> = day.iter().map(|v| scale * v + shift).collect();
            let d = daily_pattern_distance(&moved, &other).unwrap();
            prop_assert!((d - base).abs() < 1e-9);
        }
    }

    #[test]
    fn pattern_distance_extremes() {
        let a: Vec<f64> = (0..24).map(|h| 100.0 + (h as f64 * 0.3).sin() * 10.0).collect();
        let b: Vec<f64> = a.iter().map(|v| 3.0 * v + 7.0).collect();
        assert!(daily_pattern_distance(&a, &b).unwrap() < 1e-12);
        let m = mean(&a);
        let mirrored: Vec<f64> = a.iter().map(|v| 2.0 * m - v + 50.0).collect();
        assert!((daily_pattern_distance(&a, &mirrored).unwrap() - 2.0).abs() < 1e-12);
        assert!(daily_pattern_distance(&[5.0; 24], &a).is_err());
    }

    #[test]
    fn pattern_distance_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let a: Vec<f64> = (0..24).map(|_| rng.random_range(500.0..900.0)).collect();
        let b: Vec<f64> = (0..24).map(|_| rng.random_range(500.0..900.0)).collect();
        let normalize = |d: &[f64]| {
            let m: f64 = d.iter().sum::<f64>() / 24.0;
            let norm: f64 = d.iter().map(|v| (v - m).powi(2)).sum::<f64>().sqrt();
            d.iter().map(|v| (v - m) / norm).collect::<Vec<_>>()
        };
        let (na, nb) = (normalize(&a), normalize(&b));
        let mut sq = 0.0;
        for h in 0..24 {
            sq += (na[h] - nb[h]).powi(2);
        }
        assert!((daily_pattern_distance(&a, &b).unwrap() - sq.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn diagnose_constant_and_sinusoid() {
        let start = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let flat = HourlySeries::new("C", start, vec![100.0; 24 * 7 * 60]).unwrap();
        let d = diagnose(&flat).unwrap();
        assert_eq!(d.v_daily, 0.0);
        assert_eq!(d.v_weekly, Some(0.0));
        assert_eq!(d.v_yearly, Some(0.0));
        assert!(d.harmonics.is_empty());

        let z: Vec<f64> = (0..24 * 7 * 20)
            .map(|t| 100.0 + 10.0 * (2.0 * PI * t as f64 / 24.0).sin())
            .collect();
        let s = HourlySeries::new("S", start, z).unwrap();
        let d = diagnose(&s).unwrap();
        let daily = d.harmonics.iter().find(|h| h.0 == "daily").unwrap();
        assert!((daily.2 - 100.0).abs() < 0.5);
        assert!(d.mean_pattern_distance.unwrap() < 1e-9);
    }
}
