use std::time::Instant;

use chrono::{Duration, NaiveDate};
use esdrnn::forecasting::{forecast_day, rolling_forecast};
use esdrnn::model::ModelConfig;
use esdrnn::network::NetworkConfig;
use esdrnn::synthetic::{generate, SyntheticSpec};
use esdrnn::training::{train_member, LossConfig, TrainSchedule};

fn small_model() -> ModelConfig {
    ModelConfig {
        network: NetworkConfig { s_c: 30, s_h: 10, s_y: 20, ..NetworkConfig::default() },
        ..ModelConfig::default()
    }
}

#[test]
fn training_fits_a_single_noise_free_series() {
    let data = generate(&SyntheticSpec { series: 1, days: 120, noise: 0.0, ..SyntheticSpec::default() }).unwrap();
    let schedule = TrainSchedule {
        epochs: 6,
        batch_sizes: vec![1; 6],
        learning_rates: vec![3e-3; 6],
        max_updates: 15,
        // one series, batch 1: p = 1 makes every epoch exactly N updates
        p: 1.0,
        ..TrainSchedule::desk()
    };
    let m = train_member(&data, &small_model(), &schedule, &LossConfig::default(), 9).unwrap();
    let first = m.reports.first().unwrap().mean_loss;
    let last = m.reports.last().unwrap().mean_loss;
    assert!(last < 0.5 * first, "loss {first} -> {last}");
    assert!(m.reports.iter().all(|r| r.updates == 15));
    assert_eq!(m.es_states.len(), 1);
}

#[test]
fn training_is_reproducible_and_seed_dependent() {
    let data = generate(&SyntheticSpec { series: 3, days: 90, ..SyntheticSpec::default() }).unwrap();
    let schedule = TrainSchedule {
        epochs: 2,
        batch_sizes: vec![2, 2],
        learning_rates: vec![3e-3, 1e-3],
        max_updates: 3,
        ..TrainSchedule::desk()
    };
    let run = |seed| train_member(&data, &small_model(), &schedule, &LossConfig::default(), seed).unwrap();
    let (a, b, c) = (run(1), run(1), run(2));
    assert_eq!(a, b);
    assert_ne!(a.model.params, c.model.params);
}

#[test]
fn year_of_rolling_forecasts_on_two_series() {
    let data = generate(&SyntheticSpec { series: 2, days: 500, ..SyntheticSpec::default() }).unwrap();
    let schedule = TrainSchedule {
        epochs: 1,
        batch_sizes: vec![2],
        learning_rates: vec![3e-3],
        max_updates: 2,
        ..TrainSchedule::desk()
    };
    let m = train_member(&data, &ModelConfig::default(), &schedule, &LossConfig::default(), 5).unwrap();
    let from = NaiveDate::from_ymd_opt(2016, 3, 1).unwrap();
    let to = from + Duration::days(364);
    let refs: Vec<_> = data.iter().collect();
    let t0 = Instant::now();
    let bundles = rolling_forecast(&m.model, &refs, from, to, schedule.w_s).unwrap();
    let elapsed = t0.elapsed();
    assert_eq!(bundles.len(), 2 * 365);
    assert!(elapsed.as_secs() < 900, "{elapsed:?}");
    for b in &bundles {
        assert!(b.point.iter().chain(&b.lower).chain(&b.upper).all(|v| v.is_finite() && *v > 0.0));
    }
    // the rolled forecast for the first day matches a standalone one
    let single = forecast_day(&m.model, &data[1], from, schedule.w_s).unwrap();
    let rolled = bundles.iter().find(|b| b.series_id == "S2" && b.target_day == from).unwrap();
    for (x, y) in single.point.iter().zip(&rolled.point) {
        assert!((x - y).abs() <= 1e-9 * x.abs());
    }
}
