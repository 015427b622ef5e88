use std::path::Path;
use std::process::Command;

use chrono::NaiveDate;
use esdrnn::cli::{cmd_diagnose, cmd_evaluate, match_rows, read_forecast_csv, ForecastRow};
use esdrnn::evaluation::naive_forecast;
use esdrnn::timeseries::{self, HourlySeries};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_esdrnn"))
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = bin().args(args).env("RUST_LOG", "warn").output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL_CONFIG: &str = r#"{
  "model": {"network": {"s_c": 12, "s_h": 4, "s_y": 8}},
  "schedule": {"epochs": 2, "batch_sizes": [2, 2], "learning_rates": [0.003, 0.001],
               "max_updates": 3, "w_s": 4, "ensemble_size": 2}
}"#;

#[test]
fn synth_train_forecast_evaluate_diagnose() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, r#"{"series": 2, "days": 120}"#).unwrap();
    let (code, _, err) = run(&["synth", "--config", p(&spec), "--out", p(&data)]);
    assert_eq!(code, 0, "{err}");

    let config = dir.path().join("run.json");
    std::fs::write(&config, SMALL_CONFIG).unwrap();
    let ck = dir.path().join("ck");
    let (code, _, err) = run(&[
        "train", "--config", p(&config), "--data", p(&data), "--out", p(&ck), "--to", "2016-04-10",
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(ck.join("member-0001.bin").exists() && ck.join("member-0002.json").exists());
    let log = std::fs::read_to_string(ck.join("train.log")).unwrap();
    assert_eq!(log.lines().count(), 4);

    let fc = dir.path().join("forecast.csv");
    let (code, _, err) = run(&[
        "forecast", "--checkpoints", p(&ck), "--data", p(&data), "--from", "2016-04-11", "--to", "2016-04-20", "--out", p(&fc),
    ]);
    assert_eq!(code, 0, "{err}");
    let rows = read_forecast_csv(std::fs::File::open(&fc).unwrap()).unwrap();
    assert_eq!(rows.len(), 2 * 10 * 24);

    let report = dir.path().join("report");
    let (code, _, err) = run(&["evaluate", "--forecast", p(&fc), "--data", p(&data), "--out", p(&report)]);
    assert_eq!(code, 0, "{err}");
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report.join("metrics.json")).unwrap()).unwrap();
    assert!(json["cross_series_mean"]["mape"].as_f64().unwrap() > 0.0);
    let breakdown = std::fs::read_to_string(report.join("breakdown.csv")).unwrap();
    assert!(breakdown.starts_with("series_id,group,key,count,mape"));

    let (code, out, err) = run(&["diagnose", "--data", p(&data)]);
    assert_eq!(code, 0, "{err}");
    assert!(out.starts_with("series_id,metric,value"));
    assert!(out.contains("S2,harmonic_daily,"));
}

#[test]
fn one_day_one_series_gives_24_rows_and_short_series_are_partial() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let (code, _, _) = run(&["synth", "--out", p(&data)]);
    assert_eq!(code, 0);
    let config = dir.path().join("run.json");
    std::fs::write(&config, SMALL_CONFIG).unwrap();
    let ck = dir.path().join("ck");
    let (code, _, err) = run(&[
        "train", "--config", p(&config), "--data", p(&data), "--out", p(&ck), "--seeds", "4", "--to", "2016-05-01",
    ]);
    assert_eq!(code, 0, "{err}");

    // one series with full history, one that starts too late
    let all = timeseries::load_csv(&data).unwrap();
    let late_start = NaiveDate::from_ymd_opt(2016, 6, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    let late_offset = all[1].offset_of(late_start) as usize;
    let late = HourlySeries::new("late", late_start, all[1].values()[late_offset..].to_vec()).unwrap();
    let mixed = dir.path().join("mixed.csv");
    timeseries::write_csv(&mixed, &[all[0].clone(), late]).unwrap();

    let (code, out, err) = run(&[
        "forecast", "--checkpoints", p(&ck), "--data", p(&mixed), "--from", "2016-06-10", "--to", "2016-06-10",
    ]);
    assert_eq!(code, 2, "{err}");
    let rows = read_forecast_csv(out.as_bytes()).unwrap();
    assert_eq!(rows.len(), 24);
    assert!(rows.iter().all(|r| r.series_id == "S1"));
}

#[test]
fn invalid_configs_exit_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    std::fs::write(&config, r#"{"model": {"network": {"s_c": 99}}}"#).unwrap();
    let (code, _, err) = run(&["train", "--config", p(&config), "--data", "missing.csv", "--out", p(dir.path())]);
    assert_eq!(code, 1);
    assert!(err.contains("s_c=99"), "{err}");

    std::fs::write(&config, r#"{"learning_rate": 0.1}"#).unwrap();
    let (code, _, err) = run(&["train", "--config", p(&config)]);
    assert_eq!(code, 1);
    assert!(err.contains("unknown field"), "{err}");

    let (code, _, _) = run(&["train", "--ablation", "ab12"]);
    assert_ne!(code, 0);
    let (code, _, err) = run(&["forecast", "--checkpoints", p(dir.path()), "--data", "x.csv", "--from", "2017-01-01", "--to", "2017-01-02"]);
    assert_eq!(code, 1);
    assert!(err.contains("no checkpoints"), "{err}");
}

fn series(id: &str, values: Vec<f64>) -> HourlySeries {
    let start = NaiveDate::from_ymd_opt(2017, 1, 2).unwrap().and_hms_opt(0, 0, 0).unwrap();
    HourlySeries::new(id, start, values).unwrap()
}

fn row(id: &str, day: u32, hour: u32, point: f64) -> ForecastRow {
    ForecastRow {
        series_id: id.into(),
        timestamp: NaiveDate::from_ymd_opt(2017, 1, day).unwrap().and_hms_opt(hour, 0, 0).unwrap(),
        point,
        lower: None,
        upper: None,
    }
}

#[test]
fn evaluate_reproduces_hand_computed_mape() {
    // actuals 100 and 200; forecasts 110 and 180 give APEs of 10% each
    let actual = series("A", (0..48).map(|h| if h % 2 == 0 { 100.0 } else { 200.0 }).collect());
    let rows: Vec<ForecastRow> = (0..24)
        .map(|h| row("A", 3, h, if h % 2 == 0 { 110.0 } else { 180.0 }))
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let s = cmd_evaluate(&rows, &[actual], dir.path()).unwrap();
    assert!((s.cross_series_mean.mape - 10.0).abs() < 1e-12);
    assert!((s.pooled.mape - 10.0).abs() < 1e-12);
    assert_eq!(s.pooled.mpe, 0.0);
    assert!(dir.path().join("metrics.json").exists());
}

#[test]
fn naive_on_weekly_periodic_fixture_has_zero_mape() {
    let week: Vec<f64> = (0..168).map(|h| 500.0 + 100.0 * ((h as f64) * 0.2).sin()).collect();
    let values: Vec<f64> = week.iter().cycle().take(168 * 3).cloned().collect();
    let s = series("P", values);
    let day = NaiveDate::from_ymd_opt(2017, 1, 12).unwrap();
    let f = naive_forecast(&s, day).unwrap();
    let rows: Vec<ForecastRow> = (0..24).map(|h| row("P", 12, h as u32, f[h])).collect();
    let dir = tempfile::tempdir().unwrap();
    let summary = cmd_evaluate(&rows, &[s], dir.path()).unwrap();
    assert_eq!(summary.pooled.mape, 0.0);
}

#[test]
fn mismatched_timestamps_list_first_ten() {
    let s = series("A", vec![100.0; 48]);
    let rows: Vec<ForecastRow> = (0..24).map(|h| row("A", 20, h, 100.0)).collect();
    let msg = match_rows(&rows, &[s]).unwrap_err().to_string();
    assert!(msg.starts_with("invalid argument: 24 forecast rows"), "{msg}");
    assert_eq!(msg.matches("A,2017-01-20T").count(), 10);
}

#[test]
fn diagnose_constant_series_gives_zero_variation() {
    let s = series("C", vec![42.0; 24 * 21]);
    let mut out = Vec::new();
    let failed = cmd_diagnose(&[s], &mut out).unwrap();
    assert!(failed.is_empty());
    let text = String::from_utf8(out).unwrap();
    for metric in ["v_daily", "v_weekly"] {
        assert!(text.contains(&format!("C,{metric},0\n")), "{text}");
    }
}
