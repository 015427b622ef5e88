//! Hourly load series, calendar features and load-profile diagnostics.

mod diagnostics;
mod io;

pub use diagnostics::{
    daily_pattern_distance, diagnose, harmonic_contribution, harmonic_spectrum,
    variation_coefficient, SeriesDiagnostics,
};
pub use io::{load_csv, read_csv, write_csv, write_csv_to, TIMESTAMP_FORMAT};

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HOURS_PER_DAY: usize = 24;
pub const HOURS_PER_WEEK: usize = 168;

pub const DAYS_OF_WEEK: usize = 7;
pub const DAYS_OF_MONTH: usize = 31;
pub const WEEKS_OF_YEAR: usize = 52;
/// Width of the concatenated calendar one-hot blocks.
pub const CALENDAR_WIDTH: usize = DAYS_OF_WEEK + DAYS_OF_MONTH + WEEKS_OF_YEAR;

/// One country's hourly load, strictly hourly with no gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct HourlySeries {
    id: String,
    start: NaiveDateTime,
    values: Vec<f64>,
}

impl HourlySeries {
    pub fn new(id: impl Into<String>, start: NaiveDateTime, values: Vec<f64>) -> Result<Self> {
        let id = id.into();
        if values.is_empty() {
            return Err(Error::series(&id, "empty series"));
        }
        if start.minute() != 0 || start.second() != 0 || start.nanosecond() != 0 {
            return Err(Error::series(&id, format!("start {start} is not on an hour boundary")));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            let ts = start + Duration::hours(i as i64);
            return Err(Error::series(&id, format!("non-positive value {v} at {ts}")));
        }
        Ok(HourlySeries { id, start, values })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn start(&self) -> NaiveDateTime {
        self.start
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamp_at(&self, index: usize) -> NaiveDateTime {
        self.start + Duration::hours(index as i64)
    }

    /// Timestamp one hour past the last value.
    pub fn end(&self) -> NaiveDateTime {
        self.timestamp_at(self.values.len())
    }

    /// Index of the hour `ts`; may lie outside the series.
    pub fn offset_of(&self, ts: NaiveDateTime) -> i64 {
        (ts - self.start).num_hours()
    }

    pub fn index_of(&self, ts: NaiveDateTime) -> Option<usize> {
        let off = self.offset_of(ts);
        (off >= 0 && (off as usize) < self.values.len()).then_some(off as usize)
    }

    /// Index of the first hour that starts a day (00:00).
    pub fn first_midnight(&self) -> usize {
        (HOURS_PER_DAY - self.start.hour() as usize) % HOURS_PER_DAY
    }

    /// Copy restricted to hours before `until`.
    pub fn truncated(&self, until: NaiveDateTime) -> Result<Self> {
        let off = self.offset_of(until).clamp(0, self.values.len() as i64) as usize;
        HourlySeries::new(self.id.clone(), self.start, self.values[..off].to_vec())
    }

    pub fn scaled(&self, k: f64) -> Result<Self> {
        HourlySeries::new(
            self.id.clone(),
            self.start,
            self.values.iter().map(|v| v * k).collect(),
        )
    }
}

/// Calendar position of a forecast day, as zero-based indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalendarFeatures {
    pub day_of_week: usize,
    pub day_of_month: usize,
    pub week_of_year: usize,
}

impl CalendarFeatures {
    /// Concatenated one-hot blocks (7 + 31 + 52).
    pub fn one_hot(&self) -> [f64; CALENDAR_WIDTH] {
        let mut v = [0.0; CALENDAR_WIDTH];
        v[self.day_of_week] = 1.0;
        v[DAYS_OF_WEEK + self.day_of_month] = 1.0;
        v[DAYS_OF_WEEK + DAYS_OF_MONTH + self.week_of_year] = 1.0;
        v
    }
}

/// Monday = 0; ISO week 53 shares index 51 with week 52.
pub fn calendar_for(date: NaiveDate) -> CalendarFeatures {
    let iso_week = date.iso_week().week() as usize;
    CalendarFeatures {
        day_of_week: date.weekday().num_days_from_monday() as usize,
        day_of_month: date.day0() as usize,
        week_of_year: iso_week.min(WEEKS_OF_YEAR) - 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    #[test]
    fn new_year_2018_is_a_monday_in_week_one() {
        let c = calendar_for(date(2018, 1, 1));
        assert_eq!(c, CalendarFeatures { day_of_week: 0, day_of_month: 0, week_of_year: 0 });
    }

    #[test]
    fn last_day_of_2018_belongs_to_iso_week_one() {
        let c = calendar_for(date(2018, 12, 31));
        assert_eq!(c.week_of_year, 0);
        assert_eq!(c.day_of_month, 30);
    }

    #[test]
    fn iso_week_53_is_clamped() {
        // 2020-12-31 lies in ISO week 53 of 2020.
        let d = date(2020, 12, 31);
        assert_eq!(d.iso_week().week(), 53);
        assert_eq!(calendar_for(d).week_of_year, 51);
    }

    #[test]
    fn one_hot_blocks_have_single_ones() {
        let mut d = date(2015, 1, 1);
        for _ in 0..(6 * 366) {
            let v = calendar_for(d).one_hot();
            let sum = |r: std::ops::Range<usize>| v[r].iter().sum::<f64>();
            assert_eq!(sum(0..7), 1.0);
            assert_eq!(sum(7..38), 1.0);
            assert_eq!(sum(38..90), 1.0);
            d = d.succ_opt().unwrap();
        }
    }

    #[test]
    fn series_rejects_non_positive_values() {
        let start = date(2018, 1, 1).and_hms_opt(0, 0, 0).unwrap();
        assert!(HourlySeries::new("PL", start, vec![1.0, 0.0]).is_err());
        assert!(HourlySeries::new("PL", start, vec![]).is_err());
        assert!(HourlySeries::new("PL", start, vec![1.0, 2.0]).is_ok());
    }

    #[test]
    fn first_midnight_offset() {
        let start = date(2018, 1, 1).and_hms_opt(21, 0, 0).unwrap();
        let s = HourlySeries::new("X", start, vec![1.0; 10]).unwrap();
        assert_eq!(s.first_midnight(), 3);
        assert_eq!(s.timestamp_at(3).hour(), 0);
    }
}
