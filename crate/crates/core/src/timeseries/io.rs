use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Duration, NaiveDateTime, Timelike};

use super::HourlySeries;
use crate::error::{Error, Result};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<HourlySeries>> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file)
}

/// Parses `series_id,timestamp,value` rows into one series per id, in order
/// of first appearance. Rows within a series may come in any order.
pub fn read_csv(reader: impl Read) -> Result<Vec<HourlySeries>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["series_id", "timestamp", "value"];
    if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(Error::Parse {
            line: 1,
            detail: format!("expected header series_id,timestamp,value, got {:?}", headers),
        });
    }

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(NaiveDateTime, f64, usize)>> = HashMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let bad = |detail: String| Error::Parse { line, detail };
        if record.len() != 3 {
            return Err(bad(format!("expected 3 fields, got {}", record.len())));
        }
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(bad("empty series_id".into()));
        }
        let ts = NaiveDateTime::parse_from_str(&record[1], TIMESTAMP_FORMAT)
            .map_err(|e| bad(format!("bad timestamp {:?}: {e}", &record[1])))?;
        if ts.minute() != 0 || ts.second() != 0 {
            return Err(bad(format!("timestamp {ts} is not on an hour boundary")));
        }
        let value: f64 = record[2]
            .parse()
            .map_err(|e| bad(format!("bad value {:?}: {e}", &record[2])))?;
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::series(&id, format!("non-positive value {value} at {ts} (line {line})")));
        }
        rows.entry(id.clone())
            .or_insert_with(|| {
                order.push(id.clone());
                Vec::new()
            })
            .push((ts, value, line));
    }

    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let mut r = rows.remove(&id).unwrap_or_default();
        r.sort_by_key(|(ts, _, _)| *ts);
        for w in r.windows(2) {
            let (prev, next) = (w[0].0, w[1].0);
            if next == prev {
                return Err(Error::series(&id, format!("duplicate hour {prev} (line {})", w[1].2)));
            }
            if next - prev != Duration::hours(1) {
                let missing = prev + Duration::hours(1);
                return Err(Error::series(
                    &id,
                    format!("missing hour {}", missing.format(TIMESTAMP_FORMAT)),
                ));
            }
        }
        let start = r[0].0;
        out.push(HourlySeries::new(id, start, r.into_iter().map(|x| x.1).collect())?);
    }
    Ok(out)
}

pub fn write_csv(path: impl AsRef<Path>, series: &[HourlySeries]) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_csv_to(std::io::BufWriter::new(file), series)
}

pub fn write_csv_to(writer: impl Write, series: &[HourlySeries]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["series_id", "timestamp", "value"])?;
    for s in series {
        for (i, v) in s.values().iter().enumerate() {
            let ts = s.timestamp_at(i).format(TIMESTAMP_FORMAT).to_string();
            w.write_record([s.id(), ts.as_str(), v.to_string().as_str()])?;
        }
    }
    w.flush()?;
    Ok(())
}
