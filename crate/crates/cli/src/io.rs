//! CSV formats. Every file written here has a header row and ends with a
//! `#` comment line recording the crate version, seed and config hash;
//! readers skip `#` lines.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use ergi_core::realized_vol::TickDay;

use crate::error::{CliError, CliResult};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Meta {
    pub seed: u64,
    pub config_hash: String,
}

impl Meta {
    pub fn line(&self) -> String {
        format!("# ergi {VERSION} seed={} config_sha256={}", self.seed, self.config_hash)
    }
}

/// Shortest representation that parses back to the same value.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

pub fn write_csv<I, R>(path: &Path, header: &[&str], rows: I, meta: &Meta) -> CliResult<usize>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header).map_err(|e| CliError::io(path, e))?;
    let mut count = 0;
    for r in rows {
        w.write_record(r).map_err(|e| CliError::io(path, e))?;
        count += 1;
    }
    let mut file = w.into_inner().map_err(|e| CliError::io(path, e.error()))?;
    writeln!(file, "{}", meta.line()).map_err(|e| CliError::io(path, e))?;
    Ok(count)
}

/// Rows of a CSV with the expected header, each paired with its line number.
fn read_rows(path: &Path, header: &[&str]) -> CliResult<Vec<(u64, csv::StringRecord)>> {
    let mut text = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    // A comment on the last line is only recognised when terminated.
    if text.last().is_some_and(|&c| c != b'\n') {
        text.push(b'\n');
    }
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_slice());
    let got = r.headers().map_err(|e| CliError::io(path, e))?.clone();
    if got.iter().collect::<Vec<_>>() != header {
        return Err(CliError::Data(format!(
            "{}: line 1: expected header `{}`, found `{}`",
            path.display(),
            header.join(","),
            got.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::Data(format!("{}: line {line}: {e}", path.display()))
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        out.push((line, rec));
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(path: &Path, line: u64, rec: &csv::StringRecord, i: usize, name: &str) -> CliResult<T> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| CliError::Data(format!("{}: line {line}: bad {name} `{}`", path.display(), rec.get(i).unwrap_or(""))))
}

pub const TICK_HEADER: [&str; 3] = ["day", "timestamp", "log_price"];

/// Reads a tick file. Day indices missing between the first and last day
/// come back as empty days.
pub fn read_ticks(path: &Path) -> CliResult<Vec<TickDay>> {
    let rows = read_rows(path, &TICK_HEADER)?;
    let mut days: Vec<TickDay> = Vec::new();
    for (line, rec) in rows {
        let day: i64 = field(path, line, &rec, 0, "day")?;
        let t: f64 = field(path, line, &rec, 1, "timestamp")?;
        let y: f64 = field(path, line, &rec, 2, "log_price")?;
        let bad = |msg: &str| CliError::Data(format!("{}: line {line}: {msg}", path.display()));
        if !t.is_finite() || !(0.0..1.0).contains(&t) {
            return Err(bad("timestamp must lie in [0, 1)"));
        }
        if !y.is_finite() {
            return Err(bad("log_price must be finite"));
        }
        match days.last_mut() {
            Some(d) if d.day_index == day => {
                if t <= *d.timestamps.last().expect("days are created non-empty") {
                    return Err(bad("timestamps must be strictly increasing within a day"));
                }
                d.timestamps.push(t);
                d.log_prices.push(y);
            }
            Some(d) if d.day_index > day => return Err(bad("rows must be sorted by day")),
            last => {
                let next = last.map_or(day, |d| d.day_index + 1);
                for gap in next..day {
                    days.push(TickDay { day_index: gap, timestamps: Vec::new(), log_prices: Vec::new() });
                }
                days.push(TickDay { day_index: day, timestamps: vec![t], log_prices: vec![y] });
            }
        }
    }
    Ok(days)
}

pub fn tick_rows(days: &[TickDay]) -> impl Iterator<Item = [String; 3]> + '_ {
    days.iter().flat_map(|d| {
        d.timestamps
            .iter()
            .zip(&d.log_prices)
            .map(move |(t, y)| [d.day_index.to_string(), fmt_f64(*t), fmt_f64(*y)])
    })
}

pub const RV_HEADER: [&str; 5] = ["day_index", "rv", "k_window", "truncated_count", "error"];

#[derive(Debug, Clone, PartialEq)]
pub struct RvRow {
    pub day_index: i64,
    /// `None` when the estimate failed for that day.
    pub rv: Option<f64>,
    pub k_window: usize,
    pub truncated_count: usize,
    pub error: String,
}

pub fn read_rv(path: &Path) -> CliResult<Vec<RvRow>> {
    let mut out = Vec::new();
    for (line, rec) in read_rows(path, &RV_HEADER)? {
        let error = rec.get(4).unwrap_or("").to_string();
        let rv = if error.is_empty() {
            let v: f64 = field(path, line, &rec, 1, "rv")?;
            if !v.is_finite() || v < 0.0 {
                return Err(CliError::Data(format!("{}: line {line}: rv must be finite and non-negative", path.display())));
            }
            Some(v)
        } else {
            None
        };
        out.push(RvRow {
            day_index: field(path, line, &rec, 0, "day_index")?,
            rv,
            k_window: field(path, line, &rec, 2, "k_window")?,
            truncated_count: field(path, line, &rec, 3, "truncated_count")?,
            error,
        });
    }
    Ok(out)
}

pub const RETURNS_HEADER: [&str; 2] = ["day", "return"];

pub fn read_returns(path: &Path) -> CliResult<Vec<(i64, f64)>> {
    read_rows(path, &RETURNS_HEADER)?
        .into_iter()
        .map(|(line, rec)| Ok((field(path, line, &rec, 0, "day")?, field(path, line, &rec, 1, "return")?)))
        .collect()
}

/// Open-to-close log return from the first and last tick; `None` for days
/// with fewer than two ticks.
pub fn open_to_close(day: &TickDay) -> Option<f64> {
    match (day.log_prices.first(), day.log_prices.last()) {
        (Some(a), Some(b)) if day.len() >= 2 => Some(b - a),
        _ => None,
    }
}
