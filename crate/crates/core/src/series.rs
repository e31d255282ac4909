//! Daily series containers, calendar-true day indexing, train/test splitting
//! and exclusion masks.
//!
//! Day indices are always counted from the first date of the series, so the
//! regressor `t` keeps its calendar meaning even after rows are masked out.

use std::io::{Read, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DATE_FORMAT: &str = "%Y-%m-%d";

pub fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), DATE_FORMAT)
        .map_err(|e| Error::InvalidSeries(format!("bad date {s:?}: {e}")))
}

/// Signed number of days from `from` to `to`.
pub fn days_between(from: NaiveDate, to: NaiveDate) -> i64 {
    (to - from).num_days()
}

pub fn add_days(date: NaiveDate, days: i64) -> NaiveDate {
    date + Duration::days(days)
}

/// One observation per consecutive calendar day, starting at `start`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailySeries {
    start: NaiveDate,
    values: Vec<f64>,
}

impl DailySeries {
    pub fn new(start: NaiveDate, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidSeries("series must contain at least one value".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSeries(format!(
                "non-finite value at {}",
                add_days(start, i as i64)
            )));
        }
        Ok(Self { start, values })
    }

    pub fn start(&self) -> NaiveDate {
        self.start
    }

    pub fn end(&self) -> NaiveDate {
        add_days(self.start, self.values.len() as i64 - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        date >= self.start && date <= self.end()
    }

    pub fn date_at(&self, index: usize) -> NaiveDate {
        add_days(self.start, index as i64)
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        (0..self.values.len()).map(move |i| self.date_at(i))
    }

    pub fn value_on(&self, date: NaiveDate) -> Option<f64> {
        self.day_index(date).ok().map(|i| self.values[i])
    }

    /// Days elapsed since the first date of the series.
    pub fn day_index(&self, date: NaiveDate) -> Result<usize> {
        if !self.contains(date) {
            return Err(Error::OutOfRange {
                date,
                start: self.start,
                end: self.end(),
            });
        }
        Ok(days_between(self.start, date) as usize)
    }

    /// Splits into `[start, boundary)` and `[boundary, end]`.
    pub fn split(&self, boundary: NaiveDate) -> Result<(DailySeries, DailySeries)> {
        if boundary <= self.start || boundary > self.end() {
            return Err(Error::InvalidSplit {
                boundary,
                start: self.start,
                end: self.end(),
            });
        }
        let at = days_between(self.start, boundary) as usize;
        let left = DailySeries {
            start: self.start,
            values: self.values[..at].to_vec(),
        };
        let right = DailySeries {
            start: boundary,
            values: self.values[at..].to_vec(),
        };
        Ok((left, right))
    }

    /// Appends `next`, which must start the day after `self` ends.
    pub fn concat(&self, next: &DailySeries) -> Result<DailySeries> {
        if next.start != add_days(self.end(), 1) {
            return Err(Error::InvalidSeries(format!(
                "cannot concatenate: {} does not follow {}",
                next.start,
                self.end()
            )));
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&next.values);
        Ok(DailySeries {
            start: self.start,
            values,
        })
    }

    /// Retained `(day_index, value)` pairs after masking. Indices keep their
    /// original calendar positions.
    pub fn apply_mask(&self, mask: &ExclusionMask) -> Result<Vec<(usize, f64)>> {
        mask.validate_for(self)?;
        Ok(self
            .values
            .iter()
            .enumerate()
            .filter(|(i, _)| !mask.excludes(self.date_at(*i)))
            .map(|(i, &v)| (i, v))
            .collect())
    }

    /// Reads the `date,consumption` CSV format. Rows must be consecutive days.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() < 2 {
            return Err(Error::InvalidSeries(format!(
                "expected header `date,consumption`, found {:?}",
                headers.iter().collect::<Vec<_>>()
            )));
        }
        let mut start = None;
        let mut prev: Option<NaiveDate> = None;
        let mut values = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let date = parse_date(record.get(0).unwrap_or(""))?;
            let raw = record.get(1).unwrap_or("");
            let value: f64 = raw
                .parse()
                .map_err(|_| Error::InvalidSeries(format!("row {}: bad consumption value {raw:?}", line + 2)))?;
            if let Some(p) = prev {
                if date != add_days(p, 1) {
                    return Err(Error::InvalidSeries(format!(
                        "row {}: expected {} after {p}, found {date} (gaps must be expressed with an exclusion mask)",
                        line + 2,
                        add_days(p, 1)
                    )));
                }
            } else {
                start = Some(date);
            }
            prev = Some(date);
            values.push(value);
        }
        let start = start.ok_or_else(|| Error::InvalidSeries("no data rows".into()))?;
        DailySeries::new(start, values)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["date", "consumption"])?;
        for (date, v) in self.dates().zip(&self.values) {
            w.write_record([date.format(DATE_FORMAT).to_string(), v.to_string()])?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }
}

/// Inclusive date ranges removed from fitting and evaluation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExclusionMask {
    ranges: Vec<(NaiveDate, NaiveDate)>,
}

impl ExclusionMask {
    pub fn new(ranges: Vec<(NaiveDate, NaiveDate)>) -> Result<Self> {
        for (i, &(a, b)) in ranges.iter().enumerate() {
            if a > b {
                return Err(Error::InvalidMask(format!("range {a}..={b} is reversed")));
            }
            if i > 0 && ranges[i - 1].1 >= a {
                return Err(Error::InvalidMask(format!(
                    "ranges must be sorted and non-overlapping ({}..={} vs {a}..={b})",
                    ranges[i - 1].0,
                    ranges[i - 1].1
                )));
            }
        }
        Ok(Self { ranges })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn ranges(&self) -> &[(NaiveDate, NaiveDate)] {
        &self.ranges
    }

    pub fn excludes(&self, date: NaiveDate) -> bool {
        self.ranges.iter().any(|&(a, b)| date >= a && date <= b)
    }

    /// Every range must intersect the series span.
    pub fn validate_for(&self, series: &DailySeries) -> Result<()> {
        // re-run structural checks for deserialized masks
        Self::new(self.ranges.clone())?;
        for &(a, b) in &self.ranges {
            if b < series.start() || a > series.end() {
                return Err(Error::InvalidMask(format!(
                    "range {a}..={b} does not intersect series span {}..={}",
                    series.start(),
                    series.end()
                )));
            }
        }
        Ok(())
    }

    /// Restriction to the ranges that touch `[start, end]`.
    pub fn restrict(&self, start: NaiveDate, end: NaiveDate) -> ExclusionMask {
        ExclusionMask {
            ranges: self.ranges.iter().copied().filter(|&(a, b)| b >= start && a <= end).collect(),
        }
    }
}

/// Residuals aligned to calendar day indices of the series they came from;
/// excluded days are simply absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSeries {
    origin: NaiveDate,
    points: Vec<(usize, f64)>,
}

impl ResidualSeries {
    pub fn new(origin: NaiveDate, points: Vec<(usize, f64)>) -> Result<Self> {
        if points.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::InvalidSeries("residual indices must be strictly increasing".into()));
        }
        if points.iter().any(|p| !p.1.is_finite()) {
            return Err(Error::InvalidSeries("non-finite residual".into()));
        }
        Ok(Self { origin, points })
    }

    /// Treats a plain series as a gap-free residual series.
    pub fn from_series(series: &DailySeries) -> Self {
        Self {
            origin: series.start(),
            points: series.values().iter().copied().enumerate().collect(),
        }
    }

    pub fn origin(&self) -> NaiveDate {
        self.origin
    }

    pub fn points(&self) -> &[(usize, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.1)
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.points.iter().map(move |p| add_days(self.origin, p.0 as i64))
    }

    /// Last `n` values, provided they are consecutive days.
    pub fn contiguous_tail(&self, n: usize) -> Option<Vec<f64>> {
        if self.points.len() < n {
            return None;
        }
        let tail = &self.points[self.points.len() - n..];
        if n > 0 && tail[n - 1].0 - tail[0].0 != n - 1 {
            return None;
        }
        Some(tail.iter().map(|p| p.1).collect())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["date", "residual"])?;
        for (date, v) in self.dates().zip(self.values()) {
            w.write_record([date.format(DATE_FORMAT).to_string(), v.to_string()])?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }
}
