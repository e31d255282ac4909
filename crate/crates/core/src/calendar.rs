//! Calendar features: month, weekday, holiday and adjustment-day dummies plus
//! the Spring Festival distance variable.
//!
//! Every dummy group drops one baseline category (January, Monday, "not a
//! holiday") because the regression always carries an intercept.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{add_days, days_between};

pub const DEFAULT_SPRING_HALF_WIDTH: u32 = 21;
/// The festival centre is the 4th day of the official holiday.
pub const DEFAULT_SPRING_CENTER_OFFSET: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Holiday {
    pub name: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl Holiday {
    pub fn contains(&self, date: NaiveDate) -> bool {
        date >= self.start && date <= self.end
    }
}

#[derive(Debug, Clone, Deserialize)]
struct RawCalendar {
    #[serde(default)]
    holidays: Vec<Holiday>,
    #[serde(default)]
    spring_festival_starts: Vec<NaiveDate>,
    #[serde(default)]
    adjustment_days: Vec<NaiveDate>,
    #[serde(default = "default_half_width")]
    spring_half_width: u32,
    #[serde(default = "default_center_offset")]
    spring_center_offset: u32,
    #[serde(default)]
    spring_window_indicator: bool,
}

fn default_half_width() -> u32 {
    DEFAULT_SPRING_HALF_WIDTH
}

fn default_center_offset() -> u32 {
    DEFAULT_SPRING_CENTER_OFFSET
}

/// Holiday windows, adjustment days and Spring Festival dates.
///
/// The Spring Festival is kept out of `holidays`; it enters the model only
/// through the distance variable (and the optional window indicator).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCalendar")]
pub struct CalendarSpec {
    holidays: Vec<Holiday>,
    #[serde(serialize_with = "serialize_festivals")]
    spring_festival_starts: BTreeMap<i32, NaiveDate>,
    adjustment_days: Vec<NaiveDate>,
    spring_half_width: u32,
    spring_center_offset: u32,
    spring_window_indicator: bool,
    #[serde(skip)]
    holiday_names: Vec<String>,
}

fn serialize_festivals<S: serde::Serializer>(
    map: &BTreeMap<i32, NaiveDate>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(map.values())
}

impl TryFrom<RawCalendar> for CalendarSpec {
    type Error = Error;

    fn try_from(raw: RawCalendar) -> Result<Self> {
        let mut festivals = BTreeMap::new();
        for start in raw.spring_festival_starts {
            if festivals.insert(start.year(), start).is_some() {
                return Err(Error::Calendar(format!(
                    "Spring Festival registered twice for {}",
                    start.year()
                )));
            }
        }
        CalendarSpec::new(
            raw.holidays,
            festivals,
            raw.adjustment_days,
            raw.spring_half_width,
            raw.spring_center_offset,
            raw.spring_window_indicator,
        )
    }
}

fn is_spring_festival_name(name: &str) -> bool {
    let norm: String = name
        .chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect();
    matches!(norm.as_str(), "springfestival" | "chinesenewyear" | "lunarnewyear")
}

impl CalendarSpec {
    pub fn new(
        mut holidays: Vec<Holiday>,
        spring_festival_starts: BTreeMap<i32, NaiveDate>,
        mut adjustment_days: Vec<NaiveDate>,
        spring_half_width: u32,
        spring_center_offset: u32,
        spring_window_indicator: bool,
    ) -> Result<Self> {
        let mut holiday_names: Vec<String> = Vec::new();
        for h in &holidays {
            if h.start > h.end {
                return Err(Error::Calendar(format!("holiday {} has start {} after end {}", h.name, h.start, h.end)));
            }
            if is_spring_festival_name(&h.name) {
                return Err(Error::Calendar(format!(
                    "{:?} must not appear in the generic holiday list; register it via spring_festival_starts",
                    h.name
                )));
            }
            if !holiday_names.contains(&h.name) {
                holiday_names.push(h.name.clone());
            }
        }
        for (&year, start) in &spring_festival_starts {
            if start.year() != year {
                return Err(Error::Calendar(format!("festival start {start} filed under year {year}")));
            }
        }
        holidays.sort_by_key(|h| h.start);
        for pair in holidays.windows(2) {
            if pair[1].start <= pair[0].end {
                return Err(Error::Calendar(format!(
                    "holidays {} ({}..={}) and {} ({}..={}) overlap",
                    pair[0].name, pair[0].start, pair[0].end, pair[1].name, pair[1].start, pair[1].end
                )));
            }
        }
        adjustment_days.sort();
        adjustment_days.dedup();
        for &day in &adjustment_days {
            if let Some(h) = holidays.iter().find(|h| h.contains(day)) {
                return Err(Error::Calendar(format!(
                    "adjustment day {day} lies inside holiday {} ({}..={})",
                    h.name, h.start, h.end
                )));
            }
        }
        Ok(Self {
            holidays,
            spring_festival_starts,
            adjustment_days,
            spring_half_width,
            spring_center_offset,
            spring_window_indicator,
            holiday_names,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<RawCalendar>(text)
            .map_err(|e| Error::json("calendar", e))
            .and_then(CalendarSpec::try_from)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn holidays(&self) -> &[Holiday] {
        &self.holidays
    }

    /// Distinct non-Spring holiday names in order of first appearance.
    pub fn holiday_names(&self) -> &[String] {
        &self.holiday_names
    }

    pub fn adjustment_days(&self) -> &[NaiveDate] {
        &self.adjustment_days
    }

    pub fn spring_festival_starts(&self) -> &BTreeMap<i32, NaiveDate> {
        &self.spring_festival_starts
    }

    pub fn spring_half_width(&self) -> u32 {
        self.spring_half_width
    }

    pub fn spring_center_offset(&self) -> u32 {
        self.spring_center_offset
    }

    pub fn spring_window_indicator(&self) -> bool {
        self.spring_window_indicator
    }

    pub fn with_spring_window_indicator(mut self, on: bool) -> Self {
        self.spring_window_indicator = on;
        self
    }

    pub fn with_spring_half_width(mut self, half_width: u32) -> Self {
        self.spring_half_width = half_width;
        self
    }

    pub fn holiday_on(&self, date: NaiveDate) -> Option<&Holiday> {
        self.holidays.iter().find(|h| h.contains(date))
    }

    pub fn is_adjustment_day(&self, date: NaiveDate) -> bool {
        self.adjustment_days.binary_search(&date).is_ok()
    }

    pub fn spring_center(&self, year: i32) -> Option<NaiveDate> {
        self.spring_festival_starts
            .get(&year)
            .map(|&s| add_days(s, self.spring_center_offset as i64))
    }

    /// Absolute distance in days to the nearest registered festival centre.
    /// The date's own year must be registered; neighbouring years are used
    /// when present.
    pub fn distance_to_center(&self, date: NaiveDate) -> Result<u32> {
        let year = date.year();
        if !self.spring_festival_starts.contains_key(&year) {
            return Err(Error::MissingFestival { year, date });
        }
        Ok((year - 1..=year + 1)
            .filter_map(|y| self.spring_center(y))
            .map(|c| days_between(c, date).unsigned_abs() as u32)
            .min()
            .expect("own year is registered"))
    }

    pub fn in_spring_window(&self, date: NaiveDate) -> Result<bool> {
        Ok(self.distance_to_center(date)? <= self.spring_half_width)
    }
}

/// One-hot month over Feb..Dec; January is the baseline.
pub fn encode_month(date: NaiveDate) -> [f64; 11] {
    let mut out = [0.0; 11];
    let m = date.month() as usize;
    if m >= 2 {
        out[m - 2] = 1.0;
    }
    out
}

/// One-hot weekday over Tue..Sun; Monday is the baseline.
pub fn encode_weekday(date: NaiveDate) -> [f64; 6] {
    let mut out = [0.0; 6];
    let d = date.weekday().num_days_from_monday() as usize;
    if d >= 1 {
        out[d - 1] = 1.0;
    }
    out
}

/// One entry per named non-Spring holiday, in `spec.holiday_names()` order.
pub fn encode_holiday(date: NaiveDate, spec: &CalendarSpec) -> Vec<f64> {
    let mut out = vec![0.0; spec.holiday_names().len()];
    if let Some(h) = spec.holiday_on(date) {
        let k = spec.holiday_names().iter().position(|n| *n == h.name).expect("name registered");
        out[k] = 1.0;
    }
    out
}

pub fn encode_adjustment(date: NaiveDate, spec: &CalendarSpec) -> f64 {
    if spec.is_adjustment_day(date) {
        1.0
    } else {
        0.0
    }
}

/// `S_t`: distance to the festival centre inside the window, zero outside
/// it (and therefore also zero at the centre itself).
pub fn spring_distance(date: NaiveDate, spec: &CalendarSpec) -> Result<u32> {
    let dist = spec.distance_to_center(date)?;
    Ok(if dist <= spec.spring_half_width() { dist } else { 0 })
}

/// A single design-matrix column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Column {
    Intercept,
    Trend,
    /// `(t - day) * I(t > day)`.
    Hinge { day: i64 },
    /// Calendar month 2..=12.
    Month(u32),
    /// Days from Monday, 1..=6.
    Weekday(u32),
    Holiday(String),
    Adjustment,
    SpringCubic,
    SpringSquare,
    SpringLinear,
    SpringWindow,
}

impl Column {
    pub fn group(&self) -> &'static str {
        match self {
            Column::Intercept => "intercept",
            Column::Trend => "trend",
            Column::Hinge { .. } => "hinge",
            Column::Month(_) => "month",
            Column::Weekday(_) => "weekday",
            Column::Holiday(_) => "holiday",
            Column::Adjustment => "adjustment",
            Column::SpringCubic | Column::SpringSquare | Column::SpringLinear | Column::SpringWindow => "spring",
        }
    }

    pub fn label(&self, origin: NaiveDate) -> String {
        const WEEKDAYS: [&str; 7] = ["mon", "tue", "wed", "thu", "fri", "sat", "sun"];
        match self {
            Column::Intercept => "intercept".into(),
            Column::Trend => "t".into(),
            Column::Hinge { day } => format!("hinge@{}", add_days(origin, *day)),
            Column::Month(m) => format!("month_{m:02}"),
            Column::Weekday(d) => format!("weekday_{}", WEEKDAYS[*d as usize]),
            Column::Holiday(name) => format!("holiday_{name}"),
            Column::Adjustment => "adjustment_day".into(),
            Column::SpringCubic => "spring_s3".into(),
            Column::SpringSquare => "spring_s2".into(),
            Column::SpringLinear => "spring_s1".into(),
            Column::SpringWindow => "spring_window".into(),
        }
    }
}

/// Ordered column description of the regression design matrix. `t` is
/// measured in days from `origin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub origin: NaiveDate,
    pub columns: Vec<Column>,
}

impl FeatureLayout {
    /// Canonical column order: intercept, t, hinges, months, weekdays,
    /// holidays, adjustment, S³, S², S, optional window indicator.
    pub fn new(
        origin: NaiveDate,
        hinge_days: &[i64],
        holidays: &[String],
        adjustment: bool,
        spring_window: bool,
    ) -> Self {
        let mut columns = vec![Column::Intercept, Column::Trend];
        columns.extend(hinge_days.iter().map(|&day| Column::Hinge { day }));
        columns.extend((2..=12).map(Column::Month));
        columns.extend((1..=6).map(Column::Weekday));
        columns.extend(holidays.iter().cloned().map(Column::Holiday));
        if adjustment {
            columns.push(Column::Adjustment);
        }
        columns.extend([Column::SpringCubic, Column::SpringSquare, Column::SpringLinear]);
        if spring_window {
            columns.push(Column::SpringWindow);
        }
        Self { origin, columns }
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn position(&self, column: &Column) -> Option<usize> {
        self.columns.iter().position(|c| c == column)
    }

    pub fn hinge_days(&self) -> impl Iterator<Item = i64> + '_ {
        self.columns.iter().filter_map(|c| match c {
            Column::Hinge { day } => Some(*day),
            _ => None,
        })
    }

    /// Feature row for day `t`.
    pub fn row(&self, t: i64, spec: &CalendarSpec) -> Result<Vec<f64>> {
        let date = add_days(self.origin, t);
        let needs_spring = self.columns.iter().any(|c| c.group() == "spring");
        let (s, in_window) = if needs_spring {
            let dist = spec.distance_to_center(date)?;
            let inside = dist <= spec.spring_half_width();
            (if inside { dist as f64 } else { 0.0 }, inside)
        } else {
            (0.0, false)
        };
        let holiday = spec.holiday_on(date).map(|h| h.name.as_str());
        let month = date.month();
        let weekday = date.weekday().num_days_from_monday();
        Ok(self
            .columns
            .iter()
            .map(|c| match c {
                Column::Intercept => 1.0,
                Column::Trend => t as f64,
                Column::Hinge { day } => hinge(t, *day) as f64,
                Column::Month(m) => indicator(month == *m),
                Column::Weekday(d) => indicator(weekday == *d),
                Column::Holiday(name) => indicator(holiday == Some(name.as_str())),
                Column::Adjustment => encode_adjustment(date, spec),
                Column::SpringCubic => s * s * s,
                Column::SpringSquare => s * s,
                Column::SpringLinear => s,
                Column::SpringWindow => indicator(in_window),
            })
            .collect())
    }
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// `(t - t_i) * I(t > t_i)`.
pub fn hinge(t: i64, t_i: i64) -> i64 {
    if t > t_i {
        t - t_i
    } else {
        0
    }
}
