//! Seeded generator of multi-year daily consumption with a known
//! decomposition: six-segment annual piecewise linear trend, weekday,
//! holiday and adjustment-day offsets, a quadratic Spring Festival dip and
//! a white-noise or AR(1) residual.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::calendar::{CalendarSpec, Column};
use crate::error::{Error, Result};
use crate::filter::{BreakpointPlan, FutureBreakpoint};
use crate::series::{add_days, days_between, DailySeries, DATE_FORMAT};

/// Mainland China public holidays 2018-2022 with Spring Festival dates
/// through 2023.
pub const CN_CALENDAR_2018_2023: &str = include_str!("../configs/calendar_cn_2018_2023.json");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResidualProcess {
    WhiteNoise { sigma: f64 },
    /// `e_t = phi e_{t-1} + sigma z_t`, started from the stationary law.
    Ar1 { phi: f64, sigma: f64 },
}

impl ResidualProcess {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ResidualProcess::WhiteNoise { sigma } if sigma > 0.0 => Ok(()),
            ResidualProcess::Ar1 { phi, sigma } if sigma > 0.0 && phi.abs() < 1.0 => Ok(()),
            _ => Err(Error::Config(format!("invalid residual process {self:?}: need sigma > 0, |phi| < 1"))),
        }
    }

    /// Stationary variance.
    pub fn variance(&self) -> f64 {
        match *self {
            ResidualProcess::WhiteNoise { sigma } => sigma * sigma,
            ResidualProcess::Ar1 { phi, sigma } => sigma * sigma / (1.0 - phi * phi),
        }
    }

    /// Best achievable one-step mean squared error.
    pub fn one_step_mse(&self) -> f64 {
        match *self {
            ResidualProcess::WhiteNoise { sigma } | ResidualProcess::Ar1 { sigma, .. } => sigma * sigma,
        }
    }

    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match *self {
            ResidualProcess::WhiteNoise { sigma } => {
                let d = Normal::new(0.0, sigma).expect("validated sigma");
                (0..n).map(|_| d.sample(rng)).collect()
            }
            ResidualProcess::Ar1 { phi, sigma } => {
                let z = Normal::new(0.0, 1.0).expect("unit normal");
                let mut x = z.sample(rng) * self.variance().sqrt();
                (0..n)
                    .map(|i| {
                        if i > 0 {
                            x = phi * x + sigma * z.sample(rng);
                        }
                        x
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    pub start: NaiveDate,
    pub years: u32,
    /// Days appended after the last full year (e.g. a test quarter).
    #[serde(default)]
    pub extra_days: u32,
    pub base_level: f64,
    /// Month-day (`MM-DD`) where each annual segment begins.
    pub segment_starts: Vec<String>,
    /// One row of segment slopes per year; the last row is reused for later
    /// years.
    pub slopes: Vec<Vec<f64>>,
    /// Monday first.
    pub weekday_offsets: [f64; 7],
    #[serde(default)]
    pub holiday_offsets: BTreeMap<String, f64>,
    #[serde(default)]
    pub adjustment_offset: f64,
    pub spring_depth: f64,
    pub spring_half_width: u32,
    pub residual: ResidualProcess,
    pub seed: u64,
    pub calendar: CalendarSpec,
}

impl SynthParams {
    /// The benchmark used throughout the tests: 2018-2021 plus the first
    /// quarter of 2022, base 100 000 MWh.
    pub fn benchmark(residual: ResidualProcess, seed: u64) -> Self {
        let calendar = CalendarSpec::from_json(CN_CALENDAR_2018_2023).expect("bundled calendar is valid");
        let holiday_offsets = [
            ("new_year", -6000.0),
            ("qingming", -4000.0),
            ("labour_day", -9000.0),
            ("dragon_boat", -5000.0),
            ("mid_autumn", -5500.0),
            ("national_day", -12000.0),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Self {
            start: NaiveDate::from_ymd_opt(2018, 1, 1).unwrap(),
            years: 4,
            extra_days: 90,
            base_level: 100_000.0,
            segment_starts: ["01-01", "03-01", "06-01", "08-01", "10-01", "11-01"]
                .map(String::from)
                .to_vec(),
            slopes: vec![
                vec![-300.0, 260.0, 700.0, -750.0, -400.0, 250.0],
                vec![-320.0, 280.0, 650.0, -700.0, -450.0, 300.0],
                vec![-280.0, 300.0, 720.0, -760.0, -420.0, 280.0],
                vec![-310.0, 240.0, 680.0, -720.0, -380.0, 260.0],
                vec![-300.0, 200.0, 700.0, -740.0, -400.0, 270.0],
            ],
            weekday_offsets: [0.0, 800.0, 1200.0, 1000.0, 500.0, -5000.0, -7500.0],
            holiday_offsets,
            adjustment_offset: 3500.0,
            spring_depth: 30_000.0,
            spring_half_width: 21,
            residual,
            seed,
            calendar,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("synth params", e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn end(&self) -> NaiveDate {
        let last_full = NaiveDate::from_ymd_opt(self.start.year() + self.years as i32, self.start.month(), self.start.day())
            .unwrap_or_else(|| add_days(self.start, 365 * self.years as i64));
        add_days(last_full, self.extra_days as i64 - 1)
    }

    fn month_days(&self) -> Result<Vec<(u32, u32)>> {
        let parsed = self
            .segment_starts
            .iter()
            .map(|s| {
                let (m, d) = s
                    .split_once('-')
                    .ok_or_else(|| Error::Config(format!("segment start {s:?} is not MM-DD")))?;
                let m: u32 = m.parse().map_err(|_| Error::Config(format!("bad month in {s:?}")))?;
                let d: u32 = d.parse().map_err(|_| Error::Config(format!("bad day in {s:?}")))?;
                // 2001 is not a leap year: rejects 02-29 along with real typos
                NaiveDate::from_ymd_opt(2001, m, d).ok_or_else(|| Error::Config(format!("invalid segment start {s:?}")))?;
                Ok((m, d))
            })
            .collect::<Result<Vec<_>>>()?;
        if parsed.is_empty() || parsed.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("segment starts must be non-empty and strictly increasing within the year".into()));
        }
        Ok(parsed)
    }

    pub fn validate(&self) -> Result<()> {
        let segs = self.month_days()?;
        if self.years == 0 {
            return Err(Error::Config("years must be >= 1".into()));
        }
        if self.slopes.is_empty() || self.slopes.iter().any(|row| row.len() != segs.len()) {
            return Err(Error::Config(format!(
                "each slope row needs {} entries (one per segment)",
                segs.len()
            )));
        }
        if !self.base_level.is_finite() || !self.spring_depth.is_finite() || self.spring_half_width == 0 {
            return Err(Error::Config("base_level/spring_depth must be finite, spring_half_width >= 1".into()));
        }
        for name in self.holiday_offsets.keys() {
            if !self.calendar.holiday_names().contains(name) {
                return Err(Error::Config(format!("holiday offset for {name:?}, which the calendar does not define")));
            }
        }
        self.residual.validate()
    }

    /// Every segment start in the generated span, with the slope that
    /// applies from that day on.
    pub fn segments(&self) -> Result<Vec<(NaiveDate, f64)>> {
        let segs = self.month_days()?;
        let end = self.end();
        let mut out = Vec::new();
        for y in self.start.year() - 1..=end.year() {
            let row_idx = (y - self.start.year()).clamp(0, self.slopes.len() as i32 - 1) as usize;
            for (k, &(m, d)) in segs.iter().enumerate() {
                let date = NaiveDate::from_ymd_opt(y, m, d).expect("validated month-day");
                if date <= end {
                    out.push((date, self.slopes[row_idx][k]));
                }
            }
        }
        // the segment in force on the first day becomes the initial slope
        let first = out.iter().rposition(|(d, _)| *d <= self.start).unwrap_or(0);
        let mut out = out.split_off(first);
        out[0].0 = self.start;
        Ok(out)
    }
}

/// Every component per day; the emitted series is their sum in this order.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub start: NaiveDate,
    pub trend: Vec<f64>,
    pub weekday: Vec<f64>,
    pub holiday: Vec<f64>,
    pub adjustment: Vec<f64>,
    pub spring: Vec<f64>,
    pub residual: Vec<f64>,
    /// `(first day, slope)` of every trend segment.
    pub segments: Vec<(NaiveDate, f64)>,
    params: SynthParams,
}

impl GroundTruth {
    pub fn total(&self, i: usize) -> f64 {
        self.trend[i] + self.weekday[i] + self.holiday[i] + self.adjustment[i] + self.spring[i] + self.residual[i]
    }

    /// The true slope-change dates.
    pub fn breakpoints(&self) -> Vec<NaiveDate> {
        self.segments[1..].iter().map(|s| s.0).collect()
    }

    /// True breakpoints strictly before `end`, without future breaks.
    pub fn plan_until(&self, end: NaiveDate) -> BreakpointPlan {
        BreakpointPlan::new(self.breakpoints().into_iter().filter(|&d| d < end).collect(), Vec::new())
    }

    /// Historical breakpoints up to `training_end` plus every later segment
    /// start as a future breakpoint carrying its true slope.
    pub fn plan_with_future(&self, training_end: NaiveDate) -> BreakpointPlan {
        let future = self.segments[1..]
            .iter()
            .filter(|s| s.0 > training_end)
            .map(|&(date, slope)| FutureBreakpoint { date, slope })
            .collect();
        BreakpointPlan::new(self.plan_until(training_end).historical, future)
    }

    pub fn slope_on(&self, date: NaiveDate) -> f64 {
        self.segments.iter().rev().find(|s| s.0 <= date).map_or(self.segments[0].1, |s| s.1)
    }

    /// The value the regression coefficient of `column` would take if the
    /// model matched the generator exactly. `None` for columns whose truth
    /// depends on the Spring window setup (cubic terms without the window
    /// indicator, or a window width different from the generator's).
    pub fn coefficient_for(&self, column: &Column, origin: NaiveDate, calendar: &CalendarSpec) -> Option<f64> {
        let p = &self.params;
        let exact_spring = calendar.spring_window_indicator() && calendar.spring_half_width() == p.spring_half_width;
        let w2 = (p.spring_half_width as f64).powi(2);
        match column {
            Column::Intercept => {
                (origin == self.start).then(|| self.trend[0] + p.weekday_offsets[0])
            }
            Column::Trend => Some(self.segments[0].1),
            Column::Hinge { day } => {
                let date = add_days(origin, *day);
                let k = self.segments.iter().position(|s| s.0 == date)?;
                (k > 0).then(|| self.segments[k].1 - self.segments[k - 1].1)
            }
            Column::Month(_) => Some(0.0),
            Column::Weekday(d) => Some(p.weekday_offsets[*d as usize] - p.weekday_offsets[0]),
            Column::Holiday(name) => Some(p.holiday_offsets.get(name).copied().unwrap_or(0.0)),
            Column::Adjustment => Some(p.adjustment_offset),
            Column::SpringCubic | Column::SpringLinear => exact_spring.then_some(0.0),
            Column::SpringSquare => exact_spring.then_some(p.spring_depth / w2),
            Column::SpringWindow => exact_spring.then_some(-p.spring_depth),
        }
    }

    /// `date,trend,weekday,holiday,adjustment,spring,residual,total`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["date", "trend", "weekday", "holiday", "adjustment", "spring", "residual", "total"])?;
        for i in 0..self.trend.len() {
            let cols = [
                self.trend[i],
                self.weekday[i],
                self.holiday[i],
                self.adjustment[i],
                self.spring[i],
                self.residual[i],
                self.total(i),
            ];
            let mut rec = vec![add_days(self.start, i as i64).format(DATE_FORMAT).to_string()];
            rec.extend(cols.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }
}

/// Draws one series. Identical parameters give identical output.
pub fn generate(params: &SynthParams) -> Result<(DailySeries, GroundTruth)> {
    params.validate()?;
    let segments = params.segments()?;
    let n = (days_between(params.start, params.end()) + 1) as usize;
    let cal = &params.calendar;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let residual = params.residual.sample(n, &mut rng);

    let mut trend = Vec::with_capacity(n);
    let mut level = params.base_level;
    let mut seg = 0;
    for i in 0..n {
        let date = add_days(params.start, i as i64);
        trend.push(level);
        while seg + 1 < segments.len() && segments[seg + 1].0 <= date {
            seg += 1;
        }
        level += segments[seg].1;
    }

    let mut weekday = Vec::with_capacity(n);
    let mut holiday = Vec::with_capacity(n);
    let mut adjustment = Vec::with_capacity(n);
    let mut spring = Vec::with_capacity(n);
    let w = params.spring_half_width as f64;
    for i in 0..n {
        let date = add_days(params.start, i as i64);
        weekday.push(params.weekday_offsets[date.weekday().num_days_from_monday() as usize]);
        holiday.push(
            cal.holiday_on(date)
                .and_then(|h| params.holiday_offsets.get(&h.name))
                .copied()
                .unwrap_or(0.0),
        );
        adjustment.push(if cal.is_adjustment_day(date) { params.adjustment_offset } else { 0.0 });
        let dist = cal.distance_to_center(date)? as f64;
        spring.push(if dist <= w { -params.spring_depth * (1.0 - (dist / w).powi(2)) } else { 0.0 });
    }

    let truth = GroundTruth {
        start: params.start,
        trend,
        weekday,
        holiday,
        adjustment,
        spring,
        residual,
        segments,
        params: params.clone(),
    };
    let values = (0..n).map(|i| truth.total(i)).collect();
    Ok((DailySeries::new(params.start, values)?, truth))
}
