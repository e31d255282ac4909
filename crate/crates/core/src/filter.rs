//! Piecewise linear regression filter.
//!
//! The trend is linear in the calendar day `t` with a slope change at every
//! manually chosen breakpoint; month, weekday, holiday and adjustment-day
//! dummies plus a cubic in the Spring Festival distance absorb the periodic
//! structure. What the regression cannot explain is handed to the residual
//! network.

use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::calendar::{CalendarSpec, Column, FeatureLayout};
use crate::error::{Error, Result};
use crate::linalg::{self, dot, Matrix};
use crate::series::{add_days, days_between, DailySeries, ExclusionMask, ResidualSeries};

pub use crate::calendar::hinge;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FutureBreakpoint {
    pub date: NaiveDate,
    /// Absolute trend slope after the break, in consumption units per day.
    pub slope: f64,
}

/// Manually assigned breakpoints: historical ones are estimated by the fit,
/// future ones carry a planned post-break slope.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BreakpointPlan {
    #[serde(default)]
    pub historical: Vec<NaiveDate>,
    #[serde(default)]
    pub future: Vec<FutureBreakpoint>,
}

impl BreakpointPlan {
    pub fn new(historical: Vec<NaiveDate>, future: Vec<FutureBreakpoint>) -> Self {
        Self { historical, future }
    }

    /// Historical breakpoints must lie strictly inside the training span and
    /// be sorted. Repeated dates pass this check and are reported by the
    /// solver as a degenerate hinge group.
    pub fn validate_historical(&self, start: NaiveDate, end: NaiveDate) -> Result<()> {
        for (i, &d) in self.historical.iter().enumerate() {
            if d <= start || d >= end {
                return Err(Error::InvalidPlan(format!(
                    "historical breakpoint {d} is not strictly inside the training span {start}..={end}"
                )));
            }
            if i > 0 && self.historical[i - 1] > d {
                return Err(Error::InvalidPlan("historical breakpoints must be sorted".into()));
            }
        }
        Ok(())
    }

    pub fn validate_future(&self, training_end: NaiveDate) -> Result<()> {
        for (i, b) in self.future.iter().enumerate() {
            if b.date <= training_end {
                return Err(Error::InvalidPlan(format!(
                    "future breakpoint {} must be after the training end {training_end}",
                    b.date
                )));
            }
            if !b.slope.is_finite() {
                return Err(Error::InvalidPlan(format!("future breakpoint {} has a non-finite slope", b.date)));
            }
            if i > 0 && self.future[i - 1].date >= b.date {
                return Err(Error::InvalidPlan("future breakpoints must be strictly increasing".into()));
            }
        }
        Ok(())
    }
}

/// Builds the regression design for the given day indices (counted from
/// `origin`). Holiday and adjustment columns are only created for
/// categories that actually occur among the rows; an all-zero dummy would
/// make the design singular.
pub fn build_design_matrix(
    origin: NaiveDate,
    days: &[i64],
    hinge_days: &[i64],
    spec: &CalendarSpec,
) -> Result<(Matrix, FeatureLayout)> {
    let dates: Vec<NaiveDate> = days.iter().map(|&t| add_days(origin, t)).collect();
    let holidays: Vec<String> = spec
        .holiday_names()
        .iter()
        .filter(|name| {
            dates
                .iter()
                .any(|&d| spec.holiday_on(d).is_some_and(|h| &h.name == *name))
        })
        .cloned()
        .collect();
    let adjustment = dates.iter().any(|&d| spec.is_adjustment_day(d));
    let layout = FeatureLayout::new(origin, hinge_days, &holidays, adjustment, spec.spring_window_indicator());
    let rows = days.iter().map(|&t| layout.row(t, spec)).collect::<Result<Vec<_>>>()?;
    let matrix = if rows.is_empty() {
        Matrix::zeros(0, layout.len())
    } else {
        Matrix::from_rows(rows)
    };
    Ok((matrix, layout))
}

#[derive(Debug, Clone)]
pub struct LeastSquaresFit {
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub rss: f64,
}

/// Ordinary least squares on a built design. Rank deficiency is reported by
/// the column groups involved.
pub fn fit(x: &Matrix, y: &[f64], layout: &FeatureLayout) -> Result<LeastSquaresFit> {
    if y.len() != x.rows() {
        return Err(Error::Shape(format!("{} targets for {} design rows", y.len(), x.rows())));
    }
    if x.cols() != layout.len() {
        return Err(Error::Shape(format!("{} columns but layout has {}", x.cols(), layout.len())));
    }
    if x.rows() < x.cols() {
        return Err(Error::InsufficientData(format!(
            "{} observations for {} regression columns",
            x.rows(),
            x.cols()
        )));
    }
    match linalg::lstsq(x, y) {
        Ok(sol) => Ok(LeastSquaresFit {
            coefficients: sol.coefficients,
            std_errors: sol.std_errors,
            rss: sol.rss,
        }),
        Err(def) => {
            let mut groups: Vec<&str> = Vec::new();
            for &c in &def.columns {
                let g = layout.columns[c].group();
                if !groups.contains(&g) {
                    groups.push(g);
                }
            }
            Err(Error::DegenerateDesign { groups: groups.join(", ") })
        }
    }
}

/// A fitted filter: layout, coefficients and the breakpoint plan used for
/// extrapolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterModel {
    pub format_version: u32,
    pub layout: FeatureLayout,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub training_start: NaiveDate,
    pub training_end: NaiveDate,
    pub plan: BreakpointPlan,
    pub observations: usize,
    pub excluded: usize,
    pub rss: f64,
}

impl FilterModel {
    /// Fits on every non-excluded day of `series`.
    pub fn fit(series: &DailySeries, mask: &ExclusionMask, plan: &BreakpointPlan, spec: &CalendarSpec) -> Result<Self> {
        let mask = mask.restrict(series.start(), series.end());
        plan.validate_historical(series.start(), series.end())?;
        let origin = series.start();
        let kept = series.apply_mask(&mask)?;
        let days: Vec<i64> = kept.iter().map(|p| p.0 as i64).collect();
        let y: Vec<f64> = kept.iter().map(|p| p.1).collect();
        let hinge_days: Vec<i64> = plan.historical.iter().map(|&d| days_between(origin, d)).collect();
        let (x, layout) = build_design_matrix(origin, &days, &hinge_days, spec)?;
        let sol = fit(&x, &y, &layout)?;
        let model = Self {
            format_version: MODEL_FORMAT_VERSION,
            layout,
            coefficients: sol.coefficients,
            std_errors: sol.std_errors,
            training_start: series.start(),
            training_end: series.end(),
            plan: BreakpointPlan::new(plan.historical.clone(), Vec::new()),
            observations: kept.len(),
            excluded: series.len() - kept.len(),
            rss: sol.rss,
        };
        model.with_future(plan.future.clone())
    }

    /// Replaces the planned future breakpoints.
    pub fn with_future(mut self, future: Vec<FutureBreakpoint>) -> Result<Self> {
        let plan = BreakpointPlan::new(self.plan.historical.clone(), future);
        plan.validate_future(self.training_end)?;
        self.plan = plan;
        Ok(self)
    }

    pub fn origin(&self) -> NaiveDate {
        self.layout.origin
    }

    pub fn training_rmse(&self) -> f64 {
        (self.rss / self.observations as f64).sqrt()
    }

    pub fn coefficient(&self, column: &Column) -> Option<f64> {
        self.layout.position(column).map(|i| self.coefficients[i])
    }

    fn trend_slope_after_history(&self) -> f64 {
        self.layout
            .columns
            .iter()
            .zip(&self.coefficients)
            .filter(|(c, _)| matches!(c, Column::Trend | Column::Hinge { .. }))
            .map(|(_, b)| b)
            .sum()
    }

    /// Hinge coefficients `(day, delta)` that turn the planned absolute
    /// slopes into slope changes relative to the slope prevailing just
    /// before each future break.
    pub fn future_hinges(&self) -> Vec<(i64, f64)> {
        let mut prevailing = self.trend_slope_after_history();
        self.plan
            .future
            .iter()
            .map(|b| {
                let delta = b.slope - prevailing;
                prevailing = b.slope;
                (days_between(self.origin(), b.date), delta)
            })
            .collect()
    }

    /// Slope of the trend component between day `t` and `t + 1`.
    pub fn trend_slope_at(&self, t: i64) -> f64 {
        let mut slope = 0.0;
        for (c, b) in self.layout.columns.iter().zip(&self.coefficients) {
            match c {
                Column::Trend => slope += b,
                Column::Hinge { day } if t >= *day => slope += b,
                _ => {}
            }
        }
        slope
            + self
                .future_hinges()
                .into_iter()
                .filter(|(day, _)| t >= *day)
                .map(|(_, d)| d)
                .sum::<f64>()
    }

    /// Intercept + slope + hinge terms, including planned future hinges.
    pub fn trend_component(&self, date: NaiveDate) -> f64 {
        let t = days_between(self.origin(), date);
        let fitted: f64 = self
            .layout
            .columns
            .iter()
            .zip(&self.coefficients)
            .map(|(c, b)| match c {
                Column::Intercept => *b,
                Column::Trend => b * t as f64,
                Column::Hinge { day } => b * hinge(t, *day) as f64,
                _ => 0.0,
            })
            .sum();
        fitted + self.future_part(t)
    }

    fn future_part(&self, t: i64) -> f64 {
        self.future_hinges()
            .into_iter()
            .map(|(day, delta)| delta * hinge(t, day) as f64)
            .sum()
    }

    pub fn predict_date(&self, date: NaiveDate, spec: &CalendarSpec) -> Result<f64> {
        let t = days_between(self.origin(), date);
        let row = self.layout.row(t, spec)?;
        Ok(dot(&row, &self.coefficients) + self.future_part(t))
    }

    /// Filter prediction for arbitrary dates, in or beyond the training span.
    pub fn predict(&self, dates: &[NaiveDate], spec: &CalendarSpec) -> Result<Vec<f64>> {
        dates.iter().map(|&d| self.predict_date(d, spec)).collect()
    }

    /// `value - prediction` on every retained day; excluded days are absent.
    pub fn residuals(&self, series: &DailySeries, mask: &ExclusionMask, spec: &CalendarSpec) -> Result<ResidualSeries> {
        let mask = mask.restrict(series.start(), series.end());
        let points = series
            .apply_mask(&mask)?
            .into_iter()
            .map(|(i, v)| Ok((i, v - self.predict_date(series.date_at(i), spec)?)))
            .collect::<Result<Vec<_>>>()?;
        ResidualSeries::new(series.start(), points)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text).map_err(|e| Error::json("filter model", e))?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Config(format!("unsupported filter model version {}", model.format_version)));
        }
        if model.coefficients.len() != model.layout.len() || model.std_errors.len() != model.layout.len() {
            return Err(Error::Shape("coefficient count does not match layout".into()));
        }
        if model.coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidState("non-finite coefficient in stored model".into()));
        }
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// `(label, group, estimate, standard error)` per column.
    pub fn coefficient_table(&self) -> Vec<(String, &'static str, f64, f64)> {
        self.layout
            .columns
            .iter()
            .zip(self.coefficients.iter().zip(&self.std_errors))
            .map(|(c, (b, se))| (c.label(self.origin()), c.group(), *b, *se))
            .collect()
    }
}
