//! Composition of filter and residual-net predictions, plus RMSE/MAPE.

use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::calendar::CalendarSpec;
use crate::error::{Error, Result};
use crate::filter::{BreakpointPlan, FilterModel};
use crate::net::{predict_residuals, train, NetConfig, ResidualNet, TrainingLog};
use crate::series::{add_days, parse_date, DailySeries, ExclusionMask, ResidualSeries, DATE_FORMAT};

/// Per-day forecast. `total[i] == filter[i] + residual[i]` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub dates: Vec<NaiveDate>,
    pub filter: Vec<f64>,
    pub residual: Vec<f64>,
    pub total: Vec<f64>,
    pub actual: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub mape: f64,
    /// Days the metrics were computed over.
    pub n: usize,
}

impl Metrics {
    pub fn compute(actual: &[f64], predicted: &[f64]) -> Result<Self> {
        Ok(Self {
            rmse: rmse(actual, predicted)?,
            mape: mape(actual, predicted)?,
            n: actual.len(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

fn check_lengths(actual: &[f64], predicted: &[f64]) -> Result<()> {
    if actual.len() != predicted.len() {
        return Err(Error::Shape(format!(
            "{} actual values vs {} predictions",
            actual.len(),
            predicted.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::UndefinedMetric("no points to evaluate".into()));
    }
    Ok(())
}

pub fn rmse(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_lengths(actual, predicted)?;
    let sse: f64 = actual.iter().zip(predicted).map(|(a, p)| (a - p).powi(2)).sum();
    Ok((sse / actual.len() as f64).sqrt())
}

/// In percent. Zero actuals are an error, not skipped.
pub fn mape(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_lengths(actual, predicted)?;
    if let Some(i) = actual.iter().position(|&a| a == 0.0) {
        return Err(Error::UndefinedMetric(format!("actual value at position {i} is zero")));
    }
    let sum: f64 = actual.iter().zip(predicted).map(|(a, p)| ((a - p) / a).abs()).sum();
    Ok(100.0 * sum / actual.len() as f64)
}

impl Forecast {
    pub fn new(dates: Vec<NaiveDate>, filter: Vec<f64>, residual: Vec<f64>) -> Result<Self> {
        if dates.len() != filter.len() || dates.len() != residual.len() {
            return Err(Error::Shape(format!(
                "{} dates, {} filter values, {} residual values",
                dates.len(),
                filter.len(),
                residual.len()
            )));
        }
        let total = filter.iter().zip(&residual).map(|(f, r)| f + r).collect();
        Ok(Self {
            dates,
            filter,
            residual,
            total,
            actual: None,
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Attaches observed values; `series` must cover every forecast date.
    pub fn with_actual(mut self, series: &DailySeries) -> Result<Self> {
        let actual = self
            .dates
            .iter()
            .map(|&d| {
                series.value_on(d).ok_or_else(|| {
                    Error::Alignment(format!(
                        "no actual value for {d}; actuals span {}..={}",
                        series.start(),
                        series.end()
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        self.actual = Some(actual);
        Ok(self)
    }

    /// Recomputes every total from its components.
    pub fn audit(&self) -> Result<()> {
        for i in 0..self.len() {
            if self.total[i] != self.filter[i] + self.residual[i] {
                return Err(Error::InvalidState(format!(
                    "forecast total on {} does not equal filter + residual",
                    self.dates[i]
                )));
            }
        }
        Ok(())
    }

    /// RMSE and MAPE over the dates not excluded by `mask`.
    pub fn metrics(&self, mask: &ExclusionMask) -> Result<Metrics> {
        let actual = self
            .actual
            .as_ref()
            .ok_or_else(|| Error::UndefinedMetric("forecast has no actual values attached".into()))?;
        let (a, p): (Vec<f64>, Vec<f64>) = (0..self.len())
            .filter(|&i| !mask.excludes(self.dates[i]))
            .map(|i| (actual[i], self.total[i]))
            .unzip();
        Metrics::compute(&a, &p)
    }

    /// `date,filter,residual,total` plus `actual,error` when actuals are
    /// attached. `error` is `total - actual`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["date", "filter", "residual", "total"];
        if self.actual.is_some() {
            header.extend(["actual", "error"]);
        }
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![
                self.dates[i].format(DATE_FORMAT).to_string(),
                self.filter[i].to_string(),
                self.residual[i].to_string(),
                self.total[i].to_string(),
            ];
            if let Some(a) = &self.actual {
                rec.push(a[i].to_string());
                rec.push((self.total[i] - a[i]).to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(file)
    }
}

/// Reads `(date, predicted)` pairs from a forecast CSV (`total` column) or a
/// plain data CSV (`consumption` column).
pub fn read_predictions<R: Read>(reader: R) -> Result<Vec<(NaiveDate, f64)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = headers
        .iter()
        .position(|h| h == "total")
        .or_else(|| headers.iter().position(|h| h == "consumption"))
        .ok_or_else(|| Error::InvalidSeries("prediction CSV needs a `total` or `consumption` column".into()))?;
    let mut out = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let date = parse_date(record.get(0).unwrap_or(""))?;
        let raw = record.get(col).unwrap_or("");
        let v: f64 = raw
            .parse()
            .map_err(|_| Error::InvalidSeries(format!("row {}: bad value {raw:?}", line + 2)))?;
        out.push((date, v));
    }
    if out.is_empty() {
        return Err(Error::InvalidSeries("prediction CSV has no rows".into()));
    }
    Ok(out)
}

/// Metrics of `predictions` against `actual`. Every predicted date must
/// have an actual value.
pub fn evaluate(predictions: &[(NaiveDate, f64)], actual: &DailySeries) -> Result<Metrics> {
    let (a, p): (Vec<f64>, Vec<f64>) = predictions
        .iter()
        .map(|&(d, v)| {
            actual.value_on(d).map(|a| (a, v)).ok_or_else(|| {
                Error::Alignment(format!(
                    "forecast date {d} has no actual value; actuals span {}..={}",
                    actual.start(),
                    actual.end()
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    Metrics::compute(&a, &p)
}

/// The `horizon` days following `last`.
pub fn horizon_dates(last: NaiveDate, horizon: usize) -> Vec<NaiveDate> {
    (1..=horizon as i64).map(|k| add_days(last, k)).collect()
}

/// Filter prediction with a zero residual component.
pub fn filter_only_forecast(model: &FilterModel, spec: &CalendarSpec, horizon: usize) -> Result<Forecast> {
    let dates = horizon_dates(model.training_end, horizon);
    let filter = model.predict(&dates, spec)?;
    Forecast::new(dates, filter, vec![0.0; horizon])
}

/// Filter prediction plus the recursive residual forecast of `net` started
/// from the end of `residuals`.
pub fn compose(
    model: &FilterModel,
    net: &ResidualNet,
    residuals: &ResidualSeries,
    spec: &CalendarSpec,
    horizon: usize,
) -> Result<Forecast> {
    let dates = horizon_dates(model.training_end, horizon);
    let filter = model.predict(&dates, spec)?;
    let residual = predict_residuals(net, residuals, horizon)?;
    let f = Forecast::new(dates, filter, residual)?;
    f.audit()?;
    Ok(f)
}

/// Everything produced by one two-stage run.
#[derive(Debug, Clone)]
pub struct TwoStage {
    pub filter: FilterModel,
    pub residuals: ResidualSeries,
    pub net: ResidualNet,
    pub log: TrainingLog,
    pub forecast: Forecast,
}

/// Fits the filter on `train_series`, trains the net on its residuals and
/// forecasts `horizon` days past the end of the training span.
pub fn two_stage_forecast(
    train_series: &DailySeries,
    mask: &ExclusionMask,
    spec: &CalendarSpec,
    plan: &BreakpointPlan,
    net_config: &NetConfig,
    horizon: usize,
) -> Result<TwoStage> {
    if horizon == 0 {
        return Err(Error::Config("horizon must be >= 1".into()));
    }
    let filter = FilterModel::fit(train_series, mask, plan, spec)?;
    let residuals = filter.residuals(train_series, mask, spec)?;
    let (net, log) = train(&residuals, net_config)?;
    let forecast = compose(&filter, &net, &residuals, spec, horizon)?;
    Ok(TwoStage {
        filter,
        residuals,
        net,
        log,
        forecast,
    })
}

/// Baseline without the filter: the net is trained on the raw series and
/// forecasts it recursively. Reported with a zero filter component.
pub fn raw_net_forecast(
    train_series: &DailySeries,
    mask: &ExclusionMask,
    net_config: &NetConfig,
    horizon: usize,
) -> Result<(Forecast, TrainingLog)> {
    let mask = mask.restrict(train_series.start(), train_series.end());
    let history = ResidualSeries::new(train_series.start(), train_series.apply_mask(&mask)?)?;
    let (net, log) = train(&history, net_config)?;
    let residual = predict_residuals(&net, &history, horizon)?;
    let dates = horizon_dates(train_series.end(), horizon);
    Ok((Forecast::new(dates, vec![0.0; horizon], residual)?, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Normalization;
    use proptest::prelude::*;

    fn d(s: &str) -> NaiveDate {
        parse_date(s).unwrap()
    }

    #[test]
    fn hand_case() {
        let (a, p) = ([100.0, 200.0], [110.0, 190.0]);
        assert_eq!(rmse(&a, &p).unwrap(), 10.0);
        assert!((mape(&a, &p).unwrap() - 7.5).abs() < 1e-12);
    }

    #[test]
    fn identical_and_single_point() {
        let a = [3.0, -4.0, 5.5];
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        assert_eq!(mape(&a, &a).unwrap(), 0.0);
        assert_eq!(rmse(&[10.0], &[7.5]).unwrap(), 2.5);
        assert_eq!(rmse(&[10.0], &[12.5]).unwrap(), 2.5);
    }

    #[test]
    fn metric_errors() {
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
        assert!(matches!(mape(&[1.0, 0.0], &[1.0, 2.0]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(rmse(&[], &[]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn sum_definition() {
        let f = Forecast::new(vec![d("2022-01-01")], vec![100.0], vec![5.0]).unwrap();
        assert_eq!(f.total, vec![105.0]);
        f.audit().unwrap();
    }

    #[test]
    fn metrics_skip_excluded_dates() {
        let dates = horizon_dates(d("2021-12-31"), 3);
        let actual = DailySeries::new(d("2022-01-01"), vec![100.0, 50.0, 200.0]).unwrap();
        let f = Forecast::new(dates, vec![110.0, 0.0, 190.0], vec![0.0; 3])
            .unwrap()
            .with_actual(&actual)
            .unwrap();
        let mask = ExclusionMask::new(vec![(d("2022-01-02"), d("2022-01-02"))]).unwrap();
        let m = f.metrics(&mask).unwrap();
        assert_eq!((m.rmse, m.n), (10.0, 2));
        assert!((m.mape - 7.5).abs() < 1e-12);
    }

    #[test]
    fn actual_must_cover_forecast() {
        let f = Forecast::new(horizon_dates(d("2021-12-31"), 3), vec![0.0; 3], vec![0.0; 3]).unwrap();
        let short = DailySeries::new(d("2022-01-01"), vec![1.0, 2.0]).unwrap();
        assert!(matches!(f.with_actual(&short), Err(Error::Alignment(_))));
    }

    #[test]
    fn csv_round_trip_of_totals() {
        let f = Forecast::new(horizon_dates(d("2021-12-31"), 2), vec![1.5, 2.25], vec![0.1, -0.2]).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("date,filter,residual,total\n2022-01-01,"));
        let back = read_predictions(buf.as_slice()).unwrap();
        assert_eq!(back, vec![(d("2022-01-01"), f.total[0]), (d("2022-01-02"), f.total[1])]);
    }

    #[test]
    fn zero_net_equals_filter_only() {
        let spec = CalendarSpec::from_json(crate::synth::CN_CALENDAR_2018_2023).unwrap();
        let values: Vec<f64> = (0..400).map(|i| 1000.0 + i as f64 + 50.0 * ((i * 7) % 11) as f64).collect();
        let series = DailySeries::new(d("2018-01-01"), values).unwrap();
        let mask = ExclusionMask::empty();
        let model = FilterModel::fit(&series, &mask, &BreakpointPlan::default(), &spec).unwrap();
        let residuals = model.residuals(&series, &mask, &spec).unwrap();
        let config = NetConfig {
            window: 16,
            dilations: vec![1, 2, 4],
            ..NetConfig::default()
        };
        let net = ResidualNet::zeros(config, Normalization { mean: 0.0, std: 1.0 }).unwrap();
        let two = compose(&model, &net, &residuals, &spec, 30).unwrap();
        let one = filter_only_forecast(&model, &spec, 30).unwrap();
        assert_eq!(two.total, one.total);
    }

    proptest! {
        #[test]
        fn rmse_nonnegative_and_permutation_invariant(
            pairs in prop::collection::vec((1.0f64..1e4, 1.0f64..1e4), 1..40),
            rot in 0usize..40,
        ) {
            let (a, p): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let r = rmse(&a, &p).unwrap();
            prop_assert!(r >= 0.0);
            let mut rotated = pairs.clone();
            rotated.rotate_left(rot % pairs.len());
            let (a2, p2): (Vec<f64>, Vec<f64>) = rotated.into_iter().unzip();
            prop_assert!((rmse(&a2, &p2).unwrap() - r).abs() <= 1e-9 * (1.0 + r));
        }

        #[test]
        fn mape_scale_invariant(
            pairs in prop::collection::vec((1.0f64..1e4, 1.0f64..1e4), 1..40),
            c in 1e-3f64..1e3,
        ) {
            let (a, p): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let m = mape(&a, &p).unwrap();
            let sa: Vec<f64> = a.iter().map(|x| x * c).collect();
            let sp: Vec<f64> = p.iter().map(|x| x * c).collect();
            prop_assert!((mape(&sa, &sp).unwrap() - m).abs() <= 1e-9 * (1.0 + m));
        }
    }
}
