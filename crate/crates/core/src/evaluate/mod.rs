//! Rolling-origin backtests and their accuracy report.

mod backtest;
mod metrics;

use std::io::Write;

use crate::data::Sex;
use crate::error::{Error, Result};

pub use backtest::{rolling_origin, Backtest, BacktestPlan, Failure, Outcome, ScalarOutcome};
pub use metrics::{interval_score, max_metrics, point_metrics, score_metrics, MaxMetrics, PointMetrics, ScoreMetrics};

pub const METRICS: [&str; 7] = ["rmsfe", "mafe", "mfe", "mean_interval_score", "max_afe", "max_rsfe", "max_interval_score"];
pub const E0_METRICS: [&str; 7] =
    ["e0_rmsfe", "e0_mafe", "e0_mfe", "e0_mean_interval_score", "e0_max_afe", "e0_max_rsfe", "e0_max_interval_score"];
pub const EXCLUDED: &str = "excluded";
pub const ALL_POPULATIONS: &str = "all";
/// Unweighted average over horizons.
pub const MEAN_HORIZON: &str = "mean";
/// Average over horizons weighted by the number of forecasts.
pub const WEIGHTED_HORIZON: &str = "weighted";

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub population: String,
    pub horizon: String,
    pub metric: String,
    pub value: f64,
    pub n_forecasts: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvaluationReport {
    pub rows: Vec<ReportRow>,
}

/// The seven summaries of a set of errors and interval scores.
fn summarise(errors: &[f64], scores: &[f64]) -> Result<[f64; 7]> {
    let p = point_metrics(errors)?;
    let x = max_metrics(errors)?;
    let s = score_metrics(scores)?;
    Ok([p.rmsfe, p.mafe, p.mfe, s.mean, x.max_afe, x.max_rsfe, s.max])
}

/// Per-horizon metric values and forecast counts for one method and population.
struct Cell {
    values: Vec<Option<[f64; 7]>>,
    e0: Vec<Option<[f64; 7]>>,
    counts: Vec<usize>,
    excluded: Vec<usize>,
}

fn cell(bt: &Backtest, method: usize, pop: usize) -> Result<Cell> {
    let hmax = bt.plan.horizons();
    let alpha = bt.plan.alpha;
    let mut values = Vec::with_capacity(hmax);
    let mut e0 = Vec::with_capacity(hmax);
    let mut counts = Vec::with_capacity(hmax);
    let mut excluded = Vec::with_capacity(hmax);
    for h in 1..=hmax {
        let rows: Vec<&Outcome> = bt.outcomes.iter().filter(|o| o.method == method && o.population == pop && o.horizon == h).collect();
        counts.push(rows.len());
        excluded.push(bt.failures.iter().filter(|f| f.method == method && f.horizon >= h).count());
        if rows.is_empty() {
            values.push(None);
            e0.push(None);
            continue;
        }
        let mut errors = Vec::new();
        let mut scores = Vec::new();
        for o in &rows {
            for i in 0..o.actual.len() {
                errors.push(o.actual[i] - o.forecast[i]);
                scores.push(interval_score(o.lower[i], o.upper[i], o.actual[i], alpha)?);
            }
        }
        values.push(Some(summarise(&errors, &scores)?));
        let life: Vec<&ScalarOutcome> = rows.iter().filter_map(|o| o.e0.as_ref()).collect();
        e0.push(if life.is_empty() {
            None
        } else {
            let errors: Vec<f64> = life.iter().map(|s| s.actual - s.forecast).collect();
            let scores = life.iter().map(|s| interval_score(s.lower, s.upper, s.actual, alpha)).collect::<Result<Vec<_>>>()?;
            Some(summarise(&errors, &scores)?)
        });
    }
    Ok(Cell { values, e0, counts, excluded })
}

fn average(items: &[(f64, usize)], weighted: bool) -> f64 {
    let (num, den) = items.iter().fold((0.0, 0.0), |(n, d), (v, c)| {
        let w = if weighted { *c as f64 } else { 1.0 };
        (n + w * v, d + w)
    });
    num / den
}

impl EvaluationReport {
    /// Per-horizon rows, then unweighted and count-weighted horizon
    /// averages, for each population and for the average over populations.
    pub fn from_backtest(bt: &Backtest) -> Result<Self> {
        let hmax = bt.plan.horizons();
        let mut rows = Vec::new();
        for (m, method) in bt.methods.iter().enumerate() {
            let cells = (0..bt.populations.len()).map(|j| cell(bt, m, j)).collect::<Result<Vec<_>>>()?;
            let mut push = |population: &str, horizon: String, metric: &str, value: f64, n: usize| {
                rows.push(ReportRow {
                    method: method.clone(),
                    population: population.to_string(),
                    horizon,
                    metric: metric.to_string(),
                    value,
                    n_forecasts: n,
                });
            };
            let names: Vec<String> = bt.populations.iter().map(|l| l.to_string()).chain([ALL_POPULATIONS.to_string()]).collect();
            for (j, name) in names.iter().enumerate() {
                let members: Vec<&Cell> = if j < cells.len() { vec![&cells[j]] } else { cells.iter().collect() };
                for (set, labels) in [(false, &METRICS), (true, &E0_METRICS)] {
                    let pick = |c: &Cell, h: usize| if set { c.e0[h] } else { c.values[h] };
                    if set && !bt.plan.life_expectancy {
                        continue;
                    }
                    // Per horizon: average over member populations that have a value.
                    let per_h: Vec<Option<([f64; 7], usize)>> = (0..hmax)
                        .map(|h| {
                            let have: Vec<([f64; 7], usize)> =
                                members.iter().filter_map(|c| pick(c, h).map(|v| (v, c.counts[h]))).collect();
                            if have.is_empty() {
                                return None;
                            }
                            let mut v = [0.0; 7];
                            for (k, slot) in v.iter_mut().enumerate() {
                                *slot = have.iter().map(|(x, _)| x[k]).sum::<f64>() / have.len() as f64;
                            }
                            Some((v, have.iter().map(|(_, c)| c).sum()))
                        })
                        .collect();
                    for (k, metric) in labels.iter().enumerate() {
                        let mut series = Vec::new();
                        for (h, entry) in per_h.iter().enumerate() {
                            if let Some((v, n)) = entry {
                                push(name, (h + 1).to_string(), metric, v[k], *n);
                                series.push((v[k], *n));
                            }
                        }
                        if !series.is_empty() {
                            let total = series.iter().map(|(_, n)| n).sum();
                            push(name, MEAN_HORIZON.into(), metric, average(&series, false), total);
                            push(name, WEIGHTED_HORIZON.into(), metric, average(&series, true), total);
                        }
                    }
                }
                for h in 0..hmax {
                    let n: usize = members.iter().map(|c| c.excluded[h]).sum();
                    push(name, (h + 1).to_string(), EXCLUDED, n as f64, n);
                }
            }
        }
        Ok(Self { rows })
    }

    pub fn value(&self, method: &str, population: &str, horizon: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.population == population && r.horizon == horizon && r.metric == metric)
            .map(|r| r.value)
    }

    pub fn methods(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.method) {
                out.push(r.method.clone());
            }
        }
        out
    }

    /// Columns `method,population,horizon,metric,value,n_forecasts`. Values
    /// use the shortest representation that round-trips.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["method", "population", "horizon", "metric", "value", "n_forecasts"])?;
        for r in &self.rows {
            w.write_record([&r.method, &r.population, &r.horizon, &r.metric, &r.value.to_string(), &r.n_forecasts.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Horizon-averaged summary with one row per method and metric and
    /// columns for female, male and the average over all populations.
    pub fn summary_table(&self, populations: &[crate::data::PopulationLabel], metrics: &[&str]) -> Result<Vec<SummaryRow>> {
        if populations.is_empty() {
            return Err(Error::Argument("no populations to summarise".into()));
        }
        let mut out = Vec::new();
        for method in self.methods() {
            for metric in metrics {
                let by_sex = |sex: Sex| {
                    let v: Vec<f64> = populations
                        .iter()
                        .filter(|l| l.sex == sex)
                        .filter_map(|l| self.value(&method, &l.to_string(), MEAN_HORIZON, metric))
                        .collect();
                    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
                };
                out.push(SummaryRow {
                    method: method.clone(),
                    metric: metric.to_string(),
                    female: by_sex(Sex::Female),
                    male: by_sex(Sex::Male),
                    overall: self.value(&method, ALL_POPULATIONS, MEAN_HORIZON, metric),
                });
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub metric: String,
    pub female: Option<f64>,
    pub male: Option<f64>,
    pub overall: Option<f64>,
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "metric", "female", "male", "overall"])?;
    let fmt = |v: Option<f64>| v.map_or_else(|| ".".to_string(), |x| x.to_string());
    for r in rows {
        w.write_record([r.method.clone(), r.metric.clone(), fmt(r.female), fmt(r.male), fmt(r.overall)])?;
    }
    w.flush()?;
    Ok(())
}
