use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Deserialize;

use crate::data::PopulationLabel;
use crate::error::{Error, Result};
use crate::lifetable::{e0_by_horizon, InfantRule};
use crate::methods::{ForecastMethod, ForecastSurface, MethodInput};
use crate::uncertainty::{prediction_interval, quantile, simulate_multilevel, GibbsConfig, SamplePaths};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BacktestPlan {
    /// Years held out at the first origin. Each later origin adds one year
    /// to the training sample.
    pub holdout: usize,
    /// Longest horizon forecast from any origin (defaults to the holdout).
    pub max_horizon: Option<usize>,
    /// Intervals have nominal coverage `1 - alpha`.
    pub alpha: f64,
    /// Also score life expectancy at birth.
    pub life_expectancy: bool,
    pub infant: InfantRule,
    /// Percentile intervals from posterior simulation for multilevel
    /// methods. Other methods keep their Gaussian intervals.
    pub simulated_intervals: Option<GibbsConfig>,
}

impl Default for BacktestPlan {
    fn default() -> Self {
        Self { holdout: 30, max_horizon: None, alpha: 0.2, life_expectancy: true, infant: InfantRule::default(), simulated_intervals: None }
    }
}

impl BacktestPlan {
    pub fn validate(&self, n_years: usize) -> Result<()> {
        if self.holdout == 0 || self.holdout >= n_years {
            return Err(Error::Config(format!("holdout must lie in [1, {}), got {}", n_years, self.holdout)));
        }
        if self.max_horizon == Some(0) {
            return Err(Error::Config("max_horizon must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if let Some(g) = &self.simulated_intervals {
            g.validate()?;
        }
        Ok(())
    }

    pub fn horizons(&self) -> usize {
        self.max_horizon.map_or(self.holdout, |m| m.min(self.holdout))
    }

    /// Number of origins whose forecasts reach horizon `h`.
    pub fn forecasts_at(&self, h: usize) -> usize {
        if h == 0 || h > self.horizons() { 0 } else { self.holdout + 1 - h }
    }
}

/// Forecast against actual for one life-expectancy value.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarOutcome {
    pub forecast: f64,
    pub lower: f64,
    pub upper: f64,
    pub actual: f64,
}

/// One forecast year of one population from one origin, on the rate scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub method: usize,
    pub population: usize,
    pub origin_year: i32,
    pub horizon: usize,
    pub forecast: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub actual: Vec<f64>,
    pub e0: Option<ScalarOutcome>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub method: usize,
    pub origin_year: i32,
    /// Longest horizon the failed origin would have produced.
    pub horizon: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct Backtest {
    pub methods: Vec<String>,
    pub populations: Vec<PopulationLabel>,
    pub plan: BacktestPlan,
    pub outcomes: Vec<Outcome>,
    pub failures: Vec<Failure>,
}

fn e0_bounds(paths: &[DMatrix<f64>], plan: &BacktestPlan, input: &MethodInput) -> Result<Vec<(f64, f64)>> {
    let draws = paths.iter().map(|p| e0_by_horizon(p, input.grid(), plan.infant)).collect::<Result<Vec<_>>>()?;
    let h = paths[0].nrows();
    Ok((0..h)
        .map(|k| {
            let mut col: Vec<f64> = draws.iter().map(|d| d[k]).collect();
            col.sort_by(f64::total_cmp);
            (quantile(&col, plan.alpha / 2.0), quantile(&col, 1.0 - plan.alpha / 2.0))
        })
        .collect())
}

struct Job<'a> {
    method: usize,
    origin: usize,
    forecaster: &'a dyn ForecastMethod,
}

fn run_job(job: &Job, input: &MethodInput, plan: &BacktestPlan, targets: &[PopulationLabel]) -> Result<Vec<Outcome>> {
    let n_train = input.n_years() - plan.holdout + job.origin;
    let horizon = (plan.holdout - job.origin).min(plan.horizons());
    let train = input.head(n_train)?;
    let surfaces: Vec<ForecastSurface> = job.forecaster.forecast(&train, horizon)?;
    let simulated: Option<SamplePaths> = match (&plan.simulated_intervals, job.forecaster.as_multilevel()) {
        (Some(cfg), Some(ml)) => Some(simulate_multilevel(&train, ml, cfg, horizon)?),
        _ => None,
    };
    let mut out = Vec::new();
    for s in &surfaces {
        let Some(pop) = targets.iter().position(|t| t == &s.population) else { continue };
        let observed = &input.surface(&s.population)?.observed;
        let paths = simulated.as_ref().and_then(|sp| sp.get(&s.population));
        let (lo, hi) = match paths {
            Some(p) => prediction_interval(p, plan.alpha)?,
            None => s.gaussian_interval(plan.alpha)?,
        };
        let e0 = if plan.life_expectancy {
            let point = e0_by_horizon(&s.mean, input.grid(), plan.infant)?;
            let actual = e0_by_horizon(&observed.rows(n_train, horizon).into_owned(), input.grid(), plan.infant)?;
            // Without paths the rate bounds are mapped through the life
            // table; e0 falls as rates rise, so the bounds swap.
            let bounds = match paths {
                Some(p) => e0_bounds(p, plan, input)?,
                None => {
                    let upper = e0_by_horizon(&lo, input.grid(), plan.infant)?;
                    let lower = e0_by_horizon(&hi, input.grid(), plan.infant)?;
                    lower.into_iter().zip(upper).collect()
                }
            };
            Some((point, actual, bounds))
        } else {
            None
        };
        for h in 0..horizon {
            let row = |m: &DMatrix<f64>| m.row(h).iter().map(|v| v.exp()).collect::<Vec<f64>>();
            out.push(Outcome {
                method: job.method,
                population: pop,
                origin_year: input.first_year() + n_train as i32 - 1,
                horizon: h + 1,
                forecast: row(&s.mean),
                lower: row(&lo),
                upper: row(&hi),
                actual: observed.row(n_train + h).iter().map(|v| v.exp()).collect(),
                e0: e0.as_ref().map(|(point, actual, bounds)| ScalarOutcome {
                    forecast: point[h],
                    lower: bounds[h].0.min(bounds[h].1),
                    upper: bounds[h].0.max(bounds[h].1),
                    actual: actual[h],
                }),
            });
        }
    }
    Ok(out)
}

/// Expanding-window backtest. Origins and methods run in parallel; a method
/// that fails at an origin is recorded and its forecasts are left out.
pub fn rolling_origin(input: &MethodInput, plan: &BacktestPlan, methods: &[Arc<dyn ForecastMethod>]) -> Result<Backtest> {
    plan.validate(input.n_years())?;
    if methods.is_empty() {
        return Err(Error::Config("no methods to evaluate".into()));
    }
    let targets = input.targets();
    let jobs: Vec<Job> = methods
        .iter()
        .enumerate()
        .flat_map(|(m, f)| (0..plan.holdout).map(move |o| Job { method: m, origin: o, forecaster: f.as_ref() }))
        .collect();
    let results: Vec<Result<Vec<Outcome>>> = jobs.par_iter().map(|j| run_job(j, input, plan, &targets)).collect();
    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for (job, r) in jobs.iter().zip(results) {
        match r {
            Ok(o) => outcomes.extend(o),
            Err(e) => {
                let origin_year = input.first_year() + (input.n_years() - plan.holdout + job.origin) as i32 - 1;
                log::warn!("{} failed at origin {origin_year}: {e}", methods[job.method].label());
                failures.push(Failure {
                    method: job.method,
                    origin_year,
                    horizon: (plan.holdout - job.origin).min(plan.horizons()),
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(Backtest { methods: methods.iter().map(|m| m.label()).collect(), populations: targets, plan: plan.clone(), outcomes, failures })
}
