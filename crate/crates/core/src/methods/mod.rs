//! Point-forecast methods for groups of populations, all selectable by name.

mod factor;
mod fdm;
mod lee_carter;
mod li_lee;
mod multilevel;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Deserialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{AgeGrid, Hierarchy, MortalityDataset, PopulationLabel};
use crate::error::{Error, Result};
use crate::smooth::{log_rate_variance, smooth_surface, SmoothedSurface, SmoothingConfig};
use crate::ts::score_model;

pub use fdm::{IndependentFdm, ProductRatio};
pub use lee_carter::{fit_lee_carter, LeeCarter, LeeCarterFit};
pub use li_lee::LiLee;
pub use multilevel::{multilevel_point_forecast, HierarchicalFdm, MultilevelFdm};

/// Log-rate forecasts for one population, horizons `1..=H` by age.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSurface {
    /// Display label of the method that produced it.
    pub method: String,
    pub population: PopulationLabel,
    /// Last year of the training data.
    pub origin_year: i32,
    pub mean: DMatrix<f64>,
    /// Approximate standard deviation of each log-rate forecast.
    pub sd: DMatrix<f64>,
}

impl ForecastSurface {
    pub fn horizon(&self) -> usize {
        self.mean.nrows()
    }

    /// Central `1 - alpha` Gaussian interval on the log scale.
    pub fn gaussian_interval(&self, alpha: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Argument(format!("interval level alpha must be in (0, 1), got {alpha}")));
        }
        let z = Normal::standard().inverse_cdf(1.0 - alpha / 2.0);
        Ok((self.mean.zip_map(&self.sd, |m, s| m - z * s), self.mean.zip_map(&self.sd, |m, s| m + z * s)))
    }
}

/// Smoothed surfaces of every population plus the grouping they belong to.
#[derive(Debug, Clone)]
pub struct MethodInput {
    grid: AgeGrid,
    first_year: i32,
    surfaces: Vec<SmoothedSurface>,
    hierarchy: Hierarchy,
}

/// One node of the hierarchy that directly holds populations.
#[derive(Debug, Clone, Copy)]
pub struct Group<'a> {
    pub name: &'a str,
    pub aggregate: Option<&'a PopulationLabel>,
    pub members: &'a [PopulationLabel],
}

impl MethodInput {
    pub fn new(surfaces: Vec<SmoothedSurface>, hierarchy: Hierarchy) -> Result<Self> {
        let first = surfaces.first().ok_or_else(|| Error::Structure("no surfaces".into()))?;
        let (grid, first_year, n) = (first.grid.clone(), first.first_year, first.n_years());
        for s in &surfaces {
            if s.grid != grid || s.first_year != first_year || s.n_years() != n {
                return Err(Error::Structure(format!("{}: surface does not share the grid and years of the others", s.label)));
            }
        }
        let labels: Vec<PopulationLabel> = surfaces.iter().map(|s| s.label.clone()).collect();
        hierarchy.validate(&labels)?;
        Ok(Self { grid, first_year, surfaces, hierarchy })
    }

    /// Smooths every population of the dataset.
    pub fn smoothed(dataset: &MortalityDataset, config: &SmoothingConfig) -> Result<Self> {
        let surfaces = dataset.labels().par_iter().map(|l| smooth_surface(dataset, l, config)).collect::<Result<Vec<_>>>()?;
        Self::new(surfaces, dataset.hierarchy().clone())
    }

    /// Uses the observed log rates as the curves.
    pub fn unsmoothed(dataset: &MortalityDataset) -> Result<Self> {
        let surfaces = dataset
            .populations()
            .iter()
            .map(|p| {
                let delta2 = log_rate_variance(&p.rates, &p.exposures)?;
                SmoothedSurface::unsmoothed(p.label.clone(), dataset.grid().clone(), dataset.first_year(), p.log_rates(), delta2)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(surfaces, dataset.hierarchy().clone())
    }

    pub fn grid(&self) -> &AgeGrid {
        &self.grid
    }

    pub fn first_year(&self) -> i32 {
        self.first_year
    }

    pub fn n_years(&self) -> usize {
        self.surfaces[0].n_years()
    }

    pub fn last_year(&self) -> i32 {
        self.first_year + self.n_years() as i32 - 1
    }

    pub fn hierarchy(&self) -> &Hierarchy {
        &self.hierarchy
    }

    pub fn surfaces(&self) -> &[SmoothedSurface] {
        &self.surfaces
    }

    pub fn surface(&self, label: &PopulationLabel) -> Result<&SmoothedSurface> {
        self.surfaces.iter().find(|s| &s.label == label).ok_or_else(|| Error::Structure(format!("no surface for {label}")))
    }

    /// The first `n` years.
    pub fn head(&self, n: usize) -> Result<Self> {
        if n < 2 || n > self.n_years() {
            return Err(Error::Argument(format!("cannot keep {n} of {} years", self.n_years())));
        }
        Ok(Self {
            grid: self.grid.clone(),
            first_year: self.first_year,
            surfaces: self.surfaces.iter().map(|s| s.head(n)).collect(),
            hierarchy: self.hierarchy.clone(),
        })
    }

    pub fn groups(&self) -> Vec<Group<'_>> {
        self.hierarchy
            .nodes()
            .into_iter()
            .filter(|n| !n.members.is_empty())
            .map(|n| Group { name: &n.name, aggregate: n.series.as_ref(), members: &n.members })
            .collect()
    }

    /// Populations that receive forecasts.
    pub fn targets(&self) -> Vec<PopulationLabel> {
        self.hierarchy.leaves()
    }
}

/// A point-forecast method.
pub trait ForecastMethod: Send + Sync + fmt::Debug {
    /// Registry key.
    fn name(&self) -> &'static str;
    /// Row label used in reports.
    fn label(&self) -> String;
    fn forecast(&self, input: &MethodInput, horizon: usize) -> Result<Vec<ForecastSurface>>;
    /// Set for methods whose intervals can also come from posterior simulation.
    fn as_multilevel(&self) -> Option<&MultilevelFdm> {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MethodSettings {
    pub score_model: String,
    /// Variance share retained by the common (or only) decomposition.
    pub p1: f64,
    /// Variance share retained by population-specific decompositions.
    pub p2: f64,
}

impl Default for MethodSettings {
    fn default() -> Self {
        Self { score_model: "arima".into(), p1: 0.9, p2: 0.9 }
    }
}

impl MethodSettings {
    pub fn with_score_model(name: &str) -> Self {
        Self { score_model: name.to_string(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("p1", self.p1), ("p2", self.p2)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} must be in (0, 1], got {v}")));
            }
        }
        score_model(&self.score_model).map(|_| ())
    }
}

type Builder = fn(&MethodSettings) -> Result<Arc<dyn ForecastMethod>>;

const REGISTRY: [(&str, Builder); 6] = [
    ("lee_carter", |_| Ok(Arc::new(LeeCarter))),
    ("li_lee", |_| Ok(Arc::new(LiLee))),
    ("independent_fdm", |s| Ok(Arc::new(IndependentFdm::new(s)?))),
    ("product_ratio", |s| Ok(Arc::new(ProductRatio::new(s)?))),
    ("multilevel_fdm", |s| Ok(Arc::new(MultilevelFdm::new(s)?))),
    ("hierarchical", |s| Ok(Arc::new(HierarchicalFdm::new(s)?))),
];

pub fn method_names() -> Vec<&'static str> {
    REGISTRY.iter().map(|(n, _)| *n).collect()
}

/// Builds a registered method by name.
pub fn method(name: &str, settings: &MethodSettings) -> Result<Arc<dyn ForecastMethod>> {
    settings.validate()?;
    let builder = REGISTRY
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, b)| b)
        .ok_or_else(|| Error::Config(format!("unknown method '{name}' (expected one of {})", method_names().join(", "))))?;
    builder(settings)
}

/// The six method rows of the standard comparison.
pub fn benchmark_suite() -> Result<Vec<Arc<dyn ForecastMethod>>> {
    [
        ("lee_carter", "rwf"),
        ("li_lee", "rwf"),
        ("independent_fdm", "arima"),
        ("product_ratio", "arima"),
        ("multilevel_fdm", "arima"),
        ("multilevel_fdm", "rwf"),
    ]
    .iter()
    .map(|(m, s)| method(m, &MethodSettings::with_score_model(s)))
    .collect()
}
