use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use mortcast::data::{load_dataset, read_canonical_csv, Hierarchy, HmdSource, MortalityDataset};
use mortcast::error::{Error, Result};
use mortcast::evaluate::BacktestPlan;
use mortcast::methods::{benchmark_suite, method, ForecastMethod, MethodInput, MethodSettings};
use mortcast::smooth::{AlphaPolicy, SmoothingConfig};
use mortcast::uncertainty::GibbsConfig;
use serde::Deserialize;

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn read_hierarchy(path: Option<&Path>) -> Result<Option<Hierarchy>> {
    path.map(|p| Hierarchy::from_toml(&read_text(p)?)).transpose()
}

/// Reads a canonical long-format CSV, optionally with an explicit grouping.
pub fn read_dataset(path: &Path, hierarchy: Option<&Path>) -> Result<MortalityDataset> {
    let hierarchy = read_hierarchy(hierarchy)?;
    read_canonical_csv(read_text(path)?.as_bytes(), hierarchy)
}

/// Whether and how the observed log rates are smoothed before fitting.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoothingSection {
    pub enabled: bool,
    /// `"auto"` or a non-negative penalty weight.
    pub alpha: String,
    pub monotone: bool,
    pub monotone_from: f64,
}

impl Default for SmoothingSection {
    fn default() -> Self {
        Self { enabled: true, alpha: "auto".into(), monotone: true, monotone_from: 65.0 }
    }
}

impl SmoothingSection {
    pub fn config(&self) -> Result<SmoothingConfig> {
        let alpha: AlphaPolicy = self.alpha.parse()?;
        if !self.monotone_from.is_finite() {
            return Err(Error::Config("monotone_from must be finite".into()));
        }
        Ok(SmoothingConfig { alpha, monotone_from: self.monotone.then_some(self.monotone_from) })
    }

    pub fn apply(&self, dataset: &MortalityDataset) -> Result<MethodInput> {
        if self.enabled {
            MethodInput::smoothed(dataset, &self.config()?)
        } else {
            MethodInput::unsmoothed(dataset)
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HmdFiles {
    pub name: String,
    #[serde(default)]
    pub region: Option<String>,
    pub rates: PathBuf,
    pub exposures: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Canonical long-format CSV.
    #[serde(default)]
    pub csv: Option<PathBuf>,
    /// Raw HMD rate and exposure tables, one entry per country or region.
    #[serde(default)]
    pub hmd: Vec<HmdFiles>,
    #[serde(default = "default_age_cap")]
    pub age_cap: u32,
    #[serde(default)]
    pub first_year: Option<i32>,
    #[serde(default)]
    pub last_year: Option<i32>,
}

fn default_age_cap() -> u32 {
    110
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub name: String,
    #[serde(default)]
    pub score_model: Option<String>,
    #[serde(default)]
    pub p1: Option<f64>,
    #[serde(default)]
    pub p2: Option<f64>,
}

impl MethodSpec {
    pub fn build(&self) -> Result<Arc<dyn ForecastMethod>> {
        let d = MethodSettings::default();
        let settings = MethodSettings {
            score_model: self.score_model.clone().unwrap_or(d.score_model),
            p1: self.p1.unwrap_or(d.p1),
            p2: self.p2.unwrap_or(d.p2),
        };
        method(&self.name, &settings)
    }
}

/// Everything an `evaluate` run needs, read from TOML.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    #[serde(default)]
    pub hierarchy: Option<PathBuf>,
    #[serde(default)]
    pub smoothing: SmoothingSection,
    /// Empty means the six standard comparison rows.
    #[serde(default)]
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub backtest: BacktestPlan,
    /// When present, multilevel methods get simulated intervals.
    #[serde(default)]
    pub gibbs: Option<GibbsConfig>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Overrides the sampler seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    /// Reads and validates a config. Relative paths are taken from the
    /// config file's directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let mut cfg = Self::parse(&read_text(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.data.csv.as_mut() {
            resolve(p);
        }
        for h in &mut cfg.data.hmd {
            resolve(&mut h.rates);
            resolve(&mut h.exposures);
        }
        if let Some(p) = cfg.hierarchy.as_mut() {
            resolve(p);
        }
        resolve(&mut cfg.output_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data.csv, self.data.hmd.is_empty()) {
            (Some(_), false) => return Err(Error::Config("give either data.csv or data.hmd, not both".into())),
            (None, true) => return Err(Error::Config("no data source: set data.csv or add [[data.hmd]] entries".into())),
            _ => {}
        }
        let mut seen = BTreeSet::new();
        for h in &self.data.hmd {
            if !seen.insert((h.name.as_str(), h.region.as_deref())) {
                return Err(Error::Config(format!("data source '{}' is listed twice", h.name)));
            }
        }
        if let (Some(a), Some(b)) = (self.data.first_year, self.data.last_year) {
            if a > b {
                return Err(Error::Config(format!("first_year {a} is after last_year {b}")));
            }
        }
        self.smoothing.config()?;
        self.methods()?;
        if self.backtest.simulated_intervals.is_some() {
            return Err(Error::Config("configure the sampler in [gibbs], not in [backtest]".into()));
        }
        self.plan().validate(usize::MAX)?;
        Ok(())
    }

    pub fn methods(&self) -> Result<Vec<Arc<dyn ForecastMethod>>> {
        if self.methods.is_empty() {
            return benchmark_suite();
        }
        self.methods.iter().map(MethodSpec::build).collect()
    }

    pub fn gibbs(&self) -> Option<GibbsConfig> {
        self.gibbs.clone().map(|g| GibbsConfig { seed: self.seed.unwrap_or(g.seed), ..g })
    }

    pub fn plan(&self) -> BacktestPlan {
        BacktestPlan { simulated_intervals: self.gibbs(), ..self.backtest.clone() }
    }

    pub fn dataset(&self) -> Result<MortalityDataset> {
        let hierarchy = read_hierarchy(self.hierarchy.as_deref())?;
        let data = match &self.data.csv {
            Some(path) => read_canonical_csv(read_text(path)?.as_bytes(), hierarchy)?,
            None => {
                let sources = self
                    .data
                    .hmd
                    .iter()
                    .map(|h| {
                        Ok(HmdSource {
                            name: h.name.clone(),
                            region: h.region.clone(),
                            rates: read_text(&h.rates)?,
                            exposures: read_text(&h.exposures)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                load_dataset(&sources, hierarchy, self.data.age_cap)?
            }
        };
        let years = data.years();
        let from = self.data.first_year.unwrap_or(years[0]);
        let to = self.data.last_year.unwrap_or(years[years.len() - 1]);
        if (from, to) == (years[0], years[years.len() - 1]) {
            Ok(data)
        } else {
            data.years_between(from, to)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = RunConfig::parse("[data]\ncsv = \"d.csv\"\n").unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.methods().unwrap().len(), 6);
        assert_eq!(cfg.backtest.holdout, 30);
        assert!(cfg.plan().simulated_intervals.is_none());
        assert_eq!(cfg.output_dir, PathBuf::from("out"));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(matches!(RunConfig::parse("[data]\ncsv = \"d.csv\"\nbogus = 1\n"), Err(Error::Config(_))));
        assert!(RunConfig::parse("[data]\ncsv = \"d.csv\"\n[backtest]\nhold = 3\n").is_err());
        assert!(RunConfig::parse("[data]\ncsv = \"d.csv\"\n[gibbs]\ndraws = 3\n").is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        let bad = [
            "[data]\n",
            "[data]\ncsv = \"d.csv\"\n[[data.hmd]]\nname = \"A\"\nrates = \"r\"\nexposures = \"e\"\n",
            "[data]\ncsv = \"d.csv\"\n[[methods]]\nname = \"nope\"\n",
            "[data]\ncsv = \"d.csv\"\n[[methods]]\nname = \"multilevel_fdm\"\np1 = 1.5\n",
            "[data]\ncsv = \"d.csv\"\n[smoothing]\nalpha = \"sometimes\"\n",
            "[data]\ncsv = \"d.csv\"\n[backtest]\nalpha = 2.0\n",
            "[data]\ncsv = \"d.csv\"\n[gibbs]\ntotal_draws = 10\nburn_in = 20\n",
            "[data]\ncsv = \"d.csv\"\nfirst_year = 2000\nlast_year = 1990\n",
        ];
        for text in bad {
            let r = RunConfig::parse(text).and_then(|c| c.validate());
            assert!(matches!(r, Err(Error::Config(_))), "{text}: {r:?}");
        }
    }

    #[test]
    fn top_level_seed_reaches_the_sampler() {
        let cfg = RunConfig::parse("seed = 42\n[data]\ncsv = \"d.csv\"\n[gibbs]\ntotal_draws = 200\nburn_in = 100\n").unwrap();
        cfg.validate().unwrap();
        let g = cfg.plan().simulated_intervals.unwrap();
        assert_eq!((g.seed, g.total_draws, g.thin), (42, 200, 10));
    }
}
