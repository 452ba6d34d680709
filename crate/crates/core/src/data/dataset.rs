use nalgebra::DMatrix;

use super::hmd::{aggregate_open_age, parse_hmd_table, TableKind};
use super::{AgeGrid, CellFlag, FlagReason, Hierarchy, PopulationLabel, Sex};
use crate::error::{Error, Result};

/// Rates and exposures for one population, `n_years x n_ages`.
#[derive(Debug, Clone)]
pub struct Population {
    pub label: PopulationLabel,
    pub rates: DMatrix<f64>,
    pub exposures: DMatrix<f64>,
    pub flags: Vec<CellFlag>,
}

impl Population {
    pub fn log_rates(&self) -> DMatrix<f64> {
        self.rates.map(f64::ln)
    }
}

/// Validated collection of populations on a shared age grid and year range.
#[derive(Debug, Clone)]
pub struct MortalityDataset {
    grid: AgeGrid,
    first_year: i32,
    populations: Vec<Population>,
    hierarchy: Hierarchy,
}

impl MortalityDataset {
    /// Builds a dataset, replacing zero or missing rates (and non-positive or
    /// missing exposures) by the smallest positive value observed at that age.
    /// Every replaced cell is flagged.
    pub fn new(
        grid: AgeGrid,
        first_year: i32,
        series: Vec<(PopulationLabel, DMatrix<f64>, DMatrix<f64>)>,
        hierarchy: Option<Hierarchy>,
    ) -> Result<Self> {
        if series.is_empty() {
            return Err(Error::Structure("dataset has no populations".into()));
        }
        let n = series[0].1.nrows();
        let p = grid.len();
        let mut populations = Vec::with_capacity(series.len());
        for (label, rates, exposures) in series {
            if rates.shape() != (n, p) || exposures.shape() != (n, p) {
                return Err(Error::Structure(format!(
                    "{label}: matrices are {:?}/{:?}, expected ({n}, {p})",
                    rates.shape(),
                    exposures.shape()
                )));
            }
            if populations.iter().any(|q: &Population| q.label == label) {
                return Err(Error::Structure(format!("duplicate population {label}")));
            }
            populations.push(impute(label, rates, exposures, first_year)?);
        }
        if n < 2 {
            return Err(Error::Structure(format!("need at least 2 years, got {n}")));
        }
        let labels: Vec<PopulationLabel> = populations.iter().map(|q| q.label.clone()).collect();
        let hierarchy = hierarchy.unwrap_or_else(|| Hierarchy::flat(&labels));
        hierarchy.validate(&labels)?;
        Ok(Self { grid, first_year, populations, hierarchy })
    }

    pub fn grid(&self) -> &AgeGrid {
        &self.grid
    }

    pub fn first_year(&self) -> i32 {
        self.first_year
    }

    pub fn n_years(&self) -> usize {
        self.populations[0].rates.nrows()
    }

    pub fn years(&self) -> Vec<i32> {
        (0..self.n_years()).map(|t| self.first_year + t as i32).collect()
    }

    pub fn populations(&self) -> &[Population] {
        &self.populations
    }

    pub fn labels(&self) -> Vec<PopulationLabel> {
        self.populations.iter().map(|q| q.label.clone()).collect()
    }

    pub fn population(&self, label: &PopulationLabel) -> Option<&Population> {
        self.populations.iter().find(|q| &q.label == label)
    }

    pub fn require(&self, label: &PopulationLabel) -> Result<&Population> {
        self.population(label).ok_or_else(|| Error::Structure(format!("unknown population {label}")))
    }

    pub fn hierarchy(&self) -> &Hierarchy {
        &self.hierarchy
    }

    pub fn with_hierarchy(mut self, hierarchy: Hierarchy) -> Result<Self> {
        hierarchy.validate(&self.labels())?;
        self.hierarchy = hierarchy;
        Ok(self)
    }

    /// The first `n` years only.
    pub fn head(&self, n: usize) -> Result<Self> {
        if n < 2 || n > self.n_years() {
            return Err(Error::Argument(format!("cannot keep {n} of {} years", self.n_years())));
        }
        self.years_between(self.first_year, self.first_year + n as i32 - 1)
    }

    /// Years `from..=to`, which must lie inside the data and span at least two years.
    pub fn years_between(&self, from: i32, to: i32) -> Result<Self> {
        let last_year = self.first_year + self.n_years() as i32 - 1;
        if from < self.first_year || to > last_year || to <= from {
            return Err(Error::Argument(format!("years {from}..={to} are not inside {}..={last_year}", self.first_year)));
        }
        let (start, n) = ((from - self.first_year) as usize, (to - from + 1) as usize);
        let populations = self
            .populations
            .iter()
            .map(|q| Population {
                label: q.label.clone(),
                rates: q.rates.rows(start, n).into_owned(),
                exposures: q.exposures.rows(start, n).into_owned(),
                flags: q.flags.iter().filter(|f| f.year >= from && f.year <= to).cloned().collect(),
            })
            .collect();
        Ok(Self { grid: self.grid.clone(), first_year: from, populations, hierarchy: self.hierarchy.clone() })
    }
}

fn impute(
    label: PopulationLabel,
    mut rates: DMatrix<f64>,
    mut exposures: DMatrix<f64>,
    first_year: i32,
) -> Result<Population> {
    let (n, p) = rates.shape();
    let mut flags = Vec::new();
    for i in 0..p {
        let min_rate = (0..n).map(|t| rates[(t, i)]).filter(|v| v.is_finite() && *v > 0.0).fold(f64::INFINITY, f64::min);
        let min_exp =
            (0..n).map(|t| exposures[(t, i)]).filter(|v| v.is_finite() && *v > 0.0).fold(f64::INFINITY, f64::min);
        for t in 0..n {
            let year = first_year + t as i32;
            let r = rates[(t, i)];
            if r.is_finite() && r < 0.0 {
                return Err(Error::Domain(format!("{label}: negative rate at year {year}, age index {i}")));
            }
            if !(r.is_finite() && r > 0.0) {
                if !min_rate.is_finite() {
                    return Err(Error::Domain(format!("{label}: no positive rate observed at age index {i}")));
                }
                let reason = if r.is_nan() { FlagReason::Missing } else { FlagReason::ZeroRate };
                flags.push(CellFlag { year, age_index: i, reason });
                flags.push(CellFlag { year, age_index: i, reason: FlagReason::Imputed });
                rates[(t, i)] = min_rate;
            }
            let e = exposures[(t, i)];
            if !(e.is_finite() && e > 0.0) {
                if !min_exp.is_finite() {
                    return Err(Error::Domain(format!("{label}: no positive exposure observed at age index {i}")));
                }
                if e.is_nan() {
                    flags.push(CellFlag { year, age_index: i, reason: FlagReason::Missing });
                }
                flags.push(CellFlag { year, age_index: i, reason: FlagReason::Imputed });
                exposures[(t, i)] = min_exp;
            }
        }
    }
    Ok(Population { label, rates, exposures, flags })
}

/// One HMD country: a rate table and an exposure table (texts of the files).
#[derive(Debug, Clone)]
pub struct HmdSource {
    pub name: String,
    pub region: Option<String>,
    pub rates: String,
    pub exposures: String,
}

/// Parses HMD rate/exposure pairs into one dataset with Female, Male and Total
/// series per source, capping ages at `age_cap` into an open group.
pub fn load_dataset(sources: &[HmdSource], hierarchy: Option<Hierarchy>, age_cap: u32) -> Result<MortalityDataset> {
    if sources.is_empty() {
        return Err(Error::Argument("no data sources".into()));
    }
    let mut grid: Option<AgeGrid> = None;
    let mut years: Option<(i32, usize)> = None;
    let mut series = Vec::new();
    for src in sources {
        let rates = parse_hmd_table(src.rates.as_bytes(), TableKind::Rates)?;
        let exposures = parse_hmd_table(src.exposures.as_bytes(), TableKind::Exposures)?;
        if (rates.first_year, rates.n_years()) != (exposures.first_year, exposures.n_years()) {
            return Err(Error::Structure(format!(
                "{}: rate years {}-{} do not match exposure years {}-{}",
                src.name,
                rates.first_year,
                rates.first_year + rates.n_years() as i32 - 1,
                exposures.first_year,
                exposures.first_year + exposures.n_years() as i32 - 1
            )));
        }
        let (rates, exposures) = aggregate_open_age(&rates, &exposures, age_cap)?;
        match &grid {
            Some(g) if *g != rates.grid => {
                return Err(Error::Structure(format!("{}: age grid differs from earlier sources", src.name)))
            }
            None => grid = Some(rates.grid.clone()),
            _ => {}
        }
        let span = (rates.first_year, rates.n_years());
        match years {
            Some(y) if y != span => {
                return Err(Error::Structure(format!("{}: year range differs from earlier sources", src.name)))
            }
            None => years = Some(span),
            _ => {}
        }
        for sex in [Sex::Female, Sex::Male, Sex::Total] {
            series.push((
                PopulationLabel::new(src.name.clone(), sex, src.region.clone()),
                rates.column(sex).clone(),
                exposures.column(sex).clone(),
            ));
        }
    }
    let (first_year, _) = years.expect("at least one source");
    MortalityDataset::new(grid.expect("at least one source"), first_year, series, hierarchy)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(years: std::ops::RangeInclusive<i32>, ages: u32, value: f64) -> String {
        let mut s = String::from("Year Age Female Male Total\n");
        for y in years {
            for a in 0..ages {
                s.push_str(&format!("{y} {a} {value} {value} {value}\n"));
            }
        }
        s
    }

    #[test]
    fn year_range_mismatch_is_an_error() {
        let src = HmdSource {
            name: "X".into(),
            region: None,
            rates: table(1950..=2000, 3, 0.01),
            exposures: table(1950..=1999, 3, 1000.0),
        };
        assert!(matches!(load_dataset(&[src], None, 95), Err(Error::Structure(_))));
    }

    #[test]
    fn loads_three_sexes_with_default_hierarchy() {
        let src = HmdSource {
            name: "X".into(),
            region: None,
            rates: table(1950..=1955, 4, 0.01),
            exposures: table(1950..=1955, 4, 1000.0),
        };
        let d = load_dataset(&[src], None, 95).unwrap();
        assert_eq!(d.n_years(), 6);
        assert_eq!(d.populations().len(), 3);
        assert_eq!(d.hierarchy().root.series, Some("X:total".parse().unwrap()));
    }

    #[test]
    fn zero_and_missing_rates_are_imputed_and_flagged() {
        let grid = AgeGrid::single_years(0, 2, true).unwrap();
        let mut rates = DMatrix::from_element(3, 3, 0.02);
        rates[(0, 1)] = 0.0;
        rates[(1, 1)] = f64::NAN;
        rates[(2, 1)] = 0.005;
        let expo = DMatrix::from_element(3, 3, 100.0);
        let d = MortalityDataset::new(grid, 2000, vec![("X:female".parse().unwrap(), rates, expo)], None).unwrap();
        let pop = &d.populations()[0];
        assert_eq!(pop.rates[(0, 1)], 0.005);
        assert_eq!(pop.rates[(1, 1)], 0.005);
        let imputed = pop.flags.iter().filter(|f| f.reason == FlagReason::Imputed).count();
        assert_eq!(imputed, 2);
        assert!(pop.flags.contains(&CellFlag { year: 2000, age_index: 1, reason: FlagReason::ZeroRate }));
        assert!(pop.flags.contains(&CellFlag { year: 2001, age_index: 1, reason: FlagReason::Missing }));
    }

    #[test]
    fn head_keeps_leading_years() {
        let grid = AgeGrid::single_years(0, 2, true).unwrap();
        let rates = DMatrix::from_fn(5, 3, |t, i| 0.01 * (1 + t + i) as f64);
        let expo = DMatrix::from_element(5, 3, 100.0);
        let d = MortalityDataset::new(grid, 2000, vec![("X:female".parse().unwrap(), rates, expo)], None).unwrap();
        let h = d.head(3).unwrap();
        assert_eq!(h.n_years(), 3);
        assert_eq!(h.populations()[0].rates[(2, 2)], 0.05);
    }
}
