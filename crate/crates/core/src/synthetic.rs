//! Simulated mortality data with a shared random-walk trend and stationary
//! population-specific deviations, observed through Poisson death counts.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::data::{AgeGrid, Hierarchy, HierarchyNode, MortalityDataset, PopulationLabel, Sex};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub name: String,
    pub first_year: i32,
    pub n_years: usize,
    /// Last single-year age; the final age group is open.
    pub last_age: u32,
    /// Yearly change of the common index.
    pub drift: f64,
    pub trend_sd: f64,
    /// AR(1) coefficient of the population-specific index.
    pub phi: f64,
    pub deviation_sd: f64,
    /// Person-years at age 0; exposure declines with age.
    pub exposure: f64,
    /// Optional sub-populations (states); each gets its own deviation.
    pub regions: Vec<String>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            name: "SYN".into(),
            first_year: 1950,
            n_years: 60,
            last_age: 95,
            drift: -1.2,
            trend_sd: 0.6,
            phi: 0.6,
            deviation_sd: 0.08,
            exposure: 2.0e5,
            regions: Vec::new(),
            seed: 1,
        }
    }
}

/// Age curves of the generating model: baseline log rate, sex offset, trend
/// loading (sums to one) and deviation loading (peak one).
pub fn age_profile(grid: &AgeGrid) -> (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>) {
    let x = DVector::from_column_slice(grid.ages());
    let base = x.map(|a| (2.0e-4 + 0.02 * (-1.5 * a).exp() + 4.0e-5 * (0.095 * a).exp()).ln());
    let offset = x.map(|a| 0.15 + 0.2 * (-((a - 22.0) / 12.0).powi(2)).exp());
    let raw = x.map(|a| 1.3 - a / 110.0);
    let trend = &raw / raw.sum();
    let deviation = x.map(|a| 0.4 + (-((a - 30.0) / 18.0).powi(2)).exp());
    let deviation = &deviation / deviation.max();
    (base, offset, trend, deviation)
}

struct Simulated {
    label: PopulationLabel,
    deaths: DMatrix<f64>,
    exposure: DMatrix<f64>,
}

fn ar1_path<R: Rng>(n: usize, phi: f64, sd: f64, rng: &mut R) -> Vec<f64> {
    let noise = Normal::new(0.0, sd).expect("sd >= 0");
    let mut g = noise.sample(rng) / (1.0 - phi * phi).sqrt();
    (0..n)
        .map(|_| {
            let out = g;
            g = phi * g + noise.sample(rng);
            out
        })
        .collect()
}

/// Female, male and total populations (per region when regions are given).
/// The hierarchy is name -> (region ->) sex.
pub fn two_sex(spec: &SyntheticSpec) -> Result<MortalityDataset> {
    if spec.n_years < 3 || spec.last_age < 3 {
        return Err(Error::Argument("synthetic data needs at least 3 years and 4 ages".into()));
    }
    if !(spec.phi.abs() < 1.0) || spec.trend_sd < 0.0 || spec.deviation_sd < 0.0 || !(spec.exposure > 0.0) {
        return Err(Error::Argument("synthetic spec has an invalid parameter".into()));
    }
    let grid = AgeGrid::single_years(0, spec.last_age, true)?;
    let (p, n) = (grid.len(), spec.n_years);
    let (base, offset, trend, deviation) = age_profile(&grid);
    let mut rng = rng::stream(spec.seed, &[0x5917]);
    let step = Normal::new(spec.drift, spec.trend_sd.max(0.0)).expect("finite");
    let mut k = vec![0.0; n];
    for t in 1..n {
        k[t] = k[t - 1] + step.sample(&mut rng);
    }
    let kmean = k.iter().sum::<f64>() / n as f64;
    let regions: Vec<Option<String>> =
        if spec.regions.is_empty() { vec![None] } else { spec.regions.iter().cloned().map(Some).collect() };

    let mut sims = Vec::new();
    for (r, region) in regions.iter().enumerate() {
        let region_shift = 0.05 * r as f64;
        let region_dev = if region.is_some() { ar1_path(n, spec.phi, spec.deviation_sd, &mut rng) } else { vec![0.0; n] };
        let mut pair = Vec::new();
        for (sex, sign) in [(Sex::Female, -1.0), (Sex::Male, 1.0)] {
            let g = ar1_path(n, spec.phi, spec.deviation_sd, &mut rng);
            let label = PopulationLabel::new(spec.name.clone(), sex, region.clone());
            let mut deaths = DMatrix::zeros(n, p);
            let mut exposure = DMatrix::zeros(n, p);
            for t in 0..n {
                for i in 0..p {
                    let age = grid.ages()[i];
                    let log_m = base[i] + sign * offset[i] + region_shift + trend[i] * (k[t] - kmean)
                        + deviation[i] * (g[t] + region_dev[t]);
                    let m = log_m.exp().min(2.0);
                    let pop = spec.exposure * (-age / 45.0).exp() * if grid.open_ended_last() && i + 1 == p { 3.0 } else { 1.0 };
                    let d = Poisson::new(m * pop).map_err(|e| Error::Numerical(format!("poisson mean {}: {e}", m * pop)))?;
                    deaths[(t, i)] = d.sample(&mut rng);
                    exposure[(t, i)] = pop;
                }
            }
            pair.push(Simulated { label, deaths, exposure });
        }
        let total = Simulated {
            label: PopulationLabel::new(spec.name.clone(), Sex::Total, region.clone()),
            deaths: &pair[0].deaths + &pair[1].deaths,
            exposure: &pair[0].exposure + &pair[1].exposure,
        };
        sims.extend(pair);
        sims.push(total);
    }

    let hierarchy = if spec.regions.is_empty() {
        None
    } else {
        let children = regions
            .iter()
            .map(|r| HierarchyNode {
                name: r.clone().unwrap_or_default(),
                series: Some(PopulationLabel::new(spec.name.clone(), Sex::Total, r.clone())),
                members: [Sex::Female, Sex::Male].iter().map(|s| PopulationLabel::new(spec.name.clone(), *s, r.clone())).collect(),
                children: Vec::new(),
            })
            .collect();
        Some(Hierarchy { root: HierarchyNode { name: spec.name.clone(), series: None, members: Vec::new(), children } })
    };
    let series = sims
        .into_iter()
        .map(|s| {
            let rates = s.deaths.component_div(&s.exposure);
            (s.label, rates, s.exposure)
        })
        .collect();
    MortalityDataset::new(grid, spec.first_year, series, hierarchy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_hierarchy() {
        let d = two_sex(&SyntheticSpec { n_years: 12, last_age: 20, ..SyntheticSpec::default() }).unwrap();
        assert_eq!(d.populations().len(), 3);
        assert_eq!(d.n_years(), 12);
        assert_eq!(d.grid().len(), 21);
        assert_eq!(d.hierarchy().root.series, Some("SYN:total".parse().unwrap()));

        let spec = SyntheticSpec { n_years: 12, last_age: 20, regions: vec!["A".into(), "B".into()], ..SyntheticSpec::default() };
        let h = two_sex(&spec).unwrap();
        assert_eq!(h.populations().len(), 6);
        assert_eq!(h.hierarchy().depth(), 2);
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = SyntheticSpec { n_years: 8, last_age: 10, ..SyntheticSpec::default() };
        let a = two_sex(&spec).unwrap();
        let b = two_sex(&spec).unwrap();
        assert_eq!(a.populations()[0].rates, b.populations()[0].rates);
        let c = two_sex(&SyntheticSpec { seed: 2, ..spec }).unwrap();
        assert_ne!(a.populations()[0].rates, c.populations()[0].rates);
    }

    #[test]
    fn females_have_lower_mortality() {
        let d = two_sex(&SyntheticSpec::default()).unwrap();
        let f = d.populations()[0].log_rates().mean();
        let m = d.populations()[1].log_rates().mean();
        assert!(f < m);
    }
}
