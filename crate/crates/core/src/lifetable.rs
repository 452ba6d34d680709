//! Period life tables from central death rates.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Deserialize;

use crate::data::AgeGrid;
use crate::error::{Error, Result};
use crate::uncertainty::quantile;

const Q_CEILING: f64 = 1.0 - 1e-12;

/// Average fraction of the first year lived by infants who die.
#[derive(Debug, Clone, Copy, PartialEq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfantRule {
    /// `0.07 + 1.7 m0`, capped at 0.35.
    #[default]
    CoaleDemeny,
    Half,
}

impl InfantRule {
    fn separation(self, m0: f64) -> f64 {
        match self {
            InfantRule::CoaleDemeny => (0.07 + 1.7 * m0).min(0.35),
            InfantRule::Half => 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LifeTable {
    pub m: Vec<f64>,
    pub q: Vec<f64>,
    /// Years lived in the interval by those who die in it.
    pub a: Vec<f64>,
    pub l: Vec<f64>,
    pub d: Vec<f64>,
    pub big_l: Vec<f64>,
    pub t: Vec<f64>,
    pub e: Vec<f64>,
    /// Ages whose computed `q` exceeded one and was capped.
    pub capped: Vec<usize>,
}

impl LifeTable {
    pub fn e0(&self) -> f64 {
        self.e[0]
    }
}

/// Builds the table with radix one. The last age group is closed out with
/// `L = l / m` whether or not the grid marks it open.
pub fn life_table(m: &[f64], grid: &AgeGrid, infant: InfantRule) -> Result<LifeTable> {
    let p = grid.len();
    if m.len() != p {
        return Err(Error::Structure(format!("{} rates for a grid of {p} ages", m.len())));
    }
    if let Some(bad) = m.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Domain(format!("death rate at age {} must be positive and finite, got {}", grid.label(bad), m[bad])));
    }
    let widths = grid.widths();
    let ages = grid.ages();
    let mut out = LifeTable {
        m: m.to_vec(),
        q: vec![0.0; p],
        a: vec![0.0; p],
        l: vec![0.0; p],
        d: vec![0.0; p],
        big_l: vec![0.0; p],
        t: vec![0.0; p],
        e: vec![0.0; p],
        capped: Vec::new(),
    };
    let mut alive = 1.0;
    for i in 0..p {
        out.l[i] = alive;
        if i + 1 == p {
            out.q[i] = 1.0;
            out.a[i] = 1.0 / m[i];
            out.d[i] = alive;
            out.big_l[i] = alive / m[i];
            break;
        }
        let n = widths[i];
        let a = if i == 0 && ages[0] == 0.0 && n == 1.0 { infant.separation(m[0]) } else { n / 2.0 };
        let mut q = n * m[i] / (1.0 + (n - a) * m[i]);
        if q > 1.0 {
            q = Q_CEILING;
            out.capped.push(i);
            log::warn!("q at age {} exceeded one and was capped", grid.label(i));
        }
        out.q[i] = q;
        out.a[i] = a;
        out.d[i] = alive * q;
        let next = alive - out.d[i];
        out.big_l[i] = n * next + a * out.d[i];
        alive = next;
    }
    let mut acc = 0.0;
    for i in (0..p).rev() {
        acc += out.big_l[i];
        out.t[i] = acc;
        out.e[i] = acc / out.l[i];
    }
    Ok(out)
}

pub fn life_expectancy(m: &[f64], grid: &AgeGrid, infant: InfantRule) -> Result<f64> {
    life_table(m, grid, infant).map(|t| t.e0())
}

/// Life expectancy at birth for each horizon (row) of a log-rate surface.
pub fn e0_by_horizon(log_rates: &DMatrix<f64>, grid: &AgeGrid, infant: InfantRule) -> Result<Vec<f64>> {
    (0..log_rates.nrows())
        .map(|h| {
            let m: Vec<f64> = log_rates.row(h).iter().map(|v| v.exp()).collect();
            life_expectancy(&m, grid, infant)
        })
        .collect()
}

/// Percentile summary of simulated life expectancies at one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct E0Summary {
    pub horizon: usize,
    pub median: f64,
    pub lo80: f64,
    pub hi80: f64,
    pub lo95: f64,
    pub hi95: f64,
}

/// `e0` per path and horizon (`B x H`) plus percentile intervals.
pub fn e0_distribution(paths: &[DMatrix<f64>], grid: &AgeGrid, infant: InfantRule) -> Result<(DMatrix<f64>, Vec<E0Summary>)> {
    let first = paths.first().ok_or_else(|| Error::Argument("no sample paths".into()))?;
    let h = first.nrows();
    if paths.iter().any(|p| p.shape() != first.shape()) {
        return Err(Error::Structure("sample paths differ in shape".into()));
    }
    let rows: Vec<Vec<f64>> = paths.par_iter().map(|p| e0_by_horizon(p, grid, infant)).collect::<Result<_>>()?;
    let draws = DMatrix::from_fn(paths.len(), h, |b, k| rows[b][k]);
    let summary = (0..h)
        .map(|k| {
            let mut col: Vec<f64> = draws.column(k).iter().copied().collect();
            col.sort_by(f64::total_cmp);
            E0Summary {
                horizon: k + 1,
                median: quantile(&col, 0.5),
                lo80: quantile(&col, 0.1),
                hi80: quantile(&col, 0.9),
                lo95: quantile(&col, 0.025),
                hi95: quantile(&col, 0.975),
            }
        })
        .collect();
    Ok((draws, summary))
}
