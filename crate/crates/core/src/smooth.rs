//! Weighted L1 penalized smoothing of log mortality curves with a monotone
//! constraint at older ages.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::data::{AgeGrid, MortalityDataset, PopulationLabel};
use crate::error::{Error, Result};
use crate::lp;

pub const DEFAULT_MONOTONE_FROM: f64 = 65.0;

/// Variance of the observed log rate under a Poisson death count:
/// `1 / (m * N)` per cell.
pub fn log_rate_variance(rates: &DMatrix<f64>, exposures: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if rates.shape() != exposures.shape() {
        return Err(Error::Structure(format!("rates {:?} vs exposures {:?}", rates.shape(), exposures.shape())));
    }
    let mut out = DMatrix::zeros(rates.nrows(), rates.ncols());
    for t in 0..rates.nrows() {
        for i in 0..rates.ncols() {
            let (m, n) = (rates[(t, i)], exposures[(t, i)]);
            if !(m > 0.0 && n > 0.0 && m.is_finite() && n.is_finite()) {
                return Err(Error::Domain(format!("cell (year {t}, age {i}) has rate {m} and exposure {n}")));
            }
            out[(t, i)] = 1.0 / (m * n);
        }
    }
    Ok(out)
}

fn slopes(theta: &[f64], ages: &[f64]) -> Vec<f64> {
    theta.windows(2).zip(ages.windows(2)).map(|(t, a)| (t[1] - t[0]) / (a[1] - a[0])).collect()
}

fn monotone_start(ages: &[f64], from: Option<f64>) -> usize {
    from.and_then(|a| ages.iter().position(|&x| x >= a)).unwrap_or(ages.len())
}

/// `sum w|y - theta| + alpha * sum |slope_{i+1} - slope_i|`.
pub fn smoothing_objective(y: &[f64], w: &[f64], ages: &[f64], alpha: f64, theta: &[f64]) -> f64 {
    let fit: f64 = y.iter().zip(w).zip(theta).map(|((y, w), t)| w * (y - t).abs()).sum();
    let s = slopes(theta, ages);
    let rough: f64 = s.windows(2).map(|d| (d[1] - d[0]).abs()).sum();
    fit + alpha * rough
}

/// Fits one curve. Ages at or above `monotone_from` are constrained to be
/// non-decreasing in the result.
pub fn smooth_year(y: &[f64], w: &[f64], grid: &AgeGrid, alpha: f64, monotone_from: Option<f64>) -> Result<Vec<f64>> {
    let ages = grid.ages();
    let p = ages.len();
    if p < 3 || y.len() != p || w.len() != p {
        return Err(Error::Argument(format!("smooth_year needs p >= 3 matching inputs (grid {p}, y {}, w {})", y.len(), w.len())));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Argument(format!("alpha must be finite and >= 0, got {alpha}")));
    }
    if w.iter().any(|&v| !(v > 0.0 && v.is_finite())) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("weights must be positive and data finite".into()));
    }

    // Variables: r+ (p), r- (p), s+ (p-2), s- (p-2), one slack per monotone pair.
    // theta = y - r+ + r-.
    let i0 = monotone_start(ages, monotone_from);
    let pairs: Vec<usize> = (i0..p.saturating_sub(1)).collect();
    let q = p - 2;
    let n = 2 * p + 2 * q + pairs.len();
    let m = q + pairs.len();
    let h: Vec<f64> = ages.windows(2).map(|a| a[1] - a[0]).collect();

    let mut c = vec![0.0; n];
    c[..p].copy_from_slice(w);
    c[p..2 * p].copy_from_slice(w);
    c[2 * p..2 * p + 2 * q].iter_mut().for_each(|v| *v = alpha);

    let mut a = DMatrix::zeros(m, n);
    let mut b = vec![0.0; m];
    for j in 0..q {
        let d = [(j, 1.0 / h[j]), (j + 1, -1.0 / h[j + 1] - 1.0 / h[j]), (j + 2, 1.0 / h[j + 1])];
        for &(i, coef) in &d {
            a[(j, i)] = -coef;
            a[(j, p + i)] = coef;
            b[j] -= coef * y[i];
        }
        a[(j, 2 * p + j)] = -1.0;
        a[(j, 2 * p + q + j)] = 1.0;
    }
    for (k, &i) in pairs.iter().enumerate() {
        let row = q + k;
        a[(row, i + 1)] = 1.0;
        a[(row, p + i + 1)] = -1.0;
        a[(row, i)] = -1.0;
        a[(row, p + i)] = 1.0;
        a[(row, 2 * p + 2 * q + k)] = 1.0;
        b[row] = y[i + 1] - y[i];
    }

    let max_iter = 50 * (n + m);
    let sol = lp::minimize(&c, &a, &b, max_iter).map_err(|e| match e {
        Error::NonConvergence { iterations, residual, best } => {
            let theta = (0..p).map(|i| y[i] - best[i] + best[p + i]).collect();
            Error::NonConvergence { iterations, residual, best: theta }
        }
        other => other,
    })?;
    let mut theta: Vec<f64> = (0..p).map(|i| y[i] - sol.x[i] + sol.x[p + i]).collect();
    for &i in &pairs {
        if theta[i + 1] < theta[i] {
            theta[i + 1] = theta[i];
        }
    }
    Ok(theta)
}

/// How the penalty weight is chosen for a population.
#[derive(Debug, Clone, PartialEq)]
pub enum AlphaPolicy {
    Fixed(f64),
    /// Pick from the grid by neighbour-year cross-validation.
    CrossValidated(Vec<f64>),
}

impl AlphaPolicy {
    pub fn default_grid() -> Vec<f64> {
        (0..10).map(|k| 10f64.powf(-3.0 + 5.0 * k as f64 / 9.0)).collect()
    }
}

impl Default for AlphaPolicy {
    fn default() -> Self {
        AlphaPolicy::CrossValidated(Self::default_grid())
    }
}

impl FromStr for AlphaPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Self::default());
        }
        match s.parse::<f64>() {
            Ok(v) if v >= 0.0 && v.is_finite() => Ok(AlphaPolicy::Fixed(v)),
            _ => Err(Error::Config(format!("alpha must be 'auto' or a non-negative number, got '{s}'"))),
        }
    }
}

impl fmt::Display for AlphaPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlphaPolicy::Fixed(v) => write!(f, "{v}"),
            AlphaPolicy::CrossValidated(_) => f.write_str("auto"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingConfig {
    pub alpha: AlphaPolicy,
    pub monotone_from: Option<f64>,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self { alpha: AlphaPolicy::default(), monotone_from: Some(DEFAULT_MONOTONE_FROM) }
    }
}

/// Smoothed log mortality for one population, `n_years x n_ages`.
#[derive(Debug, Clone)]
pub struct SmoothedSurface {
    pub label: PopulationLabel,
    pub grid: AgeGrid,
    pub first_year: i32,
    /// Observed log rates.
    pub observed: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub delta2: DMatrix<f64>,
    pub alpha: f64,
}

impl SmoothedSurface {
    /// A surface that takes the observed log rates as already smooth.
    pub fn unsmoothed(
        label: PopulationLabel,
        grid: AgeGrid,
        first_year: i32,
        log_rates: DMatrix<f64>,
        delta2: DMatrix<f64>,
    ) -> Result<Self> {
        if log_rates.ncols() != grid.len() || delta2.shape() != log_rates.shape() {
            return Err(Error::Structure(format!("{label}: surface shape does not match the grid")));
        }
        Ok(Self { label, grid, first_year, observed: log_rates.clone(), f: log_rates, delta2, alpha: 0.0 })
    }

    pub fn n_years(&self) -> usize {
        self.f.nrows()
    }

    pub fn weights(&self) -> DMatrix<f64> {
        self.delta2.map(f64::recip)
    }

    pub fn head(&self, n: usize) -> Self {
        Self {
            label: self.label.clone(),
            grid: self.grid.clone(),
            first_year: self.first_year,
            observed: self.observed.rows(0, n).into_owned(),
            f: self.f.rows(0, n).into_owned(),
            delta2: self.delta2.rows(0, n).into_owned(),
            alpha: self.alpha,
        }
    }
}

fn normalized(w: &[f64]) -> Vec<f64> {
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    w.iter().map(|v| v / mean).collect()
}

fn fit_all(y: &DMatrix<f64>, w: &DMatrix<f64>, grid: &AgeGrid, alpha: f64, mono: Option<f64>) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = (0..y.nrows())
        .into_par_iter()
        .map(|t| {
            let yt: Vec<f64> = y.row(t).iter().copied().collect();
            let wt = normalized(&w.row(t).iter().copied().collect::<Vec<_>>());
            smooth_year(&yt, &wt, grid, alpha, mono)
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(y.nrows(), y.ncols(), |t, i| rows[t][i]))
}

fn neighbour_cv_score(y: &DMatrix<f64>, w: &DMatrix<f64>, fitted: &DMatrix<f64>) -> f64 {
    let n = y.nrows();
    let mut score = 0.0;
    for t in 0..n {
        let nb: Vec<usize> = [t.checked_sub(1), (t + 1 < n).then_some(t + 1)].into_iter().flatten().collect();
        let wt = normalized(&w.row(t).iter().copied().collect::<Vec<_>>());
        for i in 0..y.ncols() {
            let pred = nb.iter().map(|&s| fitted[(s, i)]).sum::<f64>() / nb.len() as f64;
            score += wt[i] * (y[(t, i)] - pred).abs();
        }
    }
    score
}

/// Smooths every year of one population. Weights are the inverse log-rate
/// variances, rescaled per year to mean one.
pub fn smooth_surface(dataset: &MortalityDataset, label: &PopulationLabel, config: &SmoothingConfig) -> Result<SmoothedSurface> {
    let pop = dataset.require(label)?;
    let delta2 = log_rate_variance(&pop.rates, &pop.exposures)?;
    let y = pop.log_rates();
    let w = delta2.map(f64::recip);
    let grid = dataset.grid();
    let (alpha, f) = match &config.alpha {
        AlphaPolicy::Fixed(a) => (*a, fit_all(&y, &w, grid, *a, config.monotone_from)?),
        AlphaPolicy::CrossValidated(candidates) => {
            if candidates.is_empty() {
                return Err(Error::Config("alpha grid is empty".into()));
            }
            if y.nrows() < 2 {
                return Err(Error::Structure("cross-validated alpha needs at least 2 years".into()));
            }
            let mut best: Option<(f64, f64, DMatrix<f64>)> = None;
            for &a in candidates {
                let fitted = fit_all(&y, &w, grid, a, config.monotone_from)?;
                let score = neighbour_cv_score(&y, &w, &fitted);
                let better = match &best {
                    None => true,
                    Some((ba, bs, _)) => score < *bs - 1e-12 * bs.abs() || ((score - bs).abs() <= 1e-12 * bs.abs() && a > *ba),
                };
                if better {
                    best = Some((a, score, fitted));
                }
            }
            let (a, _, f) = best.expect("non-empty grid");
            log::debug!("{label}: cross-validated alpha {a}");
            (a, f)
        }
    };
    Ok(SmoothedSurface { label: label.clone(), grid: grid.clone(), first_year: dataset.first_year(), observed: y, f, delta2, alpha })
}

#[cfg(test)]
mod tests {
    use super::*;
    use minilp::{ComparisonOp, OptimizationDirection, Problem};
    use proptest::prelude::*;

    /// Independent oracle: free theta with epigraph variables for both absolute
    /// value terms, solved by a third-party LP solver.
    fn oracle(y: &[f64], w: &[f64], ages: &[f64], alpha: f64, mono: Option<f64>) -> f64 {
        let p = y.len();
        let mut pb = Problem::new(OptimizationDirection::Minimize);
        let th: Vec<_> = (0..p).map(|_| pb.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY))).collect();
        for i in 0..p {
            let e = pb.add_var(w[i], (0.0, f64::INFINITY));
            pb.add_constraint(&[(e, 1.0), (th[i], 1.0)], ComparisonOp::Ge, y[i]);
            pb.add_constraint(&[(e, 1.0), (th[i], -1.0)], ComparisonOp::Ge, -y[i]);
        }
        for j in 0..p - 2 {
            let (h0, h1) = (ages[j + 1] - ages[j], ages[j + 2] - ages[j + 1]);
            let g = pb.add_var(alpha, (0.0, f64::INFINITY));
            let expr = [(th[j], 1.0 / h0), (th[j + 1], -1.0 / h0 - 1.0 / h1), (th[j + 2], 1.0 / h1)];
            let mut plus = vec![(g, 1.0)];
            let mut minus = vec![(g, 1.0)];
            for &(v, c) in &expr {
                plus.push((v, -c));
                minus.push((v, c));
            }
            pb.add_constraint(&plus, ComparisonOp::Ge, 0.0);
            pb.add_constraint(&minus, ComparisonOp::Ge, 0.0);
        }
        if let Some(from) = mono {
            for i in 0..p - 1 {
                if ages[i] >= from {
                    pb.add_constraint(&[(th[i + 1], 1.0), (th[i], -1.0)], ComparisonOp::Ge, 0.0);
                }
            }
        }
        pb.solve().unwrap().objective()
    }

    fn grid(p: usize, first: u32) -> AgeGrid {
        AgeGrid::single_years(first, first + p as u32 - 1, false).unwrap()
    }

    #[test]
    fn variance_examples() {
        let v = log_rate_variance(&DMatrix::from_row_slice(1, 2, &[0.01, 0.5]), &DMatrix::from_row_slice(1, 2, &[1e4, 2.0])).unwrap();
        assert!((v[(0, 0)] - 0.01).abs() < 1e-15);
        assert_eq!(v[(0, 1)], 1.0);
    }

    #[test]
    fn variance_falls_as_exposure_grows() {
        let m = DMatrix::from_element(3, 3, 0.02);
        let n = DMatrix::from_row_slice(3, 3, &[100., 200., 400., 100., 200., 400., 100., 200., 400.]);
        let v = log_rate_variance(&m, &n).unwrap();
        // 1/(0.02*100) = 0.5, 1/(0.02*200) = 0.25, 1/(0.02*400) = 0.125
        for t in 0..3 {
            assert_eq!([v[(t, 0)], v[(t, 1)], v[(t, 2)]], [0.5, 0.25, 0.125]);
        }
    }

    #[test]
    fn nonpositive_cell_is_a_domain_error() {
        let m = DMatrix::from_row_slice(1, 2, &[0.01, 0.0]);
        let n = DMatrix::from_element(1, 2, 10.0);
        assert!(matches!(log_rate_variance(&m, &n), Err(Error::Domain(_))));
    }

    #[test]
    fn zero_alpha_interpolates() {
        let g = grid(8, 60);
        let y = [-5.0, -4.2, -4.5, -3.9, -3.1, -2.8, -2.0, -1.2];
        let w = [1.0, 2.0, 0.5, 1.5, 3.0, 1.0, 0.7, 2.2];
        let f = smooth_year(&y, &w, &g, 0.0, Some(65.0)).unwrap();
        assert_eq!(f, y);
    }

    #[test]
    fn large_alpha_gives_a_line() {
        let g = grid(10, 60);
        let y: Vec<f64> = (0..10).map(|i| -6.0 + 0.02 * (i * i) as f64).collect();
        let f = smooth_year(&y, &[1.0; 10], &g, 1e4, Some(65.0)).unwrap();
        let curv: f64 = f.windows(3).map(|v| (v[2] - 2.0 * v[1] + v[0]).abs()).fold(0.0, f64::max);
        assert!(curv <= 1e-6, "curvature {curv}");
    }

    #[test]
    fn spike_at_80_respects_monotonicity() {
        let g = grid(10, 75);
        let mut y: Vec<f64> = (0..10).map(|i| -3.0 + 0.1 * i as f64).collect();
        y[5] -= 0.8;
        let w = [1.0; 10];
        let f = smooth_year(&y, &w, &g, 0.05, Some(65.0)).unwrap();
        assert!(f[5] >= f[4]);
        let ours = smoothing_objective(&y, &w, g.ages(), 0.05, &f);
        assert!((ours - oracle(&y, &w, g.ages(), 0.05, Some(65.0))).abs() < 1e-6);
    }

    #[test]
    fn noisy_low_weight_cell_is_pulled_harder() {
        let g = grid(9, 0);
        let base: Vec<f64> = (0..9).map(|i| -4.0 + 0.1 * i as f64).collect();
        let mut y = base.clone();
        y[4] += 0.3;
        let mut w = vec![1.0; 9];
        w[4] = 0.2;
        let low = smooth_year(&y, &w, &g, 0.5, None).unwrap();
        w[4] = 5.0;
        let high = smooth_year(&y, &w, &g, 0.5, None).unwrap();
        assert!((low[4] - base[4]).abs() < (high[4] - base[4]).abs());
    }

    #[test]
    fn constant_rates_smooth_to_constant() {
        let g = AgeGrid::single_years(0, 5, true).unwrap();
        let label: PopulationLabel = "X:female".parse().unwrap();
        let d = MortalityDataset::new(
            g,
            2000,
            vec![(label.clone(), DMatrix::from_element(4, 6, 0.03), DMatrix::from_element(4, 6, 500.0))],
            None,
        )
        .unwrap();
        let s = smooth_surface(&d, &label, &SmoothingConfig::default()).unwrap();
        assert!(s.f.iter().all(|v| (v - 0.03f64.ln()).abs() < 1e-12));
    }

    #[test]
    fn alpha_policy_parses() {
        assert_eq!("auto".parse::<AlphaPolicy>().unwrap(), AlphaPolicy::default());
        assert_eq!("2.5".parse::<AlphaPolicy>().unwrap(), AlphaPolicy::Fixed(2.5));
        assert!("-1".parse::<AlphaPolicy>().is_err());
        let g = AlphaPolicy::default_grid();
        assert!((g[0] - 1e-3).abs() < 1e-15 && (g[9] - 1e2).abs() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn matches_oracle_and_stays_monotone(
            p in 4usize..=12,
            first in 55u32..70,
            seed_y in prop::collection::vec(-1.0f64..1.0, 12),
            seed_w in prop::collection::vec(0.1f64..5.0, 12),
            alpha in 0.0f64..3.0,
        ) {
            let g = grid(p, first);
            let y: Vec<f64> = (0..p).map(|i| -5.0 + 0.08 * i as f64 + 0.3 * seed_y[i]).collect();
            let w = &seed_w[..p];
            let f = smooth_year(&y, w, &g, alpha, Some(65.0)).unwrap();
            let i0 = g.index_at_or_above(65.0).unwrap_or(p);
            for i in i0..p.saturating_sub(1) {
                prop_assert!(f[i] - f[i + 1] <= 1e-9);
            }
            let ours = smoothing_objective(&y, w, g.ages(), alpha, &f);
            let theirs = oracle(&y, w, g.ages(), alpha, Some(65.0));
            prop_assert!((ours - theirs).abs() <= 1e-6, "ours {ours} oracle {theirs}");
        }

        #[test]
        fn single_cell_perturbation_never_helps(
            seed_y in prop::collection::vec(-1.0f64..1.0, 8),
            alpha in 0.0f64..2.0,
            idx in 0usize..8,
        ) {
            let g = grid(8, 0);
            let y: Vec<f64> = (0..8).map(|i| -4.0 + 0.1 * i as f64 + 0.2 * seed_y[i]).collect();
            let w = [1.0; 8];
            let f = smooth_year(&y, &w, &g, alpha, None).unwrap();
            let base = smoothing_objective(&y, &w, g.ages(), alpha, &f);
            for d in [-1e-3, 1e-3] {
                let mut g2 = f.clone();
                g2[idx] += d;
                prop_assert!(smoothing_objective(&y, &w, g.ages(), alpha, &g2) >= base - 1e-9);
            }
        }
    }
}
