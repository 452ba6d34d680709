//! Every method here is a base curve plus weighted loading/score products,
//! with each score series extrapolated by its own univariate model. Factors
//! may be shared between populations (a common trend) or owned by one.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::ForecastSurface;
use crate::data::{AgeGrid, PopulationLabel};
use crate::error::{Error, Result};
use crate::fpca::{center, empirical_fpca};
use crate::ts::{FittedTsModel, ScoreForecast, ScoreModel};

#[derive(Debug, Clone)]
pub(crate) struct Factor {
    pub loadings: DVector<f64>,
    pub scores: Vec<f64>,
    pub model: Arc<dyn ScoreModel>,
}

#[derive(Debug, Clone)]
pub(crate) struct Member {
    pub label: PopulationLabel,
    pub base: DVector<f64>,
    /// `(factor index, weight)`
    pub terms: Vec<(usize, f64)>,
    /// Log rates the in-sample residual variance is measured against.
    pub observed: DMatrix<f64>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct FactorModel {
    pub factors: Vec<Factor>,
    pub members: Vec<Member>,
}

impl FactorModel {
    pub fn add_factor(&mut self, factor: Factor) -> usize {
        self.factors.push(factor);
        self.factors.len() - 1
    }

    pub fn fitted(&self, m: usize) -> DMatrix<f64> {
        let member = &self.members[m];
        let (n, p) = member.observed.shape();
        let mut out = DMatrix::from_fn(n, p, |_, i| member.base[i]);
        for &(k, w) in &member.terms {
            let f = &self.factors[k];
            for t in 0..n {
                for i in 0..p {
                    out[(t, i)] += w * f.loadings[i] * f.scores[t];
                }
            }
        }
        out
    }

    pub fn fit_scores(&self) -> Result<Vec<FittedTsModel>> {
        self.factors.par_iter().map(|f| f.model.fit(&f.scores)).collect()
    }

    /// Point forecasts with Gaussian standard errors that combine score
    /// forecast uncertainty (factors taken as independent) with the
    /// in-sample residual variance at each age.
    pub fn forecast(&self, method: &str, origin_year: i32, horizon: usize) -> Result<Vec<ForecastSurface>> {
        if horizon == 0 {
            return Err(Error::Argument("horizon must be at least 1".into()));
        }
        let fits = self.fit_scores()?;
        let fcs: Vec<ScoreForecast> = fits.iter().map(|m| m.forecast(horizon)).collect();
        self.members
            .iter()
            .enumerate()
            .map(|(m, member)| {
                let p = member.base.len();
                let resid = &member.observed - self.fitted(m);
                let n = resid.nrows() as f64;
                let resid_var: Vec<f64> = (0..p).map(|i| resid.column(i).iter().map(|e| e * e).sum::<f64>() / n).collect();
                let mut mean = DMatrix::from_fn(horizon, p, |_, i| member.base[i]);
                let mut var = DMatrix::from_fn(horizon, p, |_, i| resid_var[i]);
                for &(k, w) in &member.terms {
                    let load = &self.factors[k].loadings;
                    let fc = &fcs[k];
                    for h in 0..horizon {
                        for i in 0..p {
                            mean[(h, i)] += w * load[i] * fc.mean[h];
                            var[(h, i)] += (w * load[i] * fc.se[h]).powi(2);
                        }
                    }
                }
                if mean.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numerical(format!("{}: non-finite forecast", member.label)));
                }
                Ok(ForecastSurface {
                    method: method.to_string(),
                    population: member.label.clone(),
                    origin_year,
                    mean,
                    sd: var.map(f64::sqrt),
                })
            })
            .collect()
    }
}

/// Mean curve plus retained principal components of one surface. Returns the
/// mean and the indices of the added factors.
pub(crate) fn add_fpca_factors(
    model: &mut FactorModel,
    surface: &DMatrix<f64>,
    grid: &AgeGrid,
    threshold: f64,
    score_model: &Arc<dyn ScoreModel>,
) -> Result<(DVector<f64>, Vec<usize>)> {
    let (mu, centered) = center(surface)?;
    let sys = empirical_fpca(&centered, grid, threshold)?;
    let ids = (0..sys.len())
        .map(|k| {
            model.add_factor(Factor {
                loadings: sys.eigenfunctions.row(k).transpose(),
                scores: sys.scores.column(k).iter().copied().collect(),
                model: Arc::clone(score_model),
            })
        })
        .collect();
    Ok((mu, ids))
}

/// First singular pair of a centred matrix as `(loadings, scores)` with the
/// loadings summing to one. When the loadings nearly cancel, they are scaled
/// to unit length instead, with the largest entry positive. `source` is the
/// magnitude of the data the matrix was derived from; variation at its
/// round-off level counts as none.
pub(crate) fn leading_pair(centered: &DMatrix<f64>, source: f64) -> Result<(DVector<f64>, Vec<f64>)> {
    let scale = centered.amax();
    if !(scale > 64.0 * f64::EPSILON * source) || !scale.is_finite() {
        return Err(Error::Degenerate("matrix has no variation".into()));
    }
    let svd = centered.clone().svd(true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let k = svd.singular_values.imax();
    let s = svd.singular_values[k];
    if s <= 1e-12 * scale * (centered.nrows() * centered.ncols()) as f64 {
        return Err(Error::Degenerate("leading singular value is zero".into()));
    }
    let v: DVector<f64> = vt.row(k).transpose();
    let sum: f64 = v.sum();
    let norm = if sum.abs() >= 1e-3 * v.lp_norm(1) {
        sum
    } else {
        let big = v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(1.0);
        big.signum()
    };
    let loadings = &v / norm;
    let scores = u.column(k).iter().map(|x| x * s * norm).collect();
    Ok((loadings, scores))
}
