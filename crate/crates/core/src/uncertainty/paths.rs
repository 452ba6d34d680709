use std::sync::Arc;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::gibbs::{GibbsConfig, GibbsData, PosteriorDraws};
use crate::data::PopulationLabel;
use crate::error::{Error, Result};
use crate::rng;
use crate::ts::{FittedTsModel, ScoreForecast, ScoreModel};

/// Simulated future log-rate surfaces, `paths[population][draw]` of shape `H x p`.
#[derive(Debug, Clone)]
pub struct SamplePaths {
    pub labels: Vec<PopulationLabel>,
    pub paths: Vec<Vec<DMatrix<f64>>>,
}

impl SamplePaths {
    pub fn n_paths(&self) -> usize {
        self.paths.first().map_or(0, Vec::len)
    }

    pub fn get(&self, label: &PopulationLabel) -> Option<&[DMatrix<f64>]> {
        self.labels.iter().position(|l| l == label).map(|j| self.paths[j].as_slice())
    }

    pub fn extend(&mut self, other: SamplePaths) {
        self.labels.extend(other.labels);
        self.paths.extend(other.paths);
    }
}

fn column(m: &DMatrix<f64>, k: usize) -> Vec<f64> {
    m.column(k).iter().copied().collect()
}

fn score_forecast(
    model: &Arc<dyn ScoreModel>,
    fixed: Option<&FittedTsModel>,
    series: &[f64],
    horizon: usize,
) -> Result<ScoreForecast> {
    let fit = match fixed {
        Some(f) => f.with_series(series)?,
        None => model.fit(series)?,
    };
    Ok(fit.forecast(horizon))
}

/// One path per retained draw. The score series of the draw are extrapolated
/// with simulated innovations, then the error and smoothing noise of the
/// draw are added at every future cell.
pub fn simulate_paths(
    data: &GibbsData,
    post: &PosteriorDraws,
    model: &Arc<dyn ScoreModel>,
    horizon: usize,
    cfg: &GibbsConfig,
) -> Result<SamplePaths> {
    if horizon == 0 {
        return Err(Error::Argument("horizon must be at least 1".into()));
    }
    if post.draws.is_empty() {
        return Err(Error::Argument("no posterior draws".into()));
    }
    let j = data.labels.len();
    let p = data.n_ages();
    let fixed: Option<(Vec<FittedTsModel>, Vec<Vec<FittedTsModel>>)> = if cfg.refit_per_draw {
        None
    } else {
        let common = (0..data.common.nrows()).map(|k| model.fit(&column(&data.common_scores, k))).collect::<Result<_>>()?;
        let specific = (0..j)
            .map(|m| (0..data.specific[m].nrows()).map(|l| model.fit(&column(&data.specific_scores[m], l))).collect())
            .collect::<Result<_>>()?;
        Some((common, specific))
    };
    let per_draw: Vec<Vec<DMatrix<f64>>> = post
        .draws
        .par_iter()
        .enumerate()
        .map(|(b, d)| {
            let mut rng = rng::stream(cfg.seed, &[0x9a75, b as u64]);
            let mut common_part: DMatrix<f64> = DMatrix::zeros(horizon, p);
            for k in 0..data.common.nrows() {
                let fc = score_forecast(model, fixed.as_ref().map(|f| &f.0[k]), &column(&d.beta, k), horizon)?;
                let path = fc.sample_path(&mut rng);
                for h in 0..horizon {
                    for i in 0..p {
                        common_part[(h, i)] += path[h] * data.common[(k, i)];
                    }
                }
            }
            (0..j)
                .map(|m| {
                    let mut out: DMatrix<f64> = DMatrix::from_fn(horizon, p, |h, i| data.base[m][i] + common_part[(h, i)]);
                    for l in 0..data.specific[m].nrows() {
                        let fc = score_forecast(model, fixed.as_ref().map(|f| &f.1[m][l]), &column(&d.gamma[m], l), horizon)?;
                        let path = fc.sample_path(&mut rng);
                        for h in 0..horizon {
                            for i in 0..p {
                                out[(h, i)] += path[h] * data.specific[m][(l, i)];
                            }
                        }
                    }
                    let sd = d.sigma2[m].sqrt();
                    for h in 0..horizon {
                        for i in 0..p {
                            let e: f64 = StandardNormal.sample(&mut rng);
                            let s: f64 = StandardNormal.sample(&mut rng);
                            out[(h, i)] += sd * e + d.delta2[m][i].sqrt() * s;
                        }
                    }
                    if out.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Numerical(format!("{}: non-finite sample path", data.labels[m])));
                    }
                    Ok(out)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let paths = (0..j).map(|m| per_draw.iter().map(|d| d[m].clone()).collect()).collect();
    Ok(SamplePaths { labels: data.labels.clone(), paths })
}
