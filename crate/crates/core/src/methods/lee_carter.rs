use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::factor::{leading_pair, Factor, FactorModel, Member};
use super::{ForecastMethod, ForecastSurface, MethodInput};
use crate::error::{Error, Result};
use crate::ts::{RandomWalkModel, ScoreModel};

/// `log m = a + b k`, with `sum b = 1` and `sum k = 0`.
#[derive(Debug, Clone)]
pub struct LeeCarterFit {
    pub a: DVector<f64>,
    pub b: DVector<f64>,
    pub k: Vec<f64>,
}

pub fn fit_lee_carter(log_rates: &DMatrix<f64>) -> Result<LeeCarterFit> {
    let (n, p) = log_rates.shape();
    if n < 3 {
        return Err(Error::Structure(format!("Lee-Carter needs at least 3 years, got {n}")));
    }
    if log_rates.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("log rates contain non-finite values".into()));
    }
    let a: DVector<f64> = log_rates.row_mean().transpose();
    let centered = DMatrix::from_fn(n, p, |t, i| log_rates[(t, i)] - a[i]);
    let (b, k) = leading_pair(&centered, log_rates.amax()).map_err(|e| match e {
        Error::Degenerate(_) => Error::Degenerate("age pattern b is undefined for a surface with no variation".into()),
        other => other,
    })?;
    Ok(LeeCarterFit { a, b, k })
}

/// Separate Lee-Carter fit per population, index extrapolated by a random
/// walk with drift.
#[derive(Debug, Clone, Copy, Default)]
pub struct LeeCarter;

pub(crate) fn lee_carter_model(input: &MethodInput) -> Result<FactorModel> {
    let rwd: Arc<dyn ScoreModel> = Arc::new(RandomWalkModel);
    let mut model = FactorModel::default();
    for label in input.targets() {
        let y = &input.surface(&label)?.observed;
        let member = match fit_lee_carter(y) {
            Ok(fit) => {
                let id = model.add_factor(Factor { loadings: fit.b, scores: fit.k, model: Arc::clone(&rwd) });
                Member { label, base: fit.a, terms: vec![(id, 1.0)], observed: y.clone() }
            }
            Err(Error::Degenerate(msg)) => {
                log::warn!("{label}: {msg}; forecasting the mean curve");
                Member { label, base: y.row_mean().transpose(), terms: Vec::new(), observed: y.clone() }
            }
            Err(e) => return Err(e),
        };
        model.members.push(member);
    }
    Ok(model)
}

impl ForecastMethod for LeeCarter {
    fn name(&self) -> &'static str {
        "lee_carter"
    }

    fn label(&self) -> String {
        "Lee-Carter".into()
    }

    fn forecast(&self, input: &MethodInput, horizon: usize) -> Result<Vec<ForecastSurface>> {
        lee_carter_model(input)?.forecast(&self.label(), input.last_year(), horizon)
    }
}
