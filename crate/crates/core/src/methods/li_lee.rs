use std::sync::Arc;

use nalgebra::DMatrix;

use super::factor::{leading_pair, Factor, FactorModel, Member};
use super::lee_carter::fit_lee_carter;
use super::{ForecastMethod, ForecastSurface, MethodInput};
use crate::error::{Error, Result};
use crate::ts::{Ar1Model, RandomWalkModel, ScoreModel};

/// Common Lee-Carter factor from the aggregate (random walk with drift) plus
/// one residual factor per population (AR(1)).
#[derive(Debug, Clone, Copy, Default)]
pub struct LiLee;

fn li_lee_model(input: &MethodInput) -> Result<FactorModel> {
    let rwd: Arc<dyn ScoreModel> = Arc::new(RandomWalkModel);
    let ar1: Arc<dyn ScoreModel> = Arc::new(Ar1Model);
    let mut model = FactorModel::default();
    for group in input.groups() {
        let total = group
            .aggregate
            .ok_or_else(|| Error::Structure(format!("group '{}' has no aggregate series", group.name)))?;
        if group.members.len() < 2 {
            return Err(Error::Structure(format!("group '{}' needs at least 2 populations", group.name)));
        }
        let common = fit_lee_carter(&input.surface(total)?.observed)?;
        let id = model.add_factor(Factor { loadings: common.b.clone(), scores: common.k.clone(), model: Arc::clone(&rwd) });
        for label in group.members {
            let y = &input.surface(label)?.observed;
            let (n, p) = y.shape();
            let base = y.row_mean().transpose();
            let resid = DMatrix::from_fn(n, p, |t, i| y[(t, i)] - base[i] - common.b[i] * common.k[t]);
            let mut terms = vec![(id, 1.0)];
            match leading_pair(&resid, y.amax()) {
                Ok((loadings, scores)) => {
                    terms.push((model.add_factor(Factor { loadings, scores, model: Arc::clone(&ar1) }), 1.0));
                }
                Err(Error::Degenerate(_)) => log::debug!("{label}: no residual variation"),
                Err(e) => return Err(e),
            }
            model.members.push(Member { label: label.clone(), base, terms, observed: y.clone() });
        }
    }
    Ok(model)
}

impl ForecastMethod for LiLee {
    fn name(&self) -> &'static str {
        "li_lee"
    }

    fn label(&self) -> String {
        "Li-Lee".into()
    }

    fn forecast(&self, input: &MethodInput, horizon: usize) -> Result<Vec<ForecastSurface>> {
        li_lee_model(input)?.forecast(&self.label(), input.last_year(), horizon)
    }
}
