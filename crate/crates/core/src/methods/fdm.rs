use std::sync::Arc;

use nalgebra::DMatrix;

use super::factor::{add_fpca_factors, FactorModel, Member};
use super::{ForecastMethod, ForecastSurface, MethodInput, MethodSettings};
use crate::data::Sex;
use crate::error::{Error, Result};
use crate::ts::{score_model, ArfimaModel, ScoreModel};

fn suffix(model: &dyn ScoreModel) -> String {
    if model.name() == "arima" { String::new() } else { format!(" ({})", model.name()) }
}

/// Functional principal components per population, fitted independently.
#[derive(Debug, Clone)]
pub struct IndependentFdm {
    threshold: f64,
    scores: Arc<dyn ScoreModel>,
}

impl IndependentFdm {
    pub fn new(settings: &MethodSettings) -> Result<Self> {
        Ok(Self { threshold: settings.p1, scores: score_model(&settings.score_model)? })
    }
}

impl ForecastMethod for IndependentFdm {
    fn name(&self) -> &'static str {
        "independent_fdm"
    }

    fn label(&self) -> String {
        format!("Independent FDM{}", suffix(self.scores.as_ref()))
    }

    fn forecast(&self, input: &MethodInput, horizon: usize) -> Result<Vec<ForecastSurface>> {
        let mut model = FactorModel::default();
        for label in input.targets() {
            let s = input.surface(&label)?;
            let (base, ids) = add_fpca_factors(&mut model, &s.f, input.grid(), self.threshold, &self.scores)?;
            let terms = ids.into_iter().map(|k| (k, 1.0)).collect();
            model.members.push(Member { label, base, terms, observed: s.observed.clone() });
        }
        model.forecast(&self.label(), input.last_year(), horizon)
    }
}

/// Functional models of the half-sum and half-difference of female and male
/// log rates. The half-difference scores use a long-memory stationary model,
/// so forecast sex gaps stay bounded.
#[derive(Debug, Clone)]
pub struct ProductRatio {
    threshold: f64,
    product: Arc<dyn ScoreModel>,
    ratio: Arc<dyn ScoreModel>,
}

impl ProductRatio {
    pub fn new(settings: &MethodSettings) -> Result<Self> {
        Ok(Self { threshold: settings.p1, product: score_model(&settings.score_model)?, ratio: Arc::new(ArfimaModel) })
    }
}

impl ForecastMethod for ProductRatio {
    fn name(&self) -> &'static str {
        "product_ratio"
    }

    fn label(&self) -> String {
        format!("Product-ratio{}", suffix(self.product.as_ref()))
    }

    fn forecast(&self, input: &MethodInput, horizon: usize) -> Result<Vec<ForecastSurface>> {
        let mut model = FactorModel::default();
        for group in input.groups() {
            let find = |sex: Sex| -> Result<_> {
                let hits: Vec<_> = group.members.iter().filter(|l| l.sex == sex).collect();
                match hits.as_slice() {
                    [one] => input.surface(one),
                    _ => Err(Error::Structure(format!(
                        "product-ratio needs exactly one female and one male population in group '{}'",
                        group.name
                    ))),
                }
            };
            if group.members.len() != 2 {
                return Err(Error::Structure(format!("product-ratio group '{}' must hold exactly two populations", group.name)));
            }
            let (female, male) = (find(Sex::Female)?, find(Sex::Male)?);
            let product: DMatrix<f64> = (&female.f + &male.f) / 2.0;
            let ratio: DMatrix<f64> = (&female.f - &male.f) / 2.0;
            let (pm, pid) = add_fpca_factors(&mut model, &product, input.grid(), self.threshold, &self.product)?;
            let (rm, rid) = add_fpca_factors(&mut model, &ratio, input.grid(), self.threshold, &self.ratio)?;
            for (s, sign) in [(female, 1.0), (male, -1.0)] {
                let mut terms: Vec<(usize, f64)> = pid.iter().map(|&k| (k, 1.0)).collect();
                terms.extend(rid.iter().map(|&k| (k, sign)));
                model.members.push(Member { label: s.label.clone(), base: &pm + &rm * sign, terms, observed: s.observed.clone() });
            }
        }
        model.forecast(&self.label(), input.last_year(), horizon)
    }
}
