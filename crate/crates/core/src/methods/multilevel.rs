use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::factor::{Factor, FactorModel, Member};
use super::{ForecastMethod, ForecastSurface, MethodInput, MethodSettings};
use crate::data::{PopulationLabel, Sex};
use crate::error::{Error, Result};
use crate::fpca::{multilevel_decompose, MultilevelDecomposition};
use crate::ts::{score_model, ScoreModel};

/// Adds the factors of a decomposition with the given weight. Returns, per
/// population in decomposition order, its `mu + eta` and its terms.
fn add_decomposition(
    model: &mut FactorModel,
    dec: &MultilevelDecomposition,
    scores: &Arc<dyn ScoreModel>,
    weight: f64,
) -> Vec<(DVector<f64>, Vec<(usize, f64)>)> {
    let factor = |sys: &crate::fpca::EigenSystem, k: usize| Factor {
        loadings: sys.eigenfunctions.row(k).transpose(),
        scores: sys.scores.column(k).iter().copied().collect(),
        model: Arc::clone(scores),
    };
    let common: Vec<usize> = (0..dec.common.len()).map(|k| model.add_factor(factor(&dec.common, k))).collect();
    dec.populations
        .iter()
        .map(|c| {
            let mut terms: Vec<(usize, f64)> = common.iter().map(|&k| (k, weight)).collect();
            for l in 0..c.specific.len() {
                terms.push((model.add_factor(factor(&c.specific, l)), weight));
            }
            (&dec.mu + &c.eta, terms)
        })
        .collect()
}

/// `mu + eta^j + sum beta phi + sum gamma^j psi^j` for every population of a
/// fitted decomposition, with `eta` held fixed over the horizon. Returns
/// `horizon x p` log-rate forecasts in decomposition order.
pub fn multilevel_point_forecast(
    dec: &MultilevelDecomposition,
    scores: &Arc<dyn ScoreModel>,
    horizon: usize,
) -> Result<Vec<DMatrix<f64>>> {
    let mut model = FactorModel::default();
    for (c, (base, terms)) in dec.populations.iter().zip(add_decomposition(&mut model, dec, scores, 1.0)) {
        model.members.push(Member { label: c.label.clone(), base, terms, observed: c.data.clone() });
    }
    Ok(model.forecast("", 0, horizon)?.into_iter().map(|s| s.mean).collect())
}

#[derive(Debug, Clone)]
pub struct MultilevelFdm {
    p1: f64,
    p2: f64,
    scores: Arc<dyn ScoreModel>,
}

impl MultilevelFdm {
    pub fn new(settings: &MethodSettings) -> Result<Self> {
        Ok(Self { p1: settings.p1, p2: settings.p2, scores: score_model(&settings.score_model)? })
    }

    /// Decomposition of every group, in group order.
    pub fn decompose(&self, input: &MethodInput) -> Result<Vec<MultilevelDecomposition>> {
        input
            .groups()
            .iter()
            .map(|group| {
                let total = group
                    .aggregate
                    .ok_or_else(|| Error::Structure(format!("group '{}' has no aggregate series", group.name)))?;
                let members = group
                    .members
                    .iter()
                    .map(|l| Ok((l, &input.surface(l)?.f)))
                    .collect::<Result<Vec<_>>>()?;
                multilevel_decompose(&input.surface(total)?.f, &members, input.grid(), self.p1, self.p2)
            })
            .collect()
    }

    pub fn score_model(&self) -> &Arc<dyn ScoreModel> {
        &self.scores
    }
}

impl ForecastMethod for MultilevelFdm {
    fn name(&self) -> &'static str {
        "multilevel_fdm"
    }

    fn label(&self) -> String {
        format!("Multilevel FDM ({})", self.scores.name())
    }

    fn forecast(&self, input: &MethodInput, horizon: usize) -> Result<Vec<ForecastSurface>> {
        let mut model = FactorModel::default();
        for dec in self.decompose(input)? {
            for (c, (base, terms)) in dec.populations.iter().zip(add_decomposition(&mut model, &dec, &self.scores, 1.0)) {
                let observed = input.surface(&c.label)?.observed.clone();
                model.members.push(Member { label: c.label.clone(), base, terms, observed });
            }
        }
        model.forecast(&self.label(), input.last_year(), horizon)
    }

    fn as_multilevel(&self) -> Option<&MultilevelFdm> {
        Some(self)
    }
}

/// Two-level grouping (for example state, then sex). One decomposition per
/// state with the state aggregate as common trend, one per sex with the mean
/// across states as common trend; the forecast averages the two.
#[derive(Debug, Clone)]
pub struct HierarchicalFdm {
    p1: f64,
    p2: f64,
    scores: Arc<dyn ScoreModel>,
}

impl HierarchicalFdm {
    pub fn new(settings: &MethodSettings) -> Result<Self> {
        Ok(Self { p1: settings.p1, p2: settings.p2, scores: score_model(&settings.score_model)? })
    }

    fn model(&self, input: &MethodInput) -> Result<FactorModel> {
        let root = &input.hierarchy().root;
        if input.hierarchy().depth() != 2 || !root.members.is_empty() || root.children.iter().any(|c| c.members.is_empty()) {
            return Err(Error::Structure(
                "hierarchical forecasting needs a two-level hierarchy: a root whose children each hold populations".into(),
            ));
        }
        let mut model = FactorModel::default();
        let mut members: BTreeMap<PopulationLabel, (DVector<f64>, Vec<(usize, f64)>)> = BTreeMap::new();
        let mean_of = |labels: &[&PopulationLabel]| -> Result<DMatrix<f64>> {
            let mut acc = input.surface(labels[0])?.f.clone();
            for l in &labels[1..] {
                acc += &input.surface(l)?.f;
            }
            Ok(acc / labels.len() as f64)
        };

        let mut add = |dec: MultilevelDecomposition, model: &mut FactorModel| {
            for (c, (base, terms)) in dec.populations.iter().zip(add_decomposition(model, &dec, &self.scores, 0.5)) {
                let entry = members.entry(c.label.clone()).or_insert_with(|| (base, Vec::new()));
                entry.1.extend(terms);
            }
        };

        let mut by_sex: BTreeMap<Sex, Vec<&PopulationLabel>> = BTreeMap::new();
        for state in &root.children {
            let labels: Vec<&PopulationLabel> = state.members.iter().collect();
            let aggregate = match &state.series {
                Some(s) => input.surface(s)?.f.clone(),
                None => mean_of(&labels)?,
            };
            let pops = labels.iter().map(|l| Ok((*l, &input.surface(l)?.f))).collect::<Result<Vec<_>>>()?;
            add(multilevel_decompose(&aggregate, &pops, input.grid(), self.p1, self.p2)?, &mut model);
            for l in labels {
                by_sex.entry(l.sex).or_default().push(l);
            }
        }
        for labels in by_sex.values() {
            let aggregate = mean_of(labels)?;
            let pops = labels.iter().map(|l| Ok((*l, &input.surface(l)?.f))).collect::<Result<Vec<_>>>()?;
            add(multilevel_decompose(&aggregate, &pops, input.grid(), self.p1, self.p2)?, &mut model);
        }
        for label in input.targets() {
            let (base, terms) = members.remove(&label).expect("every leaf is decomposed");
            model.members.push(Member { observed: input.surface(&label)?.observed.clone(), label, base, terms });
        }
        Ok(model)
    }

    /// In-sample fit `mu + (R + U + S + W) / 2` per target population.
    pub fn fitted(&self, input: &MethodInput) -> Result<Vec<(PopulationLabel, DMatrix<f64>)>> {
        let model = self.model(input)?;
        Ok(model.members.iter().enumerate().map(|(m, mem)| (mem.label.clone(), model.fitted(m))).collect())
    }
}

impl ForecastMethod for HierarchicalFdm {
    fn name(&self) -> &'static str {
        "hierarchical"
    }

    fn label(&self) -> String {
        format!("Hierarchical FDM ({})", self.scores.name())
    }

    fn forecast(&self, input: &MethodInput, horizon: usize) -> Result<Vec<ForecastSurface>> {
        self.model(input)?.forecast(&self.label(), input.last_year(), horizon)
    }
}
