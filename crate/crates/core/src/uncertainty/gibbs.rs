use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::Deserialize;
use statrs::function::gamma::ln_gamma;

use crate::data::PopulationLabel;
use crate::error::{Error, Result};
use crate::fpca::MultilevelDecomposition;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GibbsConfig {
    pub total_draws: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    pub seed: u64,
    /// Shape and rate of the Gamma prior on the error precision.
    pub alpha1: f64,
    pub alpha2: f64,
    /// Starting value of the age-precision hyperparameter, also the mean of
    /// its exponential prior.
    pub v_omega: f64,
    /// One error variance shared by all populations (otherwise one each).
    pub pooled_variance: bool,
    /// Refit the score models on every retained draw (otherwise fit once on
    /// the empirical scores and re-condition).
    pub refit_per_draw: bool,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            total_draws: 20_000,
            burn_in: 10_000,
            thin: 10,
            chains: 2,
            seed: 1,
            alpha1: 1e-3,
            alpha2: 1e-3,
            v_omega: 10.0,
            pooled_variance: true,
            refit_per_draw: true,
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.total_draws {
            return Err(Error::Config(format!("burn_in ({}) must be below total_draws ({})", self.burn_in, self.total_draws)));
        }
        if self.thin == 0 || self.chains == 0 {
            return Err(Error::Config("thin and chains must be at least 1".into()));
        }
        if self.retained_per_chain() == 0 {
            return Err(Error::Config("no draws would be retained".into()));
        }
        for (name, v) in [("alpha1", self.alpha1), ("alpha2", self.alpha2), ("v_omega", self.v_omega)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn retained_per_chain(&self) -> usize {
        self.total_draws.saturating_sub(self.burn_in) / self.thin
    }
}

/// Shape/rate parameters of a Gamma distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaParams {
    pub shape: f64,
    pub rate: f64,
}

impl GammaParams {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Gamma::new(self.shape, 1.0 / self.rate).expect("positive parameters").sample(rng)
    }
}

/// Mean and variance of a Normal full conditional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalParams {
    pub mean: f64,
    pub var: f64,
}

impl NormalParams {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.mean + self.var.sqrt() * z
    }
}

/// Error precision given `n_obs` residuals with sum of squares `ssr`.
pub fn precision_conditional(alpha1: f64, alpha2: f64, n_obs: usize, ssr: f64) -> GammaParams {
    GammaParams { shape: alpha1 + 0.5 * n_obs as f64, rate: alpha2 + 0.5 * ssr }
}

/// Score with prior `N(0, lambda)` observed through loadings. `info` is
/// `sum_j sum_i loading_i^2 / sigma2_j` and `cross` is
/// `sum_j sum_i loading_i r_ji / sigma2_j`, where `r` is the residual with
/// this score's own contribution added back. With equal variances this is
/// the usual shrinkage of the least-squares projection toward zero.
pub fn score_conditional(lambda: f64, info: f64, cross: f64) -> NormalParams {
    if !(lambda > 0.0) {
        return NormalParams { mean: 0.0, var: 0.0 };
    }
    let var = 1.0 / (1.0 / lambda + info);
    NormalParams { mean: var * cross, var }
}

/// Precision of the smoothing error at one age. The prior is Gamma with mean
/// one and `v` degrees of freedom, each of `n_obs` residuals has precision
/// `scale * omega`, and `ssr` is their sum of squares. With `n_obs = 1` and
/// `scale = 1` this has mean `(v + 1) / (ssr + v)` and `v + 1` degrees of
/// freedom.
pub fn omega_conditional(v: f64, scale: f64, n_obs: usize, ssr: f64) -> GammaParams {
    let dof = v + n_obs as f64;
    GammaParams { shape: 0.5 * dof, rate: 0.5 * (scale * ssr + v) }
}

/// Unnormalised log density of the age-precision hyperparameter given the
/// precisions, with an exponential prior of mean `prior_mean`.
pub fn v_log_density(v: f64, omega: &[f64], prior_mean: f64) -> f64 {
    if !(v > 0.0) {
        return f64::NEG_INFINITY;
    }
    let p = omega.len() as f64;
    let eta = 1.0 / prior_mean + 0.5 * omega.iter().map(|w| -w.ln() + w).sum::<f64>();
    0.5 * p * v * (0.5 * v).ln() - p * ln_gamma(0.5 * v) - eta * v
}

/// Fixed inputs of the sampler for one group of populations.
#[derive(Debug, Clone)]
pub struct GibbsData {
    pub labels: Vec<PopulationLabel>,
    /// `mu + eta` per population.
    pub base: Vec<DVector<f64>>,
    /// Smoothed curves per population, `n x p`.
    pub smooth: Vec<DMatrix<f64>>,
    /// Observed log rates per population.
    pub observed: Vec<DMatrix<f64>>,
    /// `K x p` common loadings and their eigenvalues.
    pub common: DMatrix<f64>,
    pub common_var: Vec<f64>,
    pub common_scores: DMatrix<f64>,
    /// Per population: `L x p` loadings, eigenvalues, `n x L` scores.
    pub specific: Vec<DMatrix<f64>>,
    pub specific_var: Vec<Vec<f64>>,
    pub specific_scores: Vec<DMatrix<f64>>,
    pub sigma2: Vec<f64>,
    /// Per population and age: sum over years of squared smoothing
    /// residuals, or `None` where the smooth reproduces every observation
    /// and the age carries no smoothing error.
    pub smoothing_ssr: Vec<Vec<Option<f64>>>,
}

fn smoothing_ssr(observed: &DMatrix<f64>, smooth: &DMatrix<f64>) -> Vec<Option<f64>> {
    let ssr: Vec<f64> = (0..observed.ncols()).map(|i| (observed.column(i) - smooth.column(i)).norm_squared()).collect();
    let floor = 1e-12 * ssr.iter().copied().fold(0.0, f64::max);
    ssr.into_iter().map(|v| (v > floor).then_some(v)).collect()
}

impl GibbsData {
    pub fn new(dec: &MultilevelDecomposition, observed: Vec<DMatrix<f64>>) -> Result<Self> {
        if observed.len() != dec.populations.len() {
            return Err(Error::Structure(format!("{} observed surfaces for {} populations", observed.len(), dec.populations.len())));
        }
        for (o, c) in observed.iter().zip(&dec.populations) {
            if o.shape() != c.data.shape() {
                return Err(Error::Structure(format!("{}: observed surface does not match the smoothed one", c.label)));
            }
        }
        Ok(Self {
            labels: dec.populations.iter().map(|c| c.label.clone()).collect(),
            base: dec.populations.iter().map(|c| &dec.mu + &c.eta).collect(),
            smooth: dec.populations.iter().map(|c| c.data.clone()).collect(),
            common: dec.common.eigenfunctions.clone(),
            common_var: dec.common.eigenvalues.clone(),
            common_scores: dec.common.scores.clone(),
            specific: dec.populations.iter().map(|c| c.specific.eigenfunctions.clone()).collect(),
            specific_var: dec.populations.iter().map(|c| c.specific.eigenvalues.clone()).collect(),
            specific_scores: dec.populations.iter().map(|c| c.specific.scores.clone()).collect(),
            sigma2: dec.populations.iter().map(|c| c.sigma2).collect(),
            smoothing_ssr: observed.iter().zip(&dec.populations).map(|(o, c)| smoothing_ssr(o, &c.data)).collect(),
            observed,
        })
    }

    pub fn n_years(&self) -> usize {
        self.smooth[0].nrows()
    }

    pub fn n_ages(&self) -> usize {
        self.smooth[0].ncols()
    }
}

/// One retained posterior draw.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub beta: DMatrix<f64>,
    pub gamma: Vec<DMatrix<f64>>,
    pub sigma2: Vec<f64>,
    /// Smoothing-error variance per population and age.
    pub delta2: Vec<DVector<f64>>,
    pub v_omega: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub labels: Vec<PopulationLabel>,
    /// Chain-major order.
    pub draws: Vec<Draw>,
    pub chains: usize,
    /// Post-burn-in acceptance rate of the hyperparameter step, per chain and population.
    pub acceptance: Vec<Vec<f64>>,
}

struct State {
    beta: DMatrix<f64>,
    gamma: Vec<DMatrix<f64>>,
    tau: Vec<f64>,
    omega: Vec<DVector<f64>>,
    scale: Vec<f64>,
    v: Vec<f64>,
    step: Vec<f64>,
    resid: Vec<DMatrix<f64>>,
}

fn initial_state(data: &GibbsData, cfg: &GibbsConfig) -> State {
    let (n, p) = (data.n_years(), data.n_ages());
    let j = data.labels.len();
    let resid = (0..j)
        .map(|m| {
            let fit = &data.common_scores * &data.common + &data.specific_scores[m] * &data.specific[m];
            DMatrix::from_fn(n, p, |t, i| data.smooth[m][(t, i)] - data.base[m][i] - fit[(t, i)])
        })
        .collect();
    let floor = |s: f64| if s > 0.0 && s.is_finite() { s } else { 1e-6 };
    let tau = if cfg.pooled_variance {
        vec![1.0 / floor(data.sigma2.iter().sum::<f64>() / j as f64); j]
    } else {
        data.sigma2.iter().map(|s| 1.0 / floor(*s)).collect()
    };
    State {
        beta: data.common_scores.clone(),
        gamma: data.specific_scores.clone(),
        tau,
        omega: vec![DVector::from_element(p, 1.0); j],
        scale: (0..j).map(|m| smoothing_scale_start(&data.observed[m], &data.smooth[m])).collect(),
        v: vec![cfg.v_omega; j],
        step: vec![1.0; j],
        resid,
    }
}

fn smoothing_scale_start(y: &DMatrix<f64>, f: &DMatrix<f64>) -> f64 {
    let ms = (y - f).iter().map(|e| e * e).sum::<f64>() / y.len() as f64;
    if ms > 0.0 { 1.0 / ms } else { 1e6 }
}

fn sweep_scores<R: Rng>(data: &GibbsData, s: &mut State, rng: &mut R) {
    let (n, p) = (data.n_years(), data.n_ages());
    let j = data.labels.len();
    for k in 0..data.common.nrows() {
        let phi = data.common.row(k);
        let ss: f64 = phi.iter().map(|v| v * v).sum();
        let info: f64 = (0..j).map(|m| ss * s.tau[m]).sum();
        for t in 0..n {
            let old = s.beta[(t, k)];
            let cross: f64 = (0..j)
                .map(|m| s.tau[m] * (0..p).map(|i| phi[i] * (s.resid[m][(t, i)] + old * phi[i])).sum::<f64>())
                .sum();
            let c = score_conditional(data.common_var[k], info, cross);
            let new = c.sample(rng);
            for m in 0..j {
                for i in 0..p {
                    s.resid[m][(t, i)] += (old - new) * phi[i];
                }
            }
            s.beta[(t, k)] = new;
        }
    }
    for m in 0..j {
        for l in 0..data.specific[m].nrows() {
            let psi = data.specific[m].row(l);
            let info = psi.iter().map(|v| v * v).sum::<f64>() * s.tau[m];
            for t in 0..n {
                let old = s.gamma[m][(t, l)];
                let cross = s.tau[m] * (0..p).map(|i| psi[i] * (s.resid[m][(t, i)] + old * psi[i])).sum::<f64>();
                let c = score_conditional(data.specific_var[m][l], info, cross);
                let new = c.sample(rng);
                for i in 0..p {
                    s.resid[m][(t, i)] += (old - new) * psi[i];
                }
                s.gamma[m][(t, l)] = new;
            }
        }
    }
}

fn sweep_variance<R: Rng>(data: &GibbsData, cfg: &GibbsConfig, s: &mut State, rng: &mut R) {
    let ssr: Vec<f64> = s.resid.iter().map(|e| e.iter().map(|v| v * v).sum()).collect();
    let cells = data.n_years() * data.n_ages();
    if cfg.pooled_variance {
        let tau = precision_conditional(cfg.alpha1, cfg.alpha2, cells * ssr.len(), ssr.iter().sum()).sample(rng);
        s.tau.iter_mut().for_each(|t| *t = tau);
    } else {
        for (m, e) in ssr.iter().enumerate() {
            s.tau[m] = precision_conditional(cfg.alpha1, cfg.alpha2, cells, *e).sample(rng);
        }
    }
}

/// Returns whether the hyperparameter proposal was accepted, per population.
fn sweep_smoothing<R: Rng>(data: &GibbsData, cfg: &GibbsConfig, s: &mut State, rng: &mut R) -> Vec<bool> {
    let n = data.n_years();
    (0..data.labels.len())
        .map(|m| {
            let ssr = &data.smoothing_ssr[m];
            let mut weighted = 0.0;
            let mut active = 0;
            for (i, e) in ssr.iter().enumerate() {
                match e {
                    Some(e) => {
                        let w = omega_conditional(s.v[m], s.scale[m], n, *e).sample(rng).max(f64::MIN_POSITIVE);
                        s.omega[m][i] = w;
                        weighted += w * e;
                        active += 1;
                    }
                    None => s.omega[m][i] = f64::INFINITY,
                }
            }
            if active == 0 {
                return false;
            }
            s.scale[m] = precision_conditional(cfg.alpha1, cfg.alpha2, n * active, weighted).sample(rng);
            let omega: Vec<f64> = s.omega[m].iter().copied().filter(|w| w.is_finite()).collect();
            let current = v_log_density(s.v[m], &omega, cfg.v_omega);
            let z: f64 = StandardNormal.sample(rng);
            let proposal = s.v[m] * (s.step[m] * z).exp();
            let log_ratio = v_log_density(proposal, &omega, cfg.v_omega) - current + (proposal / s.v[m]).ln();
            let accept = proposal > 0.0 && proposal.is_finite() && rng.random::<f64>().ln() < log_ratio;
            if accept {
                s.v[m] = proposal;
            }
            accept
        })
        .collect()
}

fn run_chain(data: &GibbsData, cfg: &GibbsConfig, chain: usize) -> (Vec<Draw>, Vec<f64>) {
    let mut rng = rng::stream(cfg.seed, &[0x6b1b5, chain as u64]);
    let mut s = initial_state(data, cfg);
    let j = data.labels.len();
    let mut draws = Vec::with_capacity(cfg.retained_per_chain());
    let mut batch = vec![0usize; j];
    let mut accepted = vec![0usize; j];
    let mut kept = 0usize;
    const BATCH: usize = 50;
    for it in 0..cfg.total_draws {
        sweep_scores(data, &mut s, &mut rng);
        sweep_variance(data, cfg, &mut s, &mut rng);
        let acc = sweep_smoothing(data, cfg, &mut s, &mut rng);
        if it < cfg.burn_in {
            for m in 0..j {
                batch[m] += acc[m] as usize;
            }
            if (it + 1) % BATCH == 0 {
                for m in 0..j {
                    let rate = batch[m] as f64 / BATCH as f64;
                    s.step[m] = (s.step[m] * (rate - 0.3).exp()).clamp(1e-3, 10.0);
                    batch[m] = 0;
                }
            }
            continue;
        }
        for m in 0..j {
            accepted[m] += acc[m] as usize;
        }
        kept += 1;
        if (it - cfg.burn_in + 1) % cfg.thin == 0 {
            draws.push(Draw {
                beta: s.beta.clone(),
                gamma: s.gamma.clone(),
                sigma2: s.tau.iter().map(|t| 1.0 / t).collect(),
                delta2: (0..j).map(|m| s.omega[m].map(|w| 1.0 / (w * s.scale[m]))).collect(),
                v_omega: s.v.clone(),
            });
        }
    }
    let rates = accepted.iter().map(|a| *a as f64 / kept.max(1) as f64).collect();
    (draws, rates)
}

/// Runs the chains in parallel. Each chain has its own random stream, so the
/// output depends only on the data and the configuration.
pub fn run_gibbs(data: &GibbsData, cfg: &GibbsConfig) -> Result<PosteriorDraws> {
    cfg.validate()?;
    let out: Vec<(Vec<Draw>, Vec<f64>)> = (0..cfg.chains).into_par_iter().map(|c| run_chain(data, cfg, c)).collect();
    let acceptance = out.iter().map(|(_, a)| a.clone()).collect();
    let draws: Vec<Draw> = out.into_iter().flat_map(|(d, _)| d).collect();
    let bad = |d: &Draw| {
        d.sigma2.iter().any(|v| !(v.is_finite() && *v > 0.0)) || d.delta2.iter().flat_map(|v| v.iter()).any(|v| !(v.is_finite() && *v >= 0.0))
    };
    if draws.iter().any(bad) {
        return Err(Error::Numerical("a variance draw was not finite and positive".into()));
    }
    Ok(PosteriorDraws { labels: data.labels.clone(), draws, chains: cfg.chains, acceptance })
}
