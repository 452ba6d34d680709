//! Univariate models used to extrapolate principal component scores.

mod arfima;
mod arima;
mod kalman;
mod kpss;
mod optim;
mod simple;

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub use arfima::{fit_arfima, fractional_difference, fractional_difference_weights, gph_estimate, ArfimaFit};
pub use arima::{ar_to_pacf, fit_arima, is_stationary, stepwise_search, ArimaFit, ArimaOrder, AutoArimaConfig};
pub use kpss::{difference, kpss_statistic, select_d, KpssResult, LagPolicy, KPSS_CRITICAL_5PCT};
pub use simple::{fit_ar1, fit_rwd, Ar1Fit, RwdFit};

/// Point forecasts with the MA(infinity) weights needed to simulate paths.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreForecast {
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    /// `psi[0] = 1`, then the impulse response at lags 1, 2, ...
    pub psi: Vec<f64>,
    pub sigma: f64,
    /// Standard error of an estimated drift, added as `h * drift_se * z`.
    pub drift_se: f64,
}

impl ScoreForecast {
    pub fn from_psi(mean: Vec<f64>, psi: Vec<f64>, sigma: f64, drift_se: f64) -> Self {
        let mut acc = 0.0;
        let se = psi
            .iter()
            .enumerate()
            .map(|(k, p)| {
                acc += p * p;
                let h = (k + 1) as f64;
                (sigma * sigma * acc + drift_se * drift_se * h * h).sqrt()
            })
            .collect();
        Self { mean, se, psi, sigma, drift_se }
    }

    /// A flat forecast with no uncertainty.
    pub fn constant(value: f64, h: usize) -> Self {
        Self { mean: vec![value; h], se: vec![0.0; h], psi: (0..h).map(|k| (k == 0) as u8 as f64).collect(), sigma: 0.0, drift_se: 0.0 }
    }

    pub fn horizon(&self) -> usize {
        self.mean.len()
    }

    /// One future path: the mean plus psi-filtered Gaussian innovations.
    pub fn sample_path<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let h = self.horizon();
        let e: Vec<f64> = (0..h).map(|_| self.sigma * standard_normal(rng)).collect();
        let z = if self.drift_se > 0.0 { standard_normal(rng) } else { 0.0 };
        (0..h)
            .map(|k| {
                let shock: f64 = (0..=k).map(|j| self.psi[k - j] * e[j]).sum();
                self.mean[k] + shock + self.drift_se * (k + 1) as f64 * z
            })
            .collect()
    }
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelKind {
    Arima(ArimaOrder),
    Rwd,
    Ar1,
    Arfima { p: usize, d: f64, q: usize },
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Arima(o) => {
                write!(f, "ARIMA({},{},{})", o.p, o.d, o.q)?;
                if o.constant {
                    f.write_str(if o.d == 0 { " with mean" } else { " with drift" })?;
                }
                Ok(())
            }
            ModelKind::Rwd => f.write_str("RWD"),
            ModelKind::Ar1 => f.write_str("AR(1)"),
            ModelKind::Arfima { p, d, q } => write!(f, "ARFIMA({p},{d:.3},{q})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitFlag {
    /// Every ARIMA candidate failed; a random walk with drift was used.
    RwdFallback,
    /// The AR(1) coefficient was undefined or outside (-1, 1).
    ArProjected,
    /// The fractional difference estimate was outside (-0.5, 0.5).
    MemoryClamped,
}

#[derive(Debug, Clone)]
pub enum FittedTsModel {
    Arima(ArimaFit),
    Rwd(RwdFit),
    Ar1(Ar1Fit),
    Arfima(ArfimaFit),
}

impl FittedTsModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            FittedTsModel::Arima(m) => ModelKind::Arima(m.order),
            FittedTsModel::Rwd(_) => ModelKind::Rwd,
            FittedTsModel::Ar1(_) => ModelKind::Ar1,
            FittedTsModel::Arfima(m) => ModelKind::Arfima { p: m.arma.order.p, d: m.d, q: m.arma.order.q },
        }
    }

    pub fn sigma2(&self) -> f64 {
        match self {
            FittedTsModel::Arima(m) => m.sigma2,
            FittedTsModel::Rwd(m) => m.sigma2,
            FittedTsModel::Ar1(m) => m.sigma2,
            FittedTsModel::Arfima(m) => m.arma.sigma2,
        }
    }

    pub fn loglik(&self) -> f64 {
        match self {
            FittedTsModel::Arima(m) => m.loglik,
            FittedTsModel::Rwd(m) => m.loglik,
            FittedTsModel::Ar1(m) => m.loglik,
            FittedTsModel::Arfima(m) => m.arma.loglik,
        }
    }

    pub fn aicc(&self) -> f64 {
        match self {
            FittedTsModel::Arima(m) => m.aicc,
            FittedTsModel::Rwd(m) => m.aicc,
            FittedTsModel::Ar1(m) => m.aicc,
            FittedTsModel::Arfima(m) => m.aicc(),
        }
    }

    pub fn n(&self) -> usize {
        match self {
            FittedTsModel::Arima(m) => m.series.len(),
            FittedTsModel::Rwd(m) => m.series.len(),
            FittedTsModel::Ar1(m) => m.series.len(),
            FittedTsModel::Arfima(m) => m.series.len(),
        }
    }

    pub fn flags(&self) -> Vec<FitFlag> {
        match self {
            FittedTsModel::Rwd(m) if m.fallback => vec![FitFlag::RwdFallback],
            FittedTsModel::Ar1(m) if m.projected => vec![FitFlag::ArProjected],
            FittedTsModel::Arfima(m) if m.clamped => vec![FitFlag::MemoryClamped],
            _ => Vec::new(),
        }
    }

    pub fn forecast(&self, h: usize) -> ScoreForecast {
        match self {
            FittedTsModel::Arima(m) => m.forecast(h),
            FittedTsModel::Rwd(m) => m.forecast(h),
            FittedTsModel::Ar1(m) => m.forecast(h),
            FittedTsModel::Arfima(m) => m.forecast(h),
        }
    }

    /// Keeps the estimated parameters and conditions on a different series.
    pub fn with_series(&self, series: &[f64]) -> Result<FittedTsModel> {
        Ok(match self {
            FittedTsModel::Arima(m) => FittedTsModel::Arima(m.refilter(series)?),
            FittedTsModel::Rwd(m) => FittedTsModel::Rwd(m.with_series(series)?),
            FittedTsModel::Ar1(m) => FittedTsModel::Ar1(m.with_series(series)?),
            FittedTsModel::Arfima(m) => FittedTsModel::Arfima(m.with_series(series)?),
        })
    }
}

/// KPSS cascade for `d`, then a stepwise AICc search over `(p, q)`. Falls back
/// to a random walk with drift (flagged) when no candidate can be fitted.
pub fn auto_arima(series: &[f64]) -> Result<FittedTsModel> {
    auto_arima_with(series, &AutoArimaConfig::default())
}

pub fn auto_arima_with(series: &[f64], cfg: &AutoArimaConfig) -> Result<FittedTsModel> {
    if series.len() < 15 {
        return Err(Error::Argument(format!("auto ARIMA needs at least 15 observations, got {}", series.len())));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("series contains non-finite values".into()));
    }
    let d = cfg.fixed_d.unwrap_or_else(|| select_d(series, cfg.max_d, cfg.lags));
    match stepwise_search(series, d, cfg) {
        Some(fit) => Ok(FittedTsModel::Arima(fit)),
        None => {
            log::warn!("no ARIMA candidate converged; using a random walk with drift");
            let mut rwd = fit_rwd(series)?;
            rwd.fallback = true;
            Ok(FittedTsModel::Rwd(rwd))
        }
    }
}

/// A named way of fitting a score series.
pub trait ScoreModel: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;
    fn fit(&self, series: &[f64]) -> Result<FittedTsModel>;
}

#[derive(Debug, Default)]
pub struct AutoArimaModel(pub AutoArimaConfig);

impl ScoreModel for AutoArimaModel {
    fn name(&self) -> &'static str {
        "arima"
    }

    fn fit(&self, series: &[f64]) -> Result<FittedTsModel> {
        auto_arima_with(series, &self.0)
    }
}

#[derive(Debug, Default)]
pub struct RandomWalkModel;

impl ScoreModel for RandomWalkModel {
    fn name(&self) -> &'static str {
        "rwf"
    }

    fn fit(&self, series: &[f64]) -> Result<FittedTsModel> {
        fit_rwd(series).map(FittedTsModel::Rwd)
    }
}

#[derive(Debug, Default)]
pub struct Ar1Model;

impl ScoreModel for Ar1Model {
    fn name(&self) -> &'static str {
        "ar1"
    }

    fn fit(&self, series: &[f64]) -> Result<FittedTsModel> {
        fit_ar1(series).map(FittedTsModel::Ar1)
    }
}

#[derive(Debug, Default)]
pub struct ArfimaModel;

impl ScoreModel for ArfimaModel {
    fn name(&self) -> &'static str {
        "arfima"
    }

    fn fit(&self, series: &[f64]) -> Result<FittedTsModel> {
        fit_arfima(series).map(FittedTsModel::Arfima)
    }
}

pub const SCORE_MODELS: [&str; 4] = ["arima", "rwf", "ar1", "arfima"];

/// Looks a score model up by name (`arima`, `rwf`, `ar1`, `arfima`).
pub fn score_model(name: &str) -> Result<Arc<dyn ScoreModel>> {
    match name.to_ascii_lowercase().as_str() {
        "arima" | "auto_arima" => Ok(Arc::new(AutoArimaModel::default())),
        "rwf" | "rwd" => Ok(Arc::new(RandomWalkModel)),
        "ar1" => Ok(Arc::new(Ar1Model)),
        "arfima" => Ok(Arc::new(ArfimaModel)),
        other => Err(Error::Config(format!("unknown score model '{other}' (expected one of {})", SCORE_MODELS.join(", ")))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn registry_names_round_trip() {
        for name in SCORE_MODELS {
            assert_eq!(score_model(name).unwrap().name(), name);
        }
        assert!(matches!(score_model("ets"), Err(Error::Config(_))));
    }

    #[test]
    fn sample_paths_average_to_the_mean() {
        let fc = fit_rwd(&[0.0, 1.0, 1.5, 3.2, 4.0, 4.4, 6.0]).unwrap().forecast(4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = 20000;
        let mut sum = [0.0; 4];
        let mut sq = [0.0; 4];
        for _ in 0..b {
            let path = fc.sample_path(&mut rng);
            for k in 0..4 {
                sum[k] += path[k];
                sq[k] += path[k] * path[k];
            }
        }
        for k in 0..4 {
            let m = sum[k] / b as f64;
            let sd = (sq[k] / b as f64 - m * m).sqrt();
            assert!((m - fc.mean[k]).abs() < 4.0 * fc.se[k] / (b as f64).sqrt());
            assert!((sd / fc.se[k] - 1.0).abs() < 0.03);
        }
    }

    #[test]
    fn model_kind_labels() {
        assert_eq!(ModelKind::Arima(ArimaOrder::new(1, 1, 0, true)).to_string(), "ARIMA(1,1,0) with drift");
        assert_eq!(ModelKind::Rwd.to_string(), "RWD");
    }

    #[test]
    fn white_noise_picks_mean_only() {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut hits = 0;
        for _ in 0..20 {
            let y: Vec<f64> = (0..200).map(|_| 3.0 + <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect();
            if let ModelKind::Arima(o) = auto_arima(&y).unwrap().kind() {
                hits += (o.p == 0 && o.d == 0 && o.q == 0 && o.constant) as usize;
            }
        }
        assert!(hits >= 14, "{hits}");
    }

    #[test]
    fn linear_trend_is_differenced_once() {
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let y: Vec<f64> = (0..100).map(|t| 0.2 * t as f64 + noise.sample(&mut rng)).collect();
        match auto_arima(&y).unwrap().kind() {
            ModelKind::Arima(o) => assert_eq!(o.d, 1),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn aicc_prefers_the_true_order_over_white_noise() {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let reps = 100;
        let mut wins = 0;
        for _ in 0..reps {
            let mut x = 0.0;
            let y: Vec<f64> = (0..600)
                .map(|_| {
                    x = 0.3 * x + <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
                    x
                })
                .skip(100)
                .collect();
            let ar = fit_arima(&y, ArimaOrder::new(1, 0, 0, true)).unwrap();
            let wn = fit_arima(&y, ArimaOrder::new(0, 0, 0, true)).unwrap();
            wins += (ar.aicc <= wn.aicc) as usize;
        }
        assert!(wins * 10 >= reps * 9, "{wins}");
    }
}
