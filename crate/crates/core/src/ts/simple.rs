use super::ScoreForecast;
use crate::error::{Error, Result};

fn gaussian_loglik(resid: &[f64], sigma2: f64) -> f64 {
    if sigma2 <= 0.0 {
        return f64::INFINITY;
    }
    let n = resid.len() as f64;
    -0.5 * (n * (2.0 * std::f64::consts::PI * sigma2).ln() + resid.iter().map(|e| e * e).sum::<f64>() / sigma2)
}

fn aicc(loglik: f64, k: usize, n: usize) -> f64 {
    if n <= k + 1 {
        return f64::INFINITY;
    }
    -2.0 * loglik + 2.0 * k as f64 + 2.0 * (k * (k + 1)) as f64 / (n - k - 1) as f64
}

/// Random walk with drift.
#[derive(Debug, Clone)]
pub struct RwdFit {
    pub drift: f64,
    pub sigma2: f64,
    pub loglik: f64,
    pub aicc: f64,
    pub(crate) series: Vec<f64>,
    /// Set when this model stands in for a failed ARIMA search.
    pub fallback: bool,
}

/// `drift = (y_n - y_1) / (n - 1)`, innovation variance from the differences.
pub fn fit_rwd(series: &[f64]) -> Result<RwdFit> {
    let n = series.len();
    if n < 2 {
        return Err(Error::Argument(format!("random walk needs at least 2 observations, got {n}")));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("series contains non-finite values".into()));
    }
    let drift = (series[n - 1] - series[0]) / (n - 1) as f64;
    let resid: Vec<f64> = series.windows(2).map(|w| w[1] - w[0] - drift).collect();
    let sigma2 = if n > 2 { resid.iter().map(|e| e * e).sum::<f64>() / (n - 2) as f64 } else { 0.0 };
    let loglik = gaussian_loglik(&resid, sigma2);
    Ok(RwdFit { drift, sigma2, loglik, aicc: aicc(loglik, 2, n - 1), series: series.to_vec(), fallback: false })
}

impl RwdFit {
    pub fn n(&self) -> usize {
        self.series.len()
    }

    pub fn with_series(&self, series: &[f64]) -> Result<RwdFit> {
        if series.is_empty() {
            return Err(Error::Argument("empty series".into()));
        }
        Ok(RwdFit { series: series.to_vec(), ..self.clone() })
    }

    /// `se(h) = sigma * sqrt(h (1 + h / (n - 1)))`: innovation plus drift uncertainty.
    pub fn forecast(&self, h: usize) -> ScoreForecast {
        let last = *self.series.last().expect("non-empty");
        let mean = (1..=h).map(|k| last + self.drift * k as f64).collect();
        let sigma = self.sigma2.sqrt();
        let n = self.series.len();
        let drift_se = if n > 1 { sigma / ((n - 1) as f64).sqrt() } else { 0.0 };
        ScoreForecast::from_psi(mean, vec![1.0; h], sigma, drift_se)
    }
}

/// AR(1) with intercept, fitted by conditional least squares.
#[derive(Debug, Clone)]
pub struct Ar1Fit {
    pub phi: f64,
    pub intercept: f64,
    pub sigma2: f64,
    pub loglik: f64,
    pub aicc: f64,
    pub(crate) series: Vec<f64>,
    /// Set when the estimate was moved into (-0.999, 0.999) or was undefined.
    pub projected: bool,
}

const PHI_BOUND: f64 = 0.999;

pub fn fit_ar1(series: &[f64]) -> Result<Ar1Fit> {
    let n = series.len();
    if n < 5 {
        return Err(Error::Argument(format!("AR(1) needs at least 5 observations, got {n}")));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("series contains non-finite values".into()));
    }
    let x = &series[..n - 1];
    let z = &series[1..];
    let m = (n - 1) as f64;
    let xm = x.iter().sum::<f64>() / m;
    let zm = z.iter().sum::<f64>() / m;
    let sxx: f64 = x.iter().map(|v| (v - xm).powi(2)).sum();
    let sxz: f64 = x.iter().zip(z).map(|(a, b)| (a - xm) * (b - zm)).sum();
    let scale = series.iter().fold(0.0f64, |s, v| s.max(v.abs())).max(1.0);
    let (phi, intercept, projected) = if sxx <= (1e-12 * scale).powi(2) * m {
        let mean = series.iter().sum::<f64>() / n as f64;
        (0.0, mean, true)
    } else {
        let raw = sxz / sxx;
        if raw.abs() >= 1.0 {
            let phi = raw.clamp(-PHI_BOUND, PHI_BOUND);
            (phi, zm - phi * xm, true)
        } else {
            (raw, zm - raw * xm, false)
        }
    };
    let resid: Vec<f64> = x.iter().zip(z).map(|(a, b)| b - intercept - phi * a).collect();
    let sigma2 = resid.iter().map(|e| e * e).sum::<f64>() / (n - 3) as f64;
    let loglik = gaussian_loglik(&resid, sigma2);
    Ok(Ar1Fit { phi, intercept, sigma2, loglik, aicc: aicc(loglik, 3, n - 1), series: series.to_vec(), projected })
}

impl Ar1Fit {
    pub fn mean(&self) -> f64 {
        self.intercept / (1.0 - self.phi)
    }

    pub fn with_series(&self, series: &[f64]) -> Result<Ar1Fit> {
        if series.is_empty() {
            return Err(Error::Argument("empty series".into()));
        }
        Ok(Ar1Fit { series: series.to_vec(), ..self.clone() })
    }

    /// Geometric reversion from the last value to the implied mean.
    pub fn forecast(&self, h: usize) -> ScoreForecast {
        let mu = self.mean();
        let last = *self.series.last().expect("non-empty");
        let mean = (1..=h).map(|k| mu + self.phi.powi(k as i32) * (last - mu)).collect();
        let psi = (0..h).map(|k| self.phi.powi(k as i32)).collect();
        ScoreForecast::from_psi(mean, psi, self.sigma2.sqrt(), 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn rwd_examples() {
        let f = fit_rwd(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let fc = f.forecast(2);
        assert_eq!(fc.mean, vec![5.0, 6.0]);
        assert_eq!(fc.se, vec![0.0, 0.0]);
        let c = fit_rwd(&[2.0; 6]).unwrap().forecast(3);
        assert_eq!(c.mean, vec![2.0; 3]);
        assert!(c.se.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rwd_standard_error_is_calibrated() {
        // Coverage of the 95% band for the 5-step forecast over simulated walks.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (n, h, reps) = (40, 5, 2000);
        let mut hits = 0;
        for _ in 0..reps {
            let mut y = vec![0.0];
            for _ in 1..n + h {
                let e: f64 = StandardNormal.sample(&mut rng);
                y.push(y.last().unwrap() + 0.2 + e);
            }
            let fc = fit_rwd(&y[..n]).unwrap().forecast(h);
            hits += ((y[n + h - 1] - fc.mean[h - 1]).abs() <= 1.96 * fc.se[h - 1]) as usize;
        }
        let cover = hits as f64 / reps as f64;
        assert!((cover - 0.95).abs() < 0.02, "{cover}");
    }

    #[test]
    fn ar1_recovers_coefficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut y = vec![0.0];
        for _ in 1..1000 {
            let e: f64 = StandardNormal.sample(&mut rng);
            y.push(1.0 + 0.5 * y.last().unwrap() + e);
        }
        let f = fit_ar1(&y).unwrap();
        assert!((f.phi - 0.5).abs() < 0.06);
        assert!(!f.projected);
        let far = f.forecast(400);
        assert!((far.mean[399] - f.mean()).abs() < 1e-9);
    }

    #[test]
    fn ar1_constant_series_is_flagged() {
        let f = fit_ar1(&[3.0; 10]).unwrap();
        assert!(f.projected);
        assert_eq!(f.phi, 0.0);
        assert_eq!(f.forecast(4).mean, vec![3.0; 4]);
    }

    #[test]
    fn ar1_explosive_estimate_is_projected() {
        let y: Vec<f64> = (0..20).map(|t| 1.3f64.powi(t)).collect();
        let f = fit_ar1(&y).unwrap();
        assert!(f.projected);
        assert!(f.phi.abs() < 1.0);
    }

    proptest! {
        #[test]
        fn rwd_closed_form(y in prop::collection::vec(-100.0f64..100.0, 3..40), h in 1usize..20) {
            let n = y.len();
            let fc = fit_rwd(&y).unwrap().forecast(h);
            let drift = (y[n - 1] - y[0]) / (n - 1) as f64;
            let d: Vec<f64> = y.windows(2).map(|w| w[1] - w[0] - drift).collect();
            let s2 = d.iter().map(|v| v * v).sum::<f64>() / (n - 2) as f64;
            for k in 1..=h {
                prop_assert_eq!(fc.mean[k - 1], y[n - 1] + drift * k as f64);
                let se = (s2 * k as f64 * (1.0 + k as f64 / (n - 1) as f64)).sqrt();
                prop_assert!((fc.se[k - 1] - se).abs() <= 1e-12 * se.max(1.0));
            }
        }
    }
}
