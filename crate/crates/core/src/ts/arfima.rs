use super::arima::{psi_weights, stepwise_search, ArimaFit, ArimaOrder, AutoArimaConfig};
use super::ScoreForecast;
use crate::error::{Error, Result};

const D_BOUND: f64 = 0.49;

/// Log-periodogram (GPH) estimate of the memory parameter from the lowest
/// `floor(sqrt(n))` Fourier frequencies.
pub fn gph_estimate(series: &[f64]) -> Result<f64> {
    let n = series.len();
    let m = (n as f64).sqrt().floor() as usize;
    if m < 3 {
        return Err(Error::Argument(format!("GPH needs more observations than {n}")));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let mut xs = Vec::with_capacity(m);
    let mut ys = Vec::with_capacity(m);
    for j in 1..=m {
        let lambda = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (t, v) in series.iter().enumerate() {
            let a = lambda * t as f64;
            re += (v - mean) * a.cos();
            im -= (v - mean) * a.sin();
        }
        let periodogram = (re * re + im * im) / (2.0 * std::f64::consts::PI * n as f64);
        if periodogram <= 0.0 {
            return Err(Error::Degenerate("zero periodogram ordinate".into()));
        }
        xs.push((4.0 * (lambda / 2.0).sin().powi(2)).ln());
        ys.push(periodogram.ln());
    }
    let xm = xs.iter().sum::<f64>() / m as f64;
    let ym = ys.iter().sum::<f64>() / m as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
    Ok(-sxy / sxx)
}

/// Coefficients of `(1 - B)^d` truncated to `len` terms.
pub fn fractional_difference_weights(d: f64, len: usize) -> Vec<f64> {
    let mut pi = Vec::with_capacity(len);
    let mut v = 1.0;
    for k in 0..len {
        if k > 0 {
            v *= (k as f64 - 1.0 - d) / k as f64;
        }
        pi.push(v);
    }
    pi
}

pub fn fractional_difference(series: &[f64], d: f64) -> Vec<f64> {
    let pi = fractional_difference_weights(d, series.len());
    (0..series.len()).map(|t| (0..=t).map(|k| pi[k] * series[t - k]).sum()).collect()
}

/// Fractional differencing followed by an ARMA fit with `d = 0`.
#[derive(Debug, Clone)]
pub struct ArfimaFit {
    pub d: f64,
    pub mean: f64,
    pub arma: ArimaFit,
    pub(crate) series: Vec<f64>,
    /// Set when the memory estimate was clamped into (-0.49, 0.49).
    pub clamped: bool,
}

pub fn fit_arfima(series: &[f64]) -> Result<ArfimaFit> {
    let n = series.len();
    if n < 30 {
        return Err(Error::Argument(format!("ARFIMA needs at least 30 observations, got {n}")));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let centred: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let raw = match gph_estimate(&centred) {
        Ok(d) => d,
        Err(Error::Degenerate(_)) => 0.0,
        Err(e) => return Err(e),
    };
    let clamped = !(raw.abs() < D_BOUND);
    let d = raw.clamp(-D_BOUND, D_BOUND);
    let x = fractional_difference(&centred, d);
    let cfg = AutoArimaConfig { fixed_d: Some(0), ..AutoArimaConfig::default() };
    let arma = stepwise_search(&x, 0, &cfg).ok_or_else(|| Error::Numerical("no ARMA model could be fitted".into()))?;
    Ok(ArfimaFit { d, mean, arma, series: series.to_vec(), clamped })
}

impl ArfimaFit {
    pub fn order(&self) -> ArimaOrder {
        self.arma.order
    }

    pub fn aicc(&self) -> f64 {
        let k = self.arma.order.n_params() + 1;
        let n = self.series.len();
        if n <= k + 1 {
            return f64::INFINITY;
        }
        -2.0 * self.arma.loglik + 2.0 * k as f64 + 2.0 * (k * (k + 1)) as f64 / (n - k - 1) as f64
    }

    pub fn with_series(&self, series: &[f64]) -> Result<ArfimaFit> {
        let centred: Vec<f64> = series.iter().map(|v| v - self.mean).collect();
        let arma = self.arma.refilter(&fractional_difference(&centred, self.d))?;
        Ok(ArfimaFit { arma, series: series.to_vec(), ..self.clone() })
    }

    pub fn forecast(&self, h: usize) -> ScoreForecast {
        let inner = self.arma.forecast(h);
        let n = self.series.len();
        let pi = fractional_difference_weights(self.d, n + h);
        let mut z: Vec<f64> = self.series.iter().map(|v| v - self.mean).collect();
        for k in 0..h {
            let t = n + k;
            let past: f64 = (1..=t).map(|j| pi[j] * z[t - j]).sum();
            z.push(inner.mean[k] - past);
        }
        let mean = z[n..].iter().map(|v| v + self.mean).collect();
        let arma_psi = psi_weights(&self.arma.ar, &self.arma.ma, 0, h);
        let frac = fractional_difference_weights(-self.d, h);
        let psi = (0..h).map(|j| (0..=j).map(|i| arma_psi[i] * frac[j - i]).sum()).collect();
        ScoreForecast::from_psi(mean, psi, inner.sigma, 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn fractional_noise(d: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let burn = 2000;
        let psi = fractional_difference_weights(-d, burn);
        let e: Vec<f64> = (0..n + burn).map(|_| StandardNormal.sample(rng)).collect();
        (burn..n + burn).map(|t| (0..burn).map(|k| psi[k] * e[t - k]).sum()).collect()
    }

    #[test]
    fn weights_invert_each_other() {
        let a = fractional_difference_weights(0.3, 30);
        let b = fractional_difference_weights(-0.3, 30);
        for j in 0..30 {
            let c: f64 = (0..=j).map(|i| a[i] * b[j - i]).sum();
            assert!((c - if j == 0 { 1.0 } else { 0.0 }).abs() < 1e-12);
        }
        assert_eq!(fractional_difference_weights(1.0, 4), vec![1.0, -1.0, 0.0, 0.0]);
    }

    #[test]
    fn gph_recovers_memory_on_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let reps = 60;
        let mean: f64 = (0..reps).map(|_| gph_estimate(&fractional_noise(0.3, 1000, &mut rng)).unwrap()).sum::<f64>() / reps as f64;
        assert!((mean - 0.3).abs() < 0.1, "{mean}");
    }

    #[test]
    fn stationary_forecast_returns_to_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y: Vec<f64> = fractional_noise(0.2, 300, &mut rng).iter().map(|v| v + 5.0).collect();
        let f = fit_arfima(&y).unwrap();
        let fc = f.forecast(400);
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((fc.mean[399] - mean).abs() < (fc.mean[0] - mean).abs() + 1e-9);
        assert!((fc.mean[399] - mean).abs() < 0.5);
    }
}
