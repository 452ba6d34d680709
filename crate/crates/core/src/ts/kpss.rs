use crate::error::{Error, Result};

/// 5% critical value of the level-stationarity statistic.
pub const KPSS_CRITICAL_5PCT: f64 = 0.463;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LagPolicy {
    /// `floor(4 (n/100)^(1/4))`
    #[default]
    Short,
    /// `floor(12 (n/100)^(1/4))`
    Long,
    Fixed(usize),
}

impl LagPolicy {
    pub fn lags(self, n: usize) -> usize {
        let base = (n as f64 / 100.0).powf(0.25);
        match self {
            LagPolicy::Short => (4.0 * base).floor() as usize,
            LagPolicy::Long => (12.0 * base).floor() as usize,
            LagPolicy::Fixed(l) => l,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KpssResult {
    pub statistic: f64,
    pub lags: usize,
    pub reject_at_5pct: bool,
}

/// Level-stationarity KPSS test with a Bartlett long-run variance.
pub fn kpss_statistic(series: &[f64], lags: LagPolicy) -> Result<KpssResult> {
    let n = series.len();
    if n < 10 {
        return Err(Error::Argument(format!("KPSS needs at least 10 observations, got {n}")));
    }
    let l = lags.lags(n).min(n - 1);
    let mean = series.iter().sum::<f64>() / n as f64;
    let e: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let mut lrv = e.iter().map(|v| v * v).sum::<f64>() / n as f64;
    for s in 1..=l {
        let w = 1.0 - s as f64 / (l as f64 + 1.0);
        let gamma: f64 = (s..n).map(|t| e[t] * e[t - s]).sum::<f64>() / n as f64;
        lrv += 2.0 * w * gamma;
    }
    let scale = series.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    if lrv <= (f64::EPSILON * scale).powi(2) * n as f64 {
        return Ok(KpssResult { statistic: 0.0, lags: l, reject_at_5pct: false });
    }
    let mut partial = 0.0;
    let mut sum_sq = 0.0;
    for v in &e {
        partial += v;
        sum_sq += partial * partial;
    }
    let statistic = sum_sq / (n as f64 * n as f64 * lrv);
    Ok(KpssResult { statistic, lags: l, reject_at_5pct: statistic > KPSS_CRITICAL_5PCT })
}

pub fn difference(series: &[f64]) -> Vec<f64> {
    series.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Number of differences needed before the KPSS test stops rejecting.
pub fn select_d(series: &[f64], max_d: usize, lags: LagPolicy) -> usize {
    let mut x = series.to_vec();
    for d in 0..max_d {
        match kpss_statistic(&x, lags) {
            Ok(r) if r.reject_at_5pct => x = difference(&x),
            _ => return d,
        }
    }
    max_d
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(rng)).collect()
    }

    fn cumsum(x: &[f64]) -> Vec<f64> {
        x.iter().scan(0.0, |s, v| {
            *s += v;
            Some(*s)
        })
        .collect()
    }

    #[test]
    fn constant_series_is_zero() {
        let r = kpss_statistic(&[3.0; 20], LagPolicy::Short).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!(!r.reject_at_5pct);
    }

    #[test]
    fn lag_rule() {
        assert_eq!(LagPolicy::Short.lags(200), 4);
        assert_eq!(LagPolicy::Short.lags(100), 4);
        assert_eq!(LagPolicy::Long.lags(100), 12);
    }

    #[test]
    fn random_walk_rejects() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rejections = (0..200).filter(|_| kpss_statistic(&cumsum(&noise(200, &mut rng)), LagPolicy::Short).unwrap().reject_at_5pct).count();
        assert!(rejections >= 180, "{rejections}");
    }

    #[test]
    fn differencing_orders() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut counts = [0usize; 3];
        for _ in 0..50 {
            let e = noise(200, &mut rng);
            counts[0] += (select_d(&e, 2, LagPolicy::Short) == 0) as usize;
            let rwd: Vec<f64> = cumsum(&e.iter().map(|v| v + 0.3).collect::<Vec<_>>());
            counts[1] += (select_d(&rwd, 2, LagPolicy::Short) == 1) as usize;
            counts[2] += (select_d(&cumsum(&cumsum(&e)), 2, LagPolicy::Short) == 2) as usize;
        }
        assert!(counts.iter().all(|&c| c > 25), "{counts:?}");
    }
}
