use std::collections::HashMap;

use super::kalman;
use super::kpss::LagPolicy;
use super::optim;
use super::ScoreForecast;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ArimaOrder {
    pub p: usize,
    pub d: usize,
    pub q: usize,
    /// Mean when `d == 0`, drift when `d == 1`.
    pub constant: bool,
}

impl ArimaOrder {
    pub fn new(p: usize, d: usize, q: usize, constant: bool) -> Self {
        Self { p, d, q, constant }
    }

    pub fn n_params(&self) -> usize {
        self.p + self.q + self.constant as usize + 1
    }
}

#[derive(Debug, Clone)]
pub struct ArimaFit {
    pub order: ArimaOrder,
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    pub constant: f64,
    pub sigma2: f64,
    pub loglik: f64,
    pub aicc: f64,
    pub residuals: Vec<f64>,
    pub(crate) series: Vec<f64>,
    next_state: Vec<f64>,
}

pub(crate) fn differenced(series: &[f64], d: usize) -> Vec<f64> {
    let mut x = series.to_vec();
    for _ in 0..d {
        x = x.windows(2).map(|w| w[1] - w[0]).collect();
    }
    x
}

/// Durbin-Levinson map from partial autocorrelations to AR coefficients.
pub(crate) fn pacf_to_ar(r: &[f64]) -> Vec<f64> {
    let mut phi: Vec<f64> = Vec::with_capacity(r.len());
    for (k, &rk) in r.iter().enumerate() {
        let mut next: Vec<f64> = (0..k).map(|j| phi[j] - rk * phi[k - 1 - j]).collect();
        next.push(rk);
        phi = next;
    }
    phi
}

/// Step-down recursion; `None` when some partial autocorrelation is outside (-1, 1).
pub fn ar_to_pacf(phi: &[f64]) -> Option<Vec<f64>> {
    let p = phi.len();
    let mut a = phi.to_vec();
    let mut r = vec![0.0; p];
    for k in (0..p).rev() {
        let rk = a[k];
        if !(rk.abs() < 1.0) {
            return None;
        }
        r[k] = rk;
        let denom = 1.0 - rk * rk;
        a = (0..k).map(|j| (a[j] + rk * a[k - 1 - j]) / denom).collect();
    }
    Some(r)
}

pub fn is_stationary(phi: &[f64]) -> bool {
    ar_to_pacf(phi).is_some()
}

fn sample_pacf(w: &[f64], p: usize) -> Vec<f64> {
    let n = w.len();
    let mean = w.iter().sum::<f64>() / n as f64;
    let acov = |k: usize| (k..n).map(|t| (w[t] - mean) * (w[t - k] - mean)).sum::<f64>() / n as f64;
    let g0 = acov(0);
    if p == 0 || g0 <= 0.0 {
        return vec![0.0; p];
    }
    let rho: Vec<f64> = (0..=p).map(|k| acov(k) / g0).collect();
    let mut phi: Vec<f64> = Vec::new();
    let mut out = Vec::with_capacity(p);
    for k in 1..=p {
        let num = rho[k] - (0..k - 1).map(|j| phi[j] * rho[k - 1 - j]).sum::<f64>();
        let den = 1.0 - (0..k - 1).map(|j| phi[j] * rho[j + 1]).sum::<f64>();
        let rk = if den.abs() > 1e-12 { (num / den).clamp(-0.9, 0.9) } else { 0.0 };
        let mut next: Vec<f64> = (0..k - 1).map(|j| phi[j] - rk * phi[k - 2 - j]).collect();
        next.push(rk);
        phi = next;
        out.push(rk);
    }
    out
}

fn unpack(order: &ArimaOrder, x: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let ar = pacf_to_ar(&x[..order.p].iter().map(|u| u.tanh()).collect::<Vec<_>>());
    let ma: Vec<f64> =
        pacf_to_ar(&x[order.p..order.p + order.q].iter().map(|u| u.tanh()).collect::<Vec<_>>()).iter().map(|v| -v).collect();
    let c = if order.constant { x[order.p + order.q] } else { 0.0 };
    (ar, ma, c)
}

fn aicc(loglik: f64, k: usize, n: usize) -> f64 {
    if n <= k + 1 {
        return f64::INFINITY;
    }
    -2.0 * loglik + 2.0 * k as f64 + 2.0 * (k * (k + 1)) as f64 / (n - k - 1) as f64
}

fn centred(w: &[f64], c: f64) -> Vec<f64> {
    w.iter().map(|v| v - c).collect()
}

/// Exact maximum likelihood fit of one ARIMA order.
pub fn fit_arima(series: &[f64], order: ArimaOrder) -> Result<ArimaFit> {
    if order.constant && order.d > 1 {
        return Err(Error::Argument("a constant is only allowed with d <= 1".into()));
    }
    let w = differenced(series, order.d);
    let n = w.len();
    let k = order.n_params();
    if n < k + 2 {
        return Err(Error::Argument(format!("{n} observations are too few for {k} parameters")));
    }
    let mean = w.iter().sum::<f64>() / n as f64;
    let spread = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let scale = w.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);

    if spread <= 1e-12 * scale {
        if order.p + order.q > 0 {
            return Err(Error::Degenerate("series has no variation to fit ARMA terms".into()));
        }
        let c = if order.constant { mean } else { 0.0 };
        let resid = centred(&w, c);
        let sigma2 = resid.iter().map(|v| v * v).sum::<f64>() / n as f64;
        return Ok(ArimaFit {
            order,
            ar: Vec::new(),
            ma: Vec::new(),
            constant: c,
            sigma2,
            loglik: f64::INFINITY,
            aicc: if sigma2 == 0.0 { f64::NEG_INFINITY } else { f64::INFINITY },
            residuals: resid.clone(),
            series: series.to_vec(),
            next_state: vec![0.0],
        });
    }

    let objective = |x: &[f64]| -> f64 {
        let (ar, ma, c) = unpack(&order, x);
        match kalman::filter(&centred(&w, c), &ar, &ma) {
            Ok(f) if f.loglik.is_finite() => -f.loglik,
            _ => f64::INFINITY,
        }
    };
    let mut x0: Vec<f64> = sample_pacf(&w, order.p).iter().map(|r| r.atanh()).collect();
    x0.extend(std::iter::repeat_n(0.0, order.q));
    let mut step = vec![0.3; order.p + order.q];
    if order.constant {
        x0.push(mean);
        step.push(spread.max(1e-8 * scale) * 0.5);
    }
    let (best, _) = optim::minimize(&objective, &x0, &step, 1e-8, 400 * (x0.len() as u64 + 1));
    let (ar, ma, c) = unpack(&order, &best);
    if !is_stationary(&ar) {
        return Err(Error::Numerical("estimated AR part is not stationary".into()));
    }
    let f = kalman::filter(&centred(&w, c), &ar, &ma)?;
    if !f.loglik.is_finite() {
        return Err(Error::Numerical("non-finite likelihood at the optimum".into()));
    }
    Ok(ArimaFit {
        order,
        ar,
        ma,
        constant: c,
        sigma2: f.sigma2,
        loglik: f.loglik,
        aicc: aicc(f.loglik, k, n),
        residuals: f.innovations,
        series: series.to_vec(),
        next_state: f.next_state,
    })
}

/// Coefficients of the MA(infinity) form of `theta(B) / (phi(B) (1-B)^d)`.
pub(crate) fn psi_weights(ar: &[f64], ma: &[f64], d: usize, h: usize) -> Vec<f64> {
    let mut full = ar.to_vec();
    for _ in 0..d {
        // Multiply 1 - sum a_i B^i by (1 - B).
        let mut next = vec![0.0; full.len() + 1];
        for (i, a) in full.iter().enumerate() {
            next[i] += a;
            next[i + 1] -= a;
        }
        next[0] += 1.0;
        full = next;
    }
    let mut psi = vec![0.0; h.max(1)];
    psi[0] = 1.0;
    for j in 1..psi.len() {
        let mut v = ma.get(j - 1).copied().unwrap_or(0.0);
        for (i, a) in full.iter().enumerate().take(j) {
            v += a * psi[j - 1 - i];
        }
        psi[j] = v;
    }
    psi.truncate(h);
    psi
}

impl ArimaFit {
    /// Same coefficients, filtered over a new series.
    pub fn refilter(&self, series: &[f64]) -> Result<ArimaFit> {
        let w = differenced(series, self.order.d);
        if w.is_empty() {
            return Err(Error::Argument("series too short to refilter".into()));
        }
        let f = kalman::filter(&centred(&w, self.constant), &self.ar, &self.ma)?;
        Ok(ArimaFit {
            sigma2: self.sigma2,
            loglik: f.loglik,
            aicc: aicc(f.loglik, self.order.n_params(), w.len()),
            residuals: f.innovations,
            series: series.to_vec(),
            next_state: f.next_state,
            ..self.clone()
        })
    }

    pub fn forecast(&self, h: usize) -> ScoreForecast {
        let mut mean: Vec<f64> = if self.ar.is_empty() && self.ma.is_empty() {
            vec![self.constant; h]
        } else {
            kalman::project(&self.next_state, &self.ar, &self.ma, h).into_iter().map(|v| v + self.constant).collect()
        };
        // Integrate back through each differencing level, innermost first.
        for k in (0..self.order.d).rev() {
            let mut acc = *differenced(&self.series, k).last().expect("non-empty series");
            for v in mean.iter_mut() {
                acc += *v;
                *v = acc;
            }
        }
        let psi = psi_weights(&self.ar, &self.ma, self.order.d, h);
        ScoreForecast::from_psi(mean, psi, self.sigma2.max(0.0).sqrt(), 0.0)
    }
}

#[derive(Debug, Clone)]
pub struct AutoArimaConfig {
    pub max_p: usize,
    pub max_q: usize,
    pub max_d: usize,
    pub lags: LagPolicy,
    /// Skip the KPSS cascade and use this many differences.
    pub fixed_d: Option<usize>,
    pub allow_constant: bool,
}

impl Default for AutoArimaConfig {
    fn default() -> Self {
        Self { max_p: 5, max_q: 5, max_d: 2, lags: LagPolicy::Short, fixed_d: None, allow_constant: true }
    }
}

/// Smallest root modulus the search accepts for either lag polynomial.
const ROOT_MARGIN: f64 = 1.01;

/// True when every root of `1 - sum c_i z^i` lies outside `|z| = margin`:
/// rescaling `z = margin w` turns this into a stationarity check.
fn roots_clear(coefs: &[f64], margin: f64) -> bool {
    let scaled: Vec<f64> = coefs.iter().enumerate().map(|(i, c)| c * margin.powi(i as i32 + 1)).collect();
    is_stationary(&scaled)
}

impl ArimaFit {
    /// Neither polynomial has a root near the unit circle, so the model is
    /// not an overfit with near-cancelling or near-unit roots.
    fn well_separated(&self) -> bool {
        let ma: Vec<f64> = self.ma.iter().map(|v| -v).collect();
        roots_clear(&self.ar, ROOT_MARGIN) && roots_clear(&ma, ROOT_MARGIN)
    }
}

fn better(a: &ArimaFit, b: &ArimaFit) -> bool {
    let tol = 1e-8 * (1.0 + b.aicc.abs().min(1e12));
    if a.aicc < b.aicc - tol {
        return true;
    }
    (a.aicc - b.aicc).abs() <= tol && a.order.n_params() < b.order.n_params()
        || (a.aicc == f64::NEG_INFINITY && b.aicc == f64::NEG_INFINITY && a.order.n_params() < b.order.n_params())
}

/// Stepwise neighbourhood search over (p, q, constant) for a fixed `d`,
/// minimising AICc.
pub fn stepwise_search(series: &[f64], d: usize, cfg: &AutoArimaConfig) -> Option<ArimaFit> {
    let with_c = cfg.allow_constant && d <= 1;
    let mut cache: HashMap<ArimaOrder, Option<ArimaFit>> = HashMap::new();
    let mut eval = |o: ArimaOrder| -> Option<ArimaFit> {
        cache
            .entry(o)
            .or_insert_with(|| match fit_arima(series, o) {
                Ok(f) if !f.aicc.is_nan() && f.aicc < f64::INFINITY && f.well_separated() => Some(f),
                Ok(_) => None,
                Err(e) => {
                    log::trace!("ARIMA{:?} failed: {e}", (o.p, o.d, o.q, o.constant));
                    None
                }
            })
            .clone()
    };

    let mut starts: Vec<ArimaOrder> = [(2, 2), (0, 0), (1, 0), (0, 1)]
        .iter()
        .map(|&(p, q)| ArimaOrder::new(p.min(cfg.max_p), d, q.min(cfg.max_q), with_c))
        .collect();
    if with_c {
        starts.push(ArimaOrder::new(0, d, 0, false));
    }
    let mut best: Option<ArimaFit> = None;
    for o in starts {
        if let Some(f) = eval(o) {
            if best.as_ref().is_none_or(|b| better(&f, b)) {
                best = Some(f);
            }
        }
    }
    let mut current = best?;
    for _ in 0..100 {
        let o = current.order;
        let mut moves: Vec<ArimaOrder> = Vec::new();
        for (dp, dq) in [(-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (1, 1), (-1, 1), (1, -1)] {
            let p = o.p as i64 + dp;
            let q = o.q as i64 + dq;
            if p >= 0 && q >= 0 && p as usize <= cfg.max_p && q as usize <= cfg.max_q {
                moves.push(ArimaOrder::new(p as usize, d, q as usize, o.constant));
            }
        }
        if with_c {
            moves.push(ArimaOrder::new(o.p, d, o.q, !o.constant));
        }
        let mut improved = None;
        for m in moves {
            if let Some(f) = eval(m) {
                let reference = improved.as_ref().unwrap_or(&current);
                if better(&f, reference) {
                    improved = Some(f);
                }
            }
        }
        match improved {
            Some(f) => current = f,
            None => break,
        }
    }
    Some(current)
}
