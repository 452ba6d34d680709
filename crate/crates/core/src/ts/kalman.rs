//! Exact Gaussian likelihood of a zero-mean ARMA process through its
//! state-space form, with the innovation variance concentrated out.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub(crate) struct Filtered {
    pub loglik: f64,
    pub sigma2: f64,
    /// One-step prediction errors.
    pub innovations: Vec<f64>,
    /// Predicted state for the first period after the sample.
    pub next_state: Vec<f64>,
}

fn system(ar: &[f64], ma: &[f64]) -> (usize, DMatrix<f64>, DVector<f64>) {
    let r = ar.len().max(ma.len() + 1);
    let mut t = DMatrix::zeros(r, r);
    for i in 0..r {
        if i < ar.len() {
            t[(i, 0)] = ar[i];
        }
        if i + 1 < r {
            t[(i, i + 1)] = 1.0;
        }
    }
    let rv = DVector::from_fn(r, |i, _| if i == 0 { 1.0 } else { ma.get(i - 1).copied().unwrap_or(0.0) });
    (r, t, rv)
}

/// Stationary state covariance for unit innovation variance.
fn initial_covariance(t: &DMatrix<f64>, rv: &DVector<f64>) -> Result<DMatrix<f64>> {
    let r = t.nrows();
    let rr = rv * rv.transpose();
    let kron = t.kronecker(t);
    let lhs = DMatrix::identity(r * r, r * r) - kron;
    let rhs = DVector::from_column_slice(rr.as_slice());
    let sol = lhs.lu().solve(&rhs).ok_or_else(|| Error::Numerical("ARMA process is not stationary".into()))?;
    Ok(DMatrix::from_column_slice(r, r, sol.as_slice()))
}

pub(crate) fn filter(w: &[f64], ar: &[f64], ma: &[f64]) -> Result<Filtered> {
    let n = w.len();
    let (r, t, rv) = system(ar, ma);
    let q = &rv * rv.transpose();
    let mut p = initial_covariance(&t, &rv)?;
    let mut a: DVector<f64> = DVector::zeros(r);
    let mut innovations = Vec::with_capacity(n);
    let mut sum_log_f = 0.0;
    let mut sum_v2 = 0.0;
    let mut steady = false;
    let mut gain: DVector<f64> = DVector::zeros(r);
    for &y in w {
        let v = y - a[0];
        let f = if steady { 1.0 } else { p[(0, 0)] };
        if !(f > 0.0) || !f.is_finite() {
            return Err(Error::Numerical(format!("non-positive prediction variance {f}")));
        }
        if !steady {
            gain = p.column(0) / f;
        }
        let upd = &a + &gain * v;
        // T * upd, using the companion structure of T.
        let mut next: DVector<f64> = DVector::zeros(r);
        for i in 0..r {
            next[i] = t[(i, 0)] * upd[0] + if i + 1 < r { upd[i + 1] } else { 0.0 };
        }
        a = next;
        if !steady {
            let pu = &p - &gain * p.row(0);
            p = &t * pu * t.transpose() + &q;
            steady = (p[(0, 0)] - 1.0).abs() < 1e-12;
        }
        innovations.push(v);
        sum_log_f += f.ln();
        sum_v2 += v * v / f;
    }
    let nf = n as f64;
    let sigma2 = sum_v2 / nf;
    let loglik = if sigma2 > 0.0 {
        -0.5 * (nf * (2.0 * std::f64::consts::PI * sigma2).ln() + nf + sum_log_f)
    } else {
        f64::INFINITY
    };
    Ok(Filtered { loglik, sigma2, innovations, next_state: a.iter().copied().collect() })
}

/// Mean forecasts `1..=h` of the observed component from the predicted state.
pub(crate) fn project(next_state: &[f64], ar: &[f64], ma: &[f64], h: usize) -> Vec<f64> {
    let (r, t, _) = system(ar, ma);
    let mut a = DVector::from_column_slice(next_state);
    let mut out = Vec::with_capacity(h);
    for _ in 0..h {
        out.push(a[0]);
        let mut next = DVector::zeros(r);
        for i in 0..r {
            next[i] = t[(i, 0)] * a[0] + if i + 1 < r { a[i + 1] } else { 0.0 };
        }
        a = next;
    }
    out
}
