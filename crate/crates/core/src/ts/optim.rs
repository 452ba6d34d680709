use argmin::core::{CostFunction, Error as ArgminError, Executor, State};
use argmin::solver::neldermead::NelderMead;

struct Objective<'a, F: Fn(&[f64]) -> f64>(&'a F);

impl<F: Fn(&[f64]) -> f64> CostFunction for Objective<'_, F> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Vec<f64>) -> Result<f64, ArgminError> {
        let v = (self.0)(x);
        Ok(if v.is_finite() { v } else { f64::MAX })
    }
}

/// Nelder-Mead from `x0`, restarted from the incumbent with a fresh simplex
/// until a restart no longer improves the value by more than `tol`.
pub(crate) fn minimize<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64], step: &[f64], tol: f64, max_iters: u64) -> (Vec<f64>, f64) {
    let mut best = x0.to_vec();
    let mut best_val = f(&best);
    if x0.is_empty() {
        return (best, best_val);
    }
    for round in 0..4 {
        let scale = if round == 0 { 1.0 } else { 0.5 };
        let mut simplex = vec![best.clone()];
        for i in 0..best.len() {
            let mut v = best.clone();
            v[i] += step[i] * scale;
            simplex.push(v);
        }
        let Ok(solver) = NelderMead::new(simplex).with_sd_tolerance(tol) else {
            break;
        };
        let Ok(res) = Executor::new(Objective(f), solver).configure(|s| s.max_iters(max_iters)).run() else {
            break;
        };
        let state = res.state();
        let (Some(x), val) = (state.get_best_param().cloned(), state.get_best_cost()) else {
            break;
        };
        let improved = best_val - val;
        if val < best_val {
            best = x;
            best_val = val;
        }
        if !(improved > tol) {
            break;
        }
    }
    (best, best_val)
}
