//! Dense two-phase primal simplex for `min c'x  s.t.  Ax = b, x >= 0`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-9;
const DEGENERATE_STREAK: usize = 25;

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

struct Tableau {
    m: usize,
    width: usize,
    cells: Vec<f64>,
    cost: Vec<f64>,
    basis: Vec<usize>,
    blocked: Vec<bool>,
}

impl Tableau {
    fn at(&self, r: usize, j: usize) -> f64 {
        self.cells[r * self.width + j]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.cells[r * self.width + self.width - 1]
    }

    fn pivot(&mut self, r: usize, s: usize) {
        let w = self.width;
        let piv = self.at(r, s);
        let (before, rest) = self.cells.split_at_mut(r * w);
        let (row, after) = rest.split_at_mut(w);
        row.iter_mut().for_each(|v| *v /= piv);
        for other in before.chunks_mut(w).chain(after.chunks_mut(w)) {
            let f = other[s];
            if f != 0.0 {
                other.iter_mut().zip(row.iter()).for_each(|(o, v)| *o -= f * v);
                other[s] = 0.0;
            }
        }
        let f = self.cost[s];
        if f != 0.0 {
            self.cost.iter_mut().zip(row.iter()).for_each(|(o, v)| *o -= f * v);
            self.cost[s] = 0.0;
        }
        self.basis[r] = s;
    }

    fn price(&mut self, c: &[f64]) {
        let w = self.width;
        self.cost = vec![0.0; w];
        self.cost[..c.len()].copy_from_slice(c);
        for r in 0..self.m {
            let cb = c.get(self.basis[r]).copied().unwrap_or(0.0);
            if cb != 0.0 {
                for j in 0..w {
                    self.cost[j] -= cb * self.cells[r * w + j];
                }
            }
        }
        for r in 0..self.m {
            self.cost[self.basis[r]] = 0.0;
        }
    }

    fn entering(&self, bland: bool) -> Option<usize> {
        let candidates = (0..self.width - 1).filter(|&j| !self.blocked[j] && self.cost[j] < -COST_TOL);
        if bland {
            candidates.min()
        } else {
            candidates.min_by(|&a, &b| self.cost[a].total_cmp(&self.cost[b]).then(a.cmp(&b)))
        }
    }

    fn leaving(&self, s: usize) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for r in 0..self.m {
            let a = self.at(r, s);
            if a > PIVOT_TOL {
                let ratio = self.rhs(r).max(0.0) / a;
                best = match best {
                    Some((br, bv))
                        if bv < ratio - 1e-12 || ((bv - ratio).abs() <= 1e-12 && self.basis[br] < self.basis[r]) =>
                    {
                        Some((br, bv))
                    }
                    _ => Some((r, ratio)),
                };
            }
        }
        best
    }

    fn primal(&self, n: usize) -> Vec<f64> {
        let mut x = vec![0.0; n];
        for r in 0..self.m {
            if self.basis[r] < n {
                x[self.basis[r]] = self.rhs(r).max(0.0);
            }
        }
        x
    }

    fn run(&mut self, iterations: &mut usize, max_iterations: usize, n: usize, a: &DMatrix<f64>, b: &[f64]) -> Result<()> {
        let mut streak = 0;
        loop {
            let Some(s) = self.entering(streak > DEGENERATE_STREAK) else {
                return Ok(());
            };
            if *iterations >= max_iterations {
                let x = self.primal(n);
                let residual = (a * nalgebra::DVector::from_column_slice(&x) - nalgebra::DVector::from_column_slice(b)).amax();
                return Err(Error::NonConvergence { iterations: *iterations, residual, best: x });
            }
            let Some((r, ratio)) = self.leaving(s) else {
                return Err(Error::Numerical("linear program is unbounded".into()));
            };
            streak = if ratio <= 1e-12 { streak + 1 } else { 0 };
            self.pivot(r, s);
            *iterations += 1;
        }
    }
}

/// Solves `min c'x  s.t.  Ax = b, x >= 0`. Columns of `A` that are unit
/// vectors (with a non-negative right-hand side) seed the starting basis, and
/// artificial variables are added only for the remaining rows.
pub fn minimize(c: &[f64], a: &DMatrix<f64>, b: &[f64], max_iterations: usize) -> Result<LpSolution> {
    let (m, n) = a.shape();
    if c.len() != n || b.len() != m {
        return Err(Error::Argument(format!("lp shape mismatch: c {} / A {m}x{n} / b {}", c.len(), b.len())));
    }
    let sign: Vec<f64> = b.iter().map(|&v| if v < 0.0 { -1.0 } else { 1.0 }).collect();

    let mut basis = vec![usize::MAX; m];
    for j in 0..n {
        let col = a.column(j);
        let nz: Vec<usize> = (0..m).filter(|&r| col[r] != 0.0).collect();
        if let [r] = nz[..] {
            if basis[r] == usize::MAX && col[r] * sign[r] == 1.0 {
                basis[r] = j;
            }
        }
    }
    let art_rows: Vec<usize> = (0..m).filter(|&r| basis[r] == usize::MAX).collect();
    let total = n + art_rows.len();
    let width = total + 1;
    let mut cells = vec![0.0; m * width];
    for r in 0..m {
        for j in 0..n {
            cells[r * width + j] = a[(r, j)] * sign[r];
        }
        cells[r * width + total] = b[r] * sign[r];
    }
    for (k, &r) in art_rows.iter().enumerate() {
        cells[r * width + n + k] = 1.0;
        basis[r] = n + k;
    }
    let mut tab = Tableau { m, width, cells, cost: Vec::new(), basis, blocked: vec![false; total] };
    let mut iterations = 0;

    if !art_rows.is_empty() {
        let mut phase1 = vec![0.0; total];
        phase1[n..].iter_mut().for_each(|v| *v = 1.0);
        tab.price(&phase1);
        tab.run(&mut iterations, max_iterations, n, a, b)?;
        let infeasibility: f64 = (0..m).filter(|&r| tab.basis[r] >= n).map(|r| tab.rhs(r)).sum();
        let scale = 1.0 + b.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if infeasibility > 1e-8 * scale {
            return Err(Error::Numerical(format!("linear program is infeasible (phase-one residual {infeasibility:.3e})")));
        }
        for r in 0..m {
            if tab.basis[r] >= n {
                if let Some(j) = (0..n).find(|&j| tab.at(r, j).abs() > PIVOT_TOL) {
                    tab.pivot(r, j);
                }
            }
        }
        tab.blocked[n..].iter_mut().for_each(|v| *v = true);
    }

    tab.price(c);
    tab.run(&mut iterations, max_iterations, n, a, b)?;
    let x = tab.primal(n);
    let objective = c.iter().zip(&x).map(|(c, x)| c * x).sum();
    Ok(LpSolution { x, objective, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_problem_with_slacks() {
        // max 3x + 5y  s.t. x <= 4, 2y <= 12, 3x + 2y <= 18
        let a = DMatrix::from_row_slice(3, 5, &[1., 0., 1., 0., 0., 0., 2., 0., 1., 0., 3., 2., 0., 0., 1.]);
        let sol = minimize(&[-3., -5., 0., 0., 0.], &a, &[4., 12., 18.], 100).unwrap();
        assert!((sol.objective + 36.0).abs() < 1e-12);
        assert!((sol.x[0] - 2.0).abs() < 1e-12 && (sol.x[1] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn needs_phase_one() {
        // min x + y  s.t.  x + y - s = 2, x - y = 0
        let a = DMatrix::from_row_slice(2, 3, &[1., 1., -1., 1., -1., 0.]);
        let sol = minimize(&[1., 1., 0.], &a, &[2., 0.], 100).unwrap();
        assert!((sol.objective - 2.0).abs() < 1e-12);
        assert!((sol.x[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_is_reported() {
        let a = DMatrix::from_row_slice(2, 1, &[1., 1.]);
        assert!(minimize(&[1.], &a, &[1., 2.], 100).is_err());
    }

    #[test]
    fn iteration_cap_returns_best_iterate() {
        let a = DMatrix::from_row_slice(3, 5, &[1., 0., 1., 0., 0., 0., 2., 0., 1., 0., 3., 2., 0., 0., 1.]);
        match minimize(&[-3., -5., 0., 0., 0.], &a, &[4., 12., 18.], 1) {
            Err(Error::NonConvergence { iterations, best, .. }) => {
                assert_eq!(iterations, 1);
                assert_eq!(best.len(), 5);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
