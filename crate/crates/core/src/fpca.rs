//! Functional principal components on an age grid and the two-level
//! (common plus population-specific) decomposition built on them.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::data::{AgeGrid, PopulationLabel};
use crate::error::{Error, Result};

const ZERO_EIGEN_RATIO: f64 = 1e-12;

/// Trapezoidal quadrature weights on the grid.
pub fn quadrature_weights(grid: &AgeGrid) -> DVector<f64> {
    let a = grid.ages();
    let p = a.len();
    DVector::from_fn(p, |i, _| {
        let left = if i > 0 { a[i] - a[i - 1] } else { 0.0 };
        let right = if i + 1 < p { a[i + 1] - a[i] } else { 0.0 };
        0.5 * (left + right)
    })
}

/// Eigenfunctions (rows, `K x p`), their eigenvalues and the `n x K` scores.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub eigenfunctions: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub scores: DMatrix<f64>,
    /// Every positive eigenvalue, retained or not.
    pub spectrum: Vec<f64>,
}

impl EigenSystem {
    pub fn empty(n: usize, p: usize) -> Self {
        Self { eigenfunctions: DMatrix::zeros(0, p), eigenvalues: Vec::new(), scores: DMatrix::zeros(n, 0), spectrum: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn total_variance(&self) -> f64 {
        self.spectrum.iter().sum()
    }

    pub fn retained_variance(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    /// `scores * eigenfunctions`, an `n x p` matrix.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.scores * &self.eigenfunctions
    }

    /// Curve built from one row of scores.
    pub fn curve(&self, scores: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.eigenfunctions.ncols());
        for (k, s) in scores.iter().enumerate() {
            out += self.eigenfunctions.row(k).transpose() * *s;
        }
        out
    }
}

/// Smallest count whose cumulative share of the positive spectrum reaches `threshold`.
pub fn select_components(spectrum: &[f64], threshold: f64) -> usize {
    let total: f64 = spectrum.iter().sum();
    if total <= 0.0 {
        return 0;
    }
    let mut acc = 0.0;
    for (k, l) in spectrum.iter().enumerate() {
        acc += l;
        if acc / total >= threshold - 1e-12 {
            return k + 1;
        }
    }
    spectrum.len()
}

/// FPCA of curves that are already centred (rows are years). The covariance is
/// `(1/n) X'X` under the quadrature inner product, so score variances computed
/// with divisor `n` equal the eigenvalues.
pub fn empirical_fpca(centered: &DMatrix<f64>, grid: &AgeGrid, threshold: f64) -> Result<EigenSystem> {
    let (n, p) = centered.shape();
    if n < 2 {
        return Err(Error::Structure(format!("FPCA needs at least 2 curves, got {n}")));
    }
    if p != grid.len() {
        return Err(Error::Structure(format!("curves have {p} ages, grid has {}", grid.len())));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Argument(format!("variance threshold must be in (0, 1], got {threshold}")));
    }
    if centered.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("FPCA input contains non-finite values".into()));
    }
    let q = quadrature_weights(grid);
    let sq = q.map(f64::sqrt);
    let z = DMatrix::from_fn(n, p, |t, i| centered[(t, i)] * sq[i]);
    let nf = n as f64;

    // Unit eigenvectors `v` of Z'Z/n, either directly or through the Gram matrix.
    let (values, vectors): (Vec<f64>, DMatrix<f64>) = if n < p {
        let eig = SymmetricEigen::new(&z * z.transpose() / nf);
        let lifted = z.transpose() * &eig.eigenvectors;
        let mut v = DMatrix::zeros(p, n);
        for c in 0..n {
            let norm = lifted.column(c).norm();
            if norm > 0.0 {
                v.set_column(c, &(lifted.column(c) / norm));
            }
        }
        (eig.eigenvalues.iter().copied().collect(), v)
    } else {
        let eig = SymmetricEigen::new(z.transpose() * &z / nf);
        (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
    };

    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let top = values.get(order[0]).copied().unwrap_or(0.0);
    if top <= 0.0 {
        return Ok(EigenSystem::empty(n, p));
    }
    let kept: Vec<usize> = order.into_iter().filter(|&c| values[c] > ZERO_EIGEN_RATIO * top).collect();
    let spectrum: Vec<f64> = kept.iter().map(|&c| values[c]).collect();
    let k = select_components(&spectrum, threshold);

    let mut phi = DMatrix::zeros(k, p);
    for (r, &c) in kept.iter().take(k).enumerate() {
        let mut f = DVector::from_fn(p, |i, _| vectors[(i, c)] / sq[i]);
        let big = f.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(0.0);
        if big < 0.0 {
            f = -f;
        }
        phi.set_row(r, &f.transpose());
    }
    let weighted = DMatrix::from_fn(n, p, |t, i| centered[(t, i)] * q[i]);
    let scores = weighted * phi.transpose();
    Ok(EigenSystem { eigenfunctions: phi, eigenvalues: spectrum[..k].to_vec(), scores, spectrum })
}

/// Pointwise mean over years.
pub fn mean_function(surface: &DMatrix<f64>) -> Result<DVector<f64>> {
    if surface.nrows() < 2 {
        return Err(Error::Structure(format!("mean function needs at least 2 years, got {}", surface.nrows())));
    }
    Ok(surface.row_mean().transpose())
}

/// A residual at round-off level of its source carries no signal.
fn drop_round_off(residual: &mut DMatrix<f64>, source: &DMatrix<f64>) {
    if residual.amax() <= 64.0 * f64::EPSILON * source.amax() {
        residual.fill(0.0);
    }
}

/// Mean curve and the centred surface.
pub fn center(surface: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let mu = mean_function(surface)?;
    let mut c = DMatrix::from_fn(surface.nrows(), surface.ncols(), |t, i| surface[(t, i)] - mu[i]);
    drop_round_off(&mut c, surface);
    Ok((mu, c))
}

/// Population mean minus the aggregate mean.
pub fn deviation_function(surface: &DMatrix<f64>, mu: &DVector<f64>) -> Result<DVector<f64>> {
    if surface.ncols() != mu.len() {
        return Err(Error::Structure(format!("surface has {} ages, mean has {}", surface.ncols(), mu.len())));
    }
    Ok(mean_function(surface)? - mu)
}

/// Share of variance carried by the common component.
pub fn within_cluster_variability(common: f64, specific: f64) -> Result<f64> {
    if common < 0.0 || specific < 0.0 || !common.is_finite() || !specific.is_finite() {
        return Err(Error::Argument(format!("variance sums must be finite and >= 0, got {common} and {specific}")));
    }
    if common + specific == 0.0 {
        return Err(Error::Degenerate("both variance sums are zero".into()));
    }
    Ok(common / (common + specific))
}

/// `(1/n) sum_t (f_t - mean)(f_t - mean)'`.
pub fn total_variability(surface: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mean = mean_function(surface)?;
    let c = DMatrix::from_fn(surface.nrows(), surface.ncols(), |t, i| surface[(t, i)] - mean[i]);
    Ok(c.transpose() * &c / surface.nrows() as f64)
}

/// Quadrature integral of the diagonal of [`total_variability`].
pub fn integrated_variance(surface: &DMatrix<f64>, grid: &AgeGrid) -> Result<f64> {
    let cov = total_variability(surface)?;
    let q = quadrature_weights(grid);
    Ok((0..q.len()).map(|i| q[i] * cov[(i, i)]).sum())
}

/// Per-population pieces of a [`MultilevelDecomposition`].
#[derive(Debug, Clone)]
pub struct PopulationComponent {
    pub label: PopulationLabel,
    pub eta: DVector<f64>,
    pub specific: EigenSystem,
    pub sigma2: f64,
    /// The input surface for this population.
    pub data: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct MultilevelDecomposition {
    pub grid: AgeGrid,
    pub mu: DVector<f64>,
    pub common: EigenSystem,
    pub populations: Vec<PopulationComponent>,
    pub p1: f64,
    pub p2: f64,
}

impl MultilevelDecomposition {
    pub fn n_years(&self) -> usize {
        self.common.scores.nrows()
    }

    pub fn component(&self, label: &PopulationLabel) -> Option<&PopulationComponent> {
        self.populations.iter().find(|c| &c.label == label)
    }

    /// In-sample fit `mu + eta + sum beta phi + sum gamma psi` for population `j`.
    pub fn fitted(&self, j: usize) -> DMatrix<f64> {
        let c = &self.populations[j];
        let mut out = self.common.reconstruct() + c.specific.reconstruct();
        for mut row in out.row_iter_mut() {
            row += (&self.mu + &c.eta).transpose();
        }
        out
    }

    pub fn residuals(&self, j: usize) -> DMatrix<f64> {
        &self.populations[j].data - self.fitted(j)
    }

    /// Common share of the total variance for population `j`.
    pub fn within_cluster_variability(&self, j: usize) -> Result<f64> {
        within_cluster_variability(self.common.total_variance(), self.populations[j].specific.total_variance())
    }
}

fn pooled_variance(e: &DMatrix<f64>) -> f64 {
    let n = e.len();
    if n < 2 {
        return 0.0;
    }
    let mean = e.mean();
    e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Common FPCA on the centred aggregate surface, then a residual FPCA per
/// population after removing the mean, the population deviation and the
/// retained common components.
pub fn multilevel_decompose(
    total: &DMatrix<f64>,
    populations: &[(&PopulationLabel, &DMatrix<f64>)],
    grid: &AgeGrid,
    p1: f64,
    p2: f64,
) -> Result<MultilevelDecomposition> {
    if populations.is_empty() {
        return Err(Error::Structure("multilevel decomposition needs at least one population".into()));
    }
    let (n, p) = total.shape();
    for (label, f) in populations {
        if f.shape() != (n, p) {
            return Err(Error::Structure(format!("{label}: surface {:?} does not match aggregate {:?}", f.shape(), (n, p))));
        }
    }
    let (mu, centered) = center(total)?;
    let common = empirical_fpca(&centered, grid, p1)?;
    let common_fit = common.reconstruct();

    let comps = populations
        .par_iter()
        .map(|(label, f)| {
            let eta = deviation_function(f, &mu)?;
            let mut u = DMatrix::from_fn(n, p, |t, i| f[(t, i)] - mu[i] - eta[i] - common_fit[(t, i)]);
            drop_round_off(&mut u, f);
            let specific = empirical_fpca(&u, grid, p2)?;
            let e = &u - specific.reconstruct();
            Ok(PopulationComponent {
                label: (*label).clone(),
                eta,
                sigma2: pooled_variance(&e),
                specific,
                data: (*f).clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MultilevelDecomposition { grid: grid.clone(), mu, common, populations: comps, p1, p2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(p: usize) -> AgeGrid {
        AgeGrid::single_years(0, p as u32 - 1, true).unwrap()
    }

    fn centered_random(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.random::<f64>() - 0.5);
        let m = x.row_mean();
        DMatrix::from_fn(n, p, |t, i| x[(t, i)] - m[i])
    }

    fn inner(a: &[f64], b: &[f64], q: &DVector<f64>) -> f64 {
        a.iter().zip(b).zip(q.iter()).map(|((a, b), q)| a * b * q).sum()
    }

    #[test]
    fn trapezoid_weights_on_unit_grid() {
        let q = quadrature_weights(&grid(4));
        assert_eq!(q.as_slice(), &[0.5, 1.0, 1.0, 0.5]);
    }

    #[test]
    fn rank_one_surface() {
        let g = grid(12);
        let v: Vec<f64> = (0..12).map(|i| (i as f64 * 0.4).sin() + 0.2).collect();
        let c: Vec<f64> = [-2.0, -1.0, 0.5, 1.0, 1.5].to_vec();
        let x = DMatrix::from_fn(5, 12, |t, i| c[t] * v[i]);
        let sys = empirical_fpca(&x, &g, 0.9).unwrap();
        assert_eq!(sys.len(), 1);
        assert!(sys.spectrum.len() == 1 || sys.spectrum[1] <= 1e-10);
        let phi: Vec<f64> = sys.eigenfunctions.row(0).iter().copied().collect();
        let ratio = phi[3] / v[3];
        assert!(phi.iter().zip(&v).all(|(a, b)| (a - ratio * b).abs() < 1e-10));
    }

    #[test]
    fn threshold_selection() {
        assert_eq!(select_components(&[9.0, 0.5, 0.5], 0.9), 1);
        assert_eq!(select_components(&[9.0, 0.5, 0.5], 0.95), 2);
        assert_eq!(select_components(&[], 0.9), 0);
    }

    #[test]
    fn all_zero_input_is_empty() {
        let sys = empirical_fpca(&DMatrix::zeros(4, 5), &grid(5), 0.9).unwrap();
        assert!(sys.is_empty());
        assert_eq!(sys.scores.shape(), (4, 0));
    }

    #[test]
    fn mean_and_deviation() {
        let f = DMatrix::from_row_slice(2, 3, &[0., 0., 0., 2., 2., 2.]);
        assert_eq!(mean_function(&f).unwrap().as_slice(), &[1.0, 1.0, 1.0]);
        let mu = DVector::from_element(3, 1.0);
        let shifted = f.map(|v| v - 0.1);
        let eta = deviation_function(&shifted, &mu).unwrap();
        assert!(eta.iter().all(|v| (v + 0.1).abs() < 1e-15));
    }

    #[test]
    fn variability_helpers() {
        assert_eq!(within_cluster_variability(9.0, 1.0).unwrap(), 0.9);
        assert_eq!(within_cluster_variability(3.0, 0.0).unwrap(), 1.0);
        assert!(within_cluster_variability(0.0, 0.0).is_err());
        let cov = total_variability(&DMatrix::from_element(5, 3, 2.0)).unwrap();
        assert!(cov.iter().all(|v| *v == 0.0));
        let x = DMatrix::from_row_slice(3, 2, &[1., 0., 2., 4., 3., 2.]);
        let cov = total_variability(&x).unwrap();
        assert!((cov[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
        assert!((cov[(1, 1)] - 8.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn identical_populations_leave_no_residual() {
        let g = grid(8);
        let f = centered_random(10, 8, 3).map(|v| v - 4.0);
        let label: PopulationLabel = "X:female".parse().unwrap();
        let d = multilevel_decompose(&f, &[(&label, &f)], &g, 0.9, 0.9).unwrap();
        assert!(d.populations[0].eta.iter().all(|v| v.abs() < 1e-12));
        // Only the components the common threshold dropped remain.
        let full = multilevel_decompose(&f, &[(&label, &f)], &g, 1.0, 1.0).unwrap();
        assert_eq!(full.populations[0].specific.len(), 0);
        assert!(full.populations[0].sigma2 < 1e-20);
    }

    #[test]
    fn full_reconstruction_and_invariants_on_50x96() {
        let g = grid(96);
        let total = centered_random(50, 96, 11).map(|v| v - 3.0);
        let f1 = &total + centered_random(50, 96, 12) * 0.3;
        let f2 = &total + centered_random(50, 96, 13) * 0.3;
        let (l1, l2): (PopulationLabel, PopulationLabel) = ("X:female".parse().unwrap(), "X:male".parse().unwrap());
        let d = multilevel_decompose(&total, &[(&l1, &f1), (&l2, &f2)], &g, 1.0, 1.0).unwrap();
        for j in 0..2 {
            assert!(d.residuals(j).amax() <= 1e-8);
        }
        let q = quadrature_weights(&g);
        let phi = &d.common.eigenfunctions;
        for a in 0..phi.nrows() {
            for b in 0..phi.nrows() {
                let ip = inner(phi.row(a).transpose().as_slice(), phi.row(b).transpose().as_slice(), &q);
                assert!((ip - if a == b { 1.0 } else { 0.0 }).abs() <= 1e-8);
            }
        }
        for k in 0..d.common.len() {
            let s = d.common.scores.column(k);
            let mean = s.mean();
            let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / s.len() as f64;
            assert!(mean.abs() <= 1e-8);
            assert!((var - d.common.eigenvalues[k]).abs() <= 1e-6 * d.common.eigenvalues[k]);
        }
    }

    #[test]
    fn gram_and_covariance_paths_agree() {
        let g = grid(6);
        let x = centered_random(8, 6, 5);
        let wide = empirical_fpca(&x, &g, 1.0).unwrap();
        let x_t = x.rows(0, 5).into_owned();
        let x_t = DMatrix::from_fn(5, 6, |t, i| x_t[(t, i)] - x_t.column(i).mean());
        let narrow = empirical_fpca(&x_t, &g, 1.0).unwrap();
        assert_eq!(wide.len(), 6);
        assert!(narrow.len() <= 4);
        for k in 0..narrow.len() {
            let s = narrow.scores.column(k);
            let var = s.iter().map(|v| v * v).sum::<f64>() / 5.0;
            assert!((var - narrow.eigenvalues[k]).abs() < 1e-10 * narrow.eigenvalues[k].max(1.0));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn scale_equivariance(seed in 0u64..1000, c in 0.1f64..10.0) {
            let g = grid(9);
            let x = centered_random(7, 9, seed);
            let a = empirical_fpca(&x, &g, 0.8).unwrap();
            let b = empirical_fpca(&(&x * c), &g, 0.8).unwrap();
            prop_assert_eq!(a.len(), b.len());
            for k in 0..a.len() {
                prop_assert!((b.eigenvalues[k] - c * c * a.eigenvalues[k]).abs() <= 1e-9 * b.eigenvalues[k]);
                let d = (&a.eigenfunctions.row(k) - &b.eigenfunctions.row(k)).amax();
                prop_assert!(d <= 1e-6, "eigenfunction {} moved by {}", k, d);
            }
        }

        #[test]
        fn eigenvalues_descend_and_sign_rule_holds(seed in 0u64..1000) {
            let g = grid(10);
            let sys = empirical_fpca(&centered_random(12, 10, seed), &g, 1.0).unwrap();
            prop_assert!(sys.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
            for k in 0..sys.len() {
                let row = sys.eigenfunctions.row(k);
                let big = row.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap();
                prop_assert!(big > 0.0);
            }
        }
    }
}
