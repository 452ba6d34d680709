//! Posterior simulation for the multilevel model and the prediction
//! intervals derived from the simulated paths.

mod gibbs;
mod paths;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::methods::{MethodInput, MultilevelFdm};

pub use gibbs::{
    omega_conditional, precision_conditional, run_gibbs, score_conditional, v_log_density, Draw, GammaParams, GibbsConfig,
    GibbsData, NormalParams, PosteriorDraws,
};
pub use paths::{simulate_paths, SamplePaths};

/// Sample quantile of sorted data, linear between order statistics
/// (`h = (n - 1) p`).
pub fn quantile(sorted: &[f64], prob: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = (n - 1) as f64 * prob.clamp(0.0, 1.0);
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

/// Pointwise `(alpha/2, 1 - alpha/2)` percentiles over paths of equal shape.
pub fn prediction_interval(paths: &[DMatrix<f64>], alpha: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Argument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let first = paths.first().ok_or_else(|| Error::Argument("no sample paths".into()))?;
    if paths.iter().any(|p| p.shape() != first.shape()) {
        return Err(Error::Structure("sample paths differ in shape".into()));
    }
    if paths.len() < 100 {
        log::warn!("only {} sample paths; percentile intervals will be rough", paths.len());
    }
    let (h, p) = first.shape();
    let mut lo = DMatrix::zeros(h, p);
    let mut hi = DMatrix::zeros(h, p);
    let mut cell = Vec::with_capacity(paths.len());
    for r in 0..h {
        for c in 0..p {
            cell.clear();
            cell.extend(paths.iter().map(|m| m[(r, c)]));
            cell.sort_by(f64::total_cmp);
            lo[(r, c)] = quantile(&cell, alpha / 2.0);
            hi[(r, c)] = quantile(&cell, 1.0 - alpha / 2.0);
        }
    }
    Ok((lo, hi))
}

/// One-sample Kolmogorov-Smirnov test. Returns the statistic and the
/// asymptotic p-value (with the Stephens small-sample correction).
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let d = x
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let f = cdf(*v);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let p = if lambda < 0.2 {
        1.0
    } else {
        let s: f64 = (1..=100)
            .map(|k| {
                let k = k as f64;
                let sign = if k as u64 % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * k * k * lambda * lambda).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    };
    (d, p)
}

/// Gibbs sampling and path simulation for every group of a multilevel model.
/// Groups use distinct seeds derived from the configured one.
pub fn simulate_multilevel(input: &MethodInput, method: &MultilevelFdm, cfg: &GibbsConfig, horizon: usize) -> Result<SamplePaths> {
    cfg.validate()?;
    let mut out = SamplePaths { labels: Vec::new(), paths: Vec::new() };
    for (g, dec) in method.decompose(input)?.iter().enumerate() {
        let observed = dec
            .populations
            .iter()
            .map(|c| Ok(input.surface(&c.label)?.observed.clone()))
            .collect::<Result<Vec<_>>>()?;
        let data = GibbsData::new(dec, observed)?;
        let cfg = GibbsConfig { seed: cfg.seed.wrapping_add(g as u64), ..cfg.clone() };
        let post = run_gibbs(&data, &cfg)?;
        out.extend(simulate_paths(&data, &post, method.score_model(), horizon, &cfg)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{AgeGrid, PopulationLabel, Sex};
    use crate::fpca::multilevel_decompose;
    use crate::rng;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};
    use statrs::distribution::{ContinuousCDF, Gamma as GammaDist, Normal};

    #[test]
    fn quantile_interpolates_order_statistics() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&x, 0.5), 2.5);
        assert!((quantile(&x, 0.1) - 1.3).abs() < 1e-12);
        assert_eq!(quantile(&x, 0.0), 1.0);
        assert_eq!(quantile(&x, 1.0), 4.0);
        assert_eq!(quantile(&[7.0], 0.3), 7.0);
    }

    #[test]
    fn interval_of_shifted_paths() {
        let paths: Vec<DMatrix<f64>> = (0..101).map(|b| DMatrix::from_element(2, 3, b as f64)).collect();
        let (lo, hi) = prediction_interval(&paths, 0.2).unwrap();
        assert!(lo.iter().all(|v| (*v - 10.0).abs() < 1e-12));
        assert!(hi.iter().all(|v| (*v - 90.0).abs() < 1e-12));
        assert!(prediction_interval(&paths, 1.0).is_err());
    }

    #[test]
    fn ks_accepts_matching_and_rejects_shifted() {
        let mut r = rng::stream(3, &[]);
        let x: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut r)).collect();
        let n = Normal::new(0.0, 1.0).unwrap();
        assert!(ks_test(&x, |v| n.cdf(v)).1 > 0.01);
        let m = Normal::new(0.1, 1.0).unwrap();
        assert!(ks_test(&x, |v| m.cdf(v)).1 < 1e-6);
    }

    #[test]
    fn gamma_sampler_matches_its_distribution() {
        let mut r = rng::stream(11, &[]);
        let g = omega_conditional(4.0, 1.0, 1, 0.7);
        assert_eq!(g, GammaParams { shape: 2.5, rate: 2.35 });
        let x: Vec<f64> = (0..10_000).map(|_| g.sample(&mut r)).collect();
        let d = GammaDist::new(g.shape, g.rate).unwrap();
        assert!(ks_test(&x, |v| d.cdf(v)).1 > 0.01);
    }

    #[test]
    fn score_conditional_is_shrunk_projection() {
        // Equal variances: mean = lambda J S / (lambda J S + s2) times the
        // least-squares projection, variance = lambda s2 / (lambda J S + s2).
        let (lambda, s2, ss, j, proj) = (2.0, 0.5, 3.0, 2.0, 0.4);
        let c = score_conditional(lambda, j * ss / s2, j * ss * proj / s2);
        let shrink = lambda * j * ss / (lambda * j * ss + s2);
        assert!((c.mean - shrink * proj).abs() < 1e-14);
        assert!((c.var - lambda * s2 / (lambda * j * ss + s2)).abs() < 1e-14);
        assert_eq!(score_conditional(0.0, 1.0, 1.0), NormalParams { mean: 0.0, var: 0.0 });
    }

    #[test]
    fn v_density_matches_direct_form() {
        let w = [0.5, 1.2, 2.0];
        let v = 3.0;
        let eta = 0.1 + 0.5 * w.iter().map(|x: &f64| -x.ln() + x).sum::<f64>();
        let gamma15 = std::f64::consts::PI.sqrt() / 2.0;
        let direct = (1.5f64.powf(1.5 * 3.0) / gamma15.powi(3) * (-eta * v).exp()).ln();
        assert!((v_log_density(v, &w, 10.0) - direct).abs() < 1e-12);
        assert_eq!(v_log_density(-1.0, &w, 10.0), f64::NEG_INFINITY);
    }

    fn fixture(seed: u64) -> GibbsData {
        let (n, p) = (20, 6);
        let grid = AgeGrid::single_years(0, p as u32 - 1, true).unwrap();
        let mut r = rng::stream(seed, &[]);
        let mut k = 0.0;
        let trend: Vec<f64> = (0..n)
            .map(|_| {
                k += -0.1 + 0.05 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r);
                k
            })
            .collect();
        let surfaces: Vec<(PopulationLabel, DMatrix<f64>, DMatrix<f64>)> = [Sex::Female, Sex::Male]
            .into_iter()
            .enumerate()
            .map(|(j, sex)| {
                let f = DMatrix::from_fn(n, p, |t, i| {
                    -6.0 + 0.5 * i as f64 + 0.1 * j as f64 + trend[t] * (1.0 + 0.1 * i as f64) + 0.02 * r.random::<f64>()
                });
                let y = f.map(|v| v + 0.01 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r));
                (PopulationLabel::new("SYN", sex, None), f, y)
            })
            .collect();
        let total = (&surfaces[0].1 + &surfaces[1].1) / 2.0;
        let pops: Vec<(&PopulationLabel, &DMatrix<f64>)> = surfaces.iter().map(|(l, f, _)| (l, f)).collect();
        let dec = multilevel_decompose(&total, &pops, &grid, 0.9, 0.9).unwrap();
        GibbsData::new(&dec, surfaces.iter().map(|s| s.2.clone()).collect()).unwrap()
    }

    fn small_config() -> GibbsConfig {
        GibbsConfig { total_draws: 600, burn_in: 300, thin: 3, chains: 2, seed: 5, ..GibbsConfig::default() }
    }

    #[test]
    fn sampler_is_deterministic_and_keeps_the_right_count() {
        let data = fixture(1);
        let cfg = small_config();
        let a = run_gibbs(&data, &cfg).unwrap();
        let b = run_gibbs(&data, &cfg).unwrap();
        assert_eq!(a.draws.len(), 200);
        assert_eq!(a.draws, b.draws);
        for acc in a.acceptance.iter().flatten() {
            assert!(*acc > 0.05 && *acc < 0.8, "acceptance {acc}");
        }
    }

    #[test]
    fn posterior_variances_recover_the_noise_levels() {
        let data = fixture(2);
        let post = run_gibbs(&data, &small_config()).unwrap();
        let mean_s2: f64 = post.draws.iter().map(|d| d.sigma2[0]).sum::<f64>() / post.draws.len() as f64;
        // Noise added to the smooth surfaces is uniform with width 0.02.
        let truth = 0.02f64.powi(2) / 12.0;
        assert!(mean_s2 > 0.5 * truth && mean_s2 < 2.0 * truth, "{mean_s2} vs {truth}");
        let d2: f64 = post.draws.iter().map(|d| d.delta2[0].mean()).sum::<f64>() / post.draws.len() as f64;
        assert!(d2 > 0.25e-4 && d2 < 4e-4, "{d2}");
    }

    #[test]
    fn paths_have_the_requested_shape() {
        let data = fixture(3);
        let cfg = small_config();
        let post = run_gibbs(&data, &cfg).unwrap();
        let model = crate::ts::score_model("rwf").unwrap();
        let sims = simulate_paths(&data, &post, &model, 4, &cfg).unwrap();
        assert_eq!(sims.n_paths(), 200);
        assert_eq!(sims.paths[1][0].shape(), (4, 6));
        let fixed = simulate_paths(&data, &post, &model, 4, &GibbsConfig { refit_per_draw: false, ..cfg }).unwrap();
        assert_eq!(fixed.n_paths(), 200);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            GibbsConfig { burn_in: 20_000, ..GibbsConfig::default() },
            GibbsConfig { thin: 0, ..GibbsConfig::default() },
            GibbsConfig { alpha1: 0.0, ..GibbsConfig::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
        assert_eq!(GibbsConfig::default().retained_per_chain(), 1000);
    }
}
