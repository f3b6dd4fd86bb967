use serde::{Deserialize, Serialize};

use crate::curve::SurvivalCurve;
use crate::error::{Error, Result};

pub const DEFAULT_N_MIN: usize = 64;
const Z95: f64 = 1.959963984540054;

/// `log y = intercept + slope * log n` fitted on a survival curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub slope: f64,
    /// `log` of the amplitude.
    pub intercept: f64,
    pub stderr: f64,
    pub ci: (f64, f64),
    pub n_min: usize,
    pub n_max: usize,
    pub points: usize,
    /// Regression weight per used point, aligned with the used rows.
    pub weights: Vec<f64>,
    /// Rows at or above `n_min` dropped for a zero estimate.
    pub excluded_zero: usize,
    pub flags: Vec<String>,
}

/// Weighted least squares of `log estimate` on `log n` for rows with
/// `n >= n_min`, weights `(estimate / stderr)^2`.
///
/// The slope stderr is the delta-method value, inflated by
/// `sqrt(chi2 / dof)` when the scatter exceeds the quoted errors. Curves
/// without stderr (all zero) fall back to ordinary least squares with the
/// residual-based stderr.
pub fn fit_power_law(curve: &SurvivalCurve, n_min: usize) -> Result<ExponentFit> {
    let mut flags = Vec::new();
    let candidates: Vec<_> = curve.rows.iter().filter(|r| r.n >= n_min.max(1)).collect();
    let excluded_zero = candidates.iter().filter(|r| !(r.estimate > 0.0)).count();
    let used: Vec<_> = candidates.into_iter().filter(|r| r.estimate > 0.0 && r.estimate.is_finite()).collect();
    if excluded_zero > 0 {
        flags.push(format!("{excluded_zero} zero estimates excluded"));
    }
    if used.len() < 4 {
        return Err(Error::TooFewPoints { usable: used.len() });
    }

    let xs: Vec<f64> = used.iter().map(|r| (r.n as f64).ln()).collect();
    let ys: Vec<f64> = used.iter().map(|r| r.estimate.ln()).collect();
    let have_errors = used.iter().all(|r| r.stderr > 0.0 && r.stderr.is_finite());
    if !have_errors && used.iter().any(|r| r.stderr > 0.0) {
        flags.push("some rows lack a stderr; fitted unweighted".into());
    }
    let weights: Vec<f64> = if have_errors {
        used.iter().map(|r| (r.estimate / r.stderr).powi(2)).collect()
    } else {
        vec![1.0; used.len()]
    };

    let sw: f64 = weights.iter().sum();
    let xbar = weights.iter().zip(&xs).map(|(w, x)| w * x).sum::<f64>() / sw;
    let ybar = weights.iter().zip(&ys).map(|(w, y)| w * y).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for ((w, x), y) in weights.iter().zip(&xs).zip(&ys) {
        sxx += w * (x - xbar) * (x - xbar);
        sxy += w * (x - xbar) * (y - ybar);
    }
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let dof = (used.len() - 2) as f64;
    let chi2: f64 = weights
        .iter()
        .zip(&xs)
        .zip(&ys)
        .map(|((w, x), y)| w * (y - intercept - slope * x).powi(2))
        .sum();

    let stderr = if have_errors {
        let scale = (chi2 / dof).max(1.0);
        if scale > 1.0 {
            flags.push(format!("scatter exceeds quoted errors; stderr scaled by {:.3}", scale.sqrt()));
        }
        (scale / sxx).sqrt()
    } else {
        (chi2 / dof / sxx).sqrt()
    };

    Ok(ExponentFit {
        slope,
        intercept,
        stderr,
        ci: (slope - Z95 * stderr, slope + Z95 * stderr),
        n_min,
        n_max: used.last().unwrap().n,
        points: used.len(),
        weights,
        excluded_zero,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::{CurveKind, CurveMeta, CurveRow};
    use crate::env::EnvFamily;
    use crate::rng::Streams;
    use proptest::prelude::*;
    use rand_distr::{Binomial, Distribution};

    fn curve(rows: Vec<CurveRow>) -> SurvivalCurve {
        SurvivalCurve {
            rows,
            meta: CurveMeta {
                kind: CurveKind::Coexist,
                rho: 0.0,
                family: EnvFamily::GaussianSigmoid,
                z: [1, 1],
                x: None,
                seed: 0,
            },
            warnings: Vec::new(),
        }
    }

    fn exact(f: impl Fn(f64) -> f64, ns: &[usize]) -> SurvivalCurve {
        curve(ns.iter().map(|&n| CurveRow { n, estimate: f(n as f64), stderr: 0.0, replicas: 1 }).collect())
    }

    const GRID: [usize; 6] = [64, 128, 256, 512, 1024, 2048];

    #[test]
    fn noiseless_power_law() {
        let fit = fit_power_law(&exact(|n| 7.0 * n.powf(-1.5), &GRID), 64).unwrap();
        assert!((fit.slope + 1.5).abs() < 1e-12);
        assert!((fit.intercept - 7f64.ln()).abs() < 1e-10);
        assert!(fit.stderr < 1e-12);
        assert!(fit.ci.0 <= fit.slope && fit.slope <= fit.ci.1);
        assert_eq!(fit.points, 6);
    }

    #[test]
    fn flat_line() {
        let fit = fit_power_law(&exact(|_| 0.3, &GRID), 64).unwrap();
        assert!(fit.slope.abs() < 1e-14);
    }

    #[test]
    fn too_few_points_and_zero_exclusion() {
        let c = exact(|n| 1.0 / n, &GRID);
        assert_eq!(fit_power_law(&c, 512), Err(Error::TooFewPoints { usable: 3 }));
        let mut c = exact(|n| 1.0 / n, &GRID);
        c.rows[5].estimate = 0.0;
        let fit = fit_power_law(&c, 64).unwrap();
        assert_eq!(fit.excluded_zero, 1);
        assert_eq!(fit.points, 5);
        assert!(!fit.flags.is_empty());
        c.rows[4].estimate = 0.0;
        c.rows[3].estimate = 0.0;
        assert!(fit_power_law(&c, 64).is_err());
    }

    #[test]
    fn n_min_cuts_the_curvature() {
        let c = exact(|n| 1.0 / n + 1.0 / (n * n), &[1, 2, 4, 8, 64, 128, 256, 512]);
        let all = fit_power_law(&c, 1).unwrap();
        let tail = fit_power_law(&c, 64).unwrap();
        assert!((tail.slope + 1.0).abs() < (all.slope + 1.0).abs());
    }

    #[test]
    fn ci_coverage_under_binomial_noise() {
        let replicas = 100_000u64;
        let mut covered = 0;
        for rep in 0..100 {
            let mut rng = Streams::new(77, "coverage").rng(rep);
            let rows = GRID
                .iter()
                .map(|&n| {
                    let p = 5.0 / n as f64;
                    let k = Binomial::new(replicas, p).unwrap().sample(&mut rng);
                    let est = k as f64 / replicas as f64;
                    CurveRow { n, estimate: est, stderr: (est * (1.0 - est) / replicas as f64).sqrt(), replicas }
                })
                .collect();
            let fit = fit_power_law(&curve(rows), 64).unwrap();
            covered += (fit.ci.0 <= -1.0 && -1.0 <= fit.ci.1) as u32;
        }
        assert!(covered >= 90, "covered {covered}");
    }

    proptest! {
        #[test]
        fn rescaling_invariance(
            slope in -3.0f64..0.5,
            amp in 0.01f64..10.0,
            c in 2usize..16,
            noise in proptest::collection::vec(-0.2f64..0.2, 6),
            rel in proptest::collection::vec(0.01f64..0.3, 6),
        ) {
            let rows: Vec<CurveRow> = GRID.iter().zip(&noise).zip(&rel).map(|((&n, e), r)| {
                let y = amp * (n as f64).powf(slope) * e.exp();
                CurveRow { n, estimate: y, stderr: r * y, replicas: 1 }
            }).collect();
            let base = fit_power_law(&curve(rows.clone()), 64).unwrap();
            let scale = (c as f64).powf(base.slope);
            let moved: Vec<CurveRow> = rows.iter().map(|r| CurveRow {
                n: r.n * c,
                estimate: r.estimate * scale,
                stderr: r.stderr * scale,
                replicas: r.replicas,
            }).collect();
            let fit = fit_power_law(&curve(moved), 64).unwrap();
            prop_assert!((fit.slope - base.slope).abs() < 1e-9);
            prop_assert!((fit.intercept - base.intercept).abs() < 1e-8);
            prop_assert!((fit.stderr - base.stderr).abs() < 1e-9 * (1.0 + base.stderr));
        }
    }
}
