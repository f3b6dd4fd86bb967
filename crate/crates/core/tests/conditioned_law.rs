use coexist_core::env::{make_discrete_env, make_gaussian_env, RhoParam};
use coexist_core::estimators::{brute_force_exit, brute_force_exit_endpoints, total_variation};
use coexist_core::harmonic::{htransform_sample, HarmonicApprox, SamplerConfig};
use coexist_core::walk::cone_geometry;
use coexist_core::{Streams, Vec2};

fn rho(v: f64) -> RhoParam {
    RhoParam::new(v).unwrap()
}

#[test]
fn endpoint_law_matches_enumeration_for_several_correlations() {
    for (r, x) in [(-0.5, Vec2::new(1.5, 0.5)), (0.5, Vec2::new(0.5, 0.5)), (0.9, Vec2::new(2.5, 1.5))] {
        let spec = make_discrete_env(rho(r));
        let approx = HarmonicApprox::with_defaults(cone_geometry(rho(r)).unwrap());
        let exact = brute_force_exit_endpoints(&spec, x, 6).unwrap();
        let e = htransform_sample(&approx, &spec, x, 6, &SamplerConfig::new(40_000), &Streams::new(1, "tv")).unwrap();
        let tv = total_variation(&exact, x, &e.positions, &e.conditioned_weights());
        assert!(tv < 0.05, "rho {r}: tv {tv}");
        let p = brute_force_exit(&spec, x, 6).unwrap();
        let rel = (e.survival_estimate() - p).abs() / p;
        assert!(rel < 0.03, "rho {r}: {} vs {p}", e.survival_estimate());
    }
}

#[test]
fn conditioned_minimum_dominates_the_free_one() {
    // Empirical CDFs of the terminal minimum coordinate, conditioned below free.
    let spec = make_gaussian_env(rho(0.0));
    let x = Vec2::new(1.0, 1.0);
    let n = 256;
    let approx = HarmonicApprox::with_defaults(cone_geometry(rho(0.0)).unwrap());
    let e = htransform_sample(&approx, &spec, x, n, &SamplerConfig::new(20_000), &Streams::new(2, "dom")).unwrap();
    let sampler = spec.sampler();
    let free: Vec<f64> = (0..20_000u64)
        .map(|i| {
            let mut rng = Streams::new(2, "free").rng(i);
            let mut y = x;
            for _ in 0..n {
                y = y + Vec2::from(sampler.draw(&mut rng));
            }
            y.min_coord()
        })
        .collect();
    let ess = coexist_core::harmonic::effective_sample_size(&e.weights);
    for level in [0.0, 2.0, 5.0, 10.0, 20.0, 40.0] {
        let cond: f64 = e.positions.iter().zip(&e.weights).filter(|(y, _)| y.min_coord() <= level).map(|(_, w)| w).sum();
        let fr = free.iter().filter(|&&m| m <= level).count() as f64 / free.len() as f64;
        let se = (cond * (1.0 - cond) / ess + fr * (1.0 - fr) / free.len() as f64).sqrt();
        assert!(cond <= fr + 2.0 * se, "level {level}: conditioned {cond} free {fr}");
    }
}
