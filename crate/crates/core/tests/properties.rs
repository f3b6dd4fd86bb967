use coexist_core::branching::{PopulationState, Quenched};
use coexist_core::env::{make_discrete_env, make_gaussian_env, sample_env_path, RhoParam};
use coexist_core::estimators::{
    brute_force_coexistence_moments, enumerate_reversed, theta_formula,
};
use coexist_core::harmonic::{effective_sample_size, htransform_sample, HarmonicApprox, SamplerConfig};
use coexist_core::walk::{cone_geometry, exit_time, walk_from_env};
use coexist_core::{Streams, Vec2};
use proptest::prelude::*;

fn rho(v: f64) -> RhoParam {
    RhoParam::new(v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn survival_is_nested(r in -0.95f64..0.95, x1 in 0.01f64..5.0, x2 in 0.01f64..5.0, seed in 0u64..1000) {
        let spec = make_gaussian_env(rho(r));
        let path = sample_env_path(&spec, 60, &Streams::new(seed, "nested").id(0)).unwrap();
        let rec = exit_time(Vec2::new(x1, x2), &walk_from_env(&path)).unwrap();
        for n in 1..=60 {
            if rec.survives(n) == Some(true) {
                for m in 0..n {
                    prop_assert_eq!(rec.survives(m), Some(true));
                }
            }
        }
    }

    #[test]
    fn sampler_weights_stay_finite(r in -0.9f64..0.9, x1 in 0.05f64..3.0, x2 in 0.05f64..3.0, n in 1usize..40, seed in 0u64..100) {
        let approx = HarmonicApprox::with_defaults(cone_geometry(rho(r)).unwrap());
        let spec = make_gaussian_env(rho(r));
        let e = htransform_sample(&approx, &spec, Vec2::new(x1, x2), n, &SamplerConfig::new(100), &Streams::new(seed, "w")).unwrap();
        prop_assert!(e.weights.iter().all(|w| w.is_finite() && *w >= 0.0));
        prop_assert!(e.ess.is_finite() && e.ess > 0.0 && e.ess <= 100.0 + 1e-9);
        prop_assert!(e.positions.iter().zip(&e.weights).all(|(y, w)| *w == 0.0 || y.is_interior()));
        prop_assert!(e.survival_estimate() >= 0.0 && e.survival_estimate() <= 1.0 + 1e-9);
        prop_assert!(effective_sample_size(&e.conditioned_weights()) > 0.0);
    }

    #[test]
    fn theta_is_decreasing(a in -0.999f64..0.999, b in -0.999f64..0.999) {
        prop_assume!(a < b);
        prop_assert!(theta_formula(rho(a)).unwrap() > theta_formula(rho(b)).unwrap());
    }

    #[test]
    fn enumeration_order_does_not_matter(r in -1.0f64..=1.0, n in 1usize..=5, z1 in 1u64..4, z2 in 1u64..4) {
        let spec = make_discrete_env(rho(r));
        let a = brute_force_coexistence_moments(&spec, PopulationState::new(z1, z2), n).unwrap();
        let f = move |steps: &[[f64; 2]]| {
            let mut q = Quenched::<f64>::default();
            steps.iter().for_each(|&x| q.push_step(x));
            q.coexistence([z1, z2])
        };
        let b = enumerate_reversed(&spec, n, &f).unwrap();
        prop_assert!((a.mean - b.mean).abs() < 1e-14);
        prop_assert!((a.second - b.second).abs() < 1e-14);
    }

    #[test]
    fn coexistence_below_each_single_exactly(r in -1.0f64..=1.0, n in 1usize..=5, z1 in 1u64..4, z2 in 1u64..4) {
        let spec = make_discrete_env(rho(r));
        let both = brute_force_coexistence_moments(&spec, PopulationState::new(z1, z2), n).unwrap().mean;
        let single = |i: usize, zi: u64| {
            let f = move |steps: &[[f64; 2]]| {
                let mut q = Quenched::<f64>::default();
                steps.iter().for_each(|&x| q.push_step(x));
                q.survival(i, zi)
            };
            enumerate_reversed(&spec, n, &f).unwrap().mean
        };
        prop_assert!(both <= single(0, z1) + 1e-15);
        prop_assert!(both <= single(1, z2) + 1e-15);
    }
}
