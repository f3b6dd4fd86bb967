//! Exponent fits, exact enumeration oracles and the conditioned-law checks.

mod fit;
mod meander;
mod oracle;
mod zs;

pub use fit::{fit_power_law, ExponentFit, DEFAULT_N_MIN};
pub use meander::{ks_distance, ks_weighted, meander_consistency, MeanderConfig, MeanderMode, MeanderReport, MeanderRow};
pub use oracle::{
    brute_force_coexistence, brute_force_coexistence_moments, brute_force_exit, brute_force_exit_endpoints,
    brute_force_exit_moments, enumerate_reversed, oracle_coexistence, oracle_exit, total_variation, ExactMoments,
    OracleReport, MAX_ENUMERATION_DEPTH,
};
pub use zs::{zs_deviation, ZsReport};

use crate::env::RhoParam;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// `pi / (2 arccos(-rho))`, the co-existence exponent.
pub fn theta_formula(rho: RhoParam) -> Result<f64> {
    if rho.is_boundary() {
        return Err(Error::BoundaryRho { rho: rho.value() });
    }
    Ok(theta_of(rho.value()))
}

pub fn theta_of<F: Real>(rho: F) -> F {
    F::PI() / (F::of(2.0) * (-rho).acos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::walk::cone_geometry;

    fn theta(v: f64) -> f64 {
        theta_formula(RhoParam::new(v).unwrap()).unwrap()
    }

    #[test]
    fn closed_form_values() {
        assert_eq!(theta(0.0), 1.0);
        assert!((theta(-0.5) - 1.5).abs() < 1e-15);
        assert!((theta(0.5) - 0.75).abs() < 1e-15);
        assert!((theta_of(-0.5f32) - 1.5).abs() < 1e-6);
    }

    #[test]
    fn boundary_is_rejected() {
        assert!(theta_formula(RhoParam::new(1.0).unwrap()).is_err());
        assert!(theta_formula(RhoParam::new(-1.0).unwrap()).is_err());
    }

    #[test]
    fn strictly_decreasing_with_limits() {
        let grid: Vec<f64> = (-999..=999).map(|k| k as f64 * 1e-3).collect();
        let values: Vec<f64> = grid.iter().map(|&r| theta(r)).collect();
        assert!(values.windows(2).all(|w| w[0] > w[1]));
        assert!(values.iter().all(|&t| t > 0.5));
        assert!(values[0] > 10.0);
        assert!(values[values.len() - 1] < 0.52);
    }

    #[test]
    fn cone_exponent_is_twice_theta() {
        for k in -99..=99 {
            let r = RhoParam::new(k as f64 / 100.0).unwrap();
            let g = cone_geometry(r).unwrap();
            assert!((g.p - 2.0 * theta_formula(r).unwrap()).abs() < 1e-12 * g.p);
        }
    }
}
