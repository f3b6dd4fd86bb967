use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::branching::{annealed_curve, AnnealedMode, PopulationState, Quenched};
use crate::env::EnvModelSpec;
use crate::error::{Error, Result};
use crate::rng::Streams;
use crate::walk::{exit_tail_curve, Point2};

pub const MAX_ENUMERATION_DEPTH: usize = 8;

type Atom = ([f64; 2], f64);

/// Exact first and second moments of a path functional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactMoments {
    pub mean: f64,
    pub second: f64,
}

impl ExactMoments {
    pub fn variance(&self) -> f64 {
        (self.second - self.mean * self.mean).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub n: usize,
    pub exact: f64,
    pub mc: f64,
    /// Standard error of the Monte Carlo mean under the exact law.
    pub stderr: f64,
    pub z: f64,
}

impl OracleReport {
    fn new(n: usize, exact: ExactMoments, mc: f64, replicas: u64) -> Self {
        let stderr = (exact.variance() / replicas as f64).sqrt();
        let diff = mc - exact.mean;
        let z = if stderr > 0.0 {
            diff / stderr
        } else if diff.abs() <= 1e-12 {
            0.0
        } else {
            f64::MAX.copysign(diff)
        };
        Self { n, exact: exact.mean, mc, stderr, z }
    }
}

fn atoms_for(spec: &EnvModelSpec, n: usize) -> Result<[Atom; 4]> {
    let atoms = spec.atoms()?;
    if n > MAX_ENUMERATION_DEPTH {
        return Err(Error::Precondition(format!("enumeration depth {n} exceeds {MAX_ENUMERATION_DEPTH}")));
    }
    Ok(atoms)
}

/// All `4^n` step sequences in lexicographic order of atom indices.
fn enumerate_forward(atoms: &[Atom; 4], n: usize, mut visit: impl FnMut(&[[f64; 2]], f64)) {
    let mut steps = vec![[0.0; 2]; n];
    for code in 0..4usize.pow(n as u32) {
        let mut prob = 1.0;
        let mut c = code;
        for step in steps.iter_mut() {
            let (x, w) = atoms[c % 4];
            *step = x;
            prob *= w;
            c /= 4;
        }
        visit(&steps, prob);
    }
}

/// The same sum by depth-first recursion with the atom order reversed.
pub fn enumerate_reversed(spec: &EnvModelSpec, n: usize, f: &dyn Fn(&[[f64; 2]]) -> f64) -> Result<ExactMoments> {
    let atoms = atoms_for(spec, n)?;
    fn go(atoms: &[Atom; 4], n: usize, path: &mut Vec<[f64; 2]>, prob: f64, f: &dyn Fn(&[[f64; 2]]) -> f64, acc: &mut ExactMoments) {
        if path.len() == n {
            let v = f(path);
            acc.mean += prob * v;
            acc.second += prob * v * v;
            return;
        }
        for &(x, w) in atoms.iter().rev() {
            path.push(x);
            go(atoms, n, path, prob * w, f, acc);
            path.pop();
        }
    }
    let mut acc = ExactMoments { mean: 0.0, second: 0.0 };
    go(&atoms, n, &mut Vec::with_capacity(n), 1.0, f, &mut acc);
    Ok(acc)
}

fn moments(spec: &EnvModelSpec, n: usize, f: impl Fn(&[[f64; 2]]) -> f64) -> Result<ExactMoments> {
    let atoms = atoms_for(spec, n)?;
    let mut acc = ExactMoments { mean: 0.0, second: 0.0 };
    enumerate_forward(&atoms, n, |steps, prob| {
        let v = f(steps);
        acc.mean += prob * v;
        acc.second += prob * v * v;
    });
    Ok(acc)
}

pub(crate) fn coexistence_of(z: [u64; 2]) -> impl Fn(&[[f64; 2]]) -> f64 {
    move |steps| {
        let mut q = Quenched::<f64>::default();
        for &x in steps {
            q.push_step(x);
        }
        q.coexistence(z)
    }
}

pub(crate) fn survives_from(x: Point2<f64>) -> impl Fn(&[[f64; 2]]) -> f64 {
    move |steps| {
        let mut y = x;
        for &d in steps {
            y = y + Point2(d);
            if !y.is_interior() {
                return 0.0;
            }
        }
        1.0
    }
}

pub fn brute_force_coexistence_moments(spec: &EnvModelSpec, z: PopulationState, n: usize) -> Result<ExactMoments> {
    moments(spec, n, coexistence_of(z.z))
}

/// `P(Z_1(n) > 0, Z_2(n) > 0)` by summing `Y(n)` over all `4^n` environments.
pub fn brute_force_coexistence(spec: &EnvModelSpec, z: PopulationState, n: usize) -> Result<f64> {
    Ok(brute_force_coexistence_moments(spec, z, n)?.mean)
}

pub fn brute_force_exit_moments(spec: &EnvModelSpec, x: Point2<f64>, n: usize) -> Result<ExactMoments> {
    moments(spec, n, survives_from(x))
}

/// `P(tau_x > n)` by enumeration.
pub fn brute_force_exit(spec: &EnvModelSpec, x: Point2<f64>, n: usize) -> Result<f64> {
    Ok(brute_force_exit_moments(spec, x, n)?.mean)
}

/// Law of the integer displacement `S(n)` given `tau_x > n`.
pub fn brute_force_exit_endpoints(spec: &EnvModelSpec, x: Point2<f64>, n: usize) -> Result<BTreeMap<[i64; 2], f64>> {
    let atoms = atoms_for(spec, n)?;
    let alive = survives_from(x);
    let mut law = BTreeMap::new();
    let mut total = 0.0;
    enumerate_forward(&atoms, n, |steps, prob| {
        if prob > 0.0 && alive(steps) > 0.0 {
            let s = steps.iter().fold([0i64; 2], |a, d| [a[0] + d[0] as i64, a[1] + d[1] as i64]);
            *law.entry(s).or_insert(0.0) += prob;
            total += prob;
        }
    });
    if !(total > 0.0) {
        return Err(Error::Precondition("conditioning event has probability zero".into()));
    }
    law.values_mut().for_each(|p| *p /= total);
    Ok(law)
}

/// Total variation between an exact displacement law and weighted particles.
pub fn total_variation(exact: &BTreeMap<[i64; 2], f64>, x: Point2<f64>, positions: &[Point2<f64>], weights: &[f64]) -> f64 {
    let mut empirical: BTreeMap<[i64; 2], f64> = BTreeMap::new();
    let total: f64 = weights.iter().sum();
    for (y, &w) in positions.iter().zip(weights) {
        if w > 0.0 {
            let key = [(y[0] - x[0]).round() as i64, (y[1] - x[1]).round() as i64];
            *empirical.entry(key).or_insert(0.0) += w / total;
        }
    }
    let mut tv = 0.0;
    for (k, p) in exact {
        tv += (p - empirical.get(k).copied().unwrap_or(0.0)).abs();
    }
    for (k, q) in &empirical {
        if !exact.contains_key(k) {
            tv += q;
        }
    }
    tv / 2.0
}

/// Annealed Monte Carlo against enumeration for every `n` in `1..=n_max`.
pub fn oracle_coexistence(
    spec: &EnvModelSpec,
    z: PopulationState,
    n_max: usize,
    replicas: usize,
    streams: &Streams,
) -> Result<Vec<OracleReport>> {
    atoms_for(spec, n_max)?;
    let grid: Vec<usize> = (1..=n_max).collect();
    let curve = annealed_curve(spec, z, &grid, replicas, streams, AnnealedMode::Coexist)?;
    curve
        .rows
        .iter()
        .map(|r| Ok(OracleReport::new(r.n, brute_force_coexistence_moments(spec, z, r.n)?, r.estimate, r.replicas)))
        .collect()
}

/// Direct exit-time Monte Carlo against enumeration for every `n` in `1..=n_max`.
pub fn oracle_exit(
    spec: &EnvModelSpec,
    x: Point2<f64>,
    n_max: usize,
    replicas: usize,
    streams: &Streams,
) -> Result<Vec<OracleReport>> {
    atoms_for(spec, n_max)?;
    let grid: Vec<usize> = (1..=n_max).collect();
    let curve = exit_tail_curve(spec, x, &grid, replicas, streams)?;
    curve
        .rows
        .iter()
        .map(|r| Ok(OracleReport::new(r.n, brute_force_exit_moments(spec, x, r.n)?, r.estimate, r.replicas)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_discrete_env, make_gaussian_env, RhoParam};

    fn disc(r: f64) -> EnvModelSpec {
        make_discrete_env(RhoParam::new(r).unwrap())
    }

    fn z(a: u64, b: u64) -> PopulationState {
        PopulationState::new(a, b)
    }

    #[test]
    fn coexistence_examples() {
        let e = std::f64::consts::E;
        let single = (e / (1.0 + e) + 1.0 / (1.0 + e)) / 2.0;
        assert!((brute_force_coexistence(&disc(0.0), z(1, 1), 1).unwrap() - single * single).abs() < 1e-15);
        assert!((brute_force_coexistence(&disc(0.0), z(1, 1), 1).unwrap() - 0.25).abs() < 1e-15);
        let up = 1.0 / (1.0 + e);
        let down = e / (1.0 + e);
        let expected = 0.5 * up * up + 0.5 * down * down;
        let got = brute_force_coexistence(&disc(1.0), z(1, 1), 1).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.3034).abs() < 1e-4);
        for r in [-0.5, 0.0, 1.0] {
            for n in 1..=4 {
                assert_eq!(brute_force_coexistence(&disc(r), z(0, 3), n).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn exit_examples() {
        let half = Point2::new(0.5, 0.5);
        assert!((brute_force_exit(&disc(0.0), half, 1).unwrap() - 0.25).abs() < 1e-15);
        assert!((brute_force_exit(&disc(1.0), half, 1).unwrap() - 0.5).abs() < 1e-15);
        for r in [-0.5, 0.0, 0.5, 1.0] {
            assert_eq!(brute_force_exit(&disc(r), Point2::new(10.0, 10.0), 3).unwrap(), 1.0);
        }
    }

    #[test]
    fn two_enumerators_agree() {
        for r in [-0.5, 0.0, 0.5, 1.0] {
            let spec = disc(r);
            for n in 1..=6 {
                for zz in [[1, 1], [2, 1]] {
                    let a = brute_force_coexistence_moments(&spec, z(zz[0], zz[1]), n).unwrap();
                    let b = enumerate_reversed(&spec, n, &coexistence_of(zz)).unwrap();
                    assert!((a.mean - b.mean).abs() < 1e-14 && (a.second - b.second).abs() < 1e-14);
                }
                let x = Point2::new(1.5, 0.5);
                let a = brute_force_exit_moments(&spec, x, n).unwrap();
                let b = enumerate_reversed(&spec, n, &survives_from(x)).unwrap();
                assert!((a.mean - b.mean).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn preconditions() {
        let g = make_gaussian_env(RhoParam::new(0.0).unwrap());
        assert_eq!(brute_force_coexistence(&g, z(1, 1), 2), Err(Error::NonDiscreteFamily));
        assert_eq!(brute_force_exit(&g, Point2::new(1.0, 1.0), 2), Err(Error::NonDiscreteFamily));
        assert!(brute_force_exit(&disc(0.0), Point2::new(1.0, 1.0), 9).is_err());
    }

    #[test]
    fn exact_values_are_probabilities_and_monotone() {
        for r in [-0.5, 0.0, 0.5, 1.0] {
            let mut prev = 1.0;
            for n in 1..=7 {
                let v = brute_force_coexistence(&disc(r), z(2, 1), n).unwrap();
                assert!((0.0..=1.0).contains(&v) && v <= prev + 1e-15);
                prev = v;
            }
        }
    }

    #[test]
    fn endpoint_law_sums_to_one() {
        let law = brute_force_exit_endpoints(&disc(0.0), Point2::new(0.5, 0.5), 8).unwrap();
        assert!((law.values().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(law.keys().all(|k| k[0] >= 0 && k[1] >= 0));
        let positions: Vec<_> = law.keys().map(|k| Point2::new(0.5 + k[0] as f64, 0.5 + k[1] as f64)).collect();
        let weights: Vec<f64> = law.values().copied().collect();
        assert!(total_variation(&law, Point2::new(0.5, 0.5), &positions, &weights) < 1e-12);
    }

    #[test]
    fn small_oracle_gate() {
        let spec = disc(0.5);
        for rep in oracle_coexistence(&spec, z(2, 1), 4, 20_000, &Streams::new(3, "gate")).unwrap() {
            assert!(rep.z.abs() < 4.0, "{rep:?}");
        }
        for rep in oracle_exit(&spec, Point2::new(1.5, 0.5), 4, 20_000, &Streams::new(3, "gate-exit")).unwrap() {
            assert!(rep.z.abs() < 4.0, "{rep:?}");
        }
    }
}
