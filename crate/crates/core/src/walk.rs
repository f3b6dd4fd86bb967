//! Associated random walk, cone geometry and exit times from the quadrant.
//!
//! The walk `S(n) = X(1) + ... + X(n)` has correlated coordinates. The
//! linear map `T` whitens it and sends the positive quadrant onto a cone of
//! opening `arccos(-rho)`, where the Brownian harmonic function is
//! `r^p sin(p alpha)` with `p = pi / arccos(-rho)`.

use std::ops::{Add, Index, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::curve::{validate_grid, CurveKind, CurveMeta, CurveRow, SurvivalCurve};
use crate::env::{EnvModelSpec, EnvPath, RhoParam};
use crate::error::{Error, Result};
use crate::rng::{StreamId, Streams};
use crate::scalar::Real;
use crate::stats::run_replicas;

/// A point (or displacement) in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2<F>(pub [F; 2]);

impl<F: Real> Point2<F> {
    pub fn new(a: F, b: F) -> Self {
        Self([a, b])
    }

    pub fn min_coord(self) -> F {
        self.0[0].min(self.0[1])
    }

    /// Strictly inside the open quadrant.
    pub fn is_interior(self) -> bool {
        self.0[0] > F::zero() && self.0[1] > F::zero()
    }

    pub fn norm(self) -> F {
        self.0[0].hypot(self.0[1])
    }

    pub fn is_finite(self) -> bool {
        self.0[0].is_finite() && self.0[1].is_finite()
    }
}

impl<F> Index<usize> for Point2<F> {
    type Output = F;
    fn index(&self, i: usize) -> &F {
        &self.0[i]
    }
}

impl<F: Real> Add for Point2<F> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self([self.0[0] + o.0[0], self.0[1] + o.0[1]])
    }
}

impl<F: Real> Sub for Point2<F> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self([self.0[0] - o.0[0], self.0[1] - o.0[1]])
    }
}

impl<F: Real> Mul<F> for Point2<F> {
    type Output = Self;
    fn mul(self, s: F) -> Self {
        Self([self.0[0] * s, self.0[1] * s])
    }
}

impl From<[f64; 2]> for Point2<f64> {
    fn from(c: [f64; 2]) -> Self {
        Self(c)
    }
}

pub type Mat2<F> = [[F; 2]; 2];

fn mat_vec<F: Real>(m: &Mat2<F>, v: Point2<F>) -> Point2<F> {
    Point2([m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]])
}

/// Geometry of the image cone `T(R_+^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cone<F> {
    pub rho: F,
    /// Opening angle `arccos(-rho)`.
    pub phi: F,
    /// Cone exponent `pi / phi`.
    pub p: F,
    /// Co-existence exponent `p / 2`.
    pub theta: F,
    pub t: Mat2<F>,
    pub t_inv: Mat2<F>,
}

impl<F: Real> Cone<F> {
    pub fn new(rho: F) -> Result<Self> {
        if !(rho.abs() < F::one()) {
            return Err(Error::BoundaryRho { rho: rho.to_f64().unwrap_or(f64::NAN) });
        }
        let s = (F::one() - rho * rho).sqrt();
        let phi = (-rho).acos();
        let p = F::PI() / phi;
        Ok(Self {
            rho,
            phi,
            p,
            theta: p * F::half(),
            t: [[F::one() / s, -rho / s], [F::zero(), F::one()]],
            t_inv: [[s, rho], [F::zero(), F::one()]],
        })
    }

    pub fn apply(&self, x: Point2<F>) -> Point2<F> {
        mat_vec(&self.t, x)
    }

    pub fn apply_inv(&self, y: Point2<F>) -> Point2<F> {
        mat_vec(&self.t_inv, y)
    }

    /// `u(T x) = r^p sin(p alpha)` where `(r, alpha)` are the polar
    /// coordinates of `T x`, the angle measured from `T e_1` (the positive
    /// first axis). Zero on the quadrant boundary, positive inside.
    pub fn u(&self, x: Point2<F>) -> F {
        let y = self.apply(x);
        let r = y.norm();
        if r == F::zero() {
            return F::zero();
        }
        let alpha = y[1].atan2(y[0]);
        r.powf(self.p) * (self.p * alpha).sin()
    }
}

pub fn cone_geometry(rho: RhoParam) -> Result<Cone<f64>> {
    Cone::new(rho.require_interior()?.value())
}

/// Brownian harmonic function of the transformed cone evaluated at `x`.
pub fn u_harmonic<F: Real>(geom: &Cone<F>, x: Point2<F>) -> F {
    geom.u(x)
}

/// Prefix sums `S(0..=n)` with `S(0) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkPath {
    pub points: Vec<Point2<f64>>,
    pub origin: Option<StreamId>,
}

impl WalkPath {
    /// Number of steps (`points.len() - 1`).
    pub fn len(&self) -> usize {
        self.points.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn walk_from_env(path: &EnvPath) -> WalkPath {
    let mut points = Vec::with_capacity(path.len() + 1);
    let mut s = Point2::new(0.0, 0.0);
    points.push(s);
    for step in &path.steps {
        s = s + Point2(step.x);
        points.push(s);
    }
    WalkPath { points, origin: path.origin.clone() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExitOutcome {
    Exited { tau: usize },
    /// Still inside after every available step.
    Censored { horizon: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitRecord {
    pub start: Point2<f64>,
    pub outcome: ExitOutcome,
}

impl ExitRecord {
    /// `true` when the walk is known to be inside at step `n`.
    pub fn survives(&self, n: usize) -> Option<bool> {
        match self.outcome {
            ExitOutcome::Exited { tau } => Some(tau > n),
            ExitOutcome::Censored { horizon } if n <= horizon => Some(true),
            ExitOutcome::Censored { .. } => None,
        }
    }
}

fn require_interior(x: Point2<f64>) -> Result<()> {
    if !x.is_finite() || !x.is_interior() {
        return Err(Error::Precondition(format!(
            "start point ({}, {}) must lie strictly inside the quadrant",
            x[0], x[1]
        )));
    }
    Ok(())
}

/// First `k >= 1` with `min(x + S(k)) <= 0`, or censored at the path length.
pub fn exit_time(x: Point2<f64>, walk: &WalkPath) -> Result<ExitRecord> {
    require_interior(x)?;
    let outcome = walk
        .points
        .iter()
        .enumerate()
        .skip(1)
        .find(|(_, s)| (x + **s).min_coord() <= 0.0)
        .map(|(k, _)| ExitOutcome::Exited { tau: k })
        .unwrap_or(ExitOutcome::Censored { horizon: walk.len() });
    Ok(ExitRecord { start: x, outcome })
}

/// Monte Carlo `P(tau_x > n)` on a grid, one walk per replica.
///
/// A replica is followed until it exits or reaches the last grid point; the
/// exit time then answers every grid point at once.
pub fn exit_tail_curve(
    spec: &EnvModelSpec,
    x: Point2<f64>,
    n_grid: &[usize],
    replicas: usize,
    streams: &Streams,
) -> Result<SurvivalCurve> {
    require_interior(x)?;
    validate_grid(n_grid)?;
    spec.rho.require_not_asynchronous()?;
    if replicas == 0 {
        return Err(Error::Precondition("replicas must be >= 1".into()));
    }
    let horizon = *n_grid.last().unwrap();
    let sampler = spec.sampler();

    let counts = run_replicas(
        replicas,
        || vec![0u64; n_grid.len()],
        |i, acc| {
            let mut rng = streams.rng(i);
            let mut y = x.0;
            let mut tau = horizon + 1;
            for k in 1..=horizon {
                let d = sampler.draw(&mut rng);
                y[0] += d[0];
                y[1] += d[1];
                if y[0] <= 0.0 || y[1] <= 0.0 {
                    tau = k;
                    break;
                }
            }
            for (slot, &n) in acc.iter_mut().zip(n_grid) {
                if tau > n {
                    *slot += 1;
                } else {
                    break;
                }
            }
        },
    );

    let total = replicas as f64;
    let rows = n_grid
        .iter()
        .zip(&counts)
        .map(|(&n, &c)| {
            let est = c as f64 / total;
            CurveRow { n, estimate: est, stderr: (est * (1.0 - est) / total).sqrt(), replicas: replicas as u64 }
        })
        .collect();
    let mut warnings = Vec::new();
    if replicas < 1000 {
        warnings.push(format!("only {replicas} replicas; binomial stderr is unreliable below 1000"));
    }
    Ok(SurvivalCurve {
        rows,
        meta: CurveMeta {
            kind: CurveKind::ExitTail,
            rho: spec.rho.value(),
            family: spec.family,
            z: [0, 0],
            x: Some(x.0),
            seed: streams.master_seed,
        },
        warnings,
    })
}
