//! Exact quenched survival for geometric offspring and forward simulation.
//!
//! Given the environment, a population started from `z` ancestors survives
//! to generation `n` with probability `1 - (A(n) / (1 + A(n)))^z`, where
//! `A(n) = sum_{k=1..n} e^{-S(k)}`. The `1 +` is the `k = 0` term
//! `e^{-S(0)}` of the generating-function identity
//! `1 / (1 - F_n(0)) = sum_{j=0..n} e^{-S(j)}`.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Geometric, Poisson};
use serde::{Deserialize, Serialize};

use crate::curve::{validate_grid, CurveKind, CurveMeta, CurveRow, SurvivalCurve};
use crate::env::{EnvModelSpec, EnvPath};
use crate::error::{Error, Result};
use crate::rng::Streams;
use crate::scalar::{softplus, Real};
use crate::stats::{run_replicas, Moments};
use crate::walk::WalkPath;

/// Largest representable population; forward simulation saturates here.
pub const POP_MAX: u64 = i64::MAX as u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopulationState {
    pub z: [u64; 2],
}

impl PopulationState {
    pub fn new(z1: u64, z2: u64) -> Self {
        Self { z: [z1, z2] }
    }
}

/// Streaming `ln sum_k e^{t_k}`, kept as `max + ln(scaled)` with
/// `scaled in [1, count]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogSum<F> {
    max: F,
    scaled: F,
}

impl<F: Real> Default for LogSum<F> {
    fn default() -> Self {
        Self { max: F::neg_infinity(), scaled: F::zero() }
    }
}

impl<F: Real> LogSum<F> {
    #[inline]
    pub fn push(&mut self, t: F) {
        if self.scaled == F::zero() {
            self.max = t;
            self.scaled = F::one();
        } else if t > self.max {
            self.scaled = self.scaled * (self.max - t).exp() + F::one();
            self.max = t;
        } else {
            self.scaled = self.scaled + (t - self.max).exp();
        }
    }

    /// `-inf` for the empty sum.
    #[inline]
    pub fn ln(&self) -> F {
        if self.scaled == F::zero() {
            F::neg_infinity()
        } else {
            self.max + self.scaled.ln()
        }
    }
}

/// `P(Z(n) > 0 | environment) = 1 - (A / (1 + A))^z` from `ln A`.
#[inline]
pub fn survival_from_log_a<F: Real>(log_a: F, z: u64) -> F {
    if z == 0 {
        return F::zero();
    }
    // ln(A / (1 + A)) = -ln(1 + e^{-ln A})
    let log_q = -softplus(-log_a);
    let zf = F::from_u64(z).unwrap_or_else(F::max_value);
    -(zf * log_q).exp_m1()
}

/// Log-domain running sums `ln A_i(n)` for both coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quenched<F> {
    sums: [LogSum<F>; 2],
    s: [F; 2],
    n: usize,
}

impl<F: Real> Default for Quenched<F> {
    fn default() -> Self {
        Self { sums: [LogSum::default(); 2], s: [F::zero(); 2], n: 0 }
    }
}

impl<F: Real> Quenched<F> {
    /// Advances by one environment step with log-means `x`.
    #[inline]
    pub fn push_step(&mut self, x: [F; 2]) {
        for i in 0..2 {
            self.s[i] = self.s[i] + x[i];
            self.sums[i].push(-self.s[i]);
        }
        self.n += 1;
    }

    /// Advances to a known walk position `S(n + 1)`.
    pub fn push_position(&mut self, s: [F; 2]) {
        self.s = s;
        for i in 0..2 {
            self.sums[i].push(-s[i]);
        }
        self.n += 1;
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn position(&self) -> [F; 2] {
        self.s
    }

    pub fn log_a(&self, i: usize) -> F {
        self.sums[i].ln()
    }

    pub fn survival(&self, i: usize, z: u64) -> F {
        survival_from_log_a(self.log_a(i), z)
    }

    /// `Y(n)`: conditional co-existence probability given the environment.
    pub fn coexistence(&self, z: [u64; 2]) -> F {
        self.survival(0, z[0]) * self.survival(1, z[1])
    }
}

/// Survival of coordinate `i` given the accumulated environment.
pub fn quenched_survival<F: Real>(acc: &Quenched<F>, i: usize, z_i: u64) -> F {
    acc.survival(i, z_i)
}

/// `Y(n)` on every grid point, in one pass over the walk.
pub fn coexistence_functional(walk: &WalkPath, z: PopulationState, n_grid: &[usize]) -> Result<Vec<f64>> {
    validate_grid(n_grid)?;
    if *n_grid.last().unwrap() > walk.len() {
        return Err(Error::Precondition(format!(
            "grid reaches {} but the walk has {} steps",
            n_grid.last().unwrap(),
            walk.len()
        )));
    }
    let mut acc = Quenched::<f64>::default();
    let mut out = Vec::with_capacity(n_grid.len());
    let mut grid = n_grid.iter().peekable();
    for s in &walk.points[1..] {
        acc.push_position(s.0);
        if grid.peek() == Some(&&acc.n()) {
            out.push(acc.coexistence(z.z));
            grid.next();
            if grid.peek().is_none() {
                break;
            }
        }
    }
    Ok(out)
}

/// Sum of `z` i.i.d. geometric(`p`) variables on `N_0`, saturating at [`POP_MAX`].
///
/// Exact in law: a direct sum of geometrics for `z <= 64`, the gamma-Poisson
/// mixture representation of the negative binomial above.
pub fn sample_offspring_total<R: Rng + ?Sized>(z: u64, p: f64, rng: &mut R) -> Result<u64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Domain(format!("geometric parameter must lie in (0, 1], got {p}")));
    }
    if z == 0 || p == 1.0 {
        return Ok(0);
    }
    if z <= 64 {
        let geo = Geometric::new(p).map_err(|e| Error::Domain(e.to_string()))?;
        let mut total = 0u64;
        for _ in 0..z {
            total = total.saturating_add(geo.sample(rng));
        }
        return Ok(total.min(POP_MAX));
    }
    let scale = (1.0 - p) / p;
    let gamma = Gamma::new(z as f64, scale).map_err(|e| Error::Domain(e.to_string()))?;
    let lambda: f64 = gamma.sample(rng);
    if lambda <= 0.0 {
        return Ok(0);
    }
    if lambda >= POP_MAX as f64 {
        return Ok(POP_MAX);
    }
    let draw: f64 = Poisson::new(lambda).map_err(|e| Error::Domain(e.to_string()))?.sample(rng);
    Ok(if draw >= POP_MAX as f64 { POP_MAX } else { draw as u64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `Z(0..=n)`.
    pub sizes: Vec<[u64; 2]>,
    /// Some coordinate hit [`POP_MAX`]; values from that point on are pinned.
    pub saturated: bool,
}

/// One forward run of the two-type process in a fixed environment.
pub fn simulate_forward<R: Rng + ?Sized>(z: PopulationState, env: &EnvPath, rng: &mut R) -> Result<Trajectory> {
    let mut sizes = Vec::with_capacity(env.len() + 1);
    let mut cur = z.z;
    let mut saturated = cur.contains(&POP_MAX);
    sizes.push(cur);
    for step in &env.steps {
        for i in 0..2 {
            if cur[i] == POP_MAX {
                continue;
            }
            cur[i] = sample_offspring_total(cur[i], step.p[i], rng)?;
            saturated |= cur[i] == POP_MAX;
        }
        sizes.push(cur);
    }
    Ok(Trajectory { sizes, saturated })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnnealedMode {
    Coexist,
    Single1,
    Single2,
}

impl From<AnnealedMode> for CurveKind {
    fn from(m: AnnealedMode) -> Self {
        match m {
            AnnealedMode::Coexist => CurveKind::Coexist,
            AnnealedMode::Single1 => CurveKind::Single1,
            AnnealedMode::Single2 => CurveKind::Single2,
        }
    }
}

/// Annealed survival: the average over independent environments of the
/// exact quenched functional, every grid point from one path per replica.
pub fn annealed_curve(
    spec: &EnvModelSpec,
    z: PopulationState,
    n_grid: &[usize],
    replicas: usize,
    streams: &Streams,
    mode: AnnealedMode,
) -> Result<SurvivalCurve> {
    validate_grid(n_grid)?;
    spec.rho.require_not_asynchronous()?;
    if replicas == 0 {
        return Err(Error::Precondition("replicas must be >= 1".into()));
    }
    let horizon = *n_grid.last().unwrap();
    let sampler = spec.sampler();
    let zz = z.z;

    let moments = run_replicas(
        replicas,
        || vec![Moments::default(); n_grid.len()],
        |i, acc| {
            let mut rng = streams.rng(i);
            let mut q = Quenched::<f64>::default();
            let mut slot = 0;
            for k in 1..=horizon {
                q.push_step(sampler.draw(&mut rng));
                if k == n_grid[slot] {
                    let v = match mode {
                        AnnealedMode::Coexist => q.coexistence(zz),
                        AnnealedMode::Single1 => q.survival(0, zz[0]),
                        AnnealedMode::Single2 => q.survival(1, zz[1]),
                    };
                    acc[slot].push(v);
                    slot += 1;
                }
            }
        },
    );

    let rows = n_grid
        .iter()
        .zip(&moments)
        .map(|(&n, m)| CurveRow {
            n,
            estimate: m.mean().clamp(0.0, 1.0),
            stderr: m.stderr(),
            replicas: m.count,
        })
        .collect();
    Ok(SurvivalCurve {
        rows,
        meta: CurveMeta {
            kind: mode.into(),
            rho: spec.rho.value(),
            family: spec.family,
            z: zz,
            x: None,
            seed: streams.master_seed,
        },
        warnings: Vec::new(),
    })
}

/// Exact `E[Z_i(n)]` and `Var Z_i(n)` given the environment, for each coordinate.
///
/// Geometric offspring with mean `m = e^x` has variance `m (1 + m)`.
pub fn quenched_moments(z: PopulationState, env: &EnvPath) -> [(f64, f64); 2] {
    let mut out = [(z.z[0] as f64, 0.0), (z.z[1] as f64, 0.0)];
    for step in &env.steps {
        for (i, (mean, var)) in out.iter_mut().enumerate() {
            let m = step.x[i].exp();
            *var = m * m * *var + m * (1.0 + m) * *mean;
            *mean *= m;
        }
    }
    out
}

/// Above this size a population is carried as a real number.
pub const EXACT_LIMIT: u64 = 1 << 50;

/// Population size for long forward runs.
///
/// Below [`EXACT_LIMIT`] the offspring total is drawn exactly. Above it the
/// gamma stage of the negative binomial mixture is kept and the Poisson
/// stage, of relative size below `2^-25`, is dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PopSize {
    Exact(u64),
    Large(f64),
}

impl PopSize {
    pub fn is_extinct(self) -> bool {
        self == PopSize::Exact(0)
    }

    pub fn ln(self) -> f64 {
        match self {
            PopSize::Exact(z) => (z as f64).ln(),
            PopSize::Large(z) => z.ln(),
        }
    }

    pub fn is_finite(self) -> bool {
        match self {
            PopSize::Exact(_) => true,
            PopSize::Large(z) => z.is_finite(),
        }
    }

    /// One generation under the geometric law with parameter `p`.
    pub fn step<R: Rng + ?Sized>(self, p: f64, rng: &mut R) -> Result<PopSize> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::Domain(format!("geometric parameter must lie in (0, 1], got {p}")));
        }
        let shape = match self {
            PopSize::Exact(z) if z <= 64 => {
                let t = sample_offspring_total(z, p, rng)?;
                return Ok(if t >= EXACT_LIMIT { PopSize::Large(t as f64) } else { PopSize::Exact(t) });
            }
            PopSize::Exact(z) => z as f64,
            PopSize::Large(z) => z,
        };
        if p == 1.0 {
            return Ok(PopSize::Exact(0));
        }
        let scale = (1.0 - p) / p;
        let lambda: f64 = Gamma::new(shape, scale).map_err(|e| Error::Domain(e.to_string()))?.sample(rng);
        if lambda >= EXACT_LIMIT as f64 {
            return Ok(PopSize::Large(lambda));
        }
        if lambda <= 0.0 {
            return Ok(PopSize::Exact(0));
        }
        let draw: f64 = Poisson::new(lambda).map_err(|e| Error::Domain(e.to_string()))?.sample(rng);
        Ok(PopSize::Exact(draw as u64))
    }
}
