//! Environment families and i.i.d. environment sequences.
//!
//! An environment step is a pair of geometric offspring laws
//! `q_i({j}) = p_i (1 - p_i)^j`. It is parameterised by the log conditional
//! means `x_i = log((1 - p_i) / p_i)`, which are the increments of the
//! associated random walk.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{StreamId, StreamRng, Streams};
use crate::stats::{run_replicas, Merge};

/// Correlation `E[X_1 X_2]` of the log-mean pair, validated to `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct RhoParam(f64);

impl RhoParam {
    pub fn new(rho: f64) -> Result<Self> {
        if !rho.is_finite() || !(-1.0..=1.0).contains(&rho) {
            return Err(Error::Domain(format!("rho must lie in [-1, 1], got {rho}")));
        }
        Ok(Self(rho))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_boundary(self) -> bool {
        self.0.abs() == 1.0
    }

    /// Estimators built on cone geometry need `|rho| < 1`.
    pub fn require_interior(self) -> Result<Self> {
        if self.is_boundary() {
            return Err(Error::BoundaryRho { rho: self.0 });
        }
        Ok(self)
    }

    /// Survival estimators admit the synchronous boundary `rho = 1` but not
    /// the asynchronous one.
    pub fn require_not_asynchronous(self) -> Result<Self> {
        if self.0 == -1.0 {
            return Err(Error::BoundaryRho { rho: self.0 });
        }
        Ok(self)
    }
}

impl TryFrom<f64> for RhoParam {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<RhoParam> for f64 {
    fn from(r: RhoParam) -> f64 {
        r.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvFamily {
    /// `X` bivariate standard normal with correlation rho.
    #[serde(alias = "gaussian")]
    GaussianSigmoid,
    /// `X` uniform over the four sign pairs `(±1, ±1)`, tilted by rho.
    #[serde(alias = "discrete")]
    DiscreteFourPoint,
}

impl EnvFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvFamily::GaussianSigmoid => "gaussian",
            EnvFamily::DiscreteFourPoint => "discrete",
        }
    }
}

impl fmt::Display for EnvFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" | "gaussian-sigmoid" => Ok(EnvFamily::GaussianSigmoid),
            "discrete" | "discrete-four-point" => Ok(EnvFamily::DiscreteFourPoint),
            other => Err(Error::Domain(format!(
                "unknown environment family '{other}' (expected gaussian or discrete)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvModelSpec {
    pub family: EnvFamily,
    pub rho: RhoParam,
}

pub fn make_gaussian_env(rho: RhoParam) -> EnvModelSpec {
    EnvModelSpec { family: EnvFamily::GaussianSigmoid, rho }
}

pub fn make_discrete_env(rho: RhoParam) -> EnvModelSpec {
    EnvModelSpec { family: EnvFamily::DiscreteFourPoint, rho }
}

impl EnvModelSpec {
    pub fn new(family: EnvFamily, rho: RhoParam) -> Self {
        Self { family, rho }
    }

    /// Perfectly (anti-)dependent coordinates.
    pub fn is_degenerate(&self) -> bool {
        self.rho.is_boundary()
    }

    /// The four atoms `(x, probability)` of the discrete family, in the order
    /// `(1,1), (-1,-1), (1,-1), (-1,1)`.
    pub fn atoms(&self) -> Result<[([f64; 2], f64); 4]> {
        if self.family != EnvFamily::DiscreteFourPoint {
            return Err(Error::NonDiscreteFamily);
        }
        let r = self.rho.value();
        let same = (1.0 + r) / 4.0;
        let diff = (1.0 - r) / 4.0;
        Ok([
            ([1.0, 1.0], same),
            ([-1.0, -1.0], same),
            ([1.0, -1.0], diff),
            ([-1.0, 1.0], diff),
        ])
    }

    pub fn sampler(&self) -> StepSampler {
        let r = self.rho.value();
        StepSampler {
            family: self.family,
            rho: r,
            ortho: (1.0 - r * r).max(0.0).sqrt(),
            p_same: (1.0 + r) / 2.0,
        }
    }
}

/// Hot-path draw of the log-mean pair `X`.
#[derive(Debug, Clone, Copy)]
pub struct StepSampler {
    family: EnvFamily,
    rho: f64,
    ortho: f64,
    p_same: f64,
}

impl StepSampler {
    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        match self.family {
            EnvFamily::GaussianSigmoid => {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                // rho = ±1 gives ortho = 0 exactly, so x2 = ±x1 bit for bit.
                [a, self.rho * a + self.ortho * b]
            }
            EnvFamily::DiscreteFourPoint => {
                let first = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let same = rng.random::<f64>() < self.p_same;
                [first, if same { first } else { -first }]
            }
        }
    }
}

/// Geometric success parameter from the log conditional mean.
#[inline]
pub fn p_from_x(x: f64) -> f64 {
    1.0 / (1.0 + x.exp())
}

/// Log conditional mean `log((1 - p) / p)` of a geometric law on `N_0`.
#[inline]
pub fn x_from_p(p: f64) -> f64 {
    (-p).ln_1p() - p.ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvStep {
    pub x: [f64; 2],
    pub p: [f64; 2],
}

impl EnvStep {
    pub fn from_x(x: [f64; 2]) -> Self {
        Self { x, p: [p_from_x(x[0]), p_from_x(x[1])] }
    }

    pub fn from_p(p: [f64; 2]) -> Self {
        Self { x: [x_from_p(p[0]), x_from_p(p[1])], p }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvPath {
    pub spec: EnvModelSpec,
    pub steps: Vec<EnvStep>,
    /// Stream that produced the path; `None` for hand-built paths.
    pub origin: Option<StreamId>,
}

impl EnvPath {
    pub fn from_steps(spec: EnvModelSpec, steps: Vec<EnvStep>) -> Self {
        Self { spec, steps, origin: None }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

pub fn sample_env_path(spec: &EnvModelSpec, n: usize, stream: &StreamId) -> Result<EnvPath> {
    if n == 0 {
        return Err(Error::Precondition("environment horizon must be at least 1".into()));
    }
    let mut rng = stream.rng();
    Ok(EnvPath {
        spec: *spec,
        steps: sample_steps(spec, n, &mut rng),
        origin: Some(stream.clone()),
    })
}

pub(crate) fn sample_steps(spec: &EnvModelSpec, n: usize, rng: &mut StreamRng) -> Vec<EnvStep> {
    let sampler = spec.sampler();
    (0..n).map(|_| EnvStep::from_x(sampler.draw(rng))).collect()
}

/// Empirical moments of `X` with standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub draws: usize,
    pub mean: [f64; 2],
    pub mean_stderr: [f64; 2],
    pub variance: [f64; 2],
    /// Raw second moment `E[X_i^2]`, the quantity constrained to equal 1.
    pub second_moment: [f64; 2],
    pub second_moment_stderr: [f64; 2],
    pub correlation: f64,
    pub correlation_stderr: f64,
    pub target_rho: f64,
    /// Moments more than four standard errors away from `(0, 1, rho)`.
    pub flags: Vec<String>,
}

#[derive(Default, Clone, Copy)]
struct RawSums {
    n: u64,
    s: [f64; 2],
    s2: [f64; 2],
    s4: [f64; 2],
    sxy: f64,
    sxy2: f64,
}

impl Merge for RawSums {
    fn merge(&mut self, o: Self) {
        self.n += o.n;
        for i in 0..2 {
            self.s[i] += o.s[i];
            self.s2[i] += o.s2[i];
            self.s4[i] += o.s4[i];
        }
        self.sxy += o.sxy;
        self.sxy2 += o.sxy2;
    }
}

const MOMENT_CHUNK: usize = 4096;

pub fn env_moment_report(spec: &EnvModelSpec, n_draws: usize, streams: &Streams) -> Result<MomentReport> {
    if n_draws < 1000 {
        return Err(Error::Precondition(format!("moment report needs at least 1000 draws, got {n_draws}")));
    }
    let sampler = spec.sampler();
    let chunks = n_draws.div_ceil(MOMENT_CHUNK);
    let sums = run_replicas(chunks, RawSums::default, |c, acc| {
        let mut rng = streams.rng(c);
        let lo = c as usize * MOMENT_CHUNK;
        let hi = (lo + MOMENT_CHUNK).min(n_draws);
        for _ in lo..hi {
            let x = sampler.draw(&mut rng);
            acc.n += 1;
            for i in 0..2 {
                let sq = x[i] * x[i];
                acc.s[i] += x[i];
                acc.s2[i] += sq;
                acc.s4[i] += sq * sq;
            }
            let xy = x[0] * x[1];
            acc.sxy += xy;
            acc.sxy2 += xy * xy;
        }
    });

    let n = sums.n as f64;
    let mut mean = [0.0; 2];
    let mut var = [0.0; 2];
    let mut mean_se = [0.0; 2];
    let mut m2 = [0.0; 2];
    let mut m2_se = [0.0; 2];
    for i in 0..2 {
        mean[i] = sums.s[i] / n;
        m2[i] = sums.s2[i] / n;
        var[i] = m2[i] - mean[i] * mean[i];
        mean_se[i] = (var[i] / n).sqrt();
        let m4 = sums.s4[i] / n;
        m2_se[i] = ((m4 - m2[i] * m2[i]).max(0.0) / n).sqrt();
    }
    let cov = sums.sxy / n - mean[0] * mean[1];
    let correlation = if var[0] == var[1] && cov == var[0] {
        1.0
    } else {
        (cov / (var[0] * var[1]).sqrt()).clamp(-1.0, 1.0)
    };
    // Standard error of the product moment of the (approximately)
    // standardised coordinates.
    let sd = (var[0] * var[1]).sqrt();
    let prod_var = (sums.sxy2 / n - (sums.sxy / n).powi(2)).max(0.0);
    let correlation_stderr = if sd > 0.0 { (prod_var / n).sqrt() / sd } else { 0.0 };

    let rho = spec.rho.value();
    let mut flags = Vec::new();
    for i in 0..2 {
        if mean[i].abs() > 4.0 * mean_se[i] {
            flags.push(format!("mean[{i}] = {:.5} is > 4 stderr from 0", mean[i]));
        }
        if (m2[i] - 1.0).abs() > 4.0 * m2_se[i] {
            flags.push(format!("second moment[{i}] = {:.5} is > 4 stderr from 1", m2[i]));
        }
    }
    if (correlation - rho).abs() > 4.0 * correlation_stderr {
        flags.push(format!("correlation = {correlation:.5} is > 4 stderr from {rho}"));
    }

    Ok(MomentReport {
        draws: n_draws,
        mean,
        mean_stderr: mean_se,
        variance: var,
        second_moment: m2,
        second_moment_stderr: m2_se,
        correlation,
        correlation_stderr,
        target_rho: rho,
        flags,
    })
}
