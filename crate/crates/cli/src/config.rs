use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use coexist_core::branching::AnnealedMode;
use coexist_core::estimators::{MeanderMode, MAX_ENUMERATION_DEPTH};
use coexist_core::{EnvFamily, EnvModelSpec, RhoParam, Vec2};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Coexist,
    ExitTail,
    Fit,
    Oracle,
    Repulsion,
    Meander,
    Zs,
    EstimateV,
}

impl Command {
    pub fn tag(self) -> &'static str {
        match self {
            Command::Coexist => "coexist",
            Command::ExitTail => "exit-tail",
            Command::Fit => "fit",
            Command::Oracle => "oracle",
            Command::Repulsion => "repulsion",
            Command::Meander => "meander",
            Command::Zs => "zs",
            Command::EstimateV => "estimate-v",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Horizon grid `a:b:x<k>` (geometric) or `a:b:+<s>` (arithmetic).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridSpec {
    pub start: usize,
    pub end: usize,
    pub step: GridStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridStep {
    Times(usize),
    Plus(usize),
}

impl GridSpec {
    pub fn points(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut n = self.start;
        while n <= self.end {
            out.push(n);
            n = match self.step {
                GridStep::Times(k) => n.saturating_mul(k),
                GridStep::Plus(s) => n.saturating_add(s),
            };
        }
        out
    }
}

impl FromStr for GridSpec {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        let bad = || CliError::Config(format!("bad n-grid '{s}': expected a:b:x<k> or a:b:+<s>"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        let [a, b, st] = parts.as_slice() else { return Err(bad()) };
        let start: usize = a.parse().map_err(|_| bad())?;
        let end: usize = b.parse().map_err(|_| bad())?;
        let step = if let Some(k) = st.strip_prefix('x') {
            GridStep::Times(k.parse().map_err(|_| bad())?)
        } else if let Some(k) = st.strip_prefix('+') {
            GridStep::Plus(k.parse().map_err(|_| bad())?)
        } else {
            return Err(bad());
        };
        match step {
            GridStep::Times(k) if k < 2 => return Err(CliError::Config(format!("grid factor must be >= 2 in '{s}'"))),
            GridStep::Plus(0) => return Err(CliError::Config(format!("grid step must be >= 1 in '{s}'"))),
            _ => {}
        }
        if start == 0 || end < start {
            return Err(CliError::Config(format!("grid '{s}' needs 1 <= a <= b")));
        }
        Ok(GridSpec { start, end, step })
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.step {
            GridStep::Times(k) => write!(f, "{}:{}:x{k}", self.start, self.end),
            GridStep::Plus(s) => write!(f, "{}:{}:+{s}", self.start, self.end),
        }
    }
}

/// Everything a run needs; echoed verbatim into the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    pub rho: f64,
    pub family: EnvFamily,
    pub mode: AnnealedMode,
    pub z: [u64; 2],
    pub x: [f64; 2],
    pub n_grid: String,
    /// Oracle depth, meander base horizon, estimate-v depth.
    pub n: usize,
    /// Replicas, or particles for the particle-based commands.
    pub replicas: usize,
    pub epsilon: f64,
    pub n_min: usize,
    pub t_grid: Vec<f64>,
    pub meander_mode: MeanderMode,
    pub offset: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub input: Option<PathBuf>,
    pub svg: bool,
}

impl RunConfig {
    pub fn defaults(command: Command) -> Self {
        let (family, n, replicas) = match command {
            Command::Oracle => (EnvFamily::DiscreteFourPoint, 6, 100_000),
            Command::Repulsion => (EnvFamily::GaussianSigmoid, 0, 20_000),
            Command::Meander => (EnvFamily::GaussianSigmoid, 1024, 50_000),
            Command::Zs => (EnvFamily::GaussianSigmoid, 0, 1_000_000),
            Command::EstimateV => (EnvFamily::GaussianSigmoid, 64, 10_000),
            _ => (EnvFamily::GaussianSigmoid, 0, 200_000),
        };
        let n_grid = match command {
            Command::Repulsion => "256:4096:x4",
            Command::Zs => "256:1024:x4",
            _ => "64:2048:x2",
        };
        RunConfig {
            command,
            rho: 0.0,
            family,
            mode: AnnealedMode::Coexist,
            z: [1, 1],
            x: [1.0, 1.0],
            n_grid: n_grid.into(),
            n,
            replicas,
            epsilon: 0.25,
            n_min: coexist_core::estimators::DEFAULT_N_MIN,
            t_grid: vec![0.5, 1.0],
            meander_mode: MeanderMode::Walk,
            offset: coexist_core::harmonic::DEFAULT_OFFSET,
            seed: 0,
            out: PathBuf::from("."),
            input: None,
            svg: false,
        }
    }

    pub fn rho_param(&self) -> Result<RhoParam, CliError> {
        RhoParam::new(self.rho).map_err(CliError::from)
    }

    pub fn spec(&self) -> Result<EnvModelSpec, CliError> {
        Ok(EnvModelSpec::new(self.family, self.rho_param()?))
    }

    pub fn grid(&self) -> Result<Vec<usize>, CliError> {
        Ok(self.n_grid.parse::<GridSpec>()?.points())
    }

    pub fn start(&self) -> Vec2 {
        Vec2::new(self.x[0], self.x[1])
    }

    /// Checks every precondition of the command without sampling.
    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |m: String| Err(CliError::Config(m));
        if self.command == Command::Fit {
            if self.input.is_none() {
                return cfg("fit needs --input <curve.csv>".into());
            }
            if self.n_min == 0 {
                return cfg("n-min must be >= 1".into());
            }
            return Ok(());
        }
        let rho = self.rho_param()?;
        if self.replicas == 0 {
            return cfg("replicas must be >= 1".into());
        }
        let needs_x = matches!(
            self.command,
            Command::ExitTail | Command::Repulsion | Command::Meander | Command::EstimateV | Command::Oracle
        );
        if needs_x && !(self.x.iter().all(|v| v.is_finite() && *v > 0.0)) {
            return cfg(format!("x = ({}, {}) must lie strictly inside the quadrant", self.x[0], self.x[1]));
        }
        if matches!(self.command, Command::Coexist | Command::ExitTail | Command::Repulsion | Command::Zs) {
            self.grid()?;
        }
        if matches!(self.command, Command::Coexist | Command::ExitTail | Command::Zs | Command::Oracle | Command::Meander) {
            rho.require_not_asynchronous()?;
        }
        match self.command {
            Command::Coexist => {
                if self.mode == AnnealedMode::Coexist && self.z.contains(&0) {
                    return cfg("co-existence needs both initial populations >= 1".into());
                }
            }
            Command::Oracle => {
                if self.family != EnvFamily::DiscreteFourPoint {
                    return cfg("oracle enumerates the discrete family only".into());
                }
                if self.n == 0 || self.n > MAX_ENUMERATION_DEPTH {
                    return cfg(format!("oracle depth must lie in 1..={MAX_ENUMERATION_DEPTH}"));
                }
            }
            Command::Repulsion | Command::EstimateV => {
                rho.require_interior()?;
                if self.command == Command::Repulsion && self.replicas < 100 {
                    return cfg("the particle sampler needs at least 100 particles".into());
                }
                if !(self.offset >= 0.0 && self.offset.is_finite()) {
                    return cfg("offset must be finite and >= 0".into());
                }
            }
            Command::Meander => {
                if self.n == 0 || self.n > usize::MAX / 4 {
                    return cfg("meander base horizon must be >= 1".into());
                }
                if self.t_grid.is_empty() || self.t_grid.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
                    return cfg("t grid values must lie in (0, 1]".into());
                }
                if self.meander_mode == MeanderMode::Walk {
                    rho.require_interior()?;
                    if self.replicas < 100 {
                        return cfg("the particle sampler needs at least 100 particles".into());
                    }
                }
                if self.meander_mode != MeanderMode::Walk && self.z.contains(&0) {
                    return cfg("branching meander needs both initial populations >= 1".into());
                }
            }
            Command::Zs => {
                if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
                    return cfg("epsilon must be positive".into());
                }
                if self.z.contains(&0) {
                    return cfg("zs needs both initial populations >= 1".into());
                }
                if self.grid()?.last().is_some_and(|&n| n > 2048) {
                    return cfg("forward simulation is limited to n <= 2048".into());
                }
            }
            Command::ExitTail | Command::Fit => {}
        }
        Ok(())
    }
}
