//! Estimated survival curves shared by the exit-tail and branching estimators.

use serde::{Deserialize, Serialize};

use crate::env::EnvFamily;
use crate::error::{Error, Result};

/// What a curve estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveKind {
    /// `P(Z_1(n) > 0, Z_2(n) > 0)`.
    Coexist,
    /// `P(Z_1(n) > 0)`.
    Single1,
    /// `P(Z_2(n) > 0)`.
    Single2,
    /// `P(tau_x > n)` for the associated walk.
    ExitTail,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub n: usize,
    pub estimate: f64,
    pub stderr: f64,
    pub replicas: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveMeta {
    pub kind: CurveKind,
    pub rho: f64,
    pub family: EnvFamily,
    pub z: [u64; 2],
    /// Start point of the walk, for exit-tail curves.
    pub x: Option<[f64; 2]>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub rows: Vec<CurveRow>,
    pub meta: CurveMeta,
    pub warnings: Vec<String>,
}

impl SurvivalCurve {
    pub fn ns(&self) -> impl Iterator<Item = usize> + '_ {
        self.rows.iter().map(|r| r.n)
    }

    pub fn at(&self, n: usize) -> Option<&CurveRow> {
        self.rows.iter().find(|r| r.n == n)
    }
}

/// Grid of horizons: non-empty, strictly increasing, all `>= 1`.
pub fn validate_grid(grid: &[usize]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Precondition("n-grid is empty".into()));
    }
    if grid[0] == 0 {
        return Err(Error::Precondition("n-grid entries must be >= 1".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Precondition("n-grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Geometric grid `a, 2a, 4a, ...` up to and including `b`.
pub fn doubling_grid(a: usize, b: usize) -> Vec<usize> {
    std::iter::successors(Some(a.max(1)), |&n| n.checked_mul(2))
        .take_while(|&n| n <= b)
        .collect()
}
