use serde::{Deserialize, Serialize};

use crate::branching::{annealed_curve, AnnealedMode, PopSize, PopulationState};
use crate::env::{p_from_x, EnvModelSpec};
use crate::error::{Error, Result};
use crate::rng::Streams;
use crate::stats::{run_replicas, Merge};

/// Frequency of `max_{k<=n} |log Z_i(k) - S_i(k)| >= epsilon sqrt(n)` among
/// forward runs with both populations alive at `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZsReport {
    pub n: usize,
    pub epsilon: f64,
    pub frequency: f64,
    pub stderr: f64,
    /// Upper end of the 95% Wilson interval.
    pub upper95: f64,
    pub co_surviving: u64,
    pub exceedances: u64,
    /// Co-surviving runs dropped because a population overflowed `f64`.
    pub saturated: u64,
    pub replicas: u64,
    /// Forward co-survival frequency, saturated runs included.
    pub coexistence: f64,
    pub max_deviation: f64,
}

#[derive(Default)]
struct Acc {
    alive: u64,
    exceed: u64,
    saturated: u64,
    max_dev: f64,
}

impl Merge for Acc {
    fn merge(&mut self, o: Self) {
        self.alive += o.alive;
        self.exceed += o.exceed;
        self.saturated += o.saturated;
        self.max_dev = self.max_dev.max(o.max_dev);
    }
}

fn wilson_upper(k: u64, n: u64) -> f64 {
    let z2 = 1.959963984540054f64.powi(2);
    let n = n as f64;
    let f = k as f64 / n;
    let centre = f + z2 / (2.0 * n);
    let half = (z2 * (f * (1.0 - f) / n + z2 / (4.0 * n * n))).sqrt();
    ((centre + half) / (1.0 + z2 / n)).min(1.0)
}

const FALLBACK_REPLICAS: usize = 10_000;

/// Runs stop at the first extinction, so cost scales with the mean
/// co-survival time rather than `n`.
pub fn zs_deviation(
    spec: &EnvModelSpec,
    z: PopulationState,
    n: usize,
    replicas: usize,
    epsilon: f64,
    streams: &Streams,
) -> Result<ZsReport> {
    if n == 0 || n > 2048 {
        return Err(Error::Precondition(format!("forward horizon must lie in 1..=2048, got {n}")));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    if z.z.contains(&0) {
        return Err(Error::Precondition("both initial populations must be positive".into()));
    }
    if replicas == 0 {
        return Err(Error::Precondition("replicas must be >= 1".into()));
    }
    spec.rho.require_not_asynchronous()?;
    let sampler = spec.sampler();
    let offspring = streams.child("offspring");
    let level = epsilon * (n as f64).sqrt();

    let acc = run_replicas(replicas, Acc::default, |i, acc| {
        let mut env_rng = streams.rng(i);
        let mut rng = offspring.rng(i);
        let mut s = [0.0f64; 2];
        let mut cur = z.z.map(PopSize::Exact);
        let mut saturated = false;
        let mut dev: f64 = 0.0;
        for _ in 0..n {
            let d = sampler.draw(&mut env_rng);
            for c in 0..2 {
                s[c] += d[c];
                cur[c] = cur[c].step(p_from_x(d[c]), &mut rng).expect("p lies in (0, 1)");
            }
            if cur[0].is_extinct() || cur[1].is_extinct() {
                return;
            }
            if !(cur[0].is_finite() && cur[1].is_finite()) {
                saturated = true;
                break;
            }
            for c in 0..2 {
                dev = dev.max((cur[c].ln() - s[c]).abs());
            }
        }
        if saturated {
            acc.saturated += 1;
        } else {
            acc.alive += 1;
            acc.exceed += (dev >= level) as u64;
            acc.max_dev = acc.max_dev.max(dev);
        }
    });

    let forward = (acc.alive + acc.saturated) as f64 / replicas as f64;
    if acc.alive == 0 {
        let curve = annealed_curve(spec, z, &[n], FALLBACK_REPLICAS, &streams.child("annealed"), AnnealedMode::Coexist)?;
        return Err(Error::NoCoSurvivors { trials: replicas, coexistence: curve.rows[0].estimate });
    }
    let f = acc.exceed as f64 / acc.alive as f64;
    Ok(ZsReport {
        n,
        epsilon,
        frequency: f,
        stderr: (f * (1.0 - f) / acc.alive as f64).sqrt(),
        upper95: wilson_upper(acc.exceed, acc.alive),
        co_surviving: acc.alive,
        exceedances: acc.exceed,
        saturated: acc.saturated,
        replicas: replicas as u64,
        coexistence: forward,
        max_deviation: acc.max_dev,
    })
}
