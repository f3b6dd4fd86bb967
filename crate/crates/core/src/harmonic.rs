//! Harmonic function of the killed walk and the Doob h-transform sampler.
//!
//! `V` has no closed form. It is approximated by extending the Brownian
//! harmonic function `u` of the whitened cone `m` steps through the killed
//! walk, with the argument shifted by `R (1, 1)` toward the interior.
//!
//! The particle sampler propagates walkers with the true step law, kills
//! them on exit and reweights survivors by `h(new) / h(old)`. Whatever `h`
//! is, the weighted ensemble is an unbiased representation of
//! `E[h(x + S(n)) 1_A; tau_x > n] / h(x)`: with `h ~ V` it is the
//! h-transformed law, and dividing the weights by `h` recovers the law
//! conditioned on `tau_x > n`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::EnvModelSpec;
use crate::error::{Error, Result};
use crate::rng::Streams;
use crate::stats::{run_replicas, Moments};
use crate::walk::{Cone, Point2};

pub const DEFAULT_OFFSET: f64 = 2.0;
pub const DEFAULT_DEPTH: usize = 64;
pub const DEFAULT_REPLICAS: usize = 10_000;

type P = Point2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarmonicApprox {
    pub geometry: Cone<f64>,
    /// Shift `R` along `(1, 1)`.
    pub offset: f64,
    /// Number of killed-walk steps `m` used by [`estimate_v`].
    pub depth: usize,
    /// Monte Carlo budget of [`estimate_v`].
    pub replicas: usize,
}

impl HarmonicApprox {
    pub fn new(geometry: Cone<f64>, offset: f64, depth: usize, replicas: usize) -> Result<Self> {
        if !(offset >= 0.0 && offset.is_finite()) {
            return Err(Error::Domain(format!("offset R must be finite and >= 0, got {offset}")));
        }
        if replicas == 0 {
            return Err(Error::Precondition("harmonic estimate needs at least one replica".into()));
        }
        Ok(Self { geometry, offset, depth, replicas })
    }

    pub fn with_defaults(geometry: Cone<f64>) -> Self {
        Self { geometry, offset: DEFAULT_OFFSET, depth: DEFAULT_DEPTH, replicas: DEFAULT_REPLICAS }
    }

    /// `u(T(y + R x0))`: the depth-0 evaluation, used as `h` by the sampler.
    #[inline]
    pub fn surrogate(&self, y: P) -> f64 {
        self.geometry.u(y + Point2::new(self.offset, self.offset))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VEstimate {
    pub value: f64,
    pub stderr: f64,
    pub survivors: u64,
    pub replicas: u64,
    /// Every replica left the quadrant before the requested depth.
    pub starved: bool,
}

fn require_interior(x: P) -> Result<()> {
    if !(x.is_finite() && x.is_interior()) {
        return Err(Error::Precondition(format!("x = ({}, {}) must be strictly inside the quadrant", x[0], x[1])));
    }
    Ok(())
}

/// `E[u(T(x + S(m) + R x0)); tau_x > m]` by Monte Carlo.
pub fn estimate_v(approx: &HarmonicApprox, spec: &EnvModelSpec, x: P, streams: &Streams) -> Result<VEstimate> {
    require_interior(x)?;
    let start = approx.surrogate(x);
    if !(start > 0.0) {
        return Err(Error::Precondition("surrogate vanishes at the start point".into()));
    }
    if approx.depth == 0 {
        return Ok(VEstimate { value: start, stderr: 0.0, survivors: 1, replicas: 1, starved: false });
    }
    let sampler = spec.sampler();
    let (m, survivors) = run_replicas(
        approx.replicas,
        || (Moments::default(), 0u64),
        |i, (acc, alive)| {
            let mut rng = streams.rng(i);
            let mut y = x;
            for _ in 0..approx.depth {
                y = y + Point2(sampler.draw(&mut rng));
                if !y.is_interior() {
                    acc.push(0.0);
                    return;
                }
            }
            *alive += 1;
            acc.push(approx.surrogate(y));
        },
    );
    Ok(VEstimate {
        value: m.mean(),
        stderr: m.stderr(),
        survivors,
        replicas: m.count,
        starved: survivors == 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub particles: usize,
    /// Resample when `ESS < ess_fraction * particles`.
    pub ess_fraction: f64,
    /// Steps at which each particle's ancestral position is recorded.
    pub snapshot_steps: Vec<usize>,
}

impl SamplerConfig {
    pub fn new(particles: usize) -> Self {
        Self { particles, ess_fraction: 0.5, snapshot_steps: Vec::new() }
    }

    pub fn with_snapshots(mut self, steps: Vec<usize>) -> Self {
        self.snapshot_steps = steps;
        self
    }
}

/// Weighted particles after `step` steps of the h-transform sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleEnsemble {
    pub step: usize,
    pub start: P,
    /// `h(x)` at the start point.
    pub h_start: f64,
    /// `x + S(step)` per particle.
    pub positions: Vec<P>,
    /// Normalised weights representing the h-transformed law.
    pub weights: Vec<f64>,
    /// `h(x + S(step))` per particle.
    pub h_values: Vec<f64>,
    pub ess: f64,
    pub min_ess: f64,
    /// `ln` of the product of the per-step weight totals; estimates
    /// `ln(E[h(x + S(n)); tau_x > n] / h(x))`.
    pub log_normalizer: f64,
    pub resamplings: usize,
    pub snapshots: Vec<Snapshot>,
}

/// Ancestral positions `x + S(step)` of the current particles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: usize,
    pub positions: Vec<P>,
    /// Slot of the ancestor at `step`; particles sharing it share the lineage.
    pub ancestors: Vec<usize>,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Normalised weights of the law conditioned on `tau_x > step`.
    pub fn conditioned_weights(&self) -> Vec<f64> {
        let raw: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.h_values)
            .map(|(&w, &h)| if w > 0.0 { w / h } else { 0.0 })
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }

    /// Unbiased estimate of `P(tau_x > step)`.
    pub fn survival_estimate(&self) -> f64 {
        let inv_h: f64 = self
            .weights
            .iter()
            .zip(&self.h_values)
            .map(|(&w, &h)| if w > 0.0 { w / h } else { 0.0 })
            .sum();
        self.h_start * self.log_normalizer.exp() * inv_h
    }

    pub fn snapshot(&self, k: usize) -> Option<&[P]> {
        if k == self.step {
            return Some(&self.positions);
        }
        self.snapshots.iter().find(|s| s.step == k).map(|s| s.positions.as_slice())
    }

    /// Effective sample size of `weights` after pooling particles that share
    /// an ancestor at step `k`.
    pub fn lineage_ess(&self, k: usize, weights: &[f64]) -> Option<f64> {
        if k == self.step {
            return Some(effective_sample_size(weights));
        }
        let snap = self.snapshots.iter().find(|s| s.step == k)?;
        let mut pooled = vec![0.0; self.len()];
        for (&a, &w) in snap.ancestors.iter().zip(weights) {
            pooled[a] += w;
        }
        Some(effective_sample_size(&pooled))
    }
}

pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    let sq: f64 = weights.iter().map(|w| w * w).sum();
    if sq > 0.0 {
        total * total / sq
    } else {
        0.0
    }
}

/// Ancestor indices for systematic resampling of normalised `weights`.
pub fn systematic_resample<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Vec<usize> {
    let n = weights.len();
    let step = 1.0 / n as f64;
    let mut u = rng.random::<f64>() * step;
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0];
    let mut j = 0;
    for _ in 0..n {
        while u > cum && j + 1 < n {
            j += 1;
            cum += weights[j];
        }
        out.push(j);
        u += step;
    }
    out
}

/// Sequential importance resampling of walks kept inside the quadrant.
pub fn htransform_sample(
    approx: &HarmonicApprox,
    spec: &EnvModelSpec,
    x: P,
    n: usize,
    config: &SamplerConfig,
    streams: &Streams,
) -> Result<ParticleEnsemble> {
    require_interior(x)?;
    let count = config.particles;
    if count < 100 {
        return Err(Error::Precondition(format!("sampler needs at least 100 particles, got {count}")));
    }
    if !(config.ess_fraction > 0.0 && config.ess_fraction <= 1.0) {
        return Err(Error::Domain("ess_fraction must lie in (0, 1]".into()));
    }
    let h0 = approx.surrogate(x);
    if !(h0 > 0.0) {
        return Err(Error::Precondition("h vanishes at the start point".into()));
    }
    let sampler = spec.sampler();
    let mut snap_steps: Vec<usize> = config.snapshot_steps.iter().copied().filter(|&k| k <= n).collect();
    snap_steps.sort_unstable();
    snap_steps.dedup();

    let mut positions = vec![x; count];
    let mut hs = vec![h0; count];
    let mut weights = vec![1.0 / count as f64; count];
    let mut rngs: Vec<_> = (0..count as u64).map(|j| streams.rng(j)).collect();
    let mut control = streams.child("resample").rng(0);
    let mut snapshots: Vec<Snapshot> = Vec::with_capacity(snap_steps.len());
    let take = |step: usize, positions: &[P]| Snapshot { step, positions: positions.to_vec(), ancestors: (0..count).collect() };
    if snap_steps.first() == Some(&0) && n > 0 {
        snapshots.push(take(0, &positions));
    }

    let mut log_normalizer = 0.0;
    let mut ess = count as f64;
    let mut min_ess = ess;
    let mut resamplings = 0;

    for k in 1..=n {
        positions
            .par_iter_mut()
            .zip(hs.par_iter_mut())
            .zip(weights.par_iter_mut())
            .zip(rngs.par_iter_mut())
            .for_each(|(((y, h), w), rng)| {
                if *w == 0.0 {
                    return;
                }
                let next = *y + Point2(sampler.draw(rng));
                if next.is_interior() {
                    let h_next = approx.surrogate(next);
                    *w *= h_next / *h;
                    *h = h_next;
                    *y = next;
                } else {
                    *w = 0.0;
                }
            });

        let total: f64 = weights.iter().sum();
        let alive = weights.iter().filter(|&&w| w > 0.0).count();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::WeightUnderflow { step: k, ess: 0.0, alive });
        }
        log_normalizer += total.ln();
        weights.iter_mut().for_each(|w| *w /= total);
        ess = effective_sample_size(&weights);
        if !ess.is_finite() {
            return Err(Error::WeightUnderflow { step: k, ess, alive });
        }
        min_ess = min_ess.min(ess);

        if snap_steps.binary_search(&k).is_ok() && k < n {
            snapshots.push(take(k, &positions));
        }

        if k < n && ess < config.ess_fraction * count as f64 {
            let idx = systematic_resample(&weights, &mut control);
            positions = idx.iter().map(|&a| positions[a]).collect();
            hs = idx.iter().map(|&a| hs[a]).collect();
            for snap in snapshots.iter_mut() {
                snap.positions = idx.iter().map(|&a| snap.positions[a]).collect();
                snap.ancestors = idx.iter().map(|&a| snap.ancestors[a]).collect();
            }
            weights.iter_mut().for_each(|w| *w = 1.0 / count as f64);
            ess = count as f64;
            resamplings += 1;
        }
    }

    Ok(ParticleEnsemble {
        step: n,
        start: x,
        h_start: h0,
        positions,
        weights,
        h_values: hs,
        ess,
        min_ess,
        log_normalizer,
        resamplings,
        snapshots,
    })
}

/// Mean and standard error of `P(tau_x > n)` over independent sampler runs.
pub fn htransform_survival(
    approx: &HarmonicApprox,
    spec: &EnvModelSpec,
    x: P,
    n: usize,
    particles: usize,
    runs: usize,
    streams: &Streams,
) -> Result<(f64, f64)> {
    let mut m = Moments::default();
    for r in 0..runs {
        let ens = htransform_sample(approx, spec, x, n, &SamplerConfig::new(particles), &streams.child(&format!("run{r}")))?;
        m.push(ens.survival_estimate());
    }
    Ok((m.mean(), m.stderr()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepulsionRow {
    pub n: usize,
    pub fraction: f64,
    pub stderr: f64,
    pub particles: usize,
}

/// Fraction of paths whose smaller terminal coordinate is `<= log^2 n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepulsionReport {
    pub rows: Vec<RepulsionRow>,
}

pub fn repulsion_threshold(n: usize) -> f64 {
    (n as f64).ln().powi(2)
}

/// Repulsion fractions under the h-transformed law, one ensemble per horizon.
pub fn repulsion_report(ensembles: &[ParticleEnsemble]) -> Result<RepulsionReport> {
    if ensembles.windows(2).any(|w| w[0].step >= w[1].step) {
        return Err(Error::Precondition("ensembles must have strictly increasing horizons".into()));
    }
    let rows = ensembles
        .iter()
        .map(|e| {
            let level = repulsion_threshold(e.step);
            let fraction: f64 = e
                .positions
                .iter()
                .zip(&e.weights)
                .filter(|(y, _)| y.min_coord() <= level)
                .map(|(_, w)| w)
                .sum::<f64>()
                .clamp(0.0, 1.0);
            let ess = effective_sample_size(&e.weights).max(1.0);
            RepulsionRow {
                n: e.step,
                fraction,
                stderr: (fraction * (1.0 - fraction) / ess).sqrt(),
                particles: e.len(),
            }
        })
        .collect();
    Ok(RepulsionReport { rows })
}

/// The same fractions for the free (unconditioned, unkilled) walk.
pub fn free_walk_repulsion(
    spec: &EnvModelSpec,
    x: P,
    n_grid: &[usize],
    replicas: usize,
    streams: &Streams,
) -> Result<RepulsionReport> {
    crate::curve::validate_grid(n_grid)?;
    let horizon = *n_grid.last().unwrap();
    let sampler = spec.sampler();
    let levels: Vec<f64> = n_grid.iter().map(|&n| repulsion_threshold(n)).collect();
    let counts = run_replicas(
        replicas,
        || vec![0u64; n_grid.len()],
        |i, acc| {
            let mut rng = streams.rng(i);
            let mut y = x;
            let mut slot = 0;
            for k in 1..=horizon {
                y = y + Point2(sampler.draw(&mut rng));
                if k == n_grid[slot] {
                    acc[slot] += (y.min_coord() <= levels[slot]) as u64;
                    slot += 1;
                }
            }
        },
    );
    let rows = n_grid
        .iter()
        .zip(counts)
        .map(|(&n, c)| {
            let f = c as f64 / replicas as f64;
            RepulsionRow { n, fraction: f, stderr: (f * (1.0 - f) / replicas as f64).sqrt(), particles: replicas }
        })
        .collect();
    Ok(RepulsionReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_discrete_env, make_gaussian_env, RhoParam};
    use crate::walk::cone_geometry;

    fn rho(v: f64) -> RhoParam {
        RhoParam::new(v).unwrap()
    }

    fn p(a: f64, b: f64) -> P {
        Point2::new(a, b)
    }

    #[test]
    fn depth_zero_is_the_surrogate() {
        let g = cone_geometry(rho(-0.3)).unwrap();
        let a = HarmonicApprox::new(g, 2.0, 0, 10).unwrap();
        let v = estimate_v(&a, &make_gaussian_env(rho(-0.3)), p(1.0, 0.5), &Streams::new(1, "v")).unwrap();
        assert_eq!(v.value, g.u(p(3.0, 2.5)));
        assert!(HarmonicApprox::new(g, -1.0, 0, 10).is_err());
    }

    #[test]
    fn v_matches_u_far_from_the_boundary() {
        let g = cone_geometry(rho(0.0)).unwrap();
        let a = HarmonicApprox::new(g, 0.0, 64, 20_000).unwrap();
        let x = p(50.0, 50.0);
        let v = estimate_v(&a, &make_gaussian_env(rho(0.0)), x, &Streams::new(2, "far")).unwrap();
        let ratio = v.value / g.u(x);
        assert!((ratio - 1.0).abs() < 0.05, "ratio {ratio}");
        assert!(!v.starved);
    }

    #[test]
    fn v_is_stable_in_depth() {
        let g = cone_geometry(rho(0.0)).unwrap();
        let spec = make_gaussian_env(rho(0.0));
        let x = p(1.0, 1.0);
        let base = HarmonicApprox::with_defaults(g);
        let deeper = HarmonicApprox { depth: 128, ..base };
        let v64 = estimate_v(&base, &spec, x, &Streams::new(3, "d64")).unwrap();
        let v128 = estimate_v(&deeper, &spec, x, &Streams::new(3, "d128")).unwrap();
        let combined = (v64.stderr.powi(2) + v128.stderr.powi(2)).sqrt();
        assert!((v64.value - v128.value).abs() < 2.0 * combined, "{v64:?} {v128:?}");
    }

    #[test]
    fn depth_extension_increases_toward_v_for_independent_coordinates() {
        // u = 2 y1 y2 is harmonic for the free walk, so the killed extension
        // only gains mass as exits with negative u are removed.
        let g = cone_geometry(rho(0.0)).unwrap();
        let spec = make_gaussian_env(rho(0.0));
        let x = p(1.0, 1.0);
        let streams = Streams::new(8, "mono");
        let at = |m| estimate_v(&HarmonicApprox::new(g, 0.0, m, 200_000).unwrap(), &spec, x, &streams).unwrap().value;
        assert!(at(0) < at(4));
        assert!(at(4) < at(32));
    }

    #[test]
    fn one_step_harmonic_identity_far_inside() {
        let g = cone_geometry(rho(-0.5)).unwrap();
        let spec = make_gaussian_env(rho(-0.5));
        let x = p(12.0, 9.0);
        let streams = Streams::new(4, "fixed-point");
        let lhs = estimate_v(&HarmonicApprox::new(g, DEFAULT_OFFSET, 16, 50_000).unwrap(), &spec, x, &streams).unwrap();
        let rhs = estimate_v(&HarmonicApprox::new(g, DEFAULT_OFFSET, 17, 50_000).unwrap(), &spec, x, &streams).unwrap();
        let combined = (lhs.stderr.powi(2) + rhs.stderr.powi(2)).sqrt();
        assert!((lhs.value - rhs.value).abs() < 3.0 * combined);
    }

    #[test]
    fn starvation_is_flagged() {
        let g = cone_geometry(rho(0.0)).unwrap();
        let a = HarmonicApprox::new(g, 0.0, 500, 1).unwrap();
        let spec = make_discrete_env(rho(0.9));
        let streams = (0..64).map(|s| Streams::new(s, "starve")).find(|s| {
            estimate_v(&a, &spec, p(0.5, 0.5), s).unwrap().starved
        });
        let s = streams.expect("some seed dies");
        let v = estimate_v(&a, &spec, p(0.5, 0.5), &s).unwrap();
        assert_eq!(v.value, 0.0);
        assert_eq!(v.survivors, 0);
    }

    #[test]
    fn systematic_resampling_counts() {
        let w = [0.5, 0.25, 0.0, 0.25];
        let idx = systematic_resample(&w, &mut Streams::new(1, "r").rng(0));
        let c = |j: usize| idx.iter().filter(|&&a| a == j).count();
        assert_eq!(c(0), 2);
        assert_eq!(c(1), 1);
        assert_eq!(c(2), 0);
        assert_eq!(c(3), 1);
        assert!(idx.windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn particles_stay_inside_and_weights_are_sane() {
        let g = cone_geometry(rho(0.3)).unwrap();
        let spec = make_gaussian_env(rho(0.3));
        let cfg = SamplerConfig::new(2000).with_snapshots(vec![10, 25]);
        let e = htransform_sample(&HarmonicApprox::with_defaults(g), &spec, p(0.7, 1.2), 50, &cfg, &Streams::new(5, "s")).unwrap();
        assert_eq!(e.len(), 2000);
        for (y, w) in e.positions.iter().zip(&e.weights) {
            assert!(w.is_finite() && *w >= 0.0);
            if *w > 0.0 {
                assert!(y.is_interior());
            }
        }
        assert!((e.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(e.ess > 0.0 && e.ess <= 2000.0 + 1e-9);
        assert!(e.snapshot(10).unwrap().iter().all(|y| y.is_interior()));
        assert!(e.snapshot(50).is_some());
        assert!(e.snapshot(11).is_none());
        let cw = e.conditioned_weights();
        let full = e.lineage_ess(50, &cw).unwrap();
        let early = e.lineage_ess(10, &cw).unwrap();
        assert!(early <= full + 1e-9);
        assert!(early > 0.0);
        let s = e.survival_estimate();
        assert!(s > 0.0 && s < 1.0);
    }

    #[test]
    fn sampler_preconditions() {
        let g = cone_geometry(rho(0.0)).unwrap();
        let a = HarmonicApprox::with_defaults(g);
        let spec = make_gaussian_env(rho(0.0));
        assert!(htransform_sample(&a, &spec, p(1.0, 1.0), 5, &SamplerConfig::new(99), &Streams::new(1, "s")).is_err());
        assert!(htransform_sample(&a, &spec, p(0.0, 1.0), 5, &SamplerConfig::new(200), &Streams::new(1, "s")).is_err());
    }

    #[test]
    fn extinction_of_every_particle_is_an_error() {
        // anti-diagonal steps leave the quadrant from (0.5, 0.5) at once
        let g = cone_geometry(rho(0.0)).unwrap();
        let a = HarmonicApprox::new(g, 0.0, 0, 1).unwrap();
        let spec = make_discrete_env(rho(-1.0));
        let r = htransform_sample(&a, &spec, p(0.5, 0.5), 3, &SamplerConfig::new(100), &Streams::new(1, "dead"));
        assert!(matches!(r, Err(Error::WeightUnderflow { step: 1, .. })));
    }

    #[test]
    fn repulsion_at_first_step_is_zero() {
        let g = cone_geometry(rho(0.0)).unwrap();
        let spec = make_discrete_env(rho(0.0));
        let e = htransform_sample(&HarmonicApprox::with_defaults(g), &spec, p(10.0, 10.0), 1, &SamplerConfig::new(500), &Streams::new(1, "r1")).unwrap();
        let rep = repulsion_report(std::slice::from_ref(&e)).unwrap();
        assert_eq!(rep.rows[0].fraction, 0.0);
        assert_eq!(repulsion_threshold(1), 0.0);
    }
}
