use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::branching::{PopSize, Quenched};
use crate::env::{p_from_x, EnvModelSpec};
use crate::error::{Error, Result};
use crate::harmonic::{effective_sample_size, htransform_sample, HarmonicApprox, SamplerConfig};
use crate::rng::Streams;
use crate::walk::{cone_geometry, Point2};

const MIN_ACCEPTED: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeanderMode {
    /// h-transform particles weighted back to the law given `tau_x > n`;
    /// marginal of `(x + S(tn)) / sqrt(n)`.
    Walk,
    /// Environments weighted by the exact co-existence probability `Y(n)`;
    /// marginal of `S(tn) / sqrt(n)`.
    Quenched,
    /// Forward runs kept when both populations are alive at `n`; marginal
    /// of `log Z(tn) / sqrt(n)`.
    Rejection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanderConfig {
    pub mode: MeanderMode,
    pub t_grid: Vec<f64>,
    pub horizons: (usize, usize),
    /// Particles, environments or forward runs per horizon.
    pub samples: usize,
}

/// KS distances between horizons for coordinate 1, coordinate 2 and the
/// Euclidean norm of the scaled marginal at `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanderRow {
    pub t: f64,
    pub ks: [f64; 3],
    pub ess: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanderReport {
    pub mode: MeanderMode,
    pub horizons: (usize, usize),
    pub rows: Vec<MeanderRow>,
    /// Rejection mode: runs dropped for overflowing `f64`.
    pub saturated: usize,
}

/// Weighted sample of a scaled two-dimensional marginal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginal {
    pub t: f64,
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub ess: f64,
}

impl Marginal {
    fn column(&self, c: usize) -> Vec<(f64, f64)> {
        self.points
            .iter()
            .zip(&self.weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(p, &w)| {
                let v = match c {
                    0 | 1 => p[c],
                    _ => p[0].hypot(p[1]),
                };
                (v, w)
            })
            .collect()
    }
}

/// Two-sample Kolmogorov-Smirnov distance between weighted samples.
pub fn ks_weighted(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let prep = |s: &[(f64, f64)]| {
        let mut v: Vec<(f64, f64)> = s.iter().copied().filter(|&(_, w)| w > 0.0).collect();
        v.sort_by(|x, y| x.0.total_cmp(&y.0));
        let total: f64 = v.iter().map(|p| p.1).sum();
        (v, total)
    };
    let (a, ta) = prep(a);
    let (b, tb) = prep(b);
    if a.is_empty() || b.is_empty() {
        return if a.is_empty() && b.is_empty() { 0.0 } else { 1.0 };
    }
    let (mut i, mut j) = (0, 0);
    let (mut fa, mut fb) = (0.0, 0.0);
    let mut d: f64 = 0.0;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(p), Some(q)) => p.0.min(q.0),
            (Some(p), None) => p.0,
            (None, Some(q)) => q.0,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i].0 == x {
            fa += a[i].1;
            i += 1;
        }
        while j < b.len() && b[j].0 == x {
            fb += b[j].1;
            j += 1;
        }
        d = d.max((fa / ta - fb / tb).abs());
    }
    d.clamp(0.0, 1.0)
}

pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let w = |s: &[f64]| s.iter().map(|&v| (v, 1.0)).collect::<Vec<_>>();
    ks_weighted(&w(a), &w(b))
}

fn step_at(t: f64, n: usize) -> usize {
    ((t * n as f64).round() as usize).clamp(1, n)
}

fn check_config(cfg: &MeanderConfig) -> Result<()> {
    if cfg.t_grid.is_empty() || cfg.t_grid.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
        return Err(Error::Domain("t grid must be non-empty with values in (0, 1]".into()));
    }
    if cfg.horizons.0 == 0 || cfg.horizons.1 == 0 {
        return Err(Error::Domain("horizons must be >= 1".into()));
    }
    if cfg.samples == 0 {
        return Err(Error::Precondition("samples must be >= 1".into()));
    }
    Ok(())
}

/// Scaled conditioned marginals at every `t` for horizon `n`, plus the
/// number of saturated forward runs.
pub fn conditioned_marginals(
    spec: &EnvModelSpec,
    x: Point2<f64>,
    z: [u64; 2],
    mode: MeanderMode,
    t_grid: &[f64],
    n: usize,
    samples: usize,
    streams: &Streams,
) -> Result<(Vec<Marginal>, usize)> {
    let steps: Vec<usize> = t_grid.iter().map(|&t| step_at(t, n)).collect();
    let scale = 1.0 / (n as f64).sqrt();
    match mode {
        MeanderMode::Walk => {
            let approx = HarmonicApprox::with_defaults(cone_geometry(spec.rho)?);
            let cfg = SamplerConfig::new(samples).with_snapshots(steps.clone());
            let ens = htransform_sample(&approx, spec, x, n, &cfg, streams)?;
            let weights = ens.conditioned_weights();
            let out = t_grid
                .iter()
                .zip(&steps)
                .map(|(&t, &k)| {
                    let pts = ens.snapshot(k).expect("snapshot recorded");
                    Marginal {
                        t,
                        points: pts.iter().map(|p| [p[0] * scale, p[1] * scale]).collect(),
                        weights: weights.clone(),
                        ess: ens.lineage_ess(k, &weights).unwrap_or(0.0),
                    }
                })
                .collect::<Vec<_>>();
            let worst = out.iter().map(|m| m.ess).fold(f64::INFINITY, f64::min);
            if worst < MIN_ACCEPTED as f64 {
                return Err(Error::InsufficientSamples { accepted: worst as usize, required: MIN_ACCEPTED });
            }
            Ok((out, 0))
        }
        MeanderMode::Quenched => {
            let sampler = spec.sampler();
            let draws: Vec<(Vec<[f64; 2]>, f64)> = (0..samples as u64)
                .into_par_iter()
                .map(|i| {
                    let mut rng = streams.rng(i);
                    let mut q = Quenched::<f64>::default();
                    let mut rec = Vec::with_capacity(steps.len());
                    for k in 1..=n {
                        q.push_step(sampler.draw(&mut rng));
                        for _ in steps.iter().filter(|&&s| s == k) {
                            let pos = q.position();
                            rec.push([pos[0] * scale, pos[1] * scale]);
                        }
                    }
                    (rec, q.coexistence(z))
                })
                .collect();
            let weights: Vec<f64> = draws.iter().map(|d| d.1).collect();
            let ess = effective_sample_size(&weights);
            if !(ess >= MIN_ACCEPTED as f64) {
                return Err(Error::InsufficientSamples { accepted: ess as usize, required: MIN_ACCEPTED });
            }
            let out = t_grid
                .iter()
                .enumerate()
                .map(|(c, &t)| Marginal {
                    t,
                    points: draws.iter().map(|d| d.0[c]).collect(),
                    weights: weights.clone(),
                    ess,
                })
                .collect();
            Ok((out, 0))
        }
        MeanderMode::Rejection => {
            let sampler = spec.sampler();
            let offspring = streams.child("offspring");
            let runs: Vec<Result<Option<Vec<[f64; 2]>>>> = (0..samples as u64)
                .into_par_iter()
                .map(|i| {
                    let mut env_rng = streams.rng(i);
                    let mut rng = offspring.rng(i);
                    let mut cur = z.map(PopSize::Exact);
                    let mut rec = Vec::with_capacity(steps.len());
                    for k in 1..=n {
                        let d = sampler.draw(&mut env_rng);
                        for c in 0..2 {
                            cur[c] = cur[c].step(p_from_x(d[c]), &mut rng)?;
                        }
                        if cur[0].is_extinct() || cur[1].is_extinct() {
                            return Ok(None);
                        }
                        if !(cur[0].is_finite() && cur[1].is_finite()) {
                            return Ok(Some(Vec::new()));
                        }
                        for _ in steps.iter().filter(|&&s| s == k) {
                            rec.push([cur[0].ln() * scale, cur[1].ln() * scale]);
                        }
                    }
                    Ok(Some(rec))
                })
                .collect();
            let mut accepted: Vec<Vec<[f64; 2]>> = Vec::new();
            let mut saturated = 0;
            for r in runs {
                match r? {
                    Some(rec) if rec.is_empty() => saturated += 1,
                    Some(rec) => accepted.push(rec),
                    None => {}
                }
            }
            if accepted.len() < MIN_ACCEPTED {
                return Err(Error::InsufficientSamples { accepted: accepted.len(), required: MIN_ACCEPTED });
            }
            let ess = accepted.len() as f64;
            let out = t_grid
                .iter()
                .enumerate()
                .map(|(c, &t)| Marginal {
                    t,
                    points: accepted.iter().map(|r| r[c]).collect(),
                    weights: vec![1.0; accepted.len()],
                    ess,
                })
                .collect();
            Ok((out, saturated))
        }
    }
}

/// Compares scaled conditioned marginals at horizons `n` and `4n` (or any
/// pair) by KS distance, per `t` and per component.
pub fn meander_consistency(
    spec: &EnvModelSpec,
    x: Point2<f64>,
    z: [u64; 2],
    config: &MeanderConfig,
    streams: &Streams,
) -> Result<MeanderReport> {
    check_config(config)?;
    let (n0, n1) = config.horizons;
    let run = |n: usize, tag: &str| {
        conditioned_marginals(spec, x, z, config.mode, &config.t_grid, n, config.samples, &streams.child(tag))
    };
    let (first, sat0) = run(n0, "horizon-a")?;
    let (second, sat1) = if n0 == n1 { (first.clone(), 0) } else { run(n1, "horizon-b")? };
    let rows = first
        .iter()
        .zip(&second)
        .map(|(a, b)| MeanderRow {
            t: a.t,
            ks: [0, 1, 2].map(|c| ks_weighted(&a.column(c), &b.column(c))),
            ess: [a.ess, b.ess],
        })
        .collect();
    Ok(MeanderReport { mode: config.mode, horizons: config.horizons, rows, saturated: sat0 + sat1 })
}
