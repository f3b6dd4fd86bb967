//! Replica-parallel accumulation.
//!
//! Replicas are processed in fixed-size blocks. Each block folds its
//! replicas in index order and blocks are merged in block order, so the
//! floating-point result is identical for any worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Replicas per work unit. Part of the reproducibility contract: changing it
/// changes summation order.
pub const BLOCK: usize = 1024;

/// Associative combination of partial results.
pub trait Merge {
    fn merge(&mut self, other: Self);
}

/// Count, sum and sum of squares of an observed quantity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub count: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    #[inline]
    pub fn push(&mut self, v: f64) {
        self.count += 1;
        self.sum += v;
        self.sum_sq += v * v;
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            return f64::NAN;
        }
        self.sum / self.count as f64
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        let m = self.sum / n;
        ((self.sum_sq - n * m * m) / (n - 1.0)).max(0.0)
    }

    /// Standard error of the mean.
    pub fn stderr(&self) -> f64 {
        if self.count == 0 {
            return f64::NAN;
        }
        (self.variance() / self.count as f64).sqrt()
    }
}

impl Merge for Moments {
    fn merge(&mut self, other: Self) {
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }
}

impl<T: Merge> Merge for Vec<T> {
    fn merge(&mut self, other: Self) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.iter_mut().zip(other) {
            a.merge(b);
        }
    }
}

impl Merge for u64 {
    fn merge(&mut self, other: Self) {
        *self += other;
    }
}

impl<A: Merge, B: Merge> Merge for (A, B) {
    fn merge(&mut self, other: Self) {
        self.0.merge(other.0);
        self.1.merge(other.1);
    }
}

/// Runs `body(replica_index, &mut acc)` for every replica in `0..replicas`
/// on the ambient rayon pool and merges the block accumulators in order.
pub fn run_replicas<A, I, F>(replicas: usize, init: I, body: F) -> A
where
    A: Merge + Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(u64, &mut A) + Sync + Send,
{
    let blocks = replicas.div_ceil(BLOCK);
    let parts: Vec<A> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = init();
            let hi = ((b + 1) * BLOCK).min(replicas);
            for i in b * BLOCK..hi {
                body(i as u64, &mut acc);
            }
            acc
        })
        .collect();
    parts.into_iter().fold(init(), |mut acc, p| {
        acc.merge(p);
        acc
    })
}
