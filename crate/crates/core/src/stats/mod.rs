//! Ergodicity and mixing diagnostics.
//!
//! Every estimator collects per-replication results in replication order and
//! reduces them sequentially, so outputs do not depend on the thread count.

pub mod ks;
pub mod lln;
pub mod mixing;
pub mod moments;
pub mod observable;
pub mod tv;

use rayon::prelude::*;

use crate::error::Result;

pub use ks::{ks_two_sample, KsResult};
pub use lln::{lln_check, LlnOptions, LlnReport};
pub use mixing::{alpha_estimate, mixing_vs_coupling, AlphaEstimate, MixingReport};
pub use moments::{track_moments, MomentSeries};
pub use observable::Observable;
pub use tv::{tv_cauchy_scan, tv_estimate, TvScan};

/// Runs `f` for every replication in parallel and returns results in order.
pub(crate) fn par_reps<T, F>(replications: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    (0..replications).into_par_iter().map(f).collect()
}

/// Neumaier compensated sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Mean and sample standard deviation.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.windows(2).all(|w| w[0] == w[1]) {
        return (xs.first().copied().unwrap_or(f64::NAN), 0.0);
    }
    let mut acc = CompensatedSum::default();
    xs.iter().for_each(|&x| acc.add(x));
    let mean = acc.value() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let mut sq = CompensatedSum::default();
    xs.iter().for_each(|&x| sq.add((x - mean) * (x - mean)));
    (mean, (sq.value() / (n - 1.0)).sqrt())
}
