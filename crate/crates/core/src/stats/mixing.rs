//! Empirical α-mixing against the coupling bound
//! `α(n) <= 2 sup_j P(Z^{X_j,G_j}_{j,j+n} != Z^{x0,g0}_{j,j+n})`.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::coupling::check_coupling_bundle;
use crate::error::{invalid, Result};
use crate::model::Problem;
use crate::noise::{StreamKey, StreamTag};
use crate::randommap::{ConstantsBundle, CounterNoise, MapKernel, NoiseRecord, NoiseSource};
use crate::sampler::{init_chain, InitLaw};
use crate::stats::par_reps;

/// Quantile levels used to place event thresholds.
pub const EVENT_QUANTILES: [f64; 3] = [0.25, 0.5, 0.75];

pub const MIN_ENSEMBLE: usize = 1000;

/// Inflation of a single-event standard error so that `3·se` keeps its
/// two-sided 3σ level for the maximum over `events` events (Bonferroni).
pub fn family_factor(events: usize) -> f64 {
    let z = Normal::standard();
    let tail = 2.0 * (1.0 - z.cdf(3.0)) / events.max(1) as f64;
    z.inverse_cdf(1.0 - tail / 2.0) / 3.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaEstimate {
    pub alpha: f64,
    /// `sqrt(p_A (1-p_A) p_B (1-p_B) / n)` at the maximizing pair, scaled by
    /// [`family_factor`] for the size of the event grid.
    pub stderr: f64,
    /// Unscaled single-event value.
    pub event_stderr: f64,
    pub a_threshold: f64,
    pub b_threshold: f64,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// `max |P(A ∩ B) - P(A) P(B)|` over `A = {a <= s}`, `B = {b <= t}` with `s`,
/// `t` at the given empirical quantiles. A lower bound on `α`.
pub fn alpha_estimate(a: &[f64], b: &[f64], quantiles: &[f64]) -> Result<AlphaEstimate> {
    if a.len() != b.len() {
        return Err(invalid("paired samples must have equal length"));
    }
    if a.len() < MIN_ENSEMBLE {
        return Err(invalid(format!("need at least {MIN_ENSEMBLE} trajectories, got {}", a.len())));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(invalid("samples contain NaN"));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let n = a.len() as f64;
    let factor = family_factor(quantiles.len() * quantiles.len());
    let mut best = AlphaEstimate {
        alpha: 0.0,
        stderr: 0.0,
        event_stderr: 0.0,
        a_threshold: f64::NAN,
        b_threshold: f64::NAN,
    };
    for &qa in quantiles {
        let s = quantile(&sa, qa);
        for &qb in quantiles {
            let t = quantile(&sb, qb);
            let (mut ca, mut cb, mut cab) = (0u64, 0u64, 0u64);
            for (x, y) in a.iter().zip(b) {
                let (ia, ib) = (*x <= s, *y <= t);
                ca += ia as u64;
                cb += ib as u64;
                cab += (ia && ib) as u64;
            }
            let (pa, pb) = (ca as f64 / n, cb as f64 / n);
            let v = (cab as f64 / n - pa * pb).abs();
            if v > best.alpha || best.a_threshold.is_nan() {
                let se = (pa * (1.0 - pa) * pb * (1.0 - pb) / n).sqrt();
                best = AlphaEstimate {
                    alpha: v,
                    stderr: factor * se,
                    event_stderr: se,
                    a_threshold: s,
                    b_threshold: t,
                };
            }
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingReport {
    pub j: u64,
    pub lags: Vec<u64>,
    pub alpha_hat: Vec<f64>,
    pub alpha_stderr: Vec<f64>,
    /// `P̂(meet with the anchor within lag)`.
    pub p_meet: Vec<f64>,
    /// `2 (1 - p_meet)`.
    pub coupling_bound: Vec<f64>,
    /// `alpha_stderr + 2 sqrt(p (1 - p) / n)`.
    pub combined_stderr: Vec<f64>,
    pub event_family: String,
    pub replications: u64,
    pub inequality_pass: bool,
    pub monotone_pass: bool,
}

impl MixingReport {
    pub fn pass(&self) -> bool {
        self.inequality_pass && self.monotone_pass
    }
}

/// Compares `α̂(lag)` between steps `j` and `j + lag` of the map chain started
/// from `init` with twice the probability that it has not met the anchor
/// chain `(0, F_i(0))` started at step `j` on the same noise.
#[allow(clippy::too_many_arguments)]
pub fn mixing_vs_coupling(
    problem: &Problem,
    bundle: &ConstantsBundle,
    init: &InitLaw,
    j: u64,
    lags: &[u64],
    replications: u64,
    seed: u64,
) -> Result<MixingReport> {
    check_coupling_bundle(bundle)?;
    if lags.is_empty() || lags.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("lags must be nonempty and increasing"));
    }
    if (replications as usize) < MIN_ENSEMBLE {
        return Err(invalid(format!("need at least {MIN_ENSEMBLE} replications")));
    }
    let max_lag = *lags.last().unwrap();
    let zero = vec![0.0; problem.dim()];
    let runs = par_reps(replications, |rep| {
        let noise = CounterNoise::new(seed, rep, problem.count());
        let mut chain = init.init_state(problem, StreamKey::new(seed, rep, 0, StreamTag::Init))?;
        let mut kernel = MapKernel::new(problem, bundle)?;
        let mut anchor_kernel = MapKernel::new(problem, bundle)?;
        let mut rec = NoiseRecord::zeroed(problem.dim());
        for n in 1..=j {
            noise.fill(n, &mut rec);
            kernel.step(&mut chain, &rec)?;
        }
        let start = chain.x[0];
        let mut anchor = init_chain(problem, &zero)?;
        anchor.step = j;
        let mut met = chain.same_point(&anchor).then_some(0u64);
        let mut values = Vec::with_capacity(lags.len());
        let mut li = 0;
        if lags[0] == 0 {
            values.push(start);
            li = 1;
        }
        for t in 1..=max_lag {
            noise.fill(j + t, &mut rec);
            kernel.step(&mut chain, &rec)?;
            if met.is_none() {
                anchor_kernel.step(&mut anchor, &rec)?;
                if chain.same_point(&anchor) {
                    met = Some(t);
                }
            }
            if li < lags.len() && t == lags[li] {
                values.push(chain.x[0]);
                li += 1;
            }
        }
        Ok((start, values, met))
    })?;

    let r = replications as f64;
    let starts: Vec<f64> = runs.iter().map(|run| run.0).collect();
    let mut report = MixingReport {
        j,
        lags: lags.to_vec(),
        alpha_hat: Vec::new(),
        alpha_stderr: Vec::new(),
        p_meet: Vec::new(),
        coupling_bound: Vec::new(),
        combined_stderr: Vec::new(),
        event_family: format!(
            "{{x0_j <= a}} x {{x0_(j+lag) <= b}}, a and b at empirical quantiles {EVENT_QUANTILES:?}"
        ),
        replications,
        inequality_pass: true,
        monotone_pass: true,
    };
    for (i, &lag) in lags.iter().enumerate() {
        let later: Vec<f64> = runs.iter().map(|run| run.1[i]).collect();
        let est = alpha_estimate(&starts, &later, &EVENT_QUANTILES)?;
        let p = runs.iter().filter(|run| run.2.is_some_and(|m| m <= lag)).count() as f64 / r;
        let bound = 2.0 * (1.0 - p);
        let se = est.stderr + 2.0 * (p * (1.0 - p) / r).sqrt();
        report.inequality_pass &= est.alpha <= bound + 3.0 * se;
        report.alpha_hat.push(est.alpha);
        report.alpha_stderr.push(est.stderr);
        report.p_meet.push(p);
        report.coupling_bound.push(bound);
        report.combined_stderr.push(se);
    }
    report.monotone_pass = (1..lags.len()).all(|i| {
        report.alpha_hat[i] <= report.alpha_hat[i - 1] + 3.0 * (report.alpha_stderr[i] + report.alpha_stderr[i - 1])
    });
    Ok(report)
}
