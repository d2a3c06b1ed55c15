//! Total-variation estimates from equal-width histograms.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::Problem;
use crate::noise::{StreamKey, StreamTag};
use crate::sampler::{InitLaw, SagaKernel, TransitionInput};
use crate::stats::par_reps;

pub const MAX_BINS: usize = 256;

/// `⌈n^{1/3}⌉`, capped at [`MAX_BINS`].
pub fn default_bins(n: usize) -> usize {
    let mut b = (n as f64).cbrt().ceil() as usize;
    // cbrt can land a hair above an exact cube
    if b > 1 && (b - 1).pow(3) >= n {
        b -= 1;
    }
    b.clamp(1, MAX_BINS)
}

/// Half the L1 distance between the histogram densities of `a` and `b` on a
/// common grid of `bins` equal-width cells per axis over the pooled range.
pub fn tv_estimate(a: &[Vec<f64>], b: &[Vec<f64>], bins: Option<usize>) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid("TV estimate needs two nonempty samples"));
    }
    let d = a[0].len();
    if d == 0 || a.iter().chain(b).any(|v| v.len() != d) {
        return Err(invalid("samples must share one positive dimension"));
    }
    if a.iter().chain(b).flatten().any(|v| !v.is_finite()) {
        return Err(invalid("samples must be finite"));
    }
    let bins = bins.unwrap_or_else(|| default_bins(a.len().min(b.len()))).max(1);
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for v in a.iter().chain(b) {
        for k in 0..d {
            lo[k] = lo[k].min(v[k]);
            hi[k] = hi[k].max(v[k]);
        }
    }
    let cell = |v: &[f64]| -> Vec<u32> {
        (0..d)
            .map(|k| {
                let w = hi[k] - lo[k];
                if w <= 0.0 {
                    return 0;
                }
                (((v[k] - lo[k]) / w * bins as f64) as usize).min(bins - 1) as u32
            })
            .collect()
    };
    let mut counts: BTreeMap<Vec<u32>, (u64, u64)> = BTreeMap::new();
    for v in a {
        counts.entry(cell(v)).or_default().0 += 1;
    }
    for v in b {
        counts.entry(cell(v)).or_default().1 += 1;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let l1: f64 = counts
        .values()
        .map(|&(ca, cb)| (ca as f64 / na - cb as f64 / nb).abs())
        .sum();
    Ok((0.5 * l1).clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TvScan {
    pub checkpoints: Vec<u64>,
    /// `matrix[i][j] = TV(Law(X_{c_i}), Law(X_{c_j}))`.
    pub matrix: Vec<Vec<f64>>,
    /// TV between two independent ensembles at the last checkpoint.
    pub control: f64,
    pub replications: u64,
    pub pass: bool,
}

impl TvScan {
    /// TV between successive checkpoints.
    pub fn successive(&self) -> Vec<f64> {
        (1..self.checkpoints.len())
            .map(|i| self.matrix[i - 1][i])
            .collect()
    }
}

fn ensemble(
    problem: &Problem,
    init: &InitLaw,
    eta: f64,
    checkpoints: &[u64],
    reps: std::ops::Range<u64>,
    seed: u64,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let last = *checkpoints.last().unwrap_or(&0);
    let offset = reps.start;
    let per_rep = par_reps(reps.end - reps.start, |i| {
        let rep = offset + i;
        let mut state = init.init_state(problem, StreamKey::new(seed, rep, 0, StreamTag::Init))?;
        let mut kernel = SagaKernel::new(problem, eta)?;
        let mut input = TransitionInput::new(vec![0.0; problem.dim()], 0);
        let mut out = Vec::with_capacity(checkpoints.len());
        let mut next = 0;
        while next < checkpoints.len() && checkpoints[next] == 0 {
            out.push(state.x.clone());
            next += 1;
        }
        for n in 1..=last {
            input.redraw(StreamKey::new(seed, rep, n, StreamTag::Transition), problem.count());
            kernel.step(&mut state, &input)?;
            while next < checkpoints.len() && checkpoints[next] == n {
                out.push(state.x.clone());
                next += 1;
            }
        }
        Ok(out)
    })?;
    // transpose to checkpoint-major
    Ok((0..checkpoints.len())
        .map(|c| per_rep.iter().map(|r| r[c].clone()).collect())
        .collect())
}

/// TV between the marginals of `X_n` at every pair of checkpoints.
///
/// PASS iff the TV between successive checkpoints is nonincreasing within
/// `max(control, 0.02)`, the last one is below the first, and the same-law
/// control stays under 0.05.
pub fn tv_cauchy_scan(
    problem: &Problem,
    init: &InitLaw,
    eta: f64,
    checkpoints: &[u64],
    replications: u64,
    seed: u64,
) -> Result<TvScan> {
    if checkpoints.is_empty() || checkpoints.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("checkpoints must be nonempty and nondecreasing"));
    }
    if replications < 2 {
        return Err(invalid("replications must be >= 2"));
    }
    let samples = ensemble(problem, init, eta, checkpoints, 0..replications, seed)?;
    let last = &checkpoints[checkpoints.len() - 1..];
    let control_samples = ensemble(problem, init, eta, last, replications..2 * replications, seed)?;
    let c = checkpoints.len();
    let mut matrix = vec![vec![0.0; c]; c];
    for i in 0..c {
        for j in i + 1..c {
            let v = tv_estimate(&samples[i], &samples[j], None)?;
            matrix[i][j] = v;
            matrix[j][i] = v;
        }
    }
    let control = tv_estimate(&samples[c - 1], &control_samples[0], None)?;
    let mut scan = TvScan {
        checkpoints: checkpoints.to_vec(),
        matrix,
        control,
        replications,
        pass: false,
    };
    let succ = scan.successive();
    let tol = control.max(0.02);
    scan.pass = control <= 0.05
        && succ.windows(2).all(|w| w[1] <= w[0] + tol)
        && succ.first().zip(succ.last()).is_none_or(|(f, l)| succ.len() < 2 || l < f);
    Ok(scan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::fill_standard_normal;

    fn normals(seed: u64, n: usize, shift: f64) -> Vec<Vec<f64>> {
        let mut rng = StreamKey::new(seed, 0, 0, StreamTag::Verify).rng();
        let mut v = vec![0.0; n];
        fill_standard_normal(&mut rng, &mut v);
        v.into_iter().map(|x| vec![x + shift]).collect()
    }

    #[test]
    fn identical_and_disjoint() {
        let a = normals(1, 1000, 0.0);
        assert_eq!(tv_estimate(&a, &a, None).unwrap(), 0.0);
        let b = normals(2, 1000, 100.0);
        assert_eq!(tv_estimate(&a, &b, None).unwrap(), 1.0);
    }

    #[test]
    fn shifted_gaussians() {
        // 2Φ(1/2) - 1
        let exact = 0.382_924_922_548_026;
        let a = normals(3, 100_000, 0.0);
        let b = normals(4, 100_000, 1.0);
        let tv = tv_estimate(&a, &b, Some(100)).unwrap();
        assert!((tv - exact).abs() < 0.02, "{tv}");
    }

    #[test]
    fn symmetric() {
        let a = normals(5, 500, 0.0);
        let b = normals(6, 700, 0.3);
        assert_eq!(tv_estimate(&a, &b, None).unwrap(), tv_estimate(&b, &a, None).unwrap());
        assert!(tv_estimate(&[], &b, None).is_err());
    }

    #[test]
    fn default_bin_rule() {
        assert_eq!(default_bins(1000), 10);
        assert_eq!(default_bins(1001), 11);
        assert_eq!(default_bins(10_000), 22);
        assert_eq!(default_bins(100_000_000), 256);
    }

    #[test]
    fn repeated_checkpoint_has_zero_entry() {
        let p = crate::model::BuiltinProblem::Lin1d.problem();
        let scan = tv_cauchy_scan(&p, &InitLaw::origin(1), 1.0 / 32.0, &[50, 50], 200, 1).unwrap();
        assert_eq!(scan.matrix[0][1], 0.0);
    }
}
