//! Ergodic averages `(1/n) Σ_{k=1}^n φ(X_k, G_k)` across replications.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::norm_sq;
use crate::model::Problem;
use crate::noise::{StreamKey, StreamTag};
use crate::sampler::{check_step_size, InitLaw, SagaKernel, TransitionInput};
use crate::stats::{mean_sd, par_reps, CompensatedSum, Observable};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlnOptions {
    pub eta: f64,
    pub horizon: u64,
    pub replications: u64,
    pub seed: u64,
    /// Extra checkpoints; `horizon / 2` and `horizon` are always included.
    pub checkpoints: Vec<u64>,
    pub burn_in_fraction: f64,
    /// Levels `V` of the uniform-integrability diagnostic.
    pub ui_levels: Vec<f64>,
    pub unsafe_eta: bool,
}

impl LlnOptions {
    pub fn new(eta: f64, horizon: u64, replications: u64, seed: u64) -> Self {
        Self {
            eta,
            horizon,
            replications,
            seed,
            checkpoints: Vec::new(),
            burn_in_fraction: 0.1,
            ui_levels: vec![1.0, 10.0, 100.0, 1000.0],
            unsafe_eta: false,
        }
    }

    pub fn checkpoints(mut self, cps: &[u64]) -> Self {
        self.checkpoints = cps.to_vec();
        self
    }

    fn grid(&self) -> Vec<u64> {
        let mut g: Vec<u64> = self
            .checkpoints
            .iter()
            .copied()
            .chain([self.horizon / 2, self.horizon])
            .filter(|&c| c >= 1 && c <= self.horizon)
            .collect();
        g.sort_unstable();
        g.dedup();
        g
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UiDiagnostic {
    /// `sup_n Ê|W_n|^2` over checkpoints, `W_n = φ(X_n, G_n)`.
    pub c_w: f64,
    pub levels: Vec<f64>,
    /// `C_W / V`.
    pub bound: Vec<f64>,
    /// `sup_n Ê[|W_n| 1{|W_n| > V}]`.
    pub tail: Vec<f64>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlnReport {
    pub observable: Observable,
    pub growth: f64,
    pub horizon: u64,
    pub replications: u64,
    pub burn_in_fraction: f64,
    pub checkpoints: Vec<u64>,
    /// `averages[c][r]`: replication `r`'s average up to checkpoint `c`.
    pub averages: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub mean_burned: Vec<f64>,
    /// Cross-replication standard deviation of the averages.
    pub spread: Vec<f64>,
    /// `spread / sqrt(replications)`.
    pub mean_stderr: Vec<f64>,
    /// Mean absolute deviation of the averages from the grand mean at the horizon.
    pub deviation: Vec<f64>,
    pub deviation_stderr: Vec<f64>,
    /// Samples with `|φ(u)| > C (1 + |u|)`.
    pub growth_violations: u64,
    pub ui: UiDiagnostic,
}

impl LlnReport {
    fn at(&self, n: u64) -> Option<usize> {
        self.checkpoints.iter().position(|&c| c == n)
    }

    pub fn deviation_at(&self, n: u64) -> Option<f64> {
        self.at(n).map(|i| self.deviation[i])
    }

    pub fn mean_at(&self, n: u64) -> Option<f64> {
        self.at(n).map(|i| self.mean[i])
    }

    /// `deviation(2n) < deviation(n)`.
    pub fn contracts(&self, n: u64) -> Option<bool> {
        Some(self.deviation_at(2 * n)? < self.deviation_at(n)?)
    }

    /// Grand means at the horizon agree within `3 (se_a + se_b)`.
    pub fn agrees_with(&self, other: &LlnReport) -> bool {
        let (a, b) = (self.mean.len() - 1, other.mean.len() - 1);
        (self.mean[a] - other.mean[b]).abs() <= 3.0 * (self.mean_stderr[a] + other.mean_stderr[b])
    }
}

struct RepResult {
    averages: Vec<f64>,
    burned: Vec<f64>,
    w: Vec<f64>,
    growth_violations: u64,
}

/// Ergodic averages of `phi` at every checkpoint, per replication.
pub fn lln_check(problem: &Problem, init: &InitLaw, phi: Observable, opts: &LlnOptions) -> Result<LlnReport> {
    if opts.horizon < 2 {
        return Err(invalid("horizon must be >= 2"));
    }
    if opts.replications < 2 {
        return Err(invalid("replications must be >= 2"));
    }
    if !(0.0..1.0).contains(&opts.burn_in_fraction) {
        return Err(invalid("burn-in fraction must lie in [0, 1)"));
    }
    check_step_size(problem, opts.eta, opts.unsafe_eta)?;
    phi.check_dim(problem.dim())?;
    let grid = opts.grid();
    // prefix sums are needed at every checkpoint and at every burn-in cut
    let burn = |c: u64| (c as f64 * opts.burn_in_fraction).floor() as u64;
    let mut marks: Vec<u64> = grid.iter().flat_map(|&c| [c, burn(c)]).collect();
    marks.sort_unstable();
    marks.dedup();
    let growth = phi.growth();
    let seed = opts.seed;

    let reps = par_reps(opts.replications, |rep| {
        let mut state = init.init_state(problem, StreamKey::new(seed, rep, 0, StreamTag::Init))?;
        let mut kernel = SagaKernel::new(problem, opts.eta)?;
        let mut input = TransitionInput::new(vec![0.0; problem.dim()], 0);
        let mut acc = CompensatedSum::default();
        let mut prefix = Vec::with_capacity(marks.len());
        let mut w = Vec::with_capacity(grid.len());
        let mut violations = 0;
        let mut mi = 0;
        while mi < marks.len() && marks[mi] == 0 {
            prefix.push(0.0);
            mi += 1;
        }
        let mut gi = 0;
        for n in 1..=opts.horizon {
            input.redraw(StreamKey::new(seed, rep, n, StreamTag::Transition), problem.count());
            kernel.step(&mut state, &input)?;
            let v = phi.eval(&state.x, &state.table);
            acc.add(v);
            if mi < marks.len() && n == marks[mi] {
                prefix.push(acc.value());
                mi += 1;
            }
            if gi < grid.len() && n == grid[gi] {
                w.push(v);
                let u = (norm_sq(&state.x) + norm_sq(state.table.as_slice())).sqrt();
                violations += (v.abs() > growth * (1.0 + u) * (1.0 + 1e-12)) as u64;
                gi += 1;
            }
        }
        let sum_to = |n: u64| prefix[marks.binary_search(&n).expect("marked")];
        let (averages, burned) = grid
            .iter()
            .map(|&c| {
                if let Observable::Const(k) = phi {
                    // constants integrate exactly
                    return (k, k);
                }
                let b = burn(c);
                (sum_to(c) / c as f64, (sum_to(c) - sum_to(b)) / (c - b) as f64)
            })
            .unzip();
        Ok(RepResult {
            averages,
            burned,
            w,
            growth_violations: violations,
        })
    })?;

    let r = opts.replications as f64;
    let columns = |f: &dyn Fn(&RepResult) -> &Vec<f64>| -> Vec<Vec<f64>> {
        (0..grid.len())
            .map(|c| reps.iter().map(|rr| f(rr)[c]).collect())
            .collect()
    };
    let averages = columns(&|rr| &rr.averages);
    let burned = columns(&|rr| &rr.burned);
    let w = columns(&|rr| &rr.w);
    let stats: Vec<(f64, f64)> = averages.iter().map(|a| mean_sd(a)).collect();
    let mean: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let spread: Vec<f64> = stats.iter().map(|s| s.1).collect();
    let reference = *mean.last().expect("horizon checkpoint");
    let (deviation, deviation_stderr): (Vec<f64>, Vec<f64>) = averages
        .iter()
        .map(|a| {
            let abs: Vec<f64> = a.iter().map(|v| (v - reference).abs()).collect();
            let (m, sd) = mean_sd(&abs);
            (m, sd / r.sqrt())
        })
        .unzip();

    let second: Vec<f64> = w.iter().map(|ws| mean_sd(&ws.iter().map(|v| v * v).collect::<Vec<_>>()).0).collect();
    let c_w = second.iter().copied().fold(0.0, f64::max);
    let bound: Vec<f64> = opts.ui_levels.iter().map(|v| c_w / v).collect();
    let tail: Vec<f64> = opts
        .ui_levels
        .iter()
        .map(|&lv| {
            w.iter()
                .map(|ws| ws.iter().filter(|v| v.abs() > lv).map(|v| v.abs()).sum::<f64>() / r)
                .fold(0.0, f64::max)
        })
        .collect();
    let ui_pass = tail.iter().zip(&bound).all(|(t, b)| t <= b);

    Ok(LlnReport {
        observable: phi,
        growth,
        horizon: opts.horizon,
        replications: opts.replications,
        burn_in_fraction: opts.burn_in_fraction,
        checkpoints: grid,
        mean_burned: burned.iter().map(|b| mean_sd(b).0).collect(),
        mean_stderr: spread.iter().map(|s| s / r.sqrt()).collect(),
        mean,
        spread,
        averages,
        deviation,
        deviation_stderr,
        growth_violations: reps.iter().map(|rr| rr.growth_violations).sum(),
        ui: UiDiagnostic {
            c_w,
            levels: opts.ui_levels.clone(),
            bound,
            tail,
            pass: ui_pass,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BuiltinProblem;

    #[test]
    fn constant_is_exact() {
        let p = BuiltinProblem::Lin1d.problem();
        let rep = lln_check(
            &p,
            &InitLaw::origin(1),
            Observable::Const(0.1),
            &LlnOptions::new(1.0 / 32.0, 1000, 4, 1),
        )
        .unwrap();
        assert!(rep.mean.iter().all(|m| *m == 0.1));
        assert!(rep.averages.iter().flatten().all(|a| *a == 0.1));
    }

    #[test]
    fn capped_square_near_invariant_variance() {
        let p = BuiltinProblem::Lin1d.problem();
        let rep = lln_check(
            &p,
            &InitLaw::origin(1),
            Observable::CappedSquare(100.0),
            &LlnOptions::new(1.0 / 32.0, 100_000, 8, 3).checkpoints(&[1000, 2000]),
        )
        .unwrap();
        let m = rep.mean_at(100_000).unwrap();
        assert!((m - 2.0 / 3.0).abs() < 0.1, "{m}");
        assert_eq!(rep.growth_violations, 0);
        assert!(rep.ui.pass);
        assert_eq!(rep.checkpoints, vec![1000, 2000, 50_000, 100_000]);
    }

    #[test]
    fn rejects_bad_input() {
        let p = BuiltinProblem::Lin1d.problem();
        let o = LlnOptions::new(1.0 / 32.0, 100, 4, 1);
        assert!(lln_check(&p, &InitLaw::origin(1), Observable::Coord(3), &o).is_err());
        let o = LlnOptions::new(0.05, 100, 4, 1);
        assert!(lln_check(&p, &InitLaw::origin(1), Observable::Norm, &o).is_err());
    }
}
