//! Second moments of `X_n` and of the table rows against their a priori bounds.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::norm_sq;
use crate::model::Problem;
use crate::noise::{StreamKey, StreamTag};
use crate::sampler::{eta_max, InitLaw, SagaKernel, TransitionInput};
use crate::stats::{par_reps, CompensatedSum};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentSeries {
    pub replications: u64,
    /// `Ê|X_n|^2`, `n = 0..=steps`.
    pub ex2: Vec<f64>,
    /// `max_i Ê|G^i_n|^2`.
    pub eg2_max: Vec<f64>,
    /// Running max `L̂_n` of `ex2`.
    pub l_hat: Vec<f64>,
    /// `2(2d + c1 + 2M̂^2 + E|X_0|^2) / (c2 η)`; `None` above the step-size cap.
    pub bound_x: Option<f64>,
    /// `2[M̂^2 + M^2 L̂_n]` per step; `None` above the step-size cap.
    pub bound_g: Option<Vec<f64>>,
    pub noise_off: bool,
}

impl MomentSeries {
    /// Steps with `ex2 > bound_x`.
    pub fn x_violations(&self) -> Option<usize> {
        let b = self.bound_x?;
        Some(self.ex2.iter().filter(|v| **v > b).count())
    }

    pub fn g_violations(&self) -> Option<usize> {
        let b = self.bound_g.as_ref()?;
        Some(self.eg2_max.iter().zip(b).filter(|(v, b)| v > b).count())
    }

    pub fn pass(&self) -> Option<bool> {
        Some(self.x_violations()? == 0 && self.g_violations()? == 0)
    }
}

pub fn moment_bound_x(problem: &Problem, eta: f64, e_x0_sq: f64) -> f64 {
    let d = problem.dim() as f64;
    let mh = problem.m_hat();
    2.0 * (2.0 * d + problem.c1() + 2.0 * mh * mh + e_x0_sq) / (problem.c2() * eta)
}

pub fn moment_bound_g(problem: &Problem, l: f64) -> f64 {
    let (mh, m) = (problem.m_hat(), problem.lipschitz());
    2.0 * (mh * mh + m * m * l)
}

/// Tracks `Ê|X_n|^2` and `max_i Ê|G^i_n|^2` over `replications` chains.
/// `noise_off` drops the Gaussian term (a deterministic diagnostic).
#[allow(clippy::too_many_arguments)]
pub fn track_moments(
    problem: &Problem,
    init: &InitLaw,
    eta: f64,
    steps: u64,
    replications: u64,
    seed: u64,
    noise_off: bool,
) -> Result<MomentSeries> {
    if replications < 100 {
        return Err(invalid("replications must be >= 100"));
    }
    if init.dim() != problem.dim() {
        return Err(invalid("initial law dimension does not match the problem"));
    }
    let n = problem.count();
    let len = steps as usize + 1;
    // per replication: |x|^2 then |g^i|^2 for each step
    let per_rep = par_reps(replications, |rep| {
        let mut state = init.init_state(problem, StreamKey::new(seed, rep, 0, StreamTag::Init))?;
        let mut kernel = SagaKernel::new(problem, eta)?;
        let mut input = TransitionInput::new(vec![0.0; problem.dim()], 0);
        let mut out = Vec::with_capacity(len * (n + 1));
        let record = |s: &crate::sampler::ChainState, out: &mut Vec<f64>| {
            out.push(norm_sq(&s.x));
            out.extend(s.table.rows().map(norm_sq));
        };
        record(&state, &mut out);
        for step in 1..=steps {
            input.redraw(StreamKey::new(seed, rep, step, StreamTag::Transition), n);
            if noise_off {
                input.gauss.iter_mut().for_each(|z| *z = 0.0);
            }
            kernel.step(&mut state, &input)?;
            record(&state, &mut out);
        }
        Ok(out)
    })?;

    let r = replications as f64;
    let mut ex2 = Vec::with_capacity(len);
    let mut eg2_max = Vec::with_capacity(len);
    for t in 0..len {
        let base = t * (n + 1);
        let mean = |col: usize| {
            let mut acc = CompensatedSum::default();
            per_rep.iter().for_each(|v| acc.add(v[base + col]));
            acc.value() / r
        };
        ex2.push(mean(0));
        eg2_max.push((1..=n).map(mean).fold(f64::NEG_INFINITY, f64::max));
    }
    let l_hat: Vec<f64> = ex2
        .iter()
        .scan(f64::NEG_INFINITY, |m, v| {
            *m = m.max(*v);
            Some(*m)
        })
        .collect();
    let safe = eta <= eta_max(problem) && eta <= 1.0;
    Ok(MomentSeries {
        replications,
        bound_x: safe.then(|| moment_bound_x(problem, eta, init.second_moment())),
        bound_g: safe.then(|| l_hat.iter().map(|l| moment_bound_g(problem, *l)).collect()),
        ex2,
        eg2_max,
        l_hat,
        noise_off,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BuiltinProblem;

    #[test]
    fn lin_bound_value() {
        let p = BuiltinProblem::Lin1d.problem();
        assert!((moment_bound_x(&p, 1.0 / 32.0, 0.0) - 256.64).abs() < 1e-9);
    }

    #[test]
    fn fixed_point_without_noise() {
        let p = BuiltinProblem::Lin1d.problem();
        let s = track_moments(&p, &InitLaw::origin(1), 1.0 / 32.0, 50, 100, 1, true).unwrap();
        assert!(s.ex2.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn small_run_within_bounds() {
        let p = BuiltinProblem::Lin1d.problem();
        let s = track_moments(&p, &InitLaw::origin(1), 1.0 / 32.0, 200, 100, 2, false).unwrap();
        assert_eq!(s.pass(), Some(true));
        assert!(s.l_hat.windows(2).all(|w| w[1] >= w[0]));
        let g = s.bound_g.as_ref().unwrap();
        for (b, l) in g.iter().zip(&s.l_hat) {
            assert_eq!(b.to_bits(), moment_bound_g(&p, *l).to_bits());
        }
    }

    #[test]
    fn unsafe_step_has_no_bounds() {
        let p = BuiltinProblem::Lin1d.problem();
        let s = track_moments(&p, &InitLaw::origin(1), 0.05, 10, 100, 2, false).unwrap();
        assert!(s.bound_x.is_none() && s.pass().is_none());
    }
}
