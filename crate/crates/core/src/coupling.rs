//! Two map chains on shared noise.
//!
//! Time is cut into blocks of length `N + 1` starting at step 0. Block `k`
//! covers the transitions into steps `k(N+1) + 1 ..= (k+1)(N+1)`. The block
//! event `I_k` asks for a regeneration at every one of those transitions and
//! for the ordered index sweep `0, 1, ..., N-1` on the last `N` of them; when
//! both chains start the block inside `B(K)` this overwrites `x` and every
//! table row with values computed from identical inputs, so the chains are
//! bitwise equal at the next boundary.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{invalid, Error, Result};
use crate::io::fmt_f64;
use crate::model::Problem;
use crate::noise::{StreamKey, StreamTag};
use crate::randommap::{ConstantsBundle, CounterNoise, MapKernel, NoiseRecord, NoiseSource};
use crate::sampler::{check_state, ChainState, InitLaw, SagaKernel, TransitionInput};

/// State of one block boundary `k(N+1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub k: u64,
    /// Chains are equal at the boundary.
    pub in_h: bool,
    /// All `2(N+1)` coordinate blocks of the pair lie in `B(K)`.
    pub in_d: bool,
    /// `I_k` occurred (only meaningful when `complete`).
    pub i_event: bool,
    /// The whole block lies inside the horizon.
    pub complete: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingTrace {
    pub meet_step: Option<u64>,
    pub blocks: Vec<BlockRecord>,
    pub horizon: u64,
    /// Blocks with `I_k` that were not followed by equality. Always 0 unless
    /// the construction is broken.
    pub sweep_violations: u64,
}

impl CouplingTrace {
    pub fn events(&self) -> u64 {
        self.blocks.iter().filter(|b| b.i_event).count() as u64
    }
}

/// Rejects bundles for which the block sweep cannot force a meeting.
pub fn check_coupling_bundle(bundle: &ConstantsBundle) -> Result<()> {
    if !(bundle.good_x_radius > 0.0) || bundle.regen_radius > bundle.good_x_radius {
        return Err(invalid(format!(
            "coupling needs 0 < regeneration radius <= K (r = {}, K = {})",
            bundle.regen_radius, bundle.good_x_radius
        )));
    }
    Ok(())
}

/// Does the record at block offset `t` (1-based, `1..=N+1`) continue the sweep?
#[inline]
fn sweep_step_ok(bundle: &ConstantsBundle, rec: &NoiseRecord, t: u64) -> bool {
    bundle.regenerates(rec.selector) && (t == 1 || rec.index as u64 == t - 2)
}

/// `I_k` from the pair at the start of the block and the block's `N + 1` records.
pub fn block_event_indicator(
    a: &ChainState,
    b: &ChainState,
    block: &[NoiseRecord],
    bundle: &ConstantsBundle,
) -> Result<bool> {
    let n1 = a.table.count() + 1;
    if block.len() != n1 {
        return Err(invalid(format!("a block holds {n1} records, got {}", block.len())));
    }
    if a.same_point(b) {
        return Ok(false);
    }
    let in_d = bundle.in_block_ball(&a.x, &a.table) && bundle.in_block_ball(&b.x, &b.table);
    Ok(in_d
        && block
            .iter()
            .zip(1u64..)
            .all(|(rec, t)| sweep_step_ok(bundle, rec, t)))
}

struct PairRun {
    meet_step: Option<u64>,
    blocks: Vec<BlockRecord>,
    violations: u64,
}

/// Steps both chains for `horizon` transitions. With `lockstep` both chains
/// keep stepping after they meet (and absorption is asserted); otherwise only
/// the first one does.
fn run_pair<S: NoiseSource + ?Sized>(
    problem: &Problem,
    bundle: &ConstantsBundle,
    mut a: ChainState,
    mut b: ChainState,
    horizon: u64,
    source: &S,
    lockstep: bool,
) -> Result<PairRun> {
    let n1 = problem.count() as u64 + 1;
    let mut ka = MapKernel::new(problem, bundle)?;
    let mut kb = MapKernel::new(problem, bundle)?;
    let mut rec = NoiseRecord::zeroed(problem.dim());
    let mut met = a.same_point(&b);
    let mut meet_step = met.then_some(0);
    let mut blocks = Vec::with_capacity((horizon / n1 + 1) as usize);
    let mut sweep_ok = true;
    let mut violations = 0;
    let boundary = |a: &ChainState, b: &ChainState, met: bool, k: u64| BlockRecord {
        k,
        in_h: met,
        in_d: bundle.in_block_ball(&a.x, &a.table) && (met || bundle.in_block_ball(&b.x, &b.table)),
        i_event: false,
        complete: false,
    };
    for n in 1..=horizon {
        let t = (n - 1) % n1 + 1;
        if t == 1 {
            blocks.push(boundary(&a, &b, met, (n - 1) / n1));
            sweep_ok = true;
        }
        source.fill(n, &mut rec);
        sweep_ok &= sweep_step_ok(bundle, &rec, t);
        ka.step(&mut a, &rec)?;
        if !met || lockstep {
            kb.step(&mut b, &rec)?;
        }
        if met {
            if lockstep && !a.same_point(&b) {
                return Err(invalid(format!("chains separated at step {n} after meeting")));
            }
        } else if a.same_point(&b) {
            met = true;
            meet_step = Some(n);
        }
        if t == n1 {
            let blk = blocks.last_mut().expect("block opened");
            blk.complete = true;
            blk.i_event = !blk.in_h && blk.in_d && sweep_ok;
            if blk.i_event && !met {
                violations += 1;
            }
        }
    }
    if horizon.is_multiple_of(n1) {
        blocks.push(boundary(&a, &b, met, horizon / n1));
    }
    Ok(PairRun {
        meet_step,
        blocks,
        violations,
    })
}

/// Couples `a` and `b` on the counter noise of `(seed, replication 0)`.
pub fn run_coupled(
    problem: &Problem,
    a: &ChainState,
    b: &ChainState,
    horizon: u64,
    bundle: &ConstantsBundle,
    seed: u64,
) -> Result<CouplingTrace> {
    run_coupled_with(
        problem,
        a,
        b,
        horizon,
        bundle,
        &CounterNoise::new(seed, 0, problem.count()),
    )
}

pub fn run_coupled_with<S: NoiseSource + ?Sized>(
    problem: &Problem,
    a: &ChainState,
    b: &ChainState,
    horizon: u64,
    bundle: &ConstantsBundle,
    source: &S,
) -> Result<CouplingTrace> {
    if horizon == 0 {
        return Err(invalid("horizon must be >= 1"));
    }
    check_coupling_bundle(bundle)?;
    check_state(problem, a)?;
    check_state(problem, b)?;
    let run = run_pair(problem, bundle, a.clone(), b.clone(), horizon, source, true)?;
    Ok(CouplingTrace {
        meet_step: run.meet_step,
        blocks: run.blocks,
        horizon,
        sweep_violations: run.violations,
    })
}

/// Steps after `from` until `a` and `b` (both at step `from`) first coincide,
/// or `None` within `max_steps`.
pub fn first_meeting<S: NoiseSource + ?Sized>(
    problem: &Problem,
    bundle: &ConstantsBundle,
    a: &ChainState,
    b: &ChainState,
    from: u64,
    max_steps: u64,
    source: &S,
) -> Result<Option<u64>> {
    if a.same_point(b) {
        return Ok(Some(0));
    }
    let (mut a, mut b) = (a.clone(), b.clone());
    let mut ka = MapKernel::new(problem, bundle)?;
    let mut kb = MapKernel::new(problem, bundle)?;
    let mut rec = NoiseRecord::zeroed(problem.dim());
    for i in 1..=max_steps {
        source.fill(from + i, &mut rec);
        ka.step(&mut a, &rec)?;
        kb.step(&mut b, &rec)?;
        if a.same_point(&b) {
            return Ok(Some(i));
        }
    }
    Ok(None)
}

/// Overrides the records of a random subset of blocks so that they carry the
/// sweep (selector 0, indices in order). Used to exercise the block event far
/// more often than the natural rate `β (β/N)^N`.
#[derive(Clone, Debug)]
pub struct ForcedSweep<S> {
    pub inner: S,
    pub seed: u64,
    pub replication: u64,
    pub probability: f64,
    pub count: usize,
}

impl<S: NoiseSource> ForcedSweep<S> {
    pub fn forced(&self, block: u64) -> bool {
        let mut rng = StreamKey::new(self.seed, self.replication, block, StreamTag::Verify).rng();
        rng.random::<f64>() < self.probability
    }
}

impl<S: NoiseSource> NoiseSource for ForcedSweep<S> {
    fn fill(&self, step: u64, record: &mut NoiseRecord) {
        self.inner.fill(step, record);
        let n1 = self.count as u64 + 1;
        if self.forced((step - 1) / n1) {
            let t = (step - 1) % n1 + 1;
            record.selector = 0.0;
            if t >= 2 {
                record.index = (t - 2) as usize;
            }
        }
    }
}

/// `ln(β (β/N)^N)`, the log-probability of a sweep on a good-set block.
pub fn log_sweep_prob(log_beta: f64, count: usize) -> f64 {
    let n = count as f64;
    log_beta + n * (log_beta - n.ln())
}

/// `(1 - 2ε) [1 - (1 - β(β/N)^N)^k]`.
pub fn theoretical_meet_bound(k: u64, log_beta: f64, count: usize, eps: f64) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let delta = log_sweep_prob(log_beta, count).exp();
    (1.0 - 2.0 * eps) * -(k as f64 * (-delta).ln_1p()).exp_m1()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NZero {
    Finite { k_star: u64, n0: u64 },
    /// No representable `n0`; `ln_n0` is its natural log (`inf` when β = 0).
    Unbounded { ln_n0: f64 },
}

/// `n0 = (N+1) k*`, `k*` the least integer with `(1 - β(β/N)^N)^{k*} <= ε`.
pub fn n_zero(log_beta: f64, count: usize, eps: f64) -> Result<NZero> {
    if !(eps > 0.0 && eps < 1.0 / 3.0) {
        return Err(Error::Config(format!("eps must lie in (0, 1/3), got {eps}")));
    }
    let n1 = count as f64 + 1.0;
    let ln_delta = log_sweep_prob(log_beta, count);
    if ln_delta == f64::NEG_INFINITY {
        return Ok(NZero::Unbounded { ln_n0: f64::INFINITY });
    }
    let delta = ln_delta.exp();
    let ln_one_minus = (-delta).ln_1p();
    if delta == 0.0 || ln_one_minus == 0.0 {
        // -ln(1 - δ) ≈ δ
        return Ok(NZero::Unbounded {
            ln_n0: n1.ln() + (-eps.ln()).ln() - ln_delta,
        });
    }
    let k_star = (eps.ln() / ln_one_minus).ceil();
    let n0 = k_star * n1;
    if n0 >= u64::MAX as f64 {
        return Ok(NZero::Unbounded { ln_n0: n0.ln() });
    }
    Ok(NZero::Finite {
        k_star: k_star as u64,
        n0: n0 as u64,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Occupancy {
    pub fraction: f64,
    pub stderr: f64,
    pub samples: u64,
}

/// Fraction of `(step, replication)` pairs with `x` and every table row in
/// `B(K)`, for the chain started from `init`. The standard error treats
/// replications as the independent unit.
pub fn good_set_occupancy(
    problem: &Problem,
    bundle: &ConstantsBundle,
    init: &InitLaw,
    steps: u64,
    replications: u64,
    seed: u64,
) -> Result<Occupancy> {
    if steps == 0 || replications < 2 {
        return Err(invalid("need steps >= 1 and replications >= 2"));
    }
    let per_rep: Vec<f64> = (0..replications)
        .into_par_iter()
        .map(|rep| -> Result<f64> {
            let mut state = init.init_state(problem, StreamKey::new(seed, rep, 0, StreamTag::Init))?;
            let mut kernel = SagaKernel::new(problem, bundle.eta)?;
            let mut input = TransitionInput::new(vec![0.0; problem.dim()], 0);
            let mut inside = 0u64;
            for n in 1..=steps {
                input.redraw(StreamKey::new(seed, rep, n, StreamTag::Transition), problem.count());
                kernel.step(&mut state, &input)?;
                inside += bundle.in_block_ball(&state.x, &state.table) as u64;
            }
            Ok(inside as f64 / steps as f64)
        })
        .collect::<Result<_>>()?;
    let r = replications as f64;
    let mean = per_rep.iter().sum::<f64>() / r;
    let var = per_rep.iter().map(|f| (f - mean) * (f - mean)).sum::<f64>() / (r - 1.0);
    Ok(Occupancy {
        fraction: mean,
        stderr: (var / r).sqrt(),
        samples: steps * replications,
    })
}

/// One row of the meeting-probability table, at boundary `k(N+1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeetRow {
    pub k: u64,
    pub p_hat: f64,
    pub stderr: f64,
    pub d_occupancy: f64,
    /// `P̂(H̄_k ∩ D_k)`.
    pub hbar_and_d: f64,
    #[serde(rename = "bound_paper")]
    pub bound_theory: f64,
    /// `Σ_{j<k} P̂(H̄_j ∩ D_j) β(β/N)^N`.
    pub bound_empirical_d: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeetReport {
    pub replications: u64,
    pub block_len: u64,
    pub log_beta: f64,
    pub log_sweep: f64,
    pub eps: f64,
    pub rows: Vec<MeetRow>,
    pub meet_steps: Vec<Option<u64>>,
    pub blocks_simulated: u64,
    pub sweep_events: u64,
    pub sweep_violations: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecursionCheck {
    pub checked: u64,
    pub violations: u64,
    /// Smallest `Δp̂ + 3·se - rhs` over checked rows.
    pub worst_margin: f64,
    pub pass: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeartCheck {
    pub eps_surrogate: f64,
    pub n_zero: NZero,
    pub unmet_fraction: Option<f64>,
    pub stderr: Option<f64>,
    pub pass: Option<bool>,
}

/// Minimum number of unmet pairs for a row to enter the recursion check.
pub const MIN_UNMET: u64 = 100;

/// Meeting probabilities `p̂_k` for `k = 0..=k_max` over independent pairs
/// `(a, b)` drawn from `init_a`, `init_b`.
#[allow(clippy::too_many_arguments)]
pub fn empirical_meet_prob(
    problem: &Problem,
    bundle: &ConstantsBundle,
    init_a: &InitLaw,
    init_b: &InitLaw,
    k_max: u64,
    replications: u64,
    seed: u64,
) -> Result<MeetReport> {
    empirical_meet_prob_with(problem, bundle, init_a, init_b, k_max, replications, seed, None)
}

/// As [`empirical_meet_prob`], optionally forcing sweeps with the given
/// per-block probability.
#[allow(clippy::too_many_arguments)]
pub fn empirical_meet_prob_with(
    problem: &Problem,
    bundle: &ConstantsBundle,
    init_a: &InitLaw,
    init_b: &InitLaw,
    k_max: u64,
    replications: u64,
    seed: u64,
    forced: Option<f64>,
) -> Result<MeetReport> {
    if replications < 100 {
        return Err(invalid("replications must be >= 100"));
    }
    check_coupling_bundle(bundle)?;
    let n = problem.count();
    let n1 = n as u64 + 1;
    let horizon = k_max * n1;
    let runs: Vec<PairRun> = (0..replications)
        .into_par_iter()
        .map(|rep| {
            let a = init_a.init_state(problem, StreamKey::new(seed, rep, 0, StreamTag::Init))?;
            let b = init_b.init_state(problem, StreamKey::new(seed, rep, 1, StreamTag::Init))?;
            let noise = CounterNoise::new(seed, rep, n);
            match forced {
                Some(p) => {
                    let src = ForcedSweep {
                        inner: noise,
                        seed,
                        replication: rep,
                        probability: p,
                        count: n,
                    };
                    run_pair(problem, bundle, a, b, horizon, &src, false)
                }
                None => run_pair(problem, bundle, a, b, horizon, &noise, false),
            }
        })
        .collect::<Result<_>>()?;

    let r = replications as f64;
    let log_sweep = log_sweep_prob(bundle.log_beta, n);
    let delta = log_sweep.exp();
    let mut rows = Vec::with_capacity(k_max as usize + 1);
    let mut cumulative = 0.0;
    for k in 0..=k_max {
        let (mut met, mut in_d, mut hbar_d) = (0u64, 0u64, 0u64);
        for run in &runs {
            let blk = &run.blocks[k as usize];
            met += blk.in_h as u64;
            in_d += blk.in_d as u64;
            hbar_d += (!blk.in_h && blk.in_d) as u64;
        }
        let p = met as f64 / r;
        let hd = hbar_d as f64 / r;
        rows.push(MeetRow {
            k,
            p_hat: p,
            stderr: (p * (1.0 - p) / r).sqrt(),
            d_occupancy: in_d as f64 / r,
            hbar_and_d: hd,
            bound_theory: theoretical_meet_bound(k, bundle.log_beta, n, bundle.eps),
            bound_empirical_d: cumulative,
        });
        cumulative += hd * delta;
    }
    let complete = |b: &&BlockRecord| b.complete;
    Ok(MeetReport {
        replications,
        block_len: n1,
        log_beta: bundle.log_beta,
        log_sweep,
        eps: bundle.eps,
        rows,
        meet_steps: runs.iter().map(|run| run.meet_step).collect(),
        blocks_simulated: runs.iter().map(|run| run.blocks.iter().filter(complete).count() as u64).sum(),
        sweep_events: runs
            .iter()
            .map(|run| run.blocks.iter().filter(|b| b.i_event).count() as u64)
            .sum(),
        sweep_violations: runs.iter().map(|run| run.violations).sum(),
    })
}

impl MeetReport {
    /// One-sided check of `p_{k+1} - p_k >= P(H̄_k ∩ D_k) β(β/N)^N` on rows
    /// with at least [`MIN_UNMET`] unmet pairs.
    ///
    /// The standard error is the larger of the empirical increment's and the
    /// binomial one at the bound itself, so rows with no observed increment
    /// are judged against the sampling noise the bound would imply.
    pub fn check_recursion(&self) -> RecursionCheck {
        let r = self.replications as f64;
        let delta = self.log_sweep.exp();
        let mut out = RecursionCheck {
            checked: 0,
            violations: 0,
            worst_margin: f64::INFINITY,
            pass: true,
        };
        for w in self.rows.windows(2) {
            let unmet = ((1.0 - w[0].p_hat) * r).round() as u64;
            if unmet < MIN_UNMET {
                continue;
            }
            let inc = w[1].p_hat - w[0].p_hat;
            let rhs = w[0].hbar_and_d * delta;
            let se = (inc * (1.0 - inc) / r).max(rhs * (1.0 - rhs) / r).sqrt();
            let margin = inc + 3.0 * se - rhs;
            out.checked += 1;
            out.worst_margin = out.worst_margin.min(margin);
            if margin < 0.0 {
                out.violations += 1;
            }
        }
        out.pass = out.violations == 0;
        out
    }

    /// Fraction of pairs still unmet at `n0`, with `ε` replaced by
    /// `max(eps, (1 - min_k P̂(D_k)) / 2)`.
    pub fn heart_check(&self, count: usize) -> Result<HeartCheck> {
        let min_d = self
            .rows
            .iter()
            .map(|row| row.d_occupancy)
            .fold(f64::INFINITY, f64::min);
        let eps_surrogate = self.eps.max((1.0 - min_d) / 2.0);
        if !(eps_surrogate < 1.0 / 3.0) {
            return Ok(HeartCheck {
                eps_surrogate,
                n_zero: NZero::Unbounded { ln_n0: f64::INFINITY },
                unmet_fraction: None,
                stderr: None,
                pass: None,
            });
        }
        let nz = n_zero(self.log_beta, count, eps_surrogate)?;
        let horizon = (self.rows.len() as u64 - 1) * self.block_len;
        let (unmet_fraction, stderr, pass) = match nz {
            NZero::Finite { n0, .. } if n0 <= horizon => {
                let r = self.replications as f64;
                let unmet = self
                    .meet_steps
                    .iter()
                    .filter(|m| m.is_none_or(|s| s > n0))
                    .count() as f64
                    / r;
                let se = (unmet * (1.0 - unmet) / r).sqrt();
                (Some(unmet), Some(se), Some(unmet <= 3.0 * eps_surrogate + 3.0 * se))
            }
            _ => (None, None, None),
        };
        Ok(HeartCheck {
            eps_surrogate,
            n_zero: nz,
            unmet_fraction,
            stderr,
            pass,
        })
    }

    /// Empirical quantiles of the meeting step; `None` where the quantile
    /// falls among pairs that never met.
    pub fn meet_quantiles(&self, probs: &[f64]) -> Vec<Option<u64>> {
        let mut met: Vec<u64> = self.meet_steps.iter().flatten().copied().collect();
        met.sort_unstable();
        let total = self.meet_steps.len();
        probs
            .iter()
            .map(|p| {
                let rank = ((p * total as f64).ceil() as usize).clamp(1, total);
                met.get(rank - 1).copied()
            })
            .collect()
    }

    pub const CSV_HEADER: &'static str = "k,p_hat,stderr,bound_paper,bound_empiricalD,d_occupancy";

    pub fn write_csv<W: std::io::Write>(&self, mut w: W, provenance: Option<&str>) -> Result<()> {
        if let Some(p) = provenance {
            writeln!(w, "# {p}")?;
        }
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for row in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                row.k,
                fmt_f64(row.p_hat),
                fmt_f64(row.stderr),
                fmt_f64(row.bound_theory),
                fmt_f64(row.bound_empirical_d),
                fmt_f64(row.d_occupancy)
            )?;
        }
        Ok(())
    }

    pub fn summary_json(&self, count: usize) -> Result<serde_json::Value> {
        let probs = [0.1, 0.25, 0.5, 0.75, 0.9];
        let quantiles: serde_json::Map<String, serde_json::Value> = probs
            .iter()
            .zip(self.meet_quantiles(&probs))
            .map(|(p, q)| (format!("q{:02}", (p * 100.0).round() as u32), json!(q)))
            .collect();
        let met = self.meet_steps.iter().filter(|m| m.is_some()).count();
        Ok(json!({
            "replications": self.replications,
            "block_len": self.block_len,
            "log_beta": self.log_beta,
            "log_sweep_prob": self.log_sweep,
            "met": met,
            "meet_quantiles": quantiles,
            "blocks_simulated": self.blocks_simulated,
            "sweep_events": self.sweep_events,
            "sweep_violations": self.sweep_violations,
            "recursion": self.check_recursion(),
            "heart": self.heart_check(count)?,
            "n_zero": n_zero(self.log_beta, count, self.eps)?,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BuiltinProblem;
    use crate::randommap::{derive_constants_unchecked, ScriptedNoise};
    use crate::sampler::init_chain;

    fn regime() -> (Problem, ConstantsBundle) {
        let p = BuiltinProblem::Micro1d.problem();
        let b = derive_constants_unchecked(&p, 0.5, 0.1, 0.0)
            .unwrap()
            .with_good_radius(&p, 0.2, None)
            .unwrap();
        (p, b)
    }

    fn sweep_records(n: usize) -> Vec<NoiseRecord> {
        (0..=n)
            .map(|t| {
                let mut r = NoiseRecord::draw(StreamKey::new(7, 0, t as u64 + 1, StreamTag::Transition), 1, n);
                r.selector = 0.0;
                if t >= 1 {
                    r.index = t - 1;
                }
                r
            })
            .collect()
    }

    #[test]
    fn identical_inits_meet_at_zero() {
        let (p, b) = regime();
        let s = init_chain(&p, &[0.3]).unwrap();
        let tr = run_coupled(&p, &s, &s, 50, &b, 1).unwrap();
        assert_eq!(tr.meet_step, Some(0));
        assert!(tr.blocks.iter().all(|blk| blk.in_h && !blk.i_event));
    }

    #[test]
    fn crafted_sweep_forces_meeting() {
        let (p, b) = regime();
        let a = init_chain(&p, &[0.05]).unwrap();
        let c = init_chain(&p, &[-0.1]).unwrap();
        let recs = sweep_records(2);
        assert!(block_event_indicator(&a, &c, &recs, &b).unwrap());
        let tr = run_coupled_with(&p, &a, &c, 3, &b, &ScriptedNoise { records: recs.clone() }).unwrap();
        assert!(tr.blocks[0].i_event);
        assert!(tr.blocks[1].in_h);
        assert_eq!(tr.sweep_violations, 0);

        let mut broken = recs.clone();
        broken[1].selector = 0.99;
        assert!(!block_event_indicator(&a, &c, &broken, &b).unwrap());
        let mut wrong_order = recs.clone();
        wrong_order.swap(1, 2);
        assert!(!block_event_indicator(&a, &c, &wrong_order, &b).unwrap());
        assert!(!block_event_indicator(&a, &a, &recs, &b).unwrap());
    }

    #[test]
    fn meeting_is_absorbing() {
        let (p, b) = regime();
        let a = init_chain(&p, &[1.0]).unwrap();
        let c = init_chain(&p, &[-1.0]).unwrap();
        let tr = run_coupled(&p, &a, &c, 3000, &b, 5).unwrap();
        let m = tr.meet_step.expect("coalesces");
        let first = m.div_ceil(3);
        assert!(tr.blocks[first as usize..].iter().all(|blk| blk.in_h));
        assert!(tr.blocks[..first as usize].iter().all(|blk| !blk.in_h));
    }

    #[test]
    fn bound_examples() {
        let lb = 0.5f64.ln();
        assert_eq!(theoretical_meet_bound(0, lb, 1, 0.1), 0.0);
        assert!((theoretical_meet_bound(1, lb, 1, 0.1) - 0.2).abs() < 1e-15);
        assert_eq!(theoretical_meet_bound(5, -1e12, 2, 0.1), 0.0);
    }

    #[test]
    fn n_zero_examples() {
        assert_eq!(
            n_zero(0.5f64.ln(), 1, 0.1).unwrap(),
            NZero::Finite { k_star: 9, n0: 18 }
        );
        let mut prev = u64::MAX;
        for e in [0.01, 0.05, 0.1, 0.2, 0.3] {
            let NZero::Finite { n0, .. } = n_zero(-2.0, 2, e).unwrap() else {
                panic!()
            };
            assert!(n0 <= prev);
            prev = n0;
        }
        match n_zero(-4.5e11, 2, 0.1).unwrap() {
            NZero::Unbounded { ln_n0 } => assert!(ln_n0 > 1e12),
            other => panic!("{other:?}"),
        }
        assert!(matches!(n_zero(-2.0, 2, 0.4), Err(Error::Config(_))));
    }

    #[test]
    fn occupancy_edges() {
        let p = BuiltinProblem::Lin1d.problem();
        let b = crate::randommap::derive_constants(&p, 1.0 / 32.0, 0.1, 0.0).unwrap();
        let init = InitLaw::origin(1);
        let full = good_set_occupancy(&p, &b, &init, 200, 20, 3).unwrap();
        assert_eq!(full.fraction, 1.0);
        let none = b.with_good_radius(&p, 0.0, None).unwrap();
        assert_eq!(good_set_occupancy(&p, &none, &init, 200, 20, 3).unwrap().fraction, 0.0);
    }

    #[test]
    fn meet_report_shape() {
        let (p, b) = regime();
        let rep = empirical_meet_prob(
            &p,
            &b,
            &InitLaw::point(vec![1.0]),
            &InitLaw::point(vec![-1.0]),
            100,
            200,
            11,
        )
        .unwrap();
        assert_eq!(rep.rows[0].p_hat, 0.0);
        assert!(rep.rows.windows(2).all(|w| w[1].p_hat >= w[0].p_hat));
        assert!(rep.check_recursion().pass);
        assert_eq!(rep.sweep_violations, 0);
        let mut csv = Vec::new();
        rep.write_csv(&mut csv, None).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with(MeetReport::CSV_HEADER));
    }

    #[test]
    fn rejects_regen_ball_outside_good_set() {
        let p = BuiltinProblem::Micro1d.problem();
        let b = derive_constants_unchecked(&p, 0.5, 0.1, 0.0)
            .unwrap()
            .with_good_radius(&p, 0.1, Some(1.0))
            .unwrap();
        let s = init_chain(&p, &[0.0]).unwrap();
        assert!(run_coupled(&p, &s, &s, 10, &b, 0).is_err());
    }
}
