//! Random-map representation of the `(X, G)` chain.
//!
//! On the good set `{|x| <= K, |g^i| <= M̂ + MK}` the one-step law of `X_1`
//! dominates `β·ν`, with `ν` uniform on the ball `B(r)`. A transition there
//! draws a selector `u'`: if `u' <= β` the next state is the shared
//! regeneration point (the same for every good-set state), otherwise it is
//! drawn from the residual kernel `(q - βν) / (1 - β)` by rejection. Outside
//! the good set the ordinary Gaussian step is used. Either way the table is
//! refreshed exactly as in the direct chain, and the marginal law of the next
//! state equals the direct chain's.
//!
//! The Gaussian step has covariance `2η·I`, so its density is
//! `(4πη)^{-d/2} exp(-|u - m|^2 / 4η)` and
//!
//! ```text
//! ln β = ln v(d) + d ln r - (d/2) ln(4πη) - (3M̂ + 4MK + r)^2 / (4η)
//! ```
//!
//! which is tight at `|u - m| = 3M̂ + 4MK + r`. `r = 1` unless a K-override
//! shrinks the good set below the unit ball.

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{invalid, Error, Result};
use crate::linalg::{ln_step_density, ln_unit_ball_volume, norm};
use crate::model::Problem;
use crate::noise::{fill_standard_normal, fill_uniform_in_unit_ball, StreamKey, StreamTag};
use crate::sampler::{check_finite, check_state, check_step_size, ChainState, GradientTable, SagaKernel};

/// Derived constants of the coupling construction for one `(problem, η, ε)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsBundle {
    pub eps: f64,
    pub eta: f64,
    /// Uniform second-moment bound `Č` of the chain started with `E|X_0|^2 = e_x0_sq`.
    pub c_check: f64,
    /// The same bound with `Č` in place of `E|X_0|^2`.
    pub c_hat: f64,
    /// `K(ε) = sqrt((2N + 2) Ĉ / ε)`.
    pub k_eps: f64,
    pub log_beta: f64,
    pub good_x_radius: f64,
    pub good_g_radius: f64,
    pub regen_radius: f64,
    pub e_x0_sq: f64,
    /// Set when the good-set radius was overridden instead of taken from `K(ε)`.
    pub overridden: bool,
    /// `η <= c2 / (8 M^2)`; the moment bounds (and `Č`, `Ĉ`, `K(ε)`) only hold then.
    pub within_step_cap: bool,
}

/// ln β for the unit regeneration ball.
pub fn beta_for(d: usize, eta: f64, k: f64, m_hat: f64, lipschitz: f64) -> f64 {
    beta_for_radius(d, eta, k, m_hat, lipschitz, 1.0)
}

/// ln β for a regeneration ball of radius `r`.
pub fn beta_for_radius(d: usize, eta: f64, k: f64, m_hat: f64, lipschitz: f64, r: f64) -> f64 {
    let reach = 3.0 * m_hat + 4.0 * lipschitz * k + r;
    let d_f = d as f64;
    ln_unit_ball_volume(d) + d_f * r.ln()
        - 0.5 * d_f * (4.0 * std::f64::consts::PI * eta).ln()
        - reach * reach / (4.0 * eta)
}

fn moment_bound(problem: &Problem, eta: f64, second_moment: f64) -> f64 {
    let d = problem.dim() as f64;
    let n = problem.count() as f64;
    let (mh, m) = (problem.m_hat(), problem.lipschitz());
    2.0 * (n + 1.0)
        * (mh * mh + m * m)
        * (2.0 * (2.0 * d + problem.c1() + 2.0 * mh * mh + second_moment) / (problem.c2() * eta))
}

/// Constants at `K = K(ε)` with the unit regeneration ball. Requires `η <= η_max`.
pub fn derive_constants(problem: &Problem, eta: f64, eps: f64, e_x0_sq: f64) -> Result<ConstantsBundle> {
    check_step_size(problem, eta, false)?;
    build_constants(problem, eta, eps, e_x0_sq)
}

/// As [`derive_constants`] but accepts any `η > 0`; the bundle records whether
/// the step-size cap holds.
pub fn derive_constants_unchecked(
    problem: &Problem,
    eta: f64,
    eps: f64,
    e_x0_sq: f64,
) -> Result<ConstantsBundle> {
    check_step_size(problem, eta, true)?;
    build_constants(problem, eta, eps, e_x0_sq)
}

fn build_constants(problem: &Problem, eta: f64, eps: f64, e_x0_sq: f64) -> Result<ConstantsBundle> {
    if !(eps > 0.0 && eps < 1.0 / 3.0) {
        return Err(Error::Config(format!("eps must lie in (0, 1/3), got {eps}")));
    }
    if !(e_x0_sq >= 0.0 && e_x0_sq.is_finite()) {
        return Err(invalid("E|X_0|^2 must be finite and nonnegative"));
    }
    let c_check = moment_bound(problem, eta, e_x0_sq);
    let c_hat = moment_bound(problem, eta, c_check);
    let n = problem.count() as f64;
    let k_eps = ((2.0 * n + 2.0) * c_hat / eps).sqrt();
    let (mh, m) = (problem.m_hat(), problem.lipschitz());
    Ok(ConstantsBundle {
        eps,
        eta,
        c_check,
        c_hat,
        k_eps,
        log_beta: beta_for(problem.dim(), eta, k_eps, mh, m),
        good_x_radius: k_eps,
        good_g_radius: mh + m * k_eps,
        regen_radius: 1.0,
        e_x0_sq,
        overridden: false,
        within_step_cap: eta <= crate::sampler::eta_max(problem),
    })
}

impl ConstantsBundle {
    /// Replaces the good-set radius by `k` and recomputes β.
    ///
    /// `regen_radius` defaults to `min(1, k)` so that a regenerated state lies
    /// in the good set again (`1` when `k == 0`).
    pub fn with_good_radius(&self, problem: &Problem, k: f64, regen_radius: Option<f64>) -> Result<Self> {
        if !(k >= 0.0 && k.is_finite()) {
            return Err(invalid(format!("good-set radius must be finite and >= 0, got {k}")));
        }
        let r = regen_radius.unwrap_or(if k > 0.0 { k.min(1.0) } else { 1.0 });
        if !(r > 0.0 && r.is_finite()) {
            return Err(invalid(format!("regeneration radius must be positive, got {r}")));
        }
        let (mh, m) = (problem.m_hat(), problem.lipschitz());
        Ok(Self {
            log_beta: beta_for_radius(problem.dim(), self.eta, k, mh, m, r),
            good_x_radius: k,
            good_g_radius: mh + m * k,
            regen_radius: r,
            overridden: true,
            ..self.clone()
        })
    }

    /// β in linear space (0 when it underflows).
    pub fn beta(&self) -> f64 {
        self.log_beta.exp()
    }

    /// The regeneration branch fires iff `selector <= β`.
    #[inline]
    pub fn regenerates(&self, selector: f64) -> bool {
        let beta = self.beta();
        beta > 0.0 && selector <= beta
    }

    /// `|x| <= K` and every row `|g^i| <= M̂ + MK`.
    pub fn in_good_set(&self, x: &[f64], table: &GradientTable) -> bool {
        norm(x) <= self.good_x_radius && table.rows().all(|g| norm(g) <= self.good_g_radius)
    }

    /// `|x| <= K` and every row `|g^i| <= K` (one chain's part of the event `D_k`).
    pub fn in_block_ball(&self, x: &[f64], table: &GradientTable) -> bool {
        norm(x) <= self.good_x_radius && table.rows().all(|g| norm(g) <= self.good_x_radius)
    }

    /// ln of the density of `ν` on its support.
    pub fn ln_nu_density(&self, d: usize) -> f64 {
        -(ln_unit_ball_volume(d) + d as f64 * self.regen_radius.ln())
    }

    /// Radius bounding the transition mean over the good set, `3M̂ + 4MK`.
    pub fn mean_reach(&self, problem: &Problem) -> f64 {
        3.0 * problem.m_hat() + 4.0 * problem.lipschitz() * self.good_x_radius
    }

    /// Exported constants report.
    pub fn report_json(&self) -> serde_json::Value {
        json!({
            "eps": self.eps,
            "eta": self.eta,
            "c_check": self.c_check,
            "c_hat": self.c_hat,
            "K": self.k_eps,
            "log_beta": self.log_beta,
            "good_x_radius": self.good_x_radius,
            "good_g_radius": self.good_g_radius,
        })
    }
}

/// Shared randomness of one map-chain transition.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseRecord {
    /// Standard normal draw used outside the good set.
    pub gauss: Vec<f64>,
    /// 0-based component index.
    pub index: usize,
    /// Uniform on `[0, 1)`; regeneration iff `selector <= β`.
    pub selector: f64,
    /// Uniform on the unit ball; scaled by the bundle's regeneration radius.
    pub regen_point: Vec<f64>,
    /// Key of the substream driving the residual rejection loop.
    pub residual_key: StreamKey,
}

impl NoiseRecord {
    pub fn zeroed(dim: usize) -> Self {
        Self {
            gauss: vec![0.0; dim],
            index: 0,
            selector: 1.0,
            regen_point: vec![0.0; dim],
            residual_key: StreamKey::new(0, 0, 0, StreamTag::Residual),
        }
    }

    /// Draws the record for `key`. `gauss` and `index` come first, in the same
    /// order as [`crate::sampler::TransitionInput::draw`].
    pub fn draw(key: StreamKey, dim: usize, count: usize) -> Self {
        let mut rec = Self::zeroed(dim);
        rec.redraw(key, count);
        rec
    }

    pub fn redraw(&mut self, key: StreamKey, count: usize) {
        let key = key.with_tag(StreamTag::Transition);
        let mut rng = key.rng();
        fill_standard_normal(&mut rng, &mut self.gauss);
        self.index = rng.random_range(0..count);
        self.selector = rng.random::<f64>();
        fill_uniform_in_unit_ball(&mut rng, &mut self.regen_point);
        self.residual_key = key.with_tag(StreamTag::Residual);
    }
}

/// Source of the record driving the transition into absolute step `n`.
pub trait NoiseSource: Sync {
    fn fill(&self, step: u64, record: &mut NoiseRecord);
}

/// Counter-based records keyed by `(seed, replication, step)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CounterNoise {
    pub seed: u64,
    pub replication: u64,
    pub count: usize,
}

impl CounterNoise {
    pub fn new(seed: u64, replication: u64, count: usize) -> Self {
        Self {
            seed,
            replication,
            count,
        }
    }
}

impl NoiseSource for CounterNoise {
    #[inline]
    fn fill(&self, step: u64, record: &mut NoiseRecord) {
        record.redraw(
            StreamKey::new(self.seed, self.replication, step, StreamTag::Transition),
            self.count,
        );
    }
}

/// Fixed records; the transition into step `n` reads entry `n - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScriptedNoise {
    pub records: Vec<NoiseRecord>,
}

impl NoiseSource for ScriptedNoise {
    fn fill(&self, step: u64, record: &mut NoiseRecord) {
        let i = step.checked_sub(1).expect("steps start at 1") as usize;
        record.clone_from(&self.records[i]);
    }
}

/// Which branch of the map produced the next state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Regenerated,
    Residual,
    Gaussian,
}

const MAX_REJECTIONS: usize = 10_000_000;

/// Reusable map-chain stepper for fixed `(problem, η, bundle)`.
#[derive(Clone, Debug)]
pub struct MapKernel<'a> {
    saga: SagaKernel<'a>,
    bundle: &'a ConstantsBundle,
    ln_nu: f64,
    mean: Vec<f64>,
    proposal: Vec<f64>,
}

impl<'a> MapKernel<'a> {
    pub fn new(problem: &'a Problem, bundle: &'a ConstantsBundle) -> Result<Self> {
        let d = problem.dim();
        Ok(Self {
            saga: SagaKernel::new(problem, bundle.eta)?,
            bundle,
            ln_nu: bundle.ln_nu_density(d),
            mean: vec![0.0; d],
            proposal: vec![0.0; d],
        })
    }

    pub fn bundle(&self) -> &'a ConstantsBundle {
        self.bundle
    }

    /// One transition in place; returns the branch taken.
    pub fn step(&mut self, state: &mut ChainState, noise: &NoiseRecord) -> Result<Branch> {
        let s = noise.index;
        if s >= state.table.count() {
            return Err(invalid(format!("component index {s} out of range")));
        }
        let good = self.bundle.in_good_set(&state.x, &state.table);
        self.saga
            .transition_mean_into(&state.x, &state.table, s, &mut self.mean);
        let branch = if good && self.bundle.regenerates(noise.selector) {
            let r = self.bundle.regen_radius;
            for (xi, p) in state.x.iter_mut().zip(&noise.regen_point) {
                *xi = r * p;
            }
            Branch::Regenerated
        } else if good {
            sample_residual(
                &self.mean,
                self.bundle,
                self.ln_nu,
                noise.residual_key,
                &mut self.proposal,
            )?;
            state.x.copy_from_slice(&self.proposal);
            Branch::Residual
        } else {
            let scale = self.saga.noise_scale();
            for ((xi, m), z) in state.x.iter_mut().zip(&self.mean).zip(&noise.gauss) {
                *xi = m + scale * z;
            }
            Branch::Gaussian
        };
        state.table.row_mut(s).copy_from_slice(self.saga.last_component());
        state.step += 1;
        check_finite(state)?;
        Ok(branch)
    }
}

/// Rejection sampler for `(q - βν) / (1 - β)` where `q = N(mean, 2η·I)`.
fn sample_residual(
    mean: &[f64],
    bundle: &ConstantsBundle,
    ln_nu: f64,
    key: StreamKey,
    out: &mut [f64],
) -> Result<()> {
    let eta = bundle.eta;
    let r = bundle.regen_radius;
    let ln_beta_nu = bundle.log_beta + ln_nu;
    // the residual is a measure only if q >= βν on all of B(r)
    let far = norm(mean) + r;
    let ln_q_min = -0.5 * mean.len() as f64 * (4.0 * std::f64::consts::PI * eta).ln()
        - far * far / (4.0 * eta);
    if ln_beta_nu > ln_q_min + 1e-12 * ln_q_min.abs().max(1.0) {
        return Err(invalid(format!(
            "beta exceeds the minorization bound at this state (ln beta·nu = {ln_beta_nu}, ln q_min = {ln_q_min})"
        )));
    }
    let mut rng = key.with_tag(StreamTag::Residual).rng();
    let scale = (2.0 * eta).sqrt();
    for _ in 0..MAX_REJECTIONS {
        fill_standard_normal(&mut rng, out);
        for (o, m) in out.iter_mut().zip(mean) {
            *o = m + scale * *o;
        }
        let w = rng.random::<f64>();
        if norm(out) > r || w.ln() + ln_step_density(out, mean, eta) >= ln_beta_nu {
            return Ok(());
        }
    }
    Err(invalid("residual sampler exhausted its rejection budget"))
}

/// Conditional mean `x - (η/N) Σ g^i - η (F_s(x) - g^s)` of the next state.
pub fn transition_mean(
    problem: &Problem,
    x: &[f64],
    table: &GradientTable,
    s: usize,
    eta: f64,
) -> Result<Vec<f64>> {
    check_state(
        problem,
        &ChainState {
            x: x.to_vec(),
            table: table.clone(),
            step: 0,
        },
    )?;
    if s >= problem.count() {
        return Err(invalid(format!("component index {s} out of range")));
    }
    let mut out = vec![0.0; x.len()];
    SagaKernel::new(problem, eta)?.transition_mean_into(x, table, s, &mut out);
    Ok(out)
}

/// One draw from the residual kernel at state `(x, table, s)`, driven by `key`.
#[allow(clippy::too_many_arguments)]
pub fn residual_sample(
    problem: &Problem,
    x: &[f64],
    table: &GradientTable,
    s: usize,
    eta: f64,
    log_beta: f64,
    regen_radius: f64,
    key: StreamKey,
) -> Result<Vec<f64>> {
    let mean = transition_mean(problem, x, table, s, eta)?;
    let bundle = ConstantsBundle {
        eps: f64::NAN,
        eta,
        c_check: f64::NAN,
        c_hat: f64::NAN,
        k_eps: f64::NAN,
        log_beta,
        good_x_radius: f64::NAN,
        good_g_radius: f64::NAN,
        regen_radius,
        e_x0_sq: f64::NAN,
        overridden: true,
        within_step_cap: false,
    };
    let mut out = vec![0.0; x.len()];
    sample_residual(&mean, &bundle, bundle.ln_nu_density(x.len()), key, &mut out)?;
    Ok(out)
}

/// One map-chain transition, returning the successor.
pub fn map_step(
    problem: &Problem,
    state: &ChainState,
    noise: &NoiseRecord,
    bundle: &ConstantsBundle,
) -> Result<ChainState> {
    check_state(problem, state)?;
    let mut next = state.clone();
    MapKernel::new(problem, bundle)?.step(&mut next, noise)?;
    Ok(next)
}

/// `Z_{m,n}` started from `state` at time `m`: the state itself when `n <= m`,
/// otherwise the composition of map steps driven by records `m+1, ..., n`.
pub fn iterate_z<S: NoiseSource + ?Sized>(
    problem: &Problem,
    m: u64,
    n: u64,
    state: &ChainState,
    source: &S,
    bundle: &ConstantsBundle,
) -> Result<ChainState> {
    check_state(problem, state)?;
    let mut z = state.clone();
    z.step = m;
    if n <= m {
        return Ok(z);
    }
    let mut kernel = MapKernel::new(problem, bundle)?;
    let mut rec = NoiseRecord::zeroed(problem.dim());
    for t in m + 1..=n {
        source.fill(t, &mut rec);
        kernel.step(&mut z, &rec)?;
    }
    Ok(z)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinorizationReport {
    pub trials: u64,
    /// Minimum over sampled good-set states and `u ∈ B(r)` of `q(u) / (β ν(u))`.
    pub min_density_ratio: f64,
    pub min_log_ratio: f64,
    /// Ratio at `|u - m| = 3M̂ + 4MK + r`; equals 1 up to rounding.
    pub worst_case_ratio: f64,
    /// ln of the ratio at `u = m`, i.e. `(3M̂ + 4MK + r)^2 / (4η)`.
    pub center_log_ratio: f64,
    pub pass: bool,
}

/// Checks `q(x, g, s, ·) >= β ν` on sampled good-set states and at the
/// analytic worst case.
pub fn verify_minorization(
    problem: &Problem,
    bundle: &ConstantsBundle,
    trials: u64,
    seed: u64,
) -> Result<MinorizationReport> {
    if trials == 0 {
        return Err(invalid("trials must be >= 1"));
    }
    let d = problem.dim();
    let n = problem.count();
    let ln_beta_nu = bundle.log_beta + bundle.ln_nu_density(d);
    let mut kernel = SagaKernel::new(problem, bundle.eta)?;
    let mut state = ChainState {
        x: vec![0.0; d],
        table: GradientTable::zeros(n, d),
        step: 0,
    };
    let (mut u, mut m) = (vec![0.0; d], vec![0.0; d]);
    let mut min_log = f64::INFINITY;
    for t in 0..trials {
        let mut rng = StreamKey::new(seed, 0, t, StreamTag::Verify).rng();
        fill_uniform_in_unit_ball(&mut rng, &mut state.x);
        state.x.iter_mut().for_each(|v| *v *= bundle.good_x_radius);
        for i in 0..n {
            let row = state.table.row_mut(i);
            fill_uniform_in_unit_ball(&mut rng, row);
            row.iter_mut().for_each(|v| *v *= bundle.good_g_radius);
        }
        let s = rng.random_range(0..n);
        kernel.transition_mean_into(&state.x, &state.table, s, &mut m);
        fill_uniform_in_unit_ball(&mut rng, &mut u);
        u.iter_mut().for_each(|v| *v *= bundle.regen_radius);
        min_log = min_log.min(ln_step_density(&u, &m, bundle.eta) - ln_beta_nu);
    }

    let reach = bundle.mean_reach(problem);
    let mut m_worst = vec![0.0; d];
    let mut u_worst = vec![0.0; d];
    m_worst[0] = reach;
    u_worst[0] = -bundle.regen_radius;
    let worst_case_ratio = (ln_step_density(&u_worst, &m_worst, bundle.eta) - ln_beta_nu).exp();
    let center_log_ratio = ln_step_density(&m_worst, &m_worst, bundle.eta) - ln_beta_nu;
    let min_density_ratio = min_log.exp();
    Ok(MinorizationReport {
        trials,
        min_density_ratio,
        min_log_ratio: min_log,
        worst_case_ratio,
        center_log_ratio,
        pass: min_log >= 0.0 && worst_case_ratio >= 1.0 - 4.0 * f64::EPSILON,
    })
}
