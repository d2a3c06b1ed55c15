//! The direct SAGA-LD chain `(X_n, G_n)`, the SGLD baseline and the
//! step-size cap under which the moment bounds hold.
//!
//! One transition consumes a [`TransitionInput`]: a Gaussian vector `ξ` and a
//! component index `s`. The same index selects the control-variate term in the
//! state update and the table row refreshed afterwards, and the refreshed row
//! is evaluated at the pre-step state:
//!
//! ```text
//! X' = X - (η/N) Σ_i G^i - η (F_s(X) - G^s) + √(2η) ξ
//! G'^s = F_s(X),   G'^i = G^i for i != s
//! ```

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::io::fmt_f64;
use crate::linalg::{bits_eq, norm_sq};
use crate::model::Problem;
use crate::noise::{fill_standard_normal, StreamKey, StreamTag};

/// Step sizes at or below `c2 / (8 M^2)` keep the second-moment bounds valid.
pub fn eta_max(problem: &Problem) -> f64 {
    let m = problem.lipschitz();
    problem.c2() / (8.0 * m * m)
}

/// Rejects step sizes above [`eta_max`] unless `unsafe_eta` is set.
pub fn check_step_size(problem: &Problem, eta: f64, unsafe_eta: bool) -> Result<()> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(invalid(format!("step size must be positive and finite, got {eta}")));
    }
    let cap = eta_max(problem);
    if eta > cap && !unsafe_eta {
        return Err(Error::UnsafeStepSize { eta, eta_max: cap });
    }
    Ok(())
}

/// The `N x d` table of stored component gradients, row `i` holding `G^i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientTable {
    dim: usize,
    data: Vec<f64>,
}

impl GradientTable {
    pub fn zeros(count: usize, dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; count * dim],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(invalid("table rows must be nonempty and of equal length"));
        }
        Ok(Self {
            dim,
            data: rows.concat(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }
}

/// State `(X_n, G_n)` of the chain after `step` transitions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub x: Vec<f64>,
    pub table: GradientTable,
    pub step: u64,
}

impl ChainState {
    /// Bitwise equality of the state vector and every table row; `step` is ignored.
    pub fn same_point(&self, other: &ChainState) -> bool {
        bits_eq(&self.x, &other.x) && bits_eq(self.table.as_slice(), other.table.as_slice())
    }

    /// `|X|^2 + Σ_i |G^i|^2`.
    pub fn norm_sq(&self) -> f64 {
        norm_sq(&self.x) + norm_sq(self.table.as_slice())
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.table.as_slice()).all(|v| v.is_finite())
    }
}

/// `X_0 = x0`, `G_0^i = F_i(x0)`.
pub fn init_chain(problem: &Problem, x0: &[f64]) -> Result<ChainState> {
    let mut table = GradientTable::zeros(problem.count(), problem.dim());
    for i in 0..problem.count() {
        let row = problem.component_eval(i, x0)?;
        table.row_mut(i).copy_from_slice(&row);
    }
    Ok(ChainState {
        x: x0.to_vec(),
        table,
        step: 0,
    })
}

/// Randomness of one direct-chain transition.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionInput {
    pub gauss: Vec<f64>,
    /// 0-based component index.
    pub index: usize,
}

impl TransitionInput {
    pub fn new(gauss: Vec<f64>, index: usize) -> Self {
        Self { gauss, index }
    }

    /// Draws `ξ` then `s` from the transition stream of `key`.
    pub fn draw(key: StreamKey, dim: usize, count: usize) -> Self {
        let mut input = Self {
            gauss: vec![0.0; dim],
            index: 0,
        };
        input.redraw(key, count);
        input
    }

    pub fn redraw(&mut self, key: StreamKey, count: usize) {
        let mut rng = key.with_tag(StreamTag::Transition).rng();
        fill_standard_normal(&mut rng, &mut self.gauss);
        self.index = rng.random_range(0..count);
    }
}

/// Reusable evaluator of the SAGA-LD update for a fixed problem and step size.
#[derive(Clone, Debug)]
pub struct SagaKernel<'a> {
    problem: &'a Problem,
    eta: f64,
    noise_scale: f64,
    fs: Vec<f64>,
    update: Vec<f64>,
}

impl<'a> SagaKernel<'a> {
    pub fn new(problem: &'a Problem, eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(invalid(format!("step size must be positive and finite, got {eta}")));
        }
        let d = problem.dim();
        Ok(Self {
            problem,
            eta,
            noise_scale: (2.0 * eta).sqrt(),
            fs: vec![0.0; d],
            update: vec![0.0; d],
        })
    }

    pub fn problem(&self) -> &'a Problem {
        self.problem
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// `√(2η)`.
    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    /// Computes `(η/N) Σ_i G^i + η (F_s(x) - G^s)` into an internal buffer and
    /// `F_s(x)` alongside it; returns the update.
    #[inline]
    pub fn update_term(&mut self, x: &[f64], table: &GradientTable, s: usize) -> &[f64] {
        let n = table.count() as f64;
        let eta = self.eta;
        self.problem.component_into(s, x, &mut self.fs);
        let gs = table.row(s);
        for k in 0..x.len() {
            let mut sum = 0.0;
            for row in table.rows() {
                sum += row[k];
            }
            self.update[k] = (eta / n) * sum + eta * (self.fs[k] - gs[k]);
        }
        &self.update
    }

    /// `F_s` at the point passed to the last [`Self::update_term`] call.
    pub(crate) fn last_component(&self) -> &[f64] {
        &self.fs
    }

    /// Writes the conditional mean `x - update_term` of the next state into `out`.
    #[inline]
    pub fn transition_mean_into(
        &mut self,
        x: &[f64],
        table: &GradientTable,
        s: usize,
        out: &mut [f64],
    ) {
        self.update_term(x, table, s);
        for ((o, xi), u) in out.iter_mut().zip(x).zip(&self.update) {
            *o = xi - u;
        }
    }

    /// One SAGA-LD transition in place.
    pub fn step(&mut self, state: &mut ChainState, input: &TransitionInput) -> Result<()> {
        let s = input.index;
        if s >= state.table.count() {
            return Err(invalid(format!("component index {s} out of range")));
        }
        if input.gauss.len() != state.x.len() {
            return Err(invalid("gaussian draw has the wrong dimension"));
        }
        self.update_term(&state.x, &state.table, s);
        for ((xi, u), z) in state.x.iter_mut().zip(&self.update).zip(&input.gauss) {
            *xi = *xi - u + self.noise_scale * z;
        }
        state.table.row_mut(s).copy_from_slice(&self.fs);
        state.step += 1;
        check_finite(state)
    }
}

pub(crate) fn check_finite(state: &ChainState) -> Result<()> {
    if state.is_finite() {
        Ok(())
    } else {
        Err(Error::NumericOverflow {
            step: state.step,
            norm: state.norm_sq().sqrt(),
        })
    }
}

/// `(η/N) Σ_i G^i + η (F_s(X) - G^s)` for the given state.
pub fn update_term(
    problem: &Problem,
    state: &ChainState,
    index: usize,
    eta: f64,
) -> Result<Vec<f64>> {
    check_state(problem, state)?;
    if index >= problem.count() {
        return Err(invalid(format!("component index {index} out of range")));
    }
    let mut kernel = SagaKernel::new(problem, eta)?;
    Ok(kernel.update_term(&state.x, &state.table, index).to_vec())
}

/// One SAGA-LD transition, returning the successor state.
pub fn saga_step(
    problem: &Problem,
    state: &ChainState,
    input: &TransitionInput,
    eta: f64,
) -> Result<ChainState> {
    check_state(problem, state)?;
    let mut next = state.clone();
    SagaKernel::new(problem, eta)?.step(&mut next, input)?;
    Ok(next)
}

/// One SGLD transition `x - η F_s(x) + √(2η) ξ`.
pub fn sgld_step(
    problem: &Problem,
    x: &[f64],
    input: &TransitionInput,
    eta: f64,
) -> Result<Vec<f64>> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(invalid("step size must be positive and finite"));
    }
    if input.gauss.len() != x.len() {
        return Err(invalid("gaussian draw has the wrong dimension"));
    }
    let f = problem.component_eval(input.index, x)?;
    let scale = (2.0 * eta).sqrt();
    let out: Vec<f64> = x
        .iter()
        .zip(&f)
        .zip(&input.gauss)
        .map(|((xi, fi), z)| xi - eta * fi + scale * z)
        .collect();
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(Error::NumericOverflow {
            step: 1,
            norm: norm_sq(&out).sqrt(),
        })
    }
}

pub(crate) fn check_state(problem: &Problem, state: &ChainState) -> Result<()> {
    if state.x.len() != problem.dim()
        || state.table.dim() != problem.dim()
        || state.table.count() != problem.count()
    {
        return Err(invalid("state shape does not match the problem"));
    }
    Ok(())
}

/// Law of the initial state `X_0`; the table always starts at `F_i(X_0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "law")]
pub enum InitLaw {
    Point { x: Vec<f64> },
    /// Independent `N(mean_k, std^2)` coordinates.
    Gaussian { mean: Vec<f64>, std: f64 },
}

impl InitLaw {
    pub fn point(x: Vec<f64>) -> Self {
        InitLaw::Point { x }
    }

    pub fn origin(dim: usize) -> Self {
        InitLaw::Point { x: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        match self {
            InitLaw::Point { x } => x.len(),
            InitLaw::Gaussian { mean, .. } => mean.len(),
        }
    }

    /// `E|X_0|^2`.
    pub fn second_moment(&self) -> f64 {
        match self {
            InitLaw::Point { x } => norm_sq(x),
            InitLaw::Gaussian { mean, std } => norm_sq(mean) + mean.len() as f64 * std * std,
        }
    }

    pub fn sample(&self, key: StreamKey) -> Vec<f64> {
        match self {
            InitLaw::Point { x } => x.clone(),
            InitLaw::Gaussian { mean, std } => {
                let mut rng = key.with_tag(StreamTag::Init).rng();
                let mut z = vec![0.0; mean.len()];
                fill_standard_normal(&mut rng, &mut z);
                mean.iter().zip(&z).map(|(m, zi)| m + std * zi).collect()
            }
        }
    }

    pub fn init_state(&self, problem: &Problem, key: StreamKey) -> Result<ChainState> {
        init_chain(problem, &self.sample(key))
    }
}

/// Snapshot stride required beyond this many steps.
pub const MAX_UNTHINNED_STEPS: u64 = 1_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub eta: f64,
    pub steps: u64,
    pub seed: u64,
    pub replication: u64,
    pub stride: Option<u64>,
    pub unsafe_eta: bool,
}

impl RunOptions {
    pub fn new(eta: f64, steps: u64, seed: u64) -> Self {
        Self {
            eta,
            steps,
            seed,
            replication: 0,
            stride: None,
            unsafe_eta: false,
        }
    }

    pub fn stride(mut self, stride: u64) -> Self {
        self.stride = Some(stride);
        self
    }

    pub fn replication(mut self, replication: u64) -> Self {
        self.replication = replication;
        self
    }

    pub fn allow_unsafe_eta(mut self, yes: bool) -> Self {
        self.unsafe_eta = yes;
        self
    }
}

/// Snapshots of one chain at steps `0, stride, 2·stride, ...`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub stride: u64,
    pub snapshots: Vec<ChainState>,
}

/// Runs the direct chain from `x0`. The transition into step `n` draws its
/// noise from key `(seed, replication, n)`, so the output is a pure function
/// of the options.
pub fn run_chain(problem: &Problem, x0: &[f64], opts: &RunOptions) -> Result<Trajectory> {
    if opts.steps == 0 {
        return Err(Error::Config("steps must be >= 1".into()));
    }
    check_step_size(problem, opts.eta, opts.unsafe_eta)?;
    let stride = match opts.stride {
        Some(0) => return Err(Error::Config("stride must be >= 1".into())),
        Some(s) => s,
        None if opts.steps > MAX_UNTHINNED_STEPS => {
            return Err(Error::Config(format!(
                "runs longer than {MAX_UNTHINNED_STEPS} steps need an explicit stride"
            )))
        }
        None => 1,
    };
    let mut state = init_chain(problem, x0)?;
    let mut kernel = SagaKernel::new(problem, opts.eta)?;
    let mut input = TransitionInput::new(vec![0.0; problem.dim()], 0);
    let mut snapshots = vec![state.clone()];
    for n in 1..=opts.steps {
        input.redraw(
            StreamKey::new(opts.seed, opts.replication, n, StreamTag::Transition),
            problem.count(),
        );
        kernel.step(&mut state, &input)?;
        if n % stride == 0 {
            snapshots.push(state.clone());
        }
    }
    Ok(Trajectory { stride, snapshots })
}

impl Trajectory {
    pub fn csv_header(dim: usize, count: usize) -> String {
        let mut cols = vec!["step".to_string()];
        cols.extend((0..dim).map(|k| format!("x_{k}")));
        for i in 1..=count {
            cols.extend((0..dim).map(|k| format!("g_{{{i},{k}}}")));
        }
        cols.join(",")
    }

    /// CSV export, one row per snapshot. `provenance` becomes a leading `# ...` line.
    pub fn write_csv<W: Write>(&self, mut w: W, provenance: Option<&str>) -> Result<()> {
        let Some(first) = self.snapshots.first() else {
            return Ok(());
        };
        if let Some(p) = provenance {
            writeln!(w, "# {p}")?;
        }
        writeln!(
            w,
            "{}",
            Self::csv_header(first.x.len(), first.table.count())
        )?;
        for s in &self.snapshots {
            let mut line = s.step.to_string();
            for v in s.x.iter().chain(s.table.as_slice()) {
                line.push(',');
                line.push_str(&fmt_f64(*v));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Binary export: `u64` tag (the config hash, or 0), `u64` column count,
    /// then every snapshot as little-endian `f64`s `[step, x.., g..]`, row-major.
    pub fn write_binary<W: Write>(&self, mut w: W, tag: u64) -> Result<()> {
        let cols = self
            .snapshots
            .first()
            .map(|s| 1 + s.x.len() + s.table.as_slice().len())
            .unwrap_or(0) as u64;
        w.write_all(&tag.to_le_bytes())?;
        w.write_all(&cols.to_le_bytes())?;
        for s in &self.snapshots {
            w.write_all(&(s.step as f64).to_le_bytes())?;
            for v in s.x.iter().chain(s.table.as_slice()) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BuiltinProblem;

    fn lin() -> Problem {
        BuiltinProblem::Lin1d.problem()
    }

    fn lin_state(x: f64) -> ChainState {
        ChainState {
            x: vec![x],
            table: GradientTable::from_rows(&[vec![-1.0], vec![1.0]]).unwrap(),
            step: 0,
        }
    }

    const ETA: f64 = 1.0 / 32.0;

    #[test]
    fn init_examples() {
        let s = init_chain(&lin(), &[0.0]).unwrap();
        assert_eq!(s.table.to_rows(), vec![vec![-1.0], vec![1.0]]);
        assert_eq!((s.step, s.x.clone()), (0, vec![0.0]));
        let m = init_chain(&BuiltinProblem::Micro1d.problem(), &[0.0]).unwrap();
        assert_eq!(m.table.to_rows(), vec![vec![0.1], vec![-0.1]]);
        assert!(init_chain(&lin(), &[0.0, 0.0]).is_err());
    }

    #[test]
    fn update_term_examples() {
        let p = lin();
        assert_eq!(update_term(&p, &lin_state(2.0), 0, ETA).unwrap(), vec![0.125]);
        assert_eq!(update_term(&p, &lin_state(2.0), 1, ETA).unwrap(), vec![0.0625]);
        for eta in [1e-3, 0.1, 0.7] {
            assert_eq!(update_term(&p, &lin_state(0.0), 0, eta).unwrap(), vec![0.0]);
        }
    }

    #[test]
    fn saga_step_examples() {
        let p = lin();
        let next = saga_step(&p, &lin_state(0.0), &TransitionInput::new(vec![0.0], 0), ETA).unwrap();
        assert_eq!(next.x, vec![0.0]);
        assert_eq!(next.table.to_rows(), vec![vec![-1.0], vec![1.0]]);

        let next = saga_step(&p, &lin_state(2.0), &TransitionInput::new(vec![0.0], 1), ETA).unwrap();
        assert_eq!(next.x, vec![1.9375]);
        assert_eq!(next.table.to_rows(), vec![vec![-1.0], vec![3.0]]);
        assert_eq!(next.step, 1);

        let next = saga_step(&p, &lin_state(2.0), &TransitionInput::new(vec![1.0], 1), ETA).unwrap();
        assert_eq!(next.x, vec![2.1875]);
    }

    #[test]
    fn sgld_examples() {
        let p = lin();
        let z = |s| TransitionInput::new(vec![0.0], s);
        assert_eq!(sgld_step(&p, &[1.0], &z(0), ETA).unwrap(), vec![0.96875]);
        assert_eq!(sgld_step(&p, &[0.0], &z(1), ETA).unwrap(), vec![-0.03125]);
        // F_1(0.5) = 0
        assert_eq!(sgld_step(&p, &[0.5], &z(0), ETA).unwrap(), vec![0.5]);
    }

    #[test]
    fn eta_max_examples() {
        assert_eq!(eta_max(&lin()), 0.03125);
        assert_eq!(eta_max(&BuiltinProblem::Micro1d.problem()), 0.125);
        assert_eq!(eta_max(&BuiltinProblem::Well2d.problem()), 0.00390625);
    }

    #[test]
    fn overflow_is_reported() {
        let p = lin();
        let mut state = lin_state(1e300);
        let mut k = SagaKernel::new(&p, 10.0).unwrap();
        let input = TransitionInput::new(vec![0.0], 0);
        let mut err = Ok(());
        for _ in 0..1000 {
            err = k.step(&mut state, &input);
            if err.is_err() {
                break;
            }
        }
        assert!(matches!(err, Err(Error::NumericOverflow { .. })), "{err:?}");
    }

    #[test]
    fn run_chain_contract() {
        let p = lin();
        assert!(matches!(
            run_chain(&p, &[0.0], &RunOptions::new(ETA, 0, 1)),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            run_chain(&p, &[0.0], &RunOptions::new(0.05, 10, 1)),
            Err(Error::UnsafeStepSize { .. })
        ));
        assert!(run_chain(&p, &[0.0], &RunOptions::new(0.05, 10, 1).allow_unsafe_eta(true)).is_ok());
        assert!(matches!(
            run_chain(&p, &[0.0], &RunOptions::new(ETA, 2_000_000, 1)),
            Err(Error::Config(_))
        ));
        let a = run_chain(&p, &[0.3], &RunOptions::new(ETA, 500, 42)).unwrap();
        let b = run_chain(&p, &[0.3], &RunOptions::new(ETA, 500, 42)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.snapshots.len(), 501);
        let thin = run_chain(&p, &[0.3], &RunOptions::new(ETA, 500, 42).stride(100)).unwrap();
        assert_eq!(thin.snapshots.len(), 6);
        assert_eq!(thin.snapshots[5], a.snapshots[500]);
    }

    #[test]
    fn csv_and_binary_layout() {
        let p = BuiltinProblem::Well2d.problem();
        let t = run_chain(&p, &[0.5, -0.5], &RunOptions::new(0.003, 3, 5)).unwrap();
        let mut csv = Vec::new();
        t.write_csv(&mut csv, Some("config_hash=abc")).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# config_hash=abc"));
        assert_eq!(
            lines.next(),
            Some("step,x_0,x_1,g_{1,0},g_{1,1},g_{2,0},g_{2,1},g_{3,0},g_{3,1},g_{4,0},g_{4,1}")
        );
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), 11);
        assert_eq!(row[1].parse::<f64>().unwrap(), 0.5);

        let mut bin = Vec::new();
        t.write_binary(&mut bin, 7).unwrap();
        assert_eq!(bin.len(), 16 + 4 * 11 * 8);
        let last = f64::from_le_bytes(bin[bin.len() - 8..].try_into().unwrap());
        assert_eq!(last, t.snapshots[3].table.row(3)[1]);
    }
}
