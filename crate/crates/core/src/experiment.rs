//! Batch experiments behind the `sagald` subcommands.
//!
//! Each command is a pure function of its [`ExperimentConfig`]: rerunning
//! it rewrites byte-identical files. Every file carries the config hash.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::hash::Hasher;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::coupling::{empirical_meet_prob, n_zero, MeetReport};
use crate::error::{Error, Result};
use crate::io::write_csv;
use crate::model::{BuiltinProblem, Problem};
use crate::randommap::{derive_constants, derive_constants_unchecked, verify_minorization, ConstantsBundle};
use crate::sampler::{check_step_size, eta_max, run_chain, InitLaw, RunOptions, Trajectory};
use crate::stats::{lln_check, mixing_vs_coupling, track_moments, tv_cauchy_scan, LlnOptions, Observable};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProblemSpec {
    Builtin(String),
    Inline(Problem),
}

impl ProblemSpec {
    pub fn resolve(&self) -> Result<Problem> {
        match self {
            ProblemSpec::Builtin(name) => Ok(BuiltinProblem::from_str(name)?.problem()),
            ProblemSpec::Inline(p) => Ok(p.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
    Binary,
}

impl FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "binary" => Ok(Format::Binary),
            _ => Err(Error::Usage(format!("unknown format {s:?} (csv, json, binary)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Constants,
    Sample,
    Couple,
    Mixing,
    Lln,
    Tv,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Constants => "constants",
            Command::Sample => "sample",
            Command::Couple => "couple",
            Command::Mixing => "mixing",
            Command::Lln => "lln",
            Command::Tv => "tv",
            Command::Verify => "verify",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: Option<ProblemSpec>,
    /// Defaults to the step-size cap of the problem.
    pub eta: Option<f64>,
    pub eps: f64,
    pub seed: u64,
    pub steps: Option<u64>,
    pub replications: Option<u64>,
    pub k_override: Option<f64>,
    pub unsafe_eta: bool,
    pub output_dir: PathBuf,
    pub format: Format,
    pub threads: Option<usize>,
    pub x0: Option<Vec<f64>>,
    pub phi: Option<String>,
    pub lags: Option<Vec<u64>>,
    pub checkpoints: Option<Vec<u64>>,
    /// Start of the mixing window.
    pub j: Option<u64>,
    pub minorization_trials: Option<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            problem: None,
            eta: None,
            eps: 0.1,
            seed: 0,
            steps: None,
            replications: None,
            k_override: None,
            unsafe_eta: false,
            output_dir: PathBuf::from("out"),
            format: Format::Csv,
            threads: None,
            x0: None,
            phi: None,
            lags: None,
            checkpoints: None,
            j: None,
            minorization_trials: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    /// FNV-1a 64 of the canonical JSON (sorted keys), ignoring `threads` and
    /// `output_dir`, which do not affect results.
    pub fn hash(&self) -> u64 {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(map) = &mut v {
            map.remove("threads");
            map.remove("output_dir");
        }
        let canonical = serde_json::to_string(&v).expect("value serializes");
        let mut h = FnvHasher::default();
        h.write(canonical.as_bytes());
        h.finish()
    }

    pub fn hash_hex(&self) -> String {
        format!("{:016x}", self.hash())
    }

    pub fn problem(&self) -> Result<Problem> {
        self.problem
            .as_ref()
            .ok_or_else(|| Error::Usage("a problem is required (--problem NAME or config)".into()))?
            .resolve()
    }

    fn eta_for(&self, problem: &Problem) -> f64 {
        self.eta.unwrap_or_else(|| eta_max(problem))
    }

    fn x0_for(&self, problem: &Problem) -> Result<Vec<f64>> {
        match &self.x0 {
            Some(x) if x.len() != problem.dim() => Err(Error::Config(format!(
                "x0 has length {} but the problem has d = {}",
                x.len(),
                problem.dim()
            ))),
            Some(x) => Ok(x.clone()),
            None => Ok(vec![0.0; problem.dim()]),
        }
    }

    /// Constants at `K(ε)`, or at the overridden radius after re-verifying
    /// the minorization.
    fn bundle(&self, problem: &Problem, e_x0_sq: f64) -> Result<ConstantsBundle> {
        let eta = self.eta_for(problem);
        check_step_size(problem, eta, self.unsafe_eta)?;
        let base = if self.unsafe_eta {
            derive_constants_unchecked(problem, eta, self.eps, e_x0_sq)?
        } else {
            derive_constants(problem, eta, self.eps, e_x0_sq)?
        };
        match self.k_override {
            None => Ok(base),
            Some(k) => {
                let b = base.with_good_radius(problem, k, None)?;
                let trials = self.minorization_trials.unwrap_or(10_000);
                let rep = verify_minorization(problem, &b, trials, self.seed)?;
                if !rep.pass {
                    return Err(Error::Minorization {
                        ratio: rep.min_density_ratio.min(rep.worst_case_ratio),
                    });
                }
                Ok(b)
            }
        }
    }
}

/// Files written and a human-readable summary.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: String,
    /// Set when a verification inside the command failed.
    pub failed: bool,
}

struct Writer<'a> {
    dir: &'a Path,
    provenance: String,
    hash: String,
    files: Vec<PathBuf>,
}

impl Writer<'_> {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let f = File::create(&path)?;
        self.files.push(path);
        Ok(BufWriter::new(f))
    }

    fn json(&mut self, name: &str, mut v: Value) -> Result<()> {
        if let Value::Object(map) = &mut v {
            map.insert("config_hash".into(), json!(self.hash));
        }
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, &v)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
        let mut w = self.create(name)?;
        write_csv(&mut w, Some(&self.provenance), header, rows)?;
        w.flush()?;
        Ok(())
    }
}

/// Runs one subcommand and writes its outputs under `config.output_dir`.
pub fn run(cmd: Command, config: &ExperimentConfig) -> Result<Outcome> {
    let problem = config.problem()?;
    fs::create_dir_all(&config.output_dir)?;
    let hash = config.hash_hex();
    let mut w = Writer {
        dir: &config.output_dir,
        provenance: format!("sagald {} config_hash={hash}", cmd.name()),
        hash,
        files: Vec::new(),
    };
    let mut out = Outcome::default();
    match cmd {
        Command::Constants => constants(&problem, config, &mut w, &mut out)?,
        Command::Sample => sample(&problem, config, &mut w, &mut out)?,
        Command::Couple => couple(&problem, config, &mut w, &mut out)?,
        Command::Mixing => mixing(&problem, config, &mut w, &mut out)?,
        Command::Lln => lln(&problem, config, &mut w, &mut out)?,
        Command::Tv => tv(&problem, config, &mut w, &mut out)?,
        Command::Verify => verify(&problem, config, &mut w, &mut out)?,
    }
    out.files = w.files;
    Ok(out)
}

fn constants(problem: &Problem, cfg: &ExperimentConfig, w: &mut Writer, out: &mut Outcome) -> Result<()> {
    let x0 = cfg.x0_for(problem)?;
    let e_x0_sq = crate::linalg::norm_sq(&x0);
    let b = cfg.bundle(problem, e_x0_sq)?;
    let mut report = b.report_json();
    report["n_zero"] = json!(n_zero(b.log_beta, problem.count(), cfg.eps)?);
    report["within_step_cap"] = json!(b.within_step_cap);
    w.json("constants.json", report)?;
    let s = &mut out.summary;
    writeln!(s, "eps            {}", b.eps).ok();
    writeln!(s, "eta            {}", b.eta).ok();
    writeln!(s, "C_check        {}", b.c_check).ok();
    writeln!(s, "C_hat          {}", b.c_hat).ok();
    writeln!(s, "K              {}", b.k_eps).ok();
    writeln!(s, "good x radius  {}", b.good_x_radius).ok();
    writeln!(s, "good g radius  {}", b.good_g_radius).ok();
    writeln!(s, "ln beta        {}", b.log_beta).ok();
    Ok(())
}

fn sample(problem: &Problem, cfg: &ExperimentConfig, w: &mut Writer, out: &mut Outcome) -> Result<()> {
    let eta = cfg.eta_for(problem);
    let steps = cfg.steps.unwrap_or(1000);
    let reps = cfg.replications.unwrap_or(200);
    let x0 = cfg.x0_for(problem)?;
    let stride = steps.div_ceil(crate::sampler::MAX_UNTHINNED_STEPS).max(1);
    let opts = RunOptions::new(eta, steps, cfg.seed)
        .stride(stride)
        .allow_unsafe_eta(cfg.unsafe_eta);
    let traj: Trajectory = run_chain(problem, &x0, &opts)?;
    match cfg.format {
        Format::Csv => {
            let mut f = w.create("trajectory.csv")?;
            traj.write_csv(&mut f, Some(&w.provenance))?;
            f.flush()?;
        }
        Format::Json => {
            let snaps: Vec<Value> = traj
                .snapshots
                .iter()
                .map(|s| json!({"step": s.step, "x": s.x, "table": s.table.to_rows()}))
                .collect();
            w.json("trajectory.json", json!({"stride": traj.stride, "snapshots": snaps}))?;
        }
        Format::Binary => {
            let mut f = w.create("trajectory.bin")?;
            traj.write_binary(&mut f, u64::from_str_radix(&w.hash, 16).expect("hex"))?;
            f.flush()?;
        }
    }
    let m = track_moments(problem, &InitLaw::point(x0), eta, steps.min(100_000), reps, cfg.seed, false)?;
    let rows: Vec<Vec<f64>> = (0..m.ex2.len())
        .map(|t| {
            vec![
                t as f64,
                m.ex2[t],
                m.eg2_max[t],
                m.l_hat[t],
                m.bound_x.unwrap_or(f64::NAN),
                m.bound_g.as_ref().map_or(f64::NAN, |g| g[t]),
            ]
        })
        .collect();
    if cfg.format != Format::Json {
        w.csv("moments.csv", &["step", "ex2", "eg2_max", "l_hat", "bound_x", "bound_g"], &rows)?;
    }
    w.json(
        "moments.json",
        json!({
            "replications": m.replications,
            "steps": m.ex2.len() - 1,
            "sup_ex2": m.l_hat.last(),
            "bound_x": m.bound_x,
            "x_violations": m.x_violations(),
            "g_violations": m.g_violations(),
            "pass": m.pass(),
        }),
    )?;
    out.failed = m.pass() == Some(false);
    writeln!(
        out.summary,
        "moments: sup E|X|^2 = {:.6}, bound = {:?}, pass = {:?}",
        m.l_hat.last().unwrap(),
        m.bound_x,
        m.pass()
    )
    .ok();
    Ok(())
}

fn couple(problem: &Problem, cfg: &ExperimentConfig, w: &mut Writer, out: &mut Outcome) -> Result<()> {
    let x0 = cfg.x0_for(problem)?;
    let x0 = if x0.iter().all(|v| *v == 0.0) { vec![1.0; problem.dim()] } else { x0 };
    let init_a = InitLaw::point(x0.clone());
    let init_b = InitLaw::point(x0.iter().map(|v| -v).collect());
    let b = cfg.bundle(problem, init_a.second_moment())?;
    let n1 = problem.count() as u64 + 1;
    let k_max = cfg.steps.unwrap_or(300).div_ceil(n1);
    let reps = cfg.replications.unwrap_or(1000);
    let rep: MeetReport = empirical_meet_prob(problem, &b, &init_a, &init_b, k_max, reps, cfg.seed)?;
    if cfg.format != Format::Json {
        let mut f = w.create("coupling.csv")?;
        rep.write_csv(&mut f, Some(&w.provenance))?;
        f.flush()?;
    }
    let mut summary = rep.summary_json(problem.count())?;
    summary["overridden"] = json!(b.overridden);
    summary["within_step_cap"] = json!(b.within_step_cap);
    summary["K"] = json!(b.good_x_radius);
    summary["regen_radius"] = json!(b.regen_radius);
    if cfg.format == Format::Json {
        summary["rows"] = json!(rep.rows);
    }
    w.json("coupling.json", summary)?;
    let rec = rep.check_recursion();
    out.failed = !rec.pass || rep.sweep_violations > 0;
    let met = rep.meet_steps.iter().filter(|m| m.is_some()).count();
    writeln!(
        out.summary,
        "coupling: {met}/{reps} pairs met within {} steps; ln beta = {:.6}; recursion pass = {}",
        k_max * n1,
        b.log_beta,
        rec.pass
    )
    .ok();
    Ok(())
}

fn mixing(problem: &Problem, cfg: &ExperimentConfig, w: &mut Writer, out: &mut Outcome) -> Result<()> {
    let x0 = cfg.x0_for(problem)?;
    let init = InitLaw::point(x0);
    let b = cfg.bundle(problem, init.second_moment())?;
    let lags = cfg.lags.clone().unwrap_or_else(|| vec![100, 1000]);
    let reps = cfg.replications.unwrap_or(2000);
    let j = cfg.j.unwrap_or(1000);
    let rep = mixing_vs_coupling(problem, &b, &init, j, &lags, reps, cfg.seed)?;
    if cfg.format != Format::Json {
        let rows: Vec<Vec<f64>> = (0..lags.len())
            .map(|i| {
                vec![
                    lags[i] as f64,
                    rep.alpha_hat[i],
                    rep.alpha_stderr[i],
                    rep.p_meet[i],
                    rep.coupling_bound[i],
                    rep.combined_stderr[i],
                ]
            })
            .collect();
        w.csv(
            "mixing.csv",
            &["lag", "alpha_hat", "alpha_stderr", "p_meet", "coupling_bound", "combined_stderr"],
            &rows,
        )?;
    }
    let mut v = serde_json::to_value(&rep)?;
    v["pass"] = json!(rep.pass());
    w.json("mixing.json", v)?;
    out.failed = !rep.pass();
    writeln!(out.summary, "mixing: inequality pass = {}, monotone pass = {}", rep.inequality_pass, rep.monotone_pass).ok();
    Ok(())
}

fn lln(problem: &Problem, cfg: &ExperimentConfig, w: &mut Writer, out: &mut Outcome) -> Result<()> {
    let phi: Observable = cfg.phi.as_deref().unwrap_or("capsq:100").parse()?;
    let mut opts = LlnOptions::new(
        cfg.eta_for(problem),
        cfg.steps.unwrap_or(100_000),
        cfg.replications.unwrap_or(16),
        cfg.seed,
    );
    opts.unsafe_eta = cfg.unsafe_eta;
    if let Some(c) = &cfg.checkpoints {
        opts.checkpoints = c.clone();
    }
    let rep = lln_check(problem, &InitLaw::point(cfg.x0_for(problem)?), phi, &opts)?;
    if cfg.format != Format::Json {
        let rows: Vec<Vec<f64>> = (0..rep.checkpoints.len())
            .map(|i| {
                vec![
                    rep.checkpoints[i] as f64,
                    rep.mean[i],
                    rep.mean_burned[i],
                    rep.spread[i],
                    rep.deviation[i],
                    rep.deviation_stderr[i],
                ]
            })
            .collect();
        w.csv("lln.csv", &["n", "mean", "mean_burned", "spread", "deviation", "deviation_stderr"], &rows)?;
    }
    let mut v = serde_json::to_value(&rep)?;
    if let Value::Object(map) = &mut v {
        map.remove("averages");
    }
    w.json("lln.json", v)?;
    out.failed = !rep.ui.pass || rep.growth_violations > 0;
    writeln!(
        out.summary,
        "lln: {} average at n = {} is {}",
        rep.observable,
        rep.horizon,
        rep.mean.last().unwrap()
    )
    .ok();
    Ok(())
}

fn tv(problem: &Problem, cfg: &ExperimentConfig, w: &mut Writer, out: &mut Outcome) -> Result<()> {
    let eta = cfg.eta_for(problem);
    check_step_size(problem, eta, cfg.unsafe_eta)?;
    let cps = cfg.checkpoints.clone().unwrap_or_else(|| vec![10, 100, 1000, 2000]);
    let reps = cfg.replications.unwrap_or(2000);
    let scan = tv_cauchy_scan(problem, &InitLaw::point(cfg.x0_for(problem)?), eta, &cps, reps, cfg.seed)?;
    if cfg.format != Format::Json {
        let mut rows = Vec::new();
        for i in 0..cps.len() {
            for j in 0..cps.len() {
                rows.push(vec![cps[i] as f64, cps[j] as f64, scan.matrix[i][j]]);
            }
        }
        w.csv("tv.csv", &["n_a", "n_b", "tv"], &rows)?;
    }
    w.json("tv.json", serde_json::to_value(&scan)?)?;
    out.failed = !scan.pass;
    writeln!(out.summary, "tv: successive = {:?}, control = {}, pass = {}", scan.successive(), scan.control, scan.pass).ok();
    Ok(())
}

fn verify(problem: &Problem, cfg: &ExperimentConfig, w: &mut Writer, out: &mut Outcome) -> Result<()> {
    let trials = cfg.minorization_trials.unwrap_or(10_000);
    let assumptions = problem.verify_assumptions(trials as usize, 10.0, cfg.seed)?;
    let eta = cfg.eta_for(problem);
    check_step_size(problem, eta, cfg.unsafe_eta)?;
    let base = derive_constants_unchecked(problem, eta, cfg.eps, 0.0)?;
    let b = match cfg.k_override {
        Some(k) => base.with_good_radius(problem, k, None)?,
        None => base,
    };
    let minor = verify_minorization(problem, &b, trials, cfg.seed)?;
    w.json(
        "verify.json",
        json!({
            "assumptions": assumptions,
            "assumptions_ok": assumptions.all_ok(),
            "minorization": minor,
            "K": b.good_x_radius,
            "log_beta": b.log_beta,
        }),
    )?;
    out.failed = !assumptions.all_ok() || !minor.pass;
    writeln!(
        out.summary,
        "assumptions ok = {}, minorization pass = {} (min ratio {}, worst case {})",
        assumptions.all_ok(),
        minor.pass,
        minor.min_density_ratio,
        minor.worst_case_ratio
    )
    .ok();
    if out.failed {
        return Err(Error::Minorization {
            ratio: minor.min_density_ratio.min(minor.worst_case_ratio),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_threads_and_output() {
        let a = ExperimentConfig {
            problem: Some(ProblemSpec::Builtin("lin-1d".into())),
            ..Default::default()
        };
        let b = ExperimentConfig {
            threads: Some(8),
            output_dir: "elsewhere".into(),
            ..a.clone()
        };
        let c = ExperimentConfig { seed: 1, ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn config_parses_inline_problem_and_rejects_unknown_keys() {
        let p = BuiltinProblem::Micro1d.problem().to_json().unwrap();
        let cfg = ExperimentConfig::from_json(&format!(r#"{{"problem": {p}, "eta": 0.1}}"#)).unwrap();
        assert_eq!(cfg.problem().unwrap(), BuiltinProblem::Micro1d.problem());
        assert!(ExperimentConfig::from_json(r#"{"etaa": 1}"#).is_err());
    }

    #[test]
    fn missing_problem_is_usage_error() {
        let err = run(Command::Constants, &ExperimentConfig::default()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
