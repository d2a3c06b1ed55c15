//! Runs one SAGA chain on the double-well problem and prints thinned snapshots.

use sagald::model::BuiltinProblem;
use sagald::sampler::{eta_max, run_chain, RunOptions};

fn main() -> sagald::Result<()> {
    let p = BuiltinProblem::Well2d.problem();
    let opts = RunOptions::new(eta_max(&p), 10_000, 42).stride(1000);
    let traj = run_chain(&p, &[0.0, 0.0], &opts)?;
    for s in &traj.snapshots {
        println!("step {:>6}  x = [{:+.4}, {:+.4}]", s.step, s.x[0], s.x[1]);
    }
    Ok(())
}
