//! Ergodic averages of a capped square on the linear problem.

use sagald::model::BuiltinProblem;
use sagald::sampler::InitLaw;
use sagald::stats::{lln_check, LlnOptions, Observable};

fn main() -> sagald::Result<()> {
    let p = BuiltinProblem::Lin1d.problem();
    let phi: Observable = "capsq:100".parse()?;
    let opts = LlnOptions::new(1.0 / 32.0, 100_000, 16, 1).checkpoints(&[1000, 10_000, 100_000]);
    let rep = lln_check(&p, &InitLaw::origin(1), phi, &opts)?;
    for &n in &rep.checkpoints {
        println!(
            "n = {n:>6}  mean {:.4}  deviation {:.4}",
            rep.mean_at(n).unwrap(),
            rep.deviation_at(n).unwrap()
        );
    }
    Ok(())
}
