//! Histogram TV distances between marginals at increasing checkpoints.

use sagald::model::BuiltinProblem;
use sagald::sampler::InitLaw;
use sagald::stats::tv_cauchy_scan;

fn main() -> sagald::Result<()> {
    let p = BuiltinProblem::Lin1d.problem();
    let cps = [10, 100, 1000, 2000];
    let scan = tv_cauchy_scan(&p, &InitLaw::origin(1), 1.0 / 32.0, &cps, 5000, 2)?;
    for (w, tv) in cps.windows(2).zip(scan.successive()) {
        println!("TV({}, {}) = {tv:.4}", w[0], w[1]);
    }
    println!("control {:.4}, pass {}", scan.control, scan.pass);
    Ok(())
}
