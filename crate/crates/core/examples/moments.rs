//! Second moments of the iterates against their a priori bound.

use sagald::model::BuiltinProblem;
use sagald::sampler::InitLaw;
use sagald::stats::track_moments;

fn main() -> sagald::Result<()> {
    let p = BuiltinProblem::Lin1d.problem();
    let m = track_moments(&p, &InitLaw::origin(1), 1.0 / 32.0, 1000, 200, 1, false)?;
    for n in [0, 10, 100, 1000] {
        println!("n = {n:>4}  E|X|^2 = {:.4}  max E|G|^2 = {:.4}", m.ex2[n], m.eg2_max[n]);
    }
    println!("bound {:.2}, violations {:?}", m.bound_x.unwrap(), m.x_violations());
    Ok(())
}
