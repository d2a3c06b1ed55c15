//! Empirical alpha-mixing coefficient next to twice the non-meeting probability.

use sagald::model::BuiltinProblem;
use sagald::randommap::derive_constants_unchecked;
use sagald::sampler::InitLaw;
use sagald::stats::mixing_vs_coupling;

fn main() -> sagald::Result<()> {
    let p = BuiltinProblem::Micro1d.problem();
    let b = derive_constants_unchecked(&p, 0.5, 0.1, 1.0)?.with_good_radius(&p, 0.2, None)?;
    let rep = mixing_vs_coupling(&p, &b, &InitLaw::origin(1), 200, &[10, 100, 1000], 2000, 4)?;
    for i in 0..rep.lags.len() {
        println!(
            "lag {:>5}  alpha_hat {:.4}  bound {:.4}  stderr {:.4}",
            rep.lags[i], rep.alpha_hat[i], rep.coupling_bound[i], rep.combined_stderr[i]
        );
    }
    println!("pass = {}", rep.pass());
    Ok(())
}
