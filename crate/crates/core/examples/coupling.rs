//! Meeting probabilities of two map chains started at +1 and -1.

use sagald::coupling::empirical_meet_prob;
use sagald::model::BuiltinProblem;
use sagald::randommap::derive_constants_unchecked;
use sagald::sampler::InitLaw;

fn main() -> sagald::Result<()> {
    let p = BuiltinProblem::Micro1d.problem();
    let b = derive_constants_unchecked(&p, 0.5, 0.1, 1.0)?.with_good_radius(&p, 0.2, None)?;
    let rep = empirical_meet_prob(&p, &b, &InitLaw::point(vec![1.0]), &InitLaw::point(vec![-1.0]), 60, 2000, 9)?;
    for row in rep.rows.iter().step_by(10) {
        println!("k = {:>3}  p_hat = {:.4} +- {:.4}", row.k, row.p_hat, row.stderr);
    }
    let rec = rep.check_recursion();
    println!("recursion: {} rows checked, {} violations", rec.checked, rec.violations);
    println!("median meeting step {:?}", rep.meet_quantiles(&[0.5])[0]);
    Ok(())
}
