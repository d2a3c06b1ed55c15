//! Checks `q(y) >= beta * nu(y)` on the regeneration ball for a small good set.

use sagald::model::BuiltinProblem;
use sagald::randommap::{derive_constants_unchecked, verify_minorization};

fn main() -> sagald::Result<()> {
    let p = BuiltinProblem::Micro1d.problem();
    let b = derive_constants_unchecked(&p, 0.5, 0.1, 0.0)?.with_good_radius(&p, 0.1, Some(1.0))?;
    let rep = verify_minorization(&p, &b, 100_000, 3)?;
    println!("beta = {:.6}", b.beta());
    println!("min sampled ratio q/(beta nu) = {:.6}", rep.min_density_ratio);
    println!("analytic worst case = {:.16}", rep.worst_case_ratio);
    println!("pass = {}", rep.pass);
    Ok(())
}
