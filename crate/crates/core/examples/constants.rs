//! Derived constants for each built-in problem at the largest safe step.

use sagald::coupling::n_zero;
use sagald::model::BuiltinProblem;
use sagald::randommap::derive_constants;
use sagald::sampler::eta_max;

fn main() -> sagald::Result<()> {
    for bp in BuiltinProblem::ALL {
        let p = bp.problem();
        let eta = eta_max(&p);
        let b = derive_constants(&p, eta, 0.1, 0.0)?;
        println!("{}: eta = {eta}", bp.name());
        println!("  C_check = {:.6e}, C_hat = {:.6e}", b.c_check, b.c_hat);
        println!("  K = {:.4}, ln beta = {:.6e}", b.k_eps, b.log_beta);
        println!("  n0 = {:?}", n_zero(b.log_beta, p.count(), 0.1)?);
    }
    Ok(())
}
