//! Samples the Lipschitz, dissipativity and growth conditions of every built-in.

use sagald::model::BuiltinProblem;

fn main() -> sagald::Result<()> {
    for bp in BuiltinProblem::ALL {
        let r = bp.problem().verify_assumptions(10_000, 10.0, 7)?;
        println!(
            "{:<9} ok = {:<5} worst Lipschitz ratio {:.4}, dissipativity margin {:.4}, max |F_i(0)| {:.4}",
            bp.name(),
            r.all_ok(),
            r.worst_ratio,
            r.worst_margin,
            r.max_norm_at_zero
        );
    }
    Ok(())
}
