//! Drives the random-map chain and tallies which branch each step took.

use sagald::model::BuiltinProblem;
use sagald::randommap::{derive_constants_unchecked, Branch, CounterNoise, MapKernel, NoiseRecord, NoiseSource};
use sagald::sampler::init_chain;

fn main() -> sagald::Result<()> {
    let p = BuiltinProblem::Micro1d.problem();
    let b = derive_constants_unchecked(&p, 0.5, 0.1, 1.0)?.with_good_radius(&p, 0.2, None)?;
    let noise = CounterNoise::new(5, 0, p.count());
    let mut kernel = MapKernel::new(&p, &b)?;
    let mut state = init_chain(&p, &[1.0])?;
    let mut rec = NoiseRecord::zeroed(1);
    let mut tally = [0u64; 3];
    for n in 1..=100_000 {
        noise.fill(n, &mut rec);
        let i = match kernel.step(&mut state, &rec)? {
            Branch::Regenerated => 0,
            Branch::Residual => 1,
            Branch::Gaussian => 2,
        };
        tally[i] += 1;
    }
    println!("beta = {:.4}", b.beta());
    println!("regenerated {}, residual {}, outside good set {}", tally[0], tally[1], tally[2]);
    Ok(())
}
