//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Runs without the libtest harness.

use std::time::{Duration, Instant};

use rand::Rng;

use sagald::coupling::{empirical_meet_prob, empirical_meet_prob_with, MeetReport};
use sagald::model::BuiltinProblem;
use sagald::noise::{StreamKey, StreamTag};
use sagald::randommap::{
    derive_constants, derive_constants_unchecked, iterate_z, verify_minorization, ConstantsBundle, CounterNoise,
};
use sagald::sampler::{init_chain, update_term, ChainState, GradientTable, InitLaw, SagaKernel, TransitionInput};
use sagald::stats::{
    ks_two_sample, lln_check, mixing_vs_coupling, track_moments, tv_cauchy_scan, LlnOptions, LlnReport, MomentSeries,
    Observable,
};
use sagald::Problem;

const SEED: u64 = 20_240_917;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: u32, name: &str, budget: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    let took = start.elapsed();
    let in_time = budget.is_none_or(|b| took <= b);
    let pass = out.pass && in_time;
    let budget_note = budget.map_or(String::new(), |b| format!(" (budget {:.0}s)", b.as_secs_f64()));
    println!(
        "{} criterion {id:>2} {name}: {} [{:.2}s{budget_note}]",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        took.as_secs_f64()
    );
    pass
}

/// Micro-scale coupling regime: η = 0.5 above the step cap, K = r = 0.2.
fn coupling_regime() -> (Problem, ConstantsBundle) {
    let p = BuiltinProblem::Micro1d.problem();
    let b = derive_constants_unchecked(&p, 0.5, 0.1, 1.0)
        .unwrap()
        .with_good_radius(&p, 0.2, None)
        .unwrap();
    (p, b)
}

fn c1_table_oracle() -> Outcome {
    let mut mismatches = 0u64;
    let mut checked = 0u64;
    for bp in BuiltinProblem::ALL {
        let p = bp.problem();
        let eta = sagald::sampler::eta_max(&p);
        let (d, n) = (p.dim(), p.count());
        for run in 0..100u64 {
            let mut rng = StreamKey::new(SEED, run, 0, StreamTag::Verify).rng();
            let x0: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut state = init_chain(&p, &x0).unwrap();
            let mut kernel = SagaKernel::new(&p, eta).unwrap();
            // brute force: the point at which each row was last refreshed
            let mut last_at: Vec<Vec<f64>> = vec![x0.clone(); n];
            let mut input = TransitionInput::new(vec![0.0; d], 0);
            for step in 1..=1000u64 {
                input.redraw(StreamKey::new(SEED, run, step, StreamTag::Transition), n);
                last_at[input.index] = state.x.clone();
                kernel.step(&mut state, &input).unwrap();
                for (i, at) in last_at.iter().enumerate() {
                    let want = p.component_eval(i, at).unwrap();
                    checked += 1;
                    if !sagald::linalg::bits_eq(state.table.row(i), &want) {
                        mismatches += 1;
                    }
                }
            }
        }
    }
    Outcome {
        pass: mismatches == 0,
        detail: format!("{mismatches} mismatches in {checked} row checks"),
    }
}

fn ulp(v: f64) -> f64 {
    let v = v.abs();
    f64::from_bits(v.to_bits() + 1) - v
}

fn c2_unbiasedness() -> Outcome {
    let mut worst: f64 = 0.0;
    for bp in [BuiltinProblem::Lin1d, BuiltinProblem::Well2d] {
        let p = bp.problem();
        let eta = sagald::sampler::eta_max(&p);
        let (d, n) = (p.dim(), p.count());
        for t in 0..1000u64 {
            let mut rng = StreamKey::new(SEED, t, 1, StreamTag::Verify).rng();
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect())
                .collect();
            let state = ChainState {
                x: x.clone(),
                table: GradientTable::from_rows(&rows).unwrap(),
                step: 0,
            };
            let terms: Vec<Vec<f64>> = (0..n).map(|s| update_term(&p, &state, s, eta).unwrap()).collect();
            let drift = p.mean_drift(&x).unwrap();
            for k in 0..d {
                let mean = terms.iter().map(|u| u[k]).sum::<f64>() / n as f64;
                let want = eta * drift[k];
                // cancellation: measure in ulps of the largest intermediate term
                let table_mean = rows.iter().map(|r| r[k]).sum::<f64>() / n as f64;
                let scale = (0..n)
                    .map(|s| p.component_eval(s, &x).unwrap()[k].abs().max(rows[s][k].abs()))
                    .fold(table_mean.abs(), f64::max)
                    * eta;
                worst = worst.max((mean - want).abs() / ulp(scale));
            }
        }
    }
    Outcome {
        pass: worst <= 2.0,
        detail: format!("max error {worst:.3} ulp of the largest term (tolerance 2)"),
    }
}

fn c3_moments() -> MomentSeries {
    let p = BuiltinProblem::Lin1d.problem();
    track_moments(&p, &InitLaw::origin(1), 1.0 / 32.0, 1000, 200, SEED, false).unwrap()
}

fn c4_minorization() -> Outcome {
    let p = BuiltinProblem::Micro1d.problem();
    let b = derive_constants_unchecked(&p, 0.5, 0.1, 0.0)
        .unwrap()
        .with_good_radius(&p, 0.1, Some(1.0))
        .unwrap();
    let rep = verify_minorization(&p, &b, 100_000, SEED).unwrap();
    let worst_ulps = (rep.worst_case_ratio - 1.0).abs() / f64::EPSILON;
    Outcome {
        pass: rep.pass && worst_ulps <= 4.0 && rep.min_density_ratio >= 1.0,
        detail: format!(
            "beta = {:.4}, worst-case ratio off by {worst_ulps:.1} ulp, min ratio over 1e5 samples {:.6}",
            b.beta(),
            rep.min_density_ratio
        ),
    }
}

fn c5_law_equivalence() -> Outcome {
    let p = BuiltinProblem::Micro1d.problem();
    let b = derive_constants_unchecked(&p, 0.5, 0.1, 0.0)
        .unwrap()
        .with_good_radius(&p, 0.1, Some(1.0))
        .unwrap();
    let s0 = init_chain(&p, &[0.05]).unwrap();
    let mut per_seed = Vec::new();
    let mut all_ok = true;
    for seed in 0..5u64 {
        let mut passes = 0;
        for horizon in [1u64, 10, 100] {
            let map: Vec<f64> = (0..2000u64)
                .map(|rep| {
                    let src = CounterNoise::new(SEED + seed, rep, p.count());
                    iterate_z(&p, 0, horizon, &s0, &src, &b).unwrap().x[0]
                })
                .collect();
            let direct: Vec<f64> = (0..2000u64)
                .map(|rep| {
                    let mut st = s0.clone();
                    let mut k = SagaKernel::new(&p, 0.5).unwrap();
                    let mut input = TransitionInput::new(vec![0.0], 0);
                    for n in 1..=horizon {
                        input.redraw(StreamKey::new(SEED + 100 + seed, rep, n, StreamTag::Transition), p.count());
                        k.step(&mut st, &input).unwrap();
                    }
                    st.x[0]
                })
                .collect();
            passes += ks_two_sample(&map, &direct).unwrap().pass as u32;
        }
        all_ok &= passes >= 2;
        per_seed.push(passes);
    }
    Outcome {
        pass: all_ok,
        detail: format!("KS passes per seed (of 3 horizons): {per_seed:?}"),
    }
}

fn c6_block_event() -> Outcome {
    let (p, b) = coupling_regime();
    let a = InitLaw::point(vec![0.05]);
    let c = InitLaw::point(vec![-0.05]);
    let forced = empirical_meet_prob_with(&p, &b, &a, &c, 20, 2000, SEED, Some(0.5)).unwrap();
    let natural = empirical_meet_prob(&p, &b, &InitLaw::point(vec![1.0]), &InitLaw::point(vec![-1.0]), 100, 1000, SEED)
        .unwrap();
    let blocks = forced.blocks_simulated + natural.blocks_simulated;
    let events = forced.sweep_events + natural.sweep_events;
    let violations = forced.sweep_violations + natural.sweep_violations;
    Outcome {
        pass: blocks >= 10_000 && violations == 0 && forced.sweep_events > 0,
        detail: format!(
            "{blocks} blocks, {events} block events ({} natural), {violations} not followed by equality",
            natural.sweep_events
        ),
    }
}

fn c7_meet() -> MeetReport {
    let (p, b) = coupling_regime();
    empirical_meet_prob(&p, &b, &InitLaw::point(vec![1.0]), &InitLaw::point(vec![-1.0]), 100, 10_000, SEED).unwrap()
}

fn c7_outcome(rep: &MeetReport) -> Outcome {
    let rec = rep.check_recursion();
    let monotone = rep.rows.windows(2).all(|w| w[1].p_hat >= w[0].p_hat);
    Outcome {
        pass: rec.pass && monotone && rec.checked > 0,
        detail: format!(
            "beta = {:.4} (K = r = 0.2), {} rows checked, {} violations, worst margin {:.3e}, p_hat(k=100) = {:.4}",
            rep.log_beta.exp(),
            rec.checked,
            rec.violations,
            rec.worst_margin,
            rep.rows.last().unwrap().p_hat
        ),
    }
}

fn c8_mixing() -> Outcome {
    let (p, b) = coupling_regime();
    let rep = mixing_vs_coupling(&p, &b, &InitLaw::origin(1), 1000, &[100, 1000, 10_000, 100_000], 2000, SEED).unwrap();
    let cells: Vec<String> = (0..rep.lags.len())
        .map(|i| format!("lag {}: {:.4} <= {:.4}+3*{:.4}", rep.lags[i], rep.alpha_hat[i], rep.coupling_bound[i], rep.combined_stderr[i]))
        .collect();
    Outcome {
        pass: rep.pass(),
        detail: format!("{}; monotone {}", cells.join(", "), rep.monotone_pass),
    }
}

fn c9_tv() -> Outcome {
    let p = BuiltinProblem::Lin1d.problem();
    let scan = tv_cauchy_scan(&p, &InitLaw::origin(1), 1.0 / 32.0, &[10, 100, 1000, 2000], 10_000, SEED).unwrap();
    let early = scan.matrix[0][1];
    let late = scan.matrix[2][3];
    Outcome {
        pass: late < early && scan.control <= 0.05,
        detail: format!("TV(10,100) = {early:.4}, TV(1000,2000) = {late:.4}, control = {:.4}", scan.control),
    }
}

fn c10_runs() -> (LlnReport, LlnReport) {
    let p = BuiltinProblem::Lin1d.problem();
    let run = |seed| {
        let opts = LlnOptions::new(1.0 / 32.0, 1_000_000, 64, seed).checkpoints(&[10_000, 20_000, 100_000, 200_000]);
        lln_check(&p, &InitLaw::origin(1), Observable::CappedSquare(100.0), &opts).unwrap()
    };
    (run(SEED), run(SEED + 1))
}

fn c10_outcome(a: &LlnReport, b: &LlnReport) -> Outcome {
    let m = a.mean_at(1_000_000).unwrap();
    let near = (m - 2.0 / 3.0).abs() <= 0.1;
    let agree = a.agrees_with(b);
    let shrink = a.contracts(10_000) == Some(true) && a.contracts(100_000) == Some(true);
    Outcome {
        pass: near && agree && shrink,
        detail: format!(
            "average {m:.4} vs 2/3, seeds {:.4}/{:.4} (3se sum {:.4}), deviation {:.4}->{:.4}, {:.4}->{:.4}",
            a.mean_at(1_000_000).unwrap(),
            b.mean_at(1_000_000).unwrap(),
            3.0 * (a.mean_stderr.last().unwrap() + b.mean_stderr.last().unwrap()),
            a.deviation_at(10_000).unwrap(),
            a.deviation_at(20_000).unwrap(),
            a.deviation_at(100_000).unwrap(),
            a.deviation_at(200_000).unwrap()
        ),
    }
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

fn main() {
    // sanity: the library's own constants path agrees with the regime used here
    assert!(derive_constants(&BuiltinProblem::Lin1d.problem(), 1.0 / 32.0, 0.1, 0.0).is_ok());
    let secs = Duration::from_secs;
    let mut ok = true;
    ok &= report(1, "gradient-table oracle", Some(secs(5)), c1_table_oracle);
    ok &= report(2, "unbiased update", Some(secs(1)), c2_unbiasedness);
    let mut moments = None;
    ok &= report(3, "moment bounds", Some(secs(10)), || {
        let m = c3_moments();
        let out = Outcome {
            pass: m.pass() == Some(true),
            detail: format!(
                "sup E|X|^2 = {:.4} <= {:.2}, x violations {:?}, g violations {:?}",
                m.l_hat.last().unwrap(),
                m.bound_x.unwrap(),
                m.x_violations(),
                m.g_violations()
            ),
        };
        moments = Some(m);
        out
    });
    ok &= report(4, "minorization", Some(secs(5)), c4_minorization);
    ok &= report(5, "law equivalence", Some(secs(30)), c5_law_equivalence);
    ok &= report(6, "block event forces meeting", Some(secs(60)), c6_block_event);
    let mut meet = None;
    ok &= report(7, "coupling recursion", Some(secs(300)), || {
        let r = c7_meet();
        let out = c7_outcome(&r);
        meet = Some(r);
        out
    });
    ok &= report(8, "mixing vs coupling", Some(secs(300)), c8_mixing);
    ok &= report(9, "TV Cauchy", Some(secs(120)), c9_tv);
    let mut lln = None;
    ok &= report(10, "LLN", Some(secs(120)), || {
        let (a, b) = c10_runs();
        let out = c10_outcome(&a, &b);
        lln = Some(a);
        out
    });
    ok &= report(11, "thread-count reproducibility", None, || {
        let bytes = |threads: usize| {
            in_pool(threads, || {
                let m = serde_json::to_vec(&c3_moments()).unwrap();
                let c = serde_json::to_vec(&c7_meet()).unwrap();
                let l = serde_json::to_vec(&c10_runs()).unwrap();
                (m, c, l)
            })
        };
        let one = bytes(1);
        let eight = bytes(8);
        let same = [one.0 == eight.0, one.1 == eight.1, one.2 == eight.2];
        // and against the default-pool runs above
        let default_same = moments.as_ref().map(|m| serde_json::to_vec(m).unwrap()) == Some(one.0.clone())
            && meet.as_ref().map(|m| serde_json::to_vec(m).unwrap()) == Some(one.1.clone());
        Outcome {
            pass: same.iter().all(|s| *s) && default_same,
            detail: format!(
                "1 vs 8 threads identical for criteria 3/7/10: {same:?}; matches default pool: {default_same}"
            ),
        }
    });
    let _ = lln;
    if !ok {
        println!("acceptance: FAILED");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
