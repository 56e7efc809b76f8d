//! Relative residuals of the three methods on one random test function.
//!
//! cargo run --release -p cptt --example compare_methods -- 8 30

use cptt::bench::{gen_random_function, RandomFunctionSpec, Regularity};
use cptt::{greedy_decompose, GreedyConfig, Method};

fn main() -> cptt::Result<()> {
    let mut args = std::env::args().skip(1);
    let d: usize = args.next().map_or(Ok(6), |s| s.parse()).expect("dimension");
    let rank: usize = args.next().map_or(Ok(20), |s| s.parse()).expect("rank");

    let spec = RandomFunctionSpec::new(d, Regularity::L2.beta(d), 0);
    let (f, meta) = gen_random_function(&spec)?;
    println!("d = {d}, {} terms, L = {:?}", meta.retained_terms, meta.l_values);

    for method in Method::ALL {
        let t = std::time::Instant::now();
        let (_, trace) = greedy_decompose(&f, &GreedyConfig::new(method, rank))?;
        println!(
            "{method:>5}: rank {:>3}  rel. residual {:.4e}  ({:.2} s)",
            trace.steps.len(),
            trace.final_rel_residual(),
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
