use ldpnet::graph::positions;
use ldpnet::ldp::{arc_count_law, CountLaw};
use ldpnet::{sample_graph, ArcPartition, ConnectionKernel};
use proptest::prelude::*;

fn piecewise() -> ConnectionKernel {
    ConnectionKernel::piecewise(
        ArcPartition::equal(3, 0.4).unwrap(),
        vec![vec![2.0, 0.5, 1.0], vec![0.5, 3.0, 0.2], vec![1.0, 0.2, 1.5]],
    )
    .unwrap()
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

#[test]
fn adjacency_independent_of_worker_count() {
    let k = piecewise();
    let one = in_pool(1, || sample_graph(&k, 300, 0.1, 77, false).unwrap());
    let four = in_pool(4, || sample_graph(&k, 300, 0.1, 77, false).unwrap());
    assert_eq!(one, four);
    assert_eq!(one.to_text(), four.to_text());
}

#[test]
fn degree_law_matches_exact_dp() {
    let k = piecewise();
    let (n, rho) = (40, 0.15);
    let target = 7i64;
    let idx = (target + n as i64) as usize;
    let law = &arc_count_law(&k, n, rho, target, &ArcPartition::whole()).unwrap()[0];
    let mut cdf = Vec::with_capacity(law.len());
    let mut acc = 0.0;
    for p in law {
        acc += p;
        cdf.push(acc);
    }
    let trials = 1000;
    let mut counts = vec![0usize; 2 * n + 2];
    for seed in 0..trials {
        let g = sample_graph(&k, n, rho, seed, false).unwrap();
        counts[g.degree(idx)] += 1;
    }
    let mut emp = 0.0;
    let mut ks: f64 = 0.0;
    for (d, c) in counts.iter().enumerate() {
        emp += *c as f64 / trials as f64;
        let exact = cdf.get(d).copied().unwrap_or(1.0);
        ks = ks.max((emp - exact).abs());
    }
    assert!(ks < 0.05, "KS distance {ks}");
}

#[test]
fn poisson_binomial_matches_binomial() {
    let law = CountLaw::poisson_binomial(&[0.3; 12], None).to_probabilities();
    let mut binom = 1.0;
    for (k, p) in law.iter().enumerate() {
        if k > 0 {
            binom *= (12 - k + 1) as f64 / k as f64;
        }
        let expect = binom * 0.3f64.powi(k as i32) * 0.7f64.powi(12 - k as i32);
        assert!((p - expect).abs() < 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn positions_do_not_depend_on_randomness(n in 0usize..200, seed: u64, rho in 0.01f64..0.3) {
        let g = sample_graph(&piecewise(), n, rho, seed, false).unwrap();
        prop_assert_eq!(g.positions(), &positions(n)[..]);
        g.check_invariants().unwrap();
    }

    #[test]
    fn same_seed_same_graph(n in 0usize..150, seed: u64) {
        let a = sample_graph(&piecewise(), n, 0.2, seed, false).unwrap();
        let b = sample_graph(&piecewise(), n, 0.2, seed, false).unwrap();
        prop_assert_eq!(a, b);
    }
}
