use ldpnet::acceptance::random_kernel;
use ldpnet::ldp::{
    arc_count_law, exact_event_prob, exact_upper_tail_logprob, ldp_scan, log_chernoff_bound,
    mc_event_prob, EventSpec, ScanConfig, ScanMode,
};
use ldpnet::oracle::enumerate_arc_count_law;
use ldpnet::{ArcPartition, CircleArc, ConnectionKernel, SparsitySchedule};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn kernel(seed: u64) -> ConnectionKernel {
    random_kernel(&mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn self_loop_event_increases_toward_its_limit() {
    let schedule = SparsitySchedule::new(1.0, 0.5).unwrap();
    let grid: Vec<usize> = (1..=8).map(|e| 10usize.pow(e / 2) * if e % 2 == 0 { 1 } else { 3 }).collect();
    let cfg = ScanConfig {
        mode: ScanMode::Exact,
        grid_bins: 64,
        seed: 0,
    };
    let res = ldp_scan(&EventSpec::degree_count(0, 1), &ConnectionKernel::constant(1.0).unwrap(), &schedule, &grid, &cfg)
        .unwrap();
    for w in res.rows.windows(2) {
        assert!(w[1].normalized > w[0].normalized, "{:?}", res.rows);
        assert!(w[1].normalized < -1.0);
    }
}

#[test]
fn monte_carlo_independent_of_worker_count() {
    let arc = CircleArc::new(-1.0, 2.0).unwrap();
    let spec = EventSpec::arc_occupancy(3, vec![arc], vec![0.4]);
    let k = ConnectionKernel::cosine(1.0, 0.5).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| mc_event_prob(&spec, &k, 80, 0.2, 20_000, 5).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn wilson_intervals_cover_occupancy_probability() {
    let a1 = CircleArc::new(-0.8, 1.6).unwrap();
    let a2 = CircleArc::new(2.0, 1.5).unwrap();
    let spec = EventSpec::arc_occupancy(0, vec![a1, a2], vec![0.3, 0.2]);
    let k = ConnectionKernel::exp_cosine(1.0, 0.7).unwrap();
    let (n, rho) = (40, 0.25);
    let exact = exact_event_prob(&spec, &k, n, rho).unwrap();
    assert!(exact > 0.05 && exact < 0.95, "{exact}");
    // 200 repeats keep the chance of a false alarm below 0.1% at nominal
    // 95% coverage
    let covered = (0..200u64)
        .filter(|&s| mc_event_prob(&spec, &k, n, rho, 20_000, 100 + s).unwrap().covers(exact))
        .count();
    assert!(covered >= 180, "{covered}/200");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn count_laws_match_row_enumeration(
        seed: u64,
        n in 0usize..=6,
        rho in 0.05f64..0.5,
        target_frac in 0.0f64..1.0,
        arcs in 1usize..=4,
        start in -3.0f64..3.0,
    ) {
        let k = kernel(seed);
        let rho = rho.min(1.0 / k.upper_bound());
        let target = (target_frac * (2 * n + 1) as f64).floor() as i64 - n as i64;
        let part = ArcPartition::equal(arcs, start).unwrap();
        let dp = arc_count_law(&k, n, rho, target, &part).unwrap();
        let brute = enumerate_arc_count_law(&k, n, rho, target, &part).unwrap();
        prop_assert_eq!(dp.len(), brute.len());
        for (a, b) in dp.iter().zip(&brute) {
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for i in 0..a.len().max(b.len()) {
                let (x, y) = (a.get(i).copied().unwrap_or(0.0), b.get(i).copied().unwrap_or(0.0));
                prop_assert!((x - y).abs() <= 1e-13, "{:?} vs {:?}", a, b);
            }
        }
    }

    #[test]
    fn chernoff_dominates_exact_tail(
        seed: u64,
        n in 10usize..400,
        rho in 0.01f64..0.3,
        a in 0.05f64..3.0,
        m_thr in 0.1f64..5.0,
    ) {
        let k = kernel(seed);
        let rho = rho.min(1.0 / k.upper_bound());
        let bound = log_chernoff_bound(&k, n, rho, 0, a, m_thr).unwrap();
        let tail = exact_upper_tail_logprob(&k, n, rho, 0, m_thr).unwrap();
        prop_assert!(bound >= tail, "{bound} < {tail}");
    }

    #[test]
    fn chernoff_decreases_in_threshold(a in 0.05f64..3.0, m in 0.1f64..5.0, dm in 0.01f64..2.0) {
        let k = ConnectionKernel::constant(1.0).unwrap();
        let lo = log_chernoff_bound(&k, 100, 0.1, 0, a, m).unwrap();
        let hi = log_chernoff_bound(&k, 100, 0.1, 0, a, m + dm).unwrap();
        prop_assert!(hi < lo);
    }
}
