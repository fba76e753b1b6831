use ldpnet::measures::build_nested_from_adjacency;
use ldpnet::pushforward::{euler_ladder, factorization_check, psi_m, sample_approximant};
use ldpnet::{
    build_nested, path_empirical, path_wasserstein, sample_graph, simulate, ConnectionKernel,
    Coupling, Drift, InitialCondition, Lift, Scheme, VectorFieldPair,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fields(d: usize) -> VectorFieldPair {
    VectorFieldPair::new(
        d,
        Drift::Tanh {
            gain: 1.0,
            scale: 0.5,
        },
        Coupling::Sine { strength: 1.2 },
    )
}

fn random_init(nodes: usize, d: usize, seed: u64) -> InitialCondition {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states = (0..nodes * d).map(|_| rng.random_range(-1.5..1.5)).collect();
    InitialCondition::new(d, states, None).unwrap()
}

#[test]
fn euler_ladder_decreases_at_first_order() {
    let k = ConnectionKernel::exp_cosine(1.0, 0.5).unwrap();
    let nu = sample_approximant(&k, 40, 0.2, 8, &Lift::Embedding { radius: 1.0 }).unwrap();
    let ladder = [4, 8, 16, 32, 64];
    let report = euler_ladder(&nu, &fields(2), 1.0, &ladder, 4096).unwrap();
    for w in report.gaps.windows(2) {
        assert!(w[1] < w[0], "gaps {:?}", report.gaps);
    }
    let slope = report.fitted_slope.unwrap();
    assert!(slope <= -0.9, "slope {slope}");
}

#[test]
fn psi_equals_simulation_then_empirical_measure() {
    let k = ConnectionKernel::cosine(1.0, 0.9).unwrap();
    let g = sample_graph(&k, 25, 0.3, 2, false).unwrap();
    let init = random_init(g.size(), 2, 3);
    let nu = build_nested(&g, &init).unwrap();
    for m in [1, 2, 3, 17] {
        let a = psi_m(&nu, &fields(2), 1.5, m).unwrap();
        let b = path_empirical(&simulate(&g, &init, &fields(2), 1.5, m, Scheme::Euler).unwrap());
        assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn psi_is_label_invariant(n in 1usize..12, seed: u64, shift in 1usize..30) {
        let k = ConnectionKernel::cosine(1.0, 0.5).unwrap();
        let g = sample_graph(&k, n, 0.4, seed, false).unwrap();
        let size = g.size();
        let init = random_init(size, 2, seed);
        let perm: Vec<usize> = (0..size).map(|i| (i + shift) % size).collect();
        let mut inv = vec![0; size];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let adj: Vec<Vec<u32>> = perm
            .iter()
            .map(|&old| g.neighbors(old).iter().map(|&k| inv[k as usize] as u32).collect())
            .collect();
        let a = psi_m(&build_nested(&g, &init).unwrap(), &fields(2), 1.0, 10).unwrap();
        let nu = build_nested_from_adjacency(&adj, &init.permuted(&perm), None).unwrap();
        let b = psi_m(&nu, &fields(2), 1.0, 10).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn tree_recursion_reproduces_direct_euler(
        n in 1usize..10,
        seed: u64,
        steps in 1usize..=3,
        d in 1usize..=2,
    ) {
        let k = ConnectionKernel::exp_cosine(0.6, 1.0).unwrap();
        let g = sample_graph(&k, n, 0.3, seed, false).unwrap();
        let init = random_init(g.size(), d, seed ^ 7);
        let report = factorization_check(&g, &init, &fields(d), 1.0, steps).unwrap();
        prop_assert!(report.gap <= 1e-9, "gap {}", report.gap);
    }

    #[test]
    fn path_atoms_respect_a_priori_bound(n in 1usize..20, seed: u64, m in 1usize..40) {
        let k = ConnectionKernel::constant(1.0).unwrap();
        let g = sample_graph(&k, n, 0.3, seed, false).unwrap();
        let init = random_init(g.size(), 2, seed);
        let f = fields(2);
        let paths = psi_m(&build_nested(&g, &init).unwrap(), &f, 2.0, m).unwrap();
        let times = paths.times().to_vec();
        for i in 0..paths.len() {
            let path = paths.path(i);
            for (s, t) in times.iter().enumerate() {
                let norm = path[2 * s].hypot(path[2 * s + 1]);
                prop_assert!(norm <= init.c_ini() + t * f.speed_bound() + 1e-9);
            }
        }
        prop_assert!(path_wasserstein(&paths, &paths).unwrap() == 0.0);
    }
}
