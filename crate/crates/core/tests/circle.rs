use std::f64::consts::PI;

use ldpnet::oracle::circle_quadrature;
use ldpnet::pushforward::loglog_slope;
use ldpnet::{circle_mean, kernel_mass, ArcPartition, ConnectionKernel, Grid};
use proptest::prelude::*;

/// `I₀(x)` from its power series.
fn bessel_i0(x: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..60 {
        term *= (x / 2.0).powi(2) / (k * k) as f64;
        sum += term;
    }
    sum
}

#[test]
fn square_matches_fine_quadrature() {
    let grid = Grid::new(4096).unwrap();
    let coarse = circle_mean(&grid.sample(|t| t * t)).unwrap();
    let fine = circle_quadrature(|t| t * t, 1 << 20);
    assert!((coarse - fine).abs() < 1e-4);
    assert!((fine - PI * PI / 3.0).abs() < 1e-10);
}

#[test]
fn exp_cosine_mass_is_bessel() {
    let grid = Grid::new(4096).unwrap();
    let k = ConnectionKernel::exp_cosine(1.0, 1.0).unwrap();
    let mass = kernel_mass(&k, 0.7, &grid).unwrap();
    let fine = circle_quadrature(|t| (t - 0.7).cos().exp(), 1 << 20);
    assert!((mass - fine).abs() < 1e-12);
    assert!((mass - bessel_i0(1.0)).abs() < 1e-12);
}

#[test]
fn quadrature_error_decays_like_one_over_m() {
    // Lipschitz with a kink, so the error is not spectrally small
    let f = |t: f64| (t - 0.3).abs();
    let exact = circle_quadrature(f, 1 << 22);
    let ms: Vec<usize> = (8..=14).map(|e| 1usize << e).collect();
    let errs: Vec<f64> = ms
        .iter()
        .map(|&m| (circle_mean(&Grid::new(m).unwrap().sample(f)).unwrap() - exact).abs())
        .collect();
    let slope = loglog_slope(&ms, &errs).unwrap();
    assert!(slope <= -0.9, "slope {slope}, errors {errs:?}");
}

#[test]
fn piecewise_mass_constant_within_arcs() {
    let arcs = ArcPartition::new(vec![-2.0, 0.5, 2.0]).unwrap();
    let k = ConnectionKernel::piecewise(
        arcs.clone(),
        vec![vec![1.0, 0.2, 0.5], vec![0.3, 2.0, 0.1], vec![0.7, 0.7, 1.5]],
    )
    .unwrap();
    let grid = Grid::new(2048).unwrap();
    for i in 0..arcs.len() {
        let arc = arcs.arc(i);
        let masses: Vec<f64> = (1..10)
            .map(|s| kernel_mass(&k, arc.start + arc.length * s as f64 / 10.0, &grid).unwrap())
            .collect();
        for m in &masses {
            assert_eq!(*m, masses[0]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn circle_mean_is_linear(
        f in prop::collection::vec(-10.0f64..10.0, 1..300),
        a in -5.0f64..5.0,
        b in -5.0f64..5.0,
        shift in 0usize..1000,
    ) {
        let g: Vec<f64> = f.iter().enumerate().map(|(i, x)| (x * (i + shift) as f64).sin()).collect();
        let combo: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + b * y).collect();
        let lhs = circle_mean(&combo).unwrap();
        let rhs = a * circle_mean(&f).unwrap() + b * circle_mean(&g).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn cosine_mass_is_base(base in 0.1f64..5.0, frac in -1.0f64..1.0, alpha in -PI..PI) {
        let k = ConnectionKernel::cosine(base, base * frac).unwrap();
        let m = kernel_mass(&k, alpha, &Grid::new(512).unwrap()).unwrap();
        prop_assert!((m - base).abs() < 1e-12);
    }
}
