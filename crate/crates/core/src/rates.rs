//! Explicit rate functions on grid densities.
//!
//! All circle integrals `(1/2π)∫ · dθ` are midpoint means over one shared
//! grid, so the node rate, the positive-measure rate and the log moment
//! generating function see the same discretization.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circle::{
    circle_mean, compensated_sum, validate_density, xlog_ratio, CircleArc, CircleDensity, ConnectionKernel, Grid,
    GridFunction, MassDensity,
};
use crate::error::{Error, Result};
use crate::rng::{substream, Domain};

/// Floor used for `h* = log(γ/C)` on bins where `γ = 0`.
pub const H_FLOOR: f64 = 1e-300;

/// Largest exponent accepted by [`lmgf`] before `e^h` overflows.
pub const MAX_EXPONENT: f64 = 709.0;

/// Starts used by [`arc_event_rate`].
pub const ARC_STARTS: usize = 20;

const NORMALIZATION_TOL: f64 = 1e-10;
const DESCENT_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateValue {
    pub value: f64,
    /// `c̄(α)`
    pub mass_term: f64,
    /// `e^{−R}`; zero for the no-density branch.
    pub exponential_term: f64,
    pub degenerate: bool,
}

/// Input of the node rate: a density, or the tagged no-density case.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeMeasure {
    Density(CircleDensity),
    Singular,
}

fn check_len(values: &[f64], grid: &Grid) -> Result<()> {
    if values.len() != grid.bins() {
        return Err(Error::DimensionMismatch {
            expected: grid.bins(),
            got: values.len(),
        });
    }
    Ok(())
}

fn require_nonnegative(diag: &crate::circle::DensityDiagnostics) -> Result<()> {
    if let Some(&first) = diag.negative_bins.first() {
        return Err(Error::NegativeDensity {
            first,
            count: diag.negative_bins.len(),
        });
    }
    Ok(())
}

fn validated_probability(zeta: &CircleDensity, grid: &Grid) -> Result<()> {
    check_len(zeta.values(), grid)?;
    let diag = validate_density(zeta)?;
    require_nonnegative(&diag)?;
    let err = diag.normalization_error.unwrap_or(0.0);
    if err > NORMALIZATION_TOL {
        return Err(Error::NotNormalized { mean: 1.0 + err });
    }
    Ok(())
}

fn validated_mass(gamma: &MassDensity, grid: &Grid) -> Result<()> {
    check_len(gamma.values(), grid)?;
    require_nonnegative(&validate_density(gamma)?)
}

/// `R = (1/2π)∫ ζ log(ζ/C) dθ` with `0·log 0 = 0`.
pub fn relative_entropy_term(row: &[f64], zeta: &[f64]) -> f64 {
    compensated_sum(zeta.iter().zip(row).map(|(&z, &c)| xlog_ratio(z, c))) / zeta.len() as f64
}

/// `I_α(μ) = c̄(α) − exp(−R)`, or `c̄(α)` without a density.
pub fn rate_node(
    kernel: &ConnectionKernel,
    alpha: f64,
    mu: &NodeMeasure,
    grid: &Grid,
) -> Result<RateValue> {
    kernel.require_positive()?;
    let row = kernel.row(alpha, grid);
    let mass_term = circle_mean(&row)?;
    match mu {
        NodeMeasure::Singular => Ok(RateValue {
            value: mass_term,
            mass_term,
            exponential_term: 0.0,
            degenerate: true,
        }),
        NodeMeasure::Density(zeta) => {
            validated_probability(zeta, grid)?;
            let r = relative_entropy_term(&row, zeta.values());
            let exponential_term = (-r).exp();
            Ok(RateValue {
                value: mass_term - exponential_term,
                mass_term,
                exponential_term,
                degenerate: false,
            })
        }
    }
}

/// Weighted population of node measures at positions `θ_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationMeasure {
    atoms: Vec<(f64, NodeMeasure, f64)>,
}

impl PopulationMeasure {
    pub fn new(atoms: Vec<(f64, NodeMeasure, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidArgument("empty population".into()));
        }
        if let Some(a) = atoms.iter().find(|a| !(a.2 > 0.0 && a.2.is_finite())) {
            return Err(Error::InvalidArgument(format!("population weight {}", a.2)));
        }
        let mass: f64 = atoms.iter().map(|a| a.2).sum();
        if (mass - 1.0).abs() > 1e-12 {
            return Err(Error::NotProbability { mass });
        }
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &[(f64, NodeMeasure, f64)] {
        &self.atoms
    }
}

/// `Ĩ(μ) = E^μ[I_θ]`
pub fn rate_population(kernel: &ConnectionKernel, pm: &PopulationMeasure, grid: &Grid) -> Result<f64> {
    let mut total = 0.0;
    for (theta, mu, w) in &pm.atoms {
        total += w * rate_node(kernel, *theta, mu, grid)?.value;
    }
    Ok(total)
}

/// `Ĩ_α(ν) = (1/2π)∫ {γ log(γ/C) − γ + C} dθ`
pub fn rate_plus(kernel: &ConnectionKernel, alpha: f64, gamma: &MassDensity, grid: &Grid) -> Result<f64> {
    kernel.require_positive()?;
    validated_mass(gamma, grid)?;
    let row = kernel.row(alpha, grid);
    Ok(rate_plus_row(&row, gamma.values()))
}

fn rate_plus_row(row: &[f64], gamma: &[f64]) -> f64 {
    compensated_sum(
        gamma
            .iter()
            .zip(row)
            .map(|(&g, &c)| xlog_ratio(g, c) - g + c),
    ) / gamma.len() as f64
}

/// `Λ̃(α, h) = (1/2π)∫ C(α, β)(e^{h(β)} − 1) dβ`
pub fn lmgf(kernel: &ConnectionKernel, alpha: f64, h: &GridFunction, grid: &Grid) -> Result<f64> {
    check_len(h.values(), grid)?;
    let max_h = h.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max_h > MAX_EXPONENT {
        return Err(Error::LmgfOverflow { max_h });
    }
    let row = kernel.row(alpha, grid);
    circle_mean(
        &row.iter()
            .zip(h.values())
            .map(|(&c, &x)| c * x.exp_m1())
            .collect::<Vec<_>>(),
    )
}

/// `(1/2π)∫ γ h dθ − Λ̃(α, h)`, a lower bound on [`rate_plus`] for every `h`.
pub fn legendre_gap(
    kernel: &ConnectionKernel,
    alpha: f64,
    gamma: &MassDensity,
    h: &GridFunction,
    grid: &Grid,
) -> Result<f64> {
    validated_mass(gamma, grid)?;
    let pairing = circle_mean(
        &gamma
            .values()
            .iter()
            .zip(h.values())
            .map(|(g, x)| g * x)
            .collect::<Vec<_>>(),
    )?;
    Ok(pairing - lmgf(kernel, alpha, h, grid)?)
}

/// Maximizer `h* = log(γ/C)` of the Legendre pairing, floored on `γ = 0`.
pub fn optimal_h(
    kernel: &ConnectionKernel,
    alpha: f64,
    gamma: &MassDensity,
    grid: &Grid,
) -> Result<GridFunction> {
    validated_mass(gamma, grid)?;
    let row = kernel.row(alpha, grid);
    GridFunction::new(
        gamma
            .values()
            .iter()
            .zip(&row)
            .map(|(&g, &c)| (g.max(H_FLOOR) / c).ln())
            .collect(),
    )
}

/// `Γ(a) = Ĩ_α(a·ζ)`
pub fn scale_rate(
    kernel: &ConnectionKernel,
    alpha: f64,
    zeta: &CircleDensity,
    a: f64,
    grid: &Grid,
) -> Result<f64> {
    rate_plus(kernel, alpha, &zeta.scaled(a), grid)
}

/// Closed-form minimizer `a* = exp((1/2π)∫ ζ log(C/ζ))` of `Γ` and `Γ(a*)`.
pub fn optimal_scale(
    kernel: &ConnectionKernel,
    alpha: f64,
    zeta: &CircleDensity,
    grid: &Grid,
) -> Result<(f64, f64)> {
    kernel.require_positive()?;
    validated_probability(zeta, grid)?;
    let row = kernel.row(alpha, grid);
    let a = (-relative_entropy_term(&row, zeta.values())).exp();
    Ok((a, scale_rate(kernel, alpha, zeta, a, grid)?))
}

/// Minimized node rate over an arc-occupancy event.
#[derive(Debug, Clone, PartialEq)]
pub struct ArcEventSolution {
    pub value: f64,
    pub density: CircleDensity,
    /// Best value reached from each start.
    pub start_values: Vec<f64>,
}

/// `inf { I_α(ζ) : (1/2π)∫_{F_i} ζ ≥ λ_i }` over grid densities.
///
/// `I_α` is increasing in `R`, which is a relative entropy of the bin masses,
/// so the search runs exponentiated-gradient steps on the bin masses and
/// projects by rescaling: arcs below their threshold are scaled up to it and
/// the remaining bins are scaled to restore unit mass.
pub fn arc_event_rate(
    kernel: &ConnectionKernel,
    alpha: f64,
    arcs: &[CircleArc],
    thresholds: &[f64],
    grid: &Grid,
    seed: u64,
) -> Result<ArcEventSolution> {
    kernel.require_positive()?;
    if arcs.len() != thresholds.len() {
        return Err(Error::DimensionMismatch {
            expected: arcs.len(),
            got: thresholds.len(),
        });
    }
    if let Some(&l) = thresholds.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(Error::InvalidArgument(format!("threshold {l}")));
    }
    let sum: f64 = thresholds.iter().sum();
    if sum >= 1.0 {
        return Err(Error::InfeasibleThresholds { sum });
    }
    for (i, a) in arcs.iter().enumerate() {
        if arcs[i + 1..].iter().any(|b| a.overlaps(b)) {
            return Err(Error::InvalidArgument("event arcs overlap".into()));
        }
    }
    let m = grid.bins();
    let mut class = vec![usize::MAX; m];
    for (i, a) in arcs.iter().enumerate() {
        for b in a.bins(grid) {
            if class[b] == usize::MAX {
                class[b] = i;
            }
        }
    }
    if let Some(i) = (0..arcs.len()).find(|&i| thresholds[i] > 0.0 && !class.contains(&i)) {
        return Err(Error::InvalidArgument(format!("arc {i} contains no grid bins")));
    }
    if !class.contains(&usize::MAX) && arcs.is_empty() {
        unreachable!("an empty arc list leaves every bin free");
    }

    let row = kernel.row(alpha, grid);
    let c_bar = circle_mean(&row)?;
    let problem = Problem {
        row: &row,
        class: &class,
        thresholds,
    };
    let runs: Vec<(f64, Vec<f64>)> = (0..ARC_STARTS)
        .into_par_iter()
        .map(|s| {
            let mut rng = substream(seed, Domain::Multistart, s as u64);
            let start: Vec<f64> = (0..m).map(|_| 0.05 + rng.random::<f64>()).collect();
            problem.descend(start)
        })
        .collect::<Result<_>>()?;
    let start_values: Vec<f64> = runs.iter().map(|r| c_bar - (-r.0).exp()).collect();
    let best = runs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .expect("at least one start");
    let q = &runs[best].1;
    let density = CircleDensity::from_values(q.iter().map(|x| x * m as f64).collect());
    Ok(ArcEventSolution {
        value: start_values[best],
        density,
        start_values,
    })
}

struct Problem<'a> {
    row: &'a [f64],
    class: &'a [usize],
    thresholds: &'a [f64],
}

impl Problem<'_> {
    /// `R` as a function of the bin masses `q` (Σq = 1).
    fn objective(&self, q: &[f64]) -> f64 {
        let m = q.len() as f64;
        q.iter()
            .zip(self.row)
            .map(|(&x, &c)| xlog_ratio(m * x, c) / m)
            .sum()
    }

    fn project(&self, q: &mut [f64]) -> Result<()> {
        let k = self.thresholds.len();
        let mut pinned = vec![false; k];
        for _ in 0..=k {
            let mut class_mass = vec![0.0; k];
            let mut free_mass = 0.0;
            for (x, &c) in q.iter().zip(self.class) {
                if c != usize::MAX {
                    class_mass[c] += x;
                }
                if c == usize::MAX || !pinned[c] {
                    free_mass += x;
                }
            }
            let target_pinned: f64 = (0..k).filter(|&i| pinned[i]).map(|i| self.thresholds[i]).sum();
            let free_target = 1.0 - target_pinned;
            if !(free_mass > 0.0) {
                return Err(Error::InfeasibleThresholds { sum: target_pinned });
            }
            let free_scale = free_target / free_mass;
            for (x, &c) in q.iter_mut().zip(self.class) {
                if c != usize::MAX && pinned[c] {
                    if class_mass[c] > 0.0 {
                        *x *= self.thresholds[c] / class_mass[c];
                    }
                } else {
                    *x *= free_scale;
                }
            }
            // Arcs that were scaled below their threshold get pinned too.
            let mut changed = false;
            let mut after = vec![0.0; k];
            for (x, &c) in q.iter().zip(self.class) {
                if c != usize::MAX {
                    after[c] += x;
                }
            }
            for i in 0..k {
                if !pinned[i] && after[i] < self.thresholds[i] * (1.0 - 1e-15) {
                    pinned[i] = true;
                    changed = true;
                }
            }
            if !changed {
                return Ok(());
            }
        }
        Ok(())
    }

    fn descend(&self, mut q: Vec<f64>) -> Result<(f64, Vec<f64>)> {
        let total: f64 = q.iter().sum();
        q.iter_mut().for_each(|x| *x /= total);
        self.project(&mut q)?;
        let m = q.len() as f64;
        let mut value = self.objective(&q);
        let mut eta = 1.0;
        let mut trial = vec![0.0; q.len()];
        for _ in 0..DESCENT_ITERATIONS {
            let mut accepted = false;
            while eta > 1e-12 {
                for ((t, &x), &c) in trial.iter_mut().zip(&q).zip(self.row) {
                    // gradient of R in q is log(m·q/C) + 1; the constant drops
                    // out after renormalization
                    *t = if x > 0.0 { x * (-(eta * (m * x / c).ln())).exp() } else { 0.0 };
                }
                let s: f64 = trial.iter().sum();
                trial.iter_mut().for_each(|x| *x /= s);
                self.project(&mut trial)?;
                let v = self.objective(&trial);
                if v <= value {
                    let improvement = value - v;
                    std::mem::swap(&mut q, &mut trial);
                    value = v;
                    accepted = true;
                    if improvement <= 1e-15 * value.abs().max(1.0) {
                        return Ok((value, q));
                    }
                    break;
                }
                eta *= 0.5;
            }
            if !accepted {
                break;
            }
            eta = (eta * 2.0).min(1.0);
        }
        Ok((value, q))
    }
}

/// `c·(1 − e^{−KL(λ‖p)})` for a constant kernel and a single arc of
/// normalized length `p`; zero when `λ ≤ p`.
pub fn constant_kernel_arc_rate(c: f64, p: f64, lambda: f64) -> f64 {
    if lambda <= p {
        return 0.0;
    }
    let kl = xlog_ratio(lambda, p) + xlog_ratio(1.0 - lambda, 1.0 - p);
    -c * (-kl).exp_m1()
}

/// One CSV row of rate evaluations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub alpha: f64,
    pub kernel_id: String,
    pub value: f64,
    pub mass_term: f64,
    pub exponential_term: f64,
    pub a_star: Option<f64>,
}

pub const RATE_CSV_HEADER: &str = "alpha,kernel_id,value,mass_term,exponential_term,a_star";

/// Quotes a CSV field when it contains a separator, quote or newline.
pub fn csv_field(s: &str) -> std::borrow::Cow<'_, str> {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\"")).into()
    } else {
        s.into()
    }
}

pub fn write_rate_csv<W: Write>(mut w: W, rows: &[RateRow]) -> Result<()> {
    writeln!(w, "{RATE_CSV_HEADER}")?;
    for r in rows {
        let a = r.a_star.map_or_else(String::new, |a| a.to_string());
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.alpha,
            csv_field(&r.kernel_id),
            r.value,
            r.mass_term,
            r.exponential_term,
            a
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circle::ArcPartition;
    use std::f64::consts::PI;

    fn grid() -> Grid {
        Grid::new(512).unwrap()
    }

    #[test]
    fn constant_kernel_uniform_density_is_minimizer() {
        let g = grid();
        let k = ConnectionKernel::constant(2.5).unwrap();
        let r = rate_node(&k, 0.3, &NodeMeasure::Density(CircleDensity::uniform(&g)), &g).unwrap();
        assert!(r.value.abs() < 1e-14, "{r:?}");
        assert!((r.exponential_term - 2.5).abs() < 1e-14);
    }

    #[test]
    fn kernel_shaped_density_is_minimizer() {
        let g = grid();
        let k = ConnectionKernel::exp_cosine(0.7, 1.2).unwrap();
        let zeta = CircleDensity::normalized(k.row(0.4, &g)).unwrap();
        let r = rate_node(&k, 0.4, &NodeMeasure::Density(zeta), &g).unwrap();
        assert!(r.value.abs() < 1e-10);
    }

    #[test]
    fn singular_branch_returns_mass() {
        let g = grid();
        let k = ConnectionKernel::constant(2.0).unwrap();
        let r = rate_node(&k, 0.0, &NodeMeasure::Singular, &g).unwrap();
        assert_eq!(r.value, 2.0);
        assert!(r.degenerate);
    }

    #[test]
    fn negative_density_rejected() {
        let g = Grid::new(4).unwrap();
        let k = ConnectionKernel::constant(1.0).unwrap();
        let z = CircleDensity::from_values(vec![2.0, -0.5, 1.5, 1.0]);
        assert_eq!(
            rate_node(&k, 0.0, &NodeMeasure::Density(z), &g),
            Err(Error::NegativeDensity { first: 1, count: 1 })
        );
    }

    #[test]
    fn population_is_weighted_average() {
        let g = grid();
        let k = ConnectionKernel::cosine(1.0, 0.5).unwrap();
        let z1 = CircleDensity::normalized(g.sample(|t| 1.0 + 0.9 * t.sin())).unwrap();
        let r1 = rate_node(&k, 0.2, &NodeMeasure::Density(z1.clone()), &g).unwrap().value;
        let r2 = rate_node(&k, -1.0, &NodeMeasure::Singular, &g).unwrap().value;
        let pm = PopulationMeasure::new(vec![
            (0.2, NodeMeasure::Density(z1.clone()), 0.5),
            (-1.0, NodeMeasure::Singular, 0.5),
        ])
        .unwrap();
        assert_eq!(rate_population(&k, &pm, &g).unwrap(), 0.5 * r1 + 0.5 * r2);
        let single = PopulationMeasure::new(vec![(0.2, NodeMeasure::Density(z1), 1.0)]).unwrap();
        assert_eq!(rate_population(&k, &single, &g).unwrap(), r1);
    }

    #[test]
    fn rate_plus_examples() {
        let g = grid();
        let k = ConnectionKernel::constant(1.0).unwrap();
        let c = MassDensity::from_values(k.row(0.0, &g));
        assert_eq!(rate_plus(&k, 0.0, &c, &g).unwrap(), 0.0);
        let k3 = ConnectionKernel::constant(3.0).unwrap();
        let zero = MassDensity::from_values(vec![0.0; g.bins()]);
        assert!((rate_plus(&k3, 0.0, &zero, &g).unwrap() - 3.0).abs() < 1e-14);
        let two = MassDensity::from_values(vec![2.0; g.bins()]);
        let expect = 2.0 * 2f64.ln() - 1.0;
        assert!((rate_plus(&k, 0.0, &two, &g).unwrap() - expect).abs() < 1e-10);
    }

    #[test]
    fn lmgf_examples() {
        let g = grid();
        let k = ConnectionKernel::constant(1.7).unwrap();
        let zero = GridFunction::constant(&g, 0.0).unwrap();
        assert_eq!(lmgf(&k, 0.0, &zero, &g).unwrap(), 0.0);
        let log2 = GridFunction::constant(&g, 2f64.ln()).unwrap();
        let v = lmgf(&k, 0.0, &log2, &g).unwrap();
        assert!((v - 1.7).abs() < 1e-14, "{v}");
        let huge = GridFunction::constant(&g, 800.0).unwrap();
        assert_eq!(
            lmgf(&k, 0.0, &huge, &g),
            Err(Error::LmgfOverflow { max_h: 800.0 })
        );
    }

    #[test]
    fn legendre_examples() {
        let g = grid();
        let k = ConnectionKernel::constant(1.0).unwrap();
        let two = MassDensity::from_values(vec![2.0; g.bins()]);
        let zero_h = GridFunction::constant(&g, 0.0).unwrap();
        assert_eq!(legendre_gap(&k, 0.0, &two, &zero_h, &g).unwrap(), 0.0);
        let h = optimal_h(&k, 0.0, &two, &g).unwrap();
        let expect = 2.0 * 2f64.ln() - 1.0;
        assert!((legendre_gap(&k, 0.0, &two, &h, &g).unwrap() - expect).abs() < 1e-10);
        let c = MassDensity::from_values(k.row(0.0, &g));
        let h = optimal_h(&k, 0.0, &c, &g).unwrap();
        assert!(h.values().iter().all(|&x| x == 0.0));
        assert_eq!(legendre_gap(&k, 0.0, &c, &h, &g).unwrap(), 0.0);
    }

    #[test]
    fn legendre_pairing_with_zero_bins() {
        let g = grid();
        let k = ConnectionKernel::cosine(1.0, 0.6).unwrap();
        let gamma = MassDensity::from_values(g.sample(|t| if t > 0.0 { 1.0 + t } else { 0.0 }));
        let h = optimal_h(&k, 0.5, &gamma, &g).unwrap();
        let gap = legendre_gap(&k, 0.5, &gamma, &h, &g).unwrap();
        let rate = rate_plus(&k, 0.5, &gamma, &g).unwrap();
        assert!((gap - rate).abs() < 1e-8);
    }

    #[test]
    fn optimal_scale_examples() {
        let g = grid();
        let k = ConnectionKernel::constant(1.9).unwrap();
        let (a, v) = optimal_scale(&k, 0.0, &CircleDensity::uniform(&g), &g).unwrap();
        assert!((a - 1.9).abs() < 1e-14, "{a}");
        assert!(v.abs() < 1e-14);
        let k = ConnectionKernel::cosine(2.0, 1.0).unwrap();
        let zeta = CircleDensity::normalized(k.row(1.0, &g)).unwrap();
        let c_bar = crate::circle::kernel_mass(&k, 1.0, &g).unwrap();
        let (a, _) = optimal_scale(&k, 1.0, &zeta, &g).unwrap();
        assert!((a - c_bar).abs() < 1e-12);
    }

    #[test]
    fn scaled_rate_equals_node_rate() {
        let g = grid();
        let k = ConnectionKernel::exp_cosine(1.0, 0.8).unwrap();
        let zeta = CircleDensity::normalized(g.sample(|t| 2.0 + (3.0 * t).cos())).unwrap();
        let (_, gamma_star) = optimal_scale(&k, -0.7, &zeta, &g).unwrap();
        let r = rate_node(&k, -0.7, &NodeMeasure::Density(zeta), &g).unwrap();
        assert!((gamma_star - r.value).abs() < 1e-10);
    }

    #[test]
    fn arc_event_typical_threshold_is_free() {
        let g = grid();
        let k = ConnectionKernel::constant(1.5).unwrap();
        let arc = CircleArc::new(-PI / 4.0, PI / 2.0).unwrap();
        let s = arc_event_rate(&k, 0.0, &[arc], &[0.25], &g, 1).unwrap();
        assert!(s.value.abs() < 1e-12, "{}", s.value);
        let s = arc_event_rate(&k, 0.0, &[arc], &[0.0], &g, 1).unwrap();
        assert!(s.value.abs() < 1e-12);
    }

    #[test]
    fn arc_event_matches_closed_form() {
        let g = grid();
        let k = ConnectionKernel::constant(1.0).unwrap();
        let arc = CircleArc::new(-PI / 4.0, PI / 2.0).unwrap();
        let s = arc_event_rate(&k, 0.0, &[arc], &[0.5], &g, 7).unwrap();
        let expect = constant_kernel_arc_rate(1.0, 0.25, 0.5);
        assert!((s.value - expect).abs() < 1e-3, "{} vs {expect}", s.value);
        assert_eq!(s.start_values.len(), ARC_STARTS);
    }

    #[test]
    fn arc_event_infeasible() {
        let g = grid();
        let k = ConnectionKernel::constant(1.0).unwrap();
        let p = ArcPartition::equal(2, 0.0).unwrap();
        assert_eq!(
            arc_event_rate(&k, 0.0, &[p.arc(0), p.arc(1)], &[0.6, 0.4], &g, 0).map(|s| s.value),
            Err(Error::InfeasibleThresholds { sum: 1.0 })
        );
    }

    #[test]
    fn piecewise_rate_constant_within_arc() {
        let g = grid();
        let arcs = ArcPartition::equal(2, -PI / 2.0).unwrap();
        let k = ConnectionKernel::piecewise(arcs, vec![vec![1.0, 2.0], vec![0.5, 3.0]]).unwrap();
        let zeta = CircleDensity::normalized(g.sample(|t| 1.5 + t.sin())).unwrap();
        let mu = NodeMeasure::Density(zeta);
        let a = rate_node(&k, 0.1, &mu, &g).unwrap().value;
        let b = rate_node(&k, 1.2, &mu, &g).unwrap().value;
        assert_eq!(a, b);
    }

    #[test]
    fn csv_rows() {
        let mut buf = Vec::new();
        write_rate_csv(
            &mut buf,
            &[RateRow {
                alpha: 0.5,
                kernel_id: "constant(1)".into(),
                value: 0.0,
                mass_term: 1.0,
                exponential_term: 1.0,
                a_star: Some(1.0),
            }],
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), RATE_CSV_HEADER);
        assert_eq!(text.lines().nth(1).unwrap(), "0.5,constant(1),0,1,1,1");
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("q\"x"), "\"q\"\"x\"");
    }
}
