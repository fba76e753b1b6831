//! Built-in acceptance suite: ten numerical criteria, each checked against an
//! independent oracle at a fixed tolerance and runtime budget.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::circle::{
    ArcPartition, CircleArc, CircleDensity, ConnectionKernel, Grid, GridFunction,
    MassDensity,
};
use crate::dynamics::{
    integrate, Coupling, Drift, InitialCondition, Lift, Scheme, VectorFieldPair,
};
use crate::error::{Error, Result};
use crate::graph::{positions, sample_graph, SparsitySchedule};
use crate::ldp::{
    exact_event_prob, exact_upper_tail_logprob, ldp_scan, log_chernoff_bound, mc_event_prob,
    EventSpec, ScanConfig, ScanMode,
};
use crate::measures::{nested_wasserstein, wasserstein, AtomMeasure, DepthMeasure, Network};
use crate::oracle::{
    brute_force_nested, brute_force_wasserstein, golden_section, quantile_wasserstein_1d,
};
use crate::pushforward::factorization_check;
use crate::rates::{
    arc_event_rate, constant_kernel_arc_rate, legendre_gap, optimal_h, optimal_scale, rate_node,
    rate_plus, scale_rate, NodeMeasure,
};
use crate::rng::{substream, Domain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcceptanceConfig {
    /// Quadrature bins `M`.
    pub grid_bins: usize,
    pub seed: u64,
    pub mc_trials: u64,
    pub mc_repeats: usize,
    /// Count a criterion as failed when it exceeds its runtime budget.
    pub enforce_budgets: bool,
}

impl Default for AcceptanceConfig {
    fn default() -> Self {
        Self {
            grid_bins: crate::circle::DEFAULT_BINS,
            seed: 20_240_611,
            mc_trials: 100_000,
            mc_repeats: 20,
            enforce_budgets: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Criterion {
    pub id: u8,
    pub name: &'static str,
    pub budget_s: f64,
}

pub const CRITERIA: [Criterion; 10] = [
    Criterion { id: 1, name: "rate-minimizer", budget_s: 1.0 },
    Criterion { id: 2, name: "scalar-duality", budget_s: 5.0 },
    Criterion { id: 3, name: "legendre-pairing", budget_s: 10.0 },
    Criterion { id: 4, name: "degree-tail-scaling", budget_s: 1.0 },
    Criterion { id: 5, name: "chernoff-domination", budget_s: 5.0 },
    Criterion { id: 6, name: "euler-order", budget_s: 30.0 },
    Criterion { id: 7, name: "psi-factorization", budget_s: 30.0 },
    Criterion { id: 8, name: "mc-oracle-agreement", budget_s: 60.0 },
    Criterion { id: 9, name: "arc-event-closed-form", budget_s: 30.0 },
    Criterion { id: 10, name: "ot-metric-brute-force", budget_s: 30.0 },
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionOutcome {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    /// Human-readable comparison, naming the tolerance.
    pub detail: String,
    pub elapsed_s: f64,
    pub budget_s: f64,
}

impl fmt::Display for CriterionOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {:>2} {:<22} {}  {} ({:.3} s, budget {} s)",
            self.id,
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.detail,
            self.elapsed_s,
            self.budget_s
        )
    }
}

struct Check {
    ok: bool,
    detail: String,
}

impl Check {
    fn new(ok: bool, detail: String) -> Self {
        Self { ok, detail }
    }
}

pub fn criterion(id: u8) -> Option<Criterion> {
    CRITERIA.iter().copied().find(|c| c.id == id)
}

/// Runs one criterion. Errors inside the check count as failures.
pub fn run_criterion(id: u8, cfg: &AcceptanceConfig) -> Result<CriterionOutcome> {
    let c = criterion(id).ok_or_else(|| Error::InvalidArgument(format!("no criterion {id}")))?;
    let start = Instant::now();
    let check = match id {
        1 => rate_minimizer(cfg),
        2 => scalar_duality(cfg),
        3 => legendre_pairing(cfg),
        4 => degree_tail_scaling(cfg),
        5 => chernoff_domination(cfg),
        6 => euler_order(cfg),
        7 => psi_factorization(cfg),
        8 => mc_oracle_agreement(cfg),
        9 => arc_event_closed_form(cfg),
        _ => ot_metric_brute_force(cfg),
    };
    let elapsed_s = start.elapsed().as_secs_f64();
    let (mut passed, mut detail) = match check {
        Ok(ch) => (ch.ok, ch.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    if cfg.enforce_budgets && elapsed_s > c.budget_s {
        passed = false;
        detail.push_str("; runtime budget exceeded");
    }
    Ok(CriterionOutcome {
        id,
        name: c.name,
        passed,
        detail,
        elapsed_s,
        budget_s: c.budget_s,
    })
}

fn vs(ok: bool) -> &'static str {
    if ok {
        "<="
    } else {
        ">"
    }
}

pub fn run_all(cfg: &AcceptanceConfig) -> Vec<CriterionOutcome> {
    CRITERIA
        .iter()
        .map(|c| run_criterion(c.id, cfg).expect("known id"))
        .collect()
}

fn instance_rng(cfg: &AcceptanceConfig, criterion: u8, i: u64) -> ChaCha8Rng {
    substream(cfg.seed, Domain::Instances, (criterion as u64) << 32 | i)
}

/// Random strictly positive kernel from one of the built-in families.
pub fn random_kernel<R: Rng>(rng: &mut R) -> ConnectionKernel {
    match rng.random_range(0..3) {
        0 => {
            let base = rng.random_range(0.5..2.0);
            ConnectionKernel::cosine(base, base * rng.random_range(-0.9..0.9)).unwrap()
        }
        1 => ConnectionKernel::exp_cosine(rng.random_range(0.3..2.0), rng.random_range(-2.0..2.0))
            .unwrap(),
        _ => {
            let q = rng.random_range(2..5);
            let arcs = ArcPartition::equal(q, rng.random_range(-PI..PI)).unwrap();
            let values = (0..q)
                .map(|_| (0..q).map(|_| rng.random_range(0.2..2.0)).collect())
                .collect();
            ConnectionKernel::piecewise(arcs, values).unwrap()
        }
    }
}

/// Random smooth positive grid function `exp(Σ a_k cos(kθ + φ_k))`.
fn random_profile<R: Rng>(rng: &mut R, grid: &Grid, amplitude: f64) -> Vec<f64> {
    let modes: Vec<(f64, f64)> = (1..=4)
        .map(|_| (rng.random_range(-amplitude..amplitude), rng.random_range(-PI..PI)))
        .collect();
    grid.sample(|t| {
        modes
            .iter()
            .enumerate()
            .map(|(k, (a, p))| a * ((k + 1) as f64 * t + p).cos() / (k + 1) as f64)
            .sum::<f64>()
            .exp()
    })
}

fn rate_minimizer(cfg: &AcceptanceConfig) -> Result<Check> {
    let grid = Grid::new(cfg.grid_bins)?;
    let mut worst: f64 = 0.0;
    for i in 0..5 {
        let mut rng = instance_rng(cfg, 1, i);
        let kernel = random_kernel(&mut rng);
        let alpha = rng.random_range(-PI..PI);
        let zeta = CircleDensity::normalized(kernel.row(alpha, &grid))?;
        let v = rate_node(&kernel, alpha, &NodeMeasure::Density(zeta), &grid)?.value;
        worst = worst.max(v.abs());
    }
    Ok(Check::new(
        worst <= 1e-10,
        format!("max |I(zeta*)| = {worst:.3e} {} tol_rate_zero 1e-10", vs(worst <= 1e-10)),
    ))
}

fn scalar_duality(cfg: &AcceptanceConfig) -> Result<Check> {
    let grid = Grid::new(cfg.grid_bins)?;
    let (mut worst_a, mut worst_v): (f64, f64) = (0.0, 0.0);
    for i in 0..20 {
        let mut rng = instance_rng(cfg, 2, i);
        let kernel = random_kernel(&mut rng);
        let alpha = rng.random_range(-PI..PI);
        let zeta = CircleDensity::normalized(random_profile(&mut rng, &grid, 2.0))?;
        let (a_star, gamma_star) = optimal_scale(&kernel, alpha, &zeta, &grid)?;
        let hi = 2.0 * kernel.upper_bound() + 1.0;
        let (a_gs, _) = golden_section(
            |a| scale_rate(&kernel, alpha, &zeta, a, &grid).unwrap_or(f64::INFINITY),
            0.0,
            hi,
            1e-10,
        );
        let node = rate_node(&kernel, alpha, &NodeMeasure::Density(zeta), &grid)?.value;
        worst_a = worst_a.max((a_gs - a_star).abs());
        worst_v = worst_v.max((gamma_star - node).abs());
    }
    Ok(Check::new(
        worst_a <= 1e-6 && worst_v <= 1e-10,
        format!(
            "max |a_gs - a*| = {worst_a:.3e} {} tol_argmin 1e-6; \
             max |Gamma(a*) - I| = {worst_v:.3e} {} tol_value 1e-10",
            vs(worst_a <= 1e-6),
            vs(worst_v <= 1e-10)
        ),
    ))
}

fn legendre_pairing(cfg: &AcceptanceConfig) -> Result<Check> {
    let grid = Grid::new(cfg.grid_bins)?;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut worst_eq: f64 = 0.0;
    for i in 0..1000 {
        let mut rng = instance_rng(cfg, 3, i);
        let kernel = random_kernel(&mut rng);
        let alpha = rng.random_range(-PI..PI);
        let scale = rng.random_range(0.1..3.0);
        let gamma =
            MassDensity::from_values(random_profile(&mut rng, &grid, 2.0).iter().map(|g| g * scale).collect());
        let h = GridFunction::new(random_profile(&mut rng, &grid, 1.5).iter().map(|x| x.ln()).collect())?;
        let plus = rate_plus(&kernel, alpha, &gamma, &grid)?;
        let gap = legendre_gap(&kernel, alpha, &gamma, &h, &grid)?;
        worst_excess = worst_excess.max(gap - plus);
        let h_star = optimal_h(&kernel, alpha, &gamma, &grid)?;
        let at_star = legendre_gap(&kernel, alpha, &gamma, &h_star, &grid)?;
        worst_eq = worst_eq.max((at_star - plus).abs());
    }
    Ok(Check::new(
        worst_excess <= 1e-10 && worst_eq <= 1e-8,
        format!(
            "max (gap - rate) = {worst_excess:.3e} {} tol_bound 1e-10; \
             max |gap(h*) - rate| = {worst_eq:.3e} {} tol_equality 1e-8",
            vs(worst_excess <= 1e-10),
            vs(worst_eq <= 1e-8)
        ),
    ))
}

fn degree_tail_scaling(_cfg: &AcceptanceConfig) -> Result<Check> {
    let kernel = ConnectionKernel::constant(1.0)?;
    let schedule = SparsitySchedule::new(1.0, 0.5)?;
    let scan_cfg = ScanConfig {
        mode: ScanMode::Exact,
        grid_bins: 64,
        seed: 0,
    };
    let res = ldp_scan(
        &EventSpec::degree_count(0, 1),
        &kernel,
        &schedule,
        &[100, 1000, 10_000],
        &scan_cfg,
    )?;
    let last = res.rows.last().unwrap();
    let dist = (last.normalized + 1.0).abs();
    let gaps: Vec<String> = res.rows.iter().map(|r| format!("{:.4}", r.gap.abs())).collect();
    let monotone = res.gaps_decreasing();
    Ok(Check::new(
        dist <= 0.01 && monotone,
        format!(
            "|normalized(1e4) + 1| = {dist:.4} {} tol_limit 0.01; |gap| = [{}] strictly decreasing: {monotone}",
            vs(dist <= 0.01),
            gaps.join(", ")
        ),
    ))
}

fn chernoff_domination(_cfg: &AcceptanceConfig) -> Result<Check> {
    let kernel = ConnectionKernel::constant(1.0)?;
    let (n, rho) = (1000, 0.1);
    let mut violations = 0;
    let mut min_margin = f64::INFINITY;
    for a in [0.25, 0.5, 1.0, 1.5, 2.0] {
        for m in [0.5, 1.0, 2.0, 3.0, 4.0] {
            let bound = log_chernoff_bound(&kernel, n, rho, 0, a, m)?;
            let tail = exact_upper_tail_logprob(&kernel, n, rho, 0, m)?;
            if bound < tail {
                violations += 1;
            }
            if tail.is_finite() {
                min_margin = min_margin.min(bound - tail);
            }
        }
    }
    Ok(Check::new(
        violations == 0,
        format!("{violations}/25 grid points with bound < exact tail; min log(bound/tail) = {min_margin:.4}"),
    ))
}

fn euler_order(cfg: &AcceptanceConfig) -> Result<Check> {
    let n = 200;
    let kernel = ConnectionKernel::cosine(1.0, 0.5)?;
    let g = sample_graph(&kernel, n, 0.05, cfg.seed, false)?;
    let init = InitialCondition::from_lift(&Lift::Embedding { radius: 1.0 }, &positions(n), None)?;
    let fields = VectorFieldPair::new(
        2,
        Drift::Tanh {
            gain: 1.0,
            scale: 0.5,
        },
        Coupling::Sine { strength: 1.0 },
    );
    let ladder = [8usize, 16, 32, 64, 128, 256];
    // at least 10^4 steps, and a multiple of every ladder entry
    const REFERENCE_STEPS: usize = 40 * 256;
    let reference = integrate(
        g.adjacency(),
        &init,
        &fields,
        1.0,
        REFERENCE_STEPS,
        Scheme::Rk4,
    )?;
    let mut errors = Vec::with_capacity(ladder.len());
    for &m in &ladder {
        let euler = integrate(g.adjacency(), &init, &fields, 1.0, m, Scheme::Euler)?;
        errors.push(euler.sup_distance(&reference)?);
    }
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
    let ok = ratios.iter().all(|r| (1.7..=2.3).contains(r));
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.3}")).collect();
    Ok(Check::new(
        ok,
        format!(
            "error ratios per doubling [{}] {} tol_ratio [1.7, 2.3]",
            shown.join(", "),
            if ok { "within" } else { "outside" }
        ),
    ))
}

fn psi_factorization(cfg: &AcceptanceConfig) -> Result<Check> {
    let mut worst: f64 = 0.0;
    let mut largest_tree = 0;
    for i in 0..10 {
        let mut rng = instance_rng(cfg, 7, i);
        let kernel = random_kernel(&mut rng);
        let n = rng.random_range(2..=12);
        let rho = (rng.random_range(0.1..0.6) / kernel.upper_bound()).min(0.9 / kernel.upper_bound());
        let g = sample_graph(&kernel, n, rho, rng.random(), false)?;
        let d = rng.random_range(1..=2);
        let states = (0..g.size() * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let init = InitialCondition::new(d, states, None)?;
        let fields = VectorFieldPair::new(
            d,
            Drift::Tanh {
                gain: 1.0,
                scale: 0.7,
            },
            Coupling::Sine { strength: 1.3 },
        );
        let steps = 1 + (i as usize % 3);
        let report = factorization_check(&g, &init, &fields, 1.0, steps)?;
        worst = worst.max(report.gap);
        largest_tree = largest_tree.max(report.tree_nodes);
    }
    Ok(Check::new(
        worst <= 1e-9,
        format!(
            "max path-W(direct, tree) = {worst:.3e} {} tol_factorization 1e-9 (largest tree {largest_tree} nodes)",
            vs(worst <= 1e-9)
        ),
    ))
}

fn mc_oracle_agreement(cfg: &AcceptanceConfig) -> Result<Check> {
    let kernel = ConnectionKernel::constant(1.0)?;
    let (n, rho) = (100, 0.1);
    let spec = EventSpec::degree_mass(0, 1.0);
    let exact = exact_event_prob(&spec, &kernel, n, rho)?;
    let mut covered = 0;
    for s in 0..cfg.mc_repeats as u64 {
        let seed = cfg.seed.wrapping_add(s.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        if mc_event_prob(&spec, &kernel, n, rho, cfg.mc_trials, seed)?.covers(exact) {
            covered += 1;
        }
    }
    let need = (cfg.mc_repeats * 9).div_ceil(10);
    Ok(Check::new(
        covered >= need,
        format!(
            "Wilson 95% intervals cover P = {exact:.6} in {covered}/{} repeats; need >= {need}",
            cfg.mc_repeats
        ),
    ))
}

fn arc_event_closed_form(cfg: &AcceptanceConfig) -> Result<Check> {
    let grid = Grid::new(cfg.grid_bins)?;
    let c = 1.0;
    let kernel = ConnectionKernel::constant(c)?;
    let arc = CircleArc::new(-PI / 4.0, PI / 2.0)?;
    let (p, lambda) = (0.25, 0.5);
    let numeric = arc_event_rate(&kernel, 0.0, &[arc], &[lambda], &grid, cfg.seed)?.value;
    let closed = constant_kernel_arc_rate(c, p, lambda);
    let diff = (numeric - closed).abs();
    Ok(Check::new(
        diff <= 1e-3,
        format!(
            "|numeric {numeric:.6} - closed form {closed:.6}| = {diff:.3e} {} tol_arc 1e-3 (M = {})",
            vs(diff <= 1e-3),
            cfg.grid_bins
        ),
    ))
}

fn random_atoms<R: Rng>(rng: &mut R, dim: usize, len: usize, uniform: bool) -> Result<AtomMeasure> {
    let points = (0..dim * len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let weights = random_weights(rng, len, uniform);
    AtomMeasure::new(dim, points, weights)
}

fn random_weights<R: Rng>(rng: &mut R, len: usize, uniform: bool) -> Vec<f64> {
    if uniform {
        return vec![1.0 / len as f64; len];
    }
    let raw: Vec<f64> = (0..len).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|w| w / s).collect()
}

/// Random network where every node and the root list have the same number
/// of entries, so every coupling problem stays within enumeration reach.
fn random_depth_measure<R: Rng>(
    rng: &mut R,
    dim: usize,
    depth: usize,
    k: usize,
    uniform: bool,
) -> Result<DepthMeasure> {
    let nodes = 8;
    let states = (0..nodes * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let children = (0..nodes)
        .map(|_| {
            let w = random_weights(rng, k, uniform);
            (0..k).map(|i| (rng.random_range(0..nodes as u32), w[i])).collect()
        })
        .collect();
    let network = Arc::new(Network::new(dim, states, children)?);
    let w = random_weights(rng, k, uniform);
    let roots = (0..k).map(|i| (rng.random_range(0..nodes as u32), w[i])).collect();
    DepthMeasure::new(network, roots, depth)
}

fn ot_metric_brute_force(cfg: &AcceptanceConfig) -> Result<Check> {
    const TOL: f64 = 1e-9;
    let mut worst_oracle: f64 = 0.0;
    let mut axiom_failures = Vec::new();
    for i in 0..100u64 {
        let mut rng = instance_rng(cfg, 10, i);
        let dim = rng.random_range(1..=3);
        let uniform = i % 2 == 0;
        let (d, oracle): (Box<dyn Fn(usize, usize) -> Result<f64>>, Vec<f64>) = if i % 4 < 2 {
            let k = rng.random_range(1..=6);
            let ms: Vec<AtomMeasure> = (0..3)
                .map(|_| {
                    let len = if uniform { k } else { rng.random_range(1..=4) };
                    random_atoms(&mut rng, dim, len, uniform)
                })
                .collect::<Result<_>>()?;
            let mut oracle = Vec::new();
            for (a, b) in [(0, 1), (1, 2), (0, 2)] {
                let exact = wasserstein(&ms[a], &ms[b])?;
                oracle.push((exact - brute_force_wasserstein(&ms[a], &ms[b])?).abs());
                if dim == 1 {
                    oracle.push((exact - quantile_wasserstein_1d(&ms[a], &ms[b])?).abs());
                }
            }
            (Box::new(move |a, b| wasserstein(&ms[a], &ms[b])), oracle)
        } else {
            let depth = rng.random_range(1..=2);
            let k = rng.random_range(1..=6);
            let ms: Vec<DepthMeasure> = (0..3)
                .map(|_| {
                    let k = if uniform { k } else { rng.random_range(2..=4) };
                    random_depth_measure(&mut rng, dim, depth, k, uniform)
                })
                .collect::<Result<_>>()?;
            let mut oracle = Vec::new();
            for (a, b) in [(0, 1), (1, 2), (0, 2)] {
                let exact = nested_wasserstein(&ms[a], &ms[b], depth)?;
                let brute = brute_force_nested(&ms[a].expand()?, &ms[b].expand()?)?;
                oracle.push((exact - brute).abs());
            }
            (Box::new(move |a, b| nested_wasserstein(&ms[a], &ms[b], depth)), oracle)
        };
        worst_oracle = oracle.iter().copied().fold(worst_oracle, f64::max);
        let (pq, qp, qr, pr, pp) = (d(0, 1)?, d(1, 0)?, d(1, 2)?, d(0, 2)?, d(0, 0)?);
        let axioms = [
            ("identity", pp.abs() <= TOL),
            ("nonnegativity", pq >= -TOL && qr >= -TOL && pr >= -TOL),
            ("symmetry", (pq - qp).abs() <= TOL),
            ("triangle", pr <= pq + qr + TOL),
        ];
        for (name, ok) in axioms {
            if !ok {
                axiom_failures.push(format!("{name}@{i}"));
            }
        }
    }
    Ok(Check::new(
        worst_oracle <= TOL && axiom_failures.is_empty(),
        format!(
            "max |exact - brute force| = {worst_oracle:.3e} {} tol_ot 1e-9; axiom failures: {}",
            vs(worst_oracle <= TOL),
            if axiom_failures.is_empty() {
                "none".to_string()
            } else {
                axiom_failures.join(", ")
            }
        ),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circle::kernel_mass;

    #[test]
    fn ids_are_unique_and_ordered() {
        for (i, c) in CRITERIA.iter().enumerate() {
            assert_eq!(c.id as usize, i + 1);
        }
        assert!(run_criterion(11, &AcceptanceConfig::default()).is_err());
    }

    #[test]
    fn kernel_mass_of_random_kernels_is_positive() {
        let grid = Grid::new(256).unwrap();
        for i in 0..20 {
            let mut rng = substream(1, Domain::Instances, i);
            let k = random_kernel(&mut rng);
            assert!(kernel_mass(&k, 0.3, &grid).unwrap() > 0.0);
        }
    }
}
