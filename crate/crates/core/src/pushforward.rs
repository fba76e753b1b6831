//! Euler push-forward `Ψ_m` of nested network measures, its limit along a
//! doubling ladder, and the tree-recursion cross-check `Ψ_m = Γ^m ∘ Φ_m`.

use serde::{Deserialize, Serialize};

use crate::circle::ConnectionKernel;
use crate::dynamics::{integrate, path_empirical, InitialCondition, Lift, Scheme, VectorFieldPair};
use crate::error::{Error, Result};
use crate::graph::{sample_graph, GraphSample};
use crate::measures::{
    build_nested, path_wasserstein, unroll_phi, NestedEmpiricalMeasure, PathMeasure, TreeNode,
};

/// Largest graph accepted by [`factorization_check`].
pub const FACTORIZATION_NODE_CAP: usize = 50;
/// Deepest unroll accepted by [`factorization_check`].
pub const FACTORIZATION_DEPTH_CAP: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PushforwardConfig {
    pub horizon: f64,
    /// Euler step count `m`, `δt = T/m`.
    pub steps: usize,
    pub tol: f64,
    pub max_steps: usize,
}

impl PushforwardConfig {
    pub fn new(horizon: f64, steps: usize, tol: f64, max_steps: usize) -> Result<Self> {
        let cfg = Self {
            horizon,
            steps,
            tol,
            max_steps,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::InvalidArgument(format!("horizon {}", self.horizon)));
        }
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tol {}", self.tol)));
        }
        if self.max_steps < self.steps {
            return Err(Error::InvalidArgument(format!(
                "max_steps {} below steps {}",
                self.max_steps, self.steps
            )));
        }
        Ok(())
    }
}

/// `Ψ_m·ν`: m-step Euler on the provenance graph, then the empirical measure
/// of the piecewise-linear paths.
pub fn psi_m(
    nu: &NestedEmpiricalMeasure,
    fields: &VectorFieldPair,
    horizon: f64,
    steps: usize,
) -> Result<PathMeasure> {
    let traj = integrate(nu.adjacency(), nu.init(), fields, horizon, steps, Scheme::Euler)?;
    Ok(path_empirical(&traj))
}

/// Result of [`psi_limit`].
#[derive(Debug, Clone, PartialEq)]
pub struct PsiLimit {
    pub measure: PathMeasure,
    pub steps: usize,
    pub report: PushforwardReport,
}

/// Doubles `m` from `cfg.steps` until `d_W(Ψ_m·ν, Ψ_{2m}·ν) < tol` and
/// returns the finer measure.
pub fn psi_limit(
    nu: &NestedEmpiricalMeasure,
    fields: &VectorFieldPair,
    cfg: &PushforwardConfig,
) -> Result<PsiLimit> {
    cfg.validate()?;
    let mut m = cfg.steps;
    let mut coarse = psi_m(nu, fields, cfg.horizon, m)?;
    let mut ladder = Vec::new();
    let mut gaps = Vec::new();
    loop {
        if 2 * m > cfg.max_steps {
            return Err(Error::NoConvergence {
                steps: m,
                gap: gaps.last().copied().unwrap_or(f64::INFINITY),
            });
        }
        let fine = psi_m(nu, fields, cfg.horizon, 2 * m)?;
        let gap = path_wasserstein(&coarse, &fine)?;
        ladder.push(m);
        gaps.push(gap);
        log::debug!("psi ladder m={m} gap={gap:e}");
        if gap < cfg.tol {
            let report = PushforwardReport::new(ladder, gaps);
            return Ok(PsiLimit {
                measure: fine,
                steps: 2 * m,
                report,
            });
        }
        coarse = fine;
        m *= 2;
    }
}

/// `{m ladder, gaps, fitted slope, final distance}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PushforwardReport {
    pub schema: String,
    pub ladder: Vec<usize>,
    pub gaps: Vec<f64>,
    /// Least-squares slope of `log gap` against `log m`.
    pub fitted_slope: Option<f64>,
    pub final_distance: f64,
}

impl PushforwardReport {
    pub fn new(ladder: Vec<usize>, gaps: Vec<f64>) -> Self {
        let fitted_slope = loglog_slope(&ladder, &gaps);
        let final_distance = gaps.last().copied().unwrap_or(f64::NAN);
        Self {
            schema: "ldpnet.pushforward/1".into(),
            ladder,
            gaps,
            fitted_slope,
            final_distance,
        }
    }
}

/// Least-squares slope of `log y` on `log x` over the positive entries.
pub fn loglog_slope(x: &[usize], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(_, &v)| v > 0.0)
        .map(|(&a, &b)| ((a as f64).ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Some(sxy / sxx)
}

/// `d_W(Ψ_m·ν, Ψ_ref·ν)` for every `m` in `ladder`, with `Ψ_ref` the Euler
/// map at `reference_steps`.
pub fn euler_ladder(
    nu: &NestedEmpiricalMeasure,
    fields: &VectorFieldPair,
    horizon: f64,
    ladder: &[usize],
    reference_steps: usize,
) -> Result<PushforwardReport> {
    let reference = psi_m(nu, fields, horizon, reference_steps)?;
    let mut gaps = Vec::with_capacity(ladder.len());
    for &m in ladder {
        gaps.push(path_wasserstein(&psi_m(nu, fields, horizon, m)?, &reference)?);
    }
    Ok(PushforwardReport::new(ladder.to_vec(), gaps))
}

/// Empirical approximant of a graphon-driven measure: one sampled graph with
/// lifted initial states, for use as an input to `Ψ`.
pub fn sample_approximant(
    kernel: &ConnectionKernel,
    n: usize,
    rho: f64,
    seed: u64,
    lift: &Lift,
) -> Result<NestedEmpiricalMeasure> {
    let g = sample_graph(kernel, n, rho, seed, false)?;
    let init = InitialCondition::from_lift(lift, g.positions(), None)?;
    build_nested(&g, &init)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorizationReport {
    pub nodes: usize,
    pub steps: usize,
    pub tree_nodes: usize,
    pub gap: f64,
}

/// Computes `Ψ_m` by direct coupled Euler and by the tree recursion on the
/// explicit depth-`m` unroll, and reports their path-space distance.
pub fn factorization_check(
    g: &GraphSample,
    init: &InitialCondition,
    fields: &VectorFieldPair,
    horizon: f64,
    steps: usize,
) -> Result<FactorizationReport> {
    if g.size() > FACTORIZATION_NODE_CAP {
        return Err(Error::SizeCap {
            what: "factorization nodes",
            size: g.size(),
            cap: FACTORIZATION_NODE_CAP,
        });
    }
    if steps > FACTORIZATION_DEPTH_CAP {
        return Err(Error::SizeCap {
            what: "factorization depth",
            size: steps,
            cap: FACTORIZATION_DEPTH_CAP,
        });
    }
    let direct = psi_m(&build_nested(g, init)?, fields, horizon, steps)?;

    let tree = unroll_phi(g, init, steps)?.expand()?;
    let dt = horizon / steps as f64;
    let d = init.dim();
    let mut paths = Vec::with_capacity(tree.atoms.len());
    for (root, w) in &tree.atoms {
        let mut path = Vec::with_capacity((steps + 1) * d);
        path.extend_from_slice(&root.point);
        let mut cur = root.clone();
        for _ in 0..steps {
            cur = gamma_step(&cur, fields, dt);
            path.extend_from_slice(&cur.point);
        }
        paths.push((path, *w));
    }
    let times = (0..=steps).map(|s| s as f64 * dt).collect();
    let via_tree = PathMeasure::from_weighted_paths(times, d, paths)?;
    Ok(FactorizationReport {
        nodes: g.size(),
        steps,
        tree_nodes: tree.node_count(),
        gap: path_wasserstein(&direct, &via_tree)?,
    })
}

/// One level of `Γ`: every internal node takes an Euler step against the
/// weighted measure of its children's current points; leaves drop out.
fn gamma_step(node: &TreeNode, fields: &VectorFieldPair, dt: f64) -> TreeNode {
    let d = node.point.len();
    let mut drift = vec![0.0; d];
    fields.drift.eval(&node.point, &mut drift);
    let mut mean = vec![0.0; d];
    let mut tmp = vec![0.0; d];
    for (child, w) in &node.children {
        fields.coupling.eval(&node.point, &child.point, &mut tmp);
        for (m, t) in mean.iter_mut().zip(&tmp) {
            *m += w * t;
        }
    }
    let point = (0..d)
        .map(|c| node.point[c] + dt * (drift[c] + mean[c]))
        .collect();
    let children = node
        .children
        .iter()
        .filter(|(c, _)| !c.children.is_empty())
        .map(|(c, w)| (gamma_step(c, fields, dt), *w))
        .collect();
    TreeNode { point, children }
}
