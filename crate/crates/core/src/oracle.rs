//! Slow, independent reference computations used by the test suite and the
//! acceptance harness: brute-force couplings, tree-recursive nested
//! distances, 1-d quantile transport, golden-section search, fine midpoint
//! quadrature, and row enumeration for count laws.

use crate::circle::{compensated_sum, ArcPartition, ConnectionKernel};
use crate::error::{Error, Result};
use crate::graph::{edge_probability, positions};
use crate::measures::{AtomMeasure, TreeMeasure, TreeNode};

/// Largest `m·n` handled by vertex enumeration.
pub const VERTEX_CELL_CAP: usize = 16;
/// Largest equal support handled by permutation enumeration.
pub const PERMUTATION_CAP: usize = 8;
/// Largest `n` for row enumeration (`2^{2n}` rows).
pub const ROW_ENUMERATION_N_CAP: usize = 8;

const FEAS_TOL: f64 = 1e-12;

/// Golden-section search for the minimum of a unimodal `f` on `[lo, hi]`.
pub fn golden_section<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}

/// `(1/2π)∫ f` by the midpoint rule on `bins` cells.
pub fn circle_quadrature<F: Fn(f64) -> f64>(f: F, bins: usize) -> f64 {
    let h = std::f64::consts::TAU / bins as f64;
    compensated_sum((0..bins).map(|i| f(-std::f64::consts::PI + (i as f64 + 0.5) * h))) / bins as f64
}

fn permutations_min(n: usize, cost: &dyn Fn(usize, usize) -> f64) -> f64 {
    fn rec(k: usize, perm: &mut Vec<usize>, acc: f64, best: &mut f64, cost: &dyn Fn(usize, usize) -> f64) {
        if k == perm.len() {
            *best = best.min(acc);
            return;
        }
        for i in k..perm.len() {
            perm.swap(k, i);
            rec(k + 1, perm, acc + cost(k, perm[k]), best, cost);
            perm.swap(k, i);
        }
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    rec(0, &mut perm, 0.0, &mut best, cost);
    best / n as f64
}

/// Minimum over the vertices of the transportation polytope: every basic
/// feasible coupling is supported on `m + n − 1` cells forming a spanning
/// tree, on which the marginals determine it.
fn vertices_min(a: &[f64], b: &[f64], cost: &dyn Fn(usize, usize) -> f64) -> f64 {
    let (m, n) = (a.len(), b.len());
    let cells = m * n;
    let k = m + n - 1;
    let mut best = f64::INFINITY;
    for mask in 0u32..(1u32 << cells) {
        if mask.count_ones() as usize != k {
            continue;
        }
        if let Some(plan) = tree_solution(a, b, mask) {
            let c = compensated_sum(
                plan.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(idx, v)| v * cost(idx / n, idx % n)),
            );
            best = best.min(c);
        }
    }
    best
}

fn tree_solution(a: &[f64], b: &[f64], mask: u32) -> Option<Vec<f64>> {
    let (m, n) = (a.len(), b.len());
    let mut open: Vec<bool> = (0..m * n).map(|c| mask >> c & 1 == 1).collect();
    let mut ra = a.to_vec();
    let mut rb = b.to_vec();
    let mut plan = vec![0.0; m * n];
    let mut remaining = open.iter().filter(|o| **o).count();
    while remaining > 0 {
        let mut progressed = false;
        for i in 0..m {
            let row: Vec<usize> = (0..n).filter(|&j| open[i * n + j]).collect();
            if row.len() == 1 {
                let j = row[0];
                let v = ra[i];
                plan[i * n + j] = v;
                ra[i] = 0.0;
                rb[j] -= v;
                open[i * n + j] = false;
                remaining -= 1;
                progressed = true;
            }
        }
        for j in 0..n {
            let col: Vec<usize> = (0..m).filter(|&i| open[i * n + j]).collect();
            if col.len() == 1 {
                let i = col[0];
                let v = rb[j];
                plan[i * n + j] = v;
                rb[j] = 0.0;
                ra[i] -= v;
                open[i * n + j] = false;
                remaining -= 1;
                progressed = true;
            }
        }
        if !progressed {
            // a cycle: not a tree
            return None;
        }
    }
    let ok = plan.iter().all(|&v| v >= -FEAS_TOL)
        && ra.iter().chain(&rb).all(|r| r.abs() <= FEAS_TOL);
    ok.then_some(plan)
}

/// Optimal transport cost by exhaustive enumeration: permutations for
/// uniform marginals of equal size, polytope vertices for `m·n ≤ 16`.
pub fn brute_force_ot(a: &[f64], b: &[f64], cost: &dyn Fn(usize, usize) -> f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("empty marginal".into()));
    }
    let uniform = |w: &[f64]| w.iter().all(|&x| (x - 1.0 / w.len() as f64).abs() < 1e-14);
    if a.len() == b.len() && a.len() <= PERMUTATION_CAP && uniform(a) && uniform(b) {
        return Ok(permutations_min(a.len(), cost));
    }
    if a.len() * b.len() <= VERTEX_CELL_CAP {
        return Ok(vertices_min(a, b, cost));
    }
    Err(Error::EnumerationCap {
        size: a.len() * b.len(),
        cap: VERTEX_CELL_CAP,
    })
}

fn euclid(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Wasserstein-1 between atom measures by [`brute_force_ot`].
pub fn brute_force_wasserstein(p: &AtomMeasure, q: &AtomMeasure) -> Result<f64> {
    brute_force_ot(p.weights(), q.weights(), &|i, j| euclid(p.point(i), q.point(j)))
}

fn tree_distance(a: &TreeNode, b: &TreeNode, level: usize) -> Result<f64> {
    let mut d = euclid(&a.point, &b.point);
    if level > 0 {
        d += tree_level_ot(&a.children, &b.children, level - 1)?;
    }
    Ok(d)
}

fn tree_level_ot(a: &[(TreeNode, f64)], b: &[(TreeNode, f64)], level: usize) -> Result<f64> {
    let mut costs = vec![0.0; a.len() * b.len()];
    for (i, (x, _)) in a.iter().enumerate() {
        for (j, (y, _)) in b.iter().enumerate() {
            costs[i * b.len() + j] = tree_distance(x, y, level)?;
        }
    }
    let wa: Vec<f64> = a.iter().map(|x| x.1).collect();
    let wb: Vec<f64> = b.iter().map(|x| x.1).collect();
    brute_force_ot(&wa, &wb, &|i, j| costs[i * b.len() + j])
}

/// Nested distance `d_k` computed top-down on explicit trees, every coupling
/// found by enumeration.
pub fn brute_force_nested(p: &TreeMeasure, q: &TreeMeasure) -> Result<f64> {
    if p.depth != q.depth {
        return Err(Error::DepthMismatch {
            left: p.depth,
            right: q.depth,
        });
    }
    tree_level_ot(&p.atoms, &q.atoms, p.depth)
}

/// Wasserstein-1 on the line as `∫|F − G|`.
pub fn quantile_wasserstein_1d(p: &AtomMeasure, q: &AtomMeasure) -> Result<f64> {
    if p.dim() != 1 || q.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: p.dim().max(q.dim()),
        });
    }
    let mut events: Vec<(f64, f64)> = p
        .iter()
        .map(|(x, w)| (x[0], w))
        .chain(q.iter().map(|(x, w)| (x[0], -w)))
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut diff = 0.0;
    let mut terms = Vec::with_capacity(events.len());
    for w in events.windows(2) {
        diff += w[0].1;
        terms.push(diff.abs() * (w[1].0 - w[0].0));
    }
    Ok(compensated_sum(terms))
}

/// Per-arc laws of the row counts of `target` by enumerating all `2^{2n}`
/// rows.
pub fn enumerate_arc_count_law(
    kernel: &ConnectionKernel,
    n: usize,
    rho: f64,
    target: i64,
    arcs: &ArcPartition,
) -> Result<Vec<Vec<f64>>> {
    if n > ROW_ENUMERATION_N_CAP {
        return Err(Error::EnumerationCap {
            size: n,
            cap: ROW_ENUMERATION_N_CAP,
        });
    }
    let pos = positions(n);
    let idx = (target + n as i64) as usize;
    let others: Vec<usize> = (0..pos.len()).filter(|&k| k != idx).collect();
    let probs: Vec<f64> = others
        .iter()
        .map(|&k| edge_probability(kernel, rho, pos[idx], pos[k]))
        .collect();
    let class: Vec<usize> = others.iter().map(|&k| arcs.arc_of(pos[k])).collect();
    let self_arc = arcs.arc_of(pos[idx]);
    let mut laws = vec![vec![0.0; pos.len() + 1]; arcs.len()];
    for mask in 0u64..(1u64 << others.len()) {
        let mut prob = 1.0;
        let mut counts = vec![0usize; arcs.len()];
        counts[self_arc] += 1;
        for (b, &p) in probs.iter().enumerate() {
            if mask >> b & 1 == 1 {
                prob *= p;
                counts[class[b]] += 1;
            } else {
                prob *= 1.0 - p;
            }
        }
        for (law, &c) in laws.iter_mut().zip(&counts) {
            law[c] += prob;
        }
    }
    for law in &mut laws {
        while law.len() > 1 && *law.last().unwrap() == 0.0 {
            law.pop();
        }
    }
    Ok(laws)
}
