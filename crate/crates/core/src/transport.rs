//! Exact discrete optimal transport as a min-cost flow.
//!
//! Successive shortest augmenting paths with Johnson potentials on the dense
//! bipartite residual graph. Supplies and demands are real; each augmentation
//! exhausts a supply, a demand, or a reverse arc, so the loop terminates. Ties
//! in Dijkstra are broken by lowest node index, which keeps the plan
//! deterministic.

use crate::error::{Error, Result};

/// Largest combined support accepted by [`crate::measures::wasserstein`].
pub const ATOM_SUPPORT_CAP: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub cost: f64,
    /// `(i, j, mass)` for every positive flow.
    pub flows: Vec<(usize, usize, f64)>,
}

/// Minimum of `Σ π_ij c_ij` over couplings of `supply` and `demand`.
///
/// `cost(i, j)` must be finite and nonnegative. The two marginals must carry
/// the same total mass up to `1e−9` relative error.
pub fn solve<C>(supply: &[f64], demand: &[f64], cost: C) -> Result<TransportPlan>
where
    C: Fn(usize, usize) -> f64,
{
    let m = supply.len();
    let n = demand.len();
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument("empty marginal".into()));
    }
    for &w in supply.iter().chain(demand) {
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::InvalidArgument(format!("invalid marginal weight {w}")));
        }
    }
    let total_a: f64 = supply.iter().sum();
    let total_b: f64 = demand.iter().sum();
    if (total_a - total_b).abs() > 1e-9 * total_a.max(total_b).max(1.0) {
        return Err(Error::NotProbability {
            mass: total_a - total_b,
        });
    }

    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let v = cost(i, j);
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "invalid ground cost {v} at ({i}, {j})"
                )));
            }
            c[i * n + j] = v;
        }
    }

    let eps = 1e-15 * total_a.max(1.0);
    let mut rem_a = supply.to_vec();
    let mut rem_b = demand.to_vec();
    let mut flow = vec![0.0; m * n];
    // nodes 0..m are sources, m..m+n are sinks
    let v_count = m + n;
    let mut pot = vec![0.0; v_count];
    let mut dist = vec![f64::INFINITY; v_count];
    let mut done = vec![false; v_count];
    let mut pred = vec![usize::MAX; v_count];

    loop {
        if !rem_a.iter().any(|&r| r > eps) || !rem_b.iter().any(|&r| r > eps) {
            break;
        }
        dist.fill(f64::INFINITY);
        done.fill(false);
        pred.fill(usize::MAX);
        for i in 0..m {
            if rem_a[i] > eps {
                dist[i] = 0.0;
            }
        }
        let mut target = None;
        loop {
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for x in 0..v_count {
                if !done[x] && dist[x] < best_d {
                    best_d = dist[x];
                    best = x;
                }
            }
            if best == usize::MAX {
                break;
            }
            done[best] = true;
            if best >= m {
                let j = best - m;
                if rem_b[j] > eps {
                    target = Some(best);
                    break;
                }
                for i in 0..m {
                    if !done[i] && flow[i * n + j] > eps {
                        let rc = (-c[i * n + j] + pot[best] - pot[i]).max(0.0);
                        let d = best_d + rc;
                        if d < dist[i] {
                            dist[i] = d;
                            pred[i] = best;
                        }
                    }
                }
            } else {
                let i = best;
                for j in 0..n {
                    let y = m + j;
                    if !done[y] {
                        let rc = (c[i * n + j] + pot[i] - pot[y]).max(0.0);
                        let d = best_d + rc;
                        if d < dist[y] {
                            dist[y] = d;
                            pred[y] = i;
                        }
                    }
                }
            }
        }
        let Some(t) = target else {
            // Remaining excess below tolerance on one side only.
            break;
        };
        let d_t = dist[t];
        for x in 0..v_count {
            pot[x] += dist[x].min(d_t);
        }

        // bottleneck along the path t <- ... <- source
        let mut delta = rem_b[t - m];
        let mut y = t;
        loop {
            let x = pred[y];
            if x == usize::MAX {
                delta = delta.min(rem_a[y]);
                break;
            }
            if y < m {
                // reverse arc sink x -> source y carries flow[y][x]
                delta = delta.min(flow[y * n + (x - m)]);
            }
            y = x;
        }
        let mut y = t;
        loop {
            let x = pred[y];
            if x == usize::MAX {
                rem_a[y] -= delta;
                break;
            }
            if y >= m {
                flow[x * n + (y - m)] += delta;
            } else {
                flow[y * n + (x - m)] -= delta;
            }
            y = x;
        }
        rem_b[t - m] -= delta;
    }

    let mut total = 0.0;
    let mut flows = Vec::new();
    for i in 0..m {
        for j in 0..n {
            let f = flow[i * n + j];
            if f > eps {
                total += f * c[i * n + j];
                flows.push((i, j, f));
            }
        }
    }
    Ok(TransportPlan { cost: total, flows })
}
