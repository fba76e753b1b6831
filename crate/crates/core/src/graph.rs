//! Quenched directed inhomogeneous Erdős–Rényi graphs on evenly spaced
//! circle positions.
//!
//! Nodes carry labels `j ∈ {−n, …, n}` and are stored at index `j + n`.
//! The in-neighborhood `Ξ_j = {k : w^{jk} = 1}` always contains `j` itself;
//! for `k ≠ j` the edge is present independently with probability
//! `min(1, ρ·C(θ_j, θ_k))`. `w^{jk}` and `w^{kj}` are drawn independently.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circle::{canonical_angle, ConnectionKernel};
use crate::error::{Error, Result};
use crate::rng::{substream, Domain};

pub const MAX_NODES: usize = 1 << 20;

const FORMAT_HEADER: &str = "# ldpnet graph v1";

/// `θ_j = 2πj/(2n+1)` for `j = −n..=n`, canonicalized to `(−π, π]`.
pub fn positions(n: usize) -> Vec<f64> {
    let size = 2 * n + 1;
    (0..size)
        .map(|idx| {
            let j = idx as f64 - n as f64;
            canonical_angle(2.0 * PI * j / size as f64)
        })
        .collect()
}

/// Edge probability `min(1, ρ·C(α, θ))`.
#[inline]
pub fn edge_probability(kernel: &ConnectionKernel, rho: f64, alpha: f64, theta: f64) -> f64 {
    (rho * kernel.eval(alpha, theta)).clamp(0.0, 1.0)
}

/// Samples the in-neighborhood of node `idx` (self-loop included, sorted).
///
/// Candidates are generated at rate `p_max = min(1, ρ·C_ub)` by geometric
/// skipping and thinned with acceptance `p_k / p_max`, which yields
/// independent Bernoulli(`p_k`) edges.
pub fn sample_row<R: Rng + ?Sized>(
    kernel: &ConnectionKernel,
    positions: &[f64],
    idx: usize,
    rho: f64,
    rng: &mut R,
) -> Vec<u32> {
    let size = positions.len();
    let alpha = positions[idx];
    let p_max = (rho * kernel.upper_bound()).clamp(0.0, 1.0);
    let mut row = Vec::new();
    let mut push_self = true;
    let mut visit = |k: usize, row: &mut Vec<u32>| {
        if push_self && k > idx {
            row.push(idx as u32);
            push_self = false;
        }
        row.push(k as u32);
    };
    if p_max > 0.0 {
        if p_max >= 1.0 {
            for k in (0..size).filter(|&k| k != idx) {
                let p = edge_probability(kernel, rho, alpha, positions[k]);
                if rng.random::<f64>() < p {
                    visit(k, &mut row);
                }
            }
        } else {
            let log_q = (-p_max).ln_1p();
            // candidate slots run over the N − 1 nodes other than idx
            let mut slot: usize = 0;
            loop {
                let u: f64 = 1.0 - rng.random::<f64>();
                let gap = (u.ln() / log_q).floor();
                if !gap.is_finite() || gap >= (size - 1 - slot) as f64 {
                    break;
                }
                slot += gap as usize;
                let k = if slot < idx { slot } else { slot + 1 };
                let p = edge_probability(kernel, rho, alpha, positions[k]);
                if p >= p_max || rng.random::<f64>() * p_max < p {
                    visit(k, &mut row);
                }
                slot += 1;
                if slot >= size - 1 {
                    break;
                }
            }
        }
    }
    if push_self {
        row.push(idx as u32);
    }
    row
}

/// One sampled directed graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSample {
    n: usize,
    rho: f64,
    seed: u64,
    kernel_id: String,
    positions: Vec<f64>,
    neighbors: Vec<Vec<u32>>,
}

impl GraphSample {
    /// Builds a graph from explicit in-neighborhoods (indices `0..2n+1`).
    /// Self-loops are inserted and lists sorted/deduplicated.
    pub fn from_neighbors(
        n: usize,
        rho: f64,
        seed: u64,
        kernel_id: impl Into<String>,
        mut neighbors: Vec<Vec<u32>>,
    ) -> Result<Self> {
        let size = 2 * n + 1;
        if neighbors.len() != size {
            return Err(Error::InvalidArgument(format!(
                "expected {size} neighbor lists, got {}",
                neighbors.len()
            )));
        }
        for (idx, row) in neighbors.iter_mut().enumerate() {
            if row.iter().any(|&k| k as usize >= size) {
                return Err(Error::InvalidArgument(format!(
                    "neighbor index out of range at node {idx}"
                )));
            }
            row.push(idx as u32);
            row.sort_unstable();
            row.dedup();
        }
        Ok(Self {
            n,
            rho,
            seed,
            kernel_id: kernel_id.into(),
            positions: positions(n),
            neighbors,
        })
    }

    pub fn self_loops_only(n: usize) -> Self {
        Self::from_neighbors(n, 1.0, 0, "self-loops", vec![Vec::new(); 2 * n + 1])
            .expect("valid by construction")
    }

    pub fn complete(n: usize) -> Self {
        let size = 2 * n + 1;
        let all: Vec<u32> = (0..size as u32).collect();
        Self::from_neighbors(n, 1.0, 0, "complete", vec![all; size]).expect("valid by construction")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of nodes `2n + 1`.
    pub fn size(&self) -> usize {
        2 * self.n + 1
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn kernel_id(&self) -> &str {
        &self.kernel_id
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn label(&self, idx: usize) -> i64 {
        idx as i64 - self.n as i64
    }

    pub fn index(&self, label: i64) -> Option<usize> {
        let idx = label + self.n as i64;
        (0..self.size() as i64).contains(&idx).then_some(idx as usize)
    }

    /// Sorted in-neighborhood `Ξ_j` as indices.
    pub fn neighbors(&self, idx: usize) -> &[u32] {
        &self.neighbors[idx]
    }

    pub fn adjacency(&self) -> &[Vec<u32>] {
        &self.neighbors
    }

    /// `κ_j = |Ξ_j|`.
    pub fn degree(&self, idx: usize) -> usize {
        self.neighbors[idx].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }

    /// Structural invariants: self-loops, sorted unique lists, in-range
    /// indices, strictly increasing positions.
    pub fn check_invariants(&self) -> Result<()> {
        let size = self.size();
        if self.positions.len() != size || self.neighbors.len() != size {
            return Err(Error::InvalidArgument("graph size mismatch".into()));
        }
        if self.positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "positions not strictly increasing".into(),
            ));
        }
        for (idx, row) in self.neighbors.iter().enumerate() {
            if row.binary_search(&(idx as u32)).is_err() {
                return Err(Error::InvalidArgument(format!("node {idx} lacks self-loop")));
            }
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument(format!(
                    "neighbor list of node {idx} not sorted/unique"
                )));
            }
            if row.last().is_some_and(|&k| k as usize >= size) {
                return Err(Error::InvalidArgument(format!(
                    "neighbor out of range at node {idx}"
                )));
            }
        }
        Ok(())
    }

    /// Line-oriented text form: a header block followed by one
    /// `j: k1 k2 ...` line per node, all in labels.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{FORMAT_HEADER}").unwrap();
        writeln!(s, "n {}", self.n).unwrap();
        writeln!(s, "rho {:?}", self.rho).unwrap();
        writeln!(s, "seed {}", self.seed).unwrap();
        writeln!(s, "kernel {}", self.kernel_id).unwrap();
        for (idx, row) in self.neighbors.iter().enumerate() {
            write!(s, "{}:", self.label(idx)).unwrap();
            for &k in row {
                write!(s, " {}", self.label(k as usize)).unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let mut next = |expect: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((i, Ok(l))) => Ok((i + 1, l)),
                Some((i, Err(e))) => Err(Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                }),
                None => Err(Error::Parse {
                    line: 0,
                    message: format!("unexpected end of input, expected {expect}"),
                }),
            }
        };
        let field = |line: usize, text: &str, key: &str| -> Result<String> {
            text.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_owned)
                .ok_or_else(|| Error::Parse {
                    line,
                    message: format!("expected `{key} <value>`"),
                })
        };
        let bad = |line: usize, what: &str| Error::Parse {
            line,
            message: format!("invalid {what}"),
        };

        let (l, header) = next("header")?;
        if header != FORMAT_HEADER {
            return Err(bad(l, "header"));
        }
        let (l, t) = next("n")?;
        let n: usize = field(l, &t, "n")?.parse().map_err(|_| bad(l, "n"))?;
        if 2 * n + 1 > MAX_NODES {
            return Err(Error::SizeCap {
                what: "graph nodes",
                size: 2 * n + 1,
                cap: MAX_NODES,
            });
        }
        let (l, t) = next("rho")?;
        let rho: f64 = field(l, &t, "rho")?.parse().map_err(|_| bad(l, "rho"))?;
        let (l, t) = next("seed")?;
        let seed: u64 = field(l, &t, "seed")?.parse().map_err(|_| bad(l, "seed"))?;
        let (l, t) = next("kernel")?;
        let kernel_id = field(l, &t, "kernel")?;

        let size = 2 * n + 1;
        let mut neighbors = Vec::with_capacity(size);
        for idx in 0..size {
            let (l, t) = next("node line")?;
            let (head, rest) = t.split_once(':').ok_or_else(|| bad(l, "node line"))?;
            let label: i64 = head.trim().parse().map_err(|_| bad(l, "node label"))?;
            if label != idx as i64 - n as i64 {
                return Err(bad(l, "node order"));
            }
            let mut row = Vec::new();
            for tok in rest.split_whitespace() {
                let k: i64 = tok.parse().map_err(|_| bad(l, "neighbor label"))?;
                let k_idx = k + n as i64;
                if !(0..size as i64).contains(&k_idx) {
                    return Err(bad(l, "neighbor label"));
                }
                row.push(k_idx as u32);
            }
            neighbors.push(row);
        }
        let g = Self {
            n,
            rho,
            seed,
            kernel_id,
            positions: positions(n),
            neighbors,
        };
        g.check_invariants()?;
        Ok(g)
    }
}

/// Samples the graph. Rows are drawn from per-node substreams, so the result
/// does not depend on the rayon pool size.
pub fn sample_graph(
    kernel: &ConnectionKernel,
    n: usize,
    rho: f64,
    seed: u64,
    allow_clip: bool,
) -> Result<GraphSample> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidArgument(format!("rho {rho} outside (0, 1]")));
    }
    let size = 2 * n + 1;
    if size > MAX_NODES {
        return Err(Error::SizeCap {
            what: "graph nodes",
            size,
            cap: MAX_NODES,
        });
    }
    let peak = rho * kernel.upper_bound();
    if peak > 1.0 && !allow_clip {
        return Err(Error::ProbabilityOverflow { value: peak });
    }
    let pos = positions(n);
    let neighbors: Vec<Vec<u32>> = (0..size)
        .into_par_iter()
        .map(|idx| {
            let mut rng = substream(seed, Domain::Graph, idx as u64);
            sample_row(kernel, &pos, idx, rho, &mut rng)
        })
        .collect();
    Ok(GraphSample {
        n,
        rho,
        seed,
        kernel_id: kernel.id().to_owned(),
        positions: pos,
        neighbors,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DegreeProfile {
    pub min: usize,
    pub max: usize,
    pub mean: f64,
    pub histogram: BTreeMap<usize, usize>,
}

pub fn degree_profile(g: &GraphSample) -> DegreeProfile {
    let mut histogram = BTreeMap::new();
    for d in g.degrees() {
        *histogram.entry(d).or_insert(0) += 1;
    }
    DegreeProfile {
        min: *histogram.keys().next().unwrap_or(&0),
        max: *histogram.keys().next_back().unwrap_or(&0),
        mean: g.edge_count() as f64 / g.size() as f64,
        histogram,
    }
}

/// Sparsity family `ρ_n = min(1, c·(2n+1)^{−β})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparsitySchedule {
    pub c: f64,
    pub beta: f64,
}

impl SparsitySchedule {
    pub fn new(c: f64, beta: f64) -> Result<Self> {
        let s = Self { c, beta };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "schedule constant {} must be positive",
                self.c
            )));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "schedule exponent {} outside (0, 1)",
                self.beta
            )));
        }
        Ok(())
    }

    pub fn rho(&self, n: usize) -> f64 {
        (self.c * ((2 * n + 1) as f64).powf(-self.beta)).min(1.0)
    }

    /// Node-level speed `ρ_n (2n+1)`.
    pub fn speed(&self, n: usize) -> f64 {
        self.rho(n) * (2 * n + 1) as f64
    }

    /// Numerical check of the sparse regime at the ends of an increasing grid:
    /// `ρ` must decrease and `(2n+1)ρ` must increase.
    pub fn check_regime(&self, n_grid: &[usize]) -> Result<()> {
        self.validate()?;
        if n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("n grid must be increasing".into()));
        }
        if let (Some(&first), Some(&last)) = (n_grid.first(), n_grid.last()) {
            if n_grid.len() > 1
                && !(self.rho(last) < self.rho(first) && self.speed(last) > self.speed(first))
            {
                return Err(Error::InvalidArgument(format!(
                    "schedule not in the sparse regime between n = {first} and n = {last}"
                )));
            }
        }
        Ok(())
    }
}
