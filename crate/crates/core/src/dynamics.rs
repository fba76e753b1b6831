//! Quenched network dynamics
//!
//! ```text
//! du^k/dt = drift(u^k) + (1/κ_k) Σ_{j ∈ Ξ_k} coupling(u^k, u^j)
//! ```
//!
//! integrated with fixed-step explicit Euler or classical RK4 on a uniform
//! time grid. Per-node right-hand sides are evaluated in parallel; each node
//! sums its neighbors in sorted order, so trajectories are bit-identical for
//! any worker count.
//!
//! The single-particle field is called `drift` and the pairwise field
//! `coupling` throughout, whichever letters a given derivation uses for them.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphSample;
use crate::measures::PathMeasure;
use crate::rng::{substream, Domain};

type DriftFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
type CouplingFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
type LiftFn = Arc<dyn Fn(f64, &mut [f64]) + Send + Sync>;

/// Single-particle field, applied componentwise for the named variants.
#[derive(Clone)]
pub enum Drift {
    Zero,
    /// `−rate·u`
    Linear { rate: f64 },
    /// `−scale·tanh(gain·u)`
    Tanh { gain: f64, scale: f64 },
    Custom(DriftFn),
}

/// Pairwise field `coupling(u, v)`, `u` the receiving node.
#[derive(Clone)]
pub enum Coupling {
    Zero,
    /// `self_weight·u + other_weight·v`
    Affine { self_weight: f64, other_weight: f64 },
    /// `strength·sin(v − u)`
    Sine { strength: f64 },
    /// `strength·tanh(v − u)`
    Tanh { strength: f64 },
    Custom(CouplingFn),
}

impl fmt::Debug for Drift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Drift::Zero => write!(f, "Zero"),
            Drift::Linear { rate } => write!(f, "Linear({rate})"),
            Drift::Tanh { gain, scale } => write!(f, "Tanh({gain}, {scale})"),
            Drift::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl fmt::Debug for Coupling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coupling::Zero => write!(f, "Zero"),
            Coupling::Affine {
                self_weight,
                other_weight,
            } => write!(f, "Affine({self_weight}, {other_weight})"),
            Coupling::Sine { strength } => write!(f, "Sine({strength})"),
            Coupling::Tanh { strength } => write!(f, "Tanh({strength})"),
            Coupling::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl Drift {
    #[inline]
    pub fn eval(&self, u: &[f64], out: &mut [f64]) {
        match self {
            Drift::Zero => out.fill(0.0),
            Drift::Linear { rate } => {
                for (o, x) in out.iter_mut().zip(u) {
                    *o = -rate * x;
                }
            }
            Drift::Tanh { gain, scale } => {
                for (o, x) in out.iter_mut().zip(u) {
                    *o = -scale * (gain * x).tanh();
                }
            }
            Drift::Custom(f) => f(u, out),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Drift::Zero)
    }

    /// Declared `(sup-norm bound, Lipschitz constant)` in dimension `d`.
    fn constants(&self, d: usize) -> (f64, f64) {
        let sd = (d as f64).sqrt();
        match self {
            Drift::Zero => (0.0, 0.0),
            Drift::Linear { rate } => (f64::INFINITY, rate.abs()),
            Drift::Tanh { gain, scale } => (scale.abs() * sd, (scale * gain).abs()),
            Drift::Custom(_) => (f64::INFINITY, f64::INFINITY),
        }
    }
}

impl Coupling {
    #[inline]
    pub fn eval(&self, u: &[f64], v: &[f64], out: &mut [f64]) {
        match self {
            Coupling::Zero => out.fill(0.0),
            Coupling::Affine {
                self_weight,
                other_weight,
            } => {
                for ((o, x), y) in out.iter_mut().zip(u).zip(v) {
                    *o = self_weight * x + other_weight * y;
                }
            }
            Coupling::Sine { strength } => {
                for ((o, x), y) in out.iter_mut().zip(u).zip(v) {
                    *o = strength * (y - x).sin();
                }
            }
            Coupling::Tanh { strength } => {
                for ((o, x), y) in out.iter_mut().zip(u).zip(v) {
                    *o = strength * (y - x).tanh();
                }
            }
            Coupling::Custom(f) => f(u, v, out),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Coupling::Zero)
    }

    fn constants(&self, d: usize) -> (f64, f64) {
        let sd = (d as f64).sqrt();
        match self {
            Coupling::Zero => (0.0, 0.0),
            Coupling::Affine {
                self_weight,
                other_weight,
            } => (
                if *self_weight == 0.0 && *other_weight == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                },
                self_weight.abs() + other_weight.abs(),
            ),
            Coupling::Sine { strength } | Coupling::Tanh { strength } => {
                (strength.abs() * sd, 2.0 * strength.abs())
            }
            Coupling::Custom(_) => (f64::INFINITY, f64::INFINITY),
        }
    }
}

/// Drift and coupling together with their declared bounds.
#[derive(Debug, Clone)]
pub struct VectorFieldPair {
    pub dim: usize,
    pub drift: Drift,
    pub coupling: Coupling,
    pub drift_bound: f64,
    pub coupling_bound: f64,
    pub drift_lipschitz: f64,
    pub coupling_lipschitz: f64,
}

impl VectorFieldPair {
    /// Pair with bounds derived from the named variants (infinite where the
    /// field is unbounded or user supplied).
    pub fn new(dim: usize, drift: Drift, coupling: Coupling) -> Self {
        let (drift_bound, drift_lipschitz) = drift.constants(dim);
        let (coupling_bound, coupling_lipschitz) = coupling.constants(dim);
        Self {
            dim,
            drift,
            coupling,
            drift_bound,
            coupling_bound,
            drift_lipschitz,
            coupling_lipschitz,
        }
    }

    pub fn with_bounds(mut self, drift_bound: f64, coupling_bound: f64) -> Self {
        self.drift_bound = drift_bound;
        self.coupling_bound = coupling_bound;
        self
    }

    /// `B_drift + B_coup`, the speed limit used by the a priori bound.
    pub fn speed_bound(&self) -> f64 {
        self.drift_bound + self.coupling_bound
    }

    /// Sampled check of the declared sup-norm bounds on a random cloud in the
    /// ball of radius `radius`.
    pub fn check_bounds(&self, radius: f64, samples: usize, seed: u64) -> Result<()> {
        let d = self.dim;
        let mut rng = substream(seed, Domain::Instances, 0xb0_0d);
        let mut u = vec![0.0; d];
        let mut v = vec![0.0; d];
        let mut out = vec![0.0; d];
        let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
        for _ in 0..samples {
            for c in 0..d {
                u[c] = radius * (2.0 * rng.random::<f64>() - 1.0) / (d as f64).sqrt();
                v[c] = radius * (2.0 * rng.random::<f64>() - 1.0) / (d as f64).sqrt();
            }
            self.drift.eval(&u, &mut out);
            if norm(&out) > self.drift_bound * (1.0 + 1e-12) {
                return Err(Error::InvalidArgument(format!(
                    "drift exceeds declared bound {} at {u:?}",
                    self.drift_bound
                )));
            }
            self.coupling.eval(&u, &v, &mut out);
            if norm(&out) > self.coupling_bound * (1.0 + 1e-12) {
                return Err(Error::InvalidArgument(format!(
                    "coupling exceeds declared bound {} at {u:?}, {v:?}",
                    self.coupling_bound
                )));
            }
        }
        Ok(())
    }
}

/// Lift `U: S¹ → R^d` used for the initial states `u_j = U(θ_j)`.
#[derive(Clone)]
pub enum Lift {
    /// `θ ↦ θ` (d = 1)
    Angle,
    /// `θ ↦ radius·(cos θ, sin θ)` (d = 2)
    Embedding { radius: f64 },
    /// `θ ↦ c`
    Constant(Vec<f64>),
    Custom { dim: usize, f: LiftFn },
}

impl fmt::Debug for Lift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lift::Angle => write!(f, "Angle"),
            Lift::Embedding { radius } => write!(f, "Embedding({radius})"),
            Lift::Constant(c) => write!(f, "Constant({c:?})"),
            Lift::Custom { dim, .. } => write!(f, "Custom(d={dim})"),
        }
    }
}

impl Lift {
    pub fn dim(&self) -> usize {
        match self {
            Lift::Angle => 1,
            Lift::Embedding { .. } => 2,
            Lift::Constant(c) => c.len(),
            Lift::Custom { dim, .. } => *dim,
        }
    }

    pub fn apply_into(&self, theta: f64, out: &mut [f64]) {
        match self {
            Lift::Angle => out[0] = theta,
            Lift::Embedding { radius } => {
                out[0] = radius * theta.cos();
                out[1] = radius * theta.sin();
            }
            Lift::Constant(c) => out.copy_from_slice(c),
            Lift::Custom { f, .. } => f(theta, out),
        }
    }

    pub fn apply(&self, theta: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.apply_into(theta, &mut out);
        out
    }
}

/// Per-node initial states with their uniform norm bound.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialCondition {
    dim: usize,
    states: Vec<f64>,
    c_ini: f64,
}

impl InitialCondition {
    /// `c_ini = None` takes the largest state norm as the bound.
    pub fn new(dim: usize, states: Vec<f64>, c_ini: Option<f64>) -> Result<Self> {
        if dim == 0 || states.len() % dim != 0 || states.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "{} state values do not form rows of dimension {dim}",
                states.len()
            )));
        }
        if states.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite initial state".into()));
        }
        let max_norm = states
            .chunks(dim)
            .map(|s| s.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        let c_ini = match c_ini {
            Some(c) if max_norm > c * (1.0 + 1e-12) => {
                return Err(Error::InvalidArgument(format!(
                    "initial state norm {max_norm} exceeds C_ini = {c}"
                )))
            }
            Some(c) => c,
            None => max_norm,
        };
        Ok(Self { dim, states, c_ini })
    }

    pub fn from_rows(rows: &[Vec<f64>], c_ini: Option<f64>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidArgument("ragged initial states".into()));
        }
        Self::new(dim, rows.concat(), c_ini)
    }

    /// `u_j = U(θ_j)` for the given positions.
    pub fn from_lift(lift: &Lift, positions: &[f64], c_ini: Option<f64>) -> Result<Self> {
        let d = lift.dim();
        let mut states = vec![0.0; d * positions.len()];
        for (chunk, &theta) in states.chunks_mut(d).zip(positions) {
            lift.apply_into(theta, chunk);
        }
        Self::new(d, states, c_ini)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn c_ini(&self) -> f64 {
        self.c_ini
    }

    pub fn state(&self, j: usize) -> &[f64] {
        &self.states[j * self.dim..(j + 1) * self.dim]
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    /// First pair of nodes sharing an initial state, if any.
    pub fn duplicate_pair(&self) -> Option<(usize, usize)> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| cmp_slices(self.state(a), self.state(b)).then(a.cmp(&b)));
        order
            .windows(2)
            .find(|w| self.state(w[0]) == self.state(w[1]))
            .map(|w| (w[0].min(w[1]), w[0].max(w[1])))
    }

    /// Relabels nodes: new node `i` takes the state of old node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut states = Vec::with_capacity(self.states.len());
        for &p in perm {
            states.extend_from_slice(self.state(p));
        }
        Self {
            dim: self.dim,
            states,
            c_ini: self.c_ini,
        }
    }
}

pub(crate) fn cmp_slices(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Euler,
    Rk4,
}

/// Trajectories of all nodes on a shared uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBundle {
    times: Vec<f64>,
    dim: usize,
    nodes: usize,
    /// layout `[step][node][component]`
    states: Vec<f64>,
    scheme: Scheme,
    label_offset: i64,
}

impl TrajectoryBundle {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn state(&self, step: usize, node: usize) -> &[f64] {
        let base = (step * self.nodes + node) * self.dim;
        &self.states[base..base + self.dim]
    }

    pub fn terminal(&self, node: usize) -> &[f64] {
        self.state(self.steps(), node)
    }

    /// Path of one node, layout `[step][component]`.
    pub fn path(&self, node: usize) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.times.len() * self.dim);
        for s in 0..self.times.len() {
            p.extend_from_slice(self.state(s, node));
        }
        p
    }

    /// `sup_{j,s} ‖u_j(t_s) − other_j(t_s)‖` on the grid points shared by
    /// both bundles (the coarser grid must divide the finer one).
    pub fn sup_distance(&self, other: &TrajectoryBundle) -> Result<f64> {
        if self.nodes != other.nodes || self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.nodes * self.dim,
                got: other.nodes * other.dim,
            });
        }
        let (coarse, fine) = if self.steps() <= other.steps() {
            (self, other)
        } else {
            (other, self)
        };
        if fine.steps() % coarse.steps() != 0 {
            return Err(Error::InvalidArgument(
                "time grids are not nested".into(),
            ));
        }
        let ratio = fine.steps() / coarse.steps();
        let mut sup: f64 = 0.0;
        for s in 0..=coarse.steps() {
            for j in 0..self.nodes {
                let a = coarse.state(s, j);
                let b = fine.state(s * ratio, j);
                let d = a
                    .iter()
                    .zip(b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                sup = sup.max(d);
            }
        }
        Ok(sup)
    }

    /// Checks `‖u_j(t)‖ ≤ C_ini + t·(B_drift + B_coup) + 1e−9` everywhere.
    pub fn check_a_priori_bound(&self, c_ini: f64, speed_bound: f64) -> Result<()> {
        if !speed_bound.is_finite() {
            return Ok(());
        }
        for (s, &t) in self.times.iter().enumerate() {
            let limit = c_ini + t * speed_bound + 1e-9;
            for j in 0..self.nodes {
                let norm = self.state(s, j).iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > limit {
                    return Err(Error::InvalidArgument(format!(
                        "a priori bound violated at node {j}, step {s}: {norm} > {limit}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// CSV with columns `node,step,time,u0,…`, keeping every `thin`-th step
    /// (the final step is always written).
    pub fn write_csv<W: Write>(&self, mut w: W, thin: usize) -> Result<()> {
        let thin = thin.max(1);
        write!(w, "node,step,time")?;
        for c in 0..self.dim {
            write!(w, ",u{c}")?;
        }
        writeln!(w)?;
        for s in 0..self.times.len() {
            if s % thin != 0 && s != self.steps() {
                continue;
            }
            for j in 0..self.nodes {
                write!(w, "{},{},{}", j as i64 + self.label_offset, s, self.times[s])?;
                for x in self.state(s, j) {
                    write!(w, ",{x}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

fn rhs(
    adjacency: &[Vec<u32>],
    fields: &VectorFieldPair,
    dim: usize,
    state: &[f64],
    out: &mut [f64],
) {
    out.par_chunks_mut(dim)
        .enumerate()
        .for_each_init(
            || (vec![0.0; dim], vec![0.0; dim]),
            |(acc, tmp), (k, o)| {
                let u = &state[k * dim..(k + 1) * dim];
                fields.drift.eval(u, o);
                let row = &adjacency[k];
                if !fields.coupling.is_zero() {
                    acc.fill(0.0);
                    for &j in row {
                        let j = j as usize;
                        fields.coupling.eval(u, &state[j * dim..(j + 1) * dim], tmp);
                        for (a, t) in acc.iter_mut().zip(tmp.iter()) {
                            *a += t;
                        }
                    }
                    let inv = 1.0 / row.len() as f64;
                    for (x, a) in o.iter_mut().zip(acc.iter()) {
                        *x += a * inv;
                    }
                }
            },
        );
}

/// Integrates the coupled system on an arbitrary in-neighborhood structure.
pub fn integrate(
    adjacency: &[Vec<u32>],
    init: &InitialCondition,
    fields: &VectorFieldPair,
    horizon: f64,
    steps: usize,
    scheme: Scheme,
) -> Result<TrajectoryBundle> {
    let nodes = adjacency.len();
    let dim = init.dim();
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be >= 1".into()));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon {horizon}")));
    }
    if init.len() != nodes {
        return Err(Error::DimensionMismatch {
            expected: nodes,
            got: init.len(),
        });
    }
    if fields.dim != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: fields.dim,
        });
    }
    if let Some(node) = adjacency.iter().position(Vec::is_empty) {
        return Err(Error::DisconnectedVertex { node });
    }
    if adjacency.iter().flatten().any(|&j| j as usize >= nodes) {
        return Err(Error::InvalidArgument("neighbor index out of range".into()));
    }
    if let Some((a, b)) = init.duplicate_pair() {
        log::warn!("nodes {a} and {b} share an initial state");
    }

    let dt = horizon / steps as f64;
    let width = nodes * dim;
    let mut states = Vec::with_capacity(width * (steps + 1));
    states.extend_from_slice(init.states());
    let mut cur = init.states().to_vec();
    let mut k1 = vec![0.0; width];
    let (mut k2, mut k3, mut k4, mut probe) = match scheme {
        Scheme::Euler => (Vec::new(), Vec::new(), Vec::new(), Vec::new()),
        Scheme::Rk4 => (
            vec![0.0; width],
            vec![0.0; width],
            vec![0.0; width],
            vec![0.0; width],
        ),
    };
    for step in 1..=steps {
        rhs(adjacency, fields, dim, &cur, &mut k1);
        match scheme {
            Scheme::Euler => {
                for (x, d) in cur.iter_mut().zip(&k1) {
                    *x += dt * d;
                }
            }
            Scheme::Rk4 => {
                let half = 0.5 * dt;
                for i in 0..width {
                    probe[i] = cur[i] + half * k1[i];
                }
                rhs(adjacency, fields, dim, &probe, &mut k2);
                for i in 0..width {
                    probe[i] = cur[i] + half * k2[i];
                }
                rhs(adjacency, fields, dim, &probe, &mut k3);
                for i in 0..width {
                    probe[i] = cur[i] + dt * k3[i];
                }
                rhs(adjacency, fields, dim, &probe, &mut k4);
                for i in 0..width {
                    cur[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
        }
        if let Some(i) = cur.iter().position(|x| !x.is_finite()) {
            return Err(Error::BlowUp {
                node: i / dim,
                step,
            });
        }
        states.extend_from_slice(&cur);
    }
    let times = (0..=steps).map(|s| s as f64 * dt).collect();
    Ok(TrajectoryBundle {
        times,
        dim,
        nodes,
        states,
        scheme,
        label_offset: 0,
    })
}

/// Integrates the dynamics on a sampled graph.
pub fn simulate(
    g: &GraphSample,
    init: &InitialCondition,
    fields: &VectorFieldPair,
    horizon: f64,
    steps: usize,
    scheme: Scheme,
) -> Result<TrajectoryBundle> {
    let mut bundle = integrate(g.adjacency(), init, fields, horizon, steps, scheme)?;
    bundle.label_offset = -(g.n() as i64);
    Ok(bundle)
}

/// Step count of the reference solver for an Euler run with `steps` steps.
pub fn reference_steps(steps: usize) -> usize {
    64 * steps
}

/// Uniform empirical measure of the trajectories.
pub fn path_empirical(traj: &TrajectoryBundle) -> PathMeasure {
    let w = 1.0 / traj.nodes() as f64;
    let paths = (0..traj.nodes()).map(|j| (traj.path(j), w));
    PathMeasure::from_weighted_paths(traj.times().to_vec(), traj.dim(), paths)
        .expect("bundle paths share one grid")
}
