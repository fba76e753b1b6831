//! Empirical measures on states, nested neighborhood measures, and their
//! optimal-transport distances.

use std::cmp::Ordering;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{cmp_slices, InitialCondition, Lift};
use crate::error::{Error, Result};
use crate::graph::GraphSample;
use crate::hexfloat;
use crate::transport::{self, ATOM_SUPPORT_CAP};

/// Combined support cap for path-space distances. Larger than the atom cap
/// because a 401-node trajectory ensemble is a routine input.
pub const PATH_SUPPORT_CAP: usize = 4096;

/// Cap on node pairs per level in [`nested_wasserstein`].
pub const NESTED_PAIR_CAP: usize = 1 << 22;

/// Cap on explicit tree nodes in [`DepthMeasure::expand`].
pub const TREE_NODE_CAP: usize = 4_000_000;

const MASS_TOL: f64 = 1e-9;

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Finite weighted point cloud in `R^d`, kept sorted with duplicate points
/// merged.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomMeasure {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl AtomMeasure {
    pub fn new(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.len() != dim * weights.len() {
            return Err(Error::DimensionMismatch {
                expected: dim * weights.len(),
                got: points.len(),
            });
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite atom".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidArgument(format!("atom weight {w}")));
        }
        Ok(Self::canonical(dim, &points, &weights))
    }

    fn canonical(dim: usize, points: &[f64], weights: &[f64]) -> Self {
        let pt = |i: usize| &points[i * dim..(i + 1) * dim];
        let mut order: Vec<usize> = (0..weights.len()).collect();
        order.sort_by(|&a, &b| cmp_slices(pt(a), pt(b)).then(a.cmp(&b)));
        let mut out_p: Vec<f64> = Vec::with_capacity(points.len());
        let mut out_w: Vec<f64> = Vec::with_capacity(weights.len());
        for i in order {
            let same = !out_w.is_empty() && &out_p[out_p.len() - dim..] == pt(i);
            if same {
                *out_w.last_mut().unwrap() += weights[i];
            } else {
                out_p.extend_from_slice(pt(i));
                out_w.push(weights[i]);
            }
        }
        Self {
            dim,
            points: out_p,
            weights: out_w,
        }
    }

    pub fn dirac(point: &[f64]) -> Self {
        Self {
            dim: point.len(),
            points: point.to_vec(),
            weights: vec![1.0],
        }
    }

    /// Uniform measure over the rows (duplicates merged).
    pub fn uniform(dim: usize, points: &[f64]) -> Result<Self> {
        let count = points.len() / dim.max(1);
        Self::new(dim, points.to_vec(), vec![1.0 / count as f64; count])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.points
            .chunks(self.dim)
            .zip(self.weights.iter().copied())
    }

    fn require_probability(&self) -> Result<()> {
        let mass = self.total();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::NotProbability { mass });
        }
        Ok(())
    }
}

/// Exact Wasserstein-1 distance under the Euclidean ground metric.
pub fn wasserstein(p: &AtomMeasure, q: &AtomMeasure) -> Result<f64> {
    if p.dim != q.dim {
        return Err(Error::DimensionMismatch {
            expected: p.dim,
            got: q.dim,
        });
    }
    p.require_probability()?;
    q.require_probability()?;
    let size = p.len() + q.len();
    if size > ATOM_SUPPORT_CAP {
        return Err(Error::OtSizeCap {
            size,
            cap: ATOM_SUPPORT_CAP,
        });
    }
    if p == q {
        return Ok(0.0);
    }
    let plan = transport::solve(&p.weights, &q.weights, |i, j| euclid(p.point(i), q.point(j)))?;
    Ok(plan.cost)
}

/// Graph and sampling parameters a nested measure was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub n: usize,
    pub rho: f64,
    pub seed: u64,
    pub kernel: String,
}

impl Provenance {
    pub fn of(g: &GraphSample) -> Self {
        Self {
            n: g.n(),
            rho: g.rho(),
            seed: g.seed(),
            kernel: g.kernel_id().to_string(),
        }
    }
}

/// Atoms `(u_j, uniform measure on {u_k : k ∈ Ξ_j})` with weight `1/N`.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedEmpiricalMeasure {
    init: InitialCondition,
    neighbors: Vec<Vec<u32>>,
    subs: Vec<AtomMeasure>,
    provenance: Option<Provenance>,
}

pub fn build_nested(g: &GraphSample, init: &InitialCondition) -> Result<NestedEmpiricalMeasure> {
    build_nested_from_adjacency(g.adjacency(), init, Some(Provenance::of(g)))
}

pub fn build_nested_from_adjacency(
    adjacency: &[Vec<u32>],
    init: &InitialCondition,
    provenance: Option<Provenance>,
) -> Result<NestedEmpiricalMeasure> {
    if init.len() != adjacency.len() {
        return Err(Error::DimensionMismatch {
            expected: adjacency.len(),
            got: init.len(),
        });
    }
    let d = init.dim();
    let mut subs = Vec::with_capacity(adjacency.len());
    for (j, row) in adjacency.iter().enumerate() {
        if row.is_empty() {
            return Err(Error::DisconnectedVertex { node: j });
        }
        let mut pts = Vec::with_capacity(row.len() * d);
        for &k in row {
            if k as usize >= adjacency.len() {
                return Err(Error::InvalidArgument(format!("neighbor {k} out of range")));
            }
            pts.extend_from_slice(init.state(k as usize));
        }
        subs.push(AtomMeasure::uniform(d, &pts)?);
    }
    Ok(NestedEmpiricalMeasure {
        init: init.clone(),
        neighbors: adjacency.to_vec(),
        subs,
        provenance,
    })
}

impl NestedEmpiricalMeasure {
    pub fn len(&self) -> usize {
        self.subs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.init.dim()
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.len() as f64
    }

    pub fn point(&self, j: usize) -> &[f64] {
        self.init.state(j)
    }

    pub fn sub(&self, j: usize) -> &AtomMeasure {
        &self.subs[j]
    }

    pub fn init(&self) -> &InitialCondition {
        &self.init
    }

    pub fn adjacency(&self) -> &[Vec<u32>] {
        &self.neighbors
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    /// `(2n+1)^{-1} Σ δ_{u_j}`.
    pub fn flat_marginal(&self) -> AtomMeasure {
        AtomMeasure::uniform(self.dim(), self.init.states()).expect("validated states")
    }

    /// Distinct `(point, sub)` atoms with accumulated weights.
    pub fn canonical_atoms(&self) -> Vec<(Vec<f64>, AtomMeasure, f64)> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        let key = |j: usize| (self.point(j), &self.subs[j]);
        order.sort_by(|&a, &b| cmp_atoms(key(a), key(b)).then(a.cmp(&b)));
        let mut out: Vec<(Vec<f64>, AtomMeasure, f64)> = Vec::new();
        for j in order {
            match out.last_mut() {
                Some(last) if last.0 == self.point(j) && last.1 == self.subs[j] => {
                    last.2 += self.weight()
                }
                _ => out.push((self.point(j).to_vec(), self.subs[j].clone(), self.weight())),
            }
        }
        out
    }

    /// Depth-1 view for the nested metrics.
    pub fn to_depth_measure(&self) -> DepthMeasure {
        DepthMeasure::from_adjacency(&self.neighbors, &self.init, 1)
    }

    /// Pushes atoms and sub-atoms through `lift` (states must be angles).
    pub fn lift_gamma(&self, lift: &Lift) -> Result<NestedEmpiricalMeasure> {
        if self.dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: self.dim(),
            });
        }
        let angles: Vec<f64> = self.init.states().to_vec();
        let init = InitialCondition::from_lift(lift, &angles, None)?;
        build_nested_from_adjacency(&self.neighbors, &init, self.provenance.clone())
    }

    pub fn to_json(&self) -> String {
        let doc = NestedDoc {
            schema: NESTED_SCHEMA.to_string(),
            dim: self.dim(),
            provenance: self.provenance.as_ref().map(|p| ProvenanceDoc {
                n: p.n,
                rho: hexfloat::format(p.rho),
                seed: p.seed,
                kernel: p.kernel.clone(),
            }),
            atoms: (0..self.len())
                .map(|j| AtomDoc {
                    point: self.point(j).iter().map(|&x| hexfloat::format(x)).collect(),
                    weight: hexfloat::format(self.weight()),
                    neighbors: self.neighbors[j].clone(),
                    sub: self.subs[j]
                        .iter()
                        .map(|(p, w)| SubAtomDoc {
                            point: p.iter().map(|&x| hexfloat::format(x)).collect(),
                            weight: hexfloat::format(w),
                        })
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: NestedDoc =
            serde_json::from_str(text).map_err(|e| Error::Parse {
                line: e.line(),
                message: e.to_string(),
            })?;
        if doc.schema != NESTED_SCHEMA {
            return Err(Error::InvalidArgument(format!("unknown schema {}", doc.schema)));
        }
        let hex_vec = |v: &[String]| v.iter().map(|s| hexfloat::parse(s)).collect::<Result<Vec<_>>>();
        let mut rows = Vec::with_capacity(doc.atoms.len());
        let mut adjacency = Vec::with_capacity(doc.atoms.len());
        for a in &doc.atoms {
            let p = hex_vec(&a.point)?;
            if p.len() != doc.dim {
                return Err(Error::DimensionMismatch {
                    expected: doc.dim,
                    got: p.len(),
                });
            }
            rows.push(p);
            adjacency.push(a.neighbors.clone());
        }
        let provenance = match doc.provenance {
            Some(p) => Some(Provenance {
                n: p.n,
                rho: hexfloat::parse(&p.rho)?,
                seed: p.seed,
                kernel: p.kernel,
            }),
            None => None,
        };
        let init = InitialCondition::from_rows(&rows, None)?;
        let nested = build_nested_from_adjacency(&adjacency, &init, provenance)?;
        for (j, a) in doc.atoms.iter().enumerate() {
            let mut pts = Vec::new();
            let mut ws = Vec::new();
            for s in &a.sub {
                pts.extend(hex_vec(&s.point)?);
                ws.push(hexfloat::parse(&s.weight)?);
            }
            let listed = AtomMeasure::new(doc.dim, pts, ws)?;
            if listed != nested.subs[j] {
                return Err(Error::InvalidArgument(format!(
                    "sub-measure of atom {j} disagrees with its neighbor list"
                )));
            }
        }
        Ok(nested)
    }
}

fn cmp_atoms(a: (&[f64], &AtomMeasure), b: (&[f64], &AtomMeasure)) -> Ordering {
    cmp_slices(a.0, b.0)
        .then_with(|| cmp_slices(&a.1.points, &b.1.points))
        .then_with(|| cmp_slices(&a.1.weights, &b.1.weights))
}

const NESTED_SCHEMA: &str = "ldpnet.nested/1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NestedDoc {
    schema: String,
    dim: usize,
    provenance: Option<ProvenanceDoc>,
    atoms: Vec<AtomDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProvenanceDoc {
    n: usize,
    rho: String,
    seed: u64,
    kernel: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AtomDoc {
    point: Vec<String>,
    weight: String,
    neighbors: Vec<u32>,
    sub: Vec<SubAtomDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubAtomDoc {
    point: Vec<String>,
    weight: String,
}

/// Points with weighted child lists; the shared substrate of depth measures.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    dim: usize,
    states: Vec<f64>,
    children: Vec<Vec<(u32, f64)>>,
}

impl Network {
    /// Child weights of every node must be positive and sum to 1; leaf nodes
    /// (no children) are allowed and may only appear at depth 0.
    pub fn new(dim: usize, states: Vec<f64>, children: Vec<Vec<(u32, f64)>>) -> Result<Self> {
        if dim == 0 || states.len() != dim * children.len() {
            return Err(Error::DimensionMismatch {
                expected: dim * children.len(),
                got: states.len(),
            });
        }
        for row in &children {
            if row.is_empty() {
                continue;
            }
            let mut mass = 0.0;
            for &(c, w) in row {
                if c as usize >= children.len() || !(w > 0.0 && w.is_finite()) {
                    return Err(Error::InvalidArgument(format!("bad child ({c}, {w})")));
                }
                mass += w;
            }
            if (mass - 1.0).abs() > MASS_TOL {
                return Err(Error::NotProbability { mass });
            }
        }
        Ok(Self {
            dim,
            states,
            children,
        })
    }

    fn from_adjacency(adjacency: &[Vec<u32>], init: &InitialCondition) -> Self {
        let children = adjacency
            .iter()
            .map(|row| {
                let w = 1.0 / row.len() as f64;
                row.iter().map(|&k| (k, w)).collect()
            })
            .collect();
        Self {
            dim: init.dim(),
            states: init.states().to_vec(),
            children,
        }
    }

    pub fn len(&self) -> usize {
        self.children.len()
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty()
    }

    pub fn state(&self, j: usize) -> &[f64] {
        &self.states[j * self.dim..(j + 1) * self.dim]
    }

    pub fn children(&self, j: usize) -> &[(u32, f64)] {
        &self.children[j]
    }
}

/// Element of the depth-`k` nested space, stored by node indirection.
///
/// Depth 0 is `Σ w_r δ_{x_r}`. Depth `k ≥ 1` is `Σ w_r δ_{(x_r, S_{k−1}(r))}`,
/// where `S_l(j)` is the depth-`l` measure with roots the children of `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMeasure {
    network: Arc<Network>,
    roots: Vec<(u32, f64)>,
    depth: usize,
}

impl DepthMeasure {
    pub fn new(network: Arc<Network>, roots: Vec<(u32, f64)>, depth: usize) -> Result<Self> {
        let mass: f64 = roots.iter().map(|r| r.1).sum();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::NotProbability { mass });
        }
        let mut frontier: Vec<u32> = Vec::new();
        for &(r, w) in &roots {
            if r as usize >= network.len() || !(w > 0.0) {
                return Err(Error::InvalidArgument(format!("bad root ({r}, {w})")));
            }
            frontier.push(r);
        }
        for _ in 0..depth {
            frontier.sort_unstable();
            frontier.dedup();
            let mut next = Vec::new();
            for &j in &frontier {
                let row = network.children(j as usize);
                if row.is_empty() {
                    return Err(Error::DepthMismatch {
                        left: depth,
                        right: 0,
                    });
                }
                next.extend(row.iter().map(|c| c.0));
            }
            frontier = next;
        }
        Ok(Self {
            network,
            roots,
            depth,
        })
    }

    pub(crate) fn from_adjacency(
        adjacency: &[Vec<u32>],
        init: &InitialCondition,
        depth: usize,
    ) -> Self {
        let network = Arc::new(Network::from_adjacency(adjacency, init));
        let w = 1.0 / adjacency.len() as f64;
        let roots = (0..adjacency.len() as u32).map(|j| (j, w)).collect();
        Self {
            network,
            roots,
            depth,
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn roots(&self) -> &[(u32, f64)] {
        &self.roots
    }

    /// Same measure read at a smaller depth.
    pub fn truncate(&self, depth: usize) -> Result<Self> {
        if depth > self.depth {
            return Err(Error::DepthMismatch {
                left: self.depth,
                right: depth,
            });
        }
        Ok(Self {
            network: Arc::clone(&self.network),
            roots: self.roots.clone(),
            depth,
        })
    }

    /// Explicit tree. Size grows like degree^depth, so depth is limited to 3.
    pub fn expand(&self) -> Result<TreeMeasure> {
        if self.depth > 3 {
            return Err(Error::SizeCap {
                what: "tree depth",
                size: self.depth,
                cap: 3,
            });
        }
        let mut budget = TREE_NODE_CAP;
        let mut atoms = Vec::with_capacity(self.roots.len());
        for &(r, w) in &self.roots {
            atoms.push((self.expand_node(r as usize, self.depth, &mut budget)?, w));
        }
        Ok(TreeMeasure {
            depth: self.depth,
            atoms,
        })
    }

    fn expand_node(&self, j: usize, level: usize, budget: &mut usize) -> Result<TreeNode> {
        if *budget == 0 {
            return Err(Error::SizeCap {
                what: "tree nodes",
                size: TREE_NODE_CAP + 1,
                cap: TREE_NODE_CAP,
            });
        }
        *budget -= 1;
        let mut children = Vec::new();
        if level > 0 {
            for &(c, w) in self.network.children(j) {
                children.push((self.expand_node(c as usize, level - 1, budget)?, w));
            }
        }
        Ok(TreeNode {
            point: self.network.state(j).to_vec(),
            children,
        })
    }
}

/// Explicit node of a nested measure; leaves carry depth-0 points.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub point: Vec<f64>,
    pub children: Vec<(TreeNode, f64)>,
}

/// Explicitly expanded depth measure.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeMeasure {
    pub depth: usize,
    pub atoms: Vec<(TreeNode, f64)>,
}

impl TreeMeasure {
    pub fn node_count(&self) -> usize {
        fn count(n: &TreeNode) -> usize {
            1 + n.children.iter().map(|c| count(&c.0)).sum::<usize>()
        }
        self.atoms.iter().map(|a| count(&a.0)).sum()
    }
}

/// Depth-`m` unroll `Φ_m` of the network measure.
pub fn unroll_phi(g: &GraphSample, init: &InitialCondition, m: usize) -> Result<DepthMeasure> {
    if m == 0 {
        return Err(Error::InvalidArgument("unroll depth must be >= 1".into()));
    }
    if init.len() != g.size() {
        return Err(Error::DimensionMismatch {
            expected: g.size(),
            got: init.len(),
        });
    }
    if let Some((first, second)) = init.duplicate_pair() {
        return Err(Error::ConditionalKernelAmbiguous { first, second });
    }
    if let Some(node) = g.adjacency().iter().position(Vec::is_empty) {
        return Err(Error::DisconnectedVertex { node });
    }
    Ok(DepthMeasure::from_adjacency(g.adjacency(), init, m))
}

struct LevelIndex {
    nodes: Vec<u32>,
    pos: Vec<usize>,
}

impl LevelIndex {
    fn new(mut nodes: Vec<u32>, size: usize) -> Self {
        nodes.sort_unstable();
        nodes.dedup();
        let mut pos = vec![usize::MAX; size];
        for (i, &n) in nodes.iter().enumerate() {
            pos[n as usize] = i;
        }
        Self { nodes, pos }
    }

    fn next(&self, net: &Network) -> Self {
        let kids = self
            .nodes
            .iter()
            .flat_map(|&j| net.children(j as usize).iter().map(|c| c.0))
            .collect();
        Self::new(kids, net.len())
    }
}

/// Recursive Wasserstein distance `d_k`: ground cost between level-`k`
/// atoms is the Euclidean point distance plus `d_{k−1}` of their
/// sub-measures.
pub fn nested_wasserstein(p: &DepthMeasure, q: &DepthMeasure, k: usize) -> Result<f64> {
    if p.depth != k || q.depth != k {
        return Err(Error::DepthMismatch {
            left: p.depth,
            right: q.depth,
        });
    }
    if p.network.dim != q.network.dim {
        return Err(Error::DimensionMismatch {
            expected: p.network.dim,
            got: q.network.dim,
        });
    }
    let (np, nq) = (&*p.network, &*q.network);

    // levels[l] holds the nodes whose S_l is needed, l = k−1 down to 0
    let mut levels_p = Vec::with_capacity(k);
    let mut levels_q = Vec::with_capacity(k);
    if k > 0 {
        levels_p.push(LevelIndex::new(p.roots.iter().map(|r| r.0).collect(), np.len()));
        levels_q.push(LevelIndex::new(q.roots.iter().map(|r| r.0).collect(), nq.len()));
        for _ in 1..k {
            let a = levels_p.last().unwrap().next(np);
            let b = levels_q.last().unwrap().next(nq);
            levels_p.push(a);
            levels_q.push(b);
        }
        levels_p.reverse();
        levels_q.reverse();
    }

    let mut below: Option<(&LevelIndex, &LevelIndex, Vec<f64>)> = None;
    let mut storage: Vec<Vec<f64>> = Vec::with_capacity(k);
    for l in 0..k {
        let (ip, iq) = (&levels_p[l], &levels_q[l]);
        let pairs = ip.nodes.len() * iq.nodes.len();
        if pairs > NESTED_PAIR_CAP {
            return Err(Error::SizeCap {
                what: "nested distance pairs",
                size: pairs,
                cap: NESTED_PAIR_CAP,
            });
        }
        let cols = iq.nodes.len();
        let prev = below.as_ref();
        let values: Vec<f64> = (0..pairs)
            .into_par_iter()
            .map(|idx| {
                let a = ip.nodes[idx / cols] as usize;
                let b = iq.nodes[idx % cols] as usize;
                level_ot(np, nq, np.children(a), nq.children(b), prev)
            })
            .collect::<Result<_>>()?;
        storage.push(values);
        below = Some((ip, iq, storage.last().unwrap().clone()));
    }
    level_ot(np, nq, &p.roots, &q.roots, below.as_ref())
}

fn level_ot(
    np: &Network,
    nq: &Network,
    a: &[(u32, f64)],
    b: &[(u32, f64)],
    below: Option<&(&LevelIndex, &LevelIndex, Vec<f64>)>,
) -> Result<f64> {
    let size = a.len() + b.len();
    if size > ATOM_SUPPORT_CAP {
        return Err(Error::OtSizeCap {
            size,
            cap: ATOM_SUPPORT_CAP,
        });
    }
    let wa: Vec<f64> = a.iter().map(|x| x.1).collect();
    let wb: Vec<f64> = b.iter().map(|x| x.1).collect();
    let cost = |i: usize, j: usize| {
        let (x, y) = (a[i].0 as usize, b[j].0 as usize);
        let mut c = euclid(np.state(x), nq.state(y));
        if let Some((ip, iq, d)) = below {
            c += d[ip.pos[x] * iq.nodes.len() + iq.pos[y]];
        }
        c
    };
    Ok(transport::solve(&wa, &wb, cost)?.cost)
}

/// Positive measure on `S¹ × {0, 1}`.
#[derive(Debug, Clone, PartialEq)]
pub enum PlusMeasure {
    /// `((θ, w), weight)` atoms.
    Atoms(Vec<(f64, bool, f64)>),
    /// Bin densities of the `w = 1` and `w = 0` parts on a shared grid.
    Densities {
        connected: crate::circle::MassDensity,
        disconnected: crate::circle::MassDensity,
    },
}

impl PlusMeasure {
    /// `(ρ(2n+1))^{−1} Σ_k δ_{(θ_k, w^{jk})}` for row `j`.
    pub fn tilde(g: &GraphSample, j: usize) -> Self {
        let w = 1.0 / (g.rho() * g.size() as f64);
        let row = g.neighbors(j);
        let atoms = g
            .positions()
            .iter()
            .enumerate()
            .map(|(k, &theta)| (theta, row.binary_search(&(k as u32)).is_ok(), w))
            .collect();
        PlusMeasure::Atoms(atoms)
    }

    /// `ν(w = 1)`
    pub fn connected_mass(&self) -> f64 {
        match self {
            PlusMeasure::Atoms(a) => a.iter().filter(|x| x.1).map(|x| x.2).sum(),
            PlusMeasure::Densities { connected, .. } => {
                crate::circle::circle_mean(connected.values()).unwrap_or(0.0)
            }
        }
    }
}

/// `π·ν = ν(· , w=1) / ν(w=1)` as a measure on angles.
pub fn project_pi(p: &PlusMeasure) -> Result<AtomMeasure> {
    let (pts, ws): (Vec<f64>, Vec<f64>) = match p {
        PlusMeasure::Atoms(atoms) => {
            if atoms.iter().any(|a| !(a.2 >= 0.0 && a.2.is_finite())) {
                return Err(Error::InvalidArgument("negative plus-measure weight".into()));
            }
            atoms.iter().filter(|a| a.1 && a.2 > 0.0).map(|a| (a.0, a.2)).unzip()
        }
        PlusMeasure::Densities { connected, .. } => {
            let grid = crate::circle::Grid::new(connected.values().len())?;
            connected
                .values()
                .iter()
                .enumerate()
                .filter(|(_, &g)| g > 0.0)
                .map(|(i, &g)| (grid.midpoint(i), g))
                .unzip()
        }
    };
    let mass: f64 = ws.iter().sum();
    if !(mass > 0.0) {
        return Err(Error::PiUndefined);
    }
    AtomMeasure::new(1, pts, ws.into_iter().map(|w| w / mass).collect())
}

/// Weighted trajectories on one shared time grid, sorted and merged.
#[derive(Debug, Clone, PartialEq)]
pub struct PathMeasure {
    times: Vec<f64>,
    dim: usize,
    paths: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl PathMeasure {
    /// Each path has layout `[step][component]` on `times`.
    pub fn from_weighted_paths<I>(times: Vec<f64>, dim: usize, paths: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<f64>, f64)>,
    {
        if times.is_empty() || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("time grid not increasing".into()));
        }
        let mut items: Vec<(Vec<f64>, f64)> = paths.into_iter().collect();
        for (p, w) in &items {
            if p.len() != times.len() * dim {
                return Err(Error::DimensionMismatch {
                    expected: times.len() * dim,
                    got: p.len(),
                });
            }
            if !(*w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidArgument(format!("path weight {w}")));
            }
        }
        items.sort_by(|a, b| cmp_slices(&a.0, &b.0));
        let mut out_p: Vec<Vec<f64>> = Vec::with_capacity(items.len());
        let mut out_w: Vec<f64> = Vec::with_capacity(items.len());
        for (p, w) in items {
            if out_p.last() == Some(&p) {
                *out_w.last_mut().unwrap() += w;
            } else {
                out_p.push(p);
                out_w.push(w);
            }
        }
        Ok(Self {
            times,
            dim,
            paths: out_p,
            weights: out_w,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn path(&self, i: usize) -> &[f64] {
        &self.paths[i]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn terminal(&self, i: usize) -> &[f64] {
        let p = &self.paths[i];
        &p[p.len() - self.dim..]
    }

    /// Linear interpolation onto `times` (must lie within the current span).
    pub fn resample(&self, times: &[f64]) -> Result<PathMeasure> {
        let (t0, t1) = (self.times[0], *self.times.last().unwrap());
        let tol = 1e-12 * (t1 - t0).abs().max(1.0);
        if times.iter().any(|&t| t < t0 - tol || t > t1 + tol) {
            return Err(Error::InvalidArgument("resample grid outside path span".into()));
        }
        let d = self.dim;
        let mut locs = Vec::with_capacity(times.len());
        let mut seg = 0;
        for &t in times {
            while seg + 2 < self.times.len() && self.times[seg + 1] <= t {
                seg += 1;
            }
            let (a, b) = (self.times[seg], self.times.get(seg + 1).copied().unwrap_or(t1));
            let frac = if b > a { ((t - a) / (b - a)).clamp(0.0, 1.0) } else { 0.0 };
            locs.push((seg, frac));
        }
        let paths = self.paths.iter().zip(&self.weights).map(|(p, &w)| {
            let mut out = Vec::with_capacity(times.len() * d);
            for &(s, frac) in &locs {
                let next = (s + 1).min(self.times.len() - 1);
                for c in 0..d {
                    let x = p[s * d + c];
                    let y = p[next * d + c];
                    out.push(if frac == 0.0 { x } else if frac == 1.0 { y } else { x + frac * (y - x) });
                }
            }
            (out, w)
        });
        PathMeasure::from_weighted_paths(times.to_vec(), d, paths.collect::<Vec<_>>())
    }
}

/// Union of two time grids, merging points closer than a relative `1e−12`.
pub fn common_grid(a: &[f64], b: &[f64]) -> Vec<f64> {
    let span = a
        .iter()
        .chain(b)
        .fold(0.0f64, |m, t| m.max(t.abs()))
        .max(1.0);
    let mut all: Vec<f64> = a.iter().chain(b).copied().collect();
    all.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::with_capacity(all.len());
    for t in all {
        if out.last().is_none_or(|&l| t - l > 1e-12 * span) {
            out.push(t);
        }
    }
    out
}

/// Wasserstein distance between path measures with sup-over-time Euclidean
/// ground metric, evaluated on the union of both grids after linear
/// resampling. Exact for piecewise-linear paths.
pub fn path_wasserstein(p: &PathMeasure, q: &PathMeasure) -> Result<f64> {
    if p.dim != q.dim {
        return Err(Error::DimensionMismatch {
            expected: p.dim,
            got: q.dim,
        });
    }
    for m in [p, q] {
        let mass = m.total();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::NotProbability { mass });
        }
    }
    let size = p.len() + q.len();
    if size > PATH_SUPPORT_CAP {
        return Err(Error::OtSizeCap {
            size,
            cap: PATH_SUPPORT_CAP,
        });
    }
    let (t0p, t0q) = (p.times[0], q.times[0]);
    let (t1p, t1q) = (*p.times.last().unwrap(), *q.times.last().unwrap());
    let tol = 1e-12 * t1p.abs().max(1.0);
    if (t0p - t0q).abs() > tol || (t1p - t1q).abs() > tol {
        return Err(Error::InvalidArgument("path measures span different horizons".into()));
    }
    let (pp, qq);
    let (p, q) = if p.times == q.times {
        (p, q)
    } else {
        let grid = common_grid(&p.times, &q.times);
        pp = p.resample(&grid)?;
        qq = q.resample(&grid)?;
        (&pp, &qq)
    };
    if p == q {
        return Ok(0.0);
    }
    let d = p.dim;
    let steps = p.times.len();
    let cost: Vec<f64> = (0..p.len() * q.len())
        .into_par_iter()
        .map(|idx| {
            let (a, b) = (&p.paths[idx / q.len()], &q.paths[idx % q.len()]);
            (0..steps)
                .map(|s| euclid(&a[s * d..(s + 1) * d], &b[s * d..(s + 1) * d]))
                .fold(0.0, f64::max)
        })
        .collect();
    let cols = q.len();
    Ok(transport::solve(&p.weights, &q.weights, |i, j| cost[i * cols + j])?.cost)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[f64], weights: &[f64]) -> AtomMeasure {
        AtomMeasure::new(1, points.to_vec(), weights.to_vec()).unwrap()
    }

    #[test]
    fn wasserstein_examples() {
        let a = AtomMeasure::dirac(&[0.0, 0.0]);
        let b = AtomMeasure::dirac(&[3.0, 4.0]);
        assert_eq!(wasserstein(&a, &b).unwrap(), 5.0);
        assert_eq!(wasserstein(&a, &a).unwrap(), 0.0);
        let p = line(&[0.0, 1.0], &[0.5, 0.5]);
        let q = line(&[0.5, 1.5], &[0.5, 0.5]);
        assert!((wasserstein(&p, &q).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn wasserstein_errors() {
        let p = line(&[0.0], &[0.5]);
        let q = line(&[0.0], &[1.0]);
        assert!(matches!(wasserstein(&p, &q), Err(Error::NotProbability { .. })));
        let pts: Vec<f64> = (0..300).map(f64::from).collect();
        let big = AtomMeasure::uniform(1, &pts).unwrap();
        assert!(matches!(
            wasserstein(&big, &big),
            Err(Error::OtSizeCap { size: 600, cap: 512 })
        ));
    }

    #[test]
    fn atoms_merge_duplicates() {
        let m = line(&[1.0, 0.0, 1.0], &[0.25, 0.5, 0.25]);
        assert_eq!(m.len(), 2);
        assert_eq!(m.point(0), &[0.0]);
        assert_eq!(m.weight(1), 0.5);
    }

    #[test]
    fn nested_from_special_graphs() {
        let init = InitialCondition::new(1, vec![-1.0, 0.2, 0.7], None).unwrap();
        let g = GraphSample::self_loops_only(1);
        let nu = build_nested(&g, &init).unwrap();
        for j in 0..3 {
            assert_eq!(nu.sub(j), &AtomMeasure::dirac(init.state(j)));
        }
        let g = GraphSample::complete(1);
        let nu = build_nested(&g, &init).unwrap();
        for j in 0..3 {
            assert_eq!(nu.sub(j), &nu.flat_marginal());
            assert!(nu.sub(j).weights().iter().all(|&w| w == 1.0 / 3.0));
        }
    }

    #[test]
    fn disconnected_vertex() {
        let init = InitialCondition::new(1, vec![0.0, 1.0], None).unwrap();
        assert_eq!(
            build_nested_from_adjacency(&[vec![0, 1], vec![]], &init, None),
            Err(Error::DisconnectedVertex { node: 1 })
        );
    }

    #[test]
    fn nested_depth_one_forced_coupling() {
        let net = |x: f64, a: f64| {
            Arc::new(Network::new(1, vec![x, a], vec![vec![(1, 1.0)], vec![]]).unwrap())
        };
        let p = DepthMeasure::new(net(0.0, 1.0), vec![(0, 1.0)], 1).unwrap();
        let q = DepthMeasure::new(net(2.0, -0.5), vec![(0, 1.0)], 1).unwrap();
        let d = nested_wasserstein(&p, &q, 1).unwrap();
        assert!((d - (2.0 + 1.5)).abs() < 1e-15);
        assert_eq!(nested_wasserstein(&p, &p, 1).unwrap(), 0.0);
        assert!(matches!(
            nested_wasserstein(&p, &q.truncate(0).unwrap(), 1),
            Err(Error::DepthMismatch { .. })
        ));
    }

    #[test]
    fn unroll_restricted_to_depth_one_matches_nested() {
        let g = GraphSample::from_neighbors(
            2,
            0.5,
            1,
            "test",
            vec![vec![1], vec![0, 4], vec![3], vec![], vec![2, 0]],
        )
        .unwrap();
        let init = InitialCondition::new(1, vec![0.1, 0.4, -0.3, 0.9, 0.0], None).unwrap();
        let nu = build_nested(&g, &init).unwrap();
        let phi = unroll_phi(&g, &init, 3).unwrap();
        let d = nested_wasserstein(&phi.truncate(1).unwrap(), &nu.to_depth_measure(), 1).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn unroll_rejects_duplicate_states() {
        let g = GraphSample::complete(1);
        let init = InitialCondition::new(1, vec![0.5, 0.1, 0.5], None).unwrap();
        assert_eq!(
            unroll_phi(&g, &init, 2),
            Err(Error::ConditionalKernelAmbiguous { first: 0, second: 2 })
        );
    }

    #[test]
    fn lift_examples() {
        let g = GraphSample::complete(1);
        let angles = InitialCondition::from_lift(&Lift::Angle, g.positions(), None).unwrap();
        let nu = build_nested(&g, &angles).unwrap();
        let c = nu.lift_gamma(&Lift::Constant(vec![2.0, -1.0])).unwrap();
        for j in 0..3 {
            assert_eq!(c.point(j), &[2.0, -1.0]);
            assert_eq!(c.sub(j), &AtomMeasure::dirac(&[2.0, -1.0]));
        }
        assert_eq!(c.canonical_atoms().len(), 1);
        let e = nu.lift_gamma(&Lift::Embedding { radius: 1.0 }).unwrap();
        for j in 0..3 {
            let p = e.point(j);
            assert!((p[0].hypot(p[1]) - 1.0).abs() < 1e-15);
        }
        assert_eq!(e.canonical_atoms().len(), 3);
        let total: f64 = e.canonical_atoms().iter().map(|a| a.2).sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn project_pi_examples() {
        let (t0, t1) = (0.3, -1.2);
        let one = project_pi(&PlusMeasure::Atoms(vec![(t0, true, 0.7)])).unwrap();
        assert_eq!(one, AtomMeasure::dirac(&[t0]));
        let half = project_pi(&PlusMeasure::Atoms(vec![(t0, true, 1.0), (t1, false, 1.0)])).unwrap();
        assert_eq!(half, AtomMeasure::dirac(&[t0]));
        let m = project_pi(&PlusMeasure::Atoms(vec![(t0, true, 1.0), (t1, true, 3.0)])).unwrap();
        assert_eq!(m, line(&[t1, t0], &[0.75, 0.25]));
        assert_eq!(
            project_pi(&PlusMeasure::Atoms(vec![(t0, false, 1.0)])),
            Err(Error::PiUndefined)
        );
    }

    #[test]
    fn tilde_row_has_self_loop() {
        let g = GraphSample::self_loops_only(2);
        let t = PlusMeasure::tilde(&g, 3);
        let pi = project_pi(&t).unwrap();
        assert_eq!(pi, AtomMeasure::dirac(&[g.positions()[3]]));
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let g = GraphSample::from_neighbors(1, 0.3, 9, "k", vec![vec![1, 2], vec![], vec![0]])
            .unwrap();
        let init =
            InitialCondition::new(2, vec![0.1, 1.0 / 3.0, -2e-310, 0.7, 1e300, -0.0], None)
                .unwrap();
        let nu = build_nested(&g, &init).unwrap();
        let text = nu.to_json();
        let back = NestedEmpiricalMeasure::from_json(&text).unwrap();
        assert_eq!(back, nu);
        for j in 0..3 {
            for (a, b) in back.point(j).iter().zip(nu.point(j)) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn path_measure_resampling() {
        let pm = PathMeasure::from_weighted_paths(vec![0.0, 1.0], 1, vec![(vec![0.0, 2.0], 1.0)])
            .unwrap();
        let fine = pm.resample(&[0.0, 0.25, 0.5, 1.0]).unwrap();
        assert_eq!(fine.path(0), &[0.0, 0.5, 1.0, 2.0]);
        let other =
            PathMeasure::from_weighted_paths(vec![0.0, 0.5, 1.0], 1, vec![(vec![0.0, 1.5, 2.0], 1.0)])
                .unwrap();
        assert!((path_wasserstein(&pm, &other).unwrap() - 0.5).abs() < 1e-15);
    }
}
