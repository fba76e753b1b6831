//! Circle geometry, connection kernels, grid densities and midpoint quadrature.
//!
//! Every integral `(1/2π)∫_{S¹} f(θ) dθ` is evaluated as the mean of `f` over
//! the midpoints of `M` uniform bins of `(−π, π]`, which is exact for
//! bin-constant integrands.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TWO_PI: f64 = 2.0 * PI;

/// Default number of quadrature bins.
pub const DEFAULT_BINS: usize = 1024;

/// Canonical representative of `x` in `(−π, π]`.
pub fn canonical_angle(x: f64) -> f64 {
    let r = (x + PI).rem_euclid(TWO_PI) - PI;
    if r <= -PI {
        PI
    } else {
        r
    }
}

/// Uniform grid of `m` bins on `(−π, π]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    m: usize,
}

impl Grid {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::DegenerateGrid);
        }
        Ok(Self { m })
    }

    pub fn bins(&self) -> usize {
        self.m
    }

    pub fn width(&self) -> f64 {
        TWO_PI / self.m as f64
    }

    pub fn midpoint(&self, i: usize) -> f64 {
        -PI + (i as f64 + 0.5) * self.width()
    }

    pub fn midpoints(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.m).map(move |i| self.midpoint(i))
    }

    /// Bin containing the angle (after canonicalization).
    pub fn bin_of(&self, theta: f64) -> usize {
        let t = canonical_angle(theta) + PI;
        ((t / self.width()).floor() as usize).min(self.m - 1)
    }

    pub fn sample<F: Fn(f64) -> f64>(&self, f: F) -> Vec<f64> {
        self.midpoints().map(f).collect()
    }
}

impl Default for Grid {
    fn default() -> Self {
        Self { m: DEFAULT_BINS }
    }
}

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Midpoint-rule circle average `(1/M) Σ f_i`.
pub fn circle_mean<F: AsRef<[f64]> + ?Sized>(f: &F) -> Result<f64> {
    let v = f.as_ref();
    if v.is_empty() {
        return Err(Error::DegenerateGrid);
    }
    Ok(compensated_sum(v.iter().copied()) / v.len() as f64)
}

/// `z·log(z/c)` with the `0·log 0 = 0` convention.
#[inline]
pub fn xlog_ratio(z: f64, c: f64) -> f64 {
    if z == 0.0 {
        0.0
    } else {
        z * (z / c).ln()
    }
}

/// Bounded test function sampled on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction(Vec<f64>);

impl GridFunction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::DegenerateGrid);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "grid function entry {i} is not finite"
            )));
        }
        Ok(Self(values))
    }

    pub fn from_fn<F: Fn(f64) -> f64>(grid: &Grid, f: F) -> Result<Self> {
        Self::new(grid.sample(f))
    }

    pub fn constant(grid: &Grid, c: f64) -> Result<Self> {
        Self::new(vec![c; grid.bins()])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for GridFunction {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Probability density `ζ` w.r.t. `dθ/2π`: normalized so that `circle_mean(ζ) = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircleDensity(Vec<f64>);

/// Positive-measure density `γ` w.r.t. `dθ/2π`, total mass unconstrained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassDensity(Vec<f64>);

impl CircleDensity {
    /// Wraps raw bin values; use [`validate_density`] to inspect them.
    pub fn from_values(values: Vec<f64>) -> Self {
        Self(values)
    }

    /// Rescales nonnegative weights so the density integrates to one.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        let d = Self(values);
        let diag = validate_density(&d)?;
        if !diag.negative_bins.is_empty() {
            return Err(Error::NegativeDensity {
                first: diag.negative_bins[0],
                count: diag.negative_bins.len(),
            });
        }
        let mean = circle_mean(&d.0)?;
        if mean <= 0.0 {
            return Err(Error::InvalidArgument(
                "cannot normalize a zero density".into(),
            ));
        }
        Ok(Self(d.0.into_iter().map(|v| v / mean).collect()))
    }

    pub fn uniform(grid: &Grid) -> Self {
        Self(vec![1.0; grid.bins()])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn scaled(&self, a: f64) -> MassDensity {
        MassDensity(self.0.iter().map(|v| a * v).collect())
    }
}

impl MassDensity {
    pub fn from_values(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for CircleDensity {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for MassDensity {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub trait GridDensity: AsRef<[f64]> {
    /// Whether the density must integrate to one.
    const PROBABILITY: bool;
}

impl GridDensity for CircleDensity {
    const PROBABILITY: bool = true;
}

impl GridDensity for MassDensity {
    const PROBABILITY: bool = false;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityDiagnostics {
    pub negative_bins: Vec<usize>,
    /// `|circle_mean(ζ) − 1|` for probability densities, `None` otherwise.
    pub normalization_error: Option<f64>,
    /// Bins where the `0·log 0` convention applies.
    pub zero_bins: Vec<usize>,
}

impl DensityDiagnostics {
    pub fn is_valid(&self, tol: f64) -> bool {
        self.negative_bins.is_empty() && self.normalization_error.is_none_or(|e| e <= tol)
    }
}

pub fn validate_density<D: GridDensity>(d: &D) -> Result<DensityDiagnostics> {
    let v = d.as_ref();
    if v.is_empty() {
        return Err(Error::DegenerateGrid);
    }
    if let Some(bin) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFiniteDensity { bin });
    }
    let negative_bins = (0..v.len()).filter(|&i| v[i] < 0.0).collect();
    let zero_bins = (0..v.len()).filter(|&i| v[i] == 0.0).collect();
    let normalization_error = if D::PROBABILITY {
        Some((circle_mean(v)? - 1.0).abs())
    } else {
        None
    };
    Ok(DensityDiagnostics {
        negative_bins,
        normalization_error,
        zero_bins,
    })
}

/// Partition of the circle into `Q` half-open arcs `[b_i, b_{i+1})`, numbered
/// counter-clockwise from the first boundary given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArcPartition {
    boundaries: Vec<f64>,
}

impl ArcPartition {
    pub fn new(boundaries: Vec<f64>) -> Result<Self> {
        if boundaries.is_empty() {
            return Err(Error::InvalidArgument(
                "arc partition needs at least one boundary".into(),
            ));
        }
        let mut b: Vec<f64> = boundaries.into_iter().map(canonical_angle).collect();
        let b0 = b[0];
        b.sort_by(|x, y| (x - b0).rem_euclid(TWO_PI).total_cmp(&(y - b0).rem_euclid(TWO_PI)));
        if b.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("duplicate arc boundary".into()));
        }
        Ok(Self { boundaries: b })
    }

    /// The whole circle as a single arc.
    pub fn whole() -> Self {
        Self {
            boundaries: vec![-PI / 2.0],
        }
    }

    /// `q` equal arcs, the first starting at `start`.
    pub fn equal(q: usize, start: f64) -> Result<Self> {
        if q == 0 {
            return Err(Error::InvalidArgument("need at least one arc".into()));
        }
        Self::new((0..q).map(|i| start + TWO_PI * i as f64 / q as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.boundaries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boundaries.is_empty()
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    fn offset(&self, theta: f64) -> f64 {
        (canonical_angle(theta) - self.boundaries[0]).rem_euclid(TWO_PI)
    }

    pub fn arc_of(&self, theta: f64) -> usize {
        let t = self.offset(theta);
        let mut idx = 0;
        for (i, &b) in self.boundaries.iter().enumerate().skip(1) {
            if (b - self.boundaries[0]).rem_euclid(TWO_PI) <= t {
                idx = i;
            } else {
                break;
            }
        }
        idx
    }

    /// Arc `i` as a closed [`CircleArc`] (its closure).
    pub fn arc(&self, i: usize) -> CircleArc {
        let q = self.boundaries.len();
        let start = self.boundaries[i];
        let end = self.boundaries[(i + 1) % q];
        CircleArc {
            start,
            length: if q == 1 {
                TWO_PI
            } else {
                (end - start).rem_euclid(TWO_PI)
            },
        }
    }
}

/// Closed arc running counter-clockwise from `start` over `length ∈ (0, 2π]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircleArc {
    pub start: f64,
    pub length: f64,
}

impl CircleArc {
    pub fn new(start: f64, length: f64) -> Result<Self> {
        if !(length > 0.0 && length <= TWO_PI) {
            return Err(Error::InvalidArgument(format!(
                "arc length {length} outside (0, 2π]"
            )));
        }
        Ok(Self {
            start: canonical_angle(start),
            length,
        })
    }

    pub fn contains(&self, theta: f64) -> bool {
        if self.length >= TWO_PI {
            return true;
        }
        let t = (canonical_angle(theta) - self.start).rem_euclid(TWO_PI);
        t <= self.length
    }

    /// Normalized length `length / 2π`.
    pub fn fraction(&self) -> f64 {
        self.length / TWO_PI
    }

    /// Grid bins whose midpoint lies in the arc.
    pub fn bins(&self, grid: &Grid) -> Vec<usize> {
        (0..grid.bins())
            .filter(|&i| self.contains(grid.midpoint(i)))
            .collect()
    }

    pub fn overlaps(&self, other: &CircleArc) -> bool {
        let d = (other.start - self.start).rem_euclid(TWO_PI);
        let e = (self.start - other.start).rem_euclid(TWO_PI);
        d <= self.length || e <= other.length
    }
}

type KernelFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Shape {
    Constant(f64),
    Cosine { base: f64, amplitude: f64 },
    ExpCosine { scale: f64, concentration: f64 },
    Piecewise { arcs: ArcPartition, values: Vec<Vec<f64>> },
    Table { m: usize, values: Vec<f64> },
    Custom(KernelFn),
}

/// Connection kernel `C(α, θ)` on the torus.
///
/// `eval(α, θ)` is the connection intensity from a node at `α` towards a node
/// at `θ`; an edge is present with probability `min(1, ρ·C(α, θ))`.
#[derive(Clone)]
pub struct ConnectionKernel {
    shape: Shape,
    lower: f64,
    upper: f64,
    id: String,
}

impl fmt::Debug for ConnectionKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConnectionKernel")
            .field("id", &self.id)
            .field("lower", &self.lower)
            .field("upper", &self.upper)
            .finish()
    }
}

impl ConnectionKernel {
    pub fn constant(c: f64) -> Result<Self> {
        if !(c.is_finite() && c >= 0.0) {
            return Err(Error::InvalidArgument(format!("constant kernel {c}")));
        }
        Ok(Self {
            shape: Shape::Constant(c),
            lower: c,
            upper: c,
            id: format!("constant(c={c})"),
        })
    }

    /// `base + amplitude·cos(θ − α)`.
    pub fn cosine(base: f64, amplitude: f64) -> Result<Self> {
        if !(base.is_finite() && amplitude.is_finite() && base >= amplitude.abs()) {
            return Err(Error::InvalidArgument(format!(
                "cosine kernel needs base >= |amplitude| (base {base}, amplitude {amplitude})"
            )));
        }
        Ok(Self {
            shape: Shape::Cosine { base, amplitude },
            lower: base - amplitude.abs(),
            upper: base + amplitude.abs(),
            id: format!("cosine(base={base},amplitude={amplitude})"),
        })
    }

    /// `scale·exp(concentration·cos(θ − α))`.
    pub fn exp_cosine(scale: f64, concentration: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0 && concentration.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "exp-cosine kernel (scale {scale}, concentration {concentration})"
            )));
        }
        let k = concentration.abs();
        Ok(Self {
            shape: Shape::ExpCosine {
                scale,
                concentration,
            },
            lower: scale * (-k).exp(),
            upper: scale * k.exp(),
            id: format!("exp_cosine(scale={scale},concentration={concentration})"),
        })
    }

    /// Kernel constant on `arcs[a] × arcs[b]` with value `values[a][b]`.
    pub fn piecewise(arcs: ArcPartition, values: Vec<Vec<f64>>) -> Result<Self> {
        let q = arcs.len();
        if values.len() != q || values.iter().any(|r| r.len() != q) {
            return Err(Error::InvalidArgument(format!(
                "piecewise kernel needs a {q}x{q} value table"
            )));
        }
        let flat: Vec<f64> = values.iter().flatten().copied().collect();
        if flat.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "piecewise kernel values must be finite and nonnegative".into(),
            ));
        }
        let lower = flat.iter().copied().fold(f64::INFINITY, f64::min);
        let upper = flat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let id = format!(
            "piecewise(q={q},boundaries={:?},values={:?})",
            arcs.boundaries(),
            values
        );
        Ok(Self {
            shape: Shape::Piecewise { arcs, values },
            lower,
            upper,
            id,
        })
    }

    /// Kernel given by an `m × m` table over grid bins (row: `α`, column: `θ`).
    pub fn table(values: Vec<Vec<f64>>) -> Result<Self> {
        let m = values.len();
        if m == 0 || values.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidArgument(
                "kernel table must be square and nonempty".into(),
            ));
        }
        let flat: Vec<f64> = values.into_iter().flatten().collect();
        if flat.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "kernel table entries must be finite and nonnegative".into(),
            ));
        }
        let lower = flat.iter().copied().fold(f64::INFINITY, f64::min);
        let upper = flat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let digest = flat
            .iter()
            .fold(0xcbf2_9ce4_8422_2325_u64, |h, v| {
                (h ^ v.to_bits()).wrapping_mul(0x100_0000_01b3)
            });
        Ok(Self {
            shape: Shape::Table { m, values: flat },
            lower,
            upper,
            id: format!("table(m={m},fnv={digest:016x})"),
        })
    }

    /// Arbitrary kernel with caller-declared bounds.
    pub fn custom<F>(id: impl Into<String>, lower: f64, upper: f64, f: F) -> Result<Self>
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        if !(lower.is_finite() && upper.is_finite() && 0.0 <= lower && lower <= upper) {
            return Err(Error::InvalidArgument(format!(
                "custom kernel bounds [{lower}, {upper}]"
            )));
        }
        Ok(Self {
            shape: Shape::Custom(Arc::new(f)),
            lower,
            upper,
            id: id.into(),
        })
    }

    pub fn eval(&self, alpha: f64, theta: f64) -> f64 {
        match &self.shape {
            Shape::Constant(c) => *c,
            Shape::Cosine { base, amplitude } => base + amplitude * (theta - alpha).cos(),
            Shape::ExpCosine {
                scale,
                concentration,
            } => scale * (concentration * (theta - alpha).cos()).exp(),
            Shape::Piecewise { arcs, values } => values[arcs.arc_of(alpha)][arcs.arc_of(theta)],
            Shape::Table { m, values } => {
                let h = TWO_PI / *m as f64;
                let bin = |x: f64| (((canonical_angle(x) + PI) / h).floor() as usize).min(m - 1);
                values[bin(alpha) * m + bin(theta)]
            }
            Shape::Custom(f) => f(alpha, theta),
        }
    }

    pub fn lower_bound(&self) -> f64 {
        self.lower
    }

    pub fn upper_bound(&self) -> f64 {
        self.upper
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn arcs(&self) -> Option<&ArcPartition> {
        match &self.shape {
            Shape::Piecewise { arcs, .. } => Some(arcs),
            _ => None,
        }
    }

    pub fn is_constant(&self) -> Option<f64> {
        match self.shape {
            Shape::Constant(c) => Some(c),
            _ => None,
        }
    }

    pub fn require_positive(&self) -> Result<()> {
        if self.lower > 0.0 {
            Ok(())
        } else {
            Err(Error::KernelNotPositive { lower: self.lower })
        }
    }

    /// `C(α, ·)` on the grid midpoints.
    pub fn row(&self, alpha: f64, grid: &Grid) -> Vec<f64> {
        grid.sample(|theta| self.eval(alpha, theta))
    }

    /// Sampled check of the declared bounds and, for piecewise kernels, of
    /// constancy in the first argument within each arc.
    pub fn check(&self, grid: &Grid) -> Result<()> {
        let stride = (grid.bins() / 128).max(1);
        let pts: Vec<f64> = (0..grid.bins())
            .step_by(stride)
            .map(|i| grid.midpoint(i))
            .collect();
        let slack = 1e-12 * self.upper.max(1.0);
        for &a in &pts {
            for &t in &pts {
                let v = self.eval(a, t);
                if !(v >= self.lower - slack && v <= self.upper + slack) {
                    return Err(Error::InvalidArgument(format!(
                        "kernel {} value {v} at ({a}, {t}) outside [{}, {}]",
                        self.id, self.lower, self.upper
                    )));
                }
            }
        }
        if let Some(arcs) = self.arcs() {
            let mut reps: Vec<Option<f64>> = vec![None; arcs.len()];
            for &a in &pts {
                let i = arcs.arc_of(a);
                match reps[i] {
                    None => reps[i] = Some(a),
                    Some(r) => {
                        if pts.iter().any(|&t| self.eval(a, t) != self.eval(r, t)) {
                            return Err(Error::InvalidArgument(format!(
                                "kernel {} not constant in α on arc {i}",
                                self.id
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// `c̄(α) = (1/2π)∫ C(α, θ) dθ`.
pub fn kernel_mass(kernel: &ConnectionKernel, alpha: f64, grid: &Grid) -> Result<f64> {
    circle_mean(&kernel.row(alpha, grid))
}

/// Kernel description as it appears in experiment configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Constant {
        c: f64,
    },
    Cosine {
        base: f64,
        amplitude: f64,
    },
    ExpCosine {
        scale: f64,
        concentration: f64,
    },
    Piecewise {
        boundaries: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
    Table {
        values: Vec<Vec<f64>>,
    },
}

impl KernelSpec {
    pub fn build(&self) -> Result<ConnectionKernel> {
        match self {
            KernelSpec::Constant { c } => ConnectionKernel::constant(*c),
            KernelSpec::Cosine { base, amplitude } => ConnectionKernel::cosine(*base, *amplitude),
            KernelSpec::ExpCosine {
                scale,
                concentration,
            } => ConnectionKernel::exp_cosine(*scale, *concentration),
            KernelSpec::Piecewise { boundaries, values } => {
                ConnectionKernel::piecewise(ArcPartition::new(boundaries.clone())?, values.clone())
            }
            KernelSpec::Table { values } => ConnectionKernel::table(values.clone()),
        }
    }
}
