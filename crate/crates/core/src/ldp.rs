//! Node-level large-deviation checks: exact Poisson-binomial laws of row
//! counts, Monte Carlo estimates, Chernoff bounds, and normalized
//! log-probability scans along a sparsity schedule.
//!
//! Every event here depends on a single row `Ξ_j`, whose entries are
//! independent Bernoulli variables, so exact laws are convolutions and Monte
//! Carlo only resamples that row.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circle::{
    canonical_angle, compensated_sum, kernel_mass, xlog_ratio, ArcPartition, CircleArc,
    ConnectionKernel, Grid,
};
use crate::error::{Error, Result};
use crate::graph::{edge_probability, positions, sample_row, SparsitySchedule};
use crate::output::atomic_write;
use crate::rates::arc_event_rate;
use crate::rng::{substream, Domain};

/// Largest `n` accepted by the exact laws.
pub const EXACT_N_CAP: usize = 20_000;
/// Largest joint support enumerated by [`exact_event_prob`].
pub const ENUMERATION_CAP: usize = 10_000_000;
/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

const RESCALE_BELOW: f64 = 1e-200;

/// Event on the row of node `target` (a label in `−n..=n`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub target: i64,
    pub event: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventKind {
    /// `κ_j ≤ mass·ρ(2n+1)`
    DegreeMass { mass: f64 },
    /// `κ_j ≤ count` (the self-loop included)
    DegreeCount { count: usize },
    /// `N_{F_i} ≥ λ_i·κ_j` for every arc, `N_F` counting row entries in `F`.
    ArcOccupancy {
        arcs: Vec<CircleArc>,
        thresholds: Vec<f64>,
    },
}

impl EventSpec {
    pub fn degree_mass(target: i64, mass: f64) -> Self {
        Self {
            target,
            event: EventKind::DegreeMass { mass },
        }
    }

    pub fn degree_count(target: i64, count: usize) -> Self {
        Self {
            target,
            event: EventKind::DegreeCount { count },
        }
    }

    pub fn arc_occupancy(target: i64, arcs: Vec<CircleArc>, thresholds: Vec<f64>) -> Self {
        Self {
            target,
            event: EventKind::ArcOccupancy { arcs, thresholds },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.event {
            EventKind::DegreeMass { mass } => {
                if !(mass.is_finite() && *mass >= 0.0) {
                    return Err(Error::InvalidArgument(format!("mass threshold {mass}")));
                }
            }
            EventKind::DegreeCount { .. } => {}
            EventKind::ArcOccupancy { arcs, thresholds } => {
                if arcs.len() != thresholds.len() {
                    return Err(Error::DimensionMismatch {
                        expected: arcs.len(),
                        got: thresholds.len(),
                    });
                }
                if let Some(l) = thresholds.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
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
            }
        }
        Ok(())
    }

    fn target_index(&self, n: usize) -> Result<usize> {
        if self.target.unsigned_abs() as usize > n {
            return Err(Error::InvalidArgument(format!(
                "target {} outside -{n}..={n}",
                self.target
            )));
        }
        Ok((self.target + n as i64) as usize)
    }

    /// Count classes: the event arcs followed by their complement, or one
    /// class for degree events.
    fn class_count(&self) -> usize {
        match &self.event {
            EventKind::ArcOccupancy { arcs, .. } => arcs.len() + 1,
            _ => 1,
        }
    }

    fn class_of(&self, theta: f64) -> usize {
        match &self.event {
            EventKind::ArcOccupancy { arcs, .. } => arcs
                .iter()
                .position(|a| a.contains(theta))
                .unwrap_or(arcs.len()),
            _ => 0,
        }
    }

    /// Largest admissible row size for degree events at size `n`.
    fn degree_limit(&self, n: usize, rho: f64) -> Option<usize> {
        match self.event {
            EventKind::DegreeMass { mass } => {
                Some((mass * rho * (2 * n + 1) as f64 + 1e-9).floor() as usize)
            }
            EventKind::DegreeCount { count } => Some(count),
            EventKind::ArcOccupancy { .. } => None,
        }
    }

    /// Whether per-class counts (self-loop included) satisfy the event.
    pub fn holds(&self, counts: &[usize], n: usize, rho: f64) -> bool {
        let total: usize = counts.iter().sum();
        match &self.event {
            EventKind::ArcOccupancy { thresholds, .. } => thresholds
                .iter()
                .zip(counts)
                .all(|(&l, &c)| c as f64 >= l * total as f64),
            _ => total <= self.degree_limit(n, rho).expect("degree event"),
        }
    }
}

/// Row layout: per-class edge probabilities (self excluded) and the class
/// receiving the self-loop.
struct Layout {
    probs: Vec<Vec<f64>>,
    self_class: usize,
}

fn layout(spec: &EventSpec, kernel: &ConnectionKernel, n: usize, rho: f64) -> Result<Layout> {
    spec.validate()?;
    if n > EXACT_N_CAP {
        return Err(Error::SizeCap {
            what: "exact law nodes",
            size: n,
            cap: EXACT_N_CAP,
        });
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidArgument(format!("rho {rho} outside (0, 1]")));
    }
    let idx = spec.target_index(n)?;
    let pos = positions(n);
    let mut probs = vec![Vec::new(); spec.class_count()];
    for (k, &theta) in pos.iter().enumerate() {
        if k != idx {
            probs[spec.class_of(theta)].push(edge_probability(kernel, rho, pos[idx], theta));
        }
    }
    Ok(Layout {
        probs,
        self_class: spec.class_of(pos[idx]),
    })
}

/// Poisson-binomial law stored as `P(N = k) = probs[k]·exp(log_scale)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CountLaw {
    pub probs: Vec<f64>,
    pub log_scale: f64,
}

impl CountLaw {
    /// Exact law of a sum of independent Bernoulli(`p_k`), optionally only
    /// on `0..=cap` (enough for lower tails).
    pub fn poisson_binomial(ps: &[f64], cap: Option<usize>) -> Self {
        let mut dist = Vec::with_capacity(cap.map_or(ps.len(), |c| c.min(ps.len())) + 1);
        dist.push(1.0);
        let mut log_scale = 0.0;
        for &p in ps {
            let q = 1.0 - p;
            dist.push(0.0);
            for c in (1..dist.len()).rev() {
                dist[c] = dist[c] * q + dist[c - 1] * p;
            }
            dist[0] *= q;
            if let Some(c) = cap {
                dist.truncate(c + 1);
            }
            let max = dist.iter().copied().fold(0.0, f64::max);
            if max > 0.0 && max < RESCALE_BELOW {
                dist.iter_mut().for_each(|x| *x /= max);
                log_scale += max.ln();
            }
        }
        while dist.len() > 1 && *dist.last().unwrap() == 0.0 {
            dist.pop();
        }
        Self {
            probs: dist,
            log_scale,
        }
    }

    /// Law of `N + shift`.
    fn shifted(mut self, shift: usize) -> Self {
        if shift > 0 {
            let mut v = vec![0.0; shift];
            v.append(&mut self.probs);
            self.probs = v;
        }
        self
    }

    pub fn prob(&self, k: usize) -> f64 {
        self.probs.get(k).map_or(0.0, |p| p * self.log_scale.exp())
    }

    /// `log P(N ≤ k)`
    pub fn log_cdf(&self, k: usize) -> f64 {
        let end = (k + 1).min(self.probs.len());
        compensated_sum(self.probs[..end].iter().copied()).ln() + self.log_scale
    }

    /// `log P(N > k)`
    pub fn log_sf(&self, k: usize) -> f64 {
        if k + 1 >= self.probs.len() {
            return f64::NEG_INFINITY;
        }
        compensated_sum(self.probs[k + 1..].iter().copied()).ln() + self.log_scale
    }

    pub fn to_probabilities(&self) -> Vec<f64> {
        let s = self.log_scale.exp();
        self.probs.iter().map(|p| p * s).collect()
    }
}

/// Exact laws of `N_i = #{k ∈ F_i : w^{jk} = 1}` for every arc of the
/// partition; node `target` contributes its self-loop to its own arc.
pub fn arc_count_law(
    kernel: &ConnectionKernel,
    n: usize,
    rho: f64,
    target: i64,
    arcs: &ArcPartition,
) -> Result<Vec<Vec<f64>>> {
    if n > EXACT_N_CAP {
        return Err(Error::SizeCap {
            what: "exact law nodes",
            size: n,
            cap: EXACT_N_CAP,
        });
    }
    let spec = EventSpec::degree_count(target, 0);
    let idx = spec.target_index(n)?;
    let pos = positions(n);
    let mut probs = vec![Vec::new(); arcs.len()];
    for (k, &theta) in pos.iter().enumerate() {
        if k != idx {
            probs[arcs.arc_of(theta)].push(edge_probability(kernel, rho, pos[idx], theta));
        }
    }
    let self_arc = arcs.arc_of(pos[idx]);
    Ok(probs
        .iter()
        .enumerate()
        .map(|(i, ps)| {
            CountLaw::poisson_binomial(ps, None)
                .shifted((i == self_arc) as usize)
                .to_probabilities()
        })
        .collect())
}

/// `log P(event)` from the exact row law; `−∞` for impossible events.
pub fn exact_event_logprob(
    spec: &EventSpec,
    kernel: &ConnectionKernel,
    n: usize,
    rho: f64,
) -> Result<f64> {
    let lay = layout(spec, kernel, n, rho)?;
    if let Some(limit) = spec.degree_limit(n, rho) {
        let others = lay.probs[0].len();
        if limit == 0 {
            return Ok(f64::NEG_INFINITY);
        }
        if limit > others {
            return Ok(0.0);
        }
        let law = CountLaw::poisson_binomial(&lay.probs[0], Some(limit - 1));
        return Ok(law.log_cdf(limit - 1).min(0.0));
    }
    if let EventKind::ArcOccupancy { thresholds, .. } = &spec.event {
        if thresholds.iter().all(|&l| l == 0.0) {
            return Ok(0.0);
        }
    }
    let laws: Vec<CountLaw> = lay
        .probs
        .iter()
        .enumerate()
        .map(|(i, ps)| CountLaw::poisson_binomial(ps, None).shifted((i == lay.self_class) as usize))
        .collect();
    let support = laws
        .iter()
        .try_fold(1usize, |acc, l| acc.checked_mul(l.probs.len()))
        .unwrap_or(usize::MAX);
    if support > ENUMERATION_CAP {
        return Err(Error::EnumerationCap {
            size: support,
            cap: ENUMERATION_CAP,
        });
    }
    let mut counts = vec![0usize; laws.len()];
    let mut terms = Vec::new();
    loop {
        if spec.holds(&counts, n, rho) {
            terms.push(counts.iter().zip(&laws).map(|(&c, l)| l.probs[c]).product::<f64>());
        }
        let mut i = 0;
        loop {
            if i == counts.len() {
                let scale: f64 = laws.iter().map(|l| l.log_scale).sum();
                let total = compensated_sum(terms);
                return Ok(if total > 0.0 {
                    (total.ln() + scale).min(0.0)
                } else {
                    f64::NEG_INFINITY
                });
            }
            counts[i] += 1;
            if counts[i] < laws[i].probs.len() {
                break;
            }
            counts[i] = 0;
            i += 1;
        }
    }
}

pub fn exact_event_prob(
    spec: &EventSpec,
    kernel: &ConnectionKernel,
    n: usize,
    rho: f64,
) -> Result<f64> {
    Ok(exact_event_logprob(spec, kernel, n, rho)?.exp())
}

/// Monte Carlo estimate with a Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub hits: u64,
    pub trials: u64,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

impl McEstimate {
    pub fn covers(&self, p: f64) -> bool {
        self.lower <= p && p <= self.upper
    }
}

/// Wilson score interval for `hits` successes in `trials`.
pub fn wilson_interval(hits: u64, trials: u64, z: f64) -> (f64, f64) {
    let nt = trials as f64;
    let p = hits as f64 / nt;
    let z2 = z * z;
    let denom = 1.0 + z2 / nt;
    let center = (p + z2 / (2.0 * nt)) / denom;
    let half = z / denom * (p * (1.0 - p) / nt + z2 / (4.0 * nt * nt)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Resamples the target row `trials` times; trial `t` draws from its own
/// substream, so the estimate is independent of the worker count.
pub fn mc_event_prob(
    spec: &EventSpec,
    kernel: &ConnectionKernel,
    n: usize,
    rho: f64,
    trials: u64,
    seed: u64,
) -> Result<McEstimate> {
    spec.validate()?;
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidArgument(format!("rho {rho} outside (0, 1]")));
    }
    let idx = spec.target_index(n)?;
    let pos = positions(n);
    let class: Vec<usize> = pos.iter().map(|&t| spec.class_of(t)).collect();
    let classes = spec.class_count();
    let hits: u64 = (0..trials)
        .into_par_iter()
        .map_init(
            || vec![0usize; classes],
            |counts, t| {
                let mut rng = substream(seed, Domain::MonteCarlo, t);
                let row = sample_row(kernel, &pos, idx, rho, &mut rng);
                counts.fill(0);
                for &k in &row {
                    counts[class[k as usize]] += 1;
                }
                spec.holds(counts, n, rho) as u64
            },
        )
        .sum();
    let (lower, upper) = wilson_interval(hits, trials, Z95);
    Ok(McEstimate {
        hits,
        trials,
        estimate: hits as f64 / trials as f64,
        lower,
        upper,
    })
}

fn row_probabilities(kernel: &ConnectionKernel, n: usize, rho: f64, target: i64) -> Result<Vec<f64>> {
    let lay = layout(&EventSpec::degree_count(target, 0), kernel, n, rho)?;
    Ok(lay.probs.into_iter().next().unwrap())
}

/// `log` of the Chernoff bound on `P(κ_j > m·ρ(2n+1))`:
/// `exp(−ρ(2n+1)·a·m) · e^a · Π_{k≠j} (1 + p_k(e^a − 1))`, the `e^a`
/// factor being the moment generating function of the self-loop.
pub fn log_chernoff_bound(
    kernel: &ConnectionKernel,
    n: usize,
    rho: f64,
    target: i64,
    a: f64,
    m_thr: f64,
) -> Result<f64> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::InvalidArgument(format!("Chernoff parameter a = {a} must be > 0")));
    }
    let ps = row_probabilities(kernel, n, rho, target)?;
    let speed = rho * (2 * n + 1) as f64;
    let em1 = a.exp_m1();
    let log_mgf = a + compensated_sum(ps.iter().map(|&p| (p * em1).ln_1p()));
    Ok(log_mgf - speed * a * m_thr)
}

pub fn chernoff_bound(
    kernel: &ConnectionKernel,
    n: usize,
    rho: f64,
    target: i64,
    a: f64,
    m_thr: f64,
) -> Result<f64> {
    Ok(log_chernoff_bound(kernel, n, rho, target, a, m_thr)?.exp())
}

/// Exact `log P(κ_j > m·ρ(2n+1))`.
pub fn exact_upper_tail_logprob(
    kernel: &ConnectionKernel,
    n: usize,
    rho: f64,
    target: i64,
    m_thr: f64,
) -> Result<f64> {
    let ps = row_probabilities(kernel, n, rho, target)?;
    let x = m_thr * rho * (2 * n + 1) as f64;
    if x < 1.0 {
        return Ok(0.0);
    }
    // κ = 1 + S > x  ⇔  S > floor(x) − 1
    let k = x.floor() as usize - 1;
    Ok(CountLaw::poisson_binomial(&ps, None).log_sf(k))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScanMode {
    Exact,
    MonteCarlo { trials: u64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub mode: ScanMode,
    /// Quadrature bins for the predicted rates.
    pub grid_bins: usize,
    /// Seed of the multistart minimizer used for arc-event predictions.
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub n: usize,
    pub rho: f64,
    pub speed: f64,
    pub logp: f64,
    pub normalized: f64,
    pub predicted: f64,
    pub gap: f64,
    /// Probability was exactly zero (in MC mode: no hits).
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub spec: EventSpec,
    pub kernel: String,
    pub schedule: SparsitySchedule,
    pub config: ScanConfig,
    pub rows: Vec<ScanRow>,
}

pub const SCAN_CSV_HEADER: &str = "n,rho,speed,logp,normalized,predicted,gap";

impl ScanResult {
    /// Whether `|gap|` strictly decreases along the grid.
    pub fn gaps_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].gap.abs() < w[0].gap.abs())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{SCAN_CSV_HEADER}").unwrap();
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.n, r.rho, r.speed, r.logp, r.normalized, r.predicted, r.gap
            )
            .unwrap();
        }
        s
    }

    pub fn sidecar_json(&self) -> String {
        let flagged: Vec<usize> = self.rows.iter().filter(|r| r.flagged).map(|r| r.n).collect();
        let doc = serde_json::json!({
            "schema": "ldpnet.scan/1",
            "event": self.spec,
            "kernel": self.kernel,
            "schedule": self.schedule,
            "config": self.config,
            "columns": SCAN_CSV_HEADER.split(',').collect::<Vec<_>>(),
            "flagged_n": flagged,
        });
        serde_json::to_string_pretty(&doc).expect("serializable")
    }

    /// Writes `<stem>.csv` and `<stem>.json` atomically.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        atomic_write(&dir.join(format!("{stem}.csv")), self.to_csv().as_bytes())?;
        atomic_write(&dir.join(format!("{stem}.json")), self.sidecar_json().as_bytes())
    }
}

/// Predicted limit `−inf I` of the normalized log-probability.
pub fn predicted_limit(
    spec: &EventSpec,
    kernel: &ConnectionKernel,
    alpha: f64,
    grid: &Grid,
    seed: u64,
) -> Result<f64> {
    let c_bar = kernel_mass(kernel, alpha, grid)?;
    Ok(match &spec.event {
        EventKind::DegreeCount { .. } => -c_bar,
        EventKind::DegreeMass { mass } => {
            let s = (mass / c_bar).min(1.0);
            -c_bar * (1.0 - s + xlog_ratio(s, 1.0))
        }
        EventKind::ArcOccupancy { arcs, thresholds } => {
            -arc_event_rate(kernel, alpha, arcs, thresholds, grid, seed)?.value
        }
    })
}

/// Normalized log-probabilities `(ρ_n(2n+1))^{−1} log P` along `n_grid`.
pub fn ldp_scan(
    spec: &EventSpec,
    kernel: &ConnectionKernel,
    schedule: &SparsitySchedule,
    n_grid: &[usize],
    cfg: &ScanConfig,
) -> Result<ScanResult> {
    spec.validate()?;
    schedule.check_regime(n_grid)?;
    if n_grid.windows(2).any(|w| schedule.speed(w[1]) <= schedule.speed(w[0])) {
        return Err(Error::InvalidArgument("speeds must increase along the grid".into()));
    }
    let grid = Grid::new(cfg.grid_bins)?;
    let rows = n_grid
        .par_iter()
        .map(|&n| {
            let rho = schedule.rho(n);
            let speed = schedule.speed(n);
            let logp = match cfg.mode {
                ScanMode::Exact => exact_event_logprob(spec, kernel, n, rho)?,
                ScanMode::MonteCarlo { trials, seed } => {
                    mc_event_prob(spec, kernel, n, rho, trials, seed)?.estimate.ln()
                }
            };
            let idx = spec.target_index(n)?;
            let alpha = canonical_angle(positions(n)[idx]);
            let predicted = predicted_limit(spec, kernel, alpha, &grid, cfg.seed)?;
            let normalized = logp / speed;
            Ok(ScanRow {
                n,
                rho,
                speed,
                logp,
                normalized,
                predicted,
                gap: normalized - predicted,
                flagged: logp == f64::NEG_INFINITY,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScanResult {
        spec: spec.clone(),
        kernel: kernel.id().to_string(),
        schedule: *schedule,
        config: *cfg,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn ones() -> ConnectionKernel {
        ConnectionKernel::constant(1.0).unwrap()
    }

    #[test]
    fn three_node_binomial() {
        let laws = arc_count_law(&ones(), 1, 0.1, 0, &ArcPartition::whole()).unwrap();
        assert_eq!(laws.len(), 1);
        assert_eq!(laws[0][0], 0.0);
        assert!((laws[0][1] - 0.81).abs() < 1e-15);
        assert!((laws[0][2] - 0.18).abs() < 1e-15);
        assert!((laws[0][3] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn zero_kernel_gives_point_mass() {
        let k = ConnectionKernel::constant(0.0).unwrap();
        let laws = arc_count_law(&k, 3, 0.5, 1, &ArcPartition::equal(3, 0.0).unwrap()).unwrap();
        let total: Vec<f64> = laws.iter().map(|l| l.iter().sum()).collect();
        assert!(total.iter().all(|&t| (t - 1.0).abs() < 1e-12));
        let self_arc = ArcPartition::equal(3, 0.0).unwrap().arc_of(positions(3)[4]);
        for (i, l) in laws.iter().enumerate() {
            let expect: Vec<f64> = if i == self_arc { vec![0.0, 1.0] } else { vec![1.0] };
            assert_eq!(l, &expect);
        }
    }

    #[test]
    fn laws_sum_to_one() {
        let k = ConnectionKernel::cosine(1.0, 0.7).unwrap();
        let laws = arc_count_law(&k, 400, 0.3, -17, &ArcPartition::equal(4, 0.3).unwrap()).unwrap();
        for l in laws {
            assert!((compensated_sum(l.iter().copied()) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn self_loop_only_closed_form() {
        for (n, rho) in [(5usize, 0.2), (50, 0.05), (1000, 0.01)] {
            let lp = exact_event_logprob(&EventSpec::degree_count(0, 1), &ones(), n, rho).unwrap();
            let expect = 2.0 * n as f64 * (-rho).ln_1p();
            assert!((lp - expect).abs() <= 1e-12 * expect.abs(), "{lp} vs {expect}");
        }
    }

    #[test]
    fn certain_and_impossible_events() {
        let k = ones();
        assert_eq!(exact_event_prob(&EventSpec::degree_mass(0, 1e9), &k, 10, 0.3).unwrap(), 1.0);
        assert_eq!(exact_event_prob(&EventSpec::degree_count(0, 0), &k, 10, 0.3).unwrap(), 0.0);
        let arc = CircleArc::new(0.0, 1.0).unwrap();
        let spec = EventSpec::arc_occupancy(0, vec![arc], vec![0.0]);
        assert_eq!(exact_event_prob(&spec, &k, 10, 0.3).unwrap(), 1.0);
        let mc = mc_event_prob(&EventSpec::degree_mass(0, 1e9), &k, 10, 0.3, 500, 1).unwrap();
        assert_eq!(mc.estimate, 1.0);
        assert!(mc.covers(1.0));
        let mc = mc_event_prob(&EventSpec::degree_count(0, 0), &k, 10, 0.3, 500, 1).unwrap();
        assert_eq!(mc.estimate, 0.0);
    }

    #[test]
    fn wilson_known_values() {
        let (lo, hi) = wilson_interval(50, 100, Z95);
        assert!((lo - 0.403_831_7).abs() < 1e-6);
        assert!((hi - 0.596_168_3).abs() < 1e-6);
        let (lo, hi) = wilson_interval(0, 10, Z95);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.35);
    }

    #[test]
    fn mc_is_deterministic() {
        let spec = EventSpec::degree_mass(3, 0.8);
        let a = mc_event_prob(&spec, &ones(), 60, 0.2, 2000, 42).unwrap();
        let b = mc_event_prob(&spec, &ones(), 60, 0.2, 2000, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn chernoff_examples() {
        let k = ones();
        assert!(chernoff_bound(&k, 10, 0.3, 0, 0.0, 1.0).is_err());
        let b1 = chernoff_bound(&k, 100, 0.1, 0, 1.0, 2.0).unwrap();
        let b2 = chernoff_bound(&k, 100, 0.1, 0, 1.0, 3.0).unwrap();
        assert!(b2 < b1);
        let beyond = exact_upper_tail_logprob(&k, 10, 0.3, 0, 100.0).unwrap();
        assert_eq!(beyond, f64::NEG_INFINITY);
        let tail = exact_upper_tail_logprob(&k, 1000, 0.1, 0, 3.0).unwrap();
        let bound = log_chernoff_bound(&k, 1000, 0.1, 0, 1.0, 3.0).unwrap();
        assert!(bound >= tail);
    }

    #[test]
    fn occupancy_matches_manual_sum() {
        // three arcs, thresholds on two of them, small n
        let k = ConnectionKernel::cosine(1.0, 0.5).unwrap();
        let a1 = CircleArc::new(-PI / 3.0, 2.0 * PI / 3.0).unwrap();
        let a2 = CircleArc::new(1.2, 1.0).unwrap();
        let spec = EventSpec::arc_occupancy(1, vec![a1, a2], vec![0.4, 0.2]);
        let (n, rho) = (4usize, 0.6);
        let p = exact_event_prob(&spec, &k, n, rho).unwrap();
        // brute force over all rows
        let pos = positions(n);
        let idx = 1 + n;
        let others: Vec<usize> = (0..pos.len()).filter(|&k| k != idx).collect();
        let mut total = 0.0;
        for mask in 0u32..(1 << others.len()) {
            let mut prob = 1.0;
            let mut counts = vec![0usize; 3];
            counts[spec.class_of(pos[idx])] += 1;
            for (b, &kk) in others.iter().enumerate() {
                let pk = edge_probability(&k, rho, pos[idx], pos[kk]);
                if mask >> b & 1 == 1 {
                    prob *= pk;
                    counts[spec.class_of(pos[kk])] += 1;
                } else {
                    prob *= 1.0 - pk;
                }
            }
            if spec.holds(&counts, n, rho) {
                total += prob;
            }
        }
        assert!((p - total).abs() < 1e-14, "{p} vs {total}");
    }

    #[test]
    fn scan_self_loop_event() {
        let schedule = SparsitySchedule::new(1.0, 0.5).unwrap();
        let cfg = ScanConfig {
            mode: ScanMode::Exact,
            grid_bins: 256,
            seed: 0,
        };
        let res = ldp_scan(&EventSpec::degree_count(0, 1), &ones(), &schedule, &[100, 1000, 10_000], &cfg)
            .unwrap();
        assert!(res.gaps_decreasing());
        let last = res.rows.last().unwrap();
        assert!((last.normalized + 1.0).abs() < 0.01);
        for r in &res.rows {
            let expect = 2.0 * r.n as f64 / (r.rho * (2 * r.n + 1) as f64) * (-r.rho).ln_1p();
            assert!((r.normalized - expect).abs() < 1e-12);
        }
        let csv = res.to_csv();
        assert_eq!(csv.lines().next().unwrap(), SCAN_CSV_HEADER);
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn scan_certain_event_is_zero() {
        let schedule = SparsitySchedule::new(1.0, 0.5).unwrap();
        let cfg = ScanConfig {
            mode: ScanMode::Exact,
            grid_bins: 64,
            seed: 0,
        };
        let res =
            ldp_scan(&EventSpec::degree_mass(0, 1e9), &ones(), &schedule, &[10, 20, 40], &cfg).unwrap();
        for r in &res.rows {
            assert_eq!(r.normalized, 0.0);
            assert_eq!(r.predicted, 0.0);
        }
    }

    #[test]
    fn scan_typical_arc_event_predicts_zero() {
        let schedule = SparsitySchedule::new(1.0, 0.5).unwrap();
        let cfg = ScanConfig {
            mode: ScanMode::Exact,
            grid_bins: 256,
            seed: 3,
        };
        let arc = CircleArc::new(-PI / 4.0, PI / 2.0).unwrap();
        let spec = EventSpec::arc_occupancy(0, vec![arc], vec![0.25]);
        let res = ldp_scan(&spec, &ones(), &schedule, &[50, 200, 800], &cfg).unwrap();
        for r in &res.rows {
            assert!(r.predicted.abs() < 1e-12);
        }
        let mags: Vec<f64> = res.rows.iter().map(|r| r.normalized.abs()).collect();
        assert!(mags[2] < mags[0], "{mags:?}");
    }

    #[test]
    fn scan_rejects_bad_grid() {
        let schedule = SparsitySchedule::new(1.0, 0.5).unwrap();
        let cfg = ScanConfig {
            mode: ScanMode::Exact,
            grid_bins: 64,
            seed: 0,
        };
        assert!(ldp_scan(&EventSpec::degree_count(0, 1), &ones(), &schedule, &[100, 50], &cfg).is_err());
    }

    #[test]
    fn infeasible_occupancy_rejected() {
        let arc = CircleArc::new(0.0, 1.0).unwrap();
        let spec = EventSpec::arc_occupancy(0, vec![arc], vec![1.0]);
        assert_eq!(
            exact_event_prob(&spec, &ones(), 5, 0.5),
            Err(Error::InfeasibleThresholds { sum: 1.0 })
        );
    }

    #[test]
    fn event_spec_json_shape() {
        let s = serde_json::to_string(&EventSpec::degree_count(0, 1)).unwrap();
        assert_eq!(s, r#"{"target":0,"event":{"type":"degree_count","count":1}}"#);
    }
}
