//! Experiment configuration: one JSON document, strictly typed.

use std::path::{Path, PathBuf};

use ldpnet::ldp::EventSpec;
use ldpnet::{
    ConnectionKernel, Coupling, Drift, KernelSpec, Lift, Scheme, SparsitySchedule,
    VectorFieldPair,
};
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kernel: KernelSpec,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    pub graph: GraphConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub scan: Option<ScanSection>,
    #[serde(default)]
    pub outputs: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub drift: DriftSpec,
    pub coupling: CouplingSpec,
    pub lift: LiftSpec,
    /// Uniform bound on the initial states; the largest lifted norm if absent.
    #[serde(default)]
    pub c_ini: Option<f64>,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftSpec {
    Zero,
    Linear { rate: f64 },
    Tanh { gain: f64, scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum CouplingSpec {
    Zero,
    Affine { self_weight: f64, other_weight: f64 },
    Sine { strength: f64 },
    Tanh { strength: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LiftSpec {
    Angle,
    Embedding { radius: f64 },
    Constant { value: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub n_grid: Option<Vec<usize>>,
    /// Fixed edge density; otherwise taken from `schedule` at `n`.
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub schedule: Option<SparsitySchedule>,
    pub seed: u64,
    #[serde(default)]
    pub allow_clip: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Sample,
    Simulate,
    Measures,
    Pushforward,
    Rates,
    LdpScan,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Sample => "sample",
            Stage::Simulate => "simulate",
            Stage::Measures => "measures",
            Stage::Pushforward => "pushforward",
            Stage::Rates => "rates",
            Stage::LdpScan => "ldp_scan",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Stages to execute; derived from the configured sections if absent.
    pub pipeline: Option<Vec<Stage>>,
    pub grid_bins: usize,
    pub steps: usize,
    pub scheme: Scheme,
    pub thin: usize,
    pub tol: f64,
    pub max_steps: usize,
    /// Positions at which node rates are tabulated.
    pub alphas: Option<Vec<f64>>,
    pub trials: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            pipeline: None,
            grid_bins: ldpnet::circle::DEFAULT_BINS,
            steps: 64,
            scheme: Scheme::Euler,
            thin: 1,
            tol: 1e-3,
            max_steps: 4096,
            alphas: None,
            trials: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanModeName {
    #[default]
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    pub event: EventSpec,
    #[serde(default)]
    pub mode: ScanModeName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            formats: vec![Format::Csv, Format::Json],
        }
    }
}

impl OutputConfig {
    pub fn csv(&self) -> bool {
        self.formats.contains(&Format::Csv)
    }

    pub fn json(&self) -> bool {
        self.formats.contains(&Format::Json)
    }
}

/// Parses a document, reporting the dotted path of the offending field.
pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, Failure> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let mut path = e.path().to_string();
        let inner = e.inner().to_string();
        if let Some(field) = missing_field(&inner) {
            path = if path == "." { field.to_string() } else { format!("{path}.{field}") };
        }
        Failure::Config(format!("{path}: {inner}"))
    })
}

fn missing_field(msg: &str) -> Option<&str> {
    let rest = msg.strip_prefix("missing field `")?;
    rest.split('`').next()
}

pub fn load(path: &Path) -> Result<ExperimentConfig, Failure> {
    let bytes = std::fs::read(path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|_| Failure::Config(format!("{} is not UTF-8", path.display())))?;
    parse_json(text)
}

fn semantic(path: &str, e: impl std::fmt::Display) -> Failure {
    Failure::Config(format!("{path}: {e}"))
}

impl ModelConfig {
    pub fn lift(&self) -> Lift {
        match &self.lift {
            LiftSpec::Angle => Lift::Angle,
            LiftSpec::Embedding { radius } => Lift::Embedding { radius: *radius },
            LiftSpec::Constant { value } => Lift::Constant(value.clone()),
        }
    }

    pub fn fields(&self) -> VectorFieldPair {
        let drift = match self.drift {
            DriftSpec::Zero => Drift::Zero,
            DriftSpec::Linear { rate } => Drift::Linear { rate },
            DriftSpec::Tanh { gain, scale } => Drift::Tanh { gain, scale },
        };
        let coupling = match self.coupling {
            CouplingSpec::Zero => Coupling::Zero,
            CouplingSpec::Affine {
                self_weight,
                other_weight,
            } => Coupling::Affine {
                self_weight,
                other_weight,
            },
            CouplingSpec::Sine { strength } => Coupling::Sine { strength },
            CouplingSpec::Tanh { strength } => Coupling::Tanh { strength },
        };
        VectorFieldPair::new(self.dim, drift, coupling)
    }

    fn validate(&self) -> Result<(), Failure> {
        if self.dim == 0 {
            return Err(semantic("model.dim", "must be >= 1"));
        }
        let lift_dim = self.lift().dim();
        if lift_dim != self.dim {
            return Err(semantic(
                "model.lift",
                format!("lift has dimension {lift_dim}, model has {}", self.dim),
            ));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(semantic("model.horizon", format!("{} must be positive", self.horizon)));
        }
        if let Some(c) = self.c_ini {
            if !(c.is_finite() && c >= 0.0) {
                return Err(semantic("model.c_ini", format!("{c} must be non-negative")));
            }
        }
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        let ok = match &self.drift {
            DriftSpec::Zero => true,
            DriftSpec::Linear { rate } => finite(&[*rate]),
            DriftSpec::Tanh { gain, scale } => finite(&[*gain, *scale]),
        };
        if !ok {
            return Err(semantic("model.drift", "non-finite parameter"));
        }
        let ok = match &self.coupling {
            CouplingSpec::Zero => true,
            CouplingSpec::Affine {
                self_weight,
                other_weight,
            } => finite(&[*self_weight, *other_weight]),
            CouplingSpec::Sine { strength } | CouplingSpec::Tanh { strength } => {
                finite(&[*strength])
            }
        };
        if !ok {
            return Err(semantic("model.coupling", "non-finite parameter"));
        }
        Ok(())
    }
}

/// Validated configuration with its built kernel and the resolved stage list.
pub struct Plan {
    pub config: ExperimentConfig,
    pub kernel: ConnectionKernel,
    pub stages: Vec<Stage>,
}

impl ExperimentConfig {
    /// Edge density for the single-graph stages.
    pub fn rho(&self) -> Option<f64> {
        let n = self.graph.n?;
        self.graph
            .rho
            .or_else(|| self.graph.schedule.map(|s| s.rho(n)))
    }

    fn default_stages(&self, kernel: &ConnectionKernel) -> Vec<Stage> {
        let mut stages = Vec::new();
        if self.graph.n.is_some() {
            stages.push(Stage::Sample);
            if self.model.is_some() {
                stages.extend([Stage::Simulate, Stage::Measures]);
            }
        }
        if kernel.require_positive().is_ok() {
            stages.push(Stage::Rates);
        } else {
            log::info!("kernel not strictly positive, rates stage skipped");
        }
        if self.scan.is_some() {
            stages.push(Stage::LdpScan);
        }
        stages
    }

    /// Checks every cross-field requirement of the requested stages.
    pub fn plan(self, requested: Option<&[Stage]>) -> Result<Plan, Failure> {
        let kernel = self.kernel.build().map_err(|e| semantic("kernel", e))?;
        let mut stages = match requested.or(self.run.pipeline.as_deref()) {
            Some(s) => s.to_vec(),
            None => self.default_stages(&kernel),
        };
        stages.sort();
        stages.dedup();
        if stages.is_empty() {
            return Err(semantic("run.pipeline", "no stages to run"));
        }
        let run = &self.run;
        if run.grid_bins == 0 {
            return Err(semantic("run.grid_bins", "must be >= 1"));
        }
        if run.steps == 0 {
            return Err(semantic("run.steps", "must be >= 1"));
        }
        if let Some(m) = &self.model {
            m.validate()?;
        }
        if let Some(s) = &self.graph.schedule {
            s.validate().map_err(|e| semantic("graph.schedule", e))?;
        }
        for &stage in &stages {
            let needs_graph = matches!(
                stage,
                Stage::Sample | Stage::Simulate | Stage::Measures | Stage::Pushforward
            );
            if needs_graph {
                let n = self.graph.n;
                if n.is_none() {
                    return Err(semantic("graph.n", format!("required by stage {}", stage.name())));
                }
                match self.rho() {
                    None => {
                        return Err(semantic(
                            "graph.rho",
                            format!("stage {} needs graph.rho or graph.schedule", stage.name()),
                        ))
                    }
                    Some(r) if !(r > 0.0 && r <= 1.0) => {
                        return Err(semantic("graph.rho", format!("{r} outside (0, 1]")))
                    }
                    Some(_) => {}
                }
            }
            if matches!(stage, Stage::Simulate | Stage::Measures | Stage::Pushforward)
                && self.model.is_none()
            {
                return Err(semantic("model", format!("required by stage {}", stage.name())));
            }
            if stage == Stage::Pushforward {
                let m = self.model.as_ref().expect("checked");
                ldpnet::pushforward::PushforwardConfig::new(
                    m.horizon,
                    run.steps,
                    run.tol,
                    run.max_steps,
                )
                .map_err(|e| semantic("run", e))?;
            }
            if stage == Stage::Rates {
                kernel.require_positive().map_err(|e| semantic("kernel", e))?;
                if let Some(a) = &run.alphas {
                    if a.is_empty() || a.iter().any(|x| !x.is_finite()) {
                        return Err(semantic("run.alphas", "must be a non-empty list of finite angles"));
                    }
                }
            }
            if stage == Stage::LdpScan {
                let scan = self
                    .scan
                    .as_ref()
                    .ok_or_else(|| semantic("scan", "required by stage ldp_scan"))?;
                scan.event.validate().map_err(|e| semantic("scan.event", e))?;
                let schedule = self
                    .graph
                    .schedule
                    .ok_or_else(|| semantic("graph.schedule", "required by stage ldp_scan"))?;
                let grid = self
                    .graph
                    .n_grid
                    .as_ref()
                    .filter(|g| !g.is_empty())
                    .ok_or_else(|| semantic("graph.n_grid", "required by stage ldp_scan"))?;
                schedule
                    .check_regime(grid)
                    .map_err(|e| semantic("graph.n_grid", e))?;
                if scan.mode == ScanModeName::MonteCarlo && run.trials == 0 {
                    return Err(semantic("run.trials", "must be >= 1"));
                }
            }
        }
        Ok(Plan {
            config: self,
            kernel,
            stages,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"kernel": {"type": "constant", "c": 1.0},
        "graph": {"n": 1, "rho": 0.5, "seed": 7}}"#;

    #[test]
    fn minimal_parses_with_defaults() {
        let cfg: ExperimentConfig = parse_json(MINIMAL).unwrap();
        assert_eq!(cfg.run, RunConfig::default());
        let plan = cfg.plan(None).unwrap();
        assert_eq!(plan.stages, vec![Stage::Sample, Stage::Rates]);
    }

    #[test]
    fn missing_field_reports_dotted_path() {
        let text = r#"{"kernel": {"type": "constant", "c": 1.0}, "graph": {"n": 1}}"#;
        let err = parse_json::<ExperimentConfig>(text).unwrap_err();
        assert!(err.to_string().contains("graph.seed"), "{err}");
    }

    #[test]
    fn unknown_field_reports_path() {
        let text = r#"{"kernel": {"type": "constant", "c": 1.0},
            "graph": {"n": 1, "seed": 1}, "run": {"stpes": 3}}"#;
        let err = parse_json::<ExperimentConfig>(text).unwrap_err();
        assert!(err.to_string().starts_with("run"), "{err}");
    }

    #[test]
    fn unknown_field_name_in_registry_is_rejected() {
        let text = r#"{"kernel": {"type": "constant", "c": 1.0},
            "model": {"dim": 1, "drift": {"name": "cubic"}, "coupling": {"name": "zero"},
                      "lift": {"type": "angle"}, "horizon": 1.0},
            "graph": {"n": 1, "seed": 1}}"#;
        let err = parse_json::<ExperimentConfig>(text).unwrap_err();
        assert!(err.to_string().starts_with("model.drift"), "{err}");
    }

    #[test]
    fn stage_requirements() {
        let cfg: ExperimentConfig = parse_json(MINIMAL).unwrap();
        let err = cfg.clone().plan(Some(&[Stage::Simulate])).err().unwrap();
        assert!(err.to_string().starts_with("model"));
        let err = cfg.plan(Some(&[Stage::LdpScan])).err().unwrap();
        assert!(err.to_string().starts_with("scan"));
    }

    #[test]
    fn published_schema_lists_every_field() {
        let schema: serde_json::Value =
            serde_json::from_str(include_str!("../schema/experiment.schema.json")).unwrap();
        let text = r#"{"kernel": {"type": "constant", "c": 1.0},
            "model": {"dim": 1, "drift": {"name": "zero"}, "coupling": {"name": "zero"},
                      "lift": {"type": "angle"}, "horizon": 1.0},
            "graph": {"n": 1, "seed": 1},
            "scan": {"event": {"target": 0, "event": {"type": "degree_count", "count": 1}}}}"#;
        let cfg = serde_json::to_value(parse_json::<ExperimentConfig>(text).unwrap()).unwrap();
        let keys = |v: &serde_json::Value| {
            let mut k: Vec<String> = v.as_object().unwrap().keys().cloned().collect();
            k.sort();
            k
        };
        assert_eq!(keys(&cfg), keys(&schema["properties"]));
        for section in ["model", "graph", "run", "scan", "outputs"] {
            assert_eq!(
                keys(&cfg[section]),
                keys(&schema["$defs"][section]["properties"]),
                "{section}"
            );
        }
    }

    #[test]
    fn lift_dimension_checked() {
        let text = r#"{"kernel": {"type": "constant", "c": 1.0},
            "model": {"dim": 1, "drift": {"name": "zero"}, "coupling": {"name": "zero"},
                      "lift": {"type": "embedding", "radius": 1.0}, "horizon": 1.0},
            "graph": {"n": 1, "rho": 0.5, "seed": 1}}"#;
        let cfg: ExperimentConfig = parse_json(text).unwrap();
        let err = cfg.plan(None).err().unwrap();
        assert!(err.to_string().starts_with("model.lift"));
    }
}
