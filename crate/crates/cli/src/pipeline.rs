//! Stage orchestration, artifact persistence and the run manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use ldpnet::circle::{CircleDensity, Grid, TWO_PI};
use ldpnet::graph::degree_profile;
use ldpnet::ldp::{ldp_scan, ScanConfig, ScanMode};
use ldpnet::output::atomic_write;
use ldpnet::pushforward::{factorization_check, psi_limit, PushforwardConfig, FACTORIZATION_DEPTH_CAP, FACTORIZATION_NODE_CAP};
use ldpnet::rates::{optimal_scale, rate_node, write_rate_csv, NodeMeasure, RateRow};
use ldpnet::{build_nested, sample_graph, simulate, GraphSample, InitialCondition, NestedEmpiricalMeasure};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{Plan, ScanModeName, Stage};
use crate::failure::Failure;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SCHEMA: &str = "ldpnet.manifest/1";

/// Largest gap accepted between direct Euler and the tree recursion.
const FACTORIZATION_TOL: f64 = 1e-9;
/// Rates are tabulated at this many equally spaced positions by default.
const DEFAULT_ALPHAS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTiming {
    pub stage: &'static str,
    pub wall_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputRecord {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub schema: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub stages: Vec<StageTiming>,
    pub outputs: Vec<OutputRecord>,
    pub created_unix_s: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Runner<'a> {
    plan: &'a Plan,
    out: PathBuf,
    graph: Option<GraphSample>,
    init: Option<InitialCondition>,
    outputs: Vec<OutputRecord>,
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Other(format!("{}: {e}", path.display()))
}

impl Runner<'_> {
    fn emit(&mut self, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        let path = self.out.join(name);
        atomic_write(&path, bytes).map_err(|e| io_failure(&path, e))?;
        log::info!("wrote {}", path.display());
        self.outputs.push(OutputRecord {
            file: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    fn emit_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(value).expect("serializable");
        text.push('\n');
        self.emit(name, text.as_bytes())
    }

    fn graph(&mut self) -> Result<&GraphSample, Failure> {
        if self.graph.is_none() {
            let cfg = &self.plan.config;
            let n = cfg.graph.n.expect("validated");
            let rho = cfg.rho().expect("validated");
            let g = sample_graph(&self.plan.kernel, n, rho, cfg.graph.seed, cfg.graph.allow_clip)
                .map_err(|e| match e {
                    ldpnet::Error::ProbabilityOverflow { .. } => {
                        Failure::Config(format!("graph.rho: {e}"))
                    }
                    e => Failure::from_stage("sample", e),
                })?;
            g.check_invariants()
                .map_err(|e| Failure::Contract(format!("sample: graph invariant: {e}")))?;
            self.graph = Some(g);
        }
        Ok(self.graph.as_ref().expect("set"))
    }

    fn init(&mut self) -> Result<InitialCondition, Failure> {
        if self.init.is_none() {
            let model = self.plan.config.model.as_ref().expect("validated");
            let positions = self.graph()?.positions().to_vec();
            let init = InitialCondition::from_lift(&model.lift(), &positions, model.c_ini)
                .map_err(|e| Failure::Config(format!("model.c_ini: {e}")))?;
            self.init = Some(init);
        }
        Ok(self.init.clone().expect("set"))
    }

    fn nested(&mut self) -> Result<NestedEmpiricalMeasure, Failure> {
        let init = self.init()?;
        build_nested(self.graph()?, &init).map_err(|e| match e {
            ldpnet::Error::ConditionalKernelAmbiguous { .. } => {
                Failure::Config(format!("model.lift: {e}"))
            }
            e => Failure::from_stage("measures", e),
        })
    }

    fn run_stage(&mut self, stage: Stage) -> Result<(), Failure> {
        match stage {
            Stage::Sample => self.sample(),
            Stage::Simulate => self.simulate(),
            Stage::Measures => self.measures(),
            Stage::Pushforward => self.pushforward(),
            Stage::Rates => self.rates(),
            Stage::LdpScan => self.ldp_scan(),
        }
    }

    fn sample(&mut self) -> Result<(), Failure> {
        let g = self.graph()?.clone();
        self.emit("graph.txt", g.to_text().as_bytes())?;
        let outputs = &self.plan.config.outputs;
        if outputs.csv() {
            let mut s = String::from("label,degree\n");
            for (idx, d) in g.degrees().iter().enumerate() {
                writeln!(s, "{},{d}", g.label(idx)).unwrap();
            }
            self.emit("degrees.csv", s.as_bytes())?;
        }
        if outputs.json() {
            let doc = serde_json::json!({
                "schema": "ldpnet.degrees/1",
                "n": g.n(),
                "rho": g.rho(),
                "seed": g.seed(),
                "kernel": g.kernel_id(),
                "edges": g.edge_count(),
                "profile": degree_profile(&g),
            });
            self.emit_json("degrees.json", &doc)?;
        }
        Ok(())
    }

    fn simulate(&mut self) -> Result<(), Failure> {
        let cfg = &self.plan.config;
        let model = cfg.model.as_ref().expect("validated");
        let fields = model.fields();
        let (steps, scheme, thin) = (cfg.run.steps, cfg.run.scheme, cfg.run.thin);
        let init = self.init()?;
        let traj = simulate(self.graph()?, &init, &fields, model.horizon, steps, scheme)
            .map_err(|e| Failure::from_stage("simulate", e))?;
        traj.check_a_priori_bound(init.c_ini(), fields.speed_bound())
            .map_err(|e| Failure::Contract(format!("simulate: {e}")))?;
        let mut buf = Vec::new();
        traj.write_csv(&mut buf, thin)
            .map_err(|e| Failure::from_stage("simulate", e))?;
        self.emit("trajectories.csv", &buf)
    }

    fn measures(&mut self) -> Result<(), Failure> {
        let nested = self.nested()?;
        let g = self.graph()?;
        let labels: Vec<i64> = (0..g.size()).map(|i| g.label(i)).collect();
        let outputs = self.plan.config.outputs.clone();
        if outputs.json() {
            let mut text = nested.to_json();
            text.push('\n');
            self.emit("nested.json", text.as_bytes())?;
        }
        if outputs.csv() {
            let flat = nested.flat_marginal();
            let mut s = String::from("label,weight");
            for c in 0..flat.dim() {
                write!(s, ",u{c}").unwrap();
            }
            s.push('\n');
            for (j, label) in labels.iter().enumerate() {
                write!(s, "{label},{}", flat.weight(j)).unwrap();
                for x in flat.point(j) {
                    write!(s, ",{x}").unwrap();
                }
                s.push('\n');
            }
            self.emit("marginal.csv", s.as_bytes())?;
        }
        Ok(())
    }

    fn pushforward(&mut self) -> Result<(), Failure> {
        let cfg = &self.plan.config;
        let model = cfg.model.as_ref().expect("validated");
        let fields = model.fields();
        let pcfg = PushforwardConfig::new(model.horizon, cfg.run.steps, cfg.run.tol, cfg.run.max_steps)
            .map_err(|e| Failure::Config(format!("run: {e}")))?;
        let horizon = model.horizon;
        let steps = cfg.run.steps.min(FACTORIZATION_DEPTH_CAP);
        let nested = self.nested()?;
        let limit =
            psi_limit(&nested, &fields, &pcfg).map_err(|e| Failure::from_stage("pushforward", e))?;
        let init = self.init()?;
        let g = self.graph()?;
        let factorization = if g.size() <= FACTORIZATION_NODE_CAP {
            let r = factorization_check(g, &init, &fields, horizon, steps)
                .map_err(|e| Failure::from_stage("pushforward", e))?;
            if !(r.gap <= FACTORIZATION_TOL) {
                return Err(Failure::Contract(format!(
                    "pushforward: factorization gap {} exceeds {FACTORIZATION_TOL}",
                    r.gap
                )));
            }
            Some(r)
        } else {
            log::info!("graph has {} nodes, factorization check skipped", g.size());
            None
        };
        let doc = serde_json::json!({
            "schema": "ldpnet.pushforward-check/1",
            "limit_steps": limit.steps,
            "limit": limit.report,
            "factorization": factorization,
            "factorization_tol": FACTORIZATION_TOL,
        });
        self.emit_json("pushforward.json", &doc)
    }

    fn rates(&mut self) -> Result<(), Failure> {
        let cfg = &self.plan.config;
        let kernel = &self.plan.kernel;
        let grid = Grid::new(cfg.run.grid_bins).map_err(|e| Failure::Config(format!("run.grid_bins: {e}")))?;
        let alphas = cfg.run.alphas.clone().unwrap_or_else(|| {
            (0..DEFAULT_ALPHAS)
                .map(|k| -std::f64::consts::PI + TWO_PI * (k + 1) as f64 / DEFAULT_ALPHAS as f64)
                .collect()
        });
        let zeta = CircleDensity::uniform(&grid);
        let mu = NodeMeasure::Density(zeta.clone());
        let mut rows = Vec::with_capacity(alphas.len());
        for &alpha in &alphas {
            let r = rate_node(kernel, alpha, &mu, &grid).map_err(|e| Failure::from_stage("rates", e))?;
            let (a_star, _) = optimal_scale(kernel, alpha, &zeta, &grid)
                .map_err(|e| Failure::from_stage("rates", e))?;
            if !(r.value >= -1e-10 && r.value <= r.mass_term + 1e-10) {
                return Err(Failure::Contract(format!(
                    "rates: value {} outside [0, {}] at alpha {alpha}",
                    r.value, r.mass_term
                )));
            }
            rows.push(RateRow {
                alpha,
                kernel_id: kernel.id().to_string(),
                value: r.value,
                mass_term: r.mass_term,
                exponential_term: r.exponential_term,
                a_star: Some(a_star),
            });
        }
        let outputs = cfg.outputs.clone();
        if outputs.csv() {
            let mut buf = Vec::new();
            write_rate_csv(&mut buf, &rows).map_err(|e| Failure::from_stage("rates", e))?;
            self.emit("rates.csv", &buf)?;
        }
        if outputs.json() {
            let doc = serde_json::json!({
                "schema": "ldpnet.rates/1",
                "grid_bins": grid.bins(),
                "density": "uniform",
                "rows": rows,
            });
            self.emit_json("rates.json", &doc)?;
        }
        Ok(())
    }

    fn ldp_scan(&mut self) -> Result<(), Failure> {
        let cfg = &self.plan.config;
        let section = cfg.scan.as_ref().expect("validated");
        let schedule = cfg.graph.schedule.expect("validated");
        let n_grid = cfg.graph.n_grid.clone().expect("validated");
        let mode = match section.mode {
            ScanModeName::Exact => ScanMode::Exact,
            ScanModeName::MonteCarlo => ScanMode::MonteCarlo {
                trials: cfg.run.trials,
                seed: cfg.graph.seed,
            },
        };
        let scan_cfg = ScanConfig {
            mode,
            grid_bins: cfg.run.grid_bins,
            seed: cfg.graph.seed,
        };
        let result = ldp_scan(&section.event, &self.plan.kernel, &schedule, &n_grid, &scan_cfg)
            .map_err(|e| Failure::from_stage("ldp_scan", e))?;
        let outputs = cfg.outputs.clone();
        if outputs.csv() {
            self.emit("scan.csv", result.to_csv().as_bytes())?;
        }
        if outputs.json() {
            let mut text = result.sidecar_json();
            text.push('\n');
            self.emit("scan.json", text.as_bytes())?;
        }
        Ok(())
    }
}

/// Runs the planned stages, writes their artifacts and the manifest into
/// `out`, then re-reads every artifact against its recorded checksum.
pub fn execute(plan: &Plan, out: &Path, command: &str) -> Result<RunManifest, Failure> {
    std::fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    let mut runner = Runner {
        plan,
        out: out.to_path_buf(),
        graph: None,
        init: None,
        outputs: Vec::new(),
    };
    let mut stages = Vec::with_capacity(plan.stages.len());
    for &stage in &plan.stages {
        let start = Instant::now();
        log::info!("stage {}", stage.name());
        runner.run_stage(stage)?;
        stages.push(StageTiming {
            stage: stage.name(),
            wall_s: start.elapsed().as_secs_f64(),
        });
    }
    verify_outputs(out, &runner.outputs)?;

    let config = serde_json::to_value(&plan.config).expect("serializable");
    let canonical = serde_json::to_vec(&config).expect("serializable");
    let manifest = RunManifest {
        schema: MANIFEST_SCHEMA,
        version: env!("CARGO_PKG_VERSION"),
        command: command.to_string(),
        config_sha256: sha256_hex(&canonical),
        config,
        stages,
        outputs: runner.outputs,
        created_unix_s: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("serializable");
    text.push('\n');
    let path = out.join(MANIFEST_FILE);
    atomic_write(&path, text.as_bytes()).map_err(|e| io_failure(&path, e))?;
    Ok(manifest)
}

pub fn verify_outputs(dir: &Path, outputs: &[OutputRecord]) -> Result<(), Failure> {
    for rec in outputs {
        let path = dir.join(&rec.file);
        let bytes = std::fs::read(&path).map_err(|e| io_failure(&path, e))?;
        let got = sha256_hex(&bytes);
        if got != rec.sha256 {
            return Err(Failure::Contract(format!(
                "checksum mismatch for {}: recorded {}, found {got}",
                rec.file, rec.sha256
            )));
        }
    }
    Ok(())
}
