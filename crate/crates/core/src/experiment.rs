//! Configured runs that write `trajectory.csv`, `metrics.json` and
//! `gridscan.csv` into an output directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analysis::{check_assumption1_along, verify_run, Assumption1Report, VerificationReport, VerifyOptions};
use crate::error::Error;
use crate::geometry::{GridScan, GridSpec};
use crate::model::{check_disturbance_bounds, BoundsCheck};
use crate::planner::{validate_p1, PlanSpec, TransientPlan};
use crate::presets::{self, Example2Variant, LinearSpec, Preset};
use crate::sampling::{uniform_points, DEFAULT_SEED};
use crate::sim::{integrate, ClosedLoop, Trajectory};

pub use crate::sim::{ControllerMode, SimConfig};

/// One run, as read from a JSON file or assembled from command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<LinearSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<Example2Variant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_f: Option<f64>,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub verify: VerifyOptions,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub assert_safe: bool,
    /// Lattice points per axis for `gridscan.csv`; `0` skips the scan.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_resolution: Option<usize>,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: Some("example2".into()),
            custom: None,
            variant: None,
            x0: None,
            plan: None,
            t_f: None,
            sim: SimConfig::default(),
            verify: VerifyOptions::default(),
            out: default_out(),
            seed: DEFAULT_SEED,
            assert_safe: false,
            grid_resolution: None,
        }
    }
}

/// Why a run did not succeed, mapped onto process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("safety assertion failed: {0}")]
    Assertion(String),
    #[error("simulation diverged: {0}")]
    Divergence(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl ExperimentError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Assertion(_) => 1,
            ExperimentError::Config(_) | ExperimentError::Io(_) => 2,
            ExperimentError::Divergence(_) => 3,
        }
    }
}

impl From<Error> for ExperimentError {
    fn from(e: Error) -> Self {
        match e {
            Error::Divergence { .. } => ExperimentError::Divergence(e.to_string()),
            other => ExperimentError::Config(other.to_string()),
        }
    }
}

impl From<csv::Error> for ExperimentError {
    fn from(e: csv::Error) -> Self {
        ExperimentError::Io(std::io::Error::other(e))
    }
}

impl From<serde_json::Error> for ExperimentError {
    fn from(e: serde_json::Error) -> Self {
        ExperimentError::Io(std::io::Error::other(e))
    }
}

type Outcome<T> = std::result::Result<T, ExperimentError>;

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Outcome<Self> {
        serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Outcome<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Builds the preset and fills `x0`, `plan` and `t_f` from it where unset.
    pub fn resolve(&self) -> Outcome<(Preset, ExperimentConfig)> {
        let preset = match (&self.preset, &self.custom) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(ExperimentError::Config("give exactly one of preset and custom".into()))
            }
            (Some(name), None) => match (name.as_str(), self.variant) {
                ("example2", Some(v)) => presets::example2_variant(v)?,
                (_, Some(_)) => return Err(ExperimentError::Config("variants exist only for example2".into())),
                (other, None) => presets::by_name(other)?,
            },
            (None, Some(spec)) => {
                let x0 = self
                    .x0
                    .clone()
                    .ok_or_else(|| ExperimentError::Config("a custom system needs x0".into()))?;
                presets::linear(spec, x0)?
            }
        };
        let mut resolved = self.clone();
        let x0 = resolved.x0.get_or_insert_with(|| preset.x0.clone());
        if x0.len() != preset.system.n {
            return Err(ExperimentError::Config(format!(
                "x0 has {} entries, the system has {} states",
                x0.len(),
                preset.system.n
            )));
        }
        resolved.plan.get_or_insert_with(|| preset.plan.clone());
        resolved.t_f.get_or_insert(preset.t_f);
        resolved.sim.validate()?;
        Ok((preset, resolved))
    }
}

/// Result of [`run_experiment`]; artifacts are already on disk.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub config: ExperimentConfig,
    pub report: VerificationReport,
    pub assumption1: Assumption1Report,
    pub trajectory: Trajectory,
    pub metrics: Value,
}

pub fn csv_header(n: usize, m: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for (prefix, count) in [("x", n), ("u", m), ("unom", m), ("sigma", m), ("phi", m)] {
        h.extend((1..=count).map(|i| format!("{prefix}{i}")));
    }
    h.extend(["W0", "k", "event"].map(String::from));
    h
}

pub fn write_trajectory_csv(traj: &Trajectory, n: usize, m: usize, path: &Path) -> Outcome<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(csv_header(n, m))?;
    for i in 0..traj.len() {
        let c = &traj.controls[i];
        let mut row: Vec<String> = Vec::with_capacity(n + 4 * m + 4);
        row.push(traj.times[i].to_string());
        row.extend(traj.states[i].iter().map(f64::to_string));
        row.extend(c.u.iter().map(f64::to_string));
        row.extend(c.u_nom.iter().map(f64::to_string));
        row.extend(traj.sigma[i].iter().map(f64::to_string));
        row.extend(traj.phi[i].iter().map(f64::to_string));
        row.push(traj.w0[i].to_string());
        row.push(c.k.to_string());
        row.push(traj.record_events[i].iter().map(|e| e.as_str()).collect::<Vec<_>>().join(";"));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn plan_json(plan: &TransientPlan) -> Value {
    json!({ "family": plan.family, "t_f": plan.t_f, "residual": plan.residual, "warning": plan.warning })
}

/// Runs one configured experiment and writes its artifacts.
///
/// Artifacts are written before the safety assertion is checked, so a
/// failed assertion still leaves the evidence on disk.
pub fn run_experiment(cfg: &ExperimentConfig) -> Outcome<RunOutcome> {
    let started = Instant::now();
    let (preset, cfg) = cfg.resolve()?;
    let x0 = DVector::from_vec(cfg.x0.clone().expect("resolved"));
    let t_f = cfg.t_f.expect("resolved");
    let plan = cfg.plan.as_ref().expect("resolved").build(&preset.sliding, &x0, t_f)?;
    fs::create_dir_all(&cfg.out)
        .map_err(|e| ExperimentError::Config(format!("cannot create {}: {e}", cfg.out.display())))?;

    let lp = ClosedLoop::from_preset(&preset, plan.clone());
    let traj = integrate(&lp, &x0, &cfg.sim)?;
    let report = verify_run(&traj, &preset.region, &preset.system, &preset.disturbance.bounds, preset.params.q, &cfg.verify);
    let assumption1 = check_assumption1_along(&traj, &preset.region, &preset.system, 0.05)?;
    let (n, m) = (preset.system.n, preset.system.m);
    write_trajectory_csv(&traj, n, m, &cfg.out.join("trajectory.csv"))?;

    let bounds = check_disturbance_bounds(
        &preset.system,
        &preset.disturbance,
        &BoundsCheck {
            seed: cfg.seed,
            ..BoundsCheck::default()
        },
    )?;
    let p1_points = uniform_points(&preset.scan_box, 20_000, cfg.seed);
    let p1 = validate_p1(&plan, &preset.sliding, &preset.region, &p1_points, 200, 0.05);

    let default_res = if n == 2 { 200 } else { 40 };
    let resolution = cfg.grid_resolution.unwrap_or(default_res);
    let components = if (2..=3).contains(&n) && resolution > 0 {
        let scan = GridScan::run(&preset.sliding, &preset.region, GridSpec::new(preset.scan_box.clone(), resolution)?)?;
        scan.write_csv(&cfg.out.join("gridscan.csv"))?;
        let region = preset.region.clone();
        Some(scan.manifold_components(move |x| region.in_f(x))?)
    } else {
        None
    };

    let metrics = json!({
        "config": serde_json::to_value(&cfg)?,
        "preset": preset.name,
        "report": report,
        "assumption1": assumption1,
        "constants": preset.constants,
        "plan": plan_json(&plan),
        "p1": p1,
        "disturbance_bounds": bounds,
        "components": components,
        "runtime_s": started.elapsed().as_secs_f64(),
    });
    fs::write(cfg.out.join("metrics.json"), serde_json::to_string_pretty(&metrics)?)?;

    if cfg.assert_safe && !report.safe {
        return Err(ExperimentError::Assertion(format!(
            "run entered the unsafe set at t = {:?} (min clearance {:.3e}); artifacts in {}",
            report.entered_unsafe_time,
            report.min_clearance,
            cfg.out.display()
        )));
    }
    Ok(RunOutcome {
        config: cfg,
        report,
        assumption1,
        trajectory: traj,
        metrics,
    })
}

/// Side-by-side metrics for configs that share a preset and `x0`.
///
/// Each member writes into `out/<index>-<mode>`; the table is also written
/// to `out/comparison.json`.
pub fn compare(cfgs: &[ExperimentConfig], out: &Path) -> Outcome<Value> {
    if cfgs.is_empty() {
        return Err(ExperimentError::Config("compare needs at least one config".into()));
    }
    let mut resolved = Vec::with_capacity(cfgs.len());
    for c in cfgs {
        resolved.push(c.resolve()?.1);
    }
    let first = resolved[0].clone();
    for c in &resolved[1..] {
        if c.preset != first.preset || c.custom != first.custom || c.variant != first.variant {
            return Err(ExperimentError::Config("compared runs must share a preset".into()));
        }
        if c.x0 != first.x0 {
            return Err(ExperimentError::Config("compared runs must share x0".into()));
        }
    }
    let members: Vec<ExperimentConfig> = resolved
        .into_iter()
        .enumerate()
        .map(|(i, mut c)| {
            c.out = out.join(format!("{i}-{}", c.sim.mode));
            c
        })
        .collect();
    let results: Vec<Outcome<RunOutcome>> = std::thread::scope(|s| {
        let handles: Vec<_> = members
            .iter()
            .map(|c| {
                let c = ExperimentConfig {
                    assert_safe: false,
                    ..c.clone()
                };
                s.spawn(move || run_experiment(&c))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("run thread panicked")).collect()
    });
    let mut rows = Vec::with_capacity(results.len());
    for (c, r) in members.iter().zip(results) {
        let r = r?;
        rows.push(json!({
            "mode": c.sim.mode,
            "disturbance_on": c.sim.disturbance_on,
            "out": c.out,
            "report": r.report,
        }));
    }
    let table = json!({ "preset": first.preset, "x0": first.x0, "runs": rows });
    fs::create_dir_all(out)?;
    fs::write(out.join("comparison.json"), serde_json::to_string_pretty(&table)?)?;
    Ok(table)
}
