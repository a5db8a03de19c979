//! Fixed-step explicit Euler integration of the switched closed loop.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::control::{ablation_no_transient, composite_control, nominal_from_gradient, CompositeInputs, ControlRecord, ControllerParams};
use crate::energy::EnergyFunction;
use crate::error::{check_dim, Error, Result};
use crate::geometry::RegionSpec;
use crate::model::{eval_dynamics, AffineControlSystem, DisturbanceModel};
use crate::planner::TransientPlan;
use crate::presets::Preset;
use crate::sliding::{sigma_sf, SlidingFrame, SlidingVariable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerMode {
    NominalOnly,
    Robust,
    AblationNoTransient,
}

impl ControllerMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ControllerMode::NominalOnly => "nominal-only",
            ControllerMode::Robust => "robust",
            ControllerMode::AblationNoTransient => "ablation-no-transient",
        }
    }
}

impl fmt::Display for ControllerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ControllerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nominal-only" => Ok(Self::NominalOnly),
            "robust" => Ok(Self::Robust),
            "ablation-no-transient" => Ok(Self::AblationNoTransient),
            other => Err(Error::Contract(format!("unknown controller mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub record_stride: usize,
    pub mode: ControllerMode,
    pub disturbance_on: bool,
    /// `‖σ‖` at or below this counts as on the manifold; leaving needs twice
    /// the value, so chattering does not flood the event list.
    pub manifold_tol: f64,
    /// Run the no-transient ablation with the sign that repels `σ̄`.
    pub ablation_printed_sign: bool,
    /// Steps a state must stay outside `F` (or off the manifold) before
    /// `entered-F` (or `reached-manifold`) can fire again.
    pub event_debounce: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-4,
            t_end: 10.0,
            record_stride: 100,
            mode: ControllerMode::Robust,
            disturbance_on: true,
            manifold_tol: 0.2,
            ablation_printed_sign: false,
            event_debounce: 100,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.t_end > self.dt) || self.record_stride == 0 || !(self.manifold_tol > 0.0) {
            return Err(Error::Contract(format!(
                "need dt > 0, t_end > dt, stride >= 1, manifold_tol > 0 (got {}, {}, {}, {})",
                self.dt, self.t_end, self.record_stride, self.manifold_tol
            )));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

/// Everything the integrator evaluates.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub system: Arc<AffineControlSystem>,
    pub disturbance: DisturbanceModel,
    pub energy: Arc<EnergyFunction>,
    pub sliding: SlidingVariable,
    pub region: Arc<RegionSpec>,
    pub plan: TransientPlan,
    pub params: ControllerParams,
}

impl ClosedLoop {
    pub fn from_preset(preset: &Preset, plan: TransientPlan) -> Self {
        Self {
            system: preset.system.clone(),
            disturbance: preset.disturbance.clone(),
            energy: preset.energy.clone(),
            sliding: preset.sliding.clone(),
            region: preset.region.clone(),
            plan,
            params: preset.params,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    EnteredUnsafe,
    #[serde(rename = "entered-F")]
    EnteredF,
    ReachedManifold,
    LeftManifold,
    SingularG0,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::EnteredUnsafe => "entered-unsafe",
            EventKind::EnteredF => "entered-F",
            EventKind::ReachedManifold => "reached-manifold",
            EventKind::LeftManifold => "left-manifold",
            EventKind::SingularG0 => "singular-g0",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub t: f64,
    pub step: usize,
    pub kind: EventKind,
}

/// Recorded run. Every series has one entry per recorded step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub mode: ControllerMode,
    pub dt: f64,
    pub record_stride: usize,
    pub t_f: f64,
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<ControlRecord>,
    pub sigma: Vec<RowDVector<f64>>,
    pub phi: Vec<RowDVector<f64>>,
    pub w0: Vec<f64>,
    /// Spectral norm of `g0`; `NaN` where the frame is unavailable.
    pub g0_norm: Vec<f64>,
    /// `λmin(g0 g0ᵀ)`; `NaN` where the frame is unavailable.
    pub g0_lambda_min: Vec<f64>,
    /// Events since the previous record, for the CSV event column.
    pub record_events: Vec<Vec<EventKind>>,
    pub events: Vec<Event>,
    pub aborted: Option<String>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn first_event(&self, kind: EventKind) -> Option<&Event> {
        self.events.iter().find(|e| e.kind == kind)
    }
}

struct Monitor {
    in_unsafe: bool,
    in_f: bool,
    on_manifold: bool,
    // Consecutive steps outside F / off the manifold.
    out_f: usize,
    off_manifold: usize,
    pending: Vec<EventKind>,
    events: Vec<Event>,
}

impl Monitor {
    fn push(&mut self, t: f64, step: usize, kind: EventKind) {
        self.events.push(Event { t, step, kind });
        self.pending.push(kind);
    }
}

fn frame_for(lp: &ClosedLoop, x: &DVector<f64>) -> Result<SlidingFrame> {
    lp.sliding.frame_extended(x)
}

/// Integrates the closed loop from `x0`.
///
/// The state must start outside the closure of the unsafe set and outside
/// `D0`. A singular `g0` logs an event and ends the run early; a non-finite
/// state is a divergence error.
pub fn integrate(lp: &ClosedLoop, x0: &DVector<f64>, cfg: &SimConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let n = lp.system.n;
    let m = lp.system.m;
    check_dim("initial state", n, x0.len())?;
    check_dim("plan", m, lp.plan.dim())?;
    if lp.region.in_unsafe_closure(x0) {
        return Err(Error::Contract("initial state lies in the closure of the unsafe set".into()));
    }
    if lp.region.in_d0(x0) {
        return Err(Error::Contract("initial state lies in D0".into()));
    }

    let silent;
    let dist = if cfg.disturbance_on {
        &lp.disturbance
    } else {
        silent = DisturbanceModel::silent(m, lp.disturbance.bounds.clone());
        &silent
    };
    let bounds = &lp.disturbance.bounds;
    let steps = cfg.steps();
    let capacity = steps / cfg.record_stride + 2;
    let mut traj = Trajectory {
        mode: cfg.mode,
        dt: cfg.dt,
        record_stride: cfg.record_stride,
        t_f: lp.plan.t_f,
        times: Vec::with_capacity(capacity),
        states: Vec::with_capacity(capacity),
        controls: Vec::with_capacity(capacity),
        sigma: Vec::with_capacity(capacity),
        phi: Vec::with_capacity(capacity),
        w0: Vec::with_capacity(capacity),
        g0_norm: Vec::with_capacity(capacity),
        g0_lambda_min: Vec::with_capacity(capacity),
        record_events: Vec::with_capacity(capacity),
        events: Vec::new(),
        aborted: None,
    };
    let mut mon = Monitor {
        in_unsafe: false,
        in_f: lp.region.in_f(x0),
        on_manifold: false,
        out_f: usize::MAX,
        off_manifold: usize::MAX,
        pending: Vec::new(),
        events: Vec::new(),
    };

    let mut x = x0.clone();
    for step in 0..=steps {
        let t = step as f64 * cfg.dt;

        // Region and manifold events.
        let unsafe_now = lp.region.in_unsafe_closure(&x);
        if unsafe_now && !mon.in_unsafe {
            mon.push(t, step, EventKind::EnteredUnsafe);
        }
        mon.in_unsafe = unsafe_now;
        if lp.region.in_f(&x) {
            if !mon.in_f && mon.out_f >= cfg.event_debounce {
                mon.push(t, step, EventKind::EnteredF);
            }
            mon.in_f = true;
            mon.out_f = 0;
        } else {
            mon.in_f = false;
            mon.out_f = mon.out_f.saturating_add(1);
        }

        let grad = lp.energy.gradient_extended(&x);
        let u_nom = nominal_from_gradient(&grad, &lp.system, &x, &lp.params)?;
        let frame = frame_for(lp, &x);
        let sigma = match &frame {
            Ok(fr) => fr.sigma.clone(),
            Err(_) => lp.sliding.sigma_extended(&x)?,
        };
        let s_norm = sigma.norm();
        if s_norm <= cfg.manifold_tol {
            if !mon.on_manifold && mon.off_manifold >= cfg.event_debounce {
                mon.on_manifold = true;
                mon.push(t, step, EventKind::ReachedManifold);
            }
            mon.off_manifold = 0;
        } else {
            mon.off_manifold = mon.off_manifold.saturating_add(1);
            if mon.on_manifold && s_norm > 2.0 * cfg.manifold_tol {
                mon.on_manifold = false;
                mon.push(t, step, EventKind::LeftManifold);
            }
        }

        let phi = lp.plan.phi(t);
        let record = match cfg.mode {
            ControllerMode::NominalOnly => Ok(ControlRecord::nominal(u_nom)),
            ControllerMode::Robust | ControllerMode::AblationNoTransient => match &frame {
                Err(Error::SingularChannel { cond }) => Err(format!("g0 singular (cond {cond:.3e}) at t = {t}")),
                Err(e) => return Err(e.clone()),
                Ok(fr) => {
                    let f = lp.system.f(&x)?;
                    Ok(if cfg.mode == ControllerMode::Robust {
                        composite_control(
                            CompositeInputs {
                                frame: fr,
                                f: &f,
                                u_nom,
                                sigma_sf: sigma_sf(fr, &phi, t, lp.plan.t_f),
                                phi_dot: lp.plan.phi_dot(t),
                                epsilon: bounds.epsilon,
                                mu: bounds.mu,
                                rho_t: bounds.rho(t),
                            },
                            &lp.params,
                        )
                    } else {
                        ablation_no_transient(
                            fr,
                            &f,
                            u_nom,
                            bounds.epsilon,
                            bounds.mu,
                            bounds.rho(t),
                            &lp.params,
                            cfg.ablation_printed_sign,
                        )
                    })
                }
            },
        };
        let record = match record {
            Ok(r) => r,
            Err(reason) => {
                mon.push(t, step, EventKind::SingularG0);
                traj.aborted = Some(reason);
                break;
            }
        };

        if step % cfg.record_stride == 0 || step == steps {
            let (g0n, g0l) = match &frame {
                Ok(fr) => (fr.g0_norm(), fr.g0_lambda_min()),
                Err(_) => (f64::NAN, f64::NAN),
            };
            traj.times.push(t);
            traj.w0.push(lp.energy.value(&x));
            traj.states.push(x.clone());
            traj.sigma.push(sigma);
            traj.phi.push(phi);
            traj.g0_norm.push(g0n);
            traj.g0_lambda_min.push(g0l);
            traj.record_events.push(std::mem::take(&mut mon.pending));
            traj.controls.push(record.clone());
        }
        if step == steps {
            break;
        }

        let dx = eval_dynamics(&lp.system, dist, t, &x, &record.u_vector())?;
        let next = &x + dx * cfg.dt;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                t: t + cfg.dt,
                step: step + 1,
                last_finite: x.iter().copied().collect(),
            });
        }
        x = next;
    }
    if !mon.pending.is_empty() {
        if let Some(last) = traj.record_events.last_mut() {
            last.append(&mut mon.pending);
        }
    }
    traj.events = mon.events;
    Ok(traj)
}

/// First recorded time from which `values <= tol` holds for `window` time
/// units (or until the end of the record).
pub fn first_sustained(times: &[f64], values: &[f64], tol: f64, window: f64) -> Option<f64> {
    let n = times.len().min(values.len());
    let mut start: Option<usize> = None;
    for i in 0..n {
        if values[i] <= tol {
            let s = *start.get_or_insert(i);
            if times[i] - times[s] >= window {
                return Some(times[s]);
            }
        } else {
            start = None;
        }
    }
    start.map(|s| times[s])
}

/// Reaching time of the manifold `‖σ‖ <= tol`, sustained over `window`.
pub fn detect_reaching(traj: &Trajectory, tol: f64, window: f64) -> Option<f64> {
    let norms: Vec<f64> = traj.sigma.iter().map(|s| s.norm()).collect();
    first_sustained(&traj.times, &norms, tol, window)
}

/// Time at which `σ` catches the plan, `‖σ - φ‖ <= tol`, sustained over `window`.
pub fn detect_tracking(traj: &Trajectory, tol: f64, window: f64) -> Option<f64> {
    let gaps: Vec<f64> = traj.sigma.iter().zip(&traj.phi).map(|(s, p)| (s - p).norm()).collect();
    first_sustained(&traj.times, &gaps, tol, window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::{scalar_trig_plan, zero_plan};
    use crate::presets;
    use std::f64::consts::PI;

    fn short(mode: ControllerMode, t_end: f64) -> SimConfig {
        SimConfig {
            t_end,
            record_stride: 10,
            mode,
            ..SimConfig::default()
        }
    }

    #[test]
    fn initial_state_preconditions() {
        let p = presets::example2().unwrap();
        let lp = ClosedLoop::from_preset(&p, scalar_trig_plan(2.0, 2.0, PI).unwrap());
        let inside = DVector::from_vec(vec![2.0, 0.0]);
        assert!(matches!(integrate(&lp, &inside, &SimConfig::default()), Err(Error::Contract(_))));
        assert!(integrate(&lp, &DVector::from_vec(vec![2.0]), &SimConfig::default()).is_err());
    }

    #[test]
    fn recording_and_bookkeeping() {
        let p = presets::example2().unwrap();
        let lp = ClosedLoop::from_preset(&p, scalar_trig_plan(2.0, 2.0, PI).unwrap());
        let traj = integrate(&lp, &DVector::from_vec(vec![2.0, 1.0]), &short(ControllerMode::Robust, 0.5)).unwrap();
        assert_eq!(traj.len(), 501);
        for w in traj.times.windows(2) {
            assert!((w[1] - w[0] - 1e-3).abs() < 1e-12);
        }
        for (x, w) in traj.states.iter().zip(&traj.w0) {
            assert_eq!(p.energy.value(x), *w);
        }
        assert!(traj.events.windows(2).all(|w| w[0].t <= w[1].t));
    }

    #[test]
    fn deterministic_runs() {
        let p = presets::example3().unwrap();
        let lp = ClosedLoop::from_preset(&p, crate::planner::vector_cos_plan(&[-2.0, PI], std::f64::consts::FRAC_PI_2).unwrap());
        let x0 = DVector::from_vec(vec![2.0, 2.5, PI]);
        let a = integrate(&lp, &x0, &short(ControllerMode::Robust, 0.3)).unwrap();
        let b = integrate(&lp, &x0, &short(ControllerMode::Robust, 0.3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn robust_start_on_manifold_stays_in_band() {
        let p = presets::example2().unwrap();
        let lp = ClosedLoop::from_preset(&p, zero_plan(1, 1e-3).unwrap());
        // On the exterior manifold x1 = -2 x2.
        let x0 = DVector::from_vec(vec![-2.0, 1.0]);
        let cfg = SimConfig {
            disturbance_on: false,
            ..short(ControllerMode::Robust, 1.0)
        };
        let traj = integrate(&lp, &x0, &cfg).unwrap();
        let k_max = traj.controls.iter().map(|c| c.k).fold(0.0, f64::max);
        let g0_max = traj.g0_norm.iter().copied().fold(0.0, f64::max);
        // One Euler step moves σ by about dt (‖g0‖ k + drift).
        let band = 2.0 * k_max * cfg.dt * g0_max;
        let worst = traj.sigma.iter().map(|s| s.norm()).fold(0.0, f64::max);
        assert!(worst <= band, "{worst} > {band}");
        assert_eq!(detect_reaching(&traj, band, 0.1), Some(0.0));
    }

    #[test]
    fn sustained_detection() {
        let t = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
        assert_eq!(first_sustained(&t, &[5.0, 0.0, 3.0, 0.0, 0.0, 0.0], 0.5, 0.1), Some(0.3));
        assert_eq!(first_sustained(&t, &[5.0; 6], 0.5, 0.1), None);
    }

    #[test]
    fn mode_names_round_trip() {
        for mode in [ControllerMode::NominalOnly, ControllerMode::Robust, ControllerMode::AblationNoTransient] {
            assert_eq!(mode.as_str().parse::<ControllerMode>().unwrap(), mode);
        }
        assert!("fast".parse::<ControllerMode>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig { dt: 0.0, ..SimConfig::default() }.validate().is_err());
        assert!(SimConfig { record_stride: 0, ..SimConfig::default() }.validate().is_err());
        assert!(SimConfig { t_end: 1e-5, ..SimConfig::default() }.validate().is_err());
    }
}
