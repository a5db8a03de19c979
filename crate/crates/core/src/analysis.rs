//! Post-hoc checks on recorded trajectories.

use nalgebra::{DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::energy::EnergyFunction;
use crate::error::{Error, Result};
use crate::geometry::RegionSpec;
use crate::model::{AffineControlSystem, DisturbanceBounds};
use crate::sim::{detect_reaching, EventKind, Trajectory};

/// Settings for [`verify_run`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyOptions {
    /// `post_tf_sigma_sup` ignores the first `margin` time units after `t_f`.
    pub margin: f64,
    /// Multiplier on `k_max dt ‖g0‖_max` for the chattering band.
    pub band_factor: f64,
    /// Multiplier on `dt sup(‖∇W0‖ ‖g‖ ρ)` for the W0 slack.
    pub slack_factor: f64,
    /// Window for the sustained reaching-time detector.
    pub reaching_window: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            margin: 0.1,
            band_factor: 10.0,
            slack_factor: 10.0,
            reaching_window: 0.1,
        }
    }
}

/// Summary of one run. Optional fields are `None` when the run carries no
/// data for them (for instance no samples after `t_f`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub safe: bool,
    /// Minimum of `1 - exp(level - h)` over recorded states; positive
    /// means every recorded state is outside the unsafe closure.
    pub min_clearance: f64,
    /// Independent per-coordinate sweep of every recorded state.
    pub brute_force_safe: bool,
    pub entered_unsafe_time: Option<f64>,
    /// `sup ‖σ - φ‖` over recorded `t < t_f`.
    pub tracking_sup: Option<f64>,
    /// `sup ‖σ‖` over recorded `t >= t_f + margin`.
    pub post_tf_sigma_sup: Option<f64>,
    /// `sup ‖σ‖` over recorded `t >= t_f`.
    pub post_tf_sigma_sup_from_tf: Option<f64>,
    pub w0_monotone_after_tf: bool,
    /// Largest W0 increase between consecutive records after `t_f`.
    pub worst_w0_increase: f64,
    pub w0_slack: f64,
    pub final_norm: f64,
    /// Reaching bound for the initial plan mismatch.
    pub reaching_bound_t: Option<f64>,
    /// Sustained reaching time of `‖σ‖ <= chattering_band`.
    pub reaching_time: Option<f64>,
    pub k_max: f64,
    pub g0_norm_max: f64,
    pub g0_lambda_min: Option<f64>,
    pub chattering_band: f64,
    pub events: Vec<(String, f64)>,
    pub aborted: Option<String>,
}

fn sup<I: Iterator<Item = f64>>(it: I) -> Option<f64> {
    it.fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
}

/// Direct per-coordinate test against the unsafe set: inside the box and
/// `Σ 1/(1 - u_i²) <= level`.
fn brute_force_unsafe(energy: &EnergyFunction, x: &DVector<f64>) -> bool {
    let dom = energy.cbf.domain();
    let mut h = 0.0;
    for i in 0..x.len() {
        let w = 0.5 * (dom.hi[i] - dom.lo[i]);
        let u = (x[i] - 0.5 * (dom.hi[i] + dom.lo[i])) / w;
        if u.abs() >= 1.0 {
            return false;
        }
        h += 1.0 / (1.0 - u * u);
    }
    h <= energy.cbf.level()
}

/// `T = ‖σ(0) - φ(0)‖ / (q √2 √λmin)`, the printed reaching bound.
pub fn reaching_bound(mismatch: &RowDVector<f64>, q: f64, lambda_min: f64) -> Result<f64> {
    if !(q > 0.0) {
        return Err(Error::Contract(format!("q must be positive, got {q}")));
    }
    if !(lambda_min > 0.0) {
        return Err(Error::SingularChannel { cond: f64::INFINITY });
    }
    Ok(mismatch.norm() / (q * std::f64::consts::SQRT_2 * lambda_min.sqrt()))
}

/// Verifies a recorded run against the region and the disturbance bounds.
pub fn verify_run(
    traj: &Trajectory,
    region: &RegionSpec,
    system: &AffineControlSystem,
    bounds: &DisturbanceBounds,
    q: f64,
    opts: &VerifyOptions,
) -> VerificationReport {
    let energy = &region.energy;
    let t_f = traj.t_f;

    let entered_unsafe_time = traj.first_event(EventKind::EnteredUnsafe).map(|e| e.t);
    let min_clearance = traj.states.iter().map(|x| region.clearance(x)).fold(f64::INFINITY, f64::min);
    let brute_force_safe = !traj.states.iter().any(|x| brute_force_unsafe(energy, x));

    let tracking_sup = sup(
        traj.times
            .iter()
            .zip(traj.sigma.iter().zip(&traj.phi))
            .filter(|(t, _)| **t < t_f)
            .map(|(_, (s, p))| (s - p).norm()),
    );
    let post_sup = |from: f64| {
        sup(traj.times.iter().zip(&traj.sigma).filter(|(t, _)| **t >= from).map(|(_, s)| s.norm()))
    };

    let finite = |v: &f64| v.is_finite();
    let k_max = traj.controls.iter().map(|c| c.k).filter(finite).fold(0.0, f64::max);
    let g0_norm_max = traj.g0_norm.iter().copied().filter(finite).fold(0.0, f64::max);
    let g0_lambda_min = traj.g0_lambda_min.iter().copied().filter(finite).reduce(f64::min);
    let chattering_band = opts.band_factor * k_max * traj.dt * g0_norm_max;

    // W0 bookkeeping after t_f; records are `stride` steps apart.
    let mut worst_w0_increase = f64::NEG_INFINITY;
    let mut drive = 0.0f64;
    for i in 0..traj.len() {
        let x = &traj.states[i];
        if let Ok(g) = system.g(x) {
            let d = energy.gradient_extended(x).norm() * g.norm() * bounds.rho(traj.times[i]);
            if d.is_finite() {
                drive = drive.max(d);
            }
        }
        if i > 0 && traj.times[i - 1] >= t_f {
            worst_w0_increase = worst_w0_increase.max(traj.w0[i] - traj.w0[i - 1]);
        }
    }
    let worst_w0_increase = worst_w0_increase.max(0.0);
    let w0_slack = opts.slack_factor * traj.dt * traj.record_stride as f64 * drive;

    let reaching_bound_t = match (traj.sigma.first(), traj.phi.first(), g0_lambda_min) {
        (Some(s), Some(p), Some(l)) => reaching_bound(&(s - p), q, l).ok(),
        _ => None,
    };

    VerificationReport {
        safe: entered_unsafe_time.is_none() && min_clearance > 0.0,
        min_clearance,
        brute_force_safe,
        entered_unsafe_time,
        tracking_sup,
        post_tf_sigma_sup: post_sup(t_f + opts.margin),
        post_tf_sigma_sup_from_tf: post_sup(t_f),
        w0_monotone_after_tf: worst_w0_increase <= w0_slack,
        worst_w0_increase,
        w0_slack,
        final_norm: traj.states.last().map_or(f64::NAN, |x| x.norm()),
        reaching_bound_t,
        reaching_time: detect_reaching(traj, chattering_band, opts.reaching_window),
        k_max,
        g0_norm_max,
        g0_lambda_min,
        chattering_band,
        events: traj.events.iter().map(|e| (e.kind.as_str().to_string(), e.t)).collect(),
        aborted: traj.aborted.clone(),
    }
}

/// Decrease condition of the nominal law along a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assumption1Report {
    pub checked: usize,
    pub negative: usize,
    /// `negative / checked`, or 1 when nothing was checked.
    pub fraction: f64,
    pub worst: Option<f64>,
}

impl Assumption1Report {
    pub fn holds(&self) -> bool {
        self.fraction == 1.0
    }
}

/// Counts recorded samples, outside `D0` and the ball of radius
/// `origin_radius`, where `∇W0 (f + g u_nom) < 0`.
pub fn check_assumption1_along(
    traj: &Trajectory,
    region: &RegionSpec,
    system: &AffineControlSystem,
    origin_radius: f64,
) -> Result<Assumption1Report> {
    let mut checked = 0;
    let mut negative = 0;
    let mut worst: Option<f64> = None;
    for (x, rec) in traj.states.iter().zip(&traj.controls) {
        if x.norm() <= origin_radius || region.in_d0(x) {
            continue;
        }
        let u = DVector::from_column_slice(&rec.u_nom);
        let rate = (region.energy.gradient_extended(x) * (system.f(x)? + system.g(x)? * u))[0];
        checked += 1;
        if rate < 0.0 {
            negative += 1;
        }
        worst = Some(worst.map_or(rate, |w| w.max(rate)));
    }
    let fraction = if checked == 0 { 1.0 } else { negative as f64 / checked as f64 };
    Ok(Assumption1Report {
        checked,
        negative,
        fraction,
        worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::ControlRecord;
    use crate::planner::scalar_trig_plan;
    use crate::presets;
    use crate::sim::{integrate, ClosedLoop, ControllerMode, SimConfig};
    use std::f64::consts::PI;

    #[test]
    fn reaching_bound_arithmetic() {
        let zero = RowDVector::from_vec(vec![0.0, 0.0]);
        assert_eq!(reaching_bound(&zero, 1.0, 1.0).unwrap(), 0.0);
        let m = RowDVector::from_vec(vec![1.0, 1.0]);
        assert!((reaching_bound(&m, 1.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(reaching_bound(&m, 1.0, 0.0), Err(Error::SingularChannel { .. })));
        assert!(reaching_bound(&m, 0.0, 1.0).is_err());
    }

    fn frozen_at_origin() -> (presets::Preset, Trajectory) {
        let p = presets::example2().unwrap();
        let n = 50;
        let traj = Trajectory {
            mode: ControllerMode::NominalOnly,
            dt: 1e-3,
            record_stride: 1,
            t_f: 0.01,
            times: (0..n).map(|i| i as f64 * 1e-3).collect(),
            states: vec![DVector::zeros(2); n],
            controls: vec![ControlRecord::nominal(DVector::zeros(1)); n],
            sigma: vec![RowDVector::zeros(1); n],
            phi: vec![RowDVector::zeros(1); n],
            w0: vec![p.energy.value(&DVector::zeros(2)); n],
            g0_norm: vec![f64::NAN; n],
            g0_lambda_min: vec![f64::NAN; n],
            record_events: vec![Vec::new(); n],
            events: Vec::new(),
            aborted: None,
        };
        (p, traj)
    }

    #[test]
    fn constant_origin_trajectory() {
        let (p, traj) = frozen_at_origin();
        let r = verify_run(&traj, &p.region, &p.system, &p.disturbance.bounds, 0.5, &VerifyOptions::default());
        assert!(r.safe && r.brute_force_safe);
        assert_eq!(r.final_norm, 0.0);
        assert!(r.w0_monotone_after_tf);
        let a = check_assumption1_along(&traj, &p.region, &p.system, 0.05).unwrap();
        assert_eq!(a.checked, 0);
        assert!(a.holds());
    }

    #[test]
    fn brute_force_matches_region() {
        let p = presets::example2().unwrap();
        for x in crate::sampling::uniform_points(&p.scan_box, 5000, 7) {
            if p.region.in_unsafe_closure(&x) != p.region.in_unsafe(&x) {
                continue;
            }
            assert_eq!(brute_force_unsafe(&p.energy, &x), p.region.in_unsafe(&x), "{x}");
        }
    }

    #[test]
    fn sign_flipped_nominal_law_fails_assumption1() {
        let p = presets::example2().unwrap();
        let lp = ClosedLoop::from_preset(&p, scalar_trig_plan(2.0, 2.0, PI).unwrap());
        let cfg = SimConfig {
            t_end: 1.0,
            record_stride: 10,
            mode: ControllerMode::NominalOnly,
            disturbance_on: false,
            ..SimConfig::default()
        };
        let mut traj = integrate(&lp, &DVector::from_vec(vec![4.0, 3.0]), &cfg).unwrap();
        let good = check_assumption1_along(&traj, &p.region, &p.system, 0.05).unwrap();
        assert!(good.checked > 0 && good.holds(), "{good:?}");
        for c in &mut traj.controls {
            c.u_nom.iter_mut().for_each(|v| *v = -*v);
        }
        let bad = check_assumption1_along(&traj, &p.region, &p.system, 0.05).unwrap();
        assert!(bad.fraction < 1.0);
    }
}
