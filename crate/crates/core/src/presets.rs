//! The two reference problems, fully assembled.

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::control::ControllerParams;
use crate::energy::{BoxBarrier, CConstants, ControlBarrierFunction, ControlLyapunovFunction, EnergyFunction};
use crate::error::{Error, Result};
use crate::geometry::{build_f_eta, RegionRule, RegionSpec};
use crate::model::{
    example2_system, example3_system, AffineControlSystem, DisturbanceBounds, DisturbanceModel, MatrixMap, MatrixPartials,
    VectorMap,
};
use crate::planner::PlanSpec;
use crate::sampling::AxisBox;
use crate::sliding::{SigmaSource, SlidingVariable};

/// Level of the barrier potential bounding the unsafe set in both problems.
pub const UNSAFE_LEVEL: f64 = 4.0;

/// Constants attached to a preset, as published with the problem.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PresetConstants {
    pub lambda: f64,
    pub kappa: f64,
    pub epsilon_b: f64,
    /// Published `c1..c4`, when the problem lists them.
    pub printed_c: Option<CConstants>,
    /// Published η, when the problem uses the η-construction.
    pub printed_eta: Option<f64>,
    /// η found by [`build_f_eta`].
    pub computed_eta: Option<f64>,
}

/// Everything needed to simulate one reference problem.
#[derive(Debug, Clone)]
pub struct Preset {
    pub name: String,
    pub system: Arc<AffineControlSystem>,
    pub disturbance: DisturbanceModel,
    pub energy: Arc<EnergyFunction>,
    pub region: Arc<RegionSpec>,
    pub sliding: SlidingVariable,
    pub params: ControllerParams,
    pub x0: Vec<f64>,
    pub plan: PlanSpec,
    pub t_f: f64,
    pub constants: PresetConstants,
    /// Window used for grid scans of the manifold.
    pub scan_box: AxisBox,
}

/// Initial conditions and plans listed for the first problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Example2Variant {
    /// `x0 = (2, 1)`, `(α, β) = (2, 2)`, `t_f = π`.
    Reference,
    /// `x0 = (3.5, 1.5)`, `(α, β) = (3, -1)`, `t_f = 2.5`. Here `φ(0) = 6`
    /// while `σ(0) = 6.5`.
    Text,
    /// `x0 = (2.5, 1.25)`, `(α, β) = (2.5, 0.75)`, `t_f = π`.
    Third,
    /// `x0 = (3.5, -2.5)`, listed without a plan, so the
    /// plan is fitted with `α = σ(0)/2`, `β = 0`.
    Caption,
}

pub fn by_name(name: &str) -> Result<Preset> {
    match name {
        "example2" => example2(),
        "example3" => example3(),
        other => Err(Error::Contract(format!("unknown preset {other:?}; expected example2 or example3"))),
    }
}

pub fn example2() -> Result<Preset> {
    example2_variant(Example2Variant::Reference)
}

pub fn example2_variant(variant: Example2Variant) -> Result<Preset> {
    let (system, disturbance) = example2_system();
    let system = Arc::new(system);
    let clf = ControlLyapunovFunction::quadratic(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]))?;
    let domain = AxisBox::new(vec![1.0, -1.0], vec![3.0, 1.0])?;
    let cbf = ControlBarrierFunction::with_level(BoxBarrier::new(domain), UNSAFE_LEVEL)?;
    let energy = Arc::new(EnergyFunction::new(clf, cbf, 1000.0, -0.7)?);

    let exterior = |x: &DVector<f64>| energy.clf.gradient(x) * system.g(x).expect("fixed dimensions");
    let eta = build_f_eta(&energy, exterior, 401)?;
    let region = Arc::new(RegionSpec::with_default_d0(energy.clone(), eta.f.clone()));
    let sliding = SlidingVariable::new(energy.clone(), system.clone(), SigmaSource::Energy);

    let (x0, plan, t_f) = match variant {
        Example2Variant::Reference => (vec![2.0, 1.0], PlanSpec::ScalarTrig { alpha: 2.0, beta: 2.0 }, PI),
        Example2Variant::Text => (vec![3.5, 1.5], PlanSpec::ScalarTrig { alpha: 3.0, beta: -1.0 }, 2.5),
        Example2Variant::Third => (vec![2.5, 1.25], PlanSpec::ScalarTrig { alpha: 2.5, beta: 0.75 }, PI),
        Example2Variant::Caption => (vec![3.5, -2.5], PlanSpec::Auto { beta: 0.0 }, PI),
    };
    Ok(Preset {
        name: "example2".into(),
        constants: PresetConstants {
            lambda: energy.lambda,
            kappa: energy.kappa,
            epsilon_b: energy.cbf.epsilon_b,
            printed_c: None,
            printed_eta: Some(16.0156),
            computed_eta: eta.eta,
        },
        system,
        disturbance,
        energy,
        region,
        sliding,
        params: ControllerParams::new(2.0, 0.5)?,
        x0,
        plan,
        t_f,
        scan_box: AxisBox::cube(2, 6.0)?,
    })
}

pub fn example3() -> Result<Preset> {
    let (system, disturbance) = example3_system();
    let system = Arc::new(system);
    // V = ½‖x‖² has exact bounds (½, ½); the published c1 = 1, c2 = 2 are kept in `printed_c`.
    let clf = ControlLyapunovFunction::quadratic(DMatrix::identity(3, 3) * 0.5)?;
    let domain = AxisBox::centered(&[2.0, 2.0, FRAC_PI_2], &[1.0, 1.0, 1.0])?;
    let cbf = ControlBarrierFunction::with_level(BoxBarrier::new(domain), UNSAFE_LEVEL)?;
    let energy = Arc::new(EnergyFunction::new(clf, cbf, 487.5263, -8.7462)?);
    // With κ = -8.7462, W0 dips below zero near the unsafe boundary, so D0
    // keeps D explicitly.
    let d0 = RegionRule::Union(vec![RegionRule::Unsafe, RegionRule::EnergyAbove(0.0)]);
    let region = Arc::new(RegionSpec::new(energy.clone(), d0, RegionRule::Box, RegionRule::Box));
    let sliding = SlidingVariable::new(energy.clone(), system.clone(), SigmaSource::Clf);
    Ok(Preset {
        name: "example3".into(),
        constants: PresetConstants {
            lambda: energy.lambda,
            kappa: energy.kappa,
            epsilon_b: energy.cbf.epsilon_b,
            printed_c: Some(CConstants {
                c1: 1.0,
                c2: 2.0,
                c3: 24.6,
                c4: 8.74,
            }),
            printed_eta: None,
            computed_eta: None,
        },
        system,
        disturbance,
        energy,
        region,
        sliding,
        params: ControllerParams::new(2.0, 2.0)?,
        x0: vec![2.0, 2.5, PI],
        plan: PlanSpec::VectorCos { coeffs: vec![-2.0, PI] },
        t_f: FRAC_PI_2,
        scan_box: AxisBox::cube(3, 6.0)?,
    })
}

/// Linear plant `x' = A x + B u` with a quadratic Lyapunov function and a
/// box-shaped unsafe set, for experiments beyond the two reference problems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSpec {
    /// Row-major `n x n`.
    pub a: Vec<Vec<f64>>,
    /// Row-major `n x m`.
    pub b: Vec<Vec<f64>>,
    /// Symmetric positive definite `n x n`.
    pub p: Vec<Vec<f64>>,
    pub unsafe_box: AxisBox,
    #[serde(default = "default_level")]
    pub level: f64,
    pub lambda: f64,
    pub kappa: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    pub q: f64,
    /// Amplitude of `δ = -amp sin(ω t) 1/√m`.
    #[serde(default)]
    pub disturbance_amplitude: f64,
    #[serde(default = "default_omega")]
    pub disturbance_frequency: f64,
    pub rho: f64,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default)]
    pub mu: f64,
    #[serde(default = "default_source")]
    pub sigma_source: SigmaSource,
}

fn default_level() -> f64 {
    UNSAFE_LEVEL
}

fn default_gamma() -> f64 {
    2.0
}

fn default_omega() -> f64 {
    10.0
}

fn default_source() -> SigmaSource {
    SigmaSource::Energy
}

fn matrix(what: &'static str, rows: &[Vec<f64>], cols: usize) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::DimensionMismatch {
            what,
            expected: cols,
            got: rows.iter().map(|r| r.len()).find(|&l| l != cols).unwrap_or(0),
        });
    }
    Ok(DMatrix::from_row_iterator(rows.len(), cols, rows.iter().flatten().copied()))
}

/// Builds a preset from a [`LinearSpec`]. The plan defaults to a fit at `x0`.
pub fn linear(spec: &LinearSpec, x0: Vec<f64>) -> Result<Preset> {
    let n = spec.a.len();
    let m = spec.b.first().map_or(0, |r| r.len());
    if n == 0 || m == 0 {
        return Err(Error::Contract("linear system needs n >= 1 and m >= 1".into()));
    }
    let a = matrix("A columns", &spec.a, n)?;
    let b = matrix("B columns", &spec.b, m)?;
    let p = matrix("P columns", &spec.p, n)?;
    crate::error::check_dim("B rows", n, b.nrows())?;
    crate::error::check_dim("P rows", n, p.nrows())?;
    crate::error::check_dim("unsafe box", n, spec.unsafe_box.dim())?;
    crate::error::check_dim("initial state", n, x0.len())?;

    let f: VectorMap = Arc::new(move |x| &a * x);
    let b_map = b.clone();
    let g: MatrixMap = Arc::new(move |_| b_map.clone());
    let partials: MatrixPartials = Arc::new(move |_| vec![DMatrix::zeros(n, m); n]);
    let system = Arc::new(AffineControlSystem::new("linear", n, m, f, g).with_g_partials(partials));
    let (amp, omega) = (spec.disturbance_amplitude, spec.disturbance_frequency);
    let disturbance = DisturbanceModel::new(
        Arc::new(move |t, _| DVector::from_element(m, -amp * (omega * t).sin() / (m as f64).sqrt())),
        Arc::new(move |_, _| DMatrix::zeros(m, m)),
        DisturbanceBounds::constant(spec.rho, spec.epsilon, spec.mu)?,
    );

    let clf = ControlLyapunovFunction::quadratic(p)?;
    let cbf = ControlBarrierFunction::with_level(BoxBarrier::new(spec.unsafe_box.clone()), spec.level)?;
    let energy = Arc::new(EnergyFunction::new(clf, cbf, spec.lambda, spec.kappa)?);
    let region = Arc::new(RegionSpec::with_default_d0(energy.clone(), RegionRule::Box));
    let sliding = SlidingVariable::new(energy.clone(), system.clone(), spec.sigma_source);
    let reach = spec
        .unsafe_box
        .lo
        .iter()
        .chain(&spec.unsafe_box.hi)
        .chain(&x0)
        .fold(0.0f64, |r, v| r.max(v.abs()));
    Ok(Preset {
        name: "linear".into(),
        constants: PresetConstants {
            lambda: energy.lambda,
            kappa: energy.kappa,
            epsilon_b: energy.cbf.epsilon_b,
            printed_c: None,
            printed_eta: None,
            computed_eta: None,
        },
        system,
        disturbance,
        energy,
        region,
        sliding,
        params: ControllerParams::new(spec.gamma, spec.q)?,
        x0,
        plan: PlanSpec::Auto { beta: 0.0 },
        t_f: PI,
        scan_box: AxisBox::cube(n, (1.5 * reach).max(1.0))?,
    })
}
