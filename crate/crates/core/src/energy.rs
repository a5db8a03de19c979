//! The energy function `W0 = V + λB + κ` built from a control Lyapunov
//! function `V` and a box barrier `B`, with its constants and checks.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::model::AffineControlSystem;
use crate::numdiff::{central_gradient, GRADIENT_REL_STEP};
use crate::sampling::{AxisBox, BoundarySampler};

/// Width of the band inside the box boundary where the barrier's inner
/// branch is never differentiated.
pub const GUARD_BAND: f64 = 1e-6;

/// A scalar field with first and second derivatives.
///
/// The default derivative implementations are central finite differences,
/// so user-supplied fields only need `value`.
pub trait ScalarField: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> f64;

    fn gradient(&self, x: &DVector<f64>) -> RowDVector<f64> {
        central_gradient(|p| self.value(p), x, GRADIENT_REL_STEP)
    }

    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = x.len();
        let mut probe = x.clone();
        let mut h = DMatrix::zeros(n, n);
        for k in 0..n {
            let step = 1e-4 * x[k].abs().max(1.0);
            probe[k] = x[k] + step;
            let plus = self.gradient(&probe);
            probe[k] = x[k] - step;
            let minus = self.gradient(&probe);
            probe[k] = x[k];
            for i in 0..n {
                h[(i, k)] = (plus[i] - minus[i]) / (2.0 * step);
            }
        }
        (&h + h.transpose()) * 0.5
    }
}

/// `V(x) = xᵀ P x` with symmetric `P`.
#[derive(Debug, Clone)]
pub struct QuadraticForm {
    p: DMatrix<f64>,
}

impl QuadraticForm {
    pub fn new(p: DMatrix<f64>) -> Result<Self> {
        if !p.is_square() {
            return Err(Error::Contract("quadratic form needs a square matrix".into()));
        }
        if (&p - p.transpose()).amax() > 1e-14 * p.amax().max(1.0) {
            return Err(Error::Contract("quadratic form matrix must be symmetric".into()));
        }
        Ok(Self { p })
    }

    /// Exact `(c1, c2)` with `c1‖x‖² <= V(x) <= c2‖x‖²`.
    pub fn eigen_bounds(&self) -> (f64, f64) {
        let eig = self.p.clone().symmetric_eigenvalues();
        (eig.min(), eig.max())
    }
}

impl ScalarField for QuadraticForm {
    fn dim(&self) -> usize {
        self.p.nrows()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.p * x))
    }

    fn gradient(&self, x: &DVector<f64>) -> RowDVector<f64> {
        (&self.p * x * 2.0).transpose()
    }

    fn hessian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        &self.p * 2.0
    }
}

type ScalarMap = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
type RowMap = Arc<dyn Fn(&DVector<f64>) -> RowDVector<f64> + Send + Sync>;

/// Closure-backed field; derivatives fall back to finite differences.
#[derive(Clone)]
pub struct FnField {
    dim: usize,
    value: ScalarMap,
    gradient: Option<RowMap>,
}

impl FnField {
    pub fn new(dim: usize, value: ScalarMap) -> Self {
        Self {
            dim,
            value,
            gradient: None,
        }
    }

    pub fn with_gradient(mut self, gradient: RowMap) -> Self {
        self.gradient = Some(gradient);
        self
    }
}

impl ScalarField for FnField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        (self.value)(x)
    }

    fn gradient(&self, x: &DVector<f64>) -> RowDVector<f64> {
        match &self.gradient {
            Some(g) => g(x),
            None => central_gradient(|p| (self.value)(p), x, GRADIENT_REL_STEP),
        }
    }
}

/// `h(x) = Σ 1 / (1 - ((x_i - c_i)/w_i)²)` on an open box; infinite on its
/// boundary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxBarrier {
    pub domain: AxisBox,
    center: Vec<f64>,
    half_widths: Vec<f64>,
}

impl BoxBarrier {
    pub fn new(domain: AxisBox) -> Self {
        Self {
            center: domain.center().iter().copied().collect(),
            half_widths: domain.half_widths().iter().copied().collect(),
            domain,
        }
    }

    fn scaled(&self, x: &DVector<f64>, i: usize) -> f64 {
        (x[i] - self.center[i]) / self.half_widths[i]
    }

    /// `h(x)` inside the box, `+inf` elsewhere.
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        if !self.domain.contains(x) {
            return f64::INFINITY;
        }
        (0..x.len())
            .map(|i| {
                let u = self.scaled(x, i);
                1.0 / (1.0 - u * u)
            })
            .sum()
    }

    /// Valid only inside the box.
    pub fn gradient(&self, x: &DVector<f64>) -> RowDVector<f64> {
        RowDVector::from_fn(x.len(), |_, i| {
            let u = self.scaled(x, i);
            let a = 1.0 - u * u;
            2.0 * u / (self.half_widths[i] * a * a)
        })
    }

    /// Diagonal; valid only inside the box.
    pub fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = x.len();
        DMatrix::from_fn(n, n, |i, k| {
            if i != k {
                return 0.0;
            }
            let u = self.scaled(x, i);
            let a = 1.0 - u * u;
            let w = self.half_widths[i];
            (2.0 + 6.0 * u * u) / (w * w * a * a * a)
        })
    }
}

#[derive(Clone)]
pub struct ControlLyapunovFunction {
    pub field: Arc<dyn ScalarField>,
    /// `(c1, c2)` with `c1‖x‖² <= V(x) <= c2‖x‖²`.
    pub quad_bounds: (f64, f64),
}

impl fmt::Debug for ControlLyapunovFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlLyapunovFunction")
            .field("dim", &self.field.dim())
            .field("quad_bounds", &self.quad_bounds)
            .finish()
    }
}

impl ControlLyapunovFunction {
    pub fn new(field: Arc<dyn ScalarField>, quad_bounds: (f64, f64)) -> Result<Self> {
        if !(quad_bounds.0 > 0.0 && quad_bounds.0 <= quad_bounds.1) {
            return Err(Error::Contract(format!("invalid quadratic bounds {quad_bounds:?}")));
        }
        Ok(Self { field, quad_bounds })
    }

    pub fn quadratic(p: DMatrix<f64>) -> Result<Self> {
        let form = QuadraticForm::new(p)?;
        let bounds = form.eigen_bounds();
        Self::new(Arc::new(form), bounds)
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.field.value(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> RowDVector<f64> {
        self.field.gradient(x)
    }
}

/// `B = exp(-h) - ε_B` inside the box and `-ε_B` outside. The unsafe set is
/// `{B > 0} = {x in box : h(x) < -ln ε_B}`.
#[derive(Debug, Clone, Serialize)]
pub struct ControlBarrierFunction {
    pub barrier: BoxBarrier,
    pub epsilon_b: f64,
}

impl ControlBarrierFunction {
    pub fn new(barrier: BoxBarrier, epsilon_b: f64) -> Result<Self> {
        if !(epsilon_b > 0.0) {
            return Err(Error::Contract(format!("epsilon_B must be positive, got {epsilon_b}")));
        }
        Ok(Self { barrier, epsilon_b })
    }

    /// Unsafe set is `{h < level}`.
    pub fn with_level(barrier: BoxBarrier, level: f64) -> Result<Self> {
        Self::new(barrier, (-level).exp())
    }

    pub fn level(&self) -> f64 {
        -self.epsilon_b.ln()
    }

    pub fn domain(&self) -> &AxisBox {
        &self.barrier.domain
    }

    pub fn outside_value(&self) -> f64 {
        -self.epsilon_b
    }

    pub fn in_guard_band(&self, x: &DVector<f64>) -> bool {
        let depth = self.domain().interior_depth(x);
        depth > 0.0 && depth <= GUARD_BAND
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        let h = self.barrier.value(x);
        if h.is_finite() {
            (-h).exp() - self.epsilon_b
        } else {
            self.outside_value()
        }
    }

    /// Gradient of `B`; a guard-band error inside the band.
    pub fn gradient(&self, x: &DVector<f64>) -> Result<RowDVector<f64>> {
        if !self.domain().contains(x) {
            return Ok(RowDVector::zeros(x.len()));
        }
        if self.in_guard_band(x) {
            return Err(Error::GuardBand {
                distance: self.domain().interior_depth(x),
            });
        }
        let e = (-self.barrier.value(x)).exp();
        Ok(self.barrier.gradient(x) * (-e))
    }

    pub fn hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = x.len();
        if !self.domain().contains(x) {
            return Ok(DMatrix::zeros(n, n));
        }
        if self.in_guard_band(x) {
            return Err(Error::GuardBand {
                distance: self.domain().interior_depth(x),
            });
        }
        let e = (-self.barrier.value(x)).exp();
        let gh = self.barrier.gradient(x);
        Ok((gh.transpose() * &gh - self.barrier.hessian(x)) * e)
    }

    /// True when `x` lies in the open unsafe set.
    pub fn in_unsafe(&self, x: &DVector<f64>) -> bool {
        self.barrier.value(x) < self.level()
    }
}

/// `W0 = V + λB + κ`.
#[derive(Debug, Clone)]
pub struct EnergyFunction {
    pub clf: ControlLyapunovFunction,
    pub cbf: ControlBarrierFunction,
    pub lambda: f64,
    pub kappa: f64,
}

impl EnergyFunction {
    pub fn new(clf: ControlLyapunovFunction, cbf: ControlBarrierFunction, lambda: f64, kappa: f64) -> Result<Self> {
        check_dim("barrier box", clf.field.dim(), cbf.domain().dim())?;
        if !(lambda > 0.0) || !kappa.is_finite() {
            return Err(Error::Contract(format!("need lambda > 0 and finite kappa, got {lambda}, {kappa}")));
        }
        Ok(Self {
            clf,
            cbf,
            lambda,
            kappa,
        })
    }

    pub fn dim(&self) -> usize {
        self.clf.field.dim()
    }

    /// Always finite for finite `x`: the barrier pole maps to the outside value.
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.clf.value(x) + self.lambda * self.cbf.value(x) + self.kappa
    }

    /// Analytic gradient; errors inside the guard band.
    pub fn gradient(&self, x: &DVector<f64>) -> Result<RowDVector<f64>> {
        Ok(self.clf.gradient(x) + self.cbf.gradient(x)? * self.lambda)
    }

    /// Gradient that never fails. Inside the guard band `exp(-h)` is below
    /// `exp(-5e5)` and every barrier derivative underflows to zero, so the
    /// exterior expression is exact in double precision.
    pub fn gradient_extended(&self, x: &DVector<f64>) -> RowDVector<f64> {
        self.gradient(x).unwrap_or_else(|_| self.clf.gradient(x))
    }

    pub fn hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.clf.field.hessian(x) + self.cbf.hessian(x)? * self.lambda)
    }

    pub fn hessian_extended(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.hessian(x).unwrap_or_else(|_| self.clf.field.hessian(x))
    }
}

/// The four geometric constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

/// Outcome of the λ, κ construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LambdaKappa {
    /// λ strictly above `lower_bound`.
    Bounded { lambda: f64, kappa: f64, lower_bound: f64 },
    /// `c2 c3 <= c1 c4`: every positive λ is admissible.
    AnyPositive { kappa: f64 },
    /// Values supplied by a preset, returned verbatim.
    Given { lambda: f64, kappa: f64, lower_bound: f64 },
}

impl LambdaKappa {
    pub fn kappa(&self) -> f64 {
        match *self {
            Self::Bounded { kappa, .. } | Self::AnyPositive { kappa } | Self::Given { kappa, .. } => kappa,
        }
    }

    pub fn lambda(&self) -> Option<f64> {
        match *self {
            Self::Bounded { lambda, .. } | Self::Given { lambda, .. } => Some(lambda),
            Self::AnyPositive { .. } => None,
        }
    }
}

/// `κ = -c1 c4`, `λ = margin (c2 c3 - c1 c4) / ε_B`.
///
/// When `given` carries preset values they are returned unchanged alongside
/// the formula's lower bound.
pub fn compute_lambda_kappa(
    c: &CConstants,
    epsilon_b: f64,
    margin: f64,
    given: Option<(f64, f64)>,
) -> Result<LambdaKappa> {
    if [c.c1, c.c2, c.c3, c.c4].iter().any(|v| !(*v > 0.0)) || !(epsilon_b > 0.0) {
        return Err(Error::Contract("constants and epsilon_B must be positive".into()));
    }
    if !(margin >= 1.0) {
        return Err(Error::Contract(format!("margin must be at least 1, got {margin}")));
    }
    let gap = c.c2 * c.c3 - c.c1 * c.c4;
    let lower_bound = (gap / epsilon_b).max(0.0);
    if let Some((lambda, kappa)) = given {
        return Ok(LambdaKappa::Given {
            lambda,
            kappa,
            lower_bound,
        });
    }
    let kappa = -c.c1 * c.c4;
    if gap <= 0.0 {
        return Ok(LambdaKappa::AnyPositive { kappa });
    }
    Ok(LambdaKappa::Bounded {
        lambda: margin * lower_bound,
        kappa,
        lower_bound,
    })
}

/// `c3 = max ‖x‖²` over the box surface, `c4 = min ‖x‖²` over the unsafe
/// boundary, both over sampled points.
pub fn compute_c_constants(box_surface: &dyn BoundarySampler, unsafe_boundary: &dyn BoundarySampler) -> Result<(f64, f64)> {
    let surface = box_surface.sample();
    let boundary = unsafe_boundary.sample();
    if surface.is_empty() {
        return Err(Error::EmptySample("box surface"));
    }
    if boundary.is_empty() {
        return Err(Error::EmptySample("unsafe-set boundary"));
    }
    let c3 = surface.iter().map(|p| p.norm_squared()).fold(f64::NEG_INFINITY, f64::max);
    let c4 = boundary.iter().map(|p| p.norm_squared()).fold(f64::INFINITY, f64::min);
    Ok((c3, c4))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionCheck {
    pub checked: usize,
    pub passed: bool,
    pub witness: Option<Vec<f64>>,
}

/// Sampled check of the three barrier conditions:
/// (i) `B > 0` on the unsafe set;
/// (ii) `∇B·g = 0` implies `∇B·f <= 0` off the unsafe set;
/// (iii) `{B <= 0}` is nonempty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CbfReport {
    pub positive_on_unsafe: ConditionCheck,
    pub no_ascent_when_uncontrolled: ConditionCheck,
    pub nonpositive_set_nonempty: ConditionCheck,
}

impl CbfReport {
    pub fn passed(&self) -> bool {
        self.positive_on_unsafe.passed && self.no_ascent_when_uncontrolled.passed && self.nonpositive_set_nonempty.passed
    }
}

pub fn verify_cbf(
    cbf: &ControlBarrierFunction,
    system: &AffineControlSystem,
    points: &[DVector<f64>],
    zero_tol: f64,
) -> Result<CbfReport> {
    let mut i_check = ConditionCheck {
        checked: 0,
        passed: true,
        witness: None,
    };
    let mut ii_check = i_check.clone();
    let mut iii_check = ConditionCheck {
        checked: 0,
        passed: false,
        witness: None,
    };
    for x in points {
        let b = cbf.value(x);
        iii_check.checked += 1;
        if b <= 0.0 && iii_check.witness.is_none() {
            iii_check.passed = true;
            iii_check.witness = Some(x.iter().copied().collect());
        }
        if cbf.in_unsafe(x) {
            i_check.checked += 1;
            if !(b > 0.0) && i_check.passed {
                i_check.passed = false;
                i_check.witness = Some(x.iter().copied().collect());
            }
            continue;
        }
        let Ok(grad) = cbf.gradient(x) else { continue };
        let lg = &grad * system.g(x)?;
        if lg.norm() > zero_tol {
            continue;
        }
        ii_check.checked += 1;
        let lf = (&grad * system.f(x)?)[0];
        if lf > zero_tol && ii_check.passed {
            ii_check.passed = false;
            ii_check.witness = Some(x.iter().copied().collect());
        }
    }
    Ok(CbfReport {
        positive_on_unsafe: i_check,
        no_ascent_when_uncontrolled: ii_check,
        nonpositive_set_nonempty: iii_check,
    })
}

/// Sampled point with `W0 <= 0`, if any.
pub fn find_nonpositive_energy<F>(w0: F, points: &[DVector<f64>]) -> Option<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> f64,
{
    points.iter().find(|p| w0(p) <= 0.0).cloned()
}
