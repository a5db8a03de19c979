//! Uncertain control-affine systems `x' = f(x) + g(x)((I + Δg(t,x)) u + δ(t,x))`
//! and the two reference plants.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::sampling::{uniform_points, AxisBox, DEFAULT_SEED};

pub type VectorMap = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type MatrixMap = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
/// `x -> [dg/dx_1, ..., dg/dx_n]`, each an `n x m` matrix.
pub type MatrixPartials = Arc<dyn Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync>;
pub type TimeStateVector = Arc<dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type TimeStateMatrix = Arc<dyn Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type TimeScalar = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Nominal dynamics `f`, `g`. The maps must be pure.
#[derive(Clone)]
pub struct AffineControlSystem {
    pub n: usize,
    pub m: usize,
    f: VectorMap,
    g: MatrixMap,
    g_partials: Option<MatrixPartials>,
    pub label: String,
}

impl fmt::Debug for AffineControlSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AffineControlSystem")
            .field("label", &self.label)
            .field("n", &self.n)
            .field("m", &self.m)
            .finish()
    }
}

impl AffineControlSystem {
    pub fn new(label: impl Into<String>, n: usize, m: usize, f: VectorMap, g: MatrixMap) -> Self {
        Self {
            n,
            m,
            f,
            g,
            g_partials: None,
            label: label.into(),
        }
    }

    /// Supplies the state derivatives of `g`, enabling the analytic
    /// sliding-variable Jacobian.
    pub fn with_g_partials(mut self, partials: MatrixPartials) -> Self {
        self.g_partials = Some(partials);
        self
    }

    pub fn has_g_partials(&self) -> bool {
        self.g_partials.is_some()
    }

    pub fn f(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("state", self.n, x.len())?;
        let v = (self.f)(x);
        check_dim("f(x)", self.n, v.len())?;
        Ok(v)
    }

    pub fn g(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim("state", self.n, x.len())?;
        let g = (self.g)(x);
        if g.shape() != (self.n, self.m) {
            return Err(Error::Contract(format!(
                "g(x) has shape {:?}, expected ({}, {})",
                g.shape(),
                self.n,
                self.m
            )));
        }
        Ok(g)
    }

    pub fn g_partials(&self, x: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        self.g_partials.as_ref().map(|p| p(x))
    }
}

/// Bounds `‖δ‖ <= ρ(t)`, `‖Δg‖ <= ε < 1`, `λmin(sym Δg) >= μ > -1`.
#[derive(Clone)]
pub struct DisturbanceBounds {
    rho: TimeScalar,
    pub epsilon: f64,
    pub mu: f64,
}

impl fmt::Debug for DisturbanceBounds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DisturbanceBounds")
            .field("rho(0)", &self.rho(0.0))
            .field("epsilon", &self.epsilon)
            .field("mu", &self.mu)
            .finish()
    }
}

impl DisturbanceBounds {
    pub fn new(rho: TimeScalar, epsilon: f64, mu: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&epsilon) {
            return Err(Error::Contract(format!("epsilon must lie in [0, 1), got {epsilon}")));
        }
        if !(mu > -1.0) {
            return Err(Error::Contract(format!("mu must exceed -1, got {mu}")));
        }
        Ok(Self { rho, epsilon, mu })
    }

    pub fn constant(rho: f64, epsilon: f64, mu: f64) -> Result<Self> {
        if !(rho >= 0.0) {
            return Err(Error::Contract(format!("rho must be nonnegative, got {rho}")));
        }
        Self::new(Arc::new(move |_| rho), epsilon, mu)
    }

    pub fn rho(&self, t: f64) -> f64 {
        (self.rho)(t)
    }
}

/// Matched disturbance `δ` and input-gain uncertainty `Δg`.
#[derive(Clone)]
pub struct DisturbanceModel {
    delta: TimeStateVector,
    delta_g: TimeStateMatrix,
    pub bounds: DisturbanceBounds,
}

impl fmt::Debug for DisturbanceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DisturbanceModel").field("bounds", &self.bounds).finish()
    }
}

impl DisturbanceModel {
    pub fn new(delta: TimeStateVector, delta_g: TimeStateMatrix, bounds: DisturbanceBounds) -> Self {
        Self {
            delta,
            delta_g,
            bounds,
        }
    }

    /// `δ = 0`, `Δg = 0`, keeping the given bounds for the controller.
    pub fn silent(m: usize, bounds: DisturbanceBounds) -> Self {
        Self::new(
            Arc::new(move |_, _| DVector::zeros(m)),
            Arc::new(move |_, _| DMatrix::zeros(m, m)),
            bounds,
        )
    }

    pub fn delta(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        (self.delta)(t, x)
    }

    pub fn delta_g(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        (self.delta_g)(t, x)
    }
}

/// `f(x) + g(x)((I + Δg) u + δ)`.
pub fn eval_dynamics(
    system: &AffineControlSystem,
    dist: &DisturbanceModel,
    t: f64,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_dim("input", system.m, u.len())
        .map_err(|e| Error::Contract(format!("eval_dynamics: {e}")))?;
    let f = system.f(x)?;
    let g = system.g(x)?;
    let dg = dist.delta_g(t, x);
    let delta = dist.delta(t, x);
    if dg.shape() != (system.m, system.m) || delta.len() != system.m {
        return Err(Error::Contract("disturbance dimensions do not match the input".into()));
    }
    let effective = u + &dg * u + delta;
    Ok(f + g * effective)
}

/// Sampling plan for [`check_disturbance_bounds`].
#[derive(Debug, Clone)]
pub struct BoundsCheck {
    pub half_width: f64,
    pub samples: usize,
    pub t_max: f64,
    pub seed: u64,
}

impl Default for BoundsCheck {
    fn default() -> Self {
        Self {
            half_width: 6.0,
            samples: 10_000,
            t_max: 10.0,
            seed: DEFAULT_SEED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub samples: usize,
    /// Largest `‖δ‖ - ρ(t)` seen; nonpositive when the bound holds.
    pub worst_delta_excess: f64,
    pub max_delta_g_norm: f64,
    pub min_sym_eigenvalue: f64,
    pub holds: bool,
}

/// Checks the three disturbance bounds on seeded random `(t, x)`.
pub fn check_disturbance_bounds(
    system: &AffineControlSystem,
    dist: &DisturbanceModel,
    plan: &BoundsCheck,
) -> Result<BoundsReport> {
    let bounds = AxisBox::cube(system.n, plan.half_width)?;
    let xs = uniform_points(&bounds, plan.samples, plan.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed ^ 0x9e37_79b9);
    let mut worst_delta_excess = f64::NEG_INFINITY;
    let mut max_dg = 0.0f64;
    let mut min_eig = f64::INFINITY;
    for x in &xs {
        let t = rng.gen_range(0.0..plan.t_max);
        let rho = dist.bounds.rho(t);
        worst_delta_excess = worst_delta_excess.max(dist.delta(t, x).norm() - rho);
        let dg = dist.delta_g(t, x);
        max_dg = max_dg.max(dg.clone().svd(false, false).singular_values.max());
        let sym = (&dg + dg.transpose()) * 0.5;
        min_eig = min_eig.min(sym.symmetric_eigenvalues().min());
    }
    // One ulp of slack for quantities that touch their bound exactly.
    let tol = 1e-12;
    let holds = worst_delta_excess <= tol
        && max_dg <= dist.bounds.epsilon + tol
        && min_eig >= dist.bounds.mu - tol;
    Ok(BoundsReport {
        samples: xs.len(),
        worst_delta_excess,
        max_delta_g_norm: max_dg,
        min_sym_eigenvalue: min_eig,
        holds,
    })
}

/// Nonlinear damping term of the first reference plant.
pub fn example2_s(x2: f64) -> f64 {
    (0.8 + 0.2 * (-100.0 * x2.abs()).exp()) * (10.0 * x2).tanh() + x2
}

/// Planar plant `x1' = x2`, `x2' = -s(x2) - x1 + u + δ` with `δ = -5 sin 10t`.
pub fn example2_system() -> (AffineControlSystem, DisturbanceModel) {
    let f: VectorMap = Arc::new(|x| DVector::from_vec(vec![x[1], -example2_s(x[1]) - x[0]]));
    let g: MatrixMap = Arc::new(|_| DMatrix::from_column_slice(2, 1, &[0.0, 1.0]));
    let partials: MatrixPartials = Arc::new(|_| vec![DMatrix::zeros(2, 1); 2]);
    let system = AffineControlSystem::new("example2", 2, 1, f, g).with_g_partials(partials);
    let bounds = DisturbanceBounds::constant(5.0, 0.0, 0.0).expect("valid constants");
    let dist = DisturbanceModel::new(
        Arc::new(|t, _| DVector::from_element(1, -5.0 * (10.0 * t).sin())),
        Arc::new(|_, _| DMatrix::zeros(1, 1)),
        bounds,
    );
    (system, dist)
}

/// Unicycle-like plant with drift `(0, -x2, 0)` and input matrix
/// `((cos x3, 0), (sin x3, 0), (0, 1))`.
///
/// The scalar signal `-5 sin 10t` is spread evenly over both input channels so
/// that `‖δ‖ <= 5`.
pub fn example3_system() -> (AffineControlSystem, DisturbanceModel) {
    let f: VectorMap = Arc::new(|x| DVector::from_vec(vec![0.0, -x[1], 0.0]));
    let g: MatrixMap = Arc::new(|x| {
        let (s, c) = x[2].sin_cos();
        DMatrix::from_row_slice(3, 2, &[c, 0.0, s, 0.0, 0.0, 1.0])
    });
    let partials: MatrixPartials = Arc::new(|x| {
        let (s, c) = x[2].sin_cos();
        vec![
            DMatrix::zeros(3, 2),
            DMatrix::zeros(3, 2),
            DMatrix::from_row_slice(3, 2, &[-s, 0.0, c, 0.0, 0.0, 0.0]),
        ]
    });
    let system = AffineControlSystem::new("example3", 3, 2, f, g).with_g_partials(partials);
    let bounds = DisturbanceBounds::constant(5.0, 0.5, -0.5).expect("valid constants");
    let dist = DisturbanceModel::new(
        Arc::new(|t, _| DVector::from_element(2, -5.0 * (10.0 * t).sin() * FRAC_1_SQRT_2)),
        Arc::new(|_, x| DMatrix::from_row_slice(2, 2, &[0.5 * x[2].cos(), 0.0, 0.0, 0.0])),
        bounds,
    );
    (system, dist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn example2_origin_is_equilibrium() {
        let (sys, dist) = example2_system();
        let silent = DisturbanceModel::silent(1, dist.bounds.clone());
        let dx = eval_dynamics(&sys, &silent, 0.0, &v(&[0.0, 0.0]), &v(&[0.0])).unwrap();
        assert_eq!(dx, v(&[0.0, 0.0]));
    }

    #[test]
    fn example2_disturbance_vanishes_at_zero_time() {
        let (sys, dist) = example2_system();
        let x = v(&[1.3, -0.4]);
        let dx = eval_dynamics(&sys, &dist, 0.0, &x, &v(&[0.0])).unwrap();
        assert_eq!(dx, sys.f(&x).unwrap());
    }

    #[test]
    fn example2_damping_values() {
        assert_eq!(example2_s(0.0), 0.0);
        assert_relative_eq!(example2_s(10.0), 10.8, epsilon = 1e-12);
        let (_, dist) = example2_system();
        for t in [0.0, 1.0, 7.5] {
            assert_eq!(dist.bounds.rho(t), 5.0);
        }
    }

    #[test]
    fn example3_unicycle_step() {
        let (sys, dist) = example3_system();
        let silent = DisturbanceModel::silent(2, dist.bounds.clone());
        let dx = eval_dynamics(&sys, &silent, 0.0, &v(&[2.0, 2.5, PI]), &v(&[1.0, 0.0])).unwrap();
        assert_relative_eq!(dx, v(&[-1.0, -2.5, 0.0]), epsilon = 1e-15);
        assert_eq!(sys.f(&v(&[0.0, 0.0, 0.0])).unwrap(), v(&[0.0, 0.0, 0.0]));
    }

    #[test]
    fn example3_gain_uncertainty() {
        let (_, dist) = example3_system();
        let dg = dist.delta_g(0.0, &v(&[0.0, 0.0, PI]));
        let sym = (&dg + dg.transpose()) * 0.5;
        assert_relative_eq!(sym.symmetric_eigenvalues().min(), -0.5, epsilon = 1e-15);
        assert_eq!(dist.bounds.mu, -0.5);
        assert_eq!(dist.bounds.epsilon, 0.5);
    }

    #[test]
    fn sampled_bounds_hold_for_both_plants() {
        for (sys, dist) in [example2_system(), example3_system()] {
            let report = check_disturbance_bounds(&sys, &dist, &BoundsCheck::default()).unwrap();
            assert!(report.holds, "{}: {report:?}", sys.label);
            assert_eq!(report.samples, 10_000);
        }
    }

    #[test]
    fn wrong_input_length_is_a_contract_error() {
        let (sys, dist) = example2_system();
        let err = eval_dynamics(&sys, &dist, 0.0, &v(&[0.0, 0.0]), &v(&[0.0, 1.0])).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        assert!(sys.f(&v(&[0.0])).is_err());
    }

    #[test]
    fn bounds_reject_out_of_range_constants() {
        assert!(DisturbanceBounds::constant(5.0, 1.0, 0.0).is_err());
        assert!(DisturbanceBounds::constant(5.0, 0.0, -1.0).is_err());
        assert!(DisturbanceBounds::constant(-1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn example3_columns_are_orthonormal() {
        let (sys, _) = example3_system();
        for x3 in [-3.0, -0.2, 0.0, 1.1, PI, 5.0] {
            let g = sys.g(&v(&[0.4, -1.0, x3])).unwrap();
            let gram = g.transpose() * &g;
            assert_relative_eq!(gram, DMatrix::identity(2, 2), epsilon = 1e-15);
        }
    }
}
