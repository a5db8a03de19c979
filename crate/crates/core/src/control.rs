//! Nominal Sontag-type law, the disturbance envelope, the gain law and the
//! unit-vector robust term.

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::energy::EnergyFunction;
use crate::error::{Error, Result};
use crate::model::AffineControlSystem;
use crate::sliding::SlidingFrame;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    pub gamma: f64,
    pub q: f64,
    /// Below this norm the unit vector is replaced by zero.
    pub zero_tol: f64,
    /// Multiplies the minimal admissible gain; at least 1.
    pub gain_multiplier: f64,
    /// Optional linear saturation width replacing the pure unit vector.
    pub boundary_layer: Option<f64>,
}

impl ControllerParams {
    pub fn new(gamma: f64, q: f64) -> Result<Self> {
        let p = Self {
            gamma,
            q,
            ..Self::default()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.q > 0.0 && self.zero_tol > 0.0) {
            return Err(Error::Contract("gamma, q and zero_tol must be positive".into()));
        }
        if !(self.gain_multiplier >= 1.0) {
            return Err(Error::Contract("gain multiplier must be at least 1".into()));
        }
        if matches!(self.boundary_layer, Some(w) if !(w > 0.0)) {
            return Err(Error::Contract("boundary layer width must be positive".into()));
        }
        Ok(())
    }
}

impl Default for ControllerParams {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            q: 0.5,
            zero_tol: 1e-9,
            gain_multiplier: 1.0,
            boundary_layer: None,
        }
    }
}

/// One evaluation of the composite law.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlRecord {
    pub u: Vec<f64>,
    pub u_nom: Vec<f64>,
    pub u_rob: Vec<f64>,
    pub k: f64,
    pub rho0: f64,
    pub sigma_sf_norm: f64,
}

impl ControlRecord {
    pub fn nominal(u_nom: DVector<f64>) -> Self {
        let m = u_nom.len();
        Self {
            u: u_nom.iter().copied().collect(),
            u_nom: u_nom.iter().copied().collect(),
            u_rob: vec![0.0; m],
            k: 0.0,
            rho0: 0.0,
            sigma_sf_norm: 0.0,
        }
    }

    pub fn u_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.u)
    }
}

/// `u = -((a + sqrt(a² + γ‖b‖⁴)) / (b bᵀ)) bᵀ`, or zero when `‖b‖ <= zero_tol`.
pub fn sontag(a: f64, b: &RowDVector<f64>, gamma: f64, zero_tol: f64) -> DVector<f64> {
    let bb = b.norm_squared();
    if b.norm() <= zero_tol {
        return DVector::zeros(b.len());
    }
    let scale = (a + (a * a + gamma * bb * bb).sqrt()) / bb;
    -b.transpose() * scale
}

/// Nominal law at `x` built from `∇W0`; a guard-band error near the pole.
pub fn nominal_control(
    energy: &EnergyFunction,
    system: &AffineControlSystem,
    x: &DVector<f64>,
    params: &ControllerParams,
) -> Result<DVector<f64>> {
    let grad = energy.gradient(x)?;
    nominal_from_gradient(&grad, system, x, params)
}

pub fn nominal_from_gradient(
    grad: &RowDVector<f64>,
    system: &AffineControlSystem,
    x: &DVector<f64>,
    params: &ControllerParams,
) -> Result<DVector<f64>> {
    let a = (grad * system.f(x)?)[0];
    let b = grad * system.g(x)?;
    Ok(sontag(a, &b, params.gamma, params.zero_tol))
}

/// `ρ0 = ‖g0⁻¹ (∂σ/∂x)(f + g u_nom)‖ + ε‖u_nom‖ + ρ(t)`.
pub fn rho0(frame: &SlidingFrame, f: &DVector<f64>, u_nom: &DVector<f64>, epsilon: f64, rho_t: f64) -> f64 {
    let drift = f + &frame.g * u_nom;
    (&frame.g0_inv * (&frame.jac_sigma * drift)).norm() + epsilon * u_nom.norm() + rho_t
}

/// Minimal admissible gain `mult (ρ0 + ‖g0⁻¹ φ̇ᵀ‖ + q) / (1 + μ)`.
pub fn gain_k(rho0: f64, phi_dot: &RowDVector<f64>, g0_inv: &DMatrix<f64>, params: &ControllerParams, mu: f64) -> f64 {
    let plan_term = (g0_inv * phi_dot.transpose()).norm();
    params.gain_multiplier * (rho0 + plan_term + params.q) / (1.0 + mu)
}

/// `-k sᵀ/‖s‖`, with zero on the switching surface.
pub fn unit_control(s: &RowDVector<f64>, k: f64, params: &ControllerParams) -> DVector<f64> {
    let norm = s.norm();
    if norm <= params.zero_tol {
        return DVector::zeros(s.len());
    }
    let denom = match params.boundary_layer {
        Some(w) => norm.max(w),
        None => norm,
    };
    -s.transpose() * (k / denom)
}

/// Robust term along `σ̄_sf`.
pub fn robust_control(sigma_sf: &RowDVector<f64>, k: f64, params: &ControllerParams) -> DVector<f64> {
    unit_control(sigma_sf, k, params)
}

/// Inputs for one evaluation of the composite law.
pub struct CompositeInputs<'a> {
    pub frame: &'a SlidingFrame,
    pub f: &'a DVector<f64>,
    pub u_nom: DVector<f64>,
    pub sigma_sf: RowDVector<f64>,
    pub phi_dot: RowDVector<f64>,
    pub epsilon: f64,
    pub mu: f64,
    pub rho_t: f64,
}

/// `u = u_nom + u_rob`.
pub fn composite_control(inputs: CompositeInputs<'_>, params: &ControllerParams) -> ControlRecord {
    let r0 = rho0(inputs.frame, inputs.f, &inputs.u_nom, inputs.epsilon, inputs.rho_t);
    let k = gain_k(r0, &inputs.phi_dot, &inputs.frame.g0_inv, params, inputs.mu);
    let u_rob = robust_control(&inputs.sigma_sf, k, params);
    let u = &inputs.u_nom + &u_rob;
    ControlRecord {
        u: u.iter().copied().collect(),
        u_nom: inputs.u_nom.iter().copied().collect(),
        u_rob: u_rob.iter().copied().collect(),
        k,
        rho0: r0,
        sigma_sf_norm: inputs.sigma_sf.norm(),
    }
}

/// Sliding mode on `σ̄` from the start, without a transient plan.
///
/// The default sign drives `σ̄` to zero. `printed_sign` flips it to
/// `u_nom + k σ̄ᵀ/‖σ̄‖`, which pushes away from the manifold.
#[allow(clippy::too_many_arguments)]
pub fn ablation_no_transient(
    frame: &SlidingFrame,
    f: &DVector<f64>,
    u_nom: DVector<f64>,
    epsilon: f64,
    mu: f64,
    rho_t: f64,
    params: &ControllerParams,
    printed_sign: bool,
) -> ControlRecord {
    let r0 = rho0(frame, f, &u_nom, epsilon, rho_t);
    let k = gain_k(r0, &RowDVector::zeros(frame.sigma.len()), &frame.g0_inv, params, mu);
    let mut u_rob = unit_control(&frame.sigma_bar, k, params);
    if printed_sign {
        u_rob = -u_rob;
    }
    let u = &u_nom + &u_rob;
    ControlRecord {
        u: u.iter().copied().collect(),
        u_nom: u_nom.iter().copied().collect(),
        u_rob: u_rob.iter().copied().collect(),
        k,
        rho0: r0,
        sigma_sf_norm: frame.sigma_bar.norm(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn row(x: &[f64]) -> RowDVector<f64> {
        RowDVector::from_row_slice(x)
    }

    fn scalar_frame(g0: f64, jac: f64) -> SlidingFrame {
        SlidingFrame {
            sigma: row(&[1.0]),
            jac_sigma: DMatrix::from_element(1, 1, jac),
            g: DMatrix::from_element(1, 1, 1.0),
            g0: DMatrix::from_element(1, 1, g0),
            g0_inv: DMatrix::from_element(1, 1, 1.0 / g0),
            sigma_bar: row(&[g0]),
            cond_g0: 1.0,
        }
    }

    #[test]
    fn sontag_values() {
        let p = ControllerParams::default();
        assert_eq!(sontag(3.0, &row(&[0.0]), p.gamma, p.zero_tol)[0], 0.0);
        assert_relative_eq!(sontag(-1.0, &row(&[1.0]), 2.0, 1e-9)[0], -(3f64.sqrt() - 1.0), epsilon = 1e-15);
    }

    #[test]
    fn rho0_reduces_to_rho_without_drift() {
        let fr = scalar_frame(2.0, 4.0);
        assert_eq!(rho0(&fr, &DVector::zeros(1), &DVector::zeros(1), 0.0, 5.0), 5.0);
        // (∂σ/∂x)(f + g u) = 4 with g0 = 2, ε‖u‖ = 0.5.
        assert_relative_eq!(rho0(&fr, &DVector::from_element(1, 0.0), &DVector::from_element(1, 1.0), 0.5, 5.0), 7.5);
    }

    #[test]
    fn gain_values() {
        let p = ControllerParams::new(2.0, 0.5).unwrap();
        let inv = DMatrix::from_element(1, 1, 0.5);
        assert_relative_eq!(gain_k(5.0, &row(&[4.0]), &inv, &p, 0.0), 7.5);
        assert_relative_eq!(gain_k(5.0, &row(&[0.0]), &inv, &p, 0.0), 5.5);
        assert_relative_eq!(gain_k(5.0, &row(&[4.0]), &inv, &p, -0.5), 15.0);
        assert_relative_eq!(gain_k(5.0, &row(&[0.0]), &inv, &p, -0.5), 11.0);
        let bigger = ControllerParams::new(2.0, 1.0).unwrap();
        assert!(gain_k(5.0, &row(&[0.0]), &inv, &bigger, 0.0) > gain_k(5.0, &row(&[0.0]), &inv, &p, 0.0));
    }

    #[test]
    fn unit_control_values() {
        let p = ControllerParams::default();
        let u = robust_control(&row(&[3.0, 4.0]), 10.0, &p);
        assert_relative_eq!(u, DVector::from_vec(vec![-6.0, -8.0]), epsilon = 1e-14);
        assert_eq!(robust_control(&row(&[1e-10]), 10.0, &p)[0], 0.0);
        assert_eq!(robust_control(&row(&[-2.0]), 3.0, &p)[0], 3.0);
    }

    #[test]
    fn boundary_layer_saturates_linearly() {
        let p = ControllerParams {
            boundary_layer: Some(0.1),
            ..ControllerParams::default()
        };
        assert_relative_eq!(unit_control(&row(&[0.05]), 2.0, &p)[0], -1.0);
        assert_relative_eq!(unit_control(&row(&[0.5]), 2.0, &p)[0], -2.0);
    }

    #[test]
    fn ablation_direction_and_sign_flag() {
        let mut fr = scalar_frame(1.0, 1.0);
        fr.sigma = row(&[-2.0, std::f64::consts::PI]);
        fr.sigma_bar = fr.sigma.clone();
        fr.g0 = DMatrix::identity(2, 2);
        fr.g0_inv = DMatrix::identity(2, 2);
        fr.jac_sigma = DMatrix::zeros(2, 2);
        fr.g = DMatrix::zeros(2, 2);
        let p = ControllerParams::default();
        let rec = ablation_no_transient(&fr, &DVector::zeros(2), DVector::zeros(2), 0.0, 0.0, 0.0, &p, false);
        let dir = DVector::from_column_slice(&rec.u_rob) / rec.k;
        assert_relative_eq!(dir, -fr.sigma_bar.transpose() / fr.sigma_bar.norm(), epsilon = 1e-14);
        let flipped = ablation_no_transient(&fr, &DVector::zeros(2), DVector::zeros(2), 0.0, 0.0, 0.0, &p, true);
        assert_relative_eq!(DVector::from_column_slice(&flipped.u_rob), -DVector::from_column_slice(&rec.u_rob));
    }

    #[test]
    fn params_validation() {
        assert!(ControllerParams::new(0.0, 1.0).is_err());
        assert!(ControllerParams::new(1.0, -1.0).is_err());
        let p = ControllerParams {
            gain_multiplier: 0.5,
            ..ControllerParams::default()
        };
        assert!(p.validate().is_err());
    }
}
