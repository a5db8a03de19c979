//! The sliding variable `σ = ∇W·g`, its Jacobian and the channel matrix
//! `g0 = (∂σ/∂x) g`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::energy::EnergyFunction;
use crate::error::{Error, Result};
use crate::model::AffineControlSystem;
use crate::numdiff::{central_jacobian, JACOBIAN_REL_STEP};

/// `g0` counts as singular above this condition number, taken as
/// `max(‖g0‖, ‖∂σ/∂x‖‖g‖) / σmin(g0)`.
pub const SINGULAR_COND: f64 = 1e8;

/// Which gradient defines the manifold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaSource {
    /// `σ = ∇W0·g`.
    Energy,
    /// `σ = ∇V·g`. Equal to the energy form wherever the barrier term is
    /// flat, which is all of the complement of `F` when `F` is the box.
    Clf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JacobianMode {
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone)]
pub struct SlidingVariable {
    pub energy: Arc<EnergyFunction>,
    pub system: Arc<AffineControlSystem>,
    pub source: SigmaSource,
    pub jacobian_mode: JacobianMode,
    pub fd_step: f64,
}

/// Everything the controllers need at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct SlidingFrame {
    pub sigma: RowDVector<f64>,
    pub jac_sigma: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub g0: DMatrix<f64>,
    pub g0_inv: DMatrix<f64>,
    pub sigma_bar: RowDVector<f64>,
    pub cond_g0: f64,
}

impl SlidingFrame {
    /// `λmin(g0 g0ᵀ)`, the squared smallest singular value.
    pub fn g0_lambda_min(&self) -> f64 {
        let s = self.g0.clone().svd(false, false).singular_values.min();
        s * s
    }

    /// Spectral norm of `g0`.
    pub fn g0_norm(&self) -> f64 {
        self.g0.clone().svd(false, false).singular_values.max()
    }
}

impl SlidingVariable {
    pub fn new(energy: Arc<EnergyFunction>, system: Arc<AffineControlSystem>, source: SigmaSource) -> Self {
        let jacobian_mode = if system.has_g_partials() {
            JacobianMode::Analytic
        } else {
            JacobianMode::FiniteDifference
        };
        Self {
            energy,
            system,
            source,
            jacobian_mode,
            fd_step: JACOBIAN_REL_STEP,
        }
    }

    pub fn with_jacobian_mode(mut self, mode: JacobianMode) -> Self {
        self.jacobian_mode = mode;
        self
    }

    fn gradient(&self, x: &DVector<f64>) -> Result<RowDVector<f64>> {
        match self.source {
            SigmaSource::Energy => self.energy.gradient(x),
            SigmaSource::Clf => Ok(self.energy.clf.gradient(x)),
        }
    }

    fn hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        match self.source {
            SigmaSource::Energy => self.energy.hessian(x),
            SigmaSource::Clf => Ok(self.energy.clf.field.hessian(x)),
        }
    }

    /// `σ(x)`; a guard-band error near the barrier pole.
    pub fn sigma(&self, x: &DVector<f64>) -> Result<RowDVector<f64>> {
        Ok(self.gradient(x)? * self.system.g(x)?)
    }

    /// `σ(x)` with the guard band resolved by the exterior expression.
    pub fn sigma_extended(&self, x: &DVector<f64>) -> Result<RowDVector<f64>> {
        match self.sigma(x) {
            Err(Error::GuardBand { .. }) => Ok(self.energy.clf.gradient(x) * self.system.g(x)?),
            other => other,
        }
    }

    pub fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        match (self.jacobian_mode, self.system.g_partials(x)) {
            (JacobianMode::Analytic, Some(partials)) => {
                let g = self.system.g(x)?;
                let grad = self.gradient(x)?;
                let mut jac = g.transpose() * self.hessian(x)?;
                for (k, dg) in partials.iter().enumerate() {
                    let col = &grad * dg;
                    for j in 0..self.system.m {
                        jac[(j, k)] += col[j];
                    }
                }
                Ok(jac)
            }
            _ => central_jacobian(|p| self.sigma(p), x, self.fd_step),
        }
    }

    fn jacobian_extended(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        match self.jacobian(x) {
            Err(Error::GuardBand { .. }) => {
                let exterior = Self {
                    source: SigmaSource::Clf,
                    ..self.clone()
                };
                exterior.jacobian(x)
            }
            other => other,
        }
    }

    fn assemble(&self, x: &DVector<f64>, sigma: RowDVector<f64>, jac_sigma: DMatrix<f64>) -> Result<SlidingFrame> {
        let g = self.system.g(x)?;
        let g0 = &jac_sigma * &g;
        let sv = g0.clone().svd(false, false).singular_values;
        // Measured against the factors so that a scalar channel can be singular too.
        let scale = sv.max().max(jac_sigma.norm() * g.norm());
        let cond = if sv.min() > 0.0 { scale / sv.min() } else { f64::INFINITY };
        if !(cond <= SINGULAR_COND) {
            return Err(Error::SingularChannel { cond });
        }
        let g0_inv = g0.clone().try_inverse().ok_or(Error::SingularChannel { cond })?;
        let sigma_bar = &sigma * &g0;
        Ok(SlidingFrame {
            sigma,
            jac_sigma,
            g,
            g0,
            g0_inv,
            sigma_bar,
            cond_g0: cond,
        })
    }

    /// Frame at `x`; a guard-band error near the pole and a singular-channel
    /// error when `cond(g0) > 1e8`.
    pub fn frame(&self, x: &DVector<f64>) -> Result<SlidingFrame> {
        let sigma = self.sigma(x)?;
        let jac = self.jacobian(x)?;
        self.assemble(x, sigma, jac)
    }

    /// Frame that resolves the guard band like [`Self::sigma_extended`].
    pub fn frame_extended(&self, x: &DVector<f64>) -> Result<SlidingFrame> {
        let sigma = self.sigma_extended(x)?;
        let jac = self.jacobian_extended(x)?;
        self.assemble(x, sigma, jac)
    }
}

/// `σ̄_sf = (σ - φ) g0` before `t_f` and `σ̄` afterwards. `phi` must already
/// be the plan value at `t` (zero after `t_f`).
pub fn sigma_sf(frame: &SlidingFrame, phi: &RowDVector<f64>, t: f64, t_f: f64) -> RowDVector<f64> {
    if t < t_f {
        (&frame.sigma - phi) * &frame.g0
    } else {
        frame.sigma_bar.clone()
    }
}

/// A row-valued field with a local Lipschitz estimate, as consumed by grid
/// scans. `None` marks points that must not be classified (guard band).
pub trait SigmaMap: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &DVector<f64>) -> Option<(RowDVector<f64>, f64)>;
}

impl SigmaMap for SlidingVariable {
    fn dim(&self) -> usize {
        self.system.n
    }

    fn eval(&self, x: &DVector<f64>) -> Option<(RowDVector<f64>, f64)> {
        let sigma = self.sigma(x).ok()?;
        let lip = self.jacobian(x).ok()?.norm();
        Some((sigma, lip))
    }
}

/// Closure-backed [`SigmaMap`] with a finite-difference Lipschitz estimate.
pub struct FnSigma<F> {
    pub n: usize,
    pub f: F,
}

impl<F> SigmaMap for FnSigma<F>
where
    F: Fn(&DVector<f64>) -> RowDVector<f64> + Sync,
{
    fn dim(&self) -> usize {
        self.n
    }

    fn eval(&self, x: &DVector<f64>) -> Option<(RowDVector<f64>, f64)> {
        let jac = central_jacobian(|p| Ok::<_, ()>((self.f)(p)), x, JACOBIAN_REL_STEP).ok()?;
        Some(((self.f)(x), jac.norm()))
    }
}
