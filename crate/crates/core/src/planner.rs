//! Transient plans `φ(t)` for the reaching phase: trigonometric families
//! clamped to zero from `t_f` on, plus sampled checks of their properties.

use nalgebra::{DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RegionSpec;
use crate::sliding::SlidingVariable;

/// Largest accepted `|φ(t_f⁻)|`.
pub const CONTINUITY_TOL: f64 = 0.01;
/// Residuals above this (and within [`CONTINUITY_TOL`]) raise a warning.
pub const EXACT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum PlanFamily {
    /// `α + α cos t + β sin t` (single input).
    ScalarTrig { alpha: f64, beta: f64 },
    /// `coeffs · cos t`.
    VectorCos { coeffs: Vec<f64> },
    /// `φ ≡ 0`: sliding mode from the first step.
    Zero { m: usize },
}

impl PlanFamily {
    pub fn dim(&self) -> usize {
        match self {
            PlanFamily::ScalarTrig { .. } => 1,
            PlanFamily::VectorCos { coeffs } => coeffs.len(),
            PlanFamily::Zero { m } => *m,
        }
    }

    /// Unclamped value.
    pub fn raw(&self, t: f64) -> RowDVector<f64> {
        match self {
            PlanFamily::ScalarTrig { alpha, beta } => {
                RowDVector::from_element(1, alpha + alpha * t.cos() + beta * t.sin())
            }
            PlanFamily::VectorCos { coeffs } => RowDVector::from_row_slice(coeffs) * t.cos(),
            PlanFamily::Zero { m } => RowDVector::zeros(*m),
        }
    }

    /// Unclamped derivative.
    pub fn raw_dot(&self, t: f64) -> RowDVector<f64> {
        match self {
            PlanFamily::ScalarTrig { alpha, beta } => {
                RowDVector::from_element(1, -alpha * t.sin() + beta * t.cos())
            }
            PlanFamily::VectorCos { coeffs } => RowDVector::from_row_slice(coeffs) * (-t.sin()),
            PlanFamily::Zero { m } => RowDVector::zeros(*m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransientPlan {
    pub family: PlanFamily,
    pub t_f: f64,
    /// `‖φ(t_f⁻)‖` of the unclamped formula.
    pub residual: f64,
    pub warning: Option<String>,
}

impl TransientPlan {
    pub fn new(family: PlanFamily, t_f: f64) -> Result<Self> {
        if !(t_f > 0.0) || !t_f.is_finite() {
            return Err(Error::InvalidPlan {
                reason: format!("t_f must be positive and finite, got {t_f}"),
                residual: f64::NAN,
            });
        }
        let residual = family.raw(t_f).norm();
        if residual > CONTINUITY_TOL {
            return Err(Error::InvalidPlan {
                reason: format!("plan does not vanish at t_f = {t_f}"),
                residual,
            });
        }
        let warning = (residual > EXACT_TOL)
            .then(|| format!("plan jumps by {residual:.3e} at t_f = {t_f}; consider refining t_f"));
        Ok(Self {
            family,
            t_f,
            residual,
            warning,
        })
    }

    pub fn dim(&self) -> usize {
        self.family.dim()
    }

    pub fn phi(&self, t: f64) -> RowDVector<f64> {
        if t < self.t_f {
            self.family.raw(t)
        } else {
            RowDVector::zeros(self.dim())
        }
    }

    pub fn phi_dot(&self, t: f64) -> RowDVector<f64> {
        if t < self.t_f {
            self.family.raw_dot(t)
        } else {
            RowDVector::zeros(self.dim())
        }
    }

    /// Moves `t_f` to the nearest root of the unclamped plan norm found by
    /// bisection on a sign change of one component.
    pub fn refine_tf(&self) -> Result<Self> {
        if self.residual == 0.0 || matches!(self.family, PlanFamily::Zero { .. }) {
            return Ok(self.clone());
        }
        let comp = (0..self.dim())
            .max_by(|&a, &b| {
                let (va, vb) = (self.family.raw(self.t_f)[a].abs(), self.family.raw(self.t_f)[b].abs());
                va.total_cmp(&vb)
            })
            .unwrap_or(0);
        let f = |t: f64| self.family.raw(t)[comp];
        let mut width = 1e-3;
        while width < self.t_f {
            let (lo, hi) = ((self.t_f - width).max(0.0), self.t_f + width);
            for (a, b) in [(lo, self.t_f), (self.t_f, hi)] {
                if f(a).signum() != f(b).signum() {
                    let (mut a, mut b) = (a, b);
                    for _ in 0..100 {
                        let mid = 0.5 * (a + b);
                        if f(mid).signum() == f(a).signum() {
                            a = mid;
                        } else {
                            b = mid;
                        }
                    }
                    return Self::new(self.family.clone(), 0.5 * (a + b));
                }
            }
            width *= 2.0;
        }
        Err(Error::InvalidPlan {
            reason: "no root of the plan near t_f".into(),
            residual: self.residual,
        })
    }
}

pub fn scalar_trig_plan(alpha: f64, beta: f64, t_f: f64) -> Result<TransientPlan> {
    TransientPlan::new(PlanFamily::ScalarTrig { alpha, beta }, t_f)
}

pub fn vector_cos_plan(coeffs: &[f64], t_f: f64) -> Result<TransientPlan> {
    TransientPlan::new(PlanFamily::VectorCos { coeffs: coeffs.to_vec() }, t_f)
}

pub fn zero_plan(m: usize, t_f: f64) -> Result<TransientPlan> {
    TransientPlan::new(PlanFamily::Zero { m }, t_f)
}

/// Plan families that can be fitted to `σ(0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum AutoFamily {
    /// `α = σ(0)/2` with the given `β`.
    ScalarTrig { beta: f64 },
    /// `coeffs = σ(0)`.
    VectorCos,
}

/// Fits the family so that `φ(0) = σ(0, x0)`.
pub fn auto_match_p2(family: AutoFamily, sliding: &SlidingVariable, x0: &DVector<f64>, t_f: f64) -> Result<TransientPlan> {
    let s0 = sliding.sigma_extended(x0)?;
    if s0.iter().all(|v| *v == 0.0) {
        return zero_plan(s0.len(), t_f);
    }
    match family {
        AutoFamily::ScalarTrig { beta } => {
            if s0.len() != 1 {
                return Err(Error::UnderParameterized(format!(
                    "scalar plan cannot match a {}-component sliding variable",
                    s0.len()
                )));
            }
            scalar_trig_plan(s0[0] / 2.0, beta, t_f)
        }
        AutoFamily::VectorCos => vector_cos_plan(s0.as_slice(), t_f),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct P1Report {
    pub time_samples: usize,
    pub coverage: f64,
    pub uncovered_times: Vec<f64>,
    pub tolerance: f64,
}

/// Sampled necessary check that every plan value is attained by `σ` at some
/// sampled point outside `F_r`.
pub fn validate_p1(
    plan: &TransientPlan,
    sliding: &SlidingVariable,
    region: &RegionSpec,
    points: &[DVector<f64>],
    time_samples: usize,
    tolerance: f64,
) -> P1Report {
    let values: Vec<RowDVector<f64>> = points
        .iter()
        .filter(|x| !region.in_f_r(x))
        .filter_map(|x| sliding.sigma(x).ok())
        .collect();
    let mut uncovered = Vec::new();
    let samples = time_samples.max(2);
    for i in 0..samples {
        let t = plan.t_f * i as f64 / (samples - 1) as f64;
        let target = plan.phi(t);
        if !values.iter().any(|s| (s - &target).norm() <= tolerance) {
            uncovered.push(t);
        }
    }
    P1Report {
        time_samples: samples,
        coverage: 1.0 - uncovered.len() as f64 / samples as f64,
        uncovered_times: uncovered,
        tolerance,
    }
}

/// Plan description used in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum PlanSpec {
    ScalarTrig { alpha: f64, beta: f64 },
    VectorCos { coeffs: Vec<f64> },
    /// Fit to `σ(0)`; `beta` is used by single-input systems.
    Auto {
        #[serde(default)]
        beta: f64,
    },
    Zero,
}

impl PlanSpec {
    pub fn build(&self, sliding: &SlidingVariable, x0: &DVector<f64>, t_f: f64) -> Result<TransientPlan> {
        match self {
            PlanSpec::ScalarTrig { alpha, beta } => scalar_trig_plan(*alpha, *beta, t_f),
            PlanSpec::VectorCos { coeffs } => vector_cos_plan(coeffs, t_f),
            PlanSpec::Zero => zero_plan(sliding.system.m, t_f),
            PlanSpec::Auto { beta } => {
                let family = if sliding.system.m == 1 {
                    AutoFamily::ScalarTrig { beta: *beta }
                } else {
                    AutoFamily::VectorCos
                };
                auto_match_p2(family, sliding, x0, t_f)
            }
        }
    }

    /// Parses `scalar-trig:a,b`, `vector-cos:c1,c2,...`, `auto[:beta]` or `zero`.
    pub fn parse(text: &str) -> Result<Self> {
        let (name, rest) = text.split_once(':').unwrap_or((text, ""));
        let nums = || -> Result<Vec<f64>> {
            rest.split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Contract(format!("bad plan coefficient {s:?}: {e}")))
                })
                .collect()
        };
        match name.trim() {
            "scalar-trig" => match nums()?.as_slice() {
                [alpha, beta] => Ok(PlanSpec::ScalarTrig {
                    alpha: *alpha,
                    beta: *beta,
                }),
                other => Err(Error::Contract(format!("scalar-trig needs 2 coefficients, got {}", other.len()))),
            },
            "vector-cos" => {
                let coeffs = nums()?;
                if coeffs.is_empty() {
                    return Err(Error::Contract("vector-cos needs coefficients".into()));
                }
                Ok(PlanSpec::VectorCos { coeffs })
            }
            "auto" => Ok(PlanSpec::Auto {
                beta: nums()?.first().copied().unwrap_or(0.0),
            }),
            "zero" => Ok(PlanSpec::Zero),
            other => Err(Error::Contract(format!("unknown plan family {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::sampling::AxisBox;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn scalar_trig_vanishes_at_pi() {
        let p = scalar_trig_plan(1.7, -0.3, PI).unwrap();
        assert!(p.residual < 1e-15);
        assert!(p.warning.is_none());
        let p = scalar_trig_plan(2.0, 2.0, PI).unwrap();
        assert_eq!(p.phi(0.0)[0], 4.0);
        assert_eq!(p.phi(PI)[0], 0.0);
        assert_eq!(p.phi_dot(4.0)[0], 0.0);
    }

    #[test]
    fn approximate_root_is_accepted_with_warning() {
        let p = scalar_trig_plan(3.0, -1.0, 2.5).unwrap();
        let expected = 3.0 * (1.0 + 2.5f64.cos()) - 2.5f64.sin();
        assert_relative_eq!(p.residual, expected.abs());
        assert!((expected + 0.0019).abs() < 1e-4);
        assert!(p.warning.is_some());
        let refined = p.refine_tf().unwrap();
        assert!(refined.residual < 1e-12);
        assert!((refined.t_f - 2.5).abs() < 0.01);
    }

    #[test]
    fn far_from_root_is_rejected() {
        assert!(matches!(scalar_trig_plan(2.0, 2.0, 2.0), Err(Error::InvalidPlan { .. })));
        assert!(scalar_trig_plan(2.0, 2.0, 0.0).is_err());
    }

    #[test]
    fn vector_cos_plan_values() {
        let p = vector_cos_plan(&[-2.0, PI], FRAC_PI_2).unwrap();
        assert!(p.residual < 1e-15);
        assert_eq!(p.phi(0.0), RowDVector::from_row_slice(&[-2.0, PI]));
        assert_eq!(p.phi(FRAC_PI_2), RowDVector::zeros(2));
        let z = vector_cos_plan(&[0.0, 0.0], 0.7).unwrap();
        assert_eq!(z.phi(0.3), RowDVector::zeros(2));
    }

    #[test]
    fn auto_match_reproduces_initial_sigma() {
        let p2 = presets::example2().unwrap();
        let plan = auto_match_p2(AutoFamily::ScalarTrig { beta: 2.0 }, &p2.sliding, &DVector::from_vec(vec![2.0, 1.0]), PI).unwrap();
        assert_eq!(plan.family, PlanFamily::ScalarTrig { alpha: 2.0, beta: 2.0 });

        let p3 = presets::example3().unwrap();
        let x0 = DVector::from_vec(vec![2.0, 2.5, PI]);
        let plan = auto_match_p2(AutoFamily::VectorCos, &p3.sliding, &x0, FRAC_PI_2).unwrap();
        let s0 = p3.sliding.sigma(&x0).unwrap();
        assert!((plan.phi(0.0) - s0).norm() <= 1e-12);
        assert!(matches!(
            auto_match_p2(AutoFamily::ScalarTrig { beta: 0.0 }, &p3.sliding, &x0, PI),
            Err(Error::UnderParameterized(_))
        ));

        let origin = auto_match_p2(AutoFamily::VectorCos, &p3.sliding, &DVector::zeros(3), 1.0).unwrap();
        assert_eq!(origin.family, PlanFamily::Zero { m: 2 });
    }

    fn lattice(b: &AxisBox, k: usize) -> Vec<DVector<f64>> {
        let mut pts = Vec::with_capacity(k * k);
        for i in 0..k {
            for j in 0..k {
                let x = b.lo[0] + (b.hi[0] - b.lo[0]) * i as f64 / (k - 1) as f64;
                let y = b.lo[1] + (b.hi[1] - b.lo[1]) * j as f64 / (k - 1) as f64;
                pts.push(DVector::from_vec(vec![x, y]));
            }
        }
        pts
    }

    #[test]
    fn p1_coverage_on_example2() {
        let p = presets::example2().unwrap();
        let pts = lattice(&AxisBox::cube(2, 6.0).unwrap(), 241);
        let plan = scalar_trig_plan(2.0, 2.0, PI).unwrap();
        let report = validate_p1(&plan, &p.sliding, &p.region, &pts, 200, 0.05);
        assert_eq!(report.coverage, 1.0, "{:?}", report.uncovered_times);

        let unreachable = scalar_trig_plan(500.0, 0.0, PI).unwrap();
        let report = validate_p1(&unreachable, &p.sliding, &p.region, &pts, 200, 0.05);
        assert!(report.coverage < 1.0);
    }

    #[test]
    fn p1_coverage_shrinks_with_larger_excision() {
        let p = presets::example2().unwrap();
        let pts = lattice(&AxisBox::new(vec![0.0, -2.0], vec![4.0, 2.0]).unwrap(), 121);
        let plan = scalar_trig_plan(2.0, 2.0, PI).unwrap();
        let small = validate_p1(&plan, &p.sliding, &p.region, &pts, 100, 0.05);
        let mut bigger = (*p.region).clone();
        bigger.f_r = crate::geometry::RegionRule::Union(vec![bigger.f_r.clone(), crate::geometry::RegionRule::Box]);
        let big = validate_p1(&plan, &p.sliding, &bigger, &pts, 100, 0.05);
        assert!(big.coverage <= small.coverage);
    }

    #[test]
    fn plan_spec_parsing() {
        assert_eq!(PlanSpec::parse("scalar-trig:2,2").unwrap(), PlanSpec::ScalarTrig { alpha: 2.0, beta: 2.0 });
        assert_eq!(
            PlanSpec::parse("vector-cos:-2,3.5").unwrap(),
            PlanSpec::VectorCos { coeffs: vec![-2.0, 3.5] }
        );
        assert_eq!(PlanSpec::parse("auto").unwrap(), PlanSpec::Auto { beta: 0.0 });
        assert_eq!(PlanSpec::parse("auto:2").unwrap(), PlanSpec::Auto { beta: 2.0 });
        assert!(PlanSpec::parse("scalar-trig:1").is_err());
        assert!(PlanSpec::parse("spline:1,2").is_err());
    }

    proptest! {
        #[test]
        fn clamped_after_final_time(alpha in -5.0..5.0f64, beta in -5.0..5.0f64, extra in 0.0..50.0f64) {
            let p = scalar_trig_plan(alpha, beta, PI).unwrap();
            prop_assert_eq!(p.phi(PI + extra)[0], 0.0);
            prop_assert_eq!(p.phi_dot(PI + extra)[0], 0.0);
        }

        #[test]
        fn derivative_matches_differences(a in -3.0..3.0f64, b in -3.0..3.0f64, frac in 0.0..1.0f64) {
            let p = vector_cos_plan(&[a, b], FRAC_PI_2).unwrap();
            let t = frac * (FRAC_PI_2 - 1e-3 - 1e-5) + 1e-5;
            let h = 1e-6;
            let fd = (p.phi(t + h) - p.phi(t - h)) / (2.0 * h);
            prop_assert!((fd - p.phi_dot(t)).norm() <= 1e-6);
            let q = scalar_trig_plan(a, b, PI).unwrap();
            let t = frac * (PI - 1e-3 - 1e-5) + 1e-5;
            let fd = (q.phi(t + h)[0] - q.phi(t - h)[0]) / (2.0 * h);
            prop_assert!((fd - q.phi_dot(t)[0]).abs() <= 1e-6);
        }
    }
}
