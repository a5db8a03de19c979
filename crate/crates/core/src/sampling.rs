//! Axis-aligned boxes and point samplers for boundaries and volumes.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Seed shared by every sampled check unless the caller overrides it.
pub const DEFAULT_SEED: u64 = 42;

/// Open axis-aligned box `{x : lo_i < x_i < hi_i}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl AxisBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_dim("box upper corner", lo.len(), hi.len())?;
        if lo.is_empty() {
            return Err(Error::Contract("box must have at least one axis".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::Contract(format!("degenerate box {lo:?} .. {hi:?}")));
        }
        Ok(Self { lo, hi })
    }

    pub fn centered(center: &[f64], half_widths: &[f64]) -> Result<Self> {
        check_dim("box half widths", center.len(), half_widths.len())?;
        Self::new(
            center.iter().zip(half_widths).map(|(c, w)| c - w).collect(),
            center.iter().zip(half_widths).map(|(c, w)| c + w).collect(),
        )
    }

    /// The cube `[-r, r]^n`.
    pub fn cube(n: usize, r: f64) -> Result<Self> {
        Self::new(vec![-r; n], vec![r; n])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn center(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (a + b)))
    }

    pub fn half_widths(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (b - a)))
    }

    /// Membership in the open box.
    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim() && (0..self.dim()).all(|i| self.lo[i] < x[i] && x[i] < self.hi[i])
    }

    /// Distance from an interior point to the boundary; zero or negative outside.
    pub fn interior_depth(&self, x: &DVector<f64>) -> f64 {
        (0..self.dim())
            .map(|i| (x[i] - self.lo[i]).min(self.hi[i] - x[i]))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn corners(&self) -> Vec<DVector<f64>> {
        let n = self.dim();
        (0..1usize << n)
            .map(|mask| {
                DVector::from_fn(n, |i, _| if mask >> i & 1 == 1 { self.hi[i] } else { self.lo[i] })
            })
            .collect()
    }
}

/// Anything that produces a finite set of points on a boundary.
pub trait BoundarySampler {
    fn sample(&self) -> Vec<DVector<f64>>;
}

/// Regular lattice on every face of a box, edges and corners included.
///
/// Each face carries `per_axis^(n-1)` points, so the total is
/// `2 n per_axis^(n-1)` (shared edge points are repeated).
#[derive(Debug, Clone)]
pub struct BoxSurfaceLattice {
    pub bounds: AxisBox,
    pub per_axis: usize,
}

impl BoxSurfaceLattice {
    /// Smallest lattice with at least `min_points` points.
    pub fn with_min_points(bounds: AxisBox, min_points: usize) -> Self {
        let n = bounds.dim();
        let mut per_axis: usize = 2;
        while 2 * n * per_axis.pow(n.saturating_sub(1) as u32) < min_points {
            per_axis += 1;
        }
        Self { bounds, per_axis }
    }
}

impl BoundarySampler for BoxSurfaceLattice {
    fn sample(&self) -> Vec<DVector<f64>> {
        let n = self.bounds.dim();
        let k = self.per_axis.max(2);
        let coord = |axis: usize, j: usize| {
            let (a, b) = (self.bounds.lo[axis], self.bounds.hi[axis]);
            a + (b - a) * j as f64 / (k - 1) as f64
        };
        let face_points = k.pow(n.saturating_sub(1) as u32);
        let mut out = Vec::with_capacity(2 * n * face_points);
        for fixed in 0..n {
            for side in [self.bounds.lo[fixed], self.bounds.hi[fixed]] {
                for idx in 0..face_points {
                    let mut rem = idx;
                    let x = DVector::from_fn(n, |i, _| {
                        if i == fixed {
                            side
                        } else {
                            let j = rem % k;
                            rem /= k;
                            coord(i, j)
                        }
                    });
                    out.push(x);
                }
            }
        }
        out
    }
}

/// Points on a level set `{x : phi(x) = level}` of a function that is below
/// `level` at `center` and grows without bound towards the box boundary.
///
/// Each ray from the center is bisected for the crossing. Directions are
/// equally spaced angles in the plane and seeded Gaussian directions in
/// higher dimensions.
pub struct LevelSetRays<F> {
    pub bounds: AxisBox,
    pub center: DVector<f64>,
    pub field: F,
    pub level: f64,
    pub rays: usize,
    pub seed: u64,
}

impl<F: Fn(&DVector<f64>) -> f64> LevelSetRays<F> {
    fn directions(&self) -> Vec<DVector<f64>> {
        let n = self.center.len();
        if n == 2 {
            return (0..self.rays)
                .map(|i| {
                    let a = std::f64::consts::TAU * i as f64 / self.rays as f64;
                    DVector::from_vec(vec![a.cos(), a.sin()])
                })
                .collect();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = Vec::with_capacity(self.rays);
        while out.len() < self.rays {
            let d = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let norm = d.norm();
            if norm > 1e-12 {
                out.push(d / norm);
            }
        }
        out
    }

    fn crossing(&self, dir: &DVector<f64>) -> Option<DVector<f64>> {
        // Largest step that stays inside the box along `dir`.
        let mut t_max = f64::INFINITY;
        for i in 0..dir.len() {
            if dir[i] > 0.0 {
                t_max = t_max.min((self.bounds.hi[i] - self.center[i]) / dir[i]);
            } else if dir[i] < 0.0 {
                t_max = t_max.min((self.bounds.lo[i] - self.center[i]) / dir[i]);
            }
        }
        if !t_max.is_finite() {
            return None;
        }
        let above = |t: f64| {
            let v = (self.field)(&(&self.center + dir * t));
            !(v < self.level)
        };
        let (mut lo, mut hi) = (0.0, t_max);
        if above(lo) {
            return None;
        }
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if above(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Some(&self.center + dir * (0.5 * (lo + hi)))
    }
}

impl<F: Fn(&DVector<f64>) -> f64> BoundarySampler for LevelSetRays<F> {
    fn sample(&self) -> Vec<DVector<f64>> {
        self.directions().iter().filter_map(|d| self.crossing(d)).collect()
    }
}

/// Seeded uniform points in a box.
pub fn uniform_points(bounds: &AxisBox, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| DVector::from_fn(bounds.dim(), |i, _| rng.gen_range(bounds.lo[i]..bounds.hi[i])))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_boxes() {
        assert!(AxisBox::new(vec![1.0], vec![1.0]).is_err());
        assert!(AxisBox::new(vec![0.0, 0.0], vec![1.0]).is_err());
    }

    #[test]
    fn open_box_membership() {
        let b = AxisBox::new(vec![1.0, -1.0], vec![3.0, 1.0]).unwrap();
        assert!(b.contains(&DVector::from_vec(vec![2.0, 0.0])));
        assert!(!b.contains(&DVector::from_vec(vec![2.0, 1.0])));
        assert!((b.interior_depth(&DVector::from_vec(vec![2.5, 0.0])) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn surface_lattice_size_and_placement() {
        let b = AxisBox::new(vec![1.0, 1.0, 0.0], vec![3.0, 3.0, 2.0]).unwrap();
        let lattice = BoxSurfaceLattice::with_min_points(b.clone(), 100_000);
        let pts = lattice.sample();
        assert!(pts.len() >= 100_000);
        for p in &pts {
            let on_face = (0..3).any(|i| p[i] == b.lo[i] || p[i] == b.hi[i]);
            assert!(on_face);
        }
        for c in b.corners() {
            assert!(pts.iter().any(|p| p == &c));
        }
    }

    #[test]
    fn rays_find_unit_circle() {
        let b = AxisBox::cube(2, 2.0).unwrap();
        let rays = LevelSetRays {
            bounds: b,
            center: DVector::zeros(2),
            field: |x: &DVector<f64>| x.norm_squared(),
            level: 1.0,
            rays: 64,
            seed: DEFAULT_SEED,
        };
        let pts = rays.sample();
        assert_eq!(pts.len(), 64);
        assert!(pts.iter().all(|p| (p.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn uniform_points_are_deterministic_and_inside() {
        let b = AxisBox::cube(3, 6.0).unwrap();
        let a = uniform_points(&b, 100, DEFAULT_SEED);
        assert_eq!(a, uniform_points(&b, 100, DEFAULT_SEED));
        assert!(a.iter().all(|p| p.iter().all(|v| v.abs() <= 6.0)));
    }
}
