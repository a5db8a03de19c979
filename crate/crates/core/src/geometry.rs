//! Implicit regions (unsafe set, its enlargements, the barrier box), the
//! η-construction of the excised set, and grid connectivity of the manifold.

use std::collections::VecDeque;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::EnergyFunction;
use crate::error::{check_dim, Error, Result};
use crate::sampling::{AxisBox, BoundarySampler, BoxSurfaceLattice};
use crate::sliding::SigmaMap;

/// Half-width of the band around the unsafe boundary that counts as part of
/// its closure.
pub const CLOSURE_BAND: f64 = 1e-6;

/// Predicate language for the nested sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionRule {
    Empty,
    /// The barrier box itself.
    Box,
    /// The open unsafe set.
    Unsafe,
    /// `{x in box : W0(x) > c}`.
    EnergyAbove(f64),
    Union(Vec<RegionRule>),
}

/// Finest region a point belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Unsafe,
    D0,
    F,
    Fr,
    SafeFree,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Unsafe => "unsafe",
            Label::D0 => "D0",
            Label::F => "F",
            Label::Fr => "F_r",
            Label::SafeFree => "safe-free",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The sets `D ⊆ D0 ⊆ F ⊆ F_r` inside and around the barrier box.
#[derive(Debug, Clone)]
pub struct RegionSpec {
    pub energy: Arc<EnergyFunction>,
    pub d0: RegionRule,
    pub f: RegionRule,
    pub f_r: RegionRule,
}

impl RegionSpec {
    pub fn new(energy: Arc<EnergyFunction>, d0: RegionRule, f: RegionRule, f_r: RegionRule) -> Self {
        Self { energy, d0, f, f_r }
    }

    /// `D0 = {x in box : W0 > 0}`, `F_r = F`.
    pub fn with_default_d0(energy: Arc<EnergyFunction>, f: RegionRule) -> Self {
        Self::new(energy, RegionRule::EnergyAbove(0.0), f.clone(), f)
    }

    pub fn domain(&self) -> &AxisBox {
        self.energy.cbf.domain()
    }

    pub fn barrier_h(&self, x: &DVector<f64>) -> f64 {
        self.energy.cbf.barrier.value(x)
    }

    pub fn in_unsafe(&self, x: &DVector<f64>) -> bool {
        self.energy.cbf.in_unsafe(x)
    }

    /// Open unsafe set plus a thin band around its boundary.
    pub fn in_unsafe_closure(&self, x: &DVector<f64>) -> bool {
        if !self.domain().contains(x) {
            return false;
        }
        let h = self.barrier_h(x);
        let level = self.energy.cbf.level();
        if h < level {
            return true;
        }
        let slope = self.energy.cbf.barrier.gradient(x).norm();
        (h - level).abs() <= CLOSURE_BAND * slope
    }

    pub fn holds(&self, rule: &RegionRule, x: &DVector<f64>) -> bool {
        match rule {
            RegionRule::Empty => false,
            RegionRule::Box => self.domain().contains(x),
            RegionRule::Unsafe => self.in_unsafe(x),
            RegionRule::EnergyAbove(c) => self.domain().contains(x) && self.energy.value(x) > *c,
            RegionRule::Union(parts) => parts.iter().any(|r| self.holds(r, x)),
        }
    }

    pub fn in_d0(&self, x: &DVector<f64>) -> bool {
        self.holds(&self.d0, x)
    }

    pub fn in_f(&self, x: &DVector<f64>) -> bool {
        self.holds(&self.f, x)
    }

    pub fn in_f_r(&self, x: &DVector<f64>) -> bool {
        self.holds(&self.f_r, x)
    }

    pub fn membership(&self, x: &DVector<f64>) -> Label {
        if self.in_unsafe_closure(x) {
            Label::Unsafe
        } else if self.in_d0(x) {
            Label::D0
        } else if self.in_f(x) {
            Label::F
        } else if self.in_f_r(x) {
            Label::Fr
        } else {
            Label::SafeFree
        }
    }

    /// `1 - exp(level - h)`: positive exactly outside the unsafe set, 1
    /// outside the box.
    pub fn clearance(&self, x: &DVector<f64>) -> f64 {
        let h = self.barrier_h(x);
        if h.is_finite() {
            1.0 - (self.energy.cbf.level() - h).exp()
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NestingReport {
    pub samples: usize,
    pub violations: Vec<(String, Vec<f64>)>,
    pub origin_in_f_r: bool,
}

impl NestingReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty() && !self.origin_in_f_r
    }
}

/// Sampled check of `D ⊆ D0 ⊆ F ⊆ F_r` and `0 ∉ F_r`.
pub fn check_nesting(region: &RegionSpec, points: &[DVector<f64>]) -> NestingReport {
    let mut violations = Vec::new();
    for x in points {
        let (d, d0, f, fr) = (region.in_unsafe(x), region.in_d0(x), region.in_f(x), region.in_f_r(x));
        let name = if d && !d0 {
            Some("D not in D0")
        } else if d0 && !f {
            Some("D0 not in F")
        } else if f && !fr {
            Some("F not in F_r")
        } else {
            None
        };
        if let Some(name) = name {
            if violations.len() < 16 {
                violations.push((name.to_string(), x.iter().copied().collect()));
            }
        }
    }
    let origin = DVector::zeros(region.domain().dim());
    NestingReport {
        samples: points.len(),
        violations,
        origin_in_f_r: region.in_f_r(&origin),
    }
}

/// Result of the η-construction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EtaConstruction {
    pub eta: Option<f64>,
    pub crossings: Vec<Vec<f64>>,
    pub f: RegionRule,
}

/// Locates where the exterior manifold `{exterior_sigma = 0}` meets the box
/// boundary, and sets `η = min(-W0)` over those points so that
/// `F = {x in box : W0 > -η}` leaves them outside `F`.
///
/// Sign changes of the first component are searched along the lines of a
/// surface lattice and refined by bisection; for several inputs a crossing
/// also needs the remaining components to vanish there. Without crossings
/// the whole box is excised.
pub fn build_f_eta<S>(energy: &EnergyFunction, exterior_sigma: S, per_axis: usize) -> Result<EtaConstruction>
where
    S: Fn(&DVector<f64>) -> nalgebra::RowDVector<f64>,
{
    let bounds = energy.cbf.domain().clone();
    let n = bounds.dim();
    let k = per_axis.max(3);
    let lattice = BoxSurfaceLattice {
        bounds: bounds.clone(),
        per_axis: k,
    };
    let points = lattice.sample();
    let face_points = k.pow(n as u32 - 1);

    let mut crossings: Vec<DVector<f64>> = Vec::new();
    let scale = |x: &DVector<f64>| x.norm().max(1.0);
    for face in 0..2 * n {
        let base = face * face_points;
        for idx in 0..face_points {
            // Step along each free axis to the next lattice point on the same face.
            let mut stride = 1;
            for _free_axis in 1..n {
                let digit = (idx / stride) % k;
                if digit + 1 < k {
                    let a = &points[base + idx];
                    let b = &points[base + idx + stride];
                    let (sa, sb) = (exterior_sigma(a)[0], exterior_sigma(b)[0]);
                    if sa == 0.0 || sa.signum() != sb.signum() {
                        let p = bisect_segment(&exterior_sigma, a, b);
                        let residual = exterior_sigma(&p).norm();
                        if residual <= 1e-8 * scale(&p) && !crossings.iter().any(|c| (c - &p).norm() < 1e-9) {
                            crossings.push(p);
                        }
                    }
                }
                stride *= k;
            }
        }
    }
    let eta = crossings
        .iter()
        .map(|p| -energy.value(p))
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))));
    let f = match eta {
        Some(eta) => RegionRule::EnergyAbove(-eta),
        None => RegionRule::Box,
    };
    Ok(EtaConstruction {
        eta,
        crossings: crossings.iter().map(|p| p.iter().copied().collect()).collect(),
        f,
    })
}

fn bisect_segment<S>(sigma: &S, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64>
where
    S: Fn(&DVector<f64>) -> nalgebra::RowDVector<f64>,
{
    let (mut lo, mut hi) = (a.clone(), b.clone());
    let s_lo = sigma(&lo)[0];
    if s_lo == 0.0 {
        return lo;
    }
    for _ in 0..100 {
        let mid = (&lo + &hi) * 0.5;
        let s = sigma(&mid)[0];
        if s == 0.0 {
            return mid;
        }
        if s.signum() == s_lo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo + hi) * 0.5
}

/// Sampled point with `W0 <= 0`, if any.
pub fn check_u_nonempty(energy: &EnergyFunction, points: &[DVector<f64>]) -> Option<DVector<f64>> {
    crate::energy::find_nonpositive_energy(|x| energy.value(x), points)
}

/// Node lattice over a closed box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub bounds: AxisBox,
    pub resolution: usize,
}

impl GridSpec {
    pub fn new(bounds: AxisBox, resolution: usize) -> Result<Self> {
        if resolution < 16 {
            return Err(Error::NoManifoldCells(format!("resolution {resolution} is below 16 per axis")));
        }
        Ok(Self { bounds, resolution })
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn len(&self) -> usize {
        self.resolution.pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.bounds.hi[axis] - self.bounds.lo[axis]) / (self.resolution - 1) as f64
    }

    pub fn diagonal(&self) -> f64 {
        (0..self.dim()).map(|i| self.spacing(i).powi(2)).sum::<f64>().sqrt()
    }

    /// Multi-index with axis 0 varying slowest.
    pub fn index(&self, flat: usize) -> Vec<usize> {
        let n = self.dim();
        let mut out = vec![0; n];
        let mut rem = flat;
        for axis in (0..n).rev() {
            out[axis] = rem % self.resolution;
            rem /= self.resolution;
        }
        out
    }

    pub fn point(&self, flat: usize) -> DVector<f64> {
        let idx = self.index(flat);
        DVector::from_fn(self.dim(), |i, _| self.bounds.lo[i] + idx[i] as f64 * self.spacing(i))
    }

    fn neighbors(&self, flat: usize) -> impl Iterator<Item = usize> + '_ {
        let idx = self.index(flat);
        let n = self.dim();
        (0..n).flat_map(move |axis| {
            let stride = self.resolution.pow((n - 1 - axis) as u32);
            let i = idx[axis];
            let down = (i > 0).then(|| flat - stride);
            let up = (i + 1 < self.resolution).then(|| flat + stride);
            down.into_iter().chain(up)
        })
    }
}

/// Per-node values of `‖σ‖`, its Lipschitz estimate and the region label.
#[derive(Debug, Clone)]
pub struct GridScan {
    pub spec: GridSpec,
    /// `NaN` where `σ` is not evaluated (guard band).
    pub sigma_norm: Vec<f64>,
    pub lipschitz: Vec<f64>,
    pub labels: Vec<Label>,
    pub unsafe_nodes: Vec<bool>,
}

impl GridScan {
    /// Evaluates the lattice in parallel.
    pub fn run(sigma: &dyn SigmaMap, region: &RegionSpec, spec: GridSpec) -> Result<Self> {
        check_dim("grid box", sigma.dim(), spec.dim())?;
        let rows: Vec<(f64, f64, Label, bool)> = (0..spec.len())
            .into_par_iter()
            .map(|flat| {
                let x = spec.point(flat);
                let (s, l) = match sigma.eval(&x) {
                    Some((s, l)) => (s.norm(), l),
                    None => (f64::NAN, f64::NAN),
                };
                (s, l, region.membership(&x), region.in_unsafe(&x))
            })
            .collect();
        let mut scan = Self {
            spec,
            sigma_norm: Vec::with_capacity(rows.len()),
            lipschitz: Vec::with_capacity(rows.len()),
            labels: Vec::with_capacity(rows.len()),
            unsafe_nodes: Vec::with_capacity(rows.len()),
        };
        for (s, l, lab, u) in rows {
            scan.sigma_norm.push(s);
            scan.lipschitz.push(l);
            scan.labels.push(lab);
            scan.unsafe_nodes.push(u);
        }
        Ok(scan)
    }

    /// Node lies within one cell diagonal of the zero set, judged by its
    /// local slope.
    pub fn near_zero(&self, flat: usize) -> bool {
        let s = self.sigma_norm[flat];
        s.is_finite() && s <= self.lipschitz[flat] * self.spec.diagonal()
    }

    /// CSV with columns `x1..xn,sigma_norm,label`.
    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let n = self.spec.dim();
        let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        header.push("sigma_norm".into());
        header.push("label".into());
        w.write_record(&header)?;
        for flat in 0..self.spec.len() {
            let x = self.spec.point(flat);
            let mut rec: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            rec.push(self.sigma_norm[flat].to_string());
            rec.push(self.labels[flat].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    fn flood(&self, keep: &[bool]) -> (Vec<usize>, usize) {
        const NONE: usize = usize::MAX;
        let mut comp = vec![NONE; keep.len()];
        let mut count = 0;
        let mut queue = VecDeque::new();
        for start in 0..keep.len() {
            if !keep[start] || comp[start] != NONE {
                continue;
            }
            comp[start] = count;
            queue.push_back(start);
            while let Some(cur) = queue.pop_front() {
                for nb in self.spec.neighbors(cur) {
                    if keep[nb] && comp[nb] == NONE {
                        comp[nb] = count;
                        queue.push_back(nb);
                    }
                }
            }
            count += 1;
        }
        (comp, count)
    }

    /// Connected pieces of the near-zero set after removing the nodes where
    /// `excised` holds. Adjacency is across cell faces.
    ///
    /// A piece is flagged `intersects_unsafe` when the unexcised near-zero
    /// set connects it to a node of the unsafe set.
    pub fn manifold_components<P>(&self, excised: P) -> Result<ComponentReport>
    where
        P: Fn(&DVector<f64>) -> bool + Sync,
    {
        let n = self.spec.dim();
        if !(2..=3).contains(&n) {
            return Err(Error::Contract(format!("grid connectivity needs 2 or 3 dimensions, got {n}")));
        }
        let raw: Vec<bool> = (0..self.spec.len()).map(|i| self.near_zero(i)).collect();
        let cut: Vec<bool> = (0..self.spec.len())
            .into_par_iter()
            .map(|i| raw[i] && !excised(&self.spec.point(i)))
            .collect();
        if !cut.iter().any(|&c| c) {
            return Err(Error::NoManifoldCells(format!(
                "no near-zero nodes at resolution {}",
                self.spec.resolution
            )));
        }
        let (raw_comp, raw_count) = self.flood(&raw);
        let mut raw_hits_unsafe = vec![false; raw_count];
        for i in 0..raw.len() {
            if raw[i] && self.unsafe_nodes[i] {
                raw_hits_unsafe[raw_comp[i]] = true;
            }
        }
        let (comp, count) = self.flood(&cut);
        let mut components: Vec<Component> = (0..count)
            .map(|_| Component {
                nodes: 0,
                contains_origin: false,
                intersects_unsafe: false,
                nodes_in_unsafe: 0,
                lo: vec![f64::INFINITY; n],
                hi: vec![f64::NEG_INFINITY; n],
            })
            .collect();
        for i in 0..cut.len() {
            if !cut[i] {
                continue;
            }
            let c = &mut components[comp[i]];
            let x = self.spec.point(i);
            c.nodes += 1;
            if (0..n).all(|a| x[a].abs() <= self.spec.spacing(a)) {
                c.contains_origin = true;
            }
            if self.unsafe_nodes[i] {
                c.nodes_in_unsafe += 1;
            }
            if raw_hits_unsafe[raw_comp[i]] {
                c.intersects_unsafe = true;
            }
            for a in 0..n {
                c.lo[a] = c.lo[a].min(x[a]);
                c.hi[a] = c.hi[a].max(x[a]);
            }
        }
        Ok(ComponentReport {
            resolution: self.spec.resolution,
            components,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Component {
    pub nodes: usize,
    pub contains_origin: bool,
    pub intersects_unsafe: bool,
    pub nodes_in_unsafe: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentReport {
    pub resolution: usize,
    pub components: Vec<Component>,
}

impl ComponentReport {
    pub fn count(&self) -> usize {
        self.components.len()
    }
}

/// Writes a scan to any writer, for callers that manage their own files.
pub fn write_scan_summary(report: &ComponentReport, mut out: impl Write) -> std::io::Result<()> {
    for (i, c) in report.components.iter().enumerate() {
        writeln!(
            out,
            "component {i}: {} nodes, origin={}, unsafe={}, box={:?}..{:?}",
            c.nodes, c.contains_origin, c.intersects_unsafe, c.lo, c.hi
        )?;
    }
    Ok(())
}
