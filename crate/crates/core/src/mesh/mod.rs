//! Cartesian grids, node-valued scalar fields and the operations on them.

mod holder;
mod io;
mod quadrature;

pub use holder::{holder_norm, holder_norm_c1, C1HolderNorm, HolderNorm, SamplingMode, DEFAULT_PAIR_BUDGET};
pub use io::{read_field, write_atomic, write_field, FieldHeader};
pub use quadrature::{ball_integral, sphere_integral, Quadrature, QuadratureSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

pub type Point = [f64; 3];

/// Slack used when deciding whether a point lies inside the grid box.
const BOX_EPS: f64 = 1e-9;

pub fn distance(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Compactly supported `C^2` bump `(1 - |x - c|^2 / rho^2)^3`, zero outside the ball.
pub fn poly_bump(p: Point, center: Point, radius: f64) -> f64 {
    let s = 1.0 - (distance(p, center) / radius).powi(2);
    if s > 0.0 {
        s * s * s
    } else {
        0.0
    }
}

/// Axis-aligned node lattice. Node `(i, j, k)` sits at `origin + (i hx, j hy, k hz)`
/// and is stored at `(i * ny + j) * nz + k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: Point,
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: Point) -> Result<Self> {
        if dims.iter().any(|&n| n < 3) {
            return Err(Error::domain(format!("grid needs >= 3 nodes per axis, got {dims:?}")));
        }
        if spacing.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::domain(format!("grid spacing must be positive, got {spacing:?}")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::domain("grid origin must be finite"));
        }
        Ok(Self { dims, spacing, origin })
    }

    /// Grid with `dims` nodes spanning `[lower, upper]` per axis.
    pub fn from_bounds(lower: Point, upper: Point, dims: [usize; 3]) -> Result<Self> {
        let mut spacing = [0.0; 3];
        for a in 0..3 {
            if !(upper[a] > lower[a]) {
                return Err(Error::domain(format!(
                    "empty box on axis {a}: [{}, {}]",
                    lower[a], upper[a]
                )));
            }
            if dims[a] < 2 {
                return Err(Error::domain(format!("grid needs >= 3 nodes per axis, got {dims:?}")));
            }
            spacing[a] = (upper[a] - lower[a]) / (dims[a] - 1) as f64;
        }
        Self::new(dims, spacing, lower)
    }

    /// Cube `[-half, half]^3` centred at `center` with `n` nodes per axis.
    pub fn cube(center: Point, half: f64, n: usize) -> Result<Self> {
        Self::from_bounds(
            [center[0] - half, center[1] - half, center[2] - half],
            [center[0] + half, center[1] + half, center[2] + half],
            [n; 3],
        )
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> Point {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn upper(&self) -> Point {
        [0, 1, 2].map(|a| self.origin[a] + (self.dims[a] - 1) as f64 * self.spacing[a])
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(0.0, f64::max)
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    pub fn ijk(&self, idx: usize) -> [usize; 3] {
        let k = idx % self.dims[2];
        let rest = idx / self.dims[2];
        [rest / self.dims[1], rest % self.dims[1], k]
    }

    #[inline]
    pub fn strides(&self) -> [usize; 3] {
        [self.dims[1] * self.dims[2], self.dims[2], 1]
    }

    #[inline]
    pub fn coords(&self, ijk: [usize; 3]) -> Point {
        [0, 1, 2].map(|a| self.origin[a] + ijk[a] as f64 * self.spacing[a])
    }

    #[inline]
    pub fn node_coords(&self, idx: usize) -> Point {
        self.coords(self.ijk(idx))
    }

    pub fn is_boundary_node(&self, ijk: [usize; 3]) -> bool {
        (0..3).any(|a| ijk[a] == 0 || ijk[a] + 1 == self.dims[a])
    }

    /// Distance from `p` to the nearest box face; negative outside.
    pub fn distance_to_boundary(&self, p: Point) -> f64 {
        let hi = self.upper();
        (0..3)
            .map(|a| (p[a] - self.origin[a]).min(hi[a] - p[a]))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, p: Point) -> bool {
        self.distance_to_boundary(p) >= -BOX_EPS
    }

    pub fn nearest_node(&self, p: Point) -> Option<[usize; 3]> {
        if !self.contains(p) {
            return None;
        }
        Some([0, 1, 2].map(|a| {
            let s = ((p[a] - self.origin[a]) / self.spacing[a]).round();
            (s.max(0.0) as usize).min(self.dims[a] - 1)
        }))
    }

    /// Whether `p` coincides with a node up to a tiny fraction of the spacing.
    pub fn on_node(&self, p: Point) -> bool {
        (0..3).all(|a| {
            let s = (p[a] - self.origin[a]) / self.spacing[a];
            (s - s.round()).abs() < 1e-6
        })
    }

    /// The whole lattice as an index box.
    pub fn full_box(&self) -> IndexBox {
        IndexBox {
            lo: [0; 3],
            hi: [self.dims[0] - 1, self.dims[1] - 1, self.dims[2] - 1],
        }
    }

    /// Nodes lying inside the physical box `[lower, upper]`.
    pub fn index_box(&self, lower: Point, upper: Point) -> Result<IndexBox> {
        let mut lo = [0; 3];
        let mut hi = [0; 3];
        for a in 0..3 {
            let s_lo = ((lower[a] - self.origin[a]) / self.spacing[a] - 1e-7).ceil();
            let s_hi = ((upper[a] - self.origin[a]) / self.spacing[a] + 1e-7).floor();
            if s_lo < 0.0 || s_hi > (self.dims[a] - 1) as f64 || s_hi < s_lo {
                return Err(Error::domain(format!(
                    "box [{lower:?}, {upper:?}] does not fit inside the grid on axis {a}"
                )));
            }
            lo[a] = s_lo as usize;
            hi[a] = s_hi as usize;
        }
        Ok(IndexBox { lo, hi })
    }

    /// Lattice of the nodes in `region`, with the same spacing.
    pub fn sub_grid(&self, region: &IndexBox) -> Result<Grid> {
        region.check_within(self)?;
        Grid::new(region.dims(), self.spacing, self.coords(region.lo))
    }
}

/// Inclusive range of node indices `lo..=hi` per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl IndexBox {
    pub fn dims(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| self.hi[a] + 1 - self.lo[a])
    }

    pub fn len(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|a| self.hi[a] < self.lo[a])
    }

    pub fn contains(&self, ijk: [usize; 3]) -> bool {
        (0..3).all(|a| ijk[a] >= self.lo[a] && ijk[a] <= self.hi[a])
    }

    /// Node on the faces of the box.
    pub fn on_boundary(&self, ijk: [usize; 3]) -> bool {
        self.contains(ijk) && (0..3).any(|a| ijk[a] == self.lo[a] || ijk[a] == self.hi[a])
    }

    pub fn check_within(&self, grid: &Grid) -> Result<()> {
        let d = grid.dims();
        if self.is_empty() || (0..3).any(|a| self.hi[a] >= d[a]) {
            return Err(Error::domain(format!("index box {self:?} outside grid {d:?}")));
        }
        Ok(())
    }

    /// Physical extent of the box on `grid`.
    pub fn bounds(&self, grid: &Grid) -> (Point, Point) {
        (grid.coords(self.lo), grid.coords(self.hi))
    }

    /// Grid indices of all nodes, in storage order.
    pub fn nodes(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let lo = self.lo;
        let hi = self.hi;
        (lo[0]..=hi[0]).flat_map(move |i| (lo[1]..=hi[1]).flat_map(move |j| (lo[2]..=hi[2]).map(move |k| [i, j, k])))
    }

    /// Shrinks the box by `layers` nodes on every face.
    pub fn shrink(&self, layers: usize) -> Option<IndexBox> {
        let mut out = *self;
        for a in 0..3 {
            if self.hi[a] < self.lo[a] + 2 * layers {
                return None;
            }
            out.lo[a] += layers;
            out.hi[a] -= layers;
        }
        Some(out)
    }
}

/// One value per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "field has {} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!(
                "non-finite field value at node {:?}",
                grid.ijk(pos)
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    /// Samples `f` at every node. Panics if `f` produces a non-finite value.
    pub fn from_fn<F>(grid: Grid, f: F) -> Self
    where
        F: Fn(Point) -> f64 + Sync + Send,
    {
        let mut values = vec![0.0; grid.len()];
        par::fill(&mut values, |idx| f(grid.node_coords(idx)));
        assert!(values.iter().all(|v| v.is_finite()), "sampled field is not finite");
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, ijk: [usize; 3]) -> f64 {
        self.values[self.grid.index(ijk[0], ijk[1], ijk[2])]
    }

    pub fn same_grid(&self, other: &ScalarField) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::Shape(format!(
                "grids differ: {:?} vs {:?}",
                self.grid.dims(),
                other.grid.dims()
            )));
        }
        Ok(())
    }

    pub fn map<F>(&self, f: F) -> ScalarField
    where
        F: Fn(f64) -> f64 + Sync + Send,
    {
        let mut values = vec![0.0; self.values.len()];
        par::fill(&mut values, |i| f(self.values[i]));
        ScalarField {
            grid: self.grid,
            values,
        }
    }

    pub fn zip_map<F>(&self, other: &ScalarField, f: F) -> Result<ScalarField>
    where
        F: Fn(f64, f64) -> f64 + Sync + Send,
    {
        self.same_grid(other)?;
        let mut values = vec![0.0; self.values.len()];
        par::fill(&mut values, |i| f(self.values[i], other.values[i]));
        Ok(ScalarField {
            grid: self.grid,
            values,
        })
    }

    pub fn min(&self) -> f64 {
        -par::max(self.values.len(), |i| -self.values[i])
    }

    pub fn max(&self) -> f64 {
        par::max(self.values.len(), |i| self.values[i])
    }

    pub fn max_abs(&self) -> f64 {
        par::max(self.values.len(), |i| self.values[i].abs())
    }

    /// Node index of the smallest value.
    pub fn argmin(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v < self.values[best] {
                best = i;
            }
        }
        best
    }

    /// Copy of the values on `region`, as a field on the corresponding sub-grid.
    pub fn restrict(&self, region: &IndexBox) -> Result<ScalarField> {
        let grid = self.grid.sub_grid(region)?;
        let values = region.nodes().map(|ijk| self.at(ijk)).collect();
        Ok(ScalarField { grid, values })
    }

    /// Trilinear interpolation; `None` outside the grid box.
    pub fn interpolate(&self, p: Point) -> Option<f64> {
        let (base, t) = locate(&self.grid, p)?;
        Some(trilinear(&self.grid, &self.values, base, t))
    }

    /// Trilinear blend of the corner expansions `f(c) + grad f(c) . (p - c) / 2`.
    /// Exact on quadratics when `grad` is exact there, as [`gradient`] is.
    pub fn interpolate_corrected(&self, grad: &VectorField, p: Point) -> Option<f64> {
        let (base, t) = locate(&self.grid, p)?;
        let h = self.grid.spacing;
        let mut total = 0.0;
        for corner in 0..8 {
            let bits = [corner >> 2 & 1, corner >> 1 & 1, corner & 1];
            let mut w = 1.0;
            let mut ijk = base;
            let mut off = [0.0; 3];
            for a in 0..3 {
                ijk[a] += bits[a];
                w *= if bits[a] == 1 { t[a] } else { 1.0 - t[a] };
                off[a] = (t[a] - bits[a] as f64) * h[a];
            }
            let g = grad.at(ijk);
            total += w * (self.at(ijk) + 0.5 * (g[0] * off[0] + g[1] * off[1] + g[2] * off[2]));
        }
        Some(total)
    }
}

/// Cell containing `p` and the local coordinates in `[0, 1]^3`.
#[inline]
fn locate(grid: &Grid, p: Point) -> Option<([usize; 3], [f64; 3])> {
    let mut base = [0; 3];
    let mut t = [0.0; 3];
    for a in 0..3 {
        let s = (p[a] - grid.origin[a]) / grid.spacing[a];
        let n = grid.dims[a];
        if s < -BOX_EPS || s > (n - 1) as f64 + BOX_EPS || !s.is_finite() {
            return None;
        }
        let i = (s.floor().max(0.0) as usize).min(n - 2);
        base[a] = i;
        t[a] = (s - i as f64).clamp(0.0, 1.0);
    }
    Some((base, t))
}

#[inline]
fn trilinear(grid: &Grid, values: &[f64], base: [usize; 3], t: [f64; 3]) -> f64 {
    let [sx, sy, _] = grid.strides();
    let i0 = grid.index(base[0], base[1], base[2]);
    let c = |off: usize| values[i0 + off];
    let c00 = c(0) * (1.0 - t[2]) + c(1) * t[2];
    let c01 = c(sy) * (1.0 - t[2]) + c(sy + 1) * t[2];
    let c10 = c(sx) * (1.0 - t[2]) + c(sx + 1) * t[2];
    let c11 = c(sx + sy) * (1.0 - t[2]) + c(sx + sy + 1) * t[2];
    let c0 = c00 * (1.0 - t[1]) + c01 * t[1];
    let c1 = c10 * (1.0 - t[1]) + c11 * t[1];
    c0 * (1.0 - t[0]) + c1 * t[0]
}

/// Three scalar components on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub components: [ScalarField; 3],
}

impl VectorField {
    pub fn grid(&self) -> &Grid {
        self.components[0].grid()
    }

    pub fn interpolate(&self, p: Point) -> Option<[f64; 3]> {
        let grid = self.grid();
        let (base, t) = locate(grid, p)?;
        Some([0, 1, 2].map(|a| trilinear(grid, &self.components[a].values, base, t)))
    }

    pub fn at(&self, ijk: [usize; 3]) -> [f64; 3] {
        [0, 1, 2].map(|a| self.components[a].at(ijk))
    }

    /// Pointwise Euclidean norm squared.
    pub fn norm_squared(&self) -> ScalarField {
        let grid = *self.grid();
        let mut values = vec![0.0; grid.len()];
        let [x, y, z] = &self.components;
        par::fill(&mut values, |i| {
            x.values[i].powi(2) + y.values[i].powi(2) + z.values[i].powi(2)
        });
        ScalarField { grid, values }
    }
}

/// Central differences in the interior, second-order one-sided differences on
/// the box faces. Exact on quadratics.
pub fn gradient(f: &ScalarField) -> VectorField {
    let grid = *f.grid();
    let strides = grid.strides();
    let components = [0, 1, 2].map(|a| {
        let h = grid.spacing[a];
        let n = grid.dims[a];
        let s = strides[a];
        let v = &f.values;
        let mut out = vec![0.0; grid.len()];
        par::fill(&mut out, |idx| {
            let i = grid.ijk(idx)[a];
            if i == 0 {
                (-3.0 * v[idx] + 4.0 * v[idx + s] - v[idx + 2 * s]) / (2.0 * h)
            } else if i + 1 == n {
                (3.0 * v[idx] - 4.0 * v[idx - s] + v[idx - 2 * s]) / (2.0 * h)
            } else {
                (v[idx + s] - v[idx - s]) / (2.0 * h)
            }
        });
        ScalarField { grid, values: out }
    });
    VectorField { components }
}

/// Closed ball `B(center, radius)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Point, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::domain(format!("ball radius must be positive, got {radius}")));
        }
        Ok(Self { center, radius })
    }

    pub fn inside(&self, grid: &Grid) -> bool {
        grid.distance_to_boundary(self.center) >= self.radius - BOX_EPS
    }

    pub fn require_inside(&self, grid: &Grid) -> Result<()> {
        if !self.inside(grid) {
            return Err(Error::domain(format!(
                "ball B({:?}, {}) escapes the grid box",
                self.center, self.radius
            )));
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        4.0 / 3.0 * std::f64::consts::PI * self.radius.powi(3)
    }
}
