//! Seven-point flux-conservative discretization of `-div(a grad u) + b u`,
//! Jacobi-preconditioned conjugate gradients and numerical Green's functions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{distance, gradient, holder_norm, Grid, IndexBox, Point, ScalarField, DEFAULT_PAIR_BUDGET};
use crate::par;
use crate::regress::fit_line;
use crate::specfun::{fs_eval, ConstCoeffFS};

/// How a node-valued coefficient is averaged onto the face between two nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaceMean {
    #[default]
    Arithmetic,
    Geometric,
}

impl FaceMean {
    #[inline]
    fn combine(self, x: f64, y: f64) -> f64 {
        match self {
            FaceMean::Arithmetic => 0.5 * (x + y),
            FaceMean::Geometric => (x * y).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    /// Relative residual `||r|| / ||rhs||` at which iteration stops.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 20_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual: f64,
    pub tolerance: f64,
}

/// Matrix-free operator `u -> sum_faces c_f (u_i - u_nb) + r_i u_i` on the
/// interior nodes of a grid. Boundary nodes carry Dirichlet data.
#[derive(Debug, Clone)]
pub struct Stencil {
    grid: Grid,
    /// `faces[a][idx]`: face coefficient between `idx` and `idx + e_a`, divided by `h_a^2`.
    faces: [Vec<f64>; 3],
    reaction: Vec<f64>,
}

impl Stencil {
    pub fn new(coef: &ScalarField, reaction: Option<&ScalarField>, mean: FaceMean) -> Result<Self> {
        let grid = *coef.grid();
        if let Some(r) = reaction {
            coef.same_grid(r)?;
        }
        let dims = grid.dims();
        let strides = grid.strides();
        let h = grid.spacing();
        let v = coef.values();
        let faces = [0, 1, 2].map(|a| {
            let s = strides[a];
            let inv = 1.0 / (h[a] * h[a]);
            let mut out = vec![0.0; grid.len()];
            par::fill(&mut out, |idx| {
                if grid.ijk(idx)[a] + 1 < dims[a] {
                    mean.combine(v[idx], v[idx + s]) * inv
                } else {
                    0.0
                }
            });
            out
        });
        let reaction = match reaction {
            Some(r) => r.values().to_vec(),
            None => vec![0.0; grid.len()],
        };
        Ok(Self { grid, faces, reaction })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    fn row(&self, idx: usize, ijk: [usize; 3], u: &[f64], drop_boundary: bool) -> f64 {
        let dims = self.grid.dims();
        let strides = self.grid.strides();
        let ui = u[idx];
        let mut acc = self.reaction[idx] * ui;
        for a in 0..3 {
            let s = strides[a];
            let lo = idx - s;
            let hi = idx + s;
            let (ul, uh) = if drop_boundary {
                (
                    if ijk[a] == 1 { 0.0 } else { u[lo] },
                    if ijk[a] + 2 == dims[a] { 0.0 } else { u[hi] },
                )
            } else {
                (u[lo], u[hi])
            };
            acc += self.faces[a][lo] * (ui - ul) + self.faces[a][idx] * (ui - uh);
        }
        acc
    }

    /// Full stencil at interior nodes, zero on the boundary.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        par::fill(&mut out, |idx| {
            let ijk = self.grid.ijk(idx);
            if self.grid.is_boundary_node(ijk) {
                0.0
            } else {
                self.row(idx, ijk, u, false)
            }
        });
        out
    }

    /// Symmetric positive definite operator with identity boundary rows and
    /// couplings to boundary nodes removed.
    pub fn apply_homogeneous(&self, x: &[f64], out: &mut [f64]) {
        par::fill(out, |idx| {
            let ijk = self.grid.ijk(idx);
            if self.grid.is_boundary_node(ijk) {
                x[idx]
            } else {
                self.row(idx, ijk, x, true)
            }
        });
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let strides = self.grid.strides();
        let mut d = vec![0.0; self.grid.len()];
        par::fill(&mut d, |idx| {
            let ijk = self.grid.ijk(idx);
            if self.grid.is_boundary_node(ijk) {
                1.0
            } else {
                self.reaction[idx]
                    + (0..3)
                        .map(|a| self.faces[a][idx - strides[a]] + self.faces[a][idx])
                        .sum::<f64>()
            }
        });
        d
    }

    /// Solves the operator equation with `rhs` at interior nodes and the
    /// boundary entries of `boundary` as Dirichlet data.
    pub fn solve_dirichlet(
        &self,
        rhs: &[f64],
        boundary: &[f64],
        settings: &SolverSettings,
    ) -> Result<(Vec<f64>, SolveReport)> {
        let n = self.grid.len();
        if rhs.len() != n || boundary.len() != n {
            return Err(Error::Shape(format!(
                "solve on {n} nodes given rhs of {} and boundary of {}",
                rhs.len(),
                boundary.len()
            )));
        }
        let mut lift = vec![0.0; n];
        par::fill(&mut lift, |idx| {
            if self.grid.is_boundary_node(self.grid.ijk(idx)) {
                boundary[idx]
            } else {
                0.0
            }
        });
        let l_lift = self.apply(&lift);
        let mut b = vec![0.0; n];
        par::fill(&mut b, |idx| {
            if self.grid.is_boundary_node(self.grid.ijk(idx)) {
                0.0
            } else {
                rhs[idx] - l_lift[idx]
            }
        });
        let diag = self.diagonal();
        let (mut x, report) = pcg(|p, q| self.apply_homogeneous(p, q), &diag, &b, settings)?;
        par::axpy(1.0, &lift, &mut x);
        Ok((x, report))
    }
}

/// Jacobi-preconditioned conjugate gradients from a zero initial guess.
/// Stops once the recomputed residual satisfies `||b - Ax|| <= tol ||b||`.
pub fn pcg<A>(apply: A, diag: &[f64], b: &[f64], settings: &SolverSettings) -> Result<(Vec<f64>, SolveReport)>
where
    A: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let b_norm = par::dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok((
            x,
            SolveReport {
                iterations: 0,
                residual: 0.0,
                tolerance: settings.tol,
            },
        ));
    }
    let target = settings.tol * b_norm;
    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    par::fill(&mut z, |i| r[i] / diag[i]);
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz = par::dot(&r, &z);
    let mut r_norm = b_norm;
    for it in 1..=settings.max_iter {
        apply(&p, &mut q);
        let pq = par::dot(&p, &q);
        if !(pq > 0.0) {
            return Err(Error::NonConvergence {
                iterations: it,
                residual: r_norm / b_norm,
                tolerance: settings.tol,
            });
        }
        let alpha = rz / pq;
        par::axpy(alpha, &p, &mut x);
        par::axpy(-alpha, &q, &mut r);
        r_norm = par::dot(&r, &r).sqrt();
        let restart = r_norm <= target;
        if restart {
            apply(&x, &mut q);
            par::fill(&mut r, |i| b[i] - q[i]);
            r_norm = par::dot(&r, &r).sqrt();
            if r_norm <= target {
                return Ok((
                    x,
                    SolveReport {
                        iterations: it,
                        residual: r_norm / b_norm,
                        tolerance: settings.tol,
                    },
                ));
            }
        }
        par::fill(&mut z, |i| r[i] / diag[i]);
        let rz_new = par::dot(&r, &z);
        if restart {
            p.copy_from_slice(&z);
        } else {
            par::xpby(&z, rz_new / rz, &mut p);
        }
        rz = rz_new;
    }
    Err(Error::NonConvergence {
        iterations: settings.max_iter,
        residual: r_norm / b_norm,
        tolerance: settings.tol,
    })
}

/// Measured quantities behind the `D(lambda, kappa)` membership test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub lambda: f64,
    pub kappa: f64,
    pub min_a: f64,
    /// `||a||_{C^{0,1}} + sum_i ||d_i a||_{C^{0,1}}` on the lattice.
    pub a_c11_proxy: f64,
    pub min_b: f64,
    pub b_c01: f64,
}

impl Certificate {
    /// Tightest certificates for which the measured pair is admissible.
    pub fn tight(&self) -> (f64, f64) {
        (
            (1.0 / self.min_a).max(self.a_c11_proxy),
            (1.0 / self.min_b).max(self.b_c01),
        )
    }
}

/// Coefficients `(a, b)` on a common grid with certified bounds.
#[derive(Debug, Clone)]
pub struct AdmissiblePair {
    a: ScalarField,
    b: ScalarField,
    certificate: Certificate,
}

fn measure(a: &ScalarField, b: &ScalarField) -> Result<Certificate> {
    a.same_grid(b)?;
    let region = a.grid().full_box();
    let lip = |f: &ScalarField| holder_norm(f, 1.0, &region, DEFAULT_PAIR_BUDGET, 0).map(|n| n.total);
    let grad = gradient(a);
    let mut proxy = lip(a)?;
    for c in &grad.components {
        proxy += lip(c)?;
    }
    Ok(Certificate {
        lambda: f64::NAN,
        kappa: f64::NAN,
        min_a: a.min(),
        a_c11_proxy: proxy,
        min_b: b.min(),
        b_c01: lip(b)?,
    })
}

impl AdmissiblePair {
    /// Checks `min a >= 1/lambda`, `C^{1,1}` proxy of `a <= lambda`,
    /// `min b >= 1/kappa` and `||b||_{C^{0,1}} <= kappa`.
    pub fn certify(a: ScalarField, b: ScalarField, lambda: f64, kappa: f64) -> Result<Self> {
        let mut cert = measure(&a, &b)?;
        cert.lambda = lambda;
        cert.kappa = kappa;
        let violations = Self::violations(&cert);
        if !violations.is_empty() {
            return Err(Error::NotAdmissible(violations.join("; ")));
        }
        Ok(Self {
            a,
            b,
            certificate: cert,
        })
    }

    /// Certifies with the smallest admissible `(lambda, kappa)`.
    pub fn certify_tight(a: ScalarField, b: ScalarField) -> Result<Self> {
        let mut cert = measure(&a, &b)?;
        if !(cert.min_a > 0.0 && cert.min_b > 0.0) {
            return Err(Error::NotAdmissible(format!(
                "coefficients must be positive (min a = {}, min b = {})",
                cert.min_a, cert.min_b
            )));
        }
        (cert.lambda, cert.kappa) = cert.tight();
        Ok(Self {
            a,
            b,
            certificate: cert,
        })
    }

    pub fn constant(grid: Grid, a: f64, b: f64) -> Result<Self> {
        Self::certify_tight(ScalarField::constant(grid, a), ScalarField::constant(grid, b))
    }

    fn violations(c: &Certificate) -> Vec<String> {
        let mut out = Vec::new();
        if !(c.min_a >= 1.0 / c.lambda) {
            out.push(format!("min a = {:.6} < 1/lambda = {:.6}", c.min_a, 1.0 / c.lambda));
        }
        if !(c.a_c11_proxy <= c.lambda) {
            out.push(format!(
                "C^{{1,1}} proxy of a = {:.6} > lambda = {:.6}",
                c.a_c11_proxy, c.lambda
            ));
        }
        if !(c.min_b >= 1.0 / c.kappa) {
            out.push(format!("min b = {:.6} < 1/kappa = {:.6}", c.min_b, 1.0 / c.kappa));
        }
        if !(c.b_c01 <= c.kappa) {
            out.push(format!("C^{{0,1}} norm of b = {:.6} > kappa = {:.6}", c.b_c01, c.kappa));
        }
        out
    }

    pub fn a(&self) -> &ScalarField {
        &self.a
    }

    pub fn b(&self) -> &ScalarField {
        &self.b
    }

    pub fn grid(&self) -> &Grid {
        self.a.grid()
    }

    pub fn lambda_cert(&self) -> f64 {
        self.certificate.lambda
    }

    pub fn kappa_cert(&self) -> f64 {
        self.certificate.kappa
    }

    pub fn certificate(&self) -> &Certificate {
        &self.certificate
    }

    pub fn stencil(&self) -> Stencil {
        Stencil::new(&self.a, Some(&self.b), FaceMean::Arithmetic).expect("pair fields share a grid")
    }
}

/// `L_{a,b} u` at interior nodes; boundary nodes are set to zero.
pub fn apply_l(pair: &AdmissiblePair, u: &ScalarField) -> Result<ScalarField> {
    pair.a.same_grid(u)?;
    ScalarField::new(*u.grid(), pair.stencil().apply(u.values()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularization {
    /// Source `1/(hx hy hz)` at the nearest node, zero Dirichlet data.
    DiscreteDelta,
    /// Closed-form singular part with frozen coefficients plus a smooth remainder.
    #[default]
    SingularitySplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceConfig {
    pub xi1: Point,
    pub xi2: Point,
    #[serde(default)]
    pub regularization: Regularization,
    #[serde(default = "default_margin")]
    pub box_margin: f64,
}

fn default_margin() -> f64 {
    0.5
}

fn in_closed_box(p: Point, lo: Point, hi: Point) -> bool {
    (0..3).all(|a| p[a] >= lo[a] && p[a] <= hi[a])
}

impl SourceConfig {
    /// Every violated placement requirement, empty when valid.
    pub fn violations(&self, grid: &Grid, omega: (Point, Point)) -> Vec<String> {
        let mut out = Vec::new();
        if self.xi1 == self.xi2 {
            out.push("the two sources must be distinct".to_string());
        }
        for (name, xi) in [("xi1", self.xi1), ("xi2", self.xi2)] {
            if in_closed_box(xi, omega.0, omega.1) {
                out.push(format!(
                    "{name} = {xi:?} lies in the measurement region; sources must be placed outside it"
                ));
            }
            let d = if grid.contains(xi) {
                grid.distance_to_boundary(xi)
            } else {
                -1.0
            };
            if d < self.box_margin {
                out.push(format!(
                    "{name} = {xi:?} is {d:.3} from the box boundary, below the margin {}",
                    self.box_margin
                ));
            }
        }
        out
    }

    pub fn validate(&self, grid: &Grid, omega: (Point, Point)) -> Result<()> {
        let v = self.violations(grid, omega);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}

/// Distance `L` from sources and measurement region to the box at which the
/// bound `exp(-L / sqrt(c kappa))` falls below `1e-3`.
pub fn suggested_box_margin(kappa: f64, c: f64) -> f64 {
    (c * kappa).sqrt() * 1e3f64.ln()
}

/// Trilinear weights of the point `p` on the eight surrounding nodes.
fn trilinear_weights(grid: &Grid, p: Point) -> Vec<(usize, f64)> {
    let dims = grid.dims();
    let h = grid.spacing();
    let o = grid.origin();
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let t = (p[a] - o[a]) / h[a];
        let i = (t.floor().max(0.0) as usize).min(dims[a] - 2);
        base[a] = i;
        frac[a] = (t - i as f64).clamp(0.0, 1.0);
    }
    let mut out = Vec::with_capacity(8);
    for c in 0..8usize {
        let bits = [c >> 2 & 1, c >> 1 & 1, c & 1];
        let w: f64 = (0..3)
            .map(|a| if bits[a] == 1 { frac[a] } else { 1.0 - frac[a] })
            .product();
        if w > 0.0 {
            out.push((grid.index(base[0] + bits[0], base[1] + bits[1], base[2] + bits[2]), w));
        }
    }
    out
}

/// Solves `L_{a,b} u = delta_xi` on the grid of `pair` with Dirichlet data on the box.
///
/// `DiscreteDelta` uses zero boundary values. `SingularitySplit` writes
/// `u = G + r` with `G` the constant-coefficient kernel frozen at `xi`
/// (radius capped at half a cell), solves for `r` with `r = 0` on the box, so
/// that `u` carries the kernel's own boundary values.
pub fn greens_function(
    pair: &AdmissiblePair,
    xi: Point,
    regularization: Regularization,
    settings: &SolverSettings,
) -> Result<(ScalarField, SolveReport)> {
    let grid = *pair.grid();
    if !grid.contains(xi) || grid.distance_to_boundary(xi) <= grid.max_spacing() {
        return Err(Error::domain(format!(
            "source {xi:?} must lie at least one cell inside the grid box"
        )));
    }
    let stencil = pair.stencil();
    let n = grid.len();
    let zeros = vec![0.0; n];
    let inv_cell = 1.0 / grid.cell_volume();
    match regularization {
        Regularization::DiscreteDelta => {
            let ijk = grid.nearest_node(xi).expect("source inside grid");
            let mut rhs = vec![0.0; n];
            rhs[grid.index(ijk[0], ijk[1], ijk[2])] = inv_cell;
            let (u, report) = stencil.solve_dirichlet(&rhs, &zeros, settings)?;
            Ok((ScalarField::new(grid, u)?, report))
        }
        Regularization::SingularitySplit => {
            let mu = pair.a.interpolate(xi).expect("source inside grid");
            let nu = pair.b.interpolate(xi).expect("source inside grid");
            let fs = ConstCoeffFS::new(mu, nu, 3)?;
            let cap = 0.5 * grid.min_spacing();
            let mut singular = vec![0.0; n];
            par::fill(&mut singular, |idx| {
                let r = distance(grid.node_coords(idx), xi).max(cap);
                fs_eval(&fs, r).expect("positive radius")
            });
            let mut rhs = stencil.apply(&singular);
            rhs.iter_mut().for_each(|v| *v = -*v);
            for (idx, w) in trilinear_weights(&grid, xi) {
                rhs[idx] += w * inv_cell;
            }
            let (mut u, report) = stencil.solve_dirichlet(&rhs, &zeros, settings)?;
            par::axpy(1.0, &singular, &mut u);
            Ok((ScalarField::new(grid, u)?, report))
        }
    }
}

/// Log-linear fit of `u(x) |x - xi|` against `|x - xi|` over the nodes of an annulus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub samples: usize,
    /// Smallest `c >= 1` placing the slope in `[-2 sqrt(c kappa), -1/sqrt(c kappa)]`.
    pub c_fit: f64,
}

impl DecayFit {
    pub fn band(kappa: f64, c: f64) -> [f64; 2] {
        let s = (c * kappa).sqrt();
        [-2.0 * s, -1.0 / s]
    }

    pub fn within(&self, kappa: f64, c: f64) -> bool {
        let [lo, hi] = Self::band(kappa, c);
        self.slope >= lo && self.slope <= hi
    }
}

pub fn decay_slope(u: &ScalarField, xi: Point, r_min: f64, r_max: f64, kappa: f64) -> Result<DecayFit> {
    let grid = u.grid();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (idx, &v) in u.values().iter().enumerate() {
        let r = distance(grid.node_coords(idx), xi);
        if r >= r_min && r <= r_max && v > 0.0 {
            xs.push(r);
            ys.push((v * r).ln());
        }
    }
    let fit = fit_line(&xs, &ys)?;
    let s2 = fit.slope * fit.slope;
    let c_fit = 1f64.max(s2 / (4.0 * kappa)).max(1.0 / (kappa * s2));
    Ok(DecayFit {
        slope: fit.slope,
        intercept: fit.intercept,
        r2: fit.r2,
        samples: fit.points,
        c_fit,
    })
}

/// The conductivity operator `-div(sigma grad .)` with geometric face means.
pub fn conductivity_stencil(sigma: &ScalarField) -> Stencil {
    Stencil::new(sigma, None, FaceMean::Geometric).expect("single field")
}

/// Solves `-div(sigma grad rho) = rhs` on `region` with `rho = boundary_values`
/// on its faces. Inputs share one grid; the result lives on the region's sub-grid.
pub fn solve_conductivity_dirichlet(
    sigma: &ScalarField,
    rhs: &ScalarField,
    boundary_values: &ScalarField,
    region: &IndexBox,
    settings: &SolverSettings,
) -> Result<(ScalarField, SolveReport)> {
    sigma.same_grid(rhs)?;
    sigma.same_grid(boundary_values)?;
    let s = sigma.restrict(region)?;
    let min_idx = s.argmin();
    if !(s.values()[min_idx] > 0.0) {
        return Err(Error::domain(format!(
            "conductivity must be positive, found {} at {:?}",
            s.values()[min_idx],
            s.grid().node_coords(min_idx)
        )));
    }
    let f = rhs.restrict(region)?;
    let g = boundary_values.restrict(region)?;
    let (rho, report) = conductivity_stencil(&s).solve_dirichlet(f.values(), g.values(), settings)?;
    Ok((ScalarField::new(*s.grid(), rho)?, report))
}
