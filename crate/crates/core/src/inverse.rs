//! Internal data `v_j = b u_j` and the reconstruction chain
//! `w = v2/v1`, then `sigma = a u1^2`, then `rho = 1/u1`, then `(a, b)`.

use serde::{Deserialize, Serialize};

use crate::elliptic::{
    conductivity_stencil, greens_function, pcg, solve_conductivity_dirichlet, AdmissiblePair, SolveReport,
    SolverSettings, SourceConfig,
};
use crate::error::{Error, Result};
use crate::mesh::{Grid, IndexBox, Point, ScalarField};
use crate::par;

/// Measurements restricted to the region `omega` of the computational grid.
#[derive(Debug, Clone)]
pub struct InternalData {
    pub v1: ScalarField,
    pub v2: ScalarField,
    pub xi1: Point,
    pub xi2: Point,
    pub omega: IndexBox,
    pub noise_meta: String,
}

impl InternalData {
    pub fn grid(&self) -> &Grid {
        self.v1.grid()
    }

    /// Same data with both maps multiplied node-wise by `phi`.
    pub fn scaled(&self, phi: &ScalarField) -> Result<Self> {
        Ok(Self {
            v1: self.v1.zip_map(phi, |v, p| v * p)?,
            v2: self.v2.zip_map(phi, |v, p| v * p)?,
            noise_meta: format!("{}; scaled by a positive field", self.noise_meta),
            ..self.clone()
        })
    }
}

/// Both Green's functions on the full grid together with the data they induce.
#[derive(Debug, Clone)]
pub struct Forward {
    pub u1: ScalarField,
    pub u2: ScalarField,
    pub data: InternalData,
    pub reports: [SolveReport; 2],
}

pub fn forward(
    pair: &AdmissiblePair,
    sources: &SourceConfig,
    omega: &IndexBox,
    settings: &SolverSettings,
) -> Result<Forward> {
    let grid = *pair.grid();
    omega.check_within(&grid)?;
    sources.validate(&grid, omega.bounds(&grid))?;
    let solve =
        |xi: Point, tag: &str| greens_function(pair, xi, sources.regularization, settings).map_err(|e| e.at_stage(tag));
    let (u1, r1) = solve(sources.xi1, "green function 1")?;
    let (u2, r2) = solve(sources.xi2, "green function 2")?;
    let v1 = pair.b().zip_map(&u1, |b, u| b * u)?.restrict(omega)?;
    let v2 = pair.b().zip_map(&u2, |b, u| b * u)?.restrict(omega)?;
    let min_idx = v1.argmin();
    if !(v1.values()[min_idx] > 0.0) {
        return Err(Error::DegenerateData(format!(
            "v1 = {:e} at {:?} is not positive",
            v1.values()[min_idx],
            v1.grid().node_coords(min_idx)
        )));
    }
    Ok(Forward {
        u1,
        u2,
        data: InternalData {
            v1,
            v2,
            xi1: sources.xi1,
            xi2: sources.xi2,
            omega: *omega,
            noise_meta: "clean".into(),
        },
        reports: [r1, r2],
    })
}

pub fn generate_data(
    pair: &AdmissiblePair,
    sources: &SourceConfig,
    omega: &IndexBox,
    settings: &SolverSettings,
) -> Result<InternalData> {
    forward(pair, sources, omega, settings).map(|f| f.data)
}

pub const DEFAULT_V1_FLOOR: f64 = 1e-12;

/// `w = v2 / v1` node-wise.
pub fn quotient_field(data: &InternalData, floor: f64) -> Result<ScalarField> {
    data.v1.same_grid(&data.v2)?;
    let min_idx = data.v1.argmin();
    let min = data.v1.values()[min_idx];
    if !(min >= floor) {
        return Err(Error::DegenerateData(format!(
            "min v1 = {min:e} at {:?} is below the floor {floor:e}",
            data.v1.grid().node_coords(min_idx)
        )));
    }
    data.v2.zip_map(&data.v1, |a, b| a / b)
}

#[derive(Debug, Clone)]
pub struct SigmaRecovery {
    pub sigma: ScalarField,
    /// The quotient carries no information; `sigma` is the smoothing extension of its boundary values.
    pub degenerate: bool,
    pub lambda_eff: f64,
    pub report: SolveReport,
}

/// Interior-node numbering of a grid.
struct Interior {
    grid: Grid,
    /// grid index -> unknown index, `usize::MAX` on the boundary.
    map: Vec<usize>,
    nodes: Vec<usize>,
}

impl Interior {
    fn new(grid: Grid) -> Self {
        let mut map = vec![usize::MAX; grid.len()];
        let mut nodes = Vec::new();
        for idx in 0..grid.len() {
            if !grid.is_boundary_node(grid.ijk(idx)) {
                map[idx] = nodes.len();
                nodes.push(idx);
            }
        }
        Self { grid, map, nodes }
    }

    /// Calls `f(neighbour grid index, 1/h^2)` for the six neighbours of an interior node.
    #[inline]
    fn neighbours(&self, idx: usize, mut f: impl FnMut(usize, f64)) {
        let s = self.grid.strides();
        let h = self.grid.spacing();
        for a in 0..3 {
            let c = 1.0 / (h[a] * h[a]);
            f(idx - s[a], c);
            f(idx + s[a], c);
        }
    }
}

/// Smoothness term added to the least-squares recovery of `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    /// `||grad tau||^2`
    Gradient,
    /// `||Laplace tau||^2`
    Curvature,
    /// `||Laplace^2 tau||^2`
    #[default]
    Biharmonic,
}

impl Penalty {
    /// Power of the Dirichlet Laplacian in the normal equations.
    fn power(self) -> u32 {
        match self {
            Penalty::Gradient => 1,
            Penalty::Curvature => 2,
            Penalty::Biharmonic => 4,
        }
    }
}

/// Solves `div(sigma grad w) = 0` for `sigma` given its boundary values.
///
/// With `sigma = tau^2` and geometric face means the discrete equation at an
/// interior node reduces to `sum_nb (w_nb - w_i) tau_nb / h^2 = 0`, linear in
/// `tau`. The system `A tau = f` is solved in the least-squares sense with the
/// penalty `reg_lambda_rel * s * ||P tau||^2`, where `s` balances the mean
/// squared row norms of `A` and `P`.
///
/// The centred rows never involve `tau_i` itself. With an odd number of
/// interior nodes along a streamline this leaves near-null modes supported
/// on alternating lattice planes, which only the penalty determines. The
/// gradient penalty biases them by about `h^2 Laplace(tau) / (2 tau)`;
/// higher powers of the Laplacian bias them less.
pub fn recover_sigma(
    w: &ScalarField,
    sigma_boundary: &ScalarField,
    reg_lambda_rel: f64,
    penalty: Penalty,
    settings: &SolverSettings,
) -> Result<SigmaRecovery> {
    w.same_grid(sigma_boundary)?;
    let grid = *w.grid();
    let int = Interior::new(grid);
    let m = int.nodes.len();
    if m == 0 {
        return Err(Error::domain("measurement region has no interior nodes"));
    }
    let wv = w.values();
    let mut tau_b = vec![0.0; grid.len()];
    for idx in 0..grid.len() {
        if int.map[idx] == usize::MAX {
            let s = sigma_boundary.values()[idx];
            if !(s > 0.0) {
                return Err(Error::domain(format!(
                    "boundary conductivity {s} at {:?} is not positive",
                    grid.node_coords(idx)
                )));
            }
            tau_b[idx] = s.sqrt();
        }
    }

    // Boundary contributions moved to the right-hand side, and row norms.
    let mut f_a = vec![0.0; m];
    let mut f_l = vec![0.0; m];
    let mut row_sq = vec![0.0; m];
    for (row, &idx) in int.nodes.iter().enumerate() {
        int.neighbours(idx, |nb, c| {
            let coef = c * (wv[nb] - wv[idx]);
            row_sq[row] += coef * coef;
            if int.map[nb] == usize::MAX {
                f_a[row] -= coef * tau_b[nb];
                f_l[row] += c * tau_b[nb];
            }
        });
    }
    let a_scale = row_sq.iter().sum::<f64>() / m as f64;
    let h = grid.spacing();
    let inv_h2: Vec<f64> = (0..3).map(|a| 1.0 / (h[a] * h[a])).collect();
    let lap_scale = inv_h2.iter().sum::<f64>() / 3.0;
    let centre = 2.0 * inv_h2.iter().sum::<f64>();
    let p_scale = centre.powi(penalty.power() as i32);
    let w_scale = wv.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let degenerate = a_scale.sqrt() <= 1e-13 * w_scale * lap_scale;
    let (lambda_eff, a_weight) = if degenerate {
        (1.0, 0.0)
    } else {
        (reg_lambda_rel * a_scale / p_scale, 1.0)
    };

    let apply_a = |x: &[f64], out: &mut [f64]| {
        par::fill(out, |row| {
            let idx = int.nodes[row];
            let mut acc = 0.0;
            int.neighbours(idx, |nb, c| {
                let j = int.map[nb];
                if j != usize::MAX {
                    acc += c * (wv[nb] - wv[idx]) * x[j];
                }
            });
            acc
        })
    };
    // (A^T y)_j = sum over interior neighbours i of j of c (w_j - w_i) y_i.
    let apply_at = |y: &[f64], out: &mut [f64]| {
        par::fill(out, |col| {
            let idx = int.nodes[col];
            let mut acc = 0.0;
            int.neighbours(idx, |nb, c| {
                let i = int.map[nb];
                if i != usize::MAX {
                    acc += c * (wv[idx] - wv[nb]) * y[i];
                }
            });
            acc
        })
    };
    // Negative Laplacian on interior unknowns with zero boundary values.
    let apply_lap = |x: &[f64], out: &mut [f64]| {
        par::fill(out, |row| {
            let idx = int.nodes[row];
            let mut acc = 0.0;
            int.neighbours(idx, |nb, c| {
                let j = int.map[nb];
                acc += c * (x[row] - if j == usize::MAX { 0.0 } else { x[j] });
            });
            acc
        })
    };

    let mut rhs = vec![0.0; m];
    apply_at(&f_a, &mut rhs);
    let mut f_p = f_l;
    for _ in 1..penalty.power() {
        let mut t = vec![0.0; m];
        apply_lap(&f_p, &mut t);
        f_p = t;
    }
    for (r, f) in rhs.iter_mut().zip(&f_p) {
        *r = a_weight * *r + lambda_eff * f;
    }

    // Jacobi diagonal of the normal operator.
    let mut diag = vec![0.0; m];
    for (row, &idx) in int.nodes.iter().enumerate() {
        let mut centre = 0.0;
        let mut off_sq = 0.0;
        int.neighbours(idx, |nb, c| {
            centre += c;
            if int.map[nb] != usize::MAX {
                let coef = c * (wv[idx] - wv[nb]);
                diag[row] += a_weight * coef * coef;
                off_sq += c * c;
            }
        });
        diag[row] += lambda_eff
            * match penalty.power() {
                1 => centre,
                2 => centre * centre + off_sq,
                k => (centre * centre + off_sq).powi(k as i32 / 2),
            };
    }

    let tmp = std::cell::RefCell::new(vec![0.0; m]);
    let tmp2 = std::cell::RefCell::new(vec![0.0; m]);
    let tmp3 = std::cell::RefCell::new(vec![0.0; m]);
    let combined = |x: &[f64], out: &mut [f64]| {
        let mut t = tmp.borrow_mut();
        let mut t2 = tmp2.borrow_mut();
        apply_a(x, &mut t);
        apply_at(&t, &mut t2);
        let mut t3 = tmp3.borrow_mut();
        t3.copy_from_slice(x);
        for _ in 0..penalty.power() {
            apply_lap(&t3, out);
            t3.copy_from_slice(out);
        }
        for (o, v) in out.iter_mut().zip(t2.iter()) {
            *o = a_weight * v + lambda_eff * *o;
        }
    };
    let (tau, report) = pcg(combined, &diag, &rhs, settings)?;

    let mut sigma = vec![0.0; grid.len()];
    let mut min_tau = f64::INFINITY;
    let mut min_at = 0;
    for idx in 0..grid.len() {
        let t = match int.map[idx] {
            usize::MAX => tau_b[idx],
            j => tau[j],
        };
        if t < min_tau {
            min_tau = t;
            min_at = idx;
        }
        sigma[idx] = t * t;
    }
    if !(min_tau > 0.0) {
        return Err(Error::Degeneracy {
            message: "recovered conductivity is not positive".into(),
            min_value: min_tau * min_tau.abs(),
            location: grid.node_coords(min_at),
        });
    }
    Ok(SigmaRecovery {
        sigma: ScalarField::new(grid, sigma)?,
        degenerate,
        lambda_eff,
        report,
    })
}

/// Coefficient values on the region, of which only boundary nodes are read.
#[derive(Debug, Clone)]
pub struct Traces {
    pub a: ScalarField,
    pub b: ScalarField,
}

impl Traces {
    pub fn from_pair(pair: &AdmissiblePair, omega: &IndexBox) -> Result<Self> {
        Ok(Self {
            a: pair.a().restrict(omega)?,
            b: pair.b().restrict(omega)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconSettings {
    pub reg_lambda_rel: f64,
    pub penalty: Penalty,
    pub v1_floor: f64,
    pub solver: SolverSettings,
}

impl Default for ReconSettings {
    fn default() -> Self {
        Self {
            reg_lambda_rel: 1e-6,
            penalty: Penalty::default(),
            v1_floor: DEFAULT_V1_FLOOR,
            solver: SolverSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `max |div(sigma_hat grad w)|` over interior nodes.
    pub conductivity: f64,
    /// `max |-div(sigma_hat grad rho_hat) - v1|` over interior nodes.
    pub elliptic: f64,
}

#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    pub w: ScalarField,
    pub sigma_hat: ScalarField,
    pub rho_hat: ScalarField,
    pub a_hat: ScalarField,
    pub b_hat: ScalarField,
    pub residuals: Residuals,
    pub degenerate: bool,
    pub reports: [SolveReport; 2],
}

fn interior_max_abs(grid: &Grid, values: &[f64]) -> f64 {
    par::max(values.len(), |i| {
        if grid.is_boundary_node(grid.ijk(i)) {
            0.0
        } else {
            values[i].abs()
        }
    })
    .max(0.0)
}

pub fn reconstruct(data: &InternalData, traces: &Traces, settings: &ReconSettings) -> Result<ReconstructionResult> {
    let grid = *data.grid();
    traces.a.same_grid(&data.v1).map_err(|e| e.at_stage("traces"))?;
    traces.b.same_grid(&data.v1).map_err(|e| e.at_stage("traces"))?;
    let w = quotient_field(data, settings.v1_floor).map_err(|e| e.at_stage("quotient"))?;
    let v1 = data.v1.values();
    let (ta, tb) = (traces.a.values(), traces.b.values());
    if ta.iter().chain(tb).any(|&t| !(t > 0.0)) {
        return Err(Error::domain("coefficient traces must be positive").at_stage("traces"));
    }
    let sigma_b = ScalarField::new(
        grid,
        (0..grid.len())
            .map(|i| ta[i] * v1[i] * v1[i] / (tb[i] * tb[i]))
            .collect(),
    )?;
    let rec = recover_sigma(
        &w,
        &sigma_b,
        settings.reg_lambda_rel,
        settings.penalty,
        &settings.solver,
    )
    .map_err(|e| e.at_stage("sigma"))?;
    let sigma_hat = rec.sigma;
    let rho_b = ScalarField::new(grid, (0..grid.len()).map(|i| tb[i] / v1[i]).collect())?;
    let (rho_hat, rho_report) =
        solve_conductivity_dirichlet(&sigma_hat, &data.v1, &rho_b, &grid.full_box(), &settings.solver)
            .map_err(|e| e.at_stage("rho"))?;
    let a_hat = sigma_hat.zip_map(&rho_hat, |s, r| s * r * r)?;
    let b_hat = data.v1.zip_map(&rho_hat, |v, r| v * r)?;

    let stencil = conductivity_stencil(&sigma_hat);
    let conductivity = interior_max_abs(&grid, &stencil.apply(w.values()));
    let mut e = stencil.apply(rho_hat.values());
    for (x, v) in e.iter_mut().zip(v1) {
        *x -= v;
    }
    let elliptic = interior_max_abs(&grid, &e);
    Ok(ReconstructionResult {
        w,
        sigma_hat,
        rho_hat,
        a_hat,
        b_hat,
        residuals: Residuals { conductivity, elliptic },
        degenerate: rec.degenerate,
        reports: [rec.report, rho_report],
    })
}
