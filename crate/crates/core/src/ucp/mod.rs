//! Unique-continuation diagnostics for conductivity solutions
//! `div(sigma grad u) = 0`: frequency function, three-ball and chain-of-balls
//! propagation, doubling lower bounds and the near-source gradient bound.

mod balls;
mod doubling;
mod frequency;
mod nearsource;

pub use balls::{chain_of_balls, lower_bound_eval, three_ball_check, BallChain, ThreeBallReport};
pub use doubling::{
    doubling_lower_bound_check, weighted_interpolation_check, CenterTightness, DoublingReport, WeightedReport,
    MU2_UNIT_BALL,
};
pub use frequency::{
    check_frequency_identities, check_frequency_monotonicity, frequency_curve, monotonicity_mu, FrequencyCurve,
    FrequencySample, IdentityReport, IdentityRow, MonotonicityReport,
};
pub use nearsource::{near_source_gradient_check, NearSourceReport, NearSourceSettings};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::elliptic::{solve_conductivity_dirichlet, SolveReport, SolverSettings};
use crate::error::{Error, Result};
use crate::mesh::{gradient, Grid, Point, ScalarField, VectorField};

/// Spatial dimension of every grid in the crate.
pub const DIM: usize = 3;

/// Ratio between consecutive radii of the default ladder.
pub const LADDER_RATIO: f64 = 1.08;

/// `count` radii `r0, r0 q, r0 q^2, ...`.
pub fn geometric_ladder(r0: f64, ratio: f64, count: usize) -> Result<Vec<f64>> {
    if !(r0 > 0.0 && ratio > 1.0 && r0.is_finite() && ratio.is_finite()) {
        return Err(Error::domain(format!(
            "ladder needs r0 > 0 and ratio > 1, got {r0}, {ratio}"
        )));
    }
    Ok((0..count).map(|i| r0 * ratio.powi(i as i32)).collect())
}

/// Smallest `kappa > 1` with `1/kappa <= sigma` and `sup sigma + Lip sigma <= kappa`,
/// the Lipschitz constant taken from the nodal gradient.
pub fn conductivity_bound(sigma: &ScalarField) -> f64 {
    let lip = gradient(sigma).norm_squared().max().sqrt();
    (1.0 / sigma.min()).max(sigma.max() + lip).max(1.0)
}

/// Trilinear evaluation of a field, its gradient and a conductivity.
pub(crate) struct Probe<'a> {
    u: &'a ScalarField,
    grad_u: VectorField,
    sigma: Option<(&'a ScalarField, VectorField)>,
}

impl<'a> Probe<'a> {
    pub(crate) fn new(u: &'a ScalarField, sigma: Option<&'a ScalarField>) -> Result<Self> {
        if let Some(s) = sigma {
            u.same_grid(s)?;
        }
        Ok(Self {
            u,
            grad_u: gradient(u),
            sigma: sigma.map(|s| (s, gradient(s))),
        })
    }

    // Callers check that whole balls lie in the grid, so misses only come
    // from rounding at the faces.
    pub(crate) fn value(&self, p: Point) -> f64 {
        self.u.interpolate_corrected(&self.grad_u, p).unwrap_or(0.0)
    }

    pub(crate) fn grad(&self, p: Point) -> [f64; 3] {
        self.grad_u.interpolate(p).unwrap_or([0.0; 3])
    }

    pub(crate) fn sigma(&self, p: Point) -> f64 {
        match &self.sigma {
            Some((s, _)) => s.interpolate(p).unwrap_or(1.0),
            None => 1.0,
        }
    }

    pub(crate) fn grad_sigma(&self, p: Point) -> [f64; 3] {
        match &self.sigma {
            Some((_, g)) => g.interpolate(p).unwrap_or([0.0; 3]),
            None => [0.0; 3],
        }
    }
}

#[inline]
pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// A conductivity and a solution of `div(sigma grad u) = 0` on a box.
#[derive(Debug, Clone)]
pub struct SigmaSolution {
    pub sigma: ScalarField,
    pub u: ScalarField,
    pub kappa: f64,
    pub report: SolveReport,
    pub seed: u64,
}

/// Random smooth setup used by the inequality suites.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomSolutionSpec {
    /// Number of plane-wave modes in `sigma - 1`.
    pub modes: usize,
    /// Bound on the summed mode amplitudes; keeps `sigma` in `[1 - a, 1 + a]`.
    pub amplitude: f64,
    /// Largest wavenumber of a mode.
    pub max_wavenumber: f64,
}

impl Default for RandomSolutionSpec {
    fn default() -> Self {
        Self {
            modes: 3,
            amplitude: 0.35,
            max_wavenumber: 1.5,
        }
    }
}

/// Draws a smooth conductivity and solves the conductivity equation with
/// boundary values of a random affine plus trace-free quadratic function.
pub fn random_sigma_solution(
    grid: Grid,
    seed: u64,
    spec: &RandomSolutionSpec,
    settings: &SolverSettings,
) -> Result<SigmaSolution> {
    if !(spec.amplitude >= 0.0 && spec.amplitude < 1.0) {
        return Err(Error::domain(format!(
            "amplitude must lie in [0, 1), got {}",
            spec.amplitude
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights: Vec<f64> = (0..spec.modes).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = weights.iter().sum();
    weights
        .iter_mut()
        .for_each(|w| *w *= spec.amplitude / total.max(f64::MIN_POSITIVE));
    let modes: Vec<([f64; 3], f64, f64)> = weights
        .iter()
        .map(|&w| {
            let k = [0; 3].map(|_| rng.gen_range(-spec.max_wavenumber..spec.max_wavenumber));
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            (k, rng.gen_range(0.0..std::f64::consts::TAU), sign * w)
        })
        .collect();
    let sigma = ScalarField::from_fn(grid, |p| {
        1.0 + modes
            .iter()
            .map(|(k, phase, w)| w * (dot(*k, p) + phase).sin())
            .sum::<f64>()
    });

    let c0: f64 = rng.gen_range(-1.0..1.0);
    let c: [f64; 3] = [0; 3].map(|_| rng.gen_range(-1.0..1.0));
    let mut q = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in i..3 {
            let v = rng.gen_range(-0.5..0.5);
            q[i][j] = v;
            q[j][i] = v;
        }
    }
    let trace = (q[0][0] + q[1][1] + q[2][2]) / 3.0;
    (0..3).for_each(|i| q[i][i] -= trace);
    let boundary = ScalarField::from_fn(grid, |p| {
        let mut v = c0 + dot(c, p);
        for i in 0..3 {
            for j in 0..3 {
                v += q[i][j] * p[i] * p[j];
            }
        }
        v
    });
    let zero = ScalarField::constant(grid, 0.0);
    let (u, report) = solve_conductivity_dirichlet(&sigma, &zero, &boundary, &grid.full_box(), settings)?;
    Ok(SigmaSolution {
        kappa: conductivity_bound(&sigma),
        sigma,
        u,
        report,
        seed,
    })
}
