use serde::{Deserialize, Serialize};

use super::{dot, frequency_curve, monotonicity_mu, Probe, DIM};
use crate::error::{Error, Result};
use crate::mesh::{
    distance, holder_norm, Ball, HolderNorm, IndexBox, Point, Quadrature, ScalarField, DEFAULT_PAIR_BUDGET,
};
use crate::par;
use crate::regress::{fit_line, LineFit};

/// First non-zero Neumann eigenvalue of the Laplacian on the unit ball of R^3:
/// the square of the first positive zero of `j_1'`.
pub const MU2_UNIT_BALL: f64 = 4.332_958_551_429_382;

/// Absolute slack on the fitted vanishing order.
pub const ORDER_TOL: f64 = 0.1;

/// Relative slack on the Poincare-Wirtinger comparison.
pub const POINCARE_TOL: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoublingRow {
    pub r: f64,
    /// `||u||^2_{L^2(B(x, r))}`
    pub l2_sq: f64,
    /// `||grad u||^2_{L^2(B(x, r))}`
    pub grad_sq: f64,
    /// `||u - mean u||^2_{L^2(B(x, r))}`
    pub mean_removed_sq: f64,
    /// `mu_2 / r^2 * mean_removed_sq`, a lower bound for `grad_sq`.
    pub poincare_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoublingReport {
    pub x: Point,
    pub x0: Point,
    pub delta: f64,
    /// `|x - x0| / delta`
    pub relative_distance: f64,
    pub rows: Vec<DoublingRow>,
    /// Log-log slope of `||u||^2` against `r`.
    pub order_fit: Option<LineFit>,
    /// Log-log slope of `||grad u||^2` against `r`.
    pub gradient_fit: Option<LineFit>,
    pub frequency_at_delta: Option<f64>,
    pub mu: f64,
    /// `2 e^{mu delta} N(delta) + n`
    pub order_ceiling: Option<f64>,
    pub order_within_ceiling: bool,
    pub poincare_holds: bool,
    pub zero_norm: bool,
}

/// Inradius of the box spanned by a grid.
fn inradius(u: &ScalarField) -> f64 {
    let g = u.grid();
    let (lo, hi) = (g.origin(), g.upper());
    (0..3).map(|a| 0.5 * (hi[a] - lo[a])).fold(f64::INFINITY, f64::min)
}

pub fn doubling_lower_bound_check(
    u: &ScalarField,
    sigma: &ScalarField,
    x0: Point,
    x: Point,
    delta: f64,
    radii: &[f64],
    quad: &Quadrature,
) -> Result<DoublingReport> {
    if radii.len() < 2 || radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("need at least two increasing radii"));
    }
    if !(radii[0] > 0.0 && *radii.last().unwrap() < delta) {
        return Err(Error::domain(format!("radii must lie in (0, delta = {delta})")));
    }
    Ball::new(x, delta)?.require_inside(u.grid())?;
    let probe = Probe::new(u, Some(sigma))?;
    let rows: Vec<DoublingRow> = par::map_slice(radii, |&r| {
        let ball = Ball { center: x, radius: r };
        let [u2, g2, u1, vol] = quad.ball_many(&ball, |p, _| {
            let v = probe.value(p);
            let g = probe.grad(p);
            [v * v, dot(g, g), v, 1.0]
        });
        // Cancellation leaves rounding noise when u is constant on the ball.
        let spread = u2 - u1 * u1 / vol;
        let mean_removed_sq = if spread > 1e-12 * u2 { spread } else { 0.0 };
        DoublingRow {
            r,
            l2_sq: u2,
            grad_sq: g2,
            mean_removed_sq,
            poincare_bound: MU2_UNIT_BALL / (r * r) * mean_removed_sq,
        }
    });
    let zero_norm = rows.iter().any(|r| r.l2_sq <= 0.0);
    let log_r: Vec<f64> = rows.iter().map(|r| r.r.ln()).collect();
    let fit = |vals: Vec<f64>| -> Option<LineFit> {
        if vals.iter().all(|&v| v > 0.0) {
            fit_line(&log_r, &vals.iter().map(|v| v.ln()).collect::<Vec<_>>()).ok()
        } else {
            None
        }
    };
    let order_fit = fit(rows.iter().map(|r| r.l2_sq).collect());
    let gradient_fit = fit(rows.iter().map(|r| r.grad_sq).collect());

    let curve = frequency_curve(u, sigma, x, &[delta], quad)?;
    let frequency_at_delta = curve.samples[0].n;
    let mu = monotonicity_mu(curve.kappa, inradius(u));
    let order_ceiling = frequency_at_delta.map(|n| 2.0 * (mu * delta).exp() * n + DIM as f64);
    let order_within_ceiling = match (order_fit, order_ceiling) {
        (Some(f), Some(c)) => f.slope <= c + ORDER_TOL,
        _ => false,
    };
    let poincare_holds = rows
        .iter()
        .all(|r| r.grad_sq >= r.poincare_bound * (1.0 - POINCARE_TOL));
    Ok(DoublingReport {
        x,
        x0,
        delta,
        relative_distance: distance(x, x0) / delta,
        rows,
        order_fit,
        gradient_fit,
        frequency_at_delta,
        mu,
        order_ceiling,
        order_within_ceiling,
        poincare_holds,
        zero_norm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterTightness {
    pub center: Point,
    /// Radius with the smallest slack.
    pub r: f64,
    /// `rhs - lhs` at that radius.
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedReport {
    pub alpha: f64,
    pub holder: HolderNorm,
    pub samples: usize,
    pub violations: usize,
    pub skipped_zero_gradient: usize,
    pub skipped_outside: usize,
    pub min_slack: f64,
    pub tightest: Vec<CenterTightness>,
    pub passed: bool,
}

/// Most centres per axis sampled from `omega`.
const CENTERS_PER_AXIS: usize = 9;

/// Checks `|f(x)| <= int_B |f| |grad u|^2 / int_B |grad u|^2 + r^alpha` for `f`
/// scaled to unit `C^{0,alpha}` norm over its grid, at centres drawn from `omega`.
pub fn weighted_interpolation_check(
    f: &ScalarField,
    u: &ScalarField,
    omega: &IndexBox,
    alpha: f64,
    radii: &[f64],
    quad: &Quadrature,
) -> Result<WeightedReport> {
    f.same_grid(u)?;
    omega.check_within(f.grid())?;
    if radii.is_empty() || radii.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::domain("radii must be positive"));
    }
    let grid = *f.grid();
    let holder = holder_norm(f, alpha, &grid.full_box(), DEFAULT_PAIR_BUDGET, 0)?;
    let fnorm = if holder.total > 0.0 {
        f.map(|v| v / holder.total)
    } else {
        f.clone()
    };
    let probe = Probe::new(u, None)?;
    let dims = omega.dims();
    let stride = dims.map(|d| d.div_ceil(CENTERS_PER_AXIS).max(1));
    let centers: Vec<[usize; 3]> = omega
        .nodes()
        .filter(|ijk| (0..3).all(|a| (ijk[a] - omega.lo[a]).is_multiple_of(stride[a])))
        .collect();

    // Per centre: (tightest radius, slack, samples, violations, zero-gradient skips, outside skips).
    let per_center = par::map_slice(&centers, |&ijk| {
        let x = grid.coords(ijk);
        let lhs = fnorm.at(ijk).abs();
        let mut best: Option<(f64, f64)> = None;
        let (mut samples, mut violations, mut zero, mut outside) = (0, 0, 0, 0);
        for &r in radii {
            let ball = Ball { center: x, radius: r };
            if !ball.inside(&grid) {
                outside += 1;
                continue;
            }
            let [weighted, mass] = quad.ball_many(&ball, |p, _| {
                let g = probe.grad(p);
                let g2 = dot(g, g);
                [fnorm.interpolate(p).unwrap_or(0.0).abs() * g2, g2]
            });
            if !(mass > 0.0) {
                zero += 1;
                continue;
            }
            let slack = weighted / mass + r.powf(alpha) - lhs;
            samples += 1;
            if slack < 0.0 {
                violations += 1;
            }
            if best.is_none_or(|(_, s)| slack < s) {
                best = Some((r, slack));
            }
        }
        (x, best, samples, violations, zero, outside)
    });

    let mut report = WeightedReport {
        alpha,
        holder,
        samples: 0,
        violations: 0,
        skipped_zero_gradient: 0,
        skipped_outside: 0,
        min_slack: f64::INFINITY,
        tightest: Vec::new(),
        passed: false,
    };
    for (center, best, s, v, z, o) in per_center {
        report.samples += s;
        report.violations += v;
        report.skipped_zero_gradient += z;
        report.skipped_outside += o;
        if let Some((r, slack)) = best {
            report.min_slack = report.min_slack.min(slack);
            report.tightest.push(CenterTightness { center, r, slack });
        }
    }
    report.passed = report.samples > 0 && report.violations == 0;
    Ok(report)
}
