use serde::{Deserialize, Serialize};

use super::{conductivity_bound, dot, Probe, DIM};
use crate::error::{Error, Result};
use crate::mesh::{Ball, Point, Quadrature, ScalarField};
use crate::par;

/// Tolerated relative drop of `e^{mu r} N(r)` between consecutive radii.
pub const MONOTONE_STEP_TOL: f64 = 0.02;

/// Surface and volume integrals at one radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencySample {
    pub r: f64,
    /// `int_{dB} sigma u^2`
    pub h: f64,
    /// `int_B sigma |grad u|^2`
    pub d: f64,
    /// `int_{dB} sigma u d_nu u`; equals `d` for exact solutions.
    pub d_flux: f64,
    /// `int_B sigma u^2`
    pub k: f64,
    /// `int_{dB} sigma (d_nu u)^2`
    pub h_hat: f64,
    /// `int_{dB} u^2 grad sigma . nu`
    pub h_tilde: f64,
    /// `int_B |grad u|^2 grad sigma . (x - x0)`
    pub d_tilde: f64,
    /// `r D / H`, absent where `H = 0`.
    pub n: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyCurve {
    pub center: Point,
    /// Conductivity bound of the field's grid, see [`conductivity_bound`].
    pub kappa: f64,
    /// Distance from the centre to the grid boundary.
    pub delta: f64,
    pub samples: Vec<FrequencySample>,
}

impl FrequencyCurve {
    pub fn radii(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.r).collect()
    }

    pub fn frequencies(&self) -> Vec<Option<f64>> {
        self.samples.iter().map(|s| s.n).collect()
    }
}

pub fn frequency_curve(
    u: &ScalarField,
    sigma: &ScalarField,
    x0: Point,
    radii: &[f64],
    quad: &Quadrature,
) -> Result<FrequencyCurve> {
    if radii.is_empty() || radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("radii must be a non-empty increasing list"));
    }
    if !(sigma.min() > 0.0) {
        return Err(Error::domain(format!(
            "conductivity must be positive, min is {}",
            sigma.min()
        )));
    }
    let balls = radii.iter().map(|&r| Ball::new(x0, r)).collect::<Result<Vec<_>>>()?;
    for b in &balls {
        b.require_inside(u.grid())?;
    }
    let probe = Probe::new(u, Some(sigma))?;
    let samples = par::map_slice(&balls, |ball| sample(&probe, ball, quad));
    Ok(FrequencyCurve {
        center: x0,
        kappa: conductivity_bound(sigma),
        delta: u.grid().distance_to_boundary(x0),
        samples,
    })
}

fn sample(probe: &Probe, ball: &Ball, quad: &Quadrature) -> FrequencySample {
    let [h, h_hat, h_tilde, d_flux] = quad.sphere_many(ball, |p, nu| {
        let (u, g, s) = (probe.value(p), probe.grad(p), probe.sigma(p));
        let dn = dot(g, nu);
        [s * u * u, s * dn * dn, u * u * dot(probe.grad_sigma(p), nu), s * u * dn]
    });
    let [d, k, d_tilde] = quad.ball_many(ball, |p, off| {
        let (u, g, s) = (probe.value(p), probe.grad(p), probe.sigma(p));
        let g2 = dot(g, g);
        [s * g2, s * u * u, g2 * dot(probe.grad_sigma(p), off)]
    });
    let r = ball.radius;
    FrequencySample {
        r,
        h,
        d,
        d_flux,
        k,
        h_hat,
        h_tilde,
        d_tilde,
        n: (h > 0.0).then(|| r * d / h),
    }
}

/// `d f / d r` at interior ladder points. Positive sequences are differenced in
/// `(log r, log f)`, which is exact for powers of `r` on a geometric ladder.
fn radial_derivative(r: &[f64], f: &[f64]) -> Vec<f64> {
    (1..r.len() - 1)
        .map(|i| {
            if f[i - 1] > 0.0 && f[i] > 0.0 && f[i + 1] > 0.0 {
                let slope = (f[i + 1].ln() - f[i - 1].ln()) / (r[i + 1].ln() - r[i - 1].ln());
                f[i] / r[i] * slope
            } else {
                (f[i + 1] - f[i - 1]) / (r[i + 1] - r[i - 1])
            }
        })
        .collect()
}

fn defect(lhs: f64, rhs: f64) -> f64 {
    let scale = lhs.abs().max(rhs.abs());
    if scale == 0.0 {
        0.0
    } else {
        (lhs - rhs).abs() / scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityRow {
    pub r: f64,
    pub dh: f64,
    pub a1_rhs: f64,
    pub a1_defect: f64,
    pub dd: f64,
    /// `(n-2)/r D + D~/r + 2 H^`
    pub a2_rhs: f64,
    pub a2_defect: f64,
    /// `(n-2)/r D + D~ + 2 H^`, kept as a diagnostic.
    pub a2_statement_rhs: f64,
    pub a2_statement_defect: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KBoundRow {
    pub r: f64,
    pub k: f64,
    /// `delta^n e^{delta kappa^2} / n * H(r)`
    pub stated: f64,
    /// `r e^{r kappa^2} H(r)`, what integrating `e^{t kappa^2} H(t)` gives.
    pub integrated: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub rows: Vec<IdentityRow>,
    pub max_a1_defect: f64,
    pub max_a2_defect: f64,
    pub max_a2_statement_defect: f64,
    /// `(H H^ - D_flux^2) / (H H^)` per radius.
    pub cs_slack: Vec<f64>,
    pub min_cs_slack: f64,
    /// Same slack with the volume Dirichlet integral in place of the flux.
    pub min_cs_volume_slack: f64,
    pub k_bound: Vec<KBoundRow>,
    pub k_bound_stated_holds: bool,
    pub k_bound_integrated_holds: bool,
}

pub fn check_frequency_identities(curve: &FrequencyCurve) -> Result<IdentityReport> {
    let s = &curve.samples;
    if s.len() < 5 {
        return Err(Error::domain(format!(
            "identity check needs at least 5 radii, got {}",
            s.len()
        )));
    }
    let n = DIM as f64;
    let r: Vec<f64> = s.iter().map(|x| x.r).collect();
    let dh = radial_derivative(&r, &s.iter().map(|x| x.h).collect::<Vec<_>>());
    let dd = radial_derivative(&r, &s.iter().map(|x| x.d).collect::<Vec<_>>());
    let rows: Vec<IdentityRow> = (1..s.len() - 1)
        .map(|i| {
            let x = &s[i];
            let a1_rhs = (n - 1.0) / x.r * x.h + x.h_tilde + 2.0 * x.d;
            let a2_rhs = (n - 2.0) / x.r * x.d + x.d_tilde / x.r + 2.0 * x.h_hat;
            let a2_statement_rhs = (n - 2.0) / x.r * x.d + x.d_tilde + 2.0 * x.h_hat;
            let (dh, dd) = (dh[i - 1], dd[i - 1]);
            IdentityRow {
                r: x.r,
                dh,
                a1_rhs,
                a1_defect: defect(dh, a1_rhs),
                dd,
                a2_rhs,
                a2_defect: defect(dd, a2_rhs),
                a2_statement_rhs,
                a2_statement_defect: defect(dd, a2_statement_rhs),
            }
        })
        .collect();
    let slack = |d: f64, x: &super::FrequencySample| {
        let hh = x.h * x.h_hat;
        if hh > 0.0 {
            (hh - d * d) / hh
        } else if d == 0.0 {
            0.0
        } else {
            -1.0
        }
    };
    let cs_slack: Vec<f64> = s.iter().map(|x| slack(x.d_flux, x)).collect();
    let min_cs_volume_slack = s.iter().map(|x| slack(x.d, x)).fold(f64::INFINITY, f64::min);

    let (delta, k2) = (curve.delta, curve.kappa * curve.kappa);
    let k_bound: Vec<KBoundRow> = s
        .iter()
        .filter(|x| x.r < delta)
        .map(|x| KBoundRow {
            r: x.r,
            k: x.k,
            stated: delta.powf(n) * (delta * k2).exp() / n * x.h,
            integrated: x.r * (x.r * k2).exp() * x.h,
        })
        .collect();
    let max = |f: fn(&IdentityRow) -> f64| rows.iter().map(f).fold(0.0f64, f64::max);
    Ok(IdentityReport {
        max_a1_defect: max(|r| r.a1_defect),
        max_a2_defect: max(|r| r.a2_defect),
        max_a2_statement_defect: max(|r| r.a2_statement_defect),
        min_cs_slack: cs_slack.iter().copied().fold(f64::INFINITY, f64::min),
        cs_slack,
        min_cs_volume_slack,
        k_bound_stated_holds: k_bound.iter().all(|b| b.k <= b.stated),
        k_bound_integrated_holds: k_bound.iter().all(|b| b.k <= b.integrated),
        k_bound,
        rows,
    })
}

/// `mu = kappa^2 (1 + chi)` with `chi` the inradius of the region.
pub fn monotonicity_mu(kappa: f64, inradius: f64) -> f64 {
    kappa * kappa * (1.0 + inradius)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonotoneStep {
    pub r0: f64,
    pub r1: f64,
    /// `e^{mu r1} N(r1) / (e^{mu r0} N(r0))`; 1 when `N(r0) = 0`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub mu: f64,
    pub step_tolerance: f64,
    pub steps: Vec<MonotoneStep>,
    pub worst_ratio: f64,
    /// Largest radius with a defined frequency, playing the role of `delta`.
    pub endpoint_radius: f64,
    /// `e^{mu delta} N(delta)`
    pub endpoint_bound: f64,
    pub max_frequency_below: f64,
    /// Radii where `N` is undefined.
    pub skipped: Vec<f64>,
    pub passed: bool,
}

pub fn check_frequency_monotonicity(curve: &FrequencyCurve, mu: f64) -> Result<MonotonicityReport> {
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::domain(format!("mu must be non-negative, got {mu}")));
    }
    let defined: Vec<(f64, f64)> = curve.samples.iter().filter_map(|s| s.n.map(|n| (s.r, n))).collect();
    let skipped: Vec<f64> = curve.samples.iter().filter(|s| s.n.is_none()).map(|s| s.r).collect();
    let Some(&(end_r, end_n)) = defined.last() else {
        return Err(Error::domain("frequency undefined at every radius"));
    };
    let steps: Vec<MonotoneStep> = defined
        .windows(2)
        .map(|w| {
            let ((r0, n0), (r1, n1)) = (w[0], w[1]);
            let ratio = if n0 > 0.0 {
                (mu * (r1 - r0)).exp() * n1 / n0
            } else {
                1.0
            };
            MonotoneStep { r0, r1, ratio }
        })
        .collect();
    let worst_ratio = steps.iter().map(|s| s.ratio).fold(f64::INFINITY, f64::min);
    let endpoint_bound = (mu * end_r).exp() * end_n;
    let max_frequency_below = defined.iter().map(|p| p.1).fold(0.0, f64::max);
    let passed = steps.iter().all(|s| s.ratio >= 1.0 - MONOTONE_STEP_TOL)
        && max_frequency_below <= endpoint_bound * (1.0 + MONOTONE_STEP_TOL);
    Ok(MonotonicityReport {
        mu,
        step_tolerance: MONOTONE_STEP_TOL,
        steps,
        worst_ratio,
        endpoint_radius: end_r,
        endpoint_bound,
        max_frequency_below,
        skipped,
        passed,
    })
}
