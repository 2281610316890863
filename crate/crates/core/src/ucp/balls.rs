use serde::{Deserialize, Serialize};

use super::{dot, Probe, DIM};
use crate::error::{Error, Result};
use crate::mesh::{distance, Ball, Point, Quadrature, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreeBallReport {
    pub center: Point,
    /// `k r`, `l r`, `m r`
    pub radii: [f64; 3],
    /// `||grad v||_{L^2}` on the three balls.
    pub norms: [f64; 3],
    /// Exponent with `norm_l = norm_k^g norm_m^(1-g)`, when it lies in (0, 1).
    pub fitted_gamma: Option<f64>,
    /// `log norm_l - (log norm_k + log norm_m) / 2`.
    pub defect: Option<f64>,
    /// Some ball carries no gradient at all.
    pub zero_gradient: bool,
}

pub fn three_ball_check(
    v: &ScalarField,
    y: Point,
    r: f64,
    klm: [f64; 3],
    quad: &Quadrature,
) -> Result<ThreeBallReport> {
    let [k, l, m] = klm;
    if !(0.0 < k && k < l && l < m && r > 0.0) {
        return Err(Error::domain(format!(
            "need 0 < k < l < m and r > 0, got {klm:?}, r = {r}"
        )));
    }
    Ball::new(y, m * r)?.require_inside(v.grid())?;
    let probe = Probe::new(v, None)?;
    let radii = klm.map(|s| s * r);
    let norms = radii.map(|rad| {
        let ball = Ball { center: y, radius: rad };
        quad.ball(&ball, |p, _| {
            let g = probe.grad(p);
            dot(g, g)
        })
        .max(0.0)
        .sqrt()
    });
    let zero_gradient = norms.contains(&0.0);
    if zero_gradient {
        return Ok(ThreeBallReport {
            center: y,
            radii,
            norms,
            fitted_gamma: None,
            defect: None,
            zero_gradient,
        });
    }
    let [lk, ll, lm] = norms.map(f64::ln);
    let gamma = (lm - ll) / (lm - lk);
    Ok(ThreeBallReport {
        center: y,
        radii,
        norms,
        fitted_gamma: (gamma > 0.0 && gamma < 1.0).then_some(gamma),
        defect: Some(ll - 0.5 * (lk + lm)),
        zero_gradient,
    })
}

/// Exit-time cover of the segment from `x` to `x0` by balls of radius `delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallChain {
    pub x: Point,
    pub x0: Point,
    pub delta: f64,
    /// `y_0 = x, ..., y_N`
    pub centers: Vec<Point>,
    pub n: usize,
    /// `floor(2 n c |x - x0| / delta)` with geodesic ratio `c`.
    pub n0_bound: usize,
    pub geodesic_ratio: f64,
}

fn distance_to_box_boundary(p: Point, lo: Point, hi: Point) -> f64 {
    (0..3)
        .map(|a| (p[a] - lo[a]).min(hi[a] - p[a]))
        .fold(f64::INFINITY, f64::min)
}

/// Builds the chain on the straight path inside the box `domain`. Boxes are
/// convex, so geodesic and Euclidean distance agree.
pub fn chain_of_balls(x: Point, x0: Point, delta: f64, domain: (Point, Point)) -> Result<BallChain> {
    let (lo, hi) = domain;
    if (0..3).any(|a| !(lo[a] < hi[a])) {
        return Err(Error::domain(format!("empty box {lo:?} .. {hi:?}")));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::domain(format!("delta must be positive, got {delta}")));
    }
    let margin = distance_to_box_boundary(x, lo, hi).min(distance_to_box_boundary(x0, lo, hi));
    if margin <= 0.0 {
        return Err(Error::domain("path leaves the domain"));
    }
    // Distance to the box boundary is concave, so its minimum on the segment
    // sits at an endpoint.
    if delta >= margin / 3.0 {
        return Err(Error::domain(format!(
            "delta = {delta} must stay below a third of the path clearance {margin}"
        )));
    }
    let len = distance(x, x0);
    // The open ball excludes its sphere, so a hop of exactly delta exits.
    let n = ((len / delta) * (1.0 + 1e-12)).floor() as usize;
    let centers = (0..=n)
        .map(|k| {
            let t = if len > 0.0 { k as f64 * delta / len } else { 0.0 };
            [0, 1, 2].map(|a| x[a] + t * (x0[a] - x[a]))
        })
        .collect();
    let geodesic_ratio = 1.0;
    Ok(BallChain {
        x,
        x0,
        delta,
        centers,
        n,
        n0_bound: (2.0 * DIM as f64 * geodesic_ratio * len / delta).floor() as usize,
        geodesic_ratio,
    })
}

/// Lower bound for `||grad u||_{L^2(B(x, delta))}` propagated along a chain:
/// `exp(-[ln(cM/eta)/gamma] exp(2n |ln gamma| c_g dist / delta))`.
pub fn lower_bound_eval(
    m: f64,
    eta: f64,
    gamma: f64,
    c: f64,
    geodesic_ratio: f64,
    dist: f64,
    delta: f64,
) -> Result<f64> {
    let mut bad = Vec::new();
    if !(m >= 1.0) {
        bad.push(format!("M = {m} must be at least 1"));
    }
    if !(eta > 0.0 && eta < m) {
        bad.push(format!("eta = {eta} must lie in (0, M)"));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        bad.push(format!("gamma = {gamma} must lie in (0, 1)"));
    }
    if !(c >= 1.0) {
        bad.push(format!("c = {c} must be at least 1"));
    }
    if !(geodesic_ratio >= 1.0) {
        bad.push(format!("geodesic ratio {geodesic_ratio} must be at least 1"));
    }
    if !(dist >= 0.0 && delta > 0.0) {
        bad.push(format!("need dist >= 0 and delta > 0, got {dist}, {delta}"));
    }
    if !bad.is_empty() {
        return Err(Error::domain(bad.join("; ")));
    }
    let growth = (2.0 * DIM as f64 * gamma.ln().abs() * geodesic_ratio * dist / delta).exp();
    Ok((-(c * m / eta).ln() / gamma * growth).exp())
}
