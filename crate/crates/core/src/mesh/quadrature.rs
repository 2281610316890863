use serde::{Deserialize, Serialize};

use super::{Ball, Point, ScalarField};
use crate::error::{Error, Result};

/// Radial Gauss-Legendre panel size and number of Fibonacci sphere points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureSpec {
    pub radial: usize,
    pub sphere: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            radial: 16,
            sphere: 194,
        }
    }
}

/// Precomputed nodes for ball and sphere integrals.
#[derive(Debug, Clone)]
pub struct Quadrature {
    spec: QuadratureSpec,
    /// Gauss-Legendre nodes mapped to `[0, 1]` and matching weights.
    radial_nodes: Vec<f64>,
    radial_weights: Vec<f64>,
    directions: Vec<[f64; 3]>,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self::new(QuadratureSpec::default()).expect("default quadrature is valid")
    }
}

impl Quadrature {
    pub fn new(spec: QuadratureSpec) -> Result<Self> {
        if spec.radial == 0 || spec.sphere < 2 {
            return Err(Error::domain(format!("degenerate quadrature {spec:?}")));
        }
        let (x, w) = gauss_legendre(spec.radial);
        Ok(Self {
            spec,
            radial_nodes: x.iter().map(|&x| 0.5 * (x + 1.0)).collect(),
            radial_weights: w.iter().map(|&w| 0.5 * w).collect(),
            directions: fibonacci_sphere(spec.sphere),
        })
    }

    pub fn spec(&self) -> QuadratureSpec {
        self.spec
    }

    pub fn directions(&self) -> &[[f64; 3]] {
        &self.directions
    }

    /// `int_{B} f(x) dx`; the closure receives the point and its offset from the centre.
    pub fn ball<F>(&self, ball: &Ball, mut f: F) -> f64
    where
        F: FnMut(Point, [f64; 3]) -> f64,
    {
        self.ball_many(ball, |p, off| [f(p, off)])[0]
    }

    /// `int_{dB} f(x) dS`; the closure receives the point and the outward unit normal.
    pub fn sphere<F>(&self, ball: &Ball, mut f: F) -> f64
    where
        F: FnMut(Point, [f64; 3]) -> f64,
    {
        self.sphere_many(ball, |p, nu| [f(p, nu)])[0]
    }

    /// Several ball integrals sharing one pass over the nodes.
    pub fn ball_many<const K: usize, F>(&self, ball: &Ball, mut f: F) -> [f64; K]
    where
        F: FnMut(Point, [f64; 3]) -> [f64; K],
    {
        let r = ball.radius;
        let w_dir = 4.0 * std::f64::consts::PI / self.directions.len() as f64;
        let mut total = [0.0; K];
        for (&s, &w) in self.radial_nodes.iter().zip(&self.radial_weights) {
            let t = s * r;
            let mut shell = [0.0; K];
            for d in &self.directions {
                let off = [t * d[0], t * d[1], t * d[2]];
                let p = [
                    ball.center[0] + off[0],
                    ball.center[1] + off[1],
                    ball.center[2] + off[2],
                ];
                for (acc, v) in shell.iter_mut().zip(f(p, off)) {
                    *acc += v;
                }
            }
            for (acc, v) in total.iter_mut().zip(shell) {
                *acc += w * r * t * t * v * w_dir;
            }
        }
        total
    }

    /// Several sphere integrals sharing one pass over the nodes.
    pub fn sphere_many<const K: usize, F>(&self, ball: &Ball, mut f: F) -> [f64; K]
    where
        F: FnMut(Point, [f64; 3]) -> [f64; K],
    {
        let r = ball.radius;
        let w_dir = 4.0 * std::f64::consts::PI * r * r / self.directions.len() as f64;
        let mut total = [0.0; K];
        for d in &self.directions {
            let p = [
                ball.center[0] + r * d[0],
                ball.center[1] + r * d[1],
                ball.center[2] + r * d[2],
            ];
            for (acc, v) in total.iter_mut().zip(f(p, *d)) {
                *acc += v;
            }
        }
        total.map(|t| t * w_dir)
    }
}

fn interpolated(f: &ScalarField, p: Point) -> f64 {
    // Callers check containment of the whole ball first.
    f.interpolate(p).unwrap_or(0.0)
}

/// Integral of the trilinear interpolant of `f` over `ball`.
pub fn ball_integral(f: &ScalarField, ball: &Ball, quad: &Quadrature) -> Result<f64> {
    ball.require_inside(f.grid())?;
    Ok(quad.ball(ball, |p, _| interpolated(f, p)))
}

/// Integral of the trilinear interpolant of `f` over the sphere bounding `ball`.
pub fn sphere_integral(f: &ScalarField, ball: &Ball, quad: &Quadrature) -> Result<f64> {
    ball.require_inside(f.grid())?;
    Ok(quad.sphere(ball, |p, _| interpolated(f, p)))
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp;
        loop {
            // p1 = P_n(z), p2 = P_{n-1}(z)
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 1..=n {
                let jf = j as f64;
                let p3 = p2;
                p2 = p1;
                p1 = ((2.0 * jf - 1.0) * z * p2 - (jf - 1.0) * p3) / jf;
            }
            dp = nf * (z * p1 - p2) / (z * z - 1.0);
            let step = p1 / dp;
            z -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// `n` near-uniform unit vectors on the golden-angle spiral.
fn fibonacci_sphere(n: usize) -> Vec<[f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            [rho * phi.cos(), rho * phi.sin(), z]
        })
        .collect()
}
