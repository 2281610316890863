//! Modified Bessel functions of the second kind and the fundamental solution
//! of `-mu*Laplace + nu` in `R^n`.
//!
//! Half-integer orders use the exact finite closed forms obtained by upward
//! recurrence from `K_{1/2}` and `K_{3/2}`. Integer orders use the ascending
//! series for `z < 2` and a trapezoidal rule on `K_v(z) = int_0^inf exp(-z cosh t) cosh(vt) dt`
//! for `z >= 2`, which converges geometrically in the step size.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const SERIES_CROSSOVER: f64 = 2.0;
/// `exp(-z)` is zero in f64 beyond this argument.
const UNDERFLOW_Z: f64 = 745.2;

/// Order `numerator / 2` of a modified Bessel function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BesselOrder {
    half_integer_numerator: u32,
}

impl BesselOrder {
    pub fn new(half_integer_numerator: u32) -> Result<Self> {
        if half_integer_numerator == 0 {
            return Err(Error::domain("Bessel order numerator must be >= 1"));
        }
        Ok(Self { half_integer_numerator })
    }

    /// Order `n/2 - 1` of the kernel in dimension `n >= 3`.
    pub fn for_dimension(dim: u32) -> Result<Self> {
        if dim < 3 {
            return Err(Error::domain(format!("dimension must be >= 3, got {dim}")));
        }
        Self::new(dim - 2)
    }

    pub fn numerator(self) -> u32 {
        self.half_integer_numerator
    }

    pub fn value(self) -> f64 {
        f64::from(self.half_integer_numerator) / 2.0
    }

    pub fn is_half_integer(self) -> bool {
        self.half_integer_numerator % 2 == 1
    }
}

/// Result of a Bessel evaluation; `underflow` is set when the true value is
/// positive but not representable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BesselK {
    pub value: f64,
    pub underflow: bool,
}

/// `K_order(z)` for `z > 0`.
pub fn bessel_k(order: BesselOrder, z: f64) -> Result<BesselK> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::domain(format!(
            "Bessel K requires a finite positive argument, got {z}"
        )));
    }
    let scaled = scaled_bessel_k(order, z);
    if !scaled.is_finite() {
        return Err(Error::domain(format!("K_{}({z}) overflows", order.value())));
    }
    let value = if z > UNDERFLOW_Z { 0.0 } else { scaled * (-z).exp() };
    Ok(BesselK {
        value,
        underflow: value == 0.0 || value < f64::MIN_POSITIVE,
    })
}

/// `exp(z) * K_order(z)`.
fn scaled_bessel_k(order: BesselOrder, z: f64) -> f64 {
    let steps = order.half_integer_numerator / 2;
    if order.is_half_integer() {
        // e^z K_{1/2} = sqrt(pi/(2z)), e^z K_{3/2} = sqrt(pi/(2z)) (1 + 1/z)
        let k_half = (std::f64::consts::PI / (2.0 * z)).sqrt();
        upward(0.5, k_half, k_half * (1.0 + 1.0 / z), steps, z)
    } else {
        let (k0, k1) = if z < SERIES_CROSSOVER {
            let (k0, k1) = k01_series(z);
            (k0 * z.exp(), k1 * z.exp())
        } else {
            (k_integral_scaled(0.0, z), k_integral_scaled(1.0, z))
        };
        upward(0.0, k0, k1, steps, z)
    }
}

/// `K_{v+1} = K_{v-1} + (2v/z) K_v`, starting from orders `(v0, v0 + 1)`.
fn upward(v0: f64, k_lo: f64, k_hi: f64, steps: u32, z: f64) -> f64 {
    if steps == 0 {
        return k_lo;
    }
    let (mut prev, mut cur) = (k_lo, k_hi);
    let mut v = v0 + 1.0;
    for _ in 1..steps {
        let next = prev + 2.0 * v / z * cur;
        prev = cur;
        cur = next;
        v += 1.0;
    }
    cur
}

/// Ascending series for `K_0` and `K_1`; accurate for small and moderate `z`.
fn k01_series(z: f64) -> (f64, f64) {
    let q = 0.25 * z * z;
    let log_half = (0.5 * z).ln();
    let mut term0 = 1.0; // q^k / (k!)^2
    let mut term1 = 1.0; // q^k / (k! (k+1)!)
    let mut harmonic = 0.0; // H_k
    let mut i0 = 0.0;
    let mut i1 = 0.0;
    let mut tail0 = 0.0;
    let mut tail1 = 0.0;
    for k in 0..60 {
        let kf = k as f64;
        if k > 0 {
            harmonic += 1.0 / kf;
            term0 *= q / (kf * kf);
            term1 *= q / (kf * (kf + 1.0));
        }
        let psi_k1 = -EULER_GAMMA + harmonic;
        let psi_k2 = psi_k1 + 1.0 / (kf + 1.0);
        i0 += term0;
        i1 += term1;
        tail0 += psi_k1 * term0;
        tail1 += (psi_k1 + psi_k2) * term1;
        if term0 < 1e-18 * i0.abs() && k > 2 {
            break;
        }
    }
    let i1 = 0.5 * z * i1;
    let k0 = -log_half * i0 + tail0;
    let k1 = 1.0 / z + log_half * i1 - 0.25 * z * tail1;
    (k0, k1)
}

/// Trapezoidal rule for `e^z K_v(z) = int_0^inf exp(-z (cosh t - 1)) cosh(v t) dt`.
fn k_integral_scaled(v: f64, z: f64) -> f64 {
    // Strip half-width 1 keeps the discretisation error near exp(-2 pi / h + 0.46 z).
    let h = 2.0 * std::f64::consts::PI / (40.0 + 0.46 * z);
    let mut total = 0.5;
    let mut k = 1usize;
    loop {
        let t = k as f64 * h;
        let term = (-z * (t.cosh() - 1.0)).exp() * (v * t).cosh();
        total += term;
        if term < 1e-18 * total || k > 100_000 {
            break;
        }
        k += 1;
    }
    total * h
}

/// Fundamental solution of `-mu*Laplace + nu` in dimension `dim`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstCoeffFS {
    mu: f64,
    nu: f64,
    dim: u32,
}

impl ConstCoeffFS {
    pub fn new(mu: f64, nu: f64, dim: u32) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) || !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::domain(format!(
                "fundamental solution needs mu > 0 and nu > 0, got mu={mu}, nu={nu}"
            )));
        }
        if dim < 3 {
            return Err(Error::domain(format!("dimension must be >= 3, got {dim}")));
        }
        Ok(Self { mu, nu, dim })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn dim(&self) -> u32 {
        self.dim
    }

    /// Decay rate `sqrt(nu/mu)`.
    pub fn decay_rate(&self) -> f64 {
        (self.nu / self.mu).sqrt()
    }
}

/// `(2 pi mu)^{-n/2} (sqrt(nu mu)/r)^{n/2-1} K_{n/2-1}(sqrt(nu) r / sqrt(mu))`
pub fn fs_eval(fs: &ConstCoeffFS, r: f64) -> Result<f64> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::domain(format!(
            "fundamental solution evaluated at non-positive radius {r}"
        )));
    }
    let n = f64::from(fs.dim);
    let order = BesselOrder::for_dimension(fs.dim)?;
    let z = (fs.nu / fs.mu).sqrt() * r;
    let k = bessel_k(order, z)?;
    let prefactor =
        (2.0 * std::f64::consts::PI * fs.mu).powf(-n / 2.0) * ((fs.nu * fs.mu).sqrt() / r).powf(n / 2.0 - 1.0);
    Ok(prefactor * k.value)
}

/// Smallest integer constant certifying the bound for `mu = nu = 1`, `n = 3`
/// on the annulus `[0.1, 10]` with 64 samples.
pub const FROZEN_BOUND_CONSTANT: f64 = 13.0;

/// Result of sampling the two-sided exponential bound on an annulus.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BoundCertificate {
    pub constant_c: f64,
    pub annulus: [f64; 2],
    pub samples: usize,
    /// Largest signed violation in log space: `max(log(lower/G), log(G/upper))`.
    pub max_violation: f64,
    pub passed: bool,
}

fn log_spaced(lo: f64, hi: f64, samples: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..samples)
        .map(|i| (a + (b - a) * i as f64 / (samples - 1) as f64).exp())
        .collect()
}

fn check_annulus(annulus: [f64; 2], samples: usize) -> Result<()> {
    let [lo, hi] = annulus;
    if !(lo > 0.0 && lo < hi && hi.is_finite()) {
        return Err(Error::domain(format!(
            "annulus needs 0 < r_min < r_max, got [{lo}, {hi}]"
        )));
    }
    if samples < 2 {
        return Err(Error::domain("certification needs at least 2 samples"));
    }
    Ok(())
}

/// Per-sample log ratios `(log(base_lower/G), log(G/base_upper))` with `C = 1`.
fn log_ratios(fs: &ConstCoeffFS, annulus: [f64; 2], samples: usize) -> Result<Vec<(f64, f64)>> {
    check_annulus(annulus, samples)?;
    let rate = fs.decay_rate();
    let power = f64::from(fs.dim) - 2.0;
    log_spaced(annulus[0], annulus[1], samples)
        .into_iter()
        .map(|r| {
            let g = fs_eval(fs, r)?;
            if g <= 0.0 {
                return Err(Error::domain(format!(
                    "fundamental solution underflows at r={r}; shrink the annulus"
                )));
            }
            let log_g = g.ln();
            let log_lower = -rate * r - power * r.ln();
            let log_upper = -0.5 * rate * r - power * r.ln();
            Ok((log_lower - log_g, log_g - log_upper))
        })
        .collect()
}

/// Samples `C^{-1} e^{-sqrt(nu) r/sqrt(mu)} / r^{n-2} <= G(r) <= C e^{-sqrt(nu) r/(2 sqrt(mu))} / r^{n-2}`
/// on `samples` log-spaced radii.
pub fn certify_two_sided(
    fs: &ConstCoeffFS,
    constant_c: f64,
    annulus: [f64; 2],
    samples: usize,
) -> Result<BoundCertificate> {
    if !(constant_c >= 1.0) {
        return Err(Error::domain(format!("bound constant must be >= 1, got {constant_c}")));
    }
    let log_c = constant_c.ln();
    let max_violation = log_ratios(fs, annulus, samples)?
        .into_iter()
        .map(|(lo, up)| (lo - log_c).max(up - log_c))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(BoundCertificate {
        constant_c,
        annulus,
        samples,
        max_violation,
        passed: max_violation <= 0.0,
    })
}

/// Smallest integer `C >= 1` for which [`certify_two_sided`] passes.
pub fn discover_constant(fs: &ConstCoeffFS, annulus: [f64; 2], samples: usize) -> Result<BoundCertificate> {
    let worst = log_ratios(fs, annulus, samples)?
        .into_iter()
        .map(|(lo, up)| lo.max(up))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut c = worst.exp().ceil().max(1.0);
    loop {
        let cert = certify_two_sided(fs, c, annulus, samples)?;
        if cert.passed {
            return Ok(cert);
        }
        c += 1.0;
    }
}
