//! Perturbation ladders: distance between internal data against distance
//! between coefficients, and the fitted Holder exponent.

use serde::{Deserialize, Serialize};

use crate::elliptic::{AdmissiblePair, SolveReport, SolverSettings, SourceConfig};
use crate::error::{Error, Result};
use crate::inverse::{forward, quotient_field, reconstruct, Forward, ReconSettings, Traces, DEFAULT_V1_FLOOR};
use crate::mesh::{
    holder_norm, holder_norm_c1, poly_bump, IndexBox, Point, Quadrature, ScalarField, DEFAULT_PAIR_BUDGET,
};
use crate::par;
use crate::regress::{fit_line, LineFit};
use crate::ucp::{weighted_interpolation_check, WeightedReport};

/// Largest exponent accepted before the fit is reported as suspect.
pub const GAMMA_CAP: f64 = 1.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    A,
    B,
    Both,
}

/// `eps * (1 - |x - c|^2 / rho^2)^3` added to the chosen coefficient(s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub bump_center: Point,
    pub bump_radius: f64,
    pub target: Target,
}

impl PerturbationSpec {
    /// Support must sit strictly inside `omega` so the traces on its boundary agree.
    pub fn validate(&self, grid: &crate::mesh::Grid, omega: &IndexBox) -> Result<()> {
        omega.check_within(grid)?;
        let (lo, hi) = omega.bounds(grid);
        let clearance = (0..3)
            .map(|a| (self.bump_center[a] - lo[a]).min(hi[a] - self.bump_center[a]))
            .fold(f64::INFINITY, f64::min);
        if !(self.bump_radius > 0.0 && clearance > self.bump_radius) {
            return Err(Error::domain(format!(
                "bump B({:?}, {}) must lie strictly inside the measurement region {lo:?} .. {hi:?}",
                self.bump_center, self.bump_radius
            )));
        }
        Ok(())
    }

    pub fn profile(&self, grid: crate::mesh::Grid) -> ScalarField {
        ScalarField::from_fn(grid, |p| poly_bump(p, self.bump_center, self.bump_radius))
    }

    /// The perturbed pair, certified against the base pair's `(lambda, kappa)`.
    pub fn apply(&self, base: &AdmissiblePair, eps: f64) -> Result<AdmissiblePair> {
        let bump = self.profile(*base.grid());
        let shift = |f: &ScalarField, on: bool| -> Result<ScalarField> {
            if on {
                f.zip_map(&bump, |v, p| v + eps * p)
            } else {
                Ok(f.clone())
            }
        };
        let a = shift(base.a(), self.target != Target::B)?;
        let b = shift(base.b(), self.target != Target::A)?;
        AdmissiblePair::certify(a, b, base.lambda_cert(), base.kappa_cert())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilitySettings {
    /// Holder exponent of the coefficient norms.
    pub alpha: f64,
    pub solver: SolverSettings,
    pub pair_budget: usize,
    pub seed: u64,
}

impl Default for StabilitySettings {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            solver: SolverSettings::default(),
            pair_budget: DEFAULT_PAIR_BUDGET,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderEntry {
    pub eps: f64,
    /// `||v1 - v1~||_C + ||v2 - v2~||_C` over the region.
    pub data_dist: f64,
    /// `||a - a~||_{C^{1,alpha}} + ||b - b~||_{C^{0,alpha}}`
    pub coeff_dist: f64,
    pub a_dist: f64,
    pub b_dist: f64,
    /// `||sigma - sigma~||_C` with `sigma = a u1^2`.
    pub sigma_dist: f64,
    /// Largest coefficient mismatch on the region's boundary nodes.
    pub trace_mismatch: f64,
    pub reports: [SolveReport; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityLadder {
    pub entries: Vec<LadderEntry>,
    /// Entries below this data distance are left out of the fit.
    pub fit_floor: f64,
    pub fit: Option<LineFit>,
    pub gamma_hat: Option<f64>,
    pub r2: Option<f64>,
    /// Smallest `K` with `data_dist <= K eps` on the ladder.
    pub lipschitz_k: f64,
    pub data_monotone: bool,
}

impl StabilityLadder {
    pub fn gamma_in_range(&self) -> bool {
        self.gamma_hat.is_some_and(|g| g > 0.0 && g <= GAMMA_CAP)
    }
}

fn check_epsilons(epsilons: &[f64]) -> Result<()> {
    if epsilons.is_empty() || epsilons.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
        return Err(Error::domain("epsilons must be finite and non-negative"));
    }
    if epsilons.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("epsilons must be strictly increasing"));
    }
    Ok(())
}

fn sup_diff(a: &ScalarField, b: &ScalarField) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn sigma_of(pair: &AdmissiblePair, fwd: &Forward, omega: &IndexBox) -> Result<ScalarField> {
    let a = pair.a().restrict(omega)?;
    a.zip_map(&fwd.u1.restrict(omega)?, |a, u| a * u * u)
}

fn trace_mismatch(base: &AdmissiblePair, pert: &AdmissiblePair, omega: &IndexBox) -> f64 {
    omega
        .nodes()
        .filter(|&ijk| omega.on_boundary(ijk))
        .fold(0.0f64, |m, ijk| {
            m.max((base.a().at(ijk) - pert.a().at(ijk)).abs())
                .max((base.b().at(ijk) - pert.b().at(ijk)).abs())
        })
}

pub fn run_ladder(
    base: &AdmissiblePair,
    pert: &PerturbationSpec,
    epsilons: &[f64],
    sources: &SourceConfig,
    omega: &IndexBox,
    settings: &StabilitySettings,
) -> Result<StabilityLadder> {
    check_epsilons(epsilons)?;
    pert.validate(base.grid(), omega)?;
    let base_fwd = forward(base, sources, omega, &settings.solver).map_err(|e| e.at_stage("base pair"))?;
    let base_sigma = sigma_of(base, &base_fwd, omega)?;
    let entries = par::map_slice(epsilons, |&eps| -> Result<LadderEntry> {
        let tag = |e: Error| e.at_stage(format!("eps = {eps:e}"));
        let pair = pert.apply(base, eps).map_err(tag)?;
        let fwd = forward(&pair, sources, omega, &settings.solver).map_err(tag)?;
        let data_dist = sup_diff(&fwd.data.v1, &base_fwd.data.v1) + sup_diff(&fwd.data.v2, &base_fwd.data.v2);
        let da = pair.a().zip_map(base.a(), |x, y| x - y)?;
        let db = pair.b().zip_map(base.b(), |x, y| x - y)?;
        let a_dist = holder_norm_c1(&da, settings.alpha, omega, settings.pair_budget, settings.seed)?.total;
        let b_dist = holder_norm(&db, settings.alpha, omega, settings.pair_budget, settings.seed)?.total;
        Ok(LadderEntry {
            eps,
            data_dist,
            coeff_dist: a_dist + b_dist,
            a_dist,
            b_dist,
            sigma_dist: sup_diff(&sigma_of(&pair, &fwd, omega)?, &base_sigma),
            trace_mismatch: trace_mismatch(base, &pair, omega),
            reports: fwd.reports,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let scale = base_fwd.data.v1.max_abs() + base_fwd.data.v2.max_abs();
    let fit_floor = 10.0 * settings.solver.tol * scale;
    let used: Vec<&LadderEntry> = entries
        .iter()
        .filter(|e| e.eps > 0.0 && e.data_dist >= fit_floor && e.coeff_dist > 0.0)
        .collect();
    let fit = if used.len() >= 2 {
        let xs: Vec<f64> = used.iter().map(|e| e.data_dist.ln()).collect();
        let ys: Vec<f64> = used.iter().map(|e| e.coeff_dist.ln()).collect();
        Some(fit_line(&xs, &ys)?)
    } else {
        None
    };
    let lipschitz_k = entries
        .iter()
        .filter(|e| e.eps > 0.0)
        .map(|e| e.data_dist / e.eps)
        .fold(0.0, f64::max);
    let data_monotone = entries.windows(2).all(|w| w[1].data_dist >= w[0].data_dist);
    Ok(StabilityLadder {
        fit_floor,
        gamma_hat: fit.map(|f| f.slope),
        r2: fit.map(|f| f.r2),
        fit,
        lipschitz_k,
        data_monotone,
        entries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconEntry {
    pub eps: f64,
    /// `||v~ - v||_C` summed over both sources.
    pub noise: f64,
    /// `||a^ - a||_inf / ||a||_inf` against the base pair.
    pub a_error: f64,
    pub b_error: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconLadder {
    pub entries: Vec<ReconEntry>,
    /// Log-log slope of `max(a_error, b_error)` against `noise` over `eps > 0`.
    pub fit: Option<LineFit>,
    /// Decreases of the error along the ladder.
    pub inversions: usize,
}

/// Reconstructs the base pair from the data of each perturbed pair, so that
/// the perturbation acts as structured data noise.
pub fn reconstruction_error_ladder(
    base: &AdmissiblePair,
    pert: &PerturbationSpec,
    epsilons: &[f64],
    sources: &SourceConfig,
    omega: &IndexBox,
    recon: &ReconSettings,
) -> Result<ReconLadder> {
    check_epsilons(epsilons)?;
    pert.validate(base.grid(), omega)?;
    let traces = Traces::from_pair(base, omega)?;
    let clean = forward(base, sources, omega, &recon.solver).map_err(|e| e.at_stage("base pair"))?;
    let rel = |hat: &ScalarField, truth: &ScalarField| sup_diff(hat, truth) / truth.max_abs();
    let entries = par::map_slice(epsilons, |&eps| -> Result<ReconEntry> {
        let tag = |e: Error| e.at_stage(format!("eps = {eps:e}"));
        let pair = pert.apply(base, eps).map_err(tag)?;
        let fwd = forward(&pair, sources, omega, &recon.solver).map_err(tag)?;
        let rec = reconstruct(&fwd.data, &traces, recon).map_err(tag)?;
        Ok(ReconEntry {
            eps,
            noise: sup_diff(&fwd.data.v1, &clean.data.v1) + sup_diff(&fwd.data.v2, &clean.data.v2),
            a_error: rel(&rec.a_hat, &traces.a),
            b_error: rel(&rec.b_hat, &traces.b),
            degenerate: rec.degenerate,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let err = |e: &ReconEntry| e.a_error.max(e.b_error);
    let used: Vec<&ReconEntry> = entries.iter().filter(|e| e.eps > 0.0 && e.noise > 0.0).collect();
    let fit = if used.len() >= 2 {
        let xs: Vec<f64> = used.iter().map(|e| e.noise.ln()).collect();
        let ys: Vec<f64> = used.iter().map(|e| err(e).ln()).collect();
        Some(fit_line(&xs, &ys)?)
    } else {
        None
    };
    let inversions = entries.windows(2).filter(|w| err(&w[1]) < err(&w[0])).count();
    Ok(ReconLadder {
        entries,
        fit,
        inversions,
    })
}

/// Weighted interpolation check on the region with `f = a~ - a` at the given
/// `eps` and the base quotient `w = v2/v1` as the solution.
#[allow(clippy::too_many_arguments)]
pub fn interpolation_check(
    base: &AdmissiblePair,
    pert: &PerturbationSpec,
    eps: f64,
    sources: &SourceConfig,
    omega: &IndexBox,
    settings: &StabilitySettings,
    radii: &[f64],
    quad: &Quadrature,
) -> Result<WeightedReport> {
    if !(eps > 0.0) {
        return Err(Error::domain("the interpolation check needs eps > 0"));
    }
    pert.validate(base.grid(), omega)?;
    let fwd = forward(base, sources, omega, &settings.solver).map_err(|e| e.at_stage("base pair"))?;
    let w = quotient_field(&fwd.data, DEFAULT_V1_FLOOR)?;
    let pair = pert.apply(base, eps)?;
    let f = pair.a().zip_map(base.a(), |x, y| x - y)?.restrict(omega)?;
    let region = f.grid().full_box();
    weighted_interpolation_check(&f, &w, &region, settings.alpha, radii, quad)
}
