use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, UcpField};
use crate::elliptic::{AdmissiblePair, SolveReport};
use crate::error::{Error, Result};
use crate::inverse::{forward, quotient_field, reconstruct, Forward, InternalData, Traces};
use crate::mesh::{read_field, write_atomic, write_field, IndexBox, Point, Quadrature, ScalarField};
use crate::plot::{Plot, Scale};
use crate::specfun::{certify_two_sided, ConstCoeffFS, FROZEN_BOUND_CONSTANT};
use crate::stability::{interpolation_check, reconstruction_error_ladder, run_ladder};
use crate::ucp::{
    chain_of_balls, check_frequency_identities, check_frequency_monotonicity, frequency_curve, geometric_ladder,
    lower_bound_eval, monotonicity_mu, near_source_gradient_check, random_sigma_solution, three_ball_check,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UcpCheck {
    Freq,
    ThreeBall,
    Chain,
    NearSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpecfunArgs {
    pub mu: f64,
    pub nu: f64,
    pub dim: u32,
    pub rmin: f64,
    pub rmax: f64,
    pub samples: usize,
    pub constant: f64,
}

impl Default for SpecfunArgs {
    fn default() -> Self {
        Self {
            mu: 1.0,
            nu: 1.0,
            dim: 3,
            rmin: 0.1,
            rmax: 10.0,
            samples: 64,
            constant: FROZEN_BOUND_CONSTANT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Command {
    Forward,
    Reconstruct,
    Stability,
    Ucp(UcpCheck),
    SpecfunCheck(SpecfunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Forward => "forward",
            Command::Reconstruct => "reconstruct",
            Command::Stability => "stability",
            Command::Ucp(UcpCheck::Freq) => "ucp-freq",
            Command::Ucp(UcpCheck::ThreeBall) => "ucp-threeball",
            Command::Ucp(UcpCheck::Chain) => "ucp-chain",
            Command::Ucp(UcpCheck::NearSource) => "ucp-nearsource",
            Command::SpecfunCheck(_) => "specfun-check",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Path relative to the output directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub report: SolveReport,
}

/// Written as `manifest.json` next to the artifacts it lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub config_hash: Option<String>,
    pub seed: u64,
    pub started: String,
    pub finished: String,
    pub out_dir: PathBuf,
    pub artifacts: Vec<Artifact>,
    pub stages: Vec<StageReport>,
    pub diagnostics: Vec<String>,
    pub degenerate: bool,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl RunManifest {
    /// 0 on success, 2 when a degeneracy was diagnosed.
    pub fn exit_code(&self) -> i32 {
        if self.degenerate {
            2
        } else {
            0
        }
    }

    pub fn artifact_paths(&self) -> Vec<PathBuf> {
        self.artifacts.iter().map(|a| self.out_dir.join(&a.path)).collect()
    }
}

struct Output {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
    stages: Vec<StageReport>,
    diagnostics: Vec<String>,
    degenerate: bool,
}

impl Output {
    fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            artifacts: Vec::new(),
            stages: Vec::new(),
            diagnostics: Vec::new(),
            degenerate: false,
        }
    }

    fn record(&mut self, name: &str, bytes: &[u8]) {
        self.artifacts.push(Artifact {
            path: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(bytes)),
        });
    }

    fn bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.record(name, bytes);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::domain(e.to_string()))?;
        bytes.push(b'\n');
        self.bytes(name, &bytes)
    }

    fn field(&mut self, stem: &str, field: &ScalarField) -> Result<()> {
        let header = self.dir.join(format!("{stem}.json"));
        write_field(field, &header)?;
        for name in [format!("{stem}.json"), format!("{stem}.bin")] {
            let path = self.dir.join(&name);
            let bytes = std::fs::read(&path).map_err(|e| Error::Io { path, source: e })?;
            self.record(&name, &bytes);
        }
        Ok(())
    }

    fn stage(&mut self, stage: impl Into<String>, report: SolveReport) {
        self.stages.push(StageReport {
            stage: stage.into(),
            report,
        });
    }

    fn diagnose(&mut self, message: impl Into<String>, degenerate: bool) {
        let message = message.into();
        log::warn!("{message}");
        self.diagnostics.push(message);
        self.degenerate |= degenerate;
    }
}

fn timestamp() -> String {
    humantime::format_rfc3339_seconds(SystemTime::now()).to_string()
}

fn finish(out: Output, command: &str, hash: Option<String>, seed: u64, started: String) -> Result<RunManifest> {
    let manifest = RunManifest {
        tool: "qpat".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        config_hash: hash,
        seed,
        started,
        finished: timestamp(),
        out_dir: out.dir,
        artifacts: out.artifacts,
        stages: out.stages,
        diagnostics: out.diagnostics,
        degenerate: out.degenerate,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::domain(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(&manifest.out_dir.join(MANIFEST_FILE), &bytes)?;
    Ok(manifest)
}

/// Runs one pipeline and writes its artifacts and manifest under `config.out`.
pub fn run(config: &ExperimentConfig, command: &Command) -> Result<RunManifest> {
    if let Command::SpecfunCheck(args) = command {
        return run_specfun_check(args, &config.out);
    }
    let started = timestamp();
    let mut out = Output::new(&config.out);
    info!("{} -> {}", command.name(), config.out.display());
    out.json("config.json", config)?;
    match command {
        Command::Forward => run_forward(config, &mut out)?,
        Command::Reconstruct => run_reconstruct(config, &mut out)?,
        Command::Stability => run_stability(config, &mut out)?,
        Command::Ucp(check) => run_ucp(config, *check, &mut out)?,
        Command::SpecfunCheck(_) => unreachable!(),
    }
    finish(
        out,
        command.name(),
        Some(config.config_hash.clone()),
        config.seed,
        started,
    )
}

/// Certifies the two-sided bound for the given fundamental solution.
pub fn run_specfun_check(args: &SpecfunArgs, out_dir: &Path) -> Result<RunManifest> {
    let started = timestamp();
    let mut out = Output::new(out_dir);
    let fs = ConstCoeffFS::new(args.mu, args.nu, args.dim)?;
    let cert = certify_two_sided(&fs, args.constant, [args.rmin, args.rmax], args.samples)?;
    if !cert.passed {
        out.diagnose(
            format!(
                "bound with C = {} fails (log violation {:.3e})",
                cert.constant_c, cert.max_violation
            ),
            false,
        );
    }
    out.json("specfun.json", &cert)?;
    finish(out, "specfun-check", None, 0, started)
}

struct Setup {
    pair: AdmissiblePair,
    omega: IndexBox,
}

fn setup(config: &ExperimentConfig) -> Result<Setup> {
    let grid = config.grid()?;
    let omega = config.omega(&grid)?;
    let pair = config.pair(grid).map_err(|e| e.at_stage("pair"))?;
    Ok(Setup { pair, omega })
}

fn simulate(config: &ExperimentConfig, s: &Setup, out: &mut Output) -> Result<Forward> {
    info!("solving for both sources on {:?} nodes", s.pair.grid().dims());
    let fwd = forward(&s.pair, &config.sources, &s.omega, &config.solver)?;
    out.stage("green function 1", fwd.reports[0]);
    out.stage("green function 2", fwd.reports[1]);
    Ok(fwd)
}

#[derive(Serialize)]
struct ForwardSummary<'a> {
    certificate: &'a crate::elliptic::Certificate,
    omega: (Point, Point),
    v1_range: [f64; 2],
    v2_range: [f64; 2],
    reports: [SolveReport; 2],
}

fn run_forward(config: &ExperimentConfig, out: &mut Output) -> Result<()> {
    let s = setup(config)?;
    let fwd = simulate(config, &s, out)?;
    out.field("u1", &fwd.u1)?;
    out.field("u2", &fwd.u2)?;
    out.field("v1", &fwd.data.v1)?;
    out.field("v2", &fwd.data.v2)?;
    out.json(
        "forward.json",
        &ForwardSummary {
            certificate: s.pair.certificate(),
            omega: s.omega.bounds(s.pair.grid()),
            v1_range: [fwd.data.v1.min(), fwd.data.v1.max()],
            v2_range: [fwd.data.v2.min(), fwd.data.v2.max()],
            reports: fwd.reports,
        },
    )
}

fn rel_sup(hat: &ScalarField, truth: &ScalarField) -> f64 {
    let num = hat
        .values()
        .iter()
        .zip(truth.values())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    num / truth.max_abs()
}

#[derive(Serialize)]
struct ReconSummary {
    data_source: String,
    residuals: crate::inverse::Residuals,
    degenerate: bool,
    /// Relative sup-norm errors against the configured pair.
    a_error: f64,
    b_error: f64,
    sigma_error: f64,
    reports: [SolveReport; 2],
}

fn run_reconstruct(config: &ExperimentConfig, out: &mut Output) -> Result<()> {
    let s = setup(config)?;
    let traces = Traces::from_pair(&s.pair, &s.omega)?;
    let (data, source) = match &config.reconstruction.data_dir {
        Some(dir) => {
            let load = |name: &str| -> Result<ScalarField> {
                let f = read_field(&dir.join(name))?;
                f.same_grid(&traces.a)
                    .map_err(|e| e.at_stage(format!("{} in {}", name, dir.display())))?;
                Ok(f)
            };
            let data = InternalData {
                v1: load("v1.json")?,
                v2: load("v2.json")?,
                xi1: config.sources.xi1,
                xi2: config.sources.xi2,
                omega: s.omega,
                noise_meta: format!("read from {}", dir.display()),
            };
            (data, dir.display().to_string())
        }
        None => (simulate(config, &s, out)?.data, "simulated".to_string()),
    };
    let rec = reconstruct(&data, &traces, &config.recon_settings())?;
    out.stage("sigma recovery", rec.reports[0]);
    out.stage("rho solve", rec.reports[1]);
    if rec.degenerate {
        out.diagnose("gradient of the quotient degenerates inside the region", true);
    }
    let sigma_true = ScalarField::new(
        *traces.a.grid(),
        (0..traces.a.values().len())
            .map(|i| {
                let u1 = data.v1.values()[i] / traces.b.values()[i];
                traces.a.values()[i] * u1 * u1
            })
            .collect(),
    )?;
    out.field("a_hat", &rec.a_hat)?;
    out.field("b_hat", &rec.b_hat)?;
    out.field("sigma_hat", &rec.sigma_hat)?;
    out.field("w", &rec.w)?;
    out.json(
        "reconstruction.json",
        &ReconSummary {
            data_source: source,
            residuals: rec.residuals,
            degenerate: rec.degenerate,
            a_error: rel_sup(&rec.a_hat, &traces.a),
            b_error: rel_sup(&rec.b_hat, &traces.b),
            sigma_error: rel_sup(&rec.sigma_hat, &sigma_true),
            reports: rec.reports,
        },
    )
}

fn run_stability(config: &ExperimentConfig, out: &mut Output) -> Result<()> {
    let s = setup(config)?;
    let spec = config.perturbation();
    let settings = config.stability_settings();
    let eps = &config.stability.epsilons;
    info!("stability ladder over {} values of eps", eps.len());
    let ladder = run_ladder(&s.pair, &spec, eps, &config.sources, &s.omega, &settings)?;
    for e in &ladder.entries {
        out.stage(format!("eps = {:e}, source 1", e.eps), e.reports[0]);
        out.stage(format!("eps = {:e}, source 2", e.eps), e.reports[1]);
    }
    if !ladder.gamma_in_range() {
        out.diagnose(
            format!("fitted exponent {:?} outside (0, 1.05]", ladder.gamma_hat),
            false,
        );
    }
    if !ladder.data_monotone {
        out.diagnose("data distance is not monotone in eps", false);
    }
    let mut csv = String::from("eps,data_dist,coeff_dist,sigma_dist,a_dist,b_dist,trace_mismatch\n");
    for e in &ladder.entries {
        let _ = writeln!(
            csv,
            "{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            e.eps, e.data_dist, e.coeff_dist, e.sigma_dist, e.a_dist, e.b_dist, e.trace_mismatch
        );
    }
    out.bytes("ladder.csv", csv.as_bytes())?;
    let points: Vec<(f64, f64)> = ladder.entries.iter().map(|e| (e.data_dist, e.coeff_dist)).collect();
    let plot = Plot::new(
        "Coefficient distance against data distance",
        "data distance",
        "coefficient distance",
        Scale::Log,
        Scale::Log,
    )
    .with_series(
        &format!("gamma = {:.4}", ladder.gamma_hat.unwrap_or(f64::NAN)),
        points,
        false,
    );
    out.bytes("ladder.svg", plot.to_svg().as_bytes())?;
    out.json(
        "stability.json",
        &serde_json::json!({
            "gamma_hat": ladder.gamma_hat,
            "r2": ladder.r2,
            "lipschitz_k": ladder.lipschitz_k,
            "fit_floor": ladder.fit_floor,
            "data_monotone": ladder.data_monotone,
            "gamma_in_range": ladder.gamma_in_range(),
            "perturbation": spec,
            "alpha": config.norms.alpha,
            "theta": config.norms.theta,
        }),
    )?;

    if config.stability.reconstruction_ladder {
        let recon =
            reconstruction_error_ladder(&s.pair, &spec, eps, &config.sources, &s.omega, &config.recon_settings())?;
        out.json("reconstruction_ladder.json", &recon)?;
    }
    let largest = eps.iter().copied().fold(0.0, f64::max);
    if !config.stability.interpolation_radii.is_empty() && largest > 0.0 {
        let quad = Quadrature::new(config.ucp.quadrature)?;
        let report = interpolation_check(
            &s.pair,
            &spec,
            largest,
            &config.sources,
            &s.omega,
            &settings,
            &config.stability.interpolation_radii,
            &quad,
        )?;
        if !report.passed {
            out.diagnose(
                format!(
                    "weighted interpolation check: {} violations in {} samples",
                    report.violations, report.samples
                ),
                false,
            );
        }
        out.json("interpolation.json", &report)?;
    }
    Ok(())
}

/// Solution and conductivity examined by the unique-continuation checks.
struct UcpFields {
    u: ScalarField,
    sigma: ScalarField,
}

fn ucp_fields(config: &ExperimentConfig, out: &mut Output) -> Result<UcpFields> {
    match config.ucp.field {
        UcpField::Random => {
            let sol = random_sigma_solution(config.grid()?, config.seed, &config.ucp.random, &config.solver)?;
            out.stage("random conductivity solution", sol.report);
            Ok(UcpFields {
                u: sol.u,
                sigma: sol.sigma,
            })
        }
        UcpField::Quotient => {
            let s = setup(config)?;
            let fwd = simulate(config, &s, out)?;
            let w = quotient_field(&fwd.data, config.reconstruction.v1_floor)?;
            let a = s.pair.a().restrict(&s.omega)?;
            let u1 = fwd.u1.restrict(&s.omega)?;
            let sigma = a.zip_map(&u1, |a, u| a * u * u)?;
            Ok(UcpFields { u: w, sigma })
        }
    }
}

fn grid_center(f: &ScalarField) -> Point {
    let g = f.grid();
    let (lo, hi) = (g.origin(), g.upper());
    [0, 1, 2].map(|a| 0.5 * (lo[a] + hi[a]))
}

fn run_ucp(config: &ExperimentConfig, check: UcpCheck, out: &mut Output) -> Result<()> {
    let u = &config.ucp;
    let quad = Quadrature::new(u.quadrature)?;
    match check {
        UcpCheck::Freq => {
            let f = ucp_fields(config, out)?;
            let center = u.center.unwrap_or_else(|| grid_center(&f.u));
            let radii = geometric_ladder(u.r0, u.ratio, u.count)?;
            let curve = frequency_curve(&f.u, &f.sigma, center, &radii, &quad)?;
            if curve.samples.iter().all(|s| s.n.is_none()) {
                out.diagnose("H vanishes at every radius; the frequency is undefined", true);
                out.json("freq.json", &serde_json::json!({ "curve": curve }))?;
                return Ok(());
            }
            let g = f.u.grid();
            let inradius = (0..3)
                .map(|a| 0.5 * (g.upper()[a] - g.origin()[a]))
                .fold(f64::INFINITY, f64::min);
            let mu = monotonicity_mu(curve.kappa, inradius);
            let identities = if curve.samples.len() >= 5 {
                Some(check_frequency_identities(&curve)?)
            } else {
                None
            };
            let monotonicity = check_frequency_monotonicity(&curve, mu)?;
            if !monotonicity.passed {
                out.diagnose(
                    format!(
                        "e^(mu r) N(r) drops by more than the step tolerance (worst ratio {:.4})",
                        monotonicity.worst_ratio
                    ),
                    false,
                );
            }
            let n_pts: Vec<(f64, f64)> = curve.samples.iter().filter_map(|s| Some((s.r, s.n?))).collect();
            let weighted: Vec<(f64, f64)> = n_pts.iter().map(|&(r, n)| (r, (mu * r).exp() * n)).collect();
            let plot = Plot::new("Frequency function", "r", "N(r)", Scale::Log, Scale::Linear)
                .with_series("N(r)", n_pts, false)
                .with_series("exp(mu r) N(r)", weighted, false);
            out.bytes("freq.svg", plot.to_svg().as_bytes())?;
            out.json(
                "freq.json",
                &serde_json::json!({ "curve": curve, "mu": mu, "identities": identities, "monotonicity": monotonicity }),
            )
        }
        UcpCheck::ThreeBall => {
            let f = ucp_fields(config, out)?;
            let tb = &u.three_ball;
            let center = tb.center.unwrap_or_else(|| grid_center(&f.u));
            let report = three_ball_check(&f.u, center, tb.r, tb.radii, &quad)?;
            if report.zero_gradient {
                out.diagnose("gradient vanishes on one of the balls", true);
            }
            let pts: Vec<(f64, f64)> = report.radii.iter().zip(&report.norms).map(|(&r, &n)| (r, n)).collect();
            let plot = Plot::new(
                "Three-ball gradient norms",
                "radius",
                "||grad u||",
                Scale::Log,
                Scale::Log,
            )
            .with_series("ball norms", pts, false);
            out.bytes("threeball.svg", plot.to_svg().as_bytes())?;
            out.json("threeball.json", &report)
        }
        UcpCheck::Chain => {
            let c = &u.chain;
            let missing = |name: &str| Error::Config(vec![format!("ucp.chain.{name} is required for the chain check")]);
            let x = c.x.ok_or_else(|| missing("x"))?;
            let x0 = c.x0.ok_or_else(|| missing("x0"))?;
            let chain = chain_of_balls(x, x0, c.delta, (config.omega.lower, config.omega.upper))?;
            let dist = crate::mesh::distance(x, x0);
            let bound = lower_bound_eval(c.m, c.eta, c.gamma, c.c, chain.geodesic_ratio, dist, c.delta)?;
            out.json(
                "chain.json",
                &serde_json::json!({ "chain": chain, "lower_bound": bound }),
            )
        }
        UcpCheck::NearSource => {
            let s = setup(config)?;
            let fwd = simulate(config, &s, out)?;
            let w = fwd.u2.zip_map(&fwd.u1, |a, b| a / b)?;
            let report = near_source_gradient_check(&w, config.sources.xi1, config.sources.xi2, &u.near_source, &quad)?;
            if !report.passed {
                out.diagnose(
                    format!(
                        "near-source check failed: band {} (C* fit {:.3}), threshold {} (norm {:.4})",
                        report.band_holds, report.c_star_fit, report.threshold_holds, report.max_gradient_norm
                    ),
                    false,
                );
            }
            out.json("nearsource.json", &report)
        }
    }
}
