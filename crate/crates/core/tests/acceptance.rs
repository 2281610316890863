//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use qpat_core::elliptic::{greens_function, AdmissiblePair, Regularization, SolverSettings, SourceConfig};
use qpat_core::experiment::{parse_config, run, Command, UcpCheck, MANIFEST_FILE};
use qpat_core::inverse::{
    forward, generate_data, quotient_field, reconstruct, ReconSettings, Traces, DEFAULT_V1_FLOOR,
};
use qpat_core::mesh::{distance, poly_bump, Grid, IndexBox, Point, Quadrature, ScalarField};
use qpat_core::specfun::{bessel_k, certify_two_sided, fs_eval, BesselOrder, ConstCoeffFS, FROZEN_BOUND_CONSTANT};
use qpat_core::stability::{interpolation_check, run_ladder, PerturbationSpec, StabilitySettings, Target};
use qpat_core::ucp::{
    chain_of_balls, check_frequency_identities, check_frequency_monotonicity, frequency_curve, geometric_ladder,
    monotonicity_mu, near_source_gradient_check, random_sigma_solution, three_ball_check, NearSourceSettings,
    RandomSolutionSpec, LADDER_RATIO,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Case = (&'static str, fn(Point) -> f64, f64);

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    check: fn() -> Outcome,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn log_spaced(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(move |i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
}

fn rel_err(hat: &ScalarField, truth: &ScalarField) -> f64 {
    let num = hat
        .values()
        .iter()
        .zip(truth.values())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    num / truth.max_abs()
}

fn bessel_and_kernel() -> Outcome {
    let half = BesselOrder::new(1).map_err(|e| e.to_string())?;
    let mut worst_k = 0.0f64;
    for z in log_spaced(1e-3, 30.0, 2000) {
        let exact = (PI / (2.0 * z)).sqrt() * (-z).exp();
        let got = bessel_k(half, z).map_err(|e| e.to_string())?.value;
        worst_k = worst_k.max((got - exact).abs() / exact);
    }
    let fs = ConstCoeffFS::new(1.0, 1.0, 3).map_err(|e| e.to_string())?;
    let mut worst_g = 0.0f64;
    for r in log_spaced(1e-3, 20.0, 2000) {
        let exact = (-r).exp() / (4.0 * PI * r);
        let got = fs_eval(&fs, r).map_err(|e| e.to_string())?;
        worst_g = worst_g.max((got - exact).abs() / exact);
    }
    let detail = format!("K_1/2 rel {worst_k:.2e}, G rel {worst_g:.2e}");
    ensure(worst_k <= 1e-12 && worst_g <= 1e-12, || detail.clone())?;
    Ok(detail)
}

fn two_sided_bound() -> Outcome {
    let fs = ConstCoeffFS::new(1.0, 1.0, 3).map_err(|e| e.to_string())?;
    let cert = certify_two_sided(&fs, FROZEN_BOUND_CONSTANT, [0.1, 10.0], 64).map_err(|e| e.to_string())?;
    // Dense resampling against the closed form.
    let c = FROZEN_BOUND_CONSTANT;
    let dense_ok = log_spaced(0.1, 10.0, 10_000).all(|r| {
        let g = (-r).exp() / (4.0 * PI * r);
        (-r).exp() / (c * r) <= g && g <= c * (-0.5 * r).exp() / r
    });
    let detail = format!("C = {c}, max log violation {:.3}, dense {dense_ok}", cert.max_violation);
    ensure(cert.passed && dense_ok, || detail.clone())?;
    Ok(detail)
}

fn greens_error(u: &ScalarField, lo: f64, hi: f64) -> f64 {
    let g = u.grid();
    let mut worst = 0.0f64;
    for (idx, &v) in u.values().iter().enumerate() {
        let r = distance(g.node_coords(idx), [0.0; 3]);
        if r >= lo - 1e-12 && r <= hi + 1e-12 {
            let exact = (-r).exp() / (4.0 * PI * r);
            worst = worst.max((v - exact).abs() / exact);
        }
    }
    worst
}

fn greens_function_accuracy() -> Outcome {
    let settings = SolverSettings::default();
    let mut common = Vec::new();
    let mut annulus = 0.0;
    let mut slowest = Duration::ZERO;
    for n in [33, 65] {
        let g = Grid::cube([0.0; 3], 4.0, n).map_err(|e| e.to_string())?;
        let h = g.spacing()[0];
        let pair = AdmissiblePair::constant(g, 1.0, 1.0).map_err(|e| e.to_string())?;
        let t = Instant::now();
        let (u, _) =
            greens_function(&pair, [0.0; 3], Regularization::SingularitySplit, &settings).map_err(|e| e.to_string())?;
        slowest = slowest.max(t.elapsed());
        common.push(greens_error(&u, 1.0, 2.0));
        annulus = greens_error(&u, 4.0 * h, 2.0);
    }
    let order = (common[0] / common[1]).log2();
    let detail = format!(
        "65^3 annulus rel {annulus:.3e}, order {order:.2}, slowest solve {:.1}s",
        slowest.as_secs_f64()
    );
    ensure(
        annulus <= 0.05 && order >= 1.5 && slowest < Duration::from_secs(120),
        || detail.clone(),
    )?;
    Ok(detail)
}

fn frequency_identities() -> Outcome {
    let g = Grid::cube([0.0; 3], 1.5, 65).map_err(|e| e.to_string())?;
    let sigma = ScalarField::constant(g, 1.0);
    let radii = geometric_ladder(0.1, LADDER_RATIO, 32).map_err(|e| e.to_string())?;
    let cases: [Case; 2] = [("x1", |p| p[0], 1.0), ("x1^2-x2^2", |p| p[0] * p[0] - p[1] * p[1], 2.0)];
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, f, degree) in cases {
        let u = ScalarField::from_fn(g, f);
        let c = frequency_curve(&u, &sigma, [0.0; 3], &radii, &Quadrature::default()).map_err(|e| e.to_string())?;
        let rep = check_frequency_identities(&c).map_err(|e| e.to_string())?;
        let n_dev = c
            .samples
            .iter()
            .map(|s| s.n.map_or(f64::INFINITY, |n| (n - degree).abs() / degree))
            .fold(0.0f64, f64::max);
        ok &= c.samples.len() == 32 && rep.max_a1_defect <= 0.02 && rep.max_a2_defect <= 0.02 && n_dev <= 0.02;
        parts.push(format!(
            "{name}: a1 {:.1e} a2 {:.1e} N {:.1e}",
            rep.max_a1_defect, rep.max_a2_defect, n_dev
        ));
    }
    let detail = parts.join("; ");
    ensure(ok, || detail.clone())?;
    Ok(detail)
}

fn inequality_suite() -> Outcome {
    let g = Grid::cube([0.0; 3], 2.0, 33).map_err(|e| e.to_string())?;
    let radii = geometric_ladder(0.3, LADDER_RATIO, 20).map_err(|e| e.to_string())?;
    let q = Quadrature::default();
    let (mut min_slack, mut worst_mono) = (f64::INFINITY, f64::INFINITY);
    let mut failures = Vec::new();
    for seed in 0..20 {
        let sol = random_sigma_solution(g, seed, &RandomSolutionSpec::default(), &SolverSettings::default())
            .map_err(|e| e.to_string())?;
        let c = frequency_curve(&sol.u, &sol.sigma, [0.1, -0.05, 0.0], &radii, &q).map_err(|e| e.to_string())?;
        let rep = check_frequency_identities(&c).map_err(|e| e.to_string())?;
        let mono = check_frequency_monotonicity(&c, monotonicity_mu(c.kappa, 2.0)).map_err(|e| e.to_string())?;
        min_slack = min_slack.min(rep.min_cs_slack);
        worst_mono = worst_mono.min(mono.worst_ratio);
        if !(rep.min_cs_slack >= -1e-8 && rep.k_bound_stated_holds && mono.passed) {
            failures.push(seed);
        }
    }
    let detail = format!("20 seeds, min CS slack {min_slack:.3e}, min step ratio {worst_mono:.4}");
    ensure(failures.is_empty(), || format!("{detail}, failing seeds {failures:?}"))?;
    Ok(detail)
}

/// Walks from `x` toward `x0` in steps of `delta` until `x0` is within reach.
fn hop_count(x: Point, x0: Point, delta: f64) -> usize {
    let len = distance(x, x0);
    let dir = [(x0[0] - x[0]) / len, (x0[1] - x[1]) / len, (x0[2] - x[2]) / len];
    let mut y = x;
    let mut hops = 0;
    while distance(y, x0) >= delta {
        for a in 0..3 {
            y[a] += delta * dir[a];
        }
        hops += 1;
    }
    hops
}

fn chain_of_balls_counts() -> Outcome {
    let domain = ([-2.0; 3], [2.0; 3]);
    let hand = chain_of_balls([0.5, 0.0, 0.0], [-0.5, 0.0, 0.0], 0.3, domain).map_err(|e| e.to_string())?;
    ensure(hand.n == 3, || format!("hand case gave N = {}", hand.n))?;
    let mut rng = ChaCha8Rng::seed_from_u64(1016);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let half: f64 = rng.gen_range(0.5..3.0);
        let lo = [-half; 3];
        let hi = [half; 3];
        let pick = |rng: &mut ChaCha8Rng| -> Point { std::array::from_fn(|_| rng.gen_range(-0.9 * half..0.9 * half)) };
        let (x, x0) = (pick(&mut rng), pick(&mut rng));
        let clearance = [x, x0]
            .iter()
            .flat_map(|p| p.iter().map(|c| half - c.abs()))
            .fold(f64::INFINITY, f64::min);
        let delta = rng.gen_range(0.01..0.99) * clearance / 3.0;
        let chain = chain_of_balls(x, x0, delta, (lo, hi)).map_err(|e| format!("instance {i}: {e}"))?;
        let bound = (6.0 * distance(x, x0) / delta).floor() as usize;
        ensure(chain.n <= bound, || format!("instance {i}: N = {} > {bound}", chain.n))?;
        ensure(chain.n == hop_count(x, x0, delta), || {
            format!(
                "instance {i}: N = {} but walk gives {}",
                chain.n,
                hop_count(x, x0, delta)
            )
        })?;
        worst = worst.max(chain.n as f64 / bound.max(1) as f64);
    }
    Ok(format!("hand N = 3, 1000 instances, max N/bound {worst:.3}"))
}

fn three_ball() -> Outcome {
    let q = Quadrature::default();
    let g = Grid::cube([0.0; 3], 1.5, 17).map_err(|e| e.to_string())?;
    let v = ScalarField::from_fn(g, |p| p[0]);
    let rep = three_ball_check(&v, [0.1, 0.0, 0.0], 0.25, [1.0, 2.0, 4.0], &q).map_err(|e| e.to_string())?;
    // Closed form: ||grad x1||_{L^2(B_r)} = sqrt(4 pi r^3 / 3).
    let norm = |r: f64| (4.0 * PI * r.powi(3) / 3.0).sqrt();
    let [k, l, m] = rep.radii;
    let oracle_defect = norm(l).ln() - 0.5 * (norm(k).ln() + norm(m).ln());
    let defect = rep.defect.ok_or("no defect for x1")?;
    ensure(defect.abs() < 1e-6 && oracle_defect.abs() < 1e-12, || {
        format!("defect {defect:.2e}")
    })?;

    let g = Grid::cube([0.0; 3], 2.0, 33).map_err(|e| e.to_string())?;
    let mut gammas = Vec::new();
    for seed in 0..20 {
        let sol = random_sigma_solution(g, seed, &RandomSolutionSpec::default(), &SolverSettings::default())
            .map_err(|e| e.to_string())?;
        let rep = three_ball_check(&sol.u, [0.1, -0.05, 0.0], 0.3, [1.0, 2.0, 4.0], &q).map_err(|e| e.to_string())?;
        let [nk, nl, nm] = rep.norms;
        let gamma = (nm / nl).ln() / (nm / nk).ln();
        ensure(gamma > 0.0 && gamma < 1.0 && rep.fitted_gamma.is_some(), || {
            format!("seed {seed}: gamma {gamma}")
        })?;
        gammas.push(gamma);
    }
    let lo = gammas.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = gammas.iter().copied().fold(0.0f64, f64::max);
    Ok(format!(
        "x1 defect {defect:.2e}, 20 solutions gamma in [{lo:.3}, {hi:.3}]"
    ))
}

fn recon_setup(n: usize) -> Result<(Grid, IndexBox, SourceConfig), String> {
    let g = Grid::cube([0.0; 3], 4.0, n).map_err(|e| e.to_string())?;
    let omega = g.index_box([-1.0; 3], [1.0; 3]).map_err(|e| e.to_string())?;
    let sources = SourceConfig {
        xi1: [2.5, 0.0, 0.0],
        xi2: [-2.5, 0.0, 0.0],
        regularization: Regularization::SingularitySplit,
        box_margin: 0.5,
    };
    Ok((g, omega, sources))
}

fn recon_errors(pair: &AdmissiblePair, omega: &IndexBox, sources: &SourceConfig) -> Result<(f64, f64), String> {
    let fwd = forward(pair, sources, omega, &SolverSettings::default()).map_err(|e| e.to_string())?;
    let traces = Traces::from_pair(pair, omega).map_err(|e| e.to_string())?;
    let rec = reconstruct(&fwd.data, &traces, &ReconSettings::default()).map_err(|e| e.to_string())?;
    Ok((rel_err(&rec.a_hat, &traces.a), rel_err(&rec.b_hat, &traces.b)))
}

fn reconstruction_oracle() -> Outcome {
    let (g, omega, sources) = recon_setup(65)?;
    let constant = AdmissiblePair::constant(g, 1.0, 2.0).map_err(|e| e.to_string())?;
    let (ea, eb) = recon_errors(&constant, &omega, &sources)?;
    let mut bump = Vec::new();
    for n in [33, 65] {
        let (g, omega, sources) = recon_setup(n)?;
        let a = ScalarField::from_fn(g, |p| 1.0 + 0.2 * poly_bump(p, [0.1, -0.05, 0.0], 0.8));
        let b = ScalarField::from_fn(g, |p| 2.0 + 0.4 * poly_bump(p, [0.1, -0.05, 0.0], 0.8));
        let pair = AdmissiblePair::certify_tight(a, b).map_err(|e| e.to_string())?;
        let (a_err, b_err) = recon_errors(&pair, &omega, &sources)?;
        bump.push(a_err.max(b_err));
    }
    let ratio = bump[0] / bump[1];
    let detail = format!(
        "constant a {ea:.2e} b {eb:.2e}; bump {:.2e} -> {:.2e} (x{ratio:.2})",
        bump[0], bump[1]
    );
    ensure(ea <= 0.01 && eb <= 0.01 && ratio >= 1.5, || detail.clone())?;
    Ok(detail)
}

fn quotient_invariance() -> Outcome {
    let (g, omega, sources) = recon_setup(33)?;
    let a = ScalarField::from_fn(g, |p| 1.0 + 0.2 * poly_bump(p, [0.1, -0.05, 0.0], 0.8));
    let pair = AdmissiblePair::certify_tight(a, ScalarField::constant(g, 2.0)).map_err(|e| e.to_string())?;
    let data = generate_data(&pair, &sources, &omega, &SolverSettings::default()).map_err(|e| e.to_string())?;
    let w = quotient_field(&data, DEFAULT_V1_FLOOR).map_err(|e| e.to_string())?;
    let og = *data.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let (c0, c1, k): (f64, f64, [f64; 3]) = (
            rng.gen_range(0.1..10.0),
            rng.gen_range(0.0..0.9),
            std::array::from_fn(|_| rng.gen_range(-4.0..4.0)),
        );
        let phi = ScalarField::from_fn(og, |p| {
            c0 * (1.0 + c1 * (k[0] * p[0] + k[1] * p[1] + k[2] * p[2]).sin())
        });
        let w2 = quotient_field(&data.scaled(&phi).map_err(|e| e.to_string())?, DEFAULT_V1_FLOOR)
            .map_err(|e| e.to_string())?;
        for (x, y) in w.values().iter().zip(w2.values()) {
            worst = worst.max((x - y).abs() / x.abs());
        }
    }
    let detail = format!("5 factors, max rel change {worst:.2e}");
    ensure(worst <= 1e-12, || detail.clone())?;
    Ok(detail)
}

fn constant_quotient(n: usize) -> Result<ScalarField, String> {
    let g = Grid::cube([0.0; 3], 3.0, n).map_err(|e| e.to_string())?;
    let pair = AdmissiblePair::constant(g, 1.0, 1.0).map_err(|e| e.to_string())?;
    let s = SolverSettings::default();
    let solve = |xi| greens_function(&pair, xi, Regularization::SingularitySplit, &s).map_err(|e| e.to_string());
    let (u1, _) = solve([1.0, 0.0, 0.0])?;
    let (u2, _) = solve([-1.0, 0.0, 0.0])?;
    u2.zip_map(&u1, |a, b| a / b).map_err(|e| e.to_string())
}

fn near_source() -> Outcome {
    let q = Quadrature::default();
    let (xi1, xi2) = ([1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]);
    let settings = NearSourceSettings::default();
    let mut reps = Vec::new();
    for n in [33, 65] {
        let w = constant_quotient(n)?;
        reps.push(near_source_gradient_check(&w, xi1, xi2, &settings, &q).map_err(|e| e.to_string())?);
    }
    let change = (reps[0].max_gradient_norm - reps[1].max_gradient_norm).abs() / reps[1].max_gradient_norm;
    let detail = format!(
        "band c* {}: fit {:.2} / {:.2}, gradient change {:.2}%",
        settings.c_star,
        reps[0].c_star_fit,
        reps[1].c_star_fit,
        100.0 * change
    );
    ensure(reps.iter().all(|r| r.band_holds && r.passed) && change <= 0.1, || {
        detail.clone()
    })?;
    Ok(detail)
}

fn stability_ladder() -> Outcome {
    let g = Grid::cube([0.0; 3], 4.0, 49).map_err(|e| e.to_string())?;
    let omega = g.index_box([-1.0; 3], [1.0; 3]).map_err(|e| e.to_string())?;
    let (_, _, sources) = recon_setup(49)?;
    let base = AdmissiblePair::certify(ScalarField::constant(g, 1.0), ScalarField::constant(g, 2.0), 8.0, 4.0)
        .map_err(|e| e.to_string())?;
    let spec = PerturbationSpec {
        bump_center: [0.1, -0.05, 0.0],
        bump_radius: 0.8,
        target: Target::A,
    };
    let eps = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1];
    let settings = StabilitySettings::default();
    let lad = run_ladder(&base, &spec, &eps, &sources, &omega, &settings).map_err(|e| e.to_string())?;
    let gamma = lad.gamma_hat.ok_or("no fitted exponent")?;
    let r2 = lad.r2.ok_or("no fit quality")?;
    let interp = interpolation_check(
        &base,
        &spec,
        eps[4],
        &sources,
        &omega,
        &settings,
        &[0.1, 0.2, 0.3, 0.45],
        &Quadrature::default(),
    )
    .map_err(|e| e.to_string())?;
    let detail = format!(
        "gamma {gamma:.4}, r2 {r2:.6}, monotone {}, interpolation {} samples min slack {:.3}",
        lad.data_monotone, interp.samples, interp.min_slack
    );
    ensure(
        gamma > 0.0 && gamma <= 1.05 && r2 >= 0.9 && lad.data_monotone && interp.passed && interp.violations == 0,
        || detail.clone(),
    )?;
    Ok(detail)
}

const DETERMINISM_CONFIG: &str = r#"
seed = 11

[grid]
lower = [-4.0, -4.0, -4.0]
upper = [4.0, 4.0, 4.0]
n = 17

[pair]
kind = "constant"
a = 1.0
b = 2.0
lambda = 8.0
kappa = 4.0

[sources]
xi1 = [2.5, 0.0, 0.0]
xi2 = [-2.5, 0.0, 0.0]

[omega]
lower = [-1.0, -1.0, -1.0]
upper = [1.0, 1.0, 1.0]

[ucp]
field = "random"
r0 = 0.3
count = 8
"#;

fn payloads(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| e.to_string())? {
        let entry = entry.map_err(|e| e.to_string())?;
        let name = entry.file_name().to_string_lossy().into_owned();
        // The manifest carries wall-clock timestamps and the output path.
        if name != MANIFEST_FILE {
            out.insert(name, fs::read(entry.path()).map_err(|e| e.to_string())?);
        }
    }
    Ok(out)
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let commands = [
        Command::Forward,
        Command::Reconstruct,
        Command::Stability,
        Command::Ucp(UcpCheck::Freq),
    ];
    let mut runs = Vec::new();
    for k in 0..2 {
        let mut per_command = Vec::new();
        for (i, cmd) in commands.iter().enumerate() {
            let mut config = parse_config(DETERMINISM_CONFIG).map_err(|e| e.to_string())?;
            config.out = tmp.path().join(format!("run{k}/{i}"));
            let m = run(&config, cmd).map_err(|e| e.to_string())?;
            per_command.push((m.artifacts, m.stages, payloads(&config.out)?));
        }
        runs.push(per_command);
    }
    let files: usize = runs[0].iter().map(|r| r.2.len()).sum();
    for (i, (a, b)) in runs[0].iter().zip(&runs[1]).enumerate() {
        ensure(a == b, || format!("{} differs between runs", commands[i].name()))?;
    }
    Ok(format!("{} commands, {files} payload files identical", commands.len()))
}

const CRITERIA: [Criterion; 12] = [
    Criterion {
        id: 1,
        name: "bessel and kernel closed forms",
        budget: Duration::from_secs(1),
        check: bessel_and_kernel,
    },
    Criterion {
        id: 2,
        name: "two-sided bound certificate",
        budget: Duration::from_secs(1),
        check: two_sided_bound,
    },
    Criterion {
        id: 3,
        name: "green's function accuracy",
        budget: Duration::from_secs(240),
        check: greens_function_accuracy,
    },
    Criterion {
        id: 4,
        name: "frequency identities",
        budget: Duration::from_secs(30),
        check: frequency_identities,
    },
    Criterion {
        id: 5,
        name: "inequality suite",
        budget: Duration::from_secs(300),
        check: inequality_suite,
    },
    Criterion {
        id: 6,
        name: "chain of balls",
        budget: Duration::from_secs(1),
        check: chain_of_balls_counts,
    },
    Criterion {
        id: 7,
        name: "three-ball inequality",
        budget: Duration::from_secs(120),
        check: three_ball,
    },
    Criterion {
        id: 8,
        name: "reconstruction oracle",
        budget: Duration::from_secs(600),
        check: reconstruction_oracle,
    },
    Criterion {
        id: 9,
        name: "quotient invariance",
        budget: Duration::from_secs(10),
        check: quotient_invariance,
    },
    Criterion {
        id: 10,
        name: "near-source band",
        budget: Duration::from_secs(180),
        check: near_source,
    },
    Criterion {
        id: 11,
        name: "stability ladder",
        budget: Duration::from_secs(1800),
        check: stability_ladder,
    },
    Criterion {
        id: 12,
        name: "determinism",
        budget: Duration::from_secs(120),
        check: determinism,
    },
];

fn main() -> ExitCode {
    // Respect `cargo test -- <filter>` by criterion number.
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for c in CRITERIA.iter().filter(|c| filter.is_empty() || filter.contains(&c.id)) {
        let t = Instant::now();
        let outcome = (c.check)();
        let elapsed = t.elapsed();
        let (verdict, detail) = match outcome {
            Ok(d) if elapsed <= c.budget => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d}; over budget {:.0}s", c.budget.as_secs_f64())),
            Err(d) => ("FAIL", d),
        };
        if verdict == "FAIL" {
            failed += 1;
        }
        println!(
            "{verdict} {:>2} {:<32} {:>8.2}s  {detail}",
            c.id,
            c.name,
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
