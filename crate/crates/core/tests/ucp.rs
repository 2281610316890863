use std::f64::consts::PI;

use proptest::prelude::*;
use qpat_core::elliptic::{greens_function, AdmissiblePair, Regularization, SolverSettings};
use qpat_core::mesh::{distance, Grid, Point, Quadrature, ScalarField};
use qpat_core::ucp::*;

fn unit_sigma(g: Grid) -> ScalarField {
    ScalarField::constant(g, 1.0)
}

fn ladder() -> Vec<f64> {
    geometric_ladder(0.1, LADDER_RATIO, 32).unwrap()
}

#[test]
fn constant_field_has_zero_frequency() {
    let g = Grid::cube([0.0; 3], 1.5, 33).unwrap();
    let u = ScalarField::constant(g, 1.0);
    let c = frequency_curve(&u, &unit_sigma(g), [0.0; 3], &ladder(), &Quadrature::default()).unwrap();
    for s in &c.samples {
        assert_eq!(s.d, 0.0);
        assert_eq!(s.n, Some(0.0));
        assert!((s.h - 4.0 * PI * s.r * s.r).abs() < 1e-12 * s.h);
    }
    let rep = check_frequency_identities(&c).unwrap();
    assert!(rep.max_a1_defect < 1e-10);
    assert_eq!(rep.max_a2_defect, 0.0);
}

#[test]
fn linear_field_closed_forms() {
    let g = Grid::cube([0.0; 3], 1.5, 33).unwrap();
    let u = ScalarField::from_fn(g, |p| p[0]);
    let c = frequency_curve(&u, &unit_sigma(g), [0.0; 3], &ladder(), &Quadrature::default()).unwrap();
    for s in &c.samples {
        let r = s.r;
        // H = r^2 |dB_r| / 3, D = |B_r|, K = 4 pi r^5 / 15, H^ = |dB_r| / 3.
        assert!((s.h / (4.0 * PI * r.powi(4) / 3.0) - 1.0).abs() < 1e-3);
        assert!((s.d / (4.0 * PI * r.powi(3) / 3.0) - 1.0).abs() < 1e-12);
        assert!((s.k / (4.0 * PI * r.powi(5) / 15.0) - 1.0).abs() < 1e-3);
        assert!((s.h_hat / (4.0 * PI * r * r / 3.0) - 1.0).abs() < 1e-3);
        assert_eq!((s.h_tilde, s.d_tilde), (0.0, 0.0));
        assert!((s.n.unwrap() - 1.0).abs() < 1e-3);
    }
}

fn homogeneous_check(u: fn(Point) -> f64, degree: f64) {
    let g = Grid::cube([0.0; 3], 1.5, 65).unwrap();
    let field = ScalarField::from_fn(g, u);
    let c = frequency_curve(&field, &unit_sigma(g), [0.0; 3], &ladder(), &Quadrature::default()).unwrap();
    let rep = check_frequency_identities(&c).unwrap();
    assert!(rep.max_a1_defect <= 0.02, "{}", rep.max_a1_defect);
    assert!(rep.max_a2_defect <= 0.02, "{}", rep.max_a2_defect);
    for s in &c.samples {
        assert!((s.n.unwrap() - degree).abs() <= 0.02 * degree);
    }
    assert!(rep.min_cs_slack >= -1e-8);
    let mono = check_frequency_monotonicity(&c, monotonicity_mu(c.kappa, 1.5)).unwrap();
    assert!(mono.passed);
}

#[test]
fn degree_one_identities() {
    homogeneous_check(|p| p[0], 1.0);
}

#[test]
fn degree_two_identities() {
    homogeneous_check(|p| p[0] * p[0] - p[1] * p[1], 2.0);
}

#[test]
fn identity_statement_variant_differs_for_variable_sigma() {
    // u = x1 solves div(sigma grad u) = 0 when sigma depends on x2 and x3 only.
    let g = Grid::cube([0.0; 3], 1.5, 49).unwrap();
    let sigma = ScalarField::from_fn(g, |p| 1.0 + 0.3 * p[1] + 0.2 * p[2] * p[2]);
    let u = ScalarField::from_fn(g, |p| p[0]);
    let radii = geometric_ladder(0.2, LADDER_RATIO, 16).unwrap();
    let c = frequency_curve(&u, &sigma, [0.0; 3], &radii, &Quadrature::default()).unwrap();
    let rep = check_frequency_identities(&c).unwrap();
    assert!(rep.max_a1_defect < 1e-3, "{}", rep.max_a1_defect);
    assert!(rep.max_a2_defect < 1e-3, "{}", rep.max_a2_defect);
    assert!(rep.max_a2_statement_defect > 10.0 * rep.max_a2_defect);
}

#[test]
fn k_bound_as_stated_is_scale_dependent() {
    // For u = 1 and sigma = 1, K / H = r / 3 while the stated factor is delta^3 e^delta / 3.
    let g = Grid::cube([0.0; 3], 0.5, 17).unwrap();
    let u = ScalarField::constant(g, 1.0);
    let radii = geometric_ladder(0.05, LADDER_RATIO, 24).unwrap();
    let c = frequency_curve(&u, &unit_sigma(g), [0.0; 3], &radii, &Quadrature::default()).unwrap();
    let rep = check_frequency_identities(&c).unwrap();
    assert!(rep.k_bound_integrated_holds);
    assert!(!rep.k_bound_stated_holds);
    let first_fail = rep.k_bound.iter().find(|b| b.k > b.stated).unwrap();
    assert!(first_fail.r > 0.5f64.powi(3) * 0.5f64.exp() * 0.99);
}

#[test]
fn random_solutions_satisfy_the_inequalities() {
    let g = Grid::cube([0.0; 3], 2.0, 33).unwrap();
    let q = Quadrature::default();
    let radii = geometric_ladder(0.3, LADDER_RATIO, 20).unwrap();
    for seed in 0..5 {
        let sol = random_sigma_solution(g, seed, &RandomSolutionSpec::default(), &SolverSettings::default()).unwrap();
        let c = frequency_curve(&sol.u, &sol.sigma, [0.1, -0.05, 0.0], &radii, &q).unwrap();
        let rep = check_frequency_identities(&c).unwrap();
        assert!(rep.min_cs_slack >= -1e-8);
        assert!(rep.k_bound_stated_holds && rep.k_bound_integrated_holds);
        assert!(rep.max_a1_defect < 0.02 && rep.max_a2_defect < 0.02);
        let mono = check_frequency_monotonicity(&c, monotonicity_mu(c.kappa, 2.0)).unwrap();
        assert!(mono.passed, "seed {seed}: {}", mono.worst_ratio);
        let tb = three_ball_check(&sol.u, c.center, 0.3, [1.0, 2.0, 4.0], &q).unwrap();
        assert!(tb.fitted_gamma.is_some());
        assert!(tb.norms[0] < tb.norms[1] && tb.norms[1] < tb.norms[2]);
    }
}

#[test]
fn three_ball_linear_field() {
    let g = Grid::cube([0.0; 3], 1.5, 17).unwrap();
    let v = ScalarField::from_fn(g, |p| p[0]);
    let rep = three_ball_check(&v, [0.1, 0.0, 0.0], 0.25, [1.0, 2.0, 4.0], &Quadrature::default()).unwrap();
    assert!(rep.defect.unwrap().abs() < 1e-6);
    assert!((rep.fitted_gamma.unwrap() - 0.5).abs() < 1e-6);
    for (n, r) in rep.norms.iter().zip(rep.radii) {
        assert!((n * n - 4.0 * PI * r.powi(3) / 3.0).abs() < 1e-10 * n * n);
    }
}

#[test]
fn three_ball_constant_is_flagged() {
    let g = Grid::cube([0.0; 3], 1.5, 17).unwrap();
    let v = ScalarField::constant(g, 3.0);
    let rep = three_ball_check(&v, [0.0; 3], 0.25, [1.0, 2.0, 4.0], &Quadrature::default()).unwrap();
    assert!(rep.zero_gradient);
    assert!(rep.fitted_gamma.is_none());
    assert!(three_ball_check(&v, [0.0; 3], 0.25, [2.0, 1.0, 4.0], &Quadrature::default()).is_err());
    assert!(three_ball_check(&v, [0.0; 3], 0.5, [1.0, 2.0, 4.0], &Quadrature::default()).is_err());
}

fn constant_quotient(n: usize) -> ScalarField {
    let g = Grid::cube([0.0; 3], 3.0, n).unwrap();
    let pair = AdmissiblePair::constant(g, 1.0, 1.0).unwrap();
    let s = SolverSettings::default();
    let (u1, _) = greens_function(&pair, [1.0, 0.0, 0.0], Regularization::SingularitySplit, &s).unwrap();
    let (u2, _) = greens_function(&pair, [-1.0, 0.0, 0.0], Regularization::SingularitySplit, &s).unwrap();
    u2.zip_map(&u1, |a, b| a / b).unwrap()
}

#[test]
fn three_ball_on_green_quotient() {
    let w = constant_quotient(33);
    let rep = three_ball_check(&w, [-1.6, 0.2, 0.0], 0.1, [1.0, 2.0, 4.0], &Quadrature::default()).unwrap();
    let gamma = rep.fitted_gamma.unwrap();
    assert!(gamma > 0.0 && gamma < 1.0);
}

#[test]
fn near_source_band_closed_form() {
    // w = G(. - xi2) / G(. - xi1) for a = b = 1 at separation 0.8.
    let (xi1, xi2) = ([0.4, 0.0, 0.0], [-0.4, 0.0, 0.0]);
    let g = Grid::cube([0.0; 3], 1.0, 81).unwrap();
    let kernel = |r: f64| (-r).exp() / (4.0 * PI * r);
    let w = ScalarField::from_fn(g, |p| {
        kernel(distance(p, xi2).max(1e-9)) / kernel(distance(p, xi1).max(1e-9))
    });
    let settings = NearSourceSettings {
        c_star: 3.0,
        threshold: 0.0,
        ..NearSourceSettings::default()
    };
    let rep = near_source_gradient_check(&w, xi1, xi2, &settings, &Quadrature::default()).unwrap();
    assert!(rep.band_holds, "{}", rep.c_star_fit);
    assert!(rep.max_gradient_norm > 0.0);
}

#[test]
fn near_source_numerical_quotient_is_stable() {
    let q = Quadrature::default();
    let (xi1, xi2) = ([1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]);
    let settings = NearSourceSettings::default();
    let coarse = near_source_gradient_check(&constant_quotient(33), xi1, xi2, &settings, &q).unwrap();
    let fine = near_source_gradient_check(&constant_quotient(65), xi1, xi2, &settings, &q).unwrap();
    assert!(coarse.passed && fine.passed);
    let change = (coarse.max_gradient_norm - fine.max_gradient_norm).abs() / fine.max_gradient_norm;
    assert!(change <= 0.1, "{change}");
}

#[test]
fn near_source_requires_coverage() {
    let g = Grid::cube([0.0; 3], 1.0, 9).unwrap();
    let w = ScalarField::constant(g, 1.0);
    let r = near_source_gradient_check(
        &w,
        [0.5, 0.0, 0.0],
        [-0.9, 0.0, 0.0],
        &NearSourceSettings::default(),
        &Quadrature::default(),
    );
    assert!(r.is_err());
}

#[test]
fn doubling_slopes_of_simple_fields() {
    let g = Grid::cube([0.0; 3], 1.5, 33).unwrap();
    let q = Quadrature::default();
    let radii = geometric_ladder(0.1, LADDER_RATIO, 16).unwrap();
    let one = ScalarField::constant(g, 1.0);
    let rep = doubling_lower_bound_check(&one, &one, [0.0; 3], [0.0; 3], 1.0, &radii, &q).unwrap();
    assert!((rep.order_fit.unwrap().slope - 3.0).abs() < 1e-6);
    assert!(rep.order_within_ceiling && rep.poincare_holds);
    let x1 = ScalarField::from_fn(g, |p| p[0]);
    let rep = doubling_lower_bound_check(&x1, &one, [0.0; 3], [0.0; 3], 1.0, &radii, &q).unwrap();
    assert!((rep.order_fit.unwrap().slope - 5.0).abs() < 1e-3);
    assert!((rep.gradient_fit.unwrap().slope - 3.0).abs() < 1e-6);
    assert!(rep.order_within_ceiling && rep.poincare_holds, "{rep:?}");
    // ||x1 - mean||^2 / ||grad x1||^2 = r^2 / 5 on every ball.
    for row in &rep.rows {
        assert!((row.mean_removed_sq / row.grad_sq - row.r * row.r / 5.0).abs() < 1e-3 * row.r * row.r);
    }
    let zero = ScalarField::constant(g, 0.0);
    let rep = doubling_lower_bound_check(&zero, &one, [0.0; 3], [0.0; 3], 1.0, &radii, &q).unwrap();
    assert!(rep.zero_norm && rep.order_fit.is_none());
}

#[test]
fn doubling_on_random_solution() {
    let g = Grid::cube([0.0; 3], 2.0, 33).unwrap();
    let q = Quadrature::default();
    let sol = random_sigma_solution(g, 3, &RandomSolutionSpec::default(), &SolverSettings::default()).unwrap();
    let radii = geometric_ladder(0.2, LADDER_RATIO, 12).unwrap();
    let rep = doubling_lower_bound_check(&sol.u, &sol.sigma, [0.5, 0.0, 0.0], [0.0; 3], 0.6, &radii, &q).unwrap();
    assert!(
        rep.order_within_ceiling,
        "{:?} vs {:?}",
        rep.order_fit, rep.order_ceiling
    );
    assert!(rep.poincare_holds);
    assert!((rep.relative_distance - 0.5 / 0.6).abs() < 1e-12);
}

/// Solves `f'' + 2 f' / r + (lambda - l(l+1)/r^2) f = 0` from `f ~ r^l` and
/// returns `f'(1)`.
fn radial_neumann_residual(l: i32, lambda: f64) -> f64 {
    let steps = 4000;
    let r0 = 1e-4;
    let h = (1.0 - r0) / steps as f64;
    let ll = (l * (l + 1)) as f64;
    let rhs = |r: f64, y: [f64; 2]| [y[1], -2.0 / r * y[1] - (lambda - ll / (r * r)) * y[0]];
    let mut y = [r0.powi(l), l as f64 * r0.powi(l - 1)];
    let mut r = r0;
    for _ in 0..steps {
        let k1 = rhs(r, y);
        let k2 = rhs(r + h / 2.0, [y[0] + h / 2.0 * k1[0], y[1] + h / 2.0 * k1[1]]);
        let k3 = rhs(r + h / 2.0, [y[0] + h / 2.0 * k2[0], y[1] + h / 2.0 * k2[1]]);
        let k4 = rhs(r + h, [y[0] + h * k3[0], y[1] + h * k3[1]]);
        for i in 0..2 {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        r += h;
    }
    y[1]
}

fn first_neumann_eigenvalue(l: i32) -> f64 {
    let (mut lo, mut hi) = (0.5, 0.5);
    let sign = radial_neumann_residual(l, lo).signum();
    while radial_neumann_residual(l, hi).signum() == sign {
        lo = hi;
        hi += 0.5;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if radial_neumann_residual(l, mid).signum() == sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn poincare_constant_matches_radial_eigensolve() {
    let l1 = first_neumann_eigenvalue(1);
    assert!((l1 - MU2_UNIT_BALL).abs() < 1e-6, "{l1}");
    // Other angular sectors start higher.
    assert!(first_neumann_eigenvalue(0) > l1);
    assert!(first_neumann_eigenvalue(2) > l1);
}

#[test]
fn weighted_interpolation_trivial_cases() {
    let g = Grid::cube([0.0; 3], 1.0, 17).unwrap();
    let omega = g.index_box([-0.5; 3], [0.5; 3]).unwrap();
    let u = ScalarField::from_fn(g, |p| p[0] + 0.5 * p[1] * p[2]);
    let q = Quadrature::default();
    for f in [ScalarField::constant(g, 0.7), ScalarField::constant(g, 0.0)] {
        let rep = weighted_interpolation_check(&f, &u, &omega, 0.5, &[0.1, 0.2, 0.4], &q).unwrap();
        assert!(rep.passed && rep.samples > 0);
    }
    let f = ScalarField::from_fn(g, |p| (3.0 * p[0]).sin() + p[1] * p[1]);
    let rep = weighted_interpolation_check(&f, &u, &omega, 0.5, &[0.1, 0.2, 0.4], &q).unwrap();
    assert!(rep.passed, "{}", rep.min_slack);
    assert_eq!(rep.tightest.len(), 9 * 9 * 9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn chain_respects_hop_bound(
        x in prop::array::uniform3(-1.5f64..1.5),
        x0 in prop::array::uniform3(-1.5f64..1.5),
        frac in 0.01f64..0.99,
    ) {
        let domain = ([-2.0; 3], [2.0; 3]);
        let clearance = [x, x0].iter().map(|p| p.iter().map(|c| 2.0 - c.abs()).fold(f64::INFINITY, f64::min)).fold(f64::INFINITY, f64::min);
        let delta = frac * clearance / 3.0;
        let chain = chain_of_balls(x, x0, delta, domain).unwrap();
        prop_assert!(chain.n <= chain.n0_bound);
        prop_assert_eq!(chain.centers.len(), chain.n + 1);
        for w in chain.centers.windows(2) {
            prop_assert!((distance(w[0], w[1]) - delta).abs() < 1e-9);
        }
        prop_assert!(distance(*chain.centers.last().unwrap(), x0) < delta * (1.0 + 1e-9));
    }

    #[test]
    fn lower_bound_decreases_with_distance(
        m in 1.0f64..100.0,
        eta_frac in 0.01f64..0.99,
        gamma in 0.05f64..0.95,
        d1 in 0.0f64..2.0,
        d2 in 0.0f64..2.0,
    ) {
        let (near, far) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let a = lower_bound_eval(m, eta_frac * m, gamma, 1.5, 1.0, near, 0.5).unwrap();
        let b = lower_bound_eval(m, eta_frac * m, gamma, 1.5, 1.0, far, 0.5).unwrap();
        prop_assert!(b <= a);
        prop_assert!(a >= 0.0);
    }
}
