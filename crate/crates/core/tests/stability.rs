use qpat_core::elliptic::{AdmissiblePair, Regularization, SourceConfig};
use qpat_core::inverse::{forward, reconstruct, ReconSettings, Traces};
use qpat_core::mesh::{Grid, IndexBox, Quadrature, ScalarField};
use qpat_core::stability::{
    interpolation_check, reconstruction_error_ladder, run_ladder, PerturbationSpec, StabilitySettings, Target,
    GAMMA_CAP,
};

fn setup(n: usize) -> (AdmissiblePair, IndexBox, SourceConfig, PerturbationSpec) {
    let g = Grid::cube([0.0; 3], 4.0, n).unwrap();
    let omega = g.index_box([-1.0; 3], [1.0; 3]).unwrap();
    let sources = SourceConfig {
        xi1: [2.5, 0.0, 0.0],
        xi2: [-2.5, 0.0, 0.0],
        regularization: Regularization::SingularitySplit,
        box_margin: 0.5,
    };
    let base = AdmissiblePair::certify(ScalarField::constant(g, 1.0), ScalarField::constant(g, 2.0), 8.0, 4.0).unwrap();
    let spec = PerturbationSpec {
        bump_center: [0.1, -0.05, 0.0],
        bump_radius: 0.8,
        target: Target::A,
    };
    (base, omega, sources, spec)
}

const LADDER: [f64; 5] = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1];

#[test]
fn five_point_ladder_has_holder_slope() {
    let (base, omega, sources, spec) = setup(33);
    let lad = run_ladder(&base, &spec, &LADDER, &sources, &omega, &StabilitySettings::default()).unwrap();
    let gamma = lad.gamma_hat.unwrap();
    assert!(gamma > 0.0 && gamma <= GAMMA_CAP, "gamma {gamma}");
    assert!(lad.gamma_in_range());
    assert!(lad.r2.unwrap() >= 0.9);
    assert!(lad.data_monotone);
    assert_eq!(lad.fit.unwrap().points, 5);
    for e in &lad.entries {
        assert_eq!(e.trace_mismatch, 0.0);
        assert!(e.data_dist <= lad.lipschitz_k * e.eps * (1.0 + 1e-12));
        assert_eq!(e.b_dist, 0.0);
        assert!(e.sigma_dist > 0.0);
    }
    // Hölder norms are homogeneous, so the coefficient distance is linear in eps.
    let slope0 = lad.entries[0].coeff_dist / LADDER[0];
    for e in &lad.entries {
        assert!((e.coeff_dist / e.eps - slope0).abs() <= 1e-9 * slope0);
    }
}

#[test]
fn doubling_eps_doubles_data_distance() {
    let (base, omega, sources, spec) = setup(33);
    let eps = [0.0, 1.25e-3, 2.5e-3, 5e-3, 1e-2];
    let lad = run_ladder(&base, &spec, &eps, &sources, &omega, &StabilitySettings::default()).unwrap();
    let zero = &lad.entries[0];
    assert_eq!(zero.data_dist, 0.0);
    assert_eq!(zero.coeff_dist, 0.0);
    assert_eq!(zero.sigma_dist, 0.0);
    assert_eq!(lad.fit.unwrap().points, 4);
    for w in lad.entries[1..].windows(2) {
        let ratio = w[1].data_dist / w[0].data_dist;
        assert!((1.6..=2.4).contains(&ratio), "ratio {ratio} at eps {}", w[1].eps);
    }
}

#[test]
fn reconstruction_error_grows_with_noise() {
    let (base, omega, sources, spec) = setup(33);
    let settings = ReconSettings::default();
    let eps = [0.0, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1];
    let lad = reconstruction_error_ladder(&base, &spec, &eps, &sources, &omega, &settings).unwrap();
    assert!(lad.inversions <= 1, "inversions {}", lad.inversions);
    let slope = lad.fit.unwrap().slope;
    assert!(slope > 0.0 && slope <= 1.0, "slope {slope}");

    // The eps = 0 rung is the clean-data discretization error.
    let clean = forward(&base, &sources, &omega, &settings.solver).unwrap();
    let traces = Traces::from_pair(&base, &omega).unwrap();
    let rec = reconstruct(&clean.data, &traces, &settings).unwrap();
    let err = rec
        .a_hat
        .values()
        .iter()
        .zip(traces.a.values())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let first = lad.entries[0];
    assert_eq!(first.noise, 0.0);
    assert_eq!(first.a_error, err / traces.a.max_abs());
    assert!(!first.degenerate);
}

#[test]
fn invalid_ladders_are_rejected() {
    let (base, omega, sources, spec) = setup(17);
    let s = StabilitySettings::default();
    assert!(run_ladder(&base, &spec, &[1e-2, 1e-3], &sources, &omega, &s).is_err());
    assert!(run_ladder(&base, &spec, &[-1e-3], &sources, &omega, &s).is_err());
    let outside = PerturbationSpec {
        bump_center: [0.9, 0.0, 0.0],
        ..spec
    };
    assert!(run_ladder(&base, &outside, &[1e-3], &sources, &omega, &s).is_err());
    // A large bump breaks the (lambda, kappa) certificate and is tagged with its eps.
    let err = run_ladder(&base, &spec, &[1e-3, 50.0], &sources, &omega, &s).unwrap_err();
    assert!(err.to_string().contains("eps = 5e1"), "{err}");
}

#[test]
fn interpolation_inequality_holds_for_bump_difference() {
    let (base, omega, sources, spec) = setup(33);
    let report = interpolation_check(
        &base,
        &spec,
        1e-2,
        &sources,
        &omega,
        &StabilitySettings::default(),
        &[0.1, 0.2, 0.3, 0.45],
        &Quadrature::default(),
    )
    .unwrap();
    assert!(report.samples > 100);
    assert_eq!(report.violations, 0);
    assert!(report.passed);
}
