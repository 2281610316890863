use qpat_core::elliptic::{
    apply_l, decay_slope, greens_function, solve_conductivity_dirichlet, AdmissiblePair, DecayFit, FaceMean,
    Regularization, SolverSettings, Stencil,
};
use qpat_core::mesh::{distance, Grid, ScalarField};

/// Independent closed form of the unit kernel in three dimensions.
fn kernel(mu: f64, nu: f64, r: f64) -> f64 {
    (-(nu / mu).sqrt() * r).exp() / (4.0 * std::f64::consts::PI * mu * r)
}

fn max_rel_error(u: &ScalarField, r_lo: f64, r_hi: f64, nu: f64) -> f64 {
    let g = u.grid();
    let mut worst = 0.0f64;
    for (idx, &v) in u.values().iter().enumerate() {
        let r = distance(g.node_coords(idx), [0.0; 3]);
        if r >= r_lo - 1e-12 && r <= r_hi + 1e-12 {
            let exact = kernel(1.0, nu, r);
            worst = worst.max((v - exact).abs() / exact);
        }
    }
    worst
}

#[test]
fn greens_function_converges_to_closed_form() {
    let settings = SolverSettings::default();
    let mut errs = Vec::new();
    for n in [33, 65] {
        let g = Grid::cube([0.0; 3], 4.0, n).unwrap();
        let h = g.spacing()[0];
        let pair = AdmissiblePair::constant(g, 1.0, 1.0).unwrap();
        let (u, rep) = greens_function(&pair, [0.0; 3], Regularization::SingularitySplit, &settings).unwrap();
        assert!(rep.residual <= rep.tolerance);
        let annulus = max_rel_error(&u, 4.0 * h, 2.0, 1.0);
        let common = max_rel_error(&u, 1.0, 2.0, 1.0);
        eprintln!(
            "n={n} iters={} annulus={annulus:.3e} common={common:.3e}",
            rep.iterations
        );
        errs.push(common);
        if n == 65 {
            assert!(annulus <= 0.05);
        }
    }
    let order = (errs[0] / errs[1]).log2();
    eprintln!("order={order:.3}");
    assert!(order >= 1.5);
}

#[test]
fn discrete_delta_converges_at_first_order_at_least() {
    let settings = SolverSettings::default();
    let mut errs = Vec::new();
    for n in [17, 33] {
        let g = Grid::cube([0.0; 3], 4.0, n).unwrap();
        let pair = AdmissiblePair::constant(g, 1.0, 1.0).unwrap();
        let (u, _) = greens_function(&pair, [0.0; 3], Regularization::DiscreteDelta, &settings).unwrap();
        errs.push(max_rel_error(&u, 1.0, 2.0, 1.0));
    }
    let order = (errs[0] / errs[1]).log2();
    eprintln!("delta errs={errs:?} order={order:.3}");
    assert!(order >= 1.0);
}

#[test]
fn kernel_samples_have_second_order_residual() {
    let mut worst = Vec::new();
    for n in [17, 33] {
        let g = Grid::cube([0.0; 3], 2.0, n).unwrap();
        let h = g.spacing()[0];
        let pair = AdmissiblePair::constant(g, 1.0, 1.0).unwrap();
        let xi = [0.05, -0.03, 0.02];
        let u = ScalarField::from_fn(g, |p| kernel(1.0, 1.0, distance(p, xi).max(1e-3)));
        let lu = apply_l(&pair, &u).unwrap();
        let mut m = 0.0f64;
        for idx in 0..g.len() {
            let p = g.node_coords(idx);
            let r = distance(p, xi);
            if r >= 1.0 && !g.is_boundary_node(g.ijk(idx)) {
                m = m.max(lu.values()[idx].abs() / kernel(1.0, 1.0, r));
            }
        }
        worst.push(m);
        let _ = h;
    }
    let ratio = worst[0] / worst[1];
    assert!(ratio > 3.0, "{worst:?}");
}

#[test]
fn decay_slope_inside_band() {
    let g = Grid::cube([0.0; 3], 4.0, 33).unwrap();
    let pair = AdmissiblePair::constant(g, 1.0, 1.0).unwrap();
    let (u, _) = greens_function(
        &pair,
        [0.0; 3],
        Regularization::SingularitySplit,
        &SolverSettings::default(),
    )
    .unwrap();
    let fit = decay_slope(&u, [0.0; 3], 0.5, 3.0, pair.kappa_cert()).unwrap();
    assert!((fit.slope + 1.0).abs() < 0.05, "{fit:?}");
    eprintln!("{fit:?}");
    // Regression band: the fitted constant stays within 10% of the unit value.
    assert!(fit.c_fit <= 1.1);
    assert!(fit.within(pair.kappa_cert(), fit.c_fit));
    assert!(fit.within(pair.kappa_cert(), 1.1));
    assert_eq!(DecayFit::band(1.0, 1.0), [-2.0, -1.0]);
}

#[test]
fn residual_is_localized_at_the_source() {
    let g = Grid::cube([0.0; 3], 2.0, 17).unwrap();
    let h = g.spacing()[0];
    let pair = AdmissiblePair::constant(g, 1.0, 1.0).unwrap();
    let settings = SolverSettings::default();
    let (u, _) = greens_function(&pair, [0.0; 3], Regularization::DiscreteDelta, &settings).unwrap();
    let lu = apply_l(&pair, &u).unwrap();
    let src = g.index(8, 8, 8);
    for (idx, v) in lu.values().iter().enumerate() {
        if idx == src {
            assert!((v * h.powi(3) - 1.0).abs() < 1e-8);
        } else {
            assert!(v.abs() <= settings.tol / h.powi(3));
        }
    }
}

#[test]
fn manufactured_conductivity_solution() {
    let g = Grid::cube([0.0; 3], 1.0, 21).unwrap();
    let sigma = ScalarField::from_fn(g, |p| 1.0 + 0.3 * p[0].sin());
    let rho_star = ScalarField::from_fn(g, |p| (p[0] * p[1]).exp() + p[2].cos());
    let rhs = ScalarField::new(
        g,
        Stencil::new(&sigma, None, FaceMean::Geometric)
            .unwrap()
            .apply(rho_star.values()),
    )
    .unwrap();
    let (rho, _) =
        solve_conductivity_dirichlet(&sigma, &rhs, &rho_star, &g.full_box(), &SolverSettings::default()).unwrap();
    for (a, b) in rho.values().iter().zip(rho_star.values()) {
        assert!((a - b).abs() < 1e-9);
    }
}
