use gruschin_core::analysis::a6_point;
use gruschin_core::estimators::{
    estimate_gradient_bismut, estimate_gradient_fd, estimate_pt, estimate_qt_inverse_sq_norm,
    estimate_xi_second_moments, weighted_paths, McParams,
};
use gruschin_core::model::{
    builtin_test_function, constant_identity_model, extended_demo_model, make_power_law_model, Direction,
    ModelKind,
};
use gruschin_core::numerics::mean_stderr;
use gruschin_core::paths::{simulate_basic, TimeGrid};
use gruschin_core::rng::RngStream;

fn dir(v1: f64, v2: f64) -> Direction {
    Direction::new(vec![v1], vec![v2]).unwrap()
}

#[test]
fn heat_semigroup_on_sin_x() {
    let model = constant_identity_model(1, 1).unwrap();
    let f = builtin_test_function("sin_x", &model).unwrap();
    let (x, t) = (0.4, 0.8);
    let e = estimate_pt(&model, &f, &[x, -0.3], t, &McParams::new(100_000, 20, 1)).unwrap();
    assert!(e.within((-t / 2.0).exp() * x.sin(), 4.0), "{e:?}");
}

#[test]
fn second_moment_of_degenerate_component() {
    // E Y_T² = y² + x²T + T²/2·(1 − 1/n) for the left-point scheme
    let model = make_power_law_model(1, 1, 1.0).unwrap();
    let f = builtin_test_function("y_squared", &model).unwrap();
    let (x, y, t, n) = (0.8, 0.5, 1.0, 200usize);
    let e = estimate_pt(&model, &f, &[x, y], t, &McParams::new(100_000, n, 2)).unwrap();
    let exact = y * y + x * x * t + t * t / 2.0;
    assert!(e.within(exact, 4.0), "{e:?} vs {exact}");
    assert_eq!(f.closed_form(t, &[x], &[y]), Some(exact));
}

#[test]
fn bismut_gradient_of_y_squared() {
    let model = make_power_law_model(1, 1, 1.0).unwrap();
    let f = builtin_test_function("y_squared", &model).unwrap();
    let (x, y, t) = (0.6, -0.7, 0.5);
    let mc = McParams::new(200_000, 50, 3);
    let gx = estimate_gradient_bismut(&model, &f, &[x, y], &dir(1.0, 0.0), t, &mc).unwrap();
    let gy = estimate_gradient_bismut(&model, &f, &[x, y], &dir(0.0, 1.0), t, &mc).unwrap();
    assert!(gx.within(2.0 * x * t, 4.0), "{gx:?}");
    assert!(gy.within(2.0 * y, 4.0), "{gy:?}");
}

#[test]
fn constant_observable_has_centred_gradient() {
    let model = make_power_law_model(1, 1, 2.0).unwrap();
    let one = builtin_test_function("one", &model).unwrap();
    let e = estimate_gradient_bismut(&model, &one, &[1.0, 0.0], &dir(1.0, 1.0), 1.0, &McParams::new(50_000, 50, 4))
        .unwrap();
    assert!(e.within(0.0, 4.0), "{e:?}");
}

#[test]
fn fd_agrees_with_bismut_and_closed_form() {
    let model = make_power_law_model(1, 1, 1.0).unwrap();
    let f = builtin_test_function("y_squared", &model).unwrap();
    let mc = McParams::new(100_000, 50, 5);
    let z0 = [1.2, 0.0];
    let v = dir(1.0, 0.0);
    let fd = estimate_gradient_fd(&model, &f, &z0, &v, 1.0, &mc, 1e-3).unwrap();
    let bis = estimate_gradient_bismut(&model, &f, &z0, &v, 1.0, &mc).unwrap();
    let band = 4.0 * (fd.stderr.powi(2) + bis.stderr.powi(2)).sqrt();
    assert!((fd.mean - bis.mean).abs() <= band, "{fd:?} {bis:?}");
    assert!(fd.within(2.4, 4.0), "{fd:?}");
}

#[test]
fn fd_is_robust_to_halving_eps() {
    let model = make_power_law_model(1, 1, 2.0).unwrap();
    let mc = McParams::new(20_000, 50, 6);
    for name in ["y_squared", "sin_y", "gauss_bump"] {
        let f = builtin_test_function(name, &model).unwrap();
        let a = estimate_gradient_fd(&model, &f, &[1.0, 0.3], &dir(1.0, 0.0), 1.0, &mc, 1e-3).unwrap();
        let b = estimate_gradient_fd(&model, &f, &[1.0, 0.3], &dir(1.0, 0.0), 1.0, &mc, 5e-4).unwrap();
        let tol = (4.0 * a.stderr).max(1e-4 * a.mean.abs());
        assert!((a.mean - b.mean).abs() < tol, "{name}: {a:?} {b:?}");
    }
}

#[test]
fn stderr_halves_when_paths_quadruple() {
    let model = make_power_law_model(1, 1, 1.0).unwrap();
    let f = builtin_test_function("sin_y", &model).unwrap();
    let v = dir(0.0, 1.0);
    let small = estimate_gradient_bismut(&model, &f, &[1.0, 0.2], &v, 1.0, &McParams::new(10_000, 30, 7)).unwrap();
    let large = estimate_gradient_bismut(&model, &f, &[1.0, 0.2], &v, 1.0, &McParams::new(40_000, 30, 7)).unwrap();
    let ratio = small.stderr / large.stderr;
    assert!((ratio / 2.0 - 1.0).abs() < 0.25, "ratio {ratio}");
}

#[test]
fn covariance_converges_at_first_order() {
    // E Q_T = x²T + T²/2·(1 − 1/n): successive step-halving gaps shrink by 2
    let model = make_power_law_model(1, 1, 1.0).unwrap();
    let zero = Direction::zero(1, 1);
    let x = 1.0;
    let means: Vec<f64> = [4usize, 8, 16]
        .iter()
        .map(|&n| {
            let grid = TimeGrid::new(1.0, n).unwrap();
            let q: Vec<f64> = (0..100_000)
                .map(|i| {
                    simulate_basic(&model, &[x], &[0.0], &zero, &grid, RngStream::new(8, i))
                        .unwrap()
                        .q_t[0]
                })
                .collect();
            let (mean, se) = mean_stderr(&q);
            let exact = x * x + 0.5 * (1.0 - 1.0 / n as f64);
            assert!((mean - exact).abs() < 4.0 * se, "n={n}: {mean} vs {exact}");
            mean
        })
        .collect();
    let ratio = (means[1] - means[0]) / (means[2] - means[1]);
    assert!((1.5..2.5).contains(&ratio), "step-halving ratio {ratio}");
}

#[test]
fn direction_process_moment_bound() {
    let model = extended_demo_model().unwrap();
    let ModelKind::Extended(coeffs) = &model.kind else {
        panic!("demo model is extended")
    };
    let c = coeffs.bounds.unwrap().xi_growth_constant();
    let (t, n) = (1.0, 40);
    let grid = TimeGrid::new(t, n).unwrap();
    let moments = estimate_xi_second_moments(&model, &[0.5, 0.0], &dir(1.0, 0.0), t, &McParams::new(10_000, n, 9))
        .unwrap();
    for (k, e) in moments.iter().enumerate() {
        let s = grid.time(k);
        let bound = (t - s) / t * (c * s).exp();
        assert!(e.mean <= bound + 5.0 * e.stderr, "node {k}: {e:?} vs {bound}");
    }
    assert_eq!(moments[n].mean, 0.0);
}

#[test]
fn square_field_ratio_matches_gaussian_closed_form() {
    let model = constant_identity_model(1, 1).unwrap();
    let f = builtin_test_function("sin_x", &model).unwrap();
    let (x, t) = (0.7, 1.0);
    let p = a6_point(&model, &f, &[x, 0.0], t, &McParams::new(100_000, 20, 10)).unwrap();
    let exact = t * (-t).exp() * x.cos().powi(2) / ((1.0 - (-2.0 * t).exp() * (2.0 * x).cos()) / 2.0);
    assert!((p.ratio - exact).abs() <= 4.0 * p.ratio_stderr, "{} ± {} vs {exact}", p.ratio, p.ratio_stderr);
}

#[test]
fn relabelling_noise_components_preserves_weight_law() {
    let model = make_power_law_model(1, 2, 1.0).unwrap();
    let mc = McParams::new(40_000, 30, 11);
    let second_moment = |v: Direction| {
        let paths = weighted_paths(&model, &[1.0, 0.0, 0.0], &v, 1.0, &mc).unwrap();
        let sq: Vec<f64> = paths.iter().flatten().map(|p| p.weight.term_inner.powi(2)).collect();
        mean_stderr(&sq)
    };
    let (a, sa) = second_moment(Direction::new(vec![0.0], vec![1.0, 0.0]).unwrap());
    let (b, sb) = second_moment(Direction::new(vec![0.0], vec![0.0, 1.0]).unwrap());
    assert!((a - b).abs() <= 4.0 * (sa * sa + sb * sb).sqrt(), "{a} vs {b}");
}

#[test]
fn inverse_covariance_diagnostic_is_finite_away_from_origin() {
    let model = make_power_law_model(1, 1, 1.0).unwrap();
    let d = estimate_qt_inverse_sq_norm(&model, &[1.0, 0.0], 1.0, &McParams::new(5_000, 50, 12)).unwrap();
    assert!(d.estimate.mean.is_finite() && d.estimate.mean > 0.0);
    assert!(d.hill_tail_index > 0.0);
}
