use std::f64::consts::PI;

use proptest::prelude::*;

use super::*;

fn flat(n: usize) -> SurfaceRef {
    Surface::torus(n, n, 1.0, 1.0).unwrap()
}

fn torus_metric(s: &SurfaceRef, f: impl Fn(f64, f64) -> f64) -> ConformalMetric {
    ConformalMetric::new(s.sample_torus(f).unwrap())
}

/// Smooth band-limited torus field from a handful of coefficients.
fn smooth_torus(s: &SurfaceRef, c: &[f64; 6]) -> ScalarField {
    s.sample_torus(|x, y| {
        let (tx, ty) = (2.0 * PI * x, 2.0 * PI * y);
        c[0] * tx.cos()
            + c[1] * ty.sin()
            + c[2] * (tx + ty).cos()
            + c[3] * (2.0 * tx).sin()
            + c[4] * (tx - 2.0 * ty).cos()
            + c[5] * (tx.sin() * ty.cos())
    })
    .unwrap()
}

fn smooth_sphere(s: &SurfaceRef, c: &[f64; 6]) -> ScalarField {
    s.sample_sphere(|p| {
        c[0] * p.x
            + c[1] * p.y * p.z
            + c[2] * (3.0 * p.z * p.z - 1.0)
            + c[3] * p.x * p.y
            + c[4] * p.z * p.z * p.z
            + c[5] * p.x * p.z
    })
    .unwrap()
}

/// Central second difference of `f` along x with a small step, an oracle
/// independent of the spectral path.
fn fd_half_laplacian(f: impl Fn(f64, f64) -> f64, x: f64, y: f64) -> f64 {
    let h = 1e-4;
    let fxx = (f(x + h, y) - 2.0 * f(x, y) + f(x - h, y)) / (h * h);
    let fyy = (f(x, y + h) - 2.0 * f(x, y) + f(x, y - h)) / (h * h);
    0.5 * (fxx + fyy)
}

#[test]
fn torus_laplacian_of_sine_matches_finite_differences() {
    let s = flat(32);
    let func = |x: f64, _y: f64| (2.0 * PI * x).sin();
    let f = s.sample_torus(func).unwrap();
    let l = laplace0(&s, &f).unwrap();
    let g = s.torus_grid().unwrap();
    for i in 0..s.node_count() {
        let (x, y) = g.node_xy(i);
        let closed = -0.5 * (2.0 * PI).powi(2) * (2.0 * PI * x).sin();
        assert!((l.values()[i] - closed).abs() < 1e-10);
        assert!((l.values()[i] - fd_half_laplacian(func, x, y)).abs() < 1e-4);
    }
}

#[test]
fn constants_are_harmonic() {
    for s in [flat(16), Surface::sphere(2).unwrap()] {
        let l = laplace0(&s, &ScalarField::constant(&s, 3.5)).unwrap();
        assert!(l.max_abs() < 1e-12);
    }
}

#[test]
fn sphere_coordinate_function_is_first_eigenfunction() {
    let s = Surface::sphere(4).unwrap();
    let z = s.sample_sphere(|p| p.z).unwrap();
    let l = laplace0(&s, &z).unwrap();
    let err: f64 = l.values().iter().zip(z.values()).map(|(a, b)| (a + b).powi(2)).sum::<f64>().sqrt()
        / z.values().iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(err < 5e-3, "relative error {err}");
}

#[test]
fn sphere_laplacian_converges_pointwise() {
    let max_err = |level| {
        let s = Surface::sphere(level).unwrap();
        let z = s.sample_sphere(|p| p.z).unwrap();
        let l = laplace0(&s, &z).unwrap();
        l.values().iter().zip(z.values()).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max)
    };
    let (e3, e4, e5) = (max_err(3), max_err(4), max_err(5));
    assert!(e4 < 0.6 * e3 && e5 < 0.6 * e4, "{e3} {e4} {e5}");
    assert!(e5 < 2.5e-3);
}

#[test]
fn mismatched_surfaces_are_rejected() {
    let a = flat(16);
    let b = flat(16);
    let f = ScalarField::zeros(&b);
    assert!(matches!(laplace0(&a, &f), Err(GeometryError::Contract(_))));
    assert!(ScalarField::new(&a, vec![0.0; 3]).is_err());
    assert!(ScalarField::new(&a, vec![f64::NAN; 256]).is_err());
}

#[test]
fn laplace_g_scaling() {
    let s = flat(16);
    let f = smooth_torus(&s, &[1.0, 0.5, 0.2, 0.1, 0.3, 0.0]);
    let base = laplace0(&s, &f).unwrap();
    let same = laplace_g(&ConformalMetric::background(&s), &f).unwrap();
    assert_eq!(base.values(), same.values());
    let c = 0.3;
    let scaled = laplace_g(&ConformalMetric::new(ScalarField::constant(&s, c)), &f).unwrap();
    for (a, b) in scaled.values().iter().zip(base.values()) {
        assert!((a - (-2.0 * c).exp() * b).abs() < 1e-12);
    }
}

#[test]
fn laplace_g_integrates_to_zero() {
    let s = flat(32);
    let m = torus_metric(&s, |x, _| 0.1 * (2.0 * PI * x).cos());
    let f = s.sample_torus(|_, y| (2.0 * PI * y).sin()).unwrap();
    let l = laplace_g(&m, &f).unwrap();
    assert!(integrate(&m, &l).unwrap().abs() < 1e-10);
}

#[test]
fn curvature_of_backgrounds() {
    let t = flat(16);
    assert!(gauss_curvature(&ConformalMetric::background(&t)).max_abs() < 1e-14);
    let s = Surface::sphere(3).unwrap();
    let k = gauss_curvature(&ConformalMetric::background(&s));
    assert!(k.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
}

#[test]
fn small_amplitude_torus_curvature() {
    let a = 0.01;
    let s = flat(32);
    let k = gauss_curvature(&torus_metric(&s, |x, _| a * (2.0 * PI * x).cos()));
    // direct evaluation of K = a(2π)² cos(2πx) e^{-2a cos(2πx)} on a dense line
    let oracle_max = (0..100_000)
        .map(|i| {
            let c = (2.0 * PI * i as f64 / 100_000.0).cos();
            (a * (2.0 * PI).powi(2) * c * (-2.0 * a * c).exp()).abs()
        })
        .fold(0.0, f64::max);
    assert!((k.max_abs() - oracle_max).abs() < 1e-6);
    assert!((k.max_abs() - 0.3948).abs() < 0.01);
}

#[test]
fn integrate_examples() {
    let s = Surface::sphere(3).unwrap();
    let one = ScalarField::constant(&s, 1.0);
    assert!((integrate(&ConformalMetric::background(&s), &one).unwrap() - 4.0 * PI).abs() < 1e-12);

    let t = flat(32);
    let f = t.sample_torus(|x, _| (2.0 * PI * x).sin().powi(2)).unwrap();
    assert!((integrate(&ConformalMetric::background(&t), &f).unwrap() - 0.5).abs() < 1e-13);

    let a: f64 = 0.01;
    let m = torus_metric(&t, |x, _| a * (2.0 * PI * x).cos());
    // ∫ e^{2a cos} = I₀(2a) = 1 + a² + a⁴/4 + …
    let series = 1.0 + a * a + a.powi(4) / 4.0;
    assert!((m.area() - series).abs() < 1e-12);
    assert!((m.area() - 1.0001).abs() < 1e-7);
}

#[test]
fn gradient_of_sine() {
    let s = flat(32);
    let f = s.sample_torus(|x, _| (2.0 * PI * x).sin()).unwrap();
    let m = ConformalMetric::background(&s);
    let g = grad_norm_sq(&m, &f).unwrap();
    assert!((integrate(&m, &g).unwrap() - 0.5 * (2.0 * PI).powi(2)).abs() < 1e-10);
    let c = ScalarField::constant(&s, 2.0);
    assert!(grad_norm_sq(&m, &c).unwrap().max_abs() < 1e-12);
}

#[test]
fn lichnerowicz_flat_sine() {
    let s = flat(32);
    let f = s.sample_torus(|x, _| (2.0 * PI * x).sin()).unwrap();
    let m = ConformalMetric::background(&s);
    let l = lichnerowicz(&m, &f).unwrap();
    let g = s.torus_grid().unwrap();
    for (i, c) in l.components().iter().enumerate() {
        let x = g.node_xy(i).0;
        assert!((c.re + PI * PI * (2.0 * PI * x).sin()).abs() < 1e-10);
        assert!(c.im.abs() < 1e-10);
    }
    // quadrature oracle: 4π⁴ ∫ sin² = 2π⁴
    let total = integrate(&m, &l.norm_sq(&m).unwrap()).unwrap();
    assert!((total - 2.0 * PI.powi(4)).abs() < 1e-8);

    let c = lichnerowicz(&m, &ScalarField::constant(&s, 1.0)).unwrap();
    assert!(c.components().iter().all(|z| z.norm() < 1e-12));
}

#[test]
fn lichnerowicz_rejects_sphere() {
    let s = Surface::sphere(1).unwrap();
    let m = ConformalMetric::background(&s);
    assert!(matches!(lichnerowicz(&m, &ScalarField::zeros(&s)), Err(GeometryError::Unsupported { .. })));
}

/// `∫|L(K)|² = ∫(Δ_g K)² - ½ ∫ K |∇K|²`, every term by its own quadrature.
pub(crate) fn lichnerowicz_identity_gap(m: &ConformalMetric) -> f64 {
    let k = gauss_curvature(m);
    let lhs = integrate(m, &lichnerowicz(m, &k).unwrap().norm_sq(m).unwrap()).unwrap();
    let lk = laplace_g(m, &k).unwrap();
    let t1 = integrate(m, &lk.map(|v| v * v)).unwrap();
    let grad = grad_norm_sq(m, &k).unwrap();
    let t2 = integrate(m, &k.zip_map(&grad, |a, b| a * b).unwrap()).unwrap();
    (lhs - (t1 - 0.5 * t2)).abs() / lhs.abs()
}

#[test]
fn mobius_identity_keeps_u() {
    let s = Surface::sphere(3).unwrap();
    let u = smooth_sphere(&s, &[0.1, 0.05, -0.02, 0.03, 0.0, 0.01]);
    let m = ConformalMetric::new(u.clone());
    let p = mobius_pullback(&m, &MobiusMap::identity()).unwrap();
    for (a, b) in p.u().values().iter().zip(u.values()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn mobius_rejects_degenerate_map() {
    let s = Surface::sphere(1).unwrap();
    let one = num_complex::Complex64::new(1.0, 0.0);
    let map = MobiusMap { a: one, b: one, c: one, d: one };
    assert!(matches!(mobius_pullback(&ConformalMetric::background(&s), &map), Err(GeometryError::InvalidArgument(_))));
}

#[test]
fn mobius_round_pullback_keeps_curvature() {
    let s = Surface::sphere(5).unwrap();
    let m = mobius_pullback(&ConformalMetric::background(&s), &MobiusMap::dilation(1.5)).unwrap();
    let k = gauss_curvature(&m);
    let w = m.weights();
    let l2: f64 = k.values().iter().zip(&w).map(|(k, w)| (k - 1.0).powi(2) * w).sum::<f64>().sqrt();
    assert!(l2 < 2e-2, "L2 curvature defect {l2}");
}

#[test]
fn mobius_dilation_area_and_disk() {
    let s = Surface::sphere(5).unwrap();
    let lambda: f64 = 4.0;
    let m = mobius_pullback(&ConformalMetric::background(&s), &MobiusMap::dilation(lambda)).unwrap();
    assert!((m.area() - 4.0 * PI).abs() < 0.01 * 4.0 * PI);
    // the unit disk of the stereographic chart is the southern hemisphere
    let mesh = s.sphere_mesh().unwrap();
    let w = m.weights();
    let disk: f64 = mesh
        .vertices()
        .iter()
        .zip(&w)
        .map(|(p, w)| {
            if p.z.abs() < 1e-12 {
                0.5 * w
            } else if p.z < 0.0 {
                *w
            } else {
                0.0
            }
        })
        .sum();
    // quadrature oracle of ∫_{|ζ|<1} (2λ/(1+λ²r²))² dA
    let steps = 200_000;
    let dr = 1.0 / steps as f64;
    let oracle: f64 = (0..steps)
        .map(|i| {
            let r = (i as f64 + 0.5) * dr;
            (2.0 * lambda / (1.0 + lambda * lambda * r * r)).powi(2) * 2.0 * PI * r * dr
        })
        .sum();
    let closed = 4.0 * PI * lambda * lambda / (1.0 + lambda * lambda);
    assert!((oracle - closed).abs() < 1e-8);
    assert!((closed - 11.83).abs() < 0.005);
    assert!((disk - closed).abs() < 0.01 * closed, "disk area {disk} vs {closed}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn torus_gauss_bonnet_and_conformal_invariance(c in prop::array::uniform6(-0.2f64..0.2), d in prop::array::uniform6(-1.0f64..1.0)) {
        let s = flat(32);
        let m = ConformalMetric::new(smooth_torus(&s, &c));
        let k = gauss_curvature(&m);
        prop_assert!(integrate(&m, &k).unwrap().abs() < 1e-10);

        let f = smooth_torus(&s, &d);
        let g = integrate(&m, &grad_norm_sq(&m, &f).unwrap()).unwrap();
        let bg = ConformalMetric::background(&s);
        let g0 = integrate(&bg, &grad_norm_sq(&bg, &f).unwrap()).unwrap();
        prop_assert!((g - g0).abs() < 1e-10 * g0.max(1.0));
    }

    #[test]
    fn torus_self_adjoint_and_green(c in prop::array::uniform6(-0.2f64..0.2), d in prop::array::uniform6(-1.0f64..1.0), e in prop::array::uniform6(-1.0f64..1.0)) {
        let s = flat(32);
        let f = smooth_torus(&s, &d);
        let h = smooth_torus(&s, &e);
        let bg = ConformalMetric::background(&s);
        let lhs = integrate(&bg, &f.zip_map(&laplace0(&s, &h).unwrap(), |a, b| a * b).unwrap()).unwrap();
        let rhs = integrate(&bg, &h.zip_map(&laplace0(&s, &f).unwrap(), |a, b| a * b).unwrap()).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-10);

        let m = ConformalMetric::new(smooth_torus(&s, &c));
        let green_l = integrate(&m, &f.zip_map(&laplace_g(&m, &h).unwrap(), |a, b| a * b).unwrap()).unwrap();
        let green_r = -0.5 * integrate(&m, &grad_inner(&m, &f, &h).unwrap()).unwrap();
        prop_assert!((green_l - green_r).abs() < 1e-9);
    }

    #[test]
    fn sphere_gauss_bonnet_green_and_invariance(c in prop::array::uniform6(-0.2f64..0.2), d in prop::array::uniform6(-1.0f64..1.0), e in prop::array::uniform6(-1.0f64..1.0)) {
        let s = Surface::sphere(3).unwrap();
        let m = ConformalMetric::new(smooth_sphere(&s, &c));
        let k = gauss_curvature(&m);
        prop_assert!((integrate(&m, &k).unwrap() - 4.0 * PI).abs() < 1e-10);

        let f = smooth_sphere(&s, &d);
        let h = smooth_sphere(&s, &e);
        let bg = ConformalMetric::background(&s);
        let lhs = integrate(&bg, &f.zip_map(&laplace0(&s, &h).unwrap(), |a, b| a * b).unwrap()).unwrap();
        let rhs = integrate(&bg, &h.zip_map(&laplace0(&s, &f).unwrap(), |a, b| a * b).unwrap()).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-10);

        let green_l = integrate(&m, &f.zip_map(&laplace_g(&m, &h).unwrap(), |a, b| a * b).unwrap()).unwrap();
        let green_r = -0.5 * integrate(&m, &grad_inner(&m, &f, &h).unwrap()).unwrap();
        prop_assert!((green_l - green_r).abs() < 1e-10);

        let g = integrate(&m, &grad_norm_sq(&m, &f).unwrap()).unwrap();
        let g0 = integrate(&bg, &grad_norm_sq(&bg, &f).unwrap()).unwrap();
        prop_assert!((g - g0).abs() < 1e-10 * g0.max(1.0));
    }

    #[test]
    fn lichnerowicz_identity_on_random_torus_metrics(c in prop::array::uniform6(-0.15f64..0.15)) {
        let s = flat(64);
        let m = ConformalMetric::new(smooth_torus(&s, &c));
        prop_assert!(lichnerowicz_identity_gap(&m) < 1e-6);
    }
}
