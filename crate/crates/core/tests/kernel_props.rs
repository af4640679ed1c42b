use gradfield_core::kernel::{
    covariance_matrix, joint_cov_matrix, matern_functional_cov, BivariateKernel, Component,
    CrossCovariance, Field,
};
use gradfield_core::linalg::standard_normal_vector;
use gradfield_core::*;
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

fn sep(d1: f64, d2: f64) -> SeparationVector {
    SeparationVector::new(d1, d2).unwrap()
}

fn fd_gradient(d: [f64; 2], p: &MaternParams, h: f64) -> [f64; 2] {
    let f = |a: f64, b: f64| cov_matern32(&sep(a, b), p);
    [
        (f(d[0] + h, d[1]) - f(d[0] - h, d[1])) / (2.0 * h),
        (f(d[0], d[1] + h) - f(d[0], d[1] - h)) / (2.0 * h),
    ]
}

fn fd_hessian(d: [f64; 2], p: &MaternParams, h: f64) -> [[f64; 2]; 2] {
    let g = |a: f64, b: f64| grad_matern32(&sep(a, b), p);
    let mut out = [[0.0; 2]; 2];
    for j in 0..2 {
        let mut up = d;
        let mut dn = d;
        up[j] += h;
        dn[j] -= h;
        let (gu, gd) = (g(up[0], up[1]), g(dn[0], dn[1]));
        for i in 0..2 {
            out[i][j] = (gu[i] - gd[i]) / (2.0 * h);
        }
    }
    out
}

fn max_abs2(v: &[f64; 2]) -> f64 {
    v[0].abs().max(v[1].abs())
}

fn params() -> impl Strategy<Value = MaternParams> {
    (0.1f64..5.0, 0.1f64..5.0).prop_map(|(s, p)| MaternParams::new(s, p).unwrap())
}

fn away_from_origin() -> impl Strategy<Value = [f64; 2]> {
    (0.05f64..4.0, 0.0f64..std::f64::consts::TAU).prop_map(|(r, a)| [r * a.cos(), r * a.sin()])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn gradient_matches_finite_differences(d in away_from_origin(), p in params()) {
        let g = grad_matern32(&sep(d[0], d[1]), &p);
        let fd = fd_gradient(d, &p, 1e-5);
        let err = max_abs2(&[g[0] - fd[0], g[1] - fd[1]]);
        prop_assert!(err <= 1e-5 * max_abs2(&g).max(1e-12), "{g:?} vs {fd:?}");
    }

    #[test]
    fn hessian_matches_finite_differences(d in away_from_origin(), p in params()) {
        let h = hess_matern32(&sep(d[0], d[1]), &p);
        let fd = fd_hessian(d, &p, 1e-5);
        let scale = h.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..2 {
            for j in 0..2 {
                prop_assert!((h[i][j] - fd[i][j]).abs() <= 1e-4 * scale, "{h:?} vs {fd:?}");
            }
        }
    }

    #[test]
    fn kernel_parity(d in away_from_origin(), p in params()) {
        let a = sep(d[0], d[1]);
        let b = a.neg();
        let tol = 1e-14 * p.sigma2() * (1.0 + p.phi()).powi(3);
        prop_assert!((cov_matern32(&a, &p) - cov_matern32(&b, &p)).abs() <= tol);
        let (ga, gb) = (grad_matern32(&a, &p), grad_matern32(&b, &p));
        prop_assert!((ga[0] + gb[0]).abs() <= tol && (ga[1] + gb[1]).abs() <= tol);
        let (ha, hb) = (hess_matern32(&a, &p), hess_matern32(&b, &p));
        for i in 0..2 {
            for j in 0..2 {
                prop_assert!((ha[i][j] - hb[i][j]).abs() <= tol);
            }
        }
        prop_assert_eq!(ha[0][1], ha[1][0]);
    }

    #[test]
    fn isotropy_of_the_level_covariance(r in 0.0f64..5.0, a in 0.0f64..6.3, b in 0.0f64..6.3, p in params()) {
        let x = cov_matern32(&sep(r * a.cos(), r * a.sin()), &p);
        let y = cov_matern32(&sep(r * b.cos(), r * b.sin()), &p);
        prop_assert!((x - y).abs() <= 1e-14 * p.sigma2());
    }

    #[test]
    fn joint_covariance_is_positive_semidefinite(
        pts in prop::collection::vec((0.0f64..4.0, 0.0f64..4.0), 2..20),
        split in 0usize..20,
        beta in -2.0f64..2.0,
        phis in (0.3f64..3.0, 0.3f64..3.0),
    ) {
        let locs: Vec<Location> = pts.iter().map(|&(a, b)| Location::new(a, b).unwrap()).collect();
        prop_assume!(kernel::check_distinct(&locs).is_ok());
        // Points closer than this make the gradient rows nearly collinear
        // and only test round-off.
        for i in 0..locs.len() {
            for j in 0..i {
                prop_assume!(locs[i].distance(&locs[j]) > 1e-3);
            }
        }
        let k = split.min(locs.len() - 1).max(1);
        let (obs, targets) = locs.split_at(k);
        let mut theta = ThetaSample::simulation_truth();
        theta.beta1 = beta;
        theta.phi_x = phis.0;
        theta.phi_y = phis.1;
        let m = joint_cov_matrix(obs, targets, &theta).unwrap();
        prop_assert!((&m - m.transpose()).amax() == 0.0);
        let eig = SymmetricEigen::new(m.clone()).eigenvalues;
        let trace: f64 = m.diagonal().sum();
        prop_assert!(eig.min() >= -1e-10 * trace, "min eigenvalue {}", eig.min());
    }
}

#[test]
fn table1_local_block_entries() {
    let b = local_cov_block(&ThetaSample::simulation_truth()).unwrap();
    let m = b.matrix();
    assert!((m[(0, 0)] - 1.25).abs() < 1e-12);
    assert!((m[(0, 1)] - 0.5).abs() < 1e-12);
    assert!((m[(1, 1)] - 1.0).abs() < 1e-12);
    assert!((m[(2, 2)] - 1.378125).abs() < 1e-12);
    assert!((m[(2, 4)] - 0.55125).abs() < 1e-12);
    assert!((m[(4, 4)] - 1.1025).abs() < 1e-12);
    for i in 0..2 {
        for j in 2..6 {
            assert_eq!(m[(i, j)], 0.0);
        }
    }
    assert_eq!(m[(2, 3)], 0.0);
    assert_eq!(m[(2, 5)], 0.0);
}

/// Covariances that involve a derivative must equal the limit of the
/// covariance with the matching difference quotient.
#[test]
fn cross_covariances_follow_difference_quotients() {
    let k = BivariateKernel::from_theta(&ThetaSample {
        beta1: -0.7,
        phi_x: 0.8,
        phi_y: 1.6,
        sigma2_x: 1.3,
        sigma2_y: 0.6,
        ..ThetaSample::simulation_truth()
    })
    .unwrap();
    let p = Location::new(0.3, -0.2).unwrap();
    let q = Location::new(1.1, 0.4).unwrap();
    let h = 1e-5;
    let shift = |s: &Location, axis: usize, d: f64| {
        if axis == 0 {
            Location::new(s.s1() + d, s.s2()).unwrap()
        } else {
            Location::new(s.s1(), s.s2() + d).unwrap()
        }
    };
    for fa in [Field::Response, Field::Covariate] {
        for fb in [Field::Response, Field::Covariate] {
            let la = Component { field: fa, functional: Functional::Level };
            let lb = Component { field: fb, functional: Functional::Level };
            for j in 0..2 {
                let fd = (k.cross_cov(la, &p, lb, &shift(&q, j, h)) - k.cross_cov(la, &p, lb, &shift(&q, j, -h)))
                    / (2.0 * h);
                let exact = k.cross_cov(la, &p, Component::grad(fb, j), &q);
                assert!((fd - exact).abs() < 1e-8, "level/partial {fa:?} {fb:?} {j}");
                let fd = (k.cross_cov(la, &shift(&p, j, h), lb, &q) - k.cross_cov(la, &shift(&p, j, -h), lb, &q))
                    / (2.0 * h);
                let exact = k.cross_cov(Component::grad(fa, j), &p, lb, &q);
                assert!((fd - exact).abs() < 1e-8, "partial/level {fa:?} {fb:?} {j}");
                for i in 0..2 {
                    let d = |a: f64, b: f64| k.cross_cov(la, &shift(&p, i, a), lb, &shift(&q, j, b));
                    let fd = (d(h, h) - d(h, -h) - d(-h, h) + d(-h, -h)) / (4.0 * h * h);
                    let exact = k.cross_cov(Component::grad(fa, i), &p, Component::grad(fb, j), &q);
                    assert!((fd - exact).abs() < 1e-4, "partial/partial {fa:?} {fb:?} {i}{j}: {fd} vs {exact}");
                }
            }
        }
    }
}

/// Monte Carlo version of the same convention: draw the field at a small
/// stencil and correlate a level with a difference quotient.
#[test]
fn sign_convention_by_monte_carlo() {
    let params = MaternParams::new(1.0, 1.2).unwrap();
    let p = Location::new(0.0, 0.0).unwrap();
    let q = Location::new(0.5, 0.3).unwrap();
    let h = 1e-3;
    let qp = Location::new(0.5 + h, 0.3).unwrap();
    let qm = Location::new(0.5 - h, 0.3).unwrap();
    let pts: Vec<_> = [p, qp, qm].iter().map(|&s| (s, Functional::Level)).collect();
    let f = linalg::Factor::new(covariance_matrix(&params, &pts), "mc").unwrap();
    let mut rng = stream_rng(42, 0);
    let n = 100_000;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for _ in 0..n {
        let v = f.mul_lower(&standard_normal_vector(3, &mut rng));
        let d = (v[1] - v[2]) / (2.0 * h);
        sxy += v[0] * d;
        sxx += v[0] * v[0];
        syy += d * d;
    }
    let cov = sxy / n as f64;
    let se = ((sxx / n as f64) * (syy / n as f64) / n as f64).sqrt();
    let exact = matern_functional_cov(Functional::Level, &p, Functional::Partial(0), &q, &params);
    // Moving q away from p lowers the covariance with f(p).
    assert!(exact < 0.0);
    assert!((cov - exact).abs() < 4.0 * se, "{cov} vs {exact} (se {se})");
}

#[test]
fn zero_slope_decouples_fields() {
    let theta = ThetaSample {
        beta1: 0.0,
        ..ThetaSample::simulation_truth()
    };
    let locs: Vec<Location> = (0..5).map(|i| Location::new(i as f64 * 0.4, 0.1 * i as f64).unwrap()).collect();
    let k = BivariateKernel::from_theta(&theta).unwrap();
    let rows: Vec<_> = locs.iter().map(|&s| (s, Component::Y)).collect();
    let cols: Vec<_> = locs.iter().map(|&s| (s, Component::grad(Field::Covariate, 0))).collect();
    let m: DMatrix<f64> = kernel::cross_covariance_matrix(&k, &rows, &cols);
    assert!(m.iter().all(|v| *v == 0.0));
}
