use std::f64::consts::PI;

use gradfield_core::processes::quantile_sorted;
use gradfield_core::*;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn loc(a: f64, b: f64) -> Location {
    Location::new(a, b).unwrap()
}

/// Prior gradient pairs `(∇X, ∇Y)` at one location.
fn prior_gradients(theta: &ThetaSample, n: usize, seed: u64) -> Vec<([f64; 2], [f64; 2])> {
    let empty = Dataset::new(vec![], vec![], vec![]).unwrap();
    let d = conditional_gradient_distribution(theta, &empty, &PredictionTargets::gradients(&[loc(0.0, 0.0)]).unwrap())
        .unwrap();
    let iy = [
        d.index_of(0, Component::grad(Field::Response, 0)).unwrap(),
        d.index_of(0, Component::grad(Field::Response, 1)).unwrap(),
    ];
    let ix = [
        d.index_of(0, Component::grad(Field::Covariate, 0)).unwrap(),
        d.index_of(0, Component::grad(Field::Covariate, 1)).unwrap(),
    ];
    let mut rng = stream_rng(seed, 0);
    (0..n)
        .map(|_| {
            let v = d.sample(&mut rng);
            ([v[ix[0]], v[ix[1]]], [v[iy[0]], v[iy[1]]])
        })
        .collect()
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

#[test]
fn single_location_ratio_is_cauchy() {
    let theta = ThetaSample::simulation_truth();
    let u = UnitVector::normalized(1.0, 2.0).unwrap();
    let r = sorted(
        prior_gradients(&theta, 100_000, 1)
            .iter()
            .map(|(gx, gy)| lds_ratio(gy, gx, &u).unwrap())
            .collect(),
    );
    let med = quantile_sorted(&r, 0.5);
    let half_iqr = 0.5 * (quantile_sorted(&r, 0.75) - quantile_sorted(&r, 0.25));
    let scale = cauchy_scale(&theta);
    assert!((scale - 1.0).abs() < 1e-12);
    assert!((med - theta.beta1).abs() < 0.02, "median {med}");
    assert!((half_iqr / scale - 1.0).abs() < 0.02, "half-IQR {half_iqr}");
}

#[test]
fn covariate_gradient_angle_is_uniform() {
    for theta in [
        ThetaSample::simulation_truth(),
        ThetaSample {
            beta1: -2.0,
            phi_x: 3.0,
            sigma2_x: 0.2,
            ..ThetaSample::simulation_truth()
        },
    ] {
        let a = sorted(
            prior_gradients(&theta, 100_000, 2)
                .iter()
                .map(|(gx, _)| angle_of(gx).unwrap())
                .collect(),
        );
        let n = a.len() as f64;
        let ks = a
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let f = (v + PI) / (2.0 * PI);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0f64, f64::max);
        assert!(ks < 0.01, "KS statistic {ks}");
    }
}

#[test]
fn covariate_gradient_norm_is_scaled_chi2() {
    let theta = ThetaSample::simulation_truth();
    let scale = theta.sigma2_x.sqrt() * theta.phi_x;
    let norms = sorted(
        prior_gradients(&theta, 100_000, 3)
            .iter()
            .map(|(gx, _)| gx[0].hypot(gx[1]) / scale)
            .collect(),
    );
    let mut worst = 0.0f64;
    for k in 1..100 {
        let p = k as f64 / 100.0;
        let chi = (-2.0 * (1.0 - p).ln()).sqrt();
        worst = worst.max((quantile_sorted(&norms, p) - chi).abs());
    }
    assert!(worst < 0.02, "max Q-Q deviation {worst}");
}

fn density_theta(beta: f64) -> ThetaSample {
    ThetaSample {
        alpha0: 0.0,
        beta0: 0.0,
        beta1: beta,
        sigma2_x: 1.0,
        sigma2_y: 1.0,
        phi_x: 1.05,
        phi_y: 1.05,
    }
}

/// Midpoint rule on the torus; spectrally accurate for smooth periodic
/// integrands.
fn torus_integral(f: impl Fn(f64, f64) -> f64, n: usize) -> f64 {
    let h = 2.0 * PI / n as f64;
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += f(-PI + (i as f64 + 0.5) * h, -PI + (j as f64 + 0.5) * h);
        }
    }
    s * h * h
}

#[test]
fn angle_density_integrates_to_one() {
    for beta in [0.05, -0.05, 0.5, -0.5, 1.0, -1.0] {
        let theta = density_theta(beta);
        let total = torus_integral(
            |a, b| angle_density(&AngleSample::new(a, b).unwrap(), &theta).unwrap(),
            400,
        );
        assert!((total - 1.0).abs() < 1e-3, "beta {beta}: {total}");
    }
}

#[test]
fn angle_density_is_uniform_without_slope() {
    let theta = density_theta(0.0);
    for (a, b) in [(0.0, 0.0), (1.0, -2.0), (PI, 0.3)] {
        let f = angle_density(&AngleSample::new(a, b).unwrap(), &theta).unwrap();
        assert!((f - 1.0 / (4.0 * PI * PI)).abs() < 1e-12);
    }
}

#[test]
fn angle_density_peaks_where_the_slope_points() {
    for beta in [0.5, -0.5, 1.0, -1.0] {
        let theta = density_theta(beta);
        let f = |d: f64| {
            let ty = 0.4;
            let mut tx = ty + d;
            if tx > PI {
                tx -= 2.0 * PI;
            }
            angle_density(&AngleSample::new(tx, ty).unwrap(), &theta).unwrap()
        };
        let peak = if beta > 0.0 { 0.0 } else { PI };
        let best = (0..360)
            .map(|k| -PI + (k as f64 + 0.5) * PI / 180.0)
            .map(|d| (f(d), d))
            .fold((f64::NEG_INFINITY, 0.0), |m, x| if x.0 > m.0 { x } else { m });
        let off = ((best.1 - peak + PI).rem_euclid(2.0 * PI) - PI).abs();
        assert!(off < PI / 180.0 + 1e-9, "beta {beta}: peak at {}", best.1);
    }
}

/// Probability mass of angle differences in 12 bins against prior draws.
#[test]
fn angle_density_matches_simulated_angles() {
    let beta = 0.5;
    let theta = density_theta(beta);
    let bins = 12;
    let width = 2.0 * PI / bins as f64;
    let mut counts = vec![0usize; bins];
    let n = 100_000;
    for (gx, gy) in prior_gradients(&theta, n, 4) {
        let d = (angle_of(&gx).unwrap() - angle_of(&gy).unwrap() + PI).rem_euclid(2.0 * PI);
        counts[((d / width) as usize).min(bins - 1)] += 1;
    }
    for (k, &c) in counts.iter().enumerate() {
        // The density depends on the difference only, so the mass of a
        // bin is 2π times a one-dimensional integral over the difference.
        let lo = -PI + k as f64 * width;
        let m = 400;
        let p: f64 = (0..m)
            .map(|i| {
                let d = lo + (i as f64 + 0.5) * width / m as f64;
                angle_density(&AngleSample::new(d.clamp(-PI + 1e-15, PI), 0.0).unwrap(), &theta).unwrap()
            })
            .sum::<f64>()
            * width
            / m as f64
            * 2.0
            * PI;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        let got = c as f64 / n as f64;
        assert!((got - p).abs() < 4.5 * se, "bin {k}: {got} vs {p}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn angle_density_depends_on_the_difference_only(
        a in -3.14f64..3.14, b in -3.14f64..3.14, t in -10.0f64..10.0, beta in -2.0f64..2.0,
    ) {
        let wrap = |x: f64| {
            let y = (x + PI).rem_euclid(2.0 * PI) - PI;
            if y <= -PI { PI } else { y }
        };
        let theta = density_theta(beta);
        let f0 = angle_density(&AngleSample::new(a, b).unwrap(), &theta).unwrap();
        let f1 = angle_density(&AngleSample::new(wrap(a + t), wrap(b + t)).unwrap(), &theta).unwrap();
        prop_assert!((f0 - f1).abs() <= 1e-9 * f0.max(1e-12));
        prop_assert!(f0 >= 0.0);
    }

    #[test]
    fn disc_is_bounded_and_symmetric(a in -3.1415f64..3.1415, b in -3.1415f64..3.1415) {
        let d = disc(&AngleSample::new(a, b).unwrap());
        prop_assert!((0.0..=2.0).contains(&d));
        prop_assert_eq!(d, disc(&AngleSample::new(b, a).unwrap()));
        prop_assert_eq!(disc(&AngleSample::new(a, a).unwrap()), 0.0);
    }

    #[test]
    fn ratio_is_the_same_for_opposite_directions(
        gy in (-5.0f64..5.0, -5.0f64..5.0), gx in (-5.0f64..5.0, -5.0f64..5.0), ang in 0.0f64..6.28,
    ) {
        let u = UnitVector::new(ang.cos(), ang.sin()).unwrap();
        let a = lds_ratio(&[gy.0, gy.1], &[gx.0, gx.1], &u);
        let b = lds_ratio(&[gy.0, gy.1], &[gx.0, gx.1], &u.neg());
        match (a, b) {
            (Some(a), Some(b)) => prop_assert!(a == b || (a - b).abs() <= 1e-12 * a.abs()),
            (a, b) => prop_assert_eq!(a, b),
        }
    }

    #[test]
    fn angles_lie_in_the_half_open_interval(g in (-5.0f64..5.0, -5.0f64..5.0)) {
        if let Some(a) = angle_of(&[g.0, g.1]) {
            prop_assert!(a > -PI && a <= PI);
        }
    }
}

#[test]
fn angle_of_maps_the_negative_axis_to_pi() {
    assert_eq!(angle_of(&[-1.0, 0.0]), Some(PI));
    assert_eq!(angle_of(&[-1.0, -0.0]), Some(PI));
    assert_eq!(angle_of(&[0.0, 0.0]), None);
}

fn cauchy_cdf(x: f64, scale: f64) -> f64 {
    0.5 + (x / scale).atan() / PI
}

const COV_Y: [[f64; 2]; 2] = [[1.3, 0.5], [0.5, 0.9]];
const COV_X: [[f64; 2]; 2] = [[0.8, -0.3], [-0.3, 1.1]];

#[test]
fn ratio_cdf_marginal_is_cauchy() {
    let scale = (COV_Y[0][0] / COV_X[0][0]).sqrt();
    for p in [0.05, 0.1, 0.2, 0.35, 0.5, 0.65, 0.8, 0.9, 0.95] {
        let r = scale * (PI * (p - 0.5)).tan();
        let e = joint_ratio_cdf(r, f64::INFINITY, &COV_Y, &COV_X).unwrap();
        assert!((e.value - cauchy_cdf(r, scale)).abs() < 1e-3, "p {p}: {}", e.value);
        assert!(e.error < 1e-3);
    }
    let half = joint_ratio_cdf(0.0, f64::INFINITY, &COV_Y, &COV_X).unwrap();
    assert!((half.value - 0.5).abs() < 1e-6);
    assert_eq!(joint_ratio_cdf(f64::INFINITY, f64::INFINITY, &COV_Y, &COV_X).unwrap().value, 1.0);
}

#[test]
fn ratio_cdf_factorizes_for_independent_locations() {
    let cy = [[1.3, 0.0], [0.0, 0.9]];
    let cx = [[0.8, 0.0], [0.0, 1.1]];
    for (r1, r2) in [(0.3, -1.2), (-0.5, 0.5), (2.0, 4.0)] {
        let e = joint_ratio_cdf(r1, r2, &cy, &cx).unwrap();
        let want = cauchy_cdf(r1, (1.3f64 / 0.8).sqrt()) * cauchy_cdf(r2, (0.9f64 / 1.1).sqrt());
        assert!((e.value - want).abs() < 1e-6, "({r1}, {r2}): {} vs {want}", e.value);
    }
}

#[test]
fn ratio_cdf_is_monotone() {
    let rs: Vec<f64> = (0..10).map(|k| -4.0 + k as f64 * 8.0 / 9.0).collect();
    let mut grid = vec![vec![0.0; 10]; 10];
    for (i, &r1) in rs.iter().enumerate() {
        for (j, &r2) in rs.iter().enumerate() {
            grid[i][j] = joint_ratio_cdf(r1, r2, &COV_Y, &COV_X).unwrap().value;
        }
    }
    for i in 0..10 {
        for j in 0..10 {
            assert!((0.0..=1.0).contains(&grid[i][j]));
            if i > 0 {
                assert!(grid[i][j] >= grid[i - 1][j] - 1e-9);
            }
            if j > 0 {
                assert!(grid[i][j] >= grid[i][j - 1] - 1e-9);
            }
        }
    }
}

#[test]
fn ratio_cdf_matches_simulation() {
    let chol = |c: [[f64; 2]; 2]| {
        let l11 = c[0][0].sqrt();
        let l21 = c[0][1] / l11;
        [l11, l21, (c[1][1] - l21 * l21).sqrt()]
    };
    let (ly, lx) = (chol(COV_Y), chol(COV_X));
    let mut rng = stream_rng(9, 0);
    let n = 200_000;
    let pts = [(0.0, 0.0), (0.7, -0.4), (-1.5, 2.0)];
    let mut hits = [0usize; 3];
    for _ in 0..n {
        let z: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let ny = [ly[0] * z[0], ly[1] * z[0] + ly[2] * z[1]];
        let mx = [lx[0] * z[2], lx[1] * z[2] + lx[2] * z[3]];
        for (k, &(r1, r2)) in pts.iter().enumerate() {
            if ny[0] / mx[0] < r1 && ny[1] / mx[1] < r2 {
                hits[k] += 1;
            }
        }
    }
    for (k, &(r1, r2)) in pts.iter().enumerate() {
        let p = joint_ratio_cdf(r1, r2, &COV_Y, &COV_X).unwrap().value;
        let got = hits[k] as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((got - p).abs() < 4.0 * se, "({r1}, {r2}): {got} vs {p}");
    }
}

#[test]
fn ratio_cdf_rejects_invalid_covariances() {
    let bad = [[1.0, 2.0], [2.0, 1.0]];
    assert!(joint_ratio_cdf(0.0, 0.0, &bad, &COV_X).is_err());
    assert!(joint_ratio_cdf(0.0, 0.0, &COV_Y, &[[1.0, 0.1], [0.2, 1.0]]).is_err());
    assert!(joint_ratio_cdf(f64::NAN, 0.0, &COV_Y, &COV_X).is_err());
}

#[test]
fn medians_tolerate_a_minority_of_infinities() {
    let grid = GridSpec::new(Window::unit(), 1, 1).unwrap();
    let cells = vec![vec![Some(1.0), Some(f64::INFINITY), Some(2.0), Some(f64::NEG_INFINITY), Some(3.0), None]];
    let s = summarize_surface(&grid, &cells, Statistic::Median).unwrap();
    assert_eq!(s.values[0], Some(2.0));
    assert_eq!(s.excluded, vec![1]);
}

#[test]
fn chain_rule_examples() {
    assert_eq!(chain_rule_transform(Link::LogIntensity, 0.0, &[0.3, -0.2]), [0.3, -0.2]);
    let p = chain_rule_transform(Link::Probit, 0.0, &[1.0, 0.0]);
    assert!((p[0] - 0.398_942_280_401_432_7).abs() < 1e-15 && p[1] == 0.0);
    assert_eq!(chain_rule_transform(Link::LogIntensity, f64::NEG_INFINITY, &[1.0, 2.0]), [0.0, 0.0]);
}
