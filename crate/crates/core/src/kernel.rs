//! Matérn (ν = 3/2) covariance analytics and joint covariance assembly for
//! levels and gradients of a response/covariate pair of Gaussian processes.
//!
//! Conventions: for two points `p` and `q` with separation `δ = p − q`,
//!
//! * `Cov(f(p), f(q)) = C(δ)`
//! * `Cov(f(p), ∂ⱼf(q)) = −∂ⱼC(δ)`
//! * `Cov(∂ᵢf(p), f(q)) = ∂ᵢC(δ)`
//! * `Cov(∂ᵢf(p), ∂ⱼf(q)) = −∂ᵢ∂ⱼC(δ)`
//!
//! These follow from differentiating `C(p − q)` with respect to the
//! coordinates of `p` and `q`.

use nalgebra::{DMatrix, Matrix6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::ThetaSample;

/// Smoothness of the Matérn family used throughout the crate.
pub const MATERN_NU: f64 = 1.5;

/// Below this separation length the Hessian uses its analytic limit at the origin.
pub const HESSIAN_ORIGIN_TOL: f64 = 1e-10;

/// Two locations closer than this (Euclidean, coordinate units) are duplicates.
pub const DUPLICATE_TOL: f64 = 1e-9;

/// A point in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    s1: f64,
    s2: f64,
}

impl Location {
    pub fn new(s1: f64, s2: f64) -> Result<Self> {
        if !(s1.is_finite() && s2.is_finite()) {
            return Err(Error::Domain(format!("location ({s1}, {s2}) is not finite")));
        }
        Ok(Self { s1, s2 })
    }

    pub fn s1(&self) -> f64 {
        self.s1
    }

    pub fn s2(&self) -> f64 {
        self.s2
    }

    /// Separation `self − other`.
    pub fn separation(&self, other: &Location) -> SeparationVector {
        SeparationVector {
            d1: self.s1 - other.s1,
            d2: self.s2 - other.s2,
        }
    }

    pub fn distance(&self, other: &Location) -> f64 {
        self.separation(other).norm()
    }

    /// The location moved by `h` along `u`.
    pub fn offset(&self, u: &UnitVector, h: f64) -> Location {
        Location {
            s1: self.s1 + h * u.u1,
            s2: self.s2 + h * u.u2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparationVector {
    d1: f64,
    d2: f64,
}

impl SeparationVector {
    pub fn new(d1: f64, d2: f64) -> Result<Self> {
        if !(d1.is_finite() && d2.is_finite()) {
            return Err(Error::Domain(format!("separation ({d1}, {d2}) is not finite")));
        }
        Ok(Self { d1, d2 })
    }

    pub fn d1(&self) -> f64 {
        self.d1
    }

    pub fn d2(&self) -> f64 {
        self.d2
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.d1, self.d2]
    }

    pub fn norm(&self) -> f64 {
        self.d1.hypot(self.d2)
    }

    pub fn neg(&self) -> Self {
        Self {
            d1: -self.d1,
            d2: -self.d2,
        }
    }
}

/// A direction in the plane with unit Euclidean length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitVector {
    u1: f64,
    u2: f64,
}

impl UnitVector {
    pub const E1: UnitVector = UnitVector { u1: 1.0, u2: 0.0 };
    pub const E2: UnitVector = UnitVector { u1: 0.0, u2: 1.0 };

    /// Accepts `(u1, u2)` only if it already has unit length within 1e-12.
    pub fn new(u1: f64, u2: f64) -> Result<Self> {
        let len2 = u1 * u1 + u2 * u2;
        if !len2.is_finite() || (len2 - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!(
                "({u1}, {u2}) is not a unit vector (squared length {len2})"
            )));
        }
        Ok(Self { u1, u2 })
    }

    /// Scales `(u1, u2)` to unit length.
    pub fn normalized(u1: f64, u2: f64) -> Result<Self> {
        let len = u1.hypot(u2);
        if !len.is_finite() || len == 0.0 {
            return Err(Error::Domain(format!("cannot normalize ({u1}, {u2})")));
        }
        Ok(Self {
            u1: u1 / len,
            u2: u2 / len,
        })
    }

    pub fn u1(&self) -> f64 {
        self.u1
    }

    pub fn u2(&self) -> f64 {
        self.u2
    }

    pub fn neg(&self) -> Self {
        Self {
            u1: -self.u1,
            u2: -self.u2,
        }
    }

    pub fn dot(&self, v: &[f64; 2]) -> f64 {
        self.u1 * v[0] + self.u2 * v[1]
    }
}

/// Variance and decay of a Matérn covariance with ν fixed at 3/2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    sigma2: f64,
    phi: f64,
}

impl MaternParams {
    pub fn new(sigma2: f64, phi: f64) -> Result<Self> {
        if !(sigma2.is_finite() && sigma2 > 0.0) {
            return Err(Error::Domain(format!("variance must be positive, got {sigma2}")));
        }
        if !(phi.is_finite() && phi > 0.0) {
            return Err(Error::Domain(format!("decay must be positive, got {phi}")));
        }
        Ok(Self { sigma2, phi })
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn nu(&self) -> f64 {
        MATERN_NU
    }

    /// Same decay, unit variance.
    pub fn correlation(&self) -> Self {
        Self {
            sigma2: 1.0,
            phi: self.phi,
        }
    }
}

/// `σ²(1 + φ‖δ‖)exp(−φ‖δ‖)`.
pub fn cov_matern32(delta: &SeparationVector, p: &MaternParams) -> f64 {
    let pr = p.phi * delta.norm();
    p.sigma2 * (1.0 + pr) * (-pr).exp()
}

/// `∇C(δ) = −σ²φ²exp(−φ‖δ‖)δ`.
pub fn grad_matern32(delta: &SeparationVector, p: &MaternParams) -> [f64; 2] {
    let f = -p.sigma2 * p.phi * p.phi * (-p.phi * delta.norm()).exp();
    [f * delta.d1, f * delta.d2]
}

/// Hessian of [`cov_matern32`] with respect to `δ`; at the origin returns
/// the limit `−σ²φ²I`.
pub fn hess_matern32(delta: &SeparationVector, p: &MaternParams) -> [[f64; 2]; 2] {
    let r = delta.norm();
    let s2p2 = p.sigma2 * p.phi * p.phi;
    if r < HESSIAN_ORIGIN_TOL {
        return [[-s2p2, 0.0], [0.0, -s2p2]];
    }
    let e = (-p.phi * r).exp();
    let d = delta.as_array();
    let diag = |i: usize| -s2p2 * e * (1.0 - p.phi * d[i] * d[i] / r);
    let off = s2p2 * p.phi * e * d[0] * d[1] / r;
    [[diag(0), off], [off, diag(1)]]
}

/// A linear functional of a scalar field evaluated at a point: its value or
/// one partial derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Functional {
    Level,
    /// Partial derivative along coordinate axis 0 (`s1`) or 1 (`s2`).
    Partial(usize),
}

impl Functional {
    pub const GRADIENT: [Functional; 2] = [Functional::Partial(0), Functional::Partial(1)];
}

/// Covariance between two functionals of one Matérn field at `p` and `q`.
pub fn matern_functional_cov(
    a: Functional,
    p: &Location,
    b: Functional,
    q: &Location,
    params: &MaternParams,
) -> f64 {
    let delta = p.separation(q);
    match (a, b) {
        (Functional::Level, Functional::Level) => cov_matern32(&delta, params),
        (Functional::Level, Functional::Partial(j)) => -grad_matern32(&delta, params)[j],
        (Functional::Partial(i), Functional::Level) => grad_matern32(&delta, params)[i],
        (Functional::Partial(i), Functional::Partial(j)) => -hess_matern32(&delta, params)[i][j],
    }
}

/// Anything that can give the covariance between two indexed functionals at
/// two locations.
pub trait CrossCovariance: Sync {
    type Component: Copy + Send + Sync;

    fn cross_cov(&self, a: Self::Component, p: &Location, b: Self::Component, q: &Location) -> f64;
}

impl CrossCovariance for MaternParams {
    type Component = Functional;

    fn cross_cov(&self, a: Functional, p: &Location, b: Functional, q: &Location) -> f64 {
        matern_functional_cov(a, p, b, q, self)
    }
}

/// Which of the two jointly modelled surfaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    Response,
    Covariate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Component {
    pub field: Field,
    pub functional: Functional,
}

impl Component {
    pub const Y: Component = Component {
        field: Field::Response,
        functional: Functional::Level,
    };
    pub const X: Component = Component {
        field: Field::Covariate,
        functional: Functional::Level,
    };

    pub fn grad(field: Field, axis: usize) -> Self {
        Component {
            field,
            functional: Functional::Partial(axis),
        }
    }
}

/// Covariance structure of the centred pair `X = w_x`, `Y = βX + w_y` with
/// independent Matérn fields `w_y ~ K` and `w_x ~ G`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BivariateKernel {
    pub k: MaternParams,
    pub g: MaternParams,
    pub beta: f64,
}

impl BivariateKernel {
    pub fn new(k: MaternParams, g: MaternParams, beta: f64) -> Result<Self> {
        if !beta.is_finite() {
            return Err(Error::Domain(format!("slope {beta} is not finite")));
        }
        Ok(Self { k, g, beta })
    }

    pub fn from_theta(theta: &ThetaSample) -> Result<Self> {
        Self::new(
            MaternParams::new(theta.sigma2_y, theta.phi_y)?,
            MaternParams::new(theta.sigma2_x, theta.phi_x)?,
            theta.beta1,
        )
    }

    /// Loadings of a field on `(w_y, w_x)`.
    fn loadings(&self, field: Field) -> (f64, f64) {
        match field {
            Field::Response => (1.0, self.beta),
            Field::Covariate => (0.0, 1.0),
        }
    }
}

impl CrossCovariance for BivariateKernel {
    type Component = Component;

    fn cross_cov(&self, a: Component, p: &Location, b: Component, q: &Location) -> f64 {
        let (ay, ax) = self.loadings(a.field);
        let (by, bx) = self.loadings(b.field);
        let mut c = 0.0;
        if ay != 0.0 && by != 0.0 {
            c += ay * by * matern_functional_cov(a.functional, p, b.functional, q, &self.k);
        }
        if ax != 0.0 && bx != 0.0 {
            c += ax * bx * matern_functional_cov(a.functional, p, b.functional, q, &self.g);
        }
        c
    }
}

/// Dense symmetric covariance of the listed (location, component) pairs.
pub fn covariance_matrix<C: CrossCovariance>(
    cov: &C,
    points: &[(Location, C::Component)],
) -> DMatrix<f64> {
    let n = points.len();
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        let (q, b) = &points[j];
        for i in 0..=j {
            let (p, a) = &points[i];
            let v = cov.cross_cov(*a, p, *b, q);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Rectangular cross-covariance between two lists of (location, component) pairs.
pub fn cross_covariance_matrix<C: CrossCovariance>(
    cov: &C,
    rows: &[(Location, C::Component)],
    cols: &[(Location, C::Component)],
) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| {
        let (p, a) = &rows[i];
        let (q, b) = &cols[j];
        cov.cross_cov(*a, p, *b, q)
    })
}

/// Fails with the first pair of locations closer than [`DUPLICATE_TOL`].
pub fn check_distinct(locations: &[Location]) -> Result<()> {
    // Sort by s1 so only a narrow band of neighbours needs checking.
    let mut order: Vec<usize> = (0..locations.len()).collect();
    order.sort_by(|&a, &b| locations[a].s1.total_cmp(&locations[b].s1));
    for (k, &i) in order.iter().enumerate() {
        for &j in &order[k + 1..] {
            if locations[j].s1 - locations[i].s1 > DUPLICATE_TOL {
                break;
            }
            if locations[i].distance(&locations[j]) <= DUPLICATE_TOL {
                let (first, second) = (i.min(j), i.max(j));
                return Err(Error::DuplicateLocation {
                    first,
                    second,
                    tolerance: DUPLICATE_TOL,
                    s1: locations[first].s1,
                    s2: locations[first].s2,
                });
            }
        }
    }
    Ok(())
}

/// 6×6 covariance of `(Y, X, ∂₁Y, ∂₂Y, ∂₁X, ∂₂X)` at a common point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointCovBlock(pub Matrix6<f64>);

impl JointCovBlock {
    pub const ORDER: [Component; 6] = [
        Component::Y,
        Component::X,
        Component {
            field: Field::Response,
            functional: Functional::Partial(0),
        },
        Component {
            field: Field::Response,
            functional: Functional::Partial(1),
        },
        Component {
            field: Field::Covariate,
            functional: Functional::Partial(0),
        },
        Component {
            field: Field::Covariate,
            functional: Functional::Partial(1),
        },
    ];

    pub fn matrix(&self) -> &Matrix6<f64> {
        &self.0
    }

    /// The 4×4 covariance of `(∇Y, ∇X)`.
    pub fn gradient_block(&self) -> nalgebra::Matrix4<f64> {
        self.0.fixed_view::<4, 4>(2, 2).into_owned()
    }
}

/// Covariance of levels and gradients at a single location (separation zero).
pub fn local_cov_block(theta: &ThetaSample) -> Result<JointCovBlock> {
    let kernel = BivariateKernel::from_theta(theta)?;
    let origin = Location { s1: 0.0, s2: 0.0 };
    let order = JointCovBlock::ORDER;
    let m = Matrix6::from_fn(|i, j| kernel.cross_cov(order[i], &origin, order[j], &origin));
    Ok(JointCovBlock(m))
}

/// Stacking order used by [`joint_cov_matrix`]:
/// `Y(obs), X(obs), Y(targets), X(targets), ∇Y(targets), ∇X(targets)`, with
/// the two gradient components of each target adjacent.
pub fn joint_layout(obs: &[Location], targets: &[Location]) -> Vec<(Location, Component)> {
    let mut pts = Vec::with_capacity(2 * obs.len() + 6 * targets.len());
    pts.extend(obs.iter().map(|&s| (s, Component::Y)));
    pts.extend(obs.iter().map(|&s| (s, Component::X)));
    pts.extend(targets.iter().map(|&s| (s, Component::Y)));
    pts.extend(targets.iter().map(|&s| (s, Component::X)));
    for field in [Field::Response, Field::Covariate] {
        for &s in targets {
            pts.push((s, Component::grad(field, 0)));
            pts.push((s, Component::grad(field, 1)));
        }
    }
    pts
}

/// Joint covariance of observed levels and target levels and gradients.
///
/// Verifies the result can be factorized (after ridge escalation) before
/// returning it.
pub fn joint_cov_matrix(
    obs: &[Location],
    targets: &[Location],
    theta: &ThetaSample,
) -> Result<DMatrix<f64>> {
    let all: Vec<Location> = obs.iter().chain(targets).copied().collect();
    check_distinct(&all)?;
    let kernel = BivariateKernel::from_theta(theta)?;
    let m = covariance_matrix(&kernel, &joint_layout(obs, targets));
    linalg::Factor::new(m.clone(), "joint covariance")?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sep(d1: f64, d2: f64) -> SeparationVector {
        SeparationVector::new(d1, d2).unwrap()
    }

    fn p(sigma2: f64, phi: f64) -> MaternParams {
        MaternParams::new(sigma2, phi).unwrap()
    }

    #[test]
    fn cov_examples() {
        assert_eq!(cov_matern32(&sep(0.0, 0.0), &p(1.0, 1.05)), 1.0);
        let v = cov_matern32(&sep(1.0, 0.0), &p(1.0, 1.0));
        assert!((v - 2.0 * (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.735759).abs() < 1e-6);
        let v = cov_matern32(&sep(1.0, 0.0), &p(1.0, 1.05));
        assert!((v - 0.717373).abs() < 1e-6);
    }

    #[test]
    fn grad_and_hess_examples() {
        assert_eq!(grad_matern32(&sep(0.0, 0.0), &p(1.0, 1.05)), [0.0, 0.0]);
        let g = grad_matern32(&sep(1.0, 0.0), &p(1.0, 1.0));
        assert!((g[0] + 0.367879).abs() < 1e-6 && g[1] == 0.0);

        let h = hess_matern32(&sep(0.0, 0.0), &p(1.0, 1.05));
        assert!((h[0][0] + 1.1025).abs() < 1e-14 && (h[1][1] + 1.1025).abs() < 1e-14);
        assert_eq!(h[0][1], 0.0);

        let h = hess_matern32(&sep(1.0, 0.0), &p(1.0, 1.0));
        assert!(h[0][0].abs() < 1e-15);
        assert_eq!(h[0][1], 0.0);
        assert!((h[1][1] + (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn hessian_limit_is_continuous() {
        let params = p(2.0, 0.7);
        let near = hess_matern32(&sep(1e-9, 2e-9), &params);
        let at = hess_matern32(&sep(0.0, 0.0), &params);
        for i in 0..2 {
            for j in 0..2 {
                assert!((near[i][j] - at[i][j]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn rejects_non_finite_inputs() {
        assert!(SeparationVector::new(f64::NAN, 0.0).is_err());
        assert!(Location::new(0.0, f64::INFINITY).is_err());
        assert!(MaternParams::new(0.0, 1.0).is_err());
        assert!(MaternParams::new(1.0, -1.0).is_err());
        assert!(UnitVector::new(1.0, 1.0).is_err());
        assert!(UnitVector::normalized(0.0, 0.0).is_err());
        let u = UnitVector::normalized(0.8508, -0.5255).unwrap();
        assert!(((u.u1() * u.u1() + u.u2() * u.u2()) - 1.0).abs() < 1e-15);
    }

    fn theta(beta1: f64) -> ThetaSample {
        ThetaSample {
            alpha0: 0.0,
            beta0: 0.0,
            beta1,
            sigma2_x: 1.0,
            sigma2_y: 1.0,
            phi_x: 1.05,
            phi_y: 1.05,
        }
    }

    #[test]
    fn local_block_zero_coupling() {
        let b = local_cov_block(&theta(0.0)).unwrap();
        let m = b.matrix();
        assert_eq!(m[(0, 1)], 0.0);
        assert_eq!(m[(2, 4)], 0.0);
        assert_eq!(m[(3, 5)], 0.0);
        assert_eq!(m[(0, 0)], 1.0);
    }

    #[test]
    fn duplicates_are_rejected() {
        let obs = vec![Location::new(0.0, 0.0).unwrap(), Location::new(1.0, 2.0).unwrap()];
        let targets = vec![Location::new(1.0, 2.0 + 1e-12).unwrap()];
        match joint_cov_matrix(&obs, &targets, &theta(0.5)) {
            Err(Error::DuplicateLocation { first, second, .. }) => {
                assert_eq!((first, second), (1, 2));
            }
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn empty_targets_reduce_to_level_covariance() {
        let obs: Vec<Location> = [(0.0, 0.0), (1.0, 0.5), (2.0, 3.0)]
            .iter()
            .map(|&(a, b)| Location::new(a, b).unwrap())
            .collect();
        let t = theta(0.5);
        let m = joint_cov_matrix(&obs, &[], &t).unwrap();
        assert_eq!(m.shape(), (6, 6));
        let kp = p(1.0, 1.05);
        for i in 0..3 {
            for j in 0..3 {
                let g = cov_matern32(&obs[i].separation(&obs[j]), &kp);
                assert!((m[(i, j)] - (g + 0.25 * g)).abs() < 1e-14);
                assert!((m[(i, 3 + j)] - 0.5 * g).abs() < 1e-14);
                assert!((m[(3 + i, 3 + j)] - g).abs() < 1e-14);
            }
        }
    }
}
