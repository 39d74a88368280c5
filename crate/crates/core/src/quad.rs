//! Quadrature engines for the four averaging constructions: periodic time
//! averages, the semicircle-kernel line average, region averages over a
//! compact planar set, and the boundary flux integral that encodes the
//! gradient of a region average.

use thiserror::Error;

use crate::boundary::DitherBoundary;
use crate::vec2::{self, Vec2};

#[derive(Debug, Error)]
pub enum QuadError {
    #[error("invalid quadrature parameter: {0}")]
    BadParam(String),
    #[error("non-finite integrand sample at {at}")]
    NonFinite { at: String },
    #[error("empty quadrature rule")]
    EmptyRule,
    #[error("boundary speed vanishes at a quadrature node (tau = {tau})")]
    DegenerateSpeed { tau: f64 },
}

/// Tags the construction of a [`QuadratureRule`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    PeriodicTrapezoid,
    GaussChebyshev2,
    DiskPolar,
    UserRegion,
}

/// Interior quadrature rule over a planar region.
///
/// Weights are kept in absolute form: they sum to the region area, and
/// [`region_average`] divides by that total.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    nodes: Vec<Vec2>,
    weights: Vec<f64>,
    kind: RuleKind,
}

impl QuadratureRule {
    pub fn new(nodes: Vec<Vec2>, weights: Vec<f64>, kind: RuleKind) -> Result<Self, QuadError> {
        if nodes.is_empty() {
            return Err(QuadError::EmptyRule);
        }
        if nodes.len() != weights.len() {
            return Err(QuadError::BadParam(format!(
                "{} nodes but {} weights",
                nodes.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(QuadError::BadParam(
                "weights must be positive and finite".into(),
            ));
        }
        Ok(QuadratureRule {
            nodes,
            weights,
            kind,
        })
    }

    pub fn nodes(&self) -> &[Vec2] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn kind(&self) -> RuleKind {
        self.kind
    }

    /// Sum of the weights; the area of the region the rule covers.
    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Mean of a scalar periodic function over one period, by the `n`-point
/// rectangle rule on the uniform grid `tau_j = j T / n` (for smooth periodic
/// integrands this is spectrally accurate).
pub fn periodic_average<F>(g: F, period: f64, n: usize) -> Result<f64, QuadError>
where
    F: Fn(f64) -> f64,
{
    if !(period > 0.0) {
        return Err(QuadError::BadParam(format!(
            "period must be > 0, got {period}"
        )));
    }
    if n < 2 {
        return Err(QuadError::BadParam(format!("need n >= 2 nodes, got {n}")));
    }
    let mut acc = 0.0;
    for j in 0..n {
        let tau = period * j as f64 / n as f64;
        let v = g(tau);
        if !v.is_finite() {
            return Err(QuadError::NonFinite {
                at: format!("tau = {tau}"),
            });
        }
        acc += v;
    }
    Ok(acc / n as f64)
}

/// Vector-valued version of [`periodic_average`].
pub fn periodic_average2<F>(g: F, period: f64, n: usize) -> Result<Vec2, QuadError>
where
    F: Fn(f64) -> Vec2,
{
    if !(period > 0.0) {
        return Err(QuadError::BadParam(format!(
            "period must be > 0, got {period}"
        )));
    }
    if n < 2 {
        return Err(QuadError::BadParam(format!("need n >= 2 nodes, got {n}")));
    }
    let mut acc = [0.0, 0.0];
    for j in 0..n {
        let tau = period * j as f64 / n as f64;
        let v = g(tau);
        if !v[0].is_finite() || !v[1].is_finite() {
            return Err(QuadError::NonFinite {
                at: format!("tau = {tau}"),
            });
        }
        acc = vec2::add(acc, v);
    }
    Ok(vec2::scale(1.0 / n as f64, acc))
}

/// Gauss-Chebyshev nodes and weights of the second kind on `[-1, 1]`:
/// `sum w_j f(s_j)` approximates the integral of `f(s) sqrt(1 - s^2)` and is
/// exact for polynomials of degree `<= 2n - 1`.
///
/// Nodes are mirrored around zero so the rule is symmetric to the last bit.
pub fn gauss_chebyshev2(n: usize) -> (Vec<f64>, Vec<f64>) {
    let m = (n + 1) as f64;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for j in 1..=n {
        if 2 * j < n + 1 {
            let angle = std::f64::consts::PI * j as f64 / m;
            nodes[j - 1] = angle.cos();
            weights[j - 1] = std::f64::consts::PI / m * angle.sin().powi(2);
        } else if 2 * j == n + 1 {
            nodes[j - 1] = 0.0;
            weights[j - 1] = std::f64::consts::PI / m;
        } else {
            // Mirror of node n + 1 - j.
            nodes[j - 1] = -nodes[n - j];
            weights[j - 1] = weights[n - j];
        }
    }
    (nodes, weights)
}

/// Local average of a scalar function under the semicircle kernel of radius
/// `a`: `(2/pi) * integral of psi(theta + a s) sqrt(1 - s^2) ds` over
/// `[-1, 1]`, by Gauss-Chebyshev quadrature (exact for polynomial `psi` of
/// degree `<= 2n - 1`).
pub fn semicircle_average<F>(psi: F, theta: f64, a: f64, n: usize) -> Result<f64, QuadError>
where
    F: Fn(f64) -> f64,
{
    if !(a > 0.0) {
        return Err(QuadError::BadParam(format!("radius must be > 0, got {a}")));
    }
    if n < 1 {
        return Err(QuadError::BadParam("need n >= 1 nodes".into()));
    }
    let (nodes, weights) = gauss_chebyshev2(n);
    let mut acc = 0.0;
    for (s, w) in nodes.iter().zip(&weights) {
        let v = psi(theta + a * s);
        if !v.is_finite() {
            return Err(QuadError::NonFinite {
                at: format!("theta + a s = {}", theta + a * s),
            });
        }
        acc += w * v;
    }
    Ok(acc * std::f64::consts::FRAC_2_PI)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` (Newton iteration on the
/// Legendre recurrence).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Evaluate P_n and P_n' at x by the three-term recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    // The initial guesses enumerate roots in descending order.
    nodes.reverse();
    weights.reverse();
    (nodes, weights)
}

/// Tensor rule over the closed disk of radius `a` centered at the origin:
/// Gauss-Legendre in the `r^2` substitution crossed with a uniform angular
/// grid. Weights sum to `pi a^2`.
pub fn disk_rule(a: f64, n_r: usize, n_phi: usize) -> Result<QuadratureRule, QuadError> {
    if !(a > 0.0) {
        return Err(QuadError::BadParam(format!("radius must be > 0, got {a}")));
    }
    if n_r < 1 || n_phi < 4 {
        return Err(QuadError::BadParam(format!(
            "need n_r >= 1 and n_phi >= 4, got n_r = {n_r}, n_phi = {n_phi}"
        )));
    }
    let (gl_nodes, gl_weights) = gauss_legendre(n_r);
    let mut nodes = Vec::with_capacity(n_r * n_phi);
    let mut weights = Vec::with_capacity(n_r * n_phi);
    let w_phi = std::f64::consts::PI * a * a / (2.0 * n_phi as f64);
    for (x, wr) in gl_nodes.iter().zip(&gl_weights) {
        // s = r^2 mapped from [-1, 1] to [0, a^2].
        let s = 0.5 * a * a * (x + 1.0);
        let r = s.sqrt();
        for k in 0..n_phi {
            let phi = 2.0 * std::f64::consts::PI * k as f64 / n_phi as f64;
            nodes.push([r * phi.cos(), r * phi.sin()]);
            weights.push(w_phi * wr);
        }
    }
    QuadratureRule::new(nodes, weights, RuleKind::DiskPolar)
}

/// Mean of `psi` over the region covered by `rule`, shifted to `q`:
/// `sum w_j psi(q + p_j) / sum w_j`.
pub fn region_average<F>(psi: F, q: Vec2, rule: &QuadratureRule) -> Result<f64, QuadError>
where
    F: Fn(Vec2) -> f64,
{
    if rule.nodes.is_empty() {
        return Err(QuadError::EmptyRule);
    }
    let mut acc = 0.0;
    for (p, w) in rule.nodes.iter().zip(&rule.weights) {
        let v = psi(vec2::add(q, *p));
        if !v.is_finite() {
            return Err(QuadError::NonFinite {
                at: format!("p = {p:?}"),
            });
        }
        acc += w * v;
    }
    Ok(acc / rule.total_weight())
}

/// Boundary flux integral: the periodic-trapezoid discretization of
///
/// `(c / A(M)) * integral over one period of psi(q + u(tau)) |u'(tau)|
/// nu(u(tau)) d tau`,
///
/// which equals `c` times the gradient of the region average of `psi` for a
/// closed boundary.
pub fn boundary_flux<F>(
    psi: F,
    q: Vec2,
    boundary: &DitherBoundary,
    c: f64,
    n: usize,
) -> Result<Vec2, QuadError>
where
    F: Fn(Vec2) -> f64,
{
    if n < 8 {
        return Err(QuadError::BadParam(format!(
            "need n >= 8 boundary nodes, got {n}"
        )));
    }
    let period = boundary.period();
    let mut acc = [0.0, 0.0];
    for j in 0..n {
        let tau = period * j as f64 / n as f64;
        let speed = boundary.speed_at(tau);
        if speed <= 1e-14 {
            return Err(QuadError::DegenerateSpeed { tau });
        }
        let v = psi(vec2::add(q, boundary.at(tau)));
        if !v.is_finite() {
            return Err(QuadError::NonFinite {
                at: format!("tau = {tau}"),
            });
        }
        acc = vec2::add(acc, vec2::scale(v * speed, boundary.normal_at(tau)));
    }
    Ok(vec2::scale(c * period / (boundary.area() * n as f64), acc))
}
