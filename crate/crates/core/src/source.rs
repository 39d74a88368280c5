//! Planar source seeking with a damped double-integrator point mass.
//!
//! The point mass traces a fast periodic dither along the boundary of a
//! prescribed region while the measured signal, high-pass filtered, gates a
//! normal-direction force. Averaging over one dither period turns the loop
//! into a heavy-ball system driven by the gradient of the signal averaged
//! over the enclosed region. This module carries the control force (with the
//! unknown-mass rescaling), the closed loop in original and dither-removed
//! coordinates, the averaged system, the divergence-identity check, and the
//! rippled Gaussian demonstration signal.

use std::sync::Arc;

use crate::boundary::{BoundaryError, DitherBoundary};
use crate::quad::{self, QuadError, QuadratureRule};
use crate::vec2::{self, Vec2};

type SignalFn = Arc<dyn Fn(Vec2) -> f64 + Send + Sync>;

/// Physical and control parameters of the source-seeking loop.
///
/// `mu` is the mass assumed by the controller; it defaults to the true mass
/// and only differs in the unknown-mass variant.
#[derive(Debug, Clone, Copy)]
pub struct SourceParams {
    pub m: f64,
    pub kappa: f64,
    pub c: f64,
    pub omega_h: f64,
    pub eps: f64,
    pub mu: f64,
}

impl SourceParams {
    pub fn new(m: f64, kappa: f64, c: f64, omega_h: f64, eps: f64) -> Result<Self, QuadError> {
        for (name, v) in [
            ("m", m),
            ("kappa", kappa),
            ("c", c),
            ("omega_h", omega_h),
            ("eps", eps),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(QuadError::BadParam(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(SourceParams {
            m,
            kappa,
            c,
            omega_h,
            eps,
            mu: m,
        })
    }

    /// Unit constants with the given dither scale, as in the demonstration.
    pub fn unit(eps: f64) -> Result<Self, QuadError> {
        Self::new(1.0, 1.0, 1.0, 1.0, eps)
    }

    pub fn with_assumed_mass(mut self, mu: f64) -> Result<Self, QuadError> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(QuadError::BadParam(format!("mu must be > 0, got {mu}")));
        }
        self.mu = mu;
        Ok(self)
    }
}

/// Position, velocity, and high-pass filter state; flattened as
/// `[q1, q2, v1, v2, eta]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceState {
    pub q: Vec2,
    pub q_dot: Vec2,
    pub eta: f64,
}

impl SourceState {
    pub fn pack(&self) -> Vec<f64> {
        vec![self.q[0], self.q[1], self.q_dot[0], self.q_dot[1], self.eta]
    }

    pub fn unpack(flat: &[f64]) -> Self {
        SourceState {
            q: [flat[0], flat[1]],
            q_dot: [flat[2], flat[3]],
            eta: flat[4],
        }
    }
}

/// Control force: inertial boundary tracking plus signal-gated normal push.
///
/// `f = m (1/eps^2) u''(t/eps) + (c T / A(M)) (y - eta) |u'(t/eps)|
/// nu(u(t/eps))`.
pub fn control_force(p: &SourceParams, b: &DitherBoundary, y: f64, eta: f64, t: f64) -> Vec2 {
    force_with_mass(p.m, p, b, y, eta, t)
}

/// Unknown-mass variant: the assumed mass `mu` replaces the true mass in the
/// inertial term.
pub fn control_force_assumed_mass(
    p: &SourceParams,
    b: &DitherBoundary,
    y: f64,
    eta: f64,
    t: f64,
) -> Vec2 {
    force_with_mass(p.mu, p, b, y, eta, t)
}

fn force_with_mass(
    mass: f64,
    p: &SourceParams,
    b: &DitherBoundary,
    y: f64,
    eta: f64,
    t: f64,
) -> Vec2 {
    let tau = t / p.eps;
    let inertial = vec2::scale(mass / (p.eps * p.eps), b.acceleration_at(tau));
    let gain = p.c * b.period() / b.area() * (y - eta) * b.speed_at(tau);
    vec2::add(inertial, vec2::scale(gain, b.normal_at(tau)))
}

/// Rescaling that brings the unknown-mass force back to nominal form: the
/// boundary is scaled by `mu / m` and the flux gain becomes `(mu / m) c`.
/// The returned pair reproduces [`control_force_assumed_mass`] pointwise when
/// fed to [`control_force`] with the true mass.
pub fn rescaled_boundary(
    p: &SourceParams,
    b: &DitherBoundary,
) -> Result<(DitherBoundary, f64), BoundaryError> {
    let rho = p.mu / p.m;
    Ok((b.scaled(rho)?, rho * p.c))
}

/// Closed loop in the original coordinates:
/// `m q'' = -kappa q' + control_force`, first-order filter on the measured
/// signal.
pub fn closed_loop_rhs(
    psi: &dyn Fn(Vec2) -> f64,
    p: &SourceParams,
    b: &DitherBoundary,
    s: &SourceState,
    t: f64,
) -> Vec<f64> {
    let y = psi(s.q);
    let f = control_force(p, b, y, s.eta, t);
    let acc = vec2::scale(1.0 / p.m, vec2::add(vec2::scale(-p.kappa, s.q_dot), f));
    vec![
        s.q_dot[0],
        s.q_dot[1],
        acc[0],
        acc[1],
        -p.omega_h * s.eta + p.omega_h * y,
    ]
}

/// Flat-closure adapter for [`closed_loop_rhs`].
pub fn closed_loop_system(
    psi: impl Fn(Vec2) -> f64 + 'static,
    p: SourceParams,
    b: DitherBoundary,
) -> impl Fn(&[f64], f64, &mut [f64]) {
    move |flat, t, out| {
        let s = SourceState::unpack(flat);
        out.copy_from_slice(&closed_loop_rhs(&psi, &p, &b, &s, t));
    }
}

/// Change of variables that removes the dither from the position:
/// `q~ = q - u(t/eps) + eps (kappa/m) U(t/eps)`,
/// `q~' = q' - (1/eps) u'(t/eps) + (kappa/m) u(t/eps)`, filter state
/// unchanged.
pub fn to_transformed(
    s: &SourceState,
    p: &SourceParams,
    b: &DitherBoundary,
    t: f64,
) -> SourceState {
    let tau = t / p.eps;
    let km = p.kappa / p.m;
    SourceState {
        q: vec2::add(
            vec2::sub(s.q, b.at(tau)),
            vec2::scale(p.eps * km, b.antiderivative_at(tau)),
        ),
        q_dot: vec2::add(
            vec2::sub(s.q_dot, vec2::scale(1.0 / p.eps, b.velocity_at(tau))),
            vec2::scale(km, b.at(tau)),
        ),
        eta: s.eta,
    }
}

/// Inverse of [`to_transformed`].
pub fn from_transformed(
    s: &SourceState,
    p: &SourceParams,
    b: &DitherBoundary,
    t: f64,
) -> SourceState {
    let tau = t / p.eps;
    let km = p.kappa / p.m;
    SourceState {
        q: vec2::sub(
            vec2::add(s.q, b.at(tau)),
            vec2::scale(p.eps * km, b.antiderivative_at(tau)),
        ),
        q_dot: vec2::sub(
            vec2::add(s.q_dot, vec2::scale(1.0 / p.eps, b.velocity_at(tau))),
            vec2::scale(km, b.at(tau)),
        ),
        eta: s.eta,
    }
}

/// Closed loop in the transformed coordinates; the inertial dither term is
/// cancelled and a bounded zero-mean `(kappa^2/m) u(t/eps)` drive remains.
pub fn transformed_rhs(
    psi: &dyn Fn(Vec2) -> f64,
    p: &SourceParams,
    b: &DitherBoundary,
    state: &[f64],
    t: f64,
) -> Vec<f64> {
    let s = SourceState::unpack(state);
    let tau = t / p.eps;
    let km = p.kappa / p.m;
    // Original position reconstructed from the transformed one.
    let q = vec2::sub(
        vec2::add(s.q, b.at(tau)),
        vec2::scale(p.eps * km, b.antiderivative_at(tau)),
    );
    let y = psi(q);
    let flux_gain = p.c * b.period() / b.area() * (y - s.eta) * b.speed_at(tau);
    let mut force = vec2::scale(flux_gain, b.normal_at(tau));
    force = vec2::add(force, vec2::scale(p.kappa * p.kappa / p.m, b.at(tau)));
    let acc = vec2::scale(1.0 / p.m, vec2::add(vec2::scale(-p.kappa, s.q_dot), force));
    vec![
        s.q_dot[0],
        s.q_dot[1],
        acc[0],
        acc[1],
        -p.omega_h * s.eta + p.omega_h * y,
    ]
}

/// Flat-closure adapter for [`transformed_rhs`].
pub fn transformed_system(
    psi: impl Fn(Vec2) -> f64 + 'static,
    p: SourceParams,
    b: DitherBoundary,
) -> impl Fn(&[f64], f64, &mut [f64]) {
    move |flat, t, out| out.copy_from_slice(&transformed_rhs(&psi, &p, &b, flat, t))
}

/// Quadrature-backed evaluators for the region average of the signal, the
/// boundary-flux force, and the boundary mean.
#[derive(Clone)]
pub struct AveragedObjective2D {
    psi: SignalFn,
    boundary: DitherBoundary,
    interior: QuadratureRule,
    c: f64,
    boundary_nodes: usize,
}

impl std::fmt::Debug for AveragedObjective2D {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AveragedObjective2D")
            .field("c", &self.c)
            .field("boundary_nodes", &self.boundary_nodes)
            .finish_non_exhaustive()
    }
}

impl AveragedObjective2D {
    pub fn new(
        psi: impl Fn(Vec2) -> f64 + Send + Sync + 'static,
        boundary: DitherBoundary,
        interior: QuadratureRule,
        c: f64,
    ) -> Result<Self, QuadError> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(QuadError::BadParam(format!(
                "flux gain must be > 0, got {c}"
            )));
        }
        let area_gap = (interior.total_weight() - boundary.area()).abs();
        if area_gap > 1e-9 * boundary.area() {
            return Err(QuadError::BadParam(format!(
                "interior rule covers area {} but the boundary encloses {}",
                interior.total_weight(),
                boundary.area()
            )));
        }
        Ok(AveragedObjective2D {
            psi: Arc::new(psi),
            boundary,
            interior,
            c,
            boundary_nodes: 256,
        })
    }

    /// Disk of radius `a` with the default interior rule.
    pub fn disk(
        psi: impl Fn(Vec2) -> f64 + Send + Sync + 'static,
        a: f64,
        c: f64,
    ) -> Result<Self, QuadError> {
        let boundary = DitherBoundary::circle(a).map_err(|e| QuadError::BadParam(e.to_string()))?;
        let interior = quad::disk_rule(a, 64, 128)?;
        Self::new(psi, boundary, interior, c)
    }

    pub fn with_boundary_nodes(mut self, n: usize) -> Self {
        self.boundary_nodes = n;
        self
    }

    pub fn boundary(&self) -> &DitherBoundary {
        &self.boundary
    }

    pub fn gain(&self) -> f64 {
        self.c
    }

    pub fn psi(&self, q: Vec2) -> f64 {
        (self.psi)(q)
    }

    /// Region average of the signal around `q`.
    pub fn averaged(&self, q: Vec2) -> Result<f64, QuadError> {
        quad::region_average(|p| (self.psi)(p), q, &self.interior)
    }

    /// Boundary-flux force; equals `c` times the gradient of [`averaged`] up
    /// to quadrature error, and is the authoritative drive of the averaged
    /// system.
    pub fn force(&self, q: Vec2) -> Result<Vec2, QuadError> {
        quad::boundary_flux(
            |p| (self.psi)(p),
            q,
            &self.boundary,
            self.c,
            self.boundary_nodes,
        )
    }

    /// Gradient of the region average, reconstructed from the flux.
    pub fn grad_averaged(&self, q: Vec2) -> Result<Vec2, QuadError> {
        Ok(vec2::scale(1.0 / self.c, self.force(q)?))
    }

    /// Gradient of the region average by central differences (step `h`).
    pub fn grad_averaged_fd(&self, q: Vec2, h: f64) -> Result<Vec2, QuadError> {
        let mut g = [0.0, 0.0];
        for i in 0..2 {
            let mut qp = q;
            let mut qm = q;
            qp[i] += h;
            qm[i] -= h;
            g[i] = (self.averaged(qp)? - self.averaged(qm)?) / (2.0 * h);
        }
        Ok(g)
    }

    /// Mean of the signal along the boundary curve; the value the high-pass
    /// state settles to.
    pub fn filter_mean(&self, q: Vec2) -> Result<f64, QuadError> {
        quad::periodic_average(
            |tau| (self.psi)(vec2::add(q, self.boundary.at(tau))),
            self.boundary.period(),
            self.boundary_nodes,
        )
    }
}

/// Averaged system: heavy ball under the boundary-flux force, cascaded with
/// the averaged filter. State `[q1, q2, v1, v2, eta]`.
pub fn averaged_rhs(
    obj: &AveragedObjective2D,
    p: &SourceParams,
    state: &[f64],
) -> Result<Vec<f64>, QuadError> {
    let s = SourceState::unpack(state);
    let f = obj.force(s.q)?;
    let acc = vec2::scale(1.0 / p.m, vec2::add(vec2::scale(-p.kappa, s.q_dot), f));
    Ok(vec![
        s.q_dot[0],
        s.q_dot[1],
        acc[0],
        acc[1],
        -p.omega_h * s.eta + p.omega_h * obj.filter_mean(s.q)?,
    ])
}

/// Flat-closure adapter for [`averaged_rhs`]; quadrature failures surface as
/// non-finite derivatives.
pub fn averaged_system(
    obj: AveragedObjective2D,
    p: SourceParams,
) -> impl Fn(&[f64], f64, &mut [f64]) {
    move |flat, _t, out| match averaged_rhs(&obj, &p, flat) {
        Ok(v) => out.copy_from_slice(&v),
        Err(_) => out.fill(f64::NAN),
    }
}

/// Worst gap over the grid between the boundary-flux force and `c` times the
/// central-difference gradient of the region average (step `1e-4`).
pub fn divergence_identity_residual(
    obj: &AveragedObjective2D,
    grid: &[Vec2],
) -> Result<f64, QuadError> {
    let mut worst: f64 = 0.0;
    for &q in grid {
        let flux = obj.force(q)?;
        let grad = obj.grad_averaged_fd(q, 1e-4)?;
        let gap = vec2::norm(vec2::sub(flux, vec2::scale(obj.gain(), grad)));
        worst = worst.max(gap);
    }
    Ok(worst)
}

/// Demonstration signal: a cosine ripple lattice under a broad Gaussian
/// envelope, with the global maximum at the origin and infinitely many local
/// extrema.
pub fn demo_signal(q: Vec2) -> f64 {
    let r2 = (q[0] * q[0] + q[1] * q[1]) / 25.0;
    (6.0 + (3.0 * q[0]).cos() + (3.0 * q[1]).cos()) * (-r2).exp()
}

/// Rectangular scan lattice.
#[derive(Debug, Clone, Copy)]
pub struct GridSpec2D {
    pub lo: Vec2,
    pub hi: Vec2,
    pub step: f64,
}

impl GridSpec2D {
    pub fn square(half_width: f64, step: f64) -> Self {
        GridSpec2D {
            lo: [-half_width, -half_width],
            hi: [half_width, half_width],
            step,
        }
    }

    fn counts(&self) -> (usize, usize) {
        let nx = ((self.hi[0] - self.lo[0]) / self.step).round() as usize + 1;
        let ny = ((self.hi[1] - self.lo[1]) / self.step).round() as usize + 1;
        (nx, ny)
    }

    fn point(&self, i: usize, j: usize) -> Vec2 {
        [
            self.lo[0] + self.step * i as f64,
            self.lo[1] + self.step * j as f64,
        ]
    }

    pub fn points(&self) -> Vec<Vec2> {
        let (nx, ny) = self.counts();
        let mut out = Vec::with_capacity(nx * ny);
        for i in 0..nx {
            for j in 0..ny {
                out.push(self.point(i, j));
            }
        }
        out
    }
}

/// Scan report for the global-maximizer conditions of the averaged signal:
/// (value) the candidate dominates everywhere, (gradient) no other critical
/// point, (radial) the gradient points inward outside a compact set.
#[derive(Debug, Clone)]
pub struct Assumption4Report {
    pub holds: bool,
    pub value_condition_holds: bool,
    pub gradient_condition_holds: bool,
    pub radial_condition_holds: bool,
    pub value_violations: Vec<Vec2>,
    /// Non-candidate critical points located by Newton refinement.
    pub critical_points: Vec<Vec2>,
    pub radial_violations: Vec<Vec2>,
}

/// Checks the three conditions over a scan lattice.
///
/// The value and radial conditions are grid scans. The no-other-critical-
/// point condition cannot be decided by thresholding gradient magnitudes on
/// a lattice (the gradient decays to zero in the far field), so grid points
/// where the gradient magnitude is locally minimal seed a damped Newton
/// search on the flux-based gradient; any refined critical point away from
/// the candidate fails the condition.
pub fn check_assumption4(
    obj: &AveragedObjective2D,
    q_star: Vec2,
    grid: &GridSpec2D,
    c_radius: f64,
) -> Result<Assumption4Report, QuadError> {
    let (nx, ny) = grid.counts();
    let star_value = obj.averaged(q_star)?;
    let exclude = 2.0 * grid.step;

    let mut value_violations = Vec::new();
    let mut radial_violations = Vec::new();
    // Gradient magnitude normalized by the local signal level: the raw
    // magnitude decays to zero in the far field of a localized signal, which
    // would drown true critical points among far-field lattice minima.
    let mut grad_rel = vec![f64::INFINITY; nx * ny];

    for i in 0..nx {
        for j in 0..ny {
            let q = grid.point(i, j);
            let d = vec2::sub(q, q_star);
            let dist = vec2::norm(d);
            if dist < exclude {
                continue;
            }
            let value = obj.averaged(q)?;
            if value >= star_value {
                value_violations.push(q);
            }
            let g = obj.grad_averaged(q)?;
            grad_rel[i * ny + j] = vec2::norm(g) / value.abs().max(1e-12);
            if dist > c_radius && vec2::dot(g, d) > 1e-9 {
                radial_violations.push(q);
            }
        }
    }

    // Seeds: strict local minima of the relative gradient on the lattice.
    let mut seeds: Vec<(f64, Vec2)> = Vec::new();
    for i in 1..nx - 1 {
        for j in 1..ny - 1 {
            let here = grad_rel[i * ny + j];
            if !here.is_finite() {
                continue;
            }
            let mut minimal = true;
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let ni = (i as i64 + di) as usize;
                    let nj = (j as i64 + dj) as usize;
                    if grad_rel[ni * ny + nj] <= here {
                        minimal = false;
                    }
                }
            }
            if minimal {
                seeds.push((here, grid.point(i, j)));
            }
        }
    }
    seeds.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    seeds.truncate(32);

    let mut critical_points: Vec<Vec2> = Vec::new();
    for (_, seed) in seeds {
        if let Some(qc) = refine_critical_point(obj, seed, grid)? {
            if vec2::norm(vec2::sub(qc, q_star)) > exclude.max(0.5)
                && !critical_points
                    .iter()
                    .any(|p| vec2::norm(vec2::sub(*p, qc)) < 0.1)
            {
                critical_points.push(qc);
            }
        }
    }

    let value_condition_holds = value_violations.is_empty();
    let gradient_condition_holds = critical_points.is_empty();
    let radial_condition_holds = radial_violations.is_empty();
    Ok(Assumption4Report {
        holds: value_condition_holds && gradient_condition_holds && radial_condition_holds,
        value_condition_holds,
        gradient_condition_holds,
        radial_condition_holds,
        value_violations,
        critical_points,
        radial_violations,
    })
}

/// Damped Newton iteration on the flux-based gradient. Returns a point with
/// gradient magnitude below 1e-7, or `None` when the iteration leaves the
/// lattice box or fails to converge.
fn refine_critical_point(
    obj: &AveragedObjective2D,
    seed: Vec2,
    grid: &GridSpec2D,
) -> Result<Option<Vec2>, QuadError> {
    const GRAD_TOL: f64 = 1e-7;
    const MAX_STEP: f64 = 1.0;
    let h = 1e-3;
    let mut q = seed;
    for _ in 0..30 {
        let g = obj.grad_averaged(q)?;
        if vec2::norm(g) < GRAD_TOL {
            return Ok(Some(q));
        }
        // Finite-difference Jacobian of the gradient.
        let mut jac = [[0.0; 2]; 2];
        for i in 0..2 {
            let mut qp = q;
            let mut qm = q;
            qp[i] += h;
            qm[i] -= h;
            let gp = obj.grad_averaged(qp)?;
            let gm = obj.grad_averaged(qm)?;
            jac[0][i] = (gp[0] - gm[0]) / (2.0 * h);
            jac[1][i] = (gp[1] - gm[1]) / (2.0 * h);
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if det.abs() < 1e-14 {
            return Ok(None);
        }
        let mut step = [
            -(jac[1][1] * g[0] - jac[0][1] * g[1]) / det,
            -(-jac[1][0] * g[0] + jac[0][0] * g[1]) / det,
        ];
        let len = vec2::norm(step);
        if len > MAX_STEP {
            step = vec2::scale(MAX_STEP / len, step);
        }
        q = vec2::add(q, step);
        if q[0] < grid.lo[0] || q[0] > grid.hi[0] || q[1] < grid.lo[1] || q[1] > grid.hi[1] {
            return Ok(None);
        }
    }
    Ok(None)
}
