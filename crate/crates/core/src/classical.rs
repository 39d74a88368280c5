//! Classical extremum seeking for steady-state output optimization.
//!
//! A scalar control parameter is modulated with a sinusoidal dither, the
//! measured plant output is high-pass filtered and demodulated, and the
//! estimate integrates the resulting drive. With the dither frequency and
//! all filter rates scaled by one small parameter, the estimate behaves like
//! a damped double integrator driven by the gradient of the steady-state
//! output function averaged under a semicircle kernel of radius `a`. This
//! module carries the closed loop (in both time scales), the reduced and
//! averaged systems, the averaged-objective evaluators, and the quartic
//! demonstration problem.

use std::sync::Arc;

use crate::quad::{self, QuadError};

type DynamicsFn = Arc<dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync>;
type OutputFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type FeedbackFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;
type EquilibriumFn = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;
type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Plant, feedback, output, and parameter-to-equilibrium map.
#[derive(Clone)]
pub struct ClassicalPlant {
    n: usize,
    dynamics: DynamicsFn,
    output: OutputFn,
    feedback: FeedbackFn,
    equilibrium: EquilibriumFn,
}

impl std::fmt::Debug for ClassicalPlant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClassicalPlant")
            .field("n", &self.n)
            .finish_non_exhaustive()
    }
}

impl ClassicalPlant {
    pub fn new(
        n: usize,
        dynamics: impl Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static,
        output: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        feedback: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
        equilibrium: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        ClassicalPlant {
            n,
            dynamics: Arc::new(dynamics),
            output: Arc::new(output),
            feedback: Arc::new(feedback),
            equilibrium: Arc::new(equilibrium),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn dynamics(&self, x: &[f64], u: f64, out: &mut [f64]) {
        (self.dynamics)(x, u, out)
    }

    pub fn output(&self, x: &[f64]) -> f64 {
        (self.output)(x)
    }

    pub fn feedback(&self, x: &[f64], theta: f64) -> f64 {
        (self.feedback)(x, theta)
    }

    pub fn equilibrium(&self, theta: f64) -> Vec<f64> {
        (self.equilibrium)(theta)
    }

    /// Steady-state output: the plant output at the equilibrium for a frozen
    /// control parameter.
    pub fn steady_state_output(&self, theta: f64) -> f64 {
        self.output(&self.equilibrium(theta))
    }

    /// Largest norm of the closed-loop vector field at the claimed
    /// equilibria over a parameter grid. Zero (to tolerance) certifies the
    /// equilibrium consistency of the plant/feedback/equilibrium triple.
    pub fn max_equilibrium_defect(&self, thetas: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        let mut dx = vec![0.0; self.n];
        for &theta in thetas {
            let x = self.equilibrium(theta);
            let u = self.feedback(&x, theta);
            self.dynamics(&x, u, &mut dx);
            let norm = dx.iter().map(|v| v * v).sum::<f64>().sqrt();
            worst = worst.max(norm);
        }
        worst
    }
}

/// Control gains: the dither scale `eps`, the dither amplitude `a`, and the
/// O(1) constants for the filter rates and adaptation gain. The physical
/// rates are `eps` times the stored constants.
#[derive(Debug, Clone, Copy)]
pub struct ClassicalGains {
    pub eps: f64,
    pub a: f64,
    pub omega_h: f64,
    pub omega_l: f64,
    pub k: f64,
}

impl ClassicalGains {
    pub fn new(eps: f64, a: f64, omega_h: f64, omega_l: f64, k: f64) -> Result<Self, QuadError> {
        for (name, v) in [
            ("eps", eps),
            ("a", a),
            ("omega_h", omega_h),
            ("omega_l", omega_l),
            ("k", k),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(QuadError::BadParam(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(ClassicalGains {
            eps,
            a,
            omega_h,
            omega_l,
            k,
        })
    }

    /// Unit filter/adaptation constants, as in the demonstration runs.
    pub fn unit(eps: f64, a: f64) -> Result<Self, QuadError> {
        Self::new(eps, a, 1.0, 1.0, 1.0)
    }

    /// Physical high-pass rate.
    pub fn physical_omega_h(&self) -> f64 {
        self.eps * self.omega_h
    }

    /// Physical low-pass rate.
    pub fn physical_omega_l(&self) -> f64 {
        self.eps * self.omega_l
    }

    /// Physical adaptation gain.
    pub fn physical_k(&self) -> f64 {
        self.eps * self.k
    }
}

/// Full closed-loop state: plant state, parameter estimate, demodulation
/// (low-pass) state, high-pass state, and the current dither amplitude.
///
/// The amplitude is part of the integrated state only when amplitude decay
/// is enabled; otherwise it is carried along as a constant.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalState {
    pub x: Vec<f64>,
    pub theta_hat: f64,
    pub xi: f64,
    pub eta: f64,
    pub amplitude: f64,
}

impl ClassicalState {
    /// Flattens to `[x.., theta_hat, xi, eta]` plus the amplitude when decay
    /// is enabled.
    pub fn pack(&self, decay: bool) -> Vec<f64> {
        let mut v = self.x.clone();
        v.push(self.theta_hat);
        v.push(self.xi);
        v.push(self.eta);
        if decay {
            v.push(self.amplitude);
        }
        v
    }

    pub fn unpack(n: usize, flat: &[f64], decay: bool, fixed_amplitude: f64) -> Self {
        ClassicalState {
            x: flat[..n].to_vec(),
            theta_hat: flat[n],
            xi: flat[n + 1],
            eta: flat[n + 2],
            amplitude: if decay { flat[n + 3] } else { fixed_amplitude },
        }
    }
}

/// Closed-loop vector field in physical time `t`.
///
/// With decay enabled the amplitude is a state with `da/dt = -eps^2 a`.
pub fn closed_loop_rhs(
    plant: &ClassicalPlant,
    gains: &ClassicalGains,
    s: &ClassicalState,
    t: f64,
    decay: bool,
) -> Vec<f64> {
    let n = plant.state_dim();
    let a = if decay { s.amplitude } else { gains.a };
    let dither = a * (gains.eps * t).sin();
    let u = plant.feedback(&s.x, s.theta_hat + dither);
    let y = plant.output(&s.x);
    let mut out = vec![0.0; n + 3 + usize::from(decay)];
    plant.dynamics(&s.x, u, &mut out[..n]);
    out[n] = gains.physical_k() * s.xi;
    out[n + 1] = -gains.physical_omega_l() * s.xi + gains.physical_omega_l() * (y - s.eta) * dither;
    out[n + 2] = -gains.physical_omega_h() * s.eta + gains.physical_omega_h() * y;
    if decay {
        out[n + 3] = -gains.eps * gains.eps * s.amplitude;
    }
    out
}

/// Closed-loop vector field in the dither time scale `tau = eps t`
/// (derivatives with respect to `tau`; the plant equation is divided by
/// `eps`).
pub fn time_scaled_rhs(
    plant: &ClassicalPlant,
    gains: &ClassicalGains,
    s: &ClassicalState,
    tau: f64,
    decay: bool,
) -> Vec<f64> {
    let n = plant.state_dim();
    let a = if decay { s.amplitude } else { gains.a };
    let dither = a * tau.sin();
    let u = plant.feedback(&s.x, s.theta_hat + dither);
    let y = plant.output(&s.x);
    let mut out = vec![0.0; n + 3 + usize::from(decay)];
    plant.dynamics(&s.x, u, &mut out[..n]);
    for v in &mut out[..n] {
        *v /= gains.eps;
    }
    out[n] = gains.k * s.xi;
    out[n + 1] = -gains.omega_l * s.xi + gains.omega_l * (y - s.eta) * dither;
    out[n + 2] = -gains.omega_h * s.eta + gains.omega_h * y;
    if decay {
        out[n + 3] = -gains.eps * s.amplitude;
    }
    out
}

/// Flat-closure adapter for [`closed_loop_rhs`], for the integrator.
pub fn closed_loop_system(
    plant: ClassicalPlant,
    gains: ClassicalGains,
    decay: bool,
) -> impl Fn(&[f64], f64, &mut [f64]) {
    move |flat, t, out| {
        let s = ClassicalState::unpack(plant.state_dim(), flat, decay, gains.a);
        out.copy_from_slice(&closed_loop_rhs(&plant, &gains, &s, t, decay));
    }
}

/// Flat-closure adapter for [`time_scaled_rhs`].
pub fn time_scaled_system(
    plant: ClassicalPlant,
    gains: ClassicalGains,
    decay: bool,
) -> impl Fn(&[f64], f64, &mut [f64]) {
    move |flat, tau, out| {
        let s = ClassicalState::unpack(plant.state_dim(), flat, decay, gains.a);
        out.copy_from_slice(&time_scaled_rhs(&plant, &gains, &s, tau, decay));
    }
}

/// Reduced system: the plant frozen at its parameter-dependent equilibrium,
/// leaving a periodically forced double integrator and the high-pass state.
/// State layout `[theta, theta_dot, eta]`, time variable `tau`.
pub fn reduced_rhs(
    psi: &dyn Fn(f64) -> f64,
    gains: &ClassicalGains,
    state: &[f64],
    tau: f64,
) -> Vec<f64> {
    let dither = gains.a * tau.sin();
    let y = psi(state[0] + dither);
    vec![
        state[1],
        -gains.omega_l * state[1] + gains.k * gains.omega_l * (y - state[2]) * dither,
        -gains.omega_h * state[2] + gains.omega_h * y,
    ]
}

/// Flat-closure adapter for [`reduced_rhs`].
pub fn reduced_system(
    psi: impl Fn(f64) -> f64 + 'static,
    gains: ClassicalGains,
) -> impl Fn(&[f64], f64, &mut [f64]) {
    move |flat, tau, out| out.copy_from_slice(&reduced_rhs(&psi, &gains, flat, tau))
}

/// Quadrature-backed evaluators for the locally averaged steady-state
/// output, its slope, the demodulated drive, and the filter mean.
#[derive(Clone)]
pub struct AveragedObjective1D {
    psi: ScalarFn,
    psi_prime: Option<ScalarFn>,
    a: f64,
    periodic_nodes: usize,
    kernel_nodes: usize,
}

impl std::fmt::Debug for AveragedObjective1D {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AveragedObjective1D")
            .field("a", &self.a)
            .field("periodic_nodes", &self.periodic_nodes)
            .field("kernel_nodes", &self.kernel_nodes)
            .finish_non_exhaustive()
    }
}

impl AveragedObjective1D {
    pub fn new(
        psi: impl Fn(f64) -> f64 + Send + Sync + 'static,
        a: f64,
    ) -> Result<Self, QuadError> {
        if !(a > 0.0) || !a.is_finite() {
            return Err(QuadError::BadParam(format!(
                "averaging radius must be > 0, got {a}"
            )));
        }
        Ok(AveragedObjective1D {
            psi: Arc::new(psi),
            psi_prime: None,
            a,
            periodic_nodes: 256,
            kernel_nodes: 64,
        })
    }

    /// Supplies an analytic derivative; the slope evaluator then uses the
    /// kernel quadrature of the derivative instead of central differences.
    pub fn with_derivative(mut self, dpsi: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.psi_prime = Some(Arc::new(dpsi));
        self
    }

    pub fn with_nodes(mut self, periodic: usize, kernel: usize) -> Self {
        self.periodic_nodes = periodic;
        self.kernel_nodes = kernel;
        self
    }

    pub fn radius(&self) -> f64 {
        self.a
    }

    pub fn psi(&self, theta: f64) -> f64 {
        (self.psi)(theta)
    }

    /// Semicircle-kernel average of the objective around `theta`.
    pub fn averaged(&self, theta: f64) -> Result<f64, QuadError> {
        quad::semicircle_average(|t| (self.psi)(t), theta, self.a, self.kernel_nodes)
    }

    /// Slope of the averaged objective.
    pub fn averaged_slope(&self, theta: f64) -> Result<f64, QuadError> {
        match &self.psi_prime {
            Some(dpsi) => quad::semicircle_average(|t| dpsi(t), theta, self.a, self.kernel_nodes),
            None => {
                let h = 1e-5;
                let plus = self.averaged(theta + h)?;
                let minus = self.averaged(theta - h)?;
                Ok((plus - minus) / (2.0 * h))
            }
        }
    }

    /// Demodulated drive: the period average of
    /// `psi(theta + a sin tau) a sin tau`. This quadrature is the single
    /// source of truth for the averaged dynamics.
    pub fn force(&self, theta: f64) -> Result<f64, QuadError> {
        quad::periodic_average(
            |tau| (self.psi)(theta + self.a * tau.sin()) * self.a * tau.sin(),
            2.0 * std::f64::consts::PI,
            self.periodic_nodes,
        )
    }

    /// Period average of `psi(theta + a sin tau)`; the value the high-pass
    /// state settles to.
    pub fn filter_mean(&self, theta: f64) -> Result<f64, QuadError> {
        quad::periodic_average(
            |tau| (self.psi)(theta + self.a * tau.sin()),
            2.0 * std::f64::consts::PI,
            self.periodic_nodes,
        )
    }
}

/// Averaged system: damped double integrator driven by the demodulated
/// drive, cascaded with the averaged filter. State `[theta, theta_dot, eta]`.
pub fn averaged_rhs(
    obj: &AveragedObjective1D,
    gains: &ClassicalGains,
    state: &[f64],
) -> Result<Vec<f64>, QuadError> {
    Ok(vec![
        state[1],
        -gains.omega_l * state[1] + gains.k * gains.omega_l * obj.force(state[0])?,
        -gains.omega_h * state[2] + gains.omega_h * obj.filter_mean(state[0])?,
    ])
}

/// Flat-closure adapter for [`averaged_rhs`]; quadrature failures surface as
/// non-finite derivatives, which the integrator reports.
pub fn averaged_system(
    obj: AveragedObjective1D,
    gains: ClassicalGains,
) -> impl Fn(&[f64], f64, &mut [f64]) {
    move |flat, _tau, out| match averaged_rhs(&obj, &gains, flat) {
        Ok(v) => out.copy_from_slice(&v),
        Err(_) => out.fill(f64::NAN),
    }
}

/// Outcome of fitting the constant in the drive/slope identity
/// `force = C a^2 averaged_slope` over a parameter grid.
#[derive(Debug, Clone, Copy)]
pub struct GradientIdentityReport {
    /// Least-squares constant; 1/2 for the exact identity.
    pub c_fit: f64,
    /// Worst absolute residual of the fitted identity over the grid.
    pub max_residual: f64,
    /// True when the slope vanished identically and the fit was skipped
    /// (the authoritative constant 1/2 is reported instead).
    pub degenerate: bool,
}

/// Fits `C` in `force(theta) = C a^2 averaged_slope(theta)` by least squares
/// over the grid and reports the worst residual.
pub fn gradient_identity_residual(
    obj: &AveragedObjective1D,
    grid: &[f64],
) -> Result<GradientIdentityReport, QuadError> {
    if grid.is_empty() {
        return Err(QuadError::BadParam("empty parameter grid".into()));
    }
    let a2 = obj.radius() * obj.radius();
    let mut drives = Vec::with_capacity(grid.len());
    let mut slopes = Vec::with_capacity(grid.len());
    for &theta in grid {
        drives.push(obj.force(theta)?);
        slopes.push(a2 * obj.averaged_slope(theta)?);
    }
    let denom: f64 = slopes.iter().map(|s| s * s).sum();
    if denom < 1e-28 {
        let max_residual = drives
            .iter()
            .zip(&slopes)
            .map(|(g, s)| (g - 0.5 * s).abs())
            .fold(0.0, f64::max);
        return Ok(GradientIdentityReport {
            c_fit: 0.5,
            max_residual,
            degenerate: true,
        });
    }
    let c_fit: f64 = drives.iter().zip(&slopes).map(|(g, s)| g * s).sum::<f64>() / denom;
    let max_residual = drives
        .iter()
        .zip(&slopes)
        .map(|(g, s)| (g - c_fit * s).abs())
        .fold(0.0, f64::max);
    Ok(GradientIdentityReport {
        c_fit,
        max_residual,
        degenerate: false,
    })
}

/// The two-state demonstration plant: an unstable second channel stabilized
/// by linear feedback, with a quartic output in `x1 + 3 x2`.
pub fn demo_plant() -> ClassicalPlant {
    ClassicalPlant::new(
        2,
        |x, u, out| {
            out[0] = -x[0] + x[1];
            out[1] = x[1] + u;
        },
        |x| {
            let s = x[0] + 3.0 * x[1];
            -s.powi(4) + 8.0 / 15.0 * s.powi(3) + 6.0 / 5.0 * s.powi(2) + 10.0
        },
        |x, theta| -x[0] - 4.0 * x[1] + theta,
        |theta| vec![theta / 4.0, theta / 4.0],
    )
}

/// Steady-state output of the demonstration plant in closed form.
pub fn demo_psi(theta: f64) -> f64 {
    -theta.powi(4) + 8.0 / 15.0 * theta.powi(3) + 6.0 / 5.0 * theta.powi(2) + 10.0
}

/// Derivative of [`demo_psi`].
pub fn demo_psi_prime(theta: f64) -> f64 {
    -4.0 * theta.powi(3) + 8.0 / 5.0 * theta.powi(2) + 12.0 / 5.0 * theta
}

/// Closed-form semicircle average of [`demo_psi`] with radius `a`.
///
/// Derived from the kernel moments (second moment `a^2/4`, fourth moment
/// `a^4/8`); the quartic term of the radius enters as `-a^4/8`.
pub fn demo_psi_bar_closed_form(a: f64, theta: f64) -> f64 {
    -theta.powi(4)
        + 8.0 / 15.0 * theta.powi(3)
        + (6.0 / 5.0 - 1.5 * a * a) * theta.powi(2)
        + 0.4 * a * a * theta
        + 10.0
        + 0.3 * a * a
        - a.powi(4) / 8.0
}

/// Grid maximizer with golden-section refinement inside the bracketing cell.
pub fn argmax_scalar(f: impl Fn(f64) -> f64, lo: f64, hi: f64, samples: usize) -> f64 {
    assert!(hi > lo && samples >= 3);
    let n = samples;
    let mut best_i = 0usize;
    let mut best = f64::NEG_INFINITY;
    for i in 0..n {
        let t = lo + (hi - lo) * i as f64 / (n - 1) as f64;
        let v = f(t);
        if v > best {
            best = v;
            best_i = i;
        }
    }
    let cell = (hi - lo) / (n - 1) as f64;
    let mut a = lo + cell * best_i.saturating_sub(1) as f64;
    let mut b = (lo + cell * (best_i + 1) as f64).min(hi);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    for _ in 0..200 {
        if b - a < 1e-12 {
            break;
        }
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - phi * (b - a);
        d = a + phi * (b - a);
    }
    0.5 * (a + b)
}

/// One parameter value violating the decrease condition of the averaged
/// objective away from the candidate maximizer.
#[derive(Debug, Clone, Copy)]
pub struct SlopeSignViolation {
    pub theta: f64,
    pub slope: f64,
    /// `slope * (theta - theta_star)`; non-negative at a violation.
    pub product: f64,
}

/// Report of the sign scan behind the global-maximizer condition: the slope
/// of the averaged objective must point toward the candidate everywhere.
#[derive(Debug, Clone)]
pub struct Assumption3Report {
    pub holds: bool,
    pub theta_star: f64,
    pub violations: Vec<SlopeSignViolation>,
}

/// Scans `averaged_slope(theta) * (theta - theta_star) < 0` over the grid
/// (grid points at the candidate itself are skipped).
pub fn check_assumption3(
    obj: &AveragedObjective1D,
    theta_star: f64,
    grid: &[f64],
) -> Result<Assumption3Report, QuadError> {
    let mut violations = Vec::new();
    for &theta in grid {
        if (theta - theta_star).abs() < 1e-9 {
            continue;
        }
        let slope = obj.averaged_slope(theta)?;
        let product = slope * (theta - theta_star);
        if product >= 0.0 {
            violations.push(SlopeSignViolation {
                theta,
                slope,
                product,
            });
        }
    }
    Ok(Assumption3Report {
        holds: violations.is_empty(),
        theta_star,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn demo_objective(a: f64) -> AveragedObjective1D {
        AveragedObjective1D::new(demo_psi, a)
            .unwrap()
            .with_derivative(demo_psi_prime)
    }

    /// Critical point of the closed-form averaged quartic, polished by
    /// Newton on its derivative (grid argmax alone is only sqrt(eps)-accurate).
    fn demo_averaged_maximizer(a: f64) -> f64 {
        let slope = |t: f64| {
            -4.0 * t.powi(3) + 1.6 * t * t + 2.0 * (6.0 / 5.0 - 1.5 * a * a) * t + 0.4 * a * a
        };
        let curvature = |t: f64| -12.0 * t * t + 3.2 * t + 2.0 * (6.0 / 5.0 - 1.5 * a * a);
        let mut t = argmax_scalar(|x| demo_psi_bar_closed_form(a, x), -2.0, 2.0, 4001);
        for _ in 0..50 {
            let step = slope(t) / curvature(t);
            t -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        t
    }

    #[test]
    fn gains_reject_non_positive_parameters() {
        assert!(ClassicalGains::new(0.0, 0.7, 1.0, 1.0, 1.0).is_err());
        assert!(ClassicalGains::new(0.01, -0.7, 1.0, 1.0, 1.0).is_err());
        assert!(ClassicalGains::new(0.01, 0.7, f64::NAN, 1.0, 1.0).is_err());
        let g = ClassicalGains::new(0.01, 0.7, 2.0, 3.0, 4.0).unwrap();
        assert_abs_diff_eq!(g.physical_omega_h(), 0.02, epsilon = 1e-15);
        assert_abs_diff_eq!(g.physical_omega_l(), 0.03, epsilon = 1e-15);
        assert_abs_diff_eq!(g.physical_k(), 0.04, epsilon = 1e-15);
    }

    #[test]
    fn demo_plant_steady_state_output_values() {
        let plant = demo_plant();
        assert_abs_diff_eq!(
            plant.steady_state_output(1.0),
            161.0 / 15.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(plant.steady_state_output(0.0), 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(plant.steady_state_output(-0.6), 10.1872, epsilon = 1e-12);
        // Closed form and plant composition agree.
        for theta in [-2.0, -0.3, 0.9, 2.4] {
            assert_abs_diff_eq!(
                plant.steady_state_output(theta),
                demo_psi(theta),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn demo_psi_critical_points() {
        assert_abs_diff_eq!(demo_psi_prime(1.0), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(demo_psi_prime(-0.6), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn demo_plant_equilibrium_consistency() {
        let plant = demo_plant();
        assert!(plant.max_equilibrium_defect(&[-2.0, 0.0, 3.0]) < 1e-9);
    }

    #[test]
    fn zero_amplitude_equilibrium_is_stationary() {
        let plant = demo_plant();
        let gains = ClassicalGains::unit(0.01, 0.7).unwrap();
        let theta = 0.4;
        let s = ClassicalState {
            x: plant.equilibrium(theta),
            theta_hat: theta,
            xi: 0.0,
            eta: demo_psi(theta),
            amplitude: 0.0,
        };
        let d = closed_loop_rhs(&plant, &gains, &s, 12.3, true);
        for (i, v) in d.iter().enumerate() {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-12);
            let _ = i;
        }
    }

    #[test]
    fn time_scaled_filters_decay_at_their_rates() {
        // Zero dither amplitude and the plant pinned at its equilibrium: the
        // filter states relax linearly at omega_l and omega_h.
        let plant = demo_plant();
        let gains = ClassicalGains::new(0.01, 0.7, 2.5, 1.5, 1.0).unwrap();
        let theta = -0.2;
        let s = ClassicalState {
            x: plant.equilibrium(theta),
            theta_hat: theta,
            xi: 0.3,
            eta: demo_psi(theta) + 0.9,
            amplitude: 0.0,
        };
        let d = time_scaled_rhs(&plant, &gains, &s, 0.77, true);
        assert_abs_diff_eq!(d[3], -gains.omega_l * s.xi, epsilon = 1e-12);
        assert_abs_diff_eq!(
            d[4],
            -gains.omega_h * (s.eta - demo_psi(theta)),
            epsilon = 1e-12
        );
    }

    #[test]
    fn time_scaled_estimate_components_average_out_at_the_candidate() {
        // At the candidate equilibrium (plant on its manifold, matched
        // filter mean), the estimate and demodulation components of the
        // dither-time vector field have zero period average.
        let a = 0.7;
        let obj = demo_objective(a);
        let gains = ClassicalGains::unit(0.01, a).unwrap();
        let theta_star = demo_averaged_maximizer(a);
        let s = ClassicalState {
            x: demo_plant().equilibrium(theta_star),
            theta_hat: theta_star,
            xi: 0.0,
            eta: obj.filter_mean(theta_star).unwrap(),
            amplitude: a,
        };
        let plant = demo_plant();
        for component in [2usize, 3] {
            let avg = quad::periodic_average(
                |tau| time_scaled_rhs(&plant, &gains, &s, tau, false)[component],
                2.0 * std::f64::consts::PI,
                256,
            )
            .unwrap();
            assert_abs_diff_eq!(avg, 0.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn reduced_rhs_averages_to_zero_at_the_candidate_equilibrium() {
        let a = 0.7;
        let obj = demo_objective(a);
        let gains = ClassicalGains::unit(0.01, a).unwrap();
        let theta_star = demo_averaged_maximizer(a);
        let z_star = obj.filter_mean(theta_star).unwrap();
        let period = 2.0 * std::f64::consts::PI;
        for component in 0..3 {
            let avg = quad::periodic_average(
                |tau| reduced_rhs(&demo_psi, &gains, &[theta_star, 0.0, z_star], tau)[component],
                period,
                256,
            )
            .unwrap();
            assert_abs_diff_eq!(avg, 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn constant_objective_gives_no_drive() {
        let gains = ClassicalGains::unit(0.01, 0.5).unwrap();
        let psi = |_t: f64| 3.0;
        let d = reduced_rhs(&psi, &gains, &[1.0, 0.0, 3.0], 0.9);
        assert_eq!(d, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn averaged_drive_of_identity_objective_is_half_a_squared() {
        let obj = AveragedObjective1D::new(|t| t, 0.3).unwrap();
        for theta in [-1.0, 0.0, 2.5] {
            assert_abs_diff_eq!(obj.force(theta).unwrap(), 0.045, epsilon = 1e-13);
        }
    }

    #[test]
    fn averaged_rhs_vanishes_at_critical_points() {
        // Even objective around zero: the drive at the symmetry point is a
        // mean of odd powers of sin and cancels to rounding.
        let obj = AveragedObjective1D::new(|t| -t * t, 0.6).unwrap();
        let gains = ClassicalGains::unit(0.01, 0.6).unwrap();
        let z = obj.filter_mean(0.0).unwrap();
        let d = averaged_rhs(&obj, &gains, &[0.0, 0.0, z]).unwrap();
        assert_eq!(d[0], 0.0);
        assert!(d[1].abs() < 1e-13, "drive at the maximizer: {}", d[1]);
        assert_eq!(d[2], 0.0);
    }

    #[test]
    fn averaged_equilibrium_of_demo_tracks_the_smoothed_maximizer() {
        let a = 0.7;
        let obj = demo_objective(a);
        let theta_star = demo_averaged_maximizer(a);
        assert!((theta_star - 0.8).abs() < 0.1, "maximizer at {theta_star}");
        // The drive vanishes there (it is a^2/2 times the averaged slope).
        assert_abs_diff_eq!(obj.force(theta_star).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn gradient_identity_for_linear_objective() {
        let obj = AveragedObjective1D::new(|t| t, 0.3)
            .unwrap()
            .with_derivative(|_| 1.0);
        let grid: Vec<f64> = (0..40).map(|i| -2.0 + 0.1 * i as f64).collect();
        let report = gradient_identity_residual(&obj, &grid).unwrap();
        assert!(!report.degenerate);
        assert_abs_diff_eq!(report.c_fit, 0.5, epsilon = 1e-13);
        assert!(report.max_residual < 1e-13);
    }

    #[test]
    fn gradient_identity_for_demo_quartic() {
        let obj = demo_objective(0.7);
        let grid: Vec<f64> = (0..=400).map(|i| -2.0 + 0.01 * i as f64).collect();
        let report = gradient_identity_residual(&obj, &grid).unwrap();
        assert_abs_diff_eq!(report.c_fit, 0.5, epsilon = 1e-10);
        assert!(
            report.max_residual < 1e-10,
            "residual {}",
            report.max_residual
        );
    }

    #[test]
    fn gradient_identity_constant_is_confirmed_by_brute_force() {
        // Independent check of the 1/2: a 10^6-node trapezoid on the
        // demodulated integral against the differentiated moment expansion.
        let (a, theta) = (0.7, -0.9);
        let m = 1_000_000usize;
        let h = 2.0 * std::f64::consts::PI / m as f64;
        let mut acc = 0.0;
        for j in 0..m {
            let tau = j as f64 * h;
            acc += demo_psi(theta + a * tau.sin()) * a * tau.sin();
        }
        let brute_drive = acc / m as f64;
        // d/dtheta of the closed-form averaged quartic.
        let slope = -4.0 * theta.powi(3)
            + 1.6 * theta * theta
            + 2.0 * (6.0 / 5.0 - 1.5 * a * a) * theta
            + 0.4 * a * a;
        assert_abs_diff_eq!(brute_drive, 0.5 * a * a * slope, epsilon = 1e-10);
    }

    #[test]
    fn gradient_identity_degenerate_for_constant_objective() {
        let obj = AveragedObjective1D::new(|_| 4.0, 0.5)
            .unwrap()
            .with_derivative(|_| 0.0);
        let grid: Vec<f64> = (0..10).map(|i| i as f64 * 0.3).collect();
        let report = gradient_identity_residual(&obj, &grid).unwrap();
        assert!(report.degenerate);
        assert_abs_diff_eq!(report.c_fit, 0.5, epsilon = 0.0);
        assert!(report.max_residual < 1e-14);
    }

    #[test]
    fn closed_form_average_matches_kernel_quadrature() {
        for &a in &[0.4, 0.7, 1.0] {
            let mut theta = -2.0;
            while theta <= 2.0 {
                let quad_value = quad::semicircle_average(demo_psi, theta, a, 64).unwrap();
                let closed = demo_psi_bar_closed_form(a, theta);
                assert_abs_diff_eq!(quad_value, closed, epsilon = 1e-11);
                theta += 0.05;
            }
        }
    }

    #[test]
    fn closed_form_average_recovers_psi_at_zero_radius() {
        for theta in [-1.5, 0.0, 0.8] {
            assert_abs_diff_eq!(
                demo_psi_bar_closed_form(0.0, theta),
                demo_psi(theta),
                epsilon = 0.0
            );
        }
    }

    #[test]
    fn assumption3_holds_for_wide_kernel_and_fails_for_narrow() {
        let grid: Vec<f64> = (0..=1200).map(|i| -3.0 + 0.005 * i as f64).collect();

        let wide = demo_objective(0.7);
        let star_wide = demo_averaged_maximizer(0.7);
        let report = check_assumption3(&wide, star_wide, &grid).unwrap();
        assert!(
            report.holds,
            "violations: {:?}",
            &report.violations[..report.violations.len().min(3)]
        );

        let narrow = demo_objective(0.4);
        let star_narrow = demo_averaged_maximizer(0.4);
        let report = check_assumption3(&narrow, star_narrow, &grid).unwrap();
        assert!(!report.holds);
        // The surviving local maximizer sits near -0.5.
        assert!(
            report
                .violations
                .iter()
                .any(|v| (-0.7..=-0.3).contains(&v.theta)),
            "no violation near -0.5"
        );
    }

    #[test]
    fn assumption3_holds_for_concave_quadratic() {
        let obj = AveragedObjective1D::new(|t| -t * t, 0.9)
            .unwrap()
            .with_derivative(|t| -2.0 * t);
        let grid: Vec<f64> = (0..=600)
            .map(|i| -3.0 + 0.01 * i as f64)
            .filter(|t| t.abs() > 1e-6)
            .collect();
        let report = check_assumption3(&obj, 0.0, &grid).unwrap();
        assert!(report.holds);
    }
}
