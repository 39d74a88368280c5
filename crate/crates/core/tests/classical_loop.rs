//! Integration behavior of the scalar extremum-seeking loop: time-scale
//! consistency, reduced-system tracking, and refinement of the dither scale.

use averseek::classical::{self, ClassicalGains};
use averseek::ode::{self, IntegratorConfig};

const THETA_STAR_07: f64 = 0.779_129_276_174_031_8;

fn uniform(t1: f64, n: usize) -> Vec<f64> {
    (0..=n)
        .map(|i| if i == n { t1 } else { t1 * i as f64 / n as f64 })
        .collect()
}

#[test]
fn closed_loop_matches_time_scaled_form_under_reparametrization() {
    let plant = classical::demo_plant();
    let gains = ClassicalGains::unit(0.01, 0.7).unwrap();
    let x0 = vec![0.0, 0.0, -1.0, 0.0, 10.0];
    let tau_end = 20.0;
    let grid_tau = uniform(tau_end, 800);
    let grid_t: Vec<f64> = grid_tau.iter().map(|tau| tau / gains.eps).collect();
    let cfg = IntegratorConfig::adaptive(1e-9, 1e-9);

    let t_form = ode::integrate_at(
        classical::closed_loop_system(plant.clone(), gains, false),
        &x0,
        0.0,
        tau_end / gains.eps,
        &cfg,
        &grid_t,
    )
    .unwrap();
    let tau_form = ode::integrate_at(
        classical::time_scaled_system(plant, gains, false),
        &x0,
        0.0,
        tau_end,
        &cfg,
        &grid_tau,
    )
    .unwrap();

    let mut sup: f64 = 0.0;
    for (a, b) in t_form.states().iter().zip(tau_form.states()) {
        for (x, y) in a.iter().zip(b) {
            sup = sup.max((x - y).abs());
        }
    }
    assert!(
        sup < 1e-8,
        "reparametrized trajectories differ by {sup:.3e}"
    );
}

#[test]
fn reduced_loop_drifts_uphill_for_a_linear_objective() {
    // psi(theta) = theta: the demodulated drive pushes the estimate uphill.
    //
    // The formally averaged system drifts at K a^2 / 2. The reduced loop
    // drifts at K a^2 / 4: with a unit high-pass rate the filter state picks
    // up a dither-frequency component (gain 1/sqrt(2), phase -45 degrees)
    // whose product with the demodulating sinusoid has mean -a^2/4,
    // cancelling half of the drive. The formal average drops that
    // correlation; near critical points of the averaged objective the
    // fundamental of the measured output vanishes and the effect with it.
    let a = 0.3;
    let gains = ClassicalGains::unit(1.0, a).unwrap();
    let cfg = IntegratorConfig::adaptive(1e-9, 1e-9);
    let tau_end = 100.0;
    let grid = uniform(tau_end, 1000);

    let reduced = ode::integrate_at(
        classical::reduced_system(|t| t, gains),
        &[0.0, 0.0, 0.0],
        0.0,
        tau_end,
        &cfg,
        &grid,
    )
    .unwrap();
    let obj = classical::AveragedObjective1D::new(|t| t, a)
        .unwrap()
        .with_derivative(|_| 1.0);
    let averaged = ode::integrate_at(
        classical::averaged_system(obj, gains),
        &[0.0, 0.0, 0.0],
        0.0,
        tau_end,
        &cfg,
        &grid,
    )
    .unwrap();

    // Asymptotic velocities over the second half of the horizon.
    let half = reduced.len() / 2;
    let window = tau_end - reduced.times()[half];
    let v_reduced = (reduced.last_state()[0] - reduced.states()[half][0]) / window;
    let v_averaged = (averaged.last_state()[0] - averaged.states()[half][0]) / window;

    assert!(v_reduced > 0.0, "no uphill drift: {v_reduced}");
    assert!(
        (v_averaged - a * a / 2.0).abs() < 1e-4,
        "averaged drift velocity {v_averaged}, expected {}",
        a * a / 2.0
    );
    assert!(
        (v_reduced - a * a / 4.0).abs() < 0.1 * a * a / 4.0,
        "reduced drift velocity {v_reduced}, expected about {}",
        a * a / 4.0
    );
}

#[test]
fn reduced_demo_converges_near_the_smoothed_maximizer() {
    let gains = ClassicalGains::unit(1.0, 0.7).unwrap();
    let cfg = IntegratorConfig::adaptive(1e-9, 1e-9);
    let traj = ode::integrate(
        classical::reduced_system(classical::demo_psi, gains),
        &[-1.0, 0.0, 10.0],
        0.0,
        150.0,
        &cfg,
    )
    .unwrap();
    let theta_end = traj.last_state()[0];
    assert!(
        (theta_end - 0.8).abs() < 0.15,
        "reduced loop ended at {theta_end}, expected near 0.8"
    );
}

#[test]
fn full_loop_approaches_the_reduced_loop_as_the_scale_shrinks() {
    let plant = classical::demo_plant();
    let tau_end = 150.0;
    let grid = uniform(tau_end, 3000);
    let cfg = IntegratorConfig::adaptive(1e-9, 1e-9);

    let gains0 = ClassicalGains::unit(1.0, 0.7).unwrap();
    let reduced = ode::integrate_at(
        classical::reduced_system(classical::demo_psi, gains0),
        &[-1.0, 0.0, 10.0],
        0.0,
        tau_end,
        &cfg,
        &grid,
    )
    .unwrap();

    let mut gaps = Vec::new();
    for &eps in &[0.04, 0.02, 0.01] {
        let gains = ClassicalGains::unit(eps, 0.7).unwrap();
        let full = ode::integrate_at(
            classical::time_scaled_system(plant.clone(), gains, false),
            &[0.0, 0.0, -1.0, 0.0, 10.0],
            0.0,
            tau_end,
            &cfg,
            &grid,
        )
        .unwrap();
        let mut sup: f64 = 0.0;
        for (f, r) in full.states().iter().zip(reduced.states()) {
            sup = sup
                .max((f[2] - r[0]).abs())
                .max((gains.k * f[3] - r[1]).abs())
                .max((f[4] - r[2]).abs());
        }
        gaps.push(sup);
    }
    assert!(
        gaps[0] > gaps[1] && gaps[1] > gaps[2],
        "gap to the reduced loop not decreasing: {gaps:?}"
    );
    assert!(
        gaps[2] < 0.02,
        "gap at the smallest scale too large: {gaps:?}"
    );
}

#[test]
fn practical_convergence_band_across_scales() {
    // The terminal estimate lands within 0.1 of the smoothed maximizer for
    // every tested scale, and the period-averaged estimate within 0.01.
    //
    // The distances are not monotone in the scale: the loop converges to the
    // periodic orbit of the scale-free reduced dynamics, whose period mean
    // sits about 7e-3 from the maximizer, so refining the scale converges
    // toward that orbit rather than toward the maximizer itself.
    let plant = classical::demo_plant();
    let cfg = IntegratorConfig::adaptive(1e-9, 1e-9);
    let x0 = vec![0.0, 0.0, -1.0, 0.0, 10.0];
    for &eps in &[0.04, 0.02, 0.01] {
        let gains = ClassicalGains::unit(eps, 0.7).unwrap();
        let t_end = 150.0 / eps;
        let traj = ode::integrate(
            classical::closed_loop_system(plant.clone(), gains, false),
            &x0,
            0.0,
            t_end,
            &cfg,
        )
        .unwrap();
        let terminal = traj.last_state()[2];
        assert!(
            (terminal - THETA_STAR_07).abs() < 0.1,
            "eps = {eps}: terminal estimate {terminal}"
        );

        let period = 2.0 * std::f64::consts::PI / eps;
        let fine: Vec<f64> = (0..=256)
            .map(|i| t_end - period + period * i as f64 / 256.0)
            .collect();
        let tail = ode::resample(&traj, &fine).unwrap();
        let mean: f64 = tail.states().iter().map(|s| s[2]).sum::<f64>() / tail.len() as f64;
        assert!(
            (mean - THETA_STAR_07).abs() < 0.01,
            "eps = {eps}: period-averaged estimate {mean}"
        );
    }
}

#[test]
fn averaged_loop_settles_at_the_maximizer_without_ripple() {
    let gains = ClassicalGains::unit(1.0, 0.7).unwrap();
    let obj = classical::AveragedObjective1D::new(classical::demo_psi, 0.7)
        .unwrap()
        .with_derivative(classical::demo_psi_prime);
    let z0 = obj.filter_mean(-1.0).unwrap();
    let cfg = IntegratorConfig::adaptive(1e-10, 1e-10);
    let traj = ode::integrate(
        classical::averaged_system(obj, gains),
        &[-1.0, 0.0, z0],
        0.0,
        150.0,
        &cfg,
    )
    .unwrap();
    let end = traj.last_state();
    assert!(
        (end[0] - THETA_STAR_07).abs() < 1e-4,
        "theta settled at {}",
        end[0]
    );
    assert!(end[1].abs() < 1e-4, "residual velocity {}", end[1]);
}
