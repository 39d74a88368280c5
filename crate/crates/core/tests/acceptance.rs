//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line
//! (`cargo test --test acceptance -- --nocapture` shows them all).
//!
//! Criterion 12's scalar-loop half is expected to fail; see its test for the
//! measured obstruction.

use averseek::boundary::DitherBoundary;
use averseek::classical::{self, AveragedObjective1D};
use averseek::ode::{self, IntegratorConfig};
use averseek::quad;
use averseek::scenario::{self, IntegratorSettings, ProbeConfig, ProbeFamilyId, ScenarioConfig};
use averseek::source::{self, AveragedObjective2D, GridSpec2D, SourceParams, SourceState};
use averseek::vec2;

fn report(criterion: &str, passed: bool, detail: &str) {
    println!(
        "ACCEPTANCE {criterion}: {} ({detail})",
        if passed { "PASS" } else { "FAIL" }
    );
}

/// Newton-polished maximizer of the closed-form averaged quartic.
fn averaged_maximizer(a: f64) -> f64 {
    let slope =
        |t: f64| -4.0 * t.powi(3) + 1.6 * t * t + 2.0 * (6.0 / 5.0 - 1.5 * a * a) * t + 0.4 * a * a;
    let curvature = |t: f64| -12.0 * t * t + 3.2 * t + 2.0 * (6.0 / 5.0 - 1.5 * a * a);
    let mut t = classical::argmax_scalar(
        |x| classical::demo_psi_bar_closed_form(a, x),
        -2.0,
        2.0,
        4001,
    );
    for _ in 0..60 {
        let step = slope(t) / curvature(t);
        t -= step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    t
}

#[test]
fn criterion_01_gradient_identity() {
    let grid: Vec<f64> = (0..=400).map(|i| -2.0 + 0.01 * i as f64).collect();
    let mut worst: f64 = 0.0;
    for &a in &[0.4, 0.7, 1.0] {
        let obj = AveragedObjective1D::new(classical::demo_psi, a)
            .unwrap()
            .with_derivative(classical::demo_psi_prime);
        let a2 = a * a;
        for &theta in &grid {
            let drive = obj.force(theta).unwrap();
            let slope = obj.averaged_slope(theta).unwrap();
            worst = worst.max((drive - 0.5 * a2 * slope).abs());
        }
    }
    let passed = worst < 1e-10;
    report(
        "1 gradient-identity",
        passed,
        &format!("max residual {worst:.3e} < 1e-10"),
    );
    assert!(passed);
}

#[test]
fn criterion_02_closed_form_average() {
    let mut worst: f64 = 0.0;
    for &a in &[0.4, 0.7, 1.0] {
        for i in 0..=400 {
            let theta = -2.0 + 0.01 * i as f64;
            let q = quad::semicircle_average(classical::demo_psi, theta, a, 64).unwrap();
            worst = worst.max((q - classical::demo_psi_bar_closed_form(a, theta)).abs());
        }
    }
    let passed = worst < 1e-11;
    report(
        "2 closed-form-average",
        passed,
        &format!("max gap {worst:.3e} < 1e-11"),
    );
    assert!(passed);
}

#[test]
fn criterion_03_divergence_identity() {
    let obj = AveragedObjective2D::disk(source::demo_signal, 1.0, 1.0).unwrap();
    let mut grid = Vec::new();
    for i in 0..=40 {
        for j in 0..=40 {
            grid.push([-10.0 + 0.5 * i as f64, -10.0 + 0.5 * j as f64]);
        }
    }
    let worst = source::divergence_identity_residual(&obj, &grid).unwrap();
    let passed = worst < 1e-5;
    report(
        "3 divergence-identity",
        passed,
        &format!("max residual {worst:.3e} < 1e-5"),
    );
    assert!(passed);
}

#[test]
fn criterion_04_disk_force_equality() {
    let a = 0.5;
    let p = SourceParams::new(1.3, 0.7, 2.1, 1.0, 0.1).unwrap();
    let b = DitherBoundary::circle(a).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..1000 {
        let t = 0.0137 * k as f64;
        let y = 4.0 * (0.3 * k as f64).sin();
        let eta = 2.0 * (0.11 * k as f64).cos();
        let f = source::control_force(&p, &b, y, eta, t);
        let phase = t / p.eps;
        let scalar = a * (-p.m / (p.eps * p.eps) + 2.0 * p.c / (a * a) * (y - eta));
        let expect = [scalar * phase.cos(), scalar * phase.sin()];
        let rel = vec2::norm(vec2::sub(f, expect)) / vec2::norm(expect).max(1.0);
        worst = worst.max(rel);
    }
    let passed = worst <= 1e-12;
    report(
        "4 disk-force-equality",
        passed,
        &format!("max relative gap {worst:.3e} <= 1e-12"),
    );
    assert!(passed);
}

#[test]
fn criterion_05_transform_consistency() {
    let a = 1.0;
    let params = SourceParams::unit(0.1).unwrap();
    let boundary = DitherBoundary::circle(a).unwrap();
    let original0 = SourceState {
        q: [-9.0, 7.0],
        q_dot: [0.0, 0.0],
        eta: 0.0,
    };
    let transformed0 = source::to_transformed(&original0, &params, &boundary, 0.0);
    // The documented initial drift of the transformed frame.
    assert!((transformed0.q_dot[0] - a).abs() < 1e-12);
    assert!((transformed0.q_dot[1] + 10.0 * a).abs() < 1e-12);

    let cfg = IntegratorConfig::adaptive(1e-9, 1e-9);
    let grid: Vec<f64> = (0..=4000)
        .map(|i| {
            if i == 4000 {
                40.0
            } else {
                40.0 * i as f64 / 4000.0
            }
        })
        .collect();
    let direct = ode::integrate_at(
        source::closed_loop_system(source::demo_signal, params, boundary.clone()),
        &original0.pack(),
        0.0,
        40.0,
        &cfg,
        &grid,
    )
    .unwrap();
    let transformed = ode::integrate_at(
        source::transformed_system(source::demo_signal, params, boundary.clone()),
        &transformed0.pack(),
        0.0,
        40.0,
        &cfg,
        &grid,
    )
    .unwrap();

    let mut sup: f64 = 0.0;
    for ((t, s_direct), s_tr) in direct
        .times()
        .iter()
        .zip(direct.states())
        .zip(transformed.states())
    {
        let mapped = source::to_transformed(&SourceState::unpack(s_direct), &params, &boundary, *t);
        for (x, y) in mapped.pack().iter().zip(s_tr) {
            sup = sup.max((x - y).abs());
        }
    }
    let passed = sup < 1e-5;
    report(
        "5 transform-consistency",
        passed,
        &format!("sup gap {sup:.3e} < 1e-5 over [0, 40]"),
    );
    assert!(passed);
}

#[test]
fn criterion_06_figure2_reproduction() {
    let (_, summary_a) =
        scenario::run_scenario_in_memory(&ScenarioConfig::builtin("fig2a").unwrap()).unwrap();
    let theta_a = summary_a.metrics["terminal_theta_hat"];
    let (_, summary_b) =
        scenario::run_scenario_in_memory(&ScenarioConfig::builtin("fig2b").unwrap()).unwrap();
    let theta_b = summary_b.metrics["terminal_theta_hat"];
    let passed = (theta_a + 0.5).abs() <= 0.1 && (theta_b - 0.8).abs() <= 0.1;
    report(
        "6 figure-2",
        passed,
        &format!("terminal estimates {theta_a:.4} (target -0.5 +- 0.1), {theta_b:.4} (target 0.8 +- 0.1)"),
    );
    assert!(passed);
}

#[test]
fn criterion_07_figure3_reproduction() {
    let (_, summary) =
        scenario::run_scenario_in_memory(&ScenarioConfig::builtin("fig3").unwrap()).unwrap();
    let theta = summary.metrics["terminal_theta_hat"];
    let passed = (theta - 1.0).abs() <= 0.1;
    report(
        "7 figure-3",
        passed,
        &format!("terminal estimate {theta:.4} (target 1.0 +- 0.1)"),
    );
    assert!(passed);
}

#[test]
fn criterion_08_figure4_reproduction() {
    let (_, center) =
        scenario::run_scenario_in_memory(&ScenarioConfig::builtin("fig4-center").unwrap()).unwrap();
    let stuck = center.metrics["period_avg_q_norm"];
    let (_, right) =
        scenario::run_scenario_in_memory(&ScenarioConfig::builtin("fig4-right").unwrap()).unwrap();
    let orbiting = right.metrics["period_avg_q_norm"];
    let instantaneous = right.metrics["max_q_norm_final_period"];
    let passed = stuck > 1.0 && orbiting < 0.5 && instantaneous < 1.6;
    report(
        "8 figure-4",
        passed,
        &format!(
            "narrow run period-mean |q| {stuck:.3} > 1; wide run period-mean |q| {orbiting:.3} < 0.5, instantaneous {instantaneous:.3} < 1.6"
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_09_assumption_checks() {
    // Scalar loop: the decrease condition holds for a = 0.7 and fails near
    // -0.5 for a = 0.4.
    let grid: Vec<f64> = (0..=1200).map(|i| -3.0 + 0.005 * i as f64).collect();
    let wide = AveragedObjective1D::new(classical::demo_psi, 0.7)
        .unwrap()
        .with_derivative(classical::demo_psi_prime);
    let wide_report = classical::check_assumption3(&wide, averaged_maximizer(0.7), &grid).unwrap();

    let narrow = AveragedObjective1D::new(classical::demo_psi, 0.4)
        .unwrap()
        .with_derivative(classical::demo_psi_prime);
    let narrow_report =
        classical::check_assumption3(&narrow, averaged_maximizer(0.4), &grid).unwrap();
    let narrow_fails_near_half = !narrow_report.holds
        && narrow_report
            .violations
            .iter()
            .any(|v| (-0.7..=-0.3).contains(&v.theta));

    // Planar loop: all three conditions hold for a = 1; the no-other-
    // critical-point condition fails for a = 1/2.
    let scan = GridSpec2D::square(12.0, 0.25);
    let wide2 = AveragedObjective2D::disk(source::demo_signal, 1.0, 1.0).unwrap();
    let wide2_report = source::check_assumption4(&wide2, [0.0, 0.0], &scan, 6.0).unwrap();

    let narrow2 = AveragedObjective2D::disk(source::demo_signal, 0.5, 1.0).unwrap();
    let narrow2_report = source::check_assumption4(&narrow2, [0.0, 0.0], &scan, 6.0).unwrap();

    let passed = wide_report.holds
        && narrow_fails_near_half
        && wide2_report.holds
        && !narrow2_report.gradient_condition_holds;
    report(
        "9 assumption-checks",
        passed,
        &format!(
            "scalar: a=0.7 holds {}, a=0.4 fails near -0.5 {}; planar: a=1 holds {}, a=1/2 gradient condition fails {} ({} critical points)",
            wide_report.holds,
            narrow_fails_near_half,
            wide2_report.holds,
            !narrow2_report.gradient_condition_holds,
            narrow2_report.critical_points.len()
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_10_lyapunov_battery() {
    let rep = scenario::fig4_dissipation_report().unwrap();
    let passed =
        rep.max_energy_mismatch < 1e-6 && rep.max_energy_rate <= 1e-6 && rep.max_b_mismatch < 1e-6;
    report(
        "10 lyapunov-battery",
        passed,
        &format!(
            "energy mismatch {:.3e} < 1e-6, max rate {:.3e} <= 1e-6, certificate mismatch {:.3e} < 1e-6 ({} samples)",
            rep.max_energy_mismatch, rep.max_energy_rate, rep.max_b_mismatch, rep.samples_used
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_11_eps_refinement() {
    let a = 1.0;
    let boundary = DitherBoundary::circle(a).unwrap();
    let obj = AveragedObjective2D::disk(source::demo_signal, a, 1.0).unwrap();

    // Common initial data in the transformed frame (the documented drift
    // velocity), independent of the scale parameter.
    let q0 = [-10.0, 6.9];
    let v0 = [a, -10.0 * a];
    let eta0 = source::demo_signal(q0);
    let x0 = [q0[0], q0[1], v0[0], v0[1], eta0];

    let grid: Vec<f64> = (0..=2000)
        .map(|i| {
            if i == 2000 {
                40.0
            } else {
                40.0 * i as f64 / 2000.0
            }
        })
        .collect();

    let reference = {
        let params = SourceParams::unit(0.1).unwrap();
        let cfg = IntegratorConfig::adaptive(1e-11, 1e-11);
        ode::integrate_at(
            source::averaged_system(obj.clone(), params),
            &x0,
            0.0,
            40.0,
            &cfg,
            &grid,
        )
        .unwrap()
    };

    let mut gaps = Vec::new();
    for &eps in &[0.1, 0.05, 0.025] {
        let params = SourceParams::unit(eps).unwrap();
        let cfg = IntegratorConfig::adaptive(1e-9, 1e-9);
        let traj = ode::integrate_at(
            source::transformed_system(source::demo_signal, params, boundary.clone()),
            &x0,
            0.0,
            40.0,
            &cfg,
            &grid,
        )
        .unwrap();
        let mut sup: f64 = 0.0;
        for (s, r) in traj.states().iter().zip(reference.states()) {
            for (x, y) in s.iter().zip(r) {
                sup = sup.max((x - y).abs());
            }
        }
        gaps.push(sup);
    }
    let passed = gaps[0] > gaps[1] && gaps[1] > gaps[2];
    report(
        "11 eps-refinement",
        passed,
        &format!(
            "sup gaps {:.4}, {:.4}, {:.4} strictly decreasing",
            gaps[0], gaps[1], gaps[2]
        ),
    );
    assert!(passed);
}

/// Expected to fail: initial estimates two units above the maximizer escape
/// in finite time (the drive there is quartic-steep and the transient breaks
/// the averaging time-scale separation; the dither-scale filter block does
/// not change with the scale parameter, so no tested scale rescues it), and
/// the settled velocity ripple alone exceeds the 0.15 offset. The tested
/// loop is verifiable at smaller radii and a ripple-sized offset; see
/// `probe_certifies_the_loop_in_its_basin`.
#[test]
fn criterion_12_sgpuas_probe_classical() {
    let cfg = ProbeConfig {
        schema_version: 1,
        family: ProbeFamilyId::ClassicalDemo,
        a: 0.7,
        r: 2.0,
        delta: 0.15,
        eps_list: vec![1.0 / 25.0, 1.0 / 50.0, 1.0 / 100.0],
        seed: 2024,
        horizon: 150.0,
        integrator: IntegratorSettings {
            rtol: 1e-8,
            atol: 1e-8,
            ..Default::default()
        },
    };
    let report_data = scenario::run_probe(&cfg).unwrap();
    let target_row = report_data
        .rows
        .iter()
        .find(|row| (row.eps - 0.01).abs() < 1e-12)
        .expect("eps = 1/100 row");
    let failures = target_row.runs.iter().filter(|r| !r.passed).count();
    let passed = target_row.passed;
    report(
        "12a sgpuas-probe-classical",
        passed,
        &format!(
            "r = 2, delta = 0.15 at eps = 1/100: {failures} of {} runs failed containment",
            target_row.runs.len()
        ),
    );
    assert!(
        passed,
        "initial radius 2 exceeds the loop's basin on the steep side of the quartic and the \
         velocity ripple exceeds delta = 0.15; see the decisions ledger and the companion test \
         probe_certifies_the_loop_in_its_basin"
    );
}

#[test]
fn criterion_12_sgpuas_probe_source() {
    let cfg = ProbeConfig {
        schema_version: 1,
        family: ProbeFamilyId::SourceDemo,
        a: 0.5,
        r: 10.0,
        delta: 1.0,
        eps_list: vec![0.1, 0.05],
        seed: 2024,
        horizon: 60.0,
        integrator: IntegratorSettings {
            rtol: 1e-8,
            atol: 1e-8,
            ..Default::default()
        },
    };
    let report_data = scenario::run_probe(&cfg).unwrap();
    let every_eps_fails = report_data
        .rows
        .iter()
        .all(|row| row.runs.iter().any(|r| !r.passed));
    report(
        "12b sgpuas-probe-source",
        every_eps_fails,
        &format!(
            "narrow averaging stalls off-origin at every tested eps: {:?}",
            report_data
                .rows
                .iter()
                .map(|row| row.runs.iter().filter(|r| !r.passed).count())
                .collect::<Vec<_>>()
        ),
    );
    assert!(every_eps_fails);
}

/// Companion to 12a: the probe does certify the scalar loop inside its
/// actual basin with an offset sized to the settled dither ripple.
#[test]
fn probe_certifies_the_loop_in_its_basin() {
    let cfg = ProbeConfig {
        schema_version: 1,
        family: ProbeFamilyId::ClassicalDemo,
        a: 0.7,
        r: 1.2,
        delta: 0.25,
        eps_list: vec![1.0 / 50.0, 1.0 / 100.0],
        seed: 2024,
        horizon: 150.0,
        integrator: IntegratorSettings {
            rtol: 1e-8,
            atol: 1e-8,
            ..Default::default()
        },
    };
    let report_data = scenario::run_probe(&cfg).unwrap();
    assert_eq!(
        report_data.eps_passed,
        Some(1.0 / 50.0),
        "rows: {:?}",
        report_data
            .rows
            .iter()
            .map(|row| (row.eps, row.passed))
            .collect::<Vec<_>>()
    );
    assert!(!report_data.monotonicity_warning);
}
