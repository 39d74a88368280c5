//! Config-driven experiment harness: scenario execution, figure
//! reproduction, parameter sweeps, the identity-check battery, and the
//! practical-stability probe, all emitting deterministic CSV/JSON artifacts.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boundary::DitherBoundary;
use crate::classical::{self, AveragedObjective1D, ClassicalGains, ClassicalState};
use crate::lyap::{self, LyapunovSystem, ProbeFamily, ProbeSpec, SgpuasReport};
use crate::ode::{self, IntegratorConfig, StepMode};
use crate::quad;
use crate::source::{self, AveragedObjective2D, SourceParams, SourceState};
use crate::vec2;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "AVERSEEK_OUT";

/// Schema version accepted by the config parsers.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Stable CLI contract: 2 for config errors, 3 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 3,
        }
    }
}

impl From<crate::ode::OdeError> for HarnessError {
    fn from(e: crate::ode::OdeError) -> Self {
        HarnessError::Numerical(e.to_string())
    }
}

impl From<crate::quad::QuadError> for HarnessError {
    fn from(e: crate::quad::QuadError) -> Self {
        HarnessError::Numerical(e.to_string())
    }
}

impl From<crate::lyap::LyapError> for HarnessError {
    fn from(e: crate::lyap::LyapError) -> Self {
        HarnessError::Numerical(e.to_string())
    }
}

/// Simulation scheme selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Closed loop in physical time, constant dither amplitude.
    Classical,
    /// Closed loop with decaying dither amplitude.
    ClassicalDecay,
    /// Planar source seeking; integrated in transformed coordinates and
    /// reported in original ones.
    Source,
    /// Planar source seeking, reported in the transformed coordinates.
    SourceTransformed,
    /// Averaged scalar loop (dither time scale).
    AveragedClassical,
    /// Averaged planar loop.
    AveragedSource,
    /// Damped gradient system with a selectable potential.
    Lyapunov,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Classical => "classical",
            Scheme::ClassicalDecay => "classical-decay",
            Scheme::Source => "source",
            Scheme::SourceTransformed => "source-transformed",
            Scheme::AveragedClassical => "averaged-classical",
            Scheme::AveragedSource => "averaged-source",
            Scheme::Lyapunov => "lyapunov",
        }
    }
}

/// Scheme parameters; unknown keys are rejected, and each scheme checks the
/// presence of the keys it requires.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Parameters {
    pub eps: Option<f64>,
    pub a: Option<f64>,
    pub omega_h: Option<f64>,
    pub omega_l: Option<f64>,
    pub k: Option<f64>,
    pub m: Option<f64>,
    pub kappa: Option<f64>,
    pub c: Option<f64>,
    /// Potential selector for the damped-gradient scheme:
    /// "quadratic", "classical-demo", or "source-demo".
    pub potential: Option<String>,
    pub x_star: Option<Vec<f64>>,
}

/// Serializable integrator settings with output sampling.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSettings {
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_tol")]
    pub rtol: f64,
    #[serde(default = "default_tol")]
    pub atol: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    /// Number of uniformly spaced output samples (including both endpoints).
    #[serde(default = "default_output_points")]
    pub output_points: usize,
}

fn default_mode() -> String {
    "adaptive".into()
}
fn default_dt() -> f64 {
    1e-3
}
fn default_tol() -> f64 {
    1e-6
}
fn default_max_steps() -> usize {
    100_000_000
}
fn default_output_points() -> usize {
    2001
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        IntegratorSettings {
            mode: default_mode(),
            dt: default_dt(),
            rtol: default_tol(),
            atol: default_tol(),
            max_steps: default_max_steps(),
            output_points: default_output_points(),
        }
    }
}

impl IntegratorSettings {
    pub fn to_config(&self) -> Result<IntegratorConfig, HarnessError> {
        let mode = match self.mode.as_str() {
            "fixed" => StepMode::Fixed,
            "adaptive" => StepMode::Adaptive,
            other => {
                return Err(HarnessError::Config(format!(
                    "unknown integrator mode '{other}' (expected 'fixed' or 'adaptive')"
                )))
            }
        };
        let cfg = IntegratorConfig {
            mode,
            dt: self.dt,
            rtol: self.rtol,
            atol: self.atol,
            max_steps: self.max_steps,
        };
        cfg.validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.output_points < 2 {
            return Err(HarnessError::Config("output_points must be >= 2".into()));
        }
        Ok(cfg)
    }
}

/// Requested artifact kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputKind {
    TrajectoryCsv,
    SummaryJson,
    IdentityReport,
}

/// Declarative description of one experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub scheme: Scheme,
    #[serde(default)]
    pub parameters: Parameters,
    /// Scheme-specific state vector; scheme defaults apply when omitted.
    #[serde(default)]
    pub initial_state: Option<Vec<f64>>,
    /// Horizon in the scheme's own time variable (dither phase for the
    /// scalar loop, physical time elsewhere).
    pub horizon: f64,
    #[serde(default)]
    pub integrator: IntegratorSettings,
    #[serde(default = "default_outputs")]
    pub outputs: Vec<OutputKind>,
    #[serde(default)]
    pub seed: u64,
    /// Directory name for artifacts; defaults to the scheme name.
    #[serde(default)]
    pub name: Option<String>,
}

fn default_outputs() -> Vec<OutputKind> {
    vec![OutputKind::TrajectoryCsv, OutputKind::SummaryJson]
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(HarnessError::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(HarnessError::Config(format!(
                "horizon must be > 0, got {}",
                self.horizon
            )));
        }
        self.integrator.to_config()?;
        self.require_keys()?;
        Ok(())
    }

    fn require_keys(&self) -> Result<(), HarnessError> {
        let p = &self.parameters;
        let missing = |name: &str| {
            HarnessError::Config(format!(
                "scheme '{}' requires parameter '{name}'",
                self.scheme.name()
            ))
        };
        match self.scheme {
            Scheme::Classical | Scheme::ClassicalDecay => {
                p.eps.ok_or_else(|| missing("eps"))?;
                p.a.ok_or_else(|| missing("a"))?;
            }
            Scheme::Source | Scheme::SourceTransformed => {
                p.eps.ok_or_else(|| missing("eps"))?;
                p.a.ok_or_else(|| missing("a"))?;
            }
            Scheme::AveragedClassical | Scheme::AveragedSource => {
                p.a.ok_or_else(|| missing("a"))?;
            }
            Scheme::Lyapunov => {
                p.k.ok_or_else(|| missing("k"))?;
            }
        }
        Ok(())
    }

    /// Built-in scenarios reproducing the demonstration figures.
    pub fn builtin(id: &str) -> Result<Self, HarnessError> {
        let figure = FigureId::parse(id)?;
        Ok(figure.scenario())
    }

    pub fn artifact_name(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| self.scheme.name().to_string())
    }
}

/// Known figure bundles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigureId {
    Fig2a,
    Fig2b,
    Fig3,
    Fig4Center,
    Fig4Right,
}

impl FigureId {
    pub fn parse(id: &str) -> Result<Self, HarnessError> {
        match id {
            "fig2a" => Ok(FigureId::Fig2a),
            "fig2b" => Ok(FigureId::Fig2b),
            "fig3" => Ok(FigureId::Fig3),
            "fig4-center" => Ok(FigureId::Fig4Center),
            "fig4-right" => Ok(FigureId::Fig4Right),
            other => Err(HarnessError::Config(format!(
                "unknown figure id '{other}' (expected fig2a, fig2b, fig3, fig4-center, fig4-right)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FigureId::Fig2a => "fig2a",
            FigureId::Fig2b => "fig2b",
            FigureId::Fig3 => "fig3",
            FigureId::Fig4Center => "fig4-center",
            FigureId::Fig4Right => "fig4-right",
        }
    }

    /// The hard-coded demonstration setup behind each figure.
    pub fn scenario(&self) -> ScenarioConfig {
        let classical = |a: f64, decay: bool, name: &str| ScenarioConfig {
            schema_version: SCHEMA_VERSION,
            scheme: if decay {
                Scheme::ClassicalDecay
            } else {
                Scheme::Classical
            },
            parameters: Parameters {
                eps: Some(0.01),
                a: Some(a),
                omega_h: Some(1.0),
                omega_l: Some(1.0),
                k: Some(1.0),
                ..Parameters::default()
            },
            initial_state: None,
            horizon: 150.0,
            integrator: IntegratorSettings::default(),
            outputs: default_outputs(),
            seed: 0,
            name: Some(name.to_string()),
        };
        let source = |a: f64, name: &str| ScenarioConfig {
            schema_version: SCHEMA_VERSION,
            scheme: Scheme::Source,
            parameters: Parameters {
                eps: Some(0.1),
                a: Some(a),
                m: Some(1.0),
                kappa: Some(1.0),
                c: Some(1.0),
                omega_h: Some(1.0),
                ..Parameters::default()
            },
            initial_state: None,
            horizon: 60.0,
            integrator: IntegratorSettings::default(),
            outputs: default_outputs(),
            seed: 0,
            name: Some(name.to_string()),
        };
        match self {
            FigureId::Fig2a => classical(0.4, false, "fig2a"),
            FigureId::Fig2b => classical(0.7, false, "fig2b"),
            FigureId::Fig3 => classical(1.0, true, "fig3"),
            FigureId::Fig4Center => source(0.5, "fig4-center"),
            FigureId::Fig4Right => source(1.0, "fig4-right"),
        }
    }
}

/// Output of one scenario run: the emitted artifact paths and the summary.
#[derive(Debug)]
pub struct RunArtifacts {
    pub paths: Vec<PathBuf>,
    pub summary: RunSummary,
    pub table: DataTable,
}

/// Terminal state and convergence metrics of a run.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub scheme: String,
    pub horizon: f64,
    pub terminal_time: f64,
    pub terminal_state: BTreeMap<String, f64>,
    pub metrics: BTreeMap<String, f64>,
    pub wall_time_ms: f64,
}

/// Column-labelled numeric table; the CSV payload.
#[derive(Debug, Clone)]
pub struct DataTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl DataTable {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

/// Writes a file atomically: the payload lands in a sibling temp file which
/// is then renamed over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// CSV with 17 significant digits, '.' decimal separator, LF line endings.
pub fn table_to_csv(table: &DataTable) -> String {
    let mut out = String::new();
    out.push_str(&table.columns.join(","));
    out.push('\n');
    for row in &table.rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn uniform_grid(t0: f64, t1: f64, points: usize) -> Vec<f64> {
    (0..points)
        .map(|i| {
            if i == points - 1 {
                t1
            } else {
                t0 + (t1 - t0) * i as f64 / (points - 1) as f64
            }
        })
        .collect()
}

fn check_table_finite(table: &DataTable) -> Result<(), HarnessError> {
    for row in &table.rows {
        if !row.iter().all(|v| v.is_finite()) {
            return Err(HarnessError::Numerical(
                "non-finite cell in output table".into(),
            ));
        }
    }
    Ok(())
}

struct PreparedRun {
    table: DataTable,
    terminal_state: BTreeMap<String, f64>,
    metrics: BTreeMap<String, f64>,
    terminal_time: f64,
}

/// Runs one scenario and writes the requested artifacts under
/// `out_dir/<name>/`.
pub fn run_scenario(cfg: &ScenarioConfig, out_dir: &Path) -> Result<RunArtifacts, HarnessError> {
    cfg.validate()?;
    let started = Instant::now();
    let prepared = execute(cfg)?;
    check_table_finite(&prepared.table)?;

    let summary = RunSummary {
        schema_version: SCHEMA_VERSION,
        scheme: cfg.scheme.name().to_string(),
        horizon: cfg.horizon,
        terminal_time: prepared.terminal_time,
        terminal_state: prepared.terminal_state,
        metrics: prepared.metrics,
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
    };

    let dir = out_dir.join(cfg.artifact_name());
    let mut paths = Vec::new();
    for output in &cfg.outputs {
        match output {
            OutputKind::TrajectoryCsv => {
                let path = dir.join("trajectory.csv");
                write_atomic(&path, table_to_csv(&prepared.table).as_bytes())?;
                paths.push(path);
            }
            OutputKind::SummaryJson => {
                let path = dir.join("summary.json");
                let body = serde_json::to_string_pretty(&summary)
                    .map_err(|e| HarnessError::Numerical(e.to_string()))?;
                write_atomic(&path, body.as_bytes())?;
                paths.push(path);
            }
            OutputKind::IdentityReport => {
                let path = dir.join("identity_report.json");
                let report = identity_report_for(cfg)?;
                let body = serde_json::to_string_pretty(&report)
                    .map_err(|e| HarnessError::Numerical(e.to_string()))?;
                write_atomic(&path, body.as_bytes())?;
                paths.push(path);
            }
        }
    }

    Ok(RunArtifacts {
        paths,
        summary,
        table: prepared.table,
    })
}

/// Integrates the configured system and builds the output table without
/// touching the filesystem.
pub fn run_scenario_in_memory(
    cfg: &ScenarioConfig,
) -> Result<(DataTable, RunSummary), HarnessError> {
    cfg.validate()?;
    let started = Instant::now();
    let prepared = execute(cfg)?;
    check_table_finite(&prepared.table)?;
    let summary = RunSummary {
        schema_version: SCHEMA_VERSION,
        scheme: cfg.scheme.name().to_string(),
        horizon: cfg.horizon,
        terminal_time: prepared.terminal_time,
        terminal_state: prepared.terminal_state,
        metrics: prepared.metrics,
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
    };
    Ok((prepared.table, summary))
}

fn execute(cfg: &ScenarioConfig) -> Result<PreparedRun, HarnessError> {
    match cfg.scheme {
        Scheme::Classical => run_classical(cfg, false),
        Scheme::ClassicalDecay => run_classical(cfg, true),
        Scheme::Source => run_source(cfg, false),
        Scheme::SourceTransformed => run_source(cfg, true),
        Scheme::AveragedClassical => run_averaged_classical(cfg),
        Scheme::AveragedSource => run_averaged_source(cfg),
        Scheme::Lyapunov => run_lyapunov(cfg),
    }
}

fn classical_gains(p: &Parameters) -> Result<ClassicalGains, HarnessError> {
    ClassicalGains::new(
        p.eps.unwrap_or(0.01),
        p.a.expect("validated"),
        p.omega_h.unwrap_or(1.0),
        p.omega_l.unwrap_or(1.0),
        p.k.unwrap_or(1.0),
    )
    .map_err(|e| HarnessError::Config(e.to_string()))
}

fn run_classical(cfg: &ScenarioConfig, decay: bool) -> Result<PreparedRun, HarnessError> {
    let plant = classical::demo_plant();
    let gains = classical_gains(&cfg.parameters)?;
    let n = plant.state_dim();

    // Defaults: plant at the origin, estimate at -1, matched high-pass state.
    let base = match &cfg.initial_state {
        Some(v) => {
            if v.len() != n + 3 {
                return Err(HarnessError::Config(format!(
                    "classical initial_state must have length {} ([x.., theta_hat, xi, eta]), got {}",
                    n + 3,
                    v.len()
                )));
            }
            v.clone()
        }
        None => {
            let x0 = vec![0.0; n];
            let eta0 = plant.output(&x0);
            let mut v = x0;
            v.extend([-1.0, 0.0, eta0]);
            v
        }
    };
    let mut x0 = base;
    if decay {
        x0.push(gains.a);
    }

    let eps = gains.eps;
    let t1 = cfg.horizon / eps; // horizon is a dither-phase span
    let grid = uniform_grid(0.0, t1, cfg.integrator.output_points);
    let rhs = classical::closed_loop_system(plant.clone(), gains, decay);
    let traj = ode::integrate_at(rhs, &x0, 0.0, t1, &cfg.integrator.to_config()?, &grid)?;

    let mut columns = vec!["t".to_string(), "tau".to_string()];
    for i in 0..n {
        columns.push(format!("x{}", i + 1));
    }
    columns.extend(["theta_hat", "xi", "eta"].map(String::from));
    if decay {
        columns.push("amplitude".into());
    }
    columns.push("y".into());
    columns.push("psi_bar".into());

    let mut rows = Vec::with_capacity(traj.len());
    for (t, s) in traj.times().iter().zip(traj.states()) {
        let st = ClassicalState::unpack(n, s, decay, gains.a);
        let mut row = vec![*t, eps * *t];
        row.extend_from_slice(s);
        row.push(plant.output(&st.x));
        row.push(
            quad::semicircle_average(
                classical::demo_psi,
                st.theta_hat,
                st.amplitude.max(1e-9),
                64,
            )
            .map_err(|e| HarnessError::Numerical(e.to_string()))?,
        );
        rows.push(row);
    }
    let table = DataTable { columns, rows };

    let terminal = traj.last_state().to_vec();
    let st = ClassicalState::unpack(n, &terminal, decay, gains.a);
    let mut terminal_state = BTreeMap::new();
    for (name, value) in table
        .columns
        .iter()
        .skip(2)
        .zip(table.rows.last().unwrap().iter().skip(2))
    {
        terminal_state.insert(name.clone(), *value);
    }
    let mut metrics = BTreeMap::new();
    metrics.insert("terminal_theta_hat".into(), st.theta_hat);
    metrics.insert("terminal_amplitude".into(), st.amplitude);
    let maximizer = classical::argmax_scalar(
        |t| classical::demo_psi_bar_closed_form(st.amplitude, t),
        -2.0,
        2.0,
        4001,
    );
    metrics.insert("averaged_maximizer".into(), maximizer);
    metrics.insert(
        "distance_to_averaged_maximizer".into(),
        (st.theta_hat - maximizer).abs(),
    );

    Ok(PreparedRun {
        table,
        terminal_state,
        metrics,
        terminal_time: t1,
    })
}

fn source_params(p: &Parameters) -> Result<SourceParams, HarnessError> {
    SourceParams::new(
        p.m.unwrap_or(1.0),
        p.kappa.unwrap_or(1.0),
        p.c.unwrap_or(1.0),
        p.omega_h.unwrap_or(1.0),
        p.eps.unwrap_or(0.1),
    )
    .map_err(|e| HarnessError::Config(e.to_string()))
}

fn run_source(cfg: &ScenarioConfig, report_transformed: bool) -> Result<PreparedRun, HarnessError> {
    let params = source_params(&cfg.parameters)?;
    let a = cfg.parameters.a.expect("validated");
    let boundary = DitherBoundary::circle(a).map_err(|e| HarnessError::Config(e.to_string()))?;

    // initial_state is in original coordinates for `source` and in the
    // transformed ones for `source-transformed`.
    let given = match &cfg.initial_state {
        Some(v) => {
            if v.len() != 5 {
                return Err(HarnessError::Config(format!(
                    "source initial_state must have length 5 ([q1, q2, v1, v2, eta]), got {}",
                    v.len()
                )));
            }
            SourceState::unpack(v)
        }
        None => SourceState {
            q: [-9.0, 7.0],
            q_dot: [0.0, 0.0],
            eta: 0.0,
        },
    };
    let transformed0 = if report_transformed {
        given
    } else {
        source::to_transformed(&given, &params, &boundary, 0.0)
    };

    // The milder transformed system is integrated in all cases; reporting
    // maps back when original coordinates are requested.
    let rhs = source::transformed_system(source::demo_signal, params, boundary.clone());
    let grid = uniform_grid(0.0, cfg.horizon, cfg.integrator.output_points);
    let traj = ode::integrate_at(
        rhs,
        &transformed0.pack(),
        0.0,
        cfg.horizon,
        &cfg.integrator.to_config()?,
        &grid,
    )?;

    let labels: [&str; 5] = if report_transformed {
        ["qt1", "qt2", "vt1", "vt2", "eta"]
    } else {
        ["q1", "q2", "v1", "v2", "eta"]
    };
    let mut columns = vec!["t".to_string()];
    columns.extend(labels.map(String::from));
    columns.push("y".into());

    let mut rows = Vec::with_capacity(traj.len());
    for (t, s) in traj.times().iter().zip(traj.states()) {
        let tr = SourceState::unpack(s);
        let original = source::from_transformed(&tr, &params, &boundary, *t);
        let reported = if report_transformed { tr } else { original };
        let mut row = vec![*t];
        row.extend(reported.pack());
        row.push(source::demo_signal(original.q));
        rows.push(row);
    }
    let table = DataTable { columns, rows };

    let mut terminal_state = BTreeMap::new();
    for (name, value) in table
        .columns
        .iter()
        .skip(1)
        .zip(table.rows.last().unwrap().iter().skip(1))
    {
        terminal_state.insert(name.clone(), *value);
    }

    // For the transformed scheme, also measure the sup gap to the averaged
    // system from the same initial data (the weak-averaging discrepancy).
    let averaged_gap = if report_transformed {
        let obj = AveragedObjective2D::disk(source::demo_signal, a, params.c)?;
        let reference = ode::integrate_at(
            source::averaged_system(obj, params),
            &transformed0.pack(),
            0.0,
            cfg.horizon,
            &cfg.integrator.to_config()?,
            &grid,
        )?;
        let mut sup: f64 = 0.0;
        for (s, r) in traj.states().iter().zip(reference.states()) {
            for (x, y) in s.iter().zip(r) {
                sup = sup.max((x - y).abs());
            }
        }
        Some(sup)
    } else {
        None
    };

    // Final-period statistics of the original position: mean over one dither
    // period (finely resampled from the smooth transformed trajectory).
    let period_t = params.eps * boundary.period();
    let t_end = cfg.horizon;
    let fine = uniform_grid((t_end - period_t).max(0.0), t_end, 257);
    let resampled = ode::resample(&traj, &fine)?;
    let mut mean_q = [0.0, 0.0];
    let mut max_norm: f64 = 0.0;
    for (t, s) in resampled.times().iter().zip(resampled.states()) {
        let original = source::from_transformed(&SourceState::unpack(s), &params, &boundary, *t);
        mean_q = vec2::add(mean_q, original.q);
        max_norm = max_norm.max(vec2::norm(original.q));
    }
    mean_q = vec2::scale(1.0 / resampled.len() as f64, mean_q);

    let terminal_original = source::from_transformed(
        &SourceState::unpack(traj.last_state()),
        &params,
        &boundary,
        t_end,
    );
    let mut metrics = BTreeMap::new();
    metrics.insert("terminal_q_norm".into(), vec2::norm(terminal_original.q));
    metrics.insert("period_avg_q_norm".into(), vec2::norm(mean_q));
    metrics.insert("max_q_norm_final_period".into(), max_norm);
    if let Some(gap) = averaged_gap {
        metrics.insert("sup_gap_to_averaged".into(), gap);
    }

    Ok(PreparedRun {
        table,
        terminal_state,
        metrics,
        terminal_time: t_end,
    })
}

fn run_averaged_classical(cfg: &ScenarioConfig) -> Result<PreparedRun, HarnessError> {
    let a = cfg.parameters.a.expect("validated");
    let gains = ClassicalGains::new(
        cfg.parameters.eps.unwrap_or(1.0),
        a,
        cfg.parameters.omega_h.unwrap_or(1.0),
        cfg.parameters.omega_l.unwrap_or(1.0),
        cfg.parameters.k.unwrap_or(1.0),
    )
    .map_err(|e| HarnessError::Config(e.to_string()))?;
    let obj = AveragedObjective1D::new(classical::demo_psi, a)
        .map_err(|e| HarnessError::Config(e.to_string()))?
        .with_derivative(classical::demo_psi_prime);

    let x0 = match &cfg.initial_state {
        Some(v) if v.len() == 3 => v.clone(),
        Some(v) => {
            return Err(HarnessError::Config(format!(
                "averaged-classical initial_state must have length 3, got {}",
                v.len()
            )))
        }
        None => {
            let z0 = obj
                .filter_mean(-1.0)
                .map_err(|e| HarnessError::Numerical(e.to_string()))?;
            vec![-1.0, 0.0, z0]
        }
    };

    let grid = uniform_grid(0.0, cfg.horizon, cfg.integrator.output_points);
    let rhs = classical::averaged_system(obj.clone(), gains);
    let traj = ode::integrate_at(
        rhs,
        &x0,
        0.0,
        cfg.horizon,
        &cfg.integrator.to_config()?,
        &grid,
    )?;

    let columns = vec![
        "tau".to_string(),
        "theta_bar".to_string(),
        "theta_bar_dot".to_string(),
        "eta_bar".to_string(),
        "psi_bar".to_string(),
    ];
    let mut rows = Vec::with_capacity(traj.len());
    for (t, s) in traj.times().iter().zip(traj.states()) {
        let psi_bar = obj
            .averaged(s[0])
            .map_err(|e| HarnessError::Numerical(e.to_string()))?;
        rows.push(vec![*t, s[0], s[1], s[2], psi_bar]);
    }
    let table = DataTable { columns, rows };

    let last = traj.last_state();
    let mut terminal_state = BTreeMap::new();
    terminal_state.insert("theta_bar".into(), last[0]);
    terminal_state.insert("theta_bar_dot".into(), last[1]);
    terminal_state.insert("eta_bar".into(), last[2]);
    let mut metrics = BTreeMap::new();
    metrics.insert("terminal_theta_bar".into(), last[0]);

    Ok(PreparedRun {
        table,
        terminal_state,
        metrics,
        terminal_time: cfg.horizon,
    })
}

fn run_averaged_source(cfg: &ScenarioConfig) -> Result<PreparedRun, HarnessError> {
    let a = cfg.parameters.a.expect("validated");
    let params = source_params(&cfg.parameters)?;
    let obj = AveragedObjective2D::disk(source::demo_signal, a, params.c)
        .map_err(|e| HarnessError::Config(e.to_string()))?;

    let x0 = match &cfg.initial_state {
        Some(v) if v.len() == 5 => v.clone(),
        Some(v) => {
            return Err(HarnessError::Config(format!(
                "averaged-source initial_state must have length 5, got {}",
                v.len()
            )))
        }
        None => {
            // Transformed image of the demonstration start with zero velocity.
            let b = DitherBoundary::circle(a).map_err(|e| HarnessError::Config(e.to_string()))?;
            let s = SourceState {
                q: [-9.0, 7.0],
                q_dot: [0.0, 0.0],
                eta: 0.0,
            };
            source::to_transformed(&s, &params, &b, 0.0).pack()
        }
    };

    let grid = uniform_grid(0.0, cfg.horizon, cfg.integrator.output_points);
    let rhs = source::averaged_system(obj, params);
    let traj = ode::integrate_at(
        rhs,
        &x0,
        0.0,
        cfg.horizon,
        &cfg.integrator.to_config()?,
        &grid,
    )?;

    let columns: Vec<String> = ["t", "q1", "q2", "v1", "v2", "eta"]
        .map(String::from)
        .to_vec();
    let rows: Vec<Vec<f64>> = traj
        .times()
        .iter()
        .zip(traj.states())
        .map(|(t, s)| {
            let mut row = vec![*t];
            row.extend_from_slice(s);
            row
        })
        .collect();
    let table = DataTable { columns, rows };

    let last = traj.last_state();
    let mut terminal_state = BTreeMap::new();
    for (name, value) in table.columns.iter().skip(1).zip(last.iter()) {
        terminal_state.insert(name.clone(), *value);
    }
    let mut metrics = BTreeMap::new();
    metrics.insert(
        "terminal_q_norm".into(),
        (last[0] * last[0] + last[1] * last[1]).sqrt(),
    );

    Ok(PreparedRun {
        table,
        terminal_state,
        metrics,
        terminal_time: cfg.horizon,
    })
}

/// Builds the damped-gradient instance selected by the `potential`
/// parameter.
pub fn lyapunov_system_from(p: &Parameters) -> Result<LyapunovSystem, HarnessError> {
    let k = p.k.expect("validated");
    let kind = p.potential.clone().unwrap_or_else(|| "quadratic".into());
    match kind.as_str() {
        "quadratic" => {
            let x_star = p.x_star.clone().unwrap_or_else(|| vec![0.0]);
            let xs = x_star.clone();
            LyapunovSystem::new(
                k,
                move |x| {
                    0.5 * x
                        .iter()
                        .zip(&xs)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                },
                {
                    let xs = x_star.clone();
                    move |x| x.iter().zip(&xs).map(|(a, b)| a - b).collect()
                },
                x_star.clone(),
                0.0,
            )
            .map_err(|e| HarnessError::Config(e.to_string()))
        }
        "classical-demo" => {
            let a = p.a.ok_or_else(|| {
                HarnessError::Config("classical-demo potential requires parameter 'a'".into())
            })?;
            classical_demo_lyapunov(k, a, p.c.unwrap_or(1.0)).map_err(HarnessError::from)
        }
        "source-demo" => {
            let a = p.a.ok_or_else(|| {
                HarnessError::Config("source-demo potential requires parameter 'a'".into())
            })?;
            source_demo_lyapunov(k, a, p.c.unwrap_or(1.0), p.m.unwrap_or(1.0))
                .map_err(HarnessError::from)
        }
        other => Err(HarnessError::Config(format!(
            "unknown potential '{other}' (expected quadratic, classical-demo, source-demo)"
        ))),
    }
}

/// Damped-gradient instance of the averaged scalar loop: damping is the
/// low-pass rate and the potential is the scaled averaged-output deficit, so
/// its negative gradient reproduces the demodulated drive.
pub fn classical_demo_lyapunov(
    omega_l: f64,
    a: f64,
    gain_k: f64,
) -> Result<LyapunovSystem, lyap::LyapError> {
    let theta_star = newton_maximizer_classical(a);
    let scale = gain_k * omega_l * a * a / 2.0;
    let peak = classical::demo_psi_bar_closed_form(a, theta_star);
    LyapunovSystem::new(
        omega_l,
        move |x| scale * (peak - classical::demo_psi_bar_closed_form(a, x[0])),
        move |x| {
            vec![
                -scale
                    * (-4.0 * x[0].powi(3)
                        + 1.6 * x[0] * x[0]
                        + 2.0 * (6.0 / 5.0 - 1.5 * a * a) * x[0]
                        + 0.4 * a * a),
            ]
        },
        vec![theta_star],
        0.0,
    )
}

fn newton_maximizer_classical(a: f64) -> f64 {
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

/// Damped-gradient instance of the averaged planar loop: damping `kappa/m`,
/// potential `(c/m)` times the averaged-signal deficit to the origin peak.
pub fn source_demo_lyapunov(
    kappa_over_m: f64,
    a: f64,
    c: f64,
    m: f64,
) -> Result<LyapunovSystem, lyap::LyapError> {
    let obj = AveragedObjective2D::disk(source::demo_signal, a, 1.0)
        .map_err(|e| lyap::LyapError::BadSystem(e.to_string()))?;
    let peak = obj
        .averaged([0.0, 0.0])
        .map_err(|e| lyap::LyapError::BadSystem(e.to_string()))?;
    let scale = c / m;
    let grad_obj = obj.clone();
    LyapunovSystem::new(
        kappa_over_m,
        move |x| {
            let v = obj.averaged([x[0], x[1]]).unwrap_or(f64::NAN);
            scale * (peak - v)
        },
        move |x| {
            let g = grad_obj
                .grad_averaged([x[0], x[1]])
                .unwrap_or([f64::NAN; 2]);
            vec![-scale * g[0], -scale * g[1]]
        },
        vec![0.0, 0.0],
        // Ball certified to contain the set where the radial alignment of the
        // averaged-signal gradient may fail (checked numerically for a = 1).
        6.0,
    )
}

fn run_lyapunov(cfg: &ScenarioConfig) -> Result<PreparedRun, HarnessError> {
    let sys = lyapunov_system_from(&cfg.parameters)?;
    let n = sys.dim();
    let x0 = match &cfg.initial_state {
        Some(v) if v.len() == 2 * n => v.clone(),
        Some(v) => {
            return Err(HarnessError::Config(format!(
                "lyapunov initial_state must have length {} ([x.., v..]), got {}",
                2 * n,
                v.len()
            )))
        }
        None => {
            let mut v = vec![0.0; 2 * n];
            v[0] = sys.minimizer()[0] + 1.0;
            v
        }
    };

    let grid = uniform_grid(0.0, cfg.horizon, cfg.integrator.output_points);
    let rhs = lyap::damped_gradient_system(sys.clone());
    let traj = ode::integrate_at(
        rhs,
        &x0,
        0.0,
        cfg.horizon,
        &cfg.integrator.to_config()?,
        &grid,
    )?;

    let mut columns = vec!["t".to_string()];
    for i in 0..n {
        columns.push(format!("x{}", i + 1));
    }
    for i in 0..n {
        columns.push(format!("v{}", i + 1));
    }
    columns.push("energy".into());
    columns.push("b_value".into());

    let mut rows = Vec::with_capacity(traj.len());
    for (t, s) in traj.times().iter().zip(traj.states()) {
        let (x, v) = s.split_at(n);
        let mut row = vec![*t];
        row.extend_from_slice(s);
        row.push(lyap::energy(&sys, x, v));
        row.push(lyap::b_function(&sys, x, v));
        rows.push(row);
    }
    let table = DataTable { columns, rows };

    let last = traj.last_state();
    let mut terminal_state = BTreeMap::new();
    for (name, value) in table.columns.iter().skip(1).zip(last.iter()) {
        terminal_state.insert(name.clone(), *value);
    }
    let (x, v) = last.split_at(n);
    let dist: f64 = x
        .iter()
        .zip(sys.minimizer())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let mut metrics = BTreeMap::new();
    metrics.insert("terminal_distance_to_minimizer".into(), dist);
    metrics.insert("terminal_energy".into(), lyap::energy(&sys, x, v));

    Ok(PreparedRun {
        table,
        terminal_state,
        metrics,
        terminal_time: cfg.horizon,
    })
}

/// Reproduces one figure: the trajectory bundle plus the averaged-objective
/// curve (scalar loop) or surface (planar loop) sampled on a grid.
pub fn reproduce_figure(id: FigureId, out_dir: &Path) -> Result<RunArtifacts, HarnessError> {
    let cfg = id.scenario();
    let mut artifacts = run_scenario(&cfg, out_dir)?;
    let dir = out_dir.join(cfg.artifact_name());

    match id {
        FigureId::Fig2a | FigureId::Fig2b | FigureId::Fig3 => {
            let amplitudes: Vec<f64> = match id {
                FigureId::Fig2a => vec![0.4],
                FigureId::Fig2b => vec![0.7],
                _ => vec![1.0, 0.8, 0.6, 0.4, 0.2],
            };
            let mut columns = vec!["theta".to_string(), "psi".to_string()];
            for a in &amplitudes {
                columns.push(format!("psi_bar_a{a}"));
            }
            let mut rows = Vec::new();
            let mut theta = -2.0;
            while theta <= 2.0 + 1e-12 {
                let mut row = vec![theta, classical::demo_psi(theta)];
                for &a in &amplitudes {
                    row.push(
                        quad::semicircle_average(classical::demo_psi, theta, a, 64)
                            .map_err(|e| HarnessError::Numerical(e.to_string()))?,
                    );
                }
                rows.push(row);
                theta += 0.01;
            }
            let path = dir.join("objective.csv");
            write_atomic(&path, table_to_csv(&DataTable { columns, rows }).as_bytes())?;
            artifacts.paths.push(path);
        }
        FigureId::Fig4Center | FigureId::Fig4Right => {
            let a = cfg.parameters.a.unwrap();
            let obj = AveragedObjective2D::disk(source::demo_signal, a, 1.0)
                .map_err(|e| HarnessError::Numerical(e.to_string()))?;
            let mut rows = Vec::new();
            let n = 97; // [-12, 12] at step 0.25
            for i in 0..n {
                let qx = -12.0 + 0.25 * i as f64;
                for j in 0..n {
                    let qy = -12.0 + 0.25 * j as f64;
                    let value = obj
                        .averaged([qx, qy])
                        .map_err(|e| HarnessError::Numerical(e.to_string()))?;
                    rows.push(vec![qx, qy, source::demo_signal([qx, qy]), value]);
                }
            }
            let columns: Vec<String> = ["q1", "q2", "psi", "psi_bar"].map(String::from).to_vec();
            let path = dir.join("objective.csv");
            write_atomic(&path, table_to_csv(&DataTable { columns, rows }).as_bytes())?;
            artifacts.paths.push(path);
        }
    }
    Ok(artifacts)
}

/// One row of a parameter sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub index: usize,
    pub assignment: BTreeMap<String, f64>,
    pub metrics: BTreeMap<String, f64>,
    pub error: Option<String>,
}

/// Grid file: parameter name to list of values; rows are the cartesian
/// product in lexicographic (sorted-name, value-order) order.
pub fn parse_grid(text: &str) -> Result<Vec<BTreeMap<String, f64>>, HarnessError> {
    let raw: BTreeMap<String, Vec<f64>> =
        serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
    if raw.is_empty() || raw.values().any(|v| v.is_empty()) {
        return Err(HarnessError::Config("sweep grid must be non-empty".into()));
    }
    let names: Vec<&String> = raw.keys().collect();
    let mut rows = vec![BTreeMap::new()];
    for name in names {
        let mut next = Vec::new();
        for row in &rows {
            for value in &raw[name] {
                let mut r: BTreeMap<String, f64> = row.clone();
                r.insert(name.clone(), *value);
                next.push(r);
            }
        }
        rows = next;
    }
    Ok(rows)
}

fn apply_assignment(
    cfg: &ScenarioConfig,
    assignment: &BTreeMap<String, f64>,
) -> Result<ScenarioConfig, HarnessError> {
    let mut cfg = cfg.clone();
    for (name, value) in assignment {
        match name.as_str() {
            "eps" => cfg.parameters.eps = Some(*value),
            "a" => cfg.parameters.a = Some(*value),
            "omega_h" => cfg.parameters.omega_h = Some(*value),
            "omega_l" => cfg.parameters.omega_l = Some(*value),
            "k" => cfg.parameters.k = Some(*value),
            "m" => cfg.parameters.m = Some(*value),
            "kappa" => cfg.parameters.kappa = Some(*value),
            "c" => cfg.parameters.c = Some(*value),
            "horizon" => cfg.horizon = *value,
            other => {
                return Err(HarnessError::Config(format!(
                    "unknown sweep parameter '{other}'"
                )))
            }
        }
    }
    Ok(cfg)
}

/// Runs the scenario once per grid point (concurrently up to `jobs`),
/// recording per-row failures and keeping grid order in the summary.
pub fn sweep(
    base: &ScenarioConfig,
    grid: &[BTreeMap<String, f64>],
    jobs: usize,
) -> Result<Vec<SweepRow>, HarnessError> {
    if grid.is_empty() {
        return Err(HarnessError::Config("sweep grid must be non-empty".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let rows: Vec<SweepRow> = pool.install(|| {
        use rayon::prelude::*;
        grid.par_iter()
            .enumerate()
            .map(|(index, assignment)| {
                match apply_assignment(base, assignment)
                    .and_then(|cfg| run_scenario_in_memory(&cfg))
                {
                    Ok((_, summary)) => SweepRow {
                        index,
                        assignment: assignment.clone(),
                        metrics: summary.metrics,
                        error: None,
                    },
                    Err(err) => SweepRow {
                        index,
                        assignment: assignment.clone(),
                        metrics: BTreeMap::new(),
                        error: Some(err.to_string()),
                    },
                }
            })
            .collect()
    });
    Ok(rows)
}

/// Serializes sweep rows as a CSV table (union of metric names, grid order).
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut param_names: Vec<String> = Vec::new();
    let mut metric_names: Vec<String> = Vec::new();
    for row in rows {
        for k in row.assignment.keys() {
            if !param_names.contains(k) {
                param_names.push(k.clone());
            }
        }
        for k in row.metrics.keys() {
            if !metric_names.contains(k) {
                metric_names.push(k.clone());
            }
        }
    }
    param_names.sort();
    metric_names.sort();
    let mut out = String::from("index");
    for p in &param_names {
        out.push(',');
        out.push_str(p);
    }
    for m in &metric_names {
        out.push(',');
        out.push_str(m);
    }
    out.push_str(",error\n");
    for row in rows {
        out.push_str(&row.index.to_string());
        for p in &param_names {
            out.push(',');
            if let Some(v) = row.assignment.get(p) {
                out.push_str(&format!("{v:.16e}"));
            }
        }
        for m in &metric_names {
            out.push(',');
            if let Some(v) = row.metrics.get(m) {
                out.push_str(&format!("{v:.16e}"));
            }
        }
        out.push(',');
        if let Some(e) = &row.error {
            out.push_str(&e.replace(',', ";"));
        }
        out.push('\n');
    }
    out
}

/// One check of the identity battery.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl CheckResult {
    fn new(name: &str, value: f64, threshold: f64) -> Self {
        CheckResult {
            name: name.into(),
            value,
            threshold,
            passed: value <= threshold,
        }
    }
}

/// Identity battery: quadrature identities, force equalities, transform
/// round-trip, and dissipation along the averaged planar trajectory.
/// `tol_scale` multiplies every threshold (CLI `--tol`).
pub fn run_verify(tol_scale: f64) -> Result<Vec<CheckResult>, HarnessError> {
    let mut checks = Vec::new();

    // Demodulated drive vs scaled slope of the averaged output.
    let grid: Vec<f64> = (0..=400).map(|i| -2.0 + 0.01 * i as f64).collect();
    let mut worst = 0.0f64;
    for &a in &[0.4, 0.7, 1.0] {
        let obj = AveragedObjective1D::new(classical::demo_psi, a)
            .map_err(HarnessError::from)?
            .with_derivative(classical::demo_psi_prime);
        let report = classical::gradient_identity_residual(&obj, &grid)?;
        worst = worst.max(report.max_residual);
    }
    checks.push(CheckResult::new(
        "gradient-identity",
        worst,
        1e-10 * tol_scale,
    ));

    // Closed-form averaged quartic vs kernel quadrature.
    let mut worst = 0.0f64;
    for &a in &[0.4, 0.7, 1.0] {
        for i in 0..=400 {
            let theta = -2.0 + 0.01 * i as f64;
            let q = quad::semicircle_average(classical::demo_psi, theta, a, 64)?;
            worst = worst.max((q - classical::demo_psi_bar_closed_form(a, theta)).abs());
        }
    }
    checks.push(CheckResult::new(
        "closed-form-average",
        worst,
        1e-11 * tol_scale,
    ));

    // Boundary flux vs finite-difference gradient of the region average.
    let obj = AveragedObjective2D::disk(source::demo_signal, 1.0, 1.0)?;
    let mut grid2 = Vec::new();
    let mut qx = -10.0;
    while qx <= 10.0 + 1e-9 {
        let mut qy = -10.0;
        while qy <= 10.0 + 1e-9 {
            grid2.push([qx, qy]);
            qy += 0.5;
        }
        qx += 0.5;
    }
    let residual = source::divergence_identity_residual(&obj, &grid2)?;
    checks.push(CheckResult::new(
        "divergence-identity",
        residual,
        1e-5 * tol_scale,
    ));

    // Circular-boundary force vs its closed form.
    let a = 0.5;
    let params = SourceParams::unit(0.1).map_err(HarnessError::from)?;
    let b = DitherBoundary::circle(a).map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut worst = 0.0f64;
    for k in 0..1000 {
        let t = 0.0173 * k as f64;
        let y = 4.0 * (0.3 * k as f64).sin();
        let eta = 2.0 * (0.11 * k as f64).cos();
        let f = source::control_force(&params, &b, y, eta, t);
        let phase = t / params.eps;
        let scalar =
            a * (-params.m / (params.eps * params.eps) + 2.0 * params.c / (a * a) * (y - eta));
        let expect = [scalar * phase.cos(), scalar * phase.sin()];
        let scale = vec2::norm(expect).max(1.0);
        worst = worst.max(vec2::norm(vec2::sub(f, expect)) / scale);
    }
    checks.push(CheckResult::new(
        "disk-force-equality",
        worst,
        1e-12 * tol_scale,
    ));

    // Coordinate transform round-trip.
    let mut worst = 0.0f64;
    for k in 0..200 {
        let s = SourceState {
            q: [
                (0.37 * k as f64).sin() * 10.0,
                (0.21 * k as f64).cos() * 8.0,
            ],
            q_dot: [(0.13 * k as f64).cos(), (0.41 * k as f64).sin()],
            eta: 0.5,
        };
        let t = 0.3 * k as f64;
        let back =
            source::from_transformed(&source::to_transformed(&s, &params, &b, t), &params, &b, t);
        worst = worst
            .max(vec2::norm(vec2::sub(back.q, s.q)))
            .max(vec2::norm(vec2::sub(back.q_dot, s.q_dot)));
    }
    checks.push(CheckResult::new(
        "transform-round-trip",
        worst,
        1e-10 * tol_scale,
    ));

    // Dissipation along the averaged planar trajectory (the demonstration
    // instance with unit constants).
    let report = fig4_dissipation_report()?;
    checks.push(CheckResult::new(
        "dissipation-energy-match",
        report.max_energy_mismatch,
        1e-6 * tol_scale,
    ));
    checks.push(CheckResult::new(
        "dissipation-energy-decrease",
        report.max_energy_rate,
        1e-6 * tol_scale,
    ));
    checks.push(CheckResult::new(
        "dissipation-b-match",
        report.max_b_mismatch,
        1e-6 * tol_scale,
    ));
    checks.push(CheckResult::new(
        "dissipation-b-decrease-outside",
        report.max_b_rate_outside,
        1e-6 * tol_scale,
    ));
    checks.push(CheckResult::new(
        "certificate-sublevel-containment",
        report.max_b_excess_outside,
        1e-6 * tol_scale,
    ));

    Ok(checks)
}

/// Integrates the averaged planar demonstration (unit constants, radius 1,
/// transformed initial data) with triplet-clustered output samples and runs
/// the dissipation check on it.
pub fn fig4_dissipation_report() -> Result<lyap::DissipationReport, HarnessError> {
    let sys = source_demo_lyapunov(1.0, 1.0, 1.0, 1.0)?;
    let rhs = lyap::damped_gradient_system(sys.clone());

    // Transformed image of the demonstration start; radius 1, eps = 1/10.
    let params = SourceParams::unit(0.1).map_err(HarnessError::from)?;
    let b = DitherBoundary::circle(1.0).map_err(|e| HarnessError::Config(e.to_string()))?;
    let s0 = source::to_transformed(
        &SourceState {
            q: [-9.0, 7.0],
            q_dot: [0.0, 0.0],
            eta: 0.0,
        },
        &params,
        &b,
        0.0,
    );
    let x0 = [s0.q[0], s0.q[1], s0.q_dot[0], s0.q_dot[1]];

    let horizon = 40.0;
    let h = 4e-5;
    let mut grid = Vec::new();
    let probes = 800usize;
    for i in 0..probes {
        let t = horizon * (i as f64 + 0.5) / probes as f64;
        grid.push(t - h);
        grid.push(t);
        grid.push(t + h);
    }
    let cfg = IntegratorConfig::adaptive(1e-12, 1e-12);
    let traj = ode::integrate_at(rhs, &x0, 0.0, horizon, &cfg, &grid)?;
    lyap::check_dissipation(&sys, &traj, 2.0 * h).map_err(HarnessError::from)
}

/// Probe family selector for the probe config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeFamilyId {
    /// Scalar loop (dither time scale) around the smoothed maximizer;
    /// measured coordinates are the estimate and its velocity.
    ClassicalDemo,
    /// Planar loop in transformed coordinates around the origin; measured
    /// coordinates are position and velocity.
    SourceDemo,
}

/// Declarative probe setup.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub schema_version: u32,
    pub family: ProbeFamilyId,
    pub a: f64,
    pub r: f64,
    pub delta: f64,
    pub eps_list: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    pub horizon: f64,
    #[serde(default)]
    pub integrator: IntegratorSettings,
}

impl ProbeConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: ProbeConfig =
            serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(HarnessError::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Full scalar loop in the dither time scale, prepared for the probe.
/// The measured space is (estimate, estimate velocity); the plant starts on
/// its equilibrium manifold and the high-pass state matched.
pub fn classical_probe_family(a: f64) -> Result<ProbeFamily, HarnessError> {
    let plant = classical::demo_plant();
    let theta_star = newton_maximizer_classical(a);
    let n = plant.state_dim();
    let plant_for_init = plant.clone();
    Ok(ProbeFamily {
        dim: n + 3,
        measured_dim: 2,
        target: vec![theta_star, 0.0],
        make_rhs: Arc::new(move |eps| {
            let gains = ClassicalGains::unit(eps, a).expect("positive gains");
            let plant = plant.clone();
            Box::new(move |flat: &[f64], tau: f64, out: &mut [f64]| {
                let s = ClassicalState::unpack(plant.state_dim(), flat, false, gains.a);
                out.copy_from_slice(&classical::time_scaled_rhs(&plant, &gains, &s, tau, false));
            })
        }),
        dither_period: Arc::new(|_eps| 2.0 * std::f64::consts::PI),
        make_initial: Arc::new(move |measured| {
            let theta0 = measured[0];
            let v0 = measured[1]; // theta velocity = K xi with K = 1
            let x = plant_for_init.equilibrium(theta0);
            let eta0 = plant_for_init.output(&x);
            let mut full = x;
            full.extend([theta0, v0, eta0]);
            full
        }),
        measure: Arc::new(move |full| vec![full[n], full[n + 1]]),
    })
}

/// Planar loop in transformed coordinates, prepared for the probe. The
/// measured space is (position, velocity); the filter starts matched to the
/// signal at the starting position.
pub fn source_probe_family(a: f64) -> Result<ProbeFamily, HarnessError> {
    let boundary = DitherBoundary::circle(a).map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(ProbeFamily {
        dim: 5,
        measured_dim: 4,
        target: vec![0.0, 0.0, 0.0, 0.0],
        make_rhs: Arc::new(move |eps| {
            let params = SourceParams::unit(eps).expect("positive params");
            let b = boundary.clone();
            Box::new(move |flat: &[f64], t: f64, out: &mut [f64]| {
                out.copy_from_slice(&source::transformed_rhs(
                    &source::demo_signal,
                    &params,
                    &b,
                    flat,
                    t,
                ));
            })
        }),
        dither_period: Arc::new(|eps| 2.0 * std::f64::consts::PI * eps),
        make_initial: Arc::new(|measured| {
            let q = [measured[0], measured[1]];
            vec![q[0], q[1], measured[2], measured[3], source::demo_signal(q)]
        }),
        measure: Arc::new(|full| full[..4].to_vec()),
    })
}

/// Runs the probe described by the config.
pub fn run_probe(cfg: &ProbeConfig) -> Result<SgpuasReport, HarnessError> {
    let family = match cfg.family {
        ProbeFamilyId::ClassicalDemo => classical_probe_family(cfg.a)?,
        ProbeFamilyId::SourceDemo => source_probe_family(cfg.a)?,
    };
    let spec = ProbeSpec {
        r: cfg.r,
        delta: cfg.delta,
        eps_list: cfg.eps_list.clone(),
        seed: cfg.seed,
        horizon: cfg.horizon,
        integrator: cfg.integrator.to_config()?,
    };
    lyap::sgpuas_probe(&family, &spec).map_err(HarnessError::from)
}

fn identity_report_for(cfg: &ScenarioConfig) -> Result<serde_json::Value, HarnessError> {
    match cfg.scheme {
        Scheme::Classical | Scheme::ClassicalDecay | Scheme::AveragedClassical => {
            let a = cfg.parameters.a.expect("validated");
            let obj = AveragedObjective1D::new(classical::demo_psi, a)
                .map_err(HarnessError::from)?
                .with_derivative(classical::demo_psi_prime);
            let grid: Vec<f64> = (0..=200).map(|i| -2.0 + 0.02 * i as f64).collect();
            let gradient = classical::gradient_identity_residual(&obj, &grid)?;
            let mut closed_form_worst = 0.0f64;
            for &theta in &grid {
                let q = quad::semicircle_average(classical::demo_psi, theta, a, 64)?;
                closed_form_worst = closed_form_worst
                    .max((q - classical::demo_psi_bar_closed_form(a, theta)).abs());
            }
            Ok(serde_json::json!({
                "scheme": cfg.scheme.name(),
                "a": a,
                "gradient_identity_c_fit": gradient.c_fit,
                "gradient_identity_max_residual": gradient.max_residual,
                "closed_form_average_max_gap": closed_form_worst,
            }))
        }
        Scheme::Source | Scheme::SourceTransformed | Scheme::AveragedSource => {
            let a = cfg.parameters.a.expect("validated");
            let c = cfg.parameters.c.unwrap_or(1.0);
            let obj = AveragedObjective2D::disk(source::demo_signal, a, c)?;
            let mut grid = Vec::new();
            let mut qx = -10.0;
            while qx <= 10.0 + 1e-9 {
                let mut qy = -10.0;
                while qy <= 10.0 + 1e-9 {
                    grid.push([qx, qy]);
                    qy += 2.0;
                }
                qx += 2.0;
            }
            let residual = source::divergence_identity_residual(&obj, &grid)?;
            Ok(serde_json::json!({
                "scheme": cfg.scheme.name(),
                "a": a,
                "divergence_identity_max_residual": residual,
                "grid": "[-10,10]^2 step 2",
            }))
        }
        Scheme::Lyapunov => {
            let report = fig4_dissipation_report()?;
            Ok(serde_json::json!({
                "scheme": cfg.scheme.name(),
                "max_energy_mismatch": report.max_energy_mismatch,
                "max_b_mismatch": report.max_b_mismatch,
                "max_energy_rate": report.max_energy_rate,
            }))
        }
    }
}
