//! Command-line driver: scenario loading, subcommand dispatch and report
//! emission.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use tps_core::attack::{
    synthesize, AttackBounds, AttackConfig, AttackContext, AttackKind, AttackVector,
};
use tps_core::detection::{detect_frame, DetectorVerdict, GadWindow, MeasurementSet};
use tps_core::model::{NodeRole, SystemState, TpsTopology};
use tps_core::powerflow::{solve_steady_state, PowerflowConfig};
use tps_core::sim::{
    monte_carlo_rates, roc_sweep, run_timeline, DetectionAttack, MetricsReport, MetricsSummary,
    RateSeries, RocPoint, Scenario, SimError,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Solver(_) => EXIT_SOLVER,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        if e.is_solver_failure() {
            CliError::Solver(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(
    name = "tps",
    version,
    about = "Traction power system attack and detection toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario over its horizon and write the metrics report.
    Simulate(SimulateArgs),
    /// Synthesize one attack on the first instant of a scenario.
    Attack(AttackArgs),
    /// Run the detector stack over a measurement log.
    Detect(DetectArgs),
    /// Sweep detector thresholds and write ROC points.
    Roc(RocArgs),
    /// Summarize a saved JSON report and write its CSV tables.
    Report(ReportArgs),
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output directory.
    #[arg(long, env = "TPS_OUTPUT_DIR", default_value = "tps-out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Chi-square threshold.
    #[arg(long, allow_negative_numbers = true)]
    pub tau: Option<f64>,
    /// Threshold scaling when exactly two solutions exist.
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    /// Detection window.
    #[arg(long)]
    pub window: Option<usize>,
    /// Voltage bound (V).
    #[arg(long, allow_negative_numbers = true)]
    pub dv: Option<f64>,
    /// Current bound (A).
    #[arg(long, allow_negative_numbers = true)]
    pub di: Option<f64>,
    /// Position bound (km).
    #[arg(long, allow_negative_numbers = true)]
    pub ds: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    /// Also estimate windowed FP/MD rates over this many noise realizations.
    #[arg(long, default_value_t = 0)]
    pub trials: usize,
    /// Attack used for the rate estimate.
    #[arg(long, value_enum, default_value = "random")]
    pub detection_attack: DetectionAttackArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DetectionAttackArg {
    Random,
    Stealthy,
}

impl DetectionAttackArg {
    fn attack(self) -> DetectionAttack {
        match self {
            DetectionAttackArg::Random => DetectionAttack::default(),
            DetectionAttackArg::Stealthy => DetectionAttack::Stealthy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Efficiency,
    Safety,
    Suboptimal,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub kind: KindArg,
    /// Enforce estimator consistency (BDD-stealthy attack).
    #[arg(long)]
    pub stealthy: bool,
    /// Compromised nodes, 1-based, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub writable: Vec<usize>,
    /// Nodes the safety attack targets, 1-based; defaults to the writable set.
    #[arg(long = "unsafe", value_delimiter = ',')]
    pub unsafe_set: Vec<usize>,
    /// Bias (V) of the suboptimal attack.
    #[arg(long, default_value_t = 20.0, allow_negative_numbers = true)]
    pub additive_dv: f64,
    /// Time (s) of the attacked instant.
    #[arg(long, default_value_t = 0.0)]
    pub at: f64,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub common: Common,
    /// Measurement log JSON: `{"frames": [{"t", "v", "i", "s"}]}`.
    #[arg(long)]
    pub measurements: PathBuf,
}

#[derive(Debug, Args)]
pub struct RocArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value = "random")]
    pub attack: DetectionAttackArg,
    /// `start:stop:step` or a comma-separated list.
    #[arg(long, default_value = "4:64:4")]
    pub tau_grid: String,
    #[arg(long, default_value = "0.9")]
    pub alpha_grid: String,
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// JSON report written by `simulate --format json`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, env = "TPS_OUTPUT_DIR", default_value = "tps-out")]
    pub out: PathBuf,
}

/// One frame of a measurement log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedFrame {
    pub t: f64,
    pub v: Vec<f64>,
    pub i: Vec<f64>,
    pub s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementLog {
    pub frames: Vec<LoggedFrame>,
}

/// Everything a run needs besides the scenario contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario: PathBuf,
    pub subcommand: String,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub tau: Option<f64>,
    pub alpha: Option<f64>,
    pub window: Option<usize>,
    pub dv: Option<f64>,
    pub di: Option<f64>,
    pub ds: Option<f64>,
}

impl RunManifest {
    fn new(subcommand: &str, c: &Common) -> Self {
        Self {
            scenario: c.scenario.clone(),
            subcommand: subcommand.into(),
            out: c.out.clone(),
            seed: c.seed,
            tau: c.tau,
            alpha: c.alpha,
            window: c.window,
            dv: c.dv,
            di: c.di,
            ds: c.ds,
        }
    }

    /// Loads the scenario and applies the overrides; everything is validated
    /// before any computation.
    pub fn load(&self) -> Result<Scenario, CliError> {
        let text = fs::read_to_string(&self.scenario).map_err(|e| io_err(&self.scenario, e))?;
        let mut sc: Scenario = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", self.scenario.display())))?;
        if let Some(seed) = self.seed {
            sc.seed = seed;
        }
        if let Some(tau) = self.tau {
            sc.detector.tau = tau;
        }
        if let Some(alpha) = self.alpha {
            sc.detector.alpha = alpha;
        }
        if let Some(w) = self.window {
            sc.detector.window = w;
        }
        for (name, x) in [("dv", self.dv), ("di", self.di), ("ds", self.ds)] {
            if let Some(x) = x {
                if !(x >= 0.0) || !x.is_finite() {
                    return Err(CliError::Validation(format!(
                        "--{name} must be finite and >= 0, got {x}"
                    )));
                }
            }
        }
        if let Some(a) = sc.attack.as_mut() {
            a.dv = self.dv.unwrap_or(a.dv);
            a.di = self.di.unwrap_or(a.di);
            a.ds = self.ds.unwrap_or(a.ds);
        }
        sc.validate()?;
        Ok(sc)
    }
}

/// Formats with six significant digits.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".into();
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("formatted float");
    if (1e-4..1e15).contains(&rounded.abs()) {
        rounded.to_string()
    } else {
        format!("{rounded:e}")
    }
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(sig6).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let csv_err = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

pub const STATE_COLUMNS: [&str; 9] = ["t", "node", "V", "I", "P", "bdd", "sad", "gad", "gadw"];
pub const VERDICT_COLUMNS: [&str; 13] = [
    "t",
    "residual",
    "bdd",
    "piv",
    "sad",
    "sad_degenerate",
    "j_star",
    "distance",
    "gad",
    "gadw",
    "attacked",
    "mitigated",
    "breach",
];
pub const RATE_COLUMNS: [&str; 3] = ["t", "fp", "md"];
pub const ROC_COLUMNS: [&str; 6] = ["tau", "alpha", "fp", "md", "fp_bdd", "md_bdd"];

fn verdict_flags(v: Option<&DetectorVerdict>) -> [&'static str; 4] {
    match v {
        Some(v) => [
            flag(v.bdd_alarm),
            flag(v.sad_alarm),
            flag(v.gad_alarm),
            flag(v.gadw_alarm),
        ],
        None => ["", "", "", ""],
    }
}

/// Writes the report: `state.csv`, `verdicts.csv`, `rates.csv` and `roc.csv`
/// for CSV output, `report.json` for JSON output, and `summary.json` in both
/// cases. Returns the written paths.
pub fn emit_report(
    report: &MetricsReport,
    dir: &Path,
    format: Format,
) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut written = Vec::new();
    let summary = dir.join("summary.json");
    write_json(&summary, &report.summary)?;
    written.push(summary);
    match format {
        Format::Json => {
            let path = dir.join("report.json");
            write_json(&path, report)?;
            written.push(path);
        }
        Format::Csv => {
            let mut state = Vec::new();
            let mut verdicts = Vec::new();
            for r in report.instants.iter().filter(|r| r.skipped.is_none()) {
                let f = verdict_flags(r.verdict.as_ref());
                for n in &r.nodes {
                    state.push(vec![
                        sig6(r.t),
                        n.entity.clone(),
                        sig6(n.v),
                        sig6(n.i),
                        sig6(n.p),
                        f[0].into(),
                        f[1].into(),
                        f[2].into(),
                        f[3].into(),
                    ]);
                }
                if let Some(v) = &r.verdict {
                    verdicts.push(vec![
                        sig6(r.t),
                        sig6(v.residual),
                        flag(v.bdd_alarm).into(),
                        flag(v.piv_alarm).into(),
                        flag(v.sad_alarm).into(),
                        flag(v.sad_degenerate).into(),
                        opt(v.j_star),
                        sig6(v.distance),
                        flag(v.gad_alarm).into(),
                        flag(v.gadw_alarm).into(),
                        flag(r.attack_launched).into(),
                        flag(r.mitigated).into(),
                        flag(r.breach).into(),
                    ]);
                }
            }
            let path = dir.join("state.csv");
            write_csv(&path, &STATE_COLUMNS, state)?;
            written.push(path);
            let path = dir.join("verdicts.csv");
            write_csv(&path, &VERDICT_COLUMNS, verdicts)?;
            written.push(path);
            let path = dir.join("rates.csv");
            write_csv(&path, &RATE_COLUMNS, rate_rows(report.rates.as_ref()))?;
            written.push(path);
            let path = dir.join("roc.csv");
            write_csv(&path, &ROC_COLUMNS, roc_rows(&report.roc))?;
            written.push(path);
        }
    }
    Ok(written)
}

fn rate_rows(rates: Option<&RateSeries>) -> Vec<Vec<String>> {
    rates
        .map(|r| {
            r.t.iter()
                .zip(&r.fp)
                .zip(&r.md)
                .map(|((t, fp), md)| vec![sig6(*t), sig6(*fp), opt(*md)])
                .collect()
        })
        .unwrap_or_default()
}

fn roc_rows(points: &[RocPoint]) -> Vec<Vec<String>> {
    points
        .iter()
        .map(|p| {
            vec![
                sig6(p.tau),
                sig6(p.alpha),
                sig6(p.fp),
                sig6(p.md),
                sig6(p.fp_bdd),
                sig6(p.md_bdd),
            ]
        })
        .collect()
}

/// Human-readable summary.
pub fn render_summary(s: &MetricsSummary) -> String {
    let mut out = String::new();
    let mut line = |k: &str, v: String| out.push_str(&format!("{k:<34}{v}\n"));
    line("scenario", s.scenario.clone());
    line(
        "instants (skipped)",
        format!("{} ({})", s.instants, s.skipped),
    );
    line(
        "substation energy honest (MWh)",
        sig6(s.substation_energy_honest_mwh),
    );
    line("substation energy (MWh)", sig6(s.substation_energy_mwh));
    line("energy balance error", sig6(s.energy_balance_error));
    line("accounted instants", s.accounted_instants.to_string());
    line(
        "absorbed energy honest (MWh)",
        sig6(s.absorbed_energy_honest_mwh),
    );
    line("absorbed energy (MWh)", sig6(s.absorbed_energy_mwh));
    line("efficiency loss (%)", sig6(100.0 * s.efficiency_loss));
    line("breach seconds", sig6(s.breach_seconds));
    line("attacked instants", s.attacked_instants.to_string());
    line(
        "alarms bdd/piv/sad/gad/gadw",
        format!(
            "{}/{}/{}/{}/{}",
            s.bdd_alarms, s.piv_alarms, s.sad_alarms, s.gad_alarms, s.gadw_alarms
        ),
    );
    line("sad onset rate practical", opt(s.sad_onset_practical_rate));
    line("sad onset rate oracle", opt(s.sad_onset_oracle_rate));
    out
}

/// Parses `start:stop:step` (inclusive) or a comma-separated list.
pub fn parse_grid(text: &str, what: &str) -> Result<Vec<f64>, CliError> {
    let bad = |m: &str| CliError::Validation(format!("--{what}: {m}"));
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| bad(&format!("bad number {s:?}")))
    };
    let parts: Vec<&str> = text.split(':').collect();
    let grid = if parts.len() == 3 {
        let (a, b, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || b < a {
            return Err(bad("need start <= stop and step > 0"));
        }
        let count = ((b - a) / step + 1e-9).floor() as usize + 1;
        (0..count).map(|k| a + k as f64 * step).collect()
    } else if parts.len() == 1 {
        text.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    } else {
        return Err(bad("expected start:stop:step or a list"));
    };
    if grid.is_empty() {
        return Err(bad("empty grid"));
    }
    Ok(grid)
}

/// Outcome of a command, for callers and tests.
#[derive(Debug)]
pub enum Outcome {
    Simulated(Box<MetricsReport>),
    Attacked(Box<AttackVector>),
    Detected(Vec<DetectorVerdict>),
    Roc(Vec<RocPoint>),
    Reported(Box<MetricsSummary>),
}

/// Parses `argv` (program name first) and runs the command.
pub fn run_command<I, T>(argv: I) -> Result<Outcome, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| CliError::Validation(e.to_string()))?;
    run(cli)
}

pub fn run(cli: Cli) -> Result<Outcome, CliError> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Attack(a) => attack(a),
        Command::Detect(a) => detect(a),
        Command::Roc(a) => roc(a),
        Command::Report(a) => report(a),
    }
}

fn simulate(a: SimulateArgs) -> Result<Outcome, CliError> {
    let sc = RunManifest::new("simulate", &a.common).load()?;
    let mut report = run_timeline(&sc)?;
    if a.trials > 0 {
        report.rates = Some(monte_carlo_rates(
            &sc,
            a.trials,
            a.detection_attack.attack(),
        )?);
    }
    emit_report(&report, &a.common.out, a.format)?;
    print!("{}", render_summary(&report.summary));
    Ok(Outcome::Simulated(Box::new(report)))
}

fn node_index(k: usize, n: usize, what: &str) -> Result<usize, CliError> {
    if k == 0 || k > n {
        return Err(CliError::Validation(format!(
            "--{what}: node {k} outside 1..={n}"
        )));
    }
    Ok(k - 1)
}

fn attack(a: AttackArgs) -> Result<Outcome, CliError> {
    let sc = RunManifest::new("attack", &a.common).load()?;
    let layout = sc.layout_at(a.at)?;
    let topo = &layout.topology;
    let n = topo.len();
    let writable = a
        .writable
        .iter()
        .map(|&k| node_index(k, n, "writable"))
        .collect::<Result<Vec<_>, _>>()?;
    let unsafe_set = if a.unsafe_set.is_empty() {
        writable.clone()
    } else {
        a.unsafe_set
            .iter()
            .map(|&k| node_index(k, n, "unsafe"))
            .collect::<Result<Vec<_>, _>>()?
    };
    let kind = match a.kind {
        KindArg::Efficiency => AttackKind::efficiency(a.stealthy),
        KindArg::Safety => AttackKind::safety(a.stealthy, unsafe_set),
        KindArg::Suboptimal => AttackKind::suboptimal(a.additive_dv),
    };
    let spec = sc.attack.as_ref();
    let dv = a.common.dv.or(spec.map(|s| s.dv)).unwrap_or(50.0);
    let di = a.common.di.or(spec.map(|s| s.di)).unwrap_or(200.0);
    let ds = a.common.ds.or(spec.map(|s| s.ds)).unwrap_or(0.0);
    let bounds = AttackBounds::uniform(topo, &writable, dv, di, ds);
    let honest = solve_steady_state(
        topo,
        &sc.params,
        &sc.thresholds,
        &layout.power_states,
        &PowerflowConfig::default(),
    )
    .map_err(|e| CliError::Solver(format!("honest power flow at t = {}: {e}", a.at)))?;
    let ctx = AttackContext {
        topology: topo,
        params: &sc.params,
        thresholds: &sc.thresholds,
        power_states: &layout.power_states,
        honest: &honest,
    };
    let av = synthesize(&ctx, &kind, &writable, &bounds, &AttackConfig::default()).map_err(
        |e| match e {
            tps_core::attack::AttackError::Powerflow(p) => {
                CliError::Solver(format!("attack at t = {}: {p}", a.at))
            }
            other => CliError::Validation(other.to_string()),
        },
    )?;
    let out = &a.common.out;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    write_json(&out.join("attack.json"), &av)?;
    let rows = attack_rows(topo, &honest, &av);
    write_csv(&out.join("attack.csv"), &ATTACK_COLUMNS, rows.clone())?;
    print!("{}", render_table(&ATTACK_COLUMNS, &rows));
    println!(
        "status {:?}; substation power {} -> {} MW; efficiency loss {} %; breach {}",
        av.status,
        sig6(honest.substation_power(topo)),
        sig6(av.induced_state.substation_power(topo)),
        sig6(100.0 * av.efficiency_loss(topo, &honest)),
        av.breach
    );
    Ok(Outcome::Attacked(Box::new(av)))
}

pub const ATTACK_COLUMNS: [&str; 13] = [
    "node", "role", "s", "V", "I", "P", "s_prime", "V_prime", "I_prime", "P_prime", "V_true",
    "I_true", "P_true",
];

fn attack_rows(topo: &TpsTopology, honest: &SystemState, av: &AttackVector) -> Vec<Vec<String>> {
    let st = &av.induced_state;
    (0..topo.len())
        .map(|k| {
            let role = match topo.role(k) {
                NodeRole::Substation => "substation",
                NodeRole::Tractioning => "tractioning",
                NodeRole::Regenerating => "regenerating",
            };
            vec![
                (k + 1).to_string(),
                role.into(),
                sig6(topo.positions()[k]),
                sig6(honest.v[k]),
                sig6(honest.i[k]),
                sig6(honest.p[k]),
                sig6(av.s_prime[k]),
                sig6(av.v_prime[k]),
                sig6(av.i_prime[k]),
                sig6(av.v_prime[k] * av.i_prime[k] / 1e6),
                sig6(st.v[k]),
                sig6(st.i[k]),
                sig6(st.p[k]),
            ]
        })
        .collect()
}

fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            rows.iter()
                .map(|r| r[c].len())
                .chain([header[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let fmt = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            + "\n"
    };
    let mut out = fmt(header.to_vec());
    for r in rows {
        out.push_str(&fmt(r.iter().map(String::as_str).collect()));
    }
    out
}

fn detect(a: DetectArgs) -> Result<Outcome, CliError> {
    let sc = RunManifest::new("detect", &a.common).load()?;
    let text = fs::read_to_string(&a.measurements).map_err(|e| io_err(&a.measurements, e))?;
    let log: MeasurementLog = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", a.measurements.display())))?;
    let (sv, si) = sc.weight_sigmas();
    let mut window = GadWindow::new(sc.detector.window);
    let mut previous: Option<Vec<f64>> = None;
    let mut verdicts = Vec::new();
    let mut rows = Vec::new();
    for (idx, f) in log.frames.iter().enumerate() {
        let layout = sc.layout_at(f.t)?;
        let topo = &layout.topology;
        let n = topo.len();
        if f.v.len() != n || f.i.len() != n || f.s.len() != n {
            return Err(CliError::Validation(format!(
                "frame {idx}: expected {n} entries in v, i and s"
            )));
        }
        let model = solve_steady_state(
            topo,
            &sc.params,
            &sc.thresholds,
            &layout.power_states,
            &PowerflowConfig::default(),
        )
        .map_err(|e| CliError::Solver(format!("frame {idx}: {e}")))?;
        let v_prev = match &previous {
            Some(p) if p.len() == n => p.clone(),
            _ => model.v.clone(),
        };
        let meas = MeasurementSet::new(f.v.clone(), f.i.clone(), f.s.clone(), sv, si);
        let (mut verdict, _) = detect_frame(
            &meas,
            topo,
            &sc.params,
            topo.positions(),
            sc.piv_tolerance,
            &v_prev,
            &sc.detector,
            &[],
        )
        .map_err(|e| CliError::Solver(format!("frame {idx}: {e}")))?;
        verdict.gadw_alarm = window.push(verdict.gad_alarm);
        previous = Some(if verdict.gad_alarm {
            model.v.clone()
        } else {
            verdict.estimate.clone()
        });
        rows.push(vec![
            sig6(f.t),
            sig6(verdict.residual),
            flag(verdict.bdd_alarm).into(),
            flag(verdict.piv_alarm).into(),
            flag(verdict.sad_alarm).into(),
            flag(verdict.sad_degenerate).into(),
            opt(verdict.j_star),
            sig6(verdict.distance),
            flag(verdict.gad_alarm).into(),
            flag(verdict.gadw_alarm).into(),
        ]);
        verdicts.push(verdict);
    }
    let out = &a.common.out;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    write_csv(&out.join("verdicts.csv"), &VERDICT_COLUMNS[..10], rows)?;
    println!(
        "{} frames; gad alarms {}; gadw alarms {}",
        verdicts.len(),
        verdicts.iter().filter(|v| v.gad_alarm).count(),
        verdicts.iter().filter(|v| v.gadw_alarm).count()
    );
    Ok(Outcome::Detected(verdicts))
}

fn roc(a: RocArgs) -> Result<Outcome, CliError> {
    let sc = RunManifest::new("roc", &a.common).load()?;
    let taus = parse_grid(&a.tau_grid, "tau-grid")?;
    let alphas = parse_grid(&a.alpha_grid, "alpha-grid")?;
    if a.trials == 0 {
        return Err(CliError::Validation("--trials must be >= 1".into()));
    }
    let points = roc_sweep(&sc, &taus, &alphas, a.attack.attack(), a.trials)?;
    let out = &a.common.out;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let rows = roc_rows(&points);
    write_csv(&out.join("roc.csv"), &ROC_COLUMNS, rows.clone())?;
    print!("{}", render_table(&ROC_COLUMNS, &rows));
    Ok(Outcome::Roc(points))
}

fn report(a: ReportArgs) -> Result<Outcome, CliError> {
    let text = fs::read_to_string(&a.input).map_err(|e| io_err(&a.input, e))?;
    let report: MetricsReport = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", a.input.display())))?;
    emit_report(&report, &a.out, Format::Csv)?;
    print!("{}", render_summary(&report.summary));
    Ok(Outcome::Reported(Box::new(report.summary)))
}
