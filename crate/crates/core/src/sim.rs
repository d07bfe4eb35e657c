//! Time-domain scenarios: train running profiles, the per-instant attack and
//! detection loop, energy and safety metrics, Monte Carlo false-positive and
//! missed-detection rates, and ROC sweeps.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{
    discrete_stealthy_attack, synthesize, AttackBounds, AttackConfig, AttackContext, AttackError,
    AttackGoal, AttackKind,
};
use crate::detection::{
    bdd_evaluate, detect_frame, enumerate_stealthy_states, enumerate_stealthy_states_seeded,
    min_pairwise_distance, mitigation_plan, p_distance, sad_decide, sad_exceeds, sad_threshold,
    DetectionError, DetectorConfig, DetectorVerdict, GadWindow, MeasurementSet, StealthSolutionSet,
};
use crate::model::{
    ControlThresholds, ElectricalParams, ModelError, NodeRole, SystemState, TpsTopology,
    TrainPowerState, POSITION_MERGE_EPSILON_KM, W_PER_MW,
};
use crate::powerflow::{
    solve_steady_state, PowerflowConfig, PowerflowError, PowerflowProblem, Setpoint,
};

const G_TONNE: f64 = 1000.0;
const M_PER_KM: f64 = 1000.0;
const S_PER_H: f64 = 3600.0;
/// Fraction of instants allowed to fail before a run is rejected.
const MAX_SKIPPED_FRACTION: f64 = 0.01;
/// Noise level used for detector weights when the scenario is noiseless.
const NOMINAL_NOISE: f64 = 0.003;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario field `{field}`: {reason}")]
    InvalidScenario { field: String, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Powerflow(#[from] PowerflowError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Detection(#[from] DetectionError),
    #[error("{skipped} of {total} instants failed; first at instant {first_index} (t = {first_t} s): {reason}")]
    TooManySkipped {
        skipped: usize,
        total: usize,
        first_index: usize,
        first_t: f64,
        reason: String,
    },
}

impl SimError {
    /// True for numerical failures, false for invalid input.
    pub fn is_solver_failure(&self) -> bool {
        match self {
            SimError::InvalidScenario { .. } | SimError::Model(_) => false,
            SimError::Attack(AttackError::Powerflow(_)) => true,
            SimError::Attack(_) => false,
            SimError::Detection(DetectionError::InvalidConfig(_))
            | SimError::Detection(DetectionError::BadRate(_))
            | SimError::Detection(DetectionError::LengthMismatch { .. }) => false,
            _ => true,
        }
    }
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> SimError {
    SimError::InvalidScenario {
        field: field.into(),
        reason: reason.into(),
    }
}

/// Constant-acceleration segment of a hop between two stops. A phase without
/// duration either cruises (zero acceleration) until the brake point or
/// brakes (negative acceleration) until standstill.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedPhase {
    /// m/s^2.
    pub accel: f64,
    /// s.
    #[serde(default)]
    pub duration: Option<f64>,
}

fn default_dwell() -> f64 {
    20.0
}

fn default_traction_efficiency() -> f64 {
    0.7
}

fn default_regen_efficiency() -> f64 {
    0.4
}

/// Timetable and motion of one train. The same speed phases are applied to
/// every hop between consecutive stops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningProfile {
    pub name: String,
    /// s.
    #[serde(default)]
    pub departure_time: f64,
    /// s.
    #[serde(default = "default_dwell")]
    pub dwell_time: f64,
    /// km, in visiting order.
    pub stops: Vec<f64>,
    pub speed_phases: Vec<SpeedPhase>,
    /// t.
    pub mass: f64,
    #[serde(default = "default_traction_efficiency")]
    pub traction_efficiency: f64,
    #[serde(default = "default_regen_efficiency")]
    pub regen_efficiency: f64,
    /// Davis coefficients A (N), B (N s/m), C (N s^2/m^2).
    #[serde(default)]
    pub resistance_coeffs: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionMode {
    Traction,
    Brake,
    Cruise,
    Dwell,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kinematics {
    /// km.
    pub position: f64,
    /// m/s.
    pub speed: f64,
    /// m/s^2.
    pub accel: f64,
    pub mode: MotionMode,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    start: f64,
    duration: f64,
    x0: f64,
    dir: f64,
    v0: f64,
    accel: f64,
    dwell: bool,
}

impl RunningProfile {
    pub fn validate(&self) -> Result<(), SimError> {
        let field = |f: &str| format!("trains.{}.{f}", self.name);
        if self.stops.is_empty() {
            return Err(invalid(field("stops"), "at least one stop required"));
        }
        if self.stops.iter().any(|s| !s.is_finite()) {
            return Err(invalid(field("stops"), "stops must be finite"));
        }
        if !(self.departure_time >= 0.0) || !self.departure_time.is_finite() {
            return Err(invalid(field("departure_time"), "must be finite and >= 0"));
        }
        if !(self.dwell_time >= 0.0) || !self.dwell_time.is_finite() {
            return Err(invalid(field("dwell_time"), "must be finite and >= 0"));
        }
        if !(self.mass > 0.0) || !self.mass.is_finite() {
            return Err(invalid(field("mass"), "must be positive"));
        }
        for (name, eff) in [
            ("traction_efficiency", self.traction_efficiency),
            ("regen_efficiency", self.regen_efficiency),
        ] {
            if !(eff > 0.0 && eff <= 1.0) {
                return Err(invalid(field(name), "must lie in (0, 1]"));
            }
        }
        if self
            .resistance_coeffs
            .iter()
            .any(|c| !c.is_finite() || *c < 0.0)
        {
            return Err(invalid(
                field("resistance_coeffs"),
                "must be finite and >= 0",
            ));
        }
        for p in &self.speed_phases {
            if !p.accel.is_finite() || p.duration.is_some_and(|d| !(d >= 0.0) || !d.is_finite()) {
                return Err(invalid(
                    field("speed_phases"),
                    "bad acceleration or duration",
                ));
            }
        }
        for hop in self.stops.windows(2) {
            self.hop_durations((hop[1] - hop[0]).abs() * M_PER_KM)?;
        }
        Ok(())
    }

    /// Duration of every phase for a hop of `length` metres.
    fn hop_durations(&self, length: f64) -> Result<Vec<f64>, SimError> {
        let field = format!("trains.{}.speed_phases", self.name);
        let last = self.speed_phases.len().saturating_sub(1);
        let mut durations = vec![0.0; self.speed_phases.len()];
        let (mut v, mut x) = (0.0_f64, 0.0_f64);
        let mut cruise: Option<(usize, f64)> = None;
        for (k, p) in self.speed_phases.iter().enumerate() {
            match p.duration {
                Some(d) => {
                    x += v * d + 0.5 * p.accel * d * d;
                    v += p.accel * d;
                    durations[k] = d;
                    if v < -1e-9 {
                        return Err(invalid(&field, "speed becomes negative"));
                    }
                }
                None if p.accel == 0.0 => {
                    if cruise.is_some() {
                        return Err(invalid(&field, "at most one open cruise phase"));
                    }
                    cruise = Some((k, v));
                }
                None if p.accel < 0.0 => {
                    if k != last {
                        return Err(invalid(&field, "open braking phase must be last"));
                    }
                    let d = v / -p.accel;
                    x += v * d / 2.0;
                    v = 0.0;
                    durations[k] = d;
                }
                None => return Err(invalid(&field, "open phase needs accel <= 0")),
            }
        }
        if v.abs() > 1e-6 {
            return Err(invalid(&field, "train does not come to rest at the stop"));
        }
        let remaining = length - x;
        match cruise {
            Some((k, speed)) => {
                if remaining < -1e-6 {
                    return Err(invalid(&field, format!("hop of {length} m is too short")));
                }
                if remaining > 1e-9 {
                    if !(speed > 0.0) {
                        return Err(invalid(&field, "cruise phase at zero speed"));
                    }
                    durations[k] = remaining / speed;
                }
            }
            None => {
                if remaining.abs() > 1e-3 {
                    return Err(invalid(
                        &field,
                        format!("phases cover {x} m of a {length} m hop"),
                    ));
                }
            }
        }
        Ok(durations)
    }

    fn plan(&self) -> Result<Vec<Segment>, SimError> {
        let mut segments = Vec::new();
        let mut t = self.departure_time;
        for hop in self.stops.windows(2) {
            let (from, to) = (hop[0], hop[1]);
            let dir = if to >= from { 1.0 } else { -1.0 };
            let durations = self.hop_durations((to - from).abs() * M_PER_KM)?;
            let (mut v, mut x) = (0.0_f64, 0.0_f64);
            for (p, &d) in self.speed_phases.iter().zip(&durations) {
                if d > 0.0 {
                    segments.push(Segment {
                        start: t,
                        duration: d,
                        x0: from + dir * x / M_PER_KM,
                        dir,
                        v0: v,
                        accel: p.accel,
                        dwell: false,
                    });
                }
                x += v * d + 0.5 * p.accel * d * d;
                v = (v + p.accel * d).max(0.0);
                t += d;
            }
            segments.push(Segment {
                start: t,
                duration: self.dwell_time,
                x0: to,
                dir,
                v0: 0.0,
                accel: 0.0,
                dwell: true,
            });
            t += self.dwell_time;
        }
        Ok(segments)
    }
}

fn dwell_at(position: f64) -> Kinematics {
    Kinematics {
        position,
        speed: 0.0,
        accel: 0.0,
        mode: MotionMode::Dwell,
    }
}

/// Position, speed, acceleration and motion mode at time `t` (s).
pub fn kinematics_at(profile: &RunningProfile, t: f64) -> Result<Kinematics, SimError> {
    profile.validate()?;
    kinematics_planned(profile, &profile.plan()?, t)
}

fn kinematics_planned(
    profile: &RunningProfile,
    plan: &[Segment],
    t: f64,
) -> Result<Kinematics, SimError> {
    if t < profile.departure_time {
        return Ok(dwell_at(profile.stops[0]));
    }
    let Some(seg) = plan
        .iter()
        .find(|s| t >= s.start && t < s.start + s.duration)
    else {
        return Ok(dwell_at(*profile.stops.last().expect("validated")));
    };
    if seg.dwell {
        return Ok(dwell_at(seg.x0));
    }
    let tau = t - seg.start;
    let speed = (seg.v0 + seg.accel * tau).max(0.0);
    let dist = seg.v0 * tau + 0.5 * seg.accel * tau * tau;
    let mode = if seg.accel > 0.0 {
        MotionMode::Traction
    } else if seg.accel < 0.0 {
        MotionMode::Brake
    } else {
        MotionMode::Cruise
    };
    Ok(Kinematics {
        position: seg.x0 + seg.dir * dist / M_PER_KM,
        speed,
        accel: seg.accel,
        mode,
    })
}

/// Electrical envelope from mechanical power `(m a + A + B v + C v^2) v`.
pub fn power_envelope_at(profile: &RunningProfile, t: f64) -> Result<TrainPowerState, SimError> {
    let k = kinematics_at(profile, t)?;
    Ok(envelope_from(profile, &k))
}

fn envelope_from(profile: &RunningProfile, k: &Kinematics) -> TrainPowerState {
    let [a, b, c] = profile.resistance_coeffs;
    let force = profile.mass * G_TONNE * k.accel + a + b * k.speed + c * k.speed * k.speed;
    let p_mech = force * k.speed / W_PER_MW;
    match k.mode {
        MotionMode::Traction if p_mech > 0.0 => {
            TrainPowerState::tractioning(p_mech / profile.traction_efficiency)
        }
        MotionMode::Brake if p_mech < 0.0 => {
            TrainPowerState::regenerating(profile.regen_efficiency * -p_mech)
        }
        _ => TrainPowerState::default(),
    }
}

/// Role a train takes in the network for a motion mode.
pub fn train_role(mode: MotionMode) -> NodeRole {
    match mode {
        MotionMode::Brake => NodeRole::Regenerating,
        _ => NodeRole::Tractioning,
    }
}

/// Sensor full-scale readings; noise is a fraction of these.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FullScale {
    /// V.
    pub voltage: f64,
    /// A.
    pub current: f64,
}

impl Default for FullScale {
    fn default() -> Self {
        Self {
            voltage: 900.0,
            current: 2500.0,
        }
    }
}

/// A fixed network held constant over the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub roles: Vec<NodeRole>,
    /// km, sorted.
    pub positions: Vec<f64>,
    pub power_states: Vec<TrainPowerState>,
}

/// Which nodes the attacker controls at each instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WritableSpec {
    AllTrains,
    RegeneratingTrains,
    AllNodes,
    /// Node indices of the instant's network.
    Nodes(Vec<usize>),
    /// Trains by name.
    Trains(Vec<String>),
}

fn default_dv() -> f64 {
    50.0
}

fn default_di() -> f64 {
    200.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub writable: WritableSpec,
    /// V.
    #[serde(default = "default_dv")]
    pub dv: f64,
    /// A.
    #[serde(default = "default_di")]
    pub di: f64,
    /// km.
    #[serde(default)]
    pub ds: f64,
    /// Active interval `[start, end)` in s; open-ended without `end`.
    #[serde(default)]
    pub start: f64,
    #[serde(default)]
    pub end: Option<f64>,
    /// Measurement-only attack at the estimator-consistent solution nearest
    /// to the true state, positions intact.
    #[serde(default)]
    pub discrete: bool,
}

impl AttackSpec {
    fn active_at(&self, t: f64) -> bool {
        t >= self.start && self.end.is_none_or(|e| t < e)
    }
}

fn default_line_length() -> f64 {
    10.0
}

fn default_horizon() -> f64 {
    800.0
}

fn default_timestep() -> f64 {
    1.0
}

fn default_noise() -> f64 {
    NOMINAL_NOISE
}

fn default_piv_tolerance() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub params: ElectricalParams,
    #[serde(default)]
    pub thresholds: ControlThresholds,
    /// km.
    #[serde(default = "default_line_length")]
    pub line_length: f64,
    #[serde(default)]
    pub substation_positions: Vec<f64>,
    #[serde(default)]
    pub station_positions: Vec<f64>,
    #[serde(default)]
    pub trains: Vec<RunningProfile>,
    /// Static network used instead of substations and trains.
    #[serde(default)]
    pub snapshot: Option<Snapshot>,
    /// s.
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// s.
    #[serde(default = "default_timestep")]
    pub timestep: f64,
    /// Per-channel noise standard deviation as a fraction of full scale.
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default)]
    pub full_scale: FullScale,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub attack: Option<AttackSpec>,
    #[serde(default)]
    pub detector: DetectorConfig,
    /// km.
    #[serde(default = "default_piv_tolerance")]
    pub piv_tolerance: f64,
    /// Switch to model-based operation once the windowed detector alarms.
    #[serde(default)]
    pub mitigation: bool,
}

/// Network at one instant. Node `k` belongs to entity `entity[k]`.
#[derive(Debug, Clone)]
pub struct Layout {
    pub topology: TpsTopology,
    pub power_states: Vec<TrainPowerState>,
    pub entity: Vec<usize>,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        self.params
            .validate()
            .map_err(|e| invalid("params", e.to_string()))?;
        self.thresholds
            .validate()
            .map_err(|e| invalid("thresholds", e.to_string()))?;
        self.detector
            .validate()
            .map_err(|e| invalid("detector", e.to_string()))?;
        if !(self.timestep > 0.0) || !self.timestep.is_finite() {
            return Err(invalid("timestep", "must be positive"));
        }
        if !(self.horizon >= 0.0) || !self.horizon.is_finite() {
            return Err(invalid("horizon", "must be finite and >= 0"));
        }
        let ratio = self.horizon / self.timestep;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(invalid(
                "horizon",
                "must be an integer multiple of timestep",
            ));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(invalid("noise", "must be finite and >= 0"));
        }
        if !(self.full_scale.voltage > 0.0 && self.full_scale.current > 0.0) {
            return Err(invalid("full_scale", "must be positive"));
        }
        if !(self.piv_tolerance >= 0.0) {
            return Err(invalid("piv_tolerance", "must be >= 0"));
        }
        match &self.snapshot {
            Some(snap) => {
                let n = snap.roles.len();
                if snap.positions.len() != n || snap.power_states.len() != n {
                    return Err(invalid(
                        "snapshot",
                        "roles, positions and power_states must have equal length",
                    ));
                }
                if !snap.roles.contains(&NodeRole::Substation) {
                    return Err(invalid("snapshot.roles", "need at least one substation"));
                }
                TpsTopology::chain(snap.roles.clone(), snap.positions.clone())
                    .map_err(|e| invalid("snapshot.positions", e.to_string()))?;
            }
            None => {
                if !(self.line_length > 0.0) {
                    return Err(invalid("line_length", "must be positive"));
                }
                if self.substation_positions.is_empty() {
                    return Err(invalid(
                        "substation_positions",
                        "need at least one substation",
                    ));
                }
                let within = |x: &f64| (0.0..=self.line_length).contains(x);
                if !self.substation_positions.iter().all(within) {
                    return Err(invalid("substation_positions", "outside the line"));
                }
                if !self.station_positions.iter().all(within) {
                    return Err(invalid("station_positions", "outside the line"));
                }
                let mut names: Vec<&str> = Vec::new();
                for tr in &self.trains {
                    tr.validate()?;
                    if !tr.stops.iter().all(within) {
                        return Err(invalid(
                            format!("trains.{}.stops", tr.name),
                            "outside the line",
                        ));
                    }
                    if names.contains(&tr.name.as_str()) {
                        return Err(invalid(
                            "trains",
                            format!("duplicate train name {}", tr.name),
                        ));
                    }
                    names.push(&tr.name);
                }
            }
        }
        if let Some(a) = &self.attack {
            a.kind
                .validate()
                .map_err(|e| invalid("attack.kind", e.to_string()))?;
            for (name, x) in [
                ("attack.dv", a.dv),
                ("attack.di", a.di),
                ("attack.ds", a.ds),
            ] {
                if !(x >= 0.0) || !x.is_finite() {
                    return Err(invalid(name, "must be finite and >= 0"));
                }
            }
            if let WritableSpec::Trains(names) = &a.writable {
                for n in names {
                    if !self.trains.iter().any(|t| &t.name == n) {
                        return Err(invalid("attack.writable", format!("unknown train {n}")));
                    }
                }
            }
            if let WritableSpec::Nodes(nodes) = &a.writable {
                if let Some(snap) = &self.snapshot {
                    if let Some(k) = nodes.iter().find(|&&k| k >= snap.roles.len()) {
                        return Err(invalid("attack.writable", format!("node {k} out of range")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Number of simulated instants, `t = 0, dt, ...`.
    pub fn instant_count(&self) -> usize {
        ((self.horizon / self.timestep).round() as usize).max(1)
    }

    pub fn entity_names(&self) -> Vec<String> {
        match &self.snapshot {
            Some(snap) => (1..=snap.roles.len()).map(|k| format!("node{k}")).collect(),
            None => (1..=self.substation_positions.len())
                .map(|k| format!("S{k}"))
                .chain(self.trains.iter().map(|t| t.name.clone()))
                .collect(),
        }
    }

    /// Noise standard deviations (V, A) used for injection.
    pub fn noise_sigmas(&self) -> (f64, f64) {
        (
            self.noise * self.full_scale.voltage,
            self.noise * self.full_scale.current,
        )
    }

    /// Standard deviations the estimator weights by; the nominal level
    /// stands in for a noiseless scenario.
    pub fn weight_sigmas(&self) -> (f64, f64) {
        let level = if self.noise > 0.0 {
            self.noise
        } else {
            NOMINAL_NOISE
        };
        (
            level * self.full_scale.voltage,
            level * self.full_scale.current,
        )
    }

    fn plans(&self) -> Result<Vec<Vec<Segment>>, SimError> {
        self.trains.iter().map(RunningProfile::plan).collect()
    }

    /// Network at time `t`: nodes sorted by position (substations first on
    /// ties), coincident nodes separated by the merge epsilon.
    pub fn layout_at(&self, t: f64) -> Result<Layout, SimError> {
        self.layout_planned(&self.plans()?, t)
    }

    fn layout_planned(&self, plans: &[Vec<Segment>], t: f64) -> Result<Layout, SimError> {
        if let Some(snap) = &self.snapshot {
            return Ok(Layout {
                topology: TpsTopology::chain(snap.roles.clone(), snap.positions.clone())?,
                power_states: snap.power_states.clone(),
                entity: (0..snap.roles.len()).collect(),
            });
        }
        let ns = self.substation_positions.len();
        let mut nodes: Vec<(f64, u8, usize, NodeRole, TrainPowerState)> = self
            .substation_positions
            .iter()
            .enumerate()
            .map(|(k, &s)| (s, 0, k, NodeRole::Substation, TrainPowerState::default()))
            .collect();
        for (j, (tr, plan)) in self.trains.iter().zip(plans).enumerate() {
            let k = kinematics_planned(tr, plan, t)?;
            nodes.push((
                k.position,
                1,
                ns + j,
                train_role(k.mode),
                envelope_from(tr, &k),
            ));
        }
        nodes.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut positions: Vec<f64> = nodes.iter().map(|n| n.0).collect();
        let gap = 1.5 * POSITION_MERGE_EPSILON_KM;
        for k in 1..positions.len() {
            if positions[k] < positions[k - 1] + gap {
                positions[k] = positions[k - 1] + gap;
            }
        }
        Ok(Layout {
            topology: TpsTopology::chain(nodes.iter().map(|n| n.3).collect(), positions)?,
            power_states: nodes.iter().map(|n| n.4).collect(),
            entity: nodes.iter().map(|n| n.2).collect(),
        })
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    fn measurement(&self, v: Vec<f64>, i: Vec<f64>, s: Vec<f64>) -> MeasurementSet {
        let (sv, si) = self.weight_sigmas();
        MeasurementSet::new(v, i, s, sv, si)
    }
}

fn writable_nodes(spec: &WritableSpec, layout: &Layout, names: &[String]) -> Vec<usize> {
    let topo = &layout.topology;
    match spec {
        WritableSpec::AllTrains => topo.trains().collect(),
        WritableSpec::RegeneratingTrains => topo
            .trains()
            .filter(|&k| topo.role(k) == NodeRole::Regenerating)
            .collect(),
        WritableSpec::AllNodes => (0..topo.len()).collect(),
        WritableSpec::Nodes(nodes) => nodes.iter().copied().filter(|&k| k < topo.len()).collect(),
        WritableSpec::Trains(trains) => (0..topo.len())
            .filter(|&k| topo.role(k).is_train() && trains.contains(&names[layout.entity[k]]))
            .collect(),
    }
}

/// Sum of power absorbed by substations (MW, nonnegative).
pub fn absorbed_power(topology: &TpsTopology, state: &SystemState) -> f64 {
    topology.substations().map(|k| (-state.p[k]).max(0.0)).sum()
}

fn breached(state: &SystemState, thresholds: &ControlThresholds) -> bool {
    state.v.iter().any(|&v| !thresholds.is_safe(v))
}

fn add_noise(values: &mut [f64], sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("positive sigma");
        for x in values {
            *x += normal.sample(rng);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub entity: String,
    pub role: NodeRole,
    /// km.
    pub position: f64,
    /// True state under attack (V, A, MW).
    pub v: f64,
    pub i: f64,
    pub p: f64,
    /// Honest voltage (V).
    pub v_honest: f64,
    /// Reported measurements.
    pub v_meas: f64,
    pub i_meas: f64,
    pub s_meas: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstantRecord {
    /// s.
    pub t: f64,
    /// Failure that caused the instant to be skipped.
    pub skipped: Option<String>,
    pub nodes: Vec<NodeRecord>,
    pub attack_active: bool,
    pub attack_launched: bool,
    /// At least one regenerating train is under attack.
    pub accounted: bool,
    pub mitigated: bool,
    /// MW.
    pub substation_power_honest: f64,
    pub substation_power: f64,
    pub absorbed_honest: f64,
    pub absorbed: f64,
    pub train_power: f64,
    pub branch_loss: f64,
    pub breach: bool,
    pub verdict: Option<DetectorVerdict>,
    /// Onset rule against the previous instant's honest voltages.
    pub sad_onset_practical: Option<bool>,
    /// Onset rule against the present honest voltages.
    pub sad_onset_oracle: Option<bool>,
}

impl InstantRecord {
    fn skipped(t: f64, reason: String) -> Self {
        Self {
            t,
            skipped: Some(reason),
            nodes: vec![],
            attack_active: false,
            attack_launched: false,
            accounted: false,
            mitigated: false,
            substation_power_honest: 0.0,
            substation_power: 0.0,
            absorbed_honest: 0.0,
            absorbed: 0.0,
            train_power: 0.0,
            branch_loss: 0.0,
            breach: false,
            verdict: None,
            sad_onset_practical: None,
            sad_onset_oracle: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub scenario: String,
    pub instants: usize,
    pub skipped: usize,
    /// Signed energies over the horizon (MWh, trapezoidal).
    pub substation_energy_honest_mwh: f64,
    pub substation_energy_mwh: f64,
    pub train_energy_mwh: f64,
    pub branch_loss_mwh: f64,
    /// Relative mismatch of substation plus train energy against losses.
    pub energy_balance_error: f64,
    /// Instants with at least one regenerating train under attack.
    pub accounted_instants: usize,
    /// Energy absorbed by substations over accounted instants (MWh).
    pub absorbed_energy_honest_mwh: f64,
    pub absorbed_energy_mwh: f64,
    /// Relative reduction of absorbed energy.
    pub efficiency_loss: f64,
    /// s.
    pub breach_seconds: f64,
    pub attacked_instants: usize,
    pub bdd_alarms: usize,
    pub piv_alarms: usize,
    pub sad_alarms: usize,
    pub gad_alarms: usize,
    pub gadw_alarms: usize,
    pub sad_onset_practical_rate: Option<f64>,
    pub sad_onset_oracle_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSeries {
    pub trials: usize,
    pub window: usize,
    pub t: Vec<f64>,
    /// Windowed false-positive rate per instant.
    pub fp: Vec<f64>,
    /// Windowed missed-detection rate per instant; `None` before the
    /// attack has lasted a full window.
    pub md: Vec<Option<f64>>,
    pub mean_fp: f64,
    pub mean_md: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub tau: f64,
    pub alpha: f64,
    /// Serialized detector.
    pub fp: f64,
    pub md: f64,
    /// Bad-data detector alone.
    pub fp_bdd: f64,
    pub md_bdd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub summary: MetricsSummary,
    pub entities: Vec<String>,
    pub instants: Vec<InstantRecord>,
    #[serde(default)]
    pub rates: Option<RateSeries>,
    #[serde(default)]
    pub roc: Vec<RocPoint>,
}

fn trapezoid(values: &[f64], dt: f64) -> f64 {
    if values.len() < 2 {
        return values.first().copied().unwrap_or(0.0) * dt;
    }
    values.windows(2).map(|w| 0.5 * (w[0] + w[1]) * dt).sum()
}

fn pf_config() -> PowerflowConfig {
    PowerflowConfig {
        max_iterations: 100,
        tolerance: 1e-9,
        damping: 0.5,
    }
}

/// Noiseless electrical outcome of one instant.
struct Outcome {
    state: SystemState,
    v: Vec<f64>,
    i: Vec<f64>,
    s: Vec<f64>,
    active: bool,
    launched: bool,
    accounted: bool,
    solutions: Option<StealthSolutionSet>,
}

fn attack_outcome(
    scenario: &Scenario,
    layout: &Layout,
    honest: &SystemState,
    names: &[String],
    t: f64,
) -> Result<Outcome, SimError> {
    let topo = &layout.topology;
    let mut out = Outcome {
        state: honest.clone(),
        v: honest.v.clone(),
        i: honest.i.clone(),
        s: topo.positions().to_vec(),
        active: false,
        launched: false,
        accounted: false,
        solutions: None,
    };
    let Some(spec) = scenario.attack.as_ref().filter(|a| a.active_at(t)) else {
        return Ok(out);
    };
    out.active = true;
    let writable = writable_nodes(&spec.writable, layout, names);
    out.accounted = writable
        .iter()
        .any(|&k| topo.role(k) == NodeRole::Regenerating);
    if spec.discrete {
        let powers: Vec<f64> = (0..topo.len())
            .map(|k| {
                if topo.role(k).is_train() {
                    honest.p[k]
                } else {
                    0.0
                }
            })
            .collect();
        let set = enumerate_stealthy_states(topo, &scenario.params, &powers)?;
        if let Some((v, i)) = discrete_stealthy_attack(
            topo,
            &scenario.params,
            honest,
            &set,
            scenario.detector.p_norm,
        )? {
            out.v = v;
            out.i = i;
            out.launched = true;
        }
        out.solutions = Some(set);
        return Ok(out);
    }
    if !out.accounted {
        return Ok(out);
    }
    let mut kind = spec.kind.clone();
    if kind.goal == AttackGoal::Safety && scenario.snapshot.is_none() {
        kind.unsafe_set = (0..topo.len()).collect();
    }
    let bounds = AttackBounds::uniform(topo, &writable, spec.dv, spec.di, spec.ds);
    let ctx = AttackContext {
        topology: topo,
        params: &scenario.params,
        thresholds: &scenario.thresholds,
        power_states: &layout.power_states,
        honest,
    };
    let config = AttackConfig {
        lock_tractioning: true,
        ..AttackConfig::default()
    };
    let av = synthesize(&ctx, &kind, &writable, &bounds, &config)?;
    if av.launched() {
        out.launched = true;
        out.state = av.induced_state;
        out.v = av.v_prime;
        out.i = av.i_prime;
        out.s = av.s_prime;
    }
    Ok(out)
}

fn mitigated_state(scenario: &Scenario, layout: &Layout) -> Result<SystemState, SimError> {
    let topo = &layout.topology;
    let plan = mitigation_plan(
        topo,
        &scenario.params,
        &scenario.thresholds,
        &layout.power_states,
    )?;
    let flow = PowerflowProblem::new(
        topo,
        &scenario.params,
        &scenario.thresholds,
        &layout.power_states,
    )?;
    let setpoints: Vec<Setpoint> = (0..topo.len())
        .map(|k| {
            if topo.role(k).is_train() {
                Setpoint::Fixed(plan[k])
            } else {
                Setpoint::Coupled
            }
        })
        .collect();
    Ok(flow.solve(&setpoints, None, &pf_config())?.state)
}

fn by_entity(layout: &Layout, values: &[f64], entities: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; entities];
    for (k, &e) in layout.entity.iter().enumerate() {
        out[e] = Some(values[k]);
    }
    out
}

fn from_entity(layout: &Layout, stored: &[Option<f64>], fallback: &[f64]) -> Vec<f64> {
    layout
        .entity
        .iter()
        .enumerate()
        .map(|(k, &e)| stored[e].unwrap_or(fallback[k]))
        .collect()
}

struct Timeline<'a> {
    scenario: &'a Scenario,
    plans: Vec<Vec<Segment>>,
    names: Vec<String>,
    rng: ChaCha8Rng,
    window: GadWindow,
    v_previous: Vec<Option<f64>>,
    honest_previous: Vec<Option<f64>>,
    mitigating: bool,
}

impl Timeline<'_> {
    fn step(&mut self, t: f64) -> Result<InstantRecord, SimError> {
        let sc = self.scenario;
        let layout = sc.layout_planned(&self.plans, t)?;
        let topo = &layout.topology;
        let n = topo.len();
        let honest = solve_steady_state(
            topo,
            &sc.params,
            &sc.thresholds,
            &layout.power_states,
            &pf_config(),
        )?;
        let mut out = attack_outcome(sc, &layout, &honest, &self.names, t)?;
        let mut mitigated = false;
        if self.mitigating && out.launched {
            out.state = mitigated_state(sc, &layout)?;
            mitigated = true;
        }

        let (sv, si) = sc.noise_sigmas();
        let mut v_meas = out.v.clone();
        let mut i_meas = out.i.clone();
        add_noise(&mut v_meas, sv, &mut self.rng);
        add_noise(&mut i_meas, si, &mut self.rng);
        let meas = sc.measurement(v_meas, i_meas, out.s.clone());

        let v_prev = from_entity(&layout, &self.v_previous, &honest.v);
        let (mut verdict, _) = detect_frame(
            &meas,
            topo,
            &sc.params,
            topo.positions(),
            sc.piv_tolerance,
            &v_prev,
            &sc.detector,
            &[],
        )?;
        verdict.gadw_alarm = self.window.push(verdict.gad_alarm);
        // after an alarm the reference falls back to the model-based voltages
        let reference = if verdict.gad_alarm {
            &honest.v
        } else {
            &verdict.estimate
        };
        self.v_previous = by_entity(&layout, reference, self.names.len());
        if sc.mitigation && verdict.gadw_alarm && out.active {
            self.mitigating = true;
        }

        let (mut onset_practical, mut onset_oracle) = (None, None);
        if let (Some(set), true) = (&out.solutions, out.launched) {
            let prior = from_entity(&layout, &self.honest_previous, &honest.v);
            let p = sc.detector.p_norm;
            let practical =
                sad_decide(&set.solutions, p_distance(&meas.v, &prior, p), &sc.detector);
            let oracle = sad_decide(
                &set.solutions,
                p_distance(&meas.v, &honest.v, p),
                &sc.detector,
            );
            onset_practical = Some(practical.alarm);
            onset_oracle = Some(oracle.alarm);
        }
        self.honest_previous = by_entity(&layout, &honest.v, self.names.len());

        let state = &out.state;
        let nodes = (0..n)
            .map(|k| NodeRecord {
                entity: self.names[layout.entity[k]].clone(),
                role: topo.role(k),
                position: topo.positions()[k],
                v: state.v[k],
                i: state.i[k],
                p: state.p[k],
                v_honest: honest.v[k],
                v_meas: meas.v[k],
                i_meas: meas.i[k],
                s_meas: meas.s[k],
            })
            .collect();
        Ok(InstantRecord {
            t,
            skipped: None,
            nodes,
            attack_active: out.active,
            attack_launched: out.launched,
            accounted: out.accounted,
            mitigated,
            substation_power_honest: honest.substation_power(topo),
            substation_power: state.substation_power(topo),
            absorbed_honest: absorbed_power(topo, &honest),
            absorbed: absorbed_power(topo, state),
            train_power: topo.trains().map(|k| state.p[k]).sum(),
            branch_loss: state.branch_loss(topo, &sc.params)?,
            breach: breached(state, &sc.thresholds),
            verdict: Some(verdict),
            sad_onset_practical: onset_practical,
            sad_onset_oracle: onset_oracle,
        })
    }
}

/// Runs the scenario instant by instant.
pub fn run_timeline(scenario: &Scenario) -> Result<MetricsReport, SimError> {
    scenario.validate()?;
    let names = scenario.entity_names();
    let mut tl = Timeline {
        scenario,
        plans: scenario.plans()?,
        rng: scenario.rng(0),
        window: GadWindow::new(scenario.detector.window),
        v_previous: vec![None; names.len()],
        honest_previous: vec![None; names.len()],
        mitigating: false,
        names,
    };
    let count = scenario.instant_count();
    let mut records = Vec::with_capacity(count);
    for step in 0..count {
        let t = step as f64 * scenario.timestep;
        let record = tl
            .step(t)
            .unwrap_or_else(|e| InstantRecord::skipped(t, e.to_string()));
        records.push(record);
    }
    let skipped: Vec<(usize, &InstantRecord)> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.skipped.is_some())
        .collect();
    if !skipped.is_empty() && skipped.len() as f64 > MAX_SKIPPED_FRACTION * count as f64 {
        let (idx, first) = skipped[0];
        return Err(SimError::TooManySkipped {
            skipped: skipped.len(),
            total: count,
            first_index: idx,
            first_t: first.t,
            reason: first.skipped.clone().unwrap_or_default(),
        });
    }
    let summary = summarize(scenario, &records);
    Ok(MetricsReport {
        summary,
        entities: tl.names,
        instants: records,
        rates: None,
        roc: vec![],
    })
}

fn summarize(scenario: &Scenario, records: &[InstantRecord]) -> MetricsSummary {
    let dt = scenario.timestep;
    let ok: Vec<&InstantRecord> = records.iter().filter(|r| r.skipped.is_none()).collect();
    let series = |f: fn(&InstantRecord) -> f64| -> f64 {
        trapezoid(&ok.iter().map(|r| f(r)).collect::<Vec<_>>(), dt) / S_PER_H
    };
    let sub_h = series(|r| r.substation_power_honest);
    let sub = series(|r| r.substation_power);
    let train = series(|r| r.train_power);
    let loss = series(|r| r.branch_loss);
    let scale = sub.abs().max(train.abs()).max(loss.abs());
    let balance = if scale > 0.0 {
        (sub + train - loss).abs() / scale
    } else {
        0.0
    };
    let accounted: Vec<&&InstantRecord> = ok.iter().filter(|r| r.accounted).collect();
    let abs_h: f64 = accounted.iter().map(|r| r.absorbed_honest).sum::<f64>() * dt / S_PER_H;
    let abs_a: f64 = accounted.iter().map(|r| r.absorbed).sum::<f64>() * dt / S_PER_H;
    let efficiency_loss = if abs_h > 0.0 {
        (abs_h - abs_a) / abs_h
    } else {
        0.0
    };
    let count = |f: fn(&DetectorVerdict) -> bool| {
        ok.iter()
            .filter(|r| r.verdict.as_ref().is_some_and(f))
            .count()
    };
    let rate = |f: fn(&InstantRecord) -> Option<bool>| {
        let flags: Vec<bool> = ok.iter().filter_map(|r| f(r)).collect();
        (!flags.is_empty())
            .then(|| flags.iter().filter(|&&b| b).count() as f64 / flags.len() as f64)
    };
    MetricsSummary {
        scenario: scenario.name.clone(),
        instants: records.len(),
        skipped: records.len() - ok.len(),
        substation_energy_honest_mwh: sub_h,
        substation_energy_mwh: sub,
        train_energy_mwh: train,
        branch_loss_mwh: loss,
        energy_balance_error: balance,
        accounted_instants: accounted.len(),
        absorbed_energy_honest_mwh: abs_h,
        absorbed_energy_mwh: abs_a,
        efficiency_loss,
        breach_seconds: ok.iter().filter(|r| r.breach).count() as f64 * dt,
        attacked_instants: ok.iter().filter(|r| r.attack_launched).count(),
        bdd_alarms: count(|v| v.bdd_alarm),
        piv_alarms: count(|v| v.piv_alarm),
        sad_alarms: count(|v| v.sad_alarm),
        gad_alarms: count(|v| v.gad_alarm),
        gadw_alarms: count(|v| v.gadw_alarm),
        sad_onset_practical_rate: rate(|r| r.sad_onset_practical),
        sad_onset_oracle_rate: rate(|r| r.sad_onset_oracle),
    }
}

/// Attack used by the detection-rate experiments. Both leave the physical
/// network untouched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionAttack {
    /// Bias (V) on the voltage reading of the first train.
    RandomAdditive { dv: f64 },
    /// Estimator-consistent solution nearest to the true state, positions
    /// intact.
    Stealthy,
}

impl Default for DetectionAttack {
    fn default() -> Self {
        DetectionAttack::RandomAdditive { dv: 20.0 }
    }
}

/// Noiseless honest and attacked frames at one instant.
struct CleanFrame {
    t: f64,
    topology: TpsTopology,
    entity: Vec<usize>,
    honest: SystemState,
    honest_set: StealthSolutionSet,
    /// `None` when the attack cannot be formed at this instant.
    attacked: Option<(Vec<f64>, Vec<f64>, StealthSolutionSet)>,
}

fn train_powers(topology: &TpsTopology, v: &[f64], i: &[f64]) -> Vec<f64> {
    (0..topology.len())
        .map(|k| {
            if topology.role(k).is_train() {
                v[k] * i[k] / W_PER_MW
            } else {
                0.0
            }
        })
        .collect()
}

fn clean_frames(scenario: &Scenario, attack: DetectionAttack) -> Result<Vec<CleanFrame>, SimError> {
    scenario.validate()?;
    let plans = scenario.plans()?;
    let window = scenario.attack.as_ref();
    let mut frames = Vec::new();
    for step in 0..scenario.instant_count() {
        let t = step as f64 * scenario.timestep;
        let layout = scenario.layout_planned(&plans, t)?;
        let topo = layout.topology;
        let honest = solve_steady_state(
            &topo,
            &scenario.params,
            &scenario.thresholds,
            &layout.power_states,
            &pf_config(),
        )?;
        let powers = train_powers(&topo, &honest.v, &honest.i);
        let honest_set = enumerate_stealthy_states(&topo, &scenario.params, &powers)?;
        let active = window.is_none_or(|a| a.active_at(t));
        let attacked = if !active {
            None
        } else {
            match attack {
                DetectionAttack::RandomAdditive { dv } => {
                    let target = first_train(scenario, &topo, &layout.entity);
                    match target {
                        Some(k) => {
                            let mut v = honest.v.clone();
                            v[k] += dv;
                            let p = train_powers(&topo, &v, &honest.i);
                            let set = enumerate_stealthy_states(&topo, &scenario.params, &p)?;
                            Some((v, honest.i.clone(), set))
                        }
                        None => None,
                    }
                }
                DetectionAttack::Stealthy => discrete_stealthy_attack(
                    &topo,
                    &scenario.params,
                    &honest,
                    &honest_set,
                    scenario.detector.p_norm,
                )?
                .map(|(v, i)| (v, i, honest_set.clone())),
            }
        };
        frames.push(CleanFrame {
            t,
            topology: topo,
            entity: layout.entity,
            honest,
            honest_set,
            attacked,
        });
    }
    Ok(frames)
}

fn first_train(scenario: &Scenario, topo: &TpsTopology, entity: &[usize]) -> Option<usize> {
    if scenario.snapshot.is_some() {
        return topo.trains().next();
    }
    let ns = scenario.substation_positions.len();
    (!scenario.trains.is_empty())
        .then(|| entity.iter().position(|&e| e == ns))
        .flatten()
}

/// Serialized detector on one noisy frame; returns `(gad, estimate)`.
fn gad_on_frame(
    scenario: &Scenario,
    topo: &TpsTopology,
    meas: &MeasurementSet,
    v_previous: &[f64],
    warm: &[Vec<f64>],
) -> Result<(bool, Vec<f64>), SimError> {
    let bdd = bdd_evaluate(meas, topo, &scenario.params, &scenario.detector)?;
    if bdd.alarm {
        return Ok((true, bdd.estimate));
    }
    let powers = train_powers(topo, &meas.v, &meas.i);
    let set = enumerate_stealthy_states_seeded(topo, &scenario.params, &powers, warm)?;
    let distance = p_distance(&meas.v, v_previous, scenario.detector.p_norm);
    let sad = sad_decide(&set.solutions, distance, &scenario.detector);
    Ok((sad.alarm, bdd.estimate))
}

struct Stream {
    window: GadWindow,
    v_previous: Vec<Option<f64>>,
}

impl Stream {
    fn new(window: usize, entities: usize) -> Self {
        Self {
            window: GadWindow::new(window),
            v_previous: vec![None; entities],
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        scenario: &Scenario,
        frame: &CleanFrame,
        v: &[f64],
        i: &[f64],
        warm: &[Vec<f64>],
        rng: &mut ChaCha8Rng,
        entities: usize,
    ) -> Result<bool, SimError> {
        let (sv, si) = scenario.noise_sigmas();
        let mut vm = v.to_vec();
        let mut im = i.to_vec();
        add_noise(&mut vm, sv, rng);
        add_noise(&mut im, si, rng);
        let meas = scenario.measurement(vm, im, frame.topology.positions().to_vec());
        let layout_entity = Layout {
            topology: frame.topology.clone(),
            power_states: vec![],
            entity: frame.entity.clone(),
        };
        let v_prev = from_entity(&layout_entity, &self.v_previous, &frame.honest.v);
        let (gad, estimate) = gad_on_frame(scenario, &frame.topology, &meas, &v_prev, warm)?;
        let reference = if gad { &frame.honest.v } else { &estimate };
        self.v_previous = by_entity(&layout_entity, reference, entities);
        Ok(self.window.push(gad))
    }
}

/// Per-instant windowed false-positive and missed-detection rates over
/// independent noise realizations.
pub fn monte_carlo_rates(
    scenario: &Scenario,
    trials: usize,
    attack: DetectionAttack,
) -> Result<RateSeries, SimError> {
    if trials == 0 {
        return Err(invalid("trials", "must be >= 1"));
    }
    let frames = clean_frames(scenario, attack)?;
    let entities = scenario.entity_names().len();
    let window = scenario.detector.window;
    let steps = frames.len();
    let mut fp_count = vec![0usize; steps];
    let mut md_count = vec![0usize; steps];
    let mut md_total = vec![0usize; steps];
    for trial in 0..trials as u64 {
        let mut rng_h = scenario.rng(2 * trial + 1);
        let mut rng_a = scenario.rng(2 * trial + 2);
        let mut honest = Stream::new(window, entities);
        let mut attacked = Stream::new(window, entities);
        let mut run = 0usize;
        for (k, f) in frames.iter().enumerate() {
            let warm = &f.honest_set.solutions;
            if honest.push(
                scenario,
                f,
                &f.honest.v,
                &f.honest.i,
                warm,
                &mut rng_h,
                entities,
            )? {
                fp_count[k] += 1;
            }
            match &f.attacked {
                Some((v, i, set)) => {
                    run += 1;
                    let alarm =
                        attacked.push(scenario, f, v, i, &set.solutions, &mut rng_a, entities)?;
                    if run >= window {
                        md_total[k] += 1;
                        if !alarm {
                            md_count[k] += 1;
                        }
                    }
                }
                None => {
                    run = 0;
                    attacked.push(
                        scenario,
                        f,
                        &f.honest.v,
                        &f.honest.i,
                        warm,
                        &mut rng_a,
                        entities,
                    )?;
                }
            }
        }
    }
    let fp: Vec<f64> = fp_count.iter().map(|&c| c as f64 / trials as f64).collect();
    let md: Vec<Option<f64>> = md_count
        .iter()
        .zip(&md_total)
        .map(|(&c, &n)| (n > 0).then(|| c as f64 / n as f64))
        .collect();
    let defined: Vec<f64> = md.iter().flatten().copied().collect();
    Ok(RateSeries {
        trials,
        window,
        t: frames.iter().map(|f| f.t).collect(),
        mean_fp: fp.iter().sum::<f64>() / steps as f64,
        mean_md: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
        fp,
        md,
    })
}

/// Detector statistics of one noisy frame.
struct Sample {
    residual: f64,
    count: usize,
    min_pair: f64,
    distance: f64,
}

impl Sample {
    fn bdd(&self, tau: f64) -> bool {
        self.residual > tau
    }

    fn gad(&self, tau: f64, alpha: f64) -> bool {
        self.bdd(tau)
            || sad_threshold(self.count, self.min_pair, alpha)
                .is_some_and(|j| sad_exceeds(self.distance, j))
    }
}

fn sample(
    scenario: &Scenario,
    frame: &CleanFrame,
    v: &[f64],
    i: &[f64],
    v_reference: &[f64],
    warm: &[Vec<f64>],
    rng: &mut ChaCha8Rng,
) -> Result<Sample, SimError> {
    let (sv, si) = scenario.noise_sigmas();
    let mut vm = v.to_vec();
    let mut im = i.to_vec();
    add_noise(&mut vm, sv, rng);
    add_noise(&mut im, si, rng);
    let meas = scenario.measurement(vm, im, frame.topology.positions().to_vec());
    let bdd = bdd_evaluate(&meas, &frame.topology, &scenario.params, &scenario.detector)?;
    let powers = train_powers(&frame.topology, &meas.v, &meas.i);
    let set = enumerate_stealthy_states_seeded(&frame.topology, &scenario.params, &powers, warm)?;
    Ok(Sample {
        residual: bdd.residual,
        count: set.solutions.len(),
        min_pair: min_pairwise_distance(&set.solutions, scenario.detector.p_norm).unwrap_or(0.0),
        distance: p_distance(&meas.v, v_reference, scenario.detector.p_norm),
    })
}

/// False-positive and missed-detection rates of the serialized detector
/// (window 1) and of the bad-data detector alone over a grid of thresholds.
/// The previous-voltage reference is the honest state of the preceding
/// instant (of the same instant for a static snapshot).
pub fn roc_sweep(
    scenario: &Scenario,
    tau_grid: &[f64],
    alpha_grid: &[f64],
    attack: DetectionAttack,
    trials: usize,
) -> Result<Vec<RocPoint>, SimError> {
    if tau_grid.is_empty() || alpha_grid.is_empty() {
        return Err(invalid("grid", "threshold grids must be nonempty"));
    }
    if trials == 0 {
        return Err(invalid("trials", "must be >= 1"));
    }
    if tau_grid.iter().any(|t| !(*t > 0.0)) {
        return Err(invalid("tau_grid", "thresholds must be positive"));
    }
    if alpha_grid.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(invalid("alpha_grid", "alpha must lie in [0, 1]"));
    }
    let frames = clean_frames(scenario, attack)?;
    let entities = scenario.entity_names().len();
    let mut honest_samples = Vec::new();
    let mut attacked_samples = Vec::new();
    for trial in 0..trials as u64 {
        let mut rng = scenario.rng(2 * trial + 1);
        let mut previous: Vec<Option<f64>> = vec![None; entities];
        for f in &frames {
            let layout = Layout {
                topology: f.topology.clone(),
                power_states: vec![],
                entity: f.entity.clone(),
            };
            let reference = if scenario.snapshot.is_some() {
                f.honest.v.clone()
            } else {
                from_entity(&layout, &previous, &f.honest.v)
            };
            let warm = &f.honest_set.solutions;
            honest_samples.push(sample(
                scenario,
                f,
                &f.honest.v,
                &f.honest.i,
                &reference,
                warm,
                &mut rng,
            )?);
            if let Some((v, i, set)) = &f.attacked {
                attacked_samples.push(sample(
                    scenario,
                    f,
                    v,
                    i,
                    &reference,
                    &set.solutions,
                    &mut rng,
                )?);
            }
            previous = by_entity(&layout, &f.honest.v, entities);
        }
    }
    let rate = |samples: &[Sample], f: &dyn Fn(&Sample) -> bool| {
        if samples.is_empty() {
            0.0
        } else {
            samples.iter().filter(|s| f(s)).count() as f64 / samples.len() as f64
        }
    };
    let mut points = Vec::new();
    for &tau in tau_grid {
        for &alpha in alpha_grid {
            points.push(RocPoint {
                tau,
                alpha,
                fp: rate(&honest_samples, &|s| s.gad(tau, alpha)),
                md: 1.0 - rate(&attacked_samples, &|s| s.gad(tau, alpha)),
                fp_bdd: rate(&honest_samples, &|s| s.bdd(tau)),
                md_bdd: 1.0 - rate(&attacked_samples, &|s| s.bdd(tau)),
            });
        }
    }
    Ok(points)
}
