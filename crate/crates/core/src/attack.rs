//! False-data-injection attack synthesis.
//!
//! An attack picks, for every compromised train, the voltage reading `V'`
//! its controller sees; the reading fixes the train's power through the
//! control law, and the physical network settles at a new true operating
//! point. Each combination of control-law pieces for the compromised trains
//! is a smooth subproblem; all `3^|Na|` of them are solved by multistart SQP
//! and the best feasible result is kept.
//!
//! Stealthy attacks additionally report a full measurement vector that is
//! consistent with `Y(s') v' = i'` and the substation model, so that the
//! state-estimation residual vanishes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    build_conductance_matrix, control_power, piece_at, piece_power, piece_voltage_interval,
    ControlPiece, ControlThresholds, ElectricalParams, ModelError, NodeRole, SystemState,
    TpsTopology, TrainPowerState, POSITION_MERGE_EPSILON_KM, W_PER_MW,
};
use crate::optim::{self, Evaluation, Problem, SqpConfig};
use crate::powerflow::{
    FeedbackOverride, Perceived, PowerflowConfig, PowerflowError, PowerflowProblem, Setpoint,
};

/// Maximum undetected perturbation per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackBounds {
    /// Voltage (V).
    pub dv: Vec<f64>,
    /// Current (A).
    pub di: Vec<f64>,
    /// Position (km).
    pub ds: Vec<f64>,
}

impl AttackBounds {
    /// Same bounds on every writable node; position bounds only on trains.
    pub fn uniform(topology: &TpsTopology, writable: &[usize], dv: f64, di: f64, ds: f64) -> Self {
        let n = topology.len();
        let mut b = Self {
            dv: vec![0.0; n],
            di: vec![0.0; n],
            ds: vec![0.0; n],
        };
        for &k in writable {
            if k < n {
                b.dv[k] = dv;
                b.di[k] = di;
                if topology.role(k).is_train() {
                    b.ds[k] = ds;
                }
            }
        }
        b
    }

    pub fn validate(&self, nodes: usize) -> Result<(), AttackError> {
        for (what, v) in [("dv", &self.dv), ("di", &self.di), ("ds", &self.ds)] {
            if v.len() != nodes {
                return Err(AttackError::InvalidBounds(format!(
                    "{what} has {} entries, expected {nodes}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
                return Err(AttackError::InvalidBounds(format!(
                    "{what} must be finite and nonnegative"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackGoal {
    Efficiency,
    Safety,
    SuboptimalAdditive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackKind {
    pub goal: AttackGoal,
    #[serde(default)]
    pub stealthy: bool,
    /// Nodes whose voltage the safety attack tries to push out of range.
    #[serde(default)]
    pub unsafe_set: Vec<usize>,
    /// Bias (V) added to true voltages by the suboptimal attack.
    #[serde(default)]
    pub additive_dv: f64,
}

impl AttackKind {
    pub fn efficiency(stealthy: bool) -> Self {
        Self {
            goal: AttackGoal::Efficiency,
            stealthy,
            unsafe_set: vec![],
            additive_dv: 0.0,
        }
    }

    pub fn safety(stealthy: bool, unsafe_set: Vec<usize>) -> Self {
        Self {
            goal: AttackGoal::Safety,
            stealthy,
            unsafe_set,
            additive_dv: 0.0,
        }
    }

    pub fn suboptimal(additive_dv: f64) -> Self {
        Self {
            goal: AttackGoal::SuboptimalAdditive,
            stealthy: false,
            unsafe_set: vec![],
            additive_dv,
        }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if (self.goal == AttackGoal::Safety) != !self.unsafe_set.is_empty() {
            return Err(AttackError::InvalidKind(
                "unsafe_set must be nonempty exactly for the safety goal".into(),
            ));
        }
        if self.goal == AttackGoal::SuboptimalAdditive && self.stealthy {
            return Err(AttackError::InvalidKind(
                "the additive attack has no stealthy variant".into(),
            ));
        }
        if !self.additive_dv.is_finite() {
            return Err(AttackError::InvalidKind(
                "additive_dv must be finite".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone)]
pub enum AttackError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Powerflow(#[from] PowerflowError),
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("invalid attack kind: {0}")]
    InvalidKind(String),
    #[error("node {0} is not a train")]
    NotATrain(usize),
    #[error("node {0} out of range")]
    NodeOutOfRange(usize),
    #[error("target power {target} MW outside feasible interval [{lo}, {hi}] at node {node}")]
    InfeasibleTarget {
        node: usize,
        target: f64,
        lo: f64,
        hi: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackStatus {
    /// A feasible attack that changes the operating point.
    Launched,
    /// Nothing writable, every subproblem infeasible, or no improvement.
    NoAttack,
}

/// Result of attack synthesis. Measurement vectors cover every node; entries
/// outside the writable set equal the true values under attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackVector {
    pub kind: AttackKind,
    pub status: AttackStatus,
    pub writable_set: Vec<usize>,
    pub v_prime: Vec<f64>,
    pub i_prime: Vec<f64>,
    pub s_prime: Vec<f64>,
    /// Power (MW) each train is driven to; zero at substations.
    pub induced_power: Vec<f64>,
    /// Control-law piece of each compromised train.
    pub pieces: Vec<Option<ControlPiece>>,
    /// True operating point reached under the attack.
    pub induced_state: SystemState,
    /// Goal value (MW) under attack and without it.
    pub objective_value: f64,
    pub honest_objective: f64,
    /// Safety goal: some unsafe-set voltage left `[v_min, v_max]`.
    pub breach: bool,
}

impl AttackVector {
    pub fn launched(&self) -> bool {
        self.status == AttackStatus::Launched
    }

    /// Fractional reduction of the energy absorbed by substations.
    pub fn efficiency_loss(&self, topology: &TpsTopology, honest: &SystemState) -> f64 {
        efficiency_loss(
            honest.substation_power(topology),
            self.induced_state.substation_power(topology),
        )
    }

    /// Check every constraint by direct substitution. Returns the list of
    /// violated conditions.
    pub fn audit(
        &self,
        topology: &TpsTopology,
        params: &ElectricalParams,
        thresholds: &ControlThresholds,
        power_states: &[TrainPowerState],
        bounds: &AttackBounds,
        tolerance: f64,
    ) -> Vec<String> {
        let mut bad = Vec::new();
        let st = &self.induced_state;
        for &k in &self.writable_set {
            let role = topology.role(k);
            let dvk = (self.v_prime[k] - st.v[k]).abs();
            if dvk > bounds.dv[k] + tolerance {
                bad.push(format!("node {k}: |dv| = {dvk} exceeds {}", bounds.dv[k]));
            }
            let dik = (self.i_prime[k] - st.i[k]).abs();
            if dik > bounds.di[k] + tolerance {
                bad.push(format!("node {k}: |di| = {dik} exceeds {}", bounds.di[k]));
            }
            let dsk = (self.s_prime[k] - topology.positions()[k]).abs();
            if dsk > bounds.ds[k] + tolerance {
                bad.push(format!("node {k}: |ds| = {dsk} exceeds {}", bounds.ds[k]));
            }
            if !role.is_train() {
                continue;
            }
            let p = self.induced_power[k];
            let (lo, hi) = power_interval(role, &power_states[k]);
            if p < lo - tolerance || p > hi + tolerance {
                bad.push(format!("node {k}: power {p} outside [{lo}, {hi}]"));
            }
            let commanded = control_power(role, self.v_prime[k], &power_states[k], thresholds);
            if (commanded - p).abs() > tolerance {
                bad.push(format!(
                    "node {k}: control law gives {commanded}, induced {p}"
                ));
            }
            let vi = self.v_prime[k] * self.i_prime[k] / W_PER_MW;
            if (vi - p).abs() > tolerance {
                bad.push(format!("node {k}: v'i' = {vi} differs from {p}"));
            }
            if (st.p[k] - p).abs() > tolerance {
                bad.push(format!("node {k}: true power {} differs from {p}", st.p[k]));
            }
        }
        if self.kind.stealthy && self.launched() {
            match topology
                .with_positions(self.s_prime.clone())
                .and_then(|t| build_conductance_matrix(&t, params))
            {
                Ok(y) => {
                    let v = DVector::from_column_slice(&self.v_prime);
                    let i = &y * v;
                    for k in 0..topology.len() {
                        let scale = self.i_prime[k].abs().max(1.0);
                        if (i[k] - self.i_prime[k]).abs() > tolerance * scale {
                            bad.push(format!("node {k}: Y(s')v' differs from i'"));
                        }
                        if topology.role(k) == NodeRole::Substation {
                            let r = crate::model::substation_residual(
                                self.v_prime[k],
                                self.i_prime[k],
                                params,
                            );
                            if r.abs() > tolerance * 1e3 {
                                bad.push(format!("node {k}: substation residual {r} V"));
                            }
                        }
                    }
                }
                Err(e) => bad.push(format!("compromised positions invalid: {e}")),
            }
        }
        bad
    }
}

/// `(absorbed_honest - absorbed_attack) / absorbed_honest` from substation
/// powers (MW, negative when absorbing). Zero when nothing is absorbed.
pub fn efficiency_loss(honest_substation_mw: f64, attacked_substation_mw: f64) -> f64 {
    let absorbed = -honest_substation_mw;
    if absorbed <= 0.0 {
        return 0.0;
    }
    (absorbed - (-attacked_substation_mw)) / absorbed
}

/// Feasible power interval (MW) of a train.
pub fn power_interval(role: NodeRole, ps: &TrainPowerState) -> (f64, f64) {
    match role {
        NodeRole::Tractioning => (ps.demand.min(0.0), 0.0),
        NodeRole::Regenerating => (0.0, ps.regen_capacity.max(0.0)),
        NodeRole::Substation => (0.0, 0.0),
    }
}

/// Reading `(v', i')` that makes a train command `target_p` (MW) with
/// `v' i' = target_p`. On saturated pieces the boundary voltage is used.
pub fn craft_measurements_for_power(
    node: usize,
    target_p: f64,
    topology: &TpsTopology,
    thresholds: &ControlThresholds,
    power_state: &TrainPowerState,
) -> Result<(f64, f64), AttackError> {
    if node >= topology.len() {
        return Err(AttackError::NodeOutOfRange(node));
    }
    let role = topology.role(node);
    if !role.is_train() {
        return Err(AttackError::NotATrain(node));
    }
    let (lo, hi) = power_interval(role, power_state);
    let tol = 1e-12 * (hi - lo).abs().max(1.0);
    if !(target_p >= lo - tol && target_p <= hi + tol) {
        return Err(AttackError::InfeasibleTarget {
            node,
            target: target_p,
            lo,
            hi,
        });
    }
    let th = thresholds;
    let v = match role {
        NodeRole::Regenerating => {
            let pc = power_state.regen_capacity;
            if target_p <= 0.0 {
                th.v_max
            } else if target_p >= pc {
                th.v_max_trigger
            } else {
                th.v_max - target_p * (th.v_max - th.v_max_trigger) / pc
            }
        }
        _ => {
            let pd = power_state.demand;
            if target_p >= 0.0 {
                th.v_min
            } else if target_p <= pd {
                th.v_min_trigger
            } else {
                th.v_min + target_p * (th.v_min_trigger - th.v_min) / pd
            }
        }
    };
    Ok((v, target_p * W_PER_MW / v))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    pub multistarts: usize,
    pub sqp: SqpConfig,
    /// Power flow used inside the optimization; needs a tight tolerance for
    /// finite differences.
    pub powerflow: PowerflowConfig,
    /// Constraint violation (scaled units) accepted for a feasible result.
    pub feasibility_tolerance: f64,
    /// Improvement (MW) below which the result counts as no attack.
    pub no_op_tolerance: f64,
    /// Minimum gap (km) the attacker keeps between compromised positions.
    pub position_gap: f64,
    /// Keep compromised tractioning trains on their honest control piece.
    pub lock_tractioning: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            multistarts: 8,
            sqp: SqpConfig {
                max_iterations: 150,
                ..SqpConfig::default()
            },
            powerflow: PowerflowConfig {
                max_iterations: 60,
                tolerance: 1e-10,
                damping: 0.5,
            },
            feasibility_tolerance: 1e-6,
            no_op_tolerance: 1e-6,
            position_gap: POSITION_MERGE_EPSILON_KM,
            lock_tractioning: false,
        }
    }
}

/// Everything an attack search needs about the network.
#[derive(Debug, Clone, Copy)]
pub struct AttackContext<'a> {
    pub topology: &'a TpsTopology,
    pub params: &'a ElectricalParams,
    pub thresholds: &'a ControlThresholds,
    pub power_states: &'a [TrainPowerState],
    /// Honest operating point.
    pub honest: &'a SystemState,
}

impl AttackContext<'_> {
    fn objective(&self, goal: AttackGoal, st: &SystemState) -> f64 {
        match goal {
            AttackGoal::Safety => st.regenerated_power(self.topology),
            _ => st.substation_power(self.topology),
        }
    }
}

const V_SCALE: f64 = 100.0;
const I_SCALE: f64 = 1000.0;

/// One divide-and-conquer subproblem.
struct Subproblem<'a> {
    ctx: AttackContext<'a>,
    flow: PowerflowProblem<'a>,
    goal: AttackGoal,
    stealthy: bool,
    bounds: &'a AttackBounds,
    cfg: AttackConfig,
    /// Compromised trains and their pieces.
    attacked: Vec<(usize, ControlPiece)>,
    /// Trains whose reported position is a decision variable.
    movable: Vec<usize>,
    writable: Vec<bool>,
    /// Honest pieces of the other trains.
    pinned: Vec<(usize, ControlPiece)>,
}

struct Decoded {
    state: SystemState,
    v_prime: Vec<f64>,
    i_prime: Vec<f64>,
    s_prime: Vec<f64>,
    power: Vec<f64>,
}

impl Subproblem<'_> {
    fn setpoints(&self, v_prime: &[f64]) -> (Vec<Setpoint>, Vec<f64>) {
        let topo = self.ctx.topology;
        let mut sp = vec![Setpoint::Coupled; topo.len()];
        let mut power = vec![0.0; topo.len()];
        for &(k, piece) in &self.pinned {
            sp[k] = Setpoint::Pinned(piece);
        }
        for (j, &(k, piece)) in self.attacked.iter().enumerate() {
            let (p, _) = piece_power(
                topo.role(k),
                piece,
                v_prime[j],
                &self.ctx.power_states[k],
                self.ctx.thresholds,
            );
            sp[k] = Setpoint::Fixed(p);
            power[k] = p;
        }
        (sp, power)
    }

    fn decode(&self, x: &[f64]) -> Option<Decoded> {
        let topo = self.ctx.topology;
        let n = topo.len();
        let na = self.attacked.len();
        let (sp, mut power) = self.setpoints(&x[..na]);
        let sol = self
            .flow
            .solve(&sp, Some(&self.ctx.honest.v), &self.cfg.powerflow)
            .ok()?;
        let state = sol.state;
        for k in topo.trains() {
            if !self.attacked.iter().any(|a| a.0 == k) {
                power[k] = state.p[k];
            }
        }
        let mut v_prime = state.v.clone();
        let mut i_prime = state.i.clone();
        let mut s_prime = topo.positions().to_vec();
        for (j, &(k, _)) in self.attacked.iter().enumerate() {
            v_prime[k] = x[j];
        }
        if !self.stealthy {
            for &(k, _) in &self.attacked {
                i_prime[k] = power[k] * W_PER_MW / v_prime[k];
            }
            return Some(Decoded {
                state,
                v_prime,
                i_prime,
                s_prime,
                power,
            });
        }
        for (j, &k) in self.movable.iter().enumerate() {
            s_prime[k] = x[na + j];
        }
        let y = position_conductance(topo, self.ctx.params, &s_prime)?;
        // writable substations follow the substation model on reported values
        let subs: Vec<usize> = topo.substations().filter(|&k| self.writable[k]).collect();
        if !subs.is_empty() {
            let rs = self.ctx.params.r_substation;
            let m = subs.len();
            let mut a = DMatrix::zeros(m, m);
            let mut b = DVector::zeros(m);
            for (r, &k) in subs.iter().enumerate() {
                b[r] = self.ctx.params.v_noload;
                for c in 0..n {
                    let coef = rs * y[(k, c)] + if c == k { 1.0 } else { 0.0 };
                    match subs.iter().position(|&s| s == c) {
                        Some(cc) => a[(r, cc)] += coef,
                        None => b[r] -= coef * v_prime[c],
                    }
                }
            }
            let vs = a.lu().solve(&b)?;
            for (r, &k) in subs.iter().enumerate() {
                v_prime[k] = vs[r];
            }
        }
        let i = &y * DVector::from_column_slice(&v_prime);
        i_prime = i.iter().copied().collect();
        Some(Decoded {
            state,
            v_prime,
            i_prime,
            s_prime,
            power,
        })
    }

    fn x0_candidates(&self) -> Vec<Vec<f64>> {
        let topo = self.ctx.topology;
        let honest = self.ctx.honest;
        let base: Vec<f64> = self
            .attacked
            .iter()
            .map(|&(k, _)| honest.v[k])
            .chain(self.movable.iter().map(|&k| topo.positions()[k]))
            .collect();
        let radius: Vec<f64> = self
            .attacked
            .iter()
            .map(|&(k, _)| self.bounds.dv[k])
            .chain(self.movable.iter().map(|&k| self.bounds.ds[k]))
            .collect();
        let mut starts = vec![base.clone()];
        for m in 1..self.cfg.multistarts.max(1) {
            let x = base
                .iter()
                .zip(&radius)
                .enumerate()
                .map(|(j, (b, r))| {
                    let sign = if (m >> (j % 3)) & 1 == 1 { 1.0 } else { -1.0 };
                    b + sign * r * if m > 7 { 0.5 } else { 1.0 }
                })
                .collect();
            starts.push(x);
        }
        starts
    }
}

/// `Y` at reported positions; `None` if they collide.
fn position_conductance(
    topo: &TpsTopology,
    params: &ElectricalParams,
    s: &[f64],
) -> Option<DMatrix<f64>> {
    let t = topo.with_positions(s.to_vec()).ok()?;
    build_conductance_matrix(&t, params).ok()
}

impl Problem for Subproblem<'_> {
    fn dimension(&self) -> usize {
        self.attacked.len() + self.movable.len()
    }

    fn lower(&self) -> Vec<f64> {
        let th = self.ctx.thresholds;
        let topo = self.ctx.topology;
        self.attacked
            .iter()
            .map(|&(k, piece)| {
                let (lo, _) = piece_voltage_interval(topo.role(k), piece, th);
                lo.max(self.ctx.honest.v[k] - 4.0 * self.bounds.dv[k] - 1.0)
                    .max(1.0)
            })
            .chain(
                self.movable
                    .iter()
                    .map(|&k| topo.positions()[k] - self.bounds.ds[k]),
            )
            .collect()
    }

    fn upper(&self) -> Vec<f64> {
        let th = self.ctx.thresholds;
        let topo = self.ctx.topology;
        self.attacked
            .iter()
            .map(|&(k, piece)| {
                let (_, hi) = piece_voltage_interval(topo.role(k), piece, th);
                hi.min(self.ctx.honest.v[k] + 4.0 * self.bounds.dv[k] + 1.0)
            })
            .chain(
                self.movable
                    .iter()
                    .map(|&k| topo.positions()[k] + self.bounds.ds[k]),
            )
            .collect()
    }

    fn scale(&self) -> Vec<f64> {
        let mut s = vec![V_SCALE; self.attacked.len()];
        s.extend(std::iter::repeat_n(1.0, self.movable.len()));
        s
    }

    fn evaluate(&self, x: &[f64]) -> Option<Evaluation> {
        let d = self.decode(x)?;
        let topo = self.ctx.topology;
        let th = self.ctx.thresholds;
        let st = &d.state;
        let objective = -self.ctx.objective(self.goal, st);
        let mut eq = Vec::new();
        let mut ineq = Vec::new();
        for k in 0..topo.len() {
            if self.writable[k] {
                let dv = d.v_prime[k] - st.v[k];
                ineq.push((self.bounds.dv[k] - dv) / V_SCALE);
                ineq.push((self.bounds.dv[k] + dv) / V_SCALE);
                let di = d.i_prime[k] - st.i[k];
                ineq.push((self.bounds.di[k] - di) / I_SCALE);
                ineq.push((self.bounds.di[k] + di) / I_SCALE);
            } else if self.stealthy {
                eq.push((d.i_prime[k] - st.i[k]) / I_SCALE);
            }
        }
        if self.stealthy {
            for &(k, _) in &self.attacked {
                eq.push(d.v_prime[k] * d.i_prime[k] / W_PER_MW - d.power[k]);
            }
            let s = &d.s_prime;
            for j in 1..s.len() {
                if self.movable.contains(&j) || self.movable.contains(&(j - 1)) {
                    ineq.push((s[j] - s[j - 1] - self.cfg.position_gap) * 10.0);
                }
            }
        }
        for &(k, piece) in &self.pinned {
            let (lo, hi) = piece_voltage_interval(topo.role(k), piece, th);
            if lo.is_finite() {
                ineq.push((st.v[k] - lo) / V_SCALE);
            }
            if hi.is_finite() {
                ineq.push((hi - st.v[k]) / V_SCALE);
            }
        }
        Some(Evaluation {
            objective,
            equalities: eq,
            inequalities: ineq,
        })
    }
}

fn check_inputs(
    ctx: &AttackContext,
    writable: &[usize],
    bounds: &AttackBounds,
    kind: &AttackKind,
) -> Result<(), AttackError> {
    let n = ctx.topology.len();
    kind.validate()?;
    bounds.validate(n)?;
    for &k in writable.iter().chain(&kind.unsafe_set) {
        if k >= n {
            return Err(AttackError::NodeOutOfRange(k));
        }
    }
    if ctx.honest.len() != n {
        return Err(PowerflowError::LengthMismatch {
            what: "true_state",
            got: ctx.honest.len(),
            expected: n,
        }
        .into());
    }
    Ok(())
}

fn breach(kind: &AttackKind, thresholds: &ControlThresholds, st: &SystemState) -> bool {
    kind.goal == AttackGoal::Safety
        && kind
            .unsafe_set
            .iter()
            .any(|&k| !thresholds.is_safe(st.v[k]))
}

fn no_attack(ctx: &AttackContext, kind: &AttackKind, writable: &[usize]) -> AttackVector {
    let h = ctx.honest;
    let obj = ctx.objective(kind.goal, h);
    let mut power = vec![0.0; h.len()];
    for k in ctx.topology.trains() {
        power[k] = h.p[k];
    }
    AttackVector {
        kind: kind.clone(),
        status: AttackStatus::NoAttack,
        writable_set: writable.to_vec(),
        v_prime: h.v.clone(),
        i_prime: h.i.clone(),
        s_prime: ctx.topology.positions().to_vec(),
        induced_power: power,
        pieces: vec![None; h.len()],
        induced_state: h.clone(),
        objective_value: obj,
        honest_objective: obj,
        breach: breach(kind, ctx.thresholds, h),
    }
}

/// Divide-and-conquer search for the efficiency or safety goal, with or
/// without the stealthiness constraints.
pub fn synthesize(
    ctx: &AttackContext,
    kind: &AttackKind,
    writable: &[usize],
    bounds: &AttackBounds,
    config: &AttackConfig,
) -> Result<AttackVector, AttackError> {
    check_inputs(ctx, writable, bounds, kind)?;
    if kind.goal == AttackGoal::SuboptimalAdditive {
        return suboptimal_attack(ctx, writable, kind.additive_dv, &config.powerflow);
    }
    let topo = ctx.topology;
    let n = topo.len();
    let mut writable: Vec<usize> = writable.to_vec();
    writable.sort_unstable();
    writable.dedup();
    let mut is_writable = vec![false; n];
    for &k in &writable {
        is_writable[k] = true;
    }
    let targets: Vec<usize> = writable
        .iter()
        .copied()
        .filter(|&k| topo.role(k).is_train())
        .collect();
    if targets.is_empty() {
        return Ok(no_attack(ctx, kind, &writable));
    }
    let movable: Vec<usize> = if kind.stealthy {
        targets
            .iter()
            .copied()
            .filter(|&k| bounds.ds[k] > 0.0)
            .collect()
    } else {
        vec![]
    };
    let pinned: Vec<(usize, ControlPiece)> = topo
        .trains()
        .filter(|k| !is_writable[*k])
        .map(|k| (k, piece_at(topo.role(k), ctx.honest.v[k], ctx.thresholds)))
        .collect();
    let flow = PowerflowProblem::new(topo, ctx.params, ctx.thresholds, ctx.power_states)?;
    let honest_obj = ctx.objective(kind.goal, ctx.honest);

    let mut best: Option<(f64, Vec<f64>, Subproblem)> = None;
    let choices: Vec<Vec<ControlPiece>> = targets
        .iter()
        .map(|&k| {
            if config.lock_tractioning && topo.role(k) == NodeRole::Tractioning {
                vec![piece_at(topo.role(k), ctx.honest.v[k], ctx.thresholds)]
            } else {
                ControlPiece::ALL.to_vec()
            }
        })
        .collect();
    let combos: usize = choices.iter().map(Vec::len).product();
    for c in 0..combos {
        let mut code = c;
        let attacked: Vec<(usize, ControlPiece)> = targets
            .iter()
            .zip(&choices)
            .map(|(&k, options)| {
                let piece = options[code % options.len()];
                code /= options.len();
                (k, piece)
            })
            .collect();
        let sub = Subproblem {
            ctx: *ctx,
            flow: flow.clone(),
            goal: kind.goal,
            stealthy: kind.stealthy,
            bounds,
            cfg: *config,
            attacked,
            movable: movable.clone(),
            writable: is_writable.clone(),
            pinned: pinned.clone(),
        };
        let (lo, hi) = (sub.lower(), sub.upper());
        if lo.iter().zip(&hi).any(|(l, h)| l > h) {
            continue;
        }
        for x0 in sub.x0_candidates() {
            let Some(out) = optim::minimize(&sub, &x0, &config.sqp) else {
                continue;
            };
            if !out.is_feasible(config.feasibility_tolerance) {
                continue;
            }
            let f = out.evaluation.objective;
            let better = match &best {
                None => true,
                Some((bf, bx, _)) => f < bf - 1e-12 || ((f - bf).abs() <= 1e-12 && out.x < *bx),
            };
            if better {
                best = Some((f, out.x.clone(), clone_sub(&sub)));
            }
        }
    }

    let Some((f, x, sub)) = best else {
        return Ok(no_attack(ctx, kind, &writable));
    };
    if -f <= honest_obj + config.no_op_tolerance {
        return Ok(no_attack(ctx, kind, &writable));
    }
    let d = sub
        .decode(&x)
        .expect("decoding succeeded during optimization");
    let mut pieces = vec![None; n];
    for &(k, piece) in &sub.attacked {
        pieces[k] = Some(piece);
    }
    let breach = breach(kind, ctx.thresholds, &d.state);
    Ok(AttackVector {
        kind: kind.clone(),
        status: AttackStatus::Launched,
        writable_set: writable,
        v_prime: d.v_prime,
        i_prime: d.i_prime,
        s_prime: d.s_prime,
        induced_power: d.power,
        pieces,
        objective_value: -f,
        honest_objective: honest_obj,
        breach,
        induced_state: d.state,
    })
}

fn clone_sub<'a>(s: &Subproblem<'a>) -> Subproblem<'a> {
    Subproblem {
        ctx: s.ctx,
        flow: s.flow.clone(),
        goal: s.goal,
        stealthy: s.stealthy,
        bounds: s.bounds,
        cfg: s.cfg,
        attacked: s.attacked.clone(),
        movable: s.movable.clone(),
        writable: s.writable.clone(),
        pinned: s.pinned.clone(),
    }
}

/// Maximizes the power delivered to substations (minimizes absorbed
/// regeneration) by falsifying readings of the writable trains.
pub fn efficiency_attack(
    ctx: &AttackContext,
    writable: &[usize],
    bounds: &AttackBounds,
    config: &AttackConfig,
) -> Result<AttackVector, AttackError> {
    synthesize(
        ctx,
        &AttackKind::efficiency(false),
        writable,
        bounds,
        config,
    )
}

/// Maximizes regenerated power, aiming to push an unsafe-set voltage above
/// its limit. `breach` reports success.
pub fn safety_attack(
    ctx: &AttackContext,
    writable: &[usize],
    bounds: &AttackBounds,
    unsafe_set: &[usize],
    config: &AttackConfig,
) -> Result<AttackVector, AttackError> {
    synthesize(
        ctx,
        &AttackKind::safety(false, unsafe_set.to_vec()),
        writable,
        bounds,
        config,
    )
}

/// Efficiency or safety attack constrained to leave no state-estimation
/// residual.
pub fn stealthy_attack(
    ctx: &AttackContext,
    kind: &AttackKind,
    writable: &[usize],
    bounds: &AttackBounds,
    config: &AttackConfig,
) -> Result<AttackVector, AttackError> {
    let mut kind = kind.clone();
    kind.stealthy = true;
    synthesize(ctx, &kind, writable, bounds, config)
}

/// Each writable train reads its true voltage plus `additive_dv`; the
/// controller stays coupled to the physics.
pub fn suboptimal_attack(
    ctx: &AttackContext,
    writable: &[usize],
    additive_dv: f64,
    powerflow: &PowerflowConfig,
) -> Result<AttackVector, AttackError> {
    let topo = ctx.topology;
    let n = topo.len();
    let kind = AttackKind::suboptimal(additive_dv);
    let trains: Vec<usize> = writable
        .iter()
        .copied()
        .filter(|&k| k < n && topo.role(k).is_train())
        .collect();
    if trains.is_empty() || additive_dv == 0.0 {
        return Ok(no_attack(ctx, &kind, writable));
    }
    let mut fo = FeedbackOverride::none(n);
    for &k in &trains {
        fo = fo.with(k, Perceived::Offset(additive_dv));
    }
    let flow = PowerflowProblem::new(topo, ctx.params, ctx.thresholds, ctx.power_states)?;
    let sp = crate::powerflow::setpoints_for_override(topo, ctx.thresholds, ctx.power_states, &fo)?;
    let st = flow.solve(&sp, Some(&ctx.honest.v), powerflow)?.state;
    let mut v_prime = st.v.clone();
    let mut i_prime = st.i.clone();
    let mut power = vec![0.0; n];
    let mut pieces = vec![None; n];
    for k in topo.trains() {
        power[k] = st.p[k];
    }
    for &k in &trains {
        v_prime[k] = st.v[k] + additive_dv;
        i_prime[k] = power[k] * W_PER_MW / v_prime[k];
        pieces[k] = Some(piece_at(topo.role(k), v_prime[k], ctx.thresholds));
    }
    let obj = st.substation_power(topo);
    Ok(AttackVector {
        kind,
        status: AttackStatus::Launched,
        writable_set: writable.to_vec(),
        v_prime,
        i_prime,
        s_prime: topo.positions().to_vec(),
        induced_power: power,
        pieces,
        objective_value: obj,
        honest_objective: ctx.honest.substation_power(topo),
        breach: false,
        induced_state: st,
    })
}

/// Voltage and current readings `(v, i)`.
pub type Reading = (Vec<f64>, Vec<f64>);

/// Estimator-consistent reading built from another real solution of the
/// power-flow equations with the true train powers: the solution nearest to
/// the true voltages (p-norm) that differs from them. Returns `(v', i')`.
pub fn discrete_stealthy_attack(
    topology: &TpsTopology,
    params: &ElectricalParams,
    true_state: &SystemState,
    solutions: &crate::detection::StealthSolutionSet,
    p_norm: f64,
) -> Result<Option<Reading>, AttackError> {
    let best = solutions
        .solutions
        .iter()
        .map(|v| (crate::detection::p_distance(v, &true_state.v, p_norm), v))
        .filter(|(d, _)| *d > crate::detection::DEDUP_RADIUS_V)
        .min_by(|a, b| a.0.total_cmp(&b.0));
    let Some((_, v)) = best else { return Ok(None) };
    let y = build_conductance_matrix(topology, params)?;
    let i = &y * DVector::from_column_slice(v);
    Ok(Some((v.clone(), i.iter().copied().collect())))
}
