//! Electrical model of a DC traction power system.
//!
//! A line is a radial chain of nodes sorted by position. Substations are
//! Thevenin sources (`V = V_NL - R_s I`); trains are constant-power loads or
//! sources whose setpoint follows the overcurrent (tractioning) or squeeze
//! (regenerating) control law. Units are volts, amperes, megawatts,
//! kilometres and ohms throughout.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Trains closer than this (km) must be coalesced by the caller.
pub const POSITION_MERGE_EPSILON_KM: f64 = 0.001;

/// Watts per megawatt.
pub const W_PER_MW: f64 = 1.0e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("topology has no nodes")]
    Empty,
    #[error("positions are not sorted ascending at node {node}")]
    Unsorted { node: usize },
    #[error("nodes {a} and {b} are closer than the merge epsilon ({gap_km} km); coalesce them")]
    CoincidentNodes { a: usize, b: usize, gap_km: f64 },
    #[error("branch ({a}, {b}) does not join adjacent nodes of the chain")]
    NonAdjacentBranch { a: usize, b: usize },
    #[error("node {node} is not connected to the chain")]
    Disconnected { node: usize },
    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
}

fn positive(field: &'static str, value: f64) -> Result<(), ModelError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter {
            field,
            reason: format!("must be finite and > 0, got {value}"),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElectricalParams {
    /// Substation no-load voltage (V).
    pub v_noload: f64,
    /// Substation internal resistance (ohm).
    pub r_substation: f64,
    /// Lumped rail plus catenary resistivity (ohm/km).
    pub gamma: f64,
}

impl ElectricalParams {
    /// 750 V system with 30 mOhm/km line and 29.56 mOhm substations.
    pub fn reference() -> Self {
        Self {
            v_noload: 750.0,
            r_substation: 0.02956,
            gamma: 0.03,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        positive("v_noload", self.v_noload)?;
        positive("r_substation", self.r_substation)?;
        positive("gamma", self.gamma)
    }
}

impl Default for ElectricalParams {
    fn default() -> Self {
        Self::reference()
    }
}

/// Voltage thresholds shared by every train's local controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlThresholds {
    pub v_min: f64,
    pub v_min_trigger: f64,
    pub v_max_trigger: f64,
    pub v_max: f64,
}

impl ControlThresholds {
    /// 850 V / 900 V squeeze thresholds; the overcurrent pair sits low enough
    /// that it stays inactive in ordinary operation.
    pub fn reference() -> Self {
        Self {
            v_min: 400.0,
            v_min_trigger: 500.0,
            v_max_trigger: 850.0,
            v_max: 900.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = self.v_min.is_finite()
            && self.v_max.is_finite()
            && self.v_min < self.v_min_trigger
            && self.v_min_trigger < self.v_max_trigger
            && self.v_max_trigger < self.v_max;
        if ok {
            Ok(())
        } else {
            Err(ModelError::InvalidParameter {
                field: "thresholds",
                reason: format!("need v_min < v_min_trigger < v_max_trigger < v_max, got {self:?}"),
            })
        }
    }

    pub fn is_safe(&self, v: f64) -> bool {
        v >= self.v_min && v <= self.v_max
    }
}

impl Default for ControlThresholds {
    fn default() -> Self {
        Self::reference()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    Substation,
    Tractioning,
    Regenerating,
}

impl NodeRole {
    pub fn is_train(self) -> bool {
        !matches!(self, NodeRole::Substation)
    }
}

/// Power envelope of a train node. Demand is `<= 0` (absorbed), regeneration
/// capacity is `>= 0` (injected). Substations carry the zero envelope.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainPowerState {
    /// MW, non-positive.
    pub demand: f64,
    /// MW, non-negative.
    pub regen_capacity: f64,
}

impl TrainPowerState {
    pub fn tractioning(demand_mw: f64) -> Self {
        Self {
            demand: -demand_mw.abs(),
            regen_capacity: 0.0,
        }
    }

    pub fn regenerating(capacity_mw: f64) -> Self {
        Self {
            demand: 0.0,
            regen_capacity: capacity_mw.abs(),
        }
    }
}

/// A radial chain of substations and trains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpsTopology {
    roles: Vec<NodeRole>,
    positions: Vec<f64>,
    branches: Vec<(usize, usize)>,
}

impl TpsTopology {
    /// Builds the chain `0-1-2-...` over nodes already sorted by position.
    pub fn chain(roles: Vec<NodeRole>, positions: Vec<f64>) -> Result<Self, ModelError> {
        let n = roles.len();
        let branches = (1..n).map(|k| (k - 1, k)).collect();
        Self::new(roles, positions, branches)
    }

    pub fn new(
        roles: Vec<NodeRole>,
        positions: Vec<f64>,
        branches: Vec<(usize, usize)>,
    ) -> Result<Self, ModelError> {
        let n = roles.len();
        if n == 0 {
            return Err(ModelError::Empty);
        }
        if positions.len() != n {
            return Err(ModelError::LengthMismatch {
                what: "positions",
                got: positions.len(),
                expected: n,
            });
        }
        for k in 1..n {
            if !(positions[k] >= positions[k - 1]) {
                return Err(ModelError::Unsorted { node: k });
            }
        }
        let mut degree = vec![0usize; n];
        for &(a, b) in &branches {
            let (lo, hi) = (a.min(b), a.max(b));
            if hi >= n || hi != lo + 1 {
                return Err(ModelError::NonAdjacentBranch { a, b });
            }
            degree[a] += 1;
            degree[b] += 1;
        }
        if n > 1 {
            // a radial chain over sorted nodes has exactly the n-1 adjacent links
            let mut linked = vec![false; n - 1];
            for &(a, b) in &branches {
                linked[a.min(b)] = true;
            }
            if let Some(gap) = linked.iter().position(|l| !l) {
                return Err(ModelError::Disconnected { node: gap + 1 });
            }
            if let Some(node) = degree.iter().position(|&d| d == 0) {
                return Err(ModelError::Disconnected { node });
            }
        }
        Ok(Self {
            roles,
            positions,
            branches,
        })
    }

    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    pub fn roles(&self) -> &[NodeRole] {
        &self.roles
    }

    pub fn role(&self, node: usize) -> NodeRole {
        self.roles[node]
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn branches(&self) -> &[(usize, usize)] {
        &self.branches
    }

    pub fn substations(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&k| !self.roles[k].is_train())
    }

    pub fn trains(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&k| self.roles[k].is_train())
    }

    /// Same roles and branches with new positions (for example, reported
    /// positions). Positions must keep the chain order.
    pub fn with_positions(&self, positions: Vec<f64>) -> Result<Self, ModelError> {
        Self::new(self.roles.clone(), positions, self.branches.clone())
    }

    /// Same geometry with different roles (a train switching between
    /// traction and braking).
    pub fn with_roles(&self, roles: Vec<NodeRole>) -> Result<Self, ModelError> {
        Self::new(roles, self.positions.clone(), self.branches.clone())
    }
}

/// Conductance of each branch (S), in branch order.
pub fn branch_conductances(
    topology: &TpsTopology,
    params: &ElectricalParams,
) -> Result<Vec<f64>, ModelError> {
    topology
        .branches
        .iter()
        .map(|&(a, b)| {
            let gap = (topology.positions[b] - topology.positions[a]).abs();
            if gap < POSITION_MERGE_EPSILON_KM {
                Err(ModelError::CoincidentNodes { a, b, gap_km: gap })
            } else {
                Ok(1.0 / (params.gamma * gap))
            }
        })
        .collect()
}

/// Nodal conductance matrix `Y(s)`.
pub fn build_conductance_matrix(
    topology: &TpsTopology,
    params: &ElectricalParams,
) -> Result<DMatrix<f64>, ModelError> {
    let g = branch_conductances(topology, params)?;
    let n = topology.len();
    let mut y = DMatrix::zeros(n, n);
    for (&(a, b), &gab) in topology.branches.iter().zip(&g) {
        y[(a, a)] += gab;
        y[(b, b)] += gab;
        y[(a, b)] -= gab;
        y[(b, a)] -= gab;
    }
    Ok(y)
}

/// Piece of a train's control law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlPiece {
    /// Full demand or full regeneration.
    Full,
    /// Linear curtailment between trigger and limit.
    Curtailed,
    /// Zero power.
    Off,
}

impl ControlPiece {
    pub const ALL: [ControlPiece; 3] = [
        ControlPiece::Full,
        ControlPiece::Curtailed,
        ControlPiece::Off,
    ];
}

/// Voltage interval `[lo, hi]` on which `piece` applies.
pub fn piece_voltage_interval(
    role: NodeRole,
    piece: ControlPiece,
    thresholds: &ControlThresholds,
) -> (f64, f64) {
    match (role, piece) {
        (NodeRole::Regenerating, ControlPiece::Full) => {
            (f64::NEG_INFINITY, thresholds.v_max_trigger)
        }
        (NodeRole::Regenerating, ControlPiece::Curtailed) => {
            (thresholds.v_max_trigger, thresholds.v_max)
        }
        (NodeRole::Regenerating, ControlPiece::Off) => (thresholds.v_max, f64::INFINITY),
        (NodeRole::Tractioning, ControlPiece::Full) => (thresholds.v_min_trigger, f64::INFINITY),
        (NodeRole::Tractioning, ControlPiece::Curtailed) => {
            (thresholds.v_min, thresholds.v_min_trigger)
        }
        (NodeRole::Tractioning, ControlPiece::Off) => (f64::NEG_INFINITY, thresholds.v_min),
        (NodeRole::Substation, _) => (f64::NEG_INFINITY, f64::INFINITY),
    }
}

/// Piece the control law is on at voltage `v`. Boundary voltages belong to
/// the curtailed piece.
pub fn piece_at(role: NodeRole, v: f64, thresholds: &ControlThresholds) -> ControlPiece {
    match role {
        NodeRole::Regenerating => {
            if v < thresholds.v_max_trigger {
                ControlPiece::Full
            } else if v <= thresholds.v_max {
                ControlPiece::Curtailed
            } else {
                ControlPiece::Off
            }
        }
        NodeRole::Tractioning => {
            if v > thresholds.v_min_trigger {
                ControlPiece::Full
            } else if v >= thresholds.v_min {
                ControlPiece::Curtailed
            } else {
                ControlPiece::Off
            }
        }
        NodeRole::Substation => ControlPiece::Full,
    }
}

/// Power (MW) and its voltage derivative (MW/V) of one control-law piece,
/// extended linearly beyond its interval.
pub fn piece_power(
    role: NodeRole,
    piece: ControlPiece,
    v: f64,
    power: &TrainPowerState,
    thresholds: &ControlThresholds,
) -> (f64, f64) {
    match (role, piece) {
        (NodeRole::Substation, _) => (0.0, 0.0),
        (_, ControlPiece::Off) => (0.0, 0.0),
        (NodeRole::Regenerating, ControlPiece::Full) => (power.regen_capacity, 0.0),
        (NodeRole::Tractioning, ControlPiece::Full) => (power.demand, 0.0),
        (NodeRole::Regenerating, ControlPiece::Curtailed) => {
            let span = thresholds.v_max - thresholds.v_max_trigger;
            let slope = -power.regen_capacity / span;
            (power.regen_capacity * (thresholds.v_max - v) / span, slope)
        }
        (NodeRole::Tractioning, ControlPiece::Curtailed) => {
            let span = thresholds.v_min_trigger - thresholds.v_min;
            let slope = power.demand / span;
            (power.demand * (v - thresholds.v_min) / span, slope)
        }
    }
}

/// Overcurrent / squeeze control: the power (MW) a train commands when it
/// sees voltage `v_node`. Injection is positive, absorption negative.
pub fn control_power(
    role: NodeRole,
    v_node: f64,
    power_state: &TrainPowerState,
    thresholds: &ControlThresholds,
) -> f64 {
    let piece = piece_at(role, v_node, thresholds);
    piece_power(role, piece, v_node, power_state, thresholds).0
}

/// `V - (V_NL - R_s I)`; zero when the substation model holds.
pub fn substation_residual(v_node: f64, i_node: f64, params: &ElectricalParams) -> f64 {
    v_node - (params.v_noload - params.r_substation * i_node)
}

/// Steady-state operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    /// Nodal voltages (V).
    pub v: Vec<f64>,
    /// Nodal current injections (A).
    pub i: Vec<f64>,
    /// Nodal power injections (MW), `v * i / 1e6`.
    pub p: Vec<f64>,
}

impl SystemState {
    pub fn from_vi(v: Vec<f64>, i: Vec<f64>) -> Self {
        let p = v.iter().zip(&i).map(|(v, i)| v * i / W_PER_MW).collect();
        Self { v, i, p }
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    /// Sum of substation power injections (MW). Negative when the substations
    /// absorb regenerated energy.
    pub fn substation_power(&self, topology: &TpsTopology) -> f64 {
        topology.substations().map(|k| self.p[k]).sum()
    }

    /// Sum of injections by regenerating trains (MW).
    pub fn regenerated_power(&self, topology: &TpsTopology) -> f64 {
        topology
            .trains()
            .filter(|&k| topology.role(k) == NodeRole::Regenerating)
            .map(|k| self.p[k])
            .sum()
    }

    /// Ohmic loss on the branches (MW).
    pub fn branch_loss(
        &self,
        topology: &TpsTopology,
        params: &ElectricalParams,
    ) -> Result<f64, ModelError> {
        let g = branch_conductances(topology, params)?;
        Ok(topology
            .branches()
            .iter()
            .zip(&g)
            .map(|(&(a, b), gab)| gab * (self.v[a] - self.v[b]).powi(2))
            .sum::<f64>()
            / W_PER_MW)
    }
}
