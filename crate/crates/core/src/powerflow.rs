//! Steady-state power flow with train control laws in the loop.
//!
//! Substations are folded into the nodal system as Norton equivalents
//! (`G = 1/R_s`, injection `V_NL/R_s`); trains inject `P(V)/V`. The coupled
//! system `Y v = i(v)` is solved by Newton's method with a backtracking line
//! search from a flat start at `V_NL`, which selects the high-voltage
//! operating point.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    build_conductance_matrix, control_power, piece_power, ControlPiece, ControlThresholds,
    ElectricalParams, ModelError, NodeRole, SystemState, TpsTopology, TrainPowerState, W_PER_MW,
};

/// Train voltages below this are treated as collapse.
const MIN_TRAIN_VOLTAGE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerflowConfig {
    pub max_iterations: usize,
    /// Convergence threshold on the largest voltage update (V).
    pub tolerance: f64,
    /// Step contraction factor used by the backtracking line search.
    pub damping: f64,
}

impl Default for PowerflowConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-6,
            damping: 0.5,
        }
    }
}

impl PowerflowConfig {
    pub fn validate(&self) -> Result<(), PowerflowError> {
        if self.max_iterations == 0 || !(self.tolerance > 0.0) {
            return Err(PowerflowError::InvalidConfig(
                "max_iterations >= 1 and tolerance > 0 required".into(),
            ));
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(PowerflowError::InvalidConfig(
                "damping must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone)]
pub enum PowerflowError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("network has no substation")]
    NoSubstation,
    #[error("{what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("feedback override on non-train node {0}")]
    OverrideOnSubstation(usize),
    #[error("power flow did not converge in {iterations} iterations")]
    Diverged {
        iterations: usize,
        last: Box<SystemState>,
    },
    #[error("singular Jacobian")]
    Singular,
    #[error("no real operating point for the demanded train powers (residual {residual:.3e} A)")]
    Infeasible { residual: f64 },
}

/// How a train node's power setpoint is formed during a solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Setpoint {
    /// Control law evaluated at the true node voltage.
    Coupled,
    /// One piece of the control law, extended linearly, at the true voltage.
    Pinned(ControlPiece),
    /// Constant power (MW).
    Fixed(f64),
    /// Control law evaluated at the true voltage plus an offset (V).
    Offset(f64),
}

/// Voltage a train's controller perceives in place of its true voltage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perceived {
    /// A fixed reading (V).
    Fixed(f64),
    /// True voltage plus an additive bias (V).
    Offset(f64),
}

/// Per-node perceived-voltage overrides.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeedbackOverride {
    pub perceived: Vec<Option<Perceived>>,
}

impl FeedbackOverride {
    pub fn none(nodes: usize) -> Self {
        Self {
            perceived: vec![None; nodes],
        }
    }

    pub fn with(mut self, node: usize, perceived: Perceived) -> Self {
        if self.perceived.len() <= node {
            self.perceived.resize(node + 1, None);
        }
        self.perceived[node] = Some(perceived);
        self
    }
}

/// Result of a solve together with the Newton iteration count.
#[derive(Debug, Clone)]
pub struct Solution {
    pub state: SystemState,
    pub iterations: usize,
}

/// A network with its conductance matrix assembled once, reused across
/// solves with different setpoints.
#[derive(Debug, Clone)]
pub struct PowerflowProblem<'a> {
    topology: &'a TpsTopology,
    params: &'a ElectricalParams,
    thresholds: &'a ControlThresholds,
    power_states: &'a [TrainPowerState],
    y: DMatrix<f64>,
}

impl<'a> PowerflowProblem<'a> {
    pub fn new(
        topology: &'a TpsTopology,
        params: &'a ElectricalParams,
        thresholds: &'a ControlThresholds,
        power_states: &'a [TrainPowerState],
    ) -> Result<Self, PowerflowError> {
        params.validate()?;
        thresholds.validate()?;
        if power_states.len() != topology.len() {
            return Err(PowerflowError::LengthMismatch {
                what: "power_states",
                got: power_states.len(),
                expected: topology.len(),
            });
        }
        if topology.substations().next().is_none() {
            return Err(PowerflowError::NoSubstation);
        }
        let y = build_conductance_matrix(topology, params)?;
        Ok(Self {
            topology,
            params,
            thresholds,
            power_states,
            y,
        })
    }

    pub fn topology(&self) -> &TpsTopology {
        self.topology
    }

    pub fn conductance(&self) -> &DMatrix<f64> {
        &self.y
    }

    /// Train power (MW) and its derivative (MW/V) at true voltage `v`.
    fn train_power(&self, node: usize, setpoint: Setpoint, v: f64) -> (f64, f64) {
        let role = self.topology.role(node);
        let ps = &self.power_states[node];
        match setpoint {
            Setpoint::Fixed(p) => (p, 0.0),
            Setpoint::Coupled => {
                let piece = crate::model::piece_at(role, v, self.thresholds);
                piece_power(role, piece, v, ps, self.thresholds)
            }
            Setpoint::Pinned(piece) => piece_power(role, piece, v, ps, self.thresholds),
            Setpoint::Offset(dv) => {
                let piece = crate::model::piece_at(role, v + dv, self.thresholds);
                piece_power(role, piece, v + dv, ps, self.thresholds)
            }
        }
    }

    /// Mismatch `Y v - i(v)` (A) and, optionally, its Jacobian.
    fn mismatch(
        &self,
        setpoints: &[Setpoint],
        v: &DVector<f64>,
        jacobian: Option<&mut DMatrix<f64>>,
    ) -> DVector<f64> {
        let mut f = &self.y * v;
        let mut diag = vec![0.0; v.len()];
        for k in 0..v.len() {
            if self.topology.role(k).is_train() {
                let (p, dp) = self.train_power(k, setpoints[k], v[k]);
                let p_w = p * W_PER_MW;
                f[k] -= p_w / v[k];
                diag[k] = -(dp * W_PER_MW * v[k] - p_w) / (v[k] * v[k]);
            } else {
                f[k] -= (self.params.v_noload - v[k]) / self.params.r_substation;
                diag[k] = 1.0 / self.params.r_substation;
            }
        }
        if let Some(j) = jacobian {
            j.copy_from(&self.y);
            for (k, d) in diag.into_iter().enumerate() {
                j[(k, k)] += d;
            }
        }
        f
    }

    fn state_from(&self, v: &DVector<f64>) -> SystemState {
        let i = &self.y * v;
        SystemState::from_vi(v.iter().copied().collect(), i.iter().copied().collect())
    }

    /// Newton solve for the given per-node setpoints (entries for substations
    /// are ignored).
    pub fn solve(
        &self,
        setpoints: &[Setpoint],
        start: Option<&[f64]>,
        config: &PowerflowConfig,
    ) -> Result<Solution, PowerflowError> {
        config.validate()?;
        let n = self.topology.len();
        if setpoints.len() != n {
            return Err(PowerflowError::LengthMismatch {
                what: "setpoints",
                got: setpoints.len(),
                expected: n,
            });
        }
        let mut v = match start {
            Some(s) if s.len() == n => DVector::from_column_slice(s),
            _ => DVector::from_element(n, self.params.v_noload),
        };
        let mut jac = DMatrix::zeros(n, n);
        let mut f = self.mismatch(setpoints, &v, Some(&mut jac));
        let mut fnorm = f.amax();
        // mismatch floor set by the size of the branch currents
        let scale = self.y.amax() * self.params.v_noload;
        let floor = 1e-12 * scale.max(1.0);

        for iteration in 1..=config.max_iterations {
            let lu = jac.clone().lu();
            let step = lu.solve(&(-&f)).ok_or(PowerflowError::Singular)?;
            if !step.iter().all(|x| x.is_finite()) {
                return Err(PowerflowError::Singular);
            }

            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let trial = &v + alpha * &step;
                let collapsed = (0..n)
                    .any(|k| self.topology.role(k).is_train() && trial[k] < MIN_TRAIN_VOLTAGE);
                if !collapsed {
                    let mut tj = DMatrix::zeros(n, n);
                    let tf = self.mismatch(setpoints, &trial, Some(&mut tj));
                    let tnorm = tf.amax();
                    if tnorm.is_finite()
                        && (tnorm <= (1.0 - 1e-4 * alpha) * fnorm || tnorm <= floor)
                    {
                        v = trial;
                        f = tf;
                        jac = tj;
                        fnorm = tnorm;
                        accepted = true;
                        break;
                    }
                }
                alpha *= config.damping;
            }

            let moved = alpha * step.amax();
            if fnorm <= floor || (accepted && moved < config.tolerance && fnorm < 1e-6 * scale) {
                return Ok(Solution {
                    state: self.state_from(&v),
                    iterations: iteration,
                });
            }
            if !accepted {
                if fnorm < 1e-6 * scale.max(1.0) {
                    return Ok(Solution {
                        state: self.state_from(&v),
                        iterations: iteration,
                    });
                }
                return Err(PowerflowError::Infeasible { residual: fnorm });
            }
        }
        Err(PowerflowError::Diverged {
            iterations: config.max_iterations,
            last: Box::new(self.state_from(&v)),
        })
    }
}

/// Honest operating point: every train's controller sees its true voltage.
pub fn solve_steady_state(
    topology: &TpsTopology,
    params: &ElectricalParams,
    thresholds: &ControlThresholds,
    power_states: &[TrainPowerState],
    config: &PowerflowConfig,
) -> Result<SystemState, PowerflowError> {
    let problem = PowerflowProblem::new(topology, params, thresholds, power_states)?;
    let setpoints = vec![Setpoint::Coupled; topology.len()];
    Ok(problem.solve(&setpoints, None, config)?.state)
}

/// Converts perceived-voltage overrides into per-node setpoints.
pub fn setpoints_for_override(
    topology: &TpsTopology,
    thresholds: &ControlThresholds,
    power_states: &[TrainPowerState],
    feedback: &FeedbackOverride,
) -> Result<Vec<Setpoint>, PowerflowError> {
    let n = topology.len();
    if feedback.perceived.len() > n {
        return Err(PowerflowError::LengthMismatch {
            what: "override",
            got: feedback.perceived.len(),
            expected: n,
        });
    }
    let mut setpoints = vec![Setpoint::Coupled; n];
    for (k, p) in feedback.perceived.iter().enumerate() {
        let Some(p) = p else { continue };
        let role = topology.role(k);
        if role == NodeRole::Substation {
            return Err(PowerflowError::OverrideOnSubstation(k));
        }
        setpoints[k] = match *p {
            Perceived::Fixed(v) => {
                Setpoint::Fixed(control_power(role, v, &power_states[k], thresholds))
            }
            Perceived::Offset(dv) => Setpoint::Offset(dv),
        };
    }
    Ok(setpoints)
}

/// Operating point when the overridden trains' controllers act on falsified
/// voltage readings. Physics is solved for the true voltages.
pub fn solve_under_false_feedback(
    topology: &TpsTopology,
    params: &ElectricalParams,
    thresholds: &ControlThresholds,
    power_states: &[TrainPowerState],
    feedback: &FeedbackOverride,
    config: &PowerflowConfig,
) -> Result<SystemState, PowerflowError> {
    let problem = PowerflowProblem::new(topology, params, thresholds, power_states)?;
    let setpoints = setpoints_for_override(topology, thresholds, power_states, feedback)?;
    Ok(problem.solve(&setpoints, None, config)?.state)
}
