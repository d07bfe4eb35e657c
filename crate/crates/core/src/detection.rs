//! Attack detection: weighted least-squares state estimation with a
//! chi-square bad-data detector, position integrity verification, the
//! secondary detector built on the discrete set of estimator-consistent
//! states, their serialization and the windowed decision.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, Continuous, ContinuousCDF};
use thiserror::Error;

use crate::model::{
    build_conductance_matrix, ControlThresholds, ElectricalParams, ModelError, NodeRole,
    TpsTopology, TrainPowerState, W_PER_MW,
};
use crate::powerflow::{solve_steady_state, PowerflowConfig, PowerflowError};

/// Solutions closer than this (V) are the same solution.
pub const DEDUP_RADIUS_V: f64 = 1e-3;
const RANDOM_SEEDS: usize = 32;
/// Trains drawing less than this (W) carry no current in the enumeration.
pub const PASSIVE_POWER_W: f64 = 1.0;

#[derive(Debug, Error, Clone)]
pub enum DetectionError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Powerflow(#[from] PowerflowError),
    #[error("{what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("noise variance must be positive and finite")]
    BadCovariance,
    #[error("measurement matrix is rank deficient")]
    RankDeficient,
    #[error("invalid detector configuration: {0}")]
    InvalidConfig(String),
    #[error("false-positive target {0} outside (0, 1]")]
    BadRate(f64),
    #[error("network has no substation")]
    NoSubstation,
}

/// One frame of (possibly compromised) measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    /// Voltages (V).
    pub v: Vec<f64>,
    /// Current injections (A).
    pub i: Vec<f64>,
    /// Positions (km).
    pub s: Vec<f64>,
    /// Noise variances of the voltage channels (V^2).
    pub var_v: Vec<f64>,
    /// Noise variances of the current channels (A^2).
    pub var_i: Vec<f64>,
}

impl MeasurementSet {
    /// Measurements with a uniform per-channel standard deviation.
    pub fn new(v: Vec<f64>, i: Vec<f64>, s: Vec<f64>, sigma_v: f64, sigma_i: f64) -> Self {
        let n = v.len();
        Self {
            v,
            i,
            s,
            var_v: vec![sigma_v * sigma_v; n],
            var_i: vec![sigma_i * sigma_i; n],
        }
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    fn validate(&self) -> Result<(), DetectionError> {
        let n = self.v.len();
        for (what, got) in [
            ("i", self.i.len()),
            ("s", self.s.len()),
            ("var_v", self.var_v.len()),
            ("var_i", self.var_i.len()),
        ] {
            if got != n {
                return Err(DetectionError::LengthMismatch {
                    what,
                    got,
                    expected: n,
                });
            }
        }
        if self
            .var_v
            .iter()
            .chain(&self.var_i)
            .any(|x| !(*x > 0.0) || !x.is_finite())
        {
            return Err(DetectionError::BadCovariance);
        }
        Ok(())
    }
}

mod norm_order {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(p: &f64, s: S) -> Result<S::Ok, S::Error> {
        if p.is_infinite() {
            Repr::Text("inf".into()).serialize(s)
        } else {
            Repr::Num(*p).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad norm order {t}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Chi-square threshold on the weighted residual.
    pub tau: f64,
    /// Scaling of the threshold distance when exactly two solutions exist.
    pub alpha: f64,
    /// Norm order `p >= 1`; `"inf"` for the max norm.
    #[serde(with = "norm_order")]
    pub p_norm: f64,
    /// Consecutive alarms required by the windowed decision.
    pub window: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            tau: 16.0,
            alpha: 0.9,
            p_norm: 2.0,
            window: 1,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), DetectionError> {
        if !(self.tau > 0.0) {
            return Err(DetectionError::InvalidConfig("tau must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(DetectionError::InvalidConfig(
                "alpha must lie in [0, 1]".into(),
            ));
        }
        if !(self.p_norm >= 1.0) {
            return Err(DetectionError::InvalidConfig("p_norm must be >= 1".into()));
        }
        if self.window == 0 {
            return Err(DetectionError::InvalidConfig("window must be >= 1".into()));
        }
        Ok(())
    }
}

/// p-norm of `a - b`.
pub fn p_distance(a: &[f64], b: &[f64], p: f64) -> f64 {
    let it = a.iter().zip(b).map(|(x, y)| (x - y).abs());
    if p.is_infinite() {
        it.fold(0.0, f64::max)
    } else if p == 2.0 {
        it.map(|d| d * d).sum::<f64>().sqrt()
    } else {
        it.map(|d| d.powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

fn topology_at(topology: &TpsTopology, s: &[f64]) -> Result<TpsTopology, DetectionError> {
    if s.len() != topology.len() {
        return Err(DetectionError::LengthMismatch {
            what: "positions",
            got: s.len(),
            expected: topology.len(),
        });
    }
    Ok(topology.with_positions(s.to_vec())?)
}

/// Weighted least-squares voltage estimate from `z = [v; i] = [I; Y(s)] v + n`,
/// with `Y` assembled at the measured positions.
pub fn estimate_state(
    meas: &MeasurementSet,
    topology: &TpsTopology,
    params: &ElectricalParams,
) -> Result<Vec<f64>, DetectionError> {
    Ok(wls(meas, topology, params)?.0)
}

fn wls(
    meas: &MeasurementSet,
    topology: &TpsTopology,
    params: &ElectricalParams,
) -> Result<(Vec<f64>, f64), DetectionError> {
    meas.validate()?;
    let n = topology.len();
    if meas.len() != n {
        return Err(DetectionError::LengthMismatch {
            what: "measurements",
            got: meas.len(),
            expected: n,
        });
    }
    let topo = topology_at(topology, &meas.s)?;
    let y = build_conductance_matrix(&topo, params)?;
    let mut h = DMatrix::zeros(2 * n, n);
    let mut z = DVector::zeros(2 * n);
    for r in 0..n {
        let wv = 1.0 / meas.var_v[r].sqrt();
        let wi = 1.0 / meas.var_i[r].sqrt();
        h[(r, r)] = wv;
        z[r] = meas.v[r] * wv;
        for c in 0..n {
            h[(n + r, c)] = y[(r, c)] * wi;
        }
        z[n + r] = meas.i[r] * wi;
    }
    let qr = h.clone().qr();
    let rmat = qr.r();
    let dmax = rmat.diagonal().amax();
    if rmat.diagonal().iter().any(|d| d.abs() <= 1e-12 * dmax) {
        return Err(DetectionError::RankDeficient);
    }
    let qtz = qr.q().transpose() * &z;
    let v = rmat
        .solve_upper_triangular(&qtz)
        .ok_or(DetectionError::RankDeficient)?;
    let resid = &z - &h * &v;
    Ok((v.iter().copied().collect(), resid.norm_squared()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BddResult {
    pub residual: f64,
    pub alarm: bool,
    pub estimate: Vec<f64>,
}

/// Chi-square test on the weighted estimation residual.
pub fn bdd_evaluate(
    meas: &MeasurementSet,
    topology: &TpsTopology,
    params: &ElectricalParams,
    config: &DetectorConfig,
) -> Result<BddResult, DetectionError> {
    let (estimate, residual) = wls(meas, topology, params)?;
    Ok(BddResult {
        residual,
        alarm: residual > config.tau,
        estimate,
    })
}

/// Threshold with `P(chi2(dof) > tau) = target_fp`, `dof = meas_dim - state_dim`.
pub fn bdd_threshold_for_fp_rate(
    target_fp: f64,
    meas_dim: usize,
    state_dim: usize,
) -> Result<f64, DetectionError> {
    if !(target_fp > 0.0 && target_fp <= 1.0) {
        return Err(DetectionError::BadRate(target_fp));
    }
    if target_fp == 1.0 {
        return Ok(0.0);
    }
    let dof = meas_dim.saturating_sub(state_dim);
    if dof == 0 {
        return Err(DetectionError::InvalidConfig(
            "no redundancy: measurement dimension must exceed state dimension".into(),
        ));
    }
    let chi =
        ChiSquared::new(dof as f64).map_err(|e| DetectionError::InvalidConfig(e.to_string()))?;
    // polish the library quantile with Newton steps on the survival function
    let mut x = chi.inverse_cdf(1.0 - target_fp);
    for _ in 0..4 {
        let pdf = chi.pdf(x);
        if !(pdf > 0.0) {
            break;
        }
        x -= ((1.0 - chi.cdf(x)) - target_fp) / -pdf;
    }
    Ok(x)
}

/// Survival function of chi-square with `dof` degrees of freedom.
pub fn chi_square_survival(x: f64, dof: usize) -> f64 {
    match ChiSquared::new(dof as f64) {
        Ok(c) => 1.0 - c.cdf(x),
        Err(_) => f64::NAN,
    }
}

/// Alarm iff two position sources disagree anywhere by more than
/// `tolerance` (km).
pub fn piv_verify(sources: &[Vec<f64>], tolerance: f64) -> bool {
    for (a, sa) in sources.iter().enumerate() {
        for sb in &sources[a + 1..] {
            if sa.len() != sb.len() {
                return true;
            }
            if sa.iter().zip(sb).any(|(x, y)| (x - y).abs() > tolerance) {
                return true;
            }
        }
    }
    false
}

/// Real voltage vectors consistent with the estimator and the substation
/// model for given train powers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StealthSolutionSet {
    pub solutions: Vec<Vec<f64>>,
    /// Upper bound on the number of solutions, `2^T` over powered trains.
    pub bezout_bound: usize,
    /// False when some structured seed failed to converge.
    pub complete: bool,
}

/// The train-voltage subsystem after eliminating the linear rows:
/// `v_k (M v + m)_k = P_k` for every powered train `k`. Substations and
/// trains with zero power (no current) are eliminated.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    /// Powered trains.
    pub trains: Vec<usize>,
    /// Substations and passive trains.
    pub eliminated: Vec<usize>,
    m: DMatrix<f64>,
    offset: DVector<f64>,
    /// `v_E = sub_base + sub_gain v_T` for the eliminated nodes.
    sub_base: DVector<f64>,
    sub_gain: DMatrix<f64>,
    /// Train powers (W).
    power: DVector<f64>,
}

impl ReducedSystem {
    pub fn new(
        topology: &TpsTopology,
        params: &ElectricalParams,
        train_powers: &[f64],
    ) -> Result<Self, DetectionError> {
        let n = topology.len();
        if train_powers.len() != n {
            return Err(DetectionError::LengthMismatch {
                what: "train_powers",
                got: train_powers.len(),
                expected: n,
            });
        }
        let mut a = build_conductance_matrix(topology, params)?;
        let subs: Vec<usize> = topology.substations().collect();
        if subs.is_empty() {
            return Err(DetectionError::NoSubstation);
        }
        let passive = |k: usize| train_powers[k].abs() * W_PER_MW < PASSIVE_POWER_W;
        let trains: Vec<usize> = topology.trains().filter(|&k| !passive(k)).collect();
        let eliminated: Vec<usize> = (0..n)
            .filter(|&k| !topology.role(k).is_train() || passive(k))
            .collect();
        for &k in &subs {
            a[(k, k)] += 1.0 / params.r_substation;
        }
        let ass = a.select_rows(&eliminated).select_columns(&eliminated);
        let ast = a.select_rows(&eliminated).select_columns(&trains);
        let ats = a.select_rows(&trains).select_columns(&eliminated);
        let att = a.select_rows(&trains).select_columns(&trains);
        let b = DVector::from_iterator(
            eliminated.len(),
            eliminated.iter().map(|&k| {
                if topology.role(k).is_train() {
                    0.0
                } else {
                    params.v_noload / params.r_substation
                }
            }),
        );
        let lu = ass.lu();
        let sub_base = lu.solve(&b).ok_or(DetectionError::RankDeficient)?;
        let sub_gain = -lu.solve(&ast).ok_or(DetectionError::RankDeficient)?;
        let m = &att + &ats * &sub_gain;
        let offset = &ats * &sub_base;
        let power = DVector::from_iterator(
            trains.len(),
            trains.iter().map(|&k| train_powers[k] * W_PER_MW),
        );
        Ok(Self {
            trains,
            eliminated,
            m,
            offset,
            sub_base,
            sub_gain,
            power,
        })
    }

    pub fn residual(&self, vt: &DVector<f64>) -> DVector<f64> {
        let cur = &self.m * vt + &self.offset;
        vt.component_mul(&cur) - &self.power
    }

    /// Residual relative to the magnitude of the terms in each equation.
    pub fn relative_residual(&self, vt: &DVector<f64>) -> f64 {
        let cur = &self.m * vt + &self.offset;
        let r = self.residual(vt);
        (0..vt.len())
            .map(|k| {
                let mag: f64 = (0..vt.len())
                    .map(|j| (self.m[(k, j)] * vt[j]).abs())
                    .sum::<f64>()
                    + self.offset[k].abs();
                let scale = (vt[k].abs() * mag)
                    .max(self.power[k].abs())
                    .max(cur[k].abs())
                    .max(1.0);
                r[k].abs() / scale
            })
            .fold(0.0, f64::max)
    }

    /// Full nodal voltage vector from train voltages.
    pub fn expand(&self, vt: &DVector<f64>, n: usize) -> Vec<f64> {
        let vs = &self.sub_base + &self.sub_gain * vt;
        let mut v = vec![0.0; n];
        for (j, &k) in self.trains.iter().enumerate() {
            v[k] = vt[j];
        }
        for (j, &k) in self.eliminated.iter().enumerate() {
            v[k] = vs[j];
        }
        v
    }

    /// Damped Newton from `seed`; `None` if it does not converge.
    pub fn newton(&self, seed: &DVector<f64>) -> Option<DVector<f64>> {
        let t = seed.len();
        let mut v = seed.clone();
        let mut f = self.residual(&v);
        let mut fnorm = f.norm();
        for _ in 0..100 {
            if self.relative_residual(&v) < 1e-13 {
                return Some(v);
            }
            let cur = &self.m * &v + &self.offset;
            let mut j = DMatrix::from_diagonal(&cur);
            for r in 0..t {
                for c in 0..t {
                    j[(r, c)] += v[r] * self.m[(r, c)];
                }
            }
            let step = j.lu().solve(&(-&f))?;
            let mut alpha = 1.0;
            let mut moved = false;
            for _ in 0..30 {
                let trial = &v + alpha * &step;
                let tf = self.residual(&trial);
                let tn = tf.norm();
                if tn.is_finite() && tn < fnorm * (1.0 - 1e-4 * alpha) {
                    v = trial;
                    f = tf;
                    fnorm = tn;
                    moved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !moved {
                break;
            }
        }
        (self.relative_residual(&v) < 1e-9).then_some(v)
    }

    /// Structured seeds: each train above or below the vertex of its own
    /// quadratic with the other trains at the no-load voltage.
    fn sign_seeds(&self, v_noload: f64) -> Vec<DVector<f64>> {
        let t = self.trains.len();
        let base = DVector::from_element(t, v_noload);
        let mut roots = Vec::with_capacity(t);
        for k in 0..t {
            let a = self.m[(k, k)];
            let r = (&self.m * &base)[k] - a * v_noload + self.offset[k];
            let vertex = -r / (2.0 * a);
            let disc = r * r + 4.0 * a * self.power[k];
            let (lo, hi) = if disc > 0.0 {
                let s = disc.sqrt();
                ((-r - s) / (2.0 * a), (-r + s) / (2.0 * a))
            } else {
                (
                    vertex - 0.1 * vertex.abs() - 1.0,
                    vertex + 0.1 * vertex.abs() + 1.0,
                )
            };
            roots.push((lo, hi));
        }
        (0..(1usize << t))
            .map(|mask| {
                DVector::from_iterator(
                    t,
                    (0..t).map(|k| {
                        if mask >> k & 1 == 1 {
                            roots[k].0
                        } else {
                            roots[k].1
                        }
                    }),
                )
            })
            .collect()
    }
}

/// All real solutions of the estimator-consistent power-flow equations for
/// fixed train powers (MW). Substation and passive-train rows are linear
/// and are eliminated; the remaining `T` quadratics are solved by Newton
/// from `2^T` structured seeds and a fixed set of random seeds.
pub fn enumerate_stealthy_states(
    topology: &TpsTopology,
    params: &ElectricalParams,
    train_powers: &[f64],
) -> Result<StealthSolutionSet, DetectionError> {
    enumerate_stealthy_states_seeded(topology, params, train_powers, &[])
}

/// As [`enumerate_stealthy_states`], seeded from full-length voltage vectors
/// in `warm_starts`. When every warm start converges to its own distinct
/// solution the structured and random search is skipped.
pub fn enumerate_stealthy_states_seeded(
    topology: &TpsTopology,
    params: &ElectricalParams,
    train_powers: &[f64],
    warm_starts: &[Vec<f64>],
) -> Result<StealthSolutionSet, DetectionError> {
    let sys = ReducedSystem::new(topology, params, train_powers)?;
    let n = topology.len();
    let t = sys.trains.len();
    let bezout_bound = 1usize << t;
    if t == 0 {
        return Ok(StealthSolutionSet {
            solutions: vec![sys.expand(&DVector::zeros(0), n)],
            bezout_bound: 1,
            complete: true,
        });
    }
    let mut found: Vec<DVector<f64>> = Vec::new();
    let mut complete = true;
    let push = |v: DVector<f64>, found: &mut Vec<DVector<f64>>| {
        if !found.iter().any(|u| (u - &v).amax() < DEDUP_RADIUS_V) {
            found.push(v);
        }
    };
    for w in warm_starts {
        if w.len() == n {
            let seed = DVector::from_iterator(t, sys.trains.iter().map(|&k| w[k]));
            if let Some(v) = sys.newton(&seed) {
                push(v, &mut found);
            }
        }
    }
    let usable = warm_starts.iter().filter(|w| w.len() == n).count();
    let structured = if usable > 0 && found.len() == usable {
        Vec::new()
    } else {
        sys.sign_seeds(params.v_noload)
    };
    for seed in &structured {
        match sys.newton(seed) {
            Some(v) => push(v, &mut found),
            None => complete = false,
        }
    }
    if !structured.is_empty() && found.len() < bezout_bound {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..RANDOM_SEEDS {
            if found.len() >= bezout_bound {
                break;
            }
            let seed = DVector::from_iterator(
                t,
                (0..t).map(|_| rng.gen_range(-0.25..1.5) * params.v_noload),
            );
            if let Some(v) = sys.newton(&seed) {
                push(v, &mut found);
            }
        }
    }
    let mut solutions: Vec<Vec<f64>> = found.iter().map(|v| sys.expand(v, n)).collect();
    solutions.sort_by(|a, b| {
        b.iter()
            .sum::<f64>()
            .partial_cmp(&a.iter().sum::<f64>())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(StealthSolutionSet {
        solutions,
        bezout_bound,
        complete,
    })
}

/// Smallest pairwise distance between distinct solutions, if at least two.
pub fn min_pairwise_distance(solutions: &[Vec<f64>], p: f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    for (a, va) in solutions.iter().enumerate() {
        for vb in &solutions[a + 1..] {
            let d = p_distance(va, vb, p);
            best = Some(best.map_or(d, |b: f64| b.min(d)));
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SadResult {
    /// Decision threshold (V); `None` when the detector abstains.
    pub j_star: Option<f64>,
    /// Distance (V) of the measured voltages from the previous intact ones.
    pub distance: f64,
    pub alarm: bool,
    /// Fewer than two real solutions: the detector abstains.
    pub degenerate: bool,
    pub solution_count: usize,
}

/// Secondary attack detector. Train powers are taken from the measured
/// voltages and currents; `topology` carries the verified true positions.
pub fn sad_evaluate(
    meas: &MeasurementSet,
    topology: &TpsTopology,
    params: &ElectricalParams,
    v_previous: &[f64],
    config: &DetectorConfig,
) -> Result<SadResult, DetectionError> {
    sad_evaluate_seeded(meas, topology, params, v_previous, config, &[]).map(|r| r.0)
}

/// As [`sad_evaluate`], with warm-start seeds for the enumeration; also
/// returns the solution set.
pub fn sad_evaluate_seeded(
    meas: &MeasurementSet,
    topology: &TpsTopology,
    params: &ElectricalParams,
    v_previous: &[f64],
    config: &DetectorConfig,
    warm_starts: &[Vec<f64>],
) -> Result<(SadResult, StealthSolutionSet), DetectionError> {
    meas.validate()?;
    let n = topology.len();
    if meas.len() != n || v_previous.len() != n {
        return Err(DetectionError::LengthMismatch {
            what: "v_previous",
            got: v_previous.len(),
            expected: n,
        });
    }
    let powers: Vec<f64> = (0..n)
        .map(|k| {
            if topology.role(k).is_train() {
                meas.v[k] * meas.i[k] / W_PER_MW
            } else {
                0.0
            }
        })
        .collect();
    let set = enumerate_stealthy_states_seeded(topology, params, &powers, warm_starts)?;
    let distance = p_distance(&meas.v, v_previous, config.p_norm);
    let result = sad_decide(&set.solutions, distance, config);
    Ok((result, set))
}

/// Threshold rule given the solution set and the observed distance.
pub fn sad_decide(solutions: &[Vec<f64>], distance: f64, config: &DetectorConfig) -> SadResult {
    let count = solutions.len();
    let j_star = min_pairwise_distance(solutions, config.p_norm)
        .and_then(|j| sad_threshold(count, j, config.alpha));
    SadResult {
        j_star,
        distance,
        alarm: j_star.is_some_and(|j| sad_exceeds(distance, j)),
        degenerate: j_star.is_none(),
        solution_count: count,
    }
}

/// `J*` from the solution count and the minimum pairwise distance; `None`
/// when fewer than two solutions exist.
pub fn sad_threshold(count: usize, min_pair_distance: f64, alpha: f64) -> Option<f64> {
    match count {
        0 | 1 => None,
        2 => Some(alpha * min_pair_distance),
        _ => Some(min_pair_distance),
    }
}

/// Onset rule: the distance reaches `J*`, up to the deduplication radius.
pub fn sad_exceeds(distance: f64, j_star: f64) -> bool {
    distance > 0.0 && distance >= j_star - DEDUP_RADIUS_V
}

/// Serialized decision: the secondary detector runs only when the BDD is
/// silent.
pub fn gad_decide(bdd_alarm: bool, sad_alarm: bool) -> bool {
    bdd_alarm || (!bdd_alarm && sad_alarm)
}

/// Alarm only if the last `window` decisions were all alarms.
pub fn gadw_decide(history: &[bool], window: usize) -> bool {
    window >= 1 && history.len() >= window && history[history.len() - window..].iter().all(|&a| a)
}

/// Bounded alarm history for one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct GadWindow {
    window: usize,
    history: VecDeque<bool>,
}

impl GadWindow {
    pub fn new(window: usize) -> Self {
        Self {
            window: window.max(1),
            history: VecDeque::with_capacity(window.max(1)),
        }
    }

    /// Record a decision and return the windowed decision.
    pub fn push(&mut self, gad: bool) -> bool {
        if self.history.len() == self.window {
            self.history.pop_front();
        }
        self.history.push_back(gad);
        self.history.len() == self.window && self.history.iter().all(|&a| a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorVerdict {
    pub bdd_alarm: bool,
    pub residual: f64,
    pub piv_alarm: bool,
    pub sad_alarm: bool,
    pub sad_degenerate: bool,
    pub j_star: Option<f64>,
    pub distance: f64,
    pub gad_alarm: bool,
    pub gadw_alarm: bool,
    /// Estimated voltages.
    pub estimate: Vec<f64>,
}

/// Runs the full stack on one frame. `trusted_positions` is an independent
/// position source; SAD uses it. The windowed decision is left to the
/// caller (`gadw_alarm` equals `gad_alarm` here).
#[allow(clippy::too_many_arguments)]
pub fn detect_frame(
    meas: &MeasurementSet,
    topology: &TpsTopology,
    params: &ElectricalParams,
    trusted_positions: &[f64],
    piv_tolerance: f64,
    v_previous: &[f64],
    config: &DetectorConfig,
    warm_starts: &[Vec<f64>],
) -> Result<(DetectorVerdict, StealthSolutionSet), DetectionError> {
    config.validate()?;
    let bdd = bdd_evaluate(meas, topology, params, config)?;
    let piv_alarm = piv_verify(&[meas.s.clone(), trusted_positions.to_vec()], piv_tolerance);
    let trusted = topology_at(topology, trusted_positions)?;
    let (sad, set) = sad_evaluate_seeded(meas, &trusted, params, v_previous, config, warm_starts)?;
    let gad = gad_decide(bdd.alarm, sad.alarm);
    Ok((
        DetectorVerdict {
            bdd_alarm: bdd.alarm,
            residual: bdd.residual,
            piv_alarm,
            sad_alarm: sad.alarm,
            sad_degenerate: sad.degenerate,
            j_star: sad.j_star,
            distance: sad.distance,
            gad_alarm: gad,
            gadw_alarm: gad,
            estimate: bdd.estimate,
        },
        set,
    ))
}

/// Train power setpoints (MW, zero at substations) from the model alone,
/// ignoring sensor data.
pub fn mitigation_plan(
    topology: &TpsTopology,
    params: &ElectricalParams,
    thresholds: &ControlThresholds,
    power_states: &[TrainPowerState],
) -> Result<Vec<f64>, DetectionError> {
    let st = solve_steady_state(
        topology,
        params,
        thresholds,
        power_states,
        &PowerflowConfig::default(),
    )?;
    Ok((0..topology.len())
        .map(|k| {
            if topology.role(k) == NodeRole::Substation {
                0.0
            } else {
                st.p[k]
            }
        })
        .collect())
}
