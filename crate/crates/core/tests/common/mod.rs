#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tps_core::detection::DEDUP_RADIUS_V;
use tps_core::model::{
    build_conductance_matrix, ControlThresholds, ElectricalParams, NodeRole, SystemState,
    TpsTopology, TrainPowerState,
};
use tps_core::powerflow::{solve_steady_state, PowerflowConfig};

/// Two substations and two regenerating trains at 0, 0.9, 1.2 and 2 km.
pub fn table2() -> (TpsTopology, Vec<TrainPowerState>, SystemState) {
    let topo = TpsTopology::chain(
        vec![
            NodeRole::Substation,
            NodeRole::Regenerating,
            NodeRole::Regenerating,
            NodeRole::Substation,
        ],
        vec![0.0, 0.9, 1.2, 2.0],
    )
    .unwrap();
    let ps = vec![
        TrainPowerState::default(),
        TrainPowerState::regenerating(5.5),
        TrainPowerState::regenerating(1.8),
        TrainPowerState::default(),
    ];
    let st = solve_steady_state(
        &topo,
        &ElectricalParams::reference(),
        &ControlThresholds::reference(),
        &ps,
        &PowerflowConfig::default(),
    )
    .unwrap();
    (topo, ps, st)
}

/// Substation, two trains, substation with random placement and powers.
pub fn random_instant(rng: &mut ChaCha8Rng) -> (TpsTopology, Vec<TrainPowerState>) {
    let length = rng.gen_range(1.5..4.0);
    let a = rng.gen_range(0.1..0.45) * length;
    let b = rng.gen_range(0.55..0.9) * length;
    let mut roles = vec![NodeRole::Substation];
    let mut ps = vec![TrainPowerState::default()];
    for _ in 0..2 {
        if rng.gen_bool(0.5) {
            roles.push(NodeRole::Tractioning);
            ps.push(TrainPowerState::tractioning(-rng.gen_range(0.2..2.0)));
        } else {
            roles.push(NodeRole::Regenerating);
            ps.push(TrainPowerState::regenerating(rng.gen_range(0.2..2.0)));
        }
    }
    roles.push(NodeRole::Substation);
    ps.push(TrainPowerState::default());
    (
        TpsTopology::chain(roles, vec![0.0, a, b, length]).unwrap(),
        ps,
    )
}

/// Newton on the full nodal system from a dense grid of train-voltage seeds.
pub fn grid_newton_oracle(topo: &TpsTopology, powers_mw: &[f64]) -> Vec<Vec<f64>> {
    let p = ElectricalParams::reference();
    let y = build_conductance_matrix(topo, &p).unwrap();
    let n = topo.len();
    let f = |v: &DVector<f64>| -> DVector<f64> {
        let i = &y * v;
        DVector::from_iterator(
            n,
            (0..n).map(|k| {
                if topo.role(k) == NodeRole::Substation {
                    i[k] - (p.v_noload - v[k]) / p.r_substation
                } else {
                    v[k] * i[k] - powers_mw[k] * 1e6
                }
            }),
        )
    };
    let jac = |v: &DVector<f64>| -> DMatrix<f64> {
        let i = &y * v;
        let mut j = DMatrix::zeros(n, n);
        for k in 0..n {
            for c in 0..n {
                j[(k, c)] = if topo.role(k) == NodeRole::Substation {
                    y[(k, c)] + if k == c { 1.0 / p.r_substation } else { 0.0 }
                } else {
                    v[k] * y[(k, c)] + if k == c { i[k] } else { 0.0 }
                };
            }
        }
        j
    };
    let mut found: Vec<Vec<f64>> = Vec::new();
    let mut a = -300.0;
    while a <= 1200.0 {
        let mut b = -300.0;
        while b <= 1200.0 {
            let mut v = DVector::from_column_slice(&[p.v_noload, a, b, p.v_noload]);
            for _ in 0..60 {
                let Some(step) = jac(&v).lu().solve(&(-f(&v))) else {
                    break;
                };
                v += step;
            }
            let r = f(&v);
            if r.iter().all(|x| x.is_finite()) && r.amax() < 1e-4 {
                let cand: Vec<f64> = v.iter().copied().collect();
                if !found.iter().any(|u| {
                    u.iter()
                        .zip(&cand)
                        .all(|(x, y)| (x - y).abs() < DEDUP_RADIUS_V)
                }) {
                    found.push(cand);
                }
            }
            b += 7.5;
        }
        a += 7.5;
    }
    found
}
