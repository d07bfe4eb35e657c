use nalgebra::{DVector, SymmetricEigen};
use proptest::prelude::*;
use tps_core::model::{
    build_conductance_matrix, control_power, ControlThresholds, ElectricalParams, NodeRole,
    TpsTopology, TrainPowerState,
};
use tps_core::powerflow::{
    solve_steady_state, solve_under_false_feedback, FeedbackOverride, PowerflowConfig,
};

/// Node voltage of a constant-power injection `p_w` behind a Thevenin source.
fn thevenin_voltage(v_th: f64, r_th: f64, p_w: f64) -> f64 {
    (v_th + (v_th * v_th + 4.0 * r_th * p_w).sqrt()) / 2.0
}

fn solve(
    roles: Vec<NodeRole>,
    positions: Vec<f64>,
    ps: &[TrainPowerState],
) -> (TpsTopology, tps_core::model::SystemState) {
    let topo = TpsTopology::chain(roles, positions).unwrap();
    let st = solve_steady_state(
        &topo,
        &ElectricalParams::reference(),
        &ControlThresholds::reference(),
        ps,
        &PowerflowConfig::default(),
    )
    .unwrap();
    (topo, st)
}

#[test]
fn two_node_closed_form() {
    let p = ElectricalParams::reference();
    let ps = [
        TrainPowerState::default(),
        TrainPowerState::regenerating(1.0),
    ];
    let (_, st) = solve(
        vec![NodeRole::Substation, NodeRole::Regenerating],
        vec![0.0, 1.5],
        &ps,
    );
    let r_th = p.r_substation + p.gamma * 1.5;
    let v = thevenin_voltage(p.v_noload, r_th, 1.0e6);
    assert!((st.v[1] - v).abs() < 1e-6, "{} vs {v}", st.v[1]);
    assert!((st.p[1] - 1.0).abs() < 1e-9);
}

#[test]
fn three_node_closed_form() {
    let p = ElectricalParams::reference();
    let ps = [
        TrainPowerState::default(),
        TrainPowerState::tractioning(-2.0),
        TrainPowerState::default(),
    ];
    let (_, st) = solve(
        vec![
            NodeRole::Substation,
            NodeRole::Tractioning,
            NodeRole::Substation,
        ],
        vec![0.0, 0.7, 2.5],
        &ps,
    );
    let r1 = p.r_substation + p.gamma * 0.7;
    let r2 = p.r_substation + p.gamma * 1.8;
    let r_th = r1 * r2 / (r1 + r2);
    let v = thevenin_voltage(p.v_noload, r_th, -2.0e6);
    assert!((st.v[1] - v).abs() < 1e-6, "{} vs {v}", st.v[1]);
    let i_left = (p.v_noload - st.v[0]) / p.r_substation;
    let i_right = (p.v_noload - st.v[2]) / p.r_substation;
    assert!((i_left - (st.v[0] - st.v[1]) / (p.gamma * 0.7)).abs() < 1e-6);
    assert!((i_left * r1 - i_right * r2).abs() < 1e-6);
}

#[test]
fn empty_override_is_identity() {
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
    let ps = [
        TrainPowerState::default(),
        TrainPowerState::regenerating(5.5),
        TrainPowerState::regenerating(1.8),
        TrainPowerState::default(),
    ];
    let (p, th, cfg) = (
        ElectricalParams::reference(),
        ControlThresholds::reference(),
        PowerflowConfig::default(),
    );
    let a = solve_steady_state(&topo, &p, &th, &ps, &cfg).unwrap();
    let b =
        solve_under_false_feedback(&topo, &p, &th, &ps, &FeedbackOverride::none(4), &cfg).unwrap();
    assert_eq!(a, b);
}

fn network() -> impl Strategy<Value = (Vec<NodeRole>, Vec<f64>, Vec<TrainPowerState>)> {
    (1usize..4, 1.0f64..6.0).prop_flat_map(|(trains, length)| {
        (
            proptest::collection::vec(0.05f64..0.95, trains),
            proptest::collection::vec((any::<bool>(), 0.1f64..3.0), trains),
            Just(length),
        )
            .prop_map(|(fractions, powers, length)| {
                let mut fr = fractions;
                fr.sort_by(f64::total_cmp);
                let mut roles = vec![NodeRole::Substation];
                let mut pos = vec![0.0];
                let mut ps = vec![TrainPowerState::default()];
                for (k, (regen, mw)) in powers.into_iter().enumerate() {
                    // keep trains apart by more than the merge epsilon
                    let x = (fr[k] * length).max(pos[pos.len() - 1] + 0.01);
                    pos.push(x);
                    if regen {
                        roles.push(NodeRole::Regenerating);
                        ps.push(TrainPowerState::regenerating(mw));
                    } else {
                        roles.push(NodeRole::Tractioning);
                        ps.push(TrainPowerState::tractioning(-mw));
                    }
                }
                roles.push(NodeRole::Substation);
                pos.push(pos[pos.len() - 1].max(length) + 0.01);
                ps.push(TrainPowerState::default());
                (roles, pos, ps)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn control_law_monotone_and_continuous(
        regen in any::<bool>(),
        mw in 0.1f64..6.0,
        v in 300.0f64..1000.0,
        h in 0.0f64..5.0,
    ) {
        let th = ControlThresholds::reference();
        let (role, ps, span) = if regen {
            (NodeRole::Regenerating, TrainPowerState::regenerating(mw), th.v_max - th.v_max_trigger)
        } else {
            (NodeRole::Tractioning, TrainPowerState::tractioning(-mw), th.v_min_trigger - th.v_min)
        };
        let a = control_power(role, v, &ps, &th);
        let b = control_power(role, v + h, &ps, &th);
        prop_assert!(b <= a + 1e-12);
        prop_assert!((a - b).abs() <= mw / span * h + 1e-9);
    }

    #[test]
    fn conductance_matrix_psd_with_constant_nullspace((roles, pos, _) in network()) {
        let topo = TpsTopology::chain(roles, pos).unwrap();
        let y = build_conductance_matrix(&topo, &ElectricalParams::reference()).unwrap();
        prop_assert_eq!(&y, &y.transpose());
        let ones = DVector::from_element(topo.len(), 1.0);
        prop_assert!((&y * ones).amax() < 1e-9 * y.amax());
        let eig = SymmetricEigen::new(y.clone());
        let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        prop_assert!(ev[0].abs() < 1e-9 * y.amax());
        prop_assert!(ev[1] > 0.0);
    }

    #[test]
    fn injections_balance_branch_losses((roles, pos, ps) in network()) {
        let topo = TpsTopology::chain(roles, pos).unwrap();
        let params = ElectricalParams::reference();
        let th = ControlThresholds::reference();
        let Ok(st) = solve_steady_state(&topo, &params, &th, &ps, &PowerflowConfig::default()) else {
            return Ok(());
        };
        let injected: f64 = st.p.iter().sum();
        let loss = st.branch_loss(&topo, &params).unwrap();
        prop_assert!((injected - loss).abs() < 1e-9 * (1.0 + loss.abs()));
        for k in topo.trains() {
            let commanded = control_power(topo.role(k), st.v[k], &ps[k], &th);
            prop_assert!((st.p[k] - commanded).abs() < 1e-6);
        }
    }

    #[test]
    fn solve_is_deterministic((roles, pos, ps) in network()) {
        let topo = TpsTopology::chain(roles, pos).unwrap();
        let params = ElectricalParams::reference();
        let th = ControlThresholds::reference();
        let cfg = PowerflowConfig::default();
        let a = solve_steady_state(&topo, &params, &th, &ps, &cfg);
        let b = solve_steady_state(&topo, &params, &th, &ps, &cfg);
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "inconsistent outcome"),
        }
    }
}
