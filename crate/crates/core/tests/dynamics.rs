mod common;

use std::f64::consts::PI;

use rand::RngExt;
use skelehand::dynamics::{
    equilibrium, fingertip_force_to_torques, CableDisplacements, DynamicsError, SkinModel, TendonConfig,
};
use skelehand::kinematics::{FingerGeometry, JointAngles, PlanarPoint};
use skelehand::sensor::SensorModel;
use skelehand::sim::{FingerParams, FingerSim};

#[test]
fn equilibrium_beats_constrained_grid() {
    let mut r = common::rng(21);
    for case in 0..20 {
        let c = common::random_equilibrium_case(&mut r);
        let eq = equilibrium(
            &c.geometry,
            &JointAngles::ZERO,
            &c.tendon,
            &c.skin,
            CableDisplacements::new(c.flexor, c.extensor),
            c.torque,
        )
        .unwrap_or_else(|e| panic!("case {case}: {e}"));
        let q = eq.q.as_array();
        assert!(c.geometry.contains(&eq.q), "case {case}: {q:?} outside limits");
        assert!(common::cables_ok(&c, q, 1e-12), "case {case}: cables violated at {q:?}");
        let e = common::energy(&c.skin, &c.torque, q);
        let (grid, feasible) = common::grid_minimum(&c, 50);
        assert!(feasible > 0, "case {case}: empty feasible grid");
        assert!(e <= grid + 1e-12, "case {case}: solver {e} above grid {grid}");
        assert!((eq.energy - e).abs() < 1e-12);
    }
}

#[test]
fn identical_joints_share_flexor_excursion() {
    let g = FingerGeometry::uniform(0.03).unwrap();
    let t = TendonConfig::new([0.004; 3], [0.0, 0.0, 0.005], 0.005).unwrap();
    let s = SkinModel::new([0.01; 3], [1e-4; 3]).unwrap();
    let delta = 0.003;
    let eq = equilibrium(&g, &JointAngles::ZERO, &t, &s, CableDisplacements::new(delta, -1.0), [0.0; 3]).unwrap();
    for v in eq.q.as_array() {
        assert!((v - delta / (3.0 * 0.004)).abs() < 1e-12);
    }
    assert!(eq.flexor_tension > 0.0);
    assert_eq!(eq.extensor_tension, 0.0);
}

#[test]
fn stationarity_holds_at_the_solution() {
    let mut r = common::rng(22);
    for _ in 0..200 {
        let c = common::random_equilibrium_case(&mut r);
        let eq = equilibrium(
            &c.geometry,
            &JointAngles::ZERO,
            &c.tendon,
            &c.skin,
            CableDisplacements::new(c.flexor, c.extensor),
            c.torque,
        )
        .unwrap();
        let res = eq.residual_torques(&c.tendon, &c.skin, &c.torque);
        assert!(res.iter().all(|v| v.abs() < 1e-12), "residual {res:?}");
        assert!(eq.flexor_tension >= 0.0 && eq.extensor_tension >= 0.0);
        // Stops only push away from the limit they hold.
        let q = eq.q.as_array();
        let lim = c.geometry.limits();
        for i in 0..3 {
            let t = eq.limit_torques[i];
            if t > 0.0 {
                assert!((q[i] - lim[i].min).abs() < 1e-12);
            } else if t < 0.0 {
                assert!((q[i] - lim[i].max).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn contradictory_cables_name_the_constraint() {
    let g = FingerGeometry::index_default();
    let t = TendonConfig::default();
    let s = SkinModel::default();
    // Flexor demands more bend than the limits allow.
    let err = equilibrium(&g, &JointAngles::ZERO, &t, &s, CableDisplacements::new(1.0, -1.0), [0.0; 3]).unwrap_err();
    assert!(matches!(err, DynamicsError::OverConstrained { .. }), "{err}");
    // Both satisfiable alone, not together: a zero extensor pins θ3 at 0,
    // and the distal joints alone cannot take up 15 mm.
    let err = equilibrium(&g, &JointAngles::ZERO, &t, &s, CableDisplacements::new(0.015, 0.0), [0.0; 3]).unwrap_err();
    assert_eq!(
        err,
        DynamicsError::OverConstrained {
            constraint: skelehand::dynamics::CableConstraint::FlexorAndExtensor
        }
    );
}

#[test]
fn flexor_ramps_are_monotone() {
    let mut r = common::rng(23);
    for ramp in 0..100 {
        let c = common::random_equilibrium_case(&mut r);
        let mut params = FingerParams::with_geometry(c.geometry);
        params.tendon = c.tendon;
        params.skin = c.skin;
        params.sensor = SensorModel::noiseless(16);
        let mut sim = FingerSim::new(params);
        let arms = c.tendon.flexor_arms();
        let lim = c.geometry.limits();
        let max_take_up: f64 = (0..3).map(|i| arms[i] * lim[i].max).sum();
        let target = r.random_range(0.1..0.95) * max_take_up / c.tendon.spool_radius();
        // Extensor fully paid out so it stays slack.
        sim.set_motor_targets(target, -params.motor.travel, Some((target, 100.0)));
        let mut prev = sim.q().as_array();
        for _ in 0..500 {
            sim.step(0.002).unwrap();
            let q = sim.q().as_array();
            for j in 0..3 {
                assert!(q[j] >= prev[j] - 1e-12, "ramp {ramp}: joint {j} fell {} -> {}", prev[j], q[j]);
            }
            prev = q;
        }
    }
}

#[test]
fn perturbation_leaves_no_trace() {
    let params = FingerParams::with_geometry(FingerGeometry::index_default());
    let mut sim = FingerSim::new(params);
    let (f, e) = params.motor_targets_for(&JointAngles::new(0.6, 0.5, 0.3));
    sim.set_motor_targets(f, e, None);
    for _ in 0..500 {
        sim.step(0.002).unwrap();
    }
    let before = sim.q();
    sim.push_fingertip(PlanarPoint::new(0.0, 0.05), 0.1).unwrap();
    sim.step(0.002).unwrap();
    assert!(sim.q().max_abs_diff(&before) > 1e-4);
    for _ in 0..60 {
        sim.step(0.002).unwrap();
    }
    assert!(sim.q().max_abs_diff(&before) < 1e-6);
}

#[test]
fn quantization_error_is_half_step() {
    let s = SensorModel::noiseless(16);
    let mut r = common::rng(24);
    let bound = PI / 65536.0;
    for _ in 0..10_000 {
        let a = r.random_range(-PI..PI);
        assert!((s.quantize(a) - a).abs() <= bound + 1e-15);
    }
    assert_eq!(s.quantize(0.0), 0.0);
    assert_eq!(s.quantize(PI), PI);
}

#[test]
fn force_mapping_matches_virtual_work() {
    let mut r = common::rng(25);
    for _ in 0..500 {
        let g = common::random_geometry(&mut r);
        let q = common::random_angles(&mut r, &g);
        let f = PlanarPoint::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        let tau = fingertip_force_to_torques(&g, &q, &f).unwrap();
        let h = 1e-6;
        for k in 0..3 {
            let mut qp = q.as_array();
            let mut qm = q.as_array();
            qp[k] += h;
            qm[k] -= h;
            let (xp, yp) = common::fk_matrix(g.lengths(), qp);
            let (xm, ym) = common::fk_matrix(g.lengths(), qm);
            let work = (f.x * (xp - xm) + f.y * (yp - ym)) / (2.0 * h);
            let scale = tau[k].abs().max(1e-3);
            assert!((work - tau[k]).abs() / scale < 1e-6, "joint {k}: {work} vs {}", tau[k]);
        }
    }
    let g = FingerGeometry::index_default();
    let [l0, l1, l2, _] = g.lengths();
    let tau = fingertip_force_to_torques(&g, &JointAngles::ZERO, &PlanarPoint::new(0.0, 2.0)).unwrap();
    let want = [2.0 * l0, 2.0 * (l0 + l1), 2.0 * (l0 + l1 + l2)];
    for i in 0..3 {
        assert!((tau[i] - want[i]).abs() < 1e-12);
    }
}

#[test]
fn simulation_is_deterministic() {
    use rand::SeedableRng;
    let run = || {
        let mut params = FingerParams::with_geometry(FingerGeometry::index_default());
        params.sensor.noise_std = 2.0 * params.sensor.step();
        let mut sim = FingerSim::new(params);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        sim.set_joint_targets(&JointAngles::new(1.0, 0.8, 0.5));
        (0..300)
            .map(|_| {
                sim.step(0.002).unwrap();
                sim.read_sensors(&mut rng).q.as_array().map(f64::to_bits)
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}
