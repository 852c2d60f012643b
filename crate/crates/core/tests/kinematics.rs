mod common;

use skelehand::kinematics::{
    forward_kinematics, inverse_kinematics, jacobian, joint_positions, sample_workspace, FingerGeometry, JointAngles,
    PlanarPoint,
};

#[test]
fn fk_matches_matrix_product() {
    let mut r = common::rng(11);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let g = common::random_geometry(&mut r);
        let q = common::random_angles(&mut r, &g);
        let tip = forward_kinematics(&g, &q).unwrap();
        let (x, y) = common::fk_matrix(g.lengths(), q.as_array());
        worst = worst.max((tip.x - x).abs()).max((tip.y - y).abs());
    }
    assert!(worst <= 1e-9, "max FK error {worst:e}");
}

#[test]
fn intermediate_joints_match_partial_products() {
    let mut r = common::rng(12);
    for _ in 0..500 {
        let g = common::random_geometry(&mut r);
        let q = common::random_angles(&mut r, &g);
        let p = joint_positions(&g, &q).unwrap();
        let [l0, l1, l2, l3] = g.lengths();
        // Zeroing the distal links of the chain gives each joint.
        let (x, y) = common::fk_matrix([0.0, 0.0, 0.0, l3], q.as_array());
        assert!(p[0].distance(&PlanarPoint::new(x, y)) < 1e-12);
        let (x, y) = common::fk_matrix([0.0, 0.0, l2, l3], q.as_array());
        assert!(p[1].distance(&PlanarPoint::new(x, y)) < 1e-12);
        let (x, y) = common::fk_matrix([0.0, l1, l2, l3], q.as_array());
        assert!(p[2].distance(&PlanarPoint::new(x, y)) < 1e-12);
        let (x, y) = common::fk_matrix([l0, l1, l2, l3], q.as_array());
        assert!(p[3].distance(&PlanarPoint::new(x, y)) < 1e-12);
    }
}

/// Central differences of the matrix oracle.
fn fd_jacobian(g: &FingerGeometry, q: [f64; 3]) -> [[f64; 3]; 2] {
    let h = 1e-6;
    let mut j = [[0.0; 3]; 2];
    for k in 0..3 {
        let mut qp = q;
        let mut qm = q;
        qp[k] += h;
        qm[k] -= h;
        let (xp, yp) = common::fk_matrix(g.lengths(), qp);
        let (xm, ym) = common::fk_matrix(g.lengths(), qm);
        j[0][k] = (xp - xm) / (2.0 * h);
        j[1][k] = (yp - ym) / (2.0 * h);
    }
    j
}

#[test]
fn jacobian_matches_finite_differences() {
    let mut r = common::rng(13);
    let mut worst = 0.0f64;
    for _ in 0..1_000 {
        let g = common::random_geometry(&mut r);
        let q = common::random_angles(&mut r, &g);
        let a = jacobian(&g, &q).unwrap().0;
        let n = fd_jacobian(&g, q.as_array());
        let norm = a.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        let diff = a
            .iter()
            .flatten()
            .zip(n.iter().flatten())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        worst = worst.max(diff / norm);
    }
    assert!(worst <= 1e-6, "max relative Jacobian error {worst:e}");
}

#[test]
fn ik_recovers_reachable_targets() {
    let mut r = common::rng(14);
    let g = FingerGeometry::index_default();
    let mut reached = 0;
    for _ in 0..200 {
        let q = common::random_angles(&mut r, &g);
        let target = forward_kinematics(&g, &q).unwrap();
        let sol = inverse_kinematics(&g, &target, &JointAngles::ZERO).unwrap();
        let tip = forward_kinematics(&g, &sol.q()).unwrap();
        assert!(g.contains(&sol.q()));
        assert!((tip.distance(&target) - sol.residual()).abs() < 1e-9);
        if sol.is_reached() {
            reached += 1;
            assert!(tip.distance(&target) < 1e-4);
        }
    }
    assert!(reached >= 190, "only {reached}/200 reachable targets solved");
}

#[test]
fn unreachable_target_returns_closest_point() {
    let g = FingerGeometry::index_default();
    let far = PlanarPoint::new(1.0, 0.0);
    let sol = inverse_kinematics(&g, &far, &JointAngles::new(0.3, 0.3, 0.3)).unwrap();
    assert!(!sol.is_reached());
    let tip = forward_kinematics(&g, &sol.q()).unwrap();
    assert!((tip.x - g.reach()).abs() < 1e-3, "tip {tip:?}");
}

#[test]
fn workspace_grid_covers_random_samples() {
    let mut r = common::rng(15);
    let g = common::random_geometry(&mut r);
    let grid = sample_workspace(&g, 40).unwrap();
    assert_eq!(grid.len(), 40 * 40 * 40);
    // Every Monte-Carlo tip lies close to some grid tip: the grid step in
    // joint space bounds the distance by Σ|∂p/∂θ|·Δθ/2.
    let l = g.limits();
    let span = l.iter().map(|x| x.span()).fold(0.0f64, f64::max);
    let bound = g.reach() * 3.0 * span / 39.0 / 2.0;
    for _ in 0..2_000 {
        let q = common::random_angles(&mut r, &g);
        let (x, y) = common::fk_matrix(g.lengths(), q.as_array());
        let p = PlanarPoint::new(x, y);
        let d = grid.iter().map(|s| s.distance(&p)).fold(f64::INFINITY, f64::min);
        assert!(d <= bound, "sample {p:?} is {d} from the grid (bound {bound})");
    }
    let reach = g.reach();
    assert!(grid.iter().all(|p| p.norm() <= reach + 1e-12));
}

#[test]
fn rejects_non_finite_angles() {
    let g = FingerGeometry::index_default();
    assert!(forward_kinematics(&g, &JointAngles::new(f64::NAN, 0.0, 0.0)).is_err());
    assert!(jacobian(&g, &JointAngles::new(0.0, f64::INFINITY, 0.0)).is_err());
}
