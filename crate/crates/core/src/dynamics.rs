//! Quasi-static balance of a finger driven by two antagonistic cables.
//!
//! The flexor runs along the palmar side and terminates at the fingertip, so
//! flexing any joint takes up flexor length. The extensor runs along the back
//! and terminates at the proximal phalanx; flexion pays it out. Cables are
//! inextensible and can only pull:
//!
//! ```text
//! flexor   taut:  Σ r_f·θ  =  δ_f        slack:  Σ r_f·θ  >  δ_f
//! extensor taut:  Σ r_e·θ  = -δ_e        slack:  Σ r_e·θ  < -δ_e
//! ```
//!
//! where `δ` is the length reeled in by each motor spool (negative values pay
//! cable out). The silicone skin acts as a torsional spring at each joint.
//! The equilibrium is the minimiser of
//!
//! ```text
//! E(q) = Σ ½ k_i θ_i² − τ_ext · q
//! ```
//!
//! over the joint-limit box and both cable inequalities. Tensions are the
//! Lagrange multipliers of the cable constraints.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{jacobian, FingerGeometry, JointAngles, KinematicsError, PlanarPoint};

/// Cable routing: moment arms per joint, ordered `[θ1, θ2, θ3]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTendon", into = "RawTendon")]
pub struct TendonConfig {
    flexor_arms: [f64; 3],
    extensor_arms: [f64; 3],
    spool_radius: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTendon {
    flexor_arms: [f64; 3],
    extensor_arms: [f64; 3],
    spool_radius: f64,
}

impl TryFrom<RawTendon> for TendonConfig {
    type Error = DynamicsError;
    fn try_from(r: RawTendon) -> Result<Self, Self::Error> {
        TendonConfig::new(r.flexor_arms, r.extensor_arms, r.spool_radius)
    }
}

impl From<TendonConfig> for RawTendon {
    fn from(t: TendonConfig) -> Self {
        RawTendon {
            flexor_arms: t.flexor_arms,
            extensor_arms: t.extensor_arms,
            spool_radius: t.spool_radius,
        }
    }
}

impl TendonConfig {
    pub fn new(
        flexor_arms: [f64; 3],
        extensor_arms: [f64; 3],
        spool_radius: f64,
    ) -> Result<Self, DynamicsError> {
        if flexor_arms.iter().any(|r| !r.is_finite() || *r <= 0.0) {
            return Err(DynamicsError::InvalidParameter(
                "flexor moment arms must be strictly positive at every joint".into(),
            ));
        }
        if extensor_arms.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(DynamicsError::InvalidParameter(
                "extensor moment arms must be non-negative".into(),
            ));
        }
        if extensor_arms[2] <= 0.0 {
            return Err(DynamicsError::InvalidParameter(
                "extensor must act on the proximal joint".into(),
            ));
        }
        if !spool_radius.is_finite() || spool_radius <= 0.0 {
            return Err(DynamicsError::InvalidParameter(
                "spool radius must be strictly positive".into(),
            ));
        }
        Ok(Self {
            flexor_arms,
            extensor_arms,
            spool_radius,
        })
    }

    pub fn flexor_arms(&self) -> [f64; 3] {
        self.flexor_arms
    }

    pub fn extensor_arms(&self) -> [f64; 3] {
        self.extensor_arms
    }

    pub fn spool_radius(&self) -> f64 {
        self.spool_radius
    }

    /// Flexor length taken up by pose `q`.
    pub fn flexor_excursion(&self, q: &JointAngles) -> f64 {
        dot(&self.flexor_arms, &q.as_array())
    }

    /// Extensor length paid out by pose `q`.
    pub fn extensor_excursion(&self, q: &JointAngles) -> f64 {
        dot(&self.extensor_arms, &q.as_array())
    }

    /// Cable displacements that hold `q` with both cables just taut.
    pub fn displacements_for(&self, q: &JointAngles) -> CableDisplacements {
        CableDisplacements {
            flexor: self.flexor_excursion(q),
            extensor: -self.extensor_excursion(q),
        }
    }
}

impl Default for TendonConfig {
    fn default() -> Self {
        Self {
            flexor_arms: [0.004; 3],
            extensor_arms: [0.0, 0.0, 0.005],
            spool_radius: 0.005,
        }
    }
}

/// Torsional stiffness and damping of the silicone skin around each joint.
///
/// Damping never changes an equilibrium; it only orders transients for display.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSkin", into = "RawSkin")]
pub struct SkinModel {
    stiffness: [f64; 3],
    damping: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSkin {
    stiffness: [f64; 3],
    #[serde(default)]
    damping: [f64; 3],
}

impl TryFrom<RawSkin> for SkinModel {
    type Error = DynamicsError;
    fn try_from(r: RawSkin) -> Result<Self, Self::Error> {
        SkinModel::new(r.stiffness, r.damping)
    }
}

impl From<SkinModel> for RawSkin {
    fn from(s: SkinModel) -> Self {
        RawSkin {
            stiffness: s.stiffness,
            damping: s.damping,
        }
    }
}

impl SkinModel {
    pub fn new(stiffness: [f64; 3], damping: [f64; 3]) -> Result<Self, DynamicsError> {
        if stiffness.iter().any(|k| !k.is_finite() || *k <= 0.0) {
            return Err(DynamicsError::InvalidParameter(
                "joint stiffness must be strictly positive".into(),
            ));
        }
        if damping.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(DynamicsError::InvalidParameter(
                "joint damping must be non-negative".into(),
            ));
        }
        Ok(Self { stiffness, damping })
    }

    pub fn stiffness(&self) -> [f64; 3] {
        self.stiffness
    }

    pub fn damping(&self) -> [f64; 3] {
        self.damping
    }

    /// Settling time constants `d_i / k_i`, seconds.
    pub fn time_constants(&self) -> [f64; 3] {
        [0, 1, 2].map(|i| self.damping[i] / self.stiffness[i])
    }
}

impl Default for SkinModel {
    fn default() -> Self {
        // 1 : 1.2 : 1.5 from distal to proximal.
        Self {
            stiffness: [0.010, 0.012, 0.015],
            damping: [1e-4, 1.2e-4, 1.5e-4],
        }
    }
}

/// Length reeled in by each motor spool, meters. Negative values pay out.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CableDisplacements {
    pub flexor: f64,
    pub extensor: f64,
}

impl CableDisplacements {
    pub const fn new(flexor: f64, extensor: f64) -> Self {
        Self { flexor, extensor }
    }
}

/// Which cable constraint could not be satisfied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CableConstraint {
    Flexor,
    Extensor,
    /// Each cable is satisfiable alone but not together.
    FlexorAndExtensor,
}

impl std::fmt::Display for CableConstraint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CableConstraint::Flexor => "flexor excursion",
            CableConstraint::Extensor => "extensor excursion",
            CableConstraint::FlexorAndExtensor => "combined flexor/extensor excursion",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("over-constrained cables: {constraint} cannot be met within the joint limits")]
    OverConstrained { constraint: CableConstraint },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

/// Balanced finger pose together with the forces that hold it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equilibrium {
    pub q: JointAngles,
    /// Cable tensions, newtons; zero when slack.
    pub flexor_tension: f64,
    pub extensor_tension: f64,
    /// Reaction torque of each joint stop, N·m. Positive when the lower stop
    /// pushes the joint up, negative when the upper stop pushes it down.
    pub limit_torques: [f64; 3],
    pub energy: f64,
}

impl Equilibrium {
    /// Net torque at each joint (spring, external, cables and stops).
    pub fn residual_torques(
        &self,
        tendon: &TendonConfig,
        skin: &SkinModel,
        ext_torque: &[f64; 3],
    ) -> [f64; 3] {
        let q = self.q.as_array();
        [0, 1, 2].map(|i| {
            -skin.stiffness[i] * q[i]
                + ext_torque[i]
                + self.flexor_tension * tendon.flexor_arms[i]
                - self.extensor_tension * tendon.extensor_arms[i]
                + self.limit_torques[i]
        })
    }
}

/// `Σ ½ k θ² − τ·θ`.
pub fn potential_energy(skin: &SkinModel, ext_torque: &[f64; 3], q: &JointAngles) -> f64 {
    let q = q.as_array();
    (0..3)
        .map(|i| 0.5 * skin.stiffness[i] * q[i] * q[i] - ext_torque[i] * q[i])
        .sum()
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[derive(Clone, Copy, PartialEq)]
enum Bound {
    Free,
    Lower,
    Upper,
}

const FEAS_TOL: f64 = 1e-12;

/// Quasi-static pose for the given cable displacements and external torques.
///
/// The problem is a strictly convex QP in three variables, so the solver
/// enumerates every combination of active joint stops and taut cables, solves
/// the KKT system of each and keeps the one that is primal and dual feasible.
/// `seed` only breaks ties between numerically equivalent candidates.
pub fn equilibrium(
    geom: &FingerGeometry,
    seed: &JointAngles,
    tendon: &TendonConfig,
    skin: &SkinModel,
    cables: CableDisplacements,
    ext_torque: [f64; 3],
) -> Result<Equilibrium, DynamicsError> {
    if !cables.flexor.is_finite() || !cables.extensor.is_finite() {
        return Err(DynamicsError::NonFinite("cable displacement"));
    }
    if ext_torque.iter().any(|t| !t.is_finite()) {
        return Err(DynamicsError::NonFinite("external torque"));
    }

    let limits = geom.limits();
    let lo = limits.map(|l| l.min);
    let hi = limits.map(|l| l.max);
    let k = skin.stiffness;

    // Both cables written as `a · q ≥ b`.
    let normals = [tendon.flexor_arms, tendon.extensor_arms.map(|r| -r)];
    let rhs = [cables.flexor, cables.extensor];

    let scale_q = hi.iter().chain(lo.iter()).fold(1.0_f64, |m, v| m.max(v.abs()));
    let scale_a = normals
        .iter()
        .flatten()
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    let scale_tau = (0..3)
        .map(|i| k[i] * scale_q + ext_torque[i].abs())
        .fold(0.0_f64, f64::max);
    let tol_q = FEAS_TOL * scale_q;
    let tol_c = FEAS_TOL * scale_a * scale_q * 3.0 + FEAS_TOL * rhs[0].abs().max(rhs[1].abs());
    let tol_tau = 1e-10 * scale_tau.max(f64::MIN_POSITIVE);

    let mut best: Option<(Equilibrium, f64)> = None;
    const BOUNDS: [Bound; 3] = [Bound::Free, Bound::Lower, Bound::Upper];

    for b1 in BOUNDS {
        for b2 in BOUNDS {
            for b3 in BOUNDS {
                let bounds = [b1, b2, b3];
                for active_mask in 0u8..4 {
                    let active: Vec<usize> = (0..2).filter(|c| active_mask & (1 << c) != 0).collect();
                    let Some(candidate) = solve_active_set(
                        &bounds, &active, &normals, &rhs, &k, &ext_torque, &lo, &hi,
                    ) else {
                        continue;
                    };
                    let (q, lambda) = candidate;

                    // Primal feasibility.
                    if (0..3).any(|i| q[i] < lo[i] - tol_q || q[i] > hi[i] + tol_q) {
                        continue;
                    }
                    if (0..2).any(|c| dot(&normals[c], &q) < rhs[c] - tol_c) {
                        continue;
                    }
                    // Dual feasibility: tensions pull, stops push.
                    if lambda.iter().any(|l| *l < -tol_tau / scale_a.max(f64::MIN_POSITIVE)) {
                        continue;
                    }
                    let mut stop = [0.0; 3];
                    let mut dual_ok = true;
                    for i in 0..3 {
                        let g = k[i] * q[i]
                            - ext_torque[i]
                            - lambda[0] * normals[0][i]
                            - lambda[1] * normals[1][i];
                        match bounds[i] {
                            Bound::Free => {}
                            Bound::Lower => {
                                dual_ok &= g >= -tol_tau;
                                stop[i] = g.max(0.0);
                            }
                            Bound::Upper => {
                                dual_ok &= g <= tol_tau;
                                stop[i] = g.min(0.0);
                            }
                        }
                    }
                    if !dual_ok {
                        continue;
                    }

                    let q = JointAngles::from_array([0, 1, 2].map(|i| q[i].clamp(lo[i], hi[i])));
                    let eq = Equilibrium {
                        q,
                        flexor_tension: lambda[0].max(0.0),
                        extensor_tension: lambda[1].max(0.0),
                        limit_torques: stop,
                        energy: potential_energy(skin, &ext_torque, &q),
                    };
                    let tie = eq.q.distance(seed);
                    let better = match &best {
                        None => true,
                        Some((b, btie)) => {
                            eq.energy < b.energy - 1e-15
                                || ((eq.energy - b.energy).abs() <= 1e-15 && tie < *btie)
                        }
                    };
                    if better {
                        best = Some((eq, tie));
                    }
                }
            }
        }
    }

    match best {
        Some((eq, _)) => Ok(eq),
        None => Err(DynamicsError::OverConstrained {
            constraint: diagnose_infeasible(&normals, &rhs, &lo, &hi),
        }),
    }
}

/// Stationary point of one active set, or `None` if its KKT system is singular.
#[allow(clippy::too_many_arguments)]
fn solve_active_set(
    bounds: &[Bound; 3],
    active: &[usize],
    normals: &[[f64; 3]; 2],
    rhs: &[f64; 2],
    k: &[f64; 3],
    tau: &[f64; 3],
    lo: &[f64; 3],
    hi: &[f64; 3],
) -> Option<([f64; 3], [f64; 2])> {
    let mut q = [0.0; 3];
    for i in 0..3 {
        q[i] = match bounds[i] {
            Bound::Free => tau[i] / k[i],
            Bound::Lower => lo[i],
            Bound::Upper => hi[i],
        };
    }

    // For free joints θ_i = (τ_i + Σ_c λ_c a_ci) / k_i; substitute into the
    // active constraints to get a small system M λ = r.
    let mut m = [[0.0; 2]; 2];
    let mut r = [0.0; 2];
    for (row, &c) in active.iter().enumerate() {
        r[row] = rhs[c] - dot(&normals[c], &q);
        for (col, &d) in active.iter().enumerate() {
            m[row][col] = (0..3)
                .filter(|&i| bounds[i] == Bound::Free)
                .map(|i| normals[c][i] * normals[d][i] / k[i])
                .sum();
        }
    }

    let mut lambda = [0.0; 2];
    match active.len() {
        0 => {}
        1 => {
            if m[0][0].abs() <= f64::EPSILON * 1e-6 {
                return None;
            }
            lambda[active[0]] = r[0] / m[0][0];
        }
        _ => {
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            let scale = m[0][0].abs() * m[1][1].abs();
            if det.abs() <= 1e-10 * scale || scale == 0.0 {
                return None;
            }
            lambda[active[0]] = (m[1][1] * r[0] - m[0][1] * r[1]) / det;
            lambda[active[1]] = (m[0][0] * r[1] - m[1][0] * r[0]) / det;
        }
    }

    for i in 0..3 {
        if bounds[i] == Bound::Free {
            q[i] += (lambda[0] * normals[0][i] + lambda[1] * normals[1][i]) / k[i];
        }
    }
    Some((q, lambda))
}

fn diagnose_infeasible(
    normals: &[[f64; 3]; 2],
    rhs: &[f64; 2],
    lo: &[f64; 3],
    hi: &[f64; 3],
) -> CableConstraint {
    let max_over_box = |a: &[f64; 3]| -> f64 {
        (0..3).map(|i| if a[i] >= 0.0 { a[i] * hi[i] } else { a[i] * lo[i] }).sum()
    };
    if max_over_box(&normals[0]) < rhs[0] {
        CableConstraint::Flexor
    } else if max_over_box(&normals[1]) < rhs[1] {
        CableConstraint::Extensor
    } else {
        CableConstraint::FlexorAndExtensor
    }
}

/// Joint torques produced by a force applied at the fingertip, `Jᵀ · f`.
pub fn fingertip_force_to_torques(
    geom: &FingerGeometry,
    q: &JointAngles,
    force: &PlanarPoint,
) -> Result<[f64; 3], DynamicsError> {
    if !force.is_finite() {
        return Err(DynamicsError::NonFinite("fingertip force"));
    }
    Ok(jacobian(geom, q)?.transpose_mul([force.x, force.y]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slack_extensor(flexor: f64) -> CableDisplacements {
        CableDisplacements::new(flexor, -1.0)
    }

    #[test]
    fn rest_without_load() {
        let g = FingerGeometry::index_default();
        let eq = equilibrium(
            &g,
            &JointAngles::ZERO,
            &TendonConfig::default(),
            &SkinModel::default(),
            CableDisplacements::default(),
            [0.0; 3],
        )
        .unwrap();
        assert_eq!(eq.q, JointAngles::ZERO);
        assert_eq!(eq.energy, 0.0);
    }

    #[test]
    fn identical_joints_share_excursion() {
        let g = FingerGeometry::index_default();
        let r = 0.004;
        let tendon = TendonConfig::new([r; 3], [0.0, 0.0, 0.005], 0.005).unwrap();
        let skin = SkinModel::new([0.02; 3], [0.0; 3]).unwrap();
        let delta = 0.006;
        let eq = equilibrium(&g, &JointAngles::ZERO, &tendon, &skin, slack_extensor(delta), [0.0; 3])
            .unwrap();
        let want = delta / (3.0 * r);
        for a in eq.q.as_array() {
            assert!((a - want).abs() < 1e-12, "{a} vs {want}");
        }
        assert!(eq.flexor_tension > 0.0);
        assert_eq!(eq.extensor_tension, 0.0);
    }

    #[test]
    fn stiffer_joints_bend_less() {
        let g = FingerGeometry::index_default();
        let eq = equilibrium(
            &g,
            &JointAngles::ZERO,
            &TendonConfig::default(),
            &SkinModel::default(),
            slack_extensor(0.008),
            [0.0; 3],
        )
        .unwrap();
        let q = eq.q.as_array();
        assert!(q[0] > q[1] && q[1] > q[2]);
        assert!((q[0] / q[2] - 1.5).abs() < 1e-9);
    }

    #[test]
    fn interior_torque_balance() {
        let g = FingerGeometry::index_default();
        let tendon = TendonConfig::default();
        let skin = SkinModel::default();
        let tau = [1e-4, -5e-5, 2e-5];
        let eq = equilibrium(
            &g,
            &JointAngles::ZERO,
            &tendon,
            &skin,
            CableDisplacements::new(0.005, -0.002),
            tau,
        )
        .unwrap();
        for r in eq.residual_torques(&tendon, &skin, &tau) {
            assert!(r.abs() <= 1e-12, "residual {r}");
        }
    }

    #[test]
    fn pulling_both_cables_past_the_box_is_over_constrained() {
        let g = FingerGeometry::index_default();
        let tendon = TendonConfig::default();
        // Extensor reeled in forbids proximal flexion, limits forbid extension.
        let err = equilibrium(
            &g,
            &JointAngles::ZERO,
            &tendon,
            &SkinModel::default(),
            CableDisplacements::new(0.0, 0.001),
            [0.0; 3],
        )
        .unwrap_err();
        assert_eq!(
            err,
            DynamicsError::OverConstrained {
                constraint: CableConstraint::Extensor
            }
        );

        // Flexor asks for more excursion than the joints allow.
        let err = equilibrium(
            &g,
            &JointAngles::ZERO,
            &tendon,
            &SkinModel::default(),
            slack_extensor(0.05),
            [0.0; 3],
        )
        .unwrap_err();
        assert!(matches!(
            err,
            DynamicsError::OverConstrained {
                constraint: CableConstraint::Flexor
            }
        ));

        // Each alone is fine, together they contradict each other.
        let err = equilibrium(
            &g,
            &JointAngles::ZERO,
            &tendon,
            &SkinModel::default(),
            CableDisplacements::new(0.015, 0.0),
            [0.0; 3],
        )
        .unwrap_err();
        assert!(matches!(
            err,
            DynamicsError::OverConstrained {
                constraint: CableConstraint::FlexorAndExtensor
            }
        ));
    }

    #[test]
    fn taut_pair_reproduces_the_pose_it_was_computed_from() {
        let g = FingerGeometry::index_default();
        let tendon = TendonConfig::default();
        let skin = SkinModel::default();
        let target = JointAngles::new(0.9, 0.75, 0.3);
        let eq = equilibrium(
            &g,
            &JointAngles::ZERO,
            &tendon,
            &skin,
            tendon.displacements_for(&target),
            [0.0; 3],
        )
        .unwrap();
        assert!(eq.q.max_abs_diff(&target) < 1e-9, "{}", eq.q);
    }

    #[test]
    fn straight_finger_force_maps_to_lever_arms() {
        let g = FingerGeometry::index_default();
        let f = 0.3;
        let t = fingertip_force_to_torques(&g, &JointAngles::ZERO, &PlanarPoint::new(0.0, f)).unwrap();
        let want = [f * g.l0(), f * (g.l0() + g.l1()), f * (g.l0() + g.l1() + g.l2())];
        for i in 0..3 {
            assert!((t[i] - want[i]).abs() < 1e-15);
        }
        let z = fingertip_force_to_torques(&g, &JointAngles::ZERO, &PlanarPoint::ORIGIN).unwrap();
        assert_eq!(z, [0.0; 3]);
    }

    #[test]
    fn parameter_validation() {
        assert!(TendonConfig::new([0.004, 0.0, 0.004], [0.0, 0.0, 0.005], 0.005).is_err());
        assert!(TendonConfig::new([0.004; 3], [0.0; 3], 0.005).is_err());
        assert!(TendonConfig::new([0.004; 3], [0.0, -0.1, 0.005], 0.005).is_err());
        assert!(SkinModel::new([0.0, 1.0, 1.0], [0.0; 3]).is_err());
        let parsed: SkinModel = toml::from_str("stiffness = [0.01, 0.012, 0.015]").unwrap();
        assert_eq!(parsed.stiffness(), [0.01, 0.012, 0.015]);
    }
}
