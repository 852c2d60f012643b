//! Planar kinematics of a three-joint finger skeleton.
//!
//! A finger is four rigid bones joined by three pin joints. The chain is
//! composed from the root outwards as `H3 · H2 · H1 · [l0, 0, 1]ᵀ`, where each
//! `Hi` rotates by `θi` and then translates by `li` along the parent x-axis.
//! That ordering fixes the conventions used throughout the crate:
//!
//! * `θ3` is the proximal (base) joint, `θ2` the middle joint and `θ1` the
//!   distal joint.
//! * `l3` is an unrotated root offset from the finger root to the proximal
//!   joint, `l2` the proximal phalanx, `l1` the middle phalanx and `l0` the
//!   distal phalanx ending at the fingertip.
//! * Positive angles flex the finger towards +y.
//!
//! Arrays indexed by joint (`[f64; 3]`) always use the order `[θ1, θ2, θ3]`.

use std::f64::consts::FRAC_PI_2;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by the geometric core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum KinematicsError {
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("workspace sampling needs at least 2 samples per joint, got {0}")]
    TooFewSamples(usize),
}

/// Closed interval of admissible angles for one joint, radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLimit {
    pub min: f64,
    pub max: f64,
}

impl JointLimit {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    /// Flexion-only range `[0, π/2]`.
    pub const FLEXION: JointLimit = JointLimit::new(0.0, FRAC_PI_2);

    pub fn contains(&self, angle: f64) -> bool {
        angle >= self.min && angle <= self.max
    }

    pub fn clamp(&self, angle: f64) -> f64 {
        angle.clamp(self.min, self.max)
    }

    pub fn span(&self) -> f64 {
        self.max - self.min
    }
}

/// Link lengths and joint limits of one finger.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGeometry", into = "RawGeometry")]
pub struct FingerGeometry {
    /// `[l0, l1, l2, l3]`, meters.
    lengths: [f64; 4],
    /// Limits for `[θ1, θ2, θ3]`.
    limits: [JointLimit; 3],
}

impl FingerGeometry {
    pub fn new(lengths: [f64; 4], limits: [JointLimit; 3]) -> Result<Self, KinematicsError> {
        for (i, l) in lengths.iter().enumerate() {
            if !l.is_finite() || *l <= 0.0 {
                return Err(KinematicsError::InvalidGeometry(format!(
                    "length l{i} must be finite and strictly positive, got {l}"
                )));
            }
        }
        for (i, lim) in limits.iter().enumerate() {
            if !lim.min.is_finite() || !lim.max.is_finite() || lim.min >= lim.max {
                return Err(KinematicsError::InvalidGeometry(format!(
                    "joint {} limits must satisfy min < max, got [{}, {}]",
                    i + 1,
                    lim.min,
                    lim.max
                )));
            }
            if !lim.contains(0.0) {
                return Err(KinematicsError::InvalidGeometry(format!(
                    "joint {} limits [{}, {}] exclude the neutral pose",
                    i + 1,
                    lim.min,
                    lim.max
                )));
            }
        }
        Ok(Self { lengths, limits })
    }

    /// Same lengths for all four links and `[0, π/2]` limits.
    pub fn uniform(length: f64) -> Result<Self, KinematicsError> {
        Self::new([length; 4], [JointLimit::FLEXION; 3])
    }

    /// Human-index-like proportions used when no preset file is available.
    pub fn index_default() -> Self {
        Self::new([0.024, 0.025, 0.031, 0.045], [JointLimit::FLEXION; 3])
            .expect("built-in geometry is valid")
    }

    pub fn lengths(&self) -> [f64; 4] {
        self.lengths
    }

    pub fn limits(&self) -> [JointLimit; 3] {
        self.limits
    }

    pub fn l0(&self) -> f64 {
        self.lengths[0]
    }
    pub fn l1(&self) -> f64 {
        self.lengths[1]
    }
    pub fn l2(&self) -> f64 {
        self.lengths[2]
    }
    pub fn l3(&self) -> f64 {
        self.lengths[3]
    }

    /// Distance from the root to the tip of the straight finger.
    pub fn reach(&self) -> f64 {
        self.lengths.iter().sum()
    }

    pub fn with_limits(mut self, limits: [JointLimit; 3]) -> Result<Self, KinematicsError> {
        self.limits = limits;
        Self::new(self.lengths, self.limits)
    }

    pub fn contains(&self, q: &JointAngles) -> bool {
        q.as_array()
            .iter()
            .zip(self.limits.iter())
            .all(|(a, lim)| lim.contains(*a))
    }

    pub fn clamp(&self, q: &JointAngles) -> JointAngles {
        let a = q.as_array();
        JointAngles::from_array([
            self.limits[0].clamp(a[0]),
            self.limits[1].clamp(a[1]),
            self.limits[2].clamp(a[2]),
        ])
    }

    /// Stable 32-bit fingerprint of the geometry, used to tag HELLO frames.
    pub fn fingerprint(&self) -> u32 {
        let mut hasher = crc32fast::Hasher::new();
        for l in self.lengths {
            hasher.update(&l.to_le_bytes());
        }
        for lim in self.limits {
            hasher.update(&lim.min.to_le_bytes());
            hasher.update(&lim.max.to_le_bytes());
        }
        hasher.finalize()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGeometry {
    l0: f64,
    l1: f64,
    l2: f64,
    l3: f64,
    #[serde(default = "flexion_limits")]
    limits: [[f64; 2]; 3],
}

fn flexion_limits() -> [[f64; 2]; 3] {
    [[0.0, FRAC_PI_2]; 3]
}

impl TryFrom<RawGeometry> for FingerGeometry {
    type Error = KinematicsError;

    fn try_from(raw: RawGeometry) -> Result<Self, Self::Error> {
        let limits = raw.limits.map(|[min, max]| JointLimit::new(min, max));
        FingerGeometry::new([raw.l0, raw.l1, raw.l2, raw.l3], limits)
    }
}

impl From<FingerGeometry> for RawGeometry {
    fn from(g: FingerGeometry) -> Self {
        RawGeometry {
            l0: g.lengths[0],
            l1: g.lengths[1],
            l2: g.lengths[2],
            l3: g.lengths[3],
            limits: g.limits.map(|l| [l.min, l.max]),
        }
    }
}

/// Joint state `[θ1, θ2, θ3]` of one finger, radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointAngles {
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
}

impl JointAngles {
    pub const ZERO: JointAngles = JointAngles::new(0.0, 0.0, 0.0);

    pub const fn new(theta1: f64, theta2: f64, theta3: f64) -> Self {
        Self {
            theta1,
            theta2,
            theta3,
        }
    }

    pub const fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub const fn as_array(&self) -> [f64; 3] {
        [self.theta1, self.theta2, self.theta3]
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|a| a.is_finite())
    }

    /// Largest absolute per-joint difference.
    pub fn max_abs_diff(&self, other: &JointAngles) -> f64 {
        let (a, b) = (self.as_array(), other.as_array());
        (0..3).map(|i| (a[i] - b[i]).abs()).fold(0.0, f64::max)
    }

    /// Euclidean norm of the difference.
    pub fn distance(&self, other: &JointAngles) -> f64 {
        let (a, b) = (self.as_array(), other.as_array());
        (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt()
    }
}

impl fmt::Display for JointAngles {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.5}, {:.5}, {:.5})", self.theta1, self.theta2, self.theta3)
    }
}

/// A point in the finger (or hand) plane, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanarPoint {
    pub x: f64,
    pub y: f64,
}

impl PlanarPoint {
    pub const ORIGIN: PlanarPoint = PlanarPoint::new(0.0, 0.0);

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &PlanarPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// `∂p_tip / ∂(θ1, θ2, θ3)`; row 0 is x, row 1 is y.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jacobian(pub [[f64; 3]; 2]);

impl Jacobian {
    pub fn column(&self, joint: usize) -> [f64; 2] {
        [self.0[0][joint], self.0[1][joint]]
    }

    /// `Jᵀ · v` for a planar vector `v`.
    pub fn transpose_mul(&self, v: [f64; 2]) -> [f64; 3] {
        let j = &self.0;
        [
            j[0][0] * v[0] + j[1][0] * v[1],
            j[0][1] * v[0] + j[1][1] * v[1],
            j[0][2] * v[0] + j[1][2] * v[1],
        ]
    }
}

fn check_finite(q: &JointAngles) -> Result<(), KinematicsError> {
    if q.is_finite() {
        Ok(())
    } else {
        Err(KinematicsError::NonFinite("joint angles"))
    }
}

/// Fingertip position in the finger root frame.
pub fn forward_kinematics(
    geom: &FingerGeometry,
    q: &JointAngles,
) -> Result<PlanarPoint, KinematicsError> {
    Ok(joint_positions(geom, q)?[3])
}

/// Proximal joint, middle joint, distal joint and fingertip, in the root frame.
pub fn joint_positions(
    geom: &FingerGeometry,
    q: &JointAngles,
) -> Result<[PlanarPoint; 4], KinematicsError> {
    check_finite(q)?;
    let [l0, l1, l2, l3] = geom.lengths;
    let a3 = q.theta3;
    let a23 = a3 + q.theta2;
    let a123 = a23 + q.theta1;

    let proximal = PlanarPoint::new(l3, 0.0);
    let middle = PlanarPoint::new(proximal.x + l2 * a3.cos(), proximal.y + l2 * a3.sin());
    let distal = PlanarPoint::new(middle.x + l1 * a23.cos(), middle.y + l1 * a23.sin());
    let tip = PlanarPoint::new(distal.x + l0 * a123.cos(), distal.y + l0 * a123.sin());
    Ok([proximal, middle, distal, tip])
}

/// Analytic Jacobian of the fingertip position.
pub fn jacobian(geom: &FingerGeometry, q: &JointAngles) -> Result<Jacobian, KinematicsError> {
    check_finite(q)?;
    let [l0, l1, l2, _] = geom.lengths;
    let a3 = q.theta3;
    let a23 = a3 + q.theta2;
    let a123 = a23 + q.theta1;

    let d1 = [-l0 * a123.sin(), l0 * a123.cos()];
    let d2 = [d1[0] - l1 * a23.sin(), d1[1] + l1 * a23.cos()];
    let d3 = [d2[0] - l2 * a3.sin(), d2[1] + l2 * a3.cos()];
    Ok(Jacobian([[d1[0], d2[0], d3[0]], [d1[1], d2[1], d3[1]]]))
}

/// Tuning of the damped-least-squares solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkOptions {
    /// Damping factor, expressed in units of the finger reach so the solver
    /// behaves the same for every finger size.
    pub damping: f64,
    /// Residual (meters) under which a target counts as reached.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for IkOptions {
    fn default() -> Self {
        Self {
            damping: 0.05,
            tolerance: 1e-4,
            max_iterations: 500,
        }
    }
}

/// Outcome of an inverse-kinematics query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IkSolution {
    Reached {
        q: JointAngles,
        residual: f64,
        iterations: usize,
    },
    /// Best configuration found; the target was not reached within tolerance.
    Unreached { q: JointAngles, residual: f64 },
}

impl IkSolution {
    pub fn q(&self) -> JointAngles {
        match self {
            IkSolution::Reached { q, .. } | IkSolution::Unreached { q, .. } => *q,
        }
    }

    pub fn residual(&self) -> f64 {
        match self {
            IkSolution::Reached { residual, .. } | IkSolution::Unreached { residual, .. } => {
                *residual
            }
        }
    }

    pub fn is_reached(&self) -> bool {
        matches!(self, IkSolution::Reached { .. })
    }
}

/// Damped-least-squares IK with per-step clamping to the joint limits.
pub fn inverse_kinematics(
    geom: &FingerGeometry,
    target: &PlanarPoint,
    seed: &JointAngles,
) -> Result<IkSolution, KinematicsError> {
    inverse_kinematics_with(geom, target, seed, &IkOptions::default())
}

pub fn inverse_kinematics_with(
    geom: &FingerGeometry,
    target: &PlanarPoint,
    seed: &JointAngles,
    opts: &IkOptions,
) -> Result<IkSolution, KinematicsError> {
    if !target.is_finite() {
        return Err(KinematicsError::NonFinite("target"));
    }
    check_finite(seed)?;

    // Work in units of the finger reach so that the damping is dimensionless.
    let scale = geom.reach();
    let lambda_sq = opts.damping * opts.damping;
    // Keep iterating past the acceptance tolerance to return a tight solution.
    let polish = opts.tolerance * 1e-3;

    let mut q = geom.clamp(seed);
    let mut best = (q, f64::INFINITY);

    for iteration in 0..=opts.max_iterations {
        let tip = forward_kinematics(geom, &q)?;
        let err = [target.x - tip.x, target.y - tip.y];
        let residual = err[0].hypot(err[1]);
        if residual < best.1 {
            best = (q, residual);
        }
        if residual <= polish || iteration == opts.max_iterations {
            if best.1 <= opts.tolerance {
                return Ok(IkSolution::Reached {
                    q: best.0,
                    residual: best.1,
                    iterations: iteration,
                });
            }
            break;
        }

        let j = jacobian(geom, &q)?.0;
        let e = [err[0] / scale, err[1] / scale];
        let jn = j.map(|row| row.map(|v| v / scale));

        // (J Jᵀ + λ² I) w = e, then Δq = Jᵀ w.
        let a = jn[0].iter().map(|v| v * v).sum::<f64>() + lambda_sq;
        let b = (0..3).map(|i| jn[0][i] * jn[1][i]).sum::<f64>();
        let d = jn[1].iter().map(|v| v * v).sum::<f64>() + lambda_sq;
        let det = a * d - b * b;
        let w = [(d * e[0] - b * e[1]) / det, (a * e[1] - b * e[0]) / det];
        let dq = [
            jn[0][0] * w[0] + jn[1][0] * w[1],
            jn[0][1] * w[0] + jn[1][1] * w[1],
            jn[0][2] * w[0] + jn[1][2] * w[1],
        ];
        let next = q.as_array();
        q = geom.clamp(&JointAngles::from_array([
            next[0] + dq[0],
            next[1] + dq[1],
            next[2] + dq[2],
        ]));
    }

    if best.1 <= opts.tolerance {
        return Ok(IkSolution::Reached {
            q: best.0,
            residual: best.1,
            iterations: opts.max_iterations,
        });
    }
    Ok(IkSolution::Unreached {
        q: best.0,
        residual: best.1,
    })
}

/// Finger slots of a MANO hand pose, in the model's own ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManoFinger {
    Index = 0,
    Middle = 1,
    Little = 2,
    Ring = 3,
    Thumb = 4,
}

impl ManoFinger {
    pub const ALL: [ManoFinger; 5] = [
        ManoFinger::Index,
        ManoFinger::Middle,
        ManoFinger::Little,
        ManoFinger::Ring,
        ManoFinger::Thumb,
    ];

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Which axis of each MANO ball joint carries flexion, per finger.
///
/// Each finger has three ball joints (base to tip), each with three
/// axis-angle parameters. A single-DoF pin joint only drives one of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManoLayout {
    pub flexion_axis: [usize; 5],
}

impl Default for ManoLayout {
    fn default() -> Self {
        // Fingers curl about the local z axis; the thumb chain is rotated in
        // the template so its curl lands on y.
        Self {
            flexion_axis: [2, 2, 2, 2, 1],
        }
    }
}

impl ManoLayout {
    /// Parameter slots (within the finger's 9-vector) holding the flexion of
    /// the proximal, middle and distal ball joints.
    pub fn flexion_slots(&self, finger: ManoFinger) -> [usize; 3] {
        let axis = self.flexion_axis[finger.index()].min(2);
        [axis, 3 + axis, 6 + axis]
    }

    /// 9 per-finger pose parameters with only the flexion slots populated.
    pub fn parameters(&self, q: &JointAngles, finger: ManoFinger) -> [f64; 9] {
        let mut out = [0.0; 9];
        let [proximal, middle, distal] = self.flexion_slots(finger);
        out[proximal] = q.theta3;
        out[middle] = q.theta2;
        out[distal] = q.theta1;
        out
    }
}

/// MANO parameters for one finger using the default axis layout.
pub fn mano_parameters(q: &JointAngles, finger: ManoFinger) -> [f64; 9] {
    ManoLayout::default().parameters(q, finger)
}

/// Fingertip positions over an `n³` grid spanning the joint limits.
pub fn sample_workspace(
    geom: &FingerGeometry,
    n_per_joint: usize,
) -> Result<Vec<PlanarPoint>, KinematicsError> {
    if n_per_joint < 2 {
        return Err(KinematicsError::TooFewSamples(n_per_joint));
    }
    let axis = |lim: JointLimit| -> Vec<f64> {
        (0..n_per_joint)
            .map(|i| lim.min + lim.span() * i as f64 / (n_per_joint - 1) as f64)
            .collect()
    };
    let [g1, g2, g3] = geom.limits.map(axis);
    let mut out = Vec::with_capacity(n_per_joint.pow(3));
    for &t3 in &g3 {
        for &t2 in &g2 {
            for &t1 in &g1 {
                out.push(forward_kinematics(geom, &JointAngles::new(t1, t2, t3))?);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn unit() -> FingerGeometry {
        FingerGeometry::uniform(1.0).unwrap()
    }

    fn close(a: PlanarPoint, b: PlanarPoint) -> bool {
        a.distance(&b) < 1e-12
    }

    #[test]
    fn straight_finger_tip_is_sum_of_lengths() {
        let tip = forward_kinematics(&unit(), &JointAngles::ZERO).unwrap();
        assert!(close(tip, PlanarPoint::new(4.0, 0.0)));
    }

    #[test]
    fn proximal_right_angle_keeps_root_offset_on_x() {
        let tip = forward_kinematics(&unit(), &JointAngles::new(0.0, 0.0, PI / 2.0)).unwrap();
        assert!(close(tip, PlanarPoint::new(1.0, 3.0)));
    }

    #[test]
    fn joint_positions_examples() {
        let pts = joint_positions(&unit(), &JointAngles::ZERO).unwrap();
        let want = [(1.0, 0.0), (2.0, 0.0), (3.0, 0.0), (4.0, 0.0)];
        for (p, (x, y)) in pts.iter().zip(want) {
            assert!(close(*p, PlanarPoint::new(x, y)));
        }
        let pts = joint_positions(&unit(), &JointAngles::new(0.0, 0.0, PI / 2.0)).unwrap();
        let want = [(1.0, 0.0), (1.0, 1.0), (1.0, 2.0), (1.0, 3.0)];
        for (p, (x, y)) in pts.iter().zip(want) {
            assert!(close(*p, PlanarPoint::new(x, y)));
        }
    }

    #[test]
    fn non_finite_input_is_a_domain_error() {
        let q = JointAngles::new(f64::NAN, 0.0, 0.0);
        assert!(matches!(
            forward_kinematics(&unit(), &q),
            Err(KinematicsError::NonFinite(_))
        ));
        assert!(jacobian(&unit(), &q).is_err());
        assert!(inverse_kinematics(
            &unit(),
            &PlanarPoint::new(f64::INFINITY, 0.0),
            &JointAngles::ZERO
        )
        .is_err());
    }

    #[test]
    fn proximal_jacobian_column_at_rest() {
        let g = FingerGeometry::index_default();
        let j = jacobian(&g, &JointAngles::ZERO).unwrap();
        let col = j.column(2);
        assert_eq!(col[0], 0.0);
        assert!((col[1] - (g.l0() + g.l1() + g.l2())).abs() < 1e-15);
    }

    #[test]
    fn geometry_validation() {
        assert!(FingerGeometry::new([1.0, 0.0, 1.0, 1.0], [JointLimit::FLEXION; 3]).is_err());
        assert!(FingerGeometry::new([1.0; 4], [JointLimit::new(0.1, 1.0); 3]).is_err());
        assert!(FingerGeometry::new([1.0; 4], [JointLimit::new(1.0, 1.0); 3]).is_err());
        assert!(FingerGeometry::new([1.0; 4], [JointLimit::new(-0.2, FRAC_PI_2); 3]).is_ok());
    }

    #[test]
    fn geometry_parses_from_key_value_text() {
        let g: FingerGeometry =
            toml::from_str("l0 = 0.024\nl1 = 0.025\nl2 = 0.031\nl3 = 0.045\n").unwrap();
        assert_eq!(g, FingerGeometry::index_default());
        let bad = toml::from_str::<FingerGeometry>("l0 = -1\nl1 = 1\nl2 = 1\nl3 = 1\n");
        assert!(bad.is_err());
    }

    #[test]
    fn ik_fixed_point_at_seed() {
        let g = FingerGeometry::index_default();
        let q = JointAngles::new(0.3, 0.7, 0.2);
        let target = forward_kinematics(&g, &q).unwrap();
        let sol = inverse_kinematics(&g, &target, &q).unwrap();
        assert!(sol.is_reached());
        assert_eq!(sol.q(), q);
        assert_eq!(sol.residual(), 0.0);
    }

    #[test]
    fn ik_outside_reach_is_unreached() {
        let g = unit();
        let sol = inverse_kinematics(&g, &PlanarPoint::new(5.0, 0.0), &JointAngles::ZERO).unwrap();
        assert!(!sol.is_reached());
        assert!(sol.residual() >= 1.0);
    }

    #[test]
    fn mano_rest_is_zero_and_sparse_otherwise() {
        for f in ManoFinger::ALL {
            assert_eq!(mano_parameters(&JointAngles::ZERO, f), [0.0; 9]);
            let p = mano_parameters(&JointAngles::new(0.1, 0.2, 0.3), f);
            let mut nz: Vec<f64> = p.iter().copied().filter(|v| *v != 0.0).collect();
            nz.sort_by(f64::total_cmp);
            assert_eq!(nz, vec![0.1, 0.2, 0.3]);
        }
        assert_eq!(ManoFinger::from_index(5), None);
    }

    #[test]
    fn workspace_corners_and_size() {
        let g = unit();
        let pts = sample_workspace(&g, 2).unwrap();
        assert_eq!(pts.len(), 8);
        let corner = forward_kinematics(&g, &JointAngles::new(FRAC_PI_2, 0.0, FRAC_PI_2)).unwrap();
        assert!(pts.iter().any(|p| close(*p, corner)));
        assert!(matches!(
            sample_workspace(&g, 1),
            Err(KinematicsError::TooFewSamples(1))
        ));
    }
}
