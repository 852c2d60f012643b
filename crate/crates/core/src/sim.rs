//! Time-stepped simulation of one finger: motors, cables, skin and encoders.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::dynamics::{
    equilibrium, fingertip_force_to_torques, CableDisplacements, DynamicsError, SkinModel,
    TendonConfig,
};
use crate::kinematics::{FingerGeometry, JointAngles, PlanarPoint};
use crate::sensor::SensorModel;

/// Spool motor limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotorConfig {
    /// Default slew rate, rad/s of spool rotation.
    pub rate_limit: f64,
    /// Symmetric travel bound on the spool angle, radians.
    pub travel: f64,
}

impl Default for MotorConfig {
    fn default() -> Self {
        Self {
            rate_limit: 10.0,
            travel: TAU,
        }
    }
}

/// Angles, targets and slew rates of the flexor and extensor spools.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MotorState {
    pub flexor_angle: f64,
    pub extensor_angle: f64,
    pub flexor_target: f64,
    pub extensor_target: f64,
    /// rad/s
    pub flexor_rate: f64,
    pub extensor_rate: f64,
}

impl MotorState {
    pub fn at_rest(rate: f64) -> Self {
        Self {
            flexor_rate: rate,
            extensor_rate: rate,
            ..Self::default()
        }
    }

    pub fn is_settled(&self) -> bool {
        self.flexor_angle == self.flexor_target && self.extensor_angle == self.extensor_target
    }

    fn advanced(&self, dt: f64) -> Self {
        let slew = |angle: f64, target: f64, rate: f64| {
            let max = rate * dt;
            let delta = target - angle;
            if delta.abs() <= max {
                target
            } else {
                angle + max.copysign(delta)
            }
        };
        Self {
            flexor_angle: slew(self.flexor_angle, self.flexor_target, self.flexor_rate),
            extensor_angle: slew(self.extensor_angle, self.extensor_target, self.extensor_rate),
            ..*self
        }
    }
}

/// External joint torques applied for a time window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    /// N·m, ordered `[θ1, θ2, θ3]`.
    pub torques: [f64; 3],
    /// Seconds of simulation time.
    pub start: f64,
    pub duration: f64,
}

impl Perturbation {
    pub fn new(torques: [f64; 3], start: f64, duration: f64) -> Result<Self, DynamicsError> {
        if !(duration > 0.0) || !duration.is_finite() {
            return Err(DynamicsError::InvalidParameter(format!(
                "perturbation duration must be > 0, got {duration}"
            )));
        }
        if !start.is_finite() || torques.iter().any(|t| !t.is_finite()) {
            return Err(DynamicsError::NonFinite("perturbation"));
        }
        Ok(Self {
            torques,
            start,
            duration,
        })
    }

    pub fn is_active(&self, t: f64) -> bool {
        t >= self.start && t < self.start + self.duration
    }

    fn expired(&self, t: f64) -> bool {
        t >= self.start + self.duration
    }
}

/// Everything physical about one finger.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FingerParams {
    pub geometry: FingerGeometry,
    #[serde(default)]
    pub tendon: TendonConfig,
    #[serde(default)]
    pub skin: SkinModel,
    #[serde(default)]
    pub sensor: SensorModel,
    #[serde(default)]
    pub motor: MotorConfig,
}

impl FingerParams {
    pub fn with_geometry(geometry: FingerGeometry) -> Self {
        Self {
            geometry,
            tendon: TendonConfig::default(),
            skin: SkinModel::default(),
            sensor: SensorModel::default(),
            motor: MotorConfig::default(),
        }
    }

    /// Spool targets that hold `q` with both cables taut.
    pub fn motor_targets_for(&self, q: &JointAngles) -> (f64, f64) {
        let d = self.tendon.displacements_for(&self.geometry.clamp(q));
        let r = self.tendon.spool_radius();
        (d.flexor / r, d.extensor / r)
    }
}

/// One sensor sweep: encoder angles plus the motor snapshot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorReading {
    pub q: JointAngles,
    pub motors: MotorState,
}

/// Simulation state of one finger.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerSim {
    params: FingerParams,
    motors: MotorState,
    q: JointAngles,
    /// Pose one step ago; encoders report with one sample of latency.
    sensed: JointAngles,
    time_us: u64,
    perturbations: Vec<Perturbation>,
}

impl FingerSim {
    pub fn new(params: FingerParams) -> Self {
        Self {
            motors: MotorState::at_rest(params.motor.rate_limit),
            params,
            q: JointAngles::ZERO,
            sensed: JointAngles::ZERO,
            time_us: 0,
            perturbations: Vec::new(),
        }
    }

    pub fn params(&self) -> &FingerParams {
        &self.params
    }

    pub fn q(&self) -> JointAngles {
        self.q
    }

    pub fn motors(&self) -> MotorState {
        self.motors
    }

    pub fn time(&self) -> f64 {
        self.time_us as f64 * 1e-6
    }

    pub fn time_us(&self) -> u64 {
        self.time_us
    }

    pub fn perturbations(&self) -> &[Perturbation] {
        &self.perturbations
    }

    /// Place the finger at `q` directly, bypassing the actuators.
    pub fn set_pose(&mut self, q: JointAngles) {
        self.q = q;
        self.sensed = q;
    }

    pub fn cable_displacements(&self) -> CableDisplacements {
        let r = self.params.tendon.spool_radius();
        CableDisplacements::new(r * self.motors.flexor_angle, r * self.motors.extensor_angle)
    }

    /// New spool targets; both are clamped to the motor travel.
    pub fn set_motor_targets(&mut self, flexor: f64, extensor: f64, rates: Option<(f64, f64)>) {
        let travel = self.params.motor.travel;
        self.motors.flexor_target = flexor.clamp(-travel, travel);
        self.motors.extensor_target = extensor.clamp(-travel, travel);
        let (rf, re) = rates.unwrap_or((self.params.motor.rate_limit, self.params.motor.rate_limit));
        self.motors.flexor_rate = rf.abs();
        self.motors.extensor_rate = re.abs();
    }

    /// Drive both spools towards the pose `q`, arriving together.
    pub fn set_joint_targets(&mut self, q: &JointAngles) {
        let (flexor, extensor) = self.params.motor_targets_for(q);
        let df = (flexor - self.motors.flexor_angle).abs();
        let de = (extensor - self.motors.extensor_angle).abs();
        let rate = self.params.motor.rate_limit;
        let longest = df.max(de);
        let rates = if longest > 0.0 {
            (rate * df / longest, rate * de / longest)
        } else {
            (rate, rate)
        };
        self.set_motor_targets(flexor, extensor, Some(rates));
    }

    /// Hold the spools where they are.
    pub fn halt(&mut self) {
        self.motors.flexor_target = self.motors.flexor_angle;
        self.motors.extensor_target = self.motors.extensor_angle;
    }

    pub fn add_perturbation(&mut self, p: Perturbation) {
        self.perturbations.push(p);
    }

    /// Fingertip force applied for `duration` seconds starting now.
    pub fn push_fingertip(&mut self, force: PlanarPoint, duration: f64) -> Result<(), DynamicsError> {
        let torques = fingertip_force_to_torques(&self.params.geometry, &self.q, &force)?;
        self.add_perturbation(Perturbation::new(torques, self.time(), duration)?);
        Ok(())
    }

    fn external_torque(&self, t: f64) -> [f64; 3] {
        self.perturbations
            .iter()
            .filter(|p| p.is_active(t))
            .fold([0.0; 3], |acc, p| [0, 1, 2].map(|i| acc[i] + p.torques[i]))
    }

    /// Advance by `dt` seconds. On failure the state is left untouched.
    pub fn step(&mut self, dt: f64) -> Result<(), DynamicsError> {
        if !(dt > 0.0 && dt <= 0.05) {
            return Err(DynamicsError::InvalidParameter(format!(
                "step dt must be in (0, 0.05] s, got {dt}"
            )));
        }
        let dt_us = (dt * 1e6).round() as u64;
        let time_us = self.time_us + dt_us;
        let t = time_us as f64 * 1e-6;
        let motors = self.motors.advanced(dt);

        let r = self.params.tendon.spool_radius();
        let cables = CableDisplacements::new(r * motors.flexor_angle, r * motors.extensor_angle);
        let eq = equilibrium(
            &self.params.geometry,
            &self.q,
            &self.params.tendon,
            &self.params.skin,
            cables,
            self.external_torque(t),
        )?;

        self.sensed = self.q;
        self.q = eq.q;
        self.motors = motors;
        self.time_us = time_us;
        self.perturbations.retain(|p| !p.expired(t));
        Ok(())
    }

    /// Encoder readings (one step delayed) and the current motor snapshot.
    pub fn read_sensors<R: Rng + ?Sized>(&self, rng: &mut R) -> SensorReading {
        SensorReading {
            q: self.params.sensor.sample_joints(&self.sensed, rng),
            motors: self.motors,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn sim() -> FingerSim {
        FingerSim::new(FingerParams::with_geometry(FingerGeometry::index_default()))
    }

    #[test]
    fn idle_step_is_a_fixed_point() {
        let mut s = sim();
        let before = s.clone();
        for _ in 0..100 {
            s.step(0.002).unwrap();
        }
        assert_eq!(s.q(), before.q());
        assert_eq!(s.motors(), before.motors());
        assert_eq!(s.perturbations(), before.perturbations());
    }

    #[test]
    fn motors_respect_rate_limit() {
        let mut s = sim();
        s.set_motor_targets(2.0, -2.0, None);
        let mut last = s.motors();
        for _ in 0..200 {
            s.step(0.002).unwrap();
            let m = s.motors();
            assert!((m.flexor_angle - last.flexor_angle).abs() <= 10.0 * 0.002 + 1e-12);
            last = m;
        }
        assert!(s.motors().is_settled());
    }

    #[test]
    fn invalid_dt_rejected() {
        let mut s = sim();
        assert!(s.step(0.0).is_err());
        assert!(s.step(0.06).is_err());
    }

    #[test]
    fn perturbation_reverts_exactly() {
        let mut s = sim();
        s.set_joint_targets(&JointAngles::new(0.6, 0.5, 0.2));
        for _ in 0..300 {
            s.step(0.002).unwrap();
        }
        let settled = s.q();
        s.push_fingertip(PlanarPoint::new(0.0, 0.004), 0.1).unwrap();
        let mut deviated = false;
        for _ in 0..50 {
            s.step(0.002).unwrap();
            deviated |= s.q().max_abs_diff(&settled) > 1e-4;
        }
        for _ in 0..20 {
            s.step(0.002).unwrap();
        }
        assert!(deviated);
        assert!(s.q().max_abs_diff(&settled) <= 1e-6);
        assert!(s.perturbations().is_empty());
    }

    #[test]
    fn infeasible_step_leaves_state_untouched() {
        let mut s = sim();
        // Reel in the extensor with the joints already at their lower stops.
        s.set_motor_targets(0.0, 1.0, None);
        let before = s.clone();
        assert!(matches!(
            s.step(0.002),
            Err(DynamicsError::OverConstrained { .. })
        ));
        assert_eq!(s, before);
    }

    #[test]
    fn read_sensors_quantizes_lagged_pose() {
        let mut s = sim();
        s.params.sensor = SensorModel::noiseless(16);
        s.set_pose(JointAngles::new(PI, 0.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = s.read_sensors(&mut rng);
        assert_eq!(r.q.theta1, PI);
        assert_eq!(r.q.theta2, 0.0);
    }
}
