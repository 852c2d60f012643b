//! Per-finger controller.
//!
//! [`FingerNode`] is a sans-IO state machine: it consumes decoded frames and
//! the current time, and returns encoded frames to send. [`run`] wraps it with
//! a [`Transport`] and a [`Clock`] for live or virtual-time operation.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, info, warn};

use crate::clock::Clock;
use crate::dynamics::DynamicsError;
use crate::hand::Role;
use crate::kinematics::{JointAngles, PlanarPoint};
use crate::protocol::{
    encode, error_code, DecodeError, EncodeError, Frame, Header, Message, Microradians,
    StreamDecoder,
};
use crate::sim::{FingerParams, FingerSim, SensorReading};
use crate::transport::{Transport, TransportError};

#[derive(Debug, Error)]
pub enum NodeError {
    #[error("invalid node configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub finger_id: u8,
    pub role: Role,
    /// Hz
    pub pose_rate: f64,
    /// Hz
    pub motor_rate: f64,
    /// Simulation step, seconds.
    pub dt: f64,
    /// Seconds between heartbeats.
    pub heartbeat_interval: f64,
    pub params: FingerParams,
    pub seed: u64,
    pub reconnect_attempts: u32,
    /// Seconds between reconnect attempts.
    pub reconnect_backoff: f64,
}

impl NodeConfig {
    pub fn new(finger_id: u8, role: Role, params: FingerParams) -> Self {
        Self {
            finger_id,
            role,
            pose_rate: 200.0,
            motor_rate: 20.0,
            dt: 0.002,
            heartbeat_interval: 1.0,
            params,
            seed: 0,
            reconnect_attempts: 3,
            reconnect_backoff: 0.5,
        }
    }

    pub fn validate(&self) -> Result<(), NodeError> {
        let err = |m: String| Err(NodeError::Config(m));
        if !(self.motor_rate > 0.0) || !(self.pose_rate >= self.motor_rate) {
            return err(format!(
                "rates must satisfy pose_rate >= motor_rate > 0, got {} / {}",
                self.pose_rate, self.motor_rate
            ));
        }
        if !(self.dt > 0.0 && self.dt <= 1.0 / self.pose_rate + 1e-12) {
            return err(format!(
                "dt must be in (0, 1/pose_rate], got {} s at {} Hz",
                self.dt, self.pose_rate
            ));
        }
        if !(self.heartbeat_interval > 0.0) {
            return err("heartbeat interval must be > 0".into());
        }
        self.params.sensor.validate().map_err(NodeError::Config)?;
        Ok(())
    }

    fn period_us(seconds: f64) -> u64 {
        ((seconds * 1e6).round() as u64).max(1)
    }
}

/// Boundary between node logic and the finger itself. The simulated finger
/// implements it; a hardware driver would too.
pub trait FingerDriver {
    fn params(&self) -> &FingerParams;
    fn step(&mut self, dt: f64) -> Result<(), DynamicsError>;
    fn read_sensors(&mut self) -> SensorReading;
    /// Spool targets in radians; `rate` in rad/s or the driver default.
    fn set_motor_targets(&mut self, flexor: f64, extensor: f64, rate: Option<f64>);
    fn set_joint_targets(&mut self, q: &JointAngles);
    fn halt(&mut self);
    fn push_fingertip(&mut self, force: PlanarPoint, duration: f64) -> Result<(), DynamicsError>;
}

/// Simulated finger with a seeded sensor-noise generator.
#[derive(Debug, Clone)]
pub struct SimDriver {
    sim: FingerSim,
    rng: ChaCha8Rng,
}

impl SimDriver {
    pub fn new(params: FingerParams, seed: u64) -> Self {
        Self {
            sim: FingerSim::new(params),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn sim(&self) -> &FingerSim {
        &self.sim
    }
}

impl FingerDriver for SimDriver {
    fn params(&self) -> &FingerParams {
        self.sim.params()
    }

    fn step(&mut self, dt: f64) -> Result<(), DynamicsError> {
        self.sim.step(dt)
    }

    fn read_sensors(&mut self) -> SensorReading {
        self.sim.read_sensors(&mut self.rng)
    }

    fn set_motor_targets(&mut self, flexor: f64, extensor: f64, rate: Option<f64>) {
        self.sim
            .set_motor_targets(flexor, extensor, rate.map(|r| (r, r)));
    }

    fn set_joint_targets(&mut self, q: &JointAngles) {
        self.sim.set_joint_targets(q);
    }

    fn halt(&mut self) {
        self.sim.halt();
    }

    fn push_fingertip(&mut self, force: PlanarPoint, duration: f64) -> Result<(), DynamicsError> {
        self.sim.push_fingertip(force, duration)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lifecycle {
    /// HELLO sent, waiting for the coordinator to acknowledge.
    Init,
    Registered,
    Running,
    Stopping,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NodeStats {
    pub pose_frames: u64,
    pub motor_frames: u64,
    pub heartbeats: u64,
    pub commands_applied: u64,
    pub commands_dropped: u64,
    pub errors_sent: u64,
    pub stalls: u64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Sequences {
    pose: u32,
    motor: u32,
    control: u32,
}

#[derive(Debug, Clone, Copy)]
struct Schedule {
    step: u64,
    pose: u64,
    motor: u64,
    heartbeat: u64,
}

/// One finger controller.
#[derive(Debug, Clone)]
pub struct FingerNode<D: FingerDriver = SimDriver> {
    config: NodeConfig,
    driver: D,
    lifecycle: Lifecycle,
    last_command_seq: Option<u32>,
    seqs: Sequences,
    schedule: Option<Schedule>,
    stalled: bool,
    stats: NodeStats,
    dt_us: u64,
    pose_us: u64,
    motor_us: u64,
    heartbeat_us: u64,
}

impl FingerNode<SimDriver> {
    pub fn new(config: NodeConfig) -> Result<Self, NodeError> {
        let seed = config
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(config.finger_id as u64);
        Self::with_driver(config, SimDriver::new(config.params, seed))
    }
}

impl<D: FingerDriver> FingerNode<D> {
    pub fn with_driver(config: NodeConfig, driver: D) -> Result<Self, NodeError> {
        config.validate()?;
        Ok(Self {
            dt_us: NodeConfig::period_us(config.dt),
            pose_us: NodeConfig::period_us(1.0 / config.pose_rate),
            motor_us: NodeConfig::period_us(1.0 / config.motor_rate),
            heartbeat_us: NodeConfig::period_us(config.heartbeat_interval),
            config,
            driver,
            lifecycle: Lifecycle::Init,
            last_command_seq: None,
            seqs: Sequences::default(),
            schedule: None,
            stalled: false,
            stats: NodeStats::default(),
        })
    }

    pub fn config(&self) -> &NodeConfig {
        &self.config
    }

    pub fn driver(&self) -> &D {
        &self.driver
    }

    pub fn lifecycle(&self) -> Lifecycle {
        self.lifecycle
    }

    pub fn stats(&self) -> NodeStats {
        self.stats
    }

    pub fn finger_id(&self) -> u8 {
        self.config.finger_id
    }

    fn frame(&self, msg: &Message, seq: u32, now: u64) -> Vec<u8> {
        // Node-built messages always carry in-range angles and short payloads.
        encode(msg, Header::new(self.config.finger_id, seq, now)).expect("node frame encodes")
    }

    fn control(&mut self, msg: &Message, now: u64) -> Vec<u8> {
        let seq = self.seqs.control;
        self.seqs.control = self.seqs.control.wrapping_add(1);
        self.frame(msg, seq, now)
    }

    fn error_reply(&mut self, code: u16, text: impl Into<String>, now: u64) -> Vec<u8> {
        self.stats.errors_sent += 1;
        let msg = Message::error(code, text);
        self.control(&msg, now)
    }

    /// Start (or restart) registration: resets sequence state and returns the
    /// HELLO frame.
    pub fn hello(&mut self, now: u64) -> Vec<u8> {
        self.lifecycle = Lifecycle::Init;
        self.seqs = Sequences::default();
        self.last_command_seq = None;
        self.schedule = None;
        let msg = Message::Hello {
            kind: self.config.role,
            geometry_hash: self.driver.params().geometry.fingerprint(),
        };
        self.control(&msg, now)
    }

    pub fn stop(&mut self) {
        self.lifecycle = Lifecycle::Stopping;
        self.schedule = None;
    }

    /// Earliest time at which [`FingerNode::poll`] has work to do.
    pub fn next_deadline(&self) -> Option<u64> {
        self.schedule
            .map(|s| s.step.min(s.pose).min(s.motor).min(s.heartbeat))
    }

    /// Reply to bytes that could not be decoded.
    pub fn handle_decode_error(&mut self, err: &DecodeError, now: u64) -> Vec<Vec<u8>> {
        warn!(finger_id = self.config.finger_id, event = "malformed_frame", error = %err);
        vec![self.error_reply(error_code::MALFORMED, err.to_string(), now)]
    }

    /// Apply one frame from the coordinator.
    pub fn handle_frame(&mut self, frame: &Frame, now: u64) -> Vec<Vec<u8>> {
        let id = self.config.finger_id;
        if frame.header.finger_id != id {
            let text = format!(
                "frame addressed to finger {} reached finger {id}",
                frame.header.finger_id
            );
            return vec![self.error_reply(error_code::WRONG_FINGER, text, now)];
        }
        if let Some(last) = self.last_command_seq {
            if frame.header.seq <= last {
                self.stats.commands_dropped += 1;
                debug!(finger_id = id, event = "stale_command", seq = frame.header.seq, last);
                return Vec::new();
            }
        }

        match &frame.message {
            Message::Heartbeat => {
                self.last_command_seq = Some(frame.header.seq);
                if self.lifecycle == Lifecycle::Init {
                    self.lifecycle = Lifecycle::Registered;
                    self.schedule = Some(Schedule {
                        step: now + self.dt_us,
                        pose: now,
                        motor: now,
                        heartbeat: now + self.heartbeat_us,
                    });
                    info!(finger_id = id, event = "registered", at_us = now);
                }
                Vec::new()
            }
            Message::Error { code, text } => {
                self.last_command_seq = Some(frame.header.seq);
                warn!(finger_id = id, event = "coordinator_error", code, text = %text);
                if self.lifecycle == Lifecycle::Init && *code == error_code::DUPLICATE_ID {
                    self.stop();
                }
                Vec::new()
            }
            Message::SetMotorTargets { .. }
            | Message::SetJointTargets { .. }
            | Message::InjectTouch { .. } => {
                if matches!(self.lifecycle, Lifecycle::Init | Lifecycle::Stopping) {
                    return vec![self.error_reply(
                        error_code::NOT_REGISTERED,
                        "command before registration",
                        now,
                    )];
                }
                self.last_command_seq = Some(frame.header.seq);
                self.apply_command(&frame.message, now)
            }
            other => {
                let text = format!("finger nodes do not accept {:?} frames", other.msg_type());
                vec![self.error_reply(error_code::UNSUPPORTED, text, now)]
            }
        }
    }

    fn apply_command(&mut self, msg: &Message, now: u64) -> Vec<Vec<u8>> {
        self.stats.commands_applied += 1;
        self.stalled = false;
        match msg {
            Message::SetMotorTargets {
                targets,
                rate_limit,
            } => {
                let rate = (*rate_limit > 0).then(|| *rate_limit as f64 * 1e-6);
                self.driver
                    .set_motor_targets(targets[0].radians(), targets[1].radians(), rate);
                Vec::new()
            }
            Message::SetJointTargets { angles } => {
                let q = JointAngles::from_array(angles.map(Microradians::radians));
                self.driver.set_joint_targets(&q);
                Vec::new()
            }
            Message::InjectTouch {
                force_un,
                duration_ms,
            } => {
                let force = PlanarPoint::new(force_un[0] as f64 * 1e-6, force_un[1] as f64 * 1e-6);
                let duration = *duration_ms as f64 * 1e-3;
                match self.driver.push_fingertip(force, duration) {
                    Ok(()) => Vec::new(),
                    Err(e) => vec![self.error_reply(error_code::MALFORMED, e.to_string(), now)],
                }
            }
            _ => Vec::new(),
        }
    }

    /// Run every scheduled action due at or before `now`.
    pub fn poll(&mut self, now: u64) -> Vec<Vec<u8>> {
        let mut out = Vec::new();
        if self.lifecycle == Lifecycle::Registered {
            self.lifecycle = Lifecycle::Running;
        }
        while let Some(mut s) = self.schedule {
            let due = s.step.min(s.pose).min(s.motor).min(s.heartbeat);
            if due > now {
                break;
            }
            if s.step == due {
                s.step += self.dt_us;
                self.schedule = Some(s);
                if let Err(e) = self.driver.step(self.config.dt) {
                    self.driver.halt();
                    self.stats.stalls += 1;
                    if !self.stalled {
                        self.stalled = true;
                        out.push(self.error_reply(error_code::ACTUATOR_STALL, e.to_string(), due));
                    }
                }
            } else if s.pose == due {
                s.pose += self.pose_us;
                self.schedule = Some(s);
                let reading = self.driver.read_sensors();
                let msg = Message::PoseTelemetry {
                    angles: reading.q.as_array().map(Microradians::from_radians),
                };
                let seq = self.seqs.pose;
                self.seqs.pose = seq.wrapping_add(1);
                self.stats.pose_frames += 1;
                out.push(self.frame(&msg, seq, due));
            } else if s.motor == due {
                s.motor += self.motor_us;
                self.schedule = Some(s);
                let m = self.driver.read_sensors().motors;
                let msg = Message::MotorTelemetry {
                    spools: [m.flexor_angle, m.extensor_angle].map(Microradians::from_radians),
                };
                let seq = self.seqs.motor;
                self.seqs.motor = seq.wrapping_add(1);
                self.stats.motor_frames += 1;
                out.push(self.frame(&msg, seq, due));
            } else {
                s.heartbeat += self.heartbeat_us;
                self.schedule = Some(s);
                self.stats.heartbeats += 1;
                out.push(self.control(&Message::Heartbeat, due));
            }
        }
        out
    }
}

/// Cooperative stop signal shared between threads.
#[derive(Debug, Clone, Default)]
pub struct StopFlag(Arc<AtomicBool>);

impl StopFlag {
    pub fn new() -> Self {
        Self::default()
    }
    pub fn stop(&self) {
        self.0.store(true, Ordering::SeqCst);
    }
    pub fn is_stopped(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub stop: StopFlag,
    /// Return once the clock reaches this time; nothing is emitted at it.
    pub until_us: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeExit {
    Stopped,
    DeadlineReached,
    /// Reconnect attempts exhausted.
    TransportLost,
    /// The coordinator refused registration.
    Rejected,
}

/// Drive a node over a transport until stopped.
pub fn run<D, T, C>(
    node: &mut FingerNode<D>,
    transport: &mut T,
    clock: &C,
    opts: &RunOptions,
) -> Result<NodeExit, NodeError>
where
    D: FingerDriver,
    T: Transport,
    C: Clock,
{
    const IDLE_US: u64 = 10_000;
    let id = node.finger_id();
    let mut decoder = StreamDecoder::new();
    let hello = node.hello(clock.now_us());
    if let Err(e) = transport.send(&hello) {
        if !reconnect(node, transport, clock, &mut decoder, &e)? {
            return Ok(NodeExit::TransportLost);
        }
    }

    loop {
        if opts.stop.is_stopped() {
            node.stop();
            info!(finger_id = id, event = "stopped");
            return Ok(NodeExit::Stopped);
        }
        if node.lifecycle() == Lifecycle::Stopping {
            return Ok(NodeExit::Rejected);
        }
        let now = clock.now_us();
        if opts.until_us.is_some_and(|u| now >= u) {
            return Ok(NodeExit::DeadlineReached);
        }
        let mut deadline = node.next_deadline().unwrap_or(now + IDLE_US);
        if let Some(u) = opts.until_us {
            deadline = deadline.min(u);
        }

        let timeout = if clock.is_virtual() {
            Duration::ZERO
        } else {
            clock.until(deadline)
        };
        let mut outgoing = Vec::new();
        match transport.recv(timeout) {
            Ok(Some(bytes)) => {
                decoder.push(&bytes);
                let now = clock.now_us();
                while let Some(res) = decoder.next_frame() {
                    match res {
                        Ok(frame) => outgoing.extend(node.handle_frame(&frame, now)),
                        Err(e) => outgoing.extend(node.handle_decode_error(&e, now)),
                    }
                }
            }
            Ok(None) => {}
            Err(e) => {
                if !reconnect(node, transport, clock, &mut decoder, &e)? {
                    return Ok(NodeExit::TransportLost);
                }
                continue;
            }
        }
        if outgoing.is_empty() {
            // Deadline may not be reached yet if data arrived early.
            if clock.is_virtual() || clock.now_us() >= deadline {
                clock.sleep_until(deadline);
                let now = clock.now_us();
                // `until_us` is exclusive.
                if opts.until_us.map_or(true, |u| now < u) {
                    outgoing.extend(node.poll(now));
                }
            }
        }
        for bytes in outgoing {
            if let Err(e) = transport.send(&bytes) {
                if !reconnect(node, transport, clock, &mut decoder, &e)? {
                    return Ok(NodeExit::TransportLost);
                }
                break;
            }
        }
    }
}

fn reconnect<D: FingerDriver, T: Transport, C: Clock>(
    node: &mut FingerNode<D>,
    transport: &mut T,
    clock: &C,
    decoder: &mut StreamDecoder,
    cause: &TransportError,
) -> Result<bool, NodeError> {
    let id = node.finger_id();
    warn!(finger_id = id, event = "transport_lost", error = %cause);
    let backoff = NodeConfig::period_us(node.config().reconnect_backoff);
    for attempt in 1..=node.config().reconnect_attempts {
        clock.sleep_until(clock.now_us() + backoff);
        match transport.reconnect() {
            Ok(()) => {
                *decoder = StreamDecoder::new();
                let hello = node.hello(clock.now_us());
                if transport.send(&hello).is_ok() {
                    info!(finger_id = id, event = "reconnected", attempt);
                    return Ok(true);
                }
            }
            Err(TransportError::ReconnectUnsupported) => break,
            Err(e) => warn!(finger_id = id, event = "reconnect_failed", attempt, error = %e),
        }
    }
    node.stop();
    info!(finger_id = id, event = "stopped", reason = "transport_lost");
    Ok(false)
}
