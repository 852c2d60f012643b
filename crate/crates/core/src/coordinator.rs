//! Central hub: node registry, per-stream bookkeeping, hand pose, touch
//! aggregation and grasp execution.
//!
//! Like [`crate::node::FingerNode`], the coordinator is sans-IO. Hosts feed it
//! connection bytes and the current time, and forward the [`Output`]s it
//! returns.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::config::{ConfigError, ConfigSet, CoordinatorSettings};
use crate::grasp::{FingerOutcome, GraspError, GraspLibrary, GraspPhase, GraspReport, GraspSpec};
use crate::hand::{HandConfiguration, MountPose, Role};
use crate::kinematics::{joint_positions, FingerGeometry, JointAngles, PlanarPoint};
use crate::protocol::{
    encode, error_code, DecodeError, Frame, Header, Message, Microradians, StreamDecoder,
};
use crate::touch::{DetectorConfig, TelemetryFrame, TouchDetector, TouchEvent};

pub type ConnId = u64;

/// Everything the coordinator needs to know up front.
#[derive(Debug, Clone)]
pub struct CoordinatorConfig {
    pub hand: HandConfiguration,
    /// Geometry of every configured finger id.
    pub geometries: BTreeMap<u8, FingerGeometry>,
    pub detector: DetectorConfig,
    pub settings: CoordinatorSettings,
    pub grasps: GraspLibrary,
}

impl CoordinatorConfig {
    pub fn from_presets(set: &ConfigSet, hand: HandConfiguration) -> Result<Self, ConfigError> {
        let mut geometries = BTreeMap::new();
        for e in hand.entries() {
            geometries.insert(e.id, set.geometry(&e.geometry)?);
        }
        let d = set.finger_defaults();
        Ok(Self {
            hand,
            geometries,
            detector: d.detector,
            settings: d.coordinator,
            grasps: set.grasps().clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Output {
    /// Frame for the node on `conn`.
    Send { conn: ConnId, bytes: Vec<u8> },
    /// Frame produced by the coordinator itself, such as a touch
    /// notification. Recorded, never sent to nodes.
    Local { bytes: Vec<u8> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetachReason {
    Disconnected,
    HeartbeatExpired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum CoordinatorEvent {
    Registered {
        finger_id: u8,
        role: Role,
        warnings: Vec<String>,
        at_us: u64,
    },
    Rejected {
        finger_id: u8,
        reason: String,
        at_us: u64,
    },
    Detached {
        finger_id: u8,
        reason: DetachReason,
        at_us: u64,
    },
    Touch(TouchEvent),
    GraspPhase {
        grasp: String,
        phase: GraspPhase,
        at_us: u64,
    },
    GraspFinished(GraspReport),
    NodeError {
        finger_id: u8,
        code: u16,
        text: String,
        at_us: u64,
    },
}

/// Sequence bookkeeping for one telemetry stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StreamTracker {
    pub last_seq: Option<u32>,
    pub frames: u64,
    /// Number of discontinuities.
    pub gaps: u64,
    /// Frames skipped across all gaps.
    pub missing: u64,
    /// Frames dropped for not advancing the sequence.
    pub regressions: u64,
}

impl StreamTracker {
    /// Returns false for a stale or duplicate frame.
    pub fn observe(&mut self, seq: u32) -> bool {
        if let Some(last) = self.last_seq {
            if seq <= last {
                self.regressions += 1;
                return false;
            }
            if seq != last + 1 {
                self.gaps += 1;
                self.missing += (seq - last - 1) as u64;
            }
        } else if seq != 0 {
            self.gaps += 1;
            self.missing += seq as u64;
        }
        self.last_seq = Some(seq);
        self.frames += 1;
        true
    }

    pub fn is_gap_free(&self) -> bool {
        self.gaps == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Streams {
    pub pose: StreamTracker,
    pub motor: StreamTracker,
    pub control: StreamTracker,
}

impl Streams {
    pub fn is_gap_free(&self) -> bool {
        self.pose.is_gap_free() && self.motor.is_gap_free() && self.control.is_gap_free()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSample {
    pub angles: JointAngles,
    /// Node timestamp.
    pub timestamp_us: u64,
    pub arrival_us: u64,
}

/// One registered finger.
#[derive(Debug, Clone)]
pub struct NodeRecord {
    pub finger_id: u8,
    pub conn: ConnId,
    pub role: Role,
    pub mount: MountPose,
    pub geometry: FingerGeometry,
    pub warnings: Vec<String>,
    pub registered_at_us: u64,
    pub last_heard_us: u64,
    pub pose: Option<PoseSample>,
    /// Spool angles `[flexor, extensor]`, radians.
    pub motors: Option<[f64; 2]>,
    pub streams: Streams,
    detector: TouchDetector,
    next_command_seq: u32,
}

/// A finger's latest state in the hand frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerPose {
    pub finger_id: u8,
    pub role: Role,
    pub angles: Option<JointAngles>,
    /// Proximal, middle and distal joints then the tip, hand frame.
    pub joints: Option<[PlanarPoint; 4]>,
    pub tip: Option<PlanarPoint>,
    /// Microseconds since the last pose frame arrived.
    pub staleness_us: Option<u64>,
    pub stale: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandPose {
    pub t_us: u64,
    pub fingers: Vec<FingerPose>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CommandError {
    #[error("finger {0} is not registered")]
    NotRegistered(u8),
    #[error("invalid command: {0}")]
    Invalid(String),
    #[error(transparent)]
    Grasp(#[from] GraspError),
}

#[derive(Debug, Clone)]
struct ActiveGrasp {
    spec: GraspSpec,
    started_us: u64,
    phase: GraspPhase,
    phase_end_us: u64,
    deadline_us: u64,
    fingers: Vec<(u8, Role, JointAngles)>,
}

#[derive(Debug, Default)]
struct Conn {
    finger: Option<u8>,
    decoder: StreamDecoder,
}

fn secs_to_us(s: f64) -> u64 {
    (s * 1e6).round().max(0.0) as u64
}

pub struct Coordinator {
    config: CoordinatorConfig,
    nodes: BTreeMap<u8, NodeRecord>,
    conns: BTreeMap<ConnId, Conn>,
    next_conn: ConnId,
    /// Streams of nodes that have since detached, in detach order.
    retired: Vec<(u8, Streams)>,
    local_seq: u32,
    grasp: Option<ActiveGrasp>,
    reports: Vec<GraspReport>,
    touches: Vec<TouchEvent>,
    events: Vec<CoordinatorEvent>,
    decode_errors: u64,
}

impl Coordinator {
    pub fn new(config: CoordinatorConfig) -> Self {
        Self {
            config,
            nodes: BTreeMap::new(),
            conns: BTreeMap::new(),
            next_conn: 1,
            retired: Vec::new(),
            local_seq: 0,
            grasp: None,
            reports: Vec::new(),
            touches: Vec::new(),
            events: Vec::new(),
            decode_errors: 0,
        }
    }

    pub fn config(&self) -> &CoordinatorConfig {
        &self.config
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeRecord> {
        self.nodes.values()
    }

    pub fn node(&self, finger_id: u8) -> Option<&NodeRecord> {
        self.nodes.get(&finger_id)
    }

    pub fn retired_streams(&self) -> &[(u8, Streams)] {
        &self.retired
    }

    pub fn reports(&self) -> &[GraspReport] {
        &self.reports
    }

    pub fn touches(&self) -> &[TouchEvent] {
        &self.touches
    }

    pub fn decode_errors(&self) -> u64 {
        self.decode_errors
    }

    pub fn active_grasp(&self) -> Option<(&str, GraspPhase)> {
        self.grasp.as_ref().map(|g| (g.spec.name(), g.phase))
    }

    pub fn drain_events(&mut self) -> Vec<CoordinatorEvent> {
        std::mem::take(&mut self.events)
    }

    /// Open a connection slot for a node link.
    pub fn connect(&mut self) -> ConnId {
        let id = self.next_conn;
        self.next_conn += 1;
        self.conns.insert(id, Conn::default());
        id
    }

    /// The link closed; its finger, if any, leaves the registry.
    pub fn disconnect(&mut self, conn: ConnId, now: u64) {
        if let Some(c) = self.conns.remove(&conn) {
            if let Some(id) = c.finger {
                self.detach(id, DetachReason::Disconnected, now);
            }
        }
    }

    fn detach(&mut self, finger_id: u8, reason: DetachReason, now: u64) {
        let Some(rec) = self.nodes.remove(&finger_id) else {
            return;
        };
        if let Some(c) = self.conns.get_mut(&rec.conn) {
            c.finger = None;
        }
        info!(finger_id, event = "detached", ?reason, at_us = now);
        self.retired.push((finger_id, rec.streams));
        self.events.push(CoordinatorEvent::Detached {
            finger_id,
            reason,
            at_us: now,
        });
        let involved = self
            .grasp
            .as_ref()
            .is_some_and(|g| g.fingers.iter().any(|f| f.0 == finger_id));
        if involved {
            self.finish_grasp(now, false);
        }
    }

    fn send(&mut self, finger_id: u8, msg: &Message, now: u64) -> Option<Output> {
        let rec = self.nodes.get_mut(&finger_id)?;
        let seq = rec.next_command_seq;
        rec.next_command_seq = seq.wrapping_add(1);
        let bytes = encode(msg, Header::new(finger_id, seq, now)).ok()?;
        Some(Output::Send {
            conn: rec.conn,
            bytes,
        })
    }

    fn reply(conn: ConnId, finger_id: u8, code: u16, text: impl Into<String>, now: u64) -> Output {
        let bytes = encode(&Message::error(code, text), Header::new(finger_id, 0, now))
            .expect("error frame encodes");
        Output::Send { conn, bytes }
    }

    /// Bytes arrived on `conn`.
    pub fn handle_bytes(&mut self, conn: ConnId, bytes: &[u8], now: u64) -> Vec<Output> {
        let mut out = Vec::new();
        let Some(c) = self.conns.get_mut(&conn) else {
            return out;
        };
        c.decoder.push(bytes);
        let mut frames = Vec::new();
        while let Some(res) = c.decoder.next_frame() {
            frames.push(res);
        }
        for res in frames {
            match res {
                Ok(frame) => out.extend(self.handle_frame(conn, &frame, now)),
                Err(e) => out.extend(self.handle_decode_error(conn, &e, now)),
            }
        }
        out
    }

    fn handle_decode_error(&mut self, conn: ConnId, err: &DecodeError, now: u64) -> Vec<Output> {
        self.decode_errors += 1;
        let finger = self.conns.get(&conn).and_then(|c| c.finger).unwrap_or(0);
        warn!(conn, event = "malformed_frame", error = %err);
        vec![Self::reply(conn, finger, error_code::MALFORMED, err.to_string(), now)]
    }

    /// A decoded frame arrived on `conn`.
    pub fn handle_frame(&mut self, conn: ConnId, frame: &Frame, now: u64) -> Vec<Output> {
        let mut out = Vec::new();
        let id = frame.header.finger_id;
        let bound = match self.conns.get(&conn) {
            Some(c) => c.finger,
            None => return out,
        };
        match (bound, &frame.message) {
            (None, Message::Hello {
                kind,
                geometry_hash,
            }) => {
                self.register(conn, frame, *kind, *geometry_hash, now, &mut out);
                return out;
            }
            (None, _) => {
                out.push(Self::reply(
                    conn,
                    id,
                    error_code::NOT_REGISTERED,
                    "send HELLO first",
                    now,
                ));
                return out;
            }
            (Some(b), _) if b != id => {
                let text = format!("connection belongs to finger {b}, frame claims {id}");
                out.push(Self::reply(conn, id, error_code::WRONG_FINGER, text, now));
                return out;
            }
            _ => {}
        }

        let rec = self.nodes.get_mut(&id).expect("bound connection has a record");
        rec.last_heard_us = now;
        match &frame.message {
            Message::PoseTelemetry { angles } => {
                if !rec.streams.pose.observe(frame.header.seq) {
                    return out;
                }
                let q = JointAngles::from_array(angles.map(Microradians::radians));
                rec.pose = Some(PoseSample {
                    angles: q,
                    timestamp_us: frame.header.timestamp_us,
                    arrival_us: now,
                });
                let events = rec.detector.feed(&TelemetryFrame {
                    finger_id: id,
                    seq: frame.header.seq,
                    timestamp_us: frame.header.timestamp_us,
                    angles: q,
                });
                for ev in events {
                    out.push(self.touch_frame(&ev));
                    info!(finger_id = id, event = "touch", joint = ev.joint, onset_us = ev.onset_us);
                    self.touches.push(ev);
                    self.events.push(CoordinatorEvent::Touch(ev));
                }
                self.advance_grasp(now, &mut out);
            }
            Message::MotorTelemetry { spools } => {
                if rec.streams.motor.observe(frame.header.seq) {
                    rec.motors = Some(spools.map(Microradians::radians));
                }
            }
            Message::Heartbeat => {
                rec.streams.control.observe(frame.header.seq);
            }
            Message::Error { code, text } => {
                rec.streams.control.observe(frame.header.seq);
                warn!(finger_id = id, event = "node_error", code, text = %text);
                self.events.push(CoordinatorEvent::NodeError {
                    finger_id: id,
                    code: *code,
                    text: text.clone(),
                    at_us: now,
                });
            }
            Message::Hello { .. } => {
                let reason = format!("finger {id} is already registered");
                out.push(Self::reply(conn, id, error_code::DUPLICATE_ID, &reason, now));
                self.events.push(CoordinatorEvent::Rejected {
                    finger_id: id,
                    reason,
                    at_us: now,
                });
            }
            other => {
                let text = format!("coordinator does not accept {:?} frames", other.msg_type());
                out.push(Self::reply(conn, id, error_code::UNSUPPORTED, text, now));
            }
        }
        out
    }

    fn touch_frame(&mut self, ev: &TouchEvent) -> Output {
        let seq = self.local_seq;
        self.local_seq = seq.wrapping_add(1);
        let msg = Message::TouchEvent {
            magnitude: (ev.peak * 1e6).round().clamp(0.0, u32::MAX as f64) as u32,
            joint: ev.joint,
        };
        Output::Local {
            bytes: encode(&msg, Header::new(ev.finger_id, seq, ev.onset_us))
                .expect("touch frame encodes"),
        }
    }

    fn register(
        &mut self,
        conn: ConnId,
        frame: &Frame,
        kind: Role,
        geometry_hash: u32,
        now: u64,
        out: &mut Vec<Output>,
    ) {
        let id = frame.header.finger_id;
        if self.nodes.contains_key(&id) {
            let reason = format!("finger {id} is already registered");
            warn!(finger_id = id, event = "duplicate_hello");
            out.push(Self::reply(conn, id, error_code::DUPLICATE_ID, &reason, now));
            self.events.push(CoordinatorEvent::Rejected {
                finger_id: id,
                reason,
                at_us: now,
            });
            return;
        }
        let mut warnings = Vec::new();
        let (role, mount, geometry) = match self.config.hand.entry(id) {
            Some(e) => {
                if e.role != kind {
                    warnings.push(format!(
                        "node reports role {kind}, configuration assigns {}",
                        e.role
                    ));
                }
                let g = self.config.geometries[&id];
                (e.role, e.mount, g)
            }
            None => {
                warnings.push("finger id is not in the hand configuration".to_string());
                (kind, MountPose::default(), FingerGeometry::index_default())
            }
        };
        if geometry.fingerprint() != geometry_hash {
            warnings.push(format!("unknown geometry hash {geometry_hash:08x}"));
        }
        let mut streams = Streams::default();
        streams.control.observe(frame.header.seq);
        self.nodes.insert(
            id,
            NodeRecord {
                finger_id: id,
                conn,
                role,
                mount,
                geometry,
                warnings: warnings.clone(),
                registered_at_us: now,
                last_heard_us: now,
                pose: None,
                motors: None,
                streams,
                detector: TouchDetector::new(id, self.config.detector),
                next_command_seq: 0,
            },
        );
        if let Some(c) = self.conns.get_mut(&conn) {
            c.finger = Some(id);
        }
        info!(finger_id = id, event = "registered", role = %role, warnings = warnings.len());
        self.events.push(CoordinatorEvent::Registered {
            finger_id: id,
            role,
            warnings,
            at_us: now,
        });
        out.extend(self.send(id, &Message::Heartbeat, now));
    }

    /// Earliest time at which [`Coordinator::tick`] has work to do.
    pub fn next_deadline(&self) -> Option<u64> {
        let timeout = secs_to_us(self.config.settings.heartbeat_timeout);
        let expiry = self
            .nodes
            .values()
            .map(|n| n.last_heard_us + timeout + 1)
            .min();
        let grasp = self.grasp.as_ref().map(|g| match g.phase {
            GraspPhase::Settling => g.deadline_us,
            _ => g.phase_end_us,
        });
        [expiry, grasp].into_iter().flatten().min()
    }

    /// Expire silent nodes and advance grasp phases.
    pub fn tick(&mut self, now: u64) -> Vec<Output> {
        let mut out = Vec::new();
        let timeout = secs_to_us(self.config.settings.heartbeat_timeout);
        let expired: Vec<u8> = self
            .nodes
            .values()
            .filter(|n| now.saturating_sub(n.last_heard_us) > timeout)
            .map(|n| n.finger_id)
            .collect();
        for id in expired {
            self.detach(id, DetachReason::HeartbeatExpired, now);
        }
        self.advance_grasp(now, &mut out);
        out
    }

    fn check_finger(&self, finger_id: u8) -> Result<(), CommandError> {
        if self.nodes.contains_key(&finger_id) {
            Ok(())
        } else {
            Err(CommandError::NotRegistered(finger_id))
        }
    }

    pub fn set_joint_targets(
        &mut self,
        finger_id: u8,
        q: JointAngles,
        now: u64,
    ) -> Result<Vec<Output>, CommandError> {
        self.check_finger(finger_id)?;
        if !q.as_array().iter().all(|v| v.is_finite()) {
            return Err(CommandError::Invalid("non-finite joint target".into()));
        }
        let msg = Message::SetJointTargets {
            angles: q.as_array().map(Microradians::from_radians),
        };
        Ok(self.send(finger_id, &msg, now).into_iter().collect())
    }

    /// Spool targets in radians; `rate` in rad/s, `None` for the node default.
    pub fn set_motor_targets(
        &mut self,
        finger_id: u8,
        targets: [f64; 2],
        rate: Option<f64>,
        now: u64,
    ) -> Result<Vec<Output>, CommandError> {
        self.check_finger(finger_id)?;
        if !targets.iter().all(|v| v.is_finite()) || rate.is_some_and(|r| !(r > 0.0)) {
            return Err(CommandError::Invalid("bad motor target or rate".into()));
        }
        let msg = Message::SetMotorTargets {
            targets: targets.map(Microradians::from_radians),
            rate_limit: rate.map_or(0, |r| (r * 1e6).round().min(u32::MAX as f64) as u32),
        };
        Ok(self.send(finger_id, &msg, now).into_iter().collect())
    }

    /// Ask a simulated node to push on its fingertip. Force in newtons,
    /// duration in seconds.
    pub fn inject_touch(
        &mut self,
        finger_id: u8,
        force: PlanarPoint,
        duration: f64,
        now: u64,
    ) -> Result<Vec<Output>, CommandError> {
        self.check_finger(finger_id)?;
        if !(duration > 0.0) || !force.x.is_finite() || !force.y.is_finite() {
            return Err(CommandError::Invalid("touch needs finite force and duration > 0".into()));
        }
        let un = |f: f64| (f * 1e6).round().clamp(i32::MIN as f64, i32::MAX as f64) as i32;
        let msg = Message::InjectTouch {
            force_un: [un(force.x), un(force.y)],
            duration_ms: ((duration * 1e3).round() as u32).max(1),
        };
        Ok(self.send(finger_id, &msg, now).into_iter().collect())
    }

    pub fn execute_grasp(&mut self, name: &str, now: u64) -> Result<Vec<Output>, GraspError> {
        let spec = self
            .config
            .grasps
            .get(name)
            .cloned()
            .ok_or_else(|| GraspError::Unknown(name.to_string()))?;
        self.execute_spec(spec, now)
    }

    /// Start a grasp. Preconditions are checked before anything is sent.
    pub fn execute_spec(&mut self, spec: GraspSpec, now: u64) -> Result<Vec<Output>, GraspError> {
        if let Some(g) = &self.grasp {
            return Err(GraspError::Busy(g.spec.name().to_string()));
        }
        for role in spec.required_roles() {
            if !self.nodes.values().any(|n| n.role == role) {
                return Err(GraspError::MissingRole {
                    grasp: spec.name().to_string(),
                    role,
                });
            }
        }
        let mut fingers = Vec::new();
        for n in self.nodes.values() {
            if let Some(q) = spec.target_for(n.role) {
                if !n.geometry.contains(&q) {
                    return Err(GraspError::OutOfLimits {
                        grasp: spec.name().to_string(),
                        role: n.role,
                    });
                }
                fingers.push((n.finger_id, n.role, q));
            }
        }
        if fingers.is_empty() {
            return Err(GraspError::NoFingers);
        }

        let t = spec.timing();
        let mut out = Vec::new();
        let (phase, end) = if t.preshape > 0.0 {
            for &(id, role, _) in &fingers {
                let q = spec.preshape_for(role).expect("participant has a target");
                out.extend(self.set_joint_targets(id, q, now).ok().into_iter().flatten());
            }
            (GraspPhase::Preshape, now + secs_to_us(t.preshape))
        } else {
            for &(id, _, q) in &fingers {
                out.extend(self.set_joint_targets(id, q, now).ok().into_iter().flatten());
            }
            (GraspPhase::Close, now + secs_to_us(t.close))
        };
        info!(grasp = spec.name(), event = "grasp_started", at_us = now);
        self.events.push(CoordinatorEvent::GraspPhase {
            grasp: spec.name().to_string(),
            phase,
            at_us: now,
        });
        self.grasp = Some(ActiveGrasp {
            deadline_us: now + 2 * secs_to_us(t.total()),
            spec,
            started_us: now,
            phase,
            phase_end_us: end,
            fingers,
        });
        self.advance_grasp(now, &mut out);
        Ok(out)
    }

    fn advance_grasp(&mut self, now: u64, out: &mut Vec<Output>) {
        loop {
            let converged = self.grasp_converged();
            let Some(g) = &mut self.grasp else {
                return;
            };
            let t = g.spec.timing();
            let (next, end) = match g.phase {
                GraspPhase::Preshape if now >= g.phase_end_us => {
                    (GraspPhase::Close, g.phase_end_us + secs_to_us(t.close))
                }
                GraspPhase::Close if now >= g.phase_end_us => {
                    (GraspPhase::Hold, g.phase_end_us + secs_to_us(t.hold))
                }
                GraspPhase::Hold if now >= g.phase_end_us => {
                    if converged {
                        self.finish_grasp(now, false);
                        return;
                    }
                    (GraspPhase::Settling, g.deadline_us)
                }
                GraspPhase::Settling => {
                    if converged {
                        self.finish_grasp(now, false);
                    } else if now >= g.deadline_us {
                        self.finish_grasp(now, true);
                    }
                    return;
                }
                _ => return,
            };
            let resend = g.phase == GraspPhase::Preshape;
            g.phase = next;
            g.phase_end_us = end;
            let name = g.spec.name().to_string();
            let fingers = g.fingers.clone();
            if resend {
                for (id, _, q) in fingers {
                    out.extend(self.set_joint_targets(id, q, now).ok().into_iter().flatten());
                }
            }
            self.events.push(CoordinatorEvent::GraspPhase {
                grasp: name,
                phase: next,
                at_us: now,
            });
        }
    }

    fn outcomes(&self, g: &ActiveGrasp) -> Vec<FingerOutcome> {
        let tol = self.config.settings.grasp_tolerance;
        g.fingers
            .iter()
            .map(|&(id, role, q)| {
                let measured = self.nodes.get(&id).and_then(|n| n.pose).map(|p| p.angles);
                FingerOutcome::evaluate(id, role, q, measured, tol)
            })
            .collect()
    }

    fn grasp_converged(&self) -> bool {
        self.grasp
            .as_ref()
            .is_some_and(|g| self.outcomes(g).iter().all(|o| o.success))
    }

    /// Close out the running grasp. A finger that detached mid-grasp has no
    /// measurement and therefore fails.
    fn finish_grasp(&mut self, now: u64, timed_out: bool) {
        let Some(g) = self.grasp.take() else {
            return;
        };
        let fingers = self.outcomes(&g);
        let success = !timed_out && fingers.iter().all(|o| o.success);
        let report = GraspReport {
            grasp: g.spec.name().to_string(),
            started_us: g.started_us,
            finished_us: now,
            tolerance: self.config.settings.grasp_tolerance,
            success,
            timed_out,
            fingers,
        };
        info!(grasp = %report.grasp, event = "grasp_finished", success, at_us = now);
        self.reports.push(report.clone());
        self.events.push(CoordinatorEvent::GraspFinished(report));
    }

    /// Latest pose of every registered finger. Never waits on slow nodes;
    /// stale data is flagged instead.
    pub fn hand_pose(&self, now: u64) -> HandPose {
        let stale_after = secs_to_us(self.config.settings.stale_after);
        let fingers = self
            .nodes
            .values()
            .map(|n| {
                let angles = n.pose.map(|p| p.angles);
                let joints = angles.and_then(|q| {
                    joint_positions(&n.geometry, &q)
                        .ok()
                        .map(|j| j.map(|p| n.mount.apply(&p)))
                });
                let staleness_us = n.pose.map(|p| now.saturating_sub(p.arrival_us));
                FingerPose {
                    finger_id: n.finger_id,
                    role: n.role,
                    angles,
                    joints,
                    tip: joints.map(|j| j[3]),
                    staleness_us,
                    stale: staleness_us.map_or(true, |s| s > stale_after),
                }
            })
            .collect();
        HandPose { t_us: now, fingers }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::node::{FingerNode, NodeConfig};
    use crate::protocol::decode;

    fn coordinator() -> Coordinator {
        let set = ConfigSet::embedded();
        let hand = set.hand("five-finger").unwrap();
        Coordinator::new(CoordinatorConfig::from_presets(&set, hand).unwrap())
    }

    fn node(id: u8) -> FingerNode {
        let set = ConfigSet::embedded();
        let hand = set.hand("five-finger").unwrap();
        FingerNode::new(set.node_config(hand.entry(id).unwrap(), 1).unwrap()).unwrap()
    }

    fn sent(out: &[Output]) -> Vec<Frame> {
        out.iter()
            .filter_map(|o| match o {
                Output::Send { bytes, .. } => Some(decode(bytes).unwrap().0),
                Output::Local { .. } => None,
            })
            .collect()
    }

    #[test]
    fn hello_is_acknowledged_and_duplicates_rejected() {
        let mut c = coordinator();
        let mut n = node(1);
        let a = c.connect();
        let out = c.handle_bytes(a, &n.hello(0), 0);
        let frames = sent(&out);
        assert_eq!(frames[0].message, Message::Heartbeat);
        let reg = c.node(1).unwrap();
        assert_eq!(reg.role, Role::Index);
        assert!(reg.warnings.is_empty(), "{:?}", reg.warnings);

        let b = c.connect();
        let mut twin = node(1);
        let out = c.handle_bytes(b, &twin.hello(10), 10);
        assert!(matches!(
            sent(&out)[0].message,
            Message::Error { code: error_code::DUPLICATE_ID, .. }
        ));
        assert_eq!(c.nodes().count(), 1);
    }

    #[test]
    fn unknown_geometry_registers_with_warning() {
        let mut c = coordinator();
        let set = ConfigSet::embedded();
        let hand = set.hand("five-finger").unwrap();
        let mut cfg: NodeConfig = set.node_config(hand.entry(2).unwrap(), 0).unwrap();
        cfg.params.geometry = FingerGeometry::uniform(0.03).unwrap();
        let mut n = FingerNode::new(cfg).unwrap();
        let a = c.connect();
        c.handle_bytes(a, &n.hello(0), 0);
        let reg = c.node(2).unwrap();
        assert_eq!(reg.warnings.len(), 1);
        assert!(reg.warnings[0].contains("geometry"));
    }

    #[test]
    fn frames_before_hello_are_refused() {
        let mut c = coordinator();
        let a = c.connect();
        let hb = encode(&Message::Heartbeat, Header::new(1, 0, 0)).unwrap();
        let out = c.handle_bytes(a, &hb, 0);
        assert!(matches!(
            sent(&out)[0].message,
            Message::Error { code: error_code::NOT_REGISTERED, .. }
        ));
    }

    #[test]
    fn stream_tracker_counts_gaps() {
        let mut t = StreamTracker::default();
        assert!(t.observe(0));
        assert!(t.observe(1));
        assert!(!t.observe(1));
        assert!(t.observe(4));
        assert_eq!((t.gaps, t.missing, t.regressions, t.frames), (1, 2, 1, 3));
    }

    #[test]
    fn silent_node_expires_after_timeout() {
        let mut c = coordinator();
        let mut n = node(3);
        let a = c.connect();
        c.handle_bytes(a, &n.hello(0), 0);
        assert!(c.tick(3_000_000).is_empty());
        assert!(c.node(3).is_some());
        assert_eq!(c.next_deadline(), Some(3_000_001));
        c.tick(3_000_001);
        assert!(c.node(3).is_none());
        assert!(c.drain_events().iter().any(|e| matches!(
            e,
            CoordinatorEvent::Detached {
                finger_id: 3,
                reason: DetachReason::HeartbeatExpired,
                ..
            }
        )));
        // The link can register again, with fresh counters.
        c.handle_bytes(a, &n.hello(3_100_000), 3_100_000);
        assert_eq!(c.node(3).unwrap().streams.control.frames, 1);
    }

    #[test]
    fn missing_role_is_reported_before_sending() {
        let mut c = coordinator();
        let mut n = node(1);
        let a = c.connect();
        c.handle_bytes(a, &n.hello(0), 0);
        let err = c.execute_grasp("tip pinch", 0).unwrap_err();
        assert!(matches!(err, GraspError::MissingRole { role: Role::Thumb, .. }));
        assert!(matches!(c.execute_grasp("karate chop", 0), Err(GraspError::Unknown(_))));
    }
}
