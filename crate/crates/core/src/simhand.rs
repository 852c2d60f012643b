//! Whole-hand simulation on a virtual timeline.
//!
//! The coordinator and every finger node run in one thread as a discrete-event
//! simulation. Frames travel as bytes through the same encode/decode path as
//! live links and are delivered without latency, so a run is a pure function
//! of its configuration and seed.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::config::{ConfigError, ConfigSet};
use crate::coordinator::{CommandError, ConnId, Coordinator, CoordinatorConfig, Output};
use crate::grasp::GraspError;
use crate::hand::HandConfiguration;
use crate::kinematics::{JointAngles, PlanarPoint};
use crate::node::{FingerNode, NodeConfig, NodeError};
use crate::protocol::{self, StreamDecoder};
use crate::record::{Direction, RecordError, SessionHeader, SessionWriter};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Node(#[from] NodeError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Grasp(#[from] GraspError),
    #[error(transparent)]
    Command(#[from] CommandError),
    #[error("finger {0} is not part of the hand")]
    UnknownFinger(u8),
    #[error("finger {0} is already attached")]
    AlreadyAttached(u8),
}

#[derive(Debug, Clone)]
pub struct SimHandConfig {
    pub presets: ConfigSet,
    pub hand: HandConfiguration,
    pub seed: u64,
    /// Overrides the configured sensor noise, radians.
    pub noise_std: Option<f64>,
    /// Stored verbatim in the session header.
    pub snapshot: String,
}

impl SimHandConfig {
    pub fn new(presets: ConfigSet, hand: HandConfiguration, seed: u64) -> Self {
        Self {
            presets,
            hand,
            seed,
            noise_std: None,
            snapshot: String::new(),
        }
    }
}

struct SimNode {
    node: FingerNode,
    conn: ConnId,
    decoder: StreamDecoder,
}

pub struct SimHand {
    config: SimHandConfig,
    coordinator: Coordinator,
    nodes: BTreeMap<u8, SimNode>,
    now: u64,
    recorder: SessionWriter<Vec<u8>>,
}

impl SimHand {
    /// Build the hand and attach every configured finger at time zero.
    pub fn new(config: SimHandConfig) -> Result<Self, SimError> {
        let coord_cfg = CoordinatorConfig::from_presets(&config.presets, config.hand.clone())?;
        let recorder = SessionWriter::new(
            Vec::new(),
            &SessionHeader {
                protocol_version: protocol::VERSION,
                start_us: 0,
                config: config.snapshot.clone(),
            },
        )?;
        let ids: Vec<u8> = config.hand.entries().iter().map(|e| e.id).collect();
        let mut hand = Self {
            config,
            coordinator: Coordinator::new(coord_cfg),
            nodes: BTreeMap::new(),
            now: 0,
            recorder,
        };
        for id in ids {
            hand.attach(id)?;
        }
        Ok(hand)
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn coordinator(&self) -> &Coordinator {
        &self.coordinator
    }

    pub fn node(&self, finger_id: u8) -> Option<&FingerNode> {
        self.nodes.get(&finger_id).map(|n| &n.node)
    }

    pub fn attached(&self) -> impl Iterator<Item = u8> + '_ {
        self.nodes.keys().copied()
    }

    fn node_config(&self, finger_id: u8) -> Result<NodeConfig, SimError> {
        let entry = self
            .config
            .hand
            .entry(finger_id)
            .ok_or(SimError::UnknownFinger(finger_id))?;
        let mut cfg = self.config.presets.node_config(entry, self.config.seed)?;
        if let Some(n) = self.config.noise_std {
            cfg.params.sensor.noise_std = n;
        }
        Ok(cfg)
    }

    /// Start a node for `finger_id` and send its HELLO.
    pub fn attach(&mut self, finger_id: u8) -> Result<(), SimError> {
        if self.nodes.contains_key(&finger_id) {
            return Err(SimError::AlreadyAttached(finger_id));
        }
        let mut node = FingerNode::new(self.node_config(finger_id)?)?;
        let conn = self.coordinator.connect();
        let hello = node.hello(self.now);
        self.nodes.insert(
            finger_id,
            SimNode {
                node,
                conn,
                decoder: StreamDecoder::new(),
            },
        );
        self.deliver_inbound(conn, hello)?;
        Ok(())
    }

    /// Pull a finger off the hand: its link closes and its node is dropped.
    pub fn detach(&mut self, finger_id: u8) -> Result<(), SimError> {
        let n = self
            .nodes
            .remove(&finger_id)
            .ok_or(SimError::UnknownFinger(finger_id))?;
        self.coordinator.disconnect(n.conn, self.now);
        Ok(())
    }

    pub fn execute_grasp(&mut self, name: &str) -> Result<(), SimError> {
        match self.coordinator.execute_grasp(name, self.now) {
            Ok(out) => self.route(out),
            Err(e) => {
                tracing::warn!(grasp = name, error = %e, "grasp refused");
                Err(SimError::Grasp(e))
            }
        }
    }

    pub fn set_joint_targets(&mut self, finger_id: u8, q: JointAngles) -> Result<(), SimError> {
        let out = self
            .coordinator
            .set_joint_targets(finger_id, q, self.now)?;
        self.route(out)
    }

    pub fn set_motor_targets(&mut self, finger_id: u8, targets: [f64; 2]) -> Result<(), SimError> {
        let out = self
            .coordinator
            .set_motor_targets(finger_id, targets, None, self.now)?;
        self.route(out)
    }

    pub fn inject_touch(&mut self, finger_id: u8, force: PlanarPoint, duration: f64) -> Result<(), SimError> {
        let out = self
            .coordinator
            .inject_touch(finger_id, force, duration, self.now)?;
        self.route(out)
    }

    fn next_event(&self) -> Option<u64> {
        self.nodes
            .values()
            .filter_map(|n| n.node.next_deadline())
            .chain(self.coordinator.next_deadline())
            .min()
    }

    /// Process every event strictly before `end_us`, then set the clock to
    /// `end_us`.
    pub fn run_until(&mut self, end_us: u64) -> Result<(), SimError> {
        while let Some(t) = self.next_event() {
            if t >= end_us {
                break;
            }
            self.now = self.now.max(t);
            let ids: Vec<u8> = self.nodes.keys().copied().collect();
            for id in ids {
                let (conn, frames) = {
                    let n = self.nodes.get_mut(&id).expect("listed node");
                    (n.conn, n.node.poll(self.now))
                };
                for f in frames {
                    self.deliver_inbound(conn, f)?;
                }
            }
            let out = self.coordinator.tick(self.now);
            self.route(out)?;
        }
        self.now = self.now.max(end_us);
        Ok(())
    }

    fn deliver_inbound(&mut self, conn: ConnId, bytes: Vec<u8>) -> Result<(), SimError> {
        self.recorder.append(self.now, Direction::Inbound, &bytes)?;
        let out = self.coordinator.handle_bytes(conn, &bytes, self.now);
        self.route(out)
    }

    /// Deliver coordinator output, including any replies it provokes.
    fn route(&mut self, out: Vec<Output>) -> Result<(), SimError> {
        let mut queue: VecDeque<Output> = out.into();
        while let Some(o) = queue.pop_front() {
            match o {
                Output::Local { bytes } => self.recorder.append(self.now, Direction::Local, &bytes)?,
                Output::Send { conn, bytes } => {
                    self.recorder.append(self.now, Direction::Outbound, &bytes)?;
                    let Some(n) = self.nodes.values_mut().find(|n| n.conn == conn) else {
                        continue;
                    };
                    n.decoder.push(&bytes);
                    let mut replies = Vec::new();
                    while let Some(res) = n.decoder.next_frame() {
                        replies.extend(match res {
                            Ok(frame) => n.node.handle_frame(&frame, self.now),
                            Err(e) => n.node.handle_decode_error(&e, self.now),
                        });
                    }
                    for r in replies {
                        self.recorder.append(self.now, Direction::Inbound, &r)?;
                        queue.extend(self.coordinator.handle_bytes(conn, &r, self.now));
                    }
                }
            }
        }
        Ok(())
    }

    /// Stop the simulation and return the session record bytes.
    pub fn finish(self) -> Result<(Coordinator, Vec<u8>), SimError> {
        let bytes = self.recorder.finish()?;
        Ok((self.coordinator, bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand::Role;
    use crate::record::parse_session;

    fn hand(name: &str) -> SimHand {
        let presets = ConfigSet::embedded();
        let hand = presets.hand(name).unwrap();
        SimHand::new(SimHandConfig::new(presets, hand, 3)).unwrap()
    }

    #[test]
    fn five_fingers_register_at_start() {
        let h = hand("five-finger");
        assert_eq!(h.coordinator().nodes().count(), 5);
        let roles: Vec<Role> = h.coordinator().nodes().map(|n| n.role).collect();
        assert_eq!(roles, vec![Role::Thumb, Role::Index, Role::Middle, Role::Ring, Role::Little]);
    }

    #[test]
    fn neutral_grasp_succeeds_immediately() {
        let mut h = hand("five-finger");
        h.run_until(100_000).unwrap();
        h.execute_grasp("neutral").unwrap();
        let r = &h.coordinator().reports()[0];
        assert!(r.success);
        assert_eq!(r.finished_us, r.started_us);
        assert_eq!(r.fingers.len(), 5);
        assert!(r.fingers.iter().all(|f| f.max_error < 1e-3));
    }

    #[test]
    fn tip_pinch_without_thumb_is_refused() {
        let mut h = hand("four-finger");
        h.run_until(50_000).unwrap();
        match h.execute_grasp("tip pinch") {
            Err(SimError::Grasp(GraspError::MissingRole { role: Role::Thumb, .. })) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn session_is_well_formed() {
        let mut h = hand("gripper");
        h.run_until(200_000).unwrap();
        let (_, bytes) = h.finish().unwrap();
        let s = parse_session(&bytes).unwrap();
        let frames = s.decode_all().unwrap();
        // 2 hellos, 2 acks, 40 poses each, 4 motor frames each.
        assert_eq!(frames.len(), 2 + 2 + 2 * 40 + 2 * 4);
    }
}
