//! JSON-lines bridge between the coordinator and operator consoles.
//!
//! Each line is one JSON object with a `type` field. See `docs/ui-bridge.md`
//! for the full schema.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordinator::{CommandError, Coordinator, CoordinatorEvent, DetachReason, FingerPose, Output};
use crate::grasp::{GraspPhase, GraspReport};
use crate::hand::Role;
use crate::kinematics::{JointAngles, PlanarPoint};
use crate::protocol;
use crate::touch::TouchEvent;

/// Console to coordinator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum UiCommand {
    Grasp {
        name: String,
    },
    JointTargets {
        finger_id: u8,
        /// `[θ1, θ2, θ3]`, radians.
        angles: [f64; 3],
    },
    MotorTargets {
        finger_id: u8,
        /// `[flexor, extensor]` spool angles, radians.
        targets: [f64; 2],
        /// rad/s; omitted for the node default.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rate: Option<f64>,
    },
    InjectTouch {
        finger_id: u8,
        /// `[fx, fy]` at the fingertip, newtons.
        force: [f64; 2],
        /// Seconds
        duration: f64,
    },
    /// Change the snapshot rate for this client.
    Subscribe {
        rate_hz: f64,
    },
}

impl UiCommand {
    pub fn kind(&self) -> &'static str {
        match self {
            UiCommand::Grasp { .. } => "grasp",
            UiCommand::JointTargets { .. } => "joint_targets",
            UiCommand::MotorTargets { .. } => "motor_targets",
            UiCommand::InjectTouch { .. } => "inject_touch",
            UiCommand::Subscribe { .. } => "subscribe",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspInfo {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub panel: Option<String>,
    pub note: String,
    pub roles: Vec<Role>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegistryChange {
    Registered,
    Rejected,
    Disconnected,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveGraspInfo {
    pub name: String,
    pub phase: GraspPhase,
}

/// Coordinator to console.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum UiMessage {
    /// First line on every connection.
    Welcome {
        protocol_version: u8,
        hand: String,
        grasps: Vec<GraspInfo>,
    },
    Snapshot {
        t_us: u64,
        fingers: Vec<FingerPose>,
        grasp: Option<ActiveGraspInfo>,
        recent_touches: Vec<TouchEvent>,
    },
    Registry {
        change: RegistryChange,
        finger_id: u8,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        role: Option<Role>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        warnings: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
        at_us: u64,
    },
    Touch {
        #[serde(flatten)]
        event: TouchEvent,
    },
    GraspPhase {
        grasp: String,
        phase: GraspPhase,
        at_us: u64,
    },
    GraspReport {
        #[serde(flatten)]
        report: GraspReport,
    },
    NodeError {
        finger_id: u8,
        code: u16,
        text: String,
        at_us: u64,
    },
    /// A command was accepted.
    Ack { command: String },
    Error { message: String },
}

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("malformed command: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Command(#[from] CommandError),
}

pub fn parse_command(line: &str) -> Result<UiCommand, BridgeError> {
    Ok(serde_json::from_str(line.trim())?)
}

/// One JSON line, without the trailing newline.
pub fn to_line(msg: &UiMessage) -> String {
    serde_json::to_string(msg).expect("bridge messages serialize")
}

pub fn welcome(coordinator: &Coordinator) -> UiMessage {
    let cfg = coordinator.config();
    UiMessage::Welcome {
        protocol_version: protocol::VERSION,
        hand: cfg.hand.name().to_string(),
        grasps: cfg
            .grasps
            .iter()
            .map(|g| GraspInfo {
                name: g.name().to_string(),
                panel: g.panel().map(str::to_string),
                note: g.note().to_string(),
                roles: g.required_roles().collect(),
            })
            .collect(),
    }
}

/// Hand pose plus grasp state, with the last few touch events.
pub fn snapshot(coordinator: &Coordinator, now: u64, recent: usize) -> UiMessage {
    let pose = coordinator.hand_pose(now);
    let touches = coordinator.touches();
    UiMessage::Snapshot {
        t_us: pose.t_us,
        fingers: pose.fingers,
        grasp: coordinator.active_grasp().map(|(name, phase)| ActiveGraspInfo {
            name: name.to_string(),
            phase,
        }),
        recent_touches: touches[touches.len().saturating_sub(recent)..].to_vec(),
    }
}

impl From<CoordinatorEvent> for UiMessage {
    fn from(e: CoordinatorEvent) -> Self {
        match e {
            CoordinatorEvent::Registered {
                finger_id,
                role,
                warnings,
                at_us,
            } => UiMessage::Registry {
                change: RegistryChange::Registered,
                finger_id,
                role: Some(role),
                warnings,
                reason: None,
                at_us,
            },
            CoordinatorEvent::Rejected {
                finger_id,
                reason,
                at_us,
            } => UiMessage::Registry {
                change: RegistryChange::Rejected,
                finger_id,
                role: None,
                warnings: Vec::new(),
                reason: Some(reason),
                at_us,
            },
            CoordinatorEvent::Detached {
                finger_id,
                reason,
                at_us,
            } => UiMessage::Registry {
                change: match reason {
                    DetachReason::Disconnected => RegistryChange::Disconnected,
                    DetachReason::HeartbeatExpired => RegistryChange::Expired,
                },
                finger_id,
                role: None,
                warnings: Vec::new(),
                reason: None,
                at_us,
            },
            CoordinatorEvent::Touch(event) => UiMessage::Touch { event },
            CoordinatorEvent::GraspPhase {
                grasp,
                phase,
                at_us,
            } => UiMessage::GraspPhase {
                grasp,
                phase,
                at_us,
            },
            CoordinatorEvent::GraspFinished(report) => UiMessage::GraspReport { report },
            CoordinatorEvent::NodeError {
                finger_id,
                code,
                text,
                at_us,
            } => UiMessage::NodeError {
                finger_id,
                code,
                text,
                at_us,
            },
        }
    }
}

/// Apply a console command. `Subscribe` is handled by the host and yields no
/// output here.
pub fn apply(coordinator: &mut Coordinator, cmd: &UiCommand, now: u64) -> Result<Vec<Output>, CommandError> {
    match cmd {
        UiCommand::Grasp { name } => Ok(coordinator.execute_grasp(name, now)?),
        UiCommand::JointTargets { finger_id, angles } => {
            coordinator.set_joint_targets(*finger_id, JointAngles::from_array(*angles), now)
        }
        UiCommand::MotorTargets {
            finger_id,
            targets,
            rate,
        } => coordinator.set_motor_targets(*finger_id, *targets, *rate, now),
        UiCommand::InjectTouch {
            finger_id,
            force,
            duration,
        } => coordinator.inject_touch(*finger_id, PlanarPoint::new(force[0], force[1]), *duration, now),
        UiCommand::Subscribe { rate_hz } => {
            if *rate_hz > 0.0 && *rate_hz <= 1000.0 {
                Ok(Vec::new())
            } else {
                Err(CommandError::Invalid(format!("rate_hz must be in (0, 1000], got {rate_hz}")))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commands_parse() {
        let c = parse_command(r#"{"type":"grasp","name":"tip pinch"}"#).unwrap();
        assert_eq!(c, UiCommand::Grasp { name: "tip pinch".into() });
        let c = parse_command(r#"{"type":"motor_targets","finger_id":2,"targets":[1.0,-0.5]}"#).unwrap();
        assert!(matches!(c, UiCommand::MotorTargets { rate: None, .. }));
        assert!(parse_command(r#"{"type":"grasp","name":"x","extra":1}"#).is_err());
        assert!(parse_command(r#"{"type":"teleport"}"#).is_err());
        assert!(parse_command("not json").is_err());
    }

    #[test]
    fn messages_are_single_tagged_lines() {
        let m = UiMessage::Touch {
            event: TouchEvent {
                finger_id: 1,
                joint: 0,
                onset_us: 5,
                peak: 0.01,
            },
        };
        let line = to_line(&m);
        assert!(!line.contains('\n'));
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["type"], "touch");
        assert_eq!(v["finger_id"], 1);
        assert_eq!(serde_json::from_str::<UiMessage>(&line).unwrap(), m);
    }
}
