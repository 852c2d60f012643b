//! Named grasp presets and execution reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hand::Role;
use crate::kinematics::JointAngles;

/// Phase budget of a grasp, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GraspTiming {
    pub preshape: f64,
    pub close: f64,
    pub hold: f64,
}

impl GraspTiming {
    pub fn total(&self) -> f64 {
        self.preshape + self.close + self.hold
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrasp", into = "RawGrasp")]
pub struct GraspSpec {
    name: String,
    panel: Option<String>,
    note: String,
    targets: BTreeMap<Role, JointAngles>,
    /// Target for attached fingers without an explicit entry.
    default: Option<JointAngles>,
    timing: GraspTiming,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrasp {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    panel: Option<String>,
    #[serde(default)]
    note: String,
    preshape: f64,
    close: f64,
    hold: f64,
    #[serde(default)]
    targets: BTreeMap<Role, [f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    default: Option<[f64; 3]>,
}

impl TryFrom<RawGrasp> for GraspSpec {
    type Error = GraspError;
    fn try_from(r: RawGrasp) -> Result<Self, Self::Error> {
        GraspSpec::new(
            r.name,
            r.targets
                .into_iter()
                .map(|(role, q)| (role, JointAngles::from_array(q)))
                .collect(),
            r.default.map(JointAngles::from_array),
            GraspTiming {
                preshape: r.preshape,
                close: r.close,
                hold: r.hold,
            },
        )
        .map(|g| g.with_notes(r.panel, r.note))
    }
}

impl From<GraspSpec> for RawGrasp {
    fn from(g: GraspSpec) -> Self {
        RawGrasp {
            name: g.name,
            panel: g.panel,
            note: g.note,
            preshape: g.timing.preshape,
            close: g.timing.close,
            hold: g.timing.hold,
            targets: g.targets.into_iter().map(|(r, q)| (r, q.as_array())).collect(),
            default: g.default.map(|q| q.as_array()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraspError {
    #[error("grasp {grasp:?} requires a {role} finger, which is not attached")]
    MissingRole { grasp: String, role: Role },
    #[error("unknown grasp {0:?}")]
    Unknown(String),
    #[error("grasp {0:?} is already running")]
    Busy(String),
    #[error("grasp {grasp:?} target for {role} lies outside the finger's joint limits")]
    OutOfLimits { grasp: String, role: Role },
    #[error("no fingers attached")]
    NoFingers,
    #[error("invalid grasp {name:?}: {reason}")]
    Invalid { name: String, reason: String },
}

impl GraspSpec {
    pub fn new(
        name: impl Into<String>,
        targets: BTreeMap<Role, JointAngles>,
        default: Option<JointAngles>,
        timing: GraspTiming,
    ) -> Result<Self, GraspError> {
        let name = name.into();
        let invalid = |reason: String| GraspError::Invalid {
            name: name.clone(),
            reason,
        };
        if name.trim().is_empty() {
            return Err(invalid("empty name".into()));
        }
        for t in [timing.preshape, timing.close, timing.hold] {
            if !(t >= 0.0) || !t.is_finite() {
                return Err(invalid(format!("phase durations must be >= 0, got {t}")));
            }
        }
        if targets.is_empty() && default.is_none() {
            return Err(invalid("no targets".into()));
        }
        if targets.contains_key(&Role::Generic) {
            return Err(invalid("generic fingers cannot be targeted by role".into()));
        }
        let finite = |q: &JointAngles| q.as_array().iter().all(|v| v.is_finite());
        if !targets.values().all(finite) || !default.iter().all(finite) {
            return Err(invalid("non-finite target".into()));
        }
        Ok(Self {
            name,
            panel: None,
            note: String::new(),
            targets,
            default,
            timing,
        })
    }

    pub fn with_notes(mut self, panel: Option<String>, note: impl Into<String>) -> Self {
        self.panel = panel;
        self.note = note.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Figure panel of the demonstration this preset reproduces.
    pub fn panel(&self) -> Option<&str> {
        self.panel.as_deref()
    }

    pub fn note(&self) -> &str {
        &self.note
    }

    pub fn timing(&self) -> GraspTiming {
        self.timing
    }

    pub fn required_roles(&self) -> impl Iterator<Item = Role> + '_ {
        self.targets.keys().copied()
    }

    /// Final target for a finger of `role`, if it takes part.
    pub fn target_for(&self, role: Role) -> Option<JointAngles> {
        self.targets.get(&role).copied().or(self.default)
    }

    /// Pre-shape target: halfway to the final pose.
    pub fn preshape_for(&self, role: Role) -> Option<JointAngles> {
        self.target_for(role)
            .map(|q| JointAngles::from_array(q.as_array().map(|v| 0.5 * v)))
    }
}

/// Grasp presets keyed by name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GraspLibrary {
    grasps: Vec<GraspSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLibrary {
    grasp: Vec<GraspSpec>,
}

impl GraspLibrary {
    pub fn new(grasps: Vec<GraspSpec>) -> Result<Self, GraspError> {
        let mut seen = std::collections::BTreeSet::new();
        for g in &grasps {
            if !seen.insert(g.name.to_lowercase()) {
                return Err(GraspError::Invalid {
                    name: g.name.clone(),
                    reason: "duplicate name".into(),
                });
            }
        }
        Ok(Self { grasps })
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        let raw: RawLibrary = toml::from_str(text)?;
        Self::new(raw.grasp).map_err(|e| serde::de::Error::custom(e.to_string()))
    }

    /// Case-insensitive lookup.
    pub fn get(&self, name: &str) -> Option<&GraspSpec> {
        self.grasps
            .iter()
            .find(|g| g.name.eq_ignore_ascii_case(name.trim()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &GraspSpec> {
        self.grasps.iter()
    }

    pub fn names(&self) -> Vec<String> {
        self.grasps.iter().map(|g| g.name.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraspPhase {
    Preshape,
    Close,
    Hold,
    /// Hold elapsed without convergence; waiting out the remaining budget.
    Settling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerOutcome {
    pub finger_id: u8,
    pub role: Role,
    pub target: JointAngles,
    /// Last reported pose, if any arrived.
    pub measured: Option<JointAngles>,
    /// Largest per-joint error, radians.
    pub max_error: f64,
    /// Euclidean norm of the joint error, radians.
    pub error_norm: f64,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspReport {
    pub grasp: String,
    pub started_us: u64,
    pub finished_us: u64,
    pub tolerance: f64,
    pub success: bool,
    pub timed_out: bool,
    pub fingers: Vec<FingerOutcome>,
}

impl FingerOutcome {
    pub fn evaluate(
        finger_id: u8,
        role: Role,
        target: JointAngles,
        measured: Option<JointAngles>,
        tolerance: f64,
    ) -> Self {
        let (max_error, error_norm) = match measured {
            Some(m) => {
                let d = [
                    m.theta1 - target.theta1,
                    m.theta2 - target.theta2,
                    m.theta3 - target.theta3,
                ];
                (
                    d.iter().fold(0.0f64, |a, v| a.max(v.abs())),
                    d.iter().map(|v| v * v).sum::<f64>().sqrt(),
                )
            }
            None => (f64::INFINITY, f64::INFINITY),
        };
        Self {
            finger_id,
            role,
            target,
            measured,
            max_error,
            error_norm,
            success: max_error <= tolerance,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PRESETS: &str = include_str!("../../../config/grasps.toml");

    #[test]
    fn shipped_presets_parse() {
        let lib = GraspLibrary::from_toml(PRESETS).unwrap();
        assert_eq!(lib.names().len(), 10);
        let pinch = lib.get("Tip Pinch").unwrap();
        assert_eq!(pinch.panel(), Some("e"));
        let roles: Vec<_> = pinch.required_roles().collect();
        assert_eq!(roles, vec![Role::Thumb, Role::Index]);
        assert_eq!(pinch.target_for(Role::Ring), None);
        let neutral = lib.get("neutral").unwrap();
        assert_eq!(neutral.required_roles().count(), 0);
        assert_eq!(neutral.target_for(Role::Little), Some(JointAngles::ZERO));
    }

    #[test]
    fn rejects_bad_specs() {
        let t = GraspTiming {
            preshape: -1.0,
            ..Default::default()
        };
        assert!(GraspSpec::new("x", BTreeMap::new(), Some(JointAngles::ZERO), t).is_err());
        let ok = GraspTiming::default();
        assert!(GraspSpec::new("x", BTreeMap::new(), None, ok).is_err());
        let dup = "[[grasp]]\nname='a'\npreshape=0\nclose=0\nhold=0\ndefault=[0,0,0]\n";
        assert!(GraspLibrary::from_toml(&format!("{dup}{dup}")).is_err());
    }

    #[test]
    fn outcome_without_measurement_fails() {
        let o = FingerOutcome::evaluate(1, Role::Index, JointAngles::ZERO, None, 0.05);
        assert!(!o.success);
        let o = FingerOutcome::evaluate(
            1,
            Role::Index,
            JointAngles::ZERO,
            Some(JointAngles::new(0.05, -0.01, 0.0)),
            0.05,
        );
        assert!(o.success);
        assert!((o.error_norm - (0.0025f64 + 0.0001).sqrt()).abs() < 1e-12);
    }
}
