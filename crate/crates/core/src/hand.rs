//! Hand morphology: which finger modules exist, where they are mounted and
//! what role each plays.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::PlanarPoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Thumb,
    Index,
    Middle,
    Ring,
    Little,
    Generic,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::Thumb,
        Role::Index,
        Role::Middle,
        Role::Ring,
        Role::Little,
        Role::Generic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Thumb => "thumb",
            Role::Index => "index",
            Role::Middle => "middle",
            Role::Ring => "ring",
            Role::Little => "little",
            Role::Generic => "generic",
        }
    }

    pub fn to_wire(self) -> u8 {
        self as u8
    }

    pub fn from_wire(v: u8) -> Option<Role> {
        Role::ALL.get(v as usize).copied()
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown role {s:?}"))
    }
}

/// Planar placement of a finger root in the hand frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MountPose {
    #[serde(default)]
    pub x: f64,
    #[serde(default)]
    pub y: f64,
    /// Rotation of the finger x-axis relative to the hand x-axis, radians.
    #[serde(default)]
    pub yaw: f64,
}

impl MountPose {
    /// Map a point from the finger root frame into the hand frame.
    pub fn apply(&self, p: &PlanarPoint) -> PlanarPoint {
        let (s, c) = self.yaw.sin_cos();
        PlanarPoint::new(self.x + c * p.x - s * p.y, self.y + s * p.x + c * p.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandEntry {
    pub id: u8,
    pub role: Role,
    #[serde(default)]
    pub mount: MountPose,
    /// Name of a geometry preset.
    pub geometry: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HandConfigError {
    #[error("hand configuration has no fingers")]
    Empty,
    #[error("finger id {0} appears more than once")]
    DuplicateId(u8),
    #[error("role {0} is assigned to more than one finger")]
    DuplicateRole(Role),
}

/// A set of finger modules forming one hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawHand", into = "RawHand")]
pub struct HandConfiguration {
    name: String,
    entries: Vec<HandEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHand {
    name: String,
    #[serde(rename = "finger")]
    entries: Vec<HandEntry>,
}

impl TryFrom<RawHand> for HandConfiguration {
    type Error = HandConfigError;
    fn try_from(r: RawHand) -> Result<Self, Self::Error> {
        HandConfiguration::new(r.name, r.entries)
    }
}

impl From<HandConfiguration> for RawHand {
    fn from(h: HandConfiguration) -> Self {
        RawHand {
            name: h.name,
            entries: h.entries,
        }
    }
}

impl HandConfiguration {
    pub fn new(name: impl Into<String>, mut entries: Vec<HandEntry>) -> Result<Self, HandConfigError> {
        if entries.is_empty() {
            return Err(HandConfigError::Empty);
        }
        let mut ids = BTreeSet::new();
        let mut roles = BTreeSet::new();
        for e in &entries {
            if !ids.insert(e.id) {
                return Err(HandConfigError::DuplicateId(e.id));
            }
            if e.role != Role::Generic && !roles.insert(e.role) {
                return Err(HandConfigError::DuplicateRole(e.role));
            }
        }
        entries.sort_by_key(|e| e.id);
        Ok(Self {
            name: name.into(),
            entries,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn entries(&self) -> &[HandEntry] {
        &self.entries
    }

    pub fn entry(&self, id: u8) -> Option<&HandEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn by_role(&self, role: Role) -> Option<&HandEntry> {
        self.entries.iter().find(|e| e.role == role)
    }

    pub fn roles(&self) -> BTreeSet<Role> {
        self.entries.iter().map(|e| e.role).collect()
    }

    /// Same hand without the given fingers.
    pub fn without(&self, ids: &[u8]) -> Result<Self, HandConfigError> {
        Self::new(
            self.name.clone(),
            self.entries
                .iter()
                .filter(|e| !ids.contains(&e.id))
                .cloned()
                .collect(),
        )
    }
}
