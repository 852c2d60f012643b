//! Preset loading. Built-in presets are compiled in; a config directory (from
//! the caller or `SKELEHAND_CONFIG_DIR`) overrides them file by file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::dynamics::{SkinModel, TendonConfig};
use crate::grasp::GraspLibrary;
use crate::hand::{HandConfiguration, HandEntry};
use crate::kinematics::FingerGeometry;
use crate::node::NodeConfig;
use crate::sensor::SensorModel;
use crate::sim::{FingerParams, MotorConfig};
use crate::touch::DetectorConfig;

pub const ENV_CONFIG_DIR: &str = "SKELEHAND_CONFIG_DIR";

const GEOMETRY_TOML: &str = include_str!("../../../config/geometry.toml");
const FINGER_TOML: &str = include_str!("../../../config/finger.toml");
const GRASPS_TOML: &str = include_str!("../../../config/grasps.toml");
const BUILTIN_HANDS: [(&str, &str); 3] = [
    ("five-finger", include_str!("../../../config/hands/five-finger.toml")),
    ("four-finger", include_str!("../../../config/hands/four-finger.toml")),
    ("gripper", include_str!("../../../config/hands/gripper.toml")),
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{file}:{line}:{column}: {message}")]
    Parse {
        file: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown {kind} preset {name:?}")]
    UnknownPreset { kind: &'static str, name: String },
}

impl ConfigError {
    /// Wrap a TOML error with the 1-based line and column of its span.
    pub fn parse(file: impl Into<String>, text: &str, err: &toml::de::Error) -> Self {
        let (line, column) = err
            .span()
            .map(|s| line_col(text, s.start))
            .unwrap_or((1, 1));
        ConfigError::Parse {
            file: file.into(),
            line,
            column,
            message: err.message().trim().to_string(),
        }
    }
}

/// 1-based line and column of a byte offset.
pub fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(offset, |i| offset - i - 1) + 1;
    (line, column)
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSensor {
    resolution_bits: u8,
    noise_steps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeTiming {
    pub pose_rate: f64,
    pub motor_rate: f64,
    pub dt: f64,
    pub heartbeat_interval: f64,
    pub reconnect_attempts: u32,
    pub reconnect_backoff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDetector {
    window: usize,
    threshold_steps: f64,
    refractory: f64,
    baseline_alpha: f64,
}

/// Coordinator-side policy.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoordinatorSettings {
    /// Seconds
    pub heartbeat_timeout: f64,
    /// Seconds
    pub stale_after: f64,
    /// Radians
    pub grasp_tolerance: f64,
}

impl Default for CoordinatorSettings {
    fn default() -> Self {
        Self {
            heartbeat_timeout: 3.0,
            stale_after: 0.1,
            grasp_tolerance: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFinger {
    tendon: TendonConfig,
    skin: SkinModel,
    sensor: RawSensor,
    motor: MotorConfig,
    node: NodeTiming,
    detector: RawDetector,
    coordinator: CoordinatorSettings,
}

/// Constants shared by every finger module.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FingerDefaults {
    pub tendon: TendonConfig,
    pub skin: SkinModel,
    pub sensor: SensorModel,
    pub motor: MotorConfig,
    pub node: NodeTiming,
    pub detector: DetectorConfig,
    pub coordinator: CoordinatorSettings,
}

impl FingerDefaults {
    fn parse(file: &str, text: &str) -> Result<Self, ConfigError> {
        let raw: RawFinger = toml::from_str(text).map_err(|e| ConfigError::parse(file, text, &e))?;
        let invalid = |message: String| ConfigError::Parse {
            file: file.to_string(),
            line: 1,
            column: 1,
            message,
        };
        let step = SensorModel::noiseless(raw.sensor.resolution_bits).step();
        let sensor = SensorModel {
            resolution_bits: raw.sensor.resolution_bits,
            noise_std: raw.sensor.noise_steps * step,
        };
        sensor.validate().map_err(invalid)?;
        let detector = DetectorConfig {
            window: raw.detector.window,
            threshold: raw.detector.threshold_steps * step,
            refractory: raw.detector.refractory,
            baseline_alpha: raw.detector.baseline_alpha,
        };
        detector.validate().map_err(invalid)?;
        Ok(Self {
            tendon: raw.tendon,
            skin: raw.skin,
            sensor,
            motor: raw.motor,
            node: raw.node,
            detector,
            coordinator: raw.coordinator,
        })
    }
}

/// Every preset the stack knows about.
#[derive(Debug, Clone)]
pub struct ConfigSet {
    geometries: BTreeMap<String, FingerGeometry>,
    finger: FingerDefaults,
    grasps: GraspLibrary,
    hands: BTreeMap<String, HandConfiguration>,
    root: Option<PathBuf>,
}

impl ConfigSet {
    /// Built-in presets only.
    pub fn embedded() -> Self {
        Self::build(None).expect("built-in presets are valid")
    }

    /// Presets from `dir`, falling back to `SKELEHAND_CONFIG_DIR` and then to
    /// the built-ins for any file that is absent.
    pub fn load(dir: Option<&Path>) -> Result<Self, ConfigError> {
        match dir {
            Some(d) => Self::build(Some(d.to_path_buf())),
            None => Self::build(std::env::var_os(ENV_CONFIG_DIR).map(PathBuf::from)),
        }
    }

    fn build(root: Option<PathBuf>) -> Result<Self, ConfigError> {
        let read = |name: &str, fallback: &'static str| -> Result<(String, String), ConfigError> {
            if let Some(r) = &root {
                let p = r.join(name);
                if p.is_file() {
                    let text = fs::read_to_string(&p).map_err(|source| ConfigError::Io {
                        path: p.clone(),
                        source,
                    })?;
                    return Ok((p.display().to_string(), text));
                }
            }
            Ok((name.to_string(), fallback.to_string()))
        };

        let (file, text) = read("geometry.toml", GEOMETRY_TOML)?;
        let geometries: BTreeMap<String, FingerGeometry> =
            toml::from_str(&text).map_err(|e| ConfigError::parse(&file, &text, &e))?;

        let (file, text) = read("finger.toml", FINGER_TOML)?;
        let finger = FingerDefaults::parse(&file, &text)?;

        let (file, text) = read("grasps.toml", GRASPS_TOML)?;
        let grasps =
            GraspLibrary::from_toml(&text).map_err(|e| ConfigError::parse(&file, &text, &e))?;

        let mut hands = BTreeMap::new();
        for (name, text) in BUILTIN_HANDS {
            let hand = parse_hand(&format!("hands/{name}.toml"), text)?;
            hands.insert(name.to_string(), hand);
        }
        if let Some(dir) = root.as_ref().map(|r| r.join("hands")).filter(|d| d.is_dir()) {
            let entries = fs::read_dir(&dir).map_err(|source| ConfigError::Io {
                path: dir.clone(),
                source,
            })?;
            for entry in entries.flatten() {
                let path = entry.path();
                if path.extension().and_then(|e| e.to_str()) != Some("toml") {
                    continue;
                }
                let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
                    continue;
                };
                let hand = load_hand_file(&path)?;
                hands.insert(stem.to_string(), hand);
            }
        }

        let set = Self {
            geometries,
            finger,
            grasps,
            hands,
            root,
        };
        for hand in set.hands.values() {
            set.check_hand(hand)?;
        }
        Ok(set)
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn geometry(&self, name: &str) -> Result<FingerGeometry, ConfigError> {
        self.geometries
            .get(name)
            .copied()
            .ok_or_else(|| ConfigError::UnknownPreset {
                kind: "geometry",
                name: name.to_string(),
            })
    }

    pub fn geometry_names(&self) -> impl Iterator<Item = &str> {
        self.geometries.keys().map(String::as_str)
    }

    pub fn finger_defaults(&self) -> &FingerDefaults {
        &self.finger
    }

    pub fn grasps(&self) -> &GraspLibrary {
        &self.grasps
    }

    pub fn hand_names(&self) -> impl Iterator<Item = &str> {
        self.hands.keys().map(String::as_str)
    }

    /// A hand by preset name, or by path to a hand file.
    pub fn hand(&self, name_or_path: &str) -> Result<HandConfiguration, ConfigError> {
        if let Some(h) = self.hands.get(name_or_path) {
            return Ok(h.clone());
        }
        let path = Path::new(name_or_path);
        if path.extension().is_some_and(|e| e == "toml") || path.is_file() {
            let hand = load_hand_file(path)?;
            self.check_hand(&hand)?;
            return Ok(hand);
        }
        Err(ConfigError::UnknownPreset {
            kind: "hand",
            name: name_or_path.to_string(),
        })
    }

    fn check_hand(&self, hand: &HandConfiguration) -> Result<(), ConfigError> {
        for e in hand.entries() {
            self.geometry(&e.geometry)?;
        }
        Ok(())
    }

    pub fn finger_params(&self, entry: &HandEntry) -> Result<FingerParams, ConfigError> {
        Ok(FingerParams {
            geometry: self.geometry(&entry.geometry)?,
            tendon: self.finger.tendon,
            skin: self.finger.skin,
            sensor: self.finger.sensor,
            motor: self.finger.motor,
        })
    }

    pub fn node_config(&self, entry: &HandEntry, seed: u64) -> Result<NodeConfig, ConfigError> {
        let t = self.finger.node;
        let mut c = NodeConfig::new(entry.id, entry.role, self.finger_params(entry)?);
        c.pose_rate = t.pose_rate;
        c.motor_rate = t.motor_rate;
        c.dt = t.dt;
        c.heartbeat_interval = t.heartbeat_interval;
        c.reconnect_attempts = t.reconnect_attempts;
        c.reconnect_backoff = t.reconnect_backoff;
        c.seed = seed;
        Ok(c)
    }
}

fn parse_hand(file: &str, text: &str) -> Result<HandConfiguration, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::parse(file, text, &e))
}

fn load_hand_file(path: &Path) -> Result<HandConfiguration, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_hand(&path.display().to_string(), &text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand::Role;
    use crate::touch::QUANTIZATION_STEP;

    #[test]
    fn embedded_presets_load() {
        let c = ConfigSet::embedded();
        assert_eq!(c.geometry("index").unwrap(), FingerGeometry::index_default());
        let hand = c.hand("five-finger").unwrap();
        assert_eq!(hand.entries().len(), 5);
        assert!(c.hand("four-finger").unwrap().by_role(Role::Thumb).is_none());
        let d = c.finger_defaults();
        assert_eq!(d.sensor, SensorModel::default());
        assert!((d.detector.threshold - 6.0 * QUANTIZATION_STEP).abs() < 1e-15);
        assert_eq!(d.detector, DetectorConfig::default());
        assert_eq!(d.tendon, TendonConfig::default());
        assert_eq!(d.skin.stiffness(), SkinModel::default().stiffness());
        assert!(c.grasps().get("quadpod").is_some());
        let node = c.node_config(hand.entry(1).unwrap(), 9).unwrap();
        assert_eq!(node.pose_rate, 200.0);
        assert_eq!(node.seed, 9);
    }

    #[test]
    fn directory_overrides_and_errors_carry_lines() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("geometry.toml"),
            "[index]\nl0 = 1.0\nl1 = 1.0\nl2 = 1.0\nl3 = 1.0\n[thumb]\nl0=1\nl1=1\nl2=1\nl3=1\n\
             [middle]\nl0=1\nl1=1\nl2=1\nl3=1\n[ring]\nl0=1\nl1=1\nl2=1\nl3=1\n\
             [little]\nl0=1\nl1=1\nl2=1\nl3=1\n",
        )
        .unwrap();
        let c = ConfigSet::load(Some(dir.path())).unwrap();
        assert_eq!(c.geometry("index").unwrap().reach(), 4.0);

        fs::write(dir.path().join("grasps.toml"), "[[grasp]]\nname = 'x'\nclose = 'soon'\n").unwrap();
        match ConfigSet::load(Some(dir.path())) {
            Err(ConfigError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn hand_referencing_unknown_geometry_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("hands")).unwrap();
        fs::write(
            dir.path().join("hands/odd.toml"),
            "name = 'odd'\n[[finger]]\nid = 1\nrole = 'index'\ngeometry = 'tentacle'\n",
        )
        .unwrap();
        assert!(matches!(
            ConfigSet::load(Some(dir.path())),
            Err(ConfigError::UnknownPreset { kind: "geometry", .. })
        ));
    }

    #[test]
    fn line_col_counts_from_one() {
        assert_eq!(line_col("ab\ncd", 0), (1, 1));
        assert_eq!(line_col("ab\ncd", 4), (2, 2));
    }
}
