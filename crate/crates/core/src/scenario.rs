//! Scripted simulation runs.
//!
//! A run manifest names a hand, a seed, a duration and a timed list of
//! actions. [`run_scenario`] plays it on a [`SimHand`] and produces the
//! session record plus plot-ready artifacts.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::Spanned;

use crate::config::{line_col, ConfigSet};
use crate::grasp::GraspReport;
use crate::hand::HandConfiguration;
use crate::kinematics::{JointAngles, PlanarPoint};
use crate::protocol::{Message, Microradians};
use crate::record::{parse_session, Direction, RecordError};
use crate::simhand::{SimError, SimHand, SimHandConfig};
use crate::touch::TouchEvent;

const MAX_DURATION: f64 = 3600.0;
const DEFAULT_TOUCH_DURATION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ManifestError {
    pub file: String,
    pub diagnostics: Vec<Diagnostic>,
}

impl fmt::Display for ManifestError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.diagnostics.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{}:{}:{}: {}", self.file, d.line, d.column, d.message)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Grasp { name: String },
    Joints { finger: u8, angles: JointAngles },
    /// Spool targets `[flexor, extensor]`, radians.
    Motors { finger: u8, targets: [f64; 2] },
    /// Fingertip force in newtons.
    Touch { finger: u8, force: PlanarPoint, duration: f64 },
    Detach { finger: u8 },
    Attach { finger: u8 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimedAction {
    /// Seconds from the start of the run.
    pub at: f64,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone)]
pub struct RunManifest {
    pub hand: HandConfiguration,
    pub seed: u64,
    /// Seconds
    pub duration: f64,
    pub noise_std: Option<f64>,
    pub output: Option<PathBuf>,
    pub actions: Vec<TimedAction>,
    /// Manifest text, stored in the session header.
    pub source: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    hand: Spanned<String>,
    #[serde(default)]
    seed: u64,
    duration: Spanned<f64>,
    nodes: Option<Spanned<usize>>,
    sensor_noise_steps: Option<Spanned<f64>>,
    output: Option<PathBuf>,
    #[serde(default)]
    event: Vec<Spanned<RawEvent>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    at: f64,
    finger: Option<u8>,
    grasp: Option<String>,
    joints: Option<[f64; 3]>,
    motors: Option<[f64; 2]>,
    touch: Option<[f64; 2]>,
    touch_duration: Option<f64>,
    detach: Option<u8>,
    attach: Option<u8>,
}

impl RunManifest {
    pub fn load(path: &Path, presets: &ConfigSet) -> Result<Self, ManifestError> {
        let file = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|e| ManifestError {
            file: file.clone(),
            diagnostics: vec![Diagnostic {
                line: 1,
                column: 1,
                message: e.to_string(),
            }],
        })?;
        let mut m = Self::parse(&file, &text, presets)?;
        // Relative output paths are taken from the manifest's directory.
        if let (Some(out), Some(dir)) = (&m.output, path.parent()) {
            if out.is_relative() {
                m.output = Some(dir.join(out));
            }
        }
        Ok(m)
    }

    pub fn parse(file: &str, text: &str, presets: &ConfigSet) -> Result<Self, ManifestError> {
        let fail = |diagnostics| ManifestError {
            file: file.to_string(),
            diagnostics,
        };
        let diag = |span: std::ops::Range<usize>, message: String| {
            let (line, column) = line_col(text, span.start);
            Diagnostic {
                line,
                column,
                message,
            }
        };

        let raw: RawManifest = toml::from_str(text).map_err(|e| {
            let span = e.span().unwrap_or(0..0);
            fail(vec![diag(span, e.message().trim().to_string())])
        })?;

        let mut errors = Vec::new();
        let hand = match presets.hand(raw.hand.get_ref()) {
            Ok(h) => Some(h),
            Err(e) => {
                errors.push(diag(raw.hand.span(), e.to_string()));
                None
            }
        };
        let hand = match (&hand, &raw.nodes) {
            (Some(h), Some(n)) => {
                let want = *n.get_ref();
                if want == 0 || want > h.entries().len() {
                    errors.push(diag(
                        n.span(),
                        format!(
                            "nodes must be between 1 and {} for hand {:?}, got {want}",
                            h.entries().len(),
                            h.name()
                        ),
                    ));
                    None
                } else {
                    let drop: Vec<u8> = h.entries()[want..].iter().map(|e| e.id).collect();
                    h.without(&drop).ok()
                }
            }
            (h, _) => h.clone(),
        };

        let duration = *raw.duration.get_ref();
        if !(duration > 0.0 && duration <= MAX_DURATION) {
            errors.push(diag(
                raw.duration.span(),
                format!("duration must be in (0, {MAX_DURATION}] seconds, got {duration}"),
            ));
        }
        let noise_std = match &raw.sensor_noise_steps {
            Some(n) if !(*n.get_ref() >= 0.0) => {
                errors.push(diag(n.span(), "sensor_noise_steps must be >= 0".into()));
                None
            }
            Some(n) => {
                let step = crate::sensor::SensorModel::noiseless(
                    presets.finger_defaults().sensor.resolution_bits,
                )
                .step();
                Some(n.get_ref() * step)
            }
            None => None,
        };

        let mut actions = Vec::new();
        let mut last_at = 0.0f64;
        for ev in &raw.event {
            let span = ev.span();
            let e = ev.get_ref();
            match parse_event(e, hand.as_ref(), presets) {
                Ok(action) => {
                    if !(e.at >= 0.0) || !e.at.is_finite() {
                        errors.push(diag(span.clone(), format!("event time must be >= 0, got {}", e.at)));
                    } else if e.at < last_at {
                        errors.push(diag(
                            span.clone(),
                            format!("event at {} s precedes the previous event at {last_at} s", e.at),
                        ));
                    } else if e.at > duration {
                        errors.push(diag(
                            span.clone(),
                            format!("event at {} s is after the end of the run ({duration} s)", e.at),
                        ));
                    }
                    last_at = last_at.max(e.at);
                    actions.push(TimedAction { at: e.at, action });
                }
                Err(message) => errors.push(diag(span, message)),
            }
        }

        match hand {
            Some(hand) if errors.is_empty() => Ok(Self {
                hand,
                seed: raw.seed,
                duration,
                noise_std,
                output: raw.output,
                actions,
                source: text.to_string(),
            }),
            _ => Err(fail(errors)),
        }
    }
}

fn parse_event(e: &RawEvent, hand: Option<&HandConfiguration>, presets: &ConfigSet) -> Result<Action, String> {
    let kinds = [
        e.grasp.is_some(),
        e.joints.is_some(),
        e.motors.is_some(),
        e.touch.is_some(),
        e.detach.is_some(),
        e.attach.is_some(),
    ];
    let n = kinds.iter().filter(|k| **k).count();
    if n != 1 {
        return Err(format!(
            "event needs exactly one of grasp, joints, motors, touch, detach, attach (found {n})"
        ));
    }
    let known = |id: u8| -> Result<u8, String> {
        match hand {
            Some(h) if h.entry(id).is_none() => Err(format!("finger {id} is not part of the hand")),
            _ => Ok(id),
        }
    };
    let finger = || -> Result<u8, String> {
        e.finger
            .ok_or_else(|| "this event needs a `finger`".to_string())
            .and_then(known)
    };
    if e.touch_duration.is_some() && e.touch.is_none() {
        return Err("touch_duration only applies to touch events".into());
    }
    if e.finger.is_some() && (e.grasp.is_some() || e.detach.is_some() || e.attach.is_some()) {
        return Err("`finger` does not apply to this event".into());
    }
    let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
    if let Some(name) = &e.grasp {
        return presets
            .grasps()
            .get(name)
            .map(|g| Action::Grasp {
                name: g.name().to_string(),
            })
            .ok_or_else(|| format!("unknown grasp {name:?}"));
    }
    if let Some(q) = e.joints {
        if !finite(&q) {
            return Err("joint targets must be finite".into());
        }
        return Ok(Action::Joints {
            finger: finger()?,
            angles: JointAngles::from_array(q),
        });
    }
    if let Some(t) = e.motors {
        if !finite(&t) {
            return Err("motor targets must be finite".into());
        }
        return Ok(Action::Motors {
            finger: finger()?,
            targets: t,
        });
    }
    if let Some(f) = e.touch {
        let duration = e.touch_duration.unwrap_or(DEFAULT_TOUCH_DURATION);
        if !finite(&f) || !(duration > 0.0) {
            return Err("touch needs a finite force and touch_duration > 0".into());
        }
        return Ok(Action::Touch {
            finger: finger()?,
            force: PlanarPoint::new(f[0], f[1]),
            duration,
        });
    }
    if let Some(id) = e.detach {
        return Ok(Action::Detach { finger: known(id)? });
    }
    let id = e.attach.expect("one kind is set");
    Ok(Action::Attach { finger: known(id)? })
}

/// Something the scenario asked for that could not be done.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActionFailure {
    pub at_us: u64,
    pub action: Action,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub session: Vec<u8>,
    pub reports: Vec<GraspReport>,
    pub touches: Vec<TouchEvent>,
    pub failures: Vec<ActionFailure>,
    /// Pose samples per finger as `(node timestamp µs, angles)`.
    pub traces: BTreeMap<u8, Vec<(u64, JointAngles)>>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn us(seconds: f64) -> u64 {
    (seconds * 1e6).round() as u64
}

pub fn run_scenario(manifest: &RunManifest, presets: &ConfigSet) -> Result<ScenarioOutcome, ScenarioError> {
    let mut cfg = SimHandConfig::new(presets.clone(), manifest.hand.clone(), manifest.seed);
    cfg.noise_std = manifest.noise_std;
    cfg.snapshot = manifest.source.clone();
    let mut hand = SimHand::new(cfg)?;
    let mut failures = Vec::new();

    for a in &manifest.actions {
        hand.run_until(us(a.at))?;
        let res = match &a.action {
            Action::Grasp { name } => hand.execute_grasp(name),
            Action::Joints { finger, angles } => hand.set_joint_targets(*finger, *angles),
            Action::Motors { finger, targets } => hand.set_motor_targets(*finger, *targets),
            Action::Touch {
                finger,
                force,
                duration,
            } => hand.inject_touch(*finger, *force, *duration),
            Action::Detach { finger } => hand.detach(*finger),
            Action::Attach { finger } => hand.attach(*finger),
        };
        if let Err(e) = res {
            failures.push(ActionFailure {
                at_us: hand.now(),
                action: a.action.clone(),
                error: e.to_string(),
            });
        }
    }
    hand.run_until(us(manifest.duration))?;
    let (coordinator, session) = hand.finish()?;

    let mut traces: BTreeMap<u8, Vec<(u64, JointAngles)>> = manifest
        .hand
        .entries()
        .iter()
        .map(|e| (e.id, Vec::new()))
        .collect();
    for (entry, frame) in parse_session(&session)?.decode_all()? {
        if entry.direction != Direction::Inbound {
            continue;
        }
        if let Message::PoseTelemetry { angles } = frame.message {
            traces.entry(frame.header.finger_id).or_default().push((
                frame.header.timestamp_us,
                JointAngles::from_array(angles.map(Microradians::radians)),
            ));
        }
    }

    Ok(ScenarioOutcome {
        session,
        reports: coordinator.reports().to_vec(),
        touches: coordinator.touches().to_vec(),
        failures,
        traces,
    })
}

impl ScenarioOutcome {
    /// Every grasp report succeeded and every action was carried out.
    pub fn is_clean(&self) -> bool {
        self.failures.is_empty() && self.reports.iter().all(|r| r.success)
    }

    pub fn angles_csv(&self, finger_id: u8) -> String {
        let mut s = String::from("timestamp_us,finger_id,theta1,theta2,theta3\n");
        for (t, q) in self.traces.get(&finger_id).into_iter().flatten() {
            let _ = writeln!(s, "{t},{finger_id},{},{},{}", q.theta1, q.theta2, q.theta3);
        }
        s
    }

    pub fn touches_csv(&self) -> String {
        let mut s = String::from("onset_us,finger_id,joint,peak\n");
        for e in &self.touches {
            let _ = writeln!(s, "{},{},{},{}", e.onset_us, e.finger_id, e.joint, e.peak);
        }
        s
    }

    pub fn reports_json(&self) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            reports: &'a [GraspReport],
            failures: &'a [ActionFailure],
        }
        let mut s = serde_json::to_string_pretty(&Out {
            reports: &self.reports,
            failures: &self.failures,
        })
        .expect("reports serialize");
        s.push('\n');
        s
    }

    /// Write `session.hfsr`, `grasp_reports.json`, `touch_events.csv` and one
    /// `angles_finger{id}.csv` per finger into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>, ScenarioError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| ScenarioError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let mut files: Vec<(PathBuf, Vec<u8>)> = vec![
            (dir.join("session.hfsr"), self.session.clone()),
            (dir.join("grasp_reports.json"), self.reports_json().into_bytes()),
            (dir.join("touch_events.csv"), self.touches_csv().into_bytes()),
        ];
        for id in self.traces.keys() {
            files.push((
                dir.join(format!("angles_finger{id}.csv")),
                self.angles_csv(*id).into_bytes(),
            ));
        }
        let mut written = Vec::new();
        for (path, data) in files {
            fs::write(&path, data).map_err(io(&path))?;
            written.push(path);
        }
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunManifest, ManifestError> {
        RunManifest::parse("m.toml", text, &ConfigSet::embedded())
    }

    #[test]
    fn minimal_manifest() {
        let m = parse("hand = 'five-finger'\nduration = 1.0\n").unwrap();
        assert_eq!(m.hand.entries().len(), 5);
        assert!(m.actions.is_empty());
    }

    #[test]
    fn node_count_selects_first_fingers() {
        let m = parse("hand = 'five-finger'\nduration = 1.0\nnodes = 2\n").unwrap();
        let ids: Vec<u8> = m.hand.entries().iter().map(|e| e.id).collect();
        assert_eq!(ids, vec![0, 1]);
    }

    #[test]
    fn diagnostics_point_at_lines() {
        let text = "hand = 'five-finger'\nduration = 1.0\n\n[[event]]\nat = 0.5\ngrasp = 'tripod'\n\n\
                    [[event]]\nat = 0.2\ngrasp = 'ring'\n\n[[event]]\nat = 0.6\ngrasp = 'wave'\n";
        let err = parse(text).unwrap_err();
        assert_eq!(err.diagnostics.len(), 2);
        assert_eq!(err.diagnostics[0].line, 8);
        assert!(err.diagnostics[0].message.contains("precedes"));
        assert_eq!(err.diagnostics[1].line, 12);
        assert!(err.to_string().starts_with("m.toml:8:"));
    }

    #[test]
    fn unknown_hand_and_bad_values() {
        let err = parse("hand = 'octopus'\nduration = -1\n").unwrap_err();
        let lines: Vec<usize> = err.diagnostics.iter().map(|d| d.line).collect();
        assert_eq!(lines, vec![1, 2]);
        let err = parse("hand = 'five-finger'\nduration = 1\nspeed = 2\n").unwrap_err();
        assert_eq!(err.diagnostics[0].line, 3);
    }

    #[test]
    fn event_shape_is_checked() {
        let base = "hand = 'four-finger'\nduration = 1.0\n[[event]]\nat = 0.1\n";
        assert!(parse(&format!("{base}joints = [0.1, 0.1, 0.1]\n")).is_err());
        assert!(parse(&format!("{base}finger = 0\njoints = [0.1, 0.1, 0.1]\n")).is_err());
        assert!(parse(&format!("{base}finger = 1\njoints = [0.1, 0.1, 0.1]\ndetach = 2\n")).is_err());
        assert!(parse(&format!("{base}finger = 1\ntouch = [0.0, 0.02]\n")).is_ok());
        assert!(parse(&format!("{base}at = 2.0\n")).is_err());
    }
}
