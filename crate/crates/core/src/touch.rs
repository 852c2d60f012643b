//! Contact detection on high-rate joint-angle telemetry.
//!
//! Each joint is compared against a slowly tracking baseline. A touch is a
//! deviation that exceeds the threshold for a few consecutive samples and then
//! comes back towards the baseline within `window` samples. Deviations that
//! never come back (a commanded bend, a new resting pose) are absorbed into the
//! baseline without raising an event.

use std::f64::consts::TAU;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::JointAngles;

/// Consecutive over-threshold samples needed to open an excursion.
const MIN_PERSISTENCE: usize = 3;
/// An excursion closes once every joint is back under this fraction of the
/// threshold.
const RETURN_FRACTION: f64 = 0.75;

/// One encoder quantization step of the 16-bit sensors.
pub const QUANTIZATION_STEP: f64 = TAU / 65536.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    /// Longest excursion, in samples, still treated as a touch.
    pub window: usize,
    /// Deviation from baseline that opens an excursion, radians.
    pub threshold: f64,
    /// Minimum time between event onsets, seconds.
    pub refractory: f64,
    /// EMA coefficient of the baseline.
    pub baseline_alpha: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            window: 50,
            threshold: 6.0 * QUANTIZATION_STEP,
            refractory: 0.15,
            baseline_alpha: 0.02,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.window < 4 {
            return Err(format!("window must be >= 4 samples, got {}", self.window));
        }
        if !(self.threshold > 0.0) || !self.threshold.is_finite() {
            return Err(format!("threshold must be > 0, got {}", self.threshold));
        }
        if !(self.refractory >= 0.0) || !self.refractory.is_finite() {
            return Err(format!("refractory must be >= 0, got {}", self.refractory));
        }
        if !(self.baseline_alpha > 0.0 && self.baseline_alpha <= 1.0) {
            return Err(format!(
                "baseline_alpha must be in (0, 1], got {}",
                self.baseline_alpha
            ));
        }
        Ok(())
    }
}

/// Decoded pose sample of one finger.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TelemetryFrame {
    pub finger_id: u8,
    pub seq: u32,
    pub timestamp_us: u64,
    pub angles: JointAngles,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TouchEvent {
    pub finger_id: u8,
    /// Joint with the largest deviation, 0-based in `[θ1, θ2, θ3]` order.
    pub joint: u8,
    pub onset_us: u64,
    /// Largest absolute deviation from baseline, radians.
    pub peak: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    Idle { run: usize, run_onset: u64 },
    Excursion { onset: u64, len: usize, peak: f64, joint: u8 },
}

#[derive(Debug, Clone)]
pub struct TouchDetector {
    config: DetectorConfig,
    finger_id: u8,
    baseline: Option<[f64; 3]>,
    phase: Phase,
    last_seq: Option<u32>,
    last_onset: Option<u64>,
    regressions: u64,
    absorbed: u64,
}

impl TouchDetector {
    pub fn new(finger_id: u8, config: DetectorConfig) -> Self {
        Self {
            config,
            finger_id,
            baseline: None,
            phase: Phase::Idle {
                run: 0,
                run_onset: 0,
            },
            last_seq: None,
            last_onset: None,
            regressions: 0,
            absorbed: 0,
        }
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    /// Frames dropped because their sequence number did not advance.
    pub fn regressions(&self) -> u64 {
        self.regressions
    }

    /// Excursions that never returned and were folded into the baseline.
    pub fn absorbed(&self) -> u64 {
        self.absorbed
    }

    pub fn baseline(&self) -> Option<JointAngles> {
        self.baseline.map(JointAngles::from_array)
    }

    pub fn feed(&mut self, frame: &TelemetryFrame) -> Vec<TouchEvent> {
        if let Some(last) = self.last_seq {
            if frame.seq <= last {
                self.regressions += 1;
                return Vec::new();
            }
        }
        self.last_seq = Some(frame.seq);
        self.process(frame.timestamp_us, frame.angles.as_array())
            .into_iter()
            .collect()
    }

    fn process(&mut self, t: u64, theta: [f64; 3]) -> Option<TouchEvent> {
        let Some(baseline) = self.baseline.as_mut() else {
            self.baseline = Some(theta);
            return None;
        };
        let thr = self.config.threshold;
        let dev = [0, 1, 2].map(|i| theta[i] - baseline[i]);
        let (joint, mag) = dev
            .iter()
            .enumerate()
            .map(|(i, d)| (i as u8, d.abs()))
            .fold((0u8, 0.0_f64), |best, cur| if cur.1 > best.1 { cur } else { best });

        match self.phase {
            Phase::Idle { run, run_onset } => {
                if mag >= thr {
                    let run_onset = if run == 0 { t } else { run_onset };
                    let run = run + 1;
                    self.phase = if run >= MIN_PERSISTENCE {
                        Phase::Excursion {
                            onset: run_onset,
                            len: run,
                            peak: mag,
                            joint,
                        }
                    } else {
                        Phase::Idle { run, run_onset }
                    };
                    // Hold the baseline while a candidate excursion is open.
                    return None;
                }
                self.phase = Phase::Idle {
                    run: 0,
                    run_onset: 0,
                };
                let a = self.config.baseline_alpha;
                for i in 0..3 {
                    baseline[i] += a * (theta[i] - baseline[i]);
                }
                None
            }
            Phase::Excursion {
                onset,
                len,
                peak,
                joint: peak_joint,
            } => {
                let (peak, peak_joint) = if mag > peak {
                    (mag, joint)
                } else {
                    (peak, peak_joint)
                };
                if mag < RETURN_FRACTION * thr {
                    self.phase = Phase::Idle {
                        run: 0,
                        run_onset: 0,
                    };
                    let refractory_us = (self.config.refractory * 1e6) as u64;
                    if let Some(last) = self.last_onset {
                        if onset.saturating_sub(last) < refractory_us {
                            return None;
                        }
                    }
                    self.last_onset = Some(onset);
                    return Some(TouchEvent {
                        finger_id: self.finger_id,
                        joint: peak_joint,
                        onset_us: onset,
                        peak,
                    });
                }
                if len + 1 > self.config.window {
                    // Never came back: treat as commanded motion.
                    *baseline = theta;
                    self.absorbed += 1;
                    self.phase = Phase::Idle {
                        run: 0,
                        run_onset: 0,
                    };
                    return None;
                }
                self.phase = Phase::Excursion {
                    onset,
                    len: len + 1,
                    peak,
                    joint: peak_joint,
                };
                None
            }
        }
    }
}

/// One row of a batch trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSample {
    pub timestamp_us: u64,
    pub angles: JointAngles,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("row {row}: {reason}")]
    Malformed { row: usize, reason: String },
    #[error("reading trace: {0}")]
    Io(#[from] std::io::Error),
}

/// Parse a CSV trace of `timestamp_us, θ1, θ2, θ3` rows.
///
/// Rows with five fields are read as `timestamp_us, finger_id, θ1, θ2, θ3`.
/// A leading header row and blank lines are skipped. Rows are numbered from 1.
pub fn read_trace<R: BufRead>(input: R) -> Result<Vec<TraceSample>, TraceError> {
    let mut out = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let row = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if row == 1 && fields[0].parse::<u64>().is_err() {
            continue;
        }
        let angle_fields = match fields.len() {
            4 => &fields[1..4],
            5 => &fields[2..5],
            n => {
                return Err(TraceError::Malformed {
                    row,
                    reason: format!("expected 4 or 5 fields, found {n}"),
                })
            }
        };
        let timestamp_us = fields[0].parse::<u64>().map_err(|e| TraceError::Malformed {
            row,
            reason: format!("timestamp {:?}: {e}", fields[0]),
        })?;
        let mut angles = [0.0; 3];
        for (slot, text) in angles.iter_mut().zip(angle_fields) {
            *slot = text
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| TraceError::Malformed {
                    row,
                    reason: format!("angle {text:?} is not a finite number"),
                })?;
        }
        out.push(TraceSample {
            timestamp_us,
            angles: JointAngles::from_array(angles),
        });
    }
    Ok(out)
}

/// Run a fresh detector over a whole trace.
pub fn detect_batch(finger_id: u8, samples: &[TraceSample], config: DetectorConfig) -> Vec<TouchEvent> {
    let mut det = TouchDetector::new(finger_id, config);
    samples
        .iter()
        .enumerate()
        .flat_map(|(i, s)| {
            det.feed(&TelemetryFrame {
                finger_id,
                seq: i as u32,
                timestamp_us: s.timestamp_us,
                angles: s.angles,
            })
        })
        .collect()
}
