//! Oracles and generators shared by the integration tests and the acceptance
//! runner. Nothing here calls into the code under test for the value it is
//! checking.

#![allow(dead_code)]

use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use skelehand::dynamics::{SkinModel, TendonConfig};
use skelehand::hand::Role;
use skelehand::kinematics::{FingerGeometry, JointAngles, JointLimit};
use skelehand::protocol::{Header, Message, Microradians, MAX_ANGLE_URAD};
use skelehand::touch::{DetectorConfig, TraceSample, QUANTIZATION_STEP};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn repo_root() -> PathBuf {
    manifest_dir().join("../..")
}

// ---------------------------------------------------------------- kinematics

type Mat3 = [[f64; 3]; 3];

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    m
}

/// Rotation by `theta` followed by a translation of `len` along the new x.
fn link(theta: f64, len: f64) -> Mat3 {
    let (s, c) = theta.sin_cos();
    [[c, -s, c * len], [s, c, s * len], [0.0, 0.0, 1.0]]
}

/// Fingertip by chaining homogeneous transforms from the root:
/// `T(l3) · H3 · H2 · H1`, each `H` rotating at its joint and walking the
/// following link.
pub fn fk_matrix(lengths: [f64; 4], q: [f64; 3]) -> (f64, f64) {
    let [l0, l1, l2, l3] = lengths;
    let root = link(0.0, l3);
    let h3 = link(q[2], l2);
    let h2 = link(q[1], l1);
    let h1 = link(q[0], l0);
    let m = mat_mul(&mat_mul(&mat_mul(&root, &h3), &h2), &h1);
    (m[0][2], m[1][2])
}

pub fn random_geometry(r: &mut ChaCha8Rng) -> FingerGeometry {
    let lengths = [0; 4].map(|_| r.random_range(0.005..0.08));
    let limits = [0; 3].map(|_| JointLimit::new(-r.random_range(0.0..0.5), r.random_range(0.3..FRAC_PI_2 + 0.3)));
    FingerGeometry::new(lengths, limits).unwrap()
}

pub fn random_angles(r: &mut ChaCha8Rng, g: &FingerGeometry) -> JointAngles {
    let l = g.limits();
    JointAngles::new(
        r.random_range(l[0].min..=l[0].max),
        r.random_range(l[1].min..=l[1].max),
        r.random_range(l[2].min..=l[2].max),
    )
}

// ---------------------------------------------------------------- dynamics

#[derive(Debug, Clone, Copy)]
pub struct EquilibriumCase {
    pub geometry: FingerGeometry,
    pub tendon: TendonConfig,
    pub skin: SkinModel,
    pub flexor: f64,
    pub extensor: f64,
    pub torque: [f64; 3],
}

/// A random instance whose feasible set has an interior: cables are derived
/// from a random pose with some slack on each side.
pub fn random_equilibrium_case(r: &mut ChaCha8Rng) -> EquilibriumCase {
    let geometry = random_geometry(r);
    let fa = [0; 3].map(|_| r.random_range(0.002..0.008));
    let mut ea = [0; 3].map(|_| if r.random_bool(0.3) { r.random_range(0.0..0.004) } else { 0.0 });
    ea[2] = r.random_range(0.003..0.008);
    let tendon = TendonConfig::new(fa, ea, r.random_range(0.003..0.008)).unwrap();
    let k = [0; 3].map(|_| r.random_range(0.005..0.03));
    let skin = SkinModel::new(k, [1e-4; 3]).unwrap();
    let q = random_angles(r, &geometry).as_array();
    let dot = |a: [f64; 3]| a[0] * q[0] + a[1] * q[1] + a[2] * q[2];
    let flexor = dot(fa) - r.random_range(0.0..0.002);
    let extensor = -(dot(ea) + r.random_range(0.0..0.002));
    let torque = if r.random_bool(0.5) {
        [0; 3].map(|_| r.random_range(-0.01..0.01))
    } else {
        [0.0; 3]
    };
    EquilibriumCase {
        geometry,
        tendon,
        skin,
        flexor,
        extensor,
        torque,
    }
}

pub fn energy(skin: &SkinModel, torque: &[f64; 3], q: [f64; 3]) -> f64 {
    let k = skin.stiffness();
    (0..3).map(|i| 0.5 * k[i] * q[i] * q[i] - torque[i] * q[i]).sum()
}

/// Cable feasibility of `q` with slack `tol` meters.
pub fn cables_ok(c: &EquilibriumCase, q: [f64; 3], tol: f64) -> bool {
    let f = c.tendon.flexor_arms();
    let e = c.tendon.extensor_arms();
    let df = f[0] * q[0] + f[1] * q[1] + f[2] * q[2];
    let de = e[0] * q[0] + e[1] * q[1] + e[2] * q[2];
    df >= c.flexor - tol && de <= -c.extensor + tol
}

/// Lowest energy over an `n³` grid spanning the joint limits, counting only
/// points that satisfy both cable inequalities. Also returns the number of
/// feasible points.
pub fn grid_minimum(c: &EquilibriumCase, n: usize) -> (f64, usize) {
    let l = c.geometry.limits();
    let axis = |j: usize| -> Vec<f64> {
        (0..n)
            .map(|i| l[j].min + (l[j].max - l[j].min) * i as f64 / (n - 1) as f64)
            .collect()
    };
    let (a1, a2, a3) = (axis(0), axis(1), axis(2));
    let mut best = f64::INFINITY;
    let mut feasible = 0;
    for &t3 in &a3 {
        for &t2 in &a2 {
            for &t1 in &a1 {
                let q = [t1, t2, t3];
                if cables_ok(c, q, 0.0) {
                    feasible += 1;
                    best = best.min(energy(&c.skin, &c.torque, q));
                }
            }
        }
    }
    (best, feasible)
}

// ---------------------------------------------------------------- protocol

/// Hex fixtures under `tests/fixtures/golden`, sorted by name.
pub fn golden_fixtures() -> Vec<(String, Vec<u8>)> {
    let dir = manifest_dir().join("tests/fixtures/golden");
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "hex"))
        .map(|p| (p.file_stem().unwrap().to_string_lossy().into_owned(), parse_hex_file(&p)))
        .collect();
    out.sort();
    out
}

pub fn parse_hex_file(path: &Path) -> Vec<u8> {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .flat_map(|l| l.split_whitespace())
        .map(|b| u8::from_str_radix(b, 16).unwrap_or_else(|e| panic!("{}: {b:?}: {e}", path.display())))
        .collect()
}

/// The message each golden fixture encodes, as written in the fixture
/// generator.
pub fn golden_expectation(name: &str) -> (Header, Message) {
    let u = |v: i32| Microradians(v);
    match name {
        "hello" => (
            Header::new(1, 0, 0),
            Message::Hello {
                kind: Role::Index,
                geometry_hash: 0xD350_8483,
            },
        ),
        "pose_telemetry" => (
            Header::new(2, 41, 205_000),
            Message::PoseTelemetry {
                angles: [u(1_200_000), u(-350_000), u(6_283_185)],
            },
        ),
        "motor_telemetry" => (
            Header::new(3, 7, 350_000),
            Message::MotorTelemetry {
                spools: [u(2_500_000), u(-2_500_000)],
            },
        ),
        "set_motor_targets" => (
            Header::new(4, 12, 1_000_000),
            Message::SetMotorTargets {
                targets: [u(3_000_000), u(-1_000_000)],
                rate_limit: 4_000_000,
            },
        ),
        "set_joint_targets" => (
            Header::new(0, 3, 2_500_000),
            Message::SetJointTargets {
                angles: [u(800_000), u(666_667), u(-6_283_185)],
            },
        ),
        "touch_event" => (
            Header::new(1, u32::MAX, (1u64 << 63) + 5),
            Message::TouchEvent {
                magnitude: 81_894,
                joint: 1,
            },
        ),
        "heartbeat" => (Header::new(0, 0, 0), Message::Heartbeat),
        "error" => (
            Header::new(2, 9, 123_456),
            Message::Error {
                code: 2,
                text: "wrong finger: Ünïcode".into(),
            },
        ),
        "inject_touch" => (
            Header::new(1, 5, 500_000),
            Message::InjectTouch {
                force_un: [0, 20_000],
                duration_ms: 50,
            },
        ),
        other => panic!("no expectation for fixture {other:?}"),
    }
}

fn random_angle(r: &mut ChaCha8Rng) -> Microradians {
    Microradians(r.random_range(-MAX_ANGLE_URAD..=MAX_ANGLE_URAD))
}

pub fn random_header(r: &mut ChaCha8Rng) -> Header {
    Header::new(r.random(), r.random(), r.random())
}

pub fn random_message(r: &mut ChaCha8Rng) -> Message {
    match r.random_range(0..9) {
        0 => Message::Hello {
            kind: Role::ALL[r.random_range(0..Role::ALL.len())],
            geometry_hash: r.random(),
        },
        1 => Message::PoseTelemetry {
            angles: [0; 3].map(|_| random_angle(r)),
        },
        2 => Message::MotorTelemetry {
            spools: [0; 2].map(|_| random_angle(r)),
        },
        3 => Message::SetMotorTargets {
            targets: [0; 2].map(|_| random_angle(r)),
            rate_limit: r.random(),
        },
        4 => Message::SetJointTargets {
            angles: [0; 3].map(|_| random_angle(r)),
        },
        5 => Message::TouchEvent {
            magnitude: r.random(),
            joint: r.random(),
        },
        6 => Message::Heartbeat,
        7 => {
            let len = r.random_range(0..200);
            let text: String = (0..len)
                .map(|_| char::from_u32(r.random_range(0x20..0x3000)).unwrap_or('?'))
                .collect();
            Message::error(r.random(), text)
        }
        _ => Message::InjectTouch {
            force_un: [r.random(), r.random()],
            duration_ms: r.random(),
        },
    }
}

// ---------------------------------------------------------------- touch

pub struct TouchTrial {
    pub samples: Vec<TraceSample>,
    /// `(start_us, end_us)` of every injected pulse.
    pub pulses: Vec<(u64, u64)>,
}

/// A 200 Hz, 16-bit quantized trace around a random static pose.
///
/// `noise_amp` bounds the additive uniform noise. Each pulse is a half-sine
/// bump on one joint lasting 50 ms, with a peak between `pulse_amp` and
/// `1.5 × pulse_amp`, spaced at least 0.5 s apart.
pub fn touch_trial(seed: u64, seconds: f64, n_pulses: usize, pulse_amp: f64, noise_amp: f64) -> TouchTrial {
    const DT_US: u64 = 5_000;
    const PULSE_US: u64 = 50_000;
    let mut r = rng(seed);
    let n = (seconds * 1e6) as u64 / DT_US;
    let pose = [0; 3].map(|_| r.random_range(-0.2..1.2));

    let mut pulses = Vec::new();
    let mut t = 1_000_000 + r.random_range(0..200_000u64);
    for _ in 0..n_pulses {
        pulses.push((t, t + PULSE_US, r.random_range(0..3usize), pulse_amp * r.random_range(1.0..1.5)));
        t += 500_000 + r.random_range(0..300_000u64);
    }
    assert!(t < n * DT_US, "trace too short for {n_pulses} pulses");

    let quantize = |a: f64| (a / QUANTIZATION_STEP).round() * QUANTIZATION_STEP;
    let samples = (0..n)
        .map(|i| {
            let ts = i * DT_US;
            let mut q = pose;
            for j in 0..3 {
                if noise_amp > 0.0 {
                    q[j] += r.random_range(-noise_amp..=noise_amp);
                }
            }
            for &(s, e, joint, amp) in &pulses {
                if ts >= s && ts < e {
                    let phase = (ts - s) as f64 / PULSE_US as f64;
                    q[joint] += amp * (std::f64::consts::PI * phase).sin();
                }
            }
            TraceSample {
                timestamp_us: ts,
                angles: JointAngles::from_array(q.map(quantize)),
            }
        })
        .collect();
    TouchTrial {
        samples,
        pulses: pulses.iter().map(|p| (p.0, p.1)).collect(),
    }
}

pub fn default_detector() -> DetectorConfig {
    DetectorConfig::default()
}
