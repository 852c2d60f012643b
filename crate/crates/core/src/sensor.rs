//! Magnetic angle-encoder model: additive Gaussian noise then quantization.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::kinematics::JointAngles;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorModel {
    pub resolution_bits: u8,
    /// Standard deviation of the additive noise, radians.
    pub noise_std: f64,
}

impl SensorModel {
    pub const fn noiseless(resolution_bits: u8) -> Self {
        Self {
            resolution_bits,
            noise_std: 0.0,
        }
    }

    /// Smallest representable angle change, `2π / 2^bits`.
    pub fn step(&self) -> f64 {
        TAU / (1u64 << self.resolution_bits) as f64
    }

    /// Encoder count closest to `angle`.
    pub fn code(&self, angle: f64) -> i64 {
        (angle / self.step()).round() as i64
    }

    /// Nearest representable angle.
    pub fn quantize(&self, angle: f64) -> f64 {
        self.code(angle) as f64 * self.step()
    }

    /// One noisy, quantized reading of `angle`.
    pub fn sample<R: Rng + ?Sized>(&self, angle: f64, rng: &mut R) -> f64 {
        let noisy = if self.noise_std > 0.0 {
            // noise_std is validated non-negative and finite on load
            let n = Normal::new(0.0, self.noise_std).expect("valid noise std");
            angle + n.sample(rng)
        } else {
            angle
        };
        self.quantize(noisy)
    }

    pub fn sample_joints<R: Rng + ?Sized>(&self, q: &JointAngles, rng: &mut R) -> JointAngles {
        JointAngles::from_array(q.as_array().map(|a| self.sample(a, rng)))
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.resolution_bits == 0 || self.resolution_bits > 32 {
            return Err(format!(
                "resolution_bits must be in 1..=32, got {}",
                self.resolution_bits
            ));
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return Err(format!("noise_std must be >= 0, got {}", self.noise_std));
        }
        Ok(())
    }
}

impl Default for SensorModel {
    /// 16-bit encoder with a noise floor of two counts.
    fn default() -> Self {
        let bits = 16;
        Self {
            resolution_bits: bits,
            noise_std: 2.0 * SensorModel::noiseless(bits).step(),
        }
    }
}
