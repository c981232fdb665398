//! Acoustic and optical channel models.
//!
//! The optical link budget is Beer–Lambert transmittance along the straight
//! path times conical geometric spreading, capped at 1 when the beam
//! footprint is smaller than the receiver aperture.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{distance, Position};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("transmitter and receiver coincide")]
    Coincident,
    #[error("invalid channel parameter: {0}")]
    Invalid(String),
}

/// Optical attenuation and sound speed of the water column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaterProfile {
    /// Beam attenuation coefficient at the surface, 1/m.
    pub c0: f64,
    /// Vertical attenuation gradient, (1/m) per meter of depth.
    pub gamma: f64,
    /// m/s
    pub sound_speed: f64,
}

impl Default for WaterProfile {
    fn default() -> Self {
        Self { c0: 0.056, gamma: 0.0, sound_speed: 1500.0 }
    }
}

impl WaterProfile {
    pub fn with_c0(c0: f64) -> Self {
        Self { c0, ..Self::default() }
    }

    pub fn attenuation_at(&self, depth: f64) -> f64 {
        self.c0 + self.gamma * depth
    }

    pub fn validate(&self, max_depth: f64) -> Result<(), ChannelError> {
        if !(self.c0 > 0.0) || !self.c0.is_finite() {
            return Err(ChannelError::Invalid(format!("c0 must be > 0, got {}", self.c0)));
        }
        if !(self.sound_speed > 0.0) || !self.sound_speed.is_finite() {
            return Err(ChannelError::Invalid(format!(
                "sound_speed must be > 0, got {}",
                self.sound_speed
            )));
        }
        if !self.gamma.is_finite() || !(self.attenuation_at(max_depth) > 0.0) {
            return Err(ChannelError::Invalid(format!(
                "attenuation must stay positive down to {max_depth} m (gamma {})",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Transmitter and receiver constants of an optical hop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticalLinkBudget {
    /// W
    pub tx_power: f64,
    /// rad
    pub divergence_half_angle: f64,
    /// m²
    pub rx_aperture_area: f64,
    /// W
    pub rx_sensitivity: f64,
    /// rad
    pub rx_fov_half_angle: f64,
}

impl Default for OpticalLinkBudget {
    fn default() -> Self {
        Self {
            tx_power: 0.1,
            divergence_half_angle: 1f64.to_radians(),
            rx_aperture_area: 7.854e-3,
            rx_sensitivity: DEFAULT_RX_SENSITIVITY,
            rx_fov_half_angle: 30f64.to_radians(),
        }
    }
}

/// Receiver sensitivity that centers the access-rate calibration of the
/// default 50-node scenario. Maximum horizontal range with gamma = 0 is then
/// about 273 m, 139 m and 113 m for c = 0.056, 0.120 and 0.151.
pub const DEFAULT_RX_SENSITIVITY: f64 = 2.5e-12;

impl OpticalLinkBudget {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let positive = [
            ("tx_power", self.tx_power),
            ("divergence_half_angle", self.divergence_half_angle),
            ("rx_aperture_area", self.rx_aperture_area),
            ("rx_sensitivity", self.rx_sensitivity),
            ("rx_fov_half_angle", self.rx_fov_half_angle),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(ChannelError::Invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.divergence_half_angle >= FRAC_PI_2 {
            return Err(ChannelError::Invalid("divergence_half_angle must be < 90°".into()));
        }
        if self.rx_fov_half_angle > FRAC_PI_2 {
            return Err(ChannelError::Invalid("rx_fov_half_angle must be <= 90°".into()));
        }
        Ok(())
    }

    /// Fraction of the emitted cone captured by the aperture at range `l`.
    pub fn geometric_gain(&self, l: f64) -> f64 {
        let footprint_radius = l * self.divergence_half_angle.tan();
        let footprint = PI * footprint_radius * footprint_radius;
        if footprint <= self.rx_aperture_area {
            1.0
        } else {
            self.rx_aperture_area / footprint
        }
    }
}

pub fn acoustic_delay(d: f64, profile: &WaterProfile) -> f64 {
    d / profile.sound_speed
}

/// `exp(-∫ c(z) ds)` along the straight segment from `a` to `b`.
pub fn path_transmittance(a: &Position, b: &Position, profile: &WaterProfile) -> f64 {
    let l = distance(a, b);
    // c(z) is linear in depth and depth is linear along the segment, so the
    // line integral is the length times the midpoint attenuation.
    let mean_c = profile.attenuation_at((a.depth + b.depth) / 2.0);
    (-l * mean_c).exp()
}

pub fn optical_received_power(
    tx: &Position,
    rx: &Position,
    budget: &OpticalLinkBudget,
    profile: &WaterProfile,
) -> Result<f64, ChannelError> {
    let l = distance(tx, rx);
    if l == 0.0 {
        return Err(ChannelError::Coincident);
    }
    Ok(budget.tx_power * path_transmittance(tx, rx, profile) * budget.geometric_gain(l))
}

fn horizontal_power(l: f64, attenuation: f64, budget: &OpticalLinkBudget) -> f64 {
    budget.tx_power * (-l * attenuation).exp() * budget.geometric_gain(l)
}

const RANGE_TOLERANCE: f64 = 0.01;

/// Largest horizontal range at `depth` that still meets the receiver
/// sensitivity, to within 1 cm. Zero when no range is feasible.
pub fn max_optical_range(budget: &OpticalLinkBudget, profile: &WaterProfile, depth: f64) -> f64 {
    let attenuation = profile.attenuation_at(depth);
    let feasible = |l: f64| horizontal_power(l, attenuation, budget) >= budget.rx_sensitivity;
    if !feasible(0.0) {
        return 0.0;
    }
    let mut hi = 1.0;
    while feasible(hi) {
        hi *= 2.0;
        if hi > 1e9 {
            return hi;
        }
    }
    let mut lo = 0.0;
    while hi - lo > RANGE_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}
