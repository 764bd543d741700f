//! Sensor geometry: beam angle grid, polar/Cartesian conversion, and the
//! window-local coordinate frame used for offset regression.
//!
//! Conventions: the sensor sits at the origin, beam angles span `[-fov/2, +fov/2]`
//! symmetrically and increase with beam index. A [`LocalFrame`] at a laser hit
//! point has its x-axis pointing radially away from the sensor along the center
//! beam and its y-axis in the direction of increasing beam angle, so mirroring a
//! scan corresponds exactly to negating local y.

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Geometry of the scanning laser.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    /// Number of beams per scan.
    pub num_beams: usize,
    /// Total field of view in radians.
    pub fov: f64,
    /// Minimum valid range in meters.
    pub range_min: f64,
    /// Maximum valid range in meters.
    pub range_max: f64,
}

impl Default for SensorConfig {
    /// 450 beams over 225°, the usual safety-scanner setup.
    fn default() -> Self {
        SensorConfig {
            num_beams: 450,
            fov: 225.0_f64.to_radians(),
            range_min: 0.1,
            range_max: 15.0,
        }
    }
}

impl SensorConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.num_beams < 2 {
            return Err(Error::InvalidConfig(format!(
                "num_beams must be >= 2, got {}",
                self.num_beams
            )));
        }
        if !(self.fov > 0.0 && self.fov <= std::f64::consts::TAU) {
            return Err(Error::InvalidConfig(format!(
                "fov must be in (0, 2*pi], got {}",
                self.fov
            )));
        }
        if !(0.0 < self.range_min && self.range_min < self.range_max) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < range_min < range_max, got {} and {}",
                self.range_min, self.range_max
            )));
        }
        Ok(())
    }

    /// Angle of beam `i`, in radians. The grid spans exactly `[-fov/2, +fov/2]`
    /// with `num_beams` equally spaced samples.
    pub fn beam_angle(&self, i: usize) -> Result<f64, Error> {
        if i >= self.num_beams {
            return Err(Error::BeamIndex {
                index: i,
                num_beams: self.num_beams,
            });
        }
        Ok((i as f64 / (self.num_beams - 1) as f64 - 0.5) * self.fov)
    }

    /// Angular spacing between adjacent beams.
    pub fn beam_increment(&self) -> f64 {
        self.fov / (self.num_beams - 1) as f64
    }
}

/// One laser frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub ranges: Vec<f64>,
    pub seq_id: u64,
    pub timestamp: f64,
}

impl Scan {
    /// Clamp every range into `[range_min, range_max]`; non-finite readings and
    /// out-of-range returns become `range_max` (far clutter).
    pub fn sanitize(&mut self, cfg: &SensorConfig) {
        for r in &mut self.ranges {
            if !r.is_finite() || *r > cfg.range_max || *r < cfg.range_min {
                *r = cfg.range_max;
            }
        }
    }
}

/// Convert a polar measurement to sensor-frame Cartesian coordinates.
pub fn polar_to_cart(r: f64, phi: f64) -> (f64, f64) {
    (r * phi.cos(), r * phi.sin())
}

/// Angular width of a window of real-world extent `l` centered at range `r`:
/// `2 asin(l / 2r)`, clamped to pi when the point is closer than `l/2`.
pub fn window_angle(l: f64, r: f64) -> f64 {
    debug_assert!(l > 0.0 && r > 0.0);
    2.0 * (l / (2.0 * r)).min(1.0).asin()
}

/// Rigid frame attached to a laser hit point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalFrame {
    /// Frame origin in the sensor frame, meters.
    pub origin: (f64, f64),
    /// Frame rotation, equal to the beam angle of the center beam.
    pub rotation: f64,
}

impl LocalFrame {
    /// Frame at the hit point of a beam: origin at `(r cos phi, r sin phi)`,
    /// rotated to the beam direction.
    pub fn at_beam_hit(r: f64, phi: f64) -> Self {
        LocalFrame {
            origin: polar_to_cart(r, phi),
            rotation: phi,
        }
    }

    /// Map a sensor-frame point into this frame.
    pub fn to_local(&self, p: (f64, f64)) -> (f64, f64) {
        let (dx, dy) = (p.0 - self.origin.0, p.1 - self.origin.1);
        let (s, c) = self.rotation.sin_cos();
        (c * dx + s * dy, -s * dx + c * dy)
    }

    /// Map a point in this frame back to the sensor frame.
    pub fn from_local(&self, p: (f64, f64)) -> (f64, f64) {
        let (s, c) = self.rotation.sin_cos();
        (
            c * p.0 - s * p.1 + self.origin.0,
            s * p.0 + c * p.1 + self.origin.1,
        )
    }
}
