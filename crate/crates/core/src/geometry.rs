//! Free-space propagation geometry shared by the synthesizer and the estimators.

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Cartesian position or velocity in meters (or m/s).
pub type Vec3 = [f64; 3];

pub fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn distance(a: &Vec3, b: &Vec3) -> f64 {
    norm(&sub(a, b))
}

/// Rate of change of `|moving - fixed|` when `moving` travels with `velocity`.
///
/// Positive when the two points recede from each other.
pub fn range_rate(moving: &Vec3, velocity: &Vec3, fixed: &Vec3) -> Result<f64> {
    let d = sub(moving, fixed);
    let r = norm(&d);
    if r == 0.0 {
        return Err(Error::CoincidentPoints);
    }
    Ok(dot(&d, velocity) / r)
}

/// Doppler shift (Hz) produced by a path length changing at `rate` m/s.
pub fn doppler_from_range_rate(rate: f64, carrier_hz: f64) -> f64 {
    -carrier_hz * rate / SPEED_OF_LIGHT
}

/// Line-of-sight delay and Doppler between a transmitter moving with
/// `v_tx_rel` (relative to the receiver) and a receiver.
///
/// Returns `(delay_s, doppler_hz)`; a receding transmitter gives a negative Doppler.
pub fn los_geometry(p_tx: &Vec3, p_rx: &Vec3, v_tx_rel: &Vec3, carrier_hz: f64) -> Result<(f64, f64)> {
    let d = distance(p_tx, p_rx);
    if d == 0.0 {
        return Err(Error::CoincidentPoints);
    }
    let rate = range_rate(p_tx, v_tx_rel, p_rx)?;
    Ok((d / SPEED_OF_LIGHT, doppler_from_range_rate(rate, carrier_hz)))
}
