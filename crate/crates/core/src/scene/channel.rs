use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::{LinkId, MultipathComponent, Scene};
use crate::config::SoundingConfig;
use crate::error::{Error, Result};
use crate::geometry::{distance, doppler_from_range_rate, dot, sub, Vec3, SPEED_OF_LIGHT};

/// How the multipath of every link is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelSpec {
    /// Paths derived from antenna geometry and point scatterers.
    Geometric(GeometricChannel),
    /// Paths listed per link, piecewise constant over snapshot ranges.
    /// Links that are not listed carry noise only.
    Explicit { links: Vec<LinkChannel> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometricChannel {
    #[serde(default)]
    pub scatterers: Vec<Scatterer>,
    #[serde(default)]
    pub los_blockage: Vec<Blockage>,
    /// Free-space LoS amplitude is `los_gain / d`.
    #[serde(default = "one")]
    pub los_gain: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for GeometricChannel {
    fn default() -> Self {
        Self { scatterers: vec![], los_blockage: vec![], los_gain: 1.0 }
    }
}

/// Single-bounce point reflector; path amplitude is `reflection / path_length`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub position: Vec3,
    pub reflection: f64,
    #[serde(default)]
    pub phase_rad: f64,
}

/// LoS between antennas `a` and `b` (both directions) is absent during `[start_s, end_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blockage {
    pub a: usize,
    pub b: usize,
    pub start_s: f64,
    pub end_s: f64,
}

impl Blockage {
    fn covers(&self, link: LinkId, t: f64) -> bool {
        let pair = (self.a == link.rx && self.b == link.tx) || (self.a == link.tx && self.b == link.rx);
        pair && t >= self.start_s && t < self.end_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkChannel {
    pub rx: usize,
    pub tx: usize,
    /// Sorted by `start_snapshot`; each segment holds until the next one.
    pub segments: Vec<MpcSegment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcSegment {
    pub start_snapshot: usize,
    pub mpcs: Vec<MultipathComponent>,
}

impl LinkChannel {
    /// A link whose paths never change.
    pub fn constant(link: LinkId, mpcs: Vec<MultipathComponent>) -> Self {
        Self { rx: link.rx, tx: link.tx, segments: vec![MpcSegment { start_snapshot: 0, mpcs }] }
    }

    fn at(&self, n: usize) -> &[MultipathComponent] {
        let i = self.segments.partition_point(|s| s.start_snapshot <= n);
        if i == 0 {
            &[]
        } else {
            &self.segments[i - 1].mpcs
        }
    }
}

impl ChannelSpec {
    pub fn validate(&self, num_antennas: usize) -> Result<()> {
        match self {
            ChannelSpec::Geometric(g) => {
                for b in &g.los_blockage {
                    if b.a >= num_antennas || b.b >= num_antennas || b.a == b.b {
                        return Err(Error::InvalidLink { rx: b.a, tx: b.b });
                    }
                }
                Ok(())
            }
            ChannelSpec::Explicit { links } => {
                for l in links {
                    if l.rx >= num_antennas || l.tx >= num_antennas || l.rx == l.tx {
                        return Err(Error::InvalidLink { rx: l.rx, tx: l.tx });
                    }
                    if l.segments.windows(2).any(|w| w[1].start_snapshot <= w[0].start_snapshot) {
                        return Err(Error::InvalidScene(format!(
                            "segments of link ({}, {}) must have increasing start snapshots",
                            l.rx, l.tx
                        )));
                    }
                }
                Ok(())
            }
        }
    }
}

/// Path whose length changes in time; the explicit Doppler factor of the
/// signal model is pre-compensated in the amplitude because the carrier
/// phase `exp(-j2π f_c τ)` already follows the moving delay.
fn moving_path(amplitude: Complex64, length_m: f64, rate_mps: f64, carrier_hz: f64, t: f64) -> MultipathComponent {
    let doppler_hz = doppler_from_range_rate(rate_mps, carrier_hz);
    let alpha = amplitude * Complex64::from_polar(1.0, -2.0 * PI * doppler_hz * t);
    MultipathComponent::new(alpha, length_m / SPEED_OF_LIGHT, doppler_hz)
}

/// Unit vector from `from` to `to` dotted with `v`; zero for coincident points.
fn towards(from: &Vec3, to: &Vec3, v: &Vec3) -> f64 {
    let d = sub(to, from);
    let r = dot(&d, &d).sqrt();
    if r == 0.0 {
        0.0
    } else {
        dot(&d, v) / r
    }
}

impl Scene {
    /// Multipath components of `link` for snapshot `n` measured at time `t`.
    pub fn link_mpcs(&self, config: &SoundingConfig, link: LinkId, n: usize, t: f64) -> Result<Vec<MultipathComponent>> {
        match &self.channel {
            ChannelSpec::Explicit { links } => Ok(links
                .iter()
                .find(|l| l.rx == link.rx && l.tx == link.tx)
                .map(|l| l.at(n).to_vec())
                .unwrap_or_default()),
            ChannelSpec::Geometric(g) => {
                let (p_tx, v_tx) = self.antenna_state(link.tx, t)?;
                let (p_rx, v_rx) = self.antenna_state(link.rx, t)?;
                let fc = config.carrier_frequency_hz;
                let mut out = Vec::with_capacity(1 + g.scatterers.len());
                if !g.los_blockage.iter().any(|b| b.covers(link, t)) {
                    let d = distance(&p_tx, &p_rx);
                    if d == 0.0 {
                        return Err(Error::CoincidentPoints);
                    }
                    // d/dt |p_tx - p_rx|
                    let rate = towards(&p_rx, &p_tx, &v_tx) + towards(&p_tx, &p_rx, &v_rx);
                    out.push(moving_path(Complex64::new(g.los_gain / d, 0.0), d, rate, fc, t));
                }
                for s in &g.scatterers {
                    let d = distance(&p_tx, &s.position) + distance(&s.position, &p_rx);
                    let rate = towards(&s.position, &p_tx, &v_tx) + towards(&s.position, &p_rx, &v_rx);
                    let amp = Complex64::from_polar(s.reflection / d, s.phase_rad);
                    out.push(moving_path(amp, d, rate, fc, t));
                }
                Ok(out)
            }
        }
    }
}
