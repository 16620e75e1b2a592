//! Ground-truth scenes and frequency-domain snapshot synthesis.
//!
//! A [`Scene`] fixes anchor positions, the agent trajectory, the multipath
//! description of every link and the hardware impairments. Synthesis
//! evaluates the multilink signal model directly on the active subcarriers,
//! so every estimator in the crate can be checked against the exact truth.
//!
//! Antenna indices run `0..H_a`; anchors are `0..H_a-1` and the agent is the
//! last index. Unit 0 is the timing and phase reference.

mod campaign;
mod channel;
pub mod presets;
mod reference;
mod synth;

use serde::{Deserialize, Serialize};

use crate::config::SoundingConfig;
use crate::error::{Error, Result};
use crate::geometry::{norm, Vec3};

pub use campaign::{generate_campaign, generate_campaign_with, CampaignOptions, LinkSelection, SnapshotTensor};
pub use channel::{Blockage, ChannelSpec, GeometricChannel, LinkChannel, MpcSegment, Scatterer};
pub use reference::{ReferenceSignal, ReferenceSpec};
pub use synth::{noise_psd_for_snr, noise_variance_per_bin, synthesize_at, synthesize_snapshot};

/// Directed link: `tx` transmits, `rx` receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LinkId {
    pub rx: usize,
    pub tx: usize,
}

impl LinkId {
    pub fn new(rx: usize, tx: usize) -> Self {
        Self { rx, tx }
    }

    pub fn reversed(self) -> Self {
        Self { rx: self.tx, tx: self.rx }
    }
}

impl std::fmt::Display for LinkId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.rx, self.tx)
    }
}

/// One propagation path of a link during one snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultipathComponent {
    pub complex_amplitude: num_complex::Complex64,
    pub delay_s: f64,
    pub doppler_hz: f64,
}

impl MultipathComponent {
    pub fn new(complex_amplitude: num_complex::Complex64, delay_s: f64, doppler_hz: f64) -> Self {
        Self { complex_amplitude, delay_s, doppler_hz }
    }

    pub fn validate(&self, config: &SoundingConfig) -> Result<()> {
        let max_s = config.max_delay_s();
        if !(self.delay_s >= 0.0 && self.delay_s < max_s) {
            return Err(Error::DelayOutOfRange { delay_s: self.delay_s, max_s });
        }
        Ok(())
    }
}

/// Carrier offset of one ordered antenna pair; the reverse pair sees the negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairCfo {
    pub rx: usize,
    pub tx: usize,
    pub cfo_hz: f64,
}

/// Frequency-flat hardware impairments.
///
/// Per-unit vectors may be empty, meaning all zeros.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HardwareImpairments {
    pub cfo_hz_per_pair: Vec<PairCfo>,
    pub clock_offset_s_per_unit: Vec<f64>,
    pub phase_offset_rad_per_unit: Vec<f64>,
}

impl HardwareImpairments {
    pub fn none() -> Self {
        Self::default()
    }

    /// CFO seen on link `(rx, tx)`.
    pub fn cfo_hz(&self, link: LinkId) -> f64 {
        for p in &self.cfo_hz_per_pair {
            if p.rx == link.rx && p.tx == link.tx {
                return p.cfo_hz;
            }
            if p.rx == link.tx && p.tx == link.rx {
                return -p.cfo_hz;
            }
        }
        0.0
    }

    /// Receiver clock shift minus transmitter clock shift.
    pub fn clock_offset_s(&self, link: LinkId) -> f64 {
        let e = |h: usize| self.clock_offset_s_per_unit.get(h).copied().unwrap_or(0.0);
        e(link.rx) - e(link.tx)
    }

    pub fn phase_offset_rad(&self, link: LinkId) -> f64 {
        let e = |h: usize| self.phase_offset_rad_per_unit.get(h).copied().unwrap_or(0.0);
        e(link.rx) - e(link.tx)
    }

    pub fn validate(&self, num_antennas: usize) -> Result<()> {
        for (name, v) in [
            ("clock_offset_s_per_unit", &self.clock_offset_s_per_unit),
            ("phase_offset_rad_per_unit", &self.phase_offset_rad_per_unit),
        ] {
            if !v.is_empty() && v.len() != num_antennas {
                return Err(Error::InvalidScene(format!("{name} needs {num_antennas} entries, got {}", v.len())));
            }
            if v.first().is_some_and(|&x| x != 0.0) {
                return Err(Error::InvalidScene(format!("{name}: reference unit 0 must be zero")));
            }
        }
        for (i, p) in self.cfo_hz_per_pair.iter().enumerate() {
            if p.rx == p.tx || p.rx >= num_antennas || p.tx >= num_antennas {
                return Err(Error::InvalidLink { rx: p.rx, tx: p.tx });
            }
            for q in &self.cfo_hz_per_pair[i + 1..] {
                let same = q.rx == p.rx && q.tx == p.tx && q.cfo_hz != p.cfo_hz;
                let mirrored = q.rx == p.tx && q.tx == p.rx && q.cfo_hz != -p.cfo_hz;
                if same || mirrored {
                    return Err(Error::InvalidScene(format!(
                        "inconsistent CFO for pair ({}, {}); pairwise offsets must be antisymmetric",
                        p.rx, p.tx
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub position: Vec3,
    pub velocity: Vec3,
}

/// State on a sampled trajectory at time `t`, linearly interpolated and
/// held constant outside the sampled span.
pub fn trajectory_state(tr: &[TrajectoryPoint], t: f64) -> (Vec3, Vec3) {
    if tr.is_empty() {
        return ([0.0; 3], [0.0; 3]);
    }
    if t <= tr[0].t {
        return (tr[0].position, tr[0].velocity);
    }
    let last = tr[tr.len() - 1];
    if t >= last.t {
        return (last.position, last.velocity);
    }
    let i = tr.partition_point(|p| p.t <= t) - 1;
    let (a, b) = (tr[i], tr[i + 1]);
    let w = (t - a.t) / (b.t - a.t);
    let lerp = |x: &Vec3, y: &Vec3| [x[0] + w * (y[0] - x[0]), x[1] + w * (y[1] - x[1]), x[2] + w * (y[2] - x[2])];
    (lerp(&a.position, &b.position), lerp(&a.velocity, &b.velocity))
}

/// Complete ground truth of a synthetic campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    /// `H_a - 1` fixed anchors.
    pub anchor_positions: Vec<Vec3>,
    /// Agent states, strictly increasing in time; held constant outside the span.
    pub agent_trajectory: Vec<TrajectoryPoint>,
    pub channel: ChannelSpec,
    #[serde(default)]
    pub impairments: HardwareImpairments,
    /// Noise power spectral density `N_0`, W/Hz.
    #[serde(default)]
    pub noise_psd: f64,
    pub duration_s: f64,
}

impl Scene {
    pub fn num_antennas(&self) -> usize {
        self.anchor_positions.len() + 1
    }

    pub fn agent_index(&self) -> usize {
        self.anchor_positions.len()
    }

    /// Agent position and velocity at time `t` (linear interpolation).
    pub fn agent_state(&self, t: f64) -> (Vec3, Vec3) {
        trajectory_state(&self.agent_trajectory, t)
    }

    /// Position and velocity of antenna `h` at time `t`.
    pub fn antenna_state(&self, h: usize, t: f64) -> Result<(Vec3, Vec3)> {
        if h < self.anchor_positions.len() {
            Ok((self.anchor_positions[h], [0.0; 3]))
        } else if h == self.agent_index() {
            Ok(self.agent_state(t))
        } else {
            Err(Error::InvalidParameter(format!("antenna {h} does not exist")))
        }
    }

    pub fn validate(&self, config: &SoundingConfig) -> Result<()> {
        if self.num_antennas() != config.num_antennas {
            return Err(Error::InvalidScene(format!(
                "{} anchors plus agent do not match {} configured antennas",
                self.anchor_positions.len(),
                config.num_antennas
            )));
        }
        if self.agent_trajectory.is_empty() {
            return Err(Error::InvalidScene("agent trajectory is empty".into()));
        }
        let vmax = config.max_velocity_mps();
        for w in self.agent_trajectory.windows(2) {
            if w[1].t <= w[0].t {
                return Err(Error::InvalidScene("trajectory timestamps must be strictly increasing".into()));
            }
        }
        for p in &self.agent_trajectory {
            let speed = norm(&p.velocity);
            if speed > vmax {
                return Err(Error::InvalidScene(format!("agent speed {speed:.2} m/s exceeds {vmax:.2} m/s")));
            }
        }
        if !(self.noise_psd >= 0.0 && self.noise_psd.is_finite()) {
            return Err(Error::InvalidScene("noise_psd must be nonnegative".into()));
        }
        if !(self.duration_s.is_finite() && self.duration_s >= config.snapshot_period_s()) {
            return Err(Error::InvalidScene(format!(
                "scene duration {} s is shorter than one snapshot period",
                self.duration_s
            )));
        }
        self.impairments.validate(config.num_antennas)?;
        self.channel.validate(self.num_antennas())
    }

    /// Snapshots covered by the scene at the configured rate.
    pub fn num_snapshots(&self, config: &SoundingConfig) -> usize {
        (self.duration_s * config.snapshot_rate_hz + 1e-9).floor() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cfo_is_antisymmetric() {
        let imp = HardwareImpairments {
            cfo_hz_per_pair: vec![PairCfo { rx: 1, tx: 0, cfo_hz: 7.5 }],
            ..Default::default()
        };
        assert_eq!(imp.cfo_hz(LinkId::new(1, 0)), 7.5);
        assert_eq!(imp.cfo_hz(LinkId::new(0, 1)), -7.5);
        assert_eq!(imp.cfo_hz(LinkId::new(2, 0)), 0.0);
        imp.validate(3).unwrap();

        let bad = HardwareImpairments {
            cfo_hz_per_pair: vec![PairCfo { rx: 1, tx: 0, cfo_hz: 7.5 }, PairCfo { rx: 0, tx: 1, cfo_hz: 7.5 }],
            ..Default::default()
        };
        assert!(bad.validate(3).is_err());
    }

    #[test]
    fn reference_unit_must_have_zero_offsets() {
        let imp = HardwareImpairments { clock_offset_s_per_unit: vec![1e-9, 0.0, 0.0], ..Default::default() };
        assert!(imp.validate(3).is_err());
        let imp = HardwareImpairments { clock_offset_s_per_unit: vec![0.0, 1e-9, 0.0], ..Default::default() };
        imp.validate(3).unwrap();
        assert_eq!(imp.clock_offset_s(LinkId::new(1, 0)), 1e-9);
        assert_eq!(imp.clock_offset_s(LinkId::new(0, 1)), -1e-9);
    }

    #[test]
    fn agent_state_interpolates_and_clamps() {
        let scene = Scene {
            anchor_positions: vec![[0.0; 3]],
            agent_trajectory: vec![
                TrajectoryPoint { t: 0.0, position: [0.0, 0.0, 0.0], velocity: [1.0, 0.0, 0.0] },
                TrajectoryPoint { t: 2.0, position: [2.0, 0.0, 0.0], velocity: [1.0, 0.0, 0.0] },
            ],
            channel: ChannelSpec::Explicit { links: vec![] },
            impairments: HardwareImpairments::none(),
            noise_psd: 0.0,
            duration_s: 2.0,
        };
        assert_eq!(scene.agent_state(0.5).0, [0.5, 0.0, 0.0]);
        assert_eq!(scene.agent_state(-1.0).0, [0.0, 0.0, 0.0]);
        assert_eq!(scene.agent_state(5.0).0, [2.0, 0.0, 0.0]);
    }
}
