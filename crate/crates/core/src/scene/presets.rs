//! Ready-made scenes in a 30 m x 11 m hall with twelve wall-mounted anchors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{noise_psd_for_snr, ChannelSpec, GeometricChannel, HardwareImpairments, Scatterer, Scene, TrajectoryPoint};
use crate::config::SoundingConfig;
use crate::error::{Error, Result};
use crate::geometry::{distance, Vec3};

pub const PRESET_NAMES: [&str; 4] = ["ref", "loop", "industrial", "static"];

pub const ANCHOR_HEIGHT_M: f64 = 4.0;
pub const AGENT_HEIGHT_M: f64 = 0.5;

/// Six anchors on each long wall (`y = 0` then `y = 11`).
pub fn hall_anchors() -> Vec<Vec3> {
    let xs = [5.0, 9.0, 13.0, 17.0, 21.0, 25.0];
    let mut out: Vec<Vec3> = xs.iter().map(|&x| [x, 0.0, ANCHOR_HEIGHT_M]).collect();
    out.extend(xs.iter().map(|&x| [x, 11.0, ANCHOR_HEIGHT_M]));
    out
}

/// Piecewise trajectory assembled from constant-velocity pieces.
#[derive(Debug, Clone)]
pub struct TrajectoryBuilder {
    points: Vec<TrajectoryPoint>,
}

/// Gap inserted where the velocity jumps so timestamps stay strictly increasing.
const JUMP_S: f64 = 1e-6;

impl TrajectoryBuilder {
    pub fn new(start: Vec3) -> Self {
        Self { points: vec![TrajectoryPoint { t: 0.0, position: start, velocity: [0.0; 3] }] }
    }

    fn last(&self) -> TrajectoryPoint {
        self.points[self.points.len() - 1]
    }

    fn set_velocity(&mut self, v: Vec3) {
        let last = self.last();
        if last.velocity == v {
            return;
        }
        if self.points.len() == 1 && last.t == 0.0 {
            self.points[0].velocity = v;
        } else {
            self.points.push(TrajectoryPoint { t: last.t + JUMP_S, position: advance(&last.position, &last.velocity, JUMP_S), velocity: v });
        }
    }

    pub fn hold(mut self, duration_s: f64) -> Self {
        self.set_velocity([0.0; 3]);
        let last = self.last();
        self.points.push(TrajectoryPoint { t: last.t + duration_s, ..last });
        self
    }

    pub fn line(mut self, velocity: Vec3, duration_s: f64) -> Self {
        self.set_velocity(velocity);
        let last = self.last();
        self.points.push(TrajectoryPoint {
            t: last.t + duration_s,
            position: advance(&last.position, &velocity, duration_s),
            velocity,
        });
        self
    }

    /// Circular arc in the horizontal plane, sampled every `step_s`.
    /// Positive `turn_rad` turns left.
    pub fn turn(mut self, speed_mps: f64, heading_rad: f64, turn_rad: f64, duration_s: f64, step_s: f64) -> Self {
        let omega = turn_rad / duration_s;
        let vel = |h: f64| [speed_mps * h.cos(), speed_mps * h.sin(), 0.0];
        self.set_velocity(vel(heading_rad));
        let start = self.last();
        let steps = (duration_s / step_s).ceil().max(1.0) as usize;
        for i in 1..=steps {
            let dt = duration_s * i as f64 / steps as f64;
            let h = heading_rad + omega * dt;
            let position = if omega.abs() < 1e-12 {
                advance(&start.position, &vel(heading_rad), dt)
            } else {
                let r = speed_mps / omega;
                [
                    start.position[0] + r * (h.sin() - heading_rad.sin()),
                    start.position[1] - r * (h.cos() - heading_rad.cos()),
                    start.position[2],
                ]
            };
            self.points.push(TrajectoryPoint { t: start.t + dt, position, velocity: vel(h) });
        }
        self
    }

    pub fn duration_s(&self) -> f64 {
        self.last().t
    }

    pub fn build(self) -> Vec<TrajectoryPoint> {
        self.points
    }
}

fn advance(p: &Vec3, v: &Vec3, dt: f64) -> Vec3 {
    [p[0] + v[0] * dt, p[1] + v[1] * dt, p[2] + v[2] * dt]
}

/// Noise PSD for `snr_db` against the mean uplink LoS power at the start.
pub fn uplink_noise_psd(anchors: &[Vec3], start: &Vec3, los_gain: f64, snr_db: f64, config: &SoundingConfig) -> f64 {
    let p: f64 = anchors.iter().map(|a| (los_gain / distance(a, start)).powi(2)).sum::<f64>() / anchors.len() as f64;
    noise_psd_for_snr(snr_db, p, config)
}

fn los_only() -> ChannelSpec {
    ChannelSpec::Geometric(GeometricChannel::default())
}

fn hall_scene(config: &SoundingConfig, trajectory: Vec<TrajectoryPoint>, channel: ChannelSpec, snr_db: f64) -> Result<Scene> {
    if config.num_antennas != 13 {
        return Err(Error::InvalidConfig(format!(
            "hall presets need 13 antennas, config has {}",
            config.num_antennas
        )));
    }
    let anchors = hall_anchors();
    let duration_s = trajectory[trajectory.len() - 1].t.max(config.snapshot_period_s());
    let noise_psd = uplink_noise_psd(&anchors, &trajectory[0].position, 1.0, snr_db, config);
    Ok(Scene {
        anchor_positions: anchors,
        agent_trajectory: trajectory,
        channel,
        impairments: HardwareImpairments::none(),
        noise_psd,
        duration_s,
    })
}

/// Straight walk along the hall at 1 m/s, LoS only.
pub fn ref_like(config: &SoundingConfig, duration_s: f64, snr_db: f64) -> Result<Scene> {
    let tr = TrajectoryBuilder::new([9.5, 6.2, AGENT_HEIGHT_M]).line([1.0, 0.0, 0.0], duration_s).build();
    hall_scene(config, tr, los_only(), snr_db)
}

/// Closed loop with four left turns, LoS only.
pub fn loop_scene(config: &SoundingConfig, snr_db: f64) -> Result<Scene> {
    let v = 1.0;
    let quarter = std::f64::consts::FRAC_PI_2;
    let tr = TrajectoryBuilder::new([9.0, 3.0, AGENT_HEIGHT_M])
        .hold(1.0)
        .line([v, 0.0, 0.0], 10.0)
        .turn(v, 0.0, quarter, 3.0, 0.05)
        .line([0.0, v, 0.0], 1.0)
        .turn(v, quarter, quarter, 3.0, 0.05)
        .line([-v, 0.0, 0.0], 10.0)
        .turn(v, 2.0 * quarter, quarter, 3.0, 0.05)
        .line([0.0, -v, 0.0], 1.0)
        .turn(v, 3.0 * quarter, quarter, 3.0, 0.05)
        .hold(1.0)
        .build();
    hall_scene(config, tr, los_only(), snr_db)
}

/// Random point scatterers filling the hall.
pub fn industrial_scatterers(count: usize, seed: u64) -> Vec<Scatterer> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| Scatterer {
            position: [rng.random_range(0.0..30.0), rng.random_range(0.0..11.0), rng.random_range(0.0..6.0)],
            reflection: rng.random_range(0.2..0.6),
            phase_rad: rng.random_range(0.0..std::f64::consts::TAU),
        })
        .collect()
}

/// The `ref` walk among metallic clutter.
pub fn industrial(config: &SoundingConfig, duration_s: f64, snr_db: f64, seed: u64) -> Result<Scene> {
    let tr = TrajectoryBuilder::new([9.5, 6.2, AGENT_HEIGHT_M]).line([1.0, 0.0, 0.0], duration_s).build();
    let channel = ChannelSpec::Geometric(GeometricChannel {
        scatterers: industrial_scatterers(24, seed),
        ..Default::default()
    });
    hall_scene(config, tr, channel, snr_db)
}

/// Agent parked in the middle of the hall.
pub fn static_hall(config: &SoundingConfig, duration_s: f64, snr_db: f64) -> Result<Scene> {
    let tr = TrajectoryBuilder::new([15.0, 5.0, AGENT_HEIGHT_M]).hold(duration_s).build();
    hall_scene(config, tr, los_only(), snr_db)
}

/// Looks a preset up by name with its default parameters.
pub fn preset(name: &str, config: &SoundingConfig, seed: u64) -> Result<Scene> {
    match name {
        "ref" => ref_like(config, 10.0, 30.0),
        "loop" => loop_scene(config, 30.0),
        "industrial" => industrial(config, 10.0, 30.0, seed),
        "static" => static_hall(config, 5.0, 30.0),
        other => Err(Error::InvalidParameter(format!(
            "unknown preset '{other}', expected one of {}",
            PRESET_NAMES.join(", ")
        ))),
    }
}
