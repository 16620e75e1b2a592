//! Over-the-air calibration: DC-bin interpolation, carrier frequency offset
//! and per-link delay offset.
//!
//! All estimators expect equalized snapshots (channel transfer functions)
//! taken from a window in which every antenna is static.

mod cfo;
mod dc;
mod delay;

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub use cfo::{apply_cfo_correction, estimate_cfo, CfoEstimate};
pub use dc::{interpolate_dc, interpolate_dc_tensor};
pub use delay::{apply_delay_correction, estimate_delay_offset, fit_phase_slope, DelayOffsetEstimate, PhaseSlopeFit};

use crate::error::{Error, Result};
use crate::geometry::distance;
use crate::scene::{LinkId, ReferenceSignal, SnapshotTensor, TrajectoryPoint};
use crate::geometry::Vec3;

/// Snapshots `[start, start + len)` of one link during which nothing moves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticWindow {
    pub link: LinkId,
    pub start: usize,
    pub len: usize,
}

impl StaticWindow {
    pub fn new(link: LinkId, start: usize, len: usize) -> Self {
        Self { link, start, len }
    }

    pub(crate) fn check(&self, tensor: &SnapshotTensor) -> Result<usize> {
        let li = tensor.require_link(self.link)?;
        if self.len == 0 || self.start + self.len > tensor.num_snapshots() {
            return Err(Error::InvalidWindow(format!(
                "static window {}..{} outside {} snapshots",
                self.start,
                self.start + self.len,
                tensor.num_snapshots()
            )));
        }
        Ok(li)
    }
}

/// Wraps to `(-π, π]`.
pub fn wrap_phase(x: f64) -> f64 {
    let y = x - 2.0 * PI * ((x + PI) / (2.0 * PI)).floor();
    // floor maps +π to -π; keep the half-open interval closed at +π
    if y == -PI {
        PI
    } else {
        y
    }
}

/// Removes `2π` jumps scanning in order. A step of exactly `±π` is resolved
/// toward the sign of the previous step.
pub fn unwrap(phases: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(phases.len());
    let Some(&first) = phases.first() else {
        return out;
    };
    out.push(first);
    let mut prev_step = 0.0f64;
    for w in phases.windows(2) {
        let mut d = wrap_phase(w[1] - w[0]);
        if (d.abs() - PI).abs() < 1e-15 {
            d = if prev_step < 0.0 { -PI } else { PI };
        }
        let last = out[out.len() - 1];
        out.push(last + d);
        prev_step = d;
    }
    out
}

/// Parameters of a full calibration pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPlan {
    pub window_start: usize,
    pub window_len: usize,
    #[serde(default = "default_shift")]
    pub shift: usize,
    #[serde(default = "yes")]
    pub interpolate_dc: bool,
    #[serde(default = "yes")]
    pub correct_cfo: bool,
    #[serde(default = "yes")]
    pub correct_delay: bool,
}

fn default_shift() -> usize {
    1
}

fn yes() -> bool {
    true
}

impl Default for CalibrationPlan {
    fn default() -> Self {
        Self { window_start: 0, window_len: 150, shift: 1, interpolate_dc: true, correct_cfo: true, correct_delay: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkCalibration {
    pub rx: usize,
    pub tx: usize,
    pub mu_hat_rad: Option<f64>,
    pub cfo_hz: Option<f64>,
    pub epsilon_hat_s: Option<f64>,
    pub slope_rad_per_hz: Option<f64>,
    pub residual_rms_rad: Option<f64>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub plan: CalibrationPlan,
    pub links: Vec<LinkCalibration>,
}

/// Equalizes, fills the DC bin, then estimates and removes CFO and delay
/// offsets link by link. Delay offsets need the antenna positions during
/// the window; links without a known distance are flagged and skipped.
pub fn calibrate(
    tensor: &SnapshotTensor,
    reference: &ReferenceSignal,
    plan: &CalibrationPlan,
    anchors: Option<&[Vec3]>,
    trajectory: Option<&[TrajectoryPoint]>,
) -> Result<(SnapshotTensor, CalibrationReport)> {
    let mut t = tensor.equalize(reference)?;
    if plan.interpolate_dc {
        t = interpolate_dc_tensor(&t)?;
    }
    let mut links: Vec<LinkCalibration> = t
        .links()
        .iter()
        .map(|l| LinkCalibration {
            rx: l.rx,
            tx: l.tx,
            mu_hat_rad: None,
            cfo_hz: None,
            epsilon_hat_s: None,
            slope_rad_per_hz: None,
            residual_rms_rad: None,
            flags: vec![],
        })
        .collect();

    if plan.correct_cfo {
        let mut ests = Vec::with_capacity(t.num_links());
        for (li, l) in t.links().to_vec().iter().enumerate() {
            match estimate_cfo(&StaticWindow::new(*l, plan.window_start, plan.window_len), &t, plan.shift) {
                Ok(e) => {
                    links[li].mu_hat_rad = Some(e.mu_hat_rad);
                    links[li].cfo_hz = Some(e.cfo_hz);
                    ests.push(e);
                }
                Err(Error::ZeroInput(_)) => links[li].flags.push("cfo_zero_input".into()),
                Err(e) => return Err(e),
            }
        }
        t = apply_cfo_correction(&t, &ests)?;
    }

    if plan.correct_delay {
        let mut ests = Vec::new();
        for (li, l) in t.links().to_vec().iter().enumerate() {
            let t0 = t.timestamp(li, plan.window_start.min(t.num_snapshots() - 1));
            let Some(d) = link_distance(*l, t0, anchors, trajectory) else {
                links[li].flags.push("no_distance".into());
                continue;
            };
            let w = StaticWindow::new(*l, plan.window_start, plan.window_len);
            match estimate_delay_offset(&w, &t, d) {
                Ok(e) => {
                    links[li].epsilon_hat_s = Some(e.epsilon_hat_s);
                    links[li].slope_rad_per_hz = Some(e.slope_rad_per_hz);
                    links[li].residual_rms_rad = Some(e.residual_rms_rad);
                    if e.unwrap_flagged {
                        links[li].flags.push("unwrap_jump".into());
                    }
                    ests.push(e);
                }
                Err(Error::ZeroInput(_)) => links[li].flags.push("delay_zero_input".into()),
                Err(e) => return Err(e),
            }
        }
        t = apply_delay_correction(&t, &ests)?;
    }
    Ok((t, CalibrationReport { plan: plan.clone(), links }))
}

/// Antenna distance of `link` at time `t`, if the geometry is known.
pub fn link_distance(link: LinkId, t: f64, anchors: Option<&[Vec3]>, trajectory: Option<&[TrajectoryPoint]>) -> Option<f64> {
    let anchors = anchors?;
    let pos = |h: usize| -> Option<Vec3> {
        if h < anchors.len() {
            Some(anchors[h])
        } else if h == anchors.len() {
            let tr = trajectory?;
            let i = tr.partition_point(|p| p.t <= t);
            let p = if i == 0 {
                tr.first()?.position
            } else if i == tr.len() {
                tr[tr.len() - 1].position
            } else {
                let (a, b) = (tr[i - 1], tr[i]);
                let w = (t - a.t) / (b.t - a.t);
                [0, 1, 2].map(|k| a.position[k] + w * (b.position[k] - a.position[k]))
            };
            Some(p)
        } else {
            None
        }
    };
    Some(distance(&pos(link.rx)?, &pos(link.tx)?))
}
