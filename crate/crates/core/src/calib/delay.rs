use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::{wrap_phase, StaticWindow};
use crate::error::{Error, Result};
use crate::geometry::SPEED_OF_LIGHT;
use crate::scene::{LinkId, SnapshotTensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSlopeFit {
    /// rad/Hz
    pub slope: f64,
    pub intercept: f64,
    pub residual_rms: f64,
    /// A detrended phase step exceeded π, so unwrapping is suspect.
    pub flagged: bool,
}

/// Least-squares line through the unwrapped phase against `freqs`.
///
/// Bins of zero magnitude are skipped. Across such a gap the unwrapping
/// extrapolates the previous step instead of assuming continuity.
pub fn fit_phase_slope(h: &[Complex64], freqs: &[f64]) -> Result<PhaseSlopeFit> {
    let pts: Vec<(usize, f64)> = h.iter().enumerate().filter(|(_, c)| c.norm_sqr() > 0.0).map(|(i, c)| (i, c.arg())).collect();
    if pts.len() < 2 {
        return Err(Error::ZeroInput("phase slope needs two nonzero bins"));
    }
    let mut u = Vec::with_capacity(pts.len());
    u.push(pts[0].1);
    let mut step = 0.0f64;
    for w in pts.windows(2) {
        let gap = (w[1].0 - w[0].0) as f64;
        let last = u[u.len() - 1];
        let mut d = wrap_phase(w[1].1 - w[0].1 - step * (gap - 1.0)) + step * (gap - 1.0);
        if gap == 1.0 && (d.abs() - PI).abs() < 1e-15 {
            d = if step < 0.0 { -PI } else { PI };
        }
        u.push(last + d);
        step = d / gap;
    }
    let x: Vec<f64> = pts.iter().map(|&(i, _)| freqs[i]).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = u.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|xi| (xi - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&u).map(|(xi, yi)| (xi - mx) * (yi - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("all frequencies coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let resid: Vec<f64> = x.iter().zip(&u).map(|(xi, yi)| yi - (slope * xi + intercept)).collect();
    let residual_rms = (resid.iter().map(|r| r * r).sum::<f64>() / n).sqrt();
    let flagged = resid.windows(2).any(|w| (w[1] - w[0]).abs() > PI);
    Ok(PhaseSlopeFit { slope, intercept, residual_rms, flagged })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayOffsetEstimate {
    pub link: LinkId,
    /// Delay in excess of the geometric LoS delay.
    pub epsilon_hat_s: f64,
    /// Mean fitted slope over the window, rad/Hz.
    pub slope_rad_per_hz: f64,
    pub residual_rms_rad: f64,
    pub known_distance_m: f64,
    pub unwrap_flagged: bool,
}

/// Fits the phase slope of every snapshot in the window and compares the
/// mean slope with the one implied by the known antenna distance.
pub fn estimate_delay_offset(window: &StaticWindow, tensor: &SnapshotTensor, known_distance_m: f64) -> Result<DelayOffsetEstimate> {
    let li = window.check(tensor)?;
    if !(known_distance_m.is_finite() && known_distance_m >= 0.0) {
        return Err(Error::InvalidParameter(format!("distance {known_distance_m} m")));
    }
    let freqs = tensor.config.subcarrier_frequencies();
    let mut slope = 0.0;
    let mut rms = 0.0;
    let mut flagged = false;
    for n in window.start..window.start + window.len {
        let fit = fit_phase_slope(&tensor.snapshot(li, n), &freqs)?;
        slope += fit.slope;
        rms += fit.residual_rms;
        flagged |= fit.flagged;
    }
    let k = window.len as f64;
    let slope = slope / k;
    Ok(DelayOffsetEstimate {
        link: window.link,
        epsilon_hat_s: -slope / (2.0 * PI) - known_distance_m / SPEED_OF_LIGHT,
        slope_rad_per_hz: slope,
        residual_rms_rad: rms / k,
        known_distance_m,
        unwrap_flagged: flagged,
    })
}

/// Advances each estimated link by its offset: bin `f` is multiplied by
/// `exp(j2π f ε̂)`.
pub fn apply_delay_correction(tensor: &SnapshotTensor, estimates: &[DelayOffsetEstimate]) -> Result<SnapshotTensor> {
    let mut per_link: Vec<Option<f64>> = vec![None; tensor.num_links()];
    for e in estimates {
        per_link[tensor.require_link(e.link)?] = Some(e.epsilon_hat_s);
    }
    let freqs = tensor.config.subcarrier_frequencies();
    tensor.map_snapshots(|li, _, mut s| {
        if let Some(eps) = per_link[li] {
            for (x, f) in s.iter_mut().zip(&freqs) {
                *x *= Complex64::from_polar(1.0, 2.0 * PI * f * eps);
            }
        }
        Ok(s)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SoundingConfig;
    use crate::scene::{
        generate_campaign_with, CampaignOptions, ChannelSpec, GeometricChannel, HardwareImpairments, LinkSelection,
        ReferenceSignal, Scatterer, Scene, TrajectoryPoint, Blockage,
    };
    use approx::assert_abs_diff_eq;

    fn tensor(clock_offset_s: f64, channel: ChannelSpec) -> SnapshotTensor {
        let cfg = SoundingConfig { num_antennas: 2, ..Default::default() };
        let scene = Scene {
            anchor_positions: vec![[0.0, 0.0, 0.0]],
            agent_trajectory: vec![TrajectoryPoint { t: 0.0, position: [10.0, 0.0, 0.0], velocity: [0.0; 3] }],
            channel,
            impairments: HardwareImpairments { clock_offset_s_per_unit: vec![0.0, -clock_offset_s], ..Default::default() },
            noise_psd: 0.0,
            duration_s: 1.0,
        };
        let r = ReferenceSignal::zadoff_chu(&cfg, 1).unwrap();
        let opts = CampaignOptions {
            links: LinkSelection::Explicit(vec![LinkId::new(0, 1)]),
            num_snapshots: Some(4),
            ..Default::default()
        };
        let t = generate_campaign_with(&scene, &cfg, &r, 0, &opts).unwrap();
        super::super::interpolate_dc_tensor(&t.equalize(&r).unwrap()).unwrap()
    }

    fn los() -> ChannelSpec {
        ChannelSpec::Geometric(GeometricChannel::default())
    }

    fn window() -> StaticWindow {
        StaticWindow::new(LinkId::new(0, 1), 0, 4)
    }

    #[test]
    fn no_offset() {
        let e = estimate_delay_offset(&window(), &tensor(0.0, los()), 10.0).unwrap();
        assert!(e.epsilon_hat_s.abs() < 1e-12, "{}", e.epsilon_hat_s);
        assert!(!e.unwrap_flagged);
    }

    #[test]
    fn injected_offset_recovered() {
        let t = tensor(100e-9, los());
        let e = estimate_delay_offset(&window(), &t, 10.0).unwrap();
        assert_abs_diff_eq!(e.epsilon_hat_s, 100e-9, epsilon = 1e-9);
        let c = apply_delay_correction(&t, &[e]).unwrap();
        let again = estimate_delay_offset(&window(), &c, 10.0).unwrap();
        assert!(again.epsilon_hat_s.abs() < 1e-11);
    }

    #[test]
    fn reflected_path_overestimates_by_excess_length() {
        // scatterer such that the bounce is 5 m longer than the 10 m LoS
        let y = (7.5f64.powi(2) - 5.0f64.powi(2)).sqrt();
        let channel = ChannelSpec::Geometric(GeometricChannel {
            scatterers: vec![Scatterer { position: [5.0, y, 0.0], reflection: 1.0, phase_rad: 0.0 }],
            los_blockage: vec![Blockage { a: 0, b: 1, start_s: 0.0, end_s: 100.0 }],
            los_gain: 1.0,
        });
        let e = estimate_delay_offset(&window(), &tensor(0.0, channel), 10.0).unwrap();
        assert_abs_diff_eq!(e.epsilon_hat_s, 5.0 / SPEED_OF_LIGHT, epsilon = 1e-12);
        assert_abs_diff_eq!(e.epsilon_hat_s, 16.678e-9, epsilon = 1e-12);
    }

    #[test]
    fn slope_exact_on_single_tap() {
        let freqs: Vec<f64> = (0..101).map(|k| (k as f64 - 50.0) * 78.125e3).collect();
        let tau = 333e-9;
        let h: Vec<Complex64> = freqs.iter().map(|f| Complex64::from_polar(0.7, -2.0 * PI * f * tau + 1.0)).collect();
        let fit = fit_phase_slope(&h, &freqs).unwrap();
        assert!((fit.slope / (-2.0 * PI * tau) - 1.0).abs() < 1e-12);
        assert!(fit.residual_rms < 1e-9);
    }

    #[test]
    fn gap_is_bridged_by_trend() {
        // 2 rad per bin: a two-bin gap would wrap without extrapolation
        let freqs: Vec<f64> = (0..21).map(|k| k as f64).collect();
        let mut h: Vec<Complex64> = freqs.iter().map(|f| Complex64::from_polar(1.0, -2.0 * f)).collect();
        h[10] = Complex64::new(0.0, 0.0);
        let fit = fit_phase_slope(&h, &freqs).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-12);
    }

    #[test]
    fn noisy_phase_is_flagged() {
        let freqs: Vec<f64> = (0..8).map(|k| k as f64).collect();
        let h: Vec<Complex64> = [0.0, 3.0, 0.0, 3.0, 0.0, 3.0, 0.0, 3.0].iter().map(|&p| Complex64::from_polar(1.0, p)).collect();
        assert!(fit_phase_slope(&h, &freqs).unwrap().flagged);
    }
}
