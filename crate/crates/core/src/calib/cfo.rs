use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::StaticWindow;
use crate::error::{Error, Result};
use crate::scene::{LinkId, SnapshotTensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CfoEstimate {
    pub link: LinkId,
    pub shift: usize,
    /// Phase advance over `shift` snapshot intervals, in `(-π, π]`.
    pub mu_hat_rad: f64,
    /// Offset implied by the advance and the link's snapshot interval.
    pub cfo_hz: f64,
    pub interval_s: f64,
}

impl CfoEstimate {
    /// Unit-modulus factor that removes the rotation from snapshot `n`.
    pub fn correction_phasor(&self, n: usize) -> Complex64 {
        Complex64::from_polar(1.0, -(n as f64) * self.mu_hat_rad / self.shift as f64)
    }
}

/// Shift-correlation CFO estimate over a static window.
///
/// Each snapshot is correlated with the one `shift` positions later on every
/// subcarrier and the angle of the grand sum is the phase advance.
pub fn estimate_cfo(window: &StaticWindow, tensor: &SnapshotTensor, shift: usize) -> Result<CfoEstimate> {
    let li = window.check(tensor)?;
    if shift == 0 || window.len <= shift {
        return Err(Error::InvalidWindow(format!(
            "static window of {} snapshots needs more than shift {shift}",
            window.len
        )));
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for n in window.start..window.start + window.len - shift {
        let a = tensor.snapshot_f32(li, n);
        let b = tensor.snapshot_f32(li, n + shift);
        for (x, y) in a.iter().zip(b) {
            let x = Complex64::new(x.re as f64, x.im as f64);
            let y = Complex64::new(y.re as f64, y.im as f64);
            acc += y * x.conj();
        }
    }
    if acc.norm() == 0.0 {
        return Err(Error::ZeroInput("CFO window carries no energy"));
    }
    let mu_hat_rad = super::wrap_phase(acc.arg());
    let interval_s = tensor.link_interval_s(li);
    Ok(CfoEstimate {
        link: window.link,
        shift,
        mu_hat_rad,
        cfo_hz: mu_hat_rad / (2.0 * PI * shift as f64 * interval_s),
        interval_s,
    })
}

/// Derotates every snapshot of each estimated link; other links pass through.
pub fn apply_cfo_correction(tensor: &SnapshotTensor, estimates: &[CfoEstimate]) -> Result<SnapshotTensor> {
    let mut per_link: Vec<Option<CfoEstimate>> = vec![None; tensor.num_links()];
    for e in estimates {
        per_link[tensor.require_link(e.link)?] = Some(*e);
    }
    tensor.map_snapshots(|li, n, mut s| {
        if let Some(e) = &per_link[li] {
            let c = e.correction_phasor(n);
            s.iter_mut().for_each(|x| *x *= c);
        }
        Ok(s)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SoundingConfig;
    use crate::scene::{
        generate_campaign_with, CampaignOptions, ChannelSpec, HardwareImpairments, LinkChannel, LinkSelection,
        MultipathComponent, PairCfo, ReferenceSignal, Scene, TrajectoryPoint,
    };
    use approx::assert_abs_diff_eq;

    fn campaign(cfo_hz: f64, ns: usize) -> SnapshotTensor {
        let cfg = SoundingConfig { num_antennas: 2, ..Default::default() };
        let l = LinkId::new(0, 1);
        let scene = Scene {
            anchor_positions: vec![[0.0; 3]],
            agent_trajectory: vec![TrajectoryPoint { t: 0.0, position: [3.0, 0.0, 0.0], velocity: [0.0; 3] }],
            channel: ChannelSpec::Explicit {
                links: vec![LinkChannel::constant(l, vec![MultipathComponent::new(Complex64::new(0.3, 0.1), 45e-9, 0.0)])],
            },
            impairments: HardwareImpairments { cfo_hz_per_pair: vec![PairCfo { rx: 0, tx: 1, cfo_hz }], ..Default::default() },
            noise_psd: 0.0,
            duration_s: 10.0,
        };
        let r = ReferenceSignal::zadoff_chu(&cfg, 1).unwrap();
        let opts = CampaignOptions { links: LinkSelection::Explicit(vec![l]), num_snapshots: Some(ns), ..Default::default() };
        generate_campaign_with(&scene, &cfg, &r, 0, &opts).unwrap().equalize(&r).unwrap()
    }

    #[test]
    fn ten_hz_gives_expected_advance() {
        let t = campaign(10.0, 40);
        let e = estimate_cfo(&StaticWindow::new(LinkId::new(0, 1), 0, 40), &t, 1).unwrap();
        assert_abs_diff_eq!(e.mu_hat_rad, 2.0 * PI * 10.0 * 0.005, epsilon = 1e-6);
        assert_abs_diff_eq!(e.cfo_hz, 10.0, epsilon = 1e-4);
    }

    #[test]
    fn zero_cfo_zero_estimate() {
        let t = campaign(0.0, 20);
        let e = estimate_cfo(&StaticWindow::new(LinkId::new(0, 1), 0, 20), &t, 2).unwrap();
        assert_abs_diff_eq!(e.mu_hat_rad, 0.0, epsilon = 1e-6);
    }

    #[test]
    fn half_rate_wraps_without_error() {
        let t = campaign(100.0, 20);
        let e = estimate_cfo(&StaticWindow::new(LinkId::new(0, 1), 0, 20), &t, 1).unwrap();
        assert_abs_diff_eq!(e.mu_hat_rad.abs(), PI, epsilon = 1e-5);
    }

    #[test]
    fn correction_round_trip() {
        let t = campaign(-23.0, 60);
        let l = LinkId::new(0, 1);
        let e = estimate_cfo(&StaticWindow::new(l, 0, 60), &t, 1).unwrap();
        let c = apply_cfo_correction(&t, &[e]).unwrap();
        let first = c.snapshot(0, 0);
        for n in 0..60 {
            let s = c.snapshot(0, n);
            let drift = (s[100] * first[100].conj()).arg();
            assert!(drift.abs() < 1e-6, "snapshot {n}: {drift}");
            let p0: f64 = t.snapshot(0, n).iter().map(|x| x.norm_sqr()).sum();
            let p1: f64 = s.iter().map(|x| x.norm_sqr()).sum();
            assert!((p0 - p1).abs() <= 1e-6 * p0);
        }
        let again = estimate_cfo(&StaticWindow::new(l, 0, 60), &c, 1).unwrap();
        assert!(again.mu_hat_rad.abs() < 1e-6);
    }

    #[test]
    fn zero_estimate_is_identity() {
        let t = campaign(5.0, 10);
        let e = CfoEstimate { link: LinkId::new(0, 1), shift: 1, mu_hat_rad: 0.0, cfo_hz: 0.0, interval_s: 0.005 };
        assert_eq!(apply_cfo_correction(&t, &[e]).unwrap(), t);
    }

    #[test]
    fn window_checks() {
        let t = campaign(5.0, 10);
        assert!(estimate_cfo(&StaticWindow::new(LinkId::new(0, 1), 0, 1), &t, 1).is_err());
        assert!(estimate_cfo(&StaticWindow::new(LinkId::new(0, 1), 5, 10), &t, 1).is_err());
        assert!(matches!(
            estimate_cfo(&StaticWindow::new(LinkId::new(1, 0), 0, 10), &t, 1),
            Err(Error::MissingLink { .. })
        ));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]
        #[test]
        fn invariant_to_global_scaling(re in -3.0f64..3.0, im in -3.0f64..3.0) {
            proptest::prop_assume!(re.abs() + im.abs() > 1e-3);
            let t = campaign(7.0, 12);
            let g = Complex64::new(re, im);
            let scaled = t.map_snapshots(|_, _, s| Ok(s.into_iter().map(|x| x * g).collect())).unwrap();
            let w = StaticWindow::new(LinkId::new(0, 1), 0, 12);
            let a = estimate_cfo(&w, &t, 1).unwrap();
            let b = estimate_cfo(&w, &scaled, 1).unwrap();
            proptest::prop_assert!((a.mu_hat_rad - b.mu_hat_rad).abs() < 1e-5);
        }
    }
}
