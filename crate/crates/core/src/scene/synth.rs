use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

use super::{LinkId, ReferenceSignal, Scene};
use crate::config::SoundingConfig;
use crate::error::{Error, Result};
use crate::tdma::TdmaSchedule;

/// Complex noise variance per active subcarrier: `N_0 · BW / N_f`.
pub fn noise_variance_per_bin(noise_psd: f64, config: &SoundingConfig) -> f64 {
    noise_psd * config.bandwidth_hz() / config.num_active_subcarriers as f64
}

/// Noise PSD giving `snr_db` per subcarrier for a received power `signal_power_per_bin`.
pub fn noise_psd_for_snr(snr_db: f64, signal_power_per_bin: f64, config: &SoundingConfig) -> f64 {
    let variance = signal_power_per_bin / 10f64.powf(snr_db / 10.0);
    variance * config.num_active_subcarriers as f64 / config.bandwidth_hz()
}

/// Independent noise stream per (link, snapshot) derived from the master seed.
pub(crate) fn noise_rng(seed: u64, num_antennas: usize, link: LinkId, n: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let link_id = (link.rx * num_antennas + link.tx) as u64;
    rng.set_stream((link_id << 40) | n as u64);
    rng
}

/// Received frequency-domain snapshot of `link` in snapshot `n`, measured at
/// the time the TDMA schedule assigns to the link.
pub fn synthesize_snapshot(
    scene: &Scene,
    config: &SoundingConfig,
    reference: &ReferenceSignal,
    schedule: &TdmaSchedule,
    link: LinkId,
    n: usize,
    seed: u64,
) -> Result<Vec<Complex64>> {
    let t = schedule.link_timestamp(n, link.tx)?;
    synthesize_at(scene, config, reference, link, n, t, seed)
}

/// Same as [`synthesize_snapshot`] with an explicit measurement time `t`.
pub fn synthesize_at(
    scene: &Scene,
    config: &SoundingConfig,
    reference: &ReferenceSignal,
    link: LinkId,
    n: usize,
    t: f64,
    seed: u64,
) -> Result<Vec<Complex64>> {
    let h = config.num_antennas;
    if link.rx >= h || link.tx >= h || link.rx == link.tx {
        return Err(Error::InvalidLink { rx: link.rx, tx: link.tx });
    }
    let nf = config.num_active_subcarriers;
    if reference.effective_spectrum_s.len() != nf {
        return Err(Error::DimensionMismatch(format!(
            "reference has {} bins, config has {nf}",
            reference.effective_spectrum_s.len()
        )));
    }
    let mpcs = scene.link_mpcs(config, link, n, t)?;
    for m in &mpcs {
        m.validate(config)?;
    }

    let fc = config.carrier_frequency_hz;
    let df = config.subcarrier_spacing_hz;
    let f0 = config.subcarrier_frequency(0);
    let imp = &scene.impairments;
    let eps = imp.clock_offset_s(link);

    // Frequency-independent factors: CFO, carrier part of the clock shift, unit phase offsets.
    let common = Complex64::from_polar(
        1.0,
        2.0 * PI * imp.cfo_hz(link) * t - 2.0 * PI * (fc * eps).fract() + imp.phase_offset_rad(link),
    );

    let mut acc = vec![Complex64::new(0.0, 0.0); nf];
    for m in &mpcs {
        let tau = m.delay_s + eps;
        let start = m.complex_amplitude
            * common
            * Complex64::from_polar(
                1.0,
                -2.0 * PI * (fc * m.delay_s).fract() + 2.0 * PI * (m.doppler_hz * t).fract() - 2.0 * PI * f0 * tau,
            );
        let step = Complex64::from_polar(1.0, -2.0 * PI * df * tau);
        let mut ph = start;
        for (k, a) in acc.iter_mut().enumerate() {
            if k % 64 == 0 {
                // re-anchor the recursion to bound rounding drift
                ph = start * Complex64::from_polar(1.0, -2.0 * PI * df * tau * k as f64);
            }
            *a += ph;
            ph *= step;
        }
    }
    for (a, s) in acc.iter_mut().zip(&reference.effective_spectrum_s) {
        *a *= s;
    }

    let variance = noise_variance_per_bin(scene.noise_psd, config);
    if variance > 0.0 {
        let sd = (variance / 2.0).sqrt();
        let mut rng = noise_rng(seed, h, link, n);
        for a in acc.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *a += Complex64::new(re * sd, im * sd);
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{ChannelSpec, HardwareImpairments, LinkChannel, MultipathComponent, PairCfo, TrajectoryPoint};
    use crate::tdma::build_schedule;
    use approx::assert_abs_diff_eq;

    fn cfg() -> SoundingConfig {
        SoundingConfig { num_antennas: 2, ..Default::default() }
    }

    fn scene_with(mpcs: Vec<MultipathComponent>, imp: HardwareImpairments, noise_psd: f64) -> Scene {
        Scene {
            anchor_positions: vec![[0.0, 0.0, 0.0]],
            agent_trajectory: vec![TrajectoryPoint { t: 0.0, position: [5.0, 0.0, 0.0], velocity: [0.0; 3] }],
            channel: ChannelSpec::Explicit { links: vec![LinkChannel::constant(LinkId::new(0, 1), mpcs)] },
            impairments: imp,
            noise_psd,
            duration_s: 1.0,
        }
    }

    fn unit_tap(delay_s: f64, doppler_hz: f64) -> MultipathComponent {
        MultipathComponent::new(Complex64::new(1.0, 0.0), delay_s, doppler_hz)
    }

    #[test]
    fn trivial_tap_reproduces_reference() {
        let c = cfg();
        let r = ReferenceSignal::zadoff_chu(&c, 7).unwrap();
        let s = scene_with(vec![unit_tap(0.0, 0.0)], HardwareImpairments::none(), 0.0);
        let y = synthesize_at(&s, &c, &r, LinkId::new(0, 1), 3, 0.123, 1).unwrap();
        for (a, b) in y.iter().zip(&r.effective_spectrum_s) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn delay_gives_linear_phase_slope() {
        let c = cfg();
        let r = ReferenceSignal::zadoff_chu(&c, 7).unwrap();
        let s = scene_with(vec![unit_tap(100e-9, 0.0)], HardwareImpairments::none(), 0.0);
        let y = r.equalize(&synthesize_at(&s, &c, &r, LinkId::new(0, 1), 0, 0.0, 1).unwrap());
        let d = (y[10] * y[9].conj()).arg();
        // -2π · 78.125 kHz · 100 ns
        assert_abs_diff_eq!(d, -0.04908738521234052, epsilon = 1e-12);
    }

    #[test]
    fn deterministic_per_seed() {
        let c = cfg();
        let r = ReferenceSignal::zadoff_chu(&c, 7).unwrap();
        let s = scene_with(vec![unit_tap(30e-9, 2.0)], HardwareImpairments::none(), 1e-9);
        let a = synthesize_at(&s, &c, &r, LinkId::new(0, 1), 4, 0.02, 99).unwrap();
        let b = synthesize_at(&s, &c, &r, LinkId::new(0, 1), 4, 0.02, 99).unwrap();
        let other = synthesize_at(&s, &c, &r, LinkId::new(0, 1), 4, 0.02, 100).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, other);
    }

    #[test]
    fn delay_outside_unambiguous_range_rejected() {
        let c = cfg();
        let r = ReferenceSignal::zadoff_chu(&c, 7).unwrap();
        let s = scene_with(vec![unit_tap(13e-6, 0.0)], HardwareImpairments::none(), 0.0);
        assert!(matches!(
            synthesize_at(&s, &c, &r, LinkId::new(0, 1), 0, 0.0, 0),
            Err(Error::DelayOutOfRange { .. })
        ));
    }

    #[test]
    fn noise_only_link_has_configured_variance() {
        let c = cfg();
        let r = ReferenceSignal::zadoff_chu(&c, 7).unwrap();
        let n0 = 2.5e-9;
        let s = scene_with(vec![], HardwareImpairments::none(), n0);
        let want = noise_variance_per_bin(n0, &c);
        let mut acc = 0.0;
        let mut count = 0;
        // link (1, 0) is not listed: noise only
        for n in 0..30 {
            for x in synthesize_at(&s, &c, &r, LinkId::new(1, 0), n, 0.0, 5).unwrap() {
                acc += x.norm_sqr();
                count += 1;
            }
        }
        assert!(count >= 10_000);
        let got = acc / count as f64;
        assert!((got / want - 1.0).abs() < 0.05, "variance {got} vs {want}");
    }

    #[test]
    fn geometric_links_are_reciprocal_at_equal_time() {
        use crate::scene::presets::{hall_anchors, industrial_scatterers};
        use crate::scene::GeometricChannel;
        let c = SoundingConfig::default();
        let scene = Scene {
            anchor_positions: hall_anchors(),
            agent_trajectory: vec![TrajectoryPoint { t: 0.0, position: [12.0, 4.0, 0.5], velocity: [0.6, -0.3, 0.0] }],
            channel: ChannelSpec::Geometric(GeometricChannel { scatterers: industrial_scatterers(8, 3), ..Default::default() }),
            impairments: HardwareImpairments::none(),
            noise_psd: 0.0,
            duration_s: 1.0,
        };
        let r = ReferenceSignal::zadoff_chu(&c, 1).unwrap();
        for (a, b) in [(0, 12), (3, 7), (11, 12)] {
            let fwd = synthesize_at(&scene, &c, &r, LinkId::new(a, b), 5, 0.4, 0).unwrap();
            let rev = synthesize_at(&scene, &c, &r, LinkId::new(b, a), 5, 0.4, 0).unwrap();
            let scale = fwd.iter().map(|x| x.norm()).fold(0.0, f64::max);
            for (x, y) in fwd.iter().zip(&rev) {
                assert!((x - y).norm() < 1e-12 * scale, "link ({a}, {b})");
            }
        }
    }

    #[test]
    fn cfo_rotates_between_snapshots() {
        let c = cfg();
        let r = ReferenceSignal::zadoff_chu(&c, 7).unwrap();
        let imp = HardwareImpairments {
            cfo_hz_per_pair: vec![PairCfo { rx: 0, tx: 1, cfo_hz: 13.0 }],
            ..Default::default()
        };
        let s = scene_with(vec![unit_tap(40e-9, 0.0)], imp, 0.0);
        let sched = build_schedule(&c).unwrap();
        let l = LinkId::new(0, 1);
        let a = synthesize_snapshot(&s, &c, &r, &sched, l, 10, 0).unwrap();
        let b = synthesize_snapshot(&s, &c, &r, &sched, l, 11, 0).unwrap();
        let rot = (b[3] * a[3].conj()).arg();
        assert_abs_diff_eq!(rot, 2.0 * PI * 13.0 * sched.snapshot_period_s, epsilon = 1e-9);
    }

    proptest::proptest! {
        #[test]
        fn noiseless_synthesis_is_linear_in_amplitudes(
            a1 in -2.0f64..2.0, b1 in -2.0f64..2.0, a2 in -2.0f64..2.0, b2 in -2.0f64..2.0,
            d1 in 0.0f64..1e-6, d2 in 0.0f64..1e-6, n1 in -50.0f64..50.0, n2 in -50.0f64..50.0,
        ) {
            let c = SoundingConfig { num_antennas: 2, num_active_subcarriers: 33, num_subcarriers_total: 64, ..Default::default() };
            let r = ReferenceSignal::zadoff_chu(&c, 5).unwrap();
            let m1 = MultipathComponent::new(Complex64::new(a1, b1), d1, n1);
            let m2 = MultipathComponent::new(Complex64::new(a2, b2), d2, n2);
            let l = LinkId::new(0, 1);
            let joint = synthesize_at(&scene_with(vec![m1, m2], HardwareImpairments::none(), 0.0), &c, &r, l, 2, 0.37, 0).unwrap();
            let y1 = synthesize_at(&scene_with(vec![m1], HardwareImpairments::none(), 0.0), &c, &r, l, 2, 0.37, 0).unwrap();
            let y2 = synthesize_at(&scene_with(vec![m2], HardwareImpairments::none(), 0.0), &c, &r, l, 2, 0.37, 0).unwrap();
            for k in 0..joint.len() {
                proptest::prop_assert!((joint[k] - y1[k] - y2[k]).norm() < 1e-9);
            }
        }
    }
}
