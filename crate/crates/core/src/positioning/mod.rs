//! Delay-Doppler Bartlett positioning of the agent from its uplink channels.
//!
//! Every anchor contributes `|bᴴ H c*|²`, where `H` holds the `N_f × N_ν`
//! window of equalized snapshots, `b` the delay response and `c` the Doppler
//! response of a position-velocity hypothesis. Anchors add up as powers, so
//! no phase coherence between anchors is needed.

mod fast;
mod filter;
mod spectrum;

pub use fast::{DelayGrid, DelayTransform, WindowBank};
pub use filter::{track, ParticleSet, PfConfig, TrackConfig, TrackResult, TrackStep};
pub use spectrum::{axis, grid_estimate, spectrum_grid, GridEstimate, SpectrumDump, SpectrumKind};

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use std::f64::consts::PI;

use crate::config::SoundingConfig;
use crate::error::{Error, Result};
use crate::geometry::{distance, doppler_from_range_rate, range_rate, Vec3, SPEED_OF_LIGHT};

/// Which factors of the hypothesis enter the spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BartlettMode {
    /// Delay and Doppler responses.
    #[default]
    Joint,
    /// Doppler response replaced by ones.
    DelayOnly,
    /// Delay response replaced by ones.
    DopplerOnly,
}

/// Everything a hypothesis needs besides the measured windows.
#[derive(Debug, Clone, PartialEq)]
pub struct PositioningContext {
    pub anchors: Vec<Vec3>,
    /// Baseband frequency of every active bin.
    pub freqs_hz: Vec<f64>,
    pub carrier_hz: f64,
    /// Snapshot rate of the uplink windows.
    pub rate_hz: f64,
    /// Known agent height; hypotheses live on this plane.
    pub height_m: f64,
}

impl PositioningContext {
    pub fn new(config: &SoundingConfig, anchors: Vec<Vec3>, height_m: f64) -> Self {
        Self {
            anchors,
            freqs_hz: config.subcarrier_frequencies(),
            carrier_hz: config.carrier_frequency_hz,
            rate_hz: config.snapshot_rate_hz,
            height_m,
        }
    }

    pub fn point(&self, p: [f64; 2]) -> Vec3 {
        [p[0], p[1], self.height_m]
    }

    /// LoS delay from the hypothesis to anchor `h`.
    pub fn delay_s(&self, p: [f64; 2], h: usize) -> Result<f64> {
        let d = distance(&self.point(p), &self.anchor(h)?);
        if d == 0.0 {
            return Err(Error::CoincidentPoints);
        }
        Ok(d / SPEED_OF_LIGHT)
    }

    /// LoS Doppler seen by anchor `h` for an agent at `p` moving with `v`.
    pub fn doppler_hz(&self, p: [f64; 2], v: [f64; 2], h: usize) -> Result<f64> {
        let rate = range_rate(&self.point(p), &[v[0], v[1], 0.0], &self.anchor(h)?)?;
        Ok(doppler_from_range_rate(rate, self.carrier_hz))
    }

    fn anchor(&self, h: usize) -> Result<Vec3> {
        self.anchors
            .get(h)
            .copied()
            .ok_or_else(|| Error::InvalidParameter(format!("anchor {h} does not exist")))
    }
}

/// Delay response `b_f = exp(-j2π f τ)` of the hypothesis `p` towards anchor `h`.
pub fn temporal_steering(p: [f64; 2], h: usize, ctx: &PositioningContext) -> Result<Vec<C64>> {
    let tau = ctx.delay_s(p, h)?;
    Ok(ctx.freqs_hz.iter().map(|f| C64::from_polar(1.0, -2.0 * PI * f * tau)).collect())
}

/// Doppler response `c_n = exp(j2π t_n ν)` over `n_nu` snapshots.
pub fn doppler_steering(p: [f64; 2], v: [f64; 2], h: usize, n_nu: usize, ctx: &PositioningContext) -> Result<Vec<C64>> {
    let nu = ctx.doppler_hz(p, v, h)?;
    Ok((0..n_nu).map(|n| C64::from_polar(1.0, 2.0 * PI * nu * n as f64 / ctx.rate_hz)).collect())
}

fn check_window(window: &[Vec<C64>], b: &[C64], c: &[C64]) -> Result<()> {
    if window.len() != c.len() || window.iter().any(|s| s.len() != b.len()) {
        return Err(Error::DimensionMismatch(format!(
            "window of {} snapshots does not match steering vectors of {} x {}",
            window.len(),
            b.len(),
            c.len()
        )));
    }
    Ok(())
}

/// `bᴴ H c*` for a window stored snapshot by snapshot.
pub fn bartlett_response(window: &[Vec<C64>], b: &[C64], c: &[C64]) -> Result<C64> {
    check_window(window, b, c)?;
    Ok(window
        .iter()
        .zip(c)
        .map(|(snap, cn)| snap.iter().zip(b).map(|(x, bf)| bf.conj() * x).sum::<C64>() * cn.conj())
        .sum())
}

/// Unnormalized single-anchor spectrum `|bᴴ H c*|²`.
pub fn bartlett_direct(window: &[Vec<C64>], b: &[C64], c: &[C64]) -> Result<f64> {
    Ok(bartlett_response(window, b, c)?.norm_sqr())
}

/// Normalized single-anchor spectrum built the long way:
/// `(c ⊗ b)ᴴ vec(H) vec(H)ᴴ (c ⊗ b) / (N_f N_ν)`.
///
/// Forms an `N_f N_ν` square matrix, so it is meant for small windows.
pub fn bartlett_kronecker(window: &[Vec<C64>], b: &[C64], c: &[C64]) -> Result<f64> {
    check_window(window, b, c)?;
    let (nf, nn) = (b.len(), c.len());
    let bv = DMatrix::from_column_slice(nf, 1, b);
    let cv = DMatrix::from_column_slice(nn, 1, c);
    let a = cv.kronecker(&bv);
    // vec of the N_f x N_ν matrix: columns are snapshots
    let x = DMatrix::from_iterator(nf * nn, 1, window.iter().flat_map(|s| s.iter().copied()));
    let r = &x * x.adjoint();
    let v = (a.adjoint() * r * &a)[(0, 0)];
    Ok(v.re / (nf * nn) as f64)
}

/// Direct multi-anchor spectrum; `windows[h]` is the window of anchor `h`.
pub fn bartlett_spectrum(
    windows: &[Vec<Vec<C64>>],
    p: [f64; 2],
    v: [f64; 2],
    mode: BartlettMode,
    ctx: &PositioningContext,
) -> Result<f64> {
    if windows.len() != ctx.anchors.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} windows for {} anchors",
            windows.len(),
            ctx.anchors.len()
        )));
    }
    let n_nu = windows.first().map_or(0, |w| w.len());
    let mut total = 0.0;
    for (h, w) in windows.iter().enumerate() {
        if w.len() != n_nu {
            return Err(Error::DimensionMismatch("anchor windows differ in length".into()));
        }
        let b = match mode {
            BartlettMode::DopplerOnly => vec![C64::new(1.0, 0.0); ctx.freqs_hz.len()],
            _ => temporal_steering(p, h, ctx)?,
        };
        let c = match mode {
            BartlettMode::DelayOnly => vec![C64::new(1.0, 0.0); n_nu],
            _ => doppler_steering(p, v, h, n_nu, ctx)?,
        };
        total += bartlett_direct(w, &b, &c)?;
    }
    Ok(total)
}

/// Uplink windows of every anchor from `start`, in anchor order.
pub fn uplink_windows(
    tensor: &crate::scene::SnapshotTensor,
    num_anchors: usize,
    agent: usize,
    start: usize,
    n_nu: usize,
) -> Result<Vec<Vec<Vec<C64>>>> {
    (0..num_anchors)
        .map(|h| {
            let li = tensor.require_link(crate::scene::LinkId::new(h, agent))?;
            tensor.link_window(li, start, n_nu)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ctx_small(anchors: Vec<Vec3>) -> PositioningContext {
        let cfg = SoundingConfig { num_active_subcarriers: 33, num_subcarriers_total: 64, ..Default::default() };
        PositioningContext::new(&cfg, anchors, 0.0)
    }

    fn random_window(rng: &mut ChaCha8Rng, nf: usize, nn: usize) -> Vec<Vec<C64>> {
        (0..nn)
            .map(|_| (0..nf).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect())
            .collect()
    }

    /// Window of a single LoS path matching the hypothesis exactly.
    fn los_window(alpha: C64, tau: f64, nu: f64, ctx: &PositioningContext, n_nu: usize) -> Vec<Vec<C64>> {
        (0..n_nu)
            .map(|n| {
                let t = n as f64 / ctx.rate_hz;
                ctx.freqs_hz
                    .iter()
                    .map(|f| alpha * C64::from_polar(1.0, -2.0 * PI * f * tau + 2.0 * PI * nu * t))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn one_microsecond_gives_half_radian_per_bin() {
        let ctx = PositioningContext::new(&SoundingConfig::default(), vec![[299.792458, 0.0, 0.0]], 0.0);
        let b = temporal_steering([0.0, 0.0], 0, &ctx).unwrap();
        let step = (b[1] * b[0].conj()).arg();
        // 2π · 78.125 kHz · 1 µs
        assert_abs_diff_eq!(step, -0.4908738521234052, epsilon = 1e-9);
        assert!(b.iter().all(|x| (x.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn coincident_anchor_is_an_error() {
        let ctx = ctx_small(vec![[1.0, 2.0, 0.0]]);
        assert!(matches!(temporal_steering([1.0, 2.0], 0, &ctx), Err(Error::CoincidentPoints)));
        assert!(doppler_steering([1.0, 2.0], [1.0, 0.0], 0, 10, &ctx).is_err());
    }

    #[test]
    fn doppler_steering_cases() {
        let ctx = PositioningContext::new(&SoundingConfig::default(), vec![[10.0, 0.0, 0.0]], 0.0);
        let still = doppler_steering([0.0, 0.0], [0.0, 0.0], 0, 20, &ctx).unwrap();
        assert!(still.iter().all(|x| (x - C64::new(1.0, 0.0)).norm() < 1e-15));
        let tangential = doppler_steering([0.0, 0.0], [0.0, 0.77], 0, 20, &ctx).unwrap();
        assert!(tangential.iter().all(|x| (x - C64::new(1.0, 0.0)).norm() < 1e-12));
        // 0.77 m/s towards the anchor: f_c v / c0
        let nu = ctx.doppler_hz([0.0, 0.0], [0.77, 0.0], 0).unwrap();
        assert_abs_diff_eq!(nu, 9.631663248846641, epsilon = 1e-9);
        let c = doppler_steering([0.0, 0.0], [0.77, 0.0], 0, 20, &ctx).unwrap();
        assert_abs_diff_eq!((c[1] * c[0].conj()).arg(), 2.0 * PI * nu / 200.0, epsilon = 1e-12);
    }

    #[test]
    fn matched_los_gives_coherent_sum() {
        let ctx = ctx_small(vec![[3.0, 4.0, 2.0]]);
        let (p, v) = ([0.5, -1.0], [0.6, 0.4]);
        let n_nu = 40;
        let alpha = C64::new(0.3, -0.2);
        let tau = ctx.delay_s(p, 0).unwrap();
        let nu = ctx.doppler_hz(p, v, 0).unwrap();
        let w = los_window(alpha, tau, nu, &ctx, n_nu);
        let got = bartlett_spectrum(&[w.clone()], p, v, BartlettMode::Joint, &ctx).unwrap();
        let nf = ctx.freqs_hz.len() as f64;
        let want = alpha.norm_sqr() * (nf * n_nu as f64).powi(2);
        assert_abs_diff_eq!(got / want, 1.0, epsilon = 1e-10);

        // a Doppler mismatch of one Fourier bin hits the first Dirichlet null
        let b = temporal_steering(p, 0, &ctx).unwrap();
        let df = ctx.rate_hz / n_nu as f64;
        let c: Vec<C64> = (0..n_nu).map(|n| C64::from_polar(1.0, 2.0 * PI * (nu + df) * n as f64 / ctx.rate_hz)).collect();
        assert!(bartlett_direct(&w, &b, &c).unwrap() / want < 1e-20);
        // half a bin: |sin(π/2) / (N sin(π/2N))|²
        let c: Vec<C64> = (0..n_nu).map(|n| C64::from_polar(1.0, 2.0 * PI * (nu + df / 2.0) * n as f64 / ctx.rate_hz)).collect();
        let k = 1.0 / (n_nu as f64 * (PI / (2.0 * n_nu as f64)).sin());
        assert_abs_diff_eq!(bartlett_direct(&w, &b, &c).unwrap() / want, k * k, epsilon = 1e-9);
    }

    #[test]
    fn kronecker_form_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (nf, nn) = (12, 7);
        for _ in 0..20 {
            let w = random_window(&mut rng, nf, nn);
            let b: Vec<C64> = (0..nf).map(|_| C64::from_polar(1.0, rng.random_range(0.0..6.3))).collect();
            let c: Vec<C64> = (0..nn).map(|_| C64::from_polar(1.0, rng.random_range(0.0..6.3))).collect();
            let d = bartlett_direct(&w, &b, &c).unwrap();
            let k = bartlett_kronecker(&w, &b, &c).unwrap() * (nf * nn) as f64;
            assert!((d - k).abs() <= 1e-9 * d.abs().max(1e-300), "{d} vs {k}");
        }
    }

    #[test]
    fn mismatched_windows_rejected() {
        let ctx = ctx_small(vec![[3.0, 4.0, 2.0], [1.0, 0.0, 2.0]]);
        let nf = ctx.freqs_hz.len();
        let a = vec![vec![C64::new(1.0, 0.0); nf]; 5];
        let b = vec![vec![C64::new(1.0, 0.0); nf]; 6];
        assert!(bartlett_spectrum(&[a.clone(), b], [0.0, 0.0], [0.0, 0.0], BartlettMode::Joint, &ctx).is_err());
        assert!(bartlett_spectrum(&[a], [0.0, 0.0], [0.0, 0.0], BartlettMode::Joint, &ctx).is_err());
    }

    proptest! {
        #[test]
        fn anchor_phase_rotation_is_invisible(seed in 0u64..1000, eta in proptest::collection::vec(0.0f64..6.3, 2),
                                             px in -3.0f64..3.0, py in -3.0f64..3.0, vx in -1.0f64..1.0, vy in -1.0f64..1.0) {
            let ctx = ctx_small(vec![[5.0, 4.0, 2.0], [-4.0, 1.0, 2.0]]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let nf = ctx.freqs_hz.len();
            let ws: Vec<_> = (0..2).map(|_| random_window(&mut rng, nf, 9)).collect();
            let rotated: Vec<Vec<Vec<C64>>> = ws.iter().zip(&eta).map(|(w, e)| {
                let r = C64::from_polar(1.0, *e);
                w.iter().map(|s| s.iter().map(|x| x * r).collect()).collect()
            }).collect();
            let a = bartlett_spectrum(&ws, [px, py], [vx, vy], BartlettMode::Joint, &ctx).unwrap();
            let b = bartlett_spectrum(&rotated, [px, py], [vx, vy], BartlettMode::Joint, &ctx).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1e-12));
        }
    }
}
