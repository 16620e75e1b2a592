//! Super-resolution Doppler spectral density: subspace estimates (MUSIC and
//! ESPRIT) over sliding snapshot windows of one link.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{los_geometry, Vec3};
use crate::scene::{LinkId, SnapshotTensor, TrajectoryPoint};

pub type CMatrix = DMatrix<Complex64>;

/// Condition number of `E1ᴴE1` above which ESPRIT estimates are flagged.
pub const ESPRIT_CONDITION_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DopplerParams {
    pub window: usize,
    pub hop: usize,
    /// Subarray length; `⌊2 N_w / 3⌋` when absent.
    pub subarray: Option<usize>,
    pub model_order: usize,
    pub grid_points: usize,
}

impl Default for DopplerParams {
    fn default() -> Self {
        Self { window: 150, hop: 25, subarray: None, model_order: 2, grid_points: 1024 }
    }
}

impl DopplerParams {
    pub fn subarray_len(&self) -> usize {
        self.subarray.unwrap_or(2 * self.window / 3)
    }
}

/// Forward-backward smoothed covariance of the per-subcarrier time series.
///
/// `window[t][f]` is snapshot `t`, bin `f`. Every subcarrier contributes all
/// its overlapping length-`l_sub` subarrays.
pub fn doppler_covariance(window: &[Vec<Complex64>], l_sub: usize) -> Result<CMatrix> {
    let nw = window.len();
    if l_sub == 0 || nw < l_sub {
        return Err(Error::InvalidWindow(format!("window of {nw} snapshots is shorter than subarray {l_sub}")));
    }
    let nf = window[0].len();
    if nf == 0 || window.iter().any(|s| s.len() != nf) {
        return Err(Error::DimensionMismatch("window snapshots must share one bin count".into()));
    }
    // Gram matrix over subcarriers, then sum its diagonals into the subarray covariance
    let mut g = vec![Complex64::new(0.0, 0.0); nw * nw];
    for a in 0..nw {
        for b in a..nw {
            let v: Complex64 = window[a].iter().zip(&window[b]).map(|(x, y)| x * y.conj()).sum();
            g[a * nw + b] = v;
            g[b * nw + a] = v.conj();
        }
    }
    let subarrays = nw - l_sub + 1;
    let scale = 1.0 / (subarrays * nf) as f64;
    let mut r = CMatrix::zeros(l_sub, l_sub);
    for a in 0..l_sub {
        for b in 0..l_sub {
            let s: Complex64 = (0..subarrays).map(|i| g[(i + a) * nw + i + b]).sum();
            r[(a, b)] = s * scale;
        }
    }
    let l = l_sub - 1;
    let fb = CMatrix::from_fn(l_sub, l_sub, |a, b| (r[(a, b)] + r[(l - a, l - b)].conj()) * 0.5);
    // exact Hermitian symmetry
    Ok(CMatrix::from_fn(l_sub, l_sub, |a, b| (fb[(a, b)] + fb[(b, a)].conj()) * 0.5))
}

/// Eigenvalues in descending order with matching eigenvectors as columns.
fn sorted_eigen(cov: &CMatrix) -> Result<(Vec<f64>, CMatrix)> {
    let eig = SymmetricEigen::try_new(cov.clone(), 1e-14, 0).ok_or_else(|| Error::Degenerate("eigen solver did not converge".into()))?;
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite eigenvalue".into()));
    }
    let mut order: Vec<usize> = (0..cov.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = CMatrix::from_fn(cov.nrows(), cov.ncols(), |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((vals, vecs))
}

fn check_order(cov: &CMatrix, k: usize) -> Result<()> {
    if k == 0 || k >= cov.nrows() {
        return Err(Error::InvalidParameter(format!("model order {k} must lie in 1..{}", cov.nrows())));
    }
    Ok(())
}

fn steering(l: usize, nu_hz: f64, rate_hz: f64) -> DVector<Complex64> {
    DVector::from_fn(l, |i, _| Complex64::from_polar(1.0, 2.0 * PI * nu_hz * i as f64 / rate_hz))
}

/// `points` frequencies evenly covering `[-rate/2, rate/2)`.
pub fn doppler_grid(rate_hz: f64, points: usize) -> Vec<f64> {
    (0..points).map(|i| -rate_hz / 2.0 + rate_hz * i as f64 / points as f64).collect()
}

/// MUSIC pseudo-spectrum `1 / ‖E_nᴴ a(ν)‖²` on `grid`.
pub fn music_spectrum(cov: &CMatrix, k: usize, rate_hz: f64, grid: &[f64]) -> Result<Vec<f64>> {
    check_order(cov, k)?;
    let (_, vecs) = sorted_eigen(cov)?;
    let l = cov.nrows();
    let es = vecs.columns(0, k).into_owned();
    let esh = es.adjoint();
    Ok(grid
        .iter()
        .map(|&nu| {
            let a = steering(l, nu, rate_hz);
            // ‖E_nᴴa‖² = ‖a‖² - ‖E_sᴴa‖² for orthonormal eigenvectors
            let proj = (&esh * &a).norm_squared();
            1.0 / (l as f64 - proj).max(l as f64 * 1e-15)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EspritTone {
    pub doppler_hz: f64,
    /// Power of the tone from the signal-subspace fit.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EspritEstimate {
    /// Sorted by descending weight.
    pub tones: Vec<EspritTone>,
    pub condition: f64,
    pub flagged: bool,
}

/// Least-squares ESPRIT on the shift structure of the signal subspace.
pub fn esprit(cov: &CMatrix, k: usize, rate_hz: f64) -> Result<EspritEstimate> {
    check_order(cov, k)?;
    let (vals, vecs) = sorted_eigen(cov)?;
    let l = cov.nrows();
    let es = vecs.columns(0, k).into_owned();
    let e1 = es.rows(0, l - 1).into_owned();
    let e2 = es.rows(1, l - 1).into_owned();
    let gram = e1.adjoint() * &e1;
    let sv = gram.singular_values();
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let inv = gram.clone().try_inverse().ok_or_else(|| Error::Degenerate("singular ESPRIT normal equations".into()))?;
    let phi = inv * e1.adjoint() * e2;
    let schur = Schur::try_new(phi, 1e-14, 0).ok_or_else(|| Error::Degenerate("Schur iteration did not converge".into()))?;
    let lambdas = schur.eigenvalues().ok_or_else(|| Error::Degenerate("ESPRIT eigenvalues unavailable".into()))?;
    let freqs: Vec<f64> = lambdas.iter().map(|z| z.arg() * rate_hz / (2.0 * PI)).collect();

    // tone powers: (AᴴA)⁻¹ Aᴴ (R - σ²I) A (AᴴA)⁻¹
    let sigma2 = vals[k..].iter().sum::<f64>() / (l - k) as f64;
    let a = CMatrix::from_fn(l, k, |r, c| Complex64::from_polar(1.0, 2.0 * PI * freqs[c] * r as f64 / rate_hz));
    let r_sig = cov - CMatrix::identity(l, l) * Complex64::new(sigma2, 0.0);
    let weights = match (a.adjoint() * &a).try_inverse() {
        Some(ai) => {
            let p = &ai * a.adjoint() * r_sig * &a * &ai;
            (0..k).map(|i| p[(i, i)].re).collect()
        }
        None => vec![f64::NAN; k],
    };
    let mut tones: Vec<EspritTone> = freqs.iter().zip(weights).map(|(&doppler_hz, weight)| EspritTone { doppler_hz, weight }).collect();
    tones.sort_by(|x, y| y.weight.total_cmp(&x.weight));
    let flagged = !(condition < ESPRIT_CONDITION_LIMIT) || tones.iter().any(|t| !t.weight.is_finite());
    Ok(EspritEstimate { tones, condition, flagged })
}

/// Sliding-window DSD of one link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsdResult {
    pub link: LinkId,
    pub params: DopplerParams,
    pub rate_hz: f64,
    pub grid_hz: Vec<f64>,
    /// Window centre times.
    pub time_s: Vec<f64>,
    /// MUSIC pseudo-spectrum per window, scaled to a unit maximum.
    pub music: Vec<Vec<f64>>,
    pub esprit: Vec<EspritEstimate>,
    pub los_doppler_hz: Vec<Option<f64>>,
}

impl DsdResult {
    /// Grid frequency of the MUSIC maximum per window; ties go to the lower frequency.
    pub fn music_peaks(&self) -> Vec<f64> {
        self.music
            .iter()
            .map(|s| {
                let i = s.iter().enumerate().fold(0, |b, (i, &v)| if v > s[b] { i } else { b });
                self.grid_hz[i]
            })
            .collect()
    }

    /// Matrix layout: one row per window, one column per grid frequency.
    pub fn music_csv(&self) -> String {
        let mut s = String::from("t_s,los_doppler_hz");
        for f in &self.grid_hz {
            s.push_str(&format!(",{f}"));
        }
        s.push('\n');
        for (w, row) in self.music.iter().enumerate() {
            s.push_str(&format!("{},{}", self.time_s[w], self.los_doppler_hz[w].map(|x| x.to_string()).unwrap_or_default()));
            for v in row {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }

    pub fn esprit_csv(&self) -> String {
        let mut s = String::from("t_s,rank,doppler_hz,weight,flagged,los_doppler_hz\n");
        for (w, e) in self.esprit.iter().enumerate() {
            for (rank, t) in e.tones.iter().enumerate() {
                s.push_str(&format!(
                    "{},{rank},{},{},{},{}\n",
                    self.time_s[w],
                    t.doppler_hz,
                    t.weight,
                    e.flagged,
                    self.los_doppler_hz[w].map(|x| x.to_string()).unwrap_or_default()
                ));
            }
        }
        s
    }
}

/// Geometric LoS Doppler of `link` at time `t`, when the geometry is known.
pub fn los_doppler_at(link: LinkId, t: f64, anchors: &[Vec3], trajectory: &[TrajectoryPoint], fc: f64) -> Option<f64> {
    let agent = anchors.len();
    let anchor = if link.tx == agent && link.rx < agent {
        link.rx
    } else if link.rx == agent && link.tx < agent {
        link.tx
    } else {
        return Some(0.0);
    };
    let i = trajectory.partition_point(|p| p.t <= t);
    let (p, v) = if i == 0 {
        (trajectory.first()?.position, trajectory[0].velocity)
    } else if i == trajectory.len() {
        (trajectory[i - 1].position, trajectory[i - 1].velocity)
    } else {
        let (a, b) = (trajectory[i - 1], trajectory[i]);
        let w = (t - a.t) / (b.t - a.t);
        (
            [0, 1, 2].map(|k| a.position[k] + w * (b.position[k] - a.position[k])),
            [0, 1, 2].map(|k| a.velocity[k] + w * (b.velocity[k] - a.velocity[k])),
        )
    };
    los_geometry(&p, &anchors[anchor], &v, fc).ok().map(|(_, nu)| nu)
}

pub fn dsd_sweep(
    tensor: &SnapshotTensor,
    link: LinkId,
    params: &DopplerParams,
    geometry: Option<(&[Vec3], &[TrajectoryPoint])>,
) -> Result<DsdResult> {
    let li = tensor.require_link(link)?;
    let nw = params.window;
    if params.hop == 0 || nw > tensor.num_snapshots() {
        return Err(Error::InvalidWindow(format!(
            "window {nw} with hop {} over {} snapshots",
            params.hop,
            tensor.num_snapshots()
        )));
    }
    let l = params.subarray_len();
    if params.model_order == 0 || params.model_order >= l || l > nw {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= K < L_sub <= N_w, got K = {}, L_sub = {l}, N_w = {nw}",
            params.model_order
        )));
    }
    let rate = 1.0 / tensor.link_interval_s(li);
    let grid = doppler_grid(rate, params.grid_points);
    let starts: Vec<usize> = (0..=tensor.num_snapshots() - nw).step_by(params.hop).collect();
    let ts = tensor.link_timestamps(li);
    let per_window: Vec<(Vec<f64>, EspritEstimate)> = starts
        .par_iter()
        .map(|&s| -> Result<_> {
            let window = tensor.link_window(li, s, nw)?;
            let cov = doppler_covariance(&window, l)?;
            let mut m = music_spectrum(&cov, params.model_order, rate, &grid)?;
            let peak = m.iter().copied().fold(0.0, f64::max);
            if peak > 0.0 {
                m.iter_mut().for_each(|v| *v /= peak);
            }
            Ok((m, esprit(&cov, params.model_order, rate)?))
        })
        .collect::<Result<_>>()?;
    let time_s: Vec<f64> = starts.iter().map(|&s| (ts[s] + ts[s + nw - 1]) / 2.0).collect();
    let fc = tensor.config.carrier_frequency_hz;
    let los_doppler_hz = time_s
        .iter()
        .map(|&t| geometry.and_then(|(a, tr)| los_doppler_at(link, t, a, tr, fc)))
        .collect();
    let (music, esprit) = per_window.into_iter().unzip();
    Ok(DsdResult { link, params: *params, rate_hz: rate, grid_hz: grid, time_s, music, esprit, los_doppler_hz })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    const RATE: f64 = 200.0;

    /// Tones `(amplitude, doppler, delay)` on `nf` bins plus complex noise of variance `noise`.
    fn series(tones: &[(f64, f64, f64)], nw: usize, nf: usize, noise: f64, seed: u64) -> Vec<Vec<Complex64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sd = (noise / 2.0).sqrt();
        (0..nw)
            .map(|t| {
                (0..nf)
                    .map(|f| {
                        let mut x: Complex64 = tones
                            .iter()
                            .map(|&(a, nu, tau)| {
                                Complex64::from_polar(a, 2.0 * PI * nu * t as f64 / RATE - 2.0 * PI * f as f64 * 78.125e3 * tau)
                            })
                            .sum();
                        if noise > 0.0 {
                            let re: f64 = StandardNormal.sample(&mut rng);
                            let im: f64 = StandardNormal.sample(&mut rng);
                            x += Complex64::new(re * sd, im * sd);
                        }
                        x
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn covariance_is_hermitian_and_white_for_noise() {
        let x = series(&[], 60, 64, 1.0, 3);
        let r = doppler_covariance(&x, 20).unwrap();
        assert_eq!(r, r.adjoint());
        for a in 0..20 {
            assert!((r[(a, a)].re - 1.0).abs() < 0.05);
            for b in 0..20 {
                if a != b {
                    assert!(r[(a, b)].norm() < 0.05, "{a},{b}: {}", r[(a, b)]);
                }
            }
        }
        assert!(doppler_covariance(&x, 61).is_err());
    }

    #[test]
    fn single_tone_is_rank_one() {
        let x = series(&[(1.0, 12.5, 30e-9)], 150, 16, 0.0, 0);
        let r = doppler_covariance(&x, 100).unwrap();
        let (vals, _) = sorted_eigen(&r).unwrap();
        let trace: f64 = vals.iter().sum();
        assert!(vals[0] >= 0.99 * trace);
    }

    #[test]
    fn single_tone_music_and_esprit() {
        let x = series(&[(1.0, 12.508, 30e-9)], 150, 16, 0.0, 0);
        let r = doppler_covariance(&x, 100).unwrap();
        let grid = doppler_grid(RATE, 1024);
        let m = music_spectrum(&r, 2, RATE, &grid).unwrap();
        let i = m.iter().enumerate().fold(0, |b, (i, &v)| if v > m[b] { i } else { b });
        assert!((grid[i] - 12.508).abs() <= RATE / 1024.0);
        let e = esprit(&r, 2, RATE).unwrap();
        assert!((e.tones[0].doppler_hz - 12.508).abs() < 0.05, "{:?}", e.tones);
        assert!(e.tones[0].weight > 10.0 * e.tones[1].weight.abs());
        assert!(m.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn conjugate_input_negates_estimates() {
        let x = series(&[(1.0, 7.3, 0.0), (0.5, -20.0, 80e-9)], 90, 16, 0.01, 2);
        let xc: Vec<Vec<Complex64>> = x.iter().map(|s| s.iter().map(|c| c.conj()).collect()).collect();
        let a = esprit(&doppler_covariance(&x, 60).unwrap(), 2, RATE).unwrap();
        let b = esprit(&doppler_covariance(&xc, 60).unwrap(), 2, RATE).unwrap();
        for (ta, tb) in a.tones.iter().zip(&b.tones) {
            assert!((ta.doppler_hz + tb.doppler_hz).abs() < 1e-6);
        }
    }

    #[test]
    fn order_checks() {
        let x = series(&[(1.0, 5.0, 0.0)], 30, 4, 0.0, 0);
        let r = doppler_covariance(&x, 20).unwrap();
        assert!(music_spectrum(&r, 0, RATE, &[0.0]).is_err());
        assert!(esprit(&r, 20, RATE).is_err());
    }

    #[test]
    fn music_argmax_invariant_to_scaling() {
        let x = series(&[(1.0, -33.0, 10e-9)], 60, 8, 0.05, 9);
        let y: Vec<Vec<Complex64>> = x.iter().map(|s| s.iter().map(|c| c * Complex64::new(-3.0, 0.2)).collect()).collect();
        let grid = doppler_grid(RATE, 512);
        let argmax = |v: Vec<f64>| v.iter().enumerate().fold(0, |b, (i, &x)| if x > v[b] { i } else { b });
        let a = argmax(music_spectrum(&doppler_covariance(&x, 40).unwrap(), 2, RATE, &grid).unwrap());
        let b = argmax(music_spectrum(&doppler_covariance(&y, 40).unwrap(), 2, RATE, &grid).unwrap());
        assert_eq!(a, b);
    }
}
