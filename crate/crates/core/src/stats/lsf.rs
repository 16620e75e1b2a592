use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::TaperSet;
use crate::error::{Error, Result};
use crate::scene::{LinkId, SnapshotTensor};

/// Region geometry shared by every link.
///
/// Region `k` (0-based) covers `M` snapshots starting at `k Δt + ⌈M/2⌉`.
/// Relative indices run over `m' ∈ [-⌊M/2⌋, M - ⌊M/2⌋ - 1]` and `m' = 0`
/// falls on snapshot `k Δt + M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionLayout {
    pub m: usize,
    pub delta_t: usize,
    pub num_regions: usize,
}

impl RegionLayout {
    /// Stride defaults to `⌈M/2⌉`, the smallest stride whose last region
    /// still fits the record.
    pub fn new(num_snapshots: usize, m: usize, delta_t: Option<usize>) -> Result<Self> {
        let delta_t = delta_t.unwrap_or(m.div_ceil(2));
        if m == 0 || delta_t == 0 {
            return Err(Error::InvalidWindow("region length and stride must be positive".into()));
        }
        if num_snapshots < m {
            return Err(Error::InvalidWindow(format!("record of {num_snapshots} snapshots is shorter than M = {m}")));
        }
        let layout = Self { m, delta_t, num_regions: (num_snapshots - m) / delta_t };
        if layout.num_regions == 0 {
            return Err(Error::InvalidWindow(format!(
                "no complete region: {num_snapshots} snapshots, M = {m}, stride {delta_t}"
            )));
        }
        let end = layout.start(layout.num_regions - 1) + m;
        if end > num_snapshots {
            return Err(Error::InvalidWindow(format!(
                "last region ends at snapshot {end}, record has {num_snapshots}; use a stride of at least {}",
                m.div_ceil(2)
            )));
        }
        Ok(layout)
    }

    pub fn start(&self, k: usize) -> usize {
        k * self.delta_t + self.m.div_ceil(2)
    }

    /// Snapshot at `m' = 0`.
    pub fn centre(&self, k: usize) -> usize {
        k * self.delta_t + self.m
    }

    pub fn min_doppler_index(&self) -> i64 {
        -((self.m / 2) as i64)
    }
}

/// Local scattering functions of one link, one delay-Doppler map per region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsfStack {
    pub link: LinkId,
    pub layout: RegionLayout,
    /// Delay bins `N`.
    pub n: usize,
    /// Per region, `n × m` values; row `n'`, column `p - p_min`.
    pub regions: Vec<Vec<f64>>,
    pub region_time_s: Vec<f64>,
    /// Snapshot rate of the link, Hz.
    pub link_rate_hz: f64,
    /// Delay resolution `1 / (N Δf)`.
    pub tau_s: f64,
}

impl LsfStack {
    pub fn value(&self, k: usize, delay: usize, doppler: i64) -> f64 {
        let col = (doppler - self.layout.min_doppler_index()) as usize;
        self.regions[k][delay * self.layout.m + col]
    }

    pub fn doppler_hz(&self, p: i64) -> f64 {
        p as f64 * self.link_rate_hz / self.layout.m as f64
    }

    /// Doppler-marginal: `(1/M) Σ_p C`.
    pub fn pdp(&self, k: usize) -> Vec<f64> {
        let m = self.layout.m;
        self.regions[k].chunks(m).map(|row| row.iter().sum::<f64>() / m as f64).collect()
    }

    pub fn total_mass(&self, k: usize) -> f64 {
        self.regions[k].iter().sum()
    }
}

/// Estimates the LSF of one region from `m` consecutive snapshots of `n` bins.
///
/// The 2-D transform is unitary, so the mass of each taper's map equals the
/// energy of the tapered window.
fn region_lsf(window: &[Vec<Complex64>], tapers: &TaperSet, planner: &Plans) -> Vec<f64> {
    let (m, n) = (tapers.m, tapers.n);
    let mut out = vec![0.0; n * m];
    let scale = 1.0 / (n * m) as f64 / tapers.count() as f64;
    let pmin = (m / 2) as i64;
    let mut grid = vec![Complex64::new(0.0, 0.0); m * n];
    let mut col = vec![Complex64::new(0.0, 0.0); m];
    for w in 0..tapers.count() {
        let (u, v) = tapers.pair(w);
        for (mi, row) in grid.chunks_mut(n).enumerate() {
            for (q, x) in row.iter_mut().enumerate() {
                *x = window[mi][q] * (u[mi] * v[q]);
            }
            // frequency → delay
            planner.inverse_n.process(row);
        }
        for d in 0..n {
            for mi in 0..m {
                col[mi] = grid[mi * n + d];
            }
            // time → Doppler
            planner.forward_m.process(&mut col);
            for (pf, z) in col.iter().enumerate() {
                let p = if pf as i64 >= m as i64 - pmin { pf as i64 - m as i64 } else { pf as i64 };
                out[d * m + (p + pmin) as usize] += z.norm_sqr() * scale;
            }
        }
    }
    out
}

struct Plans {
    inverse_n: std::sync::Arc<dyn rustfft::Fft<f64>>,
    forward_m: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

/// LSF of every region of `snapshots` (all snapshots of one link).
pub fn lsf_estimate(snapshots: &[Vec<Complex64>], tapers: &TaperSet, delta_t: Option<usize>) -> Result<(RegionLayout, Vec<Vec<f64>>)> {
    let layout = RegionLayout::new(snapshots.len(), tapers.m, delta_t)?;
    if snapshots.iter().any(|s| s.len() != tapers.n) {
        return Err(Error::DimensionMismatch(format!("snapshots must have N = {} bins", tapers.n)));
    }
    let mut planner = FftPlanner::new();
    let plans = Plans { inverse_n: planner.plan_fft_inverse(tapers.n), forward_m: planner.plan_fft_forward(tapers.m) };
    let regions = (0..layout.num_regions)
        .into_par_iter()
        .map(|k| {
            let s = layout.start(k);
            region_lsf(&snapshots[s..s + layout.m], tapers, &plans)
        })
        .collect();
    Ok((layout, regions))
}

/// LSF stack of one link of a tensor.
pub fn lsf_from_tensor(tensor: &SnapshotTensor, link: LinkId, tapers: &TaperSet, delta_t: Option<usize>) -> Result<LsfStack> {
    let li = tensor.require_link(link)?;
    if tapers.n != tensor.num_bins() {
        return Err(Error::DimensionMismatch(format!("tapers span {} bins, tensor has {}", tapers.n, tensor.num_bins())));
    }
    let snaps: Vec<Vec<Complex64>> = (0..tensor.num_snapshots()).map(|n| tensor.snapshot(li, n)).collect();
    let (layout, regions) = lsf_estimate(&snaps, tapers, delta_t)?;
    let ts = tensor.link_timestamps(li);
    Ok(LsfStack {
        link,
        layout,
        n: tapers.n,
        region_time_s: (0..layout.num_regions).map(|k| ts[layout.centre(k)]).collect(),
        regions,
        link_rate_hz: 1.0 / tensor.link_interval_s(li),
        tau_s: 1.0 / (tapers.n as f64 * tensor.config.subcarrier_spacing_hz),
    })
}

/// `(1/IJ) Σ_w ‖G^w ⊙ H‖²_F` for the window starting at `start`.
pub fn tapered_energy(snapshots: &[Vec<Complex64>], start: usize, tapers: &TaperSet) -> f64 {
    let mut e = 0.0;
    for w in 0..tapers.count() {
        let (u, v) = tapers.pair(w);
        for mi in 0..tapers.m {
            for q in 0..tapers.n {
                e += snapshots[start + mi][q].norm_sqr() * (u[mi] * v[q]).powi(2);
            }
        }
    }
    e / tapers.count() as f64
}
