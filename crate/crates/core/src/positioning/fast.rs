use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::f64::consts::PI;

use super::{BartlettMode, PositioningContext};
use crate::error::{Error, Result};

/// Uniform delay grid on which snapshots are pre-transformed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayGrid {
    pub tau_min_s: f64,
    pub step_s: f64,
    pub count: usize,
}

impl Default for DelayGrid {
    /// -100 ns to 300 ns in 2 ns steps; covers every LoS range in the hall.
    fn default() -> Self {
        Self { tau_min_s: -100e-9, step_s: 2e-9, count: 201 }
    }
}

impl DelayGrid {
    pub fn tau_max_s(&self) -> f64 {
        self.tau_min_s + self.step_s * (self.count - 1) as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.count < 2 || !(self.step_s > 0.0) || !self.tau_min_s.is_finite() {
            return Err(Error::InvalidParameter("delay grid needs two or more points and a positive step".into()));
        }
        Ok(())
    }
}

/// `D(τ_m) = Σ_f H_f exp(j2π f τ_m)` on a [`DelayGrid`], i.e. `bᴴ H` for
/// every grid delay at once.
#[derive(Debug, Clone)]
pub struct DelayTransform {
    pub grid: DelayGrid,
    num_bins: usize,
    kernel: Vec<C64>,
}

impl DelayTransform {
    pub fn new(grid: DelayGrid, freqs_hz: &[f64]) -> Result<Self> {
        grid.validate()?;
        let nf = freqs_hz.len();
        let mut kernel = Vec::with_capacity(grid.count * nf);
        for m in 0..grid.count {
            let tau = grid.tau_min_s + grid.step_s * m as f64;
            kernel.extend(freqs_hz.iter().map(|f| C64::from_polar(1.0, 2.0 * PI * f * tau)));
        }
        Ok(Self { grid, num_bins: nf, kernel })
    }

    pub fn apply(&self, h: &[C64]) -> Result<Vec<C64>> {
        if h.len() != self.num_bins {
            return Err(Error::DimensionMismatch(format!("snapshot has {} bins, expected {}", h.len(), self.num_bins)));
        }
        Ok(self.kernel.chunks_exact(self.num_bins).map(|row| row.iter().zip(h).map(|(k, x)| k * x).sum()).collect())
    }

    /// Grid cell and linear weight for `tau`; `None` outside the grid.
    fn locate(&self, tau: f64) -> Option<(usize, f64)> {
        let u = (tau - self.grid.tau_min_s) / self.grid.step_s;
        if !(u >= 0.0) || u > (self.grid.count - 1) as f64 {
            return None;
        }
        let i = (u.floor() as usize).min(self.grid.count - 2);
        Some((i, u - i as f64))
    }
}

/// Sliding window of delay-transformed uplink snapshots, one ring per anchor.
///
/// Responses between grid delays are linearly interpolated; a delay outside
/// the grid contributes nothing.
#[derive(Debug, Clone)]
pub struct WindowBank {
    transform: DelayTransform,
    n_nu: usize,
    rate_hz: f64,
    rings: Vec<VecDeque<Vec<C64>>>,
}

impl WindowBank {
    pub fn new(ctx: &PositioningContext, grid: DelayGrid, n_nu: usize) -> Result<Self> {
        if n_nu == 0 {
            return Err(Error::InvalidWindow("window length must be positive".into()));
        }
        Ok(Self {
            transform: DelayTransform::new(grid, &ctx.freqs_hz)?,
            n_nu,
            rate_hz: ctx.rate_hz,
            rings: vec![VecDeque::with_capacity(n_nu + 1); ctx.anchors.len()],
        })
    }

    /// Fills the bank from windows given snapshot by snapshot per anchor.
    pub fn from_windows(ctx: &PositioningContext, grid: DelayGrid, windows: &[Vec<Vec<C64>>]) -> Result<Self> {
        let n_nu = windows.first().map_or(0, |w| w.len());
        if windows.len() != ctx.anchors.len() || windows.iter().any(|w| w.len() != n_nu) {
            return Err(Error::DimensionMismatch("one equally long window per anchor is required".into()));
        }
        let mut bank = Self::new(ctx, grid, n_nu)?;
        for n in 0..n_nu {
            let snaps: Vec<&[C64]> = windows.iter().map(|w| w[n].as_slice()).collect();
            bank.push(&snaps)?;
        }
        Ok(bank)
    }

    pub fn n_nu(&self) -> usize {
        self.n_nu
    }

    pub fn is_full(&self) -> bool {
        self.rings.iter().all(|r| r.len() == self.n_nu)
    }

    /// Appends one snapshot per anchor, dropping the oldest once full.
    pub fn push(&mut self, snapshots: &[&[C64]]) -> Result<()> {
        if snapshots.len() != self.rings.len() {
            return Err(Error::DimensionMismatch(format!("{} snapshots for {} anchors", snapshots.len(), self.rings.len())));
        }
        for (ring, s) in self.rings.iter_mut().zip(snapshots) {
            if ring.len() == self.n_nu {
                ring.pop_front();
            }
            ring.push_back(self.transform.apply(s)?);
        }
        Ok(())
    }

    /// `bᴴ H c*` of anchor `h` for delay `tau_s` and Doppler `nu_hz`.
    pub fn response(&self, h: usize, tau_s: f64, nu_hz: f64) -> C64 {
        let Some((i, w)) = self.transform.locate(tau_s) else {
            return C64::new(0.0, 0.0);
        };
        let step = C64::from_polar(1.0, -2.0 * PI * nu_hz / self.rate_hz);
        let mut ph = C64::new(1.0, 0.0);
        let mut acc = C64::new(0.0, 0.0);
        for d in &self.rings[h] {
            acc += (d[i] * (1.0 - w) + d[i + 1] * w) * ph;
            ph *= step;
        }
        acc
    }

    /// Multi-anchor spectrum for the hypothesis `(p, v)` at the window centre.
    pub fn power(&self, ctx: &PositioningContext, p: [f64; 2], v: [f64; 2], mode: BartlettMode) -> Result<f64> {
        let mut total = 0.0;
        for h in 0..self.rings.len() {
            let tau = match mode {
                BartlettMode::DopplerOnly => 0.0,
                _ => ctx.delay_s(p, h)?,
            };
            let nu = match mode {
                BartlettMode::DelayOnly => 0.0,
                _ => ctx.doppler_hz(p, v, h)?,
            };
            total += self.response(h, tau, nu).norm_sqr();
        }
        Ok(total)
    }
}
