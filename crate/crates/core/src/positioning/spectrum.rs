use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{BartlettMode, PositioningContext, WindowBank};
use crate::error::{Error, Result};
use crate::stats::median;

/// Argmax of the spectrum over a product grid of positions and velocities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEstimate {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub peak: f64,
    /// Median over peak of all evaluated points; near one means a flat,
    /// poorly conditioned spectrum.
    pub flatness: f64,
    pub evaluated: usize,
}

/// Exhaustive search; on ties the smallest product index wins, with
/// positions as the outer and velocities as the inner index.
pub fn grid_estimate(
    bank: &WindowBank,
    ctx: &PositioningContext,
    positions: &[[f64; 2]],
    velocities: &[[f64; 2]],
    mode: BartlettMode,
) -> Result<GridEstimate> {
    if positions.is_empty() || velocities.is_empty() {
        return Err(Error::InvalidParameter("position and velocity grids must be nonempty".into()));
    }
    let values: Vec<Vec<f64>> = positions
        .par_iter()
        .map(|p| velocities.iter().map(|v| bank.power(ctx, *p, *v, mode)).collect::<Result<Vec<f64>>>())
        .collect::<Result<_>>()?;
    let mut best = (0, 0, f64::NEG_INFINITY);
    for (i, row) in values.iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            if x > best.2 {
                best = (i, j, x);
            }
        }
    }
    let flat: Vec<f64> = values.into_iter().flatten().collect();
    let evaluated = flat.len();
    let flatness = match median(flat) {
        Some(m) if best.2 > 0.0 => m / best.2,
        _ => 1.0,
    };
    Ok(GridEstimate { position: positions[best.0], velocity: velocities[best.1], peak: best.2, flatness, evaluated })
}

/// What the two axes of a spectrum dump span.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "domain", rename_all = "snake_case")]
pub enum SpectrumKind {
    /// Axes are x and y position; the velocity is held fixed.
    Position { velocity: [f64; 2] },
    /// Axes are x and y velocity; the position is held fixed.
    Velocity { position: [f64; 2] },
}

/// Two-dimensional spectrum slice for heatmap plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumDump {
    pub kind: SpectrumKind,
    pub mode: BartlettMode,
    pub x_axis: Vec<f64>,
    pub y_axis: Vec<f64>,
    /// First snapshot of the window.
    pub window_start: usize,
    pub window_len: usize,
    /// Row-major, `y` outer: `values[iy * x_axis.len() + ix]`.
    #[serde(skip)]
    pub values: Vec<f64>,
}

impl SpectrumDump {
    pub fn value(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.x_axis.len() + ix]
    }

    pub fn peak(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Peak over median.
    pub fn contrast(&self) -> f64 {
        let m = median(self.values.clone()).unwrap_or(0.0);
        if m > 0.0 {
            self.peak() / m
        } else {
            f64::INFINITY
        }
    }

    /// Writes `<stem>.bin` (little-endian f64 grid) and `<stem>.json` (axes).
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        let bin = dir.join(format!("{stem}.bin"));
        let json = dir.join(format!("{stem}.json"));
        let mut bytes = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(&bin, bytes)?;
        let mut meta = serde_json::to_value(self)?;
        meta["shape"] = serde_json::json!([self.y_axis.len(), self.x_axis.len()]);
        meta["dtype"] = "f64le".into();
        meta["layout"] = "row-major, y outer".into();
        let mut f = std::fs::File::create(&json)?;
        serde_json::to_writer_pretty(&mut f, &meta)?;
        f.write_all(b"\n")?;
        Ok((bin, json))
    }
}

/// Evaluates the spectrum on an `x × y` grid of positions or velocities.
pub fn spectrum_grid(
    bank: &WindowBank,
    ctx: &PositioningContext,
    kind: SpectrumKind,
    mode: BartlettMode,
    x_axis: &[f64],
    y_axis: &[f64],
    window_start: usize,
) -> Result<SpectrumDump> {
    if x_axis.is_empty() || y_axis.is_empty() {
        return Err(Error::InvalidParameter("spectrum axes must be nonempty".into()));
    }
    let rows: Vec<Vec<f64>> = y_axis
        .par_iter()
        .map(|&y| {
            x_axis
                .iter()
                .map(|&x| match kind {
                    SpectrumKind::Position { velocity } => bank.power(ctx, [x, y], velocity, mode),
                    SpectrumKind::Velocity { position } => bank.power(ctx, position, [x, y], mode),
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(SpectrumDump {
        kind,
        mode,
        x_axis: x_axis.to_vec(),
        y_axis: y_axis.to_vec(),
        window_start,
        window_len: bank.n_nu(),
        values: rows.into_iter().flatten().collect(),
    })
}

/// `start, start + step, ...` up to and including `stop` (within rounding).
pub fn axis(start: f64, stop: f64, step: f64) -> Vec<f64> {
    if !(step > 0.0) || stop < start {
        return vec![start];
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| start + step * i as f64).collect()
}
