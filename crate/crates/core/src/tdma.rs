//! Mesh TDMA sounding schedule and a simplified receive-gain model.
//!
//! Every snapshot period each antenna transmits once in its own slot while
//! all others listen, so one period yields all `H_a (H_a - 1)` directed
//! links. The remaining time until the next period is the quiet gap.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::config::SoundingConfig;
use crate::error::{Error, Result};

/// Hardware receive-gain range, dB.
pub const MIN_RX_GAIN_DB: f64 = 0.0;
pub const MAX_RX_GAIN_DB: f64 = 37.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdmaSchedule {
    pub slot_duration_s: f64,
    /// Transmitting antenna of each slot, in time order.
    pub slot_order: Vec<usize>,
    pub snapshot_period_s: f64,
    /// Silence between the last slot and the next period.
    pub quiet_gap_s: f64,
    pub tick_s: f64,
}

/// Builds the default schedule: antennas transmit in index order.
pub fn build_schedule(config: &SoundingConfig) -> Result<TdmaSchedule> {
    build_schedule_with_order(config, (0..config.num_antennas).collect())
}

pub fn build_schedule_with_order(config: &SoundingConfig, slot_order: Vec<usize>) -> Result<TdmaSchedule> {
    if config.num_antennas < 2 {
        return Err(Error::InvalidConfig(format!(
            "a mesh schedule needs at least one receiver, got {} antenna(s)",
            config.num_antennas
        )));
    }
    config.validate(false)?;
    let mut seen = vec![false; config.num_antennas];
    if slot_order.len() != config.num_antennas {
        return Err(Error::InvalidConfig("slot order must list every antenna once".into()));
    }
    for &a in &slot_order {
        if a >= config.num_antennas || seen[a] {
            return Err(Error::InvalidConfig("slot order must be a permutation of antenna indices".into()));
        }
        seen[a] = true;
    }
    let tick_s = 1.0 / config.fpga_tick_rate_hz;
    let period = config.snapshot_period_s();
    let slots = config.snapshot_length_s();
    let needed = slots + config.quiet_gap_s();
    if needed > period + tick_s {
        return Err(Error::ScheduleOverrun { needed_s: needed, period_s: period });
    }
    Ok(TdmaSchedule {
        slot_duration_s: config.slot_duration_s(),
        slot_order,
        snapshot_period_s: period,
        quiet_gap_s: period - slots,
        tick_s,
    })
}

/// One row of the schedule dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotEntry {
    pub slot: usize,
    pub transmitter: usize,
    pub receivers: Vec<usize>,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDump {
    pub snapshot: usize,
    pub snapshot_period_s: f64,
    pub slot_duration_s: f64,
    pub quiet_gap_s: f64,
    pub slots: Vec<SlotEntry>,
}

impl TdmaSchedule {
    pub fn num_antennas(&self) -> usize {
        self.slot_order.len()
    }

    pub fn slot_index(&self, transmitter: usize) -> Option<usize> {
        self.slot_order.iter().position(|&a| a == transmitter)
    }

    /// Measurement time of link `(rx, tx)` in snapshot `n`.
    ///
    /// Only the transmitter's slot matters: all receivers listen simultaneously.
    pub fn link_timestamp(&self, n: usize, transmitter: usize) -> Result<f64> {
        let slot = self
            .slot_index(transmitter)
            .ok_or(Error::InvalidLink { rx: usize::MAX, tx: transmitter })?;
        Ok(n as f64 * self.snapshot_period_s + slot as f64 * self.slot_duration_s)
    }

    pub fn dump(&self, snapshot: usize) -> ScheduleDump {
        let t0 = snapshot as f64 * self.snapshot_period_s;
        let slots = self
            .slot_order
            .iter()
            .enumerate()
            .map(|(slot, &tx)| {
                let start_s = t0 + slot as f64 * self.slot_duration_s;
                SlotEntry {
                    slot,
                    transmitter: tx,
                    receivers: self.slot_order.iter().copied().filter(|&a| a != tx).collect(),
                    start_s,
                    end_s: start_s + self.slot_duration_s,
                }
            })
            .collect();
        ScheduleDump {
            snapshot,
            snapshot_period_s: self.snapshot_period_s,
            slot_duration_s: self.slot_duration_s,
            quiet_gap_s: self.quiet_gap_s,
            slots,
        }
    }
}

/// Declared receiver front-end used by the gain model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgcSettings {
    pub full_scale_amplitude: f64,
    pub min_gain_db: f64,
    pub max_gain_db: f64,
}

impl Default for AgcSettings {
    fn default() -> Self {
        Self { full_scale_amplitude: 1.0, min_gain_db: MIN_RX_GAIN_DB, max_gain_db: MAX_RX_GAIN_DB }
    }
}

/// Receive gain per link (indexed like the caller's link table).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainState {
    pub rx_gain_db: Vec<f64>,
    pub full_scale_amplitude: f64,
}

/// Picks, per link, the largest gain whose predicted peak stays within full scale.
///
/// `previous_peak_power[i]` is the peak per-bin power of link `i` in the
/// previous snapshot, referenced to 0 dB gain; `None` means no history, in
/// which case the maximum gain is used.
pub fn agc_select_gain(previous_peak_power: &[Option<f64>], settings: &AgcSettings) -> GainState {
    let rx_gain_db = previous_peak_power
        .iter()
        .map(|p| match p {
            Some(p) if *p > 0.0 => {
                let g = 20.0 * (settings.full_scale_amplitude / p.sqrt()).log10();
                g.clamp(settings.min_gain_db, settings.max_gain_db)
            }
            _ => settings.max_gain_db,
        })
        .collect();
    GainState { rx_gain_db, full_scale_amplitude: settings.full_scale_amplitude }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Saturated {
    /// Samples after gain and clipping (post-gain units).
    pub samples: Vec<Complex64>,
    pub clipped: bool,
}

/// Applies the receive gain of `link` and clamps magnitudes at full scale.
pub fn apply_saturation(snapshot: &[Complex64], gain: &GainState, link: usize) -> Saturated {
    let g = 10f64.powf(gain.rx_gain_db[link] / 20.0);
    let fs = gain.full_scale_amplitude;
    let mut clipped = false;
    let samples = snapshot
        .iter()
        .map(|&x| {
            let y = x * g;
            let m = y.norm();
            if m > fs * (1.0 + 1e-12) {
                clipped = true;
                y * (fs / m)
            } else {
                y
            }
        })
        .collect();
    Saturated { samples, clipped }
}
