//! Radio and schedule constants of a sounding campaign.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SPEED_OF_LIGHT;

/// All radio and TDMA constants of one sounding campaign.
///
/// Defaults reproduce the measured industrial campaign: 13 antennas at
/// 3.75 GHz, 449 active of 512 subcarriers spaced 78.125 kHz, four
/// repetitions per slot and a 200 Hz snapshot rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SoundingConfig {
    pub carrier_frequency_hz: f64,
    pub subcarrier_spacing_hz: f64,
    pub num_subcarriers_total: usize,
    pub num_active_subcarriers: usize,
    pub repetitions_per_slot: usize,
    pub snapshot_rate_hz: f64,
    pub num_antennas: usize,
    pub tx_power_dbm: f64,
    pub quiet_gap_ticks: u64,
    pub fpga_tick_rate_hz: f64,
    pub dac_backoff: f64,
}

impl Default for SoundingConfig {
    fn default() -> Self {
        Self {
            carrier_frequency_hz: 3.75e9,
            subcarrier_spacing_hz: 78.125e3,
            num_subcarriers_total: 512,
            num_active_subcarriers: 449,
            repetitions_per_slot: 4,
            snapshot_rate_hz: 200.0,
            num_antennas: 13,
            tx_power_dbm: 19.0,
            // 4334.4 us of silence at 120 MHz
            quiet_gap_ticks: 520_128,
            fpga_tick_rate_hz: 120e6,
            dac_backoff: 0.9,
        }
    }
}

impl SoundingConfig {
    /// Duration of one OFDM reference symbol, `1 / Δf`.
    pub fn signal_length_s(&self) -> f64 {
        1.0 / self.subcarrier_spacing_hz
    }

    /// One TDMA slot: `R` repetitions of the reference symbol.
    pub fn slot_duration_s(&self) -> f64 {
        self.repetitions_per_slot as f64 * self.signal_length_s()
    }

    /// Active part of a snapshot: all antennas transmit once.
    pub fn snapshot_length_s(&self) -> f64 {
        self.num_antennas as f64 * self.slot_duration_s()
    }

    pub fn snapshot_period_s(&self) -> f64 {
        1.0 / self.snapshot_rate_hz
    }

    pub fn quiet_gap_s(&self) -> f64 {
        self.quiet_gap_ticks as f64 / self.fpga_tick_rate_hz
    }

    /// Sampled bandwidth `N_sc · Δf`.
    pub fn bandwidth_hz(&self) -> f64 {
        self.num_subcarriers_total as f64 * self.subcarrier_spacing_hz
    }

    /// Bandwidth spanned by the active subcarriers, `N_f · Δf`.
    pub fn active_bandwidth_hz(&self) -> f64 {
        self.num_active_subcarriers as f64 * self.subcarrier_spacing_hz
    }

    /// Index of the (nulled) DC bin within the active subcarriers.
    pub fn dc_index(&self) -> usize {
        self.num_active_subcarriers / 2
    }

    /// Baseband frequency of active bin `k`.
    pub fn subcarrier_frequency(&self, k: usize) -> f64 {
        (k as f64 - self.dc_index() as f64) * self.subcarrier_spacing_hz
    }

    pub fn subcarrier_frequencies(&self) -> Vec<f64> {
        (0..self.num_active_subcarriers).map(|k| self.subcarrier_frequency(k)).collect()
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency_hz
    }

    /// Largest speed whose Doppler stays within `±f_rep / 2`.
    pub fn max_velocity_mps(&self) -> f64 {
        self.wavelength_m() * self.snapshot_rate_hz / 2.0
    }

    /// Largest delay that is unambiguous on the subcarrier grid.
    pub fn max_delay_s(&self) -> f64 {
        self.signal_length_s()
    }

    pub fn num_links(&self) -> usize {
        self.num_antennas * (self.num_antennas - 1)
    }

    /// Checks the structural invariants. `agc` tightens the repetition count.
    pub fn validate(&self, agc: bool) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let positive = [
            ("carrier_frequency_hz", self.carrier_frequency_hz),
            ("subcarrier_spacing_hz", self.subcarrier_spacing_hz),
            ("snapshot_rate_hz", self.snapshot_rate_hz),
            ("fpga_tick_rate_hz", self.fpga_tick_rate_hz),
            ("dac_backoff", self.dac_backoff),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if self.dac_backoff > 1.0 {
            return bad(format!("dac_backoff must not exceed 1, got {}", self.dac_backoff));
        }
        if self.num_antennas < 2 {
            return bad(format!("need at least 2 antennas, got {}", self.num_antennas));
        }
        if self.num_active_subcarriers == 0 || self.num_active_subcarriers % 2 == 0 {
            return bad(format!(
                "active subcarriers must be odd and centered on DC, got {}",
                self.num_active_subcarriers
            ));
        }
        if self.num_active_subcarriers > self.num_subcarriers_total {
            return bad(format!(
                "{} active subcarriers exceed {} total",
                self.num_active_subcarriers, self.num_subcarriers_total
            ));
        }
        let min_reps = if agc { 3 } else { 2 };
        if self.repetitions_per_slot < min_reps {
            return bad(format!(
                "need at least {min_reps} repetitions per slot, got {}",
                self.repetitions_per_slot
            ));
        }
        let duty = self.snapshot_rate_hz * self.snapshot_length_s();
        if duty > 1.0 + 1e-12 {
            return bad(format!("snapshot length exceeds the snapshot period (duty {duty:.3})"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn default_timing_matches_campaign_table() {
        let c = SoundingConfig::default();
        c.validate(true).unwrap();
        assert_abs_diff_eq!(c.signal_length_s(), 12.8e-6, epsilon = 1e-15);
        assert_abs_diff_eq!(c.snapshot_length_s(), 665.6e-6, epsilon = 1e-12);
        assert_abs_diff_eq!(c.snapshot_period_s(), 5e-3, epsilon = 1e-15);
        assert_abs_diff_eq!(c.quiet_gap_s(), 4334.4e-6, epsilon = 1e-12);
        assert_abs_diff_eq!(c.bandwidth_hz(), 40e6, epsilon = 1e-6);
        assert!((c.max_velocity_mps() - 8.0).abs() < 0.05);
        assert_eq!(c.num_links(), 156);
        assert_eq!(c.dc_index(), 224);
        assert_eq!(c.subcarrier_frequency(224), 0.0);
    }

    #[test]
    fn rejects_even_active_count_and_short_slots() {
        let mut c = SoundingConfig { num_active_subcarriers: 448, ..Default::default() };
        assert!(c.validate(false).is_err());
        c.num_active_subcarriers = 449;
        c.repetitions_per_slot = 2;
        assert!(c.validate(false).is_ok());
        assert!(c.validate(true).is_err());
    }

    #[test]
    fn rejects_overlong_snapshot() {
        let c = SoundingConfig { snapshot_rate_hz: 2000.0, ..Default::default() };
        assert!(c.validate(false).is_err());
    }
}
