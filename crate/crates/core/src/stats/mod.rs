//! Fading and stationarity statistics: MRT array gain, DPSS multitaper
//! local scattering function, collinearity and stationarity time, power
//! delay profile and rms delay spread.

mod delay_spread;
mod dpss;
mod lsf;
mod mrt;
mod stationarity;

pub use delay_spread::{delay_spread, noise_floor, rms_delay_spread, DelaySpreadResult, NOISE_MARGIN_DB, PEAK_RANGE_DB};
pub use dpss::{concentration, dpss, TaperSet};
pub use lsf::{lsf_estimate, lsf_from_tensor, tapered_energy, LsfStack, RegionLayout};
pub use mrt::{mrt_combine, mrt_from_tensor, uplink_links, MrtResult};
pub use stationarity::{collinearity, Collinearity, StationarityResult};
pub(crate) use stationarity::median;

use serde::{Deserialize, Serialize};

/// Default LSF settings: 75 snapshots per region, one time and two
/// frequency tapers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LsfParams {
    pub m: usize,
    pub delta_t: Option<usize>,
    pub i: usize,
    pub j: usize,
    pub nw_time: f64,
    pub nw_freq: f64,
}

impl Default for LsfParams {
    fn default() -> Self {
        Self { m: 75, delta_t: None, i: 1, j: 2, nw_time: 2.0, nw_freq: 1.0 }
    }
}

impl LsfParams {
    pub fn tapers(&self, n: usize) -> crate::Result<TaperSet> {
        TaperSet::new(self.m, n, self.i, self.j, self.nw_time, self.nw_freq)
    }
}
