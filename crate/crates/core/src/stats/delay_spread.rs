use serde::{Deserialize, Serialize};

use super::stationarity::median;
use super::LsfStack;

/// Bins count only when more than this far above the noise floor, dB.
pub const NOISE_MARGIN_DB: f64 = 5.0;
/// Bins count only when no more than this far below the peak, dB.
pub const PEAK_RANGE_DB: f64 = 30.0;

/// Noise floor: median power over the last tenth of the delay bins.
pub fn noise_floor(pdp: &[f64]) -> f64 {
    let tail = pdp.len().div_ceil(10).max(1);
    median(pdp[pdp.len() - tail..].to_vec()).unwrap_or(0.0)
}

/// Mean delay and rms delay spread of a PDP sampled every `tau_s`,
/// using only bins that pass both power thresholds. `None` if no bin passes.
///
/// The PDP is circular, so bin offsets are taken relative to the peak and
/// wrapped into `[-N/2, N/2)`; leakage just below delay zero then counts as
/// a small negative offset rather than a delay near the end of the range.
/// The mean delay is wrapped back into `[0, N tau_s)`.
pub fn rms_delay_spread(pdp: &[f64], tau_s: f64, noise_floor: f64) -> Option<(f64, f64)> {
    let n = pdp.len() as i64;
    let (i_peak, peak) = pdp.iter().copied().enumerate().fold((0, 0.0), |b, (i, p)| if p > b.1 { (i, p) } else { b });
    if peak <= 0.0 {
        return None;
    }
    let above_noise = noise_floor * 10f64.powf(NOISE_MARGIN_DB / 10.0);
    let above_peak = peak * 10f64.powf(-PEAK_RANGE_DB / 10.0);
    let kept: Vec<(f64, f64)> = pdp
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > above_noise && p >= above_peak)
        .map(|(i, &p)| ((i as i64 - i_peak as i64 + n / 2).rem_euclid(n) - n / 2, p))
        .map(|(k, p)| (k as f64 * tau_s, p))
        .collect();
    let p0: f64 = kept.iter().map(|(_, p)| p).sum();
    if p0 == 0.0 {
        return None;
    }
    let offset = kept.iter().map(|(t, p)| t * p).sum::<f64>() / p0;
    // central second moment, two-pass to avoid cancellation
    let var = kept.iter().map(|(t, p)| (t - offset).powi(2) * p).sum::<f64>() / p0;
    let mean = (i_peak as f64 * tau_s + offset).rem_euclid(n as f64 * tau_s);
    Some((mean, var.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelaySpreadResult {
    pub tau_s: f64,
    pub region_time_s: Vec<f64>,
    pub noise_floor: Vec<f64>,
    pub mean_delay_s: Vec<Option<f64>>,
    pub rms_delay_spread_s: Vec<Option<f64>>,
}

pub fn delay_spread(stack: &LsfStack) -> DelaySpreadResult {
    let mut out = DelaySpreadResult {
        tau_s: stack.tau_s,
        region_time_s: stack.region_time_s.clone(),
        noise_floor: vec![],
        mean_delay_s: vec![],
        rms_delay_spread_s: vec![],
    };
    for k in 0..stack.regions.len() {
        let pdp = stack.pdp(k);
        let nf = noise_floor(&pdp);
        let r = rms_delay_spread(&pdp, stack.tau_s, nf);
        out.noise_floor.push(nf);
        out.mean_delay_s.push(r.map(|x| x.0));
        out.rms_delay_spread_s.push(r.map(|x| x.1));
    }
    out
}

impl DelaySpreadResult {
    pub fn median_rms_s(&self) -> Option<f64> {
        median(self.rms_delay_spread_s.iter().flatten().copied().collect())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("region,t_s,noise_floor,mean_delay_s,rms_delay_spread_s\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for k in 0..self.region_time_s.len() {
            s.push_str(&format!(
                "{k},{},{},{},{}\n",
                self.region_time_s[k],
                self.noise_floor[k],
                opt(self.mean_delay_s[k]),
                opt(self.rms_delay_spread_s[k])
            ));
        }
        s
    }
}
