use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::config::SoundingConfig;
use crate::error::{Error, Result};

/// Serializable description of the sounding reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSpec {
    pub zc_root: usize,
    /// Back-to-back system response; all ones when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_response: Option<Vec<Complex64>>,
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        Self { zc_root: 1, system_response: None }
    }
}

/// Zadoff–Chu reference symbol on the active subcarriers.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSignal {
    pub spec: ReferenceSpec,
    pub base_sequence: Vec<Complex64>,
    pub system_response_g: Vec<Complex64>,
    /// `g ⊙ s_f` with the DC bin nulled.
    pub effective_spectrum_s: Vec<Complex64>,
    pub dc_index: usize,
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl ReferenceSignal {
    pub fn new(config: &SoundingConfig, spec: ReferenceSpec) -> Result<Self> {
        let n = config.num_active_subcarriers;
        if n % 2 == 0 {
            return Err(Error::InvalidConfig("Zadoff-Chu length must be odd".into()));
        }
        let u = spec.zc_root;
        if u == 0 || u >= n.max(2) || gcd(u, n) != 1 {
            return Err(Error::InvalidParameter(format!("root {u} is not coprime with length {n}")));
        }
        let base_sequence: Vec<Complex64> = (0..n)
            .map(|k| {
                let k = k as f64;
                Complex64::from_polar(1.0, -PI * u as f64 * k * (k + 1.0) / n as f64)
            })
            .collect();
        let system_response_g = match &spec.system_response {
            Some(g) if g.len() == n => g.clone(),
            Some(g) => {
                return Err(Error::DimensionMismatch(format!(
                    "system response has {} bins, expected {n}",
                    g.len()
                )))
            }
            None => vec![Complex64::new(1.0, 0.0); n],
        };
        let dc_index = config.dc_index();
        let mut effective_spectrum_s: Vec<Complex64> =
            base_sequence.iter().zip(&system_response_g).map(|(s, g)| s * g).collect();
        effective_spectrum_s[dc_index] = Complex64::new(0.0, 0.0);
        Ok(Self { spec, base_sequence, system_response_g, effective_spectrum_s, dc_index })
    }

    pub fn zadoff_chu(config: &SoundingConfig, root: usize) -> Result<Self> {
        Self::new(config, ReferenceSpec { zc_root: root, system_response: None })
    }

    /// Divides out the reference, leaving the channel transfer function.
    ///
    /// Bins where the reference is zero (the DC bin) come out as zero.
    pub fn equalize(&self, received: &[Complex64]) -> Vec<Complex64> {
        received
            .iter()
            .zip(&self.effective_spectrum_s)
            .map(|(r, s)| if s.norm_sqr() > 0.0 { r / s } else { Complex64::new(0.0, 0.0) })
            .collect()
    }

    /// Mean power of the effective spectrum over active bins.
    pub fn mean_power(&self) -> f64 {
        self.effective_spectrum_s.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.effective_spectrum_s.len() as f64
    }
}
