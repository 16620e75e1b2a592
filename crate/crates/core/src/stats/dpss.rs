use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// The `k` most concentrated discrete prolate spheroidal sequences of
/// length `n` and half-bandwidth `nw / n`, with their concentrations.
pub fn dpss(n: usize, nw: f64, k: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("DPSS length {n}")));
    }
    if !(nw > 0.0 && nw < n as f64 / 2.0) {
        return Err(Error::InvalidParameter(format!("time-bandwidth product {nw} for length {n}")));
    }
    let available = (2.0 * nw).floor() as usize;
    if k > available {
        return Err(Error::TooManyTapers { requested: k, available });
    }
    let w = nw / n as f64;
    let nf = n as f64;
    // commuting tridiagonal operator
    let mut t = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let c = (nf - 1.0 - 2.0 * i as f64) / 2.0;
        t[(i, i)] = c * c * (2.0 * PI * w).cos();
        if i > 0 {
            let off = i as f64 * (nf - i as f64) / 2.0;
            t[(i, i - 1)] = off;
            t[(i - 1, i)] = off;
        }
    }
    let eig = SymmetricEigen::new(t);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut seqs = Vec::with_capacity(k);
    let mut conc = Vec::with_capacity(k);
    let centre = (nf - 1.0) / 2.0;
    for (rank, &idx) in order.iter().take(k).enumerate() {
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        // symmetric sequences sum positive, antisymmetric ones start with a positive lobe
        let s: f64 = if rank % 2 == 0 {
            v.iter().sum()
        } else {
            v.iter().enumerate().map(|(i, x)| (centre - i as f64) * x).sum()
        };
        if s < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        conc.push(concentration(&v, w));
        seqs.push(v);
    }
    Ok((seqs, conc))
}

/// Fraction of the sequence energy inside `|f| < w`.
pub fn concentration(v: &[f64], w: f64) -> f64 {
    let n = v.len();
    let mut acc = 0.0;
    for a in 0..n {
        acc += v[a] * v[a] * 2.0 * w;
        for b in a + 1..n {
            let d = (a as f64) - (b as f64);
            acc += 2.0 * v[a] * v[b] * (2.0 * PI * w * d).sin() / (PI * d);
        }
    }
    acc / v.iter().map(|x| x * x).sum::<f64>()
}

/// Separable tapers over an `m x n` time-frequency region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaperSet {
    pub m: usize,
    pub n: usize,
    pub i: usize,
    pub j: usize,
    pub time: Vec<Vec<f64>>,
    pub freq: Vec<Vec<f64>>,
    pub time_concentration: Vec<f64>,
    pub freq_concentration: Vec<f64>,
}

impl TaperSet {
    pub fn new(m: usize, n: usize, i: usize, j: usize, nw_time: f64, nw_freq: f64) -> Result<Self> {
        if i * j == 0 {
            return Err(Error::InvalidParameter("need at least one taper".into()));
        }
        if m < 8 || n < 8 {
            return Err(Error::InvalidParameter(format!("taper region {m} x {n} is below 8 x 8")));
        }
        let (time, time_concentration) = dpss(m, nw_time, i)?;
        let (freq, freq_concentration) = dpss(n, nw_freq, j)?;
        Ok(Self { m, n, i, j, time, freq, time_concentration, freq_concentration })
    }

    pub fn count(&self) -> usize {
        self.i * self.j
    }

    /// Time and frequency sequence of taper `w = i J + j`.
    pub fn pair(&self, w: usize) -> (&[f64], &[f64]) {
        (&self.time[w / self.j], &self.freq[w % self.j])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthonormal_families() {
        let t = TaperSet::new(75, 449, 1, 2, 2.0, 1.0).unwrap();
        assert_eq!(t.count(), 2);
        let (seqs, _) = dpss(64, 3.0, 6).unwrap();
        for a in 0..6 {
            for b in 0..6 {
                let d: f64 = seqs[a].iter().zip(&seqs[b]).map(|(x, y)| x * y).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-10, "{a},{b}: {d}");
            }
        }
        let f = &t.freq;
        let d: f64 = f[0].iter().zip(&f[1]).map(|(x, y)| x * y).sum();
        assert!(d.abs() < 1e-10);
    }

    #[test]
    fn first_sequence_well_concentrated() {
        let (_, c) = dpss(75, 2.0, 4).unwrap();
        assert!(c[0] > 0.99, "{}", c[0]);
        assert!(c.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn known_concentration_values() {
        // eigenvalues of the dense sinc kernel for N = 32, NW = 2, computed independently
        let (_, c) = dpss(32, 2.0, 2).unwrap();
        assert!((c[0] - 0.999_946_46).abs() < 1e-8, "{}", c[0]);
        assert!((c[1] - 0.997_656_87).abs() < 1e-8, "{}", c[1]);
    }

    #[test]
    fn shapes_and_signs() {
        let (s, _) = dpss(33, 2.0, 2).unwrap();
        for i in 0..33 {
            assert!((s[0][i] - s[0][32 - i]).abs() < 1e-10);
            assert!((s[1][i] + s[1][32 - i]).abs() < 1e-10);
        }
        assert!(s[0].iter().sum::<f64>() > 0.0);
        assert!(s[1][5] > 0.0);
    }

    #[test]
    fn too_many_tapers() {
        assert!(matches!(TaperSet::new(75, 449, 1, 3, 2.0, 1.0), Err(Error::TooManyTapers { requested: 3, available: 2 })));
        assert!(TaperSet::new(4, 449, 1, 1, 1.0, 1.0).is_err());
    }
}
