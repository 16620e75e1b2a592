use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{LinkId, SnapshotTensor};

/// Maximum-ratio combining of the uplink over all receiving anchors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrtResult {
    /// Per snapshot: `Σ_h |H_h|²` per bin scaled to unit Euclidean norm.
    pub combined: Vec<Vec<f64>>,
    /// Combined power over the long-term mean per-antenna power, dB.
    pub array_gain_db: Vec<f64>,
    /// Combined power over the long-term mean power of `baseline_antenna`, dB.
    pub reference_gain_db: Vec<f64>,
    pub baseline_antenna: usize,
    /// `10 log10` of the mean linear array gain.
    pub mean_array_gain_db: f64,
    pub mean_reference_gain_db: f64,
}

/// `snapshots[n][h][f]`: snapshot `n`, antenna `h`, bin `f`.
pub fn mrt_combine(snapshots: &[Vec<Vec<Complex64>>], baseline_antenna: usize) -> Result<MrtResult> {
    let first = snapshots.first().ok_or(Error::ZeroInput("no snapshots"))?;
    let na = first.len();
    if na == 0 {
        return Err(Error::ZeroInput("no antenna columns"));
    }
    if baseline_antenna >= na {
        return Err(Error::InvalidParameter(format!("baseline antenna {baseline_antenna} of {na}")));
    }
    let nf = first[0].len();
    if nf == 0 || snapshots.iter().any(|s| s.len() != na || s.iter().any(|h| h.len() != nf)) {
        return Err(Error::DimensionMismatch("snapshots must share antenna and bin counts".into()));
    }

    let mut per_antenna = vec![0.0; na];
    let mut combined = Vec::with_capacity(snapshots.len());
    let mut combined_power = Vec::with_capacity(snapshots.len());
    for s in snapshots {
        let mut c = vec![0.0; nf];
        for (h, col) in s.iter().enumerate() {
            for (ci, x) in c.iter_mut().zip(col) {
                let p = x.norm_sqr();
                *ci += p;
                per_antenna[h] += p;
            }
        }
        combined_power.push(c.iter().sum::<f64>() / nf as f64);
        let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            c.iter_mut().for_each(|x| *x /= norm);
        }
        combined.push(c);
    }
    let denom = (snapshots.len() * nf) as f64;
    per_antenna.iter_mut().for_each(|p| *p /= denom);
    let mean_antenna = per_antenna.iter().sum::<f64>() / na as f64;
    if mean_antenna == 0.0 {
        return Err(Error::ZeroInput("all channel coefficients are zero"));
    }
    let reference = per_antenna[baseline_antenna];
    let db = |x: f64| 10.0 * x.log10();
    let array_gain_db: Vec<f64> = combined_power.iter().map(|&p| db(p / mean_antenna)).collect();
    let reference_gain_db: Vec<f64> = combined_power.iter().map(|&p| db(p / reference)).collect();
    let mean_combined = combined_power.iter().sum::<f64>() / combined_power.len() as f64;
    Ok(MrtResult {
        combined,
        array_gain_db,
        reference_gain_db,
        baseline_antenna,
        mean_array_gain_db: db(mean_combined / mean_antenna),
        mean_reference_gain_db: db(mean_combined / reference),
    })
}

/// Uplink MRT over every anchor that receives from `agent`.
pub fn mrt_from_tensor(tensor: &SnapshotTensor, agent: usize, baseline_antenna: usize) -> Result<MrtResult> {
    let rows: Vec<usize> = tensor
        .links()
        .iter()
        .enumerate()
        .filter(|(_, l)| l.tx == agent)
        .map(|(i, _)| i)
        .collect();
    if rows.is_empty() {
        return Err(Error::MissingLink { rx: 0, tx: agent });
    }
    let snaps: Vec<Vec<Vec<Complex64>>> =
        (0..tensor.num_snapshots()).map(|n| rows.iter().map(|&li| tensor.snapshot(li, n)).collect()).collect();
    mrt_combine(&snaps, baseline_antenna)
}

/// Receiving anchors in the column order used by [`mrt_from_tensor`].
pub fn uplink_links(tensor: &SnapshotTensor, agent: usize) -> Vec<LinkId> {
    tensor.links().iter().copied().filter(|l| l.tx == agent).collect()
}

impl MrtResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("snapshot,array_gain_db,reference_gain_db\n");
        for (n, (a, r)) in self.array_gain_db.iter().zip(&self.reference_gain_db).enumerate() {
            s.push_str(&format!("{n},{a},{r}\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn single_flat_antenna() {
        let s = vec![vec![vec![Complex64::new(1.0, 0.0); 16]]];
        let r = mrt_combine(&s, 0).unwrap();
        for c in &r.combined[0] {
            assert!((c - 0.25).abs() < 1e-15);
        }
        assert!(r.array_gain_db[0].abs() < 1e-12);
    }

    #[test]
    fn duplicated_column_keeps_direction() {
        let col: Vec<Complex64> = (0..9).map(|k| Complex64::new(k as f64, 1.0 - k as f64 * 0.3)).collect();
        let one = mrt_combine(&[vec![col.clone()]], 0).unwrap();
        let two = mrt_combine(&[vec![col.clone(), col]], 0).unwrap();
        for (a, b) in one.combined[0].iter().zip(&two.combined[0]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_input_rejected() {
        assert!(mrt_combine(&[vec![vec![Complex64::new(0.0, 0.0); 4]; 3]], 0).is_err());
        assert!(mrt_combine(&[], 0).is_err());
    }

    #[test]
    fn rayleigh_gain_close_to_branch_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sd = 0.5f64.sqrt();
        let mut g = || {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(re * sd, im * sd)
        };
        let snaps: Vec<Vec<Vec<Complex64>>> = (0..200).map(|_| (0..12).map(|_| (0..16).map(|_| g()).collect()).collect()).collect();
        let r = mrt_combine(&snaps, 0).unwrap();
        assert!((r.mean_array_gain_db - 10.0 * 12f64.log10()).abs() < 0.1);
    }

    proptest::proptest! {
        #[test]
        fn combining_beats_best_antenna(v in proptest::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 12..48)) {
            // 4 antennas x (len/4) bins
            let nf = v.len() / 4;
            let s: Vec<Vec<Complex64>> = (0..4).map(|h| (0..nf).map(|f| Complex64::new(v[h * nf + f].0, v[h * nf + f].1)).collect()).collect();
            for f in 0..nf {
                let sum: f64 = s.iter().map(|c| c[f].norm_sqr()).sum();
                let best = s.iter().map(|c| c[f].norm_sqr()).fold(0.0, f64::max);
                proptest::prop_assert!(sum >= best);
            }
            if let Ok(r) = mrt_combine(&[s], 0) {
                let norm: f64 = r.combined[0].iter().map(|x| x * x).sum();
                proptest::prop_assert!((norm - 1.0).abs() < 1e-12);
                proptest::prop_assert!(r.combined[0].iter().all(|&x| x >= 0.0));
            }
        }
    }
}
