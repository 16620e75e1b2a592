use serde::{Deserialize, Serialize};

use super::LsfStack;
use crate::error::{Error, Result};

/// Pairwise collinearity of the vectorized LSFs of one link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Collinearity {
    pub k: usize,
    /// Row-major `k × k`.
    pub r: Vec<f64>,
    /// Regions whose LSF is identically zero.
    pub flagged: Vec<bool>,
}

pub fn collinearity(stack: &LsfStack) -> Result<Collinearity> {
    let k = stack.regions.len();
    if k < 2 {
        return Err(Error::InvalidWindow(format!("collinearity needs at least 2 regions, got {k}")));
    }
    let norms: Vec<f64> = stack.regions.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let flagged: Vec<bool> = norms.iter().map(|&n| n == 0.0).collect();
    let mut r = vec![0.0; k * k];
    for a in 0..k {
        if flagged[a] {
            continue;
        }
        r[a * k + a] = 1.0;
        for b in a + 1..k {
            if flagged[b] {
                continue;
            }
            let dot: f64 = stack.regions[a].iter().zip(&stack.regions[b]).map(|(x, y)| x * y).sum();
            let v = (dot / (norms[a] * norms[b])).clamp(0.0, 1.0);
            r[a * k + b] = v;
            r[b * k + a] = v;
        }
    }
    Ok(Collinearity { k, r, flagged })
}

impl Collinearity {
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.r[a * self.k + b]
    }

    pub fn gamma(&self, a: usize, b: usize, c_th: f64) -> bool {
        self.get(a, b) > c_th
    }

    /// Maximal run `[lo, hi]` of `γ = 1` along row `a` through the diagonal.
    pub fn run(&self, a: usize, c_th: f64) -> Option<(usize, usize)> {
        if self.flagged[a] {
            return None;
        }
        let mut lo = a;
        while lo > 0 && !self.flagged[lo - 1] && self.gamma(a, lo - 1, c_th) {
            lo -= 1;
        }
        let mut hi = a;
        while hi + 1 < self.k && !self.flagged[hi + 1] && self.gamma(a, hi + 1, c_th) {
            hi += 1;
        }
        Some((lo, hi))
    }

    /// Stationarity time per region. `speed_mps[n]` gives the agent speed
    /// at snapshot `n` and converts the time span into metres.
    pub fn stationarity(&self, stack: &LsfStack, c_th: f64, speed_mps: Option<&[f64]>) -> StationarityResult {
        let layout = stack.layout;
        let mut ts_s = Vec::with_capacity(self.k);
        let mut ts_m = Vec::with_capacity(self.k);
        let mut runs = Vec::with_capacity(self.k);
        for a in 0..self.k {
            let run = self.run(a, c_th);
            runs.push(run);
            match run {
                Some((lo, hi)) => {
                    let first = layout.start(lo);
                    let last = layout.start(hi) + layout.m;
                    ts_s.push(Some((last - first) as f64 / stack.link_rate_hz));
                    ts_m.push(speed_mps.map(|v| {
                        v[first.min(v.len())..last.min(v.len())].iter().sum::<f64>() / stack.link_rate_hz
                    }));
                }
                None => {
                    ts_s.push(None);
                    ts_m.push(None);
                }
            }
        }
        StationarityResult { c_th, runs, ts_seconds: ts_s, ts_meters: ts_m, region_time_s: stack.region_time_s.clone() }
    }

    /// First region that is no longer collinear with region 0.
    pub fn first_boundary(&self, c_th: f64) -> Option<usize> {
        let (_, hi) = self.run(0, c_th)?;
        (hi + 1 < self.k).then_some(hi + 1)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for a in 0..self.k {
            let row: Vec<String> = (0..self.k).map(|b| self.get(a, b).to_string()).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityResult {
    pub c_th: f64,
    pub runs: Vec<Option<(usize, usize)>>,
    pub ts_seconds: Vec<Option<f64>>,
    pub ts_meters: Vec<Option<f64>>,
    pub region_time_s: Vec<f64>,
}

impl StationarityResult {
    pub fn median_seconds(&self) -> Option<f64> {
        median(self.ts_seconds.iter().flatten().copied().collect())
    }

    pub fn median_meters(&self) -> Option<f64> {
        median(self.ts_meters.iter().flatten().copied().collect())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("region,t_s,c_th,run_start,run_end,ts_seconds,ts_meters\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for (k, run) in self.runs.iter().enumerate() {
            let (a, b) = run.map(|(a, b)| (a.to_string(), b.to_string())).unwrap_or_default();
            s.push_str(&format!(
                "{k},{},{},{a},{b},{},{}\n",
                self.region_time_s[k],
                self.c_th,
                opt(self.ts_seconds[k]),
                opt(self.ts_meters[k])
            ));
        }
        s
    }
}

pub(crate) fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::LinkId;
    use crate::stats::RegionLayout;

    fn stack(regions: Vec<Vec<f64>>) -> LsfStack {
        let k = regions.len();
        LsfStack {
            link: LinkId::new(0, 1),
            layout: RegionLayout { m: 4, delta_t: 2, num_regions: k },
            n: 2,
            region_time_s: (0..k).map(|i| i as f64).collect(),
            regions,
            link_rate_hz: 100.0,
            tau_s: 1e-8,
        }
    }

    #[test]
    fn identical_regions() {
        let s = stack(vec![vec![1.0, 2.0, 0.0, 3.0, 1.0, 1.0, 1.0, 1.0]; 6]);
        let c = collinearity(&s).unwrap();
        assert!(c.r.iter().all(|&x| (x - 1.0).abs() < 1e-12));
        let st = c.stationarity(&s, 0.9, Some(&[2.0; 100]));
        // whole record: first start 2, last end 2*5 + 2 + 4 = 16 snapshots
        for (ts, tm) in st.ts_seconds.iter().zip(&st.ts_meters) {
            assert_eq!(*ts, Some(0.14));
            assert!((tm.unwrap() - 0.28).abs() < 1e-12);
        }
        assert_eq!(c.first_boundary(0.9), None);
    }

    #[test]
    fn disjoint_support() {
        let s = stack(vec![vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]]);
        let c = collinearity(&s).unwrap();
        assert_eq!(c.get(0, 1), 0.0);
        assert_eq!(c.first_boundary(0.7), Some(1));
    }

    #[test]
    fn zero_region_flagged() {
        let s = stack(vec![vec![1.0; 8], vec![0.0; 8], vec![1.0; 8]]);
        let c = collinearity(&s).unwrap();
        assert!(c.flagged[1]);
        let st = c.stationarity(&s, 0.5, None);
        assert_eq!(st.ts_seconds[1], None);
        assert_eq!(st.runs[0], Some((0, 0)));
    }

    proptest::proptest! {
        #[test]
        fn symmetric_unit_diagonal(v in proptest::collection::vec(0.0f64..5.0, 40)) {
            let s = stack(v.chunks(8).map(|c| c.to_vec()).collect());
            let c = collinearity(&s).unwrap();
            for a in 0..c.k {
                if !c.flagged[a] {
                    proptest::prop_assert_eq!(c.get(a, a), 1.0);
                }
                for b in 0..c.k {
                    proptest::prop_assert_eq!(c.get(a, b), c.get(b, a));
                    proptest::prop_assert!((0.0..=1.0).contains(&c.get(a, b)));
                }
            }
        }
    }
}
