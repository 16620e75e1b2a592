use num_complex::{Complex32, Complex64};
use rayon::prelude::*;

use super::{synthesize_at, LinkId, ReferenceSignal, Scene};
use crate::config::SoundingConfig;
use crate::error::{Error, Result};
use crate::tdma::{agc_select_gain, apply_saturation, build_schedule, AgcSettings, TdmaSchedule};

/// Complex snapshots indexed `(link, snapshot, active subcarrier)`.
///
/// Samples are stored in single precision, matching the archive payload;
/// accessors hand out `f64` copies for computation.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotTensor {
    pub config: SoundingConfig,
    links: Vec<LinkId>,
    num_snapshots: usize,
    data: Vec<Complex32>,
    timestamps: Vec<f64>,
    clipped: Vec<bool>,
    /// True once the reference spectrum has been divided out.
    pub equalized: bool,
}

impl SnapshotTensor {
    pub fn zeros(config: SoundingConfig, links: Vec<LinkId>, num_snapshots: usize) -> Self {
        let nf = config.num_active_subcarriers;
        let nl = links.len();
        Self {
            config,
            links,
            num_snapshots,
            data: vec![Complex32::new(0.0, 0.0); nl * num_snapshots * nf],
            timestamps: vec![0.0; nl * num_snapshots],
            clipped: vec![false; nl * num_snapshots],
            equalized: false,
        }
    }

    pub fn from_parts(
        config: SoundingConfig,
        links: Vec<LinkId>,
        num_snapshots: usize,
        data: Vec<Complex32>,
        timestamps: Vec<f64>,
        clipped: Vec<bool>,
        equalized: bool,
    ) -> Result<Self> {
        let nl = links.len();
        let nf = config.num_active_subcarriers;
        if data.len() != nl * num_snapshots * nf || timestamps.len() != nl * num_snapshots || clipped.len() != nl * num_snapshots {
            return Err(Error::DimensionMismatch(format!(
                "tensor parts do not match {nl} links x {num_snapshots} snapshots x {nf} bins"
            )));
        }
        Ok(Self { config, links, num_snapshots, data, timestamps, clipped, equalized })
    }

    pub fn links(&self) -> &[LinkId] {
        &self.links
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn num_snapshots(&self) -> usize {
        self.num_snapshots
    }

    pub fn num_bins(&self) -> usize {
        self.config.num_active_subcarriers
    }

    pub fn link_index(&self, link: LinkId) -> Option<usize> {
        self.links.iter().position(|&l| l == link)
    }

    pub fn require_link(&self, link: LinkId) -> Result<usize> {
        self.link_index(link).ok_or(Error::MissingLink { rx: link.rx, tx: link.tx })
    }

    fn offset(&self, li: usize, n: usize) -> usize {
        (li * self.num_snapshots + n) * self.num_bins()
    }

    pub fn snapshot_f32(&self, li: usize, n: usize) -> &[Complex32] {
        let o = self.offset(li, n);
        &self.data[o..o + self.num_bins()]
    }

    pub fn snapshot(&self, li: usize, n: usize) -> Vec<Complex64> {
        self.snapshot_f32(li, n).iter().map(|c| Complex64::new(c.re as f64, c.im as f64)).collect()
    }

    pub fn set_snapshot(&mut self, li: usize, n: usize, values: &[Complex64]) {
        let o = self.offset(li, n);
        let nb = self.num_bins();
        for (d, v) in self.data[o..o + nb].iter_mut().zip(values) {
            *d = Complex32::new(v.re as f32, v.im as f32);
        }
    }

    /// Snapshots `start..start + len` of link `li`, one vector per snapshot.
    pub fn link_window(&self, li: usize, start: usize, len: usize) -> Result<Vec<Vec<Complex64>>> {
        if start + len > self.num_snapshots {
            return Err(Error::InvalidWindow(format!(
                "snapshots {start}..{} exceed record of {}",
                start + len,
                self.num_snapshots
            )));
        }
        Ok((start..start + len).map(|n| self.snapshot(li, n)).collect())
    }

    pub fn timestamp(&self, li: usize, n: usize) -> f64 {
        self.timestamps[li * self.num_snapshots + n]
    }

    pub fn link_timestamps(&self, li: usize) -> &[f64] {
        &self.timestamps[li * self.num_snapshots..(li + 1) * self.num_snapshots]
    }

    pub fn set_timestamp(&mut self, li: usize, n: usize, t: f64) {
        self.timestamps[li * self.num_snapshots + n] = t;
    }

    pub fn is_clipped(&self, li: usize, n: usize) -> bool {
        self.clipped[li * self.num_snapshots + n]
    }

    pub fn set_clipped(&mut self, li: usize, n: usize, v: bool) {
        self.clipped[li * self.num_snapshots + n] = v;
    }

    /// `(link index, snapshot)` pairs flagged as clipped.
    pub fn clip_list(&self) -> Vec<(usize, usize)> {
        self.clipped
            .iter()
            .enumerate()
            .filter(|(_, &c)| c)
            .map(|(i, _)| (i / self.num_snapshots, i % self.num_snapshots))
            .collect()
    }

    pub fn raw_data(&self) -> &[Complex32] {
        &self.data
    }

    pub fn raw_timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    /// Mean time between consecutive snapshots of link `li`.
    pub fn link_interval_s(&self, li: usize) -> f64 {
        let ts = self.link_timestamps(li);
        if ts.len() < 2 {
            return self.config.snapshot_period_s();
        }
        (ts[ts.len() - 1] - ts[0]) / (ts.len() - 1) as f64
    }

    /// Applies `f` to every snapshot, producing a new tensor.
    pub fn map_snapshots<F>(&self, f: F) -> Result<SnapshotTensor>
    where
        F: Fn(usize, usize, Vec<Complex64>) -> Result<Vec<Complex64>> + Sync,
    {
        let mut out = self.clone();
        let nb = self.num_bins();
        let ns = self.num_snapshots;
        out.data
            .par_chunks_mut(ns * nb.max(1))
            .enumerate()
            .try_for_each(|(li, chunk)| -> Result<()> {
                for n in 0..ns {
                    let y = f(li, n, self.snapshot(li, n))?;
                    for (d, v) in chunk[n * nb..(n + 1) * nb].iter_mut().zip(&y) {
                        *d = Complex32::new(v.re as f32, v.im as f32);
                    }
                }
                Ok(())
            })?;
        Ok(out)
    }

    /// Divides every snapshot by the reference spectrum.
    pub fn equalize(&self, reference: &ReferenceSignal) -> Result<SnapshotTensor> {
        if self.equalized {
            return Ok(self.clone());
        }
        let mut out = self.map_snapshots(|_, _, s| Ok(reference.equalize(&s)))?;
        out.equalized = true;
        Ok(out)
    }

    /// Keeps only `links`, in the given order.
    pub fn select_links(&self, links: &[LinkId]) -> Result<SnapshotTensor> {
        let mut out = SnapshotTensor::zeros(self.config.clone(), links.to_vec(), self.num_snapshots);
        out.equalized = self.equalized;
        let nb = self.num_bins();
        let ns = self.num_snapshots;
        for (new_li, &l) in links.iter().enumerate() {
            let li = self.require_link(l)?;
            out.data[new_li * ns * nb..(new_li + 1) * ns * nb].copy_from_slice(&self.data[li * ns * nb..(li + 1) * ns * nb]);
            out.timestamps[new_li * ns..(new_li + 1) * ns].copy_from_slice(self.link_timestamps(li));
            out.clipped[new_li * ns..(new_li + 1) * ns].copy_from_slice(&self.clipped[li * ns..(li + 1) * ns]);
        }
        Ok(out)
    }
}

/// Which directed links a campaign records.
#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkSelection {
    /// Full mesh, ordered by transmit slot then receiver.
    #[default]
    All,
    /// Every anchor receiving from the agent.
    Uplink,
    Explicit(Vec<LinkId>),
}

impl LinkSelection {
    pub fn resolve(&self, schedule: &TdmaSchedule) -> Vec<LinkId> {
        let h = schedule.num_antennas();
        match self {
            LinkSelection::All => schedule
                .slot_order
                .iter()
                .flat_map(|&tx| (0..h).filter(move |&rx| rx != tx).map(move |rx| LinkId::new(rx, tx)))
                .collect(),
            LinkSelection::Uplink => (0..h - 1).map(|rx| LinkId::new(rx, h - 1)).collect(),
            LinkSelection::Explicit(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CampaignOptions {
    pub links: LinkSelection,
    /// Defaults to the scene duration times the snapshot rate.
    pub num_snapshots: Option<usize>,
    /// Enables the receive-gain and clipping model.
    pub agc: Option<AgcSettings>,
    /// Overrides the default slot order.
    pub schedule: Option<TdmaSchedule>,
}

/// Records every directed link once per snapshot period.
pub fn generate_campaign(scene: &Scene, config: &SoundingConfig, reference: &ReferenceSignal, seed: u64) -> Result<SnapshotTensor> {
    generate_campaign_with(scene, config, reference, seed, &CampaignOptions::default())
}

pub fn generate_campaign_with(
    scene: &Scene,
    config: &SoundingConfig,
    reference: &ReferenceSignal,
    seed: u64,
    options: &CampaignOptions,
) -> Result<SnapshotTensor> {
    config.validate(options.agc.is_some())?;
    scene.validate(config)?;
    let schedule = match &options.schedule {
        Some(s) => {
            if s.num_antennas() != config.num_antennas {
                return Err(Error::InvalidConfig("schedule does not match the antenna count".into()));
            }
            s.clone()
        }
        None => build_schedule(config)?,
    };
    let links = options.links.resolve(&schedule);
    for l in &links {
        if l.rx >= config.num_antennas || l.tx >= config.num_antennas || l.rx == l.tx {
            return Err(Error::InvalidLink { rx: l.rx, tx: l.tx });
        }
    }
    let ns = options.num_snapshots.unwrap_or_else(|| scene.num_snapshots(config));
    if ns == 0 {
        return Err(Error::InvalidScene("campaign would contain no snapshots".into()));
    }
    let nf = config.num_active_subcarriers;

    let per_link: Vec<(Vec<Complex32>, Vec<f64>, Vec<bool>)> = links
        .par_iter()
        .map(|&link| -> Result<_> {
            let mut data = Vec::with_capacity(ns * nf);
            let mut ts = Vec::with_capacity(ns);
            let mut clips = Vec::with_capacity(ns);
            let mut prev_peak: Option<f64> = None;
            for n in 0..ns {
                let t = schedule.link_timestamp(n, link.tx)?;
                let mut y = synthesize_at(scene, config, reference, link, n, t, seed)?;
                let mut clipped = false;
                if let Some(agc) = &options.agc {
                    let gain = agc_select_gain(&[prev_peak], agc);
                    let g = 10f64.powf(gain.rx_gain_db[0] / 20.0);
                    // the power detector sits ahead of the ADC, so it sees the unclipped peak
                    prev_peak = Some(y.iter().map(|x| x.norm_sqr()).fold(0.0, f64::max));
                    let sat = apply_saturation(&y, &gain, 0);
                    clipped = sat.clipped;
                    // back to channel units; clipping distortion stays
                    y = sat.samples.into_iter().map(|x| x / g).collect();
                }
                data.extend(y.iter().map(|v| Complex32::new(v.re as f32, v.im as f32)));
                ts.push(t);
                clips.push(clipped);
            }
            Ok((data, ts, clips))
        })
        .collect::<Result<_>>()?;

    let mut data = Vec::with_capacity(links.len() * ns * nf);
    let mut timestamps = Vec::with_capacity(links.len() * ns);
    let mut clipped = Vec::with_capacity(links.len() * ns);
    for (d, t, c) in per_link {
        data.extend(d);
        timestamps.extend(t);
        clipped.extend(c);
    }
    SnapshotTensor::from_parts(config.clone(), links, ns, data, timestamps, clipped, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{ChannelSpec, GeometricChannel, HardwareImpairments, TrajectoryPoint};

    fn small_cfg(h: usize) -> SoundingConfig {
        SoundingConfig { num_antennas: h, num_active_subcarriers: 31, num_subcarriers_total: 64, ..Default::default() }
    }

    fn static_scene(h: usize, noise_psd: f64, duration_s: f64) -> Scene {
        Scene {
            anchor_positions: (0..h - 1).map(|i| [4.0 * i as f64, 0.0, 4.0]).collect(),
            agent_trajectory: vec![TrajectoryPoint { t: 0.0, position: [3.0, 5.0, 0.5], velocity: [0.0; 3] }],
            channel: ChannelSpec::Geometric(GeometricChannel::default()),
            impairments: HardwareImpairments::none(),
            noise_psd,
            duration_s,
        }
    }

    #[test]
    fn full_mesh_link_count() {
        let cfg = SoundingConfig::default();
        let sched = build_schedule(&cfg).unwrap();
        assert_eq!(LinkSelection::All.resolve(&sched).len(), 156);
        assert_eq!(LinkSelection::Uplink.resolve(&sched).len(), 12);
    }

    #[test]
    fn snapshot_count_follows_duration() {
        let cfg = SoundingConfig::default();
        let mut s = static_scene(13, 0.0, 60.0);
        assert_eq!(s.num_snapshots(&cfg), 12_000);
        s.duration_s = 80.0;
        assert_eq!(s.num_snapshots(&cfg), 16_000);
    }

    #[test]
    fn static_noiseless_scene_is_time_invariant() {
        let cfg = small_cfg(4);
        let r = ReferenceSignal::zadoff_chu(&cfg, 3).unwrap();
        let t = generate_campaign(&static_scene(4, 0.0, 0.05), &cfg, &r, 1).unwrap();
        assert_eq!(t.num_links(), 12);
        assert_eq!(t.num_snapshots(), 10);
        for li in 0..t.num_links() {
            let first = t.snapshot_f32(li, 0).to_vec();
            for n in 1..t.num_snapshots() {
                for (a, b) in first.iter().zip(t.snapshot_f32(li, n)) {
                    assert!((a - b).norm() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn timestamps_follow_schedule() {
        let cfg = small_cfg(3);
        let r = ReferenceSignal::zadoff_chu(&cfg, 3).unwrap();
        let t = generate_campaign(&static_scene(3, 0.0, 0.02), &cfg, &r, 1).unwrap();
        let sched = build_schedule(&cfg).unwrap();
        for (li, l) in t.links().iter().enumerate() {
            for n in 0..t.num_snapshots() {
                assert_eq!(t.timestamp(li, n), sched.link_timestamp(n, l.tx).unwrap());
            }
        }
        // within a snapshot, later slots are later in time
        let a = t.require_link(LinkId::new(1, 0)).unwrap();
        let b = t.require_link(LinkId::new(0, 1)).unwrap();
        let c = t.require_link(LinkId::new(0, 2)).unwrap();
        assert!(t.timestamp(a, 1) < t.timestamp(b, 1) && t.timestamp(b, 1) < t.timestamp(c, 1));
    }

    #[test]
    fn agc_flags_clipping_and_recovers() {
        let cfg = SoundingConfig { repetitions_per_slot: 3, ..small_cfg(3) };
        let r = ReferenceSignal::zadoff_chu(&cfg, 3).unwrap();
        let opts = CampaignOptions {
            agc: Some(AgcSettings { full_scale_amplitude: 2.0, ..Default::default() }),
            ..Default::default()
        };
        let t = generate_campaign_with(&static_scene(3, 0.0, 0.03), &cfg, &r, 1, &opts).unwrap();
        let clips = t.clip_list();
        // cold start at max gain clips the strong links, the next snapshot does not
        assert!(clips.iter().any(|&(_, n)| n == 0));
        assert!(clips.iter().all(|&(_, n)| n == 0));
    }

    #[test]
    fn select_links_keeps_data() {
        let cfg = small_cfg(3);
        let r = ReferenceSignal::zadoff_chu(&cfg, 3).unwrap();
        let t = generate_campaign(&static_scene(3, 1e-12, 0.02), &cfg, &r, 4).unwrap();
        let sel = t.select_links(&[LinkId::new(0, 2)]).unwrap();
        let li = t.require_link(LinkId::new(0, 2)).unwrap();
        assert_eq!(sel.snapshot_f32(0, 2), t.snapshot_f32(li, 2));
        assert!(t.select_links(&[LinkId::new(2, 2)]).is_err());
    }
}
