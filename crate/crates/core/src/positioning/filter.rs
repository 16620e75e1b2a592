use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BartlettMode, DelayGrid, PositioningContext, WindowBank};
use crate::error::{Error, Result};
use crate::scene::{trajectory_state, LinkId, SnapshotTensor, TrajectoryPoint};

/// Particle-filter settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PfConfig {
    pub num_particles: usize,
    /// White-acceleration power spectral density, m²/s³.
    pub process_noise: f64,
    /// Exponent applied to the spectrum normalized to its per-step maximum.
    pub beta: f64,
    /// Resample when the effective sample size drops below this fraction.
    pub resample_fraction: f64,
    pub init_position_std_m: f64,
    pub init_velocity_std_mps: f64,
    /// A run is flagged when the effective sample size stays below this
    /// fraction for `degeneracy_steps` consecutive steps.
    pub degeneracy_fraction: f64,
    pub degeneracy_steps: usize,
    /// Gaussian jitter added to positions after resampling, so that the
    /// cloud keeps enough spread to follow the weakly curved position axes.
    pub roughening_position_m: f64,
    pub roughening_velocity_mps: f64,
    pub seed: u64,
}

impl Default for PfConfig {
    fn default() -> Self {
        Self {
            num_particles: 2000,
            process_noise: 0.5,
            beta: 20.0,
            resample_fraction: 0.5,
            init_position_std_m: 0.3,
            init_velocity_std_mps: 0.3,
            degeneracy_fraction: 0.01,
            degeneracy_steps: 10,
            roughening_position_m: 0.02,
            roughening_velocity_mps: 0.01,
            seed: 0,
        }
    }
}

impl PfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_particles < 100 {
            return Err(Error::InvalidParameter(format!("{} particles; at least 100 are required", self.num_particles)));
        }
        let finite_nonneg = [
            self.process_noise,
            self.beta,
            self.init_position_std_m,
            self.init_velocity_std_mps,
            self.roughening_position_m,
            self.roughening_velocity_mps,
        ];
        if finite_nonneg.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::InvalidParameter("filter noise levels and beta must be finite and nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.resample_fraction) || !(0.0..=1.0).contains(&self.degeneracy_fraction) {
            return Err(Error::InvalidParameter("filter fractions must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Weighted particles with state `(x, y, vx, vy)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub states: Vec<[f64; 4]>,
    pub weights: Vec<f64>,
}

impl ParticleSet {
    /// Gaussian cloud around `position` and `velocity` with uniform weights.
    pub fn init(position: [f64; 2], velocity: [f64; 2], config: &PfConfig, rng: &mut ChaCha8Rng) -> Self {
        let n = config.num_particles;
        let mut g = || -> f64 { rng.sample(StandardNormal) };
        let states = (0..n)
            .map(|_| {
                [
                    position[0] + config.init_position_std_m * g(),
                    position[1] + config.init_position_std_m * g(),
                    velocity[0] + config.init_velocity_std_mps * g(),
                    velocity[1] + config.init_velocity_std_mps * g(),
                ]
            })
            .collect();
        Self { states, weights: vec![1.0 / n as f64; n] }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Nearly-constant-velocity prediction over `dt` seconds with the exact
    /// white-acceleration noise covariance `q [[dt³/3, dt²/2], [dt²/2, dt]]` per axis.
    pub fn predict(&mut self, dt: f64, q: f64, rng: &mut ChaCha8Rng) {
        // Cholesky factor of the per-axis covariance
        let l11 = (q * dt.powi(3) / 3.0).sqrt();
        let l21 = (3.0 * q * dt).sqrt() / 2.0;
        let l22 = (q * dt).sqrt() / 2.0;
        for s in &mut self.states {
            for axis in 0..2 {
                let z1: f64 = rng.sample(StandardNormal);
                let z2: f64 = rng.sample(StandardNormal);
                s[axis] += s[axis + 2] * dt + l11 * z1;
                s[axis + 2] += l21 * z1 + l22 * z2;
            }
        }
    }

    /// Multiplies weights by `exp(β (score / max score - 1))` and renormalizes.
    /// All-zero scores carry no information and leave the weights unchanged.
    pub fn update(&mut self, scores: &[f64], beta: f64) -> Result<()> {
        if scores.len() != self.len() {
            return Err(Error::DimensionMismatch(format!("{} scores for {} particles", scores.len(), self.len())));
        }
        let max = scores.iter().copied().fold(0.0, f64::max);
        if !(max > 0.0) || !max.is_finite() {
            return Ok(());
        }
        for (w, s) in self.weights.iter_mut().zip(scores) {
            *w *= (beta * (s / max - 1.0)).exp();
        }
        self.normalize()
    }

    fn normalize(&mut self) -> Result<()> {
        let total: f64 = self.weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Degenerate("particle weights collapsed to zero".into()));
        }
        for w in &mut self.weights {
            *w /= total;
        }
        Ok(())
    }

    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Systematic resampling; weights become uniform.
    pub fn resample(&mut self, rng: &mut ChaCha8Rng) {
        let n = self.len();
        let step = 1.0 / n as f64;
        let mut u = rng.random_range(0.0..step);
        let mut cum = self.weights[0];
        let mut i = 0;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            while u >= cum && i + 1 < n {
                i += 1;
                cum += self.weights[i];
            }
            out.push(self.states[i]);
            u += step;
        }
        self.states = out;
        self.weights = vec![step; n];
    }

    /// Adds independent Gaussian jitter to every particle.
    pub fn roughen(&mut self, position_std: f64, velocity_std: f64, rng: &mut ChaCha8Rng) {
        if position_std == 0.0 && velocity_std == 0.0 {
            return;
        }
        for s in &mut self.states {
            for (k, x) in s.iter_mut().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                *x += z * if k < 2 { position_std } else { velocity_std };
            }
        }
    }

    pub fn mean(&self) -> [f64; 4] {
        let mut m = [0.0; 4];
        for (s, w) in self.states.iter().zip(&self.weights) {
            for k in 0..4 {
                m[k] += w * s[k];
            }
        }
        m
    }
}

/// Tracking settings on top of the filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackConfig {
    /// Snapshots per Bartlett window.
    pub n_nu: usize,
    /// Snapshots between consecutive filter steps.
    pub stride: usize,
    pub delay_grid: DelayGrid,
    pub pf: PfConfig,
    pub initial_position: [f64; 2],
    pub initial_velocity: [f64; 2],
    /// Steps earlier than this after the first one are left out of the
    /// converged error.
    pub convergence_s: f64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            n_nu: 150,
            stride: 1,
            delay_grid: DelayGrid::default(),
            pf: PfConfig::default(),
            initial_position: [0.0, 0.0],
            initial_velocity: [0.0, 0.0],
            convergence_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackStep {
    pub step: usize,
    /// Last snapshot of the window; the state refers to its time.
    pub snapshot: usize,
    pub t: f64,
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub true_position: Option<[f64; 2]>,
    pub error_m: Option<f64>,
    pub effective_sample_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackResult {
    pub steps: Vec<TrackStep>,
    /// Root mean squared position error over all steps, meters.
    pub rmse_m: Option<f64>,
    /// Same, over the steps after the convergence time.
    pub rmse_converged_m: Option<f64>,
    pub degenerate: bool,
    pub warnings: Vec<String>,
}

impl TrackResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,t,x_hat,y_hat,vx_hat,vy_hat,x_true,y_true,error\n");
        for st in &self.steps {
            let (xt, yt) = st.true_position.map(|p| (p[0].to_string(), p[1].to_string())).unwrap_or_default();
            let err = st.error_m.map(|e| e.to_string()).unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{},{},{},{xt},{yt},{err}\n",
                st.step, st.t, st.position[0], st.position[1], st.velocity[0], st.velocity[1]
            ));
        }
        s
    }
}

fn rmse<'a>(errors: impl Iterator<Item = &'a f64>) -> Option<f64> {
    let (sum, n) = errors.fold((0.0, 0usize), |(s, n), e| (s + e * e, n + 1));
    (n > 0).then(|| (sum / n as f64).sqrt())
}

/// Tracks the agent through an equalized campaign with the Bartlett
/// pseudo-likelihood and a nearly-constant-velocity particle filter.
///
/// Anchor `h` of `ctx` is read from link `(h, agent)`. Each window is
/// scored at its centre time, the reported state at its last snapshot.
pub fn track(
    tensor: &SnapshotTensor,
    ctx: &PositioningContext,
    agent: usize,
    config: &TrackConfig,
    truth: Option<&[TrajectoryPoint]>,
) -> Result<TrackResult> {
    config.pf.validate()?;
    if !tensor.equalized {
        return Err(Error::InvalidParameter("tracking needs an equalized tensor".into()));
    }
    if config.stride == 0 {
        return Err(Error::InvalidParameter("stride must be positive".into()));
    }
    let ns = tensor.num_snapshots();
    if config.n_nu == 0 || config.n_nu > ns {
        return Err(Error::InvalidWindow(format!("window of {} snapshots in a record of {ns}", config.n_nu)));
    }
    let links: Vec<usize> =
        (0..ctx.anchors.len()).map(|h| tensor.require_link(LinkId::new(h, agent))).collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.pf.seed);
    let mut bank = WindowBank::new(ctx, config.delay_grid, config.n_nu)?;
    let mut particles: Option<ParticleSet> = None;
    let mut steps = Vec::new();
    let mut low_ess_run = 0;
    let mut degenerate = false;
    let mut t_prev = 0.0;
    let n_part = config.pf.num_particles as f64;

    for n in 0..ns {
        let snaps: Vec<Vec<_>> = links.iter().map(|&li| tensor.snapshot(li, n)).collect();
        let refs: Vec<&[_]> = snaps.iter().map(|s| s.as_slice()).collect();
        bank.push(&refs)?;
        if n + 1 < config.n_nu || (n + 1 - config.n_nu) % config.stride != 0 {
            continue;
        }
        let start = n + 1 - config.n_nu;
        let t = tensor.timestamp(links[0], n);
        let lag = t - 0.5 * (tensor.timestamp(links[0], start) + t);
        let ps = match particles.as_mut() {
            None => particles.insert(ParticleSet::init(config.initial_position, config.initial_velocity, &config.pf, &mut rng)),
            Some(ps) => {
                ps.predict(t - t_prev, config.pf.process_noise, &mut rng);
                ps
            }
        };
        t_prev = t;

        let scores: Vec<f64> = ps
            .states
            .par_iter()
            .map(|s| {
                let centre = [s[0] - s[2] * lag, s[1] - s[3] * lag];
                bank.power(ctx, centre, [s[2], s[3]], BartlettMode::Joint).unwrap_or(0.0)
            })
            .collect();
        ps.update(&scores, config.pf.beta)?;
        let ess = ps.effective_sample_size();
        if ess < config.pf.degeneracy_fraction * n_part {
            low_ess_run += 1;
            degenerate |= low_ess_run >= config.pf.degeneracy_steps;
        } else {
            low_ess_run = 0;
        }
        let m = ps.mean();
        if ess < config.pf.resample_fraction * n_part {
            ps.resample(&mut rng);
            ps.roughen(config.pf.roughening_position_m, config.pf.roughening_velocity_mps, &mut rng);
        }

        let true_position = truth.map(|tr| {
            let (p, _) = trajectory_state(tr, t);
            [p[0], p[1]]
        });
        let error_m = true_position.map(|p| (m[0] - p[0]).hypot(m[1] - p[1]));
        steps.push(TrackStep {
            step: steps.len(),
            snapshot: n,
            t,
            position: [m[0], m[1]],
            velocity: [m[2], m[3]],
            true_position,
            error_m,
            effective_sample_size: ess,
        });
    }

    let mut warnings = Vec::new();
    if truth.is_none() {
        warnings.push("no ground truth available; error fields left empty".to_string());
    }
    if degenerate {
        warnings.push("particle degeneracy: effective sample size stayed below threshold".to_string());
    }
    let t0 = steps.first().map_or(0.0, |s| s.t);
    let rmse_m = rmse(steps.iter().filter_map(|s| s.error_m.as_ref()));
    let rmse_converged_m =
        rmse(steps.iter().filter(|s| s.t - t0 >= config.convergence_s).filter_map(|s| s.error_m.as_ref()));
    Ok(TrackResult { steps, rmse_m, rmse_converged_m, degenerate, warnings })
}
