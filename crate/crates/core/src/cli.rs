//! Command-line front end: `dmimo <subcommand>`.
//!
//! Inputs are only read. Each output gets a reproducibility manifest next to
//! it, and failures are reported as one JSON object on stderr.

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::archive::{read_archive, write_archive, SoundingArchive};
use crate::calib::{calibrate, CalibrationPlan};
use crate::config::SoundingConfig;
use crate::doppler::{dsd_sweep, DopplerParams};
use crate::error::Error;
use crate::positioning::{
    axis, spectrum_grid, track, BartlettMode, DelayGrid, PfConfig, PositioningContext, SpectrumKind, TrackConfig,
    WindowBank,
};
use crate::scene::presets::{self, AGENT_HEIGHT_M};
use crate::scene::{
    generate_campaign_with, trajectory_state, CampaignOptions, LinkId, LinkSelection, ReferenceSignal, ReferenceSpec,
    Scene, SnapshotTensor, TrajectoryPoint,
};
use crate::stats::{collinearity, delay_spread, lsf_from_tensor, mrt_from_tensor, LsfParams};
use crate::tdma::{build_schedule, build_schedule_with_order, AgcSettings};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_ARCHIVE: i32 = 3;

/// Scene description consumed by `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    #[serde(default)]
    pub config: SoundingConfig,
    #[serde(default)]
    pub reference: ReferenceSpec,
    #[serde(default)]
    pub links: LinkSelection,
    /// Defaults to the scene duration times the snapshot rate.
    #[serde(default)]
    pub num_snapshots: Option<usize>,
    /// Enables the receive-gain and clipping model.
    #[serde(default)]
    pub agc: Option<AgcSettings>,
    /// Transmit order of the TDMA slots; index order when absent.
    #[serde(default)]
    pub slot_order: Option<Vec<usize>>,
    pub scene: Scene,
}

#[derive(Debug, Parser)]
#[command(name = "dmimo", version, about = "Distributed-MIMO channel sounding laboratory")]
struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "DMIMO_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a preset scene file.
    Scene(SceneArgs),
    /// Synthesize a campaign from a scene file into an archive.
    Simulate(SimulateArgs),
    /// Equalize, fill DC and remove CFO and delay offsets.
    Calibrate(CalibrateArgs),
    /// MRT gain, local scattering function, stationarity and delay spread.
    Stats(StatsArgs),
    /// Sliding-window MUSIC and ESPRIT Doppler estimates of one link.
    Doppler(DopplerArgs),
    /// Bartlett pseudo-likelihood particle-filter tracking of the agent.
    Track(TrackArgs),
    /// Bartlett spectrum slices for heatmap plotting.
    Export(ExportArgs),
    /// Print the TDMA slot table of one snapshot.
    Schedule(ScheduleArgs),
}

#[derive(Debug, Args, Serialize)]
struct SceneArgs {
    #[arg(long)]
    preset: String,
    #[arg(long)]
    out: PathBuf,
    /// Seed for randomized presets.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Overrides the preset length, seconds.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    snr_db: Option<f64>,
    /// Record only the uplinks.
    #[arg(long)]
    uplink_only: bool,
}

#[derive(Debug, Args, Serialize)]
struct SimulateArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Leave the ground-truth trajectory out of the archive.
    #[arg(long)]
    no_truth: bool,
}

#[derive(Debug, Args, Serialize)]
struct CalibrateArgs {
    #[arg(long)]
    archive: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Report path; `<out>.calibration.json` by default.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    window_start: usize,
    #[arg(long, default_value_t = 150)]
    window_len: usize,
    #[arg(long, default_value_t = 1)]
    shift: usize,
    #[arg(long)]
    no_dc: bool,
    #[arg(long)]
    no_cfo: bool,
    #[arg(long)]
    no_delay: bool,
}

#[derive(Debug, Args, Serialize)]
struct StatsArgs {
    #[arg(long)]
    archive: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Links as `rx,tx`; all uplinks by default.
    #[arg(long = "link", value_parser = parse_link)]
    links: Vec<LinkId>,
    /// Snapshots per LSF region.
    #[arg(long, default_value_t = 75)]
    m: usize,
    #[arg(long)]
    delta_t: Option<usize>,
    #[arg(long, default_value_t = 1)]
    time_tapers: usize,
    #[arg(long, default_value_t = 2)]
    freq_tapers: usize,
    /// Collinearity thresholds.
    #[arg(long = "c-th", default_values_t = vec![0.9, 0.7])]
    c_th: Vec<f64>,
    /// Anchor whose gain is the single-antenna reference.
    #[arg(long, default_value_t = 0)]
    baseline: usize,
}

#[derive(Debug, Args, Serialize)]
struct DopplerArgs {
    #[arg(long)]
    archive: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Link as `rx,tx`; anchor 0 receiving from the agent by default.
    #[arg(long, value_parser = parse_link)]
    link: Option<LinkId>,
    #[arg(long, default_value_t = 150)]
    window: usize,
    #[arg(long, default_value_t = 25)]
    hop: usize,
    #[arg(long)]
    subarray: Option<usize>,
    #[arg(long, default_value_t = 2)]
    order: usize,
    #[arg(long, default_value_t = 1024)]
    grid: usize,
}

#[derive(Debug, Args, Serialize)]
struct TrackArgs {
    #[arg(long)]
    archive: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 150)]
    n_nu: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value_t = 2000)]
    particles: usize,
    #[arg(long, default_value_t = 0.5)]
    process_noise: f64,
    #[arg(long, default_value_t = 20.0)]
    beta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Initial position `x,y`; the ground truth at the first step by default.
    #[arg(long, value_parser = parse_pair)]
    init: Option<[f64; 2]>,
    #[arg(long, value_parser = parse_pair, default_value = "0,0")]
    init_velocity: [f64; 2],
    /// Agent height; the ground truth or 0.5 m by default.
    #[arg(long)]
    height: Option<f64>,
    /// Seconds excluded from the converged error.
    #[arg(long, default_value_t = 1.0)]
    convergence: f64,
}

#[derive(Debug, Args, Serialize)]
struct ExportArgs {
    #[arg(long)]
    archive: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// First snapshot of the window.
    #[arg(long, default_value_t = 0)]
    start: usize,
    #[arg(long, default_value_t = 150)]
    n_nu: usize,
    /// Hypothesis position `x,y`; the ground truth at the window centre by default.
    #[arg(long, value_parser = parse_pair)]
    position: Option<[f64; 2]>,
    #[arg(long, value_parser = parse_pair)]
    velocity: Option<[f64; 2]>,
    #[arg(long)]
    height: Option<f64>,
    /// Half width of the position axes, meters.
    #[arg(long, default_value_t = 5.0)]
    span: f64,
    #[arg(long, default_value_t = 0.1)]
    step: f64,
    /// Half width of the velocity axes, m/s.
    #[arg(long, default_value_t = 2.0)]
    velocity_span: f64,
    #[arg(long, default_value_t = 0.02)]
    velocity_step: f64,
}

#[derive(Debug, Args, Serialize)]
struct ScheduleArgs {
    /// Scene file whose configuration is used; defaults otherwise.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    snapshot: usize,
    /// Write to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_link(s: &str) -> Result<LinkId, String> {
    let [rx, tx] = parse_numbers::<usize>(s)?;
    Ok(LinkId::new(rx, tx))
}

fn parse_pair(s: &str) -> Result<[f64; 2], String> {
    parse_numbers::<f64>(s)
}

fn parse_numbers<T: std::str::FromStr>(s: &str) -> Result<[T; 2], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => Ok([
            a.parse().map_err(|_| format!("bad number '{a}'"))?,
            b.parse().map_err(|_| format!("bad number '{b}'"))?,
        ]),
        _ => Err(format!("expected two comma-separated numbers, got '{s}'")),
    }
}

/// Failure reported on stderr as `{"error": {"code": ..., "message": ...}}`.
#[derive(Debug)]
pub struct CliError {
    pub code: String,
    pub message: String,
    pub exit: i32,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: "usage".into(), message: message.into(), exit: EXIT_USAGE }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        let (code, exit) = match &e {
            Error::InvalidConfig(_) => ("invalid_config", EXIT_USAGE),
            Error::InvalidScene(_) => ("invalid_scene", EXIT_USAGE),
            Error::InvalidParameter(_) => ("invalid_parameter", EXIT_USAGE),
            Error::InvalidWindow(_) => ("invalid_window", EXIT_USAGE),
            Error::InvalidLink { .. } => ("invalid_link", EXIT_USAGE),
            Error::MissingLink { .. } => ("missing_link", EXIT_USAGE),
            Error::TooManyTapers { .. } => ("too_many_tapers", EXIT_USAGE),
            Error::TooFewSubcarriers(_) => ("too_few_subcarriers", EXIT_USAGE),
            Error::Json(_) => ("bad_json", EXIT_USAGE),
            Error::Archive(a) => (a.code(), EXIT_ARCHIVE),
            Error::Io(_) => ("io", EXIT_RUNTIME),
            _ => ("runtime", EXIT_RUNTIME),
        };
        Self { code: code.into(), message, exit }
    }
}

impl From<crate::archive::ArchiveError> for CliError {
    fn from(e: crate::archive::ArchiveError) -> Self {
        Error::Archive(e).into()
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e).into()
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn report_error(e: &CliError) {
    let v = serde_json::json!({ "error": { "code": e.code, "message": e.message } });
    eprintln!("{v}");
}

fn warn(message: &str) {
    eprintln!("{}", serde_json::json!({ "warning": message }));
}

/// Runs the command line `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            report_error(&CliError::usage(e.to_string().trim_end()));
            return EXIT_USAGE;
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            report_error(&CliError::usage("--threads must be positive"));
            return EXIT_USAGE;
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            report_error(&CliError { code: "runtime".into(), message: e.to_string(), exit: EXIT_RUNTIME });
            return EXIT_RUNTIME;
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            report_error(&e);
            e.exit
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Scene(a) => cmd_scene(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Doppler(a) => cmd_doppler(a),
        Command::Track(a) => cmd_track(a),
        Command::Export(a) => cmd_export(a),
        Command::Schedule(a) => cmd_schedule(a),
    }
}

/// Reproducibility record written next to every output.
#[derive(Debug, Serialize)]
struct Manifest<'a, A: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    arguments: &'a A,
    seed: Option<u64>,
    config_sha256: Option<String>,
    outputs: Vec<String>,
}

pub fn config_hash(config: &SoundingConfig) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(bytes))
}

fn write_manifest<A: Serialize>(
    path: &Path,
    command: &'static str,
    args: &A,
    seed: Option<u64>,
    config: Option<&SoundingConfig>,
    outputs: &[PathBuf],
) -> CliResult<()> {
    let m = Manifest {
        tool: "dmimo",
        version: env!("CARGO_PKG_VERSION"),
        command,
        arguments: args,
        seed,
        config_sha256: config.map(config_hash),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    let mut text = serde_json::to_string_pretty(&m)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Refuses to write over the input.
fn ensure_distinct(input: &Path, output: &Path) -> CliResult<()> {
    let same = match (input.canonicalize(), output.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => input == output,
    };
    if same {
        return Err(CliError::usage(format!("output {} would overwrite the input", output.display())));
    }
    Ok(())
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn write_text(path: PathBuf, text: &str, outputs: &mut Vec<PathBuf>) -> CliResult<()> {
    std::fs::write(&path, text)?;
    outputs.push(path);
    Ok(())
}

fn write_json<T: Serialize>(path: PathBuf, value: &T, outputs: &mut Vec<PathBuf>) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text, outputs)
}

fn load_archive(path: &Path) -> CliResult<SoundingArchive> {
    Ok(read_archive(path)?)
}

fn equalized(archive: &SoundingArchive) -> CliResult<SnapshotTensor> {
    if archive.tensor.equalized {
        return Ok(archive.tensor.clone());
    }
    let reference = ReferenceSignal::new(&archive.tensor.config, archive.reference.clone())?;
    Ok(archive.tensor.equalize(&reference)?)
}

fn agent_index(archive: &SoundingArchive) -> usize {
    archive.tensor.config.num_antennas - 1
}

fn anchors(archive: &SoundingArchive) -> CliResult<Vec<[f64; 3]>> {
    archive
        .anchor_positions
        .clone()
        .ok_or_else(|| CliError::usage("archive carries no anchor positions"))
}

fn cmd_scene(a: SceneArgs) -> CliResult<()> {
    let config = SoundingConfig::default();
    let mut scene = presets::preset(&a.preset, &config, a.seed)?;
    if a.duration.is_some() || a.snr_db.is_some() {
        let dur = a.duration.unwrap_or(scene.duration_s);
        let snr = a.snr_db.unwrap_or(30.0);
        scene = match a.preset.as_str() {
            "ref" => presets::ref_like(&config, dur, snr)?,
            "industrial" => presets::industrial(&config, dur, snr, a.seed)?,
            "static" => presets::static_hall(&config, dur, snr)?,
            _ => {
                if a.duration.is_some() {
                    return Err(CliError::usage(format!("preset '{}' has a fixed length", a.preset)));
                }
                presets::loop_scene(&config, snr)?
            }
        };
    }
    let file = SceneFile {
        config,
        reference: ReferenceSpec::default(),
        links: if a.uplink_only { LinkSelection::Uplink } else { LinkSelection::All },
        num_snapshots: None,
        agc: None,
        slot_order: None,
        scene,
    };
    let mut outputs = vec![];
    write_json(a.out.clone(), &file, &mut outputs)?;
    write_manifest(&sidecar(&a.out, ".manifest.json"), "scene", &a, Some(a.seed), Some(&file.config), &outputs)
}

fn read_scene_file(path: &Path) -> CliResult<SceneFile> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn cmd_simulate(a: SimulateArgs) -> CliResult<()> {
    ensure_distinct(&a.scene, &a.out)?;
    let sf = read_scene_file(&a.scene)?;
    let config = sf.config.clone();
    config.validate(sf.agc.is_some())?;
    sf.scene.validate(&config)?;
    let reference = ReferenceSignal::new(&config, sf.reference.clone())?;
    let schedule = match &sf.slot_order {
        Some(order) => build_schedule_with_order(&config, order.clone())?,
        None => build_schedule(&config)?,
    };
    let options = CampaignOptions {
        links: sf.links.clone(),
        num_snapshots: sf.num_snapshots,
        agc: sf.agc,
        schedule: Some(schedule.clone()),
    };
    let tensor = generate_campaign_with(&sf.scene, &config, &reference, a.seed, &options)?;
    let mut provenance = BTreeMap::new();
    provenance.insert("generator".to_string(), format!("dmimo {}", env!("CARGO_PKG_VERSION")));
    provenance.insert("seed".to_string(), a.seed.to_string());
    provenance.insert("scene_sha256".to_string(), hex::encode(Sha256::digest(serde_json::to_vec(&sf)?)));
    let archive = SoundingArchive {
        reference: sf.reference.clone(),
        schedule,
        tensor,
        anchor_positions: Some(sf.scene.anchor_positions.clone()),
        ground_truth: (!a.no_truth).then(|| sf.scene.agent_trajectory.clone()),
        provenance,
    };
    write_archive(&a.out, &archive)?;
    write_manifest(&sidecar(&a.out, ".manifest.json"), "simulate", &a, Some(a.seed), Some(&config), &[a.out.clone()])
}

fn cmd_calibrate(a: CalibrateArgs) -> CliResult<()> {
    ensure_distinct(&a.archive, &a.out)?;
    let mut archive = load_archive(&a.archive)?;
    let plan = CalibrationPlan {
        window_start: a.window_start,
        window_len: a.window_len,
        shift: a.shift,
        interpolate_dc: !a.no_dc,
        correct_cfo: !a.no_cfo,
        correct_delay: !a.no_delay,
    };
    if plan.window_len < 2 || plan.window_start + plan.window_len > archive.tensor.num_snapshots() {
        return Err(CliError::usage(format!(
            "calibration window {}+{} does not fit {} snapshots",
            plan.window_start,
            plan.window_len,
            archive.tensor.num_snapshots()
        )));
    }
    let reference = ReferenceSignal::new(&archive.tensor.config, archive.reference.clone())?;
    let (tensor, report) = calibrate(
        &archive.tensor,
        &reference,
        &plan,
        archive.anchor_positions.as_deref(),
        archive.ground_truth.as_deref(),
    )?;
    archive.tensor = tensor;
    archive.provenance.insert("calibrated_from".to_string(), a.archive.display().to_string());
    write_archive(&a.out, &archive)?;
    let report_path = a.report.clone().unwrap_or_else(|| sidecar(&a.out, ".calibration.json"));
    let mut outputs = vec![a.out.clone()];
    write_json(report_path, &report, &mut outputs)?;
    write_manifest(&sidecar(&a.out, ".manifest.json"), "calibrate", &a, None, Some(&archive.tensor.config), &outputs)
}

/// Agent speed at every snapshot of link `li`.
fn speeds(tensor: &SnapshotTensor, li: usize, truth: &[TrajectoryPoint]) -> Vec<f64> {
    tensor
        .link_timestamps(li)
        .iter()
        .map(|&t| {
            let (_, v) = trajectory_state(truth, t);
            (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
        })
        .collect()
}

#[derive(Serialize)]
struct LinkSummary {
    rx: usize,
    tx: usize,
    regions: usize,
    median_rms_delay_spread_s: Option<f64>,
    /// Per threshold: `[c_th, median seconds, median meters]`.
    stationarity: Vec<(f64, Option<f64>, Option<f64>)>,
    first_boundary: Vec<(f64, Option<usize>)>,
}

#[derive(Serialize)]
struct StatsSummary {
    mean_array_gain_db: Option<f64>,
    mean_reference_gain_db: Option<f64>,
    links: Vec<LinkSummary>,
}

fn cmd_stats(a: StatsArgs) -> CliResult<()> {
    if a.c_th.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(CliError::usage("collinearity thresholds must lie in [0, 1]"));
    }
    let archive = load_archive(&a.archive)?;
    let tensor = equalized(&archive)?;
    let params = LsfParams { m: a.m, delta_t: a.delta_t, i: a.time_tapers, j: a.freq_tapers, ..Default::default() };
    let tapers = params.tapers(tensor.num_bins())?;
    let agent = agent_index(&archive);
    let links: Vec<LinkId> =
        if a.links.is_empty() { crate::stats::uplink_links(&tensor, agent) } else { a.links.clone() };
    for l in &links {
        tensor.require_link(*l)?;
    }
    create_dir(&a.out_dir)?;
    let mut outputs = vec![];

    let mut summary = StatsSummary { mean_array_gain_db: None, mean_reference_gain_db: None, links: vec![] };
    if !crate::stats::uplink_links(&tensor, agent).is_empty() {
        let mrt = mrt_from_tensor(&tensor, agent, a.baseline)?;
        summary.mean_array_gain_db = Some(mrt.mean_array_gain_db);
        summary.mean_reference_gain_db = Some(mrt.mean_reference_gain_db);
        write_text(a.out_dir.join("mrt.csv"), &mrt.to_csv(), &mut outputs)?;
    }
    for l in &links {
        let tag = format!("{}_{}", l.rx, l.tx);
        let stack = lsf_from_tensor(&tensor, *l, &tapers, a.delta_t)?;
        let col = collinearity(&stack)?;
        write_text(a.out_dir.join(format!("collinearity_{tag}.csv")), &col.to_csv(), &mut outputs)?;
        let li = tensor.require_link(*l)?;
        let speed = archive.ground_truth.as_deref().map(|tr| speeds(&tensor, li, tr));
        let mut st_summary = vec![];
        let mut boundaries = vec![];
        for &c in &a.c_th {
            let st = col.stationarity(&stack, c, speed.as_deref());
            write_text(a.out_dir.join(format!("stationarity_{tag}_c{c}.csv")), &st.to_csv(), &mut outputs)?;
            st_summary.push((c, st.median_seconds(), st.median_meters()));
            boundaries.push((c, col.first_boundary(c)));
        }
        let ds = delay_spread(&stack);
        write_text(a.out_dir.join(format!("delay_spread_{tag}.csv")), &ds.to_csv(), &mut outputs)?;
        summary.links.push(LinkSummary {
            rx: l.rx,
            tx: l.tx,
            regions: stack.layout.num_regions,
            median_rms_delay_spread_s: ds.median_rms_s(),
            stationarity: st_summary,
            first_boundary: boundaries,
        });
    }
    write_json(a.out_dir.join("stats_summary.json"), &summary, &mut outputs)?;
    write_manifest(&a.out_dir.join("manifest.json"), "stats", &a, None, Some(&tensor.config), &outputs)
}

fn cmd_doppler(a: DopplerArgs) -> CliResult<()> {
    let archive = load_archive(&a.archive)?;
    let tensor = equalized(&archive)?;
    let link = a.link.unwrap_or(LinkId::new(0, agent_index(&archive)));
    let params =
        DopplerParams { window: a.window, hop: a.hop, subarray: a.subarray, model_order: a.order, grid_points: a.grid };
    if params.model_order == 0 || params.model_order >= params.subarray_len() {
        return Err(CliError::usage("model order must be positive and below the subarray length"));
    }
    let geometry = match (&archive.anchor_positions, &archive.ground_truth) {
        (Some(an), Some(tr)) => Some((an.as_slice(), tr.as_slice())),
        _ => None,
    };
    let dsd = dsd_sweep(&tensor, link, &params, geometry)?;
    create_dir(&a.out_dir)?;
    let tag = format!("{}_{}", link.rx, link.tx);
    let mut outputs = vec![];
    write_text(a.out_dir.join(format!("dsd_music_{tag}.csv")), &dsd.music_csv(), &mut outputs)?;
    write_text(a.out_dir.join(format!("dsd_esprit_{tag}.csv")), &dsd.esprit_csv(), &mut outputs)?;
    write_manifest(&a.out_dir.join("manifest.json"), "doppler", &a, None, Some(&tensor.config), &outputs)
}

fn default_height(archive: &SoundingArchive, height: Option<f64>) -> f64 {
    height
        .or_else(|| archive.ground_truth.as_ref().and_then(|tr| tr.first()).map(|p| p.position[2]))
        .unwrap_or(AGENT_HEIGHT_M)
}

#[derive(Serialize)]
struct TrackSummary {
    steps: usize,
    rmse_m: Option<f64>,
    rmse_converged_m: Option<f64>,
    degenerate: bool,
    warnings: Vec<String>,
}

fn cmd_track(a: TrackArgs) -> CliResult<()> {
    let archive = load_archive(&a.archive)?;
    let tensor = equalized(&archive)?;
    let agent = agent_index(&archive);
    let ctx = PositioningContext::new(&tensor.config, anchors(&archive)?, default_height(&archive, a.height));
    if ctx.anchors.len() != agent {
        return Err(CliError::usage(format!("{} anchor positions for {agent} anchors", ctx.anchors.len())));
    }
    let pf = PfConfig {
        num_particles: a.particles,
        process_noise: a.process_noise,
        beta: a.beta,
        seed: a.seed,
        ..Default::default()
    };
    pf.validate()?;
    if a.n_nu == 0 || a.n_nu > tensor.num_snapshots() {
        return Err(CliError::usage(format!("window of {} snapshots in a record of {}", a.n_nu, tensor.num_snapshots())));
    }
    let first_t = tensor.timestamp(tensor.require_link(LinkId::new(0, agent))?, a.n_nu - 1);
    let init = match (a.init, &archive.ground_truth) {
        (Some(p), _) => p,
        (None, Some(tr)) => {
            let (p, _) = trajectory_state(tr, first_t);
            [p[0], p[1]]
        }
        (None, None) => return Err(CliError::usage("--init is required when the archive has no ground truth")),
    };
    let config = TrackConfig {
        n_nu: a.n_nu,
        stride: a.stride,
        delay_grid: DelayGrid::default(),
        pf,
        initial_position: init,
        initial_velocity: a.init_velocity,
        convergence_s: a.convergence,
    };
    let result = track(&tensor, &ctx, agent, &config, archive.ground_truth.as_deref())?;
    for w in &result.warnings {
        warn(w);
    }
    create_dir(&a.out_dir)?;
    let mut outputs = vec![];
    write_text(a.out_dir.join("track.csv"), &result.to_csv(), &mut outputs)?;
    let summary = TrackSummary {
        steps: result.steps.len(),
        rmse_m: result.rmse_m,
        rmse_converged_m: result.rmse_converged_m,
        degenerate: result.degenerate,
        warnings: result.warnings.clone(),
    };
    write_json(a.out_dir.join("track_summary.json"), &summary, &mut outputs)?;
    write_manifest(&a.out_dir.join("manifest.json"), "track", &a, Some(a.seed), Some(&tensor.config), &outputs)
}

fn cmd_export(a: ExportArgs) -> CliResult<()> {
    if !(a.span > 0.0 && a.step > 0.0 && a.velocity_span > 0.0 && a.velocity_step > 0.0) {
        return Err(CliError::usage("spans and steps must be positive"));
    }
    let archive = load_archive(&a.archive)?;
    let tensor = equalized(&archive)?;
    let agent = agent_index(&archive);
    let ctx = PositioningContext::new(&tensor.config, anchors(&archive)?, default_height(&archive, a.height));
    if a.n_nu == 0 || a.start + a.n_nu > tensor.num_snapshots() {
        return Err(CliError::usage(format!(
            "window {}+{} does not fit {} snapshots",
            a.start,
            a.n_nu,
            tensor.num_snapshots()
        )));
    }
    let windows = crate::positioning::uplink_windows(&tensor, ctx.anchors.len(), agent, a.start, a.n_nu)?;
    let bank = WindowBank::from_windows(&ctx, DelayGrid::default(), &windows)?;
    let li = tensor.require_link(LinkId::new(0, agent))?;
    let centre_t = 0.5 * (tensor.timestamp(li, a.start) + tensor.timestamp(li, a.start + a.n_nu - 1));
    let truth = archive.ground_truth.as_deref().map(|tr| trajectory_state(tr, centre_t));
    let position = a
        .position
        .or(truth.map(|(p, _)| [p[0], p[1]]))
        .ok_or_else(|| CliError::usage("--position is required without ground truth"))?;
    let velocity = a
        .velocity
        .or(truth.map(|(_, v)| [v[0], v[1]]))
        .ok_or_else(|| CliError::usage("--velocity is required without ground truth"))?;

    create_dir(&a.out_dir)?;
    let xs = axis(position[0] - a.span, position[0] + a.span, a.step);
    let ys = axis(position[1] - a.span, position[1] + a.span, a.step);
    let vxs = axis(velocity[0] - a.velocity_span, velocity[0] + a.velocity_span, a.velocity_step);
    let vys = axis(velocity[1] - a.velocity_span, velocity[1] + a.velocity_span, a.velocity_step);
    let mut outputs = vec![];
    let slices = [
        ("position_joint", SpectrumKind::Position { velocity }, BartlettMode::Joint, &xs, &ys),
        ("position_delay_only", SpectrumKind::Position { velocity }, BartlettMode::DelayOnly, &xs, &ys),
        ("position_doppler_only", SpectrumKind::Position { velocity }, BartlettMode::DopplerOnly, &xs, &ys),
        ("velocity_joint", SpectrumKind::Velocity { position }, BartlettMode::Joint, &vxs, &vys),
    ];
    for (stem, kind, mode, x, y) in slices {
        let dump = spectrum_grid(&bank, &ctx, kind, mode, x, y, a.start)?;
        let (bin, json) = dump.write(&a.out_dir, stem)?;
        outputs.push(bin);
        outputs.push(json);
    }
    write_manifest(&a.out_dir.join("manifest.json"), "export", &a, None, Some(&tensor.config), &outputs)
}

fn cmd_schedule(a: ScheduleArgs) -> CliResult<()> {
    let (config, order) = match &a.scene {
        Some(p) => {
            let sf = read_scene_file(p)?;
            (sf.config, sf.slot_order)
        }
        None => (SoundingConfig::default(), None),
    };
    config.validate(false)?;
    let schedule = match order {
        Some(o) => build_schedule_with_order(&config, o)?,
        None => build_schedule(&config)?,
    };
    let mut text = serde_json::to_string_pretty(&schedule.dump(a.snapshot))?;
    text.push('\n');
    match &a.out {
        Some(path) => {
            std::fs::write(path, &text)?;
            write_manifest(&sidecar(path, ".manifest.json"), "schedule", &a, None, Some(&config), &[path.clone()])
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
