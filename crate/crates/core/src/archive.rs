//! Single-file snapshot archive.
//!
//! Layout: the 8-byte magic `DMIMOARC`, a little-endian `u32` format
//! version, a `u64` header length, the JSON header, then the payload. For
//! every link the payload holds its `f64` timestamps followed by the
//! interleaved `f32` complex samples, snapshot-major. All numbers are
//! little-endian. The header records the byte range of each link.

use num_complex::Complex32;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::config::SoundingConfig;
use crate::geometry::Vec3;
use crate::scene::{LinkId, ReferenceSpec, SnapshotTensor, TrajectoryPoint};
use crate::tdma::TdmaSchedule;

pub const MAGIC: &[u8; 8] = b"DMIMOARC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ArchiveError {
    #[error("not a sounding archive (bad magic)")]
    BadMagic,
    #[error("archive format version {found}, this build reads {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("archive truncated: need {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("archive dimensions inconsistent: {0}")]
    DimensionMismatch(String),
    #[error("archive header is not valid JSON: {0}")]
    Header(#[from] serde_json::Error),
    #[error("archive i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl ArchiveError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            ArchiveError::BadMagic => "bad_magic",
            ArchiveError::VersionMismatch { .. } => "version_mismatch",
            ArchiveError::Truncated { .. } => "truncated",
            ArchiveError::DimensionMismatch(_) => "dimension_mismatch",
            ArchiveError::Header(_) => "bad_header",
            ArchiveError::Io(_) => "io",
        }
    }
}

type Result<T> = std::result::Result<T, ArchiveError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkEntry {
    pub rx: usize,
    pub tx: usize,
    /// Byte offset from the start of the payload.
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveHeader {
    pub format_version: u32,
    pub units: BTreeMap<String, String>,
    pub config: SoundingConfig,
    pub reference: ReferenceSpec,
    pub schedule: TdmaSchedule,
    pub num_snapshots: usize,
    pub num_bins: usize,
    pub equalized: bool,
    pub links: Vec<LinkEntry>,
    /// `[link index, snapshot]` pairs recorded while saturated.
    pub clip_flags: Vec<[usize; 2]>,
    #[serde(default)]
    pub anchor_positions: Option<Vec<Vec3>>,
    #[serde(default)]
    pub ground_truth: Option<Vec<TrajectoryPoint>>,
    /// Free-form provenance, e.g. seed and the producing command.
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

/// A tensor plus everything needed to post-process it.
#[derive(Debug, Clone, PartialEq)]
pub struct SoundingArchive {
    pub reference: ReferenceSpec,
    pub schedule: TdmaSchedule,
    pub tensor: SnapshotTensor,
    pub anchor_positions: Option<Vec<Vec3>>,
    pub ground_truth: Option<Vec<TrajectoryPoint>>,
    pub provenance: BTreeMap<String, String>,
}

fn default_units() -> BTreeMap<String, String> {
    [("frequency", "Hz"), ("time", "s"), ("distance", "m"), ("power", "dBm"), ("samples", "complex f32")]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn link_bytes(ns: usize, nb: usize) -> u64 {
    (ns * 8 + ns * nb * 8) as u64
}

impl SoundingArchive {
    pub fn header(&self) -> ArchiveHeader {
        let t = &self.tensor;
        let len = link_bytes(t.num_snapshots(), t.num_bins());
        ArchiveHeader {
            format_version: FORMAT_VERSION,
            units: default_units(),
            config: t.config.clone(),
            reference: self.reference.clone(),
            schedule: self.schedule.clone(),
            num_snapshots: t.num_snapshots(),
            num_bins: t.num_bins(),
            equalized: t.equalized,
            links: t
                .links()
                .iter()
                .enumerate()
                .map(|(i, l)| LinkEntry { rx: l.rx, tx: l.tx, offset: i as u64 * len, length: len })
                .collect(),
            clip_flags: t.clip_list().into_iter().map(|(l, n)| [l, n]).collect(),
            anchor_positions: self.anchor_positions.clone(),
            ground_truth: self.ground_truth.clone(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header())?;
        let t = &self.tensor;
        let (ns, nb) = (t.num_snapshots(), t.num_bins());
        let mut out = Vec::with_capacity(20 + header.len() + t.num_links() * link_bytes(ns, nb) as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for li in 0..t.num_links() {
            for ts in t.link_timestamps(li) {
                out.extend_from_slice(&ts.to_le_bytes());
            }
            for n in 0..ns {
                for c in t.snapshot_f32(li, n) {
                    out.extend_from_slice(&c.re.to_le_bytes());
                    out.extend_from_slice(&c.im.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let have = bytes.len() as u64;
        if bytes.len() < 8 {
            return Err(if MAGIC.starts_with(bytes) { ArchiveError::Truncated { expected: 20, actual: have } } else { ArchiveError::BadMagic });
        }
        if &bytes[..8] != MAGIC {
            return Err(ArchiveError::BadMagic);
        }
        if bytes.len() < 20 {
            return Err(ArchiveError::Truncated { expected: 20, actual: have });
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(ArchiveError::VersionMismatch { found: version, expected: FORMAT_VERSION });
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let payload_start = 20u64.checked_add(hlen).ok_or(ArchiveError::Truncated { expected: u64::MAX, actual: have })?;
        if have < payload_start {
            return Err(ArchiveError::Truncated { expected: payload_start, actual: have });
        }
        let header: ArchiveHeader = serde_json::from_slice(&bytes[20..payload_start as usize])?;
        if header.format_version != version {
            return Err(ArchiveError::VersionMismatch { found: header.format_version, expected: FORMAT_VERSION });
        }
        let (ns, nb) = (header.num_snapshots, header.num_bins);
        if nb != header.config.num_active_subcarriers {
            return Err(ArchiveError::DimensionMismatch(format!(
                "header lists {nb} bins, config has {}",
                header.config.num_active_subcarriers
            )));
        }
        let len = link_bytes(ns, nb);
        let mut expected_end = payload_start;
        for (i, e) in header.links.iter().enumerate() {
            if e.length != len || e.offset != i as u64 * len {
                return Err(ArchiveError::DimensionMismatch(format!(
                    "link {i} spans {} bytes at offset {}, expected {len} at {}",
                    e.length,
                    e.offset,
                    i as u64 * len
                )));
            }
            expected_end = payload_start + e.offset + e.length;
        }
        if have < expected_end {
            return Err(ArchiveError::Truncated { expected: expected_end, actual: have });
        }
        if have > expected_end {
            return Err(ArchiveError::DimensionMismatch(format!(
                "{} trailing bytes after payload",
                have - expected_end
            )));
        }

        let nl = header.links.len();
        let mut data = Vec::with_capacity(nl * ns * nb);
        let mut timestamps = Vec::with_capacity(nl * ns);
        let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        for e in &header.links {
            let base = (payload_start + e.offset) as usize;
            for n in 0..ns {
                let o = base + 8 * n;
                timestamps.push(f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap()));
            }
            let samples = base + 8 * ns;
            for i in 0..ns * nb {
                let o = samples + 8 * i;
                data.push(Complex32::new(f32_at(o), f32_at(o + 4)));
            }
        }
        let mut clipped = vec![false; nl * ns];
        for &[l, n] in &header.clip_flags {
            if l >= nl || n >= ns {
                return Err(ArchiveError::DimensionMismatch(format!("clip flag ({l}, {n}) out of range")));
            }
            clipped[l * ns + n] = true;
        }
        let links = header.links.iter().map(|e| LinkId::new(e.rx, e.tx)).collect();
        let tensor = SnapshotTensor::from_parts(header.config, links, ns, data, timestamps, clipped, header.equalized)
            .map_err(|e| ArchiveError::DimensionMismatch(e.to_string()))?;
        Ok(Self {
            reference: header.reference,
            schedule: header.schedule,
            tensor,
            anchor_positions: header.anchor_positions,
            ground_truth: header.ground_truth,
            provenance: header.provenance,
        })
    }
}

/// Writes atomically: a sibling temporary file is renamed into place.
pub fn write_archive(path: &Path, archive: &SoundingArchive) -> Result<()> {
    let bytes = archive.to_bytes()?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads and validates a whole archive; nothing is returned on any error.
pub fn read_archive(path: &Path) -> Result<SoundingArchive> {
    SoundingArchive::from_bytes(&std::fs::read(path)?)
}
