//! Footage ingestion: frame directories, rate-based sampling and person crops.
//!
//! The canonical input is a directory holding images plus a `frames.json`
//! manifest. Container formats are only supported through an external
//! transcoder (see [`Transcoder`]), which writes such a directory.

use std::fmt;
use std::fs;
use std::io::{self, Cursor};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::str::FromStr;

use image::{GenericImageView, ImageFormat};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::digest::sha256_hex;
use crate::providers::{Detection, DetectionClient, ProviderError};

pub const MANIFEST_FILE: &str = "frames.json";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed manifest {}: {reason}", path.display())]
    MalformedManifest { path: PathBuf, reason: String },
    #[error("image file not found: {}", .0.display())]
    MissingImageFile(PathBuf),
    #[error("video has no frames")]
    EmptyVideo,
    #[error("ego-motion list has {got} entries, expected {expected} (or none)")]
    EgoMotionMismatch { expected: usize, got: usize },
    #[error("invalid sampling rate {0:?}")]
    InvalidRate(String),
    #[error("person detector unavailable: {0}")]
    DetectorUnavailable(#[source] ProviderError),
    #[error("cannot decode image {}: {reason}", path.display())]
    DecodeError { path: PathBuf, reason: String },
    #[error("transcoding failed: {0}")]
    Transcode(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameEntry {
    pub path: PathBuf,
    pub timestamp_ms: u64,
}

/// Raw footage before sampling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceVideo {
    pub id: String,
    pub frame_entries: Vec<FrameEntry>,
    /// One free-text description of the robot's own motion per consecutive
    /// pair of sampled frames. May be empty.
    pub ego_motion: Vec<String>,
    pub duration_ms: u64,
}

/// Pixel rectangle inside an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropBox {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl CropBox {
    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.width > 0
            && self.height > 0
            && u64::from(self.x) + u64::from(self.width) <= u64::from(width)
            && u64::from(self.y) + u64::from(self.height) <= u64::from(height)
    }
}

/// One sampled frame, the unit every later stage works on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub video_id: String,
    pub frame_index: usize,
    pub timestamp_ms: u64,
    /// The image later stages read: the crop when one was made, otherwise the
    /// original frame.
    pub image_ref: PathBuf,
    /// Digest of the bytes at `image_ref`.
    pub content_hash: String,
    /// Digest of the original, uncropped frame.
    pub source_hash: String,
    pub crop_box: Option<CropBox>,
    pub person_detected: bool,
}

/// Sampling rate in Hz, kept as an exact fraction so target times never
/// accumulate rounding error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingRate {
    num: u64,
    den: u64,
}

impl SamplingRate {
    pub fn new(num: u64, den: u64) -> Result<Self, IngestError> {
        if num == 0 || den == 0 {
            return Err(IngestError::InvalidRate(format!("{num}/{den}")));
        }
        let g = gcd(num, den);
        Ok(Self { num: num / g, den: den / g })
    }

    pub fn hz(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn numerator(&self) -> u64 {
        self.num
    }

    pub fn denominator(&self) -> u64 {
        self.den
    }
}

impl Default for SamplingRate {
    fn default() -> Self {
        Self { num: 2, den: 1 }
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl FromStr for SamplingRate {
    type Err = IngestError;

    /// Accepts integers (`2`), decimals (`0.5`) and fractions (`30000/1001`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || IngestError::InvalidRate(s.to_string());
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let n = n.trim().parse::<u64>().map_err(|_| bad())?;
            let d = d.trim().parse::<u64>().map_err(|_| bad())?;
            return Self::new(n, d).map_err(|_| bad());
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if int.is_empty() && frac.is_empty() {
            return Err(bad());
        }
        if !int.chars().all(|c| c.is_ascii_digit()) || !frac.chars().all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        if frac.len() > 12 {
            return Err(bad());
        }
        let den = 10u64.pow(frac.len() as u32);
        let int_part = if int.is_empty() { 0 } else { int.parse::<u64>().map_err(|_| bad())? };
        let frac_part = if frac.is_empty() { 0 } else { frac.parse::<u64>().map_err(|_| bad())? };
        let num = int_part
            .checked_mul(den)
            .and_then(|v| v.checked_add(frac_part))
            .ok_or_else(bad)?;
        Self::new(num, den).map_err(|_| bad())
    }
}

impl fmt::Display for SamplingRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl Serialize for SamplingRate {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for SamplingRate {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Float(f64),
            Text(String),
        }
        let text = match Raw::deserialize(deserializer)? {
            Raw::Int(v) => v.to_string(),
            Raw::Float(v) => v.to_string(),
            Raw::Text(v) => v,
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SamplingConfig {
    #[serde(default)]
    pub rate_hz: SamplingRate,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDoc {
    id: String,
    frames: Vec<ManifestFrame>,
    #[serde(default)]
    ego_motion: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFrame {
    file: String,
    t_ms: u64,
}

/// Reads a frame directory described by its `frames.json`.
pub fn load_frame_dir(dir: &Path) -> Result<SourceVideo, IngestError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let malformed = |reason: String| IngestError::MalformedManifest {
        path: manifest_path.clone(),
        reason,
    };
    let text = match fs::read_to_string(&manifest_path) {
        Ok(text) => text,
        Err(err) if err.kind() == io::ErrorKind::NotFound => {
            let empty = fs::read_dir(dir)?.next().is_none();
            return Err(if empty {
                IngestError::EmptyVideo
            } else {
                malformed("manifest file missing".into())
            });
        }
        Err(err) => return Err(err.into()),
    };
    let doc: ManifestDoc = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
    if doc.id.trim().is_empty() {
        return Err(malformed("empty id".into()));
    }

    let mut entries = Vec::with_capacity(doc.frames.len());
    for (i, frame) in doc.frames.iter().enumerate() {
        if let Some(prev) = entries.last().map(|e: &FrameEntry| e.timestamp_ms) {
            if frame.t_ms <= prev {
                return Err(malformed(format!(
                    "timestamps must strictly increase (frame {i}: {} after {prev})",
                    frame.t_ms
                )));
            }
        }
        let path = dir.join(&frame.file);
        if !path.is_file() {
            return Err(IngestError::MissingImageFile(path));
        }
        entries.push(FrameEntry { path, timestamp_ms: frame.t_ms });
    }
    let duration_ms = entries.last().map_or(0, |e| e.timestamp_ms);
    Ok(SourceVideo {
        id: doc.id,
        frame_entries: entries,
        ego_motion: doc.ego_motion,
        duration_ms,
    })
}

/// Indices into `entries` selected for a rate.
///
/// Targets sit on the grid `k / rate` for every `k` with target ≤ duration;
/// when the last grid point falls short of the final timestamp, the final
/// timestamp is added as a closing target. Each target takes the entry with the
/// nearest timestamp (ties go to the earlier entry), and repeats of the same
/// entry on consecutive targets collapse.
pub fn sample_indices(entries: &[FrameEntry], duration_ms: u64, rate: SamplingRate) -> Vec<usize> {
    if entries.is_empty() {
        return Vec::new();
    }
    // Work in units of 1 / (1000 * num) seconds so that both entry times
    // (t_ms * num) and grid times (k * 1000 * den) are integers.
    let num = u128::from(rate.num);
    let step = 1000 * u128::from(rate.den);
    let limit = u128::from(duration_ms) * num;

    let mut targets = Vec::new();
    let mut k: u128 = 0;
    while k * step <= limit {
        targets.push(k * step);
        k += 1;
    }
    if targets.last().is_some_and(|&t| t < limit) {
        targets.push(limit);
    }

    let scaled: Vec<u128> = entries.iter().map(|e| u128::from(e.timestamp_ms) * num).collect();
    let mut chosen: Vec<usize> = Vec::with_capacity(targets.len());
    for target in targets {
        let idx = nearest(&scaled, target);
        if chosen.last() != Some(&idx) {
            chosen.push(idx);
        }
    }
    chosen
}

fn nearest(sorted: &[u128], target: u128) -> usize {
    let upper = sorted.partition_point(|&t| t < target);
    if upper == 0 {
        return 0;
    }
    if upper == sorted.len() {
        return sorted.len() - 1;
    }
    let below = target - sorted[upper - 1];
    let above = sorted[upper] - target;
    if below <= above {
        upper - 1
    } else {
        upper
    }
}

/// Samples `video` at the configured rate and hashes the selected images.
pub fn sample_frames(video: &SourceVideo, cfg: &SamplingConfig) -> Result<Vec<FrameRecord>, IngestError> {
    if video.frame_entries.is_empty() {
        return Err(IngestError::EmptyVideo);
    }
    let picks = sample_indices(&video.frame_entries, video.duration_ms, cfg.rate_hz);
    records_for(video, &picks)
}

/// Every entry as a record, in order. Used for reference storyboards, whose
/// frames are already keyframes.
pub fn all_frames(video: &SourceVideo) -> Result<Vec<FrameRecord>, IngestError> {
    if video.frame_entries.is_empty() {
        return Err(IngestError::EmptyVideo);
    }
    let picks: Vec<usize> = (0..video.frame_entries.len()).collect();
    records_for(video, &picks)
}

fn records_for(video: &SourceVideo, picks: &[usize]) -> Result<Vec<FrameRecord>, IngestError> {
    picks
        .iter()
        .enumerate()
        .map(|(frame_index, &entry_index)| {
            let entry = &video.frame_entries[entry_index];
            let bytes = fs::read(&entry.path).map_err(|err| match err.kind() {
                io::ErrorKind::NotFound => IngestError::MissingImageFile(entry.path.clone()),
                _ => IngestError::Io(err),
            })?;
            let hash = sha256_hex(&bytes);
            Ok(FrameRecord {
                video_id: video.id.clone(),
                frame_index,
                timestamp_ms: entry.timestamp_ms,
                image_ref: entry.path.clone(),
                content_hash: hash.clone(),
                source_hash: hash,
                crop_box: None,
                person_detected: false,
            })
        })
        .collect()
}

/// Checks the ego-motion list against a sampled sequence length.
pub fn check_ego_motion(ego_motion: &[String], frame_count: usize) -> Result<(), IngestError> {
    let expected = frame_count.saturating_sub(1);
    if ego_motion.is_empty() || ego_motion.len() == expected {
        Ok(())
    } else {
        Err(IngestError::EgoMotionMismatch { expected, got: ego_motion.len() })
    }
}

/// Picks the detection to crop to: highest confidence, then largest area, then
/// leftmost. Boxes are clipped to the image; boxes that vanish under clipping
/// are skipped.
pub fn choose_crop(detections: &[Detection], width: u32, height: u32) -> Option<CropBox> {
    let mut ranked: Vec<&Detection> = detections.iter().filter(|d| d.confidence.is_finite()).collect();
    ranked.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then_with(|| b.area().total_cmp(&a.area()))
            .then_with(|| a.x.total_cmp(&b.x))
    });
    ranked.into_iter().find_map(|d| clip(d, width, height))
}

fn clip(d: &Detection, width: u32, height: u32) -> Option<CropBox> {
    let (w, h) = (f64::from(width), f64::from(height));
    let x0 = d.x.max(0.0).floor().min(w);
    let y0 = d.y.max(0.0).floor().min(h);
    let x1 = (d.x + d.width).min(w).ceil().min(w);
    let y1 = (d.y + d.height).min(h).ceil().min(h);
    if !(x1 > x0 && y1 > y0) {
        return None;
    }
    let crop = CropBox {
        x: x0 as u32,
        y: y0 as u32,
        width: (x1 - x0) as u32,
        height: (y1 - y0) as u32,
    };
    crop.fits_within(width, height).then_some(crop)
}

pub fn crop_file_name(source_hash: &str) -> String {
    format!("{source_hash}.crop.png")
}

/// Crops `frame` to its most confident person detection.
///
/// The crop is written next to the original as `<source_hash>.crop.png`.
/// Frames without a detection are returned unchanged with
/// `person_detected = false`.
pub fn detect_and_crop(frame: &FrameRecord, detector: &DetectionClient) -> Result<FrameRecord, IngestError> {
    let bytes = fs::read(&frame.image_ref).map_err(|err| match err.kind() {
        io::ErrorKind::NotFound => IngestError::MissingImageFile(frame.image_ref.clone()),
        _ => IngestError::Io(err),
    })?;
    let decoded = image::load_from_memory(&bytes).map_err(|e| IngestError::DecodeError {
        path: frame.image_ref.clone(),
        reason: e.to_string(),
    })?;
    let (width, height) = decoded.dimensions();

    let detections = detector
        .detect(&frame.content_hash, &frame.source_hash, &bytes)
        .map_err(IngestError::DetectorUnavailable)?;
    let Some(crop) = choose_crop(&detections, width, height) else {
        return Ok(FrameRecord { person_detected: false, ..frame.clone() });
    };

    let dir = frame.image_ref.parent().unwrap_or_else(|| Path::new("."));
    let crop_path = dir.join(crop_file_name(&frame.source_hash));
    let crop_bytes = match fs::read(&crop_path) {
        Ok(existing) => existing,
        Err(err) if err.kind() == io::ErrorKind::NotFound => {
            let cropped = decoded.crop_imm(crop.x, crop.y, crop.width, crop.height);
            let mut encoded = Cursor::new(Vec::new());
            cropped
                .write_to(&mut encoded, ImageFormat::Png)
                .map_err(|e| IngestError::DecodeError { path: crop_path.clone(), reason: e.to_string() })?;
            let encoded = encoded.into_inner();
            write_atomic(&crop_path, &encoded)?;
            encoded
        }
        Err(err) => return Err(err.into()),
    };

    Ok(FrameRecord {
        image_ref: crop_path,
        content_hash: sha256_hex(&crop_bytes),
        crop_box: Some(crop),
        person_detected: true,
        ..frame.clone()
    })
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension(format!(
        "tmp{}-{:?}",
        std::process::id(),
        std::thread::current().id()
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

/// Decodes container formats by shelling out to `ffmpeg`.
#[derive(Debug, Clone)]
pub struct Transcoder {
    pub program: PathBuf,
}

impl Default for Transcoder {
    fn default() -> Self {
        Self { program: PathBuf::from("ffmpeg") }
    }
}

impl Transcoder {
    /// Extracts frames at `rate` into `out_dir` and writes a manifest there.
    pub fn extract(&self, video: &Path, out_dir: &Path, rate: SamplingRate) -> Result<SourceVideo, IngestError> {
        fs::create_dir_all(out_dir)?;
        let pattern = out_dir.join("frame_%06d.png");
        let status = Command::new(&self.program)
            .args(["-hide_banner", "-loglevel", "error", "-y", "-i"])
            .arg(video)
            .arg("-vf")
            .arg(format!("fps={}/{}", rate.num, rate.den))
            .arg(&pattern)
            .status()
            .map_err(|e| IngestError::Transcode(format!("cannot run {}: {e}", self.program.display())))?;
        if !status.success() {
            return Err(IngestError::Transcode(format!("{} exited with {status}", self.program.display())));
        }

        let mut files: Vec<String> = fs::read_dir(out_dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|name| name.starts_with("frame_") && name.ends_with(".png"))
            .collect();
        files.sort();
        let id = video
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("video")
            .to_string();
        let frames: Vec<serde_json::Value> = files
            .iter()
            .enumerate()
            .map(|(i, file)| {
                let t_ms = i as u64 * 1000 * rate.den / rate.num;
                serde_json::json!({ "file": file, "t_ms": t_ms })
            })
            .collect();
        let manifest = serde_json::json!({ "id": id, "frames": frames, "ego_motion": [] });
        write_atomic(
            &out_dir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(&manifest).expect("json value").as_bytes(),
        )?;
        load_frame_dir(out_dir)
    }
}
