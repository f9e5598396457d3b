//! On-disk projects: configuration plus the stage stores under `.restory/`
//! and the rendered outputs under `out/`.
//!
//! ```text
//! restory.toml
//! storyboards/<id>/frames.json     reference storyboards (keyframes + ego motion)
//! videos/<id>/frames.json          input footage
//! .restory/cache/                  provider response cache
//! .restory/frames/<id>.json        sampled, cropped frame records
//! .restory/captions/<id>.json      caption sequences
//! out/storyboards/<id>/            storyboard.{json,html,md}, and for generated
//!                                  boards alignment.json, matrix.{json,tsv}, pool.json
//! ```
//!
//! Image paths inside stores and manifests are relative to the project root,
//! so outputs do not depend on where the project is checked out.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aligner::{align, AlignError, AlignmentConfig, AlignmentResult, Strategy};
use crate::captioner::{caption_sequence, CaptionError, FrameCaptions, PromptTemplates};
use crate::ingest::{
    all_frames, check_ego_motion, detect_and_crop, load_frame_dir, sample_frames, write_atomic, FrameRecord,
    IngestError, SamplingConfig, SamplingRate, SourceVideo,
};
use crate::providers::cache::DiskCache;
use crate::providers::http::{HttpDetector, OpenAiEmbedder, OpenAiVlm};
use crate::providers::mock::{Counting, MockDetector, MockEmbedder, MockVlm};
use crate::providers::{
    CaptionClient, DetectionClient, EmbeddingClient, PersonDetector, ProviderConfig, ProviderError, TextEmbedder,
    VisionLanguageModel,
};
use crate::similarity::{build_matrix, Alpha, SimilarityError, SimilarityMatrix};
use crate::storyboard::{
    assemble, parse_manifest, render, CandidatePool, EgoMotionPolicy, RenderFormat, Storyboard, StoryboardError,
    StoryboardKind,
};

pub const CONFIG_FILE: &str = "restory.toml";
pub const ALIGNMENT_FILE: &str = "alignment.json";
pub const MATRIX_FILE: &str = "matrix.json";
pub const MATRIX_TSV_FILE: &str = "matrix.tsv";
pub const POOL_FILE: &str = "pool.json";

#[derive(Debug, Error)]
pub enum ProjectError {
    #[error("config {}: {reason}", path.display())]
    Config { path: PathBuf, reason: String },
    #[error("invalid project: {0}")]
    InvalidProject(String),
    #[error("ingest: {0}")]
    Ingest(#[from] IngestError),
    #[error("caption: {0}")]
    Caption(#[from] CaptionError),
    #[error("similarity: {0}")]
    Similarity(#[from] SimilarityError),
    #[error("align: {0}")]
    Align(#[from] AlignError),
    #[error("storyboard: {0}")]
    Storyboard(#[from] StoryboardError),
    #[error("provider: {0}")]
    Provider(#[from] ProviderError),
    #[error("store {}: {reason}", path.display())]
    Store { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ProjectError {
    /// True when the failure came from an external model service.
    pub fn is_provider_failure(&self) -> bool {
        matches!(
            self,
            ProjectError::Provider(_)
                | ProjectError::Ingest(IngestError::DetectorUnavailable(_))
                | ProjectError::Caption(CaptionError::Provider { .. })
                | ProjectError::Similarity(SimilarityError::Embedding { .. })
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MockMarker {
    #[serde(rename = "mock")]
    Mock,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProviderSpec {
    Mock(MockMarker),
    Remote(ProviderConfig),
}

impl ProviderSpec {
    pub fn mock() -> Self {
        ProviderSpec::Mock(MockMarker::Mock)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProvidersConfig {
    pub vlm: Option<ProviderSpec>,
    pub embedder: Option<ProviderSpec>,
    pub detector: Option<ProviderSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    prompts: Option<PathBuf>,
    #[serde(default = "default_storyboards_dir")]
    storyboards_dir: PathBuf,
    #[serde(default = "default_videos_dir")]
    videos_dir: PathBuf,
    mock_captions: Option<PathBuf>,
    #[serde(default)]
    ego_motion_policy: EgoMotionPolicy,
    #[serde(default = "default_true")]
    crop_reference: bool,
    workers: Option<usize>,
    #[serde(default)]
    sampling: SamplingConfig,
    #[serde(default)]
    alignment: AlignmentConfig,
    providers: Option<ProvidersConfig>,
}

fn default_storyboards_dir() -> PathBuf {
    PathBuf::from("storyboards")
}

fn default_videos_dir() -> PathBuf {
    PathBuf::from("videos")
}

fn default_true() -> bool {
    true
}

/// A loaded `restory.toml` with every path resolved against the project root.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectConfig {
    pub project_root: PathBuf,
    pub prompts: Option<PathBuf>,
    pub storyboards_dir: PathBuf,
    pub videos_dir: PathBuf,
    pub mock_captions: Option<PathBuf>,
    pub ego_motion_policy: EgoMotionPolicy,
    pub crop_reference: bool,
    pub workers: usize,
    pub sampling: SamplingConfig,
    pub alignment: AlignmentConfig,
    pub vlm: Option<ProviderSpec>,
    pub embedder: Option<ProviderSpec>,
    pub detector: Option<ProviderSpec>,
}

/// Command-line adjustments layered over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub alpha: Option<f64>,
    pub strategy: Option<Strategy>,
    pub rate: Option<SamplingRate>,
    pub mock_providers: bool,
    pub workers: Option<usize>,
}

impl ProjectConfig {
    /// Loads `path`, which is either the config file or a directory holding
    /// `restory.toml`.
    pub fn load(path: &Path) -> Result<Self, ProjectError> {
        let file = if path.is_dir() { path.join(CONFIG_FILE) } else { path.to_path_buf() };
        let err = |reason: String| ProjectError::Config { path: file.clone(), reason };
        let text = std::fs::read_to_string(&file).map_err(|e| err(e.to_string()))?;
        let raw: RawConfig = toml::from_str(&text).map_err(|e| err(e.to_string()))?;
        let root = file.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or_else(|| Path::new("."));
        let root = std::fs::canonicalize(root).map_err(|e| err(e.to_string()))?;

        let existing = |rel: &Path, what: &str| -> Result<PathBuf, ProjectError> {
            let p = root.join(rel);
            if p.exists() {
                Ok(p)
            } else {
                Err(err(format!("{what} {} does not exist", p.display())))
            }
        };
        let prompts = raw.prompts.as_deref().map(|p| existing(p, "prompts file")).transpose()?;
        let mock_captions = raw.mock_captions.as_deref().map(|p| existing(p, "mock captions file")).transpose()?;
        let storyboards_dir = existing(&raw.storyboards_dir, "storyboards directory")?;
        let videos_dir = existing(&raw.videos_dir, "videos directory")?;
        let workers = raw.workers.unwrap_or_else(default_workers);
        if workers == 0 {
            return Err(err("workers must be at least 1".into()));
        }
        let providers = raw.providers.unwrap_or(ProvidersConfig { vlm: None, embedder: None, detector: None });
        Ok(Self {
            project_root: root,
            prompts,
            storyboards_dir,
            videos_dir,
            mock_captions,
            ego_motion_policy: raw.ego_motion_policy,
            crop_reference: raw.crop_reference,
            workers,
            sampling: raw.sampling,
            alignment: raw.alignment,
            vlm: providers.vlm,
            embedder: providers.embedder,
            detector: providers.detector,
        })
    }

    pub fn apply(&mut self, overrides: &Overrides) -> Result<(), ProjectError> {
        if let Some(alpha) = overrides.alpha {
            self.alignment.alpha = Alpha::new(alpha)?;
        }
        if let Some(strategy) = overrides.strategy {
            self.alignment.strategy = strategy;
        }
        if let Some(rate) = overrides.rate {
            self.sampling.rate_hz = rate;
        }
        if let Some(workers) = overrides.workers {
            if workers == 0 {
                return Err(ProjectError::InvalidProject("workers must be at least 1".into()));
            }
            self.workers = workers;
        }
        if overrides.mock_providers {
            self.vlm = Some(ProviderSpec::mock());
            self.embedder = Some(ProviderSpec::mock());
            self.detector = Some(ProviderSpec::mock());
        }
        Ok(())
    }

    pub fn state_dir(&self) -> PathBuf {
        self.project_root.join(".restory")
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.state_dir().join("cache")
    }

    pub fn frames_store(&self, id: &str) -> PathBuf {
        self.state_dir().join("frames").join(format!("{id}.json"))
    }

    pub fn captions_store(&self, id: &str) -> PathBuf {
        self.state_dir().join("captions").join(format!("{id}.json"))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.project_root.join("out").join("storyboards")
    }

    pub fn storyboard_dir(&self, id: &str) -> PathBuf {
        self.out_dir().join(id)
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get()).min(8)
}

/// The raw providers a project talks to.
pub struct Backends {
    pub vlm: Arc<dyn VisionLanguageModel>,
    pub embedder: Arc<dyn TextEmbedder>,
    pub detector: Arc<dyn PersonDetector>,
}

impl Backends {
    pub fn from_config(cfg: &ProjectConfig) -> Result<Self, ProjectError> {
        let missing = |role: &str| {
            ProjectError::InvalidProject(format!("no {role} provider configured (use \"mock\" or a provider table)"))
        };
        let vlm: Arc<dyn VisionLanguageModel> = match cfg.vlm.as_ref().ok_or_else(|| missing("vlm"))? {
            ProviderSpec::Mock(_) => match &cfg.mock_captions {
                Some(script) => Arc::new(MockVlm::from_script_file(script)?),
                None => Arc::new(MockVlm::default()),
            },
            ProviderSpec::Remote(p) => Arc::new(OpenAiVlm::new(p.clone())?),
        };
        let embedder: Arc<dyn TextEmbedder> = match cfg.embedder.as_ref().ok_or_else(|| missing("embedder"))? {
            ProviderSpec::Mock(_) => Arc::new(MockEmbedder::default()),
            ProviderSpec::Remote(p) => Arc::new(OpenAiEmbedder::new(p.clone())?),
        };
        let detector: Arc<dyn PersonDetector> = match cfg.detector.as_ref().ok_or_else(|| missing("detector"))? {
            ProviderSpec::Mock(_) => Arc::new(MockDetector::default()),
            ProviderSpec::Remote(p) => Arc::new(HttpDetector::new(p.clone())?),
        };
        Ok(Self { vlm, embedder, detector })
    }
}

fn retry_for(spec: Option<&ProviderSpec>) -> crate::providers::RetryPolicy {
    match spec {
        Some(ProviderSpec::Remote(p)) => p.retry_policy(),
        _ => crate::providers::RetryPolicy::none(),
    }
}

/// Calls that reached the raw providers, i.e. cache misses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ProviderCalls {
    pub vlm: usize,
    pub embedder: usize,
    pub detector: usize,
}

impl ProviderCalls {
    pub fn total(&self) -> usize {
        self.vlm + self.embedder + self.detector
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Reference,
    Video,
}

/// Sampled (and possibly cropped) frames of one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameStore {
    pub id: String,
    pub kind: SourceKind,
    pub frames: Vec<FrameRecord>,
    /// One entry per gap between consecutive stored frames, or empty.
    pub ego_motion: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct GenerateReport {
    pub storyboard: Storyboard,
    pub alignment: AlignmentResult,
    pub manifest_path: PathBuf,
    pub html_path: PathBuf,
    /// Set when a curated storyboard already lives at the generated id; it is
    /// left untouched.
    pub kept_curated: bool,
    pub provider_calls: ProviderCalls,
}

/// Everything the aligner and storyboard assembly need for one pair.
#[derive(Debug, Clone)]
pub struct AlignedPair {
    pub reference: Storyboard,
    pub pool: CandidatePool,
    pub matrix: SimilarityMatrix,
    pub alignment: AlignmentResult,
}

pub struct Project {
    config: ProjectConfig,
    templates: PromptTemplates,
    captions: CaptionClient,
    embeddings: EmbeddingClient,
    detections: DetectionClient,
    counters: [Arc<AtomicUsize>; 3],
    threads: rayon::ThreadPool,
}

impl Project {
    pub fn open(config: ProjectConfig) -> Result<Self, ProjectError> {
        let backends = Backends::from_config(&config)?;
        Self::with_backends(config, backends)
    }

    pub fn with_backends(config: ProjectConfig, backends: Backends) -> Result<Self, ProjectError> {
        let templates = match &config.prompts {
            Some(path) => PromptTemplates::load(path)?,
            None => PromptTemplates::default(),
        };
        let cache = Arc::new(DiskCache::new(config.cache_dir()));
        let vlm = Counting::new(backends.vlm);
        let embedder = Counting::new(backends.embedder);
        let detector = Counting::new(backends.detector);
        let counters = [vlm.calls(), embedder.calls(), detector.calls()];
        let captions = CaptionClient::new(Arc::new(vlm), cache.clone(), retry_for(config.vlm.as_ref()));
        let embeddings = EmbeddingClient::new(Arc::new(embedder), cache.clone(), retry_for(config.embedder.as_ref()));
        let detections = DetectionClient::new(Arc::new(detector), cache, retry_for(config.detector.as_ref()));
        let threads = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| ProjectError::InvalidProject(format!("cannot start worker pool: {e}")))?;
        Ok(Self { config, templates, captions, embeddings, detections, counters, threads })
    }

    pub fn config(&self) -> &ProjectConfig {
        &self.config
    }

    pub fn provider_calls(&self) -> ProviderCalls {
        let [v, e, d] = &self.counters;
        ProviderCalls { vlm: v.load(Ordering::SeqCst), embedder: e.load(Ordering::SeqCst), detector: d.load(Ordering::SeqCst) }
    }

    /// Where `id` comes from: a reference storyboard or an input video.
    pub fn source_kind(&self, id: &str) -> Result<SourceKind, ProjectError> {
        check_id(id)?;
        let reference = self.config.storyboards_dir.join(id).is_dir();
        let video = self.config.videos_dir.join(id).is_dir();
        match (reference, video) {
            (true, false) => Ok(SourceKind::Reference),
            (false, true) => Ok(SourceKind::Video),
            (true, true) => Err(ProjectError::InvalidProject(format!("{id} names both a storyboard and a video"))),
            (false, false) => Err(ProjectError::InvalidProject(format!("no storyboard or video named {id}"))),
        }
    }

    fn source_dir(&self, id: &str, kind: SourceKind) -> PathBuf {
        match kind {
            SourceKind::Reference => self.config.storyboards_dir.join(id),
            SourceKind::Video => self.config.videos_dir.join(id),
        }
    }

    /// Ingests the project source `id` and stores its frame records.
    pub fn ingest(&self, id: &str) -> Result<FrameStore, ProjectError> {
        let kind = self.source_kind(id)?;
        let video = load_frame_dir(&self.source_dir(id, kind))?;
        if video.id != id {
            return Err(ProjectError::InvalidProject(format!("{}: manifest id is {}, expected {id}", video.id, video.id)));
        }
        self.ingest_video(&video, kind)
    }

    /// Ingests an already-loaded source. Videos are sampled at the configured
    /// rate; reference storyboards keep every keyframe.
    pub fn ingest_video(&self, video: &SourceVideo, kind: SourceKind) -> Result<FrameStore, ProjectError> {
        check_id(&video.id)?;
        check_ego_motion(&video.ego_motion, video.frame_entries.len())?;
        let frames = match kind {
            SourceKind::Reference => all_frames(video)?,
            SourceKind::Video => sample_frames(video, &self.config.sampling)?,
        };
        let crop = kind == SourceKind::Video || self.config.crop_reference;
        let frames = if crop {
            self.threads.install(|| {
                frames.par_iter().map(|f| detect_and_crop(f, &self.detections)).collect::<Result<Vec<_>, _>>()
            })?
        } else {
            frames
        };
        let ego_motion = sampled_ego_motion(video, &frames);
        let root = &self.config.project_root;
        let store = FrameStore {
            id: video.id.clone(),
            kind,
            frames: frames.into_iter().map(|f| relativize(f, root)).collect(),
            ego_motion,
        };
        write_json(&self.config.frames_store(&store.id), &store)?;
        Ok(store)
    }

    /// Stored frames for `id`, ingesting first when the store is missing.
    pub fn frames(&self, id: &str) -> Result<FrameStore, ProjectError> {
        match read_json::<FrameStore>(&self.config.frames_store(id))? {
            Some(store) => Ok(store),
            None => self.ingest(id),
        }
    }

    /// Captions `id` (running ingest when needed) and stores the sequence.
    pub fn caption(&self, id: &str) -> Result<Vec<FrameCaptions>, ProjectError> {
        let store = self.frames(id)?;
        let root = &self.config.project_root;
        let absolute: Vec<FrameRecord> = store.frames.iter().cloned().map(|f| absolutize(f, root)).collect();
        let captions = caption_sequence(&absolute, &self.templates, &self.captions)?;
        write_json(&self.config.captions_store(id), &captions)?;
        Ok(captions)
    }

    /// The reference storyboard `id`, built from its captioned keyframes.
    pub fn reference(&self, id: &str) -> Result<Storyboard, ProjectError> {
        if self.source_kind(id)? != SourceKind::Reference {
            return Err(ProjectError::InvalidProject(format!("{id} is not a reference storyboard")));
        }
        let store = self.frames(id)?;
        let captions = self.caption(id)?;
        Ok(Storyboard::reference(id, store.frames, captions, &store.ego_motion)?)
    }

    pub fn pool(&self, video_id: &str) -> Result<CandidatePool, ProjectError> {
        if self.source_kind(video_id)? != SourceKind::Video {
            return Err(ProjectError::InvalidProject(format!("{video_id} is not an input video")));
        }
        let store = self.frames(video_id)?;
        let captions = self.caption(video_id)?;
        Ok(CandidatePool { video_id: video_id.to_string(), frames: store.frames, captions, ego_motion: store.ego_motion })
    }

    /// Runs every stage up to alignment for one reference / video pair.
    pub fn align(&self, reference_id: &str, video_id: &str) -> Result<AlignedPair, ProjectError> {
        let (reference, pool) = self.threads.install(|| rayon::join(|| self.reference(reference_id), || self.pool(video_id)));
        let (reference, pool) = (reference?, pool?);
        let reference_captions: Vec<FrameCaptions> = reference.slots.iter().map(|s| s.captions.clone()).collect();
        let matrix = self.threads.install(|| {
            build_matrix(
                reference_id,
                video_id,
                &reference_captions,
                &pool.captions,
                self.config.alignment.alpha,
                &self.embeddings,
            )
        })?;
        let alignment = align(&matrix, &self.config.alignment)?;
        Ok(AlignedPair { reference, pool, matrix, alignment })
    }

    /// Writes the reference storyboard's renderings so it can be reviewed
    /// alongside generated ones.
    pub fn publish_reference(&self, reference: &Storyboard) -> Result<PathBuf, ProjectError> {
        self.render_all(reference)
    }

    /// Full pipeline: generated storyboard plus the alignment artifacts the
    /// review server needs.
    pub fn generate(&self, reference_id: &str, video_id: &str) -> Result<GenerateReport, ProjectError> {
        let pair = self.align(reference_id, video_id)?;
        self.publish_reference(&pair.reference)?;
        let generated = assemble(&pair.reference, &pair.alignment, &pair.pool, self.config.ego_motion_policy)?;
        let dir = self.config.storyboard_dir(&generated.id);
        let manifest_path = dir.join(RenderFormat::Manifest.file_name());
        let html_path = dir.join(RenderFormat::Html.file_name());

        let existing = if manifest_path.is_file() { Some(parse_manifest(&manifest_path)?) } else { None };
        if let Some(current) = existing.filter(|s| s.kind == StoryboardKind::Curated) {
            tracing::warn!(id = %current.id, "curated storyboard exists; leaving it untouched");
            return Ok(GenerateReport {
                storyboard: current,
                alignment: pair.alignment,
                manifest_path,
                html_path,
                kept_curated: true,
                provider_calls: self.provider_calls(),
            });
        }

        write_alignment_artifacts(&dir, &pair.alignment, &pair.matrix, &pair.pool)?;
        self.render_all(&generated)?;
        Ok(GenerateReport {
            storyboard: generated,
            alignment: pair.alignment,
            manifest_path,
            html_path,
            kept_curated: false,
            provider_calls: self.provider_calls(),
        })
    }

    /// Renders manifest, html and markdown into the storyboard's directory.
    /// Returns the manifest path.
    pub fn render_all(&self, storyboard: &Storyboard) -> Result<PathBuf, ProjectError> {
        render_storyboard(&self.config, storyboard)
    }
}

/// Persists what the review server needs to recompute an alignment and to
/// replace frames: the alignment, its similarity matrix and the candidate pool.
pub fn write_alignment_artifacts(
    dir: &Path,
    alignment: &AlignmentResult,
    matrix: &SimilarityMatrix,
    pool: &CandidatePool,
) -> Result<(), ProjectError> {
    write_json(&dir.join(ALIGNMENT_FILE), alignment)?;
    write_json(&dir.join(MATRIX_FILE), matrix)?;
    write_if_changed(&dir.join(MATRIX_TSV_FILE), matrix.to_tsv().as_bytes())?;
    write_json(&dir.join(POOL_FILE), pool)?;
    Ok(())
}

/// Renders all formats of `storyboard` under the project's output directory.
pub fn render_storyboard(config: &ProjectConfig, storyboard: &Storyboard) -> Result<PathBuf, ProjectError> {
    let dir = config.storyboard_dir(&storyboard.id);
    let root = &config.project_root;
    let manifest = render(storyboard, RenderFormat::Manifest, &dir, root)?;
    render(storyboard, RenderFormat::Html, &dir, root)?;
    render(storyboard, RenderFormat::Markdown, &dir, root)?;
    Ok(manifest)
}

/// Ids become directory and file names, so they are kept to a safe alphabet.
pub fn check_id(id: &str) -> Result<(), ProjectError> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(ProjectError::InvalidProject(format!("invalid id {id:?}")))
    }
}

/// Ego-motion text between consecutive sampled frames: the source's
/// per-entry segments spanning each gap, joined.
fn sampled_ego_motion(video: &SourceVideo, frames: &[FrameRecord]) -> Vec<String> {
    if video.ego_motion.is_empty() {
        return Vec::new();
    }
    let positions: Vec<usize> = frames
        .iter()
        .map(|f| {
            video
                .frame_entries
                .binary_search_by_key(&f.timestamp_ms, |e| e.timestamp_ms)
                .expect("sampled frames come from the source entries")
        })
        .collect();
    positions.windows(2).map(|w| video.ego_motion[w[0]..w[1]].join(" then ")).collect()
}

fn relativize(mut frame: FrameRecord, root: &Path) -> FrameRecord {
    if let Ok(rel) = frame.image_ref.strip_prefix(root) {
        frame.image_ref = rel.to_path_buf();
    }
    frame
}

fn absolutize(mut frame: FrameRecord, root: &Path) -> FrameRecord {
    if frame.image_ref.is_relative() {
        frame.image_ref = root.join(&frame.image_ref);
    }
    frame
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<T>, ProjectError> {
    match std::fs::read(path) {
        Ok(bytes) => serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| ProjectError::Store { path: path.to_path_buf(), reason: e.to_string() }),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ProjectError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("store values serialize");
    bytes.push(b'\n');
    write_if_changed(path, &bytes)
}

/// Atomic write that leaves identical files alone, so reruns do not touch
/// the store.
pub fn write_if_changed(path: &Path, bytes: &[u8]) -> Result<(), ProjectError> {
    if std::fs::read(path).is_ok_and(|current| current == bytes) {
        return Ok(());
    }
    write_atomic(path, bytes)?;
    Ok(())
}
