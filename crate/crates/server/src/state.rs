//! In-memory session over a project's `out/storyboards` tree.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use restory_core::project::{
    read_json, render_storyboard, ProjectConfig, ProjectError, ALIGNMENT_FILE, MATRIX_FILE, POOL_FILE,
};
use restory_core::storyboard::{parse_manifest, CandidatePool, MANIFEST_FILE};
use restory_core::{AlignmentResult, SimilarityMatrix, Storyboard};

/// An alignment with what is needed to recompute it and to replace frames.
#[derive(Debug, Clone)]
pub struct AlignmentEntry {
    pub id: String,
    pub alignment: AlignmentResult,
    pub matrix: SimilarityMatrix,
    pub pool: CandidatePool,
}

pub struct Session {
    pub config: ProjectConfig,
    pub ui_dir: Option<PathBuf>,
    pub storyboards: RwLock<BTreeMap<String, Storyboard>>,
    pub alignments: RwLock<BTreeMap<String, AlignmentEntry>>,
    pub media: RwLock<HashMap<String, PathBuf>>,
    /// Serializes every mutation; version checks happen while it is held.
    pub writer: Mutex<()>,
}

impl Session {
    pub fn load(config: ProjectConfig, ui_dir: Option<PathBuf>) -> Result<Self, ProjectError> {
        let mut storyboards = BTreeMap::new();
        let mut alignments = BTreeMap::new();
        let out = config.out_dir();
        let mut dirs: Vec<PathBuf> = match std::fs::read_dir(&out) {
            Ok(entries) => entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        dirs.sort();
        for dir in dirs {
            let Some(id) = dir.file_name().and_then(|n| n.to_str()).map(String::from) else { continue };
            let manifest = dir.join(MANIFEST_FILE);
            if manifest.is_file() {
                storyboards.insert(id.clone(), parse_manifest(&manifest)?);
            }
            if let Some(entry) = load_alignment(&dir, &id)? {
                alignments.insert(id, entry);
            }
        }

        let session = Self {
            config,
            ui_dir,
            storyboards: RwLock::new(storyboards),
            alignments: RwLock::new(alignments),
            media: RwLock::new(HashMap::new()),
            writer: Mutex::new(()),
        };
        session.reindex_media();
        Ok(session)
    }

    /// Rebuilds the content hash to file index from every known image.
    pub fn reindex_media(&self) {
        let root = &self.config.project_root;
        let mut media = HashMap::new();
        let mut add = |hash: &str, path: &Path| {
            media.entry(hash.to_string()).or_insert_with(|| root.join(path));
        };
        for sb in self.storyboards.read().unwrap().values() {
            for slot in &sb.slots {
                add(&slot.frame.content_hash, &slot.frame.image_ref);
            }
        }
        for entry in self.alignments.read().unwrap().values() {
            for frame in &entry.pool.frames {
                add(&frame.content_hash, &frame.image_ref);
            }
        }
        *self.media.write().unwrap() = media;
    }

    /// Writes all renderings of `storyboard` and publishes it.
    pub fn persist(&self, storyboard: Storyboard) -> Result<PathBuf, ProjectError> {
        let manifest = render_storyboard(&self.config, &storyboard)?;
        self.storyboards.write().unwrap().insert(storyboard.id.clone(), storyboard);
        Ok(manifest)
    }
}

fn load_alignment(dir: &Path, id: &str) -> Result<Option<AlignmentEntry>, ProjectError> {
    let Some(alignment) = read_json::<AlignmentResult>(&dir.join(ALIGNMENT_FILE))? else { return Ok(None) };
    let matrix = read_json::<SimilarityMatrix>(&dir.join(MATRIX_FILE))?;
    let pool = read_json::<CandidatePool>(&dir.join(POOL_FILE))?;
    match (matrix, pool) {
        (Some(matrix), Some(pool)) => Ok(Some(AlignmentEntry { id: id.to_string(), alignment, matrix, pool })),
        _ => Err(ProjectError::InvalidProject(format!("alignment {id} is missing its matrix or pool"))),
    }
}
