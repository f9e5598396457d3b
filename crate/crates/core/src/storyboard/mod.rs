//! Storyboards: assembly from an alignment, human curation, rendering.
//!
//! Storyboard values are immutable. Every curation edit returns a new value
//! with the edit appended to its history; the history length doubles as the
//! version token the review server checks for concurrent edits.

mod manifest;
mod render;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aligner::{AlignmentConfig, AlignmentResult};
use crate::captioner::FrameCaptions;
use crate::digest::sha256_hex;
use crate::ingest::FrameRecord;
use crate::similarity::{SimilarityBreakdown, SimilarityMatrix};

pub use manifest::{parse_manifest, ManifestDoc, ManifestSlot};
pub use render::{render, RenderFormat, HTML_FILE, MANIFEST_FILE, MARKDOWN_FILE};

#[derive(Debug, Error)]
pub enum StoryboardError {
    #[error("alignment has {alignment} slots but the reference storyboard has {reference}")]
    SlotCountMismatch { reference: usize, alignment: usize },
    #[error("frame {0} is not in the candidate pool")]
    MissingFrame(usize),
    #[error("index {index} out of range (limit {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("replacing a frame needs the similarity matrix and candidate pool")]
    MissingMatrix,
    #[error("invalid edit target: {0}")]
    InvalidTarget(String),
    #[error("storyboard {0} is approved and can no longer be edited")]
    AlreadyApproved(String),
    #[error("image file not found: {}", .0.display())]
    MissingImageFile(PathBuf),
    #[error("malformed storyboard manifest: {0}")]
    MalformedManifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoryboardKind {
    Reference,
    Generated,
    Curated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Draft,
    Approved,
}

/// Where a generated storyboard's robot ego-motion text comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EgoMotionPolicy {
    /// Keep the reference storyboard's text: the robot is assumed to behave
    /// exactly as it did in the reference.
    #[default]
    CopyReference,
    /// Describe the input video's own robot motion between the chosen frames.
    /// The storyboard is then flagged as violating the constant-robot
    /// assumption.
    FromInputVideo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoryboardSlot {
    pub slot_index: usize,
    pub frame: FrameRecord,
    pub captions: FrameCaptions,
    pub ego_motion_to_next: Option<String>,
    pub breakdown: Option<SimilarityBreakdown>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CurationEdit {
    /// Exchange the frame payloads of two slots.
    SwapSlots { a: usize, b: usize },
    /// Put candidate frame `b` into slot `a`.
    ReplaceFrame { a: usize, b: usize },
    Approve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ManifestDoc", try_from = "ManifestDoc")]
pub struct Storyboard {
    pub id: String,
    pub kind: StoryboardKind,
    pub status: Status,
    pub reference_storyboard_id: Option<String>,
    pub input_video_id: Option<String>,
    pub config_digest: Option<String>,
    pub ego_motion_policy: Option<EgoMotionPolicy>,
    pub slots: Vec<StoryboardSlot>,
    pub edit_history: Vec<CurationEdit>,
}

/// Sampled, captioned input footage a generated storyboard draws from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub video_id: String,
    pub frames: Vec<FrameRecord>,
    pub captions: Vec<FrameCaptions>,
    #[serde(default)]
    pub ego_motion: Vec<String>,
}

/// What `replace_frame` needs to refresh a slot.
#[derive(Debug, Clone, Copy)]
pub struct ReplaceContext<'a> {
    pub matrix: &'a SimilarityMatrix,
    pub pool: &'a CandidatePool,
}

pub fn config_digest(cfg: &AlignmentConfig) -> String {
    sha256_hex(serde_json::to_vec(cfg).expect("config serializes"))
}

impl Storyboard {
    /// A reference storyboard over already-captioned keyframes.
    pub fn reference(
        id: &str,
        frames: Vec<FrameRecord>,
        captions: Vec<FrameCaptions>,
        ego_motion: &[String],
    ) -> Result<Self, StoryboardError> {
        if frames.len() != captions.len() {
            return Err(StoryboardError::SlotCountMismatch { reference: frames.len(), alignment: captions.len() });
        }
        let n = frames.len();
        let slots = frames
            .into_iter()
            .zip(captions)
            .enumerate()
            .map(|(i, (frame, captions))| StoryboardSlot {
                slot_index: i,
                frame,
                captions,
                ego_motion_to_next: if i + 1 < n { ego_motion.get(i).cloned() } else { None },
                breakdown: None,
            })
            .collect();
        Ok(Self {
            id: id.to_string(),
            kind: StoryboardKind::Reference,
            status: Status::Draft,
            reference_storyboard_id: None,
            input_video_id: None,
            config_digest: None,
            ego_motion_policy: None,
            slots,
            edit_history: Vec::new(),
        })
    }

    pub fn version(&self) -> usize {
        self.edit_history.len()
    }

    pub fn violates_robot_assumption(&self) -> bool {
        self.ego_motion_policy == Some(EgoMotionPolicy::FromInputVideo)
    }

    /// Generated id: `<reference>__<video>__<first 8 hex of config digest>`.
    pub fn generated_id(reference: &str, video: &str, digest: &str) -> String {
        format!("{reference}__{video}__{}", &digest[..8.min(digest.len())])
    }
}

fn from_input_ego_motion(pool: &CandidatePool, from: usize, to: usize) -> Option<String> {
    if pool.ego_motion.is_empty() {
        return None;
    }
    let (lo, hi) = (from.min(to), from.max(to));
    let segments = pool.ego_motion.get(lo..hi)?;
    let joined = segments.join(" then ");
    Some(if to < from { format!("(reversed) {joined}") } else { joined })
}

/// Builds a draft generated storyboard showing, in slot `i`, the frame the
/// alignment chose for reference slot `i`.
pub fn assemble(
    reference: &Storyboard,
    alignment: &AlignmentResult,
    pool: &CandidatePool,
    policy: EgoMotionPolicy,
) -> Result<Storyboard, StoryboardError> {
    if reference.kind != StoryboardKind::Reference {
        return Err(StoryboardError::InvalidTarget(format!("{} is not a reference storyboard", reference.id)));
    }
    if alignment.slots.len() != reference.slots.len() {
        return Err(StoryboardError::SlotCountMismatch {
            reference: reference.slots.len(),
            alignment: alignment.slots.len(),
        });
    }
    let n = alignment.slots.len();
    let mut slots = Vec::with_capacity(n);
    for (i, slot) in alignment.slots.iter().enumerate() {
        let j = slot.chosen_frame_index;
        let frame = pool.frames.get(j).ok_or(StoryboardError::MissingFrame(j))?.clone();
        let captions = pool.captions.get(j).ok_or(StoryboardError::MissingFrame(j))?.clone();
        let ego_motion_to_next = if i + 1 == n {
            None
        } else {
            match policy {
                EgoMotionPolicy::CopyReference => reference.slots[i].ego_motion_to_next.clone(),
                EgoMotionPolicy::FromInputVideo => {
                    from_input_ego_motion(pool, j, alignment.slots[i + 1].chosen_frame_index)
                }
            }
        };
        slots.push(StoryboardSlot { slot_index: i, frame, captions, ego_motion_to_next, breakdown: Some(slot.breakdown) });
    }
    let digest = config_digest(&alignment.config);
    Ok(Storyboard {
        id: Storyboard::generated_id(&reference.id, &pool.video_id, &digest),
        kind: StoryboardKind::Generated,
        status: Status::Draft,
        reference_storyboard_id: Some(reference.id.clone()),
        input_video_id: Some(pool.video_id.clone()),
        config_digest: Some(digest),
        ego_motion_policy: Some(policy),
        slots,
        edit_history: Vec::new(),
    })
}

/// Applies one curation edit, returning a new curated storyboard.
///
/// Slot positions and their ego-motion text stay fixed; only the frame,
/// captions and breakdown move.
pub fn apply_edit(
    storyboard: &Storyboard,
    edit: CurationEdit,
    context: Option<ReplaceContext<'_>>,
) -> Result<Storyboard, StoryboardError> {
    if storyboard.kind == StoryboardKind::Reference {
        return Err(StoryboardError::InvalidTarget(format!("{} is a reference storyboard", storyboard.id)));
    }
    if storyboard.status == Status::Approved {
        return Err(StoryboardError::AlreadyApproved(storyboard.id.clone()));
    }
    let n = storyboard.slots.len();
    let check = |index: usize, len: usize| {
        if index < len {
            Ok(())
        } else {
            Err(StoryboardError::IndexOutOfRange { index, len })
        }
    };

    let mut next = storyboard.clone();
    match edit {
        CurationEdit::SwapSlots { a, b } => {
            check(a, n)?;
            check(b, n)?;
            let (sa, sb) = (next.slots[a].clone(), next.slots[b].clone());
            let payload = |dst: &mut StoryboardSlot, src: StoryboardSlot| {
                dst.frame = src.frame;
                dst.captions = src.captions;
                dst.breakdown = src.breakdown;
            };
            payload(&mut next.slots[a], sb);
            payload(&mut next.slots[b], sa);
        }
        CurationEdit::ReplaceFrame { a, b } => {
            check(a, n)?;
            let ctx = context.ok_or(StoryboardError::MissingMatrix)?;
            check(b, ctx.matrix.frame_count)?;
            let cell = ctx.matrix.get(a, b).ok_or(StoryboardError::IndexOutOfRange { index: a, len: ctx.matrix.slot_count })?;
            let frame = ctx.pool.frames.get(b).ok_or(StoryboardError::MissingFrame(b))?;
            let captions = ctx.pool.captions.get(b).ok_or(StoryboardError::MissingFrame(b))?;
            let slot = &mut next.slots[a];
            slot.frame = frame.clone();
            slot.captions = captions.clone();
            slot.breakdown = Some(*cell);
        }
        CurationEdit::Approve => next.status = Status::Approved,
    }
    next.kind = StoryboardKind::Curated;
    next.edit_history.push(edit);
    Ok(next)
}

/// Storyboard payloads ignoring history and kind; what a reviewer sees.
pub fn same_payload(a: &Storyboard, b: &Storyboard) -> bool {
    a.slots == b.slots && a.status == b.status
}
