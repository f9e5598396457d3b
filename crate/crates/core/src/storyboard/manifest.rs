//! The `storyboard.json` wire form.
//!
//! Slots are flattened: frame provenance and caption provenance sit next to
//! the displayed fields so a manifest is readable on its own.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CurationEdit, EgoMotionPolicy, Status, Storyboard, StoryboardError, StoryboardKind, StoryboardSlot};
use crate::captioner::FrameCaptions;
use crate::ingest::{CropBox, FrameRecord};
use crate::similarity::SimilarityBreakdown;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestDoc {
    pub id: String,
    pub kind: StoryboardKind,
    pub status: Status,
    pub reference_storyboard_id: Option<String>,
    pub input_video_id: Option<String>,
    pub config_digest: Option<String>,
    pub ego_motion_policy: Option<EgoMotionPolicy>,
    pub assumption_violating: bool,
    pub slots: Vec<ManifestSlot>,
    pub edit_history: Vec<CurationEdit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSlot {
    pub slot_index: usize,
    pub image: String,
    pub content_hash: String,
    pub pose_caption: String,
    pub context_caption: String,
    pub ego_motion_to_next: Option<String>,
    pub breakdown: Option<SimilarityBreakdown>,
    pub video_id: String,
    pub frame_index: usize,
    pub timestamp_ms: u64,
    pub source_hash: String,
    pub crop_box: Option<CropBox>,
    pub person_detected: bool,
    pub caption_model: String,
    pub p1_prompt_hash: String,
    pub p2_prompt_hash: String,
}

impl From<Storyboard> for ManifestDoc {
    fn from(sb: Storyboard) -> Self {
        let assumption_violating = sb.violates_robot_assumption();
        let slots = sb
            .slots
            .into_iter()
            .map(|s| ManifestSlot {
                slot_index: s.slot_index,
                image: s.frame.image_ref.to_string_lossy().into_owned(),
                content_hash: s.frame.content_hash,
                pose_caption: s.captions.pose_caption,
                context_caption: s.captions.context_caption,
                ego_motion_to_next: s.ego_motion_to_next,
                breakdown: s.breakdown,
                video_id: s.frame.video_id,
                frame_index: s.frame.frame_index,
                timestamp_ms: s.frame.timestamp_ms,
                source_hash: s.frame.source_hash,
                crop_box: s.frame.crop_box,
                person_detected: s.frame.person_detected,
                caption_model: s.captions.model_name,
                p1_prompt_hash: s.captions.p1_prompt_hash,
                p2_prompt_hash: s.captions.p2_prompt_hash,
            })
            .collect();
        Self {
            id: sb.id,
            kind: sb.kind,
            status: sb.status,
            reference_storyboard_id: sb.reference_storyboard_id,
            input_video_id: sb.input_video_id,
            config_digest: sb.config_digest,
            ego_motion_policy: sb.ego_motion_policy,
            assumption_violating,
            slots,
            edit_history: sb.edit_history,
        }
    }
}

impl TryFrom<ManifestDoc> for Storyboard {
    type Error = StoryboardError;

    fn try_from(doc: ManifestDoc) -> Result<Self, Self::Error> {
        for (i, slot) in doc.slots.iter().enumerate() {
            if slot.slot_index != i {
                return Err(StoryboardError::MalformedManifest(format!(
                    "slot indices must be contiguous from 0; position {i} holds slot_index {}",
                    slot.slot_index
                )));
            }
        }
        if doc.assumption_violating != (doc.ego_motion_policy == Some(EgoMotionPolicy::FromInputVideo)) {
            return Err(StoryboardError::MalformedManifest(
                "assumption_violating disagrees with ego_motion_policy".into(),
            ));
        }
        let slots = doc
            .slots
            .into_iter()
            .map(|s| StoryboardSlot {
                slot_index: s.slot_index,
                frame: FrameRecord {
                    video_id: s.video_id.clone(),
                    frame_index: s.frame_index,
                    timestamp_ms: s.timestamp_ms,
                    image_ref: PathBuf::from(s.image),
                    content_hash: s.content_hash,
                    source_hash: s.source_hash,
                    crop_box: s.crop_box,
                    person_detected: s.person_detected,
                },
                captions: FrameCaptions {
                    video_id: s.video_id,
                    frame_index: s.frame_index,
                    pose_caption: s.pose_caption,
                    context_caption: s.context_caption,
                    model_name: s.caption_model,
                    p1_prompt_hash: s.p1_prompt_hash,
                    p2_prompt_hash: s.p2_prompt_hash,
                },
                ego_motion_to_next: s.ego_motion_to_next,
                breakdown: s.breakdown,
            })
            .collect();
        Ok(Storyboard {
            id: doc.id,
            kind: doc.kind,
            status: doc.status,
            reference_storyboard_id: doc.reference_storyboard_id,
            input_video_id: doc.input_video_id,
            config_digest: doc.config_digest,
            ego_motion_policy: doc.ego_motion_policy,
            slots,
            edit_history: doc.edit_history,
        })
    }
}

pub fn parse_manifest(path: &Path) -> Result<Storyboard, StoryboardError> {
    let bytes = std::fs::read(path)?;
    serde_json::from_slice(&bytes)
        .map_err(|e| StoryboardError::MalformedManifest(format!("{}: {e}", path.display())))
}
