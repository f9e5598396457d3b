//! Chained two-prompt captioning.
//!
//! Every frame gets two answers from the VLM. The first prompt (P1) asks
//! about body posture and yields the pose caption. The second (P2) asks
//! whether and how the person interacts with the robot; it embeds the frame's
//! own P1 answer and, from the second frame on, the previous frame's P2
//! answer. That P2 answer is the context caption.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::sha256_hex;
use crate::ingest::FrameRecord;
use crate::providers::{CaptionClient, CaptionRole, ImageInput, ProviderError};

pub const P1_ANSWER: &str = "{p1_answer}";
pub const PREV_P2_ANSWER: &str = "{prev_p2_answer}";

const DEFAULT_P1: &str = "Describe the person's posture in one sentence. \
Say which way their head is oriented (toward you or away from you) and what their arms and hands are doing.";
const DEFAULT_P2: &str = "Given the person's posture is: {p1_answer} \
A moment ago you described the interaction as: {prev_p2_answer} \
Is the person interacting with you? How, if true, is the person interacting with you? Answer in one sentence.";
const DEFAULT_P2_FIRST: &str = "Given the person's posture is: {p1_answer} \
Is the person interacting with you? How, if true, is the person interacting with you? Answer in one sentence.";

#[derive(Debug, Error)]
pub enum CaptionError {
    #[error("invalid prompt template: {0}")]
    Template(String),
    #[error("P1 answer is empty")]
    EmptyP1Answer,
    #[error("no frames to caption")]
    EmptySequence,
    #[error("frame {frame_index}: {source}")]
    Provider {
        frame_index: usize,
        #[source]
        source: ProviderError,
    },
    #[error("frame {frame_index}: cannot read {}: {source}", path.display())]
    Image {
        frame_index: usize,
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// The three prompt templates. Construct through [`PromptTemplates::new`] or
/// deserialization; both validate placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTemplates", into = "RawTemplates")]
pub struct PromptTemplates {
    p1: String,
    p2: String,
    p2_first: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTemplates {
    p1: String,
    p2: String,
    p2_first: String,
}

impl TryFrom<RawTemplates> for PromptTemplates {
    type Error = CaptionError;

    fn try_from(raw: RawTemplates) -> Result<Self, Self::Error> {
        Self::new(raw.p1, raw.p2, raw.p2_first)
    }
}

impl From<PromptTemplates> for RawTemplates {
    fn from(t: PromptTemplates) -> Self {
        RawTemplates { p1: t.p1, p2: t.p2, p2_first: t.p2_first }
    }
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::new(DEFAULT_P1.into(), DEFAULT_P2.into(), DEFAULT_P2_FIRST.into()).expect("default templates are valid")
    }
}

impl PromptTemplates {
    pub fn new(p1: String, p2: String, p2_first: String) -> Result<Self, CaptionError> {
        let count = |s: &str, token: &str| s.matches(token).count();
        if p1.trim().is_empty() {
            return Err(CaptionError::Template("p1 is empty".into()));
        }
        if count(&p1, P1_ANSWER) + count(&p1, PREV_P2_ANSWER) > 0 {
            return Err(CaptionError::Template("p1 must not contain placeholders".into()));
        }
        if count(&p2, P1_ANSWER) != 1 || count(&p2, PREV_P2_ANSWER) != 1 {
            return Err(CaptionError::Template(format!(
                "p2 must contain {P1_ANSWER} and {PREV_P2_ANSWER} exactly once each"
            )));
        }
        if count(&p2_first, P1_ANSWER) != 1 || count(&p2_first, PREV_P2_ANSWER) != 0 {
            return Err(CaptionError::Template(format!(
                "p2_first must contain {P1_ANSWER} exactly once and no {PREV_P2_ANSWER}"
            )));
        }
        Ok(Self { p1, p2, p2_first })
    }

    /// Reads `prompts.json`: `{"p1": .., "p2": .., "p2_first": ..}`.
    pub fn load(path: &Path) -> Result<Self, CaptionError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| CaptionError::Template(format!("{}: {e}", path.display())))
    }

    pub fn p1_template(&self) -> &str {
        &self.p1
    }

    pub fn p2_template(&self) -> &str {
        &self.p2
    }

    pub fn p2_first_template(&self) -> &str {
        &self.p2_first
    }
}

pub fn render_p1(templates: &PromptTemplates) -> String {
    templates.p1.clone()
}

/// Fills the P2 template. Substituted answers are inserted verbatim and never
/// re-scanned, so an answer that happens to contain placeholder text is left
/// alone.
pub fn render_p2(templates: &PromptTemplates, p1_answer: &str, prev_p2_answer: Option<&str>) -> Result<String, CaptionError> {
    if p1_answer.trim().is_empty() {
        return Err(CaptionError::EmptyP1Answer);
    }
    Ok(match prev_p2_answer {
        None => fill(&templates.p2_first, &[(P1_ANSWER, p1_answer)]),
        Some(prev) => fill(&templates.p2, &[(P1_ANSWER, p1_answer), (PREV_P2_ANSWER, prev)]),
    })
}

fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + values.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = template;
    loop {
        let next = values
            .iter()
            .filter_map(|&(token, value)| rest.find(token).map(|pos| (pos, token, value)))
            .min_by_key(|&(pos, _, _)| pos);
        match next {
            Some((pos, token, value)) => {
                out.push_str(&rest[..pos]);
                out.push_str(value);
                rest = &rest[pos + token.len()..];
            }
            None => {
                out.push_str(rest);
                return out;
            }
        }
    }
}

/// Pose and context captions for one frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameCaptions {
    pub video_id: String,
    pub frame_index: usize,
    pub pose_caption: String,
    pub context_caption: String,
    pub model_name: String,
    pub p1_prompt_hash: String,
    pub p2_prompt_hash: String,
}

/// Captions `frames` in order. Each frame's P2 prompt carries that frame's
/// pose caption and the previous frame's context caption, so frames are
/// processed strictly one after another.
pub fn caption_sequence(
    frames: &[FrameRecord],
    templates: &PromptTemplates,
    client: &CaptionClient,
) -> Result<Vec<FrameCaptions>, CaptionError> {
    if frames.is_empty() {
        return Err(CaptionError::EmptySequence);
    }
    let p1 = render_p1(templates);
    let p1_hash = sha256_hex(&p1);
    let mut out: Vec<FrameCaptions> = Vec::with_capacity(frames.len());
    for frame in frames {
        let frame_index = frame.frame_index;
        let bytes = fs::read(&frame.image_ref).map_err(|source| CaptionError::Image {
            frame_index,
            path: frame.image_ref.clone(),
            source,
        })?;
        let image = ImageInput { bytes: &bytes, content_hash: &frame.content_hash, source_hash: &frame.source_hash };
        let provider = |source| CaptionError::Provider { frame_index, source };

        let pose = client.caption(&image, &p1, CaptionRole::Pose).map_err(provider)?;
        let previous = out.last().map(|c| c.context_caption.as_str());
        let p2 = render_p2(templates, &pose, previous)?;
        let context = client.caption(&image, &p2, CaptionRole::Context).map_err(provider)?;

        out.push(FrameCaptions {
            video_id: frame.video_id.clone(),
            frame_index,
            pose_caption: pose,
            context_caption: context,
            model_name: client.model_name().to_string(),
            p1_prompt_hash: p1_hash.clone(),
            p2_prompt_hash: sha256_hex(&p2),
        });
    }
    Ok(out)
}
