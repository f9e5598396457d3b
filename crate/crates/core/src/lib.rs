//! Re-express a reference interaction storyboard with frames taken from
//! another participant's footage.
//!
//! The pipeline runs in stages, each usable on its own:
//!
//! 1. [`ingest`] samples footage into person-cropped [`FrameRecord`]s.
//! 2. [`captioner`] asks a vision-language model for a pose caption and a
//!    chained interaction-context caption per frame.
//! 3. [`similarity`] embeds captions and builds the slot × frame matrix of
//!    weighted cosine similarities.
//! 4. [`aligner`] picks one frame per storyboard slot (per-slot argmax, or a
//!    temporally monotone assignment).
//! 5. [`storyboard`] assembles, curates and renders the result.
//!
//! [`project`] wires the stages together over an on-disk project layout.
//!
//! [`FrameRecord`]: ingest::FrameRecord

pub mod aligner;
pub mod captioner;
pub mod digest;
pub mod ingest;
pub mod project;
pub mod providers;
pub mod similarity;
pub mod storyboard;

pub use aligner::{align, AlignmentConfig, AlignmentResult, Strategy};
pub use captioner::{caption_sequence, FrameCaptions, PromptTemplates};
pub use ingest::{FrameRecord, SamplingConfig, SourceVideo};
pub use similarity::{build_matrix, cosine, weighted_similarity, Alpha, SimilarityBreakdown, SimilarityMatrix};
pub use storyboard::{CurationEdit, Storyboard};
