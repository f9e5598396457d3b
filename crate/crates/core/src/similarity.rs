//! Caption similarity.
//!
//! Pose and context captions are embedded separately; a storyboard slot and a
//! video frame are compared by the cosine of each caption pair, and the two
//! cosines are blended with weight `alpha` on the pose term. All arithmetic is
//! f64 and cosines are used unclipped.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::captioner::FrameCaptions;
use crate::providers::{EmbeddingClient, EmbeddingVector, ProviderError};

pub const DEFAULT_ALPHA: f64 = 0.2;

#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("alpha {0} outside [0, 1]")]
    AlphaOutOfRange(f64),
    #[error("cannot compare empty caption lists")]
    Empty,
    #[error("embedding for cell ({slot}, {frame}) failed: {source}")]
    Embedding {
        slot: usize,
        frame: usize,
        #[source]
        source: ProviderError,
    },
}

/// Weight of the pose similarity, in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Alpha(f64);

impl Alpha {
    pub fn new(value: f64) -> Result<Self, SimilarityError> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(SimilarityError::AlphaOutOfRange(value))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    pub fn weigh(self, pose_sim: f64, context_sim: f64) -> f64 {
        self.0 * pose_sim + (1.0 - self.0) * context_sim
    }
}

impl Default for Alpha {
    fn default() -> Self {
        Self(DEFAULT_ALPHA)
    }
}

impl TryFrom<f64> for Alpha {
    type Error = SimilarityError;
    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<Alpha> for f64 {
    fn from(a: Alpha) -> f64 {
        a.0
    }
}

/// Dot product of two unit vectors, accumulated in f64.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, SimilarityError> {
    if a.dim != b.dim || a.values.len() != b.values.len() {
        return Err(SimilarityError::DimensionMismatch(a.dim, b.dim));
    }
    Ok(a.values.iter().zip(&b.values).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum())
}

pub fn weighted_similarity(pose_sim: f64, context_sim: f64, alpha: f64) -> Result<f64, SimilarityError> {
    Ok(Alpha::new(alpha)?.weigh(pose_sim, context_sim))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityBreakdown {
    pub pose_sim: f64,
    pub context_sim: f64,
    pub weighted_sim: f64,
    pub alpha: f64,
}

impl SimilarityBreakdown {
    pub fn new(pose_sim: f64, context_sim: f64, alpha: Alpha) -> Self {
        Self { pose_sim, context_sim, weighted_sim: alpha.weigh(pose_sim, context_sim), alpha: alpha.get() }
    }
}

/// Slot-major grid of breakdowns between a storyboard and a video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub storyboard_id: String,
    pub video_id: String,
    pub alpha: f64,
    pub slot_count: usize,
    pub frame_count: usize,
    pub cells: Vec<SimilarityBreakdown>,
}

impl SimilarityMatrix {
    pub fn get(&self, slot: usize, frame: usize) -> Option<&SimilarityBreakdown> {
        if slot < self.slot_count && frame < self.frame_count {
            self.cells.get(slot * self.frame_count + frame)
        } else {
            None
        }
    }

    pub fn row(&self, slot: usize) -> &[SimilarityBreakdown] {
        &self.cells[slot * self.frame_count..(slot + 1) * self.frame_count]
    }

    pub fn weighted(&self, slot: usize, frame: usize) -> f64 {
        self.cells[slot * self.frame_count + frame].weighted_sim
    }

    /// Same pose and context similarities re-blended with a new alpha.
    pub fn with_alpha(&self, alpha: Alpha) -> Self {
        Self {
            alpha: alpha.get(),
            cells: self.cells.iter().map(|c| SimilarityBreakdown::new(c.pose_sim, c.context_sim, alpha)).collect(),
            ..self.clone()
        }
    }

    /// A matrix whose weighted similarities are exactly `rows`, for
    /// exercising the aligner directly. Uses alpha = 1 with the pose term set
    /// to each value, so the invariant `weighted = alpha·pose + (1−alpha)·context`
    /// holds bit for bit.
    pub fn from_weighted_rows(rows: &[Vec<f64>]) -> Self {
        let frame_count = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == frame_count), "ragged rows");
        let alpha = Alpha(1.0);
        Self {
            storyboard_id: String::new(),
            video_id: String::new(),
            alpha: 1.0,
            slot_count: rows.len(),
            frame_count,
            cells: rows.iter().flatten().map(|&w| SimilarityBreakdown::new(w, w, alpha)).collect(),
        }
    }

    /// Weighted similarities as TSV, one row per slot, six decimals.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for slot in 0..self.slot_count {
            let line: Vec<String> = self.row(slot).iter().map(|c| format!("{:.6}", c.weighted_sim)).collect();
            let _ = writeln!(out, "{}", line.join("\t"));
        }
        out
    }
}

/// Builds the matrix between storyboard slots and video frames. Each distinct
/// caption text is embedded once.
pub fn build_matrix(
    storyboard_id: &str,
    video_id: &str,
    storyboard_captions: &[FrameCaptions],
    frame_captions: &[FrameCaptions],
    alpha: Alpha,
    embedder: &EmbeddingClient,
) -> Result<SimilarityMatrix, SimilarityError> {
    if storyboard_captions.is_empty() || frame_captions.is_empty() {
        return Err(SimilarityError::Empty);
    }

    // First cell that needs each text, for error context.
    let mut texts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (i, c) in storyboard_captions.iter().enumerate() {
        texts.entry(&c.pose_caption).or_insert((i, 0));
        texts.entry(&c.context_caption).or_insert((i, 0));
    }
    for (j, c) in frame_captions.iter().enumerate() {
        texts.entry(&c.pose_caption).or_insert((0, j));
        texts.entry(&c.context_caption).or_insert((0, j));
    }
    let embedded: BTreeMap<&str, EmbeddingVector> = texts
        .par_iter()
        .map(|(&text, &(slot, frame))| {
            embedder
                .embed(text)
                .map(|v| (text, v))
                .map_err(|source| SimilarityError::Embedding { slot, frame, source })
        })
        .collect::<Result<_, _>>()?;

    let mut cells = Vec::with_capacity(storyboard_captions.len() * frame_captions.len());
    for s in storyboard_captions {
        for f in frame_captions {
            let pose = cosine(&embedded[s.pose_caption.as_str()], &embedded[f.pose_caption.as_str()])?;
            let context = cosine(&embedded[s.context_caption.as_str()], &embedded[f.context_caption.as_str()])?;
            cells.push(SimilarityBreakdown::new(pose, context, alpha));
        }
    }
    Ok(SimilarityMatrix {
        storyboard_id: storyboard_id.to_string(),
        video_id: video_id.to_string(),
        alpha: alpha.get(),
        slot_count: storyboard_captions.len(),
        frame_count: frame_captions.len(),
        cells,
    })
}
