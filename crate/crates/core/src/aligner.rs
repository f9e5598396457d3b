//! Slot-to-frame assignment over a [`SimilarityMatrix`].
//!
//! Two strategies:
//!
//! * **greedy** picks, for each slot independently, the frame with the highest
//!   weighted similarity. Frames may fill several slots unless reuse is
//!   disabled, in which case slots are filled in order from a shrinking pool.
//! * **monotone** maximizes the summed weighted similarity subject to chosen
//!   frame indices strictly increasing with slot index, so the new storyboard
//!   keeps the input footage's temporal order.
//!
//! Ties always go to the smaller frame index; for monotone, to the
//! lexicographically smallest index sequence among equal optima.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::similarity::{Alpha, SimilarityBreakdown, SimilarityMatrix};

#[derive(Debug, Error, PartialEq)]
pub enum AlignError {
    #[error("cannot fill {slots} slots from {frames} frames without reuse")]
    Infeasible { slots: usize, frames: usize },
    #[error("slot {slot} out of range (storyboard has {slots} slots)")]
    SlotOutOfRange { slot: usize, slots: usize },
    #[error("similarity matrix is empty")]
    EmptyMatrix,
    #[error("top_k must be at least 1")]
    InvalidTopK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Greedy,
    Monotone,
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greedy" => Ok(Strategy::Greedy),
            "monotone" => Ok(Strategy::Monotone),
            other => Err(format!("unknown strategy {other:?} (expected greedy or monotone)")),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Greedy => "greedy",
            Strategy::Monotone => "monotone",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignmentConfig {
    #[serde(default)]
    pub alpha: Alpha,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    /// Only consulted by the greedy strategy.
    #[serde(default = "default_reuse")]
    pub allow_frame_reuse: bool,
}

fn default_top_k() -> usize {
    5
}
fn default_reuse() -> bool {
    true
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self { alpha: Alpha::default(), strategy: Strategy::Greedy, top_k: default_top_k(), allow_frame_reuse: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub frame_index: usize,
    pub breakdown: SimilarityBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotAlignment {
    pub slot_index: usize,
    pub chosen_frame_index: usize,
    pub breakdown: SimilarityBreakdown,
    /// Best `top_k` frames for this slot, best first.
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub storyboard_id: String,
    pub video_id: String,
    pub config: AlignmentConfig,
    pub slots: Vec<SlotAlignment>,
    pub total_score: f64,
}

impl AlignmentResult {
    pub fn chosen(&self) -> Vec<usize> {
        self.slots.iter().map(|s| s.chosen_frame_index).collect()
    }
}

/// Descending weighted similarity, then ascending frame index.
fn better(matrix: &SimilarityMatrix, slot: usize, a: usize, b: usize) -> Ordering {
    matrix.weighted(slot, b).total_cmp(&matrix.weighted(slot, a)).then(a.cmp(&b))
}

/// Top `k` frames for `slot`, best first.
pub fn rank_candidates(matrix: &SimilarityMatrix, slot: usize, k: usize) -> Result<Vec<Candidate>, AlignError> {
    if slot >= matrix.slot_count {
        return Err(AlignError::SlotOutOfRange { slot, slots: matrix.slot_count });
    }
    if k == 0 {
        return Err(AlignError::InvalidTopK);
    }
    let mut order: Vec<usize> = (0..matrix.frame_count).collect();
    order.sort_by(|&a, &b| better(matrix, slot, a, b));
    order.truncate(k);
    Ok(order
        .into_iter()
        .map(|frame_index| Candidate { frame_index, breakdown: *matrix.get(slot, frame_index).expect("in range") })
        .collect())
}

fn reweighted(matrix: &SimilarityMatrix, cfg: &AlignmentConfig) -> Result<SimilarityMatrix, AlignError> {
    if cfg.top_k == 0 {
        return Err(AlignError::InvalidTopK);
    }
    if matrix.slot_count == 0 || matrix.frame_count == 0 {
        return Err(AlignError::EmptyMatrix);
    }
    Ok(if matrix.alpha == cfg.alpha.get() { matrix.clone() } else { matrix.with_alpha(cfg.alpha) })
}

fn finish(matrix: &SimilarityMatrix, cfg: &AlignmentConfig, chosen: &[usize]) -> Result<AlignmentResult, AlignError> {
    let mut slots = Vec::with_capacity(chosen.len());
    let mut total_score = 0.0;
    for (slot_index, &frame) in chosen.iter().enumerate() {
        let breakdown = *matrix.get(slot_index, frame).expect("chosen frame in range");
        total_score += breakdown.weighted_sim;
        slots.push(SlotAlignment {
            slot_index,
            chosen_frame_index: frame,
            breakdown,
            candidates: rank_candidates(matrix, slot_index, cfg.top_k)?,
        });
    }
    Ok(AlignmentResult {
        storyboard_id: matrix.storyboard_id.clone(),
        video_id: matrix.video_id.clone(),
        config: *cfg,
        slots,
        total_score,
    })
}

/// Aligns with the configured strategy. The matrix is re-blended first when
/// its alpha differs from the config's.
pub fn align(matrix: &SimilarityMatrix, cfg: &AlignmentConfig) -> Result<AlignmentResult, AlignError> {
    match cfg.strategy {
        Strategy::Greedy => align_greedy(matrix, cfg),
        Strategy::Monotone => align_monotone(matrix, cfg),
    }
}

pub fn align_greedy(matrix: &SimilarityMatrix, cfg: &AlignmentConfig) -> Result<AlignmentResult, AlignError> {
    let m = reweighted(matrix, cfg)?;
    let chosen: Vec<usize> = if cfg.allow_frame_reuse {
        (0..m.slot_count)
            .map(|slot| (0..m.frame_count).min_by(|&a, &b| better(&m, slot, a, b)).expect("non-empty row"))
            .collect()
    } else {
        if m.frame_count < m.slot_count {
            return Err(AlignError::Infeasible { slots: m.slot_count, frames: m.frame_count });
        }
        let mut used = vec![false; m.frame_count];
        (0..m.slot_count)
            .map(|slot| {
                let pick = (0..m.frame_count)
                    .filter(|&j| !used[j])
                    .min_by(|&a, &b| better(&m, slot, a, b))
                    .expect("pool not exhausted");
                used[pick] = true;
                pick
            })
            .collect()
    };
    finish(&m, cfg, &chosen)
}

pub fn align_monotone(matrix: &SimilarityMatrix, cfg: &AlignmentConfig) -> Result<AlignmentResult, AlignError> {
    let m = reweighted(matrix, cfg)?;
    let chosen = monotone_path(&m)?;
    finish(&m, cfg, &chosen)
}

/// Suffix dynamic program. `best[i][j]` is the highest total over slots
/// `i..n` when slot `i` takes frame `j` and later slots take strictly larger
/// frames; `next[i][j]` is the smallest frame achieving it for slot `i + 1`.
/// Walking forward from the smallest optimal start yields the
/// lexicographically smallest optimal sequence.
#[allow(clippy::needless_range_loop)]
fn monotone_path(m: &SimilarityMatrix) -> Result<Vec<usize>, AlignError> {
    let (n, f) = (m.slot_count, m.frame_count);
    if f < n {
        return Err(AlignError::Infeasible { slots: n, frames: f });
    }
    let mut best = vec![vec![f64::NEG_INFINITY; f]; n];
    let mut next = vec![vec![usize::MAX; f]; n];

    // Slot i can only use frames i ..= f - (n - i).
    let last = n - 1;
    for j in last..f {
        best[last][j] = m.weighted(last, j);
    }
    for i in (0..last).rev() {
        // Running max of best[i + 1][j'] over j' > j, scanning right to left;
        // `>=` keeps the smallest index among equal values.
        let mut run_val = f64::NEG_INFINITY;
        let mut run_idx = usize::MAX;
        let hi = f - (n - i);
        for j in (i..=hi).rev() {
            let cand = j + 1;
            if best[i + 1][cand] >= run_val {
                run_val = best[i + 1][cand];
                run_idx = cand;
            }
            best[i][j] = m.weighted(i, j) + run_val;
            next[i][j] = run_idx;
        }
    }

    let mut start = usize::MAX;
    let mut start_val = f64::NEG_INFINITY;
    for j in 0..=(f - n) {
        if best[0][j] > start_val {
            start_val = best[0][j];
            start = j;
        }
    }
    let mut path = Vec::with_capacity(n);
    let mut j = start;
    for i in 0..n {
        path.push(j);
        if i < last {
            j = next[i][j];
        }
    }
    Ok(path)
}
