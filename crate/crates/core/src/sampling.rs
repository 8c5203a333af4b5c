//! Two-stage adaptive frame sampling.
//!
//! Stage 1 keeps frames whose best similarity to any proposition exceeds
//! `tau_s`, widened by `w` frames on each side. Stage 2 walks the surviving
//! candidates in time order and keeps a frame as a keyframe only when its
//! similarity to the current base keyframe drops below `tau_r`. Detection then
//! runs on every keyframe and its `delta`-neighbourhood.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{dot, EmbeddingError, EmbeddingTrace, EmbeddingVector};

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("at least one proposition embedding is required")]
    NoPropositions,
    #[error("empty trace")]
    EmptyTrace,
    #[error("invalid sampling config: {0}")]
    Config(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub tau_s: f64,
    pub tau_r: f64,
    /// Stage-1 context radius in frames.
    pub w: usize,
    /// Detection neighbourhood radius in frames.
    pub delta: usize,
    /// Frames per automaton window.
    pub kappa: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            tau_s: 0.21,
            tau_r: 0.9,
            w: 2,
            delta: 2,
            kappa: 16,
        }
    }
}

impl SamplingConfig {
    /// `tau_s` may go down to -1 and `tau_r` above 1 so that both stages can be
    /// switched off entirely (every frame seeds, every candidate is kept).
    pub fn validate(&self) -> Result<(), SamplingError> {
        if !(-1.0..=1.0).contains(&self.tau_s) {
            return Err(SamplingError::Config(format!("tau_s {} outside [-1, 1]", self.tau_s)));
        }
        if !(self.tau_r >= 0.0) || !self.tau_r.is_finite() {
            return Err(SamplingError::Config(format!("tau_r {} must be >= 0", self.tau_r)));
        }
        if self.kappa == 0 {
            return Err(SamplingError::Config("kappa must be >= 1".into()));
        }
        Ok(())
    }
}

/// Stage-1 survivors: sorted frame indices and the merged inclusive intervals they form.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub frame_indices: Vec<usize>,
    pub merged_segments: Vec<(usize, usize)>,
}

impl CandidateSet {
    pub fn from_segments(merged_segments: Vec<(usize, usize)>) -> Self {
        let frame_indices = merged_segments.iter().flat_map(|&(s, e)| s..=e).collect();
        Self {
            frame_indices,
            merged_segments,
        }
    }

    pub fn len(&self) -> usize {
        self.frame_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_indices.is_empty()
    }

    pub fn contains(&self, t: usize) -> bool {
        self.frame_indices.binary_search(&t).is_ok()
    }
}

/// Stage-2 result. Every candidate is either a keyframe or maps to the
/// keyframe that was the comparison base when it was discarded.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyframeSet {
    pub keyframes: Vec<usize>,
    pub base_of: BTreeMap<usize, usize>,
}

impl KeyframeSet {
    /// Rebuilds `base_of` from candidates and keyframes: the base of a discarded
    /// frame is always the latest keyframe before it.
    pub fn reconstruct(cand: &CandidateSet, keyframes: Vec<usize>) -> Self {
        let mut base_of = BTreeMap::new();
        for &t in &cand.frame_indices {
            if keyframes.binary_search(&t).is_ok() {
                continue;
            }
            let pos = keyframes.partition_point(|&k| k < t);
            if pos > 0 {
                base_of.insert(t, keyframes[pos - 1]);
            }
        }
        Self { keyframes, base_of }
    }

    pub fn len(&self) -> usize {
        self.keyframes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }

    pub fn is_keyframe(&self, t: usize) -> bool {
        self.keyframes.binary_search(&t).is_ok()
    }

    /// Every frame that survived Stage 1.
    pub fn candidates(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self
            .keyframes
            .iter()
            .copied()
            .chain(self.base_of.keys().copied())
            .collect();
        all.sort_unstable();
        all
    }
}

/// `s_t = max_j sim(f_t, p_j)` for every frame.
pub fn relevancy_scores(
    trace: &EmbeddingTrace,
    props: &[EmbeddingVector],
) -> Result<Vec<f64>, SamplingError> {
    if trace.frame_count() == 0 {
        return Err(SamplingError::EmptyTrace);
    }
    if props.is_empty() {
        return Err(SamplingError::NoPropositions);
    }
    (0..trace.frame_count())
        .map(|t| {
            let row = trace.row(t);
            props.iter().try_fold(f64::NEG_INFINITY, |best, p| {
                Ok(best.max(dot(row, p.as_slice())?))
            })
        })
        .collect()
}

/// Seeds are frames with `s_t > tau_s`; each expands to `[t-w, t+w]` clipped
/// to the video, and intervals that share a frame are merged.
pub fn semantic_filter(scores: &[f64], cfg: &SamplingConfig, frame_count: usize) -> CandidateSet {
    let mut segments: Vec<(usize, usize)> = Vec::new();
    let last = frame_count.saturating_sub(1);
    for (t, &s) in scores.iter().enumerate().take(frame_count) {
        if s <= cfg.tau_s {
            continue;
        }
        let lo = t.saturating_sub(cfg.w);
        let hi = (t + cfg.w).min(last);
        match segments.last_mut() {
            Some(seg) if lo <= seg.1 => seg.1 = seg.1.max(hi),
            _ => segments.push((lo, hi)),
        }
    }
    CandidateSet::from_segments(segments)
}

/// Sequential keyframe selection against a rolling base.
pub fn select_keyframes(
    trace: &EmbeddingTrace,
    cand: &CandidateSet,
    cfg: &SamplingConfig,
) -> KeyframeSet {
    let mut keys = KeyframeSet::default();
    let mut frames = cand.frame_indices.iter().copied();
    let Some(first) = frames.next() else {
        return keys;
    };
    keys.keyframes.push(first);
    let mut base = first;
    for t in frames {
        // rows of one trace always share a dimension
        let r = dot(trace.row(base), trace.row(t)).unwrap_or(1.0);
        if r < cfg.tau_r {
            keys.keyframes.push(t);
            base = t;
        } else {
            keys.base_of.insert(t, base);
        }
    }
    keys
}

/// Union of `[k-delta, k+delta]` over keyframes, clipped, sorted, deduplicated.
pub fn detection_set(keys: &KeyframeSet, cfg: &SamplingConfig, frame_count: usize) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    if frame_count == 0 {
        return out;
    }
    for &k in &keys.keyframes {
        let lo = k.saturating_sub(cfg.delta);
        let hi = (k + cfg.delta).min(frame_count - 1);
        let from = match out.last() {
            Some(&prev) if prev >= lo => prev + 1,
            _ => lo,
        };
        out.extend(from..=hi);
    }
    out
}

/// `(alpha, rho) = (|cand| / T, |K| / |cand|)`, with `rho = 0` for no candidates.
pub fn retention_stats(cand: &CandidateSet, keys: &KeyframeSet, frame_count: usize) -> (f64, f64) {
    let t = frame_count.max(1) as f64;
    let alpha = cand.len() as f64 / t;
    let rho = if cand.is_empty() {
        0.0
    } else {
        keys.len() as f64 / cand.len() as f64
    };
    (alpha, rho)
}

/// Everything the two sampling stages produced for one trace.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingOutcome {
    pub scores: Vec<f64>,
    pub candidates: CandidateSet,
    pub keyframes: KeyframeSet,
    pub detect: Vec<usize>,
}

pub fn run_sampling(
    trace: &EmbeddingTrace,
    props: &[EmbeddingVector],
    cfg: &SamplingConfig,
) -> Result<SamplingOutcome, SamplingError> {
    cfg.validate()?;
    let scores = relevancy_scores(trace, props)?;
    let candidates = semantic_filter(&scores, cfg, trace.frame_count());
    let keyframes = select_keyframes(trace, &candidates, cfg);
    let detect = detection_set(&keyframes, cfg, trace.frame_count());
    Ok(SamplingOutcome {
        scores,
        candidates,
        keyframes,
        detect,
    })
}

/// JSON sampling report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingReport {
    #[serde(rename = "T")]
    pub frame_count: usize,
    pub tau_s: f64,
    pub tau_r: f64,
    pub w: usize,
    pub delta: usize,
    pub candidate_segments: Vec<(usize, usize)>,
    pub keyframes: Vec<usize>,
    pub alpha: f64,
    pub rho: f64,
    /// `100 * |detect set| / T`.
    pub foi_percent: f64,
}

impl SamplingReport {
    pub fn new(outcome: &SamplingOutcome, cfg: &SamplingConfig, frame_count: usize) -> Self {
        let (alpha, rho) = retention_stats(&outcome.candidates, &outcome.keyframes, frame_count);
        Self {
            frame_count,
            tau_s: cfg.tau_s,
            tau_r: cfg.tau_r,
            w: cfg.w,
            delta: cfg.delta,
            candidate_segments: outcome.candidates.merged_segments.clone(),
            keyframes: outcome.keyframes.keyframes.clone(),
            alpha,
            rho,
            foi_percent: 100.0 * outcome.detect.len() as f64 / frame_count.max(1) as f64,
        }
    }

    /// Recovers candidates, keyframes (with `base_of`) and the detect set.
    pub fn restore(&self) -> (CandidateSet, KeyframeSet, Vec<usize>) {
        let cand = CandidateSet::from_segments(self.candidate_segments.clone());
        let keys = KeyframeSet::reconstruct(&cand, self.keyframes.clone());
        let cfg = SamplingConfig {
            delta: self.delta,
            ..SamplingConfig::default()
        };
        let detect = detection_set(&keys, &cfg, self.frame_count);
        (cand, keys, detect)
    }
}
