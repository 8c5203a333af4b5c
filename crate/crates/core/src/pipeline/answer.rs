//! Query translation and final answering over a frame budget.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::embedding::ScenarioSpec;

/// Natural-language query to temporal-logic spec text.
pub trait Translator: Send + Sync {
    fn translate(&self, query: &str) -> Result<String, String>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    /// Evidence score, when the answerer can compute one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

pub trait Answerer: Send + Sync {
    fn answer(&self, query: &str, frames: &[usize]) -> Result<Answer, String>;
}

/// Scores a frame selection by the share of frames inside ground-truth events.
#[derive(Debug, Clone, Default)]
pub struct SyntheticAnswerer {
    events: Vec<Range<usize>>,
}

impl SyntheticAnswerer {
    pub fn new(events: Vec<Range<usize>>) -> Self {
        Self { events }
    }

    pub fn from_scenario(scenario: &ScenarioSpec) -> Self {
        Self::new(
            scenario
                .events
                .iter()
                .map(|e| e.start_frame..e.end_frame + 1)
                .collect(),
        )
    }

    pub fn evidence_score(&self, frames: &[usize]) -> f64 {
        if frames.is_empty() {
            return 0.0;
        }
        let hits = frames
            .iter()
            .filter(|t| self.events.iter().any(|e| e.contains(t)))
            .count();
        hits as f64 / frames.len() as f64
    }
}

impl Answerer for SyntheticAnswerer {
    fn answer(&self, _query: &str, frames: &[usize]) -> Result<Answer, String> {
        let score = self.evidence_score(frames);
        let hits = (score * frames.len() as f64).round() as usize;
        Ok(Answer {
            text: format!("{hits} of {} sampled frames show the queried events", frames.len()),
            score: Some(score),
        })
    }
}

/// Picks `budget` frames evenly spread over the concatenation of `ranges`.
pub fn budget_frames(ranges: &[Range<usize>], budget: usize) -> Vec<usize> {
    let pool: Vec<usize> = ranges.iter().flat_map(|r| r.clone()).collect();
    if pool.len() <= budget {
        return pool;
    }
    let len = pool.len() as f64;
    (0..budget)
        .map(|i| pool[((i as f64 + 0.5) * len / budget as f64) as usize])
        .collect()
}
