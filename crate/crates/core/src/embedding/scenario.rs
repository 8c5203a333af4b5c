//! Synthetic scenarios: declarative event layouts turned into embedding traces
//! with exactly controlled frame/proposition similarities.
//!
//! Each maximal run of frames that share the same set of active events (and,
//! optionally, the same `scene_length` block) is one scene. A scene's frames
//! all have the same projection onto the span of the proposition text
//! embeddings, chosen so that `sim(frame, p)` hits the requested level, plus a
//! component orthogonal to that span which drifts by at most an angle whose
//! cosine bound keeps consecutive frames above `redundancy`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{phrase_embedding, phrase_for, EmbeddingError, EmbeddingTrace};

/// One ground-truth event: frames `start_frame..=end_frame` show `proposition`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub proposition: String,
    pub start_frame: usize,
    pub end_frame: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub frame_count: usize,
    pub dim: usize,
    pub fps: f32,
    pub background_similarity: f64,
    pub events: Vec<EventSpec>,
    /// Propositions that never occur but whose similarity should stay at background.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub propositions: Vec<String>,
    /// Lower bound on similarity between consecutive frames of one scene.
    #[serde(default = "default_redundancy")]
    pub redundancy: f64,
    /// Cut a new scene every this many frames inside a run; 0 disables cuts.
    #[serde(default)]
    pub scene_length: usize,
}

fn default_redundancy() -> f64 {
    0.95
}

/// Margin added above an event's target so f32 storage never rounds below it.
fn target_margin(target: f64) -> f64 {
    1e-3_f64.min((1.0 - target).max(0.0) / 2.0)
}

impl ScenarioSpec {
    pub fn new(frame_count: usize, dim: usize, fps: f32, background_similarity: f64) -> Self {
        Self {
            frame_count,
            dim,
            fps,
            background_similarity,
            events: Vec::new(),
            propositions: Vec::new(),
            redundancy: default_redundancy(),
            scene_length: 0,
        }
    }

    pub fn with_event(mut self, proposition: &str, start: usize, end: usize, similarity: f64) -> Self {
        self.events.push(EventSpec {
            proposition: proposition.to_string(),
            start_frame: start,
            end_frame: end,
            similarity,
        });
        self
    }

    /// Event propositions in first-occurrence order, followed by the extra ones.
    pub fn proposition_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        let all = self
            .events
            .iter()
            .map(|e| &e.proposition)
            .chain(self.propositions.iter());
        for n in all {
            if !names.contains(n) {
                names.push(n.clone());
            }
        }
        names
    }

    /// Inclusive frame intervals of the events for `proposition`.
    pub fn intervals(&self, proposition: &str) -> Vec<(usize, usize)> {
        self.events
            .iter()
            .filter(|e| e.proposition == proposition)
            .map(|e| (e.start_frame, e.end_frame))
            .collect()
    }

    /// Ground-truth window labels: a window is true for a proposition when any
    /// of its frames lies inside one of that proposition's events.
    pub fn window_labels(&self, kappa: usize, propositions: &[String]) -> Vec<Vec<bool>> {
        let windows = self.frame_count.div_ceil(kappa.max(1));
        (0..windows)
            .map(|w| {
                let lo = w * kappa;
                let hi = ((w + 1) * kappa).min(self.frame_count) - 1;
                propositions
                    .iter()
                    .map(|p| self.intervals(p).iter().any(|&(s, e)| s <= hi && e >= lo))
                    .collect()
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), EmbeddingError> {
        let bad = |m: String| Err(EmbeddingError::Scenario(m));
        if self.frame_count == 0 {
            return bad("frame_count must be >= 1".into());
        }
        if u32::try_from(self.frame_count).is_err() {
            return bad("frame_count exceeds u32".into());
        }
        if self.dim < 2 || self.dim > u16::MAX as usize {
            return bad(format!("dim {} outside [2, 65535]", self.dim));
        }
        if !(self.fps > 0.0) || !self.fps.is_finite() {
            return bad(format!("fps {} must be positive", self.fps));
        }
        if !(0.0..1.0).contains(&self.background_similarity) {
            return bad(format!(
                "background_similarity {} outside [0, 1)",
                self.background_similarity
            ));
        }
        if !(self.redundancy > -1.0 && self.redundancy <= 1.0) {
            return bad(format!("redundancy {} outside (-1, 1]", self.redundancy));
        }
        for e in &self.events {
            if !crate::tlspec::is_identifier(&e.proposition) {
                return bad(format!("invalid proposition name {:?}", e.proposition));
            }
            if e.start_frame > e.end_frame || e.end_frame >= self.frame_count {
                return bad(format!(
                    "event {} [{}, {}] outside [0, {})",
                    e.proposition, e.start_frame, e.end_frame, self.frame_count
                ));
            }
            if e.similarity > 1.0 {
                return Err(EmbeddingError::Infeasible(format!(
                    "event {} similarity {} > 1",
                    e.proposition, e.similarity
                )));
            }
            if !(e.similarity >= -1.0) {
                return bad(format!("event {} similarity {} < -1", e.proposition, e.similarity));
            }
        }
        let m = self.proposition_names().len();
        if m + 2 > self.dim {
            return bad(format!("{m} propositions need dim >= {}", m + 2));
        }
        Ok(())
    }

    /// Per-frame target similarity for each proposition, `None` where inactive.
    fn active_targets(&self, names: &[String]) -> Result<Vec<Vec<Option<f64>>>, EmbeddingError> {
        let mut active = vec![vec![None; names.len()]; self.frame_count];
        for e in &self.events {
            let j = names.iter().position(|n| *n == e.proposition).unwrap();
            for row in &mut active[e.start_frame..=e.end_frame] {
                match row[j] {
                    Some(prev) if prev != e.similarity => {
                        return Err(EmbeddingError::Conflict {
                            proposition: e.proposition.clone(),
                            first: prev,
                            second: e.similarity,
                        })
                    }
                    _ => row[j] = Some(e.similarity),
                }
            }
        }
        Ok(active)
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn dot64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Removes the components along each (orthonormal) basis vector, then normalizes.
fn orthonormal_complement(mut v: Vec<f64>, basis: &[&[f64]]) -> Option<Vec<f64>> {
    // two passes for numerical hygiene
    for _ in 0..2 {
        for q in basis {
            let c = dot64(&v, q);
            v.iter_mut().zip(q.iter()).for_each(|(x, y)| *x -= c * y);
        }
    }
    let n = dot64(&v, &v).sqrt();
    (n > 1e-9).then(|| v.into_iter().map(|x| x / n).collect())
}

/// Builds a deterministic trace whose similarities follow `scenario`.
pub fn synthetic_trace(scenario: &ScenarioSpec, seed: u64) -> Result<EmbeddingTrace, EmbeddingError> {
    scenario.validate()?;
    let dim = scenario.dim;
    let names = scenario.proposition_names();
    let m = names.len();
    let active = scenario.active_targets(&names)?;

    // Gram-Schmidt over the text embeddings: u_j = sum_{i<=j} r[i][j] q_i.
    let texts: Vec<Vec<f64>> = names
        .iter()
        .map(|n| {
            phrase_embedding(&phrase_for(n), dim)
                .as_slice()
                .iter()
                .map(|x| *x as f64)
                .collect()
        })
        .collect();
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut r = vec![vec![0.0; m]; m];
    for (j, u) in texts.iter().enumerate() {
        let mut v = u.clone();
        for (i, qi) in q.iter().enumerate() {
            r[i][j] = dot64(qi, u);
            v.iter_mut().zip(qi).for_each(|(x, y)| *x -= r[i][j] * y);
        }
        let n = dot64(&v, &v).sqrt();
        if n < 1e-6 {
            return Err(EmbeddingError::Infeasible(format!(
                "text embedding of `{}` is linearly dependent on earlier propositions",
                names[j]
            )));
        }
        r[j][j] = n;
        q.push(v.into_iter().map(|x| x / n).collect());
    }

    let theta = scenario.redundancy.clamp(-1.0, 1.0).acos() / 2.0;
    let (drift_cos, drift_sin) = (theta.cos(), theta.sin());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(scenario.frame_count * dim);

    let mut t = 0;
    while t < scenario.frame_count {
        let mut end = t + 1;
        while end < scenario.frame_count
            && active[end] == active[t]
            && (scenario.scene_length == 0 || end - t < scenario.scene_length)
        {
            end += 1;
        }

        // targets for this scene
        let s: Vec<f64> = active[t]
            .iter()
            .map(|a| match a {
                Some(target) => target + target_margin(*target),
                None => scenario.background_similarity * rng.random::<f64>(),
            })
            .collect();
        // forward substitution on R^T y = s
        let mut y = vec![0.0; m];
        for j in 0..m {
            let acc: f64 = (0..j).map(|i| r[i][j] * y[i]).sum();
            y[j] = (s[j] - acc) / r[j][j];
        }
        let span_norm2 = dot64(&y, &y);
        if span_norm2 > 1.0 + 1e-9 {
            return Err(EmbeddingError::Infeasible(format!(
                "frames {t}..{end} request similarities {s:?} that no unit vector can meet"
            )));
        }
        let residual = (1.0 - span_norm2).max(0.0).sqrt();
        let mut anchor = vec![0.0; dim];
        for (yi, qi) in y.iter().zip(&q) {
            anchor.iter_mut().zip(qi).for_each(|(a, b)| *a += yi * b);
        }

        let qrefs: Vec<&[f64]> = q.iter().map(|v| v.as_slice()).collect();
        let scene = loop {
            if let Some(v) = orthonormal_complement(gaussian(&mut rng, dim), &qrefs) {
                break v;
            }
        };
        let mut with_scene = qrefs.clone();
        with_scene.push(&scene);

        for _ in t..end {
            let jitter = loop {
                if let Some(v) = orthonormal_complement(gaussian(&mut rng, dim), &with_scene) {
                    break v;
                }
            };
            let frame: Vec<f64> = (0..dim)
                .map(|k| anchor[k] + residual * (drift_cos * scene[k] + drift_sin * jitter[k]))
                .collect();
            let n = dot64(&frame, &frame).sqrt();
            data.extend(frame.iter().map(|x| (x / n) as f32));
        }
        t = end;
    }

    EmbeddingTrace::new(dim, scenario.fps, data)
}
