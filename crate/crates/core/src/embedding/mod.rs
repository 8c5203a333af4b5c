//! Unit-norm frame and text embeddings, similarity primitives, and the
//! providers that produce them.

mod scenario;
mod tracefile;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use scenario::{synthetic_trace, EventSpec, ScenarioSpec};
pub use tracefile::{read_trace, read_trace_file, write_trace, write_trace_file, TRACE_MAGIC, TRACE_VERSION};

/// Default latent dimension, matching a ViT-B/32 style joint space.
pub const DEFAULT_DIM: usize = 512;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("overlapping events for `{proposition}` demand contradictory similarity ({first} vs {second})")]
    Conflict {
        proposition: String,
        first: f64,
        second: f64,
    },
    #[error("infeasible similarity targets: {0}")]
    Infeasible(String),
    #[error("frame {index} out of range for trace of {frames} frames")]
    FrameOutOfRange { index: usize, frames: usize },
    #[error("trace file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("remote provider: {0}")]
    Remote(String),
}

/// An l2-normalized embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

/// Scales `v` to unit l2 norm.
pub fn normalize(v: &[f64]) -> Result<EmbeddingVector, EmbeddingError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok(EmbeddingVector(v.iter().map(|x| (x / norm) as f32).collect()))
}

/// Dot product of two unit vectors (cosine similarity).
pub fn similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    dot(a.as_slice(), b.as_slice())
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> Result<f64, EmbeddingError> {
    if a.len() != b.len() {
        return Err(EmbeddingError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum())
}

/// T x d matrix of normalized frame embeddings, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTrace {
    dim: usize,
    fps: f32,
    data: Vec<f32>,
}

impl EmbeddingTrace {
    /// Rows must already be unit-norm (checked within 1e-4 to tolerate f32 storage).
    pub fn new(dim: usize, fps: f32, data: Vec<f32>) -> Result<Self, EmbeddingError> {
        if dim < 2 {
            return Err(EmbeddingError::Format(format!("dimension {dim} < 2")));
        }
        if data.is_empty() || data.len() % dim != 0 {
            return Err(EmbeddingError::Format(format!(
                "{} values do not form whole rows of {dim}",
                data.len()
            )));
        }
        if !(fps > 0.0) || !fps.is_finite() {
            return Err(EmbeddingError::Format(format!("fps {fps} must be positive")));
        }
        for (t, row) in data.chunks_exact(dim).enumerate() {
            let n = row.iter().map(|x| *x as f64 * *x as f64).sum::<f64>().sqrt();
            if (n - 1.0).abs() > 1e-4 {
                return Err(EmbeddingError::Format(format!("row {t} has norm {n}")));
            }
        }
        Ok(Self { dim, fps, data })
    }

    pub fn from_vectors(fps: f32, rows: &[EmbeddingVector]) -> Result<Self, EmbeddingError> {
        let dim = rows.first().map(|r| r.dim()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.dim() != dim {
                return Err(EmbeddingError::DimensionMismatch {
                    left: dim,
                    right: r.dim(),
                });
            }
            data.extend_from_slice(r.as_slice());
        }
        Self::new(dim, fps, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fps(&self) -> f32 {
        self.fps
    }

    pub fn frame_count(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frame(&self, t: usize) -> EmbeddingVector {
        EmbeddingVector(self.row(t).to_vec())
    }

    pub fn timestamp(&self, t: usize) -> f64 {
        t as f64 / self.fps as f64
    }

    pub fn values(&self) -> &[f32] {
        &self.data
    }
}

/// Text fed to the text encoder for a proposition identifier.
pub fn phrase_for(proposition: &str) -> String {
    proposition.replace('_', " ")
}

/// Deterministic unit embedding for a phrase: a Gaussian direction seeded by the
/// phrase's SHA-256 digest. Shared by the synthetic and file providers so that
/// traces produced by `synth` agree with the text side.
pub fn phrase_embedding(phrase: &str, dim: usize) -> EmbeddingVector {
    let seed: [u8; 32] = Sha256::digest(phrase.as_bytes()).into();
    let mut rng = ChaCha8Rng::from_seed(seed);
    loop {
        let raw: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        if let Ok(v) = normalize(&raw) {
            return v;
        }
    }
}

/// Source of frame and text embeddings.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn frame_count(&self) -> usize;
    fn fps(&self) -> f32;
    fn encode_frames(&self, frames: &[usize]) -> Result<Vec<EmbeddingVector>, EmbeddingError>;
    fn encode_text(&self, phrases: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError>;
}

/// Encodes every frame of the provider's video into a trace.
pub fn encode_trace(provider: &dyn EmbeddingProvider) -> Result<EmbeddingTrace, EmbeddingError> {
    let frames: Vec<usize> = (0..provider.frame_count()).collect();
    let rows = provider.encode_frames(&frames)?;
    EmbeddingTrace::from_vectors(provider.fps(), &rows)
}

/// Provider over an in-memory trace; backs both the synthetic and the file
/// providers. Text goes through [`phrase_embedding`].
#[derive(Debug, Clone)]
pub struct TraceProvider {
    trace: EmbeddingTrace,
}

impl TraceProvider {
    pub fn new(trace: EmbeddingTrace) -> Self {
        Self { trace }
    }

    /// Generates the trace from a scenario.
    pub fn synthetic(scenario: &ScenarioSpec, seed: u64) -> Result<Self, EmbeddingError> {
        Ok(Self::new(synthetic_trace(scenario, seed)?))
    }

    /// Loads a binary trace file.
    pub fn from_file(path: &Path) -> Result<Self, EmbeddingError> {
        Ok(Self::new(read_trace_file(path)?))
    }

    pub fn trace(&self) -> &EmbeddingTrace {
        &self.trace
    }
}

impl EmbeddingProvider for TraceProvider {
    fn dim(&self) -> usize {
        self.trace.dim()
    }

    fn frame_count(&self) -> usize {
        self.trace.frame_count()
    }

    fn fps(&self) -> f32 {
        self.trace.fps()
    }

    fn encode_frames(&self, frames: &[usize]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        frames
            .iter()
            .map(|&t| {
                if t >= self.trace.frame_count() {
                    Err(EmbeddingError::FrameOutOfRange {
                        index: t,
                        frames: self.trace.frame_count(),
                    })
                } else {
                    Ok(self.trace.frame(t))
                }
            })
            .collect()
    }

    fn encode_text(&self, phrases: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        Ok(phrases
            .iter()
            .map(|p| phrase_embedding(p, self.trace.dim()))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_examples() {
        let v = normalize(&[3.0, 4.0]).unwrap();
        assert!((v.as_slice()[0] - 0.6).abs() < 1e-7);
        assert!((v.as_slice()[1] - 0.8).abs() < 1e-7);
        let u = normalize(&[0.0, 1.0]).unwrap();
        assert_eq!(u.as_slice(), &[0.0, 1.0]);
        assert!(matches!(normalize(&[0.0, 0.0]), Err(EmbeddingError::ZeroVector)));
    }

    #[test]
    fn similarity_examples() {
        let x = normalize(&[1.0, 0.0]).unwrap();
        let y = normalize(&[0.0, 1.0]).unwrap();
        assert_eq!(similarity(&x, &x).unwrap(), 1.0);
        assert_eq!(similarity(&x, &y).unwrap(), 0.0);
        let a = normalize(&[0.6, 0.8]).unwrap();
        let b = normalize(&[0.8, 0.6]).unwrap();
        assert!((similarity(&a, &b).unwrap() - 0.96).abs() < 1e-6);
        let z = normalize(&[1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            similarity(&x, &z),
            Err(EmbeddingError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn phrase_embedding_is_stable() {
        let a = phrase_embedding("man uses branches", 64);
        let b = phrase_embedding("man uses branches", 64);
        assert_eq!(a, b);
        assert_ne!(a, phrase_embedding("man finds branches", 64));
        assert_eq!(phrase_for("use_branches"), "use branches");
    }

    #[test]
    fn provider_rejects_out_of_range() {
        let trace = EmbeddingTrace::new(2, 1.0, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let p = TraceProvider::new(trace);
        assert_eq!(p.encode_frames(&[1]).unwrap()[0].as_slice(), &[0.0, 1.0]);
        assert!(p.encode_frames(&[2]).is_err());
    }

    proptest! {
        #[test]
        fn self_similarity_is_one(v in prop::collection::vec(-10.0f64..10.0, 2..64)) {
            prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
            let u = normalize(&v).unwrap();
            prop_assert!((similarity(&u, &u).unwrap() - 1.0).abs() < 1e-6);
        }

        #[test]
        fn scaling_invariance(
            v in prop::collection::vec(-10.0f64..10.0, 8),
            w in prop::collection::vec(-10.0f64..10.0, 8),
            k in 0.01f64..100.0,
        ) {
            prop_assume!(v.iter().any(|x| x.abs() > 1e-3) && w.iter().any(|x| x.abs() > 1e-3));
            let scaled: Vec<f64> = v.iter().map(|x| x * k).collect();
            let a = similarity(&normalize(&v).unwrap(), &normalize(&w).unwrap()).unwrap();
            let b = similarity(&normalize(&scaled).unwrap(), &normalize(&w).unwrap()).unwrap();
            prop_assert!((a - b).abs() < 1e-6);
            prop_assert!((-1.0 - 1e-6..=1.0 + 1e-6).contains(&a));
        }
    }
}
