//! Window-level proposition grounding.
//!
//! Windows of `kappa` frames tile the video. A window is measured when it holds
//! a detect-set frame, propagated when it holds only Stage-2 discarded frames
//! (it copies the row of its base keyframe's window), and gets the default
//! confidence 0.0 otherwise.

use std::ops::Range;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embedding::ScenarioSpec;
use crate::sampling::{CandidateSet, KeyframeSet};
use crate::tlspec::PropositionSet;

pub const DEFAULT_RETRIES: usize = 3;

#[derive(Debug, Error)]
pub enum DetectionError {
    #[error("proposition set is empty")]
    NoPropositions,
    #[error("kappa must be >= 1")]
    ZeroKappa,
    #[error("batch size must be >= 1")]
    ZeroBatch,
    #[error("frame {frame} outside video of {frame_count} frames")]
    FrameOutOfRange { frame: usize, frame_count: usize },
    #[error("backend returned {got} confidences for {expected} propositions")]
    Arity { expected: usize, got: usize },
    #[error("backend error: {0}")]
    Backend(String),
    #[error("malformed detection matrix: {0}")]
    Malformed(String),
}

/// One window handed to a detector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowRequest {
    pub window: usize,
    pub span: Range<usize>,
    /// Detect-set frame closest to the window centre.
    pub anchor: usize,
}

pub trait DetectorBackend: Send + Sync {
    /// Largest proposition batch a single pass accepts.
    fn max_batch(&self) -> usize;

    /// One confidence in [0, 1] per proposition, in order.
    fn evaluate_batch(
        &self,
        request: &WindowRequest,
        propositions: &[String],
    ) -> Result<Vec<f64>, DetectionError>;
}

/// `confidence = clamp(base + gain * overlap + noise, 0, 1)` where `overlap` is
/// the fraction of the window covered by the proposition's events.
#[derive(Debug, Clone)]
pub struct SyntheticDetector {
    events: Vec<(String, Range<usize>)>,
    pub base: f64,
    pub gain: f64,
    pub sigma: f64,
    pub seed: u64,
    pub max_batch: usize,
}

impl SyntheticDetector {
    pub fn new(events: Vec<(String, Range<usize>)>) -> Self {
        Self {
            events,
            base: 0.0,
            gain: 1.0,
            sigma: 0.0,
            seed: 0,
            max_batch: 8,
        }
    }

    /// Events taken from a scenario, inclusive end frames converted to ranges.
    pub fn from_scenario(scenario: &ScenarioSpec) -> Self {
        Self::new(
            scenario
                .events
                .iter()
                .map(|e| (e.proposition.clone(), e.start_frame..e.end_frame + 1))
                .collect(),
        )
    }

    /// A very large gain turns any overlap into confidence 1.0.
    pub fn indicator(scenario: &ScenarioSpec) -> Self {
        Self {
            gain: 1e9,
            ..Self::from_scenario(scenario)
        }
    }

    pub fn with_noise(mut self, base: f64, gain: f64, sigma: f64, seed: u64) -> Self {
        self.base = base;
        self.gain = gain;
        self.sigma = sigma;
        self.seed = seed;
        self
    }

    pub fn with_max_batch(mut self, b: usize) -> Self {
        self.max_batch = b;
        self
    }

    pub fn overlap_fraction(&self, span: &Range<usize>, proposition: &str) -> f64 {
        if span.is_empty() {
            return 0.0;
        }
        let mut covered = vec![false; span.len()];
        for (name, ev) in &self.events {
            if name != proposition {
                continue;
            }
            for t in ev.start.max(span.start)..ev.end.min(span.end) {
                covered[t - span.start] = true;
            }
        }
        covered.iter().filter(|&&c| c).count() as f64 / span.len() as f64
    }

    fn noise(&self, window: usize, proposition: &str) -> f64 {
        if self.sigma <= 0.0 {
            return 0.0;
        }
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update((window as u64).to_le_bytes());
        h.update(proposition.as_bytes());
        let seed: [u8; 32] = h.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        Normal::new(0.0, self.sigma)
            .map(|n| n.sample(&mut rng))
            .unwrap_or(0.0)
    }

    pub fn confidence(&self, window: usize, span: &Range<usize>, proposition: &str) -> f64 {
        let raw = self.base
            + self.gain * self.overlap_fraction(span, proposition)
            + self.noise(window, proposition);
        raw.clamp(0.0, 1.0)
    }
}

impl DetectorBackend for SyntheticDetector {
    fn max_batch(&self) -> usize {
        self.max_batch
    }

    fn evaluate_batch(
        &self,
        request: &WindowRequest,
        propositions: &[String],
    ) -> Result<Vec<f64>, DetectionError> {
        Ok(propositions
            .iter()
            .map(|p| self.confidence(request.window, &request.span, p))
            .collect())
    }
}

/// Splits propositions into `ceil(|P| / b)` ordered chunks of at most `b`.
pub fn plan_batches(props: &PropositionSet, b: usize) -> Result<Vec<Vec<String>>, DetectionError> {
    if b == 0 {
        return Err(DetectionError::ZeroBatch);
    }
    Ok(props.names().chunks(b).map(|c| c.to_vec()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Measured,
    Propagated,
    Default,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroundingMode {
    /// One backend pass per proposition.
    Sequential,
    /// Propositions grouped into passes of at most `max_batch`.
    #[default]
    Batched,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroundingOptions {
    pub kappa: usize,
    pub mode: GroundingMode,
    pub retries: usize,
    pub in_flight: usize,
}

impl Default for GroundingOptions {
    fn default() -> Self {
        Self {
            kappa: 16,
            mode: GroundingMode::Batched,
            retries: DEFAULT_RETRIES,
            in_flight: 4,
        }
    }
}

/// Window x proposition confidences with per-entry provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMatrix {
    pub kappa: usize,
    pub frame_count: usize,
    pub windows: usize,
    pub propositions: Vec<String>,
    /// Row-major, `windows * propositions.len()`.
    #[serde(rename = "Z")]
    pub z: Vec<f64>,
    pub provenance: Vec<Provenance>,
    /// Source window of each propagated row.
    pub sources: Vec<Option<usize>>,
}

pub fn window_count(frame_count: usize, kappa: usize) -> usize {
    frame_count.div_ceil(kappa)
}

impl DetectionMatrix {
    pub fn filled(frame_count: usize, kappa: usize, propositions: Vec<String>) -> Self {
        let windows = window_count(frame_count, kappa);
        let n = windows * propositions.len();
        Self {
            kappa,
            frame_count,
            windows,
            propositions,
            z: vec![0.0; n],
            provenance: vec![Provenance::Default; n],
            sources: vec![None; windows],
        }
    }

    /// Matrix given directly by confidences, every entry measured.
    pub fn from_rows(
        kappa: usize,
        frame_count: usize,
        propositions: Vec<String>,
        rows: &[Vec<f64>],
    ) -> Result<Self, DetectionError> {
        let mut m = Self::filled(frame_count, kappa, propositions);
        if rows.len() != m.windows {
            return Err(DetectionError::Malformed(format!(
                "{} rows for {} windows",
                rows.len(),
                m.windows
            )));
        }
        for (w, row) in rows.iter().enumerate() {
            m.set_row(w, row, Provenance::Measured)?;
        }
        Ok(m)
    }

    pub fn prop_count(&self) -> usize {
        self.propositions.len()
    }

    pub fn window_span(&self, w: usize) -> Range<usize> {
        let start = w * self.kappa;
        start..((w + 1) * self.kappa).min(self.frame_count)
    }

    pub fn row(&self, w: usize) -> &[f64] {
        let p = self.prop_count();
        &self.z[w * p..(w + 1) * p]
    }

    pub fn get(&self, w: usize, prop: usize) -> f64 {
        self.z[w * self.prop_count() + prop]
    }

    pub fn provenance_row(&self, w: usize) -> &[Provenance] {
        let p = self.prop_count();
        &self.provenance[w * p..(w + 1) * p]
    }

    /// Window status: measured if any entry was measured, else the first entry's flag.
    pub fn window_provenance(&self, w: usize) -> Provenance {
        let row = self.provenance_row(w);
        if row.contains(&Provenance::Measured) {
            Provenance::Measured
        } else {
            row.first().copied().unwrap_or(Provenance::Default)
        }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.propositions.iter().position(|p| p == name)?;
        Some((0..self.windows).map(|w| self.get(w, j)).collect())
    }

    fn set_row(&mut self, w: usize, values: &[f64], flag: Provenance) -> Result<(), DetectionError> {
        let p = self.prop_count();
        if values.len() != p {
            return Err(DetectionError::Arity {
                expected: p,
                got: values.len(),
            });
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(DetectionError::Malformed(format!("confidence {bad} outside [0, 1]")));
        }
        self.z[w * p..(w + 1) * p].copy_from_slice(values);
        self.provenance[w * p..(w + 1) * p].fill(flag);
        Ok(())
    }

    pub fn validate(&self) -> Result<(), DetectionError> {
        if self.kappa == 0 {
            return Err(DetectionError::ZeroKappa);
        }
        if self.windows != window_count(self.frame_count, self.kappa) {
            return Err(DetectionError::Malformed("window count disagrees with T and kappa".into()));
        }
        let n = self.windows * self.prop_count();
        if self.z.len() != n || self.provenance.len() != n || self.sources.len() != self.windows {
            return Err(DetectionError::Malformed("array lengths disagree".into()));
        }
        if self.z.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(DetectionError::Malformed("confidence outside [0, 1]".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("matrix serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, DetectionError> {
        let m: Self =
            serde_json::from_str(s).map_err(|e| DetectionError::Malformed(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }
}

/// Backend traffic produced while grounding.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundingStats {
    pub measured_windows: usize,
    /// Successful and failed attempts, including retries.
    pub passes: usize,
    pub failed_windows: Vec<usize>,
    pub diagnostics: Vec<String>,
}

enum Status {
    Measured(usize),
    Propagated(usize),
    Default,
}

fn classify(
    frame_count: usize,
    kappa: usize,
    detect: &[usize],
    cand: &CandidateSet,
    keys: &KeyframeSet,
) -> Vec<Status> {
    let windows = window_count(frame_count, kappa);
    let mut status: Vec<Status> = (0..windows).map(|_| Status::Default).collect();
    for (w, slot) in status.iter_mut().enumerate() {
        let start = w * kappa;
        let end = ((w + 1) * kappa).min(frame_count);
        let lo = detect.partition_point(|&f| f < start);
        let hi = detect.partition_point(|&f| f < end);
        if lo < hi {
            let twice_mid = start + end - 1;
            let anchor = detect[lo..hi]
                .iter()
                .copied()
                .min_by_key(|&f| (2 * f).abs_diff(twice_mid))
                .unwrap_or(detect[lo]);
            *slot = Status::Measured(anchor);
            continue;
        }
        let c_lo = cand.frame_indices.partition_point(|&f| f < start);
        let c_hi = cand.frame_indices.partition_point(|&f| f < end);
        if let Some(&last) = cand.frame_indices[c_lo..c_hi].last() {
            if let Some(&base) = keys.base_of.get(&last) {
                *slot = Status::Propagated(base / kappa);
            }
        }
    }
    status
}

/// Fills the detection matrix. Measured windows are evaluated concurrently by
/// up to `opts.in_flight` workers; propagated rows are copied afterwards.
pub fn ground_detections(
    backend: &dyn DetectorBackend,
    frame_count: usize,
    detect: &[usize],
    cand: &CandidateSet,
    keys: &KeyframeSet,
    props: &PropositionSet,
    opts: &GroundingOptions,
) -> Result<(DetectionMatrix, GroundingStats), DetectionError> {
    if props.is_empty() {
        return Err(DetectionError::NoPropositions);
    }
    if opts.kappa == 0 {
        return Err(DetectionError::ZeroKappa);
    }
    if let Some(&frame) = detect.iter().find(|&&f| f >= frame_count) {
        return Err(DetectionError::FrameOutOfRange { frame, frame_count });
    }
    let chunks = match opts.mode {
        GroundingMode::Sequential => plan_batches(props, 1)?,
        GroundingMode::Batched => plan_batches(props, backend.max_batch())?,
    };

    let mut matrix = DetectionMatrix::filled(frame_count, opts.kappa, props.names());
    let status = classify(frame_count, opts.kappa, detect, cand, keys);
    let jobs: Vec<WindowRequest> = status
        .iter()
        .enumerate()
        .filter_map(|(w, s)| match s {
            Status::Measured(anchor) => Some(WindowRequest {
                window: w,
                span: matrix.window_span(w),
                anchor: *anchor,
            }),
            _ => None,
        })
        .collect();

    let results: Mutex<Vec<Option<Result<Vec<f64>, String>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    let passes = AtomicUsize::new(0);
    let next = AtomicUsize::new(0);
    let workers = opts.in_flight.clamp(1, jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let row = evaluate_window(backend, job, &chunks, opts.retries, &passes);
                results.lock().expect("results lock")[i] = Some(row);
            });
        }
    });

    let mut stats = GroundingStats {
        measured_windows: jobs.len(),
        passes: passes.into_inner(),
        ..GroundingStats::default()
    };
    let results = results.into_inner().expect("results lock");
    for (job, res) in jobs.iter().zip(results) {
        match res.expect("every job ran") {
            Ok(row) => matrix.set_row(job.window, &row, Provenance::Measured)?,
            Err(msg) => {
                let diag = format!("window {}: {msg}", job.window);
                log::warn!("detector failed, using default confidence: {diag}");
                stats.failed_windows.push(job.window);
                stats.diagnostics.push(diag);
                let zeros = vec![0.0; props.len()];
                matrix.set_row(job.window, &zeros, Provenance::Failed)?;
            }
        }
    }
    for (w, s) in status.iter().enumerate() {
        if let Status::Propagated(src) = *s {
            let row = matrix.row(src).to_vec();
            matrix.set_row(w, &row, Provenance::Propagated)?;
            matrix.sources[w] = Some(src);
        }
    }
    Ok((matrix, stats))
}

fn evaluate_window(
    backend: &dyn DetectorBackend,
    job: &WindowRequest,
    chunks: &[Vec<String>],
    retries: usize,
    passes: &AtomicUsize,
) -> Result<Vec<f64>, String> {
    let mut row = Vec::new();
    for chunk in chunks {
        let mut last_err = String::new();
        let mut done = false;
        for _ in 0..=retries {
            passes.fetch_add(1, Ordering::Relaxed);
            match backend.evaluate_batch(job, chunk) {
                Ok(v) if v.len() == chunk.len() => {
                    row.extend(v.into_iter().map(|c| c.clamp(0.0, 1.0)));
                    done = true;
                    break;
                }
                Ok(v) => {
                    last_err = DetectionError::Arity {
                        expected: chunk.len(),
                        got: v.len(),
                    }
                    .to_string()
                }
                Err(e) => last_err = e.to_string(),
            }
        }
        if !done {
            return Err(format!("{last_err} after {} attempts", retries + 1));
        }
    }
    Ok(row)
}

/// `(windows_measured, backend_passes)` under the given accounting mode.
pub fn measured_call_count(matrix: &DetectionMatrix, b: usize, mode: GroundingMode) -> (usize, usize) {
    let measured = (0..matrix.windows)
        .filter(|&w| {
            matches!(
                matrix.window_provenance(w),
                Provenance::Measured | Provenance::Failed
            )
        })
        .count();
    let per_window = match mode {
        GroundingMode::Sequential => matrix.prop_count(),
        GroundingMode::Batched => matrix.prop_count().div_ceil(b.max(1)),
    };
    (measured, measured * per_window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    fn props(names: &[&str]) -> PropositionSet {
        PropositionSet::from_names(names)
    }

    fn range_props(n: usize) -> PropositionSet {
        PropositionSet::from_names((0..n).map(|i| format!("p{i}")))
    }

    #[test]
    fn batch_plans() {
        let sizes = |n, b| -> Vec<usize> {
            plan_batches(&range_props(n), b)
                .unwrap()
                .iter()
                .map(Vec::len)
                .collect()
        };
        assert_eq!(sizes(5, 8), vec![5]);
        assert_eq!(sizes(17, 8), vec![8, 8, 1]);
        assert_eq!(sizes(5, 2), vec![2, 2, 1]);
        let flat: Vec<String> = plan_batches(&range_props(5), 2).unwrap().concat();
        assert_eq!(flat, range_props(5).names());
        assert!(plan_batches(&range_props(3), 0).is_err());
    }

    #[test]
    fn window_status_rule() {
        let det = SyntheticDetector::new(vec![("a".into(), 4..7)]);
        let cand = CandidateSet::from_segments(vec![(4, 6)]);
        let keys = KeyframeSet::reconstruct(&cand, vec![4, 5, 6]);
        let detect = vec![3, 4, 5, 6, 7];
        let opts = GroundingOptions {
            kappa: 1,
            ..GroundingOptions::default()
        };
        let (m, stats) =
            ground_detections(&det, 10, &detect, &cand, &keys, &props(&["a"]), &opts).unwrap();
        let flags: Vec<Provenance> = (0..10).map(|w| m.window_provenance(w)).collect();
        for w in 0..10 {
            let expect = if (3..=7).contains(&w) {
                Provenance::Measured
            } else {
                Provenance::Default
            };
            assert_eq!(flags[w], expect, "window {w}");
        }
        assert_eq!(m.column("a").unwrap(), vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(stats.measured_windows, 5);
        assert_eq!(stats.passes, 5);
    }

    #[test]
    fn propagation_copies_base_row() {
        let det = SyntheticDetector::new(vec![("a".into(), 0..3)]).with_noise(0.1, 0.5, 0.2, 7);
        let cand = CandidateSet::from_segments(vec![(0, 19)]);
        let keys = KeyframeSet::reconstruct(&cand, vec![1]);
        let opts = GroundingOptions {
            kappa: 4,
            ..GroundingOptions::default()
        };
        let detect = vec![0, 1, 2, 3];
        let (m, _) =
            ground_detections(&det, 20, &detect, &cand, &keys, &props(&["a", "b"]), &opts).unwrap();
        assert_eq!(m.window_provenance(0), Provenance::Measured);
        for w in 1..5 {
            assert_eq!(m.window_provenance(w), Provenance::Propagated);
            assert_eq!(m.sources[w], Some(0));
            assert_eq!(m.row(w), m.row(0));
        }
    }

    #[test]
    fn full_measurement_matches_ground_truth() {
        let scenario = ScenarioSpec::new(100, 8, 1.0, 0.1)
            .with_event("dog", 10, 25, 0.6)
            .with_event("cat", 60, 61, 0.6);
        let det = SyntheticDetector::indicator(&scenario);
        let all: Vec<usize> = (0..100).collect();
        let cand = CandidateSet::from_segments(vec![(0, 99)]);
        let keys = KeyframeSet::reconstruct(&cand, all.clone());
        let p = props(&["dog", "cat"]);
        let opts = GroundingOptions {
            kappa: 8,
            ..GroundingOptions::default()
        };
        let (m, _) = ground_detections(&det, 100, &all, &cand, &keys, &p, &opts).unwrap();
        let truth = scenario.window_labels(8, &p.names());
        for w in 0..m.windows {
            for j in 0..2 {
                assert_eq!(m.get(w, j) == 1.0, truth[w][j], "window {w} prop {j}");
            }
        }
        assert_eq!(m.windows, 13);
        assert_eq!(m.window_span(12), 96..100);
    }

    #[test]
    fn anchor_is_center_most_detect_frame() {
        struct Recorder(Mutex<Vec<usize>>);
        impl DetectorBackend for Recorder {
            fn max_batch(&self) -> usize {
                4
            }
            fn evaluate_batch(&self, r: &WindowRequest, p: &[String]) -> Result<Vec<f64>, DetectionError> {
                self.0.lock().unwrap().push(r.anchor);
                Ok(vec![0.5; p.len()])
            }
        }
        let rec = Recorder(Mutex::new(Vec::new()));
        let cand = CandidateSet::default();
        let keys = KeyframeSet::default();
        let opts = GroundingOptions {
            kappa: 10,
            in_flight: 1,
            ..GroundingOptions::default()
        };
        ground_detections(&rec, 20, &[0, 1, 6, 9, 11], &cand, &keys, &props(&["a"]), &opts).unwrap();
        assert_eq!(*rec.0.lock().unwrap(), vec![6, 11]);
    }

    struct Flaky {
        fail_first: usize,
        calls: AtomicUsize,
    }

    impl DetectorBackend for Flaky {
        fn max_batch(&self) -> usize {
            8
        }
        fn evaluate_batch(&self, _: &WindowRequest, p: &[String]) -> Result<Vec<f64>, DetectionError> {
            if self.calls.fetch_add(1, Ordering::SeqCst) < self.fail_first {
                Err(DetectionError::Backend("unavailable".into()))
            } else {
                Ok(vec![0.75; p.len()])
            }
        }
    }

    #[test]
    fn retries_then_default() {
        let cand = CandidateSet::from_segments(vec![(0, 3)]);
        let keys = KeyframeSet::reconstruct(&cand, vec![0]);
        let opts = GroundingOptions {
            kappa: 4,
            in_flight: 1,
            ..GroundingOptions::default()
        };
        let recovering = Flaky {
            fail_first: 3,
            calls: AtomicUsize::new(0),
        };
        let (m, stats) =
            ground_detections(&recovering, 4, &[0], &cand, &keys, &props(&["a"]), &opts).unwrap();
        assert_eq!(m.get(0, 0), 0.75);
        assert_eq!(stats.passes, 4);
        assert!(stats.failed_windows.is_empty());

        let dead = Flaky {
            fail_first: usize::MAX,
            calls: AtomicUsize::new(0),
        };
        let (m, stats) =
            ground_detections(&dead, 4, &[0], &cand, &keys, &props(&["a"]), &opts).unwrap();
        assert_eq!(m.get(0, 0), 0.0);
        assert_eq!(m.window_provenance(0), Provenance::Failed);
        assert_eq!(stats.failed_windows, vec![0]);
        assert_eq!(stats.passes, 4);
        assert!(stats.diagnostics[0].contains("unavailable"));
    }

    #[test]
    fn errors() {
        let det = SyntheticDetector::new(vec![]);
        let c = CandidateSet::default();
        let k = KeyframeSet::default();
        let opts = GroundingOptions::default();
        assert!(matches!(
            ground_detections(&det, 10, &[], &c, &k, &PropositionSet::new(), &opts),
            Err(DetectionError::NoPropositions)
        ));
        assert!(matches!(
            ground_detections(&det, 10, &[10], &c, &k, &props(&["a"]), &opts),
            Err(DetectionError::FrameOutOfRange { .. })
        ));
    }

    #[test]
    fn call_counts() {
        let rows = vec![vec![0.5; 5]; 268];
        let m = DetectionMatrix::from_rows(16, 268 * 16, range_props(5).names(), &rows).unwrap();
        assert_eq!(measured_call_count(&m, 8, GroundingMode::Batched), (268, 268));
        assert_eq!(measured_call_count(&m, 2, GroundingMode::Batched), (268, 268 * 3));
        assert_eq!(measured_call_count(&m, 8, GroundingMode::Sequential), (268, 268 * 5));
        // 4.5 propositions on average: half the queries carry 4, half carry 5
        let four = DetectionMatrix::from_rows(16, 268 * 16, range_props(4).names(), &vec![vec![0.5; 4]; 268]).unwrap();
        let total = measured_call_count(&m, 1, GroundingMode::Sequential).1
            + measured_call_count(&four, 1, GroundingMode::Sequential).1;
        assert_eq!(total / 2, 1206);
    }

    #[test]
    fn json_roundtrip() {
        let det = SyntheticDetector::new(vec![("a".into(), 2..5)]).with_noise(0.05, 0.8, 0.1, 3);
        let cand = CandidateSet::from_segments(vec![(0, 9)]);
        let keys = KeyframeSet::reconstruct(&cand, vec![0, 5]);
        let opts = GroundingOptions {
            kappa: 3,
            ..GroundingOptions::default()
        };
        let (m, _) =
            ground_detections(&det, 10, &[0, 1, 5], &cand, &keys, &props(&["a", "b"]), &opts).unwrap();
        let v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        for key in ["kappa", "windows", "propositions", "Z", "provenance"] {
            assert!(v.get(key).is_some());
        }
        assert_eq!(DetectionMatrix::from_json(&m.to_json()).unwrap(), m);
        assert!(DetectionMatrix::from_json("{}").is_err());
    }

    mod props_tests {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn batching_and_schedule_do_not_change_values(
                t in 1usize..120, kappa in 1usize..10, nprops in 1usize..7,
                b in 1usize..9, in_flight in 1usize..6, seed in any::<u64>(),
                keep in proptest::collection::vec(any::<bool>(), 120),
            ) {
                let names: Vec<String> = (0..nprops).map(|i| format!("p{i}")).collect();
                let events: Vec<(String, Range<usize>)> = names.iter().enumerate()
                    .map(|(i, n)| (n.clone(), (i * 7) % t..((i * 7) % t + 5).min(t))).collect();
                let det = SyntheticDetector::new(events).with_noise(0.1, 0.7, 0.15, seed);
                let cand = CandidateSet::from_segments(vec![(0, t - 1)]);
                let kf: Vec<usize> = (0..t).filter(|&i| i == 0 || keep[i]).collect();
                let keys = KeyframeSet::reconstruct(&cand, kf.clone());
                let cfg = crate::sampling::SamplingConfig { delta: 0, ..Default::default() };
                let detect = crate::sampling::detection_set(&keys, &cfg, t);
                let p = PropositionSet::from_names(&names);
                let run = |det: &SyntheticDetector, mode, in_flight| {
                    let opts = GroundingOptions { kappa, mode, in_flight, retries: 0 };
                    ground_detections(det, t, &detect, &cand, &keys, &p, &opts).unwrap().0
                };
                let reference = run(&det.clone().with_max_batch(1), GroundingMode::Sequential, 1);
                let batched = run(&det.clone().with_max_batch(b), GroundingMode::Batched, in_flight);
                prop_assert_eq!(&reference, &batched);
                for w in 0..reference.windows {
                    if let Some(src) = reference.sources[w] {
                        prop_assert!(src < w);
                        prop_assert_eq!(reference.window_provenance(src), Provenance::Measured);
                        prop_assert_eq!(reference.row(src), reference.row(w));
                    }
                    prop_assert_eq!(reference.sources[w].is_some(), reference.window_provenance(w) == Provenance::Propagated);
                }
            }
        }
    }
}
