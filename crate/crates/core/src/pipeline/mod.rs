//! End-to-end question answering over a video trace.
//!
//! Stages: spec resolution, frame encoding, two-stage sampling, batched
//! grounding, automaton construction, checking, segment extraction and the
//! final answer on a frame budget. Costs accumulate on a virtual clock driven
//! by [`LatencyParams`].

mod answer;
pub mod bench;

use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use answer::{budget_frames, Answer, Answerer, SyntheticAnswerer, Translator};

use crate::automaton::{build_automaton, AutomatonError, VideoAutomaton};
use crate::checker::{
    check, extract_multi_segments, extract_primary_segment, CheckError, CheckerConfig, CheckerReport,
    SatisfactionProfile, SegmentSet,
};
use crate::detection::{
    ground_detections, window_count, DetectionError, DetectionMatrix, DetectorBackend, GroundingMode,
    GroundingOptions, GroundingStats, Provenance, SyntheticDetector, DEFAULT_RETRIES,
};
use crate::embedding::{
    encode_trace, phrase_for, EmbeddingError, EmbeddingProvider, ScenarioSpec, TraceProvider,
};
use crate::latency::{estimate, seconds, LatencyEstimate, LatencyParams, Mode, Stage, VirtualClock};
use crate::remote::{Client, RemoteAnswerer, RemoteConfig, RemoteDetector, RemoteEmbedding, RemoteTranslator};
use crate::sampling::{run_sampling, CandidateSet, KeyframeSet, SamplingConfig, SamplingError, SamplingReport};
use crate::tlspec::{free_propositions, parse_spec, print_spec, Formula, PropositionSet, SpecError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("spec: {0}")]
    Spec(#[from] SpecError),
    #[error("translate: {0}")]
    Translate(String),
    #[error("config: {0}")]
    Config(String),
    #[error("encode: {0}")]
    Embedding(#[from] EmbeddingError),
    #[error("sample: {0}")]
    Sampling(#[from] SamplingError),
    #[error("ground: {0}")]
    Detection(#[from] DetectionError),
    #[error("automaton: {0}")]
    Automaton(#[from] AutomatonError),
    #[error("check: {0}")]
    Check(#[from] CheckError),
    #[error("answer: {0}")]
    Answer(String),
}

impl PipelineError {
    /// Failures caused by an external service rather than by the input.
    pub fn is_backend_failure(&self) -> bool {
        matches!(
            self,
            PipelineError::Translate(_)
                | PipelineError::Answer(_)
                | PipelineError::Embedding(EmbeddingError::Remote(_))
                | PipelineError::Sampling(SamplingError::Embedding(EmbeddingError::Remote(_)))
                | PipelineError::Detection(DetectionError::Backend(_))
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    #[default]
    Synthetic,
    File,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    #[default]
    Synthetic,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TranslatorKind {
    #[default]
    None,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswererKind {
    #[default]
    Synthetic,
    Remote,
}

/// Video served by remote backends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteVideo {
    pub id: String,
    pub frames: usize,
    pub fps: f32,
    pub dim: usize,
}

impl Default for RemoteVideo {
    fn default() -> Self {
        Self {
            id: "video".into(),
            frames: 0,
            fps: 1.0,
            dim: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub embedding: EmbeddingKind,
    pub detector: DetectorKind,
    pub translator: TranslatorKind,
    pub answerer: AnswererKind,
    pub remote: RemoteConfig,
    pub video: RemoteVideo,
}

/// Synthetic detector response: `clamp(base + gain * overlap + N(0, sigma))`.
/// The default gain saturates once a quarter of the window shows the event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticDetectorConfig {
    pub base: f64,
    pub gain: f64,
    pub sigma: f64,
}

impl Default for SyntheticDetectorConfig {
    fn default() -> Self {
        Self {
            base: 0.0,
            gain: 4.0,
            sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub sampling: SamplingConfig,
    pub checker: CheckerConfig,
    pub latency: LatencyParams,
    /// Largest proposition batch per detector pass.
    pub batch: usize,
    pub retries: usize,
    pub in_flight: usize,
    /// Frames handed to the answerer.
    pub budget: usize,
    pub seed: u64,
    pub multi_segment: bool,
    /// Cap on uniformly sampled windows when Stage 1 keeps nothing.
    pub max_fallback_windows: usize,
    pub detector: SyntheticDetectorConfig,
    pub backends: BackendConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Adaptive,
            sampling: SamplingConfig::default(),
            checker: CheckerConfig::default(),
            latency: LatencyParams::default(),
            batch: 8,
            retries: DEFAULT_RETRIES,
            in_flight: 4,
            budget: 32,
            seed: 0,
            multi_segment: true,
            max_fallback_windows: 64,
            detector: SyntheticDetectorConfig::default(),
            backends: BackendConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.sampling.validate()?;
        if self.batch == 0 || self.budget == 0 {
            return Err(PipelineError::Config("batch and budget must be >= 1".into()));
        }
        if !(self.checker.b > 0.0) {
            return Err(PipelineError::Config("checker.b must be > 0".into()));
        }
        Ok(())
    }

    pub fn grounding_options(&self) -> GroundingOptions {
        GroundingOptions {
            kappa: self.sampling.kappa,
            mode: if self.mode == Mode::Sequential {
                GroundingMode::Sequential
            } else {
                GroundingMode::Batched
            },
            retries: self.retries,
            in_flight: self.in_flight,
        }
    }

    pub fn synthetic_detector(&self, scenario: &ScenarioSpec) -> SyntheticDetector {
        let d = self.detector;
        SyntheticDetector::from_scenario(scenario)
            .with_noise(d.base, d.gain, d.sigma, self.seed)
            .with_max_batch(self.batch)
    }
}

fn remote_client(cfg: &PipelineConfig) -> Result<Client, PipelineError> {
    Client::new(cfg.backends.remote.clone()).map_err(|e| PipelineError::Config(e.to_string()))
}

/// The configured detector; the synthetic one needs `scenario`.
pub fn build_detector(
    cfg: &PipelineConfig,
    scenario: Option<&ScenarioSpec>,
) -> Result<Box<dyn DetectorBackend>, PipelineError> {
    Ok(match cfg.backends.detector {
        DetectorKind::Synthetic => {
            let s = scenario.ok_or_else(|| PipelineError::Config("the synthetic detector needs a scenario".into()))?;
            Box::new(cfg.synthetic_detector(s))
        }
        DetectorKind::Remote => Box::new(RemoteDetector::new(
            remote_client(cfg)?,
            cfg.backends.video.id.clone(),
            cfg.batch,
        )),
    })
}

pub fn build_translator(cfg: &PipelineConfig) -> Result<Option<Box<dyn Translator>>, PipelineError> {
    Ok(match cfg.backends.translator {
        TranslatorKind::None => None,
        TranslatorKind::Remote => Some(Box::new(RemoteTranslator::new(remote_client(cfg)?))),
    })
}

pub struct Backends {
    pub embedding: Box<dyn EmbeddingProvider>,
    pub detector: Box<dyn DetectorBackend>,
    pub translator: Option<Box<dyn Translator>>,
    pub answerer: Box<dyn Answerer>,
}

impl Backends {
    /// All-synthetic backends driven by one scenario.
    pub fn synthetic(cfg: &PipelineConfig, scenario: &ScenarioSpec) -> Result<Self, PipelineError> {
        Ok(Self {
            embedding: Box::new(TraceProvider::synthetic(scenario, cfg.seed)?),
            detector: Box::new(cfg.synthetic_detector(scenario)),
            translator: None,
            answerer: Box::new(SyntheticAnswerer::from_scenario(scenario)),
        })
    }

    /// Builds the configured backends. Synthetic parts need `scenario`; the
    /// file embedding needs `trace`.
    pub fn from_config(
        cfg: &PipelineConfig,
        scenario: Option<&ScenarioSpec>,
        trace: Option<&Path>,
    ) -> Result<Self, PipelineError> {
        let b = &cfg.backends;
        let need_scenario = |what: &str| {
            scenario.ok_or_else(|| PipelineError::Config(format!("the synthetic {what} needs a scenario")))
        };
        let client = || remote_client(cfg);
        let embedding: Box<dyn EmbeddingProvider> = match b.embedding {
            EmbeddingKind::Synthetic => Box::new(TraceProvider::synthetic(need_scenario("embedding")?, cfg.seed)?),
            EmbeddingKind::File => {
                let path = trace.ok_or_else(|| PipelineError::Config("the file embedding needs a trace path".into()))?;
                Box::new(TraceProvider::from_file(path)?)
            }
            EmbeddingKind::Remote => Box::new(RemoteEmbedding::new(
                client()?,
                b.video.id.clone(),
                b.video.frames,
                b.video.fps,
                b.video.dim,
            )),
        };
        let detector = build_detector(cfg, scenario)?;
        let translator = build_translator(cfg)?;
        let answerer: Box<dyn Answerer> = match b.answerer {
            AnswererKind::Synthetic => Box::new(SyntheticAnswerer::from_scenario(need_scenario("answerer")?)),
            AnswererKind::Remote => Box::new(RemoteAnswerer::new(client()?, b.video.id.clone())),
        };
        Ok(Self {
            embedding,
            detector,
            translator,
            answerer,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "text", rename_all = "lowercase")]
pub enum Query {
    /// Temporal-logic spec text.
    Spec(String),
    /// Natural-language question for the translator.
    Natural(String),
}

impl Query {
    pub fn text(&self) -> &str {
        match self {
            Query::Spec(s) | Query::Natural(s) => s,
        }
    }
}

/// Parses the spec, translating first when the query is natural language.
pub fn resolve_spec(query: &Query, translator: Option<&dyn Translator>) -> Result<(Formula, PropositionSet), PipelineError> {
    let text = match query {
        Query::Spec(s) => s.clone(),
        Query::Natural(q) => {
            let tr = translator.ok_or_else(|| PipelineError::Config("natural-language queries need a translator".into()))?;
            tr.translate(q).map_err(PipelineError::Translate)?
        }
    };
    Ok(parse_spec(&text)?)
}

/// Detect set of `min(N_win, cap)` evenly spaced windows, one centre frame each.
pub fn uniform_fallback(frame_count: usize, kappa: usize, cap: usize) -> Vec<usize> {
    let n = window_count(frame_count, kappa);
    let m = n.min(cap.max(1));
    (0..m)
        .map(|i| {
            let w = i * n / m;
            let end = ((w + 1) * kappa).min(frame_count);
            (w * kappa + end - 1) / 2
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundingSummary {
    pub windows: usize,
    pub measured: usize,
    pub propagated: usize,
    pub default: usize,
    pub failed: usize,
    /// Detector passes issued, retries included.
    pub passes: usize,
    /// Frames in the detect set.
    pub frames_grounded: usize,
}

impl GroundingSummary {
    fn new(matrix: &DetectionMatrix, stats: &GroundingStats, frames_grounded: usize) -> Self {
        let mut s = Self {
            windows: matrix.windows,
            passes: stats.passes,
            frames_grounded,
            ..Self::default()
        };
        for w in 0..matrix.windows {
            match matrix.window_provenance(w) {
                Provenance::Measured => s.measured += 1,
                Provenance::Propagated => s.propagated += 1,
                Provenance::Default => s.default += 1,
                Provenance::Failed => s.failed += 1,
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub query: String,
    pub spec: Option<String>,
    pub mode: Mode,
    pub answer: Answer,
    pub frames_sent: Vec<usize>,
    /// Segments handed to the answerer (window indices).
    pub segments: SegmentSet,
    /// Single-span alternative.
    pub primary: SegmentSet,
    pub profile: Option<SatisfactionProfile>,
    pub checker: Option<CheckerReport>,
    pub sampling: Option<SamplingReport>,
    pub grounding: GroundingSummary,
    /// Virtual-clock latency of this run.
    pub latency: LatencyEstimate,
    /// Analytical estimate for the same workload (the upper bound in adaptive mode).
    pub model: LatencyEstimate,
    /// Retrieved frames as a share of the video.
    pub foi_percent: f64,
    pub degraded: bool,
    pub diagnostics: Vec<String>,
}

impl RunResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run result serializes")
    }
}

fn frame_ranges(a: &VideoAutomaton, segs: &[(usize, usize)]) -> Vec<Range<usize>> {
    segs.iter()
        .map(|&(s, e)| a.window_span(s).start..a.window_span(e).end)
        .collect()
}

fn whole_video(n_win: usize, cfg: &CheckerConfig) -> SegmentSet {
    SegmentSet {
        segments: vec![(0, n_win.saturating_sub(1))],
        alpha_ext: cfg.alpha_ext,
        beta_ext: cfg.beta_ext,
        evidence_windows: 0,
        total_windows: n_win,
        fallback: false,
    }
}

pub fn run_pipeline(cfg: &PipelineConfig, query: &Query, backends: &Backends) -> Result<RunResult, PipelineError> {
    cfg.validate()?;
    let lat = &cfg.latency;
    let t_frames = backends.embedding.frame_count();
    if t_frames == 0 {
        return Err(PipelineError::Config("video has no frames".into()));
    }
    let kappa = cfg.sampling.kappa;
    let n_win = window_count(t_frames, kappa);
    let mut clock = VirtualClock::new();
    let mut diagnostics = Vec::new();
    let mut degraded = false;
    let mut params = LatencyParams {
        kappa,
        frames: t_frames,
        batch: backends.detector.max_batch().max(1),
        ..*lat
    };

    if cfg.mode == Mode::Vanilla {
        let frames_sent = budget_frames(&[0..t_frames], cfg.budget);
        let answer = backends
            .answerer
            .answer(query.text(), &frames_sent)
            .map_err(PipelineError::Answer)?;
        clock.charge(Stage::Vqa, seconds(lat.l_vqa));
        let whole = whole_video(n_win, &cfg.checker);
        return Ok(RunResult {
            query: query.text().to_string(),
            spec: None,
            mode: Mode::Vanilla,
            answer,
            frames_sent,
            segments: whole.clone(),
            primary: whole,
            profile: None,
            checker: None,
            sampling: None,
            grounding: GroundingSummary {
                windows: n_win,
                ..GroundingSummary::default()
            },
            latency: clock.estimate(Mode::Vanilla),
            model: estimate(Mode::Vanilla, &params),
            foi_percent: 100.0,
            degraded: false,
            diagnostics,
        });
    }

    let (formula, _) = resolve_spec(query, backends.translator.as_deref())?;
    clock.charge(Stage::Lq2tl, seconds(lat.l_lq2tl));
    let props = free_propositions(&formula);
    params.p_count = props.len() as f64;

    let (cand, keys, detect, sampling) = match cfg.mode {
        Mode::Adaptive => {
            let trace = encode_trace(backends.embedding.as_ref())?;
            clock.charge_n(Stage::ClipScan, seconds(lat.l_clip), t_frames);
            let phrases: Vec<String> = props.names().iter().map(|n| phrase_for(n)).collect();
            let text = backends.embedding.encode_text(&phrases)?;
            let outcome = run_sampling(&trace, &text, &cfg.sampling)?;
            let report = SamplingReport::new(&outcome, &cfg.sampling, t_frames);
            if outcome.candidates.is_empty() {
                degraded = true;
                diagnostics.push(format!(
                    "no frame passed the semantic filter; grounding {} uniformly spaced windows",
                    n_win.min(cfg.max_fallback_windows.max(1))
                ));
                let detect = uniform_fallback(t_frames, kappa, cfg.max_fallback_windows);
                (CandidateSet::default(), KeyframeSet::default(), detect, Some(report))
            } else {
                (outcome.candidates, outcome.keyframes, outcome.detect, Some(report))
            }
        }
        _ => {
            let all: Vec<usize> = (0..t_frames).collect();
            let cand = CandidateSet::from_segments(vec![(0, t_frames - 1)]);
            let keys = KeyframeSet::reconstruct(&cand, all.clone());
            (cand, keys, all, None)
        }
    };

    let (matrix, stats) = ground_detections(
        backends.detector.as_ref(),
        t_frames,
        &detect,
        &cand,
        &keys,
        &props,
        &cfg.grounding_options(),
    )?;
    let per_pass = if cfg.mode == Mode::Sequential { lat.l_prop } else { lat.l_vlm };
    clock.charge_n(Stage::Grounding, seconds(per_pass), stats.passes);
    if !stats.failed_windows.is_empty() {
        degraded = true;
        diagnostics.extend(stats.diagnostics.iter().cloned());
    }
    let grounding = GroundingSummary::new(&matrix, &stats, detect.len());

    let automaton = build_automaton(&matrix)?;
    let profile = check(&automaton, &formula, &cfg.checker)?;
    clock.charge(Stage::Mc, seconds(lat.l_mc));
    let primary = extract_primary_segment(&profile, &automaton, &formula, &cfg.checker)?;
    let multi = extract_multi_segments(&profile, &automaton, &formula, &cfg.checker)?;
    let segments = if cfg.multi_segment { multi } else { primary.clone() };
    if segments.fallback {
        degraded = true;
        diagnostics.push(format!(
            "no window reached theta = {}; answering over the whole video",
            cfg.checker.theta
        ));
    }

    let ranges = frame_ranges(&automaton, &segments.segments);
    let covered: usize = ranges.iter().map(|r| r.len()).sum();
    let frames_sent = budget_frames(&ranges, cfg.budget);
    let answer = backends
        .answerer
        .answer(query.text(), &frames_sent)
        .map_err(PipelineError::Answer)?;
    clock.charge(Stage::Vqa, seconds(lat.l_vqa));

    let params = params.with_window_retention(grounding.measured + grounding.failed, n_win);
    let checker = CheckerReport::new(&profile, &segments, &automaton, cfg.budget);
    Ok(RunResult {
        query: query.text().to_string(),
        spec: Some(print_spec(&formula)),
        mode: cfg.mode,
        answer,
        frames_sent,
        segments,
        primary,
        profile: Some(profile),
        checker: Some(checker),
        sampling,
        grounding,
        latency: clock.estimate(cfg.mode),
        model: estimate(cfg.mode, &params),
        foi_percent: 100.0 * covered as f64 / t_frames as f64,
        degraded,
        diagnostics,
    })
}
