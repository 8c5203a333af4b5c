//! Analytical latency model and the virtual clock used by simulated runs.
//!
//! End-to-end latency is `L_lq2tl + L_clip_scan + L_grounding + L_mc + L_vqa`.
//! The sequential baseline grounds every window once per proposition; batching
//! folds up to `B` propositions into one pass; adaptive sampling additionally
//! scans all frames with the embedding model and grounds only retained windows.

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Baseline total, batched total, window count and proposition calls of the
/// reference ablation.
pub const REFERENCE_BASELINE_TOTAL: f64 = 553.68;
pub const REFERENCE_BATCHED_TOTAL: f64 = 171.05;
pub const REFERENCE_WINDOWS: usize = 268;
pub const REFERENCE_CALLS: usize = 1206;

const CEIL_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum LatencyError {
    #[error("invalid latency parameter: {0}")]
    Invalid(String),
    #[error("{0} is zero")]
    Zero(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Uniform frames straight to the answerer.
    Vanilla,
    /// Every window, one pass per proposition.
    Sequential,
    /// Every window, propositions batched.
    Batched,
    /// Two-stage sampling plus batched grounding.
    #[default]
    Adaptive,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Vanilla, Mode::Sequential, Mode::Batched, Mode::Adaptive];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Vanilla => "vanilla",
            Mode::Sequential => "sequential",
            Mode::Batched => "batched",
            Mode::Adaptive => "adaptive",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode {s:?} (expected vanilla, sequential, batched or adaptive)"))
    }
}

/// Times in seconds; `l_clip` per frame, `l_prop` per window-proposition call,
/// `l_vlm` per batched window pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyParams {
    pub l_lq2tl: f64,
    pub l_mc: f64,
    pub l_vqa: f64,
    pub l_prop: f64,
    pub l_clip: f64,
    pub l_vlm: f64,
    pub kappa: usize,
    /// Proposition count; fractional values model workload averages.
    pub p_count: f64,
    pub batch: usize,
    pub frames: usize,
    pub alpha: f64,
    pub rho: f64,
}

impl Default for LatencyParams {
    fn default() -> Self {
        let l_lq2tl = 5.0;
        let l_mc = 2.9;
        let l_vqa = 4.15;
        let l_fixed = l_lq2tl + l_mc + l_vqa;
        let l_prop = calibrate_prop(REFERENCE_BASELINE_TOTAL, l_fixed, REFERENCE_CALLS);
        let l_vlm = calibrate_prop(REFERENCE_BATCHED_TOTAL, l_fixed, REFERENCE_WINDOWS);
        Self {
            l_lq2tl,
            l_mc,
            l_vqa,
            l_prop,
            l_clip: 0.002,
            l_vlm,
            kappa: 16,
            p_count: 4.5,
            batch: 8,
            frames: REFERENCE_WINDOWS * 16,
            alpha: 1.0,
            rho: 1.0,
        }
    }
}

/// Per-call cost making a total of `baseline_total` over `calls` calls.
pub fn calibrate_prop(baseline_total: f64, l_fixed: f64, calls: usize) -> f64 {
    (baseline_total - l_fixed) / calls as f64
}

fn ceil_tol(x: f64) -> f64 {
    (x - CEIL_EPS).ceil().max(0.0)
}

impl LatencyParams {
    pub fn l_fixed(&self) -> f64 {
        self.l_lq2tl + self.l_mc + self.l_vqa
    }

    pub fn windows(&self) -> usize {
        self.frames.div_ceil(self.kappa.max(1))
    }

    /// Backend passes per window: `ceil(|P| / B)`.
    pub fn passes_per_window(&self) -> f64 {
        ceil_tol(self.p_count / self.batch.max(1) as f64)
    }

    /// Sets `alpha * rho` to the share of windows that were measured.
    pub fn with_window_retention(mut self, measured: usize, windows: usize) -> Self {
        self.alpha = if windows == 0 { 0.0 } else { measured as f64 / windows as f64 };
        self.rho = 1.0;
        self
    }

    pub fn validate(&self) -> Result<(), LatencyError> {
        let times = [
            ("l_lq2tl", self.l_lq2tl),
            ("l_mc", self.l_mc),
            ("l_vqa", self.l_vqa),
            ("l_prop", self.l_prop),
            ("l_clip", self.l_clip),
            ("l_vlm", self.l_vlm),
        ];
        if let Some((name, v)) = times.iter().find(|(_, v)| !(*v >= 0.0) || !v.is_finite()) {
            return Err(LatencyError::Invalid(format!("{name} = {v} must be a finite value >= 0")));
        }
        if self.kappa == 0 || self.batch == 0 || self.frames == 0 {
            return Err(LatencyError::Invalid("kappa, batch and frames must be >= 1".into()));
        }
        if !(self.p_count >= 1.0) || !self.p_count.is_finite() {
            return Err(LatencyError::Invalid("proposition count must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.rho) {
            return Err(LatencyError::Invalid("alpha and rho must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyEstimate {
    pub mode: Mode,
    pub lq2tl: f64,
    pub clip_scan: f64,
    pub grounding: f64,
    pub mc: f64,
    pub vqa: f64,
    pub total: f64,
}

impl LatencyEstimate {
    fn assemble(mode: Mode, p: &LatencyParams, clip_scan: f64, grounding: f64) -> Self {
        let (lq2tl, mc, vqa) = match mode {
            Mode::Vanilla => (0.0, 0.0, p.l_vqa),
            _ => (p.l_lq2tl, p.l_mc, p.l_vqa),
        };
        Self {
            mode,
            lq2tl,
            clip_scan,
            grounding,
            mc,
            vqa,
            total: lq2tl + clip_scan + grounding + mc + vqa,
        }
    }

    pub fn stage_sum(&self) -> f64 {
        self.lq2tl + self.clip_scan + self.grounding + self.mc + self.vqa
    }
}

/// `ceil(T / kappa) * |P| * L_prop` grounding plus the fixed stages.
pub fn sequential_latency(p: &LatencyParams) -> LatencyEstimate {
    let grounding = p.windows() as f64 * p.p_count * p.l_prop;
    LatencyEstimate::assemble(Mode::Sequential, p, 0.0, grounding)
}

/// Every window grounded in `ceil(|P| / B)` passes.
pub fn batched_latency(p: &LatencyParams) -> LatencyEstimate {
    let grounding = p.windows() as f64 * p.passes_per_window() * p.l_vlm;
    LatencyEstimate::assemble(Mode::Batched, p, 0.0, grounding)
}

/// `L_fixed + T L_clip + ceil(alpha rho T / kappa) ceil(|P| / B) L_vlm`.
pub fn adaptive_bound(p: &LatencyParams) -> LatencyEstimate {
    let clip = p.frames as f64 * p.l_clip;
    let windows = ceil_tol(p.alpha * p.rho * p.frames as f64 / p.kappa as f64);
    let grounding = windows * p.passes_per_window() * p.l_vlm;
    LatencyEstimate::assemble(Mode::Adaptive, p, clip, grounding)
}

/// Same as [`adaptive_bound`] with the window ceiling replaced by
/// `alpha rho ceil(T / kappa)`.
pub fn adaptive_bound_linear(p: &LatencyParams) -> LatencyEstimate {
    let clip = p.frames as f64 * p.l_clip;
    let grounding = p.alpha * p.rho * p.windows() as f64 * p.passes_per_window() * p.l_vlm;
    LatencyEstimate::assemble(Mode::Adaptive, p, clip, grounding)
}

/// The answerer alone on a fixed uniform frame budget.
pub fn vanilla_latency(p: &LatencyParams) -> LatencyEstimate {
    LatencyEstimate::assemble(Mode::Vanilla, p, 0.0, 0.0)
}

pub fn estimate(mode: Mode, p: &LatencyParams) -> LatencyEstimate {
    match mode {
        Mode::Vanilla => vanilla_latency(p),
        Mode::Sequential => sequential_latency(p),
        Mode::Batched => batched_latency(p),
        Mode::Adaptive => adaptive_bound(p),
    }
}

/// Length in frames beyond which sequential grounding outweighs the fixed stages:
/// `kappa L_fixed / (|P| L_prop)`.
pub fn critical_length(p: &LatencyParams) -> Result<f64, LatencyError> {
    let per_frame = p.p_count * p.l_prop;
    if per_frame <= 0.0 {
        return Err(LatencyError::Zero("|P| * L_prop"));
    }
    Ok(p.kappa as f64 * p.l_fixed() / per_frame)
}

/// Largest `alpha rho` keeping the linear bound within `l_max`, and whether
/// the params meet it. A negative limit means no retention level is feasible.
pub fn efficiency_condition(p: &LatencyParams, l_max: f64) -> Result<(bool, f64), LatencyError> {
    let per_pass = p.windows() as f64 * p.passes_per_window() * p.l_vlm;
    if per_pass <= 0.0 {
        return Err(LatencyError::Zero("N_win * L_vlm"));
    }
    let max_ar = (l_max - p.l_fixed() - p.frames as f64 * p.l_clip) / per_pass;
    Ok((max_ar >= 0.0 && p.alpha * p.rho <= max_ar, max_ar))
}

/// `|P| / (alpha rho) * 1 / (1 + T L_clip / (N_win L_vlm))`.
pub fn speedup(p: &LatencyParams) -> Result<f64, LatencyError> {
    let ar = p.alpha * p.rho;
    if ar <= 0.0 {
        return Err(LatencyError::Zero("alpha * rho"));
    }
    let denom = p.windows() as f64 * p.l_vlm;
    if denom <= 0.0 {
        return Err(LatencyError::Zero("N_win * L_vlm"));
    }
    Ok(p.p_count / ar / (1.0 + p.frames as f64 * p.l_clip / denom))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Lq2tl,
    ClipScan,
    Grounding,
    Mc,
    Vqa,
}

/// Integer-nanosecond cost accumulator, so that per-pass charges add exactly.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VirtualClock {
    pub lq2tl: Duration,
    pub clip_scan: Duration,
    pub grounding: Duration,
    pub mc: Duration,
    pub vqa: Duration,
}

pub fn seconds(s: f64) -> Duration {
    Duration::from_secs_f64(s.max(0.0))
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    fn slot(&mut self, stage: Stage) -> &mut Duration {
        match stage {
            Stage::Lq2tl => &mut self.lq2tl,
            Stage::ClipScan => &mut self.clip_scan,
            Stage::Grounding => &mut self.grounding,
            Stage::Mc => &mut self.mc,
            Stage::Vqa => &mut self.vqa,
        }
    }

    pub fn charge(&mut self, stage: Stage, d: Duration) {
        *self.slot(stage) += d;
    }

    /// Charges `count` repetitions of `unit`.
    pub fn charge_n(&mut self, stage: Stage, unit: Duration, count: usize) {
        let count = u32::try_from(count).expect("charge count fits u32");
        *self.slot(stage) += unit * count;
    }

    pub fn total(&self) -> Duration {
        self.lq2tl + self.clip_scan + self.grounding + self.mc + self.vqa
    }

    pub fn estimate(&self, mode: Mode) -> LatencyEstimate {
        LatencyEstimate {
            mode,
            lq2tl: self.lq2tl.as_secs_f64(),
            clip_scan: self.clip_scan.as_secs_f64(),
            grounding: self.grounding.as_secs_f64(),
            mc: self.mc.as_secs_f64(),
            vqa: self.vqa.as_secs_f64(),
            total: self.total().as_secs_f64(),
        }
    }
}
