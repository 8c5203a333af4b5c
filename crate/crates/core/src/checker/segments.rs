//! Frames-of-interest extraction and the evidence hit probability.
//!
//! Starting from the first window whose smoothed score reaches `theta`, the
//! shortest boolean prefix satisfying the formula bounds the search. Evidence
//! is every maximal run of thresholded-true windows of a formula atom that
//! touches that interval. The primary segment spans all of it; the
//! multi-segment answer keeps the runs apart.

use serde::{Deserialize, Serialize};

use super::{atom_columns, CheckError, CheckerConfig, Progressor, SatisfactionProfile};
use crate::automaton::VideoAutomaton;
use crate::tlspec::Formula;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSet {
    /// Disjoint, ordered, inclusive window intervals.
    pub segments: Vec<(usize, usize)>,
    pub alpha_ext: usize,
    pub beta_ext: usize,
    #[serde(rename = "E")]
    pub evidence_windows: usize,
    #[serde(rename = "V_total")]
    pub total_windows: usize,
    /// No window reached `theta`; the whole video is returned.
    pub fallback: bool,
}

struct Located {
    /// Minimal satisfying interval, tightened to the first evidence window.
    core: (usize, usize),
    runs: Vec<(usize, usize)>,
}

fn boolean_symbols(a: &VideoAutomaton, cols: &[(String, usize)], theta_label: f64) -> Vec<u32> {
    a.labels
        .iter()
        .map(|row| {
            cols.iter()
                .enumerate()
                .filter(|(_, (_, c))| row[*c] >= theta_label)
                .fold(0u32, |s, (bit, _)| s | 1 << bit)
        })
        .collect()
}

/// Maximal runs of `true` in `flags`.
fn runs_of(flags: impl Iterator<Item = bool>) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut open: Option<usize> = None;
    let mut last = 0;
    for (t, on) in flags.enumerate() {
        match (on, open) {
            (true, None) => open = Some(t),
            (false, Some(s)) => {
                out.push((s, t - 1));
                open = None;
            }
            _ => {}
        }
        last = t;
    }
    if let Some(s) = open {
        out.push((s, last));
    }
    out
}

/// Thresholded-true runs of each atom of `f`, one list per atom.
pub fn evidence_runs(a: &VideoAutomaton, f: &Formula, cfg: &CheckerConfig) -> Result<Vec<Vec<(usize, usize)>>, CheckError> {
    let cols = atom_columns(a, f, cfg.atom_cap)?;
    Ok(cols
        .iter()
        .map(|(_, c)| runs_of(a.labels.iter().map(|row| row[*c] >= cfg.theta_label)))
        .collect())
}

fn locate(
    profile: &SatisfactionProfile,
    a: &VideoAutomaton,
    f: &Formula,
    cfg: &CheckerConfig,
) -> Result<Option<Located>, CheckError> {
    let n = a.state_count();
    let Some(start) = profile.smoothed.iter().position(|&s| s >= cfg.theta) else {
        return Ok(None);
    };
    let cols = atom_columns(a, f, cfg.atom_cap)?;
    let syms = boolean_symbols(a, &cols, cfg.theta_label);
    let mut prog = Progressor::new();
    let q0 = prog.compile(f, &|name| cols.iter().position(|(c, _)| c == name).unwrap_or(0) as u32);

    let mut end = n - 1;
    let mut q = q0;
    for (t, &sym) in syms.iter().enumerate().skip(start) {
        if prog.accepts_last(q, sym) {
            end = t;
            break;
        }
        q = prog.step(q, sym);
    }
    let first = (start..=end).find(|&t| syms[t] != 0).unwrap_or(start);

    let mut runs: Vec<(usize, usize)> = evidence_runs(a, f, cfg)?
        .into_iter()
        .flatten()
        .filter(|&(s, e)| s <= end && e >= first)
        .collect();
    runs.sort_unstable();
    Ok(Some(Located {
        core: (first, end),
        runs,
    }))
}

fn extend(seg: (usize, usize), cfg: &CheckerConfig, n: usize) -> (usize, usize) {
    (seg.0.saturating_sub(cfg.alpha_ext), (seg.1 + cfg.beta_ext).min(n - 1))
}

/// Merges sorted intervals that overlap or sit next to each other.
fn merge_touching(mut segs: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
    segs.sort_unstable();
    let mut out: Vec<(usize, usize)> = Vec::with_capacity(segs.len());
    for (s, e) in segs {
        match out.last_mut() {
            Some(last) if s <= last.1 + 1 => last.1 = last.1.max(e),
            _ => out.push((s, e)),
        }
    }
    out
}

fn covered(segs: &[(usize, usize)]) -> usize {
    segs.iter().map(|&(s, e)| e - s + 1).sum()
}

fn fallback(n: usize, cfg: &CheckerConfig) -> SegmentSet {
    SegmentSet {
        segments: vec![(0, n - 1)],
        alpha_ext: cfg.alpha_ext,
        beta_ext: cfg.beta_ext,
        evidence_windows: 0,
        total_windows: n,
        fallback: true,
    }
}

pub fn extract_primary_segment(
    profile: &SatisfactionProfile,
    a: &VideoAutomaton,
    f: &Formula,
    cfg: &CheckerConfig,
) -> Result<SegmentSet, CheckError> {
    let n = a.state_count();
    if n == 0 {
        return Err(CheckError::Empty);
    }
    let Some(loc) = locate(profile, a, f, cfg)? else {
        return Ok(fallback(n, cfg));
    };
    let lo = loc.runs.iter().map(|r| r.0).fold(loc.core.0, usize::min);
    let hi = loc.runs.iter().map(|r| r.1).fold(loc.core.1, usize::max);
    let seg = extend((lo, hi), cfg, n);
    Ok(SegmentSet {
        segments: vec![seg],
        alpha_ext: cfg.alpha_ext,
        beta_ext: cfg.beta_ext,
        evidence_windows: covered(&merge_touching(loc.runs)),
        total_windows: seg.1 - seg.0 + 1,
        fallback: false,
    })
}

pub fn extract_multi_segments(
    profile: &SatisfactionProfile,
    a: &VideoAutomaton,
    f: &Formula,
    cfg: &CheckerConfig,
) -> Result<SegmentSet, CheckError> {
    let n = a.state_count();
    if n == 0 {
        return Err(CheckError::Empty);
    }
    let Some(loc) = locate(profile, a, f, cfg)? else {
        return Ok(fallback(n, cfg));
    };
    if loc.runs.is_empty() {
        return extract_primary_segment(profile, a, f, cfg);
    }
    let evidence = covered(&merge_touching(loc.runs.clone()));
    let segments = merge_touching(loc.runs.into_iter().map(|r| extend(r, cfg, n)).collect());
    Ok(SegmentSet {
        total_windows: covered(&segments),
        segments,
        alpha_ext: cfg.alpha_ext,
        beta_ext: cfg.beta_ext,
        evidence_windows: evidence,
        fallback: false,
    })
}

fn hit_domain(e: usize, v: usize, n: usize) -> Result<(), CheckError> {
    if v == 0 || n == 0 || e > v {
        return Err(CheckError::HitDomain { e, v, n });
    }
    Ok(())
}

/// `(1 - E / V_total)^N`.
pub fn miss_probability(e: usize, v: usize, n: usize) -> Result<f64, CheckError> {
    hit_domain(e, v, n)?;
    let n = i32::try_from(n).unwrap_or(i32::MAX);
    Ok((1.0 - e as f64 / v as f64).powi(n))
}

/// `1 - (1 - E / V_total)^N`.
pub fn hit_probability(e: usize, v: usize, n: usize) -> Result<f64, CheckError> {
    Ok(1.0 - miss_probability(e, v, n)?)
}
