//! Probabilistic model checking over the video automaton.
//!
//! Each state draws an independent boolean assignment with `Pr[p_i] = lambda_t[i]`.
//! `P_t` is the probability that the suffix starting at window `t` satisfies the
//! formula under finite-trace semantics (Next is false at the last state,
//! Eventually and Until need a witness before the end). It is computed exactly
//! by a backward pass over (window, progression state) pairs.

mod progression;
mod segments;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::automaton::VideoAutomaton;
use crate::tlspec::{free_propositions, Formula};

pub use progression::Progressor;
pub use segments::{
    evidence_runs, extract_multi_segments, extract_primary_segment, hit_probability,
    miss_probability, SegmentSet,
};

pub const DEFAULT_ATOM_CAP: usize = 16;
pub const DEFAULT_STATE_CAP: usize = 1 << 20;

#[derive(Debug, Error, PartialEq)]
pub enum CheckError {
    #[error("atom `{0}` is not a proposition of the automaton")]
    UnknownAtom(String),
    #[error("formula has {atoms} atoms, above the exact-enumeration cap of {cap}")]
    TooManyAtoms { atoms: usize, cap: usize },
    #[error("progression produced more than {0} residual formulas")]
    StateExplosion(usize),
    #[error("automaton has no states")]
    Empty,
    #[error("smoothing sharpness must be > 0, got {0}")]
    Sharpness(f64),
    #[error("hit probability needs 0 <= E <= V_total, V_total >= 1 and N >= 1 (got E={e}, V_total={v}, N={n})")]
    HitDomain { e: usize, v: usize, n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckerConfig {
    /// Sigmoid sharpness.
    pub b: f64,
    /// Segment decision threshold on smoothed scores.
    pub theta: f64,
    /// Threshold turning confidences into boolean labels for path extraction.
    pub theta_label: f64,
    pub alpha_ext: usize,
    pub beta_ext: usize,
    pub atom_cap: usize,
    pub state_cap: usize,
}

impl Default for CheckerConfig {
    fn default() -> Self {
        Self {
            b: 10.0,
            theta: 0.5,
            theta_label: 0.5,
            alpha_ext: 2,
            beta_ext: 2,
            atom_cap: DEFAULT_ATOM_CAP,
            state_cap: DEFAULT_STATE_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SatisfactionProfile {
    #[serde(rename = "P")]
    pub p: Vec<f64>,
    pub smoothed: Vec<f64>,
    #[serde(rename = "P_sat")]
    pub p_sat: f64,
    pub b: f64,
    pub theta: f64,
}

/// `F_b(x) = 1 / (1 + exp(-b (x - 0.5)))`.
pub fn sigmoid(x: f64, b: f64) -> f64 {
    1.0 / (1.0 + (-b * (x - 0.5)).exp())
}

pub fn smooth(p: &[f64], b: f64) -> Result<Vec<f64>, CheckError> {
    if !(b > 0.0) || !b.is_finite() {
        return Err(CheckError::Sharpness(b));
    }
    Ok(p.iter().map(|&x| sigmoid(x, b)).collect())
}

/// Atom columns of `f` in the automaton, in bit order.
fn atom_columns(a: &VideoAutomaton, f: &Formula, cap: usize) -> Result<Vec<(String, usize)>, CheckError> {
    let atoms = free_propositions(f).names();
    if atoms.len() > cap {
        return Err(CheckError::TooManyAtoms {
            atoms: atoms.len(),
            cap,
        });
    }
    atoms
        .into_iter()
        .map(|n| match a.proposition_index(&n) {
            Some(i) => Ok((n, i)),
            None => Err(CheckError::UnknownAtom(n)),
        })
        .collect()
}

/// Nonzero-probability symbols of one window.
fn symbol_distribution(row: &[f64], cols: &[(String, usize)]) -> Vec<(u32, f64)> {
    let mut dist = vec![(0u32, 1.0f64)];
    for (bit, &(_, col)) in cols.iter().enumerate() {
        let p = row[col];
        let mut next = Vec::with_capacity(dist.len() * 2);
        for &(sym, w) in &dist {
            if p < 1.0 {
                next.push((sym, w * (1.0 - p)));
            }
            if p > 0.0 {
                next.push((sym | 1 << bit, w * p));
            }
        }
        dist = next;
    }
    dist
}

pub fn check(a: &VideoAutomaton, f: &Formula, cfg: &CheckerConfig) -> Result<SatisfactionProfile, CheckError> {
    let n = a.state_count();
    if n == 0 {
        return Err(CheckError::Empty);
    }
    let cols = atom_columns(a, f, cfg.atom_cap)?;
    let mut prog = Progressor::new();
    let q0 = prog.compile(f, &|name| {
        cols.iter().position(|(c, _)| c == name).unwrap_or(0) as u32
    });
    let dists: Vec<Vec<(u32, f64)>> = a.labels.iter().map(|r| symbol_distribution(r, &cols)).collect();

    // forward: residuals reachable at window t from a start at any s <= t
    let mut reach: Vec<Vec<u32>> = Vec::with_capacity(n);
    reach.push(vec![q0]);
    for t in 0..n - 1 {
        let mut next = vec![q0];
        for &q in &reach[t] {
            for &(sym, _) in &dists[t] {
                next.push(prog.step(q, sym));
            }
        }
        next.sort_unstable();
        next.dedup();
        if prog.node_count() > cfg.state_cap {
            return Err(CheckError::StateExplosion(cfg.state_cap));
        }
        reach.push(next);
    }

    // backward: V_t(q) for q reachable at t
    let mut p = vec![0.0; n];
    let mut later: HashMap<u32, f64> = HashMap::new();
    for t in (0..n).rev() {
        let mut here = HashMap::with_capacity(reach[t].len());
        for &q in &reach[t] {
            let v: f64 = dists[t]
                .iter()
                .map(|&(sym, w)| {
                    let ok = if t + 1 == n {
                        if prog.accepts_last(q, sym) { 1.0 } else { 0.0 }
                    } else {
                        later[&prog.step(q, sym)]
                    };
                    w * ok
                })
                .sum();
            here.insert(q, v.clamp(0.0, 1.0));
        }
        p[t] = here[&q0];
        later = here;
    }
    let smoothed = smooth(&p, cfg.b)?;
    Ok(SatisfactionProfile {
        p_sat: p[0],
        p,
        smoothed,
        b: cfg.b,
        theta: cfg.theta,
    })
}

/// Classical finite-trace satisfaction of every suffix of a boolean trace.
/// `labels[t][i]` is the truth of `names[i]` at position `t`.
pub fn evaluate_finite(f: &Formula, names: &[String], labels: &[Vec<bool>]) -> Result<Vec<bool>, CheckError> {
    let n = labels.len();
    Ok(match f {
        Formula::Atom(name) => {
            let i = names
                .iter()
                .position(|x| x == name)
                .ok_or_else(|| CheckError::UnknownAtom(name.clone()))?;
            labels.iter().map(|row| row[i]).collect()
        }
        Formula::Not(x) => evaluate_finite(x, names, labels)?.into_iter().map(|v| !v).collect(),
        Formula::And(x, y) => {
            let (x, y) = (evaluate_finite(x, names, labels)?, evaluate_finite(y, names, labels)?);
            x.iter().zip(&y).map(|(a, b)| *a && *b).collect()
        }
        Formula::Or(x, y) => {
            let (x, y) = (evaluate_finite(x, names, labels)?, evaluate_finite(y, names, labels)?);
            x.iter().zip(&y).map(|(a, b)| *a || *b).collect()
        }
        Formula::Next(x) => {
            let x = evaluate_finite(x, names, labels)?;
            (0..n).map(|t| t + 1 < n && x[t + 1]).collect()
        }
        Formula::Eventually(x) => {
            let x = evaluate_finite(x, names, labels)?;
            let mut out = vec![false; n];
            for t in (0..n).rev() {
                out[t] = x[t] || (t + 1 < n && out[t + 1]);
            }
            out
        }
        Formula::Always(x) => {
            let x = evaluate_finite(x, names, labels)?;
            let mut out = vec![false; n];
            for t in (0..n).rev() {
                out[t] = x[t] && (t + 1 == n || out[t + 1]);
            }
            out
        }
        Formula::Until(x, y) => {
            let (x, y) = (evaluate_finite(x, names, labels)?, evaluate_finite(y, names, labels)?);
            let mut out = vec![false; n];
            for t in (0..n).rev() {
                out[t] = y[t] || (x[t] && t + 1 < n && out[t + 1]);
            }
            out
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub start_window: usize,
    pub end_window: usize,
    pub start_frame: usize,
    /// Inclusive.
    pub end_frame: usize,
}

/// JSON checker report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckerReport {
    #[serde(rename = "P_sat")]
    pub p_sat: f64,
    #[serde(rename = "P")]
    pub p: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub segments: Vec<SegmentReport>,
    #[serde(rename = "E")]
    pub evidence_windows: usize,
    #[serde(rename = "V_total")]
    pub total_windows: usize,
    pub fallback: bool,
    /// Keyed by frame budget N.
    pub hit_probability_at_budget: std::collections::BTreeMap<String, f64>,
}

impl CheckerReport {
    pub fn new(profile: &SatisfactionProfile, segs: &SegmentSet, a: &VideoAutomaton, budget: usize) -> Self {
        let segments = segs
            .segments
            .iter()
            .map(|&(s, e)| SegmentReport {
                start_window: s,
                end_window: e,
                start_frame: a.window_span(s).start,
                end_frame: a.window_span(e).end.saturating_sub(1),
            })
            .collect();
        let mut hit = std::collections::BTreeMap::new();
        if let Ok(h) = hit_probability(segs.evidence_windows, segs.total_windows, budget) {
            hit.insert(budget.to_string(), h);
        }
        Self {
            p_sat: profile.p_sat,
            p: profile.p.clone(),
            smoothed: profile.smoothed.clone(),
            segments,
            evidence_windows: segs.evidence_windows,
            total_windows: segs.total_windows,
            fallback: segs.fallback,
            hit_probability_at_budget: hit,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tlspec::parse_spec;

    pub(super) fn automaton(names: &[&str], rows: Vec<Vec<f64>>) -> VideoAutomaton {
        VideoAutomaton {
            kappa: 1,
            frame_count: rows.len(),
            propositions: names.iter().map(|s| s.to_string()).collect(),
            labels: rows,
        }
    }

    fn psat(spec: &str, names: &[&str], rows: Vec<Vec<f64>>) -> f64 {
        let (f, _) = parse_spec(spec).unwrap();
        check(&automaton(names, rows), &f, &CheckerConfig::default()).unwrap().p_sat
    }

    #[test]
    fn small_examples() {
        assert!((psat("F p", &["p"], vec![vec![0.7]]) - 0.7).abs() < 1e-12);
        assert_eq!(psat("G p", &["p"], vec![vec![1.0], vec![1.0]]), 1.0);
        assert!((psat("F p", &["p"], vec![vec![0.5], vec![0.5]]) - 0.75).abs() < 1e-12);
        assert_eq!(psat("p U q", &["p", "q"], vec![vec![1.0, 0.0], vec![1.0, 1.0]]), 1.0);
        assert_eq!(psat("X p", &["p"], vec![vec![1.0]]), 0.0);
        assert!((psat("X p", &["p"], vec![vec![0.0], vec![0.3]]) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn suffix_profile() {
        let (f, _) = parse_spec("F p").unwrap();
        let a = automaton(&["p"], vec![vec![0.0], vec![0.5], vec![0.0], vec![0.0]]);
        let prof = check(&a, &f, &CheckerConfig::default()).unwrap();
        assert_eq!(prof.p, vec![0.5, 0.5, 0.0, 0.0]);
        assert_eq!(prof.p_sat, 0.5);
    }

    #[test]
    fn check_errors() {
        let (f, _) = parse_spec("F zebra").unwrap();
        let a = automaton(&["p"], vec![vec![0.5]]);
        assert_eq!(
            check(&a, &f, &CheckerConfig::default()),
            Err(CheckError::UnknownAtom("zebra".into()))
        );
        let (f, props) = parse_spec("a | b | c").unwrap();
        let names = props.names();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let a = automaton(&refs, vec![vec![0.5; 3]]);
        let cfg = CheckerConfig {
            atom_cap: 2,
            ..CheckerConfig::default()
        };
        assert!(matches!(check(&a, &f, &cfg), Err(CheckError::TooManyAtoms { atoms: 3, cap: 2 })));
    }

    #[test]
    fn sigmoid_values() {
        for b in [0.1, 1.0, 10.0, 100.0] {
            assert_eq!(sigmoid(0.5, b), 0.5);
        }
        assert!((sigmoid(0.9, 10.0) - 0.98201379).abs() < 1e-8);
        assert!(smooth(&[0.1], 0.0).is_err());
        assert!(smooth(&[0.1], -1.0).is_err());
    }

    #[test]
    fn sixteen_atoms_fit() {
        let names: Vec<String> = (0..16).map(|i| format!("a{i}")).collect();
        let text = names.join(" | ");
        let (f, _) = parse_spec(&format!("F ({text})")).unwrap();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let a = automaton(&refs, vec![vec![0.1; 16]; 3]);
        let p = check(&a, &f, &CheckerConfig::default()).unwrap().p_sat;
        let miss = 0.9f64.powi(48);
        assert!((p - (1.0 - miss)).abs() < 1e-9);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_formula() -> impl Strategy<Value = Formula> {
            let leaf = prop_oneof![Just(Formula::atom("p")), Just(Formula::atom("q"))];
            leaf.prop_recursive(4, 24, 2, |inner| {
                prop_oneof![
                    inner.clone().prop_map(Formula::not),
                    (inner.clone(), inner.clone()).prop_map(|(a, b)| Formula::and(a, b)),
                    (inner.clone(), inner.clone()).prop_map(|(a, b)| Formula::or(a, b)),
                    inner.clone().prop_map(Formula::next),
                    inner.clone().prop_map(Formula::eventually),
                    inner.clone().prop_map(Formula::always),
                    (inner.clone(), inner).prop_map(|(a, b)| Formula::until(a, b)),
                ]
            })
        }

        proptest! {
            #[test]
            fn certainty_collapse(f in arb_formula(), bits in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..12)) {
                let names = vec!["p".to_string(), "q".to_string()];
                let labels: Vec<Vec<bool>> = bits.iter().map(|&(a, b)| vec![a, b]).collect();
                let rows = labels.iter().map(|r| r.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()).collect();
                let a = automaton(&["p", "q"], rows);
                let prof = check(&a, &f, &CheckerConfig::default()).unwrap();
                let truth = evaluate_finite(&f, &names, &labels).unwrap();
                for t in 0..labels.len() {
                    prop_assert_eq!(prof.p[t], if truth[t] { 1.0 } else { 0.0 });
                }
            }

            #[test]
            fn eventually_is_monotone(row in proptest::collection::vec(0.0f64..=1.0, 1..10), idx in 0usize..10, bump in 0.0f64..1.0) {
                let (f, _) = parse_spec("F p").unwrap();
                let before = check(&automaton(&["p"], row.iter().map(|&x| vec![x]).collect()), &f, &CheckerConfig::default()).unwrap().p_sat;
                let mut raised = row.clone();
                let i = idx % row.len();
                raised[i] = (raised[i] + bump).min(1.0);
                let after = check(&automaton(&["p"], raised.iter().map(|&x| vec![x]).collect()), &f, &CheckerConfig::default()).unwrap().p_sat;
                prop_assert!(after >= before - 1e-12);
            }

            #[test]
            fn smoothing_preserves_order(x in 0.0f64..=1.0, y in 0.0f64..=1.0, b in 0.1f64..50.0) {
                if y - x > 1e-9 {
                    prop_assert!(sigmoid(x, b) < sigmoid(y, b));
                }
            }

            #[test]
            fn argmax_is_stable(p in proptest::collection::vec(0.0f64..=1.0, 1..40)) {
                let s = smooth(&p, 10.0).unwrap();
                let argmax = |v: &[f64]| v.iter().enumerate().fold(0, |best, (i, x)| if *x > v[best] { i } else { best });
                prop_assert_eq!(argmax(&p), argmax(&s));
            }
        }
    }
}
