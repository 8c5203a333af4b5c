//! Linear-chain video automaton and its explicit DTMC text form.
//!
//! Export layout, one directive per line:
//!
//! ```text
//! dtmc
//! @states 3
//! @kappa 16
//! @frames 40
//! @propositions dog cat
//! @transitions
//! 0 1 1
//! 1 2 1
//! 2 2 1
//! @labels
//! 0 0.25 1
//! 1 0 0.5
//! 2 0.75 0
//! @end
//! ```
//!
//! The final state is absorbing. Confidences use Rust's shortest round-trip
//! float formatting, so export after import reproduces the file byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{window_count, DetectionMatrix};
use crate::tlspec::is_identifier;

#[derive(Debug, Error)]
pub enum AutomatonError {
    #[error("detection matrix has no windows")]
    Empty,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoAutomaton {
    pub kappa: usize,
    pub frame_count: usize,
    pub propositions: Vec<String>,
    /// `labels[t][i]` is the confidence of proposition `i` in state `t`.
    pub labels: Vec<Vec<f64>>,
}

impl VideoAutomaton {
    pub fn state_count(&self) -> usize {
        self.labels.len()
    }

    pub fn proposition_index(&self, name: &str) -> Option<usize> {
        self.propositions.iter().position(|p| p == name)
    }

    /// Frames covered by state `t`.
    pub fn window_span(&self, t: usize) -> Range<usize> {
        t * self.kappa..((t + 1) * self.kappa).min(self.frame_count)
    }

    /// Successor of `t`; the last state loops to itself.
    pub fn successor(&self, t: usize) -> usize {
        (t + 1).min(self.state_count() - 1)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let window_map: Vec<[usize; 2]> = (0..self.state_count())
            .map(|t| {
                let s = self.window_span(t);
                [s.start, s.end]
            })
            .collect();
        serde_json::json!({
            "kappa": self.kappa,
            "frame_count": self.frame_count,
            "windows": self.state_count(),
            "propositions": self.propositions,
            "Z": self.labels.concat(),
            "window_map": window_map,
        })
    }
}

pub fn build_automaton(matrix: &DetectionMatrix) -> Result<VideoAutomaton, AutomatonError> {
    if matrix.windows == 0 {
        return Err(AutomatonError::Empty);
    }
    Ok(VideoAutomaton {
        kappa: matrix.kappa,
        frame_count: matrix.frame_count,
        propositions: matrix.propositions.clone(),
        labels: (0..matrix.windows).map(|w| matrix.row(w).to_vec()).collect(),
    })
}

pub fn export_automaton(a: &VideoAutomaton) -> String {
    let n = a.state_count();
    let mut out = String::new();
    out.push_str("dtmc\n");
    let _ = writeln!(out, "@states {n}");
    let _ = writeln!(out, "@kappa {}", a.kappa);
    let _ = writeln!(out, "@frames {}", a.frame_count);
    out.push_str("@propositions");
    for p in &a.propositions {
        let _ = write!(out, " {p}");
    }
    out.push('\n');
    out.push_str("@transitions\n");
    for t in 0..n {
        let _ = writeln!(out, "{t} {} 1", a.successor(t));
    }
    out.push_str("@labels\n");
    for (t, row) in a.labels.iter().enumerate() {
        let _ = write!(out, "{t}");
        for v in row {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    out.push_str("@end\n");
    out
}

pub fn write_automaton_file(path: &Path, a: &VideoAutomaton) -> Result<(), AutomatonError> {
    fs::write(path, export_automaton(a))?;
    Ok(())
}

pub fn read_automaton_file(path: &Path) -> Result<VideoAutomaton, AutomatonError> {
    import_automaton(&fs::read_to_string(path)?)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str, AutomatonError> {
        match self.inner.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l)
            }
            None => Err(self.err("unexpected end of file")),
        }
    }

    fn err(&self, message: impl Into<String>) -> AutomatonError {
        AutomatonError::Parse {
            line: self.line,
            message: message.into(),
        }
    }

    fn directive(&mut self, key: &str) -> Result<&'a str, AutomatonError> {
        let l = self.next()?;
        let rest = l
            .strip_prefix(key)
            .ok_or_else(|| self.err(format!("expected {key}")))?;
        if rest.is_empty() {
            return Ok(rest);
        }
        rest.strip_prefix(' ')
            .ok_or_else(|| self.err(format!("expected {key}")))
    }

    fn number(&self, s: &str) -> Result<usize, AutomatonError> {
        s.parse().map_err(|_| self.err(format!("bad integer {s:?}")))
    }
}

pub fn import_automaton(text: &str) -> Result<VideoAutomaton, AutomatonError> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        line: 0,
    };
    if lines.next()? != "dtmc" {
        return Err(lines.err("expected dtmc header"));
    }
    let n = lines.directive("@states")?;
    let n = lines.number(n)?;
    if n == 0 {
        return Err(lines.err("automaton needs at least one state"));
    }
    let kappa = lines.directive("@kappa")?;
    let kappa = lines.number(kappa)?;
    let frames = lines.directive("@frames")?;
    let frame_count = lines.number(frames)?;
    if kappa == 0 || window_count(frame_count, kappa) != n {
        return Err(lines.err("state count disagrees with frames and kappa"));
    }
    let props = lines.directive("@propositions")?;
    let propositions: Vec<String> = props.split_whitespace().map(String::from).collect();
    if let Some(bad) = propositions.iter().find(|p| !is_identifier(p)) {
        return Err(lines.err(format!("bad proposition name {bad:?}")));
    }
    lines.directive("@transitions")?;
    for t in 0..n {
        let l = lines.next()?;
        let expect = format!("{t} {} 1", (t + 1).min(n - 1));
        if l != expect {
            return Err(lines.err(format!("expected transition {expect:?}")));
        }
    }
    lines.directive("@labels")?;
    let mut labels = Vec::with_capacity(n);
    for t in 0..n {
        let l = lines.next()?;
        let mut parts = l.split(' ');
        let idx = parts.next().unwrap_or_default();
        if lines.number(idx)? != t {
            return Err(lines.err(format!("expected labels for state {t}")));
        }
        let row = parts
            .map(|v| match v.parse::<f64>() {
                Ok(x) if (0.0..=1.0).contains(&x) => Ok(x),
                _ => Err(lines.err(format!("bad confidence {v:?}"))),
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if row.len() != propositions.len() {
            return Err(lines.err("label count disagrees with propositions"));
        }
        labels.push(row);
    }
    lines.directive("@end")?;
    if lines.inner.any(|(_, l)| !l.trim().is_empty()) {
        return Err(lines.err("trailing content after @end"));
    }
    Ok(VideoAutomaton {
        kappa,
        frame_count,
        propositions,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(frames: usize, kappa: usize, rows: Vec<Vec<f64>>) -> DetectionMatrix {
        let p = rows.first().map_or(1, Vec::len);
        let names = (0..p).map(|i| format!("p{i}")).collect();
        DetectionMatrix::from_rows(kappa, frames, names, &rows).unwrap()
    }

    #[test]
    fn state_counts() {
        let a = build_automaton(&matrix(5, 10, vec![vec![0.3]])).unwrap();
        assert_eq!(a.state_count(), 1);
        assert_eq!(a.labels[0], vec![0.3]);
        assert_eq!(build_automaton(&matrix(100, 10, vec![vec![0.0]; 10])).unwrap().state_count(), 10);
        let a = build_automaton(&matrix(95, 10, vec![vec![0.0]; 10])).unwrap();
        assert_eq!(a.state_count(), 10);
        assert_eq!(a.window_span(9), 90..95);
        let empty = DetectionMatrix::filled(0, 4, vec!["a".into()]);
        assert!(build_automaton(&empty).is_err());
    }

    #[test]
    fn export_three_states() {
        let a = build_automaton(&matrix(40, 16, vec![vec![0.25, 1.0], vec![0.0, 0.5], vec![0.75, 0.0]])).unwrap();
        let expected = "dtmc\n@states 3\n@kappa 16\n@frames 40\n@propositions p0 p1\n@transitions\n0 1 1\n1 2 1\n2 2 1\n@labels\n0 0.25 1\n1 0 0.5\n2 0.75 0\n@end\n";
        assert_eq!(export_automaton(&a), expected);
    }

    #[test]
    fn export_single_state_is_absorbing() {
        let a = build_automaton(&matrix(3, 4, vec![vec![0.1]])).unwrap();
        let text = export_automaton(&a);
        assert!(text.contains("@transitions\n0 0 1\n@labels"));
    }

    #[test]
    fn import_rejects_bad_input() {
        let a = build_automaton(&matrix(40, 16, vec![vec![0.25], vec![0.0], vec![0.75]])).unwrap();
        let good = export_automaton(&a);
        assert!(import_automaton(&good.replace("1 2 1", "1 0 1")).is_err());
        assert!(import_automaton(&good.replace("0.75", "1.5")).is_err());
        assert!(import_automaton(&good.replace("@states 3", "@states 4")).is_err());
        assert!(import_automaton(&good.replace("@end\n", "")).is_err());
        assert!(import_automaton(&format!("{good}junk\n")).is_err());
        assert!(import_automaton("").is_err());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.dtmc");
        let a = build_automaton(&matrix(20, 8, vec![vec![0.1, 0.2]; 3])).unwrap();
        write_automaton_file(&path, &a).unwrap();
        assert_eq!(read_automaton_file(&path).unwrap(), a);
    }

    #[test]
    fn json_has_window_map() {
        let a = build_automaton(&matrix(20, 8, vec![vec![0.5]; 3])).unwrap();
        let v = a.to_json();
        assert_eq!(v["window_map"][2], serde_json::json!([16, 20]));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn export_import_roundtrip(frames in 1usize..200, kappa in 1usize..20, p in 0usize..4,
                                       vals in proptest::collection::vec(0.0f64..=1.0, 800)) {
                let n = window_count(frames, kappa);
                prop_assert_eq!(n, (frames + kappa - 1) / kappa);
                let rows: Vec<Vec<f64>> = (0..n).map(|t| (0..p).map(|i| vals[(t * 4 + i) % 800]).collect()).collect();
                let names = (0..p).map(|i| format!("q{i}")).collect();
                let m = DetectionMatrix::from_rows(kappa, frames, names, &rows).unwrap();
                let a = build_automaton(&m).unwrap();
                prop_assert_eq!(a.state_count(), n);
                for t in 0..n {
                    prop_assert_eq!(a.successor(t), if t + 1 < n { t + 1 } else { t });
                }
                let text = export_automaton(&a);
                let back = import_automaton(&text).unwrap();
                prop_assert_eq!(&back, &a);
                prop_assert_eq!(export_automaton(&back), text);
            }
        }
    }
}
