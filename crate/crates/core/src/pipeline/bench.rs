//! Latency benchmark over synthetic workloads on the virtual clock.

use std::fmt::Write as _;
use std::thread;

use serde::{Deserialize, Serialize};

use super::{run_pipeline, Backends, PipelineConfig, PipelineError, Query, RunResult};
use crate::embedding::ScenarioSpec;
use crate::latency::Mode;

/// One video length with its target share of event frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub length_s: f64,
    pub event_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub fps: f32,
    pub workloads: Vec<Workload>,
    pub modes: Vec<Mode>,
    pub propositions: Vec<String>,
    pub dim: usize,
    pub scene_length: usize,
    pub background_similarity: f64,
    pub event_similarity: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            fps: 2.0,
            workloads: default_workloads(),
            modes: Mode::ALL.to_vec(),
            propositions: ["person_enters", "door_opens", "lights_turn_on", "person_sits", "screen_turns_on"]
                .map(String::from)
                .to_vec(),
            dim: 64,
            scene_length: 40,
            background_similarity: 0.1,
            event_similarity: 0.5,
        }
    }
}

pub fn default_workloads() -> Vec<Workload> {
    [(15.0, 0.878), (60.0, 0.779), (600.0, 0.379), (3600.0, 0.245)]
        .map(|(length_s, event_fraction)| Workload { length_s, event_fraction })
        .to_vec()
}

impl BenchConfig {
    pub fn frames(&self, w: &Workload) -> usize {
        ((w.length_s * self.fps as f64).round() as usize).max(1)
    }

    /// Events of equal length, one per proposition, centred in equal slots.
    pub fn scenario(&self, w: &Workload) -> ScenarioSpec {
        let t = self.frames(w);
        let n = self.propositions.len().max(1);
        let slot = (t / n).max(1);
        let len = ((w.event_fraction * t as f64 / n as f64).round() as usize).clamp(1, slot);
        let mut s = ScenarioSpec::new(t, self.dim, self.fps, self.background_similarity);
        s.scene_length = self.scene_length;
        for (i, name) in self.propositions.iter().enumerate() {
            let start = (i * slot + (slot - len) / 2).min(t - 1);
            let end = (start + len - 1).min(t - 1);
            s = s.with_event(name, start, end, self.event_similarity);
        }
        s
    }

    /// `F (p1 & F (p2 & ... F pn))`.
    pub fn query(&self) -> String {
        let mut q = String::new();
        for (i, p) in self.propositions.iter().enumerate().rev() {
            q = if i + 1 == self.propositions.len() {
                format!("F {p}")
            } else {
                format!("F ({p} & {q})")
            };
        }
        q
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub length_s: f64,
    pub frames: usize,
    pub mode: Mode,
    /// Frames sent to a vision model: the grounded set, or the answer budget in vanilla mode.
    pub frames_used: usize,
    pub windows_measured: usize,
    pub passes: usize,
    /// Retrieved segments as a share of the video; absent in vanilla mode.
    pub foi_percent: Option<f64>,
    pub time_s: f64,
    /// Sequential time over this mode's time.
    pub speedup: Option<f64>,
    pub evidence_score: Option<f64>,
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub method: String,
    pub batching: bool,
    pub adaptive: bool,
    pub multi_segment: bool,
    pub avg_windows: f64,
    pub avg_calls: f64,
    pub avg_evidence_score: f64,
    pub avg_latency_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub ablation: Vec<AblationRow>,
}

fn row(w: &Workload, frames: usize, r: &RunResult) -> BenchRow {
    BenchRow {
        length_s: w.length_s,
        frames,
        mode: r.mode,
        frames_used: if r.mode == Mode::Vanilla { r.frames_sent.len() } else { r.grounding.frames_grounded },
        windows_measured: r.grounding.measured + r.grounding.failed,
        passes: r.grounding.passes,
        foi_percent: (r.mode != Mode::Vanilla).then_some(r.foi_percent),
        time_s: r.latency.total,
        speedup: None,
        evidence_score: r.answer.score,
        degraded: r.degraded,
    }
}

struct Point {
    workload: Workload,
    frames: usize,
    runs: Vec<RunResult>,
    single: RunResult,
}

fn run_point(base: &PipelineConfig, bench: &BenchConfig, w: &Workload) -> Result<Point, PipelineError> {
    let scenario = bench.scenario(w);
    let query = Query::Spec(bench.query());
    let run = |mode: Mode, multi: bool| {
        let cfg = PipelineConfig {
            mode,
            multi_segment: multi,
            ..base.clone()
        };
        let backends = Backends::synthetic(&cfg, &scenario)?;
        run_pipeline(&cfg, &query, &backends)
    };
    let runs = bench
        .modes
        .iter()
        .map(|&m| run(m, base.multi_segment))
        .collect::<Result<Vec<_>, _>>()?;
    let single = run(Mode::Adaptive, false)?;
    Ok(Point {
        workload: *w,
        frames: bench.frames(w),
        runs,
        single,
    })
}

/// Runs every workload in every mode; workloads run in parallel.
pub fn run_bench(base: &PipelineConfig, bench: &BenchConfig) -> Result<BenchReport, PipelineError> {
    base.validate()?;
    let points = thread::scope(|s| {
        let handles: Vec<_> = bench
            .workloads
            .iter()
            .map(|w| s.spawn(move || run_point(base, bench, w)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("bench worker panicked"))
            .collect::<Result<Vec<_>, _>>()
    })?;

    let mut rows = Vec::new();
    for p in &points {
        let seq = p.runs.iter().find(|r| r.mode == Mode::Sequential).map(|r| r.latency.total);
        for r in &p.runs {
            let mut br = row(&p.workload, p.frames, r);
            br.speedup = seq.map(|s| s / r.latency.total);
            rows.push(br);
        }
    }
    Ok(BenchReport {
        ablation: ablation(&points),
        rows,
    })
}

fn ablation(points: &[Point]) -> Vec<AblationRow> {
    let n = points.len().max(1) as f64;
    let pick = |mode: Mode| -> Vec<&RunResult> {
        points
            .iter()
            .filter_map(|p| p.runs.iter().find(|r| r.mode == mode))
            .collect()
    };
    let single: Vec<&RunResult> = points.iter().map(|p| &p.single).collect();
    let specs = [
        ("baseline", false, false, false, pick(Mode::Sequential)),
        ("+ batched detection", true, false, false, pick(Mode::Batched)),
        ("+ adaptive sampling", true, true, false, single),
        ("+ multi-segment", true, true, true, pick(Mode::Adaptive)),
    ];
    specs
        .into_iter()
        .filter(|s| s.4.len() == points.len() && !points.is_empty())
        .map(|(method, batching, adaptive, multi_segment, runs)| {
            let avg = |f: &dyn Fn(&RunResult) -> f64| runs.iter().map(|r| f(r)).sum::<f64>() / n;
            AblationRow {
                method: method.into(),
                batching,
                adaptive,
                multi_segment,
                avg_windows: avg(&|r| (r.grounding.measured + r.grounding.failed) as f64),
                avg_calls: avg(&|r| r.grounding.passes as f64),
                avg_evidence_score: avg(&|r| r.answer.score.unwrap_or(0.0)),
                avg_latency_s: avg(&|r| r.latency.total),
            }
        })
        .collect()
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.prec$}"))
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bench report serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "length_s,frames,mode,frames_used,windows_measured,passes,foi_percent,time_s,speedup,evidence_score,degraded\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{:.6},{},{},{}",
                r.length_s,
                r.frames,
                r.mode,
                r.frames_used,
                r.windows_measured,
                r.passes,
                r.foi_percent.map_or(String::new(), |x| format!("{x:.4}")),
                r.time_s,
                r.speedup.map_or(String::new(), |x| format!("{x:.6}")),
                r.evidence_score.map_or(String::new(), |x| format!("{x:.6}")),
                r.degraded,
            );
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>8} {:>7} {:<10} {:>11} {:>8} {:>7} {:>7} {:>10} {:>8} {:>8}",
            "length_s", "frames", "mode", "frames_used", "windows", "passes", "foi_%", "time_s", "speedup", "evidence"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:>8} {:>7} {:<10} {:>11} {:>8} {:>7} {:>7} {:>10.2} {:>8} {:>8}",
                r.length_s,
                r.frames,
                r.mode.as_str(),
                r.frames_used,
                r.windows_measured,
                r.passes,
                opt(r.foi_percent, 2),
                r.time_s,
                opt(r.speedup, 2),
                opt(r.evidence_score, 3),
            );
        }
        if !self.ablation.is_empty() {
            out.push('\n');
            let _ = writeln!(
                out,
                "{:<22} {:>5} {:>5} {:>5} {:>9} {:>9} {:>9} {:>10}",
                "method", "batch", "adapt", "multi", "windows", "calls", "evidence", "latency_s"
            );
            let mark = |b: bool| if b { "x" } else { "-" };
            for a in &self.ablation {
                let _ = writeln!(
                    out,
                    "{:<22} {:>5} {:>5} {:>5} {:>9.1} {:>9.1} {:>9.3} {:>10.2}",
                    a.method,
                    mark(a.batching),
                    mark(a.adaptive),
                    mark(a.multi_segment),
                    a.avg_windows,
                    a.avg_calls,
                    a.avg_evidence_score,
                    a.avg_latency_s,
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_query_and_scenario() {
        let b = BenchConfig {
            propositions: vec!["a".into(), "b".into(), "c".into()],
            ..BenchConfig::default()
        };
        assert_eq!(b.query(), "F (a & F (b & F c))");
        let s = b.scenario(&Workload { length_s: 30.0, event_fraction: 0.5 });
        assert_eq!(s.frame_count, 60);
        let spans: Vec<(usize, usize)> = s.events.iter().map(|e| (e.start_frame, e.end_frame)).collect();
        assert_eq!(spans, vec![(5, 14), (25, 34), (45, 54)]);
    }

    #[test]
    fn small_grid() {
        let bench = BenchConfig {
            workloads: vec![
                Workload { length_s: 60.0, event_fraction: 0.7 },
                Workload { length_s: 300.0, event_fraction: 0.3 },
            ],
            ..BenchConfig::default()
        };
        let rep = run_bench(&PipelineConfig::default(), &bench).unwrap();
        assert_eq!(rep.rows.len(), 8);
        assert_eq!(rep.ablation.len(), 4);
        let vanilla: Vec<&BenchRow> = rep.rows.iter().filter(|r| r.mode == Mode::Vanilla).collect();
        assert!(vanilla.iter().all(|r| r.frames_used == 32 && r.time_s == 4.15 && r.foi_percent.is_none()));
        let seq = rep.rows.iter().find(|r| r.mode == Mode::Sequential).unwrap();
        assert_eq!(seq.speedup, Some(1.0));
        assert_eq!(seq.passes, seq.windows_measured * 5);
        assert_eq!(rep.to_csv().lines().count(), 9);
        assert!(rep.to_table().contains("adaptive"));
    }
}
