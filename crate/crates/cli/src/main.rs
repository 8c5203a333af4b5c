use std::fmt::Display;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use tlvq::automaton::{build_automaton, read_automaton_file, write_automaton_file, VideoAutomaton};
use tlvq::checker::{check, extract_multi_segments, extract_primary_segment, CheckerReport};
use tlvq::detection::{ground_detections, DetectionError, DetectionMatrix};
use tlvq::embedding::{
    encode_trace, phrase_for, synthetic_trace, write_trace_file, EmbeddingProvider, ScenarioSpec, TraceProvider,
};
use tlvq::latency::Mode;
use tlvq::pipeline::bench::{run_bench, BenchConfig, Workload};
use tlvq::pipeline::{
    build_detector, build_translator, resolve_spec, run_pipeline, Backends, EmbeddingKind, PipelineConfig, PipelineError,
    Query,
};
use tlvq::sampling::{run_sampling, CandidateSet, KeyframeSet, SamplingReport};
use tlvq::tlspec::{free_propositions, print_spec};

const EXIT_USAGE: u8 = 2;
const EXIT_BACKEND: u8 = 3;
const EXIT_DEGRADED: u8 = 4;

#[derive(Parser)]
#[command(name = "tlvq", version, about = "Temporal-logic question answering over long videos")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Overrides {
    /// JSON pipeline configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Relevancy threshold for candidate frames.
    #[arg(long, global = true, allow_hyphen_values = true)]
    tau_s: Option<f64>,
    /// Similarity below which a candidate becomes a keyframe.
    #[arg(long, global = true)]
    tau_r: Option<f64>,
    /// Frames per window.
    #[arg(long, global = true)]
    kappa: Option<usize>,
    /// Propositions per detector pass.
    #[arg(long, global = true)]
    batch: Option<usize>,
    /// Frames sent to the answerer.
    #[arg(long, global = true)]
    budget: Option<usize>,
    /// vanilla, sequential, batched or adaptive.
    #[arg(long, global = true)]
    mode: Option<Mode>,
    /// Seed for synthetic backends.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Turn a question into a temporal-logic spec.
    Translate {
        #[arg(long)]
        query: String,
    },
    /// Generate a trace file and window labels from a scenario.
    Synth {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
    /// Run both sampling stages and write the sampling report.
    Sample {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        spec: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ground propositions and write the detection matrix.
    Ground {
        #[arg(long)]
        spec: String,
        /// Sampling report; without one every frame is grounded.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Scenario for the synthetic detector.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Frame count when neither a report nor a scenario gives one.
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a spec against a detection matrix or an exported automaton.
    Check {
        #[arg(long)]
        spec: String,
        #[arg(long, conflicts_with = "automaton", required_unless_present = "automaton")]
        matrix: Option<PathBuf>,
        #[arg(long)]
        automaton: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Answer a question end to end.
    Run {
        #[arg(long, conflicts_with = "query", required_unless_present = "query")]
        spec: Option<String>,
        #[arg(long)]
        query: Option<String>,
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also report elapsed wall-clock time.
        #[arg(long)]
        wall_clock: bool,
    },
    /// Compare modes over synthetic workloads on the virtual clock.
    Bench {
        /// JSON bench configuration.
        #[arg(long)]
        bench_config: Option<PathBuf>,
        /// Video lengths in seconds, paired with --event-fractions.
        #[arg(long, value_delimiter = ',')]
        lengths: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        event_fractions: Vec<f64>,
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        wall_clock: bool,
    },
    /// Write the automaton built from a detection matrix.
    ExportAutomaton {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

fn usage(e: impl Display) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: e.to_string(),
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure {
            code: if e.is_backend_failure() { EXIT_BACKEND } else { EXIT_USAGE },
            message: e.to_string(),
        }
    }
}

impl From<DetectionError> for Failure {
    fn from(e: DetectionError) -> Self {
        PipelineError::from(e).into()
    }
}

fn load_config(o: &Overrides) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &o.config {
        Some(p) => PipelineConfig::from_file(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = o.tau_s {
        cfg.sampling.tau_s = v;
    }
    if let Some(v) = o.tau_r {
        cfg.sampling.tau_r = v;
    }
    if let Some(v) = o.kappa {
        cfg.sampling.kappa = v;
    }
    if let Some(v) = o.batch {
        cfg.batch = v;
    }
    if let Some(v) = o.budget {
        cfg.budget = v;
    }
    if let Some(v) = o.mode {
        cfg.mode = v;
    }
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn read_scenario(path: &Path) -> Result<ScenarioSpec, Failure> {
    let s: ScenarioSpec = read_json(path)?;
    s.validate().map_err(|e| usage(format!("{}: {e}", path.display())))?;
    Ok(s)
}

fn stdout(text: &str) {
    let _ = io::stdout().lock().write_all(text.as_bytes());
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, format!("{text}\n")).map_err(|e| usage(format!("{}: {e}", p.display()))),
        None => {
            stdout(&format!("{text}\n"));
            Ok(())
        }
    }
}

fn pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

fn translate(cfg: &PipelineConfig, query: &str) -> Result<u8, Failure> {
    let translator = build_translator(cfg)?;
    let q = if translator.is_some() {
        Query::Natural(query.into())
    } else {
        Query::Spec(query.into())
    };
    let (f, props) = resolve_spec(&q, translator.as_deref())?;
    emit(None, &pretty(&json!({"spec": print_spec(&f), "propositions": props.names()})))?;
    Ok(0)
}

fn synth(cfg: &PipelineConfig, scenario: &Path, trace: &Path, labels: &Path) -> Result<u8, Failure> {
    let s = read_scenario(scenario)?;
    let t = synthetic_trace(&s, cfg.seed).map_err(usage)?;
    write_trace_file(trace, &t).map_err(usage)?;
    let names = s.proposition_names();
    let kappa = cfg.sampling.kappa;
    let doc = json!({
        "kappa": kappa,
        "frame_count": s.frame_count,
        "propositions": names,
        "labels": s.window_labels(kappa, &names),
    });
    emit(Some(labels), &pretty(&doc))?;
    Ok(0)
}

fn sample(cfg: &PipelineConfig, trace: &Path, spec: &str, out: Option<&Path>) -> Result<u8, Failure> {
    let (f, _) = resolve_spec(&Query::Spec(spec.into()), None)?;
    let provider = TraceProvider::from_file(trace).map_err(PipelineError::from)?;
    let trace = encode_trace(&provider).map_err(PipelineError::from)?;
    let phrases: Vec<String> = free_propositions(&f).names().iter().map(|n| phrase_for(n)).collect();
    let text = provider.encode_text(&phrases).map_err(PipelineError::from)?;
    let outcome = run_sampling(&trace, &text, &cfg.sampling).map_err(PipelineError::from)?;
    let report = SamplingReport::new(&outcome, &cfg.sampling, trace.frame_count());
    emit(out, &pretty(&report))?;
    Ok(0)
}

fn ground(
    cfg: &PipelineConfig,
    spec: &str,
    report: Option<&Path>,
    scenario: Option<&Path>,
    frames: Option<usize>,
    out: Option<&Path>,
) -> Result<u8, Failure> {
    let (f, _) = resolve_spec(&Query::Spec(spec.into()), None)?;
    let props = free_propositions(&f);
    let scenario = scenario.map(read_scenario).transpose()?;
    let report: Option<SamplingReport> = report.map(read_json).transpose()?;
    let t = report
        .as_ref()
        .map(|r| r.frame_count)
        .or(scenario.as_ref().map(|s| s.frame_count))
        .or(frames)
        .ok_or_else(|| usage("frame count unknown: pass --report, --scenario or --frames"))?;
    let (cand, keys, detect) = match &report {
        Some(r) => {
            let mut r = r.clone();
            r.delta = cfg.sampling.delta;
            r.restore()
        }
        None => {
            let cand = CandidateSet::from_segments(vec![(0, t.saturating_sub(1))]);
            let keys = KeyframeSet::reconstruct(&cand, (0..t).collect());
            (cand, keys, (0..t).collect())
        }
    };
    let detector = build_detector(cfg, scenario.as_ref())?;
    let (matrix, stats) = ground_detections(
        detector.as_ref(),
        t,
        &detect,
        &cand,
        &keys,
        &props,
        &cfg.grounding_options(),
    )?;
    for d in &stats.diagnostics {
        log::warn!("{d}");
    }
    emit(out, &matrix.to_json())?;
    Ok(if stats.failed_windows.is_empty() { 0 } else { EXIT_DEGRADED })
}

fn read_matrix(path: &Path) -> Result<DetectionMatrix, Failure> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    Ok(DetectionMatrix::from_json(&text)?)
}

fn check_cmd(
    cfg: &PipelineConfig,
    spec: &str,
    matrix: Option<&Path>,
    automaton: Option<&Path>,
    out: Option<&Path>,
) -> Result<u8, Failure> {
    let (f, _) = resolve_spec(&Query::Spec(spec.into()), None)?;
    let a: VideoAutomaton = match (matrix, automaton) {
        (Some(m), _) => build_automaton(&read_matrix(m)?).map_err(PipelineError::from)?,
        (None, Some(p)) => read_automaton_file(p).map_err(PipelineError::from)?,
        (None, None) => return Err(usage("pass --matrix or --automaton")),
    };
    let profile = check(&a, &f, &cfg.checker).map_err(PipelineError::from)?;
    let segs = if cfg.multi_segment {
        extract_multi_segments(&profile, &a, &f, &cfg.checker)
    } else {
        extract_primary_segment(&profile, &a, &f, &cfg.checker)
    }
    .map_err(PipelineError::from)?;
    let report = CheckerReport::new(&profile, &segs, &a, cfg.budget);
    emit(out, &pretty(&report))?;
    Ok(if segs.fallback { EXIT_DEGRADED } else { 0 })
}

fn run_cmd(
    cfg: &PipelineConfig,
    query: Query,
    scenario: Option<&Path>,
    trace: Option<&Path>,
    out: Option<&Path>,
    wall_clock: bool,
) -> Result<u8, Failure> {
    let started = Instant::now();
    let scenario = scenario.map(read_scenario).transpose()?;
    let mut cfg = cfg.clone();
    if trace.is_some() && cfg.backends.embedding == EmbeddingKind::Synthetic {
        cfg.backends.embedding = EmbeddingKind::File;
    }
    let backends = Backends::from_config(&cfg, scenario.as_ref(), trace)?;
    let result = run_pipeline(&cfg, &query, &backends)?;
    let mut doc: Value = serde_json::to_value(&result).expect("run result serializes");
    if wall_clock {
        doc["wall_clock_s"] = json!(started.elapsed().as_secs_f64());
    }
    emit(out, &pretty(&doc))?;
    for d in &result.diagnostics {
        log::warn!("{d}");
    }
    Ok(if result.degraded { EXIT_DEGRADED } else { 0 })
}

fn bench_cmd(
    cfg: &PipelineConfig,
    bench_config: Option<&Path>,
    lengths: &[f64],
    fractions: &[f64],
    json_out: Option<&Path>,
    csv_out: Option<&Path>,
    wall_clock: bool,
) -> Result<u8, Failure> {
    let mut bench: BenchConfig = match bench_config {
        Some(p) => read_json(p)?,
        None => BenchConfig::default(),
    };
    if !lengths.is_empty() {
        if lengths.len() != fractions.len() {
            return Err(usage("--lengths and --event-fractions must have the same length"));
        }
        bench.workloads = lengths
            .iter()
            .zip(fractions)
            .map(|(&length_s, &event_fraction)| Workload { length_s, event_fraction })
            .collect();
    }
    let started = Instant::now();
    let report = run_bench(cfg, &bench)?;
    stdout(&report.to_table());
    if wall_clock {
        stdout(&format!("wall clock: {:.3} s\n", started.elapsed().as_secs_f64()));
    }
    if let Some(p) = json_out {
        emit(Some(p), &report.to_json())?;
    }
    if let Some(p) = csv_out {
        fs::write(p, report.to_csv()).map_err(|e| usage(format!("{}: {e}", p.display())))?;
    }
    Ok(0)
}

fn export(matrix: &Path, out: &Path) -> Result<u8, Failure> {
    let a = build_automaton(&read_matrix(matrix)?).map_err(PipelineError::from)?;
    write_automaton_file(out, &a).map_err(PipelineError::from)?;
    Ok(0)
}

fn dispatch(cli: Cli) -> Result<u8, Failure> {
    let cfg = load_config(&cli.overrides)?;
    match cli.command {
        Command::Translate { query } => translate(&cfg, &query),
        Command::Synth { scenario, trace, labels } => synth(&cfg, &scenario, &trace, &labels),
        Command::Sample { trace, spec, out } => sample(&cfg, &trace, &spec, out.as_deref()),
        Command::Ground {
            spec,
            report,
            scenario,
            frames,
            out,
        } => ground(&cfg, &spec, report.as_deref(), scenario.as_deref(), frames, out.as_deref()),
        Command::Check {
            spec,
            matrix,
            automaton,
            out,
        } => check_cmd(&cfg, &spec, matrix.as_deref(), automaton.as_deref(), out.as_deref()),
        Command::Run {
            spec,
            query,
            scenario,
            trace,
            out,
            wall_clock,
        } => {
            let q = match (spec, query) {
                (Some(s), _) => Query::Spec(s),
                (None, Some(q)) => Query::Natural(q),
                (None, None) => return Err(usage("pass --spec or --query")),
            };
            run_cmd(&cfg, q, scenario.as_deref(), trace.as_deref(), out.as_deref(), wall_clock)
        }
        Command::Bench {
            bench_config,
            lengths,
            event_fractions,
            json,
            csv,
            wall_clock,
        } => bench_cmd(
            &cfg,
            bench_config.as_deref(),
            &lengths,
            &event_fractions,
            json.as_deref(),
            csv.as_deref(),
            wall_clock,
        ),
        Command::ExportAutomaton { matrix, out } => export(&matrix, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
