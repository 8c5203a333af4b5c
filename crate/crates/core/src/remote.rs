//! HTTP clients for hosted embedding, detector, translator and answerer services.
//!
//! Every call is a JSON POST. Transport errors, 429 and 5xx responses are
//! retried with exponential backoff; other statuses fail at once. When the
//! configured environment variable holds a token it is sent as a bearer
//! credential.

use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use ureq::Agent;

use crate::detection::{DetectionError, DetectorBackend, WindowRequest};
use crate::embedding::{normalize, EmbeddingError, EmbeddingProvider, EmbeddingVector};
use crate::pipeline::{Answer, Answerer, Translator};

pub const DEFAULT_TOKEN_ENV: &str = "TLVQ_API_TOKEN";

#[derive(Debug, Error)]
pub enum RemoteError {
    #[error("request to {url} failed after {attempts} attempts: {message}")]
    Exhausted { url: String, attempts: usize, message: String },
    #[error("{url} answered with status {status}")]
    Status { url: String, status: u16 },
    #[error("malformed response from {url}: {message}")]
    Decode { url: String, message: String },
    #[error("remote endpoint is not configured")]
    Unconfigured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint: String,
    /// Name of the environment variable holding the bearer token.
    pub token_env: String,
    pub timeout_ms: u64,
    pub attempts: usize,
    pub backoff_ms: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            token_env: DEFAULT_TOKEN_ENV.into(),
            timeout_ms: 30_000,
            attempts: 3,
            backoff_ms: 200,
        }
    }
}

impl RemoteConfig {
    pub fn at(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    agent: Agent,
    cfg: RemoteConfig,
    token: Option<String>,
}

impl Client {
    pub fn new(cfg: RemoteConfig) -> Result<Self, RemoteError> {
        if cfg.endpoint.is_empty() {
            return Err(RemoteError::Unconfigured);
        }
        let config = Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .http_status_as_error(false)
            .build();
        let token = std::env::var(&cfg.token_env).ok().filter(|t| !t.is_empty());
        Ok(Self {
            agent: Agent::new_with_config(config),
            cfg,
            token,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.cfg.endpoint.trim_end_matches('/'), path)
    }

    pub fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp, RemoteError> {
        let url = self.url(path);
        let attempts = self.cfg.attempts.max(1);
        let mut message = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(self.cfg.backoff_ms << (attempt - 1)));
            }
            let mut req = self.agent.post(&url);
            if let Some(t) = &self.token {
                req = req.header("Authorization", &format!("Bearer {t}"));
            }
            match req.send_json(body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if (200..300).contains(&status) {
                        return resp.body_mut().read_json::<Resp>().map_err(|e| RemoteError::Decode {
                            url: url.clone(),
                            message: e.to_string(),
                        });
                    }
                    if status != 429 && status < 500 {
                        return Err(RemoteError::Status { url, status });
                    }
                    message = format!("status {status}");
                }
                Err(e) => message = e.to_string(),
            }
            log::debug!("attempt {} of {attempts} to {url} failed: {message}", attempt + 1);
        }
        Err(RemoteError::Exhausted { url, attempts, message })
    }
}

/// Reference to one frame of a hosted video.
pub fn frame_ref(video: &str, frame: usize) -> String {
    format!("{video}#{frame}")
}

#[derive(Serialize)]
struct EncodeRequest<'a> {
    kind: &'a str,
    items: Vec<String>,
}

#[derive(Deserialize)]
struct EncodeResponse {
    embeddings: Vec<Vec<f64>>,
}

/// Embedding service: `POST /encode {kind, items: [base64]} -> {embeddings}`.
/// Frame items are base64 frame references, text items base64 UTF-8 phrases.
#[derive(Debug, Clone)]
pub struct RemoteEmbedding {
    client: Client,
    pub video: String,
    pub frame_count: usize,
    pub fps: f32,
    pub dim: usize,
    pub chunk: usize,
    pub in_flight: usize,
}

impl RemoteEmbedding {
    pub fn new(client: Client, video: impl Into<String>, frame_count: usize, fps: f32, dim: usize) -> Self {
        Self {
            client,
            video: video.into(),
            frame_count,
            fps,
            dim,
            chunk: 64,
            in_flight: 4,
        }
    }

    fn encode(&self, kind: &str, items: Vec<String>) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let chunks: Vec<&[String]> = items.chunks(self.chunk.max(1)).collect();
        let mut out: Vec<Option<Result<Vec<EmbeddingVector>, EmbeddingError>>> =
            (0..chunks.len()).map(|_| None).collect();
        for (group_idx, group) in chunks.chunks(self.in_flight.max(1)).enumerate() {
            let results: Vec<_> = thread::scope(|s| {
                let handles: Vec<_> = group
                    .iter()
                    .map(|chunk| s.spawn(move || self.encode_chunk(kind, chunk)))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("encode worker")).collect()
            });
            for (i, r) in results.into_iter().enumerate() {
                out[group_idx * self.in_flight.max(1) + i] = Some(r);
            }
        }
        let mut rows = Vec::with_capacity(items.len());
        for r in out {
            rows.extend(r.expect("every chunk ran")?);
        }
        Ok(rows)
    }

    fn encode_chunk(&self, kind: &str, chunk: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let req = EncodeRequest {
            kind,
            items: chunk.iter().map(|s| B64.encode(s.as_bytes())).collect(),
        };
        let resp: EncodeResponse = self
            .client
            .post("encode", &req)
            .map_err(|e| EmbeddingError::Remote(e.to_string()))?;
        if resp.embeddings.len() != chunk.len() {
            return Err(EmbeddingError::Remote(format!(
                "{} embeddings for {} items",
                resp.embeddings.len(),
                chunk.len()
            )));
        }
        resp.embeddings
            .iter()
            .map(|row| {
                if row.len() != self.dim {
                    return Err(EmbeddingError::DimensionMismatch {
                        left: self.dim,
                        right: row.len(),
                    });
                }
                normalize(row)
            })
            .collect()
    }
}

impl EmbeddingProvider for RemoteEmbedding {
    fn dim(&self) -> usize {
        self.dim
    }

    fn frame_count(&self) -> usize {
        self.frame_count
    }

    fn fps(&self) -> f32 {
        self.fps
    }

    fn encode_frames(&self, frames: &[usize]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        if let Some(&t) = frames.iter().find(|&&t| t >= self.frame_count) {
            return Err(EmbeddingError::FrameOutOfRange {
                index: t,
                frames: self.frame_count,
            });
        }
        self.encode("frames", frames.iter().map(|&t| frame_ref(&self.video, t)).collect())
    }

    fn encode_text(&self, phrases: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        self.encode("text", phrases.to_vec())
    }
}

#[derive(Serialize)]
struct DetectRequest<'a> {
    window_id: usize,
    frame_payload_refs: Vec<String>,
    propositions: &'a [String],
}

#[derive(Deserialize)]
struct DetectResponse {
    confidences: Vec<f64>,
}

/// Detector service: `POST /detect {window_id, frame_payload_refs, propositions}
/// -> {confidences}`. The anchor frame reference comes first.
#[derive(Debug, Clone)]
pub struct RemoteDetector {
    client: Client,
    pub video: String,
    pub max_batch: usize,
}

impl RemoteDetector {
    pub fn new(client: Client, video: impl Into<String>, max_batch: usize) -> Self {
        Self {
            client,
            video: video.into(),
            max_batch,
        }
    }
}

impl DetectorBackend for RemoteDetector {
    fn max_batch(&self) -> usize {
        self.max_batch
    }

    fn evaluate_batch(&self, request: &WindowRequest, propositions: &[String]) -> Result<Vec<f64>, DetectionError> {
        let mut refs = vec![frame_ref(&self.video, request.anchor)];
        refs.extend(
            request
                .span
                .clone()
                .filter(|&t| t != request.anchor)
                .map(|t| frame_ref(&self.video, t)),
        );
        let body = DetectRequest {
            window_id: request.window,
            frame_payload_refs: refs,
            propositions,
        };
        let resp: DetectResponse = self
            .client
            .post("detect", &body)
            .map_err(|e| DetectionError::Backend(e.to_string()))?;
        if resp.confidences.len() != propositions.len() {
            return Err(DetectionError::Arity {
                expected: propositions.len(),
                got: resp.confidences.len(),
            });
        }
        Ok(resp.confidences)
    }
}

/// Translator service: `POST /translate {query} -> {spec}`.
#[derive(Debug, Clone)]
pub struct RemoteTranslator {
    client: Client,
}

impl RemoteTranslator {
    pub fn new(client: Client) -> Self {
        Self { client }
    }
}

#[derive(Serialize)]
struct TranslateRequest<'a> {
    query: &'a str,
}

#[derive(Deserialize)]
struct TranslateResponse {
    spec: String,
}

impl Translator for RemoteTranslator {
    fn translate(&self, query: &str) -> Result<String, String> {
        self.client
            .post::<_, TranslateResponse>("translate", &TranslateRequest { query })
            .map(|r| r.spec)
            .map_err(|e| e.to_string())
    }
}

/// Answerer service: `POST /answer {query, frames} -> {answer}`.
#[derive(Debug, Clone)]
pub struct RemoteAnswerer {
    client: Client,
    pub video: String,
}

impl RemoteAnswerer {
    pub fn new(client: Client, video: impl Into<String>) -> Self {
        Self {
            client,
            video: video.into(),
        }
    }
}

#[derive(Serialize)]
struct AnswerRequest<'a> {
    query: &'a str,
    frames: Vec<String>,
}

#[derive(Deserialize)]
struct AnswerResponse {
    answer: String,
}

impl Answerer for RemoteAnswerer {
    fn answer(&self, query: &str, frames: &[usize]) -> Result<Answer, String> {
        let body = AnswerRequest {
            query,
            frames: frames.iter().map(|&t| frame_ref(&self.video, t)).collect(),
        };
        self.client
            .post::<_, AnswerResponse>("answer", &body)
            .map(|r| Answer {
                text: r.answer,
                score: None,
            })
            .map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    type Handler = dyn Fn(&str, &serde_json::Value, Option<&str>) -> (u16, String) + Send + Sync;

    /// Minimal HTTP/1.1 server answering each request with `handler`.
    fn serve(handler: Arc<Handler>) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let handler = handler.clone();
                thread::spawn(move || {
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        return;
                    }
                    let path = line.split_whitespace().nth(1).unwrap_or("/").to_string();
                    let mut len = 0;
                    let mut auth = None;
                    loop {
                        let mut h = String::new();
                        reader.read_line(&mut h).unwrap();
                        let h = h.trim_end();
                        if h.is_empty() {
                            break;
                        }
                        let (k, v) = h.split_once(':').unwrap();
                        match k.to_ascii_lowercase().as_str() {
                            "content-length" => len = v.trim().parse().unwrap(),
                            "authorization" => auth = Some(v.trim().to_string()),
                            _ => {}
                        }
                    }
                    let mut body = vec![0; len];
                    reader.read_exact(&mut body).unwrap();
                    let json: serde_json::Value = serde_json::from_slice(&body).unwrap_or_default();
                    let (status, out) = handler(&path, &json, auth.as_deref());
                    let resp = format!(
                        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{out}",
                        out.len()
                    );
                    let _ = stream.write_all(resp.as_bytes());
                });
            }
        });
        format!("http://{addr}")
    }

    fn client(url: &str) -> Client {
        Client::new(RemoteConfig {
            backoff_ms: 1,
            token_env: "TLVQ_TEST_TOKEN_UNSET".into(),
            ..RemoteConfig::at(url)
        })
        .unwrap()
    }

    #[test]
    fn embedding_roundtrip_keeps_order() {
        let url = serve(Arc::new(|path, body, _| {
            assert_eq!(path, "/encode");
            let rows: Vec<Vec<f64>> = body["items"]
                .as_array()
                .unwrap()
                .iter()
                .map(|item| {
                    let raw = B64.decode(item.as_str().unwrap()).unwrap();
                    let n: f64 = String::from_utf8(raw).unwrap().rsplit('#').next().unwrap().parse().unwrap_or(0.0);
                    vec![1.0, n, 0.0]
                })
                .collect();
            (200, serde_json::json!({ "embeddings": rows }).to_string())
        }));
        let mut emb = RemoteEmbedding::new(client(&url), "v", 10, 1.0, 3);
        emb.chunk = 3;
        emb.in_flight = 2;
        let rows = emb.encode_frames(&(0..10).collect::<Vec<_>>()).unwrap();
        for (t, r) in rows.iter().enumerate() {
            let expect = normalize(&[1.0, t as f64, 0.0]).unwrap();
            assert_eq!(r, &expect);
        }
        assert!(emb.encode_frames(&[10]).is_err());
    }

    #[test]
    fn retries_server_errors_then_succeeds() {
        let hits = Arc::new(Mutex::new(0));
        let seen = hits.clone();
        let url = serve(Arc::new(move |_, body, _| {
            let mut n = seen.lock().unwrap();
            *n += 1;
            if *n < 3 {
                return (503, "{}".into());
            }
            let k = body["propositions"].as_array().unwrap().len();
            (200, serde_json::json!({ "confidences": vec![0.25; k] }).to_string())
        }));
        let det = RemoteDetector::new(client(&url), "v", 4);
        let req = WindowRequest {
            window: 2,
            span: 32..48,
            anchor: 40,
        };
        let out = det.evaluate_batch(&req, &["a".into(), "b".into()]).unwrap();
        assert_eq!(out, vec![0.25, 0.25]);
        assert_eq!(*hits.lock().unwrap(), 3);
    }

    #[test]
    fn gives_up_after_attempts_and_on_client_errors() {
        let url = serve(Arc::new(|path, _, _| {
            if path == "/translate" {
                (500, "{}".into())
            } else {
                (400, "{}".into())
            }
        }));
        let tr = RemoteTranslator::new(client(&url));
        let err = tr.translate("anything").unwrap_err();
        assert!(err.contains("3 attempts"), "{err}");
        let ans = RemoteAnswerer::new(client(&url), "v");
        assert!(ans.answer("q", &[1]).unwrap_err().contains("400"));
    }

    #[test]
    fn sends_bearer_token_and_parses_answers() {
        let url = serve(Arc::new(|path, body, auth| match path {
            "/translate" => {
                assert_eq!(auth, Some("Bearer sekrit"));
                (200, serde_json::json!({ "spec": format!("F {}", body["query"].as_str().unwrap()) }).to_string())
            }
            _ => (200, serde_json::json!({ "answer": body["frames"][0] }).to_string()),
        }));
        std::env::set_var("TLVQ_REMOTE_TEST_TOKEN", "sekrit");
        let c = Client::new(RemoteConfig {
            token_env: "TLVQ_REMOTE_TEST_TOKEN".into(),
            ..RemoteConfig::at(url.clone())
        })
        .unwrap();
        assert_eq!(RemoteTranslator::new(c).translate("dog").unwrap(), "F dog");
        let a = RemoteAnswerer::new(client(&url), "clip").answer("q", &[7]).unwrap();
        assert_eq!(a.text, "clip#7");
    }

    #[test]
    fn unconfigured_endpoint() {
        assert!(matches!(Client::new(RemoteConfig::default()), Err(RemoteError::Unconfigured)));
    }
}
