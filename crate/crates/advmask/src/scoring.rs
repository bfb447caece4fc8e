//! Clients for remote face verification services.
//!
//! A [`ScoreTransport`] submits two JPEG-encoded faces and returns either a
//! confidence score on the service's 0–100 scale or a face-not-detected
//! outcome (services routinely fail to find a face once a mask covers it;
//! those probes are excluded from mean-confidence summaries but counted).
//! [`ScoringClient`] wraps a transport with bounded retries, exponential
//! backoff, and a minimum spacing between requests derived from the
//! backend's rate limit. Time is injected through small traits so the retry
//! and pacing logic is testable without sleeping.
//!
//! Two transports ship: [`MockBackend`] scores with a local embedding model
//! (hermetic, used by tests and offline runs), and — behind the `http`
//! feature — [`RestBackend`] speaks a minimal multipart protocol:
//! `POST endpoint` with JPEG parts `image_a`/`image_b`, answered by
//! `{"confidence": <0-100>}`, or `{"error": "face-not-detected"}` when
//! detection fails. HTTP 429 and 5xx are retried; other failures are fatal.
//! Credentials are sent as headers and are resolved from environment
//! variables named in the backend config — secrets never live in files.
//!
//! Images travel as JPEG at quality [`JPEG_QUALITY`].

use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canvas::{CanvasError, FaceImage};
use crate::models::ModelHandle;

/// JPEG quality used for every payload sent to a scoring service.
pub const JPEG_QUALITY: u8 = 95;

/// Attempts per request (first try plus retries).
pub const MAX_ATTEMPTS: u32 = 3;

/// First backoff delay; doubles per retry.
pub const BACKOFF_BASE: Duration = Duration::from_millis(100);

#[derive(Error, Debug)]
pub enum ScoringError {
    #[error("backend {backend}: giving up after {attempts} attempt(s): {message}")]
    TransportFailed {
        backend: String,
        attempts: u32,
        message: String,
    },
    #[error("backend {backend} returned confidence {value} outside [0, 100]")]
    BadConfidence { backend: String, value: f64 },
    #[error("credential environment variable {0} is not set")]
    MissingCredential(String),
    #[error("invalid backend config {path}: {message}")]
    Config { path: String, message: String },
    #[error("backend kind {0:?} is not supported in this build")]
    UnsupportedKind(String),
    #[error("no scored outcomes to summarize")]
    NoScoredOutcomes,
    #[error(transparent)]
    Canvas(#[from] CanvasError),
}

/// A confidence score from a verification service, 0–100.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerificationScore {
    pub confidence: f64,
}

/// Result of one verification call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum VerifyOutcome {
    Scored(VerificationScore),
    /// The service found no face in at least one image.
    FaceNotDetected,
}

/// Transport-level failure, tagged with whether retrying can help.
#[derive(Debug, Clone)]
pub struct TransportError {
    pub message: String,
    pub retryable: bool,
}

impl TransportError {
    pub fn retryable(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            retryable: true,
        }
    }

    pub fn fatal(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            retryable: false,
        }
    }
}

/// Something that can verify two JPEG-encoded face images.
pub trait ScoreTransport: Send + Sync {
    fn id(&self) -> &str;
    fn verify(&self, image_a: &[u8], image_b: &[u8]) -> Result<VerifyOutcome, TransportError>;
}

/// Injectable sleep, so tests can observe delays instead of waiting them out.
pub trait Sleeper: Send + Sync {
    fn sleep(&self, duration: Duration);
}

/// Injectable monotonic time source.
pub trait Clock: Send + Sync {
    fn monotonic(&self) -> Duration;
}

/// Real wall-clock implementations of [`Sleeper`] and [`Clock`].
pub struct SystemTime {
    start: std::time::Instant,
}

impl Default for SystemTime {
    fn default() -> Self {
        Self {
            start: std::time::Instant::now(),
        }
    }
}

impl Sleeper for SystemTime {
    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

impl Clock for SystemTime {
    fn monotonic(&self) -> Duration {
        self.start.elapsed()
    }
}

/// Retry, backoff, and request pacing around a [`ScoreTransport`].
pub struct ScoringClient {
    transport: Arc<dyn ScoreTransport>,
    sleeper: Arc<dyn Sleeper>,
    clock: Arc<dyn Clock>,
    /// Minimum spacing between request starts (`1 / rate_limit`).
    min_interval: Duration,
    last_request: Mutex<Option<Duration>>,
    max_attempts: u32,
    backoff_base: Duration,
}

impl ScoringClient {
    /// Production client: real time, `rate_limit_per_sec` requests per second.
    pub fn new(transport: Arc<dyn ScoreTransport>, rate_limit_per_sec: f64) -> Self {
        let time = Arc::new(SystemTime::default());
        Self::with_timing(transport, rate_limit_per_sec, time.clone(), time)
    }

    /// Client with injected time, for tests.
    pub fn with_timing(
        transport: Arc<dyn ScoreTransport>,
        rate_limit_per_sec: f64,
        sleeper: Arc<dyn Sleeper>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        let min_interval = if rate_limit_per_sec > 0.0 {
            Duration::from_secs_f64(1.0 / rate_limit_per_sec)
        } else {
            Duration::ZERO
        };
        Self {
            transport,
            sleeper,
            clock,
            min_interval,
            last_request: Mutex::new(None),
            max_attempts: MAX_ATTEMPTS,
            backoff_base: BACKOFF_BASE,
        }
    }

    pub fn backend_id(&self) -> &str {
        self.transport.id()
    }

    /// Blocks (via the injected sleeper) until a request slot is available.
    fn pace(&self) {
        let mut last = self.last_request.lock().expect("pacing lock");
        let now = self.clock.monotonic();
        if let Some(prev) = *last {
            let due = prev + self.min_interval;
            if now < due {
                self.sleeper.sleep(due - now);
            }
        }
        *last = Some(self.clock.monotonic());
    }

    /// Verifies two JPEG payloads with retry and pacing.
    pub fn verify_jpeg(
        &self,
        image_a: &[u8],
        image_b: &[u8],
    ) -> Result<VerifyOutcome, ScoringError> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.pace();
            match self.transport.verify(image_a, image_b) {
                Ok(VerifyOutcome::Scored(score)) => {
                    if !(0.0..=100.0).contains(&score.confidence) {
                        return Err(ScoringError::BadConfidence {
                            backend: self.transport.id().to_string(),
                            value: score.confidence,
                        });
                    }
                    return Ok(VerifyOutcome::Scored(score));
                }
                Ok(outcome) => return Ok(outcome),
                Err(err) if err.retryable && attempt < self.max_attempts => {
                    // 100ms, 200ms, ... doubling per retry
                    let backoff = self.backoff_base * 2u32.pow(attempt - 1);
                    self.sleeper.sleep(backoff);
                }
                Err(err) => {
                    return Err(ScoringError::TransportFailed {
                        backend: self.transport.id().to_string(),
                        attempts: attempt,
                        message: err.message,
                    });
                }
            }
        }
    }

    /// Encodes both images at the wire quality and verifies them.
    pub fn verify_images(
        &self,
        image_a: &FaceImage,
        image_b: &FaceImage,
    ) -> Result<VerifyOutcome, ScoringError> {
        let a = image_a.to_jpeg_bytes(JPEG_QUALITY)?;
        let b = image_b.to_jpeg_bytes(JPEG_QUALITY)?;
        self.verify_jpeg(&a, &b)
    }
}

/// Aggregate of verification outcomes: mean confidence over scored probes,
/// plus how many probes the service refused to score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McsSummary {
    pub mcs: f64,
    pub scored: usize,
    pub not_detected: usize,
}

/// Summarizes outcomes; errors if nothing was scored.
pub fn summarize_outcomes(outcomes: &[VerifyOutcome]) -> Result<McsSummary, ScoringError> {
    let mut sum = 0.0;
    let mut scored = 0usize;
    let mut not_detected = 0usize;
    for outcome in outcomes {
        match outcome {
            VerifyOutcome::Scored(s) => {
                sum += s.confidence;
                scored += 1;
            }
            VerifyOutcome::FaceNotDetected => not_detected += 1,
        }
    }
    if scored == 0 {
        return Err(ScoringError::NoScoredOutcomes);
    }
    Ok(McsSummary {
        mcs: sum / scored as f64,
        scored,
        not_detected,
    })
}

/// Hermetic stand-in for a verification service: scores with a local
/// embedding model. Confidence is `50 * (cos + 1)`, mapping cosine -1..1
/// onto 0..100. A probe whose pixels are nearly constant is treated as
/// having no detectable face.
pub struct MockBackend {
    id: String,
    model: ModelHandle,
}

impl MockBackend {
    pub fn new(id: impl Into<String>, model: ModelHandle) -> Self {
        Self {
            id: id.into(),
            model,
        }
    }

    fn decode(bytes: &[u8]) -> Result<FaceImage, TransportError> {
        let img = image::load_from_memory(bytes)
            .map_err(|e| TransportError::fatal(format!("bad image payload: {e}")))?;
        Ok(FaceImage::from_dynamic(&img))
    }

    fn has_face(image: &FaceImage) -> bool {
        // variance of the luma plane; a blank frame has none
        let n = (image.width() * image.height()) as f64;
        let (mut sum, mut sum2) = (0.0, 0.0);
        for y in 0..image.height() {
            for x in 0..image.width() {
                let l = (image.get(x, y, 0) + image.get(x, y, 1) + image.get(x, y, 2)) / 3.0;
                sum += l;
                sum2 += l * l;
            }
        }
        let var = (sum2 / n - (sum / n).powi(2)).max(0.0);
        var > 1e-4
    }
}

impl ScoreTransport for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn verify(&self, image_a: &[u8], image_b: &[u8]) -> Result<VerifyOutcome, TransportError> {
        let a = Self::decode(image_a)?;
        let b = Self::decode(image_b)?;
        if !Self::has_face(&a) || !Self::has_face(&b) {
            return Ok(VerifyOutcome::FaceNotDetected);
        }
        let cos = self
            .model
            .embed(&a)
            .cosine(&self.model.embed(&b))
            .map_err(|e| TransportError::fatal(e.to_string()))?;
        Ok(VerifyOutcome::Scored(VerificationScore {
            confidence: (50.0 * (cos + 1.0)).clamp(0.0, 100.0),
        }))
    }
}

/// One credential: the header it travels in and the environment variable
/// holding its value.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct CredentialSpec {
    pub header: String,
    pub env: String,
}

/// Declarative description of a scoring backend. Secrets are referenced by
/// environment variable name only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendConfig {
    pub id: String,
    /// `"mock"` or `"rest"`.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub credentials: Vec<CredentialSpec>,
    #[serde(default = "default_rate_limit")]
    pub rate_limit_per_sec: f64,
    /// For `mock`: name of the registry model that scores probes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

fn default_rate_limit() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BackendsFile {
    #[serde(default)]
    pub backends: Vec<BackendConfig>,
}

/// Loads backend definitions from TOML or JSON (by extension).
pub fn load_backends(path: &std::path::Path) -> Result<Vec<BackendConfig>, ScoringError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScoringError::Config {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let file: BackendsFile = if is_json {
        serde_json::from_str(&text).map_err(|e| ScoringError::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })?
    } else {
        toml::from_str(&text).map_err(|e| ScoringError::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })?
    };
    Ok(file.backends)
}

/// Resolves each credential to `(header, value)` from the environment.
pub fn resolve_credentials(
    specs: &[CredentialSpec],
) -> Result<Vec<(String, String)>, ScoringError> {
    specs
        .iter()
        .map(|c| {
            std::env::var(&c.env)
                .map(|v| (c.header.clone(), v))
                .map_err(|_| ScoringError::MissingCredential(c.env.clone()))
        })
        .collect()
}

#[cfg(feature = "http")]
pub use rest::RestBackend;

#[cfg(feature = "http")]
mod rest {
    use super::*;

    /// Minimal REST transport: multipart POST of two JPEGs, JSON response.
    pub struct RestBackend {
        id: String,
        endpoint: String,
        headers: Vec<(String, String)>,
        client: reqwest::blocking::Client,
    }

    #[derive(Deserialize)]
    struct WireResponse {
        #[serde(default)]
        confidence: Option<f64>,
        #[serde(default)]
        error: Option<String>,
    }

    impl RestBackend {
        /// Builds a backend from config, resolving credentials from the
        /// environment.
        pub fn from_config(config: &BackendConfig) -> Result<Self, ScoringError> {
            let endpoint = config
                .endpoint
                .clone()
                .ok_or_else(|| ScoringError::Config {
                    path: config.id.clone(),
                    message: "rest backend needs an endpoint".into(),
                })?;
            let headers = resolve_credentials(&config.credentials)?;
            let client = reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(30))
                .build()
                .map_err(|e| ScoringError::Config {
                    path: config.id.clone(),
                    message: e.to_string(),
                })?;
            Ok(Self {
                id: config.id.clone(),
                endpoint,
                headers,
                client,
            })
        }
    }

    impl ScoreTransport for RestBackend {
        fn id(&self) -> &str {
            &self.id
        }

        fn verify(
            &self,
            image_a: &[u8],
            image_b: &[u8],
        ) -> Result<VerifyOutcome, TransportError> {
            use reqwest::blocking::multipart::{Form, Part};
            let part = |bytes: &[u8], name: &str| {
                Part::bytes(bytes.to_vec())
                    .file_name(format!("{name}.jpg"))
                    .mime_str("image/jpeg")
                    .expect("static mime type is valid")
            };
            let form = Form::new()
                .part("image_a", part(image_a, "a"))
                .part("image_b", part(image_b, "b"));
            let mut request = self.client.post(&self.endpoint).multipart(form);
            for (header, value) in &self.headers {
                request = request.header(header, value);
            }
            let response = request
                .send()
                .map_err(|e| TransportError::retryable(format!("request failed: {e}")))?;
            let status = response.status();
            if status.as_u16() == 429 || status.is_server_error() {
                return Err(TransportError::retryable(format!("status {status}")));
            }
            let body: WireResponse = response
                .json()
                .map_err(|e| TransportError::fatal(format!("bad response body: {e}")))?;
            if !status.is_success() {
                let msg = body.error.unwrap_or_else(|| format!("status {status}"));
                if msg == "face-not-detected" {
                    return Ok(VerifyOutcome::FaceNotDetected);
                }
                return Err(TransportError::fatal(msg));
            }
            if let Some(err) = body.error {
                if err == "face-not-detected" {
                    return Ok(VerifyOutcome::FaceNotDetected);
                }
                return Err(TransportError::fatal(err));
            }
            match body.confidence {
                Some(confidence) => Ok(VerifyOutcome::Scored(VerificationScore { confidence })),
                None => Err(TransportError::fatal("response carried no confidence")),
            }
        }
    }
}
