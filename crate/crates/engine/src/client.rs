use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use groundkit::metrics::fnv1a;
use groundkit::{BBox, Extent};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variable overriding the base URL of every remote capability.
pub const ENDPOINT_ENV: &str = "GROUNDKIT_ENDPOINT";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClientError {
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("server answered HTTP {code}: {body}")]
    Status { code: u16, body: String },
    #[error("remote error: {0}")]
    Remote(String),
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("no recorded response for request {0}")]
    NoFixture(String),
    #[error("expected a {expected} reply, got {got}")]
    WrongCapability {
        expected: Capability,
        got: Capability,
    },
    #[error("{0}")]
    Fixture(String),
}

impl ClientError {
    pub fn is_retryable(&self) -> bool {
        match self {
            ClientError::Timeout(_) | ClientError::Transport(_) | ClientError::Remote(_) => true,
            ClientError::Status { code, .. } => *code == 429 || *code >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    Caption,
    Ground,
    RegionCaption,
    VerifyRewrite,
}

impl Capability {
    pub const ALL: [Capability; 4] = [
        Capability::Caption,
        Capability::Ground,
        Capability::RegionCaption,
        Capability::VerifyRewrite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Capability::Caption => "caption",
            Capability::Ground => "ground",
            Capability::RegionCaption => "region_caption",
            Capability::VerifyRewrite => "verify_rewrite",
        }
    }

    pub fn path(self) -> String {
        format!("/{}", self.name())
    }

    /// Per-capability override, e.g. `GROUNDKIT_ENDPOINT_REGION_CAPTION`.
    pub fn env_var(self) -> String {
        format!("{ENDPOINT_ENV}_{}", self.name().to_uppercase())
    }
}

impl std::fmt::Display for Capability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    pub uri: String,
    pub width: f64,
    pub height: f64,
}

impl ImageRef {
    pub fn extent(&self) -> Option<Extent> {
        Extent::new(self.width, self.height).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "capability", content = "payload", rename_all = "snake_case")]
pub enum StageRequest {
    Caption {
        image: ImageRef,
        prompt: String,
    },
    Ground {
        image: ImageRef,
        phrases: Vec<String>,
    },
    RegionCaption {
        image: ImageRef,
        #[serde(rename = "box")]
        bbox: BBox,
        phrase: String,
        prompt: String,
    },
    VerifyRewrite {
        caption: String,
        phrase: String,
        prompt: String,
    },
}

impl StageRequest {
    pub fn capability(&self) -> Capability {
        match self {
            StageRequest::Caption { .. } => Capability::Caption,
            StageRequest::Ground { .. } => Capability::Ground,
            StageRequest::RegionCaption { .. } => Capability::RegionCaption,
            StageRequest::VerifyRewrite { .. } => Capability::VerifyRewrite,
        }
    }

    /// Canonical JSON, used as the replay lookup key.
    pub fn key(&self) -> String {
        serde_json::to_string(self).expect("requests always serialize")
    }
}

/// One grounded box; `phrase` indexes the request's phrase list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedBox {
    pub phrase: usize,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Accept { referring: String },
    Reject { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "capability", content = "payload", rename_all = "snake_case")]
pub enum StageReply {
    Caption { caption: String },
    Ground { boxes: Vec<GroundedBox> },
    RegionCaption { caption: String },
    VerifyRewrite(Verdict),
}

impl StageReply {
    pub fn capability(&self) -> Capability {
        match self {
            StageReply::Caption { .. } => Capability::Caption,
            StageReply::Ground { .. } => Capability::Ground,
            StageReply::RegionCaption { .. } => Capability::RegionCaption,
            StageReply::VerifyRewrite(_) => Capability::VerifyRewrite,
        }
    }
}

/// Checks that a reply answers the capability that was asked.
pub fn expect_capability(reply: &StageReply, expected: Capability) -> Result<(), ClientError> {
    let got = reply.capability();
    if got == expected {
        Ok(())
    } else {
        Err(ClientError::WrongCapability { expected, got })
    }
}

pub trait StageClient: Send + Sync {
    fn call(&self, request: &StageRequest) -> Result<StageReply, ClientError>;
}

impl<F> StageClient for F
where
    F: Fn(&StageRequest) -> Result<StageReply, ClientError> + Send + Sync,
{
    fn call(&self, request: &StageRequest) -> Result<StageReply, ClientError> {
        self(request)
    }
}

impl<C: StageClient + ?Sized> StageClient for Arc<C> {
    fn call(&self, request: &StageRequest) -> Result<StageReply, ClientError> {
        (**self).call(request)
    }
}

fn hash_parts(parts: &[&str]) -> u64 {
    fnv1a(parts.join("\u{1f}").as_bytes())
}

const MOCK_CAPTIONS: &[&str] = &[
    "A soldier in a military-style uniform stands beside a green army truck in the background.",
    "Two children play with a red kite on a sandy beach under a clear blue sky.",
    "A man holding a bright red umbrella walks past a small coffee shop.",
    "A brown dog sleeps on a wooden bench next to a bicycle.",
    "The image shows a kitchen counter with a silver kettle and three ceramic mugs.",
    "A woman in a yellow raincoat waits at a bus stop near a tall street lamp.",
];

const MOCK_DETAILS: &[&str] = &[
    "with a clearly visible outline",
    "seen from a slight angle",
    "partly lit by soft daylight",
    "standing out against its surroundings",
    "placed close to the camera",
];

/// Tails indexed by word count minus one.
const MOCK_TAILS: &[&str] = &[
    "here",
    "in view",
    "seen up close",
    "near the frame edge",
    "in the lower left corner",
    "standing near the edge of frame",
    "shown clearly near the edge of frame",
];

/// Deterministic stand-in for every capability. Outputs depend only on
/// the request, and a small share of them are deliberately malformed so
/// that validation paths get exercised.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockClient;

impl MockClient {
    fn ground(image: &ImageRef, phrases: &[String]) -> Vec<GroundedBox> {
        let mut out = Vec::new();
        for (i, phrase) in phrases.iter().enumerate() {
            let h = hash_parts(&[&image.id, phrase]);
            let count = [1, 1, 2, 0][(h % 4) as usize];
            for j in 0..count {
                let g = hash_parts(&[&image.id, phrase, &j.to_string()]);
                let unit = |shift: u32| ((g >> shift) % 1000) as f64 / 1000.0;
                let w = image.width * (0.1 + 0.4 * unit(0));
                let h = image.height * (0.1 + 0.4 * unit(10));
                let x = (image.width - w) * unit(20);
                let y = (image.height - h) * unit(30);
                let score = (15 + (g >> 40) % 85) as f64 / 100.0;
                if let Ok(bbox) = BBox::new(x.round(), y.round(), (x + w).round(), (y + h).round())
                {
                    out.push(GroundedBox {
                        phrase: i,
                        bbox,
                        score,
                    });
                }
            }
        }
        out
    }

    fn region_caption(image: &ImageRef, bbox: &BBox, phrase: &str) -> String {
        let h = hash_parts(&[&image.id, phrase, &format!("{:?}", bbox.to_array())]);
        let detail = MOCK_DETAILS[(h % MOCK_DETAILS.len() as u64) as usize];
        let mut text = format!("The {phrase} {detail}.");
        if h.is_multiple_of(7) {
            text.push_str(" It is partly hidden.");
        }
        text
    }

    fn verify(caption: &str, phrase: &str) -> Verdict {
        let h = hash_parts(&[caption, phrase]);
        if h.is_multiple_of(6) {
            return Verdict::Reject {
                reason: "description does not match the phrase".into(),
            };
        }
        let target = 6 + (h / 6 % 4) as usize;
        let mut words: Vec<String> = std::iter::once("the".to_string())
            .chain(phrase.split_whitespace().map(str::to_lowercase))
            .collect();
        if h.is_multiple_of(11) {
            if let Some(last) = words.last_mut() {
                last.push(',');
            }
        }
        if words.len() < target {
            let tail = MOCK_TAILS[(target - words.len()).min(MOCK_TAILS.len()) - 1];
            words.extend(tail.split_whitespace().map(String::from));
        }
        Verdict::Accept {
            referring: words.join(" "),
        }
    }
}

impl StageClient for MockClient {
    fn call(&self, request: &StageRequest) -> Result<StageReply, ClientError> {
        Ok(match request {
            StageRequest::Caption { image, .. } => {
                let h = hash_parts(&[&image.id, &image.uri]);
                StageReply::Caption {
                    caption: MOCK_CAPTIONS[(h % MOCK_CAPTIONS.len() as u64) as usize].into(),
                }
            }
            StageRequest::Ground { image, phrases } => StageReply::Ground {
                boxes: Self::ground(image, phrases),
            },
            StageRequest::RegionCaption {
                image,
                bbox,
                phrase,
                ..
            } => StageReply::RegionCaption {
                caption: Self::region_caption(image, bbox, phrase),
            },
            StageRequest::VerifyRewrite {
                caption, phrase, ..
            } => StageReply::VerifyRewrite(Self::verify(caption, phrase)),
        })
    }
}

/// One request/reply pair of a fixture file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub request: StageRequest,
    pub reply: StageReply,
}

/// Answers from recorded exchanges, keyed by the exact request.
#[derive(Debug, Clone, Default)]
pub struct ReplayClient {
    replies: HashMap<String, StageReply>,
}

impl ReplayClient {
    pub fn new(exchanges: impl IntoIterator<Item = Exchange>) -> Self {
        let replies = exchanges
            .into_iter()
            .map(|e| (e.request.key(), e.reply))
            .collect();
        ReplayClient { replies }
    }

    pub fn from_jsonl(text: &str) -> Result<Self, ClientError> {
        let mut exchanges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let e: Exchange = serde_json::from_str(line)
                .map_err(|e| ClientError::Fixture(format!("fixture line {}: {e}", i + 1)))?;
            exchanges.push(e);
        }
        Ok(Self::new(exchanges))
    }

    pub fn load(path: &Path) -> Result<Self, ClientError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ClientError::Fixture(format!("{}: {e}", path.display())))?;
        Self::from_jsonl(&text)
    }

    pub fn len(&self) -> usize {
        self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replies.is_empty()
    }
}

impl StageClient for ReplayClient {
    fn call(&self, request: &StageRequest) -> Result<StageReply, ClientError> {
        let key = request.key();
        self.replies
            .get(&key)
            .cloned()
            .ok_or(ClientError::NoFixture(key))
    }
}

/// Passes calls through and keeps every successful exchange.
pub struct RecordingClient<C> {
    inner: C,
    log: Mutex<Vec<Exchange>>,
}

impl<C: StageClient> RecordingClient<C> {
    pub fn new(inner: C) -> Self {
        RecordingClient {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    /// Recorded exchanges sorted by request key, so concurrent runs give
    /// the same file.
    pub fn exchanges(&self) -> Vec<Exchange> {
        let mut log = self.log.lock().unwrap().clone();
        log.sort_by_cached_key(|e| e.request.key());
        log.dedup_by(|a, b| a.request == b.request);
        log
    }

    pub fn to_jsonl(&self) -> String {
        self.exchanges()
            .iter()
            .map(|e| serde_json::to_string(e).expect("exchanges serialize") + "\n")
            .collect()
    }
}

impl<C: StageClient> StageClient for RecordingClient<C> {
    fn call(&self, request: &StageRequest) -> Result<StageReply, ClientError> {
        let reply = self.inner.call(request)?;
        self.log.lock().unwrap().push(Exchange {
            request: request.clone(),
            reply: reply.clone(),
        });
        Ok(reply)
    }
}

/// Retries retryable failures up to `retries` extra times.
pub struct RetryClient<C> {
    inner: C,
    retries: u32,
    backoff: Duration,
}

impl<C: StageClient> RetryClient<C> {
    pub fn new(inner: C, retries: u32, backoff: Duration) -> Self {
        RetryClient {
            inner,
            retries,
            backoff,
        }
    }
}

impl<C: StageClient> StageClient for RetryClient<C> {
    fn call(&self, request: &StageRequest) -> Result<StageReply, ClientError> {
        let mut attempt = 0;
        loop {
            match self.inner.call(request) {
                Err(e) if e.is_retryable() && attempt < self.retries => {
                    attempt += 1;
                    if !self.backoff.is_zero() {
                        std::thread::sleep(self.backoff * attempt);
                    }
                }
                other => return other,
            }
        }
    }
}

/// Response envelope of the remote protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl WireResponse {
    pub fn ok(reply: &StageReply) -> Self {
        let mut v = serde_json::to_value(reply).expect("replies serialize");
        WireResponse {
            status: "ok".into(),
            payload: v.get_mut("payload").map(serde_json::Value::take),
            message: None,
        }
    }

    pub fn into_reply(self, capability: Capability) -> Result<StageReply, ClientError> {
        if self.status != "ok" {
            return Err(ClientError::Remote(
                self.message.unwrap_or_else(|| self.status.clone()),
            ));
        }
        let payload = self
            .payload
            .ok_or_else(|| ClientError::Protocol("missing payload".into()))?;
        let v = serde_json::json!({ "capability": capability, "payload": payload });
        serde_json::from_value(v).map_err(|e| ClientError::Protocol(e.to_string()))
    }
}

/// Posts each request as JSON to `<base>/<capability>`.
pub struct HttpClient {
    agent: ureq::Agent,
    bases: HashMap<Capability, String>,
}

impl HttpClient {
    pub fn new(base: &str, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let base = base.trim_end_matches('/').to_string();
        let bases = Capability::ALL.iter().map(|c| (*c, base.clone())).collect();
        HttpClient { agent, bases }
    }

    /// Reads the shared and per-capability endpoint variables, falling back
    /// to `default_base`.
    pub fn from_env(default_base: Option<&str>, timeout: Duration) -> Result<Self, ClientError> {
        let shared = std::env::var(ENDPOINT_ENV).ok();
        let base = shared.as_deref().or(default_base);
        let mut client = Self::new(base.unwrap_or(""), timeout);
        for cap in Capability::ALL {
            if let Ok(v) = std::env::var(cap.env_var()) {
                client
                    .bases
                    .insert(cap, v.trim_end_matches('/').to_string());
            }
            if client.bases[&cap].is_empty() {
                return Err(ClientError::Transport(format!(
                    "no endpoint for {cap}; set {ENDPOINT_ENV} or {}",
                    cap.env_var()
                )));
            }
        }
        Ok(client)
    }

    pub fn url(&self, capability: Capability) -> String {
        format!("{}{}", self.bases[&capability], capability.path())
    }
}

impl StageClient for HttpClient {
    fn call(&self, request: &StageRequest) -> Result<StageReply, ClientError> {
        let cap = request.capability();
        let mut resp = self
            .agent
            .post(&self.url(cap))
            .send_json(request)
            .map_err(|e| match e {
                ureq::Error::Timeout(t) => ClientError::Timeout(t.to_string()),
                other => ClientError::Transport(other.to_string()),
            })?;
        let code = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        if !(200..300).contains(&code) {
            return Err(ClientError::Status { code, body });
        }
        let wire: WireResponse =
            serde_json::from_str(&body).map_err(|e| ClientError::Protocol(e.to_string()))?;
        wire.into_reply(cap)
    }
}
