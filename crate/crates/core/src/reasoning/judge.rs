//! Judge clients: the remote vision-language endpoint plus deterministic
//! stand-ins (oracle, closure, transcript replay) sharing one interface.

use std::collections::HashMap;
use std::fs;
use std::io::Cursor;
use std::path::Path;
use std::sync::Mutex;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Prompt;
use crate::remote::{Endpoint, JsonClient};
use crate::{Error, Result};

pub trait JudgeClient: Send + Sync {
    fn identity(&self) -> String;

    /// Whether several prompts may be in flight at once.
    fn supports_concurrency(&self) -> bool {
        true
    }

    /// Raw response text for `prompt`.
    fn complete(&self, prompt: &Prompt<'_>) -> Result<String>;
}

impl<J: JudgeClient + ?Sized> JudgeClient for std::sync::Arc<J> {
    fn identity(&self) -> String {
        (**self).identity()
    }

    fn supports_concurrency(&self) -> bool {
        (**self).supports_concurrency()
    }

    fn complete(&self, prompt: &Prompt<'_>) -> Result<String> {
        (**self).complete(prompt)
    }
}

fn judge_error(identity: String, message: impl Into<String>) -> Error {
    Error::Service {
        service: "judge",
        identity,
        message: message.into(),
    }
}

/// Knows the answer: picks the candidate whose instance id is `target`,
/// declines when the target is absent from the batch.
#[derive(Debug, Clone, Copy)]
pub struct OracleJudge {
    pub target: Option<u32>,
}

impl OracleJudge {
    pub fn new(target: u32) -> Self {
        Self {
            target: Some(target),
        }
    }

    /// Declines every batch.
    pub fn declining() -> Self {
        Self { target: None }
    }
}

impl JudgeClient for OracleJudge {
    fn identity(&self) -> String {
        match self.target {
            Some(t) => format!("oracle(target={t})"),
            None => "oracle(declining)".into(),
        }
    }

    fn complete(&self, prompt: &Prompt<'_>) -> Result<String> {
        let pos = self
            .target
            .and_then(|t| prompt.candidates.iter().position(|&c| c == t));
        Ok(match pos {
            Some(i) => format!("{{\"choice\": {}}}", i + 1),
            None => "{\"choice\": null}".to_string(),
        })
    }
}

/// Judge backed by a closure; handy for scripted behaviour in tests.
pub struct FnJudge<F> {
    name: String,
    f: F,
}

impl<F> FnJudge<F>
where
    F: Fn(&Prompt<'_>) -> Result<String> + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self {
            name: name.into(),
            f,
        }
    }
}

impl<F> JudgeClient for FnJudge<F>
where
    F: Fn(&Prompt<'_>) -> Result<String> + Send + Sync,
{
    fn identity(&self) -> String {
        self.name.clone()
    }

    fn complete(&self, prompt: &Prompt<'_>) -> Result<String> {
        (self.f)(prompt)
    }
}

/// SHA-256 over the prompt text and each image's dimensions and raw pixels.
pub fn prompt_digest(prompt: &Prompt<'_>) -> String {
    let mut h = Sha256::new();
    h.update((prompt.text.len() as u64).to_le_bytes());
    h.update(prompt.text.as_bytes());
    for img in &prompt.images {
        h.update(img.width().to_le_bytes());
        h.update(img.height().to_le_bytes());
        h.update(img.as_raw());
    }
    hex::encode(h.finalize())
}

/// Ordered `digest -> response` records.
///
/// Stored one per line as `<hex digest>\t<JSON string of the response>`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    pub records: Vec<(String, String)>,
}

impl Transcript {
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(n, l)| {
                let (digest, response) = l
                    .split_once('\t')
                    .ok_or_else(|| format!("line {}: missing tab separator", n + 1))?;
                let response: String =
                    serde_json::from_str(response).map_err(|e| format!("line {}: {e}", n + 1))?;
                Ok((digest.to_string(), response))
            })
            .collect::<std::result::Result<_, String>>()?;
        Ok(Self { records })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::bundle(path, "transcript", e))
    }

    pub fn to_text(&self) -> String {
        self.records
            .iter()
            .map(|(d, r)| format!("{d}\t{}\n", serde_json::to_string(r).expect("string")))
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Replays a recorded transcript. A prompt whose digest appears more than
/// once is answered with its first record.
#[derive(Debug)]
pub struct ReplayJudge {
    source: String,
    responses: HashMap<String, String>,
}

impl ReplayJudge {
    pub fn new(source: impl Into<String>, transcript: &Transcript) -> Self {
        let mut responses = HashMap::new();
        for (d, r) in &transcript.records {
            responses.entry(d.clone()).or_insert_with(|| r.clone());
        }
        Self {
            source: source.into(),
            responses,
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Ok(Self::new(
            path.display().to_string(),
            &Transcript::load(path)?,
        ))
    }
}

impl JudgeClient for ReplayJudge {
    fn identity(&self) -> String {
        format!("replay({})", self.source)
    }

    fn complete(&self, prompt: &Prompt<'_>) -> Result<String> {
        let digest = prompt_digest(prompt);
        self.responses.get(&digest).cloned().ok_or_else(|| {
            judge_error(
                self.identity(),
                format!("no recorded response for prompt {digest}"),
            )
        })
    }
}

/// Passes prompts through to `inner` and records every successful response.
pub struct RecordingJudge<J> {
    inner: J,
    transcript: std::sync::Arc<Mutex<Transcript>>,
}

impl<J: JudgeClient> RecordingJudge<J> {
    pub fn new(inner: J, transcript: std::sync::Arc<Mutex<Transcript>>) -> Self {
        Self { inner, transcript }
    }
}

impl<J: JudgeClient> JudgeClient for RecordingJudge<J> {
    fn identity(&self) -> String {
        format!("recording({})", self.inner.identity())
    }

    fn supports_concurrency(&self) -> bool {
        self.inner.supports_concurrency()
    }

    fn complete(&self, prompt: &Prompt<'_>) -> Result<String> {
        let response = self.inner.complete(prompt)?;
        self.transcript
            .lock()
            .unwrap()
            .records
            .push((prompt_digest(prompt), response.clone()));
        Ok(response)
    }
}

#[derive(Serialize)]
struct JudgeRequest<'a> {
    prompt: &'a str,
    images: Vec<String>,
    max_answer_tokens: u32,
}

#[derive(Deserialize)]
struct JudgeResponse {
    text: String,
}

/// `POST {"prompt", "images": [base64 PNG], "max_answer_tokens"}` returning `{"text"}`.
#[derive(Debug)]
pub struct RemoteJudge {
    client: JsonClient,
    pub max_answer_tokens: u32,
    pub concurrent: bool,
}

impl RemoteJudge {
    pub fn new(endpoint: Endpoint) -> Self {
        Self {
            client: JsonClient::new(endpoint),
            max_answer_tokens: 256,
            concurrent: true,
        }
    }
}

pub fn encode_png(image: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    image.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

impl JudgeClient for RemoteJudge {
    fn identity(&self) -> String {
        format!("remote({})", self.client.url())
    }

    fn supports_concurrency(&self) -> bool {
        self.concurrent
    }

    fn complete(&self, prompt: &Prompt<'_>) -> Result<String> {
        let images = prompt
            .images
            .iter()
            .map(|img| encode_png(img).map(|png| BASE64.encode(png)))
            .collect::<Result<Vec<_>>>()?;
        let resp: JudgeResponse = self
            .client
            .post(&JudgeRequest {
                prompt: &prompt.text,
                images,
                max_answer_tokens: self.max_answer_tokens,
            })
            .map_err(|e| judge_error(self.identity(), e))?;
        Ok(resp.text)
    }
}
