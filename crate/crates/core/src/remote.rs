//! Blocking JSON-over-HTTP plumbing shared by the remote embedding provider,
//! query parser and judge.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, Clone)]
pub struct Endpoint {
    pub url: String,
    /// Sent as `Authorization: Bearer <token>` when present.
    pub token: Option<String>,
    pub timeout: Duration,
}

impl Endpoint {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            token: None,
            timeout: Duration::from_secs(120),
        }
    }

    /// Reads the bearer token from `var`, if set.
    pub fn with_token_from_env(mut self, var: &str) -> Self {
        self.token = std::env::var(var).ok().filter(|t| !t.is_empty());
        self
    }
}

#[derive(Debug)]
pub(crate) struct JsonClient {
    endpoint: Endpoint,
    http: reqwest::blocking::Client,
}

impl JsonClient {
    pub fn new(endpoint: Endpoint) -> Self {
        let http = reqwest::blocking::Client::builder()
            .timeout(endpoint.timeout)
            .build()
            .expect("http client");
        Self { endpoint, http }
    }

    pub fn url(&self) -> &str {
        &self.endpoint.url
    }

    pub fn post<B: Serialize, R: DeserializeOwned>(&self, body: &B) -> Result<R, String> {
        let mut req = self.http.post(&self.endpoint.url).json(body);
        if let Some(token) = &self.endpoint.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| format!("transport: {e}"))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(format!(
                "http {status}: {}",
                text.chars().take(200).collect::<String>()
            ));
        }
        resp.json::<R>()
            .map_err(|e| format!("malformed response: {e}"))
    }
}

/// Bounded retries with a fixed backoff schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    /// Delay before retry `k` is `backoff[min(k, len - 1)]`.
    pub backoff: Vec<Duration>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 2,
            backoff: vec![Duration::from_millis(500), Duration::from_secs(2)],
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self {
            max_retries: 0,
            backoff: Vec::new(),
        }
    }

    /// Retries without sleeping; for tests and replay runs.
    pub fn immediate(max_retries: u32) -> Self {
        Self {
            max_retries,
            backoff: Vec::new(),
        }
    }

    fn delay(&self, retry: u32) -> Duration {
        self.backoff
            .get(retry as usize)
            .or(self.backoff.last())
            .copied()
            .unwrap_or_default()
    }

    /// Runs `op` until it succeeds or retries are exhausted. Returns the last
    /// result and the number of attempts made.
    pub fn run<T, E>(&self, mut op: impl FnMut(u32) -> Result<T, E>) -> (Result<T, E>, u32) {
        let mut attempt = 0;
        loop {
            let result = op(attempt);
            attempt += 1;
            if result.is_ok() || attempt > self.max_retries {
                return (result, attempt);
            }
            let d = self.delay(attempt - 1);
            if !d.is_zero() {
                std::thread::sleep(d);
            }
        }
    }
}
