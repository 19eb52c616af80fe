use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use super::pir::{pir, PirScores};
use super::template::{CompiledTemplate, PromptTemplate, RenderedExample};
use super::wire::{parse_score_response, ScoreRequest, SCORE_PATH};
use crate::data::{TokenId, Vocab};
use crate::error::{Error, Result};
use crate::model::Checkpoint;

/// Environment variable holding the bearer token for remote scoring.
pub const AUTH_TOKEN_ENV: &str = "PERCE_AUTH_TOKEN";

#[derive(Clone, Debug)]
pub struct RemoteConfig {
    /// Base URL, e.g. `http://127.0.0.1:8080`.
    pub endpoint: String,
    pub timeout: Duration,
    pub auth_token: Option<String>,
    /// Extra attempts after the first failure.
    pub max_retries: u32,
    /// Delay before the first retry; doubles on each further retry.
    pub backoff: Duration,
    pub max_in_flight: usize,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout: Duration::from_secs(30),
            auth_token: std::env::var(AUTH_TOKEN_ENV).ok().filter(|t| !t.is_empty()),
            max_retries: 3,
            backoff: Duration::from_millis(100),
            max_in_flight: 4,
        }
    }
}

/// HTTP client for the `/v1/score` protocol.
pub struct RemoteScorer {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
    url: String,
}

impl RemoteScorer {
    pub fn new(config: RemoteConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::Backend {
                message: format!("cannot build HTTP client: {e}"),
                attempts: 0,
            })?;
        let url = format!("{}{SCORE_PATH}", config.endpoint.trim_end_matches('/'));
        Ok(Self { config, client, url })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    /// Log-probabilities of each continuation word; retries transport errors
    /// and 5xx responses with exponential backoff.
    pub fn score_text(&self, context: &str, continuation: &str, expected: usize) -> Result<Vec<f64>> {
        let body = ScoreRequest {
            context: context.to_string(),
            continuation: continuation.to_string(),
        };
        let mut delay = self.config.backoff;
        let mut attempts = 0;
        loop {
            attempts += 1;
            let mut req = self.client.post(&self.url).json(&body);
            if let Some(token) = &self.config.auth_token {
                req = req.bearer_auth(token);
            }
            let (message, retryable) = match req.send() {
                Ok(resp) if resp.status().is_success() => {
                    let bytes = resp.bytes().map_err(|e| Error::Backend {
                        message: e.to_string(),
                        attempts,
                    })?;
                    return parse_score_response(&bytes, expected).map_err(|e| match e {
                        Error::Backend { message, .. } => Error::Backend { message, attempts },
                        e => e,
                    });
                }
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().unwrap_or_default();
                    (format!("HTTP {status}: {text}"), status.is_server_error())
                }
                Err(e) => (format!("request to {} failed: {e}", self.url), true),
            };
            if !retryable || attempts > self.config.max_retries {
                return Err(Error::Backend { message, attempts });
            }
            log::debug!("attempt {attempts} failed ({message}); retrying in {delay:?}");
            std::thread::sleep(delay);
            delay *= 2;
        }
    }
}

/// Where per-token log-probabilities come from.
pub enum ScorerBackend {
    Local(Checkpoint),
    Remote {
        scorer: RemoteScorer,
        vocab: Vocab,
        template: PromptTemplate,
    },
}

impl ScorerBackend {
    pub fn vocab(&self) -> &Vocab {
        match self {
            ScorerBackend::Local(ck) => &ck.vocab,
            ScorerBackend::Remote { vocab, .. } => vocab,
        }
    }

    pub fn template(&self) -> &PromptTemplate {
        match self {
            ScorerBackend::Local(ck) => &ck.template,
            ScorerBackend::Remote { template, .. } => template,
        }
    }

    pub fn compiled_template(&self) -> Result<CompiledTemplate> {
        self.template().compile(self.vocab())
    }

    fn continuation(&self, context: &[TokenId], continuation: &[TokenId]) -> Result<Vec<f64>> {
        match self {
            ScorerBackend::Local(ck) => crate::model::seq_log_probs(&ck.params, context, continuation),
            ScorerBackend::Remote { scorer, vocab, .. } => {
                scorer.score_text(&vocab.decode(context), &vocab.decode(continuation), continuation.len())
            }
        }
    }

    /// Two scoring passes: persona-conditioned and persona-removed.
    pub fn pir(&self, ex: &RenderedExample) -> Result<PirScores> {
        match self {
            ScorerBackend::Local(ck) => pir(&ck.params, ex),
            ScorerBackend::Remote { .. } => {
                let with = self.continuation(&ex.with_persona, &ex.response)?;
                let without = self.continuation(&ex.without_persona, &ex.response)?;
                PirScores::from_log_probs(&with, &without, ex.with_persona.len(), ex.without_persona.len())
            }
        }
    }

    fn max_in_flight(&self) -> usize {
        match self {
            ScorerBackend::Local(_) => 1,
            ScorerBackend::Remote { scorer, .. } => scorer.config().max_in_flight.max(1),
        }
    }

    /// Scores a batch, keeping at most `max_in_flight` requests outstanding.
    /// Results are in input order.
    pub fn pir_batch(&self, examples: &[RenderedExample]) -> Vec<Result<PirScores>> {
        let workers = self.max_in_flight().min(examples.len());
        if workers <= 1 {
            return examples.iter().map(|ex| self.pir(ex)).collect();
        }
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<Result<PirScores>>>> =
            Mutex::new((0..examples.len()).map(|_| None).collect());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(ex) = examples.get(i) else { break };
                    let r = self.pir(ex);
                    results.lock().unwrap()[i] = Some(r);
                });
            }
        });
        results
            .into_inner()
            .unwrap()
            .into_iter()
            .map(|r| r.expect("every index scored"))
            .collect()
    }
}
