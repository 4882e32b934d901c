//! Client for an external embedding service.
//!
//! Protocol: `POST <endpoint>/embed` with `{"model": str, "texts": [str]}`,
//! answered by `{"dim": int, "vectors": [[float]]}`.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex, OnceLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::store::{EmbeddingStore, Namespace, Provenance};
use super::vector::Vector;
use crate::error::{Error, Result};

/// Overrides the configured endpoint when set.
pub const ENDPOINT_ENV: &str = "CLAIMSTAGE_REMOTE_EMBED_URL";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    pub max_batch: usize,
    pub max_in_flight: usize,
    pub attempts: u32,
    pub backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8080".into(),
            model: String::new(),
            max_batch: 64,
            max_in_flight: 4,
            attempts: 3,
            backoff_ms: 200,
            timeout_secs: 120,
        }
    }
}

impl RemoteConfig {
    /// Apply the [`ENDPOINT_ENV`] override, if present.
    pub fn with_env_override(mut self) -> Self {
        if let Ok(url) = std::env::var(ENDPOINT_ENV) {
            if !url.trim().is_empty() {
                self.endpoint = url.trim().to_owned();
            }
        }
        self
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    dim: usize,
    vectors: Vec<Vec<f32>>,
}

struct Gate {
    in_flight: Mutex<usize>,
    cv: Condvar,
    cap: usize,
}

impl Gate {
    fn acquire(&self) -> GateGuard<'_> {
        let mut n = self.in_flight.lock().expect("gate poisoned");
        while *n >= self.cap {
            n = self.cv.wait(n).expect("gate poisoned");
        }
        *n += 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().expect("gate poisoned") -= 1;
        self.0.cv.notify_one();
    }
}

pub struct RemoteEmbedder {
    config: RemoteConfig,
    url: String,
    agent: ureq::Agent,
    gate: Gate,
    dim: OnceLock<usize>,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteConfig) -> Result<Self> {
        if config.max_batch == 0 || config.max_in_flight == 0 || config.attempts == 0 {
            return Err(Error::Config("remote max_batch, max_in_flight and attempts must be positive".into()));
        }
        let base = config.endpoint.trim_end_matches('/');
        let url = if base.ends_with("/embed") {
            base.to_owned()
        } else {
            format!("{base}/embed")
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Ok(Self {
            gate: Gate {
                in_flight: Mutex::new(0),
                cv: Condvar::new(),
                cap: config.max_in_flight,
            },
            config,
            url,
            agent,
            dim: OnceLock::new(),
        })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    pub fn provenance(&self) -> Provenance {
        Provenance::Remote {
            endpoint: self.config.endpoint.clone(),
            model: self.config.model.clone(),
        }
    }

    /// Dimension observed so far, if any request has succeeded.
    pub fn dim(&self) -> Option<usize> {
        self.dim.get().copied()
    }

    fn post_once(&self, texts: &[String]) -> std::result::Result<EmbedResponse, ureq::Error> {
        let _slot = self.gate.acquire();
        self.agent
            .post(&self.url)
            .send_json(EmbedRequest {
                model: &self.config.model,
                texts,
            })?
            .body_mut()
            .read_json::<EmbedResponse>()
    }

    /// Embed one batch (at most `max_batch` texts). Vectors come back in
    /// input order, unnormalized. A short or inconsistent response fails the
    /// whole batch.
    pub fn fetch_remote(&self, texts: &[String]) -> Result<Vec<Vector>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        if texts.len() > self.config.max_batch {
            return Err(Error::Contract(format!(
                "batch of {} exceeds max_batch {}",
                texts.len(),
                self.config.max_batch
            )));
        }
        let mut last = String::new();
        let mut resp = None;
        for attempt in 0..self.config.attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(self.config.backoff_ms << (attempt - 1)));
            }
            match self.post_once(texts) {
                Ok(r) => {
                    resp = Some(r);
                    break;
                }
                Err(e) => {
                    log::warn!("embed request attempt {} failed: {e}", attempt + 1);
                    last = e.to_string();
                }
            }
        }
        let resp = resp.ok_or_else(|| {
            Error::Transport(format!("{} failed after {} attempts: {last}", self.url, self.config.attempts))
        })?;
        if resp.vectors.len() != texts.len() {
            return Err(Error::Contract(format!(
                "requested {} vectors, server returned {}",
                texts.len(),
                resp.vectors.len()
            )));
        }
        let expected = *self.dim.get_or_init(|| resp.dim);
        if resp.dim != expected {
            return Err(Error::Contract(format!("server dim changed from {expected} to {}", resp.dim)));
        }
        resp.vectors
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                if v.len() != expected {
                    return Err(Error::Contract(format!("vector {i} has length {}, declared dim {expected}", v.len())));
                }
                Vector::new(v)
            })
            .collect()
    }

    /// Embed any number of texts, split into batches and issued with at most
    /// `max_in_flight` concurrent requests. Output order matches input.
    pub fn embed_all(&self, texts: &[String]) -> Result<Vec<Vector>> {
        let batches: Vec<&[String]> = texts.chunks(self.config.max_batch).collect();
        let workers = self.config.max_in_flight.min(batches.len());
        if workers <= 1 {
            let mut out = Vec::with_capacity(texts.len());
            for b in batches {
                out.extend(self.fetch_remote(b)?);
            }
            return Ok(out);
        }
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<Result<Vec<Vector>>>>> = Mutex::new((0..batches.len()).map(|_| None).collect());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= batches.len() {
                        break;
                    }
                    let r = self.fetch_remote(batches[i]);
                    let failed = r.is_err();
                    results.lock().expect("results poisoned")[i] = Some(r);
                    if failed {
                        next.store(batches.len(), Ordering::SeqCst);
                    }
                });
            }
        });
        let mut out = Vec::with_capacity(texts.len());
        for r in results.into_inner().expect("results poisoned") {
            match r {
                Some(Ok(v)) => out.extend(v),
                Some(Err(e)) => return Err(e),
                None => return Err(Error::Transport("batch abandoned after an earlier failure".into())),
            }
        }
        Ok(out)
    }

    /// Single text, normalized.
    pub fn embed(&self, text: &str) -> Result<Vector> {
        let v = self.fetch_remote(&[text.to_owned()])?;
        Ok(v.into_iter().next().expect("one vector per text").normalized())
    }

    /// Embed records into a store tagged with this client's provenance.
    pub fn embed_records(&self, records: &[(Namespace, u64, String)]) -> Result<EmbeddingStore> {
        let texts: Vec<String> = records.iter().map(|(_, _, t)| t.clone()).collect();
        let vectors = self.embed_all(&texts)?;
        let dim = match (vectors.first(), self.dim()) {
            (Some(v), _) => v.dim(),
            (None, Some(d)) => d,
            (None, None) => return Err(Error::Contract("no vectors returned and dimension unknown".into())),
        };
        let mut store = EmbeddingStore::new(dim, self.provenance())?;
        for ((ns, id, _), v) in records.iter().zip(vectors) {
            store.insert(*ns, *id, v)?;
        }
        Ok(store)
    }
}
