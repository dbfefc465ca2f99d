//! Access to external services — completions, embeddings, reward endpoints —
//! behind a deterministic record/replay cache.

mod cache;
mod http;
pub mod prompts;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::premise::{Embedder, Embedding, EmbeddingError};
use crate::trace::{Problem, ResponseTrace, RolloutRecord, RolloutSet, TokenRecord};
pub use cache::{cache_key, Cache, CacheEntry};
pub use http::{HttpBackend, HttpConfig, HttpEmbedTransport, HttpRewardEndpoint};
pub use prompts::PromptLibrary;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("cache miss for request digest {key}")]
    CacheMiss { key: String },
    #[error("credentials missing: environment variable `{var}` is not set")]
    AuthMissing { var: String },
    #[error("gateway configuration error: {0}")]
    Config(String),
    #[error("cache error: {0}")]
    Cache(String),
    #[error("unexpected provider response: {0}")]
    BadResponse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Live,
    Record,
    #[default]
    Replay,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(Self::Live),
            "record" => Ok(Self::Record),
            "replay" => Ok(Self::Replay),
            other => Err(format!("unknown gateway mode `{other}`")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Live => "live",
            Self::Record => "record",
            Self::Replay => "replay",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Sampling {
    pub fn greedy() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prompt_id: String,
    pub rendered_prompt: String,
    pub model_tag: String,
    pub sampling: Sampling,
    pub want_token_probs: bool,
    /// Distinguishes repeated samples of the same prompt.
    pub sample_index: u32,
}

impl CompletionRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.rendered_prompt.trim().is_empty() {
            return Err(GatewayError::Config("rendered prompt is empty".into()));
        }
        if !(self.sampling.temperature >= 0.0) {
            return Err(GatewayError::Config("temperature must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub token_probs: Option<Vec<(String, f64)>>,
}

/// Anything that answers completion requests.
pub trait Completer: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, GatewayError>;
}

/// Backend built from a closure; used for scripted fixtures and transport stubs.
pub struct FnBackend<F>(pub F);

impl<F> Completer for FnBackend<F>
where
    F: Fn(&CompletionRequest) -> Result<Completion, GatewayError> + Send + Sync,
{
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, GatewayError> {
        (self.0)(request)
    }
}

type InFlight = Arc<OnceLock<Result<Completion, GatewayError>>>;

/// Mode-aware front end: replay never touches the backend; record fills the
/// cache on misses; live always asks the backend and caches nothing.
pub struct Gateway {
    mode: Mode,
    cache: Arc<Cache>,
    backend: Option<Arc<dyn Completer>>,
    inflight: Mutex<HashMap<String, InFlight>>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("mode", &self.mode)
            .field("cached", &self.cache.len())
            .finish()
    }
}

impl Gateway {
    pub fn new(mode: Mode, cache: Arc<Cache>, backend: Option<Arc<dyn Completer>>) -> Result<Self, GatewayError> {
        if mode != Mode::Replay && backend.is_none() {
            return Err(GatewayError::Config(format!("{mode} mode needs a completion backend")));
        }
        Ok(Self {
            mode,
            cache,
            backend: if mode == Mode::Replay { None } else { backend },
            inflight: Mutex::new(HashMap::new()),
        })
    }

    pub fn replay(cache: Arc<Cache>) -> Self {
        Self::new(Mode::Replay, cache, None).expect("replay needs no backend")
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn cache(&self) -> &Arc<Cache> {
        &self.cache
    }

    fn fetch(&self, key: &str, request: &CompletionRequest) -> Result<Completion, GatewayError> {
        let backend = self.backend.as_ref().expect("checked at construction");
        let completion = backend.complete(request)?;
        if self.mode == Mode::Record {
            self.cache.insert(CacheEntry {
                key: key.to_string(),
                prompt_id: request.prompt_id.clone(),
                model_tag: request.model_tag.clone(),
                sample_index: request.sample_index,
                response_text: completion.text.clone(),
                token_probs: completion.token_probs.clone(),
            })?;
        }
        Ok(completion)
    }

    /// Identical concurrent requests share one backend call.
    fn fetch_deduplicated(&self, key: &str, request: &CompletionRequest) -> Result<Completion, GatewayError> {
        let cell = {
            let mut map = self.inflight.lock().unwrap_or_else(|e| e.into_inner());
            Arc::clone(map.entry(key.to_string()).or_default())
        };
        let result = cell.get_or_init(|| self.fetch(key, request)).clone();
        let mut map = self.inflight.lock().unwrap_or_else(|e| e.into_inner());
        if map.get(key).is_some_and(|c| Arc::ptr_eq(c, &cell)) {
            map.remove(key);
        }
        result
    }
}

impl Completer for Gateway {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, GatewayError> {
        request.validate()?;
        let key = cache_key(request);
        let mut completion = match self.mode {
            Mode::Replay => {
                let entry = self.cache.get(&key).ok_or(GatewayError::CacheMiss { key })?;
                Completion {
                    text: entry.response_text,
                    token_probs: entry.token_probs,
                }
            }
            Mode::Record => match self.cache.get(&key) {
                Some(entry) => Completion {
                    text: entry.response_text,
                    token_probs: entry.token_probs,
                },
                None => self.fetch_deduplicated(&key, request)?,
            },
            Mode::Live => self.fetch_deduplicated(&key, request)?,
        };
        if !request.want_token_probs {
            completion.token_probs = None;
        }
        Ok(completion)
    }
}

/// A completion handle for the single-shot prompts (soft unification,
/// formalization, refinement), always sampled greedily.
#[derive(Clone)]
pub struct LlmHandle {
    pub llm: Arc<dyn Completer>,
    pub prompts: Arc<PromptLibrary>,
    pub model_tag: String,
    pub max_tokens: u32,
}

impl fmt::Debug for LlmHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LlmHandle").field("model_tag", &self.model_tag).finish()
    }
}

impl LlmHandle {
    pub fn new(llm: Arc<dyn Completer>, prompts: Arc<PromptLibrary>, model_tag: &str) -> Self {
        Self {
            llm,
            prompts,
            model_tag: model_tag.to_string(),
            max_tokens: 1024,
        }
    }

    /// Renders `prompt_id` with `vars` and returns the completion text.
    pub fn ask(&self, prompt_id: &str, vars: &[(&str, &str)]) -> Result<String, GatewayError> {
        let rendered = self.prompts.render(prompt_id, vars)?;
        let request = CompletionRequest {
            prompt_id: prompt_id.to_string(),
            rendered_prompt: rendered,
            model_tag: self.model_tag.clone(),
            sampling: Sampling {
                temperature: 0.0,
                max_tokens: self.max_tokens,
            },
            want_token_probs: false,
            sample_index: 0,
        };
        Ok(self.llm.complete(&request)?.text)
    }
}

/// One model's share of the rollouts for a problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSlot {
    pub model_tag: String,
    pub count: usize,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutPlan {
    pub n: usize,
    pub models: Vec<ModelSlot>,
    pub max_tokens: u32,
}

impl Default for RolloutPlan {
    fn default() -> Self {
        Self {
            n: 8,
            models: vec![
                ModelSlot {
                    model_tag: "model-a".into(),
                    count: 5,
                    temperature: 0.6,
                },
                ModelSlot {
                    model_tag: "model-b".into(),
                    count: 3,
                    temperature: 0.0,
                },
            ],
            max_tokens: 1024,
        }
    }
}

impl RolloutPlan {
    pub fn validate(&self) -> Result<(), GatewayError> {
        let total: usize = self.models.iter().map(|m| m.count).sum();
        if total != self.n {
            return Err(GatewayError::Config(format!(
                "model split sums to {total}, expected n = {}",
                self.n
            )));
        }
        if self
            .models
            .iter()
            .any(|m| m.model_tag.is_empty() || !(m.temperature >= 0.0))
        {
            return Err(GatewayError::Config(
                "model split needs tags and non-negative temperatures".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutOutput {
    /// Raw responses, one per sample, in response-id order.
    pub records: Vec<RolloutRecord>,
    /// The responses that parse.
    pub set: RolloutSet,
    /// `(response_id, reason)` for responses rejected by the parser.
    pub rejected: Vec<(String, String)>,
}

/// Samples `plan.n` responses for `problem` using the rollout prompt.
/// Response ids are `r0..r{n-1}` in model order.
pub fn generate_rollouts(
    problem: &Problem,
    plan: &RolloutPlan,
    llm: &dyn Completer,
    prompts: &PromptLibrary,
) -> Result<RolloutOutput, GatewayError> {
    plan.validate()?;
    let rendered = prompts.rollout_prompt(problem)?;
    let mut records = Vec::with_capacity(plan.n);
    let mut index = 0u32;
    for slot in &plan.models {
        for _ in 0..slot.count {
            let request = CompletionRequest {
                prompt_id: prompts::ROLLOUT.into(),
                rendered_prompt: rendered.clone(),
                model_tag: slot.model_tag.clone(),
                sampling: Sampling {
                    temperature: slot.temperature,
                    max_tokens: plan.max_tokens,
                },
                want_token_probs: true,
                sample_index: index,
            };
            let completion = llm.complete(&request)?;
            records.push(RolloutRecord {
                problem_id: problem.id.clone(),
                response_id: format!("r{index}"),
                origin: slot.model_tag.clone(),
                text: completion.text,
                tokens: completion
                    .token_probs
                    .map(|ts| ts.into_iter().map(|(t, p)| TokenRecord { t, p }).collect()),
                refined: false,
            });
            index += 1;
        }
    }
    let mut traces = Vec::new();
    let mut rejected = Vec::new();
    for r in &records {
        match r.to_trace() {
            Ok(t) => traces.push(t),
            Err(e) => rejected.push((r.response_id.clone(), e.to_string())),
        }
    }
    Ok(RolloutOutput {
        records,
        set: RolloutSet {
            problem_id: problem.id.clone(),
            traces,
        },
        rejected,
    })
}

/// Raw embedding provider: one vector per input text.
pub trait EmbedTransport: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError>;
}

/// Remote embedding provider with a per-run cache keyed by text digest.
pub struct RemoteEmbedder {
    transport: Arc<dyn EmbedTransport>,
    cache: Mutex<HashMap<String, Embedding>>,
    dim: OnceLock<usize>,
}

impl RemoteEmbedder {
    pub fn new(transport: Arc<dyn EmbedTransport>) -> Self {
        Self {
            transport,
            cache: Mutex::new(HashMap::new()),
            dim: OnceLock::new(),
        }
    }

    fn digest(text: &str) -> String {
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// `embed_remote`: vectors for `texts`, fetching only uncached ones.
impl Embedder for RemoteEmbedder {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>, EmbeddingError> {
        let keys: Vec<String> = texts.iter().map(|t| Self::digest(t)).collect();
        let mut missing: Vec<String> = Vec::new();
        {
            let cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
            let mut seen = std::collections::HashSet::new();
            for (t, k) in texts.iter().zip(&keys) {
                if !cache.contains_key(k) && seen.insert(k.clone()) {
                    missing.push(t.clone());
                }
            }
        }
        if !missing.is_empty() {
            let vectors = self
                .transport
                .embed(&missing)
                .map_err(|e| EmbeddingError::Provider(e.to_string()))?;
            if vectors.len() != missing.len() {
                return Err(EmbeddingError::Provider(format!(
                    "provider returned {} vectors for {} texts",
                    vectors.len(),
                    missing.len()
                )));
            }
            let mut cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
            for (t, v) in missing.iter().zip(vectors) {
                let expected = *self.dim.get_or_init(|| v.len());
                if v.len() != expected {
                    return Err(EmbeddingError::DimensionMismatch {
                        left: expected,
                        right: v.len(),
                    });
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(EmbeddingError::Provider("non-finite embedding component".into()));
                }
                cache.insert(Self::digest(t), Embedding::new(v));
            }
        }
        let cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
        Ok(keys.iter().map(|k| cache[k].clone()).collect())
    }
}

/// A reward model or judge reachable over some transport.
pub trait RewardEndpoint: Send + Sync {
    fn score(&self, trace: &ResponseTrace) -> Result<f64, GatewayError>;
}

impl<F> RewardEndpoint for F
where
    F: Fn(&ResponseTrace) -> Result<f64, GatewayError> + Send + Sync,
{
    fn score(&self, trace: &ResponseTrace) -> Result<f64, GatewayError> {
        self(trace)
    }
}

/// Baseline scorers by tag. Their outputs are recorded for comparison only
/// and never enter LogicScore.
#[derive(Default)]
pub struct ExternalScorers {
    endpoints: BTreeMap<String, Arc<dyn RewardEndpoint>>,
    recorded: Mutex<BTreeMap<(String, String, String), f64>>,
}

impl ExternalScorers {
    pub fn register(&mut self, tag: &str, endpoint: Arc<dyn RewardEndpoint>) {
        self.endpoints.insert(tag.to_string(), endpoint);
    }

    /// `external_score`: pass-through to the endpoint registered as `tag`.
    pub fn score(&self, trace: &ResponseTrace, tag: &str) -> Result<f64, GatewayError> {
        let endpoint = self
            .endpoints
            .get(tag)
            .ok_or_else(|| GatewayError::Config(format!("unknown scorer tag `{tag}`")))?;
        let value = endpoint.score(trace)?;
        self.recorded.lock().unwrap_or_else(|e| e.into_inner()).insert(
            (tag.to_string(), trace.problem_id.clone(), trace.response_id.clone()),
            value,
        );
        Ok(value)
    }

    /// Recorded `(tag, problem_id, response_id) -> score` values.
    pub fn recorded(&self) -> BTreeMap<(String, String, String), f64> {
        self.recorded.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn request(prompt: &str) -> CompletionRequest {
        CompletionRequest {
            prompt_id: "soft_unify.v1".into(),
            rendered_prompt: prompt.into(),
            model_tag: "m".into(),
            sampling: Sampling::greedy(),
            want_token_probs: false,
            sample_index: 0,
        }
    }

    fn echo() -> Arc<dyn Completer> {
        Arc::new(FnBackend(|r: &CompletionRequest| {
            Ok(Completion {
                text: format!("echo: {}", r.rendered_prompt),
                token_probs: Some(vec![("echo".into(), 0.5)]),
            })
        }))
    }

    /// Fails the test on any call: replay must never reach the network.
    fn forbidden() -> Arc<dyn Completer> {
        Arc::new(FnBackend(|_: &CompletionRequest| -> Result<Completion, GatewayError> {
            panic!("transport called in replay mode")
        }))
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let rec = Gateway::new(Mode::Record, Arc::new(Cache::open(&path).unwrap()), Some(echo())).unwrap();
        let first = rec.complete(&request("hi")).unwrap();
        let rep = Gateway::new(Mode::Replay, Arc::new(Cache::open(&path).unwrap()), Some(forbidden())).unwrap();
        assert_eq!(rep.complete(&request("hi")).unwrap(), first);
        let miss = rep.complete(&request("unseen")).unwrap_err();
        let GatewayError::CacheMiss { key } = miss else {
            panic!()
        };
        assert_eq!(key, cache_key(&request("unseen")));
    }

    #[test]
    fn token_probs_only_when_requested() {
        let g = Gateway::new(Mode::Live, Arc::new(Cache::in_memory()), Some(echo())).unwrap();
        assert!(g.complete(&request("x")).unwrap().token_probs.is_none());
        let mut r = request("x");
        r.want_token_probs = true;
        assert!(g.complete(&r).unwrap().token_probs.is_some());
    }

    #[test]
    fn live_requires_backend_and_credentials() {
        assert!(matches!(
            Gateway::new(Mode::Live, Arc::new(Cache::in_memory()), None),
            Err(GatewayError::Config(_))
        ));
        let cfg = HttpConfig {
            api_key_env: "STEPPROOF_TEST_SURELY_UNSET_KEY".into(),
            ..HttpConfig::default()
        };
        assert!(matches!(
            HttpBackend::from_env(cfg),
            Err(GatewayError::AuthMissing { .. })
        ));
    }

    #[test]
    fn concurrent_identical_requests_share_one_call() {
        let calls = Arc::new(AtomicUsize::new(0));
        let c = Arc::clone(&calls);
        let backend: Arc<dyn Completer> = Arc::new(FnBackend(move |r: &CompletionRequest| {
            c.fetch_add(1, Ordering::SeqCst);
            std::thread::sleep(std::time::Duration::from_millis(100));
            Ok(Completion {
                text: r.rendered_prompt.clone(),
                token_probs: None,
            })
        }));
        let g = Arc::new(Gateway::new(Mode::Live, Arc::new(Cache::in_memory()), Some(backend)).unwrap());
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let g = Arc::clone(&g);
                std::thread::spawn(move || g.complete(&request("same")).unwrap())
            })
            .collect();
        for h in handles {
            assert_eq!(h.join().unwrap().text, "same");
        }
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn rollout_split_and_ids() {
        let problem = Problem {
            id: "p1".into(),
            premises: vec!["Ann is a dog.".into()],
            question: "Is Ann a dog?".into(),
            gold_answer: Some("True".into()),
        };
        let backend = FnBackend(|r: &CompletionRequest| {
            let text = if r.sample_index == 7 {
                "no format at all".to_string()
            } else {
                "Step 1:\nPremise: Ann is a dog.\nSoft Unification:\nConclusion: Ann is a dog.\nFinal answer: [True]\n"
                    .to_string()
            };
            Ok(Completion {
                text,
                token_probs: None,
            })
        });
        let out = generate_rollouts(&problem, &RolloutPlan::default(), &backend, &PromptLibrary::builtin()).unwrap();
        assert_eq!(out.records.len(), 8);
        assert_eq!(out.set.traces.len(), 7);
        assert_eq!(out.rejected.len(), 1);
        assert_eq!(out.records[0].response_id, "r0");
        assert_eq!(out.records.iter().filter(|r| r.origin == "model-a").count(), 5);
        assert_eq!(out.records.iter().filter(|r| r.origin == "model-b").count(), 3);

        let bad = RolloutPlan {
            n: 8,
            models: vec![ModelSlot {
                model_tag: "m".into(),
                count: 7,
                temperature: 0.6,
            }],
            max_tokens: 16,
        };
        let never = FnBackend(|_: &CompletionRequest| -> Result<Completion, GatewayError> { panic!("called") });
        assert!(matches!(
            generate_rollouts(&problem, &bad, &never, &PromptLibrary::builtin()),
            Err(GatewayError::Config(_))
        ));
    }

    struct Ragged;
    impl EmbedTransport for Ragged {
        fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
            Ok(texts.iter().map(|t| vec![1.0; t.len()]).collect())
        }
    }

    struct Counting(AtomicUsize);
    impl EmbedTransport for Counting {
        fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
            self.0.fetch_add(texts.len(), Ordering::SeqCst);
            Ok(texts.iter().map(|t| vec![t.len() as f64, 1.0]).collect())
        }
    }

    #[test]
    fn remote_embeddings() {
        let counting = Arc::new(Counting(AtomicUsize::new(0)));
        let e = RemoteEmbedder::new(counting.clone());
        assert!(e.embed_batch(&[]).unwrap().is_empty());
        let v = e.embed_batch(&["ab".into(), "ab".into(), "c".into()]).unwrap();
        assert_eq!(v[0], v[1]);
        assert_eq!(counting.0.load(Ordering::SeqCst), 2);
        e.embed_batch(&["ab".into()]).unwrap();
        assert_eq!(counting.0.load(Ordering::SeqCst), 2);

        let ragged = RemoteEmbedder::new(Arc::new(Ragged));
        assert!(matches!(
            ragged.embed_batch(&["a".into(), "bb".into()]),
            Err(EmbeddingError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn external_scorer_pass_through() {
        let mut s = ExternalScorers::default();
        s.register("prm", Arc::new(|_: &ResponseTrace| Ok(0.42)));
        let trace = ResponseTrace {
            problem_id: "p".into(),
            response_id: "r0".into(),
            origin: String::new(),
            steps: vec![],
            answer: "A".into(),
            token_probs: None,
        };
        assert_eq!(s.score(&trace, "prm").unwrap(), 0.42);
        assert_eq!(s.recorded()[&("prm".into(), "p".into(), "r0".into())], 0.42);
        assert!(matches!(s.score(&trace, "judge"), Err(GatewayError::Config(_))));
    }
}
