//! Flat `key = value` configuration. Every CLI flag sets the key of the same
//! name (dashes become underscores); precedence is defaults < file < flags.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;

use crate::dataset::Strategy;
use crate::gateway::{Mode, ModelSlot, RolloutPlan};
use crate::premise::Aggregation;
use crate::prover::{BackendKind, ProofBudget};
use crate::scoring::{ScoringConfig, Weights};

use super::PipelineError;

/// Every configuration key with a one-line description; the CLI exposes each
/// as `--key-name`.
pub const KEYS: &[(&str, &str)] = &[
    ("dir", "working directory for data files and manifests"),
    ("input", "problem file for ingest (JSONL)"),
    ("cache", "completion cache (default: <dir>/cache.jsonl)"),
    ("prompts_dir", "directory overriding the built-in prompt templates"),
    ("mode", "gateway mode: live, record or replay"),
    ("seed", "master seed for sampling and selection"),
    ("workers", "worker threads (0 = one per core)"),
    ("prover", "prover backend: internal or isabelle"),
    ("max_depth", "proof search depth limit"),
    (
        "timeout_secs",
        "per-proof timeout in seconds (default depends on the prover)",
    ),
    ("isabelle_path", "Isabelle executable"),
    ("max_prover_procs", "concurrent external prover processes"),
    ("tactics", "comma-separated Isabelle proof methods, tried in order"),
    ("embedder", "premise embedder: lexical or remote"),
    ("embed_endpoint", "embedding API endpoint (remote embedder)"),
    ("embed_model", "embedding model name (remote embedder)"),
    ("aggregation", "premise aggregation: mean-of-max or global-max"),
    ("weights", "score weights w1,w2 for reasoning and outcome validity"),
    ("no_ground_truth", "score from reasoning validity alone"),
    (
        "default_conf",
        "logic validity when neither prover nor token confidence apply (or none)",
    ),
    ("formalizer_model", "model tag used for formalization and refinement"),
    (
        "soft_unify",
        "let the formalizer add bridging premises from soft unification",
    ),
    ("n", "rollouts per problem"),
    ("split", "rollout models as model:count[:temperature],..."),
    ("max_tokens", "completion token limit"),
    ("llm_endpoint", "completion API endpoint"),
    ("api_key_env", "environment variable holding the API key"),
    ("text_pointer", "JSON pointer to the completion text in responses"),
    (
        "logprobs_pointer",
        "JSON pointer to token log-probabilities in responses",
    ),
    ("http_timeout_secs", "HTTP request timeout in seconds"),
    ("retries", "HTTP retries on transient failures"),
    ("refine_k", "failing rollouts refined per problem"),
    ("max_iterations", "refinement attempts per step"),
    ("strategy", "DPO pairing: maxmin, dual or random"),
    ("hi", "dual pairing: minimum chosen score"),
    ("lo", "dual pairing: maximum rejected score"),
    (
        "scored",
        "scored file to report on or build from (default: <dir>/scored.jsonl)",
    ),
    ("after", "second scored file for a before/after report"),
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub dir: PathBuf,
    pub input: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub prompts_dir: Option<PathBuf>,
    pub mode: Mode,
    pub seed: u64,
    pub workers: usize,

    pub prover: BackendKind,
    pub max_depth: u32,
    pub timeout_secs: Option<f64>,
    pub isabelle_path: PathBuf,
    pub max_prover_procs: usize,
    pub tactics: Vec<String>,

    pub embedder: String,
    pub embed_endpoint: String,
    pub embed_model: String,
    pub aggregation: Aggregation,
    pub weights: Weights,
    pub no_ground_truth: bool,
    pub default_conf: Option<f64>,
    pub formalizer_model: String,
    pub soft_unify: bool,

    pub n: usize,
    pub split: Vec<ModelSlot>,
    pub max_tokens: u32,
    pub llm_endpoint: String,
    pub api_key_env: String,
    pub text_pointer: String,
    pub logprobs_pointer: String,
    pub http_timeout_secs: f64,
    pub retries: u32,

    pub refine_k: usize,
    pub max_iterations: usize,

    pub strategy: Strategy,
    pub hi: f64,
    pub lo: f64,

    pub scored: Option<PathBuf>,
    pub after: Option<PathBuf>,
}

impl Default for Settings {
    fn default() -> Self {
        let plan = RolloutPlan::default();
        let http = crate::gateway::HttpConfig::default();
        Self {
            dir: PathBuf::from("."),
            input: None,
            cache: None,
            prompts_dir: None,
            mode: Mode::Replay,
            seed: 0,
            workers: 0,
            prover: BackendKind::Internal,
            max_depth: 12,
            timeout_secs: None,
            isabelle_path: PathBuf::from("isabelle"),
            max_prover_procs: 2,
            tactics: crate::formal::TacticLadder::default().methods,
            embedder: "lexical".into(),
            embed_endpoint: "https://api.openai.com/v1/embeddings".into(),
            embed_model: "text-embedding-3-small".into(),
            aggregation: Aggregation::MeanOfMax,
            weights: Weights::default(),
            no_ground_truth: false,
            default_conf: Some(0.5),
            formalizer_model: "formalizer".into(),
            soft_unify: true,
            n: plan.n,
            split: plan.models,
            max_tokens: plan.max_tokens,
            llm_endpoint: http.endpoint,
            api_key_env: http.api_key_env,
            text_pointer: http.text_pointer,
            logprobs_pointer: http.logprobs_pointer,
            http_timeout_secs: http.timeout.as_secs_f64(),
            retries: http.retries,
            refine_k: 2,
            max_iterations: 3,
            strategy: Strategy::Maxmin,
            hi: 0.75,
            lo: 0.25,
            scored: None,
            after: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, PipelineError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| PipelineError::Config(format!("{key} = {value}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, PipelineError> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(PipelineError::Config(format!("{key} = {value}: expected a boolean"))),
    }
}

fn parse_unit(key: &str, value: &str) -> Result<f64, PipelineError> {
    let x: f64 = parse(key, value)?;
    if !(0.0..=1.0).contains(&x) {
        return Err(PipelineError::Config(format!("{key} = {value}: must lie in [0, 1]")));
    }
    Ok(x)
}

fn parse_split(value: &str) -> Result<Vec<ModelSlot>, PipelineError> {
    value
        .split(',')
        .map(|part| {
            let fields: Vec<&str> = part.trim().split(':').collect();
            let bad = || PipelineError::Config(format!("split entry `{part}`: expected model:count[:temperature]"));
            match fields.as_slice() {
                [tag, count] | [tag, count, _] if !tag.is_empty() => Ok(ModelSlot {
                    model_tag: tag.to_string(),
                    count: count.parse().map_err(|_| bad())?,
                    temperature: match fields.get(2) {
                        Some(t) => t.parse().map_err(|_| bad())?,
                        None => 0.6,
                    },
                }),
                _ => Err(bad()),
            }
        })
        .collect()
}

impl Settings {
    /// Sets one key; unknown keys and malformed values are configuration errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        let opt_path = |v: &str| if v.is_empty() { None } else { Some(PathBuf::from(v)) };
        match key.as_str() {
            "dir" => self.dir = PathBuf::from(value),
            "input" => self.input = opt_path(value),
            "cache" => self.cache = opt_path(value),
            "prompts_dir" => self.prompts_dir = opt_path(value),
            "mode" => self.mode = parse(&key, value)?,
            "seed" => self.seed = parse(&key, value)?,
            "workers" => self.workers = parse(&key, value)?,
            "prover" => self.prover = parse(&key, value)?,
            "max_depth" => self.max_depth = parse(&key, value)?,
            "timeout_secs" => self.timeout_secs = Some(parse(&key, value)?),
            "isabelle_path" => self.isabelle_path = PathBuf::from(value),
            "max_prover_procs" => self.max_prover_procs = parse(&key, value)?,
            "tactics" => self.tactics = value.split(',').map(|t| t.trim().to_string()).collect(),
            "embedder" => self.embedder = value.to_string(),
            "embed_endpoint" => self.embed_endpoint = value.to_string(),
            "embed_model" => self.embed_model = value.to_string(),
            "aggregation" => self.aggregation = parse(&key, value)?,
            "weights" => {
                let parts: Vec<&str> = value.split(',').collect();
                let [w1, w2] = parts.as_slice() else {
                    return Err(PipelineError::Config(format!("weights = {value}: expected w1,w2")));
                };
                self.weights = Weights {
                    w1: parse(&key, w1.trim())?,
                    w2: parse(&key, w2.trim())?,
                };
            }
            "no_ground_truth" => self.no_ground_truth = parse_bool(&key, value)?,
            "default_conf" => {
                self.default_conf = match value {
                    "none" | "" => None,
                    v => Some(parse_unit(&key, v)?),
                }
            }
            "formalizer_model" => self.formalizer_model = value.to_string(),
            "soft_unify" => self.soft_unify = parse_bool(&key, value)?,
            "n" => self.n = parse(&key, value)?,
            "split" => self.split = parse_split(value)?,
            "max_tokens" => self.max_tokens = parse(&key, value)?,
            "llm_endpoint" => self.llm_endpoint = value.to_string(),
            "api_key_env" => self.api_key_env = value.to_string(),
            "text_pointer" => self.text_pointer = value.to_string(),
            "logprobs_pointer" => self.logprobs_pointer = value.to_string(),
            "http_timeout_secs" => self.http_timeout_secs = parse(&key, value)?,
            "retries" => self.retries = parse(&key, value)?,
            "refine_k" => self.refine_k = parse(&key, value)?,
            "max_iterations" => self.max_iterations = parse(&key, value)?,
            "strategy" => self.strategy = parse(&key, value)?,
            "hi" => self.hi = parse(&key, value)?,
            "lo" => self.lo = parse(&key, value)?,
            "scored" => self.scored = opt_path(value),
            "after" => self.after = opt_path(value),
            _ => return Err(PipelineError::Config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a config file: one `key = value` per line, `#` comments.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), PipelineError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| PipelineError::Config(format!("{origin}:{}: expected key = value", n + 1)))?;
            self.set(k, v)
                .map_err(|e| PipelineError::Config(format!("{origin}:{}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), PipelineError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| PipelineError::Io(format!("config {}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Cross-field checks shared by all commands.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let cfg = |m: String| Err(PipelineError::Config(m));
        if let Err(e) = self.weights.validate() {
            return cfg(e.to_string());
        }
        if self.max_depth == 0 {
            return cfg("max_depth must be positive".into());
        }
        if self.timeout_secs.is_some_and(|t| !(t > 0.0)) {
            return cfg("timeout_secs must be positive".into());
        }
        if !matches!(self.embedder.as_str(), "lexical" | "remote") {
            return cfg(format!("embedder must be lexical or remote, got `{}`", self.embedder));
        }
        if self.refine_k == 0 {
            return cfg("refine_k must be at least 1".into());
        }
        if self.max_iterations == 0 {
            return cfg("max_iterations must be at least 1".into());
        }
        if self.max_prover_procs == 0 {
            return cfg("max_prover_procs must be at least 1".into());
        }
        Ok(())
    }

    pub fn budget(&self) -> ProofBudget {
        let base = match self.prover {
            BackendKind::Internal => ProofBudget::internal_default(),
            BackendKind::Isabelle => ProofBudget::isabelle_default(),
        };
        ProofBudget {
            max_depth: self.max_depth,
            timeout: self.timeout_secs.map(Duration::from_secs_f64).unwrap_or(base.timeout),
        }
    }

    pub fn scoring_config(&self) -> ScoringConfig {
        let budget = self.budget();
        ScoringConfig {
            weights: self.weights,
            aggregation: self.aggregation,
            no_ground_truth: self.no_ground_truth,
            default_conf: self.default_conf,
            prover: self.prover,
            max_depth: budget.max_depth,
            timeout_ms: budget.timeout.as_millis() as u64,
            embedder: self.embedder.clone(),
            formalizer_model: self.formalizer_model.clone(),
            soft_unify: self.soft_unify,
        }
    }

    pub fn rollout_plan(&self) -> RolloutPlan {
        RolloutPlan {
            n: self.n,
            models: self.split.clone(),
            max_tokens: self.max_tokens,
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn cache_path(&self) -> PathBuf {
        self.cache.clone().unwrap_or_else(|| self.path("cache.jsonl"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_flags() {
        let mut s = Settings::default();
        s.apply_text(
            "# scoring\nprover = internal\nweights = 0.6, 0.4\nno_ground_truth = true\nsplit = a:4:0.7,b:4\n",
            "test.conf",
        )
        .unwrap();
        assert_eq!(s.weights, Weights { w1: 0.6, w2: 0.4 });
        assert!(s.no_ground_truth);
        assert_eq!(s.split[1].count, 4);
        assert_eq!(s.split[0].temperature, 0.7);
        s.set("refine-k", "3").unwrap();
        assert_eq!(s.refine_k, 3);
        s.validate().unwrap();
    }

    #[test]
    fn key_table_covers_every_field() {
        let json = serde_json::to_value(Settings::default()).unwrap();
        let fields: Vec<&String> = json.as_object().unwrap().keys().collect();
        let mut keys: Vec<&str> = KEYS.iter().map(|(k, _)| *k).collect();
        keys.sort_unstable();
        let mut fields: Vec<&str> = fields.iter().map(|s| s.as_str()).collect();
        fields.sort_unstable();
        assert_eq!(keys, fields);
        for (k, _) in KEYS {
            assert!(
                !matches!(Settings::default().set(k, "\u{1}"), Err(PipelineError::Config(ref m)) if m.starts_with("unknown")),
                "{k}"
            );
        }
    }

    #[test]
    fn errors() {
        let mut s = Settings::default();
        assert!(matches!(s.set("bogus", "1"), Err(PipelineError::Config(_))));
        assert!(s.apply_text("prover internal", "x").is_err());
        assert!(s.set("default_conf", "1.5").is_err());
        s.set("weights", "0.6,0.5").unwrap();
        assert!(matches!(s.validate(), Err(PipelineError::Config(_))));
    }

    #[test]
    fn budget_defaults_follow_backend() {
        let mut s = Settings::default();
        assert_eq!(s.budget().timeout, Duration::from_secs(10));
        s.set("prover", "isabelle").unwrap();
        assert_eq!(s.budget().timeout, Duration::from_secs(60));
        s.set("timeout_secs", "2.5").unwrap();
        assert_eq!(s.budget().timeout, Duration::from_millis(2500));
    }
}
