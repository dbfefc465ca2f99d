//! Premise grounding: sentence splitting, embeddings and cosine matching of a
//! step's cited premises against the problem's premise set.

use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::Step;

pub const LEXICAL_DIM: usize = 256;

const ABBREVIATIONS: &[&str] = &["e.g.", "i.e.", "etc.", "dr.", "mr.", "ms."];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbeddingError {
    #[error("embedding dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("embedding provider error: {0}")]
    Provider(String),
}

/// Ordered, trimmed, non-empty sentences.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SentenceSet {
    pub sentences: Vec<String>,
}

impl SentenceSet {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// Splits on `.`, `!`, `?` followed by whitespace or end of text. A period
/// that ends a known abbreviation does not split.
pub fn split_sentences(text: &str) -> SentenceSet {
    let mut sentences = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        let boundary = match chars.peek() {
            None => true,
            Some((_, next)) => next.is_whitespace(),
        };
        if !boundary {
            continue;
        }
        let end = i + c.len_utf8();
        if c == '.' && ends_with_abbreviation(&text[start..end]) {
            continue;
        }
        push_fragment(&mut sentences, &text[start..end]);
        start = end;
    }
    push_fragment(&mut sentences, &text[start..]);
    SentenceSet { sentences }
}

fn ends_with_abbreviation(fragment: &str) -> bool {
    let lower = fragment.to_lowercase();
    ABBREVIATIONS.iter().any(|abbr| {
        lower.ends_with(abbr) && {
            let head = &lower[..lower.len() - abbr.len()];
            head.chars().last().is_none_or(|c| !c.is_alphanumeric())
        }
    })
}

fn push_fragment(out: &mut Vec<String>, fragment: &str) {
    let trimmed = fragment.trim();
    if !trimmed.is_empty() {
        out.push(trimmed.to_string());
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub components: Vec<f64>,
}

impl Embedding {
    pub fn new(components: Vec<f64>) -> Self {
        Self { components }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn norm(&self) -> f64 {
        self.components.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

pub fn cosine(u: &Embedding, v: &Embedding) -> Result<f64, EmbeddingError> {
    if u.dim() != v.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            left: u.dim(),
            right: v.dim(),
        });
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = u.components.iter().zip(&v.components).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Anything that can turn a batch of texts into equal-length vectors.
pub trait Embedder: Send + Sync {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>, EmbeddingError>;

    fn embed(&self, text: &str) -> Result<Embedding, EmbeddingError> {
        let mut out = self.embed_batch(&[text.to_string()])?;
        out.pop()
            .ok_or_else(|| EmbeddingError::Provider("provider returned no vector".into()))
    }
}

/// Hashed bag-of-words embedder: case-folded alphanumeric tokens, FNV-1a 64
/// bucketed into 256 dimensions, L2-normalized.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalEmbedder;

impl LexicalEmbedder {
    pub fn bucket(token: &str) -> usize {
        let mut h = FnvHasher::default();
        h.write(token.as_bytes());
        (h.finish() % LEXICAL_DIM as u64) as usize
    }

    pub fn embed_text(text: &str) -> Embedding {
        let mut v = vec![0.0; LEXICAL_DIM];
        let folded = text.to_lowercase();
        for tok in folded.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            v[Self::bucket(tok)] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Embedding::new(v)
    }
}

impl Embedder for LexicalEmbedder {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>, EmbeddingError> {
        Ok(texts.iter().map(|t| Self::embed_text(t)).collect())
    }
}

/// How per-sentence similarities are reduced to one step score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean over cited sentences of the best-matching premise similarity.
    #[default]
    MeanOfMax,
    /// Single best similarity over every (sentence, premise) pair.
    GlobalMax,
}

impl std::str::FromStr for Aggregation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean_of_max" | "mean-of-max" => Ok(Self::MeanOfMax),
            "global_max" | "global-max" => Ok(Self::GlobalMax),
            other => Err(format!("unknown aggregation `{other}`")),
        }
    }
}

/// Similarity matrix `c[j][k]` between cited sentence `j` and premise `k`.
pub fn similarity_matrix(
    sentences: &SentenceSet,
    premises: &[String],
    embedder: &dyn Embedder,
) -> Result<Vec<Vec<f64>>, EmbeddingError> {
    let mut batch = sentences.sentences.clone();
    batch.extend(premises.iter().cloned());
    let vectors = embedder.embed_batch(&batch)?;
    let (qs, ps) = vectors.split_at(sentences.len());
    qs.iter().map(|q| ps.iter().map(|p| cosine(q, p)).collect()).collect()
}

/// Grounding score of a step's cited premises in `[0, 1]`.
pub fn premise_validity(
    step: &Step,
    premises: &[String],
    embedder: &dyn Embedder,
    aggregation: Aggregation,
) -> Result<f64, EmbeddingError> {
    let sentences = split_sentences(&step.premise_text);
    if sentences.is_empty() || premises.is_empty() {
        return Ok(0.0);
    }
    let matrix = similarity_matrix(&sentences, premises, embedder)?;
    let maxima: Vec<f64> = matrix
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max).clamp(0.0, 1.0))
        .collect();
    let value = match aggregation {
        Aggregation::MeanOfMax => maxima.iter().sum::<f64>() / maxima.len() as f64,
        Aggregation::GlobalMax => maxima.iter().copied().fold(0.0, f64::max),
    };
    Ok(if value.is_finite() { value } else { 0.0 })
}
